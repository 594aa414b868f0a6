//! Observation records, dataset filtering and subsampling, environmental
//! rasters, and batch sampling.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::geo::{encode_location, GeoCoord, InputMode, COORD_ENCODING_DIM};
use crate::losses::BatchTargets;
use crate::rng::{derive_seed, fnv1a, rng_from_seed};
use crate::{Error, Result};

/// One presence record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    /// Dense index into the species catalog.
    pub species: usize,
    pub coord: GeoCoord,
}

/// Presence-only observations with a dense species catalog.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObservationSet {
    species_ids: Vec<String>,
    records: Vec<Observation>,
}

impl ObservationSet {
    pub fn new(species_ids: Vec<String>, records: Vec<Observation>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(species_ids.len());
        for id in &species_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate species id `{id}`"
                )));
            }
        }
        if let Some(r) = records.iter().find(|r| r.species >= species_ids.len()) {
            return Err(Error::InvalidArgument(format!(
                "species index {} out of range for catalog of {}",
                r.species,
                species_ids.len()
            )));
        }
        Ok(Self {
            species_ids,
            records,
        })
    }

    /// Builds the catalog by order of first appearance.
    pub fn from_pairs<S: AsRef<str>>(pairs: impl IntoIterator<Item = (S, GeoCoord)>) -> Self {
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut species_ids = Vec::new();
        let mut records = Vec::new();
        for (id, coord) in pairs {
            let id = id.as_ref();
            let species = match index.get(id) {
                Some(&i) => i,
                None => {
                    let i = species_ids.len();
                    species_ids.push(id.to_owned());
                    index.insert(id.to_owned(), i);
                    i
                }
            };
            records.push(Observation { species, coord });
        }
        Self {
            species_ids,
            records,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_species(&self) -> usize {
        self.species_ids.len()
    }

    pub fn species_ids(&self) -> &[String] {
        &self.species_ids
    }

    pub fn records(&self) -> &[Observation] {
        &self.records
    }

    pub fn species_index(&self, id: &str) -> Option<usize> {
        self.species_ids.iter().position(|s| s == id)
    }

    /// Records per species, indexed like the catalog.
    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_species()];
        for r in &self.records {
            c[r.species] += 1;
        }
        c
    }

    /// Keeps the records accepted by `keep_record` and the species in
    /// `keep_species`, reindexing the catalog densely in its original order.
    fn retain(&self, keep_species: &[bool], mut keep_record: impl FnMut(usize) -> bool) -> Self {
        let mut remap = vec![usize::MAX; self.n_species()];
        let mut species_ids = Vec::new();
        for (i, id) in self.species_ids.iter().enumerate() {
            if keep_species[i] {
                remap[i] = species_ids.len();
                species_ids.push(id.clone());
            }
        }
        let records = self
            .records
            .iter()
            .enumerate()
            .filter(|(i, r)| keep_species[r.species] && keep_record(*i))
            .map(|(_, r)| Observation {
                species: remap[r.species],
                coord: r.coord,
            })
            .collect();
        Self {
            species_ids,
            records,
        }
    }
}

/// A CSV row that could not be turned into an observation.
#[derive(Debug, Clone, PartialEq)]
pub struct RowRejection {
    /// 1-based line number in the file.
    pub line: usize,
    pub reason: String,
}

/// Reads `species_id,lon,lat` CSV (extra columns ignored).
///
/// Bad rows are skipped and reported; the catalog follows first appearance.
pub fn load_observations(path: impl AsRef<Path>) -> Result<(ObservationSet, Vec<RowRejection>)> {
    let path = path.as_ref();
    let file = File::open(path)?;
    if file.metadata()?.len() == 0 {
        return Err(Error::Empty(format!("{} is empty", path.display())));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_owned()))
    };
    let (c_id, c_lon, c_lat) = (col("species_id")?, col("lon")?, col("lat")?);

    let mut pairs = Vec::new();
    let mut rejected = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                rejected.push(RowRejection {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let parsed = (|| -> std::result::Result<(String, GeoCoord), String> {
            let id = row
                .get(c_id)
                .filter(|s| !s.is_empty())
                .ok_or("missing species_id")?;
            let lon: f64 = row
                .get(c_lon)
                .ok_or("missing lon")?
                .parse()
                .map_err(|_| "unparsable lon".to_string())?;
            let lat: f64 = row
                .get(c_lat)
                .ok_or("missing lat")?
                .parse()
                .map_err(|_| "unparsable lat".to_string())?;
            let c = GeoCoord::new(lon, lat).map_err(|e| e.to_string())?;
            Ok((id.to_owned(), c))
        })();
        match parsed {
            Ok(p) => pairs.push(p),
            Err(reason) => rejected.push(RowRejection { line, reason }),
        }
    }
    Ok((ObservationSet::from_pairs(pairs), rejected))
}

/// Writes `species_id,lon,lat`; floats use the shortest representation that
/// reads back exactly.
pub fn write_observations(set: &ObservationSet, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["species_id", "lon", "lat"])?;
    for r in set.records() {
        w.write_record([
            set.species_ids[r.species].as_str(),
            &r.coord.lon().to_string(),
            &r.coord.lat().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Drops species with fewer than `min_count` records.
pub fn filter_min_count(o: &ObservationSet, min_count: usize) -> ObservationSet {
    let keep: Vec<bool> = o.counts().iter().map(|&c| c >= min_count.max(1)).collect();
    o.retain(&keep, |_| true)
}

/// Seeded permutation of `0..n` for one species, independent of any cap.
fn species_permutation(seed: u64, species_id: &str, n: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = rng_from_seed(derive_seed(seed, fnv1a(species_id.as_bytes()), n as u64));
    perm.shuffle(&mut rng);
    perm
}

/// Keeps at most `k` records per species, chosen uniformly at random.
///
/// The choice is a prefix of a per-species permutation fixed by `seed`, so
/// for the same seed the subset at a smaller cap is contained in the subset
/// at a larger one. Species with at most `k` records keep them all. Record
/// order is preserved.
pub fn subsample_cap(o: &ObservationSet, k: usize, seed: u64) -> ObservationSet {
    let mut by_species: Vec<Vec<usize>> = vec![Vec::new(); o.n_species()];
    for (i, r) in o.records.iter().enumerate() {
        by_species[r.species].push(i);
    }
    let mut keep_record = vec![false; o.len()];
    for (s, rows) in by_species.iter().enumerate() {
        if rows.len() <= k {
            rows.iter().for_each(|&i| keep_record[i] = true);
            continue;
        }
        let perm = species_permutation(seed, &o.species_ids[s], rows.len());
        for &p in &perm[..k] {
            keep_record[rows[p]] = true;
        }
    }
    let all = vec![true; o.n_species()];
    o.retain(&all, |i| keep_record[i])
}

/// Keeps the species in `keep` plus `extra_random` others chosen uniformly.
///
/// The extras are a prefix of a seeded permutation of the remaining
/// species, so increasing `extra_random` at a fixed seed only adds species.
pub fn select_species<S: AsRef<str>>(
    o: &ObservationSet,
    keep: &[S],
    extra_random: usize,
    seed: u64,
) -> Result<ObservationSet> {
    let mut keep_mask = vec![false; o.n_species()];
    for id in keep {
        let id = id.as_ref();
        let i = o
            .species_index(id)
            .ok_or_else(|| Error::UnknownSpecies(id.to_owned()))?;
        keep_mask[i] = true;
    }
    let mut others: Vec<usize> = (0..o.n_species()).filter(|&i| !keep_mask[i]).collect();
    if extra_random > others.len() {
        return Err(Error::InvalidArgument(format!(
            "asked for {extra_random} extra species but only {} remain",
            others.len()
        )));
    }
    others.shuffle(&mut rng_from_seed(seed));
    for &i in &others[..extra_random] {
        keep_mask[i] = true;
    }
    Ok(o.retain(&keep_mask, |_| true))
}

/// One raster layer as read from an `ENVGRID` file.
///
/// Rows run north to south: row 0 touches `lat_max`. Columns run west to
/// east from `lon_min`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvGrid {
    pub n_rows: usize,
    pub n_cols: usize,
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
    /// Row-major values, `None` where missing.
    pub values: Vec<Option<f64>>,
}

impl EnvGrid {
    pub fn new(
        n_rows: usize,
        n_cols: usize,
        (lon_min, lon_max, lat_min, lat_max): (f64, f64, f64, f64),
        values: Vec<Option<f64>>,
    ) -> Result<Self> {
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::InvalidArgument(
                "raster must have at least one cell".into(),
            ));
        }
        if !(lon_min < lon_max && lat_min < lat_max) {
            return Err(Error::InvalidArgument("raster bounds are empty".into()));
        }
        if lon_min < -180.0 || lon_max > 180.0 || lat_min < -90.0 || lat_max > 90.0 {
            return Err(Error::InvalidArgument(
                "raster bounds exceed the coordinate range".into(),
            ));
        }
        if values.len() != n_rows * n_cols {
            return Err(Error::Shape(format!(
                "{} values for a {n_rows}x{n_cols} raster",
                values.len()
            )));
        }
        Ok(Self {
            n_rows,
            n_cols,
            lon_min,
            lon_max,
            lat_min,
            lat_max,
            values,
        })
    }

    fn same_shape(&self, other: &EnvGrid) -> bool {
        self.n_rows == other.n_rows
            && self.n_cols == other.n_cols
            && self.lon_min == other.lon_min
            && self.lon_max == other.lon_max
            && self.lat_min == other.lat_min
            && self.lat_max == other.lat_max
    }

    pub fn n_cells(&self) -> usize {
        self.n_rows * self.n_cols
    }

    fn cell_size(&self) -> (f64, f64) {
        (
            (self.lon_max - self.lon_min) / self.n_cols as f64,
            (self.lat_max - self.lat_min) / self.n_rows as f64,
        )
    }

    pub fn cell_center(&self, index: usize) -> Result<GeoCoord> {
        if index >= self.n_cells() {
            return Err(Error::CellOutOfRange {
                index,
                n_cells: self.n_cells(),
            });
        }
        let (dx, dy) = self.cell_size();
        let (row, col) = (index / self.n_cols, index % self.n_cols);
        GeoCoord::new(
            self.lon_min + (col as f64 + 0.5) * dx,
            self.lat_max - (row as f64 + 0.5) * dy,
        )
    }

    /// Index of the cell containing `c`.
    pub fn cell_index(&self, c: GeoCoord) -> Result<usize> {
        let (lon, lat) = (c.lon(), c.lat());
        if lon < self.lon_min || lon > self.lon_max || lat < self.lat_min || lat > self.lat_max {
            return Err(Error::OutsideRaster { lon, lat });
        }
        let (dx, dy) = self.cell_size();
        let col = (((lon - self.lon_min) / dx).floor() as usize).min(self.n_cols - 1);
        let row = (((self.lat_max - lat) / dy).floor() as usize).min(self.n_rows - 1);
        Ok(row * self.n_cols + col)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let reader = BufReader::new(File::open(path)?);
        Self::parse(reader, path)
    }

    /// Parses `ENVGRID n_rows n_cols lon_min lon_max lat_min lat_max`
    /// followed by whitespace-separated row-major values, `NA` for missing.
    pub fn parse<R: BufRead>(reader: R, path: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: PathBuf::from(path),
            line,
            message,
        };
        let mut lines = reader.lines().enumerate();
        let (header_line, header) = loop {
            match lines.next() {
                Some((i, l)) => {
                    let l = l?;
                    if !l.trim().is_empty() {
                        break (i + 1, l);
                    }
                }
                None => return Err(Error::Empty(format!("{} is empty", path.display()))),
            }
        };
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 7 || h[0] != "ENVGRID" {
            return Err(err(
                header_line,
                "expected `ENVGRID n_rows n_cols lon_min lon_max lat_min lat_max`".into(),
            ));
        }
        let int = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| err(header_line, format!("bad integer `{s}`")))
        };
        let flt = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| err(header_line, format!("bad number `{s}`")))
        };
        let (n_rows, n_cols) = (int(h[1])?, int(h[2])?);
        let bounds = (flt(h[3])?, flt(h[4])?, flt(h[5])?, flt(h[6])?);
        let mut values = Vec::with_capacity(n_rows.saturating_mul(n_cols).min(1 << 26));
        for (i, l) in lines {
            let l = l?;
            for tok in l.split_whitespace() {
                if tok == "NA" {
                    values.push(None);
                } else {
                    let v: f64 = tok
                        .parse()
                        .map_err(|_| err(i + 1, format!("bad value `{tok}`")))?;
                    values.push(if v.is_nan() { None } else { Some(v) });
                }
            }
        }
        EnvGrid::new(n_rows, n_cols, bounds, values).map_err(|e| err(header_line, e.to_string()))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(
            w,
            "ENVGRID {} {} {} {} {} {}",
            self.n_rows, self.n_cols, self.lon_min, self.lon_max, self.lat_min, self.lat_max
        )?;
        for row in self.values.chunks(self.n_cols) {
            let line: Vec<String> = row
                .iter()
                .map(|v| v.map_or_else(|| "NA".to_string(), |x| x.to_string()))
                .collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Z-scored environmental covariates on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvRasterStack {
    shape: EnvGrid,
    /// Per layer, normalized values with missing cells set to 0.
    layers: Vec<Vec<f64>>,
    missing: Vec<Vec<bool>>,
    means: Vec<f64>,
    sds: Vec<f64>,
}

impl EnvRasterStack {
    /// Fits per-layer mean and (population) standard deviation over
    /// non-missing cells, normalizes, then sets missing cells to 0. Layers
    /// with zero spread normalize to all zeros.
    pub fn fit(grids: Vec<EnvGrid>) -> Result<Self> {
        let first = grids
            .first()
            .ok_or_else(|| Error::Empty("no raster layers".into()))?;
        if let Some(g) = grids.iter().find(|g| !g.same_shape(first)) {
            return Err(Error::Shape(format!(
                "raster layers disagree: {}x{} vs {}x{} or different bounds",
                first.n_rows, first.n_cols, g.n_rows, g.n_cols
            )));
        }
        let shape = EnvGrid {
            values: Vec::new(),
            ..first.clone()
        };
        let mut layers = Vec::with_capacity(grids.len());
        let mut missing = Vec::with_capacity(grids.len());
        let mut means = Vec::with_capacity(grids.len());
        let mut sds = Vec::with_capacity(grids.len());
        for g in &grids {
            let present: Vec<f64> = g.values.iter().flatten().copied().collect();
            let n = present.len() as f64;
            let (mean, sd) = if present.is_empty() {
                (0.0, 0.0)
            } else {
                let mean = present.iter().sum::<f64>() / n;
                let var = present.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                (mean, var.sqrt())
            };
            layers.push(
                g.values
                    .iter()
                    .map(|v| match v {
                        Some(x) if sd > 0.0 => (x - mean) / sd,
                        _ => 0.0,
                    })
                    .collect(),
            );
            missing.push(g.values.iter().map(Option::is_none).collect());
            means.push(mean);
            sds.push(sd);
        }
        Ok(Self {
            shape,
            layers,
            missing,
            means,
            sds,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// `(lon_min, lon_max, lat_min, lat_max)`.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let g = &self.shape;
        (g.lon_min, g.lon_max, g.lat_min, g.lat_max)
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn sds(&self) -> &[f64] {
        &self.sds
    }

    pub fn layer(&self, i: usize) -> &[f64] {
        &self.layers[i]
    }

    /// The normalized layers as grids, with missing cells restored.
    pub fn normalized_grids(&self) -> Vec<EnvGrid> {
        self.layers
            .iter()
            .zip(&self.missing)
            .map(|(l, m)| EnvGrid {
                values: l
                    .iter()
                    .zip(m)
                    .map(|(&v, &miss)| (!miss).then_some(v))
                    .collect(),
                ..self.shape.clone()
            })
            .collect()
    }

    /// Normalized covariates of the cell containing `c`.
    pub fn lookup(&self, c: GeoCoord) -> Result<Vec<f64>> {
        let i = self.shape.cell_index(c)?;
        Ok(self.layers.iter().map(|l| l[i]).collect())
    }
}

pub fn load_env_rasters<P: AsRef<Path>>(paths: &[P]) -> Result<EnvRasterStack> {
    let grids = paths
        .iter()
        .map(EnvGrid::read)
        .collect::<Result<Vec<_>>>()?;
    EnvRasterStack::fit(grids)
}

pub fn env_lookup(stack: &EnvRasterStack, c: GeoCoord) -> Result<Vec<f64>> {
    stack.lookup(c)
}

/// Network input width for a mode.
pub fn input_dim(mode: InputMode, env: Option<&EnvRasterStack>) -> Result<usize> {
    let e = match (mode.needs_env(), env) {
        (false, _) => 0,
        (true, Some(s)) => s.n_layers(),
        (true, None) => return Err(Error::MissingRasters),
    };
    Ok(mode.layout(e).dim())
}

/// Encodes locations as network inputs: covariates first, then the
/// coordinate encoding.
pub fn encode_inputs(
    coords: &[GeoCoord],
    mode: InputMode,
    env: Option<&EnvRasterStack>,
) -> Result<Array2<f32>> {
    let dim = input_dim(mode, env)?;
    let mut out = Array2::zeros((coords.len(), dim));
    for (mut row, &c) in out.outer_iter_mut().zip(coords) {
        let mut k = 0;
        if mode.needs_env() {
            let env = env.ok_or(Error::MissingRasters)?;
            for v in env.lookup(c)? {
                row[k] = v as f32;
                k += 1;
            }
        }
        if mode != InputMode::Env {
            for v in encode_location(c) {
                row[k] = v as f32;
                k += 1;
            }
        }
        debug_assert_eq!(k, dim);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub batch_size: usize,
    pub cap_per_species: Option<usize>,
    pub subsample_seed: u64,
    pub input_mode: InputMode,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            batch_size: 2048,
            cap_per_species: None,
            subsample_seed: 0,
            input_mode: InputMode::Coords,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if self.cap_per_species == Some(0) {
            return Err(Error::InvalidConfig(
                "cap_per_species must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Array2<f32>,
    pub targets: BatchTargets,
    pub coords: Vec<GeoCoord>,
}

/// Draws `batch_size` records uniformly with replacement.
pub fn sample_batch<R: Rng + ?Sized>(
    o: &ObservationSet,
    cfg: &SamplerConfig,
    env: Option<&EnvRasterStack>,
    rng: &mut R,
) -> Result<Batch> {
    if o.is_empty() {
        return Err(Error::Empty(
            "cannot sample from an empty observation set".into(),
        ));
    }
    if cfg.input_mode.needs_env() && env.is_none() {
        return Err(Error::MissingRasters);
    }
    let picks: Vec<&Observation> = (0..cfg.batch_size)
        .map(|_| &o.records[rng.gen_range(0..o.len())])
        .collect();
    let coords: Vec<GeoCoord> = picks.iter().map(|r| r.coord).collect();
    let targets = BatchTargets::new(picks.iter().map(|r| r.species).collect(), o.n_species())?;
    let inputs = encode_inputs(&coords, cfg.input_mode, env)?;
    Ok(Batch {
        inputs,
        targets,
        coords,
    })
}

/// I.i.d. locations uniform over the lon/lat rectangle.
pub fn sample_uniform_locations<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<GeoCoord> {
    sample_locations_in(n, (-180.0, 180.0, -90.0, 90.0), rng)
}

/// I.i.d. locations uniform over `(lon_min, lon_max, lat_min, lat_max)`,
/// which must lie inside the valid coordinate range.
pub fn sample_locations_in<R: Rng + ?Sized>(
    n: usize,
    (lon_min, lon_max, lat_min, lat_max): (f64, f64, f64, f64),
    rng: &mut R,
) -> Vec<GeoCoord> {
    (0..n)
        .map(|_| {
            let lon = rng.gen_range(lon_min..=lon_max);
            let lat = rng.gen_range(lat_min..=lat_max);
            GeoCoord::new(lon, lat).expect("sampled inside the valid range")
        })
        .collect()
}

const _: () = assert!(COORD_ENCODING_DIM == 4);

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn gc(lon: f64, lat: f64) -> GeoCoord {
        GeoCoord::new(lon, lat).unwrap()
    }

    fn set_with_counts(counts: &[usize]) -> ObservationSet {
        let mut pairs = Vec::new();
        let mut k = 0;
        for (s, &c) in counts.iter().enumerate() {
            for _ in 0..c {
                k += 1;
                let lon = (k % 360) as f64 - 180.0;
                pairs.push((format!("sp{s}"), gc(lon, (k % 180) as f64 - 90.0)));
            }
        }
        ObservationSet::from_pairs(pairs)
    }

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn loads_small_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "o.csv",
            "species_id,lon,lat,note\nfox,10,20,x\nowl,-5,3,y\nfox,0,0,z\n",
        );
        let (set, rej) = load_observations(&p).unwrap();
        assert_eq!(set.len(), 3);
        assert_eq!(set.n_species(), 2);
        assert_eq!(set.species_ids(), ["fox", "owl"]);
        assert!(rej.is_empty());
    }

    #[test]
    fn rejects_bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "o.csv",
            "lat,species_id,lon\n95,a,0\n10,a,abc\n10,b,20\n",
        );
        let (set, rej) = load_observations(&p).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(rej.len(), 2);
        assert_eq!(rej[0].line, 2);
        assert_eq!(rej[1].line, 3);
        assert_eq!(set.species_ids(), ["b"]);
    }

    #[test]
    fn missing_column_and_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "o.csv", "species_id,lon\na,1\n");
        assert!(matches!(load_observations(&p), Err(Error::MissingColumn(c)) if c == "lat"));
        let p = write(&dir, "e.csv", "");
        assert!(matches!(load_observations(&p), Err(Error::Empty(_))));
    }

    #[test]
    fn csv_round_trip_1000_rows() {
        let mut rng = rng_from_seed(3);
        let pairs: Vec<(String, GeoCoord)> = (0..1000)
            .map(|_| {
                let s = format!("species_{}", rng.gen_range(0..37));
                (s, sample_uniform_locations(1, &mut rng)[0])
            })
            .collect();
        let set = ObservationSet::from_pairs(pairs);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rt.csv");
        write_observations(&set, &p).unwrap();
        let (back, rej) = load_observations(&p).unwrap();
        assert!(rej.is_empty());
        assert_eq!(back, set);
    }

    #[test]
    fn min_count_boundary() {
        let set = set_with_counts(&[60, 49]);
        let f = filter_min_count(&set, 50);
        assert_eq!(f.species_ids(), ["sp0"]);
        assert_eq!(f.len(), 60);
        assert_eq!(filter_min_count(&set, 1), set);
    }

    #[test]
    fn cap_keeps_small_species_whole() {
        let set = set_with_counts(&[5, 30]);
        let s = subsample_cap(&set, 10, 1);
        assert_eq!(s.counts(), vec![5, 10]);
        let a = subsample_cap(&set, 10, 1);
        assert_eq!(s, a);
    }

    #[test]
    fn cap_seed_matters() {
        let set = set_with_counts(&[1000]);
        assert_ne!(subsample_cap(&set, 100, 1), subsample_cap(&set, 100, 2));
    }

    #[test]
    fn select_species_cases() {
        let set = set_with_counts(&[3, 4, 5]);
        let all: Vec<String> = set.species_ids().to_vec();
        assert_eq!(select_species(&set, &all, 0, 9).unwrap(), set);
        let only_a = select_species(&set, &["sp0"], 0, 9).unwrap();
        assert_eq!(only_a.species_ids(), ["sp0"]);
        assert_eq!(only_a.len(), 3);
        assert!(select_species(&set, &["sp0"], 3, 9).is_err());
        assert!(select_species(&set, &["zz"], 0, 9).is_err());
    }

    #[test]
    fn select_species_is_nested() {
        let set = set_with_counts(&[2; 50]);
        let small = select_species(&set, &["sp0"], 5, 77).unwrap();
        let big = select_species(&set, &["sp0"], 10, 77).unwrap();
        assert_eq!(small.n_species(), 6);
        assert_eq!(big.n_species(), 11);
        for id in small.species_ids() {
            assert!(big.species_index(id).is_some());
        }
    }

    #[test]
    fn batch_from_single_record() {
        let set = ObservationSet::from_pairs([("a", gc(10.0, 10.0))]);
        let cfg = SamplerConfig {
            batch_size: 16,
            ..Default::default()
        };
        let mut rng = rng_from_seed(0);
        let b = sample_batch(&set, &cfg, None, &mut rng).unwrap();
        assert!(b.coords.iter().all(|c| *c == gc(10.0, 10.0)));
        assert_eq!(b.inputs.dim(), (16, 4));
        assert!(b.targets.positives().iter().all(|&j| j == 0));
    }

    #[test]
    fn batch_frequencies_uniform() {
        let set = ObservationSet::from_pairs([
            ("a", gc(0.0, 0.0)),
            ("b", gc(1.0, 0.0)),
            ("c", gc(2.0, 0.0)),
        ]);
        let cfg = SamplerConfig {
            batch_size: 100_000,
            ..Default::default()
        };
        let mut rng = rng_from_seed(5);
        let b = sample_batch(&set, &cfg, None, &mut rng).unwrap();
        let mut counts = [0usize; 3];
        for &j in b.targets.positives() {
            counts[j] += 1;
        }
        for c in counts {
            assert!((c as f64 / 100_000.0 - 1.0 / 3.0).abs() < 0.02);
        }
    }

    #[test]
    fn batch_errors() {
        let cfg = SamplerConfig::default();
        let mut rng = rng_from_seed(0);
        assert!(sample_batch(&ObservationSet::default(), &cfg, None, &mut rng).is_err());
        let set = ObservationSet::from_pairs([("a", gc(0.0, 0.0))]);
        let env_cfg = SamplerConfig {
            input_mode: InputMode::Env,
            ..cfg
        };
        assert!(matches!(
            sample_batch(&set, &env_cfg, None, &mut rng),
            Err(Error::MissingRasters)
        ));
    }

    fn global_stack(n_layers: usize) -> EnvRasterStack {
        let grids = (0..n_layers)
            .map(|l| {
                let vals = (0..18 * 36)
                    .map(|i| Some((i * (l + 1)) as f64 % 7.0))
                    .collect();
                EnvGrid::new(18, 36, (-180.0, 180.0, -90.0, 90.0), vals).unwrap()
            })
            .collect();
        EnvRasterStack::fit(grids).unwrap()
    }

    #[test]
    fn input_layouts() {
        let env = global_stack(20);
        let c = [gc(3.0, 4.0)];
        assert_eq!(
            encode_inputs(&c, InputMode::Coords, None).unwrap().ncols(),
            4
        );
        assert_eq!(
            encode_inputs(&c, InputMode::Env, Some(&env))
                .unwrap()
                .ncols(),
            20
        );
        let both = encode_inputs(&c, InputMode::EnvPlusCoords, Some(&env)).unwrap();
        assert_eq!(both.ncols(), 24);
        let enc = encode_location(c[0]);
        assert_eq!(both[[0, 20]], enc[0] as f32);
        assert_eq!(both[[0, 19]], env.lookup(c[0]).unwrap()[19] as f32);
    }

    #[test]
    fn uniform_locations() {
        let mut rng = rng_from_seed(8);
        let locs = sample_uniform_locations(100_000, &mut rng);
        let mlon = locs.iter().map(|c| c.lon()).sum::<f64>() / 1e5;
        let mlat = locs.iter().map(|c| c.lat()).sum::<f64>() / 1e5;
        assert!(mlon.abs() < 2.0 && mlat.abs() < 1.0);
        let again = sample_uniform_locations(100, &mut rng_from_seed(8));
        assert_eq!(&locs[..100], &again[..]);
    }

    #[test]
    fn zscore_with_missing() {
        let g = EnvGrid::new(
            1,
            4,
            (0.0, 4.0, 0.0, 1.0),
            vec![Some(1.0), Some(2.0), Some(3.0), None],
        )
        .unwrap();
        let s = EnvRasterStack::fit(vec![g]).unwrap();
        let expect = [-1.224_744_871, 0.0, 1.224_744_871, 0.0];
        for (a, b) in s.layer(0).iter().zip(expect) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn constant_layer_is_zero() {
        let g = EnvGrid::new(2, 2, (0.0, 2.0, 0.0, 2.0), vec![Some(5.0); 4]).unwrap();
        let s = EnvRasterStack::fit(vec![g]).unwrap();
        assert!(s.layer(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn refit_is_standard() {
        let mut rng = rng_from_seed(2);
        let vals: Vec<Option<f64>> = (0..400)
            .map(|_| {
                if rng.gen_bool(0.1) {
                    None
                } else {
                    Some(rng.gen_range(-50.0..300.0))
                }
            })
            .collect();
        let g = EnvGrid::new(20, 20, (-10.0, 10.0, -10.0, 10.0), vals).unwrap();
        let s = EnvRasterStack::fit(vec![g]).unwrap();
        let again = EnvRasterStack::fit(s.normalized_grids()).unwrap();
        assert!(again.means()[0].abs() < 1e-6);
        assert!((again.sds()[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn lookup_cell_centers_and_bounds() {
        let vals = (0..6).map(|i| Some(i as f64)).collect();
        let g = EnvGrid::new(2, 3, (0.0, 30.0, 0.0, 20.0), vals).unwrap();
        let s = EnvRasterStack::fit(vec![g.clone()]).unwrap();
        for i in 0..6 {
            let c = g.cell_center(i).unwrap();
            assert_eq!(s.lookup(c).unwrap()[0], s.layer(0)[i]);
        }
        // Row 0 is the northern row.
        assert_eq!(g.cell_index(gc(5.0, 19.0)).unwrap(), 0);
        assert_eq!(g.cell_index(gc(25.0, 1.0)).unwrap(), 5);
        assert!(matches!(
            s.lookup(gc(-1.0, 5.0)),
            Err(Error::OutsideRaster { .. })
        ));
    }

    #[test]
    fn envgrid_parse_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let a = write(&dir, "a.txt", "ENVGRID 1 3 0 3 0 1\n1 NA 3\n");
        let b = write(&dir, "b.txt", "ENVGRID 1 2 0 3 0 1\n1 2\n");
        let bad = write(&dir, "c.txt", "ENVGRID 1 2 0 3 0 1\n1 x\n");
        let g = EnvGrid::read(&a).unwrap();
        assert_eq!(g.values, vec![Some(1.0), None, Some(3.0)]);
        assert!(matches!(load_env_rasters(&[&a, &b]), Err(Error::Shape(_))));
        assert!(matches!(
            EnvGrid::read(&bad),
            Err(Error::Parse { line: 2, .. })
        ));
        let rt = dir.path().join("rt.txt");
        g.write(&rt).unwrap();
        assert_eq!(EnvGrid::read(&rt).unwrap(), g);
    }

    proptest! {
        #[test]
        fn filter_matches_brute_force(counts in proptest::collection::vec(0usize..30, 1..12), min in 1usize..25) {
            let set = set_with_counts(&counts);
            let f = filter_min_count(&set, min);
            let expected: Vec<String> = counts
                .iter()
                .enumerate()
                .filter(|(_, &c)| c >= min)
                .map(|(s, _)| format!("sp{s}"))
                .collect();
            prop_assert_eq!(f.species_ids(), &expected[..]);
            let total: usize = counts.iter().filter(|&&c| c >= min).sum();
            prop_assert_eq!(f.len(), total);
        }

        #[test]
        fn cap_is_nested_and_bounded(
            counts in proptest::collection::vec(1usize..60, 1..8),
            k_small in 1usize..20,
            extra in 1usize..30,
            seed in 0u64..1000,
        ) {
            let set = set_with_counts(&counts);
            let k_big = k_small + extra;
            let small = subsample_cap(&set, k_small, seed);
            let big = subsample_cap(&set, k_big, seed);
            prop_assert!(small.counts().iter().all(|&c| c <= k_small));
            prop_assert!(filter_min_count(&big, 1).counts().iter().all(|&c| c <= k_big));
            let key = |s: &ObservationSet, r: &Observation| {
                (s.species_ids()[r.species].clone(), r.coord.lon().to_bits(), r.coord.lat().to_bits())
            };
            let big_keys: HashSet<_> = big.records().iter().map(|r| key(&big, r)).collect();
            for r in small.records() {
                prop_assert!(big_keys.contains(&key(&small, r)));
            }
        }
    }
}
