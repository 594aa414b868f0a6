//! Evaluation: ranking metrics over gridded presence/absence labels, the
//! image-classifier prior task, ridge probes on learned features, and the
//! grid-count and F1-threshold helpers.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use crate::data::{encode_inputs, EnvGrid, EnvRasterStack, ObservationSet};
use crate::geo::{GeoCoord, GridSpec};
use crate::net::{forward, Mode, SinrModel};
use crate::{Error, Result};

/// Rows predicted per forward pass when scoring many locations.
const PREDICT_CHUNK: usize = 4096;

/// Average precision of a ranking.
///
/// Examples are ranked by descending score; equal scores keep their input
/// order. Errors without any positive label or with a NaN score.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return Err(Error::DegenerateLabels("no positive labels".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / n_pos as f64)
}

/// Anything that maps locations to per-species presence probabilities.
pub trait Predictor: Sync {
    /// External species ids, one per output column.
    fn species_ids(&self) -> &[String];

    /// `coords.len() x n_species` probabilities.
    fn predict(&self, coords: &[GeoCoord]) -> Result<Array2<f64>>;
}

/// A trained network, with the rasters its inputs need.
#[derive(Debug, Clone, Copy)]
pub struct ModelPredictor<'a> {
    pub model: &'a SinrModel,
    pub env: Option<&'a EnvRasterStack>,
}

impl<'a> ModelPredictor<'a> {
    pub fn new(model: &'a SinrModel, env: Option<&'a EnvRasterStack>) -> Self {
        Self { model, env }
    }

    /// Eval-mode probabilities in the network's own precision.
    pub fn predict_f32(&self, coords: &[GeoCoord]) -> Result<Array2<f32>> {
        let mut out = Array2::zeros((coords.len(), self.model.config.n_species));
        for (i, chunk) in coords.chunks(PREDICT_CHUNK).enumerate() {
            let x = encode_inputs(chunk, self.model.input_mode, self.env)?;
            let y = self.model.predict(&x)?;
            let start = i * PREDICT_CHUNK;
            out.slice_mut(ndarray::s![start..start + chunk.len(), ..])
                .assign(&y);
        }
        Ok(out)
    }

    /// Encoder output at each location, `coords.len() x feature_dim`.
    pub fn features(&self, coords: &[GeoCoord]) -> Result<Array2<f64>> {
        let cfg = &self.model.config;
        let mut out = Array2::zeros((coords.len(), cfg.feature_dim()));
        let mut no_rng = rand::rngs::mock::StepRng::new(0, 0);
        for (i, chunk) in coords.chunks(PREDICT_CHUNK).enumerate() {
            let x = encode_inputs(chunk, self.model.input_mode, self.env)?;
            let pass = forward(&self.model.params, cfg, x.view(), Mode::Eval, &mut no_rng)?;
            let start = i * PREDICT_CHUNK;
            out.slice_mut(ndarray::s![start..start + chunk.len(), ..])
                .assign(&pass.features.mapv(f64::from));
        }
        Ok(out)
    }
}

impl Predictor for ModelPredictor<'_> {
    fn species_ids(&self) -> &[String] {
        &self.model.species
    }

    fn predict(&self, coords: &[GeoCoord]) -> Result<Array2<f64>> {
        Ok(self.predict_f32(coords)?.mapv(f64::from))
    }
}

/// A predictor backed by a closure returning one row per location.
pub struct FnPredictor<F> {
    species: Vec<String>,
    f: F,
}

impl<F: Fn(GeoCoord) -> Vec<f64> + Sync> FnPredictor<F> {
    pub fn new(species: Vec<String>, f: F) -> Self {
        Self { species, f }
    }
}

impl<F: Fn(GeoCoord) -> Vec<f64> + Sync> Predictor for FnPredictor<F> {
    fn species_ids(&self) -> &[String] {
        &self.species
    }

    fn predict(&self, coords: &[GeoCoord]) -> Result<Array2<f64>> {
        let s = self.species.len();
        let mut out = Array2::zeros((coords.len(), s));
        for (mut row, &c) in out.outer_iter_mut().zip(coords) {
            let v = (self.f)(c);
            if v.len() != s {
                return Err(Error::Shape(format!(
                    "predictor returned {} values for {s} species",
                    v.len()
                )));
            }
            row.assign(&ArrayView1::from(&v));
        }
        Ok(out)
    }
}

/// Presence/absence labels on grid cells.
///
/// Each species lists only its valid cells; any cell not listed is
/// excluded from that species' evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalGrid {
    pub grid: GridSpec,
    pub species: Vec<String>,
    /// Per species, `(cell, present)` sorted by cell index.
    pub labels: Vec<Vec<(usize, bool)>>,
}

impl EvalGrid {
    pub fn new(
        grid: GridSpec,
        species: Vec<String>,
        mut labels: Vec<Vec<(usize, bool)>>,
    ) -> Result<Self> {
        if species.len() != labels.len() {
            return Err(Error::Shape(
                "one label list per species is required".into(),
            ));
        }
        if species.iter().collect::<HashSet<_>>().len() != species.len() {
            return Err(Error::InvalidArgument("duplicate species id".into()));
        }
        for (id, l) in species.iter().zip(&mut labels) {
            l.sort_by_key(|&(c, _)| c);
            if let Some(&(c, _)) = l.iter().find(|&&(c, _)| c >= grid.n_cells()) {
                return Err(Error::CellOutOfRange {
                    index: c,
                    n_cells: grid.n_cells(),
                });
            }
            if l.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::InvalidArgument(format!(
                    "species `{id}` lists a cell twice"
                )));
            }
        }
        Ok(Self {
            grid,
            species,
            labels,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(BufReader::new(File::open(path)?), path)
    }

    /// Parses `EVALGRID resolution S` followed by `species_id cell label`
    /// lines.
    pub fn parse<R: BufRead>(reader: R, path: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: PathBuf::from(path),
            line,
            message,
        };
        let mut header: Option<(usize, usize, usize)> = None;
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut species = Vec::new();
        let mut labels: Vec<Vec<(usize, bool)>> = Vec::new();
        let mut seen: HashSet<(usize, usize)> = HashSet::new();
        let mut grid = None;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.is_empty() {
                continue;
            }
            let Some((_, n_species, _)) = header else {
                if toks.len() != 3 || toks[0] != "EVALGRID" {
                    return Err(err(lineno, "expected `EVALGRID resolution S`".into()));
                }
                let res: usize = toks[1]
                    .parse()
                    .map_err(|_| err(lineno, "bad resolution".into()))?;
                let s: usize = toks[2]
                    .parse()
                    .map_err(|_| err(lineno, "bad species count".into()))?;
                grid = Some(GridSpec::new(res).map_err(|e| err(lineno, e.to_string()))?);
                header = Some((res, s, lineno));
                continue;
            };
            let grid = grid.as_ref().expect("set with header");
            if toks.len() != 3 {
                return Err(err(lineno, "expected `species_id cell_index label`".into()));
            }
            let cell: usize = toks[1]
                .parse()
                .map_err(|_| err(lineno, format!("bad cell index `{}`", toks[1])))?;
            if cell >= grid.n_cells() {
                return Err(err(
                    lineno,
                    format!("cell {cell} outside a grid of {} cells", grid.n_cells()),
                ));
            }
            let present = match toks[2] {
                "1" => true,
                "0" => false,
                other => return Err(err(lineno, format!("label must be 0 or 1, got `{other}`"))),
            };
            let s = match index.get(toks[0]) {
                Some(&s) => s,
                None => {
                    if species.len() == n_species {
                        return Err(err(
                            lineno,
                            format!("more than the declared {n_species} species"),
                        ));
                    }
                    index.insert(toks[0].to_owned(), species.len());
                    species.push(toks[0].to_owned());
                    labels.push(Vec::new());
                    species.len() - 1
                }
            };
            if !seen.insert((s, cell)) {
                return Err(err(
                    lineno,
                    format!("duplicate label for `{}` in cell {cell}", toks[0]),
                ));
            }
            labels[s].push((cell, present));
        }
        let Some((_, n_species, header_line)) = header else {
            return Err(Error::Empty(format!("{} is empty", path.display())));
        };
        if species.len() != n_species {
            return Err(err(
                header_line,
                format!(
                    "header declares {n_species} species but {} are listed",
                    species.len()
                ),
            ));
        }
        EvalGrid::new(grid.expect("set with header"), species, labels)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(File::create(path)?);
        writeln!(
            w,
            "EVALGRID {} {}",
            self.grid.resolution(),
            self.species.len()
        )?;
        for (id, l) in self.species.iter().zip(&self.labels) {
            for &(c, p) in l {
                writeln!(w, "{id} {c} {}", u8::from(p))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeciesAp {
    pub species_id: String,
    pub ap: f64,
    pub n_present: usize,
    pub n_absent: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapReport {
    /// Mean of the per-species APs.
    pub map: f64,
    /// In the grid file's species order.
    pub per_species: Vec<SpeciesAp>,
    /// Species that could not be scored, with the reason.
    pub skipped: Vec<(String, String)>,
}

/// Scores a predictor against gridded labels: per-species AP over the valid
/// cell centroids, then the unweighted mean.
///
/// A species is skipped if the predictor does not know it or its valid
/// cells lack either a presence or an absence.
pub fn map_task(predictor: &dyn Predictor, grid: &EvalGrid) -> Result<MapReport> {
    let model_index: HashMap<&str, usize> = predictor
        .species_ids()
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();

    let mut cells: Vec<usize> = grid.labels.iter().flatten().map(|&(c, _)| c).collect();
    cells.sort_unstable();
    cells.dedup();
    let row_of: HashMap<usize, usize> = cells.iter().enumerate().map(|(r, &c)| (c, r)).collect();
    let coords = cells
        .iter()
        .map(|&c| grid.grid.cell_centroid(c))
        .collect::<Result<Vec<_>>>()?;
    let preds = predictor.predict(&coords)?;

    let results: Vec<std::result::Result<SpeciesAp, (String, String)>> = grid
        .species
        .par_iter()
        .zip(&grid.labels)
        .map(|(id, l)| {
            let Some(&j) = model_index.get(id.as_str()) else {
                return Err((id.clone(), "not predicted by the model".to_string()));
            };
            let n_present = l.iter().filter(|&&(_, p)| p).count();
            let n_absent = l.len() - n_present;
            if n_present == 0 || n_absent == 0 {
                return Err((
                    id.clone(),
                    "needs at least one present and one absent cell".to_string(),
                ));
            }
            let scores: Vec<f64> = l.iter().map(|&(c, _)| preds[[row_of[&c], j]]).collect();
            let truth: Vec<bool> = l.iter().map(|&(_, p)| p).collect();
            let ap = average_precision(&scores, &truth).map_err(|e| (id.clone(), e.to_string()))?;
            Ok(SpeciesAp {
                species_id: id.clone(),
                ap,
                n_present,
                n_absent,
            })
        })
        .collect();

    let mut per_species = Vec::new();
    let mut skipped = Vec::new();
    for r in results {
        match r {
            Ok(s) => per_species.push(s),
            Err(s) => skipped.push(s),
        }
    }
    if per_species.is_empty() {
        return Err(Error::DegenerateLabels(
            "no species could be evaluated".into(),
        ));
    }
    let map = per_species.iter().map(|s| s.ap).sum::<f64>() / per_species.len() as f64;
    Ok(MapReport {
        map,
        per_species,
        skipped,
    })
}

/// One classified image.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredImage {
    pub image_id: String,
    pub true_species: String,
    pub coord: GeoCoord,
    /// Classifier scores in `[0, 1]`.
    pub scores: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClassifierScoreSet {
    pub records: Vec<ScoredImage>,
}

impl ClassifierScoreSet {
    pub fn new(records: Vec<ScoredImage>) -> Result<Self> {
        for r in &records {
            if r.scores.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "image `{}` has no scores",
                    r.image_id
                )));
            }
            if let Some((s, v)) = r.scores.iter().find(|(_, v)| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidArgument(format!(
                    "score {v} for `{s}` in image `{}` is outside [0, 1]",
                    r.image_id
                )));
            }
        }
        Ok(Self { records })
    }

    /// Reads `image_id,true_species_id,lon,lat` followed by any number of
    /// `species_id:score` fields.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let headers = rdr.headers()?.clone();
        let expected = ["image_id", "true_species_id", "lon", "lat"];
        if headers.len() < 4 || headers.iter().zip(expected).any(|(h, e)| h != e) {
            return Err(err(
                1,
                "header must start with image_id,true_species_id,lon,lat".into(),
            ));
        }
        let mut records = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| err(line, e.to_string()))?;
            if row.len() < 5 {
                return Err(err(line, "no species scores".into()));
            }
            let num = |s: &str, what: &str| {
                s.parse::<f64>()
                    .map_err(|_| err(line, format!("bad {what} `{s}`")))
            };
            let coord = GeoCoord::new(num(&row[2], "lon")?, num(&row[3], "lat")?)
                .map_err(|e| err(line, e.to_string()))?;
            let mut scores = Vec::with_capacity(row.len() - 4);
            for field in row.iter().skip(4).filter(|f| !f.is_empty()) {
                let (id, v) = field.rsplit_once(':').ok_or_else(|| {
                    err(line, format!("expected species_id:score, got `{field}`"))
                })?;
                let v = num(v, "score")?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(err(line, format!("score {v} outside [0, 1]")));
                }
                scores.push((id.to_owned(), v));
            }
            if scores.is_empty() {
                return Err(err(line, "no species scores".into()));
            }
            records.push(ScoredImage {
                image_id: row[0].to_owned(),
                true_species: row[1].to_owned(),
                coord,
                scores,
            });
        }
        Self::new(records)
    }
}

/// Orders species ids numerically when both are integers, otherwise as
/// strings.
pub fn species_id_cmp(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        _ => a.cmp(b),
    }
}

/// The highest-scoring species; equal scores go to the smallest id.
fn top1<'s>(scores: impl Iterator<Item = (&'s str, f64)>) -> Option<&'s str> {
    let mut best: Option<(&str, f64)> = None;
    for (id, v) in scores {
        best = match best {
            None => Some((id, v)),
            Some((bid, bv)) => {
                if v > bv || (v == bv && species_id_cmp(id, bid) == Ordering::Less) {
                    Some((id, v))
                } else {
                    Some((bid, bv))
                }
            }
        };
    }
    best.map(|(id, _)| id)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPriorReport {
    pub n_images: usize,
    /// Top-1 accuracy of the raw classifier, in percent.
    pub baseline_top1: f64,
    /// Top-1 accuracy after weighting by the range prior, in percent.
    pub weighted_top1: f64,
    /// `weighted_top1 - baseline_top1`, in percentage points.
    pub delta: f64,
}

/// Change in top-1 accuracy when each classifier score is multiplied by the
/// predicted presence of that species at the image location. Species the
/// predictor does not know get a weight of 1.
pub fn geo_prior_delta(
    scores: &ClassifierScoreSet,
    predictor: &dyn Predictor,
) -> Result<GeoPriorReport> {
    let n = scores.records.len();
    if n == 0 {
        return Err(Error::Empty("no scored images".into()));
    }
    let index: HashMap<&str, usize> = predictor
        .species_ids()
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let mut base_hits = 0usize;
    let mut weighted_hits = 0usize;
    for chunk in scores.records.chunks(PREDICT_CHUNK) {
        let coords: Vec<GeoCoord> = chunk.iter().map(|r| r.coord).collect();
        let prior = predictor.predict(&coords)?;
        for (r, p) in chunk.iter().zip(prior.outer_iter()) {
            let raw = top1(r.scores.iter().map(|(s, v)| (s.as_str(), *v)));
            let weighted = top1(r.scores.iter().map(|(s, v)| {
                let w = index.get(s.as_str()).map_or(1.0, |&j| p[j]);
                (s.as_str(), v * w)
            }));
            base_hits += usize::from(raw == Some(r.true_species.as_str()));
            weighted_hits += usize::from(weighted == Some(r.true_species.as_str()));
        }
    }
    let pct = |h: usize| 100.0 * h as f64 / n as f64;
    Ok(GeoPriorReport {
        n_images: n,
        baseline_top1: pct(base_hits),
        weighted_top1: pct(weighted_hits),
        delta: 100.0 * (weighted_hits as f64 - base_hits as f64) / n as f64,
    })
}

/// A fitted linear model `y = x . weights + intercept`.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    pub weights: Array1<f64>,
    pub intercept: f64,
    pub alpha: f64,
}

impl RidgeFit {
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        x.dot(&self.weights) + self.intercept
    }
}

fn solve_normal_equations(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    alpha: f64,
) -> Result<Array1<f64>> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!(
            "{} rows but {} targets",
            x.nrows(),
            y.len()
        )));
    }
    let d = x.ncols();
    let mut gram = x.t().dot(&x);
    gram.diag_mut().mapv_inplace(|v| v + alpha);
    let rhs = x.t().dot(&y);
    let a = DMatrix::from_fn(d, d, |i, j| gram[[i, j]]);
    let b = DVector::from_iterator(d, rhs.iter().copied());
    let chol = a.cholesky().ok_or(Error::Singular)?;
    let w = chol.solve(&b);
    Ok(Array1::from_iter(w.iter().copied()))
}

/// Ridge regression with an unpenalized intercept: minimizes
/// `|y - Xw - b|^2 + alpha |w|^2`.
pub fn ridge_fit(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, alpha: f64) -> Result<RidgeFit> {
    if x.nrows() == 0 {
        return Err(Error::Empty("no rows to fit".into()));
    }
    let x_mean = x.mean_axis(Axis(0)).expect("non-empty");
    let y_mean = y.mean().expect("non-empty");
    let xc = &x - &x_mean;
    let yc = &y - y_mean;
    let weights = solve_normal_equations(xc.view(), yc.view(), alpha)?;
    let intercept = y_mean - x_mean.dot(&weights);
    Ok(RidgeFit {
        weights,
        intercept,
        alpha,
    })
}

/// Ridge regression through the origin: `(X'X + alpha I)^-1 X'y`.
pub fn ridge_fit_no_intercept(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    alpha: f64,
) -> Result<RidgeFit> {
    Ok(RidgeFit {
        weights: solve_normal_equations(x, y, alpha)?,
        intercept: 0.0,
        alpha,
    })
}

/// Coefficient of determination. With constant targets it is 1 for an
/// exact prediction and 0 otherwise.
pub fn r2_score(y_true: ArrayView1<'_, f64>, y_pred: ArrayView1<'_, f64>) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Shape("prediction and target lengths differ".into()));
    }
    let mean = y_true
        .mean()
        .ok_or_else(|| Error::Empty("no targets".into()))?;
    let ss_res: f64 = y_true
        .iter()
        .zip(&y_pred)
        .map(|(t, p)| (t - p).powi(2))
        .sum();
    let ss_tot: f64 = y_true.iter().map(|t| (t - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Ok(if ss_res == 0.0 { 1.0 } else { 0.0 });
    }
    Ok(1.0 - ss_res / ss_tot)
}

pub const RIDGE_ALPHAS: [f64; 3] = [0.1, 1.0, 10.0];
pub const CV_FOLDS: usize = 5;

/// Picks alpha by k-fold mean validation R^2 (row `i` in fold `i % k`),
/// preferring the smaller alpha on ties, then refits on all rows.
pub fn ridge_cv(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    alphas: &[f64],
    k: usize,
) -> Result<RidgeFit> {
    let n = x.nrows();
    if k < 2 || n < k {
        return Err(Error::InvalidArgument(format!(
            "{k}-fold validation needs k >= 2 and at least k rows, got {n}"
        )));
    }
    if alphas.is_empty() {
        return Err(Error::InvalidArgument("no alphas to choose from".into()));
    }
    let mut sorted = alphas.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let mut best: Option<(f64, f64)> = None;
    for &alpha in &sorted {
        let mut total = 0.0;
        for fold in 0..k {
            let train: Vec<usize> = (0..n).filter(|i| i % k != fold).collect();
            let valid: Vec<usize> = (0..n).filter(|i| i % k == fold).collect();
            let fit = ridge_fit(
                x.select(Axis(0), &train).view(),
                y.select(Axis(0), &train).view(),
                alpha,
            )?;
            let xv = x.select(Axis(0), &valid);
            total += r2_score(
                y.select(Axis(0), &valid).view(),
                fit.predict(xv.view()).view(),
            )?;
        }
        let score = total / k as f64;
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((alpha, score));
        }
    }
    ridge_fit(x, y, best.expect("alphas non-empty").0)
}

/// Rescales each column to `[0, 1]` using `reference` min and max.
/// Constant reference columns map to 0; other values are not clamped.
pub fn minmax_normalize(reference: ArrayView2<'_, f64>, x: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
        let r = reference.column(j);
        let lo = r.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            col.mapv_inplace(|v| (v - lo) / (hi - lo));
        } else {
            col.fill(0.0);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerR2 {
    pub layer: usize,
    pub alpha: f64,
    pub r2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeoFeatureReport {
    pub per_layer: Vec<LayerR2>,
    pub mean_r2: f64,
}

/// Probes location features with a ridge regression per target layer.
///
/// `encoder` maps locations to feature rows. Features are taken at the
/// centers of the target raster's cells and min-max scaled with statistics
/// from the training cells. For each layer, alpha is picked by
/// cross-validation on the training cells (cells missing in that layer are
/// dropped) and R^2 is reported on the test cells.
pub fn geo_feature_task<F>(
    encoder: F,
    layers: &[EnvGrid],
    train_cells: &[usize],
    test_cells: &[usize],
    alphas: &[f64],
) -> Result<GeoFeatureReport>
where
    F: Fn(&[GeoCoord]) -> Result<Array2<f64>>,
{
    let first = layers
        .first()
        .ok_or_else(|| Error::Empty("no target layers".into()))?;
    if train_cells.is_empty() || test_cells.is_empty() {
        return Err(Error::Empty(
            "train and test splits must be non-empty".into(),
        ));
    }
    let train_set: HashSet<usize> = train_cells.iter().copied().collect();
    if test_cells.iter().any(|c| train_set.contains(c)) {
        return Err(Error::InvalidArgument(
            "train and test cells overlap".into(),
        ));
    }
    for g in layers {
        if (
            g.n_rows, g.n_cols, g.lon_min, g.lon_max, g.lat_min, g.lat_max,
        ) != (
            first.n_rows,
            first.n_cols,
            first.lon_min,
            first.lon_max,
            first.lat_min,
            first.lat_max,
        ) {
            return Err(Error::Shape(
                "target layers disagree in shape or bounds".into(),
            ));
        }
    }
    let centers = |cells: &[usize]| {
        cells
            .iter()
            .map(|&c| first.cell_center(c))
            .collect::<Result<Vec<_>>>()
    };
    let f_train = encoder(&centers(train_cells)?)?;
    let f_test = encoder(&centers(test_cells)?)?;
    if f_train.nrows() != train_cells.len()
        || f_test.nrows() != test_cells.len()
        || f_train.ncols() != f_test.ncols()
    {
        return Err(Error::Shape(
            "encoder returned the wrong number of rows or columns".into(),
        ));
    }
    let x_train = minmax_normalize(f_train.view(), f_train.view());
    let x_test = minmax_normalize(f_train.view(), f_test.view());

    let per_layer = layers
        .par_iter()
        .enumerate()
        .map(|(li, g)| {
            let pick = |cells: &[usize]| -> (Vec<usize>, Vec<f64>) {
                cells
                    .iter()
                    .enumerate()
                    .filter_map(|(row, &c)| g.values[c].map(|v| (row, v)))
                    .unzip()
            };
            let (tr_rows, tr_y) = pick(train_cells);
            let (te_rows, te_y) = pick(test_cells);
            if tr_rows.is_empty() || te_rows.is_empty() {
                return Err(Error::Empty(format!(
                    "layer {li} has no values in one of the splits"
                )));
            }
            let fit = ridge_cv(
                x_train.select(Axis(0), &tr_rows).view(),
                Array1::from(tr_y).view(),
                alphas,
                CV_FOLDS,
            )?;
            let pred = fit.predict(x_test.select(Axis(0), &te_rows).view());
            Ok(LayerR2 {
                layer: li,
                alpha: fit.alpha,
                r2: r2_score(Array1::from(te_y).view(), pred.view())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_r2 = per_layer.iter().map(|l| l.r2).sum::<f64>() / per_layer.len() as f64;
    Ok(GeoFeatureReport { per_layer, mean_r2 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridBaselineMode {
    /// Cell count divided by the species' largest cell count.
    Ratio,
    /// 1 where the species was ever observed in the cell.
    Indicator,
}

/// Observation counts per grid cell and species.
#[derive(Debug, Clone, PartialEq)]
pub struct GridBaselineModel {
    grid: GridSpec,
    species: Vec<String>,
    counts: HashMap<(usize, usize), u32>,
    max_count: Vec<u32>,
}

impl GridBaselineModel {
    pub fn fit(o: &ObservationSet, grid: GridSpec) -> Self {
        let mut counts: HashMap<(usize, usize), u32> = HashMap::new();
        let mut max_count = vec![0u32; o.n_species()];
        for r in o.records() {
            let n = counts
                .entry((grid.cell_of(r.coord), r.species))
                .or_insert(0);
            *n += 1;
            max_count[r.species] = max_count[r.species].max(*n);
        }
        Self {
            grid,
            species: o.species_ids().to_vec(),
            counts,
            max_count,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn count(&self, cell: usize, species: usize) -> u32 {
        self.counts.get(&(cell, species)).copied().unwrap_or(0)
    }

    pub fn max_count(&self, species: usize) -> u32 {
        self.max_count[species]
    }

    pub fn predict(&self, c: GeoCoord, species: usize, mode: GridBaselineMode) -> f64 {
        let n = self.count(self.grid.cell_of(c), species);
        match mode {
            _ if n == 0 => 0.0,
            GridBaselineMode::Ratio => f64::from(n) / f64::from(self.max_count[species]),
            GridBaselineMode::Indicator => 1.0,
        }
    }

    pub fn predictor(&self, mode: GridBaselineMode) -> GridPredictor<'_> {
        GridPredictor { model: self, mode }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GridPredictor<'a> {
    model: &'a GridBaselineModel,
    mode: GridBaselineMode,
}

impl Predictor for GridPredictor<'_> {
    fn species_ids(&self) -> &[String] {
        &self.model.species
    }

    fn predict(&self, coords: &[GeoCoord]) -> Result<Array2<f64>> {
        let s = self.model.species.len();
        let mut out = Array2::zeros((coords.len(), s));
        for (mut row, &c) in out.outer_iter_mut().zip(coords) {
            for j in 0..s {
                row[j] = self.model.predict(c, j, self.mode);
            }
        }
        Ok(out)
    }
}

/// Threshold maximizing F1 when predicting positive for `score >= t`.
///
/// Candidates are 0, 1 and the midpoints between consecutive distinct
/// scores; ties go to the smallest candidate.
pub fn f1_max_threshold(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape("score and label lengths differ".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::DegenerateLabels(
            "need both positive and negative labels".into(),
        ));
    }
    let mut uniq: Vec<f64> = scores.to_vec();
    uniq.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    uniq.dedup();
    let mut candidates = vec![0.0];
    candidates.extend(uniq.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    candidates.push(1.0);
    candidates.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));

    let mut best = (candidates[0], f64::NEG_INFINITY);
    for &t in &candidates {
        let f1 = f1_at(scores, labels, t);
        if f1 > best.1 {
            best = (t, f1);
        }
    }
    Ok(best.0)
}

/// F1 of predicting positive for `score >= t`.
pub fn f1_at(scores: &[f64], labels: &[bool], t: f64) -> f64 {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= t, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
    }
}
