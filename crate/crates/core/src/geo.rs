//! Geographic coordinates, the sinusoidal location encoding and the
//! equal-angle lon/lat grid used for binning and evaluation.

use std::f64::consts::PI;
use std::fmt;

use crate::{Error, Result};

/// A point on the globe in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoCoord {
    lon: f64,
    lat: f64,
}

impl GeoCoord {
    /// Rejects non-finite values and anything outside
    /// `[-180, 180] x [-90, 90]`.
    pub fn new(lon: f64, lat: f64) -> Result<Self> {
        if lon.is_finite()
            && lat.is_finite()
            && (-180.0..=180.0).contains(&lon)
            && (-90.0..=90.0).contains(&lat)
        {
            Ok(Self { lon, lat })
        } else {
            Err(Error::InvalidCoord { lon, lat })
        }
    }

    #[inline]
    pub fn lon(&self) -> f64 {
        self.lon
    }

    #[inline]
    pub fn lat(&self) -> f64 {
        self.lat
    }
}

impl fmt::Display for GeoCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.lon, self.lat)
    }
}

/// Number of values produced by [`encode_location`].
pub const COORD_ENCODING_DIM: usize = 4;

/// Sinusoidal encoding of a location.
///
/// Longitude and latitude are first rescaled to `[-1, 1]` by dividing by 180
/// and 90, then mapped to `[sin(pi lon), cos(pi lon), sin(pi lat), cos(pi lat)]`
/// so that the two sides of the antimeridian encode to the same vector.
pub fn encode_location(c: GeoCoord) -> [f64; COORD_ENCODING_DIM] {
    let (s_lon, c_lon) = (PI * c.lon / 180.0).sin_cos();
    let (s_lat, c_lat) = (PI * c.lat / 90.0).sin_cos();
    [s_lon, c_lon, s_lat, c_lat]
}

/// Which features make up a network input vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputLayout {
    /// The four-value coordinate encoding.
    Coords,
    /// `E` normalized environmental covariates.
    Env(usize),
    /// `E` covariates followed by the four-value coordinate encoding.
    EnvPlusCoords(usize),
}

impl InputLayout {
    pub fn dim(&self) -> usize {
        match *self {
            InputLayout::Coords => COORD_ENCODING_DIM,
            InputLayout::Env(e) => e,
            InputLayout::EnvPlusCoords(e) => e + COORD_ENCODING_DIM,
        }
    }
}

/// How network inputs are built from a location.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InputMode {
    Coords,
    Env,
    EnvPlusCoords,
}

impl InputMode {
    /// Layout for a raster stack with `n_env` layers.
    pub fn layout(&self, n_env: usize) -> InputLayout {
        match self {
            InputMode::Coords => InputLayout::Coords,
            InputMode::Env => InputLayout::Env(n_env),
            InputMode::EnvPlusCoords => InputLayout::EnvPlusCoords(n_env),
        }
    }

    pub fn needs_env(&self) -> bool {
        !matches!(self, InputMode::Coords)
    }

    pub fn code(&self) -> u8 {
        match self {
            InputMode::Coords => 0,
            InputMode::Env => 1,
            InputMode::EnvPlusCoords => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(InputMode::Coords),
            1 => Some(InputMode::Env),
            2 => Some(InputMode::EnvPlusCoords),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            InputMode::Coords => "coords",
            InputMode::Env => "env",
            InputMode::EnvPlusCoords => "env+coords",
        }
    }
}

impl std::str::FromStr for InputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coords" => Ok(InputMode::Coords),
            "env" => Ok(InputMode::Env),
            "env+coords" | "env_plus_coords" => Ok(InputMode::EnvPlusCoords),
            other => Err(Error::InvalidArgument(format!(
                "unknown input mode `{other}`"
            ))),
        }
    }
}

/// A single network input vector tagged with its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedInput {
    layout: InputLayout,
    values: Vec<f64>,
}

impl EncodedInput {
    pub fn new(layout: InputLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.dim() {
            return Err(Error::Shape(format!(
                "layout {layout:?} expects {} values, got {}",
                layout.dim(),
                values.len()
            )));
        }
        if layout == InputLayout::Coords && values.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(
                "coordinate encodings must lie in [-1, 1]".into(),
            ));
        }
        Ok(Self { layout, values })
    }

    pub fn from_coord(c: GeoCoord) -> Self {
        Self {
            layout: InputLayout::Coords,
            values: encode_location(c).to_vec(),
        }
    }

    pub fn layout(&self) -> InputLayout {
        self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Equal-angle partition of the globe into `2r x r` rectangular cells.
///
/// Cells are half-open `[lo, hi)` except the last column and row, which are
/// closed so that `lon = 180` and `lat = 90` have an owner. Indices are
/// row-major with row 0 at the south pole and column 0 at `lon = -180`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridSpec {
    resolution: usize,
}

impl GridSpec {
    pub fn new(resolution: usize) -> Result<Self> {
        if resolution == 0 {
            return Err(Error::InvalidResolution);
        }
        Ok(Self { resolution })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn n_lon(&self) -> usize {
        2 * self.resolution
    }

    pub fn n_lat(&self) -> usize {
        self.resolution
    }

    pub fn n_cells(&self) -> usize {
        self.n_lon() * self.n_lat()
    }

    fn cell_width(&self) -> f64 {
        360.0 / self.n_lon() as f64
    }

    fn cell_height(&self) -> f64 {
        180.0 / self.n_lat() as f64
    }

    /// Row-major index of the cell containing `c`.
    pub fn cell_of(&self, c: GeoCoord) -> usize {
        let col = (((c.lon + 180.0) / self.cell_width()).floor() as usize).min(self.n_lon() - 1);
        let row = (((c.lat + 90.0) / self.cell_height()).floor() as usize).min(self.n_lat() - 1);
        row * self.n_lon() + col
    }

    /// Center of the cell rectangle.
    pub fn cell_centroid(&self, index: usize) -> Result<GeoCoord> {
        if index >= self.n_cells() {
            return Err(Error::CellOutOfRange {
                index,
                n_cells: self.n_cells(),
            });
        }
        let row = index / self.n_lon();
        let col = index % self.n_lon();
        let lon = -180.0 + (col as f64 + 0.5) * self.cell_width();
        let lat = -90.0 + (row as f64 + 0.5) * self.cell_height();
        GeoCoord::new(lon, lat)
    }

    /// Centroids of every cell in index order.
    pub fn centroids(&self) -> Vec<GeoCoord> {
        (0..self.n_cells())
            .map(|i| self.cell_centroid(i).expect("index in range"))
            .collect()
    }
}

/// Free-function form of [`GridSpec::cell_of`].
pub fn cell_of(c: GeoCoord, g: &GridSpec) -> usize {
    g.cell_of(c)
}

/// Free-function form of [`GridSpec::cell_centroid`].
pub fn cell_centroid(index: usize, g: &GridSpec) -> Result<GeoCoord> {
    g.cell_centroid(index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn coord_range_is_enforced() {
        assert!(GeoCoord::new(180.0, -90.0).is_ok());
        assert!(GeoCoord::new(180.1, 0.0).is_err());
        assert!(GeoCoord::new(0.0, 95.0).is_err());
        assert!(GeoCoord::new(f64::NAN, 0.0).is_err());
        assert!(GeoCoord::new(0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn encoding_examples() {
        let e = encode_location(GeoCoord::new(0.0, 0.0).unwrap());
        assert!(close(&e, &[0.0, 1.0, 0.0, 1.0]));
        let e = encode_location(GeoCoord::new(90.0, -45.0).unwrap());
        assert!(close(&e, &[1.0, 0.0, -1.0, 0.0]));
        let e = encode_location(GeoCoord::new(180.0, 0.0).unwrap());
        assert!(close(&e, &[0.0, -1.0, 0.0, 1.0]));
    }

    #[test]
    fn antimeridian_wraps() {
        let a = encode_location(GeoCoord::new(-180.0, 12.5).unwrap());
        let b = encode_location(GeoCoord::new(180.0, 12.5).unwrap());
        assert!(close(&a, &b));
    }

    #[test]
    fn encoded_input_layout_checks() {
        assert!(EncodedInput::new(InputLayout::Coords, vec![0.0; 3]).is_err());
        assert!(EncodedInput::new(InputLayout::Coords, vec![0.0, 2.0, 0.0, 0.0]).is_err());
        assert!(EncodedInput::new(InputLayout::EnvPlusCoords(20), vec![0.0; 24]).is_ok());
        assert_eq!(InputLayout::Env(7).dim(), 7);
    }

    #[test]
    fn grid_corner_examples() {
        let g = GridSpec::new(1).unwrap();
        assert_eq!(g.cell_of(GeoCoord::new(-180.0, -90.0).unwrap()), 0);
        assert_eq!(g.cell_of(GeoCoord::new(180.0, 90.0).unwrap()), 1);
        assert_eq!(
            g.cell_centroid(0).unwrap(),
            GeoCoord::new(-90.0, 0.0).unwrap()
        );
        assert_eq!(
            g.cell_centroid(1).unwrap(),
            GeoCoord::new(90.0, 0.0).unwrap()
        );
        assert!(g.cell_centroid(2).is_err());
        assert!(GridSpec::new(0).is_err());
    }

    #[test]
    fn grid_cell_by_enumeration() {
        // Brute force: scan the explicit cell rectangles of the 4x2 grid.
        let g = GridSpec::new(2).unwrap();
        let c = GeoCoord::new(1.0, 1.0).unwrap();
        let mut owner = None;
        for row in 0..2 {
            for col in 0..4 {
                let (lon0, lon1) = (-180.0 + 90.0 * col as f64, -90.0 + 90.0 * col as f64);
                let (lat0, lat1) = (-90.0 + 90.0 * row as f64, 90.0 * row as f64);
                if c.lon() >= lon0 && c.lon() < lon1 && c.lat() >= lat0 && c.lat() < lat1 {
                    assert!(owner.is_none());
                    owner = Some(row * 4 + col);
                }
            }
        }
        assert_eq!(owner, Some(6));
        assert_eq!(g.cell_of(c), 6);
    }

    #[test]
    fn centroid_round_trip_resolution_3() {
        let g = GridSpec::new(3).unwrap();
        for i in 0..g.n_cells() {
            assert_eq!(g.cell_of(g.cell_centroid(i).unwrap()), i);
        }
    }

    proptest! {
        #[test]
        fn encoding_is_on_unit_circles(lon in -180.0f64..=180.0, lat in -90.0f64..=90.0) {
            let e = encode_location(GeoCoord::new(lon, lat).unwrap());
            prop_assert!(e.iter().all(|v| (-1.0..=1.0).contains(v)));
            prop_assert!((e[0] * e[0] + e[1] * e[1] - 1.0).abs() < 1e-6);
            prop_assert!((e[2] * e[2] + e[3] * e[3] - 1.0).abs() < 1e-6);
        }

        #[test]
        fn cell_of_is_total(lon in -180.0f64..=180.0, lat in -90.0f64..=90.0, res in 1usize..40) {
            let g = GridSpec::new(res).unwrap();
            let c = GeoCoord::new(lon, lat).unwrap();
            let i = g.cell_of(c);
            prop_assert!(i < g.n_cells());
            let centre = g.cell_centroid(i).unwrap();
            prop_assert!((centre.lon() - lon).abs() <= 180.0 / res as f64 + 1e-9);
            prop_assert!((centre.lat() - lat).abs() <= 90.0 / res as f64 + 1e-9);
        }
    }
}
