//! Toy range-mapping task: species confined to disjoint disks in lon/lat
//! space, with presence-only samples for training and a dense labelled
//! grid for evaluation.

use rand::Rng;

use crate::data::ObservationSet;
use crate::eval::EvalGrid;
use crate::geo::{GeoCoord, GridSpec};
use crate::rng::rng_from_seed;
use crate::{Error, Result};

/// A disk in the lon/lat plane, in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disk {
    pub lon: f64,
    pub lat: f64,
    pub radius: f64,
}

impl Disk {
    pub fn contains(&self, c: GeoCoord) -> bool {
        (c.lon() - self.lon).hypot(c.lat() - self.lat) <= self.radius
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> GeoCoord {
        let r = self.radius * rng.gen::<f64>().sqrt();
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        let lon = (self.lon + r * theta.cos()).clamp(-180.0, 180.0);
        let lat = (self.lat + r * theta.sin()).clamp(-90.0, 90.0);
        GeoCoord::new(lon, lat).expect("clamped into range")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiskTask {
    pub species: Vec<String>,
    pub disks: Vec<Disk>,
}

impl Default for DiskTask {
    /// Three disjoint disks of radius 35 degrees.
    fn default() -> Self {
        Self {
            species: vec!["disk_a".into(), "disk_b".into(), "disk_c".into()],
            disks: vec![
                Disk {
                    lon: -100.0,
                    lat: 40.0,
                    radius: 35.0,
                },
                Disk {
                    lon: 20.0,
                    lat: 0.0,
                    radius: 35.0,
                },
                Disk {
                    lon: 120.0,
                    lat: -30.0,
                    radius: 35.0,
                },
            ],
        }
    }
}

impl DiskTask {
    pub fn new(species: Vec<String>, disks: Vec<Disk>) -> Result<Self> {
        if species.len() != disks.len() || species.is_empty() {
            return Err(Error::InvalidArgument(
                "one disk per species is required".into(),
            ));
        }
        for (i, a) in disks.iter().enumerate() {
            if a.radius.is_nan() || a.radius <= 0.0 {
                return Err(Error::InvalidArgument(
                    "disk radius must be positive".into(),
                ));
            }
            for b in &disks[i + 1..] {
                if (a.lon - b.lon).hypot(a.lat - b.lat) <= a.radius + b.radius {
                    return Err(Error::InvalidArgument("disks overlap".into()));
                }
            }
        }
        Ok(Self { species, disks })
    }

    /// `n` presence records, species assigned round-robin, locations
    /// uniform within each disk.
    pub fn observations(&self, n: usize, seed: u64) -> ObservationSet {
        let mut rng = rng_from_seed(seed);
        let k = self.species.len();
        ObservationSet::from_pairs((0..n).map(|i| {
            let s = i % k;
            (self.species[s].as_str(), self.disks[s].sample(&mut rng))
        }))
    }

    /// Every cell of the grid labelled for every species: present where the
    /// centroid lies in the species' disk.
    pub fn eval_grid(&self, resolution: usize) -> Result<EvalGrid> {
        let grid = GridSpec::new(resolution)?;
        let centroids = grid.centroids();
        let labels = self
            .disks
            .iter()
            .map(|d| {
                centroids
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| (i, d.contains(c)))
                    .collect()
            })
            .collect();
        EvalGrid::new(grid, self.species.clone(), labels)
    }

    /// Ground-truth presence at `c`, one entry per species.
    pub fn truth(&self, c: GeoCoord) -> Vec<f64> {
        self.disks
            .iter()
            .map(|d| f64::from(u8::from(d.contains(c))))
            .collect()
    }
}
