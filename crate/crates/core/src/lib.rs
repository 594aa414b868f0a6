//! Spatial implicit neural representations (SINRs) for joint species range
//! estimation from presence-only observations.
//!
//! The crate is organised bottom-up:
//!
//! * [`geo`]: coordinates, the sinusoidal input encoding and the equal-angle grid.
//! * [`net`]: the residual location encoder, the multi-label head, exact
//!   reverse-mode gradients, Adam and the model file format.
//! * [`losses`]: the presence-only losses ("assume negative" and maximum
//!   entropy variants).
//! * [`data`]: observation ingestion, filtering, subsampling, environmental
//!   rasters and batch sampling.
//! * [`train`]: the seeded training loop with checkpoint/resume.
//! * [`eval`]: average precision, the range-map, geo-prior and geo-feature
//!   protocols, ridge regression and the discretized-grid baseline.
//! * [`cli`]: the `sinr` command-line front end.

pub mod cli;
pub mod data;
mod error;
pub mod eval;
pub mod geo;
pub mod losses;
pub mod net;
pub mod rng;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
pub use geo::{encode_location, GeoCoord, GridSpec};
pub use losses::{LossConfig, LossVariant};
pub use net::{NetConfig, NetParams};
