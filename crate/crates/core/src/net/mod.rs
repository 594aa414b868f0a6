//! The location encoder and multi-label classifier head.
//!
//! The encoder is a fully connected residual network: one linear layer with a
//! ReLU, followed by `n_residual_layers` blocks of
//! `linear -> ReLU -> dropout -> linear -> ReLU` added back onto the block
//! input. The head is a single linear layer with a sigmoid per species.
//!
//! Setting [`EncoderKind::Identity`] removes the encoder altogether, which
//! gives the logistic-regression baseline: the head acts directly on the
//! encoded input.
//!
//! Everything here is generic over [`Scalar`] so the same code trains in
//! `f32` and runs gradient checks in `f64`.

mod adam;
mod forward;
mod model_file;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use forward::{backward, forward, predict, ForwardPass, Mode};
pub use model_file::{load_model, save_model, SinrModel, MODEL_FORMAT_VERSION, MODEL_MAGIC};
pub(crate) use model_file::{
    read_config_block, read_exact, read_tensors, read_u32, read_u64, write_config_block,
    write_tensors,
};

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD, NdFloat};
use rand::Rng;

use crate::rng::rng_from_seed;
use crate::{Error, Result};

/// Floating point type the network can run in.
pub trait Scalar: NdFloat + num_traits::Float {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    /// Linear layer plus residual blocks.
    Residual,
    /// No encoder; features are the raw inputs.
    Identity,
}

impl EncoderKind {
    pub(crate) fn code(self) -> u8 {
        match self {
            EncoderKind::Residual => 0,
            EncoderKind::Identity => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(EncoderKind::Residual),
            1 => Some(EncoderKind::Identity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub n_residual_layers: usize,
    pub n_species: usize,
    pub dropout_p: f32,
    pub seed: u64,
    pub encoder: EncoderKind,
}

impl NetConfig {
    /// Residual encoder with 256 hidden units, 4 residual blocks and
    /// dropout 0.5.
    pub fn new(input_dim: usize, n_species: usize) -> Self {
        Self {
            input_dim,
            hidden_dim: 256,
            n_residual_layers: 4,
            n_species,
            dropout_p: 0.5,
            seed: 0,
            encoder: EncoderKind::Residual,
        }
    }

    /// Logistic regression: the head applied to the encoded input.
    pub fn logistic_regression(input_dim: usize, n_species: usize) -> Self {
        Self {
            n_residual_layers: 0,
            dropout_p: 0.0,
            encoder: EncoderKind::Identity,
            ..Self::new(input_dim, n_species)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidConfig("input_dim must be positive".into()));
        }
        if self.n_species == 0 {
            return Err(Error::InvalidConfig("n_species must be positive".into()));
        }
        if self.encoder == EncoderKind::Residual && self.hidden_dim == 0 {
            return Err(Error::InvalidConfig("hidden_dim must be positive".into()));
        }
        if self.encoder == EncoderKind::Identity && self.n_residual_layers != 0 {
            return Err(Error::InvalidConfig(
                "an identity encoder has no residual layers".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::InvalidConfig("dropout_p must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Dimension of the encoder output `f(x)`.
    pub fn feature_dim(&self) -> usize {
        match self.encoder {
            EncoderKind::Residual => self.hidden_dim,
            EncoderKind::Identity => self.input_dim,
        }
    }
}

/// A fully connected layer; `weight` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            weight: Array2::zeros((n_out, n_in)),
            bias: Array1::zeros(n_out),
        }
    }

    /// Weights uniform in `+-1/sqrt(fan_in)`, zero bias.
    fn init<R: Rng + ?Sized>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (n_in as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((n_out, n_in), || {
            T::from_f64(rng.gen_range(-bound..bound))
        });
        Self {
            weight,
            bias: Array1::zeros(n_out),
        }
    }

    fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Linear<U> {
        Linear {
            weight: self.weight.mapv(&f),
            bias: self.bias.mapv(&f),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock<T> {
    pub first: Linear<T>,
    pub second: Linear<T>,
}

/// All learnable weights: the encoder (`input`, `blocks`) and the head.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams<T> {
    pub input: Option<Linear<T>>,
    pub blocks: Vec<ResidualBlock<T>>,
    pub head: Linear<T>,
}

impl<T: Scalar> NetParams<T> {
    /// All-zero parameters shaped for `cfg`.
    pub fn zeros(cfg: &NetConfig) -> Self {
        let h = cfg.hidden_dim;
        let (input, blocks) = match cfg.encoder {
            EncoderKind::Residual => (
                Some(Linear::zeros(cfg.input_dim, h)),
                (0..cfg.n_residual_layers)
                    .map(|_| ResidualBlock {
                        first: Linear::zeros(h, h),
                        second: Linear::zeros(h, h),
                    })
                    .collect(),
            ),
            EncoderKind::Identity => (None, Vec::new()),
        };
        Self {
            input,
            blocks,
            head: Linear::zeros(cfg.feature_dim(), cfg.n_species),
        }
    }

    /// Every tensor in serialization order: input weight and bias, then
    /// each block's first weight, first bias, second weight, second bias,
    /// then the head weight and bias.
    pub fn tensors(&self) -> Vec<ArrayViewD<'_, T>> {
        let mut layers: Vec<&Linear<T>> = Vec::with_capacity(2 + 2 * self.blocks.len());
        layers.extend(self.input.as_ref());
        for b in &self.blocks {
            layers.push(&b.first);
            layers.push(&b.second);
        }
        layers.push(&self.head);
        layers
            .into_iter()
            .flat_map(|l| [l.weight.view().into_dyn(), l.bias.view().into_dyn()])
            .collect()
    }

    /// Mutable views in the same order as [`NetParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, T>> {
        let mut out = Vec::with_capacity(4 + 4 * self.blocks.len());
        if let Some(l) = &mut self.input {
            out.push(l.weight.view_mut().into_dyn());
            out.push(l.bias.view_mut().into_dyn());
        }
        for b in &mut self.blocks {
            out.push(b.first.weight.view_mut().into_dyn());
            out.push(b.first.bias.view_mut().into_dyn());
            out.push(b.second.weight.view_mut().into_dyn());
            out.push(b.second.bias.view_mut().into_dyn());
        }
        out.push(self.head.weight.view_mut().into_dyn());
        out.push(self.head.bias.view_mut().into_dyn());
        out
    }

    pub fn n_values(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Element-wise conversion to another scalar type.
    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U + Copy) -> NetParams<U> {
        NetParams {
            input: self.input.as_ref().map(|l| l.map(f)),
            blocks: self
                .blocks
                .iter()
                .map(|b| ResidualBlock {
                    first: b.first.map(f),
                    second: b.second.map(f),
                })
                .collect(),
            head: self.head.map(f),
        }
    }

    pub fn cast<U: Scalar>(&self) -> NetParams<U> {
        self.map(|v| U::from_f64(v.to_f64()))
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &NetParams<T>) -> Result<()> {
        let b = other.tensors();
        let mut a = self.tensors_mut();
        if a.len() != b.len() || a.iter().zip(&b).any(|(x, y)| x.shape() != y.shape()) {
            return Err(Error::Shape("parameter sets have different shapes".into()));
        }
        for (x, y) in a.iter_mut().zip(&b) {
            *x += y;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Whether the tensor shapes agree with `cfg`.
    pub fn matches(&self, cfg: &NetConfig) -> bool {
        let expected = NetParams::<T>::zeros(cfg);
        let a = self.tensors();
        let b = expected.tensors();
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.shape() == y.shape())
    }
}

/// Deterministic initialization from `cfg.seed`.
pub fn init_params<T: Scalar>(cfg: &NetConfig) -> Result<NetParams<T>> {
    cfg.validate()?;
    let mut rng = rng_from_seed(cfg.seed);
    let h = cfg.hidden_dim;
    let (input, blocks) = match cfg.encoder {
        EncoderKind::Residual => {
            let input = Linear::init(cfg.input_dim, h, &mut rng);
            let blocks = (0..cfg.n_residual_layers)
                .map(|_| ResidualBlock {
                    first: Linear::init(h, h, &mut rng),
                    second: Linear::init(h, h, &mut rng),
                })
                .collect();
            (Some(input), blocks)
        }
        EncoderKind::Identity => (None, Vec::new()),
    };
    let head = Linear::init(cfg.feature_dim(), cfg.n_species, &mut rng);
    Ok(NetParams {
        input,
        blocks,
        head,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(seed: u64) -> NetConfig {
        NetConfig {
            hidden_dim: 8,
            n_residual_layers: 2,
            seed,
            ..NetConfig::new(4, 3)
        }
    }

    #[test]
    fn config_validation() {
        assert!(NetConfig::new(4, 10).validate().is_ok());
        assert!(NetConfig {
            dropout_p: 1.0,
            ..NetConfig::new(4, 10)
        }
        .validate()
        .is_err());
        assert!(NetConfig {
            hidden_dim: 0,
            ..NetConfig::new(4, 10)
        }
        .validate()
        .is_err());
        assert!(NetConfig::new(0, 10).validate().is_err());
        assert!(NetConfig::new(4, 0).validate().is_err());
        assert!(NetConfig::logistic_regression(20, 5).validate().is_ok());
    }

    #[test]
    fn init_is_deterministic() {
        let a: NetParams<f32> = init_params(&small_cfg(3)).unwrap();
        let b: NetParams<f32> = init_params(&small_cfg(3)).unwrap();
        assert_eq!(a, b);
        let c: NetParams<f32> = init_params(&small_cfg(4)).unwrap();
        assert_ne!(a, c);
        assert!(a.matches(&small_cfg(0)));
        assert!(a
            .blocks
            .iter()
            .all(|b| b.first.bias.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn init_variance_matches_scheme() {
        // uniform(-b, b) has variance b^2 / 3; the first layer has fan-in 4
        // but we want many samples, so check a 256-wide block layer.
        let cfg = NetConfig {
            seed: 11,
            ..NetConfig::new(4, 2)
        };
        let p: NetParams<f64> = init_params(&cfg).unwrap();
        let w = &p.blocks[0].first.weight;
        let n = w.len() as f64;
        let mean = w.sum() / n;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let expected = 1.0 / (3.0 * 256.0);
        assert!(
            (var / expected - 1.0).abs() < 0.2,
            "var {var} vs {expected}"
        );

        let w0 = &p.input.as_ref().unwrap().weight;
        let n0 = w0.len() as f64;
        let var0 = w0.iter().map(|v| v * v).sum::<f64>() / n0;
        assert!(
            (var0 / (1.0 / 12.0) - 1.0).abs() < 0.2,
            "first layer var {var0}"
        );
    }

    #[test]
    fn tensor_order_and_count() {
        let cfg = small_cfg(0);
        let p: NetParams<f32> = NetParams::zeros(&cfg);
        let shapes: Vec<Vec<usize>> = p.tensors().iter().map(|t| t.shape().to_vec()).collect();
        assert_eq!(shapes.len(), 2 + 4 * 2 + 2);
        assert_eq!(shapes[0], vec![8, 4]);
        assert_eq!(shapes[1], vec![8]);
        assert_eq!(shapes[10], vec![3, 8]);
        assert_eq!(p.n_values(), 8 * 4 + 8 + 2 * 2 * (64 + 8) + 3 * 8 + 3);

        let lr = NetConfig::logistic_regression(20, 5);
        let q: NetParams<f32> = NetParams::zeros(&lr);
        assert_eq!(q.tensors().len(), 2);
        assert_eq!(q.head.weight.dim(), (5, 20));
    }
}
