use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;

use super::{Linear, NetConfig, NetParams, Scalar};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active.
    Train,
    /// Deterministic.
    Eval,
}

/// Activations saved by [`forward`] and consumed by [`backward`].
#[derive(Debug, Clone)]
struct BlockCache<T> {
    input: Array2<T>,
    hidden: Array2<T>,
    /// Inverted-dropout multipliers (`0` or `1/(1-p)`); `None` when dropout
    /// is off.
    mask: Option<Array2<T>>,
    residual: Array2<T>,
}

/// Output of a forward pass together with what backward needs.
#[derive(Debug, Clone)]
pub struct ForwardPass<T> {
    /// Encoder output `f(x)`, `n x k`.
    pub features: Array2<T>,
    /// Per-species probabilities, `n x S`.
    pub y_hat: Array2<T>,
    input: Array2<T>,
    /// Post-ReLU output of the first linear layer (residual encoder only).
    first: Option<Array2<T>>,
    blocks: Vec<BlockCache<T>>,
}

impl<T> ForwardPass<T> {
    pub fn batch_size(&self) -> usize {
        self.y_hat.nrows()
    }
}

fn affine<T: Scalar>(x: &ArrayView2<'_, T>, l: &Linear<T>) -> Array2<T> {
    let mut z = x.dot(&l.weight.t());
    z += &l.bias;
    z
}

fn relu_inplace<T: Scalar>(a: &mut Array2<T>) {
    a.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
}

fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Runs the encoder and head on a batch of encoded inputs (`n x input_dim`).
///
/// In [`Mode::Train`] dropout masks are drawn from `rng` and stored in the
/// returned pass so that [`backward`] differentiates the same function.
pub fn forward<T: Scalar, R: Rng + ?Sized>(
    params: &NetParams<T>,
    cfg: &NetConfig,
    x: ArrayView2<'_, T>,
    mode: Mode,
    rng: &mut R,
) -> Result<ForwardPass<T>> {
    if x.ncols() != cfg.input_dim {
        return Err(Error::Shape(format!(
            "input has {} columns, network expects {}",
            x.ncols(),
            cfg.input_dim
        )));
    }
    if !params.matches(cfg) {
        return Err(Error::Shape(
            "parameters do not match the configuration".into(),
        ));
    }
    let input = x.to_owned();
    let drop = cfg.dropout_p > 0.0 && mode == Mode::Train;
    let keep_scale = T::from_f64(1.0 / (1.0 - f64::from(cfg.dropout_p)));

    let (features, first, blocks) = match &params.input {
        None => (input.clone(), None, Vec::new()),
        Some(l0) => {
            let mut h = affine(&input.view(), l0);
            relu_inplace(&mut h);
            let first = h.clone();
            let mut caches = Vec::with_capacity(params.blocks.len());
            for block in &params.blocks {
                let mut hidden = affine(&h.view(), &block.first);
                relu_inplace(&mut hidden);
                let mask = if drop {
                    let p = f64::from(cfg.dropout_p);
                    let m = Array2::from_shape_simple_fn(hidden.raw_dim(), || {
                        if rng.gen::<f64>() < p {
                            T::zero()
                        } else {
                            keep_scale
                        }
                    });
                    Some(m)
                } else {
                    None
                };
                let dropped = match &mask {
                    Some(m) => &hidden * m,
                    None => hidden.clone(),
                };
                let mut residual = affine(&dropped.view(), &block.second);
                relu_inplace(&mut residual);
                let out = &h + &residual;
                caches.push(BlockCache {
                    input: h,
                    hidden,
                    mask,
                    residual,
                });
                h = out;
            }
            (h, Some(first), caches)
        }
    };

    let mut y_hat = affine(&features.view(), &params.head);
    y_hat.mapv_inplace(sigmoid);
    Ok(ForwardPass {
        features,
        y_hat,
        input,
        first,
        blocks,
    })
}

/// Eval-mode probabilities.
pub fn predict<T: Scalar>(
    params: &NetParams<T>,
    cfg: &NetConfig,
    x: ArrayView2<'_, T>,
) -> Result<Array2<T>> {
    let mut no_rng = rand::rngs::mock::StepRng::new(0, 0);
    Ok(forward(params, cfg, x, Mode::Eval, &mut no_rng)?.y_hat)
}

fn linear_grads<T: Scalar>(upstream: &Array2<T>, input: &ArrayView2<'_, T>, grad: &mut Linear<T>) {
    grad.weight = upstream.t().dot(input);
    grad.bias = upstream.sum_axis(Axis(0));
}

fn relu_mask_inplace<T: Scalar>(grad: &mut Array2<T>, activation: &Array2<T>) {
    grad.zip_mut_with(activation, |g, &a| {
        if a <= T::zero() {
            *g = T::zero();
        }
    });
}

/// Exact gradient of the forward pass.
///
/// `d_y_hat` is the upstream gradient on the probabilities (`n x S`) and
/// `d_features`, when given, an additional upstream gradient on the encoder
/// output (`n x k`).
pub fn backward<T: Scalar>(
    params: &NetParams<T>,
    cfg: &NetConfig,
    pass: &ForwardPass<T>,
    d_y_hat: ArrayView2<'_, T>,
    d_features: Option<ArrayView2<'_, T>>,
) -> Result<NetParams<T>> {
    if d_y_hat.dim() != pass.y_hat.dim() {
        return Err(Error::Shape(format!(
            "upstream gradient {:?} does not match predictions {:?}",
            d_y_hat.dim(),
            pass.y_hat.dim()
        )));
    }
    if let Some(df) = &d_features {
        if df.dim() != pass.features.dim() {
            return Err(Error::Shape(format!(
                "feature gradient {:?} does not match features {:?}",
                df.dim(),
                pass.features.dim()
            )));
        }
    }
    if pass.blocks.len() != params.blocks.len() || pass.input.ncols() != cfg.input_dim {
        return Err(Error::Shape(
            "forward pass does not belong to these parameters".into(),
        ));
    }
    let mut grads = NetParams::zeros(cfg);

    // d sigmoid(z) / dz = y (1 - y)
    let mut d_logits = d_y_hat.to_owned();
    d_logits.zip_mut_with(&pass.y_hat, |g, &y| *g = *g * y * (T::one() - y));
    linear_grads(&d_logits, &pass.features.view(), &mut grads.head);
    let mut d_h = d_logits.dot(&params.head.weight);
    if let Some(df) = d_features {
        d_h += &df;
    }

    let Some(l0) = &params.input else {
        return Ok(grads);
    };

    for ((block, cache), g) in params
        .blocks
        .iter()
        .zip(&pass.blocks)
        .zip(grads.blocks.iter_mut())
        .rev()
    {
        let mut d_res = d_h.clone();
        relu_mask_inplace(&mut d_res, &cache.residual);
        let dropped = match &cache.mask {
            Some(m) => &cache.hidden * m,
            None => cache.hidden.clone(),
        };
        linear_grads(&d_res, &dropped.view(), &mut g.second);
        let mut d_hidden = d_res.dot(&block.second.weight);
        if let Some(m) = &cache.mask {
            d_hidden *= m;
        }
        relu_mask_inplace(&mut d_hidden, &cache.hidden);
        linear_grads(&d_hidden, &cache.input.view(), &mut g.first);
        d_h += &d_hidden.dot(&block.first.weight);
    }

    let first = pass
        .first
        .as_ref()
        .expect("residual encoder caches its first layer");
    relu_mask_inplace(&mut d_h, first);
    let g0 = grads.input.as_mut().expect("shapes match config");
    linear_grads(&d_h, &pass.input.view(), g0);
    debug_assert_eq!(l0.weight.dim(), g0.weight.dim());
    Ok(grads)
}
