//! Presence-only losses.
//!
//! Every example carries exactly one observed positive species. The losses
//! differ in where they find pseudo-negatives:
//!
//! * `SSDL` (same species, different location): the positive species at a
//!   uniformly random location.
//! * `SLDS` (same location, different species): one other species, drawn
//!   uniformly, at the observation location.
//! * `FULL`: every other species at the observation location and every
//!   species at the random location, with the positive term weighted by
//!   `lambda`.
//!
//! The "assume negative" (`AN`) variants penalise a pseudo-negative
//! prediction `p` with `-ln(1 - p)`. The maximum-entropy (`ME`) variants
//! replace each such term with the Bernoulli entropy `H(p)`.
//!
//! Values are batch means. Gradients are with respect to the predicted
//! probabilities, ready for [`crate::net::backward`].

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::net::Scalar;
use crate::{Error, Result};

/// Predictions are clamped to `[CLAMP_EPS, 1 - CLAMP_EPS]` before any log.
pub const CLAMP_EPS: f64 = 1e-7;

/// Default positive weight for the full losses.
pub const DEFAULT_LAMBDA: f64 = 2048.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossVariant {
    AnSsdl,
    AnSlds,
    AnFull,
    MeSsdl,
    MeSlds,
    MeFull,
}

/// How a pseudo-negative prediction is penalised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativeTerm {
    /// `-ln(1 - p)`
    AssumeNegative,
    /// `H(p)`
    MaxEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    Ssdl,
    Slds,
    Full,
}

impl LossVariant {
    pub const ALL: [LossVariant; 6] = [
        LossVariant::AnSsdl,
        LossVariant::AnSlds,
        LossVariant::AnFull,
        LossVariant::MeSsdl,
        LossVariant::MeSlds,
        LossVariant::MeFull,
    ];

    pub fn sampling(self) -> Sampling {
        match self {
            LossVariant::AnSsdl | LossVariant::MeSsdl => Sampling::Ssdl,
            LossVariant::AnSlds | LossVariant::MeSlds => Sampling::Slds,
            LossVariant::AnFull | LossVariant::MeFull => Sampling::Full,
        }
    }

    pub fn negative_term(self) -> NegativeTerm {
        match self {
            LossVariant::AnSsdl | LossVariant::AnSlds | LossVariant::AnFull => {
                NegativeTerm::AssumeNegative
            }
            _ => NegativeTerm::MaxEntropy,
        }
    }

    /// Whether the loss needs predictions at random locations.
    pub fn uses_random_locations(self) -> bool {
        self.sampling() != Sampling::Slds
    }

    /// The `AN` loss with the same sampling scheme.
    pub fn assume_negative_counterpart(self) -> LossVariant {
        match self.sampling() {
            Sampling::Ssdl => LossVariant::AnSsdl,
            Sampling::Slds => LossVariant::AnSlds,
            Sampling::Full => LossVariant::AnFull,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LossVariant::AnSsdl => "an-ssdl",
            LossVariant::AnSlds => "an-slds",
            LossVariant::AnFull => "an-full",
            LossVariant::MeSsdl => "me-ssdl",
            LossVariant::MeSlds => "me-slds",
            LossVariant::MeFull => "me-full",
        }
    }

    pub(crate) fn code(self) -> u8 {
        LossVariant::ALL
            .iter()
            .position(|v| *v == self)
            .expect("listed") as u8
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        LossVariant::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        LossVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == norm)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown loss `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub variant: LossVariant,
    pub lambda: f64,
}

impl LossConfig {
    pub fn new(variant: LossVariant, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        Ok(Self { variant, lambda })
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            variant: LossVariant::AnFull,
            lambda: DEFAULT_LAMBDA,
        }
    }
}

/// The single observed positive species of each example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchTargets {
    positives: Vec<usize>,
    n_species: usize,
}

impl BatchTargets {
    pub fn new(positives: Vec<usize>, n_species: usize) -> Result<Self> {
        if n_species == 0 {
            return Err(Error::InvalidArgument("no species".into()));
        }
        if let Some(&bad) = positives.iter().find(|&&j| j >= n_species) {
            return Err(Error::InvalidArgument(format!(
                "positive index {bad} out of range for {n_species} species"
            )));
        }
        Ok(Self {
            positives,
            n_species,
        })
    }

    pub fn positives(&self) -> &[usize] {
        &self.positives
    }

    pub fn n_species(&self) -> usize {
        self.n_species
    }

    pub fn len(&self) -> usize {
        self.positives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }
}

/// Batch-mean contributions of the three kinds of term.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    /// Observed positives (including `lambda` for the full losses).
    pub positive: f64,
    /// Pseudo-negatives at the observation location.
    pub negative: f64,
    /// Pseudo-negatives at the random location.
    pub random_negative: f64,
}

#[derive(Debug, Clone)]
pub struct LossOutput<T> {
    pub value: f64,
    pub parts: LossParts,
    /// Gradient with respect to the predictions at the observation locations.
    pub d_y_hat: Array2<T>,
    /// Gradient with respect to the predictions at the random locations, for
    /// variants that use them.
    pub d_y_rand: Option<Array2<T>>,
    /// The sampled other species per example (SLDS variants only).
    pub negatives: Option<Vec<usize>>,
}

/// `-(p ln p + (1-p) ln(1-p))`, with `0 ln 0 = 0`.
pub fn bernoulli_entropy(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "probability {p} outside [0, 1]"
        )));
    }
    let xlx = |x: f64| if x == 0.0 { 0.0 } else { x * x.ln() };
    Ok(-(xlx(p) + xlx(1.0 - p)))
}

#[inline]
fn clamp(p: f64) -> f64 {
    p.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS)
}

/// `-ln p` and its derivative.
#[inline]
fn positive_term(p: f64) -> (f64, f64) {
    let p = clamp(p);
    (-p.ln(), -1.0 / p)
}

impl NegativeTerm {
    /// Value and derivative at `p`.
    #[inline]
    fn eval(self, p: f64) -> (f64, f64) {
        let p = clamp(p);
        match self {
            NegativeTerm::AssumeNegative => (-(1.0 - p).ln(), 1.0 / (1.0 - p)),
            NegativeTerm::MaxEntropy => (
                -(p * p.ln() + (1.0 - p) * (1.0 - p).ln()),
                ((1.0 - p) / p).ln(),
            ),
        }
    }
}

fn check_shapes<T>(
    y_hat: &ArrayView2<'_, T>,
    y_rand: Option<&ArrayView2<'_, T>>,
    t: &BatchTargets,
) -> Result<()> {
    if y_hat.nrows() != t.len() || y_hat.ncols() != t.n_species() {
        return Err(Error::Shape(format!(
            "predictions {:?} vs {} targets over {} species",
            y_hat.dim(),
            t.len(),
            t.n_species()
        )));
    }
    if let Some(r) = y_rand {
        if r.dim() != y_hat.dim() {
            return Err(Error::Shape(format!(
                "random-location predictions {:?} vs {:?}",
                r.dim(),
                y_hat.dim()
            )));
        }
    }
    if t.is_empty() {
        return Err(Error::Empty("loss over an empty batch".into()));
    }
    Ok(())
}

/// Same species, different location.
pub fn ssdl<T: Scalar>(
    neg: NegativeTerm,
    y_hat: ArrayView2<'_, T>,
    y_rand: ArrayView2<'_, T>,
    t: &BatchTargets,
) -> Result<LossOutput<T>> {
    check_shapes(&y_hat, Some(&y_rand), t)?;
    let n = t.len() as f64;
    let mut d_y = Array2::zeros(y_hat.raw_dim());
    let mut d_r = Array2::zeros(y_hat.raw_dim());
    let mut parts = LossParts::default();
    for (i, &j) in t.positives().iter().enumerate() {
        let (pv, pg) = positive_term(y_hat[[i, j]].to_f64());
        let (nv, ng) = neg.eval(y_rand[[i, j]].to_f64());
        parts.positive += pv / n;
        parts.random_negative += nv / n;
        d_y[[i, j]] = T::from_f64(pg / n);
        d_r[[i, j]] = T::from_f64(ng / n);
    }
    Ok(LossOutput {
        value: parts.positive + parts.random_negative,
        parts,
        d_y_hat: d_y,
        d_y_rand: Some(d_r),
        negatives: None,
    })
}

/// Draws one species other than the positive, uniformly, per example.
pub fn sample_other_species<R: Rng + ?Sized>(t: &BatchTargets, rng: &mut R) -> Result<Vec<usize>> {
    let s = t.n_species();
    if s < 2 {
        return Err(Error::InvalidArgument(
            "same-location negatives need at least two species".into(),
        ));
    }
    Ok(t.positives()
        .iter()
        .map(|&j| {
            let k = rng.gen_range(0..s - 1);
            if k >= j {
                k + 1
            } else {
                k
            }
        })
        .collect())
}

/// Same location, different species, with the other species given.
pub fn slds_with<T: Scalar>(
    neg: NegativeTerm,
    y_hat: ArrayView2<'_, T>,
    t: &BatchTargets,
    negatives: &[usize],
) -> Result<LossOutput<T>> {
    check_shapes(&y_hat, None, t)?;
    if t.n_species() < 2 {
        return Err(Error::InvalidArgument(
            "same-location negatives need at least two species".into(),
        ));
    }
    if negatives.len() != t.len() {
        return Err(Error::Shape(format!(
            "{} sampled negatives for {} examples",
            negatives.len(),
            t.len()
        )));
    }
    let n = t.len() as f64;
    let mut d_y = Array2::zeros(y_hat.raw_dim());
    let mut parts = LossParts::default();
    for (i, (&j, &k)) in t.positives().iter().zip(negatives).enumerate() {
        if k == j || k >= t.n_species() {
            return Err(Error::InvalidArgument(format!(
                "invalid pseudo-negative species {k} for positive {j}"
            )));
        }
        let (pv, pg) = positive_term(y_hat[[i, j]].to_f64());
        let (nv, ng) = neg.eval(y_hat[[i, k]].to_f64());
        parts.positive += pv / n;
        parts.negative += nv / n;
        d_y[[i, j]] = T::from_f64(pg / n);
        d_y[[i, k]] = T::from_f64(ng / n);
    }
    Ok(LossOutput {
        value: parts.positive + parts.negative,
        parts,
        d_y_hat: d_y,
        d_y_rand: None,
        negatives: Some(negatives.to_vec()),
    })
}

/// Same location, different species; the other species is drawn from `rng`
/// and returned in [`LossOutput::negatives`].
pub fn slds<T: Scalar, R: Rng + ?Sized>(
    neg: NegativeTerm,
    y_hat: ArrayView2<'_, T>,
    t: &BatchTargets,
    rng: &mut R,
) -> Result<LossOutput<T>> {
    check_shapes(&y_hat, None, t)?;
    let negatives = sample_other_species(t, rng)?;
    slds_with(neg, y_hat, t, &negatives)
}

/// All species at the observation location and at the random location.
pub fn full<T: Scalar>(
    neg: NegativeTerm,
    y_hat: ArrayView2<'_, T>,
    y_rand: ArrayView2<'_, T>,
    t: &BatchTargets,
    lambda: f64,
) -> Result<LossOutput<T>> {
    check_shapes(&y_hat, Some(&y_rand), t)?;
    if lambda.is_nan() || lambda <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    let n = t.len() as f64;
    let s = t.n_species() as f64;
    let scale = 1.0 / (n * s);
    let mut d_y = Array2::zeros(y_hat.raw_dim());
    let mut d_r = Array2::zeros(y_hat.raw_dim());
    let mut parts = LossParts::default();
    for (i, &j) in t.positives().iter().enumerate() {
        for k in 0..t.n_species() {
            if k == j {
                let (pv, pg) = positive_term(y_hat[[i, k]].to_f64());
                parts.positive += lambda * pv * scale;
                d_y[[i, k]] = T::from_f64(lambda * pg * scale);
            } else {
                let (nv, ng) = neg.eval(y_hat[[i, k]].to_f64());
                parts.negative += nv * scale;
                d_y[[i, k]] = T::from_f64(ng * scale);
            }
            let (rv, rg) = neg.eval(y_rand[[i, k]].to_f64());
            parts.random_negative += rv * scale;
            d_r[[i, k]] = T::from_f64(rg * scale);
        }
    }
    Ok(LossOutput {
        value: parts.positive + parts.negative + parts.random_negative,
        parts,
        d_y_hat: d_y,
        d_y_rand: Some(d_r),
        negatives: None,
    })
}

pub fn loss_an_ssdl<T: Scalar>(
    y_hat: ArrayView2<'_, T>,
    y_rand: ArrayView2<'_, T>,
    t: &BatchTargets,
) -> Result<LossOutput<T>> {
    ssdl(NegativeTerm::AssumeNegative, y_hat, y_rand, t)
}

pub fn loss_an_slds<T: Scalar, R: Rng + ?Sized>(
    y_hat: ArrayView2<'_, T>,
    t: &BatchTargets,
    rng: &mut R,
) -> Result<LossOutput<T>> {
    slds(NegativeTerm::AssumeNegative, y_hat, t, rng)
}

pub fn loss_an_full<T: Scalar>(
    y_hat: ArrayView2<'_, T>,
    y_rand: ArrayView2<'_, T>,
    t: &BatchTargets,
    lambda: f64,
) -> Result<LossOutput<T>> {
    full(NegativeTerm::AssumeNegative, y_hat, y_rand, t, lambda)
}

/// Any variant. `y_rand` is required for the SSDL and FULL variants and
/// ignored otherwise; `rng` is only drawn from by the SLDS variants.
pub fn compute<T: Scalar, R: Rng + ?Sized>(
    cfg: &LossConfig,
    y_hat: ArrayView2<'_, T>,
    y_rand: Option<ArrayView2<'_, T>>,
    t: &BatchTargets,
    rng: &mut R,
) -> Result<LossOutput<T>> {
    let neg = cfg.variant.negative_term();
    let need_rand = || {
        y_rand.ok_or_else(|| {
            Error::InvalidArgument(format!("{} needs random-location predictions", cfg.variant))
        })
    };
    match cfg.variant.sampling() {
        Sampling::Ssdl => ssdl(neg, y_hat, need_rand()?, t),
        Sampling::Slds => slds(neg, y_hat, t, rng),
        Sampling::Full => full(neg, y_hat, need_rand()?, t, cfg.lambda),
    }
}

/// Maximum-entropy variants. Errors if `variant` is an `AN` loss.
pub fn loss_me<T: Scalar, R: Rng + ?Sized>(
    variant: LossVariant,
    lambda: f64,
    y_hat: ArrayView2<'_, T>,
    y_rand: Option<ArrayView2<'_, T>>,
    t: &BatchTargets,
    rng: &mut R,
) -> Result<LossOutput<T>> {
    if variant.negative_term() != NegativeTerm::MaxEntropy {
        return Err(Error::InvalidArgument(format!(
            "{variant} is not a maximum-entropy loss"
        )));
    }
    compute(&LossConfig::new(variant, lambda)?, y_hat, y_rand, t, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use ndarray::array;
    use proptest::prelude::*;

    fn t1(pos: usize, s: usize) -> BatchTargets {
        BatchTargets::new(vec![pos], s).unwrap()
    }

    #[test]
    fn entropy_values() {
        assert!((bernoulli_entropy(0.5).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(bernoulli_entropy(0.0).unwrap(), 0.0);
        assert_eq!(bernoulli_entropy(1.0).unwrap(), 0.0);
        // -(0.25 ln 0.25 + 0.75 ln 0.75)
        assert!((bernoulli_entropy(0.25).unwrap() - 0.562_335_144_6).abs() < 1e-9);
        assert!(bernoulli_entropy(1.5).is_err());
        assert!(bernoulli_entropy(-0.1).is_err());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in LossVariant::ALL {
            assert_eq!(v.as_str().parse::<LossVariant>().unwrap(), v);
            assert_eq!(LossVariant::from_code(v.code()), Some(v));
        }
        assert_eq!(
            "AN_FULL".parse::<LossVariant>().unwrap(),
            LossVariant::AnFull
        );
        assert!("gp".parse::<LossVariant>().is_err());
        assert!(LossConfig::new(LossVariant::AnFull, 0.0).is_err());
    }

    #[test]
    fn ssdl_hand_example() {
        let y: Array2<f64> = array![[0.8, 0.3]];
        let r = array![[0.6, 0.9]];
        let out = loss_an_ssdl(y.view(), r.view(), &t1(0, 2)).unwrap();
        assert!((out.value - 1.139_434_283).abs() < 1e-8);
        let dr = out.d_y_rand.unwrap();
        assert!((dr[[0, 0]] - 2.5).abs() < 1e-12);
        assert_eq!(dr[[0, 1]], 0.0);
        assert!((out.d_y_hat[[0, 0]] + 1.25).abs() < 1e-12);
    }

    #[test]
    fn ssdl_perfect_prediction_is_zero() {
        let y = array![[1.0, 0.5]];
        let r = array![[0.0, 0.5]];
        let out = loss_an_ssdl(y.view(), r.view(), &t1(0, 2)).unwrap();
        assert!(out.value < 1e-6);
    }

    #[test]
    fn slds_forced_example() {
        let y = array![[0.8, 0.3]];
        let out = slds_with(NegativeTerm::AssumeNegative, y.view(), &t1(0, 2), &[1]).unwrap();
        assert!((out.value - 0.579_818_495).abs() < 1e-8);
        let eps = 1e-9;
        let y = array![[1.0 - eps, eps]];
        let out = slds_with(NegativeTerm::AssumeNegative, y.view(), &t1(0, 2), &[1]).unwrap();
        assert!(out.value < 1e-6);
    }

    #[test]
    fn slds_rejects_single_species() {
        let y = array![[0.5]];
        let mut rng = rng_from_seed(0);
        assert!(loss_an_slds(y.view(), &t1(0, 1), &mut rng).is_err());
    }

    #[test]
    fn slds_negative_frequencies() {
        let mut rng = rng_from_seed(17);
        let t = BatchTargets::new(vec![2; 10_000], 5).unwrap();
        let draws = sample_other_species(&t, &mut rng).unwrap();
        let mut counts = [0usize; 5];
        for d in draws {
            counts[d] += 1;
        }
        assert_eq!(counts[2], 0);
        for (k, &c) in counts.iter().enumerate().filter(|(k, _)| *k != 2) {
            let f = c as f64 / 10_000.0;
            assert!((f - 0.25).abs() < 0.02, "species {k}: {f}");
        }
    }

    #[test]
    fn full_hand_examples() {
        let y = array![[0.5]];
        let r = array![[0.5]];
        let out = loss_an_full(y.view(), r.view(), &t1(0, 1), 1.0).unwrap();
        assert!((out.value - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);

        let y = array![[0.8, 0.3]];
        let r = array![[0.6, 0.9]];
        let out = loss_an_full(y.view(), r.view(), &t1(0, 2), 2048.0).unwrap();
        // -(1/2)[2048 ln 0.8 + ln 0.7 + ln 0.4 + ln 0.1]
        let hand = -0.5 * (2048.0 * 0.8f64.ln() + 0.7f64.ln() + 0.4f64.ln() + 0.1f64.ln());
        assert!((out.value - hand).abs() < 1e-10);
        assert!((out.value - 230.286_772).abs() < 1e-4);
    }

    #[test]
    fn full_perfect_prediction_is_zero() {
        let y = array![[1.0, 0.0, 0.0]];
        let r = array![[0.0, 0.0, 0.0]];
        let out = loss_an_full(y.view(), r.view(), &t1(0, 3), 2048.0).unwrap();
        assert!(out.value < 1e-3);
    }

    #[test]
    fn me_ssdl_example() {
        let y = array![[0.8, 0.1]];
        let r = array![[0.6, 0.2]];
        let mut rng = rng_from_seed(0);
        let out = loss_me(
            LossVariant::MeSsdl,
            1.0,
            y.view(),
            Some(r.view()),
            &t1(0, 2),
            &mut rng,
        )
        .unwrap();
        let hand = -0.8f64.ln() + bernoulli_entropy(0.6).unwrap();
        assert!((out.value - hand).abs() < 1e-12);
        assert!((out.value - 0.8962).abs() < 1e-4);
        assert!(loss_me(
            LossVariant::AnSsdl,
            1.0,
            y.view(),
            Some(r.view()),
            &t1(0, 2),
            &mut rng
        )
        .is_err());
    }

    #[test]
    fn entropy_gradient_vanishes_at_half() {
        let (_, g) = NegativeTerm::MaxEntropy.eval(0.5);
        assert_eq!(g, 0.0);
        let (_, g) = NegativeTerm::AssumeNegative.eval(0.5);
        assert_eq!(g, 2.0);
    }

    #[test]
    fn lambda_scales_only_positive_part() {
        let y = array![[0.8, 0.3, 0.2], [0.1, 0.6, 0.4]];
        let r = array![[0.6, 0.9, 0.05], [0.3, 0.2, 0.7]];
        let t = BatchTargets::new(vec![0, 2], 3).unwrap();
        for neg in [NegativeTerm::AssumeNegative, NegativeTerm::MaxEntropy] {
            let a = full(neg, y.view(), r.view(), &t, 1.0).unwrap();
            let b = full(neg, y.view(), r.view(), &t, 7.5).unwrap();
            assert!((b.parts.positive - 7.5 * a.parts.positive).abs() < 1e-12);
            assert_eq!(a.parts.negative, b.parts.negative);
            assert_eq!(a.parts.random_negative, b.parts.random_negative);
        }
    }

    #[test]
    fn full_single_species_reduces_to_ssdl() {
        // With S = 1 and lambda = 1 there is no other species, so the full
        // loss is exactly the SSDL loss.
        let y = array![[0.37], [0.81]];
        let r = array![[0.12], [0.66]];
        let t = BatchTargets::new(vec![0, 0], 1).unwrap();
        let a = loss_an_full(y.view(), r.view(), &t, 1.0).unwrap();
        let b = loss_an_ssdl(y.view(), r.view(), &t).unwrap();
        assert_eq!(a.parts.negative, 0.0);
        assert!((a.value - b.value).abs() < 1e-15);
    }

    #[test]
    fn shape_errors() {
        let y = array![[0.5, 0.5]];
        let r = array![[0.5, 0.5, 0.5]];
        assert!(loss_an_ssdl(y.view(), r.view(), &t1(0, 2)).is_err());
        assert!(BatchTargets::new(vec![3], 2).is_err());
        let mut rng = rng_from_seed(0);
        let cfg = LossConfig::default();
        assert!(compute(&cfg, y.view(), None, &t1(0, 2), &mut rng).is_err());
    }

    proptest! {
        #[test]
        fn clamped_losses_are_finite_and_non_negative(
            vals in proptest::collection::vec(0.0f64..=1.0, 8),
            pos in 0usize..4,
            seed in 0u64..1000,
        ) {
            let y = Array2::from_shape_vec((1, 4), vals[..4].to_vec()).unwrap();
            let r = Array2::from_shape_vec((1, 4), vals[4..].to_vec()).unwrap();
            let t = t1(pos, 4);
            let mut rng = rng_from_seed(seed);
            for v in LossVariant::ALL {
                let cfg = LossConfig::new(v, 2048.0).unwrap();
                let out = compute(&cfg, y.view(), Some(r.view()), &t, &mut rng).unwrap();
                prop_assert!(out.value.is_finite() && out.value >= 0.0);
                prop_assert!(out.d_y_hat.iter().all(|g| g.is_finite()));
            }
        }
    }
}
