//! Losses, the empirical loss `L_n`, and the regularized risk
//! `R_n(w) = L_n(w) + (c V_n / 2) ‖w‖²`.

use std::ops::{Deref, DerefMut};

use crate::data::{Dataset, DatasetView, Sample};
use crate::error::{invalid, Error, Result};

/// Dense decision vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Weights(Vec<f64>);

impl Weights {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn norm_sq(&self) -> f64 {
        norm_sq(&self.0)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for Weights {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl Deref for Weights {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Weights {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

pub(crate) fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    norm_sq(v).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossModel {
    /// `log(1 + exp(-y wᵀx))`
    Logistic,
    /// `½ (wᵀx - y)²`
    Squared,
}

impl LossModel {
    /// Loss as a function of the margin `wᵀx`.
    #[inline]
    pub fn value_at(self, margin: f64, label: f64) -> f64 {
        match self {
            LossModel::Logistic => softplus(-label * margin),
            LossModel::Squared => 0.5 * (margin - label) * (margin - label),
        }
    }

    /// Derivative of the loss with respect to the margin; the per-sample
    /// gradient is this scalar times `x`.
    #[inline]
    pub fn slope_at(self, margin: f64, label: f64) -> f64 {
        match self {
            LossModel::Logistic => -label * sigmoid(-label * margin),
            LossModel::Squared => margin - label,
        }
    }

    /// Second derivative with respect to the margin.
    #[inline]
    pub fn curvature_at(self, margin: f64) -> f64 {
        match self {
            LossModel::Logistic => {
                let s = sigmoid(margin);
                s * (1.0 - s)
            }
            LossModel::Squared => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LossModel::Logistic => "logistic",
            LossModel::Squared => "squared",
        }
    }
}

impl std::str::FromStr for LossModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(LossModel::Logistic),
            "squared" => Ok(LossModel::Squared),
            other => Err(invalid(format!("unknown loss `{other}`"))),
        }
    }
}

/// `log(1 + exp(t))` without overflow.
#[inline]
pub(crate) fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

#[inline]
pub(crate) fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Everything that defines `R_n` for every `n`: the loss, the regularization
/// scale `c`, and the statistical accuracy model `V_n = γ / n^α`, plus the
/// gradient Lipschitz constant `M` used by the step sizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskSpec {
    pub loss: LossModel,
    pub c: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub m: f64,
}

impl RiskSpec {
    pub fn new(loss: LossModel, c: f64, alpha: f64, gamma: f64, m: f64) -> Result<Self> {
        let spec = Self { loss, c, alpha, gamma, m };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.5..=1.0).contains(&self.alpha) {
            return Err(invalid(format!("alpha must lie in [0.5, 1], got {}", self.alpha)));
        }
        for (name, v) in [("c", self.c), ("gamma", self.gamma), ("M", self.m)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }

    /// `V_n`.
    pub fn v(&self, n: usize) -> f64 {
        self.gamma / (n as f64).powf(self.alpha)
    }

    /// Strong-convexity modulus `c V_n` of `R_n`.
    pub fn mu(&self, n: usize) -> f64 {
        self.c * self.v(n)
    }
}

fn check_dim(w: &[f64], dim: usize) -> Result<()> {
    if w.len() < dim {
        return Err(Error::DimensionMismatch { weights: w.len(), required: dim });
    }
    Ok(())
}

/// `f(w, z)` for a single sample.
pub fn loss_value(loss: LossModel, w: &[f64], z: &Sample) -> Result<f64> {
    check_dim(w, z.max_index() as usize)?;
    Ok(loss.value_at(z.dot(w), z.label()))
}

/// Gradient of `f(w, z)` for a single sample, as a dense vector of length `w.len()`.
pub fn loss_gradient(loss: LossModel, w: &[f64], z: &Sample) -> Result<Weights> {
    check_dim(w, z.max_index() as usize)?;
    let mut g = Weights::zeros(w.len());
    z.axpy_into(loss.slope_at(z.dot(w), z.label()), &mut g);
    Ok(g)
}

/// `L_n(w)` averaged over the view, without the gradient.
pub fn empirical_loss(loss: LossModel, w: &[f64], view: &DatasetView<'_>) -> Result<f64> {
    if view.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_dim(w, view.dim())?;
    Ok(empirical_loss_unchecked(loss, w, view.samples()))
}

pub(crate) fn empirical_loss_unchecked(loss: LossModel, w: &[f64], samples: &[Sample]) -> f64 {
    let total: f64 = samples.iter().map(|s| loss.value_at(s.dot(w), s.label())).sum();
    total / samples.len() as f64
}

/// `L_n(w)` and `∇L_n(w)`.
pub fn empirical_loss_and_grad(loss: LossModel, w: &[f64], view: &DatasetView<'_>) -> Result<(f64, Weights)> {
    if view.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_dim(w, view.dim())?;
    let mut g = Weights::zeros(w.len());
    let value = loss_and_grad_into(loss, w, view.samples(), &mut g);
    Ok((value, g))
}

/// Writes `∇L_n(w)` into `g` (overwriting it) and returns `L_n(w)`.
pub(crate) fn loss_and_grad_into(loss: LossModel, w: &[f64], samples: &[Sample], g: &mut [f64]) -> f64 {
    g.iter_mut().for_each(|v| *v = 0.0);
    let mut total = 0.0;
    for s in samples {
        let margin = s.dot(w);
        total += loss.value_at(margin, s.label());
        s.axpy_into(loss.slope_at(margin, s.label()), g);
    }
    let inv_n = 1.0 / samples.len() as f64;
    g.iter_mut().for_each(|v| *v *= inv_n);
    total * inv_n
}

/// Value, gradient and gradient norm of `R_n` on a view.
#[derive(Debug, Clone)]
pub struct RiskEval {
    pub value: f64,
    pub grad: Weights,
    pub grad_norm: f64,
}

/// `R_n(w)`, `∇R_n(w) = ∇L_n(w) + c V_n w` and `‖∇R_n(w)‖`, with `n = view.len()`.
pub fn risk_value_and_grad(spec: &RiskSpec, w: &[f64], view: &DatasetView<'_>) -> Result<RiskEval> {
    if view.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_dim(w, view.dim())?;
    let mut grad = Weights::zeros(w.len());
    let value = risk_grad_into(spec, w, view.samples(), &mut grad);
    let grad_norm = grad.norm();
    Ok(RiskEval { value, grad, grad_norm })
}

/// `R_n(w)` only.
pub fn risk_value(spec: &RiskSpec, w: &[f64], view: &DatasetView<'_>) -> Result<f64> {
    let loss = empirical_loss(spec.loss, w, view)?;
    Ok(loss + 0.5 * spec.mu(view.len()) * norm_sq(w))
}

pub(crate) fn risk_grad_into(spec: &RiskSpec, w: &[f64], samples: &[Sample], g: &mut [f64]) -> f64 {
    let mu = spec.mu(samples.len());
    let loss = loss_and_grad_into(spec.loss, w, samples, g);
    for (gi, wi) in g.iter_mut().zip(w) {
        *gi += mu * wi;
    }
    loss + 0.5 * mu * norm_sq(w)
}

/// How the gradient Lipschitz constant `M` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmoothnessMode {
    /// `M = 1`, valid for unit-norm samples under either loss.
    PaperConservative,
    /// The tightest per-sample constant: `max ‖x‖² / 4` (logistic) or `max ‖x‖²` (squared).
    Tight,
}

impl std::str::FromStr for SmoothnessMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" | "paper_conservative" => Ok(SmoothnessMode::PaperConservative),
            "tight" => Ok(SmoothnessMode::Tight),
            other => Err(invalid(format!("unknown smoothness mode `{other}`"))),
        }
    }
}

pub fn smoothness_constant(loss: LossModel, dataset: &Dataset, mode: SmoothnessMode) -> f64 {
    match mode {
        SmoothnessMode::PaperConservative => 1.0,
        SmoothnessMode::Tight => tight_smoothness(loss, dataset.samples()),
    }
}

pub(crate) fn tight_smoothness(loss: LossModel, samples: &[Sample]) -> f64 {
    let max_sq = samples.iter().map(Sample::norm_sq).fold(0.0, f64::max);
    match loss {
        LossModel::Logistic => max_sq / 4.0,
        LossModel::Squared => max_sq,
    }
}

/// Fraction of samples with `sign(wᵀx) != y`, with `sign(0) = +1`.
pub fn test_error(w: &[f64], test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    check_dim(w, test.dim())?;
    let wrong = test
        .samples()
        .iter()
        .filter(|s| {
            let predicted = if s.dot(w) >= 0.0 { 1.0 } else { -1.0 };
            predicted != s.label()
        })
        .count();
    Ok(wrong as f64 / test.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;
    use proptest::prelude::*;

    fn logistic_spec() -> RiskSpec {
        RiskSpec::new(LossModel::Logistic, 1.0, 0.5, 1.0, 1.0).unwrap()
    }

    fn toy() -> Dataset {
        let (d, _) = generate_synthetic(40, 5, 0.6, 11).unwrap();
        crate::data::normalize(&d)
    }

    #[test]
    fn logistic_at_origin_is_log_two() {
        let z = Sample::new([(1, 0.3), (2, -1.0)], -1.0).unwrap();
        let v = loss_value(LossModel::Logistic, &[0.0, 0.0], &z).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn logistic_large_margin_stays_positive() {
        // y wᵀx = 50: log1p(exp(-50)) = 1.9287498479639178e-22 (extended-precision value).
        let z = Sample::new([(1, 1.0)], 1.0).unwrap();
        let v = loss_value(LossModel::Logistic, &[50.0], &z).unwrap();
        assert!(v > 0.0 && v < 1e-20);
        assert!((v - 1.9287498479639178e-22).abs() / 1.9287498479639178e-22 < 1e-12);
        // and no overflow far out on the other side
        let v = loss_value(LossModel::Logistic, &[-800.0], &z).unwrap();
        assert!((v - 800.0).abs() < 1e-9);
    }

    #[test]
    fn squared_exact_fit_is_zero() {
        let z = Sample::new([(1, 2.0)], 1.0).unwrap();
        assert_eq!(loss_value(LossModel::Squared, &[0.5], &z).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch() {
        let z = Sample::new([(3, 2.0)], 1.0).unwrap();
        assert!(matches!(
            loss_value(LossModel::Squared, &[0.5], &z),
            Err(Error::DimensionMismatch { weights: 1, required: 3 })
        ));
    }

    #[test]
    fn gradient_at_origin() {
        let d = toy();
        let view = d.full().unwrap();
        let (l, g) = empirical_loss_and_grad(LossModel::Logistic, &vec![0.0; d.dim()], &view).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        let mut expected = vec![0.0; d.dim()];
        for s in d.samples() {
            s.axpy_into(-s.label() / 2.0 / d.len() as f64, &mut expected);
        }
        for (a, b) in g.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn single_sample_view_matches_per_sample() {
        let d = toy();
        let view = d.prefix(1).unwrap();
        let w: Vec<f64> = (0..d.dim()).map(|i| 0.1 * i as f64 - 0.2).collect();
        let (l, g) = empirical_loss_and_grad(LossModel::Logistic, &w, &view).unwrap();
        assert_eq!(l, loss_value(LossModel::Logistic, &w, &d.samples()[0]).unwrap());
        assert_eq!(g, loss_gradient(LossModel::Logistic, &w, &d.samples()[0]).unwrap());
    }

    #[test]
    fn regularizer_vanishes_at_origin() {
        let d = toy();
        let view = d.full().unwrap();
        let w = vec![0.0; d.dim()];
        let r = risk_value_and_grad(&logistic_spec(), &w, &view).unwrap();
        let (l, g) = empirical_loss_and_grad(LossModel::Logistic, &w, &view).unwrap();
        assert_eq!(r.value, l);
        assert_eq!(r.grad, g);
    }

    #[test]
    fn regularizer_matches_one_over_sqrt_n() {
        // c = 1, alpha = 0.5, gamma = 2, n = 400: (c V_n / 2) = 1 / sqrt(400) = 0.05.
        let spec = RiskSpec::new(LossModel::Logistic, 1.0, 0.5, 2.0, 1.0).unwrap();
        let (d, _) = generate_synthetic(400, 3, 1.0, 1).unwrap();
        let view = d.full().unwrap();
        let w = [0.3, -1.2, 2.0];
        let reg = risk_value(&spec, &w, &view).unwrap() - empirical_loss(spec.loss, &w, &view).unwrap();
        assert!((reg - 0.05 * norm_sq(&w)).abs() < 1e-14);
        let scaled: Vec<f64> = w.iter().map(|x| 3.0 * x).collect();
        let reg3 = risk_value(&spec, &scaled, &view).unwrap() - empirical_loss(spec.loss, &scaled, &view).unwrap();
        assert!((reg3 - 9.0 * reg).abs() < 1e-12);
    }

    #[test]
    fn smoothness_modes() {
        let d = crate::data::normalize(&toy());
        assert_eq!(smoothness_constant(LossModel::Logistic, &d, SmoothnessMode::PaperConservative), 1.0);
        assert!((smoothness_constant(LossModel::Logistic, &d, SmoothnessMode::Tight) - 0.25).abs() < 1e-12);
        let raw = Dataset::from_samples(
            "r",
            vec![Sample::new([(1, 2.0)], 1.0).unwrap(), Sample::new([(2, 3.0)], -1.0).unwrap()],
            None,
        )
        .unwrap();
        assert_eq!(smoothness_constant(LossModel::Squared, &raw, SmoothnessMode::Tight), 9.0);
    }

    #[test]
    fn test_error_tie_break_and_perfect() {
        let d = toy();
        let neg = d.samples().iter().filter(|s| s.label() < 0.0).count() as f64 / d.len() as f64;
        assert_eq!(test_error(&vec![0.0; d.dim()], &d).unwrap(), neg);

        let samples = vec![Sample::new([(1, 1.0)], 1.0).unwrap(), Sample::new([(1, -2.0)], -1.0).unwrap()];
        let sep = Dataset::from_samples("sep", samples, None).unwrap();
        assert_eq!(test_error(&[1.0], &sep).unwrap(), 0.0);
        let empty = Dataset::from_samples("e", vec![], Some(1)).unwrap();
        assert!(matches!(test_error(&[1.0], &empty), Err(Error::EmptyTestSet)));
    }

    #[test]
    fn true_weights_classify_better_than_chance() {
        let (d, w_true) = generate_synthetic(2000, 10, 1.0, 4).unwrap();
        assert!(test_error(&w_true, &d).unwrap() < 0.5);
    }

    #[test]
    fn spec_validation() {
        assert!(RiskSpec::new(LossModel::Logistic, 1.0, 0.4, 1.0, 1.0).is_err());
        assert!(RiskSpec::new(LossModel::Logistic, 0.0, 0.5, 1.0, 1.0).is_err());
        assert!(RiskSpec::new(LossModel::Logistic, 1.0, 1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn averaging_consistency() {
        let d = toy();
        let w: Vec<f64> = (0..d.dim()).map(|i| (i as f64).sin()).collect();
        let (m, n) = (15, 40);
        let l_m = empirical_loss(LossModel::Logistic, &w, &d.prefix(m).unwrap()).unwrap();
        let l_n = empirical_loss(LossModel::Logistic, &w, &d.prefix(n).unwrap()).unwrap();
        let rest = d.subset("rest", &(m..n).collect::<Vec<_>>());
        let l_rest = empirical_loss(LossModel::Logistic, &w, &rest.full().unwrap()).unwrap();
        let combined = (m as f64 / n as f64) * l_m + ((n - m) as f64 / n as f64) * l_rest;
        assert!((combined - l_n).abs() <= 4.0 * f64::EPSILON * l_n.abs());
    }

    fn weights(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-2.0f64..2.0, dim)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn risk_is_strongly_convex(w1 in weights(5), w2 in weights(5), theta in 0.01f64..0.99) {
            let d = toy();
            let view = d.full().unwrap();
            let spec = logistic_spec();
            let mid: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| theta * a + (1.0 - theta) * b).collect();
            let diff_sq: f64 = w1.iter().zip(&w2).map(|(a, b)| (a - b) * (a - b)).sum();
            let lhs = risk_value(&spec, &mid, &view).unwrap();
            let rhs = theta * risk_value(&spec, &w1, &view).unwrap()
                + (1.0 - theta) * risk_value(&spec, &w2, &view).unwrap()
                - 0.5 * spec.mu(view.len()) * theta * (1.0 - theta) * diff_sq;
            prop_assert!(lhs <= rhs + 1e-9);
        }

        #[test]
        fn risk_gradient_is_lipschitz(w1 in weights(5), w2 in weights(5)) {
            let d = toy();
            let view = d.full().unwrap();
            let m = smoothness_constant(LossModel::Logistic, &d, SmoothnessMode::Tight);
            let spec = RiskSpec::new(LossModel::Logistic, 1.0, 0.5, 1.0, m).unwrap();
            let g1 = risk_value_and_grad(&spec, &w1, &view).unwrap().grad;
            let g2 = risk_value_and_grad(&spec, &w2, &view).unwrap().grad;
            let dg: f64 = g1.iter().zip(g2.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let dw: f64 = w1.iter().zip(&w2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            prop_assert!(dg <= (m + spec.mu(view.len())) * dw + 1e-9);
        }
    }
}
