//! First-order inner solvers for one stage `R_n`: gradient descent, Nesterov's
//! accelerated gradient and SVRG.
//!
//! Work is counted in per-sample gradient evaluations: a GD or AGD step costs
//! `n`, an SVRG epoch costs `2n` (one full gradient at the anchor plus `q_n = n`
//! single-sample inner steps). Nothing else touches the counter; gradient norms
//! computed for stopping decisions are bookkeeping and are not charged.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{DatasetView, Sample};
use crate::erm::{self, RiskEval, RiskSpec, Weights};
use crate::error::{invalid, Error, Result};
use crate::schedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Gd,
    Agd,
    Svrg,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Gd => "gd",
            Method::Agd => "agd",
            Method::Svrg => "svrg",
        }
    }

    pub const ALL: [Method; 3] = [Method::Gd, Method::Agd, Method::Svrg];
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gd" => Ok(Method::Gd),
            "agd" => Ok(Method::Agd),
            "svrg" => Ok(Method::Svrg),
            other => Err(invalid(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
enum Aux {
    Gd,
    /// Momentum sequence `ỹ_k`.
    Agd { y: Weights },
    /// Anchor `w̃_k` of the most recent epoch and `∇R_n(w̃_k)`.
    Svrg { anchor: Option<Weights>, full_grad: Option<Weights> },
}

/// Iterate plus the auxiliary sequences of one solver kind.
#[derive(Debug, Clone)]
pub struct SolverState {
    w: Weights,
    aux: Aux,
    rng: ChaCha8Rng,
    grad_evals: u64,
    stage_iterations: usize,
}

impl SolverState {
    /// Starts at `w0`; for AGD `ỹ_0 = w0`. `seed` drives SVRG's index sampling.
    pub fn new(method: Method, w0: Weights, seed: u64) -> Self {
        let aux = match method {
            Method::Gd => Aux::Gd,
            Method::Agd => Aux::Agd { y: w0.clone() },
            Method::Svrg => Aux::Svrg { anchor: None, full_grad: None },
        };
        Self { w: w0, aux, rng: ChaCha8Rng::seed_from_u64(seed), grad_evals: 0, stage_iterations: 0 }
    }

    pub fn method(&self) -> Method {
        match self.aux {
            Aux::Gd => Method::Gd,
            Aux::Agd { .. } => Method::Agd,
            Aux::Svrg { .. } => Method::Svrg,
        }
    }

    /// Current iterate (`w̃_k` for AGD, the latest anchor candidate for SVRG).
    pub fn w(&self) -> &Weights {
        &self.w
    }

    pub fn into_weights(self) -> Weights {
        self.w
    }

    pub fn agd_y(&self) -> Option<&Weights> {
        match &self.aux {
            Aux::Agd { y } => Some(y),
            _ => None,
        }
    }

    pub fn svrg_anchor(&self) -> Option<&Weights> {
        match &self.aux {
            Aux::Svrg { anchor, .. } => anchor.as_ref(),
            _ => None,
        }
    }

    pub fn svrg_full_grad(&self) -> Option<&Weights> {
        match &self.aux {
            Aux::Svrg { full_grad, .. } => full_grad.as_ref(),
            _ => None,
        }
    }

    pub fn grad_evals(&self) -> u64 {
        self.grad_evals
    }

    /// Warm start for a new stage: the current iterate becomes the starting
    /// point of every auxiliary sequence.
    pub fn begin_stage(&mut self) {
        self.stage_iterations = 0;
        match &mut self.aux {
            Aux::Gd => {}
            Aux::Agd { y } => y.copy_from_slice(&self.w),
            Aux::Svrg { anchor, full_grad } => {
                *anchor = None;
                *full_grad = None;
            }
        }
    }

    fn check_finite(&self, n: usize) -> Result<()> {
        if self.w.is_finite() {
            Ok(())
        } else {
            Err(Error::Divergence { stage_n: n, iteration: self.stage_iterations })
        }
    }
}

fn expect_method(state: &SolverState, method: Method) -> Result<()> {
    if state.method() == method {
        Ok(())
    } else {
        Err(invalid(format!("{} step applied to a {} state", method, state.method())))
    }
}

/// Gradient-descent step size `1/(M + cV_n)`.
pub fn gd_step_size(spec: &RiskSpec, n: usize) -> f64 {
    1.0 / (spec.m + spec.mu(n))
}

fn eval(spec: &RiskSpec, w: &[f64], samples: &[Sample]) -> RiskEval {
    let mut grad = Weights::zeros(w.len());
    let value = erm::risk_grad_into(spec, w, samples, &mut grad);
    let grad_norm = grad.norm();
    RiskEval { value, grad, grad_norm }
}

fn gd_step_from(state: &mut SolverState, spec: &RiskSpec, samples: &[Sample], grad: &[f64]) -> Result<()> {
    let eta = gd_step_size(spec, samples.len());
    for (w, g) in state.w.iter_mut().zip(grad) {
        *w -= eta * g;
    }
    state.grad_evals += samples.len() as u64;
    state.stage_iterations += 1;
    state.check_finite(samples.len())
}

/// `w ← w − ∇R_n(w)/(M + cV_n)`.
pub fn gd_step(state: &mut SolverState, spec: &RiskSpec, view: &DatasetView<'_>) -> Result<()> {
    expect_method(state, Method::Gd)?;
    let e = erm::risk_value_and_grad(spec, &state.w, view)?;
    gd_step_from(state, spec, view.samples(), &e.grad)
}

/// `w̃_{k+1} = ỹ_k − η∇R_n(ỹ_k)`, `ỹ_{k+1} = w̃_{k+1} + β(w̃_{k+1} − w̃_k)` with the
/// stage parameters from [`schedule::agd_params`].
pub fn agd_step(state: &mut SolverState, spec: &RiskSpec, view: &DatasetView<'_>) -> Result<()> {
    let (eta, beta) = schedule::agd_params(spec, view.len());
    agd_step_with(state, spec, view, eta, beta)
}

/// [`agd_step`] with explicit step size and momentum.
pub fn agd_step_with(state: &mut SolverState, spec: &RiskSpec, view: &DatasetView<'_>, eta: f64, beta: f64) -> Result<()> {
    expect_method(state, Method::Agd)?;
    if state.w.len() < view.dim() {
        return Err(Error::DimensionMismatch { weights: state.w.len(), required: view.dim() });
    }
    agd_step_unchecked(state, spec, view.samples(), eta, beta)
}

fn agd_step_unchecked(state: &mut SolverState, spec: &RiskSpec, samples: &[Sample], eta: f64, beta: f64) -> Result<()> {
    let Aux::Agd { y } = &mut state.aux else { unreachable!("checked by caller") };
    let mut grad = Weights::zeros(y.len());
    erm::risk_grad_into(spec, y, samples, &mut grad);
    for ((w, y), g) in state.w.iter_mut().zip(y.iter_mut()).zip(grad.iter()) {
        let next = *y - eta * g;
        *y = next + beta * (next - *w);
        *w = next;
    }
    state.grad_evals += samples.len() as u64;
    state.stage_iterations += 1;
    state.check_finite(samples.len())
}

/// Writes the variance-reduced direction
/// `∇f(ŵ, z_i) + cV_n ŵ − ∇f(w̃, z_i) − cV_n w̃ + ∇R_n(w̃)` into `buf`.
#[allow(clippy::too_many_arguments)]
fn direction_into(
    buf: &mut [f64],
    spec: &RiskSpec,
    mu: f64,
    sample: &Sample,
    anchor_slope: f64,
    w_hat: &[f64],
    anchor: &[f64],
    full_grad: &[f64],
) {
    for (((b, wh), wa), g) in buf.iter_mut().zip(w_hat).zip(anchor).zip(full_grad) {
        *b = mu * (wh - wa) + g;
    }
    let slope = spec.loss.slope_at(sample.dot(w_hat), sample.label());
    sample.axpy_into(slope - anchor_slope, buf);
}

/// The SVRG inner-loop direction for sample `index` of the view, given the
/// anchor `w̃` and its full gradient `∇R_n(w̃)`.
pub fn svrg_direction(
    spec: &RiskSpec,
    view: &DatasetView<'_>,
    w_hat: &[f64],
    anchor: &[f64],
    full_grad: &[f64],
    index: usize,
) -> Result<Weights> {
    let sample = view
        .samples()
        .get(index)
        .ok_or_else(|| invalid(format!("sample index {index} outside view of {}", view.len())))?;
    if w_hat.len() < view.dim() || anchor.len() != w_hat.len() || full_grad.len() != w_hat.len() {
        return Err(Error::DimensionMismatch { weights: w_hat.len(), required: view.dim() });
    }
    let anchor_slope = spec.loss.slope_at(sample.dot(anchor), sample.label());
    let mut buf = Weights::zeros(w_hat.len());
    direction_into(&mut buf, spec, spec.mu(view.len()), sample, anchor_slope, w_hat, anchor, full_grad);
    Ok(buf)
}

fn svrg_epoch_from(state: &mut SolverState, spec: &RiskSpec, samples: &[Sample], full_grad: Weights) -> Result<()> {
    let n = samples.len();
    let mu = spec.mu(n);
    let params = schedule::svrg_params(spec, n);
    let anchor = state.w.clone();
    let anchor_slopes: Vec<f64> = samples.iter().map(|s| spec.loss.slope_at(s.dot(&anchor), s.label())).collect();
    let mut w_hat = anchor.clone();
    let mut buf = Weights::zeros(anchor.len());
    for _ in 0..params.q {
        let i = state.rng.random_range(0..n);
        direction_into(&mut buf, spec, mu, &samples[i], anchor_slopes[i], &w_hat, &anchor, &full_grad);
        for (w, d) in w_hat.iter_mut().zip(buf.iter()) {
            *w -= params.eta * d;
        }
    }
    state.w = w_hat;
    state.aux = Aux::Svrg { anchor: Some(anchor), full_grad: Some(full_grad) };
    state.grad_evals += 2 * n as u64;
    state.stage_iterations += 1;
    state.check_finite(n)
}

/// One outer loop: full gradient at the anchor `w̃_k = w`, then `q_n = n` inner
/// steps with indices drawn uniformly with replacement; the last inner iterate
/// becomes the next anchor.
pub fn svrg_epoch(state: &mut SolverState, spec: &RiskSpec, view: &DatasetView<'_>) -> Result<()> {
    expect_method(state, Method::Svrg)?;
    let e = erm::risk_value_and_grad(spec, &state.w, view)?;
    svrg_epoch_from(state, spec, view.samples(), e.grad)
}

pub const DEFAULT_MAX_ITERATIONS: usize = 1_000_000;

/// How long [`solve`] runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepBudget {
    /// Iterate until `‖∇R_n(w)‖ ≤ threshold`, giving up after `max_iterations`.
    UntilThreshold { threshold: f64, max_iterations: usize },
    /// Exactly this many steps (epochs for SVRG).
    FixedIterations { iterations: usize },
}

impl StepBudget {
    pub fn until_threshold(threshold: f64) -> Self {
        StepBudget::UntilThreshold { threshold, max_iterations: DEFAULT_MAX_ITERATIONS }
    }

    pub fn fixed(iterations: usize) -> Self {
        StepBudget::FixedIterations { iterations }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            StepBudget::UntilThreshold { threshold, max_iterations } => {
                if max_iterations == 0 {
                    return Err(invalid("max_iterations must be at least 1"));
                }
                if !(threshold >= 0.0) {
                    return Err(invalid(format!("threshold must be nonnegative, got {threshold}")));
                }
                Ok(())
            }
            StepBudget::FixedIterations { .. } => Ok(()),
        }
    }
}

/// Result of one [`solve`] call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOutcome {
    pub iterations: usize,
    /// The threshold was not reached within `max_iterations`.
    pub budget_exhausted: bool,
    /// `‖∇R_n(w)‖` at exit.
    pub grad_norm: f64,
    /// `R_n(w)` at exit.
    pub risk: f64,
}

/// Progress reported to an observer after each iteration.
#[derive(Debug, Clone, Copy)]
pub struct Progress {
    pub iteration: usize,
    pub grad_norm: f64,
    pub risk: f64,
}

pub fn solve(state: &mut SolverState, spec: &RiskSpec, view: &DatasetView<'_>, budget: StepBudget) -> Result<SolveOutcome> {
    solve_observed(state, spec, view, budget, |_, _| {})
}

/// Runs the stage solver under `budget`, calling `observer` after every iteration.
pub fn solve_observed<F>(
    state: &mut SolverState,
    spec: &RiskSpec,
    view: &DatasetView<'_>,
    budget: StepBudget,
    mut observer: F,
) -> Result<SolveOutcome>
where
    F: FnMut(&SolverState, Progress),
{
    budget.validate()?;
    if view.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if state.w.len() < view.dim() {
        return Err(Error::DimensionMismatch { weights: state.w.len(), required: view.dim() });
    }
    let samples = view.samples();
    let n = samples.len();
    let (limit, threshold) = match budget {
        StepBudget::UntilThreshold { threshold, max_iterations } => (max_iterations, Some(threshold)),
        StepBudget::FixedIterations { iterations } => (iterations, None),
    };
    let (eta, beta) = schedule::agd_params(spec, n);

    let mut current = eval(spec, &state.w, samples);
    if !current.grad_norm.is_finite() {
        return Err(Error::Divergence { stage_n: n, iteration: state.stage_iterations });
    }
    let mut iterations = 0;
    let mut reached = threshold.is_some_and(|t| current.grad_norm <= t);
    while !reached && iterations < limit {
        match state.method() {
            Method::Gd => gd_step_from(state, spec, samples, &current.grad)?,
            Method::Agd => agd_step_unchecked(state, spec, samples, eta, beta)?,
            Method::Svrg => svrg_epoch_from(state, spec, samples, std::mem::take(&mut current.grad))?,
        }
        iterations += 1;
        current = eval(spec, &state.w, samples);
        if !current.grad_norm.is_finite() {
            return Err(Error::Divergence { stage_n: n, iteration: state.stage_iterations });
        }
        observer(state, Progress { iteration: iterations, grad_norm: current.grad_norm, risk: current.value });
        reached = threshold.is_some_and(|t| current.grad_norm <= t);
    }
    Ok(SolveOutcome {
        iterations,
        budget_exhausted: threshold.is_some() && !reached,
        grad_norm: current.grad_norm,
        risk: current.value,
    })
}
