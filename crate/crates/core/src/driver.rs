//! The adaptive sample-size scheme and the fixed-sample-size baseline.
//!
//! An adaptive run solves `R_{m0}` from `w = 0` until the gradient-norm
//! threshold holds, then repeatedly doubles the sample size (clamped at `N`),
//! warm-starting each stage from the previous stage's exit iterate, and stops
//! after the `n = N` stage. Training views are prefixes of the training set, so
//! the stage samples are nested.

use crate::bench::{Trace, TraceEvent, TraceMeta};
use crate::data::{Dataset, DatasetView};
use crate::erm::{self, RiskSpec, Weights};
use crate::error::{invalid, Error, Result};
use crate::schedule::{self, WstarEstimate};
use crate::solvers::{self, Method, Progress, SolverState, StepBudget};

/// Per-stage stopping rule for the stages after the bootstrap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetMode {
    /// Iterate until `‖∇R_n(w)‖ ≤ √(2c) V_n`.
    UntilThreshold,
    /// Run exactly the closed-form `s_n` iterations for the method.
    TheoreticalSn,
}

impl BudgetMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BudgetMode::UntilThreshold => "threshold",
            BudgetMode::TheoreticalSn => "theory",
        }
    }
}

impl std::str::FromStr for BudgetMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "threshold" | "until_threshold" => Ok(BudgetMode::UntilThreshold),
            "theory" | "theoretical_s_n" => Ok(BudgetMode::TheoreticalSn),
            other => Err(invalid(format!("unknown budget mode `{other}`"))),
        }
    }
}

pub const DEFAULT_PASS_CAP: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub method: Method,
    pub adaptive: bool,
    pub m0: usize,
    pub n_total: usize,
    pub budget_mode: BudgetMode,
    pub seed: u64,
    /// Trace sampling stride in iterations (epochs for SVRG).
    pub eval_every: usize,
    /// Effective-pass cap for fixed runs.
    pub pass_cap: usize,
    /// Safety cap per stage in threshold mode.
    pub max_iterations: usize,
    /// `‖w*‖²` used by the theoretical iteration counts.
    pub wstar: WstarEstimate,
}

impl RunConfig {
    pub fn new(method: Method, adaptive: bool, m0: usize, n_total: usize) -> Self {
        Self {
            method,
            adaptive,
            m0,
            n_total,
            budget_mode: BudgetMode::UntilThreshold,
            seed: 0,
            eval_every: 1,
            pass_cap: DEFAULT_PASS_CAP,
            max_iterations: solvers::DEFAULT_MAX_ITERATIONS,
            wstar: WstarEstimate::zero(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m0 == 0 || self.m0 > self.n_total {
            return Err(invalid(format!("need 1 <= m0 <= N, got m0 = {}, N = {}", self.m0, self.n_total)));
        }
        if self.eval_every == 0 {
            return Err(invalid("eval_every must be at least 1"));
        }
        if self.max_iterations == 0 {
            return Err(invalid("max_iterations must be at least 1"));
        }
        Ok(())
    }

    /// Short label such as `agd_ada` or `svrg_fixed`.
    pub fn label(&self) -> String {
        format!("{}_{}", self.method, if self.adaptive { "ada" } else { "fixed" })
    }
}

/// Outcome of one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    pub n: usize,
    pub iterations: usize,
    pub grad_evals_at_exit: u64,
    pub exit_grad_norm: f64,
    pub threshold: f64,
    pub budget_exhausted: bool,
    pub w_exit: Weights,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub weights: Weights,
    pub trace: Trace,
    pub stages: Vec<StageReport>,
}

/// Builds trace events from solver progress. Evaluation happens outside the
/// solver step and is not charged to the gradient counter.
struct Recorder<'a> {
    spec: &'a RiskSpec,
    full: DatasetView<'a>,
    test: Option<&'a Dataset>,
    eval_every: usize,
    events: Vec<TraceEvent>,
    error: Option<Error>,
}

impl<'a> Recorder<'a> {
    fn record(&mut self, state: &SolverState, stage_n: usize, grad_norm: f64, stage_risk: f64) {
        if self.error.is_some() {
            return;
        }
        if self.events.last().is_some_and(|e| e.grad_evals >= state.grad_evals()) {
            return;
        }
        let risk_value = if stage_n == self.full.len() {
            stage_risk
        } else {
            match erm::risk_value(self.spec, state.w(), &self.full) {
                Ok(v) => v,
                Err(e) => {
                    self.error = Some(e);
                    return;
                }
            }
        };
        let test_error = match self.test.map(|t| erm::test_error(state.w(), t)).transpose() {
            Ok(v) => v,
            Err(e) => {
                self.error = Some(e);
                return;
            }
        };
        self.events.push(TraceEvent {
            grad_evals: state.grad_evals(),
            stage_n,
            risk_value,
            grad_norm,
            stage_risk,
            test_error,
        });
    }

    fn on_progress(&mut self, state: &SolverState, stage_n: usize, p: Progress) {
        if p.iteration.is_multiple_of(self.eval_every) {
            self.record(state, stage_n, p.grad_norm, p.risk);
        }
    }

    fn finish(self) -> Result<Vec<TraceEvent>> {
        match self.error {
            Some(e) => Err(e),
            None => Ok(self.events),
        }
    }
}

fn check_inputs(config: &RunConfig, spec: &RiskSpec, train: &Dataset, test: Option<&Dataset>) -> Result<()> {
    config.validate()?;
    spec.validate()?;
    if train.len() < config.n_total {
        return Err(invalid(format!("N = {} exceeds the {} training samples", config.n_total, train.len())));
    }
    if let Some(t) = test {
        if t.is_empty() {
            return Err(Error::EmptyTestSet);
        }
    }
    Ok(())
}

fn meta(config: &RunConfig, spec: &RiskSpec, train: &Dataset) -> TraceMeta {
    TraceMeta { config: config.clone(), spec: *spec, dataset: train.name().to_string() }
}

fn weight_dim(train: &Dataset, test: Option<&Dataset>) -> usize {
    train.dim().max(test.map_or(0, Dataset::dim))
}

fn run_stage(
    state: &mut SolverState,
    spec: &RiskSpec,
    train: &Dataset,
    n: usize,
    budget: StepBudget,
    recorder: &mut Recorder<'_>,
) -> Result<StageReport> {
    let view = train.prefix(n)?;
    state.begin_stage();
    let outcome = solvers::solve_observed(state, spec, &view, budget, |st, p| recorder.on_progress(st, n, p))?;
    recorder.record(state, n, outcome.grad_norm, outcome.risk);
    Ok(StageReport {
        n,
        iterations: outcome.iterations,
        grad_evals_at_exit: state.grad_evals(),
        exit_grad_norm: outcome.grad_norm,
        threshold: schedule::stop_threshold(spec, n),
        budget_exhausted: outcome.budget_exhausted,
        w_exit: state.w().clone(),
    })
}

fn bootstrap_with(
    config: &RunConfig,
    spec: &RiskSpec,
    train: &Dataset,
    dim: usize,
    recorder: &mut Recorder<'_>,
) -> Result<(SolverState, StageReport)> {
    let mut state = SolverState::new(config.method, Weights::zeros(dim), config.seed);
    let budget = StepBudget::UntilThreshold {
        threshold: schedule::stop_threshold(spec, config.m0),
        max_iterations: config.max_iterations,
    };
    let report = run_stage(&mut state, spec, train, config.m0, budget, recorder)?;
    if report.budget_exhausted {
        return Err(Error::BudgetExhausted { stage_n: config.m0, iterations: report.iterations });
    }
    Ok((state, report))
}

/// Solves `R_{m0}` from `w = 0` until `‖∇R_{m0}(w)‖ ≤ √(2c) V_{m0}`.
pub fn bootstrap(config: &RunConfig, spec: &RiskSpec, train: &Dataset) -> Result<(SolverState, StageReport)> {
    check_inputs(config, spec, train, None)?;
    let mut recorder =
        Recorder { spec, full: train.prefix(config.n_total)?, test: None, eval_every: config.eval_every, events: vec![], error: None };
    bootstrap_with(config, spec, train, train.dim(), &mut recorder)
}

/// Closed-form iteration count for one stage of the given method.
pub fn theoretical_iterations(method: Method, spec: &RiskSpec, n: usize, wstar: &WstarEstimate) -> Result<usize> {
    match method {
        Method::Gd => schedule::iterations_gd(spec, n, wstar),
        Method::Agd => Ok(schedule::iterations_agd(spec, n, wstar)),
        Method::Svrg => Ok(schedule::iterations_svrg(spec, wstar)),
    }
}

/// The adaptive sample-size scheme.
pub fn adaptive_run(config: &RunConfig, spec: &RiskSpec, train: &Dataset, test: Option<&Dataset>) -> Result<RunOutput> {
    check_inputs(config, spec, train, test)?;
    if !config.adaptive {
        return Err(invalid("adaptive_run needs an adaptive config"));
    }
    let sizes = schedule::sample_sizes(config.m0, config.n_total)?;
    let mut recorder = Recorder {
        spec,
        full: train.prefix(config.n_total)?,
        test,
        eval_every: config.eval_every,
        events: vec![],
        error: None,
    };
    let (mut state, first) = bootstrap_with(config, spec, train, weight_dim(train, test), &mut recorder)?;
    let mut stages = vec![first];
    for &n in &sizes[1..] {
        let budget = match config.budget_mode {
            BudgetMode::UntilThreshold => StepBudget::UntilThreshold {
                threshold: schedule::stop_threshold(spec, n),
                max_iterations: config.max_iterations,
            },
            BudgetMode::TheoreticalSn => {
                StepBudget::fixed(theoretical_iterations(config.method, spec, n, &config.wstar)?)
            }
        };
        stages.push(run_stage(&mut state, spec, train, n, budget, &mut recorder)?);
    }
    let events = recorder.finish()?;
    Ok(RunOutput {
        weights: state.into_weights(),
        trace: Trace { events, meta: meta(config, spec, train) },
        stages,
    })
}

/// Iteration cap implied by the pass cap: a GD/AGD step costs one pass at
/// `n = N`, an SVRG epoch two.
pub fn pass_cap_iterations(method: Method, pass_cap: usize) -> usize {
    match method {
        Method::Gd | Method::Agd => pass_cap,
        Method::Svrg => pass_cap / 2,
    }
}

/// The method on the full `R_N` from `w = 0`, until the threshold holds or the
/// pass cap is reached.
pub fn fixed_run(config: &RunConfig, spec: &RiskSpec, train: &Dataset, test: Option<&Dataset>) -> Result<RunOutput> {
    check_inputs(config, spec, train, test)?;
    if config.adaptive {
        return Err(invalid("fixed_run needs a non-adaptive config"));
    }
    let n = config.n_total;
    let dim = weight_dim(train, test);
    let cap = pass_cap_iterations(config.method, config.pass_cap).min(config.max_iterations);
    let mut state = SolverState::new(config.method, Weights::zeros(dim), config.seed);
    let threshold = schedule::stop_threshold(spec, n);
    let trace_meta = meta(config, spec, train);
    if cap == 0 {
        let g = erm::risk_value_and_grad(spec, state.w(), &train.prefix(n)?)?;
        let report = StageReport {
            n,
            iterations: 0,
            grad_evals_at_exit: 0,
            exit_grad_norm: g.grad_norm,
            threshold,
            budget_exhausted: g.grad_norm > threshold,
            w_exit: state.w().clone(),
        };
        return Ok(RunOutput { weights: state.into_weights(), trace: Trace { events: vec![], meta: trace_meta }, stages: vec![report] });
    }
    let mut recorder =
        Recorder { spec, full: train.prefix(n)?, test, eval_every: config.eval_every, events: vec![], error: None };
    let budget = StepBudget::UntilThreshold { threshold, max_iterations: cap };
    let report = run_stage(&mut state, spec, train, n, budget, &mut recorder)?;
    let events = recorder.finish()?;
    Ok(RunOutput { weights: state.into_weights(), trace: Trace { events, meta: trace_meta }, stages: vec![report] })
}

/// Dispatches on `config.adaptive`.
pub fn run(config: &RunConfig, spec: &RiskSpec, train: &Dataset, test: Option<&Dataset>) -> Result<RunOutput> {
    if config.adaptive {
        adaptive_run(config, spec, train, test)
    } else {
        fixed_run(config, spec, train, test)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::reference_optimum;
    use crate::data::{generate_synthetic, normalize};
    use crate::erm::{smoothness_constant, LossModel, SmoothnessMode};

    fn synth(n: usize, dim: usize, seed: u64) -> Dataset {
        normalize(&generate_synthetic(n, dim, 1.0, seed).unwrap().0)
    }

    fn spec_for(d: &Dataset, gamma: f64) -> RiskSpec {
        let m = smoothness_constant(LossModel::Logistic, d, SmoothnessMode::Tight);
        RiskSpec::new(LossModel::Logistic, 1.0, 0.5, gamma, m).unwrap()
    }

    #[test]
    fn bootstrap_trivial_when_threshold_loose() {
        let d = synth(64, 5, 0);
        let spec = spec_for(&d, 1e6);
        let cfg = RunConfig::new(Method::Agd, true, 16, 64);
        let (state, report) = bootstrap(&cfg, &spec, &d).unwrap();
        assert_eq!(report.iterations, 0);
        assert_eq!(state.grad_evals(), 0);
    }

    #[test]
    fn bootstrap_meets_threshold() {
        let d = synth(512, 10, 1);
        let spec = spec_for(&d, 1.0);
        for method in Method::ALL {
            let cfg = RunConfig::new(method, true, 64, 512);
            let (_, report) = bootstrap(&cfg, &spec, &d).unwrap();
            assert!(!report.budget_exhausted);
            assert!(report.exit_grad_norm <= report.threshold, "{method}");
        }
    }

    #[test]
    fn bootstrap_exhaustion_is_an_error() {
        let d = synth(128, 5, 2);
        let spec = spec_for(&d, 1e-6);
        let mut cfg = RunConfig::new(Method::Gd, true, 32, 128);
        cfg.max_iterations = 2;
        assert!(matches!(bootstrap(&cfg, &spec, &d), Err(Error::BudgetExhausted { stage_n: 32, .. })));
    }

    #[test]
    fn stage_sizes_follow_doubling_with_clamp() {
        let d = synth(10_000, 4, 3);
        let spec = spec_for(&d, 1.0);
        let cfg = RunConfig::new(Method::Agd, true, 400, 10_000);
        let out = adaptive_run(&cfg, &spec, &d, None).unwrap();
        let ns: Vec<usize> = out.stages.iter().map(|s| s.n).collect();
        assert_eq!(ns, vec![400, 800, 1600, 3200, 6400, 10_000]);
        let expected_count = 1 + (10_000f64 / 400.0).log2().ceil() as usize;
        assert_eq!(ns.len(), expected_count);
    }

    #[test]
    fn m0_equal_to_n_is_one_stage() {
        let d = synth(200, 4, 4);
        let spec = spec_for(&d, 1.0);
        let cfg = RunConfig::new(Method::Gd, true, 200, 200);
        let out = adaptive_run(&cfg, &spec, &d, None).unwrap();
        assert_eq!(out.stages.len(), 1);
        assert!(out.stages[0].exit_grad_norm <= out.stages[0].threshold);
    }

    #[test]
    fn theoretical_svrg_runs_three_epochs_per_stage() {
        let d = synth(1024, 6, 5);
        let spec = spec_for(&d, 1.0);
        let mut cfg = RunConfig::new(Method::Svrg, true, 128, 1024);
        cfg.budget_mode = BudgetMode::TheoreticalSn;
        let out = adaptive_run(&cfg, &spec, &d, None).unwrap();
        for s in &out.stages[1..] {
            assert_eq!(s.iterations, 3, "stage {}", s.n);
        }
    }

    #[test]
    fn warm_start_chain_matches_manual_stages() {
        let d = synth(800, 6, 6);
        let spec = spec_for(&d, 1.0);
        let cfg = RunConfig::new(Method::Agd, true, 100, 800);
        let out = adaptive_run(&cfg, &spec, &d, None).unwrap();
        for pair in out.stages.windows(2) {
            let mut st = SolverState::new(Method::Agd, pair[0].w_exit.clone(), cfg.seed);
            let budget = StepBudget::until_threshold(schedule::stop_threshold(&spec, pair[1].n));
            solvers::solve(&mut st, &spec, &d.prefix(pair[1].n).unwrap(), budget).unwrap();
            assert_eq!(st.w(), &pair[1].w_exit);
        }
        assert_eq!(out.weights, out.stages.last().unwrap().w_exit);
    }

    #[test]
    fn exit_certificate_against_reference() {
        let d = synth(1024, 8, 7);
        let spec = spec_for(&d, 1.0);
        for method in Method::ALL {
            let cfg = RunConfig::new(method, true, 128, 1024);
            let out = adaptive_run(&cfg, &spec, &d, None).unwrap();
            for s in &out.stages {
                assert!(!s.budget_exhausted);
                assert!(s.exit_grad_norm <= s.threshold);
                let view = d.prefix(s.n).unwrap();
                let reference = reference_optimum(&spec, &view, 1e-10).unwrap();
                let gap = erm::risk_value(&spec, &s.w_exit, &view).unwrap() - reference.risk_star;
                assert!(gap <= spec.v(s.n) + 1e-9, "{method} n={} gap={gap}", s.n);
            }
        }
    }

    #[test]
    fn trace_is_strictly_increasing_and_deterministic() {
        let d = synth(600, 6, 8);
        let (train, test) = crate::data::shuffle_and_split(&d, 500, 1).unwrap();
        let spec = spec_for(&train, 1.0);
        for method in Method::ALL {
            for adaptive in [true, false] {
                let mut cfg = RunConfig::new(method, adaptive, 50, 500);
                cfg.eval_every = 2;
                cfg.seed = 9;
                let a = run(&cfg, &spec, &train, Some(&test)).unwrap();
                let b = run(&cfg, &spec, &train, Some(&test)).unwrap();
                assert_eq!(a.trace, b.trace);
                assert!(!a.trace.events.is_empty());
                for w in a.trace.events.windows(2) {
                    assert!(w[0].grad_evals < w[1].grad_evals);
                    assert!(w[0].stage_n <= w[1].stage_n);
                }
                let last = a.trace.events.last().unwrap();
                assert_eq!(last.grad_evals, a.stages.last().unwrap().grad_evals_at_exit);
                assert!(last.test_error.is_some());
            }
        }
    }

    #[test]
    fn fixed_run_with_zero_pass_cap() {
        let d = synth(100, 4, 9);
        let spec = spec_for(&d, 1.0);
        let mut cfg = RunConfig::new(Method::Agd, false, 100, 100);
        cfg.pass_cap = 0;
        let out = fixed_run(&cfg, &spec, &d, None).unwrap();
        assert!(out.trace.events.is_empty());
        assert_eq!(out.weights, Weights::zeros(4));
    }

    #[test]
    fn fixed_run_respects_pass_cap() {
        let d = synth(300, 6, 10);
        let spec = spec_for(&d, 1e-4);
        for (method, cap) in [(Method::Gd, 7), (Method::Svrg, 7)] {
            let mut cfg = RunConfig::new(method, false, 300, 300);
            cfg.pass_cap = cap;
            let out = fixed_run(&cfg, &spec, &d, None).unwrap();
            let passes = out.stages[0].grad_evals_at_exit as f64 / 300.0;
            assert!(passes <= cap as f64);
            assert!(out.stages[0].budget_exhausted);
        }
    }

    #[test]
    fn mode_mismatch_is_rejected() {
        let d = synth(50, 3, 11);
        let spec = spec_for(&d, 1.0);
        let cfg = RunConfig::new(Method::Gd, false, 10, 50);
        assert!(adaptive_run(&cfg, &spec, &d, None).is_err());
        let cfg = RunConfig::new(Method::Gd, true, 10, 50);
        assert!(fixed_run(&cfg, &spec, &d, None).is_err());
        let cfg = RunConfig::new(Method::Gd, true, 60, 50);
        assert!(run(&cfg, &spec, &d, None).is_err());
    }
}
