//! Reference optima, suboptimality and effective-pass accounting, trace CSVs
//! and the adaptive-versus-fixed comparison table.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::data::{Dataset, DatasetView};
use crate::driver::{self, RunConfig, RunOutput};
use crate::erm::{self, RiskSpec, Weights};
use crate::error::{invalid, Error, Result};
use crate::solvers::{self, Method, SolverState, StepBudget};

/// One sampled point of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    /// Cumulative per-sample gradient evaluations.
    pub grad_evals: u64,
    /// Sample size of the stage being solved.
    pub stage_n: usize,
    /// `R_N(w)` on the full training prefix.
    pub risk_value: f64,
    /// `‖∇R_n(w)‖` of the current stage.
    pub grad_norm: f64,
    /// `R_n(w)` of the current stage.
    pub stage_risk: f64,
    pub test_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceMeta {
    pub config: RunConfig,
    pub spec: RiskSpec,
    pub dataset: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
    pub meta: TraceMeta,
}

/// High-accuracy minimizer of `R_n` used to measure suboptimality.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceOptimum {
    pub n: usize,
    pub w_star: Weights,
    pub risk_star: f64,
    pub grad_norm_at_star: f64,
    pub tolerance: f64,
}

impl ReferenceOptimum {
    /// `R_n(w) − R_n(w_n*)` on the view this optimum was computed for.
    pub fn suboptimality(&self, spec: &RiskSpec, w: &[f64], view: &DatasetView<'_>) -> Result<f64> {
        if view.len() != self.n {
            return Err(invalid(format!("reference is for n = {}, view has {}", self.n, view.len())));
        }
        Ok(erm::risk_value(spec, w, view)? - self.risk_star)
    }
}

pub const DEFAULT_REFERENCE_TOLERANCE: f64 = 1e-10;
pub const REFERENCE_MAX_ITERATIONS: usize = 10_000_000;

/// Minimizes `R_n` from `w = 0` with accelerated gradient descent (tight `M`)
/// until `‖∇R_n(w)‖ ≤ tolerance`.
pub fn reference_optimum(spec: &RiskSpec, view: &DatasetView<'_>, tolerance: f64) -> Result<ReferenceOptimum> {
    reference_optimum_from(spec, view, tolerance, Weights::zeros(view.dim()))
}

/// [`reference_optimum`] started from `start`.
pub fn reference_optimum_from(
    spec: &RiskSpec,
    view: &DatasetView<'_>,
    tolerance: f64,
    start: Weights,
) -> Result<ReferenceOptimum> {
    if !(tolerance > 0.0) {
        return Err(invalid(format!("tolerance must be positive, got {tolerance}")));
    }
    if view.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let tight = erm::tight_smoothness(spec.loss, view.samples());
    // A zero-feature view has a zero loss Hessian; any positive M is valid.
    let solve_spec = RiskSpec { m: if tight > 0.0 { tight } else { spec.mu(view.len()) }, ..*spec };
    let mut state = SolverState::new(Method::Agd, start, 0);
    let budget = StepBudget::UntilThreshold { threshold: tolerance, max_iterations: REFERENCE_MAX_ITERATIONS };
    let out = solvers::solve(&mut state, &solve_spec, view, budget)?;
    if out.budget_exhausted {
        return Err(Error::BudgetExhausted { stage_n: view.len(), iterations: out.iterations });
    }
    Ok(ReferenceOptimum {
        n: view.len(),
        w_star: state.into_weights(),
        risk_star: out.risk,
        grad_norm_at_star: out.grad_norm,
        tolerance,
    })
}

/// `grad_evals / N`.
pub fn effective_passes(grad_evals: u64, n_total: usize) -> f64 {
    grad_evals as f64 / n_total as f64
}

pub const CSV_HEADER: &str = "effective_passes,grad_evals,stage_n,suboptimality,grad_norm,test_error";

/// Writes one CSV row per trace event, with suboptimality measured against `reference`
/// (which must be the optimum of `R_N`).
pub fn emit_csv<W: Write>(trace: &Trace, reference: &ReferenceOptimum, mut sink: W) -> Result<()> {
    let n_total = trace.meta.config.n_total;
    if reference.n != n_total {
        return Err(invalid(format!("reference is for n = {}, trace final stage is {n_total}", reference.n)));
    }
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    for e in &trace.events {
        let sub = (e.risk_value - reference.risk_star).max(0.0);
        let _ = write!(
            out,
            "{:.16e},{},{},{:.16e},{:.16e},",
            effective_passes(e.grad_evals, n_total),
            e.grad_evals,
            e.stage_n,
            sub,
            e.grad_norm
        );
        if let Some(t) = e.test_error {
            let _ = write!(out, "{t:.16e}");
        }
        out.push('\n');
    }
    sink.write_all(out.as_bytes())?;
    sink.flush()?;
    Ok(())
}

/// One parsed row of a trace CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub effective_passes: f64,
    pub grad_evals: u64,
    pub stage_n: usize,
    pub suboptimality: f64,
    pub grad_norm: f64,
    pub test_error: Option<f64>,
}

/// Reads back a file written by [`emit_csv`].
pub fn parse_csv<R: BufRead>(reader: R) -> Result<Vec<CsvRow>> {
    let mut lines = reader.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim_end() != CSV_HEADER {
        return Err(Error::Parse { line: 1, message: "missing trace header".into() });
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let lineno = i + 2;
        let bad = |message: String| Error::Parse { line: lineno, message };
        let cells: Vec<&str> = line.trim_end().split(',').collect();
        if cells.len() != 6 {
            return Err(bad(format!("expected 6 fields, got {}", cells.len())));
        }
        let float = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("`{s}`: {e}")));
        rows.push(CsvRow {
            effective_passes: float(cells[0])?,
            grad_evals: cells[1].parse().map_err(|e| bad(format!("`{}`: {e}", cells[1])))?,
            stage_n: cells[2].parse().map_err(|e| bad(format!("`{}`: {e}", cells[2])))?,
            suboptimality: float(cells[3])?,
            grad_norm: float(cells[4])?,
            test_error: if cells[5].is_empty() { None } else { Some(float(cells[5])?) },
        });
    }
    Ok(rows)
}

/// Effective passes at the first event with `R_N(w) − R_N* ≤ target`.
pub fn passes_to_suboptimality(trace: &Trace, reference: &ReferenceOptimum, target: f64) -> Option<f64> {
    trace
        .events
        .iter()
        .find(|e| e.risk_value - reference.risk_star <= target)
        .map(|e| effective_passes(e.grad_evals, trace.meta.config.n_total))
}

/// Smallest test error in the trace and the passes at which it first appears.
pub fn min_test_error(trace: &Trace) -> Option<(f64, f64)> {
    let mut best: Option<(f64, u64)> = None;
    for e in &trace.events {
        if let Some(t) = e.test_error {
            if best.is_none_or(|(b, _)| t < b) {
                best = Some((t, e.grad_evals));
            }
        }
    }
    best.map(|(t, g)| (t, effective_passes(g, trace.meta.config.n_total)))
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub method: Method,
    pub adaptive: bool,
    pub seed: u64,
    /// Error message when the run failed.
    pub failure: Option<String>,
    pub passes_to_vn: Option<f64>,
    pub passes_to_min_test_error: Option<f64>,
    pub min_test_error: Option<f64>,
    pub final_test_error: Option<f64>,
    /// Passes to `V_N` of the fixed run of the same method divided by this row's.
    pub speedup_vs_fixed: Option<f64>,
}

#[derive(Debug)]
pub struct CompareTable {
    pub reference: ReferenceOptimum,
    pub v_n: f64,
    pub rows: Vec<CompareRow>,
    pub runs: Vec<Result<RunOutput>>,
}

pub const SUMMARY_HEADER: &str = "method,adaptive,passes_to_VN,passes_to_min_test_error,min_test_error,speedup_vs_fixed";

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
}

fn opt_text(v: Option<f64>, failed: bool) -> String {
    match v {
        Some(x) => format!("{x:.4}"),
        None if failed => "diverged".into(),
        None => "-".into(),
    }
}

impl CompareTable {
    pub fn render_csv(&self) -> String {
        let mut out = String::from(SUMMARY_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.method,
                r.adaptive,
                opt_cell(r.passes_to_vn),
                opt_cell(r.passes_to_min_test_error),
                opt_cell(r.min_test_error),
                opt_cell(r.speedup_vs_fixed)
            );
        }
        out
    }

    pub fn render_text(&self) -> String {
        let mut out = format!(
            "{:<8} {:<9} {:>14} {:>18} {:>14} {:>10}\n",
            "method", "adaptive", "passes_to_VN", "passes_to_min_err", "min_test_err", "speedup"
        );
        for r in &self.rows {
            let failed = r.failure.is_some();
            let _ = writeln!(
                out,
                "{:<8} {:<9} {:>14} {:>18} {:>14} {:>10}",
                r.method.as_str(),
                r.adaptive,
                opt_text(r.passes_to_vn, failed),
                opt_text(r.passes_to_min_test_error, failed),
                opt_text(r.min_test_error, failed),
                opt_text(r.speedup_vs_fixed, false)
            );
        }
        for r in self.rows.iter().filter(|r| r.failure.is_some()) {
            let _ = writeln!(out, "note: {} {} failed: {}", r.method, if r.adaptive { "ada" } else { "fixed" }, r.failure.as_deref().unwrap_or(""));
        }
        let _ = writeln!(out, "V_N = {:.6e}, reference R_N* = {:.12e}", self.v_n, self.reference.risk_star);
        out
    }
}

/// Runs every config (concurrently, results in input order) and summarizes them
/// against the reference optimum of `R_N`.
pub fn compare_matrix(configs: &[RunConfig], spec: &RiskSpec, train: &Dataset, test: Option<&Dataset>) -> Result<CompareTable> {
    let first = configs.first().ok_or_else(|| invalid("compare needs at least one config"))?;
    let n_total = first.n_total;
    if configs.iter().any(|c| c.n_total != n_total) {
        return Err(invalid("all configs must share N"));
    }
    let full = train.prefix(n_total)?;
    let reference = reference_optimum(spec, &full, DEFAULT_REFERENCE_TOLERANCE)?;
    let v_n = spec.v(n_total);
    let runs: Vec<Result<RunOutput>> = configs.par_iter().map(|c| driver::run(c, spec, train, test)).collect();
    let mut rows: Vec<CompareRow> = configs
        .iter()
        .zip(&runs)
        .map(|(c, run)| {
            let mut row = CompareRow {
                method: c.method,
                adaptive: c.adaptive,
                seed: c.seed,
                failure: None,
                passes_to_vn: None,
                passes_to_min_test_error: None,
                min_test_error: None,
                final_test_error: None,
                speedup_vs_fixed: None,
            };
            match run {
                Ok(out) => {
                    row.passes_to_vn = passes_to_suboptimality(&out.trace, &reference, v_n);
                    if let Some((t, p)) = min_test_error(&out.trace) {
                        row.min_test_error = Some(t);
                        row.passes_to_min_test_error = Some(p);
                    }
                    row.final_test_error = out.trace.events.last().and_then(|e| e.test_error);
                }
                Err(e) => row.failure = Some(e.to_string()),
            }
            row
        })
        .collect();
    for i in 0..rows.len() {
        if rows[i].failure.is_some() {
            continue;
        }
        let baseline = (0..rows.len())
            .find(|&j| j != i && !rows[j].adaptive && rows[j].method == rows[i].method && rows[j].failure.is_none());
        if let (Some(j), Some(own)) = (baseline, rows[i].passes_to_vn) {
            if let Some(base) = rows[j].passes_to_vn {
                if own > 0.0 {
                    rows[i].speedup_vs_fixed = Some(base / own);
                }
            }
        }
    }
    Ok(CompareTable { reference, v_n, rows, runs })
}
