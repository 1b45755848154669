//! Statistical accuracy, sample-size growth, per-stage solver parameters and
//! the closed-form iteration and complexity bounds.
//!
//! Logarithm bases follow the derivations: the generic linear-rate bound is a
//! ratio of logs (base-free), the accelerated-gradient bound uses the natural
//! log, and the SVRG bounds use `log₂` (the contraction factor is below 1/2).
//! Every `s_n` is integerized as `floor(bound) + 1`.

use std::fmt::Write as _;

use crate::erm::RiskSpec;
use crate::error::{invalid, Error, Result};

/// Where an estimate of `‖w*‖²` came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WstarSource {
    User,
    ReferenceSolve,
    ZeroDefault,
}

/// Estimate of `‖w*‖²`, the squared norm of the expected-loss minimizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WstarEstimate {
    pub norm_sq: f64,
    pub source: WstarSource,
}

impl WstarEstimate {
    pub fn zero() -> Self {
        Self { norm_sq: 0.0, source: WstarSource::ZeroDefault }
    }

    pub fn user(norm_sq: f64) -> Result<Self> {
        Self::with_source(norm_sq, WstarSource::User)
    }

    pub fn with_source(norm_sq: f64, source: WstarSource) -> Result<Self> {
        if !(norm_sq >= 0.0 && norm_sq.is_finite()) {
            return Err(invalid(format!("‖w*‖² must be finite and nonnegative, got {norm_sq}")));
        }
        Ok(Self { norm_sq, source })
    }
}

impl Default for WstarEstimate {
    fn default() -> Self {
        Self::zero()
    }
}

/// `V_n = γ / n^α`.
pub fn statistical_accuracy(spec: &RiskSpec, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(invalid("statistical accuracy needs n >= 1"));
    }
    Ok(spec.v(n))
}

/// `min(2m, N)`.
pub fn next_sample_size(m: usize, n_total: usize) -> usize {
    (2 * m).min(n_total)
}

/// The sequence `m0, 2m0, 4m0, …, N` visited by the adaptive scheme.
pub fn sample_sizes(m0: usize, n_total: usize) -> Result<Vec<usize>> {
    if m0 == 0 || m0 > n_total {
        return Err(invalid(format!("need 1 <= m0 <= N, got m0 = {m0}, N = {n_total}")));
    }
    let mut sizes = vec![m0];
    let mut m = m0;
    while m < n_total {
        m = next_sample_size(m, n_total);
        sizes.push(m);
    }
    Ok(sizes)
}

/// Gradient-norm level `√(2c) V_n` below which `R_n(w) − R_n(w_n*) ≤ V_n`.
pub fn stop_threshold(spec: &RiskSpec, n: usize) -> f64 {
    (2.0 * spec.c).sqrt() * spec.v(n)
}

/// Accelerated gradient step size and momentum: `η = 1/(cV_n + M)` and
/// `β = (√(cV_n+M) − √(cV_n)) / (√(cV_n+M) + √(cV_n))`.
pub fn agd_params(spec: &RiskSpec, n: usize) -> (f64, f64) {
    let mu = spec.mu(n);
    let l = mu + spec.m;
    let eta = 1.0 / l;
    let beta = (l.sqrt() - mu.sqrt()) / (l.sqrt() + mu.sqrt());
    (eta, beta)
}

/// SVRG inner-loop length, step size and linear rate for stage `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvrgParams {
    pub q: usize,
    pub eta: f64,
    pub rho: f64,
    /// `(M + cV_n) / (n cV_n)`; the rate bound is below 1/2 only when this is at most 0.02.
    pub size_ratio: f64,
    pub warning: bool,
}

/// `q = n`, `η = 0.1/(M + cV_n)` and `ρ = (M + cV_n)/(0.08 n cV_n) + 1/4`, which
/// for `γ = 1` reads `(M n^α + c)/(0.08 n c) + 1/4`.
pub fn svrg_params(spec: &RiskSpec, n: usize) -> SvrgParams {
    let mu = spec.mu(n);
    let l = spec.m + mu;
    let size_ratio = l / (n as f64 * mu);
    SvrgParams {
        q: n,
        eta: 0.1 / l,
        rho: size_ratio / 0.08 + 0.25,
        size_ratio,
        warning: size_ratio > 0.02,
    }
}

/// `3·2^α + (2^α − 1)(2 + (c/2)‖w*‖²)`.
fn generic_argument(spec: &RiskSpec, wstar: &WstarEstimate) -> f64 {
    let p = 2f64.powf(spec.alpha);
    3.0 * p + (p - 1.0) * (2.0 + 0.5 * spec.c * wstar.norm_sq)
}

/// `6·2^α + (2^α − 1)(4 + c‖w*‖²)`.
fn agd_argument(spec: &RiskSpec, wstar: &WstarEstimate) -> f64 {
    let p = 2f64.powf(spec.alpha);
    6.0 * p + (p - 1.0) * (4.0 + spec.c * wstar.norm_sq)
}

fn integerize(bound: f64) -> usize {
    bound.floor() as usize + 1
}

/// Real-valued generic bound `−log(arg)/log ρ`.
pub fn iterations_generic_bound(rho: f64, spec: &RiskSpec, wstar: &WstarEstimate) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(invalid(format!("linear rate must lie in (0, 1), got {rho}")));
    }
    Ok(-generic_argument(spec, wstar).ln() / rho.ln())
}

/// Stage iterations for any method contracting the suboptimality by `rho` per iteration.
pub fn iterations_generic(rho: f64, spec: &RiskSpec, wstar: &WstarEstimate) -> Result<usize> {
    iterations_generic_bound(rho, spec, wstar).map(integerize)
}

/// `√((n^α M + cγ)/(cγ)) · ln[6·2^α + (2^α − 1)(4 + c‖w*‖²)]`.
pub fn iterations_agd_bound(spec: &RiskSpec, n: usize, wstar: &WstarEstimate) -> f64 {
    let cg = spec.c * spec.gamma;
    let kappa_sqrt = (((n as f64).powf(spec.alpha) * spec.m + cg) / cg).sqrt();
    kappa_sqrt * agd_argument(spec, wstar).ln()
}

pub fn iterations_agd(spec: &RiskSpec, n: usize, wstar: &WstarEstimate) -> usize {
    integerize(iterations_agd_bound(spec, n, wstar))
}

/// `log₂[3·2^α + (2^α − 1)(2 + (c/2)‖w*‖²)]`; the same for every stage.
pub fn iterations_svrg_bound(spec: &RiskSpec, wstar: &WstarEstimate) -> f64 {
    generic_argument(spec, wstar).log2()
}

pub fn iterations_svrg(spec: &RiskSpec, wstar: &WstarEstimate) -> usize {
    integerize(iterations_svrg_bound(spec, wstar))
}

/// Gradient descent with step `1/(M + cV_n)` contracts by `1 − cV_n/(M + cV_n)`.
pub fn iterations_gd(spec: &RiskSpec, n: usize, wstar: &WstarEstimate) -> Result<usize> {
    let mu = spec.mu(n);
    iterations_generic(1.0 - mu / (spec.m + mu), spec, wstar)
}

/// Total per-sample gradient evaluations of adaptive AGD from `m0` to `N`:
/// `N[1 + log₂(N/m0) + (√2^α/(√2^α − 1))√(N^α M/(cγ))] · ln[6·2^α + (2^α−1)(4 + c‖w*‖²)]`.
/// Only defined when `N/m0` is an exact power of two.
pub fn total_complexity_agd(spec: &RiskSpec, n_total: usize, m0: usize, wstar: &WstarEstimate) -> Result<f64> {
    if m0 == 0 || n_total < m0 || !n_total.is_multiple_of(m0) || !(n_total / m0).is_power_of_two() {
        return Err(Error::NotPowerOfTwo { n_total, m0 });
    }
    let q = (n_total / m0).trailing_zeros() as f64;
    let n = n_total as f64;
    let root = 2f64.powf(spec.alpha).sqrt();
    let bracket = 1.0 + q + root / (root - 1.0) * (n.powf(spec.alpha) * spec.m / (spec.c * spec.gamma)).sqrt();
    Ok(n * bracket * agd_argument(spec, wstar).ln())
}

/// `4N · log₂[3·2^α + (2^α − 1)(2 + (c/2)‖w*‖²)]`.
pub fn total_complexity_svrg(spec: &RiskSpec, n_total: usize, wstar: &WstarEstimate) -> f64 {
    4.0 * n_total as f64 * iterations_svrg_bound(spec, wstar)
}

/// Bound on the expected suboptimality of the stage-`m` iterate for `R_n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarmStartBound {
    /// `δ_m + (2(n−m)/n)(V_{n−m} + V_m) + 2(V_m − V_n) + (c(V_m − V_n)/2)‖w*‖²`
    pub general: f64,
    /// For `n = 2m`: `δ_m + [2 + (1 − 2^{−α})(2 + (c/2)‖w*‖²)] V_m`.
    pub doubled: Option<f64>,
}

pub fn warm_start_bound(spec: &RiskSpec, m: usize, n: usize, delta_m: f64, wstar: &WstarEstimate) -> Result<WarmStartBound> {
    if m == 0 || m >= n {
        return Err(invalid(format!("warm start bound needs 1 <= m < n, got m = {m}, n = {n}")));
    }
    let (vm, vn, vd) = (spec.v(m), spec.v(n), spec.v(n - m));
    let general = delta_m
        + 2.0 * (n - m) as f64 / n as f64 * (vd + vm)
        + 2.0 * (vm - vn)
        + 0.5 * spec.c * (vm - vn) * wstar.norm_sq;
    let doubled = (n == 2 * m).then(|| {
        let coef = 2.0 + (1.0 - 2f64.powf(-spec.alpha)) * (2.0 + 0.5 * spec.c * wstar.norm_sq);
        delta_m + coef * vm
    });
    Ok(WarmStartBound { general, doubled })
}

/// Everything derived for one sample size.
#[derive(Debug, Clone, PartialEq)]
pub struct StagePlan {
    pub n: usize,
    pub v_n: f64,
    pub stop_threshold: f64,
    pub agd_eta: f64,
    pub agd_beta: f64,
    pub svrg_q: usize,
    pub svrg_eta: f64,
    pub svrg_rho: f64,
    pub svrg_warning: bool,
    /// Generic bound evaluated at the SVRG rate, when that rate is below one.
    pub s_n_generic: Option<usize>,
    pub s_n_agd: usize,
    pub s_n_svrg: usize,
}

impl StagePlan {
    pub fn new(spec: &RiskSpec, n: usize, wstar: &WstarEstimate) -> Result<Self> {
        let v_n = statistical_accuracy(spec, n)?;
        let (agd_eta, agd_beta) = agd_params(spec, n);
        let svrg = svrg_params(spec, n);
        Ok(Self {
            n,
            v_n,
            stop_threshold: stop_threshold(spec, n),
            agd_eta,
            agd_beta,
            svrg_q: svrg.q,
            svrg_eta: svrg.eta,
            svrg_rho: svrg.rho,
            svrg_warning: svrg.warning,
            s_n_generic: iterations_generic(svrg.rho, spec, wstar).ok(),
            s_n_agd: iterations_agd(spec, n, wstar),
            s_n_svrg: iterations_svrg(spec, wstar),
        })
    }
}

/// Stage plans for every size the adaptive scheme visits.
pub fn plan_stages(spec: &RiskSpec, m0: usize, n_total: usize, wstar: &WstarEstimate) -> Result<Vec<StagePlan>> {
    sample_sizes(m0, n_total)?.into_iter().map(|n| StagePlan::new(spec, n, wstar)).collect()
}

/// Stage table plus the two total-complexity numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsReport {
    pub stages: Vec<StagePlan>,
    pub total_agd: std::result::Result<f64, String>,
    pub total_svrg: f64,
    /// Last stage was clamped to `N` instead of doubling.
    pub clamped: bool,
    /// `(ρ, s_n)` for an explicitly requested linear rate.
    pub generic: Option<(f64, std::result::Result<usize, String>)>,
}

impl BoundsReport {
    pub fn new(spec: &RiskSpec, m0: usize, n_total: usize, wstar: &WstarEstimate, rho: Option<f64>) -> Result<Self> {
        let stages = plan_stages(spec, m0, n_total, wstar)?;
        let clamped = stages.len() >= 2 && {
            let k = stages.len();
            stages[k - 1].n != 2 * stages[k - 2].n
        };
        Ok(Self {
            stages,
            total_agd: total_complexity_agd(spec, n_total, m0, wstar).map_err(|e| e.to_string()),
            total_svrg: total_complexity_svrg(spec, n_total, wstar),
            clamped,
            generic: rho.map(|r| (r, iterations_generic(r, spec, wstar).map_err(|e| e.to_string()))),
        })
    }

    /// Aligned plain-text table.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>8} {:>14} {:>14} {:>14} {:>14} {:>8} {:>14} {:>14} {:>9} {:>6} {:>6} {:>6}",
            "n", "V_n", "threshold", "agd_eta", "agd_beta", "svrg_q", "svrg_eta", "svrg_rho", "s_generic", "s_agd",
            "s_svrg", "warn"
        );
        for s in &self.stages {
            let _ = writeln!(
                out,
                "{:>8} {:>14.8e} {:>14.8e} {:>14.8e} {:>14.8e} {:>8} {:>14.8e} {:>14.8e} {:>9} {:>6} {:>6} {:>6}",
                s.n,
                s.v_n,
                s.stop_threshold,
                s.agd_eta,
                s.agd_beta,
                s.svrg_q,
                s.svrg_eta,
                s.svrg_rho,
                s.s_n_generic.map_or("-".to_string(), |v| v.to_string()),
                s.s_n_agd,
                s.s_n_svrg,
                if s.svrg_warning { "rho" } else { "" }
            );
        }
        if self.clamped {
            let _ = writeln!(out, "note: last stage clamped to N (N/m0 is not a power of two)");
        }
        match &self.total_agd {
            Ok(v) => {
                let _ = writeln!(out, "total_complexity_agd = {v:.10e}");
            }
            Err(e) => {
                let _ = writeln!(out, "total_complexity_agd = n/a ({e})");
            }
        }
        let _ = writeln!(out, "total_complexity_svrg = {:.10e}", self.total_svrg);
        if let Some((rho, s)) = &self.generic {
            match s {
                Ok(s) => {
                    let _ = writeln!(out, "s_generic(rho = {rho}) = {s}");
                }
                Err(e) => {
                    let _ = writeln!(out, "s_generic(rho = {rho}) = n/a ({e})");
                }
            }
        }
        out
    }

    /// CSV with one row per stage; totals follow as `#`-prefixed trailer lines.
    pub fn render_csv(&self) -> String {
        let mut out = String::from(
            "n,V_n,stop_threshold,agd_eta,agd_beta,svrg_q,svrg_eta,svrg_rho,svrg_warning,s_n_generic,s_n_agd,s_n_svrg\n",
        );
        for s in &self.stages {
            let _ = writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e},{:.16e},{},{},{},{}",
                s.n,
                s.v_n,
                s.stop_threshold,
                s.agd_eta,
                s.agd_beta,
                s.svrg_q,
                s.svrg_eta,
                s.svrg_rho,
                s.svrg_warning,
                s.s_n_generic.map_or(String::new(), |v| v.to_string()),
                s.s_n_agd,
                s.s_n_svrg
            );
        }
        match &self.total_agd {
            Ok(v) => {
                let _ = writeln!(out, "# total_complexity_agd,{v:.16e}");
            }
            Err(_) => out.push_str("# total_complexity_agd,\n"),
        }
        let _ = writeln!(out, "# total_complexity_svrg,{:.16e}", self.total_svrg);
        out
    }
}
