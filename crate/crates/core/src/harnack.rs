//! Harnack exponent, Monte Carlo verification of
//! `(P_T f(y))^p <= P_T(f^p)(x) exp(p/(p-1) rho_T^2(x, y))`,
//! and the total-variation bound behind the strong Feller property.

use serde::{Deserialize, Serialize};

use crate::coupling::{map_coupled_paths, CouplingConfig};
use crate::error::{Result, SfdeError};
use crate::functionals::TestFunction;
use crate::noise::derive_seed;
use crate::segment::{segment_distance, Segment, SegmentGap, TimeGrid};
use crate::solver::{map_terminal_segments, SolverConfig};
use crate::stats::{agree, normal_quantile, McEstimate};

/// Multiplicative slack on the right-hand side in the verdict rule.
pub const VERDICT_SLACK: f64 = 1.02;

const GOLDEN: f64 = 0.618_033_988_749_894_9;

fn check_horizon(r: f64, horizon: f64) -> Result<()> {
    if !(horizon > r) {
        return Err(SfdeError::Domain(format!(
            "the Harnack inequality requires T > r, got T = {horizon}, r = {r}"
        )));
    }
    Ok(())
}

fn check_gaps(gap0: f64, gap_sup: f64) -> Result<()> {
    if !(gap0 >= 0.0 && gap_sup >= 0.0 && gap0.is_finite() && gap_sup.is_finite()) {
        return Err(SfdeError::Domain(format!("gaps must be finite and >= 0, got ({gap0}, {gap_sup})")));
    }
    Ok(())
}

/// The objective `gap0^2/(s - r) + s L^2 gap_sup^2` for a deadline `s`.
pub fn harnack_cost(gap0: f64, gap_sup: f64, lipschitz: f64, r: f64, s: f64) -> f64 {
    gap0 * gap0 / (s - r) + s * lipschitz * lipschitz * gap_sup * gap_sup
}

/// `rho_T^2` as a numeric infimum over `s` in `(r, T]` (golden-section search).
///
/// With `gap0 = 0` the infimum `r L^2 gap_sup^2` is approached as `s -> r`
/// and is returned even though it is not attained.
pub fn rho_sq_variational(gap0: f64, gap_sup: f64, lipschitz: f64, r: f64, horizon: f64) -> Result<f64> {
    check_horizon(r, horizon)?;
    check_gaps(gap0, gap_sup)?;
    let a = gap0 * gap0;
    let b = lipschitz * lipschitz * gap_sup * gap_sup;
    if a == 0.0 {
        return Ok(b * r);
    }
    let cost = |u: f64| a / u + b * (u + r);
    let span = horizon - r;
    let (mut lo, mut hi) = (0.0, span);
    let mut c = hi - GOLDEN * (hi - lo);
    let mut d = lo + GOLDEN * (hi - lo);
    let (mut fc, mut fd) = (cost(c), cost(d));
    while hi - lo > 1e-13 * span {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - GOLDEN * (hi - lo);
            fc = cost(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + GOLDEN * (hi - lo);
            fd = cost(d);
        }
    }
    Ok(cost(0.5 * (lo + hi)).min(cost(span)))
}

/// Closed form of `rho_T^2`: `gap0^2/(T - r) + T L^2 gap_sup^2` up to the
/// threshold `T* = r + gap0 / (L gap_sup)`, `2 L gap0 gap_sup + r L^2 gap_sup^2` beyond.
pub fn rho_sq_closed_form(gap0: f64, gap_sup: f64, lipschitz: f64, r: f64, horizon: f64) -> Result<f64> {
    check_horizon(r, horizon)?;
    check_gaps(gap0, gap_sup)?;
    if gap0 > gap_sup * (1.0 + 1e-12) {
        return Err(SfdeError::Contract(format!(
            "terminal gap {gap0} exceeds the sup gap {gap_sup}"
        )));
    }
    if gap_sup == 0.0 {
        return Ok(0.0);
    }
    let lg = lipschitz * gap_sup;
    if lg == 0.0 || horizon <= r + gap0 / lg {
        Ok(gap0 * gap0 / (horizon - r) + horizon * lg * lg)
    } else {
        Ok(2.0 * lipschitz * gap0 * gap_sup + r * lg * lg)
    }
}

/// Deadline `s` in `(r, T]` minimising the Harnack cost.
pub fn optimal_deadline(gap0: f64, gap_sup: f64, lipschitz: f64, r: f64, horizon: f64) -> Result<f64> {
    check_horizon(r, horizon)?;
    let lg = lipschitz * gap_sup;
    if gap0 == 0.0 {
        return Ok(r);
    }
    if lg == 0.0 {
        return Ok(horizon);
    }
    Ok((r + gap0 / lg).min(horizon))
}

/// [`optimal_deadline`] rounded to the grid and clamped to `[r + dt, T]`.
pub fn auto_deadline(gap: &SegmentGap, lipschitz: f64, grid: &TimeGrid, horizon: f64) -> Result<f64> {
    let r = grid.memory();
    let s = optimal_deadline(gap.gap0, gap.gap_sup, lipschitz, r, horizon)?;
    let n_max = grid.steps(horizon)?;
    let k = ((s / grid.dt()).round() as usize).clamp(grid.n_memory() + 1, n_max);
    Ok(k as f64 * grid.dt())
}

/// Importance-weighted estimate of `P_T f(y) = E[D f(X_T)]` from coupled paths started at `(x0, y0)`.
pub fn estimate_ptf_weighted(
    config: &SolverConfig,
    x0: &Segment,
    y0: &Segment,
    f: &TestFunction,
    coupling: &CouplingConfig,
    n_paths: usize,
    master_seed: u64,
) -> Result<McEstimate> {
    let steps = config.steps();
    let values = map_coupled_paths(config, x0, y0, coupling, n_paths, master_seed, |path, traj, ledger| {
        let xs = traj.x_history.view_at_step(steps);
        if xs.values() != traj.y_history.view_at_step(steps).values() {
            return Err(SfdeError::NotCoupled { path });
        }
        Ok(ledger.density() * f.eval(&xs))
    })?;
    Ok(McEstimate::from_values(&values))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarnackParams {
    pub p: f64,
    pub f: TestFunction,
}

impl HarnackParams {
    pub fn new(p: f64, f: TestFunction) -> Result<Self> {
        if !(p > 1.0 && p.is_finite()) {
            return Err(SfdeError::Domain(format!("p must exceed 1, got {p}")));
        }
        if !f.is_nonnegative() || f.sup_bound().is_none() {
            return Err(SfdeError::Domain(format!("{} is not a non-negative bounded functional", f.label())));
        }
        Ok(Self { p, f })
    }

    /// Conjugate exponent `p / (p - 1)`.
    pub fn q(&self) -> f64 {
        self.p / (self.p - 1.0)
    }
}

/// Point value with a confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bracketed {
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossCheck {
    pub direct: McEstimate,
    pub weighted: McEstimate,
    /// Agreement within 3 combined standard errors.
    pub agree: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnackReport {
    pub function: String,
    pub p: f64,
    pub gap: SegmentGap,
    pub lipschitz: f64,
    pub rho_sq: f64,
    /// `(P_T f(y))^p`
    pub lhs: Bracketed,
    /// `P_T(f^p)(x) exp(q rho^2)`
    pub rhs: Bracketed,
    /// `P_T(f^p)(x)` alone.
    pub ptfp_x: McEstimate,
    pub s: f64,
    pub epsilon: f64,
    /// Exponent `gap0^2/((s - r)(1 - eps^2)) + s L^2 gap_sup^2` for the chosen `s`.
    pub exponent_at_s: f64,
    /// Right-hand side with `exponent_at_s` in place of `rho^2`.
    pub rhs_at_s: f64,
    pub cross_check: CrossCheck,
    pub confidence: f64,
    pub pass: bool,
}

/// Runs the Harnack comparison for every `(f, p)` pair on shared path sets:
/// direct paths from `y0` for the left side, coupled paths from `(x0, y0)`
/// for `P_T(f^p)(x)` and the weighted cross-check.
#[allow(clippy::too_many_arguments)]
pub fn harnack_sweep(
    config: &SolverConfig,
    x0: &Segment,
    y0: &Segment,
    functions: &[TestFunction],
    ps: &[f64],
    coupling: &CouplingConfig,
    n_paths: usize,
    master_seed: u64,
    confidence: f64,
) -> Result<Vec<HarnackReport>> {
    let params: Vec<Vec<HarnackParams>> = functions
        .iter()
        .map(|f| ps.iter().map(|&p| HarnackParams::new(p, *f)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let grid = config.grid();
    let r = grid.memory();
    let horizon = config.horizon();
    check_horizon(r, horizon)?;
    let gap = segment_distance(&x0.view(), &y0.view())?;
    let lipschitz = config.drift().lipschitz();
    let rho_sq = rho_sq_variational(gap.gap0, gap.gap_sup, lipschitz, r, horizon)?;
    let eps = coupling.epsilon();
    let exponent_at_s = gap.gap0 * gap.gap0 / ((coupling.s - r) * (1.0 - eps * eps))
        + coupling.s * lipschitz * lipschitz * gap.gap_sup * gap.gap_sup;

    let steps = config.steps();
    let nf = functions.len();
    let np = ps.len();
    // Per coupled path: f(X_T) and D f(X_T) for every f.
    let coupled = map_coupled_paths(
        config,
        x0,
        y0,
        coupling,
        n_paths,
        derive_seed(master_seed, 0),
        |path, traj, ledger| {
            let xs = traj.x_history.view_at_step(steps);
            if xs.values() != traj.y_history.view_at_step(steps).values() {
                return Err(SfdeError::NotCoupled { path });
            }
            let dens = ledger.density();
            Ok(functions.iter().map(|f| f.eval(&xs)).map(|v| (v, dens * v)).collect::<Vec<_>>())
        },
    )?;
    let direct_y = map_terminal_segments(config, y0, n_paths, derive_seed(master_seed, 1), |_, ys| {
        functions.iter().map(|f| f.eval(ys)).collect::<Vec<_>>()
    })?;

    let z = normal_quantile(confidence);
    let mut reports = Vec::with_capacity(nf * np);
    for (j, f) in functions.iter().enumerate() {
        let direct = McEstimate::from_values(&direct_y.iter().map(|row| row[j]).collect::<Vec<_>>());
        let weighted = McEstimate::from_values(&coupled.iter().map(|row| row[j].1).collect::<Vec<_>>());
        let cross_check = CrossCheck { direct, weighted, agree: agree(&direct, &weighted, 3.0) };
        for hp in &params[j] {
            let p = hp.p;
            let fp = McEstimate::from_values(&coupled.iter().map(|row| row[j].0.powf(p)).collect::<Vec<_>>());
            let lhs = Bracketed {
                value: direct.mean.max(0.0).powf(p),
                lo: (direct.mean - z * direct.stderr).max(0.0).powf(p),
                hi: (direct.mean + z * direct.stderr).max(0.0).powf(p),
            };
            let factor = (hp.q() * rho_sq).exp();
            let rhs = Bracketed {
                value: fp.mean * factor,
                lo: (fp.mean - z * fp.stderr) * factor,
                hi: (fp.mean + z * fp.stderr) * factor,
            };
            let pass = lhs.hi <= rhs.lo * VERDICT_SLACK;
            reports.push(HarnackReport {
                function: f.label(),
                p,
                gap,
                lipschitz,
                rho_sq,
                lhs,
                rhs,
                ptfp_x: fp,
                s: coupling.s,
                epsilon: eps,
                exponent_at_s,
                rhs_at_s: fp.mean * (hp.q() * exponent_at_s).exp(),
                cross_check,
                confidence,
                pass,
            });
        }
    }
    Ok(reports)
}

/// Harnack check for a single `(p, f)`.
pub fn harnack_check(
    config: &SolverConfig,
    x0: &Segment,
    y0: &Segment,
    params: &HarnackParams,
    coupling: &CouplingConfig,
    n_paths: usize,
    master_seed: u64,
    confidence: f64,
) -> Result<HarnackReport> {
    let mut v = harnack_sweep(config, x0, y0, &[params.f], &[params.p], coupling, n_paths, master_seed, confidence)?;
    Ok(v.remove(0))
}

fn tv_exponent(gap0_term: f64, gap_sup: f64, lipschitz: f64, r: f64, horizon: f64, epsilon: f64) -> Result<f64> {
    check_horizon(r, horizon)?;
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(SfdeError::Domain(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    Ok(2.0 * (gap0_term / ((horizon - r) * (1.0 - epsilon * epsilon)) + horizon * lipschitz * lipschitz * gap_sup * gap_sup))
}

/// `sqrt(exp(2 (gap0^2/((T - r)(1 - eps^2)) + T L^2 gap_sup^2)) - 1)`, a bound on
/// `|P_T f(x) - P_T f(y)| / ||f||_inf`.
pub fn tv_bound(gap0: f64, gap_sup: f64, lipschitz: f64, r: f64, horizon: f64, epsilon: f64) -> Result<f64> {
    let e = tv_exponent(gap0 * gap0, gap_sup, lipschitz, r, horizon, epsilon)?;
    Ok(e.exp_m1().sqrt())
}

/// Variant with the terminal gap entering to the first power.
pub fn tv_bound_unsquared(gap0: f64, gap_sup: f64, lipschitz: f64, r: f64, horizon: f64, epsilon: f64) -> Result<f64> {
    let e = tv_exponent(gap0, gap_sup, lipschitz, r, horizon, epsilon)?;
    Ok(e.exp_m1().sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FellerRow {
    pub delta: f64,
    pub function: String,
    pub sup_f: f64,
    /// Paired estimate of `P_T f(x) - P_T f(y)` with common noise.
    pub difference: McEstimate,
    pub bound: f64,
    pub bound_unsquared: f64,
    /// `|difference| - 3 stderr <= sup_f * bound`
    pub within_bound: bool,
}

/// Compares `|P_T f(x0) - P_T f(x0 + delta * direction)|` with the total-variation
/// bound for each `delta`, using common random numbers for the two starts.
#[allow(clippy::too_many_arguments)]
pub fn strong_feller_probe(
    config: &SolverConfig,
    x0: &Segment,
    direction: &Segment,
    deltas: &[f64],
    functions: &[TestFunction],
    n_paths: usize,
    master_seed: u64,
    epsilon: f64,
) -> Result<Vec<FellerRow>> {
    let r = config.grid().memory();
    let horizon = config.horizon();
    check_horizon(r, horizon)?;
    let norm = direction.sup_norm();
    if norm == 0.0 {
        return Err(SfdeError::Domain("perturbation direction must be non-zero".into()));
    }
    let unit = Segment::zeros(*direction.grid()).shifted(direction, 1.0 / norm)?;
    let sups: Vec<f64> = functions
        .iter()
        .map(|f| f.sup_bound().ok_or_else(|| SfdeError::Domain(format!("{} is unbounded", f.label()))))
        .collect::<Result<_>>()?;
    let eval_all = |_: u64, s: &crate::segment::SegmentView<'_>| functions.iter().map(|f| f.eval(s)).collect::<Vec<_>>();
    let base = map_terminal_segments(config, x0, n_paths, master_seed, eval_all)?;
    let lipschitz = config.drift().lipschitz();
    let mut rows = Vec::with_capacity(deltas.len() * functions.len());
    for &delta in deltas {
        let y0 = x0.shifted(&unit, delta)?;
        let gap = segment_distance(&x0.view(), &y0.view())?;
        let bound = tv_bound(gap.gap0, gap.gap_sup, lipschitz, r, horizon, epsilon)?;
        let bound_unsquared = tv_bound_unsquared(gap.gap0, gap.gap_sup, lipschitz, r, horizon, epsilon)?;
        let moved = map_terminal_segments(config, &y0, n_paths, master_seed, eval_all)?;
        for (j, f) in functions.iter().enumerate() {
            let diffs: Vec<f64> = base.iter().zip(&moved).map(|(a, b)| a[j] - b[j]).collect();
            let difference = McEstimate::from_values(&diffs);
            rows.push(FellerRow {
                delta,
                function: f.label(),
                sup_f: sups[j],
                difference,
                bound,
                bound_unsquared,
                within_bound: difference.mean.abs() - 3.0 * difference.stderr <= sups[j] * bound,
            });
        }
    }
    Ok(rows)
}
