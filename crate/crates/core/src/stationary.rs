//! Long-run behaviour of the Ornstein-Uhlenbeck type example
//! `dX = (-lambda0 X + Z(X_t)) dt + dW` with bounded `Z`: variation-of-constants
//! residuals, exponential segment moments, approximate stationary draws and
//! per-function hyperboundedness ratios.

use serde::{Deserialize, Serialize};

use crate::drift::{DissipativeField, DriftSpec, MemoryFunctional};
use crate::error::{Result, SfdeError};
use crate::functionals::TestFunction;
use crate::noise::{derive_seed, IncrementSource, NoiseStream};
use crate::segment::{euclid, Segment, TrajectoryHistory};
use crate::solver::{map_terminal_segments, PathStepper, SolverConfig};
use crate::stats::{neumaier_sum, normal_upper_quantile, ols_slope, par_paths, McEstimate};

/// Exponents above this (natural-log scale) are flagged as overflow.
pub const MOMENT_EXPONENT_CAP: f64 = 700.0;

/// One-sided level of the trailing-half trend test.
pub const TREND_LEVEL: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuExampleConfig {
    pub lambda0: f64,
    pub memory: MemoryFunctional,
    /// Exponent of the moment `E exp(eps ||X_t||^2)`.
    pub moment_eps: f64,
    /// Candidate `lambda` of the integrability condition.
    pub lambda_target: f64,
}

impl OuExampleConfig {
    pub fn new(lambda0: f64, memory: MemoryFunctional, moment_eps: f64, lambda_target: f64) -> Result<Self> {
        if !(lambda0 > 0.0 && lambda0.is_finite()) {
            return Err(SfdeError::Domain(format!("lambda0 must be positive, got {lambda0}")));
        }
        if !(moment_eps >= 0.0 && moment_eps < lambda0) {
            return Err(SfdeError::Domain(format!(
                "moment exponent must lie in [0, lambda0) = [0, {lambda0}), got {moment_eps}"
            )));
        }
        if memory.declared_bound(1).is_none() {
            return Err(SfdeError::Domain("the memory functional must be bounded".into()));
        }
        Ok(Self { lambda0, memory, moment_eps, lambda_target })
    }

    pub fn drift(&self) -> DriftSpec {
        DriftSpec { dissipative: DissipativeField::Linear { lambda0: self.lambda0 }, memory: self.memory }
    }

    /// `4 (2 L + r L^2)`.
    pub fn condition_threshold(&self, r: f64) -> f64 {
        let l = self.memory.declared_lipschitz();
        4.0 * (2.0 * l + r * l * l)
    }

    pub fn condition(&self, r: f64) -> IntegrabilityCondition {
        let threshold = self.condition_threshold(r);
        IntegrabilityCondition {
            threshold,
            lambda_target: self.lambda_target,
            lambda0: self.lambda0,
            target_admissible: self.lambda_target > threshold,
            target_below_lambda0: self.lambda_target < self.lambda0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrabilityCondition {
    pub threshold: f64,
    pub lambda_target: f64,
    pub lambda0: f64,
    /// `lambda_target > 4 (2 L + r L^2)`
    pub target_admissible: bool,
    /// `lambda_target < lambda0`, so the target is covered by the moment bound.
    pub target_below_lambda0: bool,
}

impl IntegrabilityCondition {
    pub fn holds(&self) -> bool {
        self.target_admissible && self.target_below_lambda0
    }
}

/// Max over grid times of `|X(t) - RHS(t)|` where
/// `RHS(t) = e^{-lambda0 t} X(0) + sum_k e^{-lambda0 (t - t_k)} (Z(X_{t_k}) dt + dW_k)`.
///
/// `noise` must replay the increments that produced `trajectory`.
pub fn ou_identity_residual(
    config: &SolverConfig,
    trajectory: &TrajectoryHistory,
    noise: &mut impl IncrementSource,
) -> Result<f64> {
    let lambda0 = match config.drift().dissipative {
        DissipativeField::Linear { lambda0 } => lambda0,
        other => {
            return Err(SfdeError::Contract(format!("variation of constants needs a linear field, got {other:?}")))
        }
    };
    if trajectory.grid() != config.grid() {
        return Err(SfdeError::IncompatibleGrid("trajectory is not on the solver grid".into()));
    }
    let d = config.grid().dimension();
    let dt = config.grid().dt();
    let decay = (-lambda0 * dt).exp();
    let mut rhs = trajectory.at_step(0).to_vec();
    let mut dw = vec![0.0; d];
    let mut z = vec![0.0; d];
    let mut worst: f64 = 0.0;
    for k in 0..trajectory.steps() {
        noise.next_increment(&mut dw);
        config.drift().memory.eval_into(&trajectory.view_at_step(k), &mut z);
        for i in 0..d {
            rhs[i] = decay * (rhs[i] + z[i] * dt + dw[i]);
        }
        worst = worst.max(crate::segment::euclid_dist(trajectory.at_step(k + 1), &rhs));
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub t: f64,
    /// `E exp(eps ||X_t||^2)`
    pub segment: McEstimate,
    /// `E exp(eps |X(t)|^2)`
    pub endpoint: McEstimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendTest {
    /// Mean over paths of the per-path OLS slope on the trailing half.
    pub slope: f64,
    pub stderr: f64,
    pub z: f64,
    pub upward: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentTable {
    pub rows: Vec<MomentRow>,
    pub running_max: f64,
    pub overflow_flags: usize,
    pub trend: TrendTest,
}

impl MomentTable {
    /// Bounded-looking: no overflow and no significant upward trend.
    pub fn stabilized(&self) -> bool {
        self.overflow_flags == 0 && !self.trend.upward
    }
}

fn capped_exp(exponent: f64, flags: &mut usize) -> f64 {
    if exponent > MOMENT_EXPONENT_CAP {
        *flags += 1;
        MOMENT_EXPONENT_CAP.exp()
    } else {
        exponent.exp()
    }
}

/// Exponential moments of the segment sup norm (and of the endpoint) at
/// checkpoints `0, spacing, 2 spacing, ..., horizon`.
pub fn exp_moment_estimate(
    example: &OuExampleConfig,
    initial: &Segment,
    horizon: f64,
    checkpoint_spacing: f64,
    n_paths: usize,
    master_seed: u64,
) -> Result<MomentTable> {
    let grid = *initial.grid();
    let config = SolverConfig::new(grid, horizon, example.drift())?;
    let every = grid.steps(checkpoint_spacing)?;
    if every == 0 {
        return Err(SfdeError::Domain("checkpoint spacing must be positive".into()));
    }
    let total = config.steps();
    let n_checks = total / every + 1;
    let eps = example.moment_eps;
    let dt = grid.dt();

    let per_path = par_paths(n_paths, |path| {
        let mut noise = NoiseStream::new(master_seed, path).increments(dt);
        let mut stepper = PathStepper::new(&config, initial)?;
        let mut flags = 0usize;
        let mut seg = Vec::with_capacity(n_checks);
        let mut end = Vec::with_capacity(n_checks);
        for c in 0..n_checks {
            if c > 0 {
                stepper.advance(every, &mut noise, path)?;
            }
            let view = stepper.segment();
            let sup = view.sup_norm();
            seg.push(capped_exp(eps * sup * sup, &mut flags));
            let e = euclid(view.terminal());
            end.push(capped_exp(eps * e * e, &mut flags));
        }
        Ok((seg, end, flags))
    })?;

    let times: Vec<f64> = (0..n_checks).map(|c| (c * every) as f64 * dt).collect();
    let rows: Vec<MomentRow> = (0..n_checks)
        .map(|c| MomentRow {
            t: times[c],
            segment: McEstimate::from_values(&per_path.iter().map(|p| p.0[c]).collect::<Vec<_>>()),
            endpoint: McEstimate::from_values(&per_path.iter().map(|p| p.1[c]).collect::<Vec<_>>()),
        })
        .collect();
    let running_max = rows.iter().map(|r| r.segment.mean).fold(f64::NEG_INFINITY, f64::max);
    let overflow_flags = per_path.iter().map(|p| p.2).sum();

    let first = times.iter().position(|&t| t >= 0.5 * horizon).unwrap_or(0);
    let trend = if n_checks - first >= 3 {
        let xs = &times[first..];
        let slopes: Vec<f64> = per_path.iter().map(|p| ols_slope(xs, &p.0[first..]).0).collect();
        let est = McEstimate::from_values(&slopes);
        let z = if est.stderr > 0.0 { est.mean / est.stderr } else { 0.0 };
        TrendTest { slope: est.mean, stderr: est.stderr, z, upward: z > normal_upper_quantile(TREND_LEVEL) }
    } else {
        TrendTest { slope: 0.0, stderr: 0.0, z: 0.0, upward: false }
    };
    Ok(MomentTable { rows, running_max, overflow_flags, trend })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationarySample {
    pub chain: u64,
    pub time: f64,
    pub segment: Segment,
}

/// Approximate draws from the invariant measure: after `burn_in`, one segment
/// every `spacing` along `n_chains` independent long trajectories.
pub fn stationary_sampler(
    config: &SolverConfig,
    initial: &Segment,
    burn_in: f64,
    spacing: f64,
    n_samples: usize,
    n_chains: usize,
    master_seed: u64,
) -> Result<Vec<StationarySample>> {
    let grid = config.grid();
    let gap = grid.steps(spacing)?;
    if gap < grid.n_memory() {
        return Err(SfdeError::Domain(format!(
            "sample spacing {spacing} must be at least the memory length {}",
            grid.memory()
        )));
    }
    let burn = grid.steps(burn_in)?;
    let chains = n_chains.max(1);
    let per_chain = n_samples.div_ceil(chains);
    let dt = grid.dt();
    let mut out: Vec<StationarySample> = par_paths(chains, |chain| {
        let mut noise = NoiseStream::new(master_seed, chain).increments(dt);
        let mut stepper = PathStepper::new(config, initial)?;
        stepper.advance(burn, &mut noise, chain)?;
        let mut v = Vec::with_capacity(per_chain);
        for i in 0..per_chain {
            if i > 0 {
                stepper.advance(gap, &mut noise, chain)?;
            }
            v.push(StationarySample { chain, time: stepper.time(), segment: stepper.segment().to_segment() });
        }
        Ok(v)
    })?
    .into_iter()
    .flatten()
    .collect();
    out.truncate(n_samples);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrabilityReport {
    pub lambda: f64,
    /// Empirical `integral exp(lambda ||x||^2) dmu`.
    pub estimate: McEstimate,
    pub overflow_flags: usize,
}

impl IntegrabilityReport {
    pub fn finite(&self) -> bool {
        self.overflow_flags == 0 && self.estimate.mean.is_finite()
    }
}

pub fn integrability_diagnostic(samples: &[StationarySample], lambda: f64) -> IntegrabilityReport {
    let mut flags = 0usize;
    let values: Vec<f64> = samples
        .iter()
        .map(|s| {
            let n = s.segment.sup_norm();
            capped_exp(lambda * n * n, &mut flags)
        })
        .collect();
    IntegrabilityReport { lambda, estimate: McEstimate::from_values(&values), overflow_flags: flags }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperRow {
    pub function: String,
    /// `(integral (P_T f)^4 dmu)^{1/4}`
    pub l4_ptf: f64,
    /// `(integral f^2 dmu)^{1/2}`
    pub l2_f: f64,
    pub ratio: f64,
}

/// Per-function ratios `||P_T f||_{L^4(mu)} / ||f||_{L^2(mu)}` on empirical
/// stationary samples, with `P_T f` at each sample estimated from `n_inner` paths.
/// This is a diagnostic only, not an operator-norm bound.
pub fn hyperbounded_diagnostic(
    config: &SolverConfig,
    samples: &[StationarySample],
    functions: &[TestFunction],
    n_inner: usize,
    master_seed: u64,
) -> Result<Vec<HyperRow>> {
    let r = config.grid().memory();
    let l = config.drift().lipschitz();
    if !(l > 0.0 && config.horizon() > r + 1.0 / l) {
        return Err(SfdeError::Domain(format!(
            "hyperboundedness needs T > r + 1/L; got T = {}, r = {r}, L = {l}",
            config.horizon()
        )));
    }
    let mut ptf = vec![Vec::with_capacity(samples.len()); functions.len()];
    for (i, sample) in samples.iter().enumerate() {
        let rows = map_terminal_segments(config, &sample.segment, n_inner, derive_seed(master_seed, i as u64), |_, x| {
            functions.iter().map(|f| f.eval(x)).collect::<Vec<_>>()
        })?;
        for (j, acc) in ptf.iter_mut().enumerate() {
            acc.push(neumaier_sum(rows.iter().map(|r| r[j])) / n_inner as f64);
        }
    }
    let n = samples.len() as f64;
    Ok(functions
        .iter()
        .enumerate()
        .map(|(j, f)| {
            let l4 = (neumaier_sum(ptf[j].iter().map(|v| v.powi(4))) / n).powf(0.25);
            let l2 = (neumaier_sum(samples.iter().map(|s| f.eval(&s.segment.view()).powi(2))) / n).sqrt();
            HyperRow { function: f.label(), l4_ptf: l4, l2_f: l2, ratio: l4 / l2 }
        })
        .collect())
}

/// Convenience: the grid-compatible linear drift with no memory.
pub fn pure_ou(lambda0: f64) -> Result<DriftSpec> {
    DriftSpec::new(DissipativeField::Linear { lambda0 }, MemoryFunctional::zero())
}
