//! Shared-noise coupling of two solutions and its Girsanov weight.
//!
//! `X` solves the equation from `x`. The auxiliary process `Y` starts from
//! `y`, uses the same Brownian increments and the memory drift of `X`, and is
//! pulled onto `X` by `-gamma * H(Y - X)` with the Hoelder map
//! `H(z) = z |z|^(eps - 1)`. With `gamma = gamma_s` the gap vanishes by time
//! `s - r`, after which both segments agree from time `s` on.
//!
//! Discretisation: each step applies Euler to `v + Z(X_t)` and then the exact
//! flow of `dR = -gamma H(R) dt` to the gap, i.e.
//! `|R|^(1-eps) -> (|R|^(1-eps) - gamma (1-eps) dt)_+` along the current gap
//! direction. The shift `zeta_k` is read off the realised update so that
//! `Y_{k+1} = Y_k + V(Y_k-segment) dt + dW_k - zeta_k dt` holds exactly. Since
//! the noise cancels in the gap, `zeta_k` depends only on the state at `t_k`,
//! which makes `D = prod exp(<zeta_k, dW_k> - |zeta_k|^2 dt / 2)` an exact
//! discrete martingale weight.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SfdeError};
use crate::noise::{IncrementSource, NoiseStream};
use crate::segment::{euclid, Segment, SegmentGap, TrajectoryHistory};
use crate::solver::{diverged, euler_point, SolverConfig};
use crate::stats::par_paths;

/// A remaining `|R|^(1-eps)` below this fraction of one step's decrement is
/// treated as absorbed; this only removes floating-point residue left after
/// `(s - r) / dt` exact decrements.
pub const ABSORPTION_REL_TOL: f64 = 1e-9;

/// Default Hoelder exponent for Harnack experiments.
pub const DEFAULT_EPSILON: f64 = 1e-3;

/// `H(z) = z |z|^(eps - 1)`, `H(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoelderMap {
    epsilon: f64,
}

impl HoelderMap {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(SfdeError::Domain(format!("epsilon must lie in (0, 1), got {epsilon}")));
        }
        Ok(Self { epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let n = euclid(x);
        if n == 0.0 {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        let scale = n.powf(self.epsilon - 1.0);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = xi * scale;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.apply_into(x, &mut out);
        out
    }

    /// `|x|^(1+eps) / (1+eps)`, whose gradient is `H`.
    pub fn potential(&self, x: &[f64]) -> f64 {
        euclid(x).powf(1.0 + self.epsilon) / (1.0 + self.epsilon)
    }
}

pub fn h_map(x: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    Ok(HoelderMap::new(epsilon)?.apply(x))
}

fn check_deadline(s: f64, r: f64) -> Result<()> {
    if !(s > r) {
        return Err(SfdeError::Domain(format!("coupling deadline s = {s} must exceed the memory r = {r}")));
    }
    Ok(())
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    HoelderMap::new(epsilon).map(|_| ())
}

/// Coupling rate that closes a gap `gap0` exactly at time `s - r`:
/// `gap0^(1-eps) / ((s - r)(1 - eps))`.
pub fn gamma_s(gap0: f64, epsilon: f64, s: f64, r: f64) -> Result<f64> {
    check_epsilon(epsilon)?;
    check_deadline(s, r)?;
    if gap0 == 0.0 {
        return Ok(0.0);
    }
    Ok(gap0.powf(1.0 - epsilon) / ((s - r) * (1.0 - epsilon)))
}

/// Upper bound on `|R(t)|^2`: `(gap0^(1-eps) - gamma (1-eps) t)_+^(2/(1-eps))`.
pub fn coupling_bound(gap0: f64, gamma: f64, epsilon: f64, t: f64) -> f64 {
    let a = gap0.powf(1.0 - epsilon) - gamma * (1.0 - epsilon) * t;
    if a <= 0.0 {
        0.0
    } else {
        a.powf(2.0 / (1.0 - epsilon))
    }
}

/// Pathwise bound on `(1/2) * integral |zeta|^2`:
/// `gap0^2 / ((1 - eps^2)(s - r)) + L^2 s gap_sup^2`.
pub fn zeta_energy_bound(gap0: f64, gap_sup: f64, s: f64, r: f64, epsilon: f64, lipschitz: f64) -> Result<f64> {
    check_epsilon(epsilon)?;
    check_deadline(s, r)?;
    Ok(gap0 * gap0 / ((1.0 - epsilon * epsilon) * (s - r)) + lipschitz * lipschitz * s * gap_sup * gap_sup)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingConfig {
    pub hoelder: HoelderMap,
    /// Deadline `s` in `(r, T]`.
    pub s: f64,
    pub gamma: f64,
}

impl CouplingConfig {
    pub fn new(epsilon: f64, s: f64, gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(SfdeError::Domain(format!("gamma must be >= 0, got {gamma}")));
        }
        Ok(Self { hoelder: HoelderMap::new(epsilon)?, s, gamma })
    }

    /// Uses `gamma = gamma_s` for the terminal gap of the two initial segments.
    pub fn with_deadline(epsilon: f64, s: f64, gap: &SegmentGap, r: f64) -> Result<Self> {
        Self::new(epsilon, s, gamma_s(gap.gap0, epsilon, s, r)?)
    }

    pub fn epsilon(&self) -> f64 {
        self.hoelder.epsilon
    }
}

/// Paired paths of the coupling.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledTrajectory {
    pub x_history: TrajectoryHistory,
    pub y_history: TrajectoryHistory,
    /// First step index at which `Y = X`; `Some(0)` when `x(0) = y(0)`.
    pub coupling_step: Option<usize>,
    /// `|R(t_k)| = |X(t_k) - Y(t_k)|` for `k = 0..=steps`.
    pub r_values: Vec<f64>,
}

impl CoupledTrajectory {
    /// First step from which the full segments coincide.
    pub fn segment_coupling_step(&self) -> Option<usize> {
        self.coupling_step.map(|k| k + self.x_history.grid().n_memory())
    }
}

/// Running sums of the discrete Girsanov exponent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GirsanovLedger {
    /// `sum_k <zeta_k, dW_k>`
    pub log_weight: f64,
    /// `sum_k |zeta_k|^2 dt`
    pub energy: f64,
}

impl GirsanovLedger {
    pub fn record(&mut self, zeta: &[f64], dw: &[f64], dt: f64) {
        let mut inner = 0.0;
        let mut sq = 0.0;
        for (z, w) in zeta.iter().zip(dw) {
            inner += z * w;
            sq += z * z;
        }
        self.log_weight += inner;
        self.energy += sq * dt;
    }

    pub fn log_density(&self) -> f64 {
        self.log_weight - 0.5 * self.energy
    }

    pub fn density(&self) -> f64 {
        self.log_density().exp()
    }
}

pub fn density(ledger: &GirsanovLedger) -> f64 {
    ledger.density()
}

pub fn log_density(ledger: &GirsanovLedger) -> f64 {
    ledger.log_density()
}

fn validate_coupling(config: &SolverConfig, x0: &Segment, y0: &Segment, coupling: &CouplingConfig) -> Result<()> {
    if x0.grid() != config.grid() || y0.grid() != config.grid() {
        return Err(SfdeError::IncompatibleGrid("coupled initial segments must share the solver grid".into()));
    }
    let r = config.grid().memory();
    check_deadline(coupling.s, r)?;
    if coupling.s > config.horizon() * (1.0 + 1e-12) {
        return Err(SfdeError::Domain(format!(
            "coupling deadline s = {} exceeds the horizon T = {}",
            coupling.s,
            config.horizon()
        )));
    }
    config.grid().steps(coupling.s)?;
    Ok(())
}

/// Simulates `(X, Y)` over the horizon with increments from `noise`.
pub fn simulate_coupled_with(
    config: &SolverConfig,
    x0: &Segment,
    y0: &Segment,
    coupling: &CouplingConfig,
    noise: &mut impl IncrementSource,
    path: u64,
) -> Result<(CoupledTrajectory, GirsanovLedger)> {
    validate_coupling(config, x0, y0, coupling)?;
    let grid = *config.grid();
    let drift = config.drift();
    let d = grid.dimension();
    let dt = grid.dt();
    let steps = config.steps();
    let one_minus = 1.0 - coupling.epsilon();
    let decrement = coupling.gamma * one_minus * dt;

    let mut xh = TrajectoryHistory::with_capacity(x0, 0.0, steps);
    let mut yh = TrajectoryHistory::with_capacity(y0, 0.0, steps);
    let mut ledger = GirsanovLedger::default();

    let mut dw = vec![0.0; d];
    let mut x_next = vec![0.0; d];
    let mut scratch = vec![0.0; d];
    let mut vx = vec![0.0; d];
    let mut vy = vec![0.0; d];
    let mut zx = vec![0.0; d];
    let mut zy = vec![0.0; d];
    let mut gap = vec![0.0; d];
    let mut y_next = vec![0.0; d];
    let mut zeta = vec![0.0; d];

    let gap0: Vec<f64> = x0.terminal().iter().zip(y0.terminal()).map(|(a, b)| b - a).collect();
    let mut r_values = Vec::with_capacity(steps + 1);
    r_values.push(euclid(&gap0));
    let mut coupling_step = (r_values[0] == 0.0).then_some(0);

    for k in 0..steps {
        noise.next_increment(&mut dw);
        let xs = xh.view_at_step(k);
        let ys = yh.view_at_step(k);
        euler_point(drift, &xs, &dw, dt, &mut x_next, &mut scratch);
        if diverged(&x_next) {
            return Err(SfdeError::Divergence { path, step: k + 1 });
        }

        // Memory drift mismatch, evaluated on the segments at step start.
        drift.memory.eval_into(&xs, &mut zx);
        drift.memory.eval_into(&ys, &mut zy);

        if coupling_step.is_some() {
            y_next.copy_from_slice(&x_next);
            for i in 0..d {
                zeta[i] = -(zx[i] - zy[i]);
            }
        } else {
            // Euler substep: the shared noise and Z(X_t) cancel in the gap.
            let xk = xs.terminal();
            let yk = ys.terminal();
            drift.dissipative.eval_into(xk, &mut vx);
            drift.dissipative.eval_into(yk, &mut vy);
            for i in 0..d {
                gap[i] = (yk[i] - xk[i]) + (vy[i] - vx[i]) * dt;
            }
            let norm = euclid(&gap);
            // Exact sub-flow of dR = -gamma H(R) dt.
            let shrink = if norm == 0.0 {
                0.0
            } else {
                let a = norm.powf(one_minus) - decrement;
                if a <= ABSORPTION_REL_TOL * decrement {
                    0.0
                } else {
                    a.powf(1.0 / one_minus) / norm
                }
            };
            if shrink == 0.0 {
                y_next.copy_from_slice(&x_next);
                coupling_step = Some(k + 1);
            } else {
                for i in 0..d {
                    y_next[i] = x_next[i] + shrink * gap[i];
                }
            }
            for i in 0..d {
                zeta[i] = gap[i] * (1.0 - shrink) / dt - (zx[i] - zy[i]);
            }
        }
        if diverged(&y_next) {
            return Err(SfdeError::Divergence { path, step: k + 1 });
        }
        ledger.record(&zeta, &dw, dt);
        xh.push(&x_next);
        yh.push(&y_next);
        r_values.push(crate::segment::euclid_dist(&x_next, &y_next));
    }

    Ok((CoupledTrajectory { x_history: xh, y_history: yh, coupling_step, r_values }, ledger))
}

/// [`simulate_coupled_with`] driven by the Gaussian stream of `noise`.
pub fn simulate_coupled(
    config: &SolverConfig,
    x0: &Segment,
    y0: &Segment,
    coupling: &CouplingConfig,
    noise: &NoiseStream,
) -> Result<(CoupledTrajectory, GirsanovLedger)> {
    simulate_coupled_with(
        config,
        x0,
        y0,
        coupling,
        &mut noise.increments(config.grid().dt()),
        noise.path_index,
    )
}

/// Runs `n_paths` coupled paths and maps each result; output is in path order.
pub fn map_coupled_paths<T, F>(
    config: &SolverConfig,
    x0: &Segment,
    y0: &Segment,
    coupling: &CouplingConfig,
    n_paths: usize,
    master_seed: u64,
    map: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64, &CoupledTrajectory, &GirsanovLedger) -> Result<T> + Sync + Send,
{
    validate_coupling(config, x0, y0, coupling)?;
    par_paths(n_paths, |path| {
        let (traj, ledger) = simulate_coupled(config, x0, y0, coupling, &NoiseStream::new(master_seed, path))?;
        map(path, &traj, &ledger)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::{DissipativeField, DriftSpec, MemoryFunctional, ScalarMap};
    use crate::noise::ZeroNoise;
    use crate::segment::{segment_distance, TimeGrid};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn h_map_examples() {
        assert_eq!(h_map(&[0.0, 0.0], 0.3).unwrap(), vec![0.0, 0.0]);
        let e = [0.6, 0.8];
        let h = h_map(&e, 0.37).unwrap();
        assert!((h[0] - 0.6).abs() < 1e-15 && (h[1] - 0.8).abs() < 1e-15);
        assert!((h_map(&[4.0], 0.5).unwrap()[0] - 2.0).abs() < 1e-15);
        assert!((h_map(&[-4.0], 0.5).unwrap()[0] + 2.0).abs() < 1e-15);
        assert!(h_map(&[1.0], 1.0).is_err());
        assert!(h_map(&[1.0], 0.0).is_err());
    }

    #[test]
    fn h_map_is_continuous_at_zero() {
        let h = HoelderMap::new(0.2).unwrap();
        for t in [1e-2, 1e-4, 1e-8] {
            assert!(euclid(&h.apply(&[t, -t])) <= (2f64.sqrt() * t).powf(0.2) + 1e-15);
        }
    }

    #[test]
    fn gamma_s_examples() {
        assert_eq!(gamma_s(0.0, 0.5, 3.0, 1.0).unwrap(), 0.0);
        assert!((gamma_s(4.0, 0.5, 3.0, 1.0).unwrap() - 2.0).abs() < 1e-15);
        assert!((gamma_s(1.0, 0.25, 2.5, 1.0).unwrap() - 1.0 / (1.5 * 0.75)).abs() < 1e-15);
        assert!(gamma_s(1.0, 0.5, 1.0, 1.0).is_err());
    }

    #[test]
    fn coupling_bound_examples() {
        assert!((coupling_bound(1.7, 3.0, 0.4, 0.0) - 1.7 * 1.7).abs() < 1e-14);
        assert_eq!(coupling_bound(1.0, 2.0, 0.5, 1.0), 0.0);
        let (gap0, eps, s, r) = (2.5, 0.3, 2.0, 0.5);
        let g = gamma_s(gap0, eps, s, r).unwrap();
        assert!(coupling_bound(gap0, g, eps, (s - r) * (1.0 - 1e-6)) > 0.0);
        assert_eq!(coupling_bound(gap0, g, eps, (s - r) * (1.0 + 1e-12)), 0.0);
    }

    #[test]
    fn energy_bound_examples() {
        assert_eq!(zeta_energy_bound(0.0, 0.0, 2.0, 1.0, 0.5, 1.0).unwrap(), 0.0);
        let b = zeta_energy_bound(1.0, 1.0, 2.0, 1.0, 1e-9, 1.0).unwrap();
        assert!((b - 3.0).abs() < 1e-12);
        assert!(zeta_energy_bound(1.0, 1.0, 0.5, 1.0, 0.1, 1.0).is_err());
    }

    #[test]
    fn density_of_empty_ledger_is_one() {
        assert_eq!(density(&GirsanovLedger::default()), 1.0);
    }

    #[test]
    fn hoelder_map_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for d in [1, 2, 5] {
            for _ in 0..10_000 {
                let eps = rng.random_range(0.001..0.999);
                let h = HoelderMap::new(eps).unwrap();
                let a: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
                let b: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
                let (ha, hb) = (h.apply(&a), h.apply(&b));
                let inner: f64 = (0..d).map(|i| (ha[i] - hb[i]) * (a[i] - b[i])).sum();
                assert!(inner >= 0.0, "eps={eps} a={a:?} b={b:?} inner={inner}");
            }
        }
    }

    fn scalar_setup(lambda: f64, memory: MemoryFunctional) -> (SolverConfig, TimeGrid) {
        let g = TimeGrid::with_memory(1.0 / 64.0, 1.0, 1).unwrap();
        let drift = DriftSpec::new(DissipativeField::Linear { lambda0: lambda }, memory).unwrap();
        (SolverConfig::new(g, 3.0, drift).unwrap(), g)
    }

    #[test]
    fn identical_starts_never_separate() {
        let (cfg, g) = scalar_setup(1.0, MemoryFunctional::point_delay(ScalarMap::sin(0.5)).unwrap());
        let x0 = Segment::sample(g, |s, o| o[0] = s.sin()).unwrap();
        let cpl = CouplingConfig::with_deadline(0.01, 2.0, &segment_distance(&x0.view(), &x0.view()).unwrap(), 1.0)
            .unwrap();
        assert_eq!(cpl.gamma, 0.0);
        let (traj, ledger) = simulate_coupled(&cfg, &x0, &x0, &cpl, &NoiseStream::new(3, 0)).unwrap();
        assert_eq!(traj.coupling_step, Some(0));
        assert_eq!(traj.x_history, traj.y_history);
        assert_eq!(ledger, GirsanovLedger::default());
        assert_eq!(ledger.density(), 1.0);
    }

    #[test]
    fn zero_noise_gap_follows_split_recursion() {
        let lambda = 0.8;
        let eps = 0.4;
        let (cfg, g) = scalar_setup(lambda, MemoryFunctional::zero());
        let x0 = Segment::constant(g, &[0.0]).unwrap();
        let y0 = Segment::constant(g, &[2.0]).unwrap();
        let cpl = CouplingConfig::with_deadline(eps, 2.0, &segment_distance(&x0.view(), &y0.view()).unwrap(), 1.0)
            .unwrap();
        let (traj, _) = simulate_coupled_with(&cfg, &x0, &y0, &cpl, &mut ZeroNoise, 0).unwrap();

        // independent scalar recursion: contract by Euler, then lower |R|^(1-eps)
        let dt = g.dt();
        let mut r = 2.0f64;
        let mut expect = vec![r];
        for _ in 0..cfg.steps() {
            let star = r * (1.0 - lambda * dt);
            let a = star.powf(1.0 - eps) - cpl.gamma * (1.0 - eps) * dt;
            r = if a > 0.0 { a.powf(1.0 / (1.0 - eps)) } else { 0.0 };
            expect.push(r);
        }
        for (k, (got, want)) in traj.r_values.iter().zip(&expect).enumerate() {
            assert!((got - want).abs() <= 1e-12 * (1.0 + want), "step {k}: {got} vs {want}");
        }
        let step = traj.coupling_step.unwrap();
        assert!(step as f64 * dt <= 1.0 + 1e-12, "coupled at step {step}");
    }

    #[test]
    fn gamma_s_couples_by_deadline_and_segments_merge() {
        let (cfg, g) = scalar_setup(1.0, MemoryFunctional::point_delay(ScalarMap::sin(0.5)).unwrap());
        let x0 = Segment::sample(g, |s, o| o[0] = (2.0 * s).cos()).unwrap();
        let y0 = Segment::sample(g, |s, o| o[0] = 1.0 - s).unwrap();
        let gap = segment_distance(&x0.view(), &y0.view()).unwrap();
        let s = 2.0;
        let cpl = CouplingConfig::with_deadline(1e-3, s, &gap, 1.0).unwrap();
        let n_s = g.steps(s).unwrap();
        for path in 0..200 {
            let (traj, _) = simulate_coupled(&cfg, &x0, &y0, &cpl, &NoiseStream::new(17, path)).unwrap();
            let k = traj.coupling_step.expect("coupled");
            assert!(k <= g.steps(s - 1.0).unwrap() + 1);
            for j in k..=cfg.steps() {
                assert_eq!(traj.x_history.at_step(j), traj.y_history.at_step(j));
            }
            for j in n_s..=cfg.steps() {
                assert_eq!(traj.x_history.view_at_step(j).values(), traj.y_history.view_at_step(j).values());
            }
        }
    }

    #[test]
    fn deadline_validation() {
        let (cfg, g) = scalar_setup(1.0, MemoryFunctional::zero());
        let x0 = Segment::zeros(g);
        let too_late = CouplingConfig::new(0.1, 3.5, 1.0).unwrap();
        assert!(simulate_coupled(&cfg, &x0, &x0, &too_late, &NoiseStream::new(0, 0)).is_err());
        let off_grid = CouplingConfig::new(0.1, 2.001, 1.0).unwrap();
        assert!(simulate_coupled(&cfg, &x0, &x0, &off_grid, &NoiseStream::new(0, 0)).is_err());
        assert!(CouplingConfig::new(0.1, 2.0, -1.0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn h_map_is_monotone(
                eps in 0.001..0.999f64,
                ab in proptest::collection::vec(-10.0..10.0f64, 6),
            ) {
                let h = HoelderMap::new(eps).unwrap();
                let (a, b) = ab.split_at(3);
                let (ha, hb) = (h.apply(a), h.apply(b));
                let inner: f64 = (0..3).map(|i| (ha[i] - hb[i]) * (a[i] - b[i])).sum();
                prop_assert!(inner >= -1e-12);
            }

            #[test]
            fn h_map_has_norm_power_eps(eps in 0.001..0.999f64, x in proptest::collection::vec(-10.0..10.0f64, 3)) {
                let n = euclid(&x);
                let hn = euclid(&HoelderMap::new(eps).unwrap().apply(&x));
                prop_assert!((hn - n.powf(eps)).abs() <= 1e-12 * (1.0 + hn));
            }

            #[test]
            fn gamma_s_closes_the_gap_at_the_deadline(
                gap0 in 0.0..5.0f64,
                eps in 0.001..0.95f64,
                r in 0.1..2.0f64,
                extra in 0.01..3.0f64,
            ) {
                let s = r + extra;
                let gamma = gamma_s(gap0, eps, s, r).unwrap();
                prop_assert!(coupling_bound(gap0, gamma, eps, extra * (1.0 + 1e-12)) == 0.0);
                prop_assert!((coupling_bound(gap0, gamma, eps, 0.0) - gap0 * gap0).abs() <= 1e-12 * (1.0 + gap0 * gap0));
                let mut prev = f64::INFINITY;
                for k in 0..=10 {
                    let b = coupling_bound(gap0, gamma, eps, extra * k as f64 / 10.0);
                    prop_assert!(b <= prev);
                    prev = b;
                }
            }
        }
    }
}
