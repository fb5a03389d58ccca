//! Explicit Euler-Maruyama for `dX(t) = V(X_t) dt + dW(t)` started from a segment.

use serde::{Deserialize, Serialize};

use crate::drift::DriftSpec;
use crate::error::{Result, SfdeError};
use crate::noise::{IncrementSource, NoiseStream};
use crate::segment::{euclid, Segment, SegmentView, TimeGrid, TrajectoryHistory};
use crate::stats::{par_paths, McEstimate};

/// Paths whose state exceeds this norm are aborted as diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    grid: TimeGrid,
    horizon: f64,
    drift: DriftSpec,
}

impl SolverConfig {
    pub fn new(grid: TimeGrid, horizon: f64, drift: DriftSpec) -> Result<Self> {
        let steps = grid.steps(horizon)?;
        if steps == 0 {
            return Err(SfdeError::Domain(format!("horizon {horizon} must be at least dt = {}", grid.dt())));
        }
        Ok(Self { grid, horizon, drift })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn drift(&self) -> &DriftSpec {
        &self.drift
    }

    pub fn steps(&self) -> usize {
        self.grid.steps(self.horizon).expect("validated at construction")
    }

    /// Same grid and drift, different horizon.
    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        Self::new(self.grid, horizon, self.drift)
    }

    pub(crate) fn check_initial(&self, initial: &Segment) -> Result<()> {
        if initial.grid() != &self.grid {
            return Err(SfdeError::IncompatibleGrid("initial segment is not on the solver grid".into()));
        }
        Ok(())
    }
}

/// One Euler step from the segment `x`: writes `x(0) + V(x) dt + dw` into `out`.
#[inline]
pub(crate) fn euler_point(
    drift: &DriftSpec,
    x: &SegmentView<'_>,
    dw: &[f64],
    dt: f64,
    out: &mut [f64],
    scratch: &mut [f64],
) {
    drift.eval_into(x, out, scratch);
    for ((o, xi), w) in out.iter_mut().zip(x.terminal()).zip(dw) {
        *o = xi + *o * dt + w;
    }
}

#[inline]
pub(crate) fn diverged(point: &[f64]) -> bool {
    let n = euclid(point);
    !(n.is_finite() && n <= DIVERGENCE_THRESHOLD)
}

/// Euler stepper that keeps only a bounded window of the past.
///
/// Used for long runs where the full history is not needed.
#[derive(Debug, Clone)]
pub struct PathStepper<'a> {
    grid: TimeGrid,
    drift: &'a DriftSpec,
    buf: Vec<f64>,
    steps: usize,
    dw: Vec<f64>,
    next: Vec<f64>,
    scratch: Vec<f64>,
}

impl<'a> PathStepper<'a> {
    pub fn new(config: &'a SolverConfig, initial: &Segment) -> Result<Self> {
        config.check_initial(initial)?;
        let d = config.grid.dimension();
        let mut buf = Vec::with_capacity(8 * config.grid.segment_len());
        buf.extend_from_slice(initial.values());
        Ok(Self {
            grid: config.grid,
            drift: &config.drift,
            buf,
            steps: 0,
            dw: vec![0.0; d],
            next: vec![0.0; d],
            scratch: vec![0.0; d],
        })
    }

    /// Current segment `X_t`.
    pub fn segment(&self) -> SegmentView<'_> {
        let len = self.grid.segment_len();
        SegmentView::new(&self.grid, &self.buf[self.buf.len() - len..])
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn time(&self) -> f64 {
        self.steps as f64 * self.grid.dt()
    }

    /// Advances one step; `path` labels a divergence error.
    pub fn step(&mut self, noise: &mut impl IncrementSource, path: u64) -> Result<()> {
        noise.next_increment(&mut self.dw);
        let len = self.grid.segment_len();
        let view = SegmentView::new(&self.grid, &self.buf[self.buf.len() - len..]);
        euler_point(self.drift, &view, &self.dw, self.grid.dt(), &mut self.next, &mut self.scratch);
        if diverged(&self.next) {
            return Err(SfdeError::Divergence { path, step: self.steps + 1 });
        }
        if self.buf.len() + self.next.len() > self.buf.capacity() {
            let drop = self.buf.len() - len;
            self.buf.drain(..drop);
        }
        self.buf.extend_from_slice(&self.next);
        self.steps += 1;
        Ok(())
    }

    pub fn advance(&mut self, steps: usize, noise: &mut impl IncrementSource, path: u64) -> Result<()> {
        for _ in 0..steps {
            self.step(noise, path)?;
        }
        Ok(())
    }
}

/// Full Euler-Maruyama trajectory from `initial` over the configured horizon.
pub fn simulate_with(
    config: &SolverConfig,
    initial: &Segment,
    noise: &mut impl IncrementSource,
    path: u64,
) -> Result<TrajectoryHistory> {
    config.check_initial(initial)?;
    let grid = config.grid;
    let d = grid.dimension();
    let steps = config.steps();
    let mut history = TrajectoryHistory::with_capacity(initial, 0.0, steps);
    let mut dw = vec![0.0; d];
    let mut next = vec![0.0; d];
    let mut scratch = vec![0.0; d];
    for k in 0..steps {
        noise.next_increment(&mut dw);
        euler_point(&config.drift, &history.view_at_step(k), &dw, grid.dt(), &mut next, &mut scratch);
        if diverged(&next) {
            return Err(SfdeError::Divergence { path, step: k + 1 });
        }
        history.push(&next);
    }
    Ok(history)
}

/// [`simulate_with`] driven by the Gaussian stream of `noise`.
pub fn simulate(config: &SolverConfig, initial: &Segment, noise: &NoiseStream) -> Result<TrajectoryHistory> {
    simulate_with(config, initial, &mut noise.increments(config.grid.dt()), noise.path_index)
}

/// Runs `n_paths` independent paths to the horizon and maps each terminal
/// segment `X_T` through `map`. Results are in path order.
pub fn map_terminal_segments<T, F>(
    config: &SolverConfig,
    initial: &Segment,
    n_paths: usize,
    master_seed: u64,
    map: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64, &SegmentView<'_>) -> T + Sync + Send,
{
    config.check_initial(initial)?;
    let steps = config.steps();
    let dt = config.grid.dt();
    par_paths(n_paths, |path| {
        let mut noise = NoiseStream::new(master_seed, path).increments(dt);
        let mut stepper = PathStepper::new(config, initial)?;
        stepper.advance(steps, &mut noise, path)?;
        Ok(map(path, &stepper.segment()))
    })
}

/// Monte Carlo estimate of `P_T f(initial) = E f(X_T)`.
pub fn estimate_ptf_direct<F>(
    config: &SolverConfig,
    initial: &Segment,
    f: F,
    n_paths: usize,
    master_seed: u64,
) -> Result<McEstimate>
where
    F: Fn(&SegmentView<'_>) -> f64 + Sync + Send,
{
    let values = map_terminal_segments(config, initial, n_paths, master_seed, |_, x| f(x))?;
    Ok(McEstimate::from_values(&values))
}

/// Estimates several functionals on the same set of paths.
pub fn estimate_direct_many(
    config: &SolverConfig,
    initial: &Segment,
    fs: &[&(dyn Fn(&SegmentView<'_>) -> f64 + Sync)],
    n_paths: usize,
    master_seed: u64,
) -> Result<Vec<McEstimate>> {
    let rows = map_terminal_segments(config, initial, n_paths, master_seed, |_, x| {
        fs.iter().map(|f| f(x)).collect::<Vec<f64>>()
    })?;
    Ok((0..fs.len())
        .map(|j| McEstimate::from_values(&rows.iter().map(|r| r[j]).collect::<Vec<_>>()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::{DissipativeField, MemoryFunctional, ScalarMap};
    use crate::noise::ZeroNoise;

    fn linear(lambda: f64) -> DriftSpec {
        DriftSpec::new(DissipativeField::Linear { lambda0: lambda }, MemoryFunctional::zero()).unwrap()
    }

    fn grid() -> TimeGrid {
        TimeGrid::with_memory(1.0 / 128.0, 1.0, 1).unwrap()
    }

    #[test]
    fn config_validation() {
        let g = grid();
        assert!(SolverConfig::new(g, 0.0, linear(1.0)).is_err());
        assert!(SolverConfig::new(g, 0.001, linear(1.0)).is_err());
        assert_eq!(SolverConfig::new(g, 2.0, linear(1.0)).unwrap().steps(), 256);
    }

    #[test]
    fn no_dynamics_keeps_terminal_value() {
        let g = grid();
        let drift = DriftSpec::new(DissipativeField::Zero, MemoryFunctional::zero()).unwrap();
        let cfg = SolverConfig::new(g, 1.5, drift).unwrap();
        let init = Segment::sample(g, |s, o| o[0] = 3.0 + s).unwrap();
        let h = simulate_with(&cfg, &init, &mut ZeroNoise, 0).unwrap();
        assert_eq!(h.steps(), 192);
        assert!((0..=192).all(|k| h.at_step(k) == [3.0]));
        assert_eq!(h.extract_segment(0.0).unwrap(), init);
    }

    #[test]
    fn deterministic_linear_decay_is_first_order() {
        let lambda = 1.3;
        let mut errs = Vec::new();
        for n in [64usize, 128, 256] {
            let g = TimeGrid::new(1.0 / n as f64, n, 1).unwrap();
            let cfg = SolverConfig::new(g, 2.0, linear(lambda)).unwrap();
            let init = Segment::constant(g, &[1.0]).unwrap();
            let h = simulate_with(&cfg, &init, &mut ZeroNoise, 0).unwrap();
            let err = (h.last()[0] - (-lambda * 2.0f64).exp()).abs();
            assert!(err < 2.0 / n as f64, "{err}");
            errs.push(err);
        }
        assert!(errs[0] / errs[1] > 1.8 && errs[1] / errs[2] > 1.8);
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let g = TimeGrid::new(0.5, 1, 1).unwrap();
        // explicit Euler with lambda*dt = 6 oscillates with factor -5 per step
        let cfg = SolverConfig::new(g, 100.0, linear(12.0)).unwrap();
        let init = Segment::constant(g, &[1.0]).unwrap();
        match simulate_with(&cfg, &init, &mut ZeroNoise, 4) {
            Err(SfdeError::Divergence { path: 4, step }) => assert_eq!(step, 18),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn stepper_matches_full_history() {
        let g = TimeGrid::with_memory(1.0 / 16.0, 0.5, 2).unwrap();
        let drift = DriftSpec::new(
            DissipativeField::CubicDecay,
            MemoryFunctional::integral_delay(ScalarMap::sin(0.7)).unwrap(),
        )
        .unwrap();
        let cfg = SolverConfig::new(g, 5.0, drift).unwrap();
        let init = Segment::sample(g, |s, o| {
            o[0] = s.cos();
            o[1] = -s;
        })
        .unwrap();
        let stream = NoiseStream::new(11, 2);
        let h = simulate(&cfg, &init, &stream).unwrap();
        let mut st = PathStepper::new(&cfg, &init).unwrap();
        st.advance(cfg.steps(), &mut stream.increments(g.dt()), 2).unwrap();
        assert_eq!(st.segment().values(), h.view_at_step(cfg.steps()).values());
    }

    #[test]
    fn constant_functional_estimate_is_exact() {
        let g = grid();
        let cfg = SolverConfig::new(g, 1.0, linear(1.0)).unwrap();
        let init = Segment::constant(g, &[0.5]).unwrap();
        let e = estimate_ptf_direct(&cfg, &init, |_| 1.0, 500, 3).unwrap();
        assert_eq!((e.mean, e.stderr), (1.0, 0.0));
        let p = estimate_ptf_direct(&cfg, &init, |x| f64::from(x.sup_norm() <= 0.8), 500, 3).unwrap();
        assert!((0.0..=1.0).contains(&p.mean));
    }

    #[test]
    fn ou_mean_matches_closed_form() {
        let g = grid();
        let lambda = 1.0;
        let t = 1.0;
        let a = 2.0;
        let cfg = SolverConfig::new(g, t, linear(lambda)).unwrap();
        let init = Segment::constant(g, &[a]).unwrap();
        let e = estimate_ptf_direct(&cfg, &init, |x| x.terminal()[0], 20_000, 5).unwrap();
        let exact = a * (-lambda * t).exp();
        // Euler bias a*((1-dt)^n - e^{-1}) is ~1e-3, well inside 3 stderr at this n.
        assert!(e.within(exact, 3.0), "{e:?} vs {exact}");
    }
}
