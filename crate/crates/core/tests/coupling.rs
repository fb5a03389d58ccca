use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sfde_core::coupling::{
    coupling_bound, map_coupled_paths, zeta_energy_bound, CouplingConfig, HoelderMap,
};
use sfde_core::{
    segment_distance, DissipativeField, DriftSpec, McEstimate, MemoryFunctional, ScalarMap, Segment,
    SolverConfig, TimeGrid,
};

fn sin_delay_config(dt: f64, horizon: f64) -> SolverConfig {
    let grid = TimeGrid::with_memory(dt, 1.0, 1).unwrap();
    let drift = DriftSpec::new(
        DissipativeField::Linear { lambda0: 1.0 },
        MemoryFunctional::point_delay(ScalarMap::sin(0.5)).unwrap(),
    )
    .unwrap();
    SolverConfig::new(grid, horizon, drift).unwrap()
}

#[test]
fn density_has_unit_mean() {
    let cfg = sin_delay_config(2f64.powi(-6), 2.0);
    let grid = *cfg.grid();
    let x0 = Segment::zeros(grid);
    let y0 = Segment::sample(grid, |s, o| o[0] = 0.5 + 0.25 * s).unwrap();
    let gap = segment_distance(&x0.view(), &y0.view()).unwrap();
    let coupling = CouplingConfig::with_deadline(1e-3, 2.0, &gap, 1.0).unwrap();
    let d = map_coupled_paths(&cfg, &x0, &y0, &coupling, 20_000, 5, |_, _, l| Ok(l.density())).unwrap();
    let est = McEstimate::from_values(&d);
    assert!(est.within(1.0, 3.0), "{est:?}");
}

/// Z = 0 and linear v: the gap recursion is exactly contracting, so the
/// continuous decay bound holds up to rounding.
#[test]
fn linear_decay_bound_is_pathwise() {
    let grid = TimeGrid::with_memory(2f64.powi(-5), 0.5, 2).unwrap();
    let drift = DriftSpec::new(DissipativeField::Linear { lambda0: 0.7 }, MemoryFunctional::zero()).unwrap();
    let cfg = SolverConfig::new(grid, 2.0, drift).unwrap();
    let x0 = Segment::constant(grid, &[0.3, -0.2]).unwrap();
    let y0 = Segment::constant(grid, &[-0.4, 0.9]).unwrap();
    let gap = segment_distance(&x0.view(), &y0.view()).unwrap();
    let coupling = CouplingConfig::with_deadline(0.3, 1.5, &gap, 0.5).unwrap();
    let dt = grid.dt();
    map_coupled_paths(&cfg, &x0, &y0, &coupling, 500, 8, |path, traj, _| {
        for (k, r) in traj.r_values.iter().enumerate() {
            let b = coupling_bound(gap.gap0, coupling.gamma, 0.3, k as f64 * dt);
            assert!(r * r <= b + 1e-10, "path {path} step {k}: {} > {b}", r * r);
        }
        let k = traj.coupling_step.expect("coupled");
        assert!(k as f64 * dt <= 1.0 + dt + 1e-12);
        Ok(())
    })
    .unwrap();
}

/// Random drifts, dimensions, deadlines and exponents: coupling by the
/// deadline, identical segments afterwards, decay and energy bounds with the
/// discretisation tolerance `L^2 dt gap_sup^2`.
#[test]
fn random_configurations_respect_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..60u64 {
        let d = rng.random_range(1..=3);
        let dt = 2f64.powi(-rng.random_range(4..=6));
        let n_mem = rng.random_range(4..=24usize);
        let grid = TimeGrid::new(dt, n_mem, d).unwrap();
        let r = grid.memory();
        let steps_t = n_mem + rng.random_range(2..=40usize);
        let horizon = steps_t as f64 * dt;
        let s = (n_mem + rng.random_range(1..=steps_t - n_mem)) as f64 * dt;
        let eps = rng.random_range(0.01..0.9);
        let amp = rng.random_range(0.0..1.5);
        let map = match rng.random_range(0..3) {
            0 => ScalarMap::sin(amp),
            1 => ScalarMap::tanh(amp),
            _ => ScalarMap::linear(amp),
        };
        let memory = match rng.random_range(0..3) {
            0 => MemoryFunctional::point_delay(map).unwrap(),
            1 => MemoryFunctional::integral_delay(map).unwrap(),
            _ => MemoryFunctional::zero(),
        };
        let field = if rng.random_bool(0.5) {
            DissipativeField::Linear { lambda0: rng.random_range(0.0..2.0) }
        } else {
            DissipativeField::CubicDecay
        };
        let drift = DriftSpec::new(field, memory).unwrap();
        let l = drift.lipschitz();
        let cfg = SolverConfig::new(grid, horizon, drift).unwrap();
        let phases: Vec<f64> = (0..2 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x0 = Segment::sample(grid, |u, o| {
            for (i, v) in o.iter_mut().enumerate() {
                *v = phases[i] * (1.0 + u).cos();
            }
        })
        .unwrap();
        let y0 = Segment::sample(grid, |u, o| {
            for (i, v) in o.iter_mut().enumerate() {
                *v = phases[d + i] + 0.5 * u;
            }
        })
        .unwrap();
        let gap = segment_distance(&x0.view(), &y0.view()).unwrap();
        let coupling = CouplingConfig::with_deadline(eps, s, &gap, r).unwrap();
        let tol = l * l * dt * gap.gap_sup * gap.gap_sup;
        let energy_bound = zeta_energy_bound(gap.gap0, gap.gap_sup, s, r, eps, l).unwrap();
        map_coupled_paths(&cfg, &x0, &y0, &coupling, 20, case, |path, traj, ledger| {
            let k = traj.coupling_step.expect("coupled by the deadline");
            assert!(k as f64 * dt <= s - r + dt + 1e-12, "case {case} path {path}: step {k}");
            let xs = traj.x_history.values();
            let ys = traj.y_history.values();
            let from = (n_mem + k) * d;
            assert_eq!(&xs[from..], &ys[from..], "case {case}: paths differ after coupling");
            for (j, rv) in traj.r_values.iter().enumerate() {
                let b = coupling_bound(gap.gap0, coupling.gamma, eps, j as f64 * dt);
                assert!(rv * rv <= b + tol + 1e-10, "case {case} step {j}: {} > {b} + {tol}", rv * rv);
            }
            assert!(
                0.5 * ledger.energy <= energy_bound * (1.0 + 1e-6) + tol,
                "case {case} path {path}: {} > {energy_bound} + {tol}",
                0.5 * ledger.energy
            );
            Ok(())
        })
        .unwrap();
    }
}

#[test]
fn hoelder_map_is_monotone_and_a_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..2000 {
        let eps = rng.random_range(0.01..0.99);
        let h = HoelderMap::new(eps).unwrap();
        let a: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
        let b: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
        let (ha, hb) = (h.apply(&a), h.apply(&b));
        let inner: f64 = (0..3).map(|i| (ha[i] - hb[i]) * (a[i] - b[i])).sum();
        assert!(inner >= 0.0);

        let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let w = 1e-6 * norm;
        for i in 0..3 {
            let mut p = a.clone();
            let mut m = a.clone();
            p[i] += w;
            m[i] -= w;
            let fd = (h.potential(&p) - h.potential(&m)) / (2.0 * w);
            assert!((fd - ha[i]).abs() <= 1e-5 * ha.iter().map(|v| v * v).sum::<f64>().sqrt());
        }
    }
}
