use sfde_core::noise::{CoarsenedNoise, NoiseStream};
use sfde_core::solver::{estimate_ptf_direct, map_terminal_segments, simulate, simulate_with};
use sfde_core::stats::{ols_slope, McEstimate};
use sfde_core::{DissipativeField, DriftSpec, MemoryFunctional, ScalarMap, Segment, SolverConfig, TimeGrid};

fn ou(lambda0: f64) -> DriftSpec {
    DriftSpec::new(DissipativeField::Linear { lambda0 }, MemoryFunctional::zero()).unwrap()
}

/// Euler on coarse grids driven by the summed increments of a fine reference
/// path; the reference itself is Euler at `2^-12`, far below the coarse steps.
#[test]
fn strong_order_at_least_half() {
    let fine_exp = 12;
    let fine_dt = 2f64.powi(-fine_exp);
    let horizon = 1.0;
    let n_paths = 200u64;
    let levels = [4, 5, 6, 7, 8];

    let reference_cfg = |dt: f64| {
        let grid = TimeGrid::with_memory(dt, 1.0, 1).unwrap();
        SolverConfig::new(grid, horizon, ou(1.0)).unwrap()
    };
    let fine_cfg = reference_cfg(fine_dt);
    let fine_x0 = Segment::constant(*fine_cfg.grid(), &[1.0]).unwrap();

    let mut errors = vec![0.0; levels.len()];
    for path in 0..n_paths {
        let stream = NoiseStream::new(99, path);
        let reference = simulate(&fine_cfg, &fine_x0, &stream).unwrap();
        let x_ref = reference.last()[0];
        for (i, &lv) in levels.iter().enumerate() {
            let cfg = reference_cfg(2f64.powi(-lv));
            let x0 = Segment::constant(*cfg.grid(), &[1.0]).unwrap();
            let mut noise = CoarsenedNoise::new(stream.increments(fine_dt), 1 << (fine_exp - lv));
            let h = simulate_with(&cfg, &x0, &mut noise, path).unwrap();
            errors[i] += (h.last()[0] - x_ref).abs() / n_paths as f64;
        }
    }
    let xs: Vec<f64> = levels.iter().map(|&l| (2f64.powi(-l)).ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let (slope, _) = ols_slope(&xs, &ys);
    assert!(slope >= 0.5, "strong order slope {slope}, errors {errors:?}");
    for w in errors.windows(2) {
        assert!(w[1] < w[0], "error did not decrease: {errors:?}");
    }
}

/// Stationary OU variance `1 / (2 lambda)` and the exact Euler variance
/// `dt / (1 - (1 - lambda dt)^2)` both checked against the sample.
#[test]
fn ou_variance_matches_closed_form() {
    let lambda = 1.0;
    let dt = 2f64.powi(-6);
    let grid = TimeGrid::with_memory(dt, 0.25, 1).unwrap();
    let cfg = SolverConfig::new(grid, 6.0, ou(lambda)).unwrap();
    let x0 = Segment::zeros(grid);
    let xt = map_terminal_segments(&cfg, &x0, 20_000, 3, |_, s| s.terminal()[0]).unwrap();
    let sq: Vec<f64> = xt.iter().map(|v| v * v).collect();
    let est = McEstimate::from_values(&sq);
    let a = 1.0 - lambda * dt;
    let steps = cfg.steps() as i32;
    let euler_var = dt * (1.0 - a.powi(2 * steps)) / (1.0 - a * a);
    let exact_var = (1.0 - (-2.0 * lambda * 6.0f64).exp()) / (2.0 * lambda);
    assert!(est.within(euler_var, 3.0), "{est:?} vs {euler_var}");
    assert!((euler_var - exact_var).abs() < 0.01);
    let mean = McEstimate::from_values(&xt);
    assert!(mean.within(0.0, 3.0));
}

#[test]
fn identical_results_across_thread_counts() {
    let grid = TimeGrid::with_memory(1.0 / 32.0, 1.0, 2).unwrap();
    let drift = DriftSpec::new(
        DissipativeField::Linear { lambda0: 1.0 },
        MemoryFunctional::integral_delay(ScalarMap::sin(0.5)).unwrap(),
    )
    .unwrap();
    let cfg = SolverConfig::new(grid, 2.0, drift).unwrap();
    let x0 = Segment::sample(grid, |s, o| {
        o[0] = s.cos();
        o[1] = 0.5 * s;
    })
    .unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let v = map_terminal_segments(&cfg, &x0, 500, 17, |_, s| s.values().to_vec()).unwrap();
            let f = |s: &sfde_core::SegmentView<'_>| s.terminal()[1].tanh();
            (v, estimate_ptf_direct(&cfg, &x0, f, 1000, 17).unwrap())
        })
    };
    let (a, ea) = run(1);
    let (b, eb) = run(4);
    assert_eq!(a, b);
    assert_eq!(ea.mean.to_bits(), eb.mean.to_bits());
    assert_eq!(ea.stderr.to_bits(), eb.stderr.to_bits());
}

#[test]
fn history_starts_with_initial_segment() {
    let grid = TimeGrid::with_memory(0.125, 1.0, 3).unwrap();
    let drift = DriftSpec::new(
        DissipativeField::CubicDecay,
        MemoryFunctional::point_delay(ScalarMap::tanh(0.3)).unwrap(),
    )
    .unwrap();
    let cfg = SolverConfig::new(grid, 3.0, drift).unwrap();
    let x0 = Segment::sample(grid, |s, o| {
        for (i, v) in o.iter_mut().enumerate() {
            *v = (s * (i + 1) as f64).sin();
        }
    })
    .unwrap();
    let h = simulate(&cfg, &x0, &NoiseStream::new(1, 2)).unwrap();
    assert_eq!(h.extract_segment(0.0).unwrap(), x0);
    let a = h.extract_segment(1.0).unwrap();
    let b = h.extract_segment(1.125).unwrap();
    let d = grid.dimension();
    assert_eq!(&a.values()[d..], &b.values()[..a.values().len() - d]);
}
