//! Experiment drivers. Each returns the report body, verdict checks, plot
//! rows and optional per-path tables; nothing here touches the filesystem.

use serde::Serialize;
use serde_json::{json, Value};

use sfde_core::coupling::{coupling_bound, map_coupled_paths, zeta_energy_bound, CouplingConfig};
use sfde_core::functionals::TestFunction;
use sfde_core::harnack::{harnack_sweep, rho_sq_closed_form, strong_feller_probe};
use sfde_core::noise::derive_seed;
use sfde_core::solver::{map_terminal_segments, simulate, PathStepper};
use sfde_core::stationary::{
    exp_moment_estimate, hyperbounded_diagnostic, integrability_diagnostic, ou_identity_residual,
    stationary_sampler,
};
use sfde_core::stats::{par_paths, McEstimate};
use sfde_core::{segment_distance, NoiseStream, Segment};

use crate::config::{Plan, Resolved, StationaryPlan};
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
}

impl Check {
    fn new(name: impl Into<String>, pass: bool) -> Self {
        Self { name: name.into(), pass }
    }
}

/// Long-format plot row.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotRow {
    pub series: String,
    pub x: f64,
    pub y: f64,
    pub y_err: f64,
}

impl PlotRow {
    fn new(series: impl Into<String>, x: f64, y: f64, y_err: f64) -> Self {
        Self { series: series.into(), x, y, y_err }
    }
}

/// Header plus rows of already formatted cells.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub results: Value,
    pub checks: Vec<Check>,
    pub plot: Vec<PlotRow>,
    pub paths: Option<Table>,
    pub samples: Option<Table>,
}

/// Shortest round-trip representation, with an exponent for very small or large values.
pub fn cell(v: f64) -> String {
    if v.is_finite() {
        serde_json::to_string(&v).expect("finite float")
    } else {
        format!("{v}")
    }
}

fn mc(values: &[f64]) -> McEstimate {
    McEstimate::from_values(values)
}

pub fn run(res: &Resolved) -> Result<Outcome, CliError> {
    match &res.plan {
        Plan::Simulate { functions, checkpoint_every } => run_simulate(res, functions, *checkpoint_every),
        Plan::Couple { epsilon, s } => run_couple(res, *epsilon, *s),
        Plan::Harnack { epsilon, s, ps, functions } => run_harnack(res, *epsilon, *s, ps, functions),
        Plan::StrongFeller { epsilon, deltas, direction, functions } => {
            run_strong_feller(res, *epsilon, deltas, direction, functions)
        }
        Plan::Stationary(plan) => run_stationary(res, plan),
    }
}

fn run_simulate(res: &Resolved, functions: &[TestFunction], every: usize) -> Result<Outcome, CliError> {
    let cfg = &res.solver;
    let grid = cfg.grid();
    let d = grid.dimension();
    let dt = grid.dt();
    let steps = cfg.steps();
    let n_checks = steps / every + 1;
    let per_path = par_paths(res.n_paths, |path| {
        let mut noise = NoiseStream::new(res.master_seed, path).increments(dt);
        let mut st = PathStepper::new(cfg, &res.x0)?;
        let mut points = Vec::with_capacity(n_checks * d);
        let mut sups = Vec::with_capacity(n_checks);
        for c in 0..n_checks {
            if c > 0 {
                st.advance(every, &mut noise, path)?;
            }
            points.extend_from_slice(st.segment().terminal());
            sups.push(st.segment().sup_norm());
        }
        st.advance(steps - st.steps(), &mut noise, path)?;
        let fv: Vec<f64> = functions.iter().map(|f| f.eval(&st.segment())).collect();
        Ok((points, sups, fv))
    })?;

    let mut plot = Vec::new();
    let mut checkpoints = Vec::with_capacity(n_checks);
    for c in 0..n_checks {
        let t = (c * every) as f64 * dt;
        let comps: Vec<McEstimate> =
            (0..d).map(|i| mc(&per_path.iter().map(|p| p.0[c * d + i]).collect::<Vec<_>>())).collect();
        let sup = mc(&per_path.iter().map(|p| p.1[c]).collect::<Vec<_>>());
        for (i, e) in comps.iter().enumerate() {
            plot.push(PlotRow::new(format!("mean_x{i}"), t, e.mean, e.stderr));
        }
        plot.push(PlotRow::new("sup_norm", t, sup.mean, sup.stderr));
        checkpoints.push(json!({ "t": t, "mean": comps, "sup_norm": sup }));
    }
    let estimates: Vec<Value> = functions
        .iter()
        .enumerate()
        .map(|(j, f)| {
            let e = mc(&per_path.iter().map(|p| p.2[j]).collect::<Vec<_>>());
            let ci = e.interval(res.confidence);
            json!({ "function": f.label(), "estimate": e, "lo": ci.lo, "hi": ci.hi })
        })
        .collect();

    let paths = res.emit_paths.then(|| {
        let mut header = vec!["path".to_string(), "t".to_string()];
        header.extend((0..d).map(|i| format!("x{i}")));
        let mut rows = Vec::with_capacity(res.n_paths * n_checks);
        for (path, p) in per_path.iter().enumerate() {
            for c in 0..n_checks {
                let mut row = vec![path.to_string(), cell((c * every) as f64 * dt)];
                row.extend(p.0[c * d..(c + 1) * d].iter().map(|v| cell(*v)));
                rows.push(row);
            }
        }
        Table { header, rows }
    });

    Ok(Outcome {
        results: json!({ "horizon": cfg.horizon(), "checkpoints": checkpoints, "functionals": estimates }),
        checks: vec![Check::new("all_paths_finite", true)],
        plot,
        paths,
        samples: None,
    })
}

struct CoupledSummary {
    coupling_step: Option<usize>,
    identical_after: bool,
    r_values: Vec<f64>,
    log_density: f64,
    half_energy: f64,
}

fn run_couple(res: &Resolved, epsilon: f64, s: f64) -> Result<Outcome, CliError> {
    let cfg = &res.solver;
    let grid = cfg.grid();
    let (dt, r, d) = (grid.dt(), grid.memory(), grid.dimension());
    let y0 = res.y0.as_ref().expect("validated");
    let gap = segment_distance(&res.x0.view(), &y0.view())?;
    let coupling = CouplingConfig::with_deadline(epsilon, s, &gap, r)?;
    let lipschitz = cfg.drift().lipschitz();
    let exact = cfg.drift().memory.is_zero() && matches!(cfg.drift().dissipative, sfde_core::DissipativeField::Linear { .. });
    let tol = if exact { 1e-10 } else { lipschitz * lipschitz * dt * gap.gap_sup * gap.gap_sup + 1e-10 };
    let energy_bound = zeta_energy_bound(gap.gap0, gap.gap_sup, s, r, epsilon, lipschitz)?;
    let n_mem = grid.n_memory();

    let summaries = map_coupled_paths(cfg, &res.x0, y0, &coupling, res.n_paths, res.master_seed, |_, traj, ledger| {
        let identical_after = match traj.coupling_step {
            Some(k) => {
                let from = (n_mem + k) * d;
                traj.x_history.values()[from..] == traj.y_history.values()[from..]
            }
            None => false,
        };
        Ok(CoupledSummary {
            coupling_step: traj.coupling_step,
            identical_after,
            r_values: traj.r_values.clone(),
            log_density: ledger.log_density(),
            half_energy: 0.5 * ledger.energy,
        })
    })?;

    let deadline = s - r + dt + 1e-12;
    let coupled_in_time =
        summaries.iter().filter(|p| p.coupling_step.is_some_and(|k| k as f64 * dt <= deadline)).count();
    let identical = summaries.iter().filter(|p| p.identical_after).count();
    let steps = cfg.steps();
    let bound: Vec<f64> = (0..=steps).map(|k| coupling_bound(gap.gap0, coupling.gamma, epsilon, k as f64 * dt)).collect();
    let decay_violations = summaries
        .iter()
        .filter(|p| p.r_values.iter().zip(&bound).any(|(rv, b)| rv * rv > b + tol))
        .count();
    let energy_violations =
        summaries.iter().filter(|p| p.half_energy > energy_bound * (1.0 + 1e-6) + tol).count();
    let max_energy_ratio = summaries
        .iter()
        .map(|p| if energy_bound > 0.0 { p.half_energy / energy_bound } else { 0.0 })
        .fold(0.0, f64::max);
    let density = mc(&summaries.iter().map(|p| p.log_density.exp()).collect::<Vec<_>>());
    let times: Vec<f64> = summaries.iter().filter_map(|p| p.coupling_step).map(|k| k as f64 * dt).collect();
    let coupling_time = mc(&times);
    let max_time = times.iter().copied().fold(0.0, f64::max);

    let mut plot = Vec::with_capacity(2 * (steps + 1));
    for k in 0..=steps {
        let e = mc(&summaries.iter().map(|p| p.r_values[k]).collect::<Vec<_>>());
        plot.push(PlotRow::new("R", k as f64 * dt, e.mean, e.stderr));
    }
    for (k, b) in bound.iter().enumerate() {
        plot.push(PlotRow::new("bound", k as f64 * dt, b.sqrt(), 0.0));
    }

    let paths = res.emit_paths.then(|| Table {
        header: ["path", "coupling_step", "coupling_time", "log_density", "density", "half_energy"]
            .map(String::from)
            .to_vec(),
        rows: summaries
            .iter()
            .enumerate()
            .map(|(i, p)| {
                vec![
                    i.to_string(),
                    p.coupling_step.map(|k| k.to_string()).unwrap_or_default(),
                    p.coupling_step.map(|k| cell(k as f64 * dt)).unwrap_or_default(),
                    cell(p.log_density),
                    cell(p.log_density.exp()),
                    cell(p.half_energy),
                ]
            })
            .collect(),
    });

    let n = res.n_paths;
    let checks = vec![
        Check::new("coupled_by_deadline", coupled_in_time == n),
        Check::new("identical_after_coupling", identical == n),
        Check::new("decay_bound", decay_violations == 0),
        Check::new("energy_bound", energy_violations == 0),
        Check::new("density_unit_mean", density.within(1.0, 3.0)),
    ];
    Ok(Outcome {
        results: json!({
            "gap": gap,
            "lipschitz": lipschitz,
            "epsilon": epsilon,
            "s": s,
            "gamma": coupling.gamma,
            "coupled_by_deadline": coupled_in_time,
            "identical_after_coupling": identical,
            "coupling_time": coupling_time,
            "max_coupling_time": max_time,
            "deadline_plus_step": s - r + dt,
            "decay_tolerance": tol,
            "decay_violations": decay_violations,
            "energy_bound": energy_bound,
            "energy_violations": energy_violations,
            "max_energy_ratio": max_energy_ratio,
            "density": density,
        }),
        checks,
        plot,
        paths,
        samples: None,
    })
}

fn run_harnack(res: &Resolved, epsilon: f64, s: f64, ps: &[f64], functions: &[TestFunction]) -> Result<Outcome, CliError> {
    let cfg = &res.solver;
    let grid = cfg.grid();
    let r = grid.memory();
    let y0 = res.y0.as_ref().expect("validated");
    let gap = segment_distance(&res.x0.view(), &y0.view())?;
    let coupling = CouplingConfig::with_deadline(epsilon, s, &gap, r)?;
    let reports = harnack_sweep(cfg, &res.x0, y0, functions, ps, &coupling, res.n_paths, res.master_seed, res.confidence)?;
    let lipschitz = cfg.drift().lipschitz();
    let closed = rho_sq_closed_form(gap.gap0, gap.gap_sup, lipschitz, r, cfg.horizon())?;

    let mut plot = Vec::new();
    for rep in &reports {
        plot.push(PlotRow::new(format!("lhs:{}", rep.function), rep.p, rep.lhs.value, 0.5 * (rep.lhs.hi - rep.lhs.lo)));
        plot.push(PlotRow::new(format!("rhs:{}", rep.function), rep.p, rep.rhs.value, 0.5 * (rep.rhs.hi - rep.rhs.lo)));
    }
    let checks = reports.iter().map(|rep| Check::new(format!("harnack[{}, p={}]", rep.function, rep.p), rep.pass)).collect();

    let paths = if res.emit_paths {
        let steps = cfg.steps();
        let rows = map_coupled_paths(cfg, &res.x0, y0, &coupling, res.n_paths, derive_seed(res.master_seed, 0), |path, traj, ledger| {
            let xs = traj.x_history.view_at_step(steps);
            let mut row = vec![
                path.to_string(),
                traj.coupling_step.map(|k| k.to_string()).unwrap_or_default(),
                cell(ledger.density()),
            ];
            row.extend(functions.iter().map(|f| cell(f.eval(&xs))));
            Ok(row)
        })?;
        let mut header = vec!["path".to_string(), "coupling_step".to_string(), "density".to_string()];
        header.extend(functions.iter().map(|f| f.label()));
        Some(Table { header, rows })
    } else {
        None
    };

    Ok(Outcome {
        results: json!({
            "gap": gap,
            "lipschitz": lipschitz,
            "epsilon": epsilon,
            "s": s,
            "gamma": coupling.gamma,
            "rho_sq": reports.first().map(|r| r.rho_sq),
            "rho_sq_closed_form": closed,
            "reports": reports,
        }),
        checks,
        plot,
        paths,
        samples: None,
    })
}

fn run_strong_feller(
    res: &Resolved,
    epsilon: f64,
    deltas: &[f64],
    direction: &Segment,
    functions: &[TestFunction],
) -> Result<Outcome, CliError> {
    let cfg = &res.solver;
    let rows = strong_feller_probe(cfg, &res.x0, direction, deltas, functions, res.n_paths, res.master_seed, epsilon)?;
    let mut plot = Vec::with_capacity(2 * rows.len());
    for row in &rows {
        plot.push(PlotRow::new(format!("gap:{}", row.function), row.delta, row.difference.mean.abs(), row.difference.stderr));
    }
    for row in &rows {
        plot.push(PlotRow::new(format!("tv_bound:{}", row.function), row.delta, row.sup_f * row.bound, 0.0));
    }
    let checks = rows
        .iter()
        .map(|row| Check::new(format!("tv_bound[{}, delta={}]", row.function, row.delta), row.within_bound))
        .collect();

    let paths = if res.emit_paths {
        let unit = Segment::zeros(*direction.grid()).shifted(direction, 1.0 / direction.sup_norm())?;
        let eval = |_: u64, s: &sfde_core::SegmentView<'_>| functions.iter().map(|f| f.eval(s)).collect::<Vec<_>>();
        let base = map_terminal_segments(cfg, &res.x0, res.n_paths, res.master_seed, eval)?;
        let mut out = Vec::new();
        for &delta in deltas {
            let y0 = res.x0.shifted(&unit, delta)?;
            let moved = map_terminal_segments(cfg, &y0, res.n_paths, res.master_seed, eval)?;
            for (path, (a, b)) in base.iter().zip(&moved).enumerate() {
                for (j, f) in functions.iter().enumerate() {
                    out.push(vec![path.to_string(), cell(delta), f.label(), cell(a[j]), cell(b[j])]);
                }
            }
        }
        Some(Table { header: ["path", "delta", "function", "f_x", "f_y"].map(String::from).to_vec(), rows: out })
    } else {
        None
    };

    Ok(Outcome {
        results: json!({
            "epsilon": epsilon,
            "lipschitz": cfg.drift().lipschitz(),
            "horizon": cfg.horizon(),
            "rows": rows,
        }),
        checks,
        plot,
        paths,
        samples: None,
    })
}

fn run_stationary(res: &Resolved, plan: &StationaryPlan) -> Result<Outcome, CliError> {
    let cfg = &res.solver;
    let grid = cfg.grid();
    let d = grid.dimension();
    let r = grid.memory();
    let seed = res.master_seed;
    let example = &plan.example;
    let condition = example.condition(r);

    // Variation-of-constants residual on a few replayed paths.
    let residual_seed = derive_seed(seed, 2);
    let residuals = par_paths(plan.residual_paths, |path| {
        let stream = NoiseStream::new(residual_seed, path);
        let h = simulate(cfg, &res.x0, &stream)?;
        ou_identity_residual(cfg, &h, &mut stream.increments(grid.dt()))
    })?;
    let residual_max = residuals.iter().copied().fold(0.0, f64::max);

    let table = exp_moment_estimate(
        example,
        &res.x0,
        plan.moment_horizon,
        plan.checkpoint_spacing,
        res.n_paths,
        derive_seed(seed, 0),
    )?;
    let samples = stationary_sampler(
        cfg,
        &res.x0,
        plan.burn_in,
        plan.sample_spacing,
        plan.n_samples,
        plan.n_chains,
        derive_seed(seed, 1),
    )?;
    let integrability = integrability_diagnostic(&samples, example.lambda_target);
    let marginal = mc(&samples.iter().map(|s| s.segment.terminal()[0]).collect::<Vec<_>>());
    let hyper = match &plan.hyper {
        Some(h) => Some(hyperbounded_diagnostic(&h.solver, &samples[..h.n_samples], &h.functions, h.n_inner, derive_seed(seed, 3))?),
        None => None,
    };

    let mut plot = Vec::with_capacity(2 * table.rows.len());
    for row in &table.rows {
        plot.push(PlotRow::new("moment", row.t, row.segment.mean, row.segment.stderr));
    }
    for row in &table.rows {
        plot.push(PlotRow::new("moment_endpoint", row.t, row.endpoint.mean, row.endpoint.stderr));
    }

    let export = res.emit_paths || plan.export_samples;
    let sample_table = export.then(|| {
        let mut header = vec!["time".to_string()];
        for k in 0..grid.points() {
            header.extend((0..d).map(|i| format!("x{k}_{i}")));
        }
        Table {
            header,
            rows: samples
                .iter()
                .map(|s| {
                    let mut row = vec![cell(s.time)];
                    row.extend(s.segment.values().iter().map(|v| cell(*v)));
                    row
                })
                .collect(),
        }
    });

    let checks = vec![
        Check::new("integrability_condition", condition.holds()),
        Check::new("moment_no_overflow", table.overflow_flags == 0),
        Check::new("moment_no_upward_trend", !table.trend.upward),
        Check::new("integrability_finite", integrability.finite()),
    ];
    Ok(Outcome {
        results: json!({
            "lambda0": example.lambda0,
            "moment_eps": example.moment_eps,
            "memory_lipschitz": example.memory.declared_lipschitz(),
            "memory_bound": example.memory.declared_bound(d),
            "condition": condition,
            "residual": { "paths": plan.residual_paths, "max": residual_max, "per_path": residuals },
            "moments": table,
            "samples": { "count": samples.len(), "x0_component0": marginal },
            "integrability": integrability,
            "hyperbounded": hyper,
        }),
        checks,
        plot,
        paths: None,
        samples: sample_table,
    })
}
