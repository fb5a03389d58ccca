//! Experiment configuration: the on-disk schema, its canonical form, and
//! validation into the typed objects of `sfde-core`.
//!
//! `dt`, `r`, `horizon` and every other grid time are parsed as exact
//! decimals, so "is a multiple of dt" is decided without float rounding.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use rust_decimal::prelude::ToPrimitive;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use sfde_core::functionals::TestFunction;
use sfde_core::harnack::auto_deadline;
use sfde_core::stationary::OuExampleConfig;
use sfde_core::{
    segment_distance, DissipativeField, DriftSpec, MemoryFunctional, MemoryKind, Segment, SolverConfig, TimeGrid,
};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Simulate,
    Couple,
    Harnack,
    StrongFeller,
    Stationary,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Couple => "couple",
            ExperimentKind::Harnack => "harnack",
            ExperimentKind::StrongFeller => "strong-feller",
            ExperimentKind::Stationary => "stationary",
        }
    }
}

/// A time or length given either as a string (exact) or a plain number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DecimalValue {
    Text(String),
    Number(f64),
}

impl DecimalValue {
    fn parse(&self, field: &str) -> Result<Decimal, CliError> {
        let text = match self {
            DecimalValue::Text(s) => s.trim().to_string(),
            DecimalValue::Number(x) if x.is_finite() => x.to_string(),
            DecimalValue::Number(x) => return Err(CliError::config(field, format!("{x} is not a finite number"))),
        };
        Decimal::from_str(&text)
            .or_else(|_| Decimal::from_scientific(&text))
            .map(|d| d.normalize())
            .map_err(|e| CliError::config(field, format!("cannot read {text:?} as an exact decimal: {e}")))
    }

    fn canonical(d: Decimal) -> Self {
        DecimalValue::Text(d.normalize().to_string())
    }
}

impl From<&str> for DecimalValue {
    fn from(s: &str) -> Self {
        DecimalValue::Text(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub dt: DecimalValue,
    /// Memory length.
    pub r: DecimalValue,
    pub horizon: DecimalValue,
    #[serde(default = "one_usize")]
    pub dimension: usize,
}

fn one_usize() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSection {
    pub dissipative: DissipativeField,
    #[serde(default = "zero_memory")]
    pub memory: MemoryKind,
    /// Optional looser Lipschitz constant for the memory term.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub declared_lipschitz: Option<f64>,
}

fn zero_memory() -> MemoryKind {
    MemoryKind::Zero
}

/// Initial segment `phi(s)`, `s in [-r, 0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SegmentSpec {
    Constant { value: Vec<f64> },
    /// `offset + slope * s`
    Affine { offset: Vec<f64>, slope: Vec<f64> },
    /// `offset + amplitude * sin(frequency * s + phase)`
    Harmonic {
        offset: Vec<f64>,
        amplitude: Vec<f64>,
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
    /// Grid values, oldest point first, `n_memory + 1` rows of length `d`.
    Values { points: Vec<Vec<f64>> },
}

impl SegmentSpec {
    fn build(&self, grid: TimeGrid, field: &str) -> Result<Segment, CliError> {
        let d = grid.dimension();
        let check = |v: &Vec<f64>, name: &str| {
            if v.len() != d {
                Err(CliError::config(format!("{field}.{name}"), format!("expected {d} components, got {}", v.len())))
            } else {
                Ok(())
            }
        };
        let seg = match self {
            SegmentSpec::Constant { value } => {
                check(value, "value")?;
                Segment::constant(grid, value)
            }
            SegmentSpec::Affine { offset, slope } => {
                check(offset, "offset")?;
                check(slope, "slope")?;
                Segment::sample(grid, |s, o| {
                    for i in 0..d {
                        o[i] = offset[i] + slope[i] * s;
                    }
                })
            }
            SegmentSpec::Harmonic { offset, amplitude, frequency, phase } => {
                check(offset, "offset")?;
                check(amplitude, "amplitude")?;
                Segment::sample(grid, |s, o| {
                    for i in 0..d {
                        o[i] = offset[i] + amplitude[i] * (frequency * s + phase).sin();
                    }
                })
            }
            SegmentSpec::Values { points } => Segment::from_points(grid, points),
        };
        seg.map_err(|e| CliError::config(field, e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub x: SegmentSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<SegmentSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSection {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Deadline `s`, or `"auto"` for the minimiser of the Harnack cost.
    #[serde(default = "auto")]
    pub s: DecimalValue,
}

fn default_epsilon() -> f64 {
    sfde_core::coupling::DEFAULT_EPSILON
}

fn auto() -> DecimalValue {
    DecimalValue::from("auto")
}

impl Default for CouplingSection {
    fn default() -> Self {
        Self { epsilon: default_epsilon(), s: auto() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSection {
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
}

fn default_paths() -> usize {
    10_000
}

fn default_confidence() -> f64 {
    0.99
}

impl Default for MonteCarloSection {
    fn default() -> Self {
        Self { n_paths: default_paths(), master_seed: 0, confidence: default_confidence() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub functions: Option<Vec<TestFunction>>,
    /// Spacing of recorded checkpoints; defaults to `r`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_spacing: Option<DecimalValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnackSection {
    #[serde(default = "default_ps")]
    pub p: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub functions: Option<Vec<TestFunction>>,
}

fn default_ps() -> Vec<f64> {
    vec![1.5, 2.0, 4.0]
}

impl Default for HarnackSection {
    fn default() -> Self {
        Self { p: default_ps(), functions: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct StrongFellerSection {
    /// Perturbation sizes; defaults to `2^-j`, `j = 1..6`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deltas: Option<Vec<f64>>,
    /// Perturbation direction (normalised); defaults to the constant all-ones segment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<SegmentSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub functions: Option<Vec<TestFunction>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperSection {
    pub horizon: DecimalValue,
    #[serde(default = "default_hyper_samples")]
    pub n_samples: usize,
    #[serde(default = "default_inner")]
    pub n_inner: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub functions: Option<Vec<TestFunction>>,
}

fn default_hyper_samples() -> usize {
    100
}

fn default_inner() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationarySection {
    pub moment_eps: f64,
    pub lambda_target: f64,
    /// Horizon of the moment table; defaults to `50 r`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moment_horizon: Option<DecimalValue>,
    /// Defaults to `r`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_spacing: Option<DecimalValue>,
    /// Defaults to `10 r`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<DecimalValue>,
    /// Defaults to `r`; must be at least `r`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_spacing: Option<DecimalValue>,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default = "default_chains")]
    pub n_chains: usize,
    /// Paths used for the variation-of-constants residual over `grid.horizon`.
    #[serde(default = "default_residual_paths")]
    pub residual_paths: usize,
    #[serde(default)]
    pub export_samples: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hyperbounded: Option<HyperSection>,
}

fn default_samples() -> usize {
    1000
}

fn default_chains() -> usize {
    10
}

fn default_residual_paths() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub emit_paths: bool,
}

/// The configuration file as written by the user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentKind>,
    pub grid: GridSection,
    pub drift: DriftSection,
    pub initial: InitialSection,
    #[serde(default)]
    pub coupling: CouplingSection,
    #[serde(default)]
    pub monte_carlo: MonteCarloSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub harnack: Option<HarnackSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strong_feller: Option<StrongFellerSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stationary: Option<StationarySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSection>,
}

impl ExperimentConfig {
    /// Reads TOML, or JSON when the file ends in `.json` (as embedded in reports).
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config("--config", format!("cannot read {}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| CliError::config("config", e.to_string()))
        } else {
            Self::from_toml(&text)
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            let line = e.span().map(|s| text[..s.start].lines().count().max(1));
            match line {
                Some(l) => CliError::config(format!("line {l}"), msg),
                None => CliError::config("config", msg),
            }
        })
    }
}

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub out: Option<PathBuf>,
    pub emit_paths: bool,
}

/// Fully validated experiment plan.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub kind: ExperimentKind,
    /// Config with overrides applied, decimals normalised and the output section removed.
    pub canonical: ExperimentConfig,
    pub solver: SolverConfig,
    pub x0: Segment,
    pub y0: Option<Segment>,
    pub n_paths: usize,
    pub master_seed: u64,
    pub confidence: f64,
    pub out_dir: PathBuf,
    pub emit_paths: bool,
    pub plan: Plan,
}

#[derive(Debug, Clone)]
pub enum Plan {
    Simulate { functions: Vec<TestFunction>, checkpoint_every: usize },
    Couple { epsilon: f64, s: f64 },
    Harnack { epsilon: f64, s: f64, ps: Vec<f64>, functions: Vec<TestFunction> },
    StrongFeller { epsilon: f64, deltas: Vec<f64>, direction: Segment, functions: Vec<TestFunction> },
    Stationary(Box<StationaryPlan>),
}

#[derive(Debug, Clone)]
pub struct StationaryPlan {
    pub example: OuExampleConfig,
    pub moment_horizon: f64,
    pub checkpoint_spacing: f64,
    pub burn_in: f64,
    pub sample_spacing: f64,
    pub n_samples: usize,
    pub n_chains: usize,
    pub residual_paths: usize,
    pub export_samples: bool,
    pub hyper: Option<HyperPlan>,
}

#[derive(Debug, Clone)]
pub struct HyperPlan {
    pub solver: SolverConfig,
    pub n_samples: usize,
    pub n_inner: usize,
    pub functions: Vec<TestFunction>,
}

/// Grid arithmetic on exact decimals.
struct DecimalGrid {
    dt: Decimal,
    dt_f: f64,
}

impl DecimalGrid {
    /// Number of steps in `value`, which must be an exact non-negative multiple of `dt`.
    fn steps(&self, value: &DecimalValue, field: &str) -> Result<(Decimal, usize), CliError> {
        let v = value.parse(field)?;
        if v.is_sign_negative() {
            return Err(CliError::config(field, format!("{v} must be non-negative")));
        }
        let q = v / self.dt;
        if !q.fract().is_zero() {
            return Err(CliError::config(field, format!("{v} is not an integer multiple of dt = {}", self.dt)));
        }
        let n = q
            .to_usize()
            .ok_or_else(|| CliError::config(field, format!("{v} / dt does not fit a step count")))?;
        Ok((v, n))
    }

    fn time(&self, steps: usize) -> f64 {
        steps as f64 * self.dt_f
    }
}

fn check_functions(fs: &[TestFunction], d: usize, field: &str, bounded_nonneg: bool) -> Result<(), CliError> {
    if fs.is_empty() {
        return Err(CliError::config(field, "at least one function is required"));
    }
    for (i, f) in fs.iter().enumerate() {
        let name = format!("{field}[{i}]");
        if let Some(c) = f.component() {
            if c >= d {
                return Err(CliError::config(name, format!("component {c} out of range for dimension {d}")));
            }
        }
        match *f {
            TestFunction::BallIndicator { radius } if !(radius >= 0.0) => {
                return Err(CliError::config(name, "radius must be >= 0"))
            }
            TestFunction::ClippedAverage { cap, .. } if !(cap > 0.0) => {
                return Err(CliError::config(name, "cap must be > 0"))
            }
            _ => {}
        }
        if bounded_nonneg && (!f.is_nonnegative() || f.sup_bound().is_none()) {
            return Err(CliError::config(name, format!("{} must be non-negative and bounded", f.label())));
        }
    }
    Ok(())
}

fn catalog() -> Vec<TestFunction> {
    TestFunction::standard_catalog().to_vec()
}

impl ExperimentConfig {
    /// Validates everything needed by `kind` before any path is simulated.
    pub fn resolve(&self, kind: ExperimentKind, overrides: &Overrides) -> Result<Resolved, CliError> {
        if let Some(k) = self.experiment {
            if k != kind {
                return Err(CliError::config(
                    "experiment",
                    format!("config is for `{}` but `{}` was requested", k.name(), kind.name()),
                ));
            }
        }
        let mut canonical = self.clone();
        canonical.experiment = Some(kind);
        canonical.output = None;

        // grid
        let g = &self.grid;
        let dt = g.dt.parse("grid.dt")?;
        if dt <= Decimal::ZERO {
            return Err(CliError::config("grid.dt", "must be positive"));
        }
        let dt_f = dt.to_f64().ok_or_else(|| CliError::config("grid.dt", "not representable"))?;
        let dg = DecimalGrid { dt, dt_f };
        let (r, n_memory) = dg.steps(&g.r, "grid.r")?;
        if n_memory == 0 {
            return Err(CliError::config("grid.r", "memory length must be positive"));
        }
        if g.dimension == 0 {
            return Err(CliError::config("grid.dimension", "must be at least 1"));
        }
        let (horizon, n_steps) = dg.steps(&g.horizon, "grid.horizon")?;
        if n_steps == 0 {
            return Err(CliError::config("grid.horizon", "must be at least one step"));
        }
        canonical.grid.dt = DecimalValue::canonical(dt);
        canonical.grid.r = DecimalValue::canonical(r);
        canonical.grid.horizon = DecimalValue::canonical(horizon);
        let grid = TimeGrid::new(dt_f, n_memory, g.dimension).map_err(|e| CliError::config("grid", e.to_string()))?;
        let d = grid.dimension();
        let r_f = grid.memory();

        // drift
        let memory = MemoryFunctional::new(self.drift.memory).map_err(|e| CliError::config("drift.memory", e.to_string()))?;
        let memory = match self.drift.declared_lipschitz {
            Some(l) => memory
                .with_declared_lipschitz(l)
                .map_err(|e| CliError::config("drift.declared_lipschitz", e.to_string()))?,
            None => memory,
        };
        let drift =
            DriftSpec::new(self.drift.dissipative, memory).map_err(|e| CliError::config("drift.dissipative", e.to_string()))?;
        let solver = SolverConfig::new(grid, dg.time(n_steps), drift).map_err(|e| CliError::config("grid", e.to_string()))?;
        let lipschitz = drift.lipschitz();

        // Monte Carlo
        let mut mc = self.monte_carlo.clone();
        if let Some(seed) = overrides.seed {
            mc.master_seed = seed;
        }
        if let Some(n) = overrides.paths {
            mc.n_paths = n;
        }
        if mc.n_paths < 2 {
            return Err(CliError::config("monte_carlo.n_paths", "need at least 2 paths for a standard error"));
        }
        if !(mc.confidence > 0.0 && mc.confidence < 1.0) {
            return Err(CliError::config("monte_carlo.confidence", "must lie in (0, 1)"));
        }
        canonical.monte_carlo = mc.clone();

        let x0 = self.initial.x.build(grid, "initial.x")?;
        let needs_pair = matches!(kind, ExperimentKind::Couple | ExperimentKind::Harnack);
        let y0 = match &self.initial.y {
            Some(spec) => Some(spec.build(grid, "initial.y")?),
            None if needs_pair => return Err(CliError::config("initial.y", "a second initial segment is required")),
            None => None,
        };

        let needs_t_gt_r = matches!(kind, ExperimentKind::Couple | ExperimentKind::Harnack | ExperimentKind::StrongFeller);
        if needs_t_gt_r && n_steps <= n_memory {
            return Err(CliError::config(
                "grid.horizon",
                format!(
                    "the Harnack inequality and the coupling require horizon T > memory r; got T = {horizon}, r = {r}"
                ),
            ));
        }
        let epsilon = self.coupling.epsilon;
        if needs_t_gt_r && !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(CliError::config("coupling.epsilon", format!("must lie in (0, 1), got {epsilon}")));
        }

        let resolve_s = |canonical: &mut ExperimentConfig, x0: &Segment, y0: &Segment| -> Result<f64, CliError> {
            let gap = segment_distance(&x0.view(), &y0.view()).map_err(|e| CliError::config("initial", e.to_string()))?;
            let s = match &self.coupling.s {
                DecimalValue::Text(t) if t.trim().eq_ignore_ascii_case("auto") => {
                    auto_deadline(&gap, lipschitz, &grid, solver.horizon()).map_err(|e| CliError::config("coupling.s", e.to_string()))?
                }
                v => {
                    let (_, k) = dg.steps(v, "coupling.s")?;
                    if k <= n_memory || k > n_steps {
                        return Err(CliError::config("coupling.s", format!("deadline must lie in (r, T] = ({r}, {horizon}]")));
                    }
                    canonical.coupling.s = DecimalValue::canonical(Decimal::from(k) * dt);
                    dg.time(k)
                }
            };
            Ok(s)
        };

        let plan = match kind {
            ExperimentKind::Simulate => {
                let sec = self.simulate.clone().unwrap_or_default();
                let functions = sec.functions.clone().unwrap_or_else(|| {
                    let mut f = catalog();
                    f.push(TestFunction::Terminal { component: 0 });
                    f
                });
                check_functions(&functions, d, "simulate.functions", false)?;
                let every = match &sec.checkpoint_spacing {
                    Some(v) => dg.steps(v, "simulate.checkpoint_spacing")?.1,
                    None => n_memory,
                };
                if every == 0 {
                    return Err(CliError::config("simulate.checkpoint_spacing", "must be positive"));
                }
                canonical.simulate = Some(sec);
                Plan::Simulate { functions, checkpoint_every: every }
            }
            ExperimentKind::Couple => {
                let s = resolve_s(&mut canonical, &x0, y0.as_ref().expect("checked"))?;
                Plan::Couple { epsilon, s }
            }
            ExperimentKind::Harnack => {
                let sec = self.harnack.clone().unwrap_or_default();
                if sec.p.is_empty() {
                    return Err(CliError::config("harnack.p", "at least one exponent is required"));
                }
                for (i, p) in sec.p.iter().enumerate() {
                    if !(*p > 1.0 && p.is_finite()) {
                        return Err(CliError::config(format!("harnack.p[{i}]"), format!("p must exceed 1, got {p}")));
                    }
                }
                let functions = sec.functions.clone().unwrap_or_else(catalog);
                check_functions(&functions, d, "harnack.functions", true)?;
                let s = resolve_s(&mut canonical, &x0, y0.as_ref().expect("checked"))?;
                let ps = sec.p.clone();
                canonical.harnack = Some(sec);
                Plan::Harnack { epsilon, s, ps, functions }
            }
            ExperimentKind::StrongFeller => {
                let sec = self.strong_feller.clone().unwrap_or_default();
                let deltas = sec.deltas.clone().unwrap_or_else(|| (1..=6).map(|j| 2f64.powi(-j)).collect());
                if deltas.is_empty() || deltas.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
                    return Err(CliError::config("strong_feller.deltas", "need one or more positive sizes"));
                }
                let direction = match &sec.direction {
                    Some(spec) => spec.build(grid, "strong_feller.direction")?,
                    None => Segment::constant(grid, &vec![1.0; d]).expect("finite"),
                };
                if direction.sup_norm() == 0.0 {
                    return Err(CliError::config("strong_feller.direction", "direction must be non-zero"));
                }
                let functions = sec.functions.clone().unwrap_or_else(catalog);
                check_functions(&functions, d, "strong_feller.functions", false)?;
                if let Some(i) = functions.iter().position(|f| f.sup_bound().is_none()) {
                    return Err(CliError::config(format!("strong_feller.functions[{i}]"), "function must be bounded"));
                }
                canonical.strong_feller = Some(sec);
                Plan::StrongFeller { epsilon, deltas, direction, functions }
            }
            ExperimentKind::Stationary => {
                let sec = self
                    .stationary
                    .clone()
                    .ok_or_else(|| CliError::config("stationary", "section is required for this experiment"))?;
                let lambda0 = match self.drift.dissipative {
                    DissipativeField::Linear { lambda0 } if lambda0 > 0.0 => lambda0,
                    _ => {
                        return Err(CliError::config(
                            "drift.dissipative",
                            "the stationary example needs a linear field with lambda0 > 0",
                        ))
                    }
                };
                let example = OuExampleConfig::new(lambda0, memory, sec.moment_eps, sec.lambda_target).map_err(|e| {
                    let field = if memory.declared_bound(d).is_none() { "drift.memory" } else { "stationary.moment_eps" };
                    CliError::config(field, e.to_string())
                })?;
                let steps_or = |v: &Option<DecimalValue>, default: Decimal, field: &str| -> Result<usize, CliError> {
                    let v = v.clone().unwrap_or_else(|| DecimalValue::canonical(default));
                    Ok(dg.steps(&v, field)?.1)
                };
                let mh = steps_or(&sec.moment_horizon, r * Decimal::from(50), "stationary.moment_horizon")?;
                let cs = steps_or(&sec.checkpoint_spacing, r, "stationary.checkpoint_spacing")?;
                let bi = steps_or(&sec.burn_in, r * Decimal::from(10), "stationary.burn_in")?;
                let ss = steps_or(&sec.sample_spacing, r, "stationary.sample_spacing")?;
                if mh == 0 {
                    return Err(CliError::config("stationary.moment_horizon", "must be positive"));
                }
                if cs == 0 || cs > mh {
                    return Err(CliError::config("stationary.checkpoint_spacing", "must lie in (0, moment_horizon]"));
                }
                if ss < n_memory {
                    return Err(CliError::config("stationary.sample_spacing", format!("samples must be at least r = {r} apart")));
                }
                if sec.n_samples < 2 {
                    return Err(CliError::config("stationary.n_samples", "need at least 2 samples"));
                }
                if sec.n_chains == 0 {
                    return Err(CliError::config("stationary.n_chains", "need at least one chain"));
                }
                let hyper = match &sec.hyperbounded {
                    None => None,
                    Some(h) => {
                        let (ht, k) = dg.steps(&h.horizon, "stationary.hyperbounded.horizon")?;
                        let t = dg.time(k);
                        if !(lipschitz > 0.0 && t > r_f + 1.0 / lipschitz) {
                            return Err(CliError::config(
                                "stationary.hyperbounded.horizon",
                                format!("hyperboundedness needs L > 0 and T > r + 1/L; got T = {ht}, r = {r}, L = {lipschitz}"),
                            ));
                        }
                        if h.n_samples == 0 || h.n_inner < 2 {
                            return Err(CliError::config("stationary.hyperbounded", "need n_samples >= 1 and n_inner >= 2"));
                        }
                        let functions = h.functions.clone().unwrap_or_else(catalog);
                        check_functions(&functions, d, "stationary.hyperbounded.functions", false)?;
                        let solver_h = solver.with_horizon(t).map_err(|e| CliError::config("stationary.hyperbounded.horizon", e.to_string()))?;
                        Some(HyperPlan { solver: solver_h, n_samples: h.n_samples.min(sec.n_samples), n_inner: h.n_inner, functions })
                    }
                };
                let plan = StationaryPlan {
                    example,
                    moment_horizon: dg.time(mh),
                    checkpoint_spacing: dg.time(cs),
                    burn_in: dg.time(bi),
                    sample_spacing: dg.time(ss),
                    n_samples: sec.n_samples,
                    n_chains: sec.n_chains,
                    residual_paths: sec.residual_paths,
                    export_samples: sec.export_samples,
                    hyper,
                };
                canonical.stationary = Some(sec);
                Plan::Stationary(Box::new(plan))
            }
        };

        let output = self.output.clone().unwrap_or_default();
        let out_dir = overrides.out.clone().or(output.dir).unwrap_or_else(|| PathBuf::from("sfde-out"));
        Ok(Resolved {
            kind,
            canonical,
            solver,
            x0,
            y0,
            n_paths: mc.n_paths,
            master_seed: mc.master_seed,
            confidence: mc.confidence,
            out_dir,
            emit_paths: overrides.emit_paths || output.emit_paths,
            plan,
        })
    }
}
