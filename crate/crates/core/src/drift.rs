//! Decomposed drift `V(x) = v(x(0)) + Z(x)`: a dissipative field acting on the
//! current value plus a Lipschitz functional of the whole segment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SfdeError};
use crate::segment::{SegmentView, TimeGrid};

/// Slack allowed on `<v(a) - v(b), a - b>` relative to `1 + |a - b|^2`.
pub const DISSIPATIVITY_TOL: f64 = 1e-12;

/// Dissipative vector field `v` on R^d.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DissipativeField {
    /// `v(z) = -lambda0 * z`
    Linear { lambda0: f64 },
    /// `v(z) = -z |z|^2`
    CubicDecay,
    Zero,
}

impl DissipativeField {
    pub fn eval_into(&self, z: &[f64], out: &mut [f64]) {
        match *self {
            DissipativeField::Linear { lambda0 } => {
                for (o, zi) in out.iter_mut().zip(z) {
                    *o = -lambda0 * zi;
                }
            }
            DissipativeField::CubicDecay => {
                let n2: f64 = z.iter().map(|a| a * a).sum();
                for (o, zi) in out.iter_mut().zip(z) {
                    *o = -zi * n2;
                }
            }
            DissipativeField::Zero => out.iter_mut().for_each(|o| *o = 0.0),
        }
    }

    pub fn eval(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; z.len()];
        self.eval_into(z, &mut out);
        out
    }

    fn validate(&self) -> Result<()> {
        if let DissipativeField::Linear { lambda0 } = *self {
            if !(lambda0.is_finite() && lambda0 >= 0.0) {
                return Err(SfdeError::Domain(format!("lambda0 must be >= 0, got {lambda0}")));
            }
        }
        Ok(())
    }
}

/// Shape of a scalar map `g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapShape {
    Linear,
    Sin,
    Tanh,
}

/// Scalar map `g(u) = amplitude * shape(rate * u)`, applied componentwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarMap {
    pub shape: MapShape,
    pub amplitude: f64,
    #[serde(default = "one")]
    pub rate: f64,
}

fn one() -> f64 {
    1.0
}

impl ScalarMap {
    pub fn new(shape: MapShape, amplitude: f64, rate: f64) -> Self {
        Self { shape, amplitude, rate }
    }

    pub fn linear(slope: f64) -> Self {
        Self::new(MapShape::Linear, slope, 1.0)
    }

    pub fn sin(amplitude: f64) -> Self {
        Self::new(MapShape::Sin, amplitude, 1.0)
    }

    pub fn tanh(amplitude: f64) -> Self {
        Self::new(MapShape::Tanh, amplitude, 1.0)
    }

    #[inline]
    pub fn apply(&self, u: f64) -> f64 {
        let w = self.rate * u;
        self.amplitude
            * match self.shape {
                MapShape::Linear => w,
                MapShape::Sin => w.sin(),
                MapShape::Tanh => w.tanh(),
            }
    }

    pub fn lipschitz(&self) -> f64 {
        (self.amplitude * self.rate).abs()
    }

    /// Sup of `|g|` when finite.
    pub fn bound(&self) -> Option<f64> {
        match self.shape {
            MapShape::Sin | MapShape::Tanh => Some(self.amplitude.abs()),
            MapShape::Linear if self.lipschitz() == 0.0 => Some(0.0),
            MapShape::Linear => None,
        }
    }
}

/// Form of the memory functional `Z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MemoryKind {
    /// `Z(x) = g(x(-r))`
    PointDelay { map: ScalarMap },
    /// `Z(x) = g((1/r) * integral of x over [-r, 0])`, trapezoidal on the grid.
    IntegralDelay { map: ScalarMap },
    /// `Z(x) = g(x(-r))` with `g` required to be bounded.
    Bounded { map: ScalarMap },
    Zero,
}

/// Lipschitz memory functional together with its declared constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryFunctional {
    kind: MemoryKind,
    declared_lipschitz: f64,
    /// Per-component bound on `|g|`; the Euclidean bound is this times `sqrt(d)`.
    component_bound: Option<f64>,
}

impl MemoryFunctional {
    /// Builds the functional with its analytic Lipschitz constant and bound.
    pub fn new(kind: MemoryKind) -> Result<Self> {
        let (lip, bound) = match kind {
            MemoryKind::Zero => (0.0, Some(0.0)),
            MemoryKind::PointDelay { map } | MemoryKind::IntegralDelay { map } => {
                check_map(&map)?;
                (map.lipschitz(), map.bound())
            }
            MemoryKind::Bounded { map } => {
                check_map(&map)?;
                if map.bound().is_none() {
                    return Err(SfdeError::Domain("bounded memory functional needs a bounded map".into()));
                }
                (map.lipschitz(), map.bound())
            }
        };
        Ok(Self { kind, declared_lipschitz: lip, component_bound: bound })
    }

    pub fn zero() -> Self {
        Self { kind: MemoryKind::Zero, declared_lipschitz: 0.0, component_bound: Some(0.0) }
    }

    pub fn point_delay(map: ScalarMap) -> Result<Self> {
        Self::new(MemoryKind::PointDelay { map })
    }

    pub fn integral_delay(map: ScalarMap) -> Result<Self> {
        Self::new(MemoryKind::IntegralDelay { map })
    }

    pub fn bounded(map: ScalarMap) -> Result<Self> {
        Self::new(MemoryKind::Bounded { map })
    }

    /// Declares a (possibly looser) Lipschitz constant. Values below the
    /// analytic constant are rejected.
    pub fn with_declared_lipschitz(mut self, lipschitz: f64) -> Result<Self> {
        if !(lipschitz.is_finite() && lipschitz >= self.declared_lipschitz) {
            return Err(SfdeError::Domain(format!(
                "declared Lipschitz constant {lipschitz} is below the analytic value {}",
                self.declared_lipschitz
            )));
        }
        self.declared_lipschitz = lipschitz;
        Ok(self)
    }

    pub fn kind(&self) -> &MemoryKind {
        &self.kind
    }

    pub fn declared_lipschitz(&self) -> f64 {
        self.declared_lipschitz
    }

    /// Bound `M` on `|Z(x)|` in dimension `d`, when one exists.
    pub fn declared_bound(&self, dimension: usize) -> Option<f64> {
        self.component_bound.map(|b| b * (dimension as f64).sqrt())
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, MemoryKind::Zero)
    }

    pub fn eval_into(&self, x: &SegmentView<'_>, out: &mut [f64]) {
        match self.kind {
            MemoryKind::Zero => out.iter_mut().for_each(|o| *o = 0.0),
            MemoryKind::PointDelay { map } | MemoryKind::Bounded { map } => {
                for (o, xi) in out.iter_mut().zip(x.oldest()) {
                    *o = map.apply(*xi);
                }
            }
            MemoryKind::IntegralDelay { map } => {
                let n = x.grid().n_memory();
                let w = 1.0 / n as f64;
                out.iter_mut().for_each(|o| *o = 0.0);
                for (k, p) in x.iter_points().enumerate() {
                    let wk = if k == 0 || k == n { 0.5 * w } else { w };
                    for (o, pi) in out.iter_mut().zip(p) {
                        *o += wk * pi;
                    }
                }
                for o in out.iter_mut() {
                    *o = map.apply(*o);
                }
            }
        }
    }

    pub fn eval(&self, x: &SegmentView<'_>) -> Vec<f64> {
        let mut out = vec![0.0; x.grid().dimension()];
        self.eval_into(x, &mut out);
        out
    }
}

fn check_map(map: &ScalarMap) -> Result<()> {
    if !(map.amplitude.is_finite() && map.rate.is_finite()) {
        return Err(SfdeError::Domain("scalar map parameters must be finite".into()));
    }
    Ok(())
}

/// The full drift `V = v + Z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    pub dissipative: DissipativeField,
    pub memory: MemoryFunctional,
}

impl DriftSpec {
    pub fn new(dissipative: DissipativeField, memory: MemoryFunctional) -> Result<Self> {
        dissipative.validate()?;
        Ok(Self { dissipative, memory })
    }

    /// `L`, the declared Lipschitz constant of `Z`.
    pub fn lipschitz(&self) -> f64 {
        self.memory.declared_lipschitz()
    }

    /// Writes `V(x)` into `out` (`out.len()` must be `d`); `scratch` has the same length.
    #[inline]
    pub fn eval_into(&self, x: &SegmentView<'_>, out: &mut [f64], scratch: &mut [f64]) {
        self.dissipative.eval_into(x.terminal(), out);
        self.memory.eval_into(x, scratch);
        for (o, z) in out.iter_mut().zip(scratch.iter()) {
            *o += z;
        }
    }
}

/// `V(x) = v(x(0)) + Z(x)`.
pub fn eval_drift(spec: &DriftSpec, x: &SegmentView<'_>, grid: &TimeGrid) -> Result<Vec<f64>> {
    if x.grid() != grid {
        return Err(SfdeError::IncompatibleGrid("segment grid differs from the drift's grid".into()));
    }
    let d = grid.dimension();
    let mut out = vec![0.0; d];
    let mut scratch = vec![0.0; d];
    spec.eval_into(x, &mut out, &mut scratch);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum DissipativityVerdict {
    Pass,
    Fail { a: Vec<f64>, b: Vec<f64>, inner: f64 },
}

impl DissipativityVerdict {
    pub fn passed(&self) -> bool {
        matches!(self, DissipativityVerdict::Pass)
    }
}

fn uniform_in_ball(rng: &mut ChaCha8Rng, dimension: usize, radius: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dimension).map(|_| rng.sample(StandardNormal)).collect();
    let n = crate::segment::euclid(&v).max(f64::MIN_POSITIVE);
    let rho = radius * rng.random::<f64>().powf(1.0 / dimension as f64);
    v.iter_mut().for_each(|c| *c *= rho / n);
    v
}

/// Randomized check of `<v(a) - v(b), a - b> <= 0` on pairs drawn uniformly
/// from the ball of the given radius.
pub fn check_dissipative(
    v: &DissipativeField,
    dimension: usize,
    samples: usize,
    radius: f64,
    seed: u64,
) -> DissipativityVerdict {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..samples.max(1) {
        let a = uniform_in_ball(&mut rng, dimension, radius);
        let b = uniform_in_ball(&mut rng, dimension, radius);
        let va = v.eval(&a);
        let vb = v.eval(&b);
        let mut inner = 0.0;
        let mut dist2 = 0.0;
        for i in 0..dimension {
            let diff = a[i] - b[i];
            inner += (va[i] - vb[i]) * diff;
            dist2 += diff * diff;
        }
        if inner > DISSIPATIVITY_TOL * (1.0 + dist2) {
            return DissipativityVerdict::Fail { a, b, inner };
        }
    }
    DissipativityVerdict::Pass
}

/// Largest observed `|Z(x) - Z(y)| / ||x - y||` over random segment pairs.
///
/// Half of the pairs differ by a perturbation concentrated at a single grid
/// point, which is where point-delay functionals attain their constant.
pub fn estimate_lipschitz(z: &MemoryFunctional, samples: usize, grid: &TimeGrid, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = grid.segment_len();
    let d = grid.dimension();
    let mut x = vec![0.0; len];
    let mut y = vec![0.0; len];
    let mut best: f64 = 0.0;
    for i in 0..samples.max(2) {
        let level: f64 = rng.random_range(0.1..5.0);
        for xi in x.iter_mut() {
            *xi = level * rng.random_range(-1.0..1.0);
        }
        let scale = 10f64.powf(rng.random_range(-4.0..0.0));
        if i % 2 == 0 {
            for (yi, xi) in y.iter_mut().zip(&x) {
                *yi = xi + scale * rng.random_range(-1.0..1.0);
            }
        } else {
            let k = rng.random_range(0..grid.points());
            let small = scale * 1e-3;
            for (yi, xi) in y.iter_mut().zip(&x) {
                *yi = xi + small * rng.random_range(-1.0..1.0);
            }
            for c in 0..d {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                y[k * d + c] = x[k * d + c] + sign * scale;
            }
        }
        let xv = SegmentView::new(grid, &x);
        let yv = SegmentView::new(grid, &y);
        let denom = crate::segment::segment_distance(&xv, &yv).expect("same grid").gap_sup;
        if denom == 0.0 {
            continue;
        }
        let num = crate::segment::euclid_dist(&z.eval(&xv), &z.eval(&yv));
        best = best.max(num / denom);
    }
    best
}
