//! Catalog of test functionals `f: C -> R` evaluated on terminal segments.

use serde::{Deserialize, Serialize};

use crate::segment::SegmentView;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TestFunction {
    Constant {
        value: f64,
    },
    /// `(1 + tanh(scale * x(0)_c + shift)) / 2`
    Sigmoid {
        #[serde(default = "one")]
        scale: f64,
        #[serde(default)]
        shift: f64,
        #[serde(default)]
        component: usize,
    },
    /// Indicator of the sup-norm ball of the given radius.
    BallIndicator { radius: f64 },
    /// Segment average of component `c`, clipped to `[-cap, cap]` and rescaled to `[0, 1]`.
    ClippedAverage {
        cap: f64,
        #[serde(default)]
        component: usize,
    },
    /// `x(0)_c`; unbounded, only for mean checks.
    Terminal {
        #[serde(default)]
        component: usize,
    },
}

fn one() -> f64 {
    1.0
}

impl TestFunction {
    pub fn eval(&self, x: &SegmentView<'_>) -> f64 {
        match *self {
            TestFunction::Constant { value } => value,
            TestFunction::Sigmoid { scale, shift, component } => {
                0.5 * (1.0 + (scale * x.terminal()[component] + shift).tanh())
            }
            TestFunction::BallIndicator { radius } => f64::from(x.sup_norm() <= radius),
            TestFunction::ClippedAverage { cap, component } => {
                let n = x.grid().n_memory();
                let d = x.grid().dimension();
                let v = x.values();
                let mut avg = 0.5 * (v[component] + v[n * d + component]);
                for k in 1..n {
                    avg += v[k * d + component];
                }
                avg /= n as f64;
                (avg.clamp(-cap, cap) + cap) / (2.0 * cap)
            }
            TestFunction::Terminal { component } => x.terminal()[component],
        }
    }

    /// `||f||_inf` when finite.
    pub fn sup_bound(&self) -> Option<f64> {
        match *self {
            TestFunction::Constant { value } => Some(value.abs()),
            TestFunction::Sigmoid { .. } | TestFunction::BallIndicator { .. } | TestFunction::ClippedAverage { .. } => {
                Some(1.0)
            }
            TestFunction::Terminal { .. } => None,
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        match *self {
            TestFunction::Constant { value } => value >= 0.0,
            TestFunction::Terminal { .. } => false,
            _ => true,
        }
    }

    /// Component index used by the functional, if any.
    pub fn component(&self) -> Option<usize> {
        match *self {
            TestFunction::Sigmoid { component, .. }
            | TestFunction::ClippedAverage { component, .. }
            | TestFunction::Terminal { component } => Some(component),
            _ => None,
        }
    }

    /// Short label for tables and plot series.
    pub fn label(&self) -> String {
        match *self {
            TestFunction::Constant { value } => format!("const({value})"),
            TestFunction::Sigmoid { scale, shift, component } => format!("sigmoid({scale};{shift})[{component}]"),
            TestFunction::BallIndicator { radius } => format!("ball({radius})"),
            TestFunction::ClippedAverage { cap, component } => format!("clipavg({cap})[{component}]"),
            TestFunction::Terminal { component } => format!("terminal[{component}]"),
        }
    }

    /// The three non-negative bounded entries used by the verification runs:
    /// a smooth sigmoid of x(0), a sup-norm ball indicator and a clipped average.
    pub fn standard_catalog() -> [TestFunction; 3] {
        [
            TestFunction::Sigmoid { scale: 1.0, shift: 0.0, component: 0 },
            TestFunction::BallIndicator { radius: 1.0 },
            TestFunction::ClippedAverage { cap: 1.0, component: 0 },
        ]
    }
}
