//! Grid representation of path segments in C([-r, 0]; R^d).
//!
//! A segment is stored as `n_memory + 1` points of dimension `d` laid out
//! row-major in one flat buffer; point `k` sits at time `-r + k * dt` and the
//! last point is "now".

use serde::{Deserialize, Serialize};

use crate::error::{Result, SfdeError};

/// Relative tolerance used when deciding whether a time lies on the grid.
const ALIGNMENT_TOL: f64 = 1e-9;

/// Uniform time grid shared by every segment and trajectory of an experiment.
///
/// The memory length is always derived as `n_memory * dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    dt: f64,
    n_memory: usize,
    dimension: usize,
}

impl TimeGrid {
    pub fn new(dt: f64, n_memory: usize, dimension: usize) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(SfdeError::InvalidGrid(format!("dt must be positive, got {dt}")));
        }
        if n_memory == 0 {
            return Err(SfdeError::InvalidGrid("n_memory must be at least 1".into()));
        }
        if dimension == 0 {
            return Err(SfdeError::InvalidGrid("dimension must be at least 1".into()));
        }
        Ok(Self { dt, n_memory, dimension })
    }

    /// Builds a grid from a memory length that must be an integer multiple of `dt`.
    pub fn with_memory(dt: f64, memory: f64, dimension: usize) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(SfdeError::InvalidGrid(format!("dt must be positive, got {dt}")));
        }
        let n = aligned_steps(memory, dt)?;
        Self::new(dt, n, dimension)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_memory(&self) -> usize {
        self.n_memory
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Memory length `r`.
    pub fn memory(&self) -> f64 {
        self.n_memory as f64 * self.dt
    }

    /// Number of grid points in a segment.
    pub fn points(&self) -> usize {
        self.n_memory + 1
    }

    /// Length of the flat value buffer of a segment.
    pub fn segment_len(&self) -> usize {
        self.points() * self.dimension
    }

    /// Number of steps spanning `time`; fails if `time` is off the grid.
    pub fn steps(&self, time: f64) -> Result<usize> {
        aligned_steps(time, self.dt)
    }

    fn ensure_same(&self, other: &TimeGrid) -> Result<()> {
        if self.n_memory != other.n_memory
            || self.dimension != other.dimension
            || self.dt.to_bits() != other.dt.to_bits()
        {
            return Err(SfdeError::IncompatibleGrid(format!(
                "(dt={}, n_memory={}, d={}) vs (dt={}, n_memory={}, d={})",
                self.dt, self.n_memory, self.dimension, other.dt, other.n_memory, other.dimension
            )));
        }
        Ok(())
    }
}

fn aligned_steps(time: f64, dt: f64) -> Result<usize> {
    if !time.is_finite() || time < 0.0 {
        return Err(SfdeError::GridAlignment { time, dt });
    }
    let ratio = time / dt;
    let k = ratio.round();
    if (ratio - k).abs() > ALIGNMENT_TOL * ratio.max(1.0) {
        return Err(SfdeError::GridAlignment { time, dt });
    }
    Ok(k as usize)
}

/// Euclidean norm of a vector.
pub fn euclid(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Euclidean distance between two vectors of equal length.
pub fn euclid_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Borrowed segment: a grid plus a window of `n_memory + 1` points.
#[derive(Debug, Clone, Copy)]
pub struct SegmentView<'a> {
    grid: &'a TimeGrid,
    values: &'a [f64],
}

impl<'a> SegmentView<'a> {
    /// Wraps a flat window; `values.len()` must equal `grid.segment_len()`.
    pub fn new(grid: &'a TimeGrid, values: &'a [f64]) -> Self {
        debug_assert_eq!(values.len(), grid.segment_len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &'a TimeGrid {
        self.grid
    }

    pub fn values(&self) -> &'a [f64] {
        self.values
    }

    /// Value at grid point `k`, i.e. at time `-r + k * dt`.
    pub fn point(&self, k: usize) -> &'a [f64] {
        let d = self.grid.dimension;
        &self.values[k * d..(k + 1) * d]
    }

    /// x(0).
    pub fn terminal(&self) -> &'a [f64] {
        self.point(self.grid.n_memory)
    }

    /// x(-r).
    pub fn oldest(&self) -> &'a [f64] {
        self.point(0)
    }

    pub fn iter_points(&self) -> impl Iterator<Item = &'a [f64]> + 'a {
        self.values.chunks_exact(self.grid.dimension)
    }

    /// Supremum over grid points of the Euclidean norm.
    pub fn sup_norm(&self) -> f64 {
        self.iter_points().map(euclid).fold(0.0, f64::max)
    }

    pub fn to_segment(&self) -> Segment {
        Segment { grid: *self.grid, values: self.values.to_vec() }
    }
}

/// Owned segment on a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl Segment {
    /// Builds a segment from a flat row-major buffer.
    pub fn from_flat(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.segment_len() {
            return Err(SfdeError::InvalidSegment(format!(
                "expected {} values ({} points x {} components), got {}",
                grid.segment_len(),
                grid.points(),
                grid.dimension,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(SfdeError::InvalidSegment(format!("non-finite entry at index {i}")));
        }
        Ok(Self { grid, values })
    }

    /// Builds a segment from one vector per grid point.
    pub fn from_points(grid: TimeGrid, points: &[Vec<f64>]) -> Result<Self> {
        if points.iter().any(|p| p.len() != grid.dimension) {
            return Err(SfdeError::InvalidSegment(format!(
                "every point must have {} components",
                grid.dimension
            )));
        }
        Self::from_flat(grid, points.concat())
    }

    pub fn constant(grid: TimeGrid, value: &[f64]) -> Result<Self> {
        if value.len() != grid.dimension {
            return Err(SfdeError::InvalidSegment(format!(
                "constant has {} components, grid dimension is {}",
                value.len(),
                grid.dimension
            )));
        }
        Self::from_flat(grid, value.repeat(grid.points()))
    }

    pub fn zeros(grid: TimeGrid) -> Self {
        Self { grid, values: vec![0.0; grid.segment_len()] }
    }

    /// Samples a continuous initial function `s -> phi(s)`, `s` in `[-r, 0]`, at the grid points.
    pub fn sample<F>(grid: TimeGrid, mut phi: F) -> Result<Self>
    where
        F: FnMut(f64, &mut [f64]),
    {
        let d = grid.dimension;
        let r = grid.memory();
        let mut values = vec![0.0; grid.segment_len()];
        for (k, chunk) in values.chunks_exact_mut(d).enumerate() {
            phi(-r + k as f64 * grid.dt, chunk);
        }
        Self::from_flat(grid, values)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn view(&self) -> SegmentView<'_> {
        SegmentView { grid: &self.grid, values: &self.values }
    }

    pub fn terminal(&self) -> &[f64] {
        self.view().terminal()
    }

    pub fn sup_norm(&self) -> f64 {
        self.view().sup_norm()
    }

    /// `self + scale * direction`, pointwise.
    pub fn shifted(&self, direction: &Segment, scale: f64) -> Result<Segment> {
        self.grid.ensure_same(&direction.grid)?;
        let values = self.values.iter().zip(&direction.values).map(|(a, b)| a + scale * b).collect();
        Segment::from_flat(self.grid, values)
    }
}

/// Pointwise sup norm of a segment.
pub fn sup_norm(x: &SegmentView<'_>) -> f64 {
    x.sup_norm()
}

/// The two distances entering the Harnack exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentGap {
    /// `|x(0) - y(0)|`
    pub gap0: f64,
    /// `||x - y||`
    pub gap_sup: f64,
}

pub fn segment_distance(x: &SegmentView<'_>, y: &SegmentView<'_>) -> Result<SegmentGap> {
    x.grid.ensure_same(y.grid)?;
    let gap0 = euclid_dist(x.terminal(), y.terminal());
    let gap_sup = x
        .iter_points()
        .zip(y.iter_points())
        .map(|(a, b)| euclid_dist(a, b))
        .fold(0.0, f64::max);
    Ok(SegmentGap { gap0, gap_sup })
}

/// Growable record of a path on the grid, starting with a full initial segment.
///
/// Point `j` lives at time `start_time - r + j * dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryHistory {
    grid: TimeGrid,
    start_time: f64,
    values: Vec<f64>,
}

impl TrajectoryHistory {
    pub fn new(initial: &Segment, start_time: f64) -> Self {
        Self { grid: initial.grid, start_time, values: initial.values.clone() }
    }

    pub fn with_capacity(initial: &Segment, start_time: f64, steps: usize) -> Self {
        let mut values = Vec::with_capacity(initial.values.len() + steps * initial.grid.dimension);
        values.extend_from_slice(&initial.values);
        Self { grid: initial.grid, start_time, values }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Total number of stored grid points.
    pub fn len_points(&self) -> usize {
        self.values.len() / self.grid.dimension
    }

    /// Number of steps simulated past the initial segment.
    pub fn steps(&self) -> usize {
        self.len_points() - self.grid.points()
    }

    pub fn push(&mut self, point: &[f64]) {
        debug_assert_eq!(point.len(), self.grid.dimension);
        self.values.extend_from_slice(point);
    }

    /// Value at step `k` (time `start_time + k * dt`); `k = 0` is the initial x(0).
    pub fn at_step(&self, k: usize) -> &[f64] {
        let d = self.grid.dimension;
        let j = k + self.grid.n_memory;
        &self.values[j * d..(j + 1) * d]
    }

    pub fn last(&self) -> &[f64] {
        self.at_step(self.steps())
    }

    /// Segment ending at step `k`, borrowed.
    pub fn view_at_step(&self, k: usize) -> SegmentView<'_> {
        let d = self.grid.dimension;
        let lo = k * d;
        SegmentView { grid: &self.grid, values: &self.values[lo..lo + self.grid.segment_len()] }
    }

    pub fn segment_at_step(&self, k: usize) -> Result<Segment> {
        if k > self.steps() {
            return Err(self.out_of_range(self.start_time + k as f64 * self.grid.dt));
        }
        Ok(self.view_at_step(k).to_segment())
    }

    /// `X_t` for a grid time `t >= start_time`.
    pub fn extract_segment(&self, t: f64) -> Result<Segment> {
        let rel = t - self.start_time;
        if rel < -ALIGNMENT_TOL * self.grid.dt {
            return Err(self.out_of_range(t));
        }
        let k = self.grid.steps(rel.max(0.0)).map_err(|_| SfdeError::GridAlignment { time: t, dt: self.grid.dt })?;
        self.segment_at_step(k)
    }

    fn out_of_range(&self, time: f64) -> SfdeError {
        SfdeError::OutOfRange {
            time,
            start: self.start_time,
            end: self.start_time + self.steps() as f64 * self.grid.dt,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid1(n: usize) -> TimeGrid {
        TimeGrid::new(0.5, n, 1).unwrap()
    }

    #[test]
    fn grid_rejects_bad_parameters() {
        assert!(TimeGrid::new(0.0, 1, 1).is_err());
        assert!(TimeGrid::new(0.1, 0, 1).is_err());
        assert!(TimeGrid::new(0.1, 1, 0).is_err());
        assert!(TimeGrid::with_memory(0.3, 1.0, 1).is_err());
        let g = TimeGrid::with_memory(0.125, 1.0, 2).unwrap();
        assert_eq!(g.n_memory(), 8);
        assert_eq!(g.memory(), 1.0);
    }

    #[test]
    fn sup_norm_examples() {
        let g = TimeGrid::new(0.5, 2, 3).unwrap();
        let c = Segment::constant(g, &[3.0, 0.0, 4.0]).unwrap();
        assert_eq!(c.sup_norm(), 5.0);
        let s = Segment::from_flat(grid1(2), vec![1.0, -3.0, 2.0]).unwrap();
        assert_eq!(s.sup_norm(), 3.0);
        assert_eq!(Segment::zeros(g).sup_norm(), 0.0);
    }

    #[test]
    fn segment_rejects_wrong_length_and_nan() {
        assert!(Segment::from_flat(grid1(2), vec![1.0, 2.0]).is_err());
        assert!(Segment::from_flat(grid1(2), vec![1.0, f64::NAN, 2.0]).is_err());
    }

    #[test]
    fn distance_examples() {
        let g = grid1(2);
        let x = Segment::from_flat(g, vec![0.3, 1.0, -2.0]).unwrap();
        let gap = segment_distance(&x.view(), &x.view()).unwrap();
        assert_eq!((gap.gap0, gap.gap_sup), (0.0, 0.0));

        let y = Segment::from_flat(g, vec![0.3 - 0.5, 1.0 + 2.0, -2.0 - 1.0]).unwrap();
        let gap = segment_distance(&x.view(), &y.view()).unwrap();
        assert!((gap.gap0 - 1.0).abs() < 1e-15);
        assert!((gap.gap_sup - 2.0).abs() < 1e-15);

        let g2 = TimeGrid::new(0.5, 2, 2).unwrap();
        let a = Segment::constant(g2, &[1.0, 1.0]).unwrap();
        let b = Segment::constant(g2, &[4.0, 5.0]).unwrap();
        let gap = segment_distance(&a.view(), &b.view()).unwrap();
        assert_eq!((gap.gap0, gap.gap_sup), (5.0, 5.0));

        let other = Segment::zeros(grid1(3));
        assert!(matches!(
            segment_distance(&x.view(), &other.view()),
            Err(SfdeError::IncompatibleGrid(_))
        ));
    }

    #[test]
    fn extract_segment_windows() {
        let g = TimeGrid::new(0.25, 4, 1).unwrap();
        // values equal to k * dt from time -r onward
        let init = Segment::sample(g, |s, out| out[0] = s + 1.0).unwrap();
        let mut h = TrajectoryHistory::new(&init, 0.0);
        for k in 1..=8 {
            h.push(&[1.0 + k as f64 * 0.25]);
        }
        assert_eq!(h.extract_segment(0.0).unwrap(), init);
        let seg = h.extract_segment(1.0).unwrap();
        assert_eq!(seg.values(), &[1.0, 1.25, 1.5, 1.75, 2.0]);
        assert!(matches!(h.extract_segment(0.125), Err(SfdeError::GridAlignment { .. })));
        assert!(matches!(h.extract_segment(2.25), Err(SfdeError::OutOfRange { .. })));
        assert!(matches!(h.extract_segment(-0.25), Err(SfdeError::OutOfRange { .. })));
    }

    #[test]
    fn sliding_windows_overlap() {
        let g = TimeGrid::new(0.1, 5, 2).unwrap();
        let init = Segment::sample(g, |s, out| {
            out[0] = s.sin();
            out[1] = s * s;
        })
        .unwrap();
        let mut h = TrajectoryHistory::new(&init, 0.0);
        for k in 0..20 {
            h.push(&[k as f64, -(k as f64)]);
        }
        for k in 0..20 {
            let a = h.view_at_step(k);
            let b = h.view_at_step(k + 1);
            assert_eq!(&a.values()[2..], &b.values()[..b.values().len() - 2]);
        }
    }

    fn seg_strategy(n: usize, d: usize) -> impl Strategy<Value = Segment> {
        prop::collection::vec(-100.0f64..100.0, (n + 1) * d)
            .prop_map(move |v| Segment::from_flat(TimeGrid::new(0.1, n, d).unwrap(), v).unwrap())
    }

    proptest! {
        #[test]
        fn sup_norm_is_a_norm(x in seg_strategy(6, 2), y in seg_strategy(6, 2), a in -10.0f64..10.0) {
            let sum = x.shifted(&y, 1.0).unwrap();
            prop_assert!(sum.sup_norm() <= x.sup_norm() + y.sup_norm() + 1e-12);
            let scaled = Segment::zeros(*x.grid()).shifted(&x, a).unwrap();
            prop_assert!((scaled.sup_norm() - a.abs() * x.sup_norm()).abs() <= 1e-12 * (1.0 + x.sup_norm()));
        }

        #[test]
        fn terminal_gap_below_sup_gap(x in seg_strategy(4, 3), y in seg_strategy(4, 3)) {
            let gap = segment_distance(&x.view(), &y.view()).unwrap();
            prop_assert!(gap.gap0 <= gap.gap_sup);
        }
    }
}
