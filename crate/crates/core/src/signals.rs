//! Grid-aligned storage for state and input signals.
//!
//! Every signal lives on a uniform [`TimeGrid`]; node `k` sits at exactly
//! `t0 + k * h`. Input signals are hold-left (right-continuous at segment
//! starts), state signals are linearly interpolated between nodes. Windows
//! over a signal realize the closed history `[t - d, t]` and the open history
//! `[t - d, t)`; the open form never touches the value at its anchor.
//!
//! An input micro-segment may carry a quadratic profile (values at its start,
//! midpoint and end) when the control varies continuously inside the step.
//! Piecewise-constant inputs never allocate the profile.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack (in units of `h`) used when snapping a time onto a node.
const NODE_SNAP: f64 = 1e-6;

/// Number of grid steps spanned by `duration`, which must be a non-negative
/// integer multiple of `h`.
pub fn grid_steps(duration: f64, h: f64, what: &str) -> Result<usize> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Config(format!("step h must be positive, got {h}")));
    }
    if !duration.is_finite() || duration < 0.0 {
        return Err(Error::Config(format!(
            "{what} must be a finite non-negative number, got {duration}"
        )));
    }
    let ratio = duration / h;
    let n = ratio.round();
    if (ratio - n).abs() > NODE_SNAP * ratio.max(1.0) {
        return Err(Error::Config(format!(
            "{what} = {duration} is not an integer multiple of h = {h}"
        )));
    }
    Ok(n as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub h: f64,
    pub count: usize,
}

/// Where a time falls relative to the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridPosition {
    /// Exactly on node `k`.
    Node(usize),
    /// Strictly between node `k` and node `k + 1`.
    Inside(usize),
}

impl TimeGrid {
    pub fn new(t0: f64, h: f64, count: usize) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() || !t0.is_finite() {
            return Err(Error::Config(format!("invalid grid t0={t0}, h={h}")));
        }
        Ok(Self { t0, h, count })
    }

    /// Time of node `k`, computed as `t0 + k h` without accumulation.
    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.h
    }

    pub fn last_time(&self) -> f64 {
        self.time(self.count.saturating_sub(1))
    }

    pub fn position(&self, t: f64) -> Option<GridPosition> {
        if !t.is_finite() || self.count == 0 {
            return None;
        }
        let s = (t - self.t0) / self.h;
        let k = s.round();
        if (s - k).abs() <= NODE_SNAP {
            if k < 0.0 || k as usize >= self.count {
                return None;
            }
            return Some(GridPosition::Node(k as usize));
        }
        let k = s.floor();
        if k < 0.0 || k as usize + 1 >= self.count {
            return None;
        }
        Some(GridPosition::Inside(k as usize))
    }

    /// Index of the node at `t`, if `t` is grid-aligned and inside the grid.
    pub fn node_at(&self, t: f64) -> Option<usize> {
        match self.position(t)? {
            GridPosition::Node(k) => Some(k),
            GridPosition::Inside(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// Zero-order hold: the value on `[t_k, t_{k+1})` is the value at `t_k`.
    HoldLeft,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Openness {
    /// `[t - d, t]`
    Closed,
    /// `[t - d, t)`
    Open,
}

/// Input applied over one micro-step: values at the start, the midpoint and
/// the end (left limit) of the step. A held input has all three equal.
#[derive(Debug, Clone, Copy)]
pub struct Segment<'a> {
    pub left: &'a [f64],
    pub mid: &'a [f64],
    pub right: &'a [f64],
}

impl<'a> Segment<'a> {
    pub fn constant(u: &'a [f64]) -> Self {
        Self {
            left: u,
            mid: u,
            right: u,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.left == self.mid && self.left == self.right
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampledSignal {
    grid: TimeGrid,
    dim: usize,
    interpolation: Interpolation,
    values: Vec<f64>,
    written: Vec<bool>,
    /// Midpoint and end values per node (`2 * dim` each); NaN marks a held
    /// segment. Allocated on the first varying segment only.
    #[serde(skip_serializing_if = "Option::is_none")]
    profile: Option<Vec<f64>>,
}

impl SampledSignal {
    pub fn new(grid: TimeGrid, dim: usize, interpolation: Interpolation) -> Self {
        Self {
            grid,
            dim,
            interpolation,
            values: vec![0.0; grid.count * dim],
            written: vec![false; grid.count],
            profile: None,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    fn check_slot(&self, index: usize, len: usize) -> Result<()> {
        if index >= self.grid.count {
            return Err(Error::OutOfGrid {
                index: index as i64,
                count: self.grid.count,
            });
        }
        if len != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: len,
            });
        }
        if self.written[index] {
            return Err(Error::DoubleWrite { index });
        }
        Ok(())
    }

    /// Store `value` at node `index`. Each node may be written once.
    pub fn record(&mut self, index: usize, value: &[f64]) -> Result<()> {
        self.check_slot(index, value.len())?;
        let d = self.dim;
        self.values[index * d..(index + 1) * d].copy_from_slice(value);
        self.written[index] = true;
        Ok(())
    }

    /// Store a full micro-step profile starting at node `index`.
    pub fn record_segment(&mut self, index: usize, seg: Segment<'_>) -> Result<()> {
        if seg.mid.len() != self.dim || seg.right.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: seg.mid.len().min(seg.right.len()),
            });
        }
        self.record(index, seg.left)?;
        if !seg.is_constant() {
            let d = self.dim;
            let count = self.grid.count;
            let profile = self
                .profile
                .get_or_insert_with(|| vec![f64::NAN; count * 2 * d]);
            profile[index * 2 * d..index * 2 * d + d].copy_from_slice(seg.mid);
            profile[index * 2 * d + d..(index + 1) * 2 * d].copy_from_slice(seg.right);
        }
        Ok(())
    }

    pub fn is_written(&self, index: usize) -> bool {
        self.written.get(index).copied().unwrap_or(false)
    }

    /// Stored value at node `index`, if written.
    pub fn node(&self, index: usize) -> Option<&[f64]> {
        if self.is_written(index) {
            Some(&self.values[index * self.dim..(index + 1) * self.dim])
        } else {
            None
        }
    }

    /// Micro-step profile starting at node `index`.
    pub fn segment(&self, index: usize) -> Option<Segment<'_>> {
        let left = self.node(index)?;
        let d = self.dim;
        match &self.profile {
            Some(p) if !p[index * 2 * d].is_nan() => Some(Segment {
                left,
                mid: &p[index * 2 * d..index * 2 * d + d],
                right: &p[index * 2 * d + d..(index + 1) * 2 * d],
            }),
            _ => Some(Segment::constant(left)),
        }
    }

    /// Number of leading nodes that have been written.
    pub fn written_len(&self) -> usize {
        self.written.iter().take_while(|w| **w).count()
    }

    pub fn value_at(&self, t: f64) -> Result<Vec<f64>> {
        let missing = Error::OutOfCoverage { t };
        match self.grid.position(t).ok_or(missing.clone())? {
            GridPosition::Node(k) => self.node(k).map(<[f64]>::to_vec).ok_or(missing),
            GridPosition::Inside(k) => match self.interpolation {
                Interpolation::HoldLeft => self.node(k).map(<[f64]>::to_vec).ok_or(missing),
                Interpolation::Linear => {
                    let a = self.node(k).ok_or(missing.clone())?;
                    let b = self.node(k + 1).ok_or(missing)?;
                    let lambda = (t - self.grid.time(k)) / self.grid.h;
                    Ok(a.iter().zip(b).map(|(a, b)| a + lambda * (b - a)).collect())
                }
            },
        }
    }

    /// History of the signal ending at `t` and spanning `duration`.
    pub fn window(&self, t: f64, duration: f64, openness: Openness) -> Result<HistoryWindow<'_>> {
        let last = self.grid.node_at(t).ok_or(Error::OutOfCoverage { t })?;
        let span = grid_steps(duration, self.grid.h, "window duration")
            .map_err(|_| Error::OutOfCoverage { t: t - duration })?;
        if span > last {
            return Err(Error::OutOfCoverage { t: t - duration });
        }
        let first = last - span;
        let end = match openness {
            Openness::Closed => last + 1,
            Openness::Open => last,
        };
        if let Some(k) = (first..end).find(|&k| !self.is_written(k)) {
            return Err(Error::OutOfCoverage {
                t: self.grid.time(k),
            });
        }
        Ok(HistoryWindow {
            signal: self,
            anchor: t,
            duration,
            openness,
            first,
            end,
        })
    }

    /// Flat copy of the values of all written leading nodes.
    pub fn values(&self) -> &[f64] {
        &self.values[..self.written_len() * self.dim]
    }
}

/// A view of a signal over `[anchor - duration, anchor]` or
/// `[anchor - duration, anchor)`.
#[derive(Debug, Clone, Copy)]
pub struct HistoryWindow<'a> {
    signal: &'a SampledSignal,
    pub anchor: f64,
    pub duration: f64,
    pub openness: Openness,
    first: usize,
    end: usize,
}

impl<'a> HistoryWindow<'a> {
    /// Node indices (into the source signal) covered by the window.
    pub fn node_range(&self) -> std::ops::Range<usize> {
        self.first..self.end
    }

    /// Largest Euclidean norm over the covered nodes. Empty windows give 0.
    pub fn sup_norm(&self) -> f64 {
        self.node_range()
            .filter_map(|k| self.signal.node(k))
            .map(norm)
            .fold(0.0, f64::max)
    }

    /// Copy of the micro-step segments on `[anchor - duration, anchor)`.
    /// The value at the anchor is never part of the result.
    pub fn input_history(&self) -> InputHistory {
        let last = match self.openness {
            Openness::Closed => self.end - 1,
            Openness::Open => self.end,
        };
        let mut hist = InputHistory::new(self.signal.dim, self.signal.grid.h);
        for k in self.first..last {
            let seg = self
                .signal
                .segment(k)
                .expect("window construction checked coverage");
            hist.push_segment(seg);
        }
        hist.with_duration(self.duration)
    }
}

/// Euclidean norm of a vector.
pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Owned input history on `[-d, 0)` made of micro-steps of width `h`;
/// segment `j` covers `[-d + j h, -d + (j + 1) h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputHistory {
    dim: usize,
    h: f64,
    left: Vec<f64>,
    /// `2 * dim` values per segment (mid, right); NaN marks a held segment.
    profile: Option<Vec<f64>>,
    /// Exact span when known (window duration); otherwise `len * h`.
    span: Option<f64>,
}

/// Maximal block of consecutive identical held segments, or a single varying
/// segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Run {
    pub first: usize,
    pub count: usize,
    pub constant: bool,
}

impl InputHistory {
    pub fn new(dim: usize, h: f64) -> Self {
        Self {
            dim,
            h,
            left: Vec::new(),
            profile: None,
            span: None,
        }
    }

    /// History that holds `value` over `segments` micro-steps.
    pub fn constant(value: &[f64], h: f64, segments: usize) -> Self {
        let mut hist = Self::new(value.len(), h);
        for _ in 0..segments {
            hist.push_constant(value);
        }
        hist
    }

    /// Piecewise-constant history, one value per micro-step.
    pub fn from_values<V: AsRef<[f64]>>(dim: usize, h: f64, values: &[V]) -> Self {
        let mut hist = Self::new(dim, h);
        for v in values {
            hist.push_constant(v.as_ref());
        }
        hist
    }

    pub fn push_constant(&mut self, u: &[f64]) {
        assert_eq!(u.len(), self.dim, "input dimension");
        self.span = None;
        self.left.extend_from_slice(u);
        if let Some(p) = &mut self.profile {
            p.extend(std::iter::repeat_n(f64::NAN, 2 * self.dim));
        }
    }

    pub fn push_segment(&mut self, seg: Segment<'_>) {
        if seg.is_constant() {
            self.push_constant(seg.left);
            return;
        }
        let n = self.len();
        let d = self.dim;
        self.span = None;
        self.left.extend_from_slice(seg.left);
        let p = self
            .profile
            .get_or_insert_with(|| vec![f64::NAN; n * 2 * d]);
        p.extend_from_slice(seg.mid);
        p.extend_from_slice(seg.right);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.left.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Total span: the exact value given to [`InputHistory::with_duration`],
    /// else `len * h`.
    pub fn duration(&self) -> f64 {
        self.span.unwrap_or(self.len() as f64 * self.h)
    }

    /// Pin the span to `d`, which must agree with `len * h` up to rounding.
    pub fn with_duration(mut self, d: f64) -> Self {
        let approx = self.len() as f64 * self.h;
        assert!(
            (d - approx).abs() <= 1e-9 * approx.max(self.h),
            "history span {d} does not match {} segments of {}",
            self.len(),
            self.h
        );
        self.span = Some(d);
        self
    }

    pub fn segment(&self, j: usize) -> Segment<'_> {
        let d = self.dim;
        let left = &self.left[j * d..(j + 1) * d];
        match &self.profile {
            Some(p) if !p[j * 2 * d].is_nan() => Segment {
                left,
                mid: &p[j * 2 * d..j * 2 * d + d],
                right: &p[j * 2 * d + d..(j + 1) * 2 * d],
            },
            _ => Segment::constant(left),
        }
    }

    pub fn is_piecewise_constant(&self) -> bool {
        self.profile
            .as_ref()
            .is_none_or(|p| p.iter().step_by(2 * self.dim.max(1)).all(|v| v.is_nan()))
    }

    /// Blocks of identical held segments; varying segments stand alone.
    pub fn runs(&self) -> Vec<Run> {
        let mut runs: Vec<Run> = Vec::new();
        for j in 0..self.len() {
            let seg = self.segment(j);
            let constant = seg.is_constant();
            if constant {
                if let Some(last) = runs.last_mut() {
                    if last.constant && self.segment(last.first).left == seg.left {
                        last.count += 1;
                        continue;
                    }
                }
            }
            runs.push(Run {
                first: j,
                count: 1,
                constant,
            });
        }
        runs
    }

    /// Largest norm over the stored segment values.
    pub fn sup_norm(&self) -> f64 {
        (0..self.len())
            .map(|j| {
                let s = self.segment(j);
                norm(s.left).max(norm(s.mid)).max(norm(s.right))
            })
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(count: usize) -> TimeGrid {
        TimeGrid::new(0.0, 1.0, count).unwrap()
    }

    #[test]
    fn record_then_read() {
        let mut s = SampledSignal::new(grid(6), 2, Interpolation::Linear);
        s.record(3, &[1.0, 2.0]).unwrap();
        assert_eq!(s.value_at(3.0).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn record_errors() {
        let mut s = SampledSignal::new(grid(6), 3, Interpolation::Linear);
        assert_eq!(
            s.record(0, &[1.0, 2.0]),
            Err(Error::DimensionMismatch {
                expected: 3,
                got: 2
            })
        );
        s.record(1, &[0.0; 3]).unwrap();
        assert_eq!(s.record(1, &[0.0; 3]), Err(Error::DoubleWrite { index: 1 }));
        assert!(matches!(
            s.record(6, &[0.0; 3]),
            Err(Error::OutOfGrid { .. })
        ));
    }

    #[test]
    fn hold_left_reads_segment_start() {
        let mut s = SampledSignal::new(grid(5), 1, Interpolation::HoldLeft);
        s.record(2, &[7.0]).unwrap();
        s.record(3, &[-1.0]).unwrap();
        assert_eq!(s.value_at(2.5).unwrap(), vec![7.0]);
        // right-continuous at the boundary
        assert_eq!(s.value_at(3.0).unwrap(), vec![-1.0]);
        assert!(matches!(s.value_at(1.5), Err(Error::OutOfCoverage { .. })));
    }

    #[test]
    fn linear_midpoint() {
        let mut s = SampledSignal::new(grid(2), 1, Interpolation::Linear);
        s.record(0, &[0.0]).unwrap();
        s.record(1, &[2.0]).unwrap();
        assert_eq!(s.value_at(0.5).unwrap(), vec![1.0]);
        assert!(s.value_at(1.5).is_err());
    }

    #[test]
    fn window_endpoints() {
        let mut s = SampledSignal::new(grid(6), 1, Interpolation::HoldLeft);
        for k in 0..6 {
            s.record(k, &[if k == 5 { 9.0 } else { 1.0 }]).unwrap();
        }
        let closed = s.window(5.0, 1.0, Openness::Closed).unwrap();
        assert_eq!(closed.node_range(), 4..6);
        assert_eq!(closed.sup_norm(), 9.0);
        let open = s.window(5.0, 1.0, Openness::Open).unwrap();
        assert_eq!(open.sup_norm(), 1.0);
    }

    #[test]
    fn sup_norm_magnitudes() {
        let mut s = SampledSignal::new(grid(3), 1, Interpolation::Linear);
        for (k, v) in [1.0, -3.0, 2.0].iter().enumerate() {
            s.record(k, &[*v]).unwrap();
        }
        assert_eq!(
            s.window(2.0, 2.0, Openness::Closed).unwrap().sup_norm(),
            3.0
        );

        let mut c = SampledSignal::new(grid(3), 2, Interpolation::Linear);
        for k in 0..3 {
            c.record(k, &[3.0, 4.0]).unwrap();
        }
        assert_eq!(
            c.window(2.0, 2.0, Openness::Closed).unwrap().sup_norm(),
            5.0
        );

        let mut z = SampledSignal::new(grid(3), 2, Interpolation::Linear);
        for k in 0..3 {
            z.record(k, &[0.0, 0.0]).unwrap();
        }
        assert_eq!(z.window(2.0, 2.0, Openness::Open).unwrap().sup_norm(), 0.0);
    }

    #[test]
    fn open_window_needs_no_anchor_value() {
        let mut s = SampledSignal::new(grid(6), 1, Interpolation::HoldLeft);
        for k in 0..5 {
            s.record(k, &[k as f64]).unwrap();
        }
        assert!(s.window(5.0, 2.0, Openness::Open).is_ok());
        assert!(s.window(5.0, 2.0, Openness::Closed).is_err());
        let hist = s.window(5.0, 2.0, Openness::Open).unwrap().input_history();
        assert_eq!(hist.len(), 2);
        assert_eq!(hist.segment(0).left, &[3.0]);
    }

    #[test]
    fn grid_steps_rejects_misaligned() {
        assert_eq!(grid_steps(0.3, 1e-3, "r").unwrap(), 300);
        assert!(grid_steps(0.0005, 1e-3, "r").is_err());
        assert!(grid_steps(-1.0, 1e-3, "r").is_err());
    }

    #[test]
    fn runs_merge_identical_holds() {
        let h = InputHistory::from_values(1, 0.1, &[[1.0], [1.0], [2.0], [2.0], [2.0], [1.0]]);
        let runs = h.runs();
        assert_eq!(runs.len(), 3);
        assert_eq!((runs[1].first, runs[1].count), (2, 3));
    }

    #[test]
    fn varying_segments_round_trip() {
        let mut s = SampledSignal::new(grid(4), 1, Interpolation::HoldLeft);
        s.record(0, &[1.0]).unwrap();
        s.record_segment(
            1,
            Segment {
                left: &[1.0],
                mid: &[1.5],
                right: &[2.0],
            },
        )
        .unwrap();
        s.record(2, &[2.0]).unwrap();
        let hist = s.window(3.0, 3.0, Openness::Open).unwrap().input_history();
        assert!(hist.segment(0).is_constant());
        assert_eq!(hist.segment(1).mid, &[1.5]);
        assert!(hist.segment(2).is_constant());
        assert!(!hist.is_piecewise_constant());
    }
}
