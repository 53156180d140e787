//! Snapshot ingestion: time-delay embedding, control handling and the rolling
//! store the learning, base and test windows are sliced from.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::error::{CpdError, Result};
use crate::linalg::vstack;

/// Time-delay embedding parameters.
///
/// `depth` is the total delay `h` in snapshots and `stride` the delay step
/// `h_d`; every embedded column stacks `depth / stride + 1` raw snapshots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HankelConfig {
    pub depth: usize,
    pub stride: usize,
}

impl HankelConfig {
    pub fn new(depth: usize, stride: usize) -> Result<Self> {
        let cfg = Self { depth, stride };
        cfg.validate()?;
        Ok(cfg)
    }

    /// No delays: embedding is the identity.
    pub fn none() -> Self {
        Self {
            depth: 0,
            stride: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(CpdError::config("delay stride must be at least 1"));
        }
        if !self.depth.is_multiple_of(self.stride) {
            return Err(CpdError::config(format!(
                "delay depth {} is not a multiple of stride {}",
                self.depth, self.stride
            )));
        }
        Ok(())
    }

    /// Number of stacked snapshots per embedded column.
    pub fn delays(&self) -> usize {
        self.depth / self.stride + 1
    }

    /// Embedded row count for a signal of dimension `dim`.
    pub fn embedded_rows(&self, dim: usize) -> usize {
        dim * self.delays()
    }
}

impl Default for HankelConfig {
    fn default() -> Self {
        Self::none()
    }
}

/// Streaming Hankel embedder for one signal.
///
/// Keeps the last `depth` raw columns so embedded columns can be produced one
/// snapshot at a time, across batch boundaries.
#[derive(Debug, Clone)]
pub struct Hankelizer {
    cfg: HankelConfig,
    dim: usize,
    history: VecDeque<DVector<f64>>,
}

impl Hankelizer {
    pub fn new(cfg: HankelConfig, dim: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            dim,
            history: VecDeque::with_capacity(cfg.depth + 1),
        })
    }

    pub fn config(&self) -> HankelConfig {
        self.cfg
    }

    pub fn output_rows(&self) -> usize {
        self.cfg.embedded_rows(self.dim)
    }

    /// True once enough history has been seen to emit embedded columns.
    pub fn is_warm(&self) -> bool {
        self.history.len() > self.cfg.depth
    }

    /// Feeds one raw snapshot; returns its embedding once warm.
    ///
    /// The embedded column stacks `[x_{t-h}, x_{t-h+h_d}, …, x_t]` with the
    /// oldest delay on top.
    pub fn push(&mut self, x: &DVector<f64>) -> Result<Option<DVector<f64>>> {
        if x.len() != self.dim {
            return Err(CpdError::config(format!(
                "snapshot has {} rows, embedder expects {}",
                x.len(),
                self.dim
            )));
        }
        if self.history.len() == self.cfg.depth + 1 {
            self.history.pop_front();
        }
        self.history.push_back(x.clone());
        if !self.is_warm() {
            return Ok(None);
        }
        let mut out = DVector::zeros(self.output_rows());
        for (slot, idx) in (0..=self.cfg.depth).step_by(self.cfg.stride).enumerate() {
            out.rows_mut(slot * self.dim, self.dim)
                .copy_from(&self.history[idx]);
        }
        Ok(Some(out))
    }

    /// Embeds a batch (`dim×j`), returning only the warm columns together
    /// with the batch offset of the first one.
    pub fn hankelize(&mut self, batch: &DMatrix<f64>) -> Result<(DMatrix<f64>, usize)> {
        let mut cols = Vec::with_capacity(batch.ncols());
        let mut first = batch.ncols();
        for j in 0..batch.ncols() {
            if let Some(col) = self.push(&batch.column(j).into_owned())? {
                if cols.is_empty() {
                    first = j;
                }
                cols.push(col);
            }
        }
        let mut out = DMatrix::zeros(self.output_rows(), cols.len());
        for (j, c) in cols.iter().enumerate() {
            out.set_column(j, c);
        }
        Ok((out, first))
    }
}

/// Offline Hankel embedding of a whole series (`dim×n`).
///
/// Column `i` embeds raw column `i + depth`; a series shorter than `depth + 1`
/// yields an empty matrix.
pub fn hankelize(series: &DMatrix<f64>, cfg: HankelConfig) -> Result<DMatrix<f64>> {
    let mut h = Hankelizer::new(cfg, series.nrows())?;
    Ok(h.hankelize(series)?.0)
}

/// A mini-batch of raw snapshot pairs with their controls.
#[derive(Debug, Clone)]
pub struct RawBatch {
    pub states: DMatrix<f64>,
    pub next_states: DMatrix<f64>,
    pub controls: DMatrix<f64>,
    pub timestamps: Vec<f64>,
    pub weights: Option<Vec<f64>>,
}

impl RawBatch {
    pub fn new(
        states: DMatrix<f64>,
        next_states: DMatrix<f64>,
        controls: DMatrix<f64>,
        timestamps: Vec<f64>,
    ) -> Result<Self> {
        let batch = Self {
            states,
            next_states,
            controls,
            timestamps,
            weights: None,
        };
        batch.validate()?;
        Ok(batch)
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        self.weights = Some(weights);
        self.validate()?;
        Ok(self)
    }

    /// Forms consecutive pairs `(x_t, x_{t+1})` from a series (`m×n`), with
    /// controls `u_t` (`l×n`, may have zero rows) and integer timestamps
    /// starting at `t0`.
    pub fn from_series(series: &DMatrix<f64>, controls: &DMatrix<f64>, t0: usize) -> Result<Self> {
        let n = series.ncols();
        if n < 2 {
            return Err(CpdError::Data("need at least two snapshots to form a pair".into()));
        }
        let j = n - 1;
        let u = if controls.nrows() == 0 {
            DMatrix::zeros(0, j)
        } else {
            controls.columns(0, j).into_owned()
        };
        Self::new(
            series.columns(0, j).into_owned(),
            series.columns(1, j).into_owned(),
            u,
            (t0..t0 + j).map(|t| t as f64).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.states.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state_dim(&self) -> usize {
        self.states.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.controls.nrows()
    }

    /// Columns `[start, start + len)` as a new batch.
    pub fn slice(&self, start: usize, len: usize) -> RawBatch {
        RawBatch {
            states: self.states.columns(start, len).into_owned(),
            next_states: self.next_states.columns(start, len).into_owned(),
            controls: self.controls.columns(start, len).into_owned(),
            timestamps: self.timestamps[start..start + len].to_vec(),
            weights: self.weights.as_ref().map(|w| w[start..start + len].to_vec()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.states.ncols();
        if self.next_states.shape() != self.states.shape() {
            return Err(CpdError::config(format!(
                "shifted states are {:?}, states are {:?}",
                self.next_states.shape(),
                self.states.shape()
            )));
        }
        if self.controls.ncols() != j {
            return Err(CpdError::config(format!(
                "controls have {} columns, states have {j}",
                self.controls.ncols()
            )));
        }
        if self.timestamps.len() != j {
            return Err(CpdError::config(format!(
                "{} timestamps for {j} snapshots",
                self.timestamps.len()
            )));
        }
        if self.timestamps.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(CpdError::Data("timestamps must be strictly increasing".into()));
        }
        if let Some(w) = &self.weights {
            if w.len() != j {
                return Err(CpdError::config(format!("{} weights for {j} snapshots", w.len())));
            }
            if w.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(CpdError::config("snapshot weights must be positive and finite"));
            }
        }
        Ok(())
    }
}

/// Applies known-control compensation or control augmentation.
///
/// With `known_b` the shifted states are compensated, `X̄′ = X′ − BΘ`;
/// otherwise the controls are stacked under the states, `X̄ = [X; Θ]`.
pub fn prepare_pair(
    x: &DMatrix<f64>,
    x_next: &DMatrix<f64>,
    controls: &DMatrix<f64>,
    known_b: Option<&DMatrix<f64>>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if x.shape() != x_next.shape() || controls.ncols() != x.ncols() {
        return Err(CpdError::config(format!(
            "inconsistent pair shapes {:?}, {:?}, controls {:?}",
            x.shape(),
            x_next.shape(),
            controls.shape()
        )));
    }
    match known_b {
        Some(b) => {
            if b.nrows() != x.nrows() || b.ncols() != controls.nrows() {
                return Err(CpdError::config(format!(
                    "control matrix is {:?}, expected {}×{}",
                    b.shape(),
                    x.nrows(),
                    controls.nrows()
                )));
            }
            Ok((x.clone(), x_next - b * controls))
        }
        None => Ok((vstack(x, controls), x_next.clone())),
    }
}

/// Window sizes, all in snapshots: base `a`, gap `b`, test `c`, learning `d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowLayout {
    pub base: usize,
    pub gap: usize,
    pub test: usize,
    pub learning: usize,
}

impl WindowLayout {
    pub fn new(base: usize, gap: usize, test: usize, learning: usize) -> Result<Self> {
        let l = Self {
            base,
            gap,
            test,
            learning,
        };
        l.validate()?;
        Ok(l)
    }

    pub fn validate(&self) -> Result<()> {
        if self.base == 0 || self.test == 0 || self.learning == 0 {
            return Err(CpdError::config(
                "base, test and learning windows must hold at least one snapshot",
            ));
        }
        if self.learning < self.base {
            log::warn!(
                "learning window {} is shorter than base window {}",
                self.learning,
                self.base
            );
        }
        Ok(())
    }

    /// Store capacity `g + c + max(b, d)`.
    pub fn capacity(&self) -> usize {
        self.gap + self.test + self.learning.max(self.base)
    }

    /// Columns needed before base and test windows are both available.
    pub fn detection_span(&self) -> usize {
        self.base + self.gap + self.test
    }
}

/// One embedded snapshot pair with its bookkeeping.
#[derive(Debug, Clone)]
pub struct StoredColumn {
    pub x: DVector<f64>,
    pub x_next: DVector<f64>,
    pub weight: f64,
    /// Raw pair index this column was embedded at.
    pub step: usize,
    pub timestamp: f64,
}

/// A set of stored pairs laid out as matrices.
#[derive(Debug, Clone)]
pub struct PairBlock {
    pub x: DMatrix<f64>,
    pub x_next: DMatrix<f64>,
    pub weights: Vec<f64>,
}

impl PairBlock {
    fn from_columns<'a>(rows: usize, next_rows: usize, cols: impl Iterator<Item = &'a StoredColumn>) -> Self {
        let cols: Vec<&StoredColumn> = cols.collect();
        let mut x = DMatrix::zeros(rows, cols.len());
        let mut x_next = DMatrix::zeros(next_rows, cols.len());
        let mut weights = Vec::with_capacity(cols.len());
        for (j, c) in cols.iter().enumerate() {
            x.set_column(j, &c.x);
            x_next.set_column(j, &c.x_next);
            weights.push(c.weight);
        }
        Self { x, x_next, weights }
    }

    pub fn len(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Result of rolling the store forward by one batch.
///
/// `revert` holds the oldest `j′` pairs of the learning slice (to forget) and
/// `update` its newest pairs (to learn); the middle of the learning window is
/// not copied out since learning never touches it.
#[derive(Debug, Clone)]
pub struct EmbeddedWindows {
    pub revert: PairBlock,
    pub update: PairBlock,
    /// Learning window length after this pass.
    pub learning_len: usize,
    pub base: Option<DMatrix<f64>>,
    pub test: Option<DMatrix<f64>>,
    /// Total embedded columns seen after this pass.
    pub total: usize,
}

/// Rolling buffer of the most recent `g + c + max(b, d)` embedded pairs.
#[derive(Debug, Clone)]
pub struct SnapshotStore {
    layout: WindowLayout,
    rows: usize,
    next_rows: usize,
    columns: VecDeque<StoredColumn>,
    total: usize,
}

impl SnapshotStore {
    pub fn new(layout: WindowLayout, rows: usize, next_rows: usize) -> Result<Self> {
        layout.validate()?;
        Ok(Self {
            layout,
            rows,
            next_rows,
            columns: VecDeque::with_capacity(layout.capacity() + 1),
            total: 0,
        })
    }

    pub fn layout(&self) -> WindowLayout {
        self.layout
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    /// Total embedded columns ever pushed.
    pub fn total(&self) -> usize {
        self.total
    }

    pub fn columns(&self) -> impl Iterator<Item = &StoredColumn> {
        self.columns.iter()
    }

    /// Absolute index range `[lo, hi)` of the learning window after `total`
    /// columns.
    fn learning_range(&self, total: usize) -> (usize, usize) {
        let l = self.layout;
        let hi = total.saturating_sub(l.gap + l.test);
        let lo = total.saturating_sub(l.gap + l.test + l.learning);
        (lo, hi)
    }

    fn offset(&self) -> usize {
        self.total - self.columns.len()
    }

    fn block(&self, lo: usize, hi: usize) -> PairBlock {
        let off = self.offset();
        PairBlock::from_columns(
            self.rows,
            self.next_rows,
            self.columns.range(lo - off..hi - off),
        )
    }

    fn matrix(&self, lo: usize, hi: usize) -> DMatrix<f64> {
        let off = self.offset();
        let mut out = DMatrix::zeros(self.rows, hi - lo);
        for (j, c) in self.columns.range(lo - off..hi - off).enumerate() {
            out.set_column(j, &c.x);
        }
        out
    }

    /// Current learning window as a block.
    pub fn learning(&self) -> PairBlock {
        let (lo, hi) = self.learning_range(self.total);
        self.block(lo, hi)
    }

    /// Pushes a batch of `j ≤ c` embedded pairs.
    ///
    /// The learning slice is taken from the store before it rolls (the
    /// columns leaving the learning window are evicted by the roll), base and
    /// test slices after it.
    pub fn advance(&mut self, new: Vec<StoredColumn>) -> Result<EmbeddedWindows> {
        let l = self.layout;
        let j = new.len();
        if j > l.test {
            return Err(CpdError::config(format!(
                "mini-batch of {j} snapshots exceeds the test window {}",
                l.test
            )));
        }
        for c in &new {
            if c.x.len() != self.rows || c.x_next.len() != self.next_rows {
                return Err(CpdError::config(format!(
                    "embedded pair has {}/{} rows, store expects {}/{}",
                    c.x.len(),
                    c.x_next.len(),
                    self.rows,
                    self.next_rows
                )));
            }
        }
        let before = self.total;
        let after = before + j;
        let (old_lo, old_hi) = self.learning_range(before);
        let (new_lo, new_hi) = self.learning_range(after);
        let revert = self.block(old_lo, new_lo);
        let update = self.block(old_hi, new_hi);

        for c in new {
            self.columns.push_back(c);
        }
        self.total = after;
        while self.columns.len() > l.capacity() {
            self.columns.pop_front();
        }

        let (base, test) = if after >= l.detection_span() {
            let t_lo = after - l.test;
            let b_hi = after - l.test - l.gap;
            (
                Some(self.matrix(b_hi - l.base, b_hi)),
                Some(self.matrix(t_lo, after)),
            )
        } else {
            (None, None)
        };

        Ok(EmbeddedWindows {
            revert,
            update,
            learning_len: new_hi - new_lo,
            base,
            test,
            total: after,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(vals: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, vals.len(), vals)
    }

    fn col(step: usize) -> StoredColumn {
        StoredColumn {
            x: DVector::from_element(1, step as f64),
            x_next: DVector::from_element(1, step as f64 + 0.5),
            weight: 1.0,
            step,
            timestamp: step as f64,
        }
    }

    #[test]
    fn zero_delay_is_identity() {
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(hankelize(&x, HankelConfig::none()).unwrap(), x);
    }

    #[test]
    fn unit_stride_embedding() {
        let out = hankelize(&row(&[1.0, 2.0, 3.0, 4.0]), HankelConfig::new(2, 1).unwrap()).unwrap();
        assert_eq!(out, DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 3.0, 3.0, 4.0]));
    }

    #[test]
    fn strided_embedding() {
        let out = hankelize(
            &row(&[1.0, 2.0, 3.0, 4.0, 5.0]),
            HankelConfig::new(4, 2).unwrap(),
        )
        .unwrap();
        assert_eq!(out, DMatrix::from_column_slice(3, 1, &[1.0, 3.0, 5.0]));
    }

    #[test]
    fn multichannel_rows_are_oldest_first() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 10.0, 20.0]);
        let out = hankelize(&x, HankelConfig::new(1, 1).unwrap()).unwrap();
        assert_eq!(out.column(0).as_slice(), &[1.0, 10.0, 2.0, 20.0]);
    }

    #[test]
    fn warm_up_spans_batches() {
        let mut h = Hankelizer::new(HankelConfig::new(2, 1).unwrap(), 1).unwrap();
        let (a, _) = h.hankelize(&row(&[1.0, 2.0])).unwrap();
        assert_eq!(a.ncols(), 0);
        let (b, first) = h.hankelize(&row(&[3.0, 4.0])).unwrap();
        assert_eq!(first, 0);
        assert_eq!(b, DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 3.0, 3.0, 4.0]));
    }

    #[test]
    fn invalid_stride_rejected() {
        assert!(HankelConfig::new(5, 2).is_err());
        assert!(HankelConfig::new(4, 0).is_err());
    }

    #[test]
    fn compensation_with_zero_control() {
        let x = DMatrix::from_element(2, 3, 1.0);
        let xn = DMatrix::from_element(2, 3, 2.0);
        let u = DMatrix::zeros(1, 3);
        let b = DMatrix::from_element(2, 1, 5.0);
        let (xb, xnb) = prepare_pair(&x, &xn, &u, Some(&b)).unwrap();
        assert_eq!(xb, x);
        assert_eq!(xnb, xn);
    }

    #[test]
    fn augmentation_stacks_controls() {
        let x = DMatrix::from_element(3, 4, 1.0);
        let u = DMatrix::from_element(2, 4, 7.0);
        let (xb, xnb) = prepare_pair(&x, &x, &u, None).unwrap();
        assert_eq!(xb.nrows(), 5);
        assert_eq!(xb[(4, 0)], 7.0);
        assert_eq!(xnb, x);
    }

    #[test]
    fn full_compensation_cancels() {
        let xn = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = DMatrix::identity(2, 2);
        let (_, out) = prepare_pair(&xn, &xn, &xn, Some(&b)).unwrap();
        assert_eq!(out, DMatrix::zeros(2, 2));
    }

    #[test]
    fn prepare_rejects_bad_shapes() {
        let x = DMatrix::zeros(2, 3);
        let u = DMatrix::zeros(1, 2);
        assert!(matches!(prepare_pair(&x, &x, &u, None), Err(CpdError::Config(_))));
    }

    #[test]
    fn steady_state_reverts_one_updates_one() {
        let layout = WindowLayout::new(2, 1, 3, 4).unwrap();
        let mut store = SnapshotStore::new(layout, 1, 1).unwrap();
        let mut last = None;
        for t in 0..20 {
            last = Some(store.advance(vec![col(t)]).unwrap());
        }
        let w = last.unwrap();
        assert_eq!(store.len(), layout.capacity());
        assert_eq!(w.revert.len(), 1);
        assert_eq!(w.update.len(), 1);
        // After 20 columns the learning window is [12, 16).
        assert_eq!(w.revert.x[(0, 0)], 11.0);
        assert_eq!(w.update.x[(0, 0)], 15.0);
        assert_eq!(w.learning_len, 4);
    }

    #[test]
    fn warm_up_has_no_reverts() {
        let layout = WindowLayout::new(2, 0, 2, 10).unwrap();
        let mut store = SnapshotStore::new(layout, 1, 1).unwrap();
        for t in 0..8 {
            let w = store.advance(vec![col(t)]).unwrap();
            assert!(w.revert.is_empty());
            assert_eq!(w.base.is_some(), t + 1 >= 4);
        }
    }

    #[test]
    fn default_layout_slices() {
        let layout = WindowLayout::new(100, 0, 100, 300).unwrap();
        let mut store = SnapshotStore::new(layout, 1, 1).unwrap();
        let mut w = None;
        for t in 0..450 {
            w = Some(store.advance(vec![col(t)]).unwrap());
        }
        let w = w.unwrap();
        let base = w.base.unwrap();
        let test = w.test.unwrap();
        assert_eq!(base[(0, 0)], 250.0);
        assert_eq!(base[(0, 99)], 349.0);
        assert_eq!(test[(0, 0)], 350.0);
        assert_eq!(test[(0, 99)], 449.0);
    }

    #[test]
    fn oversized_batch_rejected() {
        let layout = WindowLayout::new(2, 0, 2, 4).unwrap();
        let mut store = SnapshotStore::new(layout, 1, 1).unwrap();
        let err = store.advance((0..3).map(col).collect()).unwrap_err();
        assert!(matches!(err, CpdError::Config(_)));
    }

    #[test]
    fn non_monotone_timestamps_rejected() {
        let x = DMatrix::zeros(1, 3);
        let u = DMatrix::zeros(0, 3);
        let err = RawBatch::new(x.clone(), x, u, vec![0.0, 2.0, 1.0]).unwrap_err();
        assert!(matches!(err, CpdError::Data(_)));
    }
}
