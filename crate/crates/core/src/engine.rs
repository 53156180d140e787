//! One detection-then-learning pass per arriving batch.

use nalgebra::{DMatrix, DVector};

use crate::dmd::{ModeSet, OnlineDmd};
use crate::error::{CpdError, Result};
use crate::linalg::thin_qr;
use crate::stream::{
    prepare_pair, EmbeddedWindows, HankelConfig, Hankelizer, PairBlock, RawBatch, SnapshotStore,
    StoredColumn, WindowLayout,
};
use crate::svd::OnlineSvd;

/// Which statistic drives the alarm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreMode {
    Ratio,
    Difference,
    /// Both statistics are reported; alarms follow the ratio.
    #[default]
    Both,
}

/// Subspace the base and test windows are projected onto.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreBasis {
    /// Leading left singular vectors of the learning window.
    #[default]
    Pod,
    /// Orthonormalized span of the DMD modes.
    DmdModes,
}

/// How a multi-column batch is processed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BatchMode {
    /// Every column gets its own pass; results do not depend on batching.
    #[default]
    PerSnapshot,
    /// One pass per batch: one score, block updates of the model.
    Joint,
}

#[derive(Debug, Clone)]
pub struct CpdConfig {
    pub layout: WindowLayout,
    pub hankel: HankelConfig,
    /// Embedding of the controls; defaults to `hankel`.
    pub control_hankel: Option<HankelConfig>,
    /// Reduced state rank `p`.
    pub state_rank: usize,
    /// Reduced control rank `q`.
    pub control_rank: usize,
    pub threshold: f64,
    pub score_mode: ScoreMode,
    pub score_basis: ScoreBasis,
    pub batch_mode: BatchMode,
    /// Diffuse prior scale of the precision matrix.
    pub rho: f64,
    /// Online SVD tolerance; `None` uses `1e-10·√m̄`.
    pub svd_tol: Option<f64>,
    /// Known control matrix acting on embedded controls. When set the
    /// shifted states are compensated instead of augmenting the states.
    pub control_matrix: Option<DMatrix<f64>>,
}

impl CpdConfig {
    pub fn new(layout: WindowLayout, hankel: HankelConfig, state_rank: usize, control_rank: usize) -> Self {
        Self {
            layout,
            hankel,
            control_hankel: None,
            state_rank,
            control_rank,
            threshold: 0.0,
            score_mode: ScoreMode::default(),
            score_basis: ScoreBasis::default(),
            batch_mode: BatchMode::default(),
            rho: 1e4,
            svd_tol: None,
            control_matrix: None,
        }
    }

    pub fn rank(&self) -> usize {
        self.state_rank + self.control_rank
    }

    pub fn control_embedding(&self) -> HankelConfig {
        self.control_hankel.unwrap_or(self.hankel)
    }

    /// Row counts `(m̄, m_state)` of the prepared pairs.
    pub fn embedded_rows(&self, state_dim: usize, control_dim: usize) -> (usize, usize) {
        let ms = self.hankel.embedded_rows(state_dim);
        if self.control_matrix.is_some() {
            (ms, ms)
        } else {
            (ms + self.control_embedding().embedded_rows(control_dim), ms)
        }
    }
}

/// Detection output for one pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpdScore {
    /// Pair index `t` of the newest snapshot pair `(x_t, x_{t+1})`.
    pub step: usize,
    pub timestamp: f64,
    pub base_error: f64,
    pub test_error: f64,
    /// `max(0, E_T/E_B − 1)`.
    pub ratio: f64,
    /// `E_T − E_B`.
    pub difference: f64,
    pub alarm: bool,
    /// The base error fell below the round-off floor.
    pub degenerate_base: bool,
}

/// Mean squared residual of the columns of `x` off `span(u)`.
fn mean_residual(u: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    if x.ncols() == 0 {
        return 0.0;
    }
    let resid = x - u * u.tr_mul(x);
    resid.norm_squared() / x.ncols() as f64
}

/// Scores a test window against a base window on the orthonormal basis `u`.
pub fn detect(
    base: &DMatrix<f64>,
    test: &DMatrix<f64>,
    u: &DMatrix<f64>,
    threshold: f64,
    mode: ScoreMode,
) -> CpdScore {
    let eb = mean_residual(u, base);
    let et = mean_residual(u, test);
    let scale = if base.ncols() > 0 {
        base.norm_squared() / base.ncols() as f64
    } else {
        0.0
    };
    let floor = f64::EPSILON * scale.max(f64::MIN_POSITIVE);
    let degenerate = eb <= floor;
    let ratio = (et / eb.max(floor) - 1.0).max(0.0);
    let difference = et - eb;
    let alarm = match mode {
        ScoreMode::Difference => difference > threshold,
        _ => ratio > threshold,
    };
    CpdScore {
        step: 0,
        timestamp: 0.0,
        base_error: eb,
        test_error: et,
        ratio,
        difference,
        alarm,
        degenerate_base: degenerate,
    }
}

/// Streaming embedding of states, shifted states and controls in lockstep.
#[derive(Debug, Clone)]
struct Embedder {
    x: Hankelizer,
    x_next: Hankelizer,
    u: Hankelizer,
}

impl Embedder {
    fn push(
        &mut self,
        x: &DVector<f64>,
        x_next: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<Option<(DVector<f64>, DVector<f64>, DVector<f64>)>> {
        let a = self.x.push(x)?;
        let b = self.x_next.push(x_next)?;
        let c = self.u.push(u)?;
        Ok(match (a, b, c) {
            (Some(a), Some(b), Some(c)) => Some((a, b, c)),
            _ => None,
        })
    }
}

#[derive(Debug, Clone)]
struct Model {
    svd: OnlineSvd,
    dmd: OnlineDmd,
}

/// Streaming change-point detector.
#[derive(Debug, Clone)]
pub struct CpdEngine {
    cfg: CpdConfig,
    state_dim: usize,
    control_dim: usize,
    rows: usize,
    state_rows: usize,
    n_init: usize,
    embedder: Embedder,
    store: SnapshotStore,
    model: Option<Model>,
    pairs_seen: usize,
    last_timestamp: Option<f64>,
    refits: usize,
}

impl CpdEngine {
    pub fn new(cfg: CpdConfig, state_dim: usize, control_dim: usize) -> Result<Self> {
        cfg.layout.validate()?;
        cfg.hankel.validate()?;
        let uh = cfg.control_embedding();
        uh.validate()?;
        if state_dim == 0 {
            return Err(CpdError::config("state dimension must be at least 1"));
        }
        if !(cfg.threshold >= 0.0) {
            return Err(CpdError::config(format!("threshold must be nonnegative, got {}", cfg.threshold)));
        }
        if !(cfg.rho > 0.0) {
            return Err(CpdError::config(format!("prior scale must be positive, got {}", cfg.rho)));
        }
        let (rows, state_rows) = cfg.embedded_rows(state_dim, control_dim);
        if let Some(b) = &cfg.control_matrix {
            let lu = uh.embedded_rows(control_dim);
            if b.shape() != (state_rows, lu) {
                return Err(CpdError::config(format!(
                    "control matrix is {:?}, expected {state_rows}×{lu}",
                    b.shape()
                )));
            }
            if cfg.control_rank != 0 {
                return Err(CpdError::config(
                    "control rank must be 0 when the control matrix is known",
                ));
            }
        }
        if control_dim == 0 && cfg.control_rank != 0 {
            return Err(CpdError::config("control rank must be 0 without control inputs"));
        }
        let r = cfg.rank();
        if cfg.state_rank == 0 || cfg.state_rank > state_rows || r > rows {
            return Err(CpdError::config(format!(
                "ranks p={}, q={} do not fit {rows} embedded rows ({state_rows} state rows)",
                cfg.state_rank, cfg.control_rank
            )));
        }
        if cfg.layout.learning < r + 2 {
            return Err(CpdError::config(format!(
                "learning window {} must exceed the rank {r} by at least 2",
                cfg.layout.learning
            )));
        }
        let n_init = (r + 1).max(rows.min(cfg.layout.learning));
        let embedder = Embedder {
            x: Hankelizer::new(cfg.hankel, state_dim)?,
            x_next: Hankelizer::new(cfg.hankel, state_dim)?,
            u: Hankelizer::new(uh, control_dim)?,
        };
        let store = SnapshotStore::new(cfg.layout, rows, state_rows)?;
        Ok(Self {
            cfg,
            state_dim,
            control_dim,
            rows,
            state_rows,
            n_init,
            embedder,
            store,
            model: None,
            pairs_seen: 0,
            last_timestamp: None,
            refits: 0,
        })
    }

    pub fn config(&self) -> &CpdConfig {
        &self.cfg
    }

    /// Row count `m̄` of the prepared snapshots.
    pub fn embedded_rows(&self) -> usize {
        self.rows
    }

    /// Learning columns required before the model is bootstrapped.
    pub fn init_columns(&self) -> usize {
        self.n_init
    }

    pub fn is_initialized(&self) -> bool {
        self.model.is_some()
    }

    /// Raw pairs consumed so far.
    pub fn pairs_seen(&self) -> usize {
        self.pairs_seen
    }

    /// Times the operator was refitted from the learning window because a
    /// revert left the precision matrix indefinite.
    pub fn operator_refits(&self) -> usize {
        self.refits
    }

    pub fn store(&self) -> &SnapshotStore {
        &self.store
    }

    pub fn svd(&self) -> Option<&OnlineSvd> {
        self.model.as_ref().map(|m| &m.svd)
    }

    pub fn dmd(&self) -> Option<&OnlineDmd> {
        self.model.as_ref().map(|m| &m.dmd)
    }

    /// Orthonormal basis used for scoring.
    pub fn basis(&self) -> Option<DMatrix<f64>> {
        let m = self.model.as_ref()?;
        match self.cfg.score_basis {
            ScoreBasis::Pod => Some(m.svd.u().clone()),
            ScoreBasis::DmdModes => self.mode_basis(m).ok(),
        }
    }

    /// DMD eigenvalues and state-space modes of the current model.
    pub fn modes(&self) -> Result<ModeSet> {
        let m = self
            .model
            .as_ref()
            .ok_or_else(|| CpdError::state("model is not initialized yet"))?;
        let u_state = m
            .svd
            .u()
            .view((0, 0), (self.state_rows, self.cfg.state_rank))
            .into_owned();
        m.dmd.modes(&u_state)
    }

    fn mode_basis(&self, m: &Model) -> Result<DMatrix<f64>> {
        let p = self.cfg.state_rank;
        let modes = m.dmd.modes(&m.svd.u().columns(0, p).into_owned())?;
        let mut cols: Vec<DVector<f64>> = Vec::with_capacity(2 * p);
        for j in 0..p {
            let c = modes.modes.column(j);
            cols.push(c.map(|z| z.re));
            if modes.eigenvalues[j].im.abs() > 0.0 {
                cols.push(c.map(|z| z.im));
            }
        }
        let mut a = DMatrix::zeros(self.rows, cols.len());
        for (j, c) in cols.iter().enumerate() {
            a.set_column(j, c);
        }
        // Drop directions that carry no new span.
        let (q, r) = thin_qr(&a);
        let tol = 1e-10 * r.diagonal().amax().max(f64::MIN_POSITIVE);
        let keep: Vec<usize> = (0..r.ncols()).filter(|&i| r[(i, i)] > tol).collect();
        Ok(q.select_columns(&keep))
    }

    /// Feeds a batch of raw pairs. Returns one score per pass that had both
    /// windows and a trained model available.
    pub fn step(&mut self, batch: &RawBatch) -> Result<Vec<CpdScore>> {
        batch.validate()?;
        if batch.state_dim() != self.state_dim || batch.control_dim() != self.control_dim {
            return Err(CpdError::config(format!(
                "batch has {} states and {} controls, engine expects {} and {}",
                batch.state_dim(),
                batch.control_dim(),
                self.state_dim,
                self.control_dim
            )));
        }
        if batch.len() > self.cfg.layout.test {
            return Err(CpdError::config(format!(
                "mini-batch of {} snapshots exceeds the test window {}",
                batch.len(),
                self.cfg.layout.test
            )));
        }
        if let (Some(last), Some(first)) = (self.last_timestamp, batch.timestamps.first()) {
            if !(*first > last) {
                return Err(CpdError::Data(format!(
                    "timestamp {first} does not follow {last}"
                )));
            }
        }

        let mut embedded = Vec::with_capacity(batch.len());
        for j in 0..batch.len() {
            let step = self.pairs_seen;
            self.pairs_seen += 1;
            let out = self
                .embedder
                .push(
                    &batch.states.column(j).into_owned(),
                    &batch.next_states.column(j).into_owned(),
                    &batch.controls.column(j).into_owned(),
                )
                .map_err(|e| e.at_step(step))?;
            if let Some((x, xn, u)) = out {
                let (xb, xnb) = prepare_pair(
                    &DMatrix::from_column_slice(x.len(), 1, x.as_slice()),
                    &DMatrix::from_column_slice(xn.len(), 1, xn.as_slice()),
                    &DMatrix::from_column_slice(u.len(), 1, u.as_slice()),
                    self.cfg.control_matrix.as_ref(),
                )
                .map_err(|e| e.at_step(step))?;
                embedded.push(StoredColumn {
                    x: xb.column(0).into_owned(),
                    x_next: xnb.column(0).into_owned(),
                    weight: batch.weights.as_ref().map_or(1.0, |w| w[j]),
                    step,
                    timestamp: batch.timestamps[j],
                });
            }
        }
        if let Some(t) = batch.timestamps.last() {
            self.last_timestamp = Some(*t);
        }

        let mut scores = Vec::new();
        match self.cfg.batch_mode {
            BatchMode::PerSnapshot => {
                for col in embedded {
                    let step = col.step;
                    if let Some(s) = self.pass(vec![col]).map_err(|e| e.at_step(step))? {
                        scores.push(s);
                    }
                }
            }
            BatchMode::Joint => {
                if let Some(step) = embedded.last().map(|c| c.step) {
                    if let Some(s) = self.pass(embedded).map_err(|e| e.at_step(step))? {
                        scores.push(s);
                    }
                }
            }
        }
        Ok(scores)
    }

    /// Like [`step`](Self::step) but only returns the newest score.
    pub fn step_last(&mut self, batch: &RawBatch) -> Result<Option<CpdScore>> {
        Ok(self.step(batch)?.pop())
    }

    /// Preprocess, detect, learn.
    fn pass(&mut self, cols: Vec<StoredColumn>) -> Result<Option<CpdScore>> {
        let (step, timestamp) = match cols.last() {
            Some(c) => (c.step, c.timestamp),
            None => return Ok(None),
        };
        let windows = self.store.advance(cols)?;
        let score = match (&windows.base, &windows.test, self.basis()) {
            (Some(base), Some(test), Some(u)) => {
                let mut s = detect(base, test, &u, self.cfg.threshold, self.cfg.score_mode);
                s.step = step;
                s.timestamp = timestamp;
                if s.degenerate_base {
                    log::debug!("step {step}: base error below round-off floor");
                }
                Some(s)
            }
            _ => None,
        };
        self.learn(&windows)?;
        Ok(score)
    }

    fn project(&self, u: &DMatrix<f64>, block: &PairBlock) -> (DMatrix<f64>, DMatrix<f64>) {
        let x = u.tr_mul(&block.x);
        let us = u.view((0, 0), (self.state_rows, self.cfg.state_rank));
        let y = us.tr_mul(&block.x_next);
        (x, y)
    }

    fn learn(&mut self, w: &EmbeddedWindows) -> Result<()> {
        let Some(mut model) = self.model.take() else {
            if w.learning_len >= self.n_init {
                self.model = Some(self.bootstrap()?);
            }
            return Ok(());
        };
        let result = self.learn_into(&mut model, w);
        if matches!(result, Ok(true)) {
            self.refits += 1;
        }
        self.model = Some(model);
        result.map(|_| ())
    }

    /// Returns whether the operator had to be refitted.
    fn learn_into(&self, model: &mut Model, w: &EmbeddedWindows) -> Result<bool> {
        let u_prev = model.svd.u().clone();
        let mut refit = false;
        if !w.revert.is_empty() {
            let (x, y) = self.project(&u_prev, &w.revert);
            match model.dmd.revert(&x, &y, &w.revert.weights) {
                Ok(()) => {}
                Err(CpdError::State(msg)) => {
                    log::warn!("{msg}; refitting the operator on the learning window");
                    refit = true;
                }
                Err(e) => return Err(e),
            }
            model.svd.revert(w.revert.len())?;
        }
        if !w.update.is_empty() {
            model.svd.update(&scaled(&w.update))?;
        }
        if refit {
            model.dmd = self.fit_operator(model.svd.u(), &self.store.learning())?;
            return Ok(true);
        }
        model.dmd.align_to_subspace(&u_prev, model.svd.u())?;
        if !w.update.is_empty() {
            let (x, y) = self.project(model.svd.u(), &w.update);
            model.dmd.update(&x, &y, &w.update.weights)?;
        }
        Ok(false)
    }

    fn fit_operator(&self, u: &DMatrix<f64>, block: &PairBlock) -> Result<OnlineDmd> {
        let mut dmd = OnlineDmd::new(self.cfg.state_rank, self.cfg.control_rank, self.cfg.rho)?;
        let (x, y) = self.project(u, block);
        dmd.update(&x, &y, &block.weights)?;
        Ok(dmd)
    }

    fn bootstrap(&self) -> Result<Model> {
        let block = self.store.learning();
        let r = self.cfg.rank();
        let tol = self.cfg.svd_tol.unwrap_or_else(|| OnlineSvd::default_tol(self.rows));
        let svd = OnlineSvd::initialize_with_tol(&scaled(&block), r, tol)?;
        let dmd = self.fit_operator(svd.u(), &block)?;
        log::debug!("model bootstrapped on {} columns at rank {r}", block.len());
        Ok(Model { svd, dmd })
    }
}

/// Columns scaled by the square roots of their weights.
fn scaled(block: &PairBlock) -> DMatrix<f64> {
    let mut x = block.x.clone();
    for (j, w) in block.weights.iter().enumerate() {
        if *w != 1.0 {
            x.column_mut(j).scale_mut(w.sqrt());
        }
    }
    x
}
