//! Streaming change-point detection with truncated online dynamic mode
//! decomposition with control.
//!
//! Incoming snapshot pairs are delay-embedded, optionally augmented with
//! control inputs, and pushed through a rolling store. Each pass scores the
//! newest test window against an older base window by their mean
//! reconstruction error on a low-rank subspace, then updates that subspace
//! (online SVD) and the reduced operator (windowed RLS DMD).
//!
//! ```
//! use nalgebra::DMatrix;
//! use odmd_cpd::{CpdConfig, CpdEngine, HankelConfig, RawBatch, WindowLayout};
//!
//! let layout = WindowLayout::new(20, 0, 20, 60).unwrap();
//! let cfg = CpdConfig::new(layout, HankelConfig::new(4, 1).unwrap(), 2, 0);
//! let mut engine = CpdEngine::new(cfg, 1, 0).unwrap();
//!
//! let series = DMatrix::from_fn(1, 400, |_, k| if k < 250 { 0.0 } else { 1.0 } + (k as f64).sin() * 0.1);
//! let pairs = RawBatch::from_series(&series, &DMatrix::zeros(0, 400), 0).unwrap();
//! let mut scores = Vec::new();
//! for k in 0..pairs.len() {
//!     scores.extend(engine.step(&pairs.slice(k, 1)).unwrap());
//! }
//! assert!(!scores.is_empty());
//! ```

pub mod cli;
pub mod datagen;
pub mod dmd;
pub mod engine;
pub mod error;
pub mod evaluation;
pub mod linalg;
pub mod rank;
pub mod stream;
pub mod svd;

pub use datagen::{gen_steps, simulate_two_tanks, Dataset, FaultSchedule, StepsSpec, TwoTankSpec};
pub use dmd::{exact_modes, project_reconstruct, AlignReport, ModeSet, OnlineDmd};
pub use engine::{detect, BatchMode, CpdConfig, CpdEngine, CpdScore, ScoreBasis, ScoreMode};
pub use error::{CpdError, Result};
pub use evaluation::{nab_score, sweep_threshold, NabProfile};
pub use rank::{suggest_rank, RankSuggestion};
pub use stream::{hankelize, prepare_pair, HankelConfig, Hankelizer, RawBatch, SnapshotStore, WindowLayout};
pub use svd::OnlineSvd;
