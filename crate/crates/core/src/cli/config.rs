//! Flat `key = value` run configuration, merged under command-line flags.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::engine::{BatchMode, CpdConfig, ScoreBasis, ScoreMode};
use crate::error::{CpdError, Result};
use crate::stream::{HankelConfig, WindowLayout};

/// Parses `key = value` lines. `#` starts a comment, `[section]` headers
/// are accepted and ignored, dashes in keys are read as underscores.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() || (line.starts_with('[') && line.ends_with(']')) {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CpdError::config(format!("config line {}: expected key = value", no + 1))
        })?;
        out.insert(k.trim().replace('-', "_"), v.trim().to_string());
    }
    Ok(out)
}

pub fn read_kv(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CpdError::config(format!("cannot read config {}: {e}", path.display())))?;
    parse_kv(&text)
}

/// Fully resolved settings of one `run`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub state_cols: Vec<String>,
    pub control_cols: Vec<String>,
    pub timestamp_col: Option<String>,
    pub label_col: Option<String>,
    pub base: usize,
    pub gap: usize,
    pub test: usize,
    pub learning: usize,
    pub delays: usize,
    pub delay_stride: usize,
    pub control_delays: Option<usize>,
    pub control_stride: Option<usize>,
    pub state_rank: usize,
    pub control_rank: usize,
    pub threshold: f64,
    pub score_mode: ScoreMode,
    pub score_basis: ScoreBasis,
    pub batch_mode: BatchMode,
    pub batch_size: usize,
    pub rho: f64,
    pub svd_tol: Option<f64>,
    pub pace_ms: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            state_cols: Vec::new(),
            control_cols: Vec::new(),
            timestamp_col: None,
            label_col: None,
            base: 100,
            gap: 0,
            test: 100,
            learning: 300,
            delays: 80,
            delay_stride: 1,
            control_delays: None,
            control_stride: None,
            state_rank: 2,
            control_rank: 0,
            threshold: 0.0,
            score_mode: ScoreMode::Both,
            score_basis: ScoreBasis::Pod,
            batch_mode: BatchMode::PerSnapshot,
            batch_size: 1,
            rho: 1e4,
            svd_tol: None,
            pace_ms: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| CpdError::config(format!("invalid value {v:?} for {key}")))
}

fn list(v: &str) -> Vec<String> {
    v.split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

pub fn parse_score_mode(v: &str) -> Result<ScoreMode> {
    match v {
        "ratio" => Ok(ScoreMode::Ratio),
        "difference" | "diff" => Ok(ScoreMode::Difference),
        "both" => Ok(ScoreMode::Both),
        _ => Err(CpdError::config(format!("unknown score mode {v:?}"))),
    }
}

pub fn parse_score_basis(v: &str) -> Result<ScoreBasis> {
    match v {
        "pod" => Ok(ScoreBasis::Pod),
        "dmd" | "dmd_modes" | "dmd-modes" => Ok(ScoreBasis::DmdModes),
        _ => Err(CpdError::config(format!("unknown score basis {v:?}"))),
    }
}

pub fn parse_batch_mode(v: &str) -> Result<BatchMode> {
    match v {
        "per_snapshot" | "per-snapshot" => Ok(BatchMode::PerSnapshot),
        "joint" => Ok(BatchMode::Joint),
        _ => Err(CpdError::config(format!("unknown batch mode {v:?}"))),
    }
}

fn score_mode_name(m: ScoreMode) -> &'static str {
    match m {
        ScoreMode::Ratio => "ratio",
        ScoreMode::Difference => "difference",
        ScoreMode::Both => "both",
    }
}

fn score_basis_name(b: ScoreBasis) -> &'static str {
    match b {
        ScoreBasis::Pod => "pod",
        ScoreBasis::DmdModes => "dmd_modes",
    }
}

fn batch_mode_name(b: BatchMode) -> &'static str {
    match b {
        BatchMode::PerSnapshot => "per_snapshot",
        BatchMode::Joint => "joint",
    }
}

impl RunConfig {
    /// Applies one setting.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let key = key.replace('-', "_");
        match key.as_str() {
            "state_cols" => self.state_cols = list(v),
            "control_cols" => self.control_cols = list(v),
            "timestamp_col" => self.timestamp_col = Some(v.to_string()).filter(|s| !s.is_empty()),
            "label_col" => self.label_col = Some(v.to_string()).filter(|s| !s.is_empty()),
            "base" => self.base = parse(&key, v)?,
            "gap" => self.gap = parse(&key, v)?,
            "test" => self.test = parse(&key, v)?,
            "learning" => self.learning = parse(&key, v)?,
            "delays" => self.delays = parse(&key, v)?,
            "delay_stride" => self.delay_stride = parse(&key, v)?,
            "control_delays" => self.control_delays = Some(parse(&key, v)?),
            "control_stride" => self.control_stride = Some(parse(&key, v)?),
            "state_rank" => self.state_rank = parse(&key, v)?,
            "control_rank" => self.control_rank = parse(&key, v)?,
            "threshold" => self.threshold = parse(&key, v)?,
            "score_mode" => self.score_mode = parse_score_mode(v)?,
            "score_basis" => self.score_basis = parse_score_basis(v)?,
            "batch_mode" => self.batch_mode = parse_batch_mode(v)?,
            "batch_size" => self.batch_size = parse(&key, v)?,
            "rho" => self.rho = parse(&key, v)?,
            "svd_tol" => self.svd_tol = Some(parse(&key, v)?),
            "pace_ms" => self.pace_ms = parse(&key, v)?,
            _ => return Err(CpdError::config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn apply(&mut self, kv: &BTreeMap<String, String>) -> Result<()> {
        for (k, v) in kv {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn engine_config(&self) -> Result<CpdConfig> {
        if self.batch_size == 0 {
            return Err(CpdError::config("batch size must be at least 1"));
        }
        if self.batch_size > self.test {
            return Err(CpdError::config(format!(
                "batch size {} exceeds the test window {}",
                self.batch_size, self.test
            )));
        }
        let layout = WindowLayout::new(self.base, self.gap, self.test, self.learning)?;
        let hankel = HankelConfig::new(self.delays, self.delay_stride)?;
        let control_hankel = match (self.control_delays, self.control_stride) {
            (None, None) => None,
            (d, s) => Some(HankelConfig::new(
                d.unwrap_or(self.delays),
                s.unwrap_or(self.delay_stride),
            )?),
        };
        let mut cfg = CpdConfig::new(layout, hankel, self.state_rank, self.control_rank);
        cfg.control_hankel = control_hankel;
        cfg.threshold = self.threshold;
        cfg.score_mode = self.score_mode;
        cfg.score_basis = self.score_basis;
        cfg.batch_mode = self.batch_mode;
        cfg.rho = self.rho;
        cfg.svd_tol = self.svd_tol;
        Ok(cfg)
    }

    /// The resolved configuration in the same format it is read from.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<String>| v.unwrap_or_default();
        let _ = writeln!(s, "state_cols = {}", self.state_cols.join(","));
        let _ = writeln!(s, "control_cols = {}", self.control_cols.join(","));
        let _ = writeln!(s, "timestamp_col = {}", opt(self.timestamp_col.clone()));
        let _ = writeln!(s, "label_col = {}", opt(self.label_col.clone()));
        let _ = writeln!(s, "base = {}", self.base);
        let _ = writeln!(s, "gap = {}", self.gap);
        let _ = writeln!(s, "test = {}", self.test);
        let _ = writeln!(s, "learning = {}", self.learning);
        let _ = writeln!(s, "delays = {}", self.delays);
        let _ = writeln!(s, "delay_stride = {}", self.delay_stride);
        if let Some(d) = self.control_delays {
            let _ = writeln!(s, "control_delays = {d}");
        }
        if let Some(d) = self.control_stride {
            let _ = writeln!(s, "control_stride = {d}");
        }
        let _ = writeln!(s, "state_rank = {}", self.state_rank);
        let _ = writeln!(s, "control_rank = {}", self.control_rank);
        let _ = writeln!(s, "threshold = {}", self.threshold);
        let _ = writeln!(s, "score_mode = {}", score_mode_name(self.score_mode));
        let _ = writeln!(s, "score_basis = {}", score_basis_name(self.score_basis));
        let _ = writeln!(s, "batch_mode = {}", batch_mode_name(self.batch_mode));
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "rho = {}", self.rho);
        if let Some(t) = self.svd_tol {
            let _ = writeln!(s, "svd_tol = {t}");
        }
        let _ = writeln!(s, "pace_ms = {}", self.pace_ms);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_parsing() {
        let kv = parse_kv("# comment\n[engine]\nbase = 50\nstate-rank=3 # trailing\n").unwrap();
        assert_eq!(kv["base"], "50");
        assert_eq!(kv["state_rank"], "3");
        assert!(parse_kv("oops").is_err());
    }

    #[test]
    fn echo_round_trips() {
        let mut cfg = RunConfig {
            state_cols: vec!["a".into(), "b".into()],
            control_delays: Some(30),
            svd_tol: Some(1e-9),
            ..Default::default()
        };
        cfg.set("score_mode", "ratio").unwrap();
        let mut back = RunConfig::default();
        back.apply(&parse_kv(&cfg.echo()).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(RunConfig::default().set("bogus", "1").is_err());
    }
}
