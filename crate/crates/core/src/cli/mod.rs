//! Command-line front end: `generate`, `run`, `eval` and `suggest-rank`.

pub mod config;
pub mod io;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;

use crate::datagen::{gen_steps, simulate_two_tanks, StepsSpec, TwoTankSpec};
use crate::engine::{CpdEngine, CpdScore};
use crate::error::{CpdError, Result};
use crate::evaluation::{alarms_at, default_window, nab_score, sweep_threshold, NabProfile};
use crate::linalg::vstack;
use crate::rank::suggest_rank;
use crate::stream::{hankelize, HankelConfig, RawBatch};

use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

pub const OUT_DIR_ENV: &str = "ODMD_CPD_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "odmd-cpd", version, about = "Streaming change-point detection with online DMD")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic benchmark stream and its labels.
    Generate(GenerateArgs),
    /// Replay CSV streams through the detector and write score files.
    Run(RunArgs),
    /// Score alarms against labeled change points.
    Eval(EvalArgs),
    /// Suggest a rank by hard thresholding the embedded window.
    SuggestRank(SuggestArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Kind {
    Steps,
    TwoTank,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(value_enum)]
    pub kind: Kind,
    #[arg(long, env = OUT_DIR_ENV, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of samples (defaults to the benchmark length).
    #[arg(long)]
    pub samples: Option<usize>,
    /// Noise standard deviation of the steps stream.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Observation noise variance of the two-tank stream.
    #[arg(long)]
    pub noise_var: Option<f64>,
    /// Generate the two-tank stream without faults.
    #[arg(long)]
    pub no_faults: bool,
}

#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// Input CSV files; several are processed in parallel.
    #[arg(long = "input", short, required = true)]
    pub inputs: Vec<PathBuf>,
    /// Config file of `key = value` lines; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, env = OUT_DIR_ENV, default_value = ".")]
    pub out_dir: PathBuf,
    /// Comma-separated state columns (default: all remaining columns).
    #[arg(long)]
    pub state_cols: Option<String>,
    #[arg(long)]
    pub control_cols: Option<String>,
    #[arg(long)]
    pub timestamp_col: Option<String>,
    /// Column excluded from the states (ground truth carried in the file).
    #[arg(long)]
    pub label_col: Option<String>,
    /// Base window `a`.
    #[arg(long)]
    pub base: Option<usize>,
    /// Gap `b` between base and test windows.
    #[arg(long)]
    pub gap: Option<usize>,
    /// Test window `c`.
    #[arg(long)]
    pub test: Option<usize>,
    /// Learning window `d`.
    #[arg(long)]
    pub learning: Option<usize>,
    /// Total delay depth `h` of the state embedding.
    #[arg(long)]
    pub delays: Option<usize>,
    /// Delay step `h_d`.
    #[arg(long)]
    pub delay_stride: Option<usize>,
    #[arg(long)]
    pub control_delays: Option<usize>,
    #[arg(long)]
    pub control_stride: Option<usize>,
    /// Reduced state rank `p`.
    #[arg(long)]
    pub state_rank: Option<usize>,
    /// Reduced control rank `q`.
    #[arg(long)]
    pub control_rank: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// ratio | difference | both
    #[arg(long)]
    pub score_mode: Option<String>,
    /// pod | dmd_modes
    #[arg(long)]
    pub score_basis: Option<String>,
    /// per_snapshot | joint
    #[arg(long)]
    pub batch_mode: Option<String>,
    /// Snapshots handed to the engine per call (at most the test window).
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub svd_tol: Option<f64>,
    /// Sleep between batches, milliseconds.
    #[arg(long)]
    pub pace_ms: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// Alarm threshold on `Q_ratio`; without it the stored alarm column is used.
    #[arg(long, conflicts_with = "sweep")]
    pub threshold: Option<f64>,
    /// Search the threshold maximizing the chosen profile.
    #[arg(long)]
    pub sweep: bool,
    /// Profile optimized by `--sweep`.
    #[arg(long, default_value = "standard")]
    pub profile: String,
    /// Scoring window length (default: span / (10·labels)).
    #[arg(long)]
    pub window: Option<usize>,
    /// Dataset length (default: one past the last score or label).
    #[arg(long)]
    pub span: Option<usize>,
    #[arg(long, default_value = "odmd-cpd")]
    pub algorithm: String,
    /// Results table; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SuggestArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub state_cols: Option<String>,
    #[arg(long)]
    pub control_cols: Option<String>,
    #[arg(long)]
    pub timestamp_col: Option<String>,
    #[arg(long)]
    pub label_col: Option<String>,
    /// Number of embedded columns analysed.
    #[arg(long, default_value_t = 100)]
    pub window: usize,
    /// First embedded column of the window.
    #[arg(long, default_value_t = 0)]
    pub offset: usize,
    #[arg(long, default_value_t = 0)]
    pub delays: usize,
    #[arg(long, default_value_t = 1)]
    pub delay_stride: usize,
    #[arg(long)]
    pub control_delays: Option<usize>,
    #[arg(long)]
    pub control_stride: Option<usize>,
}

/// Maps an error to the process exit code.
pub fn exit_code(e: &CpdError) -> i32 {
    match e.root() {
        CpdError::Config(_) => EXIT_CONFIG,
        CpdError::Data(_) | CpdError::Io(_) => EXIT_DATA,
        _ => EXIT_NUMERICAL,
    }
}

/// Parses arguments and runs the command, returning the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate(a) => cmd_generate(&a),
        Command::Run(a) => cmd_run(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::SuggestRank(a) => cmd_suggest_rank(&a),
    }
}

pub fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    std::fs::create_dir_all(&a.out_dir)?;
    match a.kind {
        Kind::Steps => {
            let mut spec = StepsSpec {
                seed: a.seed,
                ..Default::default()
            };
            if let Some(n) = a.samples {
                spec.n = n;
            }
            if let Some(s) = a.sigma {
                spec.sigma = s;
            }
            let d = gen_steps(&spec)?;
            io::write_dataset(&a.out_dir.join("steps.csv"), &d, &["x"], &[])?;
            io::write_labels(&a.out_dir.join("steps_labels.csv"), &d.labels)?;
        }
        Kind::TwoTank => {
            let mut spec = TwoTankSpec {
                seed: a.seed,
                ..Default::default()
            };
            if let Some(n) = a.samples {
                spec.n = n;
            }
            if let Some(v) = a.noise_var {
                spec.noise_var = v;
            }
            if a.no_faults {
                spec.faults = crate::datagen::FaultSchedule::none();
            }
            let d = simulate_two_tanks(&spec)?;
            io::write_dataset(&a.out_dir.join("two_tank.csv"), &d, &["h1", "h2"], &["q"])?;
            io::write_labels(&a.out_dir.join("two_tank_labels.csv"), &d.labels)?;
        }
    }
    Ok(())
}

/// Resolves file settings overridden by flags.
pub fn resolve_run_config(a: &RunArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &a.config {
        cfg.apply(&config::read_kv(path)?)?;
    }
    let flags: [(&str, Option<String>); 22] = [
        ("state_cols", a.state_cols.clone()),
        ("control_cols", a.control_cols.clone()),
        ("timestamp_col", a.timestamp_col.clone()),
        ("label_col", a.label_col.clone()),
        ("base", a.base.map(|v| v.to_string())),
        ("gap", a.gap.map(|v| v.to_string())),
        ("test", a.test.map(|v| v.to_string())),
        ("learning", a.learning.map(|v| v.to_string())),
        ("delays", a.delays.map(|v| v.to_string())),
        ("delay_stride", a.delay_stride.map(|v| v.to_string())),
        ("control_delays", a.control_delays.map(|v| v.to_string())),
        ("control_stride", a.control_stride.map(|v| v.to_string())),
        ("state_rank", a.state_rank.map(|v| v.to_string())),
        ("control_rank", a.control_rank.map(|v| v.to_string())),
        ("threshold", a.threshold.map(|v| v.to_string())),
        ("score_mode", a.score_mode.clone()),
        ("score_basis", a.score_basis.clone()),
        ("batch_mode", a.batch_mode.clone()),
        ("batch_size", a.batch_size.map(|v| v.to_string())),
        ("rho", a.rho.map(|v| v.to_string())),
        ("svd_tol", a.svd_tol.map(|v| v.to_string())),
        ("pace_ms", a.pace_ms.map(|v| v.to_string())),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
    }
    Ok(cfg)
}

/// Runs the engine over a whole stream in batches of `cfg.batch_size`.
pub fn score_stream(table: &io::StreamTable, cfg: &RunConfig) -> Result<Vec<CpdScore>> {
    let engine_cfg = cfg.engine_config()?;
    let mut engine = CpdEngine::new(engine_cfg, table.states.nrows(), table.controls.nrows())?;
    if table.len() < 2 {
        return Ok(Vec::new());
    }
    let mut pairs = RawBatch::from_series(&table.states, &table.controls, 0)?;
    pairs.timestamps = table.timestamps[..pairs.len()].to_vec();
    pairs.validate()?;
    let mut scores = Vec::new();
    let mut start = 0;
    while start < pairs.len() {
        let len = cfg.batch_size.min(pairs.len() - start);
        scores.extend(engine.step(&pairs.slice(start, len))?);
        start += len;
        if cfg.pace_ms > 0 && start < pairs.len() {
            std::thread::sleep(Duration::from_millis(cfg.pace_ms));
        }
    }
    Ok(scores)
}

fn output_stem(input: &Path) -> String {
    input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "stream".into())
}

fn run_one(input: &Path, cfg: &RunConfig, out_dir: &Path) -> Result<PathBuf> {
    let table = io::read_stream(
        input,
        &cfg.state_cols,
        &cfg.control_cols,
        cfg.timestamp_col.as_deref(),
        cfg.label_col.as_deref(),
    )?;
    let mut resolved = cfg.clone();
    resolved.state_cols = table.state_names.clone();
    resolved.control_cols = table.control_names.clone();
    let stem = output_stem(input);
    std::fs::write(out_dir.join(format!("{stem}_config.txt")), resolved.echo())?;
    let scores = score_stream(&table, &resolved)?;
    let out = out_dir.join(format!("{stem}_scores.csv"));
    io::write_scores(&out, &scores, &table.raw_timestamps)?;
    log::info!("{}: {} scores written to {}", input.display(), scores.len(), out.display());
    Ok(out)
}

pub fn cmd_run(a: &RunArgs) -> Result<()> {
    let cfg = resolve_run_config(a)?;
    cfg.engine_config()?;
    std::fs::create_dir_all(&a.out_dir)?;
    let results: Vec<Result<PathBuf>> = std::thread::scope(|s| {
        let handles: Vec<_> = a
            .inputs
            .iter()
            .map(|input| {
                let cfg = &cfg;
                let out_dir = &a.out_dir;
                s.spawn(move || run_one(input, cfg, out_dir))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(CpdError::state("worker panicked"))))
            .collect()
    });
    let mut first_err = None;
    for (input, r) in a.inputs.iter().zip(results) {
        match r {
            Ok(path) => println!("{}", path.display()),
            Err(e) => {
                eprintln!("{}: {e}", input.display());
                first_err.get_or_insert(e);
            }
        }
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let scores = io::read_scores(&a.scores)?;
    let labels = io::read_labels(&a.labels)?;
    if labels.is_empty() {
        return Err(CpdError::Data(format!("{}: no labels", a.labels.display())));
    }
    let span = a.span.unwrap_or_else(|| {
        let last_score = scores.iter().map(|s| s.step + 1).max().unwrap_or(0);
        last_score.max(labels.last().map_or(0, |l| l + 1))
    });
    let window_len = a.window.unwrap_or_else(|| default_window(span, labels.len()));
    let window = Some(window_len);
    let profile = NabProfile::by_name(&a.profile)
        .ok_or_else(|| CpdError::config(format!("unknown profile {:?}", a.profile)))?;

    let (alarms, note) = if a.sweep {
        let (best, curve) = sweep_threshold(&scores, &labels, span, window, &profile, None)?;
        for (t, s) in &curve {
            log::debug!("threshold {t:e}: {s:.2}");
        }
        (alarms_at(&scores, best), format!("threshold = {best:e}"))
    } else if let Some(t) = a.threshold {
        (alarms_at(&scores, t), format!("threshold = {t:e}"))
    } else {
        (
            scores.iter().filter(|s| s.alarm).map(|s| s.step).collect(),
            "alarms as stored".to_string(),
        )
    };

    let mut row = vec![a.algorithm.clone()];
    for p in NabProfile::all() {
        row.push(format!("{:.2}", nab_score(&alarms, &labels, span, window, &p)?));
    }
    let header = ["algorithm", "nab_standard", "nab_low_fp", "nab_low_fn"];
    match &a.out {
        Some(path) => {
            let mut w = csv::Writer::from_path(path)
                .map_err(|e| CpdError::Data(format!("{}: {e}", path.display())))?;
            w.write_record(header)
                .and_then(|_| w.write_record(&row))
                .map_err(|e| CpdError::Data(e.to_string()))?;
            w.flush()?;
        }
        None => {
            println!("{}", header.join(","));
            println!("{}", row.join(","));
        }
    }
    eprintln!("{note}; {} alarms, {} labels, window {}", alarms.len(), labels.len(), window_len);
    Ok(())
}

pub fn cmd_suggest_rank(a: &SuggestArgs) -> Result<()> {
    let list = |s: &Option<String>| -> Vec<String> {
        s.as_deref()
            .map(|v| v.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect())
            .unwrap_or_default()
    };
    let table = io::read_stream(
        &a.input,
        &list(&a.state_cols),
        &list(&a.control_cols),
        a.timestamp_col.as_deref(),
        a.label_col.as_deref(),
    )?;
    let hx = HankelConfig::new(a.delays, a.delay_stride)?;
    let hu = HankelConfig::new(
        a.control_delays.unwrap_or(a.delays),
        a.control_stride.unwrap_or(a.delay_stride),
    )?;
    let xs = hankelize(&table.states, hx)?;
    let us = hankelize(&table.controls, hu)?;
    // Align both embeddings on the newest sample.
    let n = xs.ncols().min(us.ncols());
    let emb = vstack(
        &xs.columns(xs.ncols() - n, n).into_owned(),
        &us.columns(us.ncols() - n, n).into_owned(),
    );
    if a.window == 0 || a.offset + a.window > emb.ncols() {
        return Err(CpdError::Data(format!(
            "window [{}, {}) exceeds the {} embedded columns",
            a.offset,
            a.offset + a.window,
            emb.ncols()
        )));
    }
    if a.window < emb.nrows() {
        log::warn!(
            "window of {} columns is shorter than the {} embedded rows; aspect ratio inverted",
            a.window,
            emb.nrows()
        );
    }
    let x: DMatrix<f64> = emb.columns(a.offset, a.window).into_owned();
    let s = suggest_rank(&x)?;
    println!("rank = {}", s.rank);
    println!("threshold = {:e}", s.threshold);
    println!("kept_energy = {:.6}", s.kept_energy);
    println!("beta = {:.6}", s.beta);
    println!("embedded_rows = {}", emb.nrows());
    Ok(())
}
