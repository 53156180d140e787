//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Set `ACCEPTANCE_STRICT` to exit nonzero when a criterion fails and
//! `ACCEPTANCE_ONLY=<n>` to run a single criterion.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use odmd_cpd::datagen::{gen_steps, simulate_two_tanks, FaultSchedule, StepsSpec, TwoTankSpec};
use odmd_cpd::evaluation::{nab_score, NabProfile};
use odmd_cpd::linalg::{max_principal_angle, orthogonality_error_fro, truncated_svd};
use odmd_cpd::{
    suggest_rank, CpdConfig, CpdEngine, CpdScore, HankelConfig, OnlineDmd, OnlineSvd,
    RawBatch, WindowLayout,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// Batch least squares `Y Xᵀ (X Xᵀ)⁻¹` by Cholesky of the Gram matrix.
fn batch_operator(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    let gram = x * x.transpose();
    let chol = gram.cholesky().expect("Gram matrix is positive definite");
    chol.solve(&(x * y.transpose())).transpose()
}

/// Random stable `m×m` state matrix with spectral radius 0.9 and input matrix.
fn stable_system(m: usize, l: usize, rng: &mut ChaCha8Rng) -> (DMatrix<f64>, DMatrix<f64>) {
    let a = gaussian(m, m, rng);
    let radius = a
        .clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0f64, f64::max);
    (a * (0.9 / radius), gaussian(m, l, rng))
}

fn rls_batch_equivalence() -> Outcome {
    let (m, l, n) = (5, 2, 500);
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = stable_system(m, l, &mut rng);
        let u = gaussian(l, n, &mut rng);
        let mut x = DMatrix::zeros(m, n + 1);
        x.set_column(0, &gaussian(m, 1, &mut rng).column(0));
        for k in 0..n {
            let next = &a * x.column(k) + &b * u.column(k) + gaussian(m, 1, &mut rng).column(0);
            x.set_column(k + 1, &next);
        }
        let xa = DMatrix::from_fn(m + l, n, |i, k| if i < m { x[(i, k)] } else { u[(i - m, k)] });
        let y = x.columns(1, n).into_owned();

        let mut dmd = OnlineDmd::new(m, l, 1e4).unwrap();
        for k in 0..n {
            dmd.update(&xa.columns(k, 1).into_owned(), &y.columns(k, 1).into_owned(), &[1.0])
                .unwrap();
        }
        worst = worst.max(rel(dmd.operator(), &batch_operator(&xa, &y)));
    }
    outcome(worst <= 1e-6, format!("worst relative error {worst:.2e} over 20 systems (limit 1e-6)"))
}

fn update_revert_inverse() -> Outcome {
    let (p, q) = (5, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut dmd = OnlineDmd::new(p, q, 1e4).unwrap();
    dmd.update(&gaussian(p + q, 200, &mut rng), &gaussian(p, 200, &mut rng), &[1.0; 200])
        .unwrap();
    let a0 = dmd.operator().clone();
    let p0 = dmd.precision().clone();
    let mut worst_step = 0.0f64;
    for _ in 0..1000 {
        let c = rng.random_range(1..=5);
        let x = gaussian(p + q, c, &mut rng);
        let y = gaussian(p, c, &mut rng);
        let w: Vec<f64> = (0..c).map(|_| rng.random_range(0.5..2.0)).collect();
        let (a_before, p_before) = (dmd.operator().clone(), dmd.precision().clone());
        dmd.update(&x, &y, &w).unwrap();
        dmd.revert(&x, &y, &w).unwrap();
        worst_step = worst_step
            .max(rel(dmd.operator(), &a_before))
            .max(rel(dmd.precision(), &p_before));
    }
    let drift = rel(dmd.operator(), &a0).max(rel(dmd.precision(), &p0));
    outcome(
        worst_step <= 1e-8 && drift <= 1e-8,
        format!("worst pair {worst_step:.2e}, drift after 1000 pairs {drift:.2e} (limit 1e-8)"),
    )
}

fn svd_tracking() -> Outcome {
    let (rows, rank, window, steps) = (40, 5, 100, 10_000);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let basis = gaussian(rows, rank, &mut rng);
    let x = &basis * gaussian(rank, window + steps, &mut rng);
    let mut s = OnlineSvd::initialize(&x.columns(0, window).into_owned(), rank).unwrap();
    let mut worst_angle = 0.0f64;
    let mut worst_orth = 0.0f64;
    for k in 0..steps {
        s.update(&x.columns(window + k, 1).into_owned()).unwrap();
        s.revert(1).unwrap();
        worst_orth = worst_orth.max(orthogonality_error_fro(s.u()));
        if k % 500 == 499 || k + 1 == steps {
            let (ub, _, _) = truncated_svd(&x.columns(k + 1, window).into_owned(), rank).unwrap();
            worst_angle = worst_angle.max(max_principal_angle(s.u(), &ub));
        }
    }
    outcome(
        worst_angle < 1e-4 && worst_orth < 1e-6,
        format!("max principal angle {worst_angle:.2e} rad, max ‖UᵀU−I‖_F {worst_orth:.2e} over {steps} steps"),
    )
}

fn steps_config() -> CpdConfig {
    CpdConfig::new(
        WindowLayout::new(100, 0, 100, 300).unwrap(),
        HankelConfig::new(80, 1).unwrap(),
        2,
        0,
    )
}

fn run(cfg: &CpdConfig, states: &DMatrix<f64>, controls: &DMatrix<f64>, batch: usize) -> Vec<CpdScore> {
    let mut engine = CpdEngine::new(cfg.clone(), states.nrows(), controls.nrows()).unwrap();
    let pairs = RawBatch::from_series(states, controls, 0).unwrap();
    let mut out = Vec::new();
    let mut k = 0;
    while k < pairs.len() {
        let j = batch.min(pairs.len() - k);
        out.extend(engine.step(&pairs.slice(k, j)).unwrap());
        k += j;
    }
    out
}

/// Step index of the largest ratio among scores in `[from, to)`.
fn argmax(scores: &[CpdScore], from: usize, to: usize) -> Option<usize> {
    scores
        .iter()
        .filter(|s| s.step >= from && s.step < to)
        .max_by(|a, b| a.ratio.partial_cmp(&b.ratio).unwrap())
        .map(|s| s.step)
}

fn steps_experiment() -> Outcome {
    let spec = StepsSpec::default();
    let data = gen_steps(&spec).unwrap();
    let cfg = steps_config();
    let start = Instant::now();
    let scores = run(&cfg, &data.states, &data.controls, 1);
    let elapsed = start.elapsed();
    let c = cfg.layout.test;
    let mut hits = 0;
    let mut delays = Vec::new();
    for &k0 in &data.labels[1..] {
        let peak = argmax(&scores, k0, k0 + spec.spacing).unwrap();
        let delay = peak as i64 - k0 as i64;
        if (delay - c as i64).abs() <= 2 {
            hits += 1;
        }
        delays.push(delay);
    }
    let total = data.labels.len() - 1;
    outcome(
        hits == total && elapsed < Duration::from_secs(60),
        format!("{hits}/{total} peaks within c±2, peak delays {delays:?}, runtime {elapsed:.2?}"),
    )
}

fn peak_delay_law() -> Outcome {
    let cfg = steps_config();
    let c = cfg.layout.test as i64;
    let mut hits = 0;
    let mut delays = Vec::new();
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let k0 = rng.random_range(1500..2500);
        let size = rng.random_range(1.0..3.0) * if rng.random::<bool>() { 1.0 } else { -1.0 };
        let level = rng.random_range(-2.0..2.0);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let n = k0 + 600;
        let series = DMatrix::from_fn(1, n, |_, k| {
            level + if k >= k0 { size } else { 0.0 } + noise.sample(&mut rng)
        });
        let scores = run(&cfg, &series, &DMatrix::zeros(0, n), 1);
        let peak = argmax(&scores, k0, n).unwrap();
        let delay = peak as i64 - k0 as i64;
        if (delay - c).abs() <= 2 {
            hits += 1;
        }
        delays.push(delay);
    }
    delays.sort_unstable();
    outcome(
        hits * 10 >= 50 * 9,
        format!(
            "{hits}/50 delays within c±2 (need 45), delay range {}..{}, median {}",
            delays[0], delays[49], delays[25]
        ),
    )
}

/// Levels with their degree-2 monomials: `h1, h2, h1², h2², h1·h2`.
fn quadratic_lift(states: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(5, states.ncols(), |i, k| {
        let (a, b) = (states[(0, k)], states[(1, k)]);
        [a, b, a * a, b * b, a * b][i]
    })
}

/// Divides every row by its standard deviation over the first `n` columns.
fn scale_rows(m: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let mut out = m.clone();
    for i in 0..m.nrows() {
        let row = m.row(i).columns(0, n).into_owned();
        let mean = row.mean();
        let sd = (row.map(|v| (v - mean).powi(2)).sum() / n as f64).sqrt();
        out.row_mut(i).scale_mut(1.0 / sd.max(f64::MIN_POSITIVE));
    }
    out
}

const TANK_LEARNING: usize = 2000;

fn tank_inputs(data: &odmd_cpd::Dataset) -> (DMatrix<f64>, DMatrix<f64>) {
    (
        scale_rows(&quadratic_lift(&data.states), TANK_LEARNING),
        scale_rows(&data.controls, TANK_LEARNING),
    )
}

fn two_tank_config(states: &DMatrix<f64>, controls: &DMatrix<f64>) -> CpdConfig {
    let hankel = HankelConfig::new(210, 30).unwrap();
    let control_hankel = HankelConfig::new(30, 1).unwrap();
    let head = |m: &DMatrix<f64>| m.columns(0, TANK_LEARNING).into_owned();
    // Ranks are thresholded on the raw rows, not the delay embedding.
    let p = suggest_rank(&head(states)).unwrap().rank.max(1);
    let q = suggest_rank(&head(controls)).unwrap().rank.max(1);
    let mut cfg = CpdConfig::new(WindowLayout::new(200, 0, 200, TANK_LEARNING).unwrap(), hankel, p, q);
    cfg.control_hankel = Some(control_hankel);
    cfg
}

fn two_tank_experiment() -> Outcome {
    let start = Instant::now();
    let calib = simulate_two_tanks(&TwoTankSpec {
        faults: FaultSchedule::none(),
        seed: 101,
        ..Default::default()
    })
    .unwrap();
    let (xs, us) = tank_inputs(&calib);
    let cfg = two_tank_config(&xs, &us);
    let t = run(&cfg, &xs, &us, 1).iter().map(|s| s.ratio).fold(0.0f64, f64::max);

    let data = simulate_two_tanks(&TwoTankSpec {
        seed: 7,
        ..Default::default()
    })
    .unwrap();
    let (xs, us) = tank_inputs(&data);
    let mut cfg = two_tank_config(&xs, &us);
    cfg.threshold = t;
    let scores = run(&cfg, &xs, &us, 1);
    let elapsed = start.elapsed();
    let reach = cfg.layout.base + cfg.layout.test;

    let quiet = scores.iter().filter(|s| s.step < 3500).all(|s| !s.alarm);
    let mut events = Vec::new();
    let mut all = true;
    for &k0 in &data.labels {
        let near: Vec<&CpdScore> = scores.iter().filter(|s| s.step >= k0 && s.step <= k0 + reach).collect();
        let peak = near.iter().map(|s| s.ratio).fold(0.0f64, f64::max);
        let first = near.iter().find(|s| s.alarm).map(|s| s.step - k0);
        all &= first.is_some();
        events.push(format!("{k0}: peak {peak:.2}, first alarm {first:?}"));
    }
    outcome(
        quiet && all && elapsed < Duration::from_secs(300),
        format!(
            "ranks p={} q={}, calibrated t={t:.3}, quiet before 3500: {quiet}, events within a+c={reach} [{}], runtime {elapsed:.2?}",
            cfg.state_rank,
            cfg.control_rank,
            events.join("; ")
        ),
    )
}

fn nab_anchors() -> Outcome {
    let labels = vec![1000, 3000, 5000, 7000, 9000];
    let span = 10_000;
    let mut ok = true;
    let mut parts = Vec::new();
    for profile in NabProfile::all() {
        let null = nab_score(&[], &labels, span, None, &profile).unwrap();
        let perfect = nab_score(&labels, &labels, span, None, &profile).unwrap();
        ok &= null == 0.0 && (perfect - 100.0).abs() < 1e-9;
        parts.push(format!("{} null {null:.2} perfect {perfect:.2}", profile.name));
    }
    let skab = std::env::var_os("ODMD_CPD_SKAB_DIR").is_some();
    outcome(
        ok,
        format!(
            "{}; SKAB comparison {}",
            parts.join(", "),
            if skab { "not wired (optional)" } else { "skipped, dataset not supplied (optional)" }
        ),
    )
}

/// Median wall time of steady-state single-snapshot passes.
fn step_time(rank: usize, rows: usize) -> Duration {
    let layout = WindowLayout::new(100, 0, 100, 300).unwrap();
    let cfg = CpdConfig::new(layout, HankelConfig::new(rows - 1, 1).unwrap(), rank, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 2000;
    let series = DMatrix::from_fn(1, n, |_, k| {
        (k as f64 * 0.05).sin() + (k as f64 * 0.011).cos() + 0.1 * rng.random::<f64>()
    });
    let pairs = RawBatch::from_series(&series, &DMatrix::zeros(0, n), 0).unwrap();
    let mut engine = CpdEngine::new(cfg, 1, 0).unwrap();
    let warm = rows + 600;
    for k in 0..warm {
        engine.step(&pairs.slice(k, 1)).unwrap();
    }
    let mut times = Vec::new();
    for k in warm..pairs.len() {
        let t = Instant::now();
        engine.step(&pairs.slice(k, 1)).unwrap();
        times.push(t.elapsed());
    }
    times.sort_unstable();
    times[times.len() / 2]
}

fn performance_budget() -> Outcome {
    let rows = 240;
    let t20 = step_time(20, rows);
    let t40 = step_time(40, rows);
    let ratio = t40.as_secs_f64() / t20.as_secs_f64();
    outcome(
        ratio <= 4.5 && t40 < Duration::from_millis(10),
        format!("median step at m̄={rows}: r=20 {t20:.2?}, r=40 {t40:.2?}, ratio {ratio:.2} (limit 4.5)"),
    )
}

fn minibatch_equivalence() -> Outcome {
    let start = Instant::now();
    let data = gen_steps(&StepsSpec {
        seed: 3,
        ..Default::default()
    })
    .unwrap();
    let cfg = steps_config();
    let one = run(&cfg, &data.states, &data.controls, 1);
    let five = run(&cfg, &data.states, &data.controls, 5);
    let elapsed = start.elapsed();
    let same = one == five;
    outcome(
        same && !one.is_empty() && elapsed < Duration::from_secs(60),
        format!("{} scores, identical: {same}, runtime {elapsed:.2?}", one.len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("RLS/batch equivalence", rls_batch_equivalence),
        ("update/revert inverse", update_revert_inverse),
        ("online SVD tracking", svd_tracking),
        ("steps experiment", steps_experiment),
        ("peak-delay law", peak_delay_law),
        ("two-tank experiment", two_tank_experiment),
        ("NAB scorer anchors", nab_anchors),
        ("performance budget", performance_budget),
        ("mini-batch equivalence", minibatch_equivalence),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if only.is_some_and(|o| o != i + 1) {
            continue;
        }
        let start = Instant::now();
        let o = check();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {}: {verdict} {name}: {} [{:.2?}]",
            i + 1,
            o.detail,
            start.elapsed()
        );
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        if std::env::var_os("ACCEPTANCE_STRICT").is_some() {
            std::process::exit(1);
        }
    } else {
        println!("all criteria passed");
    }
}
