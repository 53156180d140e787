//! Synthetic benchmark streams with known change points.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{CpdError, Result};

/// A generated stream: states `m×n`, controls `l×n` (possibly `0×n`) and the
/// indices where the generating process changes.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub states: DMatrix<f64>,
    pub controls: DMatrix<f64>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.states.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Piecewise-constant signal with steps of growing size.
#[derive(Debug, Clone)]
pub struct StepsSpec {
    pub n: usize,
    pub spacing: usize,
    pub steps: usize,
    /// Step `i` (1-based) has height `step_scale·i`.
    pub step_scale: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for StepsSpec {
    fn default() -> Self {
        Self {
            n: 10_000,
            spacing: 1000,
            steps: 9,
            step_scale: 0.5,
            sigma: 0.1,
            seed: 0,
        }
    }
}

impl StepsSpec {
    pub fn labels(&self) -> Vec<usize> {
        (1..=self.steps)
            .map(|i| i * self.spacing)
            .filter(|&k| k < self.n)
            .collect()
    }

    /// Noise-free level at sample `k`.
    pub fn level(&self, k: usize) -> f64 {
        let done = (k / self.spacing.max(1)).min(self.steps);
        self.step_scale * (done * (done + 1)) as f64 / 2.0
    }
}

pub fn gen_steps(spec: &StepsSpec) -> Result<Dataset> {
    if !(spec.sigma >= 0.0) || spec.spacing == 0 {
        return Err(CpdError::config("steps need σ ≥ 0 and a positive spacing"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.sigma).map_err(|e| CpdError::config(e.to_string()))?;
    let states = DMatrix::from_fn(1, spec.n, |_, k| spec.level(k) + noise.sample(&mut rng));
    Ok(Dataset {
        states,
        controls: DMatrix::zeros(0, spec.n),
        labels: spec.labels(),
    })
}

/// Fault injections for the two-tank simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultSchedule {
    /// Additive sensor bias `(start, end, size)` on both observed levels.
    pub bias: Option<(usize, usize, f64)>,
    /// Actuator gain `(start, end, factor)` applied to the delayed inflow.
    pub gain: Option<(usize, usize, f64)>,
    /// Sensor drift `(start, slope per sample)` on both observed levels.
    pub trend: Option<(usize, f64)>,
}

impl Default for FaultSchedule {
    fn default() -> Self {
        Self {
            bias: Some((4000, 5000, 1.0)),
            gain: Some((7600, 8600, 2.0)),
            trend: Some((9800, 1e-3)),
        }
    }
}

impl FaultSchedule {
    pub fn none() -> Self {
        Self {
            bias: None,
            gain: None,
            trend: None,
        }
    }

    pub fn onsets(&self) -> Vec<usize> {
        let mut v: Vec<usize> = [
            self.bias.map(|b| b.0),
            self.gain.map(|g| g.0),
            self.trend.map(|t| t.0),
        ]
        .into_iter()
        .flatten()
        .collect();
        v.sort_unstable();
        v
    }

    /// Ends of the bounded faults.
    pub fn ends(&self) -> Vec<usize> {
        let mut v: Vec<usize> = [self.bias.map(|b| b.1), self.gain.map(|g| g.1)]
            .into_iter()
            .flatten()
            .collect();
        v.sort_unstable();
        v
    }
}

/// Two cascaded tanks with a delayed inflow valve:
///
/// `dh₁/dt = q(t−τ) − (k₁/F₁)√h₁`, `dh₂/dt = (k₁/F₂)√h₁ − (k₂/F₂)√h₂`.
#[derive(Debug, Clone)]
pub struct TwoTankSpec {
    pub k1: f64,
    pub k2: f64,
    pub f1: f64,
    pub f2: f64,
    /// Sampling period, seconds.
    pub dt: f64,
    pub n: usize,
    /// Samples between valve changes.
    pub control_period: usize,
    /// Valve openings are drawn from `(0, control_max]`.
    pub control_max: f64,
    /// Inclusive range of the input delay, samples.
    pub delay_range: (usize, usize),
    /// Variance of the Gaussian observation noise.
    pub noise_var: f64,
    pub initial_levels: [f64; 2],
    pub faults: FaultSchedule,
    pub seed: u64,
}

impl Default for TwoTankSpec {
    fn default() -> Self {
        Self {
            k1: 0.02,
            k2: 0.02,
            f1: 1.0,
            f2: 1.0,
            dt: 10.0,
            n: 12_000,
            control_period: 200,
            control_max: 0.03,
            delay_range: (20, 30),
            noise_var: 0.35,
            initial_levels: [0.0, 0.0],
            faults: FaultSchedule::default(),
            seed: 0,
        }
    }
}

impl TwoTankSpec {
    /// Right-hand side with inflow `q` held over the step.
    pub fn derivative(&self, h: [f64; 2], q: f64) -> [f64; 2] {
        let s1 = h[0].max(0.0).sqrt();
        let s2 = h[1].max(0.0).sqrt();
        [
            q - self.k1 / self.f1 * s1,
            self.k1 / self.f2 * s1 - self.k2 / self.f2 * s2,
        ]
    }

    /// One RK4 step of length `dt` with constant inflow, levels clamped at 0.
    pub fn rk4(&self, h: [f64; 2], q: f64, dt: f64) -> [f64; 2] {
        let add = |a: [f64; 2], b: [f64; 2], s: f64| [a[0] + s * b[0], a[1] + s * b[1]];
        let k1 = self.derivative(h, q);
        let k2 = self.derivative(add(h, k1, dt / 2.0), q);
        let k3 = self.derivative(add(h, k2, dt / 2.0), q);
        let k4 = self.derivative(add(h, k3, dt), q);
        [
            (h[0] + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])).max(0.0),
            (h[1] + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])).max(0.0),
        ]
    }

    /// Equilibrium levels for a constant inflow.
    pub fn steady_state(&self, q: f64) -> [f64; 2] {
        let s1 = q * self.f1 / self.k1;
        let s2 = self.k1 / self.k2 * s1;
        [s1 * s1, s2 * s2]
    }

    fn validate(&self) -> Result<()> {
        let positive = [self.k1, self.k2, self.f1, self.f2, self.dt];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(CpdError::config("tank constants and sampling period must be positive"));
        }
        if self.delay_range.0 > self.delay_range.1 || self.control_period == 0 {
            return Err(CpdError::config("invalid delay range or control period"));
        }
        if !(self.noise_var >= 0.0) || !(self.control_max >= 0.0) {
            return Err(CpdError::config("noise variance and valve range must be nonnegative"));
        }
        Ok(())
    }
}

/// Noise-free trajectory of the true levels (`2×n`) for a given inflow
/// sequence and delay, without faults.
pub fn integrate_two_tanks(spec: &TwoTankSpec, inflow: &[f64], delay: usize) -> DMatrix<f64> {
    let n = inflow.len();
    let mut out = DMatrix::zeros(2, n);
    let mut h = spec.initial_levels;
    let mut fifo: VecDeque<f64> = std::iter::repeat_n(0.0, delay).collect();
    for k in 0..n {
        out[(0, k)] = h[0];
        out[(1, k)] = h[1];
        fifo.push_back(inflow[k]);
        let q = fifo.pop_front().unwrap_or(0.0);
        h = spec.rk4(h, q, spec.dt);
    }
    out
}

/// Simulates the two-tank process with injected faults.
///
/// Returns the observed levels (`2×n`), the commanded valve openings
/// (`1×n`) and the fault onsets as labels.
pub fn simulate_two_tanks(spec: &TwoTankSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let delay = rng.random_range(spec.delay_range.0..=spec.delay_range.1);
    let noise = Normal::new(0.0, spec.noise_var.sqrt()).map_err(|e| CpdError::config(e.to_string()))?;

    let mut controls = DMatrix::zeros(1, spec.n);
    let mut q = 0.0;
    for k in 0..spec.n {
        if k % spec.control_period == 0 {
            // (0, max]: 1 − U[0, 1) lies in (0, 1].
            q = spec.control_max * (1.0 - rng.random::<f64>());
        }
        controls[(0, k)] = q;
    }

    let f = &spec.faults;
    let mut states = DMatrix::zeros(2, spec.n);
    let mut h = spec.initial_levels;
    let mut fifo: VecDeque<f64> = std::iter::repeat_n(0.0, delay).collect();
    for k in 0..spec.n {
        let mut offset = 0.0;
        if let Some((s, e, b)) = f.bias {
            if k >= s && k < e {
                offset += b;
            }
        }
        if let Some((s, slope)) = f.trend {
            if k >= s {
                offset += slope * (k - s) as f64;
            }
        }
        for i in 0..2 {
            states[(i, k)] = h[i] + offset + noise.sample(&mut rng);
        }

        fifo.push_back(controls[(0, k)]);
        let mut q_in = fifo.pop_front().unwrap_or(0.0);
        if let Some((s, e, g)) = f.gain {
            if k >= s && k < e {
                q_in *= g;
            }
        }
        h = spec.rk4(h, q_in, spec.dt);
    }

    Ok(Dataset {
        states,
        controls,
        labels: f.onsets().into_iter().filter(|&k| k < spec.n).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steps_labels_and_levels() {
        let spec = StepsSpec {
            sigma: 0.0,
            ..Default::default()
        };
        let d = gen_steps(&spec).unwrap();
        assert_eq!(d.labels, (1..=9).map(|i| 1000 * i).collect::<Vec<_>>());
        let mut jumps = Vec::new();
        for k in 1..d.len() {
            let diff = d.states[(0, k)] - d.states[(0, k - 1)];
            if diff != 0.0 {
                jumps.push((k, diff));
            }
        }
        assert_eq!(jumps.len(), 9);
        assert!(jumps.windows(2).all(|w| w[1].1 > w[0].1));
        assert_eq!(jumps[0].0, 1000);
    }

    #[test]
    fn steps_are_seeded() {
        let spec = StepsSpec::default();
        let a = gen_steps(&spec).unwrap();
        let b = gen_steps(&spec).unwrap();
        assert_eq!(a.states, b.states);
        let c = gen_steps(&StepsSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a.states, c.states);
    }

    #[test]
    fn empty_tanks_stay_empty() {
        let spec = TwoTankSpec::default();
        let traj = integrate_two_tanks(&spec, &vec![0.0; 500], 25);
        assert!(traj.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn tanks_reach_steady_state() {
        let spec = TwoTankSpec::default();
        let q = 0.015;
        let traj = integrate_two_tanks(&spec, &vec![q; 3000], 20);
        let target = spec.steady_state(q);
        assert!((traj[(0, 2999)] - target[0]).abs() < 1e-6);
        assert!((traj[(1, 2999)] - target[1]).abs() < 1e-6);
    }

    #[test]
    fn bias_fault_shifts_observations() {
        let base = TwoTankSpec {
            noise_var: 0.0,
            faults: FaultSchedule::none(),
            ..Default::default()
        };
        let biased = TwoTankSpec {
            faults: FaultSchedule {
                bias: Some((4000, 5000, 1.0)),
                gain: None,
                trend: None,
            },
            ..base.clone()
        };
        let a = simulate_two_tanks(&base).unwrap();
        let b = simulate_two_tanks(&biased).unwrap();
        for k in [3999, 4000, 4500, 4999, 5000] {
            let expect = if (4000..5000).contains(&k) { 1.0 } else { 0.0 };
            for i in 0..2 {
                assert!((b.states[(i, k)] - a.states[(i, k)] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn control_epochs_and_labels() {
        let d = simulate_two_tanks(&TwoTankSpec::default()).unwrap();
        assert_eq!(d.labels, vec![4000, 7600, 9800]);
        for k in 0..d.len() {
            let q = d.controls[(0, k)];
            assert!(q > 0.0 && q <= 0.03);
            if k % 200 != 0 {
                assert_eq!(q, d.controls[(0, k - 1)]);
            }
        }
    }
}
