//! NAB-style scoring of alarm sequences with windows that open at each
//! labeled change point and extend to the right.

use crate::engine::CpdScore;
use crate::error::{CpdError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NabProfile {
    pub name: &'static str,
    pub tp: f64,
    pub fp: f64,
    pub fn_: f64,
}

impl NabProfile {
    pub const STANDARD: NabProfile = NabProfile {
        name: "standard",
        tp: 1.0,
        fp: -0.11,
        fn_: -1.0,
    };
    pub const LOW_FP: NabProfile = NabProfile {
        name: "low_fp",
        tp: 1.0,
        fp: -0.22,
        fn_: -1.0,
    };
    pub const LOW_FN: NabProfile = NabProfile {
        name: "low_fn",
        tp: 1.0,
        fp: -0.11,
        fn_: -2.0,
    };

    pub fn all() -> [NabProfile; 3] {
        [Self::STANDARD, Self::LOW_FP, Self::LOW_FN]
    }

    pub fn by_name(name: &str) -> Option<NabProfile> {
        match name.to_ascii_lowercase().replace('-', "_").as_str() {
            "standard" => Some(Self::STANDARD),
            "low_fp" | "lowfp" => Some(Self::LOW_FP),
            "low_fn" | "lowfn" => Some(Self::LOW_FN),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tp > 0.0) || self.fp > 0.0 || self.fn_ > 0.0 {
            return Err(CpdError::config(
                "profile needs a positive TP weight and nonpositive FP/FN weights",
            ));
        }
        Ok(())
    }
}

/// `2σ(−5x) − 1`, clipped to −1 far right of a window.
pub fn scaled_sigmoid(x: f64) -> f64 {
    if x > 3.0 {
        -1.0
    } else {
        2.0 / (1.0 + (5.0 * x).exp()) - 1.0
    }
}

/// Default window length: span over ten times the label count.
pub fn default_window(span: usize, labels: usize) -> usize {
    (span / (10 * labels.max(1))).max(1)
}

/// Windows `[label, label + len)` clipped to `span` and merged where they
/// overlap.
pub fn windows(labels: &[usize], span: usize, len: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for &l in labels {
        let end = (l + len).min(span.max(l + 1));
        match out.last_mut() {
            Some(last) if l < last.1 => last.1 = last.1.max(end),
            _ => out.push((l, end)),
        }
    }
    out
}

/// Unnormalized score of sorted alarm indices against windows.
pub fn raw_score(alarms: &[usize], windows: &[(usize, usize)], profile: &NabProfile) -> f64 {
    let mut hit = vec![false; windows.len()];
    let mut total = 0.0;
    for &i in alarms {
        let inside = windows.iter().position(|&(s, e)| i >= s && i < e);
        match inside {
            Some(w) => {
                if !hit[w] {
                    hit[w] = true;
                    let (s, e) = windows[w];
                    let width = (e - s) as f64;
                    let right = (e - 1) as f64;
                    let pos = -(right - i as f64 + 1.0) / width;
                    total += profile.tp * scaled_sigmoid(pos) / scaled_sigmoid(-1.0);
                }
            }
            None => {
                let prev = windows.iter().rev().find(|&&(_, e)| e <= i);
                let unweighted = match prev {
                    None => -1.0,
                    Some(&(s, e)) => {
                        let right = (e - 1) as f64;
                        let width = ((e - s) as f64 - 1.0).max(1.0);
                        scaled_sigmoid((right - i as f64).abs() / width)
                    }
                };
                total += unweighted.abs() * profile.fp;
            }
        }
    }
    let missed = hit.iter().filter(|h| !**h).count();
    total + missed as f64 * profile.fn_
}

/// Normalized score: 0 for no alarms, 100 for one alarm at every label.
///
/// `window` defaults to [`default_window`].
pub fn nab_score(
    alarms: &[usize],
    labels: &[usize],
    span: usize,
    window: Option<usize>,
    profile: &NabProfile,
) -> Result<f64> {
    profile.validate()?;
    if labels.is_empty() {
        return Err(CpdError::config("scoring needs at least one labeled change point"));
    }
    if labels.windows(2).any(|w| w[1] < w[0]) {
        return Err(CpdError::config("labels must be sorted"));
    }
    let len = window.unwrap_or_else(|| default_window(span, labels.len()));
    if len == 0 {
        return Err(CpdError::config("scoring window must be positive"));
    }
    let wins = windows(labels, span, len);
    let mut sorted = alarms.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let raw = raw_score(&sorted, &wins, profile);
    let null = wins.len() as f64 * profile.fn_;
    let perfect = wins.len() as f64 * profile.tp;
    Ok(100.0 * (raw - null) / (perfect - null))
}

/// Alarm indices of a score stream at threshold `t` (ratio statistic).
pub fn alarms_at(scores: &[CpdScore], t: f64) -> Vec<usize> {
    scores.iter().filter(|s| s.ratio > t).map(|s| s.step).collect()
}

/// Default threshold grid: zero plus up to 64 quantiles of the positive
/// ratio values.
pub fn threshold_grid(scores: &[CpdScore]) -> Vec<f64> {
    let mut vals: Vec<f64> = scores
        .iter()
        .map(|s| s.ratio)
        .filter(|v| *v > 0.0 && v.is_finite())
        .collect();
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut grid = vec![0.0];
    if !vals.is_empty() {
        let steps = 64.min(vals.len());
        for i in 0..steps {
            let idx = i * (vals.len() - 1) / steps.max(1);
            grid.push(vals[idx]);
        }
        grid.push(*vals.last().unwrap());
    }
    grid.dedup();
    grid
}

/// Evaluates the profile over a threshold grid; returns the best threshold
/// and the full `(t, score)` curve. Ties keep the smallest threshold.
pub fn sweep_threshold(
    scores: &[CpdScore],
    labels: &[usize],
    span: usize,
    window: Option<usize>,
    profile: &NabProfile,
    grid: Option<&[f64]>,
) -> Result<(f64, Vec<(f64, f64)>)> {
    let default_grid;
    let grid = match grid {
        Some(g) => g,
        None => {
            default_grid = threshold_grid(scores);
            &default_grid
        }
    };
    let mut curve = Vec::with_capacity(grid.len());
    let mut best = (f64::NAN, f64::NEG_INFINITY);
    for &t in grid {
        let s = nab_score(&alarms_at(scores, t), labels, span, window, profile)?;
        curve.push((t, s));
        if s > best.1 {
            best = (t, s);
        }
    }
    Ok((best.0, curve))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_anchors() {
        assert!((scaled_sigmoid(0.0)).abs() < 1e-15);
        assert_eq!(scaled_sigmoid(3.5), -1.0);
        assert!(scaled_sigmoid(-1.0) > 0.98);
    }

    #[test]
    fn merged_windows() {
        assert_eq!(windows(&[10, 15, 40], 100, 10), vec![(10, 25), (40, 50)]);
        assert_eq!(windows(&[95], 100, 10), vec![(95, 100)]);
    }

    #[test]
    fn null_and_perfect() {
        let labels = [100, 300, 700];
        for p in NabProfile::all() {
            assert_eq!(nab_score(&[], &labels, 1000, None, &p).unwrap(), 0.0);
            let s = nab_score(&labels, &labels, 1000, None, &p).unwrap();
            assert!((s - 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn early_alarm_is_false_positive() {
        let p = NabProfile::STANDARD;
        let s = nab_score(&[99], &[100], 1000, Some(50), &p).unwrap();
        assert!(s < 0.0);
    }

    #[test]
    fn later_alarm_earns_less() {
        let p = NabProfile::STANDARD;
        let a = nab_score(&[100], &[100], 1000, Some(50), &p).unwrap();
        let b = nab_score(&[120], &[100], 1000, Some(50), &p).unwrap();
        let c = nab_score(&[149], &[100], 1000, Some(50), &p).unwrap();
        assert!(a > b && b > c && c > 0.0);
    }

    #[test]
    fn second_alarm_in_window_ignored() {
        let p = NabProfile::STANDARD;
        let a = nab_score(&[100], &[100], 1000, Some(50), &p).unwrap();
        let b = nab_score(&[100, 110], &[100], 1000, Some(50), &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_labels_rejected() {
        assert!(nab_score(&[1], &[], 10, None, &NabProfile::STANDARD).is_err());
    }
}
