//! Rank suggestion by optimal hard thresholding of singular values with
//! unknown noise level.

use nalgebra::DMatrix;

use crate::error::{CpdError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RankSuggestion {
    pub rank: usize,
    /// Singular value cutoff.
    pub threshold: f64,
    /// Fraction of the squared singular mass kept by the first `rank` values.
    pub kept_energy: f64,
    /// Aspect ratio `min(m, n) / max(m, n)`.
    pub beta: f64,
    /// The matrix had more rows than columns.
    pub wide_rows: bool,
    pub singular_values: Vec<f64>,
}

/// Polynomial approximation of the threshold coefficient `ω(β)`.
pub fn omega(beta: f64) -> f64 {
    0.56 * beta.powi(3) - 0.95 * beta.powi(2) + 1.82 * beta + 1.43
}

/// Suggests a rank for the snapshot matrix `x` (`rows×cols`).
pub fn suggest_rank(x: &DMatrix<f64>) -> Result<RankSuggestion> {
    let (m, n) = x.shape();
    if m == 0 || n == 0 {
        return Err(CpdError::Data("rank suggestion needs a nonempty matrix".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(CpdError::Data("matrix has non-finite entries".into()));
    }
    let wide_rows = m > n;
    let beta = m.min(n) as f64 / m.max(n) as f64;
    let sv = crate::linalg::singular_values(x);
    if sv.is_empty() {
        return Err(CpdError::numerical("singular values did not converge", f64::INFINITY));
    }
    let mut sorted = sv.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = sorted.len();
    let median = if k % 2 == 1 {
        sorted[k / 2]
    } else {
        0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
    };
    let floor = f64::EPSILON * sv[0] * m.max(n) as f64;
    let threshold = (omega(beta) * median).max(floor);
    let rank = sv.iter().filter(|s| **s > threshold).count();
    let total: f64 = sv.iter().map(|s| s * s).sum();
    let kept: f64 = sv[..rank].iter().map(|s| s * s).sum();
    Ok(RankSuggestion {
        rank,
        threshold,
        kept_energy: if total > 0.0 { kept / total } else { 0.0 },
        beta,
        wide_rows,
        singular_values: sv,
    })
}
