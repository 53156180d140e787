//! Reduced-order DMD with control tracked by recursive least squares.
//!
//! The operator `Ā = [Ã B̃]` (`p×(p+q)`) and the precision matrix
//! `P ≈ (X̄ C X̄ᵀ)⁻¹` are updated with the Woodbury identity. Forgetting is an
//! update with negated weights. When the projection basis rotates, the state
//! is carried over with [`OnlineDmd::align_to_subspace`].

use nalgebra::{Complex, DMatrix};

use crate::error::{CpdError, Result};
use crate::linalg::{condition_number, symmetrize, to_faer, truncated_svd};

pub type C64 = Complex<f64>;

/// Condition number above which the eigenvector matrix is treated as defective.
const DEFECTIVE_COND: f64 = 1e12;

/// Orthonormality defect of the alignment rotation that raises a warning.
const JUMP_WARNING: f64 = 0.1;

/// Eigen-decomposition of the reduced state operator.
#[derive(Debug, Clone)]
pub struct ModeSet {
    /// Eigenvalues sorted by modulus, largest first.
    pub eigenvalues: Vec<C64>,
    /// Reduced eigenvectors (`p×p`), one per column.
    pub reduced: DMatrix<C64>,
    /// Full-space modes (`m̄×p`).
    pub modes: DMatrix<C64>,
    /// Set when the eigenvector matrix is numerically singular; `reduced`
    /// then holds Schur vectors instead.
    pub defective: bool,
}

/// Diagnostics from one alignment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignReport {
    /// `‖KKᵀ − I‖_F` of the basis rotation.
    pub jump: f64,
    /// Frobenius norm of the discarded state/control coupling blocks.
    pub mixing: f64,
    /// True when the rotation was too ill-conditioned for a direct solve.
    pub fallback: bool,
}

impl AlignReport {
    pub fn is_jump(&self) -> bool {
        self.jump > JUMP_WARNING
    }
}

/// Windowed online DMD state.
#[derive(Debug, Clone)]
pub struct OnlineDmd {
    op: DMatrix<f64>,
    precision: DMatrix<f64>,
    p: usize,
    q: usize,
    rho: f64,
    last_align: Option<AlignReport>,
}

impl OnlineDmd {
    /// `Ã = I_p`, `B̃ = 0`, `P = ρI`.
    pub fn new(p: usize, q: usize, rho: f64) -> Result<Self> {
        if p == 0 {
            return Err(CpdError::config("state rank p must be at least 1"));
        }
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(CpdError::config(format!("prior scale must be positive, got {rho}")));
        }
        let r = p + q;
        let mut op = DMatrix::zeros(p, r);
        for i in 0..p {
            op[(i, i)] = 1.0;
        }
        Ok(Self {
            op,
            precision: DMatrix::identity(r, r) * rho,
            p,
            q,
            rho,
            last_align: None,
        })
    }

    pub fn state_rank(&self) -> usize {
        self.p
    }

    pub fn control_rank(&self) -> usize {
        self.q
    }

    pub fn rank(&self) -> usize {
        self.p + self.q
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// `Ā = [Ã B̃]`.
    pub fn operator(&self) -> &DMatrix<f64> {
        &self.op
    }

    /// `Ã`, `p×p`.
    pub fn state_operator(&self) -> DMatrix<f64> {
        self.op.columns(0, self.p).into_owned()
    }

    /// `B̃`, `p×q`.
    pub fn control_operator(&self) -> DMatrix<f64> {
        self.op.columns(self.p, self.q).into_owned()
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn last_alignment(&self) -> Option<AlignReport> {
        self.last_align
    }

    /// Incorporates `c` pairs, `x` (`(p+q)×c`) advancing to `y` (`p×c`),
    /// with per-pair weights.
    pub fn update(&mut self, x: &DMatrix<f64>, y: &DMatrix<f64>, weights: &[f64]) -> Result<()> {
        let (op, precision) = self.woodbury(x, y, weights)?;
        self.op = op;
        self.precision = precision;
        Ok(())
    }

    /// Removes pairs previously added with the same weights.
    pub fn revert(&mut self, x: &DMatrix<f64>, y: &DMatrix<f64>, weights: &[f64]) -> Result<()> {
        let neg: Vec<f64> = weights.iter().map(|w| -w).collect();
        let (op, precision) = self.woodbury(x, y, &neg)?;
        if precision.clone().cholesky().is_none() {
            return Err(CpdError::state(
                "precision matrix lost positive definiteness; window too small for the rank",
            ));
        }
        self.op = op;
        self.precision = precision;
        Ok(())
    }

    fn woodbury(
        &self,
        x: &DMatrix<f64>,
        y: &DMatrix<f64>,
        weights: &[f64],
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let r = self.rank();
        let c = x.ncols();
        if x.nrows() != r || y.nrows() != self.p || y.ncols() != c || weights.len() != c {
            return Err(CpdError::config(format!(
                "update shapes {:?}, {:?} with {} weights do not match ranks p={}, q={}",
                x.shape(),
                y.shape(),
                weights.len(),
                self.p,
                self.q
            )));
        }
        if weights.iter().any(|w| *w == 0.0 || !w.is_finite()) {
            return Err(CpdError::config("pair weights must be nonzero and finite"));
        }
        if c == 0 {
            return Ok((self.op.clone(), self.precision.clone()));
        }

        let px = &self.precision * x;
        let mut s = x.tr_mul(&px);
        for (i, w) in weights.iter().enumerate() {
            s[(i, i)] += 1.0 / w;
        }
        let pxt = px.transpose();
        // Γ XᵀP, by solving (C⁻¹ + XᵀPX) Z = XᵀP.
        let z = match s.clone().lu().solve(&pxt) {
            Some(z) if z.iter().all(|v| v.is_finite()) => z,
            _ => {
                return Err(CpdError::numerical(
                    "singular innovation matrix in precision update",
                    condition_number(&s),
                ))
            }
        };
        let innovation = y - &self.op * x;
        let op = &self.op + innovation * &z;
        let mut precision = &self.precision - px * z;
        symmetrize(&mut precision);
        Ok((op, precision))
    }

    /// Carries the state from basis `u_prev` to `u_new` (both `m̄×r`).
    ///
    /// With `K = U_newᵀU_prev`, the state block becomes `K_pp Ã K_ppᵀ`, the
    /// control block `K_pp B̃ K_qqᵀ` and the precision `K⁻ᵀ P K⁻¹`. The
    /// coupling blocks `K_pq`, `K_qp` are dropped.
    pub fn align_to_subspace(
        &mut self,
        u_prev: &DMatrix<f64>,
        u_new: &DMatrix<f64>,
    ) -> Result<AlignReport> {
        let r = self.rank();
        if u_prev.ncols() != r || u_new.ncols() != r || u_prev.nrows() != u_new.nrows() {
            return Err(CpdError::config(format!(
                "alignment bases {:?} and {:?} do not match rank {r}",
                u_prev.shape(),
                u_new.shape()
            )));
        }
        let k = u_new.tr_mul(u_prev);
        self.align_with(&k)
    }

    /// Alignment with an explicit `r×r` rotation `K`.
    pub fn align_with(&mut self, k: &DMatrix<f64>) -> Result<AlignReport> {
        let (p, q, r) = (self.p, self.q, self.rank());
        if k.shape() != (r, r) {
            return Err(CpdError::config(format!("rotation must be {r}×{r}, got {:?}", k.shape())));
        }
        let jump = (k * k.transpose() - DMatrix::identity(r, r)).norm();
        let mixing = if q > 0 {
            (k.view((0, p), (p, q)).norm_squared() + k.view((p, 0), (q, p)).norm_squared()).sqrt()
        } else {
            0.0
        };

        let kpp = k.view((0, 0), (p, p));
        let a = kpp * self.op.columns(0, p) * kpp.transpose();
        self.op.columns_mut(0, p).copy_from(&a);
        if q > 0 {
            let kqq = k.view((p, p), (q, q));
            let b = kpp * self.op.columns(p, q) * kqq.transpose();
            self.op.columns_mut(p, q).copy_from(&b);
        }

        let mut fallback = false;
        let direct = if condition_number(k) < 1e8 {
            congruence_inverse(k, &self.precision)
        } else {
            None
        };
        let mut precision = match direct {
            Some(m) => m,
            None => {
                fallback = true;
                self.fallback_precision(k)?
            }
        };
        symmetrize(&mut precision);
        self.precision = precision;

        let report = AlignReport {
            jump,
            mixing,
            fallback,
        };
        if report.is_jump() {
            log::info!("subspace jump during alignment: ‖KKᵀ − I‖ = {jump:.3e}");
        }
        self.last_align = Some(report);
        Ok(report)
    }

    /// `(K P⁻¹ Kᵀ + ρ⁻¹(I − KKᵀ))⁻¹`, used when `K` cannot be inverted.
    fn fallback_precision(&self, k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let r = self.rank();
        let pinv = match self.precision.clone().cholesky() {
            Some(ch) => ch.inverse(),
            None => {
                return Err(CpdError::numerical(
                    "precision matrix is not positive definite",
                    condition_number(&self.precision),
                ))
            }
        };
        let kkt = k * k.transpose();
        let mut m = k * pinv * k.transpose() + (DMatrix::identity(r, r) - kkt) / self.rho;
        symmetrize(&mut m);
        match m.clone().cholesky() {
            Some(ch) => Ok(ch.inverse()),
            None => m.clone().try_inverse().ok_or_else(|| {
                CpdError::numerical("aligned Gram matrix is singular", condition_number(&m))
            }),
        }
    }

    /// Eigenvalues and modes of `Ã`, with `Φ = U_state W`.
    ///
    /// `u_state` must have `p` columns.
    pub fn modes(&self, u_state: &DMatrix<f64>) -> Result<ModeSet> {
        if u_state.ncols() != self.p {
            return Err(CpdError::config(format!(
                "mode projection has {} columns, state rank is {}",
                u_state.ncols(),
                self.p
            )));
        }
        let (eigenvalues, reduced, defective) = eigen_decompose(&self.state_operator())?;
        let modes = u_state.map(|v| C64::new(v, 0.0)) * &reduced;
        Ok(ModeSet {
            eigenvalues,
            reduced,
            modes,
            defective,
        })
    }
}

/// `K⁻ᵀ P K⁻¹` for symmetric `P`, through two solves with `Kᵀ`.
fn congruence_inverse(k: &DMatrix<f64>, p: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let lu = k.transpose().lu();
    let w = lu.solve(p)?;
    let m = lu.solve(&w.transpose())?;
    m.iter().all(|v| v.is_finite()).then_some(m)
}

/// Eigenvalues (modulus descending) and unit-norm eigenvectors of a real
/// square matrix.
pub fn eigen_decompose(a: &DMatrix<f64>) -> Result<(Vec<C64>, DMatrix<C64>, bool)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(CpdError::config("eigen-decomposition needs a square matrix"));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(CpdError::numerical("operator has non-finite entries", f64::INFINITY));
    }
    if n == 0 {
        return Ok((Vec::new(), DMatrix::zeros(0, 0), false));
    }
    let evd = to_faer(a).eigen().map_err(|e| {
        CpdError::numerical(format!("eigen-decomposition did not converge: {e:?}"), f64::INFINITY)
    })?;
    let (fs, fu) = (evd.S().column_vector(), evd.U());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        let (x, y) = (fs[i], fs[j]);
        y.norm()
            .partial_cmp(&x.norm())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(y.re.partial_cmp(&x.re).unwrap_or(std::cmp::Ordering::Equal))
            .then(y.im.partial_cmp(&x.im).unwrap_or(std::cmp::Ordering::Equal))
    });
    let eig: Vec<C64> = order.iter().map(|&i| fs[i]).collect();
    let mut w = DMatrix::<C64>::from_fn(n, n, |i, j| fu[(i, order[j])]);
    for mut col in w.column_iter_mut() {
        normalize_phase(&mut col);
    }

    if complex_condition(&w) > DEFECTIVE_COND {
        log::warn!("reduced operator is defective, falling back to Schur vectors");
        let (q, _) = a.clone().schur().unpack();
        return Ok((eig, q.map(|v| C64::new(v, 0.0)), true));
    }
    Ok((eig, w, false))
}

/// Scales a vector to unit norm with its largest-modulus entry real and
/// positive.
fn normalize_phase(v: &mut nalgebra::DVectorViewMut<C64>) {
    let n = v.norm();
    if n == 0.0 {
        return;
    }
    *v /= C64::new(n, 0.0);
    let mut pivot = 0;
    for i in 1..v.len() {
        if v[i].norm() > v[pivot].norm() + 1e-14 {
            pivot = i;
        }
    }
    let phase = v[pivot] / C64::new(v[pivot].norm(), 0.0);
    *v /= phase;
}

fn complex_condition(w: &DMatrix<C64>) -> f64 {
    let m = faer::Mat::<faer::c64>::from_fn(w.nrows(), w.ncols(), |i, j| w[(i, j)]);
    let sv = m.singular_values().unwrap_or_default();
    let max = sv.iter().cloned().fold(0.0f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if sv.is_empty() || min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Orthogonal projection onto `span(u)`: coordinates `Uᵀx`, reconstruction
/// `UUᵀx` and per-column squared residuals.
pub fn project_reconstruct(
    u: &DMatrix<f64>,
    x: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>, Vec<f64>) {
    let coords = u.tr_mul(x);
    let recon = u * &coords;
    let errors = (x - &recon)
        .column_iter()
        .map(|c| c.norm_squared())
        .collect();
    (coords, recon, errors)
}

/// Offline exact DMD of a snapshot pair at rank `rank`.
///
/// Modes are `X′VΣ⁻¹W`, each normalized to unit length.
pub fn exact_modes(x: &DMatrix<f64>, x_next: &DMatrix<f64>, rank: usize) -> Result<ModeSet> {
    if x.shape() != x_next.shape() {
        return Err(CpdError::config("snapshot pair shapes differ"));
    }
    if rank == 0 || rank > x.nrows().min(x.ncols()) {
        return Err(CpdError::config(format!("rank {rank} out of range")));
    }
    let (u, s, v) = truncated_svd(x, rank)?;
    if s[rank - 1] <= f64::EPSILON * s[0] {
        return Err(CpdError::numerical(
            "snapshot matrix is rank deficient at the requested rank",
            s[0] / s[rank - 1],
        ));
    }
    let mut vs = v.clone();
    for j in 0..rank {
        vs.column_mut(j).scale_mut(1.0 / s[j]);
    }
    let xv = x_next * vs;
    let a = u.tr_mul(&xv);
    let (eigenvalues, reduced, defective) = eigen_decompose(&a)?;
    let mut modes = xv.map(|v| C64::new(v, 0.0)) * &reduced;
    for mut col in modes.column_iter_mut() {
        let n = col.norm();
        if n > 0.0 {
            col /= C64::new(n, 0.0);
        }
    }
    Ok(ModeSet {
        eigenvalues,
        reduced,
        modes,
        defective,
    })
}
