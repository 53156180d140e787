//! Rank-r truncated SVD tracked under column additions and removals.
//!
//! Additions follow Brand's incremental scheme with the reorthogonalization
//! rule of Zhang et al.: updates whose residual energy falls below `tol` are
//! buffered as coordinates in the current basis and folded in with a single
//! inner SVD once a column with real out-of-span energy arrives. Removals
//! deflate the core matrix with the projection of the removed columns onto
//! the right singular vectors.

use nalgebra::{DMatrix, DVector};

use crate::error::{CpdError, Result};
use crate::linalg::{hstack, orthogonality_error_max, thin_qr, truncated_svd};

/// Tracked factors `X ≈ U diag(σ) Vᵀ` of the snapshot matrix.
///
/// Columns of `X` are ordered oldest first; `V` holds one row per column
/// already folded into the factors. Columns sitting in the low-energy buffer
/// are tracked but do not have a `V` row until the buffer is flushed.
#[derive(Debug, Clone)]
pub struct OnlineSvd {
    u: DMatrix<f64>,
    sigma: DVector<f64>,
    v: DMatrix<f64>,
    buffer: Vec<DVector<f64>>,
    tol: f64,
    reorth_count: usize,
}

impl OnlineSvd {
    /// Default tolerance for a given row dimension: `1e-10·√m̄`.
    pub fn default_tol(rows: usize) -> f64 {
        1e-10 * (rows as f64).sqrt()
    }

    /// Best rank-`rank` factorization of `x` computed in batch.
    pub fn initialize(x: &DMatrix<f64>, rank: usize) -> Result<Self> {
        Self::initialize_with_tol(x, rank, Self::default_tol(x.nrows()))
    }

    pub fn initialize_with_tol(x: &DMatrix<f64>, rank: usize, tol: f64) -> Result<Self> {
        if rank == 0 || rank > x.nrows().min(x.ncols()) {
            return Err(CpdError::config(format!(
                "rank {rank} must lie in 1..={} for a {}×{} matrix",
                x.nrows().min(x.ncols()),
                x.nrows(),
                x.ncols()
            )));
        }
        if !(tol >= 0.0) {
            return Err(CpdError::config("svd tolerance must be nonnegative"));
        }
        let (u, sigma, v) = truncated_svd(x, rank)?;
        Ok(Self {
            u,
            sigma,
            v,
            buffer: Vec::new(),
            tol,
            reorth_count: 0,
        })
    }

    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn rows(&self) -> usize {
        self.u.nrows()
    }

    /// Left singular vectors, `m̄×r`.
    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn singular_values(&self) -> &DVector<f64> {
        &self.sigma
    }

    /// Right singular vectors for the columns folded into the factors.
    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    /// Number of buffered low-energy updates (`q_u`).
    pub fn pending_updates(&self) -> usize {
        self.buffer.len()
    }

    /// Total number of tracked columns, buffered ones included.
    pub fn tracked_columns(&self) -> usize {
        self.v.nrows() + self.buffer.len()
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    /// How many times `U` had to be re-orthonormalized wholesale.
    pub fn reorthonormalizations(&self) -> usize {
        self.reorth_count
    }

    /// Current reconstruction `U diag(σ) Vᵀ` of the folded-in columns.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (j, s) in self.sigma.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * self.v.transpose()
    }

    /// Appends new columns (`m̄×c`) to the tracked matrix.
    pub fn update(&mut self, cols: &DMatrix<f64>) -> Result<()> {
        if cols.nrows() != self.u.nrows() {
            return Err(CpdError::config(format!(
                "update has {} rows, tracked basis has {}",
                cols.nrows(),
                self.u.nrows()
            )));
        }
        let c = cols.ncols();
        if c == 0 {
            return Ok(());
        }
        let r = self.rank();

        let mut coords = self.u.tr_mul(cols);
        let resid = cols - &self.u * &coords;
        let (mut e, k) = thin_residual_qr(&resid);
        let energy = k.norm();

        if energy < self.tol {
            for j in 0..c {
                self.buffer.push(coords.column(j).into_owned());
            }
            return Ok(());
        }

        // Rotation accumulated by the buffer flush, applied to U at the end.
        let rot = if self.buffer.is_empty() {
            None
        } else {
            let uy = self.fold_buffer()?;
            coords = uy.tr_mul(&coords);
            Some(uy)
        };

        let leak = self.u.tr_mul(&e).amax();
        if leak > self.tol {
            e -= &self.u * self.u.tr_mul(&e);
            e = thin_residual_qr(&e).0;
        }

        // Core Y = [Σ  L; 0  K]
        let mut y = DMatrix::zeros(r + c, r + c);
        for i in 0..r {
            y[(i, i)] = self.sigma[i];
        }
        y.view_mut((0, r), (r, c)).copy_from(&coords);
        y.view_mut((r, r), (c, c)).copy_from(&k);
        let (uy, sy, vy) = truncated_svd(&y, r)?;

        let base = match rot {
            Some(rot) => &self.u * rot,
            None => self.u.clone(),
        };
        self.u = hstack(&base, &e) * uy;
        self.sigma = sy;

        let n = self.v.nrows();
        let mut v = DMatrix::zeros(n + c, r);
        v.view_mut((0, 0), (n, r))
            .copy_from(&(&self.v * vy.rows(0, r)));
        v.view_mut((n, 0), (c, r)).copy_from(&vy.rows(r, c));
        self.v = v;

        self.enforce_orthogonality()

    }

    /// Folds buffered coordinates into the factors without touching `U`'s
    /// span. Returns the `r×r` rotation that still has to be applied to `U`.
    fn fold_buffer(&mut self) -> Result<DMatrix<f64>> {
        let r = self.rank();
        let q = self.buffer.len();
        let mut y = DMatrix::zeros(r, r + q);
        for i in 0..r {
            y[(i, i)] = self.sigma[i];
        }
        for (j, col) in self.buffer.iter().enumerate() {
            y.set_column(r + j, col);
        }
        let (uy, sy, vy) = truncated_svd(&y, r)?;
        let n = self.v.nrows();
        let mut v = DMatrix::zeros(n + q, r);
        v.view_mut((0, 0), (n, r))
            .copy_from(&(&self.v * vy.rows(0, r)));
        v.view_mut((n, 0), (q, r)).copy_from(&vy.rows(r, q));
        self.v = v;
        self.sigma = sy;
        self.buffer.clear();
        Ok(uy)
    }

    /// Forces buffered low-energy updates into the factors.
    pub fn flush(&mut self) -> Result<()> {
        if !self.buffer.is_empty() {
            let rot = self.fold_buffer()?;
            self.u = &self.u * rot;
        }
        Ok(())
    }

    /// Removes the `count` oldest tracked columns.
    pub fn revert(&mut self, count: usize) -> Result<()> {
        if count == 0 {
            return Ok(());
        }
        self.flush()?;
        let r = self.rank();
        let n = self.v.nrows();
        if count > n {
            return Err(CpdError::state(format!(
                "cannot revert {count} columns, only {n} are tracked"
            )));
        }
        if n <= count + r {
            return Err(CpdError::state(format!(
                "reverting {count} of {n} columns would leave fewer than rank {r} + 1"
            )));
        }
        let c = count;

        // N = Vᵀ B: projection coefficients of the removed columns' selectors.
        let nmat = self.v.rows(0, c).transpose();
        let mut e = -(&self.v * &nmat);
        for i in 0..c {
            e[(i, i)] += 1.0;
        }
        let (e_basis, rfac) = if c == 1 {
            let nn = nmat.column(0).norm_squared();
            let rr = (1.0 - nn).max(0.0).sqrt();
            let en = e.norm();
            let basis = if en > f64::EPSILON {
                e / en
            } else {
                DMatrix::zeros(n, 1)
            };
            (basis, DMatrix::from_element(1, 1, rr))
        } else {
            thin_residual_qr(&e)
        };

        // Top block of Σ̄ (I − [N;0][N;R]ᵀ): diag(σ)·[I − NNᵀ, −NRᵀ].
        let mut y = DMatrix::zeros(r, r + c);
        let nnt = &nmat * nmat.transpose();
        let nrt = &nmat * rfac.transpose();
        for i in 0..r {
            for j in 0..r {
                let id = if i == j { 1.0 } else { 0.0 };
                y[(i, j)] = self.sigma[i] * (id - nnt[(i, j)]);
            }
            for j in 0..c {
                y[(i, r + j)] = -self.sigma[i] * nrt[(i, j)];
            }
        }
        let (uy, sy, vy) = truncated_svd(&y, r)?;
        self.u = &self.u * uy;
        self.sigma = sy;
        let full = hstack(&self.v, &e_basis) * vy;
        self.v = full.rows(c, n - c).into_owned();

        self.enforce_orthogonality()

    }

    /// Re-orthonormalizes `U` when drift exceeds `10·tol`, absorbing the
    /// triangular factor into `σ` and `V`.
    fn enforce_orthogonality(&mut self) -> Result<()> {
        let limit = 10.0 * self.tol.max(f64::EPSILON);
        if orthogonality_error_max(&self.u) <= limit {
            return Ok(());
        }
        let (q, rfac) = thin_qr(&self.u);
        let mut core = rfac;
        for (j, s) in self.sigma.iter().enumerate() {
            core.column_mut(j).scale_mut(*s);
        }
        let (ur, sr, vr) = truncated_svd(&core, self.rank())?;
        self.u = q * ur;
        self.sigma = sr;
        self.v = &self.v * vr;
        self.reorth_count += 1;
        Ok(())
    }
}

/// QR of a residual block that may be rank deficient or wider than tall.
fn thin_residual_qr(e: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    if e.nrows() >= e.ncols() {
        thin_qr(e)
    } else {
        // More new columns than rows: pad so the basis keeps c columns, the
        // extra directions carry zero energy.
        let pad = DMatrix::zeros(e.ncols() - e.nrows(), e.ncols());
        let tall = crate::linalg::vstack(e, &pad);
        let (q, r) = thin_qr(&tall);
        (q.rows(0, e.nrows()).into_owned(), r)
    }
}
