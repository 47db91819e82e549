//! Small dense linear-algebra helpers used throughout the pipeline.
//!
//! Everything here operates on `nalgebra` dynamic matrices. The solvers are
//! deliberately conservative: symmetric systems are Jacobi-equilibrated before
//! factorization because the raw measurement units in this problem span many
//! orders of magnitude (seconds vs. radians vs. dimensionless amplitudes).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// (A + A^T)/2.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Maximum relative asymmetry |A - A^T| / max|A|.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    (m - m.transpose()).amax() / scale
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    if m.nrows() == 0 {
        return DVector::zeros(0);
    }
    let mut ev = m.clone().symmetric_eigen().eigenvalues;
    ev.as_mut_slice()
        .sort_by(|a, b| a.partial_cmp(b).expect("non-finite eigenvalue"));
    ev
}

/// Checks `min eigenvalue >= -tol_rel * trace` for a symmetric matrix.
pub fn is_psd(m: &DMatrix<f64>, tol_rel: f64) -> bool {
    if m.nrows() == 0 {
        return true;
    }
    let ev = sym_eigenvalues(m);
    let tr = m.trace().abs().max(f64::MIN_POSITIVE);
    ev[0] >= -tol_rel * tr
}

/// Symmetric PSD factor `F` with `F F^T = m`, via eigendecomposition.
///
/// The matrix is Jacobi-equilibrated first: without it, directions whose
/// variance sits many orders of magnitude below the dominant ones would be
/// swamped by the eigensolver's absolute error. Eigenvalues slightly
/// negative (>= -tol_rel * scaled trace) are clamped to zero; anything more
/// negative is rejected.
pub fn psd_factor(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let d: DVector<f64> = DVector::from_fn(n, |i, _| {
        let v = m[(i, i)].abs();
        if v > 0.0 {
            v.sqrt().recip()
        } else {
            1.0
        }
    });
    let mut scaled_m = m.clone();
    for i in 0..n {
        for j in 0..n {
            scaled_m[(i, j)] *= d[i] * d[j];
        }
    }
    let eig = symmetrize(&scaled_m).symmetric_eigen();
    let tr = scaled_m.trace().abs().max(f64::MIN_POSITIVE);
    let mut factor = eig.eigenvectors.clone();
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam < -1e-10 * tr {
            return Err(Error::NotPsd { what, min_eig: lam });
        }
        let s = lam.max(0.0).sqrt();
        factor.column_mut(j).scale_mut(s);
    }
    for i in 0..n {
        factor.row_mut(i).scale_mut(1.0 / d[i]);
    }
    Ok(factor)
}

/// Solves `A X = B` for symmetric positive-definite `A` with Jacobi
/// equilibration and jitter escalation (three retries, each 10x stronger).
pub fn spd_solve(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if b.nrows() != n {
        return Err(Error::Dimension {
            what,
            expected: n,
            got: b.nrows(),
        });
    }
    // Scale so the diagonal is ~1; guards tiny-but-valid diagonals.
    let d: DVector<f64> = DVector::from_fn(n, |i, _| {
        let v = a[(i, i)].abs();
        if v > 0.0 {
            v.sqrt().recip()
        } else {
            1.0
        }
    });
    let mut a_s = a.clone();
    for i in 0..n {
        for j in 0..n {
            a_s[(i, j)] *= d[i] * d[j];
        }
    }
    a_s = symmetrize(&a_s);
    let tr = a_s.trace().abs().max(f64::MIN_POSITIVE);
    let mut jitter = 0.0;
    for attempt in 0..4 {
        let mut trial = a_s.clone();
        if jitter > 0.0 {
            for i in 0..n {
                trial[(i, i)] += jitter;
            }
        }
        if let Some(chol) = trial.cholesky() {
            let mut rhs = b.clone();
            for i in 0..n {
                rhs.row_mut(i).scale_mut(d[i]);
            }
            let mut x = chol.solve(&rhs);
            for i in 0..n {
                x.row_mut(i).scale_mut(d[i]);
            }
            return Ok(x);
        }
        jitter = if attempt == 0 {
            1e-12 * tr
        } else {
            jitter * 10.0
        };
    }
    let ev = sym_eigenvalues(&a_s);
    let condition = ev[n - 1] / ev[0].abs().max(f64::MIN_POSITIVE);
    Err(Error::SolveFailure { what, condition })
}

/// Inverse of a symmetric positive-definite matrix via [`spd_solve`].
pub fn spd_inverse(a: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    let eye = DMatrix::identity(a.nrows(), a.ncols());
    spd_solve(a, &eye, what).map(|m| symmetrize(&m))
}

/// Result of a symmetric (pseudo-)inverse.
pub struct SymInverse {
    pub inverse: DMatrix<f64>,
    /// True when at least one eigen-direction fell below the cutoff and was
    /// dropped (Moore-Penrose semantics).
    pub truncated: bool,
}

/// Pseudo-inverse of a symmetric PSD matrix with a relative eigenvalue cutoff.
///
/// Equilibrated first so that the cutoff compares information content rather
/// than raw units. Directions with (scaled) eigenvalue below
/// `cutoff * max eigenvalue` are dropped and the result is flagged.
pub fn sym_pseudo_inverse(a: &DMatrix<f64>, cutoff: f64) -> SymInverse {
    let n = a.nrows();
    if n == 0 {
        return SymInverse {
            inverse: DMatrix::zeros(0, 0),
            truncated: false,
        };
    }
    let d: DVector<f64> = DVector::from_fn(n, |i, _| {
        let v = a[(i, i)].abs();
        if v > 0.0 {
            v.sqrt().recip()
        } else {
            1.0
        }
    });
    let mut a_s = a.clone();
    for i in 0..n {
        for j in 0..n {
            a_s[(i, j)] *= d[i] * d[j];
        }
    }
    let eig = symmetrize(&a_s).symmetric_eigen();
    let lam_max = eig
        .eigenvalues
        .iter()
        .fold(0.0_f64, |acc, &l| acc.max(l.abs()));
    let mut truncated = false;
    let mut inv_s = DMatrix::zeros(n, n);
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam <= cutoff * lam_max {
            truncated = true;
            continue;
        }
        let v = eig.eigenvectors.column(j);
        inv_s += v * v.transpose() / lam;
    }
    for i in 0..n {
        for j in 0..n {
            inv_s[(i, j)] *= d[i] * d[j];
        }
    }
    SymInverse {
        inverse: symmetrize(&inv_s),
        truncated,
    }
}

/// Places square blocks along the diagonal of a zero matrix.
pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(n, n);
    let mut off = 0;
    for b in blocks {
        out.view_mut((off, off), (b.nrows(), b.ncols())).copy_from(b);
        off += b.nrows();
    }
    out
}
