//! Small dense linear-algebra routines: Riccati and Lyapunov solvers,
//! controllability, spectra, and JSON-friendly matrix conversion.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const RICCATI_MAX_ITER: usize = 100_000;
const RICCATI_TOL: f64 = 1e-12;

/// Converts a row-major nested vector into a matrix.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch {
            context: "matrix rows",
            expected: ncols,
            got: bad.len(),
        });
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Dot product of row `i` of `m` with `v`.
#[inline]
pub fn row_dot(m: &DMatrix<f64>, i: usize, v: &DVector<f64>) -> f64 {
    (0..m.ncols()).map(|j| m[(i, j)] * v[j]).sum()
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrize(m)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    m.is_square() && m.nrows() > 0 && min_symmetric_eigenvalue(m) > 0.0
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Integer matrix power by repeated multiplication.
pub fn matrix_power(a: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let mut out = DMatrix::identity(a.nrows(), a.ncols());
    for _ in 0..k {
        out = &out * a;
    }
    out
}

/// Numerical rank of `[B, AB, ..., A^{n-1}B]`.
pub fn controllability_rank(a: &DMatrix<f64>, b: &DMatrix<f64>) -> usize {
    let n = a.nrows();
    let m = b.ncols();
    let mut ctrb = DMatrix::zeros(n, n * m);
    let mut block = b.clone();
    for k in 0..n {
        ctrb.view_mut((0, k * m), (n, m)).copy_from(&block);
        block = a * &block;
    }
    let sv = ctrb.singular_values();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let tol = 1e-10 * smax.max(1.0);
    sv.iter().filter(|&&s| s > tol).count()
}

/// Stabilizing solution of the discrete algebraic Riccati equation by fixed-point iteration.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let mut p = q.clone();
    for _ in 0..RICCATI_MAX_ITER {
        let bt_p = b.transpose() * &p;
        let gain_den = r + &bt_p * b;
        let gain_num = &bt_p * a;
        let k = gain_den
            .lu()
            .solve(&gain_num)
            .ok_or(Error::Singular("Riccati gain"))?;
        let next = symmetrize(&(q + a.transpose() * &p * a - a.transpose() * &p * b * k));
        let diff = (&next - &p).amax();
        p = next;
        if diff <= RICCATI_TOL * p.amax().max(1.0) {
            return Ok(p);
        }
    }
    Err(Error::RiccatiDivergence(RICCATI_MAX_ITER))
}

/// LQ-optimal gain `K` for the convention `u = K x`, i.e. `K = -(R + BᵀPB)⁻¹BᵀPA`.
pub fn lqr_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let p = solve_dare(a, b, q, r)?;
    let bt_p = b.transpose() * &p;
    let k = (r + &bt_p * b)
        .lu()
        .solve(&(&bt_p * a))
        .ok_or(Error::Singular("LQR gain"))?;
    Ok(-k)
}

/// Solves `Φᵀ P Φ − P + C = 0` for symmetric `P` via the Kronecker form.
pub fn solve_discrete_lyapunov(phi: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = phi.nrows();
    let phit = phi.transpose();
    // vec(Φᵀ P Φ) = (Φᵀ ⊗ Φᵀ) vec(P) for column-major vec.
    let kron = phit.kronecker(&phit);
    let lhs = DMatrix::identity(n * n, n * n) - kron;
    let rhs = DVector::from_column_slice(c.as_slice());
    let sol = lhs
        .lu()
        .solve(&rhs)
        .ok_or(Error::Singular("discrete Lyapunov"))?;
    Ok(symmetrize(&DMatrix::from_column_slice(n, n, sol.as_slice())))
}
