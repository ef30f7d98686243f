//! Dense complex linear algebra: Kronecker products, row-major vectorization,
//! checked linear solves, nonsymmetric eigendecomposition, trace norm and the
//! principal matrix square root.
//!
//! Storage is delegated to `nalgebra::DMatrix`; indexing is always `(row, col)`
//! so the storage order never leaks into the semantics. Vectorization stacks
//! rows, which gives `vec(A X Bᵀ) = (A ⊗ B) vec(X)`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::config::Tolerances;
use crate::error::{Error, Result};

#[allow(non_camel_case_types)]
pub type c64 = Complex64;
pub type ComplexMatrix = DMatrix<c64>;
pub type ComplexVector = DVector<c64>;

pub const ZERO: c64 = c64::new(0.0, 0.0);
pub const ONE: c64 = c64::new(1.0, 0.0);

pub fn identity(n: usize) -> ComplexMatrix {
    ComplexMatrix::identity(n, n)
}

pub fn zeros(r: usize, c: usize) -> ComplexMatrix {
    ComplexMatrix::zeros(r, c)
}

/// Builds a matrix from real row-major data.
pub fn from_real(rows: usize, cols: usize, data: &[f64]) -> ComplexMatrix {
    assert_eq!(data.len(), rows * cols);
    ComplexMatrix::from_fn(rows, cols, |i, j| c64::new(data[i * cols + j], 0.0))
}

/// Builds a matrix from complex row-major data.
pub fn from_rows(rows: usize, cols: usize, data: &[c64]) -> ComplexMatrix {
    assert_eq!(data.len(), rows * cols);
    ComplexMatrix::from_fn(rows, cols, |i, j| data[i * cols + j])
}

/// Kronecker product: `kron(A,B)[i·rB+k, j·cB+l] = A[i,j]·B[k,l]`.
pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    let mut out = ComplexMatrix::zeros(ra * rb, ca * cb);
    for i in 0..ra {
        for j in 0..ca {
            let aij = a[(i, j)];
            if aij == ZERO {
                continue;
            }
            for k in 0..rb {
                for l in 0..cb {
                    out[(i * rb + k, j * cb + l)] = aij * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Stacks the rows of `a` into a column vector.
pub fn vec(a: &ComplexMatrix) -> ComplexVector {
    let (r, c) = a.shape();
    ComplexVector::from_fn(r * c, |k, _| a[(k / c, k % c)])
}

/// Inverse of [`vec`].
pub fn unvec(v: &ComplexVector, rows: usize, cols: usize) -> Result<ComplexMatrix> {
    if v.len() != rows * cols {
        return Err(Error::DimensionMismatch(format!(
            "cannot reshape a vector of length {} into {}x{}",
            v.len(),
            rows,
            cols
        )));
    }
    Ok(ComplexMatrix::from_fn(rows, cols, |i, j| v[i * cols + j]))
}

pub fn max_abs(a: &ComplexMatrix) -> f64 {
    a.iter().fold(0.0, |m, z| m.max(z.norm()))
}

pub fn frobenius(a: &ComplexMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn one_norm(a: &ComplexMatrix) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn trace(a: &ComplexMatrix) -> c64 {
    (0..a.nrows().min(a.ncols())).map(|i| a[(i, i)]).sum()
}

pub fn hermitian_part(a: &ComplexMatrix) -> ComplexMatrix {
    (a + a.adjoint()).scale(0.5)
}

pub fn is_hermitian(a: &ComplexMatrix, tol: f64) -> bool {
    a.is_square() && max_abs(&(a - a.adjoint())) <= tol
}

fn check_square(a: &ComplexMatrix, what: &str) -> Result<()> {
    if a.is_square() {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!(
            "{what} requires a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )))
    }
}

/// Result of a checked linear solve.
#[derive(Debug, Clone)]
pub struct Solution {
    pub x: ComplexMatrix,
    /// 1-norm condition estimate `‖A‖₁‖A⁻¹‖₁`.
    pub condition: f64,
    /// Smallest pivot magnitude of the LU factorization.
    pub min_pivot: f64,
}

/// Solves `A X = B`, refusing systems whose condition estimate exceeds the default cap.
pub fn solve(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    solve_checked(a, b, &Tolerances::default()).map(|s| s.x)
}

/// Solves `A X = B` with partial-pivoting LU plus one step of iterative refinement.
pub fn solve_checked(a: &ComplexMatrix, b: &ComplexMatrix, tol: &Tolerances) -> Result<Solution> {
    check_square(a, "solve")?;
    if a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "solve: A is {}x{}, B has {} rows",
            a.nrows(),
            a.ncols(),
            b.nrows()
        )));
    }
    let n = a.nrows();
    if n == 0 {
        return Ok(Solution { x: b.clone(), condition: 1.0, min_pivot: f64::INFINITY });
    }
    let lu = a.clone().lu();
    let u = lu.u();
    let min_pivot = (0..n).map(|i| u[(i, i)].norm()).fold(f64::INFINITY, f64::min);
    if min_pivot == 0.0 {
        return Err(Error::SingularMatrix { condition: f64::INFINITY });
    }
    let inv = lu
        .try_inverse()
        .ok_or(Error::SingularMatrix { condition: f64::INFINITY })?;
    let condition = one_norm(a) * one_norm(&inv);
    if !condition.is_finite() || condition > tol.max_condition {
        return Err(Error::SingularMatrix { condition });
    }
    let mut x = lu.solve(b).ok_or(Error::SingularMatrix { condition })?;
    let r = b - a * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    Ok(Solution { x, condition, min_pivot })
}

/// Inverse with the same conditioning policy as [`solve`].
pub fn inverse(a: &ComplexMatrix) -> Result<ComplexMatrix> {
    solve(a, &identity(a.nrows()))
}

/// Eigenvalues and (unit-norm) eigenvectors stored column-wise.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: Vec<c64>,
    pub vectors: ComplexMatrix,
}

/// Full nonsymmetric eigendecomposition through the complex Schur form.
///
/// Eigenvectors come from back-substitution on the triangular factor; near-equal
/// diagonal entries are perturbed as in LAPACK's `trevc`, so defective
/// eigenvalues still yield a (repeated) eigenvector with small residual.
pub fn eig(a: &ComplexMatrix) -> Result<Eigen> {
    check_square(a, "eig")?;
    let n = a.nrows();
    if n == 0 {
        return Ok(Eigen { values: vec![], vectors: zeros(0, 0) });
    }
    // A nearly scalar matrix can stall the QR sweeps; removing the mean eigenvalue helps.
    let (q, t) = match a.clone().try_schur(f64::EPSILON, 10_000) {
        Some(s) => s.unpack(),
        None => {
            let shift = trace(a) / c64::new(n as f64, 0.0);
            let shifted = a - identity(n).map(|v| v * shift);
            let (q, mut t) = shifted
                .try_schur(f64::EPSILON, 10_000)
                .ok_or_else(|| Error::NoConvergence("Schur iteration cap reached".into()))?
                .unpack();
            for i in 0..n {
                t[(i, i)] += shift;
            }
            (q, t)
        }
    };
    let values: Vec<c64> = (0..n).map(|i| t[(i, i)]).collect();
    let scale = max_abs(&t).max(f64::MIN_POSITIVE);
    let smin = (f64::EPSILON * scale).max(f64::MIN_POSITIVE * 1e3);
    let mut x = zeros(n, n);
    for k in 0..n {
        let lam = t[(k, k)];
        x[(k, k)] = ONE;
        for i in (0..k).rev() {
            let mut s = ZERO;
            for j in (i + 1)..=k {
                s += t[(i, j)] * x[(j, k)];
            }
            let mut den = t[(i, i)] - lam;
            if den.norm() < smin {
                den = c64::new(smin, 0.0);
            }
            x[(i, k)] = -s / den;
            // Keep the partial solution bounded to avoid overflow on defective blocks.
            let big = x.column(k).iter().fold(0.0f64, |m, z| m.max(z.norm()));
            if big > 1e100 {
                let f = 1.0 / big;
                for r in i..=k {
                    x[(r, k)] *= f;
                }
            }
        }
    }
    let mut vectors = q * x;
    for k in 0..n {
        let nrm = vectors.column(k).norm();
        if nrm > 0.0 {
            vectors.column_mut(k).unscale_mut(nrm);
        }
    }
    Ok(Eigen { values, vectors })
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues ascending.
pub fn eigh(a: &ComplexMatrix) -> (Vec<f64>, ComplexMatrix) {
    let n = a.nrows();
    if n == 0 {
        return (vec![], zeros(0, 0));
    }
    let se = hermitian_part(a).symmetric_eigen();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| se.eigenvalues[i].total_cmp(&se.eigenvalues[j]));
    let values = idx.iter().map(|&i| se.eigenvalues[i]).collect();
    let mut vectors = zeros(n, n);
    for (c, &i) in idx.iter().enumerate() {
        vectors.set_column(c, &se.eigenvectors.column(i));
    }
    (values, vectors)
}

/// Singular values sorted in decreasing order.
pub fn singular_values(a: &ComplexMatrix) -> Vec<f64> {
    if a.is_empty() {
        return vec![];
    }
    let mut s: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

pub fn min_singular_value(a: &ComplexMatrix) -> f64 {
    singular_values(a).last().copied().unwrap_or(0.0)
}

/// Sum of singular values.
pub fn trace_norm(a: &ComplexMatrix) -> f64 {
    singular_values(a).iter().sum()
}

/// 2-norm condition number `σ_max/σ_min`.
pub fn condition_2(a: &ComplexMatrix) -> f64 {
    let s = singular_values(a);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

/// Orthonormal basis (as columns) of the range of `a`, dropping singular values
/// below `rel_cut·σ_max`.
pub fn range_basis(a: &ComplexMatrix, rel_cut: f64) -> ComplexMatrix {
    if a.ncols() == 0 || a.nrows() == 0 {
        return zeros(a.nrows(), 0);
    }
    let svd = a.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return zeros(a.nrows(), 0);
    }
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > rel_cut * smax)
        .collect();
    let mut out = zeros(a.nrows(), keep.len());
    for (c, &i) in keep.iter().enumerate() {
        out.set_column(c, &u.column(i));
    }
    out
}

/// Orthonormal basis of the kernel of a square matrix, using an absolute cut-off.
pub fn null_space(a: &ComplexMatrix, cut: f64) -> ComplexMatrix {
    let n = a.ncols();
    if n == 0 {
        return zeros(0, 0);
    }
    // Pad to square so V is complete.
    let m = if a.nrows() < n {
        let mut p = zeros(n, n);
        p.view_mut((0, 0), (a.nrows(), n)).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = m.svd(false, true);
    let v = svd.v_t.expect("requested V").adjoint();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] <= cut)
        .collect();
    let mut out = zeros(n, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        out.set_column(c, &v.column(i));
    }
    out
}

/// Square root of a Hermitian positive semidefinite matrix (negative noise clipped).
pub fn psd_sqrt(a: &ComplexMatrix) -> ComplexMatrix {
    let (w, v) = eigh(a);
    let d = ComplexMatrix::from_diagonal(&ComplexVector::from_iterator(
        w.len(),
        w.iter().map(|&x| c64::new(x.max(0.0).sqrt(), 0.0)),
    ));
    &v * d * v.adjoint()
}

/// Moore-Penrose pseudo-inverse of a Hermitian PSD matrix, inverting eigenvalues above `cut`.
pub fn psd_pinv(a: &ComplexMatrix, cut: f64) -> ComplexMatrix {
    let (w, v) = eigh(a);
    let d = ComplexMatrix::from_diagonal(&ComplexVector::from_iterator(
        w.len(),
        w.iter().map(|&x| if x > cut { c64::new(1.0 / x, 0.0) } else { ZERO }),
    ));
    &v * d * v.adjoint()
}

/// Principal square root with the default tolerances.
pub fn principal_sqrt(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    principal_sqrt_with(m, &Tolerances::default())
}

/// Principal square root: spectrum of the result lies in the open right
/// half-plane, except that zero eigenvalues of a diagonalizable `m` map to zero.
pub fn principal_sqrt_with(m: &ComplexMatrix, tol: &Tolerances) -> Result<ComplexMatrix> {
    check_square(m, "principal_sqrt")?;
    let n = m.nrows();
    if n == 0 {
        return Ok(zeros(0, 0));
    }
    let scale = max_abs(m).max(f64::MIN_POSITIVE);
    let zero_tol = 1e-12 * scale;
    let e = match eig(m) {
        Ok(e) => e,
        Err(Error::NoConvergence(_)) => return denman_beavers(m, tol),
        Err(err) => return Err(err),
    };
    let mut has_zero = false;
    for &l in &e.values {
        if l.norm() <= zero_tol {
            has_zero = true;
        } else if l.re <= 0.0 && l.im.abs() <= 1e-14 * scale {
            return Err(Error::BranchCut(format!("{l}")));
        }
    }
    let vcond = condition_2(&e.vectors);
    if vcond < tol.sqrt_eigvec_condition {
        let d = ComplexMatrix::from_diagonal(&ComplexVector::from_iterator(
            n,
            e.values
                .iter()
                .map(|&l| if l.norm() <= zero_tol { ZERO } else { l.sqrt() }),
        ));
        let vinv = e
            .vectors
            .clone()
            .try_inverse()
            .ok_or(Error::SingularMatrix { condition: vcond })?;
        return Ok(&e.vectors * d * vinv);
    }
    if has_zero {
        return Err(Error::BranchCut(
            "zero eigenvalue of a non-diagonalizable matrix".into(),
        ));
    }
    denman_beavers(m, tol)
}

/// Scaled Denman-Beavers iteration `Y → ½(μY + (μZ)⁻¹)`, `Z → ½(μZ + (μY)⁻¹)`.
fn denman_beavers(m: &ComplexMatrix, tol: &Tolerances) -> Result<ComplexMatrix> {
    let n = m.nrows();
    let mut y = m.clone();
    let mut z = identity(n);
    let target = 1e-14 * frobenius(m).max(1.0);
    for it in 0..tol.sqrt_max_iter {
        let yi = y
            .clone()
            .try_inverse()
            .ok_or(Error::SingularMatrix { condition: f64::INFINITY })?;
        let zi = z
            .clone()
            .try_inverse()
            .ok_or(Error::SingularMatrix { condition: f64::INFINITY })?;
        let mu = if it < 20 {
            let dy = y.determinant().norm();
            let dz = z.determinant().norm();
            let prod = dy * dz;
            if prod > 0.0 && prod.is_finite() {
                prod.powf(-1.0 / (2.0 * n as f64))
            } else {
                1.0
            }
        } else {
            1.0
        };
        let ynew = (y.scale(mu) + zi.unscale(mu)).scale(0.5);
        let znew = (z.scale(mu) + yi.unscale(mu)).scale(0.5);
        let delta = frobenius(&(&ynew - &y));
        y = ynew;
        z = znew;
        if delta <= target && mu == 1.0 || delta <= target * 1e-2 {
            return Ok(y);
        }
    }
    let res = frobenius(&(&y * &y - m));
    if res <= 1e-10 * frobenius(m).max(1.0) {
        Ok(y)
    } else {
        Err(Error::NoConvergence(format!(
            "Denman-Beavers residual {res:.3e}"
        )))
    }
}

/// Kraus-style projector `V V*` for an isometry `V`.
pub fn projector_from_isometry(v: &ComplexMatrix) -> ComplexMatrix {
    v * v.adjoint()
}
