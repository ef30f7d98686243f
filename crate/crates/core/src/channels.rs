//! Completely positive maps in Kraus form and their superoperator matrices.

use crate::config::Tolerances;
use crate::densela::{
    self, c64, eig, eigh, identity, kron, max_abs, null_space, range_basis, trace, unvec, vec,
    ComplexMatrix, ComplexVector, ZERO,
};
use crate::error::{Error, Result};

/// A CP map `ρ ↦ Σ Bᵢ ρ Bᵢ*` on `d×d` matrices. An empty Kraus list is the zero map.
#[derive(Debug, Clone, PartialEq)]
pub struct KrausMap {
    dim: usize,
    kraus: Vec<ComplexMatrix>,
}

/// Matrix of a linear map acting on row-major vectorized `d×d` operators.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperOperator {
    pub dim: usize,
    pub matrix: ComplexMatrix,
}

/// A validated density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    matrix: ComplexMatrix,
}

impl KrausMap {
    pub fn new(dim: usize, kraus: Vec<ComplexMatrix>) -> Result<Self> {
        for (i, b) in kraus.iter().enumerate() {
            if b.shape() != (dim, dim) {
                return Err(Error::DimensionMismatch(format!(
                    "Kraus operator {i} is {}x{}, expected {dim}x{dim}",
                    b.nrows(),
                    b.ncols()
                )));
            }
        }
        Ok(KrausMap { dim, kraus })
    }

    pub fn zero(dim: usize) -> Self {
        KrausMap { dim, kraus: vec![] }
    }

    pub fn identity(dim: usize) -> Self {
        KrausMap { dim, kraus: vec![identity(dim)] }
    }

    /// Conjugation by a single matrix, `ρ ↦ BρB*`.
    pub fn single(b: ComplexMatrix) -> Self {
        assert!(b.is_square());
        KrausMap { dim: b.nrows(), kraus: vec![b] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kraus(&self) -> &[ComplexMatrix] {
        &self.kraus
    }

    pub fn into_kraus(self) -> Vec<ComplexMatrix> {
        self.kraus
    }

    pub fn is_zero(&self) -> bool {
        self.kraus.iter().all(|b| b.iter().all(|z| *z == ZERO))
    }

    /// The map `w·Φ` for `w ≥ 0` (Kraus operators scaled by `√w`).
    pub fn scaled(&self, w: f64) -> Self {
        assert!(w >= 0.0, "negative weight {w}");
        let s = w.sqrt();
        KrausMap { dim: self.dim, kraus: self.kraus.iter().map(|b| b.scale(s)).collect() }
    }

    /// Sum of CP maps (concatenated Kraus lists).
    pub fn sum<'a>(dim: usize, maps: impl IntoIterator<Item = &'a KrausMap>) -> Self {
        let mut kraus = vec![];
        for m in maps {
            assert_eq!(m.dim, dim);
            kraus.extend(m.kraus.iter().cloned());
        }
        KrausMap { dim, kraus }
    }

    /// Superoperator matrix `Σ Bᵢ ⊗ conj(Bᵢ)`.
    pub fn to_superop(&self) -> SuperOperator {
        let d2 = self.dim * self.dim;
        let mut m = ComplexMatrix::zeros(d2, d2);
        for b in &self.kraus {
            m += kron(b, &b.map(|z| z.conj()));
        }
        SuperOperator { dim: self.dim, matrix: m }
    }

    pub fn apply(&self, rho: &ComplexMatrix) -> ComplexMatrix {
        let mut out = ComplexMatrix::zeros(self.dim, self.dim);
        for b in &self.kraus {
            out += b * rho * b.adjoint();
        }
        out
    }

    /// Heisenberg-picture map with Kraus operators `Bᵢ*`.
    pub fn dual(&self) -> Self {
        KrausMap { dim: self.dim, kraus: self.kraus.iter().map(|b| b.adjoint()).collect() }
    }

    /// `Σ Bᵢ* Bᵢ`, equal to `I` for trace preserving maps.
    pub fn dual_identity(&self) -> ComplexMatrix {
        let mut s = ComplexMatrix::zeros(self.dim, self.dim);
        for b in &self.kraus {
            s += b.adjoint() * b;
        }
        s
    }

    /// Max-norm of `Σ Bᵢ* Bᵢ − I`.
    pub fn tp_residual(&self) -> f64 {
        max_abs(&(self.dual_identity() - identity(self.dim)))
    }

    /// Max-norm of `Σ Bᵢ Bᵢ* − I`.
    pub fn unital_residual(&self) -> f64 {
        max_abs(&(self.apply(&identity(self.dim)) - identity(self.dim)))
    }

    pub fn is_trace_preserving(&self) -> bool {
        self.tp_residual() <= Tolerances::default().tp_tol
    }

    pub fn is_unital(&self) -> bool {
        self.unital_residual() <= Tolerances::default().tp_tol
    }

    /// Trace non-increasing: `I − Σ Bᵢ*Bᵢ` positive semidefinite.
    pub fn is_trace_nonincreasing(&self, tol: f64) -> bool {
        let (w, _) = eigh(&(identity(self.dim) - self.dual_identity()));
        w.first().is_none_or(|&l| l >= -tol)
    }

    /// Kraus form of a CP superoperator, via the eigendecomposition of its Choi matrix.
    pub fn from_superop(s: &SuperOperator) -> Result<Self> {
        let d = s.dim;
        let c = s.choi();
        let (w, v) = eigh(&c);
        let tol = Tolerances::default().cp_tol * max_abs(&c).max(1.0);
        if w.first().is_some_and(|&l| l < -tol) {
            return Err(Error::Invalid(format!(
                "superoperator is not completely positive (Choi eigenvalue {:.3e})",
                w[0]
            )));
        }
        let mut kraus = vec![];
        for (k, &l) in w.iter().enumerate() {
            if l <= tol {
                continue;
            }
            let s = l.sqrt();
            kraus.push(ComplexMatrix::from_fn(d, d, |i, j| v[(j * d + i, k)] * s));
        }
        Ok(KrausMap { dim: d, kraus })
    }
}

impl SuperOperator {
    pub fn new(dim: usize, matrix: ComplexMatrix) -> Result<Self> {
        if matrix.shape() != (dim * dim, dim * dim) {
            return Err(Error::DimensionMismatch(format!(
                "superoperator for d={dim} must be {}x{}",
                dim * dim,
                dim * dim
            )));
        }
        Ok(SuperOperator { dim, matrix })
    }

    pub fn apply(&self, rho: &ComplexMatrix) -> ComplexMatrix {
        unvec(&(&self.matrix * vec(rho)), self.dim, self.dim).expect("square operand")
    }

    /// Choi matrix `Σ_{jl} |j⟩⟨l| ⊗ Φ(|j⟩⟨l|)`, obtained by reshuffling indices.
    pub fn choi(&self) -> ComplexMatrix {
        let d = self.dim;
        let mut c = ComplexMatrix::zeros(d * d, d * d);
        for i in 0..d {
            for k in 0..d {
                for j in 0..d {
                    for l in 0..d {
                        c[(j * d + i, l * d + k)] = self.matrix[(i * d + k, j * d + l)];
                    }
                }
            }
        }
        c
    }

    pub fn is_completely_positive(&self) -> bool {
        let c = self.choi();
        if !densela::is_hermitian(&c, 1e-9) {
            return false;
        }
        let (w, _) = eigh(&c);
        w.first().is_none_or(|&l| l >= -Tolerances::default().cp_tol)
    }
}

pub fn choi(phi: &KrausMap) -> ComplexMatrix {
    phi.to_superop().choi()
}

/// `Φ∘Ψ`: first `Ψ`, then `Φ`.
pub fn compose(phi: &KrausMap, psi: &KrausMap) -> Result<KrausMap> {
    if phi.dim != psi.dim {
        return Err(Error::DimensionMismatch(format!(
            "compose: dimensions {} and {}",
            phi.dim, psi.dim
        )));
    }
    let mut kraus = vec![];
    for a in &phi.kraus {
        for b in &psi.kraus {
            kraus.push(a * b);
        }
    }
    Ok(KrausMap { dim: phi.dim, kraus })
}

/// `Σ pᵢ Φᵢ` for a probability vector `p`.
pub fn convex_combine(weights: &[f64], maps: &[KrausMap]) -> Result<KrausMap> {
    if weights.len() != maps.len() || maps.is_empty() {
        return Err(Error::BadWeights(format!(
            "{} weights for {} maps",
            weights.len(),
            maps.len()
        )));
    }
    if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
        return Err(Error::BadWeights("negative or non-finite weight".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > Tolerances::default().weight_sum_tol {
        return Err(Error::BadWeights(format!("weights sum to {total}")));
    }
    let dim = maps[0].dim;
    if maps.iter().any(|m| m.dim != dim) {
        return Err(Error::DimensionMismatch("convex_combine: mixed dimensions".into()));
    }
    let scaled: Vec<KrausMap> = weights.iter().zip(maps).map(|(&w, m)| m.scaled(w)).collect();
    Ok(KrausMap::sum(dim, scaled.iter()))
}

impl DensityMatrix {
    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch("density matrix must be square".into()));
        }
        if !densela::is_hermitian(&matrix, 1e-10) {
            return Err(Error::Invalid("density matrix is not Hermitian".into()));
        }
        let (w, _) = eigh(&matrix);
        if w.first().is_some_and(|&l| l < -1e-10) {
            return Err(Error::Invalid(format!("density matrix has eigenvalue {:.3e}", w[0])));
        }
        let t = trace(&matrix);
        if (t - c64::new(1.0, 0.0)).norm() > 1e-10 {
            return Err(Error::Invalid(format!("density matrix has trace {t}")));
        }
        Ok(DensityMatrix { matrix })
    }

    /// `|ψ⟩⟨ψ|` for a unit (or normalizable) vector.
    pub fn pure(psi: &ComplexVector) -> Result<Self> {
        let n = psi.norm();
        if n == 0.0 {
            return Err(Error::Invalid("zero state vector".into()));
        }
        let p = psi.unscale(n);
        Ok(DensityMatrix { matrix: &p * p.adjoint() })
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        DensityMatrix { matrix: identity(dim).unscale(dim as f64) }
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Eigenvalues of `Φ̂` within `tol` of 1.
fn fixed_cluster(phi: &KrausMap, tol: f64) -> Result<(usize, f64)> {
    let e = eig(&phi.to_superop().matrix)?;
    let mut dist: Vec<f64> = e.values.iter().map(|l| (l - c64::new(1.0, 0.0)).norm()).collect();
    dist.sort_by(f64::total_cmp);
    let k = dist.iter().filter(|&&x| x <= tol).count();
    let gap = dist.get(k).copied().unwrap_or(f64::INFINITY);
    Ok((k, gap))
}

/// Invariant states spanning the fixed-point space of a trace preserving map.
///
/// Each fixed operator is split into Hermitian parts and then into positive and
/// negative parts, which are again fixed for positive trace preserving maps.
pub fn invariant_states(phi: &KrausMap) -> Result<Vec<DensityMatrix>> {
    let tol = Tolerances::default();
    let d = phi.dim;
    let (k, _) = fixed_cluster(phi, tol.fixed_point_tol)?;
    if k == 0 {
        return Err(Error::NoInvariantState);
    }
    let a = phi.to_superop().matrix - identity(d * d);
    // The k right-singular vectors with smallest singular values span the eigenspace.
    let svd = a.clone().svd(false, true);
    let v = svd.v_t.expect("requested V").adjoint();
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let mut candidates = vec![];
    for &i in order.iter().take(k) {
        let x = unvec(&v.column(i).into_owned(), d, d)?;
        let herm = [densela::hermitian_part(&x), (&x - x.adjoint()).scale(0.5) * c64::new(0.0, -1.0)];
        for h in herm {
            if max_abs(&h) < 1e-8 {
                continue;
            }
            let (w, u) = eigh(&h);
            for sign in [1.0, -1.0] {
                let mut part = ComplexMatrix::zeros(d, d);
                for (j, &l) in w.iter().enumerate() {
                    if sign * l > 1e-12 {
                        let col = u.column(j);
                        part += (col * col.adjoint()).scale(sign * l);
                    }
                }
                let t = trace(&part).re;
                if t > 1e-8 {
                    candidates.push(part.unscale(t));
                }
            }
        }
    }
    // Greedy selection of linearly independent candidates.
    let mut chosen: Vec<ComplexMatrix> = vec![];
    for c in candidates {
        let mut stack = ComplexMatrix::zeros(d * d, chosen.len() + 1);
        for (j, m) in chosen.iter().chain(std::iter::once(&c)).enumerate() {
            stack.set_column(j, &vec(m));
        }
        if range_basis(&stack, 1e-7).ncols() == chosen.len() + 1 {
            chosen.push(c);
        }
        if chosen.len() == k {
            break;
        }
    }
    let mut out = vec![];
    for m in chosen {
        let fixed = densela::trace_norm(&(phi.apply(&m) - &m));
        if fixed > tol.fixed_point_tol.max(1e-9) * 10.0 {
            continue;
        }
        out.push(DensityMatrix { matrix: densela::hermitian_part(&m) });
    }
    if out.is_empty() {
        return Err(Error::NoInvariantState);
    }
    Ok(out)
}

/// Unique faithful invariant state criterion for irreducibility.
pub fn is_irreducible(phi: &KrausMap) -> bool {
    let tol = Tolerances::default();
    match fixed_cluster(phi, tol.fixed_point_tol) {
        Ok((1, gap)) if gap > tol.fixed_point_tol => {}
        _ => return false,
    }
    match invariant_states(phi) {
        Ok(states) if states.len() == 1 => {
            let (w, _) = eigh(states[0].matrix());
            w[0] >= tol.faithful_tol
        }
        _ => false,
    }
}

/// Smallest subspace containing `ran(v)` and invariant under every Kraus operator
/// (the minimal enclosure). Returns an isometry.
pub fn relevant_subspace(phi: &KrausMap, v: &ComplexMatrix) -> ComplexMatrix {
    let cut = Tolerances::default().rank_tol;
    let mut w = range_basis(v, cut);
    for _ in 0..=phi.dim {
        let mut stack = ComplexMatrix::zeros(phi.dim, w.ncols() * (1 + phi.kraus.len()));
        stack.view_mut((0, 0), (phi.dim, w.ncols())).copy_from(&w);
        for (i, b) in phi.kraus.iter().enumerate() {
            stack
                .view_mut((0, (i + 1) * w.ncols()), (phi.dim, w.ncols()))
                .copy_from(&(b * &w));
        }
        let next = range_basis(&stack, cut);
        if next.ncols() == w.ncols() {
            return w;
        }
        w = next;
    }
    w
}

/// Kernel of `Φ̂ − I` as an isometry (used for fixed-space dimension checks).
pub fn fixed_space(phi: &KrausMap) -> ComplexMatrix {
    let d = phi.dim;
    null_space(&(phi.to_superop().matrix - identity(d * d)), 1e-9)
}
