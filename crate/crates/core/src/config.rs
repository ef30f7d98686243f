//! Numerical tolerances shared by every module.

/// All thresholds used by the library, gathered in one record.
///
/// `Tolerances::default()` carries the values the algorithms were tuned for.
/// Callers rarely need to change them; they exist so that every cut-off is
/// visible and adjustable in one place.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// `solve` refuses systems whose condition estimate exceeds this.
    pub max_condition: f64,
    /// Eigenvectors with condition below this are used for the matrix square root.
    pub sqrt_eigvec_condition: f64,
    /// Denman-Beavers iteration cap.
    pub sqrt_max_iter: usize,
    /// Max-norm tolerance for trace preservation and unitality.
    pub tp_tol: f64,
    /// Smallest Choi eigenvalue still accepted as completely positive.
    pub cp_tol: f64,
    /// Weights in a convex combination must sum to one within this.
    pub weight_sum_tol: f64,
    /// Eigenvalues this close to 1 belong to the fixed-point cluster.
    pub fixed_point_tol: f64,
    /// Minimal eigenvalue of a faithful invariant state.
    pub faithful_tol: f64,
    /// Singular-value cut-off for rank decisions.
    pub rank_tol: f64,
    /// Hermiticity / idempotence tolerance for projectors and isometries.
    pub projector_tol: f64,
    /// Below this smallest singular value of `I - QΦ` the limit path is used.
    pub resolvent_min_sv: f64,
    /// First and last grid exponent `k` for `x_k = 1 - 2^-k`.
    pub extrapolation_k: (u32, u32),
    /// Return probabilities below `1 - recurrence_tol` are deficits.
    pub recurrence_tol: f64,
    /// Expected return times above this are reported as infinite.
    pub tau_infinite: f64,
    /// Maximal trace norm of `QρQ` for a state supported in the subspace.
    pub support_tol: f64,
    /// Invariance tolerance for Kac's formula.
    pub invariance_tol: f64,
    /// Tolerance for asserting splitting identities.
    pub split_tol: f64,
    /// Superoperator Frobenius distance for identifying rank-one columns.
    pub rank1_tol: f64,
    /// Reconstruction tolerance for decompositions and factorizations.
    pub reconstruction_tol: f64,
    /// Truncation stopping rule `|π_N - π_2N| <` this.
    pub truncation_tol: f64,
    /// Largest truncation window.
    pub truncation_max: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            max_condition: 1e14,
            sqrt_eigvec_condition: 1e8,
            sqrt_max_iter: 100,
            tp_tol: 1e-9,
            cp_tol: 1e-9,
            weight_sum_tol: 1e-12,
            fixed_point_tol: 1e-9,
            faithful_tol: 1e-10,
            rank_tol: 1e-10,
            projector_tol: 1e-10,
            resolvent_min_sv: 1e-10,
            extrapolation_k: (8, 40),
            recurrence_tol: 1e-7,
            tau_infinite: 1e12,
            support_tol: 1e-9,
            invariance_tol: 1e-8,
            split_tol: 1e-7,
            rank1_tol: 1e-8,
            reconstruction_tol: 1e-10,
            truncation_tol: 1e-6,
            truncation_max: 4096,
        }
    }
}
