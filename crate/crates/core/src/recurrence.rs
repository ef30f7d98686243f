//! Monitored recurrence: after each application of the channel a projective
//! measurement asks whether the system is back in the return subspace `ℋ₀`.
//!
//! Everything is phrased through the resolvent `R(z) = (I − z𝕢Φ)⁻¹` with the
//! superprojectors `𝕡 = P·P` and `𝕢 = Q·Q`:
//!
//! - Schur function `f(z) = (I−𝕢) Φ R(z) (I−𝕢)`
//! - reduced Schur function `𝔽(z) = 𝕡 Φ R(z) 𝕡`
//! - return probability `π = Tr 𝔽(1)ρ`, expected return time `τ = 1 + Tr 𝔽′(1)ρ`
//!
//! At `z = 1` the resolvent is solved directly when `I − 𝕢Φ` is well conditioned;
//! otherwise the limit `x ↑ 1` is taken on the grid `x_k = 1 − 2⁻ᵏ` with Aitken's
//! Δ² acceleration.

use crate::channels::{self, KrausMap};
use crate::config::Tolerances;
use crate::densela::{
    c64, identity, kron, max_abs, min_singular_value, solve_checked, trace_norm, unvec, vec,
    ComplexMatrix, ComplexVector, ONE, ZERO,
};
use crate::error::{Error, Result};
use crate::tom::{Tom, TomDensity};

/// The return subspace `ℋ₀`.
#[derive(Debug, Clone, PartialEq)]
pub enum SubspaceSpec {
    /// Columns of `isometry` form an orthonormal basis of `ℋ₀` inside the full space.
    General { isometry: ComplexMatrix },
    /// `ℋ₀ = ⊕ᵢ ran(Pᵢ) ⊗ |i⟩`, one projector per vertex (zero for unmonitored vertices).
    Admissible { projectors: Vec<ComplexMatrix> },
}

impl SubspaceSpec {
    /// Full monitoring of the listed vertices.
    pub fn sites(n: usize, d: usize, sites: &[usize]) -> Self {
        SubspaceSpec::Admissible {
            projectors: (0..n)
                .map(|i| if sites.contains(&i) { identity(d) } else { ComplexMatrix::zeros(d, d) })
                .collect(),
        }
    }

    /// Span of one (normalized) vector.
    pub fn pure(psi: &ComplexVector) -> Self {
        let p = psi.unscale(psi.norm());
        SubspaceSpec::General { isometry: ComplexMatrix::from_column_slice(p.len(), 1, p.as_slice()) }
    }

    /// Orthonormalized span of the given vectors.
    pub fn span(vectors: &[ComplexVector]) -> Self {
        let d = vectors.first().map_or(0, |v| v.len());
        let m = ComplexMatrix::from_fn(d, vectors.len(), |i, j| vectors[j][i]);
        SubspaceSpec::General { isometry: crate::densela::range_basis(&m, 1e-12) }
    }

    pub fn validate(&self) -> Result<()> {
        let tol = Tolerances::default().projector_tol;
        match self {
            SubspaceSpec::General { isometry } => {
                let k = isometry.ncols();
                if k == 0 {
                    return Err(Error::NotProjector("empty subspace".into()));
                }
                let r = max_abs(&(isometry.adjoint() * isometry - identity(k)));
                if r > tol {
                    return Err(Error::NotProjector(format!("V*V − I has max entry {r:.3e}")));
                }
            }
            SubspaceSpec::Admissible { projectors } => {
                for (i, p) in projectors.iter().enumerate() {
                    let r = max_abs(&(p * p - p)).max(max_abs(&(p - p.adjoint())));
                    if r > tol {
                        return Err(Error::NotProjector(format!("projector at vertex {i}: residual {r:.3e}")));
                    }
                }
                if projectors.iter().all(|p| max_abs(p) == 0.0) {
                    return Err(Error::NotProjector("empty subspace".into()));
                }
            }
        }
        Ok(())
    }

    /// Projector `P` on the full space (`ℋ`, or `ℋ⊗𝒮` in the admissible case).
    pub fn projector(&self) -> ComplexMatrix {
        match self {
            SubspaceSpec::General { isometry } => isometry * isometry.adjoint(),
            SubspaceSpec::Admissible { projectors } => {
                let n = projectors.len();
                let mut p = ComplexMatrix::zeros(0, 0);
                for (i, pi) in projectors.iter().enumerate() {
                    let mut e = ComplexMatrix::zeros(n, n);
                    e[(i, i)] = ONE;
                    let term = kron(pi, &e);
                    p = if p.is_empty() { term } else { p + term };
                }
                p
            }
        }
    }

    /// `dim ℋ₀`.
    pub fn dim(&self) -> usize {
        match self {
            SubspaceSpec::General { isometry } => isometry.ncols(),
            SubspaceSpec::Admissible { projectors } => {
                projectors.iter().map(|p| crate::densela::trace(p).re.round() as usize).sum()
            }
        }
    }
}

/// `P`, `Q = I − P` and their superprojectors on row-major vectorized operators.
#[derive(Debug, Clone)]
pub struct MonitorProjectors {
    pub p: ComplexMatrix,
    pub q: ComplexMatrix,
    pub pp: ComplexMatrix,
    pub qq: ComplexMatrix,
}

/// Projectors on the full space for a return subspace.
pub fn projectors(h0: &SubspaceSpec) -> Result<MonitorProjectors> {
    h0.validate()?;
    let p = h0.projector();
    let q = identity(p.nrows()) - &p;
    let pp = kron(&p, &p.map(|z| z.conj()));
    let qq = kron(&q, &q.map(|z| z.conj()));
    Ok(MonitorProjectors { p, q, pp, qq })
}

/// How the vectorized state space maps back to operators.
#[derive(Debug, Clone, PartialEq)]
enum Layout {
    /// `vec` of one operator on `ℂᵈ`; `embed` maps the (possibly restricted)
    /// space into the user's Hilbert space.
    Operator { d: usize, embed: Option<ComplexMatrix> },
    /// Stacked per-vertex blocks of a TOM.
    Sites { n: usize, d: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    DirectSolve,
    Extrapolated,
    ClosedForm,
    Truncation,
    MonteCarlo,
}

/// Whether the limit `z → 1` may use a direct solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LimitPolicy {
    #[default]
    Auto,
    ForceExtrapolate,
}

/// Raw limits at `z = 1` before classification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitValues {
    pub pi: f64,
    /// `Σ n πₙ`, or `∞` once detected as divergent.
    pub tau: f64,
    pub method: Method,
    pub min_singular_value: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct RecurrenceReport {
    pub pi: f64,
    #[serde(serialize_with = "crate::report::ser_f64")]
    pub tau: f64,
    pub recurrent: bool,
    pub positive_recurrent: bool,
    pub first_return: Vec<f64>,
    pub survival: Vec<f64>,
    pub method: Method,
    pub min_singular_value: f64,
}

impl RecurrenceReport {
    pub fn from_limits(lv: LimitValues, first_return: Vec<f64>, survival: Vec<f64>, tol: &Tolerances) -> Self {
        let recurrent = 1.0 - lv.pi <= tol.recurrence_tol;
        let tau = if recurrent { lv.tau } else { f64::INFINITY };
        RecurrenceReport {
            pi: lv.pi,
            tau,
            recurrent,
            positive_recurrent: recurrent && tau.is_finite(),
            first_return,
            survival,
            method: lv.method,
            min_singular_value: lv.min_singular_value,
        }
    }
}

/// A channel (or TOM) together with its monitoring projections, in vectorized form.
#[derive(Debug, Clone)]
pub struct MonitoredSystem {
    transfer: ComplexMatrix,
    keep: ComplexMatrix,
    skip: ComplexMatrix,
    trace_row: ComplexVector,
    layout: Layout,
    p_full: ComplexMatrix,
    q_full: ComplexMatrix,
    h0_dim: usize,
    trace_preserving: bool,
    /// Same problem restricted to the minimal enclosure of `ℋ₀`, when smaller.
    enclosure: Option<Box<MonitoredSystem>>,
    pub tol: Tolerances,
}

fn trace_row(d: usize) -> ComplexVector {
    ComplexVector::from_fn(d * d, |k, _| if k / d == k % d { ONE } else { ZERO })
}

impl MonitoredSystem {
    /// Channel `Φ` on `ℂᵈ` with return subspace given by an isometry.
    pub fn for_channel(phi: &KrausMap, h0: &SubspaceSpec) -> Result<Self> {
        let SubspaceSpec::General { isometry } = h0 else {
            return Err(Error::Invalid("admissible subspaces need a TOM".into()));
        };
        if isometry.nrows() != phi.dim() {
            return Err(Error::DimensionMismatch(format!(
                "subspace lives in dimension {}, channel in {}",
                isometry.nrows(),
                phi.dim()
            )));
        }
        let mut sys = Self::build_channel(phi, h0, None)?;
        let w = channels::relevant_subspace(phi, isometry);
        if w.ncols() < phi.dim() {
            let kraus = phi.kraus().iter().map(|b| w.adjoint() * b * &w).collect();
            let restricted = KrausMap::new(w.ncols(), kraus)?;
            let v = w.adjoint() * isometry;
            let sub = Self::build_channel(&restricted, &SubspaceSpec::General { isometry: v }, Some(w))?;
            sys.enclosure = Some(Box::new(sub));
        }
        Ok(sys)
    }

    fn build_channel(phi: &KrausMap, h0: &SubspaceSpec, embed: Option<ComplexMatrix>) -> Result<Self> {
        let pr = projectors(h0)?;
        let d = phi.dim();
        Ok(MonitoredSystem {
            transfer: phi.to_superop().matrix,
            keep: pr.pp,
            skip: pr.qq,
            trace_row: trace_row(d),
            layout: Layout::Operator { d, embed },
            p_full: pr.p,
            q_full: pr.q,
            h0_dim: h0.dim(),
            trace_preserving: phi.is_trace_preserving(),
            enclosure: None,
            tol: Tolerances::default(),
        })
    }

    /// TOM with an admissible subspace (block representation) or a general one
    /// (through the CPTP embedding on `ℋ⊗𝒮`).
    pub fn for_tom(t: &Tom, h0: &SubspaceSpec) -> Result<Self> {
        match h0 {
            SubspaceSpec::General { .. } => Self::for_channel(&t.embed_cptp(), h0),
            SubspaceSpec::Admissible { projectors: ps } => {
                if ps.len() != t.n() || ps.iter().any(|p| p.shape() != (t.dim(), t.dim())) {
                    return Err(Error::DimensionMismatch(format!(
                        "need {} projectors of size {}",
                        t.n(),
                        t.dim()
                    )));
                }
                let pr = projectors(h0)?;
                let (n, d) = (t.n(), t.dim());
                let d2 = d * d;
                let mut keep = ComplexMatrix::zeros(n * d2, n * d2);
                let mut skip = ComplexMatrix::zeros(n * d2, n * d2);
                let mut row = ComplexVector::zeros(n * d2);
                for (i, p) in ps.iter().enumerate() {
                    let q = identity(d) - p;
                    keep.view_mut((i * d2, i * d2), (d2, d2)).copy_from(&kron(p, &p.map(|z| z.conj())));
                    skip.view_mut((i * d2, i * d2), (d2, d2)).copy_from(&kron(&q, &q.map(|z| z.conj())));
                    row.rows_mut(i * d2, d2).copy_from(&trace_row(d));
                }
                let report = t.validate();
                Ok(MonitoredSystem {
                    transfer: t.block_superop(),
                    keep,
                    skip,
                    trace_row: row,
                    layout: Layout::Sites { n, d },
                    p_full: pr.p,
                    q_full: pr.q,
                    h0_dim: h0.dim(),
                    trace_preserving: report.column_residuals.iter().all(|&r| r <= 1e-9),
                    enclosure: None,
                    tol: Tolerances::default(),
                })
            }
        }
    }

    /// Size of the vectorized state space.
    pub fn size(&self) -> usize {
        self.transfer.nrows()
    }

    pub fn subspace_dim(&self) -> usize {
        self.h0_dim
    }

    /// Projector `P` on the full Hilbert space.
    pub fn projector(&self) -> &ComplexMatrix {
        &self.p_full
    }

    /// How vectors of this system are laid out: `site-blocks`, `full-operator`
    /// or `restricted-operator`.
    pub fn layout_name(&self) -> &'static str {
        match &self.layout {
            Layout::Sites { .. } => "site-blocks",
            Layout::Operator { embed: None, .. } => "full-operator",
            Layout::Operator { embed: Some(_), .. } => "restricted-operator",
        }
    }

    pub fn transfer(&self) -> &ComplexMatrix {
        &self.transfer
    }

    pub fn keep(&self) -> &ComplexMatrix {
        &self.keep
    }

    pub fn skip(&self) -> &ComplexMatrix {
        &self.skip
    }

    pub fn trace_row(&self) -> &ComplexVector {
        &self.trace_row
    }

    /// Vectorizes an operator on the full Hilbert space, checking `‖QρQ‖₁`.
    pub fn state_vector(&self, rho: &ComplexMatrix) -> Result<ComplexVector> {
        if rho.shape() != self.p_full.shape() {
            return Err(Error::DimensionMismatch(format!(
                "state is {}x{}, Hilbert space has dimension {}",
                rho.nrows(),
                rho.ncols(),
                self.p_full.nrows()
            )));
        }
        let out = trace_norm(&(&self.q_full * rho * &self.q_full));
        if out > self.tol.support_tol {
            return Err(Error::StateOutsideSubspace(out));
        }
        Ok(self.vectorize(rho))
    }

    /// Vectorizes without the support check.
    pub fn vectorize(&self, rho: &ComplexMatrix) -> ComplexVector {
        match &self.layout {
            Layout::Operator { embed: None, .. } => vec(rho),
            Layout::Operator { embed: Some(w), .. } => vec(&(w.adjoint() * rho * w)),
            Layout::Sites { n, d } => TomDensity::from_full(rho, *n, *d).expect("checked shape").stacked(),
        }
    }

    /// Operator on the full Hilbert space for a vector of this system.
    pub fn devectorize(&self, v: &ComplexVector) -> ComplexMatrix {
        match &self.layout {
            Layout::Operator { d, embed: None } => unvec(v, *d, *d).expect("consistent"),
            Layout::Operator { d, embed: Some(w) } => w * unvec(v, *d, *d).expect("consistent") * w.adjoint(),
            Layout::Sites { n, d } => TomDensity::from_stacked(v, *n, *d).to_full(),
        }
    }

    /// Linear functional `X ↦ Tr(A X)` on vectorized operators.
    pub fn functional(&self, a: &ComplexMatrix) -> ComplexVector {
        let a = match &self.layout {
            Layout::Operator { embed: Some(w), .. } => w.adjoint() * a * w,
            _ => a.clone(),
        };
        match &self.layout {
            Layout::Operator { d, .. } => {
                let d = *d;
                ComplexVector::from_fn(d * d, |k, _| a[(k % d, k / d)])
            }
            Layout::Sites { n, d } => {
                let (n, d) = (*n, *d);
                ComplexVector::from_fn(n * d * d, |k, _| {
                    let (s, r) = (k / (d * d), k % (d * d));
                    let (x, y) = (r / d, r % d);
                    a[(y * n + s, x * n + s)]
                })
            }
        }
    }

    fn tr(&self, v: &ComplexVector) -> c64 {
        self.trace_row.dot(v)
    }

    fn resolvent_matrix(&self, z: c64) -> ComplexMatrix {
        identity(self.size()) - (&self.skip * &self.transfer).scale(1.0) * z
    }

    /// `R(z)·B`, refusing near-singular resolvents on the unit circle.
    fn resolvent_solve(&self, z: c64, b: &ComplexMatrix) -> Result<ComplexMatrix> {
        let a = self.resolvent_matrix(z);
        if z.norm() >= 1.0 - 1e-15 {
            let s = min_singular_value(&a);
            if s < self.tol.resolvent_min_sv {
                return Err(Error::ResolventSingular(s));
            }
        }
        Ok(solve_checked(&a, b, &self.tol)?.x)
    }

    /// `f(z) = (I−𝕢) Φ R(z) (I−𝕢)`.
    pub fn schur_eval(&self, z: c64) -> Result<ComplexMatrix> {
        let iq = identity(self.size()) - &self.skip;
        let r = self.resolvent_solve(z, &iq)?;
        Ok(&iq * &self.transfer * r)
    }

    /// `𝔽(z) = 𝕡 Φ R(z) 𝕡`.
    pub fn reduced_schur_eval(&self, z: c64) -> Result<ComplexMatrix> {
        let r = self.resolvent_solve(z, &self.keep)?;
        Ok(&self.keep * &self.transfer * r)
    }

    /// `𝔸ₙ = 𝕡 Φ (𝕢Φ)ⁿ⁻¹ 𝕡`.
    pub fn first_return_coeff(&self, n: usize) -> ComplexMatrix {
        assert!(n >= 1);
        let qphi = &self.skip * &self.transfer;
        let mut m = self.keep.clone();
        for _ in 1..n {
            m = &qphi * m;
        }
        &self.keep * &self.transfer * m
    }

    /// `πₙ(ρ)` for `n = 1..=k`.
    pub fn first_return_series(&self, r: &ComplexVector, k: usize) -> Vec<f64> {
        let qphi = &self.skip * &self.transfer;
        let pphi = &self.keep * &self.transfer;
        let mut v = &self.keep * r;
        let mut out = Vec::with_capacity(k);
        for _ in 0..k {
            out.push(self.tr(&(&pphi * &v)).re);
            v = &qphi * v;
        }
        out
    }

    /// `sₙ(ρ) = Tr((𝕢Φ)ⁿρ)` for `n = 0..=k`.
    pub fn survival_series(&self, r: &ComplexVector, k: usize) -> Vec<f64> {
        let qphi = &self.skip * &self.transfer;
        let mut v = r.clone();
        let mut out = Vec::with_capacity(k + 1);
        out.push(self.tr(&v).re);
        for _ in 0..k {
            v = &qphi * v;
            out.push(self.tr(&v).re);
        }
        out
    }

    /// Active system for limit computations (the enclosure restriction when available).
    fn active(&self) -> &MonitoredSystem {
        self.enclosure.as_deref().unwrap_or(self)
    }

    /// Limits `π` and `τ` at `z = 1` for a vectorized state of this system.
    pub fn limit_values(&self, rho: &ComplexMatrix, policy: LimitPolicy) -> Result<LimitValues> {
        self.state_vector(rho)?;
        let sys = self.active();
        let r = sys.vectorize(rho);
        let pphi_row = (sys.trace_row.transpose() * &sys.keep * &sys.transfer).transpose();
        sys.limits_with(&r, &pphi_row, policy)
    }

    /// Shared solve/extrapolate engine: `w·R(1)r` style limits with the
    /// observation row `obs` (usually `Tr 𝕡Φ ·`).
    fn limits_with(&self, r: &ComplexVector, obs: &ComplexVector, policy: LimitPolicy) -> Result<LimitValues> {
        let a1 = self.resolvent_matrix(ONE);
        let smin = min_singular_value(&a1);
        let qphi = &self.skip * &self.transfer;
        let rm = ComplexMatrix::from_column_slice(r.len(), 1, r.as_slice());
        if policy == LimitPolicy::Auto && smin >= self.tol.resolvent_min_sv {
            if let Ok(sol) = solve_checked(&a1, &rm, &self.tol) {
                let y = sol.x.column(0).into_owned();
                let pi = obs.dot(&y).re;
                let tau = if self.trace_preserving {
                    self.tr(&y).re
                } else {
                    let z = solve_checked(&a1, &(&qphi * &sol.x), &self.tol)?.x.column(0).into_owned();
                    pi + obs.dot(&z).re
                };
                let tau = if tau > self.tol.tau_infinite { f64::INFINITY } else { tau };
                return Ok(LimitValues { pi, tau, method: Method::DirectSolve, min_singular_value: smin });
            }
        }
        let (k0, k1) = self.tol.extrapolation_k;
        let mut fs = vec![];
        let mut ds = vec![];
        for k in k0..=k1 {
            let x = 1.0 - (2f64).powi(-(k as i32));
            let a = self.resolvent_matrix(c64::new(x, 0.0));
            let Ok(sol) = solve_checked(&a, &rm, &self.tol) else { break };
            let y = &sol.x;
            fs.push(obs.dot(&y.column(0)).re);
            match solve_checked(&a, &(&qphi * y), &self.tol) {
                Ok(z) => ds.push(obs.dot(&z.x.column(0)).re),
                Err(_) => ds.push(f64::INFINITY),
            }
        }
        if fs.len() < 3 {
            return Err(Error::NoConvergence("resolvent grid too short for extrapolation".into()));
        }
        let pi = aitken_tail(&fs);
        let diverges = ds.iter().any(|&v| !v.is_finite() || v > self.tol.tau_infinite);
        let tau = if pi < 1.0 - self.tol.recurrence_tol || diverges {
            f64::INFINITY
        } else {
            let d = aitken_tail(&ds);
            if d > self.tol.tau_infinite { f64::INFINITY } else { pi + d }
        };
        Ok(LimitValues { pi, tau, method: Method::Extrapolated, min_singular_value: smin })
    }

    /// Full report with the first `terms` first-return and survival probabilities.
    pub fn report(&self, rho: &ComplexMatrix, terms: usize, policy: LimitPolicy) -> Result<RecurrenceReport> {
        let lv = self.limit_values(rho, policy)?;
        let r = self.vectorize(rho);
        Ok(RecurrenceReport::from_limits(
            lv,
            self.first_return_series(&r, terms),
            self.survival_series(&r, terms),
            &self.tol,
        ))
    }

    /// `𝔽(1)(ρ)` as an operator on the full space, by direct solve or by Aitken
    /// extrapolation of each entry along `x_k = 1 − 2⁻ᵏ`.
    pub fn reduced_schur_apply_at_one(&self, rho: &ComplexMatrix) -> Result<ComplexMatrix> {
        let sys = self.active();
        let r = &sys.keep * sys.vectorize(rho);
        let rm = ComplexMatrix::from_column_slice(r.len(), 1, r.as_slice());
        let pphi = &sys.keep * &sys.transfer;
        let a1 = sys.resolvent_matrix(ONE);
        if min_singular_value(&a1) >= sys.tol.resolvent_min_sv {
            if let Ok(sol) = solve_checked(&a1, &rm, &sys.tol) {
                return Ok(sys.devectorize(&(&pphi * sol.x.column(0))));
            }
        }
        let (k0, k1) = sys.tol.extrapolation_k;
        let mut seq: Vec<ComplexVector> = vec![];
        for k in k0..=k1 {
            let x = 1.0 - (2f64).powi(-(k as i32));
            match solve_checked(&sys.resolvent_matrix(c64::new(x, 0.0)), &rm, &sys.tol) {
                Ok(sol) => seq.push(&pphi * sol.x.column(0)),
                Err(_) => break,
            }
        }
        if seq.len() < 3 {
            return Err(Error::NoConvergence("resolvent grid too short for extrapolation".into()));
        }
        let n = seq.len();
        let out = ComplexVector::from_fn(r.len(), |i, _| {
            let re: Vec<f64> = seq[n - 3..].iter().map(|v| v[i].re).collect();
            let im: Vec<f64> = seq[n - 3..].iter().map(|v| v[i].im).collect();
            c64::new(aitken_tail(&re), aitken_tail(&im))
        });
        Ok(sys.devectorize(&out))
    }

    /// Limit of `Tr(R(x) v)` as `x ↑ 1` for an arbitrary operator `v` (not necessarily a state).
    pub fn resolvent_trace_limit(&self, v: &ComplexMatrix) -> Result<f64> {
        let sys = self.active();
        let r = sys.vectorize(v);
        // Tr(R(x)v) = Tr(v) + Tr(𝕢Φ R(x) v): reuse the engine with observation row Tr(𝕢Φ ·).
        let obs = (sys.trace_row.transpose() * &sys.skip * &sys.transfer).transpose();
        let lv = sys.limits_with(&r, &obs, LimitPolicy::Auto)?;
        Ok(sys.tr(&r).re + lv.pi)
    }

    /// Limit of `⟨ψ|𝔽(x)(ρ)ψ⟩` as `x ↑ 1`.
    pub fn landing_probability(&self, rho: &ComplexMatrix, psi: &ComplexVector) -> Result<f64> {
        self.state_vector(rho)?;
        let sys = self.active();
        let r = sys.vectorize(rho);
        let proj = psi * psi.adjoint();
        let w = sys.functional(&proj);
        let obs = (w.transpose() * &sys.keep * &sys.transfer).transpose();
        Ok(sys.limits_with(&r, &obs, LimitPolicy::Auto)?.pi)
    }

    /// `Σ_{n≤N} Tr(𝕡Φⁿ𝕡ρ)` partial sums. The series is flagged as diverging
    /// when it exceeds 10 while still growing by at least 1% per step on its
    /// second half.
    pub fn polya_series(&self, rho: &ComplexMatrix, n_max: usize) -> PolyaSeries {
        let mut v = &self.keep * self.vectorize(rho);
        let mut sums = Vec::with_capacity(n_max);
        let mut acc = 0.0;
        for _ in 0..n_max {
            v = &self.transfer * v;
            acc += self.tr(&(&self.keep * &v)).re;
            sums.push(acc);
        }
        let diverging = n_max >= 4 && {
            let half = n_max / 2;
            let growth = (sums[n_max - 1] - sums[half - 1]) / (n_max - half) as f64;
            sums[n_max - 1] > 10.0 && growth > 0.01
        };
        PolyaSeries { partial_sums: sums, diverging }
    }
}

/// Partial sums of the Pólya series with a heuristic divergence flag.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyaSeries {
    pub partial_sums: Vec<f64>,
    pub diverging: bool,
}

/// Aitken Δ² applied to the last three entries.
fn aitken_tail(s: &[f64]) -> f64 {
    let n = s.len();
    let (a, b, c) = (s[n - 3], s[n - 2], s[n - 1]);
    let d1 = b - a;
    let d2 = c - b;
    let den = d2 - d1;
    if !den.is_finite() || den.abs() <= 1e-300 {
        return c;
    }
    c - d2 * d2 / den
}

/// `π(ρ → ℋ₀)`.
pub fn return_probability(sys: &MonitoredSystem, rho: &ComplexMatrix) -> Result<f64> {
    Ok(sys.limit_values(rho, LimitPolicy::Auto)?.pi)
}

/// `τ(ρ → ℋ₀)`, infinite when the return probability has a deficit.
pub fn expected_return_time(sys: &MonitoredSystem, rho: &ComplexMatrix) -> Result<f64> {
    let lv = sys.limit_values(rho, LimitPolicy::Auto)?;
    Ok(if 1.0 - lv.pi > sys.tol.recurrence_tol { f64::INFINITY } else { lv.tau })
}

/// `Tr((I−𝕢Φ)⁻¹ P)/dim ℋ₀`, the return time averaged over `ℋ₀`.
pub fn averaged_return_time(sys: &MonitoredSystem) -> Result<f64> {
    let rho = sys.projector().unscale(sys.subspace_dim() as f64);
    expected_return_time(sys, &rho)
}

/// Result of [`unital_quantization_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizationCheck {
    pub enclosure_dim: usize,
    pub subspace_dim: usize,
    pub predicted: f64,
    pub computed: f64,
    pub agrees: bool,
}

/// Checks `τ(ℋ₀→ℋ₀) = dim ℋ̃₀ / dim ℋ₀` for channels unital on the enclosure.
pub fn unital_quantization_check(phi: &KrausMap, h0: &SubspaceSpec) -> Result<QuantizationCheck> {
    let SubspaceSpec::General { isometry } = h0 else {
        return Err(Error::Invalid("quantization check expects a general subspace".into()));
    };
    let w = channels::relevant_subspace(phi, isometry);
    let restricted = KrausMap::new(w.ncols(), phi.kraus().iter().map(|b| w.adjoint() * b * &w).collect())?;
    let res = restricted.unital_residual();
    if res > Tolerances::default().tp_tol {
        return Err(Error::NotUnitalOnEnclosure(res));
    }
    let sys = MonitoredSystem::for_channel(phi, h0)?;
    let computed = averaged_return_time(&sys)?;
    let predicted = w.ncols() as f64 / isometry.ncols() as f64;
    Ok(QuantizationCheck {
        enclosure_dim: w.ncols(),
        subspace_dim: isometry.ncols(),
        predicted,
        computed,
        agrees: (computed - predicted).abs() <= 1e-8 * predicted.max(1.0),
    })
}

/// `1/⟨ψ|χψ⟩`.
pub fn kac_ideal(chi: &ComplexMatrix, psi: &ComplexVector) -> Result<f64> {
    let psi = psi.unscale(psi.norm());
    let w = psi.dotc(&(chi * &psi)).re;
    if w <= 1e-12 {
        return Err(Error::Invalid(format!("⟨ψ|χψ⟩ = {w:.3e} is not positive")));
    }
    Ok(1.0 / w)
}

/// Kac's formula with its correction factor.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct KacResult {
    pub ideal: f64,
    pub correction: f64,
    pub tau: f64,
}

/// `τ(ψ→ψ) = (1/⟨ψ|χψ⟩)·(1 − Tr((I−𝕢Φ)⁻¹ φ_ψ))` with `φ_ψ = Qχρ_ψ + ρ_ψχQ`.
pub fn kac_correction(phi: &KrausMap, chi: &ComplexMatrix, psi: &ComplexVector) -> Result<KacResult> {
    let drift = trace_norm(&(phi.apply(chi) - chi));
    if drift > Tolerances::default().invariance_tol {
        return Err(Error::NotInvariant(drift));
    }
    let psi = psi.unscale(psi.norm());
    let ideal = kac_ideal(chi, &psi)?;
    let rho = &psi * psi.adjoint();
    let q = identity(psi.len()) - &rho;
    let phi_psi = &q * chi * &rho + &rho * chi * &q;
    let sys = MonitoredSystem::for_channel(phi, &SubspaceSpec::pure(&psi))?;
    let correction = 1.0 - sys.resolvent_trace_limit(&phi_psi)?;
    Ok(KacResult { ideal, correction, tau: ideal * correction })
}

/// Kac's lemma at a vertex: the stationary block `χᵢ` returns in mean time `1/Tr χᵢ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KacSite {
    pub weight: f64,
    pub kac: f64,
    pub tau: f64,
}

pub fn kac_site(t: &Tom, site: usize) -> Result<KacSite> {
    let emb = t.embed_cptp();
    if !channels::is_irreducible(&emb) {
        return Err(Error::NotIrreducible);
    }
    let chi = channels::invariant_states(&emb)?.remove(0);
    let blocks = t.block_diagonal_part(chi.matrix())?;
    let chi_i = blocks.blocks[site].clone();
    let weight = crate::densela::trace(&chi_i).re;
    let rho = TomDensity::at_site(t.n(), site, chi_i.unscale(weight)).to_full();
    let sys = MonitoredSystem::for_tom(t, &SubspaceSpec::sites(t.n(), t.dim(), &[site]))?;
    let tau = expected_return_time(&sys, &rho)?;
    Ok(KacSite { weight, kac: 1.0 / weight, tau })
}
