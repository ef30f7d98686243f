//! Overlapping decompositions and factorizations of TOMs, and the splitting
//! rules they induce on return probabilities and expected return times.
//!
//! A partition `V = V₋ ∪ V₀ ∪ V₊` splits a TOM into a left part on `V₋ ∪ V₀` and
//! a right part on `V₀ ∪ V₊` sharing the overlap `V₀`:
//!
//! - decomposition: `ℰ = (ℰ_L⊕0) + (0⊕ℰ_R) − (0⊕ℰ₀⊕0)`, giving
//!   `π = π_L + π_R − 1` and `τ = τ_L + τ_R − 1`;
//! - factorization: `ℰ = (ℰ_L⊕I)(I⊕ℰ_R)`, giving `π = π_L(σ̂)·π_R` and
//!   `τ = τ_L(σ̂) + τ_R − 1` with `σ = f_R(1)(ρ)`.

use crate::channels::{KrausMap, SuperOperator};
use crate::config::Tolerances;
use crate::densela::{c64, frobenius, identity, max_abs, psd_pinv, psd_sqrt, ComplexMatrix};
use crate::error::{Error, Result};
use crate::recurrence::{LimitPolicy, MonitoredSystem, SubspaceSpec};
use crate::tom::{Tom, TomDensity};

/// Disjoint cover `V₋ ∪ V₀ ∪ V₊` of the vertex indices, `V₀` nonempty.
#[derive(Debug, Clone, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Partition {
    pub minus: Vec<usize>,
    pub zero: Vec<usize>,
    pub plus: Vec<usize>,
}

impl Partition {
    pub fn new(mut minus: Vec<usize>, mut zero: Vec<usize>, mut plus: Vec<usize>) -> Self {
        minus.sort_unstable();
        zero.sort_unstable();
        plus.sort_unstable();
        Partition { minus, zero, plus }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.zero.is_empty() {
            return Err(Error::InvalidPartition("empty overlap".into()));
        }
        let mut seen = vec![false; n];
        for &v in self.minus.iter().chain(&self.zero).chain(&self.plus) {
            if v >= n || seen[v] {
                return Err(Error::InvalidPartition(format!("vertex {v} out of range or repeated")));
            }
            seen[v] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidPartition("partition does not cover every vertex".into()));
        }
        Ok(())
    }

    /// `V₋ ∪ V₀` in increasing order.
    pub fn left(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.minus.iter().chain(&self.zero).copied().collect();
        v.sort_unstable();
        v
    }

    /// `V₀ ∪ V₊` in increasing order.
    pub fn right(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.zero.iter().chain(&self.plus).copied().collect();
        v.sort_unstable();
        v
    }

    pub fn swapped(&self) -> Self {
        Partition::new(self.plus.clone(), self.zero.clone(), self.minus.clone())
    }
}

/// `ℰᵢʲ = 0` whenever `i, j` lie on opposite sides of the overlap.
pub fn admits_decomposition(t: &Tom, p: &Partition) -> bool {
    p.validate(t.n()).is_ok()
        && p.minus.iter().all(|&i| p.plus.iter().all(|&j| !t.has_block(i, j) && !t.has_block(j, i)))
}

/// `ℰᵢʲ = 0` for `i ∈ V₊`, `j ∈ V₋`.
pub fn admits_factorization_shape(t: &Tom, p: &Partition) -> bool {
    p.validate(t.n()).is_ok() && p.plus.iter().all(|&i| p.minus.iter().all(|&j| !t.has_block(i, j)))
}

/// All partitions (up to exchanging left and right, with both sides nonempty)
/// whose zero pattern permits an overlapping decomposition. Exhaustive for up to 20 vertices.
pub fn detect_decompositions(t: &Tom) -> Result<Vec<Partition>> {
    let n = t.n();
    if n > 20 {
        return Err(Error::Invalid(format!(
            "exhaustive search limited to 20 vertices, got {n}; check candidates with admits_decomposition"
        )));
    }
    let mut adj = vec![vec![false; n]; n];
    for (&(i, j), _) in t.blocks() {
        if i != j {
            adj[i][j] = true;
            adj[j][i] = true;
        }
    }
    let mut out = vec![];
    for mask in 1u32..(1u32 << n) {
        let rest: Vec<usize> = (0..n).filter(|&v| mask & (1 << v) == 0).collect();
        if rest.len() < 2 {
            continue;
        }
        let comps = components(&rest, &adj);
        if comps.len() < 2 {
            continue;
        }
        let zero: Vec<usize> = (0..n).filter(|&v| mask & (1 << v) != 0).collect();
        let c = comps.len();
        // Component 0 always goes left, which removes the L/R swap duplicates.
        for sel in 0u64..(1u64 << (c - 1)) {
            if sel == (1u64 << (c - 1)) - 1 {
                continue;
            }
            let mut minus = comps[0].clone();
            let mut plus = vec![];
            for (k, comp) in comps.iter().enumerate().skip(1) {
                if sel & (1 << (k - 1)) != 0 {
                    minus.extend(comp);
                } else {
                    plus.extend(comp);
                }
            }
            out.push(Partition::new(minus, zero.clone(), plus));
        }
    }
    Ok(out)
}

fn components(vs: &[usize], adj: &[Vec<bool>]) -> Vec<Vec<usize>> {
    let mut seen = vec![false; adj.len()];
    let mut comps = vec![];
    for &s in vs {
        if seen[s] {
            continue;
        }
        let mut comp = vec![];
        let mut stack = vec![s];
        seen[s] = true;
        while let Some(v) = stack.pop() {
            comp.push(v);
            for &w in vs {
                if !seen[w] && adj[v][w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    comps
}

/// How the blocks leaving the overlap towards one side are redistributed over
/// the overlap vertices. Weights for each column must be nonnegative and sum to 1.
pub trait OverlapSplit {
    fn weights(&self, column: usize, overlap: &[usize]) -> Vec<f64>;
}

/// Equal share `1/|V₀|` for every overlap vertex.
#[derive(Debug, Clone, Copy, Default)]
pub struct EqualSplit;

impl OverlapSplit for EqualSplit {
    fn weights(&self, _column: usize, overlap: &[usize]) -> Vec<f64> {
        vec![1.0 / overlap.len() as f64; overlap.len()]
    }
}

#[derive(Debug, Clone)]
pub struct OverlapDecomposition {
    pub partition: Partition,
    /// On `V₋ ∪ V₀`, vertices in [`Partition::left`] order.
    pub left: Tom,
    /// On `V₀ ∪ V₊`, vertices in [`Partition::right`] order.
    pub right: Tom,
    /// On `V₀`.
    pub overlap: Tom,
}

#[derive(Debug, Clone)]
pub struct OverlapFactorization {
    pub partition: Partition,
    pub left: Tom,
    pub right: Tom,
}

fn pos(list: &[usize], v: usize) -> usize {
    list.iter().position(|&x| x == v).expect("vertex in list")
}

/// Builds `ℰ_L, ℰ_R, ℰ₀` by adding to the overlap blocks the maps that leave
/// the overlap towards the other side, distributed by `policy`.
pub fn build_decomposition(t: &Tom, p: &Partition, policy: &dyn OverlapSplit) -> Result<OverlapDecomposition> {
    if !admits_decomposition(t, p) {
        return Err(Error::InvalidPartition(
            "blocks connect the two sides of the overlap directly".into(),
        ));
    }
    let (lv, rv) = (p.left(), p.right());
    let d = t.dim();
    let mut left = t.restrict(&lv);
    let mut right = t.restrict(&rv);
    let mut overlap = t.restrict(&p.zero);
    for &j in &p.zero {
        let w = policy.weights(j, &p.zero);
        let total: f64 = w.iter().sum();
        if w.len() != p.zero.len() || w.iter().any(|&x| x < 0.0) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::BadWeights(format!("split weights for column {j}: {w:?}")));
        }
        let to_plus = KrausMap::sum(d, p.plus.iter().filter_map(|&k| t.block(k, j)));
        let to_minus = KrausMap::sum(d, p.minus.iter().filter_map(|&k| t.block(k, j)));
        for (a, &i) in p.zero.iter().enumerate() {
            let base = t.block(i, j).cloned().unwrap_or_else(|| KrausMap::zero(d));
            let add_l = to_plus.scaled(w[a]);
            let add_r = to_minus.scaled(w[a]);
            left.set_block(pos(&lv, i), pos(&lv, j), KrausMap::sum(d, [&base, &add_l]))?;
            right.set_block(pos(&rv, i), pos(&rv, j), KrausMap::sum(d, [&base, &add_r]))?;
            overlap.set_block(pos(&p.zero, i), pos(&p.zero, j), KrausMap::sum(d, [&base, &add_l, &add_r]))?;
        }
    }
    let dec = OverlapDecomposition { partition: p.clone(), left, right, overlap };
    let res = dec.reconstruction_residual(t);
    if res > Tolerances::default().reconstruction_tol * 10.0 {
        return Err(Error::InvalidPartition(format!("reconstruction residual {res:.3e}")));
    }
    Ok(dec)
}

/// Block superoperator of a sub-TOM placed on the full vertex set.
fn embed_blocks(sub: &Tom, map: &[usize], n: usize, fill_identity: &[usize]) -> ComplexMatrix {
    let d2 = sub.dim() * sub.dim();
    let mut m = ComplexMatrix::zeros(n * d2, n * d2);
    let s = sub.block_superop();
    for (a, &i) in map.iter().enumerate() {
        for (b, &j) in map.iter().enumerate() {
            m.view_mut((i * d2, j * d2), (d2, d2)).copy_from(&s.view((a * d2, b * d2), (d2, d2)));
        }
    }
    for &v in fill_identity {
        m.view_mut((v * d2, v * d2), (d2, d2)).copy_from(&identity(d2));
    }
    m
}

impl OverlapDecomposition {
    /// Max-norm of `ℰ − (ℰ_L⊕0) − (0⊕ℰ_R) + (0⊕ℰ₀⊕0)` on block superoperators.
    pub fn reconstruction_residual(&self, t: &Tom) -> f64 {
        max_abs(&(t.block_superop() - self.assembled(t.n())))
    }

    fn assembled(&self, n: usize) -> ComplexMatrix {
        let p = &self.partition;
        embed_blocks(&self.left, &p.left(), n, &[]) + embed_blocks(&self.right, &p.right(), n, &[])
            - embed_blocks(&self.overlap, &p.zero, n, &[])
    }
}

impl OverlapFactorization {
    /// Max-norm of `ℰ − (ℰ_L⊕I₊)(I₋⊕ℰ_R)` on block superoperators.
    pub fn reconstruction_residual(&self, t: &Tom) -> f64 {
        max_abs(&(t.block_superop() - self.product(t.n())))
    }

    fn product(&self, n: usize) -> ComplexMatrix {
        let p = &self.partition;
        embed_blocks(&self.left, &p.left(), n, &p.plus) * embed_blocks(&self.right, &p.right(), n, &p.minus)
    }
}

/// A column of CP maps `(𝒱ᵢ)ᵢ` on a common space.
#[derive(Debug, Clone, PartialEq)]
pub struct CpVector {
    pub components: Vec<KrausMap>,
}

impl CpVector {
    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, |m| m.dim())
    }

    /// `𝒱*(I) = Σᵢ Σₖ Bᵢₖ*Bᵢₖ`.
    pub fn dual_identity(&self) -> ComplexMatrix {
        let d = self.dim();
        self.components.iter().fold(ComplexMatrix::zeros(d, d), |acc, m| acc + m.dual_identity())
    }

    pub fn is_cptp(&self) -> bool {
        max_abs(&(self.dual_identity() - identity(self.dim()))) <= Tolerances::default().tp_tol
    }
}

/// `𝒱⁽ᶜ⁾ = 𝒰 ∘ Φ_c` for every column `c`, with `𝒰` a CPTP vector.
#[derive(Debug, Clone)]
pub struct Rank1Factorization {
    pub u: CpVector,
    /// `Φ_c = X_c · X_c` with `X_c = √(𝒱⁽ᶜ⁾*(I))` Hermitian PSD.
    pub coefficients: Vec<KrausMap>,
    pub roots: Vec<ComplexMatrix>,
}

/// Tries to write all columns as `𝒰∘Φ_c` with a common CPTP vector `𝒰`.
pub fn factor_rank1(columns: &[CpVector]) -> Option<Rank1Factorization> {
    let first = columns.first()?;
    let (m, d) = (first.components.len(), first.dim());
    if m == 0 || columns.iter().any(|c| c.components.len() != m || c.dim() != d) {
        return None;
    }
    let tol = Tolerances::default();
    let roots: Vec<ComplexMatrix> = columns.iter().map(|c| psd_sqrt(&c.dual_identity())).collect();
    let min_eig = |x: &ComplexMatrix| crate::densela::eigh(x).0.first().copied().unwrap_or(0.0);
    // Prefer a column with invertible X, so that 𝒰 is determined everywhere.
    let reference = (0..columns.len())
        .find(|&c| min_eig(&roots[c]) > 1e-8)
        .or_else(|| (0..columns.len()).find(|&c| max_abs(&roots[c]) > 1e-12))?;
    let x = &roots[reference];
    let xpinv = psd_pinv(x, 1e-10);
    let ker = identity(d) - x * &xpinv;
    let has_kernel = max_abs(&ker) > 1e-10;
    let u = CpVector {
        components: columns[reference]
            .components
            .iter()
            .map(|v| {
                let mut ks: Vec<ComplexMatrix> = v.kraus().iter().map(|b| b * &xpinv).collect();
                if has_kernel {
                    ks.push(ker.scale((1.0 / m as f64).sqrt()));
                }
                KrausMap::new(d, ks).expect("consistent dimensions")
            })
            .collect(),
    };
    let u_hat: Vec<ComplexMatrix> = u.components.iter().map(|c| c.to_superop().matrix).collect();
    let d2 = d * d;
    let stacked = ComplexMatrix::from_fn(m * d2, d2, |r, c| u_hat[r / d2][(r % d2, c)]);
    let fits = |col: &CpVector, phi: &ComplexMatrix| {
        col.components
            .iter()
            .zip(&u_hat)
            .all(|(v, uh)| frobenius(&(v.to_superop().matrix - uh * phi)) <= tol.rank1_tol)
    };
    let mut coefficients = Vec::with_capacity(columns.len());
    for (col, x) in columns.iter().zip(&roots) {
        // The polar choice Φ = X·X works whenever the column shares the reference's phase;
        // otherwise solve 𝒰∘Φ = 𝒱 in least squares and require a CP solution.
        let polar = KrausMap::single(x.clone());
        if fits(col, &polar.to_superop().matrix) {
            coefficients.push(polar);
            continue;
        }
        let v_hat: Vec<ComplexMatrix> = col.components.iter().map(|v| v.to_superop().matrix).collect();
        let rhs = ComplexMatrix::from_fn(m * d2, d2, |r, c| v_hat[r / d2][(r % d2, c)]);
        let phi = stacked.clone().svd(true, true).solve(&rhs, 1e-12).ok()?;
        if !fits(col, &phi) {
            return None;
        }
        coefficients.push(KrausMap::from_superop(&SuperOperator::new(d, phi).ok()?).ok()?);
    }
    Some(Rank1Factorization { u, coefficients, roots })
}

/// Synthesizes a factorization for a single-vertex overlap, or returns `None`
/// when the zero pattern or the rank-one condition fails.
pub fn detect_factorization(t: &Tom, p: &Partition) -> Option<OverlapFactorization> {
    if !admits_factorization_shape(t, p) || p.zero.len() != 1 {
        return None;
    }
    let d = t.dim();
    let v = p.zero[0];
    let (lv, rv) = (p.left(), p.right());
    let columns: Vec<CpVector> = rv
        .iter()
        .map(|&j| CpVector {
            components: lv.iter().map(|&i| t.block(i, j).cloned().unwrap_or_else(|| KrausMap::zero(d))).collect(),
        })
        .collect();
    let f = factor_rank1(&columns)?;
    let mut left = t.restrict(&lv);
    for (a, comp) in f.u.components.iter().enumerate() {
        left.set_block(a, pos(&lv, v), comp.clone()).ok()?;
    }
    let mut right = t.restrict(&rv);
    for (b, coeff) in f.coefficients.iter().enumerate() {
        right.set_block(pos(&rv, v), b, coeff.clone()).ok()?;
    }
    let fac = OverlapFactorization { partition: p.clone(), left, right };
    (fac.reconstruction_residual(t) <= 1e-9).then_some(fac)
}

/// Checks a user-supplied factorization (any overlap size).
pub fn verify_factorization(t: &Tom, fac: &OverlapFactorization) -> Result<f64> {
    if !admits_factorization_shape(t, &fac.partition) {
        return Err(Error::InvalidPartition("zero pattern does not admit a factorization".into()));
    }
    let res = fac.reconstruction_residual(t);
    if res > 1e-9 {
        return Err(Error::HypothesisViolated(format!("product identity residual {res:.3e}")));
    }
    Ok(res)
}

/// Either kind of splitting.
#[derive(Debug, Clone)]
pub enum Split {
    Decomposition(OverlapDecomposition),
    Factorization(OverlapFactorization),
}

impl Split {
    pub fn partition(&self) -> &Partition {
        match self {
            Split::Decomposition(d) => &d.partition,
            Split::Factorization(f) => &f.partition,
        }
    }
}

fn sub_state(rho: &TomDensity, map: &[usize]) -> TomDensity {
    TomDensity { blocks: map.iter().map(|&i| rho.blocks[i].clone()).collect() }
}

fn site_system(t: &Tom, sites: &[usize]) -> Result<MonitoredSystem> {
    MonitoredSystem::for_tom(t, &SubspaceSpec::sites(t.n(), t.dim(), sites))
}

fn positions(list: &[usize], of: &[usize]) -> Vec<usize> {
    of.iter().map(|&v| pos(list, v)).collect()
}

fn check_overlap_state(rho: &TomDensity, p: &Partition) -> Result<()> {
    if rho.is_zero_outside(&p.zero, 1e-12) {
        Ok(())
    } else {
        Err(Error::StateOutsideOverlap)
    }
}

/// Recurrence data of a TOM and both sides of a decomposition.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct DecompositionMetrics {
    pub pi: f64,
    #[serde(serialize_with = "crate::report::ser_f64")]
    pub tau: f64,
    pub pi_left: f64,
    pub pi_right: f64,
    #[serde(serialize_with = "crate::report::ser_f64")]
    pub tau_left: f64,
    #[serde(serialize_with = "crate::report::ser_f64")]
    pub tau_right: f64,
    /// `|π − (π_L + π_R − 1)|`.
    pub pi_residual: f64,
    /// `|τ − (τ_L + τ_R − 1)|`, when all three are finite.
    pub tau_residual: Option<f64>,
    pub holds: bool,
}

fn pi_tau(sys: &MonitoredSystem, rho: &ComplexMatrix) -> Result<(f64, f64)> {
    let lv = sys.limit_values(rho, LimitPolicy::Auto)?;
    let tau = if 1.0 - lv.pi > sys.tol.recurrence_tol { f64::INFINITY } else { lv.tau };
    Ok((lv.pi, tau))
}

/// Computes `π, τ` for the TOM and for both sides, and checks the sum rules.
pub fn split_metrics_decomposition(t: &Tom, dec: &OverlapDecomposition, rho: &TomDensity) -> Result<DecompositionMetrics> {
    let p = &dec.partition;
    check_overlap_state(rho, p)?;
    let (lv, rv) = (p.left(), p.right());
    let (pi, tau) = pi_tau(&site_system(t, &p.zero)?, &rho.to_full())?;
    let (pi_left, tau_left) = pi_tau(&site_system(&dec.left, &positions(&lv, &p.zero))?, &sub_state(rho, &lv).to_full())?;
    let (pi_right, tau_right) =
        pi_tau(&site_system(&dec.right, &positions(&rv, &p.zero))?, &sub_state(rho, &rv).to_full())?;
    let tol = Tolerances::default().split_tol;
    let pi_residual = (pi - (pi_left + pi_right - 1.0)).abs();
    let tau_residual = (tau.is_finite() && tau_left.is_finite() && tau_right.is_finite())
        .then(|| (tau - (tau_left + tau_right - 1.0)).abs());
    let tau_ok = match tau_residual {
        Some(r) => r <= tol * tau.max(1.0),
        None => !(tau.is_finite() && tau_left.is_finite() && tau_right.is_finite()),
    };
    Ok(DecompositionMetrics {
        pi,
        tau,
        pi_left,
        pi_right,
        tau_left,
        tau_right,
        pi_residual,
        tau_residual,
        holds: pi_residual <= tol && tau_ok,
    })
}

/// Recurrence data of a TOM and both factors.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct FactorizationMetrics {
    pub pi: f64,
    #[serde(serialize_with = "crate::report::ser_f64")]
    pub tau: f64,
    pub pi_right: f64,
    #[serde(serialize_with = "crate::report::ser_f64")]
    pub tau_right: f64,
    /// `π_L(σ̂)` and `τ_L(σ̂)` for `σ̂ = f_R(1)(ρ)/Tr(…)`.
    pub pi_left: f64,
    #[serde(serialize_with = "crate::report::ser_f64")]
    pub tau_left: f64,
    /// Overlap blocks of `σ = f_R(1)(ρ)`, in partition order, as `[re, im]` entries.
    #[serde(skip)]
    pub sigma: TomDensity,
    pub pi_residual: f64,
    pub tau_residual: Option<f64>,
    pub holds: bool,
}

/// Computes `σ = f_R(1)(ρ)` and checks the product and sum rules.
pub fn split_metrics_factorization(t: &Tom, fac: &OverlapFactorization, rho: &TomDensity) -> Result<FactorizationMetrics> {
    let p = &fac.partition;
    check_overlap_state(rho, p)?;
    let (lv, rv) = (p.left(), p.right());
    let (pi, tau) = pi_tau(&site_system(t, &p.zero)?, &rho.to_full())?;
    let rsys = site_system(&fac.right, &positions(&rv, &p.zero))?;
    let rho_r = sub_state(rho, &rv).to_full();
    let (pi_right, tau_right) = pi_tau(&rsys, &rho_r)?;
    let sigma_full = rsys.reduced_schur_apply_at_one(&rho_r)?;
    let sigma_r = TomDensity::from_full(&sigma_full, rv.len(), t.dim())?;
    let s = sigma_r.total_trace();
    let mut sigma_l = TomDensity::zeros(lv.len(), t.dim());
    for &v in &p.zero {
        sigma_l.blocks[pos(&lv, v)] = sigma_r.blocks[pos(&rv, v)].clone();
    }
    let lsys = site_system(&fac.left, &positions(&lv, &p.zero))?;
    let (pi_left, tau_left) = if s > 1e-14 {
        let norm = TomDensity { blocks: sigma_l.blocks.iter().map(|b| b.unscale(s)).collect() };
        pi_tau(&lsys, &norm.to_full())?
    } else {
        (1.0, 1.0)
    };
    let tol = Tolerances::default().split_tol;
    let pi_residual = (pi - pi_left * pi_right).abs();
    let finite = tau.is_finite() && tau_left.is_finite() && tau_right.is_finite();
    let tau_residual = finite.then(|| (tau - (tau_left + tau_right - 1.0)).abs());
    let left_recurrent = 1.0 - pi_left <= Tolerances::default().recurrence_tol;
    let tau_ok = !left_recurrent || tau_residual.is_none_or(|r| r <= tol * tau.max(1.0));
    let mut sigma = TomDensity::zeros(p.zero.len(), t.dim());
    for (a, &v) in p.zero.iter().enumerate() {
        sigma.blocks[a] = sigma_r.blocks[pos(&rv, v)].clone();
    }
    Ok(FactorizationMetrics {
        pi,
        tau,
        pi_right,
        tau_right,
        pi_left,
        tau_left,
        sigma,
        pi_residual,
        tau_residual,
        holds: pi_residual <= tol && tau_ok,
    })
}

/// Reduced Schur function of a TOM restricted to the coordinates of the overlap sites.
pub fn overlap_schur(t: &Tom, sites: &[usize], z: c64) -> Result<ComplexMatrix> {
    let f = site_system(t, sites)?.reduced_schur_eval(z)?;
    let d2 = t.dim() * t.dim();
    let k = sites.len() * d2;
    Ok(ComplexMatrix::from_fn(k, k, |r, c| f[(sites[r / d2] * d2 + r % d2, sites[c / d2] * d2 + c % d2)]))
}

/// Maps from a perturbed left side back to a full TOM and compares return probabilities.
pub fn perturbation_invariance_check(t: &Tom, split: &Split, perturbed_left: &Tom, rho: &TomDensity) -> Result<bool> {
    let p = split.partition().clone();
    check_overlap_state(rho, &p)?;
    let lv = p.left();
    let lsites = positions(&lv, &p.zero);
    let (original_left, rebuilt) = match split {
        Split::Decomposition(dec) => {
            let assembled = embed_blocks(perturbed_left, &lv, t.n(), &[])
                + embed_blocks(&dec.right, &p.right(), t.n(), &[])
                - embed_blocks(&dec.overlap, &p.zero, t.n(), &[]);
            (&dec.left, tom_from_block_superop(t, &assembled)?)
        }
        Split::Factorization(fac) => {
            let assembled = embed_blocks(perturbed_left, &lv, t.n(), &p.plus)
                * embed_blocks(&fac.right, &p.right(), t.n(), &p.minus);
            (&fac.left, tom_from_block_superop(t, &assembled)?)
        }
    };
    let sub = sub_state(rho, &lv).to_full();
    for left in [original_left, perturbed_left] {
        let pl = match split {
            Split::Decomposition(_) => pi_tau(&site_system(left, &lsites)?, &sub)?.0,
            // For factorizations recurrence of the overlap is a property of ℰ_L alone;
            // probe it with the maximally mixed overlap state.
            Split::Factorization(_) => {
                let mixed = TomDensity {
                    blocks: (0..lv.len())
                        .map(|a| {
                            if lsites.contains(&a) {
                                identity(t.dim()).unscale((t.dim() * lsites.len()) as f64)
                            } else {
                                ComplexMatrix::zeros(t.dim(), t.dim())
                            }
                        })
                        .collect(),
                };
                pi_tau(&site_system(left, &lsites)?, &mixed.to_full())?.0
            }
        };
        if 1.0 - pl > Tolerances::default().recurrence_tol {
            return Err(Error::LeftNotRecurrent(pl));
        }
    }
    let full = rho.to_full();
    let before = pi_tau(&site_system(t, &p.zero)?, &full)?.0;
    let after = pi_tau(&site_system(&rebuilt, &p.zero)?, &full)?.0;
    Ok((before - after).abs() <= Tolerances::default().split_tol)
}

/// Kraus form of each nonzero block of a block superoperator, on the vertices of `like`.
fn tom_from_block_superop(like: &Tom, m: &ComplexMatrix) -> Result<Tom> {
    let (n, d) = (like.n(), like.dim());
    let d2 = d * d;
    let mut out = Tom::new(like.vertices().to_vec(), d);
    for i in 0..n {
        for j in 0..n {
            let b = m.view((i * d2, j * d2), (d2, d2)).into_owned();
            if max_abs(&b) <= 1e-14 {
                continue;
            }
            let k = KrausMap::from_superop(&SuperOperator::new(d, b)?)
                .map_err(|e| Error::HypothesisViolated(format!("block ({i}<-{j}) after perturbation: {e}")))?;
            out.set_block(i, j, k)?;
        }
    }
    Ok(out)
}
