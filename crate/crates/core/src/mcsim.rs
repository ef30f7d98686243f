//! Monte Carlo estimates of first-return statistics from pure-state trajectories.
//!
//! Each trajectory applies a randomly chosen Kraus operator, then measures the
//! return projector; it stops at the first positive outcome or after `max_steps`.
//! Trajectory `t` draws from the ChaCha8 stream `t` of the configured seed, and
//! the aggregate uses integer counts only, so results do not depend on threading.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::chains1d::HalfLineModel;
use crate::channels::KrausMap;
use crate::config::Tolerances;
use crate::densela::{eigh, max_abs, ComplexMatrix, ComplexVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TrajectoryConfig {
    pub shots: u64,
    pub max_steps: usize,
    pub seed: u64,
}

impl TrajectoryConfig {
    pub fn new(shots: u64, max_steps: usize, seed: u64) -> Result<Self> {
        if shots == 0 || max_steps == 0 {
            return Err(Error::Invalid("shots and max_steps must be at least 1".into()));
        }
        Ok(TrajectoryConfig { shots, max_steps, seed })
    }

    fn rng(&self, trajectory: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(trajectory);
        rng
    }
}

/// Estimated return statistics.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct McEstimate {
    pub shots: u64,
    pub pi: f64,
    pub pi_se: f64,
    /// Mean return time among returning trajectories.
    pub tau: f64,
    pub tau_se: f64,
    pub censored_fraction: f64,
    /// `[π̂, π̂ + censored]`: bounds on π if censored trajectories never or always return.
    pub pi_bracket: (f64, f64),
    /// `histogram[n−1]` counts returns at step `n`.
    pub histogram: Vec<u64>,
}

impl McEstimate {
    /// Empirical first-return probabilities `π̂ₙ`.
    pub fn first_return(&self) -> Vec<f64> {
        self.histogram.iter().map(|&c| c as f64 / self.shots as f64).collect()
    }
}

#[derive(Debug, Clone)]
struct Tally {
    returned: u64,
    sum: u128,
    sum_sq: u128,
    histogram: Vec<u64>,
}

impl Tally {
    fn new(len: usize) -> Self {
        Tally { returned: 0, sum: 0, sum_sq: 0, histogram: vec![0; len] }
    }

    fn add(mut self, n: Option<usize>) -> Self {
        if let Some(n) = n {
            self.returned += 1;
            self.sum += n as u128;
            self.sum_sq += (n as u128) * (n as u128);
            self.histogram[n - 1] += 1;
        }
        self
    }

    fn merge(mut self, o: Tally) -> Self {
        self.returned += o.returned;
        self.sum += o.sum;
        self.sum_sq += o.sum_sq;
        for (a, b) in self.histogram.iter_mut().zip(o.histogram) {
            *a += b;
        }
        self
    }

    fn finish(self, shots: u64) -> McEstimate {
        let s = shots as f64;
        let k = self.returned as f64;
        let pi = k / s;
        let (tau, tau_se) = if self.returned > 0 {
            let m = self.sum as f64 / k;
            let var = if self.returned > 1 { (self.sum_sq as f64 - k * m * m) / (k - 1.0) } else { 0.0 };
            (m, (var.max(0.0) / k).sqrt())
        } else {
            (f64::INFINITY, f64::INFINITY)
        };
        let censored = 1.0 - pi;
        McEstimate {
            shots,
            pi,
            pi_se: (pi * (1.0 - pi) / s).sqrt(),
            tau,
            tau_se,
            censored_fraction: censored,
            pi_bracket: (pi, 1.0),
            histogram: self.histogram,
        }
    }
}

/// Index drawn with probability `w[i] / Σw`, or `None` for the missing mass below 1.
fn pick<R: Rng + ?Sized>(rng: &mut R, w: &[f64]) -> Option<usize> {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &x) in w.iter().enumerate() {
        acc += x;
        if u < acc {
            return Some(i);
        }
    }
    None
}

/// One trajectory from `ψ₀ ∈ ran P`; `None` when it has not returned within `max_steps`
/// (or its weight was absorbed by a trace-decreasing map).
pub fn sample_first_return<R: Rng + ?Sized>(
    phi: &KrausMap,
    p: &ComplexMatrix,
    psi0: &ComplexVector,
    max_steps: usize,
    rng: &mut R,
) -> Option<usize> {
    let mut psi = psi0.normalize();
    for n in 1..=max_steps {
        let branches: Vec<ComplexVector> = phi.kraus().iter().map(|b| b * &psi).collect();
        let w: Vec<f64> = branches.iter().map(|v| v.norm_squared()).collect();
        let k = pick(rng, &w)?;
        psi = branches[k].unscale(w[k].sqrt());
        let pp = p * &psi;
        let pr = pp.norm_squared();
        if rng.random::<f64>() < pr {
            return Some(n);
        }
        let q = &psi - pp;
        let nq = q.norm();
        if nq == 0.0 {
            return None;
        }
        psi = q.unscale(nq);
    }
    None
}

/// Pure-state ensemble of `ρ`: eigenvalues (as weights) and eigenvectors.
fn ensemble(rho: &ComplexMatrix) -> (Vec<f64>, Vec<ComplexVector>) {
    let (vals, vecs) = eigh(rho);
    let total: f64 = vals.iter().map(|v| v.max(0.0)).sum();
    let mut w = vec![];
    let mut v = vec![];
    for (i, &l) in vals.iter().enumerate() {
        if l > 1e-14 * total {
            w.push(l / total);
            v.push(vecs.column(i).into_owned());
        }
    }
    (w, v)
}

fn run(config: &TrajectoryConfig, weights: &[f64], one: impl Fn(usize, &mut ChaCha8Rng) -> Option<usize> + Sync) -> McEstimate {
    let len = config.max_steps;
    (0..config.shots)
        .into_par_iter()
        .fold(
            || Tally::new(len),
            |t, i| {
                let mut rng = config.rng(i);
                // Numerical round-off can leave the cumulative weight just below 1.
                let k = pick(&mut rng, weights).unwrap_or(weights.len() - 1);
                t.add(one(k, &mut rng))
            },
        )
        .reduce(|| Tally::new(len), Tally::merge)
        .finish(config.shots)
}

/// Return statistics of `Φ` monitored by `P` for the initial state `ρ` (supported on `ran P`).
pub fn estimate(phi: &KrausMap, p: &ComplexMatrix, rho: &ComplexMatrix, config: &TrajectoryConfig) -> Result<McEstimate> {
    TrajectoryConfig::new(config.shots, config.max_steps, config.seed)?;
    let d = phi.dim();
    if p.shape() != (d, d) || rho.shape() != (d, d) {
        return Err(Error::DimensionMismatch(format!("projector and state must be {d}x{d}")));
    }
    if max_abs(&(p * p - p)) > Tolerances::default().projector_tol || max_abs(&(p.adjoint() - p)) > Tolerances::default().projector_tol {
        return Err(Error::NotProjector("return projector is not an orthogonal projection".into()));
    }
    let out = rho - p * rho * p;
    if max_abs(&out) > Tolerances::default().support_tol {
        return Err(Error::StateOutsideSubspace(max_abs(&out)));
    }
    let (w, v) = ensemble(rho);
    Ok(run(config, &w, |k, rng| sample_first_return(phi, p, &v[k], config.max_steps, rng)))
}

/// Return statistics to `site` of a half-line model, unravelled as a walker with
/// a site label and an internal pure state; `ρ` lives at `site`.
pub fn estimate_halfline(model: &HalfLineModel, site: usize, rho: &ComplexMatrix, config: &TrajectoryConfig) -> Result<McEstimate> {
    TrajectoryConfig::new(config.shots, config.max_steps, config.seed)?;
    let d = model.dim();
    if rho.shape() != (d, d) {
        return Err(Error::DimensionMismatch(format!("state must be {d}x{d}")));
    }
    let (w, v) = ensemble(rho);
    Ok(run(config, &w, |k, rng| {
        let mut psi = v[k].clone();
        let mut x = site;
        for n in 1..=config.max_steps {
            let col = model.column(x);
            let mut branches = vec![];
            let mut weights = vec![];
            let targets = [(x.checked_sub(1), &col.down), (Some(x), &col.stay), (Some(x + 1), &col.up)];
            for (to, blk) in targets {
                if let (Some(to), Some(b)) = (to, blk) {
                    for kr in b.kraus() {
                        let y = kr * &psi;
                        weights.push(y.norm_squared());
                        branches.push((to, y));
                    }
                }
            }
            let i = pick(rng, &weights)?;
            let (to, y) = branches.swap_remove(i);
            psi = y.unscale(weights[i].sqrt());
            x = to;
            if x == site {
                return Some(n);
            }
        }
        None
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{basis, two_kraus_qubit, two_vertex_walk};
    use crate::densela::{from_real, identity};
    use crate::random;
    use crate::tom::Tom;

    #[test]
    fn zero_complement_returns_immediately() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let phi = random::cptp(&mut rng, 3, 2);
        let cfg = TrajectoryConfig::new(500, 10, 7).unwrap();
        let e = estimate(&phi, &identity(3), &random::density(&mut rng, 3), &cfg).unwrap();
        assert_eq!(e.pi, 1.0);
        assert_eq!(e.histogram[0], 500);
    }

    #[test]
    fn classical_chain_return_law() {
        // Two states, leave 0 w.p. a, leave 1 w.p. b: π₁ = 1−a, πₙ = a b (1−b)^{n−2}.
        let (a, b) = (0.3, 0.6);
        let t = Tom::from_stochastic(&[vec![1.0 - a, b], vec![a, 1.0 - b]]).unwrap();
        let phi = t.embed_cptp();
        let p = from_real(2, 2, &[1., 0., 0., 0.]);
        let cfg = TrajectoryConfig::new(200_000, 200, 3).unwrap();
        let e = estimate(&phi, &p, &p, &cfg).unwrap();
        let emp = e.first_return();
        for n in 1..=6 {
            let want = if n == 1 { 1.0 - a } else { a * b * (1.0 - b).powi(n as i32 - 2) };
            let se = (want * (1.0 - want) / cfg.shots as f64).sqrt();
            assert!((emp[n - 1] - want).abs() < 4.0 * se + 1e-12, "n={n}");
        }
        let tau = 1.0 + a / b;
        assert!((e.tau - tau).abs() < 4.0 * e.tau_se);
    }

    #[test]
    fn unitary_return_time_is_integer() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = random::unitary(&mut rng, 4);
        let phi = KrausMap::single(u);
        let psi = basis(4, 0);
        let p = &psi * psi.adjoint();
        let cfg = TrajectoryConfig::new(50_000, 5_000, 5).unwrap();
        let e = estimate(&phi, &p, &p, &cfg).unwrap();
        // Generic unitaries have the whole space as enclosure.
        assert!((e.tau - 4.0).abs() < 4.0 * e.tau_se, "{e:?}");
    }

    #[test]
    fn deterministic_under_seed() {
        let phi = two_kraus_qubit();
        let psi = (basis(2, 0) + basis(2, 1)).unscale(2f64.sqrt());
        let p = &psi * psi.adjoint();
        let cfg = TrajectoryConfig::new(20_000, 1000, 99).unwrap();
        let a = estimate(&phi, &p, &p, &cfg).unwrap();
        let b = estimate(&phi, &p, &p, &cfg).unwrap();
        assert_eq!(a, b);
        let other = estimate(&phi, &p, &p, &TrajectoryConfig { seed: 100, ..cfg }).unwrap();
        assert_ne!(a.histogram, other.histogram);
    }

    #[test]
    fn two_vertex_walk_site_return() {
        let (p, q) = (0.4, 0.3);
        let t = two_vertex_walk(p, q);
        let phi = t.embed_cptp();
        let proj = crate::tom::TomDensity::at_site(2, 0, identity(2)).to_full();
        let rho = proj.unscale(2.0);
        let cfg = TrajectoryConfig::new(50_000, 1000, 11).unwrap();
        let e = estimate(&phi, &proj, &rho, &cfg).unwrap();
        assert!((e.tau - (1.0 + p / (2.0 * q))).abs() < 3.0 * e.tau_se);
    }

    #[test]
    fn rejects_state_outside_subspace() {
        let phi = two_kraus_qubit();
        let p = from_real(2, 2, &[1., 0., 0., 0.]);
        let cfg = TrajectoryConfig::new(10, 10, 0).unwrap();
        assert!(matches!(
            estimate(&phi, &p, &identity(2).unscale(2.0), &cfg),
            Err(Error::StateOutsideSubspace(_))
        ));
        assert!(TrajectoryConfig::new(0, 1, 0).is_err());
    }
}
