//! Transition operator matrices: grids of CP maps `ℰᵢʲ` (from vertex `j` to
//! vertex `i`) whose column sums are trace preserving.
//!
//! The full Hilbert space is `ℋ ⊗ 𝒮` with internal index `a` and vertex index
//! `s` combined as `a·|V| + s`.

use std::collections::BTreeMap;

use crate::channels::{self, KrausMap};
use crate::config::Tolerances;
use crate::densela::{c64, kron, max_abs, vec, ComplexMatrix, ComplexVector, ZERO};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tom {
    vertices: Vec<String>,
    dim: usize,
    blocks: BTreeMap<(usize, usize), KrausMap>,
}

/// Per-vertex operators `ρᵢ`, the block-diagonal part of an operator on `ℋ⊗𝒮`.
#[derive(Debug, Clone, PartialEq)]
pub struct TomDensity {
    pub blocks: Vec<ComplexMatrix>,
}

/// Outcome of [`Tom::validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct TomReport {
    /// Max-norm of `Σᵢ Σₖ Bᵢₖʲ*Bᵢₖʲ − I` per column `j`.
    pub column_residuals: Vec<f64>,
    /// Complete positivity of each present block, keyed `(to, from)`.
    pub block_cp: Vec<((usize, usize), bool)>,
    /// Every column is trace non-increasing.
    pub substochastic: bool,
    pub valid: bool,
}

/// Open quantum walk data: one effect matrix per edge, keyed `(to, from)`.
#[derive(Debug, Clone)]
pub struct OqwSpec {
    pub vertices: Vec<String>,
    pub dim: usize,
    pub effects: BTreeMap<(usize, usize), ComplexMatrix>,
}

impl Tom {
    pub fn new(vertices: Vec<String>, dim: usize) -> Self {
        Tom { vertices, dim, blocks: BTreeMap::new() }
    }

    /// A TOM with vertices labelled `1..=n`.
    pub fn numbered(n: usize, dim: usize) -> Self {
        Tom::new((1..=n).map(|i| i.to_string()).collect(), dim)
    }

    pub fn vertices(&self) -> &[String] {
        &self.vertices
    }

    pub fn n(&self) -> usize {
        self.vertices.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.vertices.iter().position(|v| v == label)
    }

    /// Sets block `ℰ_to^from`. Zero maps are stored as structural zeros.
    pub fn set_block(&mut self, to: usize, from: usize, map: KrausMap) -> Result<()> {
        if to >= self.n() || from >= self.n() {
            return Err(Error::Invalid(format!("block ({to}<-{from}) outside {} vertices", self.n())));
        }
        if map.dim() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "block ({to}<-{from}) has dimension {}, TOM has {}",
                map.dim(),
                self.dim
            )));
        }
        if map.kraus().is_empty() {
            self.blocks.remove(&(to, from));
        } else {
            self.blocks.insert((to, from), map);
        }
        Ok(())
    }

    pub fn with_block(mut self, to: usize, from: usize, map: KrausMap) -> Self {
        self.set_block(to, from, map).expect("valid block");
        self
    }

    pub fn block(&self, to: usize, from: usize) -> Option<&KrausMap> {
        self.blocks.get(&(to, from))
    }

    /// Whether the block is present (structurally nonzero).
    pub fn has_block(&self, to: usize, from: usize) -> bool {
        self.blocks.contains_key(&(to, from))
    }

    pub fn blocks(&self) -> impl Iterator<Item = (&(usize, usize), &KrausMap)> {
        self.blocks.iter()
    }

    /// `Σᵢ ℰᵢʲ`.
    pub fn column_sum(&self, j: usize) -> KrausMap {
        KrausMap::sum(self.dim, self.blocks.iter().filter(|(k, _)| k.1 == j).map(|(_, m)| m))
    }

    pub fn validate(&self) -> TomReport {
        let tol = Tolerances::default();
        let column_residuals: Vec<f64> = (0..self.n()).map(|j| self.column_sum(j).tp_residual()).collect();
        let block_cp = self
            .blocks
            .iter()
            .map(|(&k, m)| (k, m.to_superop().is_completely_positive()))
            .collect::<Vec<_>>();
        let substochastic = (0..self.n()).all(|j| self.column_sum(j).is_trace_nonincreasing(tol.tp_tol));
        let valid = column_residuals.iter().all(|&r| r <= tol.tp_tol) && block_cp.iter().all(|b| b.1);
        TomReport { column_residuals, block_cp, substochastic, valid }
    }

    /// Block superoperator on the stacked space `⊕ᵢ vec(ρᵢ)` of dimension `|V|·d²`.
    pub fn block_superop(&self) -> ComplexMatrix {
        let d2 = self.dim * self.dim;
        let mut m = ComplexMatrix::zeros(self.n() * d2, self.n() * d2);
        for (&(i, j), b) in &self.blocks {
            m.view_mut((i * d2, j * d2), (d2, d2)).copy_from(&b.to_superop().matrix);
        }
        m
    }

    /// The CPTP map on `ℋ⊗𝒮` with Kraus operators `Bᵢₖʲ ⊗ |i⟩⟨j|`.
    pub fn embed_cptp(&self) -> KrausMap {
        let n = self.n();
        let mut kraus = vec![];
        for (&(i, j), b) in &self.blocks {
            let mut e = ComplexMatrix::zeros(n, n);
            e[(i, j)] = c64::new(1.0, 0.0);
            for k in b.kraus() {
                kraus.push(kron(k, &e));
            }
        }
        KrausMap::new(self.dim * n, kraus).expect("consistent dimensions")
    }

    /// Zeroes all off-site blocks of an operator on `ℋ⊗𝒮`.
    pub fn block_diagonal_part(&self, rho: &ComplexMatrix) -> Result<TomDensity> {
        TomDensity::from_full(rho, self.n(), self.dim)
    }

    pub fn is_irreducible(&self) -> bool {
        channels::is_irreducible(&self.embed_cptp())
    }

    /// Restriction to a subset of vertices, in the given order.
    pub fn restrict(&self, keep: &[usize]) -> Tom {
        let mut t = Tom::new(keep.iter().map(|&i| self.vertices[i].clone()).collect(), self.dim);
        for (a, &i) in keep.iter().enumerate() {
            for (b, &j) in keep.iter().enumerate() {
                if let Some(m) = self.block(i, j) {
                    t.blocks.insert((a, b), m.clone());
                }
            }
        }
        t
    }

    pub fn from_oqw(spec: &OqwSpec) -> Result<Tom> {
        let n = spec.vertices.len();
        let mut t = Tom::new(spec.vertices.clone(), spec.dim);
        for (&(i, j), b) in &spec.effects {
            t.set_block(i, j, KrausMap::new(spec.dim, vec![b.clone()])?)?;
        }
        for j in 0..n {
            let r = t.column_sum(j).tp_residual();
            if r > Tolerances::default().tp_tol {
                return Err(Error::Invalid(format!(
                    "OQW column {} violates Σ B*B = I (residual {r:.3e})",
                    spec.vertices[j]
                )));
            }
        }
        Ok(t)
    }

    /// Classical chain with column-stochastic `p[i][j]` (probability `j → i`), as a `d=1` TOM.
    pub fn from_stochastic(p: &[Vec<f64>]) -> Result<Tom> {
        let n = p.len();
        let mut t = Tom::numbered(n, 1);
        for j in 0..n {
            let mut s = 0.0;
            for i in 0..n {
                let pij = *p
                    .get(i)
                    .and_then(|r| r.get(j))
                    .ok_or_else(|| Error::DimensionMismatch("stochastic matrix must be square".into()))?;
                if pij < 0.0 {
                    return Err(Error::Invalid(format!("negative transition probability at ({i},{j})")));
                }
                s += pij;
                if pij > 0.0 {
                    t.set_block(i, j, KrausMap::single(ComplexMatrix::from_element(1, 1, c64::new(pij.sqrt(), 0.0))))?;
                }
            }
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::Invalid(format!("column {j} sums to {s}")));
            }
        }
        Ok(t)
    }
}

impl TomDensity {
    pub fn zeros(n: usize, d: usize) -> Self {
        TomDensity { blocks: vec![ComplexMatrix::zeros(d, d); n] }
    }

    /// A state located at one vertex.
    pub fn at_site(n: usize, site: usize, rho: ComplexMatrix) -> Self {
        let d = rho.nrows();
        let mut t = TomDensity::zeros(n, d);
        t.blocks[site] = rho;
        t
    }

    pub fn from_full(rho: &ComplexMatrix, n: usize, d: usize) -> Result<Self> {
        if rho.shape() != (n * d, n * d) {
            return Err(Error::DimensionMismatch(format!(
                "operator on ℋ⊗𝒮 must be {}x{}",
                n * d,
                n * d
            )));
        }
        let blocks = (0..n)
            .map(|s| ComplexMatrix::from_fn(d, d, |a, b| rho[(a * n + s, b * n + s)]))
            .collect();
        Ok(TomDensity { blocks })
    }

    pub fn to_full(&self) -> ComplexMatrix {
        let n = self.blocks.len();
        let d = self.blocks.first().map_or(0, |b| b.nrows());
        let mut m = ComplexMatrix::zeros(n * d, n * d);
        for (s, b) in self.blocks.iter().enumerate() {
            for a in 0..d {
                for c in 0..d {
                    m[(a * n + s, c * n + s)] = b[(a, c)];
                }
            }
        }
        m
    }

    /// Stacked vectorization `⊕ᵢ vec(ρᵢ)`.
    pub fn stacked(&self) -> ComplexVector {
        let d2: usize = self.blocks.first().map_or(0, |b| b.len());
        let mut v = ComplexVector::zeros(self.blocks.len() * d2);
        for (s, b) in self.blocks.iter().enumerate() {
            v.rows_mut(s * d2, d2).copy_from(&vec(b));
        }
        v
    }

    pub fn from_stacked(v: &ComplexVector, n: usize, d: usize) -> Self {
        let d2 = d * d;
        TomDensity {
            blocks: (0..n)
                .map(|s| ComplexMatrix::from_fn(d, d, |a, b| v[s * d2 + a * d + b]))
                .collect(),
        }
    }

    pub fn total_trace(&self) -> f64 {
        self.blocks.iter().map(|b| crate::densela::trace(b).re).sum()
    }

    pub fn is_zero_outside(&self, sites: &[usize], tol: f64) -> bool {
        self.blocks
            .iter()
            .enumerate()
            .all(|(s, b)| sites.contains(&s) || max_abs(b) <= tol)
    }
}

/// Vector `Σₐ cₐ eₐ ⊗ |s⟩` on `ℋ⊗𝒮` for a state `c` located at site `s`.
pub fn site_vector(n: usize, site: usize, local: &ComplexVector) -> ComplexVector {
    let d = local.len();
    let mut v = ComplexVector::from_element(n * d, ZERO);
    for a in 0..d {
        v[a * n + site] = local[a];
    }
    v
}
