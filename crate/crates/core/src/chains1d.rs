//! Nearest-neighbour TOMs on the half-line and on the line.
//!
//! Infinite chains are described by a finite head of explicit columns plus a
//! repeating tail column. Site recurrence is evaluated three ways: Schur-function
//! recursions between consecutive sites, closed forms for the homogeneous model,
//! and absorbing truncation solved with a block-tridiagonal elimination.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;

use crate::channels::KrausMap;
use crate::config::Tolerances;
use crate::densela::{c64, identity, kron, max_abs, min_singular_value, principal_sqrt, solve, vec, ComplexMatrix, ComplexVector, ONE};
use crate::error::{Error, Result};
use crate::random;
use crate::recurrence::{Method, RecurrenceReport};
use crate::tom::Tom;

/// Blocks of one column `j`: `down = ℰ_{j−1}^j`, `stay = ℰ_j^j`, `up = ℰ_{j+1}^j`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NnColumn {
    pub down: Option<KrausMap>,
    pub stay: Option<KrausMap>,
    pub up: Option<KrausMap>,
}

impl NnColumn {
    pub fn new(down: Option<KrausMap>, stay: Option<KrausMap>, up: Option<KrausMap>) -> Self {
        NnColumn { down, stay, up }
    }

    fn blocks(&self) -> impl Iterator<Item = &KrausMap> {
        self.down.iter().chain(&self.stay).chain(&self.up)
    }

    pub fn tp_residual(&self, d: usize) -> f64 {
        KrausMap::sum(d, self.blocks()).tp_residual()
    }

    /// Smallest singular value over the off-diagonal blocks present (∞ if none).
    fn offdiag_min_sv(&self) -> f64 {
        self.down
            .iter()
            .chain(&self.up)
            .map(|b| min_singular_value(&b.to_superop().matrix))
            .fold(f64::INFINITY, f64::min)
    }
}

fn superop(b: &Option<KrausMap>, d: usize) -> ComplexMatrix {
    b.as_ref().map_or_else(|| ComplexMatrix::zeros(d * d, d * d), |m| m.to_superop().matrix)
}

/// TOM on sites `0, 1, 2, …` whose column `j` is `head[j]` for `j < head.len()` and `tail` beyond.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfLineModel {
    dim: usize,
    head: Vec<NnColumn>,
    tail: NnColumn,
}

impl HalfLineModel {
    pub fn new(dim: usize, head: Vec<NnColumn>, tail: NnColumn) -> Result<Self> {
        let m = HalfLineModel { dim, head, tail };
        m.validate()?;
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn head(&self) -> &[NnColumn] {
        &self.head
    }

    pub fn tail(&self) -> &NnColumn {
        &self.tail
    }

    pub fn column(&self, j: usize) -> &NnColumn {
        self.head.get(j).unwrap_or(&self.tail)
    }

    /// `ℰᵢʲ`, or `None` when it vanishes.
    pub fn block(&self, i: usize, j: usize) -> Option<&KrausMap> {
        let c = self.column(j);
        match i as i64 - j as i64 {
            -1 => c.down.as_ref(),
            0 => c.stay.as_ref(),
            1 => c.up.as_ref(),
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        let tol = Tolerances::default().tp_tol;
        if self.head.first().is_some_and(|c| c.down.is_some()) {
            return Err(Error::Invalid("column 0 cannot map below site 0".into()));
        }
        if self.head.is_empty() && self.tail.down.is_some() {
            return Err(Error::Invalid("column 0 cannot map below site 0; give it explicitly".into()));
        }
        for (j, c) in self.head.iter().chain(std::iter::once(&self.tail)).enumerate() {
            if c.blocks().any(|b| b.dim() != self.dim) {
                return Err(Error::DimensionMismatch(format!("column {j} has blocks of the wrong size")));
            }
            let r = c.tp_residual(self.dim);
            if r > tol {
                return Err(Error::Invalid(format!("column {j} is not trace preserving (residual {r:.3e})")));
            }
        }
        Ok(())
    }

    /// Whether every off-diagonal block is invertible as a superoperator.
    pub fn offdiagonal_invertible(&self) -> bool {
        let cut = Tolerances::default().resolvent_min_sv;
        self.head.iter().chain(std::iter::once(&self.tail)).all(|c| c.offdiag_min_sv() >= cut)
    }

    /// `Σⱼ ℰᵢʲ(I) = I` on every row up to one past the head.
    pub fn is_unital(&self) -> bool {
        let d = self.dim;
        (0..self.head.len() + 3).all(|i| {
            let mut s = ComplexMatrix::zeros(d, d);
            for j in i.saturating_sub(1)..=i + 1 {
                if let Some(b) = self.block(i, j) {
                    s += b.apply(&identity(d));
                }
            }
            max_abs(&(s - identity(d))) <= Tolerances::default().tp_tol
        })
    }

    /// `ℰᵢʲ = ℰⱼⁱ` as superoperators, checked on the head and the tail.
    pub fn is_symmetric(&self) -> bool {
        let eq = |a: Option<&KrausMap>, b: Option<&KrausMap>| match (a, b) {
            (None, None) => true,
            (Some(x), Some(y)) => max_abs(&(x.to_superop().matrix - y.to_superop().matrix)) <= 1e-10,
            (Some(x), None) | (None, Some(x)) => x.is_zero(),
        };
        (0..self.head.len() + 2).all(|j| eq(self.block(j + 1, j), self.block(j, j + 1)))
    }

    /// Finite TOM on sites `0..n`, dropping blocks that leave the window.
    pub fn window_tom(&self, n: usize) -> Tom {
        let mut t = Tom::numbered(n, self.dim);
        for j in 0..n {
            for i in j.saturating_sub(1)..(j + 2).min(n) {
                if let Some(b) = self.block(i, j) {
                    t.set_block(i, j, b.clone()).expect("consistent dimension");
                }
            }
        }
        t
    }

    fn window(&self, n: usize) -> Window {
        let cols: Vec<&NnColumn> = (0..n).map(|j| self.column(j)).collect();
        Window::from_columns(self.dim, &cols)
    }
}

/// TOM on sites `ℤ`: column `j` is `center[j − start]` for `start ≤ j < start + len`,
/// `left` below and `right` above.
#[derive(Debug, Clone, PartialEq)]
pub struct LineModel {
    dim: usize,
    start: i64,
    center: Vec<NnColumn>,
    left: NnColumn,
    right: NnColumn,
}

impl LineModel {
    pub fn new(dim: usize, start: i64, center: Vec<NnColumn>, left: NnColumn, right: NnColumn) -> Result<Self> {
        let tol = Tolerances::default().tp_tol;
        for (k, c) in center.iter().chain([&left, &right]).enumerate() {
            if c.blocks().any(|b| b.dim() != dim) {
                return Err(Error::DimensionMismatch(format!("column entry {k} has blocks of the wrong size")));
            }
            let r = c.tp_residual(dim);
            if r > tol {
                return Err(Error::Invalid(format!("column entry {k} is not trace preserving (residual {r:.3e})")));
            }
        }
        Ok(LineModel { dim, start, center, left, right })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn column(&self, j: i64) -> &NnColumn {
        if j < self.start {
            &self.left
        } else {
            self.center.get((j - self.start) as usize).unwrap_or(&self.right)
        }
    }

    pub fn block(&self, i: i64, j: i64) -> Option<&KrausMap> {
        let c = self.column(j);
        match i - j {
            -1 => c.down.as_ref(),
            0 => c.stay.as_ref(),
            1 => c.up.as_ref(),
            _ => None,
        }
    }

    /// Finite TOM on sites `lo..=hi` (vertex `k` is site `lo + k`), dropping blocks that leave it.
    pub fn window_tom_range(&self, lo: i64, hi: i64) -> Tom {
        let n = (hi - lo + 1).max(0) as usize;
        let mut t = Tom::new((lo..=hi).map(|i| i.to_string()).collect(), self.dim);
        for j in lo..=hi {
            for i in (j - 1).max(lo)..=(j + 1).min(hi) {
                if let Some(b) = self.block(i, j) {
                    t.set_block((i - lo) as usize, (j - lo) as usize, b.clone()).expect("consistent dimension");
                }
            }
        }
        debug_assert_eq!(t.n(), n);
        t
    }

    /// Sites `−n..=n`; site 0 is vertex `n`.
    pub fn window_tom_centered(&self, n: usize) -> Tom {
        self.window_tom_range(-(n as i64), n as i64)
    }

    /// Sites `−n..=n` as a window; returns it with the index of site 0.
    fn window(&self, n: usize) -> (Window, usize) {
        let cols: Vec<&NnColumn> = (-(n as i64)..=n as i64).map(|j| self.column(j)).collect();
        (Window::from_columns(self.dim, &cols), n)
    }

    /// Largest `|j|` among explicit columns, so that columns beyond are tails.
    fn reach(&self) -> i64 {
        self.start.abs().max((self.start + self.center.len() as i64).abs()) + 1
    }
}

/// Parameters of the homogeneous chain with drift `λ` and internal channels
/// `Φ` (bulk), `Φ₊` (towards the origin), `Φ₀ + Φ₋` (at the origin).
#[derive(Debug, Clone, PartialEq)]
pub struct HomogeneousParams {
    lambda: f64,
    phi: KrausMap,
    phi_plus: KrausMap,
    phi_zero: KrausMap,
    phi_minus: KrausMap,
}

impl HomogeneousParams {
    pub fn new(lambda: f64, phi: KrausMap, phi_plus: KrausMap, phi_zero: KrausMap, phi_minus: KrausMap) -> Result<Self> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::Invalid(format!("λ = {lambda} must lie in (0, 1)")));
        }
        let d = phi.dim();
        if [&phi_plus, &phi_zero, &phi_minus].iter().any(|m| m.dim() != d) {
            return Err(Error::DimensionMismatch("internal channels must share one dimension".into()));
        }
        if !phi.is_trace_preserving() || !phi_plus.is_trace_preserving() {
            return Err(Error::Invalid("Φ and Φ₊ must be trace preserving".into()));
        }
        if !KrausMap::sum(d, [&phi_zero, &phi_minus]).is_trace_preserving() {
            return Err(Error::Invalid("Φ₀ + Φ₋ must be trace preserving".into()));
        }
        let cut = Tolerances::default().resolvent_min_sv;
        for (name, m) in [("Φ", &phi), ("Φ₊", &phi_plus), ("Φ₋", &phi_minus)] {
            let s = min_singular_value(&m.to_superop().matrix);
            if s < cut {
                return Err(Error::Invalid(format!("{name} is not invertible (σ_min = {s:.3e})")));
            }
        }
        Ok(HomogeneousParams { lambda, phi, phi_plus, phi_zero, phi_minus })
    }

    /// Random invertible internal channels; `Φ₀, Φ₋` are the two Kraus branches of one channel.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, d: usize, lambda: f64) -> Self {
        loop {
            let split = random::cptp(rng, d, 2);
            let p = HomogeneousParams::new(
                lambda,
                random::cptp(rng, d, 2),
                random::cptp(rng, d, 2),
                KrausMap::single(split.kraus()[0].clone()),
                KrausMap::single(split.kraus()[1].clone()),
            );
            if let Ok(p) = p {
                return p;
            }
        }
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        HomogeneousParams::new(
            lambda,
            self.phi.clone(),
            self.phi_plus.clone(),
            self.phi_zero.clone(),
            self.phi_minus.clone(),
        )
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn dim(&self) -> usize {
        self.phi.dim()
    }

    pub fn phi(&self) -> &KrausMap {
        &self.phi
    }

    pub fn phi_plus(&self) -> &KrausMap {
        &self.phi_plus
    }

    pub fn phi_zero(&self) -> &KrausMap {
        &self.phi_zero
    }

    pub fn phi_minus(&self) -> &KrausMap {
        &self.phi_minus
    }

    /// `Ψ = 4λ(1−λ)Φ̂²`.
    pub fn psi(&self) -> ComplexMatrix {
        let p = self.phi.to_superop().matrix;
        (&p * &p).scale(4.0 * self.lambda * (1.0 - self.lambda))
    }

    /// Half-line model: `ℰ₀⁰ = Φ₀`, `ℰ₁⁰ = Φ₋`, `ℰ₀¹ = λΦ₊`, and in the bulk
    /// `ℰ_{j−1}^j = λΦ`, `ℰ_{j+1}^j = (1−λ)Φ`.
    pub fn halfline(&self) -> HalfLineModel {
        let l = self.lambda;
        let d = self.dim();
        HalfLineModel::new(
            d,
            vec![
                NnColumn::new(None, Some(self.phi_zero.clone()), Some(self.phi_minus.clone())),
                NnColumn::new(Some(self.phi_plus.scaled(l)), None, Some(self.phi.scaled(1.0 - l))),
            ],
            NnColumn::new(Some(self.phi.scaled(l)), None, Some(self.phi.scaled(1.0 - l))),
        )
        .expect("valid parameters give a valid model")
    }

    /// Line model with `Φ₀` at the origin, which leaks `λΦ₋` to the left and `(1−λ)Φ₋` to the right;
    /// sites `∓1` return through `(1−λ)Φ₊` and `λΦ₊`.
    pub fn line(&self) -> LineModel {
        let l = self.lambda;
        let bulk = NnColumn::new(Some(self.phi.scaled(l)), None, Some(self.phi.scaled(1.0 - l)));
        LineModel::new(
            self.dim(),
            -1,
            vec![
                NnColumn::new(Some(self.phi.scaled(l)), None, Some(self.phi_plus.scaled(1.0 - l))),
                NnColumn::new(Some(self.phi_minus.scaled(l)), Some(self.phi_zero.clone()), Some(self.phi_minus.scaled(1.0 - l))),
                NnColumn::new(Some(self.phi_plus.scaled(l)), None, Some(self.phi.scaled(1.0 - l))),
            ],
            bulk.clone(),
            bulk,
        )
        .expect("valid parameters give a valid model")
    }
}

/// Superoperator blocks around one site: `diag = ℰᵢⁱ`, `up = ℰᵢ^{i+1}`, `down = ℰ_{i+1}^i`.
#[derive(Debug, Clone)]
pub struct NnBlocks {
    pub diag: ComplexMatrix,
    pub up: ComplexMatrix,
    pub down: ComplexMatrix,
}

impl NnBlocks {
    /// Blocks linking sites `i` and `i+1` of a half-line model.
    pub fn at(model: &HalfLineModel, i: usize) -> Self {
        let d = model.dim();
        NnBlocks {
            diag: superop(&model.column(i).stay, d),
            up: superop(&model.column(i + 1).down, d),
            down: superop(&model.column(i).up, d),
        }
    }
}

/// `f_{i+1}(z) = z⁻¹I − ℰ_{i+1}^i (f_i(z) − ℰᵢⁱ)⁻¹ ℰᵢ^{i+1}`.
pub fn iterate_schur(f: &ComplexMatrix, b: &NnBlocks, z: c64) -> Result<ComplexMatrix> {
    let n = f.nrows();
    if z.norm() == 0.0 {
        return Err(Error::SingularIterate("0".into()));
    }
    let g = f - &b.diag;
    let tol = Tolerances::default();
    if min_singular_value(&g) < tol.resolvent_min_sv {
        return Err(Error::SingularIterate(format!("{z}")));
    }
    let x = solve(&g, &b.up).map_err(|_| Error::SingularIterate(format!("{z}")))?;
    Ok(identity(n).map(|v| v / z) - &b.down * x)
}

/// `f_i(z) = ℰᵢⁱ + z ℰᵢ^{i+1} (I − z f_{i+1}(z))⁻¹ ℰ_{i+1}^i`.
pub fn assemble_f0(f_next: &ComplexMatrix, b: &NnBlocks, z: c64) -> Result<ComplexMatrix> {
    let n = f_next.nrows();
    let m = identity(n) - f_next.map(|v| v * z);
    if min_singular_value(&m) < Tolerances::default().resolvent_min_sv {
        return Err(Error::SingularIterate(format!("{z}")));
    }
    let x = solve(&m, &b.down)?;
    Ok(&b.diag + (&b.up * x).map(|v| v * z))
}

/// `f₁(z) = (2z)⁻¹(I − √(I − 4λ(1−λ)z²Φ̂²))` for the homogeneous tail.
pub fn closed_form_f1(params: &HomogeneousParams, z: c64) -> Result<ComplexMatrix> {
    let psi = params.psi();
    let n = psi.nrows();
    if z.norm() > 1.0 + 1e-12 {
        return Err(Error::Invalid(format!("|z| = {} exceeds 1", z.norm())));
    }
    let c = 4.0 * params.lambda * (1.0 - params.lambda);
    if c * z.norm_sqr() >= 1.0 - 1e-12 {
        return Err(Error::BranchCut(format!(
            "square root is singular at λ = {}, z = {z}; use the limit evaluation",
            params.lambda
        )));
    }
    let w = psi.map(|v| -v * z * z);
    if crate::densela::one_norm(&w) <= 0.5 {
        // Binomial series −½ Σ C(½,n) z^{2n−1} (−Ψ)ⁿ avoids the cancellation in (I − √…)/z.
        let mut term = identity(n);
        let mut acc = ComplexMatrix::zeros(n, n);
        let mut binom = 1.0;
        for k in 1..200 {
            binom *= (1.5 - k as f64) / k as f64;
            term = &term * &w;
            let add = term.scale(-0.5 * binom);
            let small = max_abs(&add) <= 1e-17 * max_abs(&acc).max(1e-300);
            acc += add;
            if small {
                break;
            }
        }
        return Ok(acc.map(|v| v / z));
    }
    let s = principal_sqrt(&(identity(n) - psi.map(|v| v * z * z)))?;
    Ok((identity(n) - s).map(|v| v / (2.0 * z)))
}

fn phi_inv(params: &HomogeneousParams) -> Result<ComplexMatrix> {
    crate::densela::inverse(&params.phi.to_superop().matrix)
}

/// Site-0 Schur function of the homogeneous half-line, `Φ₀ + λzΦ₊(I − zf₁)⁻¹Φ₋`.
pub fn closed_form_halfline_f(params: &HomogeneousParams, z: c64) -> Result<ComplexMatrix> {
    let f1 = closed_form_f1(params, z)?;
    let b = NnBlocks {
        diag: params.phi_zero.to_superop().matrix,
        up: params.phi_plus.to_superop().matrix.scale(params.lambda),
        down: params.phi_minus.to_superop().matrix,
    };
    assemble_f0(&f1, &b, z)
}

/// Site-0 Schur function of the homogeneous line, `Φ₀ + 2Φ₊Φ⁻¹f₁Φ⁻¹Φ₋`.
pub fn closed_form_line_f(params: &HomogeneousParams, z: c64) -> Result<ComplexMatrix> {
    let f1 = closed_form_f1(params, z)?;
    let pi = phi_inv(params)?;
    let fm = params.phi_plus.to_superop().matrix * &pi * f1 * &pi * params.phi_minus.to_superop().matrix;
    Ok(params.phi_zero.to_superop().matrix + fm.scale(2.0))
}

fn trace_of(v: &ComplexVector, d: usize) -> c64 {
    (0..d).map(|i| v[i * d + i]).sum()
}

fn check_density(rho: &ComplexMatrix, d: usize) -> Result<()> {
    if rho.shape() != (d, d) {
        return Err(Error::DimensionMismatch(format!("state must be {d}x{d}")));
    }
    crate::channels::DensityMatrix::new(rho.clone()).map(|_| ())
}

const SERIES_TERMS: usize = 10;

fn closed_report(pi: f64, tau: f64, series: (Vec<f64>, Vec<f64>)) -> RecurrenceReport {
    let recurrent = 1.0 - pi <= Tolerances::default().recurrence_tol;
    let tau = if recurrent { tau } else { f64::INFINITY };
    RecurrenceReport {
        pi,
        tau,
        recurrent,
        positive_recurrent: recurrent && tau.is_finite(),
        first_return: series.0,
        survival: series.1,
        method: Method::ClosedForm,
        min_singular_value: f64::NAN,
    }
}

/// Closed-form return probability and expected return time at site 0 or 1
/// of the homogeneous half-line, for a state `ρ` at that site.
pub fn halfline_site_metrics(params: &HomogeneousParams, site: usize, rho: &ComplexMatrix) -> Result<RecurrenceReport> {
    let d = params.dim();
    check_density(rho, d)?;
    let l = params.lambda;
    let model = params.halfline();
    let series = window_series(&model.window(site + SERIES_TERMS + 2), site, None, &vec(rho), d, SERIES_TERMS);
    match site {
        0 => {
            let t = params.phi_minus.apply(rho).trace().re;
            let pi = if l < 0.5 { 1.0 - (1.0 - 2.0 * l) / (1.0 - l) * t } else { 1.0 };
            let tau = if l > 0.5 { 1.0 + t / (2.0 * l - 1.0) } else { f64::INFINITY };
            Ok(closed_report(pi, tau, series))
        }
        1 => {
            let pi = if l < 0.5 { 2.0 * l } else { 1.0 };
            let tau = if l > 0.5 {
                let sup = params.phi_plus.to_superop().matrix;
                let a = identity(d * d) - params.phi_zero.to_superop().matrix;
                let rhs = sup * vec(rho);
                let x = solve(&a, &ComplexMatrix::from_column_slice(d * d, 1, rhs.as_slice()))?;
                l * (1.0 / (2.0 * l - 1.0) + trace_of(&x.column(0).into_owned(), d).re)
            } else {
                f64::INFINITY
            };
            Ok(closed_report(pi, tau, series))
        }
        _ => Err(Error::Invalid(format!("closed forms cover sites 0 and 1, not {site}"))),
    }
}

/// Closed-form recurrence data at site 0 of the homogeneous line.
pub fn line_site0_metrics(params: &HomogeneousParams, rho: &ComplexMatrix) -> Result<RecurrenceReport> {
    let d = params.dim();
    check_density(rho, d)?;
    let t = params.phi_minus.apply(rho).trace().re;
    let pi = 1.0 - (1.0 - 2.0 * params.lambda).abs() * t;
    let (w, m) = params.line().window(SERIES_TERMS + 2);
    let series = window_series(&w, m, None, &vec(rho), d, SERIES_TERMS);
    Ok(closed_report(pi, f64::INFINITY, series))
}

/// Line model rewritten on the half-line: folded site `i` carries original site `i`
/// (component 1) and `−i−1` (component 0) in an internal space of dimension `2d`,
/// with internal index `x·2 + component`.
pub fn fold_to_halfline(m: &LineModel) -> HalfLineModel {
    let d = m.dim;
    let unit = |a: usize, b: usize| {
        let mut e = ComplexMatrix::zeros(2, 2);
        e[(a, b)] = ONE;
        e
    };
    // Original site of component `a` at folded site `i`.
    let orig = |i: i64, a: usize| if a == 0 { -i - 1 } else { i };
    let fblock = |i: i64, j: i64| -> Option<KrausMap> {
        let mut ks = vec![];
        for a in 0..2 {
            for b in 0..2 {
                if let Some(e) = m.block(orig(i, a), orig(j, b)) {
                    ks.extend(e.kraus().iter().map(|k| kron(k, &unit(a, b))));
                }
            }
        }
        (!ks.is_empty()).then(|| KrausMap::new(2 * d, ks).expect("square"))
    };
    let column = |j: i64| {
        NnColumn::new((j > 0).then(|| fblock(j - 1, j)).flatten(), fblock(j, j), fblock(j + 1, j))
    };
    let reach = m.reach();
    let head = (0..=reach).map(column).collect();
    HalfLineModel::new(2 * d, head, column(reach + 1)).expect("folding preserves trace")
}

/// Internal projector of the folded site carrying the original site (component 1).
pub fn folded_projector(d: usize) -> ComplexMatrix {
    let mut e = ComplexMatrix::zeros(2, 2);
    e[(1, 1)] = ONE;
    kron(&identity(d), &e)
}

/// `ρ` on original site `i ≥ 0` as a state of folded site `i`.
pub fn fold_state(rho: &ComplexMatrix) -> ComplexMatrix {
    kron(rho, &folded_projector(1))
}

/// Explicit finite window of a nearest-neighbour chain, with absorbing edges.
struct Window {
    d: usize,
    stay: Vec<ComplexMatrix>,
    /// `up[j] = ℰ_{j+1}^j`; the last entry leaves the window and is ignored.
    up: Vec<ComplexMatrix>,
    /// `down[j] = ℰ_{j−1}^j`; the first entry leaves the window and is ignored.
    down: Vec<ComplexMatrix>,
}

impl Window {
    fn from_columns(d: usize, cols: &[&NnColumn]) -> Self {
        Window {
            d,
            stay: cols.iter().map(|c| superop(&c.stay, d)).collect(),
            up: cols.iter().map(|c| superop(&c.up, d)).collect(),
            down: cols.iter().map(|c| superop(&c.down, d)).collect(),
        }
    }

    fn len(&self) -> usize {
        self.stay.len()
    }

    fn apply(&self, x: &[ComplexVector]) -> Vec<ComplexVector> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut y = &self.stay[i] * &x[i];
                if i + 1 < n {
                    y += &self.down[i + 1] * &x[i + 1];
                }
                if i > 0 {
                    y += &self.up[i - 1] * &x[i - 1];
                }
                y
            })
            .collect()
    }
}

/// Monitoring at one site of a window: `p`, `q` are the superoperators `⌈P⌉`, `⌈Q⌉`
/// on that site (`p = I`, `q = 0` for whole-site monitoring).
struct Monitor {
    site: usize,
    p: ComplexMatrix,
    q: ComplexMatrix,
}

impl Monitor {
    fn new(site: usize, d: usize, projector: Option<&ComplexMatrix>) -> Self {
        match projector {
            None => Monitor { site, p: identity(d * d), q: ComplexMatrix::zeros(d * d, d * d) },
            Some(pr) => {
                let qr = identity(d) - pr;
                Monitor { site, p: kron(pr, &pr.conjugate()), q: kron(&qr, &qr.conjugate()) }
            }
        }
    }

    fn skip(&self, i: usize, v: ComplexVector) -> ComplexVector {
        if i == self.site {
            &self.q * v
        } else {
            v
        }
    }
}

/// Block LU of `I − 𝕢M` on a window.
struct BlockTridiag {
    /// Eliminated super-diagonal `C'ᵢ`.
    c: Vec<ComplexMatrix>,
    piv: Vec<nalgebra::linalg::LU<c64, nalgebra::Dyn, nalgebra::Dyn>>,
    lower: Vec<ComplexMatrix>,
}

impl BlockTridiag {
    fn new(w: &Window, mon: &Monitor) -> Result<Self> {
        let n = w.len();
        let d2 = w.d * w.d;
        let qm = |i: usize, m: &ComplexMatrix| if i == mon.site { &mon.q * m } else { m.clone() };
        let mut c = Vec::with_capacity(n);
        let mut piv = Vec::with_capacity(n);
        let mut lower = Vec::with_capacity(n);
        for i in 0..n {
            let diag = identity(d2) - qm(i, &w.stay[i]);
            let l = if i > 0 { -qm(i, &w.up[i - 1]) } else { ComplexMatrix::zeros(d2, d2) };
            let u = if i + 1 < n { -qm(i, &w.down[i + 1]) } else { ComplexMatrix::zeros(d2, d2) };
            let den = if i > 0 { diag - &l * &c[i - 1] } else { diag };
            let lu = den.lu();
            let ci = lu
                .solve(&u)
                .ok_or_else(|| Error::SingularIterate(format!("window elimination at site {i}")))?;
            c.push(ci);
            piv.push(lu);
            lower.push(l);
        }
        Ok(BlockTridiag { c, piv, lower })
    }

    fn solve(&self, b: &[ComplexVector]) -> Result<Vec<ComplexVector>> {
        let n = b.len();
        let mut y: Vec<ComplexVector> = Vec::with_capacity(n);
        for i in 0..n {
            let rhs = if i > 0 { &b[i] - &self.lower[i] * &y[i - 1] } else { b[i].clone() };
            y.push(
                self.piv[i]
                    .solve(&rhs)
                    .ok_or_else(|| Error::SingularIterate(format!("window solve at site {i}")))?,
            );
        }
        for i in (0..n.saturating_sub(1)).rev() {
            let next = y[i + 1].clone();
            y[i] -= &self.c[i] * next;
        }
        Ok(y)
    }
}

/// `(π_N, Σ n π_n^{(N)})` on a window.
fn window_values(w: &Window, mon: &Monitor, r: &ComplexVector) -> Result<(f64, f64)> {
    let n = w.len();
    let d = w.d;
    let lu = BlockTridiag::new(w, mon)?;
    let mut b = vec![ComplexVector::zeros(d * d); n];
    b[mon.site] = r.clone();
    let x = lu.solve(&b)?;
    let mx = w.apply(&x);
    let pi = trace_of(&(&mon.p * &mx[mon.site]), d).re;
    let v: Vec<ComplexVector> = mx.into_iter().enumerate().map(|(i, y)| mon.skip(i, y)).collect();
    let wv = lu.solve(&v)?;
    let mw = w.apply(&wv);
    let dpi = trace_of(&(&mon.p * &mw[mon.site]), d).re;
    Ok((pi, pi + dpi))
}

/// First-return probabilities `π₁..π_k` and survival `s₁..s_k`, exact while
/// the window contains every path of length `k`.
fn window_series(w: &Window, site: usize, projector: Option<&ComplexMatrix>, r: &ComplexVector, d: usize, k: usize) -> (Vec<f64>, Vec<f64>) {
    let mon = Monitor::new(site, d, projector);
    let mut v = vec![ComplexVector::zeros(d * d); w.len()];
    v[site] = r.clone();
    let mut pis = Vec::with_capacity(k);
    let mut surv = Vec::with_capacity(k);
    let mut acc = 0.0;
    for _ in 0..k {
        let y = w.apply(&v);
        let p = trace_of(&(&mon.p * &y[site]), d).re;
        acc += p;
        pis.push(p);
        surv.push(1.0 - acc);
        v = y.into_iter().enumerate().map(|(i, x)| mon.skip(i, x)).collect();
    }
    (pis, surv)
}

/// One window size of a truncation run.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct TruncationStep {
    pub n: usize,
    pub pi: f64,
    /// `Σ n πₙ` of the truncated chain.
    pub tau_partial: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Truncation {
    pub report: RecurrenceReport,
    pub steps: Vec<TruncationStep>,
    pub converged: bool,
    /// Whether `π` came from extrapolation in `1/N` rather than from raw convergence.
    pub extrapolated: bool,
}

/// Limit of `y(N) = a + b/(N + c)` through three samples.
fn hyperbolic_limit(s: &[TruncationStep]) -> Option<f64> {
    let [a, b, c] = s else { return None };
    let m = Matrix3::new(a.n as f64, -a.pi, 1.0, b.n as f64, -b.pi, 1.0, c.n as f64, -c.pi, 1.0);
    let rhs = Vector3::new(a.pi * a.n as f64, b.pi * b.n as f64, c.pi * c.n as f64);
    let x = m.lu().solve(&rhs)?;
    x[0].is_finite().then_some(x[0])
}

fn run_doubling(build: impl Fn(usize) -> (Window, usize), n0: usize, projector: Option<&ComplexMatrix>, r: &ComplexVector) -> Result<Truncation> {
    let tol = Tolerances::default();
    let mut steps: Vec<TruncationStep> = vec![];
    let mut n = n0.max(2);
    let mut pi_done: Option<(f64, bool)> = None;
    let mut last_est: Option<f64> = None;
    let mut tau: Option<f64> = None;
    loop {
        let (w, site) = build(n);
        let mon = Monitor::new(site, w.d, projector);
        let (pi, tp) = window_values(&w, &mon, r)?;
        steps.push(TruncationStep { n, pi, tau_partial: tp });
        let k = steps.len();
        if pi_done.is_none() && k >= 2 {
            if (pi - steps[k - 2].pi).abs() < tol.truncation_tol {
                pi_done = Some((pi, false));
            } else if k >= 3 {
                if let Some(est) = hyperbolic_limit(&steps[k - 3..]) {
                    if last_est.is_some_and(|e| (e - est).abs() < tol.truncation_tol * 1e-2) {
                        pi_done = Some((est.min(1.0), true));
                    }
                    last_est = Some(est);
                }
            }
        }
        if let Some((p, _)) = pi_done {
            if 1.0 - p > tol.recurrence_tol {
                tau = Some(f64::INFINITY);
            } else if k >= 2 {
                let inc = tp - steps[k - 2].tau_partial;
                if inc.abs() < tol.truncation_tol * tp.abs().max(1.0) {
                    tau = Some(tp);
                } else if k >= 3 {
                    let prev = steps[k - 2].tau_partial - steps[k - 3].tau_partial;
                    if prev > 0.0 && inc / prev > 0.9 {
                        tau = Some(f64::INFINITY);
                    }
                }
            }
        }
        if tau.is_some() || n * 2 > tol.truncation_max {
            break;
        }
        n *= 2;
    }
    let last = *steps.last().expect("at least one step");
    let converged = tau.is_some();
    let (pi, extrapolated) = pi_done.unwrap_or((last.pi, false));
    let recurrent = 1.0 - pi <= tol.recurrence_tol;
    let tau = if recurrent { tau.unwrap_or(last.tau_partial) } else { f64::INFINITY };
    let (w, site) = build(last.n);
    let d = w.d;
    let (w, site) = if w.len() > site + SERIES_TERMS + 1 { (w, site) } else { build(last.n.max(SERIES_TERMS + 2)) };
    let series = window_series(&w, site, projector, r, d, SERIES_TERMS);
    Ok(Truncation {
        report: RecurrenceReport {
            pi,
            tau,
            recurrent,
            positive_recurrent: recurrent && tau.is_finite(),
            first_return: series.0,
            survival: series.1,
            method: Method::Truncation,
            min_singular_value: f64::NAN,
        },
        steps,
        converged,
        extrapolated,
    })
}

/// Return data for `ρ` at `site` from absorbing truncations `0..N`, doubling `N`
/// from `n` until `π` (and `τ` when recurrent) settle or `N` exceeds the cap.
pub fn truncate_numeric(model: &HalfLineModel, n: usize, site: usize, rho: &ComplexMatrix) -> Result<Truncation> {
    truncate_monitored(model, n, site, None, rho)
}

/// As [`truncate_numeric`], monitoring only the range of `projector` inside the site.
pub fn truncate_monitored(
    model: &HalfLineModel,
    n: usize,
    site: usize,
    projector: Option<&ComplexMatrix>,
    rho: &ComplexMatrix,
) -> Result<Truncation> {
    if n < site + 2 {
        return Err(Error::Invalid(format!("window {n} must exceed site {site} by at least 2")));
    }
    check_density(rho, model.dim())?;
    if let Some(p) = projector {
        let out = rho - p * rho * p;
        if max_abs(&out) > Tolerances::default().support_tol {
            return Err(Error::StateOutsideSubspace(max_abs(&out)));
        }
    }
    run_doubling(|k| (model.window(k), site), n, projector, &vec(rho))
}

/// Truncation of a line model to sites `−N..=N` around an origin-relative `site`.
pub fn truncate_line(model: &LineModel, n: usize, site: i64, rho: &ComplexMatrix) -> Result<Truncation> {
    if (n as i64) < site.abs() + 2 {
        return Err(Error::Invalid(format!("window {n} must exceed |site| = {} by at least 2", site.abs())));
    }
    check_density(rho, model.dim())?;
    run_doubling(
        |k| {
            let (w, zero) = model.window(k);
            (w, (zero as i64 + site) as usize)
        },
        n,
        None,
        &vec(rho),
    )
}

/// For two symmetric unital half-line models that agree beyond column `site`,
/// checks that `π(ρ → |site⟩)` coincides.
pub fn symmetric_unital_invariance(a: &HalfLineModel, b: &HalfLineModel, site: usize, rho: &ComplexMatrix) -> Result<bool> {
    for (name, m) in [("first", a), ("second", b)] {
        if !m.is_symmetric() {
            return Err(Error::HypothesisViolated(format!("{name} model is not symmetric")));
        }
        if !m.is_unital() {
            return Err(Error::HypothesisViolated(format!("{name} model is not unital")));
        }
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch("models have different internal dimensions".into()));
    }
    let same = |x: &Option<KrausMap>, y: &Option<KrausMap>| {
        max_abs(&(superop(x, a.dim()) - superop(y, a.dim()))) <= 1e-10
    };
    let reach = a.head.len().max(b.head.len()) + 1;
    let differs = (site + 1..=reach).any(|j| {
        let (x, y) = (a.column(j), b.column(j));
        !(same(&x.down, &y.down) && same(&x.stay, &y.stay) && same(&x.up, &y.up))
    }) || !same(&a.column(site).up, &b.column(site).up);
    if differs {
        return Err(Error::HypothesisViolated(format!("models differ beyond column {site}")));
    }
    let n0 = (site + 2).max(reach + 2);
    let pa = truncate_numeric(a, n0, site, rho)?.report.pi;
    let pb = truncate_numeric(b, n0, site, rho)?.report.pi;
    Ok((pa - pb).abs() <= Tolerances::default().truncation_tol)
}

/// `Tr(F(ρ))` for a superoperator `F` on `d × d` matrices.
pub fn trace_applied(f: &ComplexMatrix, rho: &ComplexMatrix) -> c64 {
    let d = rho.nrows();
    trace_of(&(f * vec(rho)), d)
}
