//! Random instance generators for tests, property suites and benchmarks.

use rand::Rng;

use crate::channels::KrausMap;
use crate::densela::{c64, psd_sqrt, trace, ComplexMatrix, ComplexVector};

pub fn matrix<R: Rng + ?Sized>(rng: &mut R, r: usize, c: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(r, c, |_, _| c64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

pub fn vector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> ComplexVector {
    ComplexVector::from_fn(n, |_, _| c64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

pub fn unit_vector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> ComplexVector {
    let v = vector(rng, n);
    let nrm = v.norm();
    v.unscale(nrm)
}

/// Full-rank density matrix `GG*/Tr(GG*)`.
pub fn density<R: Rng + ?Sized>(rng: &mut R, d: usize) -> ComplexMatrix {
    let g = matrix(rng, d, d);
    let m = &g * g.adjoint();
    let t = trace(&m);
    m / t
}

/// Isometry `ℂᵏ → ℂᵈ` from the QR factorization of a random matrix.
pub fn isometry<R: Rng + ?Sized>(rng: &mut R, d: usize, k: usize) -> ComplexMatrix {
    assert!(k <= d);
    let q = matrix(rng, d, d).qr().q();
    q.columns(0, k).into_owned()
}

pub fn unitary<R: Rng + ?Sized>(rng: &mut R, d: usize) -> ComplexMatrix {
    isometry(rng, d, d)
}

/// Random CPTP map with `k` Kraus operators, normalized by `(ΣG*G)^{-1/2}`.
pub fn cptp<R: Rng + ?Sized>(rng: &mut R, d: usize, k: usize) -> KrausMap {
    let gs: Vec<ComplexMatrix> = (0..k).map(|_| matrix(rng, d, d)).collect();
    let mut s = ComplexMatrix::zeros(d, d);
    for g in &gs {
        s += g.adjoint() * g;
    }
    let inv = psd_sqrt(&s).try_inverse().expect("generic Kraus sets are full rank");
    KrausMap::new(d, gs.iter().map(|g| g * &inv).collect()).expect("square")
}

/// Random unital channel: a convex mixture of `k` random unitaries.
pub fn unital<R: Rng + ?Sized>(rng: &mut R, d: usize, k: usize) -> KrausMap {
    let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
    let tot: f64 = w.iter().sum();
    KrausMap::new(d, w.iter().map(|&p| unitary(rng, d).scale((p / tot).sqrt())).collect())
        .expect("square")
}

/// Random TOM on `n` numbered vertices whose blocks exist exactly where
/// `allowed(to, from)` holds; each column is one random CPTP map whose Kraus
/// operators are dealt out `kraus_per_block` at a time.
///
/// # Panics
/// If some column has no allowed target.
pub fn tom_with_pattern<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    d: usize,
    kraus_per_block: usize,
    allowed: impl Fn(usize, usize) -> bool,
) -> crate::tom::Tom {
    assert!(kraus_per_block > 0);
    let mut t = crate::tom::Tom::numbered(n, d);
    for j in 0..n {
        let targets: Vec<usize> = (0..n).filter(|&i| allowed(i, j)).collect();
        assert!(!targets.is_empty(), "column {j} has no allowed target");
        let col = cptp(rng, d, kraus_per_block * targets.len());
        for (k, &i) in targets.iter().enumerate() {
            let ks = col.kraus()[kraus_per_block * k..kraus_per_block * (k + 1)].to_vec();
            t.set_block(i, j, KrausMap::new(d, ks).expect("square")).expect("square blocks");
        }
    }
    t
}
