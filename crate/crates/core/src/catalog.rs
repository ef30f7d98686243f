//! Small reference models with known closed-form recurrence data.
//!
//! They double as regression fixtures and as the content of the bundled model files.

use crate::channels::KrausMap;
use crate::densela::{c64, from_real, from_rows, ComplexMatrix, ONE, ZERO};
use crate::tom::Tom;

fn pauli_x() -> ComplexMatrix {
    from_real(2, 2, &[0., 1., 1., 0.])
}

fn pauli_y() -> ComplexMatrix {
    let i = c64::new(0.0, 1.0);
    from_rows(2, 2, &[ZERO, -i, i, ZERO])
}

fn pauli_z() -> ComplexMatrix {
    from_real(2, 2, &[1., 0., 0., -1.])
}

fn kraus(ms: Vec<ComplexMatrix>) -> KrausMap {
    KrausMap::new(2, ms).expect("2x2 Kraus operators")
}

/// Two-vertex open quantum walk on `ℂ²` with parameters `p, q ∈ (0,1)`.
///
/// Irreducible for every choice of parameters, unital exactly when `p = 2q`.
/// Its stationary state is `q/(2q+p)·I⊗|1⟩⟨1| + p/(2(2q+p))·I⊗|2⟩⟨2|`.
pub fn two_vertex_walk(p: f64, q: f64) -> Tom {
    let id = ComplexMatrix::identity(2, 2);
    let sp = p.sqrt() / 2.0;
    let e11 = kraus(vec![id.scale(0.5 * (4.0 - 3.0 * p).sqrt()), pauli_x().scale(sp)]);
    let e21 = kraus(vec![pauli_y().scale(sp), pauli_z().scale(sp)]);
    let sq = (q / 2.0).sqrt();
    let e12 = kraus(vec![
        from_real(2, 2, &[1., 1., 0., 0.]).scale(sq),
        from_real(2, 2, &[0., 0., 1., -1.]).scale(sq),
    ]);
    let s3 = ((1.0 - q) / 3.0).sqrt();
    let e22 = kraus(vec![
        from_real(2, 2, &[1., 1., 0., 1.]).scale(s3),
        from_real(2, 2, &[1., 0., -1., 1.]).scale(s3),
    ]);
    Tom::numbered(2, 2)
        .with_block(0, 0, e11)
        .with_block(1, 0, e21)
        .with_block(0, 1, e12)
        .with_block(1, 1, e22)
}

/// Irreducible qubit channel whose stationary state
/// `¼[[3, (6+√6)/5], [(6+√6)/5, 1]]` is not diagonal in the computational basis.
pub fn two_kraus_qubit() -> KrausMap {
    let (a, b) = (1.0 / 3f64.sqrt(), 1.0 / 2f64.sqrt());
    kraus(vec![from_real(2, 2, &[a, b, a, 0.]), from_real(2, 2, &[a, -b, 0., 0.])])
}

/// Three-vertex TOM on `ℂ²` whose blocks from vertices 2 and 3 into vertices
/// 1 and 2 factor through a single CPTP vector, while `ℰ₃¹ = 0`.
///
/// Vertex indices in the returned TOM are 0-based (labels "1", "2", "3").
pub fn three_vertex_factorizable() -> Tom {
    let id = ComplexMatrix::identity(2, 2);
    let r = |x: f64| x.sqrt();
    let e11 = kraus(vec![id.scale(r(5.0 / 8.0)), pauli_x().scale(r(1.0 / 8.0))]);
    let e21 = kraus(vec![pauli_y().scale(r(1.0 / 8.0)), pauli_z().scale(r(1.0 / 8.0))]);
    let e12 = kraus(vec![from_real(2, 2, &[0., 0., 1., 0.]).scale(r(1.0 / 6.0))]);
    let e22 = kraus(vec![from_real(2, 2, &[r(1.0 / 6.0), r(2.0 / 3.0), 0., 0.])]);
    let e32 = kraus(vec![from_real(2, 2, &[1., 0., -1., 1.]).scale(r(1.0 / 3.0))]);
    let e13 = kraus(vec![from_real(2, 2, &[0., 0., r(2.0 / 3.0), -r(1.0 / 6.0)])]);
    let e23 = kraus(vec![from_real(2, 2, &[0., 1., 0., 0.]).scale(r(1.0 / 6.0))]);
    let e33 = kraus(vec![from_real(2, 2, &[1., 1., 0., 1.]).scale(r(1.0 / 3.0))]);
    Tom::numbered(3, 2)
        .with_block(0, 0, e11)
        .with_block(1, 0, e21)
        .with_block(0, 1, e12)
        .with_block(1, 1, e22)
        .with_block(2, 1, e32)
        .with_block(0, 2, e13)
        .with_block(1, 2, e23)
        .with_block(2, 2, e33)
}

/// `e_i` in `ℂᵈ`.
pub fn basis(d: usize, i: usize) -> crate::densela::ComplexVector {
    crate::densela::ComplexVector::from_fn(d, |k, _| if k == i { ONE } else { ZERO })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels;
    use crate::densela::max_abs;

    #[test]
    fn fixtures_are_valid() {
        for (p, q) in [(0.4, 0.3), (0.5, 0.25), (0.9, 0.1)] {
            let t = two_vertex_walk(p, q);
            assert!(t.validate().valid);
            assert!(t.is_irreducible());
            assert_eq!(t.embed_cptp().is_unital(), (p - 2.0 * q).abs() < 1e-12);
        }
        assert!(two_kraus_qubit().is_trace_preserving());
        let t = three_vertex_factorizable();
        assert!(t.validate().valid);
        assert!(!t.has_block(2, 0));
    }

    #[test]
    fn two_vertex_walk_stationary_state() {
        let (p, q) = (0.4, 0.3);
        let chi = channels::invariant_states(&two_vertex_walk(p, q).embed_cptp()).unwrap();
        assert_eq!(chi.len(), 1);
        let s = 2.0 * q + p;
        let expect = from_real(4, 4, &[
            q / s, 0., 0., 0., 0., p / (2.0 * s), 0., 0., 0., 0., q / s, 0., 0., 0., 0., p / (2.0 * s),
        ]);
        assert!(max_abs(&(chi[0].matrix() - expect)) < 1e-10);
    }
}
