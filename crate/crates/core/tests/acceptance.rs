//! Acceptance criteria. Each criterion prints one `PASS`/`FAIL` line with its
//! measured error and runtime; the test fails if any criterion fails.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use qmcr::chains1d::{
    fold_state, fold_to_halfline, folded_projector, halfline_site_metrics, trace_applied, truncate_line, truncate_monitored,
    truncate_numeric, HomogeneousParams,
};
use qmcr::channels::{self, KrausMap};
use qmcr::densela::{identity, max_abs, trace_norm};
use qmcr::mcsim::{self, TrajectoryConfig};
use qmcr::model::{mixed_on, Model, ModelFile};
use qmcr::random;
use qmcr::recurrence::{
    expected_return_time, kac_correction, unital_quantization_check, LimitPolicy, MonitoredSystem, SubspaceSpec,
};
use qmcr::splitting::{
    build_decomposition, detect_factorization, factor_rank1, overlap_schur, split_metrics_decomposition,
    split_metrics_factorization, CpVector, EqualSplit, Partition,
};
use qmcr::tom::{Tom, TomDensity};
use qmcr::{c64, ComplexMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

fn models() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

fn load(name: &str) -> ModelFile {
    ModelFile::load(&models().join(name)).expect("bundled model parses")
}

fn finite(file: &ModelFile, params: &[(&str, f64)]) -> Tom {
    let p: BTreeMap<String, f64> = params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    match file.bind(&p).expect("binds") {
        Model::Finite(t) => t,
        _ => panic!("finite model expected"),
    }
}

/// Tracks the largest error seen against a tolerance.
struct Worst {
    tol: f64,
    err: f64,
    at: String,
}

impl Worst {
    fn new(tol: f64) -> Self {
        Worst { tol, err: 0.0, at: String::new() }
    }

    fn check(&mut self, what: impl Into<String>, got: f64, want: f64) {
        let e = if got.is_infinite() && want.is_infinite() && got.signum() == want.signum() {
            0.0
        } else {
            (got - want).abs()
        };
        if e.is_nan() || e > self.err {
            self.err = if e.is_nan() { f64::INFINITY } else { e };
            self.at = format!("{}: got {got}, want {want}", what.into());
        }
    }

    fn verdict(&self, label: &str) -> Verdict {
        if self.err <= self.tol {
            Ok(format!("{label}; max error {:.2e} ≤ {:.0e}", self.err, self.tol))
        } else {
            Err(format!("{label}; max error {:.2e} > {:.0e} at {}", self.err, self.tol, self.at))
        }
    }
}

fn within(elapsed: Duration, limit: Duration, v: Verdict) -> Verdict {
    let t = format!("{:.2} s (limit {} s)", elapsed.as_secs_f64(), limit.as_secs());
    match v {
        Ok(m) if elapsed <= limit => Ok(format!("{m}; {t}")),
        Ok(m) => Err(format!("{m}; too slow: {t}")),
        Err(m) => Err(format!("{m}; {t}")),
    }
}

fn site_tau(file: &ModelFile, t: &Tom, subspace: &str, state: Option<&str>) -> f64 {
    let h0 = file.subspace(subspace).unwrap();
    let rho = state.map_or_else(|| mixed_on(&h0), |s| file.state_density(s).unwrap());
    let sys = MonitoredSystem::for_tom(t, &h0).unwrap();
    let r = sys.report(&rho, 0, LimitPolicy::Auto).unwrap();
    assert!(r.recurrent, "{subspace}/{state:?} not recurrent");
    r.tau
}

fn pure_tau(file: &ModelFile, t: &Tom, state: &str) -> f64 {
    let psi = file.state_vector(state).unwrap();
    let sys = MonitoredSystem::for_tom(t, &SubspaceSpec::pure(&psi)).unwrap();
    expected_return_time(&sys, &(&psi * psi.adjoint())).unwrap()
}

fn criterion_1() -> Verdict {
    let file = load("two_vertex_walk.json");
    let mut w = Worst::new(1e-9);
    let start = Instant::now();
    for (p, q) in [(0.4, 0.3), (0.5, 0.25), (0.6, 0.3)] {
        let t = finite(&file, &[("p", p), ("q", q)]);
        let at = |s: &str| format!("(p,q)=({p},{q}) {s}");
        w.check(at("site 1"), site_tau(&file, &t, "site_1", None), 1.0 + p / (2.0 * q));
        w.check(at("site 2"), site_tau(&file, &t, "site_2", None), 1.0 + 2.0 * q / p);
        for s in ["psi_0", "psi_plus"] {
            w.check(at(s), pure_tau(&file, &t, s), 2.0 + p / q);
        }
        let k1 = 1.0 + (6.0 * p + 11.0 * q + 1.0) / (3.0 * (1.0 + 3.0 * q));
        let k2 = 1.0 + ((1.0 - q) * (3.0 * p + 4.0 * q)) / (3.0 * p * (1.0 + 3.0 * q));
        let kk = 1.0 + (2.0 * p + 2.0 * q + 3.0 * p * p - 2.0 * q * q + 4.0 * p * q) / (3.0 * p * (1.0 + 3.0 * q));
        w.check(at("psi_1 -> K"), site_tau(&file, &t, "K", Some("psi_1")), k1);
        w.check(at("psi_2 -> K"), site_tau(&file, &t, "K", Some("psi_2")), k2);
        w.check(at("K -> K"), site_tau(&file, &t, "K", None), kk);
        let d = 2.0 / (3.0 * p * (2.0 + q + 2.0 * q * q))
            * (10.0 * p + 4.0 * q + 2.0 * p * p - 2.0 * q * q + 3.0 * p * q + 4.0 * q.powi(3) + p * p * q + 8.0 * p * q * q);
        w.check(at("two-site psi"), pure_tau(&file, &t, "psi_split"), d);
        if (p - 2.0 * q).abs() < 1e-15 {
            w.check(at("unital psi_0"), pure_tau(&file, &t, "psi_0"), 4.0);
            w.check(at("unital psi_plus"), pure_tau(&file, &t, "psi_plus"), 4.0);
            w.check(at("unital K -> K"), site_tau(&file, &t, "K", None), 2.0);
        }
    }
    within(start.elapsed(), Duration::from_secs(1), w.verdict("two-vertex walk, 3 parameter pairs, 8 return times each"))
}

fn criterion_2() -> Verdict {
    let file = load("kac_qubit.json");
    let t = finite(&file, &[]);
    let emb = t.embed_cptp();
    let chi = channels::invariant_states(&emb).unwrap().remove(0);
    let k = kac_correction(&emb, chi.matrix(), &file.state_vector("plus").unwrap()).unwrap();
    let r6 = 6f64.sqrt();
    let mut w = Worst::new(1e-10);
    w.check("tau", k.tau, 2.0 * (21.0 - r6) / 29.0);
    w.check("ideal", k.ideal, 20.0 / (16.0 + r6));
    w.check("correction", k.correction, 1.0 + (8.0 + r6) / 58.0);
    w.check("ideal·correction", k.ideal * k.correction, k.tau);
    w.verdict("Kac qubit: τ, ideal, correction and their product")
}

fn criterion_3() -> Verdict {
    let file = load("three_vertex.json");
    let t = finite(&file, &[]);
    let mut w = Worst::new(1e-10);
    // Coefficients factor through the columns of vertices 2 and 3 into vertices 1 and 2.
    let cols: Vec<CpVector> = [1usize, 2]
        .iter()
        .map(|&j| CpVector { components: [0usize, 1].iter().map(|&i| t.block(i, j).cloned().unwrap()).collect() })
        .collect();
    let f = factor_rank1(&cols).ok_or("no rank-one factorization")?;
    let r10 = 10f64.sqrt();
    let a1 = ComplexMatrix::from_row_slice(2, 2, &[0.0, 0.0, 3.0, -1.0].map(|x| c64::new(x / r10, 0.0)));
    let a2 = ComplexMatrix::from_row_slice(2, 2, &[1.0, 3.0, 0.0, 0.0].map(|x| c64::new(x / r10, 0.0)));
    let comp = |k: usize| f.u.components[k].to_superop().matrix;
    let as_super = |a: &ComplexMatrix| KrausMap::single(a.clone()).to_superop().matrix;
    w.check("A1", max_abs(&(comp(0) - as_super(&a1))), 0.0);
    w.check("A2", max_abs(&(comp(1) - as_super(&a2))), 0.0);
    let rank1 = w.verdict("A₁, A₂")?;

    let p = Partition::new(vec![0], vec![1], vec![2]);
    let fac = detect_factorization(&t, &p).ok_or("factorization not detected")?;
    let mut wz = Worst::new(1e-9);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for k in 0..10 {
        let z = c64::from_polar(rng.random_range(0.0..0.95), rng.random_range(0.0..std::f64::consts::TAU));
        let whole = overlap_schur(&t, &[1], z).unwrap();
        let prod = overlap_schur(&fac.left, &[1], z).unwrap() * overlap_schur(&fac.right, &[0], z).unwrap();
        wz.check(format!("z[{k}]={z}"), max_abs(&(whole - prod)), 0.0);
    }
    let product = wz.verdict("f = f_L·f_R at 10 points")?;

    let mut wt = Worst::new(1e-8);
    let mut wr = Worst::new(1e-8);
    let h0 = SubspaceSpec::sites(3, 2, &[1]);
    let sys = MonitoredSystem::for_tom(&t, &h0).unwrap();
    for k in 0..20 {
        let rho = random::density(&mut rng, 2);
        let full = TomDensity::at_site(3, 1, rho.clone());
        let tau = expected_return_time(&sys, &full.to_full()).unwrap();
        wt.check(format!("ρ[{k}]"), tau, 3.0 + 2.0 * rho[(0, 0)].re - 3.5 * rho[(0, 1)].re);
        let m = split_metrics_factorization(&t, &fac, &full).unwrap();
        wr.check(format!("factorization rule ρ[{k}] π"), m.pi_residual, 0.0);
        wr.check(format!("factorization rule ρ[{k}] τ"), m.tau_residual.unwrap_or(f64::INFINITY), 0.0);
    }
    let tau = wt.verdict("τ(ρ→|2⟩) for 20 states")?;
    let rule = wr.verdict("factorization rule for π and τ")?;
    Ok(format!("{rank1}; {product}; {tau}; {rule}"))
}

fn criterion_4() -> Verdict {
    let start = Instant::now();
    let mut w = Worst::new(1e-6);
    let mut max_n = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for set in 0..3 {
        let base = HomogeneousParams::random(&mut rng, 2, 0.5);
        for lambda in [0.2, 0.35, 0.65, 0.8] {
            let params = base.with_lambda(lambda).unwrap();
            let model = params.halfline();
            let rho = random::density(&mut rng, 2);
            for site in [0usize, 1] {
                let exact = halfline_site_metrics(&params, site, &rho).unwrap();
                let tr = truncate_numeric(&model, 16, site, &rho).unwrap();
                max_n = max_n.max(tr.steps.last().unwrap().n);
                let at = format!("set {set} λ={lambda} site {site}");
                w.check(format!("{at} π"), tr.report.pi, exact.pi);
                w.check(format!("{at} τ"), tr.report.tau, exact.tau);
            }
        }
    }
    let mut v = w.verdict(&format!("3 random coin sets × 4 λ × sites 0,1; largest N {max_n}"));
    if max_n > 1024 {
        v = Err(format!("{}; truncation needed N = {max_n} > 1024", v.unwrap_or_else(|e| e)));
    }
    within(start.elapsed(), Duration::from_secs(30), v)
}

fn criterion_5() -> Verdict {
    let mut w = Worst::new(1e-6);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let base = HomogeneousParams::random(&mut rng, 2, 0.5);
    let mut null_ok = true;
    for lambda in [0.3, 0.5, 0.7] {
        let params = base.with_lambda(lambda).unwrap();
        let line = params.line();
        let rho = random::density(&mut rng, 2);
        let t_minus = trace_applied(&params.phi_minus().to_superop().matrix, &rho).re;
        let direct = truncate_line(&line, 16, 0, &rho).unwrap();
        w.check(format!("λ={lambda} π"), direct.report.pi, 1.0 - (1.0 - 2.0 * lambda).abs() * t_minus);
        let folded = fold_to_halfline(&line);
        let via_fold = truncate_monitored(&folded, 16, 0, Some(&folded_projector(2)), &fold_state(&rho)).unwrap();
        w.check(format!("λ={lambda} folded π"), via_fold.report.pi, direct.report.pi);
        w.check(format!("λ={lambda} folded τ"), via_fold.report.tau, direct.report.tau);
        if lambda == 0.5 {
            null_ok = direct.report.recurrent && direct.report.tau.is_infinite() && !direct.report.positive_recurrent;
        }
    }
    let v = w.verdict("line model at λ = 0.3, 0.5, 0.7, direct and folded");
    match (v, null_ok) {
        (Ok(m), true) => Ok(format!("{m}; λ=0.5 recurrent with τ = ∞")),
        (Ok(m), false) => Err(format!("{m}; λ=0.5 not classified null recurrent")),
        (Err(m), _) => Err(m),
    }
}

/// Runs `f` on 500 seeded instances through proptest and reports the first failure.
fn suite(name: &str, f: impl Fn(u64) -> Result<(), TestCaseError>) -> Result<String, String> {
    let t0 = Instant::now();
    let config = Config { cases: 500, failure_persistence: None, ..Config::default() };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&any::<u64>(), f).map(|_| format!("{name} ok in {:.2} s", t0.elapsed().as_secs_f64())).map_err(|e| format!("{name}: {e}"))
}

fn random_h0(rng: &mut ChaCha8Rng, dim: usize) -> SubspaceSpec {
    let k = rng.random_range(1..dim);
    SubspaceSpec::General { isometry: random::isometry(rng, dim, k) }
}

fn state_in(rng: &mut ChaCha8Rng, h0: &SubspaceSpec) -> ComplexMatrix {
    let SubspaceSpec::General { isometry } = h0 else { unreachable!() };
    let s = random::density(rng, isometry.ncols());
    isometry * s * isometry.adjoint()
}

/// `‖f(0)ρ‖₁` for the Hadamard channel watching `|0⟩` from `ρ = |0⟩⟨0|`. The
/// image `|+⟩⟨+|` minus its `Q`-corner has trace norm √5/2, so `f` itself is not
/// a trace-norm contraction: `X ↦ X − QXQ` is not a positive map.
fn hadamard_counterexample() -> f64 {
    let h = ComplexMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, -1.0].map(|x| c64::new(x / 2f64.sqrt(), 0.0)));
    let e0 = ComplexMatrix::from_row_slice(2, 1, &[c64::new(1.0, 0.0), c64::new(0.0, 0.0)]);
    let sys = MonitoredSystem::for_channel(&KrausMap::single(h), &SubspaceSpec::General { isometry: e0.clone() }).unwrap();
    let rho = &e0 * e0.adjoint();
    trace_norm(&sys.devectorize(&(sys.schur_eval(c64::new(0.0, 0.0)).unwrap() * sys.vectorize(&rho))))
}

fn criterion_6() -> Verdict {
    let start = Instant::now();
    let contract = suite("Schur contractivity", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.random_range(2..=4);
        let phi = { let r = rng.random_range(1..=3); random::cptp(&mut rng, d, r) };
        let h0 = random_h0(&mut rng, d);
        let sys = MonitoredSystem::for_channel(&phi, &h0).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let z = c64::from_polar(rng.random_range(0.0..0.99), rng.random_range(0.0..std::f64::consts::TAU));
        let f = sys.schur_eval(z).map_err(|e| TestCaseError::fail(e.to_string()))?;
        // positive elements of ran(I−𝕢) are exactly the states supported on H₀
        let rho = state_in(&mut rng, &h0);
        let out = sys.devectorize(&(&f * sys.vectorize(&rho)));
        let (lhs, rhs) = (trace_norm(&out), trace_norm(&rho));
        prop_assert!(lhs <= rhs + 1e-9, "‖f(z)X‖₁ = {lhs} > ‖X‖₁ = {rhs}");
        Ok(())
    });
    let reduced = suite("reduced Schur contractivity", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.random_range(2..=4);
        let phi = { let r = rng.random_range(1..=3); random::cptp(&mut rng, d, r) };
        let h0 = random_h0(&mut rng, d);
        let sys = MonitoredSystem::for_channel(&phi, &h0).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let z = c64::from_polar(rng.random_range(0.0..0.99), rng.random_range(0.0..std::f64::consts::TAU));
        let f = sys.reduced_schur_eval(z).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let rho = state_in(&mut rng, &h0);
        let out = sys.devectorize(&(&f * sys.vectorize(&rho)));
        prop_assert!(trace_norm(&out) <= 1.0 + 1e-9, "‖𝔽(z)ρ‖₁ = {}", trace_norm(&out));
        Ok(())
    });
    let renewal = suite("renewal identity", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.random_range(2..=4);
        let phi = { let r = rng.random_range(1..=3); random::cptp(&mut rng, d, r) };
        let h0 = random_h0(&mut rng, d);
        let sys = MonitoredSystem::for_channel(&phi, &h0).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let n = sys.size();
        let z = c64::from_polar(rng.random_range(0.0..0.9), rng.random_range(0.0..std::f64::consts::TAU));
        // measured step: project onto H₀ or its complement, then evolve
        let measured = (sys.keep() + sys.skip()) * sys.transfer();
        let g = (identity(n) - measured * z).try_inverse().ok_or_else(|| TestCaseError::fail("singular"))?;
        let g = sys.keep() * g * sys.keep();
        let big_f = sys.reduced_schur_eval(z).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let err = max_abs(&((sys.keep() - big_f * z) * g - sys.keep()));
        prop_assert!(err < 1e-9, "renewal residual {err}");
        Ok(())
    });
    let telescope = suite("series telescoping", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.random_range(2..=4);
        let phi = { let r = rng.random_range(1..=3); random::cptp(&mut rng, d, r) };
        let h0 = random_h0(&mut rng, d);
        let rho = state_in(&mut rng, &h0);
        let sys = MonitoredSystem::for_channel(&phi, &h0).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let r = sys.state_vector(&rho).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let pis = sys.first_return_series(&r, 40);
        let s = sys.survival_series(&r, 40);
        let mut acc = 0.0;
        for n in 0..=40 {
            if n > 0 {
                acc += pis[n - 1];
            }
            prop_assert!((acc + s[n] - 1.0).abs() < 1e-10, "N={n}: Σπ + s = {}", acc + s[n]);
        }
        Ok(())
    });
    let decomposition = suite("decomposition rules", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(3..=5);
        let d = rng.random_range(1..=2);
        let mut labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        labels[0] = 0;
        labels[1] = 1;
        labels[2] = 2;
        let part = |c| (0..n).filter(|&i| labels[i] == c).collect::<Vec<_>>();
        let p = Partition::new(part(0), part(1), part(2));
        let t = random::tom_with_pattern(&mut rng, n, d, 2, |i, j| {
            !((labels[i] == 0 && labels[j] == 2) || (labels[i] == 2 && labels[j] == 0))
        });
        let dec = build_decomposition(&t, &p, &EqualSplit).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let mut rho = TomDensity::zeros(n, d);
        let w: Vec<f64> = p.zero.iter().map(|_| rng.random_range(0.1..1.0)).collect();
        let tot: f64 = w.iter().sum();
        for (k, &v) in p.zero.iter().enumerate() {
            rho.blocks[v] = random::density(&mut rng, d).scale(w[k] / tot);
        }
        let m = split_metrics_decomposition(&t, &dec, &rho).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert!(m.pi_residual <= 1e-7, "π residual {}", m.pi_residual);
        let tr = m.tau_residual.ok_or_else(|| TestCaseError::fail("infinite τ on an irreducible instance"))?;
        prop_assert!(tr <= 1e-7 * m.tau.max(1.0), "τ residual {tr}");
        Ok(())
    });
    let positive = suite("positive recurrence of irreducible TOMs", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=4);
        let d = rng.random_range(1..=3);
        let density = rng.random_range(0.4..1.0);
        let mask: Vec<bool> = (0..n * n).map(|_| rng.random_bool(density)).collect();
        let t = random::tom_with_pattern(&mut rng, n, d, 2, |i, j| mask[i * n + j] || (i + 1) % n == j);
        prop_assume!(t.is_irreducible());
        let dim = n * d;
        if dim < 2 {
            return Ok(());
        }
        let h0 = if rng.random_bool(0.5) {
            random_h0(&mut rng, dim)
        } else {
            let sites: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.5)).collect();
            if sites.is_empty() { SubspaceSpec::sites(n, d, &[0]) } else { SubspaceSpec::sites(n, d, &sites) }
        };
        let rho = match &h0 {
            SubspaceSpec::General { .. } => state_in(&mut rng, &h0),
            _ => mixed_on(&h0),
        };
        let sys = MonitoredSystem::for_tom(&t, &h0).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let r = sys.report(&rho, 0, LimitPolicy::Auto).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert!(r.positive_recurrent, "π = {}, τ = {}", r.pi, r.tau);
        Ok(())
    });
    let contract = contract.map_err(|e| {
        format!(
            "{e} [the bound fails for f(z) itself: Hadamard channel, H₀ = span|0⟩, ρ = |0⟩⟨0|, z = 0 gives ‖f(0)ρ‖₁ = {:.6} = √5/2 > 1; \
             the reduced 𝔽(z) = 𝕡ΦR(z)𝕡 is contractive ({})]",
            hadamard_counterexample(),
            reduced.as_deref().unwrap_or_else(|e| e)
        )
    });
    let parts = [contract, renewal, telescope, decomposition, positive];
    let v = if parts.iter().all(|r| r.is_ok()) {
        Ok(format!("5 suites × 500 instances: {}", parts.iter().map(|r| r.as_ref().unwrap().as_str()).collect::<Vec<_>>().join(", ")))
    } else {
        Err(parts.iter().filter_map(|r| r.as_ref().err().cloned()).collect::<Vec<_>>().join("; "))
    };
    within(start.elapsed(), Duration::from_secs(60), v)
}

fn criterion_7() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut w = Worst::new(1e-7);
    for case in 0..100 {
        // Half the channels are direct sums of two unitary mixtures, whose relevant
        // space is the block the subspace lives in.
        let reducible = case % 2 == 1;
        let d = rng.random_range(if reducible { 3..=6 } else { 2..=6 });
        let (phi, relevant, iso) = if reducible {
            let d1 = rng.random_range(1..d - 1).max(2).min(d - 1);
            let (a, b) = (random::unital(&mut rng, d1, 3), random::unital(&mut rng, d - d1, 3));
            let mut ks = vec![];
            for (ka, kb) in a.kraus().iter().zip(b.kraus()) {
                let mut m = ComplexMatrix::zeros(d, d);
                m.view_mut((0, 0), (d1, d1)).copy_from(ka);
                m.view_mut((d1, d1), (d - d1, d - d1)).copy_from(kb);
                ks.push(m);
            }
            let k = rng.random_range(1..=d1);
            let mut iso = ComplexMatrix::zeros(d, k);
            iso.view_mut((0, 0), (d1, k)).copy_from(&random::isometry(&mut rng, d1, k));
            (KrausMap::new(d, ks).unwrap(), d1, iso)
        } else {
            let k = rng.random_range(1..d);
            (random::unital(&mut rng, d, 3), d, random::isometry(&mut rng, d, k))
        };
        let k = iso.ncols();
        let q = unital_quantization_check(&phi, &SubspaceSpec::General { isometry: iso }).unwrap();
        w.check(format!("case {case} d={d} k={k}"), q.computed, relevant as f64 / k as f64);
    }
    w.verdict("100 unital channels (d ≤ 6), averaged τ = dim relevant / dim subspace")
}

fn mc_check(w: &mut Worst, what: &str, est: f64, se: f64, exact: f64) -> String {
    let z = (est - exact).abs() / se;
    w.check(what, z, 0.0);
    format!("{what} {est:.4}±{se:.4} vs {exact:.4}")
}

fn criterion_8() -> Verdict {
    let start = Instant::now();
    let mut w = Worst::new(3.0);
    let mut notes = vec![];
    let cfg = TrajectoryConfig::new(100_000, 400, 8).unwrap();

    let file = load("two_vertex_walk.json");
    let (p, q) = (0.4, 0.3);
    let t = finite(&file, &[("p", p), ("q", q)]);
    let h0 = file.subspace("site_1").unwrap();
    let e = mcsim::estimate(&t.embed_cptp(), &h0.projector(), &mixed_on(&h0), &cfg).unwrap();
    notes.push(mc_check(&mut w, "two-vertex τ(site 1)", e.tau, e.tau_se, 1.0 + p / (2.0 * q)));
    let again = mcsim::estimate(&t.embed_cptp(), &h0.projector(), &mixed_on(&h0), &cfg).unwrap();
    let deterministic = again == e;

    let kac = load("kac_qubit.json");
    let phi = finite(&kac, &[]).embed_cptp();
    let psi = kac.state_vector("plus").unwrap();
    let rho = &psi * psi.adjoint();
    let e = mcsim::estimate(&phi, &rho, &rho, &cfg).unwrap();
    notes.push(mc_check(&mut w, "Kac qubit τ", e.tau, e.tau_se, 2.0 * (21.0 - 6f64.sqrt()) / 29.0));

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let params = HomogeneousParams::random(&mut rng, 2, 0.3);
    let rho = random::density(&mut rng, 2);
    let e = mcsim::estimate_halfline(&params.halfline(), 1, &rho, &cfg).unwrap();
    let exact = halfline_site_metrics(&params, 1, &rho).unwrap().pi;
    notes.push(mc_check(&mut w, "half-line λ=0.3 π(site 1)", e.pi, e.pi_se, exact));
    notes.push(format!("censored {:.4}", e.censored_fraction));

    let v = w.verdict(&format!("10⁵ shots, worst deviation in standard errors ({})", notes.join(", ")));
    let v = match (v, deterministic) {
        (Ok(m), true) => Ok(format!("{m}; reruns identical")),
        (Ok(m), false) => Err(format!("{m}; rerun with the same seed differs")),
        (e, _) => e,
    };
    within(start.elapsed(), Duration::from_secs(60), v)
}

/// Mean return time to each state of a column-stochastic chain by plain first-step
/// analysis: `h = 1 + Σ_{k≠i} P(k←j) h_k` solved by Gaussian elimination.
#[allow(clippy::needless_range_loop)]
fn classical_return_times(p: &[Vec<f64>]) -> Vec<f64> {
    let n = p.len();
    (0..n)
        .map(|i| {
            // hitting times m_j of i from j ≠ i
            let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let m = others.len();
            let mut a = vec![vec![0.0; m + 1]; m];
            for (r, &j) in others.iter().enumerate() {
                a[r][r] = 1.0;
                for (c, &k) in others.iter().enumerate() {
                    a[r][c] -= p[k][j];
                }
                a[r][m] = 1.0;
            }
            for c in 0..m {
                let piv = (c..m).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
                a.swap(c, piv);
                for r in 0..m {
                    if r != c {
                        let f = a[r][c] / a[c][c];
                        for k in c..=m {
                            a[r][k] -= f * a[c][k];
                        }
                    }
                }
            }
            let hit: Vec<f64> = (0..m).map(|r| a[r][m] / a[r][r]).collect();
            1.0 + others.iter().enumerate().map(|(r, &k)| p[k][i] * hit[r]).sum::<f64>()
        })
        .collect()
}

#[allow(clippy::needless_range_loop)]
fn criterion_9() -> Verdict {
    let mut w = Worst::new(1e-10);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for case in 0..20 {
        let (a, b) = (rng.random_range(0.05..0.95), rng.random_range(0.05..0.95));
        let t = Tom::from_stochastic(&[vec![1.0 - a, b], vec![a, 1.0 - b]]).unwrap();
        // stationary law (b, a)/(a+b); Kac: τᵢ = 1/πᵢ
        for (i, pi_i) in [(0, b / (a + b)), (1, a / (a + b))] {
            let h0 = SubspaceSpec::sites(2, 1, &[i]);
            let r = MonitoredSystem::for_tom(&t, &h0).unwrap().report(&mixed_on(&h0), 0, LimitPolicy::Auto).unwrap();
            w.check(format!("2-state case {case} site {i} τ"), r.tau, 1.0 / pi_i);
            w.check(format!("2-state case {case} site {i} π"), r.pi, 1.0);
        }
    }
    for case in 0..20 {
        let n = rng.random_range(3..=6);
        let mut p = vec![vec![0.0; n]; n];
        for j in 0..n {
            let col: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = col.iter().sum();
            for i in 0..n {
                p[i][j] = col[i] / s;
            }
        }
        let t = Tom::from_stochastic(&p).unwrap();
        let oracle = classical_return_times(&p);
        for i in 0..n {
            let h0 = SubspaceSpec::sites(n, 1, &[i]);
            let r = MonitoredSystem::for_tom(&t, &h0).unwrap().report(&mixed_on(&h0), 0, LimitPolicy::Auto).unwrap();
            w.check(format!("{n}-state case {case} site {i} τ"), r.tau, oracle[i]);
        }
    }
    let file = load("birth_death.json");
    let pval = 0.3;
    let t = finite(&file, &[("p", pval)]);
    let probs: Vec<Vec<f64>> = (0..3)
        .map(|i| (0..3).map(|j| t.block(i, j).map_or(0.0, |b| b.kraus().iter().map(|k| k[(0, 0)].norm_sqr()).sum())).collect())
        .collect();
    let oracle = classical_return_times(&probs);
    for (i, &want) in oracle.iter().enumerate() {
        let h0 = SubspaceSpec::sites(3, 1, &[i]);
        let r = MonitoredSystem::for_tom(&t, &h0).unwrap().report(&mixed_on(&h0), 0, LimitPolicy::Auto).unwrap();
        w.check(format!("birth-death site {i}"), r.tau, want);
    }
    // detailed balance puts mass p/(1+p) on the middle site
    w.check("birth-death site 2 closed form", oracle[1], (1.0 + pval) / pval);
    w.verdict("d = 1 chains against first-step analysis and Kac's lemma")
}

#[test]
fn acceptance() {
    type Criterion = (&'static str, fn() -> Verdict);
    let criteria: [Criterion; 9] = [
        ("two-vertex walk regression", criterion_1),
        ("Kac regression", criterion_2),
        ("factorization regression", criterion_3),
        ("half-line closed form vs truncation", criterion_4),
        ("line model and folding", criterion_5),
        ("property suites", criterion_6),
        ("unital quantization", criterion_7),
        ("Monte Carlo cross-validation", criterion_8),
        ("classical reduction", criterion_9),
    ];
    let mut failed = vec![];
    for (k, (name, f)) in criteria.iter().enumerate() {
        let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match v {
            Ok(m) => println!("PASS {} {name}: {m}", k + 1),
            Err(m) => {
                println!("FAIL {} {name}: {m}", k + 1);
                failed.push(k + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
