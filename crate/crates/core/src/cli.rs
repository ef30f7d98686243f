//! Command-line front end. [`run`] parses arguments, dispatches and returns the
//! text for stdout and stderr with the exit code, so it can be driven in-process.
//!
//! Exit codes: 0 success, 2 invalid input or failed validation, 3 numerical
//! non-convergence, 1 anything else.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::chains1d::{truncate_line, truncate_numeric, HalfLineModel, LineModel, Truncation};
use crate::channels;
use crate::config::Tolerances;
use crate::densela::{c64, ComplexMatrix};
use crate::error::{Error, Result};
use crate::mcsim::{self, TrajectoryConfig};
use crate::model::{matrix_to_raw, mixed_local, mixed_on, Model, ModelFile, Topology};
use crate::recurrence::{kac_correction, LimitPolicy, MonitoredSystem, SubspaceSpec};
use crate::report::{inputs_digest, num, Report};
use crate::splitting::{
    admits_decomposition, admits_factorization_shape, build_decomposition, detect_decompositions, detect_factorization,
    split_metrics_decomposition, split_metrics_factorization, EqualSplit, Partition,
};
use crate::tom::{Tom, TomDensity};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NO_CONVERGENCE: i32 = 3;

/// Largest vertex count for the exhaustive factorization search.
const FACTORIZATION_SEARCH_LIMIT: usize = 14;

#[derive(Debug, Parser)]
#[command(name = "qmcr", version, about = "Monitored recurrence for quantum channels and quantum Markov chains")]
pub struct Cli {
    /// Leave out the timestamp so identical inputs give byte-identical reports.
    #[arg(long, global = true)]
    pub no_timestamp: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Model file (JSON).
    pub model: PathBuf,
    /// Parameter binding NAME=VALUE, overriding the file default. Repeatable.
    #[arg(long = "param", value_name = "NAME=VALUE")]
    pub params: Vec<String>,
}

#[derive(Debug, Args)]
pub struct Target {
    /// Named return subspace from the model file.
    #[arg(long, conflicts_with = "site")]
    pub subspace: Option<String>,
    /// Return to a whole vertex (finite label or integer chain site).
    #[arg(long)]
    pub site: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    /// Solve at z = 1 when the resolvent is well conditioned, else extrapolate.
    Solve,
    /// Always extrapolate z → 1.
    Extrapolate,
    /// Truncation of a chain model (the default for chains).
    Truncate,
    /// Monte Carlo unraveling.
    Mc,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check trace preservation, complete positivity, irreducibility and unitality.
    Validate {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Return probability, expected return time and first-return/survival series.
    Recur {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        target: Target,
        /// Named initial state (default: maximally mixed on the return subspace).
        #[arg(long)]
        state: Option<String>,
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        /// Number of series terms to report.
        #[arg(long, default_value_t = 10)]
        terms: usize,
        /// Initial truncation size for chain models.
        #[arg(long, default_value_t = 16)]
        window: usize,
        #[arg(long, default_value_t = 100_000)]
        shots: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        max_steps: usize,
    },
    /// Reduced Schur function at one point of the unit disc.
    Schur {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        target: Target,
        /// Point z as RE,IM.
        #[arg(long, allow_hyphen_values = true)]
        z: String,
        /// Window size used for chain models.
        #[arg(long, default_value_t = 12)]
        window: usize,
    },
    /// Detect or verify overlapping splittings.
    Split {
        #[command(flatten)]
        model: ModelArgs,
        /// Search all partitions (the default).
        #[arg(long, conflicts_with = "verify")]
        detect: bool,
        /// Check the splitting described in a JSON file.
        #[arg(long, value_name = "FILE")]
        verify: Option<PathBuf>,
        /// Named state on the overlap (default: maximally mixed on the overlap).
        #[arg(long)]
        state: Option<String>,
    },
    /// Kac's formula with its correction factor for a pure state.
    Kac {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        state: String,
    },
    /// CSV of π and τ over a parameter range given as `--param NAME=START:STOP:STEP`.
    Sweep {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        site: String,
        #[arg(long)]
        state: Option<String>,
        #[arg(long, default_value_t = 16)]
        window: usize,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

/// What a command printed and how it ended.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NoConvergence(_) => EXIT_NO_CONVERGENCE,
        Error::Invalid(_)
        | Error::DimensionMismatch(_)
        | Error::NotProjector(_)
        | Error::StateOutsideSubspace(_)
        | Error::StateOutsideOverlap
        | Error::BadWeights(_)
        | Error::InvalidPartition(_) => EXIT_INVALID,
        _ => EXIT_OTHER,
    }
}

pub fn run<I, T>(args: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                Outcome { code: EXIT_INVALID, stderr: text, ..Default::default() }
            } else {
                Outcome { code: EXIT_OK, stdout: text, ..Default::default() }
            };
        }
    };
    let echo = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match dispatch(&cli, echo) {
        Ok(o) => o,
        Err(e) => Outcome { code: exit_code(&e), stderr: format!("error: {e}\n"), ..Default::default() },
    }
}

struct Loaded {
    file: ModelFile,
    params: BTreeMap<String, f64>,
    digest: String,
}

fn parse_binding(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Invalid(format!("--param `{s}`: expected NAME=VALUE")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::Invalid(format!("{what}: `{s}` is not a number")))
}

fn load(args: &ModelArgs, skip_ranges: bool) -> Result<Loaded> {
    let bytes = std::fs::read(&args.model).map_err(|e| Error::Invalid(format!("{}: {e}", args.model.display())))?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| Error::Invalid(format!("{}: not UTF-8", args.model.display())))?;
    let file = ModelFile::from_json(&text).map_err(|e| match e {
        Error::Invalid(m) => Error::Invalid(format!("{}: {m}", args.model.display())),
        other => other,
    })?;
    let mut over = BTreeMap::new();
    for b in &args.params {
        let (k, v) = parse_binding(b)?;
        if skip_ranges && v.contains(':') {
            continue;
        }
        over.insert(k.clone(), parse_f64(&v, &format!("--param {k}"))?);
    }
    let params = file.parameters_with(&over)?;
    let digest = inputs_digest(&bytes, &params);
    Ok(Loaded { file, params, digest })
}

fn bind(l: &Loaded) -> Result<Model> {
    l.file.bind(&l.params)
}

fn finish(cli: &Cli, echo: Vec<String>, digest: String, results: Value, diagnostics: Vec<String>, code: i32) -> Outcome {
    let mut r = Report::new(echo, digest, results);
    r.diagnostics = diagnostics;
    if !cli.no_timestamp {
        r = r.stamped();
    }
    Outcome { code, stdout: r.to_json() + "\n", stderr: String::new() }
}

fn dispatch(cli: &Cli, echo: Vec<String>) -> Result<Outcome> {
    match &cli.command {
        Command::Validate { model } => {
            let l = load(model, false)?;
            let (results, diags, ok) = validate(&l);
            Ok(finish(cli, echo, l.digest, results, diags, if ok { EXIT_OK } else { EXIT_INVALID }))
        }
        Command::Recur { model, target, state, method, terms, window, shots, seed, max_steps } => {
            let l = load(model, false)?;
            let mc = TrajectoryConfig::new(*shots, *max_steps, *seed)?;
            let (results, diags, code) = match bind(&l)? {
                Model::Finite(t) => recur_finite(&l.file, &t, target, state.as_deref(), *method, *terms, &mc)?,
                Model::HalfLine(m) => recur_chain(&l.file, Chain::Half(&m), target, state.as_deref(), *method, *window, &mc)?,
                Model::Line(m) => recur_chain(&l.file, Chain::Full(&m), target, state.as_deref(), *method, *window, &mc)?,
            };
            Ok(finish(cli, echo, l.digest, results, diags, code))
        }
        Command::Schur { model, target, z, window } => {
            let l = load(model, false)?;
            let z = parse_z(z)?;
            let (results, diags) = schur(&l, target, z, *window)?;
            Ok(finish(cli, echo, l.digest, results, diags, EXIT_OK))
        }
        Command::Split { model, detect: _, verify, state } => {
            let l = load(model, false)?;
            let Model::Finite(t) = bind(&l)? else {
                return Err(Error::Invalid("split works on finite models".into()));
            };
            let (results, diags, ok) = match verify {
                Some(path) => split_verify(&l.file, &t, path, state.as_deref())?,
                None => split_detect(&l.file, &t, state.as_deref())?,
            };
            Ok(finish(cli, echo, l.digest, results, diags, if ok { EXIT_OK } else { EXIT_INVALID }))
        }
        Command::Kac { model, state } => {
            let l = load(model, false)?;
            let Model::Finite(t) = bind(&l)? else {
                return Err(Error::Invalid("kac works on finite models".into()));
            };
            let emb = t.embed_cptp();
            if !channels::is_irreducible(&emb) {
                return Err(Error::NotIrreducible);
            }
            let chi = channels::invariant_states(&emb)?.remove(0);
            let psi = l.file.state_vector(state)?;
            let k = kac_correction(&emb, chi.matrix(), &psi)?;
            let results = json!({
                "state": state,
                "ideal": num(k.ideal),
                "correction": num(k.correction),
                "tau": num(k.tau),
                "stationary_state": matrix_to_raw(chi.matrix()),
            });
            Ok(finish(cli, echo, l.digest, results, vec![], EXIT_OK))
        }
        Command::Sweep { model, site, state, window, output } => sweep(model, site, state.as_deref(), *window, output.as_deref()),
    }
}

fn validate(l: &Loaded) -> (Value, Vec<String>, bool) {
    let base = json!({"topology": l.file.topology, "internal_dim": l.file.internal_dim});
    let model = match bind(l) {
        Ok(m) => m,
        Err(e) => {
            let mut v = base;
            v["valid"] = json!(false);
            v["error"] = json!(e.to_string());
            return (v, vec![e.to_string()], false);
        }
    };
    let tol = Tolerances::default().tp_tol;
    let mut diags = vec![];
    let mut v = base;
    let ok = match model {
        Model::Finite(t) => {
            let rep = t.validate();
            for (j, r) in rep.column_residuals.iter().enumerate() {
                if *r > tol {
                    diags.push(format!("column `{}` is not trace preserving (residual {r:.3e})", t.vertices()[j]));
                }
            }
            let emb = t.embed_cptp();
            v["vertices"] = json!(t.vertices());
            v["column_residuals"] = json!(rep.column_residuals);
            v["completely_positive"] = json!(rep
                .block_cp
                .iter()
                .map(|((i, j), cp)| json!({"block": format!("{}<-{}", t.vertices()[*i], t.vertices()[*j]), "cp": cp}))
                .collect::<Vec<_>>());
            v["trace_preserving"] = json!(rep.column_residuals.iter().all(|r| *r <= tol));
            v["substochastic"] = json!(rep.substochastic);
            v["irreducible"] = json!(rep.valid && channels::is_irreducible(&emb));
            v["unital"] = json!(emb.is_unital());
            rep.valid
        }
        Model::HalfLine(m) => {
            v["columns"] = json!((0..=m.head().len()).map(|j| m.column(j).tp_residual(m.dim())).collect::<Vec<_>>());
            v["trace_preserving"] = json!(true);
            v["unital"] = json!(m.is_unital());
            v["symmetric"] = json!(m.is_symmetric());
            v["offdiagonal_invertible"] = json!(m.offdiagonal_invertible());
            true
        }
        Model::Line(_) => {
            v["trace_preserving"] = json!(true);
            true
        }
    };
    v["valid"] = json!(ok);
    (v, diags, ok)
}

fn finite_target(file: &ModelFile, target: &Target, state: Option<&str>) -> Result<(SubspaceSpec, String)> {
    if let Some(s) = &target.subspace {
        return Ok((file.subspace(s)?, format!("subspace {s}")));
    }
    if let Some(s) = &target.site {
        return Ok((file.site_subspace(s)?, format!("site {s}")));
    }
    if let Some(s) = state {
        let v = file.state_vector(s).map_err(|e| {
            Error::Invalid(format!("{e}; a return target needs --subspace, --site or a pure --state"))
        })?;
        return Ok((SubspaceSpec::pure(&v), format!("state {s}")));
    }
    Err(Error::Invalid("give a return target with --subspace, --site or --state".into()))
}

fn recur_finite(
    file: &ModelFile,
    t: &Tom,
    target: &Target,
    state: Option<&str>,
    method: Option<MethodArg>,
    terms: usize,
    mc: &TrajectoryConfig,
) -> Result<(Value, Vec<String>, i32)> {
    let (h0, label) = finite_target(file, target, state)?;
    h0.validate()?;
    let rho = match state {
        Some(s) => file.state_density(s)?,
        None => mixed_on(&h0),
    };
    let mut v = json!({
        "target": label,
        "subspace_dim": h0.dim(),
        "state": state.unwrap_or("maximally-mixed"),
    });
    let mut diags = vec![];
    if state.is_none() {
        diags.push("τ for the maximally mixed state is the averaged return time of the subspace".into());
    }
    match method.unwrap_or(MethodArg::Solve) {
        MethodArg::Mc => {
            let e = mcsim::estimate(&t.embed_cptp(), &h0.projector(), &rho, mc)?;
            v["method"] = json!("monte-carlo");
            v["seed"] = json!(mc.seed);
            v["estimate"] = serde_json::to_value(&e).expect("serializable");
            v["first_return"] = json!(e.first_return().into_iter().take(terms).collect::<Vec<_>>());
        }
        MethodArg::Truncate => return Err(Error::Invalid("--method truncate applies to chain models".into())),
        m => {
            let policy = if m == MethodArg::Extrapolate { LimitPolicy::ForceExtrapolate } else { LimitPolicy::Auto };
            let sys = MonitoredSystem::for_tom(t, &h0)?;
            let r = sys.report(&rho, terms, policy)?;
            merge(&mut v, serde_json::to_value(&r).expect("serializable"));
        }
    }
    Ok((v, diags, EXIT_OK))
}

enum Chain<'a> {
    Half(&'a HalfLineModel),
    Full(&'a LineModel),
}

impl Chain<'_> {
    fn dim(&self) -> usize {
        match self {
            Chain::Half(m) => m.dim(),
            Chain::Full(m) => m.dim(),
        }
    }

    fn truncate(&self, window: usize, site: i64, rho: &ComplexMatrix) -> Result<Truncation> {
        match self {
            Chain::Half(m) => {
                let s = usize::try_from(site).map_err(|_| Error::Invalid("half-line sites are non-negative".into()))?;
                truncate_numeric(m, window.max(s + 2), s, rho)
            }
            Chain::Full(m) => truncate_line(m, window.max(site.unsigned_abs() as usize + 2), site, rho),
        }
    }
}

fn parse_site(s: &str) -> Result<i64> {
    s.trim().parse().map_err(|_| Error::Invalid(format!("--site: chain sites are integers, got `{s}`")))
}

fn chain_state(file: &ModelFile, d: usize, site: Option<&str>, state: Option<&str>) -> Result<(i64, ComplexMatrix)> {
    let site = site.map(parse_site).transpose()?;
    match state {
        Some(name) => {
            let (s, rho) = file.chain_state(name)?;
            if let Some(x) = site.filter(|&x| x != s) {
                return Err(Error::Invalid(format!("state `{name}` lives at site {s}, not {x}")));
            }
            Ok((s, rho))
        }
        None => Ok((site.unwrap_or(0), mixed_local(d))),
    }
}

fn truncation_value(tr: &Truncation) -> Value {
    let mut v = serde_json::to_value(&tr.report).expect("serializable");
    v["converged"] = json!(tr.converged);
    v["extrapolated"] = json!(tr.extrapolated);
    v["truncation"] = json!(tr
        .steps
        .iter()
        .map(|s| json!({"n": s.n, "pi": num(s.pi), "tau_partial": num(s.tau_partial)}))
        .collect::<Vec<_>>());
    v
}

fn recur_chain(
    file: &ModelFile,
    chain: Chain<'_>,
    target: &Target,
    state: Option<&str>,
    method: Option<MethodArg>,
    window: usize,
    mc: &TrajectoryConfig,
) -> Result<(Value, Vec<String>, i32)> {
    if target.subspace.is_some() {
        return Err(Error::Invalid("chain models return to a site; use --site".into()));
    }
    let (site, rho) = chain_state(file, chain.dim(), target.site.as_deref(), state)?;
    let mut v = json!({"site": site, "state": state.unwrap_or("maximally-mixed")});
    match method.unwrap_or(MethodArg::Truncate) {
        MethodArg::Mc => {
            let Chain::Half(m) = chain else {
                return Err(Error::Invalid("Monte Carlo on line models is not supported; fold the model first".into()));
            };
            let e = mcsim::estimate_halfline(m, site as usize, &rho, mc)?;
            v["method"] = json!("monte-carlo");
            v["seed"] = json!(mc.seed);
            v["estimate"] = serde_json::to_value(&e).expect("serializable");
            Ok((v, vec![], EXIT_OK))
        }
        MethodArg::Truncate => {
            let tr = chain.truncate(window, site, &rho)?;
            merge(&mut v, truncation_value(&tr));
            let mut diags = vec![];
            let code = if tr.converged {
                EXIT_OK
            } else {
                diags.push("truncation did not settle before the size cap".into());
                EXIT_NO_CONVERGENCE
            };
            Ok((v, diags, code))
        }
        _ => Err(Error::Invalid("chain models support --method truncate or mc".into())),
    }
}

fn merge(v: &mut Value, extra: Value) {
    if let (Value::Object(a), Value::Object(b)) = (v, extra) {
        a.extend(b);
    }
}

fn parse_z(s: &str) -> Result<c64> {
    let (re, im) = s.split_once(',').unwrap_or((s, "0"));
    let z = c64::new(parse_f64(re.trim(), "--z")?, parse_f64(im.trim(), "--z")?);
    if z.norm() > 1.0 {
        return Err(Error::Invalid(format!("--z: |z| = {} lies outside the closed unit disc", z.norm())));
    }
    Ok(z)
}

fn schur(l: &Loaded, target: &Target, z: c64, window: usize) -> Result<(Value, Vec<String>)> {
    let (t, h0, label, diags) = match bind(l)? {
        Model::Finite(t) => {
            let (h0, label) = finite_target(&l.file, target, None)?;
            (t, h0, label, vec![])
        }
        model => {
            let site = parse_site(target.site.as_deref().unwrap_or("0"))?;
            let (t, vertex) = match model {
                Model::HalfLine(m) => {
                    let s = usize::try_from(site).map_err(|_| Error::Invalid("half-line sites are non-negative".into()))?;
                    (m.window_tom(window.max(s + 2)), s)
                }
                Model::Line(m) => {
                    let n = window.max(site.unsigned_abs() as usize + 2);
                    (m.window_tom_centered(n), (n as i64 + site) as usize)
                }
                Model::Finite(_) => unreachable!(),
            };
            let h0 = SubspaceSpec::sites(t.n(), t.dim(), &[vertex]);
            let note = format!("chain truncated to a window of {} sites", t.n());
            (t, h0, format!("site {site}"), vec![note])
        }
    };
    let sys = MonitoredSystem::for_tom(&t, &h0)?;
    let f = sys.reduced_schur_eval(z)?;
    let layout = sys.layout_name();
    let results = json!({
        "target": label,
        "z": [z.re, z.im],
        "subspace_dim": h0.dim(),
        "dim": f.nrows(),
        "layout": layout,
        "matrix": matrix_to_raw(&f),
    });
    Ok((results, diags))
}

fn labels(t: &Tom, idx: &[usize]) -> Vec<String> {
    idx.iter().map(|&i| t.vertices()[i].clone()).collect()
}

fn partition_value(t: &Tom, p: &Partition) -> Value {
    json!({"minus": labels(t, &p.minus), "zero": labels(t, &p.zero), "plus": labels(t, &p.plus)})
}

fn overlap_state(file: &ModelFile, t: &Tom, p: &Partition, state: Option<&str>) -> Result<TomDensity> {
    let full = match state {
        Some(s) => file.state_density(s)?,
        None => mixed_on(&SubspaceSpec::sites(t.n(), t.dim(), &p.zero)),
    };
    TomDensity::from_full(&full, t.n(), t.dim())
}

fn decomposition_value(file: &ModelFile, t: &Tom, p: &Partition, state: Option<&str>, diags: &mut Vec<String>) -> Result<(Value, bool)> {
    let dec = build_decomposition(t, p, &EqualSplit)?;
    let residual = dec.reconstruction_residual(t);
    let mut v = json!({"kind": "decomposition", "partition": partition_value(t, p), "reconstruction_residual": residual});
    let mut ok = residual <= 1e-9;
    match split_metrics_decomposition(t, &dec, &overlap_state(file, t, p, state)?) {
        Ok(m) => {
            ok &= m.holds;
            v["metrics"] = serde_json::to_value(m).expect("serializable");
        }
        Err(e) => diags.push(format!("decomposition {}: metrics unavailable: {e}", v["partition"])),
    }
    Ok((v, ok))
}

fn factorization_value(file: &ModelFile, t: &Tom, p: &Partition, state: Option<&str>, diags: &mut Vec<String>) -> Result<Option<(Value, bool)>> {
    let Some(fac) = detect_factorization(t, p) else { return Ok(None) };
    let residual = fac.reconstruction_residual(t);
    let mut v = json!({"kind": "factorization", "partition": partition_value(t, p), "reconstruction_residual": residual});
    let mut ok = residual <= 1e-9;
    match split_metrics_factorization(t, &fac, &overlap_state(file, t, p, state)?) {
        Ok(m) => {
            ok &= m.holds;
            v["metrics"] = serde_json::to_value(&m).expect("serializable");
        }
        Err(e) => diags.push(format!("factorization {}: metrics unavailable: {e}", v["partition"])),
    }
    Ok(Some((v, ok)))
}

fn split_detect(file: &ModelFile, t: &Tom, state: Option<&str>) -> Result<(Value, Vec<String>, bool)> {
    let mut diags = vec![];
    let mut decompositions = vec![];
    let mut ok = true;
    for p in detect_decompositions(t)? {
        let (v, good) = decomposition_value(file, t, &p, state, &mut diags)?;
        ok &= good;
        decompositions.push(v);
    }
    let mut factorizations = vec![];
    let n = t.n();
    if n > FACTORIZATION_SEARCH_LIMIT {
        diags.push(format!("factorization search skipped above {FACTORIZATION_SEARCH_LIMIT} vertices"));
    } else {
        for v0 in 0..n {
            let rest: Vec<usize> = (0..n).filter(|&i| i != v0).collect();
            for mask in 1..(1u32 << rest.len()) - 1 {
                let (minus, plus): (Vec<usize>, Vec<usize>) =
                    rest.iter().enumerate().fold((vec![], vec![]), |(mut a, mut b), (k, &i)| {
                        if mask >> k & 1 == 1 { a.push(i) } else { b.push(i) }
                        (a, b)
                    });
                let p = Partition::new(minus, vec![v0], plus);
                if !admits_factorization_shape(t, &p) || admits_decomposition(t, &p) {
                    continue;
                }
                if let Some((v, good)) = factorization_value(file, t, &p, state, &mut diags)? {
                    ok &= good;
                    factorizations.push(v);
                }
            }
        }
        diags.push(
            "factorizations are searched for single-vertex overlaps with rank-one coefficients only; \
             no decision procedure for general CP-vector rank is used"
                .into(),
        );
    }
    let results = json!({
        "vertices": t.vertices(),
        "decompositions": decompositions,
        "factorizations": factorizations,
    });
    Ok((results, diags, ok))
}

#[derive(Debug, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitFile {
    kind: String,
    #[serde(default)]
    minus: Vec<String>,
    zero: Vec<String>,
    #[serde(default)]
    plus: Vec<String>,
}

fn split_verify(file: &ModelFile, t: &Tom, path: &Path, state: Option<&str>) -> Result<(Value, Vec<String>, bool)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
    let s: SplitFile = serde_json::from_str(&text).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
    let idx = |key: &str, ls: &[String]| -> Result<Vec<usize>> {
        ls.iter()
            .enumerate()
            .map(|(k, l)| {
                t.index_of(l)
                    .ok_or_else(|| Error::Invalid(format!("{}: {key}[{k}]: unknown vertex `{l}`", path.display())))
            })
            .collect()
    };
    let p = Partition::new(idx("minus", &s.minus)?, idx("zero", &s.zero)?, idx("plus", &s.plus)?);
    p.validate(t.n())?;
    let mut diags = vec![];
    let (v, ok) = match s.kind.as_str() {
        "decomposition" => {
            if !admits_decomposition(t, &p) {
                let v = json!({"kind": "decomposition", "partition": partition_value(t, &p), "admissible": false});
                diags.push("blocks connect the two sides outside the overlap".into());
                (v, false)
            } else {
                decomposition_value(file, t, &p, state, &mut diags)?
            }
        }
        "factorization" => match factorization_value(file, t, &p, state, &mut diags)? {
            Some(r) => r,
            None => {
                diags.push("no rank-one factorization exists for this partition".into());
                (json!({"kind": "factorization", "partition": partition_value(t, &p), "admissible": false}), false)
            }
        },
        other => {
            return Err(Error::Invalid(format!(
                "{}: kind: expected \"decomposition\" or \"factorization\", got `{other}`",
                path.display()
            )))
        }
    };
    Ok((json!({"verified": ok, "splitting": v}), diags, ok))
}

/// `START:STOP:STEP`, inclusive of STOP up to rounding.
pub fn parse_range(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let [a, b, h] = parts[..] else {
        return Err(Error::Invalid(format!("range `{s}`: expected START:STOP:STEP")));
    };
    let (a, b, h) = (parse_f64(a, "range start")?, parse_f64(b, "range stop")?, parse_f64(h, "range step")?);
    if h.is_nan() || h <= 0.0 || b < a {
        return Err(Error::Invalid(format!("range `{s}`: need STEP > 0 and STOP ≥ START")));
    }
    let n = ((b - a) / h + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| ((a + k as f64 * h) * 1e12).round() / 1e12).collect())
}

fn csv_num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        num(x).as_str().unwrap_or("nan").to_string()
    }
}

fn sweep_point(file: &ModelFile, params: &BTreeMap<String, f64>, site: &str, state: Option<&str>, window: usize) -> Result<(f64, f64, bool, bool)> {
    match file.bind(params)? {
        Model::Finite(t) => {
            let h0 = file.site_subspace(site)?;
            let rho = match state {
                Some(s) => file.state_density(s)?,
                None => mixed_on(&h0),
            };
            let r = MonitoredSystem::for_tom(&t, &h0)?.report(&rho, 0, LimitPolicy::Auto)?;
            Ok((r.pi, r.tau, r.recurrent, true))
        }
        Model::HalfLine(m) => {
            let (s, rho) = chain_state(file, m.dim(), Some(site), state)?;
            let tr = Chain::Half(&m).truncate(window, s, &rho)?;
            Ok((tr.report.pi, tr.report.tau, tr.report.recurrent, tr.converged))
        }
        Model::Line(m) => {
            let (s, rho) = chain_state(file, m.dim(), Some(site), state)?;
            let tr = Chain::Full(&m).truncate(window, s, &rho)?;
            Ok((tr.report.pi, tr.report.tau, tr.report.recurrent, tr.converged))
        }
    }
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("QMCR_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::Invalid(format!("QMCR_THREADS: `{v}` is not a thread count")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::Invalid(format!("thread pool: {e}")))
}

fn sweep(model: &ModelArgs, site: &str, state: Option<&str>, window: usize, output: Option<&Path>) -> Result<Outcome> {
    let l = load(model, true)?;
    let ranges: Vec<(String, String)> = model
        .params
        .iter()
        .map(|b| parse_binding(b))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|(_, v)| v.contains(':'))
        .collect();
    let [(name, range)] = &ranges[..] else {
        return Err(Error::Invalid("sweep needs exactly one --param NAME=START:STOP:STEP".into()));
    };
    if l.file.topology == Topology::Finite && !l.file.parameters.contains_key(name) {
        return Err(Error::Invalid(format!("--param {name}: the model has no parameter `{name}`")));
    }
    let values = parse_range(range)?;
    let rows: Vec<Result<(f64, f64, bool, bool)>> = thread_pool()?.install(|| {
        values
            .par_iter()
            .map(|&x| {
                let mut p = l.params.clone();
                p.insert(name.clone(), x);
                sweep_point(&l.file, &p, site, state, window)
            })
            .collect()
    });
    let mut w = csv::Writer::from_writer(vec![]);
    let io = |e: csv::Error| Error::Invalid(format!("csv: {e}"));
    w.write_record([name.as_str(), "pi", "tau", "recurrent", "converged"]).map_err(io)?;
    let mut all_converged = true;
    for (x, row) in values.iter().zip(rows) {
        let (pi, tau, rec, conv) = row.map_err(|e| match e {
            Error::Invalid(m) => Error::Invalid(format!("{name}={x}: {m}")),
            other => other,
        })?;
        all_converged &= conv;
        w.write_record([csv_num(*x), csv_num(pi), csv_num(tau), rec.to_string(), conv.to_string()]).map_err(io)?;
    }
    let text = String::from_utf8(w.into_inner().map_err(|e| Error::Invalid(format!("csv: {e}")))?).expect("ASCII CSV");
    let code = if all_converged { EXIT_OK } else { EXIT_NO_CONVERGENCE };
    let stderr = if all_converged { String::new() } else { "warning: some points did not converge\n".into() };
    match output {
        Some(p) => {
            std::fs::write(p, &text).map_err(|e| Error::Invalid(format!("{}: {e}", p.display())))?;
            Ok(Outcome { code, stdout: String::new(), stderr })
        }
        None => Ok(Outcome { code, stdout: text, stderr }),
    }
}
