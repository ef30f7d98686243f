use std::path::PathBuf;
use std::process::Command;

use qmcr::cli::{self, EXIT_INVALID, EXIT_NO_CONVERGENCE, EXIT_OK};
use qmcr::report::{parse_num, Report};
use serde_json::Value;

fn model(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models").join(name).display().to_string()
}

fn run(args: &[&str]) -> cli::Outcome {
    cli::run(std::iter::once("qmcr").chain(args.iter().copied()))
}

fn results(args: &[&str]) -> Value {
    let out = run(args);
    assert_eq!(out.code, EXIT_OK, "{args:?}: {}", out.stderr);
    Report::from_json(&out.stdout).unwrap().results
}

fn f(v: &Value) -> f64 {
    parse_num(v).unwrap_or_else(|| panic!("not a number: {v}"))
}

#[test]
fn binary_prints_a_report() {
    let out = Command::new(env!("CARGO_BIN_EXE_qmcr"))
        .args(["recur", &model("two_vertex_walk.json"), "--site", "1"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let rep = Report::from_json(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(rep.tool, "qmcr");
    assert!(rep.timestamp.is_some());
    assert!((f(&rep.results["tau"]) - (1.0 + 0.4 / 0.6)).abs() < 1e-12);
}

#[test]
fn binary_exit_codes() {
    let status = Command::new(env!("CARGO_BIN_EXE_qmcr")).args(["validate", "/no/such/model.json"]).status().unwrap();
    assert_eq!(status.code(), Some(EXIT_INVALID));
    let status = Command::new(env!("CARGO_BIN_EXE_qmcr")).args(["frobnicate"]).status().unwrap();
    assert_eq!(status.code(), Some(EXIT_INVALID));
}

#[test]
fn no_timestamp_is_byte_identical() {
    let args = ["--no-timestamp", "recur", &model("two_vertex_walk.json"), "--subspace", "K", "--state", "psi_2"];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(a.code, EXIT_OK);
    assert_eq!(a.stdout, b.stdout);
    assert!(!a.stdout.contains("\"timestamp\""));
}

#[test]
fn digest_tracks_parameters() {
    let digest = |p: &str| {
        let out = run(&["--no-timestamp", "recur", &model("two_vertex_walk.json"), "--site", "1", "--param", p]);
        Report::from_json(&out.stdout).unwrap().inputs_digest
    };
    assert_eq!(digest("p=0.4"), digest("p=0.4"));
    assert_ne!(digest("p=0.4"), digest("p=0.5"));
}

#[test]
fn recur_two_vertex_walk() {
    let (p, q) = (0.5, 0.3);
    let ps = format!("p={p}");
    let qs = format!("q={q}");
    let r = results(&["recur", &model("two_vertex_walk.json"), "--site", "2", "--param", &ps, "--param", &qs]);
    assert!((f(&r["tau"]) - (1.0 + 2.0 * q / p)).abs() < 1e-12);
    assert_eq!(r["recurrent"], Value::Bool(true));
    let fr: Vec<f64> = r["first_return"].as_array().unwrap().iter().map(f).collect();
    let sv: Vec<f64> = r["survival"].as_array().unwrap().iter().map(f).collect();
    assert_eq!(fr.len(), 10);
    let mut acc = 0.0;
    for n in 0..fr.len() {
        acc += fr[n];
        assert!((acc + sv[n + 1] - 1.0).abs() < 1e-12);
    }
    let r = results(&["recur", &model("two_vertex_walk.json"), "--state", "psi_split", "--param", &ps, "--param", &qs]);
    let want = 2.0 / (3.0 * p * (2.0 + q + 2.0 * q * q))
        * (10.0 * p + 4.0 * q + 2.0 * p * p - 2.0 * q * q + 3.0 * p * q + 4.0 * q.powi(3) + p * p * q + 8.0 * p * q * q);
    assert!((f(&r["tau"]) - want).abs() < 1e-10);
}

#[test]
fn recur_methods_agree() {
    let base = ["recur", &model("two_vertex_walk.json"), "--site", "1"];
    let solve = f(&results(&[&base[..], &["--method", "solve"]].concat())["tau"]);
    let extra = f(&results(&[&base[..], &["--method", "extrapolate"]].concat())["tau"]);
    assert!((solve - extra).abs() < 1e-6);
    let mc = results(&[&base[..], &["--method", "mc", "--shots", "20000", "--max-steps", "400", "--seed", "3"]].concat());
    let est = &mc["estimate"];
    assert!((f(&est["tau"]) - solve).abs() < 4.0 * f(&est["tau_se"]));
}

#[test]
fn validate_reports_broken_columns() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("leaky.json");
    let text = std::fs::read_to_string(model("birth_death.json")).unwrap().replacen("\"weight\": 0.5", "\"weight\": 0.4", 1);
    std::fs::write(&path, text).unwrap();
    let ok = results(&["validate", &model("birth_death.json")]);
    assert_eq!(ok["valid"], Value::Bool(true));
    let out = run(&["validate", path.to_str().unwrap()]);
    assert_eq!(out.code, EXIT_INVALID);
    let rep = Report::from_json(&out.stdout).unwrap();
    assert_eq!(rep.results["trace_preserving"], Value::Bool(false));
    assert!(rep.diagnostics.iter().any(|d| d.contains("not trace preserving")));
}

#[test]
fn invalid_inputs_exit_2() {
    let walk = model("two_vertex_walk.json");
    for args in [
        vec!["recur", walk.as_str(), "--site", "9"],
        vec!["recur", walk.as_str(), "--subspace", "nope"],
        vec!["recur", walk.as_str(), "--site", "1", "--param", "p=-3"],
        vec!["recur", walk.as_str(), "--site", "1", "--param", "r=0.1"],
        vec!["schur", walk.as_str(), "--site", "1", "--z", "1.5,0"],
        vec!["recur", walk.as_str(), "--site", "1", "--subspace", "K"],
    ] {
        let out = run(&args);
        assert_eq!(out.code, EXIT_INVALID, "{args:?}: {}", out.stderr);
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn unsettled_truncation_exits_3() {
    let out = run(&["recur", &model("halfline.json"), "--site", "1", "--param", "lambda=0.501"]);
    assert_eq!(out.code, EXIT_NO_CONVERGENCE);
    let rep = Report::from_json(&out.stdout).unwrap();
    assert_eq!(rep.results["converged"], Value::Bool(false));
}

#[test]
fn halfline_and_line_models() {
    let r = results(&["recur", &model("halfline.json"), "--site", "1", "--param", "lambda=0.7"]);
    assert!((f(&r["pi"]) - 1.0).abs() < 1e-6);
    assert!((f(&r["tau"]) - 2.625).abs() < 1e-6);
    let r = results(&["recur", &model("halfline.json"), "--site", "1", "--param", "lambda=0.3"]);
    assert!((f(&r["pi"]) - 0.6).abs() < 1e-6);
    assert!(f(&r["tau"]).is_infinite());
    let r = results(&["recur", &model("line.json"), "--site", "0", "--param", "lambda=0.5"]);
    assert_eq!(r["recurrent"], Value::Bool(true));
    assert!(f(&r["tau"]).is_infinite());
}

#[test]
fn sweep_matches_closed_form() {
    let out = run(&["sweep", &model("halfline.json"), "--site", "0", "--param", "lambda=0.1:0.9:0.2"]);
    assert_eq!(out.code, EXIT_OK, "{}", out.stderr);
    let mut rd = csv::Reader::from_reader(out.stdout.as_bytes());
    assert_eq!(rd.headers().unwrap(), vec!["lambda", "pi", "tau", "recurrent", "converged"]);
    let rows: Vec<csv::StringRecord> = rd.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 5);
    // from site 0 the first step goes up with probability t = 3/4
    let t = 0.75;
    for row in rows {
        let lambda: f64 = row[0].parse().unwrap();
        let pi: f64 = row[1].parse().unwrap();
        let want = (1.0 - (1.0 - 2.0 * lambda) / (1.0 - lambda) * t).min(1.0);
        assert!((pi - want).abs() < 1e-6, "λ={lambda}: {pi} vs {want}");
    }
}

#[test]
fn sweep_writes_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    let out = run(&["sweep", &model("halfline.json"), "--site", "1", "--param", "lambda=0.6:0.8:0.1", "--output", path.to_str().unwrap()]);
    assert_eq!(out.code, EXIT_OK);
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn schur_layouts() {
    let r = results(&["schur", &model("two_vertex_walk.json"), "--site", "1", "--z", "0.3,-0.2"]);
    assert_eq!(r["layout"], "site-blocks");
    let r = results(&["schur", &model("kac_qubit.json"), "--subspace", "plus_line", "--z", "0.5,0"]);
    assert_eq!(r["layout"], "full-operator");
    assert_eq!(r["dim"], 4);
    let r = results(&["schur", &model("halfline.json"), "--site", "1", "--z", "0.2,0.1"]);
    assert_eq!(r["layout"], "site-blocks");
}

#[test]
fn split_detect_and_verify() {
    let r = results(&["split", &model("birth_death.json")]);
    let dec = &r["decompositions"].as_array().unwrap()[0];
    assert_eq!(dec["metrics"]["holds"], Value::Bool(true));
    assert!((f(&dec["metrics"]["tau"]) - 13.0 / 3.0).abs() < 1e-10);

    let r = results(&["split", &model("three_vertex.json"), "--verify", &model("three_vertex.factorization.json")]);
    assert_eq!(r["verified"], Value::Bool(true));
    let m = &r["splitting"]["metrics"];
    assert!((f(&m["tau"]) - (f(&m["tau_left"]) + f(&m["tau_right"]) - 1.0)).abs() < 1e-10);

    let r = results(&["split", &model("three_vertex.json"), "--detect"]);
    assert!(!r["factorizations"].as_array().unwrap().is_empty());
}

#[test]
fn kac_qubit() {
    let r = results(&["kac", &model("kac_qubit.json"), "--state", "plus"]);
    let s6 = 6f64.sqrt();
    assert!((f(&r["tau"]) - 2.0 * (21.0 - s6) / 29.0).abs() < 1e-12);
    assert!((f(&r["ideal"]) * f(&r["correction"]) - f(&r["tau"])).abs() < 1e-12);
}

#[test]
fn every_bundled_model_validates() {
    for entry in std::fs::read_dir(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models")).unwrap() {
        let path = entry.unwrap().path();
        if path.to_string_lossy().ends_with(".factorization.json") {
            continue;
        }
        let out = run(&["validate", path.to_str().unwrap()]);
        assert_eq!(out.code, EXIT_OK, "{}: {}{}", path.display(), out.stdout, out.stderr);
    }
}
