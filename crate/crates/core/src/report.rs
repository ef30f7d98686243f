//! Machine-readable reports shared by the CLI and the FFI layer.

use serde::Serializer;

/// Serializes finite floats as numbers and non-finite ones as the strings
/// `"inf"`, `"-inf"` or `"nan"` (JSON has no literal for them).
pub fn ser_f64<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    if x.is_finite() {
        s.serialize_f64(*x)
    } else if x.is_nan() {
        s.serialize_str("nan")
    } else if *x > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

/// `x` as a JSON value, with non-finite values as strings (see [`ser_f64`]).
pub fn num(x: f64) -> serde_json::Value {
    if x.is_finite() {
        serde_json::json!(x)
    } else if x.is_nan() {
        serde_json::json!("nan")
    } else if x > 0.0 {
        serde_json::json!("inf")
    } else {
        serde_json::json!("-inf")
    }
}

/// Inverse of [`num`].
pub fn parse_num(v: &serde_json::Value) -> Option<f64> {
    match v {
        serde_json::Value::Number(n) => n.as_f64(),
        serde_json::Value::String(s) => match s.as_str() {
            "inf" => Some(f64::INFINITY),
            "-inf" => Some(f64::NEG_INFINITY),
            "nan" => Some(f64::NAN),
            _ => None,
        },
        _ => None,
    }
}

/// Output of one CLI command.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Report {
    pub tool: String,
    pub version: String,
    /// Arguments as given, without the program name.
    pub command: Vec<String>,
    /// Hex SHA-256 over the model file bytes and the bound parameters.
    pub inputs_digest: String,
    /// Seconds since the Unix epoch; omitted with `--no-timestamp`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
    pub results: serde_json::Value,
    #[serde(default)]
    pub diagnostics: Vec<String>,
}

impl Report {
    pub fn new(command: Vec<String>, inputs_digest: String, results: serde_json::Value) -> Self {
        Report {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command,
            inputs_digest,
            timestamp: None,
            results,
            diagnostics: vec![],
        }
    }

    pub fn stamped(mut self) -> Self {
        self.timestamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .ok()
            .map(|d| d.as_secs());
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }
}

/// SHA-256 of a model file and its bound parameters, in hex.
pub fn inputs_digest(file: &[u8], params: &std::collections::BTreeMap<String, f64>) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(file);
    for (k, v) in params {
        h.update(format!("\n{k}={v:e}").as_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_round_trip() {
        let mut r = Report::new(
            vec!["recur".into(), "m.json".into()],
            inputs_digest(b"{}", &Default::default()),
            serde_json::json!({"pi": 1.0, "tau": num(f64::INFINITY), "series": [0.1, 0.30000000000000004]}),
        )
        .stamped();
        r.diagnostics.push("note".into());
        let back = Report::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert_eq!(parse_num(&back.results["tau"]), Some(f64::INFINITY));
        assert_eq!(back.results["series"][1].as_f64(), Some(0.30000000000000004));
    }

    #[test]
    fn digest_depends_on_parameters() {
        let a = inputs_digest(b"x", &[("p".to_string(), 0.4)].into());
        let b = inputs_digest(b"x", &[("p".to_string(), 0.5)].into());
        assert_ne!(a, b);
        assert_eq!(a.len(), 64);
    }
}
