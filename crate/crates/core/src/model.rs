//! JSON model files: finite TOMs, half-line and line chains, named states and
//! return subspaces, with Kraus weights that may depend affinely on parameters.
//!
//! Complex numbers are `[re, im]` pairs; matrices are arrays of rows. A Kraus
//! entry `{"weight": w, "matrix": M}` contributes the operator `√w · M`, where
//! `w` is a number or an affine form `{"const": c, "p": a, …}` evaluated at the
//! bound parameter values. Semantic errors name the offending key path.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::chains1d::{HalfLineModel, LineModel, NnColumn};
use crate::channels::KrausMap;
use crate::densela::{c64, identity, ComplexMatrix, ComplexVector};
use crate::error::{Error, Result};
use crate::recurrence::SubspaceSpec;
use crate::tom::{site_vector, Tom, TomDensity};

pub const SCHEMA_VERSION: u32 = 1;

pub type RawMatrix = Vec<Vec<[f64; 2]>>;
pub type RawVector = Vec<[f64; 2]>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    Finite,
    Halfline,
    Line,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Weight {
    Number(f64),
    /// Affine form; the key `const` holds the constant term.
    Affine(BTreeMap<String, f64>),
}

impl Default for Weight {
    fn default() -> Self {
        Weight::Number(1.0)
    }
}

impl Weight {
    pub fn eval(&self, params: &BTreeMap<String, f64>) -> std::result::Result<f64, String> {
        match self {
            Weight::Number(w) => Ok(*w),
            Weight::Affine(terms) => terms.iter().try_fold(0.0, |acc, (k, c)| {
                if k == "const" {
                    Ok(acc + c)
                } else {
                    params
                        .get(k)
                        .map(|v| acc + c * v)
                        .ok_or_else(|| format!("unbound parameter `{k}`"))
                }
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KrausEntry {
    #[serde(default)]
    pub weight: Weight,
    pub matrix: RawMatrix,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub down: Vec<KrausEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stay: Vec<KrausEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub up: Vec<KrausEntry>,
}

/// A vertex label: a string for finite models, an integer site for chains.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Index(i64),
    Name(String),
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Label::Index(i) => write!(f, "{i}"),
            Label::Name(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteVector {
    pub site: Label,
    pub vector: RawVector,
}

/// Exactly one of the fields must be present (together with `site` for `matrix`/`vector`).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<RawMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector: Option<RawVector>,
    /// Normalized superposition of site-local vectors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub superposition: Option<Vec<SiteVector>>,
    /// Block-diagonal density, one block per listed vertex.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks: Option<BTreeMap<String, RawMatrix>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubspaceFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sites: Option<Vec<Label>>,
    /// One projector per monitored vertex.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub admissible: Option<BTreeMap<String, RawMatrix>>,
    /// Span of superpositions of site-local vectors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<Vec<Vec<SiteVector>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub schema: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub internal_dim: usize,
    pub topology: Topology,
    /// Default parameter values; command-line bindings override them.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub parameters: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub vertices: Vec<String>,
    /// Keyed `"to<-from"` by vertex label.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub blocks: BTreeMap<String, Vec<KrausEntry>>,
    /// Half-line: explicit columns `0..head.len()`, then `tail` repeated.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub head: Vec<ColumnSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail: Option<ColumnSpec>,
    /// Line: explicit columns from site `start`, `left` below them and `right` above.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<i64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub center: Vec<ColumnSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left: Option<ColumnSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right: Option<ColumnSpec>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub states: BTreeMap<String, StateSpec>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub subspaces: BTreeMap<String, SubspaceFile>,
}

/// A bound model.
#[derive(Debug, Clone)]
pub enum Model {
    Finite(Tom),
    HalfLine(HalfLineModel),
    Line(LineModel),
}

fn located(path: &str, msg: impl std::fmt::Display) -> Error {
    Error::Invalid(format!("{path}: {msg}"))
}

fn matrix(raw: &RawMatrix, d: usize, path: &str) -> Result<ComplexMatrix> {
    if raw.len() != d {
        return Err(located(path, format!("expected {d} rows, found {}", raw.len())));
    }
    for (i, row) in raw.iter().enumerate() {
        if row.len() != d {
            return Err(located(&format!("{path}[{i}]"), format!("expected {d} entries, found {}", row.len())));
        }
    }
    Ok(ComplexMatrix::from_fn(d, d, |i, j| c64::new(raw[i][j][0], raw[i][j][1])))
}

fn vector(raw: &RawVector, d: usize, path: &str) -> Result<ComplexVector> {
    if raw.len() != d {
        return Err(located(path, format!("expected {d} entries, found {}", raw.len())));
    }
    Ok(ComplexVector::from_fn(d, |i, _| c64::new(raw[i][0], raw[i][1])))
}

fn kraus(entries: &[KrausEntry], d: usize, params: &BTreeMap<String, f64>, path: &str) -> Result<Option<KrausMap>> {
    let mut ks = vec![];
    for (k, e) in entries.iter().enumerate() {
        let p = format!("{path}[{k}]");
        let w = e.weight.eval(params).map_err(|m| located(&format!("{p}.weight"), m))?;
        if w < -1e-14 {
            return Err(located(&format!("{p}.weight"), format!("weight evaluates to {w} < 0")));
        }
        let m = matrix(&e.matrix, d, &format!("{p}.matrix"))?;
        if w > 0.0 {
            ks.push(m.scale(w.sqrt()));
        }
    }
    Ok((!ks.is_empty()).then(|| KrausMap::new(d, ks).expect("square matrices")))
}

fn column(c: &ColumnSpec, d: usize, params: &BTreeMap<String, f64>, path: &str) -> Result<NnColumn> {
    Ok(NnColumn::new(
        kraus(&c.down, d, params, &format!("{path}.down"))?,
        kraus(&c.stay, d, params, &format!("{path}.stay"))?,
        kraus(&c.up, d, params, &format!("{path}.up"))?,
    ))
}

impl ModelFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let m: ModelFile = serde_json::from_str(text).map_err(|e| Error::Invalid(format!("JSON: {e}")))?;
        if m.schema != SCHEMA_VERSION {
            return Err(located("schema", format!("unsupported version {} (expected {SCHEMA_VERSION})", m.schema)));
        }
        if m.internal_dim == 0 {
            return Err(located("internal_dim", "must be positive"));
        }
        Ok(m)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Invalid(m) => Error::Invalid(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model files serialize")
    }

    /// Parameter values: file defaults overridden by `overrides`.
    /// Only declared parameters can be overridden, so a misspelt name is an error.
    pub fn parameters_with(&self, overrides: &BTreeMap<String, f64>) -> Result<BTreeMap<String, f64>> {
        if let Some(k) = overrides.keys().find(|k| !self.parameters.contains_key(*k)) {
            let known: Vec<&str> = self.parameters.keys().map(String::as_str).collect();
            let known = if known.is_empty() { "none".to_string() } else { known.join(", ") };
            return Err(located("parameters", format!("unknown parameter `{k}` (declared: {known})")));
        }
        let mut p = self.parameters.clone();
        p.extend(overrides.iter().map(|(k, v)| (k.clone(), *v)));
        Ok(p)
    }

    fn vertex(&self, label: &str, path: &str) -> Result<usize> {
        self.vertices
            .iter()
            .position(|v| v == label)
            .ok_or_else(|| located(path, format!("unknown vertex `{label}`")))
    }

    fn site_index(&self, label: &Label, path: &str) -> Result<usize> {
        match label {
            Label::Name(s) => self.vertex(s, path),
            Label::Index(i) => self.vertex(&i.to_string(), path),
        }
    }

    /// Builds the model at the given parameter values. TOMs are returned even when
    /// columns fail to be trace preserving, so that `validate` can report residuals.
    pub fn bind(&self, overrides: &BTreeMap<String, f64>) -> Result<Model> {
        let params = self.parameters_with(overrides)?;
        let d = self.internal_dim;
        match self.topology {
            Topology::Finite => {
                if self.vertices.is_empty() {
                    return Err(located("vertices", "a finite model needs at least one vertex"));
                }
                let mut t = Tom::new(self.vertices.clone(), d);
                for (key, entries) in &self.blocks {
                    let path = format!("blocks.\"{key}\"");
                    let (to, from) = key
                        .split_once("<-")
                        .ok_or_else(|| located(&path, "key must have the form \"to<-from\""))?;
                    let (i, j) = (self.vertex(to.trim(), &path)?, self.vertex(from.trim(), &path)?);
                    if let Some(k) = kraus(entries, d, &params, &path)? {
                        t.set_block(i, j, k)?;
                    }
                }
                Ok(Model::Finite(t))
            }
            Topology::Halfline => {
                let tail = self.tail.as_ref().ok_or_else(|| located("tail", "a half-line model needs a tail column"))?;
                let head = self
                    .head
                    .iter()
                    .enumerate()
                    .map(|(j, c)| column(c, d, &params, &format!("head[{j}]")))
                    .collect::<Result<Vec<_>>>()?;
                let tail = column(tail, d, &params, "tail")?;
                HalfLineModel::new(d, head, tail).map(Model::HalfLine).map_err(|e| located("head/tail", e))
            }
            Topology::Line => {
                let left = self.left.as_ref().ok_or_else(|| located("left", "a line model needs a left tail column"))?;
                let right = self.right.as_ref().ok_or_else(|| located("right", "a line model needs a right tail column"))?;
                let center = self
                    .center
                    .iter()
                    .enumerate()
                    .map(|(j, c)| column(c, d, &params, &format!("center[{j}]")))
                    .collect::<Result<Vec<_>>>()?;
                LineModel::new(
                    d,
                    self.start.unwrap_or(0),
                    center,
                    column(left, d, &params, "left")?,
                    column(right, d, &params, "right")?,
                )
                .map(Model::Line)
                .map_err(|e| located("center/left/right", e))
            }
        }
    }

    fn superposition(&self, parts: &[SiteVector], path: &str) -> Result<ComplexVector> {
        let n = self.vertices.len();
        let d = self.internal_dim;
        let mut v = ComplexVector::zeros(n * d);
        for (k, sv) in parts.iter().enumerate() {
            let p = format!("{path}[{k}]");
            let s = self.site_index(&sv.site, &format!("{p}.site"))?;
            v += site_vector(n, s, &vector(&sv.vector, d, &format!("{p}.vector"))?);
        }
        let nrm = v.norm();
        if nrm == 0.0 {
            return Err(located(path, "zero vector"));
        }
        Ok(v.unscale(nrm))
    }

    fn named_state(&self, name: &str) -> Result<(&StateSpec, String)> {
        self.states
            .get(name)
            .map(|s| (s, format!("states.\"{name}\"")))
            .ok_or_else(|| Error::Invalid(format!("unknown state `{name}`")))
    }

    /// Pure state vector on `ℋ⊗𝒮` of a finite model (from `vector`+`site` or `superposition`).
    pub fn state_vector(&self, name: &str) -> Result<ComplexVector> {
        let (s, path) = self.named_state(name)?;
        let n = self.vertices.len();
        let d = self.internal_dim;
        if let Some(parts) = &s.superposition {
            return self.superposition(parts, &format!("{path}.superposition"));
        }
        if let (Some(site), Some(v)) = (&s.site, &s.vector) {
            let i = self.site_index(site, &format!("{path}.site"))?;
            let v = vector(v, d, &format!("{path}.vector"))?;
            let nrm = v.norm();
            if nrm == 0.0 {
                return Err(located(&format!("{path}.vector"), "zero vector"));
            }
            return Ok(site_vector(n, i, &v.unscale(nrm)));
        }
        Err(located(&path, "not a pure state (needs `site` with `vector`, or `superposition`)"))
    }

    /// Density operator on `ℋ⊗𝒮` of a finite model.
    pub fn state_density(&self, name: &str) -> Result<ComplexMatrix> {
        let (s, path) = self.named_state(name)?;
        let n = self.vertices.len();
        let d = self.internal_dim;
        if let Some(blocks) = &s.blocks {
            let mut t = TomDensity::zeros(n, d);
            for (label, m) in blocks {
                let i = self.vertex(label, &format!("{path}.blocks"))?;
                t.blocks[i] = matrix(m, d, &format!("{path}.blocks.\"{label}\""))?;
            }
            return Ok(t.to_full());
        }
        if let (Some(site), Some(m)) = (&s.site, &s.matrix) {
            let i = self.site_index(site, &format!("{path}.site"))?;
            return Ok(TomDensity::at_site(n, i, matrix(m, d, &format!("{path}.matrix"))?).to_full());
        }
        let v = self.state_vector(name)?;
        Ok(&v * v.adjoint())
    }

    /// Site and local density of a chain model state (`site` with `matrix` or `vector`).
    pub fn chain_state(&self, name: &str) -> Result<(i64, ComplexMatrix)> {
        let (s, path) = self.named_state(name)?;
        let d = self.internal_dim;
        let site = match &s.site {
            Some(Label::Index(i)) => *i,
            Some(Label::Name(x)) => x
                .parse()
                .map_err(|_| located(&format!("{path}.site"), "chain sites are integers"))?,
            None => return Err(located(&path, "chain states need an integer `site`")),
        };
        if let Some(m) = &s.matrix {
            return Ok((site, matrix(m, d, &format!("{path}.matrix"))?));
        }
        if let Some(v) = &s.vector {
            let v = vector(v, d, &format!("{path}.vector"))?;
            let v = v.unscale(v.norm());
            return Ok((site, &v * v.adjoint()));
        }
        Err(located(&path, "chain states need `matrix` or `vector`"))
    }

    /// Return subspace of a finite model.
    pub fn subspace(&self, name: &str) -> Result<SubspaceSpec> {
        let s = self
            .subspaces
            .get(name)
            .ok_or_else(|| Error::Invalid(format!("unknown subspace `{name}`")))?;
        let path = format!("subspaces.\"{name}\"");
        let n = self.vertices.len();
        let d = self.internal_dim;
        let spec = if let Some(sites) = &s.sites {
            let idx = sites
                .iter()
                .enumerate()
                .map(|(k, l)| self.site_index(l, &format!("{path}.sites[{k}]")))
                .collect::<Result<Vec<_>>>()?;
            SubspaceSpec::sites(n, d, &idx)
        } else if let Some(adm) = &s.admissible {
            let mut ps = vec![ComplexMatrix::zeros(d, d); n];
            for (label, m) in adm {
                let i = self.vertex(label, &format!("{path}.admissible"))?;
                ps[i] = matrix(m, d, &format!("{path}.admissible.\"{label}\""))?;
            }
            SubspaceSpec::Admissible { projectors: ps }
        } else if let Some(span) = &s.span {
            let vs = span
                .iter()
                .enumerate()
                .map(|(k, parts)| self.superposition(parts, &format!("{path}.span[{k}]")))
                .collect::<Result<Vec<_>>>()?;
            SubspaceSpec::span(&vs)
        } else {
            return Err(located(&path, "needs one of `sites`, `admissible`, `span`"));
        };
        spec.validate().map_err(|e| located(&path, e))?;
        Ok(spec)
    }

    /// `sites` subspace for one vertex label.
    pub fn site_subspace(&self, label: &str) -> Result<SubspaceSpec> {
        let i = self.vertex(label, "--site")?;
        Ok(SubspaceSpec::sites(self.vertices.len(), self.internal_dim, &[i]))
    }

    pub fn vertex_index(&self, label: &str) -> Result<usize> {
        self.vertex(label, "vertex")
    }
}

/// `P / dim ℋ₀`, the maximally mixed state on a return subspace.
pub fn mixed_on(spec: &SubspaceSpec) -> ComplexMatrix {
    let p = spec.projector();
    let k = spec.dim().max(1) as f64;
    p.unscale(k)
}

/// Maximally mixed local state `I/d`.
pub fn mixed_local(d: usize) -> ComplexMatrix {
    identity(d).unscale(d as f64)
}

fn raw(m: &ComplexMatrix) -> RawMatrix {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect()).collect()
}

/// Serializes a matrix as rows of `[re, im]` pairs.
pub fn matrix_to_raw(m: &ComplexMatrix) -> RawMatrix {
    raw(m)
}

/// Model-file form of a finite TOM (unit weights, Kraus operators as given).
pub fn tom_to_file(t: &Tom, name: Option<&str>) -> ModelFile {
    let blocks = t
        .blocks()
        .map(|(&(i, j), k)| {
            (
                format!("{}<-{}", t.vertices()[i], t.vertices()[j]),
                k.kraus().iter().map(|m| KrausEntry { weight: Weight::default(), matrix: raw(m) }).collect(),
            )
        })
        .collect();
    ModelFile {
        schema: SCHEMA_VERSION,
        name: name.map(str::to_string),
        description: None,
        internal_dim: t.dim(),
        topology: Topology::Finite,
        parameters: BTreeMap::new(),
        vertices: t.vertices().to_vec(),
        blocks,
        head: vec![],
        tail: None,
        start: None,
        center: vec![],
        left: None,
        right: None,
        states: BTreeMap::new(),
        subspaces: BTreeMap::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::three_vertex_factorizable;
    use crate::densela::max_abs;

    const WALK: &str = r#"{
      "schema": 1, "internal_dim": 1, "topology": "finite",
      "parameters": {"a": 0.3},
      "vertices": ["x", "y"],
      "blocks": {
        "x<-x": [{"weight": {"const": 1, "a": -1}, "matrix": [[[1, 0]]]}],
        "y<-x": [{"weight": {"a": 1}, "matrix": [[[1, 0]]]}],
        "x<-y": [{"matrix": [[[1, 0]]]}]
      },
      "states": {"at_x": {"site": "x", "matrix": [[[1, 0]]]}},
      "subspaces": {"x": {"sites": ["x"]}}
    }"#;

    #[test]
    fn parses_and_binds_parameters() {
        let f = ModelFile::from_json(WALK).unwrap();
        let Model::Finite(t) = f.bind(&BTreeMap::new()).unwrap() else { panic!() };
        assert!(t.validate().valid);
        let w = t.block(1, 0).unwrap().kraus()[0][(0, 0)].re;
        assert!((w - 0.3f64.sqrt()).abs() < 1e-15);
        let over = BTreeMap::from([("a".to_string(), 0.5)]);
        let Model::Finite(t) = f.bind(&over).unwrap() else { panic!() };
        assert!((t.block(1, 0).unwrap().kraus()[0][(0, 0)].re - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(f.subspace("x").is_ok());
        assert_eq!(f.state_density("at_x").unwrap()[(0, 0)].re, 1.0);
    }

    #[test]
    fn errors_are_located() {
        let bad = WALK.replace("[[[1, 0]]]}],\n        \"x<-y\"", "[[[1, 0], [0, 0]]]}],\n        \"x<-y\"");
        let f = ModelFile::from_json(&bad).unwrap();
        let e = f.bind(&BTreeMap::new()).unwrap_err().to_string();
        assert!(e.contains("blocks.\"y<-x\"[0].matrix[0]"), "{e}");
        let f = ModelFile::from_json(&WALK.replace("\"a\": 1}", "\"b\": 1}")).unwrap();
        assert!(f.bind(&BTreeMap::new()).unwrap_err().to_string().contains("unbound parameter `b`"));
        assert!(ModelFile::from_json(&WALK.replace("\"schema\": 1", "\"schema\": 7")).is_err());
        assert!(ModelFile::from_json(&WALK.replace("\"topology\"", "\"topo\"")).is_err());
    }

    #[test]
    fn finite_round_trip() {
        let t = three_vertex_factorizable();
        let f = tom_to_file(&t, Some("three"));
        let back = ModelFile::from_json(&f.to_json()).unwrap();
        assert_eq!(back, f);
        let Model::Finite(u) = back.bind(&BTreeMap::new()).unwrap() else { panic!() };
        assert!(max_abs(&(u.block_superop() - t.block_superop())) < 1e-15);
    }
}
