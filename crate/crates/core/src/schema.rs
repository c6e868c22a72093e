//! JSON system-description files.
//!
//! Expressions are strings in the `expr` grammar. Generating functions are
//! written over the `x_I` state names and costates `e_<name>`; Morse families
//! over the state names followed by `lam1, lam2, ...`. Index lists are 1-based.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{var_list, ExprError, ExprTree, MatrixExpr};
use crate::geometry::{DiracStructure, GeometryError, IndexSplit, SamplingConfig, StorageRelation};
use crate::phsystem::{multiplier_names, PHSystem, SystemError};

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("malformed JSON at line {line}, column {column}: {message}")]
    Json { line: usize, column: usize, message: String },
    #[error("schema error: {0}")]
    Invalid(String),
    #[error("expression error: {0}")]
    Expr(#[from] ExprError),
    #[error("geometry error: {0}")]
    Geometry(#[from] GeometryError),
    /// The document is well-formed but the system fails validation.
    #[error(transparent)]
    System(#[from] SystemError),
}

impl From<serde_json::Error> for SchemaError {
    fn from(e: serde_json::Error) -> Self {
        let message = e.to_string();
        let message = match message.rfind(" at line ") {
            Some(i) => message[..i].to_string(),
            None => message,
        };
        SchemaError::Json { line: e.line(), column: e.column(), message }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemDescription {
    pub n: usize,
    pub state_names: Vec<String>,
    #[serde(rename = "J")]
    pub j: Vec<Vec<String>>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<String>>>,
    #[serde(rename = "G", default, skip_serializing_if = "Option::is_none")]
    pub g: Option<Vec<Vec<String>>>,
    #[serde(rename = "G_R", default, skip_serializing_if = "Option::is_none")]
    pub g_r: Option<Vec<Vec<String>>>,
    #[serde(rename = "Rbar", default, skip_serializing_if = "Option::is_none")]
    pub rbar: Option<Vec<Vec<f64>>>,
    pub storage: StorageDescription,
    /// One `[lo, hi]` interval per state for sampled validation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_box: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum StorageDescription {
    Hamiltonian(String),
    Generating {
        #[serde(rename = "I")]
        i: Vec<usize>,
        #[serde(rename = "J_idx")]
        j_idx: Vec<usize>,
        #[serde(rename = "V")]
        v: String,
    },
    Morse {
        k: usize,
        #[serde(rename = "F")]
        f: String,
    },
}

impl SystemDescription {
    pub fn from_json(text: &str) -> Result<Self, SchemaError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Pretty-printed with matrix rows and index lists kept on one line.
    pub fn to_json(&self) -> String {
        let value = serde_json::to_value(self).expect("description serializes");
        let mut out = String::new();
        write_value(&value, 0, &mut out);
        out.push('\n');
        out
    }

    /// Build and validate the system. `seed` overrides the default sampling seed.
    pub fn to_system(&self, seed: Option<u64>) -> Result<PHSystem, SchemaError> {
        let n = self.n;
        if self.state_names.len() != n {
            return Err(invalid(format!("state_names has {} entries, n = {n}", self.state_names.len())));
        }
        let vars = var_list(&self.state_names)?;
        let j = grid("J", &self.j, n, Some(n), &vars)?;
        let b = optional_grid("B", &self.b, n, &vars)?;
        let g = optional_grid("G", &self.g, n, &vars)?;
        let g_r = optional_grid("G_R", &self.g_r, n, &vars)?;
        let m_r = g_r.cols();
        let rbar = match (&self.rbar, m_r) {
            (None, 0) => DMatrix::zeros(0, 0),
            (None, _) => return Err(invalid("G_R given without Rbar".into())),
            (Some(rows), _) => {
                if rows.len() != m_r || rows.iter().any(|r| r.len() != m_r) {
                    return Err(invalid(format!("Rbar must be {m_r}x{m_r}")));
                }
                DMatrix::from_fn(m_r, m_r, |r, c| rows[r][c])
            }
        };
        let storage = self.storage.to_relation(&self.state_names)?;
        let mut sampling = SamplingConfig::unit_box(n);
        if let Some(bx) = &self.sample_box {
            if bx.len() != n || bx.iter().any(|[lo, hi]| !(lo <= hi) || !lo.is_finite() || !hi.is_finite()) {
                return Err(invalid(format!("sample_box must hold {n} finite [lo, hi] intervals")));
            }
            sampling.bounds = bx.iter().map(|&[lo, hi]| (lo, hi)).collect();
        }
        if let Some(seed) = seed {
            sampling = sampling.with_seed(seed);
        }
        let dirac = DiracStructure::new(j, b, g_r, g)?;
        Ok(PHSystem::assemble(dirac, storage, rbar, sampling)?)
    }

    pub fn from_system(sys: &PHSystem) -> Self {
        let d = sys.dirac();
        let names: Vec<String> = sys.names().iter().cloned().collect();
        let opt = |m: &MatrixExpr| (m.cols() > 0).then(|| m.to_strings());
        let rbar = (sys.m_r() > 0).then(|| {
            let r = sys.rbar();
            (0..r.nrows()).map(|i| r.row(i).iter().copied().collect()).collect()
        });
        let bounds = &sys.sampling().bounds;
        let sample_box = bounds.iter().any(|&b| b != (-1.0, 1.0)).then(|| bounds.iter().map(|&(lo, hi)| [lo, hi]).collect());
        SystemDescription {
            n: sys.n(),
            j: d.j().to_strings(),
            b: opt(d.b()),
            g: opt(d.g()),
            g_r: opt(d.g_r()),
            rbar,
            storage: StorageDescription::from_relation(sys.storage(), &names),
            sample_box,
            state_names: names,
        }
    }

    /// Re-print every expression through the parser, so that equivalent
    /// spellings of the same document compare equal.
    pub fn normalized(&self) -> Result<Self, SchemaError> {
        let vars = var_list(&self.state_names)?;
        let norm = |m: &Vec<Vec<String>>| -> Result<Vec<Vec<String>>, SchemaError> {
            m.iter().map(|r| r.iter().map(|s| Ok(ExprTree::parse(s, &vars)?.to_string())).collect()).collect()
        };
        let opt = |m: &Option<Vec<Vec<String>>>| m.as_ref().filter(|m| m.iter().any(|r| !r.is_empty())).map(norm).transpose();
        let storage = StorageDescription::from_relation(&self.storage.to_relation(&self.state_names)?, &self.state_names);
        Ok(SystemDescription {
            n: self.n,
            state_names: self.state_names.clone(),
            j: norm(&self.j)?,
            b: opt(&self.b)?,
            g: opt(&self.g)?,
            g_r: opt(&self.g_r)?,
            rbar: self.rbar.clone().filter(|r| !r.is_empty()),
            storage,
            sample_box: self.sample_box.clone().filter(|b| b.iter().any(|&iv| iv != [-1.0, 1.0])),
        })
    }
}

impl StorageDescription {
    pub fn to_relation(&self, names: &[String]) -> Result<StorageRelation, SchemaError> {
        let n = names.len();
        match self {
            StorageDescription::Hamiltonian(h) => Ok(StorageRelation::explicit(ExprTree::parse(h, names)?)),
            StorageDescription::Generating { i, j_idx, v } => {
                let zero_based = |idx: &[usize]| -> Result<Vec<usize>, SchemaError> {
                    idx.iter()
                        .map(|&k| if (1..=n).contains(&k) { Ok(k - 1) } else { Err(invalid(format!("state index {k} out of range 1..={n}"))) })
                        .collect()
                };
                let split = IndexSplit::new(zero_based(i)?, zero_based(j_idx)?)?;
                let vars = generating_vars(&split, names);
                Ok(StorageRelation::generating(split, ExprTree::parse(v, &vars)?)?)
            }
            StorageDescription::Morse { k, f } => {
                let vars: Vec<String> = names.iter().cloned().chain(multiplier_names(names, *k)).collect();
                Ok(StorageRelation::morse(*k, ExprTree::parse(f, &vars)?)?)
            }
        }
    }

    pub fn from_relation(s: &StorageRelation, names: &[String]) -> Self {
        match s {
            StorageRelation::Explicit { h } => StorageDescription::Hamiltonian(h.tree().to_string()),
            StorageRelation::Generating { split, v } => {
                let vars = var_list(&generating_vars(split, names)).expect("state names are distinct");
                let id: Vec<usize> = (0..v.nvars()).collect();
                let v = v.tree().remap(&id, vars).expect("same arity");
                StorageDescription::Generating {
                    i: split.i().iter().map(|k| k + 1).collect(),
                    j_idx: split.j().iter().map(|k| k + 1).collect(),
                    v: v.to_string(),
                }
            }
            StorageRelation::Morse { k, f } => {
                let vars: Arc<[String]> = names.iter().cloned().chain(multiplier_names(names, *k)).collect();
                let id: Vec<usize> = (0..f.nvars()).collect();
                StorageDescription::Morse { k: *k, f: f.tree().remap(&id, vars).expect("same arity").to_string() }
            }
        }
    }
}

fn write_value(v: &serde_json::Value, indent: usize, out: &mut String) {
    use serde_json::Value;
    let pad = |n: usize| "  ".repeat(n);
    let flat = |v: &Value| !matches!(v, Value::Array(_) | Value::Object(_));
    let inline = |items: &[Value]| format!("[{}]", items.iter().map(Value::to_string).collect::<Vec<_>>().join(", "));
    match v {
        Value::Array(items) if items.iter().all(flat) => out.push_str(&inline(items)),
        Value::Array(items) if items.iter().all(|i| matches!(i, Value::Array(a) if a.iter().all(flat))) => {
            out.push_str("[\n");
            for (k, item) in items.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                if let Value::Array(row) = item {
                    out.push_str(&inline(row));
                }
                out.push_str(if k + 1 < items.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push(']');
        }
        Value::Object(map) => {
            out.push_str("{\n");
            for (k, (key, item)) in map.iter().enumerate() {
                out.push_str(&format!("{}{}: ", pad(indent + 1), Value::String(key.clone())));
                write_value(item, indent + 1, out);
                out.push_str(if k + 1 < map.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push('}');
        }
        Value::Array(items) => {
            out.push_str("[\n");
            for (k, item) in items.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                write_value(item, indent + 1, out);
                out.push_str(if k + 1 < items.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push(']');
        }
        other => out.push_str(&other.to_string()),
    }
}

fn generating_vars(split: &IndexSplit, names: &[String]) -> Vec<String> {
    split.i().iter().map(|&i| names[i].clone()).chain(split.j().iter().map(|&j| format!("e_{}", names[j]))).collect()
}

fn invalid(msg: String) -> SchemaError {
    SchemaError::Invalid(msg)
}

fn grid(name: &str, rows: &[Vec<String>], n: usize, cols: Option<usize>, vars: &Arc<[String]>) -> Result<MatrixExpr, SchemaError> {
    if rows.len() != n {
        return Err(invalid(format!("{name} has {} rows, expected {n}", rows.len())));
    }
    let width = cols.unwrap_or_else(|| rows.first().map_or(0, |r| r.len()));
    if let Some(r) = rows.iter().position(|r| r.len() != width) {
        return Err(invalid(format!("{name} row {} has {} entries, expected {width}", r + 1, rows[r].len())));
    }
    Ok(MatrixExpr::parse(rows, width, vars.clone())?)
}

fn optional_grid(name: &str, rows: &Option<Vec<Vec<String>>>, n: usize, vars: &Arc<[String]>) -> Result<MatrixExpr, SchemaError> {
    match rows {
        Some(r) if !r.is_empty() => grid(name, r, n, None, vars),
        _ => Ok(MatrixExpr::zeros(n, 0, vars.clone())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CAP: &str = r#"{
        "n": 2,
        "state_names": ["x1", "x2"],
        "J": [["0", "0"], ["0", "0"]],
        "B": [["1"], ["-1"]],
        "G": [["1"], ["0"]],
        "storage": {"hamiltonian": "0.5*(x1^2 + x2^2)"}
    }"#;

    #[test]
    fn parses_and_assembles() {
        let d = SystemDescription::from_json(CAP).unwrap();
        let sys = d.to_system(None).unwrap();
        assert_eq!((sys.n(), sys.k(), sys.m_p(), sys.m_r()), (2, 1, 1, 0));
    }

    #[test]
    fn round_trip_is_fixed_point() {
        let d = SystemDescription::from_json(CAP).unwrap();
        let text = d.to_json();
        let again = SystemDescription::from_json(&text).unwrap();
        assert_eq!(d, again);
        assert_eq!(again.to_json(), text);
        let via_system = SystemDescription::from_system(&d.to_system(None).unwrap());
        assert_eq!(via_system, d.normalized().unwrap());
    }

    #[test]
    fn malformed_json_reports_position() {
        let err = SystemDescription::from_json("{\n  \"n\": 2,\n  oops\n}").unwrap_err();
        let SchemaError::Json { line, column, .. } = err else { panic!("{err:?}") };
        assert_eq!((line, column), (3, 3));
    }

    #[test]
    fn schema_errors() {
        let bad = CAP.replace("\"n\": 2", "\"n\": 3");
        assert!(matches!(SystemDescription::from_json(&bad).unwrap().to_system(None), Err(SchemaError::Invalid(_))));
        let bad = CAP.replace("\"B\": [[\"1\"], [\"-1\"]]", "\"B\": [[\"1\"], [\"-1\", \"2\"]]");
        assert!(matches!(SystemDescription::from_json(&bad).unwrap().to_system(None), Err(SchemaError::Invalid(_))));
        let bad = CAP.replace("0.5*(x1^2 + x2^2)", "0.5*y^2");
        assert!(matches!(SystemDescription::from_json(&bad).unwrap().to_system(None), Err(SchemaError::Expr(_))));
        let bad = CAP.replace("\"storage\"", "\"extra\": 1, \"storage\"");
        assert!(matches!(SystemDescription::from_json(&bad), Err(SchemaError::Json { .. })));
    }

    #[test]
    fn non_skew_is_a_system_error() {
        let bad = CAP.replace("[[\"0\", \"0\"], [\"0\", \"0\"]]", "[[\"0\", \"1\"], [\"1\", \"0\"]]");
        let err = SystemDescription::from_json(&bad).unwrap().to_system(None).unwrap_err();
        assert!(matches!(err, SchemaError::System(SystemError::ValidationFailed { .. })), "{err:?}");
    }

    #[test]
    fn generating_and_morse_storage() {
        let names = vec!["x1".to_string(), "x2".to_string()];
        let g = StorageDescription::Generating { i: vec![1], j_idx: vec![2], v: "0.5*x1^2 - 0.5*e_x2^2".into() };
        let rel = g.to_relation(&names).unwrap();
        assert_eq!(StorageDescription::from_relation(&rel, &names), g);
        let m = StorageDescription::Morse { k: 1, f: "lam1*x1 + x2^2".into() };
        assert_eq!(StorageDescription::from_relation(&m.to_relation(&names).unwrap(), &names), m);
        let bad = StorageDescription::Generating { i: vec![0], j_idx: vec![2], v: "0".into() };
        assert!(matches!(bad.to_relation(&names), Err(SchemaError::Invalid(_))));
    }
}
