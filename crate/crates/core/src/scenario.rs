//! Scenario files: a UTF-8 JSON document (schema 1) defining the signature,
//! the chart, the frame field, and optionally a transformation, a contorsion
//! or torsion tensor, and a spinor, all as expression strings.
//!
//! Validation reports a JSON-pointer-style location for schema errors and
//! the offending grid point for non-finite or singular samples.

use crate::chart::{Chart, Field, FieldError, FrameField, MetricField, TransformField};
use crate::chart::{DEFAULT_FD_REL, DEFAULT_SAMPLES};
use crate::clifford::{build_eta, build_gamma, GammaRep, Signature};
use crate::connection::{ContorsionField, TorsionField};
use crate::dirac::SpinorField;
use crate::fieldlang::{parse, Expr, FieldDef};
use crate::report::Tolerances;
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("failed to read {path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error("{pointer}: {message}")]
    Schema { pointer: String, message: String },
    #[error("{pointer}: expression error at {inner}")]
    Expr {
        pointer: String,
        inner: crate::fieldlang::ParseError,
    },
    #[error(transparent)]
    Field(#[from] FieldError),
}

fn schema_err(pointer: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Schema {
        pointer: pointer.to_string(),
        message: message.into(),
    }
}

/// A loaded, validated scenario: every field sampled finitely on the chart.
#[derive(Debug)]
pub struct Scenario {
    pub name: String,
    pub digest: String,
    pub signature: Signature,
    pub rep: GammaRep,
    pub eta: crate::chart::RMatrix,
    pub chart: Arc<Chart>,
    pub frame: FrameField,
    pub metric: MetricField,
    pub transform: Option<TransformField>,
    pub contorsion: Option<ContorsionField>,
    pub torsion: Option<TorsionField>,
    pub spinor: Option<SpinorField>,
    pub mass: f64,
    pub tolerances: Tolerances,
    pub seed: u64,
}

pub fn load_scenario(path: &std::path::Path) -> Result<Scenario, ScenarioError> {
    let bytes = std::fs::read(path).map_err(|e| ScenarioError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".to_string());
    load_scenario_bytes(&name, &bytes)
}

pub fn load_scenario_str(default_name: &str, text: &str) -> Result<Scenario, ScenarioError> {
    load_scenario_bytes(default_name, text.as_bytes())
}

fn load_scenario_bytes(default_name: &str, bytes: &[u8]) -> Result<Scenario, ScenarioError> {
    let digest = {
        let mut hasher = Sha256::new();
        hasher.update(bytes);
        let d = hasher.finalize();
        let mut s = String::with_capacity(64);
        for b in d {
            s.push_str(&format!("{b:02x}"));
        }
        s
    };
    let root: Value =
        serde_json::from_slice(bytes).map_err(|e| ScenarioError::Json(e.to_string()))?;
    let obj = root
        .as_object()
        .ok_or_else(|| schema_err("", "scenario must be a JSON object"))?;

    const KNOWN: [&str; 11] = [
        "schema",
        "name",
        "signature",
        "chart",
        "frame",
        "transform",
        "contorsion",
        "torsion",
        "spinor",
        "mass",
        "tolerances",
    ];
    for key in obj.keys() {
        if !KNOWN.contains(&key.as_str()) && key != "seed" {
            return Err(schema_err(&format!("/{key}"), "unknown field"));
        }
    }

    let schema = require(&root, "", "schema")?;
    if schema.as_u64() != Some(1) {
        return Err(schema_err("/schema", "unsupported schema version (expected 1)"));
    }

    let name = match obj.get("name") {
        Some(v) => v
            .as_str()
            .ok_or_else(|| schema_err("/name", "must be a string"))?
            .to_string(),
        None => default_name.to_string(),
    };

    // Signature and representation.
    let sig_v = require(&root, "", "signature")?;
    let plus = as_usize(require(sig_v, "/signature", "plus")?, "/signature/plus")?;
    let minus = as_usize(require(sig_v, "/signature", "minus")?, "/signature/minus")?;
    let signature = Signature::new(plus, minus)
        .map_err(|e| schema_err("/signature", e.to_string()))?;
    let rep = build_gamma(signature).map_err(|e| schema_err("/signature", e.to_string()))?;
    let eta = build_eta(signature);
    let m = signature.dim();

    // Chart.
    let chart_v = require(&root, "", "chart")?;
    let coords_v = as_array(require(chart_v, "/chart", "coords")?, "/chart/coords")?;
    let coords: Vec<String> = coords_v
        .iter()
        .enumerate()
        .map(|(i, v)| {
            v.as_str()
                .map(|s| s.to_string())
                .ok_or_else(|| schema_err(&format!("/chart/coords/{i}"), "must be a string"))
        })
        .collect::<Result<_, _>>()?;
    if coords.len() != m {
        return Err(schema_err(
            "/chart/coords",
            format!("expected {m} coordinates for signature ({plus},{minus}), got {}", coords.len()),
        ));
    }
    let ranges_v = as_array(require(chart_v, "/chart", "ranges")?, "/chart/ranges")?;
    if ranges_v.len() != m {
        return Err(schema_err("/chart/ranges", format!("expected {m} ranges")));
    }
    let mut ranges = Vec::with_capacity(m);
    for (i, rv) in ranges_v.iter().enumerate() {
        let ptr = format!("/chart/ranges/{i}");
        let pair = as_array(rv, &ptr)?;
        if pair.len() != 2 {
            return Err(schema_err(&ptr, "range must be [lo, hi]"));
        }
        let lo = as_f64(&pair[0], &format!("{ptr}/0"))?;
        let hi = as_f64(&pair[1], &format!("{ptr}/1"))?;
        ranges.push((lo, hi));
    }
    let samples = match chart_v.get("samples") {
        None => vec![DEFAULT_SAMPLES; m],
        Some(v) => {
            if let Some(n) = v.as_u64() {
                vec![n as usize; m]
            } else {
                let arr = as_array(v, "/chart/samples")?;
                if arr.len() != m {
                    return Err(schema_err("/chart/samples", format!("expected {m} entries")));
                }
                arr.iter()
                    .enumerate()
                    .map(|(i, x)| as_usize(x, &format!("/chart/samples/{i}")))
                    .collect::<Result<_, _>>()?
            }
        }
    };
    // fd_step is relative to each axis range.
    let fd_rel: Vec<f64> = match chart_v.get("fd_step") {
        None => vec![DEFAULT_FD_REL; m],
        Some(v) => {
            if let Some(x) = v.as_f64() {
                vec![x; m]
            } else {
                let arr = as_array(v, "/chart/fd_step")?;
                if arr.len() != m {
                    return Err(schema_err("/chart/fd_step", format!("expected {m} entries")));
                }
                arr.iter()
                    .enumerate()
                    .map(|(i, x)| as_f64(x, &format!("/chart/fd_step/{i}")))
                    .collect::<Result<_, _>>()?
            }
        }
    };
    let fd_step: Vec<f64> = ranges
        .iter()
        .zip(&fd_rel)
        .map(|((lo, hi), rel)| rel * (hi - lo))
        .collect();
    let chart = Chart::new(coords.clone(), ranges, samples, fd_step)
        .map_err(|e| schema_err("/chart", e.to_string()))?;

    // Frame: a list of m frame vectors, frame[a][mu] = e^mu_a.
    let frame_v = require(&root, "", "frame")?;
    let frame_rows = parse_matrix_exprs(frame_v, "/frame", m, &coords)?;
    let frame_exprs: Vec<Expr> = (0..m)
        .flat_map(|mu| (0..m).map(move |a| (mu, a)))
        .map(|(mu, a)| frame_rows[a][mu].clone())
        .collect();
    let frame_def = FieldDef::new(coords.clone(), vec![m, m], frame_exprs);
    let frame = FrameField::from_def(&chart, &frame_def)?;
    let metric = crate::chart::induce_metric(&frame, &eta)?;
    metric.validate_signature(plus, minus)?;

    // Optional transformation phi[mu][nu].
    let transform = match obj.get("transform") {
        None => None,
        Some(v) => {
            let rows = parse_matrix_exprs(v, "/transform", m, &coords)?;
            let exprs: Vec<Expr> = rows.into_iter().flatten().collect();
            let def = FieldDef::new(coords.clone(), vec![m, m], exprs);
            Some(TransformField::from_def(&chart, &def)?)
        }
    };

    // Exactly one of contorsion / torsion / neither.
    if obj.contains_key("contorsion") && obj.contains_key("torsion") {
        return Err(schema_err(
            "/torsion",
            "provide at most one of `contorsion` and `torsion`",
        ));
    }
    let contorsion = match obj.get("contorsion") {
        None => None,
        Some(v) => {
            let exprs = parse_cube_exprs(v, "/contorsion", m, &coords)?;
            let def = FieldDef::new(coords.clone(), vec![m, m, m], exprs);
            let raw = Field::from_def(&chart, &def, "contorsion")?;
            Some(ContorsionField::antisymmetrize(raw)?.0)
        }
    };
    let torsion = match obj.get("torsion") {
        None => None,
        Some(v) => {
            let exprs = parse_cube_exprs(v, "/torsion", m, &coords)?;
            let def = FieldDef::new(coords.clone(), vec![m, m, m], exprs);
            let raw = Field::from_def(&chart, &def, "torsion")?;
            Some(TorsionField::antisymmetrize(raw)?.0)
        }
    };

    // Optional spinor: k (re, im) expression pairs.
    let spinor = match obj.get("spinor") {
        None => None,
        Some(v) => {
            let arr = as_array(v, "/spinor")?;
            if arr.len() != rep.k {
                return Err(schema_err(
                    "/spinor",
                    format!("expected {} component pairs for k = {}", rep.k, rep.k),
                ));
            }
            let mut pairs = Vec::with_capacity(rep.k);
            for (i, pv) in arr.iter().enumerate() {
                let ptr = format!("/spinor/{i}");
                let pair = as_array(pv, &ptr)?;
                if pair.len() != 2 {
                    return Err(schema_err(&ptr, "component must be [re, im]"));
                }
                let re = parse_expr_value(&pair[0], &format!("{ptr}/0"), &coords)?;
                let im = parse_expr_value(&pair[1], &format!("{ptr}/1"), &coords)?;
                pairs.push((re, im));
            }
            Some(SpinorField::from_exprs(&chart, &pairs)?)
        }
    };

    let mass = match obj.get("mass") {
        None => 0.0,
        Some(v) => as_f64(v, "/mass")?,
    };

    let tolerances = match obj.get("tolerances") {
        None => Tolerances::default(),
        Some(v) => {
            let mut t = Tolerances::default();
            if let Some(x) = v.get("exact") {
                t.exact = as_f64(x, "/tolerances/exact")?;
            }
            if let Some(x) = v.get("fd1") {
                t.fd1 = as_f64(x, "/tolerances/fd1")?;
            }
            if let Some(x) = v.get("fd2") {
                t.fd2 = as_f64(x, "/tolerances/fd2")?;
            }
            t
        }
    };

    let seed = match obj.get("seed") {
        None => 0,
        Some(v) => v
            .as_u64()
            .ok_or_else(|| schema_err("/seed", "must be an unsigned integer"))?,
    };

    Ok(Scenario {
        name,
        digest,
        signature,
        rep,
        eta,
        chart,
        frame,
        metric,
        transform,
        contorsion,
        torsion,
        spinor,
        mass,
        tolerances,
        seed,
    })
}

fn require<'a>(v: &'a Value, ptr: &str, key: &str) -> Result<&'a Value, ScenarioError> {
    v.get(key)
        .ok_or_else(|| schema_err(&format!("{ptr}/{key}"), "missing required field"))
}

fn as_array<'a>(v: &'a Value, ptr: &str) -> Result<&'a Vec<Value>, ScenarioError> {
    v.as_array().ok_or_else(|| schema_err(ptr, "must be an array"))
}

fn as_f64(v: &Value, ptr: &str) -> Result<f64, ScenarioError> {
    v.as_f64().ok_or_else(|| schema_err(ptr, "must be a number"))
}

fn as_usize(v: &Value, ptr: &str) -> Result<usize, ScenarioError> {
    v.as_u64()
        .map(|x| x as usize)
        .ok_or_else(|| schema_err(ptr, "must be an unsigned integer"))
}

fn parse_expr_value(v: &Value, ptr: &str, coords: &[String]) -> Result<Expr, ScenarioError> {
    let src = v
        .as_str()
        .ok_or_else(|| schema_err(ptr, "must be an expression string"))?;
    parse(src, coords).map_err(|e| ScenarioError::Expr {
        pointer: ptr.to_string(),
        inner: e,
    })
}

fn parse_matrix_exprs(
    v: &Value,
    ptr: &str,
    m: usize,
    coords: &[String],
) -> Result<Vec<Vec<Expr>>, ScenarioError> {
    let rows = as_array(v, ptr)?;
    if rows.len() != m {
        return Err(schema_err(ptr, format!("expected {m} rows")));
    }
    let mut out = Vec::with_capacity(m);
    for (i, row_v) in rows.iter().enumerate() {
        let rptr = format!("{ptr}/{i}");
        let row = as_array(row_v, &rptr)?;
        if row.len() != m {
            return Err(schema_err(&rptr, format!("expected {m} entries")));
        }
        let mut parsed = Vec::with_capacity(m);
        for (j, e) in row.iter().enumerate() {
            parsed.push(parse_expr_value(e, &format!("{rptr}/{j}"), coords)?);
        }
        out.push(parsed);
    }
    Ok(out)
}

fn parse_cube_exprs(
    v: &Value,
    ptr: &str,
    m: usize,
    coords: &[String],
) -> Result<Vec<Expr>, ScenarioError> {
    let outer = as_array(v, ptr)?;
    if outer.len() != m {
        return Err(schema_err(ptr, format!("expected {m} outer entries")));
    }
    let mut out = Vec::with_capacity(m * m * m);
    for (i, mid_v) in outer.iter().enumerate() {
        let mptr = format!("{ptr}/{i}");
        let mid = as_array(mid_v, &mptr)?;
        if mid.len() != m {
            return Err(schema_err(&mptr, format!("expected {m} entries")));
        }
        for (j, inner_v) in mid.iter().enumerate() {
            let iptr = format!("{mptr}/{j}");
            let inner = as_array(inner_v, &iptr)?;
            if inner.len() != m {
                return Err(schema_err(&iptr, format!("expected {m} entries")));
            }
            for (k, e) in inner.iter().enumerate() {
                out.push(parse_expr_value(e, &format!("{iptr}/{k}"), coords)?);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema": 1,
        "signature": { "plus": 2, "minus": 0 },
        "chart": {
            "coords": ["x", "y"],
            "ranges": [[0.0, 1.0], [0.0, 1.0]],
            "samples": 4
        },
        "frame": [["1", "0"], ["0", "1"]]
    }"#;

    #[test]
    fn minimal_flat_scenario_loads() {
        let s = load_scenario_str("flat", MINIMAL).unwrap();
        assert_eq!(s.signature.dim(), 2);
        assert_eq!(s.rep.k, 2);
        assert_eq!(s.mass, 0.0);
        assert_eq!(s.seed, 0);
        assert_eq!(s.tolerances, Tolerances::default());
        assert!(s.transform.is_none());
        assert_eq!(s.digest.len(), 64);
    }

    #[test]
    fn singular_sample_is_reported_with_its_point() {
        let text = r#"{
            "schema": 1,
            "signature": { "plus": 2, "minus": 0 },
            "chart": {
                "coords": ["r", "th"],
                "ranges": [[-1.0, 1.0], [0.2, 1.0]],
                "samples": 3
            },
            "frame": [["1", "0"], ["0", "1/r"]]
        }"#;
        let err = load_scenario_str("bad", text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("r=0"), "{msg}");
    }

    #[test]
    fn contorsion_and_torsion_are_mutually_exclusive() {
        let text = r#"{
            "schema": 1,
            "signature": { "plus": 2, "minus": 0 },
            "chart": {
                "coords": ["x", "y"],
                "ranges": [[0.0, 1.0], [0.0, 1.0]]
            },
            "frame": [["1", "0"], ["0", "1"]],
            "contorsion": [[["0","0"],["0","0"]],[["0","0"],["0","0"]]],
            "torsion": [[["0","0"],["0","0"]],[["0","0"],["0","0"]]]
        }"#;
        let err = load_scenario_str("both", text).unwrap_err();
        assert!(err.to_string().contains("at most one"), "{err}");
    }

    #[test]
    fn schema_errors_carry_json_pointers() {
        let missing = r#"{ "schema": 1 }"#;
        let err = load_scenario_str("x", missing).unwrap_err();
        assert!(err.to_string().starts_with("/signature"), "{err}");

        let bad_expr = r#"{
            "schema": 1,
            "signature": { "plus": 2, "minus": 0 },
            "chart": { "coords": ["x", "y"], "ranges": [[0.0, 1.0], [0.0, 1.0]] },
            "frame": [["1", "0"], ["0", "2q"]]
        }"#;
        let err = load_scenario_str("x", bad_expr).unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("/frame/1/1"), "{msg}");

        let wrong_version = r#"{ "schema": 2, "signature": {"plus":2,"minus":0},
            "chart": { "coords": ["x","y"], "ranges": [[0.0,1.0],[0.0,1.0]] },
            "frame": [["1","0"],["0","1"]] }"#;
        let err = load_scenario_str("x", wrong_version).unwrap_err();
        assert!(err.to_string().starts_with("/schema"), "{err}");

        let unknown = r#"{ "schema": 1, "signature": {"plus":2,"minus":0},
            "chart": { "coords": ["x","y"], "ranges": [[0.0,1.0],[0.0,1.0]] },
            "frame": [["1","0"],["0","1"]], "frmae": [] }"#;
        let err = load_scenario_str("x", unknown).unwrap_err();
        assert!(err.to_string().contains("unknown field"), "{err}");
    }

    #[test]
    fn spinor_count_must_match_representation_dimension() {
        let text = r#"{
            "schema": 1,
            "signature": { "plus": 2, "minus": 0 },
            "chart": { "coords": ["x", "y"], "ranges": [[0.0, 1.0], [0.0, 1.0]] },
            "frame": [["1", "0"], ["0", "1"]],
            "spinor": [["1", "0"]]
        }"#;
        let err = load_scenario_str("x", text).unwrap_err();
        assert!(err.to_string().contains("expected 2 component pairs"), "{err}");
    }

    #[test]
    fn loaded_contorsion_is_antisymmetrized() {
        let text = r#"{
            "schema": 1,
            "signature": { "plus": 2, "minus": 0 },
            "chart": { "coords": ["x", "y"], "ranges": [[0.0, 1.0], [0.0, 1.0]] },
            "frame": [["1", "0"], ["0", "1"]],
            "contorsion": [
                [["0.4", "0.2"], ["0.1", "0"]],
                [["0.3", "0"], ["0", "0"]]
            ]
        }"#;
        let s = load_scenario_str("x", text).unwrap();
        let k = s.contorsion.unwrap();
        assert_eq!(k.antisymmetry_defect(), 0.0);
        // K_{00mu} antisymmetrizes to zero, K_{01 0} = (0.1 - 0.3)/2 = -0.1.
        let v = k.field().at(0);
        assert_eq!(v[crate::chart::idx3(2, 0, 0, 0)], 0.0);
        assert!((v[crate::chart::idx3(2, 0, 1, 0)] + 0.1).abs() < 1e-15);
    }

    #[test]
    fn metric_signature_is_validated_at_load() {
        // A frame whose induced metric cannot have signature (1,1) on a
        // (1,1) declaration is impossible by construction (the induced
        // metric always matches eta), so check the positive path instead.
        let text = r#"{
            "schema": 1,
            "signature": { "plus": 1, "minus": 1 },
            "chart": { "coords": ["x", "y"], "ranges": [[0.0, 1.0], [0.0, 1.0]] },
            "frame": [["1", "0.5"], ["0", "1"]]
        }"#;
        let s = load_scenario_str("x", text).unwrap();
        s.metric.validate_signature(1, 1).unwrap();
    }
}
