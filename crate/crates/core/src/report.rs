//! JSON form of an [`ExplanationReport`].
//!
//! ```json
//! {
//!   "entity": { "id": "e1", "values": { "F1": "0", "F2": "1", "F3": "1" } },
//!   "c_explanations": [[{ "feature": "F2", "index": 1, "original": "1",
//!                         "new": "0", "provenance": "explicit", "counted": true }]],
//!   "s_explanations": [ ... ],
//!   "resp": { "F1": { "original": "0", "value": 0.0, "exact": "0" }, ... },
//!   "diagnostics": { ... }
//! }
//! ```
//!
//! `causal_explanations` is present only when every causal explanation was
//! requested.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Diagnostics, ExplanationReport, Responsibility};
use crate::model::{Entity, Explanation, FeatureSchema, Intervention, ModelError, Provenance, Value};
use crate::Resp;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("invalid report JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown feature `{0}` in report")]
    UnknownFeature(String),
    #[error("feature `{name}` has index {index} in the report but {expected} in the schema")]
    IndexMismatch { name: String, index: usize, expected: usize },
    #[error("bad exact score `{0}`")]
    BadScore(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

// insertion-ordered thanks to `preserve_order`
type OrderedMap = serde_json::Map<String, serde_json::Value>;

#[derive(Debug, Serialize, Deserialize)]
struct EntityJson {
    id: String,
    values: OrderedMap,
}

#[derive(Debug, Serialize, Deserialize)]
struct ChangeJson {
    feature: String,
    index: usize,
    original: Value,
    new: Value,
    provenance: Provenance,
    /// Whether the change counts toward the explanation.
    counted: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct RespJson {
    original: Value,
    value: f64,
    exact: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ReportJson {
    entity: EntityJson,
    c_explanations: Vec<Vec<ChangeJson>>,
    s_explanations: Vec<Vec<ChangeJson>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    causal_explanations: Option<Vec<Vec<ChangeJson>>>,
    resp: OrderedMap,
    diagnostics: Diagnostics,
}

/// Rounds to six significant digits.
pub fn approx(score: Resp) -> f64 {
    let x = *score.numer() as f64 / *score.denom() as f64;
    format!("{x:.5e}").parse().expect("formatted float parses")
}

fn exact(score: Resp) -> String {
    if *score.denom() == 1 {
        score.numer().to_string()
    } else {
        format!("{}/{}", score.numer(), score.denom())
    }
}

fn parse_exact(s: &str) -> Result<Resp, ReportError> {
    let bad = || ReportError::BadScore(s.to_string());
    match s.split_once('/') {
        Some((n, d)) => {
            let (n, d): (u64, u64) = (n.trim().parse().map_err(|_| bad())?, d.trim().parse().map_err(|_| bad())?);
            if d == 0 {
                return Err(bad());
            }
            Ok(Resp::new(n, d))
        }
        None => Ok(Resp::from_integer(s.trim().parse().map_err(|_| bad())?)),
    }
}

fn explanation_json(schema: &FeatureSchema, e: &Entity, x: &Explanation) -> Vec<ChangeJson> {
    x.witness()
        .changes()
        .map(|(i, c)| ChangeJson {
            feature: schema.features()[i].name.clone(),
            index: i,
            original: e.value(i).clone(),
            new: c.value.clone(),
            provenance: c.provenance,
            counted: x.contains(i),
        })
        .collect()
}

fn resolve(schema: &FeatureSchema, name: &str, index: Option<usize>) -> Result<usize, ReportError> {
    let expected = schema
        .index_of(name)
        .ok_or_else(|| ReportError::UnknownFeature(name.to_string()))?;
    match index {
        Some(index) if index != expected => Err(ReportError::IndexMismatch {
            name: name.to_string(),
            index,
            expected,
        }),
        _ => Ok(expected),
    }
}

fn explanation_from_json(
    schema: &FeatureSchema,
    e: &Entity,
    changes: Vec<ChangeJson>,
    count_propagated: bool,
) -> Result<Explanation, ReportError> {
    let mut witness = Intervention::empty();
    for c in changes {
        let i = resolve(schema, &c.feature, Some(c.index))?;
        witness.insert(i, c.new, c.provenance)?;
    }
    witness.validate(schema, e)?;
    Ok(Explanation::from_witness(e, witness, count_propagated))
}

pub fn to_json_value(schema: &FeatureSchema, r: &ExplanationReport) -> serde_json::Value {
    let e = &r.entity;
    let values = schema
        .names()
        .zip(e.values())
        .map(|(n, v)| (n.to_string(), serde_json::Value::String(v.to_string())))
        .collect();
    let list = |xs: &[Explanation]| xs.iter().map(|x| explanation_json(schema, e, x)).collect();
    let resp = r
        .resp
        .iter()
        .map(|x| {
            let body = RespJson {
                original: x.value.clone(),
                value: approx(x.score),
                exact: exact(x.score),
            };
            (
                schema.features()[x.feature].name.clone(),
                serde_json::to_value(body).expect("plain data"),
            )
        })
        .collect();
    let doc = ReportJson {
        entity: EntityJson {
            id: e.id().to_string(),
            values,
        },
        c_explanations: list(&r.c_explanations),
        s_explanations: list(&r.s_explanations),
        causal_explanations: r.causal_explanations.as_deref().map(list),
        resp,
        diagnostics: r.diagnostics.clone(),
    };
    serde_json::to_value(doc).expect("plain data")
}

pub fn to_json(schema: &FeatureSchema, r: &ExplanationReport) -> String {
    serde_json::to_string_pretty(&to_json_value(schema, r)).expect("plain data")
}

pub fn from_json(text: &str, schema: &FeatureSchema) -> Result<ExplanationReport, ReportError> {
    let doc: ReportJson = serde_json::from_str(text)?;
    let mut values = vec![None; schema.arity()];
    for (name, v) in &doc.entity.values {
        let i = resolve(schema, name, None)?;
        let s = v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string());
        values[i] = Some(Value::new(s));
    }
    let values: Vec<Value> = values.into_iter().map(|v| v.unwrap_or_else(|| Value::new(""))).collect();
    let entity = Entity::new(schema, doc.entity.id, values)?;
    let count = doc.diagnostics.count_propagated;
    let list = |xs: Vec<Vec<ChangeJson>>| -> Result<Vec<Explanation>, ReportError> {
        xs.into_iter()
            .map(|x| explanation_from_json(schema, &entity, x, count))
            .collect()
    };
    let c_explanations = list(doc.c_explanations)?;
    let s_explanations = list(doc.s_explanations)?;
    let causal_explanations = doc.causal_explanations.map(list).transpose()?;
    let mut resp = Vec::with_capacity(doc.resp.len());
    for (name, body) in doc.resp {
        let feature = resolve(schema, &name, None)?;
        let body: RespJson = serde_json::from_value(body)?;
        resp.push(Responsibility {
            feature,
            value: body.original,
            score: parse_exact(&body.exact)?,
        });
    }
    resp.sort_by_key(|r| r.feature);
    Ok(ExplanationReport {
        entity,
        c_explanations,
        s_explanations,
        causal_explanations,
        resp,
        diagnostics: doc.diagnostics,
    })
}
