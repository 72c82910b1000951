//! Entities, interventions, explanations and the two minimality orders.
//!
//! Everything here is value-level: no search and no classifier calls. Feature
//! positions are plain `usize` indices into a [`FeatureSchema`]; sets of
//! changes are kept in `BTreeMap`s so that iteration (and serialization) is
//! always in ascending feature order.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("feature name must not be empty")]
    EmptyFeatureName,
    #[error("duplicate feature name `{0}`")]
    DuplicateFeatureName(String),
    #[error("feature `{0}` has an empty domain")]
    EmptyDomain(String),
    #[error("feature `{feature}` lists value `{value}` twice")]
    DuplicateDomainValue { feature: String, value: String },
    #[error("feature `{feature}` is marked ordered but `{value}` is not an integer")]
    NonIntegerOrderedValue { feature: String, value: String },
    #[error("entity has {found} values, schema has {expected} features")]
    ArityMismatch { expected: usize, found: usize },
    #[error("feature index {0} is out of range")]
    FeatureOutOfRange(usize),
    #[error("value `{value}` is not in the domain of `{feature}`")]
    OutOfDomainValue { feature: String, value: String },
    #[error("change on `{feature}` keeps the current value `{value}`")]
    SameAsOriginal { feature: String, value: String },
    #[error("feature index {0} appears twice in one intervention")]
    DuplicateFeature(usize),
    #[error("entities do not conform to the same schema")]
    SchemaMismatch,
}

/// A canonical feature value. Cheap to clone.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Value(Arc<str>);

impl Value {
    pub fn new(literal: impl AsRef<str>) -> Self {
        Value(Arc::from(literal.as_ref()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Integer reading of the literal, used by ordered features.
    pub fn as_int(&self) -> Option<i64> {
        self.0.trim().parse().ok()
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", &*self.0)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::new(s)
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Value(Arc::from(s))
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::new(v.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDecl {
    pub name: String,
    pub domain: Vec<Value>,
    /// Enables `<`, `<=`, `>`, `>=` on this feature.
    pub ordered: bool,
}

impl FeatureDecl {
    pub fn new(name: impl Into<String>, domain: Vec<Value>, ordered: bool) -> Self {
        FeatureDecl {
            name: name.into(),
            domain,
            ordered,
        }
    }

    /// Declaration whose `ordered` flag is set iff every value is an integer.
    pub fn inferred(name: impl Into<String>, domain: Vec<Value>) -> Self {
        let ordered = !domain.is_empty() && domain.iter().all(|v| v.as_int().is_some());
        FeatureDecl::new(name, domain, ordered)
    }

    pub fn position(&self, value: &Value) -> Option<usize> {
        self.domain.iter().position(|v| v == value)
    }

    pub fn contains(&self, value: &Value) -> bool {
        self.position(value).is_some()
    }
}

/// Ordered list of features with finite domains.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FeatureSchema {
    features: Vec<FeatureDecl>,
}

impl FeatureSchema {
    pub fn new(features: Vec<FeatureDecl>) -> Result<Self, ModelError> {
        let mut names = HashSet::new();
        for f in &features {
            if f.name.is_empty() {
                return Err(ModelError::EmptyFeatureName);
            }
            if !names.insert(f.name.as_str()) {
                return Err(ModelError::DuplicateFeatureName(f.name.clone()));
            }
            if f.domain.is_empty() {
                return Err(ModelError::EmptyDomain(f.name.clone()));
            }
            let mut seen = HashSet::new();
            for v in &f.domain {
                if !seen.insert(v) {
                    return Err(ModelError::DuplicateDomainValue {
                        feature: f.name.clone(),
                        value: v.to_string(),
                    });
                }
                if f.ordered && v.as_int().is_none() {
                    return Err(ModelError::NonIntegerOrderedValue {
                        feature: f.name.clone(),
                        value: v.to_string(),
                    });
                }
            }
        }
        Ok(FeatureSchema { features })
    }

    /// Schema of `n` binary features named `F1..Fn` with domain `{0, 1}`.
    pub fn binary(n: usize) -> Self {
        let features = (1..=n)
            .map(|i| FeatureDecl::new(format!("F{i}"), vec!["0".into(), "1".into()], false))
            .collect();
        FeatureSchema { features }
    }

    pub fn arity(&self) -> usize {
        self.features.len()
    }

    pub fn features(&self) -> &[FeatureDecl] {
        &self.features
    }

    pub fn feature(&self, index: usize) -> Option<&FeatureDecl> {
        self.features.get(index)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.features.iter().map(|f| f.name.as_str())
    }

    fn decl(&self, index: usize) -> Result<&FeatureDecl, ModelError> {
        self.features
            .get(index)
            .ok_or(ModelError::FeatureOutOfRange(index))
    }

    /// Checks that `values` is one in-domain value per feature.
    pub fn check_values(&self, values: &[Value]) -> Result<(), ModelError> {
        if values.len() != self.arity() {
            return Err(ModelError::ArityMismatch {
                expected: self.arity(),
                found: values.len(),
            });
        }
        for (f, v) in self.features.iter().zip(values) {
            if !f.contains(v) {
                return Err(ModelError::OutOfDomainValue {
                    feature: f.name.clone(),
                    value: v.to_string(),
                });
            }
        }
        Ok(())
    }

    /// Domain positions of an entity's values.
    pub fn positions(&self, entity: &Entity) -> Result<Vec<usize>, ModelError> {
        self.check_values(entity.values())?;
        Ok(self
            .features
            .iter()
            .zip(entity.values())
            .map(|(f, v)| f.position(v).expect("checked above"))
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Zero,
    One,
}

impl Label {
    pub fn from_bit(bit: u8) -> Option<Label> {
        match bit {
            0 => Some(Label::Zero),
            1 => Some(Label::One),
            _ => None,
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            Label::Zero => 0,
            Label::One => 1,
        }
    }

    pub fn parse(s: &str) -> Option<Label> {
        match s.trim() {
            "0" => Some(Label::Zero),
            "1" => Some(Label::One),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.bit())
    }
}

/// A record `<x1, ..., xn>` with an opaque id.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Entity {
    id: String,
    values: Vec<Value>,
}

impl Entity {
    pub fn new(schema: &FeatureSchema, id: impl Into<String>, values: Vec<Value>) -> Result<Self, ModelError> {
        schema.check_values(&values)?;
        Ok(Entity {
            id: id.into(),
            values,
        })
    }

    /// Convenience constructor from string literals.
    pub fn parse(schema: &FeatureSchema, id: impl Into<String>, values: &[&str]) -> Result<Self, ModelError> {
        Entity::new(schema, id, values.iter().map(|v| Value::new(v)).collect())
    }

    /// Builds an entity from domain positions. Panics if a position is out of range.
    pub fn from_positions(schema: &FeatureSchema, id: impl Into<String>, positions: &[usize]) -> Self {
        let values = schema
            .features()
            .iter()
            .zip(positions)
            .map(|(f, &p)| f.domain[p].clone())
            .collect();
        Entity { id: id.into(), values }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn values(&self) -> &[Value] {
        &self.values
    }

    pub fn value(&self, index: usize) -> &Value {
        &self.values[index]
    }

    pub fn arity(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Explicit,
    /// Added by an implication rule while propagating constraints.
    Propagated,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Change {
    pub value: Value,
    pub provenance: Provenance,
}

/// A set of `(feature, new value)` pairs on distinct features.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Intervention {
    changes: BTreeMap<usize, Change>,
}

impl Intervention {
    pub fn empty() -> Self {
        Intervention::default()
    }

    /// Explicit intervention from `(feature, value)` pairs; rejects repeated features.
    pub fn new<I, V>(pairs: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = (usize, V)>,
        V: Into<Value>,
    {
        let mut changes = BTreeMap::new();
        for (feature, value) in pairs {
            let change = Change {
                value: value.into(),
                provenance: Provenance::Explicit,
            };
            if changes.insert(feature, change).is_some() {
                return Err(ModelError::DuplicateFeature(feature));
            }
        }
        Ok(Intervention { changes })
    }

    /// Adds a change. Fails if the feature is already present.
    pub fn insert(&mut self, feature: usize, value: Value, provenance: Provenance) -> Result<(), ModelError> {
        if self.changes.contains_key(&feature) {
            return Err(ModelError::DuplicateFeature(feature));
        }
        self.changes.insert(feature, Change { value, provenance });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.changes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.changes.is_empty()
    }

    /// Number of explicit (non-propagated) changes.
    pub fn explicit_len(&self) -> usize {
        self.changes
            .values()
            .filter(|c| c.provenance == Provenance::Explicit)
            .count()
    }

    pub fn get(&self, feature: usize) -> Option<&Change> {
        self.changes.get(&feature)
    }

    /// Changes in ascending feature order.
    pub fn changes(&self) -> impl Iterator<Item = (usize, &Change)> {
        self.changes.iter().map(|(&i, c)| (i, c))
    }

    /// The projection on features, ascending.
    pub fn features(&self) -> BTreeSet<usize> {
        self.changes.keys().copied().collect()
    }

    pub fn explicit_features(&self) -> BTreeSet<usize> {
        self.changes
            .iter()
            .filter(|(_, c)| c.provenance == Provenance::Explicit)
            .map(|(&i, _)| i)
            .collect()
    }

    /// The same changes, all marked explicit.
    pub fn as_explicit(&self) -> Intervention {
        Intervention {
            changes: self
                .changes
                .iter()
                .map(|(&i, c)| {
                    (
                        i,
                        Change {
                            value: c.value.clone(),
                            provenance: Provenance::Explicit,
                        },
                    )
                })
                .collect(),
        }
    }

    /// Only the explicit changes.
    pub fn explicit_part(&self) -> Intervention {
        Intervention {
            changes: self
                .changes
                .iter()
                .filter(|(_, c)| c.provenance == Provenance::Explicit)
                .map(|(&i, c)| (i, c.clone()))
                .collect(),
        }
    }

    /// Checks the intervention against `e`: features in range, new values in
    /// domain and different from the current ones.
    pub fn validate(&self, schema: &FeatureSchema, e: &Entity) -> Result<(), ModelError> {
        if e.arity() != schema.arity() {
            return Err(ModelError::ArityMismatch {
                expected: schema.arity(),
                found: e.arity(),
            });
        }
        for (&i, change) in &self.changes {
            let decl = schema.decl(i)?;
            if !decl.contains(&change.value) {
                return Err(ModelError::OutOfDomainValue {
                    feature: decl.name.clone(),
                    value: change.value.to_string(),
                });
            }
            if e.value(i) == &change.value {
                return Err(ModelError::SameAsOriginal {
                    feature: decl.name.clone(),
                    value: change.value.to_string(),
                });
            }
        }
        Ok(())
    }
}

/// `ι(e)`: `e` with every intervened feature replaced by its new value.
pub fn apply_intervention(schema: &FeatureSchema, e: &Entity, iota: &Intervention) -> Result<Entity, ModelError> {
    iota.validate(schema, e)?;
    let mut values = e.values.clone();
    for (i, change) in iota.changes() {
        values[i] = change.value.clone();
    }
    Ok(Entity {
        id: e.id.clone(),
        values,
    })
}

/// The explicit intervention turning `e` into `e2`.
pub fn intervention_between(schema: &FeatureSchema, e: &Entity, e2: &Entity) -> Result<Intervention, ModelError> {
    if schema.check_values(e.values()).is_err() || schema.check_values(e2.values()).is_err() {
        return Err(ModelError::SchemaMismatch);
    }
    Intervention::new(
        e.values
            .iter()
            .zip(&e2.values)
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(i, (_, b))| (i, b.clone())),
    )
}

/// A causal explanation: original values at the intervened features, plus
/// the intervention that witnesses it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Explanation {
    items: BTreeMap<usize, Value>,
    witness: Intervention,
}

impl Explanation {
    /// Explanation for `witness`. When `count_propagated` is false only the
    /// explicit changes contribute items.
    pub fn from_witness(e: &Entity, witness: Intervention, count_propagated: bool) -> Explanation {
        let items = witness
            .changes()
            .filter(|(_, c)| count_propagated || c.provenance == Provenance::Explicit)
            .map(|(i, _)| (i, e.value(i).clone()))
            .collect();
        Explanation { items, witness }
    }

    pub fn items(&self) -> &BTreeMap<usize, Value> {
        &self.items
    }

    pub fn features(&self) -> BTreeSet<usize> {
        self.items.keys().copied().collect()
    }

    pub fn witness(&self) -> &Intervention {
        &self.witness
    }

    pub fn cardinality(&self) -> usize {
        self.items.len()
    }

    pub fn contains(&self, feature: usize) -> bool {
        self.items.contains_key(&feature)
    }
}

/// `ε(ι)` for a valid intervention on `e`, counting every change.
pub fn explanation_of(schema: &FeatureSchema, e: &Entity, iota: &Intervention) -> Result<Explanation, ModelError> {
    iota.validate(schema, e)?;
    Ok(Explanation::from_witness(e, iota.clone(), true))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MinimalityOrder {
    /// `ι1 ≤s ι2` iff the changed features of `ι1` are a subset of those of `ι2`.
    Subset,
    /// `ι1 ≤c ι2` iff `|ι1| ≤ |ι2|`.
    Cardinality,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precedence {
    Less,
    EqualOrIncomparable,
    Greater,
}

pub fn compare(a: &Intervention, b: &Intervention, order: MinimalityOrder) -> Precedence {
    match order {
        MinimalityOrder::Subset => {
            let (fa, fb) = (a.features(), b.features());
            if fa.len() < fb.len() && fa.is_subset(&fb) {
                Precedence::Less
            } else if fb.len() < fa.len() && fb.is_subset(&fa) {
                Precedence::Greater
            } else {
                Precedence::EqualOrIncomparable
            }
        }
        MinimalityOrder::Cardinality => match a.len().cmp(&b.len()) {
            std::cmp::Ordering::Less => Precedence::Less,
            std::cmp::Ordering::Equal => Precedence::EqualOrIncomparable,
            std::cmp::Ordering::Greater => Precedence::Greater,
        },
    }
}
