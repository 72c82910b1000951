//! Bucketization, one-hot encoding, domain extraction and the file formats
//! that feed them (schema files, sample and entity CSVs).
//!
//! Buckets are half-open with closed left ends. With cut points
//! `c1 < ... < c(N-1)` the buckets are `(-inf, c1), [c1, c2), ..., [c(N-1), inf)`.

use std::collections::{HashMap, HashSet};
use std::fmt::{Debug, Display};
use std::str::FromStr;

use num_traits::Float;
use serde::Deserialize;
use thiserror::Error;

use crate::constraints::ConstraintSet;
use crate::model::{Entity, FeatureDecl, FeatureSchema, Label, ModelError, Value};
use crate::tabular::{Table, TabularError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EncodingError {
    #[error("feature `{0}`: cut points must be finite and strictly increasing")]
    BadCutPoints(String),
    #[error("feature `{0}`: need at least one cut point (two buckets)")]
    TooFewBuckets(String),
    #[error("input is not a finite number")]
    NonFiniteInput,
    #[error("numeric feature `{0}` has no bucket spec")]
    MissingBucketSpec(String),
    #[error("generated feature name `{0}` collides with another feature")]
    NameCollision(String),
    #[error("no data rows")]
    EmptyData,
    #[error("row {row} has {found} values, expected {expected}")]
    RaggedRows { row: usize, expected: usize, found: usize },
    #[error("line {line}: entity ({tuple}) appears with labels 0 and 1")]
    ConflictingSampleLabels { line: usize, tuple: String },
    #[error("line {line}: `{value}` is not a number for feature `{feature}`")]
    BadNumber { line: usize, feature: String, value: String },
    #[error("feature `{0}` is numeric; encode the data first")]
    NumericFeature(String),
    #[error("schema file: {0}")]
    SchemaFile(String),
    #[error("entity file has {0} rows; select one with an id")]
    AmbiguousEntity(usize),
    #[error("no entity with id `{0}`")]
    UnknownEntity(String),
    #[error(transparent)]
    Tabular(#[from] TabularError),
    #[error("line {line}: {source}")]
    Model { line: usize, source: ModelError },
}

/// Cut points for one numeric feature.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketSpec<T> {
    feature: String,
    cuts: Vec<T>,
}

impl<T: Float> BucketSpec<T> {
    pub fn new(feature: impl Into<String>, cuts: Vec<T>) -> Result<Self, EncodingError> {
        let feature = feature.into();
        if cuts.is_empty() {
            return Err(EncodingError::TooFewBuckets(feature));
        }
        if cuts.iter().any(|c| !c.is_finite()) || cuts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EncodingError::BadCutPoints(feature));
        }
        Ok(BucketSpec { feature, cuts })
    }

    pub fn feature(&self) -> &str {
        &self.feature
    }

    pub fn cuts(&self) -> &[T] {
        &self.cuts
    }

    /// Number of buckets, `N`.
    pub fn buckets(&self) -> usize {
        self.cuts.len() + 1
    }

    /// 0-based index of the bucket containing `x`.
    pub fn bucketize(&self, x: T) -> Result<usize, EncodingError> {
        if !x.is_finite() {
            return Err(EncodingError::NonFiniteInput);
        }
        Ok(self.cuts.partition_point(|&c| c <= x))
    }

    /// Indicator vector of length `N` with a single 1 at `bucketize(x)`.
    pub fn one_hot(&self, x: T) -> Result<Vec<u8>, EncodingError> {
        let k = self.bucketize(x)?;
        let mut v = vec![0; self.buckets()];
        v[k] = 1;
        Ok(v)
    }

    /// Position of the single 1, if the vector is a valid indicator.
    pub fn decode(&self, bits: &[u8]) -> Option<usize> {
        if bits.len() != self.buckets() || bits.iter().filter(|&&b| b == 1).count() != 1 {
            return None;
        }
        bits.iter().position(|&b| b == 1)
    }

    /// Name of the k-th generated binary feature.
    pub fn column_name(&self, k: usize) -> String {
        format!("{}#{k}", self.feature)
    }
}

impl<T: Float + Display> BucketSpec<T> {
    /// Human-readable interval of bucket `k`.
    pub fn interval(&self, k: usize) -> String {
        let lo = if k == 0 { "-inf".to_string() } else { self.cuts[k - 1].to_string() };
        let hi = self.cuts.get(k).map_or("inf".to_string(), |c| c.to_string());
        format!("[{lo}, {hi})")
    }
}

/// A feature before encoding.
#[derive(Debug, Clone, PartialEq)]
pub enum RawFeature {
    Categorical(FeatureDecl),
    Numeric(String),
}

impl RawFeature {
    pub fn name(&self) -> &str {
        match self {
            RawFeature::Categorical(d) => &d.name,
            RawFeature::Numeric(n) => n,
        }
    }
}

/// A schema file: features with explicit domains and numeric features with cut points.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaFile<T> {
    pub features: Vec<RawFeature>,
    pub buckets: Vec<BucketSpec<T>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FileRoot {
    #[serde(default, rename = "feature")]
    features: Vec<FileFeature>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FileFeature {
    name: String,
    domain: Option<Vec<toml::Value>>,
    buckets: Option<Vec<toml::Value>>,
    ordered: Option<bool>,
}

fn literal(v: &toml::Value) -> Option<String> {
    match v {
        toml::Value::String(s) => Some(s.clone()),
        toml::Value::Integer(i) => Some(i.to_string()),
        toml::Value::Float(f) => Some(f.to_string()),
        toml::Value::Boolean(b) => Some(b.to_string()),
        _ => None,
    }
}

impl<T: Float + FromStr> SchemaFile<T> {
    /// Parses the TOML schema format:
    ///
    /// ```toml
    /// [[feature]]
    /// name = "gender"
    /// domain = ["F", "M"]
    ///
    /// [[feature]]
    /// name = "ERE"
    /// buckets = [64, 71, 76, 81]
    /// ```
    pub fn parse(text: &str) -> Result<Self, EncodingError> {
        let root: FileRoot = toml::from_str(text).map_err(|e| EncodingError::SchemaFile(e.to_string()))?;
        let mut features = Vec::new();
        let mut buckets = Vec::new();
        for f in root.features {
            let bad = |msg: &str| EncodingError::SchemaFile(format!("feature `{}`: {msg}", f.name));
            match (f.domain, f.buckets) {
                (Some(domain), None) => {
                    let values = domain
                        .iter()
                        .map(|v| literal(v).map(Value::from))
                        .collect::<Option<Vec<_>>>()
                        .ok_or_else(|| bad("domain values must be scalars"))?;
                    let decl = match f.ordered {
                        Some(ordered) => FeatureDecl::new(f.name, values, ordered),
                        None => FeatureDecl::inferred(f.name, values),
                    };
                    features.push(RawFeature::Categorical(decl));
                }
                (None, Some(cuts)) => {
                    let cuts = cuts
                        .iter()
                        .map(|v| literal(v).and_then(|s| s.parse::<T>().ok()))
                        .collect::<Option<Vec<_>>>()
                        .ok_or_else(|| bad("cut points must be numbers"))?;
                    buckets.push(BucketSpec::new(f.name.clone(), cuts)?);
                    features.push(RawFeature::Numeric(f.name));
                }
                _ => return Err(bad("needs exactly one of `domain` or `buckets`")),
            }
        }
        Ok(SchemaFile { features, buckets })
    }

    /// The categorical schema; fails if any feature is still numeric.
    pub fn categorical(&self) -> Result<FeatureSchema, EncodingError> {
        let decls = self
            .features
            .iter()
            .map(|f| match f {
                RawFeature::Categorical(d) => Ok(d.clone()),
                RawFeature::Numeric(n) => Err(EncodingError::NumericFeature(n.clone())),
            })
            .collect::<Result<Vec<_>, _>>()?;
        FeatureSchema::new(decls).map_err(|source| EncodingError::Model { line: 0, source })
    }
}

/// Renders a categorical schema back to the TOML schema format.
pub fn schema_to_toml(schema: &FeatureSchema) -> String {
    let mut out = String::new();
    for (k, f) in schema.features().iter().enumerate() {
        if k > 0 {
            out.push('\n');
        }
        let domain = f
            .domain
            .iter()
            .map(|v| toml::Value::String(v.to_string()).to_string())
            .collect::<Vec<_>>()
            .join(", ");
        out.push_str("[[feature]]\n");
        out.push_str(&format!("name = {}\n", toml::Value::String(f.name.clone())));
        out.push_str(&format!("domain = [{domain}]\n"));
        out.push_str(&format!("ordered = {}\n", f.ordered));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
enum Column<T> {
    Categorical,
    Bucketized(BucketSpec<T>),
}

/// Translates raw rows into rows of the encoded schema.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T> {
    names: Vec<String>,
    columns: Vec<Column<T>>,
}

impl<T: Float + FromStr> Encoder<T> {
    pub fn input_arity(&self) -> usize {
        self.columns.len()
    }

    /// Encodes one raw row (`line` is used only for error messages).
    pub fn encode_row(&self, raw: &[String], line: usize) -> Result<Vec<Value>, EncodingError> {
        if raw.len() != self.columns.len() {
            return Err(EncodingError::RaggedRows {
                row: line,
                expected: self.columns.len(),
                found: raw.len(),
            });
        }
        let mut out = Vec::new();
        for ((col, cell), name) in self.columns.iter().zip(raw).zip(&self.names) {
            match col {
                Column::Categorical => out.push(Value::new(cell)),
                Column::Bucketized(spec) => {
                    let x: T = cell.trim().parse().map_err(|_| EncodingError::BadNumber {
                        line,
                        feature: name.clone(),
                        value: cell.clone(),
                    })?;
                    out.extend(spec.one_hot(x)?.into_iter().map(|b| Value::from(i64::from(b))));
                }
            }
        }
        Ok(out)
    }
}

impl<T: Float + Display> Encoder<T> {
    /// Maps an encoded row back to raw values; buckets come back as intervals.
    /// `None` if some one-hot group is not a valid indicator.
    pub fn decode_row(&self, encoded: &[Value]) -> Option<Vec<String>> {
        let mut out = Vec::new();
        let mut pos = 0;
        for col in &self.columns {
            match col {
                Column::Categorical => {
                    out.push(encoded.get(pos)?.to_string());
                    pos += 1;
                }
                Column::Bucketized(spec) => {
                    let bits = encoded
                        .get(pos..pos + spec.buckets())?
                        .iter()
                        .map(|v| match v.as_str() {
                            "0" => Some(0u8),
                            "1" => Some(1u8),
                            _ => None,
                        })
                        .collect::<Option<Vec<_>>>()?;
                    out.push(spec.interval(spec.decode(&bits)?));
                    pos += spec.buckets();
                }
            }
        }
        Some(out)
    }
}

/// Replaces each numeric feature by `N` binary features `<f>#0 .. <f>#(N-1)`
/// and emits one one-hot group per replaced feature.
pub fn encode_schema<T: Float + FromStr>(
    features: &[RawFeature],
    specs: &[BucketSpec<T>],
) -> Result<(FeatureSchema, ConstraintSet, Encoder<T>), EncodingError> {
    let by_name: HashMap<&str, &BucketSpec<T>> = specs.iter().map(|s| (s.feature(), s)).collect();
    let mut decls = Vec::new();
    let mut columns = Vec::new();
    let mut groups = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    let mut claim = |name: &str| {
        if seen.insert(name.to_string()) {
            Ok(())
        } else {
            Err(EncodingError::NameCollision(name.to_string()))
        }
    };
    for f in features {
        match f {
            RawFeature::Categorical(d) => {
                claim(&d.name)?;
                decls.push(d.clone());
                columns.push(Column::Categorical);
            }
            RawFeature::Numeric(name) => {
                let spec = by_name
                    .get(name.as_str())
                    .ok_or_else(|| EncodingError::MissingBucketSpec(name.clone()))?;
                let mut group = Vec::new();
                for k in 0..spec.buckets() {
                    let col = spec.column_name(k);
                    claim(&col)?;
                    group.push(decls.len());
                    decls.push(FeatureDecl::new(col, vec!["0".into(), "1".into()], false));
                }
                groups.push(group);
                columns.push(Column::Bucketized((*spec).clone()));
            }
        }
    }
    let schema = FeatureSchema::new(decls).map_err(|source| EncodingError::Model { line: 0, source })?;
    let mut cs = ConstraintSet::new(&schema);
    for g in groups {
        cs.add_group(&schema, g).expect("generated groups are disjoint and binary");
    }
    let names = features.iter().map(|f| f.name().to_string()).collect();
    Ok((schema, cs, Encoder { names, columns }))
}

/// Builds a schema whose domains are the values observed in `rows`, in
/// first-occurrence order. A feature is ordered iff all its values are integers.
pub fn extract_domains(rows: &[Vec<String>], names: &[String]) -> Result<FeatureSchema, EncodingError> {
    if rows.is_empty() {
        return Err(EncodingError::EmptyData);
    }
    let mut domains: Vec<Vec<Value>> = vec![Vec::new(); names.len()];
    for (r, row) in rows.iter().enumerate() {
        if row.len() != names.len() {
            return Err(EncodingError::RaggedRows {
                row: r,
                expected: names.len(),
                found: row.len(),
            });
        }
        for (dom, cell) in domains.iter_mut().zip(row) {
            let v = Value::new(cell);
            if !dom.contains(&v) {
                dom.push(v);
            }
        }
    }
    let decls = names
        .iter()
        .zip(domains)
        .map(|(n, d)| FeatureDecl::inferred(n.clone(), d))
        .collect();
    FeatureSchema::new(decls).map_err(|source| EncodingError::Model { line: 0, source })
}

/// Entities paired with known labels.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabeledSample {
    rows: Vec<(Entity, Label)>,
}

impl LabeledSample {
    /// Strict construction: the same value tuple may not carry both labels.
    pub fn new(rows: Vec<(Entity, Label)>) -> Result<Self, EncodingError> {
        let mut seen: HashMap<&[Value], Label> = HashMap::new();
        for (k, (e, l)) in rows.iter().enumerate() {
            if let Some(&prev) = seen.get(e.values()) {
                if prev != *l {
                    return Err(EncodingError::ConflictingSampleLabels {
                        line: k + 2,
                        tuple: e.values().iter().map(Value::as_str).collect::<Vec<_>>().join(","),
                    });
                }
            }
            seen.insert(e.values(), *l);
        }
        Ok(LabeledSample { rows })
    }

    /// Reads a labeled CSV (`id` column optional, `label` column required).
    pub fn from_csv(text: &str, schema: &FeatureSchema) -> Result<Self, EncodingError> {
        let rows = load_entities(text, schema)?;
        let mut out = Vec::with_capacity(rows.len());
        for (e, label, line) in rows {
            let label = label.ok_or(TabularError::MissingLabelColumn)?;
            out.push((e, label, line));
        }
        let mut seen: HashMap<Vec<Value>, Label> = HashMap::new();
        for (e, l, line) in &out {
            if let Some(prev) = seen.insert(e.values().to_vec(), *l) {
                if prev != *l {
                    return Err(EncodingError::ConflictingSampleLabels {
                        line: *line,
                        tuple: e.values().iter().map(Value::as_str).collect::<Vec<_>>().join(","),
                    });
                }
            }
        }
        Ok(LabeledSample {
            rows: out.into_iter().map(|(e, l, _)| (e, l)).collect(),
        })
    }

    pub fn rows(&self) -> &[(Entity, Label)] {
        &self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    /// Label recorded for a value tuple, if any.
    pub fn label_of(&self, values: &[Value]) -> Option<Label> {
        self.rows.iter().find(|(e, _)| e.values() == values).map(|&(_, l)| l)
    }
}

/// Reads entity rows with optional ids and labels. Rows without an id column
/// get `e` (single row) or `e1, e2, ...`.
pub fn load_entities(text: &str, schema: &FeatureSchema) -> Result<Vec<(Entity, Option<Label>, usize)>, EncodingError> {
    let table = Table::parse(text)?;
    table.check_header(schema)?;
    let single = table.rows.len() == 1;
    table
        .rows
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let id = match &row.id {
                Some(id) => id.clone(),
                None if single => "e".to_string(),
                None => format!("e{}", k + 1),
            };
            let entity = Entity::new(schema, id, row.values.iter().map(Value::new).collect())
                .map_err(|source| EncodingError::Model { line: row.line, source })?;
            Ok((entity, row.parsed_label()?, row.line))
        })
        .collect()
}

/// Picks the entity to explain: the only row, or the row with the given id.
pub fn select_entity(text: &str, schema: &FeatureSchema, id: Option<&str>) -> Result<Entity, EncodingError> {
    let rows = load_entities(text, schema)?;
    match id {
        Some(id) => rows
            .into_iter()
            .find(|(e, _, _)| e.id() == id)
            .map(|(e, _, _)| e)
            .ok_or_else(|| EncodingError::UnknownEntity(id.to_string())),
        None if rows.len() == 1 => Ok(rows.into_iter().next().expect("one row").0),
        None => Err(EncodingError::AmbiguousEntity(rows.len())),
    }
}

/// Encodes a raw CSV (header = raw feature names, optional id / label) into
/// the encoded layout, keeping the id and label columns.
pub fn encode_csv<T: Float + FromStr>(
    text: &str,
    features: &[RawFeature],
    encoded: &FeatureSchema,
    encoder: &Encoder<T>,
) -> Result<String, EncodingError> {
    let table = Table::parse(text)?;
    let expected: Vec<&str> = features.iter().map(RawFeature::name).collect();
    if table.features.iter().map(String::as_str).ne(expected.iter().copied()) {
        return Err(TabularError::HeaderMismatch {
            expected: expected.join(","),
            found: table.features.join(","),
        }
        .into());
    }
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = Vec::new();
    if table.has_id {
        header.push("id".into());
    }
    header.extend(encoded.names().map(str::to_string));
    if table.has_label {
        header.push("label".into());
    }
    let csv_err = |e: csv::Error| EncodingError::Tabular(TabularError::Csv(e.to_string()));
    writer.write_record(&header).map_err(csv_err)?;
    for row in &table.rows {
        let mut record: Vec<String> = Vec::new();
        if let Some(id) = &row.id {
            record.push(id.clone());
        }
        record.extend(encoder.encode_row(&row.values, row.line)?.iter().map(Value::to_string));
        if let Some(l) = &row.label {
            record.push(l.clone());
        }
        writer.write_record(&record).map_err(csv_err)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| EncodingError::Tabular(TabularError::Csv(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
