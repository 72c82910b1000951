//! CSV layout shared by tables, samples and entity files: a header of
//! feature names, an optional leading `id` column and an optional trailing
//! `label` column.

use thiserror::Error;

use crate::model::{FeatureSchema, Label};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TabularError {
    #[error("csv: {0}")]
    Csv(String),
    #[error("missing header row")]
    MissingHeader,
    #[error("header mismatch: expected [{expected}], found [{found}]")]
    HeaderMismatch { expected: String, found: String },
    #[error("line {line}: expected {expected} fields, found {found}")]
    RaggedRow { line: usize, expected: usize, found: usize },
    #[error("line {line}: bad label `{value}`")]
    BadLabel { line: usize, value: String },
    #[error("line {line}: {message}")]
    BadRow { line: usize, message: String },
    #[error("a label column is required")]
    MissingLabelColumn,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Row {
    pub line: usize,
    pub id: Option<String>,
    pub values: Vec<String>,
    pub label: Option<String>,
}

impl Row {
    pub fn parsed_label(&self) -> Result<Option<Label>, TabularError> {
        match &self.label {
            None => Ok(None),
            Some(raw) => Label::parse(raw).map(Some).ok_or_else(|| TabularError::BadLabel {
                line: self.line,
                value: raw.clone(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub features: Vec<String>,
    pub has_id: bool,
    pub has_label: bool,
    pub rows: Vec<Row>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Table, TabularError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut records = reader.records();
        let header = match records.next() {
            Some(r) => r.map_err(|e| TabularError::Csv(e.to_string()))?,
            None => return Err(TabularError::MissingHeader),
        };
        let mut columns: Vec<String> = header.iter().map(str::to_string).collect();
        let has_id = columns.first().is_some_and(|c| c == "id");
        let has_label = columns.len() > usize::from(has_id) && columns.last().is_some_and(|c| c == "label");
        let width = columns.len();
        if has_label {
            columns.pop();
        }
        if has_id {
            columns.remove(0);
        }
        let mut rows = Vec::new();
        for record in records {
            let record = record.map_err(|e| TabularError::Csv(e.to_string()))?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            if record.len() == 1 && record.get(0) == Some("") {
                continue;
            }
            if record.len() != width {
                return Err(TabularError::RaggedRow {
                    line,
                    expected: width,
                    found: record.len(),
                });
            }
            let mut fields: Vec<String> = record.iter().map(str::to_string).collect();
            let label = if has_label { fields.pop() } else { None };
            let id = if has_id { Some(fields.remove(0)) } else { None };
            rows.push(Row {
                line,
                id,
                values: fields,
                label,
            });
        }
        Ok(Table {
            features: columns,
            has_id,
            has_label,
            rows,
        })
    }

    /// Requires the feature columns to be exactly the schema's features, in order.
    pub fn check_header(&self, schema: &FeatureSchema) -> Result<(), TabularError> {
        if self.features.iter().map(String::as_str).eq(schema.names()) {
            Ok(())
        } else {
            Err(TabularError::HeaderMismatch {
                expected: schema.names().collect::<Vec<_>>().join(","),
                found: self.features.join(","),
            })
        }
    }
}
