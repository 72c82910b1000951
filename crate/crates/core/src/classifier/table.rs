use std::collections::HashMap;

use thiserror::Error;

use super::{join_values, ClassifyError};
use crate::model::{FeatureSchema, Label, ModelError, Value};
use crate::tabular::{Table, TabularError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TableError {
    #[error(transparent)]
    Tabular(#[from] TabularError),
    #[error("line {line}: ({tuple}) already has label {previous}")]
    ConflictingRow { line: usize, tuple: String, previous: Label },
    #[error("line {line}: {source}")]
    BadValue { line: usize, source: ModelError },
}

/// Classifier given extensionally as value tuple -> label.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TableClassifier {
    rows: HashMap<Vec<Value>, Label>,
}

impl TableClassifier {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a row. Re-adding the same tuple with the same label is a no-op.
    pub fn insert(&mut self, tuple: Vec<Value>, label: Label) -> Result<(), Label> {
        match self.rows.get(&tuple) {
            Some(&prev) if prev != label => Err(prev),
            _ => {
                self.rows.insert(tuple, label);
                Ok(())
            }
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, tuple: &[Value]) -> Option<Label> {
        self.rows.get(tuple).copied()
    }

    /// Rows sorted by their value tuples' domain positions.
    pub fn sorted_rows(&self, schema: &FeatureSchema) -> Vec<(&[Value], Label)> {
        let mut rows: Vec<(Vec<usize>, &[Value], Label)> = self
            .rows
            .iter()
            .map(|(k, &l)| {
                let key = schema
                    .features()
                    .iter()
                    .zip(k)
                    .map(|(f, v)| f.position(v).unwrap_or(usize::MAX))
                    .collect();
                (key, k.as_slice(), l)
            })
            .collect();
        rows.sort_by(|a, b| a.0.cmp(&b.0));
        rows.into_iter().map(|(_, k, l)| (k, l)).collect()
    }

    pub fn classify(&self, values: &[Value]) -> Result<Label, ClassifyError> {
        self.get(values)
            .ok_or_else(|| ClassifyError::MissingTableRow(join_values(values)))
    }
}

/// Reads `feature..., label` CSV (optionally with a leading `id` column).
pub fn load_table(csv_text: &str, schema: &FeatureSchema) -> Result<TableClassifier, TableError> {
    let table = Table::parse(csv_text)?;
    table.check_header(schema)?;
    if !table.has_label {
        return Err(TabularError::MissingLabelColumn.into());
    }
    let mut out = TableClassifier::new();
    for row in &table.rows {
        let label = row.parsed_label()?.expect("label column present");
        let tuple: Vec<Value> = row.values.iter().map(Value::new).collect();
        schema
            .check_values(&tuple)
            .map_err(|source| TableError::BadValue { line: row.line, source })?;
        out.insert(tuple.clone(), label)
            .map_err(|previous| TableError::ConflictingRow {
                line: row.line,
                tuple: join_values(&tuple),
                previous,
            })?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TABLE1: &str = "F1,F2,F3,label\n0,1,1,1\n1,1,1,1\n1,1,0,1\n1,0,1,0\n1,0,0,1\n0,1,0,1\n0,0,1,0\n0,0,0,0\n";

    fn vals(v: &[&str]) -> Vec<Value> {
        v.iter().map(|s| Value::new(s)).collect()
    }

    #[test]
    fn loads_table1() {
        let s = FeatureSchema::binary(3);
        let t = load_table(TABLE1, &s).unwrap();
        assert_eq!(t.len(), 8);
        assert_eq!(t.classify(&vals(&["0", "1", "1"])).unwrap(), Label::One);
        assert_eq!(t.classify(&vals(&["1", "0", "1"])).unwrap(), Label::Zero);
    }

    #[test]
    fn empty_body_gives_empty_table() {
        let s = FeatureSchema::binary(3);
        let t = load_table("F1,F2,F3,label\n", &s).unwrap();
        assert!(t.is_empty());
        assert!(matches!(
            t.classify(&vals(&["0", "1", "1"])),
            Err(ClassifyError::MissingTableRow(_))
        ));
    }

    #[test]
    fn conflicting_rows_are_rejected() {
        let s = FeatureSchema::binary(3);
        let err = load_table("F1,F2,F3,label\n0,1,1,1\n0,1,1,0\n", &s).unwrap_err();
        assert!(matches!(err, TableError::ConflictingRow { line: 3, .. }));
        // identical duplicates are fine
        assert_eq!(load_table("F1,F2,F3,label\n0,1,1,1\n0,1,1,1\n", &s).unwrap().len(), 1);
    }

    #[test]
    fn header_and_label_errors() {
        let s = FeatureSchema::binary(3);
        assert!(matches!(
            load_table("F1,F3,F2,label\n", &s),
            Err(TableError::Tabular(TabularError::HeaderMismatch { .. }))
        ));
        assert!(matches!(
            load_table("F1,F2,F3,label\n0,1,1,2\n", &s),
            Err(TableError::Tabular(TabularError::BadLabel { .. }))
        ));
        assert!(matches!(
            load_table("F1,F2,F3\n0,1,1\n", &s),
            Err(TableError::Tabular(TabularError::MissingLabelColumn))
        ));
        assert!(matches!(
            load_table("F1,F2,F3,label\n0,5,1,1\n", &s),
            Err(TableError::BadValue { .. })
        ));
    }
}
