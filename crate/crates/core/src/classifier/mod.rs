//! Label functions behind one `classify` entry point.

mod external;
mod rules;
mod table;

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

pub use external::{ExternalClassifier, ExternalEndpoint, DEFAULT_TIMEOUT, PROTOCOL};
pub use rules::{parse_rule_program, Rule, RuleProgram};
pub use table::{load_table, TableClassifier, TableError};

use crate::model::{Entity, Label, ModelError, Value};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClassifyError {
    #[error("no table row for ({0})")]
    MissingTableRow(String),
    #[error("external classifier did not answer within {0:?}")]
    ExternalTimeout(Duration),
    #[error("external classifier protocol error: {0}")]
    ExternalProtocolError(String),
    #[error("external classifier returned bad label `{0}`")]
    ExternalBadLabel(String),
    #[error("external classifier reported: {0}")]
    ExternalRemoteError(String),
    #[error("could not run external classifier: {0}")]
    ExternalIo(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// In-process label function, for models that live in the caller's code.
pub trait LabelFunction: Send + Sync {
    fn label(&self, values: &[Value]) -> Result<Label, ClassifyError>;
}

impl<F> LabelFunction for F
where
    F: Fn(&[Value]) -> Result<Label, ClassifyError> + Send + Sync,
{
    fn label(&self, values: &[Value]) -> Result<Label, ClassifyError> {
        self(values)
    }
}

pub enum ClassifierSpec {
    Table(TableClassifier),
    Rules(RuleProgram),
    External(ExternalClassifier),
    Function(Arc<dyn LabelFunction>),
}

impl ClassifierSpec {
    pub fn function(f: impl LabelFunction + 'static) -> Self {
        ClassifierSpec::Function(Arc::new(f))
    }

    pub fn classify(&self, e: &Entity) -> Result<Label, ClassifyError> {
        match self {
            ClassifierSpec::External(ext) => ext.classify_entity(e),
            _ => self.classify_values(e.values()),
        }
    }

    pub fn classify_values(&self, values: &[Value]) -> Result<Label, ClassifyError> {
        match self {
            ClassifierSpec::Table(t) => t.classify(values),
            ClassifierSpec::Rules(r) => Ok(r.classify(values)),
            ClassifierSpec::External(ext) => ext.classify(None, values),
            ClassifierSpec::Function(f) => f.label(values),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ClassifierSpec::Table(_) => "table",
            ClassifierSpec::Rules(_) => "rules",
            ClassifierSpec::External(_) => "external",
            ClassifierSpec::Function(_) => "function",
        }
    }
}

impl fmt::Debug for ClassifierSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassifierSpec::Table(t) => f.debug_tuple("Table").field(&t.len()).finish(),
            ClassifierSpec::Rules(r) => f.debug_tuple("Rules").field(r).finish(),
            ClassifierSpec::External(x) => f.debug_tuple("External").field(x.endpoint()).finish(),
            ClassifierSpec::Function(_) => f.write_str("Function(..)"),
        }
    }
}

impl From<TableClassifier> for ClassifierSpec {
    fn from(t: TableClassifier) -> Self {
        ClassifierSpec::Table(t)
    }
}

impl From<RuleProgram> for ClassifierSpec {
    fn from(r: RuleProgram) -> Self {
        ClassifierSpec::Rules(r)
    }
}

impl From<ExternalClassifier> for ClassifierSpec {
    fn from(x: ExternalClassifier) -> Self {
        ClassifierSpec::External(x)
    }
}

pub(crate) fn join_values(values: &[Value]) -> String {
    values.iter().map(Value::as_str).collect::<Vec<_>>().join(",")
}
