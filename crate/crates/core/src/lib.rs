//! Counterfactual explanations and responsibility scores for classifiers over
//! finite categorical feature spaces, with optional domain constraints.
//!
//! The core is generic where it is numeric: bucketization works over any
//! [`num_traits::Float`], and responsibility scores are exact rationals.

pub mod asp;
pub mod classifier;
pub mod constraints;
pub mod encoding;
pub mod engine;
pub mod model;
pub mod report;
pub mod syntax;
pub mod tabular;

pub use classifier::{
    load_table, parse_rule_program, ClassifierSpec, ClassifyError, ExternalClassifier, ExternalEndpoint, LabelFunction,
    DEFAULT_TIMEOUT,
    Rule, RuleProgram, TableClassifier,
};
pub use constraints::{parse_constraints, Admissibility, ConstraintSet, Inadmissible, PropagateError};
pub use encoding::{LabeledSample, SchemaFile};
pub use engine::{
    all_causal_explanations, explain_from_sample, find_c_explanations, find_s_explanations, full_report, report,
    x_resp, Diagnostics, EngineError, ExplanationReport, Instance, Responsibility, SearchSpace,
};
pub use model::{
    apply_intervention, compare, explanation_of, intervention_between, Change, Entity, Explanation, FeatureDecl,
    FeatureSchema, Intervention, Label, MinimalityOrder, ModelError, Precedence, Provenance, Value,
};
pub use syntax::{ParseError, ParseErrorKind};

/// Exact responsibility score.
pub type Resp = num_rational::Ratio<u64>;

pub type BucketSpec = encoding::BucketSpec<f64>;
pub type BucketSpec32 = encoding::BucketSpec<f32>;
pub type SchemaFile64 = encoding::SchemaFile<f64>;
pub type Encoder = encoding::Encoder<f64>;
