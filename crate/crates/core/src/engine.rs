//! The search for counterfactual interventions.
//!
//! Explicit intervention sets are visited level by level: all feature subsets
//! of size 1, then size 2, and so on, each subset in lexicographic index
//! order and each assignment in domain order. Every candidate is extended by
//! constraint propagation, filtered for admissibility and then classified. A
//! candidate whose final entity gets label 0 is a counterfactual.
//!
//! Explanations are keyed by their feature set. When several counterfactuals
//! give the same feature set, the witness is the one whose final entity is
//! smallest in domain-position order, ties broken by fewer explicit changes
//! and then by the explicit feature indices.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{ClassifierSpec, ClassifyError};
use crate::constraints::{Admissibility, ConstraintSet};
use crate::encoding::LabeledSample;
use crate::model::{intervention_between, Entity, Explanation, FeatureSchema, Intervention, Label, ModelError, Value};
use crate::Resp;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("entity `{0}` is labeled 0; only label 1 is explained")]
    NothingToExplain(String),
    #[error(transparent)]
    Classifier(#[from] ClassifyError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("the labeled sample is empty")]
    EmptySample,
    #[error("max cardinality must be between 1 and {arity}, got {got}")]
    InvalidMaxCardinality { got: usize, arity: usize },
    #[error("operation needs sample-restricted mode")]
    NotSampleMode,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SearchSpace {
    /// The whole product of the feature domains.
    Full,
    /// Only the label-0 entities of a labeled sample.
    Sample(LabeledSample),
}

/// Everything one explanation run needs.
#[derive(Debug)]
pub struct Instance {
    schema: FeatureSchema,
    entity: Entity,
    classifier: ClassifierSpec,
    constraints: ConstraintSet,
    space: SearchSpace,
    max_cardinality: usize,
    count_propagated: bool,
    budget: Option<usize>,
}

impl Instance {
    pub fn new(schema: FeatureSchema, entity: Entity, classifier: ClassifierSpec) -> Result<Self, EngineError> {
        schema.check_values(entity.values())?;
        Ok(Instance {
            constraints: ConstraintSet::new(&schema),
            max_cardinality: schema.arity(),
            schema,
            entity,
            classifier,
            space: SearchSpace::Full,
            count_propagated: true,
            budget: None,
        })
    }

    pub fn with_constraints(mut self, constraints: ConstraintSet) -> Self {
        self.constraints = constraints;
        self
    }

    pub fn with_sample(mut self, sample: LabeledSample) -> Self {
        self.space = SearchSpace::Sample(sample);
        self
    }

    pub fn with_max_cardinality(mut self, k: usize) -> Result<Self, EngineError> {
        if k == 0 || k > self.schema.arity() {
            return Err(EngineError::InvalidMaxCardinality {
                got: k,
                arity: self.schema.arity(),
            });
        }
        self.max_cardinality = k;
        Ok(self)
    }

    /// Whether propagated changes count toward explanation size (default: yes).
    pub fn with_count_propagated(mut self, yes: bool) -> Self {
        self.count_propagated = yes;
        self
    }

    /// Hard limit on classifier calls.
    pub fn with_budget(mut self, calls: usize) -> Self {
        self.budget = Some(calls);
        self
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn entity(&self) -> &Entity {
        &self.entity
    }

    pub fn classifier(&self) -> &ClassifierSpec {
        &self.classifier
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    pub fn max_cardinality(&self) -> usize {
        self.max_cardinality
    }

    pub fn count_propagated(&self) -> bool {
        self.count_propagated
    }

    pub fn budget(&self) -> Option<usize> {
        self.budget
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub mode: String,
    pub candidates_tested: usize,
    pub classifier_calls: usize,
    pub pruned_by_constraints: usize,
    /// Feature subsets skipped because they strictly contain a known flip set.
    pub pruned_by_minimality: usize,
    pub levels_searched: usize,
    pub max_cardinality: usize,
    pub count_propagated: bool,
    /// `max_cardinality` is below the number of features.
    pub truncated: bool,
    pub budget_exhausted: bool,
    /// No counterfactual was found in the searched space.
    pub exhausted_without_counterfactual: bool,
}

/// Score of one feature value of the explained entity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Responsibility {
    pub feature: usize,
    pub value: Value,
    pub score: Resp,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExplanationReport {
    pub entity: Entity,
    pub c_explanations: Vec<Explanation>,
    pub s_explanations: Vec<Explanation>,
    /// Every causal explanation, when requested.
    pub causal_explanations: Option<Vec<Explanation>>,
    pub resp: Vec<Responsibility>,
    pub diagnostics: Diagnostics,
}

impl ExplanationReport {
    /// Minimum explanation size `k*`, if any counterfactual exists.
    pub fn min_cardinality(&self) -> Option<usize> {
        self.c_explanations.first().map(Explanation::cardinality)
    }

    /// Equality of everything except diagnostics.
    pub fn same_results(&self, other: &ExplanationReport) -> bool {
        self.entity == other.entity
            && self.c_explanations == other.c_explanations
            && self.s_explanations == other.s_explanations
            && self.causal_explanations == other.causal_explanations
            && self.resp == other.resp
    }

    pub fn resp_of(&self, feature: usize) -> Option<Resp> {
        self.resp.iter().find(|r| r.feature == feature).map(|r| r.score)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Goal {
    /// Stop once the minimum explanation size is settled.
    Minimum,
    /// Skip subsets that strictly contain a known flip set.
    Minimal,
    /// Visit everything up to the cardinality bound.
    All,
}

#[derive(Debug, Clone)]
struct Record {
    tuple: Vec<usize>,
    explicit: Vec<usize>,
    witness: Intervention,
}

impl Record {
    fn rank(&self) -> (&[usize], usize, &[usize]) {
        (&self.tuple, self.explicit.len(), &self.explicit)
    }
}

struct Search<'a> {
    inst: &'a Instance,
    origin: Vec<usize>,
    labels: HashMap<Vec<usize>, Label>,
    records: BTreeMap<Vec<usize>, Record>,
    diag: Diagnostics,
}

/// Budget ran out; results gathered so far stay valid.
struct Stop;

impl<'a> Search<'a> {
    fn new(inst: &'a Instance) -> Result<Self, EngineError> {
        let origin = inst.schema.positions(&inst.entity)?;
        let mode = match inst.space {
            SearchSpace::Full => "full",
            SearchSpace::Sample(_) => "sample",
        };
        Ok(Search {
            inst,
            origin,
            labels: HashMap::new(),
            records: BTreeMap::new(),
            diag: Diagnostics {
                mode: mode.to_string(),
                max_cardinality: inst.max_cardinality,
                count_propagated: inst.count_propagated,
                truncated: inst.max_cardinality < inst.schema.arity(),
                ..Diagnostics::default()
            },
        })
    }

    fn classify(&mut self, tuple: &[usize]) -> Result<Result<Label, Stop>, EngineError> {
        if let Some(&l) = self.labels.get(tuple) {
            return Ok(Ok(l));
        }
        if self.inst.budget.is_some_and(|b| self.diag.classifier_calls >= b) {
            self.diag.budget_exhausted = true;
            return Ok(Err(Stop));
        }
        self.diag.classifier_calls += 1;
        let label = if tuple == self.origin.as_slice() {
            self.inst.classifier.classify(&self.inst.entity)?
        } else {
            let entity = Entity::from_positions(&self.inst.schema, "", tuple);
            self.inst.classifier.classify_values(entity.values())?
        };
        self.labels.insert(tuple.to_vec(), label);
        Ok(Ok(label))
    }

    fn check_root(&mut self) -> Result<Result<(), Stop>, EngineError> {
        let sampled = match &self.inst.space {
            SearchSpace::Sample(s) => s.label_of(self.inst.entity.values()),
            SearchSpace::Full => None,
        };
        let label = match sampled {
            Some(l) => l,
            None => match self.classify(&self.origin.clone())? {
                Ok(l) => l,
                Err(Stop) => return Ok(Err(Stop)),
            },
        };
        if label == Label::Zero {
            return Err(EngineError::NothingToExplain(self.inst.entity.id().to_string()));
        }
        Ok(Ok(()))
    }

    fn offer(&mut self, key: Vec<usize>, record: Record) {
        match self.records.get(&key) {
            Some(old) if old.rank() <= record.rank() => {}
            _ => {
                self.records.insert(key, record);
            }
        }
    }

    fn dominated(&self, subset: &[usize]) -> bool {
        let s: BTreeSet<usize> = subset.iter().copied().collect();
        self.records
            .keys()
            .any(|k| k.len() < s.len() && k.iter().all(|f| s.contains(f)))
    }

    fn run_full(&mut self, goal: Goal) -> Result<(), EngineError> {
        if let Err(Stop) = self.check_root()? {
            return Ok(());
        }
        let schema = &self.inst.schema;
        let changeable: Vec<usize> = (0..schema.arity())
            .filter(|&i| schema.features()[i].domain.len() > 1)
            .collect();
        let top = self.inst.max_cardinality.min(changeable.len());
        for k in 1..=top {
            self.diag.levels_searched = k;
            for subset in KSubsets::new(&changeable, k) {
                if goal != Goal::All && self.dominated(&subset) {
                    self.diag.pruned_by_minimality += 1;
                    continue;
                }
                if let Err(Stop) = self.visit_subset(&subset)? {
                    return Ok(());
                }
            }
            if goal == Goal::Minimum {
                if let Some(best) = self.records.keys().map(Vec::len).min() {
                    // explicit sets of size k+1 end up strictly larger than `best`
                    if k >= best {
                        break;
                    }
                }
            }
        }
        Ok(())
    }

    fn visit_subset(&mut self, subset: &[usize]) -> Result<Result<(), Stop>, EngineError> {
        let schema = &self.inst.schema;
        // per feature: domain positions other than the original one
        let choices: Vec<Vec<usize>> = subset
            .iter()
            .map(|&f| (0..schema.features()[f].domain.len()).filter(|&p| p != self.origin[f]).collect())
            .collect();
        let mut odometer = vec![0usize; subset.len()];
        loop {
            let iota = Intervention::new(
                subset
                    .iter()
                    .zip(&odometer)
                    .zip(&choices)
                    .map(|((&f, &o), ch)| (f, schema.features()[f].domain[ch[o]].clone())),
            )
            .expect("distinct features");
            self.diag.candidates_tested += 1;
            match self
                .inst
                .constraints
                .is_admissible(schema, &self.inst.entity, &iota)?
            {
                Admissibility::Inadmissible(_) => self.diag.pruned_by_constraints += 1,
                Admissibility::Admissible(fin) => {
                    let mut tuple = self.origin.clone();
                    for (f, c) in fin.changes() {
                        tuple[f] = schema.features()[f].position(&c.value).expect("in domain");
                    }
                    match self.classify(&tuple)? {
                        Err(Stop) => return Ok(Err(Stop)),
                        Ok(Label::One) => {}
                        Ok(Label::Zero) => {
                            let key: Vec<usize> = if self.inst.count_propagated {
                                fin.features().into_iter().collect()
                            } else {
                                subset.to_vec()
                            };
                            self.offer(
                                key,
                                Record {
                                    tuple,
                                    explicit: subset.to_vec(),
                                    witness: fin,
                                },
                            );
                        }
                    }
                }
            }
            // advance the odometer, last feature fastest
            let mut pos = subset.len();
            loop {
                if pos == 0 {
                    return Ok(Ok(()));
                }
                pos -= 1;
                odometer[pos] += 1;
                if odometer[pos] < choices[pos].len() {
                    break;
                }
                odometer[pos] = 0;
            }
        }
    }

    fn run_sample(&mut self, sample: &LabeledSample) -> Result<(), EngineError> {
        if sample.is_empty() {
            return Err(EngineError::EmptySample);
        }
        if let Err(Stop) = self.check_root()? {
            return Ok(());
        }
        let schema = &self.inst.schema;
        let mut seen = BTreeSet::new();
        for (other, label) in sample.rows() {
            if *label != Label::Zero || !seen.insert(other.values().to_vec()) {
                continue;
            }
            let diff = intervention_between(schema, &self.inst.entity, other)?;
            if diff.is_empty() || diff.len() > self.inst.max_cardinality {
                continue;
            }
            self.diag.candidates_tested += 1;
            // the sampled entity is the final state: propagation may not add to it
            match self.inst.constraints.is_admissible(schema, &self.inst.entity, &diff)? {
                Admissibility::Admissible(fin) if fin == diff => {
                    let features: Vec<usize> = diff.features().into_iter().collect();
                    let tuple = schema.positions(other)?;
                    self.offer(
                        features.clone(),
                        Record {
                            tuple,
                            explicit: features,
                            witness: diff,
                        },
                    );
                }
                _ => self.diag.pruned_by_constraints += 1,
            }
        }
        Ok(())
    }

    fn run(mut self, goal: Goal) -> Result<Outcome, EngineError> {
        match &self.inst.space {
            SearchSpace::Full => self.run_full(goal)?,
            SearchSpace::Sample(sample) => self.run_sample(sample)?,
        }
        self.diag.exhausted_without_counterfactual = self.records.is_empty();
        let e = &self.inst.entity;
        let count = self.inst.count_propagated;
        let explanations = self
            .records
            .into_values()
            .map(|r| Explanation::from_witness(e, r.witness, count))
            .collect();
        Ok(Outcome {
            explanations,
            diagnostics: self.diag,
        })
    }
}

struct Outcome {
    explanations: Vec<Explanation>,
    diagnostics: Diagnostics,
}

/// Lexicographic k-subsets of a sorted index list.
struct KSubsets<'a> {
    items: &'a [usize],
    idx: Vec<usize>,
    done: bool,
}

impl<'a> KSubsets<'a> {
    fn new(items: &'a [usize], k: usize) -> Self {
        KSubsets {
            items,
            idx: (0..k).collect(),
            done: k > items.len(),
        }
    }
}

impl Iterator for KSubsets<'_> {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.idx.iter().map(|&i| self.items[i]).collect();
        let (k, n) = (self.idx.len(), self.items.len());
        let mut i = k;
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            if self.idx[i] < n - k + i {
                self.idx[i] += 1;
                for j in i + 1..k {
                    self.idx[j] = self.idx[j - 1] + 1;
                }
                break;
            }
        }
        Some(out)
    }
}

/// Sorts by size, then by feature indices.
pub fn sort_explanations(list: &mut [Explanation]) {
    list.sort_by(|a, b| {
        a.cardinality()
            .cmp(&b.cardinality())
            .then_with(|| a.items().keys().cmp(b.items().keys()))
    });
}

/// The explanations whose feature sets are subset-minimal in `all`.
pub fn subset_minimal(all: &[Explanation]) -> Vec<Explanation> {
    let mut out: Vec<Explanation> = all
        .iter()
        .filter(|x| {
            let fx = x.features();
            !all.iter().any(|y| y.cardinality() < x.cardinality() && y.features().is_subset(&fx))
        })
        .cloned()
        .collect();
    sort_explanations(&mut out);
    out
}

/// The explanations of minimum size in `all`.
pub fn minimum_cardinality(all: &[Explanation]) -> Vec<Explanation> {
    let Some(best) = all.iter().map(Explanation::cardinality).min() else {
        return Vec::new();
    };
    let mut out: Vec<Explanation> = all.iter().filter(|x| x.cardinality() == best).cloned().collect();
    sort_explanations(&mut out);
    out
}

/// `x-resp` of every feature value of `e`: `1/|ε|` for the smallest
/// s-explanation `ε` containing it, `0` if none does.
pub fn responsibilities(e: &Entity, s_explanations: &[Explanation]) -> Vec<Responsibility> {
    (0..e.arity())
        .map(|i| {
            let score = s_explanations
                .iter()
                .filter(|x| x.contains(i))
                .map(Explanation::cardinality)
                .min()
                .map_or(Resp::from_integer(0), |k| Resp::new(1, k as u64));
            Responsibility {
                feature: i,
                value: e.value(i).clone(),
                score,
            }
        })
        .collect()
}

/// All c-explanations (explanations of minimum size).
pub fn find_c_explanations(inst: &Instance) -> Result<Vec<Explanation>, EngineError> {
    let out = Search::new(inst)?.run(Goal::Minimum)?;
    Ok(minimum_cardinality(&out.explanations))
}

/// One explanation per subset-minimal flip set.
pub fn find_s_explanations(inst: &Instance) -> Result<Vec<Explanation>, EngineError> {
    let out = Search::new(inst)?.run(Goal::Minimal)?;
    Ok(subset_minimal(&out.explanations))
}

pub fn x_resp(inst: &Instance, feature: usize) -> Result<Resp, EngineError> {
    if feature >= inst.schema.arity() {
        return Err(ModelError::FeatureOutOfRange(feature).into());
    }
    let s = find_s_explanations(inst)?;
    Ok(responsibilities(&inst.entity, &s)[feature].score)
}

/// Every causal explanation within the cardinality bound.
pub fn all_causal_explanations(inst: &Instance) -> Result<Vec<Explanation>, EngineError> {
    let mut out = Search::new(inst)?.run(Goal::All)?.explanations;
    sort_explanations(&mut out);
    Ok(out)
}

fn build_report(inst: &Instance) -> Result<ExplanationReport, EngineError> {
    let out = Search::new(inst)?.run(Goal::Minimal)?;
    let s = subset_minimal(&out.explanations);
    let c = minimum_cardinality(&s);
    Ok(ExplanationReport {
        entity: inst.entity.clone(),
        resp: responsibilities(&inst.entity, &s),
        c_explanations: c,
        s_explanations: s,
        causal_explanations: None,
        diagnostics: out.diagnostics,
    })
}

/// Report over the labeled sample of a sample-restricted instance.
pub fn explain_from_sample(inst: &Instance) -> Result<ExplanationReport, EngineError> {
    match inst.space {
        SearchSpace::Sample(_) => build_report(inst),
        SearchSpace::Full => Err(EngineError::NotSampleMode),
    }
}

/// c-explanations, s-explanations and x-resp of every feature, in either mode.
pub fn report(inst: &Instance) -> Result<ExplanationReport, EngineError> {
    build_report(inst)
}

/// [`report`] plus every causal explanation.
pub fn full_report(inst: &Instance) -> Result<ExplanationReport, EngineError> {
    let mut r = build_report(inst)?;
    r.causal_explanations = Some(all_causal_explanations(inst)?);
    Ok(r)
}
