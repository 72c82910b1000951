//! Brute-force reference used to check the search engine.
//!
//! Every tuple of the product space is enumerated. For each tuple with label 0
//! every subset of its differing features is tried as the explicit part of an
//! intervention; the subset counts when propagation reaches exactly that
//! tuple and the tuple satisfies the constraints. Minimality and scores are
//! then read off the definitions. Only the model types and the classifier are
//! shared with the engine.

pub mod gen;

use std::collections::{BTreeMap, BTreeSet};

use cfx_core::classifier::ClassifyError;
use cfx_core::engine::{Diagnostics, ExplanationReport, Responsibility, SearchSpace};
use cfx_core::syntax::{CmpOp, Condition};
use cfx_core::{Entity, Explanation, FeatureSchema, Instance, Intervention, Label, Provenance, Value};
use num_rational::Ratio;
use thiserror::Error;

/// Largest product space the oracle will enumerate.
pub const SPACE_LIMIT: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("product space of {0} tuples is over the limit")]
    SpaceTooLarge(u128),
    #[error("entity is labeled 0")]
    NothingToExplain,
    #[error(transparent)]
    Classifier(#[from] ClassifyError),
}

/// An admissible intervention and the state it leads to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub state: Vec<Value>,
    pub explicit: BTreeSet<usize>,
    pub witness: Intervention,
}

fn holds(schema: &FeatureSchema, c: &Condition, values: &[Value]) -> bool {
    let v = &values[c.feature];
    if schema.features()[c.feature].ordered {
        let (Some(a), Some(b)) = (v.as_str().parse::<i64>().ok(), c.literal.as_str().parse::<i64>().ok()) else {
            return false;
        };
        match c.op {
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
        }
    } else {
        match c.op {
            CmpOp::Eq => v.as_str() == c.literal.as_str(),
            CmpOp::Ne => v.as_str() != c.literal.as_str(),
            _ => false,
        }
    }
}

/// Applies `explicit` to `origin` and runs the implication rules to a fixpoint.
/// `None` on a conflicting assignment.
fn propagate(
    inst: &Instance,
    origin: &[Value],
    explicit: &BTreeMap<usize, Value>,
) -> Option<(Vec<Value>, BTreeMap<usize, Provenance>)> {
    let schema = inst.schema();
    let mut state = origin.to_vec();
    let mut assigned: BTreeMap<usize, Provenance> = BTreeMap::new();
    for (&i, v) in explicit {
        state[i] = v.clone();
        assigned.insert(i, Provenance::Explicit);
    }
    let rules = inst.constraints().implications();
    let mut dirty = true;
    while dirty {
        dirty = false;
        for r in rules {
            let fires = r.body.iter().all(|c| holds(schema, c, &state));
            if !fires || state[r.feature] == r.value {
                continue;
            }
            if assigned.contains_key(&r.feature) {
                return None;
            }
            state[r.feature] = r.value.clone();
            assigned.insert(r.feature, Provenance::Propagated);
            dirty = true;
        }
    }
    Some((state, assigned))
}

fn satisfies(inst: &Instance, state: &[Value]) -> bool {
    let schema = inst.schema();
    let cs = inst.constraints();
    let denied = cs
        .denials()
        .iter()
        .any(|d| d.iter().all(|c| holds(schema, c, state)));
    let bad_group = cs
        .groups()
        .iter()
        .any(|g| g.iter().filter(|&&i| state[i].as_str() == "1").count() != 1);
    !denied && !bad_group
}

fn witness_of(state: &[Value], assigned: &BTreeMap<usize, Provenance>) -> Intervention {
    let mut w = Intervention::empty();
    for (&i, &p) in assigned {
        w.insert(i, state[i].clone(), p).expect("distinct features");
    }
    w
}

fn space_size(schema: &FeatureSchema) -> u128 {
    schema
        .features()
        .iter()
        .map(|f| f.domain.len() as u128)
        .fold(1u128, |a, b| a.saturating_mul(b))
}

/// All tuples of the product space, last feature varying fastest.
fn all_tuples(schema: &FeatureSchema) -> Vec<Vec<Value>> {
    let mut out: Vec<Vec<Value>> = vec![Vec::new()];
    for f in schema.features() {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                f.domain.iter().map(move |v| {
                    let mut t = prefix.clone();
                    t.push(v.clone());
                    t
                })
            })
            .collect();
    }
    out
}

/// Subsets of `items` ordered by size, then lexicographically.
fn subsets_by_size(items: &[usize], max: usize) -> Vec<Vec<usize>> {
    let mut all: Vec<Vec<usize>> = (0u64..1 << items.len())
        .map(|mask| {
            items
                .iter()
                .enumerate()
                .filter(|(k, _)| mask >> k & 1 == 1)
                .map(|(_, &i)| i)
                .collect::<Vec<usize>>()
        })
        .filter(|s| !s.is_empty() && s.len() <= max)
        .collect();
    all.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    all
}

fn differing(a: &[Value], b: &[Value]) -> Vec<usize> {
    (0..a.len()).filter(|&i| a[i] != b[i]).collect()
}

/// Every admissible intervention with at most `max_cardinality` explicit
/// changes, grouped by the state it reaches.
pub fn admissible_interventions(inst: &Instance) -> Result<Vec<Candidate>, OracleError> {
    let schema = inst.schema();
    let size = space_size(schema);
    if size > SPACE_LIMIT {
        return Err(OracleError::SpaceTooLarge(size));
    }
    let origin = inst.entity().values();
    let mut out = Vec::new();
    for t in all_tuples(schema) {
        let diff = differing(origin, &t);
        for e in subsets_by_size(&diff, inst.max_cardinality()) {
            let explicit: BTreeMap<usize, Value> = e.iter().map(|&i| (i, t[i].clone())).collect();
            let Some((state, assigned)) = propagate(inst, origin, &explicit) else {
                continue;
            };
            if state == t && satisfies(inst, &state) {
                out.push(Candidate {
                    witness: witness_of(&state, &assigned),
                    state,
                    explicit: e.into_iter().collect(),
                });
            }
        }
    }
    Ok(out)
}

fn sample_candidates(inst: &Instance, rows: &[(Entity, Label)]) -> Vec<(Candidate, Label)> {
    let origin = inst.entity().values();
    let mut out = Vec::new();
    for (other, label) in rows {
        let diff = differing(origin, other.values());
        if diff.is_empty() || diff.len() > inst.max_cardinality() {
            continue;
        }
        let explicit: BTreeMap<usize, Value> = diff.iter().map(|&i| (i, other.values()[i].clone())).collect();
        let Some((state, assigned)) = propagate(inst, origin, &explicit) else {
            continue;
        };
        if state == other.values() && satisfies(inst, &state) {
            out.push((
                Candidate {
                    witness: witness_of(&state, &assigned),
                    state,
                    explicit: diff.into_iter().collect(),
                },
                *label,
            ));
        }
    }
    out
}

struct Tally {
    calls: usize,
    tested: usize,
}

/// Label-0 candidates, each keyed by its counted feature set, keeping the
/// first one per key in enumeration order.
fn counterfactuals(inst: &Instance, tally: &mut Tally) -> Result<Vec<Explanation>, OracleError> {
    let e = inst.entity();
    let root = match inst.space() {
        SearchSpace::Sample(s) => s
            .rows()
            .iter()
            .find(|(x, _)| x.values() == e.values())
            .map(|(_, l)| *l),
        SearchSpace::Full => None,
    };
    let root = match root {
        Some(l) => l,
        None => {
            tally.calls += 1;
            inst.classifier().classify_values(e.values())?
        }
    };
    if root == Label::Zero {
        return Err(OracleError::NothingToExplain);
    }

    let labeled: Vec<(Candidate, Label)> = match inst.space() {
        SearchSpace::Full => {
            let mut out = Vec::new();
            let mut memo: BTreeMap<Vec<Value>, Label> = BTreeMap::new();
            for c in admissible_interventions(inst)? {
                let label = match memo.get(&c.state) {
                    Some(&l) => l,
                    None => {
                        tally.calls += 1;
                        let l = inst.classifier().classify_values(&c.state)?;
                        memo.insert(c.state.clone(), l);
                        l
                    }
                };
                out.push((c, label));
            }
            out
        }
        SearchSpace::Sample(s) => {
            let mut rows: Vec<(Entity, Label)> = s.rows().to_vec();
            // enumeration order of the full space: by domain positions
            let schema = inst.schema();
            rows.sort_by_key(|(x, _)| schema.positions(x).expect("sample conforms"));
            rows.dedup_by(|a, b| a.0.values() == b.0.values());
            sample_candidates(inst, &rows)
        }
    };
    tally.tested = labeled.len();

    let mut seen: BTreeSet<Vec<usize>> = BTreeSet::new();
    let mut out = Vec::new();
    for (c, label) in labeled {
        if label != Label::Zero {
            continue;
        }
        let key: Vec<usize> = if inst.count_propagated() {
            c.witness.features().into_iter().collect()
        } else {
            c.explicit.iter().copied().collect()
        };
        if seen.insert(key) {
            out.push(Explanation::from_witness(e, c.witness, inst.count_propagated()));
        }
    }
    Ok(out)
}

fn ordered(mut xs: Vec<Explanation>) -> Vec<Explanation> {
    xs.sort_by_key(|x| (x.cardinality(), x.features().into_iter().collect::<Vec<_>>()));
    xs
}

/// Every causal explanation within the cardinality bound.
pub fn brute_force_causal(inst: &Instance) -> Result<Vec<Explanation>, OracleError> {
    let mut tally = Tally { calls: 0, tested: 0 };
    Ok(ordered(counterfactuals(inst, &mut tally)?))
}

pub fn brute_force_report(inst: &Instance) -> Result<ExplanationReport, OracleError> {
    let mut tally = Tally { calls: 0, tested: 0 };
    let all = counterfactuals(inst, &mut tally)?;

    // subset-minimal: no other flip set strictly inside
    let s: Vec<Explanation> = all
        .iter()
        .filter(|x| {
            let fx = x.features();
            !all.iter().any(|y| {
                let fy = y.features();
                fy != fx && fy.is_subset(&fx)
            })
        })
        .cloned()
        .collect();
    let k_star = s.iter().map(|x| x.cardinality()).min();
    let c: Vec<Explanation> = s.iter().filter(|x| Some(x.cardinality()) == k_star).cloned().collect();

    let e = inst.entity();
    let resp = (0..e.arity())
        .map(|i| {
            let best = s
                .iter()
                .filter(|x| x.items().contains_key(&i))
                .map(|x| Ratio::new(1u64, x.cardinality() as u64))
                .max()
                .unwrap_or_else(|| Ratio::from_integer(0));
            Responsibility {
                feature: i,
                value: e.values()[i].clone(),
                score: best,
            }
        })
        .collect();

    Ok(ExplanationReport {
        entity: e.clone(),
        c_explanations: ordered(c),
        s_explanations: ordered(s),
        causal_explanations: None,
        resp,
        diagnostics: Diagnostics {
            mode: "oracle".to_string(),
            candidates_tested: tally.tested,
            classifier_calls: tally.calls,
            max_cardinality: inst.max_cardinality(),
            count_propagated: inst.count_propagated(),
            truncated: inst.max_cardinality() < inst.schema().arity(),
            exhausted_without_counterfactual: all.is_empty(),
            ..Diagnostics::default()
        },
    })
}
