//! Random small instances for property tests.

use std::ops::RangeInclusive;

use cfx_core::{parse_constraints, Entity, FeatureDecl, FeatureSchema, Instance, Label, TableClassifier, Value};
use rand::seq::SliceRandom;
use rand::Rng;

#[derive(Debug, Clone)]
pub struct GenConfig {
    pub arity: RangeInclusive<usize>,
    pub domain: RangeInclusive<usize>,
    /// Chance that an instance gets any denials at all.
    pub denial_rate: f64,
    pub denials: RangeInclusive<usize>,
    pub implication_rate: f64,
    pub implications: RangeInclusive<usize>,
    /// Chance of label 0 for each tuple other than the entity.
    pub zero_rate: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            arity: 2..=5,
            domain: 2..=3,
            denial_rate: 0.5,
            denials: 1..=2,
            implication_rate: 0.0,
            implications: 1..=2,
            zero_rate: 0.3,
        }
    }
}

const LETTERS: [&str; 3] = ["a", "b", "c"];

pub fn random_schema<R: Rng>(rng: &mut R, cfg: &GenConfig) -> FeatureSchema {
    let n = rng.gen_range(cfg.arity.clone());
    let decls = (0..n)
        .map(|i| {
            let d = rng.gen_range(cfg.domain.clone());
            if rng.gen_bool(0.5) {
                let dom = (0..d as i64).map(|v| Value::from(v * 10)).collect();
                FeatureDecl::new(format!("F{}", i + 1), dom, true)
            } else {
                let dom = LETTERS[..d].iter().map(|&v| Value::from(v)).collect();
                FeatureDecl::new(format!("F{}", i + 1), dom, false)
            }
        })
        .collect();
    FeatureSchema::new(decls).expect("generated schema is valid")
}

fn random_condition<R: Rng>(rng: &mut R, schema: &FeatureSchema, feature: usize) -> String {
    let f = &schema.features()[feature];
    let v = f.domain.choose(rng).expect("non-empty domain");
    let op = if f.ordered {
        *["=", "!=", "<", "<=", ">", ">="].choose(rng).unwrap()
    } else {
        *["=", "!="].choose(rng).unwrap()
    };
    format!("{} {op} {v}", f.name)
}

fn random_conjunction<R: Rng>(rng: &mut R, schema: &FeatureSchema, avoid: Option<usize>) -> Option<String> {
    let pool: Vec<usize> = (0..schema.arity()).filter(|&i| Some(i) != avoid).collect();
    if pool.is_empty() {
        return None;
    }
    let k = rng.gen_range(1..=pool.len().min(2));
    let picked: Vec<usize> = pool.choose_multiple(rng, k).copied().collect();
    Some(
        picked
            .into_iter()
            .map(|i| random_condition(rng, schema, i))
            .collect::<Vec<_>>()
            .join(" and "),
    )
}

/// Constraint text in the constraint language.
pub fn random_constraints<R: Rng>(rng: &mut R, schema: &FeatureSchema, cfg: &GenConfig) -> String {
    let mut text = String::new();
    if rng.gen_bool(cfg.denial_rate) {
        for _ in 0..rng.gen_range(cfg.denials.clone()) {
            let body = random_conjunction(rng, schema, None).expect("at least one feature");
            text.push_str(&format!("deny: {body}.\n"));
        }
    }
    if rng.gen_bool(cfg.implication_rate) {
        for _ in 0..rng.gen_range(cfg.implications.clone()) {
            let head = rng.gen_range(0..schema.arity());
            let Some(body) = random_conjunction(rng, schema, Some(head)) else {
                continue;
            };
            let f = &schema.features()[head];
            let v = f.domain.choose(rng).unwrap();
            text.push_str(&format!("rule: {body} -> {} = {v}.\n", f.name));
        }
    }
    text
}

/// A total table over the product space that gives the entity label 1.
pub fn random_table<R: Rng>(rng: &mut R, schema: &FeatureSchema, e: &Entity, zero_rate: f64) -> TableClassifier {
    let mut t = TableClassifier::new();
    let mut tuples: Vec<Vec<Value>> = vec![Vec::new()];
    for f in schema.features() {
        tuples = tuples
            .into_iter()
            .flat_map(|p| {
                f.domain.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(v.clone());
                    q
                })
            })
            .collect();
    }
    for tuple in tuples {
        let label = if tuple == e.values() || !rng.gen_bool(zero_rate) {
            Label::One
        } else {
            Label::Zero
        };
        t.insert(tuple, label).expect("each tuple once");
    }
    t
}

pub fn random_entity<R: Rng>(rng: &mut R, schema: &FeatureSchema) -> Entity {
    let values = schema
        .features()
        .iter()
        .map(|f| f.domain.choose(rng).unwrap().clone())
        .collect();
    Entity::new(schema, "e", values).expect("values drawn from domains")
}

/// Instance with a random table classifier and random constraints, plus the
/// constraint text it was built from.
pub fn random_instance<R: Rng>(rng: &mut R, cfg: &GenConfig) -> (Instance, String) {
    let schema = random_schema(rng, cfg);
    let e = random_entity(rng, &schema);
    let table = random_table(rng, &schema, &e, cfg.zero_rate);
    let text = random_constraints(rng, &schema, cfg);
    let cs = parse_constraints(&text, &schema).expect("generated constraints parse");
    let inst = Instance::new(schema, e, table.into())
        .expect("entity conforms")
        .with_constraints(cs);
    (inst, text)
}
