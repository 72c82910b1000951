//! Semantic knowledge over entities: denial constraints, implication rules
//! and one-hot groups, and the admissibility check built from them.
//!
//! ```text
//! deny  := "deny"  ":" cond { "and" cond } "." ;
//! imply := "rule"  ":" cond { "and" cond } "->" IDENT "=" literal "." ;
//! group := "group" ":" IDENT { "," IDENT } "." ;
//! ```
//!
//! Implication rules are applied to a fixpoint on top of an intervention. A
//! feature is assigned at most once across explicit and propagated changes;
//! any attempt to assign it a second, different value is a [`Conflict`].

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::model::{Entity, FeatureSchema, Intervention, ModelError, Provenance, Value};
use crate::syntax::{render_conjunction, render_word, CmpOp, Condition, ParseError, ParseErrorKind, Parser, Tok};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConstraintError {
    #[error("feature index {0} is out of range")]
    FeatureOutOfRange(usize),
    #[error("implication assigns `{value}` outside the domain of `{feature}`")]
    HeadOutOfDomain { feature: String, value: String },
    #[error("one-hot group is empty")]
    EmptyGroup,
    #[error("feature `{0}` belongs to more than one one-hot group")]
    GroupOverlap(String),
    #[error("one-hot feature `{0}` must have domain {{0, 1}}")]
    NonBinaryGroupFeature(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Implication {
    pub body: Vec<Condition>,
    pub feature: usize,
    pub value: Value,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConstraintSet {
    denials: Vec<Vec<Condition>>,
    implications: Vec<Implication>,
    groups: Vec<Vec<usize>>,
    /// Feature names for printing groups and implication heads.
    names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conflict {
    /// Index of the implication that tried the second assignment.
    pub rule: usize,
    pub feature: usize,
    pub existing: Value,
    pub attempted: Value,
    pub against: Provenance,
}

impl fmt::Display for Conflict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.against {
            Provenance::Explicit => "explicit",
            Provenance::Propagated => "propagated",
        };
        write!(
            f,
            "rule {} assigns `{}` to feature {}, which already has {kind} value `{}`",
            self.rule, self.attempted, self.feature, self.existing
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PropagateError {
    #[error(transparent)]
    Invalid(#[from] ModelError),
    #[error("conflict: {0}")]
    Conflict(Conflict),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Check {
    pub satisfied: bool,
    /// Indices of the violated denials (or offending groups).
    pub violated: Vec<usize>,
}

impl Check {
    fn from_violations(violated: Vec<usize>) -> Self {
        Check {
            satisfied: violated.is_empty(),
            violated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Inadmissible {
    Conflict(Conflict),
    Denial(Vec<usize>),
    OneHot(Vec<usize>),
}

impl fmt::Display for Inadmissible {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Inadmissible::Conflict(c) => write!(f, "{c}"),
            Inadmissible::Denial(d) => write!(f, "violates denial(s) {d:?}"),
            Inadmissible::OneHot(g) => write!(f, "breaks one-hot group(s) {g:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Admissibility {
    /// The intervention extended with propagated changes.
    Admissible(Intervention),
    Inadmissible(Inadmissible),
}

impl Admissibility {
    pub fn is_admissible(&self) -> bool {
        matches!(self, Admissibility::Admissible(_))
    }
}

impl ConstraintSet {
    pub fn new(schema: &FeatureSchema) -> Self {
        ConstraintSet {
            names: schema.names().map(str::to_string).collect(),
            ..Default::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.denials.is_empty() && self.implications.is_empty() && self.groups.is_empty()
    }

    pub fn denials(&self) -> &[Vec<Condition>] {
        &self.denials
    }

    pub fn implications(&self) -> &[Implication] {
        &self.implications
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn add_denial(&mut self, conditions: Vec<Condition>) {
        self.denials.push(conditions);
    }

    pub fn add_implication(
        &mut self,
        schema: &FeatureSchema,
        body: Vec<Condition>,
        feature: usize,
        value: Value,
    ) -> Result<(), ConstraintError> {
        let decl = schema
            .feature(feature)
            .ok_or(ConstraintError::FeatureOutOfRange(feature))?;
        if !decl.contains(&value) {
            return Err(ConstraintError::HeadOutOfDomain {
                feature: decl.name.clone(),
                value: value.to_string(),
            });
        }
        self.implications.push(Implication { body, feature, value });
        Ok(())
    }

    pub fn add_group(&mut self, schema: &FeatureSchema, features: Vec<usize>) -> Result<(), ConstraintError> {
        if features.is_empty() {
            return Err(ConstraintError::EmptyGroup);
        }
        let used: BTreeSet<usize> = self.groups.iter().flatten().copied().collect();
        let mut seen = BTreeSet::new();
        for &i in &features {
            let decl = schema.feature(i).ok_or(ConstraintError::FeatureOutOfRange(i))?;
            if used.contains(&i) || !seen.insert(i) {
                return Err(ConstraintError::GroupOverlap(decl.name.clone()));
            }
            let binary: BTreeSet<&str> = decl.domain.iter().map(Value::as_str).collect();
            if binary != BTreeSet::from(["0", "1"]) {
                return Err(ConstraintError::NonBinaryGroupFeature(decl.name.clone()));
            }
        }
        self.groups.push(features);
        Ok(())
    }

    /// All constraints of `self` followed by those of `other`.
    pub fn union(&self, schema: &FeatureSchema, other: &ConstraintSet) -> Result<ConstraintSet, ConstraintError> {
        let mut out = self.clone();
        out.denials.extend(other.denials.iter().cloned());
        for imp in &other.implications {
            out.add_implication(schema, imp.body.clone(), imp.feature, imp.value.clone())?;
        }
        for g in &other.groups {
            out.add_group(schema, g.clone())?;
        }
        Ok(out)
    }

    pub fn check_denials(&self, values: &[Value]) -> Check {
        Check::from_violations(
            self.denials
                .iter()
                .enumerate()
                .filter(|(_, conds)| conds.iter().all(|c| c.holds(values)))
                .map(|(k, _)| k)
                .collect(),
        )
    }

    /// Every group must have exactly one feature equal to `1`.
    pub fn check_onehot(&self, values: &[Value]) -> Check {
        Check::from_violations(
            self.groups
                .iter()
                .enumerate()
                .filter(|(_, g)| g.iter().filter(|&&i| values[i].as_str() == "1").count() != 1)
                .map(|(k, _)| k)
                .collect(),
        )
    }

    /// Extends `iota` with the changes forced by implication rules on `iota(e)`.
    pub fn propagate(&self, schema: &FeatureSchema, e: &Entity, iota: &Intervention) -> Result<Intervention, PropagateError> {
        iota.validate(schema, e)?;
        let mut values = e.values().to_vec();
        for (i, c) in iota.changes() {
            values[i] = c.value.clone();
        }
        self.propagate_values(iota.clone(), &mut values)
            .map_err(PropagateError::Conflict)
    }

    /// Fixpoint over `values`, which must already be `iota(e)`.
    fn propagate_values(&self, mut iota: Intervention, values: &mut [Value]) -> Result<Intervention, Conflict> {
        loop {
            let mut changed = false;
            for (k, imp) in self.implications.iter().enumerate() {
                if values[imp.feature] == imp.value || !imp.body.iter().all(|c| c.holds(values)) {
                    continue;
                }
                if let Some(prev) = iota.get(imp.feature) {
                    return Err(Conflict {
                        rule: k,
                        feature: imp.feature,
                        existing: prev.value.clone(),
                        attempted: imp.value.clone(),
                        against: prev.provenance,
                    });
                }
                iota.insert(imp.feature, imp.value.clone(), Provenance::Propagated)
                    .expect("feature not yet assigned");
                values[imp.feature] = imp.value.clone();
                changed = true;
            }
            if !changed {
                return Ok(iota);
            }
        }
    }

    /// Propagates, then checks denials and one-hot groups on the final entity.
    pub fn is_admissible(&self, schema: &FeatureSchema, e: &Entity, iota: &Intervention) -> Result<Admissibility, ModelError> {
        iota.validate(schema, e)?;
        let mut values = e.values().to_vec();
        for (i, c) in iota.changes() {
            values[i] = c.value.clone();
        }
        let extended = match self.propagate_values(iota.clone(), &mut values) {
            Ok(x) => x,
            Err(c) => return Ok(Admissibility::Inadmissible(Inadmissible::Conflict(c))),
        };
        let denials = self.check_denials(&values);
        if !denials.satisfied {
            return Ok(Admissibility::Inadmissible(Inadmissible::Denial(denials.violated)));
        }
        let groups = self.check_onehot(&values);
        if !groups.satisfied {
            return Ok(Admissibility::Inadmissible(Inadmissible::OneHot(groups.violated)));
        }
        Ok(Admissibility::Admissible(extended))
    }

    /// Renders the set in the constraint language.
    pub fn to_text(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for ConstraintSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = |i: usize| render_word(self.names.get(i).map_or("?", String::as_str));
        for d in &self.denials {
            writeln!(f, "deny: {}.", render_conjunction(d))?;
        }
        for imp in &self.implications {
            writeln!(
                f,
                "rule: {} -> {} = {}.",
                render_conjunction(&imp.body),
                name(imp.feature),
                render_word(imp.value.as_str())
            )?;
        }
        for g in &self.groups {
            writeln!(f, "group: {}.", g.iter().map(|&i| name(i)).collect::<Vec<_>>().join(", "))?;
        }
        Ok(())
    }
}

pub fn parse_constraints(text: &str, schema: &FeatureSchema) -> Result<ConstraintSet, ParseError> {
    let mut p = Parser::new(text, schema)?;
    let mut cs = ConstraintSet::new(schema);
    while !p.at_eof() {
        let (kw, at) = p.word("`deny`, `rule` or `group`")?;
        p.expect(Tok::Colon)?;
        let invalid = |e: ConstraintError| ParseError {
            line: at.line,
            col: at.col,
            kind: ParseErrorKind::Invalid(e.to_string()),
        };
        match kw.as_str() {
            "deny" => {
                let conds = p.conjunction()?;
                p.expect(Tok::Dot)?;
                cs.add_denial(conds);
            }
            "rule" => {
                let body = p.conjunction()?;
                p.expect(Tok::Arrow)?;
                let (feature, _) = p.feature()?;
                p.expect(Tok::Op(CmpOp::Eq))?;
                let (lit, _) = p.word("literal")?;
                p.expect(Tok::Dot)?;
                cs.add_implication(schema, body, feature, Value::new(lit))
                    .map_err(invalid)?;
            }
            "group" => {
                let mut features = vec![p.feature()?.0];
                while p.peek().tok == Tok::Comma {
                    p.next();
                    features.push(p.feature()?.0);
                }
                p.expect(Tok::Dot)?;
                cs.add_group(schema, features).map_err(invalid)?;
            }
            _ => return Err(p.unexpected(&at, "`deny`, `rule` or `group`")),
        }
    }
    Ok(cs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{apply_intervention, FeatureDecl};
    use proptest::prelude::*;

    /// appCode, liftable, gender, weight, height, age.
    fn movers() -> FeatureSchema {
        FeatureSchema::new(vec![
            FeatureDecl::new("appCode", vec!["101".into()], true),
            FeatureDecl::new("liftable", vec!["0".into(), "1".into()], false),
            FeatureDecl::new("gender", vec!["F".into(), "M".into()], false),
            FeatureDecl::new("weight", vec!["90".into(), "160".into()], true),
            FeatureDecl::new("height", vec!["5".into(), "6".into()], true),
            FeatureDecl::new("age", vec!["28".into(), "85".into()], true),
        ])
        .unwrap()
    }

    const DENY: &str = "deny: liftable = 1 and age > 80.";
    const IMPLY: &str = "rule: gender = M and weight > 100 and age < 70 -> liftable = 1.";

    fn iota(pairs: &[(usize, &str)]) -> Intervention {
        Intervention::new(pairs.iter().map(|&(i, v)| (i, v))).unwrap()
    }

    #[test]
    fn denial_on_lifting_age() {
        let s = movers();
        let cs = parse_constraints(DENY, &s).unwrap();
        let old = Entity::parse(&s, "x", &["101", "1", "F", "160", "6", "85"]).unwrap();
        assert_eq!(cs.check_denials(old.values()), Check { satisfied: false, violated: vec![0] });
        let mary = Entity::parse(&s, "mary", &["101", "1", "F", "160", "6", "28"]).unwrap();
        assert!(cs.check_denials(mary.values()).satisfied);
        assert!(ConstraintSet::new(&s).check_denials(old.values()).satisfied);
    }

    #[test]
    fn propagation_adds_liftable() {
        let s = movers();
        let cs = parse_constraints(IMPLY, &s).unwrap();
        let e = Entity::parse(&s, "e", &["101", "0", "F", "160", "6", "28"]).unwrap();
        let out = cs.propagate(&s, &e, &iota(&[(2, "M")])).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out.get(1).unwrap().provenance, Provenance::Propagated);
        assert_eq!(out.get(1).unwrap().value.as_str(), "1");

        // body false: unchanged
        let out = cs.propagate(&s, &e, &iota(&[(3, "90")])).unwrap();
        assert_eq!(out, iota(&[(3, "90")]));

        // head contradicts an explicit change
        let e1 = Entity::parse(&s, "e", &["101", "1", "F", "160", "6", "28"]).unwrap();
        let err = cs.propagate(&s, &e1, &iota(&[(1, "0"), (2, "M")])).unwrap_err();
        assert!(matches!(err, PropagateError::Conflict(Conflict { against: Provenance::Explicit, feature: 1, .. })));
    }

    #[test]
    fn propagated_flip_is_a_conflict() {
        let s = FeatureSchema::binary(3);
        let cs = parse_constraints("rule: F1 = 1 -> F2 = 1. rule: F2 = 1 -> F3 = 0. rule: F3 = 0 -> F2 = 0.", &s).unwrap();
        let e = Entity::parse(&s, "e", &["0", "0", "1"]).unwrap();
        let err = cs.propagate(&s, &e, &iota(&[(0, "1")])).unwrap_err();
        assert!(matches!(err, PropagateError::Conflict(Conflict { rule: 2, against: Provenance::Propagated, .. })));
    }

    #[test]
    fn chained_rules_reach_fixpoint() {
        let s = FeatureSchema::binary(3);
        // declared in reverse dependency order, needs two passes
        let cs = parse_constraints("rule: F2 = 1 -> F3 = 0. rule: F1 = 1 -> F2 = 1.", &s).unwrap();
        let e = Entity::parse(&s, "e", &["0", "0", "1"]).unwrap();
        let out = cs.propagate(&s, &e, &iota(&[(0, "1")])).unwrap();
        assert_eq!(out.features(), BTreeSet::from([0, 1, 2]));
        assert_eq!(out.explicit_len(), 1);
    }

    #[test]
    fn onehot_checks() {
        let s = FeatureSchema::binary(5);
        let cs = parse_constraints("group: F1, F2, F3, F4, F5.", &s).unwrap();
        let v = |bits: &[&str]| bits.iter().map(|b| Value::new(b)).collect::<Vec<_>>();
        assert!(cs.check_onehot(&v(&["0", "1", "0", "0", "0"])).satisfied);
        assert_eq!(cs.check_onehot(&v(&["0", "1", "0", "1", "0"])).violated, vec![0]);
        assert!(!cs.check_onehot(&v(&["0", "0", "0", "0", "0"])).satisfied);
    }

    #[test]
    fn admissibility_examples() {
        let s = movers();
        let e = Entity::parse(&s, "e", &["101", "0", "F", "160", "6", "85"]).unwrap();
        let cs = parse_constraints(DENY, &s).unwrap();
        assert_eq!(
            cs.is_admissible(&s, &e, &iota(&[(1, "1")])).unwrap(),
            Admissibility::Inadmissible(Inadmissible::Denial(vec![0]))
        );
        assert!(ConstraintSet::new(&s).is_admissible(&s, &e, &iota(&[(1, "1")])).unwrap().is_admissible());

        let young = Entity::parse(&s, "e", &["101", "0", "F", "160", "6", "28"]).unwrap();
        let cs = parse_constraints(IMPLY, &s).unwrap();
        match cs.is_admissible(&s, &young, &iota(&[(2, "M")])).unwrap() {
            Admissibility::Admissible(x) => assert_eq!(x.get(1).unwrap().value.as_str(), "1"),
            other => panic!("{other:?}"),
        }
        // both: denial sees the propagated state
        let both = parse_constraints(&format!("{IMPLY}\ndeny: liftable = 1 and weight > 100."), &s).unwrap();
        assert_eq!(
            both.is_admissible(&s, &young, &iota(&[(2, "M")])).unwrap(),
            Admissibility::Inadmissible(Inadmissible::Denial(vec![0]))
        );
    }

    #[test]
    fn parse_errors() {
        let s = movers();
        let e = parse_constraints("deny: liftable = 1 and age > 80", &s).unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::Syntax(_)));
        let e = parse_constraints("rule: gender = M -> liftable = 7.", &s).unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::Invalid(_)));
        let e = parse_constraints("group: gender.", &s).unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::Invalid(_)));
        let e = parse_constraints("forbid: age > 1.", &s).unwrap_err();
        assert_eq!((e.line, e.col), (1, 1));
        let s5 = FeatureSchema::binary(3);
        let e = parse_constraints("group: F1, F2.\ngroup: F2, F3.", &s5).unwrap_err();
        assert_eq!(e.line, 2);
    }

    #[test]
    fn text_round_trips() {
        let s = movers();
        let text = format!("{DENY}\n{IMPLY}\ndeny: height != 6.");
        let cs = parse_constraints(&text, &s).unwrap();
        assert_eq!(parse_constraints(&cs.to_text(), &s).unwrap(), cs);
        let s5 = FeatureSchema::binary(4);
        let g = parse_constraints("group: F1, F2. group: F3, F4.", &s5).unwrap();
        assert_eq!(parse_constraints(&g.to_text(), &s5).unwrap(), g);
    }

    // Random small instances over 4 ternary features, with random constraints.
    fn schema4() -> FeatureSchema {
        FeatureSchema::new(
            (0..4)
                .map(|i| FeatureDecl::new(format!("f{i}"), vec!["0".into(), "1".into(), "2".into()], true))
                .collect(),
        )
        .unwrap()
    }

    fn arb_cond() -> impl Strategy<Value = (usize, u8, i64)> {
        (0usize..4, 0u8..6, 0i64..3)
    }

    fn build(schema: &FeatureSchema, denials: &[Vec<(usize, u8, i64)>], imps: &[(Vec<(usize, u8, i64)>, usize, i64)]) -> ConstraintSet {
        let ops = [CmpOp::Eq, CmpOp::Ne, CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge];
        let cond = |&(f, op, lit): &(usize, u8, i64)| {
            Condition::resolve(schema, &format!("f{f}"), ops[op as usize], Value::from(lit)).unwrap()
        };
        let mut cs = ConstraintSet::new(schema);
        for d in denials {
            cs.add_denial(d.iter().map(cond).collect());
        }
        for (body, f, v) in imps {
            cs.add_implication(schema, body.iter().map(cond).collect(), *f, Value::from(*v)).unwrap();
        }
        cs
    }

    fn arb_iota() -> impl Strategy<Value = (Vec<i64>, Vec<Option<i64>>)> {
        (prop::collection::vec(0i64..3, 4), prop::collection::vec(prop::option::of(0i64..3), 4))
    }

    fn make(schema: &FeatureSchema, e: &[i64], changes: &[Option<i64>]) -> (Entity, Intervention) {
        let e = Entity::new(schema, "e", e.iter().map(|&v| Value::from(v)).collect()).unwrap();
        let iota = Intervention::new(
            changes
                .iter()
                .enumerate()
                .filter_map(|(i, c)| c.filter(|&v| Value::from(v) != *e.value(i)).map(|v| (i, Value::from(v)))),
        )
        .unwrap();
        (e, iota)
    }

    proptest! {
        #[test]
        fn empty_set_admits_every_valid_intervention((e, ch) in arb_iota()) {
            let s = schema4();
            let (e, iota) = make(&s, &e, &ch);
            prop_assert_eq!(
                ConstraintSet::new(&s).is_admissible(&s, &e, &iota).unwrap(),
                Admissibility::Admissible(iota)
            );
        }

        #[test]
        fn propagation_is_idempotent_and_admissible_states_satisfy_constraints(
            (e, ch) in arb_iota(),
            denials in prop::collection::vec(prop::collection::vec(arb_cond(), 1..3), 0..3),
            imps in prop::collection::vec((prop::collection::vec(arb_cond(), 1..3), 0usize..4, 0i64..3), 0..3),
        ) {
            let s = schema4();
            let (e, iota) = make(&s, &e, &ch);
            let cs = build(&s, &denials, &imps);
            if let Ok(once) = cs.propagate(&s, &e, &iota) {
                prop_assert_eq!(cs.propagate(&s, &e, &once).unwrap(), once.clone());
            }
            if let Admissibility::Admissible(fin) = cs.is_admissible(&s, &e, &iota).unwrap() {
                let out = apply_intervention(&s, &e, &fin).unwrap();
                prop_assert!(cs.check_denials(out.values()).satisfied);
                prop_assert!(cs.check_onehot(out.values()).satisfied);
            }
        }

        #[test]
        fn adding_denials_only_filters(
            (e, ch) in arb_iota(),
            base_denials in prop::collection::vec(prop::collection::vec(arb_cond(), 1..3), 0..2),
            imps in prop::collection::vec((prop::collection::vec(arb_cond(), 1..3), 0usize..4, 0i64..3), 0..2),
            extra in prop::collection::vec(prop::collection::vec(arb_cond(), 1..3), 1..3),
        ) {
            let s = schema4();
            let (e, iota) = make(&s, &e, &ch);
            let cs1 = build(&s, &base_denials, &imps);
            let cs2 = build(&s, &extra, &[]);
            let both = cs1.union(&s, &cs2).unwrap();
            if both.is_admissible(&s, &e, &iota).unwrap().is_admissible() {
                prop_assert!(cs1.is_admissible(&s, &e, &iota).unwrap().is_admissible());
            }
        }
    }
}
