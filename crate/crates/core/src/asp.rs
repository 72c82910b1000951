//! Export of an instance as a ground answer-set program.
//!
//! Entities are `e(Id, X1, ..., Xn, Ann)` with annotation `o` (original),
//! `do` (intervened), `star` (transition) or `s` (stop). The classifier is the
//! predicate `c(X1, ..., Xn, L)`. The choice operator is written out with
//! `chosenI` / `diffchoiceI` rules, and one weak constraint per feature asks
//! for stop states with the fewest changed values.

use std::fmt;

use thiserror::Error;

use crate::classifier::{ClassifierSpec, RuleProgram, TableClassifier};
use crate::constraints::ConstraintSet;
use crate::engine::{Instance, SearchSpace};
use crate::model::{Entity, FeatureSchema};
use crate::syntax::{CmpOp, Condition};

pub const ANNOTATIONS: [&str; 4] = ["o", "do", "star", "s"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AspError {
    #[error("a `{0}` classifier cannot be written as a program")]
    NotSerializable(&'static str),
    #[error("sample-restricted instances cannot be exported")]
    UnsupportedMode,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AspProgram {
    pub facts: Vec<String>,
    pub rules: Vec<String>,
    pub strong_constraints: Vec<String>,
    pub weak_constraints: Vec<String>,
    /// Section boundaries inside `facts` and `rules`, for the comments in the text form.
    sections: Vec<(Part, usize, &'static str)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Part {
    Facts,
    Rules,
    Strong,
    Weak,
}

impl AspProgram {
    pub fn annotations(&self) -> [&'static str; 4] {
        ANNOTATIONS
    }

    fn mark(&mut self, part: Part, title: &'static str) {
        let at = match part {
            Part::Facts => self.facts.len(),
            Part::Rules => self.rules.len(),
            Part::Strong => self.strong_constraints.len(),
            Part::Weak => self.weak_constraints.len(),
        };
        self.sections.push((part, at, title));
    }

    fn part(&self, part: Part) -> &[String] {
        match part {
            Part::Facts => &self.facts,
            Part::Rules => &self.rules,
            Part::Strong => &self.strong_constraints,
            Part::Weak => &self.weak_constraints,
        }
    }

    pub fn to_text(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for AspProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for part in [Part::Facts, Part::Rules, Part::Strong, Part::Weak] {
            let lines = self.part(part);
            let marks: Vec<_> = self.sections.iter().filter(|(p, _, _)| *p == part).collect();
            for (k, (_, start, title)) in marks.iter().enumerate() {
                let end = marks.get(k + 1).map_or(lines.len(), |m| m.1);
                if start == &end {
                    continue;
                }
                if !first {
                    writeln!(f)?;
                }
                first = false;
                writeln!(f, "% {title}")?;
                for line in &lines[*start..end] {
                    writeln!(f, "{line}")?;
                }
            }
        }
        Ok(())
    }
}

fn is_lower_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// A constant term: integers and lowercase identifiers bare, anything else quoted.
pub fn term(v: &str) -> String {
    let int = v.parse::<i64>().is_ok() && !v.starts_with('+') && !(v.len() > 1 && v.starts_with('0'));
    let neg = v.starts_with("-0");
    if (int && !neg) || (is_lower_ident(v) && !ANNOTATIONS.contains(&v) && v != "not") {
        return v.to_string();
    }
    let mut out = String::from("\"");
    for c in v.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn vars(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

fn entity_atom(id: &str, xs: &[String], ann: &str) -> String {
    format!("e({id},{},{ann})", xs.join(","))
}

fn condition(c: &Condition, xs: &[String]) -> String {
    let op = match c.op {
        CmpOp::Eq => "=",
        CmpOp::Ne => "!=",
        CmpOp::Lt => "<",
        CmpOp::Le => "<=",
        CmpOp::Gt => ">",
        CmpOp::Ge => ">=",
    };
    format!("{} {op} {}", xs[c.feature], term(c.literal.as_str()))
}

fn domain_body(xs: &[String]) -> Vec<String> {
    xs.iter().enumerate().map(|(i, x)| format!("dom{}({x})", i + 1)).collect()
}

fn table_facts(p: &mut AspProgram, schema: &FeatureSchema, t: &TableClassifier) {
    for (values, label) in t.sorted_rows(schema) {
        let args: Vec<String> = values.iter().map(|v| term(v.as_str())).collect();
        p.facts.push(format!("c({},{}).", args.join(","), label));
    }
}

fn rule_clauses(p: &mut AspProgram, schema: &FeatureSchema, prog: &RuleProgram) {
    let xs = vars("X", schema.arity());
    let args = xs.join(",");
    let dom = domain_body(&xs).join(", ");
    for (k, r) in prog.rules.iter().enumerate() {
        let conds: Vec<String> = r.conditions.iter().map(|c| condition(c, &xs)).collect();
        p.rules.push(format!("fired{}({args}) :- {dom}, {}.", k + 1, conds.join(", ")));
    }
    for (k, r) in prog.rules.iter().enumerate() {
        let mut body = vec![dom.clone(), format!("fired{}({args})", k + 1)];
        body.extend((1..=k).map(|j| format!("not fired{j}({args})")));
        p.rules.push(format!("c({args},{}) :- {}.", r.label, body.join(", ")));
    }
    let mut body = vec![dom];
    body.extend((1..=prog.rules.len()).map(|j| format!("not fired{j}({args})")));
    p.rules.push(format!("c({args},{}) :- {}.", prog.default, body.join(", ")));
}

fn constraint_lines(p: &mut AspProgram, schema: &FeatureSchema, cs: &ConstraintSet) {
    let xs = vars("X", schema.arity());
    let stop = entity_atom("E", &xs, "s");
    for d in cs.denials() {
        let conds: Vec<String> = d.iter().map(|c| condition(c, &xs)).collect();
        p.strong_constraints.push(format!(":- {stop}, {}.", conds.join(", ")));
    }
    for imp in cs.implications() {
        let mut body: Vec<String> = imp.body.iter().map(|c| condition(c, &xs)).collect();
        body.push(format!("{} != {}", xs[imp.feature], term(imp.value.as_str())));
        p.strong_constraints.push(format!(":- {stop}, {}.", body.join(", ")));
    }
    for g in cs.groups() {
        let sum: Vec<&str> = g.iter().map(|&i| xs[i].as_str()).collect();
        p.strong_constraints.push(format!(":- {stop}, {} != 1.", sum.join("+")));
    }
}

fn original_fact(e: &Entity) -> String {
    let values: Vec<String> = e.values().iter().map(|v| term(v.as_str())).collect();
    format!("{}.", entity_atom(&term(e.id()), &values, "o"))
}

pub fn export(inst: &Instance) -> Result<AspProgram, AspError> {
    if let SearchSpace::Sample(_) = inst.space() {
        return Err(AspError::UnsupportedMode);
    }
    let schema = inst.schema();
    let n = schema.arity();
    let mut p = AspProgram::default();

    p.mark(Part::Facts, "domains");
    for (i, f) in schema.features().iter().enumerate() {
        for v in &f.domain {
            p.facts.push(format!("dom{}({}).", i + 1, term(v.as_str())));
        }
    }
    p.mark(Part::Facts, "original entity");
    p.facts.push(original_fact(inst.entity()));

    match inst.classifier() {
        ClassifierSpec::Table(t) => {
            p.mark(Part::Facts, "classifier");
            table_facts(&mut p, schema, t);
        }
        ClassifierSpec::Rules(r) => {
            p.mark(Part::Rules, "classifier");
            rule_clauses(&mut p, schema, r);
        }
        other => return Err(AspError::NotSerializable(other.kind())),
    }

    let xs = vars("X", n);
    let ys = vars("Y", n);
    let args = xs.join(",");
    let star = entity_atom("E", &xs, "star");

    p.mark(Part::Rules, "transition entities");
    p.rules.push(format!("{star} :- {}.", entity_atom("E", &xs, "o")));
    p.rules.push(format!("{star} :- {}.", entity_atom("E", &xs, "do")));

    p.mark(Part::Rules, "interventions");
    let heads: Vec<String> = (0..n)
        .map(|i| {
            let mut t = xs.clone();
            t[i] = ys[i].clone();
            entity_atom("E", &t, "do")
        })
        .collect();
    let mut body = vec![star.clone(), format!("c({args},1)")];
    body.extend((0..n).map(|i| format!("dom{}({})", i + 1, ys[i])));
    body.extend((0..n).map(|i| format!("{} != {}", ys[i], xs[i])));
    body.extend((0..n).map(|i| format!("chosen{}({args},{})", i + 1, ys[i])));
    p.rules.push(format!("{} :- {}.", heads.join(" ; "), body.join(", ")));
    for i in 0..n {
        let k = i + 1;
        p.rules.push(format!(
            "chosen{k}({args},Y) :- {star}, c({args},1), dom{k}(Y), Y != {}, not diffchoice{k}({args},Y).",
            xs[i]
        ));
        p.rules.push(format!(
            "diffchoice{k}({args},Y) :- chosen{k}({args},Z), dom{k}(Y), Z != Y."
        ));
    }

    p.mark(Part::Rules, "stop");
    p.rules.push(format!(
        "{} :- {}, c({args},0).",
        entity_atom("E", &xs, "s"),
        entity_atom("E", &xs, "do")
    ));

    p.mark(Part::Rules, "explanations");
    let orig = entity_atom("E", &xs, "o");
    let stop = entity_atom("E", &ys, "s");
    for i in 0..n {
        p.rules.push(format!(
            "expl{}(E,{}) :- {orig}, {stop}, {} != {}.",
            i + 1,
            xs[i],
            xs[i],
            ys[i]
        ));
    }

    p.mark(Part::Strong, "no return to the original entity");
    p.strong_constraints
        .push(format!(":- {}, {orig}.", entity_atom("E", &xs, "do")));
    p.mark(Part::Strong, "domain constraints");
    constraint_lines(&mut p, schema, inst.constraints());

    p.mark(Part::Weak, "fewest changed values");
    for i in 0..n {
        p.weak_constraints.push(format!(
            ":~ {orig}, {stop}, {} != {}. [1@1, {}]",
            xs[i],
            ys[i],
            i + 1
        ));
    }
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct AspSyntaxError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatementKind {
    Fact,
    Rule,
    Strong,
    Weak,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Statement {
    pub kind: StatementKind,
    pub line: usize,
    /// Predicate names in the head, for facts and rules.
    pub heads: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum T {
    Ident(String),
    Var(String),
    Int,
    Str,
    Punct(&'static str),
}

const PUNCT: [&str; 17] = [
    ":-", ":~", "!=", "<=", ">=", "(", ")", ",", ".", ";", "[", "]", "@", "=", "<", ">", "+",
];

fn lex(src: &str, line: usize) -> Result<Vec<T>, AspSyntaxError> {
    let err = |m: String| AspSyntaxError { line, message: m };
    let b = src.as_bytes();
    let mut i = 0;
    let mut out = Vec::new();
    while i < b.len() {
        let c = b[i] as char;
        if c.is_whitespace() {
            i += 1;
        } else if c == '%' {
            break;
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'_') {
                i += 1;
            }
            let w = &src[start..i];
            out.push(if c.is_ascii_lowercase() {
                T::Ident(w.to_string())
            } else {
                T::Var(w.to_string())
            });
        } else if c.is_ascii_digit() || (c == '-' && b.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            i += 1;
            while i < b.len() && b[i].is_ascii_digit() {
                i += 1;
            }
            out.push(T::Int);
        } else if c == '"' {
            i += 1;
            loop {
                match b.get(i) {
                    None => return Err(err("unterminated string".into())),
                    Some(b'\\') => i += 2,
                    Some(b'"') => {
                        i += 1;
                        break;
                    }
                    Some(_) => i += 1,
                }
            }
            out.push(T::Str);
        } else if let Some(p) = PUNCT.iter().find(|p| src[i..].starts_with(**p)) {
            out.push(T::Punct(p));
            i += p.len();
        } else {
            return Err(err(format!("unexpected character `{c}`")));
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    toks: &'a [T],
    pos: usize,
    line: usize,
}

impl Cursor<'_> {
    fn peek(&self) -> Option<&T> {
        self.toks.get(self.pos)
    }

    fn peek2(&self) -> Option<&T> {
        self.toks.get(self.pos + 1)
    }

    fn err<R>(&self, what: &str) -> Result<R, AspSyntaxError> {
        Err(AspSyntaxError {
            line: self.line,
            message: format!("expected {what}, found {:?}", self.peek()),
        })
    }

    fn eat(&mut self, p: &str) -> bool {
        if matches!(self.peek(), Some(T::Punct(q)) if *q == p) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, p: &str) -> Result<(), AspSyntaxError> {
        if self.eat(p) {
            Ok(())
        } else {
            self.err(&format!("`{p}`"))
        }
    }

    fn term(&mut self) -> Result<(), AspSyntaxError> {
        match self.peek() {
            Some(T::Ident(_) | T::Var(_) | T::Int | T::Str) => {
                self.pos += 1;
                Ok(())
            }
            _ => self.err("a term"),
        }
    }

    fn atom(&mut self) -> Result<String, AspSyntaxError> {
        let Some(T::Ident(name)) = self.peek().cloned() else {
            return self.err("an atom");
        };
        self.pos += 1;
        if self.eat("(") {
            self.term()?;
            while self.eat(",") {
                self.term()?;
            }
            self.expect(")")?;
        }
        Ok(name)
    }

    fn expr(&mut self) -> Result<(), AspSyntaxError> {
        self.term()?;
        while self.eat("+") {
            self.term()?;
        }
        Ok(())
    }

    fn literal(&mut self) -> Result<(), AspSyntaxError> {
        match (self.peek(), self.peek2()) {
            (Some(T::Ident(w)), Some(T::Ident(_))) if w == "not" => {
                self.pos += 1;
                self.atom().map(drop)
            }
            (Some(T::Ident(_)), Some(T::Punct("("))) => self.atom().map(drop),
            (Some(T::Ident(_)), next)
                if !matches!(next, Some(T::Punct("=" | "!=" | "<" | "<=" | ">" | ">=" | "+"))) =>
            {
                self.atom().map(drop)
            }
            _ => {
                self.expr()?;
                match self.peek() {
                    Some(T::Punct("=" | "!=" | "<" | "<=" | ">" | ">=")) => self.pos += 1,
                    _ => return self.err("a comparison"),
                }
                self.expr()
            }
        }
    }

    fn body(&mut self) -> Result<(), AspSyntaxError> {
        self.literal()?;
        while self.eat(",") {
            self.literal()?;
        }
        Ok(())
    }

    fn end(&self) -> Result<(), AspSyntaxError> {
        match self.peek() {
            None => Ok(()),
            Some(_) => self.err("end of line"),
        }
    }
}

/// Checks one statement per line against the export grammar. Blank lines and
/// `%` comments are skipped.
pub fn parse_program(text: &str) -> Result<Vec<Statement>, AspSyntaxError> {
    let mut out = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let toks = lex(raw, line)?;
        if toks.is_empty() {
            continue;
        }
        let mut c = Cursor { toks: &toks, pos: 0, line };
        let stmt = if c.eat(":~") {
            c.body()?;
            c.expect(".")?;
            c.expect("[")?;
            c.term()?;
            c.expect("@")?;
            c.term()?;
            while c.eat(",") {
                c.term()?;
            }
            c.expect("]")?;
            Statement {
                kind: StatementKind::Weak,
                line,
                heads: Vec::new(),
            }
        } else if c.eat(":-") {
            c.body()?;
            c.expect(".")?;
            Statement {
                kind: StatementKind::Strong,
                line,
                heads: Vec::new(),
            }
        } else {
            let mut heads = vec![c.atom()?];
            while c.eat(";") {
                heads.push(c.atom()?);
            }
            let kind = if c.eat(":-") {
                c.body()?;
                StatementKind::Rule
            } else if heads.len() == 1 {
                StatementKind::Fact
            } else {
                return c.err("`:-` after a disjunctive head");
            };
            c.expect(".")?;
            Statement { kind, line, heads }
        };
        c.end()?;
        out.push(stmt);
    }
    Ok(out)
}

/// Number of statements of each kind, in the order fact, rule, strong, weak.
pub fn census(statements: &[Statement]) -> [usize; 4] {
    let mut n = [0; 4];
    for s in statements {
        n[s.kind as usize] += 1;
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{load_table, parse_rule_program};
    use crate::constraints::parse_constraints;
    use crate::model::{FeatureDecl, Value};
    use proptest::prelude::*;

    const TABLE1: &str = "F1,F2,F3,label\n0,1,1,1\n1,1,1,1\n1,1,0,1\n1,0,1,0\n1,0,0,1\n0,1,0,1\n0,0,1,0\n0,0,0,0\n";

    fn table1(cs: &str) -> Instance {
        let s = FeatureSchema::binary(3);
        let t = load_table(TABLE1, &s).unwrap();
        let e = Entity::parse(&s, "e1", &["0", "1", "1"]).unwrap();
        let cs = parse_constraints(cs, &s).unwrap();
        Instance::new(s, e, t.into()).unwrap().with_constraints(cs)
    }

    fn count(p: &AspProgram, prefix: &str) -> usize {
        p.facts.iter().chain(&p.rules).filter(|l| l.starts_with(prefix)).count()
    }

    #[test]
    fn terms() {
        assert_eq!(term("0"), "0");
        assert_eq!(term("-3"), "-3");
        assert_eq!(term("007"), "\"007\"");
        assert_eq!(term("e1"), "e1");
        assert_eq!(term("M"), "\"M\"");
        assert_eq!(term("do"), "\"do\"");
        assert_eq!(term("6 feet"), "\"6 feet\"");
        assert_eq!(term("a\"b"), "\"a\\\"b\"");
    }

    #[test]
    fn table1_structure() {
        let p = export(&table1("")).unwrap();
        assert_eq!(count(&p, "dom"), 6);
        assert!(p.facts.contains(&"dom1(0).".to_string()));
        assert!(p.facts.contains(&"dom3(1).".to_string()));
        assert!(p.facts.contains(&"e(e1,0,1,1,o).".to_string()));
        assert_eq!(count(&p, "c("), 8);
        assert_eq!(count(&p, "expl"), 3);
        assert_eq!(p.weak_constraints.len(), 3);
        assert_eq!(p.strong_constraints.len(), 1);
        let parsed = parse_program(&p.to_text()).unwrap();
        assert_eq!(census(&parsed), [15, p.rules.len(), 1, 3]);
    }

    #[test]
    fn constraints_add_strong_lines() {
        let p = export(&table1("deny: F2 = 0 and F3 = 1.")).unwrap();
        assert_eq!(p.strong_constraints.len(), 2);
        let p = export(&table1("deny: F2 = 0. rule: F1 = 1 -> F3 = 0. group: F1, F2.")).unwrap();
        assert_eq!(p.strong_constraints.len(), 4);
        assert!(p.strong_constraints.iter().any(|l| l.contains("X1+X2 != 1")));
        parse_program(&p.to_text()).unwrap();
    }

    #[test]
    fn rule_classifier_is_translated() {
        let s = FeatureSchema::new(vec![
            FeatureDecl::new("gender", vec!["F".into(), "M".into()], false),
            FeatureDecl::new("age", vec!["28".into(), "85".into()], true),
        ])
        .unwrap();
        let prog = parse_rule_program("label 0 if gender = M. label 1 if age > 80. default 0.", &s).unwrap();
        let e = Entity::parse(&s, "mary", &["F", "28"]).unwrap();
        let inst = Instance::new(s, e, prog.into()).unwrap();
        let p = export(&inst).unwrap();
        let text = p.to_text();
        assert!(text.contains("fired1(X1,X2) :- dom1(X1), dom2(X2), X1 = \"M\"."));
        assert!(text.contains("c(X1,X2,1) :- dom1(X1), dom2(X2), fired2(X1,X2), not fired1(X1,X2)."));
        assert!(text.contains("c(X1,X2,0) :- dom1(X1), dom2(X2), not fired1(X1,X2), not fired2(X1,X2)."));
        parse_program(&text).unwrap();
    }

    #[test]
    fn function_classifiers_and_samples_are_refused() {
        let s = FeatureSchema::binary(2);
        let e = Entity::parse(&s, "e", &["0", "1"]).unwrap();
        let f = ClassifierSpec::function(|_: &[Value]| Ok(crate::model::Label::One));
        let inst = Instance::new(s.clone(), e, f).unwrap();
        assert!(matches!(export(&inst), Err(AspError::NotSerializable(_))));
        let inst = table1("").with_sample(Default::default());
        assert_eq!(export(&inst), Err(AspError::UnsupportedMode));
    }

    #[test]
    fn grammar_rejects_junk() {
        assert!(parse_program("p(X) :- q(X)").is_err());
        assert!(parse_program("a ; b.").is_err());
        assert!(parse_program(":~ p(X). [1]").is_err());
        assert!(parse_program("P(x).").is_err());
        assert!(parse_program("p(x) :- X <> 1.").is_err());
        let err = parse_program("% note\n\np(1). a ; b :- not c, X != 2.\n").unwrap_err();
        assert_eq!(err.line, 3);
    }

    proptest! {
        #[test]
        fn random_exports_parse_and_count(
            doms in prop::collection::vec(1usize..4, 1..5),
            seed in any::<u64>(),
            denials in 0usize..3,
        ) {
            let decls = doms
                .iter()
                .enumerate()
                .map(|(i, &d)| FeatureDecl::new(format!("G{i}"), (0..d).map(|v| Value::from(v as i64)).collect(), true))
                .collect();
            let s = FeatureSchema::new(decls).unwrap();
            let values: Vec<Value> = doms.iter().enumerate().map(|(i, &d)| Value::from(((seed >> i) % d as u64) as i64)).collect();
            let e = Entity::new(&s, "x", values).unwrap();
            let text: String = (0..denials).map(|k| format!("deny: G0 >= {k}.\n")).collect();
            let cs = parse_constraints(&text, &s).unwrap();
            let prog = parse_rule_program("label 0 if G0 = 0. default 1.", &s).unwrap();
            let inst = Instance::new(s.clone(), e, prog.into()).unwrap().with_constraints(cs);
            let p = export(&inst).unwrap();
            let parsed = parse_program(&p.to_text()).unwrap();
            let n = doms.len();
            let [facts, _, strong, weak] = census(&parsed);
            prop_assert_eq!(facts, doms.iter().sum::<usize>() + 1);
            prop_assert_eq!(strong, 1 + denials);
            prop_assert_eq!(weak, n);
            prop_assert_eq!(count(&p, "expl"), n);
        }
    }
}
