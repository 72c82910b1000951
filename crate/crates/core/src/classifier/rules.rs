//! First-match rule classifiers.
//!
//! ```text
//! program := { rule } default ;
//! rule    := "label" label "if" cond { "and" cond } "." ;
//! default := "default" label "." ;
//! ```

use std::fmt;

use crate::model::{FeatureSchema, Label, Value};
use crate::syntax::{render_conjunction, Condition, ParseError, ParseErrorKind, Parser, Tok};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub label: Label,
    pub conditions: Vec<Condition>,
}

impl Rule {
    pub fn fires(&self, values: &[Value]) -> bool {
        self.conditions.iter().all(|c| c.holds(values))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleProgram {
    pub rules: Vec<Rule>,
    pub default: Label,
}

impl RuleProgram {
    pub fn constant(label: Label) -> Self {
        RuleProgram {
            rules: Vec::new(),
            default: label,
        }
    }

    /// The label of the first rule whose conditions all hold, else the default.
    pub fn classify(&self, values: &[Value]) -> Label {
        self.rules
            .iter()
            .find(|r| r.fires(values))
            .map_or(self.default, |r| r.label)
    }
}

impl fmt::Display for RuleProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.rules {
            writeln!(f, "label {} if {}.", r.label, render_conjunction(&r.conditions))?;
        }
        writeln!(f, "default {}.", self.default)
    }
}

pub fn parse_rule_program(text: &str, schema: &FeatureSchema) -> Result<RuleProgram, ParseError> {
    let mut p = Parser::new(text, schema)?;
    let mut rules = Vec::new();
    loop {
        if p.peek_keyword("label") {
            p.next();
            let label = p.label()?;
            p.keyword("if")?;
            let conditions = p.conjunction()?;
            p.expect(Tok::Dot)?;
            rules.push(Rule { label, conditions });
        } else if p.peek_keyword("default") {
            p.next();
            let default = p.label()?;
            p.expect(Tok::Dot)?;
            let end = p.next();
            if end.tok != Tok::Eof {
                return Err(p.unexpected(&end, "end of input after `default`"));
            }
            return Ok(RuleProgram { rules, default });
        } else if p.at_eof() {
            let at = p.peek().clone();
            return Err(p.error_at(&at, ParseErrorKind::MissingDefault));
        } else {
            let at = p.next();
            return Err(p.unexpected(&at, "`label` or `default`"));
        }
    }
}
