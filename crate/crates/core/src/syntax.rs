//! Lexer and shared grammar pieces for the rule and constraint languages.
//!
//! Both languages are line-insensitive, `#` starts a comment when it begins a
//! token, and statements end with `.`. A word is `[A-Za-z0-9_]` followed by any
//! of `[A-Za-z0-9_#]`, so generated one-hot names such as `ERE#1` lex as one
//! word. Anything else (spaces, dots, dashes) needs double quotes.

use std::fmt;

use thiserror::Error;

use crate::model::{FeatureSchema, Value};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{col}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("operator `{op}` needs an ordered feature, `{feature}` is unordered")]
    OperatorOnUnorderedFeature { feature: String, op: CmpOp },
    #[error("feature `{feature}` is ordered, literal `{literal}` is not an integer")]
    NonIntegerLiteral { feature: String, literal: String },
    #[error("program has no `default` statement")]
    MissingDefault,
    #[error("value `{value}` is not in the domain of `{feature}`")]
    OutOfDomainValue { feature: String, value: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn is_order(self) -> bool {
        !matches!(self, CmpOp::Eq | CmpOp::Ne)
    }

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    pub fn eval<T: PartialOrd>(self, lhs: T, rhs: T) -> bool {
        match self {
            CmpOp::Eq => lhs == rhs,
            CmpOp::Ne => lhs != rhs,
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Gt => lhs > rhs,
            CmpOp::Ge => lhs >= rhs,
        }
    }
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// `feature op literal`, resolved against a schema.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Condition {
    pub feature: usize,
    pub name: String,
    pub op: CmpOp,
    pub literal: Value,
    /// Copied from the feature declaration: compare as integers.
    pub numeric: bool,
}

impl Condition {
    /// Resolves and checks a condition against `schema`.
    pub fn resolve(schema: &FeatureSchema, name: &str, op: CmpOp, literal: Value) -> Result<Condition, ParseErrorKind> {
        let feature = schema
            .index_of(name)
            .ok_or_else(|| ParseErrorKind::UnknownFeature(name.to_string()))?;
        let decl = &schema.features()[feature];
        if op.is_order() && !decl.ordered {
            return Err(ParseErrorKind::OperatorOnUnorderedFeature {
                feature: name.to_string(),
                op,
            });
        }
        if decl.ordered && literal.as_int().is_none() {
            return Err(ParseErrorKind::NonIntegerLiteral {
                feature: name.to_string(),
                literal: literal.to_string(),
            });
        }
        Ok(Condition {
            feature,
            name: name.to_string(),
            op,
            literal,
            numeric: decl.ordered,
        })
    }

    /// Whether the condition holds on a full value tuple. Ordered features
    /// compare as integers, everything else by canonical text.
    pub fn holds(&self, values: &[Value]) -> bool {
        let v = &values[self.feature];
        if self.numeric {
            match (v.as_int(), self.literal.as_int()) {
                (Some(a), Some(b)) => self.op.eval(a, b),
                _ => false,
            }
        } else {
            self.op.eval(v.as_str(), self.literal.as_str())
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", render_word(&self.name), self.op, render_word(self.literal.as_str()))
    }
}

/// Writes `s` bare when it lexes as a single word, quoted otherwise.
pub fn render_word(s: &str) -> String {
    let bare = !s.is_empty()
        && s.chars().next().is_some_and(|c| c.is_ascii_alphanumeric() || c == '_')
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '#');
    let negative_int = s.len() > 1 && s.starts_with('-') && s[1..].chars().all(|c| c.is_ascii_digit());
    if bare || negative_int {
        s.to_string()
    } else {
        let mut out = String::with_capacity(s.len() + 2);
        out.push('"');
        for c in s.chars() {
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
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tok {
    Word(String),
    Quoted(String),
    Op(CmpOp),
    Dot,
    Comma,
    Colon,
    Arrow,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Word(w) => write!(f, "`{w}`"),
            Tok::Quoted(q) => write!(f, "\"{q}\""),
            Tok::Op(op) => write!(f, "`{op}`"),
            Tok::Dot => f.write_str("`.`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::Colon => f.write_str("`:`"),
            Tok::Arrow => f.write_str("`->`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Spanned {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

pub fn tokenize(text: &str) -> Result<Vec<Spanned>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let err = |line, col, msg: String| ParseError {
        line,
        col,
        kind: ParseErrorKind::Syntax(msg),
    };
    while i < chars.len() {
        let c = chars[i];
        let (start_line, start_col) = (line, col);
        let bump = |n: usize, i: &mut usize, col: &mut usize| {
            *i += n;
            *col += n;
        };
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            bump(1, &mut i, &mut col);
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                bump(1, &mut i, &mut col);
            }
            continue;
        }
        let next = chars.get(i + 1).copied();
        let tok = match c {
            '.' => {
                bump(1, &mut i, &mut col);
                Tok::Dot
            }
            ',' => {
                bump(1, &mut i, &mut col);
                Tok::Comma
            }
            ':' => {
                bump(1, &mut i, &mut col);
                Tok::Colon
            }
            '=' => {
                bump(1, &mut i, &mut col);
                Tok::Op(CmpOp::Eq)
            }
            '!' if next == Some('=') => {
                bump(2, &mut i, &mut col);
                Tok::Op(CmpOp::Ne)
            }
            '<' if next == Some('=') => {
                bump(2, &mut i, &mut col);
                Tok::Op(CmpOp::Le)
            }
            '<' => {
                bump(1, &mut i, &mut col);
                Tok::Op(CmpOp::Lt)
            }
            '>' if next == Some('=') => {
                bump(2, &mut i, &mut col);
                Tok::Op(CmpOp::Ge)
            }
            '>' => {
                bump(1, &mut i, &mut col);
                Tok::Op(CmpOp::Gt)
            }
            '-' if next == Some('>') => {
                bump(2, &mut i, &mut col);
                Tok::Arrow
            }
            '-' if next.is_some_and(|d| d.is_ascii_digit()) => {
                let mut w = String::from("-");
                bump(1, &mut i, &mut col);
                while i < chars.len() && chars[i].is_ascii_digit() {
                    w.push(chars[i]);
                    bump(1, &mut i, &mut col);
                }
                Tok::Word(w)
            }
            '"' => {
                bump(1, &mut i, &mut col);
                let mut s = String::new();
                loop {
                    match chars.get(i) {
                        None | Some('\n') => {
                            return Err(err(start_line, start_col, "unterminated string".into()));
                        }
                        Some('"') => {
                            bump(1, &mut i, &mut col);
                            break;
                        }
                        Some('\\') => {
                            let escaped = match chars.get(i + 1) {
                                Some('"') => '"',
                                Some('\\') => '\\',
                                Some('n') => '\n',
                                _ => return Err(err(line, col, "bad escape in string".into())),
                            };
                            s.push(escaped);
                            bump(2, &mut i, &mut col);
                        }
                        Some(&ch) => {
                            s.push(ch);
                            bump(1, &mut i, &mut col);
                        }
                    }
                }
                Tok::Quoted(s)
            }
            c if c.is_ascii_alphanumeric() || c == '_' => {
                let mut w = String::new();
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_' || chars[i] == '#') {
                    w.push(chars[i]);
                    bump(1, &mut i, &mut col);
                }
                Tok::Word(w)
            }
            other => return Err(err(line, col, format!("unexpected character `{other}`"))),
        };
        out.push(Spanned {
            tok,
            line: start_line,
            col: start_col,
        });
    }
    out.push(Spanned {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

/// Recursive-descent cursor over a token stream.
pub struct Parser<'a> {
    toks: Vec<Spanned>,
    pos: usize,
    pub schema: &'a FeatureSchema,
}

impl<'a> Parser<'a> {
    pub fn new(text: &str, schema: &'a FeatureSchema) -> Result<Self, ParseError> {
        Ok(Parser {
            toks: tokenize(text)?,
            pos: 0,
            schema,
        })
    }

    pub fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    pub fn at_eof(&self) -> bool {
        self.peek().tok == Tok::Eof
    }

    pub fn next(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if t.tok != Tok::Eof {
            self.pos += 1;
        }
        t
    }

    pub fn error_at(&self, at: &Spanned, kind: ParseErrorKind) -> ParseError {
        ParseError {
            line: at.line,
            col: at.col,
            kind,
        }
    }

    pub fn unexpected(&self, at: &Spanned, wanted: &str) -> ParseError {
        self.error_at(at, ParseErrorKind::Syntax(format!("expected {wanted}, found {}", at.tok)))
    }

    pub fn peek_keyword(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Word(w) if w == kw)
    }

    pub fn keyword(&mut self, kw: &str) -> Result<Spanned, ParseError> {
        let t = self.next();
        match &t.tok {
            Tok::Word(w) if w == kw => Ok(t),
            _ => Err(self.unexpected(&t, &format!("`{kw}`"))),
        }
    }

    pub fn expect(&mut self, want: Tok) -> Result<Spanned, ParseError> {
        let t = self.next();
        if t.tok == want {
            Ok(t)
        } else {
            Err(self.unexpected(&t, &want.to_string()))
        }
    }

    /// A bare word or a quoted string.
    pub fn word(&mut self, what: &str) -> Result<(String, Spanned), ParseError> {
        let t = self.next();
        match &t.tok {
            Tok::Word(w) | Tok::Quoted(w) => Ok((w.clone(), t)),
            _ => Err(self.unexpected(&t, what)),
        }
    }

    pub fn label(&mut self) -> Result<crate::model::Label, ParseError> {
        let t = self.next();
        match &t.tok {
            Tok::Word(w) if w == "0" => Ok(crate::model::Label::Zero),
            Tok::Word(w) if w == "1" => Ok(crate::model::Label::One),
            _ => Err(self.unexpected(&t, "label `0` or `1`")),
        }
    }

    pub fn feature(&mut self) -> Result<(usize, String), ParseError> {
        let (name, at) = self.word("feature name")?;
        match self.schema.index_of(&name) {
            Some(i) => Ok((i, name)),
            None => Err(self.error_at(&at, ParseErrorKind::UnknownFeature(name))),
        }
    }

    pub fn condition(&mut self) -> Result<Condition, ParseError> {
        let (name, at) = self.word("feature name")?;
        let op_tok = self.next();
        let op = match op_tok.tok {
            Tok::Op(op) => op,
            _ => return Err(self.unexpected(&op_tok, "comparison operator")),
        };
        let (lit, _) = self.word("literal")?;
        Condition::resolve(self.schema, &name, op, Value::new(lit)).map_err(|kind| self.error_at(&at, kind))
    }

    /// `cond { "and" cond }`
    pub fn conjunction(&mut self) -> Result<Vec<Condition>, ParseError> {
        let mut conds = vec![self.condition()?];
        while self.peek_keyword("and") {
            self.next();
            conds.push(self.condition()?);
        }
        Ok(conds)
    }
}

pub fn render_conjunction(conds: &[Condition]) -> String {
    conds.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" and ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FeatureDecl;

    #[test]
    fn lexes_generated_names_and_comments() {
        let toks = tokenize("group: ERE#0, ERE#1. # trailing\n-5 \"a b\" ->").unwrap();
        let kinds: Vec<Tok> = toks.into_iter().map(|t| t.tok).collect();
        assert_eq!(
            kinds,
            vec![
                Tok::Word("group".into()),
                Tok::Colon,
                Tok::Word("ERE#0".into()),
                Tok::Comma,
                Tok::Word("ERE#1".into()),
                Tok::Dot,
                Tok::Word("-5".into()),
                Tok::Quoted("a b".into()),
                Tok::Arrow,
                Tok::Eof
            ]
        );
    }

    #[test]
    fn reports_position_of_bad_character() {
        let e = tokenize("label 0 if\n  F1 @ 1.").unwrap_err();
        assert_eq!((e.line, e.col), (2, 6));
    }

    #[test]
    fn ordered_conditions_compare_numerically() {
        let schema = FeatureSchema::new(vec![
            FeatureDecl::new("age", vec!["9".into(), "10".into(), "85".into()], true),
            FeatureDecl::new("g", vec!["F".into(), "M".into()], false),
        ])
        .unwrap();
        let c = Condition::resolve(&schema, "age", CmpOp::Gt, "80".into()).unwrap();
        assert!(c.holds(&["85".into(), "F".into()]));
        assert!(!c.holds(&["10".into(), "F".into()]));
        let c = Condition::resolve(&schema, "age", CmpOp::Lt, "10".into()).unwrap();
        assert!(c.holds(&["9".into(), "F".into()]));
        assert!(matches!(
            Condition::resolve(&schema, "g", CmpOp::Lt, "M".into()),
            Err(ParseErrorKind::OperatorOnUnorderedFeature { .. })
        ));
        assert!(matches!(
            Condition::resolve(&schema, "age", CmpOp::Eq, "old".into()),
            Err(ParseErrorKind::NonIntegerLiteral { .. })
        ));
    }

    #[test]
    fn render_word_quotes_when_needed() {
        assert_eq!(render_word("F1"), "F1");
        assert_eq!(render_word("-3"), "-3");
        assert_eq!(render_word("ERE#2"), "ERE#2");
        assert_eq!(render_word("6 feet"), "\"6 feet\"");
        assert_eq!(render_word("1.5"), "\"1.5\"");
    }
}
