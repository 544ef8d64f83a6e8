//! LTL abstract syntax, parser and printer.
//!
//! Operator precedence, loosest first: `->` (right-associative), `||`, `&&`,
//! `U` (right-associative), then the prefix operators `!`, `G`, `F`, `X`.
//! `□`/`◇` are accepted for `G`/`F`, and `¬ ∧ ∨ →` for the boolean connectives.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "op", content = "args", rename_all = "snake_case")]
pub enum Ltl {
    Atom(String),
    Not(Box<Ltl>),
    And(Box<Ltl>, Box<Ltl>),
    Or(Box<Ltl>, Box<Ltl>),
    Implies(Box<Ltl>, Box<Ltl>),
    Always(Box<Ltl>),
    Eventually(Box<Ltl>),
    Next(Box<Ltl>),
    Until(Box<Ltl>, Box<Ltl>),
}

impl Ltl {
    pub fn atom(name: impl Into<String>) -> Self {
        Ltl::Atom(name.into())
    }
    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Ltl) -> Self {
        Ltl::Not(Box::new(f))
    }
    pub fn and(a: Ltl, b: Ltl) -> Self {
        Ltl::And(Box::new(a), Box::new(b))
    }
    pub fn or(a: Ltl, b: Ltl) -> Self {
        Ltl::Or(Box::new(a), Box::new(b))
    }
    pub fn implies(a: Ltl, b: Ltl) -> Self {
        Ltl::Implies(Box::new(a), Box::new(b))
    }
    pub fn always(f: Ltl) -> Self {
        Ltl::Always(Box::new(f))
    }
    pub fn eventually(f: Ltl) -> Self {
        Ltl::Eventually(Box::new(f))
    }
    pub fn next(f: Ltl) -> Self {
        Ltl::Next(Box::new(f))
    }
    pub fn until(a: Ltl, b: Ltl) -> Self {
        Ltl::Until(Box::new(a), Box::new(b))
    }

    /// Left-folds a non-empty list into a conjunction.
    pub fn conjunction(items: impl IntoIterator<Item = Ltl>) -> Option<Ltl> {
        items.into_iter().reduce(Ltl::and)
    }

    /// Flattens nested conjunctions, left to right.
    pub fn conjuncts(&self) -> Vec<&Ltl> {
        let mut out = Vec::new();
        fn go<'a>(f: &'a Ltl, out: &mut Vec<&'a Ltl>) {
            match f {
                Ltl::And(a, b) => {
                    go(a, out);
                    go(b, out);
                }
                other => out.push(other),
            }
        }
        go(self, &mut out);
        out
    }

    /// True when the formula has no temporal operator.
    pub fn is_propositional(&self) -> bool {
        match self {
            Ltl::Atom(_) => true,
            Ltl::Not(a) => a.is_propositional(),
            Ltl::And(a, b) | Ltl::Or(a, b) | Ltl::Implies(a, b) => {
                a.is_propositional() && b.is_propositional()
            }
            Ltl::Always(_) | Ltl::Eventually(_) | Ltl::Next(_) | Ltl::Until(..) => false,
        }
    }

    pub fn atoms(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        self.visit_atoms(&mut |a| {
            out.insert(a);
        });
        out
    }

    fn visit_atoms<'a>(&'a self, f: &mut impl FnMut(&'a str)) {
        match self {
            Ltl::Atom(a) => f(a),
            Ltl::Not(a) | Ltl::Always(a) | Ltl::Eventually(a) | Ltl::Next(a) => a.visit_atoms(f),
            Ltl::And(a, b) | Ltl::Or(a, b) | Ltl::Implies(a, b) | Ltl::Until(a, b) => {
                a.visit_atoms(f);
                b.visit_atoms(f);
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Ltl::Atom(_) => 1,
            Ltl::Not(a) | Ltl::Always(a) | Ltl::Eventually(a) | Ltl::Next(a) => 1 + a.depth(),
            Ltl::And(a, b) | Ltl::Or(a, b) | Ltl::Implies(a, b) | Ltl::Until(a, b) => {
                1 + a.depth().max(b.depth())
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Ltl::Implies(..) => 1,
            Ltl::Or(..) => 2,
            Ltl::And(..) => 3,
            Ltl::Until(..) => 4,
            _ => 5,
        }
    }
}

impl fmt::Display for Ltl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn child(f: &mut fmt::Formatter<'_>, c: &Ltl, parens: bool) -> fmt::Result {
            if parens {
                write!(f, "({c})")
            } else {
                write!(f, "{c}")
            }
        }
        fn prefix(f: &mut fmt::Formatter<'_>, op: &str, a: &Ltl) -> fmt::Result {
            f.write_str(op)?;
            if op != "!" {
                f.write_str(" ")?;
            }
            child(f, a, a.precedence() < 5)
        }
        // left-associative ops parenthesize an equal-precedence right child,
        // right-associative ops an equal-precedence left child
        fn binary(f: &mut fmt::Formatter<'_>, me: &Ltl, op: &str, a: &Ltl, b: &Ltl, right_assoc: bool) -> fmt::Result {
            let p = me.precedence();
            let (lp, rp) = if right_assoc {
                (a.precedence() <= p, b.precedence() < p)
            } else {
                (a.precedence() < p, b.precedence() <= p)
            };
            child(f, a, lp)?;
            write!(f, " {op} ")?;
            child(f, b, rp)
        }
        match self {
            Ltl::Atom(a) => f.write_str(a),
            Ltl::Not(a) => prefix(f, "!", a),
            Ltl::Always(a) => prefix(f, "G", a),
            Ltl::Eventually(a) => prefix(f, "F", a),
            Ltl::Next(a) => prefix(f, "X", a),
            Ltl::And(a, b) => binary(f, self, "&&", a, b, false),
            Ltl::Or(a, b) => binary(f, self, "||", a, b, false),
            Ltl::Implies(a, b) => binary(f, self, "->", a, b, true),
            Ltl::Until(a, b) => binary(f, self, "U", a, b, true),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("syntax error at line {line}, column {column}: expected {}, found {found}", expected.join(" | "))]
pub struct SyntaxError {
    pub line: usize,
    pub column: usize,
    pub expected: Vec<String>,
    pub found: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Not,
    And,
    Or,
    Implies,
    Always,
    Eventually,
    Next,
    Until,
    LParen,
    RParen,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("atom `{s}`"),
            Tok::Not => "`!`".into(),
            Tok::And => "`&&`".into(),
            Tok::Or => "`||`".into(),
            Tok::Implies => "`->`".into(),
            Tok::Always => "`G`".into(),
            Tok::Eventually => "`F`".into(),
            Tok::Next => "`X`".into(),
            Tok::Until => "`U`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

fn lex(text: &str) -> Result<Vec<Spanned>, SyntaxError> {
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    let (mut line, mut column) = (1usize, 1usize);
    let err = |line, column, found: String| SyntaxError {
        line,
        column,
        expected: vec!["operator".into(), "atom".into(), "`(`".into(), "`)`".into()],
        found,
    };
    while let Some(&c) = chars.peek() {
        let (l, col) = (line, column);
        let mut bump = |chars: &mut std::iter::Peekable<std::str::Chars>| {
            let c = chars.next();
            if c == Some('\n') {
                line += 1;
                column = 1;
            } else {
                column += 1;
            }
            c
        };
        let tok = match c {
            c if c.is_whitespace() => {
                bump(&mut chars);
                continue;
            }
            'a'..='z' | '_' => {
                let mut s = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' {
                        s.push(c);
                        bump(&mut chars);
                    } else {
                        break;
                    }
                }
                out.push(Spanned {
                    tok: Tok::Ident(s),
                    line: l,
                    column: col,
                });
                continue;
            }
            '!' | '¬' => Tok::Not,
            '∧' => Tok::And,
            '∨' => Tok::Or,
            '→' => Tok::Implies,
            'G' | '□' => Tok::Always,
            'F' | '◇' | '⋄' | '◊' => Tok::Eventually,
            'X' => Tok::Next,
            'U' => Tok::Until,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '&' | '|' | '-' => {
                bump(&mut chars);
                let want = if c == '-' { '>' } else { c };
                if chars.peek() == Some(&want) {
                    bump(&mut chars);
                    out.push(Spanned {
                        tok: match c {
                            '&' => Tok::And,
                            '|' => Tok::Or,
                            _ => Tok::Implies,
                        },
                        line: l,
                        column: col,
                    });
                    continue;
                }
                return Err(err(l, col, format!("`{c}`")));
            }
            other => return Err(err(l, col, format!("`{other}`"))),
        };
        bump(&mut chars);
        out.push(Spanned {
            tok,
            line: l,
            column: col,
        });
    }
    out.push(Spanned {
        tok: Tok::Eof,
        line,
        column,
    });
    Ok(out)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn advance(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &[&str]) -> SyntaxError {
        let s = &self.toks[self.pos];
        SyntaxError {
            line: s.line,
            column: s.column,
            expected: expected.iter().map(|e| e.to_string()).collect(),
            found: s.tok.describe(),
        }
    }

    fn implication(&mut self) -> Result<Ltl, SyntaxError> {
        let lhs = self.disjunction()?;
        if *self.peek() == Tok::Implies {
            self.advance();
            let rhs = self.implication()?;
            return Ok(Ltl::implies(lhs, rhs));
        }
        Ok(lhs)
    }

    fn disjunction(&mut self) -> Result<Ltl, SyntaxError> {
        let mut lhs = self.conjunction()?;
        while *self.peek() == Tok::Or {
            self.advance();
            lhs = Ltl::or(lhs, self.conjunction()?);
        }
        Ok(lhs)
    }

    fn conjunction(&mut self) -> Result<Ltl, SyntaxError> {
        let mut lhs = self.until()?;
        while *self.peek() == Tok::And {
            self.advance();
            lhs = Ltl::and(lhs, self.until()?);
        }
        Ok(lhs)
    }

    fn until(&mut self) -> Result<Ltl, SyntaxError> {
        let lhs = self.unary()?;
        if *self.peek() == Tok::Until {
            self.advance();
            let rhs = self.until()?;
            return Ok(Ltl::until(lhs, rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Ltl, SyntaxError> {
        match self.peek().clone() {
            Tok::Not => {
                self.advance();
                Ok(Ltl::not(self.unary()?))
            }
            Tok::Always => {
                self.advance();
                Ok(Ltl::always(self.unary()?))
            }
            Tok::Eventually => {
                self.advance();
                Ok(Ltl::eventually(self.unary()?))
            }
            Tok::Next => {
                self.advance();
                Ok(Ltl::next(self.unary()?))
            }
            Tok::Ident(name) => {
                self.advance();
                Ok(Ltl::Atom(name))
            }
            Tok::LParen => {
                self.advance();
                let inner = self.implication()?;
                if *self.peek() != Tok::RParen {
                    return Err(self.error(&["`)`", "`&&`", "`||`", "`->`", "`U`"]));
                }
                self.advance();
                Ok(inner)
            }
            _ => Err(self.error(&["atom", "`(`", "`!`", "`G`", "`F`", "`X`"])),
        }
    }
}

/// Parses an LTL formula. Whitespace is insignificant.
pub fn parse_ltl(text: &str) -> Result<Ltl, SyntaxError> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
    };
    let f = p.implication()?;
    if *p.peek() != Tok::Eof {
        return Err(p.error(&["end of input", "`&&`", "`||`", "`->`", "`U`"]));
    }
    Ok(f)
}

impl std::str::FromStr for Ltl {
    type Err = SyntaxError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_ltl(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_eventually() {
        assert_eq!(parse_ltl("F exp").unwrap(), Ltl::eventually(Ltl::atom("exp")));
    }

    #[test]
    fn unicode_aliases() {
        let a = parse_ltl("□◇exp ∧ ¬p").unwrap();
        let b = parse_ltl("G F exp && !p").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unbalanced_paren_reports_end_of_input() {
        let e = parse_ltl("G (fire -> F").unwrap_err();
        assert_eq!(e.found, "end of input");
        assert_eq!((e.line, e.column), (1, 13));
        assert!(e.expected.contains(&"atom".to_string()));
    }

    #[test]
    fn error_position_on_second_line() {
        let e = parse_ltl("a &&\n  )").unwrap_err();
        assert_eq!((e.line, e.column), (2, 3));
    }

    #[test]
    fn rejects_single_ampersand_and_uppercase_atoms() {
        assert!(parse_ltl("a & b").is_err());
        assert!(parse_ltl("Ablaze").is_err());
        // operator letters need no separating whitespace
        assert_eq!(parse_ltl("Fire").unwrap(), Ltl::eventually(Ltl::atom("ire")));
    }

    #[test]
    fn precedence() {
        let f = parse_ltl("a && b || c -> d").unwrap();
        assert_eq!(
            f,
            Ltl::implies(
                Ltl::or(Ltl::and(Ltl::atom("a"), Ltl::atom("b")), Ltl::atom("c")),
                Ltl::atom("d")
            )
        );
        let g = parse_ltl("a -> b -> c").unwrap();
        assert_eq!(
            g,
            Ltl::implies(Ltl::atom("a"), Ltl::implies(Ltl::atom("b"), Ltl::atom("c")))
        );
    }

    #[test]
    fn printer_keeps_associativity() {
        let f = Ltl::and(Ltl::atom("a"), Ltl::and(Ltl::atom("b"), Ltl::atom("c")));
        assert_eq!(f.to_string(), "a && (b && c)");
        assert_eq!(parse_ltl(&f.to_string()).unwrap(), f);
        let g = Ltl::implies(Ltl::implies(Ltl::atom("a"), Ltl::atom("b")), Ltl::atom("c"));
        assert_eq!(g.to_string(), "(a -> b) -> c");
        assert_eq!(Ltl::always(Ltl::eventually(Ltl::atom("x"))).to_string(), "G F x");
        assert_eq!(Ltl::not(Ltl::and(Ltl::atom("x"), Ltl::atom("y"))).to_string(), "!(x && y)");
    }
}
