//! Minimal requirement-expression language: literals, scoped attribute
//! references, comparisons and three-valued boolean logic.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("unexpected character {found:?} at offset {offset}")]
    UnexpectedChar { offset: usize, found: char },
    #[error("unexpected end of expression")]
    UnexpectedEnd,
    #[error("unexpected token {found} at offset {offset}")]
    UnexpectedToken { offset: usize, found: String },
    #[error("unterminated string literal")]
    UnterminatedString,
    #[error("bad number {0:?}")]
    BadNumber(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scope {
    My,
    Target,
    /// Unscoped: looked up in MY first, then TARGET.
    Any,
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
    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Int(i64),
    Real(f64),
    Bool(bool),
    Str(String),
    Ref(Scope, String),
    Cmp(CmpOp, Box<Expr>, Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Not(Box<Expr>),
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr, ParseError> {
        let tokens = lex(src)?;
        let mut p = Parser { tokens, pos: 0 };
        let e = p.or()?;
        match p.tokens.get(p.pos) {
            None => Ok(e),
            Some((off, t)) => Err(ParseError::UnexpectedToken {
                offset: *off,
                found: t.to_string(),
            }),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Int(i) => write!(f, "{i}"),
            Expr::Real(r) => {
                if r.fract() == 0.0 && r.is_finite() {
                    write!(f, "{r:.1}")
                } else {
                    write!(f, "{r}")
                }
            }
            Expr::Bool(true) => f.write_str("TRUE"),
            Expr::Bool(false) => f.write_str("FALSE"),
            Expr::Str(s) => {
                f.write_str("\"")?;
                for c in s.chars() {
                    if c == '"' || c == '\\' {
                        f.write_str("\\")?;
                    }
                    write!(f, "{c}")?;
                }
                f.write_str("\"")
            }
            Expr::Ref(Scope::My, n) => write!(f, "MY.{n}"),
            Expr::Ref(Scope::Target, n) => write!(f, "TARGET.{n}"),
            Expr::Ref(Scope::Any, n) => f.write_str(n),
            Expr::Cmp(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Expr::And(a, b) => write!(f, "({a} && {b})"),
            Expr::Or(a, b) => write!(f, "({a} || {b})"),
            Expr::Not(a) => write!(f, "!{a}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Int(i64),
    Real(f64),
    Bool(bool),
    Str(String),
    Ident(String),
    Dot,
    LParen,
    RParen,
    AndAnd,
    OrOr,
    Bang,
    Op(CmpOp),
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Int(i) => write!(f, "{i}"),
            Tok::Real(r) => write!(f, "{r}"),
            Tok::Bool(b) => write!(f, "{b}"),
            Tok::Str(s) => write!(f, "{s:?}"),
            Tok::Ident(s) => f.write_str(s),
            Tok::Dot => f.write_str("."),
            Tok::LParen => f.write_str("("),
            Tok::RParen => f.write_str(")"),
            Tok::AndAnd => f.write_str("&&"),
            Tok::OrOr => f.write_str("||"),
            Tok::Bang => f.write_str("!"),
            Tok::Op(op) => f.write_str(op.symbol()),
        }
    }
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let chars: Vec<(usize, char)> = src.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let peek = |i: usize| chars.get(i).map(|&(_, c)| c);
    while i < chars.len() {
        let (off, c) = chars[i];
        match c {
            c if c.is_whitespace() => i += 1,
            '(' => {
                out.push((off, Tok::LParen));
                i += 1;
            }
            ')' => {
                out.push((off, Tok::RParen));
                i += 1;
            }
            '.' => {
                out.push((off, Tok::Dot));
                i += 1;
            }
            '&' if peek(i + 1) == Some('&') => {
                out.push((off, Tok::AndAnd));
                i += 2;
            }
            '|' if peek(i + 1) == Some('|') => {
                out.push((off, Tok::OrOr));
                i += 2;
            }
            '=' if peek(i + 1) == Some('=') => {
                out.push((off, Tok::Op(CmpOp::Eq)));
                i += 2;
            }
            '!' if peek(i + 1) == Some('=') => {
                out.push((off, Tok::Op(CmpOp::Ne)));
                i += 2;
            }
            '!' => {
                out.push((off, Tok::Bang));
                i += 1;
            }
            '<' | '>' => {
                let with_eq = peek(i + 1) == Some('=');
                let op = match (c, with_eq) {
                    ('<', false) => CmpOp::Lt,
                    ('<', true) => CmpOp::Le,
                    ('>', false) => CmpOp::Gt,
                    _ => CmpOp::Ge,
                };
                out.push((off, Tok::Op(op)));
                i += if with_eq { 2 } else { 1 };
            }
            '"' => {
                let mut s = String::new();
                i += 1;
                loop {
                    match peek(i) {
                        None => return Err(ParseError::UnterminatedString),
                        Some('"') => {
                            i += 1;
                            break;
                        }
                        Some('\\') => {
                            let Some(esc) = peek(i + 1) else {
                                return Err(ParseError::UnterminatedString);
                            };
                            s.push(esc);
                            i += 2;
                        }
                        Some(other) => {
                            s.push(other);
                            i += 1;
                        }
                    }
                }
                out.push((off, Tok::Str(s)));
            }
            c if c.is_ascii_digit() || (c == '-' && peek(i + 1).is_some_and(|d| d.is_ascii_digit())) => {
                let start = i;
                i += 1;
                while peek(i).is_some_and(|d| d.is_ascii_digit()) {
                    i += 1;
                }
                let mut real = false;
                if peek(i) == Some('.') && peek(i + 1).is_some_and(|d| d.is_ascii_digit()) {
                    real = true;
                    i += 1;
                    while peek(i).is_some_and(|d| d.is_ascii_digit()) {
                        i += 1;
                    }
                }
                let text: String = chars[start..i].iter().map(|&(_, c)| c).collect();
                let tok = if real {
                    Tok::Real(text.parse().map_err(|_| ParseError::BadNumber(text.clone()))?)
                } else {
                    Tok::Int(text.parse().map_err(|_| ParseError::BadNumber(text.clone()))?)
                };
                out.push((off, tok));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while peek(i).is_some_and(|d| d.is_ascii_alphanumeric() || d == '_') {
                    i += 1;
                }
                let word: String = chars[start..i].iter().map(|&(_, c)| c).collect();
                let tok = if word.eq_ignore_ascii_case("true") {
                    Tok::Bool(true)
                } else if word.eq_ignore_ascii_case("false") {
                    Tok::Bool(false)
                } else {
                    Tok::Ident(word)
                };
                out.push((off, tok));
            }
            other => {
                return Err(ParseError::UnexpectedChar {
                    offset: off,
                    found: other,
                })
            }
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(usize, Tok)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn next(&mut self) -> Result<(usize, Tok), ParseError> {
        let t = self
            .tokens
            .get(self.pos)
            .cloned()
            .ok_or(ParseError::UnexpectedEnd)?;
        self.pos += 1;
        Ok(t)
    }

    fn or(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.and()?;
        while self.peek() == Some(&Tok::OrOr) {
            self.pos += 1;
            let rhs = self.and()?;
            lhs = Expr::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.not()?;
        while self.peek() == Some(&Tok::AndAnd) {
            self.pos += 1;
            let rhs = self.not()?;
            lhs = Expr::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn not(&mut self) -> Result<Expr, ParseError> {
        if self.peek() == Some(&Tok::Bang) {
            self.pos += 1;
            return Ok(Expr::Not(Box::new(self.not()?)));
        }
        self.cmp()
    }

    fn cmp(&mut self) -> Result<Expr, ParseError> {
        let lhs = self.term()?;
        if let Some(Tok::Op(op)) = self.peek() {
            let op = *op;
            self.pos += 1;
            let rhs = self.term()?;
            return Ok(Expr::Cmp(op, Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let (off, tok) = self.next()?;
        match tok {
            Tok::Int(i) => Ok(Expr::Int(i)),
            Tok::Real(r) => Ok(Expr::Real(r)),
            Tok::Bool(b) => Ok(Expr::Bool(b)),
            Tok::Str(s) => Ok(Expr::Str(s)),
            Tok::LParen => {
                let e = self.or()?;
                match self.next()? {
                    (_, Tok::RParen) => Ok(e),
                    (off, t) => Err(ParseError::UnexpectedToken {
                        offset: off,
                        found: t.to_string(),
                    }),
                }
            }
            Tok::Ident(word) => {
                let scope = if word.eq_ignore_ascii_case("MY") {
                    Some(Scope::My)
                } else if word.eq_ignore_ascii_case("TARGET") {
                    Some(Scope::Target)
                } else {
                    None
                };
                match scope {
                    Some(scope) if self.peek() == Some(&Tok::Dot) => {
                        self.pos += 1;
                        match self.next()? {
                            (_, Tok::Ident(name)) => Ok(Expr::Ref(scope, name)),
                            (off, t) => Err(ParseError::UnexpectedToken {
                                offset: off,
                                found: t.to_string(),
                            }),
                        }
                    }
                    _ => Ok(Expr::Ref(Scope::Any, word)),
                }
            }
            other => Err(ParseError::UnexpectedToken {
                offset: off,
                found: other.to_string(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_grammar_forms() {
        let e = Expr::parse("TARGET.Memory >= 512 && MY.Owner == \"gtuser\"").unwrap();
        assert!(matches!(e, Expr::And(_, _)));
        let e = Expr::parse("!(Arch == \"INTEL\") || FALSE").unwrap();
        assert!(matches!(e, Expr::Or(_, _)));
        assert_eq!(Expr::parse("-3").unwrap(), Expr::Int(-3));
        assert_eq!(Expr::parse("2.5").unwrap(), Expr::Real(2.5));
        assert_eq!(Expr::parse("true").unwrap(), Expr::Bool(true));
    }

    #[test]
    fn rejects_malformed() {
        assert_eq!(Expr::parse(""), Err(ParseError::UnexpectedEnd));
        assert!(Expr::parse("a ==").is_err());
        assert!(Expr::parse("(a").is_err());
        assert!(Expr::parse("a b").is_err());
        assert!(Expr::parse("\"open").is_err());
        assert!(Expr::parse("a = 1").is_err());
        assert!(Expr::parse("MY.").is_err());
    }

    #[test]
    fn display_reparses_to_same_tree() {
        for src in [
            "TARGET.Memory >= 512",
            "!(a < 1) && (b != \"x\\\"y\") || MY.c",
            "1.0 == 1",
        ] {
            let e = Expr::parse(src).unwrap();
            assert_eq!(Expr::parse(&e.to_string()).unwrap(), e, "{src}");
        }
    }
}
