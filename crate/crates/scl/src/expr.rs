//! Minimal arithmetic expression language for problem coefficients.
//!
//! Grammar: `+  -  *  /  ^` (pow), numeric constants, parentheses, and the
//! variables `t`, `x[i]`, `u[j]` (`x`, `u` abbreviate index 0). Exponents
//! must be constant expressions so that exact symbolic derivatives exist.
//!
//! Parsed expressions are differentiated symbolically; the JSON
//! `custom-expr` problem kind uses this to supply exact first and second
//! derivative oracles.

use std::fmt;

use crate::error::{Result, SclError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    Time,
    State(usize),
    Control(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    /// Power with a constant exponent.
    Pow(Box<Expr>, f64),
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let tokens = tokenize(src)?;
        let mut p = Parser { tokens, pos: 0 };
        let e = p.expression()?;
        if p.pos != p.tokens.len() {
            return Err(SclError::Parse(format!(
                "unexpected trailing input near token {:?}",
                p.tokens[p.pos]
            )));
        }
        Ok(simplify(e))
    }

    pub fn eval(&self, t: f64, x: &[f64], u: &[f64]) -> f64 {
        match self {
            Expr::Num(c) => *c,
            Expr::Var(Var::Time) => t,
            Expr::Var(Var::State(i)) => x[*i],
            Expr::Var(Var::Control(j)) => u[*j],
            Expr::Neg(a) => -a.eval(t, x, u),
            Expr::Add(a, b) => a.eval(t, x, u) + b.eval(t, x, u),
            Expr::Sub(a, b) => a.eval(t, x, u) - b.eval(t, x, u),
            Expr::Mul(a, b) => a.eval(t, x, u) * b.eval(t, x, u),
            Expr::Div(a, b) => a.eval(t, x, u) / b.eval(t, x, u),
            Expr::Pow(a, p) => a.eval(t, x, u).powf(*p),
        }
    }

    /// Exact partial derivative with respect to `var`.
    pub fn derivative(&self, var: Var) -> Expr {
        let d = |e: &Expr| e.derivative(var);
        let e = match self {
            Expr::Num(_) => Expr::Num(0.0),
            Expr::Var(v) => Expr::Num(if *v == var { 1.0 } else { 0.0 }),
            Expr::Neg(a) => Expr::Neg(Box::new(d(a))),
            Expr::Add(a, b) => Expr::Add(Box::new(d(a)), Box::new(d(b))),
            Expr::Sub(a, b) => Expr::Sub(Box::new(d(a)), Box::new(d(b))),
            Expr::Mul(a, b) => Expr::Add(
                Box::new(Expr::Mul(Box::new(d(a)), b.clone())),
                Box::new(Expr::Mul(a.clone(), Box::new(d(b)))),
            ),
            Expr::Div(a, b) => Expr::Sub(
                Box::new(Expr::Div(Box::new(d(a)), b.clone())),
                Box::new(Expr::Div(
                    Box::new(Expr::Mul(a.clone(), Box::new(d(b)))),
                    Box::new(Expr::Mul(b.clone(), b.clone())),
                )),
            ),
            Expr::Pow(a, p) => Expr::Mul(
                Box::new(Expr::Mul(
                    Box::new(Expr::Num(*p)),
                    Box::new(Expr::Pow(a.clone(), p - 1.0)),
                )),
                Box::new(d(a)),
            ),
        };
        simplify(e)
    }

    /// True when the expression references `u` or `t` (used to reject
    /// terminal costs that depend on anything but the state).
    pub fn depends_on_control_or_time(&self) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(Var::Time) | Expr::Var(Var::Control(_)) => true,
            Expr::Var(Var::State(_)) => false,
            Expr::Neg(a) | Expr::Pow(a, _) => a.depends_on_control_or_time(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.depends_on_control_or_time() || b.depends_on_control_or_time()
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(c) => write!(f, "{c}"),
            Expr::Var(Var::Time) => write!(f, "t"),
            Expr::Var(Var::State(i)) => write!(f, "x[{i}]"),
            Expr::Var(Var::Control(j)) => write!(f, "u[{j}]"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, p) => write!(f, "({a} ^ {p})"),
        }
    }
}

fn simplify(e: Expr) -> Expr {
    match e {
        Expr::Neg(a) => match simplify(*a) {
            Expr::Num(c) => Expr::Num(-c),
            a => Expr::Neg(Box::new(a)),
        },
        Expr::Add(a, b) => match (simplify(*a), simplify(*b)) {
            (Expr::Num(x), Expr::Num(y)) => Expr::Num(x + y),
            (Expr::Num(z), b) if z == 0.0 => b,
            (a, Expr::Num(z)) if z == 0.0 => a,
            (a, b) => Expr::Add(Box::new(a), Box::new(b)),
        },
        Expr::Sub(a, b) => match (simplify(*a), simplify(*b)) {
            (Expr::Num(x), Expr::Num(y)) => Expr::Num(x - y),
            (a, Expr::Num(z)) if z == 0.0 => a,
            (Expr::Num(z), b) if z == 0.0 => Expr::Neg(Box::new(b)),
            (a, b) => Expr::Sub(Box::new(a), Box::new(b)),
        },
        Expr::Mul(a, b) => match (simplify(*a), simplify(*b)) {
            (Expr::Num(x), Expr::Num(y)) => Expr::Num(x * y),
            (Expr::Num(z), _) | (_, Expr::Num(z)) if z == 0.0 => Expr::Num(0.0),
            (Expr::Num(o), b) if o == 1.0 => b,
            (a, Expr::Num(o)) if o == 1.0 => a,
            (a, b) => Expr::Mul(Box::new(a), Box::new(b)),
        },
        Expr::Div(a, b) => match (simplify(*a), simplify(*b)) {
            (Expr::Num(x), Expr::Num(y)) => Expr::Num(x / y),
            (Expr::Num(z), _) if z == 0.0 => Expr::Num(0.0),
            (a, Expr::Num(o)) if o == 1.0 => a,
            (a, b) => Expr::Div(Box::new(a), Box::new(b)),
        },
        Expr::Pow(a, p) => match simplify(*a) {
            Expr::Num(x) => Expr::Num(x.powf(p)),
            _ if p == 0.0 => Expr::Num(1.0),
            a if p == 1.0 => a,
            a => Expr::Pow(Box::new(a), p),
        },
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    LBracket,
    RBracket,
    LParen,
    RParen,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
}

fn tokenize(src: &str) -> Result<Vec<Token>> {
    let mut out = Vec::new();
    let bytes: Vec<char> = src.chars().collect();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                out.push(Token::Plus);
                i += 1;
            }
            '-' | '−' => {
                out.push(Token::Minus);
                i += 1;
            }
            '*' | '×' => {
                out.push(Token::Star);
                i += 1;
            }
            '/' | '÷' => {
                out.push(Token::Slash);
                i += 1;
            }
            '^' => {
                out.push(Token::Caret);
                i += 1;
            }
            '(' => {
                out.push(Token::LParen);
                i += 1;
            }
            ')' => {
                out.push(Token::RParen);
                i += 1;
            }
            '[' => {
                out.push(Token::LBracket);
                i += 1;
            }
            ']' => {
                out.push(Token::RBracket);
                i += 1;
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_digit()
                        || bytes[i] == '.'
                        || bytes[i] == 'e'
                        || bytes[i] == 'E'
                        || ((bytes[i] == '+' || bytes[i] == '-')
                            && i > start
                            && (bytes[i - 1] == 'e' || bytes[i - 1] == 'E')))
                {
                    i += 1;
                }
                let text: String = bytes[start..i].iter().collect();
                let v: f64 = text
                    .parse()
                    .map_err(|_| SclError::Parse(format!("bad number literal '{text}'")))?;
                out.push(Token::Num(v));
            }
            c if c.is_ascii_alphabetic() => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == '_') {
                    i += 1;
                }
                out.push(Token::Ident(bytes[start..i].iter().collect()));
            }
            other => {
                return Err(SclError::Parse(format!("unexpected character '{other}'")));
            }
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn bump(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, tok: Token) -> Result<()> {
        match self.bump() {
            Some(t) if t == tok => Ok(()),
            other => Err(SclError::Parse(format!("expected {tok:?}, found {other:?}"))),
        }
    }

    fn expression(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        while let Some(op) = self.peek().cloned() {
            match op {
                Token::Plus => {
                    self.bump();
                    let rhs = self.term()?;
                    lhs = Expr::Add(Box::new(lhs), Box::new(rhs));
                }
                Token::Minus => {
                    self.bump();
                    let rhs = self.term()?;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(rhs));
                }
                _ => break,
            }
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while let Some(op) = self.peek().cloned() {
            match op {
                Token::Star => {
                    self.bump();
                    let rhs = self.unary()?;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(rhs));
                }
                Token::Slash => {
                    self.bump();
                    let rhs = self.unary()?;
                    lhs = Expr::Div(Box::new(lhs), Box::new(rhs));
                }
                _ => break,
            }
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        if matches!(self.peek(), Some(Token::Minus)) {
            self.bump();
            let inner = self.unary()?;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        if matches!(self.peek(), Some(Token::Plus)) {
            self.bump();
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if matches!(self.peek(), Some(Token::Caret)) {
            self.bump();
            // right-associative; the exponent must fold to a constant
            let exp = self.unary()?;
            match simplify(exp) {
                Expr::Num(p) => Ok(Expr::Pow(Box::new(base), p)),
                other => Err(SclError::Parse(format!(
                    "pow exponent must be a constant, found '{other}'"
                ))),
            }
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.bump() {
            Some(Token::Num(v)) => Ok(Expr::Num(v)),
            Some(Token::LParen) => {
                let inner = self.expression()?;
                self.expect(Token::RParen)?;
                Ok(inner)
            }
            Some(Token::Ident(name)) => {
                let indexed = matches!(self.peek(), Some(Token::LBracket));
                let index = if indexed {
                    self.bump();
                    let idx = match self.bump() {
                        Some(Token::Num(v)) if v >= 0.0 && v.fract() == 0.0 => v as usize,
                        other => {
                            return Err(SclError::Parse(format!(
                                "index must be a nonnegative integer, found {other:?}"
                            )))
                        }
                    };
                    self.expect(Token::RBracket)?;
                    Some(idx)
                } else {
                    None
                };
                match (name.as_str(), index) {
                    ("t", None) => Ok(Expr::Var(Var::Time)),
                    ("x", i) => Ok(Expr::Var(Var::State(i.unwrap_or(0)))),
                    ("u", j) => Ok(Expr::Var(Var::Control(j.unwrap_or(0)))),
                    _ => Err(SclError::Parse(format!("unknown identifier '{name}'"))),
                }
            }
            other => Err(SclError::Parse(format!("unexpected token {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_evaluates() {
        let e = Expr::parse("u^2 / 2 - x * (t + 1)").unwrap();
        let v = e.eval(2.0, &[0.5], &[3.0]);
        assert!((v - (4.5 - 0.5 * 3.0)).abs() < 1e-15);
    }

    #[test]
    fn symbolic_derivative_matches_finite_difference() {
        let e = Expr::parse("x[0]^3 * u[0] + u[0]^2 / (1 + x[0]^2)").unwrap();
        let dx = e.derivative(Var::State(0));
        let du = e.derivative(Var::Control(0));
        let (t, x, u) = (0.3, [0.7], [1.1]);
        let h = 1e-6;
        let fd_x = (e.eval(t, &[x[0] + h], &u) - e.eval(t, &[x[0] - h], &u)) / (2.0 * h);
        let fd_u = (e.eval(t, &x, &[u[0] + h]) - e.eval(t, &x, &[u[0] - h])) / (2.0 * h);
        assert!((dx.eval(t, &x, &u) - fd_x).abs() < 1e-8);
        assert!((du.eval(t, &x, &u) - fd_u).abs() < 1e-8);
    }

    #[test]
    fn second_derivatives_commute() {
        let e = Expr::parse("x^2 * u^2 + x * u").unwrap();
        let dxu = e.derivative(Var::State(0)).derivative(Var::Control(0));
        let dux = e.derivative(Var::Control(0)).derivative(Var::State(0));
        let (t, x, u) = (0.0, [1.3], [-0.4]);
        assert!((dxu.eval(t, &x, &u) - dux.eval(t, &x, &u)).abs() < 1e-12);
    }

    #[test]
    fn rejects_nonconstant_exponent_and_unknown_names() {
        assert!(Expr::parse("x ^ u").is_err());
        assert!(Expr::parse("y + 1").is_err());
    }

    #[test]
    fn unary_minus_and_scientific_literals() {
        let e = Expr::parse("-x + 2.5e-1").unwrap();
        assert!((e.eval(0.0, &[1.0], &[0.0]) + 0.75).abs() < 1e-15);
    }
}
