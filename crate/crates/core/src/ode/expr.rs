//! Small closed expression language for right-hand sides, analytic
//! solutions and conserved quantities.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?
//! primary := number | 'x' | 'pi' | 'y' index | func '(' expr ')' | '(' expr ')'
//! func    := sin | cos | exp | tanh
//! ```
//!
//! State components are 1-based (`y1`, `y2`, ...). Exponents must not depend
//! on `x` or the state.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::autodiff::{Node, Tape};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Tanh,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Tanh => "tanh",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    X,
    /// 0-based state component.
    Y(usize),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    /// Base and a constant exponent.
    Pow(Box<Expr>, f64),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let mut p = Parser {
            src: src.as_bytes(),
            pos: 0,
        };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos < p.src.len() {
            return Err(p.err("unexpected trailing input"));
        }
        Ok(e)
    }

    /// Largest state index referenced plus one (0 if none).
    pub fn state_arity(&self) -> usize {
        match self {
            Expr::Num(_) | Expr::X => 0,
            Expr::Y(i) => i + 1,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.state_arity(),
            Expr::Bin(_, a, b) => a.state_arity().max(b.state_arity()),
        }
    }

    pub fn uses_x(&self) -> bool {
        match self {
            Expr::X => true,
            Expr::Num(_) | Expr::Y(_) => false,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.uses_x(),
            Expr::Bin(_, a, b) => a.uses_x() || b.uses_x(),
        }
    }

    pub fn eval(&self, x: f64, y: &[f64]) -> f64 {
        match self {
            Expr::Num(c) => *c,
            Expr::X => x,
            Expr::Y(i) => y[*i],
            Expr::Neg(a) => -a.eval(x, y),
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(x, y), b.eval(x, y));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                }
            }
            Expr::Pow(a, c) => pow(a.eval(x, y), *c),
            Expr::Call(f, a) => {
                let v = a.eval(x, y);
                match f {
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Exp => v.exp(),
                    Func::Tanh => v.tanh(),
                }
            }
        }
    }

    /// Records the expression on `tape` with `x` and the state as nodes.
    pub fn record(&self, tape: &mut Tape, x: Node, y: &[Node]) -> Node {
        match self {
            Expr::Num(c) => tape.constant(*c),
            Expr::X => x,
            Expr::Y(i) => y[*i],
            Expr::Neg(a) => {
                let a = a.record(tape, x, y);
                tape.neg(a)
            }
            Expr::Bin(op, a, b) => {
                let a = a.record(tape, x, y);
                let b = b.record(tape, x, y);
                match op {
                    BinOp::Add => tape.add(a, b),
                    BinOp::Sub => tape.sub(a, b),
                    BinOp::Mul => tape.mul(a, b),
                    BinOp::Div => tape.div(a, b),
                }
            }
            Expr::Pow(a, c) => {
                let a = a.record(tape, x, y);
                if *c == 2.0 {
                    tape.square(a)
                } else {
                    tape.powf(a, *c)
                }
            }
            Expr::Call(f, a) => {
                let a = a.record(tape, x, y);
                match f {
                    Func::Sin => tape.sin(a),
                    Func::Cos => tape.cos(a),
                    Func::Exp => tape.exp(a),
                    Func::Tanh => tape.tanh(a),
                }
            }
        }
    }

    fn prec(&self) -> u8 {
        match self {
            Expr::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
            Expr::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
            Expr::Neg(_) => 3,
            Expr::Pow(..) => 4,
            _ => 5,
        }
    }
}

fn pow(a: f64, c: f64) -> f64 {
    if c == 2.0 {
        a * a
    } else {
        a.powf(c)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let wrap = |f: &mut fmt::Formatter<'_>, e: &Expr, min: u8| {
            if e.prec() < min {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        };
        match self {
            Expr::Num(c) => {
                if *c < 0.0 {
                    write!(f, "({c:?})")
                } else {
                    write!(f, "{c:?}")
                }
            }
            Expr::X => write!(f, "x"),
            Expr::Y(i) => write!(f, "y{}", i + 1),
            Expr::Neg(a) => {
                write!(f, "-")?;
                wrap(f, a, 4)
            }
            Expr::Bin(op, a, b) => {
                let (sym, p) = match op {
                    BinOp::Add => ("+", 1),
                    BinOp::Sub => ("-", 1),
                    BinOp::Mul => ("*", 2),
                    BinOp::Div => ("/", 2),
                };
                wrap(f, a, p)?;
                write!(f, " {sym} ")?;
                wrap(f, b, p + 1)
            }
            Expr::Pow(a, c) => {
                wrap(f, a, 5)?;
                if *c < 0.0 {
                    write!(f, "^({c:?})")
                } else {
                    write!(f, "^{c:?}")
                }
            }
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

impl Serialize for Expr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Expr::parse(&s).map_err(serde::de::Error::custom)
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, message: &str) -> Error {
        Error::Expr {
            column: self.pos + 1,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => BinOp::Add,
                Some(b'-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => BinOp::Mul,
                Some(b'/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat(b'-') {
            let inner = self.unary()?;
            return Ok(match inner {
                Expr::Num(c) => Expr::Num(-c),
                e => Expr::Neg(Box::new(e)),
            });
        }
        if self.eat(b'+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.primary()?;
        if self.eat(b'^') {
            let at = self.pos;
            let exp = self.unary()?;
            if exp.uses_x() || exp.state_arity() > 0 {
                return Err(Error::Expr {
                    column: at + 1,
                    message: "exponent must be a constant".into(),
                });
            }
            return Ok(Expr::Pow(Box::new(base), exp.eval(0.0, &[])));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr> {
        match self.peek() {
            None => Err(self.err("unexpected end of expression")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.err("expected `)`"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            Some(c) => Err(self.err(&format!("unexpected character `{}`", c as char))),
        }
    }

    fn number(&mut self) -> Result<Expr> {
        let start = self.pos;
        let s = self.src;
        let mut i = self.pos;
        while i < s.len() && (s[i].is_ascii_digit() || s[i] == b'.') {
            i += 1;
        }
        if i < s.len() && (s[i] == b'e' || s[i] == b'E') {
            let mut j = i + 1;
            if j < s.len() && (s[j] == b'+' || s[j] == b'-') {
                j += 1;
            }
            if j < s.len() && s[j].is_ascii_digit() {
                while j < s.len() && s[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
            }
        }
        let text = std::str::from_utf8(&s[start..i]).unwrap();
        let v: f64 = text.parse().map_err(|_| self.err(&format!("bad number `{text}`")))?;
        self.pos = i;
        Ok(Expr::Num(v))
    }

    fn ident(&mut self) -> Result<Expr> {
        let start = self.pos;
        let s = self.src;
        let mut i = self.pos;
        while i < s.len() && s[i].is_ascii_alphanumeric() {
            i += 1;
        }
        let word = std::str::from_utf8(&s[start..i]).unwrap();
        self.pos = i;
        let func = match word {
            "x" => return Ok(Expr::X),
            "pi" => return Ok(Expr::Num(std::f64::consts::PI)),
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "tanh" => Func::Tanh,
            w if w.starts_with('y') && w.len() > 1 && w[1..].bytes().all(|b| b.is_ascii_digit()) => {
                let k: usize = w[1..].parse().unwrap();
                if k == 0 {
                    self.pos = start;
                    return Err(self.err("state components are numbered from y1"));
                }
                return Ok(Expr::Y(k - 1));
            }
            w => {
                self.pos = start;
                return Err(self.err(&format!("unknown identifier `{w}`")));
            }
        };
        if !self.eat(b'(') {
            return Err(self.err(&format!("expected `(` after `{word}`")));
        }
        let arg = self.expr()?;
        if !self.eat(b')') {
            return Err(self.err("expected `)`"));
        }
        Ok(Expr::Call(func, Box::new(arg)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(s: &str, x: f64, y: &[f64]) -> f64 {
        Expr::parse(s).unwrap().eval(x, y)
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("1 + 2 * 3", 0.0, &[]), 7.0);
        assert_eq!(ev("(1 + 2) * 3", 0.0, &[]), 9.0);
        assert_eq!(ev("8 / 4 / 2", 0.0, &[]), 1.0);
        assert_eq!(ev("10 - 4 - 3", 0.0, &[]), 3.0);
        assert_eq!(ev("-2^2", 0.0, &[]), -4.0);
        assert_eq!(ev("2^-1", 0.0, &[]), 0.5);
        assert_eq!(ev("1.5e2 + 2E-1", 0.0, &[]), 150.2);
    }

    #[test]
    fn state_and_functions() {
        let y = [2.0, 3.0];
        assert_eq!(ev("y1 * y2", 0.0, &y), 6.0);
        assert_eq!(ev("-y2 - (2 + sin(x)) * y1", 0.0, &y), -7.0);
        assert!((ev("cos(pi)", 0.0, &[]) + 1.0).abs() < 1e-15);
        assert_eq!(ev("exp(0) + tanh(0)", 0.0, &[]), 1.0);
        assert_eq!(Expr::parse("y2 * y3").unwrap().state_arity(), 3);
    }

    #[test]
    fn errors_carry_column() {
        match Expr::parse("y1 + foo(2)") {
            Err(Error::Expr { column, .. }) => assert_eq!(column, 6),
            other => panic!("{other:?}"),
        }
        assert!(Expr::parse("y0").is_err());
        assert!(Expr::parse("(1 + 2").is_err());
        assert!(Expr::parse("1 +").is_err());
        assert!(Expr::parse("2 ^ x").is_err());
        assert!(Expr::parse("1 2").is_err());
        assert!(Expr::parse("sin 2").is_err());
    }

    #[test]
    fn record_matches_eval() {
        let e = Expr::parse("0.003 * y1 * y2 - 0.1 * y2 / (1 + x^2) + exp(-y1) * cos(2*x)").unwrap();
        let mut tape = Tape::new();
        let x = tape.input(0.7);
        let y1 = tape.constant(1.3);
        let y2 = tape.constant(-0.4);
        let out = e.record(&mut tape, x, &[y1, y2]);
        assert_eq!(tape.value(out), e.eval(0.7, &[1.3, -0.4]));
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (0.0f64..10.0).prop_map(Expr::Num),
            Just(Expr::X),
            (0usize..3).prop_map(Expr::Y),
        ];
        leaf.prop_recursive(4, 24, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|a| Expr::Neg(Box::new(a))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Bin(BinOp::Add, Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Bin(BinOp::Sub, Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Bin(BinOp::Mul, Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Bin(BinOp::Div, Box::new(a), Box::new(b))),
                (inner.clone(), 1u8..4).prop_map(|(a, k)| Expr::Pow(Box::new(a), k as f64)),
                inner.clone().prop_map(|a| Expr::Call(Func::Sin, Box::new(a))),
                inner.prop_map(|a| Expr::Call(Func::Cos, Box::new(a))),
            ]
        })
    }

    proptest! {
        #[test]
        fn display_parses_back(e in arb_expr(), x in -2.0f64..2.0, y in proptest::collection::vec(-2.0f64..2.0, 3)) {
            let text = e.to_string();
            let back = Expr::parse(&text).unwrap();
            let (a, b) = (e.eval(x, &y), back.eval(x, &y));
            prop_assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()), "{} -> {} vs {}", text, a, b);
        }
    }
}
