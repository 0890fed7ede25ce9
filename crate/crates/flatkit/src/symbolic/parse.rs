//! Recursive-descent parser for the expression grammar.
//!
//! ```text
//! expr   := term (('+'|'-') term)*
//! term   := factor (('*'|'/') factor)*
//! factor := atom ('^' integer)? | '-' factor
//! atom   := number | ident | func '(' expr ')' | '(' expr ')'
//! func   := 'sin'|'cos'|'tan'|'exp'|'log'|'sqrt'
//! ident  := letter (letter|digit|'_')* ('@' digit+)?
//! ```
//!
//! `ident@k` denotes the k-th forward shift of `ident`. Whitespace is
//! insignificant. Parsing always returns a canonical-form expression, so
//! parse-print-parse is a fixed point.

use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;

use super::expr::{mk_add, mk_apply, mk_div, mk_mul, mk_neg, mk_pow, Expr, Func, Symbol};
use super::VarTable;

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum ParseError {
    Syntax { offset: usize, message: String },
    UnknownSymbol { offset: usize, name: String },
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseError::Syntax { offset, message } => {
                write!(f, "syntax error at byte {offset}: {message}")
            }
            ParseError::UnknownSymbol { offset, name } => {
                write!(f, "unknown symbol `{name}` at byte {offset}")
            }
        }
    }
}

impl std::error::Error for ParseError {}

/// Parses with identifier validation against a symbol table.
pub fn parse(text: &str, vars: &VarTable) -> Result<Expr, ParseError> {
    Parser { bytes: text.as_bytes(), pos: 0, vars: Some(vars) }.run()
}

/// Parses accepting any identifier; used where no table applies.
pub fn parse_any(text: &str) -> Result<Expr, ParseError> {
    Parser { bytes: text.as_bytes(), pos: 0, vars: None }.run()
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
    vars: Option<&'a VarTable>,
}

impl<'a> Parser<'a> {
    fn run(mut self) -> Result<Expr, ParseError> {
        let e = self.expr()?;
        self.skip_ws();
        if self.pos < self.bytes.len() {
            return Err(self.syntax("unexpected trailing input"));
        }
        Ok(e)
    }

    fn syntax(&self, message: &str) -> ParseError {
        ParseError::Syntax { offset: self.pos, message: message.to_string() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn eat(&mut self, b: u8) -> bool {
        if self.peek() == Some(b) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, b: u8) -> Result<(), ParseError> {
        if self.eat(b) {
            Ok(())
        } else {
            Err(self.syntax(&format!("expected `{}`", b as char)))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.term()?;
        loop {
            if self.eat(b'+') {
                let rhs = self.term()?;
                acc = mk_add(vec![acc, rhs]);
            } else if self.eat(b'-') {
                let rhs = self.term()?;
                acc = mk_add(vec![acc, mk_neg(rhs)]);
            } else {
                return Ok(acc);
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.factor()?;
        loop {
            if self.eat(b'*') {
                let rhs = self.factor()?;
                acc = mk_mul(vec![acc, rhs]);
            } else if self.eat(b'/') {
                let rhs = self.factor()?;
                acc = mk_div(acc, rhs);
            } else {
                return Ok(acc);
            }
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        if self.eat(b'-') {
            let inner = self.factor()?;
            return Ok(mk_neg(inner));
        }
        let atom = self.atom()?;
        if self.eat(b'^') {
            let exp = self.exponent()?;
            return Ok(mk_pow(atom, exp));
        }
        Ok(atom)
    }

    fn exponent(&mut self) -> Result<i32, ParseError> {
        let neg = self.eat(b'-');
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.syntax("expected integer exponent"));
        }
        let digits = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        let value: i32 = digits
            .parse()
            .map_err(|_| ParseError::Syntax { offset: start, message: "exponent out of range".to_string() })?;
        Ok(if neg { -value } else { value })
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                self.expect(b')')?;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            Some(c) => Err(self.syntax(&format!("unexpected character `{}`", c as char))),
            None => Err(self.syntax("unexpected end of input")),
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        let digits = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        let n: BigInt = digits.parse().unwrap();
        Ok(Expr::Num(BigRational::from_integer(n)))
    }

    fn ident(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while self.pos < self.bytes.len()
            && (self.bytes[self.pos].is_ascii_alphanumeric() || self.bytes[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap().to_string();
        if let Some(func) = Func::from_name(&name) {
            self.expect(b'(')?;
            let arg = self.expr()?;
            self.expect(b')')?;
            return Ok(mk_apply(func, arg));
        }
        let mut shift = 0u32;
        if self.pos < self.bytes.len() && self.bytes[self.pos] == b'@' {
            self.pos += 1;
            let dstart = self.pos;
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if dstart == self.pos {
                return Err(self.syntax("expected shift index after `@`"));
            }
            let digits = std::str::from_utf8(&self.bytes[dstart..self.pos]).unwrap();
            shift = digits.parse().map_err(|_| ParseError::Syntax {
                offset: dstart,
                message: "shift index out of range".to_string(),
            })?;
        }
        if let Some(table) = self.vars {
            if !table.contains(&name) {
                return Err(ParseError::UnknownSymbol { offset: start, name });
            }
        }
        Ok(Expr::Var(Symbol::with_shift(&name, shift)))
    }
}

#[cfg(test)]
mod tests {
    use super::super::expr::{mk_add, mk_apply, mk_div, mk_mul, mk_pow, Expr, Func};
    use super::super::{Role, VarTable};
    use super::*;

    fn table() -> VarTable {
        let mut t = VarTable::new();
        for n in ["x1", "x2", "x3", "x4"] {
            t.add(n, Role::State);
        }
        for n in ["u1", "u2"] {
            t.add(n, Role::Input);
        }
        t
    }

    #[test]
    fn product_of_var_and_sum() {
        let t = table();
        let e = parse("x1*(x3+1)", &t).unwrap();
        let want = mk_mul(vec![
            Expr::symbol("x1"),
            mk_add(vec![Expr::symbol("x3"), Expr::one()]),
        ]);
        assert_eq!(e, want);
    }

    #[test]
    fn quotient_of_sums() {
        let t = table();
        let e = parse("(x2+x3+3*x4)/(u1+2*u2+1)", &t).unwrap();
        let num = mk_add(vec![
            Expr::symbol("x2"),
            Expr::symbol("x3"),
            mk_mul(vec![Expr::int(3), Expr::symbol("x4")]),
        ]);
        let den = mk_add(vec![
            Expr::symbol("u1"),
            mk_mul(vec![Expr::int(2), Expr::symbol("u2")]),
            Expr::one(),
        ]);
        assert_eq!(e, mk_div(num, den));
    }

    #[test]
    fn function_application() {
        let t = table();
        let e = parse("sin(x3)*u1", &t).unwrap();
        let want = mk_mul(vec![
            mk_apply(Func::Sin, Expr::symbol("x3")),
            Expr::symbol("u1"),
        ]);
        assert_eq!(e, want);
    }

    #[test]
    fn unknown_symbol_reported_with_name() {
        let t = table();
        match parse("x1+q7", &t) {
            Err(ParseError::UnknownSymbol { name, offset }) => {
                assert_eq!(name, "q7");
                assert_eq!(offset, 3);
            }
            other => panic!("expected unknown symbol, got {other:?}"),
        }
    }

    #[test]
    fn syntax_error_carries_offset() {
        let t = table();
        match parse("x1+*x2", &t) {
            Err(ParseError::Syntax { offset, .. }) => assert_eq!(offset, 3),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn shifted_identifier() {
        let e = parse_any("u1@2+u1").unwrap();
        let want = mk_add(vec![
            Expr::Var(crate::symbolic::Symbol::with_shift("u1", 2)),
            Expr::symbol("u1"),
        ]);
        assert_eq!(e, want);
    }

    #[test]
    fn rational_literals_and_powers() {
        assert_eq!(parse_any("3/4").unwrap(), Expr::rat(3, 4));
        assert_eq!(parse_any("x1^2").unwrap(), mk_pow(Expr::symbol("x1"), 2));
        assert_eq!(
            parse_any("1/x1^2").unwrap(),
            mk_div(Expr::one(), mk_pow(Expr::symbol("x1"), 2))
        );
    }

    #[test]
    fn unary_minus_binds_at_factor_level() {
        assert_eq!(parse_any("-x1*x2").unwrap(), parse_any("-(x1*x2)").unwrap());
        assert_eq!(parse_any("-x1^2").unwrap(), parse_any("-(x1^2)").unwrap());
        assert_eq!(parse_any("2-x1").unwrap(), mk_sub_check());
    }

    fn mk_sub_check() -> Expr {
        mk_add(vec![Expr::int(2), super::super::expr::mk_neg(Expr::symbol("x1"))])
    }

    #[test]
    fn whitespace_is_insignificant() {
        let t = table();
        assert_eq!(parse(" x1 * ( x3 + 1 ) ", &t).unwrap(), parse("x1*(x3+1)", &t).unwrap());
    }

    #[test]
    fn print_parse_fixed_point() {
        let t = table();
        for src in [
            "x1*(x3+1)",
            "(x2+x3+3*x4)/(u1+2*u2+1)",
            "sin(x3)*u1",
            "x1*(x3+1)*(u1+2*u2-3)",
            "-x1/(x3+1)^2",
            "1/2*x1-3/4",
            "x2+x3+3*x4",
        ] {
            let e = parse(src, &t).unwrap();
            let printed = e.to_string();
            let reparsed = parse(&printed, &t).unwrap();
            assert_eq!(e, reparsed, "round trip failed for `{src}` printed as `{printed}`");
        }
    }

    #[test]
    fn function_names_are_reserved() {
        let mut t = VarTable::new();
        assert!(!t.add("sin", Role::State));
        assert!(t.add("x1", Role::State));
        assert!(!t.add("x1", Role::Input));
        match parse("sin+1", &t) {
            Err(ParseError::Syntax { .. }) => {}
            other => panic!("expected syntax error, got {other:?}"),
        }
    }
}
