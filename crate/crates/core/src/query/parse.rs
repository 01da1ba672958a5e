//! DSL parser for aggregate batches. One query per line:
//!
//! ```text
//! # marginal count per family
//! Q1(; f(units)*g(price))
//! Q2(family; g(price))
//! Q3(a; 1, a^2 + 2.5*[b <= 5])
//! ```
//!
//! Group-by attributes come before the `;`, then a comma-separated list of
//! aggregate expressions built from `*`, `+`, function calls, powers,
//! numeric literals, and selection deltas `[x <= 5]` / `[c = red]`.

use super::{AggregateExpr, AggregateQuery, CmpOp, FunctionRegistry, Param, QueryError, UdafFactor};
use crate::catalog::Catalog;
use crate::{Literal, Scalar};

struct Cursor<'a> {
    text: &'a str,
    line: usize,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, msg: impl Into<String>) -> QueryError {
        QueryError::Syntax {
            line: self.line,
            col: self.pos + 1,
            msg: msg.into(),
        }
    }

    fn rest(&self) -> &'a str {
        &self.text[self.pos..]
    }

    fn skip_ws(&mut self) {
        while self.rest().starts_with([' ', '\t']) {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.rest().chars().next()
    }

    fn eat(&mut self, expected: char) -> Result<(), QueryError> {
        match self.peek() {
            Some(c) if c == expected => {
                self.pos += c.len_utf8();
                Ok(())
            }
            Some(c) => Err(self.err(format!("expected `{expected}`, found `{c}`"))),
            None => Err(self.err(format!("expected `{expected}`, found end of line"))),
        }
    }

    fn try_eat(&mut self, expected: char) -> bool {
        if self.peek() == Some(expected) {
            self.pos += expected.len_utf8();
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> Result<&'a str, QueryError> {
        self.skip_ws();
        let start = self.pos;
        let bytes = self.rest().as_bytes();
        let mut n = 0;
        while n < bytes.len()
            && (bytes[n].is_ascii_alphanumeric() || bytes[n] == b'_' || bytes[n] == b'.')
        {
            n += 1;
        }
        if n == 0 || bytes[0].is_ascii_digit() {
            return Err(self.err("expected identifier"));
        }
        self.pos += n;
        Ok(&self.text[start..start + n])
    }

    fn number(&mut self) -> Result<f64, QueryError> {
        self.skip_ws();
        let bytes = self.rest().as_bytes();
        let mut n = 0;
        if n < bytes.len() && (bytes[n] == b'-' || bytes[n] == b'+') {
            n += 1;
        }
        while n < bytes.len() && (bytes[n].is_ascii_digit() || bytes[n] == b'.') {
            n += 1;
        }
        if n < bytes.len() && (bytes[n] == b'e' || bytes[n] == b'E') {
            n += 1;
            if n < bytes.len() && (bytes[n] == b'-' || bytes[n] == b'+') {
                n += 1;
            }
            while n < bytes.len() && bytes[n].is_ascii_digit() {
                n += 1;
            }
        }
        let s = &self.rest()[..n];
        let v = s.parse::<f64>().map_err(|_| self.err("expected number"))?;
        self.pos += n;
        Ok(v)
    }
}

/// Expression tree before normalization into sum-of-products.
enum Expr<S> {
    Factor(UdafFactor<S>),
    Mul(Box<Expr<S>>, Box<Expr<S>>),
    Add(Box<Expr<S>>, Box<Expr<S>>),
}

impl<S: Scalar> Expr<S> {
    /// Distributes products over sums.
    fn normalize(self) -> AggregateExpr<S> {
        match self {
            Expr::Factor(f) => AggregateExpr {
                terms: vec![vec![f]],
            },
            Expr::Add(a, b) => {
                let mut left = a.normalize();
                left.terms.extend(b.normalize().terms);
                left
            }
            Expr::Mul(a, b) => {
                let left = a.normalize();
                let right = b.normalize();
                let mut terms = Vec::new();
                for lt in &left.terms {
                    for rt in &right.terms {
                        let mut t = lt.clone();
                        t.extend(rt.iter().cloned());
                        terms.push(t);
                    }
                }
                AggregateExpr { terms }
            }
        }
    }
}

/// Parses a query batch against the catalog and function registry.
pub fn parse_batch<S: Scalar>(
    text: &str,
    catalog: &Catalog,
    registry: &FunctionRegistry<S>,
) -> Result<Vec<AggregateQuery<S>>, QueryError> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("");
        if line.trim().is_empty() {
            continue;
        }
        let mut cur = Cursor {
            text: line,
            line: lineno + 1,
            pos: 0,
        };
        out.push(parse_query(&mut cur, catalog, registry)?);
        cur.skip_ws();
        if !cur.rest().is_empty() {
            return Err(cur.err("trailing input after query"));
        }
    }
    Ok(out)
}

fn parse_query<S: Scalar>(
    cur: &mut Cursor,
    catalog: &Catalog,
    registry: &FunctionRegistry<S>,
) -> Result<AggregateQuery<S>, QueryError> {
    let name = cur.ident()?.to_string();
    cur.eat('(')?;
    let mut group_by = Vec::new();
    if cur.peek() != Some(';') {
        loop {
            let attr = cur.ident()?;
            group_by.push(
                catalog
                    .attr(attr)
                    .map_err(|_| QueryError::UnknownAttribute(attr.to_string()))?,
            );
            if !cur.try_eat(',') {
                break;
            }
        }
    }
    cur.eat(';')?;
    let mut aggregates = Vec::new();
    loop {
        let e = parse_sum(cur, catalog, registry)?;
        aggregates.push(e.normalize());
        if !cur.try_eat(',') {
            break;
        }
    }
    cur.eat(')')?;
    Ok(AggregateQuery::new(&name, group_by, aggregates))
}

fn parse_sum<S: Scalar>(
    cur: &mut Cursor,
    catalog: &Catalog,
    registry: &FunctionRegistry<S>,
) -> Result<Expr<S>, QueryError> {
    let mut e = parse_product(cur, catalog, registry)?;
    while cur.try_eat('+') {
        let rhs = parse_product(cur, catalog, registry)?;
        e = Expr::Add(Box::new(e), Box::new(rhs));
    }
    Ok(e)
}

fn parse_product<S: Scalar>(
    cur: &mut Cursor,
    catalog: &Catalog,
    registry: &FunctionRegistry<S>,
) -> Result<Expr<S>, QueryError> {
    let mut e = parse_atom(cur, catalog, registry)?;
    while cur.try_eat('*') {
        let rhs = parse_atom(cur, catalog, registry)?;
        e = Expr::Mul(Box::new(e), Box::new(rhs));
    }
    Ok(e)
}

fn parse_atom<S: Scalar>(
    cur: &mut Cursor,
    catalog: &Catalog,
    registry: &FunctionRegistry<S>,
) -> Result<Expr<S>, QueryError> {
    match cur.peek() {
        Some('(') => {
            cur.eat('(')?;
            let e = parse_sum(cur, catalog, registry)?;
            cur.eat(')')?;
            Ok(e)
        }
        Some('[') => {
            cur.eat('[')?;
            let attr_name = cur.ident()?;
            let attr = catalog
                .attr(attr_name)
                .map_err(|_| QueryError::UnknownAttribute(attr_name.to_string()))?;
            let op = parse_op(cur)?;
            let lit = parse_literal(cur)?;
            cur.eat(']')?;
            Ok(Expr::Factor(UdafFactor::Kronecker {
                attr,
                op,
                threshold: Param::Static(lit),
            }))
        }
        Some(c) if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' => {
            let v = cur.number()?;
            Ok(Expr::Factor(UdafFactor::Constant(
                S::from_f64(v).unwrap(),
            )))
        }
        Some(_) => {
            let name = cur.ident()?;
            if cur.try_eat('^') {
                let e = cur.number()?;
                if e < 0.0 || e.fract() != 0.0 {
                    return Err(cur.err("exponent must be a non-negative integer"));
                }
                let attr = catalog
                    .attr(name)
                    .map_err(|_| QueryError::UnknownAttribute(name.to_string()))?;
                return Ok(Expr::Factor(UdafFactor::Power(attr, e as u32)));
            }
            if cur.peek() == Some('(') {
                cur.eat('(')?;
                let mut args = Vec::new();
                loop {
                    let a = cur.ident()?;
                    args.push(
                        catalog
                            .attr(a)
                            .map_err(|_| QueryError::UnknownAttribute(a.to_string()))?,
                    );
                    if !cur.try_eat(',') {
                        break;
                    }
                }
                cur.eat(')')?;
                let func = registry
                    .lookup(name)
                    .ok_or_else(|| QueryError::UnknownFunction(name.to_string()))?;
                if registry.get(func).arity != args.len() {
                    return Err(QueryError::WrongArity(name.to_string()));
                }
                return Ok(Expr::Factor(UdafFactor::Named { func, args }));
            }
            let attr = catalog
                .attr(name)
                .map_err(|_| QueryError::UnknownAttribute(name.to_string()))?;
            Ok(Expr::Factor(UdafFactor::Identity(attr)))
        }
        None => Err(cur.err("expected expression")),
    }
}

fn parse_op(cur: &mut Cursor) -> Result<CmpOp, QueryError> {
    match cur.peek() {
        Some('<') => {
            cur.eat('<')?;
            Ok(if cur.try_eat('=') { CmpOp::Le } else { CmpOp::Lt })
        }
        Some('>') => {
            cur.eat('>')?;
            Ok(if cur.try_eat('=') { CmpOp::Ge } else { CmpOp::Gt })
        }
        Some('=') => {
            cur.eat('=')?;
            Ok(CmpOp::Eq)
        }
        _ => Err(cur.err("expected comparison operator")),
    }
}

fn parse_literal(cur: &mut Cursor) -> Result<Literal, QueryError> {
    match cur.peek() {
        Some(c) if c.is_ascii_digit() || c == '-' || c == '.' => {
            let v = cur.number()?;
            Ok(if v.fract() == 0.0 && v.abs() < 9e15 {
                Literal::Int(v as i64)
            } else {
                Literal::Float(v)
            })
        }
        Some('\'') => {
            cur.eat('\'')?;
            let start = cur.pos;
            while !cur.rest().is_empty() && !cur.rest().starts_with('\'') {
                cur.pos += 1;
            }
            let s = cur.text[start..cur.pos].to_string();
            cur.eat('\'')?;
            Ok(Literal::Str(s))
        }
        Some(_) => Ok(Literal::Str(cur.ident()?.to_string())),
        None => Err(cur.err("expected literal")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Catalog;
    use std::sync::Arc;

    fn setup() -> (Catalog, FunctionRegistry<f64>) {
        let (catalog, _) = crate::catalog::favorita_catalog();
        let mut reg = FunctionRegistry::new();
        reg.register_host("f", 1, Arc::new(|a: &[f64]| a[0] + 1.0));
        reg.register_host("g", 1, Arc::new(|a: &[f64]| a[0] * 2.0));
        (catalog, reg)
    }

    #[test]
    fn parses_scalar_product_query() {
        let (c, r) = setup();
        let qs = parse_batch("Q1(; f(units)*g(price))", &c, &r).unwrap();
        assert_eq!(qs.len(), 1);
        assert!(qs[0].group_by.is_empty());
        assert_eq!(qs[0].aggregates.len(), 1);
        assert_eq!(qs[0].aggregates[0].terms.len(), 1);
        assert_eq!(qs[0].aggregates[0].terms[0].len(), 2);
    }

    #[test]
    fn parses_group_by_query() {
        let (c, r) = setup();
        let qs = parse_batch("Q2(family; g(price))", &c, &r).unwrap();
        assert_eq!(qs[0].group_by, vec![c.attr("family").unwrap()]);
    }

    #[test]
    fn parses_count_query() {
        let (c, r) = setup();
        let qs = parse_batch("Q(item; 1)", &c, &r).unwrap();
        assert_eq!(qs[0].aggregates[0].terms[0].len(), 1);
        assert!(matches!(
            qs[0].aggregates[0].terms[0][0],
            UdafFactor::Constant(v) if v == 1.0
        ));
    }

    #[test]
    fn parses_kronecker_and_power_and_sum() {
        let (c, r) = setup();
        let qs = parse_batch("Q(; units^2 + 2*[units <= 5])", &c, &r).unwrap();
        assert_eq!(qs[0].aggregates[0].terms.len(), 2);
    }

    #[test]
    fn distributes_parenthesized_sums() {
        let (c, r) = setup();
        let qs = parse_batch("Q(; (units + price)*txns)", &c, &r).unwrap();
        assert_eq!(qs[0].aggregates[0].terms.len(), 2);
        assert_eq!(qs[0].aggregates[0].terms[0].len(), 2);
    }

    #[test]
    fn unknown_attribute_and_function_are_reported() {
        let (c, r) = setup();
        assert_eq!(
            parse_batch("Q(zzz; 1)", &c, &r).unwrap_err(),
            QueryError::UnknownAttribute("zzz".into())
        );
        assert_eq!(
            parse_batch("Q(; nosuch(units))", &c, &r).unwrap_err(),
            QueryError::UnknownFunction("nosuch".into())
        );
    }

    #[test]
    fn syntax_error_carries_position() {
        let (c, r) = setup();
        match parse_batch("Q(; units +)", &c, &r).unwrap_err() {
            QueryError::Syntax { line, col, .. } => {
                assert_eq!(line, 1);
                assert!(col >= 12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
