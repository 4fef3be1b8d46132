//! Measurement expressions over landmark coordinates.
//!
//! Grammar:
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | atom
//! atom   := number | '(' expr ')' | call
//! call   := name '(' landmark (',' landmark)* ')'
//! ```
//!
//! Functions (angles in degrees, lengths in the coordinate unit):
//!
//! - `angle(a, b, c)`: angle at vertex `b` between `a-b` and `c-b`, in `[0, 180]`
//! - `dist(a, b)`: Euclidean distance
//! - `ratio(a, b, c, d)`: `dist(a, b) / dist(c, d)`
//! - `linedist(p, a, b)`: signed perpendicular distance of `p` from line `a->b`,
//!   with the sign of the cross product `(b - a) x (p - a)`
//! - `proj(p, a, b)`: signed position of `p` projected onto line `a->b`, measured from `a`
//! - `lineangle(a, b, c, d)`: angle between directions `a->b` and `c->d`, in `[0, 180]`
//!
//! Landmarks are names resolved through a name table, or raw ids written `#12`.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::gaussmath::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Angle,
    Dist,
    Ratio,
    LineDist,
    Proj,
    LineAngle,
}

impl Func {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "angle" => Func::Angle,
            "dist" => Func::Dist,
            "ratio" => Func::Ratio,
            "linedist" => Func::LineDist,
            "proj" => Func::Proj,
            "lineangle" => Func::LineAngle,
            _ => return None,
        })
    }

    fn arity(self) -> usize {
        match self {
            Func::Dist => 2,
            Func::Angle | Func::LineDist | Func::Proj => 3,
            Func::Ratio | Func::LineAngle => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Call(Func, Vec<usize>),
}

impl Expr {
    /// Landmark ids referenced anywhere in the expression.
    pub fn landmarks(&self) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        self.collect(&mut out);
        out
    }

    fn collect(&self, out: &mut BTreeSet<usize>) {
        match self {
            Expr::Num(_) => {}
            Expr::Neg(e) => e.collect(out),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.collect(out);
                b.collect(out);
            }
            Expr::Call(_, ids) => out.extend(ids.iter().copied()),
        }
    }

    /// Evaluates with `lookup(id)` giving each landmark's coordinate.
    pub fn eval(&self, lookup: &dyn Fn(usize) -> Option<Point>) -> Result<f64> {
        Ok(match self {
            Expr::Num(v) => *v,
            Expr::Neg(e) => -e.eval(lookup)?,
            Expr::Add(a, b) => a.eval(lookup)? + b.eval(lookup)?,
            Expr::Sub(a, b) => a.eval(lookup)? - b.eval(lookup)?,
            Expr::Mul(a, b) => a.eval(lookup)? * b.eval(lookup)?,
            Expr::Div(a, b) => {
                let d = b.eval(lookup)?;
                if d == 0.0 {
                    return Err(Error::DegenerateGeometry("division by zero".into()));
                }
                a.eval(lookup)? / d
            }
            Expr::Call(f, ids) => {
                let mut pts = Vec::with_capacity(ids.len());
                for &id in ids {
                    let p = lookup(id).ok_or_else(|| Error::MissingLandmark(format!("#{id}")))?;
                    if !p.is_finite() {
                        return Err(Error::invalid(format!("landmark #{id} is not finite")));
                    }
                    pts.push(p);
                }
                apply(*f, &pts)?
            }
        })
    }
}

fn cross(a: Point, b: Point) -> f64 {
    a.x * b.y - a.y * b.x
}

fn dot(a: Point, b: Point) -> f64 {
    a.x * b.x + a.y * b.y
}

fn norm(a: Point) -> f64 {
    a.x.hypot(a.y)
}

/// Unsigned angle between two vectors, degrees. `atan2(|u x v|, u . v)` is
/// used instead of `acos` of the normalized dot product: same value, but
/// well conditioned near 0° and 180°.
fn vec_angle(u: Point, v: Point, what: &str) -> Result<f64> {
    if norm(u) == 0.0 || norm(v) == 0.0 {
        return Err(Error::DegenerateGeometry(format!("{what}: coincident points")));
    }
    Ok(cross(u, v).abs().atan2(dot(u, v)).to_degrees())
}

fn direction(a: Point, b: Point, what: &str) -> Result<Point> {
    let d = b - a;
    let n = norm(d);
    if n == 0.0 {
        return Err(Error::DegenerateGeometry(format!("{what}: line through coincident points")));
    }
    Ok(d.scale(1.0 / n))
}

fn apply(f: Func, p: &[Point]) -> Result<f64> {
    Ok(match f {
        Func::Angle => vec_angle(p[0] - p[1], p[2] - p[1], "angle")?,
        Func::Dist => norm(p[1] - p[0]),
        Func::Ratio => {
            let den = norm(p[3] - p[2]);
            if den == 0.0 {
                return Err(Error::DegenerateGeometry("ratio: zero-length denominator".into()));
            }
            norm(p[1] - p[0]) / den
        }
        Func::LineDist => cross(direction(p[1], p[2], "linedist")?, p[0] - p[1]),
        Func::Proj => dot(direction(p[1], p[2], "proj")?, p[0] - p[1]),
        Func::LineAngle => vec_angle(p[1] - p[0], p[3] - p[2], "lineangle")?,
    })
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Id(usize),
    Op(char),
}

fn tokenize(s: &str) -> std::result::Result<Vec<Tok>, String> {
    let mut out = Vec::new();
    let chars: Vec<char> = s.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if "+-*/(),".contains(c) {
            out.push(Tok::Op(c));
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.' || chars[i] == 'e' || chars[i] == 'E'
                || ((chars[i] == '-' || chars[i] == '+') && matches!(chars[i - 1], 'e' | 'E')))
            {
                i += 1;
            }
            let t: String = chars[start..i].iter().collect();
            out.push(Tok::Num(t.parse().map_err(|_| format!("bad number `{t}`"))?));
        } else if c == '#' {
            let start = i + 1;
            i += 1;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let t: String = chars[start..i].iter().collect();
            out.push(Tok::Id(t.parse().map_err(|_| "expected digits after `#`".to_string())?));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else {
            return Err(format!("unexpected character `{c}`"));
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<Tok>,
    pos: usize,
    names: &'a BTreeMap<String, usize>,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expect(&mut self, c: char) -> std::result::Result<(), String> {
        match self.next() {
            Some(Tok::Op(o)) if o == c => Ok(()),
            other => Err(format!("expected `{c}`, found {}", describe(other.as_ref()))),
        }
    }

    fn expr(&mut self) -> std::result::Result<Expr, String> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(c @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if c == '+' { Expr::Add(lhs.into(), rhs.into()) } else { Expr::Sub(lhs.into(), rhs.into()) };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> std::result::Result<Expr, String> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(c @ ('*' | '/'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if c == '*' { Expr::Mul(lhs.into(), rhs.into()) } else { Expr::Div(lhs.into(), rhs.into()) };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> std::result::Result<Expr, String> {
        if let Some(Tok::Op('-')) = self.peek() {
            self.pos += 1;
            return Ok(Expr::Neg(self.unary()?.into()));
        }
        self.atom()
    }

    fn landmark(&mut self) -> std::result::Result<usize, String> {
        match self.next() {
            Some(Tok::Id(id)) => Ok(id),
            Some(Tok::Ident(name)) => self.names.get(&name).copied().ok_or_else(|| format!("unknown landmark `{name}`")),
            other => Err(format!("expected a landmark, found {}", describe(other.as_ref()))),
        }
    }

    fn atom(&mut self) -> std::result::Result<Expr, String> {
        match self.next() {
            Some(Tok::Num(v)) => Ok(Expr::Num(v)),
            Some(Tok::Op('(')) => {
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                let f = Func::parse(&name).ok_or_else(|| format!("unknown function `{name}`"))?;
                self.expect('(')?;
                let mut ids = vec![self.landmark()?];
                while let Some(Tok::Op(',')) = self.peek() {
                    self.pos += 1;
                    ids.push(self.landmark()?);
                }
                self.expect(')')?;
                if ids.len() != f.arity() {
                    return Err(format!("`{name}` takes {} landmarks, got {}", f.arity(), ids.len()));
                }
                if f == Func::Angle && (ids[0] == ids[1] || ids[1] == ids[2] || ids[0] == ids[2]) {
                    return Err(format!("`angle` needs three distinct landmarks, got {ids:?}"));
                }
                Ok(Expr::Call(f, ids))
            }
            other => Err(format!("expected a value, found {}", describe(other.as_ref()))),
        }
    }
}

fn describe(t: Option<&Tok>) -> String {
    match t {
        None => "end of expression".into(),
        Some(Tok::Num(v)) => format!("number {v}"),
        Some(Tok::Ident(s)) => format!("`{s}`"),
        Some(Tok::Id(i)) => format!("`#{i}`"),
        Some(Tok::Op(c)) => format!("`{c}`"),
    }
}

/// Parses an expression; landmark names resolve through `names`.
pub fn parse_expr(s: &str, names: &BTreeMap<String, usize>) -> std::result::Result<Expr, String> {
    let toks = tokenize(s)?;
    let mut p = Parser { toks, pos: 0, names };
    let e = p.expr()?;
    if p.pos != p.toks.len() {
        return Err(format!("trailing input at {}", describe(p.peek())));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(list: &[(f64, f64)]) -> impl Fn(usize) -> Option<Point> + '_ {
        move |i| list.get(i).map(|&(x, y)| Point::new(x, y))
    }

    fn eval(s: &str, list: &[(f64, f64)]) -> Result<f64> {
        parse_expr(s, &BTreeMap::new()).unwrap().eval(&pts(list))
    }

    #[test]
    fn angle_examples() {
        let l = [(1.0, 0.0), (0.0, 0.0), (0.0, 1.0), (2.0, 0.0)];
        assert!((eval("angle(#0, #1, #2)", &l).unwrap() - 90.0).abs() < 1e-12);
        assert_eq!(eval("angle(#3, #1, #0)", &l).unwrap(), 0.0);
        let degenerate = [(0.0, 0.0), (0.0, 0.0), (1.0, 1.0)];
        assert!(matches!(eval("angle(#0, #1, #2)", &degenerate), Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn primitives_and_arithmetic() {
        let l = [(0.0, 0.0), (3.0, 4.0), (0.0, 0.0), (0.0, 10.0), (2.0, 5.0)];
        assert_eq!(eval("dist(#0, #1)", &l).unwrap(), 5.0);
        assert_eq!(eval("ratio(#0, #1, #2, #3)", &l).unwrap(), 0.5);
        // Line #2->#3 points down in image coordinates; #4 sits at x = 2.
        assert_eq!(eval("linedist(#4, #2, #3)", &l).unwrap(), -2.0);
        assert_eq!(eval("proj(#4, #2, #3)", &l).unwrap(), 5.0);
        assert!((eval("lineangle(#0, #1, #2, #3)", &l).unwrap() - (3f64.atan2(4.0)).to_degrees()).abs() < 1e-12);
        assert_eq!(eval("-(1 + 2) * 3 - 4 / 2", &l).unwrap(), -11.0);
        assert_eq!(eval("1e1 + 2.5E-1", &l).unwrap(), 10.25);
        assert!(matches!(eval("dist(#0, #9)", &l), Err(Error::MissingLandmark(_))));
        assert!(eval("1 / (dist(#0, #2))", &l).is_err());
    }

    #[test]
    fn names_and_errors() {
        let names: BTreeMap<String, usize> = [("S".to_string(), 0), ("N".to_string(), 1), ("B".to_string(), 2)].into();
        let e = parse_expr("angle(S, N, B) - 1", &names).unwrap();
        assert_eq!(e.landmarks().into_iter().collect::<Vec<_>>(), vec![0, 1, 2]);
        for bad in ["angle(S, N)", "angle(S, S, B)", "foo(S)", "dist(S, X)", "1 +", "(1", "1 2", "dist(S N)", "1 $ 2"] {
            assert!(parse_expr(bad, &names).is_err(), "{bad}");
        }
    }
}
