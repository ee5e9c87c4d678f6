//! Coefficient expressions: complex polynomials of degree at most 2 in
//! `xi1`, `xi2`, `xi3`.
//!
//! Grammar:
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary ('*' unary)*
//! unary  := ('+' | '-') unary | power
//! power  := atom ('^' integer)?
//! atom   := number 'i'? | 'i' | 'xi' digit | '(' expr ')'
//! ```

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

const MAX_DEPTH: usize = 64;

/// Polynomial `c + Σ aⱼ ξⱼ + Σ_{j≤k} qⱼₖ ξⱼ ξₖ` with complex coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Polynomial {
    pub constant: C64,
    pub linear: [C64; 3],
    /// Upper-triangular storage; entries with `j > k` stay zero.
    pub quadratic: [[C64; 3]; 3],
}

impl Polynomial {
    pub fn constant(c: C64) -> Self {
        Self { constant: c, ..Default::default() }
    }

    pub fn variable(j: usize) -> Self {
        let mut p = Self::default();
        p.linear[j] = C64::new(1.0, 0.0);
        p
    }

    pub fn degree(&self) -> usize {
        let nz = |c: &C64| c.norm_sqr() != 0.0;
        if self.quadratic.iter().flatten().any(nz) {
            2
        } else if self.linear.iter().any(nz) {
            1
        } else {
            0
        }
    }

    /// Highest variable index used plus one.
    pub fn variables_used(&self) -> usize {
        let mut n = 0;
        for j in 0..3 {
            if self.linear[j].norm_sqr() != 0.0 {
                n = n.max(j + 1);
            }
            for k in j..3 {
                if self.quadratic[j][k].norm_sqr() != 0.0 {
                    n = n.max(k + 1);
                }
            }
        }
        n
    }

    pub fn eval(&self, xi: &[f64]) -> C64 {
        let x = |j: usize| xi.get(j).copied().unwrap_or(0.0);
        let mut v = self.constant;
        for j in 0..3 {
            v += self.linear[j] * x(j);
            for k in j..3 {
                v += self.quadratic[j][k] * (x(j) * x(k));
            }
        }
        v
    }

    pub fn conj(&self) -> Self {
        let mut p = *self;
        p.constant = p.constant.conj();
        for c in p.linear.iter_mut().chain(p.quadratic.iter_mut().flatten()) {
            *c = c.conj();
        }
        p
    }

    pub fn scale(&self, s: C64) -> Self {
        let mut p = *self;
        p.constant *= s;
        for c in p.linear.iter_mut().chain(p.quadratic.iter_mut().flatten()) {
            *c *= s;
        }
        p
    }

    pub fn add(&self, o: &Self) -> Self {
        let mut p = *self;
        p.constant += o.constant;
        for j in 0..3 {
            p.linear[j] += o.linear[j];
            for k in 0..3 {
                p.quadratic[j][k] += o.quadratic[j][k];
            }
        }
        p
    }

    pub fn mul(&self, o: &Self) -> Result<Self> {
        if self.degree() + o.degree() > 2 {
            return Err(Error::Parse {
                what: "coefficient expression",
                reason: "polynomial degree exceeds 2".into(),
            });
        }
        let mut p = Self::constant(self.constant * o.constant);
        for j in 0..3 {
            p.linear[j] = self.constant * o.linear[j] + o.constant * self.linear[j];
            for k in 0..3 {
                let (a, b) = (j.min(k), j.max(k));
                p.quadratic[a][b] += self.linear[j] * o.linear[k];
                p.quadratic[j][k] += self.constant * o.quadratic[j][k] + o.constant * self.quadratic[j][k];
            }
        }
        Ok(p)
    }

    /// Sum of coefficient magnitudes weighted by `r^degree`; bounds `|p(ξ)|`
    /// on the ball `|ξ| ≤ r`.
    pub fn bound_on_ball(&self, r: f64) -> f64 {
        let lin: f64 = self.linear.iter().map(|c| c.norm()).sum();
        let quad: f64 = self.quadratic.iter().flatten().map(|c| c.norm()).sum();
        self.constant.norm() + lin * r + quad * r * r
    }

    /// Largest absolute difference between coefficients.
    pub fn distance(&self, o: &Self) -> f64 {
        let mut d = (self.constant - o.constant).norm();
        for j in 0..3 {
            d = d.max((self.linear[j] - o.linear[j]).norm());
            for k in 0..3 {
                d = d.max((self.quadratic[j][k] - o.quadratic[j][k]).norm());
            }
        }
        d
    }

    pub fn max_coefficient(&self) -> f64 {
        std::iter::once(&self.constant)
            .chain(self.linear.iter())
            .chain(self.quadratic.iter().flatten())
            .map(|c| c.norm())
            .fold(0.0, f64::max)
    }
}

/// Parses a coefficient expression such as `"1"`, `"0.5 - 2i"` or
/// `"1 + 0.1*xi1^2"`.
pub fn parse_coefficient(src: &str) -> Result<Polynomial> {
    let mut p = Parser { s: src.as_bytes(), pos: 0, depth: 0 };
    p.skip_ws();
    if p.pos == p.s.len() {
        return Err(p.err("empty expression"));
    }
    let v = p.expr()?;
    p.skip_ws();
    if p.pos != p.s.len() {
        return Err(p.err("unexpected trailing input"));
    }
    Ok(v)
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
    depth: usize,
}

impl Parser<'_> {
    fn err(&self, reason: &str) -> Error {
        Error::Parse { what: "coefficient expression", reason: format!("{reason} at offset {}", self.pos) }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.s.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Polynomial> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(self.err("expression nested too deeply"));
        }
        let mut v = self.term()?;
        while let Some(c @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let t = self.term()?;
            v = if c == b'+' { v.add(&t) } else { v.add(&t.scale(C64::new(-1.0, 0.0))) };
        }
        self.depth -= 1;
        Ok(v)
    }

    fn term(&mut self) -> Result<Polynomial> {
        let mut v = self.unary()?;
        while self.peek() == Some(b'*') {
            self.pos += 1;
            let f = self.unary()?;
            v = v.mul(&f)?;
        }
        Ok(v)
    }

    fn unary(&mut self) -> Result<Polynomial> {
        let mut sign = 1.0;
        let mut count = 0;
        while let Some(c @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            count += 1;
            if count > MAX_DEPTH {
                return Err(self.err("too many sign prefixes"));
            }
            if c == b'-' {
                sign = -sign;
            }
        }
        Ok(self.power()?.scale(C64::new(sign, 0.0)))
    }

    fn power(&mut self) -> Result<Polynomial> {
        let base = self.atom()?;
        if self.peek() != Some(b'^') {
            return Ok(base);
        }
        self.pos += 1;
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        let digits = std::str::from_utf8(&self.s[start..self.pos]).unwrap_or("");
        let n: u32 = digits.parse().map_err(|_| self.err("expected integer exponent"))?;
        if n > 2 && base.degree() > 0 {
            return Err(self.err("polynomial degree exceeds 2"));
        }
        let mut v = Polynomial::constant(C64::new(1.0, 0.0));
        if base.degree() == 0 {
            return Ok(Polynomial::constant(base.constant.powu(n)));
        }
        for _ in 0..n {
            v = v.mul(&base).map_err(|_| self.err("polynomial degree exceeds 2"))?;
        }
        Ok(v)
    }

    fn atom(&mut self) -> Result<Polynomial> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let v = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.err("expected ')'"));
                }
                self.pos += 1;
                Ok(v)
            }
            Some(b'x') => {
                if self.s.get(self.pos + 1) != Some(&b'i') {
                    return Err(self.err("expected variable xi1, xi2 or xi3"));
                }
                let j = match self.s.get(self.pos + 2) {
                    Some(c @ b'1'..=b'3') => (c - b'1') as usize,
                    _ => return Err(self.err("expected variable xi1, xi2 or xi3")),
                };
                self.pos += 3;
                Ok(Polynomial::variable(j))
            }
            Some(b'i') => {
                self.pos += 1;
                Ok(Polynomial::constant(C64::new(0.0, 1.0)))
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => {
                let x = self.number()?;
                if self.s.get(self.pos) == Some(&b'i') {
                    self.pos += 1;
                    Ok(Polynomial::constant(C64::new(0.0, x)))
                } else {
                    Ok(Polynomial::constant(C64::new(x, 0.0)))
                }
            }
            Some(_) => Err(self.err("unexpected character")),
            None => Err(self.err("unexpected end of input")),
        }
    }

    fn number(&mut self) -> Result<f64> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            while p.pos < p.s.len() && p.s[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
        };
        digits(self);
        if self.s.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            digits(self);
        }
        if matches!(self.s.get(self.pos), Some(b'e' | b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.s.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            let exp_start = self.pos;
            digits(self);
            if self.pos == exp_start {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&self.s[start..self.pos]).unwrap_or("");
        let x: f64 = text.parse().map_err(|_| self.err("malformed number"))?;
        if !x.is_finite() {
            return Err(self.err("number out of range"));
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn constants_and_imaginary_unit() {
        assert_eq!(parse_coefficient("1").unwrap().constant, c(1.0, 0.0));
        assert_eq!(parse_coefficient("-2.5i").unwrap().constant, c(0.0, -2.5));
        assert_eq!(parse_coefficient("0.5 - 2i").unwrap().constant, c(0.5, -2.0));
        assert_eq!(parse_coefficient("i*i").unwrap().constant, c(-1.0, 0.0));
        assert_eq!(parse_coefficient("1e-2").unwrap().constant, c(0.01, 0.0));
        assert_eq!(parse_coefficient("(1+i)^2").unwrap().constant, c(0.0, 2.0));
    }

    #[test]
    fn polynomials_evaluate() {
        let p = parse_coefficient("1 + 0.1*xi1^2 - (xi2 - 1)*xi1").unwrap();
        let x = [0.7, -0.4];
        let expect = 1.0 + 0.1 * 0.49 - (-0.4 - 1.0) * 0.7;
        assert!((p.eval(&x) - c(expect, 0.0)).norm() < 1e-15);
        assert_eq!(p.degree(), 2);
        assert_eq!(p.variables_used(), 2);
    }

    #[test]
    fn rejects_bad_input() {
        for s in ["", "xi1^3", "xi1*xi2*xi3", "(1", "1 +", "xi4", "2x", "1..2", "((((xi1)))", "1 2"] {
            assert!(parse_coefficient(s).is_err(), "{s:?} should fail");
        }
        let deep = "(".repeat(200) + "1" + &")".repeat(200);
        assert!(parse_coefficient(&deep).is_err());
    }

    #[test]
    fn conjugation_flips_imaginary_parts() {
        let p = parse_coefficient("i + (2-3i)*xi1").unwrap().conj();
        assert_eq!(p.constant, c(0.0, -1.0));
        assert_eq!(p.linear[0], c(2.0, 3.0));
    }
}
