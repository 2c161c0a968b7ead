//! Values of lambda-brackets.
//!
//! A [`LambdaValue`] is a polynomial in an indeterminate lambda with
//! differential-polynomial coefficients, plus an optional *nonlocal tail*:
//! a sum of formal expressions `P (lambda + d)^{-1} Q`.  The tail is stored
//! fully expanded over monomial pairs so that equality of values is exactly
//! structural equality, no matter how the terms were produced.
//!
//! The same type doubles as a *symbol*: an entry of a bracket table can be
//! read as the operator obtained by substituting `lambda -> lambda + d`
//! and applied to another value, which is how the master formula composes
//! structures.

use num_traits::{One, Zero};
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, AddAssign, Neg, Sub, SubAssign};

use crate::diffalg::{binom, DiffPoly, Monomial, Rat};
use crate::{Error, Result};

/// A lambda-polynomial with nonlocal tail.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LambdaValue {
    /// Coefficient of `lambda^p` for each stored `p`; no zero entries.
    local: BTreeMap<u32, DiffPoly>,
    /// Tail `sum c . m_left (lambda+d)^{-1} m_right`, keyed by the monomial
    /// pair; no zero entries.
    nonlocal: BTreeMap<(Monomial, Monomial), Rat>,
}

impl LambdaValue {
    pub fn zero() -> LambdaValue {
        LambdaValue::default()
    }

    /// `poly * lambda^p`.
    pub fn mono(p: u32, poly: DiffPoly) -> LambdaValue {
        let mut v = LambdaValue::zero();
        v.add_local(p, poly);
        v
    }

    /// Purely local value from an exponent-to-coefficient map.
    pub fn from_local<I: IntoIterator<Item = (u32, DiffPoly)>>(it: I) -> LambdaValue {
        let mut v = LambdaValue::zero();
        for (p, c) in it {
            v.add_local(p, c);
        }
        v
    }

    /// The nonlocal element `P (lambda+d)^{-1} Q`, expanded bilinearly.
    pub fn pair(p: &DiffPoly, q: &DiffPoly) -> LambdaValue {
        let mut v = LambdaValue::zero();
        v.add_pair(p, q, &Rat::one());
        v
    }

    pub fn is_zero(&self) -> bool {
        self.local.is_empty() && self.nonlocal.is_empty()
    }

    pub fn is_local(&self) -> bool {
        self.nonlocal.is_empty()
    }

    /// Coefficient of `lambda^p`.
    pub fn coeff(&self, p: u32) -> DiffPoly {
        self.local.get(&p).cloned().unwrap_or_else(DiffPoly::zero)
    }

    /// Highest lambda power with nonzero coefficient.
    pub fn degree(&self) -> Option<u32> {
        self.local.keys().next_back().copied()
    }

    pub fn local_terms(&self) -> impl Iterator<Item = (&u32, &DiffPoly)> {
        self.local.iter()
    }

    pub fn nonlocal_terms(&self) -> impl Iterator<Item = (&(Monomial, Monomial), &Rat)> {
        self.nonlocal.iter()
    }

    pub fn add_local(&mut self, p: u32, poly: DiffPoly) {
        if poly.is_zero() {
            return;
        }
        let entry = self.local.entry(p).or_insert_with(DiffPoly::zero);
        *entry += &poly;
        if entry.is_zero() {
            self.local.remove(&p);
        }
    }

    /// Add `scale * P (lambda+d)^{-1} Q`.
    pub fn add_pair(&mut self, p: &DiffPoly, q: &DiffPoly, scale: &Rat) {
        if scale.is_zero() {
            return;
        }
        for (mp, cp) in p.terms() {
            for (mq, cq) in q.terms() {
                let c = cp * cq * scale;
                let key = (mp.clone(), mq.clone());
                let entry = self.nonlocal.entry(key).or_insert_with(Rat::zero);
                *entry += c;
                if entry.is_zero() {
                    self.nonlocal.remove(&(mp.clone(), mq.clone()));
                }
            }
        }
    }

    pub fn scale(&self, c: &Rat) -> LambdaValue {
        if c.is_zero() {
            return LambdaValue::zero();
        }
        LambdaValue {
            local: self.local.iter().map(|(p, f)| (*p, f.scale(c))).collect(),
            nonlocal: self.nonlocal.iter().map(|(k, a)| (k.clone(), a * c)).collect(),
        }
    }

    /// Left multiplication by a differential polynomial.
    pub fn mul_poly(&self, h: &DiffPoly) -> LambdaValue {
        let mut out = LambdaValue::zero();
        for (p, f) in &self.local {
            out.add_local(*p, h * f);
        }
        for ((mp, mq), c) in &self.nonlocal {
            let left = h.scale(c);
            let left = &left * &DiffPoly::gen_monomial(mp);
            out.add_pair(&left, &DiffPoly::gen_monomial(mq), &Rat::one());
        }
        out
    }

    /// `(lambda + d)^n f` as a value: the binomial expansion.
    pub fn shift_pow(n: u32, f: &DiffPoly) -> LambdaValue {
        let mut v = LambdaValue::zero();
        for s in 0..=n {
            let coeff = binom(n as i64, s);
            v.add_local(s, f.nth_derivative(n - s).scale(&coeff));
        }
        v
    }

    /// `(-lambda - d)^m f` as a value.
    pub fn neg_shift_pow(m: u32, f: &DiffPoly) -> LambdaValue {
        let v = LambdaValue::shift_pow(m, f);
        if m % 2 == 1 {
            -&v
        } else {
            v
        }
    }

    /// Apply the operator `(lambda + d)` on the left.
    ///
    /// Local terms shift and differentiate; a tail term
    /// `P (lambda+d)^{-1} Q` produces the local product `P Q` plus the tail
    /// term `P' (lambda+d)^{-1} Q`.
    pub fn apply_shift(&self) -> LambdaValue {
        let mut out = LambdaValue::zero();
        for (p, f) in &self.local {
            out.add_local(p + 1, f.clone());
            out.add_local(*p, f.total_derivative());
        }
        for ((mp, mq), c) in &self.nonlocal {
            let p = DiffPoly::gen_monomial(mp).scale(c);
            let q = DiffPoly::gen_monomial(mq);
            out.add_local(0, &p * &q);
            out.add_pair(&p.total_derivative(), &q, &Rat::one());
        }
        out
    }

    /// Rewrite the local part as `sum_t (lambda+d)^t x_t`.
    ///
    /// The coefficients are `x_t = sum_{a >= t} binom(a, t) (-d)^{a-t} v_a`
    /// where `v_a` is the coefficient of `lambda^a`.
    pub fn to_right_form(&self) -> Result<Vec<(u32, DiffPoly)>> {
        if !self.is_local() {
            return Err(Error::Unsupported(
                "right form of a value with a nonlocal tail".into(),
            ));
        }
        let top = match self.degree() {
            None => return Ok(Vec::new()),
            Some(d) => d,
        };
        let mut out = Vec::new();
        for t in 0..=top {
            let mut x = DiffPoly::zero();
            for (a, v) in self.local.range(t..) {
                let mut d = v.nth_derivative(a - t).scale(&binom(*a as i64, t));
                if (a - t) % 2 == 1 {
                    d = -&d;
                }
                x += &d;
            }
            if !x.is_zero() {
                out.push((t, x));
            }
        }
        Ok(out)
    }

    /// Inverse of [`to_right_form`]: expand `sum_t (lambda+d)^t x_t`.
    pub fn from_right_form(form: &[(u32, DiffPoly)]) -> LambdaValue {
        let mut out = LambdaValue::zero();
        for (t, x) in form {
            out += &LambdaValue::shift_pow(*t, x);
        }
        out
    }

    /// Apply the operator `(lambda + d)^{-1}` on the left.
    ///
    /// Fails when the value already has a nonlocal tail: iterated inverse
    /// powers are outside the supported value space.
    pub fn apply_inv_shift(&self) -> Result<LambdaValue> {
        let form = self.to_right_form()?;
        let mut out = LambdaValue::zero();
        for (t, x) in form {
            if t >= 1 {
                out += &LambdaValue::shift_pow(t - 1, &x);
            } else {
                out.add_pair(&DiffPoly::one(), &x, &Rat::one());
            }
        }
        Ok(out)
    }

    /// Read `self` as an operator symbol `S(lambda)`, substitute
    /// `lambda -> lambda + d`, and apply to `x`.
    ///
    /// A local term `c lambda^p` acts as `c (lambda+d)^p`, coefficient on
    /// the left; a tail term `P (lambda+d)^{-1} Q` acts as the composition
    /// of left multiplication by `Q`, then `(lambda+d)^{-1}`, then left
    /// multiplication by `P`.
    pub fn apply_as_operator(&self, x: &LambdaValue) -> Result<LambdaValue> {
        let mut out = LambdaValue::zero();
        for (p, c) in &self.local {
            let mut shifted = x.clone();
            for _ in 0..*p {
                shifted = shifted.apply_shift();
            }
            out += &shifted.mul_poly(c);
        }
        for ((mp, mq), c) in &self.nonlocal {
            let q = DiffPoly::gen_monomial(mq);
            let inner = x.mul_poly(&q).apply_inv_shift()?;
            out += &inner.mul_poly(&DiffPoly::gen_monomial(mp)).scale(c);
        }
        Ok(out)
    }

    /// The substitution `lambda -> -lambda - d` acting on the whole value.
    ///
    /// On local terms this is the binomial expansion acting on the
    /// coefficient; a tail term `P (lambda+d)^{-1} Q` maps to
    /// `-Q (lambda+d)^{-1} P`.
    pub fn skew_star(&self) -> LambdaValue {
        let mut out = LambdaValue::zero();
        for (p, c) in &self.local {
            out += &LambdaValue::neg_shift_pow(*p, c);
        }
        for ((mp, mq), c) in &self.nonlocal {
            let key = (mq.clone(), mp.clone());
            let entry = out.nonlocal.entry(key).or_insert_with(Rat::zero);
            *entry -= c;
            if entry.is_zero() {
                out.nonlocal.remove(&(mq.clone(), mp.clone()));
            }
        }
        out
    }

    /// Evaluate at `lambda = 0`.  Fails when a nonlocal tail survives.
    pub fn at_zero(&self) -> Result<DiffPoly> {
        if !self.is_local() {
            return Err(Error::Unsupported(format!(
                "evaluation at lambda = 0 of a value with {} nonlocal terms",
                self.nonlocal.len()
            )));
        }
        Ok(self.coeff(0))
    }

    /// Substitute a polynomial for every generator, consistently with
    /// derivatives, in all coefficients (including the tail monomials).
    pub fn substitute(
        &self,
        images: &BTreeMap<crate::diffalg::VarKey, DiffPoly>,
    ) -> LambdaValue {
        let mut out = LambdaValue::zero();
        for (p, c) in &self.local {
            out.add_local(*p, c.substitute(images));
        }
        for ((mp, mq), c) in &self.nonlocal {
            let p = DiffPoly::gen_monomial(mp).substitute(images).scale(c);
            let q = DiffPoly::gen_monomial(mq).substitute(images);
            out.add_pair(&p, &q, &Rat::one());
        }
        out
    }

    /// Kill monomials containing matched generators, in all coefficients;
    /// a tail term dies when either side dies.
    pub fn zero_out<F: Fn(crate::diffalg::VarKey) -> bool + Copy>(&self, pred: F) -> LambdaValue {
        let mut out = LambdaValue::zero();
        for (p, c) in &self.local {
            out.add_local(*p, c.zero_out(pred));
        }
        for ((mp, mq), c) in &self.nonlocal {
            let p = DiffPoly::gen_monomial(mp).zero_out(pred).scale(c);
            let q = DiffPoly::gen_monomial(mq).zero_out(pred);
            out.add_pair(&p, &q, &Rat::one());
        }
        out
    }

    /// Interchange form: `{"local": {"<p>": <poly>}, "nonlocal": [...]}`.
    pub fn to_json(&self) -> serde_json::Value {
        let mut local = serde_json::Map::new();
        for (p, c) in &self.local {
            local.insert(p.to_string(), c.to_json());
        }
        let nonlocal: Vec<serde_json::Value> = self
            .nonlocal
            .iter()
            .map(|((mp, mq), c)| {
                serde_json::json!({
                    "coeff": c.to_string(),
                    "left": DiffPoly::gen_monomial(mp).to_json(),
                    "right": DiffPoly::gen_monomial(mq).to_json(),
                })
            })
            .collect();
        if nonlocal.is_empty() {
            serde_json::json!({ "local": local })
        } else {
            serde_json::json!({ "local": local, "nonlocal": nonlocal })
        }
    }

    /// Inverse of [`LambdaValue::to_json`].
    pub fn from_json(v: &serde_json::Value) -> crate::Result<LambdaValue> {
        let bad = |what: &str| crate::Error::Parse(format!("lambda value JSON: {what}"));
        let obj = v.as_object().ok_or_else(|| bad("expected an object"))?;
        let mut out = LambdaValue::zero();
        let local = obj
            .get("local")
            .and_then(|l| l.as_object())
            .ok_or_else(|| bad("missing local part"))?;
        for (p, c) in local {
            let power: u32 = p.parse().map_err(|_| bad("bad lambda power"))?;
            out.add_local(power, DiffPoly::from_json(c)?);
        }
        if let Some(tail) = obj.get("nonlocal") {
            let items = tail.as_array().ok_or_else(|| bad("nonlocal part must be a list"))?;
            for item in items {
                let coeff: Rat = item
                    .get("coeff")
                    .and_then(|c| c.as_str())
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| bad("bad tail coefficient"))?;
                let left = DiffPoly::from_json(
                    item.get("left").ok_or_else(|| bad("missing tail left factor"))?,
                )?;
                let right = DiffPoly::from_json(
                    item.get("right").ok_or_else(|| bad("missing tail right factor"))?,
                )?;
                out.add_pair(&left, &right, &coeff);
            }
        }
        Ok(out)
    }
}

impl DiffPoly {
    /// The monomial `m` as a polynomial with coefficient one.
    pub fn gen_monomial(m: &Monomial) -> DiffPoly {
        let mut p = DiffPoly::zero();
        p.add_term(m.clone(), Rat::one());
        p
    }
}

impl AddAssign<&LambdaValue> for LambdaValue {
    fn add_assign(&mut self, rhs: &LambdaValue) {
        for (p, c) in &rhs.local {
            self.add_local(*p, c.clone());
        }
        for ((mp, mq), c) in &rhs.nonlocal {
            let key = (mp.clone(), mq.clone());
            let entry = self.nonlocal.entry(key).or_insert_with(Rat::zero);
            *entry += c;
            if entry.is_zero() {
                self.nonlocal.remove(&(mp.clone(), mq.clone()));
            }
        }
    }
}

impl SubAssign<&LambdaValue> for LambdaValue {
    fn sub_assign(&mut self, rhs: &LambdaValue) {
        let n = -rhs;
        *self += &n;
    }
}

impl Add for &LambdaValue {
    type Output = LambdaValue;
    fn add(self, rhs: &LambdaValue) -> LambdaValue {
        let mut out = self.clone();
        out += rhs;
        out
    }
}

impl Sub for &LambdaValue {
    type Output = LambdaValue;
    fn sub(self, rhs: &LambdaValue) -> LambdaValue {
        let mut out = self.clone();
        out -= rhs;
        out
    }
}

impl Neg for &LambdaValue {
    type Output = LambdaValue;
    fn neg(self) -> LambdaValue {
        LambdaValue {
            local: self.local.iter().map(|(p, c)| (*p, -c)).collect(),
            nonlocal: self.nonlocal.iter().map(|(k, c)| (k.clone(), -c.clone())).collect(),
        }
    }
}

impl fmt::Display for LambdaValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let mut first = true;
        for (p, c) in self.local.iter().rev() {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            if *p == 0 {
                write!(f, "({c})")?;
            } else if *p == 1 {
                write!(f, "({c}) L", )?;
            } else {
                write!(f, "({c}) L^{p}")?;
            }
        }
        for ((mp, mq), c) in &self.nonlocal {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "({c} {mp}) (L+D)^-1 ({mq})")?;
        }
        Ok(())
    }
}

/// A polynomial in two indeterminates lambda and mu with
/// differential-polynomial coefficients; the carrier for Jacobi residuals.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LambdaMuValue {
    terms: BTreeMap<(u32, u32), DiffPoly>,
}

impl LambdaMuValue {
    pub fn zero() -> LambdaMuValue {
        LambdaMuValue::default()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add(&mut self, a: u32, b: u32, poly: DiffPoly) {
        if poly.is_zero() {
            return;
        }
        let entry = self.terms.entry((a, b)).or_insert_with(DiffPoly::zero);
        *entry += &poly;
        if entry.is_zero() {
            self.terms.remove(&(a, b));
        }
    }

    pub fn coeff(&self, a: u32, b: u32) -> DiffPoly {
        self.terms.get(&(a, b)).cloned().unwrap_or_else(DiffPoly::zero)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&(u32, u32), &DiffPoly)> {
        self.terms.iter()
    }

    /// Largest total degree `a + b` present, for reporting.
    pub fn total_degree(&self) -> Option<u32> {
        self.terms.keys().map(|&(a, b)| a + b).max()
    }
}

impl AddAssign<&LambdaMuValue> for LambdaMuValue {
    fn add_assign(&mut self, rhs: &LambdaMuValue) {
        for (&(a, b), c) in &rhs.terms {
            self.add(a, b, c.clone());
        }
    }
}

impl SubAssign<&LambdaMuValue> for LambdaMuValue {
    fn sub_assign(&mut self, rhs: &LambdaMuValue) {
        for (&(a, b), c) in &rhs.terms {
            self.add(a, b, -c);
        }
    }
}

impl fmt::Display for LambdaMuValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let mut first = true;
        for ((a, b), c) in self.terms.iter().rev() {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "({c}) L^{a} M^{b}")?;
        }
        Ok(())
    }
}
