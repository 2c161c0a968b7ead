//! Differential polynomial algebra over exact rationals.
//!
//! Generators are symbols `u_{i,ab}` indexed by a family tag, an integer
//! index `i`, a matrix position `(a, b)` and a derivative order `n`; the
//! total derivative acts by bumping `n`.  Everything is exact: coefficients
//! are arbitrary-precision rationals and no normalisation ever rounds.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};
use std::str::FromStr;

use crate::{Error, Result};

/// Exact rational scalar used everywhere in the crate.
pub type Rat = BigRational;

/// Rational from an integer.
pub fn rat_i(n: i64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

/// Rational `p / q`.
pub fn rat(p: i64, q: i64) -> Rat {
    Rat::new(BigInt::from(p), BigInt::from(q))
}

/// Generalised binomial coefficient with integer (possibly negative) top.
///
/// `binom(n, k) = n (n-1) ... (n-k+1) / k!`, so `binom(-1, 2) = 1`.
pub fn binom(n: i64, k: u32) -> Rat {
    binom_rat(&rat_i(n), k)
}

/// Generalised binomial coefficient with rational top.
pub fn binom_rat(a: &Rat, k: u32) -> Rat {
    let mut num = Rat::one();
    let mut den = BigInt::one();
    for j in 0..k {
        num *= a - rat_i(j as i64);
        den *= BigInt::from((j + 1) as i64);
    }
    num / Rat::from_integer(den)
}

/// Family tag for a generator symbol.
///
/// `U` is the default family for coefficients of an operator; `A` and `B`
/// name the two factors of a tensor product of structures; `V` is used for
/// the variables of factorisation maps and of free-field algebras.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Family {
    U,
    A,
    B,
    V,
}

impl Family {
    pub fn letter(self) -> char {
        match self {
            Family::U => 'u',
            Family::A => 'a',
            Family::B => 'b',
            Family::V => 'v',
        }
    }

    pub fn from_letter(c: char) -> Result<Family> {
        match c {
            'u' => Ok(Family::U),
            'a' => Ok(Family::A),
            'b' => Ok(Family::B),
            'v' => Ok(Family::V),
            other => Err(Error::Parse(format!("unknown family letter {other:?}"))),
        }
    }
}

/// A single generator symbol `fam_{idx,(row,col)}^{(der)}`.
///
/// Matrix positions are zero-based internally; printers add one.  The
/// ordering (family, index, row, col, der) is the canonical variable order
/// used by monomials.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarKey {
    pub fam: Family,
    pub idx: i32,
    pub row: u8,
    pub col: u8,
    pub der: u32,
}

impl VarKey {
    /// Underived generator of the default family, scalar position.
    pub fn u(idx: i32) -> VarKey {
        VarKey { fam: Family::U, idx, row: 0, col: 0, der: 0 }
    }

    /// Underived generator of the default family at a matrix position.
    pub fn u_at(idx: i32, row: u8, col: u8) -> VarKey {
        VarKey { fam: Family::U, idx, row, col, der: 0 }
    }

    /// Underived generator of an arbitrary family.
    pub fn gen(fam: Family, idx: i32, row: u8, col: u8) -> VarKey {
        VarKey { fam, idx, row, col, der: 0 }
    }

    /// Same symbol with derivative order `n`.
    pub fn with_der(self, n: u32) -> VarKey {
        VarKey { der: n, ..self }
    }

    /// Same symbol, derivative order raised by `n`.
    pub fn d(self, n: u32) -> VarKey {
        VarKey { der: self.der + n, ..self }
    }

    /// The underived symbol this key derives from.
    pub fn base(self) -> VarKey {
        VarKey { der: 0, ..self }
    }
}

/// Formal central constants: they multiply like variables but are killed by
/// the total derivative.
///
/// `C` is the generic pencil constant; `S(a, b)` is a symmetric symbol used
/// to express free-field brackets with an indeterminate Gram matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ConstKey {
    C,
    S(u8, u8),
}

impl ConstKey {
    /// Symmetric constructor: `s(a, b) == s(b, a)`.
    pub fn s(a: u8, b: u8) -> ConstKey {
        if a <= b {
            ConstKey::S(a, b)
        } else {
            ConstKey::S(b, a)
        }
    }
}

/// A monomial: a product of generator powers and formal-constant powers.
///
/// Both factor lists are sorted by key and contain no zero exponents, so
/// structural equality is semantic equality.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Monomial {
    pub vars: Vec<(VarKey, u32)>,
    pub consts: Vec<(ConstKey, u32)>,
}

impl Monomial {
    pub fn one() -> Monomial {
        Monomial::default()
    }

    pub fn var(key: VarKey) -> Monomial {
        Monomial { vars: vec![(key, 1)], consts: Vec::new() }
    }

    pub fn formal_const(key: ConstKey) -> Monomial {
        Monomial { vars: Vec::new(), consts: vec![(key, 1)] }
    }

    pub fn is_one(&self) -> bool {
        self.vars.is_empty() && self.consts.is_empty()
    }

    /// True when the monomial involves no generators (constants allowed).
    pub fn is_constant(&self) -> bool {
        self.vars.is_empty()
    }

    /// Total degree in the generators.
    pub fn degree(&self) -> u32 {
        self.vars.iter().map(|&(_, e)| e).sum()
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        Monomial {
            vars: merge_factors(&self.vars, &other.vars),
            consts: merge_factors(&self.consts, &other.consts),
        }
    }

    /// Exponent of a specific generator key (exact derivative order).
    pub fn exponent(&self, key: VarKey) -> u32 {
        self.vars
            .iter()
            .find(|&&(k, _)| k == key)
            .map(|&(_, e)| e)
            .unwrap_or(0)
    }

    fn with_exponent(&self, key: VarKey, e: u32) -> Monomial {
        let mut vars: Vec<(VarKey, u32)> =
            self.vars.iter().copied().filter(|&(k, _)| k != key).collect();
        if e > 0 {
            vars.push((key, e));
            vars.sort_unstable_by_key(|&(k, _)| k);
        }
        Monomial { vars, consts: self.consts.clone() }
    }
}

fn merge_factors<K: Ord + Copy>(a: &[(K, u32)], b: &[(K, u32)]) -> Vec<(K, u32)> {
    let mut out: Vec<(K, u32)> = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push((a[i].0, a[i].1 + b[j].1));
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Verdict of the total-derivative test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TotalDerivative {
    /// All variational derivatives vanish and there is no constant part.
    Yes,
    /// The variational derivative in this generator is nonzero.
    NonzeroVarder(VarKey),
    /// All variational derivatives vanish but a constant remainder survives.
    ConstantObstruction(DiffPoly),
}

/// A differential polynomial: a finite rational combination of monomials.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DiffPoly {
    terms: BTreeMap<Monomial, Rat>,
}

impl DiffPoly {
    pub fn zero() -> DiffPoly {
        DiffPoly::default()
    }

    pub fn one() -> DiffPoly {
        DiffPoly::constant(Rat::one())
    }

    pub fn constant(c: Rat) -> DiffPoly {
        let mut p = DiffPoly::zero();
        p.add_term(Monomial::one(), c);
        p
    }

    pub fn from_int(n: i64) -> DiffPoly {
        DiffPoly::constant(rat_i(n))
    }

    /// The generator `key` as a polynomial.
    pub fn gen(key: VarKey) -> DiffPoly {
        let mut p = DiffPoly::zero();
        p.add_term(Monomial::var(key), Rat::one());
        p
    }

    /// A formal central constant as a polynomial.
    pub fn formal_const(key: ConstKey) -> DiffPoly {
        let mut p = DiffPoly::zero();
        p.add_term(Monomial::formal_const(key), Rat::one());
        p
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// True when no generator occurs (formal constants still may).
    pub fn is_constant(&self) -> bool {
        self.terms.keys().all(Monomial::is_constant)
    }

    /// The generator-free part of the polynomial.
    pub fn constant_part(&self) -> DiffPoly {
        DiffPoly {
            terms: self
                .terms
                .iter()
                .filter(|(m, _)| m.is_constant())
                .map(|(m, c)| (m.clone(), c.clone()))
                .collect(),
        }
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &Rat)> {
        self.terms.iter()
    }

    /// Coefficient of an exact monomial.
    pub fn coeff(&self, m: &Monomial) -> Rat {
        self.terms.get(m).cloned().unwrap_or_else(Rat::zero)
    }

    /// Add `c * m`, dropping the entry if the sum cancels.
    pub fn add_term(&mut self, m: Monomial, c: Rat) {
        if c.is_zero() {
            return;
        }
        let entry = self.terms.entry(m);
        match entry {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if o.get().is_zero() {
                    o.remove();
                }
            }
        }
    }

    pub fn scale(&self, c: &Rat) -> DiffPoly {
        if c.is_zero() {
            return DiffPoly::zero();
        }
        DiffPoly {
            terms: self.terms.iter().map(|(m, a)| (m.clone(), a * c)).collect(),
        }
    }

    pub fn pow(&self, e: u32) -> DiffPoly {
        let mut acc = DiffPoly::one();
        for _ in 0..e {
            acc = &acc * self;
        }
        acc
    }

    /// Total derivative: formal constants die, each generator factor bumps
    /// its derivative order by the Leibniz rule.
    pub fn total_derivative(&self) -> DiffPoly {
        let mut out = DiffPoly::zero();
        for (m, c) in &self.terms {
            for &(key, e) in &m.vars {
                let mut stripped = m.with_exponent(key, e - 1);
                stripped = stripped.mul(&Monomial::var(key.d(1)));
                out.add_term(stripped, c * rat_i(e as i64));
            }
        }
        out
    }

    /// `n`-th total derivative.
    pub fn nth_derivative(&self, n: u32) -> DiffPoly {
        let mut p = self.clone();
        for _ in 0..n {
            p = p.total_derivative();
        }
        p
    }

    /// Formal partial derivative with respect to one exact symbol.
    pub fn partial(&self, key: VarKey) -> DiffPoly {
        let mut out = DiffPoly::zero();
        for (m, c) in &self.terms {
            let e = m.exponent(key);
            if e > 0 {
                out.add_term(m.with_exponent(key, e - 1), c * rat_i(e as i64));
            }
        }
        out
    }

    /// Highest derivative order of `base` occurring (None if absent).
    pub fn max_der(&self, base: VarKey) -> Option<u32> {
        let base = base.base();
        self.terms
            .keys()
            .flat_map(|m| m.vars.iter())
            .filter(|&&(k, _)| k.base() == base)
            .map(|&(k, _)| k.der)
            .max()
    }

    /// Variational derivative in the generator `base`:
    /// the alternating sum of total derivatives of partials.
    pub fn varder(&self, base: VarKey) -> DiffPoly {
        let base = base.base();
        let top = match self.max_der(base) {
            Some(n) => n,
            None => return DiffPoly::zero(),
        };
        let mut out = DiffPoly::zero();
        for n in 0..=top {
            let p = self.partial(base.with_der(n));
            if p.is_zero() {
                continue;
            }
            let mut d = p.nth_derivative(n);
            if n % 2 == 1 {
                d = -&d;
            }
            out += &d;
        }
        out
    }

    /// All underived generator symbols occurring in the polynomial.
    pub fn vars_used(&self) -> BTreeSet<VarKey> {
        self.terms
            .keys()
            .flat_map(|m| m.vars.iter())
            .map(|&(k, _)| k.base())
            .collect()
    }

    /// Decide whether the polynomial is a total derivative.
    pub fn is_total_derivative(&self) -> TotalDerivative {
        for base in self.vars_used() {
            let v = self.varder(base);
            if !v.is_zero() {
                return TotalDerivative::NonzeroVarder(base);
            }
        }
        let c = self.constant_part();
        if c.is_zero() {
            TotalDerivative::Yes
        } else {
            TotalDerivative::ConstantObstruction(c)
        }
    }

    /// Replace each listed generator by a polynomial, consistently with the
    /// total derivative: `u^{(n)}` maps to the `n`-th derivative of the
    /// image of `u`.  Unlisted generators pass through.
    pub fn substitute(&self, images: &BTreeMap<VarKey, DiffPoly>) -> DiffPoly {
        let mut der_cache: BTreeMap<(VarKey, u32), DiffPoly> = BTreeMap::new();
        let mut out = DiffPoly::zero();
        for (m, c) in &self.terms {
            let mut acc = DiffPoly::constant(c.clone());
            let mut passthrough = Monomial {
                vars: Vec::new(),
                consts: m.consts.clone(),
            };
            for &(key, e) in &m.vars {
                match images.get(&key.base()) {
                    None => {
                        passthrough.vars.push((key, e));
                    }
                    Some(img) => {
                        let dimg = der_cache
                            .entry((key.base(), key.der))
                            .or_insert_with(|| img.nth_derivative(key.der))
                            .clone();
                        acc = &acc * &dimg.pow(e);
                    }
                }
            }
            let mut shifted = DiffPoly::zero();
            for (mm, cc) in acc.terms {
                shifted.add_term(mm.mul(&passthrough), cc);
            }
            out += &shifted;
        }
        out
    }

    /// Kill every monomial containing a generator matched by the predicate.
    ///
    /// The predicate sees each occurring key (with its derivative order);
    /// matching any derivative of a generator kills the whole monomial, so
    /// passing a base-only test via `key.base()` zeroes the generator as a
    /// differential variable.
    pub fn zero_out<F: Fn(VarKey) -> bool>(&self, pred: F) -> DiffPoly {
        DiffPoly {
            terms: self
                .terms
                .iter()
                .filter(|(m, _)| !m.vars.iter().any(|&(k, _)| pred(k)))
                .map(|(m, c)| (m.clone(), c.clone()))
                .collect(),
        }
    }

    /// Coefficient of `key^k` as a polynomial in the formal constants:
    /// keep the terms whose exponent of `key` is exactly `k`, with that
    /// factor removed.
    pub fn coeff_of_const(&self, key: ConstKey, k: u32) -> DiffPoly {
        let mut out = DiffPoly::zero();
        for (m, c) in &self.terms {
            let e = m
                .consts
                .iter()
                .find(|&&(ck, _)| ck == key)
                .map(|&(_, e)| e)
                .unwrap_or(0);
            if e == k {
                let stripped = Monomial {
                    vars: m.vars.clone(),
                    consts: m.consts.iter().copied().filter(|&(ck, _)| ck != key).collect(),
                };
                out.add_term(stripped, c.clone());
            }
        }
        out
    }

    /// Highest exponent of a formal constant occurring.
    pub fn max_const_power(&self, key: ConstKey) -> u32 {
        self.terms
            .keys()
            .flat_map(|m| m.consts.iter())
            .filter(|&&(ck, _)| ck == key)
            .map(|&(_, e)| e)
            .max()
            .unwrap_or(0)
    }

    /// Signed content: the rational `c` with `self = c * primitive`, where
    /// `primitive` has coprime integer coefficients and its first term (in
    /// monomial order) is positive.  Zero for the zero polynomial.
    pub fn content(&self) -> Rat {
        let mut it = self.terms.values();
        let first = match it.next() {
            Some(c) => c,
            None => return Rat::zero(),
        };
        let mut num = first.numer().abs();
        let mut den = first.denom().clone();
        for c in it {
            num = num_integer::Integer::gcd(&num, &c.numer().abs());
            den = num_integer::Integer::lcm(&den, c.denom());
        }
        let mut content = Rat::new(num, den);
        if first.is_negative() {
            content = -content;
        }
        content
    }

    /// Split into `(content, primitive)` with `self = content * primitive`.
    pub fn content_primitive(&self) -> (Rat, DiffPoly) {
        let c = self.content();
        if c.is_zero() {
            return (c, DiffPoly::zero());
        }
        let inv = Rat::one() / c.clone();
        (c, self.scale(&inv))
    }

    /// Serialise to the interchange form: a list of term objects
    /// `{"coeff": "p/q", "vars": [[i, a, b, n, exp], ...]}`, with an
    /// optional `"consts"` list and a trailing family letter on var tuples
    /// of non-default families.
    pub fn to_json(&self) -> serde_json::Value {
        let mut terms = Vec::new();
        for (m, c) in &self.terms {
            let mut obj = serde_json::Map::new();
            obj.insert("coeff".into(), serde_json::Value::String(c.to_string()));
            let vars: Vec<serde_json::Value> = m
                .vars
                .iter()
                .map(|&(k, e)| {
                    let mut tup = vec![
                        serde_json::json!(k.idx),
                        serde_json::json!(k.row),
                        serde_json::json!(k.col),
                        serde_json::json!(k.der),
                        serde_json::json!(e),
                    ];
                    if k.fam != Family::U {
                        tup.push(serde_json::json!(k.fam.letter().to_string()));
                    }
                    serde_json::Value::Array(tup)
                })
                .collect();
            obj.insert("vars".into(), serde_json::Value::Array(vars));
            if !m.consts.is_empty() {
                let consts: Vec<serde_json::Value> = m
                    .consts
                    .iter()
                    .map(|&(k, e)| match k {
                        ConstKey::C => serde_json::json!(["c", e]),
                        ConstKey::S(a, b) => serde_json::json!(["s", a, b, e]),
                    })
                    .collect();
                obj.insert("consts".into(), serde_json::Value::Array(consts));
            }
            terms.push(serde_json::Value::Object(obj));
        }
        serde_json::Value::Array(terms)
    }

    pub fn from_json(v: &serde_json::Value) -> Result<DiffPoly> {
        let arr = v
            .as_array()
            .ok_or_else(|| Error::Parse("polynomial JSON must be an array".into()))?;
        let mut out = DiffPoly::zero();
        for term in arr {
            let obj = term
                .as_object()
                .ok_or_else(|| Error::Parse("term must be an object".into()))?;
            let coeff_str = obj
                .get("coeff")
                .and_then(|c| c.as_str())
                .ok_or_else(|| Error::Parse("term missing string coeff".into()))?;
            let coeff = Rat::from_str(coeff_str)
                .map_err(|e| Error::Parse(format!("bad coefficient {coeff_str:?}: {e}")))?;
            let mut mono = Monomial::one();
            if let Some(vars) = obj.get("vars") {
                let vars = vars
                    .as_array()
                    .ok_or_else(|| Error::Parse("vars must be an array".into()))?;
                for tup in vars {
                    let tup = tup
                        .as_array()
                        .ok_or_else(|| Error::Parse("var tuple must be an array".into()))?;
                    if tup.len() < 5 {
                        return Err(Error::Parse("var tuple needs 5 entries".into()));
                    }
                    let idx = tup[0]
                        .as_i64()
                        .ok_or_else(|| Error::Parse("bad var index".into()))?;
                    let row = tup[1]
                        .as_u64()
                        .ok_or_else(|| Error::Parse("bad var row".into()))?;
                    let col = tup[2]
                        .as_u64()
                        .ok_or_else(|| Error::Parse("bad var col".into()))?;
                    let der = tup[3]
                        .as_u64()
                        .ok_or_else(|| Error::Parse("bad var der".into()))?;
                    let exp = tup[4]
                        .as_u64()
                        .ok_or_else(|| Error::Parse("bad var exponent".into()))?;
                    let fam = match tup.get(5) {
                        None => Family::U,
                        Some(f) => {
                            let s = f
                                .as_str()
                                .ok_or_else(|| Error::Parse("bad family tag".into()))?;
                            let c = s
                                .chars()
                                .next()
                                .ok_or_else(|| Error::Parse("empty family tag".into()))?;
                            Family::from_letter(c)?
                        }
                    };
                    let key = VarKey {
                        fam,
                        idx: idx as i32,
                        row: row as u8,
                        col: col as u8,
                        der: der as u32,
                    };
                    mono = mono.mul(&Monomial {
                        vars: vec![(key, exp as u32)],
                        consts: Vec::new(),
                    });
                }
            }
            if let Some(consts) = obj.get("consts") {
                let consts = consts
                    .as_array()
                    .ok_or_else(|| Error::Parse("consts must be an array".into()))?;
                for tup in consts {
                    let tup = tup
                        .as_array()
                        .ok_or_else(|| Error::Parse("const tuple must be an array".into()))?;
                    let tag = tup
                        .first()
                        .and_then(|t| t.as_str())
                        .ok_or_else(|| Error::Parse("const tuple needs a tag".into()))?;
                    let (key, exp) = match tag {
                        "c" => {
                            let e = tup
                                .get(1)
                                .and_then(|e| e.as_u64())
                                .ok_or_else(|| Error::Parse("bad const exponent".into()))?;
                            (ConstKey::C, e)
                        }
                        "s" => {
                            let a = tup
                                .get(1)
                                .and_then(|e| e.as_u64())
                                .ok_or_else(|| Error::Parse("bad s row".into()))?;
                            let b = tup
                                .get(2)
                                .and_then(|e| e.as_u64())
                                .ok_or_else(|| Error::Parse("bad s col".into()))?;
                            let e = tup
                                .get(3)
                                .and_then(|e| e.as_u64())
                                .ok_or_else(|| Error::Parse("bad const exponent".into()))?;
                            (ConstKey::s(a as u8, b as u8), e)
                        }
                        other => {
                            return Err(Error::Parse(format!("unknown const tag {other:?}")))
                        }
                    };
                    mono = mono.mul(&Monomial {
                        vars: Vec::new(),
                        consts: vec![(key, exp as u32)],
                    });
                }
            }
            out.add_term(mono, coeff);
        }
        Ok(out)
    }
}

impl AddAssign<&DiffPoly> for DiffPoly {
    fn add_assign(&mut self, rhs: &DiffPoly) {
        for (m, c) in &rhs.terms {
            self.add_term(m.clone(), c.clone());
        }
    }
}

impl SubAssign<&DiffPoly> for DiffPoly {
    fn sub_assign(&mut self, rhs: &DiffPoly) {
        for (m, c) in &rhs.terms {
            self.add_term(m.clone(), -c.clone());
        }
    }
}

impl Add for &DiffPoly {
    type Output = DiffPoly;
    fn add(self, rhs: &DiffPoly) -> DiffPoly {
        let mut out = self.clone();
        out += rhs;
        out
    }
}

impl Sub for &DiffPoly {
    type Output = DiffPoly;
    fn sub(self, rhs: &DiffPoly) -> DiffPoly {
        let mut out = self.clone();
        out -= rhs;
        out
    }
}

impl Neg for &DiffPoly {
    type Output = DiffPoly;
    fn neg(self) -> DiffPoly {
        DiffPoly {
            terms: self.terms.iter().map(|(m, c)| (m.clone(), -c.clone())).collect(),
        }
    }
}

impl Mul for &DiffPoly {
    type Output = DiffPoly;
    fn mul(self, rhs: &DiffPoly) -> DiffPoly {
        let mut out = DiffPoly::zero();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &rhs.terms {
                out.add_term(ma.mul(mb), ca * cb);
            }
        }
        out
    }
}

fn write_der_marks(f: &mut fmt::Formatter<'_>, der: u32) -> fmt::Result {
    if der <= 3 {
        for _ in 0..der {
            write!(f, "'")?;
        }
        Ok(())
    } else {
        write!(f, "^({der})")
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_one() {
            return write!(f, "1");
        }
        let mut first = true;
        for &(k, e) in &self.consts {
            if !first {
                write!(f, " ")?;
            }
            first = false;
            match k {
                ConstKey::C => write!(f, "c")?,
                ConstKey::S(a, b) => write!(f, "s{}{}", a + 1, b + 1)?,
            }
            if e > 1 {
                write!(f, "^{e}")?;
            }
        }
        for &(k, e) in &self.vars {
            if !first {
                write!(f, " ")?;
            }
            first = false;
            write!(f, "{}{}", k.fam.letter(), k.idx)?;
            if k.row != 0 || k.col != 0 {
                write!(f, "_{}{}", k.row + 1, k.col + 1)?;
            }
            write_der_marks(f, k.der)?;
            if e > 1 {
                write!(f, "^{e}")?;
            }
        }
        Ok(())
    }
}

impl fmt::Display for DiffPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let mut first = true;
        for (m, c) in &self.terms {
            let neg = c.is_negative();
            let mag = c.abs();
            if first {
                if neg {
                    write!(f, "-")?;
                }
            } else if neg {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            first = false;
            if m.is_one() {
                write!(f, "{mag}")?;
            } else if mag.is_one() {
                write!(f, "{m}")?;
            } else {
                write!(f, "{mag} {m}")?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use proptest::prelude::*;

    /// Strategy for a small differential polynomial in scalar generators
    /// `u_{-1}` and `u_{-2}` with derivative order at most 2.
    pub fn small_poly() -> impl Strategy<Value = DiffPoly> {
        let var = (prop_oneof![Just(-1i32), Just(-2i32)], 0u32..3).prop_map(|(i, n)| {
            VarKey::u(i).with_der(n)
        });
        let mono = proptest::collection::vec((var, 1u32..3), 0..3).prop_map(|factors| {
            let mut m = Monomial::one();
            for (k, e) in factors {
                m = m.mul(&Monomial { vars: vec![(k, e)], consts: Vec::new() });
            }
            m
        });
        let term = (mono, -4i64..5).prop_map(|(m, c)| (m, rat_i(c)));
        proptest::collection::vec(term, 0..5).prop_map(|terms| {
            let mut p = DiffPoly::zero();
            for (m, c) in terms {
                p.add_term(m, c);
            }
            p
        })
    }
}
