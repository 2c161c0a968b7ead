//! Matrix pseudodifferential operators with truncated symbol calculus.
//!
//! An operator is stored as a map from integer exponents to matrix
//! coefficients.  Since generic symbols have infinitely many negative-order
//! coefficients, every operator carries a *floor* and an *exact* flag:
//! an exact operator is a genuine finite sum, while an inexact one is only
//! known at exponents at or above its floor.  All operations propagate the
//! floor conservatively, so a stored coefficient is always correct.

use num_traits::{One, Zero};
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};
use std::str::FromStr;

use crate::diffalg::{binom, DiffPoly, Rat};
use crate::{Error, Result};

/// Truncation control for operations that produce infinite expansions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TruncationPolicy {
    /// Exponent below which coefficients are discarded.
    pub floor: i64,
    /// Extra depth used by stability re-checks.
    pub margin: u32,
}

impl Default for TruncationPolicy {
    fn default() -> TruncationPolicy {
        TruncationPolicy { floor: -12, margin: 2 }
    }
}

impl TruncationPolicy {
    pub fn with_floor(floor: i64) -> TruncationPolicy {
        TruncationPolicy { floor, ..Default::default() }
    }

    /// The same policy pushed deeper by the margin, for stability checks.
    pub fn deeper(&self) -> TruncationPolicy {
        TruncationPolicy { floor: self.floor - self.margin as i64, margin: self.margin }
    }
}

/// A square matrix of differential polynomials.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatPoly {
    m: usize,
    entries: Vec<DiffPoly>,
}

impl MatPoly {
    pub fn zero(m: usize) -> MatPoly {
        MatPoly { m, entries: vec![DiffPoly::zero(); m * m] }
    }

    pub fn identity(m: usize) -> MatPoly {
        let mut out = MatPoly::zero(m);
        for a in 0..m {
            out.set_entry(a, a, DiffPoly::one());
        }
        out
    }

    /// One-by-one matrix holding a scalar polynomial.
    pub fn scalar(p: DiffPoly) -> MatPoly {
        MatPoly { m: 1, entries: vec![p] }
    }

    /// The elementary matrix with a single nonzero entry.
    pub fn unit(m: usize, row: usize, col: usize, p: DiffPoly) -> MatPoly {
        let mut out = MatPoly::zero(m);
        out.set_entry(row, col, p);
        out
    }

    pub fn from_fn<F: FnMut(usize, usize) -> DiffPoly>(m: usize, mut f: F) -> MatPoly {
        let mut out = MatPoly::zero(m);
        for a in 0..m {
            for b in 0..m {
                out.set_entry(a, b, f(a, b));
            }
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn entry(&self, row: usize, col: usize) -> &DiffPoly {
        &self.entries[row * self.m + col]
    }

    pub fn set_entry(&mut self, row: usize, col: usize, p: DiffPoly) {
        self.entries[row * self.m + col] = p;
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(DiffPoly::is_zero)
    }

    /// True when every entry is free of generators.
    pub fn is_constant(&self) -> bool {
        self.entries.iter().all(DiffPoly::is_constant)
    }

    pub fn transpose(&self) -> MatPoly {
        MatPoly::from_fn(self.m, |a, b| self.entry(b, a).clone())
    }

    pub fn scale(&self, c: &Rat) -> MatPoly {
        self.map(|p| p.scale(c))
    }

    pub fn scale_poly(&self, h: &DiffPoly) -> MatPoly {
        self.map(|p| h * p)
    }

    pub fn map<F: Fn(&DiffPoly) -> DiffPoly>(&self, f: F) -> MatPoly {
        MatPoly { m: self.m, entries: self.entries.iter().map(f).collect() }
    }

    pub fn total_derivative(&self) -> MatPoly {
        self.map(DiffPoly::total_derivative)
    }

    pub fn nth_derivative(&self, n: u32) -> MatPoly {
        self.map(|p| p.nth_derivative(n))
    }

    pub fn trace(&self) -> DiffPoly {
        let mut out = DiffPoly::zero();
        for a in 0..self.m {
            out += self.entry(a, a);
        }
        out
    }

    /// Invert a matrix of constants by Gaussian elimination.
    pub fn inverse_constant(&self) -> Result<MatPoly> {
        let m = self.m;
        let mut a: Vec<Vec<Rat>> = Vec::with_capacity(m);
        for row in 0..m {
            let mut r = Vec::with_capacity(2 * m);
            for col in 0..m {
                let p = self.entry(row, col);
                if !p.is_constant() {
                    return Err(Error::Unsupported(
                        "matrix inversion needs constant entries".into(),
                    ));
                }
                r.push(p.coeff(&crate::diffalg::Monomial::one()));
            }
            for col in 0..m {
                r.push(if col == row { Rat::one() } else { Rat::zero() });
            }
            a.push(r);
        }
        for col in 0..m {
            let pivot = (col..m)
                .find(|&r| !a[r][col].is_zero())
                .ok_or_else(|| Error::Singular("constant matrix is not invertible".into()))?;
            a.swap(col, pivot);
            let inv = Rat::one() / a[col][col].clone();
            for j in 0..2 * m {
                a[col][j] = &a[col][j] * &inv;
            }
            for r in 0..m {
                if r != col && !a[r][col].is_zero() {
                    let factor = a[r][col].clone();
                    for j in 0..2 * m {
                        let sub = &a[col][j] * &factor;
                        a[r][j] = &a[r][j] - &sub;
                    }
                }
            }
        }
        Ok(MatPoly::from_fn(m, |r, c| {
            DiffPoly::constant(a[r][m + c].clone())
        }))
    }
}

impl Add for &MatPoly {
    type Output = MatPoly;
    fn add(self, rhs: &MatPoly) -> MatPoly {
        assert_eq!(self.m, rhs.m, "matrix dimension mismatch");
        MatPoly {
            m: self.m,
            entries: self
                .entries
                .iter()
                .zip(&rhs.entries)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

impl Sub for &MatPoly {
    type Output = MatPoly;
    fn sub(self, rhs: &MatPoly) -> MatPoly {
        assert_eq!(self.m, rhs.m, "matrix dimension mismatch");
        MatPoly {
            m: self.m,
            entries: self
                .entries
                .iter()
                .zip(&rhs.entries)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

impl Neg for &MatPoly {
    type Output = MatPoly;
    fn neg(self) -> MatPoly {
        self.map(|p| -p)
    }
}

impl Mul for &MatPoly {
    type Output = MatPoly;
    fn mul(self, rhs: &MatPoly) -> MatPoly {
        assert_eq!(self.m, rhs.m, "matrix dimension mismatch");
        MatPoly::from_fn(self.m, |a, b| {
            let mut acc = DiffPoly::zero();
            for k in 0..self.m {
                if !self.entry(a, k).is_zero() && !rhs.entry(k, b).is_zero() {
                    acc += &(self.entry(a, k) * rhs.entry(k, b));
                }
            }
            acc
        })
    }
}

/// A matrix pseudodifferential operator with truncation bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PsiDO {
    m: usize,
    floor: i64,
    exact: bool,
    coeffs: BTreeMap<i64, MatPoly>,
}

impl PsiDO {
    /// The zero operator, exact.
    pub fn zero(m: usize) -> PsiDO {
        PsiDO { m, floor: 0, exact: true, coeffs: BTreeMap::new() }
    }

    /// An empty inexact operator known only above `floor`.
    pub fn truncated(m: usize, floor: i64) -> PsiDO {
        PsiDO { m, floor, exact: false, coeffs: BTreeMap::new() }
    }

    /// A single-term operator `coeff d^e`, exact.
    pub fn single(e: i64, coeff: MatPoly) -> PsiDO {
        let mut out = PsiDO::zero(coeff.dim());
        out.add_term(e, coeff);
        out
    }

    /// The operator `d^n` (identity coefficient), exact.
    pub fn d_pow(m: usize, n: i64) -> PsiDO {
        PsiDO::single(n, MatPoly::identity(m))
    }

    pub fn identity(m: usize) -> PsiDO {
        PsiDO::d_pow(m, 0)
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn is_exact(&self) -> bool {
        self.exact
    }

    pub fn floor(&self) -> i64 {
        self.floor
    }

    /// Exponent below which coefficients are unknown; `None` when exact.
    pub fn known_floor(&self) -> Option<i64> {
        if self.exact {
            None
        } else {
            Some(self.floor)
        }
    }

    pub fn order(&self) -> Option<i64> {
        self.coeffs.keys().next_back().copied()
    }

    pub fn min_exp(&self) -> Option<i64> {
        self.coeffs.keys().next().copied()
    }

    pub fn is_zero_stored(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn coeff_terms(&self) -> impl Iterator<Item = (&i64, &MatPoly)> {
        self.coeffs.iter()
    }

    pub fn add_term(&mut self, e: i64, coeff: MatPoly) {
        assert_eq!(coeff.dim(), self.m, "matrix dimension mismatch");
        if coeff.is_zero() {
            return;
        }
        if !self.exact && e < self.floor {
            return;
        }
        match self.coeffs.entry(e) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(coeff);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let sum = &*o.get() + &coeff;
                if sum.is_zero() {
                    o.remove();
                } else {
                    *o.get_mut() = sum;
                }
            }
        }
    }

    /// Coefficient of `d^e`; fails when the exponent is below the floor of
    /// an inexact operator.
    pub fn coeff(&self, e: i64) -> Result<MatPoly> {
        if !self.exact && e < self.floor {
            return Err(Error::Truncation(format!(
                "coefficient at exponent {e} requested, floor is {}",
                self.floor
            )));
        }
        Ok(self
            .coeffs
            .get(&e)
            .cloned()
            .unwrap_or_else(|| MatPoly::zero(self.m)))
    }

    fn coeff_or_zero(&self, e: i64) -> MatPoly {
        self.coeffs
            .get(&e)
            .cloned()
            .unwrap_or_else(|| MatPoly::zero(self.m))
    }

    fn combine_meta(&self, rhs: &PsiDO) -> (bool, i64) {
        let exact = self.exact && rhs.exact;
        let floor = match (self.exact, rhs.exact) {
            (true, true) => 0,
            (false, true) => self.floor,
            (true, false) => rhs.floor,
            (false, false) => self.floor.max(rhs.floor),
        };
        (exact, floor)
    }

    fn retain_floor(&mut self) {
        if !self.exact {
            let floor = self.floor;
            self.coeffs.retain(|&e, _| e >= floor);
        }
    }

    pub fn scale(&self, c: &Rat) -> PsiDO {
        if c.is_zero() {
            return PsiDO::zero(self.m);
        }
        PsiDO {
            m: self.m,
            floor: self.floor,
            exact: self.exact,
            coeffs: self.coeffs.iter().map(|(e, f)| (*e, f.scale(c))).collect(),
        }
    }

    pub fn scale_poly(&self, h: &DiffPoly) -> PsiDO {
        if h.is_zero() {
            return PsiDO::zero(self.m);
        }
        PsiDO {
            m: self.m,
            floor: self.floor,
            exact: self.exact,
            coeffs: self.coeffs.iter().map(|(e, f)| (*e, f.scale_poly(h))).collect(),
        }
    }

    /// Left multiplication by a matrix (an order-zero operator composed on
    /// the left touches no derivatives).
    pub fn left_mul(&self, mat: &MatPoly) -> PsiDO {
        let mut out = PsiDO {
            m: self.m,
            floor: self.floor,
            exact: self.exact,
            coeffs: BTreeMap::new(),
        };
        for (e, f) in &self.coeffs {
            out.add_term(*e, mat * f);
        }
        out
    }

    /// Apply each matrix entry transformation; truncation data unchanged.
    pub fn map_coeffs<F: Fn(&MatPoly) -> MatPoly>(&self, f: F) -> PsiDO {
        let mut out = PsiDO {
            m: self.m,
            floor: self.floor,
            exact: self.exact,
            coeffs: BTreeMap::new(),
        };
        for (e, c) in &self.coeffs {
            out.add_term(*e, f(c));
        }
        out
    }

    /// Composition `self . other` of symbols: the coefficient at exponent
    /// `e` is the sum over `n + k - s = e` of `binom(n, s) A_n B_k^{(s)}`.
    ///
    /// The floor of the result propagates from the inputs; the policy floor
    /// is only used when two exact operators produce an infinite expansion.
    pub fn compose(&self, other: &PsiDO, policy: &TruncationPolicy) -> PsiDO {
        assert_eq!(self.m, other.m, "matrix dimension mismatch");
        if self.is_zero_stored() || other.is_zero_stored() {
            return PsiDO::zero(self.m);
        }
        let all_b_const = other.coeffs.values().all(MatPoly::is_constant);
        let a_nonneg = self.min_exp().map(|e| e >= 0).unwrap_or(true);
        let exact_out = self.exact && other.exact && (a_nonneg || all_b_const);
        let floor_out = if exact_out {
            0
        } else {
            let mut cands: Vec<i64> = Vec::new();
            if !self.exact {
                cands.push(self.floor + other.order().unwrap_or(0));
            }
            if !other.exact {
                cands.push(other.floor + self.order().unwrap_or(0));
            }
            if cands.is_empty() {
                cands.push(policy.floor);
            }
            cands.into_iter().max().unwrap()
        };
        let mut out = PsiDO {
            m: self.m,
            floor: floor_out,
            exact: exact_out,
            coeffs: BTreeMap::new(),
        };
        for (&n, an) in &self.coeffs {
            for (&k, bk) in &other.coeffs {
                let s_cap: i64 = if n >= 0 {
                    n
                } else if bk.is_constant() {
                    0
                } else {
                    n + k - floor_out
                };
                if s_cap < 0 {
                    continue;
                }
                let mut derived = bk.clone();
                for s in 0..=s_cap {
                    if s > 0 {
                        derived = derived.total_derivative();
                        if derived.is_zero() {
                            break;
                        }
                    }
                    let b = binom(n, s as u32);
                    if b.is_zero() {
                        continue;
                    }
                    out.add_term(n + k - s, (an * &derived).scale(&b));
                }
            }
        }
        out.retain_floor();
        out
    }

    /// Nonnegative operator power by repeated composition.
    pub fn pow_int(&self, k: u32, policy: &TruncationPolicy) -> PsiDO {
        let mut acc = PsiDO::identity(self.m);
        for _ in 0..k {
            acc = acc.compose(self, policy);
        }
        acc
    }

    /// Formal adjoint: transpose coefficients and flip derivatives,
    /// `(A d^n)* = (-d)^n . A^t`.
    pub fn adjoint(&self, policy: &TruncationPolicy) -> PsiDO {
        let neg_const = self
            .coeffs
            .iter()
            .all(|(&n, c)| n >= 0 || c.is_constant());
        let exact_out = self.exact && neg_const;
        let floor_out = if exact_out {
            0
        } else if !self.exact {
            self.floor
        } else {
            policy.floor
        };
        let mut out = PsiDO {
            m: self.m,
            floor: floor_out,
            exact: exact_out,
            coeffs: BTreeMap::new(),
        };
        for (&n, an) in &self.coeffs {
            let sign = if n.rem_euclid(2) == 0 { Rat::one() } else { -Rat::one() };
            let s_cap: i64 = if n >= 0 {
                n
            } else if an.is_constant() {
                0
            } else {
                n - floor_out
            };
            if s_cap < 0 {
                continue;
            }
            let mut derived = an.transpose();
            for s in 0..=s_cap {
                if s > 0 {
                    derived = derived.total_derivative();
                    if derived.is_zero() {
                        break;
                    }
                }
                let b = &binom(n, s as u32) * &sign;
                if b.is_zero() {
                    continue;
                }
                out.add_term(n - s, derived.scale(&b));
            }
        }
        out.retain_floor();
        out
    }

    /// Coefficient of `d^{-1}`.
    pub fn residue(&self) -> Result<MatPoly> {
        self.coeff(-1)
    }

    /// Matrix trace of the residue.
    pub fn trace_residue(&self) -> Result<DiffPoly> {
        Ok(self.residue()?.trace())
    }

    /// Split into the differential part (exponents >= 0, always exact) and
    /// the integral part (exponents < 0).
    pub fn split_plus_minus(&self) -> (PsiDO, PsiDO) {
        let mut plus = PsiDO::zero(self.m);
        let mut minus = PsiDO {
            m: self.m,
            floor: self.floor,
            exact: self.exact,
            coeffs: BTreeMap::new(),
        };
        for (&e, c) in &self.coeffs {
            if e >= 0 {
                plus.add_term(e, c.clone());
            } else {
                minus.add_term(e, c.clone());
            }
        }
        (plus, minus)
    }

    pub fn plus_part(&self) -> PsiDO {
        self.split_plus_minus().0
    }

    pub fn minus_part(&self) -> PsiDO {
        self.split_plus_minus().1
    }

    /// Monic `n`-th root: for an operator of order `N = n q` with identity
    /// leading coefficient, the unique monic symbol `R` of order `q` with
    /// `R^n = self` (to the achievable depth).
    pub fn nth_root(&self, n: u32, policy: &TruncationPolicy) -> Result<PsiDO> {
        if n == 0 {
            return Err(Error::Unsupported("zeroth root".into()));
        }
        if n == 1 {
            return Ok(self.clone());
        }
        let order = self
            .order()
            .ok_or_else(|| Error::Unsupported("root of the zero operator".into()))?;
        if order < 0 || order % n as i64 != 0 {
            return Err(Error::Unsupported(format!(
                "order {order} is not a positive multiple of {n}"
            )));
        }
        let q = order / n as i64;
        if self.coeff_or_zero(order) != MatPoly::identity(self.m) {
            return Err(Error::Unsupported(
                "root extraction needs an identity leading coefficient".into(),
            ));
        }
        // Depth we can certify: coefficient r_t consumes the input at
        // exponent t + order - q.
        if let Some(kf) = self.known_floor() {
            if policy.floor < kf - order + q {
                return Err(Error::Truncation(format!(
                    "root floor {} needs input known down to {}, floor is {kf}",
                    policy.floor,
                    policy.floor + order - q
                )));
            }
        }
        let mut root = PsiDO {
            m: self.m,
            floor: policy.floor,
            exact: false,
            coeffs: BTreeMap::new(),
        };
        root.add_term(q, MatPoly::identity(self.m));
        let inv_n = Rat::one() / crate::diffalg::rat_i(n as i64);
        for t in (policy.floor..q).rev() {
            let power = root.pow_int(n, policy);
            let defect = &self.coeff_or_zero(t + order - q) - &power.coeff_or_zero(t + order - q);
            root.add_term(t, defect.scale(&inv_n));
        }
        Ok(root)
    }

    /// Two-sided inverse, for operators whose leading coefficient is an
    /// invertible constant matrix.
    pub fn inverse(&self, policy: &TruncationPolicy) -> Result<PsiDO> {
        let order = self
            .order()
            .ok_or_else(|| Error::Singular("inverse of the zero operator".into()))?;
        let lead_inv = self.coeff_or_zero(order).inverse_constant()?;
        let mut inv = PsiDO {
            m: self.m,
            floor: policy.floor,
            exact: false,
            coeffs: BTreeMap::new(),
        };
        for t in (policy.floor..=-order).rev() {
            // After fixing coefficients above t, the composition self.inv
            // matches the identity at all exponents above t + order.
            let current = self.compose(&inv, policy);
            let mut defect = -&current.coeff_or_zero(t + order);
            if t + order == 0 {
                defect = &defect + &MatPoly::identity(self.m);
            }
            inv.add_term(t, &lead_inv * &defect);
        }
        Ok(inv)
    }

    /// Fractional power `self^{k/n}` through the monic `n`-th root.
    pub fn frac_power(&self, k: i64, n: u32, policy: &TruncationPolicy) -> Result<PsiDO> {
        if k == 0 {
            return Ok(PsiDO::identity(self.m));
        }
        let root = self.nth_root(n, policy)?;
        if k > 0 {
            Ok(root.pow_int(k as u32, policy))
        } else {
            let rinv = root.inverse(policy)?;
            Ok(rinv.pow_int((-k) as u32, policy))
        }
    }

    /// True when the operators agree wherever both are known.
    pub fn agrees_with(&self, other: &PsiDO) -> bool {
        if self.m != other.m {
            return false;
        }
        let thr = match (self.known_floor(), other.known_floor()) {
            (None, None) => None,
            (Some(f), None) | (None, Some(f)) => Some(f),
            (Some(a), Some(b)) => Some(a.max(b)),
        };
        let keys: std::collections::BTreeSet<i64> = self
            .coeffs
            .keys()
            .chain(other.coeffs.keys())
            .copied()
            .filter(|&e| thr.map(|t| e >= t).unwrap_or(true))
            .collect();
        keys.into_iter()
            .all(|e| self.coeff_or_zero(e) == other.coeff_or_zero(e))
    }

    /// Interchange form:
    /// `{"m", "order", "floor", "exact", "coeffs": {"<e>": [[poly]]}}`.
    pub fn to_json(&self) -> serde_json::Value {
        let mut coeffs = serde_json::Map::new();
        for (e, c) in &self.coeffs {
            let rows: Vec<serde_json::Value> = (0..self.m)
                .map(|a| {
                    serde_json::Value::Array(
                        (0..self.m).map(|b| c.entry(a, b).to_json()).collect(),
                    )
                })
                .collect();
            coeffs.insert(e.to_string(), serde_json::Value::Array(rows));
        }
        serde_json::json!({
            "m": self.m,
            "order": self.order(),
            "floor": self.floor,
            "exact": self.exact,
            "coeffs": coeffs,
        })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<PsiDO> {
        let obj = v
            .as_object()
            .ok_or_else(|| Error::Parse("operator JSON must be an object".into()))?;
        let m = obj
            .get("m")
            .and_then(|x| x.as_u64())
            .ok_or_else(|| Error::Parse("operator needs integer m".into()))? as usize;
        let floor = obj
            .get("floor")
            .and_then(|x| x.as_i64())
            .ok_or_else(|| Error::Parse("operator needs integer floor".into()))?;
        let exact = obj
            .get("exact")
            .and_then(|x| x.as_bool())
            .unwrap_or(false);
        let mut out = PsiDO { m, floor, exact, coeffs: BTreeMap::new() };
        let coeffs = obj
            .get("coeffs")
            .and_then(|x| x.as_object())
            .ok_or_else(|| Error::Parse("operator needs a coeffs object".into()))?;
        for (key, rows) in coeffs {
            let e = i64::from_str(key)
                .map_err(|err| Error::Parse(format!("bad exponent {key:?}: {err}")))?;
            let rows = rows
                .as_array()
                .ok_or_else(|| Error::Parse("coefficient must be a matrix".into()))?;
            if rows.len() != m {
                return Err(Error::Dimension(format!(
                    "coefficient at {e} has {} rows, expected {m}",
                    rows.len()
                )));
            }
            let mut mat = MatPoly::zero(m);
            for (a, row) in rows.iter().enumerate() {
                let row = row
                    .as_array()
                    .ok_or_else(|| Error::Parse("matrix row must be an array".into()))?;
                if row.len() != m {
                    return Err(Error::Dimension(format!(
                        "coefficient at {e} has a row of {} entries, expected {m}",
                        row.len()
                    )));
                }
                for (b, cell) in row.iter().enumerate() {
                    mat.set_entry(a, b, DiffPoly::from_json(cell)?);
                }
            }
            out.add_term(e, mat);
        }
        Ok(out)
    }
}

impl Add for &PsiDO {
    type Output = PsiDO;
    fn add(self, rhs: &PsiDO) -> PsiDO {
        assert_eq!(self.m, rhs.m, "matrix dimension mismatch");
        let (exact, floor) = self.combine_meta(rhs);
        let mut out = PsiDO { m: self.m, floor, exact, coeffs: BTreeMap::new() };
        for (e, c) in &self.coeffs {
            out.add_term(*e, c.clone());
        }
        for (e, c) in &rhs.coeffs {
            out.add_term(*e, c.clone());
        }
        out.retain_floor();
        out
    }
}

impl Sub for &PsiDO {
    type Output = PsiDO;
    fn sub(self, rhs: &PsiDO) -> PsiDO {
        self + &(-rhs)
    }
}

impl Neg for &PsiDO {
    type Output = PsiDO;
    fn neg(self) -> PsiDO {
        PsiDO {
            m: self.m,
            floor: self.floor,
            exact: self.exact,
            coeffs: self.coeffs.iter().map(|(e, c)| (*e, -c)).collect(),
        }
    }
}

impl AddAssign<&PsiDO> for PsiDO {
    fn add_assign(&mut self, rhs: &PsiDO) {
        *self = &*self + rhs;
    }
}

impl fmt::Display for PsiDO {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (e, c) in self.coeffs.iter().rev() {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            if self.m == 1 {
                write!(f, "({})", c.entry(0, 0))?;
            } else {
                write!(f, "[")?;
                for a in 0..self.m {
                    if a > 0 {
                        write!(f, "; ")?;
                    }
                    for b in 0..self.m {
                        if b > 0 {
                            write!(f, ", ")?;
                        }
                        write!(f, "{}", c.entry(a, b))?;
                    }
                }
                write!(f, "]")?;
            }
            match e {
                0 => {}
                1 => write!(f, " D")?,
                _ => write!(f, " D^{e}")?,
            }
        }
        if first {
            write!(f, "0")?;
        }
        if !self.exact {
            write!(f, " + O(D^{})", self.floor - 1)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffalg::{rat, TotalDerivative, VarKey};
    use proptest::prelude::*;

    fn u(i: i32) -> DiffPoly {
        DiffPoly::gen(VarKey::u(i))
    }

    fn sc(p: DiffPoly) -> MatPoly {
        MatPoly::scalar(p)
    }

    /// The scalar operator d^2 + u, with u the coefficient symbol at
    /// exponent zero.
    fn kdv_op() -> PsiDO {
        let mut l = PsiDO::d_pow(1, 2);
        l.add_term(0, sc(u(-1)));
        l
    }

    #[test]
    fn compose_leibniz() {
        // d . u = u d + u'.
        let p = &TruncationPolicy::default();
        let d = PsiDO::d_pow(1, 1);
        let mu = PsiDO::single(0, sc(u(-1)));
        let got = d.compose(&mu, p);
        let mut expect = PsiDO::single(1, sc(u(-1)));
        expect.add_term(0, sc(u(-1).nth_derivative(1)));
        assert_eq!(got, expect);
        assert!(got.is_exact());
    }

    #[test]
    fn compose_negative_exponent_truncates() {
        // d^{-1} . u is an infinite expansion; check the first few terms of
        // d^{-1} u = u d^{-1} - u' d^{-2} + u'' d^{-3} - ...
        let p = TruncationPolicy::with_floor(-3);
        let dinv = PsiDO::d_pow(1, -1);
        let mu = PsiDO::single(0, sc(u(-1)));
        let got = dinv.compose(&mu, &p);
        assert!(!got.is_exact());
        assert_eq!(got.floor(), -3);
        assert_eq!(got.coeff(-1).unwrap(), sc(u(-1)));
        assert_eq!(got.coeff(-2).unwrap(), sc(-&u(-1).nth_derivative(1)));
        assert_eq!(got.coeff(-3).unwrap(), sc(u(-1).nth_derivative(2)));
        assert!(got.coeff(-4).is_err());
    }

    #[test]
    fn compose_is_associative_on_truncations() {
        let p = &TruncationPolicy::with_floor(-6);
        let a = {
            let mut a = PsiDO::d_pow(1, -1);
            a.add_term(0, sc(u(-2)));
            a
        };
        let b = kdv_op();
        let c = {
            let mut c = PsiDO::d_pow(1, 1);
            c.add_term(-2, sc(u(-1).nth_derivative(1)));
            c
        };
        let left = a.compose(&b, p).compose(&c, p);
        let right = a.compose(&b.compose(&c, p), p);
        assert!(left.agrees_with(&right));
    }

    #[test]
    fn adjoint_involution_and_antihomomorphism() {
        let p = &TruncationPolicy::with_floor(-6);
        let a = {
            let mut a = kdv_op();
            a.add_term(-1, sc(u(-2)));
            a
        };
        let b = {
            let mut b = PsiDO::d_pow(1, 1);
            b.add_term(0, sc(&u(-1) * &u(-1)));
            b
        };
        assert!(a.adjoint(p).adjoint(p).agrees_with(&a));
        let lhs = a.compose(&b, p).adjoint(p);
        let rhs = b.adjoint(p).compose(&a.adjoint(p), p);
        assert!(lhs.agrees_with(&rhs));
    }

    #[test]
    fn trace_residue_of_commutator_is_total_derivative() {
        let p = &TruncationPolicy::with_floor(-8);
        let a = {
            let mut a = PsiDO::d_pow(2, 1);
            a.add_term(-1, MatPoly::from_fn(2, |r, c| {
                DiffPoly::gen(VarKey::u_at(-1, r as u8, c as u8))
            }));
            a
        };
        let b = {
            let mut b = PsiDO::d_pow(2, 2);
            b.add_term(0, MatPoly::from_fn(2, |r, c| {
                DiffPoly::gen(VarKey::u_at(-2, r as u8, c as u8))
            }));
            b
        };
        let comm = &a.compose(&b, p) - &b.compose(&a, p);
        let tr = comm.trace_residue().unwrap();
        assert_eq!(tr.is_total_derivative(), TotalDerivative::Yes);
    }

    #[test]
    fn square_root_of_kdv_operator() {
        let p = TruncationPolicy::with_floor(-4);
        let l = kdv_op();
        let r = l.nth_root(2, &p).unwrap();
        let uu = u(-1);
        assert_eq!(r.coeff(1).unwrap(), sc(DiffPoly::one()));
        assert_eq!(r.coeff(0).unwrap(), sc(DiffPoly::zero()));
        assert_eq!(r.coeff(-1).unwrap(), sc(uu.scale(&rat(1, 2))));
        assert_eq!(r.coeff(-2).unwrap(), sc(uu.nth_derivative(1).scale(&rat(-1, 4))));
        let expect3 = &uu.nth_derivative(2).scale(&rat(1, 8)) - &uu.pow(2).scale(&rat(1, 8));
        assert_eq!(r.coeff(-3).unwrap(), sc(expect3));
        let expect4 = &uu.nth_derivative(3).scale(&rat(-1, 16))
            + &(&uu * &uu.nth_derivative(1)).scale(&rat(6, 16));
        assert_eq!(r.coeff(-4).unwrap(), sc(expect4));
        // Squaring recovers the operator on the known range.
        assert!(r.pow_int(2, &p).agrees_with(&l));
    }

    #[test]
    fn inverse_is_two_sided() {
        let p = TruncationPolicy::with_floor(-7);
        let l = kdv_op();
        let linv = l.inverse(&p).unwrap();
        assert!(l.compose(&linv, &p).agrees_with(&PsiDO::identity(1)));
        assert!(linv.compose(&l, &p).agrees_with(&PsiDO::identity(1)));
    }

    #[test]
    fn fractional_powers_compose() {
        let p = TruncationPolicy::with_floor(-5);
        let l = kdv_op();
        let half = l.frac_power(1, 2, &p).unwrap();
        let three_half = l.frac_power(3, 2, &p).unwrap();
        assert!(half.compose(&three_half, &p).agrees_with(&l.pow_int(2, &p)));
        let neg_half = l.frac_power(-1, 2, &p).unwrap();
        assert!(half.compose(&neg_half, &p).agrees_with(&PsiDO::identity(1)));
        // Known series: L^{3/2} = d^3 + (3/2)u d + (3/4)u' + (3u^2 + u'')/8 d^{-1} + ...
        assert_eq!(three_half.coeff(1).unwrap(), sc(u(-1).scale(&rat(3, 2))));
        assert_eq!(
            three_half.coeff(0).unwrap(),
            sc(u(-1).nth_derivative(1).scale(&rat(3, 4)))
        );
        let res = &u(-1).pow(2).scale(&rat(3, 8)) + &u(-1).nth_derivative(2).scale(&rat(1, 8));
        assert_eq!(three_half.coeff(-1).unwrap(), sc(res));
    }

    #[test]
    fn matrix_root_with_identity_leading_coefficient() {
        let p = TruncationPolicy::with_floor(-3);
        let mut l = PsiDO::d_pow(2, 2);
        l.add_term(0, MatPoly::from_fn(2, |r, c| {
            DiffPoly::gen(VarKey::u_at(-1, r as u8, c as u8))
        }));
        let r = l.nth_root(2, &p).unwrap();
        assert!(r.pow_int(2, &p).agrees_with(&l));
        assert_eq!(r.coeff(-1).unwrap(), l.coeff(0).unwrap().scale(&rat(1, 2)));
    }

    #[test]
    fn deeper_floor_refines_not_contradicts() {
        let shallow = TruncationPolicy::with_floor(-3);
        let deep = TruncationPolicy::with_floor(-6);
        let l = kdv_op();
        let a = l.frac_power(1, 2, &shallow).unwrap();
        let b = l.frac_power(1, 2, &deep).unwrap();
        assert!(a.agrees_with(&b));
        assert!(b.coeff(-5).is_ok() && a.coeff(-5).is_err());
    }

    #[test]
    fn json_round_trip() {
        let p = TruncationPolicy::with_floor(-3);
        let l = kdv_op();
        let r = l.nth_root(2, &p).unwrap();
        let v = r.to_json();
        let back = PsiDO::from_json(&v).unwrap();
        assert_eq!(r, back);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn adjoint_reverses_products(
            pa in crate::diffalg::test_support::small_poly(),
            pb in crate::diffalg::test_support::small_poly(),
            ea in -2i64..3,
            eb in -2i64..3,
        ) {
            let pol = &TruncationPolicy::with_floor(-6);
            let a = PsiDO::single(ea, sc(pa));
            let b = PsiDO::single(eb, sc(pb));
            let lhs = a.compose(&b, pol).adjoint(pol);
            let rhs = b.adjoint(pol).compose(&a.adjoint(pol), pol);
            prop_assert!(lhs.agrees_with(&rhs));
        }

        #[test]
        fn residue_pairing_symmetry(
            pa in crate::diffalg::test_support::small_poly(),
            pb in crate::diffalg::test_support::small_poly(),
            ea in -2i64..3,
            eb in -2i64..3,
        ) {
            // tr res (A B) - tr res (B A) is a total derivative.
            let pol = &TruncationPolicy::with_floor(-8);
            let a = PsiDO::single(ea, sc(pa));
            let b = PsiDO::single(eb, sc(pb));
            let ab = a.compose(&b, pol).trace_residue().unwrap();
            let ba = b.compose(&a, pol).trace_residue().unwrap();
            let diff = &ab - &ba;
            prop_assert_eq!(diff.is_total_derivative(), TotalDerivative::Yes);
        }
    }
}
