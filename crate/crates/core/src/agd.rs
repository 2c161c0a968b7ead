//! Bi-Hamiltonian structures attached to a generic operator of fixed order.
//!
//! The operator is `L = d^N + sum_j u_j d^{-j-1}` with matrix coefficients
//! `u_j` of size `m`, either purely differential (indices `-N..=-1`) or with
//! a full symbol tail (all indices `>= -N`).  Two compatible bracket tables
//! live on its coefficients:
//!
//! * the quadratic table `H`, with entries quadratic in the coefficients,
//! * the linear table `K`, obtained by shifting `L` by a constant.
//!
//! Both are produced in closed form by [`AdlerContext::h_entry`] and
//! [`AdlerContext::k_entry`], and both can be recomputed through a residue
//! oracle ([`AdlerContext::oracle_symbol`]) that evaluates a quadratic map
//! on symbols and reads the bracket off a residue; the two routes are kept
//! independent so they can check each other.
//!
//! Setting the subleading coefficient `u_{-N}` to zero is a second-class
//! constraint for `H`; [`dirac_reduce`] performs the reduction and yields
//! the classical W-structures.  [`generic_dirac`] applies the same
//! modification to an arbitrary structure with explicit constraint
//! densities.  [`virasoro_report`] extracts the central charge and the
//! conformal weights from a candidate energy density, and the constraint
//! operators on [`AdlerContext`] linearize the coefficient map and provide
//! the adjoints used in conservation arguments.  [`by_name`] resolves the
//! registry of named structures used by the command line tools.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_traits::Zero;

use crate::diffalg::{binom, rat, rat_i, DiffPoly, Family, Monomial, Rat, VarKey};
use crate::lambda::LambdaValue;
use crate::psido::{MatPoly, PsiDO, TruncationPolicy};
use crate::pva::{classics, EntryRule, ExplicitRule, GramMatrix, IndexSet, PVAStructure, Universe};
use crate::{Error, Result};

/// Coefficient support of the generic operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flavor {
    /// Purely differential: coefficients `u_{-N}..u_{-1}` only.
    Finite,
    /// Full symbol tail: one coefficient for every index `>= -N`.
    Infinite,
}

/// Which of the canonically attached tables to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgdTable {
    /// The quadratic table.
    H,
    /// The linear table.
    K,
    /// The quadratic table after reduction at `u_{-N} = 0`.
    HDirac,
}

/// Order, matrix size, coefficient support and cutoff policy of one
/// generic operator; the entry point for everything in this module.
#[derive(Debug, Clone)]
pub struct AdlerContext {
    n: u32,
    m: usize,
    flavor: Flavor,
    policy: TruncationPolicy,
    cross_check: bool,
}

impl AdlerContext {
    pub fn new(n: u32, m: usize, flavor: Flavor) -> Result<AdlerContext> {
        if n == 0 {
            return Err(Error::Dimension("the operator order must be positive".into()));
        }
        if m == 0 || m > 1 + u8::MAX as usize {
            return Err(Error::Dimension(format!("unsupported matrix size {m}")));
        }
        Ok(AdlerContext {
            n,
            m,
            flavor,
            policy: TruncationPolicy::default(),
            cross_check: false,
        })
    }

    /// Replace the cutoff policy used by symbol computations.
    pub fn with_policy(mut self, policy: TruncationPolicy) -> AdlerContext {
        self.policy = policy;
        self
    }

    /// Verify every closed-form entry against the residue oracle as tables
    /// are built.  Slow; meant for verification runs.
    pub fn with_cross_check(mut self, on: bool) -> AdlerContext {
        self.cross_check = on;
        self
    }

    pub fn order(&self) -> u32 {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn flavor(&self) -> Flavor {
        self.flavor
    }

    pub fn policy(&self) -> &TruncationPolicy {
        &self.policy
    }

    /// The generators carrying the unreduced tables.
    pub fn universe(&self) -> Universe {
        let n = self.n as i32;
        match self.flavor {
            Flavor::Finite => Universe::matrix(Family::U, self.m, -n, -1),
            Flavor::Infinite => Universe {
                fam: Family::U,
                m: self.m,
                set: IndexSet::From(-n),
            },
        }
    }

    /// The generators surviving the constraint `u_{-N} = 0`.
    pub fn reduced_universe(&self) -> Result<Universe> {
        let n = self.n as i32;
        match self.flavor {
            Flavor::Finite if self.n < 2 => Err(Error::Dimension(
                "reducing a first-order differential operator leaves no generators".into(),
            )),
            Flavor::Finite => Ok(Universe::matrix(Family::U, self.m, -n + 1, -1)),
            Flavor::Infinite => Ok(Universe {
                fam: Family::U,
                m: self.m,
                set: IndexSet::From(-n + 1),
            }),
        }
    }

    /// The coefficient of the operator at a given index and position:
    /// a generator inside the support, the identity pattern at `-N-1`
    /// (the leading coefficient), zero outside.
    pub fn coeff_poly(&self, idx: i32, row: u8, col: u8) -> DiffPoly {
        let n = self.n as i32;
        if idx < -n - 1 || (self.flavor == Flavor::Finite && idx >= 0) {
            DiffPoly::zero()
        } else if idx == -n - 1 {
            if row == col {
                DiffPoly::one()
            } else {
                DiffPoly::zero()
            }
        } else {
            DiffPoly::gen(VarKey::u_at(idx, row, col))
        }
    }

    /// The full coefficient matrix at a given index.
    pub fn coeff_mat(&self, idx: i32) -> MatPoly {
        MatPoly::from_fn(self.m, |r, c| self.coeff_poly(idx, r as u8, c as u8))
    }

    /// The operator as a symbol, to the depth the policy allows.
    pub fn l_op(&self, policy: &TruncationPolicy) -> PsiDO {
        self.l_op_impl(policy, false)
    }

    /// Same with the subleading coefficient set to zero.
    pub fn l_op_reduced(&self, policy: &TruncationPolicy) -> PsiDO {
        self.l_op_impl(policy, true)
    }

    fn l_op_impl(&self, policy: &TruncationPolicy, reduced: bool) -> PsiDO {
        let n = self.n as i64;
        let mut op = match self.flavor {
            Flavor::Finite => PsiDO::zero(self.m),
            Flavor::Infinite => PsiDO::truncated(self.m, policy.floor),
        };
        op.add_term(n, MatPoly::identity(self.m));
        let lo = match self.flavor {
            Flavor::Finite => 0,
            Flavor::Infinite => policy.floor,
        };
        for e in lo..n {
            let j = (-e - 1) as i32;
            if reduced && j == -(self.n as i32) {
                continue;
            }
            let mat = self.coeff_mat(j);
            if !mat.is_zero() {
                op.add_term(e, mat);
            }
        }
        op
    }

    fn check_key(&self, key: VarKey) -> Result<()> {
        if key.fam != Family::U {
            return Err(Error::Dimension(format!(
                "table entries are indexed by operator coefficients, not family {}",
                key.fam.letter()
            )));
        }
        if key.row as usize >= self.m || key.col as usize >= self.m {
            return Err(Error::Dimension(format!(
                "position ({}, {}) outside a {}x{} coefficient",
                key.row, key.col, self.m, self.m
            )));
        }
        Ok(())
    }

    /// Closed-form entry `{u_{i,ab} lambda u_{j,cd}}` of the quadratic
    /// table:
    ///
    /// ```text
    /// sum_{k,s} C(k,s) u_{i-k-1,cb} (lambda+d)^s u_{j+k-s,ad}
    ///   - sum_{k,s,t} (-1)^s C(j,s) C(i-k-1,t)
    ///       u_{j+k-s,cb} (lambda+d)^{s+t} u_{i-t-k-1,ad}
    /// ```
    ///
    /// with all sums finite because coefficients vanish below index
    /// `-N-1`.  The formula is total in `(i, j)`: outside the generator
    /// range it evaluates to zero.
    pub fn h_entry(&self, ik: VarKey, jk: VarKey) -> Result<LambdaValue> {
        self.check_key(ik)?;
        self.check_key(jk)?;
        let n = self.n as i32;
        let (i, a, b) = (ik.idx, ik.row, ik.col);
        let (j, c, d) = (jk.idx, jk.row, jk.col);
        let mut out = LambdaValue::zero();
        for k in 0..=(i + n) {
            let left = self.coeff_poly(i - k - 1, c, b);
            if left.is_zero() {
                continue;
            }
            for s in 0..=k.min(j + k + n + 1) {
                let right = self.coeff_poly(j + k - s, a, d);
                if right.is_zero() {
                    continue;
                }
                let coef = binom(k as i64, s as u32);
                out += &LambdaValue::shift_pow(s as u32, &right).mul_poly(&left).scale(&coef);
            }
        }
        for k in 0..=(i + n) {
            for t in 0..=(i + n - k) {
                let right = self.coeff_poly(i - t - k - 1, a, d);
                if right.is_zero() {
                    continue;
                }
                let bt = binom((i - k - 1) as i64, t as u32);
                if bt.is_zero() {
                    continue;
                }
                for s in 0..=(j + k + n + 1) {
                    let bs = binom(j as i64, s as u32);
                    if bs.is_zero() {
                        continue;
                    }
                    let left = self.coeff_poly(j + k - s, c, b);
                    if left.is_zero() {
                        continue;
                    }
                    let mut coef = -(&bs * &bt);
                    if s % 2 == 1 {
                        coef = -coef;
                    }
                    out += &LambdaValue::shift_pow((s + t) as u32, &right)
                        .mul_poly(&left)
                        .scale(&coef);
                }
            }
        }
        Ok(out)
    }

    /// Closed-form entry `{u_{i,ab} lambda u_{j,cd}}` of the linear table:
    ///
    /// ```text
    /// eps_{ij} sum_k ( C(i,k) delta_{cb} (lambda+d)^k u_{i+j-k,ad}
    ///                - C(j,k) delta_{ad} (-lambda)^k u_{i+j-k,cb} )
    /// ```
    ///
    /// where `eps` is `+1` when both indices are nonnegative, `-1` when
    /// both are negative, and `0` otherwise.
    pub fn k_entry(&self, ik: VarKey, jk: VarKey) -> Result<LambdaValue> {
        self.check_key(ik)?;
        self.check_key(jk)?;
        let n = self.n as i32;
        let (i, a, b) = (ik.idx, ik.row, ik.col);
        let (j, c, d) = (jk.idx, jk.row, jk.col);
        let eps = if i >= 0 && j >= 0 {
            1
        } else if i < 0 && j < 0 {
            -1
        } else {
            return Ok(LambdaValue::zero());
        };
        let mut out = LambdaValue::zero();
        for k in 0..=(i + j + n + 1) {
            if c == b {
                let coef = binom(i as i64, k as u32);
                let poly = self.coeff_poly(i + j - k, a, d);
                if !coef.is_zero() && !poly.is_zero() {
                    out += &LambdaValue::shift_pow(k as u32, &poly).scale(&coef);
                }
            }
            if a == d {
                let coef = binom(j as i64, k as u32);
                let poly = self.coeff_poly(i + j - k, c, b);
                if !coef.is_zero() && !poly.is_zero() {
                    let mut cc = -coef;
                    if k % 2 == 1 {
                        cc = -cc;
                    }
                    out += &LambdaValue::mono(k as u32, poly.scale(&cc));
                }
            }
        }
        Ok(out.scale(&rat_i(eps)))
    }

    /// Entry of the reduced quadratic table.
    ///
    /// Computed by sandwiching the inverse constraint pairing between the
    /// brackets with the subleading coefficient and adding the result to
    /// the unreduced entry, then setting `u_{-N}` to zero.  In the scalar
    /// case the same entry is recomputed from an independent closed form
    /// and the two must agree.
    pub fn dirac_entry(&self, ik: VarKey, jk: VarKey) -> Result<LambdaValue> {
        if self.flavor == Flavor::Finite && self.n < 2 {
            return Err(Error::Dimension(
                "reducing a first-order differential operator leaves no generators".into(),
            ));
        }
        let sandwich = self.dirac_sandwich(ik, jk)?;
        if self.m == 1 {
            let closed = self.dirac_scalar_closed(ik, jk)?;
            if closed != sandwich {
                return Err(Error::CrossCheck(format!(
                    "reduced entry ({}, {}) differs between the reduction route and the closed form",
                    ik.idx, jk.idx
                )));
            }
        }
        Ok(sandwich)
    }

    fn dirac_sandwich(&self, ik: VarKey, jk: VarKey) -> Result<LambdaValue> {
        let n = self.n as i32;
        let mut acc = LambdaValue::zero();
        for e in 0..self.m as u8 {
            for f in 0..self.m as u8 {
                let a = self.h_entry(VarKey::u_at(-n, e, f), jk)?;
                if a.is_zero() {
                    continue;
                }
                let b = self.h_entry(ik, VarKey::u_at(-n, f, e))?;
                if b.is_zero() {
                    continue;
                }
                acc += &a.apply_as_operator(&b.apply_inv_shift()?)?;
            }
        }
        let out = &self.h_entry(ik, jk)? + &acc.scale(&rat(1, self.n as i64));
        Ok(out.zero_out(|key| key.fam == Family::U && key.idx == -n))
    }

    fn dirac_scalar_closed(&self, ik: VarKey, jk: VarKey) -> Result<LambdaValue> {
        debug_assert_eq!(self.m, 1);
        let n = self.n as i32;
        let (i, j) = (ik.idx, jk.idx);
        let mut out = self.h_entry(ik, jk)?;
        for s in 1..=(j + n + 1) {
            let left = self.coeff_poly(j - s, 0, 0);
            if left.is_zero() {
                continue;
            }
            let bs = binom(j as i64, s as u32);
            if bs.is_zero() {
                continue;
            }
            for t in 1..=(i + n + 1) {
                let right = self.coeff_poly(i - t, 0, 0);
                if right.is_zero() {
                    continue;
                }
                let bt = binom(i as i64, t as u32);
                if bt.is_zero() {
                    continue;
                }
                let mut coef = &(&bs * &bt) * &rat(1, self.n as i64);
                if s % 2 == 0 {
                    coef = -coef;
                }
                out += &LambdaValue::shift_pow((s + t - 1) as u32, &right)
                    .mul_poly(&left)
                    .scale(&coef);
            }
        }
        Ok(out.zero_out(|key| key.fam == Family::U && key.idx == -n))
    }

    /// The quadratic map on symbols, `F -> (LF)_+ L - L (FL)_+`.
    ///
    /// The same operator equals `L (FL)_- - (LF)_- L`; both routes are
    /// computed and must agree wherever both are known.
    pub fn adler_apply(&self, f: &PsiDO, policy: &TruncationPolicy) -> Result<PsiDO> {
        if f.dim() != self.m {
            return Err(Error::Dimension(format!(
                "argument size {} does not match coefficient size {}",
                f.dim(),
                self.m
            )));
        }
        let l = self.l_op(policy);
        let lf = l.compose(f, policy);
        let fl = f.compose(&l, policy);
        let plus = &lf.plus_part().compose(&l, policy) - &l.compose(&fl.plus_part(), policy);
        let minus = &l.compose(&fl.minus_part(), policy) - &lf.minus_part().compose(&l, policy);
        if !plus.agrees_with(&minus) {
            return Err(Error::CrossCheck(
                "the two projection routes through the quadratic map disagree".into(),
            ));
        }
        Ok(plus)
    }

    /// The linear map on symbols, `F -> (LF)_+ + F_+ L - L F_+ - (FL)_+`,
    /// the derivative of the quadratic map along a constant shift of `L`.
    /// The complementary projections give the same operator up to sign;
    /// both routes are computed and must agree.
    pub fn k_adler_apply(&self, f: &PsiDO, policy: &TruncationPolicy) -> Result<PsiDO> {
        if f.dim() != self.m {
            return Err(Error::Dimension(format!(
                "argument size {} does not match coefficient size {}",
                f.dim(),
                self.m
            )));
        }
        let l = self.l_op(policy);
        let lf = l.compose(f, policy);
        let fl = f.compose(&l, policy);
        let fp = f.plus_part();
        let fm = f.minus_part();
        let plus = &(&lf.plus_part() + &fp.compose(&l, policy))
            - &(&l.compose(&fp, policy) + &fl.plus_part());
        let minus = &(&l.compose(&fm, policy) + &fl.minus_part())
            - &(&lf.minus_part() + &fm.compose(&l, policy));
        if !plus.agrees_with(&minus) {
            return Err(Error::CrossCheck(
                "the two projection routes through the linear map disagree".into(),
            ));
        }
        Ok(plus)
    }

    fn deep_policy(&self, i: i32, j: i32) -> TruncationPolicy {
        let depth = i.unsigned_abs() as i64 + j.unsigned_abs() as i64 + 2 * self.n as i64 + 8;
        TruncationPolicy::with_floor(self.policy.floor.min(-depth))
    }

    /// Residue oracle: the bracket `{u_{i,ab} lambda u_{j,cd}}` applied to
    /// a test function `f` (that is, `lambda` replaced by `d` acting on
    /// `f`), computed without the closed forms as
    /// `[ res( A(d^i (f E_{ba})) d^j ) ]_{cd}` where `A` is the quadratic
    /// or linear map and `E_{ba}` the elementary matrix.
    pub fn oracle_apply(
        &self,
        table: AgdTable,
        i: i32,
        pos_i: (u8, u8),
        j: i32,
        pos_j: (u8, u8),
        f: &DiffPoly,
    ) -> Result<DiffPoly> {
        if pos_i.0 as usize >= self.m
            || pos_i.1 as usize >= self.m
            || pos_j.0 as usize >= self.m
            || pos_j.1 as usize >= self.m
        {
            return Err(Error::Dimension("oracle position outside the matrix".into()));
        }
        let pol = self.deep_policy(i, j);
        let elementary = MatPoly::unit(self.m, pos_i.1 as usize, pos_i.0 as usize, f.clone());
        let probe = PsiDO::d_pow(self.m, i as i64).compose(&PsiDO::single(0, elementary), &pol);
        let image = match table {
            AgdTable::H => self.adler_apply(&probe, &pol)?,
            AgdTable::K => self.k_adler_apply(&probe, &pol)?,
            AgdTable::HDirac => {
                return Err(Error::Unsupported(
                    "the reduced table has no residue oracle; reduce the quadratic table instead"
                        .into(),
                ))
            }
        };
        let mat = image.coeff(-(j as i64) - 1)?;
        Ok(mat.entry(pos_j.0 as usize, pos_j.1 as usize).clone())
    }

    /// The full lambda-symbol of a table entry recovered from the residue
    /// oracle, by applying it to a probe generator and reading off the
    /// coefficients of the probe derivatives.
    pub fn oracle_symbol(&self, table: AgdTable, ik: VarKey, jk: VarKey) -> Result<LambdaValue> {
        let probe = VarKey::gen(Family::A, 0, 0, 0);
        let f = DiffPoly::gen(probe);
        let applied = self.oracle_apply(
            table,
            ik.idx,
            (ik.row, ik.col),
            jk.idx,
            (jk.row, jk.col),
            &f,
        )?;
        let mut symbol = LambdaValue::zero();
        let mut rebuilt = DiffPoly::zero();
        if let Some(top) = applied.max_der(probe) {
            for p in 0..=top {
                let coeff = applied.partial(probe.with_der(p));
                if coeff.is_zero() {
                    continue;
                }
                rebuilt += &(&coeff * &DiffPoly::gen(probe.with_der(p)));
                symbol.add_local(p, coeff);
            }
        }
        if rebuilt != applied {
            return Err(Error::CrossCheck(
                "oracle image is not linear in the probe function".into(),
            ));
        }
        Ok(symbol)
    }

    fn family_name(&self, letter: char) -> String {
        let mut s = if self.m == 1 {
            format!("{letter}{}", self.n)
        } else {
            format!("{letter}-mat({},{})", self.n, self.m)
        };
        if self.flavor == Flavor::Infinite {
            s.push_str("-inf");
        }
        s
    }

    fn base_name(&self) -> String {
        self.family_name('v')
    }

    fn reduced_name(&self) -> String {
        self.family_name('w')
    }

    /// The quadratic table as a structure on the unreduced generators.
    pub fn build_h(&self) -> PVAStructure {
        PVAStructure::new(
            &self.base_name(),
            self.universe(),
            Arc::new(TableRule { ctx: self.clone(), table: AgdTable::H }),
        )
    }

    /// The linear table as a structure on the unreduced generators.
    pub fn build_k(&self) -> PVAStructure {
        PVAStructure::new(
            &format!("k({})", self.base_name()),
            self.universe(),
            Arc::new(TableRule { ctx: self.clone(), table: AgdTable::K }),
        )
    }

    /// The linear table restricted to the reduced generators.  No
    /// correction term is needed: the linear table annihilates `u_{-N}`,
    /// so restriction is already consistent.
    pub fn reduced_k(&self) -> Result<PVAStructure> {
        Ok(PVAStructure::new(
            &format!("k({})", self.reduced_name()),
            self.reduced_universe()?,
            Arc::new(ReducedKRule { ctx: self.clone() }),
        ))
    }

    /// Linearization of the coefficients of `L` along a matrix direction:
    /// the coefficients, at exponents `N-1..0`, of the commutator of `F^t`
    /// with `L`, keyed by coefficient index `-N..=-1`.
    pub fn constraint_b(&self, f: &MatPoly) -> Result<BTreeMap<i32, MatPoly>> {
        self.require_finite("constraint linearization")?;
        if f.dim() != self.m {
            return Err(Error::Dimension("direction size mismatch".into()));
        }
        let ft = PsiDO::single(0, f.transpose());
        let l = self.l_op(&self.policy);
        let comm = &ft.compose(&l, &self.policy) - &l.compose(&ft, &self.policy);
        if let Some(order) = comm.order() {
            if order > self.n as i64 - 1 {
                return Err(Error::CrossCheck(
                    "coefficient linearization exceeded the expected order".into(),
                ));
            }
        }
        let mut out = BTreeMap::new();
        for i in -(self.n as i32)..=-1 {
            out.insert(i, comm.coeff((-i - 1) as i64)?);
        }
        Ok(out)
    }

    /// Adjoint of the coefficient linearization, acting on a vector of
    /// matrices keyed like the output of [`AdlerContext::constraint_b`]:
    ///
    /// ```text
    /// (B* G)_{ab} = sum_i ( sum_{c, j <= i} C(-j-1, i-j) (-1)^{i-j}
    ///                       d^{i-j} ( u_{j,cb} G_{i,ca} )
    ///                      - sum_d u_{i,ad} G_{i,bd} )
    /// ```
    ///
    /// equivalently the symbol family
    /// `res_z (delta_ad L*_cb(-z+lambda) - delta_cb L_ad(z)) z^i`.
    pub fn constraint_b_star(&self, g: &BTreeMap<i32, MatPoly>) -> Result<MatPoly> {
        self.require_finite("constraint adjoints")?;
        let n = self.n as i32;
        let mm = self.m;
        let mut out = MatPoly::zero(mm);
        for a in 0..mm as u8 {
            for b in 0..mm as u8 {
                let mut acc = DiffPoly::zero();
                for (&i, gi) in g {
                    if gi.dim() != mm {
                        return Err(Error::Dimension("component size mismatch".into()));
                    }
                    for j in (-n - 1)..=i {
                        let coef = binom((-j - 1) as i64, (i - j) as u32);
                        if coef.is_zero() {
                            continue;
                        }
                        let mut inner = DiffPoly::zero();
                        for c in 0..mm as u8 {
                            let u = self.coeff_poly(j, c, b);
                            if u.is_zero() {
                                continue;
                            }
                            inner += &(&u * gi.entry(c as usize, a as usize));
                        }
                        if inner.is_zero() {
                            continue;
                        }
                        let mut term = inner.nth_derivative((i - j) as u32).scale(&coef);
                        if (i - j) % 2 == 1 {
                            term = -&term;
                        }
                        acc += &term;
                    }
                    for d in 0..mm as u8 {
                        let u = self.coeff_poly(i, a, d);
                        if u.is_zero() {
                            continue;
                        }
                        acc -= &(&u * gi.entry(b as usize, d as usize));
                    }
                }
                out.set_entry(a as usize, b as usize, acc);
            }
        }
        Ok(out)
    }

    /// Linearization of the trace-normalization constraint:
    /// `F -> [F^t, u_{-N}] - N (F^t)'`.
    pub fn constraint_c(&self, f: &MatPoly) -> Result<MatPoly> {
        self.require_finite("constraint linearization")?;
        if f.dim() != self.m {
            return Err(Error::Dimension("direction size mismatch".into()));
        }
        let ft = f.transpose();
        let u = self.coeff_mat(-(self.n as i32));
        let comm = &mat_mul(&ft, &u) - &mat_mul(&u, &ft);
        Ok(&comm - &ft.total_derivative().scale(&rat_i(self.n as i64)))
    }

    /// Adjoint of [`AdlerContext::constraint_c`]:
    /// `G -> [u_{-N}, G^t] + N (G^t)'`.
    pub fn constraint_c_star(&self, g: &MatPoly) -> Result<MatPoly> {
        self.require_finite("constraint adjoints")?;
        if g.dim() != self.m {
            return Err(Error::Dimension("component size mismatch".into()));
        }
        let gt = g.transpose();
        let u = self.coeff_mat(-(self.n as i32));
        let comm = &mat_mul(&u, &gt) - &mat_mul(&gt, &u);
        Ok(&comm + &gt.total_derivative().scale(&rat_i(self.n as i64)))
    }

    fn require_finite(&self, what: &str) -> Result<()> {
        if self.flavor == Flavor::Finite {
            Ok(())
        } else {
            Err(Error::Unsupported(format!(
                "{what} applies to the purely differential flavor"
            )))
        }
    }
}

pub(crate) fn mat_mul(a: &MatPoly, b: &MatPoly) -> MatPoly {
    let m = a.dim();
    MatPoly::from_fn(m, |r, c| {
        let mut acc = DiffPoly::zero();
        for k in 0..m {
            acc += &(a.entry(r, k) * b.entry(k, c));
        }
        acc
    })
}

/// Entry rule backed by the closed forms, with an optional oracle
/// cross-check on every entry.
struct TableRule {
    ctx: AdlerContext,
    table: AgdTable,
}

impl EntryRule for TableRule {
    fn entry(&self, i: VarKey, j: VarKey) -> Result<LambdaValue> {
        let value = match self.table {
            AgdTable::H => self.ctx.h_entry(i, j)?,
            AgdTable::K => self.ctx.k_entry(i, j)?,
            AgdTable::HDirac => self.ctx.dirac_entry(i, j)?,
        };
        if self.ctx.cross_check && !matches!(self.table, AgdTable::HDirac) {
            let oracle = self.ctx.oracle_symbol(self.table, i, j)?;
            if oracle != value {
                return Err(Error::CrossCheck(format!(
                    "entry ({}, {}) disagrees with the residue oracle",
                    i.idx, j.idx
                )));
            }
        }
        Ok(value)
    }
}

/// The linear table with the reduced constraint substituted.
struct ReducedKRule {
    ctx: AdlerContext,
}

impl EntryRule for ReducedKRule {
    fn entry(&self, i: VarKey, j: VarKey) -> Result<LambdaValue> {
        let n = self.ctx.n as i32;
        Ok(self
            .ctx
            .k_entry(i, j)?
            .zero_out(|key| key.fam == Family::U && key.idx == -n))
    }
}

/// Reduce a table at the second-class constraint `u_{-N} = 0`.
///
/// Only the quadratic table admits the reduction: the linear table
/// brackets the constraint to zero, so its constraint pairing is
/// identically singular and the plain restriction
/// ([`AdlerContext::reduced_k`]) is the consistent counterpart.
pub fn dirac_reduce(ctx: &AdlerContext, table: AgdTable) -> Result<PVAStructure> {
    match table {
        AgdTable::K => Err(Error::Singular(
            "the constraint pairing of the linear table vanishes identically; use the restriction"
                .into(),
        )),
        AgdTable::H | AgdTable::HDirac => Ok(PVAStructure::new(
            &ctx.reduced_name(),
            ctx.reduced_universe()?,
            Arc::new(TableRule { ctx: ctx.clone(), table: AgdTable::HDirac }),
        )),
    }
}

/// Modification rule produced by [`generic_dirac`].
struct DiracModRule {
    base: PVAStructure,
    constraints: Vec<DiffPoly>,
    /// Inverse constraint pairing: `inv[beta][alpha]` maps a shift
    /// exponent to its left coefficient.
    inv: Vec<Vec<BTreeMap<i64, DiffPoly>>>,
}

impl DiracModRule {
    fn apply_inverse_entry(
        terms: &BTreeMap<i64, DiffPoly>,
        x: &LambdaValue,
    ) -> Result<LambdaValue> {
        let mut out = LambdaValue::zero();
        for (&e, p) in terms.range(0..) {
            let mut cur = x.clone();
            for _ in 0..e {
                cur = cur.apply_shift();
            }
            out += &cur.mul_poly(p);
        }
        let depth = terms.keys().next().map_or(0, |&e| -e);
        let mut cur = x.clone();
        for k in 1..=depth {
            if !cur.is_local() {
                if terms.range(..=-k).any(|(_, p)| !p.is_zero()) {
                    return Err(Error::Unsupported(
                        "the modification needs iterated inverse shifts outside the value space"
                            .into(),
                    ));
                }
                break;
            }
            cur = cur.apply_inv_shift()?;
            if let Some(p) = terms.get(&(-k)) {
                out += &cur.mul_poly(p);
            }
        }
        Ok(out)
    }
}

impl EntryRule for DiracModRule {
    fn entry(&self, i: VarKey, j: VarKey) -> Result<LambdaValue> {
        let mut out = (*self.base.entry(i, j)?).clone();
        let gi = DiffPoly::gen(i);
        let gj = DiffPoly::gen(j);
        for (alpha, theta_a) in self.constraints.iter().enumerate() {
            let x = self.base.master_bracket(&gi, theta_a)?;
            if x.is_zero() {
                continue;
            }
            for (beta, theta_b) in self.constraints.iter().enumerate() {
                let terms = &self.inv[beta][alpha];
                if terms.is_empty() {
                    continue;
                }
                let y = self.base.master_bracket(theta_b, &gj)?;
                if y.is_zero() {
                    continue;
                }
                let mid = Self::apply_inverse_entry(terms, &x)?;
                out -= &y.apply_as_operator(&mid)?;
            }
        }
        Ok(out)
    }
}

/// Dirac modification of an arbitrary structure at explicit constraint
/// densities.
///
/// The constraint pairing `C` has entries `{theta_beta lambda
/// theta_alpha}`; it is inverted as an operator symbol, and each table
/// entry is corrected by `{theta_beta lambda+d u_j} (C^{-1})_{beta alpha}
/// {u_i lambda theta_alpha}`.
///
/// The returned structure lives on the same universe; setting the
/// constrained generators to zero is left to the caller, which keeps the
/// modification comparable entry by entry with closed reductions.
pub fn generic_dirac(
    s: &PVAStructure,
    constraints: &[DiffPoly],
    policy: &TruncationPolicy,
) -> Result<PVAStructure> {
    if constraints.is_empty() {
        return Err(Error::Dimension("at least one constraint density is needed".into()));
    }
    let ns = constraints.len();
    let mut by_exp: BTreeMap<i64, MatPoly> = BTreeMap::new();
    for (alpha, theta_a) in constraints.iter().enumerate() {
        for (beta, theta_b) in constraints.iter().enumerate() {
            let v = s.master_bracket(theta_b, theta_a)?;
            if !v.is_local() {
                return Err(Error::Unsupported(
                    "a constraint pair bracket has a nonlocal tail".into(),
                ));
            }
            for (&p, coeff) in v.local_terms() {
                let mat = by_exp.entry(p as i64).or_insert_with(|| MatPoly::zero(ns));
                let mut e = mat.entry(alpha, beta).clone();
                e += coeff;
                mat.set_entry(alpha, beta, e);
            }
        }
    }
    let mut c_op = PsiDO::zero(ns);
    for (e, mat) in by_exp {
        if !mat.is_zero() {
            c_op.add_term(e, mat);
        }
    }
    let c_inv = c_op.inverse(policy)?;
    let mut inv = vec![vec![BTreeMap::new(); ns]; ns];
    for (&e, mat) in c_inv.coeff_terms() {
        for beta in 0..ns {
            for alpha in 0..ns {
                let p = mat.entry(beta, alpha);
                if !p.is_zero() {
                    inv[beta][alpha].insert(e, p.clone());
                }
            }
        }
    }
    Ok(PVAStructure::new(
        &format!("dirac({})", s.name),
        s.universe,
        Arc::new(DiracModRule {
            base: s.clone(),
            constraints: constraints.to_vec(),
            inv,
        }),
    ))
}

/// Central charge and conformal weights extracted from an energy density.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VirasoroReport {
    pub central_charge: Rat,
    pub weights: BTreeMap<VarKey, Rat>,
}

/// Check that `energy` generates a conformal bracket and read off the
/// central charge and the weight of every generator.
///
/// The self-bracket must be exactly `(2 lambda + d) energy + c lambda^3`
/// with a rational `c`; the bracket with a generator `g` must have
/// constant term `g'` and linear term a rational multiple of `g`, the
/// weight.  Higher lambda-corrections on generators are allowed.
pub fn virasoro_report(s: &PVAStructure, energy: &DiffPoly) -> Result<VirasoroReport> {
    let tt = s.master_bracket(energy, energy)?;
    if !tt.is_local() {
        return Err(Error::Unsupported("the energy self-bracket has a nonlocal tail".into()));
    }
    let shape_ok = tt.coeff(0) == energy.total_derivative()
        && tt.coeff(1) == energy.scale(&rat_i(2))
        && tt.coeff(2).is_zero()
        && tt.degree().unwrap_or(0) <= 3;
    if !shape_ok {
        return Err(Error::CrossCheck(
            "the candidate density does not generate a conformal bracket".into(),
        ));
    }
    let c3 = tt.coeff(3);
    if !c3.is_constant() {
        return Err(Error::CrossCheck("the central term is not constant".into()));
    }
    let central_charge = c3.coeff(&Monomial::one());
    let mut weights = BTreeMap::new();
    for g in s.universe.gens()? {
        let tv = s.master_bracket(energy, &DiffPoly::gen(g))?;
        if !tv.is_local() {
            return Err(Error::Unsupported(format!(
                "the energy bracket with {} has a nonlocal tail",
                DiffPoly::gen(g)
            )));
        }
        let gen = DiffPoly::gen(g);
        if tv.coeff(0) != gen.total_derivative() {
            return Err(Error::CrossCheck(format!(
                "the energy does not translate {}",
                gen
            )));
        }
        let c1 = tv.coeff(1);
        let weight = c1.coeff(&Monomial::var(g));
        if c1 != gen.scale(&weight) {
            return Err(Error::CrossCheck(format!(
                "the linear term on {} is not a multiple of the generator",
                gen
            )));
        }
        weights.insert(g, weight);
    }
    Ok(VirasoroReport { central_charge, weights })
}

/// Entry rule negating another structure, for difference pencils.
struct NegatedRule {
    inner: PVAStructure,
}

impl EntryRule for NegatedRule {
    fn entry(&self, i: VarKey, j: VarKey) -> Result<LambdaValue> {
        Ok(-&*self.inner.entry(i, j)?)
    }
}

/// The one-parameter family `h - c k` with a formal constant `c`.
pub fn pencil_minus(h: &PVAStructure, k: &PVAStructure) -> PVAStructure {
    let neg = PVAStructure::new(
        &format!("neg({})", k.name),
        k.universe,
        Arc::new(NegatedRule { inner: k.clone() }),
    );
    let mut p = h.pencil(&neg);
    p.name = format!("{} - c*{}", h.name, k.name);
    p
}

/// A named structure with its compatible linear partner when one exists.
#[derive(Debug, Clone)]
pub struct StructureSet {
    pub name: String,
    pub h: PVAStructure,
    pub k: Option<PVAStructure>,
}

impl StructureSet {
    /// The family `h - c k`, when the linear partner exists.
    pub fn pencil(&self) -> Result<PVAStructure> {
        let k = self.k.as_ref().ok_or_else(|| {
            Error::Unsupported(format!("{} has no linear partner table", self.name))
        })?;
        Ok(pencil_minus(&self.h, k))
    }
}

fn broken_demo() -> PVAStructure {
    let a = VarKey::gen(Family::A, 1, 0, 0);
    let b = VarKey::gen(Family::A, 2, 0, 0);
    let mut entries = BTreeMap::new();
    entries.insert((a, a), LambdaValue::mono(1, DiffPoly::one()));
    entries.insert((b, b), LambdaValue::mono(1, DiffPoly::one()));
    entries.insert((a, b), LambdaValue::mono(1, DiffPoly::gen(a)));
    PVAStructure::new(
        "broken-demo",
        Universe::scalar(Family::A, 1, 2),
        Arc::new(ExplicitRule::with_skew_completion(entries)),
    )
}

fn virasoro_linear_part() -> PVAStructure {
    let u = VarKey::u(-1);
    let mut entries = BTreeMap::new();
    entries.insert((u, u), LambdaValue::mono(1, DiffPoly::one()));
    PVAStructure::new(
        "k(virasoro)",
        Universe::scalar(Family::U, -1, -1),
        Arc::new(ExplicitRule::new(entries)),
    )
}

fn unknown(raw: &str) -> Error {
    Error::UnknownStructure(format!(
        "{raw} (known: v<N>, w<N>, v-mat(N,m), w-mat(N,m), each optionally -inf, \
         gfz(N), virasoro, broken-demo, kdv, boussinesq, kp, matrix-kdv, matrix-kp)"
    ))
}

/// Resolve a structure name.
///
/// Canonical names are `v<N>` and `w<N>` for the scalar tables and their
/// reductions, `v-mat(N,m)` and `w-mat(N,m)` for matrix coefficients,
/// with an optional `-inf` suffix selecting the full symbol tail;
/// `gfz(N)` for the free-field structure with a symbolic pairing;
/// `virasoro`; and `broken-demo`, an intentionally inconsistent table for
/// exercising failure paths.  Aliases: `kdv`, `boussinesq`, `kp`,
/// `matrix-kdv`, `matrix-kp`, `virasoro-magri`.
pub fn by_name(raw: &str) -> Result<StructureSet> {
    by_name_with(raw, false)
}

/// Like [`by_name`], with dual-route cross-checking switched on inside any
/// underlying Adler context.
pub fn by_name_with(raw: &str, cross_check: bool) -> Result<StructureSet> {
    let canonical = canonical_name(raw);

    if canonical == "virasoro" {
        return Ok(StructureSet {
            name: canonical,
            h: classics::virasoro_formal(),
            k: Some(virasoro_linear_part()),
        });
    }
    if canonical == "broken-demo" {
        return Ok(StructureSet { name: canonical, h: broken_demo(), k: None });
    }
    if let Some(inner) = canonical.strip_prefix("gfz(").and_then(|r| r.strip_suffix(')')) {
        let n: usize = inner.trim().parse().map_err(|_| unknown(raw))?;
        if n == 0 {
            return Err(unknown(raw));
        }
        return Ok(StructureSet {
            name: canonical.clone(),
            h: classics::free_field(n, GramMatrix::Symbolic),
            k: None,
        });
    }

    let (ctx, reduce) = parse_adler_name(raw, &canonical)?;
    let ctx = ctx.with_cross_check(cross_check);
    if reduce {
        Ok(StructureSet {
            name: ctx.reduced_name(),
            h: dirac_reduce(&ctx, AgdTable::H)?,
            k: Some(ctx.reduced_k()?),
        })
    } else {
        Ok(StructureSet {
            name: ctx.base_name(),
            h: ctx.build_h(),
            k: Some(ctx.build_k()),
        })
    }
}

/// Canonical spelling behind the registry aliases.
fn canonical_name(raw: &str) -> String {
    let lowered = raw.trim().to_ascii_lowercase();
    match lowered.as_str() {
        "kdv" => "w2",
        "boussinesq" => "w3",
        "kp" => "w1-inf",
        "matrix-kdv" => "w-mat(2,2)",
        "matrix-kp" => "w-mat(1,2)-inf",
        "virasoro-magri" => "virasoro",
        other => other,
    }
    .to_string()
}

/// The Adler context and reduction flag behind a `v.../w...` name, or
/// `None` when the name resolves to a structure with no Adler context.
pub fn adler_by_name(raw: &str) -> Result<Option<(AdlerContext, bool)>> {
    let canonical = canonical_name(raw);
    if matches!(canonical.as_str(), "virasoro" | "broken-demo") || canonical.starts_with("gfz(") {
        return Ok(None);
    }
    parse_adler_name(raw, &canonical).map(Some)
}

fn parse_adler_name(raw: &str, canonical: &str) -> Result<(AdlerContext, bool)> {
    let (core, flavor) = match canonical.strip_suffix("-inf") {
        Some(c) => (c, Flavor::Infinite),
        None => (canonical, Flavor::Finite),
    };
    let (reduce, rest) = if let Some(r) = core.strip_prefix('w') {
        (true, r)
    } else if let Some(r) = core.strip_prefix('v') {
        (false, r)
    } else {
        return Err(unknown(raw));
    };
    let (n, m) = if let Some(inner) = rest.strip_prefix("-mat(").and_then(|r| r.strip_suffix(')')) {
        let mut parts = inner.split(',');
        let n: u32 = parts
            .next()
            .and_then(|p| p.trim().parse().ok())
            .ok_or_else(|| unknown(raw))?;
        let m: usize = parts
            .next()
            .and_then(|p| p.trim().parse().ok())
            .ok_or_else(|| unknown(raw))?;
        if parts.next().is_some() {
            return Err(unknown(raw));
        }
        (n, m)
    } else {
        let n: u32 = rest.parse().map_err(|_| unknown(raw))?;
        (n, 1)
    };
    let ctx = AdlerContext::new(n, m, flavor)?;
    Ok((ctx, reduce))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffalg::ConstKey;

    fn u(i: i32) -> DiffPoly {
        DiffPoly::gen(VarKey::u(i))
    }

    fn um(i: i32, r: u8, c: u8) -> DiffPoly {
        DiffPoly::gen(VarKey::u_at(i, r, c))
    }

    fn ctx(n: u32, m: usize) -> AdlerContext {
        AdlerContext::new(n, m, Flavor::Finite).unwrap()
    }

    fn local(parts: &[(u32, DiffPoly)]) -> LambdaValue {
        LambdaValue::from_local(parts.iter().cloned())
    }

    #[test]
    fn first_order_scalar_tables() {
        let c = ctx(1, 1);
        let h = c.h_entry(VarKey::u(-1), VarKey::u(-1)).unwrap();
        assert_eq!(h, local(&[(1, DiffPoly::from_int(-1))]));
        let k = c.k_entry(VarKey::u(-1), VarKey::u(-1)).unwrap();
        assert!(k.is_zero());
    }

    #[test]
    fn second_order_scalar_tables() {
        let c = ctx(2, 1);
        let top = c.h_entry(VarKey::u(-2), VarKey::u(-2)).unwrap();
        assert_eq!(top, local(&[(1, DiffPoly::from_int(-2))]));
        // Cross entry and its skew counterpart.
        let cross = c.h_entry(VarKey::u(-2), VarKey::u(-1)).unwrap();
        assert_eq!(cross, local(&[(1, -&u(-2)), (2, DiffPoly::from_int(-1))]));
        let back = c.h_entry(VarKey::u(-1), VarKey::u(-2)).unwrap();
        assert_eq!(&back + &cross.skew_star(), LambdaValue::zero());
        let k = c.k_entry(VarKey::u(-1), VarKey::u(-1)).unwrap();
        assert_eq!(k, local(&[(1, DiffPoly::from_int(2))]));
    }

    #[test]
    fn first_order_matrix_table_is_affine() {
        let c = ctx(1, 2);
        for a in 0..2u8 {
            for b in 0..2u8 {
                for cc in 0..2u8 {
                    for d in 0..2u8 {
                        let got = c
                            .h_entry(VarKey::u_at(-1, a, b), VarKey::u_at(-1, cc, d))
                            .unwrap();
                        let mut expect = LambdaValue::zero();
                        if cc == b {
                            expect.add_local(0, um(-1, a, d));
                        }
                        if a == d {
                            expect.add_local(0, -&um(-1, cc, b));
                            if cc == b {
                                expect.add_local(1, DiffPoly::from_int(-1));
                            }
                        }
                        assert_eq!(got, expect, "entry ({a}{b}),({cc}{d})");
                    }
                }
            }
        }
    }

    #[test]
    fn linear_table_annihilates_the_subleading_coefficient() {
        for (n, m) in [(2u32, 1usize), (3, 1), (2, 2)] {
            let c = ctx(n, m);
            let top = -(n as i32);
            for j in top..=-1 {
                for r in 0..m as u8 {
                    for s in 0..m as u8 {
                        for r2 in 0..m as u8 {
                            for s2 in 0..m as u8 {
                                let lead = VarKey::u_at(top, r, s);
                                let other = VarKey::u_at(j, r2, s2);
                                assert!(c.k_entry(lead, other).unwrap().is_zero());
                                assert!(c.k_entry(other, lead).unwrap().is_zero());
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn reduced_second_order_entry() {
        let c = ctx(2, 1);
        let got = c.dirac_entry(VarKey::u(-1), VarKey::u(-1)).unwrap();
        let expect = local(&[
            (1, u(-1).scale(&rat_i(2))),
            (0, u(-1).total_derivative()),
            (3, DiffPoly::constant(rat(1, 2))),
        ]);
        assert_eq!(got, expect);
    }

    #[test]
    fn reduced_third_order_entries() {
        let c = ctx(3, 1);
        let (uu, vv) = (VarKey::u(-2), VarKey::u(-1));
        let got_uu = c.dirac_entry(uu, uu).unwrap();
        assert_eq!(
            got_uu,
            local(&[
                (1, u(-2).scale(&rat_i(2))),
                (0, u(-2).total_derivative()),
                (3, DiffPoly::from_int(2)),
            ])
        );
        let got_uv = c.dirac_entry(uu, vv).unwrap();
        assert_eq!(
            got_uv,
            local(&[
                (1, u(-1).scale(&rat_i(3))),
                (0, u(-1).total_derivative()),
                (2, u(-2)),
                (4, DiffPoly::one()),
            ])
        );
        // (2l+d)(v' - u''/2 - u^2/3) - (2l+d)^3 u / 6 - 2 l^5 / 3.
        let inner = &(&u(-1).nth_derivative(1) - &u(-2).nth_derivative(2).scale(&rat(1, 2)))
            - &u(-2).pow(2).scale(&rat(1, 3));
        let mut expect = local(&[(1, inner.scale(&rat_i(2))), (0, inner.total_derivative())]);
        expect += &local(&[
            (3, u(-2).scale(&rat(-8, 6))),
            (2, u(-2).nth_derivative(1).scale(&rat(-12, 6))),
            (1, u(-2).nth_derivative(2).scale(&rat(-6, 6))),
            (0, u(-2).nth_derivative(3).scale(&rat(-1, 6))),
        ]);
        expect += &local(&[(5, DiffPoly::constant(rat(-2, 3)))]);
        assert_eq!(c.dirac_entry(vv, vv).unwrap(), expect);
    }

    #[test]
    fn reduced_third_order_linear_table() {
        let c = ctx(3, 1);
        let k = c.reduced_k().unwrap();
        assert!(k.entry(VarKey::u(-2), VarKey::u(-2)).unwrap().is_zero());
        assert_eq!(
            *k.entry(VarKey::u(-2), VarKey::u(-1)).unwrap(),
            local(&[(1, DiffPoly::from_int(3))])
        );
        assert!(k.entry(VarKey::u(-1), VarKey::u(-1)).unwrap().is_zero());
    }

    #[test]
    fn reduced_second_order_matrix_table() {
        let c = ctx(2, 2);
        let half = rat(1, 2);
        for a in 0..2u8 {
            for b in 0..2u8 {
                for cc in 0..2u8 {
                    for d in 0..2u8 {
                        let got = c
                            .dirac_entry(VarKey::u_at(-1, a, b), VarKey::u_at(-1, cc, d))
                            .unwrap();
                        let mut expect = LambdaValue::zero();
                        if a == d && cc == b {
                            expect.add_local(3, DiffPoly::constant(half.clone()));
                        }
                        if cc == b {
                            expect.add_local(1, um(-1, a, d));
                            expect.add_local(0, um(-1, a, d).total_derivative().scale(&half));
                        }
                        if a == d {
                            expect.add_local(1, um(-1, cc, b));
                            expect.add_local(0, um(-1, cc, b).total_derivative().scale(&half));
                        }
                        expect.add_pair(&um(-1, a, d), &um(-1, cc, b), &(-half.clone()));
                        expect.add_pair(&um(-1, cc, b), &um(-1, a, d), &(-half.clone()));
                        for k in 0..2u8 {
                            if a == d {
                                expect.add_pair(&um(-1, cc, k), &um(-1, k, b), &half);
                            }
                            if cc == b {
                                expect.add_pair(&um(-1, k, d), &um(-1, a, k), &half);
                            }
                        }
                        assert_eq!(got, expect, "entry ({a}{b}),({cc}{d})");
                    }
                }
            }
        }
    }

    #[test]
    fn oracle_matches_closed_forms_on_small_cases() {
        let c1 = ctx(1, 1);
        assert_eq!(
            c1.oracle_symbol(AgdTable::H, VarKey::u(-1), VarKey::u(-1)).unwrap(),
            local(&[(1, DiffPoly::from_int(-1))])
        );
        let c2 = ctx(2, 1);
        assert_eq!(
            c2.oracle_symbol(AgdTable::K, VarKey::u(-1), VarKey::u(-1)).unwrap(),
            local(&[(1, DiffPoly::from_int(2))])
        );
        assert_eq!(
            c2.oracle_symbol(AgdTable::H, VarKey::u(-2), VarKey::u(-1)).unwrap(),
            c2.h_entry(VarKey::u(-2), VarKey::u(-1)).unwrap()
        );
    }

    #[test]
    fn factor_brackets_with_the_subleading_row() {
        let c = ctx(2, 1);
        // {u_{-2} l u_{-1}} = -l u_{-2} - l^2 and its skew image.
        let a = c.h_entry(VarKey::u(-2), VarKey::u(-1)).unwrap();
        assert_eq!(a, local(&[(1, -&u(-2)), (2, DiffPoly::from_int(-1))]));
        let b = c.h_entry(VarKey::u(-1), VarKey::u(-2)).unwrap();
        assert_eq!(
            b,
            local(&[
                (2, DiffPoly::one()),
                (1, -&u(-2)),
                (0, -&u(-2).total_derivative()),
            ])
        );
    }

    #[test]
    fn modification_route_matches_closed_reduction() {
        let c = ctx(2, 1);
        let v2 = c.build_h();
        let modified =
            generic_dirac(&v2, &[u(-2)], &TruncationPolicy::default()).unwrap();
        let w2 = dirac_reduce(&c, AgdTable::H).unwrap();
        let key = VarKey::u(-1);
        let got = modified
            .entry(key, key)
            .unwrap()
            .zero_out(|k| k.fam == Family::U && k.idx == -2);
        assert_eq!(got, *w2.entry(key, key).unwrap());
    }

    #[test]
    fn conformal_reports() {
        let w2 = dirac_reduce(&ctx(2, 1), AgdTable::H).unwrap();
        let r2 = virasoro_report(&w2, &u(-1)).unwrap();
        assert_eq!(r2.central_charge, rat(1, 2));
        assert_eq!(r2.weights[&VarKey::u(-1)], rat_i(2));

        let w3 = dirac_reduce(&ctx(3, 1), AgdTable::H).unwrap();
        let r3 = virasoro_report(&w3, &u(-2)).unwrap();
        assert_eq!(r3.central_charge, rat_i(2));
        assert_eq!(r3.weights[&VarKey::u(-2)], rat_i(2));
        assert_eq!(r3.weights[&VarKey::u(-1)], rat_i(3));
    }

    #[test]
    fn constraint_maps_vanish_on_the_identity() {
        let c = ctx(2, 2);
        let id = MatPoly::identity(2);
        let b = c.constraint_b(&id).unwrap();
        assert!(b.values().all(MatPoly::is_zero));
        assert!(c.constraint_c(&id).unwrap().is_zero());
    }

    #[test]
    fn constraint_adjoint_on_first_order_scalar() {
        let c = ctx(1, 1);
        let g = u(-1).pow(2);
        let mut input = BTreeMap::new();
        input.insert(-1, MatPoly::scalar(g.clone()));
        let got = c.constraint_b_star(&input).unwrap();
        assert_eq!(*got.entry(0, 0), -&g.total_derivative());
    }

    #[test]
    fn difference_pencil_entry() {
        let set = by_name("kdv").unwrap();
        let pencil = set.pencil().unwrap();
        let got = pencil.entry(VarKey::u(-1), VarKey::u(-1)).unwrap();
        let c = DiffPoly::formal_const(ConstKey::C);
        let expect = local(&[
            (3, DiffPoly::constant(rat(1, 2))),
            (1, &u(-1).scale(&rat_i(2)) - &c.scale(&rat_i(2))),
            (0, u(-1).total_derivative()),
        ]);
        assert_eq!(*got, expect);
    }

    #[test]
    fn registry_names_and_aliases() {
        assert_eq!(by_name("kdv").unwrap().name, "w2");
        assert_eq!(by_name("boussinesq").unwrap().name, "w3");
        assert_eq!(by_name("kp").unwrap().name, "w1-inf");
        let mat = by_name("matrix-kdv").unwrap();
        assert_eq!(mat.name, "w-mat(2,2)");
        assert_eq!(mat.h.universe.m, 2);
        let kp = by_name("kp").unwrap();
        assert!(!kp.h.universe.is_finite());
        assert!(by_name("nonsense").is_err());
        assert!(by_name("w1").is_err());
        assert_eq!(by_name("gfz(3)").unwrap().h.universe.set, IndexSet::Range(1, 3));
    }

    #[test]
    fn intentional_counterexample_has_a_jacobi_witness() {
        let demo = by_name("broken-demo").unwrap().h;
        let a = VarKey::gen(Family::A, 1, 0, 0);
        let b = VarKey::gen(Family::A, 2, 0, 0);
        let res = demo.jacobi_residual(a, b, b).unwrap();
        let av = DiffPoly::gen(a);
        assert_eq!(res.coeff(2, 0), -&av);
        assert_eq!(res.coeff(1, 1), av.scale(&rat_i(-2)));
        assert_eq!(res.coeff(1, 0), -&av.total_derivative());
        assert!(!res.is_zero());
    }
}
