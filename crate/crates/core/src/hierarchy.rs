//! Integrable hierarchies of one operator context: conserved densities
//! from fractional powers, Lax flows, bracket flows, the Lenard recursion
//! between the two tables, involution of the integrals, the adjoint
//! annihilation check for matrix coefficients, and the classical reduced
//! equations recovered from the flows.
//!
//! Every quantity is computed in exact arithmetic under a truncation
//! policy, and everything that admits two routes is computed twice: a
//! density is recomputed at a deeper floor, a variational derivative is
//! produced both from the closed residue formula and by differentiating
//! the density, and a flow is produced both from the Lax commutator and
//! through the bracket tables.

use std::collections::BTreeMap;

use serde_json::json;

use crate::agd::{dirac_reduce, mat_mul, AdlerContext, AgdTable, Flavor};
use crate::diffalg::{binom_rat, rat, rat_i, DiffPoly, Family, Monomial, Rat, VarKey};
use crate::lambda::LambdaValue;
use crate::psido::{MatPoly, PsiDO, TruncationPolicy};
use crate::pva::{LocalFunctional, PVAStructure};
use crate::{Error, Result};

/// Which bracket table drives a flow or an involution check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StructureChoice {
    /// The quadratic table on the unreduced coefficients.
    H,
    /// The linear table (restricted when the spec is reduced).
    K,
    /// The reduced quadratic table.
    HDirac,
}

/// The right-hand sides of `du_j/dt_k` on a window of generators.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowEquation {
    pub k: u32,
    pub flows: BTreeMap<VarKey, DiffPoly>,
}

impl FlowEquation {
    pub fn get(&self, key: VarKey) -> Option<&DiffPoly> {
        self.flows.get(&key)
    }

    pub fn is_zero(&self) -> bool {
        self.flows.values().all(DiffPoly::is_zero)
    }

    /// The evolving generators with their right-hand sides, in key order.
    pub fn flows(&self) -> impl Iterator<Item = (&VarKey, &DiffPoly)> {
        self.flows.iter()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let flows: serde_json::Map<String, serde_json::Value> = self
            .flows
            .iter()
            .map(|(key, poly)| (Monomial::var(*key).to_string(), poly.to_json()))
            .collect();
        json!({ "k": self.k, "flows": flows })
    }
}

/// The classical reduced equations that can be recovered from the flows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReducedPde {
    /// `3 u_yy = (4 u_t - u''' - 6 u u')'` with `y = t_2`, `t = t_3`,
    /// `u = 2 u_0`.
    Kp,
    /// `u_tt = -(1/3)(u'''' - 4 (u u')')` in the sign-flipped variable.
    Boussinesq,
    /// `W' = U_y` and `3 W_y = 4 U_t - U''' - 6 (U^2)' + 6 [U, W]` with
    /// `U = U_0`, `W = 2 U_1 + U_0'`.
    MatrixKp,
}

/// A hierarchy attached to one operator context, either on all
/// coefficients or on the reduced ones.
#[derive(Debug, Clone)]
pub struct HierarchySpec {
    ctx: AdlerContext,
    reduced: bool,
    k_max: u32,
    gen_bound: i32,
    policy: TruncationPolicy,
}

impl HierarchySpec {
    pub fn new(ctx: AdlerContext, reduced: bool) -> Result<HierarchySpec> {
        if reduced && ctx.flavor() == Flavor::Finite && ctx.order() < 2 {
            return Err(Error::Dimension(
                "reducing a first-order differential operator leaves no generators".into(),
            ));
        }
        let k_max = if ctx.dim() > 1 {
            3
        } else if ctx.flavor() == Flavor::Infinite {
            4
        } else if ctx.order() == 2 {
            5
        } else {
            4
        };
        let gen_bound = ctx.universe().set.lo() + 3;
        let policy = *ctx.policy();
        Ok(HierarchySpec { ctx, reduced, k_max, gen_bound, policy })
    }

    pub fn with_k_max(mut self, k_max: u32) -> Result<HierarchySpec> {
        if k_max == 0 {
            return Err(Error::Dimension("the flow range must contain k = 1".into()));
        }
        self.k_max = k_max;
        Ok(self)
    }

    /// Highest generator index carried by flow equations (only relevant
    /// for the infinite flavor, where the generator list is a window).
    pub fn with_gen_bound(mut self, hi: i32) -> HierarchySpec {
        self.gen_bound = hi;
        self
    }

    pub fn with_policy(mut self, policy: TruncationPolicy) -> HierarchySpec {
        self.policy = policy;
        self
    }

    pub fn ctx(&self) -> &AdlerContext {
        &self.ctx
    }

    pub fn reduced(&self) -> bool {
        self.reduced
    }

    pub fn k_max(&self) -> u32 {
        self.k_max
    }

    fn operator(&self, policy: &TruncationPolicy) -> PsiDO {
        if self.reduced {
            self.ctx.l_op_reduced(policy)
        } else {
            self.ctx.l_op(policy)
        }
    }

    fn on_surface(&self, p: DiffPoly) -> DiffPoly {
        if self.reduced {
            let top = -(self.ctx.order() as i32);
            p.zero_out(|key| key.fam == Family::U && key.idx == top)
        } else {
            p
        }
    }

    /// The generators flows are reported on: the whole universe for the
    /// finite flavor, a window up to the generator bound otherwise.
    pub fn generators(&self) -> Result<Vec<VarKey>> {
        let universe = if self.reduced {
            self.ctx.reduced_universe()?
        } else {
            self.ctx.universe()
        };
        if universe.is_finite() {
            universe.gens()
        } else {
            Ok(universe.gens_bounded(self.gen_bound))
        }
    }

    /// The bracket structure for a choice, matching the reduction state.
    pub fn structure(&self, choice: StructureChoice) -> Result<PVAStructure> {
        match choice {
            StructureChoice::H => Ok(self.ctx.build_h()),
            StructureChoice::K => {
                if self.reduced {
                    self.ctx.reduced_k()
                } else {
                    Ok(self.ctx.build_k())
                }
            }
            StructureChoice::HDirac => {
                if self.reduced {
                    dirac_reduce(&self.ctx, AgdTable::H)
                } else {
                    Err(Error::Unsupported(
                        "the reduced table belongs to a reduced spec".into(),
                    ))
                }
            }
        }
    }

    /// The `k`-th conserved density, `(N/k)` times the trace residue of
    /// `L^{k/N}`, recomputed at a deeper floor to certify stability.
    pub fn density(&self, k: u32) -> Result<DiffPoly> {
        if k == 0 {
            return Err(Error::Dimension("flow indices start at 1".into()));
        }
        let shallow = self.density_at(k, &self.policy)?;
        let deep = self.density_at(k, &self.policy.deeper())?;
        if shallow != deep {
            return Err(Error::Truncation(format!(
                "density {k} changes between floors {} and {}; use a deeper floor",
                self.policy.floor,
                self.policy.deeper().floor
            )));
        }
        Ok(shallow)
    }

    fn density_at(&self, k: u32, policy: &TruncationPolicy) -> Result<DiffPoly> {
        let l = self.operator(policy);
        let power = l.frac_power(k as i64, self.ctx.order(), policy)?;
        let res = power.trace_residue()?;
        Ok(res.scale(&rat(self.ctx.order() as i64, k as i64)))
    }

    /// Variational derivative of the `k`-th density along one generator,
    /// from the closed residue formula; it must agree with the direct
    /// variational derivative of [`HierarchySpec::density`].
    pub fn density_varder(&self, k: u32, key: VarKey) -> Result<DiffPoly> {
        let closed = self.varder_closed(k, key, &self.policy)?;
        let direct = self.density(k)?.varder(key.base());
        if closed != direct {
            return Err(Error::CrossCheck(format!(
                "the two variational-derivative routes differ at k = {k}, {}",
                Monomial::var(key.base())
            )));
        }
        Ok(closed)
    }

    /// Closed residue formula for the gradient: entry `(col, row)` of
    /// `res(d^{-i-1} L^{k/N - 1})`.  On a reduced spec with `i = -N` this
    /// is the gradient of the unconstrained density evaluated on the
    /// constraint surface, which has no direct-route counterpart.
    fn varder_closed(&self, k: u32, key: VarKey, policy: &TruncationPolicy) -> Result<DiffPoly> {
        let n = self.ctx.order();
        let l = self.operator(policy);
        let power = l.frac_power(k as i64 - n as i64, n, policy)?;
        let shifted = PsiDO::d_pow(self.ctx.dim(), -(key.idx as i64) - 1).compose(&power, policy);
        let res = shifted.residue()?;
        Ok(res.entry(key.col as usize, key.row as usize).clone())
    }

    /// The gradient as a matrix for each coefficient index, for the
    /// adjoint annihilation check.
    fn gradient_matrices(&self, k: u32) -> Result<BTreeMap<i32, MatPoly>> {
        let n = self.ctx.order() as i32;
        let mut out = BTreeMap::new();
        for i in -n..=-1 {
            let power = self
                .operator(&self.policy)
                .frac_power(k as i64 - n as i64, self.ctx.order(), &self.policy)?;
            let shifted =
                PsiDO::d_pow(self.ctx.dim(), -(i as i64) - 1).compose(&power, &self.policy);
            out.insert(i, shifted.residue()?.transpose());
        }
        Ok(out)
    }

    /// Lax flow `dL/dt_k = [(L^{k/N})_+, L]`, read coefficient-wise, with
    /// a deeper-floor stability re-check.  On a reduced spec the flow of
    /// the missing coefficient is checked to vanish, so the constraint is
    /// preserved.
    pub fn lax_flow(&self, k: u32) -> Result<FlowEquation> {
        let shallow = self.lax_flow_at(k, &self.policy)?;
        let deep = self.lax_flow_at(k, &self.policy.deeper())?;
        if shallow != deep {
            return Err(Error::Truncation(format!(
                "flow {k} changes between floors {} and {}; use a deeper floor",
                self.policy.floor,
                self.policy.deeper().floor
            )));
        }
        Ok(shallow)
    }

    fn lax_flow_at(&self, k: u32, policy: &TruncationPolicy) -> Result<FlowEquation> {
        if k == 0 {
            return Err(Error::Dimension("flow indices start at 1".into()));
        }
        let n = self.ctx.order();
        let l = self.operator(policy);
        let plus = l.frac_power(k as i64, n, policy)?.plus_part();
        let comm = &plus.compose(&l, policy) - &l.compose(&plus, policy);
        if let Some(order) = comm.order() {
            if order > n as i64 - 1 {
                return Err(Error::CrossCheck(format!(
                    "the Lax commutator has order {order}, above the coefficient range"
                )));
            }
        }
        if self.reduced {
            let lead = comm.coeff(n as i64 - 1)?;
            if !lead.is_zero() {
                return Err(Error::CrossCheck(
                    "the Lax flow does not preserve the reduction constraint".into(),
                ));
            }
        }
        let mut flows = BTreeMap::new();
        for g in self.generators()? {
            let mat = comm.coeff(-(g.idx as i64) - 1)?;
            flows.insert(g, mat.entry(g.row as usize, g.col as usize).clone());
        }
        Ok(FlowEquation { k, flows })
    }

    /// Flow through a bracket table: `du_j/dt_k = {h_k lambda u_j}` at
    /// `lambda = 0`, evaluated on the constraint surface for reduced
    /// specs.
    pub fn bracket_flow(&self, choice: StructureChoice, k: u32) -> Result<FlowEquation> {
        if choice == StructureChoice::H && self.reduced {
            return self.bracket_flow_unreduced_table(k);
        }
        let h = self.density(k)?;
        let s = self.structure(choice)?;
        let mut flows = BTreeMap::new();
        for g in self.generators()? {
            let f = s.flow_operator(&h, g)?;
            flows.insert(g, self.on_surface(f));
        }
        Ok(FlowEquation { k, flows })
    }

    /// Flow of a reduced density through the unreduced quadratic table.
    ///
    /// On the constraint surface the gradient keeps a component along the
    /// eliminated coefficient (the unconstrained density depends on it);
    /// the closed residue formula provides that component, and with it the
    /// unreduced table reproduces the reduced flow.
    fn bracket_flow_unreduced_table(&self, k: u32) -> Result<FlowEquation> {
        let s = self.ctx.build_h();
        let h = self.density(k)?;
        let top = -(self.ctx.order() as i32);
        let mut keys = h.vars_used();
        for a in 0..self.ctx.dim() as u8 {
            for b in 0..self.ctx.dim() as u8 {
                keys.insert(VarKey::u_at(top, a, b));
            }
        }
        let mut grads: Vec<(VarKey, DiffPoly)> = Vec::new();
        for key in keys {
            let grad = if key.idx == top {
                self.varder_closed(k, key, &self.policy)?
            } else {
                h.varder(key)
            };
            if !grad.is_zero() {
                grads.push((key, grad));
            }
        }
        let mut flows = BTreeMap::new();
        for g in self.generators()? {
            let mut acc = LambdaValue::zero();
            for (key, grad) in &grads {
                let e = s.entry(*key, g)?;
                if e.is_zero() {
                    continue;
                }
                acc += &e.apply_as_operator(&LambdaValue::mono(0, grad.clone()))?;
            }
            flows.insert(g, self.on_surface(acc.at_zero()?));
        }
        Ok(FlowEquation { k, flows })
    }

    /// The Lenard recursion residual: the `k`-th flow of the quadratic
    /// table minus the `(k+N)`-th flow of the linear table, generator by
    /// generator.  Zero means the two tables produce one hierarchy.
    pub fn lenard_residual(&self, k: u32) -> Result<BTreeMap<VarKey, DiffPoly>> {
        let quad = if self.reduced {
            StructureChoice::HDirac
        } else {
            StructureChoice::H
        };
        let a = self.bracket_flow(quad, k)?;
        let b = self.bracket_flow(StructureChoice::K, k + self.ctx.order())?;
        let mut out = BTreeMap::new();
        for g in self.generators()? {
            let pa = a.get(g).cloned().unwrap_or_else(DiffPoly::zero);
            let pb = b.get(g).cloned().unwrap_or_else(DiffPoly::zero);
            out.insert(g, &pa - &pb);
        }
        Ok(out)
    }

    /// Bracket of two integrals of motion under a chosen table; the
    /// residual functional must vanish.
    pub fn involution_check(
        &self,
        choice: StructureChoice,
        k1: u32,
        k2: u32,
    ) -> Result<LocalFunctional> {
        let s = self.structure(choice)?;
        let f = LocalFunctional::new(self.density(k1)?);
        let g = LocalFunctional::new(self.density(k2)?);
        let mut residual = s.functional_bracket(&f, &g)?;
        residual.density = self.on_surface(residual.density);
        Ok(residual)
    }

    /// Apply the adjoint of the coefficient linearization to the gradient
    /// of the `k`-th density; the result must vanish, which certifies the
    /// recursion step that the nonlocal reduced table cannot state
    /// locally.  On a reduced spec the adjoint is evaluated on the
    /// constraint surface, like the gradient.
    pub fn b_star_annihilation(&self, k: u32) -> Result<MatPoly> {
        let grads = self.gradient_matrices(k)?;
        let raw = self.ctx.constraint_b_star(&grads)?;
        Ok(raw.map(|p| self.on_surface(p.clone())))
    }

    /// Evaluation profile of the top-coefficient gradient: with every
    /// generator sent to zero except the undifferentiated `u_{-N}`, the
    /// gradient collapses to `binom(k/N - 1, k) u_{-N}^k`.  Returns the
    /// evaluated gradient; the expected image is
    /// [`HierarchySpec::leading_gradient_expected`].
    pub fn leading_gradient_evaluation(&self, k: u32) -> Result<DiffPoly> {
        if self.reduced || self.ctx.dim() != 1 {
            return Err(Error::Unsupported(
                "the evaluation profile is defined on unreduced scalar specs".into(),
            ));
        }
        let top = -(self.ctx.order() as i32);
        let key = VarKey::u(top);
        let grad = self.varder_closed(k, key, &self.policy)?;
        Ok(grad.zero_out(|v| !(v.fam == Family::U && v.idx == top && v.der == 0)))
    }

    /// The expected image of the evaluation profile.
    pub fn leading_gradient_expected(&self, k: u32) -> DiffPoly {
        let n = self.ctx.order();
        let top = -(n as i32);
        let coef = binom_rat(&(rat(k as i64, n as i64) - rat_i(1)), k);
        DiffPoly::gen(VarKey::u(top)).pow(k).scale(&coef)
    }

    /// Recover a named classical equation from the flows and return its
    /// residuals (one per scalar identity, entry-wise for matrix ones).
    pub fn verify_reduced_pde(&self, which: ReducedPde) -> Result<Vec<DiffPoly>> {
        match which {
            ReducedPde::Kp => {
                self.expect_shape(which, 1, 1, Flavor::Infinite)?;
                let d2 = self.lax_flow(2)?;
                let d3 = self.lax_flow(3)?;
                let u = DiffPoly::gen(VarKey::u(0)).scale(&rat_i(2));
                let u_y = derive(&d2, &u)?;
                let u_yy = derive(&d2, &u_y)?;
                let u_t = derive(&d3, &u)?;
                let inner = &(&u_t.scale(&rat_i(4)) - &u.nth_derivative(3))
                    - &(&u * &u.total_derivative()).scale(&rat_i(6));
                Ok(vec![&u_yy.scale(&rat_i(3)) - &inner.total_derivative()])
            }
            ReducedPde::Boussinesq => {
                self.expect_shape(which, 3, 1, Flavor::Finite)?;
                let d2 = self.lax_flow(2)?;
                let u = DiffPoly::gen(VarKey::u(-2));
                let u_t = derive(&d2, &u)?;
                let u_tt = derive(&d2, &u_t)?;
                let residual = &(&u_tt + &u.nth_derivative(4).scale(&rat(1, 3)))
                    + &(&u * &u.total_derivative()).total_derivative().scale(&rat(4, 3));
                Ok(vec![residual])
            }
            ReducedPde::MatrixKp => {
                self.expect_shape(which, 1, 2, Flavor::Infinite)?;
                let d2 = self.lax_flow(2)?;
                let d3 = self.lax_flow(3)?;
                let u0 = self.ctx.coeff_mat(0);
                let u1 = self.ctx.coeff_mat(1);
                let w = &u1.scale(&rat_i(2)) + &u0.total_derivative();
                let u_y = derive_mat(&d2, &u0)?;
                let first = &w.total_derivative() - &u_y;
                let w_y = derive_mat(&d2, &w)?;
                let u_t = derive_mat(&d3, &u0)?;
                let comm = &mat_mul(&u0, &w) - &mat_mul(&w, &u0);
                let second = &(&(&w_y.scale(&rat_i(3)) - &u_t.scale(&rat_i(4)))
                    + &(&u0.nth_derivative(3) + &mat_mul(&u0, &u0).total_derivative().scale(&rat_i(6))))
                    - &comm.scale(&rat_i(6));
                let mut out = Vec::new();
                for mat in [first, second] {
                    for r in 0..mat.dim() {
                        for c in 0..mat.dim() {
                            out.push(mat.entry(r, c).clone());
                        }
                    }
                }
                Ok(out)
            }
        }
    }

    fn expect_shape(&self, which: ReducedPde, n: u32, m: usize, flavor: Flavor) -> Result<()> {
        if self.ctx.order() != n
            || self.ctx.dim() != m
            || self.ctx.flavor() != flavor
            || !self.reduced
        {
            return Err(Error::Unsupported(format!(
                "{which:?} lives on the reduced spec of order {n}, size {m}, {flavor:?} flavor"
            )));
        }
        Ok(())
    }
}

/// Extend a flow equation to a derivation and apply it: the image of `p`
/// under `sum_j flow_j d/du_j`, with the chain rule over derivatives.
pub fn derive(flow: &FlowEquation, p: &DiffPoly) -> Result<DiffPoly> {
    let mut out = DiffPoly::zero();
    for base in p.vars_used() {
        let rhs = flow.get(base).ok_or_else(|| {
            Error::Unsupported(format!(
                "no flow for {}; widen the generator bound",
                Monomial::var(base)
            ))
        })?;
        if let Some(top) = p.max_der(base) {
            for der in 0..=top {
                let pd = p.partial(base.with_der(der));
                if pd.is_zero() {
                    continue;
                }
                out += &(&pd * &rhs.nth_derivative(der));
            }
        }
    }
    Ok(out)
}

fn derive_mat(flow: &FlowEquation, mat: &MatPoly) -> Result<MatPoly> {
    let m = mat.dim();
    let mut out = MatPoly::zero(m);
    for r in 0..m {
        for c in 0..m {
            out.set_entry(r, c, derive(flow, mat.entry(r, c))?);
        }
    }
    Ok(out)
}

/// Left over after comparing two flow equations generator by generator.
pub fn flow_difference(a: &FlowEquation, b: &FlowEquation) -> BTreeMap<VarKey, DiffPoly> {
    let mut out = BTreeMap::new();
    for key in a.flows.keys().chain(b.flows.keys()) {
        let pa = a.get(*key).cloned().unwrap_or_else(DiffPoly::zero);
        let pb = b.get(*key).cloned().unwrap_or_else(DiffPoly::zero);
        let d = &pa - &pb;
        if !d.is_zero() {
            out.insert(*key, d);
        }
    }
    out
}

/// Scale helper for densities appearing with rational prefactors.
pub fn scaled(p: &DiffPoly, c: Rat) -> DiffPoly {
    p.scale(&c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agd::by_name;

    fn u(i: i32) -> DiffPoly {
        DiffPoly::gen(VarKey::u(i))
    }

    fn kdv() -> HierarchySpec {
        HierarchySpec::new(AdlerContext::new(2, 1, Flavor::Finite).unwrap(), true).unwrap()
    }

    fn boussinesq() -> HierarchySpec {
        HierarchySpec::new(AdlerContext::new(3, 1, Flavor::Finite).unwrap(), true).unwrap()
    }

    fn kp() -> HierarchySpec {
        HierarchySpec::new(AdlerContext::new(1, 1, Flavor::Infinite).unwrap(), true).unwrap()
    }

    #[test]
    fn kdv_densities() {
        let spec = kdv();
        assert_eq!(spec.density(1).unwrap(), u(-1));
        let h3 = spec.density(3).unwrap();
        let expect = &u(-1).pow(2).scale(&rat(1, 4)) + &u(-1).nth_derivative(2).scale(&rat(1, 12));
        assert_eq!(h3, expect);
        assert!(LocalFunctional::new(spec.density(2).unwrap()).is_zero());
        assert!(LocalFunctional::new(h3)
            .equivalent(&LocalFunctional::new(u(-1).pow(2).scale(&rat(1, 4)))));
    }

    #[test]
    fn kdv_varder_routes() {
        let spec = kdv();
        assert_eq!(spec.density_varder(1, VarKey::u(-1)).unwrap(), DiffPoly::one());
        assert_eq!(
            spec.density_varder(3, VarKey::u(-1)).unwrap(),
            u(-1).scale(&rat(1, 2))
        );
    }

    #[test]
    fn kdv_flows_and_routes() {
        let spec = kdv();
        let f1 = spec.lax_flow(1).unwrap();
        assert_eq!(*f1.get(VarKey::u(-1)).unwrap(), u(-1).total_derivative());
        let f3 = spec.lax_flow(3).unwrap();
        let expect = &u(-1).nth_derivative(3).scale(&rat(1, 4))
            + &(&u(-1) * &u(-1).total_derivative()).scale(&rat(3, 2));
        assert_eq!(*f3.get(VarKey::u(-1)).unwrap(), expect);
        for k in [1u32, 3] {
            let lax = spec.lax_flow(k).unwrap();
            for choice in [StructureChoice::HDirac, StructureChoice::H] {
                let br = spec.bracket_flow(choice, k).unwrap();
                assert!(flow_difference(&lax, &br).is_empty(), "k={k} {choice:?}");
            }
        }
    }

    #[test]
    fn boussinesq_flows() {
        let spec = boussinesq();
        let f1 = spec.lax_flow(1).unwrap();
        assert_eq!(*f1.get(VarKey::u(-2)).unwrap(), u(-2).total_derivative());
        assert_eq!(*f1.get(VarKey::u(-1)).unwrap(), u(-1).total_derivative());
        let f2 = spec.lax_flow(2).unwrap();
        let du = &u(-1).total_derivative().scale(&rat_i(2)) - &u(-2).nth_derivative(2);
        assert_eq!(*f2.get(VarKey::u(-2)).unwrap(), du);
        let dv = &(&u(-1).nth_derivative(2) - &u(-2).nth_derivative(3).scale(&rat(2, 3)))
            - &(&u(-2) * &u(-2).total_derivative()).scale(&rat(2, 3));
        assert_eq!(*f2.get(VarKey::u(-1)).unwrap(), dv);
    }

    #[test]
    fn kp_densities_match_expected_functionals() {
        let spec = kp();
        let pairs: [(u32, DiffPoly); 4] = [
            (1, u(0)),
            (2, u(1)),
            (3, &u(2) + &u(0).pow(2)),
            (4, &u(3) + &(&u(0) * &u(1)).scale(&rat_i(3))),
        ];
        for (k, expect) in pairs {
            let h = spec.density(k).unwrap();
            assert!(
                LocalFunctional::new(h).equivalent(&LocalFunctional::new(expect.clone())),
                "k = {k}"
            );
        }
    }

    #[test]
    fn kp_flows() {
        let spec = kp();
        let f2 = spec.lax_flow(2).unwrap();
        assert_eq!(
            *f2.get(VarKey::u(0)).unwrap(),
            &u(0).nth_derivative(2) + &u(1).total_derivative().scale(&rat_i(2))
        );
        assert_eq!(
            *f2.get(VarKey::u(1)).unwrap(),
            &(&u(1).nth_derivative(2) + &u(2).total_derivative().scale(&rat_i(2)))
                + &(&u(0) * &u(0).total_derivative()).scale(&rat_i(2))
        );
        let f3 = spec.lax_flow(3).unwrap();
        let expect = &(&u(0).nth_derivative(3) + &u(1).nth_derivative(2).scale(&rat_i(3)))
            + &(&u(2).total_derivative().scale(&rat_i(3))
                + &(&u(0) * &u(0).total_derivative()).scale(&rat_i(6)));
        assert_eq!(*f3.get(VarKey::u(0)).unwrap(), expect);
    }

    #[test]
    fn lenard_recursion_holds_on_small_indices() {
        for spec in [kdv(), boussinesq()] {
            for k in 1..=2 {
                let res = spec.lenard_residual(k).unwrap();
                assert!(res.values().all(DiffPoly::is_zero), "k = {k}");
            }
        }
        let v2 = HierarchySpec::new(AdlerContext::new(2, 1, Flavor::Finite).unwrap(), false)
            .unwrap();
        let res = v2.lenard_residual(1).unwrap();
        assert!(res.values().all(DiffPoly::is_zero));
    }

    #[test]
    fn linear_table_kickoff_is_trivial() {
        for spec in [kdv(), boussinesq()] {
            for k in 1..=spec.ctx().order() {
                let f = spec.bracket_flow(StructureChoice::K, k).unwrap();
                assert!(f.is_zero(), "k = {k}");
            }
        }
    }

    #[test]
    fn kdv_integrals_in_involution() {
        let spec = kdv();
        for choice in [StructureChoice::HDirac, StructureChoice::K] {
            let res = spec.involution_check(choice, 1, 3).unwrap();
            assert!(res.is_zero(), "{choice:?}");
        }
    }

    #[test]
    fn gradient_evaluation_profile() {
        let v2 = HierarchySpec::new(AdlerContext::new(2, 1, Flavor::Finite).unwrap(), false)
            .unwrap();
        for k in [1u32, 3, 5] {
            let got = v2.leading_gradient_evaluation(k).unwrap();
            assert_eq!(got, v2.leading_gradient_expected(k), "k = {k}");
            assert!(!got.is_zero());
        }
        let v3 = HierarchySpec::new(AdlerContext::new(3, 1, Flavor::Finite).unwrap(), false)
            .unwrap();
        for k in [1u32, 2, 4] {
            assert_eq!(
                v3.leading_gradient_evaluation(k).unwrap(),
                v3.leading_gradient_expected(k),
                "k = {k}"
            );
        }
    }

    #[test]
    fn matrix_kdv_third_flow() {
        let spec =
            HierarchySpec::new(AdlerContext::new(2, 2, Flavor::Finite).unwrap(), true).unwrap();
        let f3 = spec.lax_flow(3).unwrap();
        let um = |r: u8, c: u8| DiffPoly::gen(VarKey::u_at(-1, r, c));
        for r in 0..2u8 {
            for c in 0..2u8 {
                let mut expect = um(r, c).nth_derivative(3).scale(&rat(1, 4));
                for k in 0..2u8 {
                    expect += &(&um(r, k) * &um(k, c).total_derivative()).scale(&rat(3, 4));
                    expect += &(&um(r, k).total_derivative() * &um(k, c)).scale(&rat(3, 4));
                }
                assert_eq!(*f3.get(VarKey::u_at(-1, r, c)).unwrap(), expect, "({r},{c})");
            }
        }
    }

    #[test]
    fn adjoint_annihilates_gradients() {
        let spec =
            HierarchySpec::new(AdlerContext::new(2, 2, Flavor::Finite).unwrap(), true).unwrap();
        let b1 = spec.b_star_annihilation(1).unwrap();
        assert!(b1.is_zero());
        // A direction that is not a gradient: nonzero image even on the
        // constraint surface.
        let mut fake = BTreeMap::new();
        fake.insert(
            -1,
            MatPoly::identity(2).scale_poly(&DiffPoly::gen(VarKey::u_at(-1, 0, 0)).pow(2)),
        );
        let img = spec.ctx().constraint_b_star(&fake).unwrap();
        let img = img.map(|p| p.zero_out(|v| v.fam == Family::U && v.idx == -2));
        assert!(!img.is_zero());
    }

    #[test]
    fn classical_equations_from_flows() {
        for r in kp().verify_reduced_pde(ReducedPde::Kp).unwrap() {
            assert!(r.is_zero());
        }
        for r in boussinesq().verify_reduced_pde(ReducedPde::Boussinesq).unwrap() {
            assert!(r.is_zero());
        }
    }

    #[test]
    fn flow_equation_serializes() {
        let spec = kdv();
        let f = spec.lax_flow(1).unwrap();
        let v = f.to_json();
        assert_eq!(v["k"], 1);
        assert!(v["flows"].get("u-1").is_some());
    }

    #[test]
    fn shallow_policy_is_rejected_not_wrong() {
        let spec = kp().with_policy(TruncationPolicy::with_floor(-3));
        assert!(spec.density(4).is_err());
    }

    #[test]
    fn registry_round_trip_behind_flows() {
        let set = by_name("kdv").unwrap();
        assert_eq!(set.name, "w2");
        let spec = kdv();
        let f = spec.bracket_flow(StructureChoice::HDirac, 1).unwrap();
        assert_eq!(*f.get(VarKey::u(-1)).unwrap(), u(-1).total_derivative());
    }
}
