//! Factorization maps between bracket structures.
//!
//! A map here sends each generator of a source structure to a differential
//! polynomial in the generators of a target structure, by reading off the
//! coefficients of a product of lower-order operators.  The map is a valid
//! change of variables when it intertwines the two lambda brackets: bracketing
//! the images in the target must reproduce the image of the source table
//! entry.  [`MiuraMap::verify`] machine-checks that condition pair by pair.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_traits::One;

use crate::agd::{dirac_reduce, AdlerContext, AgdTable, Flavor};
use crate::diffalg::{rat, DiffPoly, Family, Monomial, Rat, VarKey};
use crate::lambda::LambdaValue;
use crate::psido::{MatPoly, PsiDO, TruncationPolicy};
use crate::pva::{classics, EntryRule, PVAStructure, Universe};
use crate::{Error, Result};

/// A generator-wise substitution from a source structure into a target one.
#[derive(Clone)]
pub struct MiuraMap {
    name: String,
    source: PVAStructure,
    target: PVAStructure,
    images: BTreeMap<VarKey, DiffPoly>,
}

impl MiuraMap {
    /// Assembles a map from explicit images.  Every source generator must be
    /// covered and every image must live inside the target universe.
    pub fn new(
        name: &str,
        source: PVAStructure,
        target: PVAStructure,
        images: BTreeMap<VarKey, DiffPoly>,
    ) -> Result<MiuraMap> {
        for gen in source.universe.gens()? {
            let img = images.get(&gen).ok_or_else(|| {
                Error::Dimension(format!("no image for source generator {}", DiffPoly::gen(gen)))
            })?;
            for key in img.vars_used() {
                if !target.universe.contains(key.base()) {
                    return Err(Error::Dimension(format!(
                        "image of {} uses {} outside the target universe",
                        DiffPoly::gen(gen),
                        DiffPoly::gen(key.base()),
                    )));
                }
            }
        }
        Ok(MiuraMap { name: name.to_string(), source, target, images })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn source(&self) -> &PVAStructure {
        &self.source
    }

    pub fn target(&self) -> &PVAStructure {
        &self.target
    }

    pub fn image(&self, key: VarKey) -> Result<&DiffPoly> {
        self.images.get(&key.base()).ok_or_else(|| {
            Error::Dimension(format!("{} is not a source generator", DiffPoly::gen(key.base())))
        })
    }

    pub fn images(&self) -> &BTreeMap<VarKey, DiffPoly> {
        &self.images
    }

    /// Same images and source, different target bracket.
    pub fn with_target(mut self, target: PVAStructure) -> MiuraMap {
        self.target = target;
        self
    }

    /// `{image(i) lambda image(j)}` in the target, minus the push-forward of
    /// the source entry `{u_i lambda u_j}`.  Zero iff the map respects the
    /// bracket on this pair.
    pub fn hom_residual(&self, i: VarKey, j: VarKey) -> Result<LambdaValue> {
        let lhs = self.target.master_bracket(self.image(i)?, self.image(j)?)?;
        let rhs = self.source.entry(i, j)?.substitute(&self.images);
        Ok(&lhs - &rhs)
    }

    /// Sweeps every pair of source generators and returns the pairs whose
    /// residual does not vanish.  An empty list certifies the map.
    pub fn verify(&self) -> Result<Vec<(VarKey, VarKey)>> {
        let gens = self.source.universe.gens()?;
        let mut bad = Vec::new();
        for &i in &gens {
            for &j in &gens {
                if !self.hom_residual(i, j)?.is_zero() {
                    bad.push((i, j));
                }
            }
        }
        Ok(bad)
    }

    /// Interchange form: `{"<source generator>": <image polynomial>}`.
    pub fn to_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for (key, img) in &self.images {
            map.insert(Monomial::var(*key).to_string(), img.to_json());
        }
        serde_json::Value::Object(map)
    }
}

/// The operator `(d + V_n)(d + V_{n-1})...(d + V_1)` in fresh first-order
/// factor variables, entry size `m`.
fn first_order_product(n: u32, m: usize) -> PsiDO {
    let policy = TruncationPolicy::default();
    let mut acc = PsiDO::identity(m);
    for k in 1..=n as i32 {
        let mut factor = PsiDO::single(1, MatPoly::identity(m));
        factor.add_term(
            0,
            MatPoly::from_fn(m, |a, b| {
                DiffPoly::gen(VarKey::gen(Family::V, k, a as u8, b as u8))
            }),
        );
        acc = factor.compose(&acc, &policy);
    }
    acc
}

/// Reads the generator images off an order-`n` monic operator: the
/// coefficient of `d^{-i-1}` is the image of `u_i`, entry by entry.
fn images_from_operator(op: &PsiDO, n: u32, m: usize) -> Result<BTreeMap<VarKey, DiffPoly>> {
    let mut images = BTreeMap::new();
    for i in -(n as i32)..=-1 {
        let mat = op.coeff(-(i as i64) - 1)?;
        for a in 0..m {
            for b in 0..m {
                images.insert(
                    VarKey::gen(Family::U, i, a as u8, b as u8),
                    mat.entry(a, b).clone(),
                );
            }
        }
    }
    Ok(images)
}

/// The order-`n` scalar factorization map: images read off
/// `(d + v_n)...(d + v_1)`, target the free field with Gram matrix minus the
/// identity.  For `n = 2` this is `u_{-2} = v_1 + v_2`,
/// `u_{-1} = v_1' + v_2 v_1`.
pub fn miura_image(n: u32) -> Result<MiuraMap> {
    let ctx = AdlerContext::new(n, 1, Flavor::Finite)?;
    let images = images_from_operator(&first_order_product(n, 1), n, 1)?;
    MiuraMap::new(
        &format!("miura({n})"),
        ctx.build_h(),
        classics::free_field_neg_identity(n as usize),
        images,
    )
}

/// The free-field bracket that survives constraining the sum of the fields
/// to zero: `{v_i lambda v_j} = (1/n - delta_ij) lambda` on `v_1..v_{n-1}`.
pub fn reduced_free_field(n: u32) -> Result<PVAStructure> {
    if n < 2 {
        return Err(Error::Dimension("a reduced free field needs order at least two".into()));
    }
    let mut entries = BTreeMap::new();
    for i in 1..n as i32 {
        for j in 1..n as i32 {
            let c = if i == j { rat(1, n as i64) - Rat::one() } else { rat(1, n as i64) };
            let vi = VarKey::gen(Family::V, i, 0, 0);
            let vj = VarKey::gen(Family::V, j, 0, 0);
            entries.insert((vi, vj), LambdaValue::mono(1, DiffPoly::one().scale(&c)));
        }
    }
    Ok(PVAStructure::new(
        &format!("gfz-reduced({n})"),
        Universe::scalar(Family::V, 1, n as i32 - 1),
        Arc::new(crate::pva::ExplicitRule::new(entries)),
    ))
}

/// The factorization map for the constrained order-`n` structure: the last
/// field is eliminated by `v_n = -(v_1 + ... + v_{n-1})`, the source is the
/// reduced table and the target is [`reduced_free_field`].  For `n = 2` this
/// is the classical substitution `u = v' - v^2`.
pub fn dirac_miura(n: u32) -> Result<MiuraMap> {
    if n < 2 {
        return Err(Error::Dimension("constrained factorization needs order at least two".into()));
    }
    let ctx = AdlerContext::new(n, 1, Flavor::Finite)?;
    let base = images_from_operator(&first_order_product(n, 1), n, 1)?;
    let mut minus_sum = DiffPoly::zero();
    for k in 1..n as i32 {
        minus_sum -= &DiffPoly::gen(VarKey::gen(Family::V, k, 0, 0));
    }
    let subst: BTreeMap<VarKey, DiffPoly> =
        BTreeMap::from([(VarKey::gen(Family::V, n as i32, 0, 0), minus_sum)]);

    let top = VarKey::u(-(n as i32));
    let eliminated = base[&top].substitute(&subst);
    if !eliminated.is_zero() {
        return Err(Error::CrossCheck(format!(
            "eliminating the last field should kill the image of {}, got {eliminated}",
            DiffPoly::gen(top),
        )));
    }
    let mut images = BTreeMap::new();
    for (key, img) in &base {
        if *key != top {
            images.insert(*key, img.substitute(&subst));
        }
    }
    MiuraMap::new(
        &format!("miura-reduced({n})"),
        dirac_reduce(&ctx, AgdTable::H)?,
        reduced_free_field(n)?,
        images,
    )
}

/// One factor block inside a two-factor target: indices `lo..=hi` of the
/// `v` family carry the order-`(hi-lo+1)` Adler bracket, translated so that
/// `v_hi` sits at index `-1`.
struct FactorBlock {
    ctx: AdlerContext,
    lo: i32,
    hi: i32,
}

impl FactorBlock {
    fn contains(&self, idx: i32) -> bool {
        (self.lo..=self.hi).contains(&idx)
    }

    fn entry(&self, i: VarKey, j: VarKey) -> Result<LambdaValue> {
        let to_u = |k: VarKey| VarKey::u(k.idx - self.hi - 1);
        let raw = self.ctx.h_entry(to_u(i), to_u(j))?;
        let mut back = BTreeMap::new();
        for q in -(self.ctx.order() as i32)..=-1 {
            back.insert(VarKey::u(q), DiffPoly::gen(VarKey::gen(Family::V, q + self.hi + 1, 0, 0)));
        }
        Ok(raw.substitute(&back))
    }
}

/// Independent factor brackets: entries inside one block come from that
/// block's Adler table, entries across blocks vanish.
struct BlockRule {
    blocks: Vec<FactorBlock>,
}

impl EntryRule for BlockRule {
    fn entry(&self, i: VarKey, j: VarKey) -> Result<LambdaValue> {
        for block in &self.blocks {
            if block.contains(i.idx) {
                return if block.contains(j.idx) {
                    block.entry(i, j)
                } else {
                    Ok(LambdaValue::zero())
                };
            }
        }
        Ok(LambdaValue::zero())
    }
}

/// The two-factor map of type `(p, q)`: images read off `A B` where
/// `A = d^p + v_1 d^{p-1} + ... + v_p` and
/// `B = d^q + v_{p+1} d^{q-1} + ... + v_{p+q}`, with the target carrying the
/// order-`p` and order-`q` Adler brackets on the two blocks independently.
pub fn general_miura(p: u32, q: u32) -> Result<MiuraMap> {
    if p == 0 || q == 0 {
        return Err(Error::Dimension("factor orders must be positive".into()));
    }
    let total = p + q;
    let ctx = AdlerContext::new(total, 1, Flavor::Finite)?;
    let policy = TruncationPolicy::default();

    let build_factor = |ord: u32, offset: i32| {
        let mut op = PsiDO::single(ord as i64, MatPoly::identity(1));
        for s in 1..=ord as i32 {
            op.add_term(
                ord as i64 - s as i64,
                MatPoly::from_fn(1, |_, _| DiffPoly::gen(VarKey::gen(Family::V, offset + s, 0, 0))),
            );
        }
        op
    };
    let a = build_factor(p, 0);
    let b = build_factor(q, p as i32);
    let images = images_from_operator(&a.compose(&b, &policy), total, 1)?;

    let blocks = vec![
        FactorBlock { ctx: AdlerContext::new(p, 1, Flavor::Finite)?, lo: 1, hi: p as i32 },
        FactorBlock {
            ctx: AdlerContext::new(q, 1, Flavor::Finite)?,
            lo: p as i32 + 1,
            hi: total as i32,
        },
    ];
    let target = PVAStructure::new(
        &format!("factors({p},{q})"),
        Universe::scalar(Family::V, 1, total as i32),
        Arc::new(BlockRule { blocks }),
    );
    MiuraMap::new(&format!("miura({p},{q})"), ctx.build_h(), target, images)
}

/// First-order matrix factors: each block of entry variables carries the
/// affine bracket
/// `{v_{k,ab} lambda v_{k,cd}} = delta_cb v_{k,ad} - delta_ad v_{k,cb}
///  - delta_ad delta_cb lambda`, different blocks commute.
struct AffineFactorsRule;

impl EntryRule for AffineFactorsRule {
    fn entry(&self, i: VarKey, j: VarKey) -> Result<LambdaValue> {
        let mut out = LambdaValue::zero();
        if i.idx != j.idx {
            return Ok(out);
        }
        let (a, b, c, d) = (i.row, i.col, j.row, j.col);
        if c == b {
            out.add_local(0, DiffPoly::gen(VarKey::gen(Family::V, i.idx, a, d)));
        }
        if a == d {
            out.add_local(0, -&DiffPoly::gen(VarKey::gen(Family::V, i.idx, c, b)));
            if c == b {
                out.add_local(1, -&DiffPoly::one());
            }
        }
        Ok(out)
    }
}

/// The matrix factorization map: images read off `(d + V_n)...(d + V_1)`
/// with `m x m` matrix factors, target the affine bracket on each factor.
pub fn matrix_miura(n: u32, m: usize) -> Result<MiuraMap> {
    let ctx = AdlerContext::new(n, m, Flavor::Finite)?;
    let images = images_from_operator(&first_order_product(n, m), n, m)?;
    let target = PVAStructure::new(
        &format!("affine-factors({n},{m})"),
        Universe::matrix(Family::V, m, 1, n as i32),
        Arc::new(AffineFactorsRule),
    );
    MiuraMap::new(&format!("miura-mat({n},{m})"), ctx.build_h(), target, images)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agd::generic_dirac;

    fn v(k: i32) -> DiffPoly {
        DiffPoly::gen(VarKey::gen(Family::V, k, 0, 0))
    }

    fn vd(k: i32, d: u32) -> DiffPoly {
        DiffPoly::gen(VarKey::gen(Family::V, k, 0, 0).with_der(d))
    }

    #[test]
    fn second_order_images_match_hand_expansion() {
        let map = miura_image(2).unwrap();
        assert_eq!(*map.image(VarKey::u(-2)).unwrap(), &v(1) + &v(2));
        assert_eq!(*map.image(VarKey::u(-1)).unwrap(), &vd(1, 1) + &(&v(2) * &v(1)));
    }

    #[test]
    fn third_order_top_image_is_the_field_sum() {
        let map = miura_image(3).unwrap();
        assert_eq!(*map.image(VarKey::u(-3)).unwrap(), &(&v(1) + &v(2)) + &v(3));
    }

    #[test]
    fn homomorphism_residuals_vanish() {
        for n in [2, 3] {
            let map = miura_image(n).unwrap();
            assert_eq!(map.verify().unwrap(), vec![], "order {n}");
        }
    }

    #[test]
    fn flipped_gram_matrix_breaks_the_map() {
        let map = miura_image(2).unwrap().with_target(classics::free_field_identity(2));
        let res = map.hom_residual(VarKey::u(-1), VarKey::u(-1)).unwrap();
        assert!(!res.is_zero());
    }

    #[test]
    fn reduced_map_is_the_classical_substitution() {
        let map = dirac_miura(2).unwrap();
        let expect = &vd(1, 1) - &(&v(1) * &v(1));
        assert_eq!(*map.image(VarKey::u(-1)).unwrap(), expect);

        let vk = VarKey::gen(Family::V, 1, 0, 0);
        let entry = map.target().entry(vk, vk).unwrap();
        assert_eq!(*entry, LambdaValue::mono(1, DiffPoly::one().scale(&rat(-1, 2))));
        assert_eq!(map.verify().unwrap(), vec![]);
    }

    #[test]
    fn reduced_third_order_residuals_vanish() {
        let map = dirac_miura(3).unwrap();
        assert_eq!(map.verify().unwrap(), vec![]);
    }

    #[test]
    fn reduced_target_matches_the_constrained_free_field() {
        for n in [2u32, 3] {
            let free = classics::free_field_neg_identity(n as usize);
            let mut theta = DiffPoly::zero();
            for k in 1..=n as i32 {
                theta += &DiffPoly::gen(VarKey::gen(Family::V, k, 0, 0));
            }
            let constrained =
                generic_dirac(&free, &[theta], &TruncationPolicy::default()).unwrap();
            let explicit = reduced_free_field(n).unwrap();
            for i in 1..n as i32 {
                for j in 1..n as i32 {
                    let vi = VarKey::gen(Family::V, i, 0, 0);
                    let vj = VarKey::gen(Family::V, j, 0, 0);
                    assert_eq!(
                        *constrained.entry(vi, vj).unwrap(),
                        *explicit.entry(vi, vj).unwrap(),
                        "entry ({i},{j}) at order {n}"
                    );
                }
            }
        }
    }

    #[test]
    fn two_factor_images_and_residuals() {
        let map = general_miura(1, 2).unwrap();
        assert_eq!(*map.image(VarKey::u(-3)).unwrap(), &v(1) + &v(2));
        assert_eq!(
            *map.image(VarKey::u(-2)).unwrap(),
            &(&vd(2, 1) + &v(3)) + &(&v(1) * &v(2))
        );
        assert_eq!(map.verify().unwrap(), vec![]);
        assert_eq!(general_miura(2, 1).unwrap().verify().unwrap(), vec![]);
    }

    #[test]
    fn two_first_order_factors_recover_the_order_two_map() {
        let pair = general_miura(1, 1).unwrap();
        let swap = BTreeMap::from([
            (VarKey::gen(Family::V, 1, 0, 0), v(2)),
            (VarKey::gen(Family::V, 2, 0, 0), v(1)),
        ]);
        let full = miura_image(2).unwrap();
        for i in [-2, -1] {
            assert_eq!(
                pair.image(VarKey::u(i)).unwrap().substitute(&swap),
                *full.image(VarKey::u(i)).unwrap(),
                "generator index {i}"
            );
        }
    }

    #[test]
    fn factor_composition_matches_the_full_chain() {
        let split = general_miura(1, 2).unwrap();
        let inner = miura_image(2).unwrap();
        let full = miura_image(3).unwrap();
        let sub = BTreeMap::from([
            (VarKey::gen(Family::V, 1, 0, 0), v(3)),
            (VarKey::gen(Family::V, 2, 0, 0), inner.image(VarKey::u(-2)).unwrap().clone()),
            (VarKey::gen(Family::V, 3, 0, 0), inner.image(VarKey::u(-1)).unwrap().clone()),
        ]);
        for i in [-3, -2, -1] {
            assert_eq!(
                split.image(VarKey::u(i)).unwrap().substitute(&sub),
                *full.image(VarKey::u(i)).unwrap(),
                "generator index {i}"
            );
        }
    }

    #[test]
    fn matrix_map_respects_affine_factors() {
        let map = matrix_miura(2, 2).unwrap();
        for a in 0..2u8 {
            for b in 0..2u8 {
                let expect = &DiffPoly::gen(VarKey::gen(Family::V, 1, a, b))
                    + &DiffPoly::gen(VarKey::gen(Family::V, 2, a, b));
                assert_eq!(*map.image(VarKey::u_at(-2, a, b)).unwrap(), expect);
            }
        }
        assert_eq!(map.verify().unwrap(), vec![]);
    }

    #[test]
    fn top_coefficient_is_additive_in_the_factors() {
        for (p, q) in [(1u32, 1u32), (1, 2), (2, 1), (2, 2)] {
            let map = general_miura(p, q).unwrap();
            let expect = &v(1) + &v(p as i32 + 1);
            assert_eq!(
                *map.image(VarKey::u(-((p + q) as i32))).unwrap(),
                expect,
                "type ({p},{q})"
            );
        }
    }

    #[test]
    fn image_dump_round_trips_through_json() {
        let map = miura_image(2).unwrap();
        let json = map.to_json();
        let obj = json.as_object().unwrap();
        assert_eq!(obj.len(), 2);
        let back = DiffPoly::from_json(&obj["u-1"]).unwrap();
        assert_eq!(back, *map.image(VarKey::u(-1)).unwrap());
    }
}
