//! Poisson vertex algebra structures and their axiom verifiers.
//!
//! A structure is a generator universe plus a rule producing the bracket
//! table `{u_i lambda u_j}` on demand.  Everything else is derived from the
//! table through the master formula: brackets of arbitrary differential
//! polynomials, skew-symmetry and Jacobi residuals, pencil compatibility,
//! functional brackets and Hamiltonian flows.

use rayon::prelude::*;
use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use crate::diffalg::{ConstKey, DiffPoly, Family, Rat, TotalDerivative, VarKey};
use crate::lambda::{LambdaMuValue, LambdaValue};
use crate::{Error, Result};

/// Inclusive index range or a half line, for one family of generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexSet {
    /// Indices `lo..=hi`.
    Range(i32, i32),
    /// All indices `>= lo` (infinitely many generators).
    From(i32),
}

impl IndexSet {
    pub fn contains(&self, idx: i32) -> bool {
        match *self {
            IndexSet::Range(lo, hi) => lo <= idx && idx <= hi,
            IndexSet::From(lo) => lo <= idx,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, IndexSet::Range(..))
    }

    pub fn lo(&self) -> i32 {
        match *self {
            IndexSet::Range(lo, _) | IndexSet::From(lo) => lo,
        }
    }
}

/// The generators a structure acts on: one family, one matrix size, one
/// index set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Universe {
    pub fam: Family,
    pub m: usize,
    pub set: IndexSet,
}

impl Universe {
    pub fn scalar(fam: Family, lo: i32, hi: i32) -> Universe {
        Universe { fam, m: 1, set: IndexSet::Range(lo, hi) }
    }

    pub fn matrix(fam: Family, m: usize, lo: i32, hi: i32) -> Universe {
        Universe { fam, m, set: IndexSet::Range(lo, hi) }
    }

    pub fn contains(&self, key: VarKey) -> bool {
        key.fam == self.fam
            && self.set.contains(key.idx)
            && (key.row as usize) < self.m
            && (key.col as usize) < self.m
    }

    pub fn is_finite(&self) -> bool {
        self.set.is_finite()
    }

    /// All generators, for finite universes.
    pub fn gens(&self) -> Result<Vec<VarKey>> {
        match self.set {
            IndexSet::Range(lo, hi) => Ok(self.gens_in(lo, hi)),
            IndexSet::From(_) => Err(Error::Unsupported(
                "generator sweep over an infinite universe needs an index bound".into(),
            )),
        }
    }

    /// Generators with index at most `hi` (works for both flavors).
    pub fn gens_bounded(&self, hi: i32) -> Vec<VarKey> {
        match self.set {
            IndexSet::Range(lo, top) => self.gens_in(lo, top.min(hi)),
            IndexSet::From(lo) => self.gens_in(lo, hi),
        }
    }

    fn gens_in(&self, lo: i32, hi: i32) -> Vec<VarKey> {
        let mut out = Vec::new();
        for idx in lo..=hi {
            for row in 0..self.m {
                for col in 0..self.m {
                    out.push(VarKey::gen(self.fam, idx, row as u8, col as u8));
                }
            }
        }
        out
    }
}

/// A rule producing bracket-table entries `{u_i lambda u_j}` on demand.
pub trait EntryRule: Send + Sync {
    fn entry(&self, i: VarKey, j: VarKey) -> Result<LambdaValue>;
}

/// Explicit finite table; missing pairs are zero.
pub struct ExplicitRule {
    entries: BTreeMap<(VarKey, VarKey), LambdaValue>,
}

impl ExplicitRule {
    pub fn new(entries: BTreeMap<(VarKey, VarKey), LambdaValue>) -> ExplicitRule {
        ExplicitRule { entries }
    }

    /// Build from a set of entries, deriving each missing transposed pair
    /// from skew-symmetry.
    pub fn with_skew_completion(
        mut entries: BTreeMap<(VarKey, VarKey), LambdaValue>,
    ) -> ExplicitRule {
        let keys: Vec<(VarKey, VarKey)> = entries.keys().copied().collect();
        for (i, j) in keys {
            let flipped = (j, i);
            if !entries.contains_key(&flipped) {
                let v = -&entries[&(i, j)].skew_star();
                entries.insert(flipped, v);
            }
        }
        ExplicitRule { entries }
    }
}

impl EntryRule for ExplicitRule {
    fn entry(&self, i: VarKey, j: VarKey) -> Result<LambdaValue> {
        Ok(self
            .entries
            .get(&(i, j))
            .cloned()
            .unwrap_or_else(LambdaValue::zero))
    }
}

/// Free-field rule `{v_i lambda v_j} = s_ij lambda` with a symmetric Gram
/// matrix, either numeric or fully symbolic.
pub enum GramMatrix {
    Numeric(Vec<Vec<Rat>>),
    Symbolic,
}

pub struct FreeFieldRule {
    pub gram: GramMatrix,
}

impl EntryRule for FreeFieldRule {
    fn entry(&self, i: VarKey, j: VarKey) -> Result<LambdaValue> {
        let coeff = match &self.gram {
            GramMatrix::Numeric(s) => {
                let a = (i.idx - 1) as usize;
                let b = (j.idx - 1) as usize;
                DiffPoly::constant(s[a][b].clone())
            }
            GramMatrix::Symbolic => DiffPoly::formal_const(ConstKey::s(
                (i.idx - 1) as u8,
                (j.idx - 1) as u8,
            )),
        };
        Ok(LambdaValue::mono(1, coeff))
    }
}

/// The rule `{u lambda u} = (d + 2 lambda) u + c lambda^3` on a single
/// generator.
pub struct VirasoroRule {
    pub gen: VarKey,
    pub central: DiffPoly,
}

impl EntryRule for VirasoroRule {
    fn entry(&self, i: VarKey, j: VarKey) -> Result<LambdaValue> {
        if i != self.gen || j != self.gen {
            return Ok(LambdaValue::zero());
        }
        let u = DiffPoly::gen(self.gen);
        let mut v = LambdaValue::mono(1, u.scale(&crate::diffalg::rat_i(2)));
        v.add_local(0, u.total_derivative());
        v.add_local(3, self.central.clone());
        Ok(v)
    }
}

/// Pencil `S0 + c S1` with the formal constant `c`.
struct PencilRule {
    s0: PVAStructure,
    s1: PVAStructure,
}

impl EntryRule for PencilRule {
    fn entry(&self, i: VarKey, j: VarKey) -> Result<LambdaValue> {
        let a = self.s0.entry(i, j)?;
        let b = self.s1.entry(i, j)?;
        let c = DiffPoly::formal_const(ConstKey::C);
        Ok(&*a + &b.mul_poly(&c))
    }
}

/// A lambda-bracket structure: universe plus entry rule plus cache.
#[derive(Clone)]
pub struct PVAStructure {
    pub name: String,
    pub universe: Universe,
    rule: Arc<dyn EntryRule>,
    cache: Arc<RwLock<BTreeMap<(VarKey, VarKey), Arc<LambdaValue>>>>,
}

impl std::fmt::Debug for PVAStructure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PVAStructure")
            .field("name", &self.name)
            .field("universe", &self.universe)
            .finish()
    }
}

impl PVAStructure {
    pub fn new(name: &str, universe: Universe, rule: Arc<dyn EntryRule>) -> PVAStructure {
        PVAStructure {
            name: name.to_string(),
            universe,
            rule,
            cache: Arc::new(RwLock::new(BTreeMap::new())),
        }
    }

    /// Table entry `{u_i lambda u_j}`, cached.
    pub fn entry(&self, i: VarKey, j: VarKey) -> Result<Arc<LambdaValue>> {
        let key = (i.base(), j.base());
        if let Some(hit) = self.cache.read().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let value = Arc::new(self.rule.entry(key.0, key.1)?);
        let mut cache = self.cache.write().unwrap();
        Ok(cache.entry(key).or_insert(value).clone())
    }

    /// True when every cached or swept entry is free of nonlocal tails.
    /// Materializes all entries of a finite universe.
    pub fn is_local(&self) -> Result<bool> {
        let gens = self.universe.gens()?;
        for &i in &gens {
            for &j in &gens {
                if !self.entry(i, j)?.is_local() {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    /// The pencil `self + c other` with a formal constant `c`.
    pub fn pencil(&self, other: &PVAStructure) -> PVAStructure {
        PVAStructure::new(
            &format!("{}+c*{}", self.name, other.name),
            self.universe,
            Arc::new(PencilRule { s0: self.clone(), s1: other.clone() }),
        )
    }

    fn check_in_universe(&self, p: &DiffPoly, role: &str) -> Result<()> {
        for key in p.vars_used() {
            if !self.universe.contains(key) {
                return Err(Error::Dimension(format!(
                    "{role} uses generator {} outside the universe of {}",
                    DiffPoly::gen(key),
                    self.name
                )));
            }
        }
        Ok(())
    }

    /// The master formula: `{f lambda g}` as a sum over generator pairs of
    /// `(dg/du_j^{(n)}) (lambda+d)^n H_{ji}(lambda+d) (-lambda-d)^m (df/du_i^{(m)})`,
    /// composed right to left, with `H_{ji}(lambda) = {u_i lambda u_j}`.
    pub fn master_bracket(&self, f: &DiffPoly, g: &DiffPoly) -> Result<LambdaValue> {
        self.check_in_universe(f, "left argument")?;
        self.check_in_universe(g, "right argument")?;
        let mut out = LambdaValue::zero();
        for i in f.vars_used() {
            // Right factor: sum over m of (-lambda-d)^m df/du_i^{(m)}.
            let mut right = LambdaValue::zero();
            let top_m = f.max_der(i).unwrap_or(0);
            for m in 0..=top_m {
                let df = f.partial(i.with_der(m));
                if df.is_zero() {
                    continue;
                }
                right += &LambdaValue::neg_shift_pow(m, &df);
            }
            if right.is_zero() {
                continue;
            }
            for j in g.vars_used() {
                let table = self.entry(i, j)?;
                if table.is_zero() {
                    continue;
                }
                let applied = table.apply_as_operator(&right)?;
                let top_n = g.max_der(j).unwrap_or(0);
                let mut shifted = applied;
                for n in 0..=top_n {
                    if n > 0 {
                        shifted = shifted.apply_shift();
                    }
                    let dg = g.partial(j.with_der(n));
                    if dg.is_zero() {
                        continue;
                    }
                    out += &shifted.mul_poly(&dg);
                }
            }
        }
        Ok(out)
    }

    /// Skew-symmetry residual on a generator pair:
    /// `{u_i lambda u_j} + {u_j lambda u_i}|_{lambda -> -lambda-d}`.
    pub fn skew_residual(&self, i: VarKey, j: VarKey) -> Result<LambdaValue> {
        let forward = self.entry(i, j)?;
        let backward = self.entry(j, i)?;
        Ok(&*forward + &backward.skew_star())
    }

    /// Jacobi residual on a generator triple:
    /// `{u_i lambda {u_j mu u_k}} - {u_j mu {u_i lambda u_k}}
    ///  - {{u_i lambda u_j} lambda+mu u_k}`.
    pub fn jacobi_residual(&self, i: VarKey, j: VarKey, k: VarKey) -> Result<LambdaMuValue> {
        let ui = DiffPoly::gen(i.base());
        let uj = DiffPoly::gen(j.base());
        let uk = DiffPoly::gen(k.base());
        let mut out = LambdaMuValue::zero();

        // {u_i lambda {u_j mu u_k}}: the inner value is a polynomial in mu;
        // mu is a constant for the outer bracket.
        let inner_jk = self.entry(j, k)?;
        Self::require_local(&inner_jk, "Jacobi")?;
        for (mu_pow, coeff) in inner_jk.local_terms() {
            let outer = self.master_bracket(&ui, coeff)?;
            Self::require_local(&outer, "Jacobi")?;
            for (lam_pow, c) in outer.local_terms() {
                out.add(*lam_pow, *mu_pow, c.clone());
            }
        }

        // {u_j mu {u_i lambda u_k}}.
        let inner_ik = self.entry(i, k)?;
        Self::require_local(&inner_ik, "Jacobi")?;
        for (lam_pow, coeff) in inner_ik.local_terms() {
            let outer = self.master_bracket(&uj, coeff)?;
            Self::require_local(&outer, "Jacobi")?;
            for (mu_pow, c) in outer.local_terms() {
                out.add(*lam_pow, *mu_pow, -c);
            }
        }

        // {{u_i lambda u_j} lambda+mu u_k}: for each lambda^p coefficient
        // c_p of the inner bracket, evaluate {c_p nu u_k} and expand
        // nu^q = (lambda+mu)^q binomially; the explicit lambda^p stays.
        let inner_ij = self.entry(i, j)?;
        Self::require_local(&inner_ij, "Jacobi")?;
        for (p, coeff) in inner_ij.local_terms() {
            let outer = self.master_bracket(coeff, &uk)?;
            Self::require_local(&outer, "Jacobi")?;
            for (q, c) in outer.local_terms() {
                for s in 0..=*q {
                    let b = crate::diffalg::binom(*q as i64, s);
                    out.add(p + s, q - s, c.scale(&(-b)));
                }
            }
        }
        Ok(out)
    }

    fn require_local(v: &LambdaValue, what: &str) -> Result<()> {
        if v.is_local() {
            Ok(())
        } else {
            Err(Error::Unsupported(format!(
                "{what} verification needs local bracket values"
            )))
        }
    }

    /// Bracket of local functionals: `master_bracket` at `lambda = 0`,
    /// as a functional.
    pub fn functional_bracket(
        &self,
        f: &LocalFunctional,
        g: &LocalFunctional,
    ) -> Result<LocalFunctional> {
        let v = self.master_bracket(&f.density, &g.density)?;
        Ok(LocalFunctional::new(v.at_zero()?))
    }

    /// Hamiltonian flow of a density applied to an arbitrary target:
    /// `{h lambda target}` at `lambda = 0`.
    pub fn flow_bracket(&self, h: &DiffPoly, target: &DiffPoly) -> Result<DiffPoly> {
        let v = self.master_bracket(h, target)?;
        v.at_zero()
    }

    /// Hamiltonian flow on a generator through the operator route:
    /// `du_j/dt = sum_i H_{ji}(d) (dh/delta u_i)`.
    ///
    /// Nonlocal tails must cancel in the sum over `i`; if they do not, the
    /// flow is genuinely nonlocal and an error is returned.
    pub fn flow_operator(&self, h: &DiffPoly, target: VarKey) -> Result<DiffPoly> {
        self.check_in_universe(h, "density")?;
        let mut acc = LambdaValue::zero();
        for i in h.vars_used() {
            let vd = h.varder(i);
            if vd.is_zero() {
                continue;
            }
            let table = self.entry(i, target)?;
            if table.is_zero() {
                continue;
            }
            acc += &table.apply_as_operator(&LambdaValue::mono(0, vd))?;
        }
        acc.at_zero()
    }
}

/// An element of the quotient by total derivatives, stored by
/// representative.
#[derive(Debug, Clone)]
pub struct LocalFunctional {
    pub density: DiffPoly,
}

impl LocalFunctional {
    pub fn new(density: DiffPoly) -> LocalFunctional {
        LocalFunctional { density }
    }

    /// Zero as a functional: the representative is a total derivative.
    pub fn is_zero(&self) -> bool {
        matches!(self.density.is_total_derivative(), TotalDerivative::Yes)
    }

    /// Equality in the quotient.
    pub fn equivalent(&self, other: &LocalFunctional) -> bool {
        matches!(
            (&self.density - &other.density).is_total_derivative(),
            TotalDerivative::Yes
        )
    }
}

/// Compatibility residual of a pair of structures on one triple: the
/// Jacobi residual of the formal pencil `S0 + c S1`; coefficients of
/// `c^0, c^1, c^2` are the two Jacobi identities and the mixed identity.
pub fn compat_residual(
    s0: &PVAStructure,
    s1: &PVAStructure,
    i: VarKey,
    j: VarKey,
    k: VarKey,
) -> Result<LambdaMuValue> {
    s0.pencil(s1).jacobi_residual(i, j, k)
}

/// One verification outcome.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub check: String,
    pub indices: String,
    pub residual: Option<String>,
}

impl CheckResult {
    pub fn ok(&self) -> bool {
        self.residual.is_none()
    }
}

/// Outcome of a structure sweep.
#[derive(Debug, Clone, Default)]
pub struct VerifyReport {
    pub results: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn all_ok(&self) -> bool {
        self.results.iter().all(CheckResult::ok)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.results.iter().filter(|r| !r.ok())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::Value::Array(
            self.results
                .iter()
                .map(|r| {
                    serde_json::json!({
                        "check": r.check,
                        "indices": r.indices,
                        "residual": r.residual.clone().unwrap_or_default(),
                    })
                })
                .collect(),
        )
    }

    pub fn push(&mut self, check: &str, indices: String, residual: Option<String>) {
        self.results.push(CheckResult {
            check: check.to_string(),
            indices,
            residual,
        });
    }
}

fn gen_label(k: VarKey) -> String {
    DiffPoly::gen(k).to_string()
}

/// Options for [`verify_structure`].
#[derive(Debug, Clone, Copy, Default)]
pub struct VerifyOptions {
    /// Index bound for infinite universes (required there, ignored for
    /// finite ones).
    pub index_bound: Option<i32>,
    /// Skip the Jacobi sweep (used for nonlocal tables, where only
    /// skew-symmetry is defined in this artifact).
    pub skew_only: bool,
}

/// Sweep skew-symmetry over all generator pairs and (for local tables) the
/// Jacobi identity over all triples, in parallel.
pub fn verify_structure(s: &PVAStructure, opts: VerifyOptions) -> Result<VerifyReport> {
    let gens = match opts.index_bound {
        Some(hi) if !s.universe.is_finite() => s.universe.gens_bounded(hi),
        _ => s.universe.gens()?,
    };
    let mut report = VerifyReport::default();

    let mut pairs: Vec<(VarKey, VarKey)> = Vec::new();
    for &i in &gens {
        for &j in &gens {
            pairs.push((i, j));
        }
    }
    let skew: Result<Vec<CheckResult>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let r = s.skew_residual(i, j)?;
            Ok(CheckResult {
                check: "skew".into(),
                indices: format!("({}, {})", gen_label(i), gen_label(j)),
                residual: if r.is_zero() { None } else { Some(r.to_string()) },
            })
        })
        .collect();
    report.results.extend(skew?);

    if !opts.skew_only {
        let mut triples: Vec<(VarKey, VarKey, VarKey)> = Vec::new();
        for &i in &gens {
            for &j in &gens {
                for &k in &gens {
                    triples.push((i, j, k));
                }
            }
        }
        let jac: Result<Vec<CheckResult>> = triples
            .par_iter()
            .map(|&(i, j, k)| {
                let r = s.jacobi_residual(i, j, k)?;
                Ok(CheckResult {
                    check: "jacobi".into(),
                    indices: format!(
                        "({}, {}, {})",
                        gen_label(i),
                        gen_label(j),
                        gen_label(k)
                    ),
                    residual: if r.is_zero() { None } else { Some(r.to_string()) },
                })
            })
            .collect();
        report.results.extend(jac?);
    }
    Ok(report)
}

/// Sweep the compatibility (pencil Jacobi) residual over all triples.
pub fn verify_compat(
    s0: &PVAStructure,
    s1: &PVAStructure,
    opts: VerifyOptions,
) -> Result<VerifyReport> {
    let pencil = s0.pencil(s1);
    let mut opts = opts;
    opts.skew_only = false;
    let mut report = verify_structure(&pencil, opts)?;
    for r in &mut report.results {
        if r.check == "jacobi" {
            r.check = "compat".into();
        }
    }
    Ok(report)
}

/// Convenience constructors for the classical one-generator structures.
pub mod classics {
    use super::*;

    /// The free-field structure on generators `v_1..v_n` with Gram matrix
    /// `S`: `{v_i lambda v_j} = s_ij lambda`.
    pub fn free_field(n: usize, gram: GramMatrix) -> PVAStructure {
        PVAStructure::new(
            &format!("gfz({n})"),
            Universe::scalar(Family::V, 1, n as i32),
            Arc::new(FreeFieldRule { gram }),
        )
    }

    /// Free field with the identity Gram matrix.
    pub fn free_field_identity(n: usize) -> PVAStructure {
        let s = (0..n)
            .map(|a| {
                (0..n)
                    .map(|b| if a == b { Rat::one() } else { Rat::zero() })
                    .collect()
            })
            .collect();
        free_field(n, GramMatrix::Numeric(s))
    }

    /// Free field with minus the identity Gram matrix.
    pub fn free_field_neg_identity(n: usize) -> PVAStructure {
        let s: Vec<Vec<Rat>> = (0..n)
            .map(|a| {
                (0..n)
                    .map(|b| if a == b { -Rat::one() } else { Rat::zero() })
                    .collect()
            })
            .collect();
        free_field(n, GramMatrix::Numeric(s))
    }

    /// The Virasoro structure `{u lambda u} = (d + 2 lambda)u + c lambda^3`
    /// on the single generator `u_{-1}`, with formal central constant.
    pub fn virasoro_formal() -> PVAStructure {
        virasoro(DiffPoly::formal_const(ConstKey::C))
    }

    pub fn virasoro(central: DiffPoly) -> PVAStructure {
        let gen = VarKey::u(-1);
        PVAStructure::new(
            "virasoro",
            Universe::scalar(Family::U, -1, -1),
            Arc::new(VirasoroRule { gen, central }),
        )
    }

    use num_traits::{One, Zero};
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffalg::{rat, rat_i};
    use proptest::prelude::*;

    fn u() -> DiffPoly {
        DiffPoly::gen(VarKey::u(-1))
    }

    fn v(i: i32) -> DiffPoly {
        DiffPoly::gen(VarKey::gen(Family::V, i, 0, 0))
    }

    /// Free field on one generator v_1 with {v lambda v} = lambda.
    fn gfz1() -> PVAStructure {
        classics::free_field_identity(1)
    }

    #[test]
    fn virasoro_table_through_master_formula() {
        let s = classics::virasoro_formal();
        let got = s.master_bracket(&u(), &u()).unwrap();
        let mut expect = LambdaValue::mono(1, u().scale(&rat_i(2)));
        expect.add_local(0, u().total_derivative());
        expect.add_local(3, DiffPoly::formal_const(ConstKey::C));
        assert_eq!(got, expect);
    }

    #[test]
    fn sesquilinearity_in_the_right_slot() {
        // {u lambda du} = (lambda + d) {u lambda u}.
        for s in [classics::virasoro_formal(), gfz_as_u()] {
            let du = u().total_derivative();
            let got = s.master_bracket(&u(), &du).unwrap();
            let expect = s.master_bracket(&u(), &u()).unwrap().apply_shift();
            assert_eq!(got, expect);
        }
    }

    #[test]
    fn sesquilinearity_in_the_left_slot() {
        // {du lambda u} = -lambda {u lambda u}.
        let s = classics::virasoro_formal();
        let du = u().total_derivative();
        let got = s.master_bracket(&du, &u()).unwrap();
        let base = s.master_bracket(&u(), &u()).unwrap();
        let mut expect = LambdaValue::zero();
        for (p, c) in base.local_terms() {
            expect.add_local(p + 1, -c);
        }
        assert_eq!(got, expect);
    }

    /// Free field written on the default family, single generator u_{-1},
    /// for mixing with Virasoro in pencils.
    fn gfz_as_u() -> PVAStructure {
        let gen = VarKey::u(-1);
        let mut entries = BTreeMap::new();
        entries.insert((gen, gen), LambdaValue::mono(1, DiffPoly::one()));
        PVAStructure::new(
            "gfz-u",
            Universe::scalar(Family::U, -1, -1),
            Arc::new(ExplicitRule::new(entries)),
        )
    }

    #[test]
    fn quadratic_density_bracket_on_free_field() {
        // {v^2 lambda v} = 2 v lambda + 2 v'.
        let s = gfz1();
        let f = &v(1) * &v(1);
        let got = s.master_bracket(&f, &v(1)).unwrap();
        let mut expect = LambdaValue::mono(1, v(1).scale(&rat_i(2)));
        expect.add_local(0, v(1).total_derivative().scale(&rat_i(2)));
        assert_eq!(got, expect);
        // And the transposed bracket follows from skew-symmetry.
        let other = s.master_bracket(&v(1), &f).unwrap();
        assert_eq!(other, -&got.skew_star());
    }

    #[test]
    fn skew_residuals() {
        let s = classics::virasoro_formal();
        assert!(s.skew_residual(VarKey::u(-1), VarKey::u(-1)).unwrap().is_zero());
        let g = classics::free_field(2, GramMatrix::Symbolic);
        let g1 = VarKey::gen(Family::V, 1, 0, 0);
        let g2 = VarKey::gen(Family::V, 2, 0, 0);
        for &a in &[g1, g2] {
            for &b in &[g1, g2] {
                assert!(g.skew_residual(a, b).unwrap().is_zero());
            }
        }
        // Deliberately broken: {u lambda u} = lambda^2 is even in the flip.
        let gen = VarKey::u(-1);
        let mut entries = BTreeMap::new();
        entries.insert((gen, gen), LambdaValue::mono(2, DiffPoly::one()));
        let broken = PVAStructure::new(
            "broken-skew",
            Universe::scalar(Family::U, -1, -1),
            Arc::new(ExplicitRule::new(entries)),
        );
        let r = broken.skew_residual(gen, gen).unwrap();
        assert_eq!(r, LambdaValue::mono(2, DiffPoly::from_int(2)));
    }

    #[test]
    fn jacobi_holds_for_classics() {
        let s = classics::virasoro_formal();
        let gen = VarKey::u(-1);
        assert!(s.jacobi_residual(gen, gen, gen).unwrap().is_zero());

        let g = classics::free_field(2, GramMatrix::Symbolic);
        let gens = g.universe.gens().unwrap();
        for &a in &gens {
            for &b in &gens {
                for &c in &gens {
                    assert!(g.jacobi_residual(a, b, c).unwrap().is_zero());
                }
            }
        }
    }

    #[test]
    fn quadratic_first_order_table_satisfies_jacobi() {
        // {u lambda u} = u^2 lambda + u u' is u (lambda+d) u, a genuine
        // Poisson structure with a nonlinear coefficient.
        let gen = VarKey::u(-1);
        let mut val = LambdaValue::mono(1, u().pow(2));
        val.add_local(0, &u() * &u().total_derivative());
        let mut entries = BTreeMap::new();
        entries.insert((gen, gen), val);
        let s = PVAStructure::new(
            "gardner",
            Universe::scalar(Family::U, -1, -1),
            Arc::new(ExplicitRule::new(entries)),
        );
        assert!(s.skew_residual(gen, gen).unwrap().is_zero());
        assert!(s.jacobi_residual(gen, gen, gen).unwrap().is_zero());
    }

    #[test]
    fn jacobi_detects_a_skew_but_non_poisson_table() {
        // Two generators with {a lambda a} = {b lambda b} = lambda and the
        // cross entry {a lambda b} = a lambda: skew-symmetric after
        // completion, but the (a, b, b) Jacobi residual is
        // -a lambda^2 - 2a lambda mu - a' lambda.
        let a = VarKey::u(-1);
        let b = VarKey::u(-2);
        let mut entries = BTreeMap::new();
        entries.insert((a, a), LambdaValue::mono(1, DiffPoly::one()));
        entries.insert((b, b), LambdaValue::mono(1, DiffPoly::one()));
        entries.insert((a, b), LambdaValue::mono(1, DiffPoly::gen(a)));
        let s = PVAStructure::new(
            "broken-jacobi",
            Universe::scalar(Family::U, -2, -1),
            Arc::new(ExplicitRule::with_skew_completion(entries)),
        );
        for &x in &[a, b] {
            for &y in &[a, b] {
                assert!(s.skew_residual(x, y).unwrap().is_zero());
            }
        }
        let j = s.jacobi_residual(a, b, b).unwrap();
        let ap = DiffPoly::gen(a);
        let mut expect = LambdaMuValue::zero();
        expect.add(2, 0, -&ap);
        expect.add(1, 1, ap.scale(&rat_i(-2)));
        expect.add(1, 0, -&ap.total_derivative());
        assert_eq!(j, expect);
    }

    #[test]
    fn compatibility_pencils() {
        // Free field and Virasoro on the same generator are compatible.
        let gen = VarKey::u(-1);
        let r = compat_residual(
            &gfz_as_u(),
            &classics::virasoro_formal(),
            gen,
            gen,
            gen,
        )
        .unwrap();
        assert!(r.is_zero());
        // Virasoro against {u lambda u} = u^2 lambda is not compatible.
        let mut entries = BTreeMap::new();
        entries.insert((gen, gen), LambdaValue::mono(1, u().pow(2)));
        let bad = PVAStructure::new(
            "quadratic",
            Universe::scalar(Family::U, -1, -1),
            Arc::new(ExplicitRule::new(entries)),
        );
        let r = compat_residual(&classics::virasoro_formal(), &bad, gen, gen, gen).unwrap();
        assert!(!r.is_zero());
    }

    #[test]
    fn functional_bracket_examples() {
        let g = gfz1();
        // { int v, int v^2 } = 2 v v' integrated, which is zero.
        let f1 = LocalFunctional::new(v(1));
        let f2 = LocalFunctional::new(&v(1) * &v(1));
        let b = g.functional_bracket(&f1, &f2).unwrap();
        assert!(b.is_zero());
    }

    #[test]
    fn flow_routes_agree_on_virasoro() {
        let s = classics::virasoro(DiffPoly::constant(rat(1, 2)));
        let h = (&u() * &u()).scale(&rat(1, 2));
        let via_bracket = s.flow_bracket(&h, &u()).unwrap();
        let via_operator = s.flow_operator(&h, VarKey::u(-1)).unwrap();
        assert_eq!(via_bracket, via_operator);
        // (u' + 2u d + (1/2) d^3)(u) = 3uu' + u'''/2.
        let expect = &(&u() * &u().total_derivative()).scale(&rat_i(3))
            + &u().nth_derivative(3).scale(&rat(1, 2));
        assert_eq!(via_operator, expect);
    }

    #[test]
    fn verify_report_shapes() {
        let g = classics::free_field_identity(2);
        let report = verify_structure(&g, VerifyOptions::default()).unwrap();
        assert!(report.all_ok());
        // 4 skew pairs + 8 jacobi triples.
        assert_eq!(report.results.len(), 12);
        let json = report.to_json();
        assert!(json.as_array().unwrap().len() == 12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn right_leibniz(
            f in crate::diffalg::test_support::small_poly(),
            g in crate::diffalg::test_support::small_poly(),
            h in crate::diffalg::test_support::small_poly(),
        ) {
            // {f lambda g h} = {f lambda g} h + {f lambda h} g for any
            // table; exercised on a two-generator explicit structure.
            let a = VarKey::u(-1);
            let b = VarKey::u(-2);
            let mut entries = BTreeMap::new();
            let mut vab = LambdaValue::mono(2, DiffPoly::gen(a));
            vab.add_local(0, DiffPoly::gen(b).total_derivative());
            entries.insert((a, b), vab);
            entries.insert((a, a), LambdaValue::mono(1, DiffPoly::gen(b)));
            entries.insert(
                (b, b),
                LambdaValue::mono(3, DiffPoly::one()),
            );
            let s = PVAStructure::new(
                "random-table",
                Universe::scalar(Family::U, -2, -1),
                Arc::new(ExplicitRule::with_skew_completion(entries)),
            );
            let lhs = s.master_bracket(&f, &(&g * &h)).unwrap();
            let rg = s.master_bracket(&f, &g).unwrap().mul_poly(&h);
            let rh = s.master_bracket(&f, &h).unwrap().mul_poly(&g);
            prop_assert_eq!(lhs, &rg + &rh);
        }

        #[test]
        fn functional_self_bracket_vanishes(
            f in crate::diffalg::test_support::small_poly(),
        ) {
            let a = VarKey::u(-1);
            let b = VarKey::u(-2);
            let mut entries = BTreeMap::new();
            entries.insert((a, a), LambdaValue::mono(1, DiffPoly::one()));
            entries.insert((b, b), LambdaValue::mono(3, DiffPoly::one()));
            entries.insert((a, b), LambdaValue::mono(2, DiffPoly::gen(a)));
            let s = PVAStructure::new(
                "skew-table",
                Universe::scalar(Family::U, -2, -1),
                Arc::new(ExplicitRule::with_skew_completion(entries)),
            );
            let lf = LocalFunctional::new(f);
            let bb = s.functional_bracket(&lf, &lf).unwrap();
            prop_assert!(bb.is_zero());
        }
    }
}
