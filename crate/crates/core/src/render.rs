//! Plain-text and LaTeX printing of polynomials, bracket values, flows, and
//! local functionals.
//!
//! Text output uses Unicode mathematical typography (lambda, vulgar
//! fractions, sub- and superscripts); LaTeX output uses the usual control
//! sequences.  Derivatives print as primes in both formats.  Output is
//! deterministic: terms are ordered by total degree first, then by the
//! canonical monomial order.

use std::collections::BTreeMap;

use num_traits::{One, Signed, Zero};

use crate::diffalg::{ConstKey, DiffPoly, Monomial, Rat, VarKey};
use crate::hierarchy::FlowEquation;
use crate::lambda::LambdaValue;

/// Target syntax for the emitters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Text,
    Latex,
}

/// Pretty names for generators; anything absent falls back to the canonical
/// family-letter-plus-index spelling.
#[derive(Debug, Clone, Default)]
pub struct Namer {
    names: BTreeMap<VarKey, String>,
    matrix: bool,
}

impl Namer {
    /// Canonical names only.
    pub fn canonical() -> Namer {
        Namer::default()
    }

    pub fn with<I: IntoIterator<Item = (VarKey, String)>>(names: I) -> Namer {
        Namer { names: names.into_iter().map(|(k, s)| (k.base(), s)).collect(), matrix: false }
    }

    /// Always print matrix positions, even for the (1,1) entry.
    pub fn matrix(mut self) -> Namer {
        self.matrix = true;
        self
    }

    pub fn insert(&mut self, key: VarKey, name: &str) {
        self.names.insert(key.base(), name.to_string());
    }

    /// Conventional letters for the well-known structures: the order-two
    /// reduction uses `u`, the order-three one `u, v`, the reduced
    /// factorization target uses `v`.  Everything else keeps canonical
    /// names.
    pub fn for_structure(structure: &str) -> Namer {
        let lowered = structure.trim().to_ascii_lowercase();
        let mut nm = Namer::canonical();
        match lowered.as_str() {
            "w2" | "kdv" | "v1" | "virasoro" | "virasoro-magri" => {
                nm.insert(VarKey::u(-1), "u");
            }
            "w3" | "boussinesq" => {
                nm.insert(VarKey::u(-2), "u");
                nm.insert(VarKey::u(-1), "v");
            }
            _ => {}
        }
        nm
    }

    /// Base name of a generator, without derivative marks.
    pub fn base(&self, key: VarKey, fmt: Format) -> String {
        if let Some(name) = self.names.get(&key.base()) {
            return name.clone();
        }
        let letter = key.fam.letter();
        let mut out = String::new();
        match fmt {
            Format::Text => {
                out.push(letter);
                out.push_str(&subscript_int(key.idx as i64));
                if key.row != 0 || key.col != 0 || self.matrix {
                    out.push('_');
                    out.push_str(&format!("{}{}", key.row + 1, key.col + 1));
                }
            }
            Format::Latex => {
                out.push(letter);
                out.push_str(&format!("_{{{}}}", key.idx));
                if key.row != 0 || key.col != 0 || self.matrix {
                    out.push_str(&format!("^{{({}{})}}", key.row + 1, key.col + 1));
                }
            }
        }
        out
    }

    /// Full occurrence: base name plus derivative primes.
    pub fn var(&self, key: VarKey, fmt: Format) -> String {
        let mut out = self.base(key, fmt);
        if key.der <= 4 {
            for _ in 0..key.der {
                out.push('\'');
            }
        } else {
            out.push_str(&format!("^({})", key.der));
        }
        out
    }
}

const SUPERSCRIPTS: [char; 10] = ['⁰', '¹', '²', '³', '⁴', '⁵', '⁶', '⁷', '⁸', '⁹'];
const SUBSCRIPTS: [char; 10] = ['₀', '₁', '₂', '₃', '₄', '₅', '₆', '₇', '₈', '₉'];

fn map_digits(n: i64, digits: &[char; 10], minus: char) -> String {
    let mut out = String::new();
    if n < 0 {
        out.push(minus);
    }
    for d in n.abs().to_string().chars() {
        out.push(digits[d.to_digit(10).unwrap() as usize]);
    }
    out
}

fn superscript_int(n: i64) -> String {
    map_digits(n, &SUPERSCRIPTS, '⁻')
}

fn subscript_int(n: i64) -> String {
    map_digits(n, &SUBSCRIPTS, '₋')
}

/// Exponent marker for a power in the given format (empty for exponent 1).
fn power_mark(e: u32, fmt: Format) -> String {
    if e == 1 {
        return String::new();
    }
    match fmt {
        Format::Text => superscript_int(e as i64),
        Format::Latex => {
            if e < 10 {
                format!("^{e}")
            } else {
                format!("^{{{e}}}")
            }
        }
    }
}

/// Positive rational magnitude: integers plain, common fractions as vulgar
/// glyphs in text, `\frac` in LaTeX.
fn magnitude(r: &Rat, fmt: Format) -> String {
    let r = r.abs();
    if r.is_integer() {
        return r.numer().to_string();
    }
    let (n, d) = (r.numer().to_string(), r.denom().to_string());
    match fmt {
        Format::Text => vulgar(&n, &d).unwrap_or_else(|| format!("{n}/{d}")),
        Format::Latex => {
            if n.len() == 1 && d.len() == 1 {
                format!("\\frac{n}{d}")
            } else {
                format!("\\frac{{{n}}}{{{d}}}")
            }
        }
    }
}

fn vulgar(n: &str, d: &str) -> Option<String> {
    let glyph = match (n, d) {
        ("1", "2") => "½",
        ("1", "3") => "⅓",
        ("2", "3") => "⅔",
        ("1", "4") => "¼",
        ("3", "4") => "¾",
        ("1", "5") => "⅕",
        ("2", "5") => "⅖",
        ("3", "5") => "⅗",
        ("4", "5") => "⅘",
        ("1", "6") => "⅙",
        ("5", "6") => "⅚",
        ("1", "8") => "⅛",
        ("3", "8") => "⅜",
        ("5", "8") => "⅝",
        ("7", "8") => "⅞",
        _ => return None,
    };
    Some(glyph.to_string())
}

fn const_name(k: ConstKey, fmt: Format) -> String {
    match (k, fmt) {
        (ConstKey::C, _) => "c".into(),
        (ConstKey::S(a, b), Format::Text) => format!(
            "s{}{}",
            subscript_int(a as i64 + 1),
            subscript_int(b as i64 + 1)
        ),
        (ConstKey::S(a, b), Format::Latex) => format!("s_{{{}{}}}", a + 1, b + 1),
    }
}

/// Factor strings of one monomial, in display order (constants first).
fn monomial_factors(m: &Monomial, nm: &Namer, fmt: Format) -> Vec<String> {
    let mut out = Vec::new();
    for &(k, e) in &m.consts {
        out.push(format!("{}{}", const_name(k, fmt), power_mark(e, fmt)));
    }
    for &(k, e) in &m.vars {
        out.push(format!("{}{}", nm.var(k, fmt), power_mark(e, fmt)));
    }
    out
}

/// True when a factor can be juxtaposed without a separating space: a single
/// letter optionally dressed with primes, sub- or superscripts.
fn is_simple_factor(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() => {}
        _ => return false,
    }
    chars.all(|c| {
        c == '\'' || SUPERSCRIPTS.contains(&c) || SUBSCRIPTS.contains(&c) || c == '⁻' || c == '₋'
    })
}

fn join_factors(factors: &[String], fmt: Format) -> String {
    match fmt {
        Format::Latex => factors.join(""),
        Format::Text => {
            if factors.iter().all(|f| is_simple_factor(f)) {
                factors.join("")
            } else {
                factors.join(" ")
            }
        }
    }
}

struct Term {
    sign_negative: bool,
    body: String,
}

/// One rendered term `coeff * monomial * suffix`, sign split off.
fn term(c: &Rat, m: &Monomial, suffix: &str, nm: &Namer, fmt: Format) -> Term {
    let factors = monomial_factors(m, nm, fmt);
    let mut body = String::new();
    if factors.is_empty() && suffix.is_empty() {
        body.push_str(&magnitude(c, fmt));
    } else {
        if !c.abs().is_one() {
            let mag = magnitude(c, fmt);
            let needs_gap = mag.contains('/') && !factors.is_empty();
            body.push_str(&mag);
            if needs_gap {
                body.push(' ');
            }
        }
        body.push_str(&join_factors(&factors, fmt));
        if !suffix.is_empty() {
            // A multi-character trailing factor gets a thin separator so
            // subscripted symbols do not run into the lambda power.
            if factors.last().map_or(false, |f| f.chars().count() > 1) {
                body.push(' ');
            }
            body.push_str(suffix);
        }
    }
    Term { sign_negative: c.is_negative(), body }
}

fn assemble(terms: Vec<Term>, fmt: Format) -> String {
    if terms.is_empty() {
        return "0".into();
    }
    let (minus, mid_minus, mid_plus) = match fmt {
        Format::Text => ("−", " − ", " + "),
        Format::Latex => ("-", "-", "+"),
    };
    let mut out = String::new();
    for (i, t) in terms.iter().enumerate() {
        if i == 0 {
            if t.sign_negative {
                out.push_str(minus);
            }
        } else if t.sign_negative {
            out.push_str(mid_minus);
        } else {
            out.push_str(mid_plus);
        }
        out.push_str(&t.body);
    }
    out
}

/// Terms of a polynomial in display order, each with an optional suffix
/// (used for attached lambda powers).
fn poly_terms(p: &DiffPoly, suffix: &str, nm: &Namer, fmt: Format) -> Vec<Term> {
    let mut entries: Vec<(&Monomial, &Rat)> = p.terms().collect();
    entries.sort_by(|a, b| (a.0.degree(), a.0).cmp(&(b.0.degree(), b.0)));
    entries.into_iter().map(|(m, c)| term(c, m, suffix, nm, fmt)).collect()
}

/// A differential polynomial as a signed sum of terms.
pub fn poly(p: &DiffPoly, nm: &Namer, fmt: Format) -> String {
    assemble(poly_terms(p, "", nm, fmt), fmt)
}

/// A polynomial with its rational content factored out when that shortens
/// the expression: `1/4 u''' + 3/2 u u'` prints as `¼(u''' + 6uu')`.
pub fn poly_factored(p: &DiffPoly, nm: &Namer, fmt: Format) -> String {
    let (content, primitive) = p.content_primitive();
    if content.is_zero() {
        return "0".into();
    }
    let inner_terms = primitive.terms().count();
    if content.abs().is_one() || inner_terms < 2 {
        return poly(p, nm, fmt);
    }
    let minus = match fmt {
        Format::Text => "−",
        Format::Latex => "-",
    };
    let mut out = String::new();
    if content.is_negative() {
        out.push_str(minus);
    }
    if !content.abs().is_one() {
        out.push_str(&magnitude(&content, fmt));
    }
    out.push_str(&format!("({})", poly(&primitive, nm, fmt)));
    out
}

fn lambda_symbol(fmt: Format) -> &'static str {
    match fmt {
        Format::Text => "λ",
        Format::Latex => "\\lambda",
    }
}

fn partial_symbol(fmt: Format) -> &'static str {
    match fmt {
        Format::Text => "∂",
        Format::Latex => "\\partial",
    }
}

fn lambda_power(p: u32, fmt: Format) -> String {
    format!("{}{}", lambda_symbol(fmt), power_mark(p, fmt))
}

/// A bracket value.  Conformal pairs `2c g lambda + c g'` are grouped as
/// `(2c lambda + c d)g`; the remaining local part is listed by descending
/// lambda power; nonlocal tails print with an explicit `(lambda+d)^{-1}`.
pub fn lambda_value(v: &LambdaValue, nm: &Namer, fmt: Format) -> String {
    let mut local: BTreeMap<u32, DiffPoly> = BTreeMap::new();
    for (p, c) in v.local_terms() {
        local.insert(*p, c.clone());
    }

    // Conformal grouping: a generator g with numeric coefficient 2a at
    // lambda^1 and a matching a g' at lambda^0 prints as (2a lambda + a d)g.
    let mut groups: Vec<Term> = Vec::new();
    if let (Some(c1), Some(c0)) = (local.get(&1).cloned(), local.get(&0).cloned()) {
        let mut gens: Vec<VarKey> = c1
            .terms()
            .filter_map(|(m, _)| match (m.vars.as_slice(), m.consts.as_slice()) {
                ([(k, 1)], []) if k.der == 0 => Some(*k),
                _ => None,
            })
            .collect();
        gens.sort();
        for g in gens {
            let a1 = c1.coeff(&Monomial::var(g));
            let a0 = c0.coeff(&Monomial::var(g.with_der(1)));
            if a0.is_zero() || a1 != a0.clone() + a0.clone() || a0.is_negative() {
                continue;
            }
            let lam = lambda_symbol(fmt);
            let par = partial_symbol(fmt);
            let c1s = if a1.is_one() { String::new() } else { magnitude(&a1, fmt) };
            let c0s = if a0.is_one() { String::new() } else { magnitude(&a0, fmt) };
            groups.push(Term {
                sign_negative: false,
                body: format!("({c1s}{lam}+{c0s}{par}){}", nm.var(g, fmt)),
            });
            let e1 = &local.remove(&1).unwrap_or_else(DiffPoly::zero)
                - &DiffPoly::gen(g).scale(&a1);
            let e0 = &local.remove(&0).unwrap_or_else(DiffPoly::zero)
                - &DiffPoly::gen(g.with_der(1)).scale(&a0);
            if !e1.is_zero() {
                local.insert(1, e1);
            }
            if !e0.is_zero() {
                local.insert(0, e0);
            }
        }
    }

    let mut terms = groups;
    for (&p, c) in local.iter().rev() {
        if c.is_zero() {
            continue;
        }
        if p == 0 {
            terms.extend(poly_terms(c, "", nm, fmt));
        } else if c.terms().count() == 1 {
            terms.extend(poly_terms(c, &lambda_power(p, fmt), nm, fmt));
        } else {
            terms.push(Term {
                sign_negative: false,
                body: format!("({}){}", poly(c, nm, fmt), lambda_power(p, fmt)),
            });
        }
    }

    for ((mp, mq), c) in v.nonlocal_terms() {
        let kernel = match fmt {
            Format::Text => "(λ+∂)⁻¹",
            Format::Latex => "(\\lambda+\\partial)^{-1}",
        };
        let left = term(c, mp, "", nm, fmt);
        let right = join_factors(&monomial_factors(mq, nm, fmt), fmt);
        let right = if right.is_empty() { "1".to_string() } else { right };
        terms.push(Term {
            sign_negative: left.sign_negative,
            body: format!("{} {kernel} {right}", left.body),
        });
    }

    assemble(terms, fmt)
}

/// A local functional: the integral sign wraps the density, with parentheses
/// only when the density has several terms.
pub fn functional(h: &DiffPoly, nm: &Namer, fmt: Format) -> String {
    let int = match fmt {
        Format::Text => "∫",
        Format::Latex => "\\int ",
    };
    let body = poly(h, nm, fmt);
    if h.terms().count() > 1 {
        format!("{int}({body})")
    } else {
        format!("{int}{body}")
    }
}

/// One line per evolving generator.  A single-generator flow prints its
/// right-hand side bare; systems prefix each line with `name_t =`.
pub fn flow_lines(eq: &FlowEquation, nm: &Namer, fmt: Format) -> Vec<String> {
    let flows: Vec<(&VarKey, &DiffPoly)> = eq.flows().collect();
    if flows.len() == 1 {
        return vec![poly_factored(flows[0].1, nm, fmt)];
    }
    flows
        .into_iter()
        .map(|(g, rhs)| format!("{}_t = {}", nm.base(*g, fmt), poly_factored(rhs, nm, fmt)))
        .collect()
}

/// Rational constant in display form (signed).
pub fn rational(r: &Rat, fmt: Format) -> String {
    if r.is_negative() {
        let minus = match fmt {
            Format::Text => "−",
            Format::Latex => "-",
        };
        format!("{minus}{}", magnitude(r, fmt))
    } else {
        magnitude(r, fmt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agd::{by_name, AdlerContext, Flavor};
    use crate::diffalg::rat;
    use crate::miura::dirac_miura;

    fn kdv_namer() -> Namer {
        Namer::for_structure("kdv")
    }

    #[test]
    fn pencil_entry_prints_in_conformal_form() {
        let set = by_name("w2").unwrap();
        let pencil = set.pencil().unwrap();
        let e = pencil.entry(VarKey::u(-1), VarKey::u(-1)).unwrap();
        assert_eq!(
            lambda_value(&e, &kdv_namer(), Format::Text),
            "(2λ+∂)u + ½λ³ − 2cλ"
        );
    }

    #[test]
    fn first_order_bracket_is_minus_lambda() {
        let ctx = AdlerContext::new(1, 1, Flavor::Finite).unwrap();
        let e = ctx.h_entry(VarKey::u(-1), VarKey::u(-1)).unwrap();
        assert_eq!(lambda_value(&e, &kdv_namer(), Format::Text), "−λ");
    }

    #[test]
    fn symbolic_gram_entry_keeps_its_constant() {
        let set = by_name("gfz(3)").unwrap();
        let i = VarKey::gen(crate::diffalg::Family::V, 1, 0, 0);
        let j = VarKey::gen(crate::diffalg::Family::V, 2, 0, 0);
        let e = set.h.entry(i, j).unwrap();
        assert_eq!(lambda_value(&e, &Namer::canonical(), Format::Text), "s₁₂ λ");
    }

    #[test]
    fn third_flow_factors_its_content() {
        let spec = crate::hierarchy::HierarchySpec::new(
            AdlerContext::new(2, 1, Flavor::Finite).unwrap(),
            true,
        )
        .unwrap();
        let eq = spec.lax_flow(3).unwrap();
        let lines = flow_lines(&eq, &kdv_namer(), Format::Latex);
        assert_eq!(lines, vec!["\\frac14(u'''+6uu')".to_string()]);
        let text = flow_lines(&eq, &kdv_namer(), Format::Text);
        assert_eq!(text, vec!["¼(u''' + 6uu')".to_string()]);
    }

    #[test]
    fn reduced_factorization_image_prints_classically() {
        let map = dirac_miura(2).unwrap();
        let mut nm = Namer::for_structure("w2");
        nm.insert(VarKey::gen(crate::diffalg::Family::V, 1, 0, 0), "v");
        let img = map.image(VarKey::u(-1)).unwrap();
        assert_eq!(poly(img, &nm, Format::Text), "v' − v²");
    }

    #[test]
    fn functional_wraps_multi_term_densities() {
        let h = &DiffPoly::gen(VarKey::u(2)) + &DiffPoly::gen(VarKey::u(0)).pow(2);
        assert_eq!(functional(&h, &Namer::canonical(), Format::Text), "∫(u₂ + u₀²)");
        let single = DiffPoly::gen(VarKey::u(0));
        assert_eq!(functional(&single, &Namer::canonical(), Format::Text), "∫u₀");
    }

    #[test]
    fn canonical_matrix_names_are_readable() {
        let key = VarKey::u_at(-1, 0, 1).with_der(1);
        assert_eq!(Namer::canonical().var(key, Format::Text), "u₋₁_12'");
        assert_eq!(Namer::canonical().var(key, Format::Latex), "u_{-1}^{(12)}'");
    }

    #[test]
    fn fractions_round_trip_both_formats() {
        assert_eq!(rational(&rat(-2, 3), Format::Text), "−⅔");
        assert_eq!(rational(&rat(5, 12), Format::Text), "5/12");
        assert_eq!(rational(&rat(1, 4), Format::Latex), "\\frac14");
        assert_eq!(rational(&rat(11, 12), Format::Latex), "\\frac{11}{12}");
    }
}
