//! Command-line front end for the exact computer-algebra engine: bracket
//! tables, axiom verification sweeps, hierarchy flows and densities,
//! factorization maps, and structure reports.
//!
//! Exit codes: 0 on success with all residuals zero, 1 when a mathematical
//! check fails (a nonzero residual or a route disagreement), 2 on usage or
//! configuration errors.

use std::collections::BTreeMap;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use agd_core::agd::{adler_by_name, by_name_with, virasoro_report, StructureSet};
use agd_core::diffalg::{DiffPoly, VarKey};
use agd_core::hierarchy::{flow_difference, HierarchySpec, StructureChoice};
use agd_core::miura::{dirac_miura, matrix_miura, miura_image, MiuraMap};
use agd_core::psido::TruncationPolicy;
use agd_core::pva::{verify_compat, verify_structure, PVAStructure, VerifyOptions, VerifyReport};
use agd_core::render::{self, Format, Namer};
use agd_core::Error;

#[derive(Parser)]
#[command(
    name = "agd",
    version,
    about = "Exact bi-Poisson structures, W-algebras, and integrable hierarchies"
)]
struct Cli {
    /// Worker threads for verification sweeps (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print one bracket-table entry {u_i lambda u_j}.
    Bracket(BracketArgs),
    /// Sweep skew-symmetry, Jacobi, and pencil-compatibility residuals.
    Verify(VerifyArgs),
    /// Print the k-th flow of the integrable hierarchy.
    Hierarchy(HierarchyArgs),
    /// List conserved densities as local functionals.
    Densities(DensitiesArgs),
    /// Print a factorization map generator by generator.
    Miura(MiuraArgs),
    /// Summarize a structure: generators, central charge, weights.
    Report(ReportArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Text,
    Latex,
    Json,
}

impl FormatArg {
    fn render(self) -> Format {
        match self {
            FormatArg::Latex => Format::Latex,
            _ => Format::Text,
        }
    }
}

#[derive(Args)]
struct BracketArgs {
    /// Structure name: w2, kdv, w3, v1, v2, kp, w-mat(2,2), gfz(3), ...
    name: String,
    /// Index of the first generator.
    #[arg(allow_negative_numbers = true)]
    i: i32,
    /// Index of the second generator.
    #[arg(allow_negative_numbers = true)]
    j: i32,
    /// Matrix entry of the first generator, two 1-based digits.
    #[arg(long, default_value = "11", value_name = "RC")]
    ab: String,
    /// Matrix entry of the second generator, two 1-based digits.
    #[arg(long, default_value = "11", value_name = "RC")]
    cd: String,
    /// Which table to read: H (default) or K.
    #[arg(long = "structure", value_name = "TABLE")]
    table: Option<String>,
    /// Print the pencil H - c K with a formal constant c.
    #[arg(long)]
    pencil: bool,
    #[arg(long, value_enum, default_value_t = FormatArg::Text)]
    format: FormatArg,
    /// Re-derive entries along independent routes and compare.
    #[arg(long)]
    cross_check: bool,
}

#[derive(Args)]
struct VerifyArgs {
    /// Structure name.
    name: String,
    /// Comma-separated checks: skew, jacobi, compat.
    #[arg(long, default_value = "skew,jacobi")]
    checks: String,
    #[arg(long, value_enum, default_value_t = FormatArg::Text)]
    format: FormatArg,
    /// Re-derive entries along independent routes and compare.
    #[arg(long)]
    cross_check: bool,
}

#[derive(Args)]
struct HierarchyArgs {
    /// Structure name (an Adler-type v/w structure).
    name: String,
    /// Flow index.
    #[arg(long)]
    k: u32,
    /// Route: lax (default), h, hd, or k.
    #[arg(long = "structure", value_name = "ROUTE", default_value = "lax")]
    route: String,
    /// Truncation floor for infinite expansions.
    #[arg(long, allow_negative_numbers = true)]
    floor: Option<i64>,
    #[arg(long, value_enum, default_value_t = FormatArg::Text)]
    format: FormatArg,
    /// Also derive the flow through the bracket route and compare.
    #[arg(long)]
    cross_check: bool,
}

#[derive(Args)]
struct DensitiesArgs {
    /// Structure name (an Adler-type v/w structure).
    name: String,
    /// Largest flow index to print.
    #[arg(long)]
    kmax: Option<u32>,
    /// Truncation floor for infinite expansions.
    #[arg(long, allow_negative_numbers = true)]
    floor: Option<i64>,
    #[arg(long, value_enum, default_value_t = FormatArg::Text)]
    format: FormatArg,
}

#[derive(Args)]
struct MiuraArgs {
    /// Operator order of the factorization.
    #[arg(long = "N")]
    n: u32,
    /// Matrix size of the coefficients.
    #[arg(long, default_value_t = 1)]
    m: usize,
    /// Map between the constrained structures instead of the plain ones.
    #[arg(long)]
    reduced: bool,
    #[arg(long, value_enum, default_value_t = FormatArg::Text)]
    format: FormatArg,
}

#[derive(Args)]
struct ReportArgs {
    /// Structure name.
    name: String,
    #[arg(long, value_enum, default_value_t = FormatArg::Text)]
    format: FormatArg,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be positive");
            return ExitCode::from(2);
        }
        std::env::set_var("RAYON_NUM_THREADS", jobs.to_string());
    }
    let outcome = match cli.command {
        Command::Bracket(args) => cmd_bracket(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Hierarchy(args) => cmd_hierarchy(args),
        Command::Densities(args) => cmd_densities(args),
        Command::Miura(args) => cmd_miura(args),
        Command::Report(args) => cmd_report(args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                // A failed dual-route comparison is a mathematical finding,
                // not a usage problem.
                Error::CrossCheck(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}

type CmdResult = Result<u8, Error>;

/// Print a line, treating a closed output pipe as an orderly stop.
fn emit(line: impl AsRef<str>) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    if writeln!(out, "{}", line.as_ref()).is_err() {
        std::process::exit(0);
    }
}

/// Parse a two-digit 1-based matrix position like "12".
fn parse_entry(s: &str, m: usize, flag: &str) -> Result<(u8, u8), Error> {
    let digits: Vec<u32> = s.chars().filter_map(|c| c.to_digit(10)).collect();
    if digits.len() != 2 || s.chars().count() != 2 {
        return Err(Error::Parse(format!("--{flag} wants two digits like 12, got {s:?}")));
    }
    let (r, c) = (digits[0], digits[1]);
    if r == 0 || c == 0 || r as usize > m || c as usize > m {
        return Err(Error::Dimension(format!(
            "--{flag} {s} is outside the {m} x {m} coefficient matrices"
        )));
    }
    Ok((r as u8 - 1, c as u8 - 1))
}

fn generator_key(
    table: &PVAStructure,
    idx: i32,
    entry: &str,
    flag: &str,
) -> Result<VarKey, Error> {
    let (row, col) = parse_entry(entry, table.universe.m, flag)?;
    let key = VarKey::gen(table.universe.fam, idx, row, col);
    if !table.universe.contains(key) {
        return Err(Error::Dimension(format!(
            "generator {} is outside the universe of {}",
            DiffPoly::gen(key),
            table.name
        )));
    }
    Ok(key)
}

fn cmd_bracket(args: BracketArgs) -> CmdResult {
    let set = by_name_with(&args.name, args.cross_check)?;
    let table = select_table(&set, args.table.as_deref(), args.pencil)?;
    let i = generator_key(&table, args.i, &args.ab, "ab")?;
    let j = generator_key(&table, args.j, &args.cd, "cd")?;
    let entry = table.entry(i, j)?;
    match args.format {
        FormatArg::Json => emit(entry.to_json().to_string()),
        fmt => {
            let mut nm = Namer::for_structure(&args.name);
            if table.universe.m > 1 {
                nm = nm.matrix();
            }
            emit(render::lambda_value(&entry, &nm, fmt.render()));
        }
    }
    Ok(0)
}

fn select_table(
    set: &StructureSet,
    table: Option<&str>,
    pencil: bool,
) -> Result<PVAStructure, Error> {
    if pencil {
        if table.is_some() {
            return Err(Error::Parse("--pencil and --structure are mutually exclusive".into()));
        }
        return set.pencil();
    }
    match table.map(str::to_ascii_uppercase).as_deref() {
        None | Some("H") | Some("HD") => Ok(set.h.clone()),
        Some("K") => set
            .k
            .clone()
            .ok_or_else(|| Error::UnknownStructure(format!("{} has no linear table", set.name))),
        Some(other) => {
            Err(Error::UnknownStructure(format!("unknown table {other}; use H or K")))
        }
    }
}

fn cmd_verify(args: VerifyArgs) -> CmdResult {
    let set = by_name_with(&args.name, args.cross_check)?;
    let mut wants = BTreeMap::new();
    for c in args.checks.split(',') {
        let c = c.trim().to_ascii_lowercase();
        if !matches!(c.as_str(), "skew" | "jacobi" | "compat") {
            return Err(Error::Parse(format!(
                "unknown check {c:?}; available: skew, jacobi, compat"
            )));
        }
        wants.insert(c, true);
    }
    let opts = VerifyOptions {
        index_bound: if set.h.universe.is_finite() {
            None
        } else {
            Some(set.h.universe.set.lo() + 3)
        },
        skew_only: !wants.contains_key("jacobi"),
    };

    // The Jacobi and compatibility sweeps are only defined for local tables
    // in this artifact; asking for them on a nonlocal table is a usage
    // error, not a failed verification.
    let needs_local = wants.contains_key("jacobi") || wants.contains_key("compat");
    if needs_local && set.h.universe.is_finite() && !set.h.is_local()? {
        return Err(Error::Unsupported(format!(
            "{} has nonlocal bracket entries; the Jacobi sweep is only \
             defined for local tables (request --checks skew instead)",
            set.name
        )));
    }

    let mut report = VerifyReport::default();
    if wants.contains_key("skew") || wants.contains_key("jacobi") {
        let r = verify_structure(&set.h, opts)?;
        report
            .results
            .extend(r.results.into_iter().filter(|c| wants.contains_key(c.check.as_str())));
    }
    if wants.contains_key("compat") {
        let k = set.k.as_ref().ok_or_else(|| {
            Error::UnknownStructure(format!(
                "{} has no linear table, so there is no pencil to test",
                set.name
            ))
        })?;
        let r = verify_compat(&set.h, k, opts)?;
        report.results.extend(r.results.into_iter().filter(|c| c.check == "compat"));
    }

    if args.format == FormatArg::Json {
        emit(report.to_json().to_string());
    } else {
        let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for r in &report.results {
            let e = counts.entry(r.check.as_str()).or_default();
            e.0 += 1;
            if !r.ok() {
                e.1 += 1;
            }
        }
        for (check, (total, failed)) in &counts {
            if *failed == 0 {
                emit(format!("{check}: {total} residuals, all zero"));
            } else {
                emit(format!("{check}: {failed} of {total} residuals nonzero"));
            }
        }
        for r in report.failures() {
            emit(format!(
                "FAIL {} {}: {}",
                r.check,
                r.indices,
                r.residual.as_deref().unwrap_or("")
            ));
        }
    }
    Ok(if report.all_ok() { 0 } else { 1 })
}

fn hierarchy_spec(name: &str, floor: Option<i64>) -> Result<HierarchySpec, Error> {
    let (ctx, reduced) = adler_by_name(name)?.ok_or_else(|| {
        Error::UnknownStructure(format!(
            "{name} is not an Adler-type structure, so it has no hierarchy"
        ))
    })?;
    let mut spec = HierarchySpec::new(ctx, reduced)?;
    if let Some(floor) = floor {
        spec = spec.with_policy(TruncationPolicy::with_floor(floor));
    }
    Ok(spec)
}

fn cmd_hierarchy(args: HierarchyArgs) -> CmdResult {
    let spec = hierarchy_spec(&args.name, args.floor)?;
    let eq = match args.route.to_ascii_lowercase().as_str() {
        "lax" => spec.lax_flow(args.k)?,
        "h" => spec.bracket_flow(StructureChoice::H, args.k)?,
        "hd" => spec.bracket_flow(StructureChoice::HDirac, args.k)?,
        "k" => spec.bracket_flow(StructureChoice::K, args.k)?,
        other => {
            return Err(Error::Parse(format!(
                "unknown route {other:?}; use lax, h, hd, or k"
            )))
        }
    };
    if args.cross_check {
        let other = spec.bracket_flow(StructureChoice::HDirac, args.k)?;
        let diff = flow_difference(&eq, &other);
        if !diff.is_empty() {
            let witness = diff.keys().next().cloned();
            return Err(Error::CrossCheck(format!(
                "the requested route and the bracket route disagree at {}",
                witness.map(|w| DiffPoly::gen(w).to_string()).unwrap_or_default()
            )));
        }
    }
    if args.format == FormatArg::Json {
        emit(eq.to_json().to_string());
    } else {
        let mut nm = Namer::for_structure(&args.name);
        if spec.ctx().dim() > 1 {
            nm = nm.matrix();
        }
        for line in render::flow_lines(&eq, &nm, args.format.render()) {
            emit(line);
        }
    }
    Ok(0)
}

fn cmd_densities(args: DensitiesArgs) -> CmdResult {
    let spec = hierarchy_spec(&args.name, args.floor)?;
    let kmax = args.kmax.unwrap_or_else(|| spec.k_max());
    let mut nm = Namer::for_structure(&args.name);
    if spec.ctx().dim() > 1 {
        nm = nm.matrix();
    }
    let mut rows = Vec::new();
    for k in 1..=kmax {
        rows.push((k, spec.density(k)?));
    }
    if args.format == FormatArg::Json {
        let list: Vec<serde_json::Value> = rows
            .iter()
            .map(|(k, h)| serde_json::json!({ "k": k, "density": h.to_json() }))
            .collect();
        emit(serde_json::Value::Array(list).to_string());
    } else {
        for (k, h) in &rows {
            emit(format!("h{k} = {}", render::functional(h, &nm, args.format.render())));
        }
    }
    Ok(0)
}

fn cmd_miura(args: MiuraArgs) -> CmdResult {
    let map: MiuraMap = if args.m > 1 {
        if args.reduced {
            return Err(Error::Unsupported(
                "the reduced factorization is implemented for scalar coefficients".into(),
            ));
        }
        matrix_miura(args.n, args.m)?
    } else if args.reduced {
        dirac_miura(args.n)?
    } else {
        miura_image(args.n)?
    };
    if args.format == FormatArg::Json {
        emit(map.to_json().to_string());
        return Ok(0);
    }
    let mut nm = if args.reduced {
        Namer::for_structure(&format!("w{}", args.n))
    } else {
        Namer::for_structure(&format!("v{}", args.n))
    };
    if args.m > 1 {
        nm = nm.matrix();
    }
    // A single surviving field gets the classical letter.
    if map.target().universe.gens()?.len() == 1 {
        nm.insert(map.target().universe.gens()?[0], "v");
    }
    for (key, img) in map.images() {
        emit(format!(
            "{} = {}",
            nm.base(*key, args.format.render()),
            render::poly(img, &nm, args.format.render())
        ));
    }
    Ok(0)
}

fn cmd_report(args: ReportArgs) -> CmdResult {
    let set = by_name_with(&args.name, false)?;
    let universe = set.h.universe;
    let gens = if universe.is_finite() {
        universe.gens()?
    } else {
        universe.gens_bounded(universe.set.lo() + 3)
    };
    let mut nm = Namer::for_structure(&args.name);
    if universe.m > 1 {
        nm = nm.matrix();
    }

    let conformal = adler_by_name(&args.name)?.and_then(|(ctx, reduced)| {
        if !reduced || !universe.is_finite() {
            return None;
        }
        let mut energy = DiffPoly::zero();
        for a in 0..ctx.dim() as u8 {
            energy += &DiffPoly::gen(VarKey::u_at(-(ctx.order() as i32) + 1, a, a));
        }
        virasoro_report(&set.h, &energy).ok()
    });

    if args.format == FormatArg::Json {
        let mut obj = serde_json::Map::new();
        obj.insert("structure".into(), serde_json::json!(set.name));
        obj.insert(
            "generators".into(),
            serde_json::json!(gens
                .iter()
                .map(|g| nm.base(*g, Format::Text))
                .collect::<Vec<_>>()),
        );
        obj.insert("local".into(), serde_json::json!(universe.is_finite() && set.h.is_local()?));
        if let Some(rep) = &conformal {
            obj.insert("central_charge".into(), serde_json::json!(rep.central_charge.to_string()));
            let weights: serde_json::Map<String, serde_json::Value> = rep
                .weights
                .iter()
                .map(|(g, w)| (nm.base(*g, Format::Text), serde_json::json!(w.to_string())))
                .collect();
            obj.insert("weights".into(), serde_json::Value::Object(weights));
        }
        emit(serde_json::Value::Object(obj).to_string());
        return Ok(0);
    }

    let fmt = args.format.render();
    emit(format!("structure: {}", set.name));
    emit(format!(
        "generators: {}",
        gens.iter().map(|g| nm.base(*g, fmt)).collect::<Vec<_>>().join(", ")
    ));
    if !universe.is_finite() {
        emit(format!("note: infinite family, listing indices up to {}", universe.set.lo() + 3));
    }
    match &conformal {
        Some(rep) => {
            emit(format!("central charge: {}", render::rational(&rep.central_charge, fmt)));
            for (g, w) in &rep.weights {
                emit(format!("weight {}: {}", nm.base(*g, fmt), render::rational(w, fmt)));
            }
        }
        None => emit("conformal data: not certified for this structure"),
    }
    Ok(0)
}
