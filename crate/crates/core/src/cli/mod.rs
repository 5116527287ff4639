//! Command-line front end.
//!
//! Exit codes: 0 no evidence of violation (or success), 3 violation detected,
//! 1 error.

mod experiment;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

pub use experiment::{run_experiment, Manifest};

use crate::audit::{audit_with_space, dump_test_distributions, AuditConfig, AuditReport};
use crate::dataset::{ingest_csv, write_csv, Attribute, Dataset, IngestConfig, Schema, UnknownPolicy};
use crate::error::{Error, Result};
use crate::extremal::StartMode;
use crate::generators::{generate, make_card, train, BlackboxSpec, GeneratorCard, GeneratorConfig, GeneratorKind};
use crate::seed;
use crate::space::{
    build_safespace_with_cap, sample_perp_subspace_with_cap, MarginalSpec, SafeSpace, Workload, DEFAULT_BASIS_CAP,
};
use crate::utility::{utility_report, DerivedKind, DerivedStatSpec, UtilityReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_VIOLATION: i32 = 3;

pub const DEFAULT_MAX_CELLS: usize = 10_000_000;

#[derive(Debug, Parser)]
#[command(name = "safesynth", version, about = "Marginal-based synthetic data with auditable safe statistics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a generator on the declared workload, write synthetic records and a card.
    Generate(GenerateArgs),
    /// Audit a generator against a card.
    Audit(AuditArgs),
    /// Compare real and synthetic data.
    Utility(UtilityArgs),
    /// Run an audit grid described by a manifest.
    Experiment(ExperimentArgs),
    /// Summarize a card.
    InspectCard(InspectArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DomainArgs {
    /// Refuse schemas with more cells than this.
    #[arg(long, default_value_t = DEFAULT_MAX_CELLS)]
    pub max_cells: usize,
    /// Largest domain for which the full complement basis is built.
    #[arg(long, default_value_t = DEFAULT_BASIS_CAP)]
    pub basis_cap: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenerateArgs {
    /// JSON list of {name, cardinality, values?}.
    #[arg(long)]
    pub schema: PathBuf,
    /// JSON list of attribute-name lists.
    #[arg(long)]
    pub workload: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Number of synthetic records.
    #[arg(long)]
    pub n: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for `synthetic.csv` and `card.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Generator configuration JSON; honest IPF when omitted.
    #[arg(long)]
    pub generator: Option<PathBuf>,
    /// Drop data rows with unmapped values instead of failing.
    #[arg(long)]
    pub drop_unknown: bool,
    /// Sample this many complement directions from wider probe marginals
    /// instead of building the full complement basis.
    #[arg(long)]
    pub perp_count: Option<usize>,
    #[arg(long)]
    pub purpose: Option<String>,
    #[command(flatten)]
    pub domain: DomainArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AuditArgs {
    #[arg(long)]
    pub card: PathBuf,
    /// Generator kind to audit.
    #[arg(long, value_parser = ["ipf", "ipf-dishonest", "empirical", "blackbox"], conflicts_with = "generator_config")]
    pub generator: Option<String>,
    /// Generator configuration JSON.
    #[arg(long)]
    pub generator_config: Option<PathBuf>,
    /// Executable for the blackbox generator.
    #[arg(long)]
    pub command: Option<PathBuf>,
    /// Starting dataset; the maximum-entropy distribution is used otherwise.
    #[arg(long)]
    pub start: Option<PathBuf>,
    #[arg(long, value_parser = ["max-entropy", "from-dataset"])]
    pub start_mode: Option<String>,
    #[arg(long, default_value_t = 10)]
    pub k1: usize,
    #[arg(long, default_value_t = 10)]
    pub k2: usize,
    #[arg(long, default_value_t = 100_000)]
    pub n_sym: u64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub retries: usize,
    #[arg(long, default_value_t = 1)]
    pub probes: usize,
    /// Report JSON path.
    #[arg(long)]
    pub out: PathBuf,
    /// CSV of the final test statistics per side.
    #[arg(long)]
    pub dump: Option<PathBuf>,
    #[command(flatten)]
    pub domain: DomainArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct UtilityArgs {
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long)]
    pub real: PathBuf,
    #[arg(long)]
    pub sym: PathBuf,
    /// Marginal as comma-separated attribute names; repeatable.
    #[arg(long = "marginal")]
    pub marginals: Vec<String>,
    /// Add every marginal of this width.
    #[arg(long)]
    pub k_way: Option<usize>,
    /// `NAME:GROUP:SPLIT[:ATTR=INDEX]`; repeatable.
    #[arg(long = "gap")]
    pub gaps: Vec<String>,
    /// Report JSON path.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional flat CSV, one metric per row.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub domain: DomainArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Concurrent grid cells.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub domain: DomainArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InspectArgs {
    #[arg(long)]
    pub card: PathBuf,
    /// Rebuild the safe space and check the card's fingerprints.
    #[arg(long)]
    pub verify: bool,
    /// Print JSON instead of text.
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub domain: DomainArgs,
}

/// Provenance stamped into every file the CLI writes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Invocation {
    pub tool_version: String,
    pub command: String,
    pub flags: serde_json::Value,
}

impl Invocation {
    pub fn new<A: Serialize>(command: &str, args: &A) -> Self {
        Invocation {
            tool_version: crate::VERSION.into(),
            command: command.into(),
            flags: serde_json::to_value(args).expect("serializable flags"),
        }
    }
}

/// Report wrapper for subcommands whose payload type carries no provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub invocation: Invocation,
    pub report: T,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl<T> Envelope<T> {
    pub fn new(invocation: Invocation, report: T) -> Self {
        Envelope {
            invocation,
            report,
            metadata: [("created_at".to_string(), chrono::Utc::now().to_rfc3339())].into(),
        }
    }
}

/// Audit report as written by the CLI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditOutput {
    pub invocation: Invocation,
    #[serde(flatten)]
    pub report: AuditReport,
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_schema(path: &Path, max_cells: usize) -> Result<Schema> {
    let attrs: Vec<Attribute> = read_json(path)?;
    let schema = Schema::new(attrs)?;
    schema.check_cap(max_cells)?;
    Ok(schema)
}

pub fn load_workload(path: &Path, schema: &Schema) -> Result<Workload> {
    let names: Vec<Vec<String>> = read_json(path)?;
    Workload::from_names(schema.clone(), names)
}

fn load_data(path: &Path, schema: &Schema, drop_unknown: bool) -> Result<Dataset> {
    let mut cfg = IngestConfig::from_schema(schema);
    if drop_unknown {
        cfg.unknown_policy = UnknownPolicy::DropRow;
    }
    ingest_csv(path, schema, &cfg)
}

/// Every attribute subset one wider than the workload's widest marginal.
fn wider_probes(w: &Workload) -> Vec<MarginalSpec> {
    let names: Vec<&str> = w.schema().attributes().iter().map(|a| a.name.as_str()).collect();
    let k = (w.max_width() + 1).min(names.len());
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(MarginalSpec::new(idx.iter().map(|&i| names[i])));
        let Some(pos) = (0..k).rev().find(|&i| idx[i] != i + names.len() - k) else {
            break;
        };
        idx[pos] += 1;
        for j in pos + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
    out
}

pub fn safespace_for(w: &Workload, perp_count: Option<usize>, seed: u64, domain: &DomainArgs) -> Result<SafeSpace> {
    w.schema().check_cap(domain.max_cells)?;
    match perp_count {
        None => build_safespace_with_cap(w, domain.basis_cap),
        Some(count) => sample_perp_subspace_with_cap(w, &wider_probes(w), count, seed, domain.max_cells),
    }
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<i32> {
    let schema = load_schema(&args.schema, args.domain.max_cells)?;
    let w = load_workload(&args.workload, &schema)?;
    let data = load_data(&args.data, &schema, args.drop_unknown)?;
    let config = match &args.generator {
        Some(p) => read_json(p)?,
        None => GeneratorConfig::ipf(),
    };
    config.validate()?;
    if args.n == 0 {
        return Err(Error::EmptyRequest);
    }
    let ss = safespace_for(&w, args.perp_count, seed::derive(args.seed, &[0]), &args.domain)?;
    let model = train(&config, &data, &ss, seed::derive(args.seed, &[1]))?;
    let sym = generate(&model, args.n, seed::derive(args.seed, &[2]))?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    write_csv(&sym, &args.out.join("synthetic.csv"))?;
    let mut card = make_card(&data, &ss, &config)?;
    if let Some(p) = &args.purpose {
        card = card.with_purpose(p.clone());
    }
    let inv = Invocation::new("generate", args);
    card.metadata.insert("invocation".into(), serde_json::to_string(&inv)?);
    card.metadata.insert("seed".into(), args.seed.to_string());
    let card_path = args.out.join("card.json");
    std::fs::write(&card_path, card.to_json() + "\n").map_err(|e| Error::io(&card_path, e))?;
    eprintln!(
        "wrote {} synthetic records and card {} ({} safe statistics, complement dimension {})",
        sym.len(),
        card.fingerprint(),
        ss.dim_phi(),
        ss.dim_perp()
    );
    Ok(EXIT_OK)
}

pub fn load_card(path: &Path) -> Result<GeneratorCard> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    GeneratorCard::from_json(&text)
}

fn audit_generator(args: &AuditArgs, card: &GeneratorCard) -> Result<GeneratorConfig> {
    let mut cfg = match (&args.generator, &args.generator_config) {
        (_, Some(p)) => read_json::<GeneratorConfig>(p)?,
        (Some(kind), None) => match kind.as_str() {
            "ipf" => GeneratorConfig::ipf(),
            "ipf-dishonest" => GeneratorConfig::ipf_dishonest(None),
            "empirical" => GeneratorConfig::empirical(),
            "blackbox" => GeneratorConfig::blackbox(BlackboxSpec::new(
                args.command
                    .clone()
                    .ok_or_else(|| Error::InvalidConfig("--generator blackbox needs --command".into()))?,
            )),
            other => return Err(Error::InvalidConfig(format!("unknown generator {other:?}"))),
        },
        (None, None) => card.generator.to_config()?,
    };
    if cfg.kind == GeneratorKind::Blackbox && cfg.blackbox.is_none() {
        if let Some(c) = &args.command {
            cfg.blackbox = Some(BlackboxSpec::new(c.clone()));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn audit_config(args: &AuditArgs) -> AuditConfig {
    AuditConfig {
        k1: args.k1,
        k2: args.k2,
        n_sym: args.n_sym,
        alpha_level: args.alpha,
        direction_seed: args.seed,
        retries: args.retries,
        probes: args.probes,
        start_mode: args.start_mode.as_deref().map(|m| match m {
            "from-dataset" => StartMode::FromDataset,
            _ => StartMode::MaxEntropy,
        }),
        basis_cap: args.domain.basis_cap,
    }
}

pub fn cmd_audit(args: &AuditArgs) -> Result<i32> {
    let card = load_card(&args.card)?;
    card.schema.check_cap(args.domain.max_cells)?;
    let ss = card.safespace(args.domain.basis_cap)?;
    let gen = audit_generator(args, &card)?;
    let start = match &args.start {
        Some(p) => Some(load_data(p, &card.schema, false)?),
        None => None,
    };
    let report = audit_with_space(&card, &ss, &gen, start.as_ref(), &audit_config(args))?;
    if let Some(p) = &args.dump {
        dump_test_distributions(&report, p)?;
    }
    let code = report.exit_code();
    eprintln!("{}", report.summary);
    let out = AuditOutput {
        invocation: Invocation::new("audit", args),
        report,
    };
    write_json(&args.out, &out)?;
    Ok(code)
}

fn parse_gap(s: &str) -> Result<DerivedStatSpec> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || Error::InvalidConfig(format!("gap spec {s:?} is not NAME:GROUP:SPLIT[:ATTR=INDEX]"));
    if !(3..=4).contains(&parts.len()) || parts[..3].iter().any(|p| p.is_empty()) {
        return Err(bad());
    }
    let condition = match parts.get(3) {
        Some(c) => {
            let (a, v) = c.split_once('=').ok_or_else(bad)?;
            Some((a.to_string(), v.parse().map_err(|_| bad())?))
        }
        None => None,
    };
    Ok(DerivedStatSpec {
        name: parts[0].into(),
        kind: DerivedKind::Gap,
        group_attr: parts[1].into(),
        split_attr: parts[2].into(),
        condition,
    })
}

pub fn cmd_utility(args: &UtilityArgs) -> Result<i32> {
    let schema = load_schema(&args.schema, args.domain.max_cells)?;
    let real = load_data(&args.real, &schema, false)?;
    let sym = load_data(&args.sym, &schema, false)?;
    let mut marginals: Vec<MarginalSpec> = args
        .marginals
        .iter()
        .map(|m| MarginalSpec::new(m.split(',').map(str::trim)))
        .collect();
    if let Some(k) = args.k_way {
        let names: Vec<&str> = schema.attributes().iter().map(|a| a.name.as_str()).collect();
        marginals.extend(Workload::all_k_way(schema.clone(), &names, k)?.specs());
    }
    let derived = args.gaps.iter().map(|g| parse_gap(g)).collect::<Result<Vec<_>>>()?;
    let report: UtilityReport = utility_report(&real, &sym, &marginals, &derived)?;
    if let Some(p) = &args.csv {
        report.write_csv(p)?;
    }
    write_json(&args.out, &Envelope::new(Invocation::new("utility", args), report))?;
    Ok(EXIT_OK)
}

pub fn cmd_experiment(args: &ExperimentArgs) -> Result<i32> {
    if args.jobs == 0 {
        return Err(Error::InvalidConfig("--jobs must be positive".into()));
    }
    let manifest: Manifest = read_json(&args.manifest)?;
    let base = args.manifest.parent().unwrap_or(Path::new("."));
    let summary = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
        .install(|| run_experiment(&manifest, base, &args.out, &args.domain))?;
    write_json(
        &args.out.join("summary.json"),
        &Envelope::new(Invocation::new("experiment", args), &summary),
    )?;
    let failed = summary.iter().filter(|c| c.error.is_some()).count();
    eprintln!("{} cells, {failed} failed", summary.len());
    Ok(if failed > 0 { EXIT_ERROR } else { EXIT_OK })
}

#[derive(Clone, Debug, Serialize)]
struct CardSummary<'a> {
    card_fingerprint: String,
    safespace_fingerprint: &'a str,
    schema: &'a Schema,
    workload: &'a [Vec<String>],
    n_safe_statistics: usize,
    sampled_complement: bool,
    generator: &'a crate::generators::CardGenerator,
    metadata: &'a BTreeMap<String, String>,
    verified: Option<bool>,
    dim_phi: Option<usize>,
    dim_perp: Option<usize>,
}

pub fn cmd_inspect(args: &InspectArgs) -> Result<i32> {
    let card = load_card(&args.card)?;
    let mut s = CardSummary {
        card_fingerprint: card.fingerprint(),
        safespace_fingerprint: &card.safespace_fingerprint,
        schema: &card.schema,
        workload: &card.workload,
        n_safe_statistics: card.psi.len(),
        sampled_complement: card.perp_sampling.is_some(),
        generator: &card.generator,
        metadata: &card.metadata,
        verified: None,
        dim_phi: None,
        dim_perp: None,
    };
    if args.verify {
        card.schema.check_cap(args.domain.max_cells)?;
        let ss = card.safespace(args.domain.basis_cap)?;
        s.verified = Some(true);
        s.dim_phi = Some(ss.dim_phi());
        s.dim_perp = Some(ss.dim_perp());
    }
    if args.json {
        println!("{}", serde_json::to_string_pretty(&s)?);
    } else {
        println!("card         {}", s.card_fingerprint);
        println!("safe space   {}", s.safespace_fingerprint);
        let attrs: Vec<String> = card
            .schema
            .attributes()
            .iter()
            .map(|a| format!("{}({})", a.name, a.cardinality))
            .collect();
        println!("schema       {}", attrs.join(" "));
        let w: Vec<String> = card.workload.iter().map(|m| format!("[{}]", m.join(","))).collect();
        println!("workload     {}", w.join(" "));
        println!("statistics   {}", s.n_safe_statistics);
        println!("generator    {}", card.generator.kind);
        if let (Some(p), Some(q)) = (s.dim_phi, s.dim_perp) {
            println!("verified     dim safe {p}, dim complement {q}");
        }
        for (k, v) in &card.metadata {
            if k != "invocation" {
                println!("{k:<12} {v}");
            }
        }
    }
    Ok(EXIT_OK)
}

pub fn run(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Audit(a) => cmd_audit(a),
        Command::Utility(a) => cmd_utility(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::InspectCard(a) => cmd_inspect(a),
    }
}
