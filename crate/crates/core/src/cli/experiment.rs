//! Declarative audit grids: applications × generators × honesty.

use std::path::{Path, PathBuf};

use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{write_json, AuditOutput, DomainArgs, Invocation};
use crate::audit::{audit_with_space, dump_test_distributions, AuditConfig, Verdict};
use crate::dataset::{ingest_csv, realize_dataset, Attribute, Dataset, IngestConfig, Schema, ThetaVector};
use crate::error::{Error, Result};
use crate::extremal::StartMode;
use crate::generators::{make_card, GeneratorConfig};
use crate::seed;
use crate::space::{build_safespace_with_cap, Workload};

/// Records drawn from a random distribution, for runs without real data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSource {
    pub n: u64,
    pub seed: u64,
    /// Dirichlet concentration per cell; larger is closer to uniform.
    #[serde(default = "one")]
    pub concentration: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Application {
    pub name: String,
    pub schema: Vec<Attribute>,
    pub workload: Vec<Vec<String>>,
    /// CSV path relative to the manifest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSource>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorEntry {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub honest: Option<GeneratorConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dishonest: Option<GeneratorConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    #[serde(default)]
    pub audit: AuditConfig,
    pub applications: Vec<Application>,
    pub generators: Vec<GeneratorEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub application: String,
    pub generator: String,
    pub honesty: String,
    pub seed: u64,
    pub p_value: Option<f64>,
    pub verdict: Option<Verdict>,
    pub report: Option<PathBuf>,
    pub error: Option<String>,
}

struct Cell<'a> {
    app: usize,
    gen: &'a GeneratorEntry,
    gen_index: usize,
    honesty: &'static str,
    config: &'a GeneratorConfig,
}

fn dirichlet_theta(schema: Schema, src: &SyntheticSource) -> Result<ThetaVector> {
    let g = Gamma::new(src.concentration, 1.0)
        .map_err(|e| Error::InvalidConfig(format!("concentration {}: {e}", src.concentration)))?;
    let mut rng = seed::rng(seed::derive(src.seed, &[0]));
    let vals: Vec<f64> = (0..schema.total_cells()).map(|_| g.sample(&mut rng)).collect();
    let s: f64 = vals.iter().sum();
    ThetaVector::new(schema, vals.into_iter().map(|v| v / s).collect())
}

fn load_application(app: &Application, base: &Path, domain: &DomainArgs) -> Result<(Dataset, Workload)> {
    let schema = Schema::new(app.schema.clone())?;
    schema.check_cap(domain.max_cells)?;
    let w = Workload::from_names(schema.clone(), app.workload.clone())?;
    let data = match (&app.data, &app.synthetic) {
        (Some(p), None) => ingest_csv(&base.join(p), &schema, &IngestConfig::from_schema(&schema))?,
        (None, Some(src)) => realize_dataset(&dirichlet_theta(schema, src)?, src.n, src.seed)?,
        _ => {
            return Err(Error::InvalidConfig(format!(
                "application {:?} needs exactly one of data or synthetic",
                app.name
            )))
        }
    };
    Ok((data, w))
}

fn file_stem(c: &Cell, app: &str) -> String {
    let clean = |s: &str| -> String {
        s.chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
            .collect()
    };
    format!("{}__{}__{}", clean(app), clean(&c.gen.name), c.honesty)
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    c: &Cell,
    app: &Application,
    loaded: &Result<(Dataset, Workload)>,
    cell_seed: u64,
    manifest: &Manifest,
    out: &Path,
    domain: &DomainArgs,
) -> Result<(AuditOutput, PathBuf)> {
    let (data, w) = loaded.as_ref().map_err(|e| Error::InvalidConfig(format!("application {:?}: {e}", app.name)))?;
    let ss = build_safespace_with_cap(w, domain.basis_cap)?;
    let card = make_card(data, &ss, c.config)?;
    let cfg = AuditConfig {
        direction_seed: cell_seed,
        basis_cap: domain.basis_cap,
        ..manifest.audit.clone()
    };
    let start = (cfg.start_mode == Some(StartMode::FromDataset)).then_some(data);
    let report = audit_with_space(&card, &ss, c.config, start, &cfg)?;
    let stem = file_stem(c, &app.name);
    let cells = out.join("cells");
    std::fs::create_dir_all(&cells).map_err(|e| Error::io(&cells, e))?;
    dump_test_distributions(&report, &cells.join(format!("{stem}.samples.csv")))?;
    let mut card_out = card.clone();
    card_out.metadata.insert("seed".into(), cell_seed.to_string());
    write_json(&cells.join(format!("{stem}.card.json")), &card_out)?;
    let flags = serde_json::json!({
        "application": app.name,
        "generator": c.gen.name,
        "honesty": c.honesty,
        "seed": cell_seed,
        "max_cells": domain.max_cells,
        "basis_cap": domain.basis_cap,
    });
    let output = AuditOutput {
        invocation: Invocation {
            tool_version: crate::VERSION.into(),
            command: "experiment-cell".into(),
            flags,
        },
        report,
    };
    let rel = PathBuf::from("cells").join(format!("{stem}.json"));
    write_json(&out.join(&rel), &output)?;
    Ok((output, rel))
}

/// Runs every grid cell (in the ambient rayon pool) and writes per-cell
/// reports plus `summary.csv` under `out`.
pub fn run_experiment(manifest: &Manifest, base: &Path, out: &Path, domain: &DomainArgs) -> Result<Vec<CellResult>> {
    manifest.audit.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let loaded: Vec<Result<(Dataset, Workload)>> = manifest
        .applications
        .iter()
        .map(|a| load_application(a, base, domain))
        .collect();
    let mut cells = Vec::new();
    for app in 0..manifest.applications.len() {
        for (gi, g) in manifest.generators.iter().enumerate() {
            for (honesty, cfg) in [("honest", &g.honest), ("dishonest", &g.dishonest)] {
                if let Some(config) = cfg {
                    cells.push(Cell { app, gen: g, gen_index: gi, honesty, config });
                }
            }
        }
    }
    let results: Vec<CellResult> = cells
        .par_iter()
        .map(|c| {
            let app = &manifest.applications[c.app];
            let h = u64::from(c.honesty == "dishonest");
            let cell_seed = seed::derive(manifest.seed, &[c.app as u64, c.gen_index as u64, h]);
            let mut r = CellResult {
                application: app.name.clone(),
                generator: c.gen.name.clone(),
                honesty: c.honesty.into(),
                seed: cell_seed,
                p_value: None,
                verdict: None,
                report: None,
                error: None,
            };
            match run_cell(c, app, &loaded[c.app], cell_seed, manifest, out, domain) {
                Ok((o, path)) => {
                    r.p_value = Some(o.report.p_value);
                    r.verdict = Some(o.report.verdict);
                    r.report = Some(path);
                }
                Err(e) => r.error = Some(e.to_string()),
            }
            r
        })
        .collect();
    let path = out.join("summary.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["generator", "honesty", "application", "p_value", "verdict"])?;
    for r in &results {
        let verdict = match (&r.verdict, &r.error) {
            (Some(Verdict::ViolationDetected), _) => "violation-detected",
            (Some(Verdict::NoEvidence), _) => "no-evidence",
            _ => "error",
        };
        let p = r.p_value.map(|p| format!("{p:e}")).unwrap_or_default();
        w.write_record([r.generator.as_str(), &r.honesty, &r.application, &p, verdict])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(results)
}
