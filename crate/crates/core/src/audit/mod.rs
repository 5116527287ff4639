//! Practical audit of a generator card.
//!
//! Steps: (i) extremal pair along a random complement direction; (ii) K1
//! synthetic datasets per side; (iii) per-coordinate variation coefficients and
//! the critical direction; (iv) extremal pair along it; (v) K2 fresh synthetic
//! datasets per side; (vi) Welch t-test on the projections of the two sides.
//!
//! Rejection is evidence that the generator uses statistics outside the safe
//! space. Non-rejection only means no such evidence was found.

mod ttest;

pub use ttest::{ln_gamma, reg_inc_beta, students_t_two_sided, two_sample_t_test, TTest};

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{realize_counts, theta_of_dataset, Dataset, ThetaVector};
use crate::error::{Error, Result};
use crate::extremal::{extremal_pair, random_direction, starting_theta, Direction, ExtremalPair, StartMode};
use crate::generators::{CardGenerator, Generator, GeneratorCard};
use crate::seed;
use crate::space::{SafeSpace, DEFAULT_BASIS_CAP};

fn default_k() -> usize {
    10
}
fn default_n() -> u64 {
    100_000
}
fn default_alpha() -> f64 {
    0.05
}
fn default_retries() -> usize {
    5
}
fn default_probes() -> usize {
    1
}
fn default_cap() -> usize {
    DEFAULT_BASIS_CAP
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    #[serde(default = "default_k")]
    pub k1: usize,
    #[serde(default = "default_k")]
    pub k2: usize,
    #[serde(default = "default_n")]
    pub n_sym: u64,
    #[serde(default = "default_alpha")]
    pub alpha_level: f64,
    #[serde(default)]
    pub direction_seed: u64,
    #[serde(default = "default_retries")]
    pub retries: usize,
    /// Step-1 probe directions whose coefficient estimates are averaged.
    #[serde(default = "default_probes")]
    pub probes: usize,
    /// Starting distribution; by default the supplied dataset if any, else
    /// the maximum-entropy distribution matching the card.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_mode: Option<StartMode>,
    #[serde(default = "default_cap")]
    pub basis_cap: usize,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            k1: default_k(),
            k2: default_k(),
            n_sym: default_n(),
            alpha_level: default_alpha(),
            direction_seed: 0,
            retries: default_retries(),
            probes: default_probes(),
            start_mode: None,
            basis_cap: default_cap(),
        }
    }
}

impl AuditConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k1 < 2 || self.k2 < 2 {
            return Err(Error::InvalidConfig("K1 and K2 must be at least 2".into()));
        }
        if self.n_sym == 0 {
            return Err(Error::InvalidConfig("n_sym must be positive".into()));
        }
        if !(self.alpha_level > 0.0 && self.alpha_level < 1.0) {
            return Err(Error::InvalidConfig("alpha_level must lie in (0, 1)".into()));
        }
        if self.probes == 0 {
            return Err(Error::InvalidConfig("at least one probe direction".into()));
        }
        Ok(())
    }
}

/// Per-coordinate regression estimates from one or more probe pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientEstimate {
    pub a_hat: Vec<f64>,
    pub probe_direction: Direction,
    /// `s_plus - s_minus` of the (first) probe pair.
    pub s_span: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    Plus,
    Minus,
}

/// One synthetic dataset's projection onto a direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestStatSample {
    pub value: f64,
    pub run_index: usize,
    pub side: Side,
    pub train_seed: u64,
    pub sample_seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    ViolationDetected,
    NoEvidence,
}

/// What happened in one extremal step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairLog {
    pub direction_seed: Option<u64>,
    pub alpha_plus: f64,
    pub alpha_minus: f64,
    /// Largest marginal gap introduced by rendering the pair as records for a
    /// record-consuming generator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub realization_deviation: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditLog {
    pub start_mode: Option<StartMode>,
    pub degenerate_direction_seeds: Vec<u64>,
    pub probe_pairs: Vec<PairLog>,
    /// Projections of step-1 datasets on their probe direction.
    pub probe_samples: Vec<TestStatSample>,
    pub critical_pair: Option<PairLog>,
    pub test_samples: Vec<TestStatSample>,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub tool_version: String,
    pub card_fingerprint: String,
    pub safespace_fingerprint: String,
    pub generator: CardGenerator,
    pub config: AuditConfig,
    pub dim_perp: usize,
    pub coefficient: Option<CoefficientEstimate>,
    pub beta_star: Option<Direction>,
    pub samples_plus: Vec<f64>,
    pub samples_minus: Vec<f64>,
    pub t_statistic: f64,
    pub degrees_of_freedom: Option<f64>,
    pub p_value: f64,
    pub verdict: Verdict,
    pub summary: String,
    pub log: AuditLog,
    /// Timestamps and other run-dependent provenance.
    #[serde(default)]
    pub metadata: std::collections::BTreeMap<String, String>,
}

impl AuditReport {
    pub fn exit_code(&self) -> i32 {
        match self.verdict {
            Verdict::NoEvidence => 0,
            Verdict::ViolationDetected => 3,
        }
    }

    /// Pretty JSON with `metadata` cleared, for byte comparisons.
    pub fn canonical_json(&self) -> String {
        let mut c = self.clone();
        c.metadata.clear();
        serde_json::to_string_pretty(&c).expect("serializable report")
    }
}

/// `beta^T theta(d)`.
pub fn g_stat(beta: &Direction, d: &Dataset) -> Result<f64> {
    let t = theta_of_dataset(d)?;
    if beta.beta.len() != t.values().len() {
        return Err(Error::SchemaMismatch(format!(
            "direction has {} cells, dataset schema has {}",
            beta.beta.len(),
            t.values().len()
        )));
    }
    Ok(t.dot(&beta.beta))
}

const STEP1_DIR: u64 = 1;
const STEP1_RUN: u64 = 2;
const STEP2_RUN: u64 = 3;

fn run_seeds(gen: &dyn Generator, base: u64, stage: u64, probe: usize, side: Side, k: usize) -> (u64, u64) {
    let s = match side {
        Side::Plus => 0,
        Side::Minus => 1,
    };
    let train = gen.train_seed(seed::derive(base, &[stage, probe as u64, s, k as u64, 0]));
    let sample = seed::derive(base, &[stage, probe as u64, s, k as u64, 1]);
    (train, sample)
}

/// One synthetic run: side, run index, train seed, sample seed, output.
type Run = (Side, usize, u64, u64, ThetaVector);

/// Synthetic empirical distributions for K runs on each side, in run order.
#[allow(clippy::too_many_arguments)]
fn synthesize_sides(
    gen: &dyn Generator,
    pair: &ExtremalPair,
    ss: &SafeSpace,
    k: usize,
    n: u64,
    base: u64,
    stage: u64,
    probe: usize,
) -> Result<Vec<Run>> {
    let jobs: Vec<(Side, usize)> = [Side::Plus, Side::Minus]
        .into_iter()
        .flat_map(|s| (0..k).map(move |i| (s, i)))
        .collect();
    jobs.into_par_iter()
        .map(|(side, i)| {
            let (ts, sm) = run_seeds(gen, base, stage, probe, side, i);
            let train = match side {
                Side::Plus => &pair.theta_plus,
                Side::Minus => &pair.theta_minus,
            };
            gen.synthesize(train, ss, n, ts, sm)
                .map(|t| (side, i, ts, sm, t))
                .map_err(|e| Error::Generator {
                    run: i,
                    message: format!("{side:?} side: {e}"),
                })
        })
        .collect()
}

/// Regression estimates of how strongly the generator transmits each
/// complement coordinate, from K1 runs on each end of `pair`.
pub fn estimate_coefficients(
    gen: &dyn Generator,
    pair: &ExtremalPair,
    ss: &SafeSpace,
    cfg: &AuditConfig,
) -> Result<CoefficientEstimate> {
    Ok(estimate_with_samples(gen, pair, ss, cfg, 0)?.0)
}

fn estimate_with_samples(
    gen: &dyn Generator,
    pair: &ExtremalPair,
    ss: &SafeSpace,
    cfg: &AuditConfig,
    probe: usize,
) -> Result<(CoefficientEstimate, Vec<TestStatSample>)> {
    pair.direction.check(ss)?;
    let runs = synthesize_sides(gen, pair, ss, cfg.k1, cfg.n_sym, cfg.direction_seed, STEP1_RUN, probe)?;
    let span = pair.span();
    let mut a_hat = vec![0.0; ss.dim_perp()];
    let mut samples = Vec::with_capacity(runs.len());
    for (side, k, ts, sm, theta) in &runs {
        let coords = ss.perp_coords(theta.values());
        let sign = if *side == Side::Plus { 1.0 } else { -1.0 };
        for (a, c) in a_hat.iter_mut().zip(&coords) {
            *a += sign * c;
        }
        samples.push(TestStatSample {
            value: theta.dot(&pair.direction.beta),
            run_index: *k,
            side: *side,
            train_seed: *ts,
            sample_seed: *sm,
        });
    }
    let denom = cfg.k1 as f64 * span;
    a_hat.iter_mut().for_each(|a| *a /= denom);
    Ok((
        CoefficientEstimate {
            a_hat,
            probe_direction: pair.direction.clone(),
            s_span: span,
        },
        samples,
    ))
}

/// Unit complement direction along the estimated coefficients.
pub fn critical_direction(est: &CoefficientEstimate, ss: &SafeSpace) -> Result<Direction> {
    Direction::from_coords(ss, &est.a_hat)
}

fn realization_deviation(gen: &dyn Generator, pair: &ExtremalPair, ss: &SafeSpace) -> Result<Option<f64>> {
    let Some(n) = gen.realization_size() else {
        return Ok(None);
    };
    let mut worst = 0.0f64;
    for t in [&pair.theta_plus, &pair.theta_minus] {
        let counts = realize_counts(t, n, 0)?;
        let realized = ThetaVector::from_counts(t.schema().clone(), &counts)?;
        let a = ss.workload().apply(realized.values());
        let b = ss.workload().apply(t.values());
        worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(worst, f64::max);
    }
    Ok(Some(worst))
}

fn pair_log(gen: &dyn Generator, pair: &ExtremalPair, ss: &SafeSpace, seed: Option<u64>) -> Result<PairLog> {
    Ok(PairLog {
        direction_seed: seed,
        alpha_plus: pair.alpha_plus,
        alpha_minus: pair.alpha_minus,
        realization_deviation: realization_deviation(gen, pair, ss)?,
    })
}

/// Audits `gen` against `card`, rebuilding the safe space from the card.
pub fn audit(
    card: &GeneratorCard,
    gen: &dyn Generator,
    d_start: Option<&Dataset>,
    cfg: &AuditConfig,
) -> Result<AuditReport> {
    let ss = card.safespace(cfg.basis_cap)?;
    audit_with_space(card, &ss, gen, d_start, cfg)
}

/// Audits with an already built safe space matching the card.
pub fn audit_with_space(
    card: &GeneratorCard,
    ss: &SafeSpace,
    gen: &dyn Generator,
    d_start: Option<&Dataset>,
    cfg: &AuditConfig,
) -> Result<AuditReport> {
    cfg.validate()?;
    if ss.fingerprint() != card.safespace_fingerprint {
        return Err(Error::FingerprintMismatch {
            expected: card.safespace_fingerprint.clone(),
            found: ss.fingerprint().to_string(),
        });
    }
    let psi = card.safe_statistics();
    let mut log = AuditLog::default();
    let mut report = AuditReport {
        tool_version: crate::VERSION.into(),
        card_fingerprint: card.fingerprint(),
        safespace_fingerprint: ss.fingerprint().into(),
        generator: gen.describe(),
        config: cfg.clone(),
        dim_perp: ss.dim_perp(),
        coefficient: None,
        beta_star: None,
        samples_plus: vec![],
        samples_minus: vec![],
        t_statistic: 0.0,
        degrees_of_freedom: None,
        p_value: 1.0,
        verdict: Verdict::NoEvidence,
        summary: String::new(),
        log: AuditLog::default(),
        metadata: [("created_at".to_string(), chrono::Utc::now().to_rfc3339())].into(),
    };
    if ss.dim_perp() == 0 {
        log.notes.push("safe space covers every statistic; nothing to audit".into());
        report.summary = "no evidence of violation: the unsafe complement is empty".into();
        report.log = log;
        return Ok(report);
    }

    let mode = cfg.start_mode.unwrap_or(if d_start.is_some() {
        StartMode::FromDataset
    } else {
        StartMode::MaxEntropy
    });
    log.start_mode = Some(mode);
    let start = starting_theta(ss, &psi, mode, d_start)?;

    // steps (i)-(iii)
    let mut a_sum = vec![0.0; ss.dim_perp()];
    let mut first: Option<CoefficientEstimate> = None;
    let mut attempt = 0u64;
    for probe in 0..cfg.probes {
        let pair = loop {
            if log.degenerate_direction_seeds.len() > cfg.retries {
                return Err(Error::NoInteriorStart(log.degenerate_direction_seeds.len()));
            }
            let dseed = seed::derive(cfg.direction_seed, &[STEP1_DIR, attempt]);
            attempt += 1;
            let dir = random_direction(ss, dseed)?;
            match extremal_pair(&start, &dir) {
                Ok(p) => {
                    log.probe_pairs.push(pair_log(gen, &p, ss, Some(dseed))?);
                    break p;
                }
                Err(Error::DegenerateStart(_)) => log.degenerate_direction_seeds.push(dseed),
                Err(e) => return Err(e),
            }
        };
        let (est, samples) = estimate_with_samples(gen, &pair, ss, cfg, probe)?;
        a_sum.iter_mut().zip(&est.a_hat).for_each(|(s, a)| *s += a);
        log.probe_samples.extend(samples);
        first.get_or_insert(est);
    }
    let mut est = first.expect("at least one probe");
    est.a_hat = a_sum.iter().map(|a| a / cfg.probes as f64).collect();
    let beta_star = match critical_direction(&est, ss) {
        Ok(d) => d,
        Err(Error::NoVariationSignal) => {
            log.notes.push("no-variation-signal: step-1 coefficients are identically zero".into());
            report.coefficient = Some(est);
            report.summary = "no evidence of violation: step 1 observed no variation".into();
            report.log = log;
            return Ok(report);
        }
        Err(e) => return Err(e),
    };

    // steps (iv)-(vi)
    let pair = extremal_pair(&start, &beta_star)?;
    log.critical_pair = Some(pair_log(gen, &pair, ss, None)?);
    let runs = synthesize_sides(gen, &pair, ss, cfg.k2, cfg.n_sym, cfg.direction_seed, STEP2_RUN, 0)?;
    for (side, k, ts, sm, theta) in runs {
        let value = theta.dot(&beta_star.beta);
        match side {
            Side::Plus => report.samples_plus.push(value),
            Side::Minus => report.samples_minus.push(value),
        }
        log.test_samples.push(TestStatSample {
            value,
            run_index: k,
            side,
            train_seed: ts,
            sample_seed: sm,
        });
    }
    let test = two_sample_t_test(&report.samples_plus, &report.samples_minus)?;
    if test.degenerate {
        log.notes.push(format!(
            "degenerate t-test: both sides have zero variance, p = {} by convention",
            test.p
        ));
    }
    report.t_statistic = test.t;
    report.degrees_of_freedom = test.df.is_finite().then_some(test.df);
    report.p_value = test.p;
    report.verdict = if test.p < cfg.alpha_level {
        Verdict::ViolationDetected
    } else {
        Verdict::NoEvidence
    };
    report.summary = match report.verdict {
        Verdict::ViolationDetected => format!(
            "violation detected: the generator varies along an unsafe direction (p = {:e} < {})",
            test.p, cfg.alpha_level
        ),
        Verdict::NoEvidence => format!(
            "no evidence of violation at level {} (p = {:e}); this does not certify the generator",
            cfg.alpha_level, test.p
        ),
    };
    report.coefficient = Some(est);
    report.beta_star = Some(beta_star);
    report.log = log;
    Ok(report)
}

/// Writes the step-(v) projections as `side,run,value` rows.
pub fn dump_test_distributions(report: &AuditReport, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let mut body = String::from("side,run,value\n");
    for (side, xs) in [("plus", &report.samples_plus), ("minus", &report.samples_minus)] {
        for (k, v) in xs.iter().enumerate() {
            body.push_str(&format!("{side},{k},{v:?}\n"));
        }
    }
    f.write_all(body.as_bytes())
        .and_then(|_| f.flush())
        .map_err(|e| Error::io(path, e))
}

/// Reads back a file written by [`dump_test_distributions`].
pub fn read_test_distributions(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let (mut plus, mut minus) = (Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec?;
        let value: f64 = rec[2]
            .parse()
            .map_err(|_| Error::InvalidSample(format!("bad value {:?}", &rec[2])))?;
        match &rec[0] {
            "plus" => plus.push(value),
            "minus" => minus.push(value),
            other => return Err(Error::InvalidSample(format!("unknown side {other:?}"))),
        }
    }
    Ok((plus, minus))
}
