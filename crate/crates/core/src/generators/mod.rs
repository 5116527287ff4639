//! Synthetic data generators behind one interface: a map from a training
//! distribution to a distribution over records, sampled i.i.d.

mod blackbox;
mod card;
mod ipf;

pub use blackbox::BlackboxSpec;
pub use card::{make_card, CardGenerator, GeneratorCard};
pub use ipf::{fit_ipf, IpfFit, DEFAULT_MAX_ITERS, DEFAULT_TOL};

use serde::{Deserialize, Serialize};

use crate::dataset::{sample_iid, sample_theta, theta_of_dataset, Dataset, ThetaVector};
use crate::error::{Error, Result};
use crate::space::{SafeSpace, Workload};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    /// IPF on the safe workload only.
    Ipf,
    /// IPF on the safe workload plus extra unsafe marginals.
    IpfDishonest,
    /// Returns the training distribution itself.
    Empirical,
    /// External command, see [`BlackboxSpec`].
    Blackbox,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "policy", content = "seed")]
pub enum TrainSeedPolicy {
    /// Each training run gets its own derived seed.
    #[default]
    PerRunFresh,
    /// Every training run uses this seed.
    Fixed(u64),
}

impl TrainSeedPolicy {
    pub fn seed_for(&self, derived: u64) -> u64 {
        match *self {
            TrainSeedPolicy::PerRunFresh => derived,
            TrainSeedPolicy::Fixed(s) => s,
        }
    }
}

fn default_tol() -> f64 {
    DEFAULT_TOL
}

fn default_iters() -> usize {
    DEFAULT_MAX_ITERS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub kind: GeneratorKind,
    /// Marginals the IPF generators fit; defaults to the safe space's workload.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workload: Option<Vec<Vec<String>>>,
    /// Extra unsafe marginals for `ipf-dishonest`; defaults to one marginal
    /// wider than the workload.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leak_workload: Option<Vec<Vec<String>>>,
    #[serde(default = "default_tol")]
    pub ipf_tol: f64,
    #[serde(default = "default_iters")]
    pub ipf_max_iters: usize,
    #[serde(default)]
    pub train_seed_policy: TrainSeedPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blackbox: Option<BlackboxSpec>,
}

impl GeneratorConfig {
    fn with_kind(kind: GeneratorKind) -> Self {
        GeneratorConfig {
            kind,
            workload: None,
            leak_workload: None,
            ipf_tol: DEFAULT_TOL,
            ipf_max_iters: DEFAULT_MAX_ITERS,
            train_seed_policy: TrainSeedPolicy::PerRunFresh,
            blackbox: None,
        }
    }

    pub fn ipf() -> Self {
        Self::with_kind(GeneratorKind::Ipf)
    }

    /// Dishonest IPF; `None` leaks the default wider marginal.
    pub fn ipf_dishonest(leak: Option<Vec<Vec<String>>>) -> Self {
        GeneratorConfig {
            leak_workload: leak,
            ..Self::with_kind(GeneratorKind::IpfDishonest)
        }
    }

    pub fn empirical() -> Self {
        Self::with_kind(GeneratorKind::Empirical)
    }

    pub fn blackbox(spec: BlackboxSpec) -> Self {
        GeneratorConfig {
            blackbox: Some(spec),
            ..Self::with_kind(GeneratorKind::Blackbox)
        }
    }

    fn safe_workload(&self, ss: &SafeSpace) -> Result<Workload> {
        match &self.workload {
            Some(names) => Workload::from_names(ss.schema().clone(), names.clone()),
            None => Ok(ss.workload().clone()),
        }
    }

    /// Marginals actually fitted by the IPF kinds.
    pub fn fitted_workload(&self, ss: &SafeSpace) -> Result<Workload> {
        let safe = self.safe_workload(ss)?;
        match self.kind {
            GeneratorKind::Ipf => Ok(safe),
            GeneratorKind::IpfDishonest => {
                let leak = match &self.leak_workload {
                    Some(names) => Workload::from_names(ss.schema().clone(), names.clone())?,
                    None => safe.default_leak()?,
                };
                let all = safe.union(&leak)?;
                if all.n_rows() == safe.n_rows() {
                    return Err(Error::InvalidConfig(
                        "ipf-dishonest needs a leak marginal outside the safe workload".into(),
                    ));
                }
                Ok(all)
            }
            _ => Err(Error::InvalidConfig(format!(
                "{:?} generators do not fit marginals",
                self.kind
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == GeneratorKind::Blackbox && self.blackbox.is_none() {
            return Err(Error::InvalidConfig("blackbox generator needs a command".into()));
        }
        if self.kind == GeneratorKind::IpfDishonest
            && self.leak_workload.as_ref().is_some_and(|l| l.is_empty())
        {
            return Err(Error::InvalidConfig("ipf-dishonest leak workload is empty".into()));
        }
        if self.ipf_tol.is_nan() || self.ipf_tol <= 0.0 || self.ipf_max_iters == 0 {
            return Err(Error::InvalidConfig("ipf tolerance and iteration budget must be positive".into()));
        }
        Ok(())
    }
}

/// Result of training: the distribution records are drawn from.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub config: GeneratorConfig,
    pub fitted: ThetaVector,
    pub train_seed: u64,
    pub iters_used: usize,
    pub converged: bool,
}

/// Persisted form of a [`TrainedModel`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainedModelFile {
    pub config: GeneratorConfig,
    pub fitted: crate::dataset::ThetaFile,
    pub train_seed: u64,
    pub iters_used: usize,
    pub converged: bool,
}

impl TrainedModel {
    pub fn to_file(&self) -> TrainedModelFile {
        TrainedModelFile {
            config: self.config.clone(),
            fitted: self.fitted.to_file(),
            train_seed: self.train_seed,
            iters_used: self.iters_used,
            converged: self.converged,
        }
    }

    pub fn from_file(schema: crate::dataset::Schema, f: TrainedModelFile) -> Result<Self> {
        Ok(TrainedModel {
            config: f.config,
            fitted: ThetaVector::from_file(schema, f.fitted)?,
            train_seed: f.train_seed,
            iters_used: f.iters_used,
            converged: f.converged,
        })
    }
}

/// Trains on a distribution directly. Extremal inputs are distributions, so
/// this is the path the auditor uses.
pub fn train_on_theta(
    config: &GeneratorConfig,
    theta: &ThetaVector,
    ss: &SafeSpace,
    train_seed: u64,
) -> Result<TrainedModel> {
    config.validate()?;
    ss.check_schema(theta.schema())?;
    let (fitted, iters_used, converged) = match config.kind {
        GeneratorKind::Ipf | GeneratorKind::IpfDishonest => {
            let w = config.fitted_workload(ss)?;
            let fit = fit_ipf(
                &w.targets(theta)?,
                theta.schema(),
                config.ipf_tol,
                config.ipf_max_iters,
            )?;
            (fit.theta, fit.iters, fit.converged)
        }
        GeneratorKind::Empirical => (theta.clone(), 0, true),
        GeneratorKind::Blackbox => {
            let spec = config.blackbox.as_ref().expect("validated");
            let out = spec.run(theta, spec.fit_size, train_seed, 0)?;
            (out, 0, true)
        }
    };
    Ok(TrainedModel {
        config: config.clone(),
        fitted,
        train_seed,
        iters_used,
        converged,
    })
}

pub fn train(
    config: &GeneratorConfig,
    d: &Dataset,
    ss: &SafeSpace,
    train_seed: u64,
) -> Result<TrainedModel> {
    train_on_theta(config, &theta_of_dataset(d)?, ss, train_seed)
}

/// `n` synthetic records drawn i.i.d. from the fitted distribution.
pub fn generate(model: &TrainedModel, n: u64, sample_seed: u64) -> Result<Dataset> {
    sample_iid(&model.fitted, n, sample_seed)
}

/// Anything the auditor can probe: given a training distribution, produce
/// the empirical distribution of `n` synthetic records.
pub trait Generator: Sync {
    /// Kind and parameters recorded in cards and reports.
    fn describe(&self) -> CardGenerator;

    fn synthesize(
        &self,
        train: &ThetaVector,
        ss: &SafeSpace,
        n: u64,
        train_seed: u64,
        sample_seed: u64,
    ) -> Result<ThetaVector>;

    fn train_seed(&self, derived: u64) -> u64 {
        derived
    }

    /// Records per training dataset when the generator consumes records
    /// rather than distributions.
    fn realization_size(&self) -> Option<u64> {
        None
    }
}

impl Generator for GeneratorConfig {
    fn describe(&self) -> CardGenerator {
        CardGenerator::from_config(self)
    }

    fn synthesize(
        &self,
        train: &ThetaVector,
        ss: &SafeSpace,
        n: u64,
        train_seed: u64,
        sample_seed: u64,
    ) -> Result<ThetaVector> {
        if self.kind == GeneratorKind::Blackbox {
            self.validate()?;
            let spec = self.blackbox.as_ref().expect("validated");
            return spec.run(train, n, train_seed, sample_seed);
        }
        let model = train_on_theta(self, train, ss, train_seed)?;
        sample_theta(&model.fitted, n, sample_seed)
    }

    fn train_seed(&self, derived: u64) -> u64 {
        self.train_seed_policy.seed_for(derived)
    }

    fn realization_size(&self) -> Option<u64> {
        self.blackbox.as_ref().map(|b| b.train_size)
    }
}

/// Mixture `(1 - lambda) * IPF(d) + lambda * theta(d)`: a generator leaking a
/// controlled fraction of the training distribution, for power analysis.
#[derive(Clone, Debug)]
pub struct LeakMixture {
    pub honest: GeneratorConfig,
    pub lambda: f64,
}

impl LeakMixture {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidConfig(format!("leak fraction {lambda} outside [0, 1]")));
        }
        Ok(LeakMixture {
            honest: GeneratorConfig::ipf(),
            lambda,
        })
    }

    pub fn fit(&self, train: &ThetaVector, ss: &SafeSpace) -> Result<ThetaVector> {
        let base = train_on_theta(&self.honest, train, ss, 0)?.fitted;
        let mixed = base
            .values()
            .iter()
            .zip(train.values())
            .map(|(b, t)| (1.0 - self.lambda) * b + self.lambda * t)
            .collect();
        ThetaVector::new(train.schema().clone(), mixed)
    }
}

impl Generator for LeakMixture {
    fn describe(&self) -> CardGenerator {
        CardGenerator {
            kind: "leak-mixture".into(),
            params: serde_json::json!({ "lambda": self.lambda, "honest": self.honest }),
        }
    }

    fn synthesize(
        &self,
        train: &ThetaVector,
        ss: &SafeSpace,
        n: u64,
        _train_seed: u64,
        sample_seed: u64,
    ) -> Result<ThetaVector> {
        sample_theta(&self.fit(train, ss)?, n, sample_seed)
    }
}
