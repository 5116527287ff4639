use std::path::PathBuf;
use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::dataset::{ingest_csv, realize_dataset, theta_of_dataset, write_csv, IngestConfig, ThetaVector};
use crate::error::{Error, Result};
use crate::seed;

fn default_size() -> u64 {
    100_000
}

/// External generator invoked as
/// `command [args..] --train <csv> --n <count> --seed <int> --out <csv>`.
///
/// Training distributions are rendered as `train_size` records with
/// largest-remainder rounding before being handed over.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlackboxSpec {
    pub command: PathBuf,
    #[serde(default)]
    pub args: Vec<String>,
    #[serde(default = "default_size")]
    pub train_size: u64,
    /// Synthetic sample size used to stand in for the fitted distribution
    /// when a trained model is requested.
    #[serde(default = "default_size")]
    pub fit_size: u64,
}

impl BlackboxSpec {
    pub fn new(command: impl Into<PathBuf>) -> Self {
        BlackboxSpec {
            command: command.into(),
            args: Vec::new(),
            train_size: default_size(),
            fit_size: default_size(),
        }
    }

    /// Runs the command once and returns the empirical distribution of its
    /// output.
    pub fn run(&self, train: &ThetaVector, n: u64, train_seed: u64, sample_seed: u64) -> Result<ThetaVector> {
        let schema = train.schema();
        let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
        let train_path = dir.path().join("train.csv");
        let out_path = dir.path().join("synthetic.csv");
        let realized = realize_dataset(train, self.train_size, train_seed)?;
        write_csv(&realized, &train_path)?;
        let run_seed = seed::derive(train_seed, &[sample_seed]);
        let output = Command::new(&self.command)
            .args(&self.args)
            .arg("--train")
            .arg(&train_path)
            .arg("--n")
            .arg(n.to_string())
            .arg("--seed")
            .arg(run_seed.to_string())
            .arg("--out")
            .arg(&out_path)
            .output()
            .map_err(|e| Error::Blackbox(format!("cannot spawn {}: {e}", self.command.display())))?;
        if !output.status.success() {
            return Err(Error::Blackbox(format!(
                "{} exited with {}; stderr: {}",
                self.command.display(),
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        let synthetic = ingest_csv(&out_path, schema, &IngestConfig::from_schema(schema))
            .map_err(|e| Error::Blackbox(format!("unreadable output: {e}")))?;
        theta_of_dataset(&synthetic).map_err(|e| Error::Blackbox(format!("empty output: {e}")))
    }
}
