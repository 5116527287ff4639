use serde::{Deserialize, Serialize};

use super::Schema;
use crate::error::{Error, Result};

/// Tolerance on the total probability mass of a [`ThetaVector`].
pub const SUM_TOL: f64 = 1e-12;

/// Normalized full contingency table over the cells of a schema.
#[derive(Clone, Debug, PartialEq)]
pub struct ThetaVector {
    schema: Schema,
    values: Vec<f64>,
    sample_size_hint: Option<u64>,
}

impl ThetaVector {
    /// Validates and wraps cell probabilities.
    ///
    /// Entries must be finite and nonnegative (negatives within `SUM_TOL` are
    /// clamped to zero) and sum to one within `SUM_TOL`; residual drift is
    /// renormalized away.
    pub fn new(schema: Schema, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != schema.total_cells() {
            return Err(Error::InvalidTheta(format!(
                "expected {} cells, got {}",
                schema.total_cells(),
                values.len()
            )));
        }
        for (i, v) in values.iter_mut().enumerate() {
            if !v.is_finite() {
                return Err(Error::InvalidTheta(format!("cell {i} is not finite")));
            }
            if *v < 0.0 {
                if *v < -SUM_TOL {
                    return Err(Error::InvalidTheta(format!("cell {i} is negative ({v:e})")));
                }
                *v = 0.0;
            }
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidTheta(format!(
                "cells sum to {sum:.17} (tolerance {SUM_TOL:e})"
            )));
        }
        if sum != 1.0 {
            values.iter_mut().for_each(|v| *v /= sum);
        }
        Ok(ThetaVector {
            schema,
            values,
            sample_size_hint: None,
        })
    }

    /// Empirical distribution of cell counts.
    pub fn from_counts(schema: Schema, counts: &[u64]) -> Result<Self> {
        let n: u64 = counts.iter().sum();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let values = counts.iter().map(|&c| c as f64 / n as f64).collect();
        Ok(ThetaVector::new(schema, values)?.with_sample_size_hint(n))
    }

    pub fn uniform(schema: Schema) -> Self {
        let m = schema.total_cells();
        ThetaVector {
            values: vec![1.0 / m as f64; m],
            schema,
            sample_size_hint: None,
        }
    }

    pub fn point_mass(schema: Schema, cell: usize) -> Result<Self> {
        let mut values = vec![0.0; schema.total_cells()];
        *values
            .get_mut(cell)
            .ok_or_else(|| Error::InvalidTheta(format!("cell {cell} out of range")))? = 1.0;
        ThetaVector::new(schema, values)
    }

    pub fn with_sample_size_hint(mut self, n: u64) -> Self {
        self.sample_size_hint = Some(n);
        self
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn sample_size_hint(&self) -> Option<u64> {
        self.sample_size_hint
    }

    pub fn dot(&self, v: &[f64]) -> f64 {
        self.values.iter().zip(v).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs_diff(&self, other: &ThetaVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_file(&self) -> ThetaFile {
        ThetaFile {
            schema_fingerprint: self.schema.fingerprint(),
            cells: self.values.clone(),
            sample_size_hint: self.sample_size_hint,
        }
    }

    pub fn from_file(schema: Schema, file: ThetaFile) -> Result<Self> {
        let fp = schema.fingerprint();
        if file.schema_fingerprint != fp {
            return Err(Error::FingerprintMismatch {
                expected: fp,
                found: file.schema_fingerprint,
            });
        }
        let t = ThetaVector::new(schema, file.cells)?;
        Ok(match file.sample_size_hint {
            Some(n) => t.with_sample_size_hint(n),
            None => t,
        })
    }
}

/// On-disk form of a [`ThetaVector`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaFile {
    pub schema_fingerprint: String,
    pub cells: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_size_hint: Option<u64>,
}
