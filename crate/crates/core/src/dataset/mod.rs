//! Categorical schemas, datasets and their full-table parameterization.

mod ingest;
mod schema;
mod theta;

pub use ingest::{ingest_csv, ingest_reader, write_csv, IngestConfig, UnknownPolicy};
pub use schema::{Attribute, Schema};
pub use theta::{ThetaFile, ThetaVector, SUM_TOL};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use rand_distr::Binomial;

use crate::error::{Error, Result};
use crate::seed;

/// Records over a schema, stored row-major with one category index per
/// attribute.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    schema: Schema,
    data: Vec<u32>,
}

impl Dataset {
    pub fn new(schema: Schema, records: Vec<Vec<u32>>) -> Result<Self> {
        let d = schema.len();
        let mut data = Vec::with_capacity(records.len() * d);
        for (i, r) in records.into_iter().enumerate() {
            if r.len() != d {
                return Err(Error::SchemaMismatch(format!(
                    "record {i} has {} components, schema has {d}",
                    r.len()
                )));
            }
            data.extend(r);
        }
        Dataset::from_flat(schema, data)
    }

    pub fn from_flat(schema: Schema, data: Vec<u32>) -> Result<Self> {
        let d = schema.len();
        if !data.len().is_multiple_of(d) {
            return Err(Error::SchemaMismatch(format!(
                "flat record buffer of length {} is not a multiple of {d}",
                data.len()
            )));
        }
        for (k, &v) in data.iter().enumerate() {
            let card = schema.attributes()[k % d].cardinality;
            if v >= card {
                return Err(Error::InvalidRecord {
                    index: k / d,
                    attribute: k % d,
                    value: v,
                    cardinality: card,
                });
            }
        }
        Ok(Dataset { schema, data })
    }

    /// Dataset holding one record per entry of `cells`.
    pub fn from_cells(schema: Schema, cells: &[usize]) -> Result<Self> {
        let d = schema.len();
        let mut data = vec![0u32; cells.len() * d];
        for (chunk, &c) in data.chunks_mut(d).zip(cells) {
            if c >= schema.total_cells() {
                return Err(Error::InvalidTheta(format!("cell {c} out of range")));
            }
            schema.decode_cell(c, chunk);
        }
        Ok(Dataset { schema, data })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.schema.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn record(&self, i: usize) -> &[u32] {
        let d = self.schema.len();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn records(&self) -> impl ExactSizeIterator<Item = &[u32]> + '_ {
        self.data.chunks_exact(self.schema.len())
    }

    pub fn cells(&self) -> impl Iterator<Item = usize> + '_ {
        self.records().map(|r| self.schema.cell_index(r))
    }

    pub fn counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.schema.total_cells()];
        for c in self.cells() {
            counts[c] += 1;
        }
        counts
    }

    /// Concatenates two datasets over compatible schemas.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        self.schema.require_compatible(&other.schema)?;
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Dataset {
            schema: self.schema.clone(),
            data,
        })
    }
}

/// Empirical distribution of a dataset.
pub fn theta_of_dataset(d: &Dataset) -> Result<ThetaVector> {
    if d.is_empty() {
        return Err(Error::EmptyDataset);
    }
    ThetaVector::from_counts(d.schema.clone(), &d.counts())
}

/// Largest-remainder rounding of `n * theta` to integer cell counts.
///
/// Remainders are compared on a 1e-9 grid so float noise does not masquerade
/// as an ordering; exact ties are broken by a seeded random key.
pub fn realize_counts(theta: &ThetaVector, n: u64, seed: u64) -> Result<Vec<u64>> {
    if n == 0 {
        return Err(Error::EmptyRequest);
    }
    let mut rng = seed::rng(seed);
    let scaled: Vec<f64> = theta.values().iter().map(|&p| p * n as f64).collect();
    let mut counts: Vec<u64> = scaled.iter().map(|&x| x.floor() as u64).collect();
    let assigned: u64 = counts.iter().sum();
    // floor can overshoot by at most float noise; trim the largest cells
    if assigned > n {
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
        let mut excess = assigned - n;
        for i in order.into_iter().cycle() {
            if excess == 0 {
                break;
            }
            if counts[i] > 0 {
                counts[i] -= 1;
                excess -= 1;
            }
        }
        return Ok(counts);
    }
    let remaining = (n - assigned) as usize;
    let mut order: Vec<(i64, u64, usize)> = scaled
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let rem = ((x - x.floor()) * 1e9).round() as i64;
            (rem, rng.random::<u64>(), i)
        })
        .collect();
    order.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, _, i) in order.iter().take(remaining) {
        counts[i] += 1;
    }
    Ok(counts)
}

/// Deterministic integer realization of a distribution as exactly `n` records,
/// emitted in cell order.
pub fn realize_dataset(theta: &ThetaVector, n: u64, seed: u64) -> Result<Dataset> {
    let counts = realize_counts(theta, n, seed)?;
    let cells: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(c, &k)| std::iter::repeat_n(c, k as usize))
        .collect();
    Dataset::from_cells(theta.schema().clone(), &cells)
}

/// `n` records drawn i.i.d. from `theta`.
pub fn sample_iid(theta: &ThetaVector, n: u64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::EmptyRequest);
    }
    let dist = WeightedIndex::new(theta.values())
        .map_err(|e| Error::InvalidTheta(format!("cannot sample: {e}")))?;
    let mut rng = seed::rng(seed);
    let cells: Vec<usize> = (0..n).map(|_| dist.sample(&mut rng)).collect();
    Dataset::from_cells(theta.schema().clone(), &cells)
}

/// Cell counts of `n` i.i.d. draws from `theta`, sampled as a multinomial via
/// sequential conditional binomials. Same law as counting `sample_iid`, at a
/// cost linear in the number of cells rather than records.
pub fn sample_counts(theta: &ThetaVector, n: u64, seed: u64) -> Result<Vec<u64>> {
    if n == 0 {
        return Err(Error::EmptyRequest);
    }
    let mut rng = seed::rng(seed);
    let values = theta.values();
    let mut counts = vec![0u64; values.len()];
    let mut left = n;
    let mut mass_left = 1.0f64;
    let last = values.iter().rposition(|&p| p > 0.0).unwrap_or(0);
    for (i, &p) in values.iter().enumerate() {
        if left == 0 {
            break;
        }
        if i == last {
            counts[i] = left;
            break;
        }
        if p <= 0.0 {
            continue;
        }
        let q = (p / mass_left).clamp(0.0, 1.0);
        let k = Binomial::new(left, q)
            .map_err(|e| Error::InvalidTheta(format!("cannot sample: {e}")))?
            .sample(&mut rng);
        counts[i] = k;
        left -= k;
        mass_left -= p;
        if mass_left <= 0.0 {
            mass_left = f64::MIN_POSITIVE;
        }
    }
    Ok(counts)
}

/// Empirical distribution of `n` i.i.d. draws from `theta`.
pub fn sample_theta(theta: &ThetaVector, n: u64, seed: u64) -> Result<ThetaVector> {
    let counts = sample_counts(theta, n, seed)?;
    ThetaVector::from_counts(theta.schema().clone(), &counts)
}
