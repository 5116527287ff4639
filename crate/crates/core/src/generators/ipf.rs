//! Iterative proportional fitting over a dense cell table.

use crate::dataset::{Schema, ThetaVector};
use crate::error::{Error, Result};
use crate::space::MarginalSpec;

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITERS: usize = 1000;

#[derive(Clone, Debug)]
pub struct IpfFit {
    pub theta: ThetaVector,
    /// Full sweeps performed.
    pub iters: usize,
    pub converged: bool,
    /// Largest sup-norm gap between a fitted and a target marginal.
    pub max_residual: f64,
}

struct Target {
    groups: Vec<u32>,
    values: Vec<f64>,
}

fn current_marginal(table: &[f64], t: &Target, buf: &mut [f64]) {
    buf.iter_mut().for_each(|x| *x = 0.0);
    for (&g, &v) in t.groups.iter().zip(table) {
        buf[g as usize] += v;
    }
}

fn residual(table: &[f64], targets: &[Target], buf: &mut Vec<f64>) -> f64 {
    let mut worst = 0.0f64;
    for t in targets {
        buf.resize(t.values.len(), 0.0);
        current_marginal(table, t, buf);
        for (a, b) in buf.iter().zip(&t.values) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// Fits the maximum-entropy table matching the target marginals.
///
/// Starts from the uniform table and cycles through the targets, rescaling
/// each cell group to its target mass. Groups with a zero target are zeroed at
/// once and stay zero. Stops when every target is matched within `tol` in
/// sup-norm or after `max_iters` sweeps.
pub fn fit_ipf(
    targets: &[(MarginalSpec, Vec<f64>)],
    schema: &Schema,
    tol: f64,
    max_iters: usize,
) -> Result<IpfFit> {
    if targets.is_empty() {
        return Err(Error::InvalidConfig("no target marginals".into()));
    }
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::InvalidConfig(format!("tolerance must be positive, got {tol}")));
    }
    let mut prepared = Vec::with_capacity(targets.len());
    for (spec, values) in targets {
        let m = spec.resolve(schema)?;
        if values.len() != m.n_groups {
            return Err(Error::InvalidConfig(format!(
                "target for {:?} has {} entries, expected {}",
                spec.attributes,
                values.len(),
                m.n_groups
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < -1e-12) {
            return Err(Error::InvalidConfig(format!(
                "target for {:?} has negative or non-finite entries",
                spec.attributes
            )));
        }
        let sum: f64 = values.iter().map(|v| v.max(0.0)).sum();
        if (sum - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidConfig(format!(
                "target for {:?} sums to {sum}",
                spec.attributes
            )));
        }
        prepared.push(Target {
            groups: m.group_map(schema),
            values: values.iter().map(|v| v.max(0.0) / sum).collect(),
        });
    }

    let cells = schema.total_cells();
    let mut table = vec![1.0 / cells as f64; cells];
    let mut buf = Vec::new();
    let mut factors = Vec::new();
    let mut res = residual(&table, &prepared, &mut buf);
    let mut iters = 0;
    while res >= tol && iters < max_iters {
        iters += 1;
        for t in &prepared {
            buf.resize(t.values.len(), 0.0);
            current_marginal(&table, t, &mut buf);
            factors.clear();
            factors.extend(buf.iter().zip(&t.values).map(|(&cur, &want)| {
                if want == 0.0 {
                    0.0
                } else if cur > 0.0 {
                    want / cur
                } else {
                    1.0
                }
            }));
            let mut mass = 0.0;
            for (v, &g) in table.iter_mut().zip(&t.groups) {
                *v *= factors[g as usize];
                mass += *v;
            }
            if mass > 0.0 && mass != 1.0 {
                table.iter_mut().for_each(|v| *v /= mass);
            }
        }
        res = residual(&table, &prepared, &mut buf);
    }
    let converged = res < tol;
    if !converged {
        for t in &prepared {
            buf.resize(t.values.len(), 0.0);
            current_marginal(&table, t, &mut buf);
            if let Some(g) = buf
                .iter()
                .zip(&t.values)
                .position(|(&cur, &want)| cur == 0.0 && want > 0.0)
            {
                return Err(Error::InconsistentTargets(format!(
                    "no support left for group {g} with positive target after {iters} sweeps"
                )));
            }
        }
    }
    Ok(IpfFit {
        theta: ThetaVector::new(schema.clone(), table)?,
        iters,
        converged,
        max_residual: res,
    })
}
