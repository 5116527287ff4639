use serde::{Deserialize, Serialize};

use crate::dataset::{Schema, ThetaVector};
use crate::error::{Error, Result};

/// An ordered subset of attribute names whose joint table is one marginal.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MarginalSpec {
    pub attributes: Vec<String>,
}

impl MarginalSpec {
    pub fn new<S: Into<String>>(attrs: impl IntoIterator<Item = S>) -> Self {
        MarginalSpec {
            attributes: attrs.into_iter().map(Into::into).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.attributes.len()
    }

    fn sorted(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.attributes.iter().map(String::as_str).collect();
        v.sort_unstable();
        v
    }

    pub fn same_set(&self, other: &MarginalSpec) -> bool {
        self.sorted() == other.sorted()
    }

    /// True when every attribute of `self` appears in `other`.
    pub fn is_subset_of(&self, other: &MarginalSpec) -> bool {
        self.attributes.iter().all(|a| other.attributes.contains(a))
    }

    pub fn resolve(&self, schema: &Schema) -> Result<Marginal> {
        if self.attributes.is_empty() {
            return Err(Error::InvalidWorkload("empty marginal".into()));
        }
        let mut indices = Vec::with_capacity(self.attributes.len());
        for (i, name) in self.attributes.iter().enumerate() {
            if self.attributes[..i].contains(name) {
                return Err(Error::InvalidWorkload(format!(
                    "attribute {name:?} repeated in marginal"
                )));
            }
            indices.push(schema.require_index(name)?);
        }
        let cards: Vec<usize> = indices
            .iter()
            .map(|&i| schema.attributes()[i].cardinality as usize)
            .collect();
        let mut group_strides = vec![0usize; cards.len()];
        let mut groups = 1usize;
        for j in (0..cards.len()).rev() {
            group_strides[j] = groups;
            groups *= cards[j];
        }
        Ok(Marginal {
            spec: self.clone(),
            attr_indices: indices,
            cards,
            group_strides,
            n_groups: groups,
        })
    }
}

/// A marginal resolved against a schema.
#[derive(Clone, Debug)]
pub struct Marginal {
    pub spec: MarginalSpec,
    pub attr_indices: Vec<usize>,
    cards: Vec<usize>,
    group_strides: Vec<usize>,
    pub n_groups: usize,
}

impl Marginal {
    /// Index of the value tuple (row-major in subset order) of `cell`.
    pub fn group_of_cell(&self, schema: &Schema, cell: usize) -> usize {
        let strides = schema.strides();
        self.attr_indices
            .iter()
            .zip(&self.cards)
            .zip(&self.group_strides)
            .map(|((&a, &card), &gs)| (cell / strides[a]) % card * gs)
            .sum()
    }

    pub fn group_map(&self, schema: &Schema) -> Vec<u32> {
        (0..schema.total_cells())
            .map(|c| self.group_of_cell(schema, c) as u32)
            .collect()
    }

    /// Marginal table of any cell-indexed vector (not only distributions).
    pub fn project(&self, schema: &Schema, cells: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_groups];
        for (c, &v) in cells.iter().enumerate() {
            out[self.group_of_cell(schema, c)] += v;
        }
        out
    }
}

/// Normalized joint counts of the marginal's attributes.
pub fn marginal_of_theta(theta: &ThetaVector, m: &MarginalSpec) -> Result<Vec<f64>> {
    let r = m.resolve(theta.schema())?;
    Ok(r.project(theta.schema(), theta.values()))
}

/// A declared collection of marginals over one schema.
#[derive(Clone, Debug)]
pub struct Workload {
    schema: Schema,
    marginals: Vec<Marginal>,
}

impl Workload {
    pub fn new(schema: Schema, specs: Vec<MarginalSpec>) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::InvalidWorkload("workload has no marginals".into()));
        }
        for (i, s) in specs.iter().enumerate() {
            if specs[..i].iter().any(|t| t.same_set(s)) {
                return Err(Error::InvalidWorkload(format!(
                    "marginal {:?} listed twice",
                    s.attributes
                )));
            }
        }
        let marginals = specs
            .iter()
            .map(|s| s.resolve(&schema))
            .collect::<Result<_>>()?;
        Ok(Workload { schema, marginals })
    }

    pub fn from_names(schema: Schema, names: Vec<Vec<String>>) -> Result<Self> {
        Workload::new(schema, names.into_iter().map(MarginalSpec::new).collect())
    }

    /// All `k`-subsets of `attrs`, in lexicographic order of positions.
    pub fn all_k_way(schema: Schema, attrs: &[&str], k: usize) -> Result<Self> {
        if k == 0 || k > attrs.len() {
            return Err(Error::InvalidWorkload(format!(
                "cannot take {k}-way marginals of {} attributes",
                attrs.len()
            )));
        }
        Workload::new(schema, k_subsets(attrs, k))
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn marginals(&self) -> &[Marginal] {
        &self.marginals
    }

    pub fn specs(&self) -> Vec<MarginalSpec> {
        self.marginals.iter().map(|m| m.spec.clone()).collect()
    }

    pub fn to_names(&self) -> Vec<Vec<String>> {
        self.marginals
            .iter()
            .map(|m| m.spec.attributes.clone())
            .collect()
    }

    /// Number of (marginal, value tuple) rows.
    pub fn n_rows(&self) -> usize {
        self.marginals.iter().map(|m| m.n_groups).sum()
    }

    pub fn max_width(&self) -> usize {
        self.marginals.iter().map(|m| m.spec.width()).max().unwrap_or(0)
    }

    /// Workload plus extra marginals, skipping ones already present.
    pub fn union(&self, extra: &Workload) -> Result<Workload> {
        self.schema.require_compatible(&extra.schema)?;
        let mut specs = self.specs();
        for s in extra.specs() {
            if !specs.iter().any(|t| t.same_set(&s)) {
                specs.push(s);
            }
        }
        Workload::new(self.schema.clone(), specs)
    }

    /// Stacked marginal tables of `cells`, one entry per workload row.
    pub fn apply(&self, cells: &[f64]) -> Vec<f64> {
        self.marginals
            .iter()
            .flat_map(|m| m.project(&self.schema, cells))
            .collect()
    }

    pub fn targets(&self, theta: &ThetaVector) -> Result<Vec<(MarginalSpec, Vec<f64>)>> {
        self.schema.require_compatible(theta.schema())?;
        Ok(self
            .marginals
            .iter()
            .map(|m| (m.spec.clone(), m.project(&self.schema, theta.values())))
            .collect())
    }

    /// Sorted, set-normalized form used in fingerprints.
    pub(crate) fn canonical(&self) -> Vec<Vec<String>> {
        let mut v: Vec<Vec<String>> = self
            .marginals
            .iter()
            .map(|m| {
                let mut a = m.spec.attributes.clone();
                a.sort();
                a
            })
            .collect();
        v.sort();
        v
    }

    /// Default unsafe extension: the first subset of the workload's attributes
    /// one wider than its widest marginal that is not covered by any workload
    /// marginal. For an all-2-way workload on three attributes this is the
    /// full 3-way table.
    pub fn default_leak(&self) -> Result<Workload> {
        let mut attrs: Vec<usize> = self
            .marginals
            .iter()
            .flat_map(|m| m.attr_indices.iter().copied())
            .collect();
        attrs.sort_unstable();
        attrs.dedup();
        let names: Vec<&str> = attrs
            .iter()
            .map(|&i| self.schema.attributes()[i].name.as_str())
            .collect();
        let k = self.max_width() + 1;
        if k > names.len() {
            return Err(Error::InvalidWorkload(
                "workload already covers its attributes jointly; no wider marginal exists".into(),
            ));
        }
        k_subsets(&names, k)
            .into_iter()
            .find(|cand| !self.marginals.iter().any(|m| cand.is_subset_of(&m.spec)))
            .map(|spec| Workload::new(self.schema.clone(), vec![spec]))
            .unwrap_or_else(|| {
                Err(Error::InvalidWorkload(
                    "no uncovered wider marginal found".into(),
                ))
            })
    }
}

fn k_subsets(attrs: &[&str], k: usize) -> Vec<MarginalSpec> {
    let n = attrs.len();
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    if k == 0 || k > n {
        return out;
    }
    loop {
        out.push(MarginalSpec::new(idx.iter().map(|&i| attrs[i])));
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Dense 0/1 indicator matrix of a workload: one row per (marginal, value
/// tuple), one column per cell.
pub fn workload_matrix(w: &Workload) -> nalgebra::DMatrix<f64> {
    let cells = w.schema.total_cells();
    let mut mat = nalgebra::DMatrix::zeros(w.n_rows(), cells);
    let mut offset = 0;
    for m in &w.marginals {
        for c in 0..cells {
            mat[(offset + m.group_of_cell(&w.schema, c), c)] = 1.0;
        }
        offset += m.n_groups;
    }
    mat
}
