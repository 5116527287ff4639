//! Utility of synthetic data relative to the real data: marginal RMSE and
//! derived-statistic errors such as a proportion gap between two groups.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{theta_of_dataset, Dataset};
use crate::error::{Error, Result};
use crate::space::{marginal_of_theta, MarginalSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DerivedKind {
    /// Share of `split = 0` minus share of `split = 1`, per group.
    Gap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedStatSpec {
    pub name: String,
    pub kind: DerivedKind,
    pub group_attr: String,
    /// Binary attribute.
    pub split_attr: String,
    /// Keep only records whose attribute equals this category index.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<(String, u32)>,
}

struct Resolved {
    group: usize,
    n_groups: usize,
    split: usize,
    condition: Option<(usize, u32)>,
}

impl DerivedStatSpec {
    fn resolve(&self, d: &Dataset) -> Result<Resolved> {
        let s = d.schema();
        let group = s.require_index(&self.group_attr)?;
        let split = s.require_index(&self.split_attr)?;
        if s.attributes()[split].cardinality != 2 {
            return Err(Error::InvalidConfig(format!(
                "split attribute {:?} must be binary",
                self.split_attr
            )));
        }
        if group == split {
            return Err(Error::InvalidConfig("group and split attributes coincide".into()));
        }
        let condition = match &self.condition {
            Some((name, v)) => {
                let i = s.require_index(name)?;
                if *v >= s.attributes()[i].cardinality {
                    return Err(Error::InvalidConfig(format!(
                        "condition {name} = {v} outside its {} categories",
                        s.attributes()[i].cardinality
                    )));
                }
                Some((i, *v))
            }
            None => None,
        };
        Ok(Resolved {
            group,
            n_groups: s.attributes()[group].cardinality as usize,
            split,
            condition,
        })
    }
}

/// Per-group gaps; `None` where the group has no qualifying records.
fn gaps(d: &Dataset, r: &Resolved) -> Vec<Option<f64>> {
    let mut tally = vec![[0u64; 2]; r.n_groups];
    for rec in d.records() {
        if r.condition.is_some_and(|(i, v)| rec[i] != v) {
            continue;
        }
        tally[rec[r.group] as usize][rec[r.split] as usize] += 1;
    }
    tally
        .iter()
        .map(|&[a, b]| {
            let n = a + b;
            (n > 0).then(|| (a as f64 - b as f64) / n as f64)
        })
        .collect()
}

fn rmse(diffs: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = diffs.len();
    (diffs.map(|x| x * x).sum::<f64>() / n as f64).sqrt()
}

/// Root mean square over marginal cells of the normalized marginal difference.
pub fn marginal_rmse(real: &Dataset, sym: &Dataset, m: &MarginalSpec) -> Result<f64> {
    real.schema().require_compatible(sym.schema())?;
    let a = marginal_of_theta(&theta_of_dataset(real)?, m)?;
    let b = marginal_of_theta(&theta_of_dataset(sym)?, m)?;
    Ok(rmse(a.iter().zip(&b).map(|(x, y)| x - y)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapResult {
    pub rmse: f64,
    pub groups_used: usize,
    /// Group categories with no qualifying records in either dataset.
    pub skipped_groups: Vec<u32>,
}

pub fn gap_rmse(real: &Dataset, sym: &Dataset, spec: &DerivedStatSpec) -> Result<f64> {
    Ok(gap_detail(real, sym, spec)?.rmse)
}

pub fn gap_detail(real: &Dataset, sym: &Dataset, spec: &DerivedStatSpec) -> Result<GapResult> {
    real.schema().require_compatible(sym.schema())?;
    let r = spec.resolve(real)?;
    let (a, b) = (gaps(real, &r), gaps(sym, &r));
    let mut diffs = Vec::new();
    let mut skipped = Vec::new();
    for (g, (x, y)) in a.iter().zip(&b).enumerate() {
        match (x, y) {
            (Some(x), Some(y)) => diffs.push(x - y),
            _ => skipped.push(g as u32),
        }
    }
    if diffs.is_empty() {
        return Err(Error::NoSupport(format!(
            "{}: every {} group is empty in one of the datasets",
            spec.name, spec.group_attr
        )));
    }
    Ok(GapResult {
        rmse: rmse(diffs.iter().copied()),
        groups_used: diffs.len(),
        skipped_groups: skipped,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalRmse {
    pub marginal: MarginalSpec,
    pub rmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedRmse {
    pub name: String,
    pub rmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilityReport {
    pub marginal_rmse: Vec<MarginalRmse>,
    pub derived_rmse: Vec<DerivedRmse>,
    pub n_real: usize,
    pub n_sym: usize,
    pub log: Vec<String>,
}

pub fn utility_report(
    real: &Dataset,
    sym: &Dataset,
    marginals: &[MarginalSpec],
    derived: &[DerivedStatSpec],
) -> Result<UtilityReport> {
    real.schema().require_compatible(sym.schema())?;
    let mut log = Vec::new();
    let marginal_rmse = marginals
        .iter()
        .map(|m| {
            Ok(MarginalRmse {
                marginal: m.clone(),
                rmse: marginal_rmse(real, sym, m)?,
            })
        })
        .collect::<Result<_>>()?;
    let mut derived_rmse = Vec::with_capacity(derived.len());
    for spec in derived {
        let g = gap_detail(real, sym, spec)?;
        if !g.skipped_groups.is_empty() {
            log.push(format!(
                "{}: skipped empty {} groups {:?}",
                spec.name, spec.group_attr, g.skipped_groups
            ));
        }
        derived_rmse.push(DerivedRmse {
            name: spec.name.clone(),
            rmse: g.rmse,
        });
    }
    Ok(UtilityReport {
        marginal_rmse,
        derived_rmse,
        n_real: real.len(),
        n_sym: sym.len(),
        log,
    })
}

impl UtilityReport {
    /// One metric per row: `section,metric,rmse`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("section,metric,rmse\n");
        for m in &self.marginal_rmse {
            out.push_str(&format!("marginal,{},{:?}\n", m.marginal.attributes.join("|"), m.rmse));
        }
        for d in &self.derived_rmse {
            out.push_str(&format!("derived,{},{:?}\n", d.name, d.rmse));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(self.to_csv().as_bytes()))
            .map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Schema;
    use proptest::prelude::*;

    fn ds(cards: &[u32], recs: &[&[u32]]) -> Dataset {
        Dataset::new(
            Schema::from_cardinalities(cards).unwrap(),
            recs.iter().map(|r| r.to_vec()).collect(),
        )
        .unwrap()
    }

    fn spec(cond: Option<(&str, u32)>) -> DerivedStatSpec {
        DerivedStatSpec {
            name: "gap".into(),
            kind: DerivedKind::Gap,
            group_attr: "x0".into(),
            split_attr: "x1".into(),
            condition: cond.map(|(a, v)| (a.to_string(), v)),
        }
    }

    #[test]
    fn marginal_hand_values() {
        let m = MarginalSpec::new(["x0"]);
        let a = ds(&[2], &[&[0]]);
        let b = ds(&[2], &[&[1]]);
        assert_eq!(marginal_rmse(&a, &b, &m).unwrap(), 1.0);
        assert_eq!(marginal_rmse(&a, &a, &m).unwrap(), 0.0);

        // real (.5,.5,0,0), sym uniform
        let m = MarginalSpec::new(["x0", "x1"]);
        let real = ds(&[2, 2], &[&[0, 0], &[0, 1]]);
        let sym = ds(&[2, 2], &[&[0, 0], &[0, 1], &[1, 0], &[1, 1]]);
        assert!((marginal_rmse(&real, &sym, &m).unwrap() - 0.25).abs() < 1e-15);
        let other = ds(&[2, 3], &[&[0, 0]]);
        assert_eq!(marginal_rmse(&real, &other, &m).unwrap_err().code(), "schema-mismatch");
    }

    #[test]
    fn gap_extreme_and_identity() {
        let real = ds(&[2, 2], &[&[0, 0], &[0, 0]]);
        let sym = ds(&[2, 2], &[&[0, 1]]);
        assert_eq!(gap_rmse(&real, &sym, &spec(None)).unwrap(), 2.0);
        assert_eq!(gap_rmse(&real, &real, &spec(None)).unwrap(), 0.0);
    }

    // string-keyed tally of the toy data, independent of the index logic
    #[test]
    fn gap_matches_tally_oracle() {
        let rows: Vec<[u32; 3]> = vec![
            [0, 0, 1], [0, 0, 1], [0, 1, 1], [0, 1, 0],
            [1, 0, 1], [1, 1, 1], [1, 1, 1], [1, 1, 1],
            [2, 0, 0], [2, 0, 0], [2, 1, 0],
        ];
        let sym_rows: Vec<[u32; 3]> = vec![
            [0, 0, 1], [0, 1, 1], [1, 0, 1], [1, 0, 1], [1, 1, 1], [2, 1, 1], [2, 0, 0],
        ];
        let to_ds = |r: &Vec<[u32; 3]>| {
            Dataset::new(
                Schema::from_cardinalities(&[3, 2, 2]).unwrap(),
                r.iter().map(|x| x.to_vec()).collect(),
            )
            .unwrap()
        };
        let tally = |r: &Vec<[u32; 3]>| {
            let mut m = std::collections::BTreeMap::<String, (f64, f64)>::new();
            for x in r.iter().filter(|x| x[2] == 1) {
                let e = m.entry(format!("g{}", x[0])).or_default();
                if x[1] == 0 { e.0 += 1.0 } else { e.1 += 1.0 }
            }
            m.into_iter()
                .map(|(k, (a, b))| (k, (a - b) / (a + b)))
                .collect::<std::collections::BTreeMap<_, _>>()
        };
        let (tr, ts) = (tally(&rows), tally(&sym_rows));
        let mut sq = Vec::new();
        for (k, v) in &tr {
            if let Some(w) = ts.get(k) {
                sq.push((v - w).powi(2));
            }
        }
        let want = (sq.iter().sum::<f64>() / sq.len() as f64).sqrt();
        let got = gap_detail(&to_ds(&rows), &to_ds(&sym_rows), &spec(Some(("x2", 1)))).unwrap();
        assert!((got.rmse - want).abs() < 1e-15);
        // group 2 has no qualifying records in the real data
        assert_eq!(got.skipped_groups, vec![2]);
        assert_eq!(got.groups_used, 2);
    }

    #[test]
    fn gap_errors() {
        let a = ds(&[2, 2, 2], &[&[0, 0, 0]]);
        let b = ds(&[2, 2, 2], &[&[1, 0, 0]]);
        assert_eq!(gap_rmse(&a, &b, &spec(None)).unwrap_err().code(), "no-support");
        let c = ds(&[2, 3], &[&[0, 0]]);
        assert_eq!(gap_rmse(&c, &c, &spec(None)).unwrap_err().code(), "invalid-config");
        assert!(gap_rmse(&a, &a, &spec(Some(("x2", 5)))).is_err());
        assert!(gap_rmse(&a, &a, &spec(Some(("nope", 0)))).is_err());
    }

    #[test]
    fn report_sections_and_round_trip() {
        let real = ds(&[3, 2, 2], &[&[0, 0, 1], &[1, 1, 1], &[2, 0, 1], &[0, 1, 0]]);
        let sym = ds(&[3, 2, 2], &[&[0, 1, 1], &[1, 1, 1], &[1, 0, 0]]);
        let ms = [MarginalSpec::new(["x0", "x1"]), MarginalSpec::new(["x2"])];
        let r = utility_report(&real, &sym, &ms, &[]).unwrap();
        assert!(r.derived_rmse.is_empty());
        assert_eq!(r.marginal_rmse.len(), 2);
        let r = utility_report(&real, &sym, &ms, &[spec(Some(("x2", 1)))]).unwrap();
        assert_eq!(r.derived_rmse.len(), 1);
        assert_eq!(r.log.len(), 1);
        assert!(r.marginal_rmse.iter().all(|m| m.rmse >= 0.0));
        let back: UtilityReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.contains("marginal,x0|x1,"));
        let same = utility_report(&real, &real, &ms, &[spec(None)]).unwrap();
        assert!(same.marginal_rmse.iter().all(|m| m.rmse == 0.0));
        assert!(same.derived_rmse.iter().all(|m| m.rmse == 0.0));
    }

    proptest! {
        #[test]
        fn marginal_rmse_ignores_record_order(
            recs in prop::collection::vec((0u32..3, 0u32..2, 0u32..2), 1..40),
            other in prop::collection::vec((0u32..3, 0u32..2, 0u32..2), 1..40),
            rot in 0usize..40,
        ) {
            let mk = |v: &[(u32, u32, u32)]| ds(&[3, 2, 2], &v.iter().map(|&(a, b, c)| [a, b, c]).collect::<Vec<_>>().iter().map(|x| &x[..]).collect::<Vec<_>>());
            let mut shuffled = recs.clone();
            let k = rot % shuffled.len();
            shuffled.rotate_left(k);
            shuffled.reverse();
            let m = MarginalSpec::new(["x0", "x2"]);
            let a = marginal_rmse(&mk(&recs), &mk(&other), &m).unwrap();
            let b = marginal_rmse(&mk(&shuffled), &mk(&other), &m).unwrap();
            prop_assert!((a - b).abs() < 1e-15);
            let c = marginal_rmse(&mk(&other), &mk(&recs), &m).unwrap();
            prop_assert!((a - c).abs() < 1e-15);
        }
    }
}
