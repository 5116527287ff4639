//! Extremal distribution pairs: the furthest a starting distribution can move
//! along a complement direction, both ways, while staying on the simplex.
//! Safe statistics are unchanged along the whole segment.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{theta_of_dataset, Dataset, ThetaVector};
use crate::error::{Error, Result};
use crate::generators::fit_ipf;
use crate::seed;
use crate::space::{phi_of_theta, SafeSpace, SafeStatistics};

/// Entries of a direction smaller than this are treated as zero by the ratio
/// test.
const BETA_ZERO: f64 = 1e-13;
/// Negative cells this close to zero after a move are clamped.
const CLAMP: f64 = 1e-14;

/// A unit vector in the complement, in cell and basis coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub safespace_fingerprint: String,
    pub beta: Vec<f64>,
    pub coords: Vec<f64>,
}

impl Direction {
    /// Normalizes `coords` and maps them into cell space.
    pub fn from_coords(ss: &SafeSpace, coords: &[f64]) -> Result<Direction> {
        if ss.dim_perp() == 0 {
            return Err(Error::PhiIsEverything);
        }
        if coords.len() != ss.dim_perp() {
            return Err(Error::InvalidConfig(format!(
                "direction has {} coordinates, complement has dimension {}",
                coords.len(),
                ss.dim_perp()
            )));
        }
        let norm = coords.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm.is_nan() || norm <= 0.0 || !norm.is_finite() {
            return Err(Error::NoVariationSignal);
        }
        let coords: Vec<f64> = coords.iter().map(|c| c / norm).collect();
        Ok(Direction {
            safespace_fingerprint: ss.fingerprint().to_string(),
            beta: ss.perp_vector(&coords),
            coords,
        })
    }

    pub fn check(&self, ss: &SafeSpace) -> Result<()> {
        if self.safespace_fingerprint != ss.fingerprint() {
            return Err(Error::FingerprintMismatch {
                expected: ss.fingerprint().to_string(),
                found: self.safespace_fingerprint.clone(),
            });
        }
        Ok(())
    }

    pub fn negated(&self) -> Direction {
        Direction {
            safespace_fingerprint: self.safespace_fingerprint.clone(),
            beta: self.beta.iter().map(|b| -b).collect(),
            coords: self.coords.iter().map(|c| -c).collect(),
        }
    }
}

/// Isotropic random unit direction in the complement.
pub fn random_direction(ss: &SafeSpace, seed: u64) -> Result<Direction> {
    if ss.dim_perp() == 0 {
        return Err(Error::PhiIsEverything);
    }
    let mut rng = seed::rng(seed);
    loop {
        let coords: Vec<f64> = (0..ss.dim_perp())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        if coords.iter().any(|c: &f64| *c != 0.0) {
            return Direction::from_coords(ss, &coords);
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExtremalPair {
    pub theta_minus: ThetaVector,
    pub theta_plus: ThetaVector,
    pub alpha_plus: f64,
    pub alpha_minus: f64,
    pub direction: Direction,
    pub start: ThetaVector,
}

impl ExtremalPair {
    /// Signed position of the plus end along the direction.
    pub fn s_plus(&self) -> f64 {
        self.alpha_plus
    }

    /// Signed position of the minus end along the direction.
    pub fn s_minus(&self) -> f64 {
        -self.alpha_minus
    }

    /// Length of the segment, `s_plus - s_minus`.
    pub fn span(&self) -> f64 {
        self.alpha_plus + self.alpha_minus
    }

    pub fn dump(&self) -> ExtremalPairDump {
        ExtremalPairDump {
            safespace_fingerprint: self.direction.safespace_fingerprint.clone(),
            theta_plus: self.theta_plus.values().to_vec(),
            theta_minus: self.theta_minus.values().to_vec(),
            alpha_plus: self.alpha_plus,
            alpha_minus: self.alpha_minus,
            coords: self.direction.coords.clone(),
        }
    }
}

/// Reproducibility record of an extremal pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtremalPairDump {
    pub safespace_fingerprint: String,
    pub theta_plus: Vec<f64>,
    pub theta_minus: Vec<f64>,
    pub alpha_plus: f64,
    pub alpha_minus: f64,
    pub coords: Vec<f64>,
}

/// Largest step along `beta` keeping every cell nonnegative, and the cell
/// that blocks it.
fn ratio_test(start: &[f64], beta: &[f64]) -> Option<(f64, usize)> {
    start
        .iter()
        .zip(beta)
        .enumerate()
        .filter(|(_, (_, &b))| b < -BETA_ZERO)
        .map(|(i, (&t, &b))| (t / -b, i))
        .min_by(|a, b| a.0.total_cmp(&b.0))
}

fn move_along(start: &[f64], beta: &[f64], step: f64, blocking: usize) -> Vec<f64> {
    let mut out: Vec<f64> = start.iter().zip(beta).map(|(t, b)| t + step * b).collect();
    out[blocking] = 0.0;
    for v in &mut out {
        if *v < 0.0 && *v > -CLAMP {
            *v = 0.0;
        }
    }
    out
}

/// Maximal moves of `start` along `+beta` and `-beta`.
pub fn extremal_pair(start: &ThetaVector, dir: &Direction) -> Result<ExtremalPair> {
    let cells = start.schema().total_cells();
    if dir.beta.len() != cells {
        return Err(Error::SchemaMismatch(format!(
            "direction has {} cells, start has {cells}",
            dir.beta.len()
        )));
    }
    let neg: Vec<f64> = dir.beta.iter().map(|b| -b).collect();
    let (alpha_plus, block_plus) = ratio_test(start.values(), &dir.beta)
        .ok_or_else(|| Error::DegenerateStart("direction has no negative entries".into()))?;
    let (alpha_minus, block_minus) = ratio_test(start.values(), &neg)
        .ok_or_else(|| Error::DegenerateStart("direction has no positive entries".into()))?;
    if alpha_plus.is_nan() || alpha_minus.is_nan() || alpha_plus <= 0.0 || alpha_minus <= 0.0 {
        return Err(Error::DegenerateStart(format!(
            "start sits on the boundary in a blocking cell (alpha+ = {alpha_plus:e}, alpha- = {alpha_minus:e})"
        )));
    }
    let plus = move_along(start.values(), &dir.beta, alpha_plus, block_plus);
    let minus = move_along(start.values(), &neg, alpha_minus, block_minus);
    Ok(ExtremalPair {
        theta_plus: ThetaVector::new(start.schema().clone(), plus)?,
        theta_minus: ThetaVector::new(start.schema().clone(), minus)?,
        alpha_plus,
        alpha_minus,
        direction: dir.clone(),
        start: start.clone(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StartMode {
    /// Maximum-entropy distribution with the given safe statistics.
    MaxEntropy,
    /// Empirical distribution of a supplied dataset.
    FromDataset,
}

/// Tolerance when checking a dataset start against the card.
pub const PSI_TOL: f64 = 1e-10;

/// A distribution with the given safe statistics to move from.
pub fn starting_theta(
    ss: &SafeSpace,
    psi: &SafeStatistics,
    mode: StartMode,
    d: Option<&Dataset>,
) -> Result<ThetaVector> {
    ss.check_stats(psi)?;
    match mode {
        StartMode::MaxEntropy => {
            let targets = ss.marginals_of_psi(psi)?;
            Ok(fit_ipf(&targets, ss.schema(), 1e-12, 10_000)?.theta)
        }
        StartMode::FromDataset => {
            let d = d.ok_or_else(|| {
                Error::InvalidConfig("from-dataset start needs a dataset".into())
            })?;
            ss.check_schema(d.schema())?;
            let t = theta_of_dataset(d)?;
            let got = phi_of_theta(ss, &t)?;
            let dev = got
                .psi
                .iter()
                .zip(&psi.psi)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if dev > PSI_TOL {
                return Err(Error::PsiMismatch(dev));
            }
            Ok(t)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{realize_dataset, Schema};
    use crate::space::{build_safespace, Workload};

    fn space(cards: &[u32], k: usize) -> SafeSpace {
        let schema = Schema::from_cardinalities(cards).unwrap();
        let names: Vec<String> = (0..cards.len()).map(|i| format!("x{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        build_safespace(&Workload::all_k_way(schema, &refs, k).unwrap()).unwrap()
    }

    #[test]
    fn two_by_two_interaction_by_hand() {
        let ss = space(&[2, 2], 1);
        let start = ThetaVector::uniform(ss.schema().clone());
        let dir = Direction::from_coords(&ss, &[1.0]).unwrap();
        // orient so beta = (0.5, -0.5, -0.5, 0.5)
        let dir = if dir.beta[0] > 0.0 { dir } else { dir.negated() };
        for (a, b) in dir.beta.iter().zip([0.5, -0.5, -0.5, 0.5]) {
            assert!((a - b).abs() < 1e-12);
        }
        let pair = extremal_pair(&start, &dir).unwrap();
        assert!((pair.alpha_plus - 0.5).abs() < 1e-12);
        assert!((pair.alpha_minus - 0.5).abs() < 1e-12);
        assert_eq!(pair.s_minus(), -pair.alpha_minus);
        for (a, b) in pair.theta_plus.values().iter().zip([0.5, 0.0, 0.0, 0.5]) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in pair.theta_minus.values().iter().zip([0.0, 0.5, 0.5, 0.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        for t in [&pair.theta_plus, &pair.theta_minus] {
            for m in ss.workload().marginals() {
                let marg = m.project(ss.schema(), t.values());
                assert!((marg[0] - 0.5).abs() < 1e-12 && (marg[1] - 0.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_complement_dimension_gives_plus_minus_column() {
        let ss = space(&[2, 2], 1);
        let col: Vec<f64> = ss.perp_basis().column(0).iter().copied().collect();
        for seed in 0..10 {
            let d = random_direction(&ss, seed).unwrap();
            let sign = d.coords[0];
            assert!((sign.abs() - 1.0).abs() < 1e-15);
            for (a, b) in d.beta.iter().zip(&col) {
                assert!((a - sign * b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn random_directions_satisfy_invariants() {
        let ss = space(&[3, 2, 3], 2);
        for seed in 0..1000 {
            let d = random_direction(&ss, seed).unwrap();
            let norm = d.beta.iter().map(|b| b * b).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-10);
            assert!(d.beta.iter().sum::<f64>().abs() < 1e-10);
            let proj = ss.phi_basis().tr_mul(&nalgebra::DVector::from_column_slice(&d.beta));
            assert!(proj.amax() < 1e-10);
        }
        assert_eq!(random_direction(&ss, 5).unwrap(), random_direction(&ss, 5).unwrap());
    }

    #[test]
    fn zero_dimensional_complement() {
        let ss = space(&[2, 2], 2);
        assert_eq!(random_direction(&ss, 0).unwrap_err().code(), "phi-is-everything");
    }

    #[test]
    fn boundary_start_is_degenerate() {
        let ss = space(&[2, 2], 1);
        let dir = Direction::from_coords(&ss, &[1.0]).unwrap();
        let start = ThetaVector::new(ss.schema().clone(), vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        let err = extremal_pair(&start, &dir).unwrap_err();
        assert_eq!(err.code(), "degenerate-start");
    }

    #[test]
    fn unsafe_coordinates_all_change() {
        let ss = space(&[3, 3, 2], 2);
        let start = ThetaVector::uniform(ss.schema().clone());
        let dir = random_direction(&ss, 3).unwrap();
        let pair = extremal_pair(&start, &dir).unwrap();
        let plus = ss.perp_coords(pair.theta_plus.values());
        let minus = ss.perp_coords(pair.theta_minus.values());
        for i in 0..ss.dim_perp() {
            let diff = plus[i] - minus[i];
            assert!(diff != 0.0);
            assert!((diff - pair.span() * dir.coords[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn max_entropy_start() {
        let ss = space(&[3, 2, 2], 2);
        let uniform = ThetaVector::uniform(ss.schema().clone());
        let psi = phi_of_theta(&ss, &uniform).unwrap();
        let s = starting_theta(&ss, &psi, StartMode::MaxEntropy, None).unwrap();
        assert!(s.max_abs_diff(&uniform) < 1e-12);

        let vals: Vec<f64> = (0..12).map(|i| (i % 4 + 1) as f64 / 30.0).collect();
        let t = ThetaVector::new(ss.schema().clone(), vals).unwrap();
        let psi = phi_of_theta(&ss, &t).unwrap();
        let s = starting_theta(&ss, &psi, StartMode::MaxEntropy, None).unwrap();
        let got = phi_of_theta(&ss, &s).unwrap();
        for (a, b) in got.psi.iter().zip(&psi.psi) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn dataset_start() {
        let ss = space(&[3, 2, 2], 2);
        let vals: Vec<f64> = (0..12).map(|i| (i % 4 + 1) as f64 / 30.0).collect();
        let d = realize_dataset(&ThetaVector::new(ss.schema().clone(), vals).unwrap(), 300, 0).unwrap();
        let t = theta_of_dataset(&d).unwrap();
        let psi = phi_of_theta(&ss, &t).unwrap();
        let s = starting_theta(&ss, &psi, StartMode::FromDataset, Some(&d)).unwrap();
        assert_eq!(s, t);
        let other = realize_dataset(&ThetaVector::uniform(ss.schema().clone()), 300, 0).unwrap();
        let err = starting_theta(&ss, &psi, StartMode::FromDataset, Some(&other)).unwrap_err();
        assert_eq!(err.code(), "psi-mismatch");
    }

    #[test]
    fn dump_round_trip() {
        let ss = space(&[2, 3], 1);
        let pair = extremal_pair(
            &ThetaVector::uniform(ss.schema().clone()),
            &random_direction(&ss, 1).unwrap(),
        )
        .unwrap();
        let json = serde_json::to_string(&pair.dump()).unwrap();
        let back: ExtremalPairDump = serde_json::from_str(&json).unwrap();
        assert_eq!(back, pair.dump());
    }
}
