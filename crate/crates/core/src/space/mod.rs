//! Safe statistic spaces: marginal workloads, the span they define inside
//! cell space, and an orthonormal basis of its complement.

mod marginal;

pub use marginal::{marginal_of_theta, workload_matrix, Marginal, MarginalSpec, Workload};

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Schema, ThetaVector};
use crate::error::{Error, Result};
use crate::seed;

/// Largest cell count for which an explicit complement basis is computed by
/// dense SVD.
pub const DEFAULT_BASIS_CAP: usize = 4096;

/// Relative singular-value cutoff for the rank of a workload matrix.
pub const RANK_TOL: f64 = 1e-10;

/// Parameters of a randomly sampled complement sub-basis.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerpSampling {
    pub probes: Vec<MarginalSpec>,
    pub count: usize,
    pub seed: u64,
}

/// The safe space of a workload with orthonormal bases (as matrix columns) of
/// the space and of its complement.
#[derive(Clone, Debug)]
pub struct SafeSpace {
    workload: Workload,
    phi_basis: DMatrix<f64>,
    perp_basis: DMatrix<f64>,
    sampling: Option<PerpSampling>,
    fingerprint: String,
}

/// Serializable description from which a [`SafeSpace`] is rebuilt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SafeSpaceDescriptor {
    pub schema: Schema,
    pub workload: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<PerpSampling>,
    pub fingerprint: String,
}

/// Coordinates of the safe statistics in the safe-space basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SafeStatistics {
    pub safespace_fingerprint: String,
    pub psi: Vec<f64>,
}

fn fingerprint(workload: &Workload, sampling: Option<&PerpSampling>) -> String {
    let mut h = Sha256::new();
    h.update(workload.schema().fingerprint().as_bytes());
    h.update(serde_json::to_vec(&workload.canonical()).expect("serializable"));
    if let Some(s) = sampling {
        h.update(serde_json::to_vec(s).expect("serializable"));
    }
    hex::encode(&h.finalize()[..16])
}

/// Flips a vector so its largest-magnitude entry is positive.
fn canonical_sign(mut v: DVector<f64>) -> DVector<f64> {
    let mut best = 0usize;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() + 1e-12 {
            best = i;
        }
    }
    if !v.is_empty() && v[best] < 0.0 {
        v.neg_mut();
    }
    v
}

fn columns_to_matrix(rows: usize, cols: Vec<DVector<f64>>) -> DMatrix<f64> {
    if cols.is_empty() {
        DMatrix::zeros(rows, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Builds the safe space of `w` with an exact complement basis.
pub fn build_safespace(w: &Workload) -> Result<SafeSpace> {
    build_safespace_with_cap(w, DEFAULT_BASIS_CAP)
}

pub fn build_safespace_with_cap(w: &Workload, cap: usize) -> Result<SafeSpace> {
    let cells = w.schema().total_cells();
    w.schema().check_cap(cap)?;
    let mat = workload_matrix(w);
    // pad to at least square so the SVD yields a full right basis
    let padded = if mat.nrows() < cells {
        let mut p = DMatrix::zeros(cells, cells);
        p.view_mut((0, 0), (mat.nrows(), cells)).copy_from(&mat);
        p
    } else {
        mat
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let sigma_max = svd.singular_values.max();
    let cutoff = RANK_TOL * sigma_max;
    let mut phi = Vec::new();
    let mut perp = Vec::new();
    for (i, &s) in svd.singular_values.iter().enumerate() {
        let v = canonical_sign(v_t.row(i).transpose());
        if s > cutoff {
            phi.push(v);
        } else {
            perp.push(v);
        }
    }
    let ss = SafeSpace {
        workload: w.clone(),
        phi_basis: columns_to_matrix(cells, phi),
        perp_basis: columns_to_matrix(cells, perp),
        sampling: None,
        fingerprint: fingerprint(w, None),
    };
    ss.debug_check();
    Ok(ss)
}

/// Orthogonalizes `v` against the columns in `basis` (two passes).
fn orthogonalize(v: &mut DVector<f64>, basis: &[DVector<f64>]) {
    for _ in 0..2 {
        for b in basis {
            let c = b.dot(v);
            v.axpy(-c, b, 1.0);
        }
    }
}

/// Safe space whose complement basis is spanned by a random subset of
/// `count` probe-marginal indicator rows projected off the safe space.
pub fn sample_perp_subspace(
    w: &Workload,
    probe_specs: &[MarginalSpec],
    count: usize,
    seed: u64,
) -> Result<SafeSpace> {
    sample_perp_subspace_with_cap(w, probe_specs, count, seed, usize::MAX)
}

pub fn sample_perp_subspace_with_cap(
    w: &Workload,
    probe_specs: &[MarginalSpec],
    count: usize,
    seed: u64,
    cap: usize,
) -> Result<SafeSpace> {
    if count == 0 {
        return Err(Error::InvalidConfig("probe count must be positive".into()));
    }
    if probe_specs.is_empty() {
        return Err(Error::InvalidConfig("no probe marginals given".into()));
    }
    let schema = w.schema();
    schema.check_cap(cap)?;
    let cells = schema.total_cells();

    // safe-space basis from the sparse indicator rows
    let mut phi: Vec<DVector<f64>> = Vec::new();
    for m in w.marginals() {
        let groups = m.group_map(schema);
        for g in 0..m.n_groups {
            let mut v = DVector::from_iterator(
                cells,
                groups.iter().map(|&x| if x as usize == g { 1.0 } else { 0.0 }),
            );
            let norm0 = v.norm();
            orthogonalize(&mut v, &phi);
            let n = v.norm();
            if n > RANK_TOL * norm0 {
                phi.push(v / n);
            }
        }
    }

    let probes: Vec<Marginal> = probe_specs
        .iter()
        .map(|p| p.resolve(schema))
        .collect::<Result<_>>()?;
    let total_rows: usize = probes.iter().map(|p| p.n_groups).sum();
    let mut rng = seed::rng(seed);
    let mut picked: Vec<usize> = index::sample(&mut rng, total_rows, count.min(total_rows)).into_vec();
    picked.sort_unstable();

    let group_maps: Vec<Vec<u32>> = probes.iter().map(|p| p.group_map(schema)).collect();
    let mut perp: Vec<DVector<f64>> = Vec::new();
    for row in picked {
        let mut offset = 0;
        let mut which = 0;
        while row >= offset + probes[which].n_groups {
            offset += probes[which].n_groups;
            which += 1;
        }
        let g = (row - offset) as u32;
        let mut v = DVector::from_iterator(
            cells,
            group_maps[which].iter().map(|&x| if x == g { 1.0 } else { 0.0 }),
        );
        orthogonalize(&mut v, &phi);
        orthogonalize(&mut v, &perp);
        let n = v.norm();
        if n >= RANK_TOL {
            perp.push(v / n);
        }
    }
    if perp.is_empty() {
        return Err(Error::ProbesInsidePhi);
    }
    let sampling = PerpSampling {
        probes: probe_specs.to_vec(),
        count,
        seed,
    };
    let ss = SafeSpace {
        workload: w.clone(),
        phi_basis: columns_to_matrix(cells, phi),
        perp_basis: columns_to_matrix(cells, perp),
        fingerprint: fingerprint(w, Some(&sampling)),
        sampling: Some(sampling),
    };
    ss.debug_check();
    Ok(ss)
}

impl SafeSpace {
    fn debug_check(&self) {
        if cfg!(debug_assertions) && self.schema().total_cells() <= 512 {
            let cross = self.phi_basis.transpose() * &self.perp_basis;
            debug_assert!(cross.amax() < 1e-10, "bases not orthogonal: {}", cross.amax());
            for c in self.perp_basis.column_iter() {
                debug_assert!(c.sum().abs() < 1e-10, "complement column not zero-sum");
            }
        }
    }

    pub fn schema(&self) -> &Schema {
        self.workload.schema()
    }

    pub fn workload(&self) -> &Workload {
        &self.workload
    }

    /// Columns span the safe space.
    pub fn phi_basis(&self) -> &DMatrix<f64> {
        &self.phi_basis
    }

    /// Columns span the (possibly sampled) complement.
    pub fn perp_basis(&self) -> &DMatrix<f64> {
        &self.perp_basis
    }

    pub fn dim_phi(&self) -> usize {
        self.phi_basis.ncols()
    }

    pub fn dim_perp(&self) -> usize {
        self.perp_basis.ncols()
    }

    pub fn perp_is_sampled(&self) -> bool {
        self.sampling.is_some()
    }

    pub fn sampling(&self) -> Option<&PerpSampling> {
        self.sampling.as_ref()
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn descriptor(&self) -> SafeSpaceDescriptor {
        SafeSpaceDescriptor {
            schema: self.schema().clone(),
            workload: self.workload.to_names(),
            sampling: self.sampling.clone(),
            fingerprint: self.fingerprint.clone(),
        }
    }

    pub fn check_schema(&self, schema: &Schema) -> Result<()> {
        if self.schema().compatible(schema) {
            Ok(())
        } else {
            Err(Error::FingerprintMismatch {
                expected: self.schema().fingerprint(),
                found: schema.fingerprint(),
            })
        }
    }

    pub fn check_stats(&self, s: &SafeStatistics) -> Result<()> {
        if s.safespace_fingerprint != self.fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: self.fingerprint.clone(),
                found: s.safespace_fingerprint.clone(),
            });
        }
        if s.psi.len() != self.dim_phi() {
            return Err(Error::InvalidConfig(format!(
                "psi has {} coordinates, safe space has dimension {}",
                s.psi.len(),
                self.dim_phi()
            )));
        }
        Ok(())
    }

    /// Cell-space vector `phi_basis * psi`: the projection onto the safe space
    /// of any distribution with these safe statistics.
    pub fn phi_point(&self, psi: &SafeStatistics) -> Result<Vec<f64>> {
        self.check_stats(psi)?;
        Ok((&self.phi_basis * DVector::from_column_slice(&psi.psi))
            .iter()
            .copied()
            .collect())
    }

    /// Workload marginal tables implied by the safe statistics.
    pub fn marginals_of_psi(&self, psi: &SafeStatistics) -> Result<Vec<(MarginalSpec, Vec<f64>)>> {
        let point = self.phi_point(psi)?;
        Ok(self
            .workload
            .marginals()
            .iter()
            .map(|m| (m.spec.clone(), m.project(self.schema(), &point)))
            .collect())
    }

    /// Cell-space vector of complement coordinates.
    pub fn perp_vector(&self, coords: &[f64]) -> Vec<f64> {
        (&self.perp_basis * DVector::from_column_slice(coords))
            .iter()
            .copied()
            .collect()
    }

    /// `perp_basis^T v` for any cell-indexed vector.
    pub fn perp_coords(&self, v: &[f64]) -> Vec<f64> {
        self.perp_basis
            .tr_mul(&DVector::from_column_slice(v))
            .iter()
            .copied()
            .collect()
    }
}

impl SafeSpaceDescriptor {
    pub fn rebuild(&self, cap: usize) -> Result<SafeSpace> {
        let w = Workload::from_names(self.schema.clone(), self.workload.clone())?;
        let ss = match &self.sampling {
            None => build_safespace_with_cap(&w, cap)?,
            Some(s) => sample_perp_subspace(&w, &s.probes, s.count, s.seed)?,
        };
        if ss.fingerprint != self.fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: self.fingerprint.clone(),
                found: ss.fingerprint,
            });
        }
        Ok(ss)
    }
}

pub fn phi_of_theta(ss: &SafeSpace, theta: &ThetaVector) -> Result<SafeStatistics> {
    ss.check_schema(theta.schema())?;
    let psi = ss
        .phi_basis
        .tr_mul(&DVector::from_column_slice(theta.values()))
        .iter()
        .copied()
        .collect();
    Ok(SafeStatistics {
        safespace_fingerprint: ss.fingerprint.clone(),
        psi,
    })
}

pub fn perp_component(ss: &SafeSpace, theta: &ThetaVector) -> Result<Vec<f64>> {
    ss.check_schema(theta.schema())?;
    Ok(ss.perp_coords(theta.values()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(cards: &[u32]) -> Schema {
        Schema::from_cardinalities(cards).unwrap()
    }

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("x{i}")).collect()
    }

    fn kway(cards: &[u32], k: usize) -> Workload {
        let n = names(cards.len());
        let refs: Vec<&str> = n.iter().map(String::as_str).collect();
        Workload::all_k_way(s(cards), &refs, k).unwrap()
    }

    fn max_dev_from_identity(m: &DMatrix<f64>) -> f64 {
        let g = m.transpose() * m;
        (g - DMatrix::identity(m.ncols(), m.ncols())).amax()
    }

    #[test]
    fn binary_triple_one_way_dims() {
        let ss = build_safespace(&kway(&[2, 2, 2], 1)).unwrap();
        assert_eq!((ss.dim_phi(), ss.dim_perp()), (4, 4));
        assert!(!ss.perp_is_sampled());
    }

    #[test]
    fn ten_ten_two_pairwise_complement_is_81() {
        let ss = build_safespace(&kway(&[10, 10, 2], 2)).unwrap();
        assert_eq!(ss.dim_perp(), 81);
        assert_eq!(ss.dim_phi() + ss.dim_perp(), 200);
    }

    #[test]
    fn full_marginal_leaves_nothing() {
        let ss = build_safespace(&kway(&[2, 3, 2], 3)).unwrap();
        assert_eq!(ss.dim_perp(), 0);
    }

    #[test]
    fn bases_are_orthonormal_and_complement_is_zero_sum() {
        for (cards, k) in [(vec![3, 4, 2], 2), (vec![2, 2, 2, 2], 2), (vec![5, 3], 1)] {
            let ss = build_safespace(&kway(&cards, k)).unwrap();
            assert!(max_dev_from_identity(ss.phi_basis()) < 1e-10);
            assert!(max_dev_from_identity(ss.perp_basis()) < 1e-10);
            assert!((ss.phi_basis().transpose() * ss.perp_basis()).amax() < 1e-10);
            for c in ss.perp_basis().column_iter() {
                assert!(c.sum().abs() < 1e-10);
            }
        }
    }

    #[test]
    fn cap_enforced() {
        let err = build_safespace_with_cap(&kway(&[10, 10, 2], 2), 100).unwrap_err();
        assert_eq!(err.code(), "domain-too-large");
    }

    #[test]
    fn psi_invariant_along_complement() {
        let ss = build_safespace(&kway(&[2, 3, 2], 2)).unwrap();
        let t = ThetaVector::uniform(s(&[2, 3, 2]));
        let b: Vec<f64> = ss.perp_basis().column(0).iter().copied().collect();
        let moved: Vec<f64> = t.values().iter().zip(&b).map(|(x, y)| x + 0.02 * y).collect();
        let t2 = ThetaVector::new(s(&[2, 3, 2]), moved).unwrap();
        let a = phi_of_theta(&ss, &t).unwrap();
        let c = phi_of_theta(&ss, &t2).unwrap();
        for (x, y) in a.psi.iter().zip(&c.psi) {
            assert!((x - y).abs() < 1e-12);
        }
        let pa = perp_component(&ss, &t).unwrap();
        let pc = perp_component(&ss, &t2).unwrap();
        for (i, (x, y)) in pa.iter().zip(&pc).enumerate() {
            let want = if i == 0 { 0.02 } else { 0.0 };
            assert!((y - x - want).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_marginals_recovered_from_psi() {
        let ss = build_safespace(&kway(&[2, 2], 1)).unwrap();
        let psi = phi_of_theta(&ss, &ThetaVector::uniform(s(&[2, 2]))).unwrap();
        for (_, m) in ss.marginals_of_psi(&psi).unwrap() {
            assert!((m[0] - 0.5).abs() < 1e-12 && (m[1] - 0.5).abs() < 1e-12);
        }
        // uniform lies in the safe space
        assert!(perp_component(&ss, &ThetaVector::uniform(s(&[2, 2])))
            .unwrap()
            .iter()
            .all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn workload_recoverable_from_psi_by_least_squares() {
        let schema = s(&[3, 2, 3]);
        let w = kway(&[3, 2, 3], 2);
        let ss = build_safespace(&w).unwrap();
        let vals: Vec<f64> = (0..18).map(|i| (i * 7 % 11) as f64 + 1.0).collect();
        let sum: f64 = vals.iter().sum();
        let t = ThetaVector::new(schema, vals.iter().map(|v| v / sum).collect()).unwrap();
        let psi = phi_of_theta(&ss, &t).unwrap();
        // W theta = (W Phi) psi exactly; fit psi back from W theta by least squares
        let wm = workload_matrix(&w);
        let a = &wm * ss.phi_basis();
        let target = &wm * DVector::from_column_slice(t.values());
        let fit = a.clone().svd(true, true).solve(&target, 1e-12).unwrap();
        let recon = &a * &fit;
        assert!((recon - &target).amax() < 1e-10);
        let psi_vec = DVector::from_column_slice(&psi.psi);
        assert!((&a * psi_vec - target).amax() < 1e-10);
    }

    // Explicit 4x4 projector onto the complement of both 1-way marginals:
    // I - Pi, Pi = projection onto span{rows of W}. For a 2x2 table the
    // complement is spanned by (1,-1,-1,1)/2. With row margin p = t00 + t01 and
    // column margin q = t00 + t10 the coordinate (t00 - t01 - t10 + t11)/2
    // equals 2 cov + (1 - 2p)(1 - 2q)/2, cov = t00 - p q.
    #[test]
    fn interaction_coordinate_is_scaled_covariance() {
        let ss = build_safespace(&kway(&[2, 2], 1)).unwrap();
        assert_eq!(ss.dim_perp(), 1);
        let wm = workload_matrix(&kway(&[2, 2], 1));
        let pinv = (&wm * wm.transpose()).pseudo_inverse(1e-12).unwrap();
        let proj = DMatrix::identity(4, 4) - wm.transpose() * pinv * &wm;
        let check = |vals: [f64; 4]| {
            let t = ThetaVector::new(s(&[2, 2]), vals.to_vec()).unwrap();
            let coord = perp_component(&ss, &t).unwrap()[0];
            let perp_part = &proj * DVector::from_column_slice(t.values());
            assert!((perp_part.norm() - coord.abs()).abs() < 1e-12);
            let (p, q) = (vals[0] + vals[1], vals[0] + vals[2]);
            let cov = vals[0] - p * q;
            let want = 2.0 * cov + (1.0 - 2.0 * p) * (1.0 - 2.0 * q) / 2.0;
            assert!((coord.abs() - want.abs()).abs() < 1e-12, "{coord} vs {want}");
            coord
        };
        // product distribution: covariance zero, only the margin term remains
        let (p, q) = (0.3, 0.6);
        check([p * q, p * (1.0 - q), (1.0 - p) * q, (1.0 - p) * (1.0 - q)]);
        // uniform margins: exactly twice the covariance
        let c = check([0.35, 0.15, 0.15, 0.35]);
        assert!((c.abs() - 2.0 * (0.35 - 0.25)).abs() < 1e-12);
        check([0.4, 0.1, 0.2, 0.3]);
    }

    #[test]
    fn fingerprint_mismatch_detected() {
        let ss = build_safespace(&kway(&[2, 2], 1)).unwrap();
        let err = phi_of_theta(&ss, &ThetaVector::uniform(s(&[4]))).unwrap_err();
        assert_eq!(err.code(), "fingerprint-mismatch");
        let mut psi = phi_of_theta(&ss, &ThetaVector::uniform(s(&[2, 2]))).unwrap();
        psi.safespace_fingerprint = "bogus".into();
        assert!(ss.phi_point(&psi).is_err());
    }

    #[test]
    fn sampled_complement() {
        let w = kway(&[10, 10, 2], 2);
        let probes = vec![MarginalSpec::new(["x0", "x1", "x2"])];
        let ss = sample_perp_subspace(&w, &probes, 200, 11).unwrap();
        assert!(ss.perp_is_sampled());
        assert!(ss.dim_perp() <= 81 && ss.dim_perp() > 0);
        assert_eq!(ss.dim_phi(), 200 - 81);
        assert!(max_dev_from_identity(ss.perp_basis()) < 1e-10);
        assert!((ss.phi_basis().transpose() * ss.perp_basis()).amax() < 1e-10);
        let again = sample_perp_subspace(&w, &probes, 200, 11).unwrap();
        assert_eq!(again.perp_basis(), ss.perp_basis());
        assert_eq!(again.fingerprint(), ss.fingerprint());
        let small = sample_perp_subspace(&w, &probes, 20, 11).unwrap();
        assert_eq!(small.dim_perp(), 20);
        assert_ne!(small.fingerprint(), ss.fingerprint());
    }

    #[test]
    fn probes_inside_phi() {
        let w = kway(&[3, 3, 2], 2);
        let err = sample_perp_subspace(&w, &w.specs(), 50, 1).unwrap_err();
        assert_eq!(err.code(), "probes-inside-phi");
    }

    #[test]
    fn descriptor_round_trip() {
        let ss = build_safespace(&kway(&[3, 2, 2], 2)).unwrap();
        let json = serde_json::to_string(&ss.descriptor()).unwrap();
        let d: SafeSpaceDescriptor = serde_json::from_str(&json).unwrap();
        let back = d.rebuild(DEFAULT_BASIS_CAP).unwrap();
        assert_eq!(back.fingerprint(), ss.fingerprint());
        assert_eq!(back.perp_basis(), ss.perp_basis());
    }
}
