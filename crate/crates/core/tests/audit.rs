mod common;

use common::*;
use proptest::prelude::*;
use safesynth::audit::{audit_with_space, estimate_coefficients, g_stat, AuditConfig, Verdict};
use safesynth::dataset::{realize_dataset, Dataset, Schema};
use safesynth::extremal::{extremal_pair, random_direction, Direction};
use safesynth::generators::{make_card, Generator, GeneratorCard, GeneratorConfig};
use safesynth::space::{build_safespace, SafeSpace, Workload};

fn space(cards: &[u32]) -> SafeSpace {
    let schema = Schema::from_cardinalities(cards).unwrap();
    let n = names(cards.len());
    let refs: Vec<&str> = n.iter().map(String::as_str).collect();
    build_safespace(&Workload::all_k_way(schema, &refs, 2).unwrap()).unwrap()
}

fn card_for(ss: &SafeSpace, seed: u64) -> GeneratorCard {
    let t = interior_theta(ss.schema(), &mut rng(seed));
    make_card(&realize_dataset(&t, 50_000, seed).unwrap(), ss, &GeneratorConfig::ipf()).unwrap()
}

fn reports(ss: &SafeSpace, card: &GeneratorCard, gen: &dyn Generator, base: u64) -> Vec<safesynth::audit::AuditReport> {
    (0..20)
        .map(|i| {
            let cfg = AuditConfig { direction_seed: base + i, ..AuditConfig::default() };
            audit_with_space(card, ss, gen, None, &cfg).unwrap()
        })
        .collect()
}

#[test]
fn verdict_rates_on_a_small_schema() {
    let ss = space(&[4, 3, 2]);
    let card = card_for(&ss, 1);
    let honest = reports(&ss, &card, &GeneratorConfig::ipf(), 0);
    assert!(honest.iter().filter(|r| r.p_value > 0.05).count() >= 17);
    for r in &honest {
        assert_eq!(r.verdict == Verdict::ViolationDetected, r.p_value < r.config.alpha_level);
    }
    // the two honest sample sets overlap: mean gap under two standard errors
    let overlapping = honest
        .iter()
        .filter(|r| {
            let se = |v: &[f64]| {
                let m = mean(v);
                v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / ((v.len() - 1) * v.len()) as f64
            };
            let gap = (mean(&r.samples_plus) - mean(&r.samples_minus)).abs();
            gap < 2.0 * (se(&r.samples_plus) + se(&r.samples_minus)).sqrt()
        })
        .count();
    assert!(overlapping >= 17, "{overlapping}");

    for gen in [GeneratorConfig::ipf_dishonest(None), GeneratorConfig::empirical()] {
        let rs = reports(&ss, &card, &gen, 100);
        assert!(rs.iter().filter(|r| r.p_value < 1e-6).count() >= 19);
        assert!(rs.iter().all(|r| r.verdict == Verdict::ViolationDetected));
    }
}

#[test]
fn report_logs_seeds_and_alphas() {
    let ss = space(&[3, 3, 2]);
    let card = card_for(&ss, 2);
    let r = audit_with_space(&card, &ss, &GeneratorConfig::ipf(), None, &AuditConfig::default()).unwrap();
    assert_eq!(r.log.probe_pairs.len(), 1);
    assert!(r.log.probe_pairs[0].direction_seed.is_some());
    assert!(r.log.probe_pairs[0].alpha_plus > 0.0);
    assert!(r.log.critical_pair.as_ref().unwrap().alpha_minus > 0.0);
    let seeds: std::collections::BTreeSet<u64> = r
        .log
        .probe_samples
        .iter()
        .chain(&r.log.test_samples)
        .map(|s| s.sample_seed)
        .collect();
    assert_eq!(seeds.len(), 40);
    let multi = AuditConfig { probes: 3, ..AuditConfig::default() };
    let r = audit_with_space(&card, &ss, &GeneratorConfig::empirical(), None, &multi).unwrap();
    assert_eq!(r.log.probe_pairs.len(), 3);
    assert_eq!(r.verdict, Verdict::ViolationDetected);
}

// With the identity generator, each coordinate estimate is the probe
// coordinate plus the difference of two means of K1 perp coordinates of
// n-record empirical tables, over the span. Each such coordinate has
// variance at most max(theta) / n.
#[test]
fn identity_generator_recovers_the_probe() {
    let ss = space(&[4, 3, 2]);
    let cfg = AuditConfig::default();
    for seed in 0..3u64 {
        let start = interior_theta(ss.schema(), &mut rng(seed));
        let dir = random_direction(&ss, 10 + seed).unwrap();
        let pair = extremal_pair(&start, &dir).unwrap();
        let est = estimate_coefficients(&GeneratorConfig::empirical(), &pair, &ss, &cfg).unwrap();
        let top = pair.theta_plus.values().iter().chain(pair.theta_minus.values()).copied().fold(0.0, f64::max);
        let sd = (2.0 * top / (cfg.k1 as f64 * cfg.n_sym as f64)).sqrt() / est.s_span;
        for (a, c) in est.a_hat.iter().zip(&dir.coords) {
            assert!((a - c).abs() <= 5.0 * sd, "{a} vs {c}, sd {sd}");
        }
    }
    let mut e1 = vec![0.0; ss.dim_perp()];
    e1[0] = 1.0;
    let dir = Direction::from_coords(&ss, &e1).unwrap();
    let pair = extremal_pair(&interior_theta(ss.schema(), &mut rng(9)), &dir).unwrap();
    let est = estimate_coefficients(&GeneratorConfig::empirical(), &pair, &ss, &cfg).unwrap();
    assert!((est.a_hat[0] - 1.0).abs() < 0.05);
    assert!(est.a_hat[1..].iter().all(|a| a.abs() < 0.05));
}

#[test]
fn g_stat_is_linear_and_blind_to_safe_changes() {
    let ss = space(&[2, 2, 3]);
    let dir = random_direction(&ss, 4).unwrap();
    let schema = ss.schema().clone();
    let d1 = Dataset::from_cells(schema.clone(), &[0, 1, 1, 5, 7, 11, 2]).unwrap();
    let d2 = Dataset::from_cells(schema.clone(), &[3, 3, 4]).unwrap();
    let joint = g_stat(&dir, &d1.concat(&d2).unwrap()).unwrap();
    let weighted = (7.0 * g_stat(&dir, &d1).unwrap() + 3.0 * g_stat(&dir, &d2).unwrap()) / 10.0;
    assert!((joint - weighted).abs() < 1e-15);

    // move along a safe direction: the workload's row space
    let t = interior_theta(&schema, &mut rng(1));
    let phi0: Vec<f64> = ss.phi_basis().column(0).iter().copied().collect();
    let moved: Vec<f64> = t.values().iter().zip(&phi0).map(|(a, b)| a + 1e-3 * b).collect();
    let a: f64 = t.values().iter().zip(&dir.beta).map(|(x, y)| x * y).sum();
    let b: f64 = moved.iter().zip(&dir.beta).map(|(x, y)| x * y).sum();
    assert!((a - b).abs() < 1e-15);
}

proptest! {
    #[test]
    fn g_stat_matches_brute_force(cards in prop::collection::vec(2u32..5, 2..4), cells in prop::collection::vec(0usize..64, 1..50), seed in any::<u64>()) {
        let total: u32 = cards.iter().product();
        prop_assume!(total <= 64);
        let ss = space(&cards);
        prop_assume!(ss.dim_perp() > 0);
        let dir = random_direction(&ss, seed).unwrap();
        let cells: Vec<usize> = cells.iter().map(|c| c % total as usize).collect();
        let d = Dataset::from_cells(ss.schema().clone(), &cells).unwrap();
        let mut want = 0.0;
        for &c in &cells {
            want += dir.beta[c] / cells.len() as f64;
        }
        prop_assert!((g_stat(&dir, &d).unwrap() - want).abs() < 1e-12);
    }
}
