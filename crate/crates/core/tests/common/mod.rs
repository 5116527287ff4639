//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use safesynth::dataset::{Schema, ThetaVector};
use statrs::distribution::{ContinuousCDF, StudentsT};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("x{i}")).collect()
}

/// Strictly positive random distribution, cells bounded away from zero.
pub fn interior_theta(schema: &Schema, r: &mut ChaCha8Rng) -> ThetaVector {
    let vals: Vec<f64> = (0..schema.total_cells()).map(|_| r.random_range(0.2..1.0)).collect();
    let s: f64 = vals.iter().sum();
    ThetaVector::new(schema.clone(), vals.iter().map(|v| v / s).collect()).unwrap()
}

/// Every record of the domain in cell order (last attribute fastest).
pub fn enumerate_cells(cards: &[u32]) -> Vec<Vec<u32>> {
    let mut out = vec![vec![]];
    for &c in cards {
        out = out
            .into_iter()
            .flat_map(|p: Vec<u32>| {
                (0..c).map(move |v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    out
}

/// 0/1 indicator rows of the marginals over `attrs` subsets.
pub fn indicator_rows(cards: &[u32], marginals: &[Vec<usize>]) -> Vec<Vec<u64>> {
    let cells = enumerate_cells(cards);
    let mut rows = Vec::new();
    for m in marginals {
        let sub: Vec<u32> = m.iter().map(|&i| cards[i]).collect();
        for key in enumerate_cells(&sub) {
            rows.push(
                cells
                    .iter()
                    .map(|c| m.iter().zip(&key).all(|(&i, &k)| c[i] == k) as u64)
                    .collect(),
            );
        }
    }
    rows
}

const P: u64 = (1 << 61) - 1;

fn mulmod(a: u64, b: u64) -> u64 {
    ((a as u128 * b as u128) % P as u128) as u64
}

fn powmod(mut a: u64, mut e: u64) -> u64 {
    let mut r = 1;
    while e > 0 {
        if e & 1 == 1 {
            r = mulmod(r, a);
        }
        a = mulmod(a, a);
        e >>= 1;
    }
    r
}

/// Rank over the prime field of order 2^61 - 1 by Gaussian elimination.
pub fn modular_rank(mut rows: Vec<Vec<u64>>) -> usize {
    let ncols = rows.first().map_or(0, Vec::len);
    let mut rank = 0;
    for col in 0..ncols {
        let Some(piv) = (rank..rows.len()).find(|&r| !rows[r][col].is_multiple_of(P)) else {
            continue;
        };
        rows.swap(rank, piv);
        let inv = powmod(rows[rank][col], P - 2);
        for v in rows[rank].iter_mut() {
            *v = mulmod(*v, inv);
        }
        let pivot_row = rows[rank].clone();
        for (r, row) in rows.iter_mut().enumerate() {
            if r != rank && row[col] != 0 {
                let f = row[col];
                for (x, &p) in row.iter_mut().zip(&pivot_row) {
                    *x = (*x + P - mulmod(f, p)) % P;
                }
            }
        }
        rank += 1;
    }
    rank
}

/// Largest `t` with `start + t * beta >= 0`, by a scan over a grid followed
/// by bisection of the bracketing interval.
pub fn grid_alpha(start: &[f64], beta: &[f64]) -> f64 {
    let feasible = |t: f64| start.iter().zip(beta).all(|(s, b)| s + t * b >= -1e-15);
    let mut hi = 1e-3;
    while feasible(hi) {
        hi *= 2.0;
        assert!(hi < 1e6, "unbounded direction");
    }
    let steps = 2000;
    let mut lo = 0.0;
    for k in 1..=steps {
        let t = hi * k as f64 / steps as f64;
        if !feasible(t) {
            hi = t;
            break;
        }
        lo = t;
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum()
}

/// Maximum-entropy table on a 2x2x2 domain matching all three 2-way
/// marginals of `theta`. The feasible set is the segment
/// `theta + t * parity`; entropy is maximized along it by golden section.
pub fn maxent_222(theta: &[f64]) -> Vec<f64> {
    let parity: Vec<f64> = (0..8)
        .map(|c: usize| if c.count_ones().is_multiple_of(2) { 1.0 } else { -1.0 })
        .collect();
    let at = |t: f64| -> Vec<f64> { theta.iter().zip(&parity).map(|(a, s)| a + t * s).collect() };
    let (lo, hi) = (-grid_alpha(theta, &parity.iter().map(|s| -s).collect::<Vec<_>>()), grid_alpha(theta, &parity));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if entropy(&at(c)) > entropy(&at(d)) {
            b = d;
        } else {
            a = c;
        }
    }
    at(0.5 * (a + b))
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Welch p-value computed with statrs' Student t distribution.
pub fn statrs_welch(x: &[f64], y: &[f64]) -> f64 {
    let var = |v: &[f64]| {
        let m = mean(v);
        v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    };
    let (nx, ny) = (x.len() as f64, y.len() as f64);
    let (a, b) = (var(x) / nx, var(y) / ny);
    let t = (mean(x) - mean(y)) / (a + b).sqrt();
    let df = (a + b).powi(2) / (a * a / (nx - 1.0) + b * b / (ny - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).unwrap();
    2.0 * dist.cdf(-t.abs())
}

/// Kolmogorov-Smirnov distance of a sample from Uniform(0, 1).
pub fn ks_uniform(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| (x - i as f64 / n).abs().max(((i + 1) as f64 / n - x).abs()))
        .fold(0.0, f64::max)
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
