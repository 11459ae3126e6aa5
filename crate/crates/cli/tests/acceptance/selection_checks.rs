use arcpool_core::acquisition::{coreset_greedy, coreset_scores, top_k_select};
use arcpool_core::hypersphere::l2_normalize;
use arcpool_core::{ConfidenceScore, UnitVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::{ensure, err, gauss, rng, Check};

fn sort_and_truncate(scores: &[ConfidenceScore], k: usize) -> Vec<u64> {
    let mut all = scores.to_vec();
    all.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(a.sample_id.cmp(&b.sample_id))
    });
    all.truncate(k);
    all.into_iter().map(|s| s.sample_id).collect()
}

fn random_pool(r: &mut ChaCha8Rng, n: usize, tied: bool) -> Vec<ConfidenceScore> {
    let mut ids: Vec<u64> = (0..n as u64)
        .map(|i| i * 7 + r.random_range(0..7))
        .collect();
    ids.shuffle(r);
    ids.into_iter()
        .map(|sample_id| ConfidenceScore {
            sample_id,
            // quantised scores force many ties
            score: if tied {
                r.random_range(0..25) as f64 / 8.0 - 1.5
            } else {
                r.random_range(-1.0..1.0)
            },
        })
        .collect()
}

/// Max-min scan recomputed from scratch at every pick.
fn brute_force_kcenter(labeled: &[Vec<f64>], pool: &[(u64, Vec<f64>)], k: usize) -> Vec<u64> {
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let mut centers: Vec<Vec<f64>> = labeled.to_vec();
    let mut picked: Vec<u64> = Vec::new();
    for _ in 0..k {
        let mut best: Option<(f64, u64, usize)> = None;
        for (i, (id, p)) in pool.iter().enumerate() {
            if picked.contains(id) {
                continue;
            }
            let d = centers
                .iter()
                .map(|c| dist(p, c))
                .fold(f64::INFINITY, f64::min);
            let better = match best {
                None => true,
                Some((bd, bid, _)) => d > bd || (d == bd && *id < bid),
            };
            if better {
                best = Some((d, *id, i));
            }
        }
        let (_, id, i) = best.unwrap();
        picked.push(id);
        centers.push(pool[i].1.clone());
    }
    picked
}

fn unit_points(r: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| l2_normalize(&gauss(r, dim, 1.0)).unwrap().into_inner())
        .collect()
}

fn as_units(points: &[Vec<f64>]) -> Vec<UnitVector> {
    points.iter().map(|p| l2_normalize(p).unwrap()).collect()
}

pub fn selection_oracle() -> Check {
    let mut r = rng(0x5e1);
    let mut tied_pools = 0;
    for trial in 0..100 {
        let tied = trial % 2 == 0;
        tied_pools += tied as usize;
        let pool = random_pool(&mut r, 10_000, tied);
        let k = match trial {
            0 => 0,
            1 => 10_000,
            _ => r.random_range(1..10_000),
        };
        let got = top_k_select(&pool, k).map_err(err)?;
        ensure!(
            got == sort_and_truncate(&pool, k),
            "top-k mismatch on pool {trial} (k = {k})"
        );
    }
    ensure!(
        top_k_select(&random_pool(&mut r, 10, false), 11).is_err(),
        "k above the pool size must be rejected"
    );

    let mut coreset_pools = 0;
    for trial in 0..100 {
        let n = r.random_range(1..=200);
        let dim = r.random_range(2..6);
        let mut points = unit_points(&mut r, n, dim);
        let n_labeled = if trial % 5 == 0 {
            0
        } else {
            r.random_range(1..20)
        };
        let mut labeled = unit_points(&mut r, n_labeled, dim);
        // duplicated points give exact distance ties
        for _ in 0..n / 10 {
            let a = r.random_range(0..n);
            let b = r.random_range(0..n);
            points[b] = points[a].clone();
        }
        if !labeled.is_empty() && n > 1 {
            labeled[0] = points[r.random_range(0..n)].clone();
        }
        let mut ids: Vec<u64> = (0..n as u64).map(|i| i * 3).collect();
        ids.shuffle(&mut r);
        let pool: Vec<(u64, UnitVector)> = ids.into_iter().zip(as_units(&points)).collect();
        let labeled_units = as_units(&labeled);
        // the oracle sees exactly the coordinates the library sees
        let raw: Vec<(u64, Vec<f64>)> = pool
            .iter()
            .map(|(id, u)| (*id, u.as_slice().to_vec()))
            .collect();
        let labeled: Vec<Vec<f64>> = labeled_units
            .iter()
            .map(|u| u.as_slice().to_vec())
            .collect();
        let k = r.random_range(0..=n);
        let got = coreset_greedy(&labeled_units, &pool, k).map_err(err)?;
        let want = brute_force_kcenter(&labeled, &raw, k);
        ensure!(
            got == want,
            "coreset mismatch on pool {trial} (n = {n}, k = {k})"
        );

        let scores = coreset_scores(&labeled_units, &pool);
        for (s, (id, p)) in scores.iter().zip(&raw) {
            let d = labeled
                .iter()
                .map(|c| {
                    c.iter()
                        .zip(p)
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            ensure!(
                s.sample_id == *id && s.score == d,
                "coreset score mismatch for id {id}"
            );
        }
        coreset_pools += 1;
    }
    Ok(format!(
        "100 top-k pools of 10^4 ({tied_pools} with ties), {coreset_pools} coreset pools <= 200, 0 mismatches"
    ))
}
