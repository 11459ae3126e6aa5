//! Acquisition strategies: which unlabeled samples to send to the oracle.
//!
//! Every score follows the same convention: higher means "label this first".

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{HyperParams, ModelParams};
use crate::error::{Error, Result};
use crate::hypersphere::UnitVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Smallest gap between the two most probable classes.
    Margin,
    /// Confusion across all classes: `Σ_c (1 + o_c − max o)`.
    Entropy,
    /// Lowest maximum probability.
    Max,
    Random,
    /// Greedy k-center in embedding space.
    Coreset,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Margin,
        Strategy::Entropy,
        Strategy::Max,
        Strategy::Random,
        Strategy::Coreset,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Margin => "margin",
            Strategy::Entropy => "entropy",
            Strategy::Max => "max",
            Strategy::Random => "random",
            Strategy::Coreset => "coreset",
        }
    }

    /// Whether the strategy ranks samples from class probabilities alone.
    pub fn is_probability_based(self) -> bool {
        matches!(self, Strategy::Margin | Strategy::Entropy | Strategy::Max)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::UnknownStrategy(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceScore {
    pub sample_id: u64,
    pub score: f64,
}

/// `−|o_c0 − o_c1|` for the two largest probabilities.
pub fn margin_confidence(probs: &[f64]) -> Result<f64> {
    if probs.len() < 2 {
        return Err(Error::TooFewClasses {
            required: 2,
            actual: probs.len(),
        });
    }
    let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &p in probs {
        if p > first {
            second = first;
            first = p;
        } else if p > second {
            second = p;
        }
    }
    Ok(-(first - second).abs())
}

fn max_prob(probs: &[f64]) -> f64 {
    probs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `Σ_c (1 + o_c − max_c o_c)`, in `[1, C]`.
pub fn entropy_confidence(probs: &[f64]) -> f64 {
    let top = max_prob(probs);
    probs.iter().map(|&p| 1.0 + p - top).sum()
}

/// `−max_c o_c`.
pub fn max_confidence(probs: &[f64]) -> f64 {
    -max_prob(probs)
}

/// Confidence of one probability row under a probability-based strategy.
pub fn confidence(strategy: Strategy, probs: &[f64]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::TooFewClasses {
            required: 1,
            actual: 0,
        });
    }
    match strategy {
        Strategy::Margin => margin_confidence(probs),
        Strategy::Entropy => Ok(entropy_confidence(probs)),
        Strategy::Max => Ok(max_confidence(probs)),
        Strategy::Random | Strategy::Coreset => Err(Error::InvalidConfig(format!(
            "{strategy} does not score from probabilities"
        ))),
    }
}

/// Scores every pool sample with a probability-based strategy, in pool order.
pub fn score_pool(
    strategy: Strategy,
    model: &ModelParams,
    hp: &HyperParams,
    pool: &[(u64, &[f64])],
) -> Result<Vec<ConfidenceScore>> {
    pool.par_iter()
        .map(|&(id, x)| {
            let probs = model.probs(x, hp)?;
            Ok(ConfidenceScore {
                sample_id: id,
                score: confidence(strategy, &probs)?,
            })
        })
        .collect()
}

/// I.i.d. uniform scores in `[0, 1)`, one per id in the given order.
pub fn random_scores(pool_ids: &[u64], seed: u64) -> Vec<ConfidenceScore> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool_ids
        .iter()
        .map(|&id| ConfidenceScore {
            sample_id: id,
            score: rng.random::<f64>(),
        })
        .collect()
}

/// Ranking order: score descending, then id ascending.
pub fn rank_order(a: &ConfidenceScore, b: &ConfidenceScore) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.sample_id.cmp(&b.sample_id))
}

/// The `k` highest-scoring ids, sorted by score descending then id ascending.
pub fn top_k_select(scores: &[ConfidenceScore], k: usize) -> Result<Vec<u64>> {
    if k > scores.len() {
        return Err(Error::BudgetExceedsPool {
            requested: k,
            available: scores.len(),
        });
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut buf = scores.to_vec();
    if k < buf.len() {
        buf.select_nth_unstable_by(k - 1, rank_order);
        buf.truncate(k);
    }
    buf.sort_unstable_by(rank_order);
    Ok(buf.into_iter().map(|s| s.sample_id).collect())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Distance from every pool embedding to its nearest labeled embedding.
///
/// With no labeled points every distance is `+∞`.
pub fn nearest_labeled_distances(labeled: &[UnitVector], pool: &[(u64, UnitVector)]) -> Vec<f64> {
    pool.par_iter()
        .map(|(_, u)| {
            labeled
                .iter()
                .map(|l| sq_dist(u.as_slice(), l.as_slice()))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}

/// Coreset scores: distance to the nearest labeled embedding.
pub fn coreset_scores(labeled: &[UnitVector], pool: &[(u64, UnitVector)]) -> Vec<ConfidenceScore> {
    nearest_labeled_distances(labeled, pool)
        .into_iter()
        .zip(pool)
        .map(|(d, (id, _))| ConfidenceScore {
            sample_id: *id,
            score: d,
        })
        .collect()
}

/// Greedy k-center selection.
///
/// Repeatedly picks the pool point farthest (Euclidean) from the labeled set
/// plus everything picked so far. Ties go to the smallest id. Returns ids in
/// pick order.
pub fn coreset_greedy(
    labeled: &[UnitVector],
    pool: &[(u64, UnitVector)],
    k: usize,
) -> Result<Vec<u64>> {
    if k > pool.len() {
        return Err(Error::BudgetExceedsPool {
            requested: k,
            available: pool.len(),
        });
    }
    let mut min_dist = nearest_labeled_distances(labeled, pool);
    let mut taken = vec![false; pool.len()];
    let mut picked = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for (i, &d) in min_dist.iter().enumerate() {
            if taken[i] {
                continue;
            }
            best = match best {
                None => Some(i),
                Some(b) => {
                    let better = d > min_dist[b] || (d == min_dist[b] && pool[i].0 < pool[b].0);
                    Some(if better { i } else { b })
                }
            };
        }
        let b = best.expect("k <= pool size");
        taken[b] = true;
        picked.push(pool[b].0);
        let center = pool[b].1.as_slice();
        min_dist
            .par_iter_mut()
            .zip(pool.par_iter())
            .for_each(|(d, (_, u))| {
                let nd = sq_dist(u.as_slice(), center).sqrt();
                if nd < *d {
                    *d = nd;
                }
            });
    }
    Ok(picked)
}
