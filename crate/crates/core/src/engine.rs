//! Pool-based active learning loop.
//!
//! A [`Learner`] owns one seeded run: the labeled/unlabeled partition, the
//! current model and the round history. Each round is split in two halves so
//! the same bookkeeping serves both the simulated oracle and a human one:
//!
//! 1. [`Learner::prepare_round`] trains on the labeled set, evaluates on the
//!    test split, scores the unlabeled pool and stages the top-K ids.
//! 2. [`Learner::commit_round`] receives labels for exactly the staged ids,
//!    moves them into the labeled set and appends a [`RoundRecord`].
//!
//! [`Learner::run_round`] glues both halves together with ground-truth labels.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{self, ConfidenceScore, Strategy};
use crate::classifier::{Example, HyperParams, ModelParams, OptimizerKind};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::seed::{self, Stream};
use crate::train;

/// Active learning schedule and model settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlConfig {
    /// Samples drawn at random before the first round (`K_init`).
    pub init_budget: usize,
    /// Samples queried per round (`K`).
    pub budget: usize,
    pub rounds: usize,
    pub strategy: Strategy,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Model settings; `None` uses [`AlConfig::default_hyper`] for the dataset's input size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hyper: Option<HyperParams>,
    /// Re-initialise the model every round instead of continuing from the last one.
    #[serde(default)]
    pub cold_start: bool,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

fn default_test_fraction() -> f64 {
    0.2
}

impl AlConfig {
    pub fn new(init_budget: usize, budget: usize, rounds: usize, strategy: Strategy) -> Self {
        AlConfig {
            init_budget,
            budget,
            rounds,
            strategy,
            seeds: default_seeds(),
            hyper: None,
            cold_start: false,
            test_fraction: default_test_fraction(),
            split_seed: 0,
        }
    }

    /// Named schedules: `agnews-like` (50/10/50), `imdb-like` (100/20/50)
    /// and `telecom-like` (500/20/30), as `K_init/K/rounds`.
    pub fn preset(name: &str) -> Result<Self> {
        let (init, k, r) = match name {
            "agnews-like" => (50, 10, 50),
            "imdb-like" => (100, 20, 50),
            "telecom-like" => (500, 20, 30),
            other => return Err(Error::UnknownPreset(other.to_string())),
        };
        Ok(AlConfig::new(init, k, r, Strategy::Margin))
    }

    pub const PRESETS: [&'static str; 3] = ["agnews-like", "imdb-like", "telecom-like"];

    /// Model settings used when the config does not carry its own.
    pub fn default_hyper(d_in: usize) -> HyperParams {
        HyperParams {
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-2,
            ..HyperParams::new(d_in)
        }
    }

    pub fn hyper_for(&self, d_in: usize) -> Result<HyperParams> {
        let hp = match &self.hyper {
            Some(hp) if hp.d_in != d_in => {
                return Err(Error::InvalidConfig(format!(
                    "hyper.d_in is {} but the dataset has {d_in} features",
                    hp.d_in
                )))
            }
            Some(hp) => hp.clone(),
            None => Self::default_hyper(d_in),
        };
        hp.validate()?;
        Ok(hp)
    }

    /// Checks the schedule against a training pool of `train_size` samples.
    pub fn validate(&self, train_size: usize) -> Result<()> {
        if self.init_budget == 0 || self.budget == 0 || self.rounds == 0 {
            return Err(Error::InvalidConfig(
                "init_budget, budget and rounds must all be at least 1".into(),
            ));
        }
        let needed = self.init_budget + self.rounds * self.budget;
        if needed > train_size {
            return Err(Error::BudgetExceedsPool {
                requested: needed,
                available: train_size,
            });
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        Ok(())
    }
}

/// Disjoint labeled and unlabeled id sets over one training pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolState {
    /// Labeled ids in the order they were labeled.
    labeled: Vec<u64>,
    unlabeled: BTreeSet<u64>,
    /// Labels of every id in `labeled`.
    labels: BTreeMap<u64, usize>,
}

impl PoolState {
    pub fn labeled(&self) -> &[u64] {
        &self.labeled
    }

    pub fn unlabeled(&self) -> impl ExactSizeIterator<Item = u64> + '_ {
        self.unlabeled.iter().copied()
    }

    pub fn num_labeled(&self) -> usize {
        self.labeled.len()
    }

    pub fn num_unlabeled(&self) -> usize {
        self.unlabeled.len()
    }

    pub fn is_unlabeled(&self, id: u64) -> bool {
        self.unlabeled.contains(&id)
    }

    pub fn label_of(&self, id: u64) -> Option<usize> {
        self.labels.get(&id).copied()
    }

    /// Labeled examples in labeling order.
    pub fn examples<'a>(&self, train: &'a Dataset) -> Result<Vec<Example<'a>>> {
        self.labeled
            .iter()
            .map(|&id| {
                let s = train.get(id).ok_or(Error::UnknownId(id))?;
                Ok(Example {
                    features: &s.features,
                    label: self.labels[&id],
                })
            })
            .collect()
    }

    /// Moves labelled ids from the pool into the labeled set, all or nothing.
    pub fn label(&mut self, assignments: &[(u64, usize)], num_classes: usize) -> Result<()> {
        let mut seen = HashSet::with_capacity(assignments.len());
        for &(id, class) in assignments {
            if !self.unlabeled.contains(&id) || !seen.insert(id) {
                return Err(Error::UnknownId(id));
            }
            if class >= num_classes {
                return Err(Error::InvalidLabel {
                    label: class,
                    num_classes,
                });
            }
        }
        for &(id, class) in assignments {
            self.unlabeled.remove(&id);
            self.labeled.push(id);
            self.labels.insert(id, class);
        }
        Ok(())
    }
}

/// Draws `k_init` ids uniformly without replacement; their labels come from the dataset.
pub fn init_pool(train: &Dataset, k_init: usize, seed: u64) -> Result<PoolState> {
    if k_init > train.len() {
        return Err(Error::BudgetExceedsPool {
            requested: k_init,
            available: train.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, train.len(), k_init);
    let samples = train.samples();
    let mut pool = PoolState {
        labeled: Vec::with_capacity(k_init),
        unlabeled: samples.iter().map(|s| s.id).collect(),
        labels: BTreeMap::new(),
    };
    let mut initial = Vec::with_capacity(k_init);
    for i in picks {
        let s = &samples[i];
        let label = s
            .label
            .ok_or_else(|| Error::Schema(format!("initial pool sample {} has no label", s.id)))?;
        initial.push((s.id, label));
    }
    pool.label(&initial, train.num_classes())?;
    Ok(pool)
}

/// Fraction of labelled test samples classified correctly.
pub fn evaluate(model: &ModelParams, test: &Dataset) -> Result<f64> {
    train::accuracy(model, &test.examples())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Size of the labeled set the evaluated model was trained on.
    pub labeled: usize,
    pub accuracy: f64,
    /// Mean training loss of the fitted model on the labeled set.
    pub mean_loss: f64,
    pub selected: Vec<u64>,
    pub wall_time_secs: f64,
}

/// Output of the first half of a round, waiting for labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagedRound {
    pub round: usize,
    /// Ids to label, in selection order.
    pub selected: Vec<u64>,
    /// Score of every unlabeled sample at selection time, in id order.
    pub scores: Vec<ConfidenceScore>,
    pub labeled: usize,
    pub accuracy: f64,
    pub mean_loss: f64,
    pub wall_time_secs: f64,
}

/// One seeded active-learning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Learner {
    pub config: AlConfig,
    pub hyper: HyperParams,
    pub seed: u64,
    pub num_classes: usize,
    pub pool: PoolState,
    pub model: ModelParams,
    pub history: Vec<RoundRecord>,
    /// Model has been fitted to the current labeled set.
    #[serde(default)]
    pub fitted: bool,
}

impl Learner {
    pub fn new(config: &AlConfig, train: &Dataset, seed: u64) -> Result<Self> {
        config.validate(train.len())?;
        let hyper = config.hyper_for(train.d_in())?;
        let pool = init_pool(
            train,
            config.init_budget,
            seed::derive(seed, Stream::Pool, 0),
        )?;
        let model = ModelParams::init(
            &hyper,
            train.num_classes(),
            seed::derive(seed, Stream::ModelInit, 0),
        )?;
        Ok(Learner {
            config: config.clone(),
            hyper,
            seed,
            num_classes: train.num_classes(),
            pool,
            model,
            history: Vec::new(),
            fitted: false,
        })
    }

    pub fn round(&self) -> usize {
        self.history.len()
    }

    pub fn is_finished(&self) -> bool {
        self.round() >= self.config.rounds
    }

    /// Trains, evaluates, scores the pool and stages the next batch.
    pub fn prepare_round(&mut self, train: &Dataset, test: &Dataset) -> Result<StagedRound> {
        let start = Instant::now();
        let round = self.round();
        let k = self.config.budget;
        if self.pool.num_unlabeled() < k {
            return Err(Error::BudgetExceedsPool {
                requested: k,
                available: self.pool.num_unlabeled(),
            });
        }

        let examples = self.pool.examples(train)?;
        if !self.fitted {
            let start_from = if self.config.cold_start && round > 0 {
                ModelParams::init(
                    &self.hyper,
                    self.num_classes,
                    seed::derive(self.seed, Stream::ModelInit, round as u64),
                )?
            } else {
                self.model.clone()
            };
            let shuffle_seed = seed::derive(self.seed, Stream::Shuffle, round as u64);
            let (model, _) = train::fit(&start_from, &examples, &self.hyper, shuffle_seed)?;
            self.model = model;
            self.fitted = true;
        }
        let mean_loss = self.model.bce_loss(&examples, &self.hyper)?;
        let accuracy = evaluate(&self.model, test)?;

        let pool_ids: Vec<u64> = self.pool.unlabeled().collect();
        let features = |id: u64| -> Result<&[f64]> {
            train
                .get(id)
                .map(|s| s.features.as_slice())
                .ok_or(Error::UnknownId(id))
        };
        let strategy = self.config.strategy;
        let (scores, selected) = match strategy {
            Strategy::Random => {
                let scores = acquisition::random_scores(
                    &pool_ids,
                    seed::derive(self.seed, Stream::Acquisition, round as u64),
                );
                let selected = acquisition::top_k_select(&scores, k)?;
                (scores, selected)
            }
            Strategy::Coreset => {
                let embed = |id: u64| -> Result<_> { self.model.embed(features(id)?) };
                let labeled = self
                    .pool
                    .labeled()
                    .par_iter()
                    .map(|&id| embed(id))
                    .collect::<Result<Vec<_>>>()?;
                let pool = pool_ids
                    .par_iter()
                    .map(|&id| Ok((id, embed(id)?)))
                    .collect::<Result<Vec<_>>>()?;
                let selected = acquisition::coreset_greedy(&labeled, &pool, k)?;
                (acquisition::coreset_scores(&labeled, &pool), selected)
            }
            _ => {
                let pool = pool_ids
                    .iter()
                    .map(|&id| Ok((id, features(id)?)))
                    .collect::<Result<Vec<_>>>()?;
                let scores = acquisition::score_pool(strategy, &self.model, &self.hyper, &pool)?;
                let selected = acquisition::top_k_select(&scores, k)?;
                (scores, selected)
            }
        };

        Ok(StagedRound {
            round,
            selected,
            scores,
            labeled: self.pool.num_labeled(),
            accuracy,
            mean_loss,
            wall_time_secs: start.elapsed().as_secs_f64(),
        })
    }

    /// Applies labels for exactly the staged ids and records the round.
    pub fn commit_round(
        &mut self,
        staged: &StagedRound,
        labels: &[(u64, usize)],
    ) -> Result<RoundRecord> {
        if staged.round != self.round() {
            return Err(Error::InvalidConfig(format!(
                "staged round {} does not match current round {}",
                staged.round,
                self.round()
            )));
        }
        let expected: HashSet<u64> = staged.selected.iter().copied().collect();
        let given: HashSet<u64> = labels.iter().map(|&(id, _)| id).collect();
        if let Some(&id) = given.difference(&expected).next() {
            return Err(Error::UnknownId(id));
        }
        if given.len() != expected.len() || labels.len() != expected.len() {
            return Err(Error::OracleUnavailable {
                pending: expected.len() - given.intersection(&expected).count(),
            });
        }
        // keep the staged order so labeling order does not depend on the caller
        let by_id: BTreeMap<u64, usize> = labels.iter().copied().collect();
        let ordered: Vec<(u64, usize)> =
            staged.selected.iter().map(|id| (*id, by_id[id])).collect();
        self.pool.label(&ordered, self.num_classes)?;
        self.fitted = false;
        let record = RoundRecord {
            round: staged.round,
            labeled: staged.labeled,
            accuracy: staged.accuracy,
            mean_loss: staged.mean_loss,
            selected: staged.selected.clone(),
            wall_time_secs: staged.wall_time_secs,
        };
        self.history.push(record.clone());
        Ok(record)
    }

    /// One full round with labels read from the dataset.
    pub fn run_round(
        &mut self,
        train: &Dataset,
        test: &Dataset,
    ) -> Result<(StagedRound, RoundRecord)> {
        let staged = self.prepare_round(train, test)?;
        let labels = staged
            .selected
            .iter()
            .map(|&id| {
                let s = train.get(id).ok_or(Error::UnknownId(id))?;
                let y = s.label.ok_or_else(|| {
                    Error::Schema(format!("sample {id} has no ground-truth label"))
                })?;
                Ok((id, y))
            })
            .collect::<Result<Vec<_>>>()?;
        let record = self.commit_round(&staged, &labels)?;
        Ok((staged, record))
    }

    /// Runs every remaining round.
    pub fn run_to_end(&mut self, train: &Dataset, test: &Dataset) -> Result<()> {
        while !self.is_finished() {
            self.run_round(train, test)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedCurve {
    pub seed: u64,
    pub records: Vec<RoundRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub round: usize,
    pub labeled: usize,
    pub acc_mean: f64,
    /// Sample standard deviation across seeds (0 for a single seed).
    pub acc_std: f64,
}

/// Per-seed round histories and their per-round aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub strategy: Strategy,
    pub seeds: Vec<SeedCurve>,
    pub aggregate: Vec<CurvePoint>,
}

impl LearningCurve {
    pub fn from_seeds(strategy: Strategy, seeds: Vec<SeedCurve>) -> Result<Self> {
        let rounds = seeds.first().map_or(0, |s| s.records.len());
        for s in &seeds {
            let same = s.records.len() == rounds
                && s.records
                    .iter()
                    .zip(&seeds[0].records)
                    .all(|(a, b)| a.labeled == b.labeled);
            if !same {
                return Err(Error::InvalidConfig(
                    "seeds do not share one labeled-count schedule".into(),
                ));
            }
        }
        let aggregate = (0..rounds)
            .map(|r| {
                let accs: Vec<f64> = seeds.iter().map(|s| s.records[r].accuracy).collect();
                let (mean, std) = mean_std(&accs);
                CurvePoint {
                    round: r,
                    labeled: seeds[0].records[r].labeled,
                    acc_mean: mean,
                    acc_std: std,
                }
            })
            .collect();
        Ok(LearningCurve {
            strategy,
            seeds,
            aggregate,
        })
    }

    /// Normalised area under each seed's accuracy-vs-labeled curve (trapezoid rule).
    pub fn auc_per_seed(&self) -> Vec<f64> {
        self.seeds
            .iter()
            .map(|s| {
                let pts: Vec<(f64, f64)> = s
                    .records
                    .iter()
                    .map(|r| (r.labeled as f64, r.accuracy))
                    .collect();
                curve_auc(&pts)
            })
            .collect()
    }

    pub fn write_seed_csv(&self, w: impl Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["seed", "round", "labeled", "accuracy", "mean_loss"])?;
        for s in &self.seeds {
            for r in &s.records {
                wtr.write_record([
                    s.seed.to_string(),
                    r.round.to_string(),
                    r.labeled.to_string(),
                    r.accuracy.to_string(),
                    r.mean_loss.to_string(),
                ])?;
            }
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))
    }

    pub fn write_aggregate_csv(&self, w: impl Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["round", "labeled", "acc_mean", "acc_std"])?;
        for p in &self.aggregate {
            wtr.write_record([
                p.round.to_string(),
                p.labeled.to_string(),
                p.acc_mean.to_string(),
                p.acc_std.to_string(),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))
    }

    /// Writes `curves.csv` and `aggregate.csv` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let open = |name: &str| {
            let p = dir.join(name);
            std::fs::File::create(&p).map_err(|e| Error::io(p, e))
        };
        self.write_seed_csv(open("curves.csv")?)?;
        self.write_aggregate_csv(open("aggregate.csv")?)
    }
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Trapezoid area under `(x, y)` points divided by the x-range.
pub fn curve_auc(points: &[(f64, f64)]) -> f64 {
    match points {
        [] => f64::NAN,
        [(_, y)] => *y,
        _ => {
            let area: f64 = points
                .windows(2)
                .map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0))
                .sum();
            area / (points[points.len() - 1].0 - points[0].0)
        }
    }
}

/// Runs every seed of `config` to completion on a fixed train/test split.
pub fn run_experiment(config: &AlConfig, train: &Dataset, test: &Dataset) -> Result<LearningCurve> {
    config.validate(train.len())?;
    if config.seeds.is_empty() {
        return Err(Error::InvalidConfig("at least one seed is required".into()));
    }
    let seeds = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut learner = Learner::new(config, train, seed)?;
            learner.run_to_end(train, test)?;
            Ok(SeedCurve {
                seed,
                records: learner.history,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    LearningCurve::from_seeds(config.strategy, seeds)
}

/// Splits `dataset` with the config's split settings, then runs the experiment.
pub fn run_experiment_on(config: &AlConfig, dataset: &Dataset) -> Result<LearningCurve> {
    let (train, test) = crate::data::split(dataset, config.test_fraction, config.split_seed)?;
    run_experiment(config, &train, &test)
}
