//! Minibatch gradient descent for [`ModelParams`].

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{Example, Gradients, HyperParams, ModelParams, OptimizerKind};
use crate::error::{Error, Result};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainStats {
    /// Mean minibatch loss of each epoch, measured before each update.
    pub epoch_losses: Vec<f64>,
    pub epochs: usize,
    pub wall_time_secs: f64,
}

impl TrainStats {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}

/// Parameter update rule. State lives only for the duration of one `fit`.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        step: i32,
        first: Vec<f64>,
        second: Vec<f64>,
    },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, num_parameters: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::Adam => Optimizer::Adam {
                lr,
                step: 0,
                first: vec![0.0; num_parameters],
                second: vec![0.0; num_parameters],
            },
        }
    }

    /// Applies one update and renormalises the prototypes.
    pub fn step(&mut self, params: &mut ModelParams, grads: &Gradients) -> Result<()> {
        let blocks = params.slices_mut().into_iter().zip(grads.slices());
        match self {
            Optimizer::Sgd { lr } => {
                for (p, g) in blocks {
                    p.iter_mut().zip(g).for_each(|(p, g)| *p -= *lr * g);
                }
            }
            Optimizer::Adam {
                lr,
                step,
                first,
                second,
            } => {
                *step += 1;
                let c1 = 1.0 - ADAM_BETA1.powi(*step);
                let c2 = 1.0 - ADAM_BETA2.powi(*step);
                let mut k = 0;
                for (p, g) in blocks {
                    for (p, &g) in p.iter_mut().zip(g) {
                        first[k] = ADAM_BETA1 * first[k] + (1.0 - ADAM_BETA1) * g;
                        second[k] = ADAM_BETA2 * second[k] + (1.0 - ADAM_BETA2) * g * g;
                        let m_hat = first[k] / c1;
                        let v_hat = second[k] / c2;
                        *p -= *lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                        k += 1;
                    }
                }
            }
        }
        params.renormalize_prototypes()
    }
}

/// Runs `hp.epochs_per_round` epochs of shuffled minibatch descent on a copy of `params`.
pub fn fit(
    params: &ModelParams,
    labeled: &[Example<'_>],
    hp: &HyperParams,
    seed: u64,
) -> Result<(ModelParams, TrainStats)> {
    hp.validate()?;
    if labeled.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let start = Instant::now();
    let mut model = params.clone();
    let mut opt = Optimizer::new(hp.optimizer, hp.learning_rate, model.num_parameters());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    let mut batch = Vec::with_capacity(hp.batch_size);
    let mut epoch_losses = Vec::with_capacity(hp.epochs_per_round);

    for _ in 0..hp.epochs_per_round {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(hp.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| labeled[i]));
            let (loss, grads) = model.loss_and_grad(&batch, hp)?;
            total += loss * chunk.len() as f64;
            opt.step(&mut model, &grads)?;
        }
        let mean = total / labeled.len() as f64;
        if !mean.is_finite() || !model.is_finite() {
            return Err(Error::NonFiniteLoss { value: mean });
        }
        epoch_losses.push(mean);
    }

    Ok((
        model,
        TrainStats {
            epochs: epoch_losses.len(),
            epoch_losses,
            wall_time_secs: start.elapsed().as_secs_f64(),
        },
    ))
}

/// Fraction of `examples` whose predicted class equals the label.
pub fn accuracy(params: &ModelParams, examples: &[Example<'_>]) -> Result<f64> {
    use rayon::prelude::*;
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let correct = examples
        .par_iter()
        .map(|ex| {
            params
                .predict(ex.features)
                .map(|p| usize::from(p == ex.label))
        })
        .sum::<Result<usize>>()?;
    Ok(correct as f64 / examples.len() as f64)
}
