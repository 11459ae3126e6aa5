//! Margin-penalised nearest-prototype classifier.
//!
//! A sample `x` is scaled to unit length, embedded as
//! `f = normalize(tanh(W·x̂ + b))` and compared with one unit prototype `w_c`
//! per class. The class score is `s·cos θ_c = s·(f · w_c)`; each class gets an
//! independent sigmoid. During training the true class logit is replaced with
//! `s·cos(θ_y + m)`, which forces a gap of `m` radians between a sample and
//! every foreign prototype.
//! With `m = 0` the model reduces to a plain sigmoid nearest-prototype
//! classifier.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypersphere::{
    dot, l2_normalize, margin_cosine, margin_cosine_grad, normalize_in_place, UnitVector,
};

/// Standard deviation of the initial weight distribution (variance 0.01).
pub const INIT_STD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

/// Training and architecture hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParams {
    /// Radius of the hypersphere; multiplies cosines into logits.
    #[serde(default = "default_scale")]
    pub scale: f64,
    /// Additive angular margin in radians.
    #[serde(default = "default_margin")]
    pub margin: f64,
    pub d_in: usize,
    #[serde(default = "default_d_emb")]
    pub d_emb: usize,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs_per_round: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

fn default_scale() -> f64 {
    10.0
}
fn default_margin() -> f64 {
    0.3
}
fn default_d_emb() -> usize {
    16
}
fn default_lr() -> f64 {
    1e-2
}
fn default_epochs() -> usize {
    20
}
fn default_batch() -> usize {
    10
}

impl HyperParams {
    /// Defaults for inputs of dimension `d_in`.
    pub fn new(d_in: usize) -> Self {
        HyperParams {
            scale: default_scale(),
            margin: default_margin(),
            d_in,
            d_emb: default_d_emb(),
            optimizer: OptimizerKind::default(),
            learning_rate: default_lr(),
            epochs_per_round: default_epochs(),
            batch_size: default_batch(),
        }
    }

    pub fn with_margin(mut self, margin: f64) -> Self {
        self.margin = margin;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidHyperParams(msg));
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return bad(format!("scale must be positive, got {}", self.scale));
        }
        if !(self.margin >= 0.0 && self.margin < std::f64::consts::FRAC_PI_2) {
            return bad(format!("margin must lie in [0, pi/2), got {}", self.margin));
        }
        if self.d_in == 0 || self.d_emb == 0 {
            return bad("dimensions must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        Ok(())
    }
}

/// One labelled training example borrowed from a dataset.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub features: &'a [f64],
    pub label: usize,
}

/// Learnable state: the projection layer and one unit prototype per class.
///
/// `weights` is row-major with `d_emb` rows of `d_in` columns, so embedding
/// coordinate `i` is `tanh(weights[i*d_in..(i+1)*d_in] · x̂ + bias[i])`.
/// `prototypes` is row-major with `num_classes` rows of `d_emb` columns.
/// Inputs are scaled to unit length before the projection, so predictions
/// depend only on the direction of `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub d_in: usize,
    pub d_emb: usize,
    pub num_classes: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub prototypes: Vec<f64>,
}

/// Gradient of the loss, shaped like [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub prototypes: Vec<f64>,
}

impl Gradients {
    fn zeros_like(p: &ModelParams) -> Self {
        Gradients {
            weights: vec![0.0; p.weights.len()],
            bias: vec![0.0; p.bias.len()],
            prototypes: vec![0.0; p.prototypes.len()],
        }
    }

    pub fn slices(&self) -> [&[f64]; 3] {
        [&self.weights, &self.bias, &self.prototypes]
    }

    fn scale(&mut self, k: f64) {
        for s in [&mut self.weights, &mut self.bias, &mut self.prototypes] {
            s.iter_mut().for_each(|g| *g *= k);
        }
    }
}

/// Intermediate values of one forward pass, kept for back-propagation.
#[derive(Debug, Clone)]
struct Forward {
    input: Vec<f64>,
    hidden: Vec<f64>,
    hidden_norm: f64,
    embedding: Vec<f64>,
    cosines: Vec<f64>,
}

impl ModelParams {
    /// Draws every weight i.i.d. from `N(0, 0.01)` and renormalises the prototypes.
    pub fn init(hp: &HyperParams, num_classes: usize, seed: u64) -> Result<Self> {
        hp.validate()?;
        if num_classes == 0 {
            return Err(Error::TooFewClasses {
                required: 1,
                actual: 0,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| normal.sample(&mut rng)).collect() };
        let weights = draw(hp.d_emb * hp.d_in);
        let bias = draw(hp.d_emb);
        let mut prototypes = draw(num_classes * hp.d_emb);
        for row in prototypes.chunks_mut(hp.d_emb) {
            normalize_in_place(row)?;
        }
        Ok(ModelParams {
            d_in: hp.d_in,
            d_emb: hp.d_emb,
            num_classes,
            weights,
            bias,
            prototypes,
        })
    }

    pub fn prototype(&self, class: usize) -> &[f64] {
        &self.prototypes[class * self.d_emb..(class + 1) * self.d_emb]
    }

    pub fn num_parameters(&self) -> usize {
        self.weights.len() + self.bias.len() + self.prototypes.len()
    }

    /// Mutable views of all parameter blocks, in the same order as [`Gradients::slices`].
    pub fn slices_mut(&mut self) -> [&mut [f64]; 3] {
        [&mut self.weights, &mut self.bias, &mut self.prototypes]
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.bias)
            .chain(&self.prototypes)
            .all(|v| v.is_finite())
    }

    pub(crate) fn renormalize_prototypes(&mut self) -> Result<()> {
        for row in self.prototypes.chunks_mut(self.d_emb) {
            normalize_in_place(row)?;
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d_in {
            return Err(Error::DimensionMismatch {
                expected: self.d_in,
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.num_classes {
            return Err(Error::InvalidLabel {
                label,
                num_classes: self.num_classes,
            });
        }
        Ok(())
    }

    fn forward(&self, x: &[f64]) -> Result<Forward> {
        self.check_input(x)?;
        let input = l2_normalize(x)?;
        let hidden: Vec<f64> = self
            .weights
            .chunks(self.d_in)
            .zip(&self.bias)
            .map(|(row, b)| (dot(row, input.as_slice()) + b).tanh())
            .collect();
        let mut embedding = hidden.clone();
        let hidden_norm = normalize_in_place(&mut embedding)?;
        let cosines = self.cosines_of(&embedding);
        Ok(Forward {
            input: input.into_inner(),
            hidden,
            hidden_norm,
            embedding,
            cosines,
        })
    }

    fn cosines_of(&self, f: &[f64]) -> Vec<f64> {
        self.prototypes
            .chunks(self.d_emb)
            .map(|w| dot(f, w))
            .collect()
    }

    /// Unit embedding `normalize(tanh(W·x̂ + b))` with `x̂ = x / |x|`.
    pub fn embed(&self, x: &[f64]) -> Result<UnitVector> {
        self.forward(x)
            .map(|fw| UnitVector::from_normalized(fw.embedding))
    }

    /// `cos θ_c = f · w_c` for every class.
    pub fn cosine_scores(&self, f: &UnitVector) -> Result<Vec<f64>> {
        if f.len() != self.d_emb {
            return Err(Error::DimensionMismatch {
                expected: self.d_emb,
                actual: f.len(),
            });
        }
        Ok(self.cosines_of(f.as_slice()))
    }

    /// Independent per-class sigmoid outputs `σ(s·cos θ_c)`. No margin is applied.
    pub fn score_probs(&self, f: &UnitVector, hp: &HyperParams) -> Result<Vec<f64>> {
        Ok(self
            .cosine_scores(f)?
            .into_iter()
            .map(|c| sigmoid(hp.scale * c))
            .collect())
    }

    /// Embeds `x` and returns its per-class probabilities.
    pub fn probs(&self, x: &[f64], hp: &HyperParams) -> Result<Vec<f64>> {
        let f = self.embed(x)?;
        self.score_probs(&f, hp)
    }

    /// Class with the largest cosine; ties go to the smallest index.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let fw = self.forward(x)?;
        Ok(argmax(&fw.cosines))
    }

    /// Mean binary cross-entropy of a batch under the margin logits.
    pub fn bce_loss(&self, batch: &[Example<'_>], hp: &HyperParams) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut total = 0.0;
        for ex in batch {
            self.check_label(ex.label)?;
            let fw = self.forward(ex.features)?;
            total += sample_loss(&fw.cosines, ex.label, hp);
        }
        let loss = total / batch.len() as f64;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { value: loss });
        }
        Ok(loss)
    }

    /// Gradient of [`ModelParams::bce_loss`] with respect to every parameter.
    pub fn grad(&self, batch: &[Example<'_>], hp: &HyperParams) -> Result<Gradients> {
        self.loss_and_grad(batch, hp).map(|(_, g)| g)
    }

    #[allow(clippy::needless_range_loop)]
    pub fn loss_and_grad(
        &self,
        batch: &[Example<'_>],
        hp: &HyperParams,
    ) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut grads = Gradients::zeros_like(self);
        let mut total = 0.0;
        let mut d_emb = vec![0.0; self.d_emb];
        for ex in batch {
            self.check_label(ex.label)?;
            let fw = self.forward(ex.features)?;
            total += sample_loss(&fw.cosines, ex.label, hp);

            // dL/dcos_c, then prototypes and dL/df
            d_emb.iter_mut().for_each(|v| *v = 0.0);
            for (c, &cos) in fw.cosines.iter().enumerate() {
                let d_cos = if c == ex.label {
                    let z = hp.scale * margin_cosine(cos, hp.margin);
                    -hp.scale * sigmoid(-z) * margin_cosine_grad(cos, hp.margin)
                } else {
                    hp.scale * sigmoid(hp.scale * cos)
                };
                let w = &self.prototypes[c * self.d_emb..(c + 1) * self.d_emb];
                let gw = &mut grads.prototypes[c * self.d_emb..(c + 1) * self.d_emb];
                for k in 0..self.d_emb {
                    gw[k] += d_cos * fw.embedding[k];
                    d_emb[k] += d_cos * w[k];
                }
            }

            // through f = h / |h| and h = tanh(a)
            let radial = dot(&fw.embedding, &d_emb);
            for i in 0..self.d_emb {
                let d_hidden = (d_emb[i] - fw.embedding[i] * radial) / fw.hidden_norm;
                let d_pre = d_hidden * (1.0 - fw.hidden[i] * fw.hidden[i]);
                grads.bias[i] += d_pre;
                let row = &mut grads.weights[i * self.d_in..(i + 1) * self.d_in];
                for (g, &xj) in row.iter_mut().zip(&fw.input) {
                    *g += d_pre * xj;
                }
            }
        }
        let n = batch.len() as f64;
        grads.scale(1.0 / n);
        let loss = total / n;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { value: loss });
        }
        Ok((loss, grads))
    }

    /// Cosine between the embedding of `ex` and its own class prototype.
    pub fn true_class_cosine(&self, ex: &Example<'_>) -> Result<f64> {
        self.check_label(ex.label)?;
        let fw = self.forward(ex.features)?;
        Ok(fw.cosines[ex.label])
    }
}

/// Training logits for a sample with label `y`: `s·cos θ_c` for foreign
/// classes and `s·cos(θ_y + m)` for the true one.
pub fn train_logits(cosines: &[f64], y: usize, hp: &HyperParams) -> Result<Vec<f64>> {
    if y >= cosines.len() {
        return Err(Error::InvalidLabel {
            label: y,
            num_classes: cosines.len(),
        });
    }
    Ok(cosines
        .iter()
        .enumerate()
        .map(|(c, &cos)| {
            if c == y {
                hp.scale * margin_cosine(cos, hp.margin)
            } else {
                hp.scale * cos
            }
        })
        .collect())
}

/// Per-sample BCE: `softplus(−z_y) + Σ_{c≠y} softplus(z_c)`.
pub fn sample_loss(cosines: &[f64], y: usize, hp: &HyperParams) -> f64 {
    cosines
        .iter()
        .enumerate()
        .map(|(c, &cos)| {
            if c == y {
                softplus(-hp.scale * margin_cosine(cos, hp.margin))
            } else {
                softplus(hp.scale * cos)
            }
        })
        .sum()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Index of the largest value; ties go to the smallest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Embeds a slice of samples, failing on the first degenerate one.
pub fn embed_all(params: &ModelParams, xs: &[&[f64]]) -> Result<Vec<UnitVector>> {
    use rayon::prelude::*;
    xs.par_iter().map(|x| params.embed(x)).collect()
}
