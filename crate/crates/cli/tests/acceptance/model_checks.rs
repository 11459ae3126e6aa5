// Index loops in the reference path follow the formulas term by term.
#![allow(clippy::needless_range_loop)]

use std::f64::consts::{FRAC_PI_2, PI};

use arcpool_core::classifier::{sample_loss, train_logits};
use arcpool_core::{Example, HyperParams, ModelParams};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::{ensure, err, gauss, rng, unit, Check};

/// Central-difference step.
const FD_STEP: f64 = 1e-5;
/// Maximum accepted relative error between analytic and numeric gradients.
const FD_TOL: f64 = 1e-4;
/// Relative error is `|a − n| / max(|a|, |n|, FD_FLOOR)`. Coordinates whose
/// gradient is below the floor are compared absolutely, since the numeric
/// estimate there is dominated by rounding in the loss (about 1e-11 / h).
const FD_FLOOR: f64 = 1e-6;
const DEGENERACY_TOL: f64 = 1e-12;

fn random_model(rng: &mut ChaCha8Rng, d_in: usize, d_emb: usize, classes: usize) -> ModelParams {
    ModelParams {
        d_in,
        d_emb,
        num_classes: classes,
        weights: gauss(rng, d_in * d_emb, 0.8),
        bias: gauss(rng, d_emb, 0.3),
        prototypes: (0..classes).flat_map(|_| unit(rng, d_emb)).collect(),
    }
}

fn hyper(d_in: usize, d_emb: usize, scale: f64, margin: f64) -> HyperParams {
    HyperParams {
        d_emb,
        scale,
        margin,
        ..HyperParams::new(d_in)
    }
}

/// Points prototype `y` at angle `theta` from the embedding of `x`.
fn aim(model: &mut ModelParams, rng: &mut ChaCha8Rng, x: &[f64], y: usize, theta: f64) {
    let f = model.embed(x).unwrap().into_inner();
    let mut u = gauss(rng, f.len(), 1.0);
    let along: f64 = u.iter().zip(&f).map(|(a, b)| a * b).sum();
    u.iter_mut().zip(&f).for_each(|(a, b)| *a -= along * b);
    let len = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    let d = model.d_emb;
    for (k, w) in model.prototypes[y * d..(y + 1) * d].iter_mut().enumerate() {
        *w = theta.cos() * f[k] + theta.sin() * u[k] / len;
    }
}

#[derive(Clone, Copy, Debug)]
enum Regime {
    Random,
    NearZero,
    NearHalfPi,
    Guard,
}

pub fn gradient_fd() -> Check {
    let (d_in, d_emb, classes, n) = (6, 5, 4, 5);
    let mut configs = 0;
    let mut worst = (0.0f64, String::new());
    let mut r = rng(0xfd);
    for &scale in &[1.0, 10.0, 30.0] {
        for &margin in &[0.0, 0.3, 0.5] {
            for regime in [
                Regime::Random,
                Regime::NearZero,
                Regime::NearHalfPi,
                Regime::Guard,
            ] {
                // the guard branch does not exist at m = 0
                if margin == 0.0 && matches!(regime, Regime::Guard) {
                    continue;
                }
                for _ in 0..2 {
                    let mut model = random_model(&mut r, d_in, d_emb, classes);
                    let xs: Vec<Vec<f64>> = (0..n).map(|_| gauss(&mut r, d_in, 1.0)).collect();
                    let ys: Vec<usize> = (0..n).map(|_| r.random_range(0..classes)).collect();
                    let theta = match regime {
                        Regime::Random => None,
                        Regime::NearZero => Some(r.random_range(0.05..0.1)),
                        Regime::NearHalfPi => Some(FRAC_PI_2 + r.random_range(-0.05..0.05)),
                        // inside (π − m, π], away from the branch point
                        Regime::Guard => Some(PI - margin * r.random_range(0.2..0.8)),
                    };
                    if let Some(t) = theta {
                        aim(&mut model, &mut r, &xs[0], ys[0], t);
                    }
                    let batch: Vec<Example> = xs
                        .iter()
                        .zip(&ys)
                        .map(|(x, &label)| Example { features: x, label })
                        .collect();
                    let hp = hyper(d_in, d_emb, scale, margin);
                    if matches!(regime, Regime::Guard) {
                        let c = model.true_class_cosine(&batch[0]).map_err(err)?;
                        ensure!(c < -margin.cos(), "guard config has cos {c} above -cos m");
                    }
                    let analytic = model.grad(&batch, &hp).map_err(err)?;
                    for (block, grads) in analytic.slices().iter().enumerate() {
                        for (i, &a) in grads.iter().enumerate() {
                            let mut plus = model.clone();
                            plus.slices_mut()[block][i] += FD_STEP;
                            let mut minus = model.clone();
                            minus.slices_mut()[block][i] -= FD_STEP;
                            let lp = plus.bce_loss(&batch, &hp).map_err(err)?;
                            let lm = minus.bce_loss(&batch, &hp).map_err(err)?;
                            let numeric = (lp - lm) / (2.0 * FD_STEP);
                            let rel =
                                (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR);
                            if rel > worst.0 {
                                worst = (
                                    rel,
                                    format!(
                                        "s={scale} m={margin} {regime:?} block {block}[{i}]: analytic {a:e} numeric {numeric:e}"
                                    ),
                                );
                            }
                        }
                    }
                    configs += 1;
                }
            }
        }
    }
    ensure!(configs >= 20, "only {configs} configs");
    ensure!(
        worst.0 < FD_TOL,
        "max rel err {:.3e} at {}",
        worst.0,
        worst.1
    );
    Ok(format!(
        "{configs} configs, max rel err {:.2e} (tol {FD_TOL:e}, h {FD_STEP:e})",
        worst.0
    ))
}

/// Plain sigmoid-NCE classifier written without the library's margin code.
struct Reference {
    logits: Vec<Vec<f64>>,
    loss: f64,
    weights: Vec<f64>,
    bias: Vec<f64>,
    prototypes: Vec<f64>,
    predictions: Vec<usize>,
}

fn sigma(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `−ln σ(z)` evaluated without cancellation.
fn neg_log_sigma(z: f64) -> f64 {
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

fn reference(p: &ModelParams, xs: &[Vec<f64>], ys: &[usize], s: f64) -> Reference {
    let (din, de, nc) = (p.d_in, p.d_emb, p.num_classes);
    let w = |i: usize, j: usize| p.weights[i * din + j];
    let proto = |c: usize, k: usize| p.prototypes[c * de + k];
    let mut out = Reference {
        logits: Vec::new(),
        loss: 0.0,
        weights: vec![0.0; din * de],
        bias: vec![0.0; de],
        prototypes: vec![0.0; nc * de],
        predictions: Vec::new(),
    };
    let n = xs.len() as f64;
    for (x, &y) in xs.iter().zip(ys) {
        let xn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let xh: Vec<f64> = x.iter().map(|v| v / xn).collect();
        let h: Vec<f64> = (0..de)
            .map(|i| ((0..din).map(|j| w(i, j) * xh[j]).sum::<f64>() + p.bias[i]).tanh())
            .collect();
        let hn = h.iter().map(|v| v * v).sum::<f64>().sqrt();
        let f: Vec<f64> = h.iter().map(|v| v / hn).collect();
        let cos: Vec<f64> = (0..nc)
            .map(|c| (0..de).map(|k| f[k] * proto(c, k)).sum())
            .collect();
        let z: Vec<f64> = cos.iter().map(|c| s * c).collect();

        // −ln σ(z_y) − Σ_{c≠y} ln(1 − σ(z_c)), with 1 − σ(z) = σ(−z)
        out.loss += (0..nc)
            .map(|c| {
                if c == y {
                    neg_log_sigma(z[c])
                } else {
                    neg_log_sigma(-z[c])
                }
            })
            .sum::<f64>()
            / n;

        let mut best = 0;
        for c in 1..nc {
            if cos[c] > cos[best] {
                best = c;
            }
        }
        out.predictions.push(best);

        let dz: Vec<f64> = (0..nc)
            .map(|c| sigma(z[c]) - if c == y { 1.0 } else { 0.0 })
            .collect();
        let dcos: Vec<f64> = dz.iter().map(|d| s * d / n).collect();
        let mut df = vec![0.0; de];
        for c in 0..nc {
            for k in 0..de {
                out.prototypes[c * de + k] += dcos[c] * f[k];
                df[k] += dcos[c] * proto(c, k);
            }
        }
        // Jacobian of h ↦ h/|h| is (I − f fᵀ)/|h|
        for i in 0..de {
            let dh: f64 = (0..de)
                .map(|k| {
                    let jac = (if i == k { 1.0 } else { 0.0 }) - f[k] * f[i];
                    jac / hn * df[k]
                })
                .sum();
            let da = dh * (1.0 - h[i] * h[i]);
            out.bias[i] += da;
            for j in 0..din {
                out.weights[i * din + j] += da * xh[j];
            }
        }
        out.logits.push(z);
    }
    out
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= DEGENERACY_TOL * a.abs().max(b.abs()).max(1.0)
}

fn all_close(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| close(*x, *y))
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn m0_degeneracy() -> Check {
    let mut r = rng(0xde9);
    let mut worst = 0.0f64;
    for instance in 0..100 {
        let d_in = r.random_range(2..10);
        let d_emb = r.random_range(2..8);
        let classes = r.random_range(2..8);
        let n = r.random_range(1..9);
        let s = r.random_range(1.0..40.0);
        let model = random_model(&mut r, d_in, d_emb, classes);
        let xs: Vec<Vec<f64>> = (0..n).map(|_| gauss(&mut r, d_in, 1.0)).collect();
        let ys: Vec<usize> = (0..n).map(|_| r.random_range(0..classes)).collect();
        let hp = hyper(d_in, d_emb, s, 0.0);
        let batch: Vec<Example> = xs
            .iter()
            .zip(&ys)
            .map(|(x, &label)| Example { features: x, label })
            .collect();
        let want = reference(&model, &xs, &ys, s);

        for (i, ex) in batch.iter().enumerate() {
            let f = model.embed(ex.features).map_err(err)?;
            let cos = model.cosine_scores(&f).map_err(err)?;
            let logits = train_logits(&cos, ex.label, &hp).map_err(err)?;
            ensure!(
                all_close(&logits, &want.logits[i]),
                "instance {instance}: logits differ by {:e}",
                max_diff(&logits, &want.logits[i])
            );
            worst = worst.max(max_diff(&logits, &want.logits[i]));
            let pred = model.predict(ex.features).map_err(err)?;
            ensure!(
                pred == want.predictions[i],
                "instance {instance}: prediction {pred} vs {}",
                want.predictions[i]
            );
            ensure!(
                sample_loss(&cos, ex.label, &hp).is_finite(),
                "non-finite sample loss"
            );
        }
        let (loss, g) = model.loss_and_grad(&batch, &hp).map_err(err)?;
        ensure!(
            close(loss, want.loss),
            "instance {instance}: loss {loss} vs {}",
            want.loss
        );
        worst = worst.max((loss - want.loss).abs());
        for (name, got, exp) in [
            ("weights", &g.weights, &want.weights),
            ("bias", &g.bias, &want.bias),
            ("prototypes", &g.prototypes, &want.prototypes),
        ] {
            ensure!(
                all_close(got, exp),
                "instance {instance}: {name} gradient differs by {:e}",
                max_diff(got, exp)
            );
            worst = worst.max(max_diff(got, exp));
        }
    }
    Ok(format!(
        "100 instances, max abs diff {worst:.2e} (tol {DEGENERACY_TOL:e})"
    ))
}

pub fn margin_direction() -> Check {
    const MARGIN: f64 = 0.3;
    let mut r = rng(0x3a);
    let mut violations = 0;
    let mut tightest = f64::INFINITY;
    let samples = 10_000;
    for i in 0..samples {
        let d_in = r.random_range(2..8);
        let d_emb = r.random_range(2..6);
        let classes = r.random_range(2..6);
        let mut model = random_model(&mut r, d_in, d_emb, classes);
        let x = gauss(&mut r, d_in, 1.0);
        let y = r.random_range(0..classes);
        // both ends of the interval are included explicitly
        let theta = match i {
            0 => 0.0,
            1 => PI - MARGIN,
            _ => r.random_range(0.0..=PI - MARGIN),
        };
        aim(&mut model, &mut r, &x, y, theta);
        let s = [1.0, 10.0, 30.0, 64.0][i % 4];
        let ex = [Example {
            features: &x,
            label: y,
        }];
        let with = model
            .bce_loss(&ex, &hyper(d_in, d_emb, s, MARGIN))
            .map_err(err)?;
        let without = model
            .bce_loss(&ex, &hyper(d_in, d_emb, s, 0.0))
            .map_err(err)?;
        if with < without {
            violations += 1;
        }
        tightest = tightest.min(with - without);
    }
    ensure!(
        violations == 0,
        "{violations} of {samples} configs have a smaller margin loss"
    );
    Ok(format!(
        "{samples} configs, 0 violations, smallest gap {tightest:.2e}"
    ))
}
