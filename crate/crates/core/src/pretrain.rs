//! Pre-training of the per-algorithm embeddings on a source observation set.
//!
//! Each embedding is fitted so that `|phi_m(x)|^2` reproduces the score gap
//! `y_best' - y`, i.e. the source objective becomes a quadratic bowl with its
//! maximum at the latent origin. For every pair of algorithms a small
//! classifier tries to tell their embeddings apart; the embeddings are pushed
//! to make that classification hard (weight `beta`), which makes the
//! algorithms overlap in the latent space. The min-max is solved by
//! alternating a few classifier steps with one embedding step.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::{Activation, EmbeddingModel, LayerShape, Mlp, PtemBundle, Tape, DEFAULT_HIDDEN, DEFAULT_LATENT_DIM};
use crate::error::{Error, Result};
use crate::obs::Observation;
use crate::optim::Adam;
use crate::space::{HpVector, SearchSpace};

/// Logits are clamped to this magnitude before the cross-entropy.
pub const LOGIT_CLAMP: f64 = 30.0;
pub const CLASSIFIER_HIDDEN: usize = 16;

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Binary classifier `g: latent point -> P(first algorithm of the pair)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialClassifier {
    net: Mlp,
}

impl AdversarialClassifier {
    pub fn new<R: Rng + ?Sized>(latent_dim: usize, rng: &mut R) -> Self {
        let layers = vec![
            LayerShape {
                input: latent_dim,
                output: CLASSIFIER_HIDDEN,
                activation: Activation::Tanh,
            },
            LayerShape {
                input: CLASSIFIER_HIDDEN,
                output: 1,
                activation: Activation::Identity,
            },
        ];
        AdversarialClassifier {
            net: Mlp::random(layers, rng),
        }
    }

    pub fn from_mlp(net: Mlp) -> Self {
        assert_eq!(net.output_dim(), 1, "classifier emits one logit");
        AdversarialClassifier { net }
    }

    pub fn mlp(&self) -> &Mlp {
        &self.net
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.net.params_mut()
    }

    /// Logit clamped to `[-LOGIT_CLAMP, LOGIT_CLAMP]`.
    pub fn logit(&self, u: &[f64]) -> f64 {
        self.net.forward(u)[0].clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
    }

    pub fn prob(&self, u: &[f64]) -> f64 {
        sigmoid(self.logit(u))
    }
}

/// Mean squared error between the score gap and the squared latent norm.
pub fn pretrain_loss_m(model: &EmbeddingModel, obs: &[Observation], y_best: f64) -> f64 {
    let n = obs.len() as f64;
    obs.iter()
        .map(|o| {
            let u = model.forward(&o.x.values);
            let gap = y_best - o.y;
            (gap - u.iter().map(|v| v * v).sum::<f64>()).powi(2)
        })
        .sum::<f64>()
        / n
}

/// [`pretrain_loss_m`] and its gradient with respect to the model weights.
pub fn pretrain_loss_grad(model: &EmbeddingModel, obs: &[Observation], y_best: f64) -> (f64, Vec<f64>) {
    let n = obs.len() as f64;
    let mut grad = vec![0.0; model.param_count()];
    let mut loss = 0.0;
    for o in obs {
        let tape = model.forward_tape(&o.x.values);
        let u = tape.output();
        let resid = y_best - o.y - u.iter().map(|v| v * v).sum::<f64>();
        loss += resid * resid;
        let up: Vec<f64> = u.iter().map(|v| -4.0 * resid * v / n).collect();
        model.backward(&tape, &up, &mut grad);
    }
    (loss / n, grad)
}

/// Mean binary cross-entropy of `g` on the pooled points of two algorithms:
/// points of the first algorithm are labelled 1, the second 0.
pub fn adversarial_ce_loss(
    g: &AdversarialClassifier,
    phi_a: &EmbeddingModel,
    phi_b: &EmbeddingModel,
    xs_a: &[HpVector],
    xs_b: &[HpVector],
) -> f64 {
    let ua: Vec<Vec<f64>> = xs_a.iter().map(|x| phi_a.forward(&x.values)).collect();
    let ub: Vec<Vec<f64>> = xs_b.iter().map(|x| phi_b.forward(&x.values)).collect();
    ce_on_latents(g, &ua, &ub)
}

fn ce_on_latents(g: &AdversarialClassifier, ua: &[Vec<f64>], ub: &[Vec<f64>]) -> f64 {
    let n = (ua.len() + ub.len()) as f64;
    let pos: f64 = ua.iter().map(|u| softplus(-g.logit(u))).sum();
    let neg: f64 = ub.iter().map(|u| softplus(g.logit(u))).sum();
    (pos + neg) / n
}

/// Gradients of the pair cross-entropy.
#[derive(Debug, Clone)]
pub struct CeGrad {
    pub loss: f64,
    pub classifier: Vec<f64>,
    /// Per point of the first / second algorithm, gradient w.r.t. its latent.
    pub latent_a: Vec<Vec<f64>>,
    pub latent_b: Vec<Vec<f64>>,
}

pub fn ce_grad_on_latents(g: &AdversarialClassifier, ua: &[Vec<f64>], ub: &[Vec<f64>]) -> CeGrad {
    let n = (ua.len() + ub.len()) as f64;
    let mut classifier = vec![0.0; g.net.param_count()];
    let mut loss = 0.0;
    let mut one = |u: &[f64], positive: bool, classifier: &mut [f64]| -> Vec<f64> {
        let tape = g.net.forward_tape(u);
        let raw = tape.output()[0];
        let z = raw.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
        let (l, dz) = if positive {
            (softplus(-z), sigmoid(z) - 1.0)
        } else {
            (softplus(z), sigmoid(z))
        };
        loss += l;
        let dz = if raw.abs() > LOGIT_CLAMP { 0.0 } else { dz / n };
        g.net.backward(&tape, &[dz], classifier)
    };
    let latent_a = ua.iter().map(|u| one(u, true, &mut classifier)).collect();
    let latent_b = ub.iter().map(|u| one(u, false, &mut classifier)).collect();
    CeGrad {
        loss: loss / n,
        classifier,
        latent_a,
        latent_b,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub beta: f64,
    /// Outer (embedding) steps.
    pub epochs: usize,
    /// Classifier steps per outer step.
    pub inner_steps: usize,
    pub lr_embed: f64,
    pub lr_classifier: f64,
    pub latent_dim: usize,
    pub hidden: [usize; 2],
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            beta: 1e-4,
            epochs: 1500,
            inner_steps: 5,
            lr_embed: 3e-3,
            lr_classifier: 1e-2,
            latent_dim: DEFAULT_LATENT_DIM,
            hidden: DEFAULT_HIDDEN,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainReport {
    /// Combined objective (regression minus `beta` times pair cross-entropy)
    /// after each classifier update, starting at initialization.
    pub objective: Vec<f64>,
    /// Summed regression loss at the same points.
    pub regression: Vec<f64>,
    pub best_epoch: usize,
}

impl PretrainReport {
    pub fn best_objective(&self) -> f64 {
        self.objective[self.best_epoch]
    }
}

/// Summed regression loss of a bundle over its source observations.
pub fn total_pretrain_loss(models: &[EmbeddingModel], obs: &[Observation], y_best: f64) -> f64 {
    models
        .iter()
        .enumerate()
        .map(|(m, model)| {
            let om: Vec<Observation> = obs.iter().filter(|o| o.algo() == m).cloned().collect();
            pretrain_loss_m(model, &om, y_best)
        })
        .sum()
}

fn pairs(m: usize) -> Vec<(usize, usize)> {
    (0..m).flat_map(|a| (a + 1..m).map(move |b| (a, b))).collect()
}

/// Pre-trains one embedding per algorithm on `obs` and returns them as a PTEM.
pub fn train_ptem(
    obs: &[Observation],
    space: &SearchSpace,
    cfg: &PretrainConfig,
    source_id: &str,
) -> Result<(PtemBundle, PretrainReport)> {
    let m_count = space.num_algorithms();
    for o in obs {
        space.check(&o.x)?;
    }
    let per_algo: Vec<Vec<Observation>> = (0..m_count)
        .map(|m| obs.iter().filter(|o| o.algo() == m).cloned().collect())
        .collect();
    if let Some(m) = per_algo.iter().position(|o| o.len() < 2) {
        return Err(Error::config(format!(
            "pre-training needs at least two observations for algorithm `{}`",
            space.algorithms[m].name
        )));
    }
    if cfg.beta < 0.0 {
        return Err(Error::config("beta must be non-negative"));
    }
    let y_best = obs.iter().map(|o| o.y).fold(f64::NEG_INFINITY, f64::max);
    if obs.iter().all(|o| o.y == y_best) {
        warn!("source `{source_id}` has constant scores; embeddings will collapse to the origin");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut models: Vec<EmbeddingModel> = space
        .dims()
        .into_iter()
        .map(|d| EmbeddingModel::new(d, cfg.latent_dim, cfg.hidden, &mut rng))
        .collect();
    let adversarial = cfg.beta > 0.0 && m_count > 1;
    let pair_list = if adversarial { pairs(m_count) } else { Vec::new() };
    let mut classifier_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut classifiers: Vec<AdversarialClassifier> = pair_list
        .iter()
        .map(|_| AdversarialClassifier::new(cfg.latent_dim, &mut classifier_rng))
        .collect();
    let mut copt: Vec<Adam> = classifiers
        .iter()
        .map(|c| Adam::new(c.mlp().param_count(), cfg.lr_classifier))
        .collect();
    let mut eopt: Vec<Adam> = models.iter().map(|m| Adam::new(m.param_count(), cfg.lr_embed)).collect();

    let mut objective = Vec::with_capacity(cfg.epochs + 1);
    let mut regression = Vec::with_capacity(cfg.epochs + 1);
    let mut best: Option<(f64, usize, Vec<EmbeddingModel>)> = None;

    for epoch in 0..=cfg.epochs {
        let tapes: Vec<Vec<Tape>> = models
            .iter()
            .zip(&per_algo)
            .map(|(model, om)| om.iter().map(|o| model.forward_tape(&o.x.values)).collect())
            .collect();
        let latents: Vec<Vec<Vec<f64>>> = tapes
            .iter()
            .map(|ts| ts.iter().map(|t| t.output().to_vec()).collect())
            .collect();

        for _ in 0..cfg.inner_steps {
            for (p, &(a, b)) in pair_list.iter().enumerate() {
                let cg = ce_grad_on_latents(&classifiers[p], &latents[a], &latents[b]);
                copt[p].step(classifiers[p].params_mut(), &cg.classifier, None);
            }
        }

        let mut grads: Vec<Vec<f64>> = models.iter().map(|m| vec![0.0; m.param_count()]).collect();
        let mut reg_total = 0.0;
        for m in 0..m_count {
            let n = per_algo[m].len() as f64;
            for (o, tape) in per_algo[m].iter().zip(&tapes[m]) {
                let u = tape.output();
                let resid = y_best - o.y - u.iter().map(|v| v * v).sum::<f64>();
                reg_total += resid * resid / n;
                let up: Vec<f64> = u.iter().map(|v| -4.0 * resid * v / n).collect();
                models[m].backward(tape, &up, &mut grads[m]);
            }
        }
        let mut ce_total = 0.0;
        for (p, &(a, b)) in pair_list.iter().enumerate() {
            let cg = ce_grad_on_latents(&classifiers[p], &latents[a], &latents[b]);
            ce_total += cg.loss;
            // The embeddings ascend the classifier's loss.
            for (tape, du) in tapes[a].iter().zip(&cg.latent_a) {
                let up: Vec<f64> = du.iter().map(|v| -cfg.beta * v).collect();
                models[a].backward(tape, &up, &mut grads[a]);
            }
            for (tape, du) in tapes[b].iter().zip(&cg.latent_b) {
                let up: Vec<f64> = du.iter().map(|v| -cfg.beta * v).collect();
                models[b].backward(tape, &up, &mut grads[b]);
            }
        }
        let obj = reg_total - cfg.beta * ce_total;
        objective.push(obj);
        regression.push(reg_total);
        if best.as_ref().is_none_or(|(b, _, _)| obj < *b) {
            best = Some((obj, epoch, models.clone()));
        }
        if epoch == cfg.epochs {
            break;
        }
        for ((model, opt), g) in models.iter_mut().zip(&mut eopt).zip(&grads) {
            opt.step(model.params_mut(), g, None);
        }
    }

    let (_, best_epoch, models) = best.expect("at least one epoch");
    let bundle = PtemBundle {
        models,
        y_best,
        source_id: source_id.to_string(),
        fingerprint: space.fingerprint(),
    };
    Ok((
        bundle,
        PretrainReport {
            objective,
            regression,
            best_epoch,
        },
    ))
}

/// Held-out accuracy of a freshly trained classifier separating the
/// embeddings of two algorithms. Lower means more overlap.
pub fn probe_accuracy(
    phi_a: &EmbeddingModel,
    phi_b: &EmbeddingModel,
    xs_a: &[HpVector],
    xs_b: &[HpVector],
    steps: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let split = |xs: &[HpVector], phi: &EmbeddingModel, rng: &mut ChaCha8Rng| {
        let mut idx: Vec<usize> = (0..xs.len()).collect();
        for i in (1..idx.len()).rev() {
            idx.swap(i, rng.random_range(0..=i));
        }
        let lat: Vec<Vec<f64>> = idx.iter().map(|&i| phi.forward(&xs[i].values)).collect();
        let half = lat.len() / 2;
        let test = lat[half..].to_vec();
        let mut train = lat;
        train.truncate(half);
        (train, test)
    };
    let (train_a, test_a) = split(xs_a, phi_a, &mut rng);
    let (train_b, test_b) = split(xs_b, phi_b, &mut rng);
    let mut g = AdversarialClassifier::new(phi_a.latent_dim(), &mut rng);
    let mut opt = Adam::new(g.mlp().param_count(), 1e-2);
    for _ in 0..steps {
        let cg = ce_grad_on_latents(&g, &train_a, &train_b);
        opt.step(g.params_mut(), &cg.classifier, None);
    }
    let correct = test_a.iter().filter(|u| g.prob(u) > 0.5).count() + test_b.iter().filter(|u| g.prob(u) <= 0.5).count();
    correct as f64 / (test_a.len() + test_b.len()) as f64
}
