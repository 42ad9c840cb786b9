//! Minibatch SGD with momentum over the encoder weights and the prototypes.
//!
//! Scenarios are tensorized once up front. Prototypes start at the normalized
//! class-mean embeddings under the freshly initialized weights — one per class
//! actually present in the training set — and are updated by the same
//! optimizer as the network. Batch gradients are averaged; samples within a
//! batch are evaluated in parallel but reduced in index order, so a given
//! config and seed always produces bit-identical weights.

use super::features::{tensorize, Pad, SceneTensor};
use super::loss::{total_loss_grad, LossConfig, LossParts};
use super::nn::{backward, forward, EncoderModel};
use super::{EncoderError, Prototype, EMBED_DIM};
use crate::scenario::{Scenario, ScenarioClass};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossConfig::default(),
            lr: 1e-2,
            momentum: 0.9,
            batch_size: 8,
            epochs: 60,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        self.loss.validate()?;
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(EncoderError::BadTrainConfig("lr must be positive"));
        }
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return Err(EncoderError::BadTrainConfig("momentum must be in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(EncoderError::BadTrainConfig("batch_size must be >= 1"));
        }
        if self.epochs == 0 {
            return Err(EncoderError::BadTrainConfig("epochs must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub margin: f64,
    pub class: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Classes that received a prototype, ascending by id.
    pub classes: Vec<ScenarioClass>,
    pub epochs: Vec<EpochStats>,
}

/// Mean loss and classification accuracy over one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchEval {
    pub parts: LossParts,
    pub accuracy: f64,
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

fn add_scaled(acc: &mut EncoderModel, g: &EncoderModel, s: f64) {
    for ((_, a), (_, _, _, b)) in acc.params_mut().into_iter().zip(g.params()) {
        for (x, &y) in a.iter_mut().zip(b.iter()) {
            *x += s * y;
        }
    }
}

/// Mean gradients of the total loss over a batch, plus its evaluation.
pub fn batch_gradients(
    model: &EncoderModel,
    batch: &[(&SceneTensor, ScenarioClass)],
    protos: &[Prototype],
    loss_cfg: &LossConfig,
) -> Result<(EncoderModel, Vec<Vec<f64>>, BatchEval), EncoderError> {
    if batch.is_empty() {
        return Err(EncoderError::BadTrainSet("empty batch"));
    }
    let per: Vec<(EncoderModel, Vec<Vec<f64>>, LossParts, bool)> = batch
        .par_iter()
        .map(|&(t, label)| {
            let f = forward(model, t)?;
            let sg = total_loss_grad(&f.z, &f.logits, label, protos, loss_cfg)?;
            let mut g = model.zeros_like();
            backward(model, t, &f, &sg.dz, &sg.dlogits, &mut g);
            let correct = argmax(&f.logits) == label.id() as usize;
            Ok((g, sg.dprotos, sg.parts, correct))
        })
        .collect::<Result<_, EncoderError>>()?;

    let scale = 1.0 / batch.len() as f64;
    let mut g_model = model.zeros_like();
    let mut g_protos: Vec<Vec<f64>> = protos.iter().map(|p| vec![0.0; p.p.len()]).collect();
    let mut parts = LossParts {
        proto: 0.0,
        class: 0.0,
        total: 0.0,
    };
    let mut correct = 0usize;
    for (g, gp, p, ok) in &per {
        add_scaled(&mut g_model, g, scale);
        for (acc, one) in g_protos.iter_mut().zip(gp) {
            for (a, &v) in acc.iter_mut().zip(one) {
                *a += scale * v;
            }
        }
        parts.proto += scale * p.proto;
        parts.class += scale * p.class;
        parts.total += scale * p.total;
        correct += *ok as usize;
    }
    Ok((
        g_model,
        g_protos,
        BatchEval {
            parts,
            accuracy: correct as f64 * scale,
        },
    ))
}

/// Mean loss over a batch without touching gradients; the numeric side of
/// finite-difference checks.
pub fn batch_loss(
    model: &EncoderModel,
    batch: &[(&SceneTensor, ScenarioClass)],
    protos: &[Prototype],
    loss_cfg: &LossConfig,
) -> Result<BatchEval, EncoderError> {
    if batch.is_empty() {
        return Err(EncoderError::BadTrainSet("empty batch"));
    }
    let per: Vec<(LossParts, bool)> = batch
        .par_iter()
        .map(|&(t, label)| {
            let f = forward(model, t)?;
            let parts =
                super::loss::total_loss(&f.z, &f.logits, label, protos, loss_cfg)?;
            Ok((parts, argmax(&f.logits) == label.id() as usize))
        })
        .collect::<Result<_, EncoderError>>()?;
    let scale = 1.0 / batch.len() as f64;
    let mut parts = LossParts {
        proto: 0.0,
        class: 0.0,
        total: 0.0,
    };
    let mut correct = 0usize;
    for (p, ok) in &per {
        parts.proto += scale * p.proto;
        parts.class += scale * p.class;
        parts.total += scale * p.total;
        correct += *ok as usize;
    }
    Ok(BatchEval {
        parts,
        accuracy: correct as f64 * scale,
    })
}

fn class_means(
    model: &EncoderModel,
    tensors: &[SceneTensor],
    labels: &[ScenarioClass],
) -> Result<Vec<Prototype>, EncoderError> {
    let mut sums: BTreeMap<u8, (Vec<f64>, usize)> = BTreeMap::new();
    for (t, label) in tensors.iter().zip(labels) {
        let f = forward(model, t)?;
        let e = sums
            .entry(label.id())
            .or_insert_with(|| (vec![0.0; EMBED_DIM], 0));
        for (s, z) in e.0.iter_mut().zip(&f.z) {
            *s += z;
        }
        e.1 += 1;
    }
    let mut protos = Vec::with_capacity(sums.len());
    for (id, (sum, n)) in sums {
        let norm = sum.iter().map(|v| v * v).sum::<f64>().sqrt() / n as f64;
        if norm < 1e-12 {
            return Err(EncoderError::BadTrainSet("degenerate class mean"));
        }
        let class = ScenarioClass::from_id(id).expect("labels carry valid ids");
        protos.push(Prototype {
            class,
            p: sum.iter().map(|v| v / (n as f64 * norm)).collect(),
        });
    }
    Ok(protos)
}

pub fn train_encoder(
    scenarios: &[Scenario],
    cfg: &TrainConfig,
) -> Result<(EncoderModel, Vec<Prototype>, TrainReport), EncoderError> {
    cfg.validate()?;
    let mut counts: BTreeMap<u8, usize> = BTreeMap::new();
    for s in scenarios {
        *counts.entry(s.label.id()).or_default() += 1;
    }
    if counts.len() < 2 {
        return Err(EncoderError::BadTrainSet(
            "need at least two classes to shape the space",
        ));
    }
    if counts.values().any(|&n| n < 2) {
        return Err(EncoderError::BadTrainSet(
            "every present class needs at least two samples",
        ));
    }

    let tensors: Vec<SceneTensor> = scenarios.iter().map(|s| tensorize(s, Pad::Zero)).collect();
    let labels: Vec<ScenarioClass> = scenarios.iter().map(|s| s.label).collect();

    let mut model = EncoderModel::new(cfg.seed);
    let mut protos = class_means(&model, &tensors, &labels)?;
    let mut vel = model.zeros_like();
    let mut pvel: Vec<Vec<f64>> = protos.iter().map(|p| vec![0.0; p.p.len()]).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..scenarios.len()).collect();
    let mut report = TrainReport {
        classes: protos.iter().map(|p| p.class).collect(),
        epochs: Vec::new(),
    };

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss = 0.0;
        let mut margin = 0.0;
        let mut class = 0.0;
        let mut correct = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&SceneTensor, ScenarioClass)> =
                chunk.iter().map(|&i| (&tensors[i], labels[i])).collect();
            let (g, gp, eval) = batch_gradients(&model, &batch, &protos, &cfg.loss)?;
            for (((_, w), (_, v)), (_, _, _, gw)) in model
                .params_mut()
                .into_iter()
                .zip(vel.params_mut())
                .zip(g.params())
            {
                for ((wi, vi), &gi) in w.iter_mut().zip(v.iter_mut()).zip(gw.iter()) {
                    *vi = cfg.momentum * *vi - cfg.lr * gi;
                    *wi += *vi;
                }
            }
            for ((p, v), gj) in protos.iter_mut().zip(pvel.iter_mut()).zip(&gp) {
                for ((pi, vi), &gi) in p.p.iter_mut().zip(v.iter_mut()).zip(gj) {
                    *vi = cfg.momentum * *vi - cfg.lr * gi;
                    *pi += *vi;
                }
            }
            let w = chunk.len() as f64;
            loss += w * eval.parts.total;
            margin += w * eval.parts.proto;
            class += w * eval.parts.class;
            correct += w * eval.accuracy;
        }
        let n = scenarios.len() as f64;
        let stats = EpochStats {
            epoch,
            loss: loss / n,
            margin: margin / n,
            class: class / n,
            accuracy: correct / n,
        };
        if !stats.loss.is_finite() {
            return Err(EncoderError::Activation("optimizer update"));
        }
        report.epochs.push(stats);
    }

    if model
        .params()
        .iter()
        .any(|(_, _, _, w)| w.iter().any(|v| !v.is_finite()))
        || protos.iter().any(|p| p.p.iter().any(|v| !v.is_finite()))
    {
        return Err(EncoderError::Activation("optimizer update"));
    }
    Ok((model, protos, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub accuracy: f64,
    /// Mean pairwise cosine distance within a class.
    pub mean_intra: f64,
    /// Mean pairwise cosine distance across classes.
    pub mean_inter: f64,
}

/// Classification accuracy and embedding-space separation on a labeled set.
pub fn evaluate_encoder(
    model: &EncoderModel,
    scenarios: &[Scenario],
) -> Result<EvalStats, EncoderError> {
    let embedded: Vec<(Vec<f64>, Vec<f64>, ScenarioClass)> = scenarios
        .par_iter()
        .map(|s| {
            let f = forward(model, &tensorize(s, Pad::Zero))?;
            Ok((f.z, f.logits, s.label))
        })
        .collect::<Result<_, EncoderError>>()?;
    let mut correct = 0usize;
    for (_, logits, label) in &embedded {
        if argmax(logits) == label.id() as usize {
            correct += 1;
        }
    }
    let mut intra = (0.0, 0usize);
    let mut inter = (0.0, 0usize);
    for i in 0..embedded.len() {
        for j in i + 1..embedded.len() {
            let d = super::cosine_distance(&embedded[i].0, &embedded[j].0)?;
            let bucket = if embedded[i].2 == embedded[j].2 {
                &mut intra
            } else {
                &mut inter
            };
            bucket.0 += d;
            bucket.1 += 1;
        }
    }
    if intra.1 == 0 || inter.1 == 0 {
        return Err(EncoderError::BadTrainSet(
            "separation stats need both intra- and inter-class pairs",
        ));
    }
    Ok(EvalStats {
        accuracy: correct as f64 / embedded.len() as f64,
        mean_intra: intra.0 / intra.1 as f64,
        mean_inter: inter.0 / inter.1 as f64,
    })
}
