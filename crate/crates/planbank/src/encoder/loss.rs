//! Training objective: a prototype margin term that shapes the embedding
//! space, plus a cross-entropy term on the class logits.
//!
//! For a unit embedding `z` with true class `y`, every prototype `p_j`
//! contributes a hinge: the true class pulls `z` inside margin `m_p`
//! (`max(D_j − m_p, 0)`), every other class pushes it past `m_n`
//! (`max(m_n − D_j, 0)`), where `D_j = 1 − z·p̂_j` is the cosine distance for
//! unit `z`. The total objective is `L_pro + λ·L_cls`.
//!
//! Gradients here treat `z` as a free vector; the encoder's backward pass
//! owns the chain through its own normalization stage.

use super::{EncoderError, Prototype};
use crate::scenario::ScenarioClass;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Pull margin: no penalty once the true prototype is closer than this.
    pub m_p: f64,
    /// Push margin: no penalty once other prototypes are farther than this.
    pub m_n: f64,
    /// Weight of the classification term.
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            m_p: 0.2,
            m_n: 0.8,
            lambda: 0.5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        if !(self.m_p.is_finite() && self.m_n.is_finite() && self.lambda.is_finite()) {
            return Err(EncoderError::BadLossConfig("margins must be finite"));
        }
        if !(0.0 <= self.m_p && self.m_p < self.m_n && self.m_n <= 2.0) {
            return Err(EncoderError::BadLossConfig(
                "margins must satisfy 0 <= m_p < m_n <= 2",
            ));
        }
        if self.lambda < 0.0 {
            return Err(EncoderError::BadLossConfig("lambda must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub proto: f64,
    pub class: f64,
    /// `proto + lambda·class`.
    pub total: f64,
}

/// Per-sample gradients of the total loss.
pub struct SampleGrad {
    pub parts: LossParts,
    /// At the embedding (prototype term only; the class term flows through
    /// `dlogits`).
    pub dz: Vec<f64>,
    /// At the logits, `lambda` already applied.
    pub dlogits: Vec<f64>,
    /// Parallel to the prototype slice passed in.
    pub dprotos: Vec<Vec<f64>>,
}

fn unit_of(p: &Prototype) -> Result<(Vec<f64>, f64), EncoderError> {
    if p.p.iter().any(|v| !v.is_finite()) {
        return Err(EncoderError::NonFinite);
    }
    let norm = p.p.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return Err(EncoderError::ZeroVector);
    }
    Ok((p.p.iter().map(|v| v / norm).collect(), norm))
}

fn check_protos(z: &[f64], protos: &[Prototype], label: ScenarioClass) -> Result<(), EncoderError> {
    let mut seen = 0u16;
    for p in protos {
        if p.p.len() != z.len() {
            return Err(EncoderError::DimMismatch {
                a: p.p.len(),
                b: z.len(),
            });
        }
        let bit = 1u16 << p.class.id();
        if seen & bit != 0 {
            return Err(EncoderError::BadLossConfig("duplicate prototype class"));
        }
        seen |= bit;
    }
    if seen & (1 << label.id()) == 0 {
        return Err(EncoderError::MissingPrototype(label));
    }
    Ok(())
}

/// Margin loss of one embedding against the prototype set.
pub fn prototype_loss(
    z: &[f64],
    label: ScenarioClass,
    protos: &[Prototype],
    cfg: &LossConfig,
) -> Result<f64, EncoderError> {
    cfg.validate()?;
    check_protos(z, protos, label)?;
    let mut loss = 0.0;
    for p in protos {
        let (unit, _) = unit_of(p)?;
        let d = 1.0 - z.iter().zip(&unit).map(|(a, b)| a * b).sum::<f64>();
        if p.class == label {
            loss += (d - cfg.m_p).max(0.0);
        } else {
            loss += (cfg.m_n - d).max(0.0);
        }
    }
    Ok(loss)
}

/// Stable cross entropy of the logits against the label.
pub fn class_loss(logits: &[f64], label: ScenarioClass) -> Result<f64, EncoderError> {
    let idx = label.id() as usize;
    if idx >= logits.len() {
        return Err(EncoderError::DimMismatch {
            a: logits.len(),
            b: idx + 1,
        });
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    Ok(lse - logits[idx])
}

pub fn total_loss(
    z: &[f64],
    logits: &[f64],
    label: ScenarioClass,
    protos: &[Prototype],
    cfg: &LossConfig,
) -> Result<LossParts, EncoderError> {
    let proto = prototype_loss(z, label, protos, cfg)?;
    let class = class_loss(logits, label)?;
    Ok(LossParts {
        proto,
        class,
        total: proto + cfg.lambda * class,
    })
}

/// Loss and all per-sample gradients in one pass.
pub fn total_loss_grad(
    z: &[f64],
    logits: &[f64],
    label: ScenarioClass,
    protos: &[Prototype],
    cfg: &LossConfig,
) -> Result<SampleGrad, EncoderError> {
    cfg.validate()?;
    check_protos(z, protos, label)?;

    let mut proto = 0.0;
    let mut dz = vec![0.0; z.len()];
    let mut dprotos = Vec::with_capacity(protos.len());
    for p in protos {
        let (unit, norm) = unit_of(p)?;
        let cos: f64 = z.iter().zip(&unit).map(|(a, b)| a * b).sum();
        let d = 1.0 - cos;
        // Hinge subgradient is zero exactly at the margin.
        let coeff = if p.class == label {
            proto += (d - cfg.m_p).max(0.0);
            if d > cfg.m_p {
                1.0
            } else {
                0.0
            }
        } else {
            proto += (cfg.m_n - d).max(0.0);
            if d < cfg.m_n {
                -1.0
            } else {
                0.0
            }
        };
        let mut dp = vec![0.0; z.len()];
        if coeff != 0.0 {
            // dD/dz = −p̂;  dD/dp = −(z − (z·p̂)p̂)/‖p‖.
            for ((dzi, dpi), (&zi, &ui)) in
                dz.iter_mut().zip(&mut dp).zip(z.iter().zip(&unit))
            {
                *dzi += coeff * -ui;
                *dpi = coeff * -(zi - cos * ui) / norm;
            }
        }
        dprotos.push(dp);
    }

    let class = class_loss(logits, label)?;
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let denom: f64 = exps.iter().sum();
    let mut dlogits: Vec<f64> = exps.iter().map(|e| cfg.lambda * e / denom).collect();
    dlogits[label.id() as usize] -= cfg.lambda;

    Ok(SampleGrad {
        parts: LossParts {
            proto,
            class,
            total: proto + cfg.lambda * class,
        },
        dz,
        dlogits,
        dprotos,
    })
}
