//! The embedding space scenes are summarized into.
//!
//! A scene becomes a unit-norm vector `z`; cosine distance is the metric
//! everywhere (retrieval, clustering, the margin loss). Per-class anchors
//! ([`Prototype`]) tie the space to the scenario taxonomy during training.
//! The network that produces the embeddings lives in the submodules.

pub mod checkpoint;
pub mod features;
pub mod loss;
pub mod nn;
pub mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint};
pub use loss::{LossConfig, LossParts};
pub use nn::{backward, forward, EncoderModel, Forward, NUM_CLASSES};
pub use train::{evaluate_encoder, train_encoder, EvalStats, TrainConfig, TrainReport};

use crate::scenario::ScenarioClass;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Width of the embedding space.
pub const EMBED_DIM: usize = 64;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("non-finite value in vector")]
    NonFinite,
    #[error("vector length {a} does not match {b}")]
    DimMismatch { a: usize, b: usize },
    #[error("vector norm {0} is not 1")]
    NotUnit(f64),
    #[error("non-finite activation in {0}")]
    Activation(&'static str),
    #[error("loss configuration invalid: {0}")]
    BadLossConfig(&'static str),
    #[error("no prototype for class {0}")]
    MissingPrototype(ScenarioClass),
    #[error("training configuration invalid: {0}")]
    BadTrainConfig(&'static str),
    #[error("training set invalid: {0}")]
    BadTrainSet(&'static str),
    #[error("checkpoint malformed: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Codec(#[from] crate::codec::CodecError),
}

/// Cosine distance `1 − cos∠(a, b)`, in `[0, 2]`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64, EncoderError> {
    if a.len() != b.len() {
        return Err(EncoderError::DimMismatch {
            a: a.len(),
            b: b.len(),
        });
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if !(dot.is_finite() && na.is_finite() && nb.is_finite()) {
        return Err(EncoderError::NonFinite);
    }
    if na <= 0.0 || nb <= 0.0 {
        return Err(EncoderError::ZeroVector);
    }
    Ok(1.0 - dot / (na.sqrt() * nb.sqrt()))
}

/// A unit-norm point in embedding space, optionally tagged with the class of
/// the scene it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEmbedding {
    z: Vec<f64>,
    pub label: Option<ScenarioClass>,
}

impl SceneEmbedding {
    /// Normalizes `raw` to unit length.
    pub fn new(raw: Vec<f64>, label: Option<ScenarioClass>) -> Result<Self, EncoderError> {
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(EncoderError::NonFinite);
        }
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(EncoderError::ZeroVector);
        }
        Ok(SceneEmbedding {
            z: raw.into_iter().map(|v| v / norm).collect(),
            label,
        })
    }

    /// Wraps an already-normalized vector without touching its bytes; decoded
    /// snapshots must reproduce what was saved exactly.
    pub(crate) fn from_normalized(
        z: Vec<f64>,
        label: Option<ScenarioClass>,
    ) -> Result<Self, EncoderError> {
        if z.iter().any(|v| !v.is_finite()) {
            return Err(EncoderError::NonFinite);
        }
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(EncoderError::NotUnit(norm));
        }
        Ok(SceneEmbedding { z, label })
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.z
    }
}

/// A learned per-class anchor in embedding space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub class: ScenarioClass,
    pub p: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_distance_matches_closed_forms() {
        // 45 degrees between (1,0) and the diagonal.
        let d = cosine_distance(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((d - 0.29289321881345254).abs() < 1e-15);
        assert!(cosine_distance(&[2.0, 0.0], &[5.0, 0.0]).unwrap().abs() < 1e-15);
        assert!((cosine_distance(&[1.0, 0.0], &[0.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((cosine_distance(&[1.0, 0.0], &[-2.0, 0.0]).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn cosine_distance_refuses_degenerate_inputs() {
        assert!(matches!(
            cosine_distance(&[0.0, 0.0], &[1.0, 0.0]),
            Err(EncoderError::ZeroVector)
        ));
        assert!(matches!(
            cosine_distance(&[f64::NAN, 0.0], &[1.0, 0.0]),
            Err(EncoderError::NonFinite)
        ));
        assert!(matches!(
            cosine_distance(&[1.0], &[1.0, 0.0]),
            Err(EncoderError::DimMismatch { a: 1, b: 2 })
        ));
    }

    #[test]
    fn embeddings_are_normalized_on_construction() {
        let e = SceneEmbedding::new(vec![3.0, 4.0], None).unwrap();
        assert_eq!(e.as_slice(), &[0.6, 0.8]);
        let n: f64 = e.as_slice().iter().map(|v| v * v).sum();
        assert!((n - 1.0).abs() < 1e-12);
        assert!(matches!(
            SceneEmbedding::new(vec![0.0; 4], None),
            Err(EncoderError::ZeroVector)
        ));
        assert!(matches!(
            SceneEmbedding::new(vec![1.0, f64::INFINITY], None),
            Err(EncoderError::NonFinite)
        ));
    }

    #[test]
    fn prenormalized_wrapper_rejects_non_unit_vectors() {
        assert!(SceneEmbedding::from_normalized(vec![0.6, 0.8], None).is_ok());
        assert!(matches!(
            SceneEmbedding::from_normalized(vec![0.6, 0.9], None),
            Err(EncoderError::NotUnit(_))
        ));
    }
}
