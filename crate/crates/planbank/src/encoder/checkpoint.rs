//! Binary checkpoints for trained weights and prototypes.
//!
//! The layout follows the model's tensor registry verbatim: name, shape,
//! data, in registry order. Decoding cross-checks every name and shape
//! against the registry of a fresh model, so a checkpoint from a different
//! architecture is rejected rather than silently misread.

use super::nn::EncoderModel;
use super::{EncoderError, Prototype};
use crate::codec::{Reader, Writer};
use crate::scenario::ScenarioClass;

pub const FORMAT_VERSION: u32 = 1;

pub fn encode_checkpoint(model: &EncoderModel, protos: &[Prototype]) -> Vec<u8> {
    let mut w = Writer::new();
    w.put_u32(FORMAT_VERSION);
    let params = model.params();
    w.put_u32(params.len() as u32);
    for (name, rows, cols, data) in params {
        w.put_str(name);
        w.put_u32(rows as u32);
        w.put_u32(cols as u32);
        w.put_f64_slice(data);
    }
    w.put_u32(protos.len() as u32);
    for p in protos {
        w.put_u8(p.class.id());
        w.put_f64_slice(&p.p);
    }
    w.into_bytes()
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(EncoderModel, Vec<Prototype>), EncoderError> {
    let mut r = Reader::new(bytes);
    r.expect_version(FORMAT_VERSION)?;

    let mut model = EncoderModel::new(0);
    let registry: Vec<(&'static str, usize, usize)> = model
        .params()
        .iter()
        .map(|(n, rows, cols, _)| (*n, *rows, *cols))
        .collect();
    let count = r.get_u32()? as usize;
    if count != registry.len() {
        return Err(EncoderError::BadCheckpoint(format!(
            "expected {} tensors, found {count}",
            registry.len()
        )));
    }
    let mut tensors = Vec::with_capacity(count);
    for (name, rows, cols) in &registry {
        let found = r.get_str()?;
        if found != *name {
            return Err(EncoderError::BadCheckpoint(format!(
                "expected tensor {name}, found {found}"
            )));
        }
        let fr = r.get_u32()? as usize;
        let fc = r.get_u32()? as usize;
        if fr != *rows || fc != *cols {
            return Err(EncoderError::BadCheckpoint(format!(
                "tensor {name} is {fr}x{fc}, expected {rows}x{cols}"
            )));
        }
        let data = r.get_f64_vec()?;
        if data.len() != rows * cols {
            return Err(EncoderError::BadCheckpoint(format!(
                "tensor {name} carries {} values for shape {rows}x{cols}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(EncoderError::BadCheckpoint(format!(
                "tensor {name} holds non-finite values"
            )));
        }
        tensors.push(data);
    }
    for ((_, w), data) in model.params_mut().into_iter().zip(tensors) {
        *w = data;
    }

    let n_protos = r.get_u32()? as usize;
    let mut protos = Vec::with_capacity(n_protos);
    let mut seen = 0u16;
    for _ in 0..n_protos {
        let id = r.get_u8()?;
        let class = ScenarioClass::from_id(id)
            .ok_or_else(|| EncoderError::BadCheckpoint(format!("unknown class id {id}")))?;
        if seen & (1 << id) != 0 {
            return Err(EncoderError::BadCheckpoint(format!(
                "duplicate prototype for class {class}"
            )));
        }
        seen |= 1 << id;
        let p = r.get_f64_vec()?;
        if p.iter().any(|v| !v.is_finite()) {
            return Err(EncoderError::BadCheckpoint(format!(
                "prototype for class {class} holds non-finite values"
            )));
        }
        protos.push(Prototype { class, p });
    }

    if !r.is_empty() {
        return Err(EncoderError::BadCheckpoint(format!(
            "{} trailing bytes after prototypes",
            bytes.len() - r.offset()
        )));
    }
    Ok((model, protos))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::CodecError;
    use crate::encoder::EMBED_DIM;

    fn fixture() -> (EncoderModel, Vec<Prototype>) {
        let model = EncoderModel::new(5);
        let protos = vec![
            Prototype {
                class: ScenarioClass::ALL[0],
                p: (0..EMBED_DIM).map(|i| (i as f64 * 0.37).sin()).collect(),
            },
            Prototype {
                class: ScenarioClass::ALL[3],
                p: (0..EMBED_DIM).map(|i| (i as f64 * 0.11).cos()).collect(),
            },
        ];
        (model, protos)
    }

    #[test]
    fn roundtrip_is_exact_and_stable() {
        let (model, protos) = fixture();
        let bytes = encode_checkpoint(&model, &protos);
        let (m2, p2) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(model, m2);
        assert_eq!(protos, p2);
        assert_eq!(bytes, encode_checkpoint(&m2, &p2));
    }

    #[test]
    fn version_and_truncation_are_detected() {
        let (model, protos) = fixture();
        let mut bytes = encode_checkpoint(&model, &protos);
        bytes[0] = 99;
        assert!(matches!(
            decode_checkpoint(&bytes),
            Err(EncoderError::Codec(CodecError::Version { found: 99, .. }))
        ));
        let bytes = encode_checkpoint(&model, &protos);
        assert!(matches!(
            decode_checkpoint(&bytes[..bytes.len() / 2]),
            Err(EncoderError::Codec(CodecError::Truncated { .. }))
        ));
    }

    #[test]
    fn tampered_layout_is_rejected() {
        let (model, protos) = fixture();
        let mut bytes = encode_checkpoint(&model, &protos);
        // First tensor name starts after version, count, and the name length.
        bytes[12] ^= 0x20;
        assert!(matches!(
            decode_checkpoint(&bytes),
            Err(EncoderError::BadCheckpoint(_))
        ));
        let mut bytes = encode_checkpoint(&model, &protos);
        bytes.push(0);
        assert!(matches!(
            decode_checkpoint(&bytes),
            Err(EncoderError::BadCheckpoint(msg)) if msg.contains("trailing")
        ));
    }
}
