//! Versioned binary snapshot of a [`MemoryBank`] (the `memory.bin` artifact).
//! Entries, assignments, and tuning survive byte-exactly; derived state
//! (neighbor counts, members, centroids) is rebuilt while loading.

use super::{ClusterState, DbscanParams, MemoryBank, MemoryEntry, MemoryError};
use crate::codec::{Reader, Writer};
use crate::encoder::SceneEmbedding;
use crate::planner::PlannerParams;
use crate::scenario::ScenarioClass;
use std::collections::{BTreeMap, BTreeSet};

pub const FORMAT_VERSION: u32 = 1;

pub fn encode_bank(bank: &MemoryBank) -> Vec<u8> {
    let mut w = Writer::new();
    w.put_u32(FORMAT_VERSION);
    w.put_f64(bank.params.eps);
    w.put_u32(bank.params.min_pts as u32);
    w.put_u32(bank.dim.map_or(0, |d| d as u32));
    w.put_u64(bank.next_cluster as u64);
    w.put_u32(bank.entries.len() as u32);
    for e in bank.entries.values() {
        w.put_u64(e.id);
        w.put_f64_slice(e.z.as_slice());
        match e.z.label {
            Some(c) => {
                w.put_bool(true);
                w.put_u8(c.id());
            }
            None => w.put_bool(false),
        }
        match e.cluster {
            Some(c) => {
                w.put_bool(true);
                w.put_u64(c as u64);
            }
            None => w.put_bool(false),
        }
        w.put_bool(e.is_core);
        w.put_u32(e.meta.len() as u32);
        for (k, v) in &e.meta {
            w.put_str(k);
            w.put_str(v);
        }
    }
    w.put_u32(bank.clusters.len() as u32);
    for c in bank.clusters.values() {
        w.put_u64(c.cluster_id as u64);
        match c.best_params {
            Some(p) => {
                w.put_bool(true);
                w.put_f64(p.lateral_offset);
                w.put_f64(p.min_gap);
                w.put_f64(p.accel_max);
                w.put_f64(p.brake_comfort);
                w.put_f64(p.ttc_threshold);
            }
            None => w.put_bool(false),
        }
        w.put_f64(c.best_score);
    }
    w.into_bytes()
}

pub fn decode_bank(bytes: &[u8]) -> Result<MemoryBank, MemoryError> {
    let mut r = Reader::new(bytes);
    r.expect_version(FORMAT_VERSION)?;
    let params = DbscanParams {
        eps: r.get_f64()?,
        min_pts: r.get_u32()? as usize,
    };
    params.validate()?;
    let dim = match r.get_u32()? as usize {
        0 => None,
        d => Some(d),
    };
    let next_cluster = r.get_u64()? as usize;

    let n_entries = r.get_u32()? as usize;
    let mut entries = BTreeMap::new();
    for _ in 0..n_entries {
        let id = r.get_u64()?;
        let z = r.get_f64_vec()?;
        let label = if r.get_bool()? {
            let raw = r.get_u8()?;
            Some(
                ScenarioClass::from_id(raw)
                    .ok_or_else(|| MemoryError::BadSnapshot(format!("unknown class id {raw}")))?,
            )
        } else {
            None
        };
        let z = SceneEmbedding::from_normalized(z, label)?;
        let cluster = if r.get_bool()? {
            Some(r.get_u64()? as usize)
        } else {
            None
        };
        let is_core = r.get_bool()?;
        let n_meta = r.get_u32()? as usize;
        let mut meta = BTreeMap::new();
        for _ in 0..n_meta {
            let k = r.get_str()?;
            let v = r.get_str()?;
            meta.insert(k, v);
        }
        if entries
            .insert(
                id,
                MemoryEntry {
                    id,
                    z,
                    cluster,
                    is_core,
                    meta,
                },
            )
            .is_some()
        {
            return Err(MemoryError::BadSnapshot(format!("entry id {id} appears twice")));
        }
    }

    let n_clusters = r.get_u32()? as usize;
    let mut clusters = BTreeMap::new();
    for _ in 0..n_clusters {
        let cid = r.get_u64()? as usize;
        let best_params = if r.get_bool()? {
            Some(PlannerParams {
                lateral_offset: r.get_f64()?,
                min_gap: r.get_f64()?,
                accel_max: r.get_f64()?,
                brake_comfort: r.get_f64()?,
                ttc_threshold: r.get_f64()?,
            })
        } else {
            None
        };
        let best_score = r.get_f64()?;
        let state = ClusterState {
            cluster_id: cid,
            members: BTreeSet::new(),
            centroid: Vec::new(),
            best_params,
            best_score,
        };
        if clusters.insert(cid, state).is_some() {
            return Err(MemoryError::BadSnapshot(format!("cluster id {cid} appears twice")));
        }
    }
    if !r.is_empty() {
        return Err(MemoryError::BadSnapshot(format!(
            "{} trailing byte(s)",
            bytes.len() - r.offset()
        )));
    }

    // Cross-checks before rebuilding derived state.
    let assigned: BTreeSet<usize> = entries.values().filter_map(|e| e.cluster).collect();
    for e in entries.values() {
        if Some(e.z.dim()) != dim {
            return Err(MemoryError::BadSnapshot(format!(
                "entry {} has dimension {}, header says {dim:?}",
                e.id,
                e.z.dim()
            )));
        }
        if e.is_core && e.cluster.is_none() {
            return Err(MemoryError::BadSnapshot(format!("core entry {} has no cluster", e.id)));
        }
    }
    for &cid in &assigned {
        if !clusters.contains_key(&cid) {
            return Err(MemoryError::BadSnapshot(format!("cluster {cid} has no record")));
        }
    }
    for &cid in clusters.keys() {
        if !assigned.contains(&cid) {
            return Err(MemoryError::BadSnapshot(format!("cluster {cid} has no members")));
        }
        if cid >= next_cluster {
            return Err(MemoryError::BadSnapshot(format!(
                "cluster {cid} is at or above the id watermark {next_cluster}"
            )));
        }
    }

    let mut bank = MemoryBank {
        params,
        entries,
        clusters,
        counts: BTreeMap::new(),
        next_cluster,
        dim,
    };
    bank.rebuild_counts();
    for e in bank.entries.values() {
        if e.is_core != (bank.counts[&e.id] >= bank.params.min_pts) {
            return Err(MemoryError::BadSnapshot(format!(
                "entry {} core flag disagrees with its neighborhood",
                e.id
            )));
        }
    }
    bank.rebuild_clusters();
    Ok(bank)
}

#[cfg(test)]
mod tests {
    use super::super::dbscan::tests::{circle, SEVEN};
    use super::*;
    use crate::codec::CodecError;

    fn sample_bank() -> MemoryBank {
        let mut b = MemoryBank::new(DbscanParams {
            eps: 0.4,
            min_pts: 3,
        })
        .unwrap();
        for (i, mut z) in circle(&SEVEN).into_iter().enumerate() {
            z.label = Some(ScenarioClass::from_id((i % 14) as u8).unwrap());
            let mut meta = BTreeMap::new();
            meta.insert("seed".to_string(), format!("{i}"));
            b.insert(i as u64, z, meta).unwrap();
        }
        let ids: Vec<usize> = b.clusters().map(|c| c.cluster_id).collect();
        b.set_tuned(
            ids[0],
            PlannerParams {
                lateral_offset: 1.0,
                ..PlannerParams::default()
            },
            91.25,
        )
        .unwrap();
        b
    }

    #[test]
    fn roundtrip_preserves_the_bank_exactly() {
        let bank = sample_bank();
        let bytes = encode_bank(&bank);
        let back = decode_bank(&bytes).unwrap();
        assert_eq!(back, bank);
        assert_eq!(encode_bank(&back), bytes);

        let empty = MemoryBank::new(DbscanParams::default()).unwrap();
        let back = decode_bank(&encode_bank(&empty)).unwrap();
        assert_eq!(back, empty);
    }

    #[test]
    fn version_mismatch_is_refused() {
        let mut bytes = encode_bank(&sample_bank());
        bytes[0] = 99;
        match decode_bank(&bytes) {
            Err(MemoryError::Codec(CodecError::Version { found, expected, .. })) => {
                assert_eq!((found, expected), (99, FORMAT_VERSION));
            }
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_input_is_refused() {
        let bytes = encode_bank(&sample_bank());
        assert!(matches!(
            decode_bank(&bytes[..bytes.len() - 3]),
            Err(MemoryError::Codec(CodecError::Truncated { .. }))
        ));
    }

    #[test]
    fn trailing_garbage_is_refused() {
        let mut bytes = encode_bank(&sample_bank());
        bytes.push(0);
        assert!(matches!(
            decode_bank(&bytes),
            Err(MemoryError::BadSnapshot(msg)) if msg.contains("trailing")
        ));
    }
}
