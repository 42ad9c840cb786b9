//! Insert-only bank of scene embeddings, clustered incrementally.
//!
//! Clustering is density-based over cosine distance: a point with at least
//! `min_pts` neighbors within `eps` (itself included) is core, cores within
//! `eps` of each other share a cluster, and non-core points within `eps` of a
//! core are that cluster's border. [`MemoryBank::insert`] maintains exactly
//! the partition [`cluster_offline`] would produce on the full set (up to
//! cluster numbering): it promotes the points whose neighborhoods grew,
//! merges clusters bridged by a fresh core point (the smaller id survives),
//! and then re-derives every border assignment so ties stay order-free.
//!
//! Each cluster carries the planner parameters tuned for it, which is what
//! the rest of the pipeline retrieves. Reads (`query_knn`, snapshots) take
//! `&self`, the single writer (`insert`) takes `&mut self`; shared-xor-mutable
//! is the whole concurrency story.

use crate::codec::CodecError;
use crate::encoder::{EncoderError, Prototype, SceneEmbedding};
use crate::planner::{PlanError, PlannerParams};
use crate::scenario::ScenarioClass;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

mod dbscan;
mod snapshot;

pub use dbscan::cluster_offline;
pub use snapshot::{decode_bank, encode_bank, FORMAT_VERSION};

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("clustering params: {0}")]
    BadParams(&'static str),
    #[error("duplicate entry id {0}")]
    DuplicateId(u64),
    #[error("embedding has dimension {got}, bank holds {want}")]
    DimMismatch { want: usize, got: usize },
    #[error("unknown cluster {0}")]
    UnknownCluster(usize),
    #[error("sampling: {0}")]
    BadSample(&'static str),
    #[error("snapshot: {0}")]
    BadSnapshot(String),
    #[error(transparent)]
    Embedding(#[from] EncoderError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbscanParams {
    /// Cosine-distance neighborhood radius.
    pub eps: f64,
    /// Neighbors (self included) needed to make a point core.
    pub min_pts: usize,
}

impl Default for DbscanParams {
    fn default() -> Self {
        DbscanParams {
            eps: 0.3,
            min_pts: 5,
        }
    }
}

impl DbscanParams {
    pub fn validate(&self) -> Result<(), MemoryError> {
        if !self.eps.is_finite() || self.eps <= 0.0 || self.eps > 2.0 {
            return Err(MemoryError::BadParams("eps must lie in (0, 2]"));
        }
        if self.min_pts == 0 {
            return Err(MemoryError::BadParams("min_pts must be at least 1"));
        }
        Ok(())
    }
}

/// One remembered scene.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry {
    pub id: u64,
    pub z: SceneEmbedding,
    /// Cluster the entry currently belongs to; `None` is noise.
    pub cluster: Option<usize>,
    pub is_core: bool,
    /// Free-form provenance: generator seed, episode scores, and the like.
    pub meta: BTreeMap<String, String>,
}

impl MemoryEntry {
    pub fn label(&self) -> Option<ScenarioClass> {
        self.z.label
    }
}

/// A cluster and the planner tuning attached to it.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    pub cluster_id: usize,
    pub members: BTreeSet<u64>,
    /// Renormalized mean of the member embeddings.
    pub centroid: Vec<f64>,
    /// Planner parameters grid search picked for this cluster, once it ran.
    pub best_params: Option<PlannerParams>,
    /// Mean closed-loop score of `best_params`; meaningful only when tuned.
    pub best_score: f64,
}

/// What one insert changed.
#[derive(Debug, Clone, PartialEq)]
pub struct InsertReport {
    pub id: u64,
    /// Cluster the new entry landed in (`None`: noise).
    pub cluster: Option<usize>,
    /// Every cluster whose membership changed, including ids that vanished
    /// in merges — the set worth re-tuning.
    pub affected: BTreeSet<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    params: DbscanParams,
    entries: BTreeMap<u64, MemoryEntry>,
    clusters: BTreeMap<usize, ClusterState>,
    /// Neighbor counts (self included) per entry; derived, never serialized.
    counts: BTreeMap<u64, usize>,
    next_cluster: usize,
    /// Embedding width, fixed by the first insert.
    dim: Option<usize>,
}

impl MemoryBank {
    pub fn new(params: DbscanParams) -> Result<Self, MemoryError> {
        params.validate()?;
        Ok(MemoryBank {
            params,
            entries: BTreeMap::new(),
            clusters: BTreeMap::new(),
            counts: BTreeMap::new(),
            next_cluster: 0,
            dim: None,
        })
    }

    pub fn params(&self) -> DbscanParams {
        self.params
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    /// Smallest id above every stored one.
    pub fn next_id(&self) -> u64 {
        self.entries.keys().next_back().map_or(0, |id| id + 1)
    }

    pub fn entry(&self, id: u64) -> Option<&MemoryEntry> {
        self.entries.get(&id)
    }

    pub fn entries(&self) -> impl Iterator<Item = &MemoryEntry> {
        self.entries.values()
    }

    pub fn cluster(&self, id: usize) -> Option<&ClusterState> {
        self.clusters.get(&id)
    }

    pub fn clusters(&self) -> impl Iterator<Item = &ClusterState> {
        self.clusters.values()
    }

    /// Clusters that have been through grid search.
    pub fn tuned(&self) -> impl Iterator<Item = &ClusterState> {
        self.clusters.values().filter(|c| c.best_params.is_some())
    }

    pub fn assignments(&self) -> BTreeMap<u64, Option<usize>> {
        self.entries.iter().map(|(&id, e)| (id, e.cluster)).collect()
    }

    /// Records the grid-search outcome for a cluster.
    pub fn set_tuned(
        &mut self,
        cluster_id: usize,
        params: PlannerParams,
        score: f64,
    ) -> Result<(), MemoryError> {
        params.validate()?;
        if !score.is_finite() {
            return Err(MemoryError::BadParams("best_score must be finite"));
        }
        let c = self
            .clusters
            .get_mut(&cluster_id)
            .ok_or(MemoryError::UnknownCluster(cluster_id))?;
        c.best_params = Some(params);
        c.best_score = score;
        Ok(())
    }

    /// Adds one entry and restores the clustering invariants.
    pub fn insert(
        &mut self,
        id: u64,
        z: SceneEmbedding,
        meta: BTreeMap<String, String>,
    ) -> Result<InsertReport, MemoryError> {
        if self.entries.contains_key(&id) {
            return Err(MemoryError::DuplicateId(id));
        }
        let dim = *self.dim.get_or_insert(z.dim());
        if z.dim() != dim {
            return Err(MemoryError::DimMismatch { want: dim, got: z.dim() });
        }
        let before = self.assignments();

        // Neighborhoods gain exactly the new point, so only the counts of its
        // neighbors can move, and cores never demote.
        let nbrs: Vec<u64> = self
            .entries
            .values()
            .filter(|e| dbscan::unit_dist(e.z.as_slice(), z.as_slice()) <= self.params.eps)
            .map(|e| e.id)
            .collect();
        let mut newly_core: Vec<u64> = Vec::new();
        for &q in &nbrs {
            let c = self.counts.get_mut(&q).expect("neighbor ids are stored");
            *c += 1;
            if *c == self.params.min_pts {
                newly_core.push(q);
            }
        }
        let own = nbrs.len() + 1;
        self.counts.insert(id, own);
        self.entries.insert(
            id,
            MemoryEntry {
                id,
                z,
                cluster: None,
                is_core: false,
                meta,
            },
        );
        if own >= self.params.min_pts {
            newly_core.push(id);
        }
        newly_core.sort_unstable();
        for &q in &newly_core {
            self.entries.get_mut(&q).expect("just listed").is_core = true;
        }

        // Each fresh core point stitches together every cluster that owns a
        // core within eps of it; the smallest id survives the merge.
        for &q in &newly_core {
            let qz = self.entries[&q].z.clone();
            let mut targets: BTreeSet<usize> = self.entries[&q].cluster.into_iter().collect();
            for e in self.entries.values() {
                if e.id != q
                    && e.is_core
                    && dbscan::unit_dist(e.z.as_slice(), qz.as_slice()) <= self.params.eps
                {
                    targets.extend(e.cluster);
                }
            }
            let keep = match targets.iter().next() {
                Some(&k) => k,
                None => {
                    let k = self.next_cluster;
                    self.next_cluster += 1;
                    self.clusters.insert(
                        k,
                        ClusterState {
                            cluster_id: k,
                            members: BTreeSet::new(),
                            centroid: qz.as_slice().to_vec(),
                            best_params: None,
                            best_score: 0.0,
                        },
                    );
                    k
                }
            };
            for e in self.entries.values_mut() {
                if e.cluster.map_or(false, |c| c != keep && targets.contains(&c)) {
                    e.cluster = Some(keep);
                }
            }
            for &t in &targets {
                if t != keep {
                    self.clusters.remove(&t);
                }
            }
            self.entries.get_mut(&q).expect("just listed").cluster = Some(keep);
        }

        self.reassign_borders();
        self.rebuild_clusters();

        let after = self.assignments();
        let mut affected: BTreeSet<usize> = BTreeSet::new();
        for (eid, old) in &before {
            let new = after[eid];
            if *old != new {
                affected.extend(*old);
                affected.extend(new);
            }
        }
        let landed = after[&id];
        affected.extend(landed);
        Ok(InsertReport {
            id,
            cluster: landed,
            affected,
        })
    }

    /// The `k` stored entries nearest to `z` by cosine distance; ties break
    /// to the smaller id. Returns fewer when the bank is small.
    pub fn query_knn(&self, z: &SceneEmbedding, k: usize) -> Result<Vec<&MemoryEntry>, MemoryError> {
        if let Some(dim) = self.dim {
            if z.dim() != dim {
                return Err(MemoryError::DimMismatch { want: dim, got: z.dim() });
            }
        }
        let mut scored: Vec<(f64, &MemoryEntry)> = self
            .entries
            .values()
            .map(|e| (dbscan::unit_dist(e.z.as_slice(), z.as_slice()), e))
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.id.cmp(&b.1.id)));
        Ok(scored.into_iter().take(k).map(|(_, e)| e).collect())
    }

    /// Borders are re-derived globally after every structural change: the
    /// nearest core within eps wins, distance ties go to the smaller cluster
    /// id. Re-deriving instead of patching keeps assignments independent of
    /// insertion order.
    fn reassign_borders(&mut self) {
        let cores: Vec<(u64, usize)> = self
            .entries
            .values()
            .filter(|e| e.is_core)
            .map(|e| (e.id, e.cluster.expect("core points always hold a cluster")))
            .collect();
        let mut updates: Vec<(u64, Option<usize>)> = Vec::new();
        for e in self.entries.values() {
            if e.is_core {
                continue;
            }
            let mut best: Option<(f64, usize)> = None;
            for &(cid, cl) in &cores {
                let d = dbscan::unit_dist(e.z.as_slice(), self.entries[&cid].z.as_slice());
                if d > self.params.eps {
                    continue;
                }
                if best.map_or(true, |(bd, bc)| d < bd || (d == bd && cl < bc)) {
                    best = Some((d, cl));
                }
            }
            updates.push((e.id, best.map(|(_, c)| c)));
        }
        for (eid, c) in updates {
            self.entries.get_mut(&eid).expect("listed above").cluster = c;
        }
    }

    /// Re-derives members and centroids from the entry assignments and drops
    /// cluster records that lost everything in a merge.
    fn rebuild_clusters(&mut self) {
        let mut members: BTreeMap<usize, BTreeSet<u64>> = BTreeMap::new();
        for e in self.entries.values() {
            if let Some(c) = e.cluster {
                members.entry(c).or_default().insert(e.id);
            }
        }
        self.clusters.retain(|id, _| members.contains_key(id));
        for (cid, ids) in members {
            let dim = self.dim.expect("members imply entries");
            let mut mean = vec![0.0; dim];
            for &eid in &ids {
                for (m, v) in mean.iter_mut().zip(self.entries[&eid].z.as_slice()) {
                    *m += v;
                }
            }
            let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
            let centroid = if norm >= 1e-12 {
                mean.iter().map(|v| v / norm).collect()
            } else {
                // Members cancel exactly; fall back to the lowest id so the
                // centroid stays unit-norm and history-free.
                self.entries[ids.iter().next().expect("members nonempty")]
                    .z
                    .as_slice()
                    .to_vec()
            };
            let state = self
                .clusters
                .get_mut(&cid)
                .expect("assigned ids always have a cluster record");
            state.members = ids;
            state.centroid = centroid;
        }
    }

    /// Recomputes neighbor counts from scratch; used when loading snapshots.
    fn rebuild_counts(&mut self) {
        let ids: Vec<u64> = self.entries.keys().copied().collect();
        self.counts.clear();
        for &i in &ids {
            let zi = &self.entries[&i].z;
            let c = self
                .entries
                .values()
                .filter(|e| dbscan::unit_dist(e.z.as_slice(), zi.as_slice()) <= self.params.eps)
                .count();
            self.counts.insert(i, c);
        }
    }
}

/// Draws `n` unit embeddings from an isotropic Gaussian of width `sigma`
/// around the normalized prototype, labeled with the prototype's class.
/// Deterministic in `seed`.
pub fn sample_synthetic(
    proto: &Prototype,
    sigma: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<SceneEmbedding>, MemoryError> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(MemoryError::BadSample("sigma must be finite and non-negative"));
    }
    let center = SceneEmbedding::new(proto.p.clone(), Some(proto.class))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let raw: Vec<f64> = center
            .as_slice()
            .iter()
            .map(|&c| c + sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        // A draw cancelling the prototype exactly has measure zero; skip it
        // rather than fail, keeping the stream deterministic.
        if let Ok(e) = SceneEmbedding::new(raw, Some(proto.class)) {
            out.push(e);
        }
    }
    Ok(out)
}
