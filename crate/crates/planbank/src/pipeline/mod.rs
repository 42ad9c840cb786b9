//! End-to-end orchestration: suite generation, encoder training, memory
//! construction, lifelong adaptation, and the staged closed-loop benchmark.
//!
//! Everything is driven by a [`RunConfig`] whose hash is embedded in every
//! report: re-running with the same config and seeds reproduces report bytes
//! exactly. All randomness flows from config seeds.

use crate::encoder::features::{tensorize, Pad};
use crate::encoder::{
    train_encoder, EncoderModel, EncoderError, Prototype, SceneEmbedding, TrainConfig,
    TrainReport, EMBED_DIM,
};
use crate::memory::{DbscanParams, MemoryBank, MemoryError};
use crate::planner::{grid_search, GridSearchError, ParamGrid, PlannerParams};
use crate::reasoner::{
    decide_llm_logged, few_shots_from_bank, render_prompt, Decision, DecisionSource, LlmConfig,
    LlmExchange, DEFAULT_FEW_SHOTS,
};
use crate::scenario::{generate_scenario, GenKnobs, GenerateError, Scenario, ScenarioClass};
use crate::sim::{run_episode, Score, SimConfig, SimError, WorldState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("run config: {0}")]
    BadConfig(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse: {0}")]
    TomlDe(#[from] toml::de::Error),
    #[error("config write: {0}")]
    TomlSer(#[from] toml::ser::Error),
    #[error("report codec: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Scenario(#[from] GenerateError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Grid(#[from] GridSearchError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

fn io_err(path: &Path, source: std::io::Error) -> PipelineError {
    PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Artifact locations; parents are created on demand when writing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunPaths {
    pub out_dir: PathBuf,
    pub scenario_dir: PathBuf,
    pub encoder_checkpoint: PathBuf,
    pub memory_snapshot: PathBuf,
}

impl Default for RunPaths {
    fn default() -> Self {
        RunPaths {
            out_dir: "out".into(),
            scenario_dir: "out/scenarios".into(),
            encoder_checkpoint: "out/encoder.ckpt".into(),
            memory_snapshot: "out/memory.bank".into(),
        }
    }
}

/// Scenario seeds are drawn from disjoint per-purpose pools so adaptation
/// never sees an evaluation scene. Per-class streams inside a pool are
/// spaced [`CLASS_SEED_STRIDE`] apart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedSet {
    pub common_base: u64,
    pub adapt_base: u64,
    pub eval_base: u64,
    /// Seeds the random-projection embedder of the encoder ablation.
    pub projection: u64,
}

impl Default for SeedSet {
    fn default() -> Self {
        SeedSet {
            common_base: 1_000,
            adapt_base: 50_000,
            eval_base: 90_000,
            projection: 7,
        }
    }
}

pub const CLASS_SEED_STRIDE: u64 = 1_000;

/// Scenario counts per pipeline phase. The common-to-long-tail ratio
/// mirrors the data imbalance the memory is meant to compensate for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    /// Encoder training scenes per class, over all classes.
    pub encoder_train_per_class: usize,
    /// Scenes per common class seeding the base memory.
    pub memory_per_class: usize,
    /// Scenes per long-tail class inserted at its adaptation stage.
    pub adapt_per_class: usize,
    /// Evaluation scenes per long-tail class, re-scored at every stage.
    pub eval_per_class: usize,
    /// Cluster members regenerated for grid search, lowest entry id first.
    pub tune_scenarios_per_cluster: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            encoder_train_per_class: 8,
            memory_per_class: 6,
            adapt_per_class: 10,
            eval_per_class: 10,
            tune_scenarios_per_cluster: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFlags {
    /// Force the deterministic prototype decision; never call the endpoint.
    pub no_llm: bool,
    /// Drop retrieval entirely; every episode runs the global defaults.
    pub no_memory: bool,
    /// Replace the trained encoder by a seeded random projection.
    pub no_encoder: bool,
}

/// The one document driving every subcommand. Serialized as TOML; the
/// sha-256 of the canonical serialization is the config hash reports embed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// Also write each endpoint exchange next to the episode artifacts.
    pub log_prompts: bool,
    pub paths: RunPaths,
    pub seeds: SeedSet,
    pub suite: SuiteConfig,
    pub knobs: GenKnobs,
    pub train: TrainConfig,
    pub dbscan: DbscanParams,
    pub grid: ParamGrid,
    pub sim: SimConfig,
    pub llm: LlmConfig,
    pub ablation: AblationFlags,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            log_prompts: false,
            paths: RunPaths::default(),
            seeds: SeedSet::default(),
            suite: SuiteConfig::default(),
            knobs: GenKnobs::default(),
            // The full fourteen-class suite needs well past the bare default
            // to separate cleanly; 200 epochs reaches zero training error.
            train: TrainConfig {
                epochs: 200,
                ..TrainConfig::default()
            },
            dbscan: DbscanParams::default(),
            grid: ParamGrid::default(),
            sim: SimConfig::default(),
            llm: LlmConfig::default(),
            ablation: AblationFlags::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::BadConfig(m));
        if self.version != CONFIG_VERSION {
            return bad(format!(
                "config version {} (this build reads {CONFIG_VERSION})",
                self.version
            ));
        }
        for (what, p) in [
            ("paths.out_dir", &self.paths.out_dir),
            ("paths.scenario_dir", &self.paths.scenario_dir),
            ("paths.encoder_checkpoint", &self.paths.encoder_checkpoint),
            ("paths.memory_snapshot", &self.paths.memory_snapshot),
        ] {
            if p.as_os_str().is_empty() {
                return bad(format!("{what} is empty"));
            }
        }
        let s = &self.suite;
        if s.encoder_train_per_class < 2 {
            return bad("suite.encoder_train_per_class must be >= 2".into());
        }
        if s.memory_per_class == 0
            || s.adapt_per_class == 0
            || s.eval_per_class == 0
            || s.tune_scenarios_per_cluster == 0
        {
            return bad("suite counts must all be >= 1".into());
        }
        // Seed pools must stay disjoint; each spans every class stream.
        let span = CLASS_SEED_STRIDE * (ScenarioClass::ALL.len() as u64 - 1)
            + [
                s.encoder_train_per_class,
                s.memory_per_class,
                s.adapt_per_class,
                s.eval_per_class,
            ]
            .iter()
            .max()
            .copied()
            .unwrap() as u64;
        let pools = [
            ("common", self.seeds.common_base),
            ("adapt", self.seeds.adapt_base),
            ("eval", self.seeds.eval_base),
        ];
        for (i, &(an, a)) in pools.iter().enumerate() {
            for &(bn, b) in &pools[i + 1..] {
                if a < b.saturating_add(span) && b < a.saturating_add(span) {
                    return bad(format!("seed pools {an} and {bn} overlap"));
                }
            }
        }
        if s.encoder_train_per_class > CLASS_SEED_STRIDE as usize
            || s.memory_per_class > CLASS_SEED_STRIDE as usize
            || s.adapt_per_class > CLASS_SEED_STRIDE as usize
            || s.eval_per_class > CLASS_SEED_STRIDE as usize
        {
            return bad(format!("per-class counts must fit the class seed stride {CLASS_SEED_STRIDE}"));
        }
        self.train
            .validate()
            .map_err(|e| PipelineError::BadConfig(e.to_string()))?;
        self.grid
            .validate()
            .map_err(|e| PipelineError::BadConfig(e.to_string()))?;
        if self.llm.timeout_secs == 0 {
            return bad("llm.timeout_secs must be >= 1".into());
        }
        Ok(())
    }
}

/// Hex sha-256 of the canonical TOML serialization — whitespace and key
/// order in the source file do not affect it.
pub fn config_hash(cfg: &RunConfig) -> Result<String, PipelineError> {
    let text = toml::to_string(cfg)?;
    let digest = Sha256::digest(text.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

pub fn load_config(path: &Path) -> Result<RunConfig, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let cfg: RunConfig = toml::from_str(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn save_config(cfg: &RunConfig, path: &Path) -> Result<(), PipelineError> {
    let text = toml::to_string(cfg)?;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Seed of the `index`-th scene of `class` within a pool.
pub fn scenario_seed(base: u64, class: ScenarioClass, index: usize) -> u64 {
    base + CLASS_SEED_STRIDE * class.id() as u64 + index as u64
}

/// Memory entry ids are derived from (class, generator seed), so re-inserting
/// the same scene is detectable.
pub fn entry_id(class: ScenarioClass, seed: u64) -> u64 {
    seed * 100 + class.id() as u64
}

pub fn generate_pool(
    classes: &[ScenarioClass],
    per_class: usize,
    base: u64,
    knobs: &GenKnobs,
) -> Result<Vec<Scenario>, PipelineError> {
    let mut out = Vec::with_capacity(classes.len() * per_class);
    for &class in classes {
        for i in 0..per_class {
            out.push(generate_scenario(class, scenario_seed(base, class, i), knobs)?);
        }
    }
    Ok(out)
}

/// Trains the scene encoder on the full class taxonomy and returns it with
/// its class prototypes. Scenes come from the `common` seed pool.
pub fn train_pipeline_encoder(
    cfg: &RunConfig,
) -> Result<(EncoderModel, Vec<Prototype>, TrainReport), PipelineError> {
    let pool = generate_pool(
        &ScenarioClass::ALL,
        cfg.suite.encoder_train_per_class,
        cfg.seeds.common_base,
        &cfg.knobs,
    )?;
    Ok(train_encoder(&pool, &cfg.train)?)
}

/// How scenes become embeddings: the trained network, or — for the encoder
/// ablation — a fixed seeded Gaussian projection of the raw scene tensor.
pub enum Embedder<'a> {
    Model(&'a EncoderModel),
    Projection { seed: u64 },
}

impl Embedder<'_> {
    pub fn embed(&self, sc: &Scenario) -> Result<SceneEmbedding, PipelineError> {
        match self {
            Embedder::Model(m) => Ok(m.encode(sc)?),
            Embedder::Projection { seed } => project_embed(sc, *seed),
        }
    }
}

fn project_embed(sc: &Scenario, seed: u64) -> Result<SceneEmbedding, PipelineError> {
    let t = tensorize(sc, Pad::Zero);
    let mut x = Vec::new();
    for (track, steps) in t.agents.iter().zip(&t.agent_steps) {
        for (row, &ok) in track.iter().zip(steps) {
            if ok {
                x.extend_from_slice(row);
            } else {
                x.extend(std::iter::repeat(0.0).take(row.len()));
            }
        }
    }
    for poly in &t.polylines {
        for row in poly {
            x.extend_from_slice(row);
        }
    }
    x.extend_from_slice(&t.ego);
    // One gaussian row per output lane, regenerated from the seed; the
    // projection is identical across processes and runs.
    let mut z = vec![0.0; EMBED_DIM];
    for (i, zi) in z.iter_mut().enumerate() {
        let row_seed = seed ^ ((i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut rng = ChaCha8Rng::seed_from_u64(row_seed);
        *zi = x
            .iter()
            .map(|&xj| xj * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .sum();
    }
    Ok(SceneEmbedding::new(z, Some(sc.label))?)
}

fn describe(sc: &Scenario) -> String {
    format!(
        "{} scene, limit {:.0} m/s, {} agents",
        sc.label,
        sc.speed_limit,
        sc.agents.len()
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunedCluster {
    pub cluster_id: usize,
    pub params: PlannerParams,
    pub mean_score: f64,
    pub members: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdaptOutcome {
    pub inserted: Vec<u64>,
    /// Entry ids already present; their clusters keep their tuned params.
    pub skipped: Vec<u64>,
    pub tuned: Vec<TunedCluster>,
}

/// Regenerates a cluster's member scenes from their stored (class, seed)
/// provenance. Members without provenance (synthetic samples) are skipped.
fn tuning_set(
    bank: &MemoryBank,
    cluster_id: usize,
    cap: usize,
    knobs: &GenKnobs,
) -> Result<Vec<Scenario>, PipelineError> {
    let Some(cluster) = bank.cluster(cluster_id) else {
        return Ok(Vec::new());
    };
    // Collect every member we can regenerate, then take an evenly spaced
    // sample so a cluster that grew still tunes on its newest scenes instead
    // of only its oldest ids.
    let mut sources = Vec::new();
    for &member in &cluster.members {
        let Some(entry) = bank.entry(member) else { continue };
        let (Some(class), Some(seed)) = (entry.meta.get("class"), entry.meta.get("seed")) else {
            continue;
        };
        let (Ok(class), Ok(seed)) = (ScenarioClass::from_str(class), seed.parse::<u64>()) else {
            continue;
        };
        sources.push((class, seed));
    }
    let mut out = Vec::new();
    if sources.is_empty() || cap == 0 {
        return Ok(out);
    }
    let take = cap.min(sources.len());
    for i in 0..take {
        let (class, seed) = sources[i * sources.len() / take];
        out.push(generate_scenario(class, seed, knobs)?);
    }
    Ok(out)
}

/// Inserts new scenes into memory and re-tunes every cluster that gained
/// members or was newly created. Already-present scenes are skipped, so the
/// call is idempotent. `persist` runs after each insert and each tune so a
/// crash loses at most one step; the encoder is never touched.
pub fn adapt(
    bank: &mut MemoryBank,
    scenarios: &[Scenario],
    embedder: &Embedder,
    cfg: &RunConfig,
    mut persist: impl FnMut(&MemoryBank) -> Result<(), PipelineError>,
) -> Result<AdaptOutcome, PipelineError> {
    let mut outcome = AdaptOutcome::default();
    let mut affected = BTreeSet::new();
    for sc in scenarios {
        let id = entry_id(sc.label, sc.seed);
        if bank.entry(id).is_some() {
            outcome.skipped.push(id);
            continue;
        }
        let z = embedder.embed(sc)?;
        let meta = BTreeMap::from([
            ("class".to_string(), sc.label.name().to_string()),
            ("seed".to_string(), sc.seed.to_string()),
            ("desc".to_string(), describe(sc)),
        ]);
        let report = bank.insert(id, z, meta)?;
        affected.extend(report.affected);
        affected.extend(report.cluster);
        outcome.inserted.push(id);
        persist(bank)?;
    }
    outcome.tuned = tune_clusters(bank, &affected, cfg, &mut persist)?;
    Ok(outcome)
}

/// Grid-searches each listed cluster on scenes regenerated from its members
/// and stores the winner. Ids that no longer exist (merged away) and
/// clusters without regenerable members are skipped.
pub fn tune_clusters(
    bank: &mut MemoryBank,
    clusters: &BTreeSet<usize>,
    cfg: &RunConfig,
    mut persist: impl FnMut(&MemoryBank) -> Result<(), PipelineError>,
) -> Result<Vec<TunedCluster>, PipelineError> {
    let mut tuned = Vec::new();
    for &cluster_id in clusters {
        let Some(members) = bank.cluster(cluster_id).map(|c| c.members.len()) else {
            continue;
        };
        let set = tuning_set(bank, cluster_id, cfg.suite.tune_scenarios_per_cluster, &cfg.knobs)?;
        if set.is_empty() {
            continue;
        }
        let (params, table) = grid_search(&set, &cfg.grid, &cfg.sim)?;
        let mean_score = table
            .iter()
            .find(|p| p.params == params)
            .map(|p| p.mean_score)
            .unwrap_or(0.0);
        bank.set_tuned(cluster_id, params, mean_score)?;
        tuned.push(TunedCluster {
            cluster_id,
            params,
            mean_score,
            members,
        });
        persist(bank)?;
    }
    Ok(tuned)
}

/// Fresh bank seeded with `scenarios`, every resulting cluster tuned.
pub fn build_memory(
    cfg: &RunConfig,
    embedder: &Embedder,
    scenarios: &[Scenario],
) -> Result<(MemoryBank, AdaptOutcome), PipelineError> {
    let mut bank = MemoryBank::new(cfg.dbscan)?;
    let outcome = adapt(&mut bank, scenarios, embedder, cfg, |_| Ok(()))?;
    Ok((bank, outcome))
}

/// Cumulative memory stages in fixed order: each long-tail class is added on
/// top of everything before it.
pub fn benchmark_stages() -> Vec<(String, Vec<ScenarioClass>)> {
    let mut stages = vec![("base".to_string(), Vec::new())];
    let mut acc = Vec::new();
    let mut name = String::new();
    for &class in &ScenarioClass::LONG_TAIL {
        acc.push(class);
        let letter = class.name().chars().next().unwrap().to_ascii_uppercase();
        name.push('+');
        name.push(letter);
        stages.push((name.clone(), acc.clone()));
    }
    stages
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub stage: String,
    pub class: String,
    pub seed: u64,
    pub composite: f64,
    /// True when the episode could not run at all; such episodes score 0.
    pub aborted: bool,
    pub cluster: Option<usize>,
    pub source: DecisionSource,
    pub score: Option<Score>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: String,
    /// Mean composite over every episode of the stage.
    pub total: f64,
    pub per_class: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config_hash: String,
    pub episode_count: usize,
    pub stages: Vec<StageSummary>,
}

/// Folds per-episode rows into the report; stage order follows first
/// appearance, so rebuilding from stored rows is byte-exact.
pub fn summarize(config_hash: &str, episodes: &[EpisodeResult]) -> BenchmarkReport {
    let mut order = Vec::new();
    let mut by_stage: BTreeMap<&str, Vec<&EpisodeResult>> = BTreeMap::new();
    for ep in episodes {
        if !order.iter().any(|s| *s == ep.stage) {
            order.push(ep.stage.clone());
        }
        by_stage.entry(&ep.stage).or_default().push(ep);
    }
    let mean = |rows: &[&EpisodeResult]| {
        rows.iter().map(|e| e.composite).sum::<f64>() / rows.len().max(1) as f64
    };
    let stages = order
        .iter()
        .map(|stage| {
            let rows = &by_stage[stage.as_str()];
            let mut per_class: BTreeMap<String, Vec<&EpisodeResult>> = BTreeMap::new();
            for ep in rows {
                per_class.entry(ep.class.clone()).or_default().push(ep);
            }
            StageSummary {
                stage: stage.clone(),
                total: mean(rows),
                per_class: per_class
                    .into_iter()
                    .map(|(class, rows)| (class, mean(&rows)))
                    .collect(),
            }
        })
        .collect();
    BenchmarkReport {
        config_hash: config_hash.to_string(),
        episode_count: episodes.len(),
        stages,
    }
}

fn effective_llm(cfg: &RunConfig) -> LlmConfig {
    let mut llm = cfg.llm.clone();
    llm.enabled &= !cfg.ablation.no_llm;
    llm
}

fn stage_slug(stage: &str) -> String {
    if stage == "base" {
        return stage.to_string();
    }
    stage.chars().filter(|c| c.is_ascii_alphanumeric()).collect()
}

/// Pretty JSON with a trailing newline, parents created as needed.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn read_episodes(path: &Path) -> Result<Vec<EpisodeResult>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Evaluates the long-tail suite once against the current memory. Episode
/// failures of any kind are recorded as aborted rows scoring 0 and the run
/// continues; only filesystem trouble is an error.
fn eval_stage(
    cfg: &RunConfig,
    stage: &str,
    bank: Option<&MemoryBank>,
    embedder: &Embedder,
    llm: &LlmConfig,
    out: Option<&Path>,
) -> Result<Vec<EpisodeResult>, PipelineError> {
    let mut jobs = Vec::new();
    for &class in &ScenarioClass::LONG_TAIL {
        for i in 0..cfg.suite.eval_per_class {
            jobs.push((class, scenario_seed(cfg.seeds.eval_base, class, i)));
        }
    }
    let rows: Vec<(EpisodeResult, Option<String>, Option<LlmExchange>)> = jobs
        .par_iter()
        .map(|&(class, seed)| run_eval_episode(cfg, stage, class, seed, bank, embedder, llm))
        .collect();

    let mut episodes = Vec::with_capacity(rows.len());
    for (ep, trace_csv, exchange) in rows {
        if let Some(dir) = out {
            let stem = format!("{}_{}_{}", stage_slug(stage), ep.class, ep.seed);
            if let Some(csv) = &trace_csv {
                let path = dir.join("traces").join(format!("{stem}.csv"));
                std::fs::create_dir_all(path.parent().unwrap())
                    .map_err(|e| io_err(&path, e))?;
                std::fs::write(&path, csv).map_err(|e| io_err(&path, e))?;
            }
            if cfg.log_prompts {
                if let Some(ex) = &exchange {
                    write_json(&dir.join("prompts").join(format!("{stem}.json")), ex)?;
                }
            }
        }
        episodes.push(ep);
    }
    Ok(episodes)
}

fn run_eval_episode(
    cfg: &RunConfig,
    stage: &str,
    class: ScenarioClass,
    seed: u64,
    bank: Option<&MemoryBank>,
    embedder: &Embedder,
    llm: &LlmConfig,
) -> (EpisodeResult, Option<String>, Option<LlmExchange>) {
    let aborted = |cluster, source| EpisodeResult {
        stage: stage.to_string(),
        class: class.name().to_string(),
        seed,
        composite: 0.0,
        aborted: true,
        cluster,
        source,
        score: None,
    };
    let sc = match generate_scenario(class, seed, &cfg.knobs) {
        Ok(sc) => sc,
        Err(_) => return (aborted(None, DecisionSource::PrototypeFallback), None, None),
    };
    let (decision, exchange) = match bank {
        None => (
            Decision {
                cluster_id: None,
                params: PlannerParams::default(),
                source: DecisionSource::PrototypeFallback,
                rationale: "memory disabled".to_string(),
            },
            None,
        ),
        Some(bank) => match embedder.embed(&sc) {
            Ok(z) => {
                let shots = few_shots_from_bank(bank, &z, DEFAULT_FEW_SHOTS);
                let prompt = render_prompt(&sc, &z, &shots);
                decide_llm_logged(&prompt, llm, &z, bank)
            }
            Err(_) => return (aborted(None, DecisionSource::PrototypeFallback), None, None),
        },
    };
    let mut hook = |_: &WorldState| decision.params;
    match run_episode(&sc, &cfg.sim, &mut hook) {
        Ok((trace, score)) => (
            EpisodeResult {
                stage: stage.to_string(),
                class: class.name().to_string(),
                seed,
                composite: score.composite,
                aborted: false,
                cluster: decision.cluster_id,
                source: decision.source,
                score: Some(score),
            },
            Some(trace.to_csv()),
            exchange,
        ),
        Err(_) => (aborted(decision.cluster_id, decision.source), None, exchange),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchmarkMode {
    /// All five cumulative memory stages — the lifelong-improvement readout.
    Lifelong,
    /// One stage with every long-tail class adapted; used by the ablations.
    SingleStage,
}

/// Runs the staged closed-loop benchmark. The memory starts from the common
/// classes, each stage adapts in its new long-tail scenes, and the whole
/// evaluation suite is re-scored per stage. With `out` set, traces,
/// per-episode rows, and the report land on disk.
pub fn run_benchmark(
    cfg: &RunConfig,
    encoder: Option<&EncoderModel>,
    mode: BenchmarkMode,
    out: Option<&Path>,
) -> Result<(BenchmarkReport, Vec<EpisodeResult>), PipelineError> {
    cfg.validate()?;
    let hash = config_hash(cfg)?;
    let embedder = if cfg.ablation.no_encoder {
        Embedder::Projection {
            seed: cfg.seeds.projection,
        }
    } else {
        Embedder::Model(encoder.ok_or_else(|| {
            PipelineError::BadConfig("benchmark needs a trained encoder unless no_encoder is set".into())
        })?)
    };
    let llm = effective_llm(cfg);

    let mut bank = if cfg.ablation.no_memory {
        None
    } else {
        let commons = generate_pool(
            &ScenarioClass::COMMON,
            cfg.suite.memory_per_class,
            cfg.seeds.common_base,
            &cfg.knobs,
        )?;
        Some(build_memory(cfg, &embedder, &commons)?.0)
    };

    let stages = match mode {
        BenchmarkMode::Lifelong => benchmark_stages(),
        BenchmarkMode::SingleStage => vec![("all".to_string(), ScenarioClass::LONG_TAIL.to_vec())],
    };

    let mut episodes = Vec::new();
    let mut adapted: BTreeSet<u8> = BTreeSet::new();
    for (stage, classes) in &stages {
        if let Some(bank) = bank.as_mut() {
            for &class in classes {
                if !adapted.insert(class.id()) {
                    continue;
                }
                let pool = generate_pool(
                    &[class],
                    cfg.suite.adapt_per_class,
                    cfg.seeds.adapt_base,
                    &cfg.knobs,
                )?;
                adapt(bank, &pool, &embedder, cfg, |_| Ok(()))?;
            }
        }
        episodes.extend(eval_stage(cfg, stage, bank.as_ref(), &embedder, &llm, out)?);
    }

    let report = summarize(&hash, &episodes);
    if let Some(dir) = out {
        write_json(&dir.join("episodes.json"), &episodes)?;
        write_json(&dir.join("report.json"), &report)?;
        if let Some(bank) = &bank {
            let path = dir.join("memory_final.bank");
            std::fs::write(&path, crate::memory::encode_bank(bank))
                .map_err(|e| io_err(&path, e))?;
        }
    }
    Ok((report, episodes))
}

/// The four ablation rows: endpoint off, memory off, encoder replaced by a
/// random projection, and the full system. Each runs a single-stage
/// benchmark with all long-tail classes adapted in.
pub fn ablate(
    cfg: &RunConfig,
    encoder: Option<&EncoderModel>,
    out: Option<&Path>,
) -> Result<Vec<(String, BenchmarkReport)>, PipelineError> {
    let variants: [(&str, AblationFlags); 4] = [
        (
            "no_llm",
            AblationFlags {
                no_llm: true,
                ..AblationFlags::default()
            },
        ),
        (
            "no_memory",
            AblationFlags {
                no_memory: true,
                ..AblationFlags::default()
            },
        ),
        (
            "no_encoder",
            AblationFlags {
                no_encoder: true,
                ..AblationFlags::default()
            },
        ),
        ("full", AblationFlags::default()),
    ];
    let mut reports = Vec::new();
    for (name, flags) in variants {
        let mut variant = cfg.clone();
        variant.ablation = flags;
        let sub = out.map(|d| d.join(name));
        let (report, _) =
            run_benchmark(&variant, encoder, BenchmarkMode::SingleStage, sub.as_deref())?;
        reports.push((name.to_string(), report));
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Shrunk to keep the tests quick: tiny pools, a 2-point grid, and a
    /// relaxed cluster bar so 3 scenes per class are enough.
    fn tiny_config() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.suite = SuiteConfig {
            encoder_train_per_class: 2,
            memory_per_class: 3,
            adapt_per_class: 3,
            eval_per_class: 1,
            tune_scenarios_per_cluster: 2,
        };
        cfg.dbscan = DbscanParams {
            eps: 0.6,
            min_pts: 2,
        };
        cfg.grid = ParamGrid {
            lateral_offset: vec![0.0, 1.0],
            min_gap: vec![2.0],
            accel_max: vec![1.5],
            brake_comfort: vec![2.5],
            ttc_threshold: vec![1.0],
        };
        cfg.ablation.no_encoder = true;
        cfg
    }

    #[test]
    fn config_roundtrips_and_hash_ignores_formatting() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = toml::to_string(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(config_hash(&cfg).unwrap(), config_hash(&back).unwrap());

        // Same semantic content with reordered keys and noise whitespace.
        let noisy = format!("# a comment\n\n{}", text.replace("\n\n", "\n\n\n"));
        let noisy: RunConfig = toml::from_str(&noisy).unwrap();
        assert_eq!(config_hash(&cfg).unwrap(), config_hash(&noisy).unwrap());

        // A changed seed changes the hash.
        let mut other = RunConfig::default();
        other.seeds.projection += 1;
        assert_ne!(config_hash(&cfg).unwrap(), config_hash(&other).unwrap());
    }

    #[test]
    fn config_validation_rejects_bad_documents() {
        assert!(toml::from_str::<RunConfig>("nonsense_key = 3").is_err());

        let mut cfg = RunConfig::default();
        cfg.version = 99;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.seeds.adapt_base = cfg.seeds.common_base + 1;
        assert!(matches!(cfg.validate(), Err(PipelineError::BadConfig(m)) if m.contains("overlap")));

        let mut cfg = RunConfig::default();
        cfg.suite.encoder_train_per_class = 1;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.paths.out_dir = PathBuf::new();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn stage_list_is_cumulative_in_fixed_order() {
        let stages = benchmark_stages();
        let names: Vec<&str> = stages.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["base", "+H", "+H+N", "+H+N+C", "+H+N+C+T"]);
        assert!(stages[0].1.is_empty());
        assert_eq!(stages[4].1, ScenarioClass::LONG_TAIL);
        for w in stages.windows(2) {
            assert_eq!(w[1].1[..w[0].1.len()], w[0].1[..]);
        }
    }

    #[test]
    fn projection_embeddings_are_seed_deterministic() {
        let sc = generate_scenario(ScenarioClass::StoppingWithLead, 11, &GenKnobs::default())
            .unwrap();
        let e = Embedder::Projection { seed: 7 };
        let a = e.embed(&sc).unwrap();
        let b = e.embed(&sc).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
        let c = Embedder::Projection { seed: 8 }.embed(&sc).unwrap();
        assert_ne!(a.as_slice(), c.as_slice());
        let norm: f64 = a.as_slice().iter().map(|v| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn adapt_is_idempotent_and_tunes_new_clusters() {
        let cfg = tiny_config();
        let embedder = Embedder::Projection { seed: 7 };
        let pool = generate_pool(
            &[ScenarioClass::HighMagnitudeSpeed],
            3,
            cfg.seeds.adapt_base,
            &cfg.knobs,
        )
        .unwrap();

        let mut bank = MemoryBank::new(cfg.dbscan).unwrap();
        let first = adapt(&mut bank, &pool, &embedder, &cfg, |_| Ok(())).unwrap();
        assert_eq!(first.inserted.len(), 3);
        assert!(first.skipped.is_empty());
        assert!(!first.tuned.is_empty(), "a new cluster should get params");

        let before = crate::memory::encode_bank(&bank);
        let second = adapt(&mut bank, &pool, &embedder, &cfg, |_| Ok(())).unwrap();
        assert!(second.inserted.is_empty());
        assert_eq!(second.skipped.len(), 3);
        assert!(second.tuned.is_empty());
        assert_eq!(crate::memory::encode_bank(&bank), before);

        let empty = adapt(&mut bank, &[], &embedder, &cfg, |_| Ok(())).unwrap();
        assert_eq!(empty, AdaptOutcome::default());
        assert_eq!(crate::memory::encode_bank(&bank), before);
    }

    #[test]
    fn adapt_persists_partial_progress() {
        let cfg = tiny_config();
        let embedder = Embedder::Projection { seed: 7 };
        let pool = generate_pool(
            &[ScenarioClass::ChangingLane],
            3,
            cfg.seeds.adapt_base,
            &cfg.knobs,
        )
        .unwrap();
        let mut bank = MemoryBank::new(cfg.dbscan).unwrap();
        let mut snapshots = Vec::new();
        adapt(&mut bank, &pool, &embedder, &cfg, |b| {
            snapshots.push(crate::memory::encode_bank(b));
            Ok(())
        })
        .unwrap();
        // One snapshot per insert plus one per tuned cluster, strictly growing.
        assert!(snapshots.len() >= 4);
        let decoded = crate::memory::decode_bank(snapshots.last().unwrap()).unwrap();
        assert_eq!(decoded.len(), bank.len());
    }

    #[test]
    fn summaries_average_exactly_and_fold_back_byte_equal() {
        let ep = |stage: &str, class: &str, composite: f64| EpisodeResult {
            stage: stage.to_string(),
            class: class.to_string(),
            seed: 1,
            composite,
            aborted: false,
            cluster: None,
            source: DecisionSource::PrototypeFallback,
            score: None,
        };
        let episodes = vec![
            ep("base", "a", 10.0),
            ep("base", "b", 20.0),
            ep("+H", "a", 40.0),
        ];
        let report = summarize("deadbeef", &episodes);
        assert_eq!(report.episode_count, 3);
        assert_eq!(report.stages.len(), 2);
        assert_eq!(report.stages[0].stage, "base");
        assert_eq!(report.stages[0].total, 15.0);
        assert_eq!(report.stages[0].per_class["a"], 10.0);
        assert_eq!(report.stages[1].total, 40.0);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("episodes.json");
        write_json(&path, &episodes).unwrap();
        let back = read_episodes(&path).unwrap();
        assert_eq!(back, episodes);
        let a = serde_json::to_string_pretty(&report).unwrap();
        let b = serde_json::to_string_pretty(&summarize("deadbeef", &back)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_stage_benchmark_is_reproducible_and_writes_artifacts() {
        let cfg = tiny_config();
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let (r1, eps1) =
            run_benchmark(&cfg, None, BenchmarkMode::SingleStage, Some(&out)).unwrap();
        let (r2, eps2) = run_benchmark(&cfg, None, BenchmarkMode::SingleStage, None).unwrap();
        assert_eq!(
            serde_json::to_string(&r1).unwrap(),
            serde_json::to_string(&r2).unwrap()
        );
        assert_eq!(eps1, eps2);
        assert_eq!(eps1.len(), 4 * cfg.suite.eval_per_class);
        assert!(eps1.iter().all(|e| !e.aborted));

        // Stored rows reproduce the stored report byte-for-byte.
        let report_bytes = std::fs::read(out.join("report.json")).unwrap();
        let back = read_episodes(&out.join("episodes.json")).unwrap();
        let mut rebuilt = serde_json::to_string_pretty(&summarize(&r1.config_hash, &back)).unwrap();
        rebuilt.push('\n');
        assert_eq!(report_bytes, rebuilt.into_bytes());
        assert!(out.join("traces").read_dir().unwrap().count() >= eps1.len());
        assert!(out.join("memory_final.bank").exists());
    }

    #[test]
    fn no_memory_ablation_runs_every_episode_on_defaults() {
        let mut cfg = tiny_config();
        cfg.ablation.no_memory = true;
        let (report, episodes) =
            run_benchmark(&cfg, None, BenchmarkMode::SingleStage, None).unwrap();
        assert_eq!(report.episode_count, episodes.len());
        assert!(episodes.iter().all(|e| e.cluster.is_none()));
        assert!(episodes
            .iter()
            .all(|e| e.source == DecisionSource::PrototypeFallback));
    }
}
