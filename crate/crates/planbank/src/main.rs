//! Thin command-line front end; all logic lives in the library.

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use planbank::encoder::{decode_checkpoint, encode_checkpoint, EncoderModel, Prototype};
use planbank::memory::{decode_bank, encode_bank, sample_synthetic, MemoryBank};
use planbank::pipeline::{
    ablate, adapt, benchmark_stages, build_memory, config_hash, generate_pool, load_config,
    read_episodes, run_benchmark, save_config, scenario_seed, summarize, train_pipeline_encoder,
    tune_clusters, write_json, BenchmarkMode, BenchmarkReport, Embedder, RunConfig,
};
use planbank::planner::ParamGrid;
use planbank::reasoner::{decide_llm_logged, few_shots_from_bank, render_prompt, DEFAULT_FEW_SHOTS};
use planbank::scenario::{
    decode_scenarios, encode_scenarios, generate_scenario, to_json, Scenario, ScenarioClass,
};
use planbank::sim::run_episode;
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Parser)]
#[command(name = "planbank", version, about = "Closed-loop motion planning with a lifelong scenario memory")]
struct Cli {
    /// TOML run configuration; omitted means built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Offsets every scenario seed pool and reseeds training/projection;
    /// different values give fully disjoint suites.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides paths.out_dir from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Never call the language-model endpoint; decide from prototypes only.
    #[arg(long, global = true)]
    no_llm: bool,
    /// Write each endpoint exchange next to the episode artifacts.
    #[arg(long, global = true)]
    log_prompts: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the scenario suites (train / adapt / eval) into scenario_dir.
    Gen,
    /// Train the scene encoder and write its checkpoint.
    TrainEncoder,
    /// Build a tuned memory bank from scenarios and write the snapshot.
    BuildMemory {
        /// Clustering radius override.
        #[arg(long)]
        eps: Option<f64>,
        /// Core-point neighbor count override.
        #[arg(long)]
        min_pts: Option<usize>,
        /// Scenario file (from `gen`) to build from; default: the common suite.
        #[arg(long)]
        from: Option<PathBuf>,
        /// Std-dev of synthetic samples drawn around each class prototype.
        #[arg(long, default_value_t = 0.05)]
        augment_sigma: f64,
        /// Synthetic samples per prototype (0 = no augmentation).
        #[arg(long, default_value_t = 0)]
        augment_n: usize,
    },
    /// Insert new long-tail scenes into the memory and re-tune their clusters.
    Adapt {
        /// Long-tail class to adapt in (repeatable); default: all four.
        #[arg(long = "class")]
        classes: Vec<String>,
    },
    /// Re-run grid search on memory clusters.
    Tune {
        /// Grid file (TOML) overriding the configured parameter grid.
        #[arg(long)]
        grid: Option<PathBuf>,
        /// Single cluster id; default: every cluster.
        #[arg(long)]
        cluster: Option<usize>,
    },
    /// Run one closed-loop episode and write its trace and score.
    Simulate {
        /// Scenario class to simulate.
        #[arg(long)]
        class: String,
        /// Index into the evaluation seed pool.
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Staged lifelong benchmark over the long-tail suite.
    Benchmark,
    /// The four ablation configurations, one report each.
    Ablate,
    /// Rebuild report.json from stored episode rows (byte-exact).
    Report,
}

fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => load_config(path).with_context(|| format!("loading {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        let shift = seed.wrapping_mul(1_000_000);
        cfg.seeds.common_base = cfg.seeds.common_base.wrapping_add(shift);
        cfg.seeds.adapt_base = cfg.seeds.adapt_base.wrapping_add(shift);
        cfg.seeds.eval_base = cfg.seeds.eval_base.wrapping_add(shift);
        cfg.seeds.projection = cfg.seeds.projection.wrapping_add(seed);
        cfg.train.seed = cfg.train.seed.wrapping_add(seed);
    }
    if let Some(out) = &cli.out {
        let rebase = |p: &Path| out.join(p.file_name().unwrap_or(p.as_os_str()));
        cfg.paths.scenario_dir = out.join("scenarios");
        cfg.paths.encoder_checkpoint = rebase(&cfg.paths.encoder_checkpoint);
        cfg.paths.memory_snapshot = rebase(&cfg.paths.memory_snapshot);
        cfg.paths.out_dir = out.clone();
    }
    cfg.ablation.no_llm |= cli.no_llm;
    cfg.log_prompts |= cli.log_prompts;
    cfg.validate()?;
    Ok(cfg)
}

fn write_suite(dir: &Path, name: &str, scs: &[Scenario]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(format!("{name}.bin")), encode_scenarios(scs))?;
    std::fs::write(dir.join(format!("{name}.json")), to_json(scs))?;
    println!("{name}: {} scenarios -> {}", scs.len(), dir.join(name).display());
    Ok(())
}

fn load_encoder(cfg: &RunConfig) -> Result<(EncoderModel, Vec<Prototype>)> {
    let path = &cfg.paths.encoder_checkpoint;
    let bytes = std::fs::read(path)
        .with_context(|| format!("{} (run `train-encoder` first)", path.display()))?;
    Ok(decode_checkpoint(&bytes)?)
}

fn load_bank(cfg: &RunConfig) -> Result<MemoryBank> {
    let path = &cfg.paths.memory_snapshot;
    let bytes = std::fs::read(path)
        .with_context(|| format!("{} (run `build-memory` first)", path.display()))?;
    Ok(decode_bank(&bytes)?)
}

fn save_bank(cfg: &RunConfig, bank: &MemoryBank) -> Result<()> {
    if let Some(parent) = cfg.paths.memory_snapshot.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&cfg.paths.memory_snapshot, encode_bank(bank))?;
    Ok(())
}

/// Encoder for normal runs, seeded projection under the encoder ablation.
fn embedder<'a>(cfg: &RunConfig, model: Option<&'a EncoderModel>) -> Result<Embedder<'a>> {
    if cfg.ablation.no_encoder {
        Ok(Embedder::Projection {
            seed: cfg.seeds.projection,
        })
    } else {
        Ok(Embedder::Model(model.context("encoder required unless ablation.no_encoder is set")?))
    }
}

fn parse_class(name: &str) -> Result<ScenarioClass> {
    ScenarioClass::from_str(name).map_err(|_| {
        let all: Vec<&str> = ScenarioClass::ALL.iter().map(|c| c.name()).collect();
        anyhow::anyhow!("unknown class {name:?}; expected one of: {}", all.join(", "))
    })
}

fn print_report(name: &str, report: &BenchmarkReport) {
    println!("{name}: {} episodes, config {}", report.episode_count, &report.config_hash[..12]);
    for stage in &report.stages {
        let classes: Vec<String> = stage
            .per_class
            .iter()
            .map(|(c, v)| format!("{c}={v:.2}"))
            .collect();
        println!("  {:<10} total {:6.2}   {}", stage.stage, stage.total, classes.join("  "));
    }
}

fn cmd_gen(cfg: &RunConfig) -> Result<()> {
    let dir = &cfg.paths.scenario_dir;
    let train = generate_pool(
        &ScenarioClass::ALL,
        cfg.suite.encoder_train_per_class,
        cfg.seeds.common_base,
        &cfg.knobs,
    )?;
    write_suite(dir, "train", &train)?;
    let adapt = generate_pool(
        &ScenarioClass::LONG_TAIL,
        cfg.suite.adapt_per_class,
        cfg.seeds.adapt_base,
        &cfg.knobs,
    )?;
    write_suite(dir, "adapt", &adapt)?;
    let eval = generate_pool(
        &ScenarioClass::LONG_TAIL,
        cfg.suite.eval_per_class,
        cfg.seeds.eval_base,
        &cfg.knobs,
    )?;
    write_suite(dir, "eval", &eval)?;
    save_config(cfg, &dir.join("run_config.toml"))?;
    Ok(())
}

fn cmd_train_encoder(cfg: &RunConfig) -> Result<()> {
    let (model, protos, report) = train_pipeline_encoder(cfg)?;
    let path = &cfg.paths.encoder_checkpoint;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, encode_checkpoint(&model, &protos))?;
    let last = report.epochs.last().context("no epochs trained")?;
    println!(
        "trained {} epochs on {} classes: loss {:.4}, accuracy {:.1}%",
        report.epochs.len(),
        report.classes.len(),
        last.loss,
        last.accuracy * 100.0
    );
    println!("checkpoint -> {}", path.display());
    Ok(())
}

fn cmd_build_memory(
    cfg: &RunConfig,
    eps: Option<f64>,
    min_pts: Option<usize>,
    from: Option<PathBuf>,
    augment_sigma: f64,
    augment_n: usize,
) -> Result<()> {
    let mut cfg = cfg.clone();
    if let Some(eps) = eps {
        cfg.dbscan.eps = eps;
    }
    if let Some(min_pts) = min_pts {
        cfg.dbscan.min_pts = min_pts;
    }
    let scenarios = match from {
        Some(path) => decode_scenarios(&std::fs::read(&path)?)?,
        None => generate_pool(
            &ScenarioClass::COMMON,
            cfg.suite.memory_per_class,
            cfg.seeds.common_base,
            &cfg.knobs,
        )?,
    };
    let (model, protos) = if cfg.ablation.no_encoder {
        (None, Vec::new())
    } else {
        let (m, p) = load_encoder(&cfg)?;
        (Some(m), p)
    };
    let embedder = embedder(&cfg, model.as_ref())?;
    let (mut bank, outcome) = build_memory(&cfg, &embedder, &scenarios)?;

    if augment_n > 0 {
        if protos.is_empty() {
            bail!("augmentation needs class prototypes from an encoder checkpoint");
        }
        let mut affected = BTreeSet::new();
        for proto in &protos {
            let samples = sample_synthetic(
                proto,
                augment_sigma,
                augment_n,
                cfg.seeds.projection ^ proto.class.id() as u64,
            )?;
            for (i, z) in samples.into_iter().enumerate() {
                let id = 1_000_000_000 + proto.class.id() as u64 * 10_000 + i as u64;
                if bank.entry(id).is_some() {
                    continue;
                }
                let meta = std::collections::BTreeMap::from([
                    ("desc".to_string(), format!("synthetic {} sample", proto.class)),
                    ("synthetic".to_string(), "1".to_string()),
                ]);
                let report = bank.insert(id, z, meta)?;
                affected.extend(report.affected);
                affected.extend(report.cluster);
            }
        }
        tune_clusters(&mut bank, &affected, &cfg, |_| Ok(()))?;
        println!("augmented with {} synthetic samples per class", augment_n);
    }

    save_bank(&cfg, &bank)?;
    println!(
        "memory: {} entries, {} clusters ({} tuned) -> {}",
        bank.len(),
        bank.clusters().count(),
        bank.tuned().count(),
        cfg.paths.memory_snapshot.display()
    );
    for t in &outcome.tuned {
        println!(
            "  cluster {}: {} members, score {:.2}, lateral {:.1} gap {:.1} accel {:.1} brake {:.1} ttc {:.1}",
            t.cluster_id, t.members, t.mean_score, t.params.lateral_offset, t.params.min_gap,
            t.params.accel_max, t.params.brake_comfort, t.params.ttc_threshold
        );
    }
    Ok(())
}

fn cmd_adapt(cfg: &RunConfig, classes: Vec<String>) -> Result<()> {
    let classes = if classes.is_empty() {
        ScenarioClass::LONG_TAIL.to_vec()
    } else {
        classes.iter().map(|c| parse_class(c)).collect::<Result<Vec<_>>>()?
    };
    let model = if cfg.ablation.no_encoder {
        None
    } else {
        Some(load_encoder(cfg)?.0)
    };
    let embedder = embedder(cfg, model.as_ref())?;
    let mut bank = load_bank(cfg)?;
    let pool = generate_pool(&classes, cfg.suite.adapt_per_class, cfg.seeds.adapt_base, &cfg.knobs)?;
    let outcome = adapt(&mut bank, &pool, &embedder, cfg, |b| {
        std::fs::write(&cfg.paths.memory_snapshot, encode_bank(b)).map_err(|e| {
            planbank::pipeline::PipelineError::Io {
                path: cfg.paths.memory_snapshot.display().to_string(),
                source: e,
            }
        })
    })?;
    println!(
        "adapted: {} inserted, {} already present, {} clusters tuned",
        outcome.inserted.len(),
        outcome.skipped.len(),
        outcome.tuned.len()
    );
    Ok(())
}

fn cmd_tune(cfg: &RunConfig, grid: Option<PathBuf>, cluster: Option<usize>) -> Result<()> {
    let mut cfg = cfg.clone();
    if let Some(path) = grid {
        let text = std::fs::read_to_string(&path)?;
        cfg.grid = toml::from_str::<ParamGrid>(&text)
            .with_context(|| format!("parsing grid {}", path.display()))?;
        cfg.grid.validate()?;
    }
    let mut bank = load_bank(&cfg)?;
    let targets: BTreeSet<usize> = match cluster {
        Some(id) => {
            if bank.cluster(id).is_none() {
                bail!("no cluster {id} in the memory snapshot");
            }
            BTreeSet::from([id])
        }
        None => bank.clusters().map(|c| c.cluster_id).collect(),
    };
    let tuned = tune_clusters(&mut bank, &targets, &cfg, |_| Ok(()))?;
    save_bank(&cfg, &bank)?;
    write_json(&cfg.paths.out_dir.join("tune_results.json"), &tuned)?;
    for t in &tuned {
        println!(
            "cluster {}: score {:.2} with lateral {:.1} gap {:.1} accel {:.1} brake {:.1} ttc {:.1}",
            t.cluster_id, t.mean_score, t.params.lateral_offset, t.params.min_gap,
            t.params.accel_max, t.params.brake_comfort, t.params.ttc_threshold
        );
    }
    println!("{} clusters tuned", tuned.len());
    Ok(())
}

fn cmd_simulate(cfg: &RunConfig, class: String, index: usize) -> Result<()> {
    let class = parse_class(&class)?;
    let seed = scenario_seed(cfg.seeds.eval_base, class, index);
    let sc = generate_scenario(class, seed, &cfg.knobs)?;

    let model = if cfg.ablation.no_encoder {
        None
    } else {
        load_encoder(cfg).ok().map(|(m, _)| m)
    };
    let bank = load_bank(cfg).ok();
    let decision = match (&bank, &model) {
        (Some(bank), _) if !cfg.ablation.no_memory => {
            let embedder = embedder(cfg, model.as_ref())?;
            let z = embedder.embed(&sc)?;
            let shots = few_shots_from_bank(bank, &z, DEFAULT_FEW_SHOTS);
            let prompt = render_prompt(&sc, &z, &shots);
            let mut llm = cfg.llm.clone();
            llm.enabled &= !cfg.ablation.no_llm;
            let (decision, exchange) = decide_llm_logged(&prompt, &llm, &z, bank);
            if cfg.log_prompts {
                if let Some(ex) = exchange {
                    write_json(&cfg.paths.out_dir.join("prompts").join(format!("{}_{seed}.json", class.name())), &ex)?;
                }
            }
            decision
        }
        _ => planbank::reasoner::Decision {
            cluster_id: None,
            params: Default::default(),
            source: planbank::reasoner::DecisionSource::PrototypeFallback,
            rationale: "no memory snapshot; using global defaults".to_string(),
        },
    };
    println!("decision: {}", decision.rationale);

    let mut hook = |_: &planbank::sim::WorldState| decision.params;
    let (trace, score) = run_episode(&sc, &cfg.sim, &mut hook)?;
    let dir = cfg.paths.out_dir.join("episodes");
    std::fs::create_dir_all(&dir)?;
    let stem = format!("{}_{}", class.name(), seed);
    std::fs::write(dir.join(format!("{stem}.csv")), trace.to_csv())?;
    write_json(&dir.join(format!("{stem}.score.json")), &score)?;
    println!(
        "composite {:.2} (ttc {:.2}, progress {:.2}, speed {:.2}, comfort {:.2}){}",
        score.composite,
        score.ttc_compliance,
        score.progress_ratio,
        score.speed_compliance,
        score.comfort,
        if score.no_at_fault_collision { "" } else { "  [at-fault collision]" }
    );
    for (step, ev) in trace.events() {
        println!("  step {step}: {ev}");
    }
    println!("trace -> {}", dir.join(format!("{stem}.csv")).display());
    Ok(())
}

fn cmd_benchmark(cfg: &RunConfig) -> Result<()> {
    let model = if cfg.ablation.no_encoder {
        None
    } else if cfg.paths.encoder_checkpoint.exists() {
        Some(load_encoder(cfg)?.0)
    } else {
        println!("no checkpoint at {}; training encoder first", cfg.paths.encoder_checkpoint.display());
        let (model, protos, _) = train_pipeline_encoder(cfg)?;
        if let Some(parent) = cfg.paths.encoder_checkpoint.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&cfg.paths.encoder_checkpoint, encode_checkpoint(&model, &protos))?;
        Some(model)
    };
    let out = cfg.paths.out_dir.join("benchmark");
    let (report, _) = run_benchmark(cfg, model.as_ref(), BenchmarkMode::Lifelong, Some(&out))?;
    print_report("benchmark", &report);
    println!("artifacts -> {}", out.display());
    Ok(())
}

fn cmd_ablate(cfg: &RunConfig) -> Result<()> {
    let model = if cfg.paths.encoder_checkpoint.exists() {
        Some(load_encoder(cfg)?.0)
    } else {
        println!("no checkpoint at {}; training encoder first", cfg.paths.encoder_checkpoint.display());
        let (model, protos, _) = train_pipeline_encoder(cfg)?;
        if let Some(parent) = cfg.paths.encoder_checkpoint.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&cfg.paths.encoder_checkpoint, encode_checkpoint(&model, &protos))?;
        Some(model)
    };
    let out = cfg.paths.out_dir.join("ablation");
    let reports = ablate(cfg, model.as_ref(), Some(&out))?;
    for (name, report) in &reports {
        print_report(name, report);
    }
    println!("artifacts -> {}", out.display());
    Ok(())
}

fn cmd_report(cfg: &RunConfig) -> Result<()> {
    let dir = cfg.paths.out_dir.join("benchmark");
    let episodes = read_episodes(&dir.join("episodes.json"))
        .with_context(|| format!("{} (run `benchmark` first)", dir.join("episodes.json").display()))?;
    let hash = config_hash(cfg)?;
    let report = summarize(&hash, &episodes);
    write_json(&dir.join("report.json"), &report)?;
    print_report("report", &report);

    // Sanity: the stage list matches the lifelong protocol when present.
    let expected: Vec<String> = benchmark_stages().into_iter().map(|(n, _)| n).collect();
    let got: Vec<&str> = report.stages.iter().map(|s| s.stage.as_str()).collect();
    if got.len() == expected.len() && got.iter().zip(&expected).any(|(g, e)| g != e) {
        println!("note: stage names differ from the lifelong protocol: {got:?}");
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = effective_config(&cli)?;
    match cli.cmd {
        Cmd::Gen => cmd_gen(&cfg),
        Cmd::TrainEncoder => cmd_train_encoder(&cfg),
        Cmd::BuildMemory {
            eps,
            min_pts,
            from,
            augment_sigma,
            augment_n,
        } => cmd_build_memory(&cfg, eps, min_pts, from, augment_sigma, augment_n),
        Cmd::Adapt { classes } => cmd_adapt(&cfg, classes),
        Cmd::Tune { grid, cluster } => cmd_tune(&cfg, grid, cluster),
        Cmd::Simulate { class, index } => cmd_simulate(&cfg, class, index),
        Cmd::Benchmark => cmd_benchmark(&cfg),
        Cmd::Ablate => cmd_ablate(&cfg),
        Cmd::Report => cmd_report(&cfg),
    }
}
