//! Encode scenes, cluster them incrementally, tune each cluster, and query
//! the bank for nearest neighbors.
//!
//!     cargo run --example build_memory

use planbank::encoder::train_encoder;
use planbank::memory::{decode_bank, encode_bank, DbscanParams, MemoryBank};
use planbank::pipeline::{adapt, Embedder, RunConfig, SuiteConfig};
use planbank::scenario::{generate_scenario, GenKnobs, ScenarioClass};

fn main() -> anyhow::Result<()> {
    let classes = [
        ScenarioClass::FollowingLaneWithLead,
        ScenarioClass::WaitingForPedestrianToCross,
        ScenarioClass::NearMultipleVehicles,
    ];
    let knobs = GenKnobs::default();
    let mut scenarios = Vec::new();
    for class in classes {
        for seed in 0..5 {
            scenarios.push(generate_scenario(class, seed, &knobs)?);
        }
    }
    let (model, _, _) = train_encoder(&scenarios, &Default::default())?;

    let mut cfg = RunConfig::default();
    cfg.dbscan = DbscanParams {
        eps: 0.3,
        min_pts: 3,
    };
    cfg.suite = SuiteConfig {
        tune_scenarios_per_cluster: 2,
        ..cfg.suite
    };
    let mut bank = MemoryBank::new(cfg.dbscan)?;
    let outcome = adapt(&mut bank, &scenarios, &Embedder::Model(&model), &cfg, |_| Ok(()))?;
    println!(
        "{} scenes inserted, {} clusters tuned",
        outcome.inserted.len(),
        outcome.tuned.len()
    );
    for c in bank.clusters() {
        let label = bank
            .entry(*c.members.iter().next().unwrap())
            .and_then(|e| e.meta.get("class").cloned())
            .unwrap_or_default();
        println!(
            "  cluster {}: {} members ({label}), tuned lateral {:.1} m, score {:.2}",
            c.cluster_id,
            c.members.len(),
            c.best_params.map(|p| p.lateral_offset).unwrap_or(f64::NAN),
            c.best_score,
        );
    }

    // Nearest neighbors of a fresh scene of a known class.
    let probe = generate_scenario(ScenarioClass::NearMultipleVehicles, 99, &knobs)?;
    let z = model.encode(&probe)?;
    println!("\nnearest neighbors of an unseen {} scene:", probe.label);
    for entry in bank.query_knn(&z, 3)? {
        println!(
            "  entry {} (cluster {:?}): {}",
            entry.id,
            entry.cluster,
            entry.meta.get("desc").cloned().unwrap_or_default()
        );
    }

    // Snapshots are byte-stable.
    let bytes = encode_bank(&bank);
    let back = decode_bank(&bytes)?;
    assert_eq!(encode_bank(&back), bytes);
    println!("\nsnapshot: {} bytes, decode/encode is byte-stable", bytes.len());
    Ok(())
}
