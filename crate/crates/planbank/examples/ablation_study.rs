//! Compare the full system against the three ablations — endpoint off,
//! memory off, encoder replaced by a random projection — on the long-tail
//! suite, at reduced scale.
//!
//!     cargo run --example ablation_study

use planbank::pipeline::{ablate, train_pipeline_encoder, RunConfig, SuiteConfig};

fn main() -> anyhow::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.suite = SuiteConfig {
        encoder_train_per_class: 4,
        memory_per_class: 5,
        adapt_per_class: 6,
        eval_per_class: 3,
        tune_scenarios_per_cluster: 3,
    };
    cfg.dbscan.min_pts = 3;

    println!("training encoder...");
    let (model, _, _) = train_pipeline_encoder(&cfg)?;

    println!("running 4 configurations...\n");
    let reports = ablate(&cfg, Some(&model), None)?;
    println!("{:<12} {:>8}", "variant", "total");
    let mut full = 0.0;
    for (name, report) in &reports {
        let total = report.stages.last().unwrap().total;
        if name == "full" {
            full = total;
        }
        println!("{name:<12} {total:>8.2}");
    }
    for (name, report) in &reports {
        if name != "full" {
            let total = report.stages.last().unwrap().total;
            println!("full - {name}: {:+.2}", full - total);
        }
    }
    Ok(())
}
