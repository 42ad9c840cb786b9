//! The lifelong loop at reduced scale: a memory seeded with common driving
//! is grown one long-tail class at a time, and the whole evaluation suite is
//! re-scored after every stage.
//!
//!     cargo run --example lifelong_benchmark

use planbank::pipeline::{
    run_benchmark, train_pipeline_encoder, BenchmarkMode, RunConfig, SuiteConfig,
};
use planbank::scenario::ScenarioClass;

fn main() -> anyhow::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.suite = SuiteConfig {
        encoder_train_per_class: 4,
        memory_per_class: 5,
        adapt_per_class: 6,
        eval_per_class: 4,
        tune_scenarios_per_cluster: 3,
    };
    cfg.dbscan.min_pts = 3;

    println!("training encoder on {} classes...", ScenarioClass::ALL.len());
    let (model, _, report) = train_pipeline_encoder(&cfg)?;
    let last = report.epochs.last().unwrap();
    println!("  final loss {:.4}, accuracy {:.1}%\n", last.loss, last.accuracy * 100.0);

    println!("running 5 memory stages x {} evaluation episodes...", 4 * cfg.suite.eval_per_class);
    let (report, _) = run_benchmark(&cfg, Some(&model), BenchmarkMode::Lifelong, None)?;

    let classes: Vec<String> = report.stages[0].per_class.keys().cloned().collect();
    print!("{:<10}", "stage");
    for c in &classes {
        print!(" {:>10}", c.split('_').map(|w| &w[..1]).collect::<String>().to_uppercase());
    }
    println!(" {:>8}", "total");
    for stage in &report.stages {
        print!("{:<10}", stage.stage);
        for c in &classes {
            print!(" {:>10.2}", stage.per_class[c]);
        }
        println!(" {:>8.2}", stage.total);
    }
    let base = report.stages.first().unwrap().total;
    let last = report.stages.last().unwrap().total;
    println!("\nlifelong improvement: {:.2} -> {:.2} ({:+.2})", base, last, last - base);
    Ok(())
}
