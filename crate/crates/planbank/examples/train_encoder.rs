//! Train the scene encoder on a four-class toy set and show that embeddings
//! tighten within classes and separate across them.
//!
//!     cargo run --example train_encoder

use planbank::encoder::{evaluate_encoder, train_encoder, EncoderModel, TrainConfig};
use planbank::scenario::{generate_scenario, GenKnobs, ScenarioClass};

fn main() -> anyhow::Result<()> {
    let classes = [
        ScenarioClass::StoppingWithLead,
        ScenarioClass::StartingLeftTurn,
        ScenarioClass::HighMagnitudeSpeed,
        ScenarioClass::TraversingPickupDropoff,
    ];
    let knobs = GenKnobs::default();
    let mut scenarios = Vec::new();
    for class in classes {
        for seed in 0..6 {
            scenarios.push(generate_scenario(class, seed, &knobs)?);
        }
    }

    let cfg = TrainConfig {
        epochs: 40,
        ..TrainConfig::default()
    };
    let before = evaluate_encoder(&EncoderModel::new(cfg.seed), &scenarios)?;
    let (model, protos, report) = train_encoder(&scenarios, &cfg)?;

    for stats in report.epochs.iter().step_by(8).chain(report.epochs.last()) {
        println!(
            "epoch {:>3}: loss {:>7.4} (margin {:>6.4}, class {:>6.4}), accuracy {:>5.1}%",
            stats.epoch,
            stats.loss,
            stats.margin,
            stats.class,
            stats.accuracy * 100.0
        );
    }

    let after = evaluate_encoder(&model, &scenarios)?;
    println!("\n{} prototypes learned", protos.len());
    println!(
        "cosine distances  intra-class: {:.3} -> {:.3}   inter-class: {:.3} -> {:.3}",
        before.mean_intra, after.mean_intra, before.mean_inter, after.mean_inter
    );
    assert!(after.mean_intra < after.mean_inter);
    Ok(())
}
