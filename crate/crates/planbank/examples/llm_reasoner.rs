//! Render a scene prompt, pick planner parameters via the memory, and show
//! the endpoint path falling back gracefully when no endpoint is reachable.
//!
//! Set PLANBANK_LLM_URL (and optionally PLANBANK_LLM_TOKEN / _MODEL) to let a
//! live chat-completion endpoint make the call instead.
//!
//!     cargo run --example llm_reasoner

use planbank::encoder::train_encoder;
use planbank::memory::{DbscanParams, MemoryBank};
use planbank::pipeline::{adapt, Embedder, RunConfig};
use planbank::reasoner::{
    decide_llm_logged, decide_prototype, few_shots_from_bank, render_prompt, LlmConfig,
    DEFAULT_FEW_SHOTS,
};
use planbank::scenario::{generate_scenario, GenKnobs, ScenarioClass};

fn main() -> anyhow::Result<()> {
    // A small tuned memory over two contrasting classes.
    let knobs = GenKnobs::default();
    let mut scenarios = Vec::new();
    for class in [ScenarioClass::StoppingWithLead, ScenarioClass::ChangingLane] {
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
    cfg.suite.tune_scenarios_per_cluster = 2;
    let mut bank = MemoryBank::new(cfg.dbscan)?;
    adapt(&mut bank, &scenarios, &Embedder::Model(&model), &cfg, |_| Ok(()))?;

    // A fresh scene the memory has never seen.
    let sc = generate_scenario(ScenarioClass::ChangingLane, 77, &knobs)?;
    let z = model.encode(&sc)?;
    let shots = few_shots_from_bank(&bank, &z, DEFAULT_FEW_SHOTS);
    let prompt = render_prompt(&sc, &z, &shots);

    println!("--- prompt ({} chars) ---", prompt.to_text().len());
    println!("{}", prompt.motion_description);
    println!("...\nexemplars:");
    for s in &prompt.few_shots {
        println!("  {s}");
    }

    let fallback = decide_prototype(&z, &bank);
    println!("\nprototype decision: {}", fallback.rationale);
    println!(
        "  lateral {:.1} m, gap {:.1} m, accel {:.1}, brake {:.1}, ttc {:.1}",
        fallback.params.lateral_offset,
        fallback.params.min_gap,
        fallback.params.accel_max,
        fallback.params.brake_comfort,
        fallback.params.ttc_threshold
    );

    let llm = LlmConfig::from_env();
    let (decision, exchange) = decide_llm_logged(&prompt, &llm, &z, &bank);
    println!(
        "\nendpoint decision ({}): {}",
        match llm.url {
            Some(_) => "live",
            None => "no PLANBANK_LLM_URL, expect fallback",
        },
        decision.rationale
    );
    if let Some(ex) = exchange {
        println!("  request was {} bytes; response arrived: {}", ex.request.len(), ex.response.is_some());
    }
    assert!(decision.cluster_id.is_some());
    Ok(())
}
