//! Generate a handful of scenarios per class and round-trip them through the
//! binary codec.
//!
//!     cargo run --example gen_scenarios

use planbank::scenario::{
    decode_scenarios, encode_scenarios, generate_scenario, GenKnobs, ScenarioClass,
};

fn main() -> anyhow::Result<()> {
    let knobs = GenKnobs::default();
    let mut all = Vec::new();
    println!("{:<32} {:>6} {:>7} {:>7} {:>9}", "class", "agents", "limit", "ego v", "expert m");
    for class in ScenarioClass::ALL {
        for seed in 0..2 {
            let sc = generate_scenario(class, seed, &knobs)?;
            if seed == 0 {
                println!(
                    "{:<32} {:>6} {:>7.1} {:>7.1} {:>9.1}{}",
                    sc.label.to_string(),
                    sc.agents.len(),
                    sc.speed_limit,
                    sc.ego.v,
                    sc.expert_arc,
                    if class.is_long_tail() { "  (long tail)" } else { "" }
                );
            }
            all.push(sc);
        }
    }

    let bytes = encode_scenarios(&all);
    let back = decode_scenarios(&bytes)?;
    assert_eq!(back.len(), all.len());
    println!("\n{} scenarios -> {} bytes, decoded back intact", all.len(), bytes.len());
    Ok(())
}
