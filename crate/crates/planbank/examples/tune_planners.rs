//! Grid-search planner parameters on a long-tail scene set and show why the
//! winner wins.
//!
//!     cargo run --example tune_planners [class] [seed...]

use planbank::planner::{grid_search, ParamGrid};
use planbank::scenario::{generate_scenario, GenKnobs, ScenarioClass};
use planbank::sim::SimConfig;
use std::str::FromStr;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let class = match args.next() {
        Some(name) => ScenarioClass::from_str(&name)
            .map_err(|_| anyhow::anyhow!("unknown class {name:?}"))?,
        None => ScenarioClass::TraversingPickupDropoff,
    };
    let seeds: Vec<u64> = args.map(|s| s.parse()).collect::<Result<_, _>>()?;
    let seeds = if seeds.is_empty() { vec![0, 1, 2] } else { seeds };

    let knobs = GenKnobs::default();
    let scenarios: Vec<_> = seeds
        .iter()
        .map(|&seed| generate_scenario(class, seed, &knobs))
        .collect::<Result<_, _>>()?;

    let grid = ParamGrid::default();
    let cfg = SimConfig::default();
    println!(
        "searching {} grid points over {} scenes of {}...",
        grid.len(),
        scenarios.len(),
        scenarios[0].label
    );
    let (best, mut table) = grid_search(&scenarios, &grid, &cfg)?;

    table.sort_by(|a, b| b.mean_score.total_cmp(&a.mean_score));
    println!("\n{:>6}  {:>4} {:>4} {:>5} {:>5} {:>4}", "score", "lat", "gap", "accel", "brake", "ttc");
    for p in table.iter().take(5) {
        println!(
            "{:>6.2}  {:>4.1} {:>4.1} {:>5.1} {:>5.1} {:>4.1}{}",
            p.mean_score,
            p.params.lateral_offset,
            p.params.min_gap,
            p.params.accel_max,
            p.params.brake_comfort,
            p.params.ttc_threshold,
            if p.params == best { "  <- selected" } else { "" }
        );
    }
    let worst = table.last().unwrap();
    println!("   ...");
    println!(
        "{:>6.2}  {:>4.1} {:>4.1} {:>5.1} {:>5.1} {:>4.1}  <- worst",
        worst.mean_score,
        worst.params.lateral_offset,
        worst.params.min_gap,
        worst.params.accel_max,
        worst.params.brake_comfort,
        worst.params.ttc_threshold,
    );
    println!(
        "\nparameter choice is worth {:.2} points on this scene family",
        table[0].mean_score - worst.mean_score
    );
    Ok(())
}
