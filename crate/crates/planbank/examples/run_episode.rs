//! Run one closed-loop episode twice — default parameters versus parameters
//! fit to the scenario family — and compare the score breakdowns.
//!
//!     cargo run --example run_episode

use planbank::planner::PlannerParams;
use planbank::scenario::{generate_scenario, GenKnobs, ScenarioClass};
use planbank::sim::{run_episode_fixed, Score, SimConfig};

fn show(name: &str, score: &Score) {
    println!(
        "{name:<10} composite {:>6.2}   ttc {:.2}  progress {:.2}  speed {:.2}  comfort {:.2}  \
         collision-free {}  on-road {}",
        score.composite,
        score.ttc_compliance,
        score.progress_ratio,
        score.speed_compliance,
        score.comfort,
        score.no_at_fault_collision,
        score.drivable
    );
}

fn main() -> anyhow::Result<()> {
    let sc = generate_scenario(ScenarioClass::NearMultipleVehicles, 3, &GenKnobs::default())?;
    let cfg = SimConfig::default();
    println!(
        "{}: {} agents, limit {:.1} m/s, ego starts at {:.1} m/s\n",
        sc.label,
        sc.agents.len(),
        sc.speed_limit,
        sc.ego.v
    );

    let (trace_a, default_score) = run_episode_fixed(&sc, &cfg, PlannerParams::default())?;
    let tuned = PlannerParams {
        lateral_offset: 1.0,
        min_gap: 1.0,
        accel_max: 1.5,
        brake_comfort: 2.5,
        ttc_threshold: 0.8,
    };
    let (trace_b, tuned_score) = run_episode_fixed(&sc, &cfg, tuned)?;

    show("default", &default_score);
    show("tuned", &tuned_score);

    println!("\nfinal positions after {:.0} s:", cfg.horizon);
    for (name, trace) in [("default", &trace_a), ("tuned", &trace_b)] {
        let last = trace.rows.last().unwrap();
        println!(
            "  {name:<8} x {:>6.1} m, v {:>4.1} m/s, {} events",
            last.x,
            last.v,
            trace.events().count()
        );
    }
    println!(
        "\nthe double-parked intruder blocks the centerline corridor; only the\n\
         offset policy threads past it without stalling"
    );
    Ok(())
}
