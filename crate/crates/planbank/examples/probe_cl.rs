//! Temporary diagnostic: trace changing_lane under each lateral offset.

use planbank::planner::PlannerParams;
use planbank::scenario::{generate_scenario, GenKnobs, ScenarioClass};
use planbank::sim::{run_episode_fixed, SimConfig};

fn main() -> anyhow::Result<()> {
    let seed: u64 = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(52000);
    let sc = generate_scenario(ScenarioClass::ChangingLane, seed, &GenKnobs::default())?;
    println!(
        "{} seed {seed}: limit {:.1}, ego v {:.1}, expert_arc {:.1}",
        sc.label, sc.speed_limit, sc.ego.v, sc.expert_arc
    );
    for a in &sc.agents {
        let p0 = a.history.last().unwrap();
        println!(
            "  agent {}: {:?} at ({:.1},{:.1}) v {:.1}",
            a.id,
            a.kind,
            p0.x,
            p0.y,
            p0.vx.hypot(p0.vy)
        );
    }
    let cfg = SimConfig::default();
    for lo in [0.0, 0.5, 1.0] {
        let params = PlannerParams {
            lateral_offset: lo,
            min_gap: 1.0,
            accel_max: 1.5,
            brake_comfort: 2.5,
            ttc_threshold: 0.8,
        };
        let (trace, score) = run_episode_fixed(&sc, &cfg, params)?;
        let last = trace.rows.last().unwrap();
        println!(
            "lateral {lo}: composite {:>6.2} progress {:.2} coll-free {} on-road {} | final x {:.1} y {:.1} v {:.1}",
            score.composite,
            score.progress_ratio,
            score.no_at_fault_collision,
            score.drivable,
            last.x,
            last.y,
            last.v
        );
        for (step, ev) in trace.events() {
            println!("    t={:.1}s  {:?}", step as f64 * cfg.dt, ev);
        }
        // sample the path every second
        let mut line = String::from("    path:");
        for row in trace.rows.iter().step_by(10) {
            line.push_str(&format!(" ({:.0},{:.1},v{:.1})", row.x, row.y, row.v));
        }
        println!("{line}");
    }
    Ok(())
}
