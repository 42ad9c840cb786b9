//! Per-cluster parameter tuning: exhaustive evaluation of every grid point
//! by mean episode composite over the member scenarios.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::Scenario;
use crate::sim::{run_episode_fixed, SimConfig, SimError};

use super::{ParamGrid, PlanError, PlannerParams};

#[derive(Debug, Error)]
pub enum GridSearchError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("grid search needs at least one scenario")]
    NoScenarios,
    #[error("episode failed during grid search: {0}")]
    Sim(#[from] SimError),
}

/// One evaluated grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub params: PlannerParams,
    pub mean_score: f64,
}

/// Evaluates every grid point on every scenario and returns the argmax plus
/// the full table in grid order. Episodes run in parallel but are reduced in
/// grid order, and ties keep the earliest point, so the result is a pure
/// function of the inputs.
pub fn grid_search(
    scenarios: &[Scenario],
    grid: &ParamGrid,
    cfg: &SimConfig,
) -> Result<(PlannerParams, Vec<GridPoint>), GridSearchError> {
    grid.validate()?;
    if scenarios.is_empty() {
        return Err(GridSearchError::NoScenarios);
    }
    let table: Vec<GridPoint> = grid
        .points()
        .into_par_iter()
        .map(|params| {
            let mut total = 0.0;
            for sc in scenarios {
                let (_, score) = run_episode_fixed(sc, cfg, params)?;
                total += score.composite;
            }
            Ok(GridPoint {
                params,
                mean_score: total / scenarios.len() as f64,
            })
        })
        .collect::<Result<_, GridSearchError>>()?;

    let mut best = table[0];
    for gp in &table[1..] {
        if gp.mean_score > best.mean_score {
            best = *gp;
        }
    }
    Ok((best.params, table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::generate::{generate_scenario, GenKnobs};
    use crate::scenario::ScenarioClass;

    fn axis(v: f64) -> Vec<f64> {
        vec![v]
    }

    #[test]
    fn lateral_axis_separates_blocked_from_bypass() {
        // Stalled car intruding over the centerline: lo = 0 parks behind it
        // for the whole episode, lo = 1.0 clears it and keeps moving.
        let sc = crate::sim::tests::toy_scene(
            8.0,
            &[(1, crate::scenario::AgentKind::Vehicle, 30.0, -1.45, 0.0)],
        );
        let grid = ParamGrid {
            lateral_offset: vec![0.0, 1.0],
            min_gap: axis(2.0),
            accel_max: axis(1.5),
            brake_comfort: axis(2.5),
            ttc_threshold: axis(1.0),
        };
        let (best, table) = grid_search(&[sc], &grid, &SimConfig::default()).unwrap();
        assert_eq!(best.lateral_offset, 1.0);
        assert!(
            table[1].mean_score > table[0].mean_score + 10.0,
            "bypass must clearly outscore parking: {table:?}"
        );
    }

    #[test]
    fn ties_keep_the_earliest_grid_point() {
        // Empty road: the threshold never matters, all points tie.
        let sc = crate::sim::tests::toy_scene(8.0, &[]);
        let grid = ParamGrid {
            lateral_offset: axis(0.0),
            min_gap: axis(2.0),
            accel_max: axis(1.5),
            brake_comfort: axis(2.5),
            ttc_threshold: vec![0.8, 1.2],
        };
        let (best, table) = grid_search(&[sc], &grid, &SimConfig::default()).unwrap();
        assert_eq!(table[0].mean_score, table[1].mean_score);
        assert_eq!(best.ttc_threshold, 0.8);
    }

    #[test]
    fn matches_brute_force_argmax() {
        let knobs = GenKnobs::default();
        let scenarios: Vec<_> = [3u64, 4]
            .iter()
            .map(|&s| generate_scenario(ScenarioClass::FollowingLaneWithLead, s, &knobs).unwrap())
            .collect();
        let grid = ParamGrid {
            lateral_offset: vec![0.0, 0.5],
            min_gap: vec![1.0, 2.0],
            accel_max: axis(1.5),
            brake_comfort: axis(2.5),
            ttc_threshold: vec![0.8, 1.2],
        };
        let cfg = SimConfig::default();
        let (best, table) = grid_search(&scenarios, &grid, &cfg).unwrap();

        // Sequential reference evaluation.
        let mut ref_best: Option<(PlannerParams, f64)> = None;
        for params in grid.points() {
            let mut total = 0.0;
            for sc in &scenarios {
                total += crate::sim::run_episode_fixed(sc, &cfg, params)
                    .unwrap()
                    .1
                    .composite;
            }
            let mean = total / scenarios.len() as f64;
            if ref_best.map_or(true, |(_, b)| mean > b) {
                ref_best = Some((params, mean));
            }
        }
        let (ref_params, ref_mean) = ref_best.unwrap();
        assert_eq!(best, ref_params);
        let best_row = table.iter().find(|g| g.params == best).unwrap();
        assert_eq!(best_row.mean_score, ref_mean);
        assert_eq!(table.len(), 8);
    }

    #[test]
    fn rejects_empty_inputs() {
        let grid = ParamGrid::default();
        assert!(matches!(
            grid_search(&[], &grid, &SimConfig::default()),
            Err(GridSearchError::NoScenarios)
        ));
    }
}
