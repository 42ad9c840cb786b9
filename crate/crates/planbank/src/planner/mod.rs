//! Rule-based trajectory planner: a small lattice of lateral-offset /
//! target-speed candidates rolled out against constant-velocity forecasts,
//! with IDM longitudinal control and a TTC braking guard. Five scalar
//! parameters steer the behaviour; `grid_search` tunes them per cluster.

pub mod idm;

mod candidates;
mod grid_search;

pub use candidates::{
    forecast_agents, observe_scenario, plan, AgentObs, ForecastTrack, PlanConfig, PlanError,
    PlanInput, RoutePath,
};
pub use grid_search::{grid_search, GridPoint, GridSearchError};

use serde::{Deserialize, Serialize};

/// Hard physical deceleration limit (m/s^2); commanded accelerations are
/// clamped here, the raw IDM output is not.
pub const MAX_DECEL: f64 = 9.0;

/// Tunable planner parameters: one point in the search grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerParams {
    /// Maximum lateral candidate offset from the route centerline (m).
    pub lateral_offset: f64,
    /// Standstill gap s0 (m).
    pub min_gap: f64,
    /// Maximum acceleration a_m (m/s^2).
    pub accel_max: f64,
    /// Comfortable braking rate b (m/s^2, positive).
    pub brake_comfort: f64,
    /// Time-to-collision threshold below which braking engages (s).
    pub ttc_threshold: f64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            lateral_offset: 0.5,
            min_gap: 2.0,
            accel_max: 1.5,
            brake_comfort: 2.5,
            ttc_threshold: 1.0,
        }
    }
}

impl PlannerParams {
    pub fn validate(&self) -> Result<(), PlanError> {
        let ok = self.lateral_offset >= 0.0
            && self.lateral_offset.is_finite()
            && self.min_gap > 0.0
            && self.min_gap.is_finite()
            && self.accel_max > 0.0
            && self.accel_max.is_finite()
            && self.brake_comfort > 0.0
            && self.brake_comfort.is_finite()
            && self.ttc_threshold >= 0.0
            && self.ttc_threshold.is_finite();
        if ok {
            Ok(())
        } else {
            Err(PlanError::BadParams(*self))
        }
    }
}

/// Axis-aligned search grid over planner parameters. `points()` enumerates
/// the cartesian product in a fixed order (lateral offset outermost, TTC
/// threshold innermost, each axis in listed order); grid-search ties are
/// broken toward the earliest point, so put conservative values first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGrid {
    pub lateral_offset: Vec<f64>,
    pub min_gap: Vec<f64>,
    pub accel_max: Vec<f64>,
    pub brake_comfort: Vec<f64>,
    pub ttc_threshold: Vec<f64>,
}

impl Default for ParamGrid {
    fn default() -> Self {
        Self {
            lateral_offset: vec![0.0, 0.5, 1.0],
            min_gap: vec![1.0, 2.0, 3.0],
            accel_max: vec![1.0, 1.5, 2.5],
            brake_comfort: vec![1.5, 2.5],
            ttc_threshold: vec![0.8, 1.2],
        }
    }
}

impl ParamGrid {
    pub fn len(&self) -> usize {
        self.lateral_offset.len()
            * self.min_gap.len()
            * self.accel_max.len()
            * self.brake_comfort.len()
            * self.ttc_threshold.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Enumerate every grid point in deterministic order.
    pub fn points(&self) -> Vec<PlannerParams> {
        let mut out = Vec::with_capacity(self.len());
        for &lo in &self.lateral_offset {
            for &s0 in &self.min_gap {
                for &a_m in &self.accel_max {
                    for &b in &self.brake_comfort {
                        for &th in &self.ttc_threshold {
                            out.push(PlannerParams {
                                lateral_offset: lo,
                                min_gap: s0,
                                accel_max: a_m,
                                brake_comfort: b,
                                ttc_threshold: th,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if self.is_empty() {
            return Err(PlanError::EmptyGrid);
        }
        for p in self.points() {
            p.validate()?;
        }
        Ok(())
    }
}

/// One planned state, `dt` apart; the first point is the next sim step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajPoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub v: f64,
    pub a: f64,
}

/// Planned trajectory over the rollout horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<TrajPoint>,
}
