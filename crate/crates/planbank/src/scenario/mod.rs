//! Scene containers: a vectorized map, agent tracks with history masks, the
//! ego state, and scripted agent futures. Scenarios are generated
//! deterministically from `(class, seed)` and always stored ego-centric
//! (ego at the origin, heading zero).

mod classes;
mod codec;
pub mod generate;

pub use classes::ScenarioClass;
pub use codec::{
    decode_scenarios, encode_scenarios, from_json, to_json, ScenarioCodecError, FORMAT_VERSION,
};
pub use generate::{generate_scenario, GenKnobs, GenerateError};

use crate::geometry::{Pose, RigidTransform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_AGENTS: usize = 16;
/// History steps per agent track (2 s at 10 Hz, ending at the scene time).
pub const HIST_STEPS: usize = 20;
pub const HIST_DT: f64 = 0.1;
/// Scripted futures are sampled at the simulator tick.
pub const FUTURE_DT: f64 = 0.1;

pub const ROAD_SLOTS: usize = 40;
pub const ROAD_POINTS: usize = 50;
pub const CROSSWALK_SLOTS: usize = 5;
pub const CROSSWALK_POINTS: usize = 30;
pub const ROUTE_SLOTS: usize = 10;
pub const ROUTE_POINTS: usize = 50;
/// Map elements are only kept within this radius of the ego (m).
pub const QUERY_RADIUS: f64 = 80.0;
/// Ego vehicle footprint (m).
pub const EGO_LENGTH: f64 = 4.6;
pub const EGO_WIDTH: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrafficLight {
    Unknown,
    Green,
    Yellow,
    Red,
}

impl TrafficLight {
    pub fn one_hot(self) -> [f64; 4] {
        let mut v = [0.0; 4];
        let i = match self {
            TrafficLight::Green => 0,
            TrafficLight::Yellow => 1,
            TrafficLight::Red => 2,
            TrafficLight::Unknown => 3,
        };
        v[i] = 1.0;
        v
    }

    fn code(self) -> u8 {
        match self {
            TrafficLight::Unknown => 0,
            TrafficLight::Green => 1,
            TrafficLight::Yellow => 2,
            TrafficLight::Red => 3,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => TrafficLight::Unknown,
            1 => TrafficLight::Green,
            2 => TrafficLight::Yellow,
            3 => TrafficLight::Red,
            _ => return None,
        })
    }
}

/// Road waypoint: position, tangent heading and the light state governing it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapWaypoint {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub light: TrafficLight,
}

impl MapWaypoint {
    pub const ZERO: MapWaypoint = MapWaypoint {
        x: 0.0,
        y: 0.0,
        heading: 0.0,
        light: TrafficLight::Unknown,
    };
}

/// Crosswalk / route waypoint: position and tangent heading only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl PathPoint {
    pub const ZERO: PathPoint = PathPoint {
        x: 0.0,
        y: 0.0,
        heading: 0.0,
    };
}

/// Fixed-slot polyline sets. Unused slots and waypoints carry an all-false
/// mask and zeroed payload so serialized bytes are canonical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorizedMap {
    pub roads: Vec<Vec<MapWaypoint>>,
    pub roads_valid: Vec<Vec<bool>>,
    pub crosswalks: Vec<Vec<PathPoint>>,
    pub crosswalks_valid: Vec<Vec<bool>>,
    pub route_lanes: Vec<Vec<PathPoint>>,
    pub route_lanes_valid: Vec<Vec<bool>>,
    pub query_radius: f64,
}

impl VectorizedMap {
    pub fn empty() -> Self {
        VectorizedMap {
            roads: vec![vec![MapWaypoint::ZERO; ROAD_POINTS]; ROAD_SLOTS],
            roads_valid: vec![vec![false; ROAD_POINTS]; ROAD_SLOTS],
            crosswalks: vec![vec![PathPoint::ZERO; CROSSWALK_POINTS]; CROSSWALK_SLOTS],
            crosswalks_valid: vec![vec![false; CROSSWALK_POINTS]; CROSSWALK_SLOTS],
            route_lanes: vec![vec![PathPoint::ZERO; ROUTE_POINTS]; ROUTE_SLOTS],
            route_lanes_valid: vec![vec![false; ROUTE_POINTS]; ROUTE_SLOTS],
            query_radius: QUERY_RADIUS,
        }
    }

    /// Fills road slot `i` from the prefix of `pts` (at most [`ROAD_POINTS`]).
    pub fn set_road(&mut self, i: usize, pts: &[MapWaypoint]) {
        for (j, &p) in pts.iter().take(ROAD_POINTS).enumerate() {
            self.roads[i][j] = p;
            self.roads_valid[i][j] = true;
        }
    }

    pub fn set_crosswalk(&mut self, i: usize, pts: &[PathPoint]) {
        for (j, &p) in pts.iter().take(CROSSWALK_POINTS).enumerate() {
            self.crosswalks[i][j] = p;
            self.crosswalks_valid[i][j] = true;
        }
    }

    pub fn set_route_lane(&mut self, i: usize, pts: &[PathPoint]) {
        for (j, &p) in pts.iter().take(ROUTE_POINTS).enumerate() {
            self.route_lanes[i][j] = p;
            self.route_lanes_valid[i][j] = true;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Vehicle,
    Pedestrian,
    Cyclist,
}

impl AgentKind {
    /// Footprint (length, width) in meters used for collision checks.
    pub fn footprint(self) -> (f64, f64) {
        match self {
            AgentKind::Vehicle => (4.6, 2.0),
            AgentKind::Pedestrian => (0.5, 0.5),
            AgentKind::Cyclist => (1.8, 0.6),
        }
    }

    pub fn one_hot(self) -> [f64; 3] {
        let mut v = [0.0; 3];
        v[self as usize] = 1.0;
        v
    }

    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => AgentKind::Vehicle,
            1 => AgentKind::Pedestrian,
            2 => AgentKind::Cyclist,
            _ => return None,
        })
    }
}

/// One observed agent step: position, velocity and yaw rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub yaw_rate: f64,
}

impl AgentState {
    pub const ZERO: AgentState = AgentState {
        x: 0.0,
        y: 0.0,
        vx: 0.0,
        vy: 0.0,
        yaw_rate: 0.0,
    };

    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }
}

/// An agent's observed history over the last [`HIST_STEPS`] ticks. Steps with
/// `valid[t] == false` (before first observation) carry zeroed payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub id: u32,
    pub kind: AgentKind,
    pub history: Vec<AgentState>,
    pub valid: Vec<bool>,
}

impl AgentTrack {
    /// Latest valid state, if the track has one.
    pub fn latest(&self) -> Option<&AgentState> {
        self.valid
            .iter()
            .rposition(|&v| v)
            .map(|i| &self.history[i])
    }
}

/// Scripted future poses for one agent, sampled every [`FUTURE_DT`] starting
/// one tick after the scene time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentFuture {
    pub id: u32,
    pub poses: Vec<Pose>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub v: f64,
    pub a: f64,
    pub t: f64,
}

/// A full scene: map, agents, ego, scripted futures and scoring metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub map: VectorizedMap,
    pub agents: Vec<AgentTrack>,
    pub futures: Vec<AgentFuture>,
    pub ego: EgoState,
    /// Route lane slots in travel order.
    pub ego_route: Vec<u16>,
    pub label: ScenarioClass,
    pub seed: u64,
    /// Posted speed limit (m/s), also the planner's free-flow target.
    pub speed_limit: f64,
    /// Route arc length a competent driver covers over the episode; the
    /// denominator of the progress score. Values under 0.5 m mean "no
    /// progress expected" (e.g. stationary traffic).
    pub expert_arc: f64,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("ego pose is not finite: ({x}, {y}, {heading})")]
    NonFiniteEgo { x: f64, y: f64, heading: f64 },
    #[error("scenario holds {n} agents, limit is {MAX_AGENTS}")]
    TooManyAgents { n: usize },
    #[error("agent {id}: history has {len} steps, expected {HIST_STEPS}")]
    BadHistoryLen { id: u32, len: usize },
    #[error("{what} slot count is {n}, expected {expected}")]
    BadSlotCount {
        what: &'static str,
        n: usize,
        expected: usize,
    },
    #[error("non-finite value in {what}")]
    NonFinite { what: String },
    #[error("masked-out {what} entry carries non-zero payload")]
    DirtyPadding { what: &'static str },
    #[error("route index {idx} out of range or names an empty slot")]
    BadRouteIndex { idx: u16 },
    #[error("agent {id} has no scripted future")]
    MissingFuture { id: u32 },
    #[error("speed limit must be positive and finite, got {v}")]
    BadSpeedLimit { v: f64 },
}

impl Scenario {
    /// Validates every structural invariant. Generated and decoded scenarios
    /// always pass; hand-built ones should be checked before use.
    pub fn check(&self) -> Result<(), ScenarioError> {
        let e = &self.ego;
        if !(e.x.is_finite() && e.y.is_finite() && e.heading.is_finite()) {
            return Err(ScenarioError::NonFiniteEgo {
                x: e.x,
                y: e.y,
                heading: e.heading,
            });
        }
        if !(e.v.is_finite() && e.a.is_finite() && e.t.is_finite()) {
            return Err(ScenarioError::NonFinite {
                what: "ego motion state".into(),
            });
        }
        if self.agents.len() > MAX_AGENTS {
            return Err(ScenarioError::TooManyAgents {
                n: self.agents.len(),
            });
        }
        for a in &self.agents {
            if a.history.len() != HIST_STEPS || a.valid.len() != HIST_STEPS {
                return Err(ScenarioError::BadHistoryLen {
                    id: a.id,
                    len: a.history.len().max(a.valid.len()),
                });
            }
            for (s, &ok) in a.history.iter().zip(&a.valid) {
                if ok {
                    if ![s.x, s.y, s.vx, s.vy, s.yaw_rate]
                        .iter()
                        .all(|v| v.is_finite())
                    {
                        return Err(ScenarioError::NonFinite {
                            what: format!("agent {} history", a.id),
                        });
                    }
                } else if *s != AgentState::ZERO {
                    return Err(ScenarioError::DirtyPadding {
                        what: "agent history",
                    });
                }
            }
            if !self.futures.iter().any(|f| f.id == a.id) {
                return Err(ScenarioError::MissingFuture { id: a.id });
            }
        }
        for f in &self.futures {
            for p in &f.poses {
                if !(p.x.is_finite() && p.y.is_finite() && p.heading.is_finite()) {
                    return Err(ScenarioError::NonFinite {
                        what: format!("future of agent {}", f.id),
                    });
                }
            }
        }
        check_layer(
            "roads",
            &self.map.roads,
            &self.map.roads_valid,
            ROAD_SLOTS,
            ROAD_POINTS,
            |w| (w.x, w.y, w.heading, *w == MapWaypoint::ZERO),
        )?;
        check_layer(
            "crosswalks",
            &self.map.crosswalks,
            &self.map.crosswalks_valid,
            CROSSWALK_SLOTS,
            CROSSWALK_POINTS,
            |p| (p.x, p.y, p.heading, *p == PathPoint::ZERO),
        )?;
        check_layer(
            "route lanes",
            &self.map.route_lanes,
            &self.map.route_lanes_valid,
            ROUTE_SLOTS,
            ROUTE_POINTS,
            |p| (p.x, p.y, p.heading, *p == PathPoint::ZERO),
        )?;
        for &idx in &self.ego_route {
            let ok = (idx as usize) < ROUTE_SLOTS
                && self.map.route_lanes_valid[idx as usize].iter().any(|&v| v);
            if !ok {
                return Err(ScenarioError::BadRouteIndex { idx });
            }
        }
        if !(self.speed_limit.is_finite() && self.speed_limit > 0.0) {
            return Err(ScenarioError::BadSpeedLimit {
                v: self.speed_limit,
            });
        }
        if !(self.expert_arc.is_finite() && self.expert_arc >= 0.0) {
            return Err(ScenarioError::NonFinite {
                what: "expert arc length".into(),
            });
        }
        Ok(())
    }
}

fn check_layer<P>(
    what: &'static str,
    grid: &[Vec<P>],
    valid: &[Vec<bool>],
    slots: usize,
    points: usize,
    fields: impl Fn(&P) -> (f64, f64, f64, bool),
) -> Result<(), ScenarioError> {
    if grid.len() != slots || valid.len() != slots {
        return Err(ScenarioError::BadSlotCount {
            what,
            n: grid.len().max(valid.len()),
            expected: slots,
        });
    }
    for (row, mask) in grid.iter().zip(valid) {
        if row.len() != points || mask.len() != points {
            return Err(ScenarioError::BadSlotCount {
                what,
                n: row.len().max(mask.len()),
                expected: points,
            });
        }
        for (p, &ok) in row.iter().zip(mask) {
            let (x, y, h, is_zero) = fields(p);
            if ok {
                if !(x.is_finite() && y.is_finite() && h.is_finite()) {
                    return Err(ScenarioError::NonFinite { what: what.into() });
                }
            } else if !is_zero {
                return Err(ScenarioError::DirtyPadding { what });
            }
        }
    }
    Ok(())
}

/// Re-expresses the whole scenario in the ego's frame: ego moves to the
/// origin with heading zero, all map points, tracks and futures follow.
/// Pairwise distances are preserved. Fails if the ego pose is not finite.
pub fn normalize_to_ego(sc: &Scenario) -> Result<Scenario, ScenarioError> {
    let e = sc.ego;
    if !(e.x.is_finite() && e.y.is_finite() && e.heading.is_finite()) {
        return Err(ScenarioError::NonFiniteEgo {
            x: e.x,
            y: e.y,
            heading: e.heading,
        });
    }
    let tf = RigidTransform::into_frame_of(Pose::new(e.x, e.y, e.heading));
    let mut out = sc.clone();
    out.ego.x = 0.0;
    out.ego.y = 0.0;
    out.ego.heading = 0.0;

    for (row, mask) in out.map.roads.iter_mut().zip(&out.map.roads_valid) {
        for (w, &ok) in row.iter_mut().zip(mask) {
            if ok {
                let (x, y) = tf.apply_point(w.x, w.y);
                w.x = x;
                w.y = y;
                w.heading = tf.apply_heading(w.heading);
            }
        }
    }
    for (row, mask) in out
        .map
        .crosswalks
        .iter_mut()
        .zip(&out.map.crosswalks_valid)
        .chain(
            out.map
                .route_lanes
                .iter_mut()
                .zip(&out.map.route_lanes_valid),
        )
    {
        for (p, &ok) in row.iter_mut().zip(mask) {
            if ok {
                let (x, y) = tf.apply_point(p.x, p.y);
                p.x = x;
                p.y = y;
                p.heading = tf.apply_heading(p.heading);
            }
        }
    }
    for a in &mut out.agents {
        for (s, &ok) in a.history.iter_mut().zip(&a.valid) {
            if ok {
                let (x, y) = tf.apply_point(s.x, s.y);
                let (vx, vy) = tf.apply_vector(s.vx, s.vy);
                *s = AgentState {
                    x,
                    y,
                    vx,
                    vy,
                    yaw_rate: s.yaw_rate,
                };
            }
        }
    }
    for f in &mut out.futures {
        for p in f.poses.iter_mut() {
            *p = tf.apply_pose(*p);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tiny_scenario() -> Scenario {
        let mut map = VectorizedMap::empty();
        map.set_road(
            0,
            &[
                MapWaypoint {
                    x: 0.0,
                    y: 0.0,
                    heading: 0.0,
                    light: TrafficLight::Green,
                },
                MapWaypoint {
                    x: 5.0,
                    y: 0.0,
                    heading: 0.0,
                    light: TrafficLight::Green,
                },
            ],
        );
        map.set_route_lane(
            0,
            &[
                PathPoint {
                    x: 0.0,
                    y: 0.0,
                    heading: 0.0,
                },
                PathPoint {
                    x: 5.0,
                    y: 0.0,
                    heading: 0.0,
                },
            ],
        );
        let mut history = vec![AgentState::ZERO; HIST_STEPS];
        let mut valid = vec![false; HIST_STEPS];
        history[HIST_STEPS - 1] = AgentState {
            x: 10.0,
            y: 8.0,
            vx: 1.0,
            vy: 0.0,
            yaw_rate: 0.0,
        };
        valid[HIST_STEPS - 1] = true;
        Scenario {
            map,
            agents: vec![AgentTrack {
                id: 7,
                kind: AgentKind::Vehicle,
                history,
                valid,
            }],
            futures: vec![AgentFuture {
                id: 7,
                poses: vec![Pose::new(10.0, 8.0, 0.0)],
            }],
            ego: EgoState {
                x: 10.0,
                y: 5.0,
                heading: std::f64::consts::FRAC_PI_2,
                v: 2.0,
                a: 0.0,
                t: 0.0,
            },
            ego_route: vec![0],
            label: ScenarioClass::FollowingLaneWithLead,
            seed: 1,
            speed_limit: 10.0,
            expert_arc: 20.0,
        }
    }

    #[test]
    fn normalize_moves_ego_to_origin() {
        let sc = tiny_scenario();
        let out = normalize_to_ego(&sc).unwrap();
        assert_eq!(out.ego.x, 0.0);
        assert_eq!(out.ego.y, 0.0);
        assert_eq!(out.ego.heading, 0.0);
        // Agent at (10, 8) seen from ego (10, 5, pi/2) sits 3 m ahead.
        let a = out.agents[0].latest().unwrap();
        assert_abs_diff_eq!(a.x, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a.y, 0.0, epsilon = 1e-12);
        // World +x velocity becomes -y in the ego frame.
        assert_abs_diff_eq!(a.vx, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a.vy, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.futures[0].poses[0].x, 3.0, epsilon = 1e-12);
        out.check().unwrap();
    }

    #[test]
    fn normalize_preserves_distances() {
        let sc = tiny_scenario();
        let out = normalize_to_ego(&sc).unwrap();
        let d_before = {
            let a = sc.agents[0].latest().unwrap();
            let w = sc.map.roads[0][1];
            ((a.x - w.x).powi(2) + (a.y - w.y).powi(2)).sqrt()
        };
        let d_after = {
            let a = out.agents[0].latest().unwrap();
            let w = out.map.roads[0][1];
            ((a.x - w.x).powi(2) + (a.y - w.y).powi(2)).sqrt()
        };
        assert_abs_diff_eq!(d_before, d_after, epsilon = 1e-9);
    }

    #[test]
    fn normalize_rejects_non_finite_ego() {
        let mut sc = tiny_scenario();
        sc.ego.heading = f64::NAN;
        assert!(matches!(
            normalize_to_ego(&sc),
            Err(ScenarioError::NonFiniteEgo { .. })
        ));
    }

    #[test]
    fn check_rejects_dirty_padding() {
        let mut sc = tiny_scenario();
        sc.map.roads[0][10].x = 1.0; // mask is false here
        assert!(matches!(
            sc.check(),
            Err(ScenarioError::DirtyPadding { .. })
        ));
    }

    #[test]
    fn check_rejects_missing_future() {
        let mut sc = tiny_scenario();
        sc.futures.clear();
        assert!(matches!(
            sc.check(),
            Err(ScenarioError::MissingFuture { id: 7 })
        ));
    }
}
