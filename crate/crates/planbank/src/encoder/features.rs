//! Scenario → fixed-shape feature tensors.
//!
//! Every scene becomes the same shapes regardless of content: `MAX_AGENTS`
//! agent tracks of `HIST_STEPS` rows, one polyline row per map slot, and one
//! ego row, each with validity masks. Invalid rows are filler; [`Pad::Poison`]
//! fills them with NaN so any code path that touches a masked value blows up
//! visibly instead of silently biasing the embedding.

use crate::scenario::{
    Scenario, TrafficLight, CROSSWALK_SLOTS, HIST_STEPS, MAX_AGENTS, ROAD_SLOTS, ROUTE_SLOTS,
};

/// Positions are scaled so the 80 m query radius maps into roughly ±1.6.
pub const POS_SCALE: f64 = 0.02;
/// Velocities in urban range (≤ 25 m/s) map into roughly ±2.5.
pub const VEL_SCALE: f64 = 0.1;

/// Agent step features: x, y, vx, vy, valid flag, kind one-hot (3).
pub const AGENT_FEATS: usize = 8;
/// Map waypoint features: x, y, cos/sin heading, light signal, route flag,
/// crosswalk flag.
pub const MAP_FEATS: usize = 7;
/// Ego features: speed, acceleration, speed limit.
pub const EGO_FEATS: usize = 3;

/// Polyline slots in tensor order: roads, crosswalks, route lanes.
pub const POLY_SLOTS: usize = ROAD_SLOTS + CROSSWALK_SLOTS + ROUTE_SLOTS;

/// What masked-out rows carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pad {
    Zero,
    Poison,
}

impl Pad {
    fn fill(self) -> f64 {
        match self {
            Pad::Zero => 0.0,
            Pad::Poison => f64::NAN,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneTensor {
    /// `MAX_AGENTS × HIST_STEPS` feature rows.
    pub agents: Vec<Vec<[f64; AGENT_FEATS]>>,
    /// Per-step validity within each track.
    pub agent_steps: Vec<Vec<bool>>,
    /// Whether the agent slot holds any observed step at all.
    pub agent_valid: Vec<bool>,
    /// `POLY_SLOTS` polylines of per-waypoint features.
    pub polylines: Vec<Vec<[f64; MAP_FEATS]>>,
    pub point_valid: Vec<Vec<bool>>,
    pub poly_valid: Vec<bool>,
    pub ego: [f64; EGO_FEATS],
}

fn light_signal(light: TrafficLight) -> f64 {
    match light {
        TrafficLight::Unknown => 0.0,
        TrafficLight::Green => 1.0,
        TrafficLight::Yellow => 0.5,
        TrafficLight::Red => -1.0,
    }
}

/// Builds the fixed-shape tensors for one (ego-centric) scenario.
pub fn tensorize(sc: &Scenario, pad: Pad) -> SceneTensor {
    let fill = pad.fill();

    let mut agents = vec![vec![[fill; AGENT_FEATS]; HIST_STEPS]; MAX_AGENTS];
    let mut agent_steps = vec![vec![false; HIST_STEPS]; MAX_AGENTS];
    let mut agent_valid = vec![false; MAX_AGENTS];
    for (slot, track) in sc.agents.iter().take(MAX_AGENTS).enumerate() {
        let kind = track.kind.one_hot();
        for (t, (state, &ok)) in track.history.iter().zip(&track.valid).enumerate() {
            if !ok {
                continue;
            }
            agents[slot][t] = [
                state.x * POS_SCALE,
                state.y * POS_SCALE,
                state.vx * VEL_SCALE,
                state.vy * VEL_SCALE,
                1.0,
                kind[0],
                kind[1],
                kind[2],
            ];
            agent_steps[slot][t] = true;
            agent_valid[slot] = true;
        }
    }

    let mut polylines: Vec<Vec<[f64; MAP_FEATS]>> = Vec::with_capacity(POLY_SLOTS);
    let mut point_valid: Vec<Vec<bool>> = Vec::with_capacity(POLY_SLOTS);
    for (i, pts) in sc.map.roads.iter().enumerate() {
        let feats = pts
            .iter()
            .zip(&sc.map.roads_valid[i])
            .map(|(w, &ok)| {
                if ok {
                    [
                        w.x * POS_SCALE,
                        w.y * POS_SCALE,
                        w.heading.cos(),
                        w.heading.sin(),
                        light_signal(w.light),
                        0.0,
                        0.0,
                    ]
                } else {
                    [fill; MAP_FEATS]
                }
            })
            .collect();
        polylines.push(feats);
        point_valid.push(sc.map.roads_valid[i].clone());
    }
    for (i, pts) in sc.map.crosswalks.iter().enumerate() {
        let feats = pts
            .iter()
            .zip(&sc.map.crosswalks_valid[i])
            .map(|(p, &ok)| {
                if ok {
                    [
                        p.x * POS_SCALE,
                        p.y * POS_SCALE,
                        p.heading.cos(),
                        p.heading.sin(),
                        0.0,
                        0.0,
                        1.0,
                    ]
                } else {
                    [fill; MAP_FEATS]
                }
            })
            .collect();
        polylines.push(feats);
        point_valid.push(sc.map.crosswalks_valid[i].clone());
    }
    for (i, pts) in sc.map.route_lanes.iter().enumerate() {
        let feats = pts
            .iter()
            .zip(&sc.map.route_lanes_valid[i])
            .map(|(p, &ok)| {
                if ok {
                    [
                        p.x * POS_SCALE,
                        p.y * POS_SCALE,
                        p.heading.cos(),
                        p.heading.sin(),
                        0.0,
                        1.0,
                        0.0,
                    ]
                } else {
                    [fill; MAP_FEATS]
                }
            })
            .collect();
        polylines.push(feats);
        point_valid.push(sc.map.route_lanes_valid[i].clone());
    }
    let poly_valid = point_valid
        .iter()
        .map(|pts| pts.iter().any(|&v| v))
        .collect();

    SceneTensor {
        agents,
        agent_steps,
        agent_valid,
        polylines,
        point_valid,
        poly_valid,
        ego: [
            sc.ego.v * VEL_SCALE,
            sc.ego.a * VEL_SCALE,
            sc.speed_limit * VEL_SCALE,
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_scenario, GenKnobs, ScenarioClass};

    fn sample() -> Scenario {
        generate_scenario(ScenarioClass::FollowingLaneWithLead, 3, &GenKnobs::default()).unwrap()
    }

    #[test]
    fn shapes_are_fixed_regardless_of_content() {
        let t = tensorize(&sample(), Pad::Zero);
        assert_eq!(t.agents.len(), MAX_AGENTS);
        assert!(t.agents.iter().all(|a| a.len() == HIST_STEPS));
        assert_eq!(t.polylines.len(), POLY_SLOTS);
        assert_eq!(t.poly_valid.len(), POLY_SLOTS);
        assert!(t.agent_valid.iter().any(|&v| v));
        assert!(t.poly_valid.iter().any(|&v| v));
    }

    #[test]
    fn valid_payload_is_identical_under_both_paddings() {
        let sc = sample();
        let zero = tensorize(&sc, Pad::Zero);
        let poison = tensorize(&sc, Pad::Poison);
        for a in 0..MAX_AGENTS {
            for t in 0..HIST_STEPS {
                if zero.agent_steps[a][t] {
                    assert_eq!(zero.agents[a][t], poison.agents[a][t]);
                } else {
                    assert!(zero.agents[a][t].iter().all(|&v| v == 0.0));
                    assert!(poison.agents[a][t].iter().all(|v| v.is_nan()));
                }
            }
        }
        for p in 0..POLY_SLOTS {
            for (j, &ok) in zero.point_valid[p].iter().enumerate() {
                if ok {
                    assert_eq!(zero.polylines[p][j], poison.polylines[p][j]);
                } else {
                    assert!(poison.polylines[p][j].iter().all(|v| v.is_nan()));
                }
            }
        }
        assert_eq!(zero.ego, poison.ego);
    }

    #[test]
    fn layer_flags_tell_road_route_and_crosswalk_apart() {
        let sc = sample();
        let t = tensorize(&sc, Pad::Zero);
        for (p, pts) in t.polylines.iter().enumerate() {
            for (j, f) in pts.iter().enumerate() {
                if !t.point_valid[p][j] {
                    continue;
                }
                let (route, walk) = (f[5], f[6]);
                if p < ROAD_SLOTS {
                    assert_eq!((route, walk), (0.0, 0.0));
                } else if p < ROAD_SLOTS + CROSSWALK_SLOTS {
                    assert_eq!((route, walk), (0.0, 1.0));
                } else {
                    assert_eq!((route, walk), (1.0, 0.0));
                }
                // Heading channels stay on the unit circle.
                assert!((f[2] * f[2] + f[3] * f[3] - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ego_row_scales_speed_and_limit() {
        let sc = sample();
        let t = tensorize(&sc, Pad::Zero);
        assert!((t.ego[0] - sc.ego.v * VEL_SCALE).abs() < 1e-12);
        assert!((t.ego[2] - sc.speed_limit * VEL_SCALE).abs() < 1e-12);
    }
}
