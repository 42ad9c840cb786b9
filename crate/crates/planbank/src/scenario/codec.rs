//! On-disk scenario forms: a versioned little-endian binary container
//! (`.scn`, one or more length-prefixed records) and an equivalent JSON
//! document. Both round-trip losslessly; the binary form is byte-canonical.

use super::*;
use crate::codec::{CodecError, Reader, Writer};
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioCodecError {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("record {index}: {source}")]
    BadRecord {
        index: usize,
        source: ScenarioError,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("json document has version {found}, expected {expected}")]
    JsonVersion { found: u32, expected: u32 },
}

/// Serializes scenarios into the binary container format.
pub fn encode_scenarios(scs: &[Scenario]) -> Vec<u8> {
    let mut w = Writer::new();
    w.put_u32(FORMAT_VERSION);
    w.put_u32(scs.len() as u32);
    for sc in scs {
        let rec = encode_record(sc);
        w.put_u64(rec.len() as u64);
        for b in rec {
            w.put_u8(b);
        }
    }
    w.into_bytes()
}

/// Decodes a binary container, validating every record's invariants.
pub fn decode_scenarios(bytes: &[u8]) -> Result<Vec<Scenario>, ScenarioCodecError> {
    let mut r = Reader::new(bytes);
    r.expect_version(FORMAT_VERSION)?;
    let n = r.get_u32()? as usize;
    let mut out = Vec::with_capacity(n.min(1 << 16));
    for index in 0..n {
        let len = r.get_u64()? as usize;
        let start = r.offset();
        let sc = decode_record(&mut r)?;
        let used = r.offset() - start;
        if used != len {
            return Err(CodecError::Invalid {
                offset: start,
                what: format!("record {index} declared {len} bytes but decoded {used}"),
            }
            .into());
        }
        sc.check()
            .map_err(|source| ScenarioCodecError::BadRecord { index, source })?;
        out.push(sc);
    }
    Ok(out)
}

fn encode_record(sc: &Scenario) -> Vec<u8> {
    let mut w = Writer::new();
    let e = &sc.ego;
    for v in [e.x, e.y, e.heading, e.v, e.a, e.t] {
        w.put_f64(v);
    }
    w.put_u8(sc.label.id());
    w.put_u64(sc.seed);
    w.put_f64(sc.speed_limit);
    w.put_f64(sc.expert_arc);
    w.put_u16(sc.ego_route.len() as u16);
    for &i in &sc.ego_route {
        w.put_u16(i);
    }

    w.put_f64(sc.map.query_radius);
    for (row, mask) in sc.map.roads.iter().zip(&sc.map.roads_valid) {
        for (p, &ok) in row.iter().zip(mask) {
            w.put_bool(ok);
            if ok {
                w.put_f64(p.x);
                w.put_f64(p.y);
                w.put_f64(p.heading);
                w.put_u8(p.light.code());
            }
        }
    }
    for (grid, valid) in [
        (&sc.map.crosswalks, &sc.map.crosswalks_valid),
        (&sc.map.route_lanes, &sc.map.route_lanes_valid),
    ] {
        for (row, mask) in grid.iter().zip(valid.iter()) {
            for (p, &ok) in row.iter().zip(mask) {
                w.put_bool(ok);
                if ok {
                    w.put_f64(p.x);
                    w.put_f64(p.y);
                    w.put_f64(p.heading);
                }
            }
        }
    }

    w.put_u8(sc.agents.len() as u8);
    for a in &sc.agents {
        w.put_u32(a.id);
        w.put_u8(a.kind.code());
        for (s, &ok) in a.history.iter().zip(&a.valid) {
            w.put_bool(ok);
            if ok {
                for v in [s.x, s.y, s.vx, s.vy, s.yaw_rate] {
                    w.put_f64(v);
                }
            }
        }
    }
    w.put_u8(sc.futures.len() as u8);
    for f in &sc.futures {
        w.put_u32(f.id);
        w.put_u32(f.poses.len() as u32);
        for p in &f.poses {
            w.put_f64(p.x);
            w.put_f64(p.y);
            w.put_f64(p.heading);
        }
    }
    w.into_bytes()
}

fn decode_record(r: &mut Reader) -> Result<Scenario, ScenarioCodecError> {
    let mut ego = [0.0; 6];
    for v in ego.iter_mut() {
        *v = r.get_f64()?;
    }
    let label_off = r.offset();
    let label_code = r.get_u8()?;
    let label = ScenarioClass::from_id(label_code).ok_or(CodecError::Invalid {
        offset: label_off,
        what: format!("unknown class id {label_code}"),
    })?;
    let seed = r.get_u64()?;
    let speed_limit = r.get_f64()?;
    let expert_arc = r.get_f64()?;
    let n_route = r.get_u16()? as usize;
    let mut ego_route = Vec::with_capacity(n_route);
    for _ in 0..n_route {
        ego_route.push(r.get_u16()?);
    }

    let mut map = VectorizedMap::empty();
    map.query_radius = r.get_f64()?;
    for i in 0..ROAD_SLOTS {
        for j in 0..ROAD_POINTS {
            if r.get_bool()? {
                let (x, y, heading) = (r.get_f64()?, r.get_f64()?, r.get_f64()?);
                let light_off = r.offset();
                let code = r.get_u8()?;
                let light = TrafficLight::from_code(code).ok_or(CodecError::Invalid {
                    offset: light_off,
                    what: format!("unknown light code {code}"),
                })?;
                map.roads[i][j] = MapWaypoint {
                    x,
                    y,
                    heading,
                    light,
                };
                map.roads_valid[i][j] = true;
            }
        }
    }
    for layer in 0..2 {
        let (slots, points) = if layer == 0 {
            (CROSSWALK_SLOTS, CROSSWALK_POINTS)
        } else {
            (ROUTE_SLOTS, ROUTE_POINTS)
        };
        for i in 0..slots {
            for j in 0..points {
                if r.get_bool()? {
                    let p = PathPoint {
                        x: r.get_f64()?,
                        y: r.get_f64()?,
                        heading: r.get_f64()?,
                    };
                    if layer == 0 {
                        map.crosswalks[i][j] = p;
                        map.crosswalks_valid[i][j] = true;
                    } else {
                        map.route_lanes[i][j] = p;
                        map.route_lanes_valid[i][j] = true;
                    }
                }
            }
        }
    }

    let n_agents = r.get_u8()? as usize;
    let mut agents = Vec::with_capacity(n_agents);
    for _ in 0..n_agents {
        let id = r.get_u32()?;
        let kind_off = r.offset();
        let code = r.get_u8()?;
        let kind = AgentKind::from_code(code).ok_or(CodecError::Invalid {
            offset: kind_off,
            what: format!("unknown agent kind {code}"),
        })?;
        let mut history = vec![AgentState::ZERO; HIST_STEPS];
        let mut valid = vec![false; HIST_STEPS];
        for t in 0..HIST_STEPS {
            if r.get_bool()? {
                history[t] = AgentState {
                    x: r.get_f64()?,
                    y: r.get_f64()?,
                    vx: r.get_f64()?,
                    vy: r.get_f64()?,
                    yaw_rate: r.get_f64()?,
                };
                valid[t] = true;
            }
        }
        agents.push(AgentTrack {
            id,
            kind,
            history,
            valid,
        });
    }
    let n_futures = r.get_u8()? as usize;
    let mut futures = Vec::with_capacity(n_futures);
    for _ in 0..n_futures {
        let id = r.get_u32()?;
        let n = r.get_u32()? as usize;
        let mut poses = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            poses.push(crate::geometry::Pose::new(
                r.get_f64()?,
                r.get_f64()?,
                r.get_f64()?,
            ));
        }
        futures.push(AgentFuture { id, poses });
    }

    Ok(Scenario {
        map,
        agents,
        futures,
        ego: EgoState {
            x: ego[0],
            y: ego[1],
            heading: ego[2],
            v: ego[3],
            a: ego[4],
            t: ego[5],
        },
        ego_route,
        label,
        seed,
        speed_limit,
        expert_arc,
    })
}

#[derive(serde::Serialize, serde::Deserialize)]
struct JsonDoc {
    version: u32,
    scenarios: Vec<Scenario>,
}

/// JSON form of a scenario set, pretty-printed and versioned.
pub fn to_json(scs: &[Scenario]) -> String {
    serde_json::to_string_pretty(&JsonDoc {
        version: FORMAT_VERSION,
        scenarios: scs.to_vec(),
    })
    .expect("scenario serialization is infallible")
}

pub fn from_json(s: &str) -> Result<Vec<Scenario>, ScenarioCodecError> {
    let doc: JsonDoc = serde_json::from_str(s)?;
    if doc.version != FORMAT_VERSION {
        return Err(ScenarioCodecError::JsonVersion {
            found: doc.version,
            expected: FORMAT_VERSION,
        });
    }
    for (index, sc) in doc.scenarios.iter().enumerate() {
        sc.check()
            .map_err(|source| ScenarioCodecError::BadRecord { index, source })?;
    }
    Ok(doc.scenarios)
}
