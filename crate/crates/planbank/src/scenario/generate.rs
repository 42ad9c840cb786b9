//! Deterministic scene templates, one per [`ScenarioClass`]. Each template
//! lays out lanes, a route, and scripted agents in a canonical road frame,
//! jittered by the seed; the assembled world is then pushed through a random
//! rigid offset and re-normalized so the stored scenario is ego-centric.

use super::*;
use crate::geometry::wrap_angle;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Physical knobs shared by all templates. Template nominals (speeds, gaps,
/// agent counts) are scaled by these before seed jitter is applied.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct GenKnobs {
    pub lane_width: f64,
    /// Multiplies nominal ego/agent speeds.
    pub speed_scale: f64,
    /// Multiplies nominal longitudinal gaps.
    pub gap_scale: f64,
    /// Scales optional background traffic (0 drops it entirely).
    pub density: f64,
    /// Scales the seed jitter applied to nominals (0 = fully canonical).
    pub jitter: f64,
    /// Scripted future length in seconds; must cover the episode horizon.
    pub future_horizon: f64,
    /// Minimum map query radius (m); templates extend it to cover the route.
    pub query_radius: f64,
}

impl Default for GenKnobs {
    fn default() -> Self {
        GenKnobs {
            lane_width: 3.5,
            speed_scale: 1.0,
            gap_scale: 1.0,
            density: 1.0,
            jitter: 1.0,
            future_horizon: 16.0,
            query_radius: QUERY_RADIUS,
        }
    }
}

impl GenKnobs {
    pub fn validate(&self) -> Result<(), GenerateError> {
        let bad = |what: &str| Err(GenerateError::BadKnobs { what: what.into() });
        if !(self.lane_width.is_finite() && self.lane_width >= 2.6) {
            return bad("lane_width must be at least 2.6 m");
        }
        if !(self.speed_scale > 0.0 && self.speed_scale <= 3.0) {
            return bad("speed_scale must lie in (0, 3]");
        }
        if !(self.gap_scale >= 0.5 && self.gap_scale <= 3.0) {
            return bad("gap_scale must lie in [0.5, 3]");
        }
        if !(0.0..=2.0).contains(&self.density) {
            return bad("density must lie in [0, 2]");
        }
        if !(0.0..=2.0).contains(&self.jitter) {
            return bad("jitter must lie in [0, 2]");
        }
        if self.future_horizon < 15.1 {
            return bad("future_horizon must cover the 15 s episode");
        }
        if !(self.query_radius >= 40.0) {
            return bad("query_radius must be at least 40 m");
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("bad generator knobs: {what}")]
    BadKnobs { what: String },
    #[error("template produced an invalid scenario: {0}")]
    Invalid(#[from] ScenarioError),
}

const ROAD_SPACING: f64 = 3.0;
const ROUTE_SPACING: f64 = 2.0;

/// Builds the scenario for `(class, seed)` under the given knobs. Pure:
/// identical inputs give byte-identical output.
pub fn generate_scenario(
    class: ScenarioClass,
    seed: u64,
    knobs: &GenKnobs,
) -> Result<Scenario, GenerateError> {
    knobs.validate()?;
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed ^ (class.id() as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut jit = Jit {
        rng: &mut rng,
        scale: knobs.jitter,
    };
    let draft = match class {
        ScenarioClass::BehindLongVehicle => behind_long_vehicle(&mut jit, knobs),
        ScenarioClass::FollowingLaneWithLead => following_lane_with_lead(&mut jit, knobs),
        ScenarioClass::HighLateralAcceleration => high_lateral_acceleration(&mut jit, knobs),
        ScenarioClass::LowMagnitudeSpeed => low_magnitude_speed(&mut jit, knobs),
        ScenarioClass::StartingLeftTurn => starting_left_turn(&mut jit, knobs),
        ScenarioClass::StartingRightTurn => starting_right_turn(&mut jit, knobs),
        ScenarioClass::StartingStraightTrafficLight => starting_straight_light(&mut jit, knobs),
        ScenarioClass::StationaryInTraffic => stationary_in_traffic(&mut jit, knobs),
        ScenarioClass::StoppingWithLead => stopping_with_lead(&mut jit, knobs),
        ScenarioClass::WaitingForPedestrianToCross => waiting_for_pedestrian(&mut jit, knobs),
        ScenarioClass::HighMagnitudeSpeed => high_magnitude_speed(&mut jit, knobs),
        ScenarioClass::NearMultipleVehicles => near_multiple_vehicles(&mut jit, knobs),
        ScenarioClass::ChangingLane => changing_lane(&mut jit, knobs),
        ScenarioClass::TraversingPickupDropoff => traversing_pickup_dropoff(&mut jit, knobs),
    };
    // Random rigid placement of the whole world, undone by normalization, so
    // stored scenarios are always ego-centric regardless of template frame.
    let world = Pose::new(
        jit.pm(0.0, 15.0),
        jit.pm(0.0, 15.0),
        jit.pm(0.0, 0.25),
    );
    let sc = assemble(draft, class, seed, knobs, world, &mut rng)?;
    Ok(sc)
}

struct Jit<'r> {
    rng: &'r mut ChaCha8Rng,
    scale: f64,
}

impl Jit<'_> {
    /// `nominal ± amp` (uniform), scaled by the jitter knob.
    fn pm(&mut self, nominal: f64, amp: f64) -> f64 {
        nominal + amp * self.scale * self.rng.gen_range(-1.0..1.0)
    }

    /// `nominal + [0, amp)` (uniform), scaled by the jitter knob.
    fn up(&mut self, nominal: f64, amp: f64) -> f64 {
        nominal + amp * self.scale * self.rng.gen_range(0.0..1.0)
    }
}

#[derive(Clone)]
enum Profile {
    Constant(f64),
    /// Speed `v` until `t0`, then decelerate at `rate` to standstill.
    Brake { v: f64, t0: f64, rate: f64 },
    /// Standstill until `t0`, then accelerate at `rate` up to `v`.
    Go { t0: f64, rate: f64, v: f64 },
    /// Stop-and-go wave: moving at `v` for `duty` of each `period`.
    Wave {
        v: f64,
        period: f64,
        duty: f64,
        phase: f64,
    },
}

impl Profile {
    fn speed_at(&self, t: f64) -> f64 {
        match *self {
            Profile::Constant(v) => v,
            Profile::Brake { v, t0, rate } => (v - rate * (t - t0).max(0.0)).max(0.0),
            Profile::Go { t0, rate, v } => (rate * (t - t0).max(0.0)).min(v),
            Profile::Wave {
                v,
                period,
                duty,
                phase,
            } => {
                if ((t + phase).rem_euclid(period)) / period < duty {
                    v
                } else {
                    0.0
                }
            }
        }
    }
}

struct Script {
    kind: AgentKind,
    pts: Vec<(f64, f64)>,
    s0: f64,
    profile: Profile,
    appear_step: usize,
    /// Optional texture agent, dropped when the density knob rounds it away.
    optional: bool,
}

struct Draft {
    roads: Vec<Vec<MapWaypoint>>,
    crosswalks: Vec<Vec<PathPoint>>,
    ego_path: Vec<(f64, f64)>,
    ego_v: f64,
    ego_a: f64,
    speed_limit: f64,
    expert_arc: f64,
    scripts: Vec<Script>,
}

fn assemble(
    draft: Draft,
    class: ScenarioClass,
    seed: u64,
    knobs: &GenKnobs,
    world: Pose,
    rng: &mut ChaCha8Rng,
) -> Result<Scenario, GenerateError> {
    let mut map = VectorizedMap::empty();
    let mut road_chunks: Vec<&[MapWaypoint]> = Vec::new();
    for lane in &draft.roads {
        for chunk in lane.chunks(ROAD_POINTS) {
            if chunk.len() >= 2 && road_chunks.len() < ROAD_SLOTS {
                road_chunks.push(chunk);
            }
        }
    }
    // Road slots are an unordered set; scramble them per seed like the agent
    // slots so nothing downstream can lean on a fixed layout.
    road_chunks.shuffle(rng);
    for (slot, chunk) in road_chunks.iter().enumerate() {
        map.set_road(slot, chunk);
    }
    for (i, cw) in draft.crosswalks.iter().take(CROSSWALK_SLOTS).enumerate() {
        map.set_crosswalk(i, cw);
    }

    let route_pts = resample(&draft.ego_path, ROUTE_SPACING);
    let route_len = polyline_len(&route_pts);
    let route_points = to_path_points(&route_pts);
    let mut ego_route = Vec::new();
    for (i, chunk) in route_points.chunks(ROUTE_POINTS).enumerate() {
        if chunk.len() >= 2 && i < ROUTE_SLOTS {
            map.set_route_lane(i, chunk);
            ego_route.push(i as u16);
        }
    }
    map.query_radius = knobs.query_radius.max(route_len + 30.0);

    // Agent tracks and futures from integrated scripts.
    let n_future = (knobs.future_horizon / FUTURE_DT).round() as usize;
    let mut keep_optional = {
        let total: usize = draft.scripts.iter().filter(|s| s.optional).count();
        (total as f64 * knobs.density).round() as usize
    };
    let mut retained: Vec<&Script> = Vec::new();
    for script in &draft.scripts {
        if script.optional {
            if keep_optional == 0 {
                continue;
            }
            keep_optional -= 1;
        }
        if retained.len() >= MAX_AGENTS {
            break;
        }
        retained.push(script);
    }
    // Slot order carries no meaning, so scramble it per seed: the stored
    // scene is identical up to agent numbering, but flat feature layouts
    // differ across seeds of the same class.
    retained.shuffle(rng);
    let mut agents = Vec::new();
    let mut futures = Vec::new();
    for (i, script) in retained.iter().enumerate() {
        let (track, future) = sample_script(script, i as u32 + 1, n_future);
        agents.push(track);
        futures.push(future);
    }

    let ego_heading = {
        let (a, b) = (draft.ego_path[0], draft.ego_path[1]);
        (b.1 - a.1).atan2(b.0 - a.0)
    };
    let sc = Scenario {
        map,
        agents,
        futures,
        ego: EgoState {
            x: draft.ego_path[0].0,
            y: draft.ego_path[0].1,
            heading: ego_heading,
            v: draft.ego_v,
            a: draft.ego_a,
            t: 0.0,
        },
        ego_route,
        label: class,
        seed,
        speed_limit: draft.speed_limit,
        expert_arc: draft.expert_arc,
    };
    let placed = displace(&sc, world);
    let out = normalize_to_ego(&placed)?;
    out.check()?;
    Ok(out)
}

/// Applies a rigid world pose to every coordinate (the inverse of
/// normalization — used so generated scenarios exercise the real transform).
fn displace(sc: &Scenario, world: Pose) -> Scenario {
    let (c, s) = (world.heading.cos(), world.heading.sin());
    let pt = |x: f64, y: f64| (world.x + c * x - s * y, world.y + s * x + c * y);
    let vec = |x: f64, y: f64| (c * x - s * y, s * x + c * y);
    let mut out = sc.clone();
    let (ex, ey) = pt(sc.ego.x, sc.ego.y);
    out.ego.x = ex;
    out.ego.y = ey;
    out.ego.heading = wrap_angle(sc.ego.heading + world.heading);
    for (row, mask) in out.map.roads.iter_mut().zip(&out.map.roads_valid) {
        for (w, &ok) in row.iter_mut().zip(mask) {
            if ok {
                let (x, y) = pt(w.x, w.y);
                w.x = x;
                w.y = y;
                w.heading = wrap_angle(w.heading + world.heading);
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
                let (x, y) = pt(p.x, p.y);
                p.x = x;
                p.y = y;
                p.heading = wrap_angle(p.heading + world.heading);
            }
        }
    }
    for a in &mut out.agents {
        for (st, &ok) in a.history.iter_mut().zip(&a.valid) {
            if ok {
                let (x, y) = pt(st.x, st.y);
                let (vx, vy) = vec(st.vx, st.vy);
                *st = AgentState {
                    x,
                    y,
                    vx,
                    vy,
                    yaw_rate: st.yaw_rate,
                };
            }
        }
    }
    for f in &mut out.futures {
        for p in f.poses.iter_mut() {
            let (x, y) = pt(p.x, p.y);
            *p = Pose::new(x, y, wrap_angle(p.heading + world.heading));
        }
    }
    out
}

fn sample_script(script: &Script, id: u32, n_future: usize) -> (AgentTrack, AgentFuture) {
    let path = crate::geometry::ArcPath::new(&script.pts)
        .expect("agent scripts always have at least two distinct points");
    // Arc positions on a uniform grid covering history and future.
    let total = HIST_STEPS + n_future;
    let mut s = vec![0.0; total];
    let anchor = HIST_STEPS - 1; // t = 0
    s[anchor] = script.s0;
    let t_of = |i: usize| (i as f64 - anchor as f64) * FUTURE_DT;
    for i in anchor..total - 1 {
        s[i + 1] = s[i] + script.profile.speed_at(t_of(i)) * FUTURE_DT;
    }
    for i in (1..=anchor).rev() {
        s[i - 1] = (s[i] - script.profile.speed_at(t_of(i - 1)) * FUTURE_DT).max(0.0);
    }
    let pose_at = |i: usize| {
        let (x, y) = path.point_at(s[i]);
        Pose::new(x, y, path.heading_at(s[i]))
    };
    let mut history = vec![AgentState::ZERO; HIST_STEPS];
    let mut valid = vec![false; HIST_STEPS];
    for k in script.appear_step..HIST_STEPS {
        let p = pose_at(k);
        let sp = script.profile.speed_at(t_of(k));
        let next = pose_at((k + 1).min(total - 1));
        history[k] = AgentState {
            x: p.x,
            y: p.y,
            vx: sp * p.heading.cos(),
            vy: sp * p.heading.sin(),
            yaw_rate: wrap_angle(next.heading - p.heading) / FUTURE_DT,
        };
        valid[k] = true;
    }
    let poses = (HIST_STEPS..total).map(pose_at).collect();
    (
        AgentTrack {
            id,
            kind: script.kind,
            history,
            valid,
        },
        AgentFuture { id, poses },
    )
}

// ---- path construction helpers ----

fn straight(start: (f64, f64), heading: f64, len: f64, spacing: f64) -> Vec<(f64, f64)> {
    let n = (len / spacing).ceil() as usize;
    let (c, s) = (heading.cos(), heading.sin());
    (0..=n)
        .map(|i| {
            let d = (i as f64 * spacing).min(len);
            (start.0 + c * d, start.1 + s * d)
        })
        .collect()
}

/// Constant-curvature arc integrated from `start` with initial heading `h0`.
/// Positive radius curves left; `sweep` is the unsigned heading change.
fn arc_from(start: (f64, f64), h0: f64, radius: f64, sweep: f64, spacing: f64) -> Vec<(f64, f64)> {
    let len = radius.abs() * sweep;
    let n = (len / spacing).ceil().max(2.0) as usize;
    let step = len / n as f64;
    let mut pts = vec![start];
    let mut h = h0;
    let mut p = start;
    for _ in 0..n {
        h += step / radius;
        p = (p.0 + h.cos() * step, p.1 + h.sin() * step);
        pts.push(p);
    }
    pts
}

/// Joins path pieces, dropping duplicated joints.
fn join(pieces: &[Vec<(f64, f64)>]) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    for piece in pieces {
        for &p in piece {
            if out
                .last()
                .map_or(true, |&q| (p.0 - q.0).hypot(p.1 - q.1) > 1e-6)
            {
                out.push(p);
            }
        }
    }
    out
}

/// Lateral offset of a polyline (left positive).
fn offset_polyline(pts: &[(f64, f64)], d: f64) -> Vec<(f64, f64)> {
    let n = pts.len();
    (0..n)
        .map(|i| {
            let (a, b) = if i + 1 < n {
                (pts[i], pts[i + 1])
            } else {
                (pts[i - 1], pts[i])
            };
            let h = (b.1 - a.1).atan2(b.0 - a.0);
            (pts[i].0 - h.sin() * d, pts[i].1 + h.cos() * d)
        })
        .collect()
}

/// Lane-change centerline: straight at offset 0, cosine blend to `dy` over
/// `[x0, x1]`, then straight, all along the +x axis from `start_x`.
fn blend_path(start_x: f64, end_x: f64, x0: f64, x1: f64, dy: f64, spacing: f64) -> Vec<(f64, f64)> {
    let n = ((end_x - start_x) / spacing).ceil() as usize;
    (0..=n)
        .map(|i| {
            let x = start_x + ((i as f64 * spacing).min(end_x - start_x));
            let y = if x <= x0 {
                0.0
            } else if x >= x1 {
                dy
            } else {
                let u = (x - x0) / (x1 - x0);
                dy * (1.0 - (std::f64::consts::PI * u).cos()) / 2.0
            };
            (x, y)
        })
        .collect()
}

fn resample(pts: &[(f64, f64)], spacing: f64) -> Vec<(f64, f64)> {
    let path = crate::geometry::ArcPath::new(pts).expect("route paths have at least two points");
    let n = (path.length() / spacing).ceil() as usize;
    (0..=n)
        .map(|i| path.point_at((i as f64 * spacing).min(path.length())))
        .collect()
}

fn polyline_len(pts: &[(f64, f64)]) -> f64 {
    pts.windows(2)
        .map(|w| (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1))
        .sum()
}

fn to_path_points(pts: &[(f64, f64)]) -> Vec<PathPoint> {
    let n = pts.len();
    (0..n)
        .map(|i| {
            let (a, b) = if i + 1 < n {
                (pts[i], pts[i + 1])
            } else {
                (pts[i - 1], pts[i])
            };
            PathPoint {
                x: pts[i].0,
                y: pts[i].1,
                heading: (b.1 - a.1).atan2(b.0 - a.0),
            }
        })
        .collect()
}

fn lane_waypoints(
    pts: &[(f64, f64)],
    light: impl Fn((f64, f64)) -> TrafficLight,
) -> Vec<MapWaypoint> {
    to_path_points(pts)
        .into_iter()
        .map(|p| MapWaypoint {
            x: p.x,
            y: p.y,
            heading: p.heading,
            light: light((p.x, p.y)),
        })
        .collect()
}

fn no_light(_: (f64, f64)) -> TrafficLight {
    TrafficLight::Unknown
}

/// Crosswalk stripe across the main road at `x`, spanning `[y0, y1]`.
fn crosswalk_stripe(x: f64, y0: f64, y1: f64) -> Vec<PathPoint> {
    let n = (((y1 - y0) / 0.45).ceil() as usize).min(CROSSWALK_POINTS - 1);
    (0..=n)
        .map(|i| PathPoint {
            x,
            y: y0 + (y1 - y0) * i as f64 / n as f64,
            heading: std::f64::consts::FRAC_PI_2,
        })
        .collect()
}

/// Three parallel lanes along +x over `[x0, x1]` (ego lane at y = 0).
fn three_lanes(
    x0: f64,
    x1: f64,
    lane_width: f64,
    light: impl Fn((f64, f64)) -> TrafficLight + Copy,
) -> Vec<Vec<MapWaypoint>> {
    [-lane_width, 0.0, lane_width]
        .iter()
        .map(|&y| lane_waypoints(&straight((x0, y), 0.0, x1 - x0, ROAD_SPACING), light))
        .collect()
}

fn stopped_vehicle(x: f64, y: f64) -> Script {
    Script {
        kind: AgentKind::Vehicle,
        pts: vec![(x, y), (x + 2.0, y)],
        s0: 0.0,
        profile: Profile::Constant(0.0),
        appear_step: 0,
        optional: false,
    }
}

fn cruising_vehicle(x: f64, y: f64, v: f64, optional: bool) -> Script {
    Script {
        kind: AgentKind::Vehicle,
        pts: straight((x - 30.0, y), 0.0, 420.0, 6.0),
        s0: 30.0,
        profile: Profile::Constant(v),
        appear_step: 0,
        optional,
    }
}

/// Distance covered accelerating from `v0` to `vmax` at `a`, then cruising,
/// over `t` seconds.
fn accel_arc(v0: f64, a: f64, vmax: f64, t: f64) -> f64 {
    let t1 = ((vmax - v0) / a).max(0.0).min(t);
    v0 * t1 + 0.5 * a * t1 * t1 + vmax * (t - t1)
}

/// Progress available to a follower: initial bumper gap plus lead travel,
/// minus a standstill buffer.
fn lead_limited(gap: f64, lead_travel: f64) -> f64 {
    (gap + lead_travel - 2.0).max(0.0)
}

const EPISODE_T: f64 = 15.0;

// ---- the fourteen templates ----

fn behind_long_vehicle(j: &mut Jit, k: &GenKnobs) -> Draft {
    let ego_v = j.pm(6.0, 0.5) * k.speed_scale;
    let lead_v = j.pm(4.0, 0.4) * k.speed_scale;
    let gap = j.pm(12.0, 2.0) * k.gap_scale;
    let lw = k.lane_width;
    let mut scripts = vec![cruising_vehicle(gap + 4.6, 0.0, lead_v, false)];
    scripts.push(cruising_vehicle(j.pm(6.0, 2.0), lw, lead_v, true));
    scripts.push(cruising_vehicle(j.pm(-5.0, 2.0), -lw, lead_v, true));
    scripts.push(cruising_vehicle(j.pm(30.0, 3.0), lw, lead_v, true));
    Draft {
        roads: three_lanes(-40.0, 130.0, lw, no_light),
        crosswalks: vec![],
        ego_path: straight((0.0, 0.0), 0.0, 110.0, ROUTE_SPACING),
        ego_v,
        ego_a: 0.0,
        speed_limit: 11.1,
        expert_arc: 0.8 * lead_limited(gap, lead_v * EPISODE_T),
        scripts,
    }
}

fn following_lane_with_lead(j: &mut Jit, k: &GenKnobs) -> Draft {
    let ego_v = j.pm(8.0, 0.5) * k.speed_scale;
    let lead_v = j.pm(7.0, 0.7) * k.speed_scale;
    let gap = j.pm(15.0, 3.0) * k.gap_scale;
    let lw = k.lane_width;
    let mut scripts = vec![cruising_vehicle(gap + 4.6, 0.0, lead_v, false)];
    scripts.push(cruising_vehicle(j.pm(10.0, 3.0), lw, lead_v, true));
    scripts.push(cruising_vehicle(j.pm(-8.0, 3.0), -lw, lead_v, true));
    Draft {
        roads: three_lanes(-40.0, 180.0, lw, no_light),
        crosswalks: vec![],
        ego_path: straight((0.0, 0.0), 0.0, 160.0, ROUTE_SPACING),
        ego_v,
        ego_a: 0.0,
        speed_limit: 13.9,
        expert_arc: 0.8 * lead_limited(gap, lead_v * EPISODE_T),
        scripts,
    }
}

fn high_lateral_acceleration(j: &mut Jit, k: &GenKnobs) -> Draft {
    let ego_v = j.pm(7.5, 0.5) * k.speed_scale;
    let lead_v = j.pm(7.0, 0.5) * k.speed_scale;
    let lw = k.lane_width;
    let sweep = j.pm(0.9, 0.1);
    // S-curve: straight-in, arc left, arc right back to heading 0, straight-out.
    let mut center = join(&[
        straight((-40.0, 0.0), 0.0, 60.0, 1.0),
        arc_from((20.0, 0.0), 0.0, 18.0, sweep, 1.0),
    ]);
    let end = *center.last().unwrap();
    center = join(&[center, arc_from(end, sweep, -18.0, sweep, 1.0)]);
    let end = *center.last().unwrap();
    center = join(&[center, straight(end, 0.0, 60.0, 1.0)]);
    let roads = vec![
        lane_waypoints(&offset_polyline(&center, -lw), no_light),
        lane_waypoints(&center, no_light),
        lane_waypoints(&offset_polyline(&center, lw), no_light),
    ];
    let ego_path: Vec<(f64, f64)> = center.iter().copied().skip_while(|p| p.0 < -0.5).collect();
    let route_len = polyline_len(&ego_path);
    let lead = Script {
        kind: AgentKind::Vehicle,
        pts: ego_path.clone(),
        s0: j.pm(35.0, 4.0) * k.gap_scale,
        profile: Profile::Constant(lead_v),
        appear_step: 0,
        optional: false,
    };
    Draft {
        roads,
        crosswalks: vec![],
        ego_path,
        ego_v,
        ego_a: 0.0,
        speed_limit: 9.0,
        expert_arc: (0.8 * ego_v * EPISODE_T).min(route_len - 5.0),
        scripts: vec![lead],
    }
}

fn low_magnitude_speed(j: &mut Jit, k: &GenKnobs) -> Draft {
    let ego_v = j.pm(1.3, 0.2) * k.speed_scale;
    let lead_v = j.pm(1.0, 0.15) * k.speed_scale;
    let gap = j.pm(6.0, 1.0) * k.gap_scale;
    let lw = k.lane_width;
    let mut scripts = vec![cruising_vehicle(gap + 4.6, 0.0, lead_v, false)];
    for i in 0..3 {
        scripts.push(cruising_vehicle(j.pm(-2.0 + 7.0 * i as f64, 1.0), lw, lead_v, true));
        scripts.push(cruising_vehicle(j.pm(1.0 + 7.0 * i as f64, 1.0), -lw, lead_v, true));
    }
    Draft {
        roads: three_lanes(-40.0, 90.0, lw, no_light),
        crosswalks: vec![],
        ego_path: straight((0.0, 0.0), 0.0, 70.0, ROUTE_SPACING),
        ego_v,
        ego_a: 0.0,
        speed_limit: 11.1,
        expert_arc: 0.8 * lead_limited(gap, lead_v * EPISODE_T),
        scripts,
    }
}

/// Shared intersection layout: main road along x with a stop line at x = 26,
/// cross street with a southbound lane at x = 31.5 and northbound at x = 35.
fn intersection_roads(
    k: &GenKnobs,
    main_light: TrafficLight,
    main_end: f64,
) -> (Vec<Vec<MapWaypoint>>, Vec<Vec<PathPoint>>) {
    let lw = k.lane_width;
    let approach = move |p: (f64, f64)| {
        if p.0 > 6.0 && p.0 < 26.0 {
            main_light
        } else {
            TrafficLight::Unknown
        }
    };
    let cross = |p: (f64, f64)| {
        if p.1.abs() > 6.0 && p.1.abs() < 26.0 {
            TrafficLight::Red
        } else {
            TrafficLight::Unknown
        }
    };
    let mut roads = vec![
        lane_waypoints(&straight((-40.0, 0.0), 0.0, main_end + 40.0, ROAD_SPACING), approach),
        lane_waypoints(
            &straight((main_end, lw), std::f64::consts::PI, main_end + 40.0, ROAD_SPACING),
            no_light,
        ),
    ];
    roads.push(lane_waypoints(
        &straight((31.5, 45.0), -std::f64::consts::FRAC_PI_2, 90.0, ROAD_SPACING),
        cross,
    ));
    roads.push(lane_waypoints(
        &straight((35.0, -45.0), std::f64::consts::FRAC_PI_2, 90.0, ROAD_SPACING),
        cross,
    ));
    let crosswalks = vec![crosswalk_stripe(22.0, -5.5, 5.5)];
    (roads, crosswalks)
}

fn starting_left_turn(j: &mut Jit, k: &GenKnobs) -> Draft {
    let ego_v = j.pm(1.8, 0.3) * k.speed_scale;
    let (roads, crosswalks) = intersection_roads(k, TrafficLight::Green, 120.0);
    let ego_path = join(&[
        straight((0.0, 0.0), 0.0, 26.0, 1.0),
        arc_from((26.0, 0.0), 0.0, 9.0, std::f64::consts::FRAC_PI_2, 1.0),
        straight((35.0, 9.0), std::f64::consts::FRAC_PI_2, 60.0, 1.0),
    ]);
    // Oncoming car clears the intersection long before the ego arrives.
    let oncoming = Script {
        kind: AgentKind::Vehicle,
        pts: straight((80.0, k.lane_width), std::f64::consts::PI, 140.0, 6.0),
        s0: j.pm(40.0, 3.0),
        profile: Profile::Constant(j.pm(7.0, 0.5) * k.speed_scale),
        appear_step: 0,
        optional: false,
    };
    let queued = stopped_vehicle(j.pm(66.0, 3.0), k.lane_width);
    Draft {
        roads,
        crosswalks,
        ego_path,
        ego_v,
        ego_a: 0.6,
        speed_limit: 8.3,
        expert_arc: 0.8 * accel_arc(ego_v, 1.0, 7.0, EPISODE_T).min(95.0),
        scripts: vec![oncoming, queued],
    }
}

fn starting_right_turn(j: &mut Jit, k: &GenKnobs) -> Draft {
    let ego_v = j.pm(1.8, 0.3) * k.speed_scale;
    let (roads, mut crosswalks) = intersection_roads(k, TrafficLight::Green, 120.0);
    crosswalks.push(crosswalk_stripe_at_cross(j.pm(-7.5, 0.5)));
    let ego_path = join(&[
        straight((0.0, 0.0), 0.0, 26.0, 1.0),
        arc_from((26.0, 0.0), 0.0, -5.5, std::f64::consts::FRAC_PI_2, 1.0),
        straight((31.5, -5.5), -std::f64::consts::FRAC_PI_2, 60.0, 1.0),
    ]);
    // Pedestrian finishing the crossing, walking away from the turn exit.
    let ped = Script {
        kind: AgentKind::Pedestrian,
        pts: vec![(29.0, -7.2), (38.5, -7.2)],
        s0: j.pm(4.5, 0.4),
        profile: Profile::Constant(j.pm(1.3, 0.1)),
        appear_step: 0,
        optional: false,
    };
    let northbound = Script {
        kind: AgentKind::Vehicle,
        pts: straight((35.0, -45.0), std::f64::consts::FRAC_PI_2, 90.0, 6.0),
        s0: j.pm(10.0, 2.0),
        profile: Profile::Constant(j.pm(5.0, 0.5) * k.speed_scale),
        appear_step: 0,
        optional: true,
    };
    Draft {
        roads,
        crosswalks,
        ego_path,
        ego_v,
        ego_a: 0.6,
        speed_limit: 8.3,
        expert_arc: 0.8 * accel_arc(ego_v, 1.0, 6.5, EPISODE_T).min(90.0),
        scripts: vec![ped, northbound],
    }
}

fn crosswalk_stripe_at_cross(y: f64) -> Vec<PathPoint> {
    let n = 20;
    (0..=n)
        .map(|i| PathPoint {
            x: 28.5 + (38.0 - 28.5) * i as f64 / n as f64,
            y,
            heading: 0.0,
        })
        .collect()
}

fn starting_straight_light(j: &mut Jit, k: &GenKnobs) -> Draft {
    let ego_v = j.up(0.3, 0.3) * k.speed_scale;
    let gap = j.pm(8.0, 1.5) * k.gap_scale;
    let (roads, crosswalks) = intersection_roads(k, TrafficLight::Green, 160.0);
    let t0 = j.up(0.4, 0.5);
    let lead = Script {
        kind: AgentKind::Vehicle,
        pts: straight((-20.0, 0.0), 0.0, 200.0, 6.0),
        s0: 20.0 + gap + 4.6,
        profile: Profile::Go {
            t0,
            rate: 1.3,
            v: 8.0 * k.speed_scale,
        },
        appear_step: 0,
        optional: false,
    };
    let mut scripts = vec![lead];
    // Cross traffic held at the red light.
    scripts.push(stopped_vehicle_heading(31.5, j.pm(10.0, 1.5), -std::f64::consts::FRAC_PI_2));
    scripts.push(stopped_vehicle_heading(31.5, j.pm(17.5, 1.5), -std::f64::consts::FRAC_PI_2));
    scripts.push(stopped_vehicle_heading(35.0, j.pm(-10.0, 1.5), std::f64::consts::FRAC_PI_2));
    let lead_travel = {
        let t1: f64 = 8.0 * k.speed_scale / 1.3;
        let t1 = t1.min(EPISODE_T - t0);
        0.5 * 1.3 * t1 * t1 + 8.0 * k.speed_scale * (EPISODE_T - t0 - t1).max(0.0)
    };
    Draft {
        roads,
        crosswalks,
        ego_path: straight((0.0, 0.0), 0.0, 140.0, ROUTE_SPACING),
        ego_v,
        ego_a: 0.5,
        speed_limit: 11.1,
        expert_arc: 0.8 * lead_limited(gap, lead_travel),
        scripts,
    }
}

fn stopped_vehicle_heading(x: f64, y: f64, heading: f64) -> Script {
    Script {
        kind: AgentKind::Vehicle,
        pts: vec![(x, y), (x + 2.0 * heading.cos(), y + 2.0 * heading.sin())],
        s0: 0.0,
        profile: Profile::Constant(0.0),
        appear_step: 0,
        optional: false,
    }
}

fn stationary_in_traffic(j: &mut Jit, k: &GenKnobs) -> Draft {
    let gap = j.pm(3.0, 1.0) * k.gap_scale;
    let lw = k.lane_width;
    let mut scripts = vec![stopped_vehicle(gap + 4.6, 0.0)];
    scripts.push(stopped_vehicle(gap + 12.0, 0.0));
    scripts.push(stopped_vehicle(j.pm(-8.0, 1.0), 0.0));
    for i in 0..3 {
        scripts.push(stopped_vehicle(j.pm(-4.0 + 8.0 * i as f64, 1.5), lw));
        scripts.push(stopped_vehicle(j.pm(8.0 * i as f64, 1.5), -lw));
    }
    Draft {
        roads: three_lanes(-40.0, 80.0, lw, no_light),
        crosswalks: vec![],
        ego_path: straight((0.0, 0.0), 0.0, 60.0, ROUTE_SPACING),
        ego_v: 0.0,
        ego_a: 0.0,
        speed_limit: 11.1,
        expert_arc: 0.0,
        scripts,
    }
}

fn stopping_with_lead(j: &mut Jit, k: &GenKnobs) -> Draft {
    let ego_v = j.pm(7.0, 0.5) * k.speed_scale;
    let lead_v = j.pm(6.0, 0.5) * k.speed_scale;
    let gap = j.pm(18.0, 3.0) * k.gap_scale;
    let t0 = j.up(0.7, 0.6);
    let rate = 1.5;
    let lw = k.lane_width;
    let lead = Script {
        kind: AgentKind::Vehicle,
        pts: straight((-30.0, 0.0), 0.0, 160.0, 6.0),
        s0: 30.0 + gap + 4.6,
        profile: Profile::Brake {
            v: lead_v,
            t0,
            rate,
        },
        appear_step: 0,
        optional: false,
    };
    let mut scripts = vec![lead];
    for (y, x) in [(lw, 8.0), (-lw, -4.0)] {
        scripts.push(Script {
            kind: AgentKind::Vehicle,
            pts: straight((x - 30.0, y), 0.0, 160.0, 6.0),
            s0: 30.0,
            profile: Profile::Brake {
                v: lead_v,
                t0: j.up(0.5, 1.0),
                rate,
            },
            appear_step: 0,
            optional: true,
        });
    }
    let lead_travel = lead_v * t0 + lead_v * lead_v / (2.0 * rate);
    Draft {
        roads: three_lanes(-40.0, 120.0, lw, no_light),
        crosswalks: vec![],
        ego_path: straight((0.0, 0.0), 0.0, 100.0, ROUTE_SPACING),
        ego_v,
        ego_a: 0.0,
        speed_limit: 13.9,
        expert_arc: 0.8 * lead_limited(gap, lead_travel),
        scripts,
    }
}

fn waiting_for_pedestrian(j: &mut Jit, k: &GenKnobs) -> Draft {
    let ego_v = j.pm(4.5, 0.4) * k.speed_scale;
    let xc = j.pm(16.0, 2.0);
    let ped_v = j.pm(1.3, 0.1);
    let ped = Script {
        kind: AgentKind::Pedestrian,
        pts: vec![(xc, -6.8), (xc, 6.3)],
        s0: 1.3,
        profile: Profile::Constant(ped_v),
        appear_step: 10,
        optional: false,
    };
    // A car in the left lane brakes for the same crossing.
    let yielding = Script {
        kind: AgentKind::Vehicle,
        pts: straight((-60.0, k.lane_width), 0.0, 160.0, 6.0),
        s0: j.pm(38.0, 3.0),
        profile: Profile::Brake {
            v: 5.0 * k.speed_scale,
            t0: 0.0,
            rate: 1.2,
        },
        appear_step: 0,
        optional: true,
    };
    Draft {
        roads: three_lanes(-40.0, 120.0, k.lane_width, no_light),
        crosswalks: vec![crosswalk_stripe(xc, -5.5, 5.5)],
        ego_path: straight((0.0, 0.0), 0.0, 100.0, ROUTE_SPACING),
        ego_v,
        ego_a: 0.0,
        speed_limit: 8.3,
        expert_arc: 0.8 * ego_v * (EPISODE_T - 5.0),
        scripts: vec![ped, yielding],
    }
}

fn high_magnitude_speed(j: &mut Jit, k: &GenKnobs) -> Draft {
    // Initial ego speed stays at or above 15 m/s regardless of knobs.
    let ego_v = (j.up(15.75, 1.25) * k.speed_scale).max(15.05);
    let lw = k.lane_width;
    let stall_x = j.pm(95.0, 8.0) * k.gap_scale;
    let mut scripts = vec![stopped_vehicle(stall_x, -1.45)];
    // Slow convoy in the right lane; the left lane stays open.
    for i in 0..3 {
        scripts.push(cruising_vehicle(
            j.pm(70.0 + 8.0 * i as f64, 2.0),
            -lw,
            3.0 * k.speed_scale,
            true,
        ));
    }
    scripts.push(cruising_vehicle(-25.0, lw, j.pm(17.0, 1.0) * k.speed_scale, true));
    scripts.push(cruising_vehicle(260.0, 0.0, j.pm(12.0, 1.0) * k.speed_scale, true));
    Draft {
        roads: three_lanes(-40.0, 330.0, lw, no_light),
        crosswalks: vec![],
        ego_path: straight((0.0, 0.0), 0.0, 300.0, ROUTE_SPACING),
        ego_v,
        ego_a: 0.0,
        speed_limit: 19.4,
        expert_arc: 0.9 * 19.4 * EPISODE_T * 0.95,
        scripts,
    }
}

fn near_multiple_vehicles(j: &mut Jit, k: &GenKnobs) -> Draft {
    let ego_v = j.pm(3.0, 0.4) * k.speed_scale;
    let v = 3.0 * k.speed_scale;
    let lw = k.lane_width;
    let intruder_x = j.pm(18.0, 3.0) * k.gap_scale;
    let mut scripts = vec![Script {
        kind: AgentKind::Vehicle,
        pts: vec![(intruder_x, 1.3), (intruder_x + 2.0, 1.3)],
        s0: 0.0,
        profile: Profile::Constant(0.0),
        appear_step: 0,
        optional: false,
    }];
    // Waved queues in all three lanes; the ego-lane queue sits past the
    // double-parked intruder.
    for i in 0..3 {
        scripts.push(Script {
            kind: AgentKind::Vehicle,
            pts: straight((-20.0, 0.0), 0.0, 200.0, 6.0),
            s0: 20.0 + 36.0 + 8.0 * i as f64 * k.gap_scale,
            profile: Profile::Wave {
                v,
                period: 6.0,
                duty: 0.55,
                phase: j.pm(1.1 * i as f64, 0.4),
            },
            appear_step: 0,
            optional: false,
        });
        for (lane, base) in [(lw, -2.0), (-lw, 2.0)] {
            scripts.push(Script {
                kind: AgentKind::Vehicle,
                pts: straight((-20.0, lane), 0.0, 200.0, 6.0),
                s0: 20.0 + base + 9.0 * i as f64 * k.gap_scale,
                profile: Profile::Wave {
                    v,
                    period: 6.0,
                    duty: 0.5,
                    phase: j.pm(0.7 * i as f64, 0.5),
                },
                appear_step: 0,
                optional: i > 0,
            });
        }
    }
    scripts.push(stopped_vehicle(j.pm(-9.0, 1.5), 0.0));
    Draft {
        roads: three_lanes(-40.0, 120.0, lw, no_light),
        crosswalks: vec![],
        ego_path: straight((0.0, 0.0), 0.0, 100.0, ROUTE_SPACING),
        ego_v,
        ego_a: 0.0,
        speed_limit: 8.3,
        expert_arc: 0.85 * lead_limited(31.0, v * 0.55 * EPISODE_T),
        scripts,
    }
}

fn changing_lane(j: &mut Jit, k: &GenKnobs) -> Draft {
    let ego_v = j.pm(8.0, 0.6) * k.speed_scale;
    let lw = k.lane_width;
    let x0 = j.pm(25.0, 3.0);
    let x1 = x0 + 30.0;
    let ego_path = blend_path(0.0, 160.0, x0, x1, lw, 1.0);
    // Stall hugging the curb edge of the original lane, before the merge
    // begins: it shadows the centerline corridor but a full offset toward the
    // target lane slips past on straight road, where the tracked path and the
    // corridor agree.
    let stall_x = j.pm(15.0, 2.0);
    let target_lead = Script {
        kind: AgentKind::Vehicle,
        pts: straight((-30.0, lw), 0.0, 220.0, 6.0),
        s0: 30.0 + j.pm(70.0, 5.0),
        profile: Profile::Constant(j.pm(5.5, 0.4) * k.speed_scale),
        appear_step: 0,
        optional: false,
    };
    let behind = Script {
        kind: AgentKind::Vehicle,
        pts: straight((-30.0, lw), 0.0, 220.0, 6.0),
        s0: j.pm(5.0, 2.0),
        profile: Profile::Constant(j.pm(5.5, 0.4) * k.speed_scale),
        appear_step: 0,
        optional: true,
    };
    Draft {
        roads: three_lanes(-40.0, 180.0, lw, no_light),
        crosswalks: vec![],
        ego_path,
        ego_v,
        ego_a: 0.0,
        speed_limit: 11.1,
        expert_arc: 0.9 * (40.0 + 5.5 * k.speed_scale * 10.0),
        scripts: vec![stopped_vehicle(stall_x, -1.3), target_lead, behind],
    }
}

fn traversing_pickup_dropoff(j: &mut Jit, k: &GenKnobs) -> Draft {
    let ego_v = j.pm(4.0, 0.3) * k.speed_scale;
    let lw = k.lane_width;
    let mut scripts = vec![
        stopped_vehicle(j.pm(20.0, 2.0), -1.3),
        stopped_vehicle(j.pm(38.0, 2.0), -1.35),
    ];
    // Two crossings staggered along the zone, plus a bystander at the curb.
    scripts.push(Script {
        kind: AgentKind::Pedestrian,
        pts: vec![(j.pm(30.0, 1.5), -5.5), (j.pm(30.0, 1.5), 6.0)],
        s0: 0.0,
        profile: Profile::Go {
            t0: j.pm(1.0, 0.5),
            rate: 4.0,
            v: j.pm(1.35, 0.1),
        },
        appear_step: 0,
        optional: false,
    });
    scripts.push(Script {
        kind: AgentKind::Pedestrian,
        pts: vec![(j.pm(48.0, 1.5), 5.5), (j.pm(48.0, 1.5), -6.0)],
        s0: 0.0,
        profile: Profile::Go {
            t0: j.pm(6.0, 1.0),
            rate: 4.0,
            v: j.pm(1.35, 0.1),
        },
        appear_step: 0,
        optional: false,
    });
    scripts.push(Script {
        kind: AgentKind::Pedestrian,
        pts: vec![(j.pm(55.0, 2.0), 2.6), (j.pm(55.0, 2.0) + 1.0, 2.6)],
        s0: 0.0,
        profile: Profile::Constant(0.0),
        appear_step: 0,
        optional: true,
    });
    for i in 0..3 {
        scripts.push(stopped_vehicle(j.pm(12.0 + 14.0 * i as f64, 2.0), lw));
    }
    Draft {
        roads: three_lanes(-40.0, 110.0, lw, no_light),
        crosswalks: vec![crosswalk_stripe(j.pm(30.0, 1.0), -5.5, 5.5)],
        ego_path: straight((0.0, 0.0), 0.0, 90.0, ROUTE_SPACING),
        ego_v,
        ego_a: 0.0,
        speed_limit: 6.9,
        expert_arc: 0.9 * ego_v * EPISODE_T * 0.8,
        scripts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_class_generates_valid_scenarios() {
        let knobs = GenKnobs::default();
        for class in ScenarioClass::ALL {
            for seed in 0..3 {
                let sc = generate_scenario(class, seed, &knobs)
                    .unwrap_or_else(|e| panic!("{class} seed {seed}: {e}"));
                assert_eq!(sc.label, class);
                assert_eq!(sc.seed, seed);
                assert!(sc.agents.len() <= MAX_AGENTS);
                assert_eq!(sc.ego.x, 0.0);
                assert_eq!(sc.ego.heading, 0.0);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let knobs = GenKnobs::default();
        for class in [
            ScenarioClass::FollowingLaneWithLead,
            ScenarioClass::HighMagnitudeSpeed,
            ScenarioClass::TraversingPickupDropoff,
        ] {
            let a = generate_scenario(class, 42, &knobs).unwrap();
            let b = generate_scenario(class, 42, &knobs).unwrap();
            assert_eq!(
                encode_scenarios(&[a]),
                encode_scenarios(&[b]),
                "same (class, seed) must give identical bytes"
            );
        }
    }

    #[test]
    fn different_seeds_differ() {
        let knobs = GenKnobs::default();
        let a = generate_scenario(ScenarioClass::FollowingLaneWithLead, 1, &knobs).unwrap();
        let b = generate_scenario(ScenarioClass::FollowingLaneWithLead, 2, &knobs).unwrap();
        assert_ne!(encode_scenarios(&[a]), encode_scenarios(&[b]));
    }

    #[test]
    fn fast_class_keeps_speed_floor() {
        let knobs = GenKnobs::default();
        for seed in 0..10 {
            let sc = generate_scenario(ScenarioClass::HighMagnitudeSpeed, seed, &knobs).unwrap();
            assert!(
                sc.ego.v >= 15.0,
                "seed {seed}: ego speed {} below the 15 m/s floor",
                sc.ego.v
            );
        }
        // The floor survives a slow speed scale too.
        let slow = GenKnobs {
            speed_scale: 0.5,
            ..GenKnobs::default()
        };
        let sc = generate_scenario(ScenarioClass::HighMagnitudeSpeed, 0, &slow).unwrap();
        assert!(sc.ego.v >= 15.0);
    }

    #[test]
    fn lead_class_has_lead_ahead() {
        let knobs = GenKnobs::default();
        for seed in 0..5 {
            let sc = generate_scenario(ScenarioClass::FollowingLaneWithLead, seed, &knobs).unwrap();
            let lead = sc
                .agents
                .iter()
                .filter_map(|a| a.latest())
                .find(|s| s.y.abs() < 0.5)
                .expect("an agent sits in the ego lane");
            assert!(lead.x > 5.0, "lead should start ahead of the ego");
        }
    }

    #[test]
    fn bad_knobs_are_rejected() {
        let knobs = GenKnobs {
            lane_width: 1.0,
            ..GenKnobs::default()
        };
        assert!(matches!(
            generate_scenario(ScenarioClass::StationaryInTraffic, 0, &knobs),
            Err(GenerateError::BadKnobs { .. })
        ));
    }

    #[test]
    fn density_zero_drops_optional_traffic() {
        let dense = generate_scenario(
            ScenarioClass::LowMagnitudeSpeed,
            3,
            &GenKnobs::default(),
        )
        .unwrap();
        let sparse = generate_scenario(
            ScenarioClass::LowMagnitudeSpeed,
            3,
            &GenKnobs {
                density: 0.0,
                ..GenKnobs::default()
            },
        )
        .unwrap();
        assert!(sparse.agents.len() < dense.agents.len());
        assert!(!sparse.agents.is_empty(), "the lead is not optional");
    }
}
