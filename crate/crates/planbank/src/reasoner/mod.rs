//! Behaviour selection for an episode: pick the planner parameters that fit
//! the current scene.
//!
//! The default path is deterministic — nearest tuned cluster centroid by
//! cosine distance. The optional path renders the scene as text, asks a
//! chat-completion endpoint to pick a cluster, and validates the reply; any
//! failure (transport, timeout, parse, unknown cluster) falls back to the
//! deterministic path. A [`Decision`] is always produced.

use crate::encoder::{cosine_distance, SceneEmbedding};
use crate::memory::MemoryBank;
use crate::planner::PlannerParams;
use crate::scenario::{AgentKind, Scenario};
use serde::{Deserialize, Serialize};
use std::time::Duration;

/// Hard ceiling on rendered prompt length, in characters.
pub const PROMPT_CHAR_BUDGET: usize = 8192;
/// Few-shot exemplars retrieved per decision.
pub const DEFAULT_FEW_SHOTS: usize = 3;
/// Seconds before an in-flight endpoint call is abandoned.
pub const DEFAULT_TIMEOUT_SECS: u64 = 10;

const FEW_SHOT_DESC_CHARS: usize = 200;

const SYSTEM_PROMPT: &str = "You select driving behaviour for an autonomous vehicle. \
Each numbered memory cluster holds planner parameters tuned on scenarios like the ones \
quoted below. Read the scene description, compare it with the exemplars, and choose the \
cluster whose driving style fits best. Reply with your reasoning, then a final line of \
the exact form: DECISION: cluster=<id>";

const CHAIN_OF_THOUGHT: &str = "Think step by step:\n\
1. Summarize what the ego vehicle is doing and what constrains it.\n\
2. Compare the scene against each exemplar; note which cluster ids fit.\n\
3. Decide between cautious and assertive behaviour for this scene.\n\
Finish with exactly one line: DECISION: cluster=<id>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionSource {
    PrototypeFallback,
    Llm,
}

/// The parameters an episode will run with, and where they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    /// `None` means no tuned cluster existed and the global defaults apply.
    pub cluster_id: Option<usize>,
    pub params: PlannerParams,
    pub source: DecisionSource,
    pub rationale: String,
}

/// One retrieved memory exemplar, rendered into the prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShot {
    pub cluster_id: usize,
    /// Cosine distance from the query embedding.
    pub distance: f64,
    pub description: String,
    pub params: PlannerParams,
}

/// Deterministic prompt pieces; `to_text` is the golden-testable rendering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePrompt {
    pub system_prompt: String,
    pub motion_description: String,
    pub chain_of_thought: String,
    pub few_shots: Vec<String>,
}

impl ScenePrompt {
    /// The user-role message: scene, exemplars, then the step template.
    pub fn user_text(&self) -> String {
        let mut out = self.motion_description.clone();
        if self.few_shots.is_empty() {
            out.push_str("\n\nNo memory exemplars available.");
        } else {
            out.push_str("\n\nMemory exemplars:\n");
            out.push_str(&self.few_shots.join("\n"));
        }
        out.push_str("\n\n");
        out.push_str(&self.chain_of_thought);
        out
    }

    pub fn to_text(&self) -> String {
        format!("{}\n\n{}", self.system_prompt, self.user_text())
    }
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % std::f64::consts::TAU;
    if a > std::f64::consts::PI {
        a -= std::f64::consts::TAU;
    } else if a < -std::f64::consts::PI {
        a += std::f64::consts::TAU;
    }
    a
}

/// Total |heading change| along the route, bucketed into three phrases.
fn route_curvature_class(sc: &Scenario) -> &'static str {
    let mut prev: Option<f64> = None;
    let mut turn = 0.0;
    for &slot in &sc.ego_route {
        let slot = slot as usize;
        for (i, p) in sc.map.route_lanes[slot].iter().enumerate() {
            if !sc.map.route_lanes_valid[slot][i] {
                continue;
            }
            if let Some(h) = prev {
                turn += wrap_angle(p.heading - h).abs();
            }
            prev = Some(p.heading);
        }
    }
    if turn < 0.1 {
        "straight"
    } else if turn < 0.6 {
        "gentle curve"
    } else {
        "sharp curve"
    }
}

/// Center-to-center gap to the nearest agent ahead in the ego's corridor.
fn lead_gap(sc: &Scenario) -> Option<f64> {
    let route = crate::planner::RoutePath::from_scenario(sc).ok()?;
    let (s_e, _) = route.project(sc.ego.x, sc.ego.y);
    let mut best: Option<f64> = None;
    for obs in crate::planner::observe_scenario(sc) {
        let (s_a, d_a) = route.project(obs.x, obs.y);
        let ds = s_a - s_e;
        if ds > 0.0 && d_a.abs() <= 1.75 && best.map_or(true, |b| ds < b) {
            best = Some(ds);
        }
    }
    best
}

/// Renders the scene into prompt text. Deterministic; stays within
/// [`PROMPT_CHAR_BUDGET`] by dropping the farthest agents first.
pub fn render_prompt(sc: &Scenario, z: &SceneEmbedding, few_shots: &[FewShot]) -> ScenePrompt {
    render_prompt_with_budget(sc, z, few_shots, PROMPT_CHAR_BUDGET)
}

fn render_prompt_with_budget(
    sc: &Scenario,
    z: &SceneEmbedding,
    few_shots: &[FewShot],
    budget: usize,
) -> ScenePrompt {
    let obs = crate::planner::observe_scenario(sc);
    let mut counts = (0usize, 0usize, 0usize);
    for o in &obs {
        match o.kind {
            AgentKind::Vehicle => counts.0 += 1,
            AgentKind::Pedestrian => counts.1 += 1,
            AgentKind::Cyclist => counts.2 += 1,
        }
    }

    let mut head = format!(
        "Scene ({}):\n\
         ego: speed {:.1} m/s, accel {:.1} m/s^2, speed limit {:.1} m/s\n\
         route: {}\n",
        sc.label,
        sc.ego.v,
        sc.ego.a,
        sc.speed_limit,
        route_curvature_class(sc),
    );
    match lead_gap(sc) {
        Some(g) => head.push_str(&format!("lead gap: {:.1} m\n", g)),
        None => head.push_str("lead gap: none\n"),
    }
    head.push_str(&format!(
        "agents nearby: {} vehicles, {} pedestrians, {} cyclists",
        counts.0, counts.1, counts.2
    ));

    // Per-agent lines, nearest first; ties broken by id.
    let mut ranked: Vec<(f64, String)> = obs
        .iter()
        .map(|o| {
            let dx = o.x - sc.ego.x;
            let dy = o.y - sc.ego.y;
            let range = dx.hypot(dy);
            let bearing = wrap_angle(dy.atan2(dx) - sc.ego.heading);
            let kind = match o.kind {
                AgentKind::Vehicle => "vehicle",
                AgentKind::Pedestrian => "pedestrian",
                AgentKind::Cyclist => "cyclist",
            };
            (
                range,
                format!(
                    "- {kind} {}: {:.1} m away at bearing {:+.1} rad, speed {:.1} m/s",
                    o.id,
                    range,
                    bearing,
                    o.speed()
                ),
            )
        })
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0));

    let shots: Vec<String> = few_shots
        .iter()
        .map(|s| {
            let desc: String = s.description.chars().take(FEW_SHOT_DESC_CHARS).collect();
            format!(
                "[cluster {} | distance {:.1}] {} -> lateral {:.1} m, gap {:.1} m, \
                 accel {:.1} m/s^2, brake {:.1} m/s^2, ttc {:.1} s",
                s.cluster_id,
                s.distance,
                desc,
                s.params.lateral_offset,
                s.params.min_gap,
                s.params.accel_max,
                s.params.brake_comfort,
                s.params.ttc_threshold
            )
        })
        .collect();

    // The embedding itself stays out of the text; record only its width so
    // prompts from mismatched encoders are tellable apart in logs.
    let head = format!("{head}\n(embedding width {})", z.dim());

    let mut kept = ranked.len();
    loop {
        let mut motion = head.clone();
        if ranked.is_empty() {
            motion.push_str("\nno nearby agents");
        } else {
            for (_, line) in &ranked[..kept] {
                motion.push('\n');
                motion.push_str(line);
            }
            if kept < ranked.len() {
                motion.push_str(&format!("\n({} farther agents omitted)", ranked.len() - kept));
            }
        }
        let prompt = ScenePrompt {
            system_prompt: SYSTEM_PROMPT.to_string(),
            motion_description: motion,
            chain_of_thought: CHAIN_OF_THOUGHT.to_string(),
            few_shots: shots.clone(),
        };
        if prompt.to_text().len() <= budget || kept == 0 {
            return prompt;
        }
        kept -= 1;
    }
}

/// Renders the k nearest tuned-cluster exemplars for a query embedding.
/// Entries in noise or untuned clusters carry no parameters and are skipped.
pub fn few_shots_from_bank(bank: &MemoryBank, z: &SceneEmbedding, k: usize) -> Vec<FewShot> {
    let Ok(neighbors) = bank.query_knn(z, bank.len()) else {
        return Vec::new();
    };
    let mut shots = Vec::new();
    for entry in neighbors {
        if shots.len() >= k {
            break;
        }
        let Some(cid) = entry.cluster else { continue };
        let Some(cluster) = bank.cluster(cid) else { continue };
        let Some(params) = cluster.best_params else { continue };
        let Ok(distance) = cosine_distance(z.as_slice(), entry.z.as_slice()) else {
            continue;
        };
        let description = entry
            .meta
            .get("desc")
            .cloned()
            .or_else(|| entry.label().map(|l| l.to_string()))
            .unwrap_or_else(|| "unlabeled scene".to_string());
        shots.push(FewShot {
            cluster_id: cid,
            distance,
            description,
            params,
        });
    }
    shots
}

/// Nearest tuned cluster by centroid cosine distance; ties go to the smaller
/// cluster id. Total: with nothing tuned it returns the global defaults.
pub fn decide_prototype(z: &SceneEmbedding, bank: &MemoryBank) -> Decision {
    let mut best: Option<(usize, f64, PlannerParams)> = None;
    for c in bank.tuned() {
        let params = c.best_params.expect("tuned() yields tuned clusters");
        let Ok(d) = cosine_distance(z.as_slice(), &c.centroid) else {
            continue;
        };
        // Iteration ascends by cluster id, so strict < keeps the smaller id.
        if best.as_ref().map_or(true, |(_, bd, _)| d < *bd) {
            best = Some((c.cluster_id, d, params));
        }
    }
    match best {
        Some((cid, d, params)) => Decision {
            cluster_id: Some(cid),
            params,
            source: DecisionSource::PrototypeFallback,
            rationale: format!("nearest tuned cluster {cid} at cosine distance {d:.4}"),
        },
        None => Decision {
            cluster_id: None,
            params: PlannerParams::default(),
            source: DecisionSource::PrototypeFallback,
            rationale: "warning: no tuned cluster in memory; using global defaults".to_string(),
        },
    }
}

/// Endpoint configuration; `enabled: false` (the `--no-llm` path) makes
/// [`decide_llm`] identical to [`decide_prototype`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmConfig {
    pub url: Option<String>,
    pub token: Option<String>,
    pub model: String,
    pub timeout_secs: u64,
    pub enabled: bool,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            url: None,
            token: None,
            model: "default".to_string(),
            timeout_secs: DEFAULT_TIMEOUT_SECS,
            enabled: true,
        }
    }
}

impl LlmConfig {
    /// Reads `PLANBANK_LLM_URL`, `PLANBANK_LLM_TOKEN`, `PLANBANK_LLM_MODEL`.
    pub fn from_env() -> Self {
        LlmConfig {
            url: std::env::var("PLANBANK_LLM_URL").ok().filter(|s| !s.is_empty()),
            token: std::env::var("PLANBANK_LLM_TOKEN").ok().filter(|s| !s.is_empty()),
            model: std::env::var("PLANBANK_LLM_MODEL")
                .ok()
                .filter(|s| !s.is_empty())
                .unwrap_or_else(|| "default".to_string()),
            ..LlmConfig::default()
        }
    }
}

/// Raw request/response bodies of one endpoint exchange, for `--log-prompts`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmExchange {
    pub request: String,
    /// `None` when the transport failed before a body arrived.
    pub response: Option<String>,
}

/// Accepts only a whole line of the exact form `DECISION: cluster=<int>`
/// (surrounding whitespace ignored); the last such line wins.
fn parse_decision(text: &str) -> Option<usize> {
    let mut found = None;
    for line in text.lines() {
        let Some(rest) = line.trim().strip_prefix("DECISION:") else {
            continue;
        };
        let Some(num) = rest.trim().strip_prefix("cluster=") else {
            continue;
        };
        let num = num.trim();
        if !num.is_empty() && num.chars().all(|c| c.is_ascii_digit()) {
            if let Ok(v) = num.parse::<usize>() {
                found = Some(v);
            }
        }
    }
    found
}

fn call_endpoint(
    prompt: &ScenePrompt,
    cfg: &LlmConfig,
) -> (String, Result<(String, String), String>) {
    let body = serde_json::json!({
        "model": cfg.model,
        "messages": [
            {"role": "system", "content": prompt.system_prompt},
            {"role": "user", "content": prompt.user_text()},
        ],
    })
    .to_string();
    let url = match cfg.url.as_deref() {
        Some(u) => u,
        None => return (body, Err("no endpoint url configured".to_string())),
    };
    let agent = ureq::AgentBuilder::new()
        .timeout(Duration::from_secs(cfg.timeout_secs))
        .build();
    let mut req = agent.post(url).set("content-type", "application/json");
    if let Some(tok) = &cfg.token {
        req = req.set("authorization", &format!("Bearer {tok}"));
    }
    let result = (|| {
        let resp = req
            .send_string(&body)
            .map_err(|e| format!("transport: {e}"))?;
        let raw = resp.into_string().map_err(|e| format!("read: {e}"))?;
        let v: serde_json::Value =
            serde_json::from_str(&raw).map_err(|e| format!("malformed reply json: {e}"))?;
        let content = v["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| "reply missing choices[0].message.content".to_string())?
            .to_string();
        Ok((raw, content))
    })();
    (body, result)
}

/// Asks the endpoint to pick a tuned cluster; every failure mode falls back
/// to [`decide_prototype`]. Also returns the wire exchange when one happened.
pub fn decide_llm_logged(
    prompt: &ScenePrompt,
    cfg: &LlmConfig,
    z: &SceneEmbedding,
    bank: &MemoryBank,
) -> (Decision, Option<LlmExchange>) {
    let fallback = |why: String| {
        let mut d = decide_prototype(z, bank);
        d.rationale = format!("{why}; fell back: {}", d.rationale);
        d
    };
    if !cfg.enabled {
        return (decide_prototype(z, bank), None);
    }
    if cfg.url.is_none() {
        return (fallback("endpoint disabled (no url)".to_string()), None);
    }
    let (request, result) = call_endpoint(prompt, cfg);
    match result {
        Ok((raw, content)) => {
            let exchange = Some(LlmExchange {
                request,
                response: Some(raw),
            });
            match parse_decision(&content) {
                Some(cid) => match bank.cluster(cid).and_then(|c| c.best_params) {
                    Some(params) => (
                        Decision {
                            cluster_id: Some(cid),
                            params,
                            source: DecisionSource::Llm,
                            rationale: format!("endpoint chose cluster {cid}"),
                        },
                        exchange,
                    ),
                    None => (
                        fallback(format!("endpoint chose unknown or untuned cluster {cid}")),
                        exchange,
                    ),
                },
                None => (
                    fallback("no DECISION line in endpoint reply".to_string()),
                    exchange,
                ),
            }
        }
        Err(why) => (
            fallback(format!("endpoint failed ({why})")),
            Some(LlmExchange {
                request,
                response: None,
            }),
        ),
    }
}

pub fn decide_llm(
    prompt: &ScenePrompt,
    cfg: &LlmConfig,
    z: &SceneEmbedding,
    bank: &MemoryBank,
) -> Decision {
    decide_llm_logged(prompt, cfg, z, bank).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{DbscanParams, MemoryBank};
    use crate::scenario::{generate_scenario, GenKnobs, ScenarioClass};
    use std::collections::BTreeMap;
    use std::io::{Read, Write};
    use std::net::TcpListener;
    use std::thread;

    fn unit(dim: usize, axis: usize) -> SceneEmbedding {
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        SceneEmbedding::new(v, None).unwrap()
    }

    /// Bank with two tuned single-direction clusters on axes 0 and 1.
    fn two_cluster_bank() -> (MemoryBank, PlannerParams, PlannerParams) {
        let mut bank = MemoryBank::new(DbscanParams {
            eps: 0.3,
            min_pts: 3,
        })
        .unwrap();
        for i in 0..3 {
            bank.insert(i, unit(4, 0), BTreeMap::new()).unwrap();
        }
        for i in 3..6 {
            bank.insert(i, unit(4, 1), BTreeMap::new()).unwrap();
        }
        let cautious = PlannerParams {
            accel_max: 1.0,
            ..PlannerParams::default()
        };
        let assertive = PlannerParams {
            accel_max: 2.5,
            ..PlannerParams::default()
        };
        let ids: Vec<usize> = bank.clusters().map(|c| c.cluster_id).collect();
        assert_eq!(ids.len(), 2);
        bank.set_tuned(ids[0], cautious, 80.0).unwrap();
        bank.set_tuned(ids[1], assertive, 90.0).unwrap();
        (bank, cautious, assertive)
    }

    fn sample(seed: u64) -> Scenario {
        generate_scenario(ScenarioClass::FollowingLaneWithLead, seed, &GenKnobs::default())
            .unwrap()
    }

    #[test]
    fn prompt_rendering_is_deterministic() {
        let sc = sample(4);
        let z = unit(64, 0);
        let shots = vec![FewShot {
            cluster_id: 2,
            distance: 0.125,
            description: "stopped lead vehicle".to_string(),
            params: PlannerParams::default(),
        }];
        let a = render_prompt(&sc, &z, &shots);
        let b = render_prompt(&sc, &z, &shots);
        assert_eq!(a, b);
        assert_eq!(a.to_text(), b.to_text());
        assert!(a.motion_description.contains("ego: speed"));
        assert!(a.motion_description.contains(&format!("{}", sc.label)));
        assert!(a.few_shots[0].contains("cluster 2"));
        assert!(a.to_text().contains("DECISION: cluster=<id>"));
        assert!(a.to_text().len() <= PROMPT_CHAR_BUDGET);
    }

    #[test]
    fn empty_scene_and_missing_exemplars_have_fixed_wording() {
        let mut sc = sample(4);
        sc.agents.clear();
        sc.futures.clear();
        sc.check().unwrap();
        let p = render_prompt(&sc, &unit(64, 0), &[]);
        assert!(p.motion_description.contains("no nearby agents"));
        assert!(p.motion_description.contains("lead gap: none"));
        assert!(p.user_text().contains("No memory exemplars available."));
    }

    #[test]
    fn tight_budget_drops_farthest_agents_first() {
        let sc = sample(9);
        let n_agents = crate::planner::observe_scenario(&sc).len();
        assert!(n_agents >= 2, "need a populated scene");
        let full = render_prompt(&sc, &unit(64, 0), &[]);
        let budget = full.to_text().len() - 1;
        let tight = render_prompt_with_budget(&sc, &unit(64, 0), &[], budget);
        assert!(tight.to_text().len() <= budget);
        assert!(tight.motion_description.contains("farther agents omitted"));
        // The nearest agent's line must survive; the farthest must not.
        let lines: Vec<&str> = full
            .motion_description
            .lines()
            .filter(|l| l.starts_with('-'))
            .collect();
        assert!(tight.motion_description.contains(lines[0]));
        assert!(!tight.motion_description.contains(lines[lines.len() - 1]));
    }

    #[test]
    fn oversized_exemplar_descriptions_are_clamped() {
        let sc = sample(4);
        let shots: Vec<FewShot> = (0..3)
            .map(|i| FewShot {
                cluster_id: i,
                distance: 0.1,
                description: "x".repeat(5000),
                params: PlannerParams::default(),
            })
            .collect();
        let p = render_prompt(&sc, &unit(64, 0), &shots);
        assert!(p.to_text().len() <= PROMPT_CHAR_BUDGET);
        for s in &p.few_shots {
            assert!(s.len() < 400);
        }
    }

    #[test]
    fn prototype_decision_picks_the_nearest_tuned_cluster() {
        let (bank, cautious, assertive) = two_cluster_bank();
        let d0 = decide_prototype(&unit(4, 0), &bank);
        assert_eq!(d0.params, cautious);
        assert_eq!(d0.source, DecisionSource::PrototypeFallback);
        let d1 = decide_prototype(&unit(4, 1), &bank);
        assert_eq!(d1.params, assertive);
        // Near axis 1 but not on it.
        let z = SceneEmbedding::new(vec![0.3, 0.9, 0.1, 0.0], None).unwrap();
        assert_eq!(decide_prototype(&z, &bank).params, assertive);
    }

    #[test]
    fn prototype_decision_matches_brute_force_and_breaks_ties_low() {
        let (bank, _, _) = two_cluster_bank();
        // Equidistant from both centroids: both dot products come from the
        // same arithmetic, so the distances tie bit-for-bit.
        let s = 1.0 / 2.0_f64.sqrt();
        let z = SceneEmbedding::new(vec![s, s, 0.0, 0.0], None).unwrap();
        let d = decide_prototype(&z, &bank);
        let brute = bank
            .tuned()
            .map(|c| {
                (
                    cosine_distance(z.as_slice(), &c.centroid).unwrap(),
                    c.cluster_id,
                )
            })
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .unwrap();
        assert_eq!(d.cluster_id, Some(brute.1));
        assert_eq!(d.cluster_id, Some(0));

        // Random probes agree with the exhaustive scan.
        for seed in 0..20u64 {
            let raw: Vec<f64> = (0..4)
                .map(|i| ((seed * 37 + i * 13) as f64 * 0.7).sin())
                .collect();
            let z = SceneEmbedding::new(raw, None).unwrap();
            let d = decide_prototype(&z, &bank);
            let brute = bank
                .tuned()
                .map(|c| {
                    (
                        cosine_distance(z.as_slice(), &c.centroid).unwrap(),
                        c.cluster_id,
                    )
                })
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .unwrap();
            assert_eq!(d.cluster_id, Some(brute.1), "seed {seed}");
        }
    }

    #[test]
    fn no_tuned_cluster_yields_defaults_with_a_warning() {
        let bank = MemoryBank::new(DbscanParams::default()).unwrap();
        let d = decide_prototype(&unit(4, 0), &bank);
        assert_eq!(d.cluster_id, None);
        assert_eq!(d.params, PlannerParams::default());
        assert!(d.rationale.contains("warning"));
    }

    #[test]
    fn few_shots_skip_untuned_clusters_and_respect_k() {
        let (mut bank, _, _) = two_cluster_bank();
        // A noise point far from both clusters, never tuned.
        bank.insert(
            99,
            SceneEmbedding::new(vec![0.0, 0.0, 1.0, 0.0], None).unwrap(),
            BTreeMap::new(),
        )
        .unwrap();
        let shots = few_shots_from_bank(&bank, &unit(4, 0), 3);
        assert_eq!(shots.len(), 3);
        assert!(shots.iter().all(|s| s.distance <= 2.0));
        assert!(shots[0].distance <= shots[1].distance);
        let one = few_shots_from_bank(&bank, &unit(4, 0), 1);
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].distance, 0.0);
    }

    #[test]
    fn decision_line_grammar_is_strict_and_last_wins() {
        assert_eq!(parse_decision("DECISION: cluster=7"), Some(7));
        assert_eq!(parse_decision("  DECISION: cluster=7  "), Some(7));
        assert_eq!(
            parse_decision("thinking...\nDECISION: cluster=1\nDECISION: cluster=2"),
            Some(2)
        );
        assert_eq!(parse_decision("DECISION: cluster=1 because"), None);
        assert_eq!(parse_decision("DECISION: cluster=-3"), None);
        assert_eq!(parse_decision("DECISION: cluster="), None);
        assert_eq!(parse_decision("decision: cluster=3"), None);
        assert_eq!(parse_decision("no decision here"), None);
    }

    /// One-shot HTTP server: reads a full request, optionally stalls, then
    /// sends `body` (or raw bytes when `raw` is set).
    fn mock_server(body: String, raw: bool, delay_ms: u64) -> (String, thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = Vec::new();
            let mut tmp = [0u8; 4096];
            let request = loop {
                let n = stream.read(&mut tmp).unwrap();
                buf.extend_from_slice(&tmp[..n]);
                let text = String::from_utf8_lossy(&buf);
                if let Some(split) = text.find("\r\n\r\n") {
                    let content_length = text
                        .lines()
                        .find_map(|l| l.to_ascii_lowercase().strip_prefix("content-length:")
                            .map(|v| v.trim().parse::<usize>().unwrap()))
                        .unwrap_or(0);
                    if buf.len() >= split + 4 + content_length {
                        break text.into_owned();
                    }
                }
            };
            if delay_ms > 0 {
                thread::sleep(Duration::from_millis(delay_ms));
            }
            let payload = if raw {
                body
            } else {
                serde_json::json!({
                    "choices": [{"message": {"role": "assistant", "content": body}}]
                })
                .to_string()
            };
            let response = format!(
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\n\r\n{}",
                payload.len(),
                payload
            );
            stream.write_all(response.as_bytes()).unwrap();
            request
        });
        (format!("http://{addr}/v1/chat/completions"), handle)
    }

    fn llm_cfg(url: String) -> LlmConfig {
        LlmConfig {
            url: Some(url),
            token: Some("test-token".to_string()),
            model: "mock".to_string(),
            timeout_secs: 10,
            enabled: true,
        }
    }

    #[test]
    fn endpoint_choice_of_a_tuned_cluster_is_honored() {
        let (bank, _, assertive) = two_cluster_bank();
        let z = unit(4, 0);
        let prompt = render_prompt(&sample(4), &z, &few_shots_from_bank(&bank, &z, 3));
        let (url, server) = mock_server("I pick 1.\nDECISION: cluster=1".to_string(), false, 0);
        let (d, exchange) = decide_llm_logged(&prompt, &llm_cfg(url), &z, &bank);
        let request = server.join().unwrap();
        assert_eq!(d.source, DecisionSource::Llm);
        assert_eq!(d.cluster_id, Some(1));
        assert_eq!(d.params, assertive);
        assert!(request.contains("authorization: Bearer test-token"));
        assert!(request.contains("DECISION"));
        let exchange = exchange.unwrap();
        assert!(exchange.request.contains("\"model\":\"mock\""));
        assert!(exchange.response.unwrap().contains("choices"));
    }

    #[test]
    fn parse_validation_and_transport_failures_all_fall_back() {
        let (bank, cautious, _) = two_cluster_bank();
        let z = unit(4, 0);
        let prompt = render_prompt(&sample(4), &z, &[]);
        let expect_fallback = |d: Decision, why: &str| {
            assert_eq!(d.source, DecisionSource::PrototypeFallback, "{why}: {d:?}");
            assert_eq!(d.params, cautious, "{why}");
            assert!(d.rationale.contains("fell back"), "{why}: {}", d.rationale);
        };

        let (url, server) = mock_server("it depends on the weather".to_string(), false, 0);
        expect_fallback(decide_llm(&prompt, &llm_cfg(url), &z, &bank), "no decision line");
        server.join().unwrap();

        let (url, server) = mock_server("DECISION: cluster=999".to_string(), false, 0);
        expect_fallback(decide_llm(&prompt, &llm_cfg(url), &z, &bank), "unknown cluster");
        server.join().unwrap();

        let (url, server) = mock_server("{not json at all".to_string(), true, 0);
        expect_fallback(decide_llm(&prompt, &llm_cfg(url), &z, &bank), "garbage body");
        server.join().unwrap();

        // Nothing listening on this port.
        let dead = {
            let l = TcpListener::bind("127.0.0.1:0").unwrap();
            let url = format!("http://{}/v1/chat/completions", l.local_addr().unwrap());
            drop(l);
            url
        };
        expect_fallback(decide_llm(&prompt, &llm_cfg(dead), &z, &bank), "refused");
    }

    #[test]
    fn slow_endpoint_times_out_and_falls_back() {
        let (bank, cautious, _) = two_cluster_bank();
        let z = unit(4, 0);
        let prompt = render_prompt(&sample(4), &z, &[]);
        let (url, server) = mock_server("DECISION: cluster=1".to_string(), false, 2500);
        let cfg = LlmConfig {
            timeout_secs: 1,
            ..llm_cfg(url)
        };
        let start = std::time::Instant::now();
        let d = decide_llm(&prompt, &cfg, &z, &bank);
        assert!(start.elapsed() < Duration::from_secs(2));
        assert_eq!(d.source, DecisionSource::PrototypeFallback);
        assert_eq!(d.params, cautious);
        server.join().unwrap();
    }

    #[test]
    fn disabled_endpoint_is_equivalent_to_the_prototype_path() {
        let (bank, _, _) = two_cluster_bank();
        let cfg = LlmConfig {
            enabled: false,
            url: Some("http://127.0.0.1:9/never-called".to_string()),
            ..LlmConfig::default()
        };
        for seed in 0..10u64 {
            let raw: Vec<f64> = (0..4)
                .map(|i| ((seed * 31 + i * 7) as f64 * 0.9).cos())
                .collect();
            let z = SceneEmbedding::new(raw, None).unwrap();
            let prompt = render_prompt(&sample(seed), &z, &[]);
            let (llm, exchange) = decide_llm_logged(&prompt, &cfg, &z, &bank);
            assert_eq!(llm, decide_prototype(&z, &bank));
            assert!(exchange.is_none());
        }
    }
}
