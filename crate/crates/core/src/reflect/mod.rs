//! Slow reasoning: turn an episode log into a reflection prompt, call a
//! completion backend and parse the structured experience it returns.

mod backend;
mod templates;

pub use backend::{CompletionBackend, CountingBackend, RemoteConfig, RemoteLlm, RuleOracle, LLM_URL_ENV};
pub use templates::{PromptTemplates, TEMPLATE_VERSION};

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::env::{Action, MetricsReport, NodeId, SceneGraph};
use crate::error::{invalid, Result};
use crate::explib::{Experience, Timestamp};
use crate::policy::EpisodeLog;
use crate::tokens::{token_set, SceneType, TokenSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDigest {
    pub j_seq: usize,
    pub node: NodeId,
    pub action: Action,
    pub description: String,
    pub stop_prob: f64,
    pub effectiveness: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FailureMarkers {
    /// Nodes visited at least twice, sorted.
    pub loops: Vec<NodeId>,
    /// Immediate returns (`a b a`).
    pub backtracks: usize,
    /// Stopped voluntarily away from the goal.
    pub wrong_stop: bool,
}

impl FailureMarkers {
    pub fn any(&self) -> bool {
        !self.loops.is_empty() || self.backtracks > 0 || self.wrong_stop
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteNode {
    pub id: NodeId,
    pub region: String,
    pub landmarks: Vec<String>,
    pub degree: usize,
}

/// First place the trajectory leaves the reference route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub at: NodeId,
    /// Node moved to, or `stop`.
    pub taken: String,
    /// Reference next node, or `stop` past the goal.
    pub expected: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionContext {
    pub scene_id: String,
    pub scene_type: SceneType,
    pub instruction: String,
    pub outcome: MetricsReport,
    pub steps: Vec<StepDigest>,
    pub markers: FailureMarkers,
    pub trajectory: Vec<NodeId>,
    /// Hindsight reference route with what each viewpoint looks like.
    pub route: Vec<RouteNode>,
    pub deviation: Option<Deviation>,
}

pub fn build_context(log: &EpisodeLog, scene: &SceneGraph) -> Result<ReflectionContext> {
    if log.records.is_empty() || log.trajectory.is_empty() {
        return Err(invalid("cannot reflect on an empty episode log"));
    }
    let steps = log
        .records
        .iter()
        .map(|r| StepDigest {
            j_seq: r.j_seq,
            node: r.v_j.clone(),
            action: r.a_j_s.clone(),
            description: r.f_v_j.clone(),
            stop_prob: r.u_step.stop_prob,
            effectiveness: r.u_step.trajectory_effectiveness,
        })
        .collect();

    let traj = &log.trajectory;
    let mut visits: BTreeMap<&str, usize> = BTreeMap::new();
    for n in traj {
        *visits.entry(n.as_str()).or_default() += 1;
    }
    let loops = visits.iter().filter(|(_, c)| **c >= 2).map(|(n, _)| n.to_string()).collect();
    let backtracks = traj.windows(3).filter(|w| w[0] == w[2]).count();
    let stopped = matches!(log.records.last().map(|r| &r.a_j_s), Some(Action::Stop));
    let markers = FailureMarkers { loops, backtracks, wrong_stop: stopped && log.outcome.sr == 0.0 };

    let reference = &log.episode.reference_path;
    let route = reference
        .iter()
        .map(|id| {
            let n = scene.node(id)?;
            Ok(RouteNode {
                id: id.clone(),
                region: n.region.clone(),
                landmarks: n.landmarks.clone(),
                degree: scene.degree(id)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let deviation = (1..reference.len().max(traj.len()) + 1).find_map(|i| {
        let expected = reference.get(i).map_or("stop", String::as_str);
        let taken = traj.get(i).map_or("stop", String::as_str);
        (expected != taken).then(|| Deviation {
            at: traj[i - 1].clone(),
            taken: taken.to_string(),
            expected: expected.to_string(),
        })
    });

    Ok(ReflectionContext {
        scene_id: scene.scene_id.clone(),
        scene_type: scene.scene_type,
        instruction: log.episode.instruction.text.clone(),
        outcome: log.outcome,
        steps,
        markers,
        trajectory: traj.clone(),
        route,
        deviation,
    })
}

fn render_context(ctx: &ReflectionContext) -> String {
    let mut s = String::new();
    let o = &ctx.outcome;
    let _ = writeln!(s, "- scene_id: {}", ctx.scene_id);
    let _ = writeln!(s, "- scene_type: {}", ctx.scene_type);
    let _ = writeln!(s, "- instruction: {}", ctx.instruction);
    let _ = writeln!(
        s,
        "- outcome: TL={:.2} NE={:.2} SR={} SPL={:.3} nDTW={:.3}",
        o.tl, o.ne, o.sr, o.spl, o.ndtw
    );
    let loops = if ctx.markers.loops.is_empty() { "none".to_string() } else { ctx.markers.loops.join(",") };
    let _ = writeln!(
        s,
        "- markers: loops={loops} backtracks={} wrong_stop={}",
        ctx.markers.backtracks, ctx.markers.wrong_stop
    );
    for st in &ctx.steps {
        let _ = writeln!(
            s,
            "- step: {} at {} chose {} stop_prob={:.3} effectiveness={:.3} view=\"{}\"",
            st.j_seq, st.node, st.action, st.stop_prob, st.effectiveness, st.description
        );
    }
    let _ = writeln!(s, "- trajectory: {}", ctx.trajectory.join(" "));
    for r in &ctx.route {
        let _ = writeln!(s, "- route: {} | {} | {} | degree {}", r.id, r.region, r.landmarks.join(" "), r.degree);
    }
    if let Some(d) = &ctx.deviation {
        let _ = writeln!(s, "- deviation: at {} took {} expected {}", d.at, d.taken, d.expected);
    }
    s
}

/// Intro, context, tasks and output blocks, in that order.
pub fn build_prompt(ctx: &ReflectionContext) -> String {
    build_prompt_with(PromptTemplates::builtin(), ctx)
}

pub fn build_prompt_with(templates: &PromptTemplates, ctx: &ReflectionContext) -> String {
    templates.reflection.replace("{{context}}", render_context(ctx).trim_end())
}

/// Parse the last complete `BEGIN_EXPERIENCE`/`END_EXPERIENCE` block.
pub fn try_parse_experience(text: &str, now: Timestamp) -> Option<Experience> {
    let lines: Vec<&str> = text.lines().map(str::trim).collect();
    let begin = lines.iter().rposition(|l| *l == "BEGIN_EXPERIENCE")?;
    let end = begin + lines[begin..].iter().position(|l| *l == "END_EXPERIENCE")?;
    let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
    for line in &lines[begin + 1..end] {
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once(':')?;
        let k = k.trim();
        if !matches!(k, "S_t" | "C_s" | "R_s" | "T_n" | "eta_s") || fields.insert(k, v.trim()).is_some() {
            return None;
        }
    }
    let eta: f64 = fields.get("eta_s")?.parse().ok().filter(|v: &f64| v.is_finite())?;
    let scene_type = token_set(fields.get("S_t")?);
    if scene_type.is_empty() {
        return None;
    }
    Some(
        Experience::new(
            scene_type,
            token_set(fields.get("C_s")?),
            token_set(fields.get("R_s")?),
            token_set(fields.get("T_n")?),
            eta.clamp(0.0, 1.0),
            now,
        )
        .with_raw_text(text),
    )
}

/// Fallback when a reply cannot be parsed: scene type only, with the
/// episode's measured success.
pub fn default_experience(ctx: &ReflectionContext, now: Timestamp) -> Experience {
    Experience::new(
        TokenSet::from([ctx.scene_type.as_str().to_string()]),
        TokenSet::new(),
        TokenSet::new(),
        TokenSet::new(),
        ctx.outcome.sr,
        now,
    )
}

pub fn parse_experience(text: &str, ctx: &ReflectionContext, now: Timestamp) -> Experience {
    try_parse_experience(text, now).unwrap_or_else(|| default_experience(ctx, now).with_raw_text(text))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaSource {
    /// Use the value the backend wrote.
    #[default]
    Backend,
    /// Replace it with the episode's SR.
    Outcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reflection {
    pub experience: Experience,
    pub used_default: bool,
}

/// One reflection call. Never fails on backend or parse problems; those
/// yield the default experience and a warning.
pub fn reflect(backend: &dyn CompletionBackend, log: &EpisodeLog, scene: &SceneGraph, now: Timestamp) -> Result<Experience> {
    reflect_with(backend, PromptTemplates::builtin(), EtaSource::Backend, log, scene, now).map(|r| r.experience)
}

pub fn reflect_with(
    backend: &dyn CompletionBackend,
    templates: &PromptTemplates,
    eta_source: EtaSource,
    log: &EpisodeLog,
    scene: &SceneGraph,
    now: Timestamp,
) -> Result<Reflection> {
    let ctx = build_context(log, scene)?;
    let prompt = build_prompt_with(templates, &ctx);
    let (mut experience, used_default) = match backend.complete(&prompt) {
        Ok(reply) => match try_parse_experience(&reply, now) {
            Some(e) => (e, false),
            None => {
                log::warn!("unparseable reflection for {}, using default experience", log.episode.episode_id);
                (default_experience(&ctx, now).with_raw_text(reply), true)
            }
        },
        Err(e) => {
            log::warn!("reflection backend failed for {}: {e}; using default experience", log.episode.episode_id);
            (default_experience(&ctx, now), true)
        }
    };
    if eta_source == EtaSource::Outcome {
        experience.eta_s = ctx.outcome.sr;
    }
    Ok(Reflection { experience, used_default })
}
