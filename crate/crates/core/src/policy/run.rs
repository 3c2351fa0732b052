use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::record::{make_record, EpisodeLog, StepContext};
use super::{select_action, update_topomap, PolicyParams, TopoMap};
use crate::env::{evaluate, observe, step, Action, Episode, NodeId, SceneGraph, StepOutcome, SUCCESS_RADIUS};
use crate::error::{invalid, Result};
use crate::explib::{Experience, ExperienceLibrary, RetrievalKey, Timestamp};
use crate::fusion::{Graph, MacTally, StepInput};

/// Source of record timestamps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Clock {
    /// Always returns the given value.
    Frozen(f64),
    /// Seconds since the Unix epoch.
    System,
}

impl Clock {
    pub fn now(&self) -> f64 {
        match self {
            Clock::Frozen(t) => *t,
            Clock::System => SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub max_steps: usize,
    /// View rows per observation.
    pub views: usize,
    /// Key slots the attention always computes over.
    pub attention_slots: usize,
    pub success_radius: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { max_steps: 15, views: 12, attention_slots: 5, success_radius: SUCCESS_RADIUS }
    }
}

/// Read access to a library at a given logical time.
#[derive(Debug, Clone, Copy)]
pub struct LibraryRef<'a> {
    pub library: &'a ExperienceLibrary,
    pub now: Timestamp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRun {
    pub trajectory: Vec<NodeId>,
    pub log: EpisodeLog,
    pub macs: MacTally,
    pub retrieved: Vec<Experience>,
    /// Slow-reasoning calls made inside each step.
    pub slow_calls: Vec<usize>,
}

impl EpisodeRun {
    pub fn steps(&self) -> usize {
        self.log.records.len()
    }
}

/// What an in-loop hook sees before an action is executed.
pub struct InterventionContext<'a> {
    pub scene: &'a SceneGraph,
    pub episode: &'a Episode,
    pub map: &'a TopoMap,
    pub trajectory: &'a [NodeId],
    pub j_seq: usize,
    pub proposed: &'a Action,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Intervention {
    pub slow_calls: usize,
    /// Replacement action; ignored unless it is in the action space.
    pub action: Option<Action>,
}

/// Observe, optionally fuse retrieved experience, score, select, step and
/// log until the agent stops or `max_steps` decisions were made.
pub fn run_episode(
    params: &PolicyParams,
    scene: &SceneGraph,
    episode: &Episode,
    library: Option<LibraryRef<'_>>,
    config: &RunConfig,
    clock: Clock,
) -> Result<EpisodeRun> {
    run_episode_with(params, scene, episode, library, config, clock, &mut |_| Ok(Intervention::default()))
}

pub fn run_episode_with(
    params: &PolicyParams,
    scene: &SceneGraph,
    episode: &Episode,
    library: Option<LibraryRef<'_>>,
    config: &RunConfig,
    clock: Clock,
    hook: &mut dyn FnMut(&InterventionContext<'_>) -> Result<Intervention>,
) -> Result<EpisodeRun> {
    if config.max_steps == 0 {
        return Err(invalid("max_steps must be positive"));
    }
    if scene.feature_dim() != params.dim() {
        return Err(invalid(format!(
            "scene features have width {} but the policy expects {}",
            scene.feature_dim(),
            params.dim()
        )));
    }
    let start = scene.node(&episode.start)?;
    let retrieved: Vec<Experience> = match library {
        Some(l) => {
            let key = RetrievalKey::from_start(scene.scene_type, start, &episode.instruction);
            l.library.retrieve(&key, l.now).into_iter().map(|r| r.experience).collect()
        }
        None => Vec::new(),
    };
    let mut graph = Graph::new(params, &episode.instruction.tokens, &retrieved, config.attention_slots, false)?;

    let mut map = TopoMap::new(&episode.start);
    let mut trajectory = vec![episode.start.clone()];
    let mut records = Vec::new();
    let mut slow_calls = Vec::new();
    let mut current = episode.start.clone();
    for j in 0..config.max_steps {
        let obs = observe(scene, &current)?;
        map = update_topomap(map, &obs);
        let input = StepInput {
            views: map.view_matrix(&obs, config.views),
            n_local: map.neighbors.len(),
            globals: map.jump_features(params.dim()),
        };
        let scores = graph.step(input)?;
        let actions = map.action_space();
        let mut action = actions[select_action(&scores)?].clone();
        let iv = hook(&InterventionContext {
            scene,
            episode,
            map: &map,
            trajectory: &trajectory,
            j_seq: j,
            proposed: &action,
        })?;
        slow_calls.push(iv.slow_calls);
        if let Some(a) = iv.action.filter(|a| actions.contains(a)) {
            action = a;
        }

        let before = scene.geodesic(&current, &episode.goal)?;
        let outcome = step(scene, &current, &action, &map.visited)?;
        let reward = match &outcome {
            StepOutcome::Terminal(_) => 0.0,
            StepOutcome::Moved { path, .. } => before - scene.geodesic(path.last().expect("non-empty path"), &episode.goal)?,
        };
        records.push(make_record(&StepContext {
            t_j: clock.now(),
            j_seq: j,
            scene,
            episode,
            obs: &obs,
            action: &action,
            scores: &scores,
            reward,
        })?);
        match outcome {
            StepOutcome::Terminal(_) => break,
            StepOutcome::Moved { path, .. } => {
                current = path.last().expect("non-empty path").clone();
                trajectory.extend(path);
            }
        }
    }

    let outcome = evaluate(episode, &trajectory, scene, config.success_radius)?;
    let macs = graph.macs.clone();
    Ok(EpisodeRun {
        trajectory: trajectory.clone(),
        log: EpisodeLog { episode: episode.clone(), trajectory, records, outcome },
        macs,
        retrieved,
        slow_calls,
    })
}
