//! The navigation world: scene graphs, episodes, stepping, shortest paths and
//! trajectory metrics.

mod generate;
mod metrics;
mod scene;

pub use generate::{generate_episode, generate_scene, region_histogram, render_basic_instruction};
pub use metrics::{evaluate, write_metrics_csv, MetricsReport, SUCCESS_RADIUS};
pub use scene::{Edge, Node, NodeSpec, SceneFile, SceneGraph};
#[cfg(test)]
pub(crate) use scene::tests::{chain_scene, spec as node_spec};

use std::collections::BTreeSet;
use std::f64::consts::PI;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tokens::tokenize;

pub type NodeId = String;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstructionStyle {
    Basic,
    Scene,
    User(String),
}

impl InstructionStyle {
    /// `Basic`, `Scene` or `User:<persona>`.
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        match s.to_ascii_lowercase().as_str() {
            "basic" => Some(Self::Basic),
            "scene" => Some(Self::Scene),
            _ => {
                let (head, persona) = s.split_once(':')?;
                (head.eq_ignore_ascii_case("user") && !persona.trim().is_empty())
                    .then(|| Self::User(persona.trim().to_ascii_lowercase()))
            }
        }
    }
}

impl std::fmt::Display for InstructionStyle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Basic => f.write_str("Basic"),
            Self::Scene => f.write_str("Scene"),
            Self::User(p) => write!(f, "User:{p}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instruction {
    pub text: String,
    pub style: InstructionStyle,
    pub tokens: Vec<String>,
}

impl Instruction {
    pub fn new(text: impl Into<String>, style: InstructionStyle) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        Self { text, style, tokens }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub episode_id: String,
    pub scene_id: String,
    pub start: NodeId,
    pub goal: NodeId,
    pub instruction: Instruction,
    pub reference_path: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: NodeId,
    pub heading: f64,
    pub distance: f64,
    pub feature: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub current: NodeId,
    /// Feature of the viewpoint itself, seen in view directions with no
    /// navigable neighbor.
    pub view_feature: Array1<f64>,
    pub candidates: Vec<Candidate>,
    pub stop_allowed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Stop,
    /// Move to an adjacent node.
    Move(NodeId),
    /// Travel to a frontier node through already visited nodes.
    Jump(NodeId),
}

impl Action {
    pub fn target(&self) -> Option<&str> {
        match self {
            Action::Stop => None,
            Action::Move(n) | Action::Jump(n) => Some(n),
        }
    }
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Action::Stop => f.write_str("stop"),
            Action::Move(n) => f.write_str(n),
            Action::Jump(n) => write!(f, "jump:{n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Terminal(NodeId),
    /// `path` excludes the node moved from and ends at the new position.
    Moved { path: Vec<NodeId>, meters: f64 },
}

/// Heading from `from` to `to` in the x/y plane, in `[-π, π)`; `+x` is 0.
pub fn heading(from: [f64; 3], to: [f64; 3]) -> f64 {
    let h = (to[1] - from[1]).atan2(to[0] - from[0]);
    if h >= PI {
        h - 2.0 * PI
    } else {
        h
    }
}

pub fn observe(scene: &SceneGraph, current: &str) -> Result<Observation> {
    let idx = scene.index_of(current)?;
    let here = &scene.nodes()[idx];
    let candidates = scene
        .neighbors(idx)
        .iter()
        .map(|&(j, dist)| {
            let n = &scene.nodes()[j];
            Candidate {
                id: n.id.clone(),
                heading: heading(here.position, n.position),
                distance: dist,
                feature: n.feature.clone(),
            }
        })
        .collect();
    Ok(Observation {
        current: here.id.clone(),
        view_feature: here.feature.clone(),
        candidates,
        stop_allowed: true,
    })
}

/// Execute one action. `visited` is the agent's visited set and bounds the
/// route a jump may take.
pub fn step(
    scene: &SceneGraph,
    current: &str,
    action: &Action,
    visited: &BTreeSet<NodeId>,
) -> Result<StepOutcome> {
    let cur = scene.index_of(current)?;
    match action {
        Action::Stop => Ok(StepOutcome::Terminal(current.to_string())),
        Action::Move(target) => {
            let t = scene
                .try_index_of(target)
                .ok_or_else(|| Error::InvalidAction(format!("{target} is not in the scene")))?;
            match scene.neighbors(cur).iter().find(|(j, _)| *j == t) {
                Some(&(_, meters)) => Ok(StepOutcome::Moved {
                    path: vec![target.clone()],
                    meters,
                }),
                None => Err(Error::InvalidAction(format!(
                    "{target} is not adjacent to {current}"
                ))),
            }
        }
        Action::Jump(target) => {
            let t = scene
                .try_index_of(target)
                .ok_or_else(|| Error::InvalidAction(format!("{target} is not in the scene")))?;
            let frontier = !visited.contains(target)
                && scene
                    .neighbors(t)
                    .iter()
                    .any(|(j, _)| visited.contains(&scene.nodes()[*j].id));
            if !frontier || t == cur {
                return Err(Error::InvalidAction(format!("{target} is not a frontier node")));
            }
            let allowed = |i: usize| i == t || i == cur || visited.contains(&scene.nodes()[i].id);
            match scene.dijkstra(cur, t, allowed) {
                Some((path, meters)) => Ok(StepOutcome::Moved {
                    path: path[1..].iter().map(|&i| scene.nodes()[i].id.clone()).collect(),
                    meters,
                }),
                None => Err(Error::InvalidAction(format!(
                    "{target} is not reachable through visited nodes"
                ))),
            }
        }
    }
}

/// Minimal-distance path; ties go to the lexicographically smallest id
/// sequence.
pub fn shortest_path(scene: &SceneGraph, a: &str, b: &str) -> Result<(Vec<NodeId>, f64)> {
    let ia = scene.index_of(a)?;
    let ib = scene.index_of(b)?;
    let (path, len) = scene.dijkstra(ia, ib, |_| true).ok_or_else(|| Error::NoPath {
        from: a.to_string(),
        to: b.to_string(),
    })?;
    Ok((path.into_iter().map(|i| scene.nodes()[i].id.clone()).collect(), len))
}

pub(crate) fn require(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(invalid(msg))
    }
}
