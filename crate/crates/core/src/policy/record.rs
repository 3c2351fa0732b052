use std::io::{BufRead, Write};

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use super::softmax;
use crate::env::{Action, Episode, MetricsReport, NodeId, Observation, SceneGraph};
use crate::error::{invalid, Result};

/// Neighbor id, azimuth in radians, distance in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalEdge(pub NodeId, pub f64, pub f64);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepUtility {
    pub stop_prob: f64,
    pub trajectory_effectiveness: f64,
    /// Meters gained toward the goal by this step's action. Logged only.
    pub reward: f64,
}

/// One decision step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub t_j: f64,
    pub j_seq: usize,
    #[serde(rename = "V_j")]
    pub v_j: NodeId,
    #[serde(rename = "T_local")]
    pub t_local: Vec<LocalEdge>,
    #[serde(rename = "I")]
    pub instruction: String,
    #[serde(rename = "A_j_s")]
    pub a_j_s: Action,
    #[serde(rename = "F_v_j")]
    pub f_v_j: String,
    #[serde(rename = "U_step")]
    pub u_step: StepUtility,
}

/// Everything needed to write one record.
pub struct StepContext<'a> {
    pub t_j: f64,
    pub j_seq: usize,
    pub scene: &'a SceneGraph,
    pub episode: &'a Episode,
    pub obs: &'a Observation,
    pub action: &'a Action,
    pub scores: &'a Array1<f64>,
    pub reward: f64,
}

/// `1 - d(node, goal) / d(start, goal)`, clamped to `[0, 1]`.
pub fn trajectory_effectiveness(scene: &SceneGraph, episode: &Episode, node: &str) -> Result<f64> {
    let total = scene.geodesic(&episode.start, &episode.goal)?;
    if total <= 0.0 {
        return Ok(1.0);
    }
    Ok((1.0 - scene.geodesic(node, &episode.goal)? / total).clamp(0.0, 1.0))
}

pub fn make_record(ctx: &StepContext<'_>) -> Result<HistoryRecord> {
    let node = ctx.scene.node(&ctx.obs.current)?;
    let stop_prob = if ctx.scores.is_empty() { 0.0 } else { softmax(ctx.scores)[0] };
    Ok(HistoryRecord {
        t_j: ctx.t_j,
        j_seq: ctx.j_seq,
        v_j: ctx.obs.current.clone(),
        t_local: ctx.obs.candidates.iter().map(|c| LocalEdge(c.id.clone(), c.heading, c.distance)).collect(),
        instruction: ctx.episode.instruction.text.clone(),
        a_j_s: ctx.action.clone(),
        f_v_j: node.description.clone(),
        u_step: StepUtility {
            stop_prob,
            trajectory_effectiveness: trajectory_effectiveness(ctx.scene, ctx.episode, &ctx.obs.current)?,
            reward: ctx.reward,
        },
    })
}

/// The history of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: Episode,
    /// Every node passed through, jumps expanded.
    pub trajectory: Vec<NodeId>,
    pub records: Vec<HistoryRecord>,
    pub outcome: MetricsReport,
}

#[derive(Serialize, Deserialize)]
struct LogHeader {
    episode_id: String,
    outcome: MetricsReport,
    episode: Episode,
    trajectory: Vec<NodeId>,
}

impl EpisodeLog {
    pub fn episode_id(&self) -> &str {
        &self.episode.episode_id
    }

    /// Header line, then one record per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let header = LogHeader {
            episode_id: self.episode.episode_id.clone(),
            outcome: self.outcome,
            episode: self.episode.clone(),
            trajectory: self.trajectory.clone(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header: LogHeader = match lines.next() {
            Some(l) => serde_json::from_str(&l?)?,
            None => return Err(invalid("episode log is empty")),
        };
        let mut records = Vec::new();
        for l in lines {
            let l = l?;
            if !l.trim().is_empty() {
                records.push(serde_json::from_str(&l)?);
            }
        }
        Ok(Self { episode: header.episode, trajectory: header.trajectory, records, outcome: header.outcome })
    }

    /// Same log with every timestamp set to zero.
    pub fn without_timestamps(&self) -> Self {
        let mut l = self.clone();
        for r in &mut l.records {
            r.t_j = 0.0;
        }
        l
    }
}
