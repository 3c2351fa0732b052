//! Fast reasoning: instruction encoding, dual-scale action scoring over the
//! topological map, action selection, and per-step history records.

mod params;
mod record;
mod run;
mod topo;

pub use params::{
    Checkpoint, NamedTensor, PolicyParams, PriorConfig, CHECKPOINT_FORMAT, CHECKPOINT_VERSION, DEFAULT_BUCKETS,
    DEFAULT_DIM, DEFAULT_EXP_DIM, DEFAULT_HEADS,
};
pub(crate) use params::mean_rows;
pub use record::{make_record, trajectory_effectiveness, EpisodeLog, HistoryRecord, LocalEdge, StepContext, StepUtility};
pub use run::{
    run_episode, run_episode_with, Clock, EpisodeRun, Intervention, InterventionContext, LibraryRef, RunConfig,
};
pub use topo::{update_topomap, TopoMap};

use ndarray::{Array1, Array2};

use crate::env::Instruction;
use crate::error::{invalid, Error, Result};
use crate::tokens::token_bucket;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(scores: &Array1<f64>) -> Array1<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = scores.mapv(|s| (s - max).exp());
    let z = e.sum();
    e / z
}

/// `instr_proj * mean(token_embed[t] for t in tokens)`.
pub fn encode_instruction(params: &PolicyParams, instr: &Instruction) -> Result<Array1<f64>> {
    if instr.tokens.is_empty() {
        return Err(invalid("instruction has no tokens"));
    }
    let ids: Vec<usize> = instr.tokens.iter().map(|t| token_bucket(t, params.buckets())).collect();
    Ok(params.instr_proj.dot(&mean_rows(&params.token_embed, &ids)))
}

/// Scores over [`TopoMap::action_space`]. Rows `0..neighbors.len()` of
/// `fused_visual` are the neighbors' views.
pub fn score_actions(
    params: &PolicyParams,
    fused_visual: &Array2<f64>,
    instr_vec: &Array1<f64>,
    map: &TopoMap,
) -> Result<Array1<f64>> {
    let dim = params.dim();
    if fused_visual.ncols() != dim || instr_vec.len() != dim {
        return Err(invalid(format!("expected width {dim}")));
    }
    if fused_visual.nrows() < map.neighbors.len().max(1) {
        return Err(invalid("fewer view rows than local actions"));
    }
    let w = params.cand_proj.t().dot(instr_vec);
    let globals = map.jump_features(dim);
    Ok(crate::fusion::graph_score_rows(params, fused_visual, instr_vec, &w, &globals, map.neighbors.len()).0)
}

/// Index of the largest score; the lowest index wins ties.
pub fn select_action(scores: &Array1<f64>) -> Result<usize> {
    if scores.is_empty() {
        return Err(invalid("no actions to choose from"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("non-finite score".into()));
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(best)
}
