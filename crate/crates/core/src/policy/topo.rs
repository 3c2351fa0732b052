use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array1, Array2};

use crate::env::{Action, NodeId, Observation};
use crate::tokens::FeatureLayout;

/// Visited/frontier map built up during one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct TopoMap {
    pub current: NodeId,
    pub visited: BTreeSet<NodeId>,
    /// Observed but not yet visited.
    pub frontier: BTreeSet<NodeId>,
    pub node_feature_cache: BTreeMap<NodeId, Array1<f64>>,
    /// Neighbors of `current`, sorted by id.
    pub neighbors: Vec<NodeId>,
}

impl TopoMap {
    pub fn new(start: &str) -> Self {
        Self {
            current: start.to_string(),
            visited: BTreeSet::new(),
            frontier: BTreeSet::new(),
            node_feature_cache: BTreeMap::new(),
            neighbors: Vec::new(),
        }
    }

    /// Frontier nodes that are not adjacent to the current node, sorted.
    pub fn jump_targets(&self) -> Vec<NodeId> {
        self.frontier.iter().filter(|f| !self.neighbors.contains(f)).cloned().collect()
    }

    /// `[stop, moves to neighbors.., jumps to remote frontier nodes..]`.
    pub fn action_space(&self) -> Vec<Action> {
        let mut a = vec![Action::Stop];
        a.extend(self.neighbors.iter().cloned().map(Action::Move));
        a.extend(self.jump_targets().into_iter().map(Action::Jump));
        a
    }

    /// Cached features of the jump targets, one row each.
    pub fn jump_features(&self, dim: usize) -> Array2<f64> {
        let targets = self.jump_targets();
        let mut g = Array2::zeros((targets.len(), dim));
        for (i, t) in targets.iter().enumerate() {
            if let Some(f) = self.node_feature_cache.get(t) {
                g.row_mut(i).assign(f);
            }
        }
        g
    }

    /// View matrix with at least `views` rows: neighbor features first (in
    /// action order, visited flag set where applicable), remaining rows
    /// showing the current viewpoint.
    pub fn view_matrix(&self, obs: &Observation, views: usize) -> Array2<f64> {
        let dim = obs.view_feature.len();
        let l = views.max(obs.candidates.len()).max(1);
        let mut v = Array2::zeros((l, dim));
        let flag = FeatureLayout::new(dim).map(|f| f.visited());
        for (i, id) in self.neighbors.iter().enumerate() {
            if let Some(c) = obs.candidates.iter().find(|c| &c.id == id) {
                v.row_mut(i).assign(&c.feature);
                if let Some(k) = flag {
                    v[[i, k]] = if self.visited.contains(id) { 1.0 } else { 0.0 };
                }
            }
        }
        for i in self.neighbors.len()..l {
            v.row_mut(i).assign(&obs.view_feature);
        }
        v
    }
}

/// Mark the observed node visited, add unseen candidates to the frontier
/// and cache their features.
pub fn update_topomap(mut map: TopoMap, obs: &Observation) -> TopoMap {
    map.current = obs.current.clone();
    map.visited.insert(obs.current.clone());
    map.frontier.remove(&obs.current);
    map.node_feature_cache.entry(obs.current.clone()).or_insert_with(|| obs.view_feature.clone());
    let mut neighbors = Vec::with_capacity(obs.candidates.len());
    for c in &obs.candidates {
        neighbors.push(c.id.clone());
        map.node_feature_cache.entry(c.id.clone()).or_insert_with(|| c.feature.clone());
        if !map.visited.contains(&c.id) {
            map.frontier.insert(c.id.clone());
        }
    }
    neighbors.sort();
    map.neighbors = neighbors;
    map
}
