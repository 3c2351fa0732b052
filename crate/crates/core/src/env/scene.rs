use std::collections::{BTreeSet, HashMap, VecDeque};
use std::path::Path;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use super::{require, NodeId};
use crate::error::{invalid, Error, Result};
use crate::tokens::{fnv1a, FeatureLayout, SceneType};

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub position: [f64; 3],
    pub region: String,
    pub landmarks: Vec<String>,
    pub description: String,
    pub feature: Array1<f64>,
}

impl Node {
    /// Region followed by landmark tokens.
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.region.as_str()).chain(self.landmarks.iter().map(String::as_str))
    }
}

/// Node as stored on disk (features are recomputed on load).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: NodeId,
    pub pos: [f64; 3],
    pub region: String,
    pub landmarks: Vec<String>,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge(pub NodeId, pub NodeId, pub f64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub scene_id: String,
    pub scene_type: SceneType,
    pub nodes: Vec<NodeSpec>,
    pub edges: Vec<Edge>,
}

/// Immutable, validated scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGraph {
    pub scene_id: String,
    pub scene_type: SceneType,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    index: HashMap<NodeId, usize>,
    // neighbors sorted by node id
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl SceneGraph {
    pub fn from_file(file: SceneFile, feature_dim: usize) -> Result<Self> {
        let layout = FeatureLayout::new(feature_dim)
            .ok_or_else(|| invalid(format!("feature dim must be >= {}", FeatureLayout::MIN_DIM)))?;
        require(!file.nodes.is_empty(), "scene has no nodes")?;
        let mut index = HashMap::new();
        for (i, n) in file.nodes.iter().enumerate() {
            require(!n.id.is_empty(), "empty node id")?;
            if index.insert(n.id.clone(), i).is_some() {
                return Err(invalid(format!("duplicate node id {}", n.id)));
            }
            require(!n.description.trim().is_empty(), "node description is empty")?;
            require(n.pos.iter().all(|p| p.is_finite()), "node position is not finite")?;
        }
        let mut adjacency = vec![Vec::new(); file.nodes.len()];
        let mut seen = BTreeSet::new();
        for Edge(a, b, d) in &file.edges {
            let ia = *index.get(a).ok_or_else(|| invalid(format!("edge names unknown node {a}")))?;
            let ib = *index.get(b).ok_or_else(|| invalid(format!("edge names unknown node {b}")))?;
            require(ia != ib, "self loop")?;
            require(d.is_finite() && *d > 0.0, "edge distance must be positive")?;
            if !seen.insert((ia.min(ib), ia.max(ib))) {
                return Err(invalid(format!("duplicate edge {a}-{b}")));
            }
            adjacency[ia].push((ib, *d));
            adjacency[ib].push((ia, *d));
        }
        for adj in &mut adjacency {
            adj.sort_by(|x, y| file.nodes[x.0].id.cmp(&file.nodes[y.0].id));
        }

        let seed = fnv1a(file.scene_id.as_bytes());
        let nodes: Vec<Node> = file
            .nodes
            .into_iter()
            .map(|n| {
                let feature = node_feature(&layout, seed, &n.region, &n.landmarks);
                Node {
                    id: n.id,
                    position: n.pos,
                    region: n.region.to_ascii_lowercase(),
                    landmarks: n.landmarks.iter().map(|l| l.to_ascii_lowercase()).collect(),
                    description: n.description,
                    feature,
                }
            })
            .collect();

        let scene = Self {
            scene_id: file.scene_id,
            scene_type: file.scene_type,
            nodes,
            edges: file.edges,
            index,
            adjacency,
        };
        require(scene.is_connected(), "scene graph is not connected")?;
        Ok(scene)
    }

    pub fn to_file(&self) -> SceneFile {
        SceneFile {
            scene_id: self.scene_id.clone(),
            scene_type: self.scene_type,
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeSpec {
                    id: n.id.clone(),
                    pos: n.position,
                    region: n.region.clone(),
                    landmarks: n.landmarks.clone(),
                    description: n.description.clone(),
                })
                .collect(),
            edges: self.edges.clone(),
        }
    }

    pub fn load(path: &Path, feature_dim: usize) -> Result<Self> {
        let file: SceneFile = serde_json::from_slice(&std::fs::read(path)?)?;
        Self::from_file(file, feature_dim)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(&self.to_file())?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn feature_dim(&self) -> usize {
        self.nodes[0].feature.len()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn try_index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.try_index_of(id)
            .ok_or_else(|| Error::NotFound(format!("node {id} in scene {}", self.scene_id)))
    }

    pub fn node(&self, id: &str) -> Result<&Node> {
        Ok(&self.nodes[self.index_of(id)?])
    }

    pub fn neighbors(&self, idx: usize) -> &[(usize, f64)] {
        &self.adjacency[idx]
    }

    pub fn degree(&self, id: &str) -> Result<usize> {
        Ok(self.adjacency[self.index_of(id)?].len())
    }

    pub fn edge_length(&self, a: &str, b: &str) -> Option<f64> {
        let ia = self.try_index_of(a)?;
        let ib = self.try_index_of(b)?;
        self.adjacency[ia].iter().find(|(j, _)| *j == ib).map(|(_, d)| *d)
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.nodes.len()];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for &(j, _) in &self.adjacency[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Geodesic distance between two nodes.
    pub fn geodesic(&self, a: &str, b: &str) -> Result<f64> {
        let ia = self.index_of(a)?;
        let ib = self.index_of(b)?;
        self.dijkstra(ia, ib, |_| true)
            .map(|(_, d)| d)
            .ok_or_else(|| Error::NoPath { from: a.into(), to: b.into() })
    }

    /// Dijkstra restricted to nodes accepted by `allowed`. Equal-length paths
    /// are ordered by their id sequences.
    pub(crate) fn dijkstra(
        &self,
        src: usize,
        dst: usize,
        allowed: impl Fn(usize) -> bool,
    ) -> Option<(Vec<usize>, f64)> {
        const EPS: f64 = 1e-9;
        let n = self.nodes.len();
        let mut best: Vec<Option<(f64, Vec<usize>)>> = vec![None; n];
        let mut done = vec![false; n];
        best[src] = Some((0.0, vec![src]));
        loop {
            let mut pick: Option<usize> = None;
            for i in 0..n {
                if done[i] {
                    continue;
                }
                let Some((d, p)) = &best[i] else { continue };
                pick = match pick {
                    None => Some(i),
                    Some(j) => {
                        let (dj, pj) = best[j].as_ref().unwrap();
                        if *d < dj - EPS || ((d - dj).abs() <= EPS && self.ids_less(p, pj)) {
                            Some(i)
                        } else {
                            Some(j)
                        }
                    }
                };
            }
            let u = pick?;
            done[u] = true;
            if u == dst {
                let (d, p) = best[u].take().unwrap();
                return Some((p, d));
            }
            let (du, pu) = best[u].clone().unwrap();
            for &(v, w) in &self.adjacency[u] {
                if done[v] || !allowed(v) {
                    continue;
                }
                let nd = du + w;
                let mut np = pu.clone();
                np.push(v);
                let better = match &best[v] {
                    None => true,
                    Some((dv, pv)) => nd < dv - EPS || ((nd - dv).abs() <= EPS && self.ids_less(&np, pv)),
                };
                if better {
                    best[v] = Some((nd, np));
                }
            }
        }
    }

    fn ids_less(&self, a: &[usize], b: &[usize]) -> bool {
        let ka = a.iter().map(|&i| self.nodes[i].id.as_str());
        let kb = b.iter().map(|&i| self.nodes[i].id.as_str());
        ka.lt(kb)
    }
}

/// Deterministic stand-in for a visual embedding: one-hot slots for the
/// region and landmark words plus appearance values hashed from the same words
/// and the scene seed.
pub(crate) fn node_feature(layout: &FeatureLayout, seed: u64, region: &str, landmarks: &[String]) -> Array1<f64> {
    let mut f = Array1::zeros(layout.dim);
    let region = region.to_ascii_lowercase();
    f[layout.slot(&region)] = 1.0;
    let mut key = format!("{seed}|{region}");
    for l in landmarks {
        let l = l.to_ascii_lowercase();
        f[layout.slot(&l)] = 1.0;
        key.push('|');
        key.push_str(&l);
    }
    for i in FeatureLayout::APPEARANCE..layout.bias() {
        let h = fnv1a(format!("{key}#{i}").as_bytes());
        f[i] = 0.25 * (h % 10_000) as f64 / 10_000.0;
    }
    f
}
