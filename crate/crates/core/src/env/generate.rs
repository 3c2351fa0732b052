use std::collections::{BTreeMap, HashMap, VecDeque};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{shortest_path, Edge, Episode, Instruction, InstructionStyle, NodeSpec, SceneFile, SceneGraph};
use crate::error::{invalid, Result};
use crate::styleconv::apply_style;
use crate::tokens::{fnv1a, SceneType, COLORS, OBJECTS};

const GRID_SPACING: f64 = 5.0;
const JITTER: f64 = 0.4;
const LOOP_EDGE_PROB: f64 = 0.15;
const SAME_REGION_PROB: f64 = 0.5;

const DIRS: [(i32, i32); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];

fn node_id(i: usize, n: usize) -> String {
    if n <= 100 {
        format!("n{i:02}")
    } else {
        format!("n{i:04}")
    }
}

/// Grid-embedded random scene. Nodes sit on a 5 m lattice (with jitter) and
/// connect to lattice neighbors, so every neighbor of a node lies in a
/// distinct view direction.
pub fn generate_scene(seed: u64, scene_type: SceneType, n_nodes: usize, feature_dim: usize) -> Result<SceneGraph> {
    if n_nodes < 2 {
        return Err(invalid("a scene needs at least 2 nodes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(
        seed ^ fnv1a(scene_type.as_str().as_bytes()) ^ (n_nodes as u64).wrapping_mul(0x9e37_79b9),
    );
    let regions = scene_type.regions();

    let mut cells: Vec<(i32, i32)> = vec![(0, 0)];
    let mut occupied: HashMap<(i32, i32), usize> = HashMap::from([((0, 0), 0)]);
    let mut parent: Vec<Option<usize>> = vec![None];
    let mut tree_edges: Vec<(usize, usize)> = Vec::new();

    let mut attach = |from: usize,
                      dir: (i32, i32),
                      cells: &mut Vec<(i32, i32)>,
                      occupied: &mut HashMap<(i32, i32), usize>,
                      parent: &mut Vec<Option<usize>>| {
        let (x, y) = cells[from];
        let cell = (x + dir.0, y + dir.1);
        let idx = cells.len();
        cells.push(cell);
        occupied.insert(cell, idx);
        parent.push(Some(from));
        tree_edges.push((from, idx));
    };

    // seed a branching node so there is always a decision to get wrong
    if n_nodes >= 5 {
        let mut dirs = DIRS.to_vec();
        for _ in 0..3 {
            let k = rng.random_range(0..dirs.len());
            let d = dirs.swap_remove(k);
            attach(0, d, &mut cells, &mut occupied, &mut parent);
        }
    }
    while cells.len() < n_nodes {
        let from = rng.random_range(0..cells.len());
        let (x, y) = cells[from];
        let free: Vec<(i32, i32)> = DIRS
            .iter()
            .copied()
            .filter(|d| !occupied.contains_key(&(x + d.0, y + d.1)))
            .collect();
        if let Some(&d) = free.choose(&mut rng) {
            attach(from, d, &mut cells, &mut occupied, &mut parent);
        }
    }

    drop(attach);
    let mut edges: Vec<(usize, usize)> = tree_edges;
    let mut linked: std::collections::HashSet<(usize, usize)> =
        edges.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
    for (i, &(x, y)) in cells.iter().enumerate() {
        for d in [(1, 0), (0, 1)] {
            if let Some(&j) = occupied.get(&(x + d.0, y + d.1)) {
                let key = (i.min(j), i.max(j));
                if !linked.contains(&key) && rng.random_bool(LOOP_EDGE_PROB) {
                    linked.insert(key);
                    edges.push(key);
                }
            }
        }
    }

    let mut region_of: Vec<&str> = Vec::with_capacity(n_nodes);
    let mut nodes = Vec::with_capacity(n_nodes);
    for (i, &(x, y)) in cells.iter().enumerate() {
        let region = match parent[i] {
            Some(p) if rng.random_bool(SAME_REGION_PROB) => region_of[p],
            _ => regions[rng.random_range(0..regions.len())],
        };
        region_of.push(region);
        let color = COLORS[rng.random_range(0..COLORS.len())];
        let object = OBJECTS[rng.random_range(0..OBJECTS.len())];
        let pos = [
            f64::from(x) * GRID_SPACING + rng.random_range(-JITTER..JITTER),
            f64::from(y) * GRID_SPACING + rng.random_range(-JITTER..JITTER),
            0.0,
        ];
        nodes.push(NodeSpec {
            id: node_id(i, n_nodes),
            pos,
            region: region.to_string(),
            landmarks: vec![color.to_string(), object.to_string()],
            description: format!("a {region} with a {color} {object}"),
        });
    }

    let edges = edges
        .into_iter()
        .map(|(a, b)| {
            let (pa, pb) = (nodes[a].pos, nodes[b].pos);
            let dist = ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2) + (pa[2] - pb[2]).powi(2)).sqrt();
            // round to the centimetre so scene files are stable text
            Edge(nodes[a].id.clone(), nodes[b].id.clone(), (dist * 100.0).round() / 100.0)
        })
        .collect();

    let file = SceneFile {
        scene_id: format!("{}-s{seed}-n{n_nodes}", scene_type.as_str()),
        scene_type,
        nodes,
        edges,
    };
    SceneGraph::from_file(file, feature_dim)
}

fn hop_distances(scene: &SceneGraph, from: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; scene.len()];
    dist[from] = 0;
    let mut q = VecDeque::from([from]);
    while let Some(u) = q.pop_front() {
        for &(v, _) in scene.neighbors(u) {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                q.push_back(v);
            }
        }
    }
    dist
}

/// Basic-style instruction naming the regions passed and the goal landmark.
pub fn render_basic_instruction(scene: &SceneGraph, path: &[String]) -> Result<String> {
    if path.len() < 2 {
        return Err(invalid("instruction path needs at least two nodes"));
    }
    let first = scene.node(&path[0])?;
    let goal = scene.node(&path[path.len() - 1])?;
    let mut parts = vec![format!("walk out of the {}", first.region)];
    let mut last_region = first.region.as_str();
    for id in &path[1..path.len() - 1] {
        let n = scene.node(id)?;
        if n.region != last_region {
            parts.push(format!("go through the {}", n.region));
            last_region = &n.region;
        }
    }
    let stop = format!("stop at the {} in the {}", goal.landmarks.join(" "), goal.region);
    let mut text = parts.join(", ");
    text.push_str(" and ");
    text.push_str(&stop);
    text.push('.');
    let mut chars = text.chars();
    let first_char = chars.next().unwrap().to_ascii_uppercase();
    Ok(std::iter::once(first_char).chain(chars).collect())
}

/// Seeded start/goal pair with a rendered instruction. The goal is drawn from
/// the nodes at least three hops away (or the farthest available).
pub fn generate_episode(scene: &SceneGraph, seed: u64, style: &InstructionStyle) -> Result<Episode> {
    if scene.len() < 2 {
        return Err(invalid("episode needs a scene with at least 2 nodes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(scene.scene_id.as_bytes()).rotate_left(17));
    let start = rng.random_range(0..scene.len());
    let hops = hop_distances(scene, start);
    let far = hops.iter().copied().filter(|&h| h != usize::MAX).max().unwrap_or(0);
    let want = far.min(3).max(1);
    let pool: Vec<usize> = (0..scene.len()).filter(|&i| hops[i] != usize::MAX && hops[i] >= want).collect();
    let goal = *pool.choose(&mut rng).expect("connected scene has a node at distance >= 1");

    let start_id = scene.nodes()[start].id.clone();
    let goal_id = scene.nodes()[goal].id.clone();
    let (reference_path, _) = shortest_path(scene, &start_id, &goal_id)?;
    let basic = Instruction::new(render_basic_instruction(scene, &reference_path)?, InstructionStyle::Basic);
    let instruction = match style {
        InstructionStyle::Basic => basic,
        other => apply_style(&basic, other, seed)?,
    };
    Ok(Episode {
        episode_id: format!("{}-e{seed}", scene.scene_id),
        scene_id: scene.scene_id.clone(),
        start: start_id,
        goal: goal_id,
        instruction,
        reference_path,
    })
}

/// Region label histogram, handy for inspecting generated corpora.
pub fn region_histogram(scene: &SceneGraph) -> BTreeMap<String, usize> {
    let mut h = BTreeMap::new();
    for n in scene.nodes() {
        *h.entry(n.region.clone()).or_default() += 1;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::scene::tests::chain_scene;
    use std::collections::BTreeSet;

    #[test]
    fn minimal_scene_has_one_edge() {
        let s = generate_scene(7, SceneType::Residential, 2, 64).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.edges().len(), 1);
    }

    #[test]
    fn too_small_is_rejected() {
        assert!(generate_scene(7, SceneType::Residential, 1, 64).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_scene(7, SceneType::Residential, 12, 64).unwrap();
        let b = generate_scene(7, SceneType::Residential, 12, 64).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            serde_json::to_string(&a.to_file()).unwrap(),
            serde_json::to_string(&b.to_file()).unwrap()
        );
    }

    #[test]
    fn different_seeds_give_different_edge_sets() {
        let edge_set = |s: &SceneGraph| -> BTreeSet<(String, String)> {
            s.edges().iter().map(|e| (e.0.clone(), e.1.clone())).collect()
        };
        let a = generate_scene(7, SceneType::Mall, 12, 64).unwrap();
        let b = generate_scene(8, SceneType::Mall, 12, 64).unwrap();
        assert_ne!(edge_set(&a), edge_set(&b));
    }

    #[test]
    fn branching_node_exists_from_five_nodes() {
        for seed in 0..50 {
            for st in SceneType::ALL {
                let s = generate_scene(seed, st, 5 + (seed as usize % 10), 64).unwrap();
                let max_deg = s.nodes().iter().map(|n| s.degree(&n.id).unwrap()).max().unwrap();
                assert!(max_deg >= 3, "seed {seed} {st}");
            }
        }
    }

    #[test]
    fn neighbors_occupy_distinct_view_sectors() {
        let s = generate_scene(3, SceneType::Hotel, 30, 64).unwrap();
        for n in s.nodes() {
            let obs = crate::env::observe(&s, &n.id).unwrap();
            let sectors: BTreeSet<i64> = obs
                .candidates
                .iter()
                .map(|c| ((c.heading + std::f64::consts::PI) / (std::f64::consts::PI / 6.0)).floor() as i64)
                .collect();
            assert_eq!(sectors.len(), obs.candidates.len());
        }
    }

    #[test]
    fn chain_episode_follows_unique_path() {
        let s = chain_scene();
        let ep = (0..100)
            .map(|seed| generate_episode(&s, seed, &InstructionStyle::Basic).unwrap())
            .find(|e| e.start == "A")
            .expect("some seed starts at A");
        assert_eq!(ep.reference_path, ["A", "B", "C"]);
        assert_eq!(ep.goal, "C");
        assert!(!ep.instruction.tokens.is_empty());
        assert_eq!(
            ep.instruction.text,
            "Walk out of the atrium, go through the corridor and stop at the green plant in the foodcourt."
        );
    }

    #[test]
    fn episodes_are_deterministic_and_valid() {
        let s = generate_scene(11, SceneType::Cinema, 14, 64).unwrap();
        for style in [
            InstructionStyle::Basic,
            InstructionStyle::Scene,
            InstructionStyle::User("child".into()),
        ] {
            for seed in 0..20 {
                let a = generate_episode(&s, seed, &style).unwrap();
                let b = generate_episode(&s, seed, &style).unwrap();
                assert_eq!(a.instruction.text, b.instruction.text);
                assert_ne!(a.start, a.goal);
                assert_eq!(a.reference_path, shortest_path(&s, &a.start, &a.goal).unwrap().0);
                assert!(!a.instruction.tokens.is_empty());
            }
        }
    }

    #[test]
    fn single_node_scene_cannot_host_an_episode() {
        let file = SceneFile {
            scene_id: "one".into(),
            scene_type: SceneType::Other,
            nodes: vec![crate::env::scene::tests::spec("A", 0.0, "yard", &["red", "door"])],
            edges: vec![],
        };
        let s = SceneGraph::from_file(file, 64).unwrap();
        assert!(generate_episode(&s, 0, &InstructionStyle::Basic).is_err());
    }
}
