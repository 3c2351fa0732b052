use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{generate_episode, generate_scene, Episode, InstructionStyle, SceneGraph};
use crate::error::{invalid, Error, Result};
use crate::policy::DEFAULT_DIM;
use crate::tokens::SceneType;

/// Recipe for a generated set of scenes and episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub seed: u64,
    pub scenes: usize,
    pub nodes: usize,
    /// Cycled over when generating scenes.
    pub scene_types: Vec<SceneType>,
    pub episodes_per_scene: usize,
    pub style: InstructionStyle,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scenes: 20,
            nodes: 12,
            scene_types: SceneType::ALL.into_iter().filter(|t| t.is_ood()).collect(),
            episodes_per_scene: 1,
            style: InstructionStyle::Basic,
        }
    }
}

/// Episode length class by reference hops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    pub fn of(episode: &Episode) -> Self {
        match episode.reference_path.len().saturating_sub(1) {
            0..=3 => Difficulty::Easy,
            4..=5 => Difficulty::Medium,
            _ => Difficulty::Hard,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        }
    }
}

/// Scenes plus the episodes to run in them, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct Suite {
    pub scenes: Vec<SceneGraph>,
    pub episodes: Vec<Episode>,
}

impl Suite {
    pub fn new(scenes: Vec<SceneGraph>, episodes: Vec<Episode>) -> Result<Self> {
        let s = Self { scenes, episodes };
        for e in &s.episodes {
            let scene = s.scene(&e.scene_id)?;
            scene.node(&e.start)?;
            scene.node(&e.goal)?;
        }
        let ids: BTreeSet<&str> = s.scenes.iter().map(|sc| sc.scene_id.as_str()).collect();
        if ids.len() != s.scenes.len() {
            return Err(invalid("duplicate scene ids in suite"));
        }
        Ok(s)
    }

    /// Episodes within a scene get distinct start nodes where the scene
    /// allows it.
    pub fn generate(cfg: &SuiteConfig) -> Result<Self> {
        if cfg.scenes == 0 || cfg.episodes_per_scene == 0 || cfg.scene_types.is_empty() {
            return Err(invalid("suite needs at least one scene type, scene and episode"));
        }
        let mut scenes = Vec::with_capacity(cfg.scenes);
        let mut episodes = Vec::new();
        for i in 0..cfg.scenes {
            let st = cfg.scene_types[i % cfg.scene_types.len()];
            let scene_seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
            let scene = generate_scene(scene_seed, st, cfg.nodes, DEFAULT_DIM)?;
            let mut starts = BTreeSet::new();
            let mut k = 0u64;
            let mut made = 0;
            while made < cfg.episodes_per_scene {
                let e = generate_episode(&scene, scene_seed.wrapping_mul(31).wrapping_add(k), &cfg.style)?;
                k += 1;
                if starts.insert(e.start.clone()) || k > 64 {
                    episodes.push(e);
                    made += 1;
                }
            }
            scenes.push(scene);
        }
        Self::new(scenes, episodes)
    }

    /// Every `*.json` scene file in `dir`, sorted by name.
    pub fn load_scenes(dir: &Path) -> Result<Vec<SceneGraph>> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        paths.iter().map(|p| SceneGraph::load(p, DEFAULT_DIM)).collect()
    }

    pub fn scene(&self, id: &str) -> Result<&SceneGraph> {
        self.scenes
            .iter()
            .find(|s| s.scene_id == id)
            .ok_or_else(|| Error::NotFound(format!("scene {id}")))
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }
}
