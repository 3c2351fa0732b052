//! The experience library: structured experiences, hybrid similarity,
//! threshold-gated upsert, quality scoring with temporal decay, capacity
//! enforcement and retrieval.

mod library;
mod persist;
mod similarity;

pub use library::{ExperienceLibrary, LibraryConfig, Retrieved, UpsertOutcome};
pub use persist::{LibraryHeader, read_library, write_library};
pub use similarity::{cat_similarity, jaccard, key_similarity, num_similarity, similarity};

use serde::{Deserialize, Serialize};

use crate::env::{Instruction, Node};
use crate::tokens::{is_content_word, SceneType, TokenSet};

/// Logical time. The trainer advances it once per iteration.
pub type Timestamp = f64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    /// Scene type.
    #[serde(rename = "S_t")]
    pub scene_type: TokenSet,
    /// Spatial context.
    #[serde(rename = "C_s")]
    pub context: TokenSet,
    /// Spatial rules.
    #[serde(rename = "R_s")]
    pub rules: TokenSet,
    /// Navigation strategy.
    #[serde(rename = "T_n")]
    pub strategy: TokenSet,
    /// Historical success rate in `[0, 1]`.
    pub eta_s: f64,
    /// Occurrence count, at least 1.
    pub f: u32,
    pub t_last: Timestamp,
    pub raw_text: String,
}

impl Experience {
    pub fn new(
        scene_type: TokenSet,
        context: TokenSet,
        rules: TokenSet,
        strategy: TokenSet,
        eta_s: f64,
        now: Timestamp,
    ) -> Self {
        let lower = |s: TokenSet| s.into_iter().map(|t| t.to_ascii_lowercase()).collect();
        Self {
            scene_type: lower(scene_type),
            context: lower(context),
            rules: lower(rules),
            strategy: lower(strategy),
            eta_s: if eta_s.is_finite() { eta_s.clamp(0.0, 1.0) } else { 0.0 },
            f: 1,
            t_last: now,
            raw_text: String::new(),
        }
    }

    pub fn with_raw_text(mut self, text: impl Into<String>) -> Self {
        self.raw_text = text.into();
        self
    }

    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.eta_s)
            && self.f >= 1
            && self.t_last.is_finite()
            && [&self.scene_type, &self.context, &self.rules, &self.strategy]
                .iter()
                .all(|s| s.iter().all(|t| *t == t.to_ascii_lowercase()))
    }
}

/// Query features for retrieval: scene type, spatial context and strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalKey {
    pub scene_type: TokenSet,
    pub context: TokenSet,
    pub strategy: TokenSet,
}

impl RetrievalKey {
    pub fn new(scene_type: TokenSet, context: TokenSet, strategy: TokenSet) -> Option<Self> {
        let k = Self { scene_type, context, strategy };
        k.is_valid().then_some(k)
    }

    pub fn is_valid(&self) -> bool {
        !(self.scene_type.is_empty() && self.context.is_empty() && self.strategy.is_empty())
    }

    /// Key for the start of an episode: the scene type, the words describing
    /// the current viewpoint, and the place/landmark words of the instruction.
    pub fn from_start(scene_type: SceneType, here: &Node, instruction: &Instruction) -> Self {
        Self {
            scene_type: TokenSet::from([scene_type.as_str().to_string()]),
            context: here.tokens().map(str::to_string).collect(),
            strategy: instruction
                .tokens
                .iter()
                .filter(|t| is_content_word(t))
                .cloned()
                .collect(),
        }
    }
}
