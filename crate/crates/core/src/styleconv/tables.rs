use std::path::Path;
use std::sync::OnceLock;

use serde::Deserialize;

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Deserialize)]
pub struct SceneSpeaker {
    pub name: String,
    pub prefix: String,
    pub suffix: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct Persona {
    pub name: String,
    pub prefix: String,
    pub suffix: String,
    pub synonyms: bool,
}

/// Persona, speaker and synonym tables (versioned JSON resource).
#[derive(Debug, Clone, Deserialize)]
pub struct StyleTables {
    pub version: u32,
    pub synonyms: Vec<(String, Vec<String>)>,
    pub scene_speakers: Vec<SceneSpeaker>,
    pub personas: Vec<Persona>,
}

const BUILTIN: &str = include_str!("../../resources/styles.json");

impl StyleTables {
    pub fn builtin() -> &'static StyleTables {
        static TABLES: OnceLock<StyleTables> = OnceLock::new();
        TABLES.get_or_init(|| Self::parse(BUILTIN).expect("builtin style tables are valid"))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let t: StyleTables = serde_json::from_str(text)?;
        if t.version != 1 {
            return Err(invalid(format!("unsupported style table version {}", t.version)));
        }
        if t.scene_speakers.is_empty() {
            return Err(invalid("style tables need at least one scene speaker"));
        }
        if t.synonyms.iter().any(|(_, v)| v.is_empty()) {
            return Err(invalid("every synonym entry needs a variant"));
        }
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn persona(&self, name: &str) -> Option<&Persona> {
        self.personas.iter().find(|p| p.name.eq_ignore_ascii_case(name))
    }

    pub fn variants(&self, word: &str) -> Option<&[String]> {
        self.synonyms.iter().find(|(w, _)| w == word).map(|(_, v)| v.as_slice())
    }
}
