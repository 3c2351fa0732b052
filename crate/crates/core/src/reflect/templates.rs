use std::path::Path;
use std::sync::OnceLock;

use crate::error::{invalid, Result};

pub const TEMPLATE_VERSION: &str = "v1";

/// Prompt wording. Lines starting with `%%` are metadata and are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplates {
    pub reflection: String,
    pub scene_conversion: String,
    pub user_conversion: String,
    pub corrective: String,
}

const FILES: [&str; 4] = ["reflection.txt", "scene_conversion.txt", "user_conversion.txt", "corrective.txt"];

fn strip_meta(raw: &str) -> Result<String> {
    let mut version = None;
    let mut body = String::new();
    for line in raw.lines() {
        if let Some(meta) = line.strip_prefix("%%") {
            if let Some(v) = meta.trim().strip_prefix("prompt-template ") {
                version = Some(v.trim().to_string());
            }
            continue;
        }
        body.push_str(line);
        body.push('\n');
    }
    match version.as_deref() {
        Some(TEMPLATE_VERSION) => Ok(body),
        other => Err(invalid(format!("unsupported prompt template version {other:?}"))),
    }
}

impl PromptTemplates {
    pub fn builtin() -> &'static PromptTemplates {
        static CELL: OnceLock<PromptTemplates> = OnceLock::new();
        CELL.get_or_init(|| {
            let t = |raw| strip_meta(raw).expect("builtin templates are valid");
            PromptTemplates {
                reflection: t(include_str!("../../resources/prompts/reflection.txt")),
                scene_conversion: t(include_str!("../../resources/prompts/scene_conversion.txt")),
                user_conversion: t(include_str!("../../resources/prompts/user_conversion.txt")),
                corrective: t(include_str!("../../resources/prompts/corrective.txt")),
            }
        })
    }

    /// Builtin templates with any of the four files present in `dir` taking
    /// their place.
    pub fn load_dir(dir: &Path) -> Result<PromptTemplates> {
        let mut t = Self::builtin().clone();
        for name in FILES {
            let path = dir.join(name);
            if !path.exists() {
                continue;
            }
            let body = strip_meta(&std::fs::read_to_string(&path)?)?;
            let slot = match name {
                "reflection.txt" => &mut t.reflection,
                "scene_conversion.txt" => &mut t.scene_conversion,
                "user_conversion.txt" => &mut t.user_conversion,
                _ => &mut t.corrective,
            };
            *slot = body;
        }
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let need = |name: &str, text: &str, keys: &[&str]| {
            for k in keys {
                if !text.contains(k) {
                    return Err(invalid(format!("{name} template lacks {k}")));
                }
            }
            Ok(())
        };
        need(
            "reflection",
            &self.reflection,
            &["## Introduction", "## Context", "{{context}}", "## Tasks", "## Output", "BEGIN_EXPERIENCE", "END_EXPERIENCE"],
        )?;
        need("scene_conversion", &self.scene_conversion, &["{{instruction}}", "CONFIDENCE:"])?;
        need("user_conversion", &self.user_conversion, &["{{instruction}}", "{{persona}}", "CONFIDENCE:"])?;
        need("corrective", &self.corrective, &["{{situation}}", "ACTION:"])
    }
}
