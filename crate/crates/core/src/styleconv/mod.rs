//! Instruction style conversion: a rule-based styler that produces Scene and
//! User instructions from Basic ones, and the prompted converter that maps
//! them back with confidence gating.

mod tables;

pub use tables::{Persona, SceneSpeaker, StyleTables};

use regex::{Captures, Regex};

use crate::env::{Instruction, InstructionStyle};
use crate::error::{invalid, Result};
use crate::reflect::{CompletionBackend, PromptTemplates};
use crate::tokens::fnv1a;

pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.7;

/// Rewrite a Basic instruction in `style`. Deterministic for a given seed and
/// exactly invertible with [`invert_style`].
pub fn apply_style(basic: &Instruction, style: &InstructionStyle, seed: u64) -> Result<Instruction> {
    apply_style_with(StyleTables::builtin(), basic, style, seed)
}

pub fn apply_style_with(
    tables: &StyleTables,
    basic: &Instruction,
    style: &InstructionStyle,
    seed: u64,
) -> Result<Instruction> {
    if basic.style != InstructionStyle::Basic {
        return Err(invalid(format!("apply_style expects a Basic instruction, got {}", basic.style)));
    }
    let (prefix, suffix, synonyms) = match style {
        InstructionStyle::Basic => return Ok(basic.clone()),
        InstructionStyle::Scene => {
            let sp = &tables.scene_speakers[(seed % tables.scene_speakers.len() as u64) as usize];
            (sp.prefix.as_str(), sp.suffix.as_str(), true)
        }
        InstructionStyle::User(name) => {
            let p = tables
                .persona(name)
                .ok_or_else(|| invalid(format!("unknown persona {name}")))?;
            (p.prefix.as_str(), p.suffix.as_str(), p.synonyms)
        }
    };
    let body = if synonyms {
        substitute_synonyms(tables, &basic.text, seed)
    } else {
        basic.text.clone()
    };
    Ok(Instruction::new(format!("{prefix}{body}{suffix}"), style.clone()))
}

fn match_case(template: &str, word: &str) -> String {
    if template.chars().next().is_some_and(|c| c.is_ascii_uppercase()) {
        let mut c = word.chars();
        match c.next() {
            Some(f) => f.to_ascii_uppercase().to_string() + c.as_str(),
            None => String::new(),
        }
    } else {
        word.to_string()
    }
}

fn substitute_synonyms(tables: &StyleTables, text: &str, seed: u64) -> String {
    let words: Vec<&str> = tables.synonyms.iter().map(|(w, _)| w.as_str()).collect();
    let re = Regex::new(&format!(r"(?i)\b({})\b", words.join("|"))).unwrap();
    let mut nth = 0u64;
    re.replace_all(text, |caps: &Captures| {
        let found = &caps[1];
        let variants = tables.variants(&found.to_ascii_lowercase()).unwrap();
        let pick = fnv1a(format!("{seed}:{nth}").as_bytes()) % variants.len() as u64;
        nth += 1;
        match_case(found, &variants[pick as usize])
    })
    .into_owned()
}

/// Undo [`apply_style`]: strip a known prefix/suffix pair and map synonym
/// variants back to their Basic words.
pub fn invert_style(tables: &StyleTables, text: &str) -> String {
    let mut body = text;
    let wrappers = tables
        .scene_speakers
        .iter()
        .map(|s| (s.prefix.as_str(), s.suffix.as_str()))
        .chain(tables.personas.iter().map(|p| (p.prefix.as_str(), p.suffix.as_str())));
    for (prefix, suffix) in wrappers {
        if prefix.is_empty() && suffix.is_empty() {
            continue;
        }
        if body.starts_with(prefix) && body.ends_with(suffix) && body.len() >= prefix.len() + suffix.len() {
            body = &body[prefix.len()..body.len() - suffix.len()];
            break;
        }
    }
    let mut variants: Vec<(&str, &str)> = tables
        .synonyms
        .iter()
        .flat_map(|(w, vs)| vs.iter().map(move |v| (v.as_str(), w.as_str())))
        .collect();
    variants.sort_by_key(|(v, _)| std::cmp::Reverse(v.len()));
    let alternation: Vec<String> = variants.iter().map(|(v, _)| regex::escape(v)).collect();
    let re = Regex::new(&format!(r"(?i)\b({})\b", alternation.join("|"))).unwrap();
    re.replace_all(body, |caps: &Captures| {
        let found = &caps[1];
        let base = variants
            .iter()
            .find(|(v, _)| v.eq_ignore_ascii_case(found))
            .map(|(_, w)| *w)
            .unwrap();
        match_case(found, base)
    })
    .into_owned()
}

/// Conversion prompt for a non-Basic instruction; `None` for Basic input
/// (nothing to convert).
pub fn build_conversion_prompt(instr: &Instruction) -> Option<String> {
    build_conversion_prompt_with(PromptTemplates::builtin(), instr)
}

pub fn build_conversion_prompt_with(templates: &PromptTemplates, instr: &Instruction) -> Option<String> {
    let (template, persona) = match &instr.style {
        InstructionStyle::Basic => return None,
        InstructionStyle::Scene => (&templates.scene_conversion, String::new()),
        InstructionStyle::User(p) => (&templates.user_conversion, p.clone()),
    };
    Some(
        template
            .replace("{{persona}}", &persona)
            .replace("{{style}}", &instr.style.to_string())
            .replace("{{instruction}}", &instr.text),
    )
}

/// Parse `CONVERTED:` and `CONFIDENCE:` lines from a backend reply.
pub fn parse_conversion(reply: &str) -> Option<(String, f64)> {
    let mut text = None;
    let mut confidence = None;
    for line in reply.lines() {
        let line = line.trim();
        if let Some(v) = line.strip_prefix("CONVERTED:") {
            text = Some(v.trim().to_string());
        } else if let Some(v) = line.strip_prefix("CONFIDENCE:") {
            confidence = v.trim().parse::<f64>().ok().filter(|c| c.is_finite());
        }
    }
    Some((text?, confidence?.clamp(0.0, 1.0)))
}

/// Convert to Basic style when the backend is confident enough; otherwise,
/// or on any failure, keep the original instruction.
pub fn convert(backend: &dyn CompletionBackend, instr: &Instruction, threshold: f64) -> Instruction {
    let Some(prompt) = build_conversion_prompt(instr) else {
        return instr.clone();
    };
    let reply = match backend.complete(&prompt) {
        Ok(r) => r,
        Err(e) => {
            log::warn!("style conversion failed, keeping original: {e}");
            return instr.clone();
        }
    };
    match parse_conversion(&reply) {
        Some((text, confidence)) if confidence > threshold => {
            let converted = Instruction::new(text, InstructionStyle::Basic);
            if converted.tokens.is_empty() {
                instr.clone()
            } else {
                converted
            }
        }
        _ => instr.clone(),
    }
}
