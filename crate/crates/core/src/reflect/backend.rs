use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::styleconv::{invert_style, StyleTables};
use crate::tokens::{tokenize, COLORS};

/// A text-completion service.
pub trait CompletionBackend: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String>;
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for &B {
    fn complete(&self, prompt: &str) -> Result<String> {
        (**self).complete(prompt)
    }
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for Box<B> {
    fn complete(&self, prompt: &str) -> Result<String> {
        (**self).complete(prompt)
    }
}

/// Deterministic backend that answers the crate's own prompt families from
/// the machine-readable lines they carry.
#[derive(Debug, Clone, Default)]
pub struct RuleOracle;

fn field<'a>(prompt: &'a str, key: &str) -> impl Iterator<Item = &'a str> {
    let prefix = format!("- {key}:");
    prompt.lines().filter_map(move |l| l.trim_start().strip_prefix(prefix.as_str()).map(str::trim))
}

struct RouteLine<'a> {
    id: &'a str,
    region: &'a str,
    landmarks: Vec<&'a str>,
    degree: usize,
}

fn parse_route(line: &str) -> Option<RouteLine<'_>> {
    let mut parts = line.split('|').map(str::trim);
    let id = parts.next()?;
    let region = parts.next()?;
    let landmarks = parts.next()?.split_whitespace().collect();
    let degree = parts.next()?.strip_prefix("degree")?.trim().parse().ok()?;
    Some(RouteLine { id, region, landmarks, degree })
}

impl RuleOracle {
    fn reflection(&self, prompt: &str) -> Result<String> {
        let ctx = prompt
            .split("## Context")
            .nth(1)
            .and_then(|s| s.split("## Tasks").next())
            .ok_or_else(|| Error::Backend("reflection prompt without context block".into()))?;
        let scene_type = field(ctx, "scene_type").next().unwrap_or("other");
        let success = field(ctx, "outcome").next().is_some_and(|o| o.split_whitespace().any(|kv| kv == "SR=1"));
        let route: Vec<RouteLine> = field(ctx, "route").filter_map(parse_route).collect();
        let Some(start) = route.first() else {
            return Err(Error::Backend("reflection context lacks a route".into()));
        };

        // the branch is where the agent left the route, or else the first fork
        let mut branch = None;
        if let Some(dev) = field(ctx, "deviation").next() {
            let words: Vec<&str> = dev.split_whitespace().collect();
            if let (Some(at), Some(exp)) = (word_after(&words, "at"), word_after(&words, "expected")) {
                branch = Some((at, exp));
            }
        }
        if branch.is_none() {
            branch = route
                .windows(2)
                .find(|w| w[0].degree >= 3)
                .map(|w| (w[0].id, w[1].id));
        }
        let mut rules: Vec<&str> = Vec::new();
        if let Some((at, next)) = branch {
            for r in route.iter().filter(|r| r.id == at || r.id == next) {
                rules.extend(&r.landmarks);
            }
        }

        // regions along the way, what to head for at each fork, and the goal
        let mut strategy: Vec<&str> = route[1..].iter().map(|r| r.region).collect();
        for w in route.windows(2).filter(|w| w[0].degree >= 3) {
            strategy.extend(w[1].landmarks.iter().filter(|l| !COLORS.contains(l)));
        }
        if let Some(goal) = route.last() {
            strategy.extend(&goal.landmarks);
        }
        let mut context = vec![start.region];
        context.extend(&start.landmarks);

        let eta = if success { "1.0" } else { "0.5" };
        Ok(format!(
            "The episode took place in a {scene_type} scene. The route leaves the {} and passes {} viewpoints.\n\
             BEGIN_EXPERIENCE\nS_t: {scene_type}\nC_s: {}\nR_s: {}\nT_n: {}\neta_s: {eta}\nEND_EXPERIENCE\n",
            start.region,
            route.len(),
            context.join(" "),
            rules.join(" "),
            strategy.join(" "),
        ))
    }

    fn conversion(&self, prompt: &str) -> Result<String> {
        let text = prompt
            .split("<<<\n")
            .nth(1)
            .and_then(|s| s.split("\n>>>").next())
            .ok_or_else(|| Error::Backend("conversion prompt without instruction".into()))?;
        let basic = invert_style(StyleTables::builtin(), text.trim());
        if tokenize(&basic).is_empty() {
            return Ok(format!("CONVERTED: {basic}\nCONFIDENCE: 0.0\n"));
        }
        Ok(format!("CONVERTED: {basic}\nCONFIDENCE: 1.0\n"))
    }

    fn corrective(&self, prompt: &str) -> Result<String> {
        let route: Vec<&str> = field(prompt, "route_to_goal")
            .next()
            .map(|r| r.split_whitespace().collect())
            .unwrap_or_default();
        match route.as_slice() {
            [] => Err(Error::Backend("corrective prompt without route".into())),
            [_] => Ok("ACTION: stop\n".into()),
            [_, next, ..] => Ok(format!("ACTION: {next}\n")),
        }
    }
}

fn word_after<'a>(words: &[&'a str], key: &str) -> Option<&'a str> {
    words.iter().position(|w| *w == key).and_then(|i| words.get(i + 1)).copied()
}

impl CompletionBackend for RuleOracle {
    fn complete(&self, prompt: &str) -> Result<String> {
        if prompt.contains("# Navigation Reflection") {
            self.reflection(prompt)
        } else if prompt.contains("# Scene Instruction Conversion") || prompt.contains("# User Instruction Conversion") {
            self.conversion(prompt)
        } else if prompt.contains("# Corrective Action") {
            self.corrective(prompt)
        } else {
            Err(Error::Backend("unrecognised prompt".into()))
        }
    }
}

/// Counts calls to the wrapped backend.
#[derive(Debug, Default)]
pub struct CountingBackend<B> {
    inner: B,
    calls: AtomicUsize,
}

impl<B> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self { inner, calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: CompletionBackend> CompletionBackend for CountingBackend<B> {
    fn complete(&self, prompt: &str) -> Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(prompt)
    }
}

pub const LLM_URL_ENV: &str = "DUALNAV_LLM_URL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub url: String,
    pub model: String,
    pub timeout_secs: f64,
    pub retries: u32,
    pub max_tokens: u32,
    pub max_in_flight: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            url: String::new(),
            model: "default".into(),
            timeout_secs: 30.0,
            retries: 2,
            max_tokens: 512,
            max_in_flight: 4,
        }
    }
}

impl RemoteConfig {
    /// Defaults with the endpoint taken from `DUALNAV_LLM_URL`.
    pub fn from_env() -> Result<Self> {
        let url = std::env::var(LLM_URL_ENV)
            .map_err(|_| Error::InvalidArgument(format!("{LLM_URL_ENV} is not set")))?;
        Ok(Self { url, ..Self::default() })
    }
}

struct Gate {
    busy: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

impl Gate {
    fn enter(&self) -> GateGuard<'_> {
        let mut busy = self.busy.lock().unwrap_or_else(|e| e.into_inner());
        while *busy >= self.limit {
            busy = self.freed.wait(busy).unwrap_or_else(|e| e.into_inner());
        }
        *busy += 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        let mut busy = self.0.busy.lock().unwrap_or_else(|e| e.into_inner());
        *busy -= 1;
        self.0.freed.notify_one();
    }
}

/// HTTP text-completion client: POSTs `{model, prompt, max_tokens}` and
/// reads the completion from `completion`, `text`, `response` or
/// `choices[0].text`.
pub struct RemoteLlm {
    config: RemoteConfig,
    agent: ureq::Agent,
    gate: Gate,
}

#[derive(Serialize)]
struct RequestBody<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: u32,
}

impl RemoteLlm {
    pub fn new(config: RemoteConfig) -> Result<Self> {
        if config.url.is_empty() {
            return Err(Error::InvalidArgument("remote backend needs a URL".into()));
        }
        if !(config.timeout_secs > 0.0 && config.timeout_secs.is_finite()) || config.max_in_flight == 0 {
            return Err(Error::InvalidArgument("timeout and in-flight limit must be positive".into()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let gate = Gate { busy: Mutex::new(0), freed: Condvar::new(), limit: config.max_in_flight };
        Ok(Self { config, agent, gate })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn attempt(&self, prompt: &str) -> std::result::Result<String, (bool, String)> {
        let body = RequestBody { model: &self.config.model, prompt, max_tokens: self.config.max_tokens };
        let mut resp = self
            .agent
            .post(&self.config.url)
            .send_json(&body)
            .map_err(|e| (true, e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| (true, e.to_string()))?;
        if status >= 500 || status == 429 {
            return Err((true, format!("HTTP {status}")));
        }
        if status >= 400 {
            return Err((false, format!("HTTP {status}: {text}")));
        }
        extract_completion(&text).ok_or((false, "response carries no completion text".into()))
    }
}

fn extract_completion(body: &str) -> Option<String> {
    let v: serde_json::Value = serde_json::from_str(body).ok()?;
    for key in ["completion", "text", "response"] {
        if let Some(s) = v.get(key).and_then(|s| s.as_str()) {
            return Some(s.to_string());
        }
    }
    let choice = v.get("choices")?.get(0)?;
    choice
        .get("text")
        .or_else(|| choice.get("message").and_then(|m| m.get("content")))
        .and_then(|s| s.as_str())
        .map(str::to_string)
}

impl CompletionBackend for RemoteLlm {
    fn complete(&self, prompt: &str) -> Result<String> {
        let _slot = self.gate.enter();
        let mut last = String::new();
        for attempt in 0..=self.config.retries {
            match self.attempt(prompt) {
                Ok(text) => return Ok(text),
                Err((retry, msg)) => {
                    log::debug!("completion attempt {} failed: {msg}", attempt + 1);
                    last = msg;
                    if !retry {
                        break;
                    }
                }
            }
        }
        Err(Error::Backend(last))
    }
}
