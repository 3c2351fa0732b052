//! The interaction loop (execute, reflect, upsert, retrieve and fuse,
//! optimise), tour-based suite evaluation and the threshold-switching
//! baseline.

mod baseline;
mod eval;
mod report;
mod suite;
mod train;

pub use baseline::{run_baseline, run_baseline_threshold_switch, BaselineConfig};
pub use eval::{evaluate_suite, EvalConfig, SuiteReport, TourSummary};
pub use report::{EpisodeSummary, RunReport};
pub use suite::{Difficulty, Suite, SuiteConfig};
pub use train::{clip_grad_norm, teacher_forced, train, train_with, TeacherForced};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::Episode;
use crate::error::{invalid, Result};
use crate::explib::LibraryConfig;
use crate::policy::{
    Clock, PolicyParams, PriorConfig, RunConfig, DEFAULT_BUCKETS, DEFAULT_DIM, DEFAULT_EXP_DIM, DEFAULT_HEADS,
};
use crate::reflect::{CompletionBackend, EtaSource, RemoteConfig, RemoteLlm, RuleOracle};
use crate::styleconv::{convert, DEFAULT_CONFIDENCE_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Oracle,
    /// HTTP endpoint from `DUALNAV_LLM_URL`.
    Remote,
}

impl BackendKind {
    pub fn build(self) -> Result<Box<dyn CompletionBackend>> {
        Ok(match self {
            BackendKind::Oracle => Box::new(RuleOracle),
            BackendKind::Remote => Box::new(RemoteLlm::new(RemoteConfig::from_env()?)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InitConfig {
    Prior(PriorConfig),
    Random { seed: u64, scale: f64 },
    Zeros,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig::Prior(PriorConfig::default())
    }
}

impl InitConfig {
    pub fn build(&self) -> Result<PolicyParams> {
        let (d, e, h, b) = (DEFAULT_DIM, DEFAULT_EXP_DIM, DEFAULT_HEADS, DEFAULT_BUCKETS);
        match self {
            InitConfig::Prior(p) => PolicyParams::prior(d, e, h, b, p),
            InitConfig::Random { seed, scale } => PolicyParams::random(d, e, h, b, *seed, *scale),
            InitConfig::Zeros => PolicyParams::zeros(d, e, h, b),
        }
    }
}

/// One JSON run file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Number of training iterations (one episode each).
    pub iterations: usize,
    pub learning_rate: f64,
    /// Global gradient norm cap; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub library: LibraryConfig,
    pub run: RunConfig,
    pub suite: SuiteConfig,
    pub init: InitConfig,
    pub backend: BackendKind,
    pub eta_source: EtaSource,
    /// Library cleanup period in iterations.
    pub cleanup_every: usize,
    /// Convert styled instructions to Basic before navigating.
    pub convert_styles: bool,
    pub convert_threshold: f64,
    /// Write a checkpoint every N iterations when an output directory is given.
    pub checkpoint_every: Option<usize>,
    /// Record timestamps; `None` uses the system clock.
    pub frozen_time: Option<f64>,
    pub baseline: BaselineConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            learning_rate: 0.05,
            grad_clip: Some(5.0),
            library: LibraryConfig::default(),
            run: RunConfig::default(),
            suite: SuiteConfig::default(),
            init: InitConfig::default(),
            backend: BackendKind::default(),
            eta_source: EtaSource::default(),
            cleanup_every: 10,
            convert_styles: true,
            convert_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            checkpoint_every: None,
            frozen_time: None,
            baseline: BaselineConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(invalid("iterations must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate must be positive"));
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(invalid("grad_clip must be positive"));
        }
        if self.cleanup_every == 0 {
            return Err(invalid("cleanup_every must be at least 1"));
        }
        if self.run.max_steps == 0 {
            return Err(invalid("max_steps must be positive"));
        }
        if self.checkpoint_every == Some(0) {
            return Err(invalid("checkpoint_every must be at least 1"));
        }
        self.library.validate()?;
        self.baseline.validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        c.validate()?;
        Ok(c)
    }

    pub fn clock(&self) -> Clock {
        self.frozen_time.map_or(Clock::System, Clock::Frozen)
    }
}

/// The episode with its instruction converted to Basic when enabled.
pub(crate) fn prepare_episode(
    backend: &dyn CompletionBackend,
    episode: &Episode,
    enabled: bool,
    threshold: f64,
) -> Episode {
    let mut e = episode.clone();
    if enabled {
        e.instruction = convert(backend, &episode.instruction, threshold);
    }
    e
}
