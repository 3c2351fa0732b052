use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Difficulty;
use crate::env::MetricsReport;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub iteration: usize,
    pub tour: usize,
    pub episode_id: String,
    pub scene_id: String,
    pub difficulty: Difficulty,
    pub metrics: MetricsReport,
    pub steps: usize,
    /// Slow-reasoning calls: one reflection after the episode in ours-mode,
    /// in-loop corrective calls in the baseline.
    pub slow_calls: usize,
    pub used_default_experience: bool,
    pub retrieved: usize,
    pub episode_macs: u64,
    /// Mean multiply-accumulates per decision step, slow calls included.
    pub step_macs: f64,
    pub library_size: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: String,
    /// Teacher-forced loss per iteration; empty outside training.
    pub losses: Vec<f64>,
    pub episodes: Vec<EpisodeSummary>,
    pub slow_invocations: usize,
    pub wall_time_secs: f64,
}

impl RunReport {
    pub fn new(mode: &str) -> Self {
        Self { mode: mode.into(), ..Self::default() }
    }

    pub fn aggregate(&self) -> Option<MetricsReport> {
        MetricsReport::mean(&self.episodes.iter().map(|e| e.metrics).collect::<Vec<_>>())
    }

    pub fn mean_steps(&self) -> f64 {
        mean(self.episodes.iter().map(|e| e.steps as f64))
    }

    pub fn mean_step_macs(&self) -> f64 {
        mean(self.episodes.iter().map(|e| e.step_macs))
    }

    pub fn mean_slow_calls(&self) -> f64 {
        mean(self.episodes.iter().map(|e| e.slow_calls as f64))
    }

    /// Mean loss over `range` of iterations, clamped to what was recorded.
    pub fn mean_loss(&self, range: std::ops::Range<usize>) -> f64 {
        let hi = range.end.min(self.losses.len());
        let lo = range.start.min(hi);
        mean(self.losses[lo..hi].iter().copied())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "iteration,tour,episode_id,scene_id,difficulty,loss,TL,NE,SR,SPL,nDTW,steps,slow_calls,retrieved,episode_macs,step_macs,library_size"
        )?;
        for e in &self.episodes {
            let loss = self.losses.get(e.iteration).map_or(String::new(), |l| format!("{l:.6}"));
            let m = &e.metrics;
            writeln!(
                w,
                "{},{},{},{},{},{},{:.4},{:.4},{},{:.4},{:.4},{},{},{},{},{:.1},{}",
                e.iteration,
                e.tour,
                e.episode_id,
                e.scene_id,
                e.difficulty.as_str(),
                loss,
                m.tl,
                m.ne,
                m.sr,
                m.spl,
                m.ndtw,
                e.steps,
                e.slow_calls,
                e.retrieved,
                e.episode_macs,
                e.step_macs,
                e.library_size
            )?;
        }
        Ok(())
    }

    /// `report.json` and `report.csv` in `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(self)?)?;
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(dir.join("report.csv"))?))
    }
}

pub(crate) fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn summarize(
    iteration: usize,
    tour: usize,
    episode: &crate::env::Episode,
    run: &crate::policy::EpisodeRun,
    slow_calls: usize,
    used_default_experience: bool,
    library_size: usize,
    slow_step_macs: u64,
) -> EpisodeSummary {
    let steps = run.steps();
    let extra = if steps == 0 { 0.0 } else { slow_step_macs as f64 / steps as f64 };
    EpisodeSummary {
        iteration,
        tour,
        episode_id: episode.episode_id.clone(),
        scene_id: episode.scene_id.clone(),
        difficulty: Difficulty::of(episode),
        metrics: run.log.outcome,
        steps,
        slow_calls,
        used_default_experience,
        retrieved: run.retrieved.len(),
        episode_macs: run.macs.episode,
        step_macs: run.macs.mean_per_step() + extra,
        library_size,
    }
}
