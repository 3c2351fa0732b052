use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{mean, summarize};
use super::{prepare_episode, RunReport, Suite};
use crate::env::MetricsReport;
use crate::error::{invalid, Error, Result};
use crate::explib::ExperienceLibrary;
use crate::policy::{run_episode, Clock, LibraryRef, PolicyParams, RunConfig};
use crate::reflect::{reflect_with, CompletionBackend, CountingBackend, EtaSource, PromptTemplates, Reflection};
use crate::styleconv::DEFAULT_CONFIDENCE_THRESHOLD;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Passes over the whole suite.
    pub tours: usize,
    /// Reflect and upsert after every tour; otherwise the library is read-only.
    pub live: bool,
    pub run: RunConfig,
    pub eta_source: EtaSource,
    pub convert_styles: bool,
    pub convert_threshold: f64,
    pub frozen_time: Option<f64>,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            tours: 5,
            live: true,
            run: RunConfig::default(),
            eta_source: EtaSource::default(),
            convert_styles: true,
            convert_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            frozen_time: None,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TourSummary {
    pub tour: usize,
    pub sr: f64,
    pub spl: f64,
    pub ne: f64,
    pub steps: f64,
    pub slow_calls: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub aggregate: MetricsReport,
    pub tours: Vec<TourSummary>,
    pub report: RunReport,
}

impl SuiteReport {
    /// Mean steps per scene for one tour, by scene id.
    pub fn scene_steps(&self, tour: usize) -> Vec<(String, f64)> {
        let mut ids: Vec<&str> = self.report.episodes.iter().map(|e| e.scene_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.into_iter()
            .map(|id| {
                let it = self.report.episodes.iter().filter(|e| e.tour == tour && e.scene_id == id);
                (id.to_string(), mean(it.map(|e| e.steps as f64)))
            })
            .collect()
    }
}

/// Run the suite `tours` times, tour by tour. Episodes inside a tour run in
/// parallel against the library as it stood at the start of the tour; in
/// live mode their reflections are upserted afterwards in suite order.
/// Library time starts after the newest entry and advances one unit per tour.
pub fn evaluate_suite(
    params: &PolicyParams,
    library: &mut ExperienceLibrary,
    suite: &Suite,
    config: &EvalConfig,
    backend: &dyn CompletionBackend,
) -> Result<SuiteReport> {
    if suite.is_empty() {
        return Err(invalid("evaluation suite has no episodes"));
    }
    if config.tours == 0 {
        return Err(invalid("tours must be at least 1"));
    }
    let pool = match config.threads {
        Some(n) => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidState(e.to_string()))?,
        ),
        None => None,
    };
    let started = Instant::now();
    let clock = config.frozen_time.map_or(Clock::System, Clock::Frozen);
    let templates = PromptTemplates::builtin();
    let base = library.entries().iter().map(|e| e.t_last).fold(0.0, f64::max);
    let mut report = RunReport::new(if config.live { "ours-live" } else { "ours-frozen" });
    let mut tours = Vec::with_capacity(config.tours);

    for tour in 0..config.tours {
        let now = base + tour as f64;
        let lib: &ExperienceLibrary = library;
        let one = |i: usize| -> Result<(crate::policy::EpisodeRun, Option<Reflection>, usize, crate::env::Episode)> {
            let raw = &suite.episodes[i];
            let scene = suite.scene(&raw.scene_id)?;
            let episode = prepare_episode(backend, raw, config.convert_styles, config.convert_threshold);
            let run = run_episode(params, scene, &episode, Some(LibraryRef { library: lib, now }), &config.run, clock)?;
            if !config.live {
                return Ok((run, None, 0, episode));
            }
            let counting = CountingBackend::new(backend);
            let refl = reflect_with(&counting, templates, config.eta_source, &run.log, scene, now)?;
            let calls = counting.calls();
            Ok((run, Some(refl), calls, episode))
        };
        let results: Vec<_> = match &pool {
            Some(p) => p.install(|| (0..suite.len()).into_par_iter().map(one).collect::<Result<Vec<_>>>())?,
            None => (0..suite.len()).into_par_iter().map(one).collect::<Result<Vec<_>>>()?,
        };

        let mut slow = 0;
        let first = report.episodes.len();
        for (i, (run, refl, calls, episode)) in results.into_iter().enumerate() {
            let used_default = refl.as_ref().is_some_and(|r| r.used_default);
            if let Some(r) = refl {
                library.upsert(r.experience, now);
            }
            slow += calls;
            report.episodes.push(summarize(
                tour * suite.len() + i,
                tour,
                &episode,
                &run,
                calls,
                used_default,
                library.len(),
                0,
            ));
        }
        if config.live {
            library.cleanup(now);
        }
        report.slow_invocations += slow;
        let eps = &report.episodes[first..];
        tours.push(TourSummary {
            tour,
            sr: mean(eps.iter().map(|e| e.metrics.sr)),
            spl: mean(eps.iter().map(|e| e.metrics.spl)),
            ne: mean(eps.iter().map(|e| e.metrics.ne)),
            steps: mean(eps.iter().map(|e| e.steps as f64)),
            slow_calls: slow,
        });
    }
    report.wall_time_secs = started.elapsed().as_secs_f64();
    Ok(SuiteReport { aggregate: report.aggregate().expect("non-empty suite"), tours, report })
}
