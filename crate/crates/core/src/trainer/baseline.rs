use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::summarize;
use super::{prepare_episode, RunReport, Suite, TrainConfig};
use crate::env::{shortest_path, Action};
use crate::error::{invalid, Result};
use crate::policy::{run_episode_with, Intervention, InterventionContext, PolicyParams};
use crate::reflect::{CompletionBackend, PromptTemplates};

/// Threshold switch: call slow reasoning in-loop when the agent is off the
/// reference route and has stopped making progress.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub enabled: bool,
    /// Meters from the nearest reference node.
    pub nav_error_threshold: f64,
    /// Consecutive decisions without getting closer to the goal.
    pub stagnation_steps: usize,
    /// Nominal multiply-accumulate cost charged per slow call.
    pub slow_call_macs: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { enabled: false, nav_error_threshold: 0.8, stagnation_steps: 2, slow_call_macs: 1_000_000_000 }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.nav_error_threshold >= 0.0 && self.nav_error_threshold.is_finite()) {
            return Err(invalid("nav_error_threshold must be a finite non-negative number"));
        }
        Ok(())
    }
}

/// Parse the `ACTION:` line of a corrective reply.
pub(crate) fn parse_corrective(reply: &str) -> Option<String> {
    reply
        .lines()
        .rev()
        .find_map(|l| l.trim().strip_prefix("ACTION:").map(|s| s.trim().to_string()))
        .filter(|s| !s.is_empty())
}

fn corrective_action(ctx: &InterventionContext<'_>, target: &str) -> Option<Action> {
    if target.eq_ignore_ascii_case("stop") {
        return Some(Action::Stop);
    }
    if ctx.map.neighbors.iter().any(|n| n == target) {
        return Some(Action::Move(target.to_string()));
    }
    ctx.map.jump_targets().into_iter().find(|n| n == target).map(Action::Jump)
}

/// Baseline over the config's generated suite with its configured backend
/// and initial parameters.
pub fn run_baseline_threshold_switch(config: &TrainConfig) -> Result<RunReport> {
    if !config.baseline.enabled {
        return Err(invalid("baseline mode is not enabled in the config"));
    }
    config.validate()?;
    let suite = Suite::generate(&config.suite)?;
    let backend = config.backend.build()?;
    let params = config.init.build()?;
    run_baseline(&params, &suite, config, backend.as_ref())
}

/// Every suite episode once, fast path without fusion, with the threshold
/// switch active.
pub fn run_baseline(
    params: &PolicyParams,
    suite: &Suite,
    config: &TrainConfig,
    backend: &dyn CompletionBackend,
) -> Result<RunReport> {
    config.baseline.validate()?;
    if suite.is_empty() {
        return Err(invalid("baseline suite has no episodes"));
    }
    let started = Instant::now();
    let bc = &config.baseline;
    let templates = PromptTemplates::builtin();
    let clock = config.clock();

    let runs = (0..suite.len())
        .into_par_iter()
        .map(|i| {
            let raw = &suite.episodes[i];
            let scene = suite.scene(&raw.scene_id)?;
            let episode = prepare_episode(backend, raw, config.convert_styles, config.convert_threshold);
            let mut best = f64::INFINITY;
            let mut stalled = 0usize;
            let mut hook = |ctx: &InterventionContext<'_>| -> Result<Intervention> {
                let here = ctx.map.current.as_str();
                let to_goal = scene.geodesic(here, &episode.goal)?;
                if to_goal < best - 1e-9 {
                    best = to_goal;
                    stalled = 0;
                } else {
                    stalled += 1;
                }
                let mut off_route = f64::INFINITY;
                for r in &episode.reference_path {
                    off_route = off_route.min(scene.geodesic(here, r)?);
                }
                if off_route <= bc.nav_error_threshold || stalled <= bc.stagnation_steps {
                    return Ok(Intervention::default());
                }
                let (route, _) = shortest_path(scene, here, &episode.goal)?;
                let situation = format!(
                    "- current: {here}\n- instruction: {}\n- neighbors: {}\n- stalled_steps: {stalled}\n- route_to_goal: {}",
                    episode.instruction.text,
                    ctx.map.neighbors.join(" "),
                    route.join(" ")
                );
                let prompt = templates.corrective.replace("{{situation}}", &situation);
                let action = match backend.complete(&prompt) {
                    Ok(reply) => parse_corrective(&reply).and_then(|t| corrective_action(ctx, &t)),
                    Err(e) => {
                        log::warn!("corrective call failed at {here}: {e}");
                        None
                    }
                };
                Ok(Intervention { slow_calls: 1, action })
            };
            let run = run_episode_with(params, scene, &episode, None, &config.run, clock, &mut hook)?;
            Ok((episode, run))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = RunReport::new("baseline");
    for (i, (episode, run)) in runs.iter().enumerate() {
        let calls: usize = run.slow_calls.iter().sum();
        report.slow_invocations += calls;
        report.episodes.push(summarize(i, 0, episode, run, calls, false, 0, calls as u64 * bc.slow_call_macs));
    }
    report.wall_time_secs = started.elapsed().as_secs_f64();
    Ok(report)
}
