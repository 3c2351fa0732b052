use std::path::Path;
use std::time::Instant;

use super::report::summarize;
use super::{prepare_episode, RunReport, Suite, TrainConfig};
use crate::env::{observe, Action, Episode, SceneGraph};
use crate::error::{invalid, Error, Result};
use crate::explib::{Experience, ExperienceLibrary};
use crate::fusion::{Graph, StepInput};
use crate::policy::{run_episode, softmax, update_topomap, LibraryRef, PolicyParams, RunConfig, TopoMap};
use crate::reflect::{reflect_with, CompletionBackend, CountingBackend, PromptTemplates};

/// Mean cross-entropy along the reference path and its gradient.
#[derive(Debug, Clone)]
pub struct TeacherForced {
    pub loss: f64,
    pub grads: PolicyParams,
    pub steps: usize,
}

/// Walk the reference path; at each node the teacher action is the next hop,
/// and `stop` at the last node.
pub fn teacher_forced(
    params: &PolicyParams,
    scene: &SceneGraph,
    episode: &Episode,
    experiences: &[Experience],
    config: &RunConfig,
) -> Result<TeacherForced> {
    let path = &episode.reference_path;
    if path.is_empty() || path[0] != episode.start {
        return Err(invalid("reference path must start at the episode start"));
    }
    let mut graph = Graph::new(params, &episode.instruction.tokens, experiences, config.attention_slots, true)?;
    let mut map = TopoMap::new(&episode.start);
    let mut loss = 0.0;
    let mut dscores = Vec::with_capacity(path.len());
    for (j, here) in path.iter().enumerate() {
        let obs = observe(scene, here)?;
        map = update_topomap(map, &obs);
        let scores = graph.step(StepInput {
            views: map.view_matrix(&obs, config.views),
            n_local: map.neighbors.len(),
            globals: map.jump_features(params.dim()),
        })?;
        let target = match path.get(j + 1) {
            Some(next) => Action::Move(next.clone()),
            None => Action::Stop,
        };
        let idx = map
            .action_space()
            .iter()
            .position(|a| *a == target)
            .ok_or_else(|| Error::InvalidState(format!("teacher action {target} is not available at {here}")))?;
        let mut p = softmax(&scores);
        loss -= p[idx].max(f64::MIN_POSITIVE).ln();
        p[idx] -= 1.0;
        dscores.push(p);
    }
    let n = dscores.len() as f64;
    for d in &mut dscores {
        *d /= n;
    }
    Ok(TeacherForced { loss: loss / n, grads: graph.backward(&dscores)?, steps: dscores.len() })
}

/// Scale `g` down to norm `max` if it is longer. Returns the norm before.
pub fn clip_grad_norm(g: &mut PolicyParams, max: f64) -> f64 {
    let norm = g.sq_norm().sqrt();
    if norm > max {
        let mut scaled = g.zeros_like();
        scaled.add_scaled(g, max / norm);
        *g = scaled;
    }
    norm
}

/// Train on the suite described by the config with its configured backend.
pub fn train(config: &TrainConfig) -> Result<(PolicyParams, ExperienceLibrary, RunReport)> {
    config.validate()?;
    let suite = Suite::generate(&config.suite)?;
    let backend = config.backend.build()?;
    train_with(config, &suite, backend.as_ref(), None)
}

/// Iteration `t` runs episode `t mod |suite|`. Library time is the iteration
/// index.
pub fn train_with(
    config: &TrainConfig,
    suite: &Suite,
    backend: &dyn CompletionBackend,
    out_dir: Option<&Path>,
) -> Result<(PolicyParams, ExperienceLibrary, RunReport)> {
    config.validate()?;
    if suite.is_empty() {
        return Err(invalid("training suite has no episodes"));
    }
    let started = Instant::now();
    let mut params = config.init.build()?;
    let mut library = ExperienceLibrary::new(config.library.clone())?;
    let mut report = RunReport::new("ours");
    let templates = PromptTemplates::builtin();
    let clock = config.clock();

    for t in 0..config.iterations {
        let raw = &suite.episodes[t % suite.len()];
        let scene = suite.scene(&raw.scene_id)?;
        let episode = prepare_episode(backend, raw, config.convert_styles, config.convert_threshold);
        let now = t as f64;

        let run = run_episode(&params, scene, &episode, Some(LibraryRef { library: &library, now }), &config.run, clock)?;
        let mut tf = teacher_forced(&params, scene, &episode, &run.retrieved, &config.run)?;

        let counting = CountingBackend::new(backend);
        let refl = reflect_with(&counting, templates, config.eta_source, &run.log, scene, now)?;
        library.upsert(refl.experience, now);
        if (t + 1) % config.cleanup_every == 0 {
            let removed = library.cleanup(now);
            log::debug!("iteration {t}: cleanup removed {removed}");
        }

        if let Some(c) = config.grad_clip {
            clip_grad_norm(&mut tf.grads, c);
        }
        params.add_scaled(&tf.grads, -config.learning_rate);
        if !params.all_finite() {
            return Err(Error::Numeric(format!("parameters diverged at iteration {t}")));
        }

        report.losses.push(tf.loss);
        report.slow_invocations += counting.calls();
        report.episodes.push(summarize(
            t,
            t / suite.len(),
            &episode,
            &run,
            counting.calls(),
            refl.used_default,
            library.len(),
            0,
        ));
        log::info!("iteration {t}: loss {:.4} SR {} library {}", tf.loss, run.log.outcome.sr, library.len());

        if let (Some(dir), Some(every)) = (out_dir, config.checkpoint_every) {
            if (t + 1) % every == 0 {
                let dir = dir.join("checkpoints");
                std::fs::create_dir_all(&dir)?;
                params.save(&dir.join(format!("params_{:05}.json", t + 1)))?;
            }
        }
    }
    report.wall_time_secs = started.elapsed().as_secs_f64();
    Ok((params, library, report))
}
