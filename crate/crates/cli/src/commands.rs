use std::io::{BufRead, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use dualnav::env::{generate_episode, generate_scene, Instruction, InstructionStyle, MetricsReport};
use dualnav::explib::{Experience, ExperienceLibrary, LibraryConfig};
use dualnav::policy::{PolicyParams, DEFAULT_DIM};
use dualnav::styleconv::convert;
use dualnav::tokens::SceneType;
use dualnav::trainer::{
    evaluate_suite, run_baseline, train_with, BackendKind, EvalConfig, RunReport, Suite, TrainConfig,
};
use serde::Serialize;

use crate::{Cli, Command, Eval, GenScenes, LibAction};

pub fn run(cli: &Cli) -> Result<()> {
    let frozen = cli.deterministic_time.then_some(0.0);
    match &cli.command {
        Command::GenScenes(args) => gen_scenes(args),
        Command::Train { config, out } => train(config, out, frozen),
        Command::Eval(args) => eval(args, frozen),
        Command::CompareBaseline { config, out } => compare_baseline(config, out.as_deref(), frozen),
        Command::Lib { action } => lib(action),
        Command::ConvertInstr { backend, threshold } => convert_instr((*backend).into(), *threshold),
    }
}

fn gen_scenes(args: &GenScenes) -> Result<()> {
    let types: Vec<SceneType> = if args.types.is_empty() {
        SceneType::ALL.into_iter().filter(|t| t.is_ood()).collect()
    } else {
        args.types.clone()
    };
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    for i in 0..args.count {
        let seed = args.seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
        let scene = generate_scene(seed, types[i % types.len()], args.nodes, DEFAULT_DIM)?;
        let path = args.out.join(format!("scene_{i:03}.json"));
        scene.save(&path)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn train(config: &Path, out: &Path, frozen: Option<f64>) -> Result<()> {
    let mut cfg = TrainConfig::load(config).with_context(|| format!("loading {}", config.display()))?;
    if frozen.is_some() {
        cfg.frozen_time = frozen;
    }
    let suite = Suite::generate(&cfg.suite)?;
    let backend = cfg.backend.build()?;
    std::fs::create_dir_all(out)?;
    let (params, library, report) = train_with(&cfg, &suite, backend.as_ref(), Some(out))?;
    params.save(&out.join("params.json"))?;
    library.save(&out.join("library.jsonl"))?;
    report.save(out)?;

    let n = report.losses.len();
    println!("iterations: {n}");
    println!("loss: first10 {:.4} last10 {:.4}", report.mean_loss(0..10), report.mean_loss(n.saturating_sub(10)..n));
    print_metrics("episodes", report.aggregate());
    println!("library: {} entries", library.len());
    println!("reflections: {}", report.slow_invocations);
    Ok(())
}

/// Zero-length files count as an empty library with default settings.
fn load_library(path: &Path) -> Result<ExperienceLibrary> {
    let meta = std::fs::metadata(path).with_context(|| format!("reading {}", path.display()))?;
    if meta.len() == 0 {
        return Ok(ExperienceLibrary::new(LibraryConfig::default())?);
    }
    ExperienceLibrary::load(path).with_context(|| format!("loading library {}", path.display()))
}

fn eval(args: &Eval, frozen: Option<f64>) -> Result<()> {
    let params = PolicyParams::load(&args.params).with_context(|| format!("loading {}", args.params.display()))?;
    let mut library = load_library(&args.library)?;
    let scenes = Suite::load_scenes(&args.scenes)?;
    if scenes.is_empty() {
        bail!("no scene files in {}", args.scenes.display());
    }
    let mut episodes = Vec::new();
    for (i, scene) in scenes.iter().enumerate() {
        for k in 0..args.episodes_per_scene {
            let seed = args.seed.wrapping_mul(1_000_003).wrapping_add((i * 64 + k) as u64);
            episodes.push(generate_episode(scene, seed, &InstructionStyle::Basic)?);
        }
    }
    let suite = Suite::new(scenes, episodes)?;
    let backend = BackendKind::from(args.backend).build()?;
    let cfg = EvalConfig { tours: args.tours, live: args.live, frozen_time: frozen, ..EvalConfig::default() };
    let r = evaluate_suite(&params, &mut library, &suite, &cfg, backend.as_ref())?;

    println!("tour   SR     SPL    NE     steps  slow");
    for t in &r.tours {
        println!("{:<6} {:.3}  {:.3}  {:.3}  {:<6.2} {}", t.tour + 1, t.sr, t.spl, t.ne, t.steps, t.slow_calls);
    }
    let last = r.tours.len() - 1;
    for ((id, first), (_, end)) in r.scene_steps(0).into_iter().zip(r.scene_steps(last)) {
        println!("scene {id}: steps tour1 {first:.2} tour{} {end:.2}", last + 1);
    }
    print_metrics("aggregate", Some(r.aggregate));

    if let Some(dir) = &args.out {
        r.report.save(dir)?;
        std::fs::write(dir.join("tours.json"), serde_json::to_string_pretty(&r.tours)?)?;
    }
    if args.live {
        let path = args.out.as_ref().map_or(args.library.clone(), |d| d.join("library.jsonl"));
        library.save(&path)?;
        println!("library: {} entries -> {}", library.len(), path.display());
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct ModeSummary {
    mode: String,
    episodes: usize,
    sr: f64,
    spl: f64,
    ne: f64,
    mean_steps: f64,
    slow_invocations: usize,
    slow_per_episode: f64,
    mean_step_macs: f64,
}

impl ModeSummary {
    fn of(r: &RunReport) -> Self {
        let m = r.aggregate().unwrap_or_default();
        Self {
            mode: r.mode.clone(),
            episodes: r.episodes.len(),
            sr: m.sr,
            spl: m.spl,
            ne: m.ne,
            mean_steps: r.mean_steps(),
            slow_invocations: r.slow_invocations,
            slow_per_episode: r.mean_slow_calls(),
            mean_step_macs: r.mean_step_macs(),
        }
    }
}

#[derive(Debug, Serialize)]
struct EpisodePair {
    episode_id: String,
    difficulty: String,
    ours_sr: f64,
    baseline_sr: f64,
    ours_slow_calls: usize,
    baseline_slow_calls: usize,
}

#[derive(Debug, Serialize)]
struct PairedReport {
    modes: Vec<ModeSummary>,
    episodes: Vec<EpisodePair>,
}

fn compare_baseline(config: &Path, out: Option<&Path>, frozen: Option<f64>) -> Result<()> {
    let mut cfg = TrainConfig::load(config).with_context(|| format!("loading {}", config.display()))?;
    if frozen.is_some() {
        cfg.frozen_time = frozen;
    }
    let suite = Suite::generate(&cfg.suite)?;
    let backend = cfg.backend.build()?;
    let params = cfg.init.build()?;

    let mut library = ExperienceLibrary::new(cfg.library.clone())?;
    let eval_cfg = EvalConfig {
        tours: 1,
        live: true,
        run: cfg.run.clone(),
        eta_source: cfg.eta_source,
        convert_styles: cfg.convert_styles,
        convert_threshold: cfg.convert_threshold,
        frozen_time: cfg.frozen_time,
        threads: None,
    };
    let mut ours = evaluate_suite(&params, &mut library, &suite, &eval_cfg, backend.as_ref())?.report;
    ours.mode = "ours".into();
    let base = run_baseline(&params, &suite, &cfg, backend.as_ref())?;

    let episodes = ours
        .episodes
        .iter()
        .zip(&base.episodes)
        .map(|(o, b)| EpisodePair {
            episode_id: o.episode_id.clone(),
            difficulty: o.difficulty.as_str().into(),
            ours_sr: o.metrics.sr,
            baseline_sr: b.metrics.sr,
            ours_slow_calls: o.slow_calls,
            baseline_slow_calls: b.slow_calls,
        })
        .collect();
    let report = PairedReport { modes: vec![ModeSummary::of(&ours), ModeSummary::of(&base)], episodes };
    let text = serde_json::to_string_pretty(&report)?;
    println!("{text}");
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("compare.json"), &text)?;
        ours.save(&dir.join("ours"))?;
        base.save(&dir.join("baseline"))?;
    }
    Ok(())
}

fn print_metrics(label: &str, m: Option<MetricsReport>) {
    if let Some(m) = m {
        println!("{label}: SR {:.3} SPL {:.3} NE {:.3} TL {:.3} nDTW {:.3}", m.sr, m.spl, m.ne, m.tl, m.ndtw);
    }
}

fn newest(entries: &[Experience]) -> f64 {
    entries.iter().map(|e| e.t_last).fold(0.0, f64::max)
}

fn lib(action: &LibAction) -> Result<()> {
    match action {
        LibAction::Inspect { library } => {
            let lib = load_library(library)?;
            let now = newest(lib.entries());
            println!("{} entries (capacity {})", lib.len(), lib.config().capacity);
            for (i, e) in lib.entries().iter().enumerate() {
                let join = |s: &dualnav::tokens::TokenSet| s.iter().cloned().collect::<Vec<_>>().join(" ");
                println!(
                    "{i:>4}  {}  eta={:.3} f={} t_last={} Q={:.3}  C_s=[{}] T_n=[{}]",
                    join(&e.scene_type),
                    e.eta_s,
                    e.f,
                    e.t_last,
                    lib.quality(e, now)?,
                    join(&e.context),
                    join(&e.strategy)
                );
            }
        }
        LibAction::Export { library, out } => {
            let lib = load_library(library)?;
            let text = serde_json::to_string_pretty(lib.entries())?;
            match out {
                Some(p) => std::fs::write(p, text)?,
                None => println!("{text}"),
            }
        }
        LibAction::Cleanup { library, now } => {
            let mut lib = load_library(library)?;
            let now = now.unwrap_or_else(|| newest(lib.entries()));
            let removed = lib.cleanup(now);
            lib.save(library)?;
            println!("removed {removed}, {} entries remain", lib.len());
        }
    }
    Ok(())
}

fn convert_instr(kind: BackendKind, threshold: f64) -> Result<()> {
    let backend = kind.build()?;
    let stdin = std::io::stdin();
    let mut out = std::io::BufWriter::new(std::io::stdout().lock());
    for (n, line) in stdin.lock().lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let Some((style, text)) = line.split_once('\t') else {
            bail!("line {}: expected `style<TAB>text`", n + 1);
        };
        let Some(style) = InstructionStyle::parse(style) else {
            bail!("line {}: unknown style `{style}`", n + 1);
        };
        let converted = convert(backend.as_ref(), &Instruction::new(text, style), threshold);
        writeln!(out, "{}\t{}", converted.style, converted.text)?;
    }
    out.flush()?;
    Ok(())
}
