mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dualnav::tokens::SceneType;

#[derive(Debug, Parser)]
#[command(name = "dualnav", version, about = "Fast/slow reasoning navigation agent")]
struct Cli {
    /// Freeze record timestamps at zero so artifacts are reproducible.
    #[arg(long, global = true)]
    deterministic_time: bool,

    /// Worker threads for parallel episodes (default: available parallelism).
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    threads: Option<u16>,

    /// More logging; repeat for debug output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write generated scene files.
    GenScenes(GenScenes),
    /// Run the interaction training loop.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate saved parameters and library over scene files, tour by tour.
    Eval(Eval),
    /// Run the reflective agent and the threshold-switching baseline on the same suite.
    CompareBaseline {
        #[arg(long)]
        config: PathBuf,
        /// Also write the paired report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Experience library maintenance.
    Lib {
        #[command(subcommand)]
        action: LibAction,
    },
    /// Convert styled instructions (`style<TAB>text` per line on stdin) to Basic.
    ConvertInstr {
        #[arg(long, value_enum, default_value_t = Backend::Oracle)]
        backend: Backend,
        #[arg(long, default_value_t = dualnav::styleconv::DEFAULT_CONFIDENCE_THRESHOLD, value_parser = parse_unit)]
        threshold: f64,
    },
}

#[derive(Debug, Args)]
struct GenScenes {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Comma-separated scene types, cycled; defaults to every OOD type.
    #[arg(long, value_delimiter = ',', value_parser = parse_scene_type)]
    types: Vec<SceneType>,
    #[arg(long, default_value_t = 12)]
    nodes: usize,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct Eval {
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    library: PathBuf,
    #[arg(long)]
    scenes: PathBuf,
    #[arg(long, default_value_t = 5)]
    tours: usize,
    /// Reflect after every tour and update the library.
    #[arg(long)]
    live: bool,
    /// Seed for the episodes drawn in each scene.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    episodes_per_scene: usize,
    #[arg(long, value_enum, default_value_t = Backend::Oracle)]
    backend: Backend,
    /// Report directory. In live mode the updated library goes here, or back
    /// to `--library` without it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum LibAction {
    /// Entry count and one line per experience.
    Inspect {
        #[arg(long)]
        library: PathBuf,
    },
    /// Entries as a JSON array.
    Export {
        #[arg(long)]
        library: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Drop low-quality entries and rewrite the file.
    Cleanup {
        #[arg(long)]
        library: PathBuf,
        /// Library time; defaults to the newest entry.
        #[arg(long)]
        now: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Backend {
    Oracle,
    Remote,
}

impl From<Backend> for dualnav::trainer::BackendKind {
    fn from(b: Backend) -> Self {
        match b {
            Backend::Oracle => Self::Oracle,
            Backend::Remote => Self::Remote,
        }
    }
}

fn parse_scene_type(s: &str) -> Result<SceneType, String> {
    SceneType::parse(s).ok_or_else(|| format!("unknown scene type `{s}`"))
}

fn parse_unit(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if (0.0..=1.0).contains(&v) => Ok(v),
        _ => Err(format!("`{s}` is not a number in [0, 1]")),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.into()).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
