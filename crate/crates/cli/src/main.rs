//! `metaspline`: spline and piecewise geodesic interpolation of key frame images.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use metaspline::image::save_image;
use metaspline::pipeline::{circle_square_benchmark, gaussian_benchmark, run, KeyFrameSource, RunConfig};
use metaspline::{BoundaryCondition, Error, Mode};

#[derive(Debug, Parser)]
#[command(name = "metaspline", version, about = "Time discrete spline interpolation of images in the metamorphosis model")]
#[command(args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the key frames and configuration of a built-in benchmark.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON configuration file; flags override its values.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Key frame as IDX:PATH (repeatable); replaces key frames from the file.
    #[arg(long = "keyframe", value_name = "IDX:PATH")]
    keyframes: Vec<KeyFrameSource>,
    /// Number of time steps K.
    #[arg(long = "K", value_name = "K")]
    steps: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    bc: Option<BoundaryArg>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Also write frames and energies of every level.
    #[arg(long)]
    dump_levels: bool,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(value_enum)]
    benchmark: BenchmarkArg,
    #[arg(long, value_enum, default_value = "spline")]
    mode: ModeArg,
    /// Directory for the key frame PNGs and `config.json`.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Spline,
    Geodesic,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Spline => Mode::Spline,
            ModeArg::Geodesic => Mode::Geodesic,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BoundaryArg {
    Natural,
    Periodic,
    Hermite,
}

impl From<BoundaryArg> for BoundaryCondition {
    fn from(b: BoundaryArg) -> Self {
        match b {
            BoundaryArg::Natural => BoundaryCondition::Natural,
            BoundaryArg::Periodic => BoundaryCondition::Periodic,
            BoundaryArg::Hermite => BoundaryCondition::Hermite,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BenchmarkArg {
    Gaussian,
    CircleSquare,
}

/// Exit status for configuration problems, matching clap's usage errors.
const EXIT_USAGE: u8 = 2;
const EXIT_SOLVER: u8 = 3;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Some(Command::Synth(args)) => synth(&args),
        None => run_solver(&cli.run),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::SolverAborted { .. }) => EXIT_SOLVER,
        Some(Error::Config(_) | Error::Io { .. } | Error::ImageRead { .. } | Error::Format { .. }) => EXIT_USAGE,
        _ => 1,
    }
}

fn build_config(args: &RunArgs) -> anyhow::Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let s = &mut cfg.solver;
    if let Some(v) = args.steps {
        s.steps = v;
    }
    if let Some(v) = args.delta {
        s.delta = v;
    }
    if let Some(v) = args.sigma {
        s.sigma = v;
    }
    if let Some(v) = args.theta {
        s.theta = v;
    }
    if let Some(v) = args.levels {
        s.levels = v;
    }
    if let Some(v) = args.iters {
        s.iterations = v;
    }
    if let Some(v) = args.beta {
        s.beta = v;
    }
    if let Some(v) = args.mode {
        s.mode = v.into();
    }
    if let Some(v) = args.bc {
        s.boundary = v.into();
    }
    if s.mode == Mode::Geodesic && s.sigma != 1.0 {
        warn!("geodesic mode uses sigma = 1 (was {})", s.sigma);
        s.sigma = 1.0;
    }
    if !args.keyframes.is_empty() {
        cfg.keyframes = args.keyframes.clone();
    }
    for k in &cfg.keyframes {
        if !k.path.is_file() {
            return Err(Error::Config(format!("key frame file not found: {}", k.path.display())).into());
        }
    }
    Ok(cfg.normalized()?)
}

fn run_solver(args: &RunArgs) -> anyhow::Result<()> {
    let cfg = build_config(args)?;
    let outcome = run(&cfg, &args.out, args.dump_levels)?;
    info!(
        "finest level energy {:.6e} -> {:.6e}; results in {}",
        outcome.finest_initial,
        outcome.finest_final,
        args.out.display()
    );
    println!("{}", outcome.energy.total);
    Ok(())
}

fn synth(args: &SynthArgs) -> anyhow::Result<()> {
    let mode = args.mode.into();
    let benchmark = match args.benchmark {
        BenchmarkArg::Gaussian => gaussian_benchmark(mode)?,
        BenchmarkArg::CircleSquare => circle_square_benchmark(mode)?,
    };
    std::fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    let mut keyframes = Vec::new();
    for (index, image) in benchmark.keyframes.frames() {
        let name = format!("keyframe_{index:03}.png");
        save_image(image, args.out.join(&name))?;
        keyframes.push(KeyFrameSource { index: *index, path: PathBuf::from(name) });
    }
    let cfg = RunConfig { solver: benchmark.config, keyframes };
    let path: &Path = &args.out.join("config.json");
    std::fs::write(path, cfg.to_json()).with_context(|| format!("cannot write {}", path.display()))?;
    info!("wrote {} key frames and {}", cfg.keyframes.len(), path.display());
    Ok(())
}
