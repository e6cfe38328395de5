//! `planar-splat`: synthesize scenes, train, render, mesh, evaluate and check
//! gradients from the command line.
//!
//! Exit status is 0 on success, 2 for usage or configuration errors (bad
//! flags, unreadable or invalid inputs) and 3 when a valid run fails.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use planar_splat::scenes::SyntheticKind;

pub use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "planar-splat", version, about = "Planar Gaussian splatting surface reconstruction")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "PLANAR_SPLAT_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic scene (manifest, images, points, reference mesh).
    Synth(SynthArgs),
    /// Optimize Gaussians against a scene.
    Train(TrainArgs),
    /// Render color, depth, normal and distance maps of a checkpoint.
    Render(RenderArgs),
    /// Fuse rendered depth maps of a checkpoint into a mesh.
    Mesh(MeshArgs),
    /// Chamfer distance between a mesh and a reference.
    Eval(EvalArgs),
    /// Compare analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value = "cube")]
    kind: SyntheticKind,
    #[arg(long, default_value_t = 20)]
    views: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 500)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Apply a random brightness change to every image but the first.
    #[arg(long)]
    exposure_perturbation: bool,
    #[arg(long, short)]
    out: PathBuf,
}

/// Options shared by commands that read a run configuration.
#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scene: Option<PathBuf>,
    /// `json` or `colmap`.
    #[arg(long)]
    scene_format: Option<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    exposure_compensation: bool,
    /// Train with the photometric loss only.
    #[arg(long)]
    no_geometry: bool,
    #[arg(long)]
    checkpoint_interval: Option<usize>,
    #[arg(long)]
    preview_interval: Option<usize>,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// View ids to render (as listed in the scene); all views by default.
    #[arg(long = "view")]
    views: Vec<u32>,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct MeshArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output mesh (`.ply` or `.obj`).
    #[arg(long, short)]
    out: PathBuf,
    /// Also write the fused volume.
    #[arg(long)]
    volume: Option<PathBuf>,
    #[arg(long)]
    voxel_size: Option<f64>,
    /// Fuse raw depth without the grazing-angle filter.
    #[arg(long)]
    no_depth_filter: bool,
    /// Write an ASCII PLY.
    #[arg(long)]
    ascii: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    mesh: PathBuf,
    /// Reference mesh, or a scene whose ground truth holds a shape or mesh.
    #[arg(long)]
    reference: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the report as JSON here.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Image side length in pixels.
    #[arg(long, default_value_t = 16)]
    size: usize,
    #[arg(long, default_value_t = 5)]
    gaussians: usize,
    #[arg(long, default_value_t = 1e-3)]
    tolerance: f64,
    #[arg(long)]
    json: Option<PathBuf>,
    /// Negate the analytic gradient of one class (harness self-test).
    #[arg(long, hide = true)]
    flip_sign: Option<String>,
}

/// A command failure and the phase it happened in.
pub enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

pub type CmdResult<T = ()> = Result<T, Failure>;

pub trait Phase<T> {
    fn usage(self) -> CmdResult<T>;
    fn runtime(self) -> CmdResult<T>;
}

impl<T, E: Into<anyhow::Error>> Phase<T> for Result<T, E> {
    fn usage(self) -> CmdResult<T> {
        self.map_err(|e| Failure::Usage(e.into()))
    }

    fn runtime(self) -> CmdResult<T> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let result = configure_threads(cli.threads).and_then(|()| match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Render(a) => commands::render(a),
        Command::Mesh(a) => commands::mesh(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            report(&e);
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            report(&e);
            ExitCode::from(3)
        }
    }
}

/// Prints the error chain, skipping causes already quoted by their parent.
fn report(e: &anyhow::Error) {
    let mut text = e.to_string();
    for cause in e.chain().skip(1) {
        let c = cause.to_string();
        if !text.contains(&c) {
            text = format!("{text}: {c}");
        }
    }
    eprintln!("error: {text}");
}

fn configure_threads(threads: Option<usize>) -> CmdResult {
    match threads {
        Some(0) => Err(Failure::Usage(anyhow::anyhow!("--threads must be at least 1"))),
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build_global().usage(),
        None => Ok(()),
    }
}
