//! `kamlab`: run weak KAM / semiclassical experiments from a TOML config.
//!
//! Exit codes: 0 success, 1 certificate or integrity failure, 2 configuration
//! error, 3 numerical failure.

mod config;
mod error;
mod output;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kamlab::CostVariant;

use config::ExperimentConfig;
pub use error::CliError;
use output::{sha256_file, RunManifest, StageStatus};
use pipeline::{run_pipeline, Stage};

#[derive(Parser, Debug)]
#[command(name = "kamlab", version, about = "Weak KAM, Mather and semiclassical experiments on the torus")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; each overrides the matching config key.
#[derive(Args, Debug)]
struct Common {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output.directory`.
    #[arg(long, short, global = true, env = "KAMLAB_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
    /// Grid points per dimension (`grid.n`).
    #[arg(long, global = true)]
    n: Option<usize>,
    /// Torus dimension (`grid.dim`).
    #[arg(long, global = true)]
    dim: Option<usize>,
    /// Time step of the discrete action (`weakkam.h`).
    #[arg(long, global = true)]
    h: Option<f64>,
    /// Time slices of the action kernel (`wkernel.slices`).
    #[arg(long, global = true)]
    slices: Option<usize>,
    /// Monte Carlo samples (`mc.samples`).
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// Monte Carlo seed (`mc.seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the discrete weak KAM problem: u, u*, E, I.
    Weakkam,
    /// Minimum mean cycles of both Lagrangians and the critical-value check.
    Mather,
    /// Perron eigenpairs of the twisted generator.
    Eigen {
        /// Inverse temperature; repeat for several (`eigen.betas`).
        #[arg(long = "beta")]
        betas: Vec<f64>,
    },
    /// Semiclassical sweep with large-deviation and Varadhan checks.
    Sweep {
        /// Comma-separated increasing betas (`sweep.betas`).
        #[arg(long, value_delimiter = ',')]
        betas: Vec<f64>,
    },
    /// Action kernel W by min-plus exponentiation.
    Wkernel,
    /// Feynman-Kac Monte Carlo estimates of the kernel.
    FkMc {
        /// Node pair `y,x`; repeat for several (`mc.pairs`).
        #[arg(long = "pair", value_parser = parse_pair)]
        pairs: Vec<[usize; 2]>,
    },
    /// Kantorovich problem between the projected Mather measures.
    Transport {
        /// Cost variant (`transport.variant`).
        #[arg(long, value_parser = parse_variant)]
        variant: Option<CostVariant>,
    },
    /// Run stages in dependency order (all by default).
    Run {
        /// Comma-separated stage names.
        #[arg(long, value_delimiter = ',', value_parser = parse_stage)]
        stages: Vec<Stage>,
    },
    /// Check artifact hashes and certificate verdicts of a finished run.
    Verify {
        /// Run directory; defaults to the output directory.
        dir: Option<PathBuf>,
    },
}

fn parse_pair(s: &str) -> Result<[usize; 2], String> {
    let parts: Vec<&str> = s.split(',').collect();
    match parts.as_slice() {
        [y, x] => Ok([y.trim().parse().map_err(|e| format!("{e}"))?, x.trim().parse().map_err(|e| format!("{e}"))?]),
        _ => Err(format!("expected y,x, got {s:?}")),
    }
}

fn parse_variant(s: &str) -> Result<CostVariant, String> {
    s.parse().map_err(|e: kamlab::Error| e.to_string())
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    Stage::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Stage::ALL.iter().map(|s| s.name()).collect();
        format!("unknown stage {s:?}; expected one of {}", names.join(", "))
    })
}

fn load_config(common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(n) = common.n {
        config.grid.n = n;
    }
    if let Some(dim) = common.dim {
        config.grid.dim = dim;
    }
    if let Some(h) = common.h {
        config.weakkam.h = Some(h);
    }
    if let Some(slices) = common.slices {
        config.wkernel.slices = slices;
    }
    if let Some(samples) = common.samples {
        config.mc.samples = samples;
    }
    if let Some(seed) = common.seed {
        config.mc.seed = seed;
    }
    if let Some(dir) = &common.output_dir {
        config.output.directory = dir.clone();
    }
    Ok(config)
}

fn run(config: &ExperimentConfig, stages: &[Stage]) -> Result<u8, CliError> {
    let dir = &config.output.directory;
    let outcome = run_pipeline(config, stages, dir)?;
    let m = &outcome.manifest;
    for s in &m.stages {
        let status = match s.status {
            StageStatus::Ok => "ok",
            StageStatus::Failed => "FAILED",
            StageStatus::Skipped => "skipped",
        };
        match &s.message {
            Some(msg) => println!("stage {:<9} {status} ({:.2} s): {msg}", s.name, s.wall_time_s),
            None => println!("stage {:<9} {status} ({:.2} s)", s.name, s.wall_time_s),
        }
    }
    print_certificates(m);
    println!("manifest {}", dir.join(output::MANIFEST).display());
    if let Some(e) = outcome.stage_failure {
        eprintln!("error: {e}");
        return Ok(e.exit_code());
    }
    Ok(if m.failed_certificates().is_empty() { 0 } else { 1 })
}

fn print_certificates(m: &RunManifest) {
    for c in &m.certificates {
        let verdict = if c.passed { "PASS" } else { "FAIL" };
        println!("{verdict} {}: {:.3e} (tolerance {:.3e}) {}", c.name, c.value, c.tolerance, c.detail);
    }
}

fn verify(dir: &std::path::Path) -> Result<u8, CliError> {
    let manifest = RunManifest::load(dir)?;
    let mut problems = Vec::new();
    for stage in &manifest.stages {
        for file in &stage.outputs {
            let path = dir.join(&file.path);
            if !path.exists() {
                problems.push(format!("{} is missing", file.path));
            } else if sha256_file(&path)? != file.sha256 {
                problems.push(format!("{} does not match its recorded hash", file.path));
            }
        }
    }
    if !problems.is_empty() {
        return Err(CliError::Integrity(problems.join("; ")));
    }
    print_certificates(&manifest);
    let failed_stages = manifest.failed_stages();
    for s in &failed_stages {
        eprintln!("stage {} failed: {}", s.name, s.message.as_deref().unwrap_or(""));
    }
    let failed = manifest.failed_certificates();
    if !failed.is_empty() {
        let names: Vec<&str> = failed.iter().map(|c| c.name.as_str()).collect();
        eprintln!("failed certificates: {}", names.join(", "));
        return Ok(1);
    }
    if !failed_stages.is_empty() {
        return Ok(3);
    }
    println!("verified {} certificates", manifest.certificates.len());
    Ok(0)
}

fn dispatch(cli: Cli) -> Result<u8, CliError> {
    let mut config = load_config(&cli.common)?;
    let stage = match cli.command {
        Command::Weakkam => Stage::WeakKam,
        Command::Mather => Stage::Mather,
        Command::Eigen { betas } => {
            if !betas.is_empty() {
                config.eigen.betas = betas;
            }
            Stage::Eigen
        }
        Command::Sweep { betas } => {
            if !betas.is_empty() {
                config.sweep.betas = betas;
            }
            Stage::Sweep
        }
        Command::Wkernel => Stage::WKernel,
        Command::FkMc { pairs } => {
            if !pairs.is_empty() {
                config.mc.pairs = pairs;
            }
            Stage::FkMc
        }
        Command::Transport { variant } => {
            if let Some(v) = variant {
                config.transport.variant = v;
            }
            Stage::Transport
        }
        Command::Run { stages } => {
            let stages = if stages.is_empty() { Stage::ALL.to_vec() } else { stages };
            return run(&config, &stages);
        }
        Command::Verify { dir } => return verify(dir.as_ref().unwrap_or(&config.output.directory)),
    };
    run(&config, &[stage])
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
