//! Command-line front end: dataset generation, pose estimation, evaluation
//! and label verification, each driven by a TOML run configuration.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod overlay;

use config::{Overrides, RunConfig};

// Like `println!`, but a closed stdout (e.g. piped into `head`) is not fatal.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Core(#[from] clusterpose::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "clusterpose", version, about = "Labeled scene synthesis and multi-part pose estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Run configuration (TOML).
    #[arg(long, short)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of scenes to generate.
    #[arg(long)]
    pub scenes: Option<usize>,
    /// Fixed part count per scene.
    #[arg(long)]
    pub parts: Option<usize>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        RunConfig::load(
            &self.config,
            &Overrides {
                seed: self.seed,
                scenes: self.scenes,
                parts: self.parts,
            },
        )
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a labeled dataset.
    Generate {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Detect keypoints and estimate every part's pose.
    Estimate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Dataset root (defaults to the configured one).
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Output directory (defaults to the configured one).
        #[arg(long)]
        output: Option<PathBuf>,
        /// Keep detections of already-solved parts.
        #[arg(long)]
        no_erase: bool,
    },
    /// Score estimates against the dataset's ground truth.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Estimates file (defaults to <output>/estimates.json).
        #[arg(long)]
        estimates: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Re-rasterize every scene and compare with its stored labels.
    LabelCheck {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Write the built-in bracket part as OBJ plus edge file.
    MakePart {
        #[arg(long, short, default_value = ".")]
        output: PathBuf,
    },
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Generate { config } => {
            let cfg = config.load()?;
            let s = commands::generate(&cfg)?;
            out!(
                "wrote {} scenes ({} train / {} test, {} parts) to {}",
                s.manifest_data.train.len() + s.manifest_data.test.len(),
                s.manifest_data.train.len(),
                s.manifest_data.test.len(),
                s.instances,
                s.manifest.display()
            );
            out!("generate: {:.3} s", s.elapsed.as_secs_f64());
        }
        Command::Estimate {
            config,
            dataset,
            output,
            no_erase,
        } => {
            let mut cfg = config.load()?;
            if no_erase {
                cfg.estimator.erase = false;
            }
            let dataset = dataset.unwrap_or_else(|| cfg.paths.dataset.clone());
            let output = output.unwrap_or_else(|| cfg.paths.output.clone());
            let s = commands::estimate(&cfg, &dataset, &output)?;
            out!(
                "acceptance rate: {:.2}% ({} of {} parts) over {} scenes",
                100.0 * s.acceptance_rate(),
                s.accepted,
                s.instances,
                s.timings.scenes
            );
            let t = &s.timings;
            out!(
                "timings: load {:.3} s, detect {:.3} s, pose {:.3} s ({:.4} s per part), overlay {:.3} s, wall {:.3} s",
                t.load_s,
                t.detect_s,
                t.pose_s,
                t.pose_per_instance_s(),
                t.overlay_s,
                t.wall_s
            );
            out!("estimates: {}", output.join(commands::ESTIMATES_FILE).display());
        }
        Command::Evaluate {
            config,
            estimates,
            dataset,
            output,
        } => {
            let cfg = config.load()?;
            let dataset = dataset.unwrap_or_else(|| cfg.paths.dataset.clone());
            let output = output.unwrap_or_else(|| cfg.paths.output.clone());
            let estimates = estimates.unwrap_or_else(|| cfg.paths.output.join(commands::ESTIMATES_FILE));
            commands::evaluate(&cfg, &estimates, &dataset, &output)?;
            let report = std::fs::read_to_string(output.join(commands::REPORT_FILE)).unwrap_or_default();
            out!("{}", report.trim_end());
        }
        Command::LabelCheck { config, dataset } => {
            let cfg = config.load()?;
            let dataset = dataset.unwrap_or_else(|| cfg.paths.dataset.clone());
            let r = commands::label_check(&cfg, &dataset)?;
            for p in &r.problems {
                out!("{p}");
            }
            if !r.problems.is_empty() {
                return Err(CliError::Runtime(format!(
                    "label-check failed: {} problems in {} scenes",
                    r.problems.len(),
                    r.scenes
                )));
            }
            out!("label-check: {} scenes OK", r.scenes);
        }
        Command::MakePart { output } => {
            let (obj, edges) = commands::make_part(&output)?;
            out!("wrote {} and {}", obj.display(), edges.display());
        }
    }
    Ok(())
}
