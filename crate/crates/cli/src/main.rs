use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use feadapt::experiment::{
    cmd_count_params, cmd_eval, cmd_gradcheck, cmd_sweep, cmd_train, ExperimentConfig, Overrides,
};
use feadapt::tensor::{Fault, OpKind};
use feadapt::vit::ModelConfig;

#[derive(Parser)]
#[command(name = "feadapt", version, about = "Train and inspect video adapters on a frame-wise ViT")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Override train.seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override output.dir
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run in 64-bit precision
    #[arg(long = "f64", global = true)]
    f64: bool,
    /// Sweep cells to run concurrently
    #[arg(long, global = true, default_value_t = 1)]
    parallel: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    VitB,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run an ablation sweep: temporal_conv, global_position or local_position
    Sweep {
        #[arg(long)]
        kind: String,
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the itemized parameter budget
    CountParams {
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        /// Emit JSON instead of a table
        #[arg(long)]
        json: bool,
    },
    /// Compare backward gradients with finite differences
    Gradcheck {
        /// Model geometry to check (defaults to a small built-in model)
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Scale one backward rule's gradients (negative control)
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
        #[arg(long, hide = true, default_value_t = 1.01)]
        fault_factor: f64,
    },
    /// Evaluate a checkpoint
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Configuration to evaluate under (defaults to the one stored in the checkpoint)
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    let g = cli.global;
    let ov = Overrides {
        seed: g.seed,
        out: g.out,
        f64: g.f64,
        parallel: g.parallel,
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Train { config } => {
            let a = cmd_train(&config, &ov, &mut out)?;
            writeln!(out, "checkpoint: {}", a.checkpoint.display())?;
        }
        Command::Sweep { kind, config } => {
            cmd_sweep(&kind, &config, &ov, &mut out)?;
        }
        Command::CountParams {
            config,
            preset,
            json,
        } => {
            let cfg = match (config, preset) {
                (Some(p), _) => ExperimentConfig::from_file(&p)?,
                (None, Some(Preset::VitB)) => ExperimentConfig {
                    model: ModelConfig::vit_b(7),
                    ..ExperimentConfig::default()
                },
                (None, _) => ExperimentConfig::default(),
            };
            let (_, text) = cmd_count_params(&cfg, json)?;
            writeln!(out, "{}", text.trim_end())?;
        }
        Command::Gradcheck {
            config,
            tolerance,
            inject_fault,
            fault_factor,
        } => {
            let model = config
                .map(|p| ExperimentConfig::from_file(&p).map(|c| c.model))
                .transpose()?;
            let fault = inject_fault
                .map(|name| {
                    OpKind::parse(&name)
                        .map(|op| Fault {
                            op,
                            factor: fault_factor,
                        })
                        .with_context(|| format!("unknown op '{name}'"))
                })
                .transpose()?;
            let report = cmd_gradcheck(model.as_ref(), g.seed.unwrap_or(0), tolerance, fault, &mut out)?;
            if !report.passed {
                bail!("gradient check failed for {}", report.failing().join(", "));
            }
        }
        Command::Eval { checkpoint, config } => {
            cmd_eval(config.as_deref(), &checkpoint, &ov, &mut out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
