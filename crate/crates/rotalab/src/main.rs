use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rotalab::harness::commands::{
    cmd_diagnose, cmd_equivariance, cmd_run, cmd_sample_rotation, SampleRotationArgs,
};
use rotalab::harness::HarnessError;
use rotalab::rotations::Scope;

/// Rotation experiments for first-order optimizers.
#[derive(Parser)]
#[command(name = "rotalab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file (or replay a manifest).
    Run {
        /// Config file, or a manifest.json from an earlier run.
        config: PathBuf,
    },
    /// Check rotation equivariance of an optimizer on the configured problem.
    Equivariance { config: PathBuf },
    /// Estimate rotation-dependent quantities at a saved checkpoint.
    Diagnose {
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Compile a rotation standalone, verify it, and write its snapshot.
    SampleRotation {
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        block: usize,
        #[arg(long)]
        scope: Scope,
        #[arg(long)]
        seed: u64,
        /// Draw every block independently instead of sharing one sample.
        #[arg(long)]
        independent_blocks: bool,
        /// Layer structure, e.g. "w1:matrix:8x4,b1:vector:8".
        #[arg(long)]
        layers: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, HarnessError> {
    match cli.command {
        Command::Run { config } => {
            let summary = cmd_run(&config)?;
            for (variant, seed, loss) in &summary.final_losses {
                match loss {
                    Some(loss) => println!("{variant} seed {seed}: final loss {loss:.6e}"),
                    None => println!("{variant} seed {seed}: empty trajectory"),
                }
            }
            println!(
                "{} runs -> {} (manifest {})",
                summary.completed,
                summary.out_dir.display(),
                summary.manifest_path.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Equivariance { config } => {
            let outcome = cmd_equivariance(&config)?;
            println!("{}", serde_json::to_string_pretty(&outcome.report)?);
            if outcome.gate_failed {
                Ok(ExitCode::from(3))
            } else {
                Ok(ExitCode::SUCCESS)
            }
        }
        Command::Diagnose { config, checkpoint } => {
            let outcome = cmd_diagnose(&config, &checkpoint)?;
            for file in &outcome.files {
                println!("wrote {}", file.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::SampleRotation {
            dim,
            block,
            scope,
            seed,
            independent_blocks,
            layers,
            out,
        } => {
            let outcome = cmd_sample_rotation(&SampleRotationArgs {
                dim,
                block,
                scope,
                seed,
                shared: !independent_blocks,
                layers,
                out,
            })?;
            println!("{}", serde_json::to_string_pretty(&outcome.report)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}
