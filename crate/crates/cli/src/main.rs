use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dpdlgmm_cli::{
    cmd_export_latents, cmd_generate, cmd_predict, cmd_synth, cmd_train, exit, exit_code, ClusterChoice,
    ReadOptions,
};

/// Structured variational inference for Dirichlet process deep latent
/// Gaussian mixture models. Set DPDLGMM_LOG (error, warn, info, debug) for
/// progress output.
#[derive(Parser)]
#[command(name = "dpdlgmm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct InputArgs {
    /// Column of the input CSV holding labels, excluded from the features.
    #[arg(long)]
    label_column: Option<String>,
    /// Monte-Carlo samples per cluster (default: predict_samples of the run).
    #[arg(long)]
    samples: Option<usize>,
    /// Random seed (default: the training seed).
    #[arg(long)]
    seed: Option<u64>,
}

impl From<InputArgs> for ReadOptions {
    fn from(a: InputArgs) -> Self {
        ReadOptions {
            label_column: a.label_column,
            samples: a.samples,
            seed: a.seed,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a config file.
    Train { config: PathBuf },
    /// Predictive cluster probabilities for the rows of a CSV file.
    Predict {
        checkpoint: PathBuf,
        data: PathBuf,
        out: PathBuf,
        #[command(flatten)]
        input: InputArgs,
    },
    /// Sample from one cluster (1-based) or from every cluster ("all").
    Generate {
        checkpoint: PathBuf,
        cluster: ClusterChoice,
        count: usize,
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Recognition means of a latent layer (1 = bottom) plus responsibilities.
    ExportLatents {
        checkpoint: PathBuf,
        data: PathBuf,
        layer: usize,
        out: PathBuf,
        #[command(flatten)]
        input: InputArgs,
    },
    /// Write the synthetic mixture described by a config file.
    Synth { config: PathBuf, out: PathBuf },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { config } => {
            let report = cmd_train(&config)?;
            let last = report.trace.last().map_or(f64::NAN, |r| r.elbo);
            println!(
                "{} iterations, final ELBO {last}, {} active clusters, converged: {}",
                report.trace.len(),
                report.active_clusters,
                report.converged
            );
            if let Some(t) = &report.test {
                println!(
                    "test rows {}: accuracy {:.4}, matched accuracy {:.4}, ARI {:.4}",
                    t.rows, t.accuracy, t.matched_accuracy, t.ari
                );
            }
            println!("outputs in {}", report.output_dir.display());
        }
        Command::Predict {
            checkpoint,
            data,
            out,
            input,
        } => {
            let n = cmd_predict(&checkpoint, &data, &out, &input.into())?;
            println!("{n} rows written to {}", out.display());
        }
        Command::Generate {
            checkpoint,
            cluster,
            count,
            out,
            seed,
        } => {
            let n = cmd_generate(&checkpoint, cluster, count, &out, seed)?;
            println!("{n} samples written to {}", out.display());
        }
        Command::ExportLatents {
            checkpoint,
            data,
            layer,
            out,
            input,
        } => {
            let n = cmd_export_latents(&checkpoint, &data, layer, &out, &input.into())?;
            println!("{n} rows written to {}", out.display());
        }
        Command::Synth { config, out } => {
            let n = cmd_synth(&config, &out)?;
            println!("{n} rows written to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DPDLGMM_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::SUCCESS };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
