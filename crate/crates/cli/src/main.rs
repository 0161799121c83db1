use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};
use dynbatch_cli::commands;

/// Loss-ranked dynamic batch training for volumetric segmentation.
#[derive(Parser)]
#[command(name = "dynbatch", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus described by the [generator] section.
    GenCorpus {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on the configured corpus; writes checkpoint, ledger and logs.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on a corpus and write the metrics CSV.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Must match `[preprocess] foreground_threshold` used for training.
        #[arg(long, default_value_t = 0.0)]
        foreground_threshold: f64,
    },
    /// Rank hard samples and write the scatter-plot data.
    Report {
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Rows shown on stdout; the CSV always lists every patient.
        #[arg(long, default_value_t = commands::DEFAULT_TOP_K)]
        top_k: usize,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenCorpus { config, out } => {
            let m = commands::cmd_gen_corpus(&config, &out)?;
            println!("wrote {} samples to {}", m.samples.len(), out.display());
        }
        Command::Train { config, out } => {
            let o = commands::cmd_train(&config, &out)?;
            println!(
                "{} batch-trainings; best mean dice {:.4} at iteration {}",
                o.record.total_trainings, o.best_mean_dice, o.best_iteration
            );
        }
        Command::Evaluate {
            checkpoint,
            corpus,
            out,
            foreground_threshold,
        } => {
            let reports = commands::cmd_evaluate(&checkpoint, &corpus, &out, foreground_threshold)?;
            println!("scored {} patients into {}", reports.len(), out.display());
        }
        Command::Report {
            ledger,
            metrics,
            out,
            top_k,
        } => {
            let top = commands::cmd_report(&ledger, &metrics, &out, Some(top_k))?;
            for r in top {
                println!(
                    "{}\t{}\t{:.6}",
                    r.patient_id, r.train_count, r.mean_last_loss
                );
            }
        }
    }
    Ok(())
}
