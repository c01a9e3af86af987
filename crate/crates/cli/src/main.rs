//! Non-interactive CLI for corpus generation, training, evaluation,
//! ablations and curve extraction.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical abort.

use clap::{Parser, Subcommand};
use pseudolab_core::error::Error;
use pseudolab_core::nn::load_checkpoint;
use pseudolab_core::pipeline::{
    ablation_csv, ablation_matrix, evaluate, train_run, write_curves, AblationAxis, RunConfig,
};
use pseudolab_core::synth::{generate_corpus, load_corpus, save_corpus, CorpusSpec};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "pseudolab", version, about = "Teacher-student pseudo-label training at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus and trial list.
    GenData {
        /// TOML file with corpus spec fields (all optional).
        #[arg(long)]
        spec: PathBuf,
        /// Output directory for corpus.csv, trials.csv and spec.toml.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run warm-up plus the reflective training loop.
    Train {
        /// TOML run configuration; unknown keys are rejected.
        #[arg(long)]
        config: PathBuf,
        /// Run directory for logs and checkpoints.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint against a corpus and its trial list.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory holding corpus.csv and trials.csv.
        #[arg(long)]
        corpus: PathBuf,
        /// Optional assignment dump (`index,cluster_id` lines) to score the
        /// labeling metrics against; defaults to the checkpoint's argmax
        /// predictions on the training samples.
        #[arg(long)]
        assignments: Option<PathBuf>,
    },
    /// Sweep one config axis and print the comparison table.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Axis spec such as `queue=1,5,10,20`, `toggles=full,no_ema`,
        /// `k_init=40,80,160` or `mode=argmax,sinkhorn`.
        #[arg(long)]
        axis: String,
        /// Optional file for the CSV table (also printed to stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extract labeling-evolution curves from an epochs.jsonl log.
    Plot {
        #[arg(long)]
        log: PathBuf,
        /// Output CSV path; defaults to `<log>_curves.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Config(_) | Error::Format { .. } => ExitCode::from(2),
                Error::Numerical(_) => ExitCode::from(3),
                Error::Io(_) => ExitCode::from(1),
            }
        }
    }
}

fn run(cli: Cli) -> pseudolab_core::Result<()> {
    match cli.command {
        Command::GenData { spec, out } => {
            let text = std::fs::read_to_string(&spec)?;
            let spec: CorpusSpec =
                toml::from_str(&text).map_err(|e| Error::config(e.to_string()))?;
            let corpus = generate_corpus(&spec)?;
            save_corpus(&corpus, &out)?;
            println!(
                "wrote {} training and {} held-out samples, {} trials to {}",
                corpus.train.len(),
                corpus.eval.len(),
                corpus.trials.trials.len(),
                out.display()
            );
            Ok(())
        }
        Command::Train { config, out } => {
            let config = RunConfig::load(&config)?;
            let output = train_run(&config, Some(&out))?;
            let last = output.records.last().expect("at least the warm-up record");
            println!(
                "finished: accuracy {:.2}%, nmi {:.4}, eer {:.2}%, {} active clusters ({})",
                last.accuracy_pct,
                last.nmi,
                last.eer_pct,
                last.active_clusters,
                out.display()
            );
            Ok(())
        }
        Command::Eval {
            checkpoint,
            corpus,
            assignments,
        } => {
            let params = load_checkpoint(&checkpoint)?;
            let corpus = load_corpus(&corpus)?;
            let labels = match assignments {
                Some(path) => read_assignments(&path, corpus.train.len())?,
                None => predicted_labels(&params, &corpus)?,
            };
            let metrics = evaluate(&params, &corpus, &labels)?;
            let json = serde_json::json!({
                "nmi": metrics.nmi,
                "accuracy_pct": metrics.accuracy_pct,
                "purity_pct": metrics.purity_pct,
                "active_clusters": metrics.active_clusters,
                "eer_pct": metrics.eer_pct,
                "min_dcf": metrics.min_dcf,
            });
            println!("{json}");
            Ok(())
        }
        Command::Ablate { config, axis, out } => {
            let config = RunConfig::load(&config)?;
            let axis = AblationAxis::parse(&axis)?;
            let rows = ablation_matrix(&config, &axis)?;
            let table = ablation_csv(&rows);
            print!("{table}");
            if let Some(path) = out {
                std::fs::write(path, table)?;
            }
            Ok(())
        }
        Command::Plot { log, out } => {
            let out = out.unwrap_or_else(|| {
                let mut name = log.file_stem().unwrap_or_default().to_os_string();
                name.push("_curves.csv");
                log.with_file_name(name)
            });
            write_curves(&log, &out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn read_assignments(path: &PathBuf, n: usize) -> pseudolab_core::Result<Vec<u32>> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path)?;
    let mut labels = vec![0u32; n];
    let mut seen = 0usize;
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let (idx, label) = line
            .split_once(',')
            .ok_or_else(|| Error::format(&display, "expected index,cluster_id"))?;
        let idx: usize = idx
            .trim()
            .parse()
            .map_err(|_| Error::format(&display, "bad index"))?;
        let label: u32 = label
            .trim()
            .parse()
            .map_err(|_| Error::format(&display, "bad cluster id"))?;
        if idx >= n {
            return Err(Error::format(&display, format!("index {idx} out of range")));
        }
        labels[idx] = label;
        seen += 1;
    }
    if seen != n {
        return Err(Error::format(
            &display,
            format!("expected {n} assignment lines, got {seen}"),
        ));
    }
    Ok(labels)
}

fn predicted_labels(
    params: &pseudolab_core::nn::ModelParams,
    corpus: &pseudolab_core::synth::Corpus,
) -> pseudolab_core::Result<Vec<u32>> {
    use pseudolab_core::clustering::argmax_assign;
    use pseudolab_core::nn::{encode, predict};
    corpus
        .train
        .iter()
        .map(|r| {
            let z = encode(params, &r.features)?;
            Ok(argmax_assign(&predict(params, &z)?))
        })
        .collect()
}
