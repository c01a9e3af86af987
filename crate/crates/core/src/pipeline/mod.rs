//! End-to-end orchestration: warm-up, the reflective loop, evaluation,
//! ablations, and per-epoch logging.

pub mod ablate;
pub mod config;
mod ssrl;

pub use ablate::{ablation_csv, ablation_matrix, AblationAxis, AblationRow};
pub use config::{ClusteringMode, KmeansSpace, LossChoice, PredictorInit, RunConfig};
pub use ssrl::{evaluate, resolve_corpus, ssrl_run, ssrl_run_with, warmup, SsrlOutput, WarmState};

use crate::error::{Error, Result};
use crate::nn::{save_checkpoint, ModelParams};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

/// One completed epoch, one JSONL line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_student_loss: f64,
    pub active_clusters: usize,
    pub nmi: f64,
    pub accuracy_pct: f64,
    pub purity_pct: f64,
    pub eer_pct: f64,
    pub min_dcf: f64,
    pub mean_p_clean: f64,
    pub ema_lambda: f64,
}

/// The evaluation bundle: clustering quality of the current labels and
/// verification quality of the embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSet {
    pub nmi: f64,
    pub accuracy_pct: f64,
    pub purity_pct: f64,
    pub active_clusters: usize,
    pub eer_pct: f64,
    pub min_dcf: f64,
}

impl MetricSet {
    pub fn csv_row(&self, epoch: usize) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            epoch,
            self.nmi,
            self.accuracy_pct,
            self.purity_pct,
            self.active_clusters,
            self.eer_pct,
            self.min_dcf
        )
    }
}

/// Receives per-epoch results as training runs; lets the caller flush logs
/// and checkpoints without the loop knowing about files.
pub trait EpochSink {
    fn on_epoch(&mut self, record: &EpochRecord, noise_line: Option<&str>) -> Result<()>;
    fn on_checkpoint(
        &mut self,
        epoch: usize,
        student: &ModelParams,
        teacher: &ModelParams,
    ) -> Result<()>;
}

/// Swallows everything; used by in-memory runs and tests.
pub struct NullSink;

impl EpochSink for NullSink {
    fn on_epoch(&mut self, _: &EpochRecord, _: Option<&str>) -> Result<()> {
        Ok(())
    }
    fn on_checkpoint(&mut self, _: usize, _: &ModelParams, _: &ModelParams) -> Result<()> {
        Ok(())
    }
}

/// Writes `epochs.jsonl`, `metrics.csv`, `noise_model.csv` and periodic
/// checkpoints into a run directory, flushing after every epoch.
pub struct DirSink {
    dir: PathBuf,
    epochs: std::io::BufWriter<std::fs::File>,
    metrics: std::io::BufWriter<std::fs::File>,
    noise: std::io::BufWriter<std::fs::File>,
}

impl DirSink {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let open = |name: &str| -> Result<std::io::BufWriter<std::fs::File>> {
            Ok(std::io::BufWriter::new(std::fs::File::create(
                dir.join(name),
            )?))
        };
        Ok(DirSink {
            dir: dir.to_path_buf(),
            epochs: open("epochs.jsonl")?,
            metrics: open("metrics.csv")?,
            noise: open("noise_model.csv")?,
        })
    }
}

impl EpochSink for DirSink {
    fn on_epoch(&mut self, record: &EpochRecord, noise_line: Option<&str>) -> Result<()> {
        let json = serde_json::to_string(record)
            .map_err(|e| Error::numerical(format!("cannot serialize epoch record: {e}")))?;
        writeln!(self.epochs, "{json}")?;
        let metrics = MetricSet {
            nmi: record.nmi,
            accuracy_pct: record.accuracy_pct,
            purity_pct: record.purity_pct,
            active_clusters: record.active_clusters,
            eer_pct: record.eer_pct,
            min_dcf: record.min_dcf,
        };
        writeln!(self.metrics, "{}", metrics.csv_row(record.epoch))?;
        if let Some(line) = noise_line {
            writeln!(self.noise, "{line}")?;
        }
        self.epochs.flush()?;
        self.metrics.flush()?;
        self.noise.flush()?;
        Ok(())
    }

    fn on_checkpoint(
        &mut self,
        epoch: usize,
        student: &ModelParams,
        teacher: &ModelParams,
    ) -> Result<()> {
        save_checkpoint(student, &self.dir.join(format!("student_ep{epoch:03}.ckpt")))?;
        save_checkpoint(teacher, &self.dir.join(format!("teacher_ep{epoch:03}.ckpt")))?;
        Ok(())
    }
}

/// A full training run: resolve the corpus, warm up, run the reflective
/// loop. With `out_dir` set, logs stream per epoch and the final state is
/// written (`student_final.ckpt`, `teacher_final.ckpt`, `assignments.txt`,
/// `resolved_config.toml`).
pub fn train_run(config: &RunConfig, out_dir: Option<&Path>) -> Result<SsrlOutput> {
    config.validate()?;
    let corpus = resolve_corpus(config)?;
    let warm = warmup(config, &corpus)?;
    let output = match out_dir {
        None => ssrl_run(config, &corpus, warm)?,
        Some(dir) => {
            let mut sink = DirSink::new(dir)?;
            let resolved = toml::to_string_pretty(config)
                .map_err(|e| Error::config(format!("cannot serialize config: {e}")))?;
            std::fs::write(dir.join("resolved_config.toml"), resolved)?;
            let output = ssrl_run_with(config, &corpus, warm, &mut sink)?;
            save_checkpoint(&output.student, &dir.join("student_final.ckpt"))?;
            save_checkpoint(&output.teacher, &dir.join("teacher_final.ckpt"))?;
            crate::clustering::write_assignments(&dir.join("assignments.txt"), &output.labels)?;
            output
        }
    };
    Ok(output)
}

/// Extracts the labeling-evolution curves from an `epochs.jsonl` log as CSV:
/// `epoch,active_clusters,nmi,accuracy_pct,purity_pct,eer_pct,min_dcf,
/// mean_p_clean,mean_student_loss`.
pub fn write_curves(log_path: &Path, out_path: &Path) -> Result<()> {
    let display = log_path.display().to_string();
    let file = std::io::BufReader::new(std::fs::File::open(log_path)?);
    let mut out = std::io::BufWriter::new(std::fs::File::create(out_path)?);
    writeln!(
        out,
        "epoch,active_clusters,nmi,accuracy_pct,purity_pct,eer_pct,min_dcf,mean_p_clean,mean_student_loss"
    )?;
    for line in file.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: EpochRecord = serde_json::from_str(&line)
            .map_err(|e| Error::format(&display, format!("bad epoch record: {e}")))?;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            record.epoch,
            record.active_clusters,
            record.nmi,
            record.accuracy_pct,
            record.purity_pct,
            record.eer_pct,
            record.min_dcf,
            record.mean_p_clean,
            record.mean_student_loss
        )?;
    }
    out.flush()?;
    Ok(())
}
