//! Ablation sweeps: run the same seed across one varied axis and tabulate
//! the final metrics side by side.

use super::config::{ClusteringMode, RunConfig};
use super::{resolve_corpus, ssrl_run, warmup, MetricSet};
use crate::error::{Error, Result};

/// One swept axis. Values come from the CLI as `--axis name=v1,v2,...`.
#[derive(Debug, Clone, PartialEq)]
pub enum AblationAxis {
    /// Component toggle sets: `full`, `no_ema`, `no_queue`, `no_gmm`,
    /// `none`, `naive`.
    Toggles(Vec<String>),
    /// Pseudo-label queue lengths.
    QueueLen(Vec<usize>),
    /// Initial cluster counts.
    KInit(Vec<usize>),
    /// Online clustering modes.
    Mode(Vec<ClusteringMode>),
}

impl AblationAxis {
    pub fn parse(text: &str) -> Result<Self> {
        let (name, values) = text
            .split_once('=')
            .ok_or_else(|| Error::config("axis must look like name=v1,v2,..."))?;
        let values: Vec<&str> = values.split(',').map(str::trim).collect();
        if values.is_empty() || values.iter().any(|v| v.is_empty()) {
            return Err(Error::config("axis needs at least one value"));
        }
        match name.trim() {
            "toggles" => {
                for v in &values {
                    if !["full", "no_ema", "no_queue", "no_gmm", "none", "naive"].contains(v) {
                        return Err(Error::config(format!("unknown toggle set `{v}`")));
                    }
                }
                Ok(AblationAxis::Toggles(
                    values.iter().map(|v| v.to_string()).collect(),
                ))
            }
            "queue" => Ok(AblationAxis::QueueLen(parse_usizes(&values)?)),
            "k_init" => Ok(AblationAxis::KInit(parse_usizes(&values)?)),
            "mode" => {
                let modes = values
                    .iter()
                    .map(|v| match *v {
                        "argmax" => Ok(ClusteringMode::Argmax),
                        "sinkhorn" => Ok(ClusteringMode::Sinkhorn),
                        "naive" => Ok(ClusteringMode::Naive),
                        other => Err(Error::config(format!("unknown mode `{other}`"))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(AblationAxis::Mode(modes))
            }
            other => Err(Error::config(format!(
                "unknown axis `{other}` (expected toggles, queue, k_init or mode)"
            ))),
        }
    }

    /// The configurations this axis expands into, labeled.
    pub fn variants(&self, base: &RunConfig) -> Vec<(String, RunConfig)> {
        match self {
            AblationAxis::Toggles(names) => names
                .iter()
                .map(|name| {
                    let mut config = base.clone();
                    match name.as_str() {
                        "full" => {
                            config.use_ema = true;
                            config.use_queue = true;
                            config.use_gmm = true;
                        }
                        "no_ema" => config.use_ema = false,
                        "no_queue" => {
                            config.use_queue = false;
                            config.queue_len = 1;
                        }
                        "no_gmm" => config.use_gmm = false,
                        "none" => {
                            config.use_ema = false;
                            config.use_queue = false;
                            config.queue_len = 1;
                            config.use_gmm = false;
                        }
                        "naive" => {
                            config.use_ema = false;
                            config.use_queue = false;
                            config.queue_len = 1;
                            config.use_gmm = false;
                            config.mode = ClusteringMode::Naive;
                        }
                        _ => unreachable!("validated in parse"),
                    }
                    (format!("toggles={name}"), config)
                })
                .collect(),
            AblationAxis::QueueLen(values) => values
                .iter()
                .map(|&l| {
                    let mut config = base.clone();
                    config.queue_len = l;
                    config.use_queue = true;
                    (format!("queue={l}"), config)
                })
                .collect(),
            AblationAxis::KInit(values) => values
                .iter()
                .map(|&k| {
                    let mut config = base.clone();
                    config.k_init = k;
                    (format!("k_init={k}"), config)
                })
                .collect(),
            AblationAxis::Mode(modes) => modes
                .iter()
                .map(|&m| {
                    let mut config = base.clone();
                    config.mode = m;
                    let name = match m {
                        ClusteringMode::Argmax => "argmax",
                        ClusteringMode::Sinkhorn => "sinkhorn",
                        ClusteringMode::Naive => "naive",
                    };
                    (format!("mode={name}"), config)
                })
                .collect(),
        }
    }
}

fn parse_usizes(values: &[&str]) -> Result<Vec<usize>> {
    values
        .iter()
        .map(|v| {
            v.parse()
                .map_err(|_| Error::config(format!("bad axis value `{v}`")))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub label: String,
    pub metrics: MetricSet,
}

/// Runs every variant on the shared corpus and seed. A single-variant axis
/// degenerates to one plain run.
pub fn ablation_matrix(base: &RunConfig, axis: &AblationAxis) -> Result<Vec<AblationRow>> {
    let corpus = resolve_corpus(base)?;
    let mut rows = Vec::new();
    for (label, config) in axis.variants(base) {
        config.validate()?;
        let warm = warmup(&config, &corpus)?;
        let output = ssrl_run(&config, &corpus, warm)?;
        let metrics = super::evaluate(&output.teacher, &corpus, &output.labels)?;
        rows.push(AblationRow { label, metrics });
    }
    Ok(rows)
}

/// Table layout: one row per configuration with the verification and
/// labeling columns plus the converged cluster count.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("config,eer_pct,min_dcf,nmi,accuracy_pct,purity_pct,converged_clusters\n");
    for row in rows {
        let m = &row.metrics;
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.label, m.eer_pct, m.min_dcf, m.nmi, m.accuracy_pct, m.purity_pct, m.active_clusters
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_parsing() {
        assert_eq!(
            AblationAxis::parse("queue=1,5,10,20").unwrap(),
            AblationAxis::QueueLen(vec![1, 5, 10, 20])
        );
        assert_eq!(
            AblationAxis::parse("mode=argmax,sinkhorn").unwrap(),
            AblationAxis::Mode(vec![ClusteringMode::Argmax, ClusteringMode::Sinkhorn])
        );
        assert!(AblationAxis::parse("nope=1").is_err());
        assert!(AblationAxis::parse("queue=abc").is_err());
        assert!(AblationAxis::parse("toggles=bogus").is_err());
    }

    #[test]
    fn toggle_variants_flip_the_right_switches() {
        let base = RunConfig::default();
        let axis = AblationAxis::parse("toggles=full,no_ema,no_queue,no_gmm,naive").unwrap();
        let variants = axis.variants(&base);
        assert_eq!(variants.len(), 5);
        assert!(variants[0].1.use_ema && variants[0].1.use_queue && variants[0].1.use_gmm);
        assert!(!variants[1].1.use_ema);
        assert!(!variants[2].1.use_queue && variants[2].1.queue_len == 1);
        assert!(!variants[3].1.use_gmm);
        assert_eq!(variants[4].1.mode, ClusteringMode::Naive);
        assert!(!variants[4].1.use_ema);
    }
}
