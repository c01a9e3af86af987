//! Warm-up and the reflective training loop.

use super::config::{ClusteringMode, KmeansSpace, PredictorInit, RunConfig};
use super::{EpochRecord, EpochSink, MetricSet};
use crate::clustering::{
    active_cluster_count, argmax_assign, kmeans, plan_labels, PosteriorBuffer, SinkhornSolver,
};
use crate::error::Result;
use crate::labeling::{teacher_loss, LabelQueue, TeacherLossTable};
use crate::metrics::{eer, hungarian_accuracy, mean_max_purity, min_dcf, nmi};
use crate::metrics::{cosine_score, DcfParams, LabelPair};
use crate::nn::{
    backward_and_step, cosine_lr, dropout_masks_for_widths, ema_update, encode, predict,
    AdamState, ModelParams, MomentumSchedule, ProbVector, TrainBatch,
};
use crate::par;
use crate::synth::{generate_corpus, load_corpus, stream_rng, teacher_view, Augmenter, Corpus};
use rand::seq::SliceRandom;
use std::path::Path;

const STREAM_TAG_INIT: u64 = 0x1217;
const STREAM_TAG_SHUFFLE: u64 = 0x54f1e;
const STREAM_TAG_DROPOUT: u64 = 0xd09;
/// Warm-up and reflective phases use disjoint augmentation epochs.
const AUG_EPOCH_OFFSET: usize = 1 << 20;

/// Student/teacher pair plus the initial pseudo labels, ready for the
/// reflective phase.
#[derive(Debug, Clone)]
pub struct WarmState {
    pub student: ModelParams,
    pub teacher: ModelParams,
    pub labels: Vec<u32>,
    /// Mean student loss over the last warm-up epoch (0 when E1 = 0).
    pub final_loss: f64,
}

/// Everything a finished run leaves behind.
#[derive(Debug, Clone)]
pub struct SsrlOutput {
    pub student: ModelParams,
    pub teacher: ModelParams,
    pub labels: Vec<u32>,
    pub records: Vec<EpochRecord>,
}

/// Loads the corpus from `corpus_path` or generates it from the inline spec.
pub fn resolve_corpus(config: &RunConfig) -> Result<Corpus> {
    if config.corpus_path.is_empty() {
        generate_corpus(&config.corpus)
    } else {
        load_corpus(Path::new(&config.corpus_path))
    }
}

/// K-means initial labels, predictor initialization, `E1` epochs of student
/// training on the frozen labels, then teacher = student.
pub fn warmup(config: &RunConfig, corpus: &Corpus) -> Result<WarmState> {
    config.validate()?;
    let input_dim = corpus.spec.input_dim;
    let mut student = ModelParams::init(
        &config.encoder_dims(input_dim),
        config.k_init,
        config.seed ^ STREAM_TAG_INIT,
    )?;

    let features: Vec<Vec<f64>> = corpus.train.iter().map(|r| r.features.clone()).collect();
    let kmeans_input: Vec<Vec<f64>> = match config.kmeans_space {
        KmeansSpace::Raw => features.clone(),
        KmeansSpace::Embedding => {
            par::map_indexed(&features, |_, x| encode(&student, x).expect("validated dims"))
        }
    };
    let model = kmeans(&kmeans_input, config.k_init, config.kmeans_iters, config.seed)?;
    let labels = model.assignment.clone();

    if config.predictor_init == PredictorInit::Centroid {
        init_predictor_from_centroids(&mut student, &features, &labels)?;
    }

    let trainer = PhaseTrainer::new(config, corpus);
    let mut opt = AdamState::new(&student);
    let batches = trainer.batches_per_epoch();
    let total_steps = config.warmup_epochs * batches;
    let mut step = 0usize;
    let mut final_loss = 0.0;
    let loss_kind = config.loss_kind_at(1);
    for epoch in 1..=config.warmup_epochs {
        let order = trainer.shuffled_indices(0, epoch);
        let mut epoch_loss = 0.0;
        for ids in order.chunks(config.batch_size) {
            let lr = cosine_lr(step, total_steps, config.warmup_lr_start, config.warmup_lr_end);
            let prepared = trainer.prepare_batch(ids, epoch, &labels, None);
            epoch_loss += prepared.step(&mut student, &mut opt, lr, loss_kind)?;
            step += 1;
        }
        final_loss = epoch_loss / batches as f64;
    }

    let teacher = student.clone();
    Ok(WarmState {
        student,
        teacher,
        labels,
        final_loss,
    })
}

/// Mean embedding of each initial cluster, written into the predictor rows;
/// biases zeroed. Clusters without members keep their random row.
fn init_predictor_from_centroids(
    student: &mut ModelParams,
    features: &[Vec<f64>],
    labels: &[u32],
) -> Result<()> {
    let embeddings: Vec<Vec<f64>> =
        par::map_indexed(features, |_, x| encode(student, x).expect("validated dims"));
    let k = student.num_clusters();
    let d = student.embedding_dim();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (z, &label) in embeddings.iter().zip(labels) {
        counts[label as usize] += 1;
        for (s, v) in sums[label as usize].iter_mut().zip(z) {
            *s += v;
        }
    }
    for c in 0..k {
        if counts[c] == 0 {
            continue;
        }
        for (j, s) in sums[c].iter().enumerate() {
            student.predictor.weight.set(c, j, s / counts[c] as f64);
        }
    }
    student.predictor.bias.iter_mut().for_each(|b| *b = 0.0);
    student.validate()
}

/// The reflective loop of `E2` epochs. Per batch: the student trains on the
/// current stored labels (weighted by clean probabilities), the teacher
/// relabels the batch through the configured online clustering, labels pass
/// through the queue, and the teacher records its own loss per sample. The
/// noise model refits once per epoch; its weights apply from the next epoch.
pub fn ssrl_run(config: &RunConfig, corpus: &Corpus, warm: WarmState) -> Result<SsrlOutput> {
    ssrl_run_with(config, corpus, warm, &mut super::NullSink)
}

pub fn ssrl_run_with(
    config: &RunConfig,
    corpus: &Corpus,
    warm: WarmState,
    sink: &mut dyn EpochSink,
) -> Result<SsrlOutput> {
    config.validate()?;
    let n = corpus.train.len();
    let WarmState {
        mut student,
        mut teacher,
        mut labels,
        final_loss,
    } = warm;

    let trainer = PhaseTrainer::new(config, corpus);
    let batches = trainer.batches_per_epoch();
    let total_steps = config.ssrl_epochs * batches;
    let momentum = MomentumSchedule::new(config.ema_start, config.ema_end);
    let mut opt = AdamState::new(&student);
    let mut queue = LabelQueue::new(n, config.queue_len);
    let mut loss_table = TeacherLossTable::new(n);
    let solver = SinkhornSolver::new(
        config.sinkhorn_lambda,
        config.sinkhorn_max_iters,
        config.sinkhorn_tol,
    )?;
    let mut buffer = match config.mode {
        ClusteringMode::Sinkhorn => Some(PosteriorBuffer::new(
            config.k_init,
            config.sinkhorn_batches,
            config.batch_size,
        )?),
        _ => None,
    };

    let mut records = Vec::with_capacity(config.ssrl_epochs + 1);
    let epoch0 = EpochRecord {
        epoch: 0,
        mean_student_loss: final_loss,
        ema_lambda: if config.use_ema { momentum.at(0, total_steps) } else { 0.0 },
        mean_p_clean: 1.0,
        ..epoch_record_from_metrics(0, &evaluate(&teacher, corpus, &labels)?)
    };
    sink.on_epoch(&epoch0, None)?;
    records.push(epoch0);

    let mut step = 0usize;
    for epoch in 1..=config.ssrl_epochs {
        let order = trainer.shuffled_indices(1, epoch);
        let mut epoch_loss = 0.0;
        let mut lambda = 0.0;
        for ids in order.chunks(config.batch_size) {
            // In naive mode the model labels itself from its own training
            // forward (augmented view, same dropout masks), before the
            // update.
            if config.mode == ClusteringMode::Naive {
                let posteriors = trainer.naive_posteriors(&student, ids, AUG_EPOCH_OFFSET + epoch);
                for (&i, view_p) in ids.iter().zip(&posteriors) {
                    let raw = argmax_assign(view_p);
                    let corrected = if config.use_queue {
                        queue.enqueue_and_correct(i, raw)
                    } else {
                        raw
                    };
                    labels[i] = corrected;
                    loss_table.record_loss(i, teacher_loss(view_p, corrected));
                }
            }

            let lr = cosine_lr(step, total_steps, config.lr_start, config.lr_end);
            let weights: Option<&[f64]> = config.use_gmm.then_some(&loss_table.p_clean[..]);
            let prepared = trainer.prepare_batch(ids, AUG_EPOCH_OFFSET + epoch, &labels, weights);
            let batch_loss = match prepared.step(
                &mut student,
                &mut opt,
                lr,
                config.loss_kind_at(epoch),
            ) {
                Ok(loss) => loss,
                Err(e) => {
                    // Leave a checkpoint of the state that failed.
                    sink.on_checkpoint(epoch, &student, &teacher)?;
                    return Err(e);
                }
            };
            epoch_loss += batch_loss;

            // Teacher pass on the clean views.
            match config.mode {
                ClusteringMode::Argmax => {
                    let posteriors = teacher_posteriors(&teacher, corpus, ids);
                    for (&i, p_t) in ids.iter().zip(&posteriors) {
                        let raw = argmax_assign(p_t);
                        let corrected = if config.use_queue {
                            queue.enqueue_and_correct(i, raw)
                        } else {
                            raw
                        };
                        labels[i] = corrected;
                        loss_table.record_loss(i, teacher_loss(p_t, corrected));
                    }
                }
                ClusteringMode::Sinkhorn => {
                    let posteriors = teacher_posteriors(&teacher, corpus, ids);
                    let buf = buffer.as_mut().unwrap();
                    let ready = buf.push_batch(&posteriors, ids)?;
                    if ready {
                        flush_sinkhorn(
                            buf,
                            &solver,
                            config,
                            &mut queue,
                            &mut labels,
                            &mut loss_table,
                        )?;
                    }
                }
                ClusteringMode::Naive => {}
            }

            lambda = if config.use_ema {
                momentum.at(step, total_steps)
            } else {
                0.0
            };
            ema_update(&mut teacher, &student, lambda)?;
            step += 1;
        }

        // Leftover columns (M not dividing the batch count) still get their
        // labels refreshed at epoch end when the solve stays feasible.
        if let Some(buf) = buffer.as_mut() {
            if !buf.is_empty() {
                if buf.width() >= buf.num_clusters() {
                    flush_sinkhorn(buf, &solver, config, &mut queue, &mut labels, &mut loss_table)?;
                } else {
                    buf.take();
                }
            }
        }

        let noise_line = if config.use_gmm {
            let model = loss_table.refresh_clean_probs();
            Some(crate::labeling::noise_model_csv_line(
                epoch,
                &model,
                loss_table.mean_p_clean(),
            ))
        } else {
            None
        };

        let metrics = evaluate(&teacher, corpus, &labels)?;
        let record = EpochRecord {
            epoch,
            mean_student_loss: epoch_loss / batches as f64,
            mean_p_clean: loss_table.mean_p_clean(),
            ema_lambda: lambda,
            ..epoch_record_from_metrics(epoch, &metrics)
        };
        sink.on_epoch(&record, noise_line.as_deref())?;
        records.push(record);
        if config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 {
            sink.on_checkpoint(epoch, &student, &teacher)?;
        }
    }

    Ok(SsrlOutput {
        student,
        teacher,
        labels,
        records,
    })
}

fn teacher_posteriors(teacher: &ModelParams, corpus: &Corpus, ids: &[usize]) -> Vec<ProbVector> {
    par::map_indexed(ids, |_, &i| {
        let z = encode(teacher, teacher_view(&corpus.train[i])).expect("validated dims");
        predict(teacher, &z).expect("finite logits")
    })
}

fn flush_sinkhorn(
    buffer: &mut PosteriorBuffer,
    solver: &SinkhornSolver,
    config: &RunConfig,
    queue: &mut LabelQueue,
    labels: &mut [u32],
    loss_table: &mut TeacherLossTable,
) -> Result<()> {
    let (p, indices) = buffer.take();
    let outcome = solver.solve(&p)?;
    if !outcome.converged {
        eprintln!(
            "warning: sinkhorn stopped at {} iterations with marginal violation {:.3e}",
            outcome.iterations, outcome.max_violation
        );
    }
    let assigned = plan_labels(&outcome.q);
    let width = p.cols() as f64;
    for (col, (&i, &raw)) in indices.iter().zip(&assigned).enumerate() {
        let corrected = if config.use_queue {
            queue.enqueue_and_correct(i, raw)
        } else {
            raw
        };
        labels[i] = corrected;
        // Column col holds the teacher posterior scaled by 1/width.
        let prob = p.get(corrected as usize, col) * width;
        loss_table.record_loss(i, -prob.max(crate::nn::LOG_EPS).ln());
    }
    Ok(())
}

/// Clustering metrics on the stored labels plus verification metrics on the
/// held-out trials, scored with teacher-encoder embeddings. Pure.
pub fn evaluate(params: &ModelParams, corpus: &Corpus, labels: &[u32]) -> Result<MetricSet> {
    let truth: Vec<u32> = corpus.train.iter().map(|r| r.speaker).collect();
    let pair = LabelPair::new(labels, &truth)?;

    let eval_embeddings: Vec<Vec<f64>> =
        par::map_indexed(&corpus.eval, |_, r| encode(params, &r.features))
            .into_iter()
            .collect::<Result<_>>()?;
    let base = corpus.train.len();
    let scored: Vec<Result<f64>> = par::map_indexed(&corpus.trials.trials, |_, &(a, b, _)| {
        cosine_score(&eval_embeddings[a - base], &eval_embeddings[b - base])
    });
    let mut scores = Vec::with_capacity(scored.len());
    for s in scored {
        scores.push(s?);
    }
    let targets: Vec<bool> = corpus.trials.trials.iter().map(|t| t.2).collect();

    Ok(MetricSet {
        nmi: nmi(&pair),
        accuracy_pct: hungarian_accuracy(&pair),
        purity_pct: mean_max_purity(&pair),
        active_clusters: active_cluster_count(labels),
        eer_pct: eer(&scores, &targets)?,
        min_dcf: min_dcf(&scores, &targets, DcfParams::default())?,
    })
}

fn epoch_record_from_metrics(epoch: usize, m: &MetricSet) -> EpochRecord {
    EpochRecord {
        epoch,
        mean_student_loss: 0.0,
        active_clusters: m.active_clusters,
        nmi: m.nmi,
        accuracy_pct: m.accuracy_pct,
        purity_pct: m.purity_pct,
        eer_pct: m.eer_pct,
        min_dcf: m.min_dcf,
        mean_p_clean: 1.0,
        ema_lambda: 0.0,
    }
}

/// Shared batch assembly for both phases: augmented views plus per-sample
/// dropout masks, all drawn from (phase, epoch, sample)-indexed streams.
struct PhaseTrainer<'a> {
    config: &'a RunConfig,
    corpus: &'a Corpus,
    augmenter: Augmenter,
}

struct PreparedBatch {
    views: Vec<Vec<f64>>,
    labels: Vec<u32>,
    weights: Vec<f64>,
    dropout: Option<Vec<Vec<Vec<f64>>>>,
}

impl<'a> PhaseTrainer<'a> {
    fn new(config: &'a RunConfig, corpus: &'a Corpus) -> Self {
        let noise_std = config.aug_strength * corpus.spec.sigma_w;
        PhaseTrainer {
            config,
            corpus,
            augmenter: Augmenter::new(
                noise_std,
                config.aug_mask_fraction,
                config.aug_probability,
                config.seed,
                corpus.train.len(),
            ),
        }
    }

    fn batches_per_epoch(&self) -> usize {
        self.corpus.train.len().div_ceil(self.config.batch_size)
    }

    /// Deterministic per-epoch sample order; `phase` keeps warm-up and
    /// reflective shuffles on separate streams.
    fn shuffled_indices(&self, phase: u64, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.corpus.train.len()).collect();
        let mut rng = stream_rng(
            self.config.seed,
            STREAM_TAG_SHUFFLE ^ (phase << 48),
            epoch as u64,
        );
        order.shuffle(&mut rng);
        order
    }

    fn student_views(&self, ids: &[usize], aug_epoch: usize) -> Vec<Vec<f64>> {
        par::map_indexed(ids, |_, &i| {
            self.augmenter.student_view(&self.corpus.train[i], aug_epoch)
        })
    }

    /// Posteriors of the student's own training forward: same augmented
    /// views and the same dropout masks the following step trains on.
    fn naive_posteriors(
        &self,
        student: &ModelParams,
        ids: &[usize],
        aug_epoch: usize,
    ) -> Vec<ProbVector> {
        par::map_indexed(ids, |_, &i| {
            let view = self.augmenter.student_view(&self.corpus.train[i], aug_epoch);
            let masks = (self.config.dropout > 0.0).then(|| self.dropout_masks(aug_epoch, i));
            let trace = crate::nn::forward_trace(student, &view, masks.as_deref())
                .expect("validated dims");
            predict(student, &trace.embedding).expect("finite logits")
        })
    }

    fn dropout_masks(&self, aug_epoch: usize, sample: usize) -> Vec<Vec<f64>> {
        let mut rng = stream_rng(
            self.config.seed,
            STREAM_TAG_DROPOUT,
            (aug_epoch * self.corpus.train.len() + sample) as u64,
        );
        dropout_masks_for_widths(&self.config.hidden_dims, self.config.dropout, &mut rng)
    }

    fn prepare_batch(
        &self,
        ids: &[usize],
        aug_epoch: usize,
        labels: &[u32],
        clean_probs: Option<&[f64]>,
    ) -> PreparedBatch {
        let views = self.student_views(ids, aug_epoch);
        let batch_labels: Vec<u32> = ids.iter().map(|&i| labels[i]).collect();
        let weights: Vec<f64> = match clean_probs {
            Some(p) => ids.iter().map(|&i| p[i]).collect(),
            None => vec![1.0; ids.len()],
        };
        let dropout = (self.config.dropout > 0.0)
            .then(|| ids.iter().map(|&i| self.dropout_masks(aug_epoch, i)).collect());
        PreparedBatch {
            views,
            labels: batch_labels,
            weights,
            dropout,
        }
    }
}

impl PreparedBatch {
    fn step(
        &self,
        params: &mut ModelParams,
        opt: &mut AdamState,
        lr: f64,
        kind: crate::nn::LossKind,
    ) -> Result<f64> {
        let batch = TrainBatch {
            inputs: &self.views,
            labels: &self.labels,
            weights: &self.weights,
            dropout: self.dropout.as_deref(),
        };
        backward_and_step(params, opt, lr, &batch, kind)
    }
}
