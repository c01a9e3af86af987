//! Seeded synthetic "speaker" corpus: Gaussian blobs around means drawn on a
//! sphere, with a clean teacher view and a noised/masked student view
//! standing in for long-clean vs short-augmented audio crops.

use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

const STREAM_TAG_SPEAKER: u64 = 0x5b10c0;
const STREAM_TAG_TRIALS: u64 = 0x791a15;
const STREAM_TAG_AUGMENT: u64 = 0xa06a11;

/// ChaCha stream keyed by `(seed ^ tag, stream)`; every consumer of
/// randomness in the corpus gets its own independent, reproducible stream.
pub(crate) fn stream_rng(seed: u64, tag: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ tag);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSpec {
    /// Number of hidden "speakers" S.
    pub num_speakers: usize,
    /// Training utterances per speaker n.
    pub utterances_per_speaker: usize,
    /// Ambient feature dimension.
    pub input_dim: usize,
    /// Within-speaker spread (utterance noise std).
    pub sigma_w: f64,
    /// Between-speaker spread (radius of the sphere holding speaker means).
    pub sigma_b: f64,
    /// Held-out utterances per speaker used only for verification trials.
    pub eval_per_speaker: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            num_speakers: 50,
            utterances_per_speaker: 40,
            input_dim: 32,
            sigma_w: 1.0,
            sigma_b: 5.0,
            eval_per_speaker: 4,
            seed: 7,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_speakers < 2 || self.utterances_per_speaker < 2 {
            return Err(Error::config("need at least 2 speakers and 2 utterances"));
        }
        if self.input_dim == 0 {
            return Err(Error::config("input_dim must be positive"));
        }
        if self.sigma_w <= 0.0 || self.sigma_b <= self.sigma_w {
            return Err(Error::config("need sigma_b > sigma_w > 0"));
        }
        if self.eval_per_speaker < 2 {
            return Err(Error::config("need at least 2 eval utterances per speaker"));
        }
        Ok(())
    }

    pub fn train_size(&self) -> usize {
        self.num_speakers * self.utterances_per_speaker
    }
}

/// One synthetic utterance. The speaker id is ground truth for evaluation
/// only; training code never reads it.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub index: usize,
    pub features: Vec<f64>,
    pub speaker: u32,
}

/// Verification trials over held-out samples: `(index_a, index_b, is_target)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialList {
    pub trials: Vec<(usize, usize, bool)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub spec: CorpusSpec,
    pub train: Vec<SampleRecord>,
    pub eval: Vec<SampleRecord>,
    pub trials: TrialList,
}

/// All utterances of one speaker, fully determined by `(spec, stream)`.
/// Permuting stream ids across speakers permutes the generated blocks.
pub fn speaker_block(spec: &CorpusSpec, stream: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = stream_rng(spec.seed, STREAM_TAG_SPEAKER, stream);
    let mut mean: Vec<f64> = (0..spec.input_dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let norm = crate::linalg::norm(&mean).max(1e-12);
    for v in &mut mean {
        *v *= spec.sigma_b / norm;
    }
    let mut draw = |count: usize| -> Vec<Vec<f64>> {
        (0..count)
            .map(|_| {
                mean.iter()
                    .map(|m| m + spec.sigma_w * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect()
    };
    let train = draw(spec.utterances_per_speaker);
    let eval = draw(spec.eval_per_speaker);
    (train, eval)
}

/// Generates the full corpus: `S*n` training records, `S*eval_per_speaker`
/// held-out records, and a balanced trial list over the held-out part.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut train = Vec::with_capacity(spec.train_size());
    let mut eval = Vec::new();
    for s in 0..spec.num_speakers {
        let (train_feats, eval_feats) = speaker_block(spec, s as u64);
        for f in train_feats {
            train.push(SampleRecord {
                index: train.len(),
                features: f,
                speaker: s as u32,
            });
        }
        for f in eval_feats {
            eval.push(SampleRecord {
                index: spec.train_size() + eval.len(),
                features: f,
                speaker: s as u32,
            });
        }
    }

    // Targets: every same-speaker pair among the held-out utterances.
    let mut trials = Vec::new();
    let e = spec.eval_per_speaker;
    for s in 0..spec.num_speakers {
        let base = s * e;
        for i in 0..e {
            for j in (i + 1)..e {
                trials.push((eval[base + i].index, eval[base + j].index, true));
            }
        }
    }
    // Non-targets: seeded cross-speaker pairs, one per target.
    let num_targets = trials.len();
    let mut rng = stream_rng(spec.seed, STREAM_TAG_TRIALS, 0);
    while trials.len() < 2 * num_targets {
        let a = rng.gen_range(0..eval.len());
        let b = rng.gen_range(0..eval.len());
        if eval[a].speaker != eval[b].speaker {
            trials.push((eval[a].index, eval[b].index, false));
        }
    }
    Ok(Corpus {
        spec: spec.clone(),
        train,
        eval,
        trials: TrialList { trials },
    })
}

/// The clean stored feature vector; what the teacher always sees.
pub fn teacher_view(record: &SampleRecord) -> &[f64] {
    &record.features
}

/// Additive noise plus coordinate masking applied with `probability`;
/// the (epoch, sample) pair indexes an independent RNG stream so any batch
/// order reproduces the same views.
#[derive(Debug, Clone)]
pub struct Augmenter {
    pub noise_std: f64,
    pub mask_fraction: f64,
    pub probability: f64,
    pub seed: u64,
    num_streams_per_epoch: u64,
}

impl Augmenter {
    pub fn new(
        noise_std: f64,
        mask_fraction: f64,
        probability: f64,
        seed: u64,
        num_samples: usize,
    ) -> Self {
        Augmenter {
            noise_std,
            mask_fraction,
            probability,
            seed,
            num_streams_per_epoch: num_samples as u64,
        }
    }

    pub fn student_view(&self, record: &SampleRecord, epoch: usize) -> Vec<f64> {
        let stream = epoch as u64 * self.num_streams_per_epoch + record.index as u64;
        let mut rng = stream_rng(self.seed, STREAM_TAG_AUGMENT, stream);
        student_view_with(
            record,
            self.noise_std,
            self.mask_fraction,
            self.probability,
            &mut rng,
        )
    }
}

/// Augmented student view with caller-supplied randomness.
pub fn student_view_with(
    record: &SampleRecord,
    noise_std: f64,
    mask_fraction: f64,
    probability: f64,
    rng: &mut impl Rng,
) -> Vec<f64> {
    if noise_std == 0.0 && mask_fraction == 0.0 {
        return record.features.clone();
    }
    if rng.gen::<f64>() >= probability {
        return record.features.clone();
    }
    record
        .features
        .iter()
        .map(|&v| {
            let noised = v + noise_std * rng.sample::<f64, _>(StandardNormal);
            if mask_fraction > 0.0 && rng.gen::<f64>() < mask_fraction {
                0.0
            } else {
                noised
            }
        })
        .collect()
}

/// Writes `corpus.csv` (header `S,n,D_in,seed`, then `index,speaker,f1..fD`
/// rows, training records first) and `trials.csv` (`idx_a,idx_b,is_target`).
pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut file = std::io::BufWriter::new(std::fs::File::create(dir.join("corpus.csv"))?);
    let spec = &corpus.spec;
    writeln!(
        file,
        "{},{},{},{}",
        spec.num_speakers, spec.utterances_per_speaker, spec.input_dim, spec.seed
    )?;
    for record in corpus.train.iter().chain(&corpus.eval) {
        write!(file, "{},{}", record.index, record.speaker)?;
        for v in &record.features {
            write!(file, ",{v}")?;
        }
        writeln!(file)?;
    }
    file.flush()?;

    let mut file = std::io::BufWriter::new(std::fs::File::create(dir.join("trials.csv"))?);
    for (a, b, target) in &corpus.trials.trials {
        writeln!(file, "{a},{b},{}", u8::from(*target))?;
    }
    file.flush()?;

    let spec_text = toml::to_string_pretty(spec)
        .map_err(|e| Error::config(format!("cannot serialize corpus spec: {e}")))?;
    std::fs::write(dir.join("spec.toml"), spec_text)?;
    Ok(())
}

pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let corpus_path = dir.join("corpus.csv");
    let display = corpus_path.display().to_string();
    let file = std::io::BufReader::new(std::fs::File::open(&corpus_path)?);
    let mut lines = file.lines();

    let header = lines
        .next()
        .ok_or_else(|| Error::format(&display, "empty corpus file"))??;
    let head: Vec<&str> = header.split(',').collect();
    if head.len() != 4 {
        return Err(Error::format(&display, "header must be S,n,D_in,seed"));
    }
    let parse = |s: &str| -> Result<u64> {
        s.trim()
            .parse()
            .map_err(|_| Error::format(&display, format!("bad header value `{s}`")))
    };
    let (s, n, d_in, seed) = (
        parse(head[0])? as usize,
        parse(head[1])? as usize,
        parse(head[2])? as usize,
        parse(head[3])?,
    );

    // Prefer the sibling spec.toml (written by save_corpus) for the spread
    // parameters the header cannot carry.
    let mut spec = match std::fs::read_to_string(dir.join("spec.toml")) {
        Ok(text) => toml::from_str(&text)
            .map_err(|e| Error::format(dir.join("spec.toml").display().to_string(), e.to_string()))?,
        Err(_) => CorpusSpec::default(),
    };
    spec.num_speakers = s;
    spec.utterances_per_speaker = n;
    spec.input_dim = d_in;
    spec.seed = seed;

    let mut train = Vec::new();
    let mut eval = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 + d_in {
            return Err(Error::format(
                &display,
                format!("expected {} fields, got {}", 2 + d_in, fields.len()),
            ));
        }
        let index: usize = fields[0]
            .parse()
            .map_err(|_| Error::format(&display, "bad index"))?;
        let speaker: u32 = fields[1]
            .parse()
            .map_err(|_| Error::format(&display, "bad speaker id"))?;
        let features: Vec<f64> = fields[2..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::format(&display, "bad feature value"))?;
        let record = SampleRecord {
            index,
            features,
            speaker,
        };
        if index < s * n {
            train.push(record);
        } else {
            eval.push(record);
        }
    }
    if train.len() != s * n {
        return Err(Error::format(
            &display,
            format!("expected {} training rows, got {}", s * n, train.len()),
        ));
    }
    spec.eval_per_speaker = eval.len() / s.max(1);

    let trials_path = dir.join("trials.csv");
    let tdisplay = trials_path.display().to_string();
    let mut trials = Vec::new();
    let file = std::io::BufReader::new(std::fs::File::open(&trials_path)?);
    for line in file.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::format(&tdisplay, "expected idx_a,idx_b,is_target"));
        }
        let a: usize = fields[0]
            .parse()
            .map_err(|_| Error::format(&tdisplay, "bad index"))?;
        let b: usize = fields[1]
            .parse()
            .map_err(|_| Error::format(&tdisplay, "bad index"))?;
        let target = match fields[2].trim() {
            "1" => true,
            "0" => false,
            other => {
                return Err(Error::format(&tdisplay, format!("bad target flag `{other}`")))
            }
        };
        trials.push((a, b, target));
    }
    Ok(Corpus {
        spec,
        train,
        eval,
        trials: TrialList { trials },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{cosine_score, hungarian_accuracy, LabelPair};

    fn small_spec() -> CorpusSpec {
        CorpusSpec {
            num_speakers: 6,
            utterances_per_speaker: 8,
            input_dim: 10,
            eval_per_speaker: 3,
            seed: 3,
            ..CorpusSpec::default()
        }
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let spec = small_spec();
        let a = generate_corpus(&spec).unwrap();
        let b = generate_corpus(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tiny_within_spread_pushes_cosines_to_one() {
        let spec = CorpusSpec {
            sigma_w: 1e-9,
            sigma_b: 1.0,
            ..small_spec()
        };
        let corpus = generate_corpus(&spec).unwrap();
        for pair in corpus.train.chunks(spec.utterances_per_speaker) {
            let c = cosine_score(&pair[0].features, &pair[1].features).unwrap();
            assert!(c > 1.0 - 1e-9, "cosine {c}");
        }
    }

    #[test]
    fn default_ratio_supports_raw_feature_kmeans() {
        let spec = CorpusSpec::default();
        let corpus = generate_corpus(&spec).unwrap();
        let points: Vec<Vec<f64>> = corpus.train.iter().map(|r| r.features.clone()).collect();
        let truth: Vec<u32> = corpus.train.iter().map(|r| r.speaker).collect();
        let model = crate::clustering::kmeans(&points, spec.num_speakers, 100, 0).unwrap();
        let pair = LabelPair::new(&model.assignment, &truth).unwrap();
        let acc = hungarian_accuracy(&pair);
        assert!(acc > 90.0, "raw-feature kmeans accuracy {acc}");
    }

    #[test]
    fn teacher_view_is_the_stored_feature() {
        let corpus = generate_corpus(&small_spec()).unwrap();
        let r = &corpus.train[5];
        assert_eq!(teacher_view(r), r.features.as_slice());
        assert_eq!(teacher_view(r), teacher_view(r));
    }

    #[test]
    fn zero_augmentation_equals_teacher_view() {
        let corpus = generate_corpus(&small_spec()).unwrap();
        let aug = Augmenter::new(0.0, 0.0, 2.0 / 3.0, 9, corpus.train.len());
        for r in corpus.train.iter().take(10) {
            assert_eq!(aug.student_view(r, 0), r.features);
        }
    }

    #[test]
    fn student_view_is_reproducible_per_epoch_and_sample() {
        let corpus = generate_corpus(&small_spec()).unwrap();
        let aug = Augmenter::new(0.5, 0.1, 2.0 / 3.0, 9, corpus.train.len());
        let r = &corpus.train[3];
        assert_eq!(aug.student_view(r, 4), aug.student_view(r, 4));
        assert_ne!(aug.student_view(r, 4), aug.student_view(r, 5));
    }

    #[test]
    fn expected_squared_distortion_tracks_noise_scale() {
        let spec = small_spec();
        let corpus = generate_corpus(&spec).unwrap();
        let record = &corpus.train[0];
        let noise_std = 0.7 * spec.sigma_w;
        let mut rng = stream_rng(11, STREAM_TAG_AUGMENT, 0);
        let draws = 10_000;
        let mut total = 0.0;
        for _ in 0..draws {
            let view = student_view_with(record, noise_std, 0.0, 1.0, &mut rng);
            total += crate::linalg::squared_distance(&view, &record.features);
        }
        let got = total / draws as f64;
        let want = spec.input_dim as f64 * noise_std * noise_std;
        assert!(
            (got - want).abs() / want < 0.1,
            "distortion {got}, expected {want}"
        );
    }

    #[test]
    fn augmentation_fires_at_the_configured_rate() {
        let corpus = generate_corpus(&small_spec()).unwrap();
        let aug = Augmenter::new(0.5, 0.0, 2.0 / 3.0, 13, corpus.train.len());
        let record = &corpus.train[1];
        let mut changed = 0;
        let epochs = 10_000;
        for epoch in 0..epochs {
            if aug.student_view(record, epoch) != record.features {
                changed += 1;
            }
        }
        let rate = changed as f64 / epochs as f64;
        assert!((rate - 2.0 / 3.0).abs() < 0.02, "rate {rate}");
    }

    #[test]
    fn speaker_blocks_permute_with_their_streams() {
        let spec = small_spec();
        let a5 = speaker_block(&spec, 5);
        let a9 = speaker_block(&spec, 9);
        // Swapping stream ids swaps blocks and changes nothing else.
        assert_eq!(speaker_block(&spec, 9), a9);
        assert_eq!(speaker_block(&spec, 5), a5);
        assert_ne!(a5, a9);
    }

    #[test]
    fn corpus_round_trips_through_files() {
        let corpus = generate_corpus(&small_spec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_corpus(&corpus, dir.path()).unwrap();
        let loaded = load_corpus(dir.path()).unwrap();
        assert_eq!(loaded, corpus);
    }

    #[test]
    fn trials_are_balanced_and_consistent() {
        let corpus = generate_corpus(&small_spec()).unwrap();
        let targets = corpus.trials.trials.iter().filter(|t| t.2).count();
        let non = corpus.trials.trials.len() - targets;
        assert_eq!(targets, non);
        let by_index: std::collections::HashMap<usize, u32> = corpus
            .eval
            .iter()
            .map(|r| (r.index, r.speaker))
            .collect();
        for &(a, b, target) in &corpus.trials.trials {
            assert_eq!(by_index[&a] == by_index[&b], target);
        }
    }

    #[test]
    fn invalid_spec_is_rejected() {
        let mut spec = small_spec();
        spec.sigma_b = 0.5;
        assert!(generate_corpus(&spec).is_err());
    }
}
