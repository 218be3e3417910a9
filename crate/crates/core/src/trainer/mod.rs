//! Two-stage incremental training: a clean stage from scratch, then a stage
//! on the resized corpus that continues from the first stage's checkpoint.

mod checkpoint;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, RngState,
    SPWC_MAGIC, SPWC_VERSION,
};

use crate::corpus::{Manifest, UtteranceRecord};
use crate::embedder::{
    optimizer_step, AdamConfig, AdamState, Embedder, EmbedderConfig, EmbedderError, ModelParams,
};
use crate::features::{feature_path, read_features, CmvnAccumulator, FeatureError};
use crate::pool;

const VALID_SALT: u64 = 0x7661_6c69_6473_706c;
const INIT_SALT: u64 = 0x696e_6974_7061_7261;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid stage plan: {0}")]
    InvalidPlan(String),
    #[error("stage 2 requires a stage-1 checkpoint to continue from")]
    MissingInit,
    #[error("cannot continue a stage-{found} checkpoint as stage {requested}")]
    StageOrder { found: u8, requested: u8 },
    #[error("utterance {utt_id}: speaker {speaker_id} is not in the checkpoint's label map")]
    UnknownSpeaker { utt_id: String, speaker_id: String },
    #[error("utterance {utt_id}: missing features at {}", path.display())]
    MissingFeatures { utt_id: String, path: PathBuf },
    #[error("utterance {utt_id}: {source}")]
    Features {
        utt_id: String,
        #[source]
        source: FeatureError,
    },
    #[error("utterance {utt_id}: {frames} frames is below the receptive field of {needed}")]
    UtteranceTooShort {
        utt_id: String,
        frames: usize,
        needed: usize,
    },
    #[error("config mismatch on {field}: expected {expected}, checkpoint has {found}")]
    ConfigMismatch {
        field: String,
        expected: String,
        found: String,
    },
    #[error("{}: bad magic {found:?} (expected \"SPWC\")", path.display())]
    BadMagic { path: PathBuf, found: [u8; 4] },
    #[error("{}: unsupported checkpoint version {found}", path.display())]
    VersionMismatch { path: PathBuf, found: u32 },
    #[error("{}: truncated at byte {offset} (needed {needed} more)", path.display())]
    Truncated {
        path: PathBuf,
        offset: usize,
        needed: usize,
    },
    #[error("{}: malformed checkpoint: {message}", path.display())]
    Malformed { path: PathBuf, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("training diverged: non-finite loss at epoch {epoch}")]
    Diverged { epoch: u32 },
    #[error(transparent)]
    Embedder(#[from] EmbedderError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StagePlan {
    pub stage_id: u8,
    pub manifest_label: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub chunk_frames: usize,
    pub lr: f64,
    pub seed: u64,
    pub valid_fraction: f64,
}

impl StagePlan {
    pub fn stage1(manifest_label: impl Into<String>, seed: u64) -> Self {
        Self {
            stage_id: 1,
            manifest_label: manifest_label.into(),
            epochs: 10,
            batch_size: 32,
            chunk_frames: 200,
            lr: 1e-3,
            seed,
            valid_fraction: 0.05,
        }
    }

    pub fn stage2(manifest_label: impl Into<String>, seed: u64) -> Self {
        Self {
            stage_id: 2,
            epochs: 2,
            ..Self::stage1(manifest_label, seed)
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidPlan(m));
        if !(self.stage_id == 1 || self.stage_id == 2) {
            return bad(format!("stage_id {} is not 1 or 2", self.stage_id));
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.chunk_frames == 0 {
            return bad("chunk_frames must be >= 1".into());
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("lr {} must be positive", self.lr));
        }
        if !(self.valid_fraction > 0.0 && self.valid_fraction < 1.0) {
            return bad(format!(
                "valid_fraction {} outside (0, 1)",
                self.valid_fraction
            ));
        }
        Ok(())
    }
}

/// Per-epoch mean losses. `epochs` holds the absolute epoch numbers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossCurve {
    pub stage_id: u8,
    pub initial_loss: f64,
    pub epochs: Vec<u32>,
    pub train: Vec<f64>,
    pub valid: Vec<f64>,
}

impl LossCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,valid_loss\n");
        for i in 0..self.train.len() {
            s.push_str(&format!(
                "{},{},{}\n",
                self.epochs[i], self.train[i], self.valid[i]
            ));
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        let path = path.as_ref();
        fs::File::create(path)
            .and_then(|mut f| f.write_all(self.to_csv().as_bytes()))
            .map_err(|source| TrainError::Io {
                path: path.to_path_buf(),
                source,
            })
    }
}

pub enum Init {
    /// Fresh model; `input_dim` and `n_classes` are filled from the data.
    Fresh(EmbedderConfig),
    Resume(Checkpoint),
}

struct Example {
    features: Array2<f64>,
    label: usize,
}

fn load_raw(
    manifest: &Manifest,
    feature_dir: &Path,
) -> Result<Vec<crate::features::FeatureMatrix>, TrainError> {
    manifest
        .records
        .par_iter()
        .map(|rec| {
            let path = feature_path(feature_dir, &rec.utt_id);
            if !path.exists() {
                return Err(TrainError::MissingFeatures {
                    utt_id: rec.utt_id.clone(),
                    path,
                });
            }
            read_features(&path).map_err(|source| TrainError::Features {
                utt_id: rec.utt_id.clone(),
                source,
            })
        })
        .collect()
}

fn build_examples(
    manifest: &Manifest,
    raw: &[crate::features::FeatureMatrix],
    ck: &Checkpoint,
) -> Result<Vec<Example>, TrainError> {
    let needed = ck.config.receptive_field();
    manifest
        .records
        .iter()
        .zip(raw)
        .map(|(rec, m)| {
            let label = label_of(rec, ck)?;
            if m.frames() < needed {
                return Err(TrainError::UtteranceTooShort {
                    utt_id: rec.utt_id.clone(),
                    frames: m.frames(),
                    needed,
                });
            }
            let features = ck
                .cmvn
                .normalize(m)
                .map_err(|source| TrainError::Features {
                    utt_id: rec.utt_id.clone(),
                    source,
                })?;
            Ok(Example { features, label })
        })
        .collect()
}

fn label_of(rec: &UtteranceRecord, ck: &Checkpoint) -> Result<usize, TrainError> {
    ck.speaker_index(&rec.speaker_id)
        .ok_or_else(|| TrainError::UnknownSpeaker {
            utt_id: rec.utt_id.clone(),
            speaker_id: rec.speaker_id.clone(),
        })
}

fn fresh_checkpoint(
    config: &EmbedderConfig,
    plan: &StagePlan,
    manifest: &Manifest,
    raw: &[crate::features::FeatureMatrix],
) -> Result<Checkpoint, TrainError> {
    let dim = raw.first().map(|m| m.dim()).unwrap_or(0);
    let mut acc = CmvnAccumulator::new(dim);
    for (rec, m) in manifest.records.iter().zip(raw) {
        if m.dim() != dim {
            return Err(TrainError::Features {
                utt_id: rec.utt_id.clone(),
                source: FeatureError::DimMismatch {
                    expected: dim,
                    found: m.dim(),
                },
            });
        }
        acc.add(m);
    }
    let cmvn = acc.finish().map_err(|source| TrainError::Features {
        utt_id: manifest.label.clone(),
        source,
    })?;
    let speakers = manifest.speakers();
    let config = EmbedderConfig {
        input_dim: dim,
        n_classes: speakers.len(),
        ..config.clone()
    };
    let embedder = Embedder::new(config.clone())?;
    let params = embedder.init_params(plan.seed ^ INIT_SALT);
    let optimizer = AdamState::new(&params);
    Ok(Checkpoint {
        config,
        optimizer,
        params,
        adam: AdamConfig {
            lr: plan.lr,
            ..AdamConfig::default()
        },
        stage_id: plan.stage_id,
        epoch: 0,
        rng: RngState::capture(&ChaCha8Rng::seed_from_u64(plan.seed)),
        speakers,
        cmvn,
    })
}

/// Seeded utterance split: (train indices, validation indices), both sorted.
pub fn validation_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n_valid = ((n as f64 * fraction).round() as usize)
        .max(1)
        .min(n.saturating_sub(1));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ VALID_SALT));
    let mut valid = idx[..n_valid].to_vec();
    let mut train = idx[n_valid..].to_vec();
    valid.sort_unstable();
    train.sort_unstable();
    (train, valid)
}

fn mean_loss(
    embedder: &Embedder,
    params: &ModelParams,
    examples: &[&Example],
) -> Result<f64, TrainError> {
    let losses: Vec<Result<f64, EmbedderError>> = examples
        .par_iter()
        .map(|ex| embedder.loss(params, ex.features.view(), ex.label))
        .collect();
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / examples.len() as f64)
}

/// Mean full-utterance loss of a checkpoint over every manifest utterance.
pub fn evaluate_loss(
    ck: &Checkpoint,
    manifest: &Manifest,
    feature_dir: impl AsRef<Path>,
    jobs: usize,
) -> Result<f64, TrainError> {
    let feature_dir = feature_dir.as_ref();
    pool::install(jobs, || {
        let raw = load_raw(manifest, feature_dir)?;
        let examples = build_examples(manifest, &raw, ck)?;
        let embedder = Embedder::new(ck.config.clone())?;
        mean_loss(&embedder, &ck.params, &examples.iter().collect::<Vec<_>>())
    })
}

/// Runs `plan.epochs` epochs. Resuming a checkpoint of the same stage
/// continues its RNG stream; entering stage 2 reseeds from the plan.
pub fn train_stage(
    plan: &StagePlan,
    manifest: &Manifest,
    feature_dir: impl AsRef<Path>,
    init: Init,
    jobs: usize,
) -> Result<(Checkpoint, LossCurve), TrainError> {
    plan.validate()?;
    if manifest.len() < 2 {
        return Err(TrainError::InvalidPlan(format!(
            "manifest {} needs at least 2 utterances for a train/validation split",
            manifest.label
        )));
    }
    let feature_dir = feature_dir.as_ref();
    pool::install(jobs, || {
        let raw = load_raw(manifest, feature_dir)?;
        let mut ck = match init {
            Init::Fresh(config) => {
                if plan.stage_id == 2 {
                    return Err(TrainError::MissingInit);
                }
                fresh_checkpoint(&config, plan, manifest, &raw)?
            }
            Init::Resume(mut ck) => {
                if ck.stage_id > plan.stage_id {
                    return Err(TrainError::StageOrder {
                        found: ck.stage_id,
                        requested: plan.stage_id,
                    });
                }
                if ck.stage_id != plan.stage_id {
                    ck.stage_id = plan.stage_id;
                    ck.rng = RngState::capture(&ChaCha8Rng::seed_from_u64(plan.seed));
                }
                ck.adam.lr = plan.lr;
                ck
            }
        };
        let examples = build_examples(manifest, &raw, &ck)?;
        drop(raw);
        let embedder = Embedder::new(ck.config.clone())?;
        let (train_idx, valid_idx) =
            validation_split(examples.len(), plan.valid_fraction, plan.seed);
        let valid_set: Vec<&Example> = valid_idx.iter().map(|&i| &examples[i]).collect();

        let mut curve = LossCurve {
            stage_id: plan.stage_id,
            initial_loss: mean_loss(&embedder, &ck.params, &examples.iter().collect::<Vec<_>>())?,
            ..LossCurve::default()
        };
        let mut rng = ck.rng.restore();
        for _ in 0..plan.epochs {
            ck.epoch += 1;
            let mut order = train_idx.clone();
            order.shuffle(&mut rng);
            let starts: Vec<usize> = order
                .iter()
                .map(|&i| {
                    let frames = examples[i].features.nrows();
                    if frames > plan.chunk_frames {
                        rng.gen_range(0..=frames - plan.chunk_frames)
                    } else {
                        0
                    }
                })
                .collect();
            let mut epoch_loss = 0.0;
            for (batch, batch_starts) in order
                .chunks(plan.batch_size)
                .zip(starts.chunks(plan.batch_size))
            {
                let params = &ck.params;
                let results: Vec<Result<(f64, ModelParams), EmbedderError>> = batch
                    .par_iter()
                    .zip(batch_starts)
                    .map(|(&i, &start)| {
                        let ex = &examples[i];
                        let end = (start + plan.chunk_frames).min(ex.features.nrows());
                        embedder.loss_and_grad(
                            params,
                            ex.features.slice(s![start..end, ..]),
                            ex.label,
                        )
                    })
                    .collect();
                let mut total = params.zeros_like();
                for r in results {
                    let (loss, grads) = r?;
                    epoch_loss += loss;
                    total.add_assign(&grads);
                }
                total.scale(1.0 / batch.len() as f64);
                optimizer_step(&mut ck.params, &total, &mut ck.optimizer, &ck.adam);
            }
            let train_loss = epoch_loss / order.len() as f64;
            if !train_loss.is_finite() || !ck.params.all_finite() {
                return Err(TrainError::Diverged { epoch: ck.epoch });
            }
            curve.epochs.push(ck.epoch);
            curve.train.push(train_loss);
            curve
                .valid
                .push(mean_loss(&embedder, &ck.params, &valid_set)?);
        }
        ck.rng = RngState::capture(&rng);
        Ok((ck, curve))
    })
}

#[derive(Debug, Clone)]
pub struct IncrementalOutcome {
    pub stage1: Checkpoint,
    pub stage2: Checkpoint,
    pub curves: [LossCurve; 2],
}

/// Stage 1 from scratch on `clean`, then stage 2 on `augmented` continuing
/// from the stage-1 checkpoint with its optimizer state.
pub fn incremental_train(
    stage1: &StagePlan,
    stage2: &StagePlan,
    config: &EmbedderConfig,
    clean: &Manifest,
    augmented: &Manifest,
    feature_dir: impl AsRef<Path>,
    jobs: usize,
) -> Result<IncrementalOutcome, TrainError> {
    if stage1.stage_id != 1 || stage2.stage_id != 2 {
        return Err(TrainError::InvalidPlan(
            "plans must be stage 1 then stage 2".into(),
        ));
    }
    stage2.validate()?;
    let dir = feature_dir.as_ref();
    let (ck1, curve1) = train_stage(stage1, clean, dir, Init::Fresh(config.clone()), jobs)?;
    let (ck2, curve2) = train_stage(stage2, augmented, dir, Init::Resume(ck1.clone()), jobs)?;
    Ok(IncrementalOutcome {
        stage1: ck1,
        stage2: ck2,
        curves: [curve1, curve2],
    })
}

/// Stage-2 training set: all augmented utterances plus a seeded
/// `clean_fraction` of the clean ones. 0 is full replacement.
pub fn mix_stage2_manifest(
    clean: &Manifest,
    augmented: &Manifest,
    clean_fraction: f64,
    seed: u64,
) -> Manifest {
    let n_clean = ((clean.len() as f64) * clean_fraction.clamp(0.0, 1.0)).round() as usize;
    let mut idx: Vec<usize> = (0..clean.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut chosen = idx[..n_clean].to_vec();
    chosen.sort_unstable();
    let mut records = augmented.records.clone();
    records.extend(chosen.into_iter().map(|i| clean.records[i].clone()));
    Manifest::new(format!("{}-mixed", augmented.label), records)
}
