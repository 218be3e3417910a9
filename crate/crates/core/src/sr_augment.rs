//! Spectrogram-resizing (SR) augmentation: mel extraction, vertical
//! resampling of the mel axis and Griffin-Lim reconstruction, applied
//! utterance by utterance to materialize an augmented copy of a corpus.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{
    read_wav, write_wav, CorpusError, Manifest, UtteranceRecord, WavEncoding, Waveform,
};
use crate::dsp::{self, DspError, FilterBank, MelInverse, MelSpectrogram, PhaseInit, StftParams};
use crate::pool;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("resize ratio {ratio} yields {bins} mel bins; at least 2 required")]
    RatioTooSmall { ratio: f64, bins: usize },
    #[error("invalid SR policy: {0}")]
    InvalidPolicy(String),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("output directory {path} is not writable: {source}")]
    Unwritable {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("all {count} utterances failed; first failure {utt_id}: {message}")]
    AllFailed {
        count: usize,
        utt_id: String,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    /// Repeat the highest resampled bin.
    RepeatEdge,
    /// Fill with the frame's minimum value.
    EnergyFloor,
}

impl std::str::FromStr for PadMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "repeat_edge" => Ok(PadMode::RepeatEdge),
            "energy_floor" => Ok(PadMode::EnergyFloor),
            other => Err(format!(
                "unknown pad mode {other:?} (repeat_edge|energy_floor)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SrPolicy {
    pub ratio_min: f64,
    pub ratio_max: f64,
    pub pad_mode: PadMode,
    pub seed: u64,
    pub n_mels: usize,
    pub gl_iters: usize,
    pub stft: StftParams,
}

impl Default for SrPolicy {
    fn default() -> Self {
        Self {
            ratio_min: 0.85,
            ratio_max: 1.15,
            pad_mode: PadMode::RepeatEdge,
            seed: 0,
            n_mels: 80,
            gl_iters: 60,
            stft: StftParams::default(),
        }
    }
}

impl SrPolicy {
    pub fn validate(&self) -> Result<(), AugmentError> {
        if !(self.ratio_min > 0.0 && self.ratio_min <= self.ratio_max && self.ratio_max.is_finite())
        {
            return Err(AugmentError::InvalidPolicy(format!(
                "need 0 < ratio_min <= ratio_max, got [{}, {}]",
                self.ratio_min, self.ratio_max
            )));
        }
        if self.gl_iters == 0 {
            return Err(AugmentError::InvalidPolicy("gl_iters must be >= 1".into()));
        }
        self.stft.validate()?;
        Ok(())
    }
}

/// Number of points the mel profile is resampled onto.
pub fn resized_bins(n_mels: usize, ratio: f64) -> usize {
    (n_mels as f64 * ratio).round().max(0.0) as usize
}

/// Resamples one frequency profile onto `m` points by linear interpolation,
/// then crops or pads back to the input length.
fn resize_profile(frame: &[f64], m: usize, pad_mode: PadMode, out: &mut [f64]) {
    let n = frame.len();
    if m == n {
        out.copy_from_slice(frame);
        return;
    }
    let keep = m.min(n);
    for (j, slot) in out.iter_mut().enumerate().take(keep) {
        let pos = j as f64 * (n - 1) as f64 / (m - 1) as f64;
        let i0 = (pos.floor() as usize).min(n - 1);
        let frac = pos - i0 as f64;
        *slot = if frac == 0.0 || i0 + 1 >= n {
            frame[i0]
        } else {
            frame[i0] + frac * (frame[i0 + 1] - frame[i0])
        };
    }
    if m < n {
        let fill = match pad_mode {
            PadMode::RepeatEdge => out[m - 1],
            PadMode::EnergyFloor => frame.iter().copied().fold(f64::INFINITY, f64::min),
        };
        for slot in &mut out[m..] {
            *slot = fill;
        }
    }
}

/// Vertical resize of a power mel spectrogram by `ratio`. Stretching
/// (ratio > 1) moves energy up and keeps the lowest `n_mels` bins;
/// compressing moves it down and pads the top.
pub fn resize_vertical(
    mel: &MelSpectrogram,
    ratio: f64,
    pad_mode: PadMode,
) -> Result<MelSpectrogram, AugmentError> {
    let n = mel.n_mels();
    let m = if ratio > 0.0 && ratio.is_finite() {
        resized_bins(n, ratio)
    } else {
        0
    };
    if m < 2 || n < 2 {
        return Err(AugmentError::RatioTooSmall { ratio, bins: m });
    }
    let mut data = Array2::zeros(mel.data.dim());
    let mut frame = vec![0.0; n];
    let mut out = vec![0.0; n];
    for (src, mut dst) in mel.data.rows().into_iter().zip(data.rows_mut()) {
        frame.iter_mut().zip(src.iter()).for_each(|(f, s)| *f = *s);
        resize_profile(&frame, m, pad_mode, &mut out);
        dst.iter_mut().zip(&out).for_each(|(d, o)| *d = *o);
    }
    Ok(MelSpectrogram {
        data,
        ..mel.clone()
    })
}

/// Filterbank and inverse shared across utterances.
pub struct Augmenter {
    policy: SrPolicy,
    filterbank: FilterBank,
    inverse: MelInverse,
}

impl Augmenter {
    pub fn new(policy: SrPolicy) -> Result<Self, AugmentError> {
        policy.validate()?;
        let filterbank = dsp::mel_filterbank(
            policy.stft.n_fft,
            policy.n_mels,
            crate::corpus::SAMPLE_RATE,
            0.0,
            crate::corpus::SAMPLE_RATE as f64 / 2.0,
        )?;
        let inverse = MelInverse::new(&filterbank)?;
        Ok(Self {
            policy,
            filterbank,
            inverse,
        })
    }

    pub fn policy(&self) -> &SrPolicy {
        &self.policy
    }

    /// Resynthesizes `y` with its mel axis resized by `ratio`.
    pub fn augment_with_ratio(&self, y: &Waveform, ratio: f64) -> Result<Waveform, AugmentError> {
        let mel = dsp::mel_spectrogram(y, &self.policy.stft, &self.filterbank)?;
        let resized = resize_vertical(&mel, ratio, self.policy.pad_mode)?;
        let mut magnitude = self.inverse.apply(&resized)?;
        magnitude.signal.len = y.len();
        let mut out = dsp::griffin_lim(&magnitude, self.policy.gl_iters, PhaseInit::Zero)?.waveform;
        let (peak_in, peak_out) = (y.peak(), out.peak());
        if peak_out > 0.0 {
            let gain = peak_in / peak_out;
            for s in &mut out.samples {
                *s *= gain;
            }
        }
        Ok(out)
    }

    /// Draws `r ~ U[ratio_min, ratio_max]` from `rng` and augments `y`.
    pub fn augment<R: Rng>(
        &self,
        y: &Waveform,
        rng: &mut R,
    ) -> Result<(Waveform, f64), AugmentError> {
        let r = draw_ratio(&self.policy, rng);
        Ok((self.augment_with_ratio(y, r)?, r))
    }
}

fn draw_ratio<R: Rng>(policy: &SrPolicy, rng: &mut R) -> f64 {
    if policy.ratio_min == policy.ratio_max {
        policy.ratio_min
    } else {
        rng.gen_range(policy.ratio_min..=policy.ratio_max)
    }
}

pub fn augment_waveform<R: Rng>(
    y: &Waveform,
    policy: &SrPolicy,
    rng: &mut R,
) -> Result<(Waveform, f64), AugmentError> {
    Augmenter::new(policy.clone())?.augment(y, rng)
}

/// FNV-1a; stable across platforms and toolchains.
pub fn stable_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Per-utterance RNG stream, independent of processing order.
pub fn utterance_rng(seed: u64, utt_id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ stable_hash(utt_id))
}

#[derive(Debug, Clone)]
pub struct AugmentOutcome {
    pub manifest: Manifest,
    /// `(utt_id, ratio)` in manifest order for successful utterances.
    pub ratios: Vec<(String, f64)>,
    pub failures: Vec<(String, String)>,
    pub manifest_path: PathBuf,
    pub sidecar_path: PathBuf,
}

/// Writes one SR-augmented pcm16 WAV per utterance under `out_dir/wav/`, the
/// manifest `out_dir/<label>-augmented.tsv` and the ratio sidecar
/// `out_dir/<label>-augmented.ratios.tsv`.
pub fn augment_corpus(
    manifest: &Manifest,
    policy: &SrPolicy,
    out_dir: impl AsRef<Path>,
    jobs: usize,
) -> Result<AugmentOutcome, AugmentError> {
    let out_dir = out_dir.as_ref();
    let augmenter = Augmenter::new(policy.clone())?;
    let wav_dir = out_dir.join("wav");
    fs::create_dir_all(&wav_dir).map_err(|source| AugmentError::Unwritable {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let probe = out_dir.join(".write-probe");
    fs::write(&probe, b"").map_err(|source| AugmentError::Unwritable {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let _ = fs::remove_file(&probe);

    let results: Vec<Result<(UtteranceRecord, f64), String>> = pool::install(jobs, || {
        manifest
            .records
            .par_iter()
            .map(|rec| {
                let run = || -> Result<(UtteranceRecord, f64), AugmentError> {
                    let y = read_wav(&rec.path)?;
                    let mut rng = utterance_rng(policy.seed, &rec.utt_id);
                    let (y_aug, ratio) = augmenter.augment(&y, &mut rng)?;
                    let utt_id = format!("{}-sr", rec.utt_id);
                    let rel = PathBuf::from("wav").join(format!("{utt_id}.wav"));
                    write_wav(&y_aug, out_dir.join(&rel), WavEncoding::Pcm16)?;
                    Ok((
                        UtteranceRecord {
                            utt_id,
                            speaker_id: rec.speaker_id.clone(),
                            gender: rec.gender,
                            path: rel,
                        },
                        ratio,
                    ))
                };
                run().map_err(|e| e.to_string())
            })
            .collect()
    });

    let mut records = Vec::new();
    let mut ratios = Vec::new();
    let mut failures = Vec::new();
    for (rec, res) in manifest.records.iter().zip(results) {
        match res {
            Ok((new_rec, ratio)) => {
                ratios.push((rec.utt_id.clone(), ratio));
                records.push(new_rec);
            }
            Err(msg) => failures.push((rec.utt_id.clone(), msg)),
        }
    }
    if records.is_empty() {
        let (utt_id, message) = failures
            .first()
            .cloned()
            .unwrap_or_else(|| (String::new(), "empty manifest".into()));
        return Err(AugmentError::AllFailed {
            count: failures.len(),
            utt_id,
            message,
        });
    }

    let label = format!("{}-augmented", manifest.label);
    let manifest_path = out_dir.join(format!("{label}.tsv"));
    let on_disk = Manifest::new(label.clone(), records);
    on_disk.write(&manifest_path)?;
    let sidecar_path = out_dir.join(format!("{label}.ratios.tsv"));
    let sidecar: String = ratios.iter().map(|(u, r)| format!("{u}\t{r}\n")).collect();
    fs::write(&sidecar_path, sidecar).map_err(|source| AugmentError::Io {
        path: sidecar_path.clone(),
        source,
    })?;

    let resolved = Manifest::new(
        label,
        on_disk
            .records
            .into_iter()
            .map(|r| UtteranceRecord {
                path: out_dir.join(&r.path),
                ..r
            })
            .collect(),
    );
    Ok(AugmentOutcome {
        manifest: resolved,
        ratios,
        failures,
        manifest_path,
        sidecar_path,
    })
}
