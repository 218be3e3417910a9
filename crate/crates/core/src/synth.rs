//! Synthetic speaker corpus: harmonic "voices" with per-speaker vocal-tract
//! scaling, pitch, spectral tilt, breathiness and speaking rhythm, plus a toy
//! anonymization transform (a fixed upward shift of the mel axis followed by
//! Griffin-Lim resynthesis).

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::corpus::{
    all_pairs_trials, write_wav, CorpusError, Gender, Manifest, TrialList, UtteranceRecord,
    WavEncoding, Waveform, SAMPLE_RATE,
};
use crate::dsp::{self, DspError, MelSpectrogram, PhaseInit, StftParams};

/// Reference vowel formants (Hz) before speaker scaling.
const VOWELS: [[f64; 3]; 5] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [300.0, 870.0, 2240.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
];

#[derive(Debug, Clone, PartialEq)]
pub struct VoiceProfile {
    pub speaker_id: String,
    pub gender: Gender,
    pub f0_hz: f64,
    /// Uniform vocal-tract scaling of all formants.
    pub tract_scale: f64,
    /// Per-formant personal deviation on top of the uniform scale.
    pub formant_bias: [f64; 3],
    pub bandwidth_hz: f64,
    /// Spectral tilt in dB per octave above 500 Hz (negative = darker).
    pub tilt_db_per_octave: f64,
    pub breathiness: f64,
    pub syllable_rate_hz: f64,
    /// Fraction of each syllable period that is voiced.
    pub duty_cycle: f64,
}

/// Deterministic speaker profiles; the first half female, the rest male.
pub fn speaker_profiles(n: usize, seed: u64) -> Vec<VoiceProfile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed);
    (0..n)
        .map(|i| {
            let female = i < n.div_ceil(2);
            let (f0_lo, f0_hi, s_lo, s_hi) = if female {
                (170.0, 250.0, 1.08, 1.22)
            } else {
                (90.0, 145.0, 0.88, 1.02)
            };
            VoiceProfile {
                speaker_id: format!("spk{i:02}"),
                gender: if female { Gender::Female } else { Gender::Male },
                f0_hz: rng.gen_range(f0_lo..f0_hi),
                tract_scale: rng.gen_range(s_lo..s_hi),
                formant_bias: [
                    rng.gen_range(0.9..1.1),
                    rng.gen_range(0.9..1.1),
                    rng.gen_range(0.9..1.1),
                ],
                bandwidth_hz: rng.gen_range(60.0..160.0),
                tilt_db_per_octave: rng.gen_range(-12.0..-3.0),
                breathiness: rng.gen_range(0.0..0.08),
                syllable_rate_hz: rng.gen_range(2.5..6.5),
                duty_cycle: rng.gen_range(0.55..0.9),
            }
        })
        .collect()
}

fn envelope(profile: &VoiceProfile, formants: &[f64; 3], f: f64) -> f64 {
    let bw = profile.bandwidth_hz;
    let res: f64 = formants
        .iter()
        .enumerate()
        .map(|(i, &fc)| {
            let b = bw * (1.0 + 0.5 * i as f64);
            let gain = [1.0, 0.7, 0.45][i];
            gain / (1.0 + ((f - fc) / (0.5 * b)).powi(2))
        })
        .sum();
    let octaves = (f.max(50.0) / 500.0).log2().max(0.0);
    res * 10f64.powf(profile.tilt_db_per_octave * octaves / 20.0) + 1e-3
}

/// Synthesizes one utterance of `duration_secs` seconds, peak-normalized to 0.5.
pub fn synthesize_utterance(profile: &VoiceProfile, duration_secs: f64, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = SAMPLE_RATE as f64;
    let n = (duration_secs * sr).round() as usize;
    let block = 80;

    // syllable plan: (start, voiced_len, vowel, pitch factor)
    let mut syllables = Vec::new();
    let mut t = rng.gen_range(0.0..0.1) * sr;
    while (t as usize) < n {
        let period = sr / profile.syllable_rate_hz * rng.gen_range(0.8..1.2);
        let voiced = period * profile.duty_cycle;
        syllables.push((
            t as usize,
            voiced as usize,
            rng.gen_range(0..VOWELS.len()),
            1.0 + 0.06 * rng.gen_range(-1.0..1.0),
        ));
        t += period;
    }

    let vibrato_phase = rng.gen_range(0.0..2.0 * PI);
    let mut samples = vec![0.0; n];
    let mut phase = 0.0f64;
    let mut syl_idx = 0;
    let mut amps: Vec<f64> = Vec::new();
    for start in (0..n).step_by(block) {
        while syl_idx + 1 < syllables.len() && syllables[syl_idx + 1].0 <= start {
            syl_idx += 1;
        }
        let (s0, voiced, vowel, pitch) = syllables[syl_idx];
        let formants =
            [0, 1, 2].map(|i| VOWELS[vowel][i] * profile.tract_scale * profile.formant_bias[i]);
        for i in start..(start + block).min(n) {
            let time = i as f64 / sr;
            let f0 = profile.f0_hz
                * pitch
                * (1.0 + 0.015 * (2.0 * PI * 5.0 * time + vibrato_phase).sin())
                * (1.0 - 0.05 * time / duration_secs.max(1e-3));
            if i == start {
                amps.clear();
                let mut k = 1;
                while (k as f64) * f0 < 7600.0 {
                    amps.push(envelope(profile, &formants, k as f64 * f0));
                    k += 1;
                }
            }
            phase = (phase + 2.0 * PI * f0 / sr) % (2.0 * PI * 1e6);
            let pos = i.saturating_sub(s0);
            let gate = if i < s0 || pos >= voiced {
                0.0
            } else {
                (PI * pos as f64 / voiced.max(1) as f64).sin().powf(0.7)
            };
            let voiced_sample: f64 = amps
                .iter()
                .enumerate()
                .map(|(k, a)| a * ((k + 1) as f64 * phase).sin())
                .sum();
            let noise: f64 = StandardNormal.sample(&mut rng);
            samples[i] = gate * (voiced_sample + profile.breathiness * 4.0 * noise) + 1e-3 * noise;
        }
    }
    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 0.0 {
        for s in &mut samples {
            *s *= 0.5 / peak;
        }
    }
    Waveform::new(samples, SAMPLE_RATE)
}

/// Shifts every frame of a power mel spectrogram up by `bins`, repeating the
/// lowest bin into the vacated bottom rows.
pub fn shift_mel_up(mel: &MelSpectrogram, bins: usize) -> MelSpectrogram {
    let (frames, n_mels) = mel.data.dim();
    let data = Array2::from_shape_fn((frames, n_mels), |(t, m)| {
        mel.data[[t, m.saturating_sub(bins)]]
    });
    MelSpectrogram {
        data,
        ..mel.clone()
    }
}

/// Toy anonymization: fixed upward mel shift, least-squares inversion and
/// Griffin-Lim resynthesis, peak-matched to the input.
pub fn anonymize_mel_shift(
    waveform: &Waveform,
    bins: usize,
    gl_iters: usize,
) -> Result<Waveform, DspError> {
    let params = StftParams::default();
    let fb = dsp::mel_filterbank(params.n_fft, 80, SAMPLE_RATE, 0.0, 8000.0)?;
    let mel = dsp::mel_spectrogram(waveform, &params, &fb)?;
    let shifted = shift_mel_up(&mel, bins);
    let mag = dsp::mel_to_linear(&shifted, &fb)?;
    let mut out = dsp::griffin_lim(&mag, gl_iters, PhaseInit::Zero)?.waveform;
    let (peak_in, peak_out) = (waveform.peak(), out.peak());
    if peak_out > 0.0 {
        for s in &mut out.samples {
            *s *= peak_in / peak_out;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpusConfig {
    pub n_speakers: usize,
    pub train_utts_per_speaker: usize,
    pub eval_utts_per_speaker: usize,
    pub train_secs: f64,
    pub eval_secs: f64,
    /// Speakers reserved for evaluation only; 0 evaluates on held-out
    /// utterances of the training speakers instead.
    pub eval_speakers: usize,
    /// Upward mel shift (in 80-bin mel bins) applied to the evaluation set.
    pub anonymize_shift_bins: usize,
    pub seed: u64,
}

impl Default for SyntheticCorpusConfig {
    fn default() -> Self {
        Self {
            n_speakers: 8,
            train_utts_per_speaker: 8,
            eval_utts_per_speaker: 6,
            train_secs: 3.0,
            eval_secs: 2.0,
            eval_speakers: 0,
            anonymize_shift_bins: 4,
            seed: 2025,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub root: PathBuf,
    pub train: Manifest,
    /// Clean evaluation utterances.
    pub eval_clean: Manifest,
    /// The same evaluation utterances after the toy anonymization.
    pub eval_anon: Manifest,
    pub profiles: Vec<VoiceProfile>,
}

impl SyntheticCorpus {
    /// All-pairs trials over the anonymized evaluation set for one gender.
    pub fn trials(&self, gender: Gender) -> TrialList {
        let subset = Manifest::new(
            format!("eval-{gender}"),
            self.eval_anon
                .records
                .iter()
                .filter(|r| r.gender == gender)
                .cloned()
                .collect(),
        );
        all_pairs_trials(&subset, format!("eval-{gender}"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Generates and writes the synthetic corpus under `root`:
/// `wav/{train,eval,eval_anon}/*.wav`, manifests `train.tsv`, `eval.tsv`,
/// `eval-anon.tsv` and per-gender trial lists.
pub fn write_synthetic_corpus(
    config: &SyntheticCorpusConfig,
    root: impl AsRef<Path>,
) -> Result<SyntheticCorpus, SynthError> {
    let root = root.as_ref();
    let mut profiles = speaker_profiles(config.n_speakers, config.seed);
    let held_out = config.eval_speakers > 0;
    if held_out {
        profiles.extend(
            speaker_profiles(config.eval_speakers, config.seed ^ 0xe7a1_0000)
                .into_iter()
                .enumerate()
                .map(|(i, p)| VoiceProfile {
                    speaker_id: format!("evl{i:02}"),
                    ..p
                }),
        );
    }
    for sub in ["wav/train", "wav/eval", "wav/eval_anon"] {
        let dir = root.join(sub);
        fs::create_dir_all(&dir).map_err(|source| SynthError::Io { path: dir, source })?;
    }

    struct Job<'a> {
        profile: &'a VoiceProfile,
        utt_id: String,
        secs: f64,
        seed: u64,
        eval: bool,
    }
    let mut jobs = Vec::new();
    for (si, p) in profiles.iter().enumerate() {
        let range = match (held_out, si < config.n_speakers) {
            (false, _) => 0..config.train_utts_per_speaker + config.eval_utts_per_speaker,
            (true, true) => 0..config.train_utts_per_speaker,
            (true, false) => {
                config.train_utts_per_speaker
                    ..config.train_utts_per_speaker + config.eval_utts_per_speaker
            }
        };
        for u in range {
            let eval = u >= config.train_utts_per_speaker;
            jobs.push(Job {
                profile: p,
                utt_id: format!("{}-{:03}", p.speaker_id, u),
                secs: if eval {
                    config.eval_secs
                } else {
                    config.train_secs
                },
                seed: config
                    .seed
                    .wrapping_mul(1_000_003)
                    .wrapping_add((si * 1000 + u) as u64),
                eval,
            });
        }
    }

    let written: Vec<Result<(UtteranceRecord, Option<UtteranceRecord>), SynthError>> = jobs
        .par_iter()
        .map(|job| {
            let wav = synthesize_utterance(job.profile, job.secs, job.seed);
            let sub = if job.eval { "eval" } else { "train" };
            let rel = PathBuf::from(format!("wav/{sub}/{}.wav", job.utt_id));
            write_wav(&wav, root.join(&rel), WavEncoding::Pcm16)?;
            let rec = UtteranceRecord {
                utt_id: job.utt_id.clone(),
                speaker_id: job.profile.speaker_id.clone(),
                gender: job.profile.gender,
                path: rel,
            };
            let anon = if job.eval {
                let anon = anonymize_mel_shift(&wav, config.anonymize_shift_bins, 60)?;
                let rel = PathBuf::from(format!("wav/eval_anon/{}.wav", job.utt_id));
                write_wav(&anon, root.join(&rel), WavEncoding::Pcm16)?;
                Some(UtteranceRecord {
                    path: rel,
                    ..rec.clone()
                })
            } else {
                None
            };
            Ok((rec, anon))
        })
        .collect();

    let mut train = Vec::new();
    let mut eval_clean = Vec::new();
    let mut eval_anon = Vec::new();
    for (job, res) in jobs.iter().zip(written) {
        let (rec, anon) = res?;
        if job.eval {
            eval_clean.push(rec);
            eval_anon.extend(anon);
        } else {
            train.push(rec);
        }
    }
    let write = |label: &str, records: Vec<UtteranceRecord>| -> Result<Manifest, SynthError> {
        let m = Manifest::new(label, records);
        m.write(root.join(format!("{label}.tsv")))?;
        // absolute paths in memory, relative on disk
        Ok(Manifest::new(
            label,
            m.records
                .into_iter()
                .map(|r| UtteranceRecord {
                    path: root.join(&r.path),
                    ..r
                })
                .collect(),
        ))
    };
    let corpus = SyntheticCorpus {
        root: root.to_path_buf(),
        train: write("train", train)?,
        eval_clean: write("eval", eval_clean)?,
        eval_anon: write("eval-anon", eval_anon)?,
        profiles,
    };
    for g in [Gender::Female, Gender::Male] {
        corpus
            .trials(g)
            .write(root.join(format!("trials-eval-{g}.txt")))?;
    }
    Ok(corpus)
}
