//! Three interactive views over the core pipeline, exported to JavaScript.
//! The plain functions carry the logic; the `#[wasm_bindgen]` wrappers only
//! translate types.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use specwav_core::corpus::{Waveform, SAMPLE_RATE};
use specwav_core::dsp::{self, PhaseInit, StftParams};
use specwav_core::eval::eer;
use specwav_core::sr_augment::{resize_vertical, PadMode};
use specwav_core::synth::{speaker_profiles, synthesize_utterance};
use wasm_bindgen::prelude::*;

pub const DEMO_MELS: usize = 80;

/// Row-major `frames x bins` log-power mel image in dB.
#[wasm_bindgen]
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    frames: usize,
    bins: usize,
    data: Vec<f32>,
}

#[wasm_bindgen]
impl Heatmap {
    #[wasm_bindgen(getter)]
    pub fn frames(&self) -> usize {
        self.frames
    }

    #[wasm_bindgen(getter)]
    pub fn bins(&self) -> usize {
        self.bins
    }

    #[wasm_bindgen(getter)]
    pub fn data(&self) -> Vec<f32> {
        self.data.clone()
    }
}

/// FAR and FRR at every distinct threshold, plus the interpolated EER.
#[wasm_bindgen]
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCurve {
    thresholds: Vec<f64>,
    far: Vec<f64>,
    frr: Vec<f64>,
    eer: f64,
}

#[wasm_bindgen]
impl ErrorCurve {
    #[wasm_bindgen(getter)]
    pub fn thresholds(&self) -> Vec<f64> {
        self.thresholds.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn far(&self) -> Vec<f64> {
        self.far.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn frr(&self) -> Vec<f64> {
        self.frr.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn eer(&self) -> f64 {
        self.eer
    }
}

pub fn demo_voice(seed: u64, secs: f64) -> Waveform {
    let profile = &speaker_profiles(2, seed)[(seed % 2) as usize];
    synthesize_utterance(profile, secs, seed)
}

pub fn resize_heatmap(seed: u64, ratio: f64, pad_mode: &str) -> Result<Heatmap, String> {
    let pad: PadMode = pad_mode.parse()?;
    let wav = demo_voice(seed, 1.0);
    let params = StftParams::default();
    let fb = dsp::mel_filterbank(params.n_fft, DEMO_MELS, SAMPLE_RATE, 0.0, 8000.0)
        .map_err(|e| e.to_string())?;
    let mel = dsp::mel_spectrogram(&wav, &params, &fb).map_err(|e| e.to_string())?;
    let resized = resize_vertical(&mel, ratio, pad).map_err(|e| e.to_string())?;
    Ok(Heatmap {
        frames: resized.n_frames(),
        bins: resized.n_mels(),
        data: resized
            .data
            .iter()
            .map(|&p| (10.0 * p.max(1e-10).log10()) as f32)
            .collect(),
    })
}

/// Gaussian target and nontarget scores `separation` standard deviations apart.
pub fn error_curve(separation: f64, n_per_class: usize, seed: u64) -> Result<ErrorCurve, String> {
    if n_per_class < 2 {
        return Err("need at least 2 scores per class".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0, 1.0).map_err(|e| e.to_string())?;
    let targets: Vec<f64> = (0..n_per_class)
        .map(|_| separation + dist.sample(&mut rng))
        .collect();
    let nontargets: Vec<f64> = (0..n_per_class).map(|_| dist.sample(&mut rng)).collect();
    let mut thresholds: Vec<f64> = targets.iter().chain(&nontargets).copied().collect();
    thresholds.sort_by(|a, b| a.total_cmp(b));
    thresholds.dedup();
    let rate = |scores: &[f64], pred: &dyn Fn(f64) -> bool| {
        scores.iter().filter(|&&s| pred(s)).count() as f64 / scores.len() as f64
    };
    let far = thresholds
        .iter()
        .map(|&t| rate(&nontargets, &|s| s >= t))
        .collect();
    let frr = thresholds
        .iter()
        .map(|&t| rate(&targets, &|s| s < t))
        .collect();
    Ok(ErrorCurve {
        eer: eer(&targets, &nontargets).map_err(|e| e.to_string())?,
        thresholds,
        far,
        frr,
    })
}

/// Spectral convergence per Griffin-Lim iteration on a synthetic voice.
pub fn gl_convergence(seed: u64, iters: usize) -> Result<Vec<f64>, String> {
    let wav = demo_voice(seed, 0.5);
    let spec = dsp::stft(&wav, &StftParams::default()).map_err(|e| e.to_string())?;
    dsp::griffin_lim(&spec.magnitude(), iters, PhaseInit::Zero)
        .map(|out| out.convergence)
        .map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = resizeHeatmap)]
pub fn resize_heatmap_js(seed: u32, ratio: f64, pad_mode: &str) -> Result<Heatmap, JsError> {
    resize_heatmap(seed as u64, ratio, pad_mode).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = errorCurve)]
pub fn error_curve_js(
    separation: f64,
    n_per_class: usize,
    seed: u32,
) -> Result<ErrorCurve, JsError> {
    error_curve(separation, n_per_class, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = glConvergence)]
pub fn gl_convergence_js(seed: u32, iters: usize) -> Result<Vec<f64>, JsError> {
    gl_convergence(seed as u64, iters).map_err(|e| JsError::new(&e))
}
