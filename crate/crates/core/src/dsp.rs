//! Spectral analysis and synthesis in double precision.
//!
//! The inverse STFT is the exact least-squares inverse of the forward
//! transform, including the reflect padding used with `center = true`, so
//! `istft(stft(x)) == x` up to rounding and Griffin-Lim's consistency step is
//! an orthogonal projection.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::corpus::Waveform;

#[derive(Debug, Error, PartialEq)]
pub enum DspError {
    #[error("invalid STFT parameters: {0}")]
    InvalidParams(String),
    #[error("waveform has {len} samples; at least {min} required")]
    TooShort { len: usize, min: usize },
    #[error(
        "window/hop pair violates the overlap-add condition (hop {hop}, win_length {win_length})"
    )]
    ColaViolation { hop: usize, win_length: usize },
    #[error("invalid filterbank: {0}")]
    InvalidFilterbank(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("filterbank is rank deficient; cannot invert mel spectrogram")]
    RankDeficient,
    #[error("{0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Hann,
}

/// STFT configuration. The window is `win_length` long and zero-padded
/// symmetrically to `n_fft`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftParams {
    pub n_fft: usize,
    pub hop: usize,
    pub win_length: usize,
    pub window: Window,
    pub center: bool,
}

impl Default for StftParams {
    fn default() -> Self {
        Self {
            n_fft: 1024,
            hop: 256,
            win_length: 1024,
            window: Window::Hann,
            center: true,
        }
    }
}

impl StftParams {
    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn validate(&self) -> Result<(), DspError> {
        if self.n_fft < 2 || !self.n_fft.is_power_of_two() {
            return Err(DspError::InvalidParams(format!(
                "n_fft {} must be a power of two >= 2",
                self.n_fft
            )));
        }
        if self.win_length == 0 || self.win_length > self.n_fft {
            return Err(DspError::InvalidParams(format!(
                "win_length {} must be in 1..={}",
                self.win_length, self.n_fft
            )));
        }
        if self.hop == 0 || self.hop > self.win_length {
            return Err(DspError::InvalidParams(format!(
                "hop {} must be in 1..={}",
                self.hop, self.win_length
            )));
        }
        Ok(())
    }

    /// Analysis/synthesis window of length `n_fft`.
    pub fn window_samples(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.n_fft];
        let offset = (self.n_fft - self.win_length) / 2;
        match self.window {
            Window::Hann => {
                // periodic Hann; COLA at hop = win_length / 4
                let n = self.win_length as f64;
                for i in 0..self.win_length {
                    w[offset + i] = 0.5 - 0.5 * (2.0 * PI * i as f64 / n).cos();
                }
            }
        }
        w
    }

    fn pad(&self) -> usize {
        if self.center {
            self.n_fft / 2
        } else {
            0
        }
    }

    /// Frame count for a signal of `len` samples.
    pub fn frame_count(&self, len: usize) -> Result<usize, DspError> {
        let padded = len + 2 * self.pad();
        if len == 0 || padded < self.n_fft {
            return Err(DspError::TooShort {
                len,
                min: if self.center { 1 } else { self.n_fft },
            });
        }
        Ok(1 + (padded - self.n_fft) / self.hop)
    }

    /// Signal length implied by `frames` frames when the original is unknown.
    pub fn default_length(&self, frames: usize) -> usize {
        let span = self.hop * frames.saturating_sub(1);
        if self.center {
            span
        } else {
            span + self.n_fft
        }
    }

    /// Checks that the squared-window overlap never vanishes in steady state.
    pub fn check_cola(&self) -> Result<(), DspError> {
        self.validate()?;
        let w = self.window_samples();
        for n in 0..self.hop {
            let env: f64 = w.iter().skip(n).step_by(self.hop).map(|v| v * v).sum();
            if env <= 1e-10 {
                return Err(DspError::ColaViolation {
                    hop: self.hop,
                    win_length: self.win_length,
                });
            }
        }
        Ok(())
    }
}

/// Length and rate of the signal a spectrogram was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SignalInfo {
    pub len: usize,
    pub sample_rate: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    /// frames x (n_fft / 2 + 1)
    pub data: Array2<Complex64>,
    pub params: StftParams,
    pub signal: SignalInfo,
}

impl ComplexSpectrogram {
    pub fn magnitude(&self) -> MagnitudeSpectrogram {
        MagnitudeSpectrogram {
            data: self.data.mapv(|c| c.norm()),
            params: self.params,
            signal: self.signal,
        }
    }

    pub fn n_frames(&self) -> usize {
        self.data.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeSpectrogram {
    pub data: Array2<f64>,
    pub params: StftParams,
    pub signal: SignalInfo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MelDomain {
    Power,
    Log,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    /// frames x n_mels
    pub data: Array2<f64>,
    pub domain: MelDomain,
    pub params: StftParams,
    pub signal: SignalInfo,
}

impl MelSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_mels(&self) -> usize {
        self.data.ncols()
    }
}

/// Index into a signal of length `len` under symmetric (edge-excluded) reflection.
fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Reusable STFT engine holding the window and FFT plans.
pub struct Stft {
    params: StftParams,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(params: StftParams) -> Result<Self, DspError> {
        params.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            window: params.window_samples(),
            forward: planner.plan_fft_forward(params.n_fft),
            inverse: planner.plan_fft_inverse(params.n_fft),
            params,
        })
    }

    pub fn params(&self) -> &StftParams {
        &self.params
    }

    pub fn forward(&self, waveform: &Waveform) -> Result<ComplexSpectrogram, DspError> {
        let p = &self.params;
        let x = &waveform.samples;
        let frames = p.frame_count(x.len())?;
        let pad = p.pad() as isize;
        let n_bins = p.n_bins();
        let mut data = Array2::<Complex64>::zeros((frames, n_bins));
        let mut buf = vec![Complex64::new(0.0, 0.0); p.n_fft];
        for (t, mut row) in data.axis_iter_mut(Axis(0)).enumerate() {
            let start = (t * p.hop) as isize - pad;
            for (n, slot) in buf.iter_mut().enumerate() {
                let idx = reflect_index(start + n as isize, x.len());
                *slot = Complex64::new(x[idx] * self.window[n], 0.0);
            }
            self.forward.process(&mut buf);
            for (k, v) in row.iter_mut().enumerate() {
                *v = buf[k];
            }
        }
        Ok(ComplexSpectrogram {
            data,
            params: *p,
            signal: SignalInfo {
                len: x.len(),
                sample_rate: waveform.sample_rate,
            },
        })
    }

    /// Least-squares inverse of [`Stft::forward`] for a signal of `len` samples.
    pub fn inverse(
        &self,
        spec: &Array2<Complex64>,
        len: usize,
        sample_rate: u32,
    ) -> Result<Waveform, DspError> {
        let p = &self.params;
        p.check_cola()?;
        if spec.ncols() != p.n_bins() {
            return Err(DspError::DimensionMismatch(format!(
                "spectrogram has {} bins, parameters imply {}",
                spec.ncols(),
                p.n_bins()
            )));
        }
        if len == 0 {
            return Ok(Waveform::new(Vec::new(), sample_rate));
        }
        let n = p.n_fft;
        let pad = p.pad() as isize;
        let mut num = vec![0.0; len];
        let mut env = vec![0.0; len];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let scale = 1.0 / n as f64;
        for (t, row) in spec.axis_iter(Axis(0)).enumerate() {
            fill_hermitian(&mut buf, row);
            self.inverse.process(&mut buf);
            let start = (t * p.hop) as isize - pad;
            for (i, c) in buf.iter().enumerate() {
                let w = self.window[i];
                if w == 0.0 {
                    continue;
                }
                let j = reflect_index(start + i as isize, len);
                num[j] += w * c.re * scale;
                env[j] += w * w;
            }
        }
        let samples = num
            .iter()
            .zip(&env)
            .map(|(&a, &e)| if e > 1e-11 { a / e } else { 0.0 })
            .collect();
        Ok(Waveform::new(samples, sample_rate))
    }
}

fn fill_hermitian(buf: &mut [Complex64], half: ArrayView1<Complex64>) {
    let n = buf.len();
    let nb = half.len();
    for k in 0..nb {
        buf[k] = half[k];
    }
    buf[0].im = 0.0;
    if n % 2 == 0 {
        buf[n / 2].im = 0.0;
    }
    for k in nb..n {
        buf[k] = buf[n - k].conj();
    }
}

pub fn stft(waveform: &Waveform, params: &StftParams) -> Result<ComplexSpectrogram, DspError> {
    Stft::new(*params)?.forward(waveform)
}

/// Inverse STFT. `length` defaults to the original signal length recorded in
/// the spectrogram.
pub fn istft(spec: &ComplexSpectrogram, length: Option<usize>) -> Result<Waveform, DspError> {
    let engine = Stft::new(spec.params)?;
    engine.inverse(
        &spec.data,
        length.unwrap_or(spec.signal.len),
        spec.signal.sample_rate,
    )
}

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank, `n_mels x (n_fft/2 + 1)`, unnormalized peaks of 1.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub weights: Array2<f64>,
    pub n_fft: usize,
    pub sample_rate: u32,
    pub fmin: f64,
    pub fmax: f64,
    /// Center frequency of each filter in Hz.
    pub centers: Vec<f64>,
}

impl FilterBank {
    pub fn n_mels(&self) -> usize {
        self.weights.nrows()
    }
}

pub fn mel_filterbank(
    n_fft: usize,
    n_mels: usize,
    sample_rate: u32,
    fmin: f64,
    fmax: f64,
) -> Result<FilterBank, DspError> {
    let nyquist = sample_rate as f64 / 2.0;
    if !(fmin >= 0.0 && fmin < fmax && fmax <= nyquist) {
        return Err(DspError::InvalidFilterbank(format!(
            "need 0 <= fmin < fmax <= {nyquist}, got fmin={fmin} fmax={fmax}"
        )));
    }
    if n_mels < 2 {
        return Err(DspError::InvalidFilterbank(format!(
            "n_mels must be >= 2, got {n_mels}"
        )));
    }
    if n_fft < 2 {
        return Err(DspError::InvalidFilterbank(format!(
            "n_fft {n_fft} too small"
        )));
    }
    let (mlo, mhi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mlo + (mhi - mlo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let n_bins = n_fft / 2 + 1;
    let bin_hz = sample_rate as f64 / n_fft as f64;
    let mut weights = Array2::zeros((n_mels, n_bins));
    for m in 0..n_mels {
        let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let up = (f - lo) / (c - lo);
            let down = (hi - f) / (hi - c);
            weights[[m, k]] = up.min(down).max(0.0);
        }
    }
    Ok(FilterBank {
        weights,
        n_fft,
        sample_rate,
        fmin,
        fmax,
        centers: edges[1..=n_mels].to_vec(),
    })
}

/// Power mel spectrogram `|STFT|^2 . FB^T`.
pub fn mel_spectrogram(
    waveform: &Waveform,
    params: &StftParams,
    filterbank: &FilterBank,
) -> Result<MelSpectrogram, DspError> {
    if filterbank.n_fft != params.n_fft {
        return Err(DspError::DimensionMismatch(format!(
            "filterbank built for n_fft={}, STFT uses n_fft={}",
            filterbank.n_fft, params.n_fft
        )));
    }
    let spec = stft(waveform, params)?;
    Ok(power_to_mel(&spec, filterbank))
}

pub fn power_to_mel(spec: &ComplexSpectrogram, filterbank: &FilterBank) -> MelSpectrogram {
    let power = spec.data.mapv(|c| c.norm_sqr());
    MelSpectrogram {
        data: power.dot(&filterbank.weights.t()),
        domain: MelDomain::Power,
        params: spec.params,
        signal: spec.signal,
    }
}

pub const DEFAULT_LOG_FLOOR: f64 = 1e-10;

/// Elementwise `ln(max(x, floor))`.
pub fn log_compress(mel: &MelSpectrogram, floor: f64) -> Result<MelSpectrogram, DspError> {
    if !(floor > 0.0) {
        return Err(DspError::InvalidArgument(format!(
            "log floor must be positive, got {floor}"
        )));
    }
    if mel.domain != MelDomain::Power {
        return Err(DspError::InvalidArgument(
            "log_compress expects a power-domain mel spectrogram".into(),
        ));
    }
    Ok(MelSpectrogram {
        data: mel.data.mapv(|x| x.max(floor).ln()),
        domain: MelDomain::Log,
        params: mel.params,
        signal: mel.signal,
    })
}

/// Precomputed minimum-norm least-squares inverse `(FB FB^T)^-1 FB`.
#[derive(Debug, Clone)]
pub struct MelInverse {
    pinv: Array2<f64>,
}

impl MelInverse {
    pub fn new(filterbank: &FilterBank) -> Result<Self, DspError> {
        let fb = &filterbank.weights;
        let gram = fb.dot(&fb.t());
        let n = gram.nrows();
        let g = DMatrix::from_fn(n, n, |i, j| gram[[i, j]]);
        let chol = g.cholesky().ok_or(DspError::RankDeficient)?;
        let l_diag_min = chol
            .l()
            .diagonal()
            .iter()
            .fold(f64::INFINITY, |m, v| m.min(*v));
        let l_diag_max = chol.l().diagonal().iter().fold(0.0f64, |m, v| m.max(*v));
        if !(l_diag_min > l_diag_max * 1e-7) {
            return Err(DspError::RankDeficient);
        }
        let rhs = DMatrix::from_fn(n, fb.ncols(), |i, j| fb[[i, j]]);
        let sol = chol.solve(&rhs);
        let pinv = Array2::from_shape_fn((n, fb.ncols()), |(i, j)| sol[(i, j)]);
        Ok(Self { pinv })
    }

    /// Linear power estimate before clamping (frames x bins).
    pub fn linear_power(&self, mel_power: &Array2<f64>) -> Array2<f64> {
        mel_power.dot(&self.pinv)
    }

    pub fn apply(&self, mel: &MelSpectrogram) -> Result<MagnitudeSpectrogram, DspError> {
        if mel.domain != MelDomain::Power {
            return Err(DspError::InvalidArgument(
                "mel_to_linear expects a power-domain mel spectrogram".into(),
            ));
        }
        if mel.n_mels() != self.pinv.nrows() {
            return Err(DspError::DimensionMismatch(format!(
                "mel has {} bins, filterbank has {}",
                mel.n_mels(),
                self.pinv.nrows()
            )));
        }
        Ok(MagnitudeSpectrogram {
            data: self.linear_power(&mel.data).mapv(|v| v.max(0.0).sqrt()),
            params: mel.params,
            signal: mel.signal,
        })
    }
}

/// Least-squares mel inversion to a linear magnitude spectrogram.
pub fn mel_to_linear(
    mel: &MelSpectrogram,
    filterbank: &FilterBank,
) -> Result<MagnitudeSpectrogram, DspError> {
    if filterbank.n_fft != mel.params.n_fft {
        return Err(DspError::DimensionMismatch(format!(
            "filterbank built for n_fft={}, mel uses n_fft={}",
            filterbank.n_fft, mel.params.n_fft
        )));
    }
    MelInverse::new(filterbank)?.apply(mel)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseInit {
    Zero,
    Random { seed: u64 },
}

#[derive(Debug, Clone)]
pub struct GriffinLimOutput {
    pub waveform: Waveform,
    /// Spectral convergence of the waveform produced at each iteration.
    pub convergence: Vec<f64>,
}

/// Griffin-Lim phase reconstruction by alternating projections.
pub fn griffin_lim(
    magnitude: &MagnitudeSpectrogram,
    n_iters: usize,
    init: PhaseInit,
) -> Result<GriffinLimOutput, DspError> {
    if n_iters == 0 {
        return Err(DspError::InvalidArgument("n_iters must be >= 1".into()));
    }
    if magnitude.data.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(DspError::InvalidArgument(
            "magnitude must be finite and nonnegative".into(),
        ));
    }
    let engine = Stft::new(magnitude.params)?;
    let target = &magnitude.data;
    let target_norm = target.iter().map(|v| v * v).sum::<f64>().sqrt();
    let SignalInfo { len, sample_rate } = magnitude.signal;

    let mut estimate = match init {
        PhaseInit::Zero => target.mapv(|m| Complex64::new(m, 0.0)),
        PhaseInit::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            target.mapv(|m| Complex64::from_polar(m, rng.gen_range(-PI..PI)))
        }
    };
    let mut convergence = Vec::with_capacity(n_iters);
    let mut waveform = Waveform::new(vec![0.0; len], sample_rate);
    for _ in 0..n_iters {
        waveform = engine.inverse(&estimate, len, sample_rate)?;
        let rebuilt = engine.forward(&waveform)?.data;
        if rebuilt.dim() != target.dim() {
            return Err(DspError::DimensionMismatch(format!(
                "magnitude has shape {:?} but signal length {len} yields {:?}",
                target.dim(),
                rebuilt.dim()
            )));
        }
        let mut err = 0.0;
        for ((e, r), &m) in estimate.iter_mut().zip(rebuilt.iter()).zip(target.iter()) {
            let mag = r.norm();
            err += (mag - m) * (mag - m);
            *e = if mag > 0.0 {
                *r * (m / mag)
            } else {
                Complex64::new(m, 0.0)
            };
        }
        convergence.push(if target_norm > 0.0 {
            err.sqrt() / target_norm
        } else {
            0.0
        });
    }
    Ok(GriffinLimOutput {
        waveform,
        convergence,
    })
}

/// Spectral convergence `||(|STFT(y)| - M)||_F / ||M||_F`.
pub fn spectral_convergence(
    waveform: &Waveform,
    target: &MagnitudeSpectrogram,
) -> Result<f64, DspError> {
    let spec = stft(waveform, &target.params)?;
    if spec.data.dim() != target.data.dim() {
        return Err(DspError::DimensionMismatch("frame count differs".into()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (c, &m) in spec.data.iter().zip(target.data.iter()) {
        num += (c.norm() - m).powi(2);
        den += m * m;
    }
    Ok(if den > 0.0 { (num / den).sqrt() } else { 0.0 })
}
