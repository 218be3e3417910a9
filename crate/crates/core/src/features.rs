//! Frame-level feature matrices: log-mel fbank extraction, ingestion of
//! externally computed embeddings, global mean/variance normalization, and
//! the `SPWF` container shared by all of them.
//!
//! `SPWF` layout (little-endian throughout):
//!
//! ```text
//! "SPWF" | u32 version=1 | u32 rows | u32 cols | u16 tag_len | tag | rows*cols f32 (row-major)
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{read_wav, CorpusError, Manifest, Waveform};
use crate::dsp::{self, DspError, FilterBank, StftParams, DEFAULT_LOG_FLOOR};
use crate::pool;

pub const SPWF_MAGIC: &[u8; 4] = b"SPWF";
pub const SPWF_VERSION: u32 = 1;
pub const FBANK_DIM: usize = 40;
pub const FBANK_TAG: &str = "fbank40";
pub const SSL_TAG: &str = "ssl1024";
pub const CMVN_TAG: &str = "cmvn";
pub const STD_FLOOR: f64 = 1e-8;
/// 25 ms at 16 kHz.
pub const MIN_FBANK_SAMPLES: usize = 400;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("{path}: bad magic {found:?} (expected \"SPWF\")")]
    BadMagic { path: PathBuf, found: [u8; 4] },
    #[error("{path}: unsupported version {found} (expected {SPWF_VERSION})")]
    VersionMismatch { path: PathBuf, found: u32 },
    #[error("{path}: truncated: need {needed} bytes, file has {actual}")]
    Truncated {
        path: PathBuf,
        needed: usize,
        actual: usize,
    },
    #[error("{path}: {extra} unexpected trailing bytes")]
    TrailingBytes { path: PathBuf, extra: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("waveform of {len} samples is shorter than 25 ms")]
    TooShort { len: usize },
    #[error("feature matrix must have at least one frame and one dimension")]
    Empty,
    #[error("feature matrix contains non-finite values")]
    NonFinite,
    #[error("tag of {0} bytes exceeds the u16 length field")]
    TagTooLong(usize),
    #[error("dimension mismatch: stats have {expected} dims, matrix has {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("{path}: CMVN file must have 2 rows and tag \"cmvn\"")]
    NotCmvn { path: PathBuf },
    #[error("no frames to accumulate statistics over")]
    NoFrames,
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("utterance {utt_id}: {message}")]
    Utterance { utt_id: String, message: String },
}

/// Frames x dim single-precision matrix with its source tag.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub data: Array2<f32>,
    pub source_tag: String,
}

impl FeatureMatrix {
    pub fn new(data: Array2<f32>, source_tag: impl Into<String>) -> Result<Self, FeatureError> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(FeatureError::Empty);
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite);
        }
        Ok(Self {
            data,
            source_tag: source_tag.into(),
        })
    }

    pub fn frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn to_f64(&self) -> Array2<f64> {
        self.data.mapv(|v| v as f64)
    }
}

pub fn feature_path(dir: impl AsRef<Path>, utt_id: &str) -> PathBuf {
    dir.as_ref().join(format!("{utt_id}.spwf"))
}

pub fn encode_features(matrix: &FeatureMatrix) -> Result<Vec<u8>, FeatureError> {
    let tag = matrix.source_tag.as_bytes();
    if tag.len() > u16::MAX as usize {
        return Err(FeatureError::TagTooLong(tag.len()));
    }
    let (rows, cols) = matrix.data.dim();
    let mut out = Vec::with_capacity(18 + tag.len() + 4 * rows * cols);
    out.extend_from_slice(SPWF_MAGIC);
    out.extend_from_slice(&SPWF_VERSION.to_le_bytes());
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    out.extend_from_slice(&(tag.len() as u16).to_le_bytes());
    out.extend_from_slice(tag);
    for v in matrix.data.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_features(bytes: &[u8], path: &Path) -> Result<FeatureMatrix, FeatureError> {
    let truncated = |needed: usize| FeatureError::Truncated {
        path: path.to_path_buf(),
        needed,
        actual: bytes.len(),
    };
    if bytes.len() < 4 {
        return Err(truncated(4));
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if &magic != SPWF_MAGIC {
        return Err(FeatureError::BadMagic {
            path: path.to_path_buf(),
            found: magic,
        });
    }
    if bytes.len() < 18 {
        return Err(truncated(18));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != SPWF_VERSION {
        return Err(FeatureError::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
        });
    }
    let rows = u32_at(8) as usize;
    let cols = u32_at(12) as usize;
    let tag_len = u16::from_le_bytes([bytes[16], bytes[17]]) as usize;
    let header = 18 + tag_len;
    let needed = header + 4 * rows * cols;
    if bytes.len() < needed {
        return Err(truncated(needed));
    }
    if bytes.len() > needed {
        return Err(FeatureError::TrailingBytes {
            path: path.to_path_buf(),
            extra: bytes.len() - needed,
        });
    }
    let tag = String::from_utf8_lossy(&bytes[18..header]).into_owned();
    let values: Vec<f32> = bytes[header..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let data = Array2::from_shape_vec((rows, cols), values).expect("length checked above");
    Ok(FeatureMatrix {
        data,
        source_tag: tag,
    })
}

pub fn write_features(matrix: &FeatureMatrix, path: impl AsRef<Path>) -> Result<(), FeatureError> {
    let path = path.as_ref();
    fs::write(path, encode_features(matrix)?).map_err(|source| FeatureError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMatrix, FeatureError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| FeatureError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_features(&bytes, path)
}

/// Log-mel filterbank front end (40 mels, 1024-point STFT, hop 256).
pub struct FbankExtractor {
    params: StftParams,
    filterbank: FilterBank,
}

impl Default for FbankExtractor {
    fn default() -> Self {
        let params = StftParams::default();
        let filterbank = dsp::mel_filterbank(
            params.n_fft,
            FBANK_DIM,
            crate::corpus::SAMPLE_RATE,
            0.0,
            8000.0,
        )
        .expect("default fbank configuration is valid");
        Self { params, filterbank }
    }
}

impl FbankExtractor {
    pub fn extract(&self, waveform: &Waveform) -> Result<FeatureMatrix, FeatureError> {
        if waveform.len() < MIN_FBANK_SAMPLES {
            return Err(FeatureError::TooShort {
                len: waveform.len(),
            });
        }
        let mel = dsp::mel_spectrogram(waveform, &self.params, &self.filterbank)?;
        let log = dsp::log_compress(&mel, DEFAULT_LOG_FLOOR)?;
        FeatureMatrix::new(log.data.mapv(|v| v as f32), FBANK_TAG)
    }
}

pub fn fbank_source(waveform: &Waveform) -> Result<FeatureMatrix, FeatureError> {
    FbankExtractor::default().extract(waveform)
}

#[derive(Debug, Clone, Default)]
pub struct ExtractionReport {
    pub written: usize,
    pub failures: Vec<(String, String)>,
}

/// Computes fbank features for every manifest utterance into `out_dir`.
pub fn extract_corpus(
    manifest: &Manifest,
    out_dir: impl AsRef<Path>,
    jobs: usize,
) -> Result<ExtractionReport, FeatureError> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|source| FeatureError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let extractor = FbankExtractor::default();
    let results: Vec<Result<(), String>> = pool::install(jobs, || {
        manifest
            .records
            .par_iter()
            .map(|rec| {
                let wav = read_wav(&rec.path).map_err(|e| e.to_string())?;
                let feats = extractor.extract(&wav).map_err(|e| e.to_string())?;
                write_features(&feats, feature_path(out_dir, &rec.utt_id))
                    .map_err(|e| e.to_string())
            })
            .collect()
    });
    let mut report = ExtractionReport::default();
    for (rec, res) in manifest.records.iter().zip(results) {
        match res {
            Ok(()) => report.written += 1,
            Err(msg) => report.failures.push((rec.utt_id.clone(), msg)),
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub enum IngestProblem {
    Missing {
        utt_id: String,
    },
    DimMismatch {
        utt_id: String,
        found: usize,
        expected: usize,
    },
    NonFinite {
        utt_id: String,
    },
    Unreadable {
        utt_id: String,
        message: String,
    },
}

impl std::fmt::Display for IngestProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            IngestProblem::Missing { utt_id } => write!(f, "{utt_id}: missing feature file"),
            IngestProblem::DimMismatch {
                utt_id,
                found,
                expected,
            } => write!(f, "{utt_id}: dim {found}, expected {expected}"),
            IngestProblem::NonFinite { utt_id } => write!(f, "{utt_id}: non-finite values"),
            IngestProblem::Unreadable { utt_id, message } => write!(f, "{utt_id}: {message}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestReport {
    pub checked: usize,
    pub problems: Vec<IngestProblem>,
}

impl IngestReport {
    pub fn is_clean(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Validates externally produced feature files (one `<utt_id>.spwf` per utterance).
pub fn ingest_external(
    dir: impl AsRef<Path>,
    manifest: &Manifest,
    expected_dim: usize,
) -> IngestReport {
    let dir = dir.as_ref();
    let problems = manifest
        .records
        .par_iter()
        .filter_map(|rec| {
            let utt_id = rec.utt_id.clone();
            let path = feature_path(dir, &utt_id);
            if !path.exists() {
                return Some(IngestProblem::Missing { utt_id });
            }
            match read_features(&path) {
                Err(e) => Some(IngestProblem::Unreadable {
                    utt_id,
                    message: e.to_string(),
                }),
                Ok(m) if m.dim() != expected_dim => Some(IngestProblem::DimMismatch {
                    utt_id,
                    found: m.dim(),
                    expected: expected_dim,
                }),
                Ok(m) if m.frames() == 0 || m.data.iter().any(|v| !v.is_finite()) => {
                    Some(IngestProblem::NonFinite { utt_id })
                }
                Ok(_) => None,
            }
        })
        .collect();
    IngestReport {
        checked: manifest.len(),
        problems,
    }
}

/// Partial sums for mean/variance; merging is associative.
#[derive(Debug, Clone, PartialEq)]
pub struct CmvnAccumulator {
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
    pub count: u64,
}

impl CmvnAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            sum: vec![0.0; dim],
            sum_sq: vec![0.0; dim],
            count: 0,
        }
    }

    pub fn from_matrix(m: &FeatureMatrix) -> Self {
        let mut acc = Self::new(m.dim());
        acc.add(m);
        acc
    }

    pub fn add(&mut self, m: &FeatureMatrix) {
        for row in m.data.rows() {
            for (k, &v) in row.iter().enumerate() {
                let v = v as f64;
                self.sum[k] += v;
                self.sum_sq[k] += v * v;
            }
        }
        self.count += m.frames() as u64;
    }

    pub fn merge(mut self, other: &Self) -> Self {
        for k in 0..self.sum.len() {
            self.sum[k] += other.sum[k];
            self.sum_sq[k] += other.sum_sq[k];
        }
        self.count += other.count;
        self
    }

    pub fn finish(&self) -> Result<CmvnStats, FeatureError> {
        if self.count == 0 {
            return Err(FeatureError::NoFrames);
        }
        let n = self.count as f64;
        let mean: Vec<f64> = self.sum.iter().map(|s| s / n).collect();
        let std = self
            .sum_sq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| (sq / n - m * m).max(0.0).sqrt().max(STD_FLOOR))
            .collect();
        Ok(CmvnStats {
            mean,
            std,
            frame_count: self.count,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmvnStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Frames accumulated; 0 for stats loaded from disk (not stored).
    pub frame_count: u64,
}

impl CmvnStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
            frame_count: 0,
        }
    }

    /// Normalized copy in double precision.
    pub fn normalize(&self, matrix: &FeatureMatrix) -> Result<Array2<f64>, FeatureError> {
        if matrix.dim() != self.dim() {
            return Err(FeatureError::DimMismatch {
                expected: self.dim(),
                found: matrix.dim(),
            });
        }
        let mut out = matrix.to_f64();
        for mut row in out.rows_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[k]) / self.std[k];
            }
        }
        Ok(out)
    }

    pub fn to_matrix(&self) -> FeatureMatrix {
        let dim = self.dim();
        let data = Array2::from_shape_fn((2, dim), |(r, k)| {
            if r == 0 {
                self.mean[k] as f32
            } else {
                self.std[k] as f32
            }
        });
        FeatureMatrix {
            data,
            source_tag: CMVN_TAG.into(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FeatureError> {
        write_features(&self.to_matrix(), path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FeatureError> {
        let path = path.as_ref();
        let m = read_features(path)?;
        if m.frames() != 2 || m.source_tag != CMVN_TAG {
            return Err(FeatureError::NotCmvn {
                path: path.to_path_buf(),
            });
        }
        Ok(Self {
            mean: m.data.row(0).iter().map(|&v| v as f64).collect(),
            std: m
                .data
                .row(1)
                .iter()
                .map(|&v| (v as f64).max(STD_FLOOR))
                .collect(),
            frame_count: 0,
        })
    }
}

/// Global statistics over every manifest utterance's features in `feature_dir`.
pub fn compute_cmvn(
    manifest: &Manifest,
    feature_dir: impl AsRef<Path>,
) -> Result<CmvnStats, FeatureError> {
    let dir = feature_dir.as_ref();
    let partials: Vec<Result<CmvnAccumulator, FeatureError>> = manifest
        .records
        .par_iter()
        .map(|rec| {
            read_features(feature_path(dir, &rec.utt_id)).map(|m| CmvnAccumulator::from_matrix(&m))
        })
        .collect();
    let mut total: Option<CmvnAccumulator> = None;
    for p in partials {
        let p = p?;
        total = Some(match total {
            None => p,
            Some(t) => {
                if t.sum.len() != p.sum.len() {
                    return Err(FeatureError::DimMismatch {
                        expected: t.sum.len(),
                        found: p.sum.len(),
                    });
                }
                t.merge(&p)
            }
        });
    }
    total.ok_or(FeatureError::NoFrames)?.finish()
}

pub fn apply_cmvn(
    matrix: &FeatureMatrix,
    stats: &CmvnStats,
) -> Result<FeatureMatrix, FeatureError> {
    if matrix.dim() != stats.dim() {
        return Err(FeatureError::DimMismatch {
            expected: stats.dim(),
            found: matrix.dim(),
        });
    }
    let mut data = matrix.data.clone();
    for mut row in data.rows_mut() {
        for (k, v) in row.iter_mut().enumerate() {
            *v = ((*v as f64 - stats.mean[k]) / stats.std[k]) as f32;
        }
    }
    Ok(FeatureMatrix {
        data,
        source_tag: matrix.source_tag.clone(),
    })
}

/// Per-utterance variant: normalizes with the matrix's own statistics.
pub fn apply_utterance_cmvn(matrix: &FeatureMatrix) -> Result<FeatureMatrix, FeatureError> {
    apply_cmvn(matrix, &CmvnAccumulator::from_matrix(matrix).finish()?)
}
