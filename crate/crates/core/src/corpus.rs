//! Corpus I/O: WAV audio, utterance manifests and verification trial lists.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

/// The only sample rate the pipeline accepts.
pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: malformed WAV header: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },
    #[error("{path}: unsupported channel count {channels} (mono only)")]
    UnsupportedChannels { path: PathBuf, channels: u16 },
    #[error("{path}: unsupported sample rate {rate} Hz (expected {SAMPLE_RATE})")]
    UnsupportedSampleRate { path: PathBuf, rate: u32 },
    #[error("{path}: unsupported encoding {format} with {bits} bits per sample")]
    UnsupportedEncoding {
        path: PathBuf,
        format: &'static str,
        bits: u16,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: empty manifest")]
    EmptyManifest { path: PathBuf },
    #[error("{path}:{line}: duplicate utterance id {utt_id:?}")]
    DuplicateUtterance {
        path: PathBuf,
        line: usize,
        utt_id: String,
    },
    #[error("{path}:{line}: malformed line: {reason}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{path}:{line}: unknown gender token {token:?}")]
    UnknownGender {
        path: PathBuf,
        line: usize,
        token: String,
    },
    #[error("{path}:{line}: unknown trial label {token:?}")]
    UnknownTrialLabel {
        path: PathBuf,
        line: usize,
        token: String,
    },
    #[error("{path}: trial list has {targets} target and {nontargets} nontarget trials; both must be present")]
    DegenerateTrials {
        path: PathBuf,
        targets: usize,
        nontargets: usize,
    },
}

impl CorpusError {
    fn io(path: &Path, source: io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Mono audio at a fixed sample rate. Samples are kept in double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

impl FromStr for WavEncoding {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pcm16" => Ok(WavEncoding::Pcm16),
            "float32" => Ok(WavEncoding::Float32),
            other => Err(format!("unknown WAV encoding {other:?} (pcm16|float32)")),
        }
    }
}

/// Maps a 16-bit code to [-1, 1) with the asymmetric divisor 32768.
pub fn dequantize_pcm16(code: i16) -> f64 {
    code as f64 / 32768.0
}

/// Inverse of [`dequantize_pcm16`], rounding to nearest and clamping to the code range.
pub fn quantize_pcm16(sample: f64) -> i16 {
    let scaled = (sample * 32768.0).round();
    if scaled.is_nan() {
        return 0;
    }
    scaled.clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

fn map_hound_error(path: &Path, err: hound::Error) -> CorpusError {
    match err {
        hound::Error::IoError(e) if e.kind() == io::ErrorKind::UnexpectedEof => {
            CorpusError::MalformedHeader {
                path: path.to_path_buf(),
                reason: "unexpected end of file".into(),
            }
        }
        hound::Error::IoError(e) => CorpusError::io(path, e),
        hound::Error::FormatError(reason) => CorpusError::MalformedHeader {
            path: path.to_path_buf(),
            reason: reason.into(),
        },
        hound::Error::Unsupported => CorpusError::UnsupportedEncoding {
            path: path.to_path_buf(),
            format: "unknown",
            bits: 0,
        },
        other => CorpusError::MalformedHeader {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    }
}

/// Reads a mono 16 kHz WAV file holding 16-bit integer or 32-bit float PCM.
///
/// Float samples are clamped to [-1, 1]; non-finite float samples become 0.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform, CorpusError> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path).map_err(|e| map_hound_error(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(CorpusError::UnsupportedChannels {
            path: path.to_path_buf(),
            channels: spec.channels,
        });
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(CorpusError::UnsupportedSampleRate {
            path: path.to_path_buf(),
            rate: spec.sample_rate,
        });
    }
    let samples = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(dequantize_pcm16))
            .collect::<Result<Vec<_>, _>>(),
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| {
                s.map(|v| {
                    let v = v as f64;
                    if v.is_finite() {
                        v.clamp(-1.0, 1.0)
                    } else {
                        0.0
                    }
                })
            })
            .collect::<Result<Vec<_>, _>>(),
        (hound::SampleFormat::Int, bits) => {
            return Err(CorpusError::UnsupportedEncoding {
                path: path.to_path_buf(),
                format: "integer PCM",
                bits,
            })
        }
        (hound::SampleFormat::Float, bits) => {
            return Err(CorpusError::UnsupportedEncoding {
                path: path.to_path_buf(),
                format: "float PCM",
                bits,
            })
        }
    }
    .map_err(|e| map_hound_error(path, e))?;
    Ok(Waveform::new(samples, spec.sample_rate))
}

pub fn write_wav(
    waveform: &Waveform,
    path: impl AsRef<Path>,
    encoding: WavEncoding,
) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: waveform.sample_rate,
        bits_per_sample: match encoding {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            WavEncoding::Pcm16 => hound::SampleFormat::Int,
            WavEncoding::Float32 => hound::SampleFormat::Float,
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound_error(path, e))?;
    for &s in &waveform.samples {
        let res = match encoding {
            WavEncoding::Pcm16 => writer.write_sample(quantize_pcm16(s)),
            WavEncoding::Float32 => writer.write_sample(s as f32),
        };
        res.map_err(|e| map_hound_error(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound_error(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Gender {
    Female,
    Male,
    Unknown,
}

impl Gender {
    pub fn as_str(&self) -> &'static str {
        match self {
            Gender::Female => "female",
            Gender::Male => "male",
            Gender::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Gender {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "female" | "f" | "F" => Ok(Gender::Female),
            "male" | "m" | "M" => Ok(Gender::Male),
            "unknown" | "-" => Ok(Gender::Unknown),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UtteranceRecord {
    pub utt_id: String,
    pub speaker_id: String,
    pub gender: Gender,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub label: String,
    pub records: Vec<UtteranceRecord>,
}

impl Manifest {
    pub fn new(label: impl Into<String>, records: Vec<UtteranceRecord>) -> Self {
        Self {
            label: label.into(),
            records,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Sorted, deduplicated speaker ids.
    pub fn speakers(&self) -> Vec<String> {
        self.records
            .iter()
            .map(|r| r.speaker_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn get(&self, utt_id: &str) -> Option<&UtteranceRecord> {
        self.records.iter().find(|r| r.utt_id == utt_id)
    }

    /// Writes the manifest as TSV. Relative record paths are written verbatim.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| CorpusError::io(path, e))?;
        let mut out = BufWriter::new(file);
        let write = |out: &mut BufWriter<fs::File>| -> io::Result<()> {
            for r in &self.records {
                writeln!(
                    out,
                    "{}\t{}\t{}\t{}",
                    r.utt_id,
                    r.speaker_id,
                    r.gender,
                    r.path.display()
                )?;
            }
            out.flush()
        };
        write(&mut out).map_err(|e| CorpusError::io(path, e))
    }
}

/// Loads a TSV manifest: `utt_id<TAB>speaker_id<TAB>gender<TAB>path`, `#` comments.
///
/// The manifest label is the file stem. Relative audio paths are resolved
/// against the manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();

    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(CorpusError::MalformedLine {
                path: path.to_path_buf(),
                line: line_no,
                reason: format!("expected 4 tab-separated fields, found {}", fields.len()),
            });
        }
        if fields.iter().any(|f| f.is_empty()) {
            return Err(CorpusError::MalformedLine {
                path: path.to_path_buf(),
                line: line_no,
                reason: "empty field".into(),
            });
        }
        let gender = fields[2]
            .parse::<Gender>()
            .map_err(|_| CorpusError::UnknownGender {
                path: path.to_path_buf(),
                line: line_no,
                token: fields[2].to_string(),
            })?;
        if !seen.insert(fields[0].to_string()) {
            return Err(CorpusError::DuplicateUtterance {
                path: path.to_path_buf(),
                line: line_no,
                utt_id: fields[0].to_string(),
            });
        }
        let audio = PathBuf::from(fields[3]);
        let audio = if audio.is_relative() {
            base.join(audio)
        } else {
            audio
        };
        records.push(UtteranceRecord {
            utt_id: fields[0].to_string(),
            speaker_id: fields[1].to_string(),
            gender,
            path: audio,
        });
    }
    if records.is_empty() {
        return Err(CorpusError::EmptyManifest {
            path: path.to_path_buf(),
        });
    }
    Ok(Manifest { label, records })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrialLabel {
    Target,
    Nontarget,
}

impl TrialLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrialLabel::Target => "target",
            TrialLabel::Nontarget => "nontarget",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial {
    pub enroll_utt: String,
    pub test_utt: String,
    pub label: TrialLabel,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialList {
    pub subset: String,
    pub trials: Vec<Trial>,
}

impl TrialList {
    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn target_count(&self) -> usize {
        self.trials
            .iter()
            .filter(|t| t.label == TrialLabel::Target)
            .count()
    }

    pub fn nontarget_count(&self) -> usize {
        self.trials.len() - self.target_count()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let path = path.as_ref();
        let mut text = String::new();
        for t in &self.trials {
            text.push_str(&format!(
                "{} {} {}\n",
                t.enroll_utt,
                t.test_utt,
                t.label.as_str()
            ));
        }
        fs::write(path, text).map_err(|e| CorpusError::io(path, e))
    }
}

/// Loads `enroll test {target|nontarget}` lines. The subset name is the file stem.
pub fn load_trials(path: impl AsRef<Path>) -> Result<TrialList, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    let mut trials = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(CorpusError::MalformedLine {
                path: path.to_path_buf(),
                line: line_no,
                reason: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        let label = match fields[2] {
            "target" => TrialLabel::Target,
            "nontarget" => TrialLabel::Nontarget,
            other => {
                return Err(CorpusError::UnknownTrialLabel {
                    path: path.to_path_buf(),
                    line: line_no,
                    token: other.to_string(),
                })
            }
        };
        trials.push(Trial {
            enroll_utt: fields[0].to_string(),
            test_utt: fields[1].to_string(),
            label,
        });
    }
    let list = TrialList {
        subset: path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        trials,
    };
    let (targets, nontargets) = (list.target_count(), list.nontarget_count());
    if targets == 0 || nontargets == 0 {
        return Err(CorpusError::DegenerateTrials {
            path: path.to_path_buf(),
            targets,
            nontargets,
        });
    }
    Ok(list)
}

/// All unordered pairs of distinct utterances, labeled by speaker identity.
pub fn all_pairs_trials(manifest: &Manifest, subset: impl Into<String>) -> TrialList {
    let mut trials = Vec::new();
    for (i, a) in manifest.records.iter().enumerate() {
        for b in &manifest.records[i + 1..] {
            trials.push(Trial {
                enroll_utt: a.utt_id.clone(),
                test_utt: b.utt_id.clone(),
                label: if a.speaker_id == b.speaker_id {
                    TrialLabel::Target
                } else {
                    TrialLabel::Nontarget
                },
            });
        }
    }
    TrialList {
        subset: subset.into(),
        trials,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    fn write_raw_pcm16(path: &Path, codes: &[i16]) {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: SAMPLE_RATE,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for &c in codes {
            w.write_sample(c).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn pcm16_dequantization_points() {
        let dir = tmp();
        let p = dir.path().join("a.wav");
        write_raw_pcm16(&p, &[0, -32768, 32767]);
        let w = read_wav(&p).unwrap();
        assert_eq!(w.samples, vec![0.0, -1.0, 32767.0 / 32768.0]);
        assert_eq!(w.samples[2], 0.999969482421875);
        assert_eq!(w.sample_rate, SAMPLE_RATE);
    }

    #[test]
    fn float32_round_trip_is_exact() {
        let dir = tmp();
        let p = dir.path().join("f.wav");
        let w = Waveform::new(vec![0.5, -0.25], SAMPLE_RATE);
        write_wav(&w, &p, WavEncoding::Float32).unwrap();
        assert_eq!(read_wav(&p).unwrap(), w);
    }

    #[test]
    fn pcm16_write_quantizes_and_clamps() {
        let dir = tmp();
        let p = dir.path().join("q.wav");
        let w = Waveform::new(vec![0.999999, 2.0, -3.0], SAMPLE_RATE);
        write_wav(&w, &p, WavEncoding::Pcm16).unwrap();
        let back = read_wav(&p).unwrap();
        assert_eq!(back.samples[0], 0.999969482421875);
        assert_eq!(quantize_pcm16(2.0), 32767);
        assert_eq!(back.samples[1], 32767.0 / 32768.0);
        assert_eq!(back.samples[2], -1.0);
    }

    #[test]
    fn float_samples_clamped_on_read() {
        let dir = tmp();
        let p = dir.path().join("c.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: SAMPLE_RATE,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut wr = hound::WavWriter::create(&p, spec).unwrap();
        for v in [1.5f32, -7.0, 0.25] {
            wr.write_sample(v).unwrap();
        }
        wr.finalize().unwrap();
        assert_eq!(read_wav(&p).unwrap().samples, vec![1.0, -1.0, 0.25]);
    }

    #[test]
    fn rejects_stereo_wrong_rate_and_encoding() {
        let dir = tmp();
        let mk = |name: &str, channels, rate, bits, fmt| {
            let p = dir.path().join(name);
            let spec = hound::WavSpec {
                channels,
                sample_rate: rate,
                bits_per_sample: bits,
                sample_format: fmt,
            };
            let mut w = hound::WavWriter::create(&p, spec).unwrap();
            for _ in 0..channels {
                match (fmt, bits) {
                    (hound::SampleFormat::Int, 8) => w.write_sample(0i8).unwrap(),
                    (hound::SampleFormat::Int, _) => w.write_sample(0i32).unwrap(),
                    _ => w.write_sample(0f32).unwrap(),
                }
            }
            w.finalize().unwrap();
            p
        };
        let stereo = mk("s.wav", 2, SAMPLE_RATE, 16, hound::SampleFormat::Int);
        assert!(matches!(
            read_wav(stereo),
            Err(CorpusError::UnsupportedChannels { channels: 2, .. })
        ));
        let rate = mk("r.wav", 1, 22050, 16, hound::SampleFormat::Int);
        assert!(matches!(
            read_wav(rate),
            Err(CorpusError::UnsupportedSampleRate { rate: 22050, .. })
        ));
        let pcm24 = mk("e.wav", 1, SAMPLE_RATE, 24, hound::SampleFormat::Int);
        assert!(matches!(
            read_wav(pcm24),
            Err(CorpusError::UnsupportedEncoding { bits: 24, .. })
        ));
    }

    #[test]
    fn garbage_is_malformed_header() {
        let dir = tmp();
        let p = dir.path().join("bad.wav");
        fs::write(&p, b"RIFX1234WAVEjunkjunk").unwrap();
        assert!(matches!(
            read_wav(&p),
            Err(CorpusError::MalformedHeader { .. })
        ));
    }

    #[test]
    fn manifest_parsing() {
        let dir = tmp();
        let p = dir.path().join("train-clean.tsv");
        fs::write(
            &p,
            "# comment\n84-1234-0001\t84\tfemale\twav/a.wav\n84-1234-0002\t84\tunknown\t/abs/b.wav\n",
        )
        .unwrap();
        let m = load_manifest(&p).unwrap();
        assert_eq!(m.label, "train-clean");
        assert_eq!(m.len(), 2);
        assert_eq!(m.records[0].gender, Gender::Female);
        assert_eq!(m.records[0].speaker_id, "84");
        assert_eq!(m.records[0].path, dir.path().join("wav/a.wav"));
        assert_eq!(m.records[1].path, PathBuf::from("/abs/b.wav"));
        assert_eq!(m.speakers(), vec!["84".to_string()]);
    }

    #[test]
    fn manifest_errors() {
        let dir = tmp();
        let p = dir.path().join("m.tsv");
        fs::write(&p, "a\t1\tmale\tx.wav\na\t2\tfemale\ty.wav\n").unwrap();
        let err = load_manifest(&p).unwrap_err();
        assert!(matches!(
            err,
            CorpusError::DuplicateUtterance { line: 2, .. }
        ));
        assert!(err.to_string().contains("\"a\""));

        fs::write(&p, "").unwrap();
        let err = load_manifest(&p).unwrap_err();
        assert!(err.to_string().contains("empty manifest"));

        fs::write(&p, "# only comments\n").unwrap();
        assert!(matches!(
            load_manifest(&p),
            Err(CorpusError::EmptyManifest { .. })
        ));

        fs::write(&p, "a\t1\tmale\tx.wav\nb\t1 male y.wav\n").unwrap();
        assert!(matches!(
            load_manifest(&p),
            Err(CorpusError::MalformedLine { line: 2, .. })
        ));

        fs::write(&p, "a\t1\tother\tx.wav\n").unwrap();
        assert!(matches!(
            load_manifest(&p),
            Err(CorpusError::UnknownGender { line: 1, .. })
        ));
    }

    #[test]
    fn trial_parsing() {
        let dir = tmp();
        let p = dir.path().join("dev-female.txt");
        fs::write(&p, "u1 u2 target\nu1 u3 nontarget\nu2 u3 nontarget\n").unwrap();
        let t = load_trials(&p).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.subset, "dev-female");
        assert_eq!(
            t.trials[0],
            Trial {
                enroll_utt: "u1".into(),
                test_utt: "u2".into(),
                label: TrialLabel::Target
            }
        );
        assert_eq!(t.trials[2].enroll_utt, "u2");
        assert_eq!((t.target_count(), t.nontarget_count()), (1, 2));

        fs::write(&p, "u1 u2 nontarget\nu1 u3 nontarget\n").unwrap();
        assert!(matches!(
            load_trials(&p),
            Err(CorpusError::DegenerateTrials { targets: 0, .. })
        ));
        fs::write(&p, "u1 u2 maybe\n").unwrap();
        assert!(matches!(
            load_trials(&p),
            Err(CorpusError::UnknownTrialLabel { .. })
        ));
    }

    #[test]
    fn all_pairs_labels_by_speaker() {
        let rec = |u: &str, s: &str| UtteranceRecord {
            utt_id: u.into(),
            speaker_id: s.into(),
            gender: Gender::Male,
            path: PathBuf::new(),
        };
        let m = Manifest::new("x", vec![rec("a", "1"), rec("b", "1"), rec("c", "2")]);
        let t = all_pairs_trials(&m, "x");
        assert_eq!(t.len(), 3);
        assert_eq!(t.target_count(), 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn pcm16_round_trip_within_one_quantum(
            samples in proptest::collection::vec(-1.0f64..=(32767.0 / 32768.0), 1..200)
        ) {
            let dir = tmp();
            let p = dir.path().join("p.wav");
            let w = Waveform::new(samples, SAMPLE_RATE);
            write_wav(&w, &p, WavEncoding::Pcm16).unwrap();
            let back = read_wav(&p).unwrap();
            prop_assert_eq!(back.len(), w.len());
            for (a, b) in w.samples.iter().zip(&back.samples) {
                prop_assert!((a - b).abs() <= 1.0 / 32768.0);
            }
        }

        #[test]
        fn float32_round_trip_exact_for_representable(
            samples in proptest::collection::vec(-1.0f32..=1.0, 1..200)
        ) {
            let dir = tmp();
            let p = dir.path().join("p.wav");
            let w = Waveform::new(samples.iter().map(|&s| s as f64).collect(), SAMPLE_RATE);
            write_wav(&w, &p, WavEncoding::Float32).unwrap();
            prop_assert_eq!(read_wav(&p).unwrap(), w);
        }

        #[test]
        fn manifest_lines_map_one_to_one(n in 1usize..30, comments in 0usize..5) {
            let dir = tmp();
            let p = dir.path().join("m.tsv");
            let mut text = String::new();
            for c in 0..comments {
                text.push_str(&format!("# c{c}\n"));
            }
            for i in 0..n {
                text.push_str(&format!("u{i}\tspk{}\tmale\tw{i}.wav\n", i % 3));
            }
            fs::write(&p, text).unwrap();
            let m = load_manifest(&p).unwrap();
            prop_assert_eq!(m.len(), n);
            for (i, r) in m.records.iter().enumerate() {
                prop_assert_eq!(&r.utt_id, &format!("u{i}"));
            }
        }
    }
}
