//! Evaluation: embeddings for a manifest, cosine trial scoring, equal error
//! rate, and per-gender EER tables with averaged rows.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use ndarray::Array1;
use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{Gender, Manifest, Trial, TrialLabel, TrialList};
use crate::embedder::{Embedder, EmbedderError};
use crate::features::{feature_path, read_features, FeatureError};
use crate::pool;
use crate::trainer::Checkpoint;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("degenerate score set: {targets} target and {nontargets} nontarget scores")]
    Degenerate { targets: usize, nontargets: usize },
    #[error("non-finite score at trial {index}")]
    NonFiniteScore { index: usize },
    #[error("utterance {utt_id}: missing features at {}", path.display())]
    MissingFeatures { utt_id: String, path: PathBuf },
    #[error("utterance {utt_id}: {message}")]
    Utterance { utt_id: String, message: String },
    #[error("trial {enroll} {test}: no embedding for {missing}")]
    MissingEmbedding {
        enroll: String,
        test: String,
        missing: String,
    },
    #[error("gender of subset {subset} must be female or male")]
    UngenderedSubset { subset: String },
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Embedder(#[from] EmbedderError),
}

/// Trials with their scores, in trial-list order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub trials: Vec<Trial>,
    pub scores: Vec<f64>,
}

impl ScoreSet {
    /// Synthetic set from bare target and nontarget scores.
    pub fn from_scores(targets: &[f64], nontargets: &[f64]) -> Self {
        let mut trials = Vec::new();
        let mut scores = Vec::new();
        for (i, &s) in targets.iter().enumerate() {
            trials.push(Trial {
                enroll_utt: format!("t{i}"),
                test_utt: format!("t{i}"),
                label: TrialLabel::Target,
            });
            scores.push(s);
        }
        for (i, &s) in nontargets.iter().enumerate() {
            trials.push(Trial {
                enroll_utt: format!("n{i}"),
                test_utt: format!("m{i}"),
                label: TrialLabel::Nontarget,
            });
            scores.push(s);
        }
        Self { trials, scores }
    }

    pub fn split(&self) -> (Vec<f64>, Vec<f64>) {
        let mut tar = Vec::new();
        let mut non = Vec::new();
        for (t, &s) in self.trials.iter().zip(&self.scores) {
            match t.label {
                TrialLabel::Target => tar.push(s),
                TrialLabel::Nontarget => non.push(s),
            }
        }
        (tar, non)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if let Some(index) = self.scores.iter().position(|s| !s.is_finite()) {
            return Err(EvalError::NonFiniteScore { index });
        }
        let targets = self
            .trials
            .iter()
            .filter(|t| t.label == TrialLabel::Target)
            .count();
        let nontargets = self.trials.len() - targets;
        if targets == 0 || nontargets == 0 {
            return Err(EvalError::Degenerate {
                targets,
                nontargets,
            });
        }
        Ok(())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        let path = path.as_ref();
        let mut s = String::new();
        for (t, score) in self.trials.iter().zip(&self.scores) {
            let _ = writeln!(
                s,
                "{} {} {} {}",
                t.enroll_utt,
                t.test_utt,
                score,
                t.label.as_str()
            );
        }
        fs::write(path, s).map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut set = ScoreSet {
            trials: Vec::new(),
            scores: Vec::new(),
        };
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| EvalError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(parse_err(format!("expected 4 fields, found {}", f.len())));
            }
            let score: f64 = f[2]
                .parse()
                .map_err(|_| parse_err(format!("bad score {:?}", f[2])))?;
            let label = match f[3] {
                "target" => TrialLabel::Target,
                "nontarget" => TrialLabel::Nontarget,
                other => return Err(parse_err(format!("bad label {other:?}"))),
            };
            set.trials.push(Trial {
                enroll_utt: f[0].to_string(),
                test_utt: f[1].to_string(),
                label,
            });
            set.scores.push(score);
        }
        Ok(set)
    }
}

/// Equal error rate as a fraction. A trial is accepted when its score is
/// `>= t`; FAR and FRR are swept over every distinct score and `+inf`, and the
/// crossing is interpolated linearly between the two ROC points that bracket it.
pub fn eer(targets: &[f64], nontargets: &[f64]) -> Result<f64, EvalError> {
    if targets.is_empty() || nontargets.is_empty() {
        return Err(EvalError::Degenerate {
            targets: targets.len(),
            nontargets: nontargets.len(),
        });
    }
    if let Some(index) = targets
        .iter()
        .chain(nontargets)
        .position(|s| !s.is_finite())
    {
        return Err(EvalError::NonFiniteScore { index });
    }
    let mut tar = targets.to_vec();
    let mut non = nontargets.to_vec();
    tar.sort_by(f64::total_cmp);
    non.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = tar.iter().chain(&non).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.push(f64::INFINITY);

    let (p, n) = (tar.len() as f64, non.len() as f64);
    let (mut i_tar, mut i_non) = (0usize, 0usize);
    let mut prev: Option<(f64, f64)> = None;
    for &t in &thresholds {
        // counts strictly below t
        while i_tar < tar.len() && tar[i_tar] < t {
            i_tar += 1;
        }
        while i_non < non.len() && non[i_non] < t {
            i_non += 1;
        }
        let far = (non.len() - i_non) as f64 / n;
        let frr = i_tar as f64 / p;
        let d = far - frr;
        if d <= 0.0 {
            return Ok(match prev {
                Some((far_a, frr_a)) if d < 0.0 => {
                    let d_a = far_a - frr_a;
                    let alpha = d_a / (d_a - d);
                    far_a + alpha * (far - far_a)
                }
                _ => far,
            });
        }
        prev = Some((far, frr));
    }
    unreachable!("FAR - FRR is -1 at +inf")
}

pub fn compute_eer(set: &ScoreSet) -> Result<f64, EvalError> {
    set.validate()?;
    let (tar, non) = set.split();
    eer(&tar, &non)
}

/// Inference-mode embeddings for every manifest utterance, normalized with
/// the checkpoint's feature statistics.
pub fn embed_utterances(
    ck: &Checkpoint,
    manifest: &Manifest,
    feature_dir: impl AsRef<Path>,
    jobs: usize,
) -> Result<BTreeMap<String, Array1<f64>>, EvalError> {
    let embedder = Embedder::new(ck.config.clone())?;
    let dir = feature_dir.as_ref();
    let results: Vec<Result<(String, Array1<f64>), EvalError>> = pool::install(jobs, || {
        manifest
            .records
            .par_iter()
            .map(|rec| {
                let utt_err = |message: String| EvalError::Utterance {
                    utt_id: rec.utt_id.clone(),
                    message,
                };
                let path = feature_path(dir, &rec.utt_id);
                if !path.exists() {
                    return Err(EvalError::MissingFeatures {
                        utt_id: rec.utt_id.clone(),
                        path,
                    });
                }
                let m = read_features(&path).map_err(|e: FeatureError| utt_err(e.to_string()))?;
                let x = ck.cmvn.normalize(&m).map_err(|e| utt_err(e.to_string()))?;
                let e = embedder
                    .embed(&ck.params, x.view())
                    .map_err(|e| utt_err(e.to_string()))?;
                Ok((rec.utt_id.clone(), e))
            })
            .collect()
    });
    results.into_iter().collect()
}

/// Cosine scores; embeddings are unit vectors so this is a dot product.
pub fn score_trials(
    trials: &TrialList,
    embeddings: &BTreeMap<String, Array1<f64>>,
) -> Result<ScoreSet, EvalError> {
    let mut scores = Vec::with_capacity(trials.len());
    for t in &trials.trials {
        let get = |u: &str| {
            embeddings
                .get(u)
                .ok_or_else(|| EvalError::MissingEmbedding {
                    enroll: t.enroll_utt.clone(),
                    test: t.test_utt.clone(),
                    missing: u.to_string(),
                })
        };
        scores.push(get(&t.enroll_utt)?.dot(get(&t.test_utt)?));
    }
    Ok(ScoreSet {
        trials: trials.trials.clone(),
        scores,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ReportRow {
    Female,
    Male,
    Average,
}

impl ReportRow {
    pub fn as_str(&self) -> &'static str {
        match self {
            ReportRow::Female => "female",
            ReportRow::Male => "male",
            ReportRow::Average => "average",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "female" => Some(ReportRow::Female),
            "male" => Some(ReportRow::Male),
            "average" => Some(ReportRow::Average),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub dataset: String,
    pub system: String,
    pub row: ReportRow,
}

impl CellKey {
    pub fn new(dataset: impl Into<String>, system: impl Into<String>, row: ReportRow) -> Self {
        Self {
            dataset: dataset.into(),
            system: system.into(),
            row,
        }
    }
}

/// One measured per-gender EER, in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct GenderEer {
    pub dataset: String,
    pub system: String,
    pub gender: Gender,
    pub eer_percent: f64,
}

/// Round half away from zero to two decimals. The 1e-9 nudge absorbs binary
/// representation error so that decimal ties such as 40.235 round up.
pub fn round2(x: f64) -> f64 {
    x.signum() * ((x.abs() * 100.0 + 0.5 + 1e-9).floor() / 100.0)
}

pub fn render2(x: f64) -> String {
    format!("{:.2}", round2(x))
}

/// Percent EERs keyed by dataset, system and row, with insertion order kept
/// for datasets and systems.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EerReport {
    pub datasets: Vec<String>,
    pub systems: Vec<String>,
    pub cells: BTreeMap<CellKey, f64>,
}

impl EerReport {
    pub fn insert(&mut self, key: CellKey, eer_percent: f64) {
        if !self.datasets.contains(&key.dataset) {
            self.datasets.push(key.dataset.clone());
        }
        if !self.systems.contains(&key.system) {
            self.systems.push(key.system.clone());
        }
        self.cells.insert(key, eer_percent);
    }

    pub fn get(&self, dataset: &str, system: &str, row: ReportRow) -> Option<f64> {
        self.cells.get(&CellKey::new(dataset, system, row)).copied()
    }

    pub fn rendered(&self, dataset: &str, system: &str, row: ReportRow) -> Option<String> {
        self.get(dataset, system, row).map(render2)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("dataset,system,row,eer_percent\n");
        for d in &self.datasets {
            for sys in &self.systems {
                for row in [ReportRow::Female, ReportRow::Male, ReportRow::Average] {
                    if let Some(v) = self.get(d, sys, row) {
                        let _ = writeln!(s, "{d},{sys},{},{}", row.as_str(), render2(v));
                    }
                }
            }
        }
        s
    }

    pub fn from_csv(text: &str, path: &Path) -> Result<Self, EvalError> {
        let mut report = EerReport::default();
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| EvalError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(err(format!("expected 4 fields, found {}", f.len())));
            }
            let row = ReportRow::parse(f[2]).ok_or_else(|| err(format!("bad row {:?}", f[2])))?;
            let v: f64 = f[3]
                .parse()
                .map_err(|_| err(format!("bad EER {:?}", f[3])))?;
            report.insert(CellKey::new(f[0], f[1], row), v);
        }
        Ok(report)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_csv(&text, path)
    }

    /// Aligned text table: systems as columns, gender rows per dataset and
    /// an `Average <split>` row after each dataset.
    pub fn to_table(&self) -> String {
        let mut rows: Vec<Vec<String>> = Vec::new();
        let mut header = vec!["Dataset".to_string(), "Gender".to_string()];
        header.extend(self.systems.iter().cloned());
        rows.push(header);
        for d in &self.datasets {
            for (i, row) in [ReportRow::Female, ReportRow::Male].iter().enumerate() {
                let mut r = vec![
                    if i == 0 { d.clone() } else { String::new() },
                    row.as_str().to_string(),
                ];
                r.extend(
                    self.systems
                        .iter()
                        .map(|s| self.rendered(d, s, *row).unwrap_or_else(|| "-".into())),
                );
                rows.push(r);
            }
            let mut r = vec![average_label(d), String::new()];
            r.extend(self.systems.iter().map(|s| {
                self.rendered(d, s, ReportRow::Average)
                    .unwrap_or_else(|| "-".into())
            }));
            rows.push(r);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for r in &rows {
            let line: Vec<String> = r
                .iter()
                .enumerate()
                .map(|(c, cell)| {
                    if c < 2 {
                        format!("{cell:<w$}", w = widths[c])
                    } else {
                        format!("{cell:>w$}", w = widths[c])
                    }
                })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

/// `Average dev` / `Average eval` for the usual split names.
pub fn average_label(dataset: &str) -> String {
    let lower = dataset.to_lowercase();
    if lower.contains("dev") {
        "Average dev".into()
    } else if lower.contains("test") || lower.contains("eval") {
        "Average eval".into()
    } else {
        format!("Average {dataset}")
    }
}

/// Per-gender cells plus an average row wherever both genders are present.
/// The average is taken on unrounded values.
pub fn build_report(entries: &[GenderEer]) -> Result<EerReport, EvalError> {
    let mut report = EerReport::default();
    for e in entries {
        let row = match e.gender {
            Gender::Female => ReportRow::Female,
            Gender::Male => ReportRow::Male,
            Gender::Unknown => {
                return Err(EvalError::UngenderedSubset {
                    subset: format!("{}/{}", e.dataset, e.system),
                })
            }
        };
        report.insert(CellKey::new(&e.dataset, &e.system, row), e.eer_percent);
    }
    let pairs: BTreeSet<(String, String)> = report
        .cells
        .keys()
        .map(|k| (k.dataset.clone(), k.system.clone()))
        .collect();
    for (d, s) in pairs {
        if let (Some(f), Some(m)) = (
            report.get(&d, &s, ReportRow::Female),
            report.get(&d, &s, ReportRow::Male),
        ) {
            report.insert(CellKey::new(d, s, ReportRow::Average), (f + m) / 2.0);
        }
    }
    Ok(report)
}

/// `a - b` in percentage points for every cell in either report; `None`
/// where one side lacks the cell.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DeltaTable {
    pub cells: BTreeMap<CellKey, Option<f64>>,
}

impl DeltaTable {
    pub fn get(&self, dataset: &str, system: &str, row: ReportRow) -> Option<Option<f64>> {
        self.cells.get(&CellKey::new(dataset, system, row)).copied()
    }

    pub fn rendered(&self, dataset: &str, system: &str, row: ReportRow) -> Option<String> {
        self.get(dataset, system, row)
            .map(|d| d.map(render2).unwrap_or_else(|| "absent".into()))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("dataset,system,row,delta_pp\n");
        for (k, v) in &self.cells {
            let cell = v.map(render2).unwrap_or_else(|| "absent".into());
            let _ = writeln!(s, "{},{},{},{}", k.dataset, k.system, k.row.as_str(), cell);
        }
        s
    }
}

pub fn compare_runs(a: &EerReport, b: &EerReport) -> DeltaTable {
    let keys: BTreeSet<&CellKey> = a.cells.keys().chain(b.cells.keys()).collect();
    DeltaTable {
        cells: keys
            .into_iter()
            .map(|k| {
                let d = match (a.cells.get(k), b.cells.get(k)) {
                    (Some(x), Some(y)) => Some(x - y),
                    _ => None,
                };
                (k.clone(), d)
            })
            .collect(),
    }
}

/// Scores every trial list and returns one per-gender entry per list.
/// The gender is read from the subset name (`...female...` / `...male...`).
pub fn evaluate_subsets(
    dataset: &str,
    system: &str,
    trial_lists: &[TrialList],
    embeddings: &BTreeMap<String, Array1<f64>>,
) -> Result<Vec<(GenderEer, ScoreSet)>, EvalError> {
    trial_lists
        .iter()
        .map(|tl| {
            let gender = subset_gender(&tl.subset).ok_or_else(|| EvalError::UngenderedSubset {
                subset: tl.subset.clone(),
            })?;
            let set = score_trials(tl, embeddings)?;
            let e = compute_eer(&set)?;
            Ok((
                GenderEer {
                    dataset: dataset.to_string(),
                    system: system.to_string(),
                    gender,
                    eer_percent: 100.0 * e,
                },
                set,
            ))
        })
        .collect()
}

pub fn subset_gender(subset: &str) -> Option<Gender> {
    let s = subset.to_lowercase();
    if s.contains("female") || s.ends_with("-f") {
        Some(Gender::Female)
    } else if s.contains("male") || s.ends_with("-m") {
        Some(Gender::Male)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn eer_hand_examples() {
        assert_eq!(eer(&[0.9, 0.8], &[0.1, 0.2]).unwrap(), 0.0);
        assert_eq!(eer(&[0.1, 0.2], &[0.9, 0.8]).unwrap(), 1.0);
        // FAR/FRR at 0.3: 1/3, 0 ; at 0.7: 1/3, 1/3 -> exact crossing
        assert!((eer(&[0.9, 0.8, 0.3], &[0.7, 0.2, 0.1]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        // single tie across classes: FAR 1 -> FRR 0, then both 0 -> 1 at +inf
        assert_eq!(eer(&[0.5], &[0.5]).unwrap(), 0.5);
        assert!(matches!(
            eer(&[], &[0.1]),
            Err(EvalError::Degenerate { .. })
        ));
        assert!(matches!(
            eer(&[0.2], &[f64::NAN]),
            Err(EvalError::NonFiniteScore { .. })
        ));
    }

    #[test]
    fn eer_interpolates_between_roc_points() {
        // t=0.4: FAR 1/2, FRR 0 ; t=0.6: FAR 1/2, FRR 1 -> alpha 1/2
        assert_eq!(eer(&[0.4], &[0.6, 0.2]).unwrap(), 0.5);
        // tie at 0.5 moves FAR and FRR together: (1/2, 0) -> (0, 1/2)
        let v = eer(&[0.7, 0.5], &[0.5, 0.1]).unwrap();
        assert!((v - 0.25).abs() < 1e-15, "{v}");
    }

    #[test]
    fn cosine_scoring_examples() {
        let mut emb = BTreeMap::new();
        emb.insert("a".to_string(), array![0.6, 0.8]);
        emb.insert("b".to_string(), array![1.0, 0.0]);
        emb.insert("c".to_string(), array![0.0, 1.0]);
        let tl = TrialList {
            subset: "x".into(),
            trials: vec![
                Trial {
                    enroll_utt: "a".into(),
                    test_utt: "b".into(),
                    label: TrialLabel::Target,
                },
                Trial {
                    enroll_utt: "b".into(),
                    test_utt: "b".into(),
                    label: TrialLabel::Target,
                },
                Trial {
                    enroll_utt: "b".into(),
                    test_utt: "c".into(),
                    label: TrialLabel::Nontarget,
                },
            ],
        };
        let set = score_trials(&tl, &emb).unwrap();
        assert_eq!(set.scores, vec![0.6, 1.0, 0.0]);
        let mut bad = tl.clone();
        bad.trials[0].test_utt = "zz".into();
        assert!(matches!(
            score_trials(&bad, &emb),
            Err(EvalError::MissingEmbedding { missing, .. }) if missing == "zz"
        ));
    }

    fn entry(dataset: &str, system: &str, gender: Gender, v: f64) -> GenderEer {
        GenderEer {
            dataset: dataset.into(),
            system: system.into(),
            gender,
            eer_percent: v,
        }
    }

    #[test]
    fn average_rows_match_printed_cells() {
        let r = build_report(&[
            entry("dev", "Orig.", Gender::Female, 10.51),
            entry("dev", "Orig.", Gender::Male, 0.93),
            entry("test", "Orig.", Gender::Female, 8.76),
            entry("test", "Orig.", Gender::Male, 0.42),
            entry("dev", "T8-5", Gender::Female, 39.63),
            entry("dev", "T8-5", Gender::Male, 40.84),
        ])
        .unwrap();
        assert_eq!(
            r.rendered("dev", "Orig.", ReportRow::Average).unwrap(),
            "5.72"
        );
        assert_eq!(
            r.rendered("test", "Orig.", ReportRow::Average).unwrap(),
            "4.59"
        );
        assert_eq!(
            r.rendered("dev", "T8-5", ReportRow::Average).unwrap(),
            "40.24"
        );
    }

    #[test]
    fn rounding_rule() {
        assert_eq!(render2(40.235), "40.24");
        assert_eq!(render2(30.415), "30.42");
        assert_eq!(render2(0.004), "0.00");
        assert_eq!(render2(-13.825), "-13.83");
        assert_eq!(render2(13.82), "13.82");
    }

    #[test]
    fn report_csv_round_trip_and_table() {
        let r = build_report(&[
            entry("LibriSpeech-dev", "A", Gender::Female, 12.5),
            entry("LibriSpeech-dev", "A", Gender::Male, 7.25),
            entry("LibriSpeech-test", "A", Gender::Female, 3.0),
        ])
        .unwrap();
        let csv = r.to_csv();
        assert!(csv.contains("LibriSpeech-dev,A,average,9.88\n"));
        let back = EerReport::from_csv(&csv, Path::new("r.csv")).unwrap();
        assert_eq!(back.to_csv(), csv);
        let table = r.to_table();
        assert!(table.contains("Average dev"));
        assert!(table.contains("Average eval"));
        assert!(table
            .lines()
            .any(|l| l.starts_with("Average eval") && l.ends_with('-')));
    }

    #[test]
    fn compare_marks_absent_cells() {
        let mut a = EerReport::default();
        a.insert(CellKey::new("test", "T10-2", ReportRow::Average), 40.36);
        a.insert(CellKey::new("test", "T10-2", ReportRow::Female), 35.0);
        let mut b = EerReport::default();
        b.insert(CellKey::new("test", "T10-2", ReportRow::Average), 26.54);
        let d = compare_runs(&a, &b);
        assert_eq!(
            d.rendered("test", "T10-2", ReportRow::Average).unwrap(),
            "13.82"
        );
        assert_eq!(d.get("test", "T10-2", ReportRow::Female), Some(None));
        assert_eq!(
            d.rendered("test", "T10-2", ReportRow::Female).unwrap(),
            "absent"
        );
        let same = compare_runs(&a, &a);
        assert!(same.cells.values().all(|v| *v == Some(0.0)));
    }

    #[test]
    fn ungendered_entries_are_rejected() {
        assert!(build_report(&[entry("d", "s", Gender::Unknown, 1.0)]).is_err());
        assert_eq!(subset_gender("trials-eval-female"), Some(Gender::Female));
        assert_eq!(subset_gender("trials-eval-male"), Some(Gender::Male));
        assert_eq!(subset_gender("trials"), None);
    }

    #[test]
    fn score_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.txt");
        let set = ScoreSet::from_scores(&[0.1234567890123, -0.5], &[0.25]);
        set.write(&p).unwrap();
        assert_eq!(ScoreSet::read(&p).unwrap(), set);
        fs::write(&p, "a b 0.3\n").unwrap();
        assert!(matches!(
            ScoreSet::read(&p),
            Err(EvalError::Parse { line: 1, .. })
        ));
    }
}
