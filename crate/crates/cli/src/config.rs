use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use specwav_core::dsp::StftParams;
use specwav_core::embedder::{EmbedderConfig, TdnnLayer};
use specwav_core::sr_augment::{PadMode, SrPolicy};
use specwav_core::trainer::StagePlan;

pub const KEYS_HELP: &str = "\
Config file (TOML). Every key has a default except the data paths.

[run]       name = \"run\"            run directory is <root>/<name>
            root = \"runs\"
[data]      train_manifest          clean training manifest (TSV)
            augmented_manifest      stage-2 manifest; default: the one written by `augment`
            extra_manifests = []    further manifests to featurize (e.g. eval sets)
[stft]      n_fft = 1024, hop = 256, win_length = 1024
[augment]   ratio_min = 0.85, ratio_max = 1.15, pad_mode = \"repeat_edge\" | \"energy_floor\",
            seed = 0, n_mels = 80, gl_iters = 60
[features]  source = \"fbank\" | \"external\", external_dir, expected_dim = 1024
[model]     channels = 64, tdnn_layers = [[5, 1], [3, 2], [3, 3]], attention_dim = 32,
            embedding_dim = 128, aam_scale = 20.0, aam_margin = 0.2
[stage1]    epochs = 10, batch_size = 32, chunk_frames = 200, lr = 0.001, seed = 1,
            valid_fraction = 0.05
[stage2]    same keys as [stage1] (epochs = 2, seed = 2), plus clean_fraction = 0.0
[eval]      checkpoint = \"stage2\" | \"stage1\" | <path>
[[eval.sets]]  dataset, system, manifest, trials = [<trial files>]
               trial subset gender is read from the file name (female / male)

Relative paths are resolved against the config file's directory.";

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub run: RunSection,
    pub data: DataSection,
    pub stft: StftSection,
    pub augment: AugmentSection,
    pub features: FeaturesSection,
    pub model: ModelSection,
    pub stage1: StageSection,
    pub stage2: Stage2Section,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSection {
    pub name: String,
    pub root: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            name: "run".into(),
            root: "runs".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct DataSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub augmented_manifest: Option<PathBuf>,
    pub extra_manifests: Vec<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct StftSection {
    pub n_fft: usize,
    pub hop: usize,
    pub win_length: usize,
}

impl Default for StftSection {
    fn default() -> Self {
        let p = StftParams::default();
        Self {
            n_fft: p.n_fft,
            hop: p.hop,
            win_length: p.win_length,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentSection {
    pub ratio_min: f64,
    pub ratio_max: f64,
    pub pad_mode: String,
    pub seed: u64,
    pub n_mels: usize,
    pub gl_iters: usize,
}

impl Default for AugmentSection {
    fn default() -> Self {
        let p = SrPolicy::default();
        Self {
            ratio_min: p.ratio_min,
            ratio_max: p.ratio_max,
            pad_mode: "repeat_edge".into(),
            seed: p.seed,
            n_mels: p.n_mels,
            gl_iters: p.gl_iters,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FeaturesSection {
    pub source: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub external_dir: Option<PathBuf>,
    pub expected_dim: usize,
}

impl Default for FeaturesSection {
    fn default() -> Self {
        Self {
            source: "fbank".into(),
            external_dir: None,
            expected_dim: 1024,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub channels: usize,
    pub tdnn_layers: Vec<[usize; 2]>,
    pub attention_dim: usize,
    pub embedding_dim: usize,
    pub aam_scale: f64,
    pub aam_margin: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let c = EmbedderConfig::new(0, 0);
        Self {
            channels: c.channels,
            tdnn_layers: c
                .tdnn_layers
                .iter()
                .map(|l| [l.kernel, l.dilation])
                .collect(),
            attention_dim: c.attention_dim,
            embedding_dim: c.embedding_dim,
            aam_scale: c.aam_scale,
            aam_margin: c.aam_margin,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct StageSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub chunk_frames: usize,
    pub lr: f64,
    pub seed: u64,
    pub valid_fraction: f64,
}

impl StageSection {
    fn from_plan(p: StagePlan) -> Self {
        Self {
            epochs: p.epochs,
            batch_size: p.batch_size,
            chunk_frames: p.chunk_frames,
            lr: p.lr,
            seed: p.seed,
            valid_fraction: p.valid_fraction,
        }
    }

    fn plan(&self, base: StagePlan) -> StagePlan {
        StagePlan {
            epochs: self.epochs,
            batch_size: self.batch_size,
            chunk_frames: self.chunk_frames,
            lr: self.lr,
            seed: self.seed,
            valid_fraction: self.valid_fraction,
            ..base
        }
    }
}

impl Default for StageSection {
    fn default() -> Self {
        Self::from_plan(StagePlan::stage1("", 1))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage2Section {
    pub epochs: usize,
    pub batch_size: usize,
    pub chunk_frames: usize,
    pub lr: f64,
    pub seed: u64,
    pub valid_fraction: f64,
    pub clean_fraction: f64,
}

impl Stage2Section {
    fn stage(&self) -> StageSection {
        StageSection {
            epochs: self.epochs,
            batch_size: self.batch_size,
            chunk_frames: self.chunk_frames,
            lr: self.lr,
            seed: self.seed,
            valid_fraction: self.valid_fraction,
        }
    }
}

impl Default for Stage2Section {
    fn default() -> Self {
        let s = StageSection::from_plan(StagePlan::stage2("", 2));
        Self {
            epochs: s.epochs,
            batch_size: s.batch_size,
            chunk_frames: s.chunk_frames,
            lr: s.lr,
            seed: s.seed,
            valid_fraction: s.valid_fraction,
            clean_fraction: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub checkpoint: String,
    pub sets: Vec<EvalSet>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            checkpoint: "stage2".into(),
            sets: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSet {
    pub dataset: String,
    pub system: String,
    pub manifest: PathBuf,
    pub trials: Vec<PathBuf>,
}

impl RunConfig {
    /// Parses TOML, rejecting any key the schema does not know.
    pub fn parse(text: &str) -> Result<Self> {
        let mut unknown = Vec::new();
        let de = toml::Deserializer::new(text);
        let cfg: RunConfig = serde_ignored::deserialize(de, |path| unknown.push(path.to_string()))
            .map_err(|e| anyhow::anyhow!("invalid config: {}", e.message().trim()))?;
        if let Some(path) = unknown.first() {
            let key = path.rsplit('.').next().unwrap_or(path);
            bail!("unknown key: {key} (at {path})");
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::parse(&text).with_context(|| format!("config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve(base);
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.run.root);
        self.data.train_manifest.as_mut().map(fix);
        self.data.augmented_manifest.as_mut().map(fix);
        self.data.extra_manifests.iter_mut().for_each(fix);
        self.features.external_dir.as_mut().map(fix);
        for set in &mut self.eval.sets {
            fix(&mut set.manifest);
            set.trials.iter_mut().for_each(fix);
        }
        if !matches!(self.eval.checkpoint.as_str(), "stage1" | "stage2") {
            let mut p = PathBuf::from(&self.eval.checkpoint);
            fix(&mut p);
            self.eval.checkpoint = p.to_string_lossy().into_owned();
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.name.is_empty() || self.run.name.contains(['/', '\\']) {
            bail!(
                "run.name: {:?} is not a plain directory name",
                self.run.name
            );
        }
        self.sr_policy()?.validate().context("augment")?;
        if !matches!(self.features.source.as_str(), "fbank" | "external") {
            bail!(
                "features.source: expected \"fbank\" or \"external\", got {:?}",
                self.features.source
            );
        }
        if self.features.source == "external" && self.features.external_dir.is_none() {
            bail!("features.external_dir: required when features.source = \"external\"");
        }
        // input_dim and n_classes come from the data at training time
        EmbedderConfig {
            input_dim: 1,
            n_classes: 1,
            ..self.embedder_config()
        }
        .validate()
        .context("model")?;
        self.stage1_plan().validate().context("stage1")?;
        self.stage2_plan().validate().context("stage2")?;
        if !(0.0..=1.0).contains(&self.stage2.clean_fraction) {
            bail!(
                "stage2.clean_fraction: {} outside [0, 1]",
                self.stage2.clean_fraction
            );
        }
        Ok(())
    }

    pub fn stft_params(&self) -> StftParams {
        StftParams {
            n_fft: self.stft.n_fft,
            hop: self.stft.hop,
            win_length: self.stft.win_length,
            ..StftParams::default()
        }
    }

    pub fn sr_policy(&self) -> Result<SrPolicy> {
        let a = &self.augment;
        let pad_mode: PadMode = a
            .pad_mode
            .parse()
            .map_err(|e: String| anyhow::anyhow!("augment.pad_mode: {e}"))?;
        Ok(SrPolicy {
            ratio_min: a.ratio_min,
            ratio_max: a.ratio_max,
            pad_mode,
            seed: a.seed,
            n_mels: a.n_mels,
            gl_iters: a.gl_iters,
            stft: self.stft_params(),
        })
    }

    pub fn embedder_config(&self) -> EmbedderConfig {
        let m = &self.model;
        EmbedderConfig {
            channels: m.channels,
            tdnn_layers: m
                .tdnn_layers
                .iter()
                .map(|&[kernel, dilation]| TdnnLayer { kernel, dilation })
                .collect(),
            attention_dim: m.attention_dim,
            embedding_dim: m.embedding_dim,
            aam_scale: m.aam_scale,
            aam_margin: m.aam_margin,
            ..EmbedderConfig::new(0, 0)
        }
    }

    pub fn stage1_plan(&self) -> StagePlan {
        self.stage1.plan(StagePlan::stage1("train", 0))
    }

    pub fn stage2_plan(&self) -> StagePlan {
        self.stage2
            .stage()
            .plan(StagePlan::stage2("train-augmented", 0))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.run.root.join(&self.run.name)
    }

    /// Effective config with defaults filled in.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_echo() {
        let cfg = RunConfig::parse("").unwrap();
        let again = RunConfig::parse(&cfg.echo()).unwrap();
        assert_eq!(cfg.echo(), again.echo());
        assert_eq!(cfg.stage1_plan(), StagePlan::stage1("train", 1));
        assert_eq!(cfg.stage2_plan().epochs, 2);
        assert_eq!(cfg.embedder_config(), EmbedderConfig::new(0, 0));
        assert_eq!(cfg.sr_policy().unwrap(), SrPolicy::default());
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = RunConfig::parse("[augment]\nratio_mn = 0.9\n").unwrap_err();
        assert!(err.to_string().contains("unknown key: ratio_mn"), "{err}");
        let err = RunConfig::parse("[stage2]\nclean_frac = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("unknown key: clean_frac"), "{err}");
        let err = RunConfig::parse("[bogus]\nx = 1\n").unwrap_err();
        assert!(err.to_string().contains("unknown key: bogus"), "{err}");
    }

    #[test]
    fn invalid_values_name_the_key() {
        let err = RunConfig::parse("[augment]\nratio_min = 1.2\nratio_max = 1.1\n").unwrap_err();
        assert!(format!("{err:#}").contains("augment"), "{err:#}");
        let err = RunConfig::parse("[features]\nsource = \"ssl\"\n").unwrap_err();
        assert!(err.to_string().contains("features.source"));
        let err = RunConfig::parse("[augment]\npad_mode = \"zero\"\n").unwrap_err();
        assert!(err.to_string().contains("augment.pad_mode"));
    }
}
