use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use specwav_core::corpus::{load_manifest, load_trials, Manifest, UtteranceRecord};
use specwav_core::eval::{
    build_report, compare_runs, embed_utterances, evaluate_subsets, EerReport,
};
use specwav_core::features::{extract_corpus, ingest_external};
use specwav_core::sr_augment::augment_corpus;
use specwav_core::synth::{write_synthetic_corpus, SyntheticCorpusConfig};
use specwav_core::trainer::{
    incremental_train, load_checkpoint, mix_stage2_manifest, save_checkpoint, train_stage, Init,
    LossCurve,
};

use crate::config::RunConfig;

const SUBDIRS: [&str; 6] = [
    "manifests",
    "features",
    "checkpoints",
    "scores",
    "reports",
    "logs",
];

struct Run {
    cfg: RunConfig,
    dir: PathBuf,
    log: String,
}

impl Run {
    fn open(config: &Path) -> Result<Self> {
        let cfg = RunConfig::load(config)?;
        let dir = cfg.run_dir();
        for sub in SUBDIRS {
            let d = dir.join(sub);
            fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
        }
        let echo = dir.join("config.echo");
        fs::write(&echo, cfg.echo()).with_context(|| format!("writing {}", echo.display()))?;
        Ok(Self {
            cfg,
            dir,
            log: String::new(),
        })
    }

    fn path(&self, sub: &str, file: impl AsRef<Path>) -> PathBuf {
        self.dir.join(sub).join(file)
    }

    fn note(&mut self, line: impl AsRef<str>) {
        println!("{}", line.as_ref());
        let _ = writeln!(self.log, "{}", line.as_ref());
    }

    fn finish(self, command: &str) -> Result<()> {
        let path = self.path("logs", format!("{command}.log"));
        fs::write(&path, &self.log).with_context(|| format!("writing {}", path.display()))
    }

    fn train_manifest(&self) -> Result<Manifest> {
        let path = self
            .cfg
            .data
            .train_manifest
            .as_ref()
            .context("data.train_manifest: required")?;
        load_manifest(path).with_context(|| "data.train_manifest".to_string())
    }

    fn augmented_manifest_path(&self, train: &Manifest) -> PathBuf {
        self.cfg
            .data
            .augmented_manifest
            .clone()
            .unwrap_or_else(|| self.path("manifests", format!("{}-augmented.tsv", train.label)))
    }

    fn augmented_manifest(&self, train: &Manifest) -> Result<Manifest> {
        let path = self.augmented_manifest_path(train);
        ensure!(
            path.exists(),
            "augmented manifest {} not found (run `specwav augment` or set data.augmented_manifest)",
            path.display()
        );
        load_manifest(&path).with_context(|| format!("augmented manifest {}", path.display()))
    }

    fn feature_dir(&self) -> PathBuf {
        match (
            &self.cfg.features.source[..],
            &self.cfg.features.external_dir,
        ) {
            ("external", Some(dir)) => dir.clone(),
            _ => self.dir.join("features"),
        }
    }
}

pub fn augment(config: &Path, jobs: usize) -> Result<()> {
    let mut run = Run::open(config)?;
    let train = run.train_manifest()?;
    let policy = run.cfg.sr_policy()?;
    let out_dir = run.dir.join("augmented");
    let outcome = augment_corpus(&train, &policy, &out_dir, jobs)?;
    let records = outcome
        .manifest
        .records
        .iter()
        .map(|r| UtteranceRecord {
            path: Path::new("../augmented").join(r.path.strip_prefix(&out_dir).unwrap_or(&r.path)),
            ..r.clone()
        })
        .collect();
    let manifest = Manifest::new(outcome.manifest.label.clone(), records);
    let path = run.path("manifests", format!("{}.tsv", manifest.label));
    manifest.write(&path)?;
    run.note(format!(
        "augmented {} of {} utterances -> manifests/{}.tsv",
        outcome.manifest.len(),
        train.len(),
        manifest.label
    ));
    for (utt, msg) in &outcome.failures {
        run.note(format!("failed {utt}: {msg}"));
    }
    run.finish("augment")
}

pub fn features(config: &Path, jobs: usize) -> Result<()> {
    let mut run = Run::open(config)?;
    let train = run.train_manifest()?;
    let mut manifests = vec![train.clone()];
    let aug_path = run.augmented_manifest_path(&train);
    if aug_path.exists() {
        manifests.push(load_manifest(&aug_path)?);
    }
    for p in &run.cfg.data.extra_manifests {
        manifests.push(
            load_manifest(p).with_context(|| format!("data.extra_manifests: {}", p.display()))?,
        );
    }
    for set in &run.cfg.eval.sets {
        manifests.push(
            load_manifest(&set.manifest)
                .with_context(|| format!("eval.sets.manifest: {}", set.manifest.display()))?,
        );
    }
    let dir = run.feature_dir();
    let mut failed = 0;
    for m in &manifests {
        if run.cfg.features.source == "external" {
            let report = ingest_external(&dir, m, run.cfg.features.expected_dim);
            run.note(format!(
                "{}: checked {} external feature files",
                m.label, report.checked
            ));
            for p in &report.problems {
                run.note(format!("  {p}"));
            }
            failed += report.problems.len();
        } else {
            let report = extract_corpus(m, &dir, jobs)?;
            run.note(format!(
                "{}: wrote {} feature files",
                m.label, report.written
            ));
            for (utt, msg) in &report.failures {
                run.note(format!("  failed {utt}: {msg}"));
            }
            failed += report.failures.len();
        }
    }
    run.finish("features")?;
    if failed > 0 {
        bail!("{failed} utterances have unusable features (see logs/features.log)");
    }
    Ok(())
}

fn write_curve(run: &mut Run, curve: &LossCurve) -> Result<()> {
    let path = run.path("logs", format!("stage{}-loss.csv", curve.stage_id));
    curve.write_csv(&path)?;
    let last = curve.train.last().copied().unwrap_or(f64::NAN);
    run.note(format!(
        "stage {}: epochs {:?}, initial loss {:.4}, final train loss {:.4}",
        curve.stage_id, curve.epochs, curve.initial_loss, last
    ));
    Ok(())
}

pub fn train(config: &Path, stage: Option<u8>, jobs: usize) -> Result<()> {
    let mut run = Run::open(config)?;
    let train = run.train_manifest()?;
    let fdir = run.feature_dir();
    let p1 = run.cfg.stage1_plan();
    let p2 = run.cfg.stage2_plan();
    let model = run.cfg.embedder_config();
    let stage2_manifest = |run: &Run| -> Result<Manifest> {
        let aug = run.augmented_manifest(&train)?;
        Ok(mix_stage2_manifest(
            &train,
            &aug,
            run.cfg.stage2.clean_fraction,
            p2.seed,
        ))
    };
    let ck1_path = run.path("checkpoints", "stage1.spwc");
    let ck2_path = run.path("checkpoints", "stage2.spwc");
    match stage {
        None => {
            let s2 = stage2_manifest(&run)?;
            let out = incremental_train(&p1, &p2, &model, &train, &s2, &fdir, jobs)?;
            save_checkpoint(&out.stage1, &ck1_path)?;
            save_checkpoint(&out.stage2, &ck2_path)?;
            for c in &out.curves {
                write_curve(&mut run, c)?;
            }
        }
        Some(1) => {
            let (ck, curve) = train_stage(&p1, &train, &fdir, Init::Fresh(model), jobs)?;
            save_checkpoint(&ck, &ck1_path)?;
            write_curve(&mut run, &curve)?;
        }
        Some(_) => {
            ensure!(
                ck1_path.exists(),
                "{} not found; train stage 1 first",
                ck1_path.display()
            );
            let ck1 = load_checkpoint(&ck1_path)?;
            let s2 = stage2_manifest(&run)?;
            let (ck, curve) = train_stage(&p2, &s2, &fdir, Init::Resume(ck1), jobs)?;
            save_checkpoint(&ck, &ck2_path)?;
            write_curve(&mut run, &curve)?;
        }
    }
    run.finish("train")
}

pub fn eval(config: &Path, jobs: usize) -> Result<()> {
    let mut run = Run::open(config)?;
    ensure!(
        !run.cfg.eval.sets.is_empty(),
        "eval.sets: at least one evaluation set is required"
    );
    let ck_path = match run.cfg.eval.checkpoint.as_str() {
        name @ ("stage1" | "stage2") => run.path("checkpoints", format!("{name}.spwc")),
        other => PathBuf::from(other),
    };
    ensure!(
        ck_path.exists(),
        "eval.checkpoint: {} not found",
        ck_path.display()
    );
    let ck = load_checkpoint(&ck_path)?;
    let fdir = run.feature_dir();
    let mut entries = Vec::new();
    for set in run.cfg.eval.sets.clone() {
        let manifest = load_manifest(&set.manifest)
            .with_context(|| format!("eval.sets.manifest: {}", set.manifest.display()))?;
        let lists = set
            .trials
            .iter()
            .map(|p| load_trials(p).with_context(|| format!("eval.sets.trials: {}", p.display())))
            .collect::<Result<Vec<_>>>()?;
        let emb = embed_utterances(&ck, &manifest, &fdir, jobs)?;
        for (entry, scores) in evaluate_subsets(&set.dataset, &set.system, &lists, &emb)? {
            let file = format!("{}_{}_{}.scores", set.dataset, set.system, entry.gender);
            scores.write(run.path("scores", file))?;
            run.note(format!(
                "{} {} {}: EER {:.2}%",
                set.dataset, set.system, entry.gender, entry.eer_percent
            ));
            entries.push(entry);
        }
    }
    let report = build_report(&entries)?;
    report.write_csv(run.path("reports", "eer.csv"))?;
    let table = report.to_table();
    fs::write(run.path("reports", "eer.txt"), &table)?;
    run.note(table.trim_end());
    run.finish("eval")
}

pub fn report(paths: &[PathBuf], compare: bool, out: Option<&Path>) -> Result<()> {
    let reports = paths
        .iter()
        .map(EerReport::read_csv)
        .collect::<Result<Vec<_>, _>>()?;
    let (csv, shown) = if compare {
        ensure!(
            reports.len() == 2,
            "--compare needs exactly two reports, got {}",
            reports.len()
        );
        let delta = compare_runs(&reports[0], &reports[1]);
        let csv = delta.to_csv();
        (csv.clone(), csv)
    } else {
        let mut merged = EerReport::default();
        for (r, path) in reports.iter().zip(paths) {
            for (k, &v) in &r.cells {
                if let Some(prev) = merged.cells.get(k) {
                    if *prev != v {
                        bail!(
                            "{}: cell {}/{}/{} is {} here but {} in an earlier report",
                            path.display(),
                            k.dataset,
                            k.system,
                            k.row.as_str(),
                            v,
                            prev
                        );
                    }
                }
                merged.insert(k.clone(), v);
            }
        }
        (merged.to_csv(), merged.to_table())
    };
    print!("{shown}");
    if let Some(out) = out {
        fs::write(out, csv).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

pub fn synth(
    out: &Path,
    speakers: usize,
    eval_speakers: usize,
    shift: usize,
    seed: u64,
) -> Result<()> {
    ensure!(speakers >= 2, "--speakers must be at least 2");
    let cfg = SyntheticCorpusConfig {
        n_speakers: speakers,
        eval_speakers,
        anonymize_shift_bins: shift,
        seed,
        ..Default::default()
    };
    let corpus = write_synthetic_corpus(&cfg, out)?;
    let run_toml = format!(
        "[run]\nname = \"synthetic\"\n\n[data]\ntrain_manifest = \"train.tsv\"\n\n\
         [[eval.sets]]\ndataset = \"eval\"\nsystem = \"shift{shift}\"\nmanifest = \"eval-anon.tsv\"\n\
         trials = [\"trials-eval-female.txt\", \"trials-eval-male.txt\"]\n"
    );
    fs::write(out.join("run.toml"), run_toml)?;
    println!(
        "wrote {} training and {} evaluation utterances to {}",
        corpus.train.len(),
        corpus.eval_anon.len(),
        out.display()
    );
    Ok(())
}
