use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use specwav_core::corpus::Manifest;
use specwav_core::synth::{write_synthetic_corpus, SyntheticCorpusConfig};

fn specwav(args: &[&str], jobs: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_specwav"));
    cmd.args(args).env_remove("SPECWAV_JOBS");
    if let Some(j) = jobs {
        cmd.env("SPECWAV_JOBS", j);
    }
    cmd.output().unwrap()
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn error_line(out: &Output) -> serde_json::Value {
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("an error line");
    serde_json::from_str(line).unwrap_or_else(|_| panic!("not JSON: {line}"))
}

fn tiny_corpus(root: &Path) -> Manifest {
    let cfg = SyntheticCorpusConfig {
        n_speakers: 4,
        train_utts_per_speaker: 3,
        eval_utts_per_speaker: 2,
        train_secs: 1.0,
        eval_secs: 1.0,
        ..Default::default()
    };
    write_synthetic_corpus(&cfg, root).unwrap().train
}

const RUN_TOML: &str = r#"
[run]
name = "NAME"

[data]
train_manifest = "train.tsv"

[augment]
seed = 3
gl_iters = 8

[model]
channels = 8
attention_dim = 4
embedding_dim = 8

[stage1]
epochs = 2
batch_size = 4
chunk_frames = 30

[stage2]
epochs = 1
batch_size = 4
chunk_frames = 30
clean_fraction = 0.5

[[eval.sets]]
dataset = "eval"
system = "shift4"
manifest = "eval-anon.tsv"
trials = ["trials-eval-female.txt", "trials-eval-male.txt"]
"#;

fn write_config(root: &Path, name: &str) -> PathBuf {
    let p = root.join(format!("{name}.toml"));
    fs::write(&p, RUN_TOML.replace("NAME", name)).unwrap();
    p
}

fn pipeline(config: &Path, jobs: &str) {
    let c = config.to_str().unwrap();
    for cmd in ["augment", "features", "train", "eval"] {
        ok(specwav(&[cmd, "-c", c], Some(jobs)));
    }
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            out.extend(files_under(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn full_pipeline_is_reproducible_across_jobs() {
    let dir = tempfile::tempdir().unwrap();
    tiny_corpus(dir.path());
    pipeline(&write_config(dir.path(), "a"), "1");
    pipeline(&write_config(dir.path(), "b"), "3");

    let a = dir.path().join("runs/a");
    let b = dir.path().join("runs/b");
    for sub in [
        "config.echo",
        "manifests",
        "features",
        "checkpoints",
        "scores",
        "reports",
        "logs",
    ] {
        assert!(a.join(sub).exists(), "missing {sub}");
    }
    for f in [
        "checkpoints/stage1.spwc",
        "checkpoints/stage2.spwc",
        "reports/eer.csv",
        "logs/stage1-loss.csv",
    ] {
        assert!(a.join(f).is_file(), "missing {f}");
    }
    let fa = files_under(&a);
    let fb = files_under(&b);
    assert_eq!(fa.len(), fb.len());
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.strip_prefix(&a).unwrap(), y.strip_prefix(&b).unwrap());
        if x.ends_with("config.echo") {
            continue;
        }
        assert!(
            fs::read(x).unwrap() == fs::read(y).unwrap(),
            "{} differs",
            x.display()
        );
    }

    let csv = fs::read_to_string(a.join("reports/eer.csv")).unwrap();
    assert!(csv.starts_with("dataset,system,row,eer_percent\n"));
    for row in ["female", "male", "average"] {
        assert!(csv.contains(&format!("eval,shift4,{row},")), "{csv}");
    }
    let curve = fs::read_to_string(a.join("logs/stage2-loss.csv")).unwrap();
    assert!(
        curve.starts_with("epoch,train_loss,valid_loss\n3,"),
        "{curve}"
    );

    let merged = ok(specwav(
        &[
            "report",
            a.join("reports/eer.csv").to_str().unwrap(),
            b.join("reports/eer.csv").to_str().unwrap(),
        ],
        None,
    ));
    assert!(merged.contains("Average eval"));
    let delta = ok(specwav(
        &[
            "report",
            "--compare",
            a.join("reports/eer.csv").to_str().unwrap(),
            b.join("reports/eer.csv").to_str().unwrap(),
        ],
        None,
    ));
    assert!(delta.contains("eval,shift4,average,0.00"), "{delta}");
}

#[test]
fn augment_writes_one_wav_per_utterance() {
    let dir = tempfile::tempdir().unwrap();
    let train = tiny_corpus(dir.path());
    let three = Manifest::new("three", train.records[..3].to_vec());
    three.write(dir.path().join("three.tsv")).unwrap();
    let cfg = dir.path().join("aug.toml");
    fs::write(
        &cfg,
        "[data]\ntrain_manifest = \"three.tsv\"\n[augment]\ngl_iters = 4\n",
    )
    .unwrap();
    let out = ok(specwav(&["augment", "-c", cfg.to_str().unwrap()], None));
    assert!(out.contains("augmented 3 of 3"), "{out}");
    let run = dir.path().join("runs/run");
    let wavs = fs::read_dir(run.join("augmented/wav")).unwrap().count();
    assert_eq!(wavs, 3);
    let manifest = fs::read_to_string(run.join("manifests/three-augmented.tsv")).unwrap();
    assert_eq!(manifest.lines().count(), 3);
    assert!(manifest
        .lines()
        .all(|l| l.split('\t').next().unwrap().ends_with("-sr")));
    let sidecar = fs::read_to_string(run.join("augmented/three-augmented.ratios.tsv")).unwrap();
    assert_eq!(sidecar.lines().count(), 3);
    let echo = fs::read_to_string(run.join("config.echo")).unwrap();
    assert!(
        echo.contains("ratio_min = 0.85") && echo.contains("gl_iters = 4"),
        "{echo}"
    );
}

#[test]
fn unknown_key_is_rejected_with_a_json_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[augment]\nratio_mn = 0.9\n").unwrap();
    let out = specwav(&["augment", "-c", cfg.to_str().unwrap()], None);
    let err = error_line(&out);
    assert_eq!(err["status"], "error");
    assert_eq!(err["command"], "augment");
    assert!(
        err["error"]
            .as_str()
            .unwrap()
            .contains("unknown key: ratio_mn"),
        "{err}"
    );
}

#[test]
fn missing_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[data]\ntrain_manifest = \"nope.tsv\"\n").unwrap();
    let err = error_line(&specwav(&["features", "-c", cfg.to_str().unwrap()], None));
    assert!(
        err["error"]
            .as_str()
            .unwrap()
            .contains("data.train_manifest"),
        "{err}"
    );

    tiny_corpus(dir.path());
    fs::write(&cfg, "[data]\ntrain_manifest = \"train.tsv\"\n").unwrap();
    let err = error_line(&specwav(
        &["train", "-c", cfg.to_str().unwrap(), "--stage", "2"],
        None,
    ));
    assert!(
        err["error"].as_str().unwrap().contains("stage1.spwc"),
        "{err}"
    );
    let err = error_line(&specwav(&["eval", "-c", cfg.to_str().unwrap()], None));
    assert!(
        err["error"].as_str().unwrap().contains("eval.sets"),
        "{err}"
    );
}

#[test]
fn help_documents_every_key() {
    let keys = [
        "name",
        "root",
        "train_manifest",
        "augmented_manifest",
        "extra_manifests",
        "n_fft",
        "hop",
        "win_length",
        "ratio_min",
        "ratio_max",
        "pad_mode",
        "seed",
        "n_mels",
        "gl_iters",
        "source",
        "external_dir",
        "expected_dim",
        "channels",
        "tdnn_layers",
        "attention_dim",
        "embedding_dim",
        "aam_scale",
        "aam_margin",
        "epochs",
        "batch_size",
        "chunk_frames",
        "lr",
        "valid_fraction",
        "clean_fraction",
        "checkpoint",
        "dataset",
        "system",
        "manifest",
        "trials",
    ];
    for cmd in ["augment", "features", "train", "eval"] {
        let help = ok(specwav(&[cmd, "--help"], None));
        for k in keys {
            assert!(help.contains(k), "`{cmd} --help` lacks {k}");
        }
        assert!(help.contains("--jobs"));
    }
}
