use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use headpose::net::build_model;
use headpose::train::Checkpoint;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_headpose"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn headpose")
}

fn toy_config() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.json")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path, n: usize, side: u32) -> PathBuf {
    let data = dir.join("data");
    let o = run(&[
        "synth-data",
        "--n",
        &n.to_string(),
        "--seed",
        "1",
        "--image-side",
        &side.to_string(),
        "--out",
        data.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    data
}

/// Small, fast overrides on top of the toy config.
fn fast(data: &Path) -> Vec<String> {
    [
        format!("dataset_root={}", data.display()),
        "input_side=32".into(),
        "feature_dim=8".into(),
        "epochs=1".into(),
        "batch_size=4".into(),
    ]
    .into_iter()
    .flat_map(|o| ["--override".to_string(), o])
    .collect()
}

fn with(base: &[&str], extra: &[String]) -> Vec<String> {
    base.iter().map(|s| s.to_string()).chain(extra.iter().cloned()).collect()
}

#[test]
fn help_lists_flags() {
    let o = run(&["--help"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for cmd in ["synth-data", "train", "eval", "sweep-k", "ablate-loss", "predict", "report"] {
        assert!(text.contains(cmd), "missing {cmd}");
    }
    let o = run(&["train", "--help"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for flag in ["--config", "--override", "--out", "--resume"] {
        assert!(text.contains(flag), "missing {flag}");
    }
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["train", "--bogus"]).status.code(), Some(2));
    assert_eq!(run(&["predict", "--image", "x.png"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = run(&[
        "train",
        "--config",
        toy_config().to_str().unwrap(),
        "--override",
        "dataset_root=/nonexistent/data",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("error:"));

    let o = run(&["train", "--override", "no_such_key=1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no_such_key"));
}

#[test]
fn synth_data_writes_images_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 64, 48);
    assert!(data.join("manifest.json").is_file());
    let pngs = std::fs::read_dir(data.join("images")).unwrap().count();
    assert_eq!(pngs, 64);
}

#[test]
fn train_eval_predict_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 6, 40);
    let cfg = toy_config();
    let run_dir = dir.path().join("run");

    // epochs=0 leaves the initial parameters.
    let args = with(
        &["train", "--config", cfg.to_str().unwrap(), "--out", run_dir.to_str().unwrap()],
        &[fast(&data), vec!["--override".into(), "epochs=0".into()]].concat(),
    );
    let o = bin().args(&args).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = Checkpoint::load(&run_dir.join("checkpoint.hpa")).unwrap();
    let init = build_model(ckpt.model.spec(), 1).unwrap();
    assert_eq!(ckpt.model.params().values(), init.params().values());

    // A real (one-epoch) run, then the same run from its own snapshot.
    let args = with(&["train", "--config", cfg.to_str().unwrap(), "--out", run_dir.to_str().unwrap()], &fast(&data));
    assert!(bin().args(&args).status().unwrap().success());
    let again = dir.path().join("again");
    let snap = run_dir.join("run_config.json");
    let o = run(&["train", "--config", snap.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["history.csv", "checkpoint.hpa"] {
        assert_eq!(std::fs::read(run_dir.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap(), "{f}");
    }

    let eval_dir = dir.path().join("eval");
    let ck = run_dir.join("checkpoint.hpa");
    let args = with(
        &["eval", "--config", cfg.to_str().unwrap(), "--checkpoint", ck.to_str().unwrap(), "--out", eval_dir.to_str().unwrap()],
        &fast(&data),
    );
    let o = bin().args(&args).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("MAE"));
    for f in ["report.json", "report.txt", "buckets.csv", "histogram.csv"] {
        assert!(eval_dir.join(f).is_file(), "{f}");
    }

    let img = data.join("images/00000.png");
    let o = run(&["predict", "--image", img.to_str().unwrap(), "--box", "8,8,24,24", "--k", "0.5", "--checkpoint", ck.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let line = String::from_utf8_lossy(&o.stdout);
    let words: Vec<&str> = line.split_whitespace().collect();
    assert_eq!((words[0], words[2], words[4]), ("yaw", "pitch", "roll"));
    for v in [words[1], words[3], words[5]] {
        assert!(v.parse::<f64>().unwrap().abs() <= 90.0);
    }
    let o = run(&["predict", "--image", img.to_str().unwrap(), "--box", "8,8,24", "--k", "0.5", "--checkpoint", ck.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));

    let o = run(&["report", "--input", eval_dir.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(o.stdout, std::fs::read(eval_dir.join("report.txt")).unwrap());
    let o = run(&["report", "--input", eval_dir.to_str().unwrap(), "--format", "buckets"]);
    assert_eq!(o.stdout, std::fs::read(eval_dir.join("buckets.csv")).unwrap());
}

#[test]
fn sweep_and_ablation_tables() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 5, 40);
    let cfg = toy_config();
    let out = dir.path().join("sweep");
    let args = with(
        &["sweep-k", "--k", "0.0,0.25,0.5", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()],
        &fast(&data),
    );
    let o = bin().args(&args).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);

    let out = dir.path().join("ablate");
    let args = with(
        &["ablate-loss", "--k", "0.5", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()],
        &fast(&data),
    );
    let o = bin().args(&args).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.contains(",combined,") && csv.contains(",regression-only,"));
}
