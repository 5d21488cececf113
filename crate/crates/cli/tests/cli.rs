use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_redimnet2"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const TINY_TRAIN: &str = "n_speakers = 4\ntrain_utts = 3\ntrial_utts = 2\ntrain_seconds = 2\n\
trial_seconds = 1.5\nbatch_size = 8\nsteps_per_epoch = 2\nepochs = 2\nwarmup_epochs = 1\n\
segment_seconds = 1\nlm_epochs = 1\nlm_segment_seconds = 1.5\n";

#[test]
fn plan_renders_the_stage_table() {
    let o = run(&["plan", configs().join("b3_reference.model").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    for volume in ["| C·F·T\n", "| C·F·T/2\n", "| C·F·T/4\n"] {
        assert_eq!(text.matches(volume).count(), 2, "{volume:?} in\n{text}");
    }
    assert!(text.contains("(4C, F/4, T/2) | 1   | 2   | 4C       | (4C, F/4, T/4)"));
}

#[test]
fn identity_stages_keep_the_volume() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "id.model", "c0 = 2\nf0 = 16\nheads = 2\nstages = 1x1, 1x1, 1x1\n");
    let o = run(&["plan", &cfg]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.matches("| C·F·T\n").count(), 3);
    assert_eq!(text.matches("| 6336\n").count(), 3);
}

#[test]
fn bad_divisibility_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.model", "c0 = 1\nf0 = 5\nheads = 1\nstages = 1x1, 2x1\n");
    let o = run(&["plan", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("stage 2"), "{}", stderr(&o));
}

#[test]
fn cost_reports_band_and_ablation() {
    let o = run(&["cost", configs().join("toy.model").to_str().unwrap(), "--ablate-time"]);
    assert!(o.status.success());
    let csv = stdout(&o);
    assert!(csv.starts_with("name,params,macs\n"));
    let total = csv.lines().last().unwrap();
    let macs: u64 = total.rsplit(',').next().unwrap().parse().unwrap();
    assert!(total.starts_with("total,") && macs > 0);
    let err = stderr(&o);
    assert!(err.contains("band B0"), "{err}");
    let ratio: f64 = err.rsplit("ratio ").next().unwrap().trim().parse().unwrap();
    assert!(ratio > 1.0);
}

#[test]
fn zero_stage_config_has_no_stage_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "zero.model", "c0 = 1\nstages =\n");
    let o = run(&["cost", &cfg, "--ablate-time"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(!stdout(&o).contains("stage"));
    assert!(stderr(&o).contains("ratio 1.000"));
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.model");
    assert_eq!(run(&["plan", missing.to_str().unwrap()]).status.code(), Some(5));
    let unknown = write(dir.path(), "unknown.model", "c0 = 1\nwidth = 3\n");
    assert_eq!(run(&["cost", &unknown]).status.code(), Some(2));
    let toy = configs().join("toy.model");
    let short = run(&["cost", toy.to_str().unwrap(), "--input-seconds", "0.001"]);
    assert_eq!(short.status.code(), Some(2));

    let train = write(dir.path(), "t.train", &format!("{TINY_TRAIN}lr_max = 1e30\nlr_min = 1\n"));
    let out = dir.path().join("nan");
    let o = run(&[
        "train",
        "--model",
        toy.to_str().unwrap(),
        "--train",
        &train,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

fn train(dir: &Path, model: &str, train_cfg: &str, name: &str) -> PathBuf {
    let out = dir.join(name);
    let o = run(&["train", "--model", model, "--train", train_cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

#[test]
fn train_eval_pareto_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let tc = write(d, "tiny.train", TINY_TRAIN);
    let toy = configs().join("toy.model");
    let toy = toy.to_str().unwrap();
    let run_a = train(d, toy, &tc, "a");
    for f in [
        "manifest.txt",
        "model.cfg",
        "train.cfg",
        "plan.txt",
        "cost.csv",
        "metrics_pretrain.csv",
        "metrics_lm.csv",
        "pretrain.ckpt",
        "final.ckpt",
        "trials.txt",
        "eval.csv",
        "scores.csv",
        "eval.txt",
    ] {
        assert!(run_a.join(f).is_file(), "missing {f}");
    }
    let metrics = fs::read_to_string(run_a.join("metrics_pretrain.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 2 * 2);

    // Rerunning reproduces every artifact.
    let again = train(d, toy, &tc, "a2");
    for f in ["final.ckpt", "pretrain.ckpt", "metrics_pretrain.csv", "metrics_lm.csv", "scores.csv", "eval.csv"] {
        assert_eq!(fs::read(run_a.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }

    // Standalone eval agrees with the report written by train.
    let eval_dir = d.join("eval");
    let o = run(&[
        "eval",
        "--model",
        run_a.join("model.cfg").to_str().unwrap(),
        "--checkpoint",
        run_a.join("final.ckpt").to_str().unwrap(),
        "--trials",
        run_a.join("trials.txt").to_str().unwrap(),
        "--synthetic",
        run_a.join("train.cfg").to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read(run_a.join("eval.csv")).unwrap(),
        fs::read(eval_dir.join("eval.csv")).unwrap()
    );

    // A wider model, and a run directory without an eval report.
    let wide = write(d, "wide.model", &fs::read_to_string(configs().join("toy.model")).unwrap().replace("c0 = 1", "c0 = 2"));
    let run_b = train(d, &wide, &tc, "b");
    let empty = d.join("empty");
    fs::create_dir(&empty).unwrap();
    let o = run(&[
        "pareto",
        run_b.to_str().unwrap(),
        empty.to_str().unwrap(),
        run_a.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("warning") && stderr(&o).contains("empty"));
    let csv = stdout(&o);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "run,gmacs,params,eer");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with(run_a.to_str().unwrap()));
    assert!(lines[2].starts_with(run_b.to_str().unwrap()));
    let gmacs = |l: &str| l.split(',').nth(1).unwrap().parse::<f64>().unwrap();
    assert!(gmacs(lines[1]) < gmacs(lines[2]));

    // Evaluating with a mismatched model config is a contract violation.
    let o = run(&[
        "eval",
        "--model",
        &wide,
        "--checkpoint",
        run_a.join("final.ckpt").to_str().unwrap(),
        "--trials",
        run_a.join("trials.txt").to_str().unwrap(),
        "--synthetic",
        &tc,
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn synth_exports_wavs_for_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let tc = write(d, "tiny.train", TINY_TRAIN);
    let wavs = d.join("wavs");
    let o = run(&["synth", "--train", &tc, "--out", wavs.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let trials = fs::read_to_string(wavs.join("trials.txt")).unwrap();
    assert_eq!(trials.lines().count(), 8 * 7 / 2);
    assert!(wavs.join("spk000/trial00.wav").is_file());
    assert!(!wavs.join("spk000/train00.wav").exists());
}
