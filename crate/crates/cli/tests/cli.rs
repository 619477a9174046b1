//! End-to-end runs of the `hyperweather` binary on a tiny configuration.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hyperweather::dataset::{Dataset, Split};
use hyperweather::eval::evaluate_degraded;
use hyperweather::synth::{read_ppm, write_ppm};

const TINY: &str = "\
data.count.drop = 10
data.count.streak = 10
data.count.flake = 10
data.height = 16
data.width = 16
model.channels = 8,16,24,32
model.heads = 1,2,1,2
model.sr_ratios = 2,2,1,1
model.blocks = 1
model.queries = 2
model.feature_dim = 8
model.tail_channels = 2
train.steps.pretrain = 3
train.steps.restore = 4
train.steps.finetune = 2
train.batch = 3
train.val_every = 2
train.val_per_class = 1
";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hyperweather"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
        Workspace { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn ok(&self, args: &[&str]) -> String {
        let mut all = vec!["--config", "tiny.cfg"];
        all.extend_from_slice(args);
        ok(self.dir.path(), &all)
    }

    fn code(&self, args: &[&str]) -> i32 {
        let mut all = vec!["--config", "tiny.cfg"];
        all.extend_from_slice(args);
        run(self.dir.path(), &all).status.code().unwrap()
    }

    /// Dataset plus a model trained through all three phases.
    fn trained(&self) {
        self.ok(&["synth", "--out", "data.mwds"]);
        self.ok(&["pretrain-feat", "--data", "data.mwds", "--out", "p1.mwfc"]);
        self.ok(&["train", "--data", "data.mwds", "--resume", "p1.mwfc", "--out", "p2.mwfc"]);
        self.ok(&["finetune", "--data", "data.mwds", "--resume", "p2.mwfc", "--out", "model.mwfc", "--log", "log.csv"]);
    }
}

#[test]
fn unknown_subcommand_is_a_user_error() {
    let out = bin().arg("defog").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn help_succeeds() {
    let out = bin().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    for cmd in [
        "synth",
        "pretrain-feat",
        "train",
        "finetune",
        "infer",
        "identify",
        "route",
        "eval",
        "ablate",
        "export-embeddings",
        "count",
    ] {
        assert!(text.contains(cmd), "help lacks {cmd}");
    }
}

#[test]
fn user_errors_exit_with_one() {
    let ws = Workspace::new();
    assert_eq!(ws.code(&["eval", "--data", "missing.mwds", "--degraded-only"]), 1);
    fs::write(ws.path("bad.cfg"), "model.colour = red\n").unwrap();
    assert_eq!(run(ws.dir.path(), &["--config", "bad.cfg", "count"]).status.code(), Some(1));
    assert_eq!(ws.code(&["synth"]), 1);
    fs::write(ws.path("junk.mwfc"), b"not a checkpoint").unwrap();
    assert_eq!(ws.code(&["identify", "--model", "junk.mwfc", "x.ppm"]), 1);
}

#[test]
fn synth_then_degraded_eval() {
    let ws = Workspace::new();
    ws.ok(&["synth", "--out", "data.mwds"]);
    let report = ws.ok(&["eval", "--data", "data.mwds", "--degraded-only"]);
    let data = Dataset::load(&ws.path("data.mwds")).unwrap();
    assert_eq!(data.len(), 30);
    let want = evaluate_degraded(&data, Split::Test).unwrap();
    assert_eq!(report, want.to_csv());
    let avg: f64 = report
        .lines()
        .find(|l| l.starts_with("average"))
        .unwrap()
        .split(',')
        .nth(2)
        .unwrap()
        .parse()
        .unwrap();
    assert!(avg > 5.0 && avg < 40.0);
}

#[test]
fn identical_seeds_give_identical_files() {
    let ws = Workspace::new();
    ws.ok(&["--seed", "3", "synth", "--out", "a.mwds"]);
    ws.ok(&["--seed", "3", "synth", "--out", "b.mwds"]);
    ws.ok(&["--seed", "4", "synth", "--out", "c.mwds"]);
    let read = |n: &str| fs::read(ws.path(n)).unwrap();
    assert_eq!(read("a.mwds"), read("b.mwds"));
    assert_ne!(read("a.mwds"), read("c.mwds"));
}

#[test]
fn count_reports_every_quantity() {
    let ws = Workspace::new();
    let text = ws.ok(&["count"]);
    for key in ["total_params", "generator_params", "generated_values", "total_macs"] {
        assert!(text.lines().any(|l| l.starts_with(key)), "{key} missing");
    }
}

#[test]
fn full_pipeline_and_inference_modes() {
    let ws = Workspace::new();
    ws.trained();
    let log = fs::read_to_string(ws.path("log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 3 + 4 + 2);

    ws.ok(&["synth", "--hybrids", "2", "--out", "hybrid.mwds"]);
    let hybrid = Dataset::load(&ws.path("hybrid.mwds")).unwrap();
    write_ppm(&ws.path("hybrid.ppm"), &hybrid.samples[0].degraded).unwrap();

    ws.ok(&[
        "infer", "--model", "model.mwfc", "--input", "hybrid.ppm", "--mode", "cascade", "--order", "streak,flake",
        "--out", "cascade.ppm",
    ]);
    let y = read_ppm(&ws.path("cascade.ppm")).unwrap();
    assert_eq!(y.shape(), &[3, 16, 16]);

    for mode in [["--mode", "full"], ["--mode", "fixed"]] {
        let mut args = vec!["infer", "--model", "model.mwfc", "--input", "hybrid.ppm", "--out", "o.ppm"];
        args.extend_from_slice(&mode);
        if mode[1] == "fixed" {
            args.extend_from_slice(&["--class", "flake"]);
        }
        ws.ok(&args);
    }
    assert_eq!(
        ws.code(&["infer", "--model", "model.mwfc", "--input", "hybrid.ppm", "--mode", "fixed", "--out", "o.ppm"]),
        1
    );
    assert_eq!(
        ws.code(&["infer", "--model", "model.mwfc", "--input", "hybrid.ppm", "--mode", "cascade", "--order", "fog", "--out", "o.ppm"]),
        1
    );

    let scores = ws.ok(&["identify", "--model", "model.mwfc", "hybrid.ppm"]);
    assert_eq!(scores.lines().count(), 2);

    let routed = ws.ok(&["route", "--model", "model.mwfc", "--input", "hybrid.ppm", "--out", "routed.ppm"]);
    assert!(routed.starts_with("routed to "));

    let report = ws.ok(&["eval", "--data", "data.mwds", "--model", "model.mwfc"]);
    assert!(report.contains("# params"));

    let csv = ws.ok(&["export-embeddings", "--model", "model.mwfc", "--data", "data.mwds"]);
    assert_eq!(csv.lines().count(), 31);
    assert!(csv.starts_with("dim_0,"));
}

#[test]
fn phases_must_follow_in_order() {
    let ws = Workspace::new();
    ws.ok(&["synth", "--out", "data.mwds"]);
    assert_eq!(ws.code(&["train", "--data", "data.mwds", "--out", "x.mwfc"]), 1);
    ws.ok(&["pretrain-feat", "--data", "data.mwds", "--out", "p1.mwfc"]);
    assert_eq!(ws.code(&["finetune", "--data", "data.mwds", "--resume", "p1.mwfc", "--out", "x.mwfc"]), 1);
}

#[test]
fn interrupted_training_resumes_exactly() {
    let ws = Workspace::new();
    ws.ok(&["synth", "--out", "data.mwds"]);
    ws.ok(&["pretrain-feat", "--data", "data.mwds", "--out", "p1.mwfc"]);
    ws.ok(&["train", "--data", "data.mwds", "--resume", "p1.mwfc", "--out", "straight.mwfc"]);
    let paused = ws.ok(&["train", "--data", "data.mwds", "--resume", "p1.mwfc", "--max-steps", "1", "--out", "half.mwfc"]);
    assert!(paused.contains("paused"));
    ws.ok(&["train", "--data", "data.mwds", "--resume", "half.mwfc", "--out", "resumed.mwfc"]);
    assert_eq!(fs::read(ws.path("straight.mwfc")).unwrap(), fs::read(ws.path("resumed.mwfc")).unwrap());
}
