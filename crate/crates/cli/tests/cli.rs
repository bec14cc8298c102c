use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dgnc_core::report::RunReport;
use dgnc_core::Split;

const TINY: &str =
    "window_size=4\nd_model=8\nd_gcn=8\nlayers=1\nheads=2\nattn_heads=2\nepochs=3\nbatch_size=4\n";

fn dgnc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dgnc"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn value(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("{key} missing in {text}"))
        .parse()
        .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new(regions: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        let r = regions.to_string();
        let out = dgnc(&[
            "synth",
            "--out",
            p(&data),
            "--subjects",
            "16",
            "--regions",
            &r,
            "--timepoints",
            "24",
            "--window-size",
            "4",
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, extra: &[&str]) -> Output {
        let (data, cfg, ckpt, report) = (
            self.path("data"),
            self.path("tiny.cfg"),
            self.path("m.ckpt"),
            self.path("r.txt"),
        );
        let mut args = vec![
            "train",
            "--data",
            p(&data),
            "--config",
            p(&cfg),
            "--out",
            p(&ckpt),
            "--report",
            p(&report),
        ];
        args.extend_from_slice(extra);
        dgnc(&args)
    }
}

#[test]
fn train_then_eval_agrees_with_report() {
    let f = Fixture::new(6);
    assert_eq!(code(&f.train(&[])), 0);
    let report = RunReport::parse(&fs::read_to_string(f.path("r.txt")).unwrap()).unwrap();
    assert_eq!(report.history.len(), 3);
    assert!(report.wall_clock_seconds.is_none());
    for (split, name) in [(Split::Test, "test"), (Split::Train, "train")] {
        let out = dgnc(&[
            "eval",
            "--data",
            p(&f.path("data")),
            "--ckpt",
            p(&f.path("m.ckpt")),
            "--split",
            name,
        ]);
        assert_eq!(code(&out), 0);
        let text = stdout(&out);
        let m = report.metric(split).unwrap();
        assert_eq!(value(&text, "accuracy"), m.accuracy);
        assert_eq!(value(&text, "auc"), m.auc);
        assert_eq!(value(&text, "recall"), m.recall);
        assert_eq!(value(&text, "precision"), m.precision);
    }
}

#[test]
fn seed_override_and_wall_clock_are_recorded() {
    let f = Fixture::new(6);
    assert_eq!(code(&f.train(&["--seed", "7", "--wall-clock"])), 0);
    let report = RunReport::parse(&fs::read_to_string(f.path("r.txt")).unwrap()).unwrap();
    assert_eq!(report.seed, 7);
    assert!(report.wall_clock_seconds.is_some());
}

#[test]
fn synth_marks_degenerate_mode() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    let out = dgnc(&[
        "synth",
        "--out",
        p(&data),
        "--subjects",
        "4",
        "--regions",
        "3",
        "--timepoints",
        "8",
        "--coupling",
        "0",
        "--window-size",
        "4",
    ]);
    assert_eq!(code(&out), 0);
    let manifest = fs::read_to_string(data.join("manifest.csv")).unwrap();
    assert!(manifest.contains("degenerate mode"), "{manifest}");
}

#[test]
fn usage_errors_exit_two() {
    let f = Fixture::new(6);
    fs::write(f.path("bad.cfg"), "d_model=10\nheads=4\n").unwrap();
    let out = dgnc(&["gradcheck", "--config", p(&f.path("bad.cfg"))]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("divisible"));

    fs::write(f.path("tiny.cfg"), "no_such_key=1\n").unwrap();
    assert_eq!(code(&f.train(&[])), 2);

    let out = dgnc(&[
        "eval",
        "--data",
        p(&f.path("data")),
        "--ckpt",
        p(&f.path("missing.ckpt")),
    ]);
    assert_eq!(code(&out), 2);

    fs::write(f.path("junk.ckpt"), b"not a checkpoint").unwrap();
    let out = dgnc(&[
        "eval",
        "--data",
        p(&f.path("data")),
        "--ckpt",
        p(&f.path("junk.ckpt")),
    ]);
    assert_eq!(code(&out), 2);

    let blocker = f.path("file");
    fs::write(&blocker, "").unwrap();
    let out = dgnc(&["synth", "--out", p(&blocker.join("sub"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn eval_rejects_region_mismatch() {
    let f = Fixture::new(6);
    assert_eq!(code(&f.train(&[])), 0);
    let other = f.path("other");
    let out = dgnc(&[
        "synth",
        "--out",
        p(&other),
        "--subjects",
        "4",
        "--regions",
        "5",
        "--timepoints",
        "24",
        "--window-size",
        "4",
    ]);
    assert_eq!(code(&out), 0);
    let out = dgnc(&["eval", "--data", p(&other), "--ckpt", p(&f.path("m.ckpt"))]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("regions"));
}

#[test]
fn eval_config_must_match_checkpoint() {
    let f = Fixture::new(6);
    assert_eq!(code(&f.train(&[])), 0);
    let (data, ckpt) = (f.path("data"), f.path("m.ckpt"));
    let out = dgnc(&[
        "eval",
        "--data",
        p(&data),
        "--ckpt",
        p(&ckpt),
        "--config",
        p(&f.path("tiny.cfg")),
    ]);
    assert_eq!(code(&out), 0);
    fs::write(f.path("wide.cfg"), TINY.replace("d_gcn=8", "d_gcn=16")).unwrap();
    let out = dgnc(&[
        "eval",
        "--data",
        p(&data),
        "--ckpt",
        p(&ckpt),
        "--config",
        p(&f.path("wide.cfg")),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn divergence_exits_three() {
    let f = Fixture::new(6);
    fs::write(f.path("tiny.cfg"), format!("{TINY}lr=1e308\n")).unwrap();
    let out = f.train(&[]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn gradcheck_passes_and_catches_faults() {
    let out = dgnc(&["gradcheck"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let text = stdout(&out);
    for module in ["attention", "dyngraph", "encoder", "head", "model"] {
        assert!(text.lines().any(|l| l.starts_with(module)), "{text}");
    }
    for op in ["matmul", "softmax_rows"] {
        let out = dgnc(&["gradcheck", "--inject-fault", op]);
        assert_eq!(code(&out), 1);
        let text = stdout(&out);
        assert!(
            text.contains("FAIL module=") && text.contains(&format!("injected_fault={op}")),
            "{text}"
        );
    }
}
