use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use aecomm_cli::csv::{AUGMENT_HEADER, CONSTELLATION_HEADER, FRONTIER_HEADER, SWEEP_HEADER, TRAIN_HEADER};
use aecomm_cli::modelfile::{load_model, StoredModel};

const TINY: &str = "\
link.n_fft = 4
link.hidden = 16
ch.snr_db = 8
train.n_ep = 2
train.n_batches = 4
train.batch_size = 32
train.val_frames = 64
gan.gen_hidden = 16
gan.critic_hidden = 16
gan.epochs = 2
gan.batch_size = 16
sweep.snr_grid = 0:5:10
sweep.n_frames = 300
frontier.jsr_grid = 0,10
frontier.snr_lo = 0
frontier.snr_hi = 6
frontier.n_frames = 600
jam.enabled = true
augment.multipliers = 0,1
augment.steps = 10
augment.val_frames = 50
dataset.n_frames = 40
";

fn aecomm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aecomm"))
        .args(args)
        .env("AECOMM_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = aecomm(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

struct Dir(tempfile::TempDir);

impl Dir {
    fn new(config: &str) -> Self {
        let d = Dir(tempfile::tempdir().unwrap());
        std::fs::write(d.path("run.cfg"), config).unwrap();
        d
    }
    fn path(&self, name: &str) -> PathBuf {
        self.0.path().join(name)
    }
    fn s(&self, name: &str) -> String {
        self.path(name).to_str().unwrap().to_string()
    }
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string()
}

#[test]
fn conventional_sweep_writes_the_declared_csv() {
    let d = Dir::new("system = conventional\nlink.n_fft = 4\nsweep.snr_grid = 0,5\nsweep.n_frames = 200\n");
    ok(&["sweep", "--config", &d.s("run.cfg"), "--out", &d.s("s.csv")]);
    let text = std::fs::read_to_string(d.path("s.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], SWEEP_HEADER);
    assert_eq!(lines.len(), 3);
    let fields: Vec<f64> = lines[1].split(',').map(|f| f.parse().unwrap()).collect();
    assert_eq!(fields[0], 0.0);
    assert!(fields[1] > 0.0 && fields[1] < 0.5);
    assert!(fields[2] > 0.0);
    assert!(fields[3] >= 1.0);
}

#[test]
fn full_pipeline_runs_and_is_reproducible() {
    let d = Dir::new(TINY);
    let cfg = d.s("run.cfg");
    let run_all = |tag: &str| {
        let o = |name: &str| d.s(&format!("{tag}_{name}"));
        ok(&[
            "train",
            "--config",
            &cfg,
            "--seed",
            "7",
            "--out",
            &o("ae.aecm"),
            "--log",
            &o("train.csv"),
        ]);
        ok(&["quantize", "--model", &o("ae.aecm"), "--out", &o("q.aecm")]);
        ok(&[
            "sweep",
            "--config",
            &cfg,
            "--seed",
            "7",
            "--model",
            &o("q.aecm"),
            "--out",
            &o("sweep.csv"),
        ]);
        ok(&[
            "frontier",
            "--config",
            &cfg,
            "--seed",
            "7",
            "--model",
            &o("ae.aecm"),
            "--out",
            &o("frontier.csv"),
        ]);
        ok(&[
            "constellation",
            "--config",
            &cfg,
            "--seed",
            "7",
            "--model",
            &o("ae.aecm"),
            "--out",
            &o("const.csv"),
        ]);
        ok(&[
            "dataset-make",
            "--config",
            &cfg,
            "--seed",
            "7",
            "--model",
            &o("ae.aecm"),
            "--out",
            &o("real.aeds"),
        ]);
        ok(&[
            "train-gan",
            "--config",
            &cfg,
            "--seed",
            "7",
            "--model",
            &o("ae.aecm"),
            "--data",
            &o("real.aeds"),
            "--out",
            &o("gan.aecm"),
        ]);
        ok(&[
            "augment",
            "--config",
            &cfg,
            "--seed",
            "7",
            "--model",
            &o("ae.aecm"),
            "--data",
            &o("real.aeds"),
            "--gan",
            &o("gan.aecm"),
            "--out",
            &o("aug.csv"),
        ]);
    };
    run_all("a");
    run_all("b");
    for name in [
        "ae.aecm",
        "train.csv",
        "q.aecm",
        "sweep.csv",
        "frontier.csv",
        "const.csv",
        "real.aeds",
        "gan.aecm",
        "aug.csv",
    ] {
        let a = std::fs::read(d.path(&format!("a_{name}"))).unwrap();
        let b = std::fs::read(d.path(&format!("b_{name}"))).unwrap();
        assert_eq!(a, b, "{name} differs between runs");
    }
    assert_eq!(header(&d.path("a_train.csv")), TRAIN_HEADER);
    assert_eq!(header(&d.path("a_sweep.csv")), SWEEP_HEADER);
    assert_eq!(header(&d.path("a_frontier.csv")), FRONTIER_HEADER);
    assert_eq!(header(&d.path("a_const.csv")), CONSTELLATION_HEADER);
    assert_eq!(header(&d.path("a_aug.csv")), AUGMENT_HEADER);
    assert!(matches!(
        load_model(&d.path("a_q.aecm")).unwrap(),
        StoredModel::Quantized(_)
    ));
    assert!(matches!(
        load_model(&d.path("a_gan.aecm")).unwrap(),
        StoredModel::Gan(_)
    ));
    let train = std::fs::read_to_string(d.path("a_train.csv")).unwrap();
    assert_eq!(train.lines().count(), 3);
}

#[test]
fn seed_changes_the_model() {
    let d = Dir::new(TINY);
    let cfg = d.s("run.cfg");
    ok(&["train", "--config", &cfg, "--seed", "1", "--out", &d.s("a.aecm")]);
    ok(&["train", "--config", &cfg, "--seed", "2", "--out", &d.s("b.aecm")]);
    assert_ne!(
        std::fs::read(d.path("a.aecm")).unwrap(),
        std::fs::read(d.path("b.aecm")).unwrap()
    );
}

#[test]
fn unknown_flag_exits_with_usage_code() {
    let out = aecomm(&["sweep", "--out", "x.csv", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--bogus"));
}

#[test]
fn missing_config_names_the_path() {
    let out = aecomm(&["sweep", "--config", "/no/such/dir/run.cfg", "--out", "/tmp/x.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/dir/run.cfg"));
}

#[test]
fn ae_system_without_model_is_an_error() {
    let d = Dir::new("link.n_fft = 4\n");
    let out = aecomm(&["sweep", "--config", &d.s("run.cfg"), "--out", &d.s("s.csv")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--model"));
}

#[test]
fn corrupted_model_reports_the_offset() {
    let d = Dir::new("link.n_fft = 4\n");
    std::fs::write(d.path("bad.aecm"), b"XXXX\x01\x00").unwrap();
    let out = aecomm(&["quantize", "--model", &d.s("bad.aecm"), "--out", &d.s("q.aecm")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("offset 0"));
}

#[test]
fn qpsk_constellation_export() {
    let d = Dir::new("system = conventional\n");
    ok(&["constellation", "--config", &d.s("run.cfg"), "--out", &d.s("c.csv")]);
    let text = std::fs::read_to_string(d.path("c.csv")).unwrap();
    assert_eq!(text.lines().count(), 5);
}
