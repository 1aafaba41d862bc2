//! End-to-end runs of the `striae` binary on a tiny configuration.

use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
version = 1
seed = 5
out = "run"
test_samples = 3

[dataset]
sample_count = 6
source_range = [20000.0, 60000.0]
coupling_range = [5000.0, 15000.0]
snr_db = 10.0
image_size = 16
source_depth = 35.0

[dataset.band]
start = 600.0
end = 800.0
step = 20.0

[dataset.array]
element_count = 11
spacing = 200.0
depth = 35.0

[dataset.coupling]
diagonal_range = [0.5, 1.5]
coupling_strength_range = [0.0, 5.0]

[network]
architecture = "unet"
levels = 2
base_channels = 2
input_size = 16

[train]
batch_size = 4
max_epochs = 2
plateau_window = 20
plateau_tolerance = 0.0001

[train.adam]
learning_rate = 0.001
beta1 = 0.9
beta2 = 0.999
epsilon = 0.00000001

[analysis]
ranging_beta = 2.17
window = [1000.0, 15000.0]

[test]
nliw = "rect"
triptychs = 2

[test.sweep]
parameter = "amplitude"
values = [1.0, 9.0]

[test.timeline]
source_speed = 2.4
nliw_speed = 0.6
source_start = 20000.0
nliw_start = 2000.0
interval = 600.0
duration = 1200.0

[test.sweep_timeline]
source_speed = 0.0
nliw_speed = 0.6
source_start = 35000.0
nliw_start = 2000.0
interval = 600.0
duration = 600.0
"#;

fn striae(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_striae")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = striae(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn tiny_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    dir
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let dir = tiny_dir();
    let d = dir.path();
    let cfg = ["--config", "tiny.toml"];
    ok(d, &[&cfg[..], &["gen"]].concat());
    let table = ok(d, &[&cfg[..], &["train", "--dry-run"]].concat());
    assert!(table.contains("convolutional layers: 13"), "{table}");
    let log = ok(d, &[&cfg[..], &["train"]].concat());
    assert!(log.contains("loss"));
    let report = ok(d, &[&cfg[..], &["eval"]].concat());
    assert!(report.contains("median C_D") && report.contains("random-coupling test set"), "{report}");
    ok(d, &[&cfg[..], &["sweep"]].concat());
    let run = d.join("run");
    for name in [
        "config.toml",
        "train.aisd",
        "train.aisd.manifest.toml",
        "test.aisd",
        "weights.aisn",
        "train_log.csv",
        "eval_rows.csv",
        "random_rows.csv",
        "eval_report.txt",
        "eval_000.pgm",
        "eval_002.pgm",
        "sweep_rows.csv",
        "sweep_averages.csv",
    ] {
        assert!(run.join(name).exists(), "missing {name}");
    }
    let eval_rows = std::fs::read_to_string(run.join("eval_rows.csv")).unwrap();
    assert_eq!(eval_rows.lines().count(), 1 + 3);
    let log = std::fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 2);

    let averages = ok(d, &[&cfg[..], &["report", "run/sweep_rows.csv"]].concat());
    assert!(averages.lines().count() >= 3, "{averages}");

    ok(d, &[&cfg[..], &["train", "--resume", "run/weights.aisn"]].concat());
    let log = std::fs::read_to_string(run.join("train_log.csv")).unwrap();
    let epochs: Vec<&str> = log.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(epochs, ["0", "1", "2", "3"]);
}

#[test]
fn generation_is_reproducible_and_seeded() {
    let dir = tiny_dir();
    let d = dir.path();
    let gen = |out: &str, seed: &str, threads: &str| {
        ok(d, &["--config", "tiny.toml", "--out", out, "--seed", seed, "--threads", threads, "gen"]);
        std::fs::read(d.join(out).join("train.aisd")).unwrap()
    };
    let a = gen("a", "5", "1");
    let b = gen("b", "5", "3");
    let c = gen("c", "6", "1");
    assert_eq!(a, b);
    assert_ne!(a, c);
    let echoed = std::fs::read_to_string(d.join("c/config.toml")).unwrap();
    assert!(echoed.contains("seed = 6"));
    let rerun = ok(d, &["--config", "c/config.toml", "--out", "c2", "gen"]);
    assert!(rerun.contains("6 samples"));
    assert_eq!(std::fs::read(d.join("c2/train.aisd")).unwrap(), c);
}

#[test]
fn exit_codes_follow_the_failure_class() {
    let dir = tiny_dir();
    let d = dir.path();
    std::fs::write(d.join("v7.toml"), TINY.replace("version = 1", "version = 7")).unwrap();
    assert_eq!(striae(d, &["--config", "v7.toml", "gen"]).status.code(), Some(2));
    std::fs::write(d.join("mismatch.toml"), TINY.replace("input_size = 16", "input_size = 32")).unwrap();
    assert_eq!(striae(d, &["--config", "mismatch.toml", "gen"]).status.code(), Some(2));
    assert_eq!(striae(d, &["--config", "absent.toml", "gen"]).status.code(), Some(3));
    assert_eq!(striae(d, &["--config", "tiny.toml", "eval"]).status.code(), Some(3));
    std::fs::write(d.join("empty.csv"), "parameter,value,r_s,r_l,c_d,c_r,r0,range_error\n").unwrap();
    assert_eq!(striae(d, &["--config", "tiny.toml", "report", "empty.csv"]).status.code(), Some(3));
    std::fs::write(d.join("junk.csv"), "not,a,metric,file\n").unwrap();
    assert_eq!(striae(d, &["--config", "tiny.toml", "report", "junk.csv"]).status.code(), Some(3));
}

#[test]
fn inspection_commands() {
    let dir = tiny_dir();
    let d = dir.path();
    let table = ok(d, &["modes", "--freq", "700"]);
    assert!(table.starts_with("frequency_hz,mode,k_rad_per_m,alpha_np_per_m"));
    assert!(table.lines().count() > 10);
    let paper = ok(d, &["--preset", "paper", "train", "--dry-run"]);
    assert!(paper.contains("convolutional layers: 23"));
    let diag = striae(d, &["--config", "tiny.toml", "phase-diag", "--amplitude", "0"]);
    assert!(diag.status.success());
    assert!(!String::from_utf8_lossy(&diag.stderr).contains("FLAGGED"));
}
