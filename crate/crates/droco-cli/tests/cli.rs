//! End-to-end tests of the command-line surface: flags, file outputs,
//! determinism, and exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn droco() -> Command {
    Command::new(env!("CARGO_BIN_EXE_droco"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    droco()
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn assert_code(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

const GEN_SMALL: &[&str] = &[
    "gen-data",
    "--n",
    "400",
    "--n-tar",
    "400",
    "--width",
    "4",
    "--height",
    "4",
    "--seed",
    "5",
    "--out",
    "data",
];

fn small_config(dir: &Path, extra: &str) {
    fs::write(
        dir.join("run.toml"),
        format!(
            r#"
[data]
src_path = "data/src.jsonl"
tar_path = "data/tar.jsonl"
mdp_src_path = "data/mdp_src.json"
mdp_tar_path = "data/mdp_tar.json"
fraction = 0.5

[droco]
steps = 200
{extra}

[output]
dir = "runs"
"#
        ),
    )
    .unwrap();
}

#[test]
fn gen_data_writes_expected_files_and_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(GEN_SMALL, dir.path());
    assert_code(&out, 0);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("400 source records"), "{text}");
    let src = fs::read_to_string(dir.path().join("data/src.jsonl")).unwrap();
    assert_eq!(src.lines().count(), 400);
    assert!(dir.path().join("data/mdp_src.json").exists());
    assert!(dir.path().join("data/mdp_tar.json").exists());
}

#[test]
fn gen_data_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(GEN_SMALL, dir.path());
    assert_code(&out, 0);
    let first = fs::read(dir.path().join("data/src.jsonl")).unwrap();
    let out = run(GEN_SMALL, dir.path());
    assert_code(&out, 0);
    let second = fs::read(dir.path().join("data/src.jsonl")).unwrap();
    assert_eq!(first, second);
}

#[test]
fn gen_data_without_shift_writes_identical_mdp_pair() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = GEN_SMALL.to_vec();
    args.extend_from_slice(&["--shift", "none"]);
    let out = run(&args, dir.path());
    assert_code(&out, 0);
    let src = fs::read(dir.path().join("data/mdp_src.json")).unwrap();
    let tar = fs::read(dir.path().join("data/mdp_tar.json")).unwrap();
    assert_eq!(src, tar);
}

#[test]
fn gen_data_rejects_bad_flags_with_usage_exit() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["gen-data", "--shift", "warp", "--out", "d"], dir.path());
    assert_code(&out, 2);
    // Unknown flags are also usage errors (clap).
    let out = run(&["gen-data", "--frobnicate"], dir.path());
    assert_code(&out, 2);
}

#[test]
fn train_zero_steps_checkpoint_is_initialization() {
    let dir = tempfile::tempdir().unwrap();
    assert_code(&run(GEN_SMALL, dir.path()), 0);
    small_config(dir.path(), "");
    let out = run(
        &["train", "--config", "run.toml", "--seed", "1", "--steps", "0"],
        dir.path(),
    );
    assert_code(&out, 0);
    let run_dir = fs::read_dir(dir.path().join("runs"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let ckpt: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_dir.join("checkpoint.json")).unwrap())
            .unwrap();
    assert_eq!(ckpt["steps_done"], 0);
    let q = ckpt["q"]["values"].as_array().unwrap();
    assert!(q
        .iter()
        .all(|row| row.as_array().unwrap().iter().all(|v| v.as_f64() == Some(0.0))));
}

#[test]
fn train_is_reproducible_and_checks_identity() {
    let dir = tempfile::tempdir().unwrap();
    assert_code(&run(GEN_SMALL, dir.path()), 0);
    small_config(dir.path(), "");
    let args = [
        "train",
        "--config",
        "run.toml",
        "--seed",
        "3",
        "--check-rcb-identity",
    ];
    let out = run(&args, dir.path());
    assert_code(&out, 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("rcb identity check: ok"));
    let run_dir = fs::read_dir(dir.path().join("runs"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let first = fs::read(run_dir.join("checkpoint.json")).unwrap();
    assert_code(&run(&args, dir.path()), 0);
    let second = fs::read(run_dir.join("checkpoint.json")).unwrap();
    assert_eq!(first, second);
    // Loss CSV has the expected header.
    let csv = fs::read_to_string(run_dir.join("loss.csv")).unwrap();
    assert!(csv.starts_with("step,v_loss,q_loss_src,q_loss_tar,mean_penalty"));
}

#[test]
fn train_divergence_aborts_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    assert_code(&run(GEN_SMALL, dir.path()), 0);
    small_config(dir.path(), "q_lr = 1e12\nv_lr = 1e12");
    let out = run(&["train", "--config", "run.toml"], dir.path());
    assert_code(&out, 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("divergence guard"));
}

#[test]
fn train_rejects_unknown_config_keys() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "[droco]\nbogus_knob = 1\n").unwrap();
    let out = run(&["train", "--config", "bad.toml"], dir.path());
    assert_code(&out, 2);
}

fn trained_run_dir(dir: &Path) -> std::path::PathBuf {
    assert_code(&run(GEN_SMALL, dir), 0);
    small_config(dir, "");
    assert_code(&run(&["train", "--config", "run.toml"], dir), 0);
    fs::read_dir(dir.join("runs"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path()
}

#[test]
fn eval_clean_only_and_row_counts() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = trained_run_dir(dir.path());
    let ckpt = run_dir.join("checkpoint.json");
    let mdp = dir.path().join("data/mdp_tar.json");
    let out = run(
        &[
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--mdp-tar",
            mdp.to_str().unwrap(),
            "--perturb",
            "none",
            "--seeds",
            "0,1,2",
            "--out-csv",
            "report.csv",
        ],
        dir.path(),
    );
    assert_code(&out, 0);
    let csv = fs::read_to_string(dir.path().join("report.csv")).unwrap();
    // Header plus one clean row per seed.
    assert_eq!(csv.lines().count(), 1 + 3);
    assert!(csv.lines().skip(1).all(|l| l.starts_with("clean,0,")));
}

#[test]
fn eval_zero_scale_attack_degrades_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = trained_run_dir(dir.path());
    let out = run(
        &[
            "eval",
            "--checkpoint",
            run_dir.join("checkpoint.json").to_str().unwrap(),
            "--mdp-tar",
            dir.path().join("data/mdp_tar.json").to_str().unwrap(),
            "--perturb",
            "minq:0.0",
            "--seeds",
            "0",
        ],
        dir.path(),
    );
    assert_code(&out, 0);
    let text = String::from_utf8_lossy(&out.stdout);
    let row = text
        .lines()
        .find(|l| l.starts_with("min_v,"))
        .expect("min_v row");
    let degradation: f64 = row.split(',').next_back().unwrap().parse().unwrap();
    assert_eq!(degradation, 0.0, "{row}");
}

#[test]
fn eval_full_grid_row_count() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = trained_run_dir(dir.path());
    let out = run(
        &[
            "eval",
            "--checkpoint",
            run_dir.join("checkpoint.json").to_str().unwrap(),
            "--mdp-tar",
            dir.path().join("data/mdp_tar.json").to_str().unwrap(),
            "--perturb",
            "all",
            "--seeds",
            "0,1",
        ],
        dir.path(),
    );
    assert_code(&out, 0);
    let text = String::from_utf8_lossy(&out.stdout);
    // (1 clean + 9 battery conditions) x 2 seeds + header.
    assert_eq!(text.lines().count(), 1 + 10 * 2);
}

#[test]
fn eval_missing_checkpoint_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "eval",
            "--checkpoint",
            "nope.json",
            "--mdp-tar",
            "also-nope.json",
        ],
        dir.path(),
    );
    assert_code(&out, 2);
}

#[test]
fn verify_single_prop_writes_summary_and_exits_clean() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "verify",
            "--prop",
            "contraction",
            "--trials",
            "25",
            "--seed",
            "9",
            "--out-json",
            "summary.json",
        ],
        dir.path(),
    );
    assert_code(&out, 0);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("contraction"), "{text}");
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary[0]["prop"], "contraction");
    assert_eq!(summary[0]["trials"], 25);
    assert_eq!(summary[0]["violations"], 0);
}

#[test]
fn verify_is_deterministic_given_seed() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "verify",
        "--prop",
        "dual",
        "--trials",
        "12",
        "--seed",
        "21",
        "--out-json",
        "s.json",
    ];
    assert_code(&run(&args, dir.path()), 0);
    let first = fs::read(dir.path().join("s.json")).unwrap();
    assert_code(&run(&args, dir.path()), 0);
    let second = fs::read(dir.path().join("s.json")).unwrap();
    assert_eq!(first, second);
}

#[test]
fn sweep_produces_one_row_per_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("sweep.toml"),
        r#"
[grid]
width = 4
height = 4
goal_cell = 15
gamma = 0.95

[data]
n_src = 400
n_tar_full = 400
horizon = 20

[droco]
steps = 150

[sweep]
betas = [0.0, 1.0]
deltas = [30.0]
fractions = [0.5]
seeds = [0, 1, 2]

[output]
dir = "runs"
"#,
    )
    .unwrap();
    let out = run(
        &[
            "sweep",
            "--config",
            "sweep.toml",
            "--jobs",
            "2",
            "--out-csv",
            "sweep.csv",
        ],
        dir.path(),
    );
    assert_code(&out, 0);
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    // Header + 2 betas x 1 delta x 1 fraction x 3 seeds.
    assert_eq!(csv.lines().count(), 1 + 6);
    assert!(csv.lines().skip(1).all(|l| l.contains(",ok,")), "{csv}");
}

#[test]
fn sweep_empty_grid_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("sweep.toml"), "[sweep]\nbetas = []\n").unwrap();
    let out = run(&["sweep", "--config", "sweep.toml"], dir.path());
    assert_code(&out, 2);
}
