use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_nearbeam");

const TINY: &str = "\
antennas = 16
rings = 3
trials = 3
seed = 7
noiseless = true
user_distance_m = 1.0
distance_grid_m = [0.5, 1.0]
profile_subarray = 4
";

const REFERENCE_USER: &str = "\
noiseless = true
user_angle = 0.0
user_distance_m = 40.0
engine = \"two-stage\"
";

fn run_in(dir: &Path, config: Option<&str>, args: &[&str]) -> Output {
    let mut cmd = Command::new(BIN);
    if let Some(text) = config {
        let path = dir.join("config.toml");
        fs::write(&path, text).unwrap();
        cmd.arg("--config").arg(&path);
    }
    cmd.args(args);
    cmd.current_dir(dir);
    cmd.output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn train_replays_the_reference_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), Some(REFERENCE_USER), &["train", "--out", "a"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("pilots 24"));

    let summary = read(dir.path(), "a/summary.txt");
    assert!(summary.contains("engine = two-stage"));
    assert!(summary.contains("cell = 256:2"));
    assert!(summary.contains("theta_hat = -0.001953125"));
    assert!(summary.contains("pilots = 24"));
    assert!(summary.contains("success = true"));

    let trace = read(dir.path(), "a/trace.jsonl");
    assert_eq!(trace.lines().count(), 9);
    assert!(dir.path().join("a/config.resolved.toml").exists());

    // Same seed, same files.
    let again = run_in(dir.path(), Some(REFERENCE_USER), &["train", "--out", "b"]);
    assert!(again.status.success());
    assert_eq!(trace, read(dir.path(), "b/trace.jsonl"));
    assert_eq!(summary, read(dir.path(), "b/summary.txt"));
}

#[test]
fn train_strict_rule_widens_the_last_layer() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        Some(REFERENCE_USER),
        &["train", "--last-layer-rule", "strict", "--out", "s"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let summary = read(dir.path(), "s/summary.txt");
    assert!(summary.contains("pilots = 26"));
    assert!(summary.contains("cell = 256:2"));
    assert!(read(dir.path(), "s/config.resolved.toml").contains("last_layer_rule = \"strict\""));
}

#[test]
fn train_exhaustive_trace_lists_every_cell() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        Some(TINY),
        &["train", "--engines", "exhaustive", "--out", "t"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let trace = read(dir.path(), "t/trace.jsonl");
    assert_eq!(trace.lines().count(), 1);
    // 16 angles x 3 rings tested in the single record.
    assert_eq!(trace.matches("polar:").count(), 48 + 1);
    assert!(read(dir.path(), "t/summary.txt").contains("pilots = 48"));
}

#[test]
fn train_rejects_multi_engine_flag() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        Some(TINY),
        &["train", "--engines", "two-stage,exhaustive", "--out", "x"],
    );
    assert!(!out.status.success());
    assert!(stderr(&out).contains("single engine"));
}

#[test]
fn codebook_outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), Some(TINY), &["codebook", "--out", "a"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("48 codewords"));

    let csv = read(dir.path(), "a/codebook.csv");
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 49);
    assert_eq!(
        lines[0],
        "layer,angle_index,distance_index,theta,distance_m_or_inf,first_active,last_active"
    );
    let bin = fs::read(dir.path().join("a/codebook.bin")).unwrap();
    assert_eq!(bin.len(), 48 * 16 * 16);

    let again = run_in(dir.path(), Some(TINY), &["codebook", "--out", "b"]);
    assert!(again.status.success());
    assert_eq!(csv, read(dir.path(), "b/codebook.csv"));
    assert_eq!(bin, fs::read(dir.path().join("b/codebook.bin")).unwrap());
}

#[test]
fn codebook_defaults_to_the_full_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), None, &["codebook", "--out", "full"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("3072 codewords"));
    assert_eq!(read(dir.path(), "full/codebook.csv").lines().count(), 3073);
}

#[test]
fn profile_writes_both_sweeps() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), Some(TINY), &["profile", "--out", "p"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = read(dir.path(), "p/profile.csv");
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "sweep,beam,theta,gain");
    assert_eq!(lines.len(), 1 + 16 + 4);
    assert!(lines[1].starts_with("full,1,"));
    assert!(lines[17].starts_with("sub,1,"));
    for line in &lines[1..] {
        let gain: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!((0.0..=1.0 + 1e-9).contains(&gain));
    }
}

#[test]
fn sweep_prints_overhead_and_writes_results() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), Some(TINY), &["sweep", "--out", "s"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("engine"));
    assert!(text.contains("two-stage"));
    assert!(text.contains("far-hierarchical"));

    let csv = read(dir.path(), "s/results.csv");
    let lines: Vec<&str> = csv.lines().collect();
    // Header plus 2 sweep points x 5 engines.
    assert_eq!(lines.len(), 11);
    assert!(lines[1].starts_with("exhaustive,distance_m,0.5,3,"));
    assert!(lines.iter().skip(1).all(|l| l.ends_with(",7")));

    let again = run_in(dir.path(), Some(TINY), &["sweep", "--out", "t"]);
    assert!(again.status.success());
    assert_eq!(csv, read(dir.path(), "t/results.csv"));
}

#[test]
fn sweep_engine_flag_narrows_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        Some(TINY),
        &["sweep", "--engines", "two-stage", "--out", "n"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = read(dir.path(), "n/results.csv");
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("two-stage,distance_m,0.5,3,"));
}

#[test]
fn sweep_rejects_an_empty_engine_list() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), Some(TINY), &["sweep", "--engines", "", "--out", "e"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("engine list is empty"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), Some("bogus_key = 3\n"), &["codebook", "--out", "e"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("unknown field"));
}

#[test]
fn flags_win_over_config_keys() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        Some(TINY),
        &["sweep", "--trials", "2", "--seed", "9", "--engines", "far-hierarchical", "--out", "f"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = read(dir.path(), "f/results.csv");
    assert!(csv.lines().nth(1).unwrap().starts_with("far-hierarchical,distance_m,0.5,2,"));
    assert!(csv.lines().nth(1).unwrap().ends_with(",9"));
    let resolved = read(dir.path(), "f/config.resolved.toml");
    assert!(resolved.contains("trials = 2"));
    assert!(resolved.contains("seed = 9"));
}

#[test]
fn snr_sweep_hits_the_exact_target() {
    let dir = tempfile::tempdir().unwrap();
    let config = "\
sweep = \"snr\"
snr_grid_db = [20.0]
snr_distance_m = 40.0
engines = \"perfect-csi\"
trials = 2
";
    let out = run_in(dir.path(), Some(config), &["sweep", "--out", "s"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = read(dir.path(), "s/results.csv");
    // log2(1 + 100) for every trial at exactly 20 dB.
    assert!(csv.lines().nth(1).unwrap().starts_with("perfect-csi,gamma_db,20,2,1,6.65821"));
}

#[test]
fn antennas_sweep_tracks_the_array_size() {
    let dir = tempfile::tempdir().unwrap();
    let config = "\
sweep = \"antennas\"
antennas_grid = [16]
engines = \"far-hierarchical\"
trials = 2
noiseless = true
";
    let out = run_in(dir.path(), Some(config), &["sweep", "--out", "a"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let line = read(dir.path(), "a/results.csv");
    let line = line.lines().nth(1).unwrap();
    assert!(line.starts_with("far-hierarchical,antennas,16,2,"));
    assert!(line.ends_with(",8,1"));
}
