use std::path::Path;
use std::process::{Command, Output};

fn ridg(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ridg"))
        .args(args)
        .env_remove("RIDG_OUTPUT_DIR")
        .env_remove("RIDG_THREADS")
        .env("RIDG_OUTPUT_DIR", out)
        .output()
        .expect("binary runs")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

#[test]
fn run_writes_csv_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = ridg(&["run", "--problem", "adv1d", "--mdeg", "2", "--mesh", "20", "--final-time", "0.2"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
    assert!(text(&o.stdout).contains("RIDG Mdeg=2"));
    let csv = std::fs::read_to_string(dir.path().join("run.csv")).unwrap();
    assert!(csv.starts_with("scheme,Mdeg,nu,mesh,dof,efom,error,order"));
}

#[test]
fn flags_override_the_config_file_and_the_environment_sets_the_output() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("exp.toml");
    std::fs::write(&manifest, "problem = \"adv2d\"\nmdeg = 1\nnu = 0.5\nmesh = 8\n").unwrap();
    let o = ridg(&["run", "--config", manifest.to_str().unwrap(), "--nu", "0.6", "--print-config"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let cfg = text(&o.stdout);
    assert!(cfg.contains("problem = \"adv2d\""), "{cfg}");
    assert!(cfg.contains("nu = 0.6"));
    assert!(cfg.contains("mdeg = 1"));
    assert!(cfg.contains(&format!("output = \"{}\"", dir.path().display())));
    // nothing was computed
    assert!(!dir.path().join("run.csv").exists());
}

#[test]
fn invalid_input_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = ridg(&["run", "--nu", "-1"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o.stderr).contains("nu"));
    assert_eq!(ridg(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(ridg(&["run", "--problem", "euler"], dir.path()).status.code(), Some(1));
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "mehs = 3\n").unwrap();
    assert_eq!(ridg(&["run", "--config", bad.to_str().unwrap()], dir.path()).status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = ridg(&["--help"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    for sub in ["run", "convergence", "scaling", "stability", "bench-assembly"] {
        assert!(text(&o.stdout).contains(sub), "{sub}");
    }
}

#[test]
fn instability_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = ridg(&["run", "--scheme", "rkdg", "--mdeg", "3", "--nu", "0.9", "--mesh", "50"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", text(&o.stderr));
    assert!(text(&o.stderr).contains("instability"));
}

#[test]
fn convergence_and_stability_studies() {
    let dir = tempfile::tempdir().unwrap();
    let o = ridg(&["convergence", "--mdeg", "2", "--meshes", "10,20", "--emit-plots"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
    assert!(text(&o.stdout).contains("fitted order"));
    assert!(dir.path().join("convergence.csv").exists());
    assert!(dir.path().join("convergence.dat").exists());

    let o = ridg(
        &["stability", "--scheme", "rkdg", "--mdeg", "3", "--mesh", "50", "--nus", "0.1,0.9", "--final-time", "0.05"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("stability.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn scaling_study_reports_per_task_counters() {
    let dir = tempfile::tempdir().unwrap();
    let o = ridg(
        &["scaling", "--problem", "adv2d", "--mdeg", "1", "--nu", "0.7", "--mesh", "12", "--task-counts", "1,4", "--final-time", "0.02"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
    let tasks = std::fs::read_to_string(dir.path().join("scaling_tasks.csv")).unwrap();
    // header, one row for the single task, four for the split run
    assert_eq!(tasks.lines().count(), 6);
}

#[test]
fn bench_assembly_accepts_order_ranges() {
    let dir = tempfile::tempdir().unwrap();
    let o = ridg(&["bench-assembly", "--dim", "1", "--orders", "2..=3"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("bench_assembly.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 3);
}
