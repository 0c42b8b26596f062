//! End-to-end checks of the binary: artifacts, overrides and exit codes.

use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gsb"))
}

fn workdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("gsb-cli-test-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(dir: &PathBuf, config: &str, extra: &[&str]) -> Output {
    let cfg_path = dir.join("config.toml");
    fs::write(&cfg_path, config).unwrap();
    bin()
        .arg("--config")
        .arg(&cfg_path)
        .arg("--out")
        .arg(dir.join("out"))
        .args(extra)
        .output()
        .unwrap()
}

const BOUND_CONFIG: &str = r#"
mode = "bound"

[family]
name = "exponential"
theta0 = [1.0]

[design]
d = 1
sizes = [10]

[bound]
variant = "cor42"
epsilon = 0.5

[norms]
sup = 1.0
d1 = 1.0
d2 = 1.0
d3 = 1.0
"#;

#[test]
fn bound_mode_reproduces_closed_form_and_is_byte_stable() {
    let dir = workdir("bound");
    let out = run(&dir, BOUND_CONFIG, &[]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let report = fs::read_to_string(dir.join("out/bound_report.txt")).unwrap();
    assert!(report.contains("variant: cor42"));
    assert!(report.contains("k1: 40.73400617738525"));
    assert!(report.contains("total: 14.596277788482343"));
    assert!(report.contains("term2_stated:"));

    // Identical config and seed give byte-identical reports.
    let first = report.clone();
    let out = run(&dir, BOUND_CONFIG, &[]);
    assert!(out.status.success());
    let second = fs::read_to_string(dir.join("out/bound_report.txt")).unwrap();
    assert_eq!(first, second);
}

#[test]
fn missing_theta0_is_a_config_error() {
    let dir = workdir("badcfg");
    let cfg = r#"
mode = "bound"

[family]
name = "exponential"

[design]
d = 1
sizes = [10]
"#;
    let out = run(&dir, cfg, &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("theta0"), "stderr: {err}");
    assert!(err.contains("line"), "expected a line-anchored message, got: {err}");
}

#[test]
fn out_of_domain_epsilon_is_a_numerical_error() {
    let dir = workdir("domain");
    let cfg = BOUND_CONFIG.replace("epsilon = 0.5", "epsilon = 1.5");
    let out = run(&dir, &cfg, &[]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn discard_threshold_breach_is_exit_4() {
    // Bernoulli at n_1 = 2 discards every all-equal prefix; with a near-zero
    // threshold that breaches quickly.
    let dir = workdir("mcfail");
    let cfg = r#"
mode = "bound"

[family]
name = "bernoulli"
theta0 = [0.0]

[design]
d = 1
sizes = [2, 12]

[bound]
variant = "thm31"
epsilon = 1.0

[norms]
sup = 1.0
d1 = 1.0
d2 = 1.0
d3 = 1.0

[mc]
replications = 2000
seed = 5
discard_threshold = 0.0001
"#;
    let out = run(&dir, cfg, &[]);
    assert_eq!(out.status.code(), Some(4), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn sweep_writes_csv_and_slope() {
    let dir = workdir("sweep");
    let cfg = r#"
mode = "sweep"

[family]
name = "exponential"
theta0 = [1.0]

[design]
d = 1
sizes = [50, 100]

[bound]
variant = "cor42"
epsilon = 0.5

[test_function]
kind = "cosine"
coeffs = [0.75, 0.75]

[mc]
replications = 4000
seed = 11

[sweep]
ns = [100, 400, 1600]
"#;
    let out = run(&dir, cfg, &[]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.join("out/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4, "header plus one row per n:\n{csv}");
    assert!(csv.starts_with("n,k1,k2,k3,c,eq2,"));
    let summary = fs::read_to_string(dir.join("out/sweep_summary.txt")).unwrap();
    assert!(summary.contains("bound_loglog_slope: -0.5"), "summary: {summary}");
}

#[test]
fn verify_mode_passes() {
    let dir = workdir("verify");
    let out = run(&dir, "mode = \"verify\"\n", &[]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    for check in [
        "block-identities",
        "smoother-norm",
        "mean-function-round-trip",
        "pair-diagnostic",
        "cross-path-consistency",
    ] {
        assert!(text.contains(&format!("PASS {check}")), "missing PASS for {check}: {text}");
    }
}

#[test]
fn mode_and_seed_overrides_apply() {
    let dir = workdir("override");
    // The config says bound, the flag forces kolmogorov using the same file.
    let cfg = format!(
        "{BOUND_CONFIG}\n[kolmogorov]\np = 2\nd_smooth = 0.25\n"
    );
    let out = run(&dir, &cfg, &["--mode", "kolmogorov"]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let report = fs::read_to_string(dir.join("out/kolmogorov_report.txt")).unwrap();
    assert!(report.contains("c2: 52.5"));
    assert!(report.contains("d_smooth: 0.25"));

    // Simulate with two different seeds gives different empirical means.
    let sim_cfg = r#"
mode = "simulate"

[family]
name = "exponential"
theta0 = [1.0]

[design]
d = 1
sizes = [40]

[bound]
variant = "cor42"
epsilon = 0.5

[test_function]
kind = "cosine"
coeffs = [1.0]

[mc]
replications = 2000
seed = 1
"#;
    let out1 = run(&dir, sim_cfg, &["--seed", "1"]);
    assert!(out1.status.success(), "stderr: {}", String::from_utf8_lossy(&out1.stderr));
    let rep1 = fs::read_to_string(dir.join("out/simulate_report.txt")).unwrap();
    let out2 = run(&dir, sim_cfg, &["--seed", "2"]);
    assert!(out2.status.success());
    let rep2 = fs::read_to_string(dir.join("out/simulate_report.txt")).unwrap();
    let mean = |r: &str| -> String {
        r.lines().find(|l| l.starts_with("empirical_h_mean:")).unwrap().to_string()
    };
    assert_ne!(mean(&rep1), mean(&rep2), "different seeds must move the estimate");
}
