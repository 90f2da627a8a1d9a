use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(name)
}

fn teleop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_teleop"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn teleop")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_model_reports_limbs() {
    let o = teleop(&[
        "validate-model",
        s(&fixture("table_dual_arm7.urdf")),
        "--limbs",
        s(&fixture("table_follower.toml")),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("2 limb(s)"));
    assert!(out.contains("limb 'left'") && out.contains("limb 'right'"));
    assert!(out.contains("7 dof"));
    assert!(out.contains("collision free"));
}

#[test]
fn validate_model_reads_puppeteer_limbs() {
    let o = teleop(&[
        "validate-model",
        s(&fixture("ur5_puppeteer.urdf")),
        "--limbs",
        s(&fixture("ur5_leader.toml")),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("6 dof"));
}

#[test]
fn validate_model_rejects_wrong_tip() {
    let dir = tempfile::tempdir().unwrap();
    let limbs = dir.path().join("limbs.toml");
    std::fs::write(
        &limbs,
        "[[limbs]]\nname = \"arm\"\nbase_link = \"base\"\ntip_link = \"nowhere\"\n",
    )
    .unwrap();
    let o = teleop(&[
        "validate-model",
        s(&fixture("planar_2r.urdf")),
        "--limbs",
        s(&limbs),
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("nowhere"));
}

#[test]
fn bench_prints_percentiles_and_refuses_odd_limb_counts() {
    let o = teleop(&["bench", "--limbs", "2", "--mode", "eef", "--steps", "200"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    for key in ["mean", "p50", "p99", "max", "ik failures 0"] {
        assert!(out.contains(key), "{out}");
    }
    assert!(!teleop(&["bench", "--limbs", "3"]).status.success());
    assert!(!teleop(&["bench", "--mode", "cartesian"]).status.success());
    let bad_field = teleop(&[
        "run",
        "--leader",
        "l",
        "--follower",
        "f",
        "--env",
        "e",
        "--fields",
        "torque",
    ]);
    assert!(String::from_utf8_lossy(&bad_field.stderr).contains("q_cmd"));
}

#[test]
fn run_then_replay_reproduces_commands() {
    let dir = tempfile::tempdir().unwrap();
    let env = dir.path().join("env.toml");
    std::fs::write(
        &env,
        "backend = \"sim\"\nrealtime = false\napproach_min_seconds = 0.5\n",
    )
    .unwrap();
    let rec = dir.path().join("run.jsonl");
    let o = teleop(&[
        "run",
        "--leader",
        s(&fixture("ur5_leader.toml")),
        "--follower",
        s(&fixture("arm7_follower.toml")),
        "--env",
        s(&env),
        "--record",
        s(&rec),
        "--rate",
        "50",
        "--fields",
        "timestamp,command,q_cmd,T_cmd",
        "--no-serve",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("sessions completed: 1"), "{out}");
    assert!(out.contains("ik failures: 0"), "{out}");
    let text = std::fs::read_to_string(&rec).unwrap();
    let step: serde_json::Value = serde_json::from_str(text.lines().nth(1).unwrap()).unwrap();
    let mut keys: Vec<_> = step.as_object().unwrap().keys().cloned().collect();
    keys.sort();
    assert_eq!(keys, ["T_cmd", "command", "q_cmd", "timestamp"]);

    let again = dir.path().join("again.jsonl");
    let o = teleop(&[
        "replay",
        s(&rec),
        "--follower",
        s(&fixture("arm7_follower.toml")),
        "--record",
        s(&again),
        "--tolerance",
        "0",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("final state: Shutdown"), "{out}");
    assert!(out.contains("0.000e0 rad"), "{out}");
    assert!(again.exists());
}

#[test]
fn run_serves_the_console_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    let env = dir.path().join("env.toml");
    std::fs::write(&env, "backend = \"sim\"\nrealtime = true\n").unwrap();
    let o = teleop(&[
        "run",
        "--leader",
        s(&fixture("console_leader.toml")),
        "--follower",
        s(&fixture("table_follower.toml")),
        "--env",
        s(&env),
        "--port",
        "0",
        "--max-seconds",
        "0.5",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("console endpoint ws://127.0.0.1:"), "{out}");
    assert!(out.contains("sessions completed: 0"), "{out}");
}

#[test]
fn missing_config_is_an_error() {
    let o = teleop(&[
        "run",
        "--leader",
        "/nonexistent/leader.toml",
        "--follower",
        s(&fixture("arm7_follower.toml")),
        "--env",
        s(&fixture("sim_env.toml")),
        "--no-serve",
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("leader.toml"));
}
