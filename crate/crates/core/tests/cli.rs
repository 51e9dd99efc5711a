use std::fs;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nhnewmark"))
}

#[test]
fn simulate_writes_trajectory_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("particle.csv");
    let status = bin()
        .args(["simulate", "--system", "particle", "--method", "newmark", "--h", "0.2", "--t-final", "2"])
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let csv = fs::read_to_string(&out).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "t,q1,q2,q3,v1,v2,v3,energy,res1,newton_iters");
    assert_eq!(lines.next().unwrap(), "0,1,1,-1,1,-1,1,1.5,0,0");
    assert_eq!(csv.lines().count(), 12);
}

#[test]
fn simulate_to_stdout_is_deterministic() {
    let run = || {
        bin()
            .args(["simulate", "--system", "cvt", "--epsilon", "0.1", "--method", "psi", "--h", "0.05", "--t-final", "1"])
            .output()
            .unwrap()
    };
    let a = run();
    let b = run();
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert!(String::from_utf8(a.stdout).unwrap().starts_with("t,q1,q2,q3,v1,v2,v3,energy,res1,newton_iters\n"));
}

#[test]
fn ill_conditioned_spec_exits_with_3() {
    let out = bin()
        .args(["simulate", "--beta", "0.25", "--beta-prime", "0.25"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(out.stdout.is_empty());
}

#[test]
fn bad_arguments_exit_with_3() {
    for args in [
        vec!["simulate", "--system", "pendulum"],
        vec!["simulate", "--method", "bogus"],
        vec!["simulate", "--h", "0"],
        vec!["simulate", "--h", "0.5", "--t-final", "0.1"],
        vec!["simulate", "--q0", "1,2,3"],
        vec!["simulate", "--q0", "1,2", "--v0", "1,2"],
        vec!["frobnicate"],
    ] {
        let out = bin().args(&args).output().unwrap();
        assert_eq!(out.status.code(), Some(3), "{args:?}");
    }
}

#[test]
fn rk4_accepts_any_beta() {
    let out = bin()
        .args(["simulate", "--method", "rk4", "--beta", "0.25", "--beta-prime", "0.25", "--t-final", "0.5"])
        .output()
        .unwrap();
    assert!(out.status.success());
}

#[test]
fn solver_failure_exits_with_2_and_keeps_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("blowup.csv");
    let status = bin()
        .args([
            "simulate", "--system", "chaotic", "--method", "newmark", "--h", "50", "--t-final", "500", "--q0",
            "1,0,1,-1,-1", "--v0", "30,0,0,0,-30",
        ])
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    let csv = fs::read_to_string(&out).unwrap();
    assert!(csv.lines().count() >= 2, "header and initial row survive");
}

#[test]
fn convergence_reports_orders() {
    let out = bin()
        .args(["convergence", "--method", "psi", "--t-final", "1", "--h-list", "0.2,0.1,0.05"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "h,error,observed_order");
    assert_eq!(rows.len(), 4);
    assert!(rows[1].ends_with(','));
    let order: f64 = rows[3].rsplit(',').next().unwrap().parse().unwrap();
    assert!((1.8..=2.2).contains(&order));
}

#[test]
fn ensemble_writes_drift_and_variance() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("drift.csv");
    let status = bin()
        .args([
            "ensemble", "--system", "chaotic", "--method", "psi", "--beta", "0.1", "--beta-prime", "0.1", "--h", "0.2",
            "--t-final", "1", "--count", "4", "--seed", "9",
        ])
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let drift = fs::read_to_string(&out).unwrap();
    let variance = fs::read_to_string(dir.path().join("drift_variance.csv")).unwrap();
    assert_eq!(drift.lines().next().unwrap(), "t,traj1,traj2,traj3,traj4");
    assert_eq!(drift.lines().count(), 7);
    assert_eq!(variance.lines().next().unwrap(), "t,variance");
    assert_eq!(variance.lines().nth(1).unwrap(), "0,0");
}

#[test]
fn listings() {
    let systems = bin().arg("list-systems").output().unwrap();
    assert!(systems.status.success());
    let text = String::from_utf8(systems.stdout).unwrap();
    for name in ["particle", "chaotic", "cvt"] {
        assert!(text.lines().any(|l| l.starts_with(name)), "{name}");
    }
    let methods = bin().arg("list-methods").output().unwrap();
    let text = String::from_utf8(methods.stdout).unwrap();
    for name in ["newmark", "psi", "psi2h", "triple-jump", "rk4"] {
        assert!(text.lines().any(|l| l.split('\t').next() == Some(name)), "{name}");
    }
}
