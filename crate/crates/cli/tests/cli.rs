use std::path::PathBuf;
use std::process::{Command, Output};

fn rotvec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rotvec"))
        .args(args)
        .env_remove("ROTVEC_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("rotvec-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn rho_line(text: &str) -> Vec<f64> {
    let line = text.lines().find(|l| l.starts_with("rho = ")).expect("rho line");
    line.trim_start_matches("rho = (")
        .trim_end_matches(')')
        .split(", ")
        .map(|s| s.parse().unwrap())
        .collect()
}

#[test]
fn solve_constant_field() {
    let o = rotvec(&["solve", "--model", "constant", "--omega", "0.5,2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("rho = (0.5, 2)"), "{}", stdout(&o));
}

#[test]
fn rotvec_strong_circle() {
    let o = rotvec(&["rotvec", "--model", "circle", "--c", "2", "--eps", "1", "--horizon", "10000"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rho = rho_line(&stdout(&o));
    assert!((rho[0] - 3f64.sqrt()).abs() < 1e-4, "{rho:?}");
}

#[test]
fn smallness_violation_is_a_computation_failure() {
    let o = rotvec(&["solve", "--model", "circle", "--c", "2", "--eps", "0.9", "--gamma", "0.5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("smallness"), "{}", stderr(&o));
}

#[test]
fn configuration_errors_exit_2() {
    for args in [
        vec!["solve", "--model", "pendulum"],
        vec!["solve", "--model", "circle", "--c", "2"],
        vec!["rotvec", "--model", "circle", "--c", "2", "--eps", "x"],
        vec!["rotvec", "--model", "circle", "--c", "2", "--eps", "0.1", "--horizon", "10"],
        vec!["simulate", "--model", "constant", "--omega", "1", "--x0", "0,0"],
        vec!["rotvec", "--nonsense", "1"],
        vec!["frobnicate"],
    ] {
        let o = rotvec(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn config_file_with_flag_override() {
    let cfg = scratch("circle.cfg");
    std::fs::write(&cfg, "# weak circle\nmodel = circle\nc = 2\neps = 0.5\nhorizon = 2000\n").unwrap();
    let cfg = cfg.to_str().unwrap();
    let o = rotvec(&["rotvec", "--config", cfg, "--eps", "0"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(rho_line(&stdout(&o)), vec![2.0]);

    let bad = scratch("bad.cfg");
    std::fs::write(&bad, "model = circle\nc = 2\neps = 0.1\nhorizn = 100\n").unwrap();
    let o = rotvec(&["rotvec", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("horizn"), "{}", stderr(&o));
}

#[test]
fn csv_outputs_are_byte_identical_across_runs_and_thread_counts() {
    let a = scratch("tongue-a.csv");
    let b = scratch("tongue-b.csv");
    let args = ["tongue", "--n1", "9", "--n2", "4", "--horizon", "500"];
    let o = rotvec(&[&args[..], &["--threads", "1", "--output", a.to_str().unwrap()]].concat());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = Command::new(env!("CARGO_BIN_EXE_rotvec"))
        .args(args)
        .args(["--output", b.to_str().unwrap()])
        .env("ROTVEC_THREADS", "3")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let (a, b) = (std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("param1,param2,rho_1,locked\n"));
    assert_eq!(text.lines().count(), 1 + 9 * 4);
}

#[test]
fn bad_thread_env_is_a_config_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_rotvec"))
        .args(["simulate", "--model", "constant", "--omega", "1"])
        .env("ROTVEC_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_writes_trajectory() {
    let path = scratch("traj.csv");
    let o = rotvec(&[
        "simulate",
        "--model",
        "constant",
        "--omega",
        "0.5,2",
        "--t1",
        "4",
        "--output",
        path.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("x(4) = (2, 8)"), "{}", stdout(&o));
    let csv = std::fs::read_to_string(path).unwrap();
    assert!(csv.lines().next().unwrap().starts_with('t'));
}

#[test]
fn psi_methods_agree() {
    let common = [
        "psi", "--model", "circle", "--c", "2", "--eps", "0.3", "--rho", "1.98", "--t-max", "20", "--dt", "5",
    ];
    let q = rotvec(&common);
    let o = rotvec(&[&common[..], &["--method", "ode"]].concat());
    assert_eq!(q.status.code(), Some(0), "{}", stderr(&q));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let parse = |text: String| -> Vec<Vec<f64>> {
        text.lines()
            .skip(1)
            .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
            .collect()
    };
    let (q, o) = (parse(stdout(&q)), parse(stdout(&o)));
    assert_eq!(q.len(), 5);
    for (a, b) in q.iter().zip(&o) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-8, "{a:?} vs {b:?}");
        }
    }
}

#[test]
fn riccati_reports_hypotheses_and_json() {
    let json = scratch("riccati.json");
    let o = rotvec(&["riccati", "--seed", "1", "--json", json.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("H1: PASS") && text.contains("H2: PASS"), "{text}");
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(v["hypotheses"]["passed"], true);

    let o = rotvec(&["riccati", "--system", "constant", "--a", "0", "--b", "0.1", "--gamma", "0.1"]);
    assert!(stdout(&o).contains("H1: FAIL"), "{}", stdout(&o));
}

#[test]
fn leader_on_exact_solution() {
    let o = rotvec(&[
        "leader",
        "--model",
        "constant",
        "--omega",
        "1,2",
        "--x0",
        "0.1,0.2",
        "--horizon",
        "500",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(
        text.contains("leader trajectory: PASS") && text.contains("distance to the flow: PASS"),
        "{text}"
    );
}

#[test]
fn selftest_passes() {
    let o = rotvec(&["selftest"]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("17 of 17 checks passed"));
}
