use std::path::Path;
use std::process::{Command, Output};

use seqpred::scenarios::{builtin, run_scenario};

fn seqpred(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqpred"))
        .args(args)
        .env_remove("RP_SEED")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn list_names_every_builtin() {
    let o = seqpred(&["list"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for name in ["pendulum-sf-d2", "pendulum-sf-d4", "pendulum-of-d1t1", "scalar-iss", "strict-feedback-demo"] {
        assert!(text.contains(name), "{name} missing");
    }
}

#[test]
fn chain_length_examples() {
    let run = |args: &[&str]| {
        let mut full = vec!["chain-length"];
        full.extend(args);
        seqpred(&full)
    };
    let o = run(&["--lipschitz", "1", "--epsilon", "0.3", "--delay", "2"]);
    assert_eq!((o.status.code(), stdout(&o).trim()), (Some(0), "4"));
    let o = run(&["--output-feedback", "--lipschitz", "1.5", "--lipschitz-h", "1", "--epsilon", "0.1", "--delay", "2"]);
    assert_eq!((o.status.code(), stdout(&o).trim()), (Some(0), "20"));
    let o = run(&["--lipschitz", "1", "--epsilon", "0.3", "--delay", "0"]);
    assert_eq!(stdout(&o).trim(), "1");
    let o = run(&["--lipschitz", "1", "--epsilon", "1.5", "--delay", "2"]);
    assert_eq!(o.status.code(), Some(1));
    // output feedback needs L_h
    let o = run(&["--output-feedback", "--lipschitz", "1.5", "--epsilon", "0.1", "--delay", "2"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(seqpred(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(seqpred(&["chain-length", "--lipschitz", "x"]).status.code(), Some(1));
    assert_eq!(seqpred(&["--help"]).status.code(), Some(0));
}

#[test]
fn halanay_rate_and_envelope() {
    let o = seqpred(&["halanay", "--a", "2", "--b", "1", "--delta", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let lambda: f64 = stdout(&o).trim().parse().unwrap();
    assert!((lambda - 0.44285).abs() < 1e-5);

    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, rate: f64| {
        let path = dir.path().join(name);
        let mut text = String::from("t,w\n");
        for k in -100..=1000 {
            let t = k as f64 * 0.01;
            text.push_str(&format!("{t},{}\n", (-rate * t.max(0.0)).exp()));
        }
        std::fs::write(&path, text).unwrap();
        path
    };
    let fast = write("fast.csv", 0.5);
    let o = seqpred(&["halanay", "--a", "2", "--b", "1", "--delta", "1", "--csv", fast.to_str().unwrap(), "--t0", "0"]);
    assert_eq!(o.status.code(), Some(0));
    let v = json(&o);
    assert_eq!(v["schema"], 1);
    assert_eq!(v["report"]["holds"], true);

    let slow = write("slow.csv", 0.3);
    let o = seqpred(&["halanay", "--a", "2", "--b", "1", "--delta", "1", "--csv", slow.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(json(&o)["report"]["holds"], false);

    let o = seqpred(&["halanay", "--a", "1", "--b", "2", "--delta", "1"]);
    assert_eq!(o.status.code(), Some(1));
}

fn parse_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(|v| v.parse::<f64>().unwrap()).collect())
        .collect();
    (header, rows)
}

#[test]
fn simulate_writes_exact_trace_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = seqpred(&["simulate", "--scenario", "pendulum-sf-d2", "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let (header, rows) = parse_csv(&dir.path().join("pendulum-sf-d2.trace.csv"));
    let expected = run_scenario(&builtin("pendulum-sf-d2").unwrap()).unwrap().trace;
    assert_eq!(header, expected.header());
    assert_eq!(rows.len(), expected.len());
    assert_eq!(header[..3], ["t", "x.1", "x.2"]);
    for (r, row) in rows.iter().enumerate() {
        let mut want = vec![expected.times[r]];
        for c in &expected.channels {
            want.extend(c.row(r));
        }
        assert_eq!(row.len(), want.len());
        for (a, b) in row.iter().zip(&want) {
            assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()), "row {r}: {a} vs {b}");
        }
    }

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("pendulum-sf-d2.report.json")).unwrap()).unwrap();
    assert_eq!(report["schema"], 1);
    assert_eq!(report["report"]["passed"], true);
    assert_eq!(report["report"]["chain_length"], 4);
    assert_eq!(report["scenario"]["name"], "pendulum-sf-d2");
}

#[test]
fn simulate_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = seqpred(&["simulate", "--scenario", "nope", "--out", out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("pendulum-sf-d2"));

    let o = seqpred(&["simulate", "--scenario", "pendulum-sf-d2", "--override", "predictor.m=3", "--out", out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("3.38"), "{}", stderr(&o));

    let o = seqpred(&["simulate", "--scenario", "pendulum-sf-d2", "--step", "0.3", "--out", out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(std::fs::read_dir(dir.path()).unwrap().next().is_none());
}

#[test]
fn simulate_from_file_with_flags() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("short.toml");
    let mut s = builtin("strict-feedback-demo").unwrap();
    s.name = "short".into();
    std::fs::write(&file, s.to_toml()).unwrap();
    let o = seqpred(&[
        "simulate",
        "--scenario",
        file.to_str().unwrap(),
        "--t-end",
        "5",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    // five seconds is too short to settle, so the checks fail
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let (_, rows) = parse_csv(&dir.path().join("short.trace.csv"));
    assert_eq!(rows.last().unwrap()[0], 5.0);
}

#[test]
fn simulate_all_in_parallel() {
    let dir = tempfile::tempdir().unwrap();
    let o = seqpred(&["simulate", "--all", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let files = std::fs::read_dir(dir.path()).unwrap().count();
    assert_eq!(files, 10);
}

#[test]
fn verify_outputs() {
    let o = seqpred(&["verify", "--scenario", "scalar-iss"]);
    let v = json(&o);
    assert_eq!(v["schema"], 1);
    assert_eq!(v["seed"], 0);
    assert_eq!(v["checks"]["iss"]["passed"], true);
    assert_eq!(v["lipschitz"]["passed"], true);
    assert_eq!(o.status.code(), Some(0));

    let o = seqpred(&["verify", "--scenario", "pendulum-of-d1t1", "--samples", "200"]);
    let v = json(&o);
    assert_eq!(v["observer_lipschitz"]["informational"], true);
    assert_eq!(v["checks"]["gas"]["passed"], true);
}

#[test]
fn verify_flags_understated_constant() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("tampered.toml");
    std::fs::write(
        &file,
        r#"
name = "tampered"

[plant]
kind = "linear_scalar"
current = -1.0
input = 1.0
input_delay = 0.5
lipschitz_f = 0.01

[controller]
kind = "open-loop"

[integrator]
step = 0.01
t_end = 20.0
record_stride = 10

[initial]
plant = [1.0]

[checks.gas]
settle_fraction = 0.05
horizon_fraction = 0.1
"#,
    )
    .unwrap();
    let o = seqpred(&["verify", "--scenario", file.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let v = json(&o);
    assert_eq!(v["lipschitz"]["f"]["passed"], false);
    assert_eq!(v["checks"]["passed"], true);
}

#[test]
fn verify_seed_from_environment() {
    let run = |seed: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_seqpred"))
            .args(["verify", "--scenario", "scalar-iss", "--samples", "300"])
            .env("RP_SEED", seed)
            .output()
            .unwrap();
        (o.status.code(), json(&o))
    };
    let (code, a) = run("17");
    assert_eq!(code, Some(0));
    assert_eq!(a["seed"], 17);
    let (_, b) = run("17");
    assert_eq!(a["lipschitz"], b["lipschitz"]);
    let o = Command::new(env!("CARGO_BIN_EXE_seqpred"))
        .args(["verify", "--scenario", "scalar-iss"])
        .env("RP_SEED", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn verify_pendulum_samples_exceed_declared_constant() {
    // the declared L_f = 1 is below the sampled ratio near the delayed damping term
    let o = seqpred(&["verify", "--scenario", "pendulum-sf-d2"]);
    assert_eq!(o.status.code(), Some(2));
    let v = json(&o);
    assert_eq!(v["lipschitz"]["f"]["passed"], false);
    assert!(v["lipschitz"]["f"]["max_ratio"].as_f64().unwrap() > 1.0);
    assert_eq!(v["checks"]["passed"], true);
}
