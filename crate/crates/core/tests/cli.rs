use std::path::Path;
use std::process::{Command, Output};

fn converge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_converge"))
        .args(args)
        .env_remove("CONVERGE_THREADS")
        .output()
        .expect("binary runs")
}

fn data(rel: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("data")
        .join(rel)
        .display()
        .to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", stdout(o)))
}

#[test]
fn examples_table_passes_rule_check() {
    let o = converge(&["examples"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(text.lines().filter(|l| l.starts_with("ex")).count(), 4);
    assert!(text.contains("rule check: ok"));

    let o = converge(&["examples", "--json"]);
    let v = json(&o);
    assert_eq!(v["examples"].as_array().unwrap().len(), 4);
    assert_eq!(v["examples"][1]["expected"]["CA"], "yes");
    assert!(v["rule_violations"].as_array().unwrap().is_empty());
}

#[test]
fn simulate_prints_csv() {
    let o = converge(&["simulate", "ex2", "--k0", "-3", "--xi", "4", "--steps", "3"]);
    assert_eq!(o.status.code(), Some(0));
    let mut rdr = csv::Reader::from_reader(o.stdout.as_slice());
    assert_eq!(rdr.headers().unwrap(), vec!["k", "x1"]);
    let rows: Vec<(i64, f64)> = rdr.deserialize().map(|r| r.unwrap()).collect();
    // x(k+1) = -k/2 - 1 + x/2 from (−3, 4).
    assert_eq!(rows, vec![(-3, 4.0), (-2, 2.5), (-1, 1.25), (0, 0.125)]);

    let o = converge(&["simulate", &data("systems/lti2.dsys"), "--xi", "1,1", "--steps", "1"]);
    assert!(stdout(&o).lines().nth(2).unwrap().starts_with("1,9e-1,5e-1"));
}

#[test]
fn matching_run_exits_zero() {
    let o = converge(&["run", "--system", "ex1", "--property", "incremental", "--budget", "500"]);
    assert_eq!(o.status.code(), Some(0));
    let v = json(&o);
    assert_eq!(v["status"], "falsified");
    assert_eq!(v["expectation"]["result"], "MATCH");
    assert!(v["sections"][0]["data"]["envelope"]["csv"]
        .as_str()
        .unwrap()
        .starts_with("s_bucket,lag,max_sep"));
}

#[test]
fn failed_certification_exits_one() {
    let o = converge(&[
        "run",
        "--system",
        "ex2",
        "--property",
        "contraction",
        "--set",
        "metric=\"identity\"",
    ]);
    assert_eq!(o.status.code(), Some(0));

    // A user system has no registry row, so a falsified contraction request
    // is a failure of the run.
    let dir = tempfile::tempdir().unwrap();
    let sys = dir.path().join("doubling.dsys");
    std::fs::write(&sys, "dim 1\nname doubling\nf1 = 2*x1\n").unwrap();
    let o = converge(&[
        "run",
        "--system",
        sys.to_str().unwrap(),
        "--property",
        "contraction",
        "--set",
        "metric=\"identity\"",
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    assert_eq!(json(&o)["status"], "falsified");

    // The same system under a non-certifying property only reports.
    let o = converge(&["run", "--system", sys.to_str().unwrap(), "--property", "incremental"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(json(&o)["status"], "falsified");
}

#[test]
fn mismatch_exits_one() {
    // ex2 is marked contracting but declares no metric, so asking for the
    // declared one fails and the run contradicts the registry row.
    let o = converge(&[
        "run",
        "--system",
        "ex2",
        "--property",
        "contraction",
        "--set",
        "metric=\"expression\"",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let v = json(&o);
    assert_eq!(v["expectation"]["result"], "MISMATCH");
    assert_eq!(v["expectation"]["observed"], "no");

    // Probes that never agree leave the convergence question open; that is
    // a match for a row marked yes, not a mismatch.
    let o = converge(&[
        "run",
        "--system",
        "ex3",
        "--property",
        "convergent",
        "--set",
        "washout=5",
        "--set",
        "ref_tol=1e-12",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(json(&o)["status"], "inconclusive");
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(
        converge(&["run", "--system", "ex1", "--property", "stability"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(converge(&["run", "--property", "incremental"]).status.code(), Some(2));
    assert_eq!(
        converge(&["run", "--system", "nowhere.dsys", "--property", "incremental"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        converge(&["run", "--system", "ex1", "--property", "incremental", "--set", "radius"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(converge(&["frobnicate"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "system = \"ex1\"\nproperty = \"incremental\"\nbudjet = 4\n").unwrap();
    let o = converge(&["run", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("budjet"));

    let sys = dir.path().join("bad.dsys");
    std::fs::write(&sys, "dim 1\nf1 = x1 +\n").unwrap();
    assert_eq!(converge(&["simulate", sys.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn config_files_and_side_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ex1.json");
    let plot = dir.path().join("ex1.gp");
    let o = converge(&[
        "run",
        &data("configs/ex1_incremental.cfg"),
        "--out",
        out.to_str().unwrap(),
        "--emit-gnuplot",
        plot.to_str().unwrap(),
        "--threads",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("MATCH"));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["config"]["seed"], 7);
    let side = report["side_files"][0].as_str().unwrap();
    let csv = std::fs::read_to_string(dir.path().join(side)).unwrap();
    assert!(csv.starts_with("s_bucket,lag,max_sep\n"));
    let script = std::fs::read_to_string(&plot).unwrap();
    assert!(script.contains(&dir.path().join(side).display().to_string()));

    // Without a report file there is nothing for the script to plot.
    let o = converge(&[
        "run",
        &data("configs/ex1_incremental.cfg"),
        "--emit-gnuplot",
        plot.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn flags_override_config() {
    let o = converge(&[
        "run",
        &data("configs/ex1_incremental.cfg"),
        "--seed",
        "99",
        "--set",
        "horizon=4",
    ]);
    let v = json(&o);
    assert_eq!(v["config"]["seed"], 99);
    assert_eq!(v["config"]["horizon"], 4);
    assert_eq!(v["config"]["budget"], 2000);
}

#[test]
fn check_lyapunov_subcommand() {
    let o = converge(&[
        "check-lyapunov",
        "ex1",
        &data("candidates/ex1_norm.lyap"),
        "--set",
        "radius=1000",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(json(&o)["status"], "certified");

    let o = converge(&[
        "check-lyapunov",
        &data("systems/affine.dsys"),
        &data("candidates/affine_naive.lyap"),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let v = json(&o);
    assert_eq!(v["status"], "falsified");
    assert!(v["sections"][0]["verdict"]["witness"].is_object());
}

#[test]
fn thread_count_does_not_change_output() {
    let run = |threads: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_converge"))
            .args([
                "run",
                "--system",
                "ex3",
                "--property",
                "convergent",
                "--set",
                "samples=256",
            ])
            .env("CONVERGE_THREADS", threads)
            .output()
            .unwrap();
        let mut v = json(&o);
        v.as_object_mut().unwrap().remove("elapsed_ms");
        v
    };
    assert_eq!(run("1"), run("4"));
}
