use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
[model]
kind = 2

[graphs]
spatial = "grid:4x4"
response = "complete:2"

[mcmc]
iterations = 400
burn_in = 200
seed = 11

[io]
data = "data.csv"
out_dir = "."

[truth]
beta = [-1.0, -0.5]
exposure = 100
likelihood = "binlogit"

[truth.hyper]
rho = 0.8
omega = [[1.0, 0.4], [0.4, 1.0]]
"#;

fn gmcar(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gmcar"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn graph_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = gmcar(
        dir.path(),
        &["graph", "--spatial", "path:2", "--response", "path:2", "--out-dir", "g"],
    );
    assert!(out.status.success());
    assert!(stdout(&out).starts_with("4 vertices, 6 edges"));
    assert_eq!(
        fs::read_to_string(dir.path().join("g/joint_edges.txt"))
            .unwrap()
            .lines()
            .count(),
        7
    );

    let out = gmcar(
        dir.path(),
        &["graph", "--spatial", "grid:5x23", "--response", "complete:5"],
    );
    assert!(stdout(&out).starts_with("575 vertices"));

    let out = gmcar(
        dir.path(),
        &[
            "graph",
            "--spatial",
            "path:3",
            "--response",
            "complete:3",
            "--variant",
            "spatial",
        ],
    );
    assert!(stdout(&out).contains("components: 3"));
}

#[test]
fn graph_parse_error_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.txt"), "# vertices 3\n1 2\n2 x\n").unwrap();
    let out = gmcar(dir.path(), &["graph", "--spatial", "bad.txt", "--response", "path:2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn simulate_fit_compare_summarize() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
    let out = gmcar(dir.path(), &["simulate", "--config", "run.toml"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let data = fs::read_to_string(dir.path().join("data.csv")).unwrap();
    assert!(data.starts_with("# config_hash="));
    assert_eq!(data.lines().count(), 2 + 32);

    let out = gmcar(dir.path(), &["fit", "--config", "run.toml", "--out-dir", "m2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("DIC"));
    for f in [
        "samples.csv",
        "summary.csv",
        "u_means.csv",
        "deviance.csv",
        "dic.csv",
        "checkpoint.json",
    ] {
        assert!(dir.path().join("m2").join(f).exists(), "{f}");
    }
    let u_means = fs::read_to_string(dir.path().join("m2/u_means.csv")).unwrap();
    assert!(u_means.lines().nth(1).unwrap().starts_with("unit,response,mean,sd"));

    let out = gmcar(
        dir.path(),
        &["fit", "--config", "run.toml", "--model", "3", "--out-dir", "m3"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = gmcar(dir.path(), &["compare", "m2/dic.csv", "m3/dic.csv"]);
    assert!(out.status.success());
    let table = stdout(&out);
    assert!(table.starts_with("model"));
    assert_eq!(table.lines().count(), 3);

    let out = gmcar(dir.path(), &["compare", "m2/dic.csv"]);
    assert_eq!(out.status.code(), Some(2));

    let out = gmcar(dir.path(), &["summarize", "m2/samples.csv", "--out", "s.csv"]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("rho"));
    assert!(fs::read_to_string(dir.path().join("s.csv"))
        .unwrap()
        .starts_with("# config_hash="));
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
    assert!(gmcar(dir.path(), &["simulate", "--config", "run.toml"])
        .status
        .success());
    for out_dir in ["a", "b"] {
        let out = gmcar(
            dir.path(),
            &["fit", "--config", "run.toml", "--chains", "2", "--out-dir", out_dir],
        );
        assert!(out.status.success());
    }
    for f in ["samples.csv", "dic.csv", "checkpoint.json"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(f)).unwrap(),
            fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    let out = gmcar(
        dir.path(),
        &["fit", "--config", "run.toml", "--seed", "12", "--out-dir", "c"],
    );
    assert!(out.status.success());
    assert_ne!(
        fs::read(dir.path().join("a/samples.csv")).unwrap(),
        fs::read(dir.path().join("c/samples.csv")).unwrap()
    );
}

#[test]
fn resume_continues_chain() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
    assert!(gmcar(dir.path(), &["simulate", "--config", "run.toml"])
        .status
        .success());
    assert!(
        gmcar(dir.path(), &["fit", "--config", "run.toml", "--out-dir", "first"])
            .status
            .success()
    );
    fs::write(
        dir.path().join("long.toml"),
        CONFIG.replace("iterations = 400", "iterations = 600"),
    )
    .unwrap();
    let out = gmcar(
        dir.path(),
        &[
            "fit",
            "--config",
            "long.toml",
            "--resume",
            "first/checkpoint.json",
            "--out-dir",
            "resumed",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(
        gmcar(dir.path(), &["fit", "--config", "long.toml", "--out-dir", "direct"])
            .status
            .success()
    );
    let body = |p: &str| -> Vec<String> {
        fs::read_to_string(dir.path().join(p))
            .unwrap()
            .lines()
            .skip(2)
            .map(str::to_string)
            .collect()
    };
    let resumed = body("resumed/samples.csv");
    let direct = body("direct/samples.csv");
    assert_eq!(resumed.len(), 200);
    assert_eq!(resumed[..], direct[200..]);
}

#[test]
fn validation_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), CONFIG.replace("rho = 0.8", "rho = 1.5")).unwrap();
    let out = gmcar(dir.path(), &["simulate", "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rho"));

    fs::write(
        dir.path().join("fixed.toml"),
        CONFIG
            .replace("kind = 2", "kind = 1")
            .replace("[truth]", "[fixed]\ndelta = 1.0\nlambda = 1.5\n\n[truth]"),
    )
    .unwrap();
    fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
    assert!(gmcar(dir.path(), &["simulate", "--config", "run.toml"])
        .status
        .success());
    let out = gmcar(dir.path(), &["fit", "--config", "fixed.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda"));

    let out = gmcar(dir.path(), &["fit", "--config", "run.toml", "--model", "7"]);
    assert_eq!(out.status.code(), Some(2));
}
