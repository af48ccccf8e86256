use std::path::Path;
use std::process::{Command, Output};

use commopt::trace::Trace;

const SYNTH: &str = r#"
[problem]
kind = "synthetic"
clients = 4
per_client = 10
dim = 3
data_seed = 1
mu = 0.1
"#;

fn commopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_commopt")).args(args).output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("exp.toml");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_efbv_writes_one_trace_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!("algorithm = \"efbv\"\nrounds = 20\nseeds = [3, 4, 5]\noutput = \"out\"\n{SYNTH}\n[efbv]\ncompressor = \"comp:k=1,kp=2\"\n"),
    );
    let o = commopt(&["run-efbv", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let paths: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(paths.len(), 3);
    let seeds: Vec<u64> = paths.iter().map(|p| Trace::read(p).unwrap().meta.seed).collect();
    assert_eq!(seeds, vec![3, 4, 5]);
    assert!(dir.path().join("out").join("efbv_seed4.csv").exists());
}

#[test]
fn unknown_algorithm_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("algorithm = \"adam\"\nrounds = 5\nseeds = [0]\n{SYNTH}"));
    let o = commopt(&["run-efbv", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("algorithm"));
}

#[test]
fn wrong_subcommand_and_bad_values_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!("algorithm = \"scafflix\"\nrounds = 5\nseeds = [0]\n{SYNTH}\n[scafflix]\nalpha = 0.5\np = 1.5\n"),
    );
    assert_eq!(commopt(&["run-efbv", "--config", &cfg]).status.code(), Some(2));
    assert_eq!(commopt(&["run-scafflix", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn divergence_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!("algorithm = \"diana\"\nrounds = 500\nseeds = [0]\n{SYNTH}\n[efbv]\ncompressor = \"rand_k:k=1\"\ngamma = 1000.0\n"),
    );
    let o = commopt(&["run-efbv", "--config", &cfg, "--output", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn sweep_prints_one_row_per_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!(
            "algorithm = \"sppm_as\"\nrounds = 60\nseeds = [0, 1]\ntarget = 1e-4\n{SYNTH}\n[sppm]\ngamma = 5.0\nsampling = {{ kind = \"full\" }}\nsolver = {{ kind = \"gradient_descent\", K = 1 }}\n"
        ),
    );
    let csv = dir.path().join("table.csv");
    let o = commopt(&["sweep", "--config", &cfg, "--param", "K=1,2,4", "--out", csv.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 4);
    assert_eq!(std::fs::read_to_string(csv).unwrap(), text);
    assert_eq!(commopt(&["sweep", "--config", &cfg, "--param", "K="]).status.code(), Some(2));
}

#[test]
fn certify_compressor_reports_the_certificate() {
    let o = commopt(&["certify-compressor", "--kind", "comp:k=1,kp=56", "--dim", "112", "--trials", "200"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("omega 55\n"), "{text}");
    assert!(text.contains("violations 0"));
    assert_eq!(commopt(&["certify-compressor", "--kind", "rand_k:k=9", "--dim", "4"]).status.code(), Some(2));
}

#[test]
fn stats_prints_the_unit_cross_counterexample() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "algorithm = \"sppm_as\"\nrounds = 1\nseeds = [0]\n[problem]\nkind = \"unit_cross\"\n[sppm]\ngamma = 1.0\nsampling = { kind = \"nice\", tau = 2 }\n",
    );
    let o = commopt(&["stats", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let sigma: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("sigma_star_as_sq "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((sigma - 1.0 / 3.0).abs() < 1e-12, "{text}");
}
