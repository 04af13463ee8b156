use std::path::Path;
use std::process::{Command, Output};

fn willresp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_willresp")).args(args).output().unwrap()
}

fn write_full_response(path: &Path) {
    let mut text = String::from("unit_id,pi,y1,y2,y3\n");
    for k in 0..40 {
        text.push_str(&format!("{k},0.1,{},{}.5,{}\n", k % 7, k % 3, 1 + k % 5));
    }
    std::fs::write(path, text).unwrap();
}

fn simulate(dir: &Path, name: &str, threads: &str) -> String {
    let out = dir.join(name);
    let status = willresp(&[
        "simulate",
        "--setting",
        "synthetic",
        "--n",
        "60",
        "--M",
        "12",
        "--seed",
        "11",
        "--threads",
        threads,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    std::fs::read_to_string(out).unwrap()
}

#[test]
fn simulation_output_depends_only_on_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let first = simulate(dir.path(), "a.csv", "1");
    assert_eq!(first, simulate(dir.path(), "b.csv", "1"));
    assert_eq!(first, simulate(dir.path(), "c.csv", "3"));
    assert!(first.starts_with("estimator,B,RB,sqrt_var,MSE"));
}

#[test]
fn full_response_gives_identical_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("full.csv");
    write_full_response(&data);
    let out = willresp(&["estimate", "--data", data.to_str().unwrap(), "--item", "1"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let values: Vec<&str> = text
        .lines()
        .filter_map(|l| {
            let mut parts = l.split_whitespace();
            let name = parts.next()?;
            ["HT", "naive", "pq", "pq_true"].contains(&name).then(|| parts.next()).flatten()
        })
        .collect();
    assert_eq!(values.len(), 4, "{text}");
    assert!(values.iter().all(|v| *v == values[0]), "{text}");
}

#[test]
fn weights_file_has_one_column_per_item() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("full.csv");
    let out = dir.path().join("w.csv");
    write_full_response(&data);
    let status = willresp(&["weights", "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(status.status.success());
    let text = std::fs::read_to_string(out).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "unit_id,theta_hat,p_hat,q_hat_1,q_hat_2,q_hat_3,w3_1,w3_2,w3_3"
    );
    assert_eq!(text.lines().count(), 41);
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(willresp(&["estimate", "--bogus"]).status.code(), Some(2));
    assert_eq!(willresp(&[]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_one() {
    let out = willresp(&["estimate", "--data", "/nonexistent/survey.csv", "--item", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn out_of_range_item_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("full.csv");
    write_full_response(&data);
    assert_eq!(willresp(&["estimate", "--data", data.to_str().unwrap(), "--item", "9"]).status.code(), Some(1));
}
