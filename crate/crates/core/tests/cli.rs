use std::process::{Command, Output};

fn kbsa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kbsa"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn oracle_prints_portfolio_values() {
    let out = kbsa(&["oracle", "--problem", "portfolio"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("nu1 = 0.2989707"), "{text}");
    assert!(text.contains("lambda1 = 0.71841"), "{text}");
    assert!(text.contains("Analytic"));
}

#[test]
fn oracle_rejects_unknown_problem() {
    let out = kbsa(&["oracle", "--problem", "case9-cost1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn validate_accepts_presets() {
    let out = kbsa(&["validate", "--preset", "case1-cost1"]);
    assert!(out.status.success());
    assert!(stdout(&out).starts_with("ok: "));
}

#[test]
fn validate_names_the_broken_inequality() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cfg");
    std::fs::write(
        &path,
        "preset = case1-cost1\n# c and h decay too slowly\nschedule.c.e = 0.3\nschedule.h.e = 0.2\n",
    )
    .unwrap();
    let out = kbsa(&["validate", "--config", path.to_str().unwrap()]);
    assert!(!out.status.success());
    let text = stdout(&out);
    assert!(text.contains("violated: c + h < b/2 violated"), "{text}");

    let run = kbsa(&["optimize", "--config", path.to_str().unwrap(), "--iters", "100"]);
    assert!(!run.status.success());
    let forced = kbsa(&[
        "optimize",
        "--config",
        path.to_str().unwrap(),
        "--iters",
        "100",
        "--override-validation",
    ]);
    assert!(forced.status.success(), "{}", String::from_utf8_lossy(&forced.stderr));
}

#[test]
fn config_errors_carry_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cfg");
    std::fs::write(&path, "preset = portfolio\nn_iters = many\n").unwrap();
    let out = kbsa(&["bench", "--config", path.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn estimate_prints_summary_csv() {
    let out = kbsa(&[
        "estimate",
        "--preset",
        "portfolio",
        "--iters",
        "2000",
        "--checkpoints",
        "1000,2000",
        "--no-timing",
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("n,rel_err_lambda1,ermse_lambda1"));
    assert!(lines[1].starts_with("1000,"));
    assert!(lines[2].ends_with(",0"));
}

#[test]
fn bench_writes_reports_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = kbsa(&[
        "bench",
        "--preset",
        "case2-cost2",
        "--iters",
        "10000",
        "--reps",
        "3",
        "--no-timing",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["trace.csv", "summary.csv", "table.txt", "config.txt"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let saved = std::fs::read_to_string(dir.path().join("config.txt")).unwrap();
    assert!(saved.contains("replications = 3"));
    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(trace.lines().count() - 1, 3 * (summary.lines().count() - 1));
    assert!(stdout(&out).contains("objective"));

    let again = kbsa(&["bench", "--config", dir.path().join("config.txt").to_str().unwrap(), "--no-timing"]);
    assert!(again.status.success());
    assert_eq!(
        String::from_utf8_lossy(&again.stdout),
        std::fs::read_to_string(dir.path().join("table.txt")).unwrap()
    );
}

#[test]
fn json_dump_parses() {
    let out = kbsa(&["bench", "--preset", "median2d", "--json"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["problem"], "median2d");
}
