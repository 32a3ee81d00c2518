use kbsa::bench::{
    aggregate, emit_report, run_replications, summary_csv, table_text, trace_csv, BenchmarkResult, Target,
    DEFAULT_FIT_WINDOW,
};
use kbsa::config::{preset_config, Prepared};
use kbsa::RunTrace;

fn small(name: &str, iters: u64, reps: u64, checkpoints: Option<Vec<u64>>) -> (BenchmarkResult, Target) {
    let mut cfg = preset_config(name).unwrap();
    cfg.n_iters = iters;
    cfg.replications = reps;
    cfg.checkpoints = checkpoints;
    cfg.record_timing = false;
    let prepared = Prepared::new(&cfg).unwrap();
    let target = cfg.target().unwrap();
    let result = run_replications(&prepared.setup(&cfg), reps, cfg.base_seed, &target).unwrap();
    (result, target)
}

#[test]
fn no_checkpoints_gives_header_only_trace() {
    let (result, target) = small("portfolio", 500, 2, Some(vec![]));
    let csv = trace_csv(&result, &target);
    assert_eq!(csv.lines().count(), 1);
    assert!(csv.starts_with("replication,n,eval_count,wall_time"));
    assert!(csv.contains("rel_err_lambda1,sq_err_lambda1"));
    assert_eq!(summary_csv(&result).lines().count(), 1);
}

#[test]
fn table_has_power_of_ten_columns_and_rows() {
    let (result, _) = small("portfolio", 100_000, 3, None);
    let table = table_text(&result);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 6);
    for col in ["n=1000", "n=10000", "n=100000", "rate"] {
        assert!(lines[0].contains(col), "{}", lines[0]);
    }
    for (line, label) in lines[1..5].iter().zip(["lambda1", "lambda2", "G1_1", "G2_1"]) {
        assert!(line.starts_with(label));
        assert!(line.contains("% ("));
        assert!(line.contains("O(n^-"), "{line}");
    }
    assert!(lines[5].starts_with("ACT"));
}

#[test]
fn trace_values_round_trip_through_text() {
    let (result, target) = small("case1-cost2", 3_000, 3, None);
    let csv = trace_csv(&result, &target);
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let theta1 = header.iter().position(|h| *h == "theta_1").unwrap();
    let lambda1 = header.iter().position(|h| *h == "lambda_1").unwrap();
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    let flat: Vec<_> = result.traces.iter().flat_map(|t| &t.checkpoints).collect();
    assert_eq!(rows.len(), flat.len());
    for (row, cp) in rows.iter().zip(flat) {
        assert_eq!(row[theta1].parse::<f64>().unwrap(), cp.theta[0]);
        assert_eq!(row[lambda1].parse::<f64>().unwrap(), cp.lambda[0]);
        assert_eq!(row[1].parse::<u64>().unwrap(), cp.n);
    }
}

#[test]
fn traces_round_trip_through_json() {
    let (result, target) = small("median2d", 2_000, 2, None);
    let json = serde_json::to_string(&result.traces).unwrap();
    let back: Vec<RunTrace> = serde_json::from_str(&json).unwrap();
    assert_eq!(back, result.traces);
    let again = aggregate(back, &result.checkpoints, &target, result.mode, DEFAULT_FIT_WINDOW).unwrap();
    assert_eq!(summary_csv(&again), summary_csv(&result));
}

#[test]
fn emitted_files_match_renderers() {
    let (result, target) = small("case2-cost1", 5_000, 2, None);
    let dir = tempfile::tempdir().unwrap();
    let paths = emit_report(&result, &target, &dir.path().join("nested")).unwrap();
    assert_eq!(std::fs::read_to_string(paths.trace_csv).unwrap(), trace_csv(&result, &target));
    assert_eq!(std::fs::read_to_string(paths.summary_csv).unwrap(), summary_csv(&result));
    assert_eq!(std::fs::read_to_string(paths.table).unwrap(), table_text(&result));
}
