mod common;

use std::path::{Path, PathBuf};

use vegaplus_core::partition::NetworkProfile;
use vegaplus_core::Value;
use vegaplus_server::cli::{self, BenchOptions, BenchSource, RunOptions, BENCH_HEADER};

fn gallery(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("../core/gallery/{name}.json"))
}

fn write_flights(dir: &Path, rows: usize) -> (vegaplus_core::Table, String) {
    let (t, csv) = common::flights_csv(rows, 5);
    let path = dir.join("flights.csv");
    std::fs::write(&path, csv).unwrap();
    (t, format!("flights={}", path.display()))
}

fn run_opts(data: String) -> RunOptions {
    RunOptions {
        spec: gallery("flights"),
        data: vec![data],
        signals: vec![],
        profile: NetworkProfile::from_mbps(50.0, 80.0),
        explain: false,
        baseline: false,
    }
}

fn run(opts: &RunOptions) -> String {
    let mut out = Vec::new();
    cli::run(common::test_config(), opts, &mut out).unwrap();
    String::from_utf8(out).unwrap()
}

#[test]
fn explain_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let (_, data) = write_flights(dir.path(), 3_000);
    let mut opts = run_opts(data);
    // slow enough that aggregating on the server pays off
    opts.profile = NetworkProfile::from_mbps(50.0, 1.0);
    opts.explain = true;
    let got = run(&opts);
    let golden = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/flights_explain.txt");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(golden.parent().unwrap()).unwrap();
        std::fs::write(&golden, &got).unwrap();
    }
    let want = std::fs::read_to_string(&golden).unwrap();
    assert_eq!(got, want, "rerun with UPDATE_GOLDEN=1 after intended changes");
}

#[test]
fn run_prints_sinks_after_signals() {
    let dir = tempfile::tempdir().unwrap();
    let (t, data) = write_flights(dir.path(), 2_000);
    let spec = std::fs::read_to_string(gallery("flights")).unwrap();
    for baseline in [false, true] {
        let mut opts = run_opts(data.clone());
        opts.baseline = baseline;
        opts.signals = vec!["maxbins=35".into()];
        let out: serde_json::Value = serde_json::from_str(&run(&opts)).unwrap();
        let want = common::reference(&spec, &[("flights", &t)], &[("maxbins", Value::number(35.0))]);
        common::assert_sinks(&out["sinks"], &want);
        assert!(out["timing"]["total_ms"].as_f64().unwrap() >= 0.0);
    }
}

#[test]
fn run_reports_missing_files() {
    let mut opts = run_opts("flights=/nonexistent/flights.csv".into());
    let err = cli::run(common::test_config(), &opts, &mut Vec::new()).unwrap_err();
    assert!(format!("{err:#}").contains("nonexistent"), "{err:#}");
    opts.data = vec!["no-equals-sign".into()];
    assert!(cli::run(common::test_config(), &opts, &mut Vec::new()).is_err());
}

#[test]
fn bench_writes_one_row_per_plan_and_repeat() {
    let opts = BenchOptions {
        spec: gallery("flights"),
        sources: vec![BenchSource::parse_synth("flights=flights").unwrap()],
        rows: vec![500, 1_000],
        repeat: 2,
        profile: NetworkProfile::zero(),
        seed: 3,
    };
    let mut out = Vec::new();
    cli::bench(common::test_config(), &opts, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(BENCH_HEADER));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2 * 2 * 2);
    for r in &rows {
        assert_eq!(r.len(), BENCH_HEADER.split(',').count());
        assert!(["baseline", "recommended"].contains(&r[1]), "{r:?}");
        let parts: Vec<f64> = r[3..].iter().map(|x| x.parse().unwrap()).collect();
        assert!((parts[0] + parts[1] + parts[2] - parts[3]).abs() < 2e-3, "{r:?}");
    }
}
