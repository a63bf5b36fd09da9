use potr_core::guidance::Method;
use potr_core::harness::{
    emit_summary, grid_search_rho, grid_search_sigma, read_rows_file, run_cells, run_sweep, write_rows,
    ExperimentConfig, ResultRow, SuiteConfig, ROWS_FILE,
};

fn small(episodes: usize) -> ExperimentConfig {
    ExperimentConfig {
        episodes_per_cell: episodes,
        ..ExperimentConfig::default()
    }
}

fn strip_method(rows: &[ResultRow]) -> Vec<ResultRow> {
    rows.iter()
        .map(|r| ResultRow {
            method: Method::Naive,
            ..r.clone()
        })
        .collect()
}

#[test]
fn single_zero_delay_episode() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        methods: vec![Method::Naive],
        delays: vec![0],
        episodes_per_cell: 1,
        suites: vec![SuiteConfig::reach()],
        output_dir: dir.path().to_path_buf(),
        ..ExperimentConfig::default()
    };
    let out = run_sweep(&cfg).unwrap();
    assert_eq!(out.results.rows.len(), 1);
    assert!(out.results.rows[0].excluded_from_aggregate());
    assert!(out.results.rows[0].l2_mean.is_finite());
    assert_eq!(out.summary.excluded_rows, 1);
    assert!(out.summary.methods.is_empty());
}

#[test]
fn full_grid_cardinality() {
    let cfg = ExperimentConfig {
        episodes_per_cell: 10,
        suites: vec![SuiteConfig::detour()],
        ..ExperimentConfig::default()
    };
    let res = run_cells(&cfg, &cfg.methods, &cfg.delays).unwrap();
    assert_eq!(res.rows.len(), 240);
    let mut keys: Vec<_> = res
        .rows
        .iter()
        .map(|r| (r.method, r.delay, r.suite.clone(), r.seed))
        .collect();
    keys.dedup();
    assert_eq!(keys.len(), 240);
}

#[test]
fn rerun_gives_byte_identical_rows() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut cfg = small(3);
    cfg.output_dir = a.path().to_path_buf();
    run_sweep(&cfg).unwrap();
    cfg.output_dir = b.path().to_path_buf();
    run_sweep(&cfg).unwrap();
    let ra = std::fs::read(a.path().join(ROWS_FILE)).unwrap();
    let rb = std::fs::read(b.path().join(ROWS_FILE)).unwrap();
    assert!(!ra.is_empty());
    assert_eq!(ra, rb);
    assert_eq!(read_rows_file(&a.path().join(ROWS_FILE)).unwrap().len(), 4 * 6 * 2 * 3);
}

#[test]
fn methods_share_seeds() {
    let cfg = small(4);
    let res = run_cells(&cfg, &Method::ALL, &[2]).unwrap();
    let seeds = |m: Method| -> Vec<(String, u64)> {
        res.rows
            .iter()
            .filter(|r| r.method == m)
            .map(|r| (r.suite.clone(), r.seed))
            .collect()
    };
    for m in Method::ALL {
        assert_eq!(seeds(m), seeds(Method::Naive));
    }
}

#[test]
fn pc_at_unit_scale_matches_rtc_per_seed() {
    let mut cfg = small(5);
    let rtc = run_cells(&cfg, &[Method::Rtc], &[3]).unwrap();
    cfg.guidance.sigma_d = 1.0;
    let pc = run_cells(&cfg, &[Method::Pc], &[3]).unwrap();
    assert_eq!(strip_method(&rtc.rows), strip_method(&pc.rows));
}

#[test]
fn unbounded_radius_row_matches_pc_row() {
    let cfg = small(5);
    let rho = grid_search_rho(&cfg, &[f64::INFINITY]).unwrap();
    let sigma = grid_search_sigma(&cfg, &[0.4]).unwrap();
    assert_eq!(rho.rows.len(), 1);
    assert_eq!(sigma.rows.len(), 1);
    let (a, b) = (rho.rows[0], sigma.rows[0]);
    assert_eq!(
        (a.success, a.steps, a.l2_mean, a.l2_max, a.max_acc, a.max_jerk),
        (b.success, b.steps, b.l2_mean, b.l2_max, b.max_acc, b.max_jerk)
    );
}

fn synthetic(method: Method, l2_max: f64) -> ResultRow {
    ResultRow {
        method,
        delay: 1,
        suite: "reach".into(),
        seed: 1,
        success: true,
        env_steps: 20,
        l2_mean: 0.1,
        l2_max,
        max_acc: 1.0,
        max_jerk: 2.0,
    }
}

#[test]
fn relative_delta_example() {
    let rows = vec![synthetic(Method::Rtc, 1.446), synthetic(Method::Potr, 1.120)];
    let s = emit_summary(&rows, &[("reach".into(), 10)]).unwrap();
    let d = s.potr_vs_rtc.unwrap();
    assert_eq!((d.l2_max.unwrap() * 10.0).round() / 10.0, -22.5);
    assert_eq!(d.l2_mean, Some(0.0));
    assert_eq!(d.max_jerk, Some(0.0));
}

#[test]
fn summary_from_written_file() {
    let cfg = small(2);
    let res = run_cells(&cfg, &[Method::Rtc, Method::Potr], &[1, 2]).unwrap();
    let mut buf = Vec::new();
    write_rows(&mut buf, &res.rows).unwrap();
    let back = potr_core::harness::read_rows(buf.as_slice()).unwrap();
    assert_eq!(
        emit_summary(&back, &cfg.suite_weights()).unwrap(),
        emit_summary(&res.rows, &cfg.suite_weights()).unwrap()
    );
}
