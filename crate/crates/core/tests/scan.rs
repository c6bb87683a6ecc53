use proptest::prelude::*;
use rds_core::noise::NoiseStream;
use rds_core::phase_space::{CircleMap, PsiSpec, SystemParams};
use rds_core::scan::*;
use rds_core::simulate::lyapunov_estimate;

const A_STAR: f64 = 0.928_816_357_662_228_6;

fn small_spec(axes: Vec<Axis>) -> ScanSpec {
    let mut s = ScanSpec::new(SystemParams::desk(), PsiSpec::desk(), axes, 42);
    s.budgets = Budgets { n_steps: 10_000, n_burn: 1000, n_chains: 2, bins: 20, x0: 0.0 };
    s.grid = 100_000;
    s
}

fn axis(param: ScanParam, min: f64, max: f64, count: usize) -> Axis {
    Axis { param, min, max, count, spacing: None }
}

#[test]
fn single_cell_matches_direct_calls() {
    let spec = small_spec(vec![]);
    let (rows, m) = run_scan(&spec, 2).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(m.schema, "scan_manifest_v1");
    let p = SystemParams::desk();
    let stream = NoiseStream::new(42).substream(0).substream(0);
    let est = lyapunov_estimate(&CircleMap::new(&p, &PsiSpec::desk()), p.epsilon, &stream, 0.0, 1000, 10_000, 2).unwrap();
    assert_eq!(rows[0].lyap_mean.unwrap().to_bits(), est.mean.to_bits());
    assert_eq!(rows[0].lyap_se.unwrap().to_bits(), est.std_error.to_bits());
    assert_eq!(rows[0].h3_pass, Some(true));
    assert!(rows[0].k_max.unwrap() >= 1);
}

#[test]
fn worker_count_does_not_change_rows() {
    let mut spec = small_spec(vec![axis(ScanParam::A, 0.1, 0.9, 3), axis(ScanParam::Epsilon, 1e-9, 1e-3, 3)]);
    spec.outputs.tv = true;
    let (r1, _) = run_scan(&spec, 1).unwrap();
    let (r8, _) = run_scan(&spec, 8).unwrap();
    assert_eq!(to_csv(&r1), to_csv(&r8));
    assert!(r1.iter().enumerate().all(|(i, r)| r.cell_index == i));
}

#[test]
fn first_axis_varies_slowest() {
    let spec = small_spec(vec![axis(ScanParam::A, 0.1, 0.3, 3), axis(ScanParam::C, 0.05, 0.1, 2)]);
    let p = spec.cell_params(3);
    assert!((p.a - 0.2).abs() < 1e-15);
    assert_eq!(p.c, 0.1);
}

#[test]
fn epsilon_axis_defaults_to_log_spacing() {
    let v = axis(ScanParam::Epsilon, 1e-13, 1e-3, 11).values();
    assert!((v[5] / 1e-8 - 1.0).abs() < 1e-12);
    assert_eq!(axis(ScanParam::A, 0.0, 0.5, 3).values(), vec![0.0, 0.25, 0.5]);
}

#[test]
fn spec_validation() {
    assert!(matches!(small_spec(vec![axis(ScanParam::A, 0.1, 0.2, 0)]).validate(), Err(ScanError::Spec(_))));
    assert!(small_spec(vec![axis(ScanParam::Epsilon, 0.0, 1e-3, 2)]).validate().is_err());
    let mut s = small_spec(vec![axis(ScanParam::A, 0.0, 0.9, 1001), axis(ScanParam::C, 0.01, 0.2, 1000)]);
    assert!(matches!(s.validate(), Err(ScanError::TooManyCells { cells: 1_001_000, .. })));
    s.budgets.n_chains = 0;
    assert!(s.validate().is_err());
}

#[test]
fn cell_errors_stay_in_the_row() {
    let mut spec = small_spec(vec![axis(ScanParam::C, 0.1, 1.5, 2)]);
    spec.budgets.n_steps = 10;
    let (rows, _) = run_scan(&spec, 2).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].flags.contains("error:lyapunov"));
    assert!(rows[1].flags.starts_with("error:"));
    assert!(rows[1].h3_pass.is_none());
}

#[test]
fn sink_cell_is_flagged() {
    let mut spec = small_spec(vec![axis(ScanParam::A, A_STAR - 0.2, A_STAR, 3)]);
    spec.base.epsilon = 1e-14;
    spec.outputs = Outputs { criterion: true, lyapunov: false, tv: false, sink_scan: true };
    let (rows, _) = run_scan(&spec, 4).unwrap();
    let sink = &rows[2];
    assert!(sink.flags.contains("h3_next_fail"), "{}", sink.flags);
    assert!(sink.flags.split(';').any(|f| f == "sink"), "{}", sink.flags);
    assert!(sink.flags.contains("eps_lt_sink_cap"));
    assert!(!rows[0].flags.split(';').any(|f| f == "sink"), "{}", rows[0].flags);
}

#[test]
fn kmax_is_nonincreasing_in_c() {
    let mut spec = small_spec(vec![axis(ScanParam::A, 0.05, 0.95, 7), axis(ScanParam::C, 0.01, 0.3, 8)]);
    spec.outputs = Outputs { criterion: true, lyapunov: false, tv: false, sink_scan: false };
    let (rows, _) = run_scan(&spec, 4).unwrap();
    for chunk in rows.chunks(8) {
        assert!(chunk.windows(2).all(|w| w[0].k_max >= w[1].k_max), "{chunk:?}");
    }
}

#[test]
fn csv_header_and_roundtrip() {
    let mut spec = small_spec(vec![axis(ScanParam::A, 0.1, 0.3, 2)]);
    spec.outputs.tv = true;
    let (rows, m) = run_scan(&spec, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rows.csv");
    write_results(&rows, Format::Csv, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next().unwrap(), "cell_index,a,epsilon,k,c,h3_pass,k_max,min_dist,lyap_mean,lyap_se,tv,flags");
    assert_eq!(read_results(&path, Format::Csv).unwrap(), rows);
    let jp = dir.path().join("rows.jsonl");
    write_results(&rows, Format::Jsonl, &jp).unwrap();
    assert_eq!(read_results(&jp, Format::Jsonl).unwrap(), rows);
    let mp = dir.path().join("manifest.json");
    write_manifest(&m, &mp).unwrap();
    let back: ScanManifest = serde_json::from_str(&std::fs::read_to_string(&mp).unwrap()).unwrap();
    assert_eq!(back.spec, spec);
}

#[test]
fn empty_rows_are_rejected_and_io_errors_name_the_path() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(write_results(&[], Format::Csv, &dir.path().join("x.csv")), Err(ScanError::EmptyRows)));
    let rows = run_scan(&small_spec(vec![]), 1).unwrap().0;
    let bad = dir.path().join("missing").join("x.csv");
    let e = write_results(&rows, Format::Csv, &bad).unwrap_err();
    assert!(e.to_string().contains("missing"));
}

fn any_row() -> impl Strategy<Value = ScanRow> {
    let num = prop_oneof![any::<f64>().prop_filter("finite", |x| x.is_finite()), Just(f64::INFINITY), Just(f64::NEG_INFINITY)];
    (
        0usize..1_000_000,
        (0.0f64..1.0, 0.0f64..1.0, 0u32..8, 0.0f64..1.0),
        (proptest::option::of(any::<bool>()), proptest::option::of(0u32..40)),
        (proptest::option::of(num.clone()), proptest::option::of(num.clone()), proptest::option::of(num.clone()), proptest::option::of(num)),
        "[a-z_=;,:\" 0-9.-]{0,30}",
    )
        .prop_map(|(i, (a, e, k, c), (h, km), (md, lm, ls, tv), flags)| ScanRow {
            cell_index: i,
            a,
            epsilon: e,
            k,
            c,
            h3_pass: h,
            k_max: km,
            min_dist: md,
            lyap_mean: lm,
            lyap_se: ls,
            tv,
            flags,
        })
}

proptest! {
    #[test]
    fn csv_roundtrip_is_exact(rows in prop::collection::vec(any_row(), 1..6)) {
        prop_assert_eq!(parse_csv(&to_csv(&rows)).unwrap(), rows);
    }

    #[test]
    fn cell_params_follow_the_axes(i in 0usize..24) {
        let spec = small_spec(vec![axis(ScanParam::A, 0.0, 0.6, 4), axis(ScanParam::K, 1.0, 3.0, 3), axis(ScanParam::C, 0.05, 0.1, 2)]);
        let p = spec.cell_params(i);
        prop_assert_eq!(p.k, 1 + ((i / 2) % 3) as u32);
        prop_assert!((p.a - 0.2 * (i / 6) as f64).abs() < 1e-15);
    }
}
