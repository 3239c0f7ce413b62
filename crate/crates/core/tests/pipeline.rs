use aware_flight::gp::{Dataset, FitOptions, GpModel, ModelSnapshot};
use aware_flight::harness::export::{read_json, steps_csv, write_json, write_steps_csv, STEP_CSV_HEADER};
use aware_flight::harness::{
    collect_training_data, labels_from_episode, metrics, run_episode, LabelOptions, MetricsReport, Oracle,
    ScenarioConfig,
};
use aware_flight::scheduler::{sweep_select, SelectionResult, SweepOptions};

fn short(horizon: f64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::default();
    cfg.simulation.horizon = horizon;
    cfg
}

#[test]
fn episodes_are_deterministic() {
    let cfg = short(2.0);
    let a = run_episode(&cfg, &cfg.controller.gains, Oracle::None).unwrap();
    let b = run_episode(&cfg, &cfg.controller.gains, Oracle::None).unwrap();
    assert_eq!(a, b);
    assert_eq!(steps_csv(&a), steps_csv(&b));
}

#[test]
fn step_csv_has_one_row_per_sample() {
    let cfg = short(0.5);
    let ep = run_episode(&cfg, &cfg.controller.gains, Oracle::None).unwrap();
    assert_eq!(ep.len(), cfg.simulation.steps() + 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("steps.csv");
    write_steps_csv(&ep, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(STEP_CSV_HEADER));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), cfg.simulation.steps() + 1);
    let cols = STEP_CSV_HEADER.split(',').count();
    for row in &rows {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), cols);
        // No oracle: gate and rho are empty.
        assert_eq!(fields[cols - 3], "");
        assert_eq!(fields[cols - 2], "");
    }
}

#[test]
fn metrics_and_selection_round_trip_through_json() {
    let cfg = short(1.0);
    let run = |s: f64| {
        let ep = run_episode(&cfg, &cfg.controller.gains.with_trans_scale(s), Oracle::None)?;
        Ok(metrics(&ep, 0.5).with_controller("aware"))
    };
    let sel = sweep_select(&[1.0, 1.5], 10.0, SweepOptions::default(), run).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("selection.json");
    write_json(&sel, &path).unwrap();
    let back: SelectionResult = read_json(&path).unwrap();
    assert_eq!(back, sel);
    assert!(std::fs::read_to_string(&path).unwrap().contains("\"schema_version\""));

    let m = sel.chosen().unwrap().metrics.clone().unwrap();
    let path = dir.path().join("metrics.json");
    write_json(&m, &path).unwrap();
    let back: MetricsReport = read_json(&path).unwrap();
    assert_eq!(back, m);
}

#[test]
fn noiseless_labels_recover_the_disturbance() {
    let cfg = short(3.0);
    let ep = run_episode(&cfg, &cfg.controller.gains, Oracle::None).unwrap();
    let data = labels_from_episode(&ep, &cfg.vehicle, &cfg.disturbance, &LabelOptions::noiseless()).unwrap();
    assert_eq!(data.len(), ep.len() - 4);
    let worst = data
        .targets
        .iter()
        .zip(&ep.f_true[2..])
        .map(|(y, f)| (y - f).norm())
        .fold(0.0, f64::max);
    assert!(worst < 2e-3, "worst label error {worst}");

    let opts = LabelOptions {
        decimation: 10,
        ..LabelOptions::noiseless()
    };
    let sparse = labels_from_episode(&ep, &cfg.vehicle, &cfg.disturbance, &opts).unwrap();
    let expected = (0..ep.len()).step_by(10).filter(|&j| j >= 2 && j + 2 < ep.len()).count();
    assert_eq!(sparse.len(), expected);
}

#[test]
fn collect_fit_snapshot_restore() {
    let mut cfg = short(3.0);
    cfg.gp.decimation = 50;
    let data = collect_training_data(&cfg).unwrap();
    let n = cfg.simulation.steps() + 1;
    let per_episode = (0..n).step_by(50).filter(|&j| j >= 2 && j + 2 < n).count();
    assert_eq!(data.len(), 2 * per_episode);
    assert_eq!(data.provenance.len(), 2);

    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("dataset.csv");
    data.write_csv(&csv).unwrap();
    let back = Dataset::read_csv(&csv).unwrap();
    assert_eq!(back.len(), data.len());
    assert_eq!(back.normalize_by_dist, data.normalize_by_dist);

    let opts = FitOptions {
        restarts: 1,
        iterations: 10,
        subset: Some(40),
        ..FitOptions::default()
    };
    let (model, report) = GpModel::fit(&back, &opts).unwrap();
    assert_eq!(report.channels.len(), 6);
    let snap_path = dir.path().join("model.json");
    model.snapshot("dataset.csv").save(&snap_path).unwrap();
    let restored = ModelSnapshot::load(&snap_path).unwrap().restore(&snap_path).unwrap();
    for z in back.features.iter().step_by(7) {
        assert_eq!(restored.predict(z), model.predict(z));
    }
}
