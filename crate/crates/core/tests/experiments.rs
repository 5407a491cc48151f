use thinlab::error::LabError;
use thinlab::experiments::config::GridConfig;
use thinlab::experiments::report::{from_json, render, to_csv, to_json};
use thinlab::experiments::{attractor_pipeline, emit_report, ExperimentConfig, ReportFormat};

fn small(kind: &str, params: Vec<f64>) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.profile.kind = kind.into();
    cfg.profile.params = params;
    cfg.grid = GridConfig { nx: 32, nz: 8, n1d: 128, dyn_nx: 24, dyn_nz: 4 };
    cfg.dense_samples = 4;
    cfg
}

#[test]
fn straight_channel_distances_at_floor() {
    let cfg = small("constant", vec![1.0]);
    let (report, _) = attractor_pipeline(&cfg).unwrap();
    assert_eq!(report.table.rows.len(), 5);
    for row in &report.table.rows {
        let m = row.metrics.as_ref().unwrap_or_else(|| panic!("row {} failed: {:?}", row.eps, row.error));
        for (name, v) in [
            ("tau", m.tau),
            ("rho", m.rho),
            ("beta", m.beta),
            ("graph_dist", m.graph_dist),
            ("reduced_map_c0", m.reduced_map_c0),
            ("time_one_dist", m.time_one_dist),
            ("attractor_dist_reduced", m.attractor_dist_reduced),
            ("attractor_dist_h1q", m.attractor_dist_h1q),
        ] {
            assert!(v <= 1e-6, "{name} = {v:e} at eps {}", m.eps);
        }
    }
}

#[test]
fn curved_report_formats() {
    let cfg = small("sine", vec![1.0, 0.3]);
    let (report, _) = attractor_pipeline(&cfg).unwrap();
    assert!(report.table.rows.iter().all(|r| r.metrics.is_some()));
    let csv = to_csv(&report).unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert!(csv.starts_with("eps,m,tau,"));
    let back = from_json(&to_json(&report)).unwrap();
    assert_eq!(back, report);
    assert_eq!(to_csv(&back).unwrap(), csv);
    assert!(report.rescaling_defect <= 1e-12);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.csv");
    emit_report(&report, ReportFormat::Csv, &path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), csv);
    let missing = dir.path().join("no/such/dir/report.json");
    let err = emit_report(&report, ReportFormat::Json, &missing).unwrap_err();
    assert!(err.to_string().contains("no/such/dir"), "{err}");

    let mut empty = report.clone();
    empty.table.rows.clear();
    assert!(render(&empty, ReportFormat::Csv).is_err());
}

#[test]
fn unknown_format_rejected() {
    assert!(matches!("xml".parse::<ReportFormat>(), Err(LabError::Config(_))));
    assert_eq!("json".parse::<ReportFormat>().unwrap(), ReportFormat::Json);
}

#[test]
fn empty_eps_list_rejected() {
    let mut cfg = small("sine", vec![1.0, 0.3]);
    cfg.eps_list.clear();
    assert!(matches!(attractor_pipeline(&cfg), Err(LabError::Config(_))));
}

#[test]
fn pitchfork_threshold_aborts_naming_equilibrium() {
    let mut cfg = small("sine", vec![1.0, 0.3]);
    cfg.reaction.a = 1.0;
    let err = attractor_pipeline(&cfg).err().expect("non-hyperbolic equilibrium must abort");
    let msg = err.to_string();
    assert!(msg.contains("hyperbolicity") && msg.contains("equilibrium 0"), "{msg}");
}
