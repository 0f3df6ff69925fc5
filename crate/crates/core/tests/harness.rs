mod common;

use common::{camera, mesh, small_set, Z_BAR};
use pfa_core::flow::save_flow;
use pfa_core::geom::AUC_MAX_THRESHOLD;
use pfa_core::harness::{
    evaluate_records, load_records_dir, run_sweep, run_trials, synth_scenes, write_eval,
    write_report, Experiment, ExperimentConfig, FlowSource, HarnessError, RecordsFile,
    SceneManifest,
};

fn config(trials: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.exemplars.count = small_set().len();
    cfg.exemplars.z_bar = Z_BAR;
    cfg.scene.trials = trials;
    cfg.scene.seed = 5;
    cfg.scene.k_t = camera();
    cfg
}

fn experiment(cfg: ExperimentConfig) -> Experiment {
    let manifest = synth_scenes(&cfg, mesh()).unwrap();
    Experiment::new(cfg, mesh().clone(), small_set().clone(), manifest).unwrap()
}

#[test]
fn manifests_are_reproducible() {
    let mut cfg = config(100);
    cfg.scene.occluders = 2;
    let a = synth_scenes(&cfg, mesh()).unwrap();
    let b = synth_scenes(&cfg, mesh()).unwrap();
    assert_eq!(a.trials.len(), 100);
    assert_eq!(a.to_json(), b.to_json());
    assert!(a.trials.iter().all(|t| t.occluders.len() == 2));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    std::fs::write(&path, a.to_json()).unwrap();
    assert_eq!(SceneManifest::load(&path).unwrap(), a);
}

#[test]
fn zero_jitter_manifest_starts_at_ground_truth() {
    let mut cfg = config(20);
    cfg.jitter.max_rot = 0.0;
    cfg.jitter.max_reproj = 0.0;
    let m = synth_scenes(&cfg, mesh()).unwrap();
    assert!(m.trials.iter().all(|t| t.initial == t.gt));
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let mut cfg = config(6);
    cfg.refine.sweep_n = Some(vec![1, 2]);
    cfg.flow.noise.preset = Some("paper-gap".into());
    let exp = experiment(cfg);
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        write_report(&out, &run_sweep(&exp).unwrap()).unwrap();
        outputs.push(["report.csv", "report.json"].map(|f| std::fs::read(out.join(f)).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
}

/// Accuracy and area under the accuracy curve recomputed from the raw
/// records, failures counting as misses.
fn recompute(file: &RecordsFile) -> (f64, f64) {
    let n = file.records.len() as f64;
    let errors: Vec<f64> = file
        .records
        .iter()
        .map(|r| r.refined_error.map_or(f64::INFINITY, |e| e.add))
        .collect();
    let acc = errors.iter().filter(|&&e| e < 0.1 * file.diameter).count() as f64 / n;
    // area under a step curve: each trial contributes the part of
    // [0, max] above its error
    let auc = errors
        .iter()
        .map(|&e| (AUC_MAX_THRESHOLD - e.min(AUC_MAX_THRESHOLD)) / AUC_MAX_THRESHOLD)
        .sum::<f64>()
        / n;
    (acc, auc)
}

#[test]
fn eval_matches_independent_recomputation() {
    let mut cfg = config(12);
    cfg.refine.sweep_n = Some(vec![1, 4]);
    cfg.flow.noise.preset = Some("paper-gap".into());
    cfg.flow.noise.dropout_ratio = Some(0.9);
    let exp = experiment(cfg);
    let files = run_sweep(&exp).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_report(dir.path(), &files).unwrap();
    let loaded = load_records_dir(dir.path()).unwrap();
    assert_eq!(loaded.len(), 2);
    let rows = write_eval(&dir.path().join("eval"), &loaded).unwrap();
    assert_eq!(rows.len(), 4);
    for file in &loaded {
        let (acc, auc) = recompute(file);
        let row = rows
            .iter()
            .find(|r| r.n_exemplars == file.n_exemplars && r.stage == "refined")
            .unwrap();
        assert!((row.add_01d - acc).abs() < 1e-12);
        assert!((row.auc_add - auc).abs() < 1e-9, "{} vs {auc}", row.auc_add);
    }
    let csv = std::fs::read_to_string(dir.path().join("eval/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn perfect_records_score_one() {
    let exp = experiment(config(4));
    let mut file = run_trials(&exp, 1).unwrap();
    for r in &mut file.records {
        r.refined = Some(r.gt);
        r.refined_error = Some(pfa_core::geom::PoseErrorReport::compute(
            &r.gt,
            &r.gt,
            mesh(),
        ));
    }
    let rows = evaluate_records(&[file]);
    let refined = rows.iter().find(|r| r.stage == "refined").unwrap();
    assert_eq!(refined.add_01d, 1.0);
    assert_eq!(refined.auc_add, 1.0);
}

#[test]
fn missing_flow_file_becomes_failed_record() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(2);
    cfg.refine.n_exemplars = 1;
    cfg.flow.source = FlowSource::Directory;
    cfg.flow.dir = Some(dir.path().to_path_buf());
    let exp = experiment(cfg);
    // provide the exact flow of trial 0 only
    let t0 = &exp.manifest.trials[0];
    let oracle = pfa_core::flow::OracleFlow::new(&t0.scene_spec(mesh(), &camera())).unwrap();
    let e = small_set().query_nearest(&t0.initial, 1).unwrap()[0].exemplar;
    let m_r = e.crop(mesh(), 1.2).unwrap();
    let m_t =
        pfa_core::crop::compute_crop(&t0.initial, small_set().k_r(), mesh(), 256, 1.2).unwrap();
    let flow = oracle.exact_flow(e, &m_r, &m_t).unwrap();
    save_flow(
        &flow,
        dir.path().join(pfa_core::flow::flow_file_name(0, e.id())),
    )
    .unwrap();

    let file = run_trials(&exp, 1).unwrap();
    assert!(file.records[0].failure.is_none());
    assert!(file.records[0].refined_error.unwrap().rotation_err < 0.1);
    let failed = &file.records[1];
    assert!(failed.refined.is_none() && failed.refined_error.is_none());
    let reason = failed.failure.as_deref().unwrap();
    assert!(reason.contains("trial00001"), "{reason}");
}

#[test]
fn mismatched_set_is_refused() {
    let cfg = config(2);
    let manifest = synth_scenes(&cfg, mesh()).unwrap();
    let other = pfa_core::synthetic::box_mesh(
        nalgebra::Vector3::zeros(),
        nalgebra::Vector3::repeat(0.05),
        2,
    );
    let err = Experiment::new(cfg, other, small_set().clone(), manifest).unwrap_err();
    assert_eq!(err.exit_code(), 4, "{err}");
}

#[test]
fn empty_records_directory_is_malformed() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_records_dir(dir.path()).unwrap_err();
    assert!(matches!(err, HarnessError::Malformed { .. }));
    assert_eq!(err.exit_code(), 2);
}
