use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{records_file_name, HarnessError, RecordsFile};
use crate::geom::{accuracy_below, accuracy_curve, auc_metric, PoseErrorReport, AUC_MAX_THRESHOLD};

/// Intervals of the exported accuracy curves.
pub const CURVE_STEPS: usize = 100;

/// Aggregate metrics of one pose stage (initial or refined) at one `N`.
///
/// Failed refinements count as misses in the accuracy and AUC columns and
/// are left out of the error means and medians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub n_exemplars: usize,
    pub stage: String,
    pub trials: usize,
    pub failures: usize,
    pub add_01d: f64,
    pub add_05d: f64,
    pub add_s_01d: f64,
    pub auc_add: f64,
    pub auc_add_s: f64,
    /// degrees
    pub mean_rotation_err: Option<f64>,
    /// degrees
    pub median_rotation_err: Option<f64>,
    /// meters
    pub mean_translation_err: Option<f64>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    Some(if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    })
}

fn stage_row(
    n_exemplars: usize,
    stage: &str,
    diameter: f64,
    reports: &[Option<PoseErrorReport>],
) -> MetricRow {
    let add: Vec<f64> = reports
        .iter()
        .map(|r| r.map_or(f64::INFINITY, |r| r.add))
        .collect();
    let add_s: Vec<f64> = reports
        .iter()
        .map(|r| r.map_or(f64::INFINITY, |r| r.add_s))
        .collect();
    let ok: Vec<&PoseErrorReport> = reports.iter().flatten().collect();
    let rot: Vec<f64> = ok.iter().map(|r| r.rotation_err).collect();
    let trans: Vec<f64> = ok.iter().map(|r| r.translation_err).collect();
    let acc = |e: &[f64], f: f64| accuracy_below(e, f * diameter).expect("non-empty records");
    MetricRow {
        n_exemplars,
        stage: stage.to_string(),
        trials: reports.len(),
        failures: reports.len() - ok.len(),
        add_01d: acc(&add, 0.1),
        add_05d: acc(&add, 0.5),
        add_s_01d: acc(&add_s, 0.1),
        auc_add: auc_metric(&add, AUC_MAX_THRESHOLD).expect("non-empty records"),
        auc_add_s: auc_metric(&add_s, AUC_MAX_THRESHOLD).expect("non-empty records"),
        mean_rotation_err: mean(&rot),
        median_rotation_err: median(&rot),
        mean_translation_err: mean(&trans),
    }
}

/// Initial and refined rows of one run.
pub fn metric_rows(file: &RecordsFile) -> Vec<MetricRow> {
    let initial: Vec<Option<PoseErrorReport>> =
        file.records.iter().map(|r| Some(r.initial_error)).collect();
    let refined: Vec<Option<PoseErrorReport>> =
        file.records.iter().map(|r| r.refined_error).collect();
    vec![
        stage_row(file.n_exemplars, "initial", file.diameter, &initial),
        stage_row(file.n_exemplars, "refined", file.diameter, &refined),
    ]
}

/// Rows of every run, ordered by `N`.
pub fn evaluate_records(files: &[RecordsFile]) -> Vec<MetricRow> {
    let mut sorted: Vec<&RecordsFile> = files.iter().collect();
    sorted.sort_by_key(|f| f.n_exemplars);
    sorted.into_iter().flat_map(metric_rows).collect()
}

/// One sample of the accuracy-vs-threshold curves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// meters
    pub threshold: f64,
    pub initial_add: f64,
    pub refined_add: f64,
    pub initial_add_s: f64,
    pub refined_add_s: f64,
}

pub fn accuracy_curves(file: &RecordsFile) -> Vec<CurvePoint> {
    let pick = |f: &dyn Fn(&super::TrialRecord) -> f64| -> Vec<(f64, f64)> {
        let e: Vec<f64> = file.records.iter().map(f).collect();
        accuracy_curve(&e, AUC_MAX_THRESHOLD, CURVE_STEPS).expect("non-empty records")
    };
    let ia = pick(&|r| r.initial_error.add);
    let ra = pick(&|r| r.refined_error.map_or(f64::INFINITY, |e| e.add));
    let is = pick(&|r| r.initial_error.add_s);
    let rs = pick(&|r| r.refined_error.map_or(f64::INFINITY, |e| e.add_s));
    (0..ia.len())
        .map(|i| CurvePoint {
            threshold: ia[i].0,
            initial_add: ia[i].1,
            refined_add: ra[i].1,
            initial_add_s: is[i].1,
            refined_add_s: rs[i].1,
        })
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| HarnessError::Config(format!("CSV encoding failed: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| HarnessError::io(path, e.into_error()))?;
    super::write_file(path, &bytes)
}

#[derive(Serialize)]
struct MetricTable<'a> {
    schema: u32,
    rows: &'a [MetricRow],
}

fn write_tables(dir: &Path, stem: &str, rows: &[MetricRow]) -> Result<(), HarnessError> {
    super::create_dir(dir)?;
    write_csv(&dir.join(format!("{stem}.csv")), rows)?;
    super::write_file(
        &dir.join(format!("{stem}.json")),
        &super::to_json(&MetricTable { schema: 1, rows }),
    )
}

/// Records plus `report.csv` and `report.json`, as written after a run.
pub fn write_report(dir: &Path, files: &[RecordsFile]) -> Result<(), HarnessError> {
    super::create_dir(dir)?;
    for f in files {
        super::write_file(&dir.join(records_file_name(f.n_exemplars)), &f.to_json())?;
    }
    write_tables(dir, "report", &evaluate_records(files))
}

/// `metrics.csv`, `metrics.json` and one `auc_curve_n{N}.csv` per run.
pub fn write_eval(dir: &Path, files: &[RecordsFile]) -> Result<Vec<MetricRow>, HarnessError> {
    let rows = evaluate_records(files);
    write_tables(dir, "metrics", &rows)?;
    for f in files {
        write_csv(
            &dir.join(format!("auc_curve_n{}.csv", f.n_exemplars)),
            &accuracy_curves(f),
        )?;
    }
    Ok(rows)
}

/// Reads `records_n*.json` from a directory, or a single records file.
pub fn load_records_dir(path: &Path) -> Result<Vec<RecordsFile>, HarnessError> {
    if path.is_file() {
        return Ok(vec![RecordsFile::load(path)?]);
    }
    let entries = std::fs::read_dir(path).map_err(|e| HarnessError::io(path, e))?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let p = entry.map_err(|e| HarnessError::io(path, e))?.path();
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if name.starts_with("records_n") && name.ends_with(".json") {
            paths.push(p);
        }
    }
    if paths.is_empty() {
        return Err(HarnessError::Malformed {
            what: "records directory",
            path: path.to_path_buf(),
            message: "no records_n*.json files".into(),
        });
    }
    paths.sort();
    let mut files = paths
        .iter()
        .map(|p| RecordsFile::load(p))
        .collect::<Result<Vec<_>, _>>()?;
    files.sort_by_key(|f| f.n_exemplars);
    if let Some(w) = files
        .windows(2)
        .find(|w| w[0].n_exemplars == w[1].n_exemplars)
    {
        return Err(HarnessError::Malformed {
            what: "records directory",
            path: path.to_path_buf(),
            message: format!("two runs with N={}", w[0].n_exemplars),
        });
    }
    Ok(files)
}
