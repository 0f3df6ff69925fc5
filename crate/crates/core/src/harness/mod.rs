//! Synthetic experiments around [`refine_pose`](crate::pnp::refine_pose):
//! configuration, scene manifests, trial execution, records and reports.
//!
//! Every fallible entry point returns [`HarnessError`], whose
//! [`exit_code`](HarnessError::exit_code) is what the command-line tool
//! exits with: 2 for configuration and input-format errors, 3 for I/O
//! errors, 4 for a mesh mismatch between artifacts.

mod config;
mod report;
mod scenes;
mod trials;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::exemplar::ExemplarError;
use crate::render::MeshLoadError;

pub use config::{
    ExemplarParams, ExperimentConfig, FlowParams, FlowSource, JitterParams, NoiseParams,
    RefineParams, SceneParams, CONFIG_SCHEMA,
};
pub use report::{
    accuracy_curves, evaluate_records, load_records_dir, metric_rows, write_csv, write_eval,
    write_report, CurvePoint, MetricRow, CURVE_STEPS,
};
pub use scenes::{synth_scenes, OccluderSpec, SceneManifest, TrialScene, MANIFEST_SCHEMA};
pub use trials::{
    records_file_name, run_sweep, run_trials, Experiment, RecordsFile, TrialRecord, RECORDS_SCHEMA,
    THREADS_ENV,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {what} {path}: {message}")]
    Malformed {
        what: &'static str,
        path: PathBuf,
        message: String,
    },
    #[error("mesh mismatch: {0}")]
    MeshMismatch(String),
    #[error(transparent)]
    Mesh(#[from] MeshLoadError),
    #[error(transparent)]
    Exemplar(#[from] ExemplarError),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Malformed { .. } => 2,
            HarnessError::Io { .. } => 3,
            HarnessError::MeshMismatch(_) => 4,
            HarnessError::Mesh(MeshLoadError::Io { .. }) => 3,
            HarnessError::Mesh(_) => 2,
            HarnessError::Exemplar(ExemplarError::Io { .. }) => 3,
            HarnessError::Exemplar(ExemplarError::MeshMismatch { .. }) => 4,
            HarnessError::Exemplar(_) => 2,
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, HarnessError> {
    std::fs::read(path).map_err(|e| HarnessError::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    std::fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

pub(crate) fn create_dir(path: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(path).map_err(|e| HarnessError::io(path, e))
}

/// Pretty JSON with a trailing newline.
pub(crate) fn to_json<T: serde::Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("harness types serialize");
    out.push(b'\n');
    out
}

pub(crate) fn from_json<T: serde::de::DeserializeOwned>(
    bytes: &[u8],
    what: &'static str,
    path: &Path,
) -> Result<T, HarnessError> {
    serde_json::from_slice(bytes).map_err(|e| HarnessError::Malformed {
        what,
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
