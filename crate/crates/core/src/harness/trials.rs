use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, FlowSource, HarnessError, SceneManifest, TrialScene};
use crate::exemplar::{ExemplarError, ExemplarSet};
use crate::flow::{FlowDirectory, FlowError, FlowProvider, OracleFlow};
use crate::geom::{MeshModel, PoseErrorReport, RigidPose};
use crate::pnp::{refine_pose, ExemplarDiagnostics, PnpError, RefineInputs, Refinement};
use crate::seed::derive_seed;

pub const RECORDS_SCHEMA: u32 = 1;
/// Caps the number of worker threads when set to a positive integer.
pub const THREADS_ENV: &str = "PFA_THREADS";

/// Outcome of one trial. A failed refinement leaves `refined` empty and
/// states the reason in `failure`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: u32,
    pub n_exemplars: usize,
    pub gt: RigidPose,
    pub initial: RigidPose,
    pub refined: Option<RigidPose>,
    pub failure: Option<String>,
    pub diagnostics: Vec<ExemplarDiagnostics>,
    pub correspondences: usize,
    pub inlier_count: usize,
    pub initial_error: PoseErrorReport,
    pub refined_error: Option<PoseErrorReport>,
    pub wall_time_ms: f64,
}

/// All records of one run at a fixed `N`, in trial order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordsFile {
    pub schema: u32,
    pub mesh_hash: String,
    /// meters
    pub diameter: f64,
    pub n_exemplars: usize,
    pub records: Vec<TrialRecord>,
}

pub fn records_file_name(n_exemplars: usize) -> String {
    format!("records_n{n_exemplars}.json")
}

impl RecordsFile {
    pub fn to_json(&self) -> Vec<u8> {
        super::to_json(self)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let r: RecordsFile = super::from_json(&super::read_file(path)?, "records", path)?;
        let malformed = |message: String| HarnessError::Malformed {
            what: "records",
            path: path.to_path_buf(),
            message,
        };
        if r.schema != RECORDS_SCHEMA {
            return Err(malformed(format!("schema {} is not supported", r.schema)));
        }
        if r.records.is_empty() {
            return Err(malformed("no trial records".into()));
        }
        if !(r.diameter > 0.0) {
            return Err(malformed(format!(
                "diameter must be positive, got {}",
                r.diameter
            )));
        }
        if let Some(bad) = r
            .records
            .iter()
            .find(|t| t.refined.is_some() != t.refined_error.is_some())
        {
            return Err(malformed(format!(
                "trial {} has a refined pose without errors or vice versa",
                bad.trial_id
            )));
        }
        Ok(r)
    }
}

/// Inputs shared by all trials, checked for consistency.
#[derive(Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub mesh: MeshModel,
    pub exemplars: ExemplarSet,
    pub manifest: SceneManifest,
}

impl Experiment {
    pub fn new(
        config: ExperimentConfig,
        mesh: MeshModel,
        exemplars: ExemplarSet,
        manifest: SceneManifest,
    ) -> Result<Self, HarnessError> {
        config.validate()?;
        manifest.check_mesh(&mesh)?;
        exemplars.check_mesh(&mesh)?;
        if let Some(&n) = config.refine.sweep().iter().find(|&&n| n > exemplars.len()) {
            return Err(HarnessError::Config(format!(
                "N={n} exceeds the {} exemplars in the set",
                exemplars.len()
            )));
        }
        Ok(Experiment {
            config,
            mesh,
            exemplars,
            manifest,
        })
    }
}

fn thread_pool() -> Result<Option<rayon::ThreadPool>, HarnessError> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(None);
    };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        HarnessError::Config(format!(
            "{THREADS_ENV} must be a positive integer, got {v:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map(Some)
        .map_err(|e| HarnessError::Config(e.to_string()))
}

/// Runs every trial of the manifest with `n_exemplars` exemplars.
pub fn run_trials(exp: &Experiment, n_exemplars: usize) -> Result<RecordsFile, HarnessError> {
    let run = || {
        exp.manifest
            .trials
            .par_iter()
            .map(|t| run_trial(exp, t, n_exemplars))
            .collect::<Result<Vec<_>, _>>()
    };
    let records = match thread_pool()? {
        Some(pool) => pool.install(run),
        None => run(),
    }?;
    Ok(RecordsFile {
        schema: RECORDS_SCHEMA,
        mesh_hash: exp.manifest.mesh_hash.clone(),
        diameter: exp.mesh.diameter(),
        n_exemplars,
        records,
    })
}

/// One [`RecordsFile`] per configured `N`.
pub fn run_sweep(exp: &Experiment) -> Result<Vec<RecordsFile>, HarnessError> {
    exp.config
        .refine
        .sweep()
        .into_iter()
        .map(|n| run_trials(exp, n))
        .collect()
}

enum Outcome {
    Refined(Refinement),
    Failed(String, Vec<ExemplarDiagnostics>),
}

fn attempt(
    exp: &Experiment,
    trial: &TrialScene,
    n_exemplars: usize,
) -> Result<Outcome, HarnessError> {
    let cfg = &exp.config;
    let k_t = exp.manifest.k_t;
    let mut refine_cfg = cfg.refine.refine_config(n_exemplars);
    refine_cfg.ransac.seed = derive_seed(refine_cfg.ransac.seed, trial.id as u64);
    let flow: Box<dyn FlowProvider> = match cfg.flow.source {
        FlowSource::Oracle => {
            let noise = cfg.flow.noise.resolve()?;
            let oracle = OracleFlow::new(&trial.scene_spec(&exp.mesh, &k_t)).and_then(|o| {
                o.with_noise(noise.with_seed(derive_seed(noise.seed, trial.id as u64)))
            });
            match oracle {
                Ok(o) => Box::new(o),
                Err(e) => return Ok(Outcome::Failed(e.to_string(), Vec::new())),
            }
        }
        FlowSource::Directory => Box::new(FlowDirectory {
            dir: cfg.flow.dir.clone().expect("validated"),
            trial_id: trial.id,
        }),
    };
    let inputs = RefineInputs {
        mesh: &exp.mesh,
        exemplars: &exp.exemplars,
        k_t: &k_t,
        flow: flow.as_ref(),
    };
    match refine_pose(&trial.initial, inputs, &refine_cfg) {
        Ok(r) => Ok(Outcome::Refined(r)),
        Err(
            e @ (PnpError::Exemplar(ExemplarError::MeshMismatch { .. })
            | PnpError::Flow(FlowError::MeshMismatch { .. })),
        ) => Err(HarnessError::MeshMismatch(format!(
            "trial {}: {e}",
            trial.id
        ))),
        Err(PnpError::RobustFailure {
            needed,
            best,
            diagnostics,
        }) => {
            let reason = PnpError::RobustFailure {
                needed,
                best,
                diagnostics: Vec::new(),
            }
            .to_string();
            Ok(Outcome::Failed(reason, diagnostics))
        }
        Err(e) => Ok(Outcome::Failed(e.to_string(), Vec::new())),
    }
}

fn run_trial(
    exp: &Experiment,
    trial: &TrialScene,
    n_exemplars: usize,
) -> Result<TrialRecord, HarnessError> {
    let start = Instant::now();
    let outcome = attempt(exp, trial, n_exemplars)?;
    let initial_error = PoseErrorReport::compute(&trial.gt, &trial.initial, &exp.mesh);
    let record = match outcome {
        Outcome::Refined(r) => TrialRecord {
            trial_id: trial.id,
            n_exemplars,
            gt: trial.gt,
            initial: trial.initial,
            refined: Some(r.estimate.pose),
            failure: None,
            diagnostics: r.diagnostics,
            correspondences: r.correspondences,
            inlier_count: r.estimate.inlier_count,
            initial_error,
            refined_error: Some(PoseErrorReport::compute(
                &trial.gt,
                &r.estimate.pose,
                &exp.mesh,
            )),
            wall_time_ms: 0.0,
        },
        Outcome::Failed(reason, diagnostics) => TrialRecord {
            trial_id: trial.id,
            n_exemplars,
            gt: trial.gt,
            initial: trial.initial,
            refined: None,
            failure: Some(reason),
            correspondences: diagnostics.iter().map(|d| d.n_k).sum(),
            diagnostics,
            inlier_count: 0,
            initial_error,
            refined_error: None,
            wall_time_ms: 0.0,
        },
    };
    Ok(TrialRecord {
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        ..record
    })
}
