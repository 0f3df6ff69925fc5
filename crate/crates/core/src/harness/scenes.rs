use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, HarnessError};
use crate::geom::{pose_jitter, random_rotation, CameraIntrinsics, MeshModel, RigidPose};
use crate::render::SceneSpec;
use crate::seed::derive_seed;
use crate::synthetic::box_mesh;

pub const MANIFEST_SCHEMA: u32 = 1;

/// Sub-streams of a trial seed.
const STREAM_JITTER: u64 = 1;
const STREAM_BACKGROUND: u64 = 2;

/// A box occluder, centered on its pose origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccluderSpec {
    /// meters
    pub half_extents: [f64; 3],
    pub pose: RigidPose,
}

impl OccluderSpec {
    pub fn mesh(&self) -> MeshModel {
        box_mesh(Vector3::zeros(), Vector3::from(self.half_extents), 2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialScene {
    pub id: u32,
    pub seed: u64,
    pub gt: RigidPose,
    pub initial: RigidPose,
    pub occluders: Vec<OccluderSpec>,
    pub background_seed: u64,
}

impl TrialScene {
    pub fn scene_spec(&self, mesh: &MeshModel, k_t: &CameraIntrinsics) -> SceneSpec {
        SceneSpec {
            object: mesh.clone(),
            object_pose: self.gt,
            occluders: self.occluders.iter().map(|o| (o.mesh(), o.pose)).collect(),
            k: *k_t,
            background_seed: self.background_seed,
        }
    }
}

/// The trial scenes of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub schema: u32,
    /// hex SHA-256 of the object mesh
    pub mesh_hash: String,
    /// meters
    pub diameter: f64,
    pub z_bar: f64,
    pub k_t: CameraIntrinsics,
    pub max_rot: f64,
    pub max_reproj: f64,
    pub trials: Vec<TrialScene>,
}

impl SceneManifest {
    pub fn check_mesh(&self, mesh: &MeshModel) -> Result<(), HarnessError> {
        let found = mesh.hash().to_hex();
        if self.mesh_hash != found {
            return Err(HarnessError::MeshMismatch(format!(
                "manifest was built for mesh {}, got {found}",
                self.mesh_hash
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Vec<u8> {
        super::to_json(self)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, HarnessError> {
        let m: SceneManifest = super::from_json(&super::read_file(path)?, "manifest", path)?;
        if m.schema != MANIFEST_SCHEMA {
            return Err(HarnessError::Malformed {
                what: "manifest",
                path: path.to_path_buf(),
                message: format!(
                    "schema {} is not supported (expected {MANIFEST_SCHEMA})",
                    m.schema
                ),
            });
        }
        if m.trials.is_empty() {
            return Err(HarnessError::Malformed {
                what: "manifest",
                path: path.to_path_buf(),
                message: "no trials".into(),
            });
        }
        Ok(m)
    }
}

/// Draws the scenes of every trial. Trial `i` depends only on the master
/// seed and `i`.
pub fn synth_scenes(
    cfg: &ExperimentConfig,
    mesh: &MeshModel,
) -> Result<SceneManifest, HarnessError> {
    cfg.validate()?;
    let trials = (0..cfg.scene.trials as u32)
        .map(|id| synth_trial(cfg, mesh, id))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SceneManifest {
        schema: MANIFEST_SCHEMA,
        mesh_hash: mesh.hash().to_hex(),
        diameter: mesh.diameter(),
        z_bar: cfg.exemplars.z_bar,
        k_t: cfg.scene.k_t,
        max_rot: cfg.jitter.max_rot,
        max_reproj: cfg.jitter.max_reproj,
        trials,
    })
}

fn uniform(rng: &mut ChaCha8Rng, half: f64) -> f64 {
    if half == 0.0 {
        0.0
    } else {
        rng.random_range(-half..=half)
    }
}

fn synth_trial(
    cfg: &ExperimentConfig,
    mesh: &MeshModel,
    id: u32,
) -> Result<TrialScene, HarnessError> {
    let s = &cfg.scene;
    let seed = derive_seed(s.seed, id as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z_bar = cfg.exemplars.z_bar;
    let rotation = random_rotation(&mut rng);
    let translation = Vector3::new(
        uniform(&mut rng, s.xy_range),
        uniform(&mut rng, s.xy_range),
        z_bar * (1.0 + uniform(&mut rng, s.depth_range)),
    );
    let gt =
        RigidPose::new(rotation, translation).map_err(|e| HarnessError::Config(e.to_string()))?;

    let center = gt.transform(&mesh.centroid());
    let radius = mesh
        .vertices()
        .iter()
        .map(|p| (p - mesh.centroid()).norm())
        .fold(0.0, f64::max);
    let front = center.z - radius;
    if !(front > 0.0) {
        return Err(HarnessError::Config(format!(
            "trial {id}: object reaches behind the camera; increase z_bar"
        )));
    }
    let mut occluders = Vec::with_capacity(s.occluders);
    for _ in 0..s.occluders {
        // place along the line of sight at a fraction of the free depth
        let depth = front * rng.random_range(0.4..0.7);
        let scale = depth / center.z;
        let size = s.occluder_coverage * radius * scale;
        let mut half = Vector3::from_fn(|_, _| size * rng.random_range(0.7..1.3));
        // keep the whole box in front of the object
        let reach = half.norm();
        if depth + reach >= front {
            half *= 0.9 * (front - depth) / reach;
        }
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        let lateral = rng.random_range(0.3..1.0) * radius * scale;
        let pos = Vector3::new(
            center.x * scale + lateral * phi.cos(),
            center.y * scale + lateral * phi.sin(),
            depth,
        );
        let pose = RigidPose::new(random_rotation(&mut rng), pos)
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        occluders.push(OccluderSpec {
            half_extents: half.into(),
            pose,
        });
    }
    let initial = pose_jitter(
        &gt,
        &s.k_t,
        mesh,
        cfg.jitter.max_rot,
        cfg.jitter.max_reproj,
        derive_seed(seed, STREAM_JITTER),
    )
    .map_err(|e| HarnessError::Config(format!("trial {id}: {e}")))?;
    Ok(TrialScene {
        id,
        seed,
        gt,
        initial,
        occluders,
        background_seed: derive_seed(seed, STREAM_BACKGROUND),
    })
}
