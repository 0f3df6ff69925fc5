use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::crop::DEFAULT_PAD;
use crate::exemplar::{
    fit_exemplar_intrinsics, generate_exemplar_set, load_set, ExemplarSet, DEFAULT_EXEMPLAR_COUNT,
    DEFAULT_EXEMPLAR_RADIUS_PX, DEFAULT_Z_BAR,
};
use crate::flow::FlowNoiseSpec;
use crate::geom::{CameraIntrinsics, MeshModel};
use crate::pnp::{RansacConfig, RefineConfig, MAX_CORRESPONDENCES};
use crate::render::load_mesh;
use crate::synthetic::test_object;

pub const CONFIG_SCHEMA: u32 = 1;

/// Experiment description, read from TOML.
///
/// Relative paths are resolved against the directory of the config file.
/// With no `mesh`, the built-in asymmetric test object is used.
///
/// ```toml
/// schema = 1
/// mesh = "object.ply"
///
/// [exemplars]
/// count = 1000
/// z_bar = 1.0
///
/// [scene]
/// trials = 100
/// occluders = 1
///
/// [refine]
/// sweep_n = [1, 2, 4, 8]
///
/// [flow.noise]
/// preset = "paper-gap"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    #[serde(default)]
    pub mesh: Option<PathBuf>,
    #[serde(default)]
    pub exemplars: ExemplarParams,
    #[serde(default)]
    pub scene: SceneParams,
    #[serde(default)]
    pub jitter: JitterParams,
    #[serde(default)]
    pub refine: RefineParams,
    #[serde(default)]
    pub flow: FlowParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExemplarParams {
    /// load this set instead of rendering one
    pub path: Option<PathBuf>,
    pub count: usize,
    /// meters
    pub z_bar: f64,
    pub seed: u64,
    /// rendering intrinsics; fitted to the mesh when absent
    pub k_r: Option<CameraIntrinsics>,
    /// projected mesh radius used when fitting `k_r`, pixels
    pub radius_px: f64,
}

impl Default for ExemplarParams {
    fn default() -> Self {
        ExemplarParams {
            path: None,
            count: DEFAULT_EXEMPLAR_COUNT,
            z_bar: DEFAULT_Z_BAR,
            seed: 0,
            k_r: None,
            radius_px: DEFAULT_EXEMPLAR_RADIUS_PX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneParams {
    pub trials: usize,
    pub seed: u64,
    pub k_t: CameraIntrinsics,
    /// half-width of the lateral translation box, meters
    pub xy_range: f64,
    /// relative half-range of the object depth around `z_bar`
    pub depth_range: f64,
    pub occluders: usize,
    /// occluder half-size relative to the object's bounding radius, as seen
    /// from the camera
    pub occluder_coverage: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            trials: 100,
            seed: 0,
            // LINEMOD / Kinect v1 color camera
            k_t: CameraIntrinsics::new(572.4114, 573.57043, 325.2611, 242.04899, 640, 480)
                .expect("valid default camera"),
            xy_range: 0.05,
            depth_range: 0.2,
            occluders: 0,
            occluder_coverage: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JitterParams {
    /// degrees
    pub max_rot: f64,
    /// pixels
    pub max_reproj: f64,
}

impl Default for JitterParams {
    fn default() -> Self {
        JitterParams {
            max_rot: 20.0,
            max_reproj: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineParams {
    pub n_exemplars: usize,
    /// run once per listed `N` instead of once with `n_exemplars`
    pub sweep_n: Option<Vec<usize>>,
    pub pad: f64,
    pub max_correspondences: usize,
    pub ransac: RansacConfig,
}

impl Default for RefineParams {
    fn default() -> Self {
        RefineParams {
            n_exemplars: 4,
            sweep_n: None,
            pad: DEFAULT_PAD,
            max_correspondences: MAX_CORRESPONDENCES,
            ransac: RansacConfig::default(),
        }
    }
}

impl RefineParams {
    pub fn sweep(&self) -> Vec<usize> {
        self.sweep_n
            .clone()
            .unwrap_or_else(|| vec![self.n_exemplars])
    }

    pub fn refine_config(&self, n_exemplars: usize) -> RefineConfig {
        RefineConfig {
            n_exemplars,
            pad: self.pad,
            max_correspondences: self.max_correspondences,
            ransac: self.ransac,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowSource {
    #[default]
    Oracle,
    Directory,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowParams {
    pub source: FlowSource,
    /// `PFAF` files named `trial{id:05}_ex{id:05}.pfaf`, for `source = "directory"`
    pub dir: Option<PathBuf>,
    pub noise: NoiseParams,
}

/// Oracle degradation: a preset (`"exact"` or `"paper-gap"`) with optional
/// per-field overrides.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseParams {
    pub preset: Option<String>,
    pub gaussian_sigma: Option<f64>,
    pub outlier_ratio: Option<f64>,
    pub outlier_range: Option<f64>,
    pub dropout_ratio: Option<f64>,
    pub seed: u64,
}

impl NoiseParams {
    pub fn resolve(&self) -> Result<FlowNoiseSpec, HarnessError> {
        let base = match self.preset.as_deref() {
            None | Some("exact") => FlowNoiseSpec::exact(),
            Some("paper-gap") => FlowNoiseSpec::paper_gap(0),
            Some(other) => {
                return Err(HarnessError::Config(format!(
                    "unknown noise preset {other:?} (expected \"exact\" or \"paper-gap\")"
                )))
            }
        };
        let spec = FlowNoiseSpec {
            gaussian_sigma: self.gaussian_sigma.unwrap_or(base.gaussian_sigma),
            outlier_ratio: self.outlier_ratio.unwrap_or(base.outlier_ratio),
            outlier_range: self.outlier_range.unwrap_or(base.outlier_range),
            dropout_ratio: self.dropout_ratio.unwrap_or(base.dropout_ratio),
            seed: self.seed,
        };
        spec.validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(spec)
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema: CONFIG_SCHEMA,
            mesh: None,
            exemplars: ExemplarParams::default(),
            scene: SceneParams::default(),
            jitter: JitterParams::default(),
            refine: RefineParams::default(),
            flow: FlowParams::default(),
        }
    }
}

fn positive(name: &str, v: f64) -> Result<(), HarnessError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(HarnessError::Config(format!(
            "{name} must be positive, got {v}"
        )))
    }
}

fn non_negative(name: &str, v: f64) -> Result<(), HarnessError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(HarnessError::Config(format!(
            "{name} must be non-negative, got {v}"
        )))
    }
}

impl ExperimentConfig {
    /// Parses TOML and resolves relative paths against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, HarnessError> {
        let mut cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        if cfg.schema != CONFIG_SCHEMA {
            return Err(HarnessError::Config(format!(
                "config schema {} is not supported (expected {CONFIG_SCHEMA})",
                cfg.schema
            )));
        }
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base_dir.join(&*path);
                }
            }
        };
        resolve(&mut cfg.mesh);
        resolve(&mut cfg.exemplars.path);
        resolve(&mut cfg.flow.dir);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Checks ranges only; see [`validate_paths`](Self::validate_paths).
    pub fn validate(&self) -> Result<(), HarnessError> {
        let e = &self.exemplars;
        if e.count == 0 {
            return Err(HarnessError::Config(
                "exemplar count must be at least 1".into(),
            ));
        }
        positive("exemplars.z_bar", e.z_bar)?;
        positive("exemplars.radius_px", e.radius_px)?;
        let s = &self.scene;
        if s.trials == 0 {
            return Err(HarnessError::Config(
                "trial count must be at least 1".into(),
            ));
        }
        non_negative("scene.xy_range", s.xy_range)?;
        if !(0.0..1.0).contains(&s.depth_range) {
            return Err(HarnessError::Config(format!(
                "scene.depth_range must lie in [0, 1), got {}",
                s.depth_range
            )));
        }
        if s.occluders > 0 {
            positive("scene.occluder_coverage", s.occluder_coverage)?;
        }
        non_negative("jitter.max_rot", self.jitter.max_rot)?;
        non_negative("jitter.max_reproj", self.jitter.max_reproj)?;
        let r = &self.refine;
        let sweep = r.sweep();
        if sweep.is_empty() || sweep.contains(&0) {
            return Err(HarnessError::Config(
                "every exemplar count N must be at least 1".into(),
            ));
        }
        positive("refine.pad", r.pad)?;
        if r.max_correspondences < r.ransac.min_inliers {
            return Err(HarnessError::Config(
                "refine.max_correspondences is below ransac.min_inliers".into(),
            ));
        }
        r.ransac
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.flow.noise.resolve()?;
        if self.flow.source == FlowSource::Directory && self.flow.dir.is_none() {
            return Err(HarnessError::Config(
                "flow.source = \"directory\" needs flow.dir".into(),
            ));
        }
        Ok(())
    }

    /// Checks that every input path named by the config exists.
    pub fn validate_paths(&self) -> Result<(), HarnessError> {
        let inputs = [
            ("mesh", self.mesh.as_ref()),
            ("exemplars.path", self.exemplars.path.as_ref()),
            (
                "flow.dir",
                self.flow
                    .dir
                    .as_ref()
                    .filter(|_| self.flow.source == FlowSource::Directory),
            ),
        ];
        for (name, path) in inputs {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(HarnessError::io(
                        p,
                        std::io::Error::new(
                            std::io::ErrorKind::NotFound,
                            format!("{name} does not exist"),
                        ),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn load_mesh(&self) -> Result<MeshModel, HarnessError> {
        match &self.mesh {
            Some(p) => Ok(load_mesh(p)?),
            None => Ok(test_object()),
        }
    }

    pub fn exemplar_intrinsics(&self, mesh: &MeshModel) -> Result<CameraIntrinsics, HarnessError> {
        match self.exemplars.k_r {
            Some(k) => Ok(k),
            None => Ok(fit_exemplar_intrinsics(
                mesh,
                self.exemplars.z_bar,
                self.exemplars.radius_px,
            )?),
        }
    }

    /// Loads the configured exemplar set, or renders it when no path is set.
    pub fn exemplar_set(&self, mesh: &MeshModel) -> Result<ExemplarSet, HarnessError> {
        let e = &self.exemplars;
        let set = match &e.path {
            Some(p) => load_set(p)?,
            None => generate_exemplar_set(
                mesh,
                e.count,
                e.z_bar,
                &self.exemplar_intrinsics(mesh)?,
                e.seed,
            )?,
        };
        set.check_mesh(mesh)?;
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = ExperimentConfig::from_toml("schema = 1\n", Path::new("/base")).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn relative_paths_resolve_against_base() {
        let cfg = ExperimentConfig::from_toml(
            "schema = 1\nmesh = \"obj.ply\"\n[exemplars]\npath = \"/abs/set.pfax\"\n",
            Path::new("/base"),
        )
        .unwrap();
        assert_eq!(cfg.mesh.as_deref(), Some(Path::new("/base/obj.ply")));
        assert_eq!(
            cfg.exemplars.path.as_deref(),
            Some(Path::new("/abs/set.pfax"))
        );
    }

    #[test]
    fn rejects_bad_schema_and_unknown_keys() {
        assert!(ExperimentConfig::from_toml("schema = 2\n", Path::new(".")).is_err());
        assert!(
            ExperimentConfig::from_toml("schema = 1\n[scene]\ntrails = 3\n", Path::new("."))
                .is_err()
        );
    }

    #[test]
    fn range_checks() {
        let mut cfg = ExperimentConfig::default();
        cfg.scene.trials = 0;
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
        let mut cfg = ExperimentConfig::default();
        cfg.refine.sweep_n = Some(vec![1, 0]);
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.flow.noise.dropout_ratio = Some(1.5);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn noise_preset_with_override() {
        let n = NoiseParams {
            preset: Some("paper-gap".into()),
            dropout_ratio: Some(0.6),
            seed: 4,
            ..Default::default()
        };
        let spec = n.resolve().unwrap();
        assert_eq!(spec.gaussian_sigma, 1.0);
        assert_eq!(spec.outlier_ratio, 0.1);
        assert_eq!(spec.dropout_ratio, 0.6);
        assert_eq!(spec.seed, 4);
    }
}
