//! Dense flow between an exemplar crop and a target crop.
//!
//! A [`FlowField`] lives on the exemplar crop grid: the vector stored at crop
//! pixel `ũ^r` is `ũ^t − ũ^r`, where `ũ^t` is the matching target-crop
//! location. The in-tree provider is [`OracleFlow`], which derives the flow
//! from ground truth; any other source enters through the `PFAF` file format:
//!
//! ```text
//! "PFAF" | u32 version | u32 width | u32 height
//! | bit-packed valid mask (LSB first, row-major)
//! | f32 du, f32 dv per valid pixel, row-major
//! ```

use std::path::{Path, PathBuf};

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crop::{image_to_crop, CropTransform};
use crate::exemplar::Exemplar;
use crate::geom::{GeomError, RigidPose};
use crate::io_util::{pack_bits, packed_len, unpack_bits, ByteReader, Truncated};
use crate::render::{rasterize_scene, SceneRender, SceneSpec};
use crate::seed::derive_seed;

pub const FLOW_MAGIC: [u8; 4] = *b"PFAF";
pub const FLOW_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("mesh hash mismatch between exemplar ({exemplar}) and target scene ({scene})")]
    MeshMismatch { exemplar: String, scene: String },
    #[error(transparent)]
    Geometry(#[from] GeomError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {found:?}, expected \"PFAF\"")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported flow file version {found} (this build reads version {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("truncated flow file: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("corrupt flow file: {0}")]
    Corrupt(String),
}

impl From<Truncated> for FlowError {
    fn from(t: Truncated) -> Self {
        FlowError::Truncated {
            expected: t.expected,
            actual: t.actual,
        }
    }
}

/// Per-pixel displacements with a validity mask. Invalid pixels store zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: u32,
    height: u32,
    du: Vec<f32>,
    dv: Vec<f32>,
    valid: Vec<bool>,
}

impl FlowField {
    /// A field with no valid pixel.
    pub fn invalid(width: u32, height: u32) -> Self {
        let n = (width * height) as usize;
        FlowField {
            width,
            height,
            du: vec![0.0; n],
            dv: vec![0.0; n],
            valid: vec![false; n],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    fn index(&self, i: u32, j: u32) -> usize {
        (j * self.width + i) as usize
    }

    /// Stores a vector; non-finite vectors leave the pixel invalid.
    pub fn set(&mut self, i: u32, j: u32, flow: Vector2<f64>) {
        let k = self.index(i, j);
        let (du, dv) = (flow.x as f32, flow.y as f32);
        if du.is_finite() && dv.is_finite() {
            self.du[k] = du;
            self.dv[k] = dv;
            self.valid[k] = true;
        } else {
            self.invalidate(i, j);
        }
    }

    pub fn invalidate(&mut self, i: u32, j: u32) {
        let k = self.index(i, j);
        self.du[k] = 0.0;
        self.dv[k] = 0.0;
        self.valid[k] = false;
    }

    #[inline]
    pub fn get(&self, i: u32, j: u32) -> Option<Vector2<f64>> {
        let k = self.index(i, j);
        self.valid[k].then(|| Vector2::new(self.du[k] as f64, self.dv[k] as f64))
    }

    pub fn is_valid(&self, i: u32, j: u32) -> bool {
        self.valid[self.index(i, j)]
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Valid pixels in row-major order.
    pub fn iter_valid(&self) -> impl Iterator<Item = (u32, u32, Vector2<f64>)> + '_ {
        (0..self.height).flat_map(move |j| {
            (0..self.width).filter_map(move |i| self.get(i, j).map(|f| (i, j, f)))
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out =
            Vec::with_capacity(16 + packed_len(self.valid.len()) + 8 * self.valid_count());
        out.extend_from_slice(&FLOW_MAGIC);
        out.extend_from_slice(&FLOW_VERSION.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&pack_bits(&self.valid));
        for k in 0..self.valid.len() {
            if self.valid[k] {
                out.extend_from_slice(&self.du[k].to_le_bytes());
                out.extend_from_slice(&self.dv[k].to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FlowError> {
        if bytes.len() < 4 || bytes[..4] != FLOW_MAGIC {
            return Err(FlowError::BadMagic {
                found: bytes[..bytes.len().min(4)].to_vec(),
            });
        }
        let mut r = ByteReader::new(bytes);
        r.take(4)?;
        let version = r.u32()?;
        if version != FLOW_VERSION {
            return Err(FlowError::VersionMismatch {
                found: version,
                expected: FLOW_VERSION,
            });
        }
        let width = r.u32()?;
        let height = r.u32()?;
        let n = (width as usize)
            .checked_mul(height as usize)
            .filter(|&n| n > 0 && n <= 1 << 28)
            .ok_or_else(|| FlowError::Corrupt(format!("implausible flow size {width}x{height}")))?;
        let mask_bytes = packed_len(n);
        if r.remaining() < mask_bytes {
            return Err(FlowError::Truncated {
                expected: r.position() + mask_bytes,
                actual: bytes.len(),
            });
        }
        let valid = unpack_bits(r.take(mask_bytes)?, n);
        let n_valid = valid.iter().filter(|&&v| v).count();
        let body = 8 * n_valid;
        if r.remaining() < body {
            return Err(FlowError::Truncated {
                expected: r.position() + body,
                actual: bytes.len(),
            });
        }
        if r.remaining() > body {
            return Err(FlowError::Corrupt(format!(
                "{} trailing bytes after flow body",
                r.remaining() - body
            )));
        }
        let mut field = FlowField::invalid(width, height);
        for (k, &v) in valid.iter().enumerate() {
            if v {
                let (du, dv) = (r.f32()?, r.f32()?);
                if !du.is_finite() || !dv.is_finite() {
                    return Err(FlowError::Corrupt(format!("non-finite flow at pixel {k}")));
                }
                field.du[k] = du;
                field.dv[k] = dv;
                field.valid[k] = true;
            }
        }
        Ok(field)
    }
}

pub fn save_flow(flow: &FlowField, path: impl AsRef<Path>) -> Result<(), FlowError> {
    let path = path.as_ref();
    std::fs::write(path, flow.to_bytes()).map_err(|source| FlowError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_flow(path: impl AsRef<Path>) -> Result<FlowField, FlowError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| FlowError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    FlowField::from_bytes(&bytes)
}

/// Synthetic degradation standing in for the error of a learned flow model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowNoiseSpec {
    /// pixels
    pub gaussian_sigma: f64,
    pub outlier_ratio: f64,
    /// pixels; outliers are uniform in `[−range, range]²`
    pub outlier_range: f64,
    pub dropout_ratio: f64,
    pub seed: u64,
}

impl FlowNoiseSpec {
    pub const fn exact() -> Self {
        FlowNoiseSpec {
            gaussian_sigma: 0.0,
            outlier_ratio: 0.0,
            outlier_range: 0.0,
            dropout_ratio: 0.0,
            seed: 0,
        }
    }

    /// σ = 1 px, 10 % outliers within ±32 px, 20 % dropout.
    pub const fn paper_gap(seed: u64) -> Self {
        FlowNoiseSpec {
            gaussian_sigma: 1.0,
            outlier_ratio: 0.1,
            outlier_range: 32.0,
            dropout_ratio: 0.2,
            seed,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        FlowNoiseSpec { seed, ..self }
    }

    pub fn is_exact(&self) -> bool {
        self.gaussian_sigma == 0.0 && self.outlier_ratio == 0.0 && self.dropout_ratio == 0.0
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        let ratio = |v: f64| (0.0..=1.0).contains(&v);
        if !ratio(self.outlier_ratio) || !ratio(self.dropout_ratio) {
            return Err(FlowError::Config(format!(
                "noise ratios must lie in [0, 1] (outliers {}, dropout {})",
                self.outlier_ratio, self.dropout_ratio
            )));
        }
        if !(self.gaussian_sigma >= 0.0)
            || !(self.outlier_range >= 0.0)
            || !self.gaussian_sigma.is_finite()
            || !self.outlier_range.is_finite()
        {
            return Err(FlowError::Config(format!(
                "sigma and outlier range must be finite and non-negative (sigma {}, range {})",
                self.gaussian_sigma, self.outlier_range
            )));
        }
        Ok(())
    }
}

/// Adds Gaussian noise to valid vectors, replaces a fraction with uniform
/// outliers and drops another fraction. Valid pixels are visited row-major
/// with one seeded generator, so output is deterministic per seed.
pub fn degrade_flow(flow: &FlowField, spec: &FlowNoiseSpec) -> Result<FlowField, FlowError> {
    spec.validate()?;
    let mut out = flow.clone();
    if spec.is_exact() {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = (spec.gaussian_sigma > 0.0)
        .then(|| Normal::new(0.0, spec.gaussian_sigma).expect("sigma validated"));
    for k in 0..out.valid.len() {
        if !out.valid[k] {
            continue;
        }
        if let Some(n) = &noise {
            out.du[k] = (out.du[k] as f64 + n.sample(&mut rng)) as f32;
            out.dv[k] = (out.dv[k] as f64 + n.sample(&mut rng)) as f32;
        }
        if spec.outlier_ratio > 0.0 && rng.random::<f64>() < spec.outlier_ratio {
            let r = spec.outlier_range;
            out.du[k] = (r * (2.0 * rng.random::<f64>() - 1.0)) as f32;
            out.dv[k] = (r * (2.0 * rng.random::<f64>() - 1.0)) as f32;
        }
        if spec.dropout_ratio > 0.0 && rng.random::<f64>() < spec.dropout_ratio {
            out.du[k] = 0.0;
            out.dv[k] = 0.0;
            out.valid[k] = false;
        }
    }
    Ok(out)
}

/// Source of exemplar-to-target crop flow.
pub trait FlowProvider: Sync {
    fn flow(
        &self,
        exemplar: &Exemplar,
        m_r: &CropTransform,
        m_t: &CropTransform,
    ) -> Result<FlowField, FlowError>;
}

/// Ground-truth flow from a rendered target scene, optionally degraded.
///
/// A crop pixel is left invalid when its model point is occluded in the
/// target (scene depth below the point's depth minus ε), faces away from the
/// target camera, leaves the target image, or leaves the target crop.
#[derive(Debug, Clone)]
pub struct OracleFlow {
    scene: SceneSpec,
    render: SceneRender,
    noise: FlowNoiseSpec,
}

impl OracleFlow {
    pub fn new(scene: &SceneSpec) -> Result<Self, FlowError> {
        let render = rasterize_scene(scene, (scene.k.width(), scene.k.height()))?;
        Ok(OracleFlow {
            scene: scene.clone(),
            render,
            noise: FlowNoiseSpec::exact(),
        })
    }

    /// Degrades every flow with `noise`; each exemplar draws from its own
    /// stream derived from `noise.seed` and the exemplar id.
    pub fn with_noise(mut self, noise: FlowNoiseSpec) -> Result<Self, FlowError> {
        noise.validate()?;
        self.noise = noise;
        Ok(self)
    }

    pub fn scene(&self) -> &SceneSpec {
        &self.scene
    }

    pub fn render(&self) -> &SceneRender {
        &self.render
    }

    /// Depth slack of the occlusion test for exemplars rendered at `z_bar`.
    pub fn occlusion_epsilon(z_bar: f64) -> f64 {
        (1e-3 * z_bar).max(1e-4)
    }

    /// Exact flow, before degradation.
    pub fn exact_flow(
        &self,
        exemplar: &Exemplar,
        m_r: &CropTransform,
        m_t: &CropTransform,
    ) -> Result<FlowField, FlowError> {
        if exemplar.mesh_hash() != self.scene.object.hash() {
            return Err(FlowError::MeshMismatch {
                exemplar: exemplar.mesh_hash().to_hex(),
                scene: self.scene.object.hash().to_hex(),
            });
        }
        if m_r.out_size() != m_t.out_size() {
            return Err(FlowError::Config(format!(
                "exemplar crop is {}px but target crop is {}px",
                m_r.out_size(),
                m_t.out_size()
            )));
        }
        let gt: &RigidPose = &self.scene.object_pose;
        let k_t = &self.scene.k;
        let k_r = exemplar.k_r();
        let eps = Self::occlusion_epsilon(exemplar.pose().translation().z);
        let crop = exemplar.crop_samples(m_r);
        let size = crop.size;
        let mut flow = FlowField::invalid(size, size);
        for j in 0..size {
            for i in 0..size {
                let Some(s) = crop.get(i, j) else { continue };
                let x = gt.transform(&s.point);
                if !(x.z > 0.0) {
                    continue;
                }
                if s.normal != nalgebra::Vector3::zeros()
                    && (gt.rotation() * s.normal).dot(&x) >= 0.0
                {
                    continue;
                }
                let u_t = k_t.project_camera_point(&x)?;
                if !k_t.contains(&u_t) {
                    continue;
                }
                let scene_depth = self
                    .render
                    .depth_at(u_t.x.floor() as i64, u_t.y.floor() as i64);
                if scene_depth < x.z - eps {
                    continue;
                }
                let crop_t = image_to_crop(&u_t, m_t, k_r, k_t);
                if !m_t.contains(&crop_t) {
                    continue;
                }
                flow.set(i, j, crop_t - Vector2::new(i as f64 + 0.5, j as f64 + 0.5));
            }
        }
        Ok(flow)
    }
}

impl FlowProvider for OracleFlow {
    fn flow(
        &self,
        exemplar: &Exemplar,
        m_r: &CropTransform,
        m_t: &CropTransform,
    ) -> Result<FlowField, FlowError> {
        let exact = self.exact_flow(exemplar, m_r, m_t)?;
        if self.noise.is_exact() {
            return Ok(exact);
        }
        let spec = self
            .noise
            .with_seed(derive_seed(self.noise.seed, exemplar.id() as u64));
        degrade_flow(&exact, &spec)
    }
}

/// Ground-truth flow for one exemplar against a scene whose object sits at
/// `target_gt`.
pub fn oracle_flow(
    exemplar: &Exemplar,
    m_r: &CropTransform,
    target_scene: &SceneSpec,
    target_gt: &RigidPose,
    m_t: &CropTransform,
) -> Result<FlowField, FlowError> {
    let mut scene = target_scene.clone();
    scene.object_pose = *target_gt;
    OracleFlow::new(&scene)?.exact_flow(exemplar, m_r, m_t)
}

/// File name under which the flow of `exemplar_id` for `trial_id` is stored.
pub fn flow_file_name(trial_id: u32, exemplar_id: u32) -> String {
    format!("trial{trial_id:05}_ex{exemplar_id:05}.pfaf")
}

/// Flow ingested from `PFAF` files of one trial inside a directory.
#[derive(Debug, Clone)]
pub struct FlowDirectory {
    pub dir: PathBuf,
    pub trial_id: u32,
}

impl FlowProvider for FlowDirectory {
    fn flow(
        &self,
        exemplar: &Exemplar,
        m_r: &CropTransform,
        _m_t: &CropTransform,
    ) -> Result<FlowField, FlowError> {
        let flow = load_flow(self.dir.join(flow_file_name(self.trial_id, exemplar.id())))?;
        if flow.width() != m_r.out_size() || flow.height() != m_r.out_size() {
            return Err(FlowError::Config(format!(
                "flow is {}x{} but crops are {}x{}",
                flow.width(),
                flow.height(),
                m_r.out_size(),
                m_r.out_size()
            )));
        }
        Ok(flow)
    }
}
