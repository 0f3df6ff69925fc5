//! Offline exemplar sets: generation, nearest-rotation retrieval, crop
//! sampling and the `PFAX` file format.
//!
//! Every exemplar is the mesh rendered at translation `(0, 0, z̄)` under one
//! Haar-random rotation, at `EXEMPLAR_SIZE²` resolution with intrinsics `K_r`.
//!
//! File layout (little-endian):
//!
//! ```text
//! "PFAX" | u32 version | u32 count | f64 z̄ | 6×f64 K_r (fx fy cx cy w h)
//! | 32-byte mesh hash | u32 name length | UTF-8 name
//! per exemplar: u32 id | 9×f64 rotation (row-major)
//!             | bit-packed mask (LSB first, row-major)
//!             | 3×f32 point per masked pixel | f32 shade per masked pixel
//! ```

use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::crop::{compute_crop, CropError, CropTransform};
use crate::geom::{
    geodesic_distance, project, sample_rotations, CameraIntrinsics, GeomError, MeshHash, MeshModel,
    RigidPose,
};
use crate::io_util::{pack_bits, packed_len, unpack_bits, ByteReader, Truncated};
use crate::render::{rasterize, CoordinateMap, EXEMPLAR_SIZE};

pub const SET_MAGIC: [u8; 4] = *b"PFAX";
pub const SET_VERSION: u32 = 1;

/// Exemplar count used for every object in the reference setup.
pub const DEFAULT_EXEMPLAR_COUNT: usize = 10_000;

/// Default fixed exemplar depth in meters.
pub const DEFAULT_Z_BAR: f64 = 1.0;

/// Bilinear samples whose four taps span more depth than this fraction of the
/// mean tap depth straddle a depth discontinuity and are rejected.
const DEPTH_GUARD: f64 = 0.01;

#[derive(Debug, Error)]
pub enum ExemplarError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {found:?}, expected \"PFAX\"")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported exemplar file version {found} (this build reads version {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error(transparent)]
    Truncated(#[from] Truncated),
    #[error("corrupt exemplar file: {0}")]
    Corrupt(String),
    #[error("mesh hash mismatch: exemplar set was built for {expected}, got {found}")]
    MeshMismatch { expected: MeshHash, found: MeshHash },
    #[error(transparent)]
    Crop(#[from] CropError),
}

/// One pre-rendered view with known pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Exemplar {
    id: u32,
    pose: RigidPose,
    k_r: CameraIntrinsics,
    coord_map: CoordinateMap,
    mesh_hash: MeshHash,
}

impl Exemplar {
    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn pose(&self) -> &RigidPose {
        &self.pose
    }

    pub fn k_r(&self) -> &CameraIntrinsics {
        &self.k_r
    }

    pub fn coord_map(&self) -> &CoordinateMap {
        &self.coord_map
    }

    pub fn mesh_hash(&self) -> MeshHash {
        self.mesh_hash
    }

    /// Crop `M_r` of this exemplar.
    pub fn crop(&self, mesh: &MeshModel, pad: f64) -> Result<CropTransform, ExemplarError> {
        Ok(compute_crop(
            &self.pose,
            &self.k_r,
            mesh,
            EXEMPLAR_SIZE,
            pad,
        )?)
    }

    /// Samples the coordinate map at every pixel center of the crop frame
    /// `M_r`, bilinearly, keeping only samples whose four taps are all on the
    /// object and on one continuous surface.
    pub fn crop_samples(&self, m_r: &CropTransform) -> ExemplarCrop {
        let size = m_r.out_size();
        let mut samples = Vec::with_capacity((size * size) as usize);
        for j in 0..size {
            for i in 0..size {
                let c = Vector2::new(i as f64 + 0.5, j as f64 + 0.5);
                samples.push(self.sample_bilinear(&m_r.apply_inverse(&c)));
            }
        }
        ExemplarCrop {
            exemplar_id: self.id,
            size,
            samples,
        }
    }

    fn sample_bilinear(&self, q: &Vector2<f64>) -> Option<CropSample> {
        let fx = q.x - 0.5;
        let fy = q.y - 0.5;
        let (x0, y0) = (fx.floor(), fy.floor());
        let (ax, ay) = (fx - x0, fy - y0);
        let (x0, y0) = (x0 as i64, y0 as i64);
        let map = &self.coord_map;
        let t00 = map.sample(x0, y0)?;
        let t10 = map.sample(x0 + 1, y0)?;
        let t01 = map.sample(x0, y0 + 1)?;
        let t11 = map.sample(x0 + 1, y0 + 1)?;
        let depths = [t00.depth, t10.depth, t01.depth, t11.depth];
        let lo = depths.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = depths.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo > DEPTH_GUARD * 0.25 * depths.iter().sum::<f64>() {
            return None;
        }
        let point = t00.point * ((1.0 - ax) * (1.0 - ay))
            + t10.point * (ax * (1.0 - ay))
            + t01.point * ((1.0 - ax) * ay)
            + t11.point * (ax * ay);
        let dx = (t10.point - t00.point) + (t11.point - t01.point);
        let dy = (t01.point - t00.point) + (t11.point - t10.point);
        let mut normal = dx.cross(&dy);
        // orient towards the exemplar camera
        if (self.pose.rotation() * normal).dot(&self.pose.transform(&point)) > 0.0 {
            normal = -normal;
        }
        Some(CropSample {
            point,
            normal: normal.try_normalize(0.0).unwrap_or_else(Vector3::zeros),
        })
    }
}

/// A model point sampled at an exemplar crop pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropSample {
    /// model frame, meters
    pub point: Vector3<f64>,
    /// model-frame unit surface normal facing the exemplar camera; zero if
    /// the local surface estimate is degenerate
    pub normal: Vector3<f64>,
}

/// Model points over an exemplar crop, row-major, `size²` entries.
#[derive(Debug, Clone)]
pub struct ExemplarCrop {
    pub exemplar_id: u32,
    pub size: u32,
    pub samples: Vec<Option<CropSample>>,
}

impl ExemplarCrop {
    #[inline]
    pub fn get(&self, i: u32, j: u32) -> Option<&CropSample> {
        self.samples[(j * self.size + i) as usize].as_ref()
    }

    pub fn mask(&self) -> Vec<bool> {
        self.samples.iter().map(Option::is_some).collect()
    }
}

/// Retrieval result: an exemplar with its rotation distance to the query.
#[derive(Debug, Clone, Copy)]
pub struct Retrieved<'a> {
    pub exemplar: &'a Exemplar,
    /// degrees
    pub distance: f64,
}

/// All exemplars of one object.
#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarSet {
    object_name: String,
    mesh_hash: MeshHash,
    z_bar: f64,
    k_r: CameraIntrinsics,
    exemplars: Vec<Exemplar>,
}

fn exemplar_pose(rotation: Matrix3<f64>, z_bar: f64) -> Result<RigidPose, GeomError> {
    RigidPose::new(rotation, Vector3::new(0.0, 0.0, z_bar))
}

/// Projected radius, in pixels, of the mesh bound under [`fit_exemplar_intrinsics`].
pub const DEFAULT_EXEMPLAR_RADIUS_PX: f64 = 48.0;

/// Centered 256×256 exemplar intrinsics whose focal length keeps every
/// vertex within `radius_px` of the image center for any rotation at depth
/// `z_bar`.
pub fn fit_exemplar_intrinsics(
    mesh: &MeshModel,
    z_bar: f64,
    radius_px: f64,
) -> Result<CameraIntrinsics, ExemplarError> {
    let r0 = mesh.bounding_radius();
    let half = EXEMPLAR_SIZE as f64 / 2.0;
    if !(radius_px > 0.0 && radius_px < half) {
        return Err(ExemplarError::Config(format!(
            "exemplar radius must lie in (0, {half}) px, got {radius_px}"
        )));
    }
    if !(z_bar > r0) || !z_bar.is_finite() {
        return Err(ExemplarError::Config(format!(
            "z_bar={z_bar} must exceed the mesh bound {r0:.4} m around the model origin"
        )));
    }
    let f = radius_px * (z_bar - r0) / r0;
    CameraIntrinsics::new(f, f, half, half, EXEMPLAR_SIZE, EXEMPLAR_SIZE)
        .map_err(|e| ExemplarError::Config(e.to_string()))
}

/// Renders `n` exemplars with rotations from `sample_rotations(n, seed)`.
pub fn generate_exemplar_set(
    mesh: &MeshModel,
    n: usize,
    z_bar: f64,
    k_r: &CameraIntrinsics,
    seed: u64,
) -> Result<ExemplarSet, ExemplarError> {
    if n == 0 {
        return Err(ExemplarError::Config(
            "exemplar count must be at least 1".into(),
        ));
    }
    if !(z_bar > 0.0) || !z_bar.is_finite() {
        return Err(ExemplarError::Config(format!(
            "z_bar must be positive, got {z_bar}"
        )));
    }
    if k_r.width() != EXEMPLAR_SIZE || k_r.height() != EXEMPLAR_SIZE {
        return Err(ExemplarError::Config(format!(
            "exemplar intrinsics must describe a {EXEMPLAR_SIZE}x{EXEMPLAR_SIZE} image, got {}x{}",
            k_r.width(),
            k_r.height()
        )));
    }
    let rotations = sample_rotations(n, seed);
    let exemplars = rotations
        .into_par_iter()
        .enumerate()
        .map(|(id, r)| {
            let pose = exemplar_pose(r, z_bar).map_err(|e| ExemplarError::Config(e.to_string()))?;
            for p in mesh.vertices() {
                let inside = project(k_r, &pose, p)
                    .map(|u| k_r.contains(&u))
                    .unwrap_or(false);
                if !inside {
                    return Err(ExemplarError::Config(format!(
                        "mesh leaves the exemplar frustum at z_bar={z_bar} (exemplar {id}); \
                         increase z_bar or reduce the exemplar focal length"
                    )));
                }
            }
            let coord_map = rasterize(mesh, &pose, k_r, (EXEMPLAR_SIZE, EXEMPLAR_SIZE));
            Ok(Exemplar {
                id: id as u32,
                pose,
                k_r: *k_r,
                coord_map,
                mesh_hash: mesh.hash(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ExemplarSet {
        object_name: "object".into(),
        mesh_hash: mesh.hash(),
        z_bar,
        k_r: *k_r,
        exemplars,
    })
}

/// Mean over `queries` of the rotation distance to the nearest of `rotations`.
pub fn mean_nearest_distance(rotations: &[Matrix3<f64>], queries: &[Matrix3<f64>]) -> f64 {
    let total: f64 = queries
        .par_iter()
        .map(|q| {
            rotations
                .iter()
                .map(|r| geodesic_distance(q, r))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    total / queries.len() as f64
}

impl ExemplarSet {
    pub fn with_object_name(mut self, name: impl Into<String>) -> Self {
        self.object_name = name.into();
        self
    }

    pub fn object_name(&self) -> &str {
        &self.object_name
    }

    pub fn mesh_hash(&self) -> MeshHash {
        self.mesh_hash
    }

    pub fn z_bar(&self) -> f64 {
        self.z_bar
    }

    pub fn k_r(&self) -> &CameraIntrinsics {
        &self.k_r
    }

    pub fn exemplars(&self) -> &[Exemplar] {
        &self.exemplars
    }

    pub fn len(&self) -> usize {
        self.exemplars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exemplars.is_empty()
    }

    pub fn rotations(&self) -> Vec<Matrix3<f64>> {
        self.exemplars.iter().map(|e| *e.pose.rotation()).collect()
    }

    /// The first `n` exemplars as a set of their own.
    pub fn prefix(&self, n: usize) -> ExemplarSet {
        ExemplarSet {
            exemplars: self.exemplars[..n.min(self.len())].to_vec(),
            object_name: self.object_name.clone(),
            ..*self
        }
    }

    /// Refuses use with a different mesh than the one rendered.
    pub fn check_mesh(&self, mesh: &MeshModel) -> Result<(), ExemplarError> {
        if mesh.hash() != self.mesh_hash {
            return Err(ExemplarError::MeshMismatch {
                expected: self.mesh_hash,
                found: mesh.hash(),
            });
        }
        Ok(())
    }

    /// The `n` exemplars with rotation closest to the query, nearest first;
    /// ties go to the lower id.
    pub fn query_nearest(
        &self,
        query: &RigidPose,
        n: usize,
    ) -> Result<Vec<Retrieved<'_>>, ExemplarError> {
        if self.is_empty() {
            return Err(ExemplarError::Config("exemplar set is empty".into()));
        }
        if n == 0 {
            return Err(ExemplarError::Config(
                "must retrieve at least one exemplar".into(),
            ));
        }
        let mut ranked: Vec<Retrieved<'_>> = self
            .exemplars
            .iter()
            .map(|e| Retrieved {
                exemplar: e,
                distance: geodesic_distance(query.rotation(), e.pose.rotation()),
            })
            .collect();
        ranked.sort_by(|a, b| {
            a.distance
                .total_cmp(&b.distance)
                .then(a.exemplar.id.cmp(&b.exemplar.id))
        });
        ranked.truncate(n);
        Ok(ranked)
    }

    /// Mean nearest-exemplar distance (degrees) over `n_queries` random
    /// rotations drawn with `seed`.
    pub fn mean_query_distance(&self, n_queries: usize, seed: u64) -> Result<f64, ExemplarError> {
        if self.is_empty() {
            return Err(ExemplarError::Config("exemplar set is empty".into()));
        }
        if n_queries == 0 {
            return Err(ExemplarError::Config("need at least one query".into()));
        }
        Ok(mean_nearest_distance(
            &self.rotations(),
            &sample_rotations(n_queries, seed),
        ))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&SET_MAGIC);
        out.extend_from_slice(&SET_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.exemplars.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.z_bar.to_le_bytes());
        let k = &self.k_r;
        for v in [
            k.fx(),
            k.fy(),
            k.cx(),
            k.cy(),
            k.width() as f64,
            k.height() as f64,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.mesh_hash.0);
        out.extend_from_slice(&(self.object_name.len() as u32).to_le_bytes());
        out.extend_from_slice(self.object_name.as_bytes());
        for e in &self.exemplars {
            out.extend_from_slice(&e.id.to_le_bytes());
            for v in e.pose.to_array().0 {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&pack_bits(&e.coord_map.mask_image()));
            let masked: Vec<([f32; 3], f32)> = e.coord_map.raw_masked().collect();
            for (p, _) in &masked {
                for c in p {
                    out.extend_from_slice(&c.to_le_bytes());
                }
            }
            for (_, s) in &masked {
                out.extend_from_slice(&s.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ExemplarError> {
        let mut r = ByteReader::new(bytes);
        let magic = r.take(4.min(bytes.len())).expect("length clamped");
        if magic != SET_MAGIC {
            return Err(ExemplarError::BadMagic {
                found: magic.to_vec(),
            });
        }
        let version = r.u32()?;
        if version != SET_VERSION {
            return Err(ExemplarError::VersionMismatch {
                found: version,
                expected: SET_VERSION,
            });
        }
        let count = r.u32()? as usize;
        let z_bar = r.f64()?;
        let mut kv = [0.0; 6];
        for v in &mut kv {
            *v = r.f64()?;
        }
        let dim = |v: f64| -> Result<u32, ExemplarError> {
            if v.fract() == 0.0 && v >= 1.0 && v <= u32::MAX as f64 {
                Ok(v as u32)
            } else {
                Err(ExemplarError::Corrupt(format!("bad image dimension {v}")))
            }
        };
        let k_r = CameraIntrinsics::new(kv[0], kv[1], kv[2], kv[3], dim(kv[4])?, dim(kv[5])?)
            .map_err(|e| ExemplarError::Corrupt(e.to_string()))?;
        if k_r.width() != EXEMPLAR_SIZE || k_r.height() != EXEMPLAR_SIZE {
            return Err(ExemplarError::Corrupt(format!(
                "exemplar image size {}x{} is not {EXEMPLAR_SIZE}x{EXEMPLAR_SIZE}",
                k_r.width(),
                k_r.height()
            )));
        }
        if !(z_bar > 0.0) || !z_bar.is_finite() {
            return Err(ExemplarError::Corrupt(format!("bad z_bar {z_bar}")));
        }
        let mesh_hash = MeshHash(r.array()?);
        let name_len = r.u32()? as usize;
        let object_name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| ExemplarError::Corrupt("object name is not UTF-8".into()))?;

        let pixels = (EXEMPLAR_SIZE * EXEMPLAR_SIZE) as usize;
        let mut exemplars = Vec::with_capacity(count.min(1 << 16));
        for expected_id in 0..count {
            let id = r.u32()?;
            if id as usize != expected_id {
                return Err(ExemplarError::Corrupt(format!(
                    "exemplar ids must be dense: expected {expected_id}, found {id}"
                )));
            }
            let mut rot = [0.0; 9];
            for v in &mut rot {
                *v = r.f64()?;
            }
            let pose = exemplar_pose(Matrix3::from_row_slice(&rot), z_bar)
                .map_err(|e| ExemplarError::Corrupt(format!("exemplar {id}: {e}")))?;
            let mask = unpack_bits(r.take(packed_len(pixels))?, pixels);
            let n_masked = mask.iter().filter(|&&m| m).count();
            let mut points = Vec::with_capacity(n_masked);
            for _ in 0..n_masked {
                points.push([r.f32()?, r.f32()?, r.f32()?]);
            }
            let mut shades = Vec::with_capacity(n_masked);
            for _ in 0..n_masked {
                shades.push(r.f32()?);
            }
            let mut it = points.into_iter().zip(shades);
            let dense: Vec<Option<([f32; 3], f32)>> = mask
                .iter()
                .map(|&m| if m { it.next() } else { None })
                .collect();
            if dense.iter().flatten().any(|(p, _)| {
                !p.iter().all(|c| c.is_finite()) || !(crate::render::point_depth(&pose, p) > 0.0)
            }) {
                return Err(ExemplarError::Corrupt(format!(
                    "exemplar {id} has a masked point that is non-finite or behind the camera"
                )));
            }
            let coord_map = CoordinateMap::from_dense(EXEMPLAR_SIZE, EXEMPLAR_SIZE, &pose, &dense);
            exemplars.push(Exemplar {
                id,
                pose,
                k_r,
                coord_map,
                mesh_hash,
            });
        }
        if r.remaining() != 0 {
            return Err(ExemplarError::Corrupt(format!(
                "{} trailing bytes after the last exemplar",
                r.remaining()
            )));
        }
        Ok(ExemplarSet {
            object_name,
            mesh_hash,
            z_bar,
            k_r,
            exemplars,
        })
    }
}

pub fn save_set(set: &ExemplarSet, path: impl AsRef<Path>) -> Result<(), ExemplarError> {
    let path = path.as_ref();
    std::fs::write(path, set.to_bytes()).map_err(|source| ExemplarError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_set(path: impl AsRef<Path>) -> Result<ExemplarSet, ExemplarError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| ExemplarError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ExemplarSet::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::test_object;

    fn k_r() -> CameraIntrinsics {
        CameraIntrinsics::new(600.0, 600.0, 128.0, 128.0, 256, 256).unwrap()
    }

    fn small_set(n: usize) -> ExemplarSet {
        generate_exemplar_set(&test_object(), n, 1.0, &k_r(), 42).unwrap()
    }

    #[test]
    fn single_exemplar_reprojects() {
        let set = small_set(1);
        let e = &set.exemplars()[0];
        assert_eq!(e.pose().translation(), &Vector3::new(0.0, 0.0, 1.0));
        assert!(e.coord_map().mask_count() > 1000);
        for (x, y, s) in e.coord_map().masked_pixels() {
            let u = project(e.k_r(), e.pose(), &s.point).unwrap();
            assert!((u - Vector2::new(x as f64 + 0.5, y as f64 + 0.5)).norm() < 0.71);
        }
    }

    #[test]
    fn generation_rejects_bad_configuration() {
        let mesh = test_object();
        assert!(matches!(
            generate_exemplar_set(&mesh, 0, 1.0, &k_r(), 0),
            Err(ExemplarError::Config(_))
        ));
        // object far too large for the frame at this depth
        assert!(matches!(
            generate_exemplar_set(&mesh, 3, 0.2, &k_r(), 0),
            Err(ExemplarError::Config(_))
        ));
        let wrong = CameraIntrinsics::new(600.0, 600.0, 320.0, 240.0, 640, 480).unwrap();
        assert!(generate_exemplar_set(&mesh, 1, 1.0, &wrong, 0).is_err());
    }

    #[test]
    fn query_ordering_and_limits() {
        let set = small_set(12);
        let target = *set.exemplars()[5].pose();
        let one = set.query_nearest(&target, 1).unwrap();
        assert_eq!(one[0].exemplar.id(), 5);
        assert_eq!(one[0].distance, 0.0);

        let four = set.query_nearest(&target, 4).unwrap();
        assert_eq!(four.len(), 4);
        assert!(four.windows(2).all(|w| w[0].distance <= w[1].distance));
        let mut ids: Vec<u32> = four.iter().map(|r| r.exemplar.id()).collect();
        ids.dedup();
        assert_eq!(ids.len(), 4);

        assert_eq!(set.query_nearest(&target, 100).unwrap().len(), 12);
        assert!(set.query_nearest(&target, 0).is_err());
        assert!(set.prefix(0).query_nearest(&target, 1).is_err());
    }

    #[test]
    fn round_trip_and_corruption() {
        let set = small_set(10).with_object_name("block");
        let bytes = set.to_bytes();
        let back = ExemplarSet::from_bytes(&bytes).unwrap();
        assert_eq!(back, set);
        assert_eq!(back.to_bytes(), bytes);

        let mut bad = bytes.clone();
        bad[1] ^= 0xff;
        assert!(matches!(
            ExemplarSet::from_bytes(&bad),
            Err(ExemplarError::BadMagic { .. })
        ));

        let mut newer = bytes.clone();
        newer[4..8].copy_from_slice(&2u32.to_le_bytes());
        match ExemplarSet::from_bytes(&newer) {
            Err(
                e @ ExemplarError::VersionMismatch {
                    found: 2,
                    expected: 1,
                },
            ) => {
                let msg = e.to_string();
                assert!(msg.contains('2') && msg.contains('1'), "{msg}");
            }
            other => panic!("{other:?}"),
        }

        assert!(matches!(
            ExemplarSet::from_bytes(&bytes[..bytes.len() - 3]),
            Err(ExemplarError::Truncated(_))
        ));
        assert!(matches!(
            ExemplarSet::from_bytes(&[]),
            Err(ExemplarError::BadMagic { .. })
        ));
    }

    #[test]
    fn mesh_binding() {
        let set = small_set(1);
        assert!(set.check_mesh(&test_object()).is_ok());
        let other = crate::synthetic::box_mesh(Vector3::zeros(), Vector3::new(0.05, 0.05, 0.05), 1);
        assert!(matches!(
            set.check_mesh(&other),
            Err(ExemplarError::MeshMismatch { .. })
        ));
    }

    #[test]
    fn query_distance_contains_itself_and_is_deterministic() {
        let set = small_set(20);
        let a = set.mean_query_distance(50, 7).unwrap();
        assert_eq!(a, set.mean_query_distance(50, 7).unwrap());
        let own = mean_nearest_distance(&set.rotations(), &set.rotations()[..3]);
        assert_eq!(own, 0.0);
    }

    #[test]
    fn crop_samples_stay_on_object() {
        let mesh = test_object();
        let set = small_set(2);
        for e in set.exemplars() {
            let m_r = e.crop(&mesh, 1.2).unwrap();
            let crop = e.crop_samples(&m_r);
            let valid = crop.samples.iter().flatten().count();
            assert!(valid > 10_000, "{valid}");
            for j in (0..256).step_by(7) {
                for i in (0..256).step_by(7) {
                    if let Some(s) = crop.get(i, j) {
                        // the sample reprojects near the crop pixel's preimage
                        let u = project(e.k_r(), e.pose(), &s.point).unwrap();
                        let c = m_r.apply_inverse(&Vector2::new(i as f64 + 0.5, j as f64 + 0.5));
                        assert!((u - c).norm() < 0.75, "{:?} vs {:?}", u, c);
                        assert!((s.normal.norm() - 1.0).abs() < 1e-9);
                    }
                }
            }
        }
    }
}
