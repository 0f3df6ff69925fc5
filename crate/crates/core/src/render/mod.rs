//! Mesh loading and z-buffer rasterization into per-pixel model-coordinate
//! maps.
//!
//! A [`CoordinateMap`] records, for every pixel covered by the object, the
//! model-frame point visible through the pixel center. Rasterization uses a
//! top-left fill rule and perspective-correct interpolation, so a masked
//! pixel's point reprojects onto that pixel's center up to float rounding.

mod load;

pub use load::{load_mesh, parse_mesh, write_obj, MeshFormat, MeshLoadError};

use nalgebra::{Vector2, Vector3};

use crate::geom::{CameraIntrinsics, GeomError, MeshModel, RigidPose};

/// Side length of exemplar renders and flow crops.
pub const EXEMPLAR_SIZE: u32 = 256;

/// Camera-frame near plane used for clipping, in meters.
const NEAR_PLANE: f64 = 1e-6;

/// Depth ties closer than this keep the lower-index triangle.
const DEPTH_TIE: f64 = 1e-9;

/// Data stored for one covered pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelSample {
    /// model-frame point (meters)
    pub point: Vector3<f64>,
    /// camera-frame depth (meters)
    pub depth: f64,
    /// Lambertian intensity in `[0, 1]`
    pub shade: f32,
}

/// Axis-aligned pixel rectangle `[x0, x0 + w) × [y0, y0 + h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub(crate) struct Window {
    pub x0: u32,
    pub y0: u32,
    pub w: u32,
    pub h: u32,
}

/// Per-pixel model points, depth, mask and shade of one rendered object.
///
/// Only the tight bounding window of the mask is stored. Points, depth and
/// shade are single precision; depth is always the camera-frame depth of the
/// stored (rounded) point so it can be rebuilt exactly from the points and
/// the render pose.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateMap {
    width: u32,
    height: u32,
    window: Window,
    mask: Vec<bool>,
    points: Vec<[f32; 3]>,
    depth: Vec<f32>,
    shade: Vec<f32>,
}

impl CoordinateMap {
    pub fn empty(width: u32, height: u32) -> Self {
        CoordinateMap {
            width,
            height,
            window: Window::default(),
            mask: Vec::new(),
            points: Vec::new(),
            depth: Vec::new(),
            shade: Vec::new(),
        }
    }

    /// Builds a compact map from full-frame per-pixel samples (row-major).
    pub(crate) fn from_dense(
        width: u32,
        height: u32,
        pose: &RigidPose,
        dense: &[Option<([f32; 3], f32)>],
    ) -> Self {
        debug_assert_eq!(dense.len(), (width * height) as usize);
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
        for (i, d) in dense.iter().enumerate() {
            if d.is_some() {
                let (x, y) = (i as u32 % width, i as u32 / width);
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
        if x0 == u32::MAX {
            return Self::empty(width, height);
        }
        let window = Window {
            x0,
            y0,
            w: x1 - x0,
            h: y1 - y0,
        };
        let n = (window.w * window.h) as usize;
        let mut map = CoordinateMap {
            width,
            height,
            window,
            mask: vec![false; n],
            points: vec![[0.0; 3]; n],
            depth: vec![f32::INFINITY; n],
            shade: vec![0.0; n],
        };
        for y in y0..y1 {
            for x in x0..x1 {
                if let Some((p, shade)) = dense[(y * width + x) as usize] {
                    let slot = ((y - y0) * window.w + (x - x0)) as usize;
                    map.mask[slot] = true;
                    map.points[slot] = p;
                    map.depth[slot] = point_depth(pose, &p);
                    map.shade[slot] = shade;
                }
            }
        }
        map
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    fn slot(&self, x: i64, y: i64) -> Option<usize> {
        let w = &self.window;
        let (lx, ly) = (x - w.x0 as i64, y - w.y0 as i64);
        if lx < 0 || ly < 0 || lx >= w.w as i64 || ly >= w.h as i64 {
            return None;
        }
        let slot = (ly * w.w as i64 + lx) as usize;
        self.mask[slot].then_some(slot)
    }

    /// Whether pixel `(x, y)` is covered. Out-of-frame coordinates are not.
    #[inline]
    pub fn is_masked(&self, x: i64, y: i64) -> bool {
        self.slot(x, y).is_some()
    }

    #[inline]
    pub fn sample(&self, x: i64, y: i64) -> Option<PixelSample> {
        self.slot(x, y).map(|s| PixelSample {
            point: Vector3::new(
                self.points[s][0] as f64,
                self.points[s][1] as f64,
                self.points[s][2] as f64,
            ),
            depth: self.depth[s] as f64,
            shade: self.shade[s],
        })
    }

    /// Model point at a covered pixel.
    #[inline]
    pub fn point(&self, x: i64, y: i64) -> Option<Vector3<f64>> {
        self.sample(x, y).map(|s| s.point)
    }

    /// Depth at a pixel; `+∞` where the object is absent.
    #[inline]
    pub fn depth(&self, x: i64, y: i64) -> f64 {
        self.slot(x, y)
            .map_or(f64::INFINITY, |s| self.depth[s] as f64)
    }

    pub fn mask_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Full-frame mask, row-major.
    pub fn mask_image(&self) -> Vec<bool> {
        let mut out = vec![false; (self.width * self.height) as usize];
        for (x, y, _) in self.masked_pixels() {
            out[(y * self.width + x) as usize] = true;
        }
        out
    }

    /// Covered pixels in row-major order.
    pub fn masked_pixels(&self) -> impl Iterator<Item = (u32, u32, PixelSample)> + '_ {
        let w = self.window;
        (0..w.h).flat_map(move |ly| {
            (0..w.w).filter_map(move |lx| {
                let (x, y) = (w.x0 + lx, w.y0 + ly);
                self.sample(x as i64, y as i64).map(|s| (x, y, s))
            })
        })
    }

    /// Raw single-precision point and shade of covered pixels, row-major.
    pub(crate) fn raw_masked(&self) -> impl Iterator<Item = ([f32; 3], f32)> + '_ {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(s, _)| (self.points[s], self.shade[s]))
    }
}

/// Camera depth of a stored single-precision model point.
#[inline]
pub(crate) fn point_depth(pose: &RigidPose, p: &[f32; 3]) -> f32 {
    let p = Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64);
    pose.transform(&p).z as f32
}

#[derive(Clone, Copy)]
struct ClipVertex {
    cam: Vector3<f64>,
    model: Vector3<f64>,
}

fn clip_near(tri: [ClipVertex; 3]) -> Vec<ClipVertex> {
    let mut out = Vec::with_capacity(4);
    for i in 0..3 {
        let a = tri[i];
        let b = tri[(i + 1) % 3];
        let a_in = a.cam.z >= NEAR_PLANE;
        let b_in = b.cam.z >= NEAR_PLANE;
        if a_in {
            out.push(a);
        }
        if a_in != b_in {
            let s = (NEAR_PLANE - a.cam.z) / (b.cam.z - a.cam.z);
            out.push(ClipVertex {
                cam: a.cam + (b.cam - a.cam) * s,
                model: a.model + (b.model - a.model) * s,
            });
        }
    }
    out
}

#[inline]
fn edge(a: &Vector2<f64>, b: &Vector2<f64>, p: &Vector2<f64>) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

struct Target<'a> {
    width: u32,
    height: u32,
    zbuf: &'a mut [f64],
    points: &'a mut [Vector3<f64>],
    shade: &'a mut [f32],
    covered: &'a mut [bool],
}

fn raster_triangle(k: &CameraIntrinsics, v: [ClipVertex; 3], shade: f32, out: &mut Target<'_>) {
    let s = v.map(|c| {
        Vector2::new(
            k.fx() * c.cam.x / c.cam.z + k.cx(),
            k.fy() * c.cam.y / c.cam.z + k.cy(),
        )
    });
    let area = edge(&s[0], &s[1], &s[2]);
    if !area.is_finite() || area.abs() < 1e-14 {
        return;
    }
    // normalize winding so that inside means all edge functions positive
    let (s, v, area) = if area < 0.0 {
        ([s[0], s[2], s[1]], [v[0], v[2], v[1]], -area)
    } else {
        (s, v, area)
    };
    let min_x = s.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
    let max_x = s.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
    let min_y = s.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let max_y = s.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
    let x_lo = (min_x - 0.5).ceil().max(0.0);
    let y_lo = (min_y - 0.5).ceil().max(0.0);
    let x_hi = (max_x - 0.5).floor().min(out.width as f64 - 1.0);
    let y_hi = (max_y - 0.5).floor().min(out.height as f64 - 1.0);
    if x_lo > x_hi || y_lo > y_hi {
        return;
    }
    // an edge owns its boundary pixels iff it points "down" or "left"; with a
    // consistent winding exactly one of two triangles sharing an edge owns it
    let owns = |a: &Vector2<f64>, b: &Vector2<f64>| {
        let d = b - a;
        d.y > 0.0 || (d.y == 0.0 && d.x < 0.0)
    };
    let own = [owns(&s[1], &s[2]), owns(&s[2], &s[0]), owns(&s[0], &s[1])];
    let inv_z = v.map(|c| 1.0 / c.cam.z);

    for py in y_lo as u32..=y_hi as u32 {
        for px in x_lo as u32..=x_hi as u32 {
            let p = Vector2::new(px as f64 + 0.5, py as f64 + 0.5);
            let w = [
                edge(&s[1], &s[2], &p),
                edge(&s[2], &s[0], &p),
                edge(&s[0], &s[1], &p),
            ];
            let inside = (0..3).all(|i| w[i] > 0.0 || (w[i] == 0.0 && own[i]));
            if !inside {
                continue;
            }
            let b = w.map(|wi| wi / area);
            let iz = b[0] * inv_z[0] + b[1] * inv_z[1] + b[2] * inv_z[2];
            let depth = 1.0 / iz;
            let idx = (py * out.width + px) as usize;
            if depth < out.zbuf[idx] - DEPTH_TIE {
                let point = (v[0].model * (b[0] * inv_z[0])
                    + v[1].model * (b[1] * inv_z[1])
                    + v[2].model * (b[2] * inv_z[2]))
                    * depth;
                out.zbuf[idx] = depth;
                out.points[idx] = point;
                out.shade[idx] = shade;
                out.covered[idx] = true;
            }
        }
    }
}

/// Z-buffers the mesh into a `width × height` grid under `pose` and `k`.
///
/// Triangles are processed in index order and clipped against a near plane;
/// geometry fully behind the camera simply produces an empty mask.
pub fn rasterize(
    mesh: &MeshModel,
    pose: &RigidPose,
    k: &CameraIntrinsics,
    out_size: (u32, u32),
) -> CoordinateMap {
    let (width, height) = out_size;
    let n = (width * height) as usize;
    let mut zbuf = vec![f64::INFINITY; n];
    let mut points = vec![Vector3::zeros(); n];
    let mut shade = vec![0f32; n];
    let mut covered = vec![false; n];
    let mut target = Target {
        width,
        height,
        zbuf: &mut zbuf,
        points: &mut points,
        shade: &mut shade,
        covered: &mut covered,
    };
    let light = {
        let t = pose.translation();
        if t.norm() > 0.0 {
            t.normalize()
        } else {
            Vector3::z()
        }
    };
    let cam: Vec<Vector3<f64>> = mesh.vertices().iter().map(|p| pose.transform(p)).collect();
    for tri in mesh.triangles() {
        let verts = tri.map(|i| ClipVertex {
            cam: cam[i as usize],
            model: mesh.vertices()[i as usize],
        });
        if verts.iter().all(|c| c.cam.z < NEAR_PLANE) {
            continue;
        }
        let normal = (verts[1].cam - verts[0].cam).cross(&(verts[2].cam - verts[0].cam));
        let shade = normal
            .try_normalize(0.0)
            .map_or(0.0, |nrm| nrm.dot(&light).abs().min(1.0)) as f32;
        if verts.iter().all(|c| c.cam.z >= NEAR_PLANE) {
            raster_triangle(k, verts, shade, &mut target);
        } else {
            let poly = clip_near(verts);
            for i in 1..poly.len().saturating_sub(1) {
                raster_triangle(k, [poly[0], poly[i], poly[i + 1]], shade, &mut target);
            }
        }
    }
    let dense: Vec<Option<([f32; 3], f32)>> = (0..n)
        .map(|i| {
            covered[i].then(|| {
                let p = points[i];
                ([p.x as f32, p.y as f32, p.z as f32], shade[i])
            })
        })
        .collect();
    CoordinateMap::from_dense(width, height, pose, &dense)
}

/// A target image: the object of interest plus occluding meshes.
#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub object: MeshModel,
    pub object_pose: RigidPose,
    pub occluders: Vec<(MeshModel, RigidPose)>,
    pub k: CameraIntrinsics,
    /// Seed for appearance only; geometry does not depend on it.
    pub background_seed: u64,
}

impl SceneSpec {
    /// Checks that every mesh lies strictly in front of the camera.
    pub fn validate(&self) -> Result<(), GeomError> {
        let in_front = |mesh: &MeshModel, pose: &RigidPose| {
            mesh.vertices()
                .iter()
                .map(|p| pose.transform(p).z)
                .fold(f64::INFINITY, f64::min)
        };
        std::iter::once((&self.object, &self.object_pose))
            .chain(self.occluders.iter().map(|(m, p)| (m, p)))
            .try_for_each(|(m, p)| {
                let z = in_front(m, p);
                if z > 0.0 {
                    Ok(())
                } else {
                    Err(GeomError::BehindCamera { depth: z })
                }
            })
    }
}

/// Rendered target scene.
#[derive(Debug, Clone)]
pub struct SceneRender {
    /// the target object rendered alone
    pub object: CoordinateMap,
    /// object pixels not hidden by any occluder, row-major full frame
    pub visibility: Vec<bool>,
    /// nearest depth over all meshes, `+∞` on background
    pub depth: Vec<f64>,
}

impl SceneRender {
    pub fn width(&self) -> u32 {
        self.object.width()
    }

    pub fn height(&self) -> u32 {
        self.object.height()
    }

    #[inline]
    pub fn depth_at(&self, x: i64, y: i64) -> f64 {
        if x < 0 || y < 0 || x >= self.width() as i64 || y >= self.height() as i64 {
            return f64::INFINITY;
        }
        self.depth[(y * self.width() as i64 + x) as usize]
    }
}

/// Renders the target object and its occluders with a joint depth test.
pub fn rasterize_scene(scene: &SceneSpec, out_size: (u32, u32)) -> Result<SceneRender, GeomError> {
    scene.validate()?;
    let (w, h) = out_size;
    let object = rasterize(&scene.object, &scene.object_pose, &scene.k, out_size);
    let mut depth = vec![f64::INFINITY; (w * h) as usize];
    for (x, y, s) in object.masked_pixels() {
        depth[(y * w + x) as usize] = s.depth;
    }
    let mut visibility = object.mask_image();
    for (mesh, pose) in &scene.occluders {
        let occ = rasterize(mesh, pose, &scene.k, out_size);
        for (x, y, s) in occ.masked_pixels() {
            let i = (y * w + x) as usize;
            if s.depth < object.depth(x as i64, y as i64) {
                visibility[i] = false;
            }
            depth[i] = depth[i].min(s.depth);
        }
    }
    Ok(SceneRender {
        object,
        visibility,
        depth,
    })
}
