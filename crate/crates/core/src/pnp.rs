//! From flow to pose: correspondence lifting, multi-exemplar aggregation,
//! EPnP with Gauss-Newton polishing, and RANSAC.

use nalgebra::{
    DMatrix, DVector, Matrix2x6, Matrix3, Matrix6, SymmetricEigen, Vector2, Vector3, Vector6,
};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crop::{compute_crop, lift_to_image, CropError, CropTransform, DEFAULT_PAD};
use crate::exemplar::{Exemplar, ExemplarError, ExemplarSet};
use crate::flow::{FlowError, FlowField, FlowProvider};
use crate::geom::{exp_so3, CameraIntrinsics, GeomError, MeshModel, RigidPose};
use crate::render::EXEMPLAR_SIZE;
use crate::seed::derive_seed;

/// Lifted points may leave the target image by this fraction of its size.
pub const IMAGE_MARGIN: f64 = 0.2;
/// Above this many pooled correspondences, each exemplar is subsampled.
pub const MAX_CORRESPONDENCES: usize = 20_000;
pub const GN_MAX_ITERATIONS: usize = 20;
pub const GN_STEP_TOLERANCE: f64 = 1e-10;
/// Upper bound on inlier-set refits after sampling.
pub const REFIT_ROUNDS: usize = 10;
/// Minimal samples whose spread is this close to a line are skipped.
pub const SAMPLE_DEGENERACY: f64 = 1e-6;
/// Below this thickness ratio the points are treated as planar.
const PLANAR_RATIO: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum PnpError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("PnP needs at least {needed} correspondences, got {found}")]
    TooFewPoints { needed: usize, found: usize },
    #[error("degenerate point configuration: {0}")]
    Degenerate(String),
    #[error("RANSAC found no hypothesis with {needed} inliers (best had {})", best_inliers(.best))]
    RobustFailure {
        needed: usize,
        best: Option<Box<PoseEstimate>>,
        diagnostics: Vec<ExemplarDiagnostics>,
    },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Exemplar(#[from] ExemplarError),
    #[error(transparent)]
    Crop(#[from] CropError),
    #[error(transparent)]
    Geometry(#[from] GeomError),
}

fn best_inliers(best: &Option<Box<PoseEstimate>>) -> usize {
    best.as_ref().map_or(0, |b| b.inlier_count)
}

/// A model point paired with its observed target-image pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    /// model frame, meters
    pub p: Vector3<f64>,
    /// target image, pixels
    pub u: Vector2<f64>,
    pub exemplar_id: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    /// pixels
    pub inlier_threshold: f64,
    pub max_iterations: usize,
    pub confidence: f64,
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig {
            inlier_threshold: 2.0,
            max_iterations: 1000,
            confidence: 0.999,
            min_inliers: 12,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<(), PnpError> {
        if !(self.inlier_threshold > 0.0) || !self.inlier_threshold.is_finite() {
            return Err(PnpError::Config(format!(
                "inlier threshold must be positive, got {}",
                self.inlier_threshold
            )));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(PnpError::Config(format!(
                "confidence must lie in (0, 1), got {}",
                self.confidence
            )));
        }
        if self.min_inliers < 4 {
            return Err(PnpError::Config(format!(
                "min_inliers must be at least 4, got {}",
                self.min_inliers
            )));
        }
        if self.max_iterations == 0 {
            return Err(PnpError::Config("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    pub pose: RigidPose,
    pub inlier_count: usize,
    /// one flag per input correspondence
    pub inlier_ids: Vec<bool>,
    /// mean reprojection error over inliers, pixels
    pub mean_reproj_err: f64,
}

/// Per-exemplar bookkeeping of one refinement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExemplarDiagnostics {
    pub exemplar_id: u32,
    /// rotation distance to the initial pose, degrees
    pub distance_deg: f64,
    /// correspondences contributed before subsampling
    pub n_k: usize,
    /// inliers among the correspondences fed to RANSAC
    pub inliers: usize,
}

/// Turns the flow of one exemplar into correspondences in the target image.
///
/// Valid flow pixels outside the exemplar crop mask are ignored, as are lifted
/// pixels further than [`IMAGE_MARGIN`] outside the target image.
pub fn lift_correspondences(
    exemplar: &Exemplar,
    flow: &FlowField,
    m_r: &CropTransform,
    m_t: &CropTransform,
    k_t: &CameraIntrinsics,
) -> Result<Vec<Correspondence>, PnpError> {
    let size = m_r.out_size();
    if flow.width() != size || flow.height() != size || m_t.out_size() != size {
        return Err(PnpError::Config(format!(
            "flow is {}x{} but crops are {}x{} and {}x{}",
            flow.width(),
            flow.height(),
            size,
            size,
            m_t.out_size(),
            m_t.out_size()
        )));
    }
    let crop = exemplar.crop_samples(m_r);
    let (w, h) = (k_t.width() as f64, k_t.height() as f64);
    let (mx, my) = (IMAGE_MARGIN * w, IMAGE_MARGIN * h);
    let mut out = Vec::new();
    for (i, j, f) in flow.iter_valid() {
        let Some(s) = crop.get(i, j) else { continue };
        let u_crop = Vector2::new(i as f64 + 0.5, j as f64 + 0.5) + f;
        let u = lift_to_image(&u_crop, m_t, exemplar.k_r(), k_t);
        if u.x < -mx || u.y < -my || u.x > w + mx || u.y > h + my {
            continue;
        }
        out.push(Correspondence {
            p: s.point,
            u,
            exemplar_id: exemplar.id(),
        });
    }
    Ok(out)
}

/// Pools per-exemplar correspondences, ordered by exemplar id and, within an
/// exemplar, by their original order.
pub fn aggregate(sets: Vec<Vec<Correspondence>>) -> Vec<Correspondence> {
    let mut all: Vec<Correspondence> = sets.into_iter().flatten().collect();
    all.sort_by_key(|c| c.exemplar_id);
    all
}

/// Caps `corrs` at `cap` by drawing the same fraction from every exemplar.
/// Input must be grouped by exemplar id, as [`aggregate`] returns it.
pub fn subsample_per_exemplar(
    corrs: Vec<Correspondence>,
    cap: usize,
    seed: u64,
) -> Vec<Correspondence> {
    let total = corrs.len();
    if total <= cap {
        return corrs;
    }
    let mut out = Vec::with_capacity(cap);
    let mut start = 0;
    while start < total {
        let id = corrs[start].exemplar_id;
        let end = start
            + corrs[start..]
                .iter()
                .take_while(|c| c.exemplar_id == id)
                .count();
        let n_k = end - start;
        let keep = n_k * cap / total;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, id as u64));
        let mut picked = sample(&mut rng, n_k, keep).into_vec();
        picked.sort_unstable();
        out.extend(picked.into_iter().map(|k| corrs[start + k]));
        start = end;
    }
    out
}

/// Pixel residual `project(K, pose, p) − u`, or `None` behind the camera.
#[inline]
fn residual(k: &CameraIntrinsics, pose: &RigidPose, c: &Correspondence) -> Option<Vector2<f64>> {
    let x = pose.transform(&c.p);
    if !(x.z > 0.0) {
        return None;
    }
    Some(Vector2::new(
        k.fx() * x.x / x.z + k.cx() - c.u.x,
        k.fy() * x.y / x.z + k.cy() - c.u.y,
    ))
}

/// Sum of squared pixel residuals; infinite if any point is behind the camera.
pub fn reprojection_cost(k: &CameraIntrinsics, pose: &RigidPose, corrs: &[Correspondence]) -> f64 {
    let mut cost = 0.0;
    for c in corrs {
        match residual(k, pose, c) {
            Some(r) => cost += r.norm_squared(),
            None => return f64::INFINITY,
        }
    }
    cost
}

/// Left increment: rotation vector `δ[0..3]` and translation `δ[3..6]`
/// applied as `X ↦ exp(ω)·X + v` in the camera frame.
pub fn apply_increment(pose: &RigidPose, delta: &Vector6<f64>) -> RigidPose {
    let w = Vector3::new(delta[0], delta[1], delta[2]);
    let v = Vector3::new(delta[3], delta[4], delta[5]);
    let dr = exp_so3(&w);
    let r = dr * pose.rotation();
    let t = dr * pose.translation() + v;
    RigidPose::new(r, t)
        .or_else(|_| RigidPose::from_approximate(&r, t))
        .expect("finite increment of a valid pose")
}

/// Jacobian of the pixel residual of `p` with respect to the increment of
/// [`apply_increment`], at zero.
pub fn reprojection_jacobian(
    k: &CameraIntrinsics,
    pose: &RigidPose,
    p: &Vector3<f64>,
) -> Result<Matrix2x6<f64>, GeomError> {
    let x = pose.transform(p);
    if !(x.z > 0.0) {
        return Err(GeomError::BehindCamera { depth: x.z });
    }
    let iz = 1.0 / x.z;
    let (a, b) = (x.x * iz, x.y * iz);
    // d(pixel)/dX
    let (fx, fy) = (k.fx(), k.fy());
    let j00 = fx * iz;
    let j02 = -fx * a * iz;
    let j11 = fy * iz;
    let j12 = -fy * b * iz;
    // dX/dω = −[X]×, dX/dv = I
    let mut j = Matrix2x6::zeros();
    j[(0, 0)] = j02 * x.y;
    j[(0, 1)] = j00 * x.z - j02 * x.x;
    j[(0, 2)] = -j00 * x.y;
    j[(1, 0)] = -j11 * x.z + j12 * x.y;
    j[(1, 1)] = -j12 * x.x;
    j[(1, 2)] = j11 * x.x;
    j[(0, 3)] = j00;
    j[(0, 5)] = j02;
    j[(1, 4)] = j11;
    j[(1, 5)] = j12;
    Ok(j)
}

/// Result of Gauss-Newton polishing.
#[derive(Debug, Clone)]
pub struct GaussNewtonTrace {
    pub pose: RigidPose,
    /// cost before the first and after every accepted iteration
    pub costs: Vec<f64>,
}

/// Minimizes the squared reprojection error from `init`, halving steps that
/// would increase the cost.
pub fn gauss_newton(
    k: &CameraIntrinsics,
    init: &RigidPose,
    corrs: &[Correspondence],
) -> GaussNewtonTrace {
    let mut pose = *init;
    let mut cost = reprojection_cost(k, &pose, corrs);
    let mut costs = vec![cost];
    if !cost.is_finite() {
        return GaussNewtonTrace { pose, costs };
    }
    for _ in 0..GN_MAX_ITERATIONS {
        let mut jtj = Matrix6::zeros();
        let mut jtr = Vector6::zeros();
        for c in corrs {
            let (Some(r), Ok(j)) = (residual(k, &pose, c), reprojection_jacobian(k, &pose, &c.p))
            else {
                continue;
            };
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
        }
        let Some(chol) = jtj.cholesky() else { break };
        let mut step = -chol.solve(&jtr);
        if !step.iter().all(|v| v.is_finite()) {
            break;
        }
        let mut accepted = false;
        for _ in 0..30 {
            let cand = apply_increment(&pose, &step);
            let c = reprojection_cost(k, &cand, corrs);
            if c <= cost {
                pose = cand;
                cost = c;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        costs.push(cost);
        if step.norm() < GN_STEP_TOLERANCE {
            break;
        }
    }
    GaussNewtonTrace { pose, costs }
}

/// EPnP followed by Gauss-Newton polishing.
pub fn solve_pnp(corrs: &[Correspondence], k: &CameraIntrinsics) -> Result<RigidPose, PnpError> {
    Ok(solve_pnp_traced(corrs, k)?.pose)
}

pub fn solve_pnp_traced(
    corrs: &[Correspondence],
    k: &CameraIntrinsics,
) -> Result<GaussNewtonTrace, PnpError> {
    let init = epnp(corrs, k)?;
    Ok(gauss_newton(k, &init, corrs))
}

/// Closed-form EPnP estimate, with three control points when the model
/// points are planar.
pub fn epnp(corrs: &[Correspondence], k: &CameraIntrinsics) -> Result<RigidPose, PnpError> {
    let n = corrs.len();
    if n < 4 {
        return Err(PnpError::TooFewPoints {
            needed: 4,
            found: n,
        });
    }
    let nf = n as f64;
    let c0 = corrs.iter().map(|c| c.p).sum::<Vector3<f64>>() / nf;
    let mut cov = Matrix3::zeros();
    for c in corrs {
        let d = c.p - c0;
        cov += d * d.transpose();
    }
    cov /= nf;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let sigma: Vec<f64> = order
        .iter()
        .map(|&i| eig.eigenvalues[i].max(0.0).sqrt())
        .collect();
    if !(sigma[0] > 0.0) || sigma[1] <= SAMPLE_DEGENERACY * sigma[0] {
        return Err(PnpError::Degenerate("model points are collinear".into()));
    }
    let axes = if sigma[2] < PLANAR_RATIO * sigma[0] {
        2
    } else {
        3
    };
    let m = axes + 1;
    let mut ctrl = vec![c0];
    let mut dirs = Vec::with_capacity(axes);
    for a in 0..axes {
        let v = eig.eigenvectors.column(order[a]).into_owned();
        ctrl.push(c0 + v * sigma[a]);
        dirs.push(v / sigma[a]);
    }

    let alphas: Vec<Vec<f64>> = corrs
        .iter()
        .map(|c| {
            let d = c.p - c0;
            let mut a = vec![0.0; m];
            for (s, dir) in dirs.iter().enumerate() {
                a[s + 1] = d.dot(dir);
            }
            a[0] = 1.0 - a[1..].iter().sum::<f64>();
            a
        })
        .collect();

    // normalized image coordinates
    let mut mtm = DMatrix::<f64>::zeros(3 * m, 3 * m);
    let mut row_x = DVector::<f64>::zeros(3 * m);
    let mut row_y = DVector::<f64>::zeros(3 * m);
    for (c, a) in corrs.iter().zip(&alphas) {
        let x = (c.u.x - k.cx()) / k.fx();
        let y = (c.u.y - k.cy()) / k.fy();
        for j in 0..m {
            row_x[3 * j] = a[j];
            row_x[3 * j + 1] = 0.0;
            row_x[3 * j + 2] = -a[j] * x;
            row_y[3 * j] = 0.0;
            row_y[3 * j + 1] = a[j];
            row_y[3 * j + 2] = -a[j] * y;
        }
        mtm.ger(1.0, &row_x, &row_x, 1.0);
        mtm.ger(1.0, &row_y, &row_y, 1.0);
    }
    let eig = SymmetricEigen::new(mtm);
    let mut null_order: Vec<usize> = (0..3 * m).collect();
    null_order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let kernel: Vec<DVector<f64>> = null_order
        .iter()
        .take(4)
        .map(|&i| eig.eigenvectors.column(i).into_owned())
        .collect();

    let pairs: Vec<(usize, usize)> = (0..m)
        .flat_map(|a| (a + 1..m).map(move |b| (a, b)))
        .collect();
    let rho: Vec<f64> = pairs
        .iter()
        .map(|&(a, b)| (ctrl[a] - ctrl[b]).norm_squared())
        .collect();
    // per kernel vector and control-point pair, the difference of the two
    // control points
    let diff = |v: &DVector<f64>, a: usize, b: usize| -> Vector3<f64> {
        Vector3::new(
            v[3 * a] - v[3 * b],
            v[3 * a + 1] - v[3 * b + 1],
            v[3 * a + 2] - v[3 * b + 2],
        )
    };

    let mut best: Option<(f64, RigidPose)> = None;
    for dim in 1..=3usize {
        let d: Vec<Vec<Vector3<f64>>> = pairs
            .iter()
            .map(|&(a, b)| (0..dim).map(|s| diff(&kernel[s], a, b)).collect())
            .collect();
        let Some(mut betas) = linearized_betas(&d, &rho, dim) else {
            continue;
        };
        refine_betas(&d, &rho, &mut betas);
        let mut cam = DVector::<f64>::zeros(3 * m);
        for s in 0..dim {
            cam += &kernel[s] * betas[s];
        }
        let cam_ctrl: Vec<Vector3<f64>> = (0..m)
            .map(|j| Vector3::new(cam[3 * j], cam[3 * j + 1], cam[3 * j + 2]))
            .collect();
        let mut cam_pts: Vec<Vector3<f64>> = alphas
            .iter()
            .map(|a| a.iter().zip(&cam_ctrl).map(|(w, c)| c * *w).sum())
            .collect();
        if cam_pts.iter().map(|x| x.z).sum::<f64>() < 0.0 {
            cam_pts.iter_mut().for_each(|x| *x = -*x);
        }
        let Some(pose) = kabsch(corrs.iter().map(|c| c.p), &cam_pts) else {
            continue;
        };
        let cost = reprojection_cost(k, &pose, corrs);
        if cost.is_finite() && best.as_ref().is_none_or(|(b, _)| cost < *b) {
            best = Some((cost, pose));
        }
    }
    best.map(|(_, p)| p).ok_or_else(|| {
        PnpError::Degenerate("no EPnP hypothesis places the points in front of the camera".into())
    })
}

/// Solves the control-point distance constraints linearly in the products
/// `βₐβ_b` and reads off the betas.
fn linearized_betas(d: &[Vec<Vector3<f64>>], rho: &[f64], dim: usize) -> Option<Vec<f64>> {
    let prods: Vec<(usize, usize)> = (0..dim)
        .flat_map(|a| (a..dim).map(move |b| (a, b)))
        .collect();
    let l = DMatrix::from_fn(d.len(), prods.len(), |r, c| {
        let (a, b) = prods[c];
        let v = d[r][a].dot(&d[r][b]);
        if a == b {
            v
        } else {
            2.0 * v
        }
    });
    let rhs = DVector::from_column_slice(rho);
    let sol = l.svd(true, true).solve(&rhs, 1e-12).ok()?;
    let b11 = sol[0];
    if !b11.is_finite() || b11 == 0.0 {
        return None;
    }
    let b1 = b11.abs().sqrt();
    let mut betas = vec![b1; dim];
    for s in 1..dim {
        // b_{1s} sits at column s of the product list
        betas[s] = sol[s] / b1;
    }
    Some(betas)
}

fn refine_betas(d: &[Vec<Vector3<f64>>], rho: &[f64], betas: &mut [f64]) {
    let dim = betas.len();
    for _ in 0..5 {
        let mut jac = DMatrix::<f64>::zeros(d.len(), dim);
        let mut res = DVector::<f64>::zeros(d.len());
        for (r, dr) in d.iter().enumerate() {
            let v: Vector3<f64> = dr.iter().zip(betas.iter()).map(|(x, b)| x * *b).sum();
            res[r] = v.norm_squared() - rho[r];
            for s in 0..dim {
                jac[(r, s)] = 2.0 * v.dot(&dr[s]);
            }
        }
        let Ok(step) = jac.svd(true, true).solve(&res, 1e-12) else {
            return;
        };
        if !step.iter().all(|v| v.is_finite()) {
            return;
        }
        for s in 0..dim {
            betas[s] -= step[s];
        }
    }
}

/// Rigid transform taking `model` onto `cam` in the least-squares sense.
fn kabsch(
    model: impl Iterator<Item = Vector3<f64>> + Clone,
    cam: &[Vector3<f64>],
) -> Option<RigidPose> {
    let n = cam.len() as f64;
    let pm = model.clone().sum::<Vector3<f64>>() / n;
    let cm = cam.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (p, x) in model.zip(cam) {
        h += (x - cm) * (p - pm).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * vt;
    RigidPose::from_approximate(&r, cm - r * pm).ok()
}

/// Inlier flags and mean inlier error of `pose`.
fn score(
    k: &CameraIntrinsics,
    pose: &RigidPose,
    corrs: &[Correspondence],
    threshold: f64,
) -> (Vec<bool>, usize, f64) {
    let mut flags = vec![false; corrs.len()];
    let mut count = 0;
    let mut sum = 0.0;
    for (f, c) in flags.iter_mut().zip(corrs) {
        if let Some(r) = residual(k, pose, c) {
            let e = r.norm();
            if e < threshold {
                *f = true;
                count += 1;
                sum += e;
            }
        }
    }
    (
        flags,
        count,
        if count > 0 { sum / count as f64 } else { 0.0 },
    )
}

fn estimate(
    k: &CameraIntrinsics,
    pose: RigidPose,
    corrs: &[Correspondence],
    threshold: f64,
) -> PoseEstimate {
    let (inlier_ids, inlier_count, mean_reproj_err) = score(k, &pose, corrs, threshold);
    PoseEstimate {
        pose,
        inlier_count,
        inlier_ids,
        mean_reproj_err,
    }
}

fn is_degenerate_sample(corrs: &[Correspondence], idx: &[usize]) -> bool {
    let c0 = idx.iter().map(|&i| corrs[i].p).sum::<Vector3<f64>>() / idx.len() as f64;
    let mut cov = Matrix3::zeros();
    for &i in idx {
        let d = corrs[i].p - c0;
        cov += d * d.transpose();
    }
    let mut ev: Vec<f64> = cov
        .symmetric_eigenvalues()
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    !(ev[0] > 0.0) || ev[1] <= SAMPLE_DEGENERACY * ev[0]
}

/// Iterations needed to draw one all-inlier sample of four with the given
/// confidence.
fn adaptive_bound(inlier_ratio: f64, confidence: f64, cap: usize) -> usize {
    let w4 = inlier_ratio.powi(4);
    if w4 >= 1.0 {
        return 1;
    }
    if w4 <= 0.0 {
        return cap;
    }
    let k = (1.0 - confidence).ln() / (1.0 - w4).ln();
    if k.is_finite() {
        (k.ceil() as usize).clamp(1, cap)
    } else {
        cap
    }
}

/// Hypothesize-and-verify PnP on minimal samples of four, followed by a
/// refit on the inliers of the best hypothesis.
pub fn ransac_pnp(
    corrs: &[Correspondence],
    k: &CameraIntrinsics,
    cfg: &RansacConfig,
) -> Result<PoseEstimate, PnpError> {
    cfg.validate()?;
    let n = corrs.len();
    if n < cfg.min_inliers {
        return Err(PnpError::TooFewPoints {
            needed: cfg.min_inliers,
            found: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<PoseEstimate> = None;
    let mut bound = cfg.max_iterations;
    let mut iter = 0;
    let mut buf = Vec::with_capacity(4);
    while iter < bound {
        iter += 1;
        let idx = sample(&mut rng, n, 4).into_vec();
        if is_degenerate_sample(corrs, &idx) {
            continue;
        }
        buf.clear();
        buf.extend(idx.iter().map(|&i| corrs[i]));
        let Ok(pose) = solve_pnp(&buf, k) else {
            continue;
        };
        let (_, count, mean) = score(k, &pose, corrs, cfg.inlier_threshold);
        let better = match &best {
            None => count > 0,
            Some(b) => {
                count > b.inlier_count || (count == b.inlier_count && mean < b.mean_reproj_err)
            }
        };
        if better {
            best = Some(estimate(k, pose, corrs, cfg.inlier_threshold));
            bound = bound.min(adaptive_bound(
                count as f64 / n as f64,
                cfg.confidence,
                cfg.max_iterations,
            ));
        }
    }
    let mut best = match best {
        Some(b) if b.inlier_count >= cfg.min_inliers => b,
        best => {
            return Err(PnpError::RobustFailure {
                needed: cfg.min_inliers,
                best: best.map(Box::new),
                diagnostics: Vec::new(),
            })
        }
    };
    // refit until the inlier set stops changing
    for _ in 0..REFIT_ROUNDS {
        let inliers: Vec<Correspondence> = corrs
            .iter()
            .zip(&best.inlier_ids)
            .filter(|(_, &f)| f)
            .map(|(c, _)| *c)
            .collect();
        let Ok(pose) = solve_pnp(&inliers, k) else {
            break;
        };
        let refit = estimate(k, pose, corrs, cfg.inlier_threshold);
        if refit.inlier_count < cfg.min_inliers {
            break;
        }
        let settled = refit.inlier_ids == best.inlier_ids;
        best = refit;
        if settled {
            break;
        }
    }
    Ok(best)
}

/// Everything refinement needs about the target image and the object.
#[derive(Clone, Copy)]
pub struct RefineInputs<'a> {
    pub mesh: &'a MeshModel,
    pub exemplars: &'a ExemplarSet,
    pub k_t: &'a CameraIntrinsics,
    pub flow: &'a dyn FlowProvider,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub n_exemplars: usize,
    pub pad: f64,
    pub max_correspondences: usize,
    pub ransac: RansacConfig,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            n_exemplars: 4,
            pad: DEFAULT_PAD,
            max_correspondences: MAX_CORRESPONDENCES,
            ransac: RansacConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub estimate: PoseEstimate,
    pub diagnostics: Vec<ExemplarDiagnostics>,
    /// correspondences fed to RANSAC
    pub correspondences: usize,
}

/// One refinement pass: retrieve the closest exemplars to `initial`, lift
/// their flow to the target image, pool and solve.
pub fn refine_pose(
    initial: &RigidPose,
    inputs: RefineInputs<'_>,
    cfg: &RefineConfig,
) -> Result<Refinement, PnpError> {
    cfg.ransac.validate()?;
    if cfg.n_exemplars == 0 {
        return Err(PnpError::Config("at least one exemplar is needed".into()));
    }
    inputs.exemplars.check_mesh(inputs.mesh)?;
    let k_r = inputs.exemplars.k_r();
    let m_t = compute_crop(initial, k_r, inputs.mesh, EXEMPLAR_SIZE, cfg.pad)?;
    let retrieved = inputs.exemplars.query_nearest(initial, cfg.n_exemplars)?;
    let per_exemplar: Vec<Vec<Correspondence>> = retrieved
        .par_iter()
        .map(|r| {
            let m_r = r.exemplar.crop(inputs.mesh, cfg.pad)?;
            let flow = inputs.flow.flow(r.exemplar, &m_r, &m_t)?;
            lift_correspondences(r.exemplar, &flow, &m_r, &m_t, inputs.k_t)
        })
        .collect::<Result<_, PnpError>>()?;
    let mut diagnostics: Vec<ExemplarDiagnostics> = retrieved
        .iter()
        .zip(&per_exemplar)
        .map(|(r, c)| ExemplarDiagnostics {
            exemplar_id: r.exemplar.id(),
            distance_deg: r.distance,
            n_k: c.len(),
            inliers: 0,
        })
        .collect();
    let pooled = subsample_per_exemplar(
        aggregate(per_exemplar),
        cfg.max_correspondences,
        cfg.ransac.seed,
    );
    let tally = |diagnostics: &mut [ExemplarDiagnostics], flags: &[bool]| {
        for (c, _) in pooled.iter().zip(flags).filter(|(_, &f)| f) {
            if let Some(d) = diagnostics
                .iter_mut()
                .find(|d| d.exemplar_id == c.exemplar_id)
            {
                d.inliers += 1;
            }
        }
    };
    match ransac_pnp(&pooled, inputs.k_t, &cfg.ransac) {
        Ok(estimate) => {
            tally(&mut diagnostics, &estimate.inlier_ids);
            Ok(Refinement {
                estimate,
                diagnostics,
                correspondences: pooled.len(),
            })
        }
        Err(PnpError::RobustFailure { needed, best, .. }) => {
            if let Some(b) = &best {
                tally(&mut diagnostics, &b.inlier_ids);
            }
            Err(PnpError::RobustFailure {
                needed,
                best,
                diagnostics,
            })
        }
        Err(PnpError::TooFewPoints { needed, .. }) => Err(PnpError::RobustFailure {
            needed,
            best: None,
            diagnostics,
        }),
        Err(e) => Err(e),
    }
}
