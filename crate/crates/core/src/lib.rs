//! One-shot 6D pose refinement by exemplar retrieval and dense flow
//! aggregation.
//!
//! Given a rough initial pose of an object in a target image, the engine
//! retrieves the `N` pre-rendered exemplars whose rotations are closest to it,
//! lifts a dense 2D flow field from each exemplar crop to the target crop into
//! 3D-to-2D correspondences, pools them, and solves the final pose with a
//! RANSAC-wrapped EPnP solver followed by Gauss-Newton polishing. There is no
//! render-and-compare loop: the pose is recovered in a single pass.
//!
//! The learned components of such a system (the initialization network and the
//! flow network) are replaced here by deterministic providers: [`geom::pose_jitter`]
//! simulates an imperfect initializer and [`flow::OracleFlow`] produces ground-truth
//! flow with optional degradation. Externally computed flow can be ingested
//! through the flow file format in [`flow`].
//!
//! Module map:
//!
//! - [`geom`]: pose algebra, projection, rotation sampling, ADD/ADD-S/AUC metrics
//! - [`render`]: mesh loading and z-buffer rasterization into coordinate maps
//! - [`exemplar`]: exemplar set generation, retrieval and persistence
//! - [`crop`]: crop similarities and cross-camera alignment
//! - [`flow`]: flow fields, the flow oracle, degradation and flow files
//! - [`pnp`]: correspondence lifting, aggregation, EPnP, RANSAC and refinement
//! - [`harness`]: synthetic experiments, trial records and reports

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod crop;
pub mod exemplar;
pub mod flow;
pub mod geom;
pub mod harness;
mod io_util;
pub mod pnp;
pub mod render;
pub mod seed;
pub mod synthetic;

pub use geom::{CameraIntrinsics, MeshModel, RigidPose};
