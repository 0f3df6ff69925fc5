use std::fmt;

use nalgebra::Vector3;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("mesh has no vertices or no triangles")]
    Empty,
    #[error("mesh needs at least 4 vertices, found {0}")]
    TooFewVertices(usize),
    #[error("triangle {triangle} references vertex {index} but only {count} vertices exist")]
    IndexOutOfRange {
        triangle: usize,
        index: u32,
        count: usize,
    },
    #[error("triangle {0} is degenerate (zero area)")]
    DegenerateTriangle(usize),
    #[error("vertex {0} has a non-finite coordinate")]
    NonFiniteVertex(usize),
}

/// SHA-256 digest binding exemplar sets, manifests and flows to one mesh.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct MeshHash(pub [u8; 32]);

impl MeshHash {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes = hex::decode(s).ok()?;
        Some(Self(bytes.try_into().ok()?))
    }
}

impl fmt::Debug for MeshHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MeshHash({})", self.to_hex())
    }
}

impl fmt::Display for MeshHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Triangle mesh in the model frame (meters).
#[derive(Debug, Clone, PartialEq)]
pub struct MeshModel {
    vertices: Vec<Vector3<f64>>,
    triangles: Vec<[u32; 3]>,
    diameter: f64,
    hash: MeshHash,
}

impl MeshModel {
    pub fn new(vertices: Vec<Vector3<f64>>, triangles: Vec<[u32; 3]>) -> Result<Self, MeshError> {
        if vertices.is_empty() || triangles.is_empty() {
            return Err(MeshError::Empty);
        }
        if vertices.len() < 4 {
            return Err(MeshError::TooFewVertices(vertices.len()));
        }
        if let Some(i) = vertices
            .iter()
            .position(|v| !v.iter().all(|c| c.is_finite()))
        {
            return Err(MeshError::NonFiniteVertex(i));
        }
        for (t, tri) in triangles.iter().enumerate() {
            for &index in tri {
                if index as usize >= vertices.len() {
                    return Err(MeshError::IndexOutOfRange {
                        triangle: t,
                        index,
                        count: vertices.len(),
                    });
                }
            }
            let [a, b, c] = tri.map(|i| vertices[i as usize]);
            let (e1, e2) = (b - a, c - a);
            let scale = e1
                .norm_squared()
                .max(e2.norm_squared())
                .max((c - b).norm_squared());
            if e1.cross(&e2).norm() <= 1e-12 * scale || scale == 0.0 {
                return Err(MeshError::DegenerateTriangle(t));
            }
        }
        let diameter = max_pairwise_distance(&vertices);
        let hash = hash_mesh(&vertices, &triangles);
        Ok(Self {
            vertices,
            triangles,
            diameter,
            hash,
        })
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    /// Largest distance between any two vertices.
    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn hash(&self) -> MeshHash {
        self.hash
    }

    /// Mean of the vertices.
    pub fn centroid(&self) -> Vector3<f64> {
        self.vertices.iter().sum::<Vector3<f64>>() / self.vertices.len() as f64
    }

    /// Largest vertex distance from the model origin.
    pub fn bounding_radius(&self) -> f64 {
        self.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn triangle(&self, index: usize) -> [Vector3<f64>; 3] {
        self.triangles[index].map(|i| self.vertices[i as usize])
    }
}

fn max_pairwise_distance(vertices: &[Vector3<f64>]) -> f64 {
    vertices
        .par_iter()
        .enumerate()
        .map(|(i, a)| {
            vertices[i + 1..]
                .iter()
                .map(|b| (a - b).norm_squared())
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max)
        .sqrt()
}

fn hash_mesh(vertices: &[Vector3<f64>], triangles: &[[u32; 3]]) -> MeshHash {
    let mut hasher = Sha256::new();
    hasher.update((vertices.len() as u64).to_le_bytes());
    for v in vertices {
        for c in v.iter() {
            hasher.update(c.to_le_bytes());
        }
    }
    hasher.update((triangles.len() as u64).to_le_bytes());
    for t in triangles {
        for i in t {
            hasher.update(i.to_le_bytes());
        }
    }
    MeshHash(hasher.finalize().into())
}
