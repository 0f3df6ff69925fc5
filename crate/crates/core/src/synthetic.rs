//! Procedural meshes for synthetic scenes and tests.

use nalgebra::Vector3;

use crate::geom::MeshModel;

/// Axis-aligned box centered at `center`, each face split into an
/// `subdiv × subdiv` grid of quads (two triangles each).
pub fn box_mesh(center: Vector3<f64>, half_extents: Vector3<f64>, subdiv: usize) -> MeshModel {
    let (v, t) = box_soup(center, half_extents, subdiv.max(1));
    MeshModel::new(v, t).expect("box with positive extents is a valid mesh")
}

fn box_soup(
    center: Vector3<f64>,
    half: Vector3<f64>,
    n: usize,
) -> (Vec<Vector3<f64>>, Vec<[u32; 3]>) {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    // (normal axis, sign); the two in-plane axes follow cyclically
    for axis in 0..3 {
        for sign in [-1.0, 1.0] {
            let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
            let base = vertices.len() as u32;
            for i in 0..=n {
                for j in 0..=n {
                    let mut p = Vector3::zeros();
                    p[axis] = sign * half[axis];
                    p[a] = half[a] * (2.0 * i as f64 / n as f64 - 1.0);
                    p[b] = half[b] * (2.0 * j as f64 / n as f64 - 1.0);
                    vertices.push(center + p);
                }
            }
            let id = |i: usize, j: usize| base + (i * (n + 1) + j) as u32;
            for i in 0..n {
                for j in 0..n {
                    let (q00, q10, q11, q01) =
                        (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
                    // outward winding
                    if sign > 0.0 {
                        triangles.push([q00, q10, q11]);
                        triangles.push([q00, q11, q01]);
                    } else {
                        triangles.push([q00, q11, q10]);
                        triangles.push([q00, q01, q11]);
                    }
                }
            }
        }
    }
    (vertices, triangles)
}

/// Asymmetric test object (about 17 cm across): a slab with an upright arm
/// and a small knob, centered near the model origin.
pub fn test_object() -> MeshModel {
    let parts = [
        (Vector3::new(0.0, 0.0, 0.0), Vector3::new(0.06, 0.03, 0.025)),
        (
            Vector3::new(0.04, 0.05, 0.0),
            Vector3::new(0.02, 0.05, 0.025),
        ),
        (
            Vector3::new(-0.04, -0.01, 0.035),
            Vector3::new(0.015, 0.015, 0.015),
        ),
    ];
    let offset = Vector3::new(0.0, -0.02, -0.005);
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (c, h) in parts {
        let (v, t) = box_soup(c + offset, h, 4);
        let base = vertices.len() as u32;
        vertices.extend(v);
        triangles.extend(t.into_iter().map(|tri| tri.map(|i| i + base)));
    }
    MeshModel::new(vertices, triangles).expect("test object is valid")
}

/// Square plate of side `2 × half` in the z = 0 plane.
pub fn square_plate(half: f64) -> MeshModel {
    MeshModel::new(
        vec![
            Vector3::new(-half, -half, 0.0),
            Vector3::new(half, -half, 0.0),
            Vector3::new(half, half, 0.0),
            Vector3::new(-half, half, 0.0),
        ],
        vec![[0, 1, 2], [0, 2, 3]],
    )
    .expect("plate is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_object_is_roughly_centered() {
        let m = test_object();
        assert!(m.centroid().norm() < 0.03);
        assert!(
            m.diameter() > 0.12 && m.diameter() < 0.25,
            "{}",
            m.diameter()
        );
    }

    #[test]
    fn subdivided_box_counts() {
        let m = box_mesh(Vector3::zeros(), Vector3::new(1.0, 1.0, 1.0), 2);
        assert_eq!(m.triangles().len(), 6 * 2 * 2 * 2);
        assert!((m.diameter() - 2.0 * 3f64.sqrt()).abs() < 1e-12);
    }
}
