use std::collections::HashMap;

use crate::error::{Error, Result};

use super::{cross, dot, normalize, sub, SphereMesh, Vec3};

pub const MAX_ORDER: u32 = 8;

/// Generate the order-`order` icosphere: a regular icosahedron subdivided
/// `order` times with midpoints re-projected onto the unit sphere.
///
/// Vertex ordering is deterministic: the canonical 12 icosahedron vertices
/// come first, and each subdivision appends edge midpoints keyed by the
/// sorted (min, max) edge index pair, in sorted-edge order.
pub fn icosphere(order: u32) -> Result<SphereMesh> {
    if order > MAX_ORDER {
        return Err(Error::invalid(format!(
            "icosphere order {order} exceeds maximum {MAX_ORDER}"
        )));
    }
    let mut mesh = icosahedron();
    for _ in 0..order {
        mesh = subdivide(&mesh);
    }
    Ok(mesh)
}

/// The canonical regular icosahedron with unit-norm vertices. Triangle
/// winding is fixed to be counter-clockwise seen from outside.
fn icosahedron() -> SphereMesh {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let raw: [Vec3; 12] = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ];
    let vertices: Vec<Vec3> = raw.iter().map(|&v| normalize(v)).collect();
    let mut triangles: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    // Enforce outward orientation regardless of the table's winding.
    for tri in &mut triangles {
        let (a, b, c) = (
            vertices[tri[0]],
            vertices[tri[1]],
            vertices[tri[2]],
        );
        let normal = cross(sub(b, a), sub(c, a));
        let centroid = [a[0] + b[0] + c[0], a[1] + b[1] + c[1], a[2] + b[2] + c[2]];
        if dot(normal, centroid) < 0.0 {
            tri.swap(1, 2);
        }
    }
    SphereMesh {
        vertices,
        triangles,
    }
}

fn subdivide(mesh: &SphereMesh) -> SphereMesh {
    let mut vertices = mesh.vertices.clone();

    let mut edges: Vec<(usize, usize)> = mesh
        .edge_set()
        .into_keys()
        .collect();
    edges.sort_unstable();

    let mut midpoint: HashMap<(usize, usize), usize> = HashMap::with_capacity(edges.len());
    for (a, b) in edges {
        let va = mesh.vertices[a];
        let vb = mesh.vertices[b];
        let m = normalize([
            (va[0] + vb[0]) * 0.5,
            (va[1] + vb[1]) * 0.5,
            (va[2] + vb[2]) * 0.5,
        ]);
        midpoint.insert((a, b), vertices.len());
        vertices.push(m);
    }

    let mid = |a: usize, b: usize| midpoint[&(a.min(b), a.max(b))];

    let mut triangles = Vec::with_capacity(mesh.triangles.len() * 4);
    for &[a, b, c] in &mesh.triangles {
        let ab = mid(a, b);
        let bc = mid(b, c);
        let ca = mid(c, a);
        triangles.push([a, ab, ca]);
        triangles.push([ab, b, bc]);
        triangles.push([ca, bc, c]);
        triangles.push([ab, bc, ca]);
    }

    SphereMesh {
        vertices,
        triangles,
    }
}
