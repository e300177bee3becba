//! Spherical mesh geometry: icosphere generation, point location with
//! barycentric weights, field resampling, and sagittal mirroring.

mod icosphere;
mod io;
mod locate;

pub use icosphere::{icosphere, MAX_ORDER as MAX_ICOSPHERE_ORDER};
pub use locate::{locate, locate_brute_force, LocateGrid};

use ndarray::Array2;
use rayon::prelude::*;
use std::collections::HashMap;

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

/// Unit-sphere triangle mesh. Triangles are counter-clockwise when viewed
/// from outside the sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
}

/// Result of locating a direction on a mesh: the containing triangle and
/// the barycentric weights of the ray-plane intersection point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarycentricHit {
    pub triangle_index: usize,
    pub weights: [f64; 3],
}

/// Per-vertex multi-channel scalar field, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureField {
    pub channel_names: Vec<String>,
    /// Shape (n_channels, n_vertices).
    pub values: Array2<f64>,
}

impl FeatureField {
    pub fn new(channel_names: Vec<String>, values: Array2<f64>) -> Result<Self> {
        if channel_names.len() != values.nrows() {
            return Err(Error::invalid(format!(
                "channel name count {} does not match value rows {}",
                channel_names.len(),
                values.nrows()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("feature field contains non-finite values".into()));
        }
        Ok(FeatureField {
            channel_names,
            values,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.values.ncols()
    }

    pub fn n_channels(&self) -> usize {
        self.values.nrows()
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channel_names.iter().position(|c| c == name)
    }
}

pub(crate) fn normalize(v: Vec3) -> Vec3 {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

impl SphereMesh {
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Enumerate the undirected edge set. Exposed for topology checks.
    pub fn edge_set(&self) -> HashMap<(usize, usize), usize> {
        let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
        for tri in &self.triangles {
            for (a, b) in [(tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])] {
                let key = (a.min(b), a.max(b));
                *edges.entry(key).or_insert(0) += 1;
            }
        }
        edges
    }

    /// Check the mesh invariants: unit-norm vertices, index validity,
    /// non-degenerate triangles, and closed 2-manifold topology.
    pub fn validate(&self) -> Result<()> {
        for (i, v) in self.vertices.iter().enumerate() {
            let norm = dot(*v, *v).sqrt();
            if (norm - 1.0).abs() > 1e-12 {
                return Err(Error::invalid(format!(
                    "vertex {i} has norm {norm}, expected 1"
                )));
            }
        }
        let n = self.vertices.len();
        for (i, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&ix| ix >= n) {
                return Err(Error::invalid(format!("triangle {i} has out-of-range index")));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::invalid(format!("triangle {i} is degenerate")));
            }
        }
        let edges = self.edge_set();
        for ((a, b), count) in &edges {
            if *count != 2 {
                return Err(Error::invalid(format!(
                    "edge ({a},{b}) is shared by {count} triangles, expected 2"
                )));
            }
        }
        let euler = n as i64 - edges.len() as i64 + self.triangles.len() as i64;
        if euler != 2 {
            return Err(Error::invalid(format!("Euler characteristic {euler}, expected 2")));
        }
        Ok(())
    }
}

/// Reflect the mesh across the sagittal (x = 0) plane, flipping the triangle
/// winding so the orientation stays outward.
pub fn mirror_sagittal(mesh: &SphereMesh) -> SphereMesh {
    SphereMesh {
        vertices: mesh
            .vertices
            .iter()
            .map(|v| [-v[0], v[1], v[2]])
            .collect(),
        triangles: mesh
            .triangles
            .iter()
            .map(|t| [t[0], t[2], t[1]])
            .collect(),
    }
}

/// Blend three corner values with barycentric weights. Anchored at the
/// largest weight so constant fields and vertex hits reproduce the corner
/// value bitwise.
pub fn interpolate(weights: &[f64; 3], corners: &[f64; 3]) -> f64 {
    let k = if weights[0] >= weights[1] && weights[0] >= weights[2] {
        0
    } else if weights[1] >= weights[2] {
        1
    } else {
        2
    };
    let mut out = corners[k];
    for i in 0..3 {
        if i != k {
            out += weights[i] * (corners[i] - corners[k]);
        }
    }
    out
}

/// Resample a per-vertex field from one spherical mesh to another with
/// barycentric interpolation. Each target vertex direction is located on the
/// source mesh and the three corner values are blended with the hit weights.
pub fn resample(
    source_mesh: &SphereMesh,
    source_field: &FeatureField,
    target_mesh: &SphereMesh,
) -> Result<FeatureField> {
    if source_field.n_vertices() != source_mesh.n_vertices() {
        return Err(Error::invalid(format!(
            "field has {} vertices but source mesh has {}",
            source_field.n_vertices(),
            source_mesh.n_vertices()
        )));
    }
    if source_mesh.triangles.is_empty() {
        return Err(Error::invalid("empty source mesh"));
    }
    let grid = LocateGrid::build(source_mesh);
    let n_channels = source_field.n_channels();
    let n_target = target_mesh.n_vertices();

    // Per-vertex results are independent; compute columns in parallel.
    let columns: Vec<Vec<f64>> = target_mesh
        .vertices
        .par_iter()
        .map(|&v| {
            let hit = grid.locate(source_mesh, v);
            let tri = source_mesh.triangles[hit.triangle_index];
            (0..n_channels)
                .map(|c| {
                    let corners = [
                        source_field.values[[c, tri[0]]],
                        source_field.values[[c, tri[1]]],
                        source_field.values[[c, tri[2]]],
                    ];
                    interpolate(&hit.weights, &corners)
                })
                .collect()
        })
        .collect();

    let mut values = Array2::zeros((n_channels, n_target));
    for (j, col) in columns.iter().enumerate() {
        for (c, &x) in col.iter().enumerate() {
            values[[c, j]] = x;
        }
    }
    FeatureField::new(source_field.channel_names.clone(), values)
}

pub use io::{read_feature_field, read_mesh, write_feature_field, write_mesh};
