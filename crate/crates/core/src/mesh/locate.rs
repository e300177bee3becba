use crate::error::{Error, Result};

use super::{cross, dot, sub, BarycentricHit, SphereMesh, Vec3};

const WEIGHT_SLACK: f64 = 1e-9;

/// Planar barycentric weights of the ray (origin -> dir) intersection with
/// the triangle's plane. Returns None for back-facing or parallel planes.
fn ray_triangle_weights(mesh: &SphereMesh, tri: [usize; 3], dir: Vec3) -> Option<[f64; 3]> {
    let a = mesh.vertices[tri[0]];
    let b = mesh.vertices[tri[1]];
    let c = mesh.vertices[tri[2]];
    let v0 = sub(b, a);
    let v1 = sub(c, a);
    let n = cross(v0, v1);
    let denom = dot(dir, n);
    if denom <= 1e-15 {
        return None;
    }
    let t = dot(a, n) / denom;
    if t <= 0.0 {
        return None;
    }
    let p = [t * dir[0], t * dir[1], t * dir[2]];
    let v2 = sub(p, a);
    let d00 = dot(v0, v0);
    let d01 = dot(v0, v1);
    let d11 = dot(v1, v1);
    let d20 = dot(v2, v0);
    let d21 = dot(v2, v1);
    let den = d00 * d11 - d01 * d01;
    let u = (d11 * d20 - d01 * d21) / den;
    let v = (d00 * d21 - d01 * d20) / den;
    Some([1.0 - u - v, u, v])
}

fn min_weight(w: &[f64; 3]) -> f64 {
    w[0].min(w[1]).min(w[2])
}

/// Clamp float-noise negatives to zero and renormalize to sum 1. A weight
/// within 1e-12 of 1 snaps to exactly 1 so that directions through a mesh
/// vertex reproduce that vertex's value bitwise downstream.
fn clamp_and_renormalize(mut w: [f64; 3]) -> [f64; 3] {
    for x in &mut w {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    let s = w[0] + w[1] + w[2];
    let mut w = [w[0] / s, w[1] / s, w[2] / s];
    for i in 0..3 {
        if w[i] >= 1.0 - 1e-12 {
            w = [0.0, 0.0, 0.0];
            w[i] = 1.0;
            break;
        }
    }
    w
}

fn check_direction(dir: Vec3) -> Result<()> {
    let norm = dot(dir, dir).sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "direction has norm {norm}, expected a unit vector"
        )));
    }
    Ok(())
}

/// All-triangle scan locate. Slow; serves as the oracle for the grid.
pub fn locate_brute_force(mesh: &SphereMesh, dir: Vec3) -> Result<BarycentricHit> {
    if mesh.triangles.is_empty() {
        return Err(Error::invalid("empty mesh"));
    }
    check_direction(dir)?;
    let mut best: Option<(usize, [f64; 3], f64)> = None;
    for (i, &tri) in mesh.triangles.iter().enumerate() {
        if let Some(w) = ray_triangle_weights(mesh, tri, dir) {
            let m = min_weight(&w);
            if best.as_ref().map_or(true, |(_, _, bm)| m > *bm) {
                best = Some((i, w, m));
            }
        }
    }
    let (triangle_index, weights, m) = best
        .ok_or_else(|| Error::invalid("no front-facing triangle found"))?;
    if m < -WEIGHT_SLACK {
        return Err(Error::invalid(format!(
            "best candidate has weight {m}, mesh does not cover the direction"
        )));
    }
    Ok(BarycentricHit {
        triangle_index,
        weights: clamp_and_renormalize(weights),
    })
}

/// Locate the triangle containing a unit direction.
pub fn locate(mesh: &SphereMesh, dir: Vec3) -> Result<BarycentricHit> {
    locate_brute_force(mesh, dir)
}

/// Latitude-longitude bucket grid over triangles for O(1) average locate.
/// Falls back to the brute-force scan when a bucket misses.
pub struct LocateGrid {
    n_lat: usize,
    n_lon: usize,
    cells: Vec<Vec<u32>>,
}

impl LocateGrid {
    pub fn build(mesh: &SphereMesh) -> LocateGrid {
        let bands = (2.0 * (mesh.triangles.len() as f64).sqrt()).ceil().max(1.0) as usize;
        let (n_lat, n_lon) = (bands, bands);
        let mut cells: Vec<Vec<u32>> = vec![Vec::new(); n_lat * n_lon];

        let lat_of = |v: Vec3| v[2].clamp(-1.0, 1.0).asin();
        let lon_of = |v: Vec3| v[1].atan2(v[0]);
        let lat_row = |lat: f64| {
            (((lat + std::f64::consts::FRAC_PI_2) / std::f64::consts::PI) * n_lat as f64)
                .floor()
                .clamp(0.0, (n_lat - 1) as f64) as usize
        };
        let lon_col = |lon: f64| {
            (((lon + std::f64::consts::PI) / (2.0 * std::f64::consts::PI)) * n_lon as f64)
                .floor()
                .clamp(0.0, (n_lon - 1) as f64) as usize
        };

        for (i, tri) in mesh.triangles.iter().enumerate() {
            let lats: Vec<f64> = tri.iter().map(|&ix| lat_of(mesh.vertices[ix])).collect();
            let lons: Vec<f64> = tri.iter().map(|&ix| lon_of(mesh.vertices[ix])).collect();
            let row_min = lat_row(lats.iter().cloned().fold(f64::INFINITY, f64::min)).saturating_sub(1);
            let row_max = (lat_row(lats.iter().cloned().fold(f64::NEG_INFINITY, f64::max)) + 1)
                .min(n_lat - 1);

            let lon_min = lons.iter().cloned().fold(f64::INFINITY, f64::min);
            let lon_max = lons.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let wraps = lon_max - lon_min > std::f64::consts::PI;

            for row in row_min..=row_max {
                let all_cols = row == 0 || row == n_lat - 1;
                for col in 0..n_lon {
                    let covered = if all_cols {
                        true
                    } else if wraps {
                        col <= lon_col(lon_min) + 1 || col + 1 >= lon_col(lon_max)
                    } else {
                        col + 1 >= lon_col(lon_min) && col <= lon_col(lon_max) + 1
                    };
                    if covered {
                        cells[row * n_lon + col].push(i as u32);
                    }
                }
            }
        }

        LocateGrid {
            n_lat,
            n_lon,
            cells,
        }
    }

    pub fn locate(&self, mesh: &SphereMesh, dir: Vec3) -> BarycentricHit {
        let lat = dir[2].clamp(-1.0, 1.0).asin();
        let lon = dir[1].atan2(dir[0]);
        let row = (((lat + std::f64::consts::FRAC_PI_2) / std::f64::consts::PI)
            * self.n_lat as f64)
            .floor()
            .clamp(0.0, (self.n_lat - 1) as f64) as usize;
        let col = (((lon + std::f64::consts::PI) / (2.0 * std::f64::consts::PI))
            * self.n_lon as f64)
            .floor()
            .clamp(0.0, (self.n_lon - 1) as f64) as usize;

        let mut best: Option<(usize, [f64; 3], f64)> = None;
        for &i in &self.cells[row * self.n_lon + col] {
            let tri = mesh.triangles[i as usize];
            if let Some(w) = ray_triangle_weights(mesh, tri, dir) {
                let m = min_weight(&w);
                if best.as_ref().map_or(true, |(_, _, bm)| m > *bm) {
                    best = Some((i as usize, w, m));
                }
            }
        }
        match best {
            Some((i, w, m)) if m >= -WEIGHT_SLACK => BarycentricHit {
                triangle_index: i,
                weights: clamp_and_renormalize(w),
            },
            _ => locate_brute_force(mesh, dir).expect("closed mesh covers every direction"),
        }
    }
}
