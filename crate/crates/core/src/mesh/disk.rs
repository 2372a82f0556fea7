//! Deterministic concentric-ring triangulation of a disk.
//!
//! Ring `j` of `m` carries `6j` vertices at radius `j·R/m`; consecutive rings
//! are zipped into alternating triangle strips. All boundary vertices lie on
//! the circle, so the mesh is an inscribed polygon of the disk. The ring
//! count is chosen so the averaged mesh size tracks `0.36 · 2^-level`.

use super::{Mesh, SideLabel};
use crate::error::{Error, Result};
use crate::geometry::Vec2;

/// Builds the level-`level` disk mesh of the given radius. All boundary
/// sides are labeled Dirichlet.
pub fn build_disk_mesh(radius: f64, level: u32) -> Result<Mesh> {
    if !(radius > 0.0) {
        return Err(Error::Parameter(format!("radius {radius} must be positive")));
    }
    if level > 8 {
        return Err(Error::Parameter(format!("level {level} exceeds maximum 8")));
    }
    let target = 0.36 * 0.5_f64.powi(level as i32);
    let rings = best_ring_count(target);
    Ok(concentric_disk(radius, rings))
}

/// Averaged mesh size of the `m`-ring unit disk mesh:
/// polygon area `3 m sin(π / 3m)` over `3m² + 3m + 1` vertices.
fn ring_mesh_size(m: usize) -> f64 {
    let mf = m as f64;
    let area = 3.0 * mf * (std::f64::consts::PI / (3.0 * mf)).sin();
    let verts = 3.0 * mf * mf + 3.0 * mf + 1.0;
    (area / verts).sqrt()
}

fn best_ring_count(target: f64) -> usize {
    let mut best = 1;
    let mut best_err = f64::INFINITY;
    for m in 1..=1024 {
        let err = (ring_mesh_size(m) - target).abs();
        if err < best_err {
            best_err = err;
            best = m;
        }
    }
    best
}

fn concentric_disk(radius: f64, rings: usize) -> Mesh {
    let mut vertices = vec![Vec2::ZERO];
    let mut ring_start = vec![0usize; rings + 1];
    for j in 1..=rings {
        ring_start[j] = vertices.len();
        let n = 6 * j;
        let r = radius * j as f64 / rings as f64;
        for i in 0..n {
            let theta = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            vertices.push(Vec2::new(r * theta.cos(), r * theta.sin()));
        }
    }

    let mut triangles = Vec::with_capacity(6 * rings * rings);
    // Innermost fan around the center vertex.
    for i in 0..6 {
        triangles.push([0, ring_start[1] + i, ring_start[1] + (i + 1) % 6]);
    }
    // Zip each pair of consecutive rings by merging their angular orders.
    for j in 2..=rings {
        let ni = 6 * (j - 1);
        let no = 6 * j;
        let inner = ring_start[j - 1];
        let outer = ring_start[j];
        let mut i = 0usize;
        let mut o = 0usize;
        while i < ni || o < no {
            let next_inner = (i + 1) as f64 / ni as f64;
            let next_outer = (o + 1) as f64 / no as f64;
            if o < no && (i == ni || next_outer <= next_inner) {
                triangles.push([inner + i % ni, outer + o, outer + (o + 1) % no]);
                o += 1;
            } else {
                triangles.push([inner + i % ni, outer + o % no, inner + (i + 1) % ni]);
                i += 1;
            }
        }
    }

    // Orientation fix keeps every signed area positive.
    for tri in &mut triangles {
        let [a, b, c] = *tri;
        if (vertices[b] - vertices[a]).cross(vertices[c] - vertices[a]) < 0.0 {
            tri.swap(1, 2);
        }
    }

    Mesh::from_triangles(vertices, triangles, |_| SideLabel::Dirichlet)
        .expect("ring construction yields a valid mesh")
}
