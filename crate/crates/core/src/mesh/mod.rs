//! Unstructured triangle meshes with side tables, boundary labels, and
//! cached geometric quantities.
//!
//! Conventions used by every downstream module:
//! - triangles are counter-clockwise vertex index triples,
//! - side `i` of a triangle is the edge opposite local vertex `i`,
//! - sides are stored as sorted vertex pairs in lexicographic order,
//! - the global side normal points from the lower-index element `T-` to the
//!   higher-index element `T+` (outward on the boundary).

pub mod disk;
pub mod io;
pub mod quadrature;

use crate::error::{Error, Result};
use crate::geometry::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SideLabel {
    Interior,
    Dirichlet,
    Neumann,
}

#[derive(Debug, Clone, Copy)]
pub struct SideAdjacency {
    /// Lower-index incident element `T-`.
    pub minus: usize,
    /// Higher-index incident element `T+`; `None` on the boundary.
    pub plus: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: Vec<Vec2>,
    pub triangles: Vec<[usize; 3]>,
    /// Sorted vertex pairs, lexicographically ordered.
    pub sides: Vec<[usize; 2]>,
    pub side_adjacency: Vec<SideAdjacency>,
    pub side_labels: Vec<SideLabel>,
    /// For each triangle, the side index opposite each local vertex.
    pub tri_sides: Vec<[usize; 3]>,
}

impl Mesh {
    /// Assembles the side table from raw vertices and triangles.
    /// `label_of` assigns a label to each boundary side (by side vertex pair).
    pub fn from_triangles(
        vertices: Vec<Vec2>,
        triangles: Vec<[usize; 3]>,
        mut label_of: impl FnMut([usize; 2]) -> SideLabel,
    ) -> Result<Mesh> {
        let nv = vertices.len();
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                if v >= nv {
                    return Err(Error::Parameter(format!(
                        "triangle {t} references vertex {v} of {nv}"
                    )));
                }
            }
        }

        // Collect unique edges in lexicographic order.
        let mut edges: Vec<[usize; 2]> = Vec::with_capacity(3 * triangles.len());
        for tri in &triangles {
            for k in 0..3 {
                let a = tri[(k + 1) % 3];
                let b = tri[(k + 2) % 3];
                edges.push([a.min(b), a.max(b)]);
            }
        }
        edges.sort_unstable();
        edges.dedup();

        let side_index = |pair: [usize; 2]| edges.binary_search(&pair).expect("side present");

        let mut tri_sides = Vec::with_capacity(triangles.len());
        let mut incident: Vec<Vec<usize>> = vec![Vec::new(); edges.len()];
        for (t, tri) in triangles.iter().enumerate() {
            let mut local = [0usize; 3];
            for k in 0..3 {
                let a = tri[(k + 1) % 3];
                let b = tri[(k + 2) % 3];
                let s = side_index([a.min(b), a.max(b)]);
                local[k] = s;
                incident[s].push(t);
            }
            tri_sides.push(local);
        }

        let mut side_adjacency = Vec::with_capacity(edges.len());
        let mut side_labels = Vec::with_capacity(edges.len());
        for (s, inc) in incident.iter().enumerate() {
            match inc.as_slice() {
                [t] => {
                    side_adjacency.push(SideAdjacency {
                        minus: *t,
                        plus: None,
                    });
                    let label = label_of(edges[s]);
                    if label == SideLabel::Interior {
                        return Err(Error::Parameter(format!(
                            "boundary side {:?} labeled Interior",
                            edges[s]
                        )));
                    }
                    side_labels.push(label);
                }
                [t0, t1] => {
                    side_adjacency.push(SideAdjacency {
                        minus: *t0.min(t1),
                        plus: Some(*t0.max(t1)),
                    });
                    side_labels.push(SideLabel::Interior);
                }
                other => {
                    return Err(Error::Parameter(format!(
                        "side {:?} shared by {} triangles",
                        edges[s],
                        other.len()
                    )));
                }
            }
        }

        Ok(Mesh {
            vertices,
            triangles,
            sides: edges,
            side_adjacency,
            side_labels,
            tri_sides,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_sides(&self) -> usize {
        self.sides.len()
    }

    /// Averaged mesh size `(|Ω_h| / #vertices)^(1/2)`.
    pub fn mesh_size(&self, geo: &GeometryCache) -> f64 {
        (geo.total_area / self.n_vertices() as f64).sqrt()
    }

    /// Euler characteristic `V - E + F`; equals 1 for a simply connected mesh.
    pub fn euler_characteristic(&self) -> isize {
        self.n_vertices() as isize - self.n_sides() as isize + self.n_triangles() as isize
    }

    pub fn boundary_sides(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_sides()).filter(|&s| self.side_adjacency[s].plus.is_none())
    }

    pub fn sides_with_label(&self, label: SideLabel) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_sides()).filter(move |&s| self.side_labels[s] == label)
    }
}

/// Per-triangle and per-side geometric quantities derived from a [`Mesh`].
#[derive(Debug, Clone)]
pub struct GeometryCache {
    pub tri_area: Vec<f64>,
    pub tri_centroid: Vec<Vec2>,
    pub side_length: Vec<f64>,
    pub side_midpoint: Vec<Vec2>,
    /// Global unit normal: `T-` to `T+` on interior sides, outward on the boundary.
    pub side_normal: Vec<Vec2>,
    /// Outward unit normal of each triangle on each of its local sides.
    pub tri_outward_normal: Vec<[Vec2; 3]>,
    /// `+1` when the global side normal is outward for the triangle, else `-1`.
    pub tri_side_sign: Vec<[f64; 3]>,
    pub total_area: f64,
}

/// Computes areas, centroids, side normals, and orientation signs.
pub fn compute_geometry(mesh: &Mesh) -> Result<GeometryCache> {
    let nt = mesh.n_triangles();
    let ns = mesh.n_sides();

    let mut tri_area = Vec::with_capacity(nt);
    let mut tri_centroid = Vec::with_capacity(nt);
    let mut tri_outward_normal = vec![[Vec2::ZERO; 3]; nt];
    let mut total_area = 0.0;

    for (t, tri) in mesh.triangles.iter().enumerate() {
        let [p0, p1, p2] = [
            mesh.vertices[tri[0]],
            mesh.vertices[tri[1]],
            mesh.vertices[tri[2]],
        ];
        let signed = 0.5 * (p1 - p0).cross(p2 - p0);
        if signed <= 0.0 {
            return Err(Error::Geometry(format!(
                "triangle {t} has non-positive signed area {signed:.3e}"
            )));
        }
        tri_area.push(signed);
        total_area += signed;
        tri_centroid.push((p0 + p1 + p2).scale(1.0 / 3.0));

        // Side k joins vertices (k+1, k+2); for CCW triangles the outward
        // normal is the edge direction rotated by -90 degrees.
        let pts = [p0, p1, p2];
        for k in 0..3 {
            let a = pts[(k + 1) % 3];
            let b = pts[(k + 2) % 3];
            let e = b - a;
            let n = Vec2::new(e.y, -e.x);
            tri_outward_normal[t][k] = n.scale(1.0 / n.norm());
        }
    }

    let mut side_length = Vec::with_capacity(ns);
    let mut side_midpoint = Vec::with_capacity(ns);
    let mut side_normal = Vec::with_capacity(ns);
    for s in 0..ns {
        let [a, b] = mesh.sides[s];
        let pa = mesh.vertices[a];
        let pb = mesh.vertices[b];
        side_length.push((pb - pa).norm());
        side_midpoint.push((pa + pb).scale(0.5));

        // The global normal is the outward normal of T-.
        let t_minus = mesh.side_adjacency[s].minus;
        let local = mesh.tri_sides[t_minus]
            .iter()
            .position(|&x| x == s)
            .expect("side belongs to its minus element");
        side_normal.push(tri_outward_normal[t_minus][local]);
    }

    let mut tri_side_sign = vec![[0.0; 3]; nt];
    for t in 0..nt {
        for k in 0..3 {
            let s = mesh.tri_sides[t][k];
            let sign = tri_outward_normal[t][k].dot(side_normal[s]);
            tri_side_sign[t][k] = if sign > 0.0 { 1.0 } else { -1.0 };
        }
    }

    Ok(GeometryCache {
        tri_area,
        tri_centroid,
        side_length,
        side_midpoint,
        side_normal,
        tri_outward_normal,
        tri_side_sign,
        total_area,
    })
}

/// Maps an edge-rule parameter `t ∈ [0,1]` onto side `s`.
pub fn side_point(mesh: &Mesh, s: usize, t: f64) -> Vec2 {
    let [a, b] = mesh.sides[s];
    let pa = mesh.vertices[a];
    let pb = mesh.vertices[b];
    pa + (pb - pa).scale(t)
}

/// Maps barycentric coordinates onto triangle `t`.
pub fn triangle_point(mesh: &Mesh, t: usize, bary: [f64; 3]) -> Vec2 {
    let tri = mesh.triangles[t];
    mesh.vertices[tri[0]].scale(bary[0])
        + mesh.vertices[tri[1]].scale(bary[1])
        + mesh.vertices[tri[2]].scale(bary[2])
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn unit_right_triangle() -> Mesh {
        Mesh::from_triangles(
            vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)],
            vec![[0, 1, 2]],
            |_| SideLabel::Dirichlet,
        )
        .unwrap()
    }

    #[test]
    fn unit_triangle_geometry_closed_form() {
        let mesh = unit_right_triangle();
        let geo = compute_geometry(&mesh).unwrap();
        assert_eq!(mesh.n_sides(), 3);
        assert_eq!(mesh.n_triangles(), 1);
        assert!((geo.tri_area[0] - 0.5).abs() < 1e-15);
        assert!((geo.tri_centroid[0].x - 1.0 / 3.0).abs() < 1e-15);
        assert!((geo.tri_centroid[0].y - 1.0 / 3.0).abs() < 1e-15);

        // Hypotenuse is the side [1, 2]: length sqrt(2), outward normal (1,1)/sqrt(2).
        let s = mesh.sides.iter().position(|&p| p == [1, 2]).unwrap();
        assert!((geo.side_length[s] - 2.0_f64.sqrt()).abs() < 1e-15);
        let n = geo.side_normal[s];
        let e = 1.0 / 2.0_f64.sqrt();
        assert!((n.x - e).abs() < 1e-15 && (n.y - e).abs() < 1e-15);
    }

    #[test]
    fn closed_surface_identity_per_triangle() {
        let mesh = disk::build_disk_mesh(1.0, 1).unwrap();
        let geo = compute_geometry(&mesh).unwrap();
        for t in 0..mesh.n_triangles() {
            let mut sum = Vec2::ZERO;
            for k in 0..3 {
                let s = mesh.tri_sides[t][k];
                sum += geo.tri_outward_normal[t][k].scale(geo.side_length[s]);
            }
            assert!(sum.norm() < 1e-12, "triangle {t}: {sum:?}");
        }
    }

    #[test]
    fn interior_normals_opposite_across_sides() {
        let mesh = disk::build_disk_mesh(1.0, 1).unwrap();
        let geo = compute_geometry(&mesh).unwrap();
        for s in 0..mesh.n_sides() {
            if let Some(tp) = mesh.side_adjacency[s].plus {
                let tm = mesh.side_adjacency[s].minus;
                let lm = mesh.tri_sides[tm].iter().position(|&x| x == s).unwrap();
                let lp = mesh.tri_sides[tp].iter().position(|&x| x == s).unwrap();
                let nm = geo.tri_outward_normal[tm][lm];
                let np = geo.tri_outward_normal[tp][lp];
                assert!((nm + np).norm() < 1e-14);
                assert!(geo.tri_side_sign[tm][lm] == 1.0);
                assert!(geo.tri_side_sign[tp][lp] == -1.0);
            }
        }
    }

    #[test]
    fn degenerate_triangle_is_rejected() {
        let mesh = Mesh::from_triangles(
            vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(2.0, 0.0)],
            vec![[0, 1, 2]],
            |_| SideLabel::Dirichlet,
        )
        .unwrap();
        assert!(matches!(compute_geometry(&mesh), Err(Error::Geometry(_))));
    }
}
