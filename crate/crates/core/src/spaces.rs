//! Degrees of freedom, evaluation, differential operators, projections, and
//! quasi-interpolants for the Crouzeix-Raviart, lowest-order Raviart-Thomas,
//! and element-wise-constant spaces.
//!
//! Dof conventions:
//! - `CrFunction`: one real per side, the side mean of the function (equal to
//!   the midpoint value for element-wise affine functions),
//! - `RtFunction`: one real per side, the constant normal flux signed against
//!   the mesh's global side normal,
//! - `P0Scalar` / `P0Vector`: one value per triangle.

use crate::energy::ProblemData;
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::mesh::quadrature::{quadrature_rule, QuadDomain};
use crate::mesh::{side_point, triangle_point, GeometryCache, Mesh, SideLabel};

#[derive(Debug, Clone, PartialEq)]
pub struct CrFunction {
    pub dofs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RtFunction {
    pub dofs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct P0Scalar {
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct P0Vector {
    pub values: Vec<Vec2>,
}

impl CrFunction {
    pub fn zeros(mesh: &Mesh) -> Self {
        CrFunction {
            dofs: vec![0.0; mesh.n_sides()],
        }
    }
}

impl RtFunction {
    pub fn zeros(mesh: &Mesh) -> Self {
        RtFunction {
            dofs: vec![0.0; mesh.n_sides()],
        }
    }
}

impl P0Scalar {
    pub fn constant(mesh: &Mesh, c: f64) -> Self {
        P0Scalar {
            values: vec![c; mesh.n_triangles()],
        }
    }
}

/// Side-wise constant data attached to one boundary label set.
#[derive(Debug, Clone)]
pub struct SideData {
    pub label: SideLabel,
    values: Vec<f64>,
}

impl SideData {
    pub fn new(mesh: &Mesh, label: SideLabel, mut value_of: impl FnMut(usize) -> f64) -> Self {
        let values = (0..mesh.n_sides())
            .map(|s| {
                if mesh.side_labels[s] == label {
                    value_of(s)
                } else {
                    0.0
                }
            })
            .collect();
        SideData { label, values }
    }

    pub fn empty(mesh: &Mesh, label: SideLabel) -> Self {
        SideData {
            label,
            values: vec![0.0; mesh.n_sides()],
        }
    }

    /// Value on side `s`, or `None` when `s` does not carry this label.
    pub fn get(&self, mesh: &Mesh, s: usize) -> Option<f64> {
        (mesh.side_labels[s] == self.label).then(|| self.values[s])
    }
}

/// Element-wise gradient of a CR function:
/// `∇(v|_T) = Σ_k dof_k (|S_k|/|T|) n_{T,k}`.
pub fn cr_gradient(mesh: &Mesh, geo: &GeometryCache, v: &CrFunction) -> P0Vector {
    let values = (0..mesh.n_triangles())
        .map(|t| {
            let mut g = Vec2::ZERO;
            for k in 0..3 {
                let s = mesh.tri_sides[t][k];
                let w = geo.side_length[s] / geo.tri_area[t];
                g += geo.tri_outward_normal[t][k].scale(w * v.dofs[s]);
            }
            g
        })
        .collect();
    P0Vector { values }
}

/// Element means `Π_h v` of a CR function (centroid values of the affines).
pub fn cr_element_mean(mesh: &Mesh, v: &CrFunction) -> P0Scalar {
    let values = (0..mesh.n_triangles())
        .map(|t| {
            let [s0, s1, s2] = mesh.tri_sides[t];
            (v.dofs[s0] + v.dofs[s1] + v.dofs[s2]) / 3.0
        })
        .collect();
    P0Scalar { values }
}

/// Evaluates the element-wise affine representative of a CR function.
pub fn cr_eval(mesh: &Mesh, geo: &GeometryCache, v: &CrFunction, t: usize, x: Vec2) -> f64 {
    let mean = {
        let [s0, s1, s2] = mesh.tri_sides[t];
        (v.dofs[s0] + v.dofs[s1] + v.dofs[s2]) / 3.0
    };
    let grad = {
        let mut g = Vec2::ZERO;
        for k in 0..3 {
            let s = mesh.tri_sides[t][k];
            let w = geo.side_length[s] / geo.tri_area[t];
            g += geo.tri_outward_normal[t][k].scale(w * v.dofs[s]);
        }
        g
    };
    mean + grad.dot(x - geo.tri_centroid[t])
}

/// Element-wise divergence `div y|_T = (1/|T|) Σ_k σ_k |S_k| dof_k`.
pub fn rt_divergence(mesh: &Mesh, geo: &GeometryCache, y: &RtFunction) -> P0Scalar {
    let values = (0..mesh.n_triangles())
        .map(|t| {
            let mut d = 0.0;
            for k in 0..3 {
                let s = mesh.tri_sides[t][k];
                d += geo.tri_side_sign[t][k] * geo.side_length[s] * y.dofs[s];
            }
            d / geo.tri_area[t]
        })
        .collect();
    P0Scalar { values }
}

/// Element means `Π_h y` of an RT function.
pub fn rt_element_mean(mesh: &Mesh, geo: &GeometryCache, y: &RtFunction) -> P0Vector {
    let values = (0..mesh.n_triangles())
        .map(|t| rt_mean_on(mesh, geo, y, t))
        .collect();
    P0Vector { values }
}

pub(crate) fn rt_mean_on(mesh: &Mesh, geo: &GeometryCache, y: &RtFunction, t: usize) -> Vec2 {
    let tri = mesh.triangles[t];
    let mut m = Vec2::ZERO;
    for k in 0..3 {
        let s = mesh.tri_sides[t][k];
        let opp = mesh.vertices[tri[k]];
        let coeff =
            geo.tri_side_sign[t][k] * geo.side_length[s] / (2.0 * geo.tri_area[t]) * y.dofs[s];
        m += (geo.tri_centroid[t] - opp).scale(coeff);
    }
    m
}

/// Pointwise evaluation of an RT field on element `t`. Errors when `x` lies
/// outside the element (barycentric tolerance 1e-12).
pub fn rt_eval(mesh: &Mesh, geo: &GeometryCache, y: &RtFunction, t: usize, x: Vec2) -> Result<Vec2> {
    let tri = mesh.triangles[t];
    let [p0, p1, p2] = [
        mesh.vertices[tri[0]],
        mesh.vertices[tri[1]],
        mesh.vertices[tri[2]],
    ];
    let area2 = 2.0 * geo.tri_area[t];
    let b0 = (p1 - x).cross(p2 - x) / area2;
    let b1 = (p2 - x).cross(p0 - x) / area2;
    let b2 = (p0 - x).cross(p1 - x) / area2;
    if b0 < -1e-12 || b1 < -1e-12 || b2 < -1e-12 {
        return Err(Error::Parameter(format!(
            "point ({}, {}) lies outside element {t}",
            x.x, x.y
        )));
    }
    Ok(rt_eval_unchecked(mesh, geo, y, t, x))
}

/// RT fields are `mean + (div/2)(x - centroid)` on each element.
pub(crate) fn rt_eval_unchecked(
    mesh: &Mesh,
    geo: &GeometryCache,
    y: &RtFunction,
    t: usize,
    x: Vec2,
) -> Vec2 {
    let mean = rt_mean_on(mesh, geo, y, t);
    let mut div = 0.0;
    for k in 0..3 {
        let s = mesh.tri_sides[t][k];
        div += geo.tri_side_sign[t][k] * geo.side_length[s] * y.dofs[s];
    }
    div /= geo.tri_area[t];
    mean + (x - geo.tri_centroid[t]).scale(0.5 * div)
}

/// Side mean of a scalar function, computed with the degree-4 edge rule.
pub fn side_mean(mesh: &Mesh, s: usize, f: impl Fn(Vec2) -> f64) -> f64 {
    let rule = quadrature_rule(QuadDomain::Edge, 4).expect("degree 4 supported");
    rule.points
        .iter()
        .zip(&rule.weights)
        .map(|(p, w)| w * f(side_point(mesh, s, p[0])))
        .sum()
}

/// Element mean of a scalar function, computed with the degree-4 triangle rule.
pub fn element_mean(mesh: &Mesh, t: usize, f: impl Fn(Vec2) -> f64) -> f64 {
    let rule = quadrature_rule(QuadDomain::Triangle, 4).expect("degree 4 supported");
    rule.points
        .iter()
        .zip(&rule.weights)
        .map(|(p, w)| w * f(triangle_point(mesh, t, *p)))
        .sum()
}

/// CR quasi-interpolant: side dofs are side means of `v`.
pub fn cr_interpolate(mesh: &Mesh, v: impl Fn(Vec2) -> f64) -> CrFunction {
    let dofs = (0..mesh.n_sides())
        .map(|s| side_mean(mesh, s, &v))
        .collect();
    CrFunction { dofs }
}

/// RT quasi-interpolant: side dofs are side means of the normal trace.
pub fn rt_interpolate(mesh: &Mesh, geo: &GeometryCache, y: impl Fn(Vec2) -> Vec2) -> RtFunction {
    let dofs = (0..mesh.n_sides())
        .map(|s| {
            let n = geo.side_normal[s];
            side_mean(mesh, s, |x| y(x).dot(n))
        })
        .collect();
    RtFunction { dofs }
}

/// Projects analytic problem data onto the discrete data spaces:
/// element means for the load and the obstacle, side means for the boundary
/// data. Fails when the projected obstacle is not strictly positive.
pub fn project_data(
    mesh: &Mesh,
    _geo: &GeometryCache,
    f: impl Fn(Vec2) -> f64,
    g: impl Fn(Vec2) -> f64,
    u_d: impl Fn(Vec2) -> f64,
    zeta: impl Fn(Vec2) -> f64,
) -> Result<ProblemData> {
    let load = P0Scalar {
        values: (0..mesh.n_triangles())
            .map(|t| element_mean(mesh, t, &f))
            .collect(),
    };
    let zeta_h = P0Scalar {
        values: (0..mesh.n_triangles())
            .map(|t| element_mean(mesh, t, &zeta))
            .collect(),
    };
    for (t, &z) in zeta_h.values.iter().enumerate() {
        if !(z > 0.0) {
            return Err(Error::Data(format!(
                "projected obstacle is non-positive ({z:.3e}) on element {t}"
            )));
        }
    }
    let neumann = SideData::new(mesh, SideLabel::Neumann, |s| side_mean(mesh, s, &g));
    let dirichlet = SideData::new(mesh, SideLabel::Dirichlet, |s| side_mean(mesh, s, &u_d));
    Ok(ProblemData {
        zeta: zeta_h,
        load,
        neumann,
        dirichlet,
    })
}

/// Defect of the discrete integration-by-parts formula,
/// `|(∇_h v, Π_h y)_Ω + (Π_h v, div y)_Ω - (π_h v, y·n)_{∂Ω}|`.
pub fn discrete_ibp_defect(mesh: &Mesh, geo: &GeometryCache, v: &CrFunction, y: &RtFunction) -> f64 {
    let grad = cr_gradient(mesh, geo, v);
    let mean_v = cr_element_mean(mesh, v);
    let mean_y = rt_element_mean(mesh, geo, y);
    let div = rt_divergence(mesh, geo, y);

    let mut lhs = 0.0;
    for t in 0..mesh.n_triangles() {
        lhs += geo.tri_area[t]
            * (grad.values[t].dot(mean_y.values[t]) + mean_v.values[t] * div.values[t]);
    }
    let mut rhs = 0.0;
    for s in mesh.boundary_sides() {
        rhs += geo.side_length[s] * v.dofs[s] * y.dofs[s];
    }
    (lhs - rhs).abs()
}

/// Serializes fields into the `kind,index,value` CSV dump format.
pub fn dump_fields_csv(
    cr: Option<&CrFunction>,
    rt: Option<&RtFunction>,
    p0s: Option<&P0Scalar>,
    p0v: Option<&P0Vector>,
) -> String {
    let mut out = String::from("kind,index,value\n");
    if let Some(v) = cr {
        for (i, d) in v.dofs.iter().enumerate() {
            out.push_str(&format!("cr,{i},{d:.17e}\n"));
        }
    }
    if let Some(y) = rt {
        for (i, d) in y.dofs.iter().enumerate() {
            out.push_str(&format!("rt,{i},{d:.17e}\n"));
        }
    }
    if let Some(p) = p0s {
        for (i, d) in p.values.iter().enumerate() {
            out.push_str(&format!("p0s,{i},{d:.17e}\n"));
        }
    }
    if let Some(p) = p0v {
        for (i, d) in p.values.iter().enumerate() {
            out.push_str(&format!("p0vx,{i},{:.17e}\n", d.x));
        }
        for (i, d) in p.values.iter().enumerate() {
            out.push_str(&format!("p0vy,{i},{:.17e}\n", d.y));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::disk::build_disk_mesh;
    use crate::mesh::compute_geometry;

    fn unit_right_triangle() -> (Mesh, GeometryCache) {
        let mesh = Mesh::from_triangles(
            vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)],
            vec![[0, 1, 2]],
            |_| SideLabel::Dirichlet,
        )
        .unwrap();
        let geo = compute_geometry(&mesh).unwrap();
        (mesh, geo)
    }

    /// Independent element mean of a gradient via the degree-5 rule.
    fn mean_grad_oracle(mesh: &Mesh, t: usize, grad: impl Fn(Vec2) -> Vec2) -> Vec2 {
        let rule = quadrature_rule(QuadDomain::Triangle, 5).unwrap();
        let mut m = Vec2::ZERO;
        for (p, w) in rule.points.iter().zip(&rule.weights) {
            m += grad(triangle_point(mesh, t, *p)).scale(*w);
        }
        m
    }

    #[test]
    fn cr_gradient_reproduces_affine() {
        let (mesh, geo) = unit_right_triangle();
        // v = x1: side means are the midpoint values.
        let v = cr_interpolate(&mesh, |x| x.x);
        let g = cr_gradient(&mesh, &geo, &v);
        assert!((g.values[0].x - 1.0).abs() < 1e-14);
        assert!(g.values[0].y.abs() < 1e-14);

        let c = cr_interpolate(&mesh, |_| 4.25);
        let gc = cr_gradient(&mesh, &geo, &c);
        assert!(gc.values[0].norm() < 1e-14);
    }

    #[test]
    fn cr_gradient_preservation_on_quadratic() {
        let (mesh, geo) = unit_right_triangle();
        let v = cr_interpolate(&mesh, |x| x.x * x.x);
        let g = cr_gradient(&mesh, &geo, &v);
        let oracle = mean_grad_oracle(&mesh, 0, |x| Vec2::new(2.0 * x.x, 0.0));
        assert!((g.values[0] - oracle).norm() < 1e-13);
    }

    #[test]
    fn gradient_preservation_on_disk() {
        let mesh = build_disk_mesh(1.0, 2).unwrap();
        let geo = compute_geometry(&mesh).unwrap();
        let cases: Vec<(Box<dyn Fn(Vec2) -> f64>, Box<dyn Fn(Vec2) -> Vec2>)> = vec![
            (Box::new(|_| 1.0), Box::new(|_| Vec2::ZERO)),
            (Box::new(|x| x.x), Box::new(|_| Vec2::new(1.0, 0.0))),
            (Box::new(|x| x.y), Box::new(|_| Vec2::new(0.0, 1.0))),
            (Box::new(|x| x.x * x.x), Box::new(|x| Vec2::new(2.0 * x.x, 0.0))),
            (Box::new(|x| x.x * x.y), Box::new(|x| Vec2::new(x.y, x.x))),
            (Box::new(|x| x.x.sin()), Box::new(|x| Vec2::new(x.x.cos(), 0.0))),
        ];
        for (v, grad) in cases {
            let vh = cr_interpolate(&mesh, &v);
            let gh = cr_gradient(&mesh, &geo, &vh);
            for t in 0..mesh.n_triangles() {
                let oracle = mean_grad_oracle(&mesh, t, &grad);
                assert!(
                    (gh.values[t] - oracle).norm() < 1e-10,
                    "element {t}: {:?} vs {:?}",
                    gh.values[t],
                    oracle
                );
            }
        }
    }

    #[test]
    fn rt_identity_field_on_unit_triangle() {
        let (mesh, geo) = unit_right_triangle();
        // y(x) = x has fluxes 0 on both legs and 1/sqrt(2) on the hypotenuse.
        let y = rt_interpolate(&mesh, &geo, |x| x);
        let hyp = mesh.sides.iter().position(|&p| p == [1, 2]).unwrap();
        for s in 0..3 {
            let want = if s == hyp { 1.0 / 2.0_f64.sqrt() } else { 0.0 };
            assert!((y.dofs[s] - want).abs() < 1e-14, "side {s}");
        }
        let div = rt_divergence(&mesh, &geo, &y);
        assert!((div.values[0] - 2.0).abs() < 1e-13);
    }

    #[test]
    fn rt_constant_field() {
        let (mesh, geo) = unit_right_triangle();
        let y = rt_interpolate(&mesh, &geo, |_| Vec2::new(1.0, 0.0));
        let div = rt_divergence(&mesh, &geo, &y);
        let mean = rt_element_mean(&mesh, &geo, &y);
        assert!(div.values[0].abs() < 1e-13);
        assert!((mean.values[0] - Vec2::new(1.0, 0.0)).norm() < 1e-14);

        // A constant field has flux n_S · (1,0) on the side with normal n_S.
        let hyp = mesh.sides.iter().position(|&p| p == [1, 2]).unwrap();
        assert!((y.dofs[hyp] - 1.0 / 2.0_f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn rt_centered_field_has_zero_mean() {
        let (mesh, geo) = unit_right_triangle();
        let c = geo.tri_centroid[0];
        let y = rt_interpolate(&mesh, &geo, |x| x - c);
        let mean = rt_element_mean(&mesh, &geo, &y);
        assert!(mean.values[0].norm() < 1e-14);
        // Element mean equals the value at the centroid.
        let at_c = rt_eval(&mesh, &geo, &y, 0, c).unwrap();
        assert!(at_c.norm() < 1e-14);
    }

    #[test]
    fn rt_interpolation_is_idempotent_and_commutes_with_div() {
        let mesh = build_disk_mesh(1.0, 1).unwrap();
        let geo = compute_geometry(&mesh).unwrap();

        // y(x) = -(C/2) x with C = 2: div Π_h^rt y = -2 on every element.
        let y = rt_interpolate(&mesh, &geo, |x| x.scale(-1.0));
        let div = rt_divergence(&mesh, &geo, &y);
        for t in 0..mesh.n_triangles() {
            assert!((div.values[t] + 2.0).abs() < 1e-12);
        }

        // An RT0 input reproduces its own dofs.
        let again = rt_interpolate(&mesh, &geo, |x| {
            rt_eval_unchecked(&mesh, &geo, &y, locate(&mesh, &geo, x), x)
        });
        for s in 0..mesh.n_sides() {
            assert!((again.dofs[s] - y.dofs[s]).abs() < 1e-14);
        }
    }

    #[test]
    fn divergence_preservation_on_disk() {
        let mesh = build_disk_mesh(1.0, 2).unwrap();
        let geo = compute_geometry(&mesh).unwrap();
        let rule = quadrature_rule(QuadDomain::Triangle, 5).unwrap();
        let cases: Vec<(Box<dyn Fn(Vec2) -> Vec2>, Box<dyn Fn(Vec2) -> f64>)> = vec![
            (Box::new(|_| Vec2::new(1.0, 0.0)), Box::new(|_| 0.0)),
            (Box::new(|x| x), Box::new(|_| 2.0)),
            (Box::new(|x| Vec2::new(x.y * x.y, 0.0)), Box::new(|_| 0.0)),
        ];
        for (y, divy) in cases {
            let yh = rt_interpolate(&mesh, &geo, &y);
            let dh = rt_divergence(&mesh, &geo, &yh);
            for t in 0..mesh.n_triangles() {
                let oracle: f64 = rule
                    .points
                    .iter()
                    .zip(&rule.weights)
                    .map(|(p, w)| w * divy(triangle_point(&mesh, t, *p)))
                    .sum();
                assert!((dh.values[t] - oracle).abs() < 1e-10, "element {t}");
            }
        }
    }

    #[test]
    fn cr_interpolation_examples() {
        let (mesh, _geo) = unit_right_triangle();
        let v = cr_interpolate(&mesh, |x| x.x);
        let bottom = mesh.sides.iter().position(|&p| p == [0, 1]).unwrap();
        assert!((v.dofs[bottom] - 0.5).abs() < 1e-15);

        let v2 = cr_interpolate(&mesh, |x| x.x * x.x);
        assert!((v2.dofs[bottom] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn element_mean_of_cr_is_centroid_value() {
        let mesh = build_disk_mesh(1.0, 0).unwrap();
        let geo = compute_geometry(&mesh).unwrap();
        let v = cr_interpolate(&mesh, |x| 3.0 * x.x - 2.0 * x.y + 0.5);
        let means = cr_element_mean(&mesh, &v);
        for t in 0..mesh.n_triangles() {
            let c = geo.tri_centroid[t];
            let want = 3.0 * c.x - 2.0 * c.y + 0.5;
            assert!((means.values[t] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn project_data_constants_and_positivity() {
        let mesh = build_disk_mesh(1.0, 0).unwrap();
        let geo = compute_geometry(&mesh).unwrap();
        let data = project_data(&mesh, &geo, |_| 10.0, |_| 0.0, |_| 0.0, |_| 1.0).unwrap();
        for t in 0..mesh.n_triangles() {
            assert!((data.load.values[t] - 10.0).abs() < 1e-13);
            assert!((data.zeta.values[t] - 1.0).abs() < 1e-13);
        }
        let bad = project_data(&mesh, &geo, |_| 0.0, |_| 0.0, |_| 0.0, |x| x.x);
        assert!(matches!(bad, Err(Error::Data(_))));
    }

    #[test]
    fn ibp_defect_vanishes() {
        let mesh = build_disk_mesh(1.0, 1).unwrap();
        let geo = compute_geometry(&mesh).unwrap();

        let zero = CrFunction::zeros(&mesh);
        let y = rt_interpolate(&mesh, &geo, |x| Vec2::new(x.y, -0.5 * x.x));
        assert_eq!(discrete_ibp_defect(&mesh, &geo, &zero, &y), 0.0);

        let v = cr_interpolate(&mesh, |x| x.x);
        let cst = rt_interpolate(&mesh, &geo, |_| Vec2::new(1.0, 0.0));
        assert!(discrete_ibp_defect(&mesh, &geo, &v, &cst) < 1e-13);

        // Deterministic pseudo-random dof vectors.
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for _ in 0..10 {
            let v = CrFunction {
                dofs: (0..mesh.n_sides()).map(|_| next()).collect(),
            };
            let y = RtFunction {
                dofs: (0..mesh.n_sides()).map(|_| next()).collect(),
            };
            assert!(discrete_ibp_defect(&mesh, &geo, &v, &y) < 1e-12);
        }
    }

    #[test]
    fn rt_eval_rejects_outside_points() {
        let (mesh, geo) = unit_right_triangle();
        let y = rt_interpolate(&mesh, &geo, |x| x);
        assert!(rt_eval(&mesh, &geo, &y, 0, Vec2::new(2.0, 2.0)).is_err());
        assert!(rt_eval(&mesh, &geo, &y, 0, Vec2::new(0.25, 0.25)).is_ok());
    }

    #[test]
    fn side_data_respects_label_sets() {
        let mesh = build_disk_mesh(1.0, 0).unwrap();
        let d = SideData::new(&mesh, SideLabel::Dirichlet, |s| s as f64);
        let mut on_boundary = 0;
        for s in 0..mesh.n_sides() {
            match mesh.side_labels[s] {
                SideLabel::Dirichlet => {
                    assert_eq!(d.get(&mesh, s), Some(s as f64));
                    on_boundary += 1;
                }
                _ => assert_eq!(d.get(&mesh, s), None),
            }
        }
        assert!(on_boundary > 0);
    }

    /// Brute-force point location for test use.
    fn locate(mesh: &Mesh, geo: &GeometryCache, x: Vec2) -> usize {
        for t in 0..mesh.n_triangles() {
            let tri = mesh.triangles[t];
            let [p0, p1, p2] = [
                mesh.vertices[tri[0]],
                mesh.vertices[tri[1]],
                mesh.vertices[tri[2]],
            ];
            let area2 = 2.0 * geo.tri_area[t];
            let b0 = (p1 - x).cross(p2 - x) / area2;
            let b1 = (p2 - x).cross(p0 - x) / area2;
            let b2 = (p0 - x).cross(p1 - x) / area2;
            if b0 >= -1e-12 && b1 >= -1e-12 && b2 >= -1e-12 {
                return t;
            }
        }
        panic!("point not located");
    }
}
