//! Reconstruction of the primal solution from the dual one, primal-dual gap
//! estimators, strong-convexity error measures, and conforming
//! post-processing.
//!
//! The reconstruction builds the element-wise affine field
//! `û|_T(x) = λ_T + dphi_star(Π_h z|_T)·(x - x_T)`; its gradient satisfies
//! the discrete convex optimality relation exactly, and its side traces
//! agree across interior sides up to the solver residual. The gap estimator
//! integrates the Fenchel-Young defect
//! `φ*(Π_h y) - Π_h y·∇_h v + φ(∇_h v)` element by element.

use crate::energy::{bregman_phi_star, dphi_star, phi_star, ProblemData, TOL_CONSTRUCTION, TOL_LINEAR_SOLVE};
use crate::error::{Error, Result};
use crate::experiments::ManufacturedCase;
use crate::geometry::Vec2;
use crate::mesh::quadrature::{quadrature_rule, QuadDomain};
use crate::mesh::{triangle_point, GeometryCache, Mesh, SideLabel};
use crate::spaces::{
    cr_eval, cr_gradient, rt_divergence, rt_element_mean, rt_eval_unchecked, CrFunction,
    P0Scalar, P0Vector, RtFunction,
};

/// Relative tolerance for detecting active elements in the discrete measures.
pub const ACTIVE_TOL: f64 = 1e-8;

/// Which admissibility condition failed, with the worst offender and its
/// violation magnitude.
#[derive(Debug, Clone, Copy, Default)]
pub struct AdmissibilityFlags {
    pub primal_gradient: Option<(usize, f64)>,
    pub primal_dirichlet: Option<(usize, f64)>,
    pub dual_divergence: Option<(usize, f64)>,
    pub dual_neumann: Option<(usize, f64)>,
}

impl AdmissibilityFlags {
    pub fn admissible(&self) -> bool {
        self.primal_gradient.is_none()
            && self.primal_dirichlet.is_none()
            && self.dual_divergence.is_none()
            && self.dual_neumann.is_none()
    }
}

/// Primal-dual gap estimator with its per-element refinement indicators.
#[derive(Debug, Clone)]
pub struct GapBreakdown {
    pub total: f64,
    pub per_element: P0Scalar,
    pub flags: AdmissibilityFlags,
}

/// The two strong-convexity error measures and their summands.
#[derive(Debug, Clone, Copy)]
pub struct ConvexityMeasures {
    pub rho_primal_sq: f64,
    pub rho_dual_sq: f64,
    /// `½‖∇_h v - ∇_h u‖²`.
    pub gradient_distance_term: f64,
    /// `(|Π_h z|/ζ - 1, ζ² - ∇_h u·∇_h v)` over the active set.
    pub active_set_term: f64,
    /// Second-order dual defect; equals `rho_dual_sq`.
    pub hessian_quadratic_term: f64,
}

/// Inverse generalized Marini reconstruction from a converged dual pair.
/// Returns the CR function (interior side dofs average the two element
/// traces at the side midpoint) and the maximal trace mismatch.
pub fn marini_reconstruct(
    mesh: &Mesh,
    geo: &GeometryCache,
    z: &RtFunction,
    lambda: &P0Scalar,
    data: &ProblemData,
) -> (CrFunction, f64) {
    let means = rt_element_mean(mesh, geo, z);
    let trace = |t: usize, x: Vec2| -> f64 {
        let g = dphi_star(means.values[t], data.zeta.values[t]);
        lambda.values[t] + g.dot(x - geo.tri_centroid[t])
    };

    let mut dofs = vec![0.0; mesh.n_sides()];
    let mut defect = 0.0_f64;
    for s in 0..mesh.n_sides() {
        let adj = mesh.side_adjacency[s];
        let xm = geo.side_midpoint[s];
        let tm = trace(adj.minus, xm);
        match adj.plus {
            Some(tp_el) => {
                let tp = trace(tp_el, xm);
                defect = defect.max((tp - tm).abs());
                dofs[s] = 0.5 * (tm + tp);
            }
            None => dofs[s] = tm,
        }
    }
    (CrFunction { dofs }, defect)
}

/// Discrete primal-dual gap estimator
/// `η² = ∫ φ*(Π_h y) - Π_h y·∇_h v + φ(∇_h v) dx` with admissibility flags.
pub fn discrete_gap_estimator(
    mesh: &Mesh,
    geo: &GeometryCache,
    v: &CrFunction,
    y: &RtFunction,
    data: &ProblemData,
) -> GapBreakdown {
    let grad = cr_gradient(mesh, geo, v);
    let means = rt_element_mean(mesh, geo, y);
    let div = rt_divergence(mesh, geo, y);

    let mut flags = AdmissibilityFlags::default();
    let mut per_element = Vec::with_capacity(mesh.n_triangles());
    let mut total = 0.0;
    for t in 0..mesh.n_triangles() {
        let zeta = data.zeta.values[t];
        let g = grad.values[t];
        let s = means.values[t];
        let contribution =
            geo.tri_area[t] * (phi_star(s, zeta) - s.dot(g) + 0.5 * g.norm_sq());
        per_element.push(contribution);
        total += contribution;

        let viol = g.norm() - zeta;
        if viol > TOL_CONSTRUCTION {
            let worst = flags.primal_gradient.map_or(0.0, |(_, w)| w);
            if viol > worst {
                flags.primal_gradient = Some((t, viol));
            }
        }
        let f = data.load.values[t];
        let dviol = (div.values[t] + f).abs();
        if dviol > TOL_LINEAR_SOLVE * (1.0 + f.abs()) {
            let worst = flags.dual_divergence.map_or(0.0, |(_, w)| w);
            if dviol > worst {
                flags.dual_divergence = Some((t, dviol));
            }
        }
    }
    for s in mesh.sides_with_label(SideLabel::Dirichlet) {
        let viol = (v.dofs[s] - data.dirichlet.get(mesh, s).unwrap_or(0.0)).abs();
        if viol > TOL_CONSTRUCTION && viol > flags.primal_dirichlet.map_or(0.0, |(_, w)| w) {
            flags.primal_dirichlet = Some((s, viol));
        }
    }
    for s in mesh.sides_with_label(SideLabel::Neumann) {
        let g = data.neumann.get(mesh, s).unwrap_or(0.0);
        let viol = (y.dofs[s] - g).abs();
        if viol > TOL_LINEAR_SOLVE * (1.0 + g.abs())
            && viol > flags.dual_neumann.map_or(0.0, |(_, w)| w)
        {
            flags.dual_neumann = Some((s, viol));
        }
    }

    GapBreakdown {
        total,
        per_element: P0Scalar { values: per_element },
        flags,
    }
}

/// Discrete strong-convexity measures of a pair `(v, y)` against the
/// discrete solution pair represented by the dual field `z_rt`. The primal
/// solution gradient and the active set are recovered from `z_rt` through
/// the discrete convex optimality relation (the clamp map), which holds
/// exactly for the Marini-reconstructed solution.
pub fn discrete_convexity_measures(
    mesh: &Mesh,
    geo: &GeometryCache,
    v: &CrFunction,
    y: &RtFunction,
    z_rt: &RtFunction,
    data: &ProblemData,
) -> ConvexityMeasures {
    let grad_v = cr_gradient(mesh, geo, v);
    let means_y = rt_element_mean(mesh, geo, y);
    let means_z = rt_element_mean(mesh, geo, z_rt);

    let mut gradient_distance_term = 0.0;
    let mut active_set_term = 0.0;
    let mut hessian_quadratic_term = 0.0;
    for t in 0..mesh.n_triangles() {
        let area = geo.tri_area[t];
        let zeta = data.zeta.values[t];
        let zm = means_z.values[t];
        let grad_u = dphi_star(zm, zeta);

        gradient_distance_term += 0.5 * area * (grad_v.values[t] - grad_u).norm_sq();
        if zm.norm() >= zeta * (1.0 - ACTIVE_TOL) {
            active_set_term +=
                area * (zm.norm() / zeta - 1.0) * (zeta * zeta - grad_u.dot(grad_v.values[t]));
        }
        hessian_quadratic_term += area * bregman_phi_star(means_y.values[t], zm, zeta);
    }

    ConvexityMeasures {
        rho_primal_sq: gradient_distance_term + active_set_term,
        rho_dual_sq: hessian_quadratic_term,
        gradient_distance_term,
        active_set_term,
        hessian_quadratic_term,
    }
}

/// Continuous conforming P1 field given by vertex values.
#[derive(Debug, Clone)]
pub struct P1Function {
    pub vertex_values: Vec<f64>,
}

/// Element-wise gradients of a P1 field.
pub fn p1_gradient(mesh: &Mesh, geo: &GeometryCache, p1: &P1Function) -> P0Vector {
    let values = (0..mesh.n_triangles())
        .map(|t| {
            let tri = mesh.triangles[t];
            let p = [
                mesh.vertices[tri[0]],
                mesh.vertices[tri[1]],
                mesh.vertices[tri[2]],
            ];
            let inv2a = 1.0 / (2.0 * geo.tri_area[t]);
            let mut g = Vec2::ZERO;
            for k in 0..3 {
                let grad_bary = (p[(k + 2) % 3] - p[(k + 1) % 3]).perp().scale(inv2a);
                g += grad_bary.scale(p1.vertex_values[tri[k]]);
            }
            g
        })
        .collect();
    P0Vector { values }
}

/// Node-averaging post-processing into the conforming P1 space: interior
/// vertices average the adjacent element traces, boundary vertices take the
/// exact boundary values, and the whole function is scaled so the gradient
/// constraint holds.
pub fn conforming_postprocess(
    mesh: &Mesh,
    geo: &GeometryCache,
    u_cr: &CrFunction,
    data: &ProblemData,
    exact_boundary: impl Fn(Vec2) -> f64,
) -> P1Function {
    let nv = mesh.n_vertices();
    let mut incident = vec![0usize; nv];
    let mut sums = vec![0.0; nv];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        for &vi in tri {
            sums[vi] += cr_eval(mesh, geo, u_cr, t, mesh.vertices[vi]);
            incident[vi] += 1;
        }
    }

    let mut boundary_vertex = vec![false; nv];
    for s in mesh.boundary_sides().collect::<Vec<_>>() {
        for &vi in &mesh.sides[s] {
            boundary_vertex[vi] = true;
        }
    }

    let vertex_values = (0..nv)
        .map(|vi| {
            if boundary_vertex[vi] {
                exact_boundary(mesh.vertices[vi])
            } else {
                sums[vi] / incident[vi] as f64
            }
        })
        .collect();
    let mut p1 = P1Function { vertex_values };

    let grads = p1_gradient(mesh, geo, &p1);
    let worst = (0..mesh.n_triangles())
        .map(|t| grads.values[t].norm() / data.zeta.values[t])
        .fold(0.0_f64, f64::max);
    if worst > 1.0 {
        let scale = 1.0 / worst;
        for v in &mut p1.vertex_values {
            *v *= scale;
        }
    }
    p1
}

/// Continuous primal-dual gap estimator
/// `η² = ∫ φ(∇v) - ∇v·y + φ*(y) dx` over the mesh domain, for a conforming
/// `v` and an absolutely continuous admissible dual field `y`.
pub fn continuous_gap_estimator(
    mesh: &Mesh,
    geo: &GeometryCache,
    v_conf: &P1Function,
    y: &RtFunction,
    data: &ProblemData,
    case: &ManufacturedCase,
) -> Result<f64> {
    let grads = p1_gradient(mesh, geo, v_conf);
    check_continuous_admissibility(mesh, geo, &grads, y, data, case)?;

    let rule = quadrature_rule(QuadDomain::Triangle, 4).expect("degree 4 supported");
    let mut total = 0.0;
    for t in 0..mesh.n_triangles() {
        let g = grads.values[t];
        let mut acc = 0.0;
        for (p, w) in rule.points.iter().zip(&rule.weights) {
            let x = triangle_point(mesh, t, *p);
            let yx = rt_eval_unchecked(mesh, geo, y, t, x);
            let zeta = case.zeta(x);
            acc += w * (0.5 * g.norm_sq() - g.dot(yx) + phi_star(yx, zeta));
        }
        total += geo.tri_area[t] * acc;
    }
    Ok(total)
}

/// Continuous total error `ρ²_I(v) + ρ²_{-D}(y)` against the exact solution
/// pair of the manufactured case; the active set is the analytic annulus.
pub fn continuous_total_error(
    mesh: &Mesh,
    geo: &GeometryCache,
    v_conf: &P1Function,
    y: &RtFunction,
    data: &ProblemData,
    case: &ManufacturedCase,
) -> Result<f64> {
    let grads = p1_gradient(mesh, geo, v_conf);
    check_continuous_admissibility(mesh, geo, &grads, y, data, case)?;

    let rule = quadrature_rule(QuadDomain::Triangle, 4).expect("degree 4 supported");
    let mut total = 0.0;
    for t in 0..mesh.n_triangles() {
        let g = grads.values[t];
        let mut acc = 0.0;
        for (p, w) in rule.points.iter().zip(&rule.weights) {
            let x = triangle_point(mesh, t, *p);
            let zeta = case.zeta(x);
            let gu = case.grad_u(x);
            let zx = case.z(x);
            let yx = rt_eval_unchecked(mesh, geo, y, t, x);
            let mut val = 0.5 * (g - gu).norm_sq() + bregman_phi_star(yx, zx, zeta);
            if case.is_active(x) {
                val += (zx.norm() / zeta - 1.0) * (zeta * zeta - gu.dot(g));
            }
            acc += w * val;
        }
        total += geo.tri_area[t] * acc;
    }
    Ok(total)
}

fn check_continuous_admissibility(
    mesh: &Mesh,
    geo: &GeometryCache,
    grads: &P0Vector,
    y: &RtFunction,
    data: &ProblemData,
    case: &ManufacturedCase,
) -> Result<()> {
    for t in 0..mesh.n_triangles() {
        let zeta = case.zeta(geo.tri_centroid[t]);
        if grads.values[t].norm() > zeta + TOL_CONSTRUCTION {
            return Err(Error::Data(format!(
                "conforming field violates the gradient constraint on element {t} \
                 (|∇v| = {:.6} > ζ = {zeta})",
                grads.values[t].norm()
            )));
        }
    }
    let div = rt_divergence(mesh, geo, y);
    for t in 0..mesh.n_triangles() {
        let f = data.load.values[t];
        if (div.values[t] + f).abs() > TOL_LINEAR_SOLVE * (1.0 + f.abs()) {
            return Err(Error::Data(format!(
                "dual field is not divergence-admissible on element {t}"
            )));
        }
    }
    Ok(())
}

/// Experimental orders of convergence of an error sequence against the mesh
/// sizes: `EOC_i = (log e_i - log e_{i-1}) / (log h_i - log h_{i-1})`.
pub fn eoc(errors: &[f64], hs: &[f64]) -> Result<Vec<f64>> {
    if errors.len() != hs.len() || errors.len() < 2 {
        return Err(Error::Parameter(
            "eoc needs equally long sequences of length at least 2".into(),
        ));
    }
    if errors.iter().chain(hs.iter()).any(|&v| !(v > 0.0)) {
        return Err(Error::Parameter("eoc requires positive entries".into()));
    }
    Ok(errors
        .windows(2)
        .zip(hs.windows(2))
        .map(|(e, h)| (e[1].ln() - e[0].ln()) / (h[1].ln() - h[0].ln()))
        .collect())
}

/// Serializes per-element gap contributions as refinement indicators.
pub fn dump_indicators_csv(gap: &GapBreakdown) -> String {
    let mut out = String::from("element,eta_sq_contribution\n");
    for (t, v) in gap.per_element.values.iter().enumerate() {
        out.push_str(&format!("{t},{v:.17e}\n"));
    }
    out
}
