//! The conjugate density pair of the gradient-constrained Dirichlet energy,
//! its derivatives, the semi-implicit flow weight, and the discrete primal
//! and dual energy functionals.
//!
//! The conjugate density is quadratic inside the obstacle ball and grows
//! linearly in `|s|` outside:
//! `φ*(s) = |s|²/2` for `|s| ≤ ζ`, `ζ|s| - ζ²/2` for `|s| > ζ`.

use crate::geometry::{Mat2, Vec2};
use crate::mesh::{GeometryCache, Mesh, SideLabel};
use crate::spaces::{
    cr_element_mean, cr_gradient, rt_divergence, rt_element_mean, CrFunction, P0Scalar,
    RtFunction, SideData,
};

/// Feasibility tolerance for constraints met by construction.
pub const TOL_CONSTRUCTION: f64 = 1e-12;
/// Feasibility tolerance for constraints met by a linear solve.
pub const TOL_LINEAR_SOLVE: f64 = 1e-10;

/// Discrete problem data: element-wise obstacle and load, side-wise boundary
/// data. The obstacle is strictly positive on every element.
#[derive(Debug, Clone)]
pub struct ProblemData {
    pub zeta: P0Scalar,
    pub load: P0Scalar,
    pub neumann: SideData,
    pub dirichlet: SideData,
}

/// Energy value plus a feasibility flag; an infeasible flag encodes the
/// indicator `+∞` (primal) or `-∞` (dual) while keeping the finite part
/// available for diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct EnergyValue {
    pub value: f64,
    pub feasible: bool,
}

/// Conjugate density `φ*(s; ζ)`.
pub fn phi_star(s: Vec2, zeta: f64) -> f64 {
    let r = s.norm();
    if r <= zeta {
        0.5 * r * r
    } else {
        zeta * r - 0.5 * zeta * zeta
    }
}

/// Gradient of the conjugate density: the clamp of `s` onto the `ζ`-ball.
pub fn dphi_star(s: Vec2, zeta: f64) -> Vec2 {
    let r = s.norm();
    if r <= zeta {
        s
    } else {
        s.scale(zeta / r)
    }
}

/// Hessian of the conjugate density. On the kink `|s| = ζ` (within 1e-12)
/// the inside branch (identity) is returned.
pub fn d2phi_star(s: Vec2, zeta: f64) -> Mat2 {
    let r = s.norm();
    if r <= zeta + 1e-12 {
        Mat2::IDENTITY
    } else {
        let unit = s.scale(1.0 / r);
        Mat2::IDENTITY.sub(Mat2::outer(unit, unit)).scale(zeta / r)
    }
}

/// Semi-implicit flow weight `min(1, ζ/|s|)`, with limit 1 at the origin.
/// Satisfies `flow_weight(s, ζ) · s = dphi_star(s, ζ)`.
pub fn flow_weight(s: Vec2, zeta: f64) -> f64 {
    let r = s.norm();
    if r <= zeta {
        1.0
    } else {
        zeta / r
    }
}

/// Bregman divergence of the conjugate density,
/// `φ*(b) - φ*(a) - dphi_star(a)·(b - a)`: the exact second-order defect of
/// `φ*` between `a` and `b`. Always nonnegative by convexity.
pub fn bregman_phi_star(b: Vec2, a: Vec2, zeta: f64) -> f64 {
    phi_star(b, zeta) - phi_star(a, zeta) - dphi_star(a, zeta).dot(b - a)
}

/// Discrete primal energy
/// `I_h(v) = ½‖∇_h v‖² - (f_h, Π_h v) - (g_h, π_h v)_{Γ_N}`,
/// infeasible when the gradient constraint or the Dirichlet trace fails.
pub fn primal_energy_h(
    mesh: &Mesh,
    geo: &GeometryCache,
    v: &CrFunction,
    data: &ProblemData,
) -> EnergyValue {
    let grad = cr_gradient(mesh, geo, v);
    let mean = cr_element_mean(mesh, v);

    let mut value = 0.0;
    let mut feasible = true;
    for t in 0..mesh.n_triangles() {
        let g = grad.values[t];
        value += geo.tri_area[t] * (0.5 * g.norm_sq() - data.load.values[t] * mean.values[t]);
        if g.norm() > data.zeta.values[t] + TOL_CONSTRUCTION {
            feasible = false;
        }
    }
    for s in mesh.sides_with_label(SideLabel::Neumann) {
        let g = data.neumann.get(mesh, s).unwrap_or(0.0);
        value -= geo.side_length[s] * g * v.dofs[s];
    }
    for s in mesh.sides_with_label(SideLabel::Dirichlet) {
        let ud = data.dirichlet.get(mesh, s).unwrap_or(0.0);
        if (v.dofs[s] - ud).abs() > TOL_CONSTRUCTION {
            feasible = false;
        }
    }
    EnergyValue { value, feasible }
}

/// Discrete dual energy
/// `D_h(y) = -∫ φ*(Π_h y) dx + (y·n, u_D)_{Γ_D}`,
/// infeasible when `div y = -f_h` or the Neumann trace fails.
pub fn dual_energy_h(
    mesh: &Mesh,
    geo: &GeometryCache,
    y: &RtFunction,
    data: &ProblemData,
) -> EnergyValue {
    let mean = rt_element_mean(mesh, geo, y);
    let div = rt_divergence(mesh, geo, y);

    let mut value = 0.0;
    let mut feasible = true;
    for t in 0..mesh.n_triangles() {
        value -= geo.tri_area[t] * phi_star(mean.values[t], data.zeta.values[t]);
        let f = data.load.values[t];
        if (div.values[t] + f).abs() > TOL_LINEAR_SOLVE * (1.0 + f.abs()) {
            feasible = false;
        }
    }
    for s in mesh.sides_with_label(SideLabel::Dirichlet) {
        let ud = data.dirichlet.get(mesh, s).unwrap_or(0.0);
        value += geo.side_length[s] * y.dofs[s] * ud;
    }
    for s in mesh.sides_with_label(SideLabel::Neumann) {
        let g = data.neumann.get(mesh, s).unwrap_or(0.0);
        if (y.dofs[s] - g).abs() > TOL_LINEAR_SOLVE * (1.0 + g.abs()) {
            feasible = false;
        }
    }
    EnergyValue { value, feasible }
}
