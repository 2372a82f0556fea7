//! Quadrature rules on the reference triangle and the reference edge.
//!
//! Weights are normalized against the reference measure: they sum to one, and
//! a physical integral is recovered as `|T| * Σ w_i f(x_i)` (triangles) or
//! `|S| * Σ w_i f(x(t_i))` (edges).

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadDomain {
    Triangle,
    Edge,
}

/// Quadrature points in barycentric coordinates (triangle) or as an affine
/// parameter in `[0, 1]` (edge), with matching normalized weights.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub domain: QuadDomain,
    pub degree: u32,
    /// Barycentric triples for triangles; `(t, 0, 0)` with `t ∈ [0,1]` for edges.
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

/// Returns a rule that integrates polynomials up to `degree` exactly.
pub fn quadrature_rule(domain: QuadDomain, degree: u32) -> Result<QuadratureRule> {
    if degree == 0 || degree > 5 {
        return Err(Error::Parameter(format!(
            "quadrature degree {degree} unsupported (expected 1..=5)"
        )));
    }
    let (points, weights) = match domain {
        QuadDomain::Edge => gauss_legendre_unit(degree),
        QuadDomain::Triangle => triangle_rule(degree),
    };
    Ok(QuadratureRule {
        domain,
        degree,
        points,
        weights,
    })
}

/// Gauss-Legendre nodes mapped to [0, 1]; n points are exact to degree 2n-1.
fn gauss_legendre_unit(degree: u32) -> (Vec<[f64; 3]>, Vec<f64>) {
    let (nodes, weights): (Vec<f64>, Vec<f64>) = match degree {
        1 => (vec![0.0], vec![2.0]),
        2 | 3 => {
            let a = 1.0 / 3.0_f64.sqrt();
            (vec![-a, a], vec![1.0, 1.0])
        }
        _ => {
            let a = (3.0_f64 / 5.0).sqrt();
            (vec![-a, 0.0, a], vec![5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])
        }
    };
    let points = nodes.iter().map(|x| [0.5 * (x + 1.0), 0.0, 0.0]).collect();
    let weights = weights.iter().map(|w| 0.5 * w).collect();
    (points, weights)
}

fn triangle_rule(degree: u32) -> (Vec<[f64; 3]>, Vec<f64>) {
    match degree {
        1 => (vec![[1.0 / 3.0; 3]], vec![1.0]),
        2 => {
            let pts = permute3(2.0 / 3.0, 1.0 / 6.0);
            (pts, vec![1.0 / 3.0; 3])
        }
        3 | 4 => {
            // Dunavant degree-4 rule, six points in two symmetry orbits.
            let a1 = 0.445_948_490_915_965;
            let w1 = 0.223_381_589_678_011;
            let a2 = 0.091_576_213_509_771;
            let w2 = 0.109_951_743_655_322;
            let mut pts = permute3(1.0 - 2.0 * a1, a1);
            pts.extend(permute3(1.0 - 2.0 * a2, a2));
            (pts, vec![w1, w1, w1, w2, w2, w2])
        }
        _ => {
            // Dunavant degree-5 rule, centroid plus two orbits.
            let a1 = 0.470_142_064_105_115;
            let w1 = 0.132_394_152_788_506;
            let a2 = 0.101_286_507_323_456;
            let w2 = 0.125_939_180_544_827;
            let mut pts = vec![[1.0 / 3.0; 3]];
            pts.extend(permute3(1.0 - 2.0 * a1, a1));
            pts.extend(permute3(1.0 - 2.0 * a2, a2));
            let mut w = vec![0.225];
            w.extend([w1, w1, w1, w2, w2, w2]);
            (pts, w)
        }
    }
}

/// The three cyclic placements of barycentric `(a, b, b)`.
fn permute3(a: f64, b: f64) -> Vec<[f64; 3]> {
    vec![[a, b, b], [b, a, b], [b, b, a]]
}
