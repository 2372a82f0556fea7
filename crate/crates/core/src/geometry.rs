//! Minimal 2D vector and matrix arithmetic used throughout the crate.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

/// Point or vector in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// Scalar 2D cross product `self.x * other.y - self.y * other.x`.
    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn scale(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }

    /// Rotation by +90 degrees (counter-clockwise).
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, rhs: Vec2) {
        self.x += rhs.x;
        self.y += rhs.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        self.scale(s)
    }
}

/// Symmetric 2x2 matrix in row-major order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2 {
    pub m: [[f64; 2]; 2],
}

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2 {
        m: [[1.0, 0.0], [0.0, 1.0]],
    };

    pub fn zero() -> Mat2 {
        Mat2 { m: [[0.0; 2]; 2] }
    }

    /// Outer product `a ⊗ b`.
    pub fn outer(a: Vec2, b: Vec2) -> Mat2 {
        Mat2 {
            m: [[a.x * b.x, a.x * b.y], [a.y * b.x, a.y * b.y]],
        }
    }

    pub fn apply(self, v: Vec2) -> Vec2 {
        Vec2::new(
            self.m[0][0] * v.x + self.m[0][1] * v.y,
            self.m[1][0] * v.x + self.m[1][1] * v.y,
        )
    }

    pub fn scale(self, s: f64) -> Mat2 {
        Mat2 {
            m: [
                [self.m[0][0] * s, self.m[0][1] * s],
                [self.m[1][0] * s, self.m[1][1] * s],
            ],
        }
    }

    pub fn sub(self, other: Mat2) -> Mat2 {
        Mat2 {
            m: [
                [self.m[0][0] - other.m[0][0], self.m[0][1] - other.m[0][1]],
                [self.m[1][0] - other.m[1][0], self.m[1][1] - other.m[1][1]],
            ],
        }
    }

    pub fn trace(self) -> f64 {
        self.m[0][0] + self.m[1][1]
    }

    /// Quadratic form `v · (M v)`.
    pub fn quad(self, v: Vec2) -> f64 {
        self.apply(v).dot(v)
    }
}
