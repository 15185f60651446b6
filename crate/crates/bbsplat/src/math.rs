//! Small fixed-size linear algebra used throughout the engine.
//!
//! Everything is `f64`: the renderer and backward pass are validated against
//! finite differences and brute-force geometric oracles at tolerances that
//! are uncomfortable in single precision on a CPU.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

pub const fn vec3(x: f64, y: f64, z: f64) -> Vec3 {
    Vec3 { x, y, z }
}

impl Vec3 {
    pub const ZERO: Vec3 = vec3(0.0, 0.0, 0.0);

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        vec3(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        vec3(self.x / n, self.y / n, self.z / n)
    }

    pub fn scale(self, s: f64) -> Vec3 {
        vec3(self.x * s, self.y * s, self.z * s)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Vec3 {
        vec3(a[0], a[1], a[2])
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        vec3(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        vec3(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        vec3(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        self.scale(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec4 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub w: f64,
}

pub const fn vec4(x: f64, y: f64, z: f64, w: f64) -> Vec4 {
    Vec4 { x, y, z, w }
}

impl Vec4 {
    pub fn dot(self, o: Vec4) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z + self.w * o.w
    }

    pub fn xyz(self) -> Vec3 {
        vec3(self.x, self.y, self.z)
    }
}

impl Sub for Vec4 {
    type Output = Vec4;
    fn sub(self, o: Vec4) -> Vec4 {
        vec4(self.x - o.x, self.y - o.y, self.z - o.z, self.w - o.w)
    }
}

impl Mul<f64> for Vec4 {
    type Output = Vec4;
    fn mul(self, s: f64) -> Vec4 {
        vec4(self.x * s, self.y * s, self.z * s, self.w * s)
    }
}

/// Row-major 4x4 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat4 {
    pub m: [[f64; 4]; 4],
}

impl Mat4 {
    pub const IDENTITY: Mat4 = Mat4 {
        m: [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ],
    };

    pub fn row(&self, i: usize) -> Vec4 {
        let r = self.m[i];
        vec4(r[0], r[1], r[2], r[3])
    }

    pub fn col(&self, j: usize) -> Vec4 {
        vec4(self.m[0][j], self.m[1][j], self.m[2][j], self.m[3][j])
    }

    pub fn mul_vec4(&self, v: Vec4) -> Vec4 {
        vec4(
            self.row(0).dot(v),
            self.row(1).dot(v),
            self.row(2).dot(v),
            self.row(3).dot(v),
        )
    }

    /// Transform a 3D point as a homogeneous (x, y, z, 1) column.
    pub fn mul_point(&self, p: Vec3) -> Vec4 {
        self.mul_vec4(vec4(p.x, p.y, p.z, 1.0))
    }

    pub fn mul_mat(&self, o: &Mat4) -> Mat4 {
        let mut r = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                let mut s = 0.0;
                for k in 0..4 {
                    s += self.m[i][k] * o.m[k][j];
                }
                r[i][j] = s;
            }
        }
        Mat4 { m: r }
    }

    /// Inverse by Gauss-Jordan elimination with partial pivoting.
    /// Returns `None` for (numerically) singular matrices.
    pub fn inverse(&self) -> Option<Mat4> {
        let mut a = self.m;
        let mut inv = Mat4::IDENTITY.m;
        for col in 0..4 {
            let mut pivot = col;
            for r in col + 1..4 {
                if a[r][col].abs() > a[pivot][col].abs() {
                    pivot = r;
                }
            }
            if a[pivot][col].abs() < 1e-14 {
                return None;
            }
            a.swap(col, pivot);
            inv.swap(col, pivot);
            let d = a[col][col];
            for j in 0..4 {
                a[col][j] /= d;
                inv[col][j] /= d;
            }
            for r in 0..4 {
                if r != col {
                    let f = a[r][col];
                    for j in 0..4 {
                        a[r][j] -= f * a[col][j];
                        inv[r][j] -= f * inv[col][j];
                    }
                }
            }
        }
        Some(Mat4 { m: inv })
    }
}

/// Unit quaternion in (w, x, y, z) component order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Quat {
        Quat { w, x, y, z }
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Quat {
        let a = axis.normalized();
        let (s, c) = (angle * 0.5).sin_cos();
        Quat::new(c, a.x * s, a.y * s, a.z * s)
    }

    pub fn norm(self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(self) -> Quat {
        let n = self.norm();
        Quat::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 4]) -> Quat {
        Quat::new(a[0], a[1], a[2], a[3])
    }

    /// First column of the rotation matrix (image of the local x axis).
    pub fn col_x(self) -> Vec3 {
        let Quat { w, x, y, z } = self;
        vec3(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y + w * z),
            2.0 * (x * z - w * y),
        )
    }

    /// Second column of the rotation matrix (image of the local y axis).
    pub fn col_y(self) -> Vec3 {
        let Quat { w, x, y, z } = self;
        vec3(
            2.0 * (x * y - w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z + w * x),
        )
    }

    /// Third column of the rotation matrix (plane normal direction).
    pub fn col_z(self) -> Vec3 {
        let Quat { w, x, y, z } = self;
        vec3(
            2.0 * (x * z + w * y),
            2.0 * (y * z - w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    pub fn rotate(self, v: Vec3) -> Vec3 {
        self.col_x() * v.x + self.col_y() * v.y + self.col_z() * v.z
    }

    /// Jacobian of `col_x` with respect to the four raw components,
    /// assuming the quaternion already has unit norm. Rows follow
    /// (w, x, y, z), each row is d(col_x)/d(component).
    pub fn d_col_x(self) -> [Vec3; 4] {
        let Quat { w, x, y, z } = self;
        [
            vec3(0.0, 2.0 * z, -2.0 * y),
            vec3(0.0, 2.0 * y, 2.0 * z),
            vec3(-4.0 * y, 2.0 * x, -2.0 * w),
            vec3(-4.0 * z, 2.0 * w, 2.0 * x),
        ]
    }

    /// Jacobian of `col_y` with respect to the four raw components.
    pub fn d_col_y(self) -> [Vec3; 4] {
        let Quat { w, x, y, z } = self;
        [
            vec3(-2.0 * z, 0.0, 2.0 * x),
            vec3(2.0 * y, -4.0 * x, 2.0 * w),
            vec3(2.0 * x, 0.0, 2.0 * z),
            vec3(-2.0 * w, -4.0 * z, 2.0 * y),
        ]
    }
}

/// Logistic sigmoid; maps logits to opacities in (0, 1).
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`logistic`]. The argument must lie strictly inside (0, 1).
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// d logistic / dx expressed through the already-activated value.
pub fn logistic_derivative(activated: f64) -> f64 {
    activated * (1.0 - activated)
}

/// Round half away from zero, the convention used by the texture quantizer.
pub fn round_half_away(x: f64) -> f64 {
    if x >= 0.0 {
        (x + 0.5).floor()
    } else {
        (x - 0.5).ceil()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mat4_inverse_round_trip() {
        let a = Mat4 {
            m: [
                [2.0, 1.0, 0.5, -1.0],
                [0.0, 3.0, 1.0, 0.25],
                [1.0, -2.0, 4.0, 0.0],
                [0.5, 0.0, 0.0, 1.0],
            ],
        };
        let inv = a.inverse().unwrap();
        let id = a.mul_mat(&inv);
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((id.m[i][j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn singular_matrix_has_no_inverse() {
        let mut a = Mat4::IDENTITY;
        a.m[2] = a.m[1];
        assert!(a.inverse().is_none());
    }

    #[test]
    fn quaternion_columns_are_orthonormal() {
        let q = Quat::from_axis_angle(vec3(0.3, -0.5, 0.81), 1.234);
        let (cx, cy, cz) = (q.col_x(), q.col_y(), q.col_z());
        assert!((cx.norm() - 1.0).abs() < 1e-12);
        assert!((cy.norm() - 1.0).abs() < 1e-12);
        assert!(cx.dot(cy).abs() < 1e-12);
        assert!((cx.cross(cy) - cz).norm() < 1e-12);
    }

    #[test]
    fn quaternion_column_jacobians_match_finite_differences() {
        let q = Quat::from_axis_angle(vec3(1.0, 2.0, -0.4), 0.77);
        let h = 1e-6;
        let dx = q.d_col_x();
        let dy = q.d_col_y();
        for comp in 0..4 {
            let mut plus = q.to_array();
            let mut minus = q.to_array();
            plus[comp] += h;
            minus[comp] -= h;
            // Raw-component derivative: do not renormalize here.
            let fdx = (Quat::from_array(plus).col_x() - Quat::from_array(minus).col_x())
                .scale(1.0 / (2.0 * h));
            let fdy = (Quat::from_array(plus).col_y() - Quat::from_array(minus).col_y())
                .scale(1.0 / (2.0 * h));
            assert!((fdx - dx[comp]).norm() < 1e-8);
            assert!((fdy - dy[comp]).norm() < 1e-8);
        }
    }

    #[test]
    fn logistic_logit_round_trip() {
        for &p in &[1e-6, 0.25, 0.5, 0.75, 1.0 - 1e-6] {
            assert!((logistic(logit(p)) - p).abs() < 1e-12);
        }
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(round_half_away(0.5), 1.0);
        assert_eq!(round_half_away(-0.5), -1.0);
        assert_eq!(round_half_away(2.4), 2.0);
        assert_eq!(round_half_away(-2.6), -3.0);
    }
}
