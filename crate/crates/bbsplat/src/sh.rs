//! Real spherical-harmonic basis up to degree 3 for view-dependent color.
//!
//! The color convention matches common splatting practice: each channel is
//! `0.5 + sum_k sh[k] * basis_k(d)`, clamped to be non-negative after the
//! billboard's sampled RGB offset has been added. The view direction `d`
//! must be unit length.

use crate::math::{vec3, Vec3};

pub const SH_DEGREE: usize = 3;
/// Basis functions for degree 3: (3 + 1)^2.
pub const SH_COEFFS: usize = 16;
/// Coefficients per billboard across the three color channels.
pub const SH_TOTAL: usize = SH_COEFFS * 3;

const C0: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_9;
const C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// View-independent (DC) coefficient reproducing `color` under the 0.5
/// offset convention.
pub fn dc_from_color(color: f64) -> f64 {
    (color - 0.5) / C0
}

/// Inverse of [`dc_from_color`].
pub fn color_from_dc(dc: f64) -> f64 {
    dc * C0 + 0.5
}

/// All 16 basis values at a unit direction.
pub fn basis(d: Vec3) -> [f64; SH_COEFFS] {
    let (x, y, z) = (d.x, d.y, d.z);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    [
        C0,
        -C1 * y,
        C1 * z,
        -C1 * x,
        C2[0] * x * y,
        C2[1] * y * z,
        C2[2] * (2.0 * zz - xx - yy),
        C2[3] * x * z,
        C2[4] * (xx - yy),
        C3[0] * y * (3.0 * xx - yy),
        C3[1] * x * y * z,
        C3[2] * y * (4.0 * zz - xx - yy),
        C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
        C3[4] * x * (4.0 * zz - xx - yy),
        C3[5] * z * (xx - yy),
        C3[6] * x * (xx - yy),
    ]
}

/// Gradients of each basis function with respect to the direction
/// components, treating the components as free coordinates. The projection
/// onto the unit sphere happens in the caller's chain rule.
pub fn basis_gradients(d: Vec3) -> [Vec3; SH_COEFFS] {
    let (x, y, z) = (d.x, d.y, d.z);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    [
        Vec3::ZERO,
        vec3(0.0, -C1, 0.0),
        vec3(0.0, 0.0, C1),
        vec3(-C1, 0.0, 0.0),
        vec3(C2[0] * y, C2[0] * x, 0.0),
        vec3(0.0, C2[1] * z, C2[1] * y),
        vec3(-2.0 * C2[2] * x, -2.0 * C2[2] * y, 4.0 * C2[2] * z),
        vec3(C2[3] * z, 0.0, C2[3] * x),
        vec3(2.0 * C2[4] * x, -2.0 * C2[4] * y, 0.0),
        vec3(C3[0] * 6.0 * x * y, C3[0] * (3.0 * xx - 3.0 * yy), 0.0),
        vec3(C3[1] * y * z, C3[1] * x * z, C3[1] * x * y),
        vec3(
            -2.0 * C3[2] * x * y,
            C3[2] * (4.0 * zz - xx - 3.0 * yy),
            8.0 * C3[2] * y * z,
        ),
        vec3(
            -6.0 * C3[3] * x * z,
            -6.0 * C3[3] * y * z,
            C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
        ),
        vec3(
            C3[4] * (4.0 * zz - 3.0 * xx - yy),
            -2.0 * C3[4] * x * y,
            8.0 * C3[4] * x * z,
        ),
        vec3(2.0 * C3[5] * x * z, -2.0 * C3[5] * y * z, C3[5] * (xx - yy)),
        vec3(C3[6] * (3.0 * xx - yy), -2.0 * C3[6] * x * y, 0.0),
    ]
}

/// Base color (before RGB-offset and clamping) for one billboard:
/// per channel `0.5 + sum_k sh[k * 3 + c] * basis_k(d)`.
///
/// `coeffs` holds the billboard's `SH_TOTAL` values with channel fastest.
pub fn base_color(coeffs: &[f64], d: Vec3) -> [f64; 3] {
    debug_assert_eq!(coeffs.len(), SH_TOTAL);
    let b = basis(d);
    let mut out = [0.5; 3];
    for (k, &bk) in b.iter().enumerate() {
        for c in 0..3 {
            out[c] += coeffs[k * 3 + c] * bk;
        }
    }
    out
}
