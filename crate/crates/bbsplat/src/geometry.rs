//! Camera model, billboard plane transforms, and the closed-form
//! ray-plane intersection the rasterizer is built on.
//!
//! A pixel ray is described as the intersection of the two homogeneous
//! screen-space planes `h_x = (-1, 0, 0, x)` and `h_y = (0, -1, 0, y)`.
//! Pulling those planes back through the world-to-screen transform `W` and
//! the billboard transform `H` yields two planes in the billboard's (u, v)
//! chart, and the hit point is the solution of a 2x2 linear system.

use crate::math::{vec3, vec4, Mat4, Quat, Vec3, Vec4};
use crate::{Error, Result};

/// Denominator threshold below which a ray is treated as parallel to the
/// billboard plane.
pub const PARALLEL_EPS: f64 = 1e-9;

/// Posed pinhole camera with a full projective world-to-screen transform.
///
/// NDC convention: `x` and `y` range over `[-1, 1]`, `x` to the right and
/// `y` downward, and the homogeneous `w` after applying the transform is the
/// camera-space depth (positive in front of the camera).
#[derive(Debug, Clone)]
pub struct CameraView {
    world_to_screen: Mat4,
    screen_to_world: Mat4,
    pub width: usize,
    pub height: usize,
    pub camera_center: Vec3,
}

impl CameraView {
    pub fn new(
        world_to_screen: Mat4,
        width: usize,
        height: usize,
        camera_center: Vec3,
    ) -> Result<CameraView> {
        if width == 0 || height == 0 {
            return Err(Error::Camera(
                "image dimensions must be at least 1x1".into(),
            ));
        }
        let screen_to_world = world_to_screen
            .inverse()
            .ok_or_else(|| Error::Camera("world-to-screen matrix is singular".into()))?;
        Ok(CameraView {
            world_to_screen,
            screen_to_world,
            width,
            height,
            camera_center,
        })
    }

    /// Build from pinhole intrinsics and a rigid world-to-camera transform.
    ///
    /// The camera looks along +z with +x right and +y down, so image rows
    /// grow downward (the COLMAP convention). `near`/`far` only shape the
    /// NDC depth row; the rasterizer reads depth from the homogeneous `w`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_pinhole(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        world_to_camera: Mat4,
        near: f64,
        far: f64,
    ) -> Result<CameraView> {
        if !(near > 0.0 && far > near) {
            return Err(Error::Camera(format!("invalid near/far: {near}/{far}")));
        }
        let w = width as f64;
        let h = height as f64;
        // Rows chosen so that x_ndc = (2 fx x_c / z_c + 2 cx) / w - 1 and
        // w_clip = z_c (camera depth).
        let proj = Mat4 {
            m: [
                [2.0 * fx / w, 0.0, 2.0 * cx / w - 1.0, 0.0],
                [0.0, 2.0 * fy / h, 2.0 * cy / h - 1.0, 0.0],
                [
                    0.0,
                    0.0,
                    (far + near) / (far - near),
                    -2.0 * far * near / (far - near),
                ],
                [0.0, 0.0, 1.0, 0.0],
            ],
        };
        let world_to_screen = proj.mul_mat(&world_to_camera);
        // Camera center: solve R c + t = 0 for the rigid upper 3x4 part.
        let inv = world_to_camera
            .inverse()
            .ok_or_else(|| Error::Camera("world-to-camera matrix is singular".into()))?;
        let center = inv.mul_point(Vec3::ZERO).xyz();
        CameraView::new(world_to_screen, width, height, center)
    }

    pub fn world_to_screen(&self) -> &Mat4 {
        &self.world_to_screen
    }

    pub fn screen_to_world(&self) -> &Mat4 {
        &self.screen_to_world
    }

    /// Camera-space depth of a world point (positive in front).
    pub fn depth_of(&self, p: Vec3) -> f64 {
        self.world_to_screen.row(3).dot(vec4(p.x, p.y, p.z, 1.0))
    }

    /// NDC coordinates of the center of pixel (px, py).
    pub fn pixel_to_ndc(&self, px: usize, py: usize) -> (f64, f64) {
        (
            2.0 * (px as f64 + 0.5) / self.width as f64 - 1.0,
            2.0 * (py as f64 + 0.5) / self.height as f64 - 1.0,
        )
    }

    /// Project a world point to NDC. `None` if at or behind the camera plane.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64)> {
        let q = self.world_to_screen.mul_point(p);
        if q.w <= 0.0 {
            return None;
        }
        Some((q.x / q.w, q.y / q.w))
    }
}

/// World transform of one billboard plane: center plus two scaled tangent
/// axes. The plane point at chart coordinates (u, v) is
/// `mu + u * axis_u + v * axis_v`.
#[derive(Debug, Clone, Copy)]
pub struct PlaneTransform {
    pub mu: Vec3,
    pub axis_u: Vec3,
    pub axis_v: Vec3,
}

impl PlaneTransform {
    /// World position of chart point (u, v).
    pub fn point(&self, u: f64, v: f64) -> Vec3 {
        self.mu + self.axis_u * u + self.axis_v * v
    }

    /// The 4x4 homogeneous form: columns are `axis_u`, `axis_v`, zero, and
    /// `mu`, with bottom row (0, 0, 0, 1). The zero third column is what
    /// makes the intersection formula below a plain 2x2 solve.
    pub fn matrix(&self) -> Mat4 {
        Mat4 {
            m: [
                [self.axis_u.x, self.axis_v.x, 0.0, self.mu.x],
                [self.axis_u.y, self.axis_v.y, 0.0, self.mu.y],
                [self.axis_u.z, self.axis_v.z, 0.0, self.mu.z],
                [0.0, 0.0, 0.0, 1.0],
            ],
        }
    }
}

/// Build the plane transform from center, log-scales, and rotation.
///
/// A quaternion that drifted off unit norm is renormalized rather than
/// rejected; optimizer steps keep the stored rotation unit-norm, so this is
/// a no-op in normal operation. Gross deviations (corrupted input) warn.
pub fn plane_transform(mu: Vec3, log_scale: [f64; 2], rot: Quat) -> PlaneTransform {
    let deviation = (rot.norm() - 1.0).abs();
    if deviation > 1e-2 {
        eprintln!(
            "warning: renormalizing rotation with |q| = {:.4}",
            rot.norm()
        );
    }
    let q = if deviation > 1e-9 {
        rot.normalized()
    } else {
        rot
    };
    PlaneTransform {
        mu,
        axis_u: q.col_x() * log_scale[0].exp(),
        axis_v: q.col_y() * log_scale[1].exp(),
    }
}

/// A ray-plane hit in the billboard chart.
#[derive(Debug, Clone, Copy)]
pub struct Hit {
    pub u: f64,
    pub v: f64,
    /// Camera-space depth of the intersection point.
    pub depth: f64,
}

/// The pixel-independent part of the intersection: the two screen planes
/// pulled back through `W` only. Reused across all billboards of a pixel.
#[derive(Debug, Clone, Copy)]
pub struct PixelRay {
    pub qx: Vec4,
    pub qy: Vec4,
}

impl PixelRay {
    pub fn new(cam: &CameraView, ndc: (f64, f64)) -> PixelRay {
        let w = cam.world_to_screen();
        PixelRay {
            qx: w.row(3) * ndc.0 - w.row(0),
            qy: w.row(3) * ndc.1 - w.row(1),
        }
    }
}

/// Scalars of the 2x2 intersection solve, kept around because the backward
/// pass differentiates through them.
#[derive(Debug, Clone, Copy)]
pub struct IntersectScalars {
    pub a1: f64,
    pub a2: f64,
    pub a4: f64,
    pub b1: f64,
    pub b2: f64,
    pub b4: f64,
    pub denom: f64,
    pub u: f64,
    pub v: f64,
}

/// Core intersection: both planes expressed in the (u, v) chart, then the
/// cross-ratio solve. Returns `None` for near-parallel rays.
pub fn intersect_scalars(ray: &PixelRay, plane: &PlaneTransform) -> Option<IntersectScalars> {
    let qx3 = ray.qx.xyz();
    let qy3 = ray.qy.xyz();
    let a1 = qx3.dot(plane.axis_u);
    let a2 = qx3.dot(plane.axis_v);
    let a4 = qx3.dot(plane.mu) + ray.qx.w;
    let b1 = qy3.dot(plane.axis_u);
    let b2 = qy3.dot(plane.axis_v);
    let b4 = qy3.dot(plane.mu) + ray.qy.w;
    let denom = a1 * b2 - a2 * b1;
    if denom.abs() < PARALLEL_EPS {
        return None;
    }
    let u = (a2 * b4 - a4 * b2) / denom;
    let v = (a4 * b1 - a1 * b4) / denom;
    Some(IntersectScalars {
        a1,
        a2,
        a4,
        b1,
        b2,
        b4,
        denom,
        u,
        v,
    })
}

/// Intersect the ray through an NDC pixel with a billboard plane.
///
/// Misses when the ray is (near-)parallel to the plane or the intersection
/// lies behind the camera. The returned (u, v) is unbounded; callers clip to
/// the textured extent `|u|, |v| <= 1`.
pub fn ray_splat_intersect(
    cam: &CameraView,
    plane: &PlaneTransform,
    ndc: (f64, f64),
) -> Option<Hit> {
    let ray = PixelRay::new(cam, ndc);
    let s = intersect_scalars(&ray, plane)?;
    let depth = cam.depth_of(plane.point(s.u, s.v));
    if depth <= 0.0 {
        return None;
    }
    Some(Hit {
        u: s.u,
        v: s.v,
        depth,
    })
}

/// Inclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

/// Screen-space bounding box of the billboard's textured extent, from the
/// projected corners at (±1, ±1).
///
/// Returns `None` when the billboard cannot touch the frame. Billboards
/// crossing the camera plane fall back to the full frame: the projected
/// corner hull is no longer a valid bound there.
pub fn project_corner_aabb(cam: &CameraView, plane: &PlaneTransform) -> Option<PixelRect> {
    let corners = [
        plane.point(-1.0, -1.0),
        plane.point(1.0, -1.0),
        plane.point(1.0, 1.0),
        plane.point(-1.0, 1.0),
    ];
    let mut n_front = 0;
    let mut min_x = f64::INFINITY;
    let mut max_x = f64::NEG_INFINITY;
    let mut min_y = f64::INFINITY;
    let mut max_y = f64::NEG_INFINITY;
    for &c in &corners {
        let q = cam.world_to_screen().mul_point(c);
        if q.w > 1e-9 {
            n_front += 1;
            min_x = min_x.min(q.x / q.w);
            max_x = max_x.max(q.x / q.w);
            min_y = min_y.min(q.y / q.w);
            max_y = max_y.max(q.y / q.w);
        }
    }
    if n_front == 0 {
        return None;
    }
    if n_front < 4 {
        return Some(PixelRect {
            x0: 0,
            y0: 0,
            x1: cam.width - 1,
            y1: cam.height - 1,
        });
    }
    // Pixel centers sit at ndc(i) = 2 (i + 0.5) / extent - 1; pad one pixel
    // against rounding before clamping to the frame.
    let to_px = |ndc: f64, extent: usize| (ndc + 1.0) * 0.5 * extent as f64 - 0.5;
    let x0 = to_px(min_x, cam.width).ceil() - 1.0;
    let x1 = to_px(max_x, cam.width).floor() + 1.0;
    let y0 = to_px(min_y, cam.height).ceil() - 1.0;
    let y1 = to_px(max_y, cam.height).floor() + 1.0;
    if x1 < 0.0 || y1 < 0.0 || x0 >= cam.width as f64 || y0 >= cam.height as f64 {
        return None;
    }
    Some(PixelRect {
        x0: x0.max(0.0) as usize,
        y0: y0.max(0.0) as usize,
        x1: (x1.min((cam.width - 1) as f64)) as usize,
        y1: (y1.min((cam.height - 1) as f64)) as usize,
    })
}

/// Unit vector from the camera center toward a billboard center.
pub fn view_direction(cam: &CameraView, mu: Vec3) -> Result<Vec3> {
    let d = mu - cam.camera_center;
    let n = d.norm();
    if n == 0.0 {
        return Err(Error::Camera(
            "view direction undefined: point coincides with the camera center".into(),
        ));
    }
    Ok(d.scale(1.0 / n))
}

/// Look-at helper used by tests, the synthetic dataset generator, and the
/// book examples: camera at `eye` looking toward `target` (+z forward,
/// +y down).
pub fn look_at_world_to_camera(eye: Vec3, target: Vec3, up_hint: Vec3) -> Mat4 {
    let fwd = (target - eye).normalized();
    let mut right = fwd.cross(up_hint);
    if right.norm() < 1e-9 {
        right = fwd.cross(vec3(1.0, 0.0, 0.0));
    }
    let right = right.normalized();
    // +y points down in image space.
    let down = fwd.cross(right).normalized();
    let r = [right, down, fwd];
    let mut m = Mat4::IDENTITY;
    for (i, axis) in r.iter().enumerate() {
        m.m[i][0] = axis.x;
        m.m[i][1] = axis.y;
        m.m[i][2] = axis.z;
        m.m[i][3] = -axis.dot(eye);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn test_camera(width: usize, height: usize) -> CameraView {
        // 90-degree fov camera at the origin looking along +z.
        let f = width as f64 / 2.0;
        CameraView::from_pinhole(
            f,
            f,
            width as f64 / 2.0,
            height as f64 / 2.0,
            width,
            height,
            Mat4::IDENTITY,
            0.01,
            100.0,
        )
        .unwrap()
    }

    fn random_camera(rng: &mut StdRng) -> CameraView {
        let eye = vec3(
            rng.random_range(-4.0..4.0),
            rng.random_range(-4.0..4.0),
            rng.random_range(-6.0..-2.0),
        );
        let target = vec3(
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
        );
        let w2c = look_at_world_to_camera(eye, target, vec3(0.0, 1.0, 0.0));
        let f = rng.random_range(40.0..90.0);
        CameraView::from_pinhole(f, f, 32.0, 32.0, 64, 64, w2c, 0.01, 100.0).unwrap()
    }

    fn random_plane(rng: &mut StdRng) -> PlaneTransform {
        let mu = vec3(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let s = [rng.random_range(-1.5..0.5), rng.random_range(-1.5..0.5)];
        let axis = vec3(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let q = Quat::from_axis_angle(axis, rng.random_range(0.0..std::f64::consts::TAU));
        plane_transform(mu, s, q)
    }

    #[test]
    fn plane_center_maps_to_mu() {
        let p = plane_transform(Vec3::ZERO, [0.0, 0.0], Quat::IDENTITY);
        assert_eq!(p.point(0.0, 0.0), Vec3::ZERO);
        assert_eq!(p.point(1.0, 0.0), vec3(1.0, 0.0, 0.0));
    }

    #[test]
    fn plane_point_matches_matrix_oracle() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..50 {
            let mu = vec3(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            let s = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let q = Quat::from_axis_angle(
                vec3(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ),
                rng.random_range(0.0..6.28),
            );
            let p = plane_transform(mu, s, q);
            // Direct computation: R diag(exp(s)) (u, v, 0)^T + mu.
            let (u, v) = (0.3, -0.7);
            let want = q.col_x() * (s[0].exp() * u) + q.col_y() * (s[1].exp() * v) + mu;
            assert!((p.point(u, v) - want).norm() < 1e-12);
            // Homogeneous form agrees.
            let hp = p.matrix().mul_vec4(vec4(u, v, 1.0, 1.0));
            assert!((hp.xyz() - want).norm() < 1e-12);
            assert_eq!(hp.w, 1.0);
        }
    }

    #[test]
    fn non_unit_quaternion_is_renormalized() {
        let q = Quat::new(2.0, 0.0, 0.0, 0.0);
        let p = plane_transform(Vec3::ZERO, [0.0, 0.0], q);
        assert!((p.axis_u - vec3(1.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn centered_billboard_hits_principal_point_at_origin() {
        let cam = test_camera(64, 64);
        let plane = plane_transform(vec3(0.0, 0.0, 2.0), [0.0, 0.0], Quat::IDENTITY);
        let hit = ray_splat_intersect(&cam, &plane, (0.0, 0.0)).unwrap();
        assert!(hit.u.abs() < 1e-6 && hit.v.abs() < 1e-6);
        assert!((hit.depth - 2.0).abs() < 1e-9);
    }

    #[test]
    fn parallel_ray_misses() {
        let cam = test_camera(64, 64);
        // Plane spanned by x and z axes, viewed edge-on along +z through
        // the principal point: the ray lies inside the plane's direction
        // span, so the solve is degenerate.
        let q = Quat::from_axis_angle(vec3(1.0, 0.0, 0.0), std::f64::consts::FRAC_PI_2);
        let plane = plane_transform(vec3(0.0, 0.5, 2.0), [0.0, 0.0], q);
        assert!(intersect_scalars(&PixelRay::new(&cam, (0.0, 0.0)), &plane).is_none());
    }

    #[test]
    fn intersection_behind_camera_misses() {
        let cam = test_camera(64, 64);
        let plane = plane_transform(vec3(0.0, 0.0, -2.0), [0.0, 0.0], Quat::IDENTITY);
        assert!(ray_splat_intersect(&cam, &plane, (0.0, 0.0)).is_none());
    }

    /// Brute-force oracle: solve ray = origin + t dir against the plane in
    /// world space with a 3x3 linear system, then read off (u, v).
    fn brute_force_hit(cam: &CameraView, plane: &PlaneTransform, ndc: (f64, f64)) -> Option<Hit> {
        // Build the world ray by unprojecting two depths through W^-1.
        let unproject = |w: f64| -> Vec3 {
            let clip = vec4(ndc.0 * w, ndc.1 * w, 0.0, w);
            // Solve W p = clip with unknown z_clip: use the two known rows.
            // Simpler: sweep candidate z_clip via linear solve. W maps
            // (p, 1) -> (x w, y w, z_c, w); z_c is unknown, so solve the
            // 4x4 system for (p, z_c) by substitution: treat z_c as free,
            // i.e. find p with row0 p = x w, row1 p = y w, row3 p = w.
            let m = cam.world_to_screen();
            // Three equations, three unknowns (p.x, p.y, p.z).
            let rows = [m.row(0), m.row(1), m.row(3)];
            let rhs = [clip.x, clip.y, clip.w];
            let mut a = [[0.0; 3]; 3];
            let mut b = [0.0; 3];
            for i in 0..3 {
                a[i][0] = rows[i].x;
                a[i][1] = rows[i].y;
                a[i][2] = rows[i].z;
                b[i] = rhs[i] - rows[i].w;
            }
            solve3(a, b)
        };
        let p0 = unproject(1.0);
        let p1 = unproject(2.0);
        let dir = (p1 - p0).normalized();
        let origin = cam.camera_center;
        // origin + t dir = mu + u au + v av  =>  [au av -dir] (u, v, t)^T = origin - mu
        let a = [
            [plane.axis_u.x, plane.axis_v.x, -dir.x],
            [plane.axis_u.y, plane.axis_v.y, -dir.y],
            [plane.axis_u.z, plane.axis_v.z, -dir.z],
        ];
        let rhs = (origin - plane.mu).to_array();
        let det = det3(a);
        if det.abs() < 1e-12 {
            return None;
        }
        let sol = solve3(a, rhs);
        let (u, v, t) = (sol.x, sol.y, sol.z);
        if t <= 0.0 {
            return None;
        }
        Some(Hit {
            u,
            v,
            depth: cam.depth_of(plane.point(u, v)),
        })
    }

    fn det3(a: [[f64; 3]; 3]) -> f64 {
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
            - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    }

    fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Vec3 {
        let d = det3(a);
        let col = |k: usize| {
            let mut m = a;
            for i in 0..3 {
                m[i][k] = b[i];
            }
            det3(m) / d
        };
        vec3(col(0), col(1), col(2))
    }

    #[test]
    fn intersection_matches_brute_force_world_oracle() {
        let mut rng = StdRng::seed_from_u64(11);
        let mut checked = 0;
        while checked < 2000 {
            let cam = random_camera(&mut rng);
            let plane = random_plane(&mut rng);
            let ndc = (rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.9));
            let ours = ray_splat_intersect(&cam, &plane, ndc);
            let oracle = brute_force_hit(&cam, &plane, ndc);
            match (ours, oracle) {
                (Some(a), Some(b)) => {
                    // Skip grazing hits where both paths lose precision.
                    if a.u.abs() > 50.0 || a.v.abs() > 50.0 {
                        continue;
                    }
                    assert!(
                        (a.u - b.u).abs() < 1e-5 && (a.v - b.v).abs() < 1e-5,
                        "uv mismatch: ({}, {}) vs ({}, {})",
                        a.u,
                        a.v,
                        b.u,
                        b.v
                    );
                    assert!((a.depth - b.depth).abs() < 1e-5 * b.depth.max(1.0));
                    checked += 1;
                }
                (None, None) => {
                    checked += 1;
                }
                // Near-degenerate configurations may fall on different
                // sides of the two epsilon tests; require agreement only
                // when the oracle sees a clear hit.
                (None, Some(b)) => {
                    assert!(
                        b.depth < 1e-6 || b.u.abs() > 1e5 || b.v.abs() > 1e5,
                        "we missed a clear oracle hit at uv=({}, {})",
                        b.u,
                        b.v
                    );
                    checked += 1;
                }
                (Some(_), None) => checked += 1,
            }
        }
    }

    #[test]
    fn uv_round_trip_through_projection() {
        let mut rng = StdRng::seed_from_u64(3);
        let mut checked = 0;
        while checked < 500 {
            let cam = random_camera(&mut rng);
            let plane = random_plane(&mut rng);
            let u0 = rng.random_range(-1.0..1.0);
            let v0 = rng.random_range(-1.0..1.0);
            let world = plane.point(u0, v0);
            let Some(ndc) = cam.project(world) else {
                continue;
            };
            if ndc.0.abs() > 1.0 || ndc.1.abs() > 1.0 {
                continue;
            }
            let Some(hit) = ray_splat_intersect(&cam, &plane, ndc) else {
                continue;
            };
            assert!(
                (hit.u - u0).abs() < 1e-4 && (hit.v - v0).abs() < 1e-4,
                "round trip drifted: ({u0}, {v0}) -> ({}, {})",
                hit.u,
                hit.v
            );
            checked += 1;
        }
    }

    #[test]
    fn intersection_invariant_under_homogeneous_rescale() {
        let cam = test_camera(64, 64);
        let plane = random_plane(&mut StdRng::seed_from_u64(5));
        let ray = PixelRay::new(&cam, (0.25, -0.4));
        let s = intersect_scalars(&ray, &plane).unwrap();
        let scaled = PixelRay {
            qx: ray.qx * 3.7,
            qy: ray.qy * 0.21,
        };
        let s2 = intersect_scalars(&scaled, &plane).unwrap();
        assert!((s.u - s2.u).abs() < 1e-9);
        assert!((s.v - s2.v).abs() < 1e-9);
    }

    #[test]
    fn aabb_behind_camera_is_offscreen() {
        let cam = test_camera(64, 64);
        let plane = plane_transform(vec3(0.0, 0.0, -3.0), [0.0, 0.0], Quat::IDENTITY);
        assert!(project_corner_aabb(&cam, &plane).is_none());
    }

    #[test]
    fn aabb_center_is_principal_point_for_axis_aligned_billboard() {
        // fov 90 degrees, unit billboard at depth 2: corners project to
        // ndc +-0.5, so the pixel box is centered on the frame.
        let cam = test_camera(64, 64);
        let plane = plane_transform(vec3(0.0, 0.0, 2.0), [0.0, 0.0], Quat::IDENTITY);
        let rect = project_corner_aabb(&cam, &plane).unwrap();
        assert_eq!(rect.x0 + (63 - rect.x1), rect.y0 + (63 - rect.y1));
        let cx = (rect.x0 + rect.x1) as f64 / 2.0;
        let cy = (rect.y0 + rect.y1) as f64 / 2.0;
        assert!((cx - 31.5).abs() < 1.0 && (cy - 31.5).abs() < 1.0);
    }

    #[test]
    fn aabb_contains_every_textured_hit() {
        let mut rng = StdRng::seed_from_u64(23);
        for _ in 0..40 {
            let cam = random_camera(&mut rng);
            let plane = random_plane(&mut rng);
            let rect = project_corner_aabb(&cam, &plane);
            for py in 0..cam.height {
                for px in 0..cam.width {
                    let ndc = cam.pixel_to_ndc(px, py);
                    if let Some(hit) = ray_splat_intersect(&cam, &plane, ndc) {
                        if hit.u.abs() <= 1.0 && hit.v.abs() <= 1.0 {
                            let r = rect.expect("hit exists but aabb says offscreen");
                            assert!(
                                px >= r.x0 && px <= r.x1 && py >= r.y0 && py <= r.y1,
                                "pixel ({px}, {py}) outside aabb {r:?}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn view_direction_basics() {
        let cam = test_camera(8, 8);
        let d = view_direction(&cam, vec3(0.0, 0.0, -2.0)).unwrap();
        assert!((d - vec3(0.0, 0.0, -1.0)).norm() < 1e-12);
        assert!(view_direction(&cam, Vec3::ZERO).is_err());
        let mut rng = StdRng::seed_from_u64(1);
        for _ in 0..100 {
            let p = vec3(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
            );
            if p.norm() < 1e-3 {
                continue;
            }
            let d = view_direction(&cam, p).unwrap();
            assert!((d.norm() - 1.0).abs() < 1e-7);
        }
    }
}
