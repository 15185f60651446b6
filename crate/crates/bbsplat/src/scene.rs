//! Billboard scene model: structure-of-arrays parameter storage and scene
//! construction from sparse point clouds.
//!
//! Each billboard carries a center, two log-scales, a unit quaternion, one
//! set of spherical-harmonic coefficients per color channel, an RGB offset
//! texture, and an opacity texture stored as logits. Textures are square
//! with a side length shared by the whole set.

use crate::math::{logit, vec3, Quat, Vec3};
use crate::sh::{self, SH_COEFFS};
use crate::spatial::PointGrid;
use crate::{Error, Result};

/// Default texture side length in texels.
pub const DEFAULT_TEXTURE_SIDE: usize = 16;

/// Initial peak opacity of a fresh billboard.
pub const INIT_OPACITY: f64 = 0.5;

/// An input point with color, as read from a sparse reconstruction.
#[derive(Debug, Clone, Copy)]
pub struct ColoredPoint {
    pub position: Vec3,
    pub color: [f64; 3],
}

/// Scene-level metadata kept alongside a billboard set.
#[derive(Debug, Clone)]
pub struct SceneMeta {
    pub sh_degree: usize,
    pub sphere_center: Vec3,
    pub sphere_radius: f64,
    pub background: [f64; 3],
}

impl Default for SceneMeta {
    fn default() -> Self {
        SceneMeta {
            sh_degree: sh::SH_DEGREE,
            sphere_center: Vec3::ZERO,
            sphere_radius: 1.0,
            background: [0.0; 3],
        }
    }
}

/// Structure-of-arrays storage for every billboard parameter.
///
/// Layouts: `mu` is `3 * count` (xyz), `log_scale` is `2 * count`,
/// `rot` is `4 * count` in (w, x, y, z) order, `sh` is
/// `SH_COEFFS * 3 * count` with channel fastest, `t_rgb` is
/// `count * side * side * 3` row-major with channel fastest, and `t_alpha`
/// is `count * side * side` logits.
#[derive(Debug, Clone)]
pub struct BillboardSet {
    count: usize,
    side: usize,
    pub mu: Vec<f64>,
    pub log_scale: Vec<f64>,
    pub rot: Vec<f64>,
    pub sh: Vec<f64>,
    pub t_rgb: Vec<f64>,
    pub t_alpha: Vec<f64>,
    pub active: Vec<bool>,
}

impl BillboardSet {
    pub fn with_capacity(count: usize, side: usize) -> BillboardSet {
        assert!(side >= 2, "texture side must be at least 2");
        BillboardSet {
            count,
            side,
            mu: vec![0.0; 3 * count],
            log_scale: vec![0.0; 2 * count],
            rot: vec![0.0; 4 * count],
            sh: vec![0.0; SH_COEFFS * 3 * count],
            t_rgb: vec![0.0; count * side * side * 3],
            t_alpha: vec![0.0; count * side * side],
            active: vec![true; count],
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn texture_side(&self) -> usize {
        self.side
    }

    pub fn texels(&self) -> usize {
        self.side * self.side
    }

    pub fn mu_of(&self, i: usize) -> Vec3 {
        vec3(self.mu[3 * i], self.mu[3 * i + 1], self.mu[3 * i + 2])
    }

    pub fn set_mu(&mut self, i: usize, p: Vec3) {
        self.mu[3 * i] = p.x;
        self.mu[3 * i + 1] = p.y;
        self.mu[3 * i + 2] = p.z;
    }

    pub fn log_scale_of(&self, i: usize) -> [f64; 2] {
        [self.log_scale[2 * i], self.log_scale[2 * i + 1]]
    }

    pub fn rot_of(&self, i: usize) -> Quat {
        Quat::new(
            self.rot[4 * i],
            self.rot[4 * i + 1],
            self.rot[4 * i + 2],
            self.rot[4 * i + 3],
        )
    }

    pub fn set_rot(&mut self, i: usize, q: Quat) {
        self.rot[4 * i] = q.w;
        self.rot[4 * i + 1] = q.x;
        self.rot[4 * i + 2] = q.y;
        self.rot[4 * i + 3] = q.z;
    }

    pub fn sh_of(&self, i: usize) -> &[f64] {
        &self.sh[SH_COEFFS * 3 * i..SH_COEFFS * 3 * (i + 1)]
    }

    pub fn t_rgb_of(&self, i: usize) -> &[f64] {
        let n = self.texels() * 3;
        &self.t_rgb[n * i..n * (i + 1)]
    }

    pub fn t_alpha_of(&self, i: usize) -> &[f64] {
        let n = self.texels();
        &self.t_alpha[n * i..n * (i + 1)]
    }

    pub fn t_alpha_of_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.texels();
        &mut self.t_alpha[n * i..n * (i + 1)]
    }

    /// Mean activated opacity of one alpha map.
    pub fn mean_opacity(&self, i: usize) -> f64 {
        let t = self.t_alpha_of(i);
        t.iter().map(|&l| crate::math::logistic(l)).sum::<f64>() / t.len() as f64
    }

    /// Copy every parameter of billboard `src` over billboard `dst`.
    pub fn copy_billboard(&mut self, src: usize, dst: usize) {
        if src == dst {
            return;
        }
        for k in 0..3 {
            self.mu[3 * dst + k] = self.mu[3 * src + k];
        }
        for k in 0..2 {
            self.log_scale[2 * dst + k] = self.log_scale[2 * src + k];
        }
        for k in 0..4 {
            self.rot[4 * dst + k] = self.rot[4 * src + k];
        }
        let n = SH_COEFFS * 3;
        for k in 0..n {
            self.sh[n * dst + k] = self.sh[n * src + k];
        }
        let n = self.texels() * 3;
        for k in 0..n {
            self.t_rgb[n * dst + k] = self.t_rgb[n * src + k];
        }
        let n = self.texels();
        for k in 0..n {
            self.t_alpha[n * dst + k] = self.t_alpha[n * src + k];
        }
        self.active[dst] = self.active[src];
    }

    /// Append a copy of billboard `src`, returning the new index.
    pub fn push_clone(&mut self, src: usize) -> usize {
        let dst = self.count;
        self.count += 1;
        self.mu.extend_from_within(3 * src..3 * (src + 1));
        self.log_scale.extend_from_within(2 * src..2 * (src + 1));
        self.rot.extend_from_within(4 * src..4 * (src + 1));
        let n = SH_COEFFS * 3;
        self.sh.extend_from_within(n * src..n * (src + 1));
        let n = self.texels() * 3;
        self.t_rgb.extend_from_within(n * src..n * (src + 1));
        let n = self.texels();
        self.t_alpha.extend_from_within(n * src..n * (src + 1));
        self.active.push(self.active[src]);
        dst
    }

    pub fn all_finite(&self) -> bool {
        self.mu.iter().all(|v| v.is_finite())
            && self.log_scale.iter().all(|v| v.is_finite())
            && self.rot.iter().all(|v| v.is_finite())
            && self.sh.iter().all(|v| v.is_finite())
            && self.t_rgb.iter().all(|v| v.is_finite())
            && self.t_alpha.iter().all(|v| v.is_finite())
    }
}

/// The canonical opacity pattern `exp(-(u^2 + v^2) / 2)` evaluated at texel
/// centers, with texel `(a, b)` mapped to `u = 2a / (side - 1) - 1` and
/// likewise for `v`. Fresh alpha maps are this pattern scaled by the initial
/// opacity, and the compression stage stores alpha maps as offsets from it.
pub fn gaussian_pattern_texture(side: usize) -> Vec<f64> {
    assert!(side >= 2, "pattern needs at least 2 texels per side");
    let mut out = vec![0.0; side * side];
    for b in 0..side {
        let v = 2.0 * b as f64 / (side - 1) as f64 - 1.0;
        for a in 0..side {
            let u = 2.0 * a as f64 / (side - 1) as f64 - 1.0;
            out[b * side + a] = (-(u * u + v * v) / 2.0).exp();
        }
    }
    out
}

/// Near-uniform points on a sphere via the Fibonacci lattice.
pub fn fibonacci_sphere(n: usize, center: Vec3, radius: f64) -> Result<Vec<Vec3>> {
    if radius <= 0.0 {
        return Err(Error::Scene(format!(
            "sphere radius must be positive, got {radius}"
        )));
    }
    let golden_angle = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
        let r = (1.0 - y * y).max(0.0).sqrt();
        let theta = golden_angle * i as f64;
        let p = vec3(r * theta.cos(), y, r * theta.sin());
        out.push(center + p * radius);
    }
    Ok(out)
}

/// Greedy farthest-point subsampling. Deterministic: the first seed is
/// index 0, and each round picks the point farthest from the chosen set.
pub fn farthest_point_indices(points: &[Vec3], k: usize) -> Vec<usize> {
    let k = k.min(points.len());
    if k == 0 {
        return Vec::new();
    }
    let mut chosen = Vec::with_capacity(k);
    let mut dist: Vec<f64> = points.iter().map(|p| (*p - points[0]).norm()).collect();
    chosen.push(0);
    while chosen.len() < k {
        let (best, _) =
            dist.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bd), (i, &d)| {
                    if d > bd {
                        (i, d)
                    } else {
                        (bi, bd)
                    }
                });
        chosen.push(best);
        let anchor = points[best];
        for (d, p) in dist.iter_mut().zip(points.iter()) {
            *d = d.min((*p - anchor).norm());
        }
    }
    chosen
}

/// Number of sky-sphere points for a given billboard count: disabled for
/// small scenes, reduced for mid-sized ones.
pub fn sky_point_count(base_count: usize) -> usize {
    if base_count <= 10_000 {
        0
    } else if base_count <= 20_000 {
        2_000
    } else {
        10_000
    }
}

/// Build an initial scene from a colored point cloud.
///
/// Subsamples to `target_count` seeds by farthest-point sampling when the
/// cloud is larger; otherwise uses every point. Each seed becomes one
/// billboard: center at the point, view-independent color matching the point
/// color, zero RGB offsets, the canonical opacity pattern at peak opacity
/// 0.5, isotropic scale from the mean distance to the 3 nearest seeds, and
/// identity rotation. With `add_sky`, extra billboards are placed on the
/// circumscribing sphere.
pub fn init_from_point_cloud(
    points: &[ColoredPoint],
    target_count: usize,
    add_sky: bool,
    side: usize,
) -> Result<(BillboardSet, SceneMeta)> {
    if points.is_empty() {
        return Err(Error::Scene(
            "cannot initialize from an empty point cloud".into(),
        ));
    }
    if target_count == 0 {
        return Err(Error::Scene(
            "target billboard count must be at least 1".into(),
        ));
    }

    let positions: Vec<Vec3> = points.iter().map(|p| p.position).collect();
    let seeds: Vec<ColoredPoint> = if target_count < points.len() {
        farthest_point_indices(&positions, target_count)
            .into_iter()
            .map(|i| points[i])
            .collect()
    } else {
        points.to_vec()
    };

    let mut center = Vec3::ZERO;
    for p in &positions {
        center += *p;
    }
    let center = center.scale(1.0 / positions.len() as f64);
    let mut radius = positions
        .iter()
        .map(|p| (*p - center).norm())
        .fold(0.0_f64, f64::max);
    if radius <= 0.0 {
        radius = 1.0;
    }

    let mut all: Vec<ColoredPoint> = seeds;
    if add_sky {
        let n_sky = sky_point_count(all.len());
        if n_sky > 0 {
            for p in fibonacci_sphere(n_sky, center, radius)? {
                all.push(ColoredPoint {
                    position: p,
                    color: [0.5; 3],
                });
            }
        }
    }

    let n = all.len();
    let mut set = BillboardSet::with_capacity(n, side);
    let seed_positions: Vec<Vec3> = all.iter().map(|p| p.position).collect();
    let grid = PointGrid::build(&seed_positions);
    let pattern = gaussian_pattern_texture(side);
    let alpha_logits: Vec<f64> = pattern
        .iter()
        .map(|&g| logit((INIT_OPACITY * g).clamp(1e-9, 1.0 - 1e-9)))
        .collect();

    for (i, p) in all.iter().enumerate() {
        set.set_mu(i, p.position);
        set.set_rot(i, Quat::IDENTITY);
        let neigh = grid.k_nearest_excluding(p.position, 3, i as u32);
        let mean_dist = if neigh.is_empty() {
            1.0
        } else {
            neigh.iter().sum::<f64>() / neigh.len() as f64
        };
        let ls = mean_dist.max(1e-9).ln();
        set.log_scale[2 * i] = ls;
        set.log_scale[2 * i + 1] = ls;
        for c in 0..3 {
            set.sh[SH_COEFFS * 3 * i + c] = sh::dc_from_color(p.color[c]);
        }
        let texels = set.texels();
        set.t_alpha[texels * i..texels * (i + 1)].copy_from_slice(&alpha_logits);
    }

    let meta = SceneMeta {
        sh_degree: sh::SH_DEGREE,
        sphere_center: center,
        sphere_radius: radius,
        background: [0.0; 3],
    };
    Ok((set, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::logistic;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn single_point_init() {
        let pts = [ColoredPoint {
            position: Vec3::ZERO,
            color: [1.0, 1.0, 1.0],
        }];
        let (set, meta) = init_from_point_cloud(&pts, 1, false, 8).unwrap();
        assert_eq!(set.count(), 1);
        assert_eq!(set.mu_of(0), Vec3::ZERO);
        assert!(set.t_rgb_of(0).iter().all(|&v| v == 0.0));
        assert_eq!(set.rot_of(0), Quat::IDENTITY);
        // White point: DC carries (1.0 - 0.5) / Y00 per channel.
        let c = sh::color_from_dc(set.sh_of(0)[0]);
        assert!((c - 1.0).abs() < 1e-12);
        assert!(meta.sphere_radius > 0.0);
    }

    #[test]
    fn alpha_init_peak_is_half() {
        // 17 texels per side puts a texel exactly at (u, v) = (0, 0).
        let pts = [ColoredPoint {
            position: Vec3::ZERO,
            color: [0.5; 3],
        }];
        let (set, _) = init_from_point_cloud(&pts, 1, false, 17).unwrap();
        let center_texel = 8 * 17 + 8;
        let alpha = logistic(set.t_alpha_of(0)[center_texel]);
        assert!((alpha - 0.5).abs() < 1e-9);
    }

    #[test]
    fn target_larger_than_cloud_uses_all_points() {
        let pts: Vec<ColoredPoint> = (0..5)
            .map(|i| ColoredPoint {
                position: vec3(i as f64, 0.0, 0.0),
                color: [0.2; 3],
            })
            .collect();
        let (set, _) = init_from_point_cloud(&pts, 50, false, 4).unwrap();
        assert_eq!(set.count(), 5);
    }

    #[test]
    fn empty_cloud_is_an_error() {
        assert!(init_from_point_cloud(&[], 1, false, 16).is_err());
    }

    #[test]
    fn pattern_center_and_corner_values() {
        let g = gaussian_pattern_texture(17);
        assert!((g[8 * 17 + 8] - 1.0).abs() < 1e-12);
        assert!((g[0] - (-1.0_f64).exp()).abs() < 1e-12);
        assert!((g[0] - 0.3679).abs() < 1e-4);
    }

    #[test]
    fn pattern_has_square_symmetries() {
        let side = 16;
        let g = gaussian_pattern_texture(side);
        let at = |a: usize, b: usize| g[b * side + a];
        for b in 0..side {
            for a in 0..side {
                let m = side - 1;
                // 90-degree rotation and both mirror axes.
                assert!((at(a, b) - at(m - b, a)).abs() < 1e-12);
                assert!((at(a, b) - at(m - a, b)).abs() < 1e-12);
                assert!((at(a, b) - at(a, m - b)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fibonacci_points_lie_on_the_sphere() {
        assert!(fibonacci_sphere(0, Vec3::ZERO, 1.0).unwrap().is_empty());
        assert!(fibonacci_sphere(10, Vec3::ZERO, -1.0).is_err());
        let c = vec3(1.0, -2.0, 0.5);
        for p in fibonacci_sphere(257, c, 3.5).unwrap() {
            assert!(((p - c).norm() - 3.5).abs() < 1e-6);
        }
    }

    #[test]
    fn fibonacci_separation_is_near_uniform() {
        // Brute-force minimum pairwise angular separation, compared with
        // the ideal uniform spacing sqrt(4 pi / n).
        let n = 10_000;
        let pts = fibonacci_sphere(n, Vec3::ZERO, 1.0).unwrap();
        let mut min_angle = f64::INFINITY;
        // Neighbors on the lattice are close in index; scanning a window
        // of 40 around each point covers the true nearest neighbor.
        for i in 0..n {
            for j in i + 1..(i + 40).min(n) {
                let cosang = pts[i].dot(pts[j]).clamp(-1.0, 1.0);
                min_angle = min_angle.min(cosang.acos());
            }
        }
        let ideal = (4.0 * std::f64::consts::PI / n as f64).sqrt();
        assert!(
            min_angle > ideal * 0.7 && min_angle < ideal * 1.3,
            "min separation {min_angle} vs ideal {ideal}"
        );
    }

    #[test]
    fn farthest_point_sampling_beats_random_subsets() {
        let mut rng = StdRng::seed_from_u64(99);
        let pts: Vec<ColoredPoint> = (0..1000)
            .map(|_| ColoredPoint {
                position: vec3(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ),
                color: [0.5; 3],
            })
            .collect();
        let (set, _) = init_from_point_cloud(&pts, 100, false, 4).unwrap();
        let min_pairwise = |ps: &[Vec3]| {
            let mut best = f64::INFINITY;
            for i in 0..ps.len() {
                for j in i + 1..ps.len() {
                    best = best.min((ps[i] - ps[j]).norm());
                }
            }
            best
        };
        let fps_pts: Vec<Vec3> = (0..set.count()).map(|i| set.mu_of(i)).collect();
        let fps_min = min_pairwise(&fps_pts);
        // Average several random subsets; farthest-point spreads much wider.
        let mut random_min = 0.0;
        for trial in 0..5 {
            let mut rng = StdRng::seed_from_u64(1000 + trial);
            let mut idx: Vec<usize> = (0..pts.len()).collect();
            for i in 0..100 {
                let j = rng.random_range(i..idx.len());
                idx.swap(i, j);
            }
            let sub: Vec<Vec3> = idx[..100].iter().map(|&i| pts[i].position).collect();
            random_min += min_pairwise(&sub) / 5.0;
        }
        assert!(
            fps_min >= random_min,
            "farthest-point min distance {fps_min} below random subset {random_min}"
        );
    }

    #[test]
    fn farthest_point_is_deterministic() {
        let pts: Vec<Vec3> = (0..50)
            .map(|i| vec3((i * 7 % 13) as f64, (i * 3 % 11) as f64, i as f64 * 0.1))
            .collect();
        let a = farthest_point_indices(&pts, 10);
        let b = farthest_point_indices(&pts, 10);
        assert_eq!(a, b);
        assert_eq!(a[0], 0);
    }

    #[test]
    fn sky_sphere_appends_midgray_billboards() {
        let mut rng = StdRng::seed_from_u64(15);
        let pts: Vec<ColoredPoint> = (0..10_500)
            .map(|_| ColoredPoint {
                position: vec3(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ),
                color: [0.3, 0.4, 0.5],
            })
            .collect();
        let (set, meta) = init_from_point_cloud(&pts, 20_000, true, 4).unwrap();
        assert_eq!(set.count(), 10_500 + 2_000);
        for i in 10_500..set.count() {
            let r = (set.mu_of(i) - meta.sphere_center).norm();
            assert!((r - meta.sphere_radius).abs() < 1e-6);
            // No color information: the view-independent component is gray.
            let c = crate::sh::color_from_dc(set.sh_of(i)[0]);
            assert!((c - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn sky_count_policy() {
        assert_eq!(sky_point_count(5_000), 0);
        assert_eq!(sky_point_count(10_000), 0);
        assert_eq!(sky_point_count(15_000), 2_000);
        assert_eq!(sky_point_count(50_000), 10_000);
    }
}
