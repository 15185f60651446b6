//! Analytic backward pass: routes per-pixel image-loss gradients into
//! texture, spherical-harmonic, and plane-geometry gradients.
//!
//! Per pixel, contributors are walked back to front while reconstructing the
//! color composited behind each hit. The opacity gradient of hit `i` is
//! `(c_i - behind_i) * T_i` (minus the background leak term), the color
//! gradient is `alpha_i * T_i`; both then chain through bilinear sampling
//! into the textures and through the ray-plane intersection into center,
//! rotation, and log-scale. Depth ordering is treated as constant: no
//! gradient flows through the sort.
//!
//! Parallelism: tiles accumulate into private sparse gradient maps that are
//! merged in fixed tile order, so results are bitwise reproducible for any
//! worker count.

use crate::geometry::{intersect_scalars, CameraView, IntersectScalars, PixelRay};
use crate::math::{logistic_derivative, Vec3};
use crate::render::{bilinear_setup, FrameBuffer, ViewPrep, TILE_SIZE};
use crate::scene::BillboardSet;
use crate::sh;
use crate::{Error, Result};
use rayon::prelude::*;
use std::collections::BTreeMap;

/// Gradient mirrors of every billboard parameter array.
#[derive(Debug, Clone)]
pub struct GradientBuffer {
    pub mu: Vec<f64>,
    pub log_scale: Vec<f64>,
    pub rot: Vec<f64>,
    pub sh: Vec<f64>,
    pub t_rgb: Vec<f64>,
    pub t_alpha: Vec<f64>,
}

impl GradientBuffer {
    pub fn zeros_like(set: &BillboardSet) -> GradientBuffer {
        GradientBuffer {
            mu: vec![0.0; set.mu.len()],
            log_scale: vec![0.0; set.log_scale.len()],
            rot: vec![0.0; set.rot.len()],
            sh: vec![0.0; set.sh.len()],
            t_rgb: vec![0.0; set.t_rgb.len()],
            t_alpha: vec![0.0; set.t_alpha.len()],
        }
    }

    pub fn zero(&mut self) {
        for v in [
            &mut self.mu,
            &mut self.log_scale,
            &mut self.rot,
            &mut self.sh,
            &mut self.t_rgb,
            &mut self.t_alpha,
        ] {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Grow the buffer to match a set that gained billboards.
    pub fn resize_to(&mut self, set: &BillboardSet) {
        self.mu.resize(set.mu.len(), 0.0);
        self.log_scale.resize(set.log_scale.len(), 0.0);
        self.rot.resize(set.rot.len(), 0.0);
        self.sh.resize(set.sh.len(), 0.0);
        self.t_rgb.resize(set.t_rgb.len(), 0.0);
        self.t_alpha.resize(set.t_alpha.len(), 0.0);
    }
}

/// Redistribute a sample gradient onto the four source texels and return the
/// loss gradient with respect to the chart coordinates.
///
/// `grad_tex` accumulates `dl_dsample[c] * w_k` into each contributing texel
/// (the bilinear weights sum to one, so the redistributed mass per channel
/// equals the incoming gradient). The returned pair is
/// `(dL/du, dL/dv) = sum_c dl_dsample[c] * d sample_c / d(u, v)`, including
/// the `(side - 1) / 2` factor of the chart-to-texel map.
pub fn bilinear_backward<const CH: usize>(
    dl_dsample: [f64; CH],
    u: f64,
    v: f64,
    tex: &[f64],
    side: usize,
    grad_tex: &mut [f64],
) -> (f64, f64) {
    let (x0, y0, x1, y1, fx, fy) = bilinear_setup(side, u, v);
    let w00 = (1.0 - fx) * (1.0 - fy);
    let w10 = fx * (1.0 - fy);
    let w01 = (1.0 - fx) * fy;
    let w11 = fx * fy;
    let scale = (side - 1) as f64 / 2.0;
    let mut gu = 0.0;
    let mut gv = 0.0;
    for (c, &g) in dl_dsample.iter().enumerate() {
        let t00 = tex[(y0 * side + x0) * CH + c];
        let t10 = tex[(y0 * side + x1) * CH + c];
        let t01 = tex[(y1 * side + x0) * CH + c];
        let t11 = tex[(y1 * side + x1) * CH + c];
        grad_tex[(y0 * side + x0) * CH + c] += g * w00;
        grad_tex[(y0 * side + x1) * CH + c] += g * w10;
        grad_tex[(y1 * side + x0) * CH + c] += g * w01;
        grad_tex[(y1 * side + x1) * CH + c] += g * w11;
        let dx = (1.0 - fy) * (t10 - t00) + fy * (t11 - t01);
        let dy = (1.0 - fx) * (t01 - t00) + fx * (t11 - t10);
        gu += g * dx * scale;
        gv += g * dy * scale;
    }
    (gu, gv)
}

/// Adjoint of the ray-plane intersection: pushes `(dL/du, dL/dv)` back to
/// the plane's scaled axes and center.
fn intersect_backward(
    ray: &PixelRay,
    s: &IntersectScalars,
    gu: f64,
    gv: f64,
) -> (Vec3, Vec3, Vec3) {
    let IntersectScalars {
        a1,
        a2,
        a4,
        b1,
        b2,
        b4,
        denom,
        u,
        v,
    } = *s;
    let inv = 1.0 / denom;
    // Quotient-rule partials of (u, v) with respect to the six scalars.
    let da1 = (gu * (-u * b2) + gv * (-b4 - v * b2)) * inv;
    let da2 = (gu * (b4 + u * b1) + gv * (v * b1)) * inv;
    let da4 = (gu * (-b2) + gv * b1) * inv;
    let db1 = (gu * (u * a2) + gv * (a4 + v * a2)) * inv;
    let db2 = (gu * (-a4 - u * a1) + gv * (-v * a1)) * inv;
    let db4 = (gu * a2 + gv * (-a1)) * inv;
    let qx = ray.qx.xyz();
    let qy = ray.qy.xyz();
    (
        qx * da1 + qy * db1,
        qx * da2 + qy * db2,
        qx * da4 + qy * db4,
    )
}

#[derive(Clone)]
struct BillboardGrad {
    mu: [f64; 3],
    log_scale: [f64; 2],
    rot: [f64; 4],
    /// Gradient on the pre-offset base color of this view.
    base: [f64; 3],
    t_rgb: Vec<f64>,
    t_alpha: Vec<f64>,
}

impl BillboardGrad {
    fn new(texels: usize) -> BillboardGrad {
        BillboardGrad {
            mu: [0.0; 3],
            log_scale: [0.0; 2],
            rot: [0.0; 4],
            base: [0.0; 3],
            t_rgb: vec![0.0; texels * 3],
            t_alpha: vec![0.0; texels],
        }
    }
}

/// Backward pass over a training-mode framebuffer.
///
/// `dl_dimage` is the loss gradient per pixel and channel, row-major, and
/// must match the framebuffer size. Gradients accumulate into `grads`
/// (callers zero it per iteration).
pub fn composite_backward(
    fb: &FrameBuffer,
    dl_dimage: &[[f64; 3]],
    set: &BillboardSet,
    background: [f64; 3],
    cam: &CameraView,
    grads: &mut GradientBuffer,
) -> Result<()> {
    let prep = crate::render::prepare_view(set, cam);
    composite_backward_prepared(fb, dl_dimage, set, background, cam, &prep, grads)
}

pub fn composite_backward_prepared(
    fb: &FrameBuffer,
    dl_dimage: &[[f64; 3]],
    set: &BillboardSet,
    background: [f64; 3],
    cam: &CameraView,
    prep: &ViewPrep,
    grads: &mut GradientBuffer,
) -> Result<()> {
    let contributors = fb
        .contributors
        .as_ref()
        .ok_or_else(|| Error::Train("backward needs a training-mode framebuffer".into()))?;
    if dl_dimage.len() != fb.width * fb.height {
        return Err(Error::Shape(format!(
            "gradient image has {} pixels, framebuffer {}",
            dl_dimage.len(),
            fb.width * fb.height
        )));
    }

    let side = set.texture_side();
    let texels = set.texels();
    let tiles_x = fb.width.div_ceil(TILE_SIZE);
    let tiles_y = fb.height.div_ceil(TILE_SIZE);

    let tile_maps: Vec<BTreeMap<u32, BillboardGrad>> = (0..tiles_x * tiles_y)
        .into_par_iter()
        .map(|t| {
            let tx = t % tiles_x;
            let ty = t / tiles_x;
            let mut map: BTreeMap<u32, BillboardGrad> = BTreeMap::new();
            for py in ty * TILE_SIZE..((ty + 1) * TILE_SIZE).min(fb.height) {
                for px in tx * TILE_SIZE..((tx + 1) * TILE_SIZE).min(fb.width) {
                    let idx = py * fb.width + px;
                    let list = &contributors[idx];
                    if list.is_empty() {
                        continue;
                    }
                    let dl = dl_dimage[idx];
                    if dl == [0.0; 3] {
                        continue;
                    }
                    let bg_dot =
                        background[0] * dl[0] + background[1] * dl[1] + background[2] * dl[2];
                    let ray = PixelRay::new(cam, cam.pixel_to_ndc(px, py));
                    // Color composited strictly behind the current hit and
                    // the transmittance product over the hits behind it.
                    let mut behind = [0.0; 3];
                    let mut suffix_t = 1.0;
                    for contrib in list.iter().rev() {
                        let i = contrib.id as usize;
                        let t_in_front = contrib.transmittance;
                        let mut dl_dalpha = 0.0;
                        let mut dl_dc = [0.0; 3];
                        for ch in 0..3 {
                            dl_dalpha += (contrib.color[ch] - behind[ch]) * dl[ch];
                            // The clamp to non-negative color gates the
                            // chain into offsets and harmonics.
                            if contrib.color[ch] > 0.0 {
                                dl_dc[ch] = dl[ch] * contrib.alpha * t_in_front;
                            }
                        }
                        dl_dalpha *= t_in_front;
                        dl_dalpha -= bg_dot * t_in_front * suffix_t;

                        let entry = map
                            .entry(contrib.id)
                            .or_insert_with(|| BillboardGrad::new(texels));
                        let (gu_rgb, gv_rgb) = bilinear_backward::<3>(
                            dl_dc,
                            contrib.u,
                            contrib.v,
                            set.t_rgb_of(i),
                            side,
                            &mut entry.t_rgb,
                        );
                        for ch in 0..3 {
                            entry.base[ch] += dl_dc[ch];
                        }
                        let dl_dlogit = dl_dalpha * logistic_derivative(contrib.alpha);
                        let (gu_a, gv_a) = bilinear_backward::<1>(
                            [dl_dlogit],
                            contrib.u,
                            contrib.v,
                            set.t_alpha_of(i),
                            side,
                            &mut entry.t_alpha,
                        );
                        let gu = gu_rgb + gu_a;
                        let gv = gv_rgb + gv_a;

                        let plane = &prep.planes[i];
                        if let Some(s) = intersect_scalars(&ray, plane) {
                            let (d_e1, d_e2, d_mu) = intersect_backward(&ray, &s, gu, gv);
                            let ls = set.log_scale_of(i);
                            entry.log_scale[0] += d_e1.dot(plane.axis_u);
                            entry.log_scale[1] += d_e2.dot(plane.axis_v);
                            let q = set.rot_of(i).normalized();
                            let dcx = q.d_col_x();
                            let dcy = q.d_col_y();
                            let (e1s, e2s) = (ls[0].exp(), ls[1].exp());
                            for k in 0..4 {
                                entry.rot[k] += e1s * dcx[k].dot(d_e1) + e2s * dcy[k].dot(d_e2);
                            }
                            entry.mu[0] += d_mu.x;
                            entry.mu[1] += d_mu.y;
                            entry.mu[2] += d_mu.z;
                        }

                        for ch in 0..3 {
                            behind[ch] = contrib.alpha * contrib.color[ch]
                                + (1.0 - contrib.alpha) * behind[ch];
                        }
                        suffix_t *= 1.0 - contrib.alpha;
                    }
                }
            }
            map
        })
        .collect();

    // Deterministic reduction: tiles in index order, billboards in id order.
    for map in tile_maps {
        for (id, g) in map {
            let i = id as usize;
            for k in 0..3 {
                grads.mu[3 * i + k] += g.mu[k];
            }
            for k in 0..2 {
                grads.log_scale[2 * i + k] += g.log_scale[k];
            }
            for k in 0..4 {
                grads.rot[4 * i + k] += g.rot[k];
            }
            for (dst, src) in grads.t_rgb[texels * 3 * i..texels * 3 * (i + 1)]
                .iter_mut()
                .zip(g.t_rgb.iter())
            {
                *dst += src;
            }
            for (dst, src) in grads.t_alpha[texels * i..texels * (i + 1)]
                .iter_mut()
                .zip(g.t_alpha.iter())
            {
                *dst += src;
            }
            // Base-color gradient: fan out over the harmonic basis and
            // chain the view-direction dependence into the center.
            let dir = prep.dirs[i];
            let basis = sh::basis(dir);
            let basis_grads = sh::basis_gradients(dir);
            let coeffs = set.sh_of(i);
            let mut d_dir = Vec3::ZERO;
            for k in 0..sh::SH_COEFFS {
                for ch in 0..3 {
                    grads.sh[sh::SH_TOTAL * i + k * 3 + ch] += basis[k] * g.base[ch];
                    d_dir += basis_grads[k] * (coeffs[k * 3 + ch] * g.base[ch]);
                }
            }
            let offset = set.mu_of(i) - cam.camera_center;
            let dist = offset.norm();
            if dist > 0.0 {
                // d normalize: (I - d d^T) / r.
                let proj = d_dir - dir * dir.dot(d_dir);
                grads.mu[3 * i] += proj.x / dist;
                grads.mu[3 * i + 1] += proj.y / dist;
                grads.mu[3 * i + 2] += proj.z / dist;
            }
        }
    }

    // Rotation gradients live on the unit sphere: project out the radial
    // component so the finite-difference of a normalized forward matches.
    for i in 0..set.count() {
        let q = set.rot_of(i).normalized().to_array();
        let g = &mut grads.rot[4 * i..4 * (i + 1)];
        let radial: f64 = g.iter().zip(q.iter()).map(|(a, b)| a * b).sum();
        for k in 0..4 {
            g[k] -= radial * q[k];
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{logit, vec3};
    use crate::render::{render, RenderMode};
    use crate::synth::gradcheck_scene;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn bilinear_backward_exact_texel_puts_all_mass_on_it() {
        let tex = [0.0, 1.0, 2.0, 3.0];
        let mut grad = [0.0; 4];
        bilinear_backward::<1>([2.0], -1.0, -1.0, &tex, 2, &mut grad);
        assert_eq!(grad, [2.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn bilinear_backward_weights_partition_unity() {
        let mut rng = StdRng::seed_from_u64(3);
        let side = 5;
        let tex: Vec<f64> = (0..side * side)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        for _ in 0..100 {
            let mut grad = vec![0.0; side * side];
            let g_in = rng.random_range(-2.0..2.0);
            bilinear_backward::<1>(
                [g_in],
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                &tex,
                side,
                &mut grad,
            );
            let total: f64 = grad.iter().sum();
            assert!((total - g_in).abs() < 1e-12);
        }
    }

    #[test]
    fn bilinear_backward_constant_texture_has_no_position_gradient() {
        let tex = [0.7; 9];
        let mut grad = [0.0; 9];
        let (gu, gv) = bilinear_backward::<1>([1.0], 0.3, -0.2, &tex, 3, &mut grad);
        assert_eq!((gu, gv), (0.0, 0.0));
    }

    #[test]
    fn bilinear_position_gradient_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(5);
        let side = 4;
        let tex: Vec<f64> = (0..side * side)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let h = 1e-6;
        for _ in 0..200 {
            let u = rng.random_range(-0.95..0.95);
            let v = rng.random_range(-0.95..0.95);
            let mut sink = vec![0.0; side * side];
            let (gu, gv) = bilinear_backward::<1>([1.0], u, v, &tex, side, &mut sink);
            let s = |u: f64, v: f64| crate::render::sample_bilinear::<1>(&tex, side, u, v)[0];
            let fdu = (s(u + h, v) - s(u - h, v)) / (2.0 * h);
            let fdv = (s(u, v + h) - s(u, v - h)) / (2.0 * h);
            // Skip draws straddling a texel-boundary kink.
            let x = (u + 1.0) / 2.0 * (side - 1) as f64;
            let y = (v + 1.0) / 2.0 * (side - 1) as f64;
            if (x - x.round()).abs() < 1e-5 || (y - y.round()).abs() < 1e-5 {
                continue;
            }
            assert!((gu - fdu).abs() < 1e-6, "du: {gu} vs {fdu} at ({u}, {v})");
            assert!((gv - fdv).abs() < 1e-6, "dv: {gv} vs {fdv}");
        }
    }

    #[test]
    fn spec_center_example_matches_finite_difference() {
        let tex = [0.0, 1.0, 2.0, 3.0];
        let mut sink = [0.0; 4];
        let (gu, _) = bilinear_backward::<1>([1.0], 0.0, 0.0, &tex, 2, &mut sink);
        let h = 1e-6;
        let s = |u: f64| crate::render::sample_bilinear::<1>(&tex, 2, u, 0.0)[0];
        let fd = (s(h) - s(-h)) / (2.0 * h);
        assert!((gu - fd).abs() < 1e-6);
    }

    #[test]
    fn inference_framebuffer_is_rejected() {
        let (set, meta, cam) = gradcheck_scene();
        let fb = render(&set, &meta, &cam, RenderMode::Inference);
        let dl = vec![[0.0; 3]; cam.width * cam.height];
        let mut grads = GradientBuffer::zeros_like(&set);
        assert!(composite_backward(&fb, &dl, &set, meta.background, &cam, &mut grads).is_err());
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let (set, meta, cam) = gradcheck_scene();
        let fb = render(&set, &meta, &cam, RenderMode::Training);
        let dl = vec![[0.0; 3]; cam.width * cam.height];
        let mut grads = GradientBuffer::zeros_like(&set);
        composite_backward(&fb, &dl, &set, meta.background, &cam, &mut grads).unwrap();
        assert!(grads.mu.iter().all(|&g| g == 0.0));
        assert!(grads.sh.iter().all(|&g| g == 0.0));
        assert!(grads.t_rgb.iter().all(|&g| g == 0.0));
        assert!(grads.t_alpha.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn single_opaque_billboard_color_chain() {
        // One saturated billboard covering the frame: the base-color
        // gradient equals the upstream gradient summed over covered pixels,
        // and the redistributed texture gradient sums to the same.
        let pts = [crate::scene::ColoredPoint {
            position: vec3(0.0, 0.0, 2.0),
            color: [0.6, 0.6, 0.6],
        }];
        let (mut set, meta) = crate::scene::init_from_point_cloud(&pts, 1, false, 8).unwrap();
        set.log_scale.fill((8.0_f64).ln());
        for l in set.t_alpha_of_mut(0) {
            *l = logit(1.0 - 1e-12);
        }
        let cam = crate::geometry::CameraView::from_pinhole(
            4.0,
            4.0,
            4.0,
            4.0,
            8,
            8,
            crate::math::Mat4::IDENTITY,
            0.01,
            100.0,
        )
        .unwrap();
        let fb = render(&set, &meta, &cam, RenderMode::Training);
        let dl = vec![[1.0, 0.5, -0.25]; 64];
        let mut grads = GradientBuffer::zeros_like(&set);
        composite_backward(&fb, &dl, &set, meta.background, &cam, &mut grads).unwrap();
        // DC gradient: 64 pixels of upstream, times the basis constant.
        let want_dc = 64.0 * crate::sh::basis(vec3(0.0, 0.0, 1.0))[0];
        assert!((grads.sh[0] - want_dc).abs() < 1e-9);
        assert!((grads.sh[1] - 0.5 * want_dc / 1.0).abs() < 1e-9);
        let rgb_sum: f64 = grads.t_rgb.iter().step_by(3).sum();
        assert!((rgb_sum - 64.0).abs() < 1e-9);
    }

    /// Full-pipeline gradient check on the sum-of-pixels loss.
    #[test]
    fn full_gradient_check_against_finite_differences() {
        let (set, meta, cam) = gradcheck_scene();
        let report = crate::synth::gradient_check(&set, &meta, &cam, 1e-3, 1e-6);
        assert!(
            report.max_rel_err < 1e-3,
            "worst {} at {}: analytic {} vs fd {}",
            report.max_rel_err,
            report.worst_param,
            report.worst_analytic,
            report.worst_fd
        );
    }

    #[test]
    fn backward_is_deterministic_across_runs() {
        let (set, meta, cam) = gradcheck_scene();
        let fb = render(&set, &meta, &cam, RenderMode::Training);
        let dl = vec![[1.0; 3]; cam.width * cam.height];
        let run = || {
            let mut grads = GradientBuffer::zeros_like(&set);
            composite_backward(&fb, &dl, &set, meta.background, &cam, &mut grads).unwrap();
            grads
        };
        let a = run();
        let b = run();
        assert_eq!(a.mu, b.mu);
        assert_eq!(a.rot, b.rot);
        assert_eq!(a.t_alpha, b.t_alpha);
    }

    #[test]
    fn background_leak_gradient_is_included() {
        // A single semi-transparent billboard over a bright background:
        // d pixel / d alpha includes the negative background term, checked
        // against finite differences on one alpha logit.
        let pts = [crate::scene::ColoredPoint {
            position: vec3(0.0, 0.0, 2.0),
            color: [0.2, 0.2, 0.2],
        }];
        let (mut set, mut meta) = crate::scene::init_from_point_cloud(&pts, 1, false, 4).unwrap();
        meta.background = [1.0, 1.0, 1.0];
        set.log_scale.fill((8.0_f64).ln());
        for l in set.t_alpha_of_mut(0) {
            *l = logit(0.4);
        }
        let cam = crate::geometry::CameraView::from_pinhole(
            2.0,
            2.0,
            2.0,
            2.0,
            4,
            4,
            crate::math::Mat4::IDENTITY,
            0.01,
            100.0,
        )
        .unwrap();
        let loss = |s: &BillboardSet| -> f64 {
            let fb = render(s, &meta, &cam, RenderMode::Inference);
            fb.color.iter().map(|c| c[0] + c[1] + c[2]).sum()
        };
        let fb = render(&set, &meta, &cam, RenderMode::Training);
        let dl = vec![[1.0; 3]; 16];
        let mut grads = GradientBuffer::zeros_like(&set);
        composite_backward(&fb, &dl, &set, meta.background, &cam, &mut grads).unwrap();
        let h = 1e-4;
        let k = 5; // an interior texel
        let mut plus = set.clone();
        plus.t_alpha[k] += h;
        let mut minus = set.clone();
        minus.t_alpha[k] -= h;
        let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
        assert!(
            (grads.t_alpha[k] - fd).abs() < 1e-5 * fd.abs().max(1.0),
            "analytic {} vs fd {}",
            grads.t_alpha[k],
            fd
        );
    }
}
