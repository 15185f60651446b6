//! Relocation-based density control for textured billboards.
//!
//! Dead billboards (mean activated opacity below a threshold) are re-seeded
//! onto live ones sampled proportionally to mean opacity; population growth
//! toward a linear cap clones the highest-impact billboards. In both cases
//! the alpha map of the group is rescaled with the n-way transmittance
//! split `T' = 1 - (1 - T)^(1/n)`, which keeps the composited image
//! unchanged when the copies lie on top of each other. Scales and rotations
//! are never rescaled: a per-texel alpha map already controls shape, and
//! covariance-style rescaling is wrong for arbitrarily shaped primitives.

use crate::math::{logistic, logit, vec3, Vec3};
use crate::optim::TrainConfig;
use crate::scene::{BillboardSet, SceneMeta};
use crate::{Error, Result};
use rand::rngs::StdRng;
use rand::Rng;
use std::collections::BTreeMap;

/// Mean-opacity threshold below which a billboard counts as dead.
pub const GAMMA_DEAD: f64 = 5e-3;
/// Positional jitter on clones, as a fraction of the source's mean scale.
pub const CLONE_JITTER: f64 = 0.01;

#[derive(Debug, Clone, Default)]
pub struct DensifyReport {
    pub dead: usize,
    pub relocated: usize,
    pub grown: usize,
    pub new_total: usize,
    /// (source id, number of clones seeded from it).
    pub clones: Vec<(usize, usize)>,
    /// Every slot whose parameters were rewritten (for optimizer resets).
    pub touched: Vec<usize>,
}

/// N-way transmittance split on an opacity-space alpha map:
/// elementwise `T' = 1 - (1 - T)^(1/n)`.
pub fn alpha_nsplit(t_alpha_opacity: &[f64], n: usize) -> Result<Vec<f64>> {
    if n < 1 {
        return Err(Error::Scene("alpha split needs n >= 1".into()));
    }
    let inv = 1.0 / n as f64;
    Ok(t_alpha_opacity
        .iter()
        .map(|&t| 1.0 - (1.0 - t).powf(inv))
        .collect())
}

/// Indices whose mean activated opacity falls strictly below `gamma`.
pub fn find_dead(set: &BillboardSet, gamma: f64) -> Vec<usize> {
    (0..set.count())
        .filter(|&i| set.active[i] && set.mean_opacity(i) < gamma)
        .collect()
}

fn opacity_texture(set: &BillboardSet, i: usize) -> Vec<f64> {
    set.t_alpha_of(i).iter().map(|&l| logistic(l)).collect()
}

fn write_opacity_texture(set: &mut BillboardSet, i: usize, opacity: &[f64]) {
    for (l, &t) in set.t_alpha_of_mut(i).iter_mut().zip(opacity.iter()) {
        *l = logit(t.clamp(1e-9, 1.0 - 1e-9));
    }
}

fn jitter_offset(set: &BillboardSet, src: usize, rng: &mut StdRng) -> Vec3 {
    let ls = set.log_scale_of(src);
    let mean_scale = ((ls[0] + ls[1]) / 2.0).exp();
    let gauss = |rng: &mut StdRng| {
        // Box-Muller; two uniform draws per normal sample.
        let u1: f64 = rng.random_range(1e-12..1.0);
        let u2: f64 = rng.random_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    };
    vec3(gauss(rng), gauss(rng), gauss(rng)) * (CLONE_JITTER * mean_scale)
}

/// Re-seed dead billboards onto live targets.
///
/// Targets are sampled with probability proportional to mean opacity; all
/// parameters are copied onto the dead slot, and the shared alpha map is
/// split across the group (target plus its clones). Clone centers receive a
/// small jitter when enabled. If nothing is alive, dead billboards are
/// re-seeded uniformly inside the scene's bounding sphere instead.
pub fn relocate(
    set: &mut BillboardSet,
    meta: &SceneMeta,
    dead: &[usize],
    rng: &mut StdRng,
    jitter: bool,
) -> Result<DensifyReport> {
    let mut report = DensifyReport {
        dead: dead.len(),
        new_total: set.count(),
        ..Default::default()
    };
    if dead.is_empty() {
        return Ok(report);
    }
    let dead_mask: Vec<bool> = {
        let mut m = vec![false; set.count()];
        for &d in dead {
            m[d] = true;
        }
        m
    };
    let live: Vec<usize> = (0..set.count())
        .filter(|&i| set.active[i] && !dead_mask[i])
        .collect();

    if live.is_empty() {
        // Nothing to clone from: scatter the dead over the bounding sphere.
        eprintln!(
            "warning: all {} billboards dead; re-seeding from the bounding sphere",
            dead.len()
        );
        let pattern = crate::scene::gaussian_pattern_texture(set.texture_side());
        for &d in dead {
            let dir = vec3(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let r = rng.random_range(0.0..1.0_f64).cbrt() * meta.sphere_radius;
            let p = meta.sphere_center
                + if dir.norm() > 1e-9 {
                    dir.normalized() * r
                } else {
                    Vec3::ZERO
                };
            set.set_mu(d, p);
            let scaled: Vec<f64> = pattern
                .iter()
                .map(|&g| crate::scene::INIT_OPACITY * g)
                .collect();
            write_opacity_texture(set, d, &scaled);
            report.touched.push(d);
            report.relocated += 1;
        }
        return Ok(report);
    }

    let weights: Vec<f64> = live.iter().map(|&i| set.mean_opacity(i)).collect();
    let total_w: f64 = weights.iter().sum();

    // Assign each dead slot a live target.
    let mut clones: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &d in dead {
        let mut pick = rng.random_range(0.0..total_w.max(1e-300));
        let mut target = live[live.len() - 1];
        for (&cand, &w) in live.iter().zip(weights.iter()) {
            if pick < w {
                target = cand;
                break;
            }
            pick -= w;
        }
        clones.entry(target).or_default().push(d);
    }

    for (&target, ds) in &clones {
        let n = 1 + ds.len();
        let split = alpha_nsplit(&opacity_texture(set, target), n)?;
        for &d in ds {
            set.copy_billboard(target, d);
            write_opacity_texture(set, d, &split);
            if jitter {
                let off = jitter_offset(set, target, rng);
                set.set_mu(d, set.mu_of(target) + off);
            }
            report.touched.push(d);
        }
        write_opacity_texture(set, target, &split);
        report.touched.push(target);
        report.relocated += ds.len();
        report.clones.push((target, ds.len()));
    }
    Ok(report)
}

/// Population target at `step` under the linear growth schedule.
pub fn growth_target(step: u64, cfg: &TrainConfig, growth_base: usize) -> usize {
    if cfg.densify_end <= cfg.densify_start {
        return cfg.max_billboards.min(growth_base.max(1));
    }
    let t = ((step.saturating_sub(cfg.densify_start)) as f64
        / (cfg.densify_end - cfg.densify_start) as f64)
        .clamp(0.0, 1.0);
    let target = growth_base as f64 + (cfg.max_billboards as f64 - growth_base as f64) * t;
    (target.round() as usize).min(cfg.max_billboards)
}

/// One density-control pass: relocate dead billboards, then grow the
/// population toward the linear cap by cloning the highest-impact
/// billboards (with the same alpha split). A no-op outside the window.
pub fn densify_step(
    set: &mut BillboardSet,
    meta: &SceneMeta,
    step: u64,
    cfg: &TrainConfig,
    growth_base: usize,
    impact: &[f64],
    rng: &mut StdRng,
) -> Result<DensifyReport> {
    if step < cfg.densify_start || step > cfg.densify_end {
        return Ok(DensifyReport {
            new_total: set.count(),
            ..Default::default()
        });
    }
    let dead = find_dead(set, cfg.gamma_dead);
    let mut report = relocate(set, meta, &dead, rng, cfg.jitter_clones)?;

    let target = growth_target(step, cfg, growth_base);
    let need = target.saturating_sub(set.count());
    if need > 0 {
        // Highest impact first, ties by index for determinism.
        let mut order: Vec<usize> = (0..set.count().min(impact.len()))
            .filter(|&i| set.active[i])
            .collect();
        order.sort_by(|&a, &b| {
            impact[b]
                .partial_cmp(&impact[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        if !order.is_empty() {
            let mut clone_counts: BTreeMap<usize, usize> = BTreeMap::new();
            for k in 0..need {
                let src = order[k % order.len()];
                *clone_counts.entry(src).or_default() += 1;
            }
            for (&src, &n_clones) in &clone_counts {
                let split = alpha_nsplit(&opacity_texture(set, src), 1 + n_clones)?;
                for _ in 0..n_clones {
                    let new_id = set.push_clone(src);
                    write_opacity_texture(set, new_id, &split);
                    if cfg.jitter_clones {
                        let off = jitter_offset(set, src, rng);
                        set.set_mu(new_id, set.mu_of(src) + off);
                    }
                    report.touched.push(new_id);
                }
                write_opacity_texture(set, src, &split);
                report.touched.push(src);
                report.clones.push((src, n_clones));
                report.grown += n_clones;
            }
        }
    }
    report.new_total = set.count();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::{render, RenderMode};
    use crate::scene::{init_from_point_cloud, ColoredPoint};
    use rand::SeedableRng;

    #[test]
    fn nsplit_identity_and_hand_value() {
        let t = vec![0.75];
        assert_eq!(alpha_nsplit(&t, 1).unwrap(), vec![0.75]);
        let s = alpha_nsplit(&t, 2).unwrap();
        assert!((s[0] - 0.5).abs() < 1e-12);
        assert!(alpha_nsplit(&t, 0).is_err());
    }

    #[test]
    fn nsplit_preserves_composited_transmittance() {
        let mut rng = StdRng::seed_from_u64(9);
        for _ in 0..1000 {
            let t = rng.random_range(0.001..0.999);
            let n = rng.random_range(1..=8usize);
            let s = alpha_nsplit(&[t], n).unwrap()[0];
            // Composite n copies: total opacity 1 - (1 - s)^n.
            let recomposed = 1.0 - (1.0 - s).powi(n as i32);
            assert!(
                (recomposed - t).abs() < 1e-6,
                "t {t}, n {n}: recomposed {recomposed}"
            );
        }
    }

    #[test]
    fn nsplit_is_monotone_in_n() {
        let t = [0.9];
        let mut prev = 1.0;
        for n in 1..=8 {
            let s = alpha_nsplit(&t, n).unwrap()[0];
            assert!(s < prev);
            prev = s;
        }
    }

    fn tiny_scene(mean_alphas: &[f64]) -> (BillboardSet, SceneMeta) {
        let pts: Vec<ColoredPoint> = mean_alphas
            .iter()
            .enumerate()
            .map(|(i, _)| ColoredPoint {
                position: vec3(i as f64 * 0.5 - 0.5, 0.0, 2.0 + 0.3 * i as f64),
                color: [0.3 + 0.2 * i as f64, 0.5, 0.7],
            })
            .collect();
        let (mut set, meta) = init_from_point_cloud(&pts, pts.len(), false, 8).unwrap();
        for (i, &a) in mean_alphas.iter().enumerate() {
            for l in set.t_alpha_of_mut(i) {
                *l = logit(a.clamp(1e-9, 1.0 - 1e-9));
            }
        }
        (set, meta)
    }

    #[test]
    fn find_dead_threshold_cases() {
        let (set, _) = tiny_scene(&[0.001, 0.5, GAMMA_DEAD]);
        let dead = find_dead(&set, GAMMA_DEAD);
        // Strict inequality: a mean exactly at gamma stays alive.
        assert_eq!(dead, vec![0]);
    }

    #[test]
    fn relocate_no_dead_is_a_noop() {
        let (mut set, meta) = tiny_scene(&[0.5, 0.6]);
        let before = set.clone();
        let mut rng = StdRng::seed_from_u64(1);
        let report = relocate(&mut set, &meta, &[], &mut rng, true).unwrap();
        assert_eq!(report.relocated, 0);
        assert_eq!(set.t_alpha, before.t_alpha);
        assert_eq!(set.mu, before.mu);
    }

    #[test]
    fn relocate_pairs_dead_with_live_and_splits_alpha() {
        let (mut set, meta) = tiny_scene(&[0.001, 0.8]);
        let mut rng = StdRng::seed_from_u64(2);
        let report = relocate(&mut set, &meta, &[0], &mut rng, false).unwrap();
        assert_eq!(report.relocated, 1);
        assert_eq!(report.clones, vec![(1, 1)]);
        // Both carry 1 - sqrt(1 - 0.8).
        let want = 1.0 - (1.0 - 0.8_f64).sqrt();
        for i in 0..2 {
            let got = logistic(set.t_alpha_of(i)[10]);
            assert!((got - want).abs() < 1e-9, "billboard {i}: {got} vs {want}");
        }
        assert_eq!(set.mu_of(0), set.mu_of(1));
    }

    #[test]
    fn relocation_preserves_the_rendered_image() {
        let (mut set, meta) = tiny_scene(&[0.002, 0.9, 0.7]);
        set.log_scale.fill((1.5_f64).ln());
        let cam = crate::geometry::CameraView::from_pinhole(
            32.0,
            32.0,
            32.0,
            32.0,
            64,
            64,
            crate::math::Mat4::IDENTITY,
            0.01,
            100.0,
        )
        .unwrap();
        let before = render(&set, &meta, &cam, RenderMode::Inference);
        let dead = find_dead(&set, GAMMA_DEAD);
        assert_eq!(dead, vec![0]);
        let mut rng = StdRng::seed_from_u64(3);
        relocate(&mut set, &meta, &dead, &mut rng, true).unwrap();
        let after = render(&set, &meta, &cam, RenderMode::Inference);
        let mut mae = 0.0;
        for (a, b) in before.color.iter().zip(after.color.iter()) {
            for c in 0..3 {
                mae += (a[c] - b[c]).abs();
            }
        }
        mae /= (before.color.len() * 3) as f64;
        assert!(mae < 0.02, "relocation changed the render by {mae} MAE");
        assert!(set.all_finite());
    }

    #[test]
    fn all_dead_reseeds_from_bounding_sphere() {
        let (mut set, meta) = tiny_scene(&[0.0001, 0.0001]);
        let dead = find_dead(&set, GAMMA_DEAD);
        assert_eq!(dead.len(), 2);
        let mut rng = StdRng::seed_from_u64(4);
        let report = relocate(&mut set, &meta, &dead, &mut rng, true).unwrap();
        assert_eq!(report.relocated, 2);
        for i in 0..2 {
            let d = (set.mu_of(i) - meta.sphere_center).norm();
            assert!(d <= meta.sphere_radius + 1e-9);
        }
        assert!(set.all_finite());
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            densify_start: 100,
            densify_end: 1000,
            max_billboards: 10,
            ..Default::default()
        }
    }

    #[test]
    fn densify_outside_window_is_noop() {
        let (mut set, meta) = tiny_scene(&[0.5, 0.6]);
        let before = set.clone();
        let mut rng = StdRng::seed_from_u64(5);
        let cfg = quick_cfg();
        let r = densify_step(&mut set, &meta, 50, &cfg, 2, &[1.0, 2.0], &mut rng).unwrap();
        assert_eq!(r.relocated + r.grown, 0);
        assert_eq!(set.mu, before.mu);
    }

    #[test]
    fn growth_respects_linear_cap_and_impact_order() {
        let (mut set, meta) = tiny_scene(&[0.5, 0.6]);
        let cfg = quick_cfg();
        let mut rng = StdRng::seed_from_u64(6);
        // Halfway through the window: target = 2 + (10 - 2) * 0.5 = 6.
        let r = densify_step(&mut set, &meta, 550, &cfg, 2, &[0.1, 5.0], &mut rng).unwrap();
        assert_eq!(set.count(), 6);
        assert_eq!(r.grown, 4);
        // Highest-impact billboard (index 1) seeded the most clones.
        let c: std::collections::HashMap<usize, usize> = r.clones.iter().cloned().collect();
        assert!(c[&1] >= c[&0]);
        // At the end of the window the cap is reached but never exceeded.
        let impacts = vec![1.0; set.count()];
        let r = densify_step(&mut set, &meta, 1000, &cfg, 2, &impacts, &mut rng).unwrap();
        assert_eq!(set.count(), 10);
        assert_eq!(r.new_total, 10);
        let r = densify_step(&mut set, &meta, 1000, &cfg, 2, &[1.0; 10], &mut rng).unwrap();
        assert_eq!(set.count(), 10);
        assert_eq!(r.grown, 0);
    }

    #[test]
    fn growth_preserves_the_rendered_image() {
        let (mut set, meta) = tiny_scene(&[0.9, 0.8, 0.85, 0.7]);
        set.log_scale.fill((1.2_f64).ln());
        let cam = crate::geometry::CameraView::from_pinhole(
            32.0,
            32.0,
            32.0,
            32.0,
            64,
            64,
            crate::math::Mat4::IDENTITY,
            0.01,
            100.0,
        )
        .unwrap();
        let before = render(&set, &meta, &cam, RenderMode::Inference);
        let fb = render(&set, &meta, &cam, RenderMode::Training);
        let impact = crate::losses::billboard_impact(&fb, set.count()).unwrap();
        let cfg = TrainConfig {
            densify_start: 0,
            densify_end: 100,
            max_billboards: 8,
            ..Default::default()
        };
        let mut rng = StdRng::seed_from_u64(7);
        let r = densify_step(&mut set, &meta, 100, &cfg, 4, &impact, &mut rng).unwrap();
        assert_eq!(r.grown, 4);
        let after = render(&set, &meta, &cam, RenderMode::Inference);
        let mut mae = 0.0;
        for (a, b) in before.color.iter().zip(after.color.iter()) {
            for c in 0..3 {
                mae += (a[c] - b[c]).abs();
            }
        }
        mae /= (before.color.len() * 3) as f64;
        assert!(mae < 0.02, "growth changed the render by {mae} MAE");
    }
}
