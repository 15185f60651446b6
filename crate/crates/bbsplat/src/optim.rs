//! Adam optimization of all parameter groups and the training-loop
//! orchestration: render, loss, backward, per-group updates, densification,
//! and a final harmonics-only finetune phase.

use crate::backprop::{composite_backward_prepared, GradientBuffer};
use crate::densify::{densify_step, DensifyReport};
use crate::io::Dataset;
use crate::losses::{
    billboard_impact, image_loss_weighted, texture_reg_loss, visibility_weight, ImageRef,
};
use crate::render::{bin_tiles, prepare_view, render_prepared, RenderMode};
use crate::scene::{gaussian_pattern_texture, init_from_point_cloud, BillboardSet, SceneMeta};
use crate::{metrics, Error, Result};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use std::io::Write;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-15;

/// Bias-corrected Adam state for one parameter group.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    /// Components skipped because their gradient was not finite.
    pub skipped_nan: u64,
}

impl AdamState {
    pub fn new(len: usize) -> AdamState {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            skipped_nan: 0,
        }
    }

    pub fn resize(&mut self, len: usize) {
        self.m.resize(len, 0.0);
        self.v.resize(len, 0.0);
    }

    /// Clear the moments of one contiguous slot (used after relocation).
    pub fn reset_range(&mut self, range: std::ops::Range<usize>) {
        for k in range {
            self.m[k] = 0.0;
            self.v[k] = 0.0;
        }
    }

    /// One in-place Adam update. Components with non-finite gradients are
    /// skipped and counted.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.step += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            if !g.is_finite() {
                self.skipped_nan += 1;
                continue;
            }
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// All training hyper-parameters. Defaults follow the reference schedule:
/// 30k steps, textures frozen for the first 500, densification every 100
/// steps inside [500, 25000], then 2k harmonics-only finetune steps.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub texture_freeze_steps: u64,
    pub densify_start: u64,
    pub densify_end: u64,
    pub densify_interval: u64,
    pub sh_finetune_steps: u64,
    pub lr_mu_init: f64,
    pub lr_mu_final: f64,
    pub lr_rgb: f64,
    pub lr_alpha: f64,
    pub lr_sh: f64,
    pub lr_scale: f64,
    pub lr_rot: f64,
    pub lambda_ssim: f64,
    pub lambda_rgb: f64,
    pub lambda_alpha: f64,
    pub sigma_impact: f64,
    pub gamma_dead: f64,
    /// Hard cap on the billboard population.
    pub max_billboards: usize,
    /// Farthest-point subsampling target at initialization.
    pub init_billboards: usize,
    pub texture_side: usize,
    pub add_sky: bool,
    /// Positional jitter on relocation/growth clones.
    pub jitter_clones: bool,
    /// Texture sparsity regularization on/off.
    pub regularize_textures: bool,
    pub log_every: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_steps: 30_000,
            texture_freeze_steps: 500,
            densify_start: 500,
            densify_end: 25_000,
            densify_interval: 100,
            sh_finetune_steps: 2_000,
            lr_mu_init: 1.6e-4,
            lr_mu_final: 1.6e-6,
            lr_rgb: 2.5e-3,
            lr_alpha: 1e-3,
            lr_sh: 5e-3,
            lr_scale: 5e-3,
            lr_rot: 1e-3,
            lambda_ssim: 0.2,
            lambda_rgb: 1e-4,
            lambda_alpha: 1e-4,
            sigma_impact: 500.0,
            gamma_dead: 5e-3,
            max_billboards: 100_000,
            init_billboards: 100_000,
            texture_side: 16,
            add_sky: false,
            jitter_clones: true,
            regularize_textures: true,
            log_every: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.densify_start > self.densify_end || self.densify_end > self.total_steps {
            return Err(Error::Train(format!(
                "densify window [{}, {}] must lie inside [0, {}]",
                self.densify_start, self.densify_end, self.total_steps
            )));
        }
        if self.densify_interval == 0 || self.log_every == 0 {
            return Err(Error::Train("intervals must be positive".into()));
        }
        if self.texture_side < 2 {
            return Err(Error::Train("texture side must be at least 2".into()));
        }
        Ok(())
    }
}

/// Exponentially decayed center learning rate: log-linear from the initial
/// to the final value across the schedule.
pub fn position_lr(step: u64, cfg: &TrainConfig) -> f64 {
    let t = (step as f64 / cfg.total_steps as f64).clamp(0.0, 1.0);
    cfg.lr_mu_init * (cfg.lr_mu_final / cfg.lr_mu_init).powf(t)
}

/// One row of the incremental metrics log.
#[derive(Debug, Clone, Copy)]
pub struct MetricsRow {
    pub step: u64,
    pub l1: f64,
    pub ssim_loss: f64,
    pub texture_loss: f64,
    /// Mean held-out PSNR at this step.
    pub psnr: f64,
    pub count: usize,
}

impl MetricsRow {
    pub const CSV_HEADER: &'static str = "step,l1,ssim_loss,texture_loss,psnr,count";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{:.6e},{:.6e},{:.6e},{:.4},{}",
            self.step, self.l1, self.ssim_loss, self.texture_loss, self.psnr, self.count
        )
    }
}

pub struct TrainOutput {
    pub set: BillboardSet,
    pub meta: SceneMeta,
    pub log: Vec<MetricsRow>,
    pub densify_reports: Vec<(u64, DensifyReport)>,
}

struct ParamStates {
    mu: AdamState,
    log_scale: AdamState,
    rot: AdamState,
    sh: AdamState,
    t_rgb: AdamState,
    t_alpha: AdamState,
}

impl ParamStates {
    fn new(set: &BillboardSet) -> ParamStates {
        ParamStates {
            mu: AdamState::new(set.mu.len()),
            log_scale: AdamState::new(set.log_scale.len()),
            rot: AdamState::new(set.rot.len()),
            sh: AdamState::new(set.sh.len()),
            t_rgb: AdamState::new(set.t_rgb.len()),
            t_alpha: AdamState::new(set.t_alpha.len()),
        }
    }

    fn resize(&mut self, set: &BillboardSet) {
        self.mu.resize(set.mu.len());
        self.log_scale.resize(set.log_scale.len());
        self.rot.resize(set.rot.len());
        self.sh.resize(set.sh.len());
        self.t_rgb.resize(set.t_rgb.len());
        self.t_alpha.resize(set.t_alpha.len());
    }

    /// Forget moments of billboards rewritten by densification.
    fn reset_slots(&mut self, set: &BillboardSet, ids: &[usize]) {
        let texels = set.texels();
        for &i in ids {
            self.mu.reset_range(3 * i..3 * (i + 1));
            self.log_scale.reset_range(2 * i..2 * (i + 1));
            self.rot.reset_range(4 * i..4 * (i + 1));
            self.sh
                .reset_range(crate::sh::SH_TOTAL * i..crate::sh::SH_TOTAL * (i + 1));
            self.t_rgb.reset_range(texels * 3 * i..texels * 3 * (i + 1));
            self.t_alpha.reset_range(texels * i..texels * (i + 1));
        }
    }
}

/// Held-out PSNR: mean over test views of the clamped render against the
/// ground truth.
fn held_out_psnr(set: &BillboardSet, meta: &SceneMeta, dataset: &Dataset) -> f64 {
    let test = dataset.test_indices();
    if test.is_empty() {
        return f64::NAN;
    }
    let mut sum = 0.0;
    for &i in &test {
        let fb = crate::render::render(set, meta, &dataset.cameras[i], RenderMode::Inference);
        let clamped: Vec<[f64; 3]> = fb
            .color
            .iter()
            .map(|p| {
                [
                    p[0].clamp(0.0, 1.0),
                    p[1].clamp(0.0, 1.0),
                    p[2].clamp(0.0, 1.0),
                ]
            })
            .collect();
        sum += metrics::psnr(
            ImageRef::new(fb.width, fb.height, &clamped).unwrap(),
            ImageRef::new(fb.width, fb.height, &dataset.images[i]).unwrap(),
        )
        .unwrap();
    }
    sum / test.len() as f64
}

/// Optimize a billboard scene against a posed dataset.
///
/// Each step renders one training view (shuffled epoch order), accumulates
/// photometric and texture-regularization gradients, and applies per-group
/// Adam updates. Quaternions are renormalized after every step. Texture
/// parameters stay frozen for the first `texture_freeze_steps` iterations;
/// after `total_steps`, everything except the harmonics freezes for the
/// finetune phase. A CSV row is emitted every `log_every` steps and at the
/// final step.
pub fn train(
    dataset: &Dataset,
    cfg: &TrainConfig,
    mut log_sink: Option<&mut dyn Write>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if dataset.cameras.len() < 2 {
        return Err(Error::Train(format!(
            "need at least 2 posed images, got {}",
            dataset.cameras.len()
        )));
    }
    let train_views = dataset.train_indices();
    if train_views.is_empty() {
        return Err(Error::Train("train split is empty".into()));
    }

    let init_target = cfg.init_billboards.min(cfg.max_billboards).max(1);
    let (mut set, meta) =
        init_from_point_cloud(&dataset.points, init_target, cfg.add_sky, cfg.texture_side)?;
    if set.count() > cfg.max_billboards {
        return Err(Error::Train(format!(
            "initial population {} exceeds the cap {}",
            set.count(),
            cfg.max_billboards
        )));
    }
    let growth_base = set.count();

    let mut states = ParamStates::new(&set);
    let mut grads = GradientBuffer::zeros_like(&set);
    let pattern = gaussian_pattern_texture(cfg.texture_side);
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let mut epoch: Vec<usize> = Vec::new();
    let mut log = Vec::new();
    let mut densify_reports = Vec::new();

    if let Some(sink) = log_sink.as_deref_mut() {
        writeln!(sink, "{}", MetricsRow::CSV_HEADER).map_err(Error::from_io)?;
    }

    let last_step = cfg.total_steps + cfg.sh_finetune_steps;
    for step in 1..=last_step {
        let finetune = step > cfg.total_steps;
        if epoch.is_empty() {
            epoch = train_views.clone();
            epoch.shuffle(&mut rng);
        }
        let view = epoch.pop().expect("train split is non-empty");
        let cam = &dataset.cameras[view];
        let gt = ImageRef::new(cam.width, cam.height, &dataset.images[view])?;

        let prep = prepare_view(&set, cam);
        let bins = bin_tiles(&set, cam, &prep);
        let fb = render_prepared(&set, &meta, cam, &prep, &bins, RenderMode::Training);

        let (mut report, dl_dimage) =
            image_loss_weighted(ImageRef::from_framebuffer(&fb), gt, cfg.lambda_ssim)?;
        grads.zero();
        composite_backward_prepared(
            &fb,
            &dl_dimage,
            &set,
            meta.background,
            cam,
            &prep,
            &mut grads,
        )?;

        let impact = billboard_impact(&fb, set.count())?;
        if cfg.regularize_textures {
            let weights: Vec<f64> = impact
                .iter()
                .map(|&i| visibility_weight(i, cfg.sigma_impact))
                .collect();
            let (l_rgb, l_alpha) = texture_reg_loss(
                &set,
                &weights,
                &pattern,
                cfg.lambda_rgb,
                cfg.lambda_alpha,
                &mut grads.t_rgb,
                &mut grads.t_alpha,
            )?;
            report.l_rgb = l_rgb;
            report.l_alpha = l_alpha;
            report.texture_loss = cfg.lambda_rgb * l_rgb + cfg.lambda_alpha * l_alpha;
        }
        report.total = report.image_loss + report.texture_loss;
        if !report.total.is_finite() {
            return Err(Error::Train(format!(
                "loss diverged at step {step}: l1={} ssim={} texture={} count={}",
                report.l1,
                report.ssim,
                report.texture_loss,
                set.count()
            )));
        }

        let textures_frozen = step <= cfg.texture_freeze_steps;
        if finetune {
            states.sh.step(&mut set.sh, &grads.sh, cfg.lr_sh);
        } else {
            states
                .mu
                .step(&mut set.mu, &grads.mu, position_lr(step, cfg));
            states
                .log_scale
                .step(&mut set.log_scale, &grads.log_scale, cfg.lr_scale);
            states.rot.step(&mut set.rot, &grads.rot, cfg.lr_rot);
            states.sh.step(&mut set.sh, &grads.sh, cfg.lr_sh);
            if !textures_frozen {
                states.t_rgb.step(&mut set.t_rgb, &grads.t_rgb, cfg.lr_rgb);
                states
                    .t_alpha
                    .step(&mut set.t_alpha, &grads.t_alpha, cfg.lr_alpha);
            }
            for i in 0..set.count() {
                let q = set.rot_of(i).normalized();
                set.set_rot(i, q);
            }
        }

        if !finetune
            && step >= cfg.densify_start
            && step <= cfg.densify_end
            && step % cfg.densify_interval == 0
        {
            let dr = densify_step(&mut set, &meta, step, cfg, growth_base, &impact, &mut rng)?;
            if dr.relocated > 0 || dr.grown > 0 {
                states.resize(&set);
                grads.resize_to(&set);
                states.reset_slots(&set, &dr.touched);
                densify_reports.push((step, dr));
            }
        }

        if step % cfg.log_every == 0 || step == last_step {
            let row = MetricsRow {
                step,
                l1: report.l1,
                ssim_loss: 1.0 - report.ssim,
                texture_loss: report.texture_loss,
                psnr: held_out_psnr(&set, &meta, dataset),
                count: set.count(),
            };
            if let Some(sink) = log_sink.as_deref_mut() {
                writeln!(sink, "{}", row.to_csv()).map_err(Error::from_io)?;
                sink.flush().map_err(Error::from_io)?;
            }
            log.push(row);
        }
    }

    Ok(TrainOutput {
        set,
        meta,
        log,
        densify_reports,
    })
}
