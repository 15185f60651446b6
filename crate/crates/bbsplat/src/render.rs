//! Tiled forward renderer: front-to-back alpha compositing of billboard
//! texture samples with view-dependent base color, plus expected depth.
//!
//! Billboards are binned into 16x16-pixel tiles by their projected corner
//! bounding boxes and sorted per tile by view-space center depth (ties
//! broken by index). Tiles render independently and write disjoint
//! framebuffer regions, so the output is deterministic for any worker
//! count. Sorting by center depth can mis-order interpenetrating
//! billboards; that popping is accepted, as per-pixel exact ordering is out
//! of scope.

use crate::geometry::{
    intersect_scalars, plane_transform, project_corner_aabb, view_direction, CameraView, PixelRay,
    PlaneTransform,
};
use crate::math::{logistic, Vec3};
use crate::scene::{BillboardSet, SceneMeta};
use crate::sh;
use rayon::prelude::*;

/// Tile edge in pixels.
pub const TILE_SIZE: usize = 16;
/// Compositing stops once remaining transmittance drops below this.
pub const TRANSMITTANCE_EPS: f64 = 1e-4;
/// Hits with sampled alpha below this contribute too little to composite.
pub const ALPHA_SKIP: f64 = 1.0 / 255.0;
/// Per-pixel cap on recorded contributors; overflow composites forward-only.
pub const MAX_CONTRIBUTORS: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderMode {
    Inference,
    /// Additionally records per-pixel contributor lists for the backward
    /// pass.
    Training,
}

/// One recorded compositing contribution.
#[derive(Debug, Clone, Copy)]
pub struct Contributor {
    pub id: u32,
    pub u: f64,
    pub v: f64,
    /// Activated opacity sampled from the alpha map.
    pub alpha: f64,
    /// Composited (clamped) color of this hit.
    pub color: [f64; 3],
    /// Camera-space depth of the hit.
    pub depth: f64,
    /// Transmittance in front of this hit.
    pub transmittance: f64,
}

#[derive(Debug, Clone)]
pub struct FrameBuffer {
    pub width: usize,
    pub height: usize,
    /// Composited color, row-major.
    pub color: Vec<[f64; 3]>,
    /// Remaining transmittance after all contributors.
    pub transmittance: Vec<f64>,
    /// Alpha-weighted expected depth; 0 where nothing was hit.
    pub depth: Vec<f64>,
    /// Per-pixel front-to-back contributor lists (training mode only).
    pub contributors: Option<Vec<Vec<Contributor>>>,
    /// Number of contributions dropped by the per-pixel cap.
    pub overflowed: u64,
}

impl FrameBuffer {
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        self.color[y * self.width + x]
    }
}

/// Tile decomposition with per-tile depth-sorted billboard lists.
pub struct TileBins {
    pub tiles_x: usize,
    pub tiles_y: usize,
    /// Billboard ids per tile, sorted front to back.
    pub bins: Vec<Vec<u32>>,
}

/// Per-view, per-billboard data shared by the forward and backward passes.
pub struct ViewPrep {
    pub planes: Vec<PlaneTransform>,
    /// Unit view direction toward each billboard center.
    pub dirs: Vec<Vec3>,
    /// Base color per billboard: 0.5 + SH(d), before offsets and clamping.
    pub base_color: Vec<[f64; 3]>,
    /// View-space center depth used as the sort key.
    pub center_depth: Vec<f64>,
}

pub fn prepare_view(set: &BillboardSet, cam: &CameraView) -> ViewPrep {
    let n = set.count();
    let mut planes = Vec::with_capacity(n);
    let mut dirs = Vec::with_capacity(n);
    let mut base_color = Vec::with_capacity(n);
    let mut center_depth = Vec::with_capacity(n);
    for i in 0..n {
        let mu = set.mu_of(i);
        planes.push(plane_transform(mu, set.log_scale_of(i), set.rot_of(i)));
        let d = view_direction(cam, mu).unwrap_or(Vec3 {
            x: 0.0,
            y: 0.0,
            z: 1.0,
        });
        dirs.push(d);
        base_color.push(sh::base_color(set.sh_of(i), d));
        center_depth.push(cam.depth_of(mu));
    }
    ViewPrep {
        planes,
        dirs,
        base_color,
        center_depth,
    }
}

pub fn bin_tiles(set: &BillboardSet, cam: &CameraView, prep: &ViewPrep) -> TileBins {
    let tiles_x = cam.width.div_ceil(TILE_SIZE);
    let tiles_y = cam.height.div_ceil(TILE_SIZE);
    let mut bins = vec![Vec::new(); tiles_x * tiles_y];
    for i in 0..set.count() {
        if !set.active[i] {
            continue;
        }
        let Some(rect) = project_corner_aabb(cam, &prep.planes[i]) else {
            continue;
        };
        let tx0 = rect.x0 / TILE_SIZE;
        let tx1 = rect.x1 / TILE_SIZE;
        let ty0 = rect.y0 / TILE_SIZE;
        let ty1 = rect.y1 / TILE_SIZE;
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                bins[ty * tiles_x + tx].push(i as u32);
            }
        }
    }
    for bin in &mut bins {
        bin.sort_by(|&a, &b| {
            let da = prep.center_depth[a as usize];
            let db = prep.center_depth[b as usize];
            da.partial_cmp(&db).unwrap().then(a.cmp(&b))
        });
    }
    TileBins {
        tiles_x,
        tiles_y,
        bins,
    }
}

/// Bilinear texture sample at chart coordinates `|u|, |v| <= 1`.
///
/// The continuous texel coordinate is `((u + 1) / 2) * (side - 1)` per axis
/// and reads are clamped to the texture border. `CH` is the channel count;
/// `tex` is row-major with channel fastest.
pub fn sample_bilinear<const CH: usize>(tex: &[f64], side: usize, u: f64, v: f64) -> [f64; CH] {
    let (x0, y0, x1, y1, fx, fy) = bilinear_setup(side, u, v);
    let mut out = [0.0; CH];
    let w00 = (1.0 - fx) * (1.0 - fy);
    let w10 = fx * (1.0 - fy);
    let w01 = (1.0 - fx) * fy;
    let w11 = fx * fy;
    for (c, o) in out.iter_mut().enumerate() {
        *o = w00 * tex[(y0 * side + x0) * CH + c]
            + w10 * tex[(y0 * side + x1) * CH + c]
            + w01 * tex[(y1 * side + x0) * CH + c]
            + w11 * tex[(y1 * side + x1) * CH + c];
    }
    out
}

/// Shared coordinate mapping for the forward sample and the gradient
/// redistribution: integer corners (border-clamped) and fractional offsets.
pub(crate) fn bilinear_setup(
    side: usize,
    u: f64,
    v: f64,
) -> (usize, usize, usize, usize, f64, f64) {
    let max = (side - 1) as f64;
    let x = ((u + 1.0) / 2.0 * max).clamp(0.0, max);
    let y = ((v + 1.0) / 2.0 * max).clamp(0.0, max);
    let x0 = x.floor().min(max - 1.0).max(0.0);
    let y0 = y.floor().min(max - 1.0).max(0.0);
    let fx = x - x0;
    let fy = y - y0;
    (
        x0 as usize,
        y0 as usize,
        x0 as usize + 1,
        y0 as usize + 1,
        fx,
        fy,
    )
}

/// View-dependent color of one hit: sampled RGB offset plus the SH base
/// color, clamped to be non-negative.
pub fn eval_color(base: [f64; 3], t_rgb_sample: [f64; 3]) -> [f64; 3] {
    [
        (base[0] + t_rgb_sample[0]).max(0.0),
        (base[1] + t_rgb_sample[1]).max(0.0),
        (base[2] + t_rgb_sample[2]).max(0.0),
    ]
}

/// Convenience wrapper evaluating the SH part directly.
pub fn eval_color_sh(coeffs: &[f64], dir: Vec3, t_rgb_sample: [f64; 3]) -> [f64; 3] {
    eval_color(sh::base_color(coeffs, dir), t_rgb_sample)
}

struct PixelOut {
    color: [f64; 3],
    transmittance: f64,
    depth: f64,
    contributors: Option<Vec<Contributor>>,
    overflowed: u64,
}

fn composite_pixel(
    set: &BillboardSet,
    prep: &ViewPrep,
    cam: &CameraView,
    candidates: &[u32],
    ndc: (f64, f64),
    background: [f64; 3],
    record: bool,
) -> PixelOut {
    let ray = PixelRay::new(cam, ndc);
    let side = set.texture_side();
    let mut color = [0.0; 3];
    let mut transmittance = 1.0;
    let mut depth_acc = 0.0;
    let mut weight_acc = 0.0;
    let mut contributors = if record { Some(Vec::new()) } else { None };
    let mut overflowed = 0;
    for &id in candidates {
        let i = id as usize;
        let Some(s) = intersect_scalars(&ray, &prep.planes[i]) else {
            continue;
        };
        if s.u.abs() > 1.0 || s.v.abs() > 1.0 {
            continue;
        }
        let depth = cam.depth_of(prep.planes[i].point(s.u, s.v));
        if depth <= 0.0 {
            continue;
        }
        let logit_sample = sample_bilinear::<1>(set.t_alpha_of(i), side, s.u, s.v)[0];
        let alpha = logistic(logit_sample);
        if alpha < ALPHA_SKIP {
            continue;
        }
        let rgb = sample_bilinear::<3>(set.t_rgb_of(i), side, s.u, s.v);
        let c = eval_color(prep.base_color[i], rgb);
        let w = alpha * transmittance;
        for ch in 0..3 {
            color[ch] += c[ch] * w;
        }
        depth_acc += depth * w;
        weight_acc += w;
        if let Some(list) = contributors.as_mut() {
            if list.len() < MAX_CONTRIBUTORS {
                list.push(Contributor {
                    id,
                    u: s.u,
                    v: s.v,
                    alpha,
                    color: c,
                    depth,
                    transmittance,
                });
            } else {
                overflowed += 1;
            }
        }
        transmittance *= 1.0 - alpha;
        if transmittance < TRANSMITTANCE_EPS {
            break;
        }
    }
    for ch in 0..3 {
        color[ch] += transmittance * background[ch];
    }
    PixelOut {
        color,
        transmittance,
        depth: if weight_acc > 0.0 {
            depth_acc / weight_acc
        } else {
            0.0
        },
        contributors,
        overflowed,
    }
}

/// Render a view. Training mode records per-pixel contributor lists for the
/// backward pass.
pub fn render(
    set: &BillboardSet,
    meta: &SceneMeta,
    cam: &CameraView,
    mode: RenderMode,
) -> FrameBuffer {
    let prep = prepare_view(set, cam);
    let bins = bin_tiles(set, cam, &prep);
    render_prepared(set, meta, cam, &prep, &bins, mode)
}

pub fn render_prepared(
    set: &BillboardSet,
    meta: &SceneMeta,
    cam: &CameraView,
    prep: &ViewPrep,
    bins: &TileBins,
    mode: RenderMode,
) -> FrameBuffer {
    let record = mode == RenderMode::Training;
    let (w, h) = (cam.width, cam.height);
    let n_tiles = bins.tiles_x * bins.tiles_y;

    struct TileOut {
        index: usize,
        pixels: Vec<PixelOut>,
    }

    let mut tile_results: Vec<TileOut> = (0..n_tiles)
        .into_par_iter()
        .map(|t| {
            let tx = t % bins.tiles_x;
            let ty = t / bins.tiles_x;
            let x0 = tx * TILE_SIZE;
            let y0 = ty * TILE_SIZE;
            let x1 = (x0 + TILE_SIZE).min(w);
            let y1 = (y0 + TILE_SIZE).min(h);
            let mut pixels = Vec::with_capacity((x1 - x0) * (y1 - y0));
            for py in y0..y1 {
                for px in x0..x1 {
                    pixels.push(composite_pixel(
                        set,
                        prep,
                        cam,
                        &bins.bins[t],
                        cam.pixel_to_ndc(px, py),
                        meta.background,
                        record,
                    ));
                }
            }
            TileOut { index: t, pixels }
        })
        .collect();
    tile_results.sort_by_key(|r| r.index);

    let mut fb = FrameBuffer {
        width: w,
        height: h,
        color: vec![[0.0; 3]; w * h],
        transmittance: vec![1.0; w * h],
        depth: vec![0.0; w * h],
        contributors: if record {
            Some(vec![Vec::new(); w * h])
        } else {
            None
        },
        overflowed: 0,
    };
    for tile in tile_results {
        let tx = tile.index % bins.tiles_x;
        let ty = tile.index / bins.tiles_x;
        let x0 = tx * TILE_SIZE;
        let y0 = ty * TILE_SIZE;
        let x1 = (x0 + TILE_SIZE).min(w);
        let mut it = tile.pixels.into_iter();
        for py in y0..((y0 + TILE_SIZE).min(h)) {
            for px in x0..x1 {
                let out = it.next().unwrap();
                let idx = py * w + px;
                fb.color[idx] = out.color;
                fb.transmittance[idx] = out.transmittance;
                fb.depth[idx] = out.depth;
                fb.overflowed += out.overflowed;
                if let (Some(dst), Some(src)) = (fb.contributors.as_mut(), out.contributors) {
                    dst[idx] = src;
                }
            }
        }
    }
    fb
}

/// Expected-depth channel of an inference render.
pub fn render_depth(set: &BillboardSet, meta: &SceneMeta, cam: &CameraView) -> Vec<f64> {
    render(set, meta, cam, RenderMode::Inference).depth
}

/// Reference renderer used for validation: no tiles, no bounding boxes, one
/// global front-to-back sort, every billboard tested at every pixel.
pub fn render_reference(set: &BillboardSet, meta: &SceneMeta, cam: &CameraView) -> FrameBuffer {
    let prep = prepare_view(set, cam);
    let mut order: Vec<u32> = (0..set.count() as u32)
        .filter(|&i| set.active[i as usize])
        .collect();
    order.sort_by(|&a, &b| {
        let da = prep.center_depth[a as usize];
        let db = prep.center_depth[b as usize];
        da.partial_cmp(&db).unwrap().then(a.cmp(&b))
    });
    let (w, h) = (cam.width, cam.height);
    let mut fb = FrameBuffer {
        width: w,
        height: h,
        color: vec![[0.0; 3]; w * h],
        transmittance: vec![1.0; w * h],
        depth: vec![0.0; w * h],
        contributors: None,
        overflowed: 0,
    };
    for py in 0..h {
        for px in 0..w {
            let out = composite_pixel(
                set,
                &prep,
                cam,
                &order,
                cam.pixel_to_ndc(px, py),
                meta.background,
                false,
            );
            let idx = py * w + px;
            fb.color[idx] = out.color;
            fb.transmittance[idx] = out.transmittance;
            fb.depth[idx] = out.depth;
        }
    }
    fb
}
