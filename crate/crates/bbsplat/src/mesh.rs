//! Depth-map fusion into a truncated signed-distance volume, marching-cubes
//! surface extraction, and Chamfer-distance evaluation.

use crate::geometry::CameraView;
use crate::math::{vec3, Vec3};
use crate::mc_tables::{EDGE_CORNERS, EDGE_TABLE, TRIANGLE_TABLE};
use crate::spatial::PointGrid;
use crate::{Error, Result};
use rayon::prelude::*;

/// Truncation band in voxels.
pub const TRUNCATION_VOXELS: f64 = 4.0;

/// Uniform voxel grid of truncated signed distances (normalized to
/// `[-1, 1]` by the truncation band) and accumulation weights.
#[derive(Debug, Clone)]
pub struct TsdfVolume {
    pub origin: Vec3,
    pub voxel_size: f64,
    pub dims: [usize; 3],
    pub tsdf: Vec<f64>,
    pub weights: Vec<f64>,
}

impl TsdfVolume {
    pub fn new(origin: Vec3, voxel_size: f64, dims: [usize; 3]) -> Result<TsdfVolume> {
        if voxel_size <= 0.0 {
            return Err(Error::Mesh("voxel size must be positive".into()));
        }
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::Mesh(
                "volume needs at least 2 voxels per axis".into(),
            ));
        }
        let n = dims[0] * dims[1] * dims[2];
        Ok(TsdfVolume {
            origin,
            voxel_size,
            dims,
            tsdf: vec![1.0; n],
            weights: vec![0.0; n],
        })
    }

    /// Grid that covers an axis-aligned box with `margin` voxels of border.
    pub fn covering(lo: Vec3, hi: Vec3, voxel_size: f64, margin: usize) -> Result<TsdfVolume> {
        let m = margin as f64 * voxel_size;
        let origin = vec3(lo.x - m, lo.y - m, lo.z - m);
        let size = hi - origin + vec3(m, m, m);
        let dims = [
            (size.x / voxel_size).ceil() as usize + 1,
            (size.y / voxel_size).ceil() as usize + 1,
            (size.z / voxel_size).ceil() as usize + 1,
        ];
        TsdfVolume::new(origin, voxel_size, dims)
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> Vec3 {
        self.origin
            + vec3(
                x as f64 * self.voxel_size,
                y as f64 * self.voxel_size,
                z as f64 * self.voxel_size,
            )
    }

    pub fn truncation(&self) -> f64 {
        TRUNCATION_VOXELS * self.voxel_size
    }
}

/// Fuse one rendered depth map into the volume.
///
/// Each voxel projects into the view; the signed distance between the
/// sampled depth and the voxel's camera depth is truncated to the band and
/// folded into the running weighted average (weight 1 per view). Pixels
/// with depth 0 mark empty rays and are skipped.
pub fn tsdf_integrate(vol: &mut TsdfVolume, depth: &[f64], cam: &CameraView) -> Result<()> {
    if depth.len() != cam.width * cam.height {
        return Err(Error::Shape(format!(
            "depth map has {} pixels, camera expects {}",
            depth.len(),
            cam.width * cam.height
        )));
    }
    let tau = vol.truncation();
    let (dx, dy) = (vol.dims[0], vol.dims[1]);
    let slab: usize = dx * dy;
    let updates: Vec<Vec<(usize, f64)>> = (0..vol.dims[2])
        .into_par_iter()
        .map(|z| {
            let mut list = Vec::new();
            for y in 0..dy {
                for x in 0..dx {
                    let p = vol.origin
                        + vec3(
                            x as f64 * vol.voxel_size,
                            y as f64 * vol.voxel_size,
                            z as f64 * vol.voxel_size,
                        );
                    let voxel_depth = cam.depth_of(p);
                    if voxel_depth <= 0.0 {
                        continue;
                    }
                    let Some((nx, ny)) = cam.project(p) else {
                        continue;
                    };
                    let px = ((nx + 1.0) * 0.5 * cam.width as f64).floor();
                    let py = ((ny + 1.0) * 0.5 * cam.height as f64).floor();
                    if px < 0.0 || py < 0.0 || px >= cam.width as f64 || py >= cam.height as f64 {
                        continue;
                    }
                    let d = depth[py as usize * cam.width + px as usize];
                    if d <= 0.0 {
                        continue;
                    }
                    let sdf = d - voxel_depth;
                    if sdf < -tau {
                        // Far behind the observed surface: unseen space.
                        continue;
                    }
                    list.push((y * dx + x, (sdf / tau).min(1.0)));
                }
            }
            list
        })
        .collect();
    for (z, list) in updates.into_iter().enumerate() {
        for (xy, value) in list {
            let idx = z * slab + xy;
            let w = vol.weights[idx];
            vol.tsdf[idx] = (vol.tsdf[idx] * w + value) / (w + 1.0);
            vol.weights[idx] = w + 1.0;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
}

/// Marching cubes over the zero level set with linear edge interpolation.
/// Cubes touching any zero-weight voxel are skipped. An all-positive (or
/// all-negative) volume yields an empty mesh.
pub fn extract_mesh(vol: &TsdfVolume) -> TriangleMesh {
    let mut mesh = TriangleMesh::default();
    let [nx, ny, nz] = vol.dims;
    for z in 0..nz - 1 {
        for y in 0..ny - 1 {
            for x in 0..nx - 1 {
                let corner_idx = |k: usize| match k {
                    0 => vol.index(x, y, z),
                    1 => vol.index(x + 1, y, z),
                    2 => vol.index(x + 1, y + 1, z),
                    3 => vol.index(x, y + 1, z),
                    4 => vol.index(x, y, z + 1),
                    5 => vol.index(x + 1, y, z + 1),
                    6 => vol.index(x + 1, y + 1, z + 1),
                    _ => vol.index(x, y + 1, z + 1),
                };
                let mut values = [0.0; 8];
                let mut case = 0usize;
                let mut seen = true;
                for k in 0..8 {
                    let idx = corner_idx(k);
                    if vol.weights[idx] == 0.0 {
                        seen = false;
                        break;
                    }
                    values[k] = vol.tsdf[idx];
                    if values[k] < 0.0 {
                        case |= 1 << k;
                    }
                }
                if !seen || case == 0 || case == 255 {
                    continue;
                }
                let corner_pos = |k: usize| match k {
                    0 => vol.voxel_center(x, y, z),
                    1 => vol.voxel_center(x + 1, y, z),
                    2 => vol.voxel_center(x + 1, y + 1, z),
                    3 => vol.voxel_center(x, y + 1, z),
                    4 => vol.voxel_center(x, y, z + 1),
                    5 => vol.voxel_center(x + 1, y, z + 1),
                    6 => vol.voxel_center(x + 1, y + 1, z + 1),
                    _ => vol.voxel_center(x, y + 1, z + 1),
                };
                let crossings = EDGE_TABLE[case];
                let mut edge_vertex = [u32::MAX; 12];
                for (e, corners) in EDGE_CORNERS.iter().enumerate() {
                    if crossings & (1 << e) == 0 {
                        continue;
                    }
                    let (va, vb) = (values[corners[0]], values[corners[1]]);
                    let t = if (vb - va).abs() < 1e-12 {
                        0.5
                    } else {
                        (-va / (vb - va)).clamp(0.0, 1.0)
                    };
                    let pa = corner_pos(corners[0]);
                    let pb = corner_pos(corners[1]);
                    edge_vertex[e] = mesh.vertices.len() as u32;
                    mesh.vertices.push(pa + (pb - pa) * t);
                }
                let tri = &TRIANGLE_TABLE[case];
                let mut i = 0;
                while tri[i] >= 0 {
                    mesh.faces.push([
                        edge_vertex[tri[i] as usize],
                        edge_vertex[tri[i + 1] as usize],
                        edge_vertex[tri[i + 2] as usize],
                    ]);
                    i += 3;
                }
            }
        }
    }
    mesh
}

/// Symmetric Chamfer distance between two point samples: the mean of the
/// two directed mean nearest-neighbor distances, accelerated by a uniform
/// grid.
pub fn chamfer_distance(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Mesh(
            "Chamfer distance needs non-empty point sets".into(),
        ));
    }
    let directed = |from: &[Vec3], to: &[Vec3]| -> f64 {
        let grid = PointGrid::build(to);
        let total: f64 = from
            .par_iter()
            .map(|p| grid.nearest_excluding(*p, u32::MAX))
            .sum();
        total / from.len() as f64
    };
    Ok(0.5 * (directed(a, b) + directed(b, a)))
}

/// Write a triangle mesh as OBJ or binary PLY, chosen by extension.
pub fn save_mesh(path: &std::path::Path, mesh: &TriangleMesh) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("obj") => {
            let mut out = String::new();
            for v in &mesh.vertices {
                out.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
            }
            for f in &mesh.faces {
                out.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
            }
            std::fs::write(path, out).map_err(|e| Error::io(path, e))
        }
        _ => crate::io::save_ply_mesh(path, &mesh.vertices, &mesh.faces),
    }
}
