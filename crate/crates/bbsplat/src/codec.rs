//! Scene container: texture quantization, pattern-residual sparsification,
//! per-stream DEFLATE compression, and textured-mesh export.
//!
//! Layout of a `.bbz` / `.bbu` file:
//!
//! ```text
//! magic  "BBSPLAT\x01"                        8 bytes
//! manifest length                             u32 little-endian
//! manifest                                    JSON
//! stream blobs                                at manifest offsets,
//!                                             relative to the end of the
//!                                             manifest
//! ```
//!
//! Geometry (centers, log-scales, rotations, harmonics) is stored as
//! little-endian `f32` streams. In the quantized codec, RGB offsets and the
//! alpha-pattern residual are stored as one byte per texel with a single
//! per-stream scale; code 128 is exactly zero, so texels driven to zero by
//! the sparsity regularizer stay zero for the dictionary coder. Every
//! stream is DEFLATE-compressed (stored blocks for the raw codec) and
//! carries a CRC of its raw bytes.

use crate::math::{logistic, logit, round_half_away};
use crate::scene::{gaussian_pattern_texture, BillboardSet, SceneMeta};
use crate::sh::SH_TOTAL;
use crate::{Error, Result};
use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"BBSPLAT\x01";
pub const FORMAT_VERSION: u32 = 1;

/// Codec of the texture streams inside a container.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContainerCodec {
    /// 8-bit quantized textures behind DEFLATE.
    QuantizedDeflate,
    /// Full-precision `f32` textures in stored (uncompressed) blocks.
    RawFloat,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StreamEntry {
    pub name: String,
    /// Offset from the end of the manifest.
    pub offset: u64,
    pub compressed_len: u64,
    pub raw_len: u64,
    /// CRC32 of the raw (decompressed) bytes.
    pub crc32: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContainerManifest {
    pub version: u32,
    pub codec: ContainerCodec,
    pub count: usize,
    pub texture_side: usize,
    pub sh_degree: usize,
    pub background: [f64; 3],
    pub sphere_center: [f64; 3],
    pub sphere_radius: f64,
    /// Quantization scale of the RGB stream (max absolute value).
    pub m_rgb: f64,
    /// Quantization scale of the alpha-residual stream.
    pub m_alpha: f64,
    pub streams: Vec<StreamEntry>,
}

/// Per-stream sizes of a written container.
#[derive(Debug, Clone, Default)]
pub struct SizeReport {
    pub entries: Vec<(String, u64, u64)>,
    pub file_len: u64,
}

impl SizeReport {
    pub fn raw_total(&self) -> u64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    pub fn compressed_total(&self) -> u64 {
        self.entries.iter().map(|e| e.2).sum()
    }

    pub fn stream(&self, name: &str) -> Option<(u64, u64)> {
        self.entries
            .iter()
            .find(|e| e.0 == name)
            .map(|e| (e.1, e.2))
    }
}

/// Symmetric 8-bit quantization with an exact zero at code 128.
///
/// Values are clamped to `[-m, m]` and mapped to codes `1..=255` by
/// `128 + round(127 v / m)` with half-away-from-zero rounding; code 128
/// decodes to exactly 0.0 and the round-trip error is at most `m / 254`.
pub fn quantize(values: &[f64], m: f64) -> Result<Vec<u8>> {
    if m <= 0.0 {
        return Err(Error::Container(format!(
            "quantization scale must be positive, got {m}"
        )));
    }
    Ok(values
        .iter()
        .map(|&v| {
            let c = v.clamp(-m, m) / m;
            (128.0 + round_half_away(127.0 * c)) as u8
        })
        .collect())
}

/// Inverse of [`quantize`].
pub fn dequantize(bytes: &[u8], m: f64) -> Vec<f64> {
    bytes
        .iter()
        .map(|&b| (b as f64 - 128.0) / 127.0 * m)
        .collect()
}

/// Alpha residual: activated opacity minus the canonical pattern. The
/// decode side adds the pattern back.
pub fn alpha_residual(opacity: &[f64], pattern: &[f64]) -> Result<Vec<f64>> {
    if !opacity.len().is_multiple_of(pattern.len()) {
        return Err(Error::Shape(format!(
            "opacity length {} is not a multiple of the pattern length {}",
            opacity.len(),
            pattern.len()
        )));
    }
    Ok(opacity
        .iter()
        .enumerate()
        .map(|(k, &t)| t - pattern[k % pattern.len()])
        .collect())
}

fn f64s_to_f32_bytes(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

fn f32_bytes_to_f64s(bytes: &[u8]) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::Container(
            "float stream length not a multiple of 4".into(),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn deflate(data: &[u8], level: Compression) -> Result<Vec<u8>> {
    let mut enc = DeflateEncoder::new(Vec::new(), level);
    enc.write_all(data).map_err(Error::from_io)?;
    enc.finish().map_err(Error::from_io)
}

fn inflate(data: &[u8], expected_len: u64) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(expected_len as usize);
    DeflateDecoder::new(data)
        .read_to_end(&mut out)
        .map_err(|e| Error::Container(format!("stream decompression failed: {e}")))?;
    Ok(out)
}

fn write_container(
    path: &Path,
    mut manifest: ContainerManifest,
    streams: Vec<(&'static str, Vec<u8>)>,
    level: Compression,
) -> Result<SizeReport> {
    let mut blobs = Vec::with_capacity(streams.len());
    let mut offset = 0u64;
    let mut report = SizeReport::default();
    for (name, raw) in streams {
        let crc = crc32fast::hash(&raw);
        let compressed = deflate(&raw, level)?;
        manifest.streams.push(StreamEntry {
            name: name.to_string(),
            offset,
            compressed_len: compressed.len() as u64,
            raw_len: raw.len() as u64,
            crc32: crc,
        });
        offset += compressed.len() as u64;
        report
            .entries
            .push((name.to_string(), raw.len() as u64, compressed.len() as u64));
        blobs.push(compressed);
    }
    let manifest_json = serde_json::to_vec(&manifest)
        .map_err(|e| Error::Container(format!("manifest serialization failed: {e}")))?;
    let mut file = Vec::with_capacity(12 + manifest_json.len() + offset as usize);
    file.extend_from_slice(MAGIC);
    file.extend_from_slice(&(manifest_json.len() as u32).to_le_bytes());
    file.extend_from_slice(&manifest_json);
    for blob in blobs {
        file.extend_from_slice(&blob);
    }
    report.file_len = file.len() as u64;
    std::fs::write(path, &file).map_err(|e| Error::io(path, e))?;
    Ok(report)
}

fn geometry_streams(set: &BillboardSet) -> Vec<(&'static str, Vec<u8>)> {
    vec![
        ("mu", f64s_to_f32_bytes(&set.mu)),
        ("log_scale", f64s_to_f32_bytes(&set.log_scale)),
        ("rot", f64s_to_f32_bytes(&set.rot)),
        ("sh", f64s_to_f32_bytes(&set.sh)),
    ]
}

fn base_manifest(set: &BillboardSet, meta: &SceneMeta, codec: ContainerCodec) -> ContainerManifest {
    ContainerManifest {
        version: FORMAT_VERSION,
        codec,
        count: set.count(),
        texture_side: set.texture_side(),
        sh_degree: meta.sh_degree,
        background: meta.background,
        sphere_center: meta.sphere_center.to_array(),
        sphere_radius: meta.sphere_radius,
        m_rgb: 0.0,
        m_alpha: 0.0,
        streams: Vec::new(),
    }
}

fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0_f64, |a, &v| a.max(v.abs()))
}

/// Write the quantized container. Returns the per-stream size report.
pub fn encode_container(set: &BillboardSet, meta: &SceneMeta, path: &Path) -> Result<SizeReport> {
    let pattern = gaussian_pattern_texture(set.texture_side());
    let opacity: Vec<f64> = set.t_alpha.iter().map(|&l| logistic(l)).collect();
    let residual = alpha_residual(&opacity, &pattern)?;
    // A scale of zero means the stream is identically zero; any positive
    // scale then maps every value to the zero code.
    let m_rgb = match max_abs(&set.t_rgb) {
        m if m > 0.0 => m,
        _ => 1.0,
    };
    let m_alpha = match max_abs(&residual) {
        m if m > 0.0 => m,
        _ => 1.0,
    };
    let mut manifest = base_manifest(set, meta, ContainerCodec::QuantizedDeflate);
    manifest.m_rgb = m_rgb;
    manifest.m_alpha = m_alpha;
    let mut streams = geometry_streams(set);
    streams.push(("t_rgb_q", quantize(&set.t_rgb, m_rgb)?));
    streams.push(("t_alpha_q", quantize(&residual, m_alpha)?));
    write_container(path, manifest, streams, Compression::default())
}

/// Write the full-precision container (no quantization, stored blocks).
pub fn encode_container_raw(
    set: &BillboardSet,
    meta: &SceneMeta,
    path: &Path,
) -> Result<SizeReport> {
    let manifest = base_manifest(set, meta, ContainerCodec::RawFloat);
    let mut streams = geometry_streams(set);
    streams.push(("t_rgb", f64s_to_f32_bytes(&set.t_rgb)));
    streams.push(("t_alpha", f64s_to_f32_bytes(&set.t_alpha)));
    write_container(path, manifest, streams, Compression::none())
}

/// Parse a container header and give back the manifest plus the byte offset
/// where streams begin.
pub fn read_manifest(bytes: &[u8], path: &Path) -> Result<(ContainerManifest, usize)> {
    if bytes.len() < 12 || &bytes[0..8] != MAGIC {
        return Err(Error::Container(format!(
            "{}: not a billboard scene container",
            path.display()
        )));
    }
    let len = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
    if bytes.len() < 12 + len {
        return Err(Error::Container(format!(
            "{}: truncated manifest",
            path.display()
        )));
    }
    let manifest: ContainerManifest = serde_json::from_slice(&bytes[12..12 + len])
        .map_err(|e| Error::Container(format!("{}: bad manifest: {e}", path.display())))?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::Container(format!(
            "{}: unsupported container version {}",
            path.display(),
            manifest.version
        )));
    }
    Ok((manifest, 12 + len))
}

fn read_stream(
    bytes: &[u8],
    base: usize,
    manifest: &ContainerManifest,
    name: &str,
    path: &Path,
) -> Result<Vec<u8>> {
    let entry = manifest
        .streams
        .iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::Container(format!("{}: missing stream '{name}'", path.display())))?;
    let start = base + entry.offset as usize;
    let end = start + entry.compressed_len as usize;
    if end > bytes.len() {
        return Err(Error::Container(format!(
            "{}: truncated file while reading stream '{name}'",
            path.display()
        )));
    }
    let raw = inflate(&bytes[start..end], entry.raw_len)?;
    if raw.len() as u64 != entry.raw_len {
        return Err(Error::Container(format!(
            "{}: stream '{name}' has {} bytes, manifest says {}",
            path.display(),
            raw.len(),
            entry.raw_len
        )));
    }
    if crc32fast::hash(&raw) != entry.crc32 {
        return Err(Error::Container(format!(
            "{}: checksum mismatch in stream '{name}'",
            path.display()
        )));
    }
    Ok(raw)
}

/// Load a container written by either encoder.
pub fn decode_container(path: &Path) -> Result<(BillboardSet, SceneMeta)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (manifest, base) = read_manifest(&bytes, path)?;
    let side = manifest.texture_side;
    let count = manifest.count;
    let mut set = BillboardSet::with_capacity(count, side.max(2));
    if count > 0 {
        let expect = |name: &str, want: usize, got: usize| -> Result<()> {
            if want != got {
                return Err(Error::Container(format!(
                    "{}: stream '{name}' has {got} values, expected {want}",
                    path.display()
                )));
            }
            Ok(())
        };
        let mu = f32_bytes_to_f64s(&read_stream(&bytes, base, &manifest, "mu", path)?)?;
        expect("mu", 3 * count, mu.len())?;
        set.mu = mu;
        let ls = f32_bytes_to_f64s(&read_stream(&bytes, base, &manifest, "log_scale", path)?)?;
        expect("log_scale", 2 * count, ls.len())?;
        set.log_scale = ls;
        let rot = f32_bytes_to_f64s(&read_stream(&bytes, base, &manifest, "rot", path)?)?;
        expect("rot", 4 * count, rot.len())?;
        set.rot = rot;
        let sh = f32_bytes_to_f64s(&read_stream(&bytes, base, &manifest, "sh", path)?)?;
        expect("sh", SH_TOTAL * count, sh.len())?;
        set.sh = sh;

        let texels = side * side;
        match manifest.codec {
            ContainerCodec::QuantizedDeflate => {
                let rgb_q = read_stream(&bytes, base, &manifest, "t_rgb_q", path)?;
                expect("t_rgb_q", texels * 3 * count, rgb_q.len())?;
                set.t_rgb = dequantize(&rgb_q, manifest.m_rgb);
                let alpha_q = read_stream(&bytes, base, &manifest, "t_alpha_q", path)?;
                expect("t_alpha_q", texels * count, alpha_q.len())?;
                let residual = dequantize(&alpha_q, manifest.m_alpha);
                let pattern = gaussian_pattern_texture(side);
                set.t_alpha = residual
                    .iter()
                    .enumerate()
                    .map(|(k, &r)| logit((r + pattern[k % pattern.len()]).clamp(1e-6, 1.0 - 1e-6)))
                    .collect();
            }
            ContainerCodec::RawFloat => {
                let rgb = f32_bytes_to_f64s(&read_stream(&bytes, base, &manifest, "t_rgb", path)?)?;
                expect("t_rgb", texels * 3 * count, rgb.len())?;
                set.t_rgb = rgb;
                let alpha =
                    f32_bytes_to_f64s(&read_stream(&bytes, base, &manifest, "t_alpha", path)?)?;
                expect("t_alpha", texels * count, alpha.len())?;
                set.t_alpha = alpha;
            }
        }
    }
    let meta = SceneMeta {
        sh_degree: manifest.sh_degree,
        sphere_center: crate::math::Vec3::from_array(manifest.sphere_center),
        sphere_radius: manifest.sphere_radius,
        background: manifest.background,
    };
    Ok((set, meta))
}

/// Round a set's parameters through the container float/quantization
/// representation without touching disk: what a decode of an encode would
/// hold. Used to keep in-memory state consistent with a written scene.
pub fn container_precision(set: &BillboardSet) -> BillboardSet {
    let mut out = set.clone();
    let to_f32 = |v: &mut Vec<f64>| {
        for x in v.iter_mut() {
            *x = *x as f32 as f64;
        }
    };
    to_f32(&mut out.mu);
    to_f32(&mut out.log_scale);
    to_f32(&mut out.rot);
    to_f32(&mut out.sh);
    to_f32(&mut out.t_rgb);
    to_f32(&mut out.t_alpha);
    out
}

/// Export the scene as a textured two-triangles-per-billboard mesh.
///
/// Writes `<prefix>.obj`, `<prefix>.mtl`, `<prefix>_color.png` (atlas of
/// RGB offsets plus the view-independent harmonic color), and
/// `<prefix>_alpha.png` (activated alpha maps). View-dependent shading
/// beyond the constant term is baked out. Tiles pack into a near-square
/// grid; unused tiles stay transparent.
pub fn export_obj_atlas(set: &BillboardSet, prefix: &Path) -> Result<()> {
    if set.count() == 0 {
        return Err(Error::Scene("cannot export an empty scene".into()));
    }
    let n = set.count();
    let side = set.texture_side();
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let (aw, ah) = (cols * side, rows * side);
    let mut color = vec![[0.0_f64; 3]; aw * ah];
    let mut alpha = vec![0.0_f64; aw * ah];
    for i in 0..n {
        let (tx, ty) = (i % cols, i / cols);
        let sh = set.sh_of(i);
        let dc = [
            crate::sh::color_from_dc(sh[0]),
            crate::sh::color_from_dc(sh[1]),
            crate::sh::color_from_dc(sh[2]),
        ];
        let rgb = set.t_rgb_of(i);
        let a = set.t_alpha_of(i);
        for y in 0..side {
            for x in 0..side {
                let dst = (ty * side + y) * aw + tx * side + x;
                for c in 0..3 {
                    color[dst][c] = (dc[c] + rgb[(y * side + x) * 3 + c]).clamp(0.0, 1.0);
                }
                alpha[dst] = logistic(a[y * side + x]);
            }
        }
    }
    let with_suffix = |suffix: &str| {
        let mut s = prefix.as_os_str().to_owned();
        s.push(suffix);
        std::path::PathBuf::from(s)
    };
    let color_path = with_suffix("_color.png");
    let alpha_path = with_suffix("_alpha.png");
    let mtl_path = with_suffix(".mtl");
    let obj_path = with_suffix(".obj");
    crate::io::write_png_rgb(&color_path, aw, ah, &color)?;
    crate::io::write_png_gray(&alpha_path, aw, ah, &alpha)?;

    let file_name = |p: &Path| {
        p.file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    };
    let mut mtl = String::new();
    mtl.push_str("newmtl billboards\n");
    mtl.push_str("Ka 0 0 0\nKd 1 1 1\nKs 0 0 0\nd 1\nillum 1\n");
    mtl.push_str(&format!("map_Kd {}\n", file_name(&color_path)));
    mtl.push_str(&format!("map_d {}\n", file_name(&alpha_path)));
    std::fs::write(&mtl_path, mtl).map_err(|e| Error::io(&mtl_path, e))?;

    let mut obj = String::new();
    obj.push_str(&format!("mtllib {}\n", file_name(&mtl_path)));
    obj.push_str("usemtl billboards\n");
    let corners = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
    for i in 0..n {
        let plane =
            crate::geometry::plane_transform(set.mu_of(i), set.log_scale_of(i), set.rot_of(i));
        for &(u, v) in &corners {
            let p = plane.point(u, v);
            obj.push_str(&format!("v {} {} {}\n", p.x, p.y, p.z));
        }
        let (tx, ty) = (i % cols, i / cols);
        for &(u, v) in &corners {
            // Chart corners sit on border texel centers; the half-texel
            // inset keeps bilinear atlas lookups inside the tile.
            let px = tx * side;
            let py = ty * side;
            let s = (px as f64 + (u + 1.0) / 2.0 * (side - 1) as f64 + 0.5) / aw as f64;
            let t = 1.0 - (py as f64 + (v + 1.0) / 2.0 * (side - 1) as f64 + 0.5) / ah as f64;
            obj.push_str(&format!("vt {s} {t}\n"));
        }
        let b = (4 * i + 1) as u32;
        obj.push_str(&format!(
            "f {b}/{b} {}/{} {}/{}\n",
            b + 1,
            b + 1,
            b + 2,
            b + 2
        ));
        obj.push_str(&format!(
            "f {b}/{b} {}/{} {}/{}\n",
            b + 2,
            b + 2,
            b + 3,
            b + 3
        ));
    }
    std::fs::write(&obj_path, obj).map_err(|e| Error::io(&obj_path, e))?;
    Ok(())
}
