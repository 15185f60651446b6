//! Dataset ingestion and file formats: PLY point clouds, JSON camera rigs,
//! and 8-bit PNG images.
//!
//! Camera rig schema (JSON array; `world_to_camera` is row-major, camera
//! looks along +z with +y down, `file` is the image path relative to the
//! dataset directory):
//!
//! ```json
//! [{"file": "images/0000.png", "width": 64, "height": 64,
//!   "fx": 58.0, "fy": 58.0, "cx": 32.0, "cy": 32.0,
//!   "world_to_camera": [[1,0,0,0],[0,1,0,0],[0,0,1,4],[0,0,0,1]]}]
//! ```

use crate::geometry::CameraView;
use crate::math::{vec3, Mat4, Vec3};
use crate::scene::ColoredPoint;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

// ---------------------------------------------------------------------------
// PNG

pub fn write_png_rgb(path: &Path, width: usize, height: usize, pixels: &[[f64; 3]]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::Shape(
            "pixel buffer does not match dimensions".into(),
        ));
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    let mut data = Vec::with_capacity(width * height * 3);
    for p in pixels {
        for c in 0..3 {
            data.push((p[c].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    writer
        .write_image_data(&data)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

pub fn write_png_gray(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::Shape(
            "pixel buffer does not match dimensions".into(),
        ));
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    let data: Vec<u8> = values
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    writer
        .write_image_data(&data)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

pub fn load_png_rgb(path: &Path) -> Result<(usize, usize, Vec<[f64; 3]>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    let buf_size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Image(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0; buf_size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let bytes = &buf[..info.buffer_size()];
    let to_f = |b: u8| b as f64 / 255.0;
    let pixels = match (info.color_type, info.bit_depth) {
        (png::ColorType::Rgb, png::BitDepth::Eight) => bytes
            .chunks_exact(3)
            .map(|c| [to_f(c[0]), to_f(c[1]), to_f(c[2])])
            .collect(),
        (png::ColorType::Rgba, png::BitDepth::Eight) => bytes
            .chunks_exact(4)
            .map(|c| [to_f(c[0]), to_f(c[1]), to_f(c[2])])
            .collect(),
        (png::ColorType::Grayscale, png::BitDepth::Eight) => {
            bytes.iter().map(|&g| [to_f(g); 3]).collect()
        }
        (ct, bd) => {
            return Err(Error::Image(format!(
                "{}: unsupported PNG layout {ct:?}/{bd:?}",
                path.display()
            )))
        }
    };
    Ok((w, h, pixels))
}

// ---------------------------------------------------------------------------
// PLY

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(s: &str) -> Option<ScalarType> {
        Some(match s {
            "char" | "int8" => ScalarType::I8,
            "uchar" | "uint8" => ScalarType::U8,
            "short" | "int16" => ScalarType::I16,
            "ushort" | "uint16" => ScalarType::U16,
            "int" | "int32" => ScalarType::I32,
            "uint" | "uint32" => ScalarType::U32,
            "float" | "float32" => ScalarType::F32,
            "double" | "float64" => ScalarType::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 | ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }

    fn read(self, bytes: &[u8]) -> f64 {
        match self {
            ScalarType::I8 => bytes[0] as i8 as f64,
            ScalarType::U8 => bytes[0] as f64,
            ScalarType::I16 => i16::from_le_bytes([bytes[0], bytes[1]]) as f64,
            ScalarType::U16 => u16::from_le_bytes([bytes[0], bytes[1]]) as f64,
            ScalarType::I32 => i32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            ScalarType::U32 => u32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            ScalarType::F32 => f32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            ScalarType::F64 => f64::from_le_bytes(bytes[..8].try_into().unwrap()),
        }
    }

    /// Color normalization: integer types map to [0, 1], floats pass.
    fn color_scale(self) -> f64 {
        match self {
            ScalarType::U8 | ScalarType::I8 => 255.0,
            ScalarType::U16 | ScalarType::I16 => 65535.0,
            _ => 1.0,
        }
    }
}

#[derive(Debug)]
struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<(String, ScalarType)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

/// Load a point cloud from an ASCII or binary-little-endian PLY with
/// `x, y, z` and optional `red, green, blue` vertex properties. Missing
/// colors default to mid-gray. List properties and big-endian files are
/// rejected.
pub fn load_ply(path: &Path) -> Result<Vec<ColoredPoint>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Ply(format!("{}: {msg}", path.display()));

    let header_end = bytes
        .windows(10)
        .position(|w| w == b"end_header")
        .ok_or_else(|| bad("missing end_header"))?;
    let data_start = bytes[header_end..]
        .iter()
        .position(|&b| b == b'\n')
        .map(|p| header_end + p + 1)
        .ok_or_else(|| bad("missing newline after end_header"))?;
    let header =
        std::str::from_utf8(&bytes[..header_end]).map_err(|_| bad("header is not valid text"))?;

    let mut lines = header.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(bad("missing ply magic"));
    }
    let mut format = None;
    let mut elements: Vec<PlyElement> = Vec::new();
    for line in lines {
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                format = Some(match tok.next() {
                    Some("ascii") => PlyFormat::Ascii,
                    Some("binary_little_endian") => PlyFormat::BinaryLittleEndian,
                    Some(other) => return Err(bad(&format!("unsupported format {other}"))),
                    None => return Err(bad("bad format line")),
                });
            }
            Some("comment") | Some("obj_info") => {}
            Some("element") => {
                let name = tok.next().ok_or_else(|| bad("element without name"))?;
                let count: usize = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| bad("element without count"))?;
                elements.push(PlyElement {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| bad("property before any element"))?;
                let ty = tok.next().ok_or_else(|| bad("property without type"))?;
                if ty == "list" {
                    // Only tolerable if we never have to read through it.
                    element.properties.clear();
                    element.name = format!("__list__{}", element.name);
                    continue;
                }
                let ty = ScalarType::parse(ty)
                    .ok_or_else(|| bad(&format!("unsupported property type {ty}")))?;
                let name = tok.next().ok_or_else(|| bad("property without name"))?;
                element.properties.push((name.to_string(), ty));
            }
            Some("end_header") | None => {}
            Some(other) => return Err(bad(&format!("unexpected header token {other}"))),
        }
    }
    let format = format.ok_or_else(|| bad("missing format line"))?;

    let mut offset = data_start;
    let mut ascii_rows_skipped = 0usize;
    let ascii_lines: Vec<&str> = if format == PlyFormat::Ascii {
        std::str::from_utf8(&bytes[data_start..])
            .map_err(|_| bad("ascii body is not valid text"))?
            .lines()
            .collect()
    } else {
        Vec::new()
    };

    for element in &elements {
        if element.name == "vertex" {
            let find = |n: &str| element.properties.iter().position(|(p, _)| p == n);
            let (xi, yi, zi) = match (find("x"), find("y"), find("z")) {
                (Some(a), Some(b), Some(c)) => (a, b, c),
                _ => return Err(bad("vertex element lacks x/y/z")),
            };
            let color_idx = match (find("red"), find("green"), find("blue")) {
                (Some(r), Some(g), Some(b)) => Some((r, g, b)),
                _ => None,
            };
            let mut points = Vec::with_capacity(element.count);
            match format {
                PlyFormat::Ascii => {
                    for row in 0..element.count {
                        let line = ascii_lines
                            .get(ascii_rows_skipped + row)
                            .ok_or_else(|| bad("truncated ascii body"))?;
                        let vals: Vec<f64> = line
                            .split_whitespace()
                            .map(|t| t.parse::<f64>())
                            .collect::<std::result::Result<_, _>>()
                            .map_err(|_| bad("non-numeric ascii value"))?;
                        if vals.len() < element.properties.len() {
                            return Err(bad("short ascii row"));
                        }
                        let color = color_idx
                            .map(|(r, g, b)| {
                                let s = element.properties[r].1.color_scale();
                                [vals[r] / s, vals[g] / s, vals[b] / s]
                            })
                            .unwrap_or([0.5; 3]);
                        points.push(ColoredPoint {
                            position: vec3(vals[xi], vals[yi], vals[zi]),
                            color,
                        });
                    }
                }
                PlyFormat::BinaryLittleEndian => {
                    let stride: usize = element.properties.iter().map(|(_, t)| t.size()).sum();
                    let field_offset = |idx: usize| -> usize {
                        element.properties[..idx]
                            .iter()
                            .map(|(_, t)| t.size())
                            .sum()
                    };
                    let need = element.count * stride;
                    if offset + need > bytes.len() {
                        return Err(bad("truncated binary body"));
                    }
                    for row in 0..element.count {
                        let base = offset + row * stride;
                        let get = |idx: usize| {
                            let (_, t) = element.properties[idx];
                            t.read(&bytes[base + field_offset(idx)..])
                        };
                        let color = color_idx
                            .map(|(r, g, b)| {
                                let s = element.properties[r].1.color_scale();
                                [get(r) / s, get(g) / s, get(b) / s]
                            })
                            .unwrap_or([0.5; 3]);
                        points.push(ColoredPoint {
                            position: vec3(get(xi), get(yi), get(zi)),
                            color,
                        });
                    }
                }
            }
            return Ok(points);
        }
        // Skip a non-vertex element; lists make the stride unknowable.
        if element.name.starts_with("__list__") && element.count > 0 {
            match format {
                PlyFormat::Ascii => {}
                PlyFormat::BinaryLittleEndian => {
                    return Err(bad("list property before vertex data is unsupported"))
                }
            }
        }
        match format {
            PlyFormat::Ascii => ascii_rows_skipped += element.count,
            PlyFormat::BinaryLittleEndian => {
                let stride: usize = element.properties.iter().map(|(_, t)| t.size()).sum();
                offset += element.count * stride;
            }
        }
    }
    Err(bad("no vertex element"))
}

/// Write a colored point cloud as binary little-endian PLY.
pub fn save_ply_points(path: &Path, points: &[ColoredPoint]) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(b"ply\nformat binary_little_endian 1.0\n");
    out.extend_from_slice(format!("element vertex {}\n", points.len()).as_bytes());
    out.extend_from_slice(
        b"property float x\nproperty float y\nproperty float z\n\
          property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
    );
    for p in points {
        for v in [p.position.x, p.position.y, p.position.z] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        for c in p.color {
            out.push((c.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Write a triangle mesh as binary little-endian PLY.
pub fn save_ply_mesh(path: &Path, vertices: &[Vec3], faces: &[[u32; 3]]) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(b"ply\nformat binary_little_endian 1.0\n");
    out.extend_from_slice(format!("element vertex {}\n", vertices.len()).as_bytes());
    out.extend_from_slice(b"property float x\nproperty float y\nproperty float z\n");
    out.extend_from_slice(format!("element face {}\n", faces.len()).as_bytes());
    out.extend_from_slice(b"property list uchar uint vertex_indices\nend_header\n");
    for v in vertices {
        for c in [v.x, v.y, v.z] {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
    }
    for f in faces {
        out.push(3);
        for &i in f {
            out.extend_from_slice(&i.to_le_bytes());
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Cameras

pub const DEFAULT_NEAR: f64 = 0.01;
pub const DEFAULT_FAR: f64 = 1000.0;

/// One camera record of the JSON rig format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Row-major rigid world-to-camera transform.
    pub world_to_camera: [[f64; 4]; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub near: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub far: Option<f64>,
}

impl CameraRecord {
    pub fn view(&self) -> Result<CameraView> {
        CameraView::from_pinhole(
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            self.width,
            self.height,
            Mat4 {
                m: self.world_to_camera,
            },
            self.near.unwrap_or(DEFAULT_NEAR),
            self.far.unwrap_or(DEFAULT_FAR),
        )
    }
}

pub fn load_camera_records(path: &Path) -> Result<Vec<CameraRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Camera(format!("{}: {e}", path.display())))
}

pub fn save_camera_records(path: &Path, records: &[CameraRecord]) -> Result<()> {
    let text = serde_json::to_string_pretty(records)
        .map_err(|e| Error::Camera(format!("serialize: {e}")))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Load a camera rig and build the views.
pub fn load_cameras(path: &Path) -> Result<Vec<(Option<String>, CameraView)>> {
    load_camera_records(path)?
        .iter()
        .map(|r| Ok((r.file.clone(), r.view()?)))
        .collect()
}

// ---------------------------------------------------------------------------
// Dataset

/// A posed image dataset: `cameras.json`, `points.ply`, and the PNG images
/// referenced by the camera records, all under one directory.
pub struct Dataset {
    pub names: Vec<String>,
    pub cameras: Vec<CameraView>,
    pub images: Vec<Vec<[f64; 3]>>,
    pub points: Vec<ColoredPoint>,
    pub width: usize,
    pub height: usize,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Dataset> {
        let records = load_camera_records(&dir.join("cameras.json"))?;
        if records.is_empty() {
            return Err(Error::Train(format!(
                "{}: camera rig is empty",
                dir.display()
            )));
        }
        let points = load_ply(&dir.join("points.ply"))?;
        let mut names = Vec::new();
        let mut cameras = Vec::new();
        let mut images = Vec::new();
        let (mut width, mut height) = (0, 0);
        for (i, rec) in records.iter().enumerate() {
            let file = rec
                .file
                .clone()
                .ok_or_else(|| Error::Train(format!("camera {i} has no image file")))?;
            let view = rec.view()?;
            let (w, h, pixels) = load_png_rgb(&dir.join(&file))?;
            if w != rec.width || h != rec.height {
                return Err(Error::Train(format!(
                    "{file}: image is {w}x{h}, camera says {}x{}",
                    rec.width, rec.height
                )));
            }
            if i == 0 {
                width = w;
                height = h;
            } else if w != width || h != height {
                return Err(Error::Train(format!(
                    "{file}: all images must share dimensions ({w}x{h} vs {width}x{height})"
                )));
            }
            names.push(file);
            cameras.push(view);
            images.push(pixels);
        }
        Ok(Dataset {
            names,
            cameras,
            images,
            points,
            width,
            height,
        })
    }

    /// Held-out views: every 8th image, starting at index 0.
    pub fn test_indices(&self) -> Vec<usize> {
        (0..self.cameras.len()).filter(|i| i % 8 == 0).collect()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        (0..self.cameras.len()).filter(|i| i % 8 != 0).collect()
    }
}

/// Resolve an output directory, creating it if needed.
pub fn ensure_dir(dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(dir.to_path_buf())
}
