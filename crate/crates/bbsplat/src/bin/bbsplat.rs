//! Command-line interface: train scenes from posed datasets, render and
//! evaluate containers, convert between raw and quantized containers, and
//! export meshes.

use anyhow::{bail, Context};
use bbsplat::codec;
use bbsplat::geometry::CameraView;
use bbsplat::io;
use bbsplat::math::vec3;
use bbsplat::mesh;
use bbsplat::optim::TrainConfig;
use bbsplat::render::{render, render_depth, RenderMode};
use bbsplat::scene::{BillboardSet, SceneMeta};
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "bbsplat",
    about = "Differentiable billboard splatting: train, render, compress, mesh",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a billboard scene from a posed image dataset.
    Train {
        /// Dataset directory (cameras.json, points.ply, images/).
        dataset_dir: PathBuf,
        /// Training configuration: JSON or key=value lines. Defaults apply
        /// for missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output container; `.bbu` writes full precision, anything else
        /// writes the quantized container.
        #[arg(long, default_value = "scene.bbz")]
        out: PathBuf,
        /// Random seed (overrides the config file).
        #[arg(long)]
        seed: Option<u64>,
        /// Metrics CSV path; defaults to `<out>.metrics.csv`.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Render a scene container from a camera rig.
    Render {
        scene: PathBuf,
        /// Camera rig JSON.
        #[arg(long)]
        camera: PathBuf,
        /// Output directory for one image per camera.
        #[arg(long)]
        out: PathBuf,
        /// Output format (only `png`).
        #[arg(long, default_value = "png")]
        format: String,
    },
    /// Re-encode a container with quantized, DEFLATE-compressed textures.
    Compress {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-encode a container with full-precision textures.
    Decompress {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse rendered depth maps into a TSDF volume and extract a mesh.
    ExportMesh {
        scene: PathBuf,
        /// Camera rig JSON providing the depth-fusion views.
        #[arg(long)]
        cameras: PathBuf,
        /// Voxel edge length in world units.
        #[arg(long, default_value_t = 0.01)]
        voxel: f64,
        /// Output mesh path (.ply or .obj).
        #[arg(long)]
        out: PathBuf,
    },
    /// Export the scene as a textured two-triangle-per-billboard mesh with
    /// PNG atlases.
    ExportObj {
        scene: PathBuf,
        /// Output path prefix: writes `<prefix>.obj/.mtl/_color.png/_alpha.png`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Report PSNR/SSIM of a scene against a dataset.
    Eval {
        scene: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Also write the per-view table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn main() {
    bbsplat::init_thread_pool();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train {
            dataset_dir,
            config,
            out,
            seed,
            log,
        } => cmd_train(&dataset_dir, config.as_deref(), &out, seed, log.as_deref()),
        Command::Render {
            scene,
            camera,
            out,
            format,
        } => cmd_render(&scene, &camera, &out, &format),
        Command::Compress { input, out } => cmd_recode(&input, &out, true),
        Command::Decompress { input, out } => cmd_recode(&input, &out, false),
        Command::ExportMesh {
            scene,
            cameras,
            voxel,
            out,
        } => cmd_export_mesh(&scene, &cameras, voxel, &out),
        Command::ExportObj { scene, out } => {
            let (set, _meta) = codec::decode_container(&scene)?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                io::ensure_dir(parent)?;
            }
            codec::export_obj_atlas(&set, &out)?;
            println!(
                "wrote {}.obj with {} billboards",
                out.display(),
                set.count()
            );
            Ok(())
        }
        Command::Eval {
            scene,
            dataset,
            csv,
        } => cmd_eval(&scene, &dataset, csv.as_deref()),
    }
}

/// Parse a config file: JSON if it parses as JSON, otherwise `key = value`
/// lines (comments with `#`).
fn load_config(path: &Path) -> anyhow::Result<TrainConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let trimmed = text.trim_start();
    if trimmed.starts_with('{') {
        return serde_json::from_str(&text)
            .with_context(|| format!("parsing JSON config {}", path.display()));
    }
    let mut map = serde_json::Map::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("{}:{}: expected key = value", path.display(), lineno + 1);
        };
        let key = key.trim().to_string();
        let value = value.trim();
        let json_value = if value == "true" || value == "false" {
            serde_json::Value::Bool(value == "true")
        } else if let Ok(n) = value.parse::<u64>() {
            serde_json::Value::from(n)
        } else if let Ok(f) = value.parse::<f64>() {
            serde_json::Value::from(f)
        } else {
            serde_json::Value::String(value.to_string())
        };
        map.insert(key, json_value);
    }
    serde_json::from_value(serde_json::Value::Object(map))
        .with_context(|| format!("parsing config {}", path.display()))
}

fn write_scene(set: &BillboardSet, meta: &SceneMeta, out: &Path) -> anyhow::Result<()> {
    let report = if out.extension().and_then(|e| e.to_str()) == Some("bbu") {
        codec::encode_container_raw(set, meta, out)?
    } else {
        codec::encode_container(set, meta, out)?
    };
    println!(
        "wrote {} ({} billboards, {} bytes; streams {} raw -> {} compressed)",
        out.display(),
        set.count(),
        report.file_len,
        report.raw_total(),
        report.compressed_total()
    );
    Ok(())
}

fn cmd_train(
    dataset_dir: &Path,
    config: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    log: Option<&Path>,
) -> anyhow::Result<()> {
    let mut cfg = match config {
        Some(path) => load_config(path)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let dataset = io::Dataset::load(dataset_dir)?;
    println!(
        "dataset: {} views ({} train / {} test), {} points",
        dataset.cameras.len(),
        dataset.train_indices().len(),
        dataset.test_indices().len(),
        dataset.points.len()
    );
    let log_path = log
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(format!("{}.metrics.csv", out.display())));
    let mut log_file = std::io::BufWriter::new(
        std::fs::File::create(&log_path)
            .with_context(|| format!("creating metrics log {}", log_path.display()))?,
    );
    let output = bbsplat::optim::train(&dataset, &cfg, Some(&mut log_file))?;
    drop(log_file);
    if let Some(last) = output.log.last() {
        println!(
            "final: step {} l1 {:.5} held-out psnr {:.2} dB, {} billboards",
            last.step, last.l1, last.psnr, last.count
        );
    }
    write_scene(&output.set, &output.meta, out)?;
    println!("metrics log: {}", log_path.display());
    Ok(())
}

fn cmd_render(scene: &Path, camera: &Path, out: &Path, format: &str) -> anyhow::Result<()> {
    if format != "png" {
        bail!("unsupported output format '{format}' (only png)");
    }
    let (set, meta) = codec::decode_container(scene)?;
    let cams = io::load_cameras(camera)?;
    io::ensure_dir(out)?;
    for (i, (file, view)) in cams.iter().enumerate() {
        let fb = render(&set, &meta, view, RenderMode::Inference);
        let name = file
            .as_deref()
            .map(|f| {
                Path::new(f)
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| format!("{i:05}"))
            })
            .unwrap_or_else(|| format!("{i:05}"));
        let path = out.join(format!("{name}.png"));
        io::write_png_rgb(&path, fb.width, fb.height, &fb.color)?;
    }
    println!("rendered {} views to {}", cams.len(), out.display());
    Ok(())
}

fn cmd_recode(input: &Path, out: &Path, quantize: bool) -> anyhow::Result<()> {
    let (set, meta) = codec::decode_container(input)?;
    let report = if quantize {
        codec::encode_container(&set, &meta, out)?
    } else {
        codec::encode_container_raw(&set, &meta, out)?
    };
    let input_len = std::fs::metadata(input)?.len();
    println!(
        "{} ({} bytes) -> {} ({} bytes)",
        input.display(),
        input_len,
        out.display(),
        report.file_len
    );
    for (name, raw, compressed) in &report.entries {
        println!("  stream {name:<10} {raw:>10} raw {compressed:>10} stored");
    }
    Ok(())
}

fn scene_bounds(set: &BillboardSet) -> (bbsplat::math::Vec3, bbsplat::math::Vec3) {
    let mut lo = vec3(f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut hi = vec3(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for i in 0..set.count() {
        let plane =
            bbsplat::geometry::plane_transform(set.mu_of(i), set.log_scale_of(i), set.rot_of(i));
        for (u, v) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
            let p = plane.point(u, v);
            lo = vec3(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
            hi = vec3(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
        }
    }
    (lo, hi)
}

fn cmd_export_mesh(scene: &Path, cameras: &Path, voxel: f64, out: &Path) -> anyhow::Result<()> {
    let (set, meta) = codec::decode_container(scene)?;
    if set.count() == 0 {
        bail!("scene is empty");
    }
    let cams: Vec<CameraView> = io::load_cameras(cameras)?
        .into_iter()
        .map(|(_, v)| v)
        .collect();
    if cams.is_empty() {
        bail!("camera rig is empty");
    }
    let (lo, hi) = scene_bounds(&set);
    let mut vol = mesh::TsdfVolume::covering(lo, hi, voxel, 4)?;
    for cam in &cams {
        let depth = render_depth(&set, &meta, cam);
        mesh::tsdf_integrate(&mut vol, &depth, cam)?;
    }
    let tri = mesh::extract_mesh(&vol);
    mesh::save_mesh(out, &tri)?;
    println!(
        "fused {} views into {}x{}x{} voxels; mesh: {} vertices, {} faces -> {}",
        cams.len(),
        vol.dims[0],
        vol.dims[1],
        vol.dims[2],
        tri.vertices.len(),
        tri.faces.len(),
        out.display()
    );
    Ok(())
}

fn cmd_eval(scene: &Path, dataset_dir: &Path, csv: Option<&Path>) -> anyhow::Result<()> {
    let (set, meta) = codec::decode_container(scene)?;
    let dataset = io::Dataset::load(dataset_dir)?;
    let test: std::collections::HashSet<usize> = dataset.test_indices().into_iter().collect();
    let mut rows = Vec::new();
    println!("view  split  psnr(dB)  ssim  file");
    for i in 0..dataset.cameras.len() {
        let fb = render(&set, &meta, &dataset.cameras[i], RenderMode::Inference);
        let (psnr, ssim) = bbsplat::metrics::evaluate_pair(
            &fb.color,
            &dataset.images[i],
            dataset.width,
            dataset.height,
        )?;
        let split = if test.contains(&i) { "test" } else { "train" };
        println!(
            "{i:>4}  {split:<5}  {psnr:>8.4}  {ssim:.4}  {}",
            dataset.names[i]
        );
        rows.push((i, split, psnr, ssim));
    }
    let mean = |split: &str, pick: fn(&(usize, &str, f64, f64)) -> f64| {
        let vals: Vec<f64> = rows.iter().filter(|r| r.1 == split).map(pick).collect();
        vals.iter().sum::<f64>() / vals.len().max(1) as f64
    };
    println!(
        "mean train: psnr {:.4} ssim {:.4}",
        mean("train", |r| r.2),
        mean("train", |r| r.3)
    );
    println!(
        "mean test: psnr {:.4} ssim {:.4}",
        mean("test", |r| r.2),
        mean("test", |r| r.3)
    );
    if let Some(path) = csv {
        let mut text = String::from("view,split,psnr,ssim,file\n");
        for (i, split, psnr, ssim) in &rows {
            text.push_str(&format!(
                "{i},{split},{psnr:.6},{ssim:.6},{}\n",
                dataset.names[*i]
            ));
        }
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}
