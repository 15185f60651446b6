//! Differentiable billboard splatting.
//!
//! A scene is a cloud of textured planar primitives ("billboards"), each
//! with a center, two log-scales, a rotation, spherical-harmonic
//! view-dependent color, an RGB offset texture, and a per-texel alpha map.
//! Views render by closed-form ray-plane intersection with front-to-back
//! alpha compositing; a hand-written backward pass makes every parameter
//! trainable from posed images. Trained scenes compress into a compact
//! container by quantizing textures against a canonical opacity pattern,
//! and meshes extract from fused depth renders.
//!
//! The `book/` directory of this repository walks through the pipeline
//! chapter by chapter; its code snippets are compiled as doc-tests from
//! [`book`].
//!
//! ```
//! use bbsplat::prelude::*;
//!
//! // A one-billboard scene rendered from a pinhole camera.
//! let points = [ColoredPoint { position: vec3(0.0, 0.0, 2.0), color: [0.9, 0.2, 0.1] }];
//! let (set, meta) = init_from_point_cloud(&points, 1, false, 16).unwrap();
//! let cam = CameraView::from_pinhole(
//!     32.0, 32.0, 32.0, 32.0, 64, 64, Mat4::IDENTITY, 0.01, 100.0,
//! ).unwrap();
//! let frame = render(&set, &meta, &cam, RenderMode::Inference);
//! assert_eq!(frame.color.len(), 64 * 64);
//! ```

// Indexed loops over fixed small dimensions (color channels, quaternion
// components, matrix rows) read more clearly here than iterator chains.
#![allow(clippy::needless_range_loop)]

use std::path::{Path, PathBuf};

pub mod backprop;
pub mod book;
pub mod codec;
pub mod densify;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod math;
pub mod mc_tables;
pub mod mesh;
pub mod metrics;
pub mod optim;
pub mod render;
pub mod scene;
pub mod sh;
pub mod spatial;
pub mod synth;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("camera: {0}")]
    Camera(String),
    #[error("scene: {0}")]
    Scene(String),
    #[error("image: {0}")]
    Image(String),
    #[error("ply: {0}")]
    Ply(String),
    #[error("container: {0}")]
    Container(String),
    #[error("mesh: {0}")]
    Mesh(String),
    #[error("train: {0}")]
    Train(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

impl Error {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Error {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn from_io(source: std::io::Error) -> Error {
        Error::Io {
            path: PathBuf::from("<stream>"),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Initialize the global worker pool from the `BBSPLAT_THREADS` environment
/// variable. Safe to call more than once; later calls are ignored. Results
/// do not depend on the worker count.
pub fn init_thread_pool() {
    if let Ok(n) = std::env::var("BBSPLAT_THREADS") {
        if let Ok(n) = n.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }
}

/// The commonly used surface in one import.
pub mod prelude {
    pub use crate::backprop::{bilinear_backward, composite_backward, GradientBuffer};
    pub use crate::codec::{decode_container, encode_container, encode_container_raw};
    pub use crate::densify::{alpha_nsplit, densify_step, find_dead, relocate};
    pub use crate::geometry::{
        plane_transform, project_corner_aabb, ray_splat_intersect, view_direction, CameraView,
        PlaneTransform,
    };
    pub use crate::io::{load_cameras, load_ply, Dataset};
    pub use crate::losses::{
        billboard_impact, image_loss, l1_loss, ssim, texture_reg_loss, visibility_weight, ImageRef,
        LossReport,
    };
    pub use crate::math::{vec3, Mat4, Quat, Vec3};
    pub use crate::mesh::{chamfer_distance, extract_mesh, tsdf_integrate, TsdfVolume};
    pub use crate::metrics::psnr;
    pub use crate::optim::{position_lr, train, AdamState, TrainConfig};
    pub use crate::render::{
        render, render_depth, render_reference, sample_bilinear, FrameBuffer, RenderMode,
    };
    pub use crate::scene::{
        fibonacci_sphere, gaussian_pattern_texture, init_from_point_cloud, BillboardSet,
        ColoredPoint, SceneMeta,
    };
    pub use crate::{Error, Result};
}
