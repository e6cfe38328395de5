//! Surface reconstruction from posed images with flattened, plane-like 3D
//! Gaussians.
//!
//! The pipeline: load or synthesize a scene ([`scenes`]), optimize a
//! [`GaussianCloud`] against the images with differentiable rendering
//! ([`render`], [`losses`], [`trainer`]), then fuse rendered depth maps into
//! a truncated signed distance volume and extract a mesh ([`fusion`]).

pub mod error;
pub mod fusion;
pub mod gaussians;
pub mod geometry;
pub mod gradcheck;
pub mod image_buf;
pub mod ply;
pub mod losses;
pub mod render;
pub mod scenes;
pub mod trainer;

pub use error::{Error, Result};
pub use gaussians::{GaussianCloud, Gaussian, Quat};
pub use geometry::{build_view_graph, compute_homography, Camera, Homography, ViewGraph, ViewGraphParams};
pub use image_buf::Image;
pub use render::{backward, render, render_with, MapGradients, ParamGradients, RenderConfig, RenderMaps};
pub use fusion::{FusionParams, TriangleMesh, TsdfVolume};
pub use gradcheck::{run_gradcheck, GradcheckOptions, GradcheckReport};
pub use losses::{ExposureParams, LossWeights};
pub use scenes::{load_scene, make_synthetic, SceneBundle, SyntheticKind, SyntheticSpec};
pub use trainer::{train, LossRecord, TrainConfig, Trainer};

pub use nalgebra;
