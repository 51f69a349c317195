//! Offline reconstruction and re-rendering of indoor scenes captured with a
//! localized RGB-D sensor.
//!
//! The crate covers the whole offline half of the pipeline: camera math,
//! dataset ingest, point-cloud construction and filtering, Poisson meshing,
//! software rendering at arbitrary field of view, frame selection for radiance
//! field trainers, and PSNR/SSIM evaluation. [`synth`] generates a textured
//! test room so that every stage can be exercised without captured data.

pub mod camera;
pub mod dataset;
pub mod error;
pub mod imaging;
pub mod meshing;
pub mod metrics;
pub mod nerf;
pub mod ply;
pub mod pointcloud;
pub mod reconstruct;
pub mod render;
pub mod spatial;
pub mod synth;

pub use camera::{CameraIntrinsics, Distortion, Pose};
pub use error::{Error, Result};
pub use meshing::TriangleMesh;
pub use pointcloud::PointCloud;
