//! Pinhole cameras, plane-induced homographies and perspective warping.
//!
//! Pixel coordinates follow the image convention used by COCO keypoints:
//! origin at the top-left corner, `u` to the right, `v` downwards.

mod camera;
mod homography;
mod raster;

pub use camera::{CameraModel, Plane};
pub use homography::{pitch_corruption_homography, plane_homography, sample_homographies, Homography, Pixel};
pub use raster::{warp_image, RasterImage};

use thiserror::Error;

/// Errors raised by the geometry routines.
#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("homography is singular (|det| = {det:e})")]
    SingularHomography { det: f64 },
    #[error("invalid plane: {0}")]
    InvalidPlane(String),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("point maps to infinity (w = {w:e})")]
    PointAtInfinity { w: f64 },
    #[error("invalid distance range [{h_min}, {h_max}]")]
    InvalidRange { h_min: f64, h_max: f64 },
    #[error("invalid pitch angle {0} degrees (expected 0 <= theta < 90)")]
    InvalidAngle(f64),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("homography file: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}
