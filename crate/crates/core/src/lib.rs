//! Perception and control core for a small mecanum-wheel robot that watches
//! for people who have fallen.
//!
//! * [`projective`] synthesizes plane-induced homographies that lift images
//!   taken near the floor to a standing viewpoint, and warps images with them.
//! * [`falldet`] classifies 17-keypoint poses with a geometric rule or a small MLP.
//! * [`kinematics`], [`sysid`] and [`simulator`] cover the drive train: wheel
//!   kinematics, the inverse PWM motor model and a circle-tracking simulation.
//! * [`pipeline`] ties detection, candidate selection and reporting together.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod falldet;
pub mod kinematics;
pub mod pipeline;
pub mod projective;
pub mod simulator;
pub mod sysid;

pub use config::Config;
pub use falldet::{BoundingBox, Mlp, PoseDetection};
pub use kinematics::{BodyVelocity, ChassisGeometry, WheelSpeeds};
pub use pipeline::FallReport;
pub use projective::{CameraModel, Homography, Plane, RasterImage};
pub use simulator::{ControllerKind, RobotPose, TrajectoryLog};
pub use sysid::{MotorParams, Wheel};
