//! TOML configuration shared by the CLI subcommands.
//!
//! ```toml
//! [source]            # robot camera
//! fx = 500.0
//! fy = 500.0
//! cx = 320.0
//! cy = 240.0
//! rotation = [1, 0, 0, 0, 1, 0, 0, 0, 1]
//! translation = [0, 0, 0]
//!
//! [target]            # virtual standing-height camera
//! translation = [0, 1.35, 0]
//!
//! [chassis]
//! wheel_radius = 0.04
//! robot_radius = 0.15
//!
//! [pipeline]
//! classifier = "rules"
//!
//! [simulation]
//! radius = 0.65
//! ```
//!
//! Every key has a default, so an empty file is a valid config.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::falldet::{FeatureConfig, TrainConfig, DEFAULT_KEYPOINT_THRESHOLD};
use crate::kinematics::{ChassisGeometry, KinematicsError};
use crate::projective::{CameraModel, GeometryError};
use crate::simulator::{CircleTask, RobotPose};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error("config: {0}")]
    Invalid(String),
}

/// Pinhole camera keys. Pixel values assume a 640x480 frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Row-major world-to-camera rotation.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            fx: 500.0,
            fy: 500.0,
            cx: 320.0,
            cy: 240.0,
            rotation: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            translation: [0.0; 3],
        }
    }
}

impl CameraConfig {
    pub fn camera(&self) -> Result<CameraModel, GeometryError> {
        let k = Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0);
        CameraModel::new(
            k,
            Matrix3::from_row_slice(&self.rotation),
            Vector3::from_column_slice(&self.translation),
        )
    }

    /// Reads a standalone camera file with the keys at top level.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Ok(toml::from_str(&read(path.as_ref())?)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChassisConfig {
    pub wheel_radius: f64,
    pub robot_radius: f64,
}

impl Default for ChassisConfig {
    fn default() -> Self {
        let g = ChassisGeometry::default();
        Self {
            wheel_radius: g.wheel_radius(),
            robot_radius: g.robot_radius(),
        }
    }
}

impl ChassisConfig {
    pub fn geometry(&self) -> Result<ChassisGeometry, KinematicsError> {
        ChassisGeometry::new(self.wheel_radius, self.robot_radius)
    }
}

/// Which classifier raises the alarm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierChoice {
    #[default]
    Rules,
    Mlp,
    /// Alarm when either says fall.
    Both,
}

impl ClassifierChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Rules => "rules",
            Self::Mlp => "mlp",
            Self::Both => "both",
        }
    }

    pub fn needs_mlp(self) -> bool {
        !matches!(self, Self::Rules)
    }
}

impl std::str::FromStr for ClassifierChoice {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rules" => Ok(Self::Rules),
            "mlp" => Ok(Self::Mlp),
            "both" => Ok(Self::Both),
            _ => Err(ConfigError::Invalid(format!(
                "classifier must be rules, mlp or both, got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub classifier: ClassifierChoice,
    /// Weights file for the MLP; required unless `classifier = "rules"`.
    pub mlp_weights: Option<PathBuf>,
    /// MLP outputs at or above this fall probability count as a fall.
    pub mlp_threshold: f64,
    pub keypoint_threshold: f64,
    pub frame_width: f64,
    pub frame_height: f64,
    /// Range of person-plane distances to try, in metres.
    pub h_min: f64,
    pub h_max: f64,
    pub candidates: usize,
    /// Person-plane normal in the robot camera frame.
    pub plane_normal: [f64; 3],
    /// Pose extraction program and leading arguments; empty disables image input.
    pub adapter: Vec<String>,
    pub model_size: String,
    pub confidence: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            classifier: ClassifierChoice::Rules,
            mlp_weights: None,
            mlp_threshold: 0.5,
            keypoint_threshold: DEFAULT_KEYPOINT_THRESHOLD,
            frame_width: 640.0,
            frame_height: 480.0,
            h_min: 0.5,
            h_max: 4.0,
            candidates: 8,
            plane_normal: [0.0, 0.0, 1.0],
            adapter: Vec::new(),
            model_size: "s".into(),
            confidence: 0.25,
        }
    }
}

impl PipelineConfig {
    pub fn features(&self) -> FeatureConfig {
        FeatureConfig {
            frame_width: self.frame_width,
            frame_height: self.frame_height,
            keypoint_threshold: self.keypoint_threshold,
        }
    }
}

/// Circle-tracking experiment; `motor_params` falls back to the bundled
/// reference table and `duration` to one revolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub radius: f64,
    pub angular_speed: f64,
    pub duration: Option<f64>,
    pub dt: f64,
    pub max_wheel_speed: f64,
    /// `[x, y, theta]`.
    pub initial_pose: [f64; 3],
    pub motor_params: Option<PathBuf>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        let t = CircleTask::default();
        Self {
            radius: t.radius,
            angular_speed: t.angular_speed,
            duration: None,
            dt: t.dt,
            max_wheel_speed: t.max_wheel_speed,
            initial_pose: [0.0; 3],
            motor_params: None,
        }
    }
}

impl SimulationConfig {
    pub fn task(&self) -> CircleTask {
        let revolution = if self.angular_speed != 0.0 {
            2.0 * std::f64::consts::PI / self.angular_speed.abs()
        } else {
            0.0
        };
        let [x, y, theta] = self.initial_pose;
        CircleTask {
            radius: self.radius,
            angular_speed: self.angular_speed,
            duration: self.duration.unwrap_or(revolution),
            dt: self.dt,
            max_wheel_speed: self.max_wheel_speed,
            initial_pose: RobotPose::new(x, y, theta),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub source: CameraConfig,
    pub target: CameraConfig,
    pub chassis: ChassisConfig,
    pub pipeline: PipelineConfig,
    pub simulation: SimulationConfig,
    pub training: TrainConfig,
}

impl Default for Config {
    /// Robot camera at the origin and the virtual camera 1.35 m above it
    /// (image y points down), same orientation and intrinsics.
    fn default() -> Self {
        Self {
            source: CameraConfig::default(),
            target: CameraConfig {
                translation: [0.0, 1.35, 0.0],
                ..CameraConfig::default()
            },
            chassis: ChassisConfig::default(),
            pipeline: PipelineConfig::default(),
            simulation: SimulationConfig::default(),
            training: TrainConfig::default(),
        }
    }
}

impl std::str::FromStr for Config {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(toml::from_str(s)?)
    }
}

impl Config {
    /// Relative paths inside the file resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let mut cfg: Config = read(path)?.parse()?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.pipeline.mlp_weights, &mut cfg.simulation.motor_params]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        let cfg: Config = "".parse().unwrap();
        assert_eq!(cfg, Config::default());
        assert_eq!(cfg.pipeline.classifier, ClassifierChoice::Rules);
        let (r, t) = cfg.source.camera().unwrap().relative_to(&cfg.target.camera().unwrap());
        assert_eq!(r, Matrix3::identity());
        assert_eq!(t, Vector3::new(0.0, 1.35, 0.0));
    }

    #[test]
    fn sections_override() {
        let cfg: Config = r#"
            [chassis]
            wheel_radius = 0.05
            [pipeline]
            classifier = "both"
            adapter = ["python3", "adapter.py"]
            [simulation]
            radius = 1.0
            dt = 0.01
            [training]
            learning_rate = 0.05
            epochs = 10
            batch_size = 0
            seed = 3
        "#
        .parse()
        .unwrap();
        assert_eq!(cfg.chassis.geometry().unwrap().wheel_radius(), 0.05);
        assert_eq!(cfg.chassis.robot_radius, 0.15);
        assert_eq!(cfg.pipeline.classifier, ClassifierChoice::Both);
        assert_eq!(cfg.pipeline.adapter.len(), 2);
        assert_eq!(cfg.simulation.task().radius, 1.0);
        assert_eq!(cfg.simulation.task().angular_speed, 0.3);
        assert_eq!(cfg.simulation.task().duration, CircleTask::default().duration);
        assert_eq!(cfg.training.epochs, 10);
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = Config::default();
        let back: Config = cfg.to_toml().parse().unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_rotation() {
        assert!("[chassis]\nwheel_radus = 1.0".parse::<Config>().is_err());
        let cfg: Config = "[source]\nrotation = [1,0,0, 0,1,0, 0,0,2]".parse().unwrap();
        assert!(cfg.source.camera().is_err());
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("robofall.toml");
        std::fs::write(&path, "[pipeline]\nclassifier = \"mlp\"\nmlp_weights = \"w.json\"\n").unwrap();
        let cfg = Config::load(&path).unwrap();
        assert_eq!(cfg.pipeline.mlp_weights, Some(dir.path().join("w.json")));
    }
}
