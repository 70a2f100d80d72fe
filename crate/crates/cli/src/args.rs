use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use robofall_core::config::ClassifierChoice;
use robofall_core::pipeline::KeypointCandidate;
use robofall_core::simulator::ControllerKind;
use robofall_core::sysid::Wheel;

#[derive(Debug, Parser)]
#[command(
    name = "robofall",
    version,
    about = "Fall monitoring toolkit for a small mecanum-wheel robot"
)]
pub struct Cli {
    /// TOML config; every key has a default.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Write the main result here instead of stdout.
    #[arg(long, global = true, value_name = "PATH")]
    pub output: Option<PathBuf>,
    /// Seed for anything random (training, synthetic data).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Structured output; each command has a native format when omitted.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Plane-induced homographies and image warping.
    #[command(subcommand)]
    Homography(HomographyCmd),
    /// Mecanum wheel speeds from body velocity and back.
    #[command(subcommand)]
    Kinematics(KinematicsCmd),
    /// Motor model identification and inversion.
    #[command(subcommand)]
    Sysid(SysidCmd),
    /// Fall classification of keypoint files.
    #[command(subcommand)]
    Falldet(FalldetCmd),
    /// Trajectory-tracking simulation.
    #[command(subcommand)]
    Simulate(SimulateCmd),
    /// End-to-end fall check.
    #[command(subcommand)]
    Pipeline(PipelineCmd),
}

#[derive(Debug, Subcommand)]
pub enum HomographyCmd {
    /// Robot-to-virtual-camera homography for one person-plane distance.
    #[command(allow_negative_numbers = true)]
    Compute {
        /// Plane distance in metres.
        #[arg(long)]
        h: f64,
        /// Plane normal `x,y,z` in the robot camera frame (default from config).
        #[arg(long, value_delimiter = ',', num_args = 3)]
        normal: Option<Vec<f64>>,
    },
    /// Homographies over a linear grid of plane distances.
    Sample {
        #[arg(long)]
        h_min: Option<f64>,
        #[arg(long)]
        h_max: Option<f64>,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Warp an image (PNG, PGM or PPM); the result goes to `--output`.
    Warp {
        #[arg(long)]
        input: PathBuf,
        /// Homography file with nine numbers.
        #[arg(long, conflicts_with = "h")]
        homography: Option<PathBuf>,
        /// Use the configured camera pair at this plane distance instead.
        #[arg(long)]
        h: Option<f64>,
    },
    /// Synthetic pitch corruption of the robot camera.
    Pitch {
        /// Downward pitch in degrees.
        #[arg(long)]
        theta: f64,
        /// Distance to the fixated point in metres.
        #[arg(long, default_value_t = 3.0)]
        distance: f64,
    },
}

#[derive(Debug, Subcommand)]
pub enum KinematicsCmd {
    /// Body velocity to wheel speeds.
    #[command(allow_negative_numbers = true)]
    Inverse {
        #[arg(long, default_value_t = 0.0)]
        vx: f64,
        #[arg(long, default_value_t = 0.0)]
        vy: f64,
        #[arg(long, default_value_t = 0.0)]
        wz: f64,
    },
    /// Wheel speeds to body velocity.
    #[command(allow_negative_numbers = true)]
    Forward {
        #[arg(long, default_value_t = 0.0)]
        fl: f64,
        #[arg(long, default_value_t = 0.0)]
        fr: f64,
        #[arg(long, default_value_t = 0.0)]
        rl: f64,
        #[arg(long, default_value_t = 0.0)]
        rr: f64,
    },
}

#[derive(Debug, Subcommand)]
pub enum SysidCmd {
    /// Fit `(b, c)` per wheel and direction from a `wheel,pwm,omega` CSV.
    Fit {
        #[arg(long)]
        input: PathBuf,
    },
    /// PWM command for a wheel speed.
    #[command(allow_negative_numbers = true)]
    Pwm {
        #[arg(long)]
        wheel: Wheel,
        #[arg(long)]
        omega: f64,
        #[command(flatten)]
        params: ParamsArg,
    },
    /// Generate an identification dataset from a parameter table.
    SimulatePlant {
        #[command(flatten)]
        params: ParamsArg,
        /// Samples per wheel and direction.
        #[arg(long, default_value_t = 50)]
        per_group: usize,
        /// Standard deviation of the recorded PWM noise.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
    },
}

#[derive(Debug, Args)]
pub struct ParamsArg {
    /// Motor parameter table (default: config, then the bundled reference table).
    #[arg(long, value_name = "PATH")]
    pub params: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum FalldetCmd {
    /// Geometric rule on every detection.
    Rules {
        #[arg(long)]
        input: PathBuf,
    },
    /// Fall probability from a trained network.
    MlpInfer {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Train the classifier; weights go to `--output`.
    MlpTrain {
        /// Labelled keypoint file.
        #[arg(long, required_unless_present = "synthetic")]
        input: Option<PathBuf>,
        /// Train on this many generated poses instead.
        #[arg(long, conflicts_with = "input")]
        synthetic: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
}

#[derive(Debug, Subcommand)]
pub enum SimulateCmd {
    /// Track a circle with the motor plant. Without `--controller` both
    /// controllers run and a summary is printed.
    Circle {
        #[arg(long, value_parser = parse_controller)]
        controller: Option<ControllerKind>,
        #[command(flatten)]
        params: ParamsArg,
        /// Also write whitespace-separated `.dat` trajectories here.
        #[arg(long, value_name = "DIR")]
        plot_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum PipelineCmd {
    /// Classify the best candidate and emit a report.
    Run {
        /// Keypoint files, one per candidate, as `PATH` or `H:PATH`.
        #[arg(long, num_args = 1.., required_unless_present = "image", conflicts_with = "image")]
        keypoints: Vec<KeypointCandidate>,
        /// Robot-view image; needs `pipeline.adapter` in the config.
        #[arg(long)]
        image: Option<PathBuf>,
        /// Report time as RFC 3339 (default: now).
        #[arg(long)]
        timestamp: Option<String>,
        /// Directory receiving `fall_<timestamp>.json`.
        #[arg(long, value_name = "DIR", conflicts_with = "output")]
        spool: Option<PathBuf>,
        #[arg(long, value_parser = parse_classifier)]
        classifier: Option<ClassifierChoice>,
        #[arg(long)]
        weights: Option<PathBuf>,
    },
}

fn parse_controller(s: &str) -> Result<ControllerKind, String> {
    s.parse().map_err(|e: robofall_core::simulator::SimError| e.to_string())
}

fn parse_classifier(s: &str) -> Result<ClassifierChoice, String> {
    s.parse().map_err(|e: robofall_core::config::ConfigError| e.to_string())
}
