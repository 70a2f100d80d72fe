//! Kinematic simulation of the chassis tracking a circle, used to compare a
//! controller built on the identified motor model with a naive linear one.
//!
//! The identified model `u = b / w + c` lives in the units of the
//! identification data, where an 8-bit command barely moves `w` (a few
//! percent of its idle value). The plant converts that change into wheel
//! speed in rad/s with an affine bridge referenced to the idle value:
//!
//! ```text
//! s(u) = k * sgn(b) * (w(0) - w(u)),   w(u) = b / (u - c)
//! ```
//!
//! so `s(0) = 0`, `s` keeps the sign of `u`, and the gain `k` is picked so the
//! fastest wheel at full command spins at `max_wheel_speed`. Both the plant
//! and the identified controller use the same bridge; only the curvature and
//! the per-wheel spread of `(b, c)` separate the two controllers.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{forward_kinematics, inverse_kinematics, BodyVelocity, ChassisGeometry, WheelSpeeds};
use crate::sysid::{quantize_pwm, Direction, MotorModel, MotorParams, SysIdError, Wheel, PWM_MAX};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("trajectory log is empty")]
    EmptyLog,
    #[error(transparent)]
    SysId(#[from] SysIdError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Planar pose in the world frame; `theta` is kept in `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RobotPose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl RobotPose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    /// Advances the pose by holding the body twist `v` constant for `dt`.
    pub fn step(&self, v: &BodyVelocity, dt: f64) -> Self {
        let dth = v.wz * dt;
        // displacement in the body frame at the start of the step
        let (bx, by) = if dth.abs() < 1e-9 {
            let half = 0.5 * dth;
            ((v.vx - v.vy * half) * dt, (v.vy + v.vx * half) * dt)
        } else {
            let (s, c) = dth.sin_cos();
            (
                (v.vx * s - v.vy * (1.0 - c)) / v.wz,
                (v.vx * (1.0 - c) + v.vy * s) / v.wz,
            )
        };
        let (s, c) = self.theta.sin_cos();
        Self::new(self.x + c * bx - s * by, self.y + s * bx + c * by, self.theta + dth)
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub pose: RobotPose,
}

/// Poses at `t = k * dt`, starting at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub dt: f64,
    pub samples: Vec<TrajectorySample>,
}

impl TrajectoryLog {
    pub fn last(&self) -> Option<&RobotPose> {
        self.samples.last().map(|s| &s.pose)
    }

    /// CSV with header `t,x,y,theta`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "x", "y", "theta"])?;
        for s in &self.samples {
            w.serialize((s.t, s.pose.x, s.pose.y, s.pose.theta))?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Turns desired wheel speeds (rad/s) into actuator commands.
pub trait WheelController {
    fn command(&self, desired: &WheelSpeeds) -> Result<[f64; 4], SimError>;
}

/// Turns actuator commands into the wheel speeds actually produced.
pub trait WheelPlant {
    fn respond(&self, command: &[f64; 4]) -> Result<WheelSpeeds, SimError>;
}

/// Commands are wheel speeds and are reproduced exactly.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdealActuation;

impl WheelController for IdealActuation {
    fn command(&self, desired: &WheelSpeeds) -> Result<[f64; 4], SimError> {
        Ok(desired.to_array())
    }
}

impl WheelPlant for IdealActuation {
    fn respond(&self, command: &[f64; 4]) -> Result<WheelSpeeds, SimError> {
        Ok(WheelSpeeds::from_array(*command))
    }
}

/// Idle-referenced speed for a command at unit bridge gain.
fn bridged(m: &MotorModel, pwm: f64) -> f64 {
    m.b.signum() * (m.b / -m.c - m.b / (pwm - m.c))
}

fn check_model(m: &MotorModel, wheel: Wheel, dir: Direction) -> Result<(), SimError> {
    if !(m.b.is_finite() && m.c.is_finite()) || m.b == 0.0 || m.c.abs() <= PWM_MAX {
        return Err(SimError::InvalidConfig(format!(
            "{wheel} {dir}: model b={}, c={} needs b != 0 and |c| > {PWM_MAX}",
            m.b, m.c
        )));
    }
    Ok(())
}

/// Gain that maps the fastest full-command wheel onto `max_wheel_speed`.
pub fn bridge_gain(params: &MotorParams, max_wheel_speed: f64) -> Result<f64, SimError> {
    if !(max_wheel_speed.is_finite() && max_wheel_speed > 0.0) {
        return Err(SimError::InvalidConfig(format!(
            "max wheel speed must be positive, got {max_wheel_speed}"
        )));
    }
    let mut top: f64 = 0.0;
    for wheel in Wheel::ALL {
        for dir in Direction::ALL {
            let m = params.require(wheel, dir)?;
            check_model(&m, wheel, dir)?;
            let u = match dir {
                Direction::Positive => PWM_MAX,
                Direction::Negative => -PWM_MAX,
            };
            top = top.max(bridged(&m, u).abs());
        }
    }
    Ok(max_wheel_speed / top)
}

/// Inverse motor model with integer PWM and 8-bit saturation.
#[derive(Debug, Clone)]
pub struct MotorPlant {
    params: MotorParams,
    gain: f64,
}

impl MotorPlant {
    pub fn new(params: &MotorParams, max_wheel_speed: f64) -> Result<Self, SimError> {
        Ok(Self {
            gain: bridge_gain(params, max_wheel_speed)?,
            params: params.clone(),
        })
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    /// Wheel speed in rad/s for a raw command.
    pub fn wheel_speed(&self, wheel: Wheel, pwm: f64) -> Result<f64, SimError> {
        let u = quantize_pwm(pwm);
        if u == 0.0 {
            return Ok(0.0);
        }
        let m = self.params.require(wheel, Direction::of(u))?;
        Ok(self.gain * bridged(&m, u))
    }
}

impl WheelPlant for MotorPlant {
    fn respond(&self, command: &[f64; 4]) -> Result<WheelSpeeds, SimError> {
        let mut out = [0.0; 4];
        for (wheel, (o, &u)) in Wheel::ALL.into_iter().zip(out.iter_mut().zip(command)) {
            *o = self.wheel_speed(wheel, u)?;
        }
        Ok(WheelSpeeds::from_array(out))
    }
}

/// Inverts the bridge, then applies `u = b / w + c` per wheel and direction.
#[derive(Debug, Clone)]
pub struct SysIdController {
    params: MotorParams,
    gain: f64,
}

impl SysIdController {
    pub fn new(params: &MotorParams, max_wheel_speed: f64) -> Result<Self, SimError> {
        Ok(Self {
            gain: bridge_gain(params, max_wheel_speed)?,
            params: params.clone(),
        })
    }

    pub fn pwm(&self, wheel: Wheel, speed: f64) -> Result<f64, SimError> {
        if speed == 0.0 {
            return Ok(0.0);
        }
        let m = self.params.require(wheel, Direction::of(speed))?;
        let w = m.b / -m.c - m.b.signum() * speed / self.gain;
        Ok(m.pwm(w).clamp(-PWM_MAX, PWM_MAX))
    }
}

impl WheelController for SysIdController {
    fn command(&self, desired: &WheelSpeeds) -> Result<[f64; 4], SimError> {
        let mut out = [0.0; 4];
        for (wheel, (o, &s)) in Wheel::ALL.into_iter().zip(out.iter_mut().zip(&desired.to_array())) {
            *o = self.pwm(wheel, s)?;
        }
        Ok(out)
    }
}

/// `u = slope * w` for every wheel, saturated.
#[derive(Debug, Clone, Copy)]
pub struct LinearController {
    pub slope: f64,
}

impl LinearController {
    /// Slope from the full PWM range over the full wheel-speed range.
    pub fn from_range(max_wheel_speed: f64) -> Self {
        Self {
            slope: PWM_MAX / max_wheel_speed,
        }
    }
}

impl WheelController for LinearController {
    fn command(&self, desired: &WheelSpeeds) -> Result<[f64; 4], SimError> {
        Ok(desired.to_array().map(|s| (self.slope * s).clamp(-PWM_MAX, PWM_MAX)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    WithSysid,
    WithoutSysid,
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::WithSysid => "with_sysid",
            Self::WithoutSysid => "without_sysid",
        })
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "with_sysid" => Ok(Self::WithSysid),
            "without_sysid" => Ok(Self::WithoutSysid),
            _ => Err(SimError::InvalidConfig(format!("unknown controller {s:?}"))),
        }
    }
}

/// A constant-speed counter-clockwise circle (clockwise for negative
/// `angular_speed`) starting at `initial_pose`, tangent to its heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CircleTask {
    pub radius: f64,
    pub angular_speed: f64,
    pub duration: f64,
    pub dt: f64,
    /// Wheel speed (rad/s) the plant reaches at full command.
    pub max_wheel_speed: f64,
    pub initial_pose: RobotPose,
}

impl Default for CircleTask {
    fn default() -> Self {
        Self {
            radius: 0.65,
            angular_speed: 0.3,
            duration: 2.0 * PI / 0.3,
            dt: 0.05,
            max_wheel_speed: 12.0,
            initial_pose: RobotPose::default(),
        }
    }
}

impl CircleTask {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return bad(format!("radius must be positive, got {}", self.radius));
        }
        if !(self.dt > 0.0 && self.dt <= 0.5) {
            return bad(format!("dt must lie in (0, 0.5], got {}", self.dt));
        }
        if !self.angular_speed.is_finite() || !self.duration.is_finite() {
            return bad("angular speed and duration must be finite".into());
        }
        if self.angular_speed != 0.0 {
            let rev = 2.0 * PI / self.angular_speed.abs();
            if self.duration < rev * (1.0 - 1e-9) {
                return bad(format!(
                    "duration {} s is shorter than one revolution ({rev} s)",
                    self.duration
                ));
            }
        } else if self.duration < 0.0 {
            return bad(format!("negative duration {}", self.duration));
        }
        let p = self.initial_pose;
        if !(p.x.is_finite() && p.y.is_finite() && p.theta.is_finite()) {
            return bad("initial pose must be finite".into());
        }
        Ok(())
    }

    /// Commanded circle centre, on the turning side of the initial heading.
    pub fn center(&self) -> (f64, f64) {
        let side = if self.angular_speed < 0.0 { -1.0 } else { 1.0 };
        let (s, c) = self.initial_pose.theta.sin_cos();
        (
            self.initial_pose.x - side * self.radius * s,
            self.initial_pose.y + side * self.radius * c,
        )
    }

    pub fn body_velocity(&self) -> BodyVelocity {
        BodyVelocity::new(self.radius * self.angular_speed, 0.0, self.angular_speed)
    }

    fn steps(&self) -> usize {
        (self.duration / self.dt - 1e-9).ceil().max(0.0) as usize
    }
}

/// Runs the circle task through any controller and plant.
pub fn simulate(
    controller: &dyn WheelController,
    plant: &dyn WheelPlant,
    task: &CircleTask,
    geometry: &ChassisGeometry,
) -> Result<TrajectoryLog, SimError> {
    task.validate()?;
    let n = task.steps();
    let desired = inverse_kinematics(&task.body_velocity(), geometry);
    let mut pose = RobotPose::new(task.initial_pose.x, task.initial_pose.y, task.initial_pose.theta);
    let mut samples = Vec::with_capacity(n + 1);
    samples.push(TrajectorySample { t: 0.0, pose });
    for k in 1..=n {
        let u = controller.command(&desired)?;
        let actual = plant.respond(&u)?;
        pose = pose.step(&forward_kinematics(&actual, geometry), task.dt);
        samples.push(TrajectorySample {
            t: k as f64 * task.dt,
            pose,
        });
    }
    Ok(TrajectoryLog { dt: task.dt, samples })
}

/// The circle task on the identified motor plant with either controller.
pub fn simulate_circle(
    plant: &MotorParams,
    controller: ControllerKind,
    task: &CircleTask,
    geometry: &ChassisGeometry,
) -> Result<TrajectoryLog, SimError> {
    task.validate()?;
    let motor = MotorPlant::new(plant, task.max_wheel_speed)?;
    match controller {
        ControllerKind::WithSysid => {
            let c = SysIdController::new(plant, task.max_wheel_speed)?;
            simulate(&c, &motor, task, geometry)
        }
        ControllerKind::WithoutSysid => simulate(
            &LinearController::from_range(task.max_wheel_speed),
            &motor,
            task,
            geometry,
        ),
    }
}

/// Root mean square of each sample's distance from `center` minus `radius`.
pub fn rms_radial_deviation(log: &TrajectoryLog, radius: f64, center: (f64, f64)) -> Result<f64, SimError> {
    if log.samples.is_empty() {
        return Err(SimError::EmptyLog);
    }
    let sum: f64 = log
        .samples
        .iter()
        .map(|s| {
            let d = (s.pose.x - center.0).hypot(s.pose.y - center.1) - radius;
            d * d
        })
        .sum();
    Ok((sum / log.samples.len() as f64).sqrt())
}

/// Both controllers on the same plant and task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ControllerComparison {
    pub with_sysid_rms: f64,
    pub without_sysid_rms: f64,
    /// `without / with`; larger means the identified model helps more.
    pub ratio: f64,
}

impl fmt::Display for ControllerComparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "with_sysid_rms = {}", self.with_sysid_rms)?;
        writeln!(f, "without_sysid_rms = {}", self.without_sysid_rms)?;
        writeln!(f, "ratio = {}", self.ratio)
    }
}

pub fn compare_controllers(
    plant: &MotorParams,
    task: &CircleTask,
    geometry: &ChassisGeometry,
) -> Result<ControllerComparison, SimError> {
    let center = task.center();
    let with = simulate_circle(plant, ControllerKind::WithSysid, task, geometry)?;
    let without = simulate_circle(plant, ControllerKind::WithoutSysid, task, geometry)?;
    let with_sysid_rms = rms_radial_deviation(&with, task.radius, center)?;
    let without_sysid_rms = rms_radial_deviation(&without, task.radius, center)?;
    Ok(ControllerComparison {
        with_sysid_rms,
        without_sysid_rms,
        ratio: without_sysid_rms / with_sysid_rms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log_of(points: &[(f64, f64)]) -> TrajectoryLog {
        TrajectoryLog {
            dt: 1.0,
            samples: points
                .iter()
                .enumerate()
                .map(|(i, &(x, y))| TrajectorySample {
                    t: i as f64,
                    pose: RobotPose::new(x, y, 0.0),
                })
                .collect(),
        }
    }

    #[test]
    fn rms_examples() {
        let on: Vec<_> = (0..8)
            .map(|k| {
                let a = k as f64 * PI / 4.0;
                (1.0 + 2.0 * a.cos(), -1.0 + 2.0 * a.sin())
            })
            .collect();
        assert!(rms_radial_deviation(&log_of(&on), 2.0, (1.0, -1.0)).unwrap() < 1e-12);
        let at_center = log_of(&[(0.0, 0.0); 5]);
        assert_eq!(rms_radial_deviation(&at_center, 0.65, (0.0, 0.0)).unwrap(), 0.65);
        let pair = log_of(&[(1.1, 0.0), (0.0, -0.9)]);
        assert!((rms_radial_deviation(&pair, 1.0, (0.0, 0.0)).unwrap() - 0.1).abs() < 1e-12);
        assert!(matches!(
            rms_radial_deviation(&log_of(&[]), 1.0, (0.0, 0.0)),
            Err(SimError::EmptyLog)
        ));
    }

    #[test]
    fn wrap_is_half_open() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn ideal_actuation_tracks_circle() {
        let task = CircleTask {
            dt: 0.01,
            ..CircleTask::default()
        };
        let log = simulate(&IdealActuation, &IdealActuation, &task, &ChassisGeometry::default()).unwrap();
        let rms = rms_radial_deviation(&log, task.radius, task.center()).unwrap();
        assert!(rms < 1e-3, "rms {rms}");
        for w in log.samples.windows(2) {
            assert!(w[1].t > w[0].t);
        }
    }

    #[test]
    fn zero_command_is_stationary() {
        let task = CircleTask {
            angular_speed: 0.0,
            duration: 3.0,
            ..CircleTask::default()
        };
        for kind in [ControllerKind::WithSysid, ControllerKind::WithoutSysid] {
            let log = simulate_circle(&MotorParams::reference(), kind, &task, &ChassisGeometry::default()).unwrap();
            assert_eq!(log.samples.len(), 61);
            assert!(log.samples.iter().all(|s| s.pose == task.initial_pose));
        }
    }

    #[test]
    fn identified_controller_beats_linear() {
        let cmp = compare_controllers(
            &MotorParams::reference(),
            &CircleTask::default(),
            &ChassisGeometry::default(),
        )
        .unwrap();
        assert!(cmp.with_sysid_rms < 0.08, "{cmp}");
        assert!(cmp.with_sysid_rms * 3.0 <= cmp.without_sysid_rms, "{cmp}");
    }

    #[test]
    fn sysid_controller_inverts_plant() {
        let params = MotorParams::reference();
        let plant = MotorPlant::new(&params, 12.0).unwrap();
        let ctl = SysIdController::new(&params, 12.0).unwrap();
        for wheel in Wheel::ALL {
            for s in [-8.0, -2.5, 0.7, 4.0, 8.0] {
                let u = ctl.pwm(wheel, s).unwrap();
                // exact before quantization
                let m = params.require(wheel, Direction::of(u)).unwrap();
                assert!((plant.gain() * bridged(&m, u) - s).abs() < 1e-9);
                // quantized plant output is within one PWM step
                let got = plant.wheel_speed(wheel, u).unwrap();
                assert!((got - s).abs() < 0.06, "{wheel} {s} {got}");
            }
        }
    }

    #[test]
    fn full_command_reaches_max_speed() {
        let plant = MotorPlant::new(&MotorParams::reference(), 12.0).unwrap();
        let top = Wheel::ALL
            .into_iter()
            .flat_map(|w| [255.0, -255.0].map(|u| plant.wheel_speed(w, u).unwrap().abs()))
            .fold(0.0, f64::max);
        assert!((top - 12.0).abs() < 1e-12);
        assert_eq!(plant.wheel_speed(Wheel::FL, 0.4).unwrap(), 0.0);
        assert!(plant.wheel_speed(Wheel::RR, -40.0).unwrap() < 0.0);
    }

    #[test]
    fn invalid_tasks() {
        let g = ChassisGeometry::default();
        let p = MotorParams::reference();
        let short = CircleTask {
            duration: 5.0,
            ..CircleTask::default()
        };
        let slow = CircleTask {
            dt: 0.6,
            ..CircleTask::default()
        };
        let flat = CircleTask {
            radius: 0.0,
            ..CircleTask::default()
        };
        for t in [short, slow, flat] {
            assert!(matches!(
                simulate_circle(&p, ControllerKind::WithSysid, &t, &g),
                Err(SimError::InvalidConfig(_))
            ));
        }
        assert!(matches!(
            simulate_circle(
                &MotorParams::new(),
                ControllerKind::WithSysid,
                &CircleTask::default(),
                &g
            ),
            Err(SimError::SysId(SysIdError::MissingParams { .. }))
        ));
    }

    #[test]
    fn csv_header_and_rows() {
        let mut out = Vec::new();
        log_of(&[(0.0, 0.0), (1.0, 2.0)]).write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().next(), Some("t,x,y,theta"));
        assert_eq!(text.lines().count(), 3);
    }
}
