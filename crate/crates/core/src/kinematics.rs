//! Four-wheel mecanum kinematics.
//!
//! Body frame: `vx` forward, `vy` to the left, `wz` counter-clockwise. Wheel
//! speeds are angular velocities in rad/s, positive when driving forward.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum KinematicsError {
    #[error("invalid chassis geometry: wheel radius {wheel_radius}, robot radius {robot_radius}")]
    InvalidGeometry { wheel_radius: f64, robot_radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BodyVelocity {
    pub vx: f64,
    pub vy: f64,
    pub wz: f64,
}

impl BodyVelocity {
    pub const fn new(vx: f64, vy: f64, wz: f64) -> Self {
        Self { vx, vy, wz }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WheelSpeeds {
    pub fl: f64,
    pub fr: f64,
    pub rl: f64,
    pub rr: f64,
}

impl WheelSpeeds {
    pub const fn new(fl: f64, fr: f64, rl: f64, rr: f64) -> Self {
        Self { fl, fr, rl, rr }
    }

    /// In `Wheel::ALL` order: FL, FR, RL, RR.
    pub fn to_array(self) -> [f64; 4] {
        [self.fl, self.fr, self.rl, self.rr]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

/// Wheel radius `r` and the distance `R` from the chassis centre used by the
/// rotational term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChassisGeometry {
    wheel_radius: f64,
    robot_radius: f64,
}

impl ChassisGeometry {
    pub fn new(wheel_radius: f64, robot_radius: f64) -> Result<Self, KinematicsError> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !ok(wheel_radius) || !ok(robot_radius) {
            return Err(KinematicsError::InvalidGeometry {
                wheel_radius,
                robot_radius,
            });
        }
        Ok(Self {
            wheel_radius,
            robot_radius,
        })
    }

    pub fn wheel_radius(&self) -> f64 {
        self.wheel_radius
    }

    pub fn robot_radius(&self) -> f64 {
        self.robot_radius
    }
}

impl Default for ChassisGeometry {
    fn default() -> Self {
        Self {
            wheel_radius: 0.04,
            robot_radius: 0.15,
        }
    }
}

pub fn inverse_kinematics(v: &BodyVelocity, g: &ChassisGeometry) -> WheelSpeeds {
    let r = g.wheel_radius;
    let spin = g.robot_radius * v.wz;
    WheelSpeeds {
        fl: (v.vx + v.vy - spin) / r,
        fr: (v.vx - v.vy + spin) / r,
        rl: (v.vx - v.vy - spin) / r,
        rr: (v.vx + v.vy + spin) / r,
    }
}

/// Least-squares inverse of [`inverse_kinematics`] (exact for consistent
/// wheel speeds).
pub fn forward_kinematics(w: &WheelSpeeds, g: &ChassisGeometry) -> BodyVelocity {
    let r = g.wheel_radius;
    BodyVelocity {
        vx: r * (w.fl + w.fr + w.rl + w.rr) / 4.0,
        vy: r * (w.fl - w.fr - w.rl + w.rr) / 4.0,
        wz: r * (-w.fl + w.fr - w.rl + w.rr) / (4.0 * g.robot_radius),
    }
}
