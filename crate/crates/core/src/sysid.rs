//! Motor identification for the inverse PWM model `u = b / omega + c`.
//!
//! Each wheel has an independent `(b, c)` pair per rotation direction. The
//! sign of `omega` (or of the PWM command, when inverting) alone selects the
//! direction group. Velocities are in the units of the identification
//! dataset; nothing here assumes rad/s.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Speeds with magnitude below this are treated as standstill.
pub const OMEGA_MIN: f64 = 1e-3;
/// Largest 8-bit PWM magnitude.
pub const PWM_MAX: f64 = 255.0;
const INVERSION_TOL: f64 = 1e-9;

const REFERENCE_PARAMS: &str = include_str!("../fixtures/motor_params.toml");

#[derive(Debug, Error)]
pub enum SysIdError {
    #[error("no parameters for wheel {wheel} ({direction} direction)")]
    MissingParams { wheel: Wheel, direction: Direction },
    #[error("wheel {wheel} ({direction}): need at least 2 samples, have {count}")]
    InsufficientData {
        wheel: Wheel,
        direction: Direction,
        count: usize,
    },
    #[error("wheel {wheel} ({direction}): all samples share the same speed")]
    DegenerateRegressor { wheel: Wheel, direction: Direction },
    #[error("no wheel/direction group could be fitted")]
    NothingFitted { issues: Vec<SysIdError> },
    #[error("pwm {pwm} coincides with offset c = {c} for wheel {wheel}")]
    SingularInversion { wheel: Wheel, pwm: f64, c: f64 },
    #[error("invalid sample on row {row}: {reason}")]
    InvalidSample { row: usize, reason: String },
    #[error("parameter file: {0}")]
    Parse(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Wheel {
    FL,
    FR,
    RL,
    RR,
}

impl Wheel {
    pub const ALL: [Wheel; 4] = [Wheel::FL, Wheel::FR, Wheel::RL, Wheel::RR];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Wheel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Wheel::FL => "FL",
            Wheel::FR => "FR",
            Wheel::RL => "RL",
            Wheel::RR => "RR",
        })
    }
}

impl FromStr for Wheel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "FL" => Ok(Wheel::FL),
            "FR" => Ok(Wheel::FR),
            "RL" => Ok(Wheel::RL),
            "RR" => Ok(Wheel::RR),
            other => Err(format!("unknown wheel {other:?} (expected FL, FR, RL or RR)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Positive,
    Negative,
}

impl Direction {
    pub const ALL: [Direction; 2] = [Direction::Positive, Direction::Negative];

    /// Positive for `value > 0`, negative otherwise.
    pub fn of(value: f64) -> Direction {
        if value > 0.0 {
            Direction::Positive
        } else {
            Direction::Negative
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Positive => "positive",
            Direction::Negative => "negative",
        })
    }
}

/// One `(b, c)` pair of the inverse model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotorModel {
    pub b: f64,
    pub c: f64,
}

impl MotorModel {
    /// Unclamped `b / omega + c`.
    pub fn pwm(&self, omega: f64) -> f64 {
        self.b / omega + self.c
    }

    /// `b / (pwm - c)`; `None` when `pwm` sits on the pole.
    pub fn speed(&self, pwm: f64) -> Option<f64> {
        let denom = pwm - self.c;
        (denom.abs() > INVERSION_TOL).then(|| self.b / denom)
    }
}

/// Fitted parameters for every wheel and direction that had usable data.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MotorParams {
    groups: [[Option<MotorModel>; 2]; 4],
}

impl MotorParams {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parameters identified on the reference robot (see `fixtures/motor_params.toml`).
    pub fn reference() -> Self {
        REFERENCE_PARAMS
            .parse()
            .expect("bundled motor parameter fixture is valid")
    }

    pub fn get(&self, wheel: Wheel, direction: Direction) -> Option<MotorModel> {
        self.groups[wheel.index()][direction as usize]
    }

    pub fn set(&mut self, wheel: Wheel, direction: Direction, model: MotorModel) {
        self.groups[wheel.index()][direction as usize] = Some(model);
    }

    pub fn require(&self, wheel: Wheel, direction: Direction) -> Result<MotorModel, SysIdError> {
        self.get(wheel, direction)
            .ok_or(SysIdError::MissingParams { wheel, direction })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SysIdError> {
        std::fs::read_to_string(path)?.parse()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SysIdError> {
        std::fs::write(path, self.to_string())?;
        Ok(())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsFile {
    positive: Option<DirectionTable>,
    negative: Option<DirectionTable>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DirectionTable {
    b: BTreeMap<Wheel, f64>,
    c: BTreeMap<Wheel, f64>,
    #[serde(default)]
    #[allow(dead_code)]
    rms: BTreeMap<Wheel, f64>,
}

impl FromStr for MotorParams {
    type Err = SysIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let file: ParamsFile = toml::from_str(s).map_err(|e| SysIdError::Parse(e.to_string()))?;
        let mut params = MotorParams::new();
        for (direction, table) in [
            (Direction::Positive, file.positive),
            (Direction::Negative, file.negative),
        ] {
            let Some(table) = table else { continue };
            for wheel in Wheel::ALL {
                match (table.b.get(&wheel), table.c.get(&wheel)) {
                    (Some(&b), Some(&c)) => {
                        if !b.is_finite() || !c.is_finite() || b == 0.0 {
                            return Err(SysIdError::Parse(format!(
                                "{direction} {wheel}: b must be finite and nonzero, c finite"
                            )));
                        }
                        params.set(wheel, direction, MotorModel { b, c });
                    }
                    (None, None) => {}
                    _ => {
                        return Err(SysIdError::Parse(format!(
                            "{direction} {wheel}: b and c must be given together"
                        )))
                    }
                }
            }
        }
        Ok(params)
    }
}

impl fmt::Display for MotorParams {
    /// Table layout: one section per direction, one inline table per parameter.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for direction in Direction::ALL {
            let fitted: Vec<(Wheel, MotorModel)> = Wheel::ALL
                .into_iter()
                .filter_map(|w| self.get(w, direction).map(|m| (w, m)))
                .collect();
            if fitted.is_empty() {
                continue;
            }
            if !first {
                writeln!(f)?;
            }
            first = false;
            writeln!(f, "[{direction}]")?;
            for (name, pick) in [("b", 0), ("c", 1)] {
                let mut line = String::new();
                for (i, (wheel, m)) in fitted.iter().enumerate() {
                    if i > 0 {
                        line.push_str(", ");
                    }
                    let v = if pick == 0 { m.b } else { m.c };
                    write!(line, "{wheel} = {v:?}")?;
                }
                writeln!(f, "{name} = {{ {line} }}")?;
            }
        }
        Ok(())
    }
}

/// PWM command for a wheel to spin at `omega`, clamped to `[-255, 255]`.
/// Speeds inside the standstill deadband map to zero.
pub fn pwm_for_speed(params: &MotorParams, wheel: Wheel, omega: f64) -> Result<f64, SysIdError> {
    if !(omega.abs() >= OMEGA_MIN) {
        return Ok(0.0);
    }
    let model = params.require(wheel, Direction::of(omega))?;
    Ok(model.pwm(omega).clamp(-PWM_MAX, PWM_MAX))
}

/// Algebraic inverse of the model: the speed that `pwm` produces.
pub fn speed_for_pwm(params: &MotorParams, wheel: Wheel, pwm: f64) -> Result<f64, SysIdError> {
    if pwm == 0.0 {
        return Ok(0.0);
    }
    let model = params.require(wheel, Direction::of(pwm))?;
    model
        .speed(pwm)
        .ok_or(SysIdError::SingularInversion { wheel, pwm, c: model.c })
}

/// What the motor driver actually receives: `pwm` rounded to an integer and
/// saturated at the 8-bit range.
pub fn quantize_pwm(pwm: f64) -> f64 {
    pwm.round().clamp(-PWM_MAX, PWM_MAX)
}

/// One identification measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SysIdSample {
    pub wheel: Wheel,
    pub pwm: i32,
    pub omega: f64,
}

impl SysIdSample {
    pub fn new(wheel: Wheel, pwm: i32, omega: f64) -> Self {
        Self { wheel, pwm, omega }
    }
}

/// Reads a `wheel,pwm,omega` CSV dataset.
pub fn read_samples<R: Read>(reader: R) -> Result<Vec<SysIdSample>, SysIdError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<SysIdSample>().enumerate() {
        let sample = rec?;
        let row = i + 2;
        if sample.pwm.unsigned_abs() > PWM_MAX as u32 {
            return Err(SysIdError::InvalidSample {
                row,
                reason: format!("pwm {} outside [-255, 255]", sample.pwm),
            });
        }
        if !sample.omega.is_finite() {
            return Err(SysIdError::InvalidSample {
                row,
                reason: "omega is not finite".into(),
            });
        }
        out.push(sample);
    }
    Ok(out)
}

pub fn write_samples<W: std::io::Write>(writer: W, samples: &[SysIdSample]) -> Result<(), SysIdError> {
    let mut w = csv::Writer::from_writer(writer);
    for s in samples {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupFit {
    pub wheel: Wheel,
    pub direction: Direction,
    pub model: MotorModel,
    pub residual_rms: f64,
    pub samples: usize,
}

#[derive(Debug)]
pub struct FitReport {
    pub params: MotorParams,
    pub groups: Vec<GroupFit>,
    /// Groups that were present in the data but could not be fitted.
    pub skipped: Vec<SysIdError>,
}

/// Least-squares fit of `u = b * (1/omega) + c` for every wheel/direction
/// group present in `samples`. Samples inside the standstill deadband are
/// ignored. Groups with too little data are skipped and listed in the
/// report; the call fails only when nothing could be fitted.
pub fn fit(samples: &[SysIdSample]) -> Result<FitReport, SysIdError> {
    let mut buckets: BTreeMap<(Wheel, Direction), Vec<(f64, f64)>> = BTreeMap::new();
    for s in samples.iter().filter(|s| s.omega.abs() >= OMEGA_MIN) {
        buckets
            .entry((s.wheel, Direction::of(s.omega)))
            .or_default()
            .push((1.0 / s.omega, s.pwm as f64));
    }

    let mut report = FitReport {
        params: MotorParams::new(),
        groups: Vec::new(),
        skipped: Vec::new(),
    };
    for ((wheel, direction), mut points) in buckets {
        match fit_group(&mut points) {
            Ok((model, residual_rms)) => {
                report.params.set(wheel, direction, model);
                report.groups.push(GroupFit {
                    wheel,
                    direction,
                    model,
                    residual_rms,
                    samples: points.len(),
                });
            }
            Err(GroupIssue::TooFew(count)) => report.skipped.push(SysIdError::InsufficientData {
                wheel,
                direction,
                count,
            }),
            Err(GroupIssue::Degenerate) => report
                .skipped
                .push(SysIdError::DegenerateRegressor { wheel, direction }),
        }
    }
    if report.groups.is_empty() {
        return Err(SysIdError::NothingFitted { issues: report.skipped });
    }
    Ok(report)
}

/// Identification run against a known parameter table: for every fitted
/// group, `per_group` PWM commands spread evenly over `10..=255` (signed by
/// the direction) and the speed the model predicts for each. With
/// `pwm_sigma > 0` the recorded PWM gets Gaussian noise, then rounding and
/// clamping, as a sloppy logger would.
pub fn synthetic_samples(
    params: &MotorParams,
    per_group: usize,
    pwm_sigma: f64,
    seed: u64,
) -> Result<Vec<SysIdSample>, SysIdError> {
    let noise = Normal::new(0.0, pwm_sigma.max(0.0)).map_err(|e| SysIdError::Parse(format!("pwm noise: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(8 * per_group);
    for wheel in Wheel::ALL {
        for direction in Direction::ALL {
            let Some(model) = params.get(wheel, direction) else {
                continue;
            };
            let sign = match direction {
                Direction::Positive => 1.0,
                Direction::Negative => -1.0,
            };
            for i in 0..per_group {
                let frac = if per_group > 1 {
                    i as f64 / (per_group - 1) as f64
                } else {
                    1.0
                };
                let u = sign * (10.0 + 245.0 * frac).round();
                let Some(omega) = model.speed(u) else {
                    return Err(SysIdError::SingularInversion {
                        wheel,
                        pwm: u,
                        c: model.c,
                    });
                };
                let recorded = if pwm_sigma > 0.0 {
                    quantize_pwm(u + noise.sample(&mut rng))
                } else {
                    u
                };
                out.push(SysIdSample::new(wheel, recorded as i32, omega));
            }
        }
    }
    Ok(out)
}

enum GroupIssue {
    TooFew(usize),
    Degenerate,
}

/// Centred normal equations for a line through `(x, u)` points.
fn fit_group(points: &mut [(f64, f64)]) -> Result<(MotorModel, f64), GroupIssue> {
    if points.len() < 2 {
        return Err(GroupIssue::TooFew(points.len()));
    }
    // fixed summation order makes the result independent of input order
    points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let n = points.len() as f64;
    let x_mean = points.iter().map(|p| p.0).sum::<f64>() / n;
    let u_mean = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - x_mean).powi(2)).sum();
    let sxu: f64 = points.iter().map(|p| (p.0 - x_mean) * (p.1 - u_mean)).sum();
    let scale = points.iter().map(|p| p.0.abs()).fold(0.0, f64::max);
    if sxx <= (1e-12 * scale).powi(2) * n {
        return Err(GroupIssue::Degenerate);
    }
    let b = sxu / sxx;
    let c = u_mean - b * x_mean;
    let sse: f64 = points.iter().map(|p| (p.1 - (b * p.0 + c)).powi(2)).sum();
    Ok((MotorModel { b, c }, (sse / n).sqrt()))
}
