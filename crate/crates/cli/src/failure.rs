//! Every failure leaves the process with a status above 10, so scripts can
//! tell errors apart from the 0 / 10 alarm states. The pipeline's own codes
//! (11 no candidates, 14 pose extractor) come from the core crate.

use std::fmt;

use robofall_core::config::ConfigError;
use robofall_core::falldet::FallDetError;
use robofall_core::kinematics::KinematicsError;
use robofall_core::pipeline::PipelineError;
use robofall_core::projective::GeometryError;
use robofall_core::simulator::SimError;
use robofall_core::sysid::SysIdError;

/// Malformed or unusable input data.
pub const EXIT_DATA: u8 = 12;
/// Bad configuration, parameters or geometry.
pub const EXIT_CONFIG: u8 = 13;
pub const EXIT_IO: u8 = 15;
/// Command-line usage errors.
pub const EXIT_USAGE: u8 = 16;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn context(mut self, path: &std::path::Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }

    pub fn io(context: impl fmt::Display, e: std::io::Error) -> Self {
        Self::new(EXIT_IO, format!("{context}: {e}"))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let code = u8::try_from(e.exit_code()).unwrap_or(EXIT_CONFIG);
        Self::new(code, e.to_string())
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        let code = match e {
            ConfigError::Io { .. } => EXIT_IO,
            _ => EXIT_CONFIG,
        };
        Self::new(code, e.to_string())
    }
}

impl From<GeometryError> for Failure {
    fn from(e: GeometryError) -> Self {
        let code = match e {
            GeometryError::Io(_) => EXIT_IO,
            GeometryError::Parse(_) | GeometryError::Image(_) | GeometryError::InvalidImage(_) => EXIT_DATA,
            _ => EXIT_CONFIG,
        };
        Self::new(code, e.to_string())
    }
}

impl From<KinematicsError> for Failure {
    fn from(e: KinematicsError) -> Self {
        Self::new(EXIT_CONFIG, e.to_string())
    }
}

impl From<SysIdError> for Failure {
    fn from(e: SysIdError) -> Self {
        let code = match e {
            SysIdError::Io(_) => EXIT_IO,
            SysIdError::MissingParams { .. } | SysIdError::SingularInversion { .. } | SysIdError::Parse(_) => {
                EXIT_CONFIG
            }
            _ => EXIT_DATA,
        };
        Self::new(code, e.to_string())
    }
}

impl From<FallDetError> for Failure {
    fn from(e: FallDetError) -> Self {
        let code = match e {
            FallDetError::Io(_) => EXIT_IO,
            _ => EXIT_DATA,
        };
        Self::new(code, e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::SysId(e) => e.into(),
            SimError::Csv(e) => Self::new(EXIT_IO, e.to_string()),
            e => Self::new(EXIT_CONFIG, e.to_string()),
        }
    }
}
