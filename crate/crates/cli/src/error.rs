use std::fmt;

use steerlabel::odometry::OdometryError;
use steerlabel::pipeline::PipelineError;
use steerlabel::ssrl::SsrlError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or overrides.
    Usage(String),
    /// Unreadable, malformed or mismatched inputs.
    Data(String),
    /// A computation that did not converge or lost its footing.
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Data(m) => write!(f, "{m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

fn odometry_is_numerical(e: &OdometryError) -> bool {
    matches!(
        e,
        OdometryError::InsufficientOverlap { .. } | OdometryError::DegenerateGeometry(_)
    )
}

impl From<OdometryError> for CliError {
    fn from(e: OdometryError) -> Self {
        if odometry_is_numerical(&e) {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Odometry(inner) => inner.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<SsrlError> for CliError {
    fn from(e: SsrlError) -> Self {
        match e {
            SsrlError::NonConvergence { .. } | SsrlError::Diverged { .. } => CliError::Numerical(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<steerlabel::simulator::SimError> for CliError {
    fn from(e: steerlabel::simulator::SimError) -> Self {
        CliError::Data(e.to_string())
    }
}
