//! Exit-status taxonomy: 0 success, 2 configuration/IO/usage, 3 degenerate
//! data, 4 rank-deficient solver.

use std::fmt;

use supportcal::refine::RefineError;
use supportcal::scene_sim::SceneError;
use supportcal::support_map::SupportMapError;
use supportcal::{AnalysisError, Error, GeometryError};

pub const USAGE: u8 = 2;
pub const DEGENERATE: u8 = 3;
pub const RANK_DEFICIENT: u8 = 4;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Core(Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) | CliError::Io(msg) => f.write_str(msg),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl<E: Into<Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Io(_) => USAGE,
            CliError::Core(e) => core_code(e),
        }
    }
}

fn core_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => USAGE,
        Error::Geometry(g) => match g {
            GeometryError::InvalidRotation { .. } | GeometryError::InvalidIntrinsics(_) => USAGE,
            _ => DEGENERATE,
        },
        Error::Scene(s) => match s {
            SceneError::NoVisiblePoints | SceneError::UnknownClass { .. } | SceneError::DuplicatePoint(_) => DEGENERATE,
            _ => USAGE,
        },
        Error::SupportMap(m) => match m {
            SupportMapError::AllZeroMap | SupportMapError::InvalidScore(_) => DEGENERATE,
            _ => USAGE,
        },
        Error::Refine(r) => match r {
            RefineError::RankDeficient => RANK_DEFICIENT,
            RefineError::InvalidOptions(_) => USAGE,
            _ => DEGENERATE,
        },
        Error::Analysis(a) => match a {
            AnalysisError::Io { .. } => USAGE,
            _ => DEGENERATE,
        },
    }
}
