//! Exit codes. Every failure class has its own code so scripts can branch
//! on the status alone.
//!
//! | code | meaning |
//! |-----:|---------|
//! | 0  | success |
//! | 2  | unknown target |
//! | 3  | Dockerfile transform or image build failed |
//! | 4  | packing the container archive failed |
//! | 5  | submission failed (bad archive checksum, extraction, rendering, scheduler) |
//! | 6  | data staging failed (stage-in, or any stage-out entry) |
//! | 7  | unknown job id |
//! | 8  | job not in a terminal state |
//! | 9  | FOM table could not be parsed |
//! | 10 | config could not be read or is invalid |
//! | 11 | local I/O or job store problem |
//! | 12 | cluster session lost |
//! | 13 | cluster authentication failed |
//! | 64 | command-line usage error |

use std::fmt;

use easey::cluster::ClusterError;
use easey::config::ConfigError;
use easey::engine::EngineError;
use easey::imageprep::{ImageError, TransformError};
use easey::metrics::MetricsError;
use easey::targets::TargetError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    UnknownTarget = 2,
    BuildFailed = 3,
    PackFailed = 4,
    SubmitFailed = 5,
    StagingFailed = 6,
    UnknownJob = 7,
    NotTerminal = 8,
    ParseError = 9,
    Config = 10,
    Io = 11,
    SessionLost = 12,
    AuthFailed = 13,
    Usage = 64,
}

impl Exit {
    #[cfg_attr(not(test), allow(dead_code))]
    pub const ALL: [Exit; 13] = [
        Exit::UnknownTarget,
        Exit::BuildFailed,
        Exit::PackFailed,
        Exit::SubmitFailed,
        Exit::StagingFailed,
        Exit::UnknownJob,
        Exit::NotTerminal,
        Exit::ParseError,
        Exit::Config,
        Exit::Io,
        Exit::SessionLost,
        Exit::AuthFailed,
        Exit::Usage,
    ];

    pub fn code(self) -> i32 {
        self as i32
    }

    pub fn name(self) -> &'static str {
        match self {
            Exit::UnknownTarget => "UnknownTarget",
            Exit::BuildFailed => "BuildFailed",
            Exit::PackFailed => "PackFailed",
            Exit::SubmitFailed => "SubmitFailed",
            Exit::StagingFailed => "StagingFailed",
            Exit::UnknownJob => "UnknownJob",
            Exit::NotTerminal => "NotTerminal",
            Exit::ParseError => "ParseError",
            Exit::Config => "ConfigError",
            Exit::Io => "IoError",
            Exit::SessionLost => "SessionLost",
            Exit::AuthFailed => "AuthFailed",
            Exit::Usage => "UsageError",
        }
    }
}

/// A failure on its way out of `main`.
#[derive(Debug)]
pub struct CliError {
    pub exit: Exit,
    pub message: String,
}

impl CliError {
    pub fn new(exit: Exit, message: impl Into<String>) -> Self {
        CliError {
            exit,
            message: message.into(),
        }
    }

    pub fn io(context: impl fmt::Display, e: impl fmt::Display) -> Self {
        CliError::new(Exit::Io, format!("{context}: {e}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<TargetError> for CliError {
    fn from(e: TargetError) -> Self {
        let exit = match e {
            TargetError::UnknownTarget(_) => Exit::UnknownTarget,
            TargetError::DuplicateTarget { .. } | TargetError::ProfileParse { .. } => Exit::Config,
            TargetError::Io { .. } => Exit::Io,
        };
        CliError::new(exit, e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::new(Exit::Config, e.to_string())
    }
}

impl From<TransformError> for CliError {
    fn from(e: TransformError) -> Self {
        CliError::new(Exit::BuildFailed, e.to_string())
    }
}

impl From<ImageError> for CliError {
    fn from(e: ImageError) -> Self {
        let exit = match e {
            ImageError::BuildFailed { .. } | ImageError::BuilderUnavailable(_) => Exit::BuildFailed,
            ImageError::PackFailed(_) | ImageError::OutDirUnwritable { .. } => Exit::PackFailed,
        };
        CliError::new(exit, e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::new(Exit::ParseError, e.to_string())
    }
}

impl From<ClusterError> for CliError {
    fn from(e: ClusterError) -> Self {
        let exit = match e {
            ClusterError::SessionLost(_) => Exit::SessionLost,
            ClusterError::AuthFailed(_) => Exit::AuthFailed,
            ClusterError::Transfer(_) => Exit::StagingFailed,
        };
        CliError::new(exit, e.to_string())
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        let exit = match &e {
            EngineError::StagingFailed { .. } => Exit::StagingFailed,
            EngineError::ExtractFailed { .. }
            | EngineError::SubmitFailed { .. }
            | EngineError::ArchiveMismatch(_) => Exit::SubmitFailed,
            EngineError::InvalidConfig(_) => Exit::Config,
            EngineError::UnknownJob(_) => Exit::UnknownJob,
            EngineError::NotTerminal { .. } => Exit::NotTerminal,
            EngineError::SessionLost(_) => Exit::SessionLost,
            EngineError::AuthFailed(_) => Exit::AuthFailed,
            EngineError::StoreCorrupt { .. }
            | EngineError::Store(_)
            | EngineError::Interrupted(_) => Exit::Io,
        };
        CliError::new(exit, e.to_string())
    }
}
