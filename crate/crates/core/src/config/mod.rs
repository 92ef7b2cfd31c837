//! The four-part job description: `job`, `data`, `deployment` and
//! `execution`.
//!
//! Documents are JSON. Integer fields accept either JSON integers or decimal
//! strings (`"nodes": "46"`), and an empty `ram` string means "no memory
//! request". The strict reader wants `execution` as an array of single-key
//! step objects; [`parse_config_lax`] additionally accepts the older layout
//! where sections are nested under `job`, steps are repeated keys of one
//! object, trailing commas appear and closing brackets are missing at the
//! end.

mod parse;
mod serialize;
mod tree;
mod validate;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::{parse_config, parse_config_lax, parse_unchecked};
pub use serialize::{assign_job_id, canonical_bytes, to_json_string, to_json_value};
pub use validate::{validate, Severity, ValidationReport, Violation};

/// Mount point used for the data folder when a config has no `data` section.
pub const DEFAULT_MOUNT: &str = "/data";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EaseyConfig {
    pub job: JobMeta,
    pub data: Option<DataSpec>,
    pub deployment: DeploymentSpec,
    pub execution: ExecutionSpec,
}

impl EaseyConfig {
    /// Container path the data folder is mounted at.
    pub fn mount(&self) -> &str {
        self.data
            .as_ref()
            .map(|d| d.mount.as_str())
            .unwrap_or(DEFAULT_MOUNT)
    }

    /// Charliecloud image name derived from the job name: lowercase, with
    /// anything outside `[a-z0-9_.-]` mapped to `.`. `LULESH:DASH` becomes
    /// `lulesh.dash`.
    pub fn image_name(&self) -> String {
        let name: String = self
            .job
            .name
            .chars()
            .map(|c| {
                let c = c.to_ascii_lowercase();
                if c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.' {
                    c
                } else {
                    '.'
                }
            })
            .collect();
        if name.is_empty() {
            "easey-image".to_owned()
        } else {
            name
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobMeta {
    pub name: String,
    /// Always `None` after parsing; the id is assigned at submission.
    pub id: Option<JobId>,
    pub mail: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataSpec {
    pub input: Vec<TransferEndpoint>,
    pub output: Vec<TransferEndpoint>,
    /// Absolute path inside the container.
    pub mount: String,
}

impl DataSpec {
    pub fn has_entries(&self) -> bool {
        !self.input.is_empty() || !self.output.is_empty()
    }
}

/// One side of a transfer. For inputs `location` is the source, for outputs
/// the destination.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferEndpoint {
    pub location: String,
    pub protocol: Protocol,
    pub user: String,
    /// Key file reference; `None` for anonymous access.
    pub auth: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Https,
    Scp,
    Ftp,
    /// Accepted by the reader, rejected by validation and staging.
    Gridftp,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Https => "https",
            Protocol::Scp => "scp",
            Protocol::Ftp => "ftp",
            Protocol::Gridftp => "gridftp",
        }
    }

    pub fn is_supported(self) -> bool {
        self != Protocol::Gridftp
    }
}

impl FromStr for Protocol {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "https" => Ok(Protocol::Https),
            "scp" => Ok(Protocol::Scp),
            "ftp" => Ok(Protocol::Ftp),
            "gridftp" => Ok(Protocol::Gridftp),
            _ => Err(()),
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Resource request. Counts are signed so that an unchecked parse can carry
/// out-of-range values through to [`validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeploymentSpec {
    pub nodes: i64,
    /// Memory in megabytes; `None` emits no directive.
    pub ram_mb: Option<u64>,
    pub cores_per_task: i64,
    pub tasks_per_node: i64,
    pub clocktime: Clocktime,
}

/// Wall-clock limit as written, `HH:MM:SS`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Clocktime(pub String);

impl Clocktime {
    /// Total seconds, or `None` unless the text is exactly `HH:MM:SS` with
    /// minutes and seconds below 60.
    pub fn seconds(&self) -> Option<u64> {
        let parts: Vec<&str> = self.0.split(':').collect();
        let [h, m, s] = parts.as_slice() else {
            return None;
        };
        let field = |p: &str| -> Option<u64> {
            if p.len() == 2 && p.bytes().all(|b| b.is_ascii_digit()) {
                p.parse().ok()
            } else {
                None
            }
        };
        let (h, m, s) = (field(h)?, field(m)?, field(s)?);
        (m < 60 && s < 60).then_some(h * 3600 + m * 60 + s)
    }

    pub fn is_valid(&self) -> bool {
        self.seconds().is_some()
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Clocktime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ExecutionSpec {
    pub steps: Vec<ExecutionStep>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExecutionStep {
    Serial { command: String },
    Mpi { command: String, mpi_tasks: i64 },
}

impl ExecutionStep {
    pub fn command(&self) -> &str {
        match self {
            ExecutionStep::Serial { command } | ExecutionStep::Mpi { command, .. } => command,
        }
    }
}

/// 16 lowercase hex characters.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct JobId(String);

impl JobId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for JobId {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        if s.len() == 16 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
            Ok(JobId(s))
        } else {
            Err(format!("not a job id: {s:?}"))
        }
    }
}

impl FromStr for JobId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        JobId::try_from(s.to_owned())
    }
}

impl From<JobId> for String {
    fn from(id: JobId) -> String {
        id.0
    }
}

impl fmt::Display for JobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Machine-readable problem codes shared by the reader and [`validate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationCode {
    // structural: raised by the reader in every mode
    MissingSection,
    MissingField,
    UnknownKey,
    DuplicateKey,
    WrongType,
    BadProtocol,
    BadStepKind,
    RamMalformed,
    // values: raised by the checked reader, reported by `validate`
    NameEmpty,
    MailMalformed,
    NodesNonpositive,
    CoresPerTaskNonpositive,
    TasksPerNodeNonpositive,
    ClocktimeMalformed,
    ExecutionEmpty,
    CommandEmpty,
    MpiTasksNonpositive,
    MountNotAbsolute,
    LocationEmpty,
    // reported by `validate` only
    ProtocolUnsupportedGridftp,
    NodesMismatch,
}

impl ViolationCode {
    pub fn as_str(self) -> &'static str {
        use ViolationCode::*;
        match self {
            MissingSection => "MISSING_SECTION",
            MissingField => "MISSING_FIELD",
            UnknownKey => "UNKNOWN_KEY",
            DuplicateKey => "DUPLICATE_KEY",
            WrongType => "WRONG_TYPE",
            BadProtocol => "BAD_PROTOCOL",
            BadStepKind => "BAD_STEP_KIND",
            RamMalformed => "RAM_MALFORMED",
            NameEmpty => "NAME_EMPTY",
            MailMalformed => "MAIL_MALFORMED",
            NodesNonpositive => "NODES_NONPOSITIVE",
            CoresPerTaskNonpositive => "CORES_PER_TASK_NONPOSITIVE",
            TasksPerNodeNonpositive => "TASKS_PER_NODE_NONPOSITIVE",
            ClocktimeMalformed => "CLOCKTIME_MALFORMED",
            ExecutionEmpty => "EXECUTION_EMPTY",
            CommandEmpty => "COMMAND_EMPTY",
            MpiTasksNonpositive => "MPI_TASKS_NONPOSITIVE",
            MountNotAbsolute => "MOUNT_NOT_ABSOLUTE",
            LocationEmpty => "LOCATION_EMPTY",
            ProtocolUnsupportedGridftp => "PROTOCOL_UNSUPPORTED_GRIDFTP",
            NodesMismatch => "NODES_MISMATCH",
        }
    }

    /// Codes the checked reader turns into [`ConfigError::Value`].
    pub fn is_value_error(self) -> bool {
        use ViolationCode::*;
        matches!(
            self,
            NameEmpty
                | MailMalformed
                | NodesNonpositive
                | CoresPerTaskNonpositive
                | TasksPerNodeNonpositive
                | ClocktimeMalformed
                | ExecutionEmpty
                | CommandEmpty
                | MpiTasksNonpositive
                | MountNotAbsolute
                | LocationEmpty
        )
    }
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema error at {path}: {message} [{code}]")]
    Schema {
        code: ViolationCode,
        path: String,
        message: String,
    },
    #[error("invalid value at {path}: {message} [{code}]")]
    Value {
        code: ViolationCode,
        path: String,
        message: String,
    },
}

impl ConfigError {
    pub fn code(&self) -> Option<ViolationCode> {
        match self {
            ConfigError::Syntax { .. } => None,
            ConfigError::Schema { code, .. } | ConfigError::Value { code, .. } => Some(*code),
        }
    }
}
