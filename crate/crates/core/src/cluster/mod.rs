//! Access to a cluster's submission host.
//!
//! Everything the middleware does on a cluster goes through
//! [`ClusterSession`]: shell commands, file upload and download. Two
//! implementations exist: [`SshSession`] for real clusters (OpenSSH client
//! with key authentication) and [`SimSession`] for the in-process
//! [`Simulator`].

pub mod scheduler;
mod sim;
mod ssh;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::targets::SchedulerKind;

pub use sim::{
    sim_submit, sim_tick, ScriptedOutcome, SharedSimulator, SimError, SimEvent, SimJob, SimSession,
    Simulator,
};
pub use ssh::{SshEndpoint, SshSession};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClusterError {
    #[error("session lost: {0}")]
    SessionLost(String),
    #[error("authentication failed: {0}")]
    AuthFailed(String),
    #[error("file transfer failed: {0}")]
    Transfer(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecOutput {
    pub exit_code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl ExecOutput {
    pub fn ok(stdout: impl Into<String>) -> Self {
        ExecOutput {
            exit_code: 0,
            stdout: stdout.into(),
            stderr: String::new(),
        }
    }

    pub fn fail(exit_code: i32, stderr: impl Into<String>) -> Self {
        ExecOutput {
            exit_code,
            stdout: String::new(),
            stderr: stderr.into(),
        }
    }

    pub fn success(&self) -> bool {
        self.exit_code == 0
    }
}

pub trait ClusterSession: Send + Sync {
    /// The authenticated identity every operation is attributed to.
    fn identity(&self) -> &str;

    fn scheduler(&self) -> SchedulerKind;

    fn exec(&self, command: &str) -> Result<ExecOutput, ClusterError>;

    fn put(&self, local: &Path, remote: &str) -> Result<(), ClusterError>;

    fn get(&self, remote: &str, local: &Path) -> Result<(), ClusterError>;

    fn write_file(&self, remote: &str, contents: &[u8]) -> Result<(), ClusterError> {
        let tmp =
            tempfile::NamedTempFile::new().map_err(|e| ClusterError::Transfer(e.to_string()))?;
        std::fs::write(tmp.path(), contents).map_err(|e| ClusterError::Transfer(e.to_string()))?;
        self.put(tmp.path(), remote)
    }

    /// Host path backing a cluster path, when cluster storage is directly
    /// reachable from this process (simulator, or middleware on a shared
    /// filesystem). Staging writes there instead of spooling.
    fn local_view(&self, _remote: &str) -> Option<PathBuf> {
        None
    }
}

/// Quotes a word for a POSIX shell command line.
pub fn shell_word(s: &str) -> String {
    if !s.is_empty()
        && s.bytes()
            .all(|b| b.is_ascii_alphanumeric() || b"/._-+:=@%,".contains(&b))
    {
        s.to_owned()
    } else {
        format!("'{}'", s.replace('\'', r"'\''"))
    }
}
