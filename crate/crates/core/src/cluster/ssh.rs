//! Cluster access through the OpenSSH client binaries.
//!
//! Every operation spawns `ssh` or `scp` in batch mode with an explicit key,
//! so no agent or password prompt is ever involved. A connection is checked
//! once on [`SshSession::connect`]; later failures surface per operation.

use std::path::{Path, PathBuf};
use std::process::Command;

use super::{ClusterError, ClusterSession, ExecOutput};
use crate::targets::SchedulerKind;

/// `ssh://[user@]host[:port]`
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SshEndpoint {
    pub user: Option<String>,
    pub host: String,
    pub port: u16,
}

impl SshEndpoint {
    pub fn parse(url: &str) -> Option<Self> {
        let rest = url.strip_prefix("ssh://")?.trim_end_matches('/');
        let (user, hostport) = match rest.rsplit_once('@') {
            Some((u, h)) if !u.is_empty() => (Some(u.to_owned()), h),
            Some(_) => return None,
            None => (None, rest),
        };
        let (host, port) = match hostport.rsplit_once(':') {
            Some((h, p)) => (h, p.parse().ok()?),
            None => (hostport, 22),
        };
        if host.is_empty() || host.contains('/') {
            return None;
        }
        Some(SshEndpoint {
            user,
            host: host.to_owned(),
            port,
        })
    }

    fn destination(&self) -> String {
        match &self.user {
            Some(u) => format!("{u}@{}", self.host),
            None => self.host.clone(),
        }
    }
}

#[derive(Debug)]
pub struct SshSession {
    endpoint: SshEndpoint,
    key: PathBuf,
    identity: String,
    scheduler: SchedulerKind,
}

fn classify(stderr: &str, context: &str) -> ClusterError {
    if stderr.contains("Permission denied") || stderr.contains("Too many authentication failures") {
        ClusterError::AuthFailed(format!("{context}: {}", stderr.trim()))
    } else {
        ClusterError::SessionLost(format!("{context}: {}", stderr.trim()))
    }
}

impl SshSession {
    /// Opens a session and proves it with a no-op command.
    pub fn connect(
        endpoint: SshEndpoint,
        key: &Path,
        scheduler: SchedulerKind,
    ) -> Result<Self, ClusterError> {
        if !key.is_file() {
            return Err(ClusterError::AuthFailed(format!(
                "key file {} not found",
                key.display()
            )));
        }
        let identity = endpoint
            .user
            .clone()
            .or_else(|| std::env::var("USER").ok())
            .unwrap_or_else(|| "unknown".into());
        let session = SshSession {
            endpoint,
            key: key.to_owned(),
            identity,
            scheduler,
        };
        session.exec("true")?;
        Ok(session)
    }

    fn base(&self, program: &str) -> Command {
        let mut cmd = Command::new(program);
        cmd.arg("-o")
            .arg("BatchMode=yes")
            .arg("-o")
            .arg("ConnectTimeout=20")
            .arg("-i")
            .arg(&self.key);
        cmd
    }

    fn scp(&self, from: &str, to: &str) -> Result<(), ClusterError> {
        let out = self
            .base("scp")
            .arg("-B")
            .arg("-q")
            .arg("-P")
            .arg(self.endpoint.port.to_string())
            .arg(from)
            .arg(to)
            .output()
            .map_err(|e| ClusterError::SessionLost(format!("cannot run scp: {e}")))?;
        if out.status.success() {
            return Ok(());
        }
        let stderr = String::from_utf8_lossy(&out.stderr);
        match out.status.code() {
            Some(255) => Err(classify(&stderr, "scp")),
            _ => Err(ClusterError::Transfer(stderr.trim().to_owned())),
        }
    }

    fn remote(&self, path: &str) -> String {
        format!("{}:{}", self.endpoint.destination(), path)
    }
}

impl ClusterSession for SshSession {
    fn identity(&self) -> &str {
        &self.identity
    }

    fn scheduler(&self) -> SchedulerKind {
        self.scheduler
    }

    fn exec(&self, command: &str) -> Result<ExecOutput, ClusterError> {
        let out = self
            .base("ssh")
            .arg("-p")
            .arg(self.endpoint.port.to_string())
            .arg(self.endpoint.destination())
            .arg("--")
            .arg(command)
            .output()
            .map_err(|e| ClusterError::SessionLost(format!("cannot run ssh: {e}")))?;
        let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
        // 255 is reserved by ssh for its own failures
        match out.status.code() {
            Some(255) | None => Err(classify(&stderr, &self.endpoint.host)),
            Some(code) => Ok(ExecOutput {
                exit_code: code,
                stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
                stderr,
            }),
        }
    }

    fn put(&self, local: &Path, remote: &str) -> Result<(), ClusterError> {
        self.scp(&local.display().to_string(), &self.remote(remote))
    }

    fn get(&self, remote: &str, local: &Path) -> Result<(), ClusterError> {
        self.scp(&self.remote(remote), &local.display().to_string())
    }
}
