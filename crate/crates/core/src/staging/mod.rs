//! Input stage-in before submission and output stage-out after completion.
//!
//! Every job gets a `data` folder inside its workdir when its config lists at
//! least one input or output. Inputs are fetched into it one after another,
//! in config order. After the job finishes, each output entry names a file
//! in that folder (by the basename of its destination) which is pushed to
//! the destination.
//!
//! Transfers that fail transiently (connection errors, 5xx responses) are
//! retried with exponential backoff; authentication failures and permanent
//! errors such as HTTP 404 fail at once.

mod creds;
mod transport;

use std::path::{Component, Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{DataSpec, Protocol, TransferEndpoint};

pub use creds::{Credential, CredentialStore};
pub use transport::{FtpTransport, HttpsTransport, ScpTransport, Transport, TransportError};

/// Name of the per-job data folder inside the workdir.
pub const DATA_FOLDER: &str = "data";

pub const MISSING_OUTPUT: &str = "output file not found in data folder";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StagingError {
    #[error("PathEscape: {0:?} would leave the data folder")]
    PathEscape(String),
    #[error("ProtocolUnsupported: {0}")]
    ProtocolUnsupported(Protocol),
    #[error("AuthFailed: {0}")]
    AuthFailed(String),
    #[error("TransferFailed: {detail}")]
    TransferFailed { detail: String },
    #[error("staging I/O error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    In,
    Out,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferTask {
    pub direction: Direction,
    pub endpoint: TransferEndpoint,
    /// Absolute path inside the job's data folder.
    pub local_path: PathBuf,
    pub order_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransferStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferResult {
    pub task: TransferTask,
    pub bytes: u64,
    /// Seconds.
    pub duration: f64,
    pub status: TransferStatus,
    pub detail: String,
}

impl TransferResult {
    pub fn failed(task: TransferTask, detail: impl Into<String>) -> Self {
        TransferResult {
            task,
            bytes: 0,
            duration: 0.0,
            status: TransferStatus::Failed,
            detail: detail.into(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == TransferStatus::Ok
    }
}

/// File name an endpoint maps to inside the data folder.
///
/// URLs and `host:path` scp locations contribute their last path segment. A
/// bare relative path is kept as is (so `sub/in.dat` lands in
/// `data/sub/in.dat`), and anything that would climb out is refused.
pub fn local_name(location: &str) -> Result<PathBuf, StagingError> {
    let escape = || StagingError::PathEscape(location.to_owned());
    let basename = |p: &str| p.rsplit('/').next().unwrap_or("").to_owned();
    let candidate = if let Some((_, rest)) = location.split_once("://") {
        let rest = rest.split(['?', '#']).next().unwrap_or("");
        basename(rest.split_once('/').map(|(_, p)| p).unwrap_or(""))
    } else if let Some((_, p)) = location
        .split_once(':')
        .filter(|(h, _)| !h.is_empty() && !h.contains('/'))
    {
        basename(p)
    } else if location.starts_with('/') {
        basename(location)
    } else {
        location.to_owned()
    };
    let candidate = PathBuf::from(candidate);
    let mut depth = 0i32;
    let mut normal = 0;
    for comp in candidate.components() {
        match comp {
            Component::Normal(_) => {
                depth += 1;
                normal += 1;
            }
            Component::CurDir => {}
            Component::ParentDir => {
                depth -= 1;
                if depth < 0 {
                    return Err(escape());
                }
            }
            Component::RootDir | Component::Prefix(_) => return Err(escape()),
        }
    }
    if normal == 0 || depth == 0 {
        return Err(escape());
    }
    Ok(candidate)
}

/// Plans the input transfers for a job and creates its data folder when the
/// config lists any input or output. Without data entries nothing is
/// created.
pub fn plan_stage_in(
    data: Option<&DataSpec>,
    job_workdir: &Path,
) -> Result<Vec<TransferTask>, StagingError> {
    if !job_workdir.is_dir() {
        return Err(StagingError::Io(format!(
            "job workdir {} does not exist",
            job_workdir.display()
        )));
    }
    let Some(data) = data.filter(|d| d.has_entries()) else {
        return Ok(Vec::new());
    };
    let folder = job_workdir.join(DATA_FOLDER);
    let tasks = data
        .input
        .iter()
        .enumerate()
        .map(|(i, ep)| {
            Ok(TransferTask {
                direction: Direction::In,
                endpoint: ep.clone(),
                local_path: folder.join(local_name(&ep.location)?),
                order_index: i,
            })
        })
        .collect::<Result<Vec<_>, StagingError>>()?;
    // outputs are checked too, so a bad output name is caught before submit
    for ep in &data.output {
        local_name(&ep.location)?;
    }
    std::fs::create_dir_all(&folder).map_err(|e| StagingError::Io(e.to_string()))?;
    Ok(tasks)
}

/// Attempts after the first one, and the delay before the first retry
/// (doubled for each further retry).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            retries: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn delay_before_retry(&self, retry: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(retry)
    }
}

/// Outcome of a sequential stage-in: every attempted transfer in order, and
/// the error that stopped it, if any.
#[derive(Debug, Clone)]
pub struct StageIn {
    pub results: Vec<TransferResult>,
    pub error: Option<StagingError>,
}

pub struct Stager {
    creds: CredentialStore,
    retry: RetryPolicy,
    https: Box<dyn Transport>,
    ftp: Box<dyn Transport>,
    scp: Box<dyn Transport>,
}

impl Stager {
    pub fn new(creds: CredentialStore) -> Self {
        Stager {
            creds,
            retry: RetryPolicy::default(),
            https: Box::new(HttpsTransport::new()),
            ftp: Box::new(FtpTransport),
            scp: Box::new(ScpTransport::default()),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_transport(mut self, protocol: Protocol, transport: Box<dyn Transport>) -> Self {
        match protocol {
            Protocol::Https => self.https = transport,
            Protocol::Ftp => self.ftp = transport,
            Protocol::Scp => self.scp = transport,
            Protocol::Gridftp => {}
        }
        self
    }

    pub fn credentials(&self) -> &CredentialStore {
        &self.creds
    }

    fn transport(&self, protocol: Protocol) -> Result<&dyn Transport, StagingError> {
        match protocol {
            Protocol::Https => Ok(self.https.as_ref()),
            Protocol::Ftp => Ok(self.ftp.as_ref()),
            Protocol::Scp => Ok(self.scp.as_ref()),
            Protocol::Gridftp => Err(StagingError::ProtocolUnsupported(protocol)),
        }
    }

    /// Runs one transfer with retries.
    pub fn execute_transfer(&self, task: &TransferTask) -> Result<TransferResult, StagingError> {
        let transport = self.transport(task.endpoint.protocol)?;
        let cred = self.creds.resolve(&task.endpoint)?;
        if task.direction == Direction::In {
            if let Some(parent) = task.local_path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| StagingError::Io(e.to_string()))?;
            }
        }
        let started = Instant::now();
        let mut retry = 0;
        loop {
            let attempt = match task.direction {
                Direction::In => transport.fetch(&task.endpoint, &cred, &task.local_path),
                Direction::Out => transport.push(&task.local_path, &task.endpoint, &cred),
            };
            match attempt {
                Ok(bytes) => {
                    return Ok(TransferResult {
                        task: task.clone(),
                        bytes,
                        duration: started.elapsed().as_secs_f64(),
                        status: TransferStatus::Ok,
                        detail: String::new(),
                    })
                }
                Err(TransportError::Auth(msg)) => return Err(StagingError::AuthFailed(msg)),
                Err(TransportError::Permanent(detail)) => {
                    return Err(StagingError::TransferFailed { detail })
                }
                Err(TransportError::Transient(detail)) if retry >= self.retry.retries => {
                    return Err(StagingError::TransferFailed {
                        detail: format!("{detail} (gave up after {} attempts)", retry + 1),
                    })
                }
                Err(TransportError::Transient(_)) => {
                    std::thread::sleep(self.retry.delay_before_retry(retry));
                    retry += 1;
                }
            }
        }
    }

    /// Executes tasks strictly in `order_index` order and stops at the
    /// first failure; the failed transfer is the last result.
    pub fn stage_in(&self, tasks: &[TransferTask]) -> StageIn {
        let mut ordered: Vec<&TransferTask> = tasks.iter().collect();
        ordered.sort_by_key(|t| t.order_index);
        let mut results = Vec::with_capacity(tasks.len());
        for task in ordered {
            match self.execute_transfer(task) {
                Ok(r) => results.push(r),
                Err(e) => {
                    results.push(TransferResult::failed(task.clone(), e.to_string()));
                    return StageIn {
                        results,
                        error: Some(e),
                    };
                }
            }
        }
        StageIn {
            results,
            error: None,
        }
    }

    /// Pushes every output entry. Failures are reported per entry and do not
    /// stop the remaining entries.
    pub fn stage_out(&self, data: &DataSpec, job_workdir: &Path) -> Vec<TransferResult> {
        let folder = job_workdir.join(DATA_FOLDER);
        data.output
            .iter()
            .enumerate()
            .map(|(i, ep)| {
                let mut task = TransferTask {
                    direction: Direction::Out,
                    endpoint: ep.clone(),
                    local_path: folder.clone(),
                    order_index: i,
                };
                let name = match local_name(&ep.location) {
                    Ok(n) => n,
                    Err(e) => return TransferResult::failed(task, e.to_string()),
                };
                task.local_path = folder.join(name);
                if !task.local_path.is_file() {
                    return TransferResult::failed(task, MISSING_OUTPUT);
                }
                self.execute_transfer(&task)
                    .unwrap_or_else(|e| TransferResult::failed(task, e.to_string()))
            })
            .collect()
    }
}
