//! The middleware pipeline and the persistent job lifecycle.
//!
//! [`Engine::submit`] runs the deployment steps in a fixed order: move the
//! container archive to the job workdir, extract it there, create the data
//! folder (only when the config has data entries), fetch the inputs one by
//! one, render the batch script, hand it to the scheduler and record the
//! scheduler's job id. The record is persisted after every step. The first
//! failing step marks the job `failed` with that step named, and nothing
//! after it runs.
//!
//! Afterwards [`Engine::poll_status`] refreshes the state from the scheduler
//! and returns the tails of both log files, and [`Engine::finalize`] stages
//! outputs out once the job has finished.

mod state;
mod store;

use std::fmt;
use std::path::PathBuf;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::batchgen::{render_batch, JobPaths};
use crate::cluster::scheduler::{
    parse_status_output, parse_submit_output, status_commands, submit_command,
};
use crate::cluster::{shell_word, ClusterError, ClusterSession};
use crate::config::{assign_job_id, validate, EaseyConfig, JobId};
use crate::imageprep::ContainerArchive;
use crate::staging::{plan_stage_in, Direction, Stager, TransferResult};
use crate::targets::TargetProfile;

pub use state::JobState;
pub use store::RecordStore;

/// Bytes of each log file returned by a status poll.
pub const LOG_EXCERPT_BYTES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Step {
    MoveArchive,
    Extract,
    DataFolder,
    StageIn,
    RenderBatch,
    Submit,
    RecordId,
}

impl Step {
    pub const ALL: [Step; 7] = [
        Step::MoveArchive,
        Step::Extract,
        Step::DataFolder,
        Step::StageIn,
        Step::RenderBatch,
        Step::Submit,
        Step::RecordId,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Step::MoveArchive => "move-archive",
            Step::Extract => "extract",
            Step::DataFolder => "data-folder",
            Step::StageIn => "stage-in",
            Step::RenderBatch => "render-batch",
            Step::Submit => "submit",
            Step::RecordId => "record-id",
        }
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("StagingFailed at {step} for job {id}:\n{log}")]
    StagingFailed { id: JobId, step: Step, log: String },
    #[error("ExtractFailed for job {id}:\n{log}")]
    ExtractFailed { id: JobId, log: String },
    #[error("SubmitFailed at {step} for job {id}:\n{log}")]
    SubmitFailed { id: JobId, step: Step, log: String },
    #[error("config is not submittable: {0}")]
    InvalidConfig(String),
    #[error("archive {} does not match its checksum", .0.display())]
    ArchiveMismatch(PathBuf),
    #[error("UnknownJob: {0}")]
    UnknownJob(String),
    #[error("SessionLost: {0}")]
    SessionLost(String),
    #[error("AuthFailed: {0}")]
    AuthFailed(String),
    #[error("NotTerminal: job {id} is {state}")]
    NotTerminal { id: JobId, state: JobState },
    #[error("StoreCorrupt: {}: {message}", .path.display())]
    StoreCorrupt { path: PathBuf, message: String },
    #[error("record store: {0}")]
    Store(String),
    #[error("pipeline interrupted after {0}")]
    Interrupted(Step),
}

impl From<ClusterError> for EngineError {
    fn from(e: ClusterError) -> Self {
        match e {
            ClusterError::SessionLost(m) => EngineError::SessionLost(m),
            ClusterError::AuthFailed(m) => EngineError::AuthFailed(m),
            ClusterError::Transfer(m) => EngineError::SessionLost(m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepMark {
    pub step: Step,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub from: JobState,
    pub to: JobState,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub step: Option<Step>,
    pub message: String,
}

mod config_json {
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    use crate::config::{parse_unchecked, to_json_value, EaseyConfig};

    pub fn serialize<S: Serializer>(cfg: &EaseyConfig, s: S) -> Result<S::Ok, S::Error> {
        to_json_value(cfg).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<EaseyConfig, D::Error> {
        let value = serde_json::Value::deserialize(d)?;
        parse_unchecked(&value.to_string(), false).map_err(D::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: JobId,
    pub target: String,
    #[serde(with = "config_json")]
    pub config: EaseyConfig,
    pub archive: ContainerArchive,
    pub state: JobState,
    pub scheduler_job_id: Option<String>,
    /// Workdir, data folder and log locations on cluster storage.
    pub paths: JobPaths,
    pub created_at: DateTime<Utc>,
    pub submitted_at: Option<DateTime<Utc>>,
    pub finished_at: Option<DateTime<Utc>>,
    pub staging_ledger: Vec<TransferResult>,
    pub steps: Vec<StepMark>,
    pub transitions: Vec<Transition>,
    pub failure: Option<Failure>,
    /// Set when the last status refresh could not reach the cluster.
    pub stale: bool,
    pub finalized: bool,
}

impl JobRecord {
    pub fn workdir(&self) -> &str {
        &self.paths.workdir
    }

    pub fn log_refs(&self) -> (&str, &str) {
        (&self.paths.stdout, &self.paths.stderr)
    }

    pub fn last_step(&self) -> Option<Step> {
        self.steps.last().map(|m| m.step)
    }

    pub fn step_done(&self, step: Step) -> bool {
        self.steps.iter().any(|m| m.step == step)
    }

    /// Timestamp that is now, but strictly after every earlier step mark and
    /// transition of this record.
    fn stamp(&self) -> DateTime<Utc> {
        let now = Utc::now();
        let last = self
            .steps
            .iter()
            .map(|m| m.at)
            .chain(self.transitions.iter().map(|t| t.at))
            .max();
        match last {
            Some(l) if now <= l => l + Duration::microseconds(1),
            _ => now,
        }
    }

    fn mark(&mut self, step: Step) {
        let at = self.stamp();
        self.steps.push(StepMark { step, at });
    }

    /// Moves to `to` along a legal edge. Illegal requests are ignored and
    /// reported as `false`.
    fn transition(&mut self, to: JobState) -> bool {
        if !self.state.can_transition_to(to) {
            return false;
        }
        let at = self.stamp();
        self.transitions.push(Transition {
            from: self.state,
            to,
            at,
        });
        self.state = to;
        if to.is_terminal() {
            self.finished_at = Some(at);
        }
        true
    }

    /// Walks forward to `target` through every intermediate state.
    fn advance_to(&mut self, target: JobState) {
        while self.state != target && !self.state.is_terminal() {
            let next = if target == JobState::Failed {
                JobState::Failed
            } else {
                match self.state.successor() {
                    Some(n) if n <= target => n,
                    _ => break,
                }
            };
            if !self.transition(next) {
                break;
            }
        }
    }
}

/// Answer of [`Engine::poll_status`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StatusReport {
    pub id: JobId,
    pub state: JobState,
    pub scheduler_job_id: Option<String>,
    pub stdout: String,
    pub stderr: String,
}

pub struct Engine {
    store: RecordStore,
    stager: Stager,
    crash_after: Option<Step>,
}

fn run(session: &dyn ClusterSession, command: &str) -> Result<(), String> {
    match session.exec(command) {
        Ok(out) if out.success() => Ok(()),
        Ok(out) => Err(format!(
            "$ {command}\nexit {}\n{}{}",
            out.exit_code, out.stdout, out.stderr
        )),
        Err(e) => Err(format!("$ {command}\n{e}")),
    }
}

impl Engine {
    pub fn new(store: RecordStore, stager: Stager) -> Self {
        Engine {
            store,
            stager,
            crash_after: None,
        }
    }

    pub fn store(&self) -> &RecordStore {
        &self.store
    }

    pub fn stager(&self) -> &Stager {
        &self.stager
    }

    /// Test hook: stop the pipeline right after `step` has been persisted,
    /// as if the process had been killed there.
    #[doc(hidden)]
    pub fn crash_after(mut self, step: Option<Step>) -> Self {
        self.crash_after = step;
        self
    }

    /// Deploys a job. On a step failure the returned error names the step,
    /// and the stored record is `failed`.
    pub fn submit(
        &self,
        cfg: &EaseyConfig,
        archive: &ContainerArchive,
        profile: &TargetProfile,
        session: &dyn ClusterSession,
    ) -> Result<JobRecord, EngineError> {
        if let Some(v) = validate(cfg).violations.first() {
            return Err(EngineError::InvalidConfig(format!(
                "{}: {}",
                v.code, v.message
            )));
        }
        if !archive.verify().unwrap_or(false) {
            return Err(EngineError::ArchiveMismatch(archive.path.clone()));
        }
        let created_at = Utc::now();
        let id = assign_job_id(cfg, created_at);
        let mut config = cfg.clone();
        config.job.id = Some(id.clone());
        let mut record = JobRecord {
            paths: JobPaths::new(&profile.workdir_root, &id),
            id,
            target: profile.name.clone(),
            config,
            archive: archive.clone(),
            state: JobState::Created,
            scheduler_job_id: None,
            created_at,
            submitted_at: None,
            finished_at: None,
            staging_ledger: Vec::new(),
            steps: Vec::new(),
            transitions: Vec::new(),
            failure: None,
            stale: false,
            finalized: false,
        };
        self.store.save(&record)?;
        self.resume(&mut record, profile, session)?;
        Ok(record)
    }

    /// Continues an interrupted submission from the step after the last one
    /// that was persisted, then refreshes the status.
    pub fn recover(
        &self,
        id: &JobId,
        profile: &TargetProfile,
        session: &dyn ClusterSession,
    ) -> Result<StatusReport, EngineError> {
        let mut record = self
            .store
            .load(id)?
            .ok_or_else(|| EngineError::UnknownJob(id.to_string()))?;
        if record.state < JobState::Pending {
            self.resume(&mut record, profile, session)?;
        }
        self.poll_status(id, session)
    }

    fn resume(
        &self,
        record: &mut JobRecord,
        profile: &TargetProfile,
        session: &dyn ClusterSession,
    ) -> Result<(), EngineError> {
        if record.state == JobState::Created {
            record.transition(JobState::Staging);
            self.store.save(record)?;
        }
        for step in Step::ALL {
            if record.step_done(step) {
                continue;
            }
            if let Err(log) = self.run_step(step, record, profile, session) {
                return Err(self.fail(record, step, log));
            }
            record.mark(step);
            self.store.save(record)?;
            if self.crash_after == Some(step) {
                return Err(EngineError::Interrupted(step));
            }
        }
        Ok(())
    }

    fn fail(&self, record: &mut JobRecord, step: Step, log: String) -> EngineError {
        record.failure = Some(Failure {
            step: Some(step),
            message: log.clone(),
        });
        record.transition(JobState::Failed);
        if let Err(e) = self.store.save(record) {
            return e;
        }
        let id = record.id.clone();
        match step {
            Step::Extract => EngineError::ExtractFailed { id, log },
            Step::MoveArchive | Step::DataFolder | Step::StageIn => {
                EngineError::StagingFailed { id, step, log }
            }
            Step::RenderBatch | Step::Submit | Step::RecordId => {
                EngineError::SubmitFailed { id, step, log }
            }
        }
    }

    fn run_step(
        &self,
        step: Step,
        record: &mut JobRecord,
        profile: &TargetProfile,
        session: &dyn ClusterSession,
    ) -> Result<(), String> {
        let workdir = record.paths.workdir.clone();
        let archive_remote = format!("{workdir}/{}", record.archive.file_name());
        let has_data = record.config.data.as_ref().is_some_and(|d| d.has_entries());
        match step {
            Step::MoveArchive => {
                run(session, &format!("mkdir -p {}", shell_word(&workdir)))?;
                session
                    .put(&record.archive.path, &archive_remote)
                    .map_err(|e| e.to_string())
            }
            Step::Extract => run(
                session,
                &format!(
                    "tar -xzf {} -C {}",
                    shell_word(&archive_remote),
                    shell_word(&workdir)
                ),
            ),
            Step::DataFolder if has_data => run(
                session,
                &format!("mkdir -p {}", shell_word(&record.paths.data_folder)),
            ),
            Step::DataFolder => Ok(()),
            Step::StageIn => self.stage_in(record, session),
            Step::RenderBatch => {
                let script = render_batch(&record.config, profile, &record.paths)
                    .map_err(|e| e.to_string())?;
                session
                    .write_file(
                        &record.paths.script(profile.scheduler),
                        script.full_text.as_bytes(),
                    )
                    .map_err(|e| e.to_string())
            }
            Step::Submit => {
                let cmd =
                    submit_command(profile.scheduler, &record.paths.script(profile.scheduler));
                let out = session.exec(&cmd).map_err(|e| format!("$ {cmd}\n{e}"))?;
                let sched_id = parse_submit_output(profile.scheduler, &out.stdout)
                    .filter(|_| out.success())
                    .ok_or_else(|| {
                        format!(
                            "$ {cmd}\nexit {}\n{}{}",
                            out.exit_code, out.stdout, out.stderr
                        )
                    })?;
                record.scheduler_job_id = Some(sched_id);
                record.submitted_at = Some(record.stamp());
                record.transition(JobState::Submitted);
                Ok(())
            }
            Step::RecordId => {
                record.transition(JobState::Pending);
                Ok(())
            }
        }
    }

    fn stage_in(&self, record: &mut JobRecord, session: &dyn ClusterSession) -> Result<(), String> {
        let workdir = record.paths.workdir.clone();
        let spool;
        let (local_workdir, spooled) = match session.local_view(&workdir) {
            Some(p) => (p, false),
            None => {
                spool = tempfile::tempdir().map_err(|e| e.to_string())?;
                (spool.path().to_owned(), true)
            }
        };
        let tasks = plan_stage_in(record.config.data.as_ref(), &local_workdir)
            .map_err(|e| e.to_string())?;
        let outcome = self.stager.stage_in(&tasks);
        record
            .staging_ledger
            .extend(outcome.results.iter().cloned());
        if let Some(e) = outcome.error {
            return Err(e.to_string());
        }
        if spooled {
            for r in &outcome.results {
                let rel = r
                    .task
                    .local_path
                    .strip_prefix(&local_workdir)
                    .map_err(|e| e.to_string())?;
                let remote = format!("{workdir}/{}", rel.display());
                if let Some(parent) = rel.parent().filter(|p| !p.as_os_str().is_empty()) {
                    run(
                        session,
                        &format!(
                            "mkdir -p {}",
                            shell_word(&format!("{workdir}/{}", parent.display()))
                        ),
                    )?;
                }
                session
                    .put(&r.task.local_path, &remote)
                    .map_err(|e| e.to_string())?;
            }
        }
        Ok(())
    }

    fn query_state(
        &self,
        record: &JobRecord,
        session: &dyn ClusterSession,
    ) -> Result<Option<JobState>, ClusterError> {
        let Some(sched_id) = &record.scheduler_job_id else {
            return Ok(None);
        };
        let kind = session.scheduler();
        for cmd in status_commands(kind, sched_id) {
            let out = session.exec(&cmd)?;
            if let Some(state) = parse_status_output(kind, &out.stdout) {
                return Ok(Some(state));
            }
        }
        Ok(None)
    }

    fn tail(session: &dyn ClusterSession, path: &str) -> Result<String, ClusterError> {
        let out = session.exec(&format!("tail -c {LOG_EXCERPT_BYTES} {}", shell_word(path)))?;
        Ok(if out.success() {
            out.stdout
        } else {
            String::new()
        })
    }

    /// Refreshes a job's state from the scheduler and reads both log tails.
    /// Logs are readable in every state, including while running.
    pub fn poll_status(
        &self,
        id: &JobId,
        session: &dyn ClusterSession,
    ) -> Result<StatusReport, EngineError> {
        let mut record = self
            .store
            .load(id)?
            .ok_or_else(|| EngineError::UnknownJob(id.to_string()))?;
        let refreshed = (|| {
            if record.state >= JobState::Submitted && !record.state.is_terminal() {
                if let Some(observed) = self.query_state(&record, session)? {
                    record.advance_to(observed);
                }
            }
            let (out, err) = record.log_refs();
            Ok::<_, ClusterError>((Self::tail(session, out)?, Self::tail(session, err)?))
        })();
        match refreshed {
            Ok((stdout, stderr)) => {
                record.stale = false;
                self.store.save(&record)?;
                Ok(StatusReport {
                    id: record.id,
                    state: record.state,
                    scheduler_job_id: record.scheduler_job_id,
                    stdout,
                    stderr,
                })
            }
            Err(e) => {
                // keep the last known state, flagged as possibly outdated
                record.stale = true;
                self.store.save(&record)?;
                Err(e.into())
            }
        }
    }

    /// Stages outputs out for a finished job. Failed jobs get no stage-out;
    /// their logs stay readable through [`Engine::poll_status`]. Repeated
    /// calls return the earlier results without transferring again.
    pub fn finalize(
        &self,
        id: &JobId,
        session: &dyn ClusterSession,
    ) -> Result<Vec<TransferResult>, EngineError> {
        let mut record = self
            .store
            .load(id)?
            .ok_or_else(|| EngineError::UnknownJob(id.to_string()))?;
        if !record.state.is_terminal() {
            return Err(EngineError::NotTerminal {
                id: record.id,
                state: record.state,
            });
        }
        let previous = || {
            record
                .staging_ledger
                .iter()
                .filter(|r| r.task.direction == Direction::Out)
                .cloned()
                .collect::<Vec<_>>()
        };
        if record.finalized {
            return Ok(previous());
        }
        let results = match (&record.config.data, record.state) {
            (Some(data), JobState::Finished) if !data.output.is_empty() => {
                let workdir = record.paths.workdir.clone();
                match session.local_view(&workdir) {
                    Some(local) => self.stager.stage_out(data, &local),
                    None => {
                        let spool =
                            tempfile::tempdir().map_err(|e| EngineError::Store(e.to_string()))?;
                        let spool_data = spool.path().join(crate::staging::DATA_FOLDER);
                        std::fs::create_dir_all(&spool_data)
                            .map_err(|e| EngineError::Store(e.to_string()))?;
                        for ep in &data.output {
                            if let Ok(name) = crate::staging::local_name(&ep.location) {
                                let remote =
                                    format!("{}/{}", record.paths.data_folder, name.display());
                                let local = spool_data.join(&name);
                                if let Some(parent) = local.parent() {
                                    let _ = std::fs::create_dir_all(parent);
                                }
                                match session.get(&remote, &local) {
                                    Ok(()) => {}
                                    Err(ClusterError::Transfer(_)) => {}
                                    Err(e) => return Err(e.into()),
                                }
                            }
                        }
                        self.stager.stage_out(data, spool.path())
                    }
                }
            }
            _ => Vec::new(),
        };
        record.staging_ledger.extend(results.iter().cloned());
        record.finalized = true;
        self.store.save(&record)?;
        Ok(results)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_names_round_trip() {
        for s in Step::ALL {
            let json = serde_json::to_string(&s).unwrap();
            assert_eq!(json, format!("\"{}\"", s.as_str()));
            assert_eq!(serde_json::from_str::<Step>(&json).unwrap(), s);
        }
    }
}
