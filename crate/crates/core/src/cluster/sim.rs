//! Deterministic, clock-free batch cluster for tests and demos.
//!
//! The simulator owns a directory that stands in for cluster storage and a
//! queue of jobs. Time only advances through [`Simulator::tick`]: each tick
//! moves every job one state forward (pending → running → finished or
//! failed) and runs part of its script through a small shell interpreter.
//! The same submissions and ticks always produce the same event log.
//!
//! The submit host understands the commands the middleware issues: `mkdir`,
//! `rm`, `tar -xzf`, `cat`, `tail -c`, `test`, `ls`, `echo`, `true`, `false`,
//! the scheduler commands of its dialect (`sbatch`, `sacct`, `squeue` or
//! `qsub`, `qstat`), chained with `&&`.
//!
//! Job scripts may use `set`, `cd`, `export`, `echo` (with `>`/`>>`),
//! `touch`, `mkdir`, `cat`, `true`, `false`, `exit`, `sleep`, MPI launchers
//! (`srun`, `mpiexec`, `mpirun`, checked against the allocation) and
//! `ch-run` (checked for an unpacked image). Anything else is echoed as
//! `[sim] <command>` and succeeds.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs;
use std::io::Write as _;
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ClusterError, ClusterSession, ExecOutput};
use crate::batchgen::{read_directives, BatchScript, ScriptDirectives};
use crate::config::Clocktime;
use crate::engine::JobState;
use crate::targets::SchedulerKind;

pub type SharedSimulator = Arc<Mutex<Simulator>>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("ScriptRejected: {0}")]
    ScriptRejected(String),
    #[error("unknown simulator job {0}")]
    UnknownJob(String),
}

/// Forced end of a job, overriding what its script would do.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScriptedOutcome {
    Succeed,
    Fail { stderr: String, exit_code: i32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimEvent {
    pub tick: u64,
    pub sim_id: String,
    pub from: JobState,
    pub to: JobState,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ShellState {
    cwd: String,
    env: BTreeMap<String, String>,
    errexit: bool,
    next_line: usize,
    failed: Option<i32>,
    exited: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimJob {
    pub sim_id: String,
    pub script: String,
    pub state: JobState,
    pub workdir: String,
    pub directives: ScriptDirectives,
    pub stdout_path: String,
    pub stderr_path: String,
    pub outcome: Option<ScriptedOutcome>,
    pub exit_code: Option<i32>,
    lines: Vec<String>,
    shell: ShellState,
}

/// Cluster storage rooted at a host directory. Cluster paths are absolute
/// and may not climb above the root.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SimFs {
    root: PathBuf,
}

impl SimFs {
    fn normalize(path: &str, cwd: &str) -> Result<String, String> {
        let joined = if path.starts_with('/') {
            path.to_owned()
        } else {
            format!("{}/{}", cwd.trim_end_matches('/'), path)
        };
        let mut parts: Vec<&str> = Vec::new();
        for comp in Path::new(&joined).components() {
            match comp {
                Component::RootDir | Component::CurDir => {}
                Component::ParentDir => {
                    if parts.pop().is_none() {
                        return Err(format!("{path}: path escapes the cluster root"));
                    }
                }
                Component::Normal(p) => parts.push(p.to_str().ok_or("non-UTF-8 path")?),
                Component::Prefix(_) => return Err(format!("{path}: unsupported path")),
            }
        }
        Ok(format!("/{}", parts.join("/")))
    }

    fn host(&self, path: &str, cwd: &str) -> Result<PathBuf, String> {
        let norm = Self::normalize(path, cwd)?;
        Ok(self.root.join(norm.trim_start_matches('/')))
    }

    fn append(&self, path: &str, text: &str) -> Result<(), String> {
        if text.is_empty() {
            return Ok(());
        }
        let host = self.host(path, "/")?;
        if let Some(parent) = host.parent() {
            fs::create_dir_all(parent).map_err(|e| e.to_string())?;
        }
        fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&host)
            .and_then(|mut f| f.write_all(text.as_bytes()))
            .map_err(|e| format!("{path}: {e}"))
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Simulator {
    dialect: SchedulerKind,
    fs: SimFs,
    next_seq: u64,
    tick: u64,
    jobs: Vec<SimJob>,
    events: Vec<SimEvent>,
    authorized: BTreeSet<String>,
    reachable: bool,
    queued_outcomes: VecDeque<ScriptedOutcome>,
    #[serde(skip)]
    state_file: Option<PathBuf>,
}

const STATE_FILE: &str = "state.json";

impl Simulator {
    /// In-memory simulator over `root` (created if missing).
    pub fn new(root: impl Into<PathBuf>, dialect: SchedulerKind) -> std::io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Simulator {
            dialect,
            fs: SimFs { root },
            next_seq: 1,
            tick: 0,
            jobs: Vec::new(),
            events: Vec::new(),
            authorized: BTreeSet::new(),
            reachable: true,
            queued_outcomes: VecDeque::new(),
            state_file: None,
        })
    }

    /// Simulator persisted under `dir`: cluster storage in `dir/fs`, queue
    /// state in `dir/state.json`. Reopens existing state.
    pub fn open(dir: &Path, dialect: SchedulerKind) -> std::io::Result<Self> {
        let state_file = dir.join(STATE_FILE);
        let mut sim = if state_file.exists() {
            let text = fs::read_to_string(&state_file)?;
            let sim: Simulator = serde_json::from_str(&text).map_err(|e| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("{}: {e}", state_file.display()),
                )
            })?;
            if sim.dialect != dialect {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::InvalidInput,
                    format!(
                        "simulator at {} speaks {}, not {}",
                        dir.display(),
                        sim.dialect,
                        dialect
                    ),
                ));
            }
            sim
        } else {
            Simulator::new(dir.join("fs"), dialect)?
        };
        sim.state_file = Some(state_file);
        sim.save()?;
        Ok(sim)
    }

    pub fn shared(self) -> SharedSimulator {
        Arc::new(Mutex::new(self))
    }

    /// Writes queue state when opened with [`Simulator::open`]; no-op
    /// otherwise.
    pub fn save(&self) -> std::io::Result<()> {
        let Some(path) = &self.state_file else {
            return Ok(());
        };
        let tmp = path.with_extension("json.tmp");
        fs::write(
            &tmp,
            serde_json::to_vec_pretty(self).expect("simulator serializes"),
        )?;
        fs::rename(tmp, path)
    }

    pub fn dialect(&self) -> SchedulerKind {
        self.dialect
    }

    /// Host directory backing the cluster root.
    pub fn root(&self) -> &Path {
        &self.fs.root
    }

    /// Host path of a cluster path.
    pub fn host_path(&self, cluster_path: &str) -> Option<PathBuf> {
        self.fs.host(cluster_path, "/").ok()
    }

    pub fn current_tick(&self) -> u64 {
        self.tick
    }

    pub fn events(&self) -> &[SimEvent] {
        &self.events
    }

    pub fn jobs(&self) -> &[SimJob] {
        &self.jobs
    }

    pub fn job(&self, sim_id: &str) -> Option<&SimJob> {
        self.jobs.iter().find(|j| j.sim_id == sim_id)
    }

    pub fn state_of(&self, sim_id: &str) -> Option<JobState> {
        self.job(sim_id).map(|j| j.state)
    }

    /// Restricts sessions to the given identities. With none authorized,
    /// any identity may connect.
    pub fn authorize(&mut self, identity: impl Into<String>) {
        self.authorized.insert(identity.into());
    }

    pub fn is_authorized(&self, identity: &str) -> bool {
        self.authorized.is_empty() || self.authorized.contains(identity)
    }

    /// While unreachable, every session operation fails with `SessionLost`.
    pub fn set_reachable(&mut self, reachable: bool) {
        self.reachable = reachable;
    }

    pub fn is_reachable(&self) -> bool {
        self.reachable
    }

    /// Outcome applied to the next submitted job.
    pub fn queue_outcome(&mut self, outcome: ScriptedOutcome) {
        self.queued_outcomes.push_back(outcome);
    }

    pub fn set_outcome(&mut self, sim_id: &str, outcome: ScriptedOutcome) -> Result<(), SimError> {
        let job = self
            .jobs
            .iter_mut()
            .find(|j| j.sim_id == sim_id)
            .ok_or_else(|| SimError::UnknownJob(sim_id.to_owned()))?;
        job.outcome = Some(outcome);
        Ok(())
    }

    /// Enqueues a batch script. `workdir` is where the script lives; job
    /// commands start there.
    pub fn submit(&mut self, script: &str, workdir: Option<&str>) -> Result<String, SimError> {
        let reject = |why: String| Err(SimError::ScriptRejected(why));
        if !script.starts_with("#!") {
            return reject("script does not start with an interpreter line".into());
        }
        let prefix = BatchScript::directive_prefix(self.dialect);
        if !script.lines().any(|l| l.starts_with(prefix)) {
            return reject(format!("no {} directives found", prefix.trim()));
        }
        let directives = read_directives(self.dialect, script);
        match &directives.time {
            None => return reject("time limit directive is required".into()),
            Some(t) if !Clocktime(t.clone()).is_valid() => {
                return reject(format!("invalid time limit {t:?}"))
            }
            _ => {}
        }
        if directives.nodes.is_none_or(|n| n == 0) {
            return reject("node count directive is required".into());
        }

        let seq = self.next_seq;
        self.next_seq += 1;
        let sim_id = match self.dialect {
            SchedulerKind::Slurm => seq.to_string(),
            SchedulerKind::Pbs => format!("{seq}.sim"),
        };
        let workdir = workdir.unwrap_or("/").to_owned();
        let default_log = |suffix: &str| match self.dialect {
            SchedulerKind::Slurm => format!("{}/slurm-{seq}.out", workdir.trim_end_matches('/')),
            SchedulerKind::Pbs => format!(
                "{}/{}.{suffix}{seq}",
                workdir.trim_end_matches('/'),
                directives.name.as_deref().unwrap_or("STDIN")
            ),
        };
        let stdout_path = directives
            .stdout
            .clone()
            .unwrap_or_else(|| default_log("o"));
        let stderr_path = directives
            .stderr
            .clone()
            .unwrap_or_else(|| default_log("e"));

        let mut env = BTreeMap::new();
        match self.dialect {
            SchedulerKind::Slurm => env.insert("SLURM_JOB_ID".into(), sim_id.clone()),
            SchedulerKind::Pbs => env.insert("PBS_JOBID".into(), sim_id.clone()),
        };
        let lines = script
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_owned)
            .collect();

        self.jobs.push(SimJob {
            sim_id: sim_id.clone(),
            script: script.to_owned(),
            state: JobState::Pending,
            workdir: workdir.clone(),
            directives,
            stdout_path,
            stderr_path,
            outcome: self.queued_outcomes.pop_front(),
            exit_code: None,
            lines,
            shell: ShellState {
                cwd: workdir,
                env,
                errexit: false,
                next_line: 0,
                failed: None,
                exited: false,
            },
        });
        Ok(sim_id)
    }

    /// Advances every non-terminal job by one state.
    pub fn tick(&mut self) -> Vec<SimEvent> {
        self.tick += 1;
        let mut events = Vec::new();
        for job in &mut self.jobs {
            let from = job.state;
            let to = match from {
                JobState::Pending => {
                    run_job(&self.fs, job, true);
                    JobState::Running
                }
                JobState::Running => {
                    run_job(&self.fs, job, false);
                    let forced = job.outcome.clone();
                    match forced {
                        Some(ScriptedOutcome::Fail { stderr, exit_code }) => {
                            let _ = self.fs.append(&job.stderr_path, &stderr);
                            job.exit_code = Some(exit_code);
                            JobState::Failed
                        }
                        Some(ScriptedOutcome::Succeed) => {
                            job.exit_code = Some(0);
                            JobState::Finished
                        }
                        None => match job.shell.failed {
                            Some(code) => {
                                job.exit_code = Some(code);
                                JobState::Failed
                            }
                            None => {
                                job.exit_code = Some(0);
                                JobState::Finished
                            }
                        },
                    }
                }
                _ => continue,
            };
            job.state = to;
            events.push(SimEvent {
                tick: self.tick,
                sim_id: job.sim_id.clone(),
                from,
                to,
            });
        }
        self.events.extend(events.iter().cloned());
        events
    }

    /// Runs a command line on the submit host.
    pub fn exec(&mut self, command: &str) -> ExecOutput {
        let Some(tokens) = shlex::split(command) else {
            return ExecOutput::fail(2, "sh: syntax error: unterminated quote\n");
        };
        let mut out = ExecOutput::ok("");
        for segment in tokens.split(|t| t == "&&") {
            if segment.is_empty() {
                return ExecOutput::fail(2, "sh: syntax error near `&&'\n");
            }
            let step = self.exec_simple(segment);
            out.stdout.push_str(&step.stdout);
            out.stderr.push_str(&step.stderr);
            out.exit_code = step.exit_code;
            if !step.success() {
                break;
            }
        }
        out
    }

    fn exec_simple(&mut self, argv: &[String]) -> ExecOutput {
        let (cmd, args) = (argv[0].as_str(), &argv[1..]);
        let host = |p: &str| self.fs.host(p, "/");
        let operands = || args.iter().filter(|a| !a.starts_with('-'));
        match (cmd, self.dialect) {
            ("true", _) => ExecOutput::ok(""),
            ("false", _) => ExecOutput::fail(1, ""),
            ("echo", _) => ExecOutput::ok(format!("{}\n", args.join(" "))),
            ("mkdir", _) => {
                for p in operands() {
                    let res =
                        host(p).and_then(|h| fs::create_dir_all(h).map_err(|e| e.to_string()));
                    if let Err(e) = res {
                        return ExecOutput::fail(1, format!("mkdir: {p}: {e}\n"));
                    }
                }
                ExecOutput::ok("")
            }
            ("rm", _) => {
                for p in operands() {
                    match host(p) {
                        Ok(h) if h == self.fs.root => {
                            return ExecOutput::fail(1, "rm: refusing to remove '/'\n")
                        }
                        Ok(h) if h.is_dir() => {
                            let _ = fs::remove_dir_all(h);
                        }
                        Ok(h) => {
                            let _ = fs::remove_file(h);
                        }
                        Err(e) => return ExecOutput::fail(1, format!("rm: {e}\n")),
                    }
                }
                ExecOutput::ok("")
            }
            ("cat", _) => {
                let mut text = String::new();
                for p in operands() {
                    match host(p).and_then(|h| fs::read_to_string(h).map_err(|e| e.to_string())) {
                        Ok(t) => text.push_str(&t),
                        Err(e) => return ExecOutput::fail(1, format!("cat: {p}: {e}\n")),
                    }
                }
                ExecOutput::ok(text)
            }
            ("tail", _) => {
                let (Some(n), Some(p)) = (flag_value(args, "-c"), args.last()) else {
                    return ExecOutput::fail(2, "tail: usage: tail -c N FILE\n");
                };
                let Ok(n) = n.parse::<usize>() else {
                    return ExecOutput::fail(2, format!("tail: invalid byte count {n}\n"));
                };
                match host(p).and_then(|h| fs::read(h).map_err(|e| e.to_string())) {
                    Ok(bytes) => {
                        let start = bytes.len().saturating_sub(n);
                        ExecOutput::ok(String::from_utf8_lossy(&bytes[start..]).into_owned())
                    }
                    Err(e) => ExecOutput::fail(1, format!("tail: {p}: {e}\n")),
                }
            }
            ("test", _) => {
                let (flag, p) = match args {
                    [flag, p] => (flag.as_str(), p),
                    _ => return ExecOutput::fail(2, "test: usage: test -e|-f|-d PATH\n"),
                };
                let Ok(h) = host(p) else {
                    return ExecOutput::fail(1, "");
                };
                let ok = match flag {
                    "-e" => h.exists(),
                    "-f" => h.is_file(),
                    "-d" => h.is_dir(),
                    _ => return ExecOutput::fail(2, format!("test: unknown flag {flag}\n")),
                };
                if ok {
                    ExecOutput::ok("")
                } else {
                    ExecOutput::fail(1, "")
                }
            }
            ("ls", _) => {
                let p = operands().next().map(String::as_str).unwrap_or("/");
                match host(p).and_then(|h| fs::read_dir(h).map_err(|e| e.to_string())) {
                    Ok(rd) => {
                        let mut names: Vec<String> = rd
                            .filter_map(|e| e.ok())
                            .map(|e| e.file_name().to_string_lossy().into_owned())
                            .collect();
                        names.sort();
                        ExecOutput::ok(names.iter().map(|n| format!("{n}\n")).collect::<String>())
                    }
                    Err(e) => ExecOutput::fail(2, format!("ls: {p}: {e}\n")),
                }
            }
            ("tar", _) => self.exec_tar(args),
            ("sbatch", SchedulerKind::Slurm) | ("qsub", SchedulerKind::Pbs) => {
                let Some(p) = operands().next_back() else {
                    return ExecOutput::fail(1, format!("{cmd}: no script given\n"));
                };
                let text =
                    match host(p).and_then(|h| fs::read_to_string(h).map_err(|e| e.to_string())) {
                        Ok(t) => t,
                        Err(e) => return ExecOutput::fail(1, format!("{cmd}: {p}: {e}\n")),
                    };
                let dir = SimFs::normalize(p, "/")
                    .ok()
                    .and_then(|n| Path::new(&n).parent().map(|d| d.display().to_string()));
                match self.submit(&text, dir.as_deref()) {
                    Ok(id) if cmd == "sbatch" && !args.iter().any(|a| a == "--parsable") => {
                        ExecOutput::ok(format!("Submitted batch job {id}\n"))
                    }
                    Ok(id) => ExecOutput::ok(format!("{id}\n")),
                    Err(e) => ExecOutput::fail(1, format!("{cmd}: error: {e}\n")),
                }
            }
            ("sacct", SchedulerKind::Slurm) => {
                let Some(id) = flag_value(args, "-j") else {
                    return ExecOutput::fail(1, "sacct: -j required\n");
                };
                match self.state_of(id) {
                    Some(st) => ExecOutput::ok(format!("{}\n", slurm_state_name(st))),
                    None => ExecOutput::ok(""),
                }
            }
            ("squeue", SchedulerKind::Slurm) => {
                let Some(id) = flag_value(args, "-j") else {
                    return ExecOutput::fail(1, "squeue: -j required\n");
                };
                match self.state_of(id) {
                    Some(st) if !st.is_terminal() => {
                        ExecOutput::ok(format!("{}\n", slurm_state_name(st)))
                    }
                    _ => ExecOutput::fail(1, "slurm_load_jobs error: Invalid job id specified\n"),
                }
            }
            ("qstat", SchedulerKind::Pbs) => {
                let Some(id) = operands().next_back() else {
                    return ExecOutput::fail(2, "qstat: job id required\n");
                };
                match self.job(id) {
                    Some(job) => {
                        let code = match job.state {
                            JobState::Pending => "Q",
                            JobState::Running => "R",
                            _ => "F",
                        };
                        let mut text = format!("Job Id: {id}\n    job_state = {code}\n");
                        if let Some(exit) = job.exit_code {
                            text.push_str(&format!("    Exit_status = {exit}\n"));
                        }
                        ExecOutput::ok(text)
                    }
                    None => ExecOutput::fail(153, format!("qstat: Unknown Job Id {id}\n")),
                }
            }
            _ => ExecOutput::fail(127, format!("sh: {cmd}: command not found\n")),
        }
    }

    fn exec_tar(&self, args: &[String]) -> ExecOutput {
        let mode = args
            .first()
            .map(|a| a.trim_start_matches('-'))
            .unwrap_or("");
        if !(mode.contains('x') && mode.contains('z') && mode.contains('f')) {
            return ExecOutput::fail(2, "tar: only -xzf is supported\n");
        }
        let Some(archive) = args.get(1) else {
            return ExecOutput::fail(2, "tar: archive required\n");
        };
        let dest = flag_value(args, "-C").unwrap_or("/");
        let (archive_host, dest_host) = match (self.fs.host(archive, "/"), self.fs.host(dest, "/"))
        {
            (Ok(a), Ok(d)) => (a, d),
            (Err(e), _) | (_, Err(e)) => return ExecOutput::fail(2, format!("tar: {e}\n")),
        };
        let unpack = || -> std::io::Result<()> {
            let file = fs::File::open(&archive_host)?;
            let mut tar = tar::Archive::new(flate2::read::GzDecoder::new(file));
            fs::create_dir_all(&dest_host)?;
            tar.unpack(&dest_host)
        };
        match unpack() {
            Ok(()) => ExecOutput::ok(""),
            Err(e) => ExecOutput::fail(2, format!("tar: {archive}: {e}\n")),
        }
    }
}

fn slurm_state_name(state: JobState) -> &'static str {
    match state {
        JobState::Pending => "PENDING",
        JobState::Running => "RUNNING",
        JobState::Finished => "COMPLETED",
        _ => "FAILED",
    }
}

fn flag_value<'a>(args: &'a [String], flag: &str) -> Option<&'a str> {
    args.iter()
        .position(|a| a == flag)
        .and_then(|i| args.get(i + 1))
        .map(String::as_str)
}

fn is_prolog_builtin(line: &str) -> bool {
    matches!(
        line.split_whitespace().next(),
        Some("set" | "cd" | "export")
    )
}

/// Runs the next part of a job script: on the first call up to and
/// including the first real command, on the second call the remainder.
fn run_job(fs: &SimFs, job: &mut SimJob, first_part: bool) {
    while job.shell.next_line < job.lines.len() && !job.shell.exited {
        if job.shell.failed.is_some() && job.shell.errexit {
            break;
        }
        let line = job.lines[job.shell.next_line].clone();
        job.shell.next_line += 1;
        let builtin = is_prolog_builtin(&line);
        let (status, stdout, stderr) = run_job_line(fs, job, &line);
        let _ = fs.append(&job.stdout_path, &stdout);
        let _ = fs.append(&job.stderr_path, &stderr);
        if status != 0 {
            job.shell.failed = Some(status);
        }
        if first_part && !builtin {
            break;
        }
    }
}

fn expand_vars(line: &str, env: &BTreeMap<String, String>) -> String {
    let mut out = String::with_capacity(line.len());
    let chars: Vec<char> = line.chars().collect();
    let mut i = 0;
    let mut in_single = false;
    while i < chars.len() {
        let c = chars[i];
        if c == '\'' {
            in_single = !in_single;
        }
        if c != '$' || in_single {
            out.push(c);
            i += 1;
            continue;
        }
        let braced = chars.get(i + 1) == Some(&'{');
        let start = if braced { i + 2 } else { i + 1 };
        let mut end = start;
        while end < chars.len() && (chars[end].is_ascii_alphanumeric() || chars[end] == '_') {
            end += 1;
        }
        if end == start || (braced && chars.get(end) != Some(&'}')) {
            out.push(c);
            i += 1;
            continue;
        }
        let name: String = chars[start..end].iter().collect();
        out.push_str(env.get(&name).map(String::as_str).unwrap_or(""));
        i = if braced { end + 1 } else { end };
    }
    out
}

fn check_image(fs: &SimFs, cwd: &str, args: &[String]) -> Result<(), String> {
    let mut i = 0;
    while i < args.len() {
        let a = args[i].as_str();
        match a {
            "--" => break,
            "-b" | "-c" | "-u" | "-g" | "--set-env" | "--unset-env" => i += 2,
            _ if a.starts_with('-') => i += 1,
            image => {
                return match fs.host(image, cwd) {
                    Ok(h) if h.is_dir() => Ok(()),
                    _ => Err(format!("ch-run[sim]: can't find image: {image}\n")),
                };
            }
        }
    }
    Err("ch-run[sim]: no image given\n".into())
}

fn run_job_line(fs: &SimFs, job: &mut SimJob, line: &str) -> (i32, String, String) {
    let expanded = expand_vars(line, &job.shell.env);
    let Some(mut argv) = shlex::split(&expanded) else {
        return (2, String::new(), format!("sh: syntax error: {line}\n"));
    };
    if argv.is_empty() {
        return (0, String::new(), String::new());
    }
    let mut redirect = None;
    if let Some(pos) = argv.iter().position(|t| t == ">" || t == ">>") {
        let append = argv[pos] == ">>";
        match argv.get(pos + 1).cloned() {
            Some(target) => redirect = Some((target, append)),
            None => return (2, String::new(), "sh: syntax error near `>'\n".into()),
        }
        argv.truncate(pos);
    }
    let cwd = job.shell.cwd.clone();
    let (cmd, args) = (argv[0].as_str(), &argv[1..]);
    let (status, stdout, stderr): (i32, String, String) = match cmd {
        "set" => {
            if args.iter().any(|a| a.starts_with('-') && a.contains('e')) {
                job.shell.errexit = true;
            }
            (0, String::new(), String::new())
        }
        "cd" => {
            let target = args.first().map(String::as_str).unwrap_or("/");
            match (SimFs::normalize(target, &cwd), fs.host(target, &cwd)) {
                (Ok(norm), Ok(h)) if h.is_dir() => {
                    job.shell.cwd = norm;
                    (0, String::new(), String::new())
                }
                _ => (
                    1,
                    String::new(),
                    format!("cd: {target}: No such file or directory\n"),
                ),
            }
        }
        "export" => {
            for kv in args {
                if let Some((k, v)) = kv.split_once('=') {
                    job.shell.env.insert(k.to_owned(), v.to_owned());
                }
            }
            (0, String::new(), String::new())
        }
        "echo" => (0, format!("{}\n", args.join(" ")), String::new()),
        "true" | "sleep" => (0, String::new(), String::new()),
        "false" => (1, String::new(), String::new()),
        "exit" => {
            job.shell.exited = true;
            let code = args.first().and_then(|a| a.parse().ok()).unwrap_or(0);
            (code, String::new(), String::new())
        }
        "touch" | "mkdir" => {
            let mut err = String::new();
            for p in args.iter().filter(|a| !a.starts_with('-')) {
                let res = fs.host(p, &cwd).and_then(|h| {
                    if cmd == "mkdir" {
                        fs::create_dir_all(h).map_err(|e| e.to_string())
                    } else {
                        fs::OpenOptions::new()
                            .create(true)
                            .append(true)
                            .open(h)
                            .map(drop)
                            .map_err(|e| e.to_string())
                    }
                });
                if let Err(e) = res {
                    err.push_str(&format!("{cmd}: {p}: {e}\n"));
                }
            }
            (i32::from(!err.is_empty()), String::new(), err)
        }
        "cat" => {
            let mut text = String::new();
            for p in args {
                match fs
                    .host(p, &cwd)
                    .and_then(|h| fs::read_to_string(h).map_err(|e| e.to_string()))
                {
                    Ok(t) => text.push_str(&t),
                    Err(e) => return (1, text, format!("cat: {p}: {e}\n")),
                }
            }
            (0, text, String::new())
        }
        "ch-run" => match check_image(fs, &cwd, args) {
            Ok(()) => (0, format!("[sim] {}\n", argv.join(" ")), String::new()),
            Err(e) => (1, String::new(), e),
        },
        "srun" | "mpiexec" | "mpirun" => {
            let n_flag = args.iter().position(|a| a == "-n" || a == "-np");
            let tasks: Option<u64> = n_flag
                .and_then(|i| args.get(i + 1))
                .and_then(|v| v.parse().ok());
            let slots = job
                .directives
                .nodes
                .zip(job.directives.tasks_per_node)
                .map(|(n, t)| n * t);
            let inner = n_flag
                .map(|i| &args[(i + 2).min(args.len())..])
                .unwrap_or(args);
            match (tasks, slots) {
                (None, _) => (1, String::new(), format!("{cmd}: task count missing\n")),
                (Some(t), Some(s)) if t > s => (
                    1,
                    String::new(),
                    format!("{cmd}: error: {t} tasks requested but allocation has {s} slots\n"),
                ),
                (Some(t), _) => {
                    if inner.first().map(String::as_str) == Some("ch-run") {
                        if let Err(e) = check_image(fs, &cwd, &inner[1..]) {
                            return finish_line(fs, &cwd, redirect, (1, String::new(), e));
                        }
                    }
                    (
                        0,
                        format!("[sim] {cmd} launched {t} tasks: {}\n", inner.join(" ")),
                        String::new(),
                    )
                }
            }
        }
        _ => (0, format!("[sim] {}\n", argv.join(" ")), String::new()),
    };
    finish_line(fs, &cwd, redirect, (status, stdout, stderr))
}

fn finish_line(
    fs: &SimFs,
    cwd: &str,
    redirect: Option<(String, bool)>,
    (status, stdout, stderr): (i32, String, String),
) -> (i32, String, String) {
    let Some((target, append)) = redirect else {
        return (status, stdout, stderr);
    };
    let res = fs.host(&target, cwd).and_then(|h| {
        let mut f = fs::OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(h)
            .map_err(|e| e.to_string())?;
        f.write_all(stdout.as_bytes()).map_err(|e| e.to_string())
    });
    match res {
        Ok(()) => (status, String::new(), stderr),
        Err(e) => (1, String::new(), format!("{stderr}sh: {target}: {e}\n")),
    }
}

/// Submits a script text as if it were stored at the cluster root.
pub fn sim_submit(sim: &mut Simulator, script: &str) -> Result<String, SimError> {
    sim.submit(script, None)
}

pub fn sim_tick(sim: &mut Simulator) -> Vec<SimEvent> {
    sim.tick()
}

/// A session on a [`Simulator`], attributed to one identity.
#[derive(Debug)]
pub struct SimSession {
    sim: SharedSimulator,
    identity: String,
    dialect: SchedulerKind,
    open: AtomicBool,
}

impl SimSession {
    pub fn connect(sim: &SharedSimulator, identity: &str) -> Result<Self, ClusterError> {
        let guard = sim.lock().expect("simulator poisoned");
        if !guard.reachable {
            return Err(ClusterError::SessionLost("simulator unreachable".into()));
        }
        if !guard.is_authorized(identity) {
            return Err(ClusterError::AuthFailed(format!(
                "{identity} is not in the authorized keys"
            )));
        }
        Ok(SimSession {
            sim: Arc::clone(sim),
            identity: identity.to_owned(),
            dialect: guard.dialect,
            open: AtomicBool::new(true),
        })
    }

    pub fn close(&self) {
        self.open.store(false, Ordering::SeqCst);
    }

    pub fn simulator(&self) -> &SharedSimulator {
        &self.sim
    }

    fn guard(&self) -> Result<MutexGuard<'_, Simulator>, ClusterError> {
        if !self.open.load(Ordering::SeqCst) {
            return Err(ClusterError::SessionLost("session closed".into()));
        }
        let guard = self.sim.lock().expect("simulator poisoned");
        if !guard.reachable {
            return Err(ClusterError::SessionLost("simulator unreachable".into()));
        }
        Ok(guard)
    }
}

fn persist(sim: &Simulator) -> Result<(), ClusterError> {
    sim.save()
        .map_err(|e| ClusterError::Transfer(format!("cannot persist simulator state: {e}")))
}

impl ClusterSession for SimSession {
    fn identity(&self) -> &str {
        &self.identity
    }

    fn scheduler(&self) -> SchedulerKind {
        self.dialect
    }

    fn exec(&self, command: &str) -> Result<ExecOutput, ClusterError> {
        let mut sim = self.guard()?;
        let out = sim.exec(command);
        persist(&sim)?;
        Ok(out)
    }

    fn put(&self, local: &Path, remote: &str) -> Result<(), ClusterError> {
        let sim = self.guard()?;
        let dest = sim.fs.host(remote, "/").map_err(ClusterError::Transfer)?;
        if let Some(parent) = dest.parent() {
            fs::create_dir_all(parent).map_err(|e| ClusterError::Transfer(e.to_string()))?;
        }
        fs::copy(local, &dest)
            .map(drop)
            .map_err(|e| ClusterError::Transfer(format!("{}: {e}", local.display())))
    }

    fn get(&self, remote: &str, local: &Path) -> Result<(), ClusterError> {
        let sim = self.guard()?;
        let src = sim.fs.host(remote, "/").map_err(ClusterError::Transfer)?;
        fs::copy(&src, local)
            .map(drop)
            .map_err(|e| ClusterError::Transfer(format!("{remote}: {e}")))
    }

    fn local_view(&self, remote: &str) -> Option<PathBuf> {
        self.sim.lock().ok()?.fs.host(remote, "/").ok()
    }
}
