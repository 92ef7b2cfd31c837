//! `easey`: adapt a Dockerfile to an HPC cluster, build and pack it, then
//! submit, watch and collect the job.
//!
//! State lives under `EASEY_HOME` (default `~/.easey`):
//!
//! ```text
//! jobs/           one JSON record per job
//! sim/slurm/      persisted scheduler simulator for SLURM targets
//! sim/pbs/        ... and for PBS targets
//! targets/        extra cluster profiles (*.json)
//! ```

mod exit;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use easey::cluster::{
    ClusterSession, ScriptedOutcome, SimSession, Simulator, SshEndpoint, SshSession,
};
use easey::config::{
    parse_config, parse_config_lax, ConfigError, EaseyConfig, Protocol, DEFAULT_MOUNT,
};
use easey::engine::{Engine, RecordStore};
use easey::imageprep::{
    build_image, pack_container, transform_dockerfile, ArchivePacker, ChBuilder2TarPacker,
    ContainerArchive, DockerBuilder, ImageBuilder, MockBuilder,
};
use easey::metrics::{load_fom_table, render_report, report_rows};
use easey::staging::{CredentialStore, ScpTransport, Stager, TransferStatus};
use easey::targets::{load_registry, lookup_target, SchedulerKind, TargetProfile, TargetRegistry};

use exit::{CliError, Exit};

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "easey",
    version,
    about = "Deploy Docker-described applications to HPC batch clusters"
)]
struct Cli {
    /// Machine-readable output.
    #[arg(long, global = true)]
    json: bool,

    /// State directory.
    #[arg(long, global = true, env = "EASEY_HOME")]
    home: Option<PathBuf>,

    /// Directory with additional cluster profiles (default: $EASEY_HOME/targets).
    #[arg(long, global = true)]
    profiles: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BuilderKind {
    /// In-process builder, needs nothing installed.
    Mock,
    /// docker build + ch-builder2tar.
    Docker,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Adapt a Dockerfile to a target, build the image and pack it.
    Build {
        dockerfile: PathBuf,
        #[arg(long)]
        target: String,
        /// Job config; supplies the image name and data mount point.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Where the archive is written.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = BuilderKind::Mock)]
        builder: BuilderKind,
        /// Print the adapted Dockerfile instead of building.
        #[arg(long)]
        dry_run: bool,
    },
    /// Deploy a packed container with a job config.
    Submit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        target: String,
    },
    /// Refresh and print a job's state.
    Status {
        id: String,
        /// Also print the tails of stdout and stderr.
        #[arg(long)]
        logs: bool,
    },
    /// Stage a finished job's outputs out.
    Fetch { id: String },
    /// Compare container and native figures of merit.
    Report {
        #[arg(long = "fom-table")]
        fom_table: PathBuf,
    },
    /// Drive the local scheduler simulator.
    #[command(subcommand)]
    Sim(SimCommand),
}

#[derive(Debug, Subcommand)]
enum SimCommand {
    /// Advance the simulator clock.
    Tick {
        #[arg(default_value_t = 1)]
        count: u32,
        #[arg(long, default_value = "test:sim")]
        target: String,
    },
    /// Make a queued or running job fail at its next tick.
    Fail {
        /// easey job id or scheduler job id.
        job: String,
        #[arg(long, default_value = "test:sim")]
        target: String,
        #[arg(long, default_value_t = 1)]
        exit_code: i32,
        #[arg(long, default_value = "")]
        stderr: String,
    },
}

struct Context {
    json: bool,
    home: PathBuf,
    registry: TargetRegistry,
}

impl Context {
    fn new(cli: &Cli) -> Result<Self> {
        let home = match &cli.home {
            Some(h) => h.clone(),
            None => std::env::var_os("HOME")
                .map(|h| PathBuf::from(h).join(".easey"))
                .ok_or_else(|| CliError::new(Exit::Io, "neither EASEY_HOME nor HOME is set"))?,
        };
        let profiles = cli.profiles.clone().unwrap_or_else(|| home.join("targets"));
        let registry = if profiles.is_dir() {
            load_registry(&profiles)?
        } else if cli.profiles.is_some() {
            return Err(CliError::new(
                Exit::Config,
                format!("profile directory {} does not exist", profiles.display()),
            ));
        } else {
            TargetRegistry::builtin()
        };
        Ok(Context {
            json: cli.json,
            home,
            registry,
        })
    }

    fn target(&self, name: &str) -> Result<TargetProfile> {
        Ok(lookup_target(&self.registry, name)?)
    }

    fn emit(&self, text: &str, value: serde_json::Value) {
        let mut out = std::io::stdout().lock();
        let _ = if self.json {
            writeln!(out, "{value}")
        } else {
            write!(out, "{text}")
        };
    }

    fn sim_dir(&self, scheduler: SchedulerKind) -> PathBuf {
        let leaf = match scheduler {
            SchedulerKind::Slurm => "slurm",
            SchedulerKind::Pbs => "pbs",
        };
        self.home.join("sim").join(leaf)
    }

    fn open_simulator(&self, scheduler: SchedulerKind) -> Result<Simulator> {
        let dir = self.sim_dir(scheduler);
        Simulator::open(&dir, scheduler).map_err(|e| CliError::io(dir.display(), e))
    }

    fn session(&self, profile: &TargetProfile) -> Result<Box<dyn ClusterSession>> {
        if profile.is_simulated() {
            let sim = self.open_simulator(profile.scheduler)?.shared();
            return Ok(Box::new(SimSession::connect(&sim, &identity())?));
        }
        let endpoint = SshEndpoint::parse(&profile.submit_host).ok_or_else(|| {
            CliError::new(
                Exit::Config,
                format!(
                    "{}: bad submit host {:?}",
                    profile.name, profile.submit_host
                ),
            )
        })?;
        let key = default_key().ok_or_else(|| {
            CliError::new(
                Exit::AuthFailed,
                "no key: set EASEY_KEY to an SSH private key",
            )
        })?;
        Ok(Box::new(SshSession::connect(
            endpoint,
            &key,
            profile.scheduler,
        )?))
    }

    fn engine(&self, profile: &TargetProfile) -> Result<Engine> {
        let store = RecordStore::open(self.home.join("jobs"))?;
        let mut creds = CredentialStore::new(std::env::current_dir().unwrap_or_default());
        if let Some(key) = default_key() {
            creds = creds.with_default_key(key);
        }
        let mut stager = Stager::new(creds);
        if profile.is_simulated() {
            // `sim:/path` names a file on the simulated cluster's storage
            let root = self.sim_dir(profile.scheduler).join("fs");
            stager = stager.with_transport(
                Protocol::Scp,
                Box::new(ScpTransport::default().with_loopback("sim", root)),
            );
        }
        Ok(Engine::new(store, stager))
    }

    /// Engine, session and profile for an existing job.
    fn for_job(&self, id: &str) -> Result<(Engine, Box<dyn ClusterSession>, easey::config::JobId)> {
        let store = RecordStore::open(self.home.join("jobs"))?;
        let record = store.get(id)?;
        let profile = self.target(&record.target)?;
        Ok((self.engine(&profile)?, self.session(&profile)?, record.id))
    }
}

fn identity() -> String {
    std::env::var("USER").unwrap_or_else(|_| "easey".into())
}

fn default_key() -> Option<PathBuf> {
    std::env::var_os("EASEY_KEY")
        .filter(|k| !k.is_empty())
        .map(PathBuf::from)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))
}

/// Reads a config in the strict layout, falling back to the older nested
/// one. Relative key references are pinned to the config's directory so
/// later commands can resolve them from anywhere.
fn load_config(path: &Path) -> Result<EaseyConfig> {
    let text = read(path)?;
    let mut cfg = match parse_config(&text) {
        Ok(cfg) => cfg,
        // report whichever reader got further
        Err(strict) => match parse_config_lax(&text) {
            Ok(cfg) => cfg,
            Err(lax @ (ConfigError::Schema { .. } | ConfigError::Value { .. })) => {
                return Err(lax.into())
            }
            Err(ConfigError::Syntax { .. }) => return Err(strict.into()),
        },
    };
    let base = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_owned)
        .unwrap_or_else(|| PathBuf::from("."));
    let base = std::fs::canonicalize(&base).unwrap_or(base);
    if let Some(data) = cfg.data.as_mut() {
        for ep in data.input.iter_mut().chain(data.output.iter_mut()) {
            if let Some(auth) = ep.auth.as_mut() {
                if !auth.starts_with('/') && !auth.starts_with("~/") {
                    *auth = base.join(&*auth).to_string_lossy().into_owned();
                }
            }
        }
    }
    Ok(cfg)
}

fn sidecar(archive: &Path) -> PathBuf {
    let mut s = archive.as_os_str().to_owned();
    s.push(".sha256");
    PathBuf::from(s)
}

#[derive(Serialize)]
struct BuildOutput<'a> {
    archive: &'a Path,
    sha256: &'a str,
    image: &'a str,
    target: &'a str,
}

fn cmd_build(
    ctx: &Context,
    dockerfile: &Path,
    target: &str,
    config: Option<&Path>,
    out: &Path,
    builder: BuilderKind,
    dry_run: bool,
) -> Result<()> {
    let profile = ctx.target(target)?;
    let cfg = config.map(load_config).transpose()?;
    let mount = cfg.as_ref().map_or(DEFAULT_MOUNT, |c| c.mount());
    let name = cfg
        .as_ref()
        .map_or_else(|| "easey-image".to_owned(), EaseyConfig::image_name);
    let df = transform_dockerfile(&read(dockerfile)?, &profile, mount)?;
    if dry_run {
        ctx.emit(&df.text(), serde_json::to_value(&df).expect("serializes"));
        return Ok(());
    }
    let context = dockerfile
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));

    let mock = MockBuilder::new();
    let (image_builder, packer): (Box<dyn ImageBuilder>, Box<dyn ArchivePacker>) = match builder {
        BuilderKind::Mock => (Box::new(mock.clone()), Box::new(mock.packer())),
        BuilderKind::Docker => (
            Box::new(DockerBuilder::default()),
            Box::new(ChBuilder2TarPacker::default()),
        ),
    };
    let image = build_image(&df, image_builder.as_ref(), &name, context)?;
    let archive = pack_container(&image, out, packer.as_ref())?;
    let file = archive.file_name();
    std::fs::write(
        sidecar(&archive.path),
        format!("{}  {file}\n", archive.checksum),
    )
    .map_err(|e| CliError::io(sidecar(&archive.path).display(), e))?;

    let shown = BuildOutput {
        archive: &archive.path,
        sha256: &archive.checksum,
        image: &archive.image_name,
        target,
    };
    ctx.emit(
        &format!(
            "archive {}\nsha256 {}\n",
            archive.path.display(),
            archive.checksum
        ),
        serde_json::to_value(&shown).expect("serializes"),
    );
    Ok(())
}

/// Describes an archive, taking the expected checksum from the `.sha256`
/// file written by `build` when there is one.
fn load_archive(path: &Path) -> Result<ContainerArchive> {
    let mut archive = ContainerArchive::from_file(path).map_err(|e| {
        let exit = if path.exists() {
            Exit::SubmitFailed
        } else {
            Exit::Io
        };
        CliError::new(exit, format!("{}: {e}", path.display()))
    })?;
    if let Ok(text) = std::fs::read_to_string(sidecar(path)) {
        let expected = text.split_whitespace().next().unwrap_or("");
        archive.checksum = expected.to_owned();
    }
    Ok(archive)
}

fn cmd_submit(ctx: &Context, config: &Path, archive: &Path, target: &str) -> Result<()> {
    let profile = ctx.target(target)?;
    let cfg = load_config(config)?;
    let archive = load_archive(archive)?;
    let engine = ctx.engine(&profile)?;
    let session = ctx.session(&profile)?;
    let record = engine.submit(&cfg, &archive, &profile, session.as_ref())?;
    ctx.emit(
        &format!("{}\n", record.id),
        json!({
            "id": record.id,
            "state": record.state,
            "scheduler_job_id": record.scheduler_job_id,
            "workdir": record.workdir(),
        }),
    );
    Ok(())
}

fn cmd_status(ctx: &Context, id: &str, logs: bool) -> Result<()> {
    let stale = |err: CliError| -> CliError {
        if !matches!(err.exit, Exit::SessionLost | Exit::AuthFailed) {
            return err;
        }
        match RecordStore::open(ctx.home.join("jobs")).and_then(|s| s.get(id)) {
            Ok(last) => CliError::new(
                err.exit,
                format!("{}; last known state: {} (stale)", err.message, last.state),
            ),
            Err(_) => err,
        }
    };
    let (engine, session, id) = ctx.for_job(id).map_err(stale)?;
    let report = engine
        .poll_status(&id, session.as_ref())
        .map_err(|e| stale(e.into()))?;
    let mut text = format!("{}\n", report.state);
    if logs {
        text.push_str(&format!("--- stdout ---\n{}", report.stdout));
        if !report.stdout.is_empty() && !report.stdout.ends_with('\n') {
            text.push('\n');
        }
        text.push_str(&format!("--- stderr ---\n{}", report.stderr));
        if !report.stderr.is_empty() && !report.stderr.ends_with('\n') {
            text.push('\n');
        }
    }
    let mut value = serde_json::to_value(&report).expect("serializes");
    if !logs {
        let obj = value.as_object_mut().expect("report is an object");
        obj.remove("stdout");
        obj.remove("stderr");
    }
    ctx.emit(&text, value);
    Ok(())
}

fn cmd_fetch(ctx: &Context, id: &str) -> Result<()> {
    let (engine, session, id) = ctx.for_job(id)?;
    let results = engine.finalize(&id, session.as_ref())?;
    if results.is_empty() {
        ctx.emit("nothing to fetch\n", json!({ "id": id, "results": [] }));
        return Ok(());
    }
    let mut text = String::new();
    for r in &results {
        let file = &r.task.endpoint.location;
        match r.status {
            TransferStatus::Ok => text.push_str(&format!("ok {file}\n")),
            TransferStatus::Failed => text.push_str(&format!("failed {file}: {}\n", r.detail)),
        }
    }
    ctx.emit(&text, json!({ "id": id, "results": results }));
    let failed = results.iter().filter(|r| !r.is_ok()).count();
    if failed > 0 {
        return Err(CliError::new(
            Exit::StagingFailed,
            format!(
                "{failed} of {} outputs could not be staged out",
                results.len()
            ),
        ));
    }
    Ok(())
}

fn cmd_report(ctx: &Context, table: &Path) -> Result<()> {
    let rows = report_rows(&load_fom_table(table)?)?;
    ctx.emit(
        &render_report(&rows),
        serde_json::to_value(&rows).expect("serializes"),
    );
    Ok(())
}

fn cmd_sim(ctx: &Context, cmd: &SimCommand) -> Result<()> {
    match cmd {
        SimCommand::Tick { count, target } => {
            let profile = ctx.target(target)?;
            let mut sim = ctx.open_simulator(profile.scheduler)?;
            let mut events = Vec::new();
            for _ in 0..*count {
                events.extend(sim.tick());
            }
            sim.save().map_err(|e| CliError::io("simulator state", e))?;
            let text: String = events
                .iter()
                .map(|e| format!("{} {} {} -> {}\n", e.tick, e.sim_id, e.from, e.to))
                .collect();
            ctx.emit(
                &text,
                json!({ "tick": sim.current_tick(), "events": events }),
            );
        }
        SimCommand::Fail {
            job,
            target,
            exit_code,
            stderr,
        } => {
            let profile = ctx.target(target)?;
            // accept the easey id and translate it to the scheduler's
            let sim_id = match RecordStore::open(ctx.home.join("jobs"))?.get(job) {
                Ok(record) => record.scheduler_job_id.ok_or_else(|| {
                    CliError::new(Exit::UnknownJob, format!("{job} was never submitted"))
                })?,
                Err(_) => job.clone(),
            };
            let mut sim = ctx.open_simulator(profile.scheduler)?;
            sim.set_outcome(
                &sim_id,
                ScriptedOutcome::Fail {
                    stderr: stderr.clone(),
                    exit_code: *exit_code,
                },
            )
            .map_err(|e| CliError::new(Exit::UnknownJob, e.to_string()))?;
            sim.save().map_err(|e| CliError::io("simulator state", e))?;
            ctx.emit(
                &format!("{sim_id} will fail with exit code {exit_code}\n"),
                json!({ "scheduler_job_id": sim_id, "exit_code": exit_code }),
            );
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let ctx = Context::new(cli)?;
    match &cli.command {
        Command::Build {
            dockerfile,
            target,
            config,
            out,
            builder,
            dry_run,
        } => cmd_build(
            &ctx,
            dockerfile,
            target,
            config.as_deref(),
            out,
            *builder,
            *dry_run,
        ),
        Command::Submit {
            config,
            archive,
            target,
        } => cmd_submit(&ctx, config, archive, target),
        Command::Status { id, logs } => cmd_status(&ctx, id, *logs),
        Command::Fetch { id } => cmd_fetch(&ctx, id),
        Command::Report { fom_table } => cmd_report(&ctx, fom_table),
        Command::Sim(cmd) => cmd_sim(&ctx, cmd),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(Exit::Usage.code() as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if cli.json {
                eprintln!(
                    "{}",
                    json!({ "error": e.exit.name(), "code": e.exit.code(), "message": e.message })
                );
            } else {
                let name = e.exit.name();
                if e.message.starts_with(name) {
                    eprintln!("easey: {}", e.message);
                } else {
                    eprintln!("easey: {name}: {}", e.message);
                }
            }
            ExitCode::from(e.exit.code() as u8)
        }
    }
}
