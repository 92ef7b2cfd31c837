//! Batch script rendering for SLURM and PBS.
//!
//! | config field     | SLURM                     | PBS                         |
//! |------------------|---------------------------|-----------------------------|
//! | nodes            | `#SBATCH --nodes=N`       | `#PBS -l select=N`          |
//! | tasks-per-node   | `--ntasks-per-node=T`     | `:ncpus=T` (in select)      |
//! | cores-per-task   | `--cpus-per-task=C`       | `:mpiprocs=C` (in select)   |
//! | clocktime        | `--time=HH:MM:SS`         | `-l walltime=HH:MM:SS`      |
//! | ram (if set)     | `--mem=<MB>M`             | `-l mem=<MB>mb`             |

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{validate, EaseyConfig, ExecutionStep, JobId, ViolationCode};
use crate::targets::{SchedulerKind, TargetProfile};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BatchError {
    #[error("unsupported scheduler {0:?}")]
    UnsupportedScheduler(String),
    #[error("execution section has no steps")]
    EmptyExecution,
    #[error("config is not submittable: {0}")]
    InvalidConfig(ViolationCode),
}

/// `ceil(mpi_tasks / tasks_per_node)`, both at least 1.
pub fn derive_nodes(mpi_tasks: u64, tasks_per_node: u64) -> u64 {
    debug_assert!(mpi_tasks >= 1 && tasks_per_node >= 1);
    mpi_tasks.div_ceil(tasks_per_node.max(1))
}

/// Where a job lives on cluster storage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobPaths {
    pub workdir: String,
    pub data_folder: String,
    pub stdout: String,
    pub stderr: String,
}

impl JobPaths {
    pub fn new(workdir_root: &str, id: &JobId) -> Self {
        let workdir = format!("{}/{}", workdir_root.trim_end_matches('/'), id);
        JobPaths {
            data_folder: format!("{workdir}/data"),
            stdout: format!("{workdir}/stdout.log"),
            stderr: format!("{workdir}/stderr.log"),
            workdir,
        }
    }

    pub fn script(&self, scheduler: SchedulerKind) -> String {
        match scheduler {
            SchedulerKind::Slurm => format!("{}/job.sbatch", self.workdir),
            SchedulerKind::Pbs => format!("{}/job.pbs", self.workdir),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchScript {
    pub scheduler: SchedulerKind,
    pub directive_lines: Vec<String>,
    pub prolog_lines: Vec<String>,
    pub command_lines: Vec<String>,
    pub full_text: String,
}

impl BatchScript {
    pub fn directive_prefix(scheduler: SchedulerKind) -> &'static str {
        match scheduler {
            SchedulerKind::Slurm => "#SBATCH ",
            SchedulerKind::Pbs => "#PBS ",
        }
    }
}

/// Job name restricted to `[A-Za-z0-9_:.-]`.
pub fn sanitize_job_name(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '_' | ':' | '.' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn render_batch(
    cfg: &EaseyConfig,
    profile: &TargetProfile,
    paths: &JobPaths,
) -> Result<BatchScript, BatchError> {
    if cfg.execution.steps.is_empty() {
        return Err(BatchError::EmptyExecution);
    }
    if let Some(v) = validate(cfg).violations.first() {
        return Err(BatchError::InvalidConfig(v.code));
    }

    let scheduler = profile.scheduler;
    let d = &cfg.deployment;
    let name = sanitize_job_name(&cfg.job.name);
    let mut directives = Vec::new();
    match scheduler {
        SchedulerKind::Slurm => {
            directives.push(format!("--job-name={name}"));
            directives.push(format!("--nodes={}", d.nodes));
            directives.push(format!("--ntasks-per-node={}", d.tasks_per_node));
            directives.push(format!("--cpus-per-task={}", d.cores_per_task));
            directives.push(format!("--time={}", d.clocktime));
            if let Some(mb) = d.ram_mb {
                directives.push(format!("--mem={mb}M"));
            }
            if !cfg.job.mail.is_empty() {
                directives.push(format!("--mail-user={}", cfg.job.mail));
                directives.push("--mail-type=END,FAIL".to_owned());
            }
            directives.push(format!("--output={}", paths.stdout));
            directives.push(format!("--error={}", paths.stderr));
        }
        SchedulerKind::Pbs => {
            directives.push(format!("-N {name}"));
            directives.push(format!(
                "-l select={}:ncpus={}:mpiprocs={}",
                d.nodes, d.tasks_per_node, d.cores_per_task
            ));
            directives.push(format!("-l walltime={}", d.clocktime));
            if let Some(mb) = d.ram_mb {
                directives.push(format!("-l mem={mb}mb"));
            }
            if !cfg.job.mail.is_empty() {
                directives.push(format!("-M {}", cfg.job.mail));
                directives.push("-m ae".to_owned());
            }
            directives.push(format!("-o {}", paths.stdout));
            directives.push(format!("-e {}", paths.stderr));
        }
    }
    let prefix = BatchScript::directive_prefix(scheduler);
    let directive_lines: Vec<String> = directives
        .into_iter()
        .map(|d| format!("{prefix}{d}"))
        .collect();

    let mut prolog_lines = vec!["set -e".to_owned(), format!("cd {}", paths.workdir)];
    if cfg.data.as_ref().is_some_and(|d| d.has_entries()) {
        prolog_lines.push(format!("export EASEY_DATA={}", paths.data_folder));
        prolog_lines.push(format!("export EASEY_MOUNT={}", cfg.mount()));
    }

    let launcher = profile.launcher();
    let command_lines: Vec<String> = cfg
        .execution
        .steps
        .iter()
        .map(|step| match step {
            ExecutionStep::Serial { command } => command.clone(),
            ExecutionStep::Mpi { command, mpi_tasks } => {
                format!("{launcher} {mpi_tasks} {command}")
            }
        })
        .collect();

    let mut full_text = String::from("#!/bin/bash\n");
    for line in &directive_lines {
        let _ = writeln!(full_text, "{line}");
    }
    full_text.push('\n');
    for line in prolog_lines.iter().chain(&command_lines) {
        let _ = writeln!(full_text, "{line}");
    }

    Ok(BatchScript {
        scheduler,
        directive_lines,
        prolog_lines,
        command_lines,
        full_text,
    })
}

/// Resource request read back out of a rendered script.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptDirectives {
    pub name: Option<String>,
    pub nodes: Option<u64>,
    pub tasks_per_node: Option<u64>,
    pub cores_per_task: Option<u64>,
    pub time: Option<String>,
    pub mem_mb: Option<u64>,
    pub stdout: Option<String>,
    pub stderr: Option<String>,
}

/// Parses the directive block of a SLURM or PBS script. Unrecognized
/// directives are skipped.
pub fn read_directives(scheduler: SchedulerKind, text: &str) -> ScriptDirectives {
    let prefix = BatchScript::directive_prefix(scheduler);
    let mut out = ScriptDirectives::default();
    for line in text.lines() {
        let Some(body) = line.strip_prefix(prefix) else {
            continue;
        };
        let body = body.trim();
        match scheduler {
            SchedulerKind::Slurm => {
                let Some((key, value)) = body.split_once('=') else {
                    continue;
                };
                match key {
                    "--job-name" => out.name = Some(value.to_owned()),
                    "--nodes" => out.nodes = value.parse().ok(),
                    "--ntasks-per-node" => out.tasks_per_node = value.parse().ok(),
                    "--cpus-per-task" => out.cores_per_task = value.parse().ok(),
                    "--time" => out.time = Some(value.to_owned()),
                    "--mem" => out.mem_mb = value.strip_suffix('M').and_then(|v| v.parse().ok()),
                    "--output" => out.stdout = Some(value.to_owned()),
                    "--error" => out.stderr = Some(value.to_owned()),
                    _ => {}
                }
            }
            SchedulerKind::Pbs => {
                let Some((flag, arg)) = body.split_once(' ') else {
                    continue;
                };
                let arg = arg.trim();
                match flag {
                    "-N" => out.name = Some(arg.to_owned()),
                    "-o" => out.stdout = Some(arg.to_owned()),
                    "-e" => out.stderr = Some(arg.to_owned()),
                    "-l" => {
                        let Some((res, value)) = arg.split_once('=') else {
                            continue;
                        };
                        match res {
                            "select" => {
                                let mut parts = value.split(':');
                                out.nodes = parts.next().and_then(|n| n.parse().ok());
                                for part in parts {
                                    match part.split_once('=') {
                                        Some(("ncpus", v)) => out.tasks_per_node = v.parse().ok(),
                                        Some(("mpiprocs", v)) => {
                                            out.cores_per_task = v.parse().ok()
                                        }
                                        _ => {}
                                    }
                                }
                            }
                            "walltime" => out.time = Some(value.to_owned()),
                            "mem" => {
                                out.mem_mb = value.strip_suffix("mb").and_then(|v| v.parse().ok())
                            }
                            _ => {}
                        }
                    }
                    _ => {}
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Clocktime, DeploymentSpec, ExecutionSpec, JobMeta};
    use crate::targets::TargetRegistry;

    fn cfg(steps: Vec<ExecutionStep>) -> EaseyConfig {
        EaseyConfig {
            job: JobMeta {
                name: "my job/1".into(),
                id: None,
                mail: String::new(),
            },
            data: None,
            deployment: DeploymentSpec {
                nodes: 2,
                ram_mb: Some(2048),
                cores_per_task: 4,
                tasks_per_node: 12,
                clocktime: Clocktime("00:30:00".into()),
            },
            execution: ExecutionSpec { steps },
        }
    }

    fn paths() -> JobPaths {
        JobPaths::new("/scratch/easey/", &"0123456789abcdef".parse().unwrap())
    }

    #[test]
    fn table_one_node_counts() {
        assert_eq!(derive_nodes(2197, 48), 46);
        assert_eq!(derive_nodes(1000, 48), 21);
        assert_eq!(derive_nodes(48, 48), 1);
        assert_eq!(derive_nodes(49, 48), 2);
        assert_eq!(derive_nodes(1, 1), 1);
    }

    #[test]
    fn empty_execution() {
        let profile = TargetRegistry::builtin()
            .lookup("test:sim")
            .unwrap()
            .clone();
        assert_eq!(
            render_batch(&cfg(vec![]), &profile, &paths()),
            Err(BatchError::EmptyExecution)
        );
    }

    #[test]
    fn ram_and_mail_optional() {
        let profile = TargetRegistry::builtin()
            .lookup("test:sim")
            .unwrap()
            .clone();
        let steps = vec![ExecutionStep::Serial {
            command: "hostname".into(),
        }];
        let mut c = cfg(steps);
        let script = render_batch(&c, &profile, &paths()).unwrap();
        assert!(script
            .directive_lines
            .contains(&"#SBATCH --mem=2048M".to_owned()));
        assert!(!script.full_text.contains("--mail"));
        assert!(script
            .directive_lines
            .contains(&"#SBATCH --job-name=my_job_1".to_owned()));

        c.deployment.ram_mb = None;
        let script = render_batch(&c, &profile, &paths()).unwrap();
        assert!(!script.full_text.contains("--mem"));
    }

    #[test]
    fn directives_read_back() {
        let reg = TargetRegistry::builtin();
        let steps = vec![ExecutionStep::Mpi {
            command: "./a.out".into(),
            mpi_tasks: 24,
        }];
        for name in ["test:sim", "test:sim-pbs"] {
            let profile = reg.lookup(name).unwrap();
            let script = render_batch(&cfg(steps.clone()), profile, &paths()).unwrap();
            let prefix = BatchScript::directive_prefix(profile.scheduler);
            assert!(script.directive_lines.iter().all(|l| l.starts_with(prefix)));
            let d = read_directives(profile.scheduler, &script.full_text);
            assert_eq!(d.nodes, Some(2));
            assert_eq!(d.tasks_per_node, Some(12));
            assert_eq!(d.cores_per_task, Some(4));
            assert_eq!(d.time.as_deref(), Some("00:30:00"));
            assert_eq!(d.mem_mb, Some(2048));
            assert_eq!(
                d.stdout.as_deref(),
                Some("/scratch/easey/0123456789abcdef/stdout.log")
            );
        }
    }
}
