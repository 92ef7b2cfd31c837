use serde::Serialize;

use super::{EaseyConfig, ExecutionStep, ViolationCode};
use crate::batchgen::derive_nodes;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub severity: Severity,
    pub path: String,
    pub message: String,
}

/// Result of [`validate`]. Warnings never block submission.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub warnings: Vec<Violation>,
}

impl ValidationReport {
    /// True when there are no violations; such a config is submittable.
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn codes(&self) -> Vec<ViolationCode> {
        self.violations.iter().map(|v| v.code).collect()
    }

    fn error(&mut self, code: ViolationCode, path: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            code,
            severity: Severity::Error,
            path: path.into(),
            message: message.into(),
        });
    }

    fn warn(&mut self, code: ViolationCode, path: impl Into<String>, message: impl Into<String>) {
        self.warnings.push(Violation {
            code,
            severity: Severity::Warning,
            path: path.into(),
            message: message.into(),
        });
    }
}

fn mail_is_plausible(mail: &str) -> bool {
    let Some((local, domain)) = mail.split_once('@') else {
        return false;
    };
    !local.is_empty()
        && !domain.is_empty()
        && !domain.starts_with('.')
        && !domain.ends_with('.')
        && domain.contains('.')
        && !domain.contains('@')
        && !mail.chars().any(|c| c.is_whitespace() || c.is_control())
}

pub fn validate(cfg: &EaseyConfig) -> ValidationReport {
    use ViolationCode::*;

    let mut report = ValidationReport::default();

    if cfg.job.name.trim().is_empty() {
        report.error(NameEmpty, "$.job.name", "job name must not be empty");
    }
    if !cfg.job.mail.is_empty() && !mail_is_plausible(&cfg.job.mail) {
        report.error(
            MailMalformed,
            "$.job.mail",
            format!("{:?} is not a mail address", cfg.job.mail),
        );
    }

    if let Some(data) = &cfg.data {
        if !data.mount.starts_with('/') {
            report.error(
                MountNotAbsolute,
                "$.data.mount.container-path",
                format!("mount path {:?} must be absolute", data.mount),
            );
        }
        let sides = [("input", &data.input), ("output", &data.output)];
        for (side, endpoints) in sides {
            for (i, ep) in endpoints.iter().enumerate() {
                let path = format!("$.data.{side}[{i}]");
                if ep.location.trim().is_empty() {
                    report.error(LocationEmpty, &path, "transfer location must not be empty");
                }
                if !ep.protocol.is_supported() {
                    report.error(
                        ProtocolUnsupportedGridftp,
                        format!("{path}.protocol"),
                        "gridftp transfers are not supported",
                    );
                }
            }
        }
    }

    let d = &cfg.deployment;
    let positive = [
        (d.nodes, NodesNonpositive, "nodes"),
        (d.cores_per_task, CoresPerTaskNonpositive, "cores-per-task"),
        (d.tasks_per_node, TasksPerNodeNonpositive, "tasks-per-node"),
    ];
    for (value, code, key) in positive {
        if value < 1 {
            report.error(
                code,
                format!("$.deployment.{key}"),
                format!("{key} must be positive, found {value}"),
            );
        }
    }
    if !d.clocktime.is_valid() {
        report.error(
            ClocktimeMalformed,
            "$.deployment.clocktime",
            format!(
                "clocktime must be HH:MM:SS, found {:?}",
                d.clocktime.as_str()
            ),
        );
    }

    if cfg.execution.steps.is_empty() {
        report.error(
            ExecutionEmpty,
            "$.execution",
            "at least one step is required",
        );
    }
    let mut widest_mpi = None;
    for (i, step) in cfg.execution.steps.iter().enumerate() {
        let path = format!("$.execution[{i}]");
        if step.command().trim().is_empty() {
            report.error(CommandEmpty, &path, "command must not be empty");
        }
        if let ExecutionStep::Mpi { mpi_tasks, .. } = step {
            if *mpi_tasks < 1 {
                report.error(
                    MpiTasksNonpositive,
                    format!("{path}.mpi.mpi-tasks"),
                    format!("mpi-tasks must be positive, found {mpi_tasks}"),
                );
            } else {
                widest_mpi = widest_mpi.max(Some(*mpi_tasks));
            }
        }
    }

    if let (Some(tasks), true) = (widest_mpi, d.tasks_per_node >= 1 && d.nodes >= 1) {
        let needed = derive_nodes(tasks as u64, d.tasks_per_node as u64);
        if needed != d.nodes as u64 {
            report.warn(
                NodesMismatch,
                "$.deployment.nodes",
                format!(
                    "{tasks} mpi tasks at {} tasks per node need {needed} nodes, config asks for {}",
                    d.tasks_per_node, d.nodes
                ),
            );
        }
    }

    report
}
