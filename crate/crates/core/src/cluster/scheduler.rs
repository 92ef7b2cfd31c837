//! Scheduler command lines and output parsing.
//!
//! Submission uses `sbatch --parsable <file>` (prints `<id>` or
//! `<id>;<cluster>`) and `qsub <file>` (prints `<seq>.<server>`).
//!
//! Status uses, for SLURM, `sacct -n -X -P -j <id> -o State` and falls back
//! to `squeue -h -j <id> -o %T` when accounting has no record yet. For PBS it
//! is `qstat -x -f <id>`, reading `job_state` and `Exit_status`.
//!
//! | SLURM state                                   | PBS job_state       | maps to  |
//! |-----------------------------------------------|---------------------|----------|
//! | PENDING, CONFIGURING, REQUEUED, SUSPENDED     | Q, H, W, T, S       | pending  |
//! | RUNNING, COMPLETING, STAGE_OUT                | R, E, B             | running  |
//! | COMPLETED                                     | F/X with exit 0     | finished |
//! | FAILED, CANCELLED, TIMEOUT, NODE_FAIL, OUT_OF_MEMORY, PREEMPTED, BOOT_FAIL, DEADLINE | F/X with exit ≠ 0 | failed |

use crate::cluster::shell_word;
use crate::engine::JobState;
use crate::targets::SchedulerKind;

pub fn submit_command(kind: SchedulerKind, script_path: &str) -> String {
    match kind {
        SchedulerKind::Slurm => format!("sbatch --parsable {}", shell_word(script_path)),
        SchedulerKind::Pbs => format!("qsub {}", shell_word(script_path)),
    }
}

/// Extracts the scheduler job id from submit output.
pub fn parse_submit_output(kind: SchedulerKind, stdout: &str) -> Option<String> {
    let line = stdout.lines().map(str::trim).find(|l| !l.is_empty())?;
    let id = match kind {
        SchedulerKind::Slurm => {
            let raw = line.strip_prefix("Submitted batch job ").unwrap_or(line);
            raw.split(';').next()?.trim()
        }
        SchedulerKind::Pbs => line,
    };
    let valid = !id.is_empty()
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b"._-[]".contains(&b));
    match kind {
        SchedulerKind::Slurm if !id.bytes().all(|b| b.is_ascii_digit()) => None,
        _ if valid => Some(id.to_owned()),
        _ => None,
    }
}

/// Status queries to try in order; the first one that yields a state wins.
pub fn status_commands(kind: SchedulerKind, job_id: &str) -> Vec<String> {
    let id = shell_word(job_id);
    match kind {
        SchedulerKind::Slurm => vec![
            format!("sacct -n -X -P -j {id} -o State"),
            format!("squeue -h -j {id} -o %T"),
        ],
        SchedulerKind::Pbs => vec![format!("qstat -x -f {id}")],
    }
}

pub fn map_slurm_state(state: &str) -> Option<JobState> {
    // sacct prints e.g. "CANCELLED by 1234"
    let word = state.split_whitespace().next()?.trim_end_matches('+');
    Some(match word {
        "PENDING" | "CONFIGURING" | "REQUEUED" | "REQUEUE_HOLD" | "REQUEUE_FED" | "SUSPENDED"
        | "RESV_DEL_HOLD" => JobState::Pending,
        "RUNNING" | "COMPLETING" | "STAGE_OUT" | "SIGNALING" | "RESIZING" => JobState::Running,
        "COMPLETED" => JobState::Finished,
        "FAILED" | "CANCELLED" | "TIMEOUT" | "NODE_FAIL" | "OUT_OF_MEMORY" | "PREEMPTED"
        | "BOOT_FAIL" | "DEADLINE" | "REVOKED" | "SPECIAL_EXIT" => JobState::Failed,
        _ => return None,
    })
}

fn pbs_field<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines().find_map(|l| {
        let (k, v) = l.trim().split_once(" = ")?;
        (k.trim() == key).then(|| v.trim())
    })
}

pub fn parse_status_output(kind: SchedulerKind, stdout: &str) -> Option<JobState> {
    match kind {
        SchedulerKind::Slurm => stdout
            .lines()
            .map(str::trim)
            .find(|l| !l.is_empty())
            .and_then(map_slurm_state),
        SchedulerKind::Pbs => {
            let state = pbs_field(stdout, "job_state")?;
            Some(match state {
                "Q" | "H" | "W" | "T" | "S" | "U" => JobState::Pending,
                "R" | "E" | "B" => JobState::Running,
                "F" | "X" => match pbs_field(stdout, "Exit_status").map(str::parse::<i64>) {
                    Some(Ok(0)) => JobState::Finished,
                    _ => JobState::Failed,
                },
                _ => return None,
            })
        }
    }
}
