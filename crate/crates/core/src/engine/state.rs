use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Lifecycle of a job. Legal moves follow the declaration order one step at
/// a time; any non-terminal state may also drop to `Failed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Created,
    Staging,
    Submitted,
    Pending,
    Running,
    Finished,
    Failed,
}

impl JobState {
    pub const ALL: [JobState; 7] = [
        JobState::Created,
        JobState::Staging,
        JobState::Submitted,
        JobState::Pending,
        JobState::Running,
        JobState::Finished,
        JobState::Failed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            JobState::Created => "created",
            JobState::Staging => "staging",
            JobState::Submitted => "submitted",
            JobState::Pending => "pending",
            JobState::Running => "running",
            JobState::Finished => "finished",
            JobState::Failed => "failed",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Finished | JobState::Failed)
    }

    /// Next state on the success path.
    pub fn successor(self) -> Option<JobState> {
        match self {
            JobState::Created => Some(JobState::Staging),
            JobState::Staging => Some(JobState::Submitted),
            JobState::Submitted => Some(JobState::Pending),
            JobState::Pending => Some(JobState::Running),
            JobState::Running => Some(JobState::Finished),
            JobState::Finished | JobState::Failed => None,
        }
    }

    pub fn can_transition_to(self, to: JobState) -> bool {
        self.successor() == Some(to) || (to == JobState::Failed && !self.is_terminal())
    }
}

impl fmt::Display for JobState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for JobState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        JobState::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown job state {s:?}"))
    }
}
