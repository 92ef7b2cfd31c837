//! Per-cluster adaptation profiles.
//!
//! A profile is a JSON document, one per file, named `site:cluster`:
//!
//! ```json
//! {
//!   "name": "lrz:supermuc-ng",
//!   "scheduler": "SLURM",
//!   "mpi-snippet": ["RUN ...", "RUN ..."],
//!   "site-mounts": [{"host": "/lrz/sys", "container": "/lrz/sys"}],
//!   "extra-symlinks": [{"link": "/etc/x", "target": "/lrz/sys/etc/x"}],
//!   "submit-host": "ssh://login.example.org",
//!   "workdir-root": "/scratch/easey",
//!   "mpi-launcher": "srun -n",
//!   "extensions": {}
//! }
//! ```
//!
//! `mpi-launcher` and `extensions` are optional. `extensions` holds
//! site-specific settings that have no first-class field yet.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imageprep::MPI_MARKER;

const BUILTIN_PROFILES: &[&str] = &[
    include_str!("../profiles/builtin/test-sim.json"),
    include_str!("../profiles/builtin/test-sim-pbs.json"),
];

#[derive(Debug, Error)]
pub enum TargetError {
    #[error("unknown target {0:?}")]
    UnknownTarget(String),
    #[error("target {name:?} defined more than once ({})", .path.display())]
    DuplicateTarget { name: String, path: PathBuf },
    #[error("cannot parse profile {}: {message}", .path.display())]
    ProfileParse { path: PathBuf, message: String },
    #[error("cannot read profile directory {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SchedulerKind {
    #[serde(rename = "SLURM")]
    Slurm,
    #[serde(rename = "PBS")]
    Pbs,
}

impl SchedulerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SchedulerKind::Slurm => "SLURM",
            SchedulerKind::Pbs => "PBS",
        }
    }

    /// Launcher prefix that takes the task count as its next argument.
    pub fn default_launcher(self) -> &'static str {
        match self {
            SchedulerKind::Slurm => "srun -n",
            SchedulerKind::Pbs => "mpiexec -n",
        }
    }
}

impl FromStr for SchedulerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "SLURM" => Ok(SchedulerKind::Slurm),
            "PBS" => Ok(SchedulerKind::Pbs),
            _ => Err(format!("unsupported scheduler {s:?}")),
        }
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Dockerfile instructions spliced in place of the MPI marker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct DockerfileFragment(Vec<String>);

impl DockerfileFragment {
    pub fn lines(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<String>> for DockerfileFragment {
    type Error = String;

    fn try_from(lines: Vec<String>) -> Result<Self, String> {
        if lines.is_empty() {
            return Err("mpi-snippet must contain at least one instruction".into());
        }
        if lines.iter().any(|l| l.contains(MPI_MARKER)) {
            return Err(format!("mpi-snippet must not contain {MPI_MARKER}"));
        }
        if lines.iter().any(|l| l.contains('\n')) {
            return Err("mpi-snippet entries must be single lines".into());
        }
        Ok(DockerfileFragment(lines))
    }
}

impl From<DockerfileFragment> for Vec<String> {
    fn from(f: DockerfileFragment) -> Self {
        f.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteMount {
    pub host: String,
    pub container: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Symlink {
    pub link: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct TargetProfile {
    pub name: String,
    pub scheduler: SchedulerKind,
    pub mpi_snippet: DockerfileFragment,
    #[serde(default)]
    pub site_mounts: Vec<SiteMount>,
    #[serde(default)]
    pub extra_symlinks: Vec<Symlink>,
    /// `sim://` for the embedded simulator, `ssh://[user@]host[:port]` otherwise.
    pub submit_host: String,
    pub workdir_root: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mpi_launcher: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extensions: BTreeMap<String, serde_json::Value>,
}

impl TargetProfile {
    pub fn from_json(text: &str) -> Result<Self, String> {
        let profile: TargetProfile = serde_json::from_str(text).map_err(|e| e.to_string())?;
        match profile.name.split_once(':') {
            Some((site, cluster)) if !site.is_empty() && !cluster.is_empty() => Ok(profile),
            _ => Err(format!(
                "profile name {:?} must have the form site:cluster",
                profile.name
            )),
        }
    }

    pub fn launcher(&self) -> &str {
        self.mpi_launcher
            .as_deref()
            .unwrap_or_else(|| self.scheduler.default_launcher())
    }

    pub fn is_simulated(&self) -> bool {
        self.submit_host.starts_with("sim://")
    }
}

/// Immutable set of profiles keyed by name.
#[derive(Debug, Clone)]
pub struct TargetRegistry {
    profiles: BTreeMap<String, TargetProfile>,
}

impl TargetRegistry {
    /// Only the shipped simulator profiles.
    pub fn builtin() -> Self {
        let profiles = BUILTIN_PROFILES
            .iter()
            .map(|text| {
                let p = TargetProfile::from_json(text).expect("built-in profile parses");
                (p.name.clone(), p)
            })
            .collect();
        TargetRegistry { profiles }
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.profiles.keys().map(String::as_str)
    }

    pub fn lookup(&self, name: &str) -> Result<&TargetProfile, TargetError> {
        self.profiles
            .get(name)
            .ok_or_else(|| TargetError::UnknownTarget(name.to_owned()))
    }

    /// Adds a profile, refusing to shadow an existing name.
    pub fn insert(&mut self, profile: TargetProfile, origin: &Path) -> Result<(), TargetError> {
        if self.profiles.contains_key(&profile.name) {
            return Err(TargetError::DuplicateTarget {
                name: profile.name,
                path: origin.to_owned(),
            });
        }
        self.profiles.insert(profile.name.clone(), profile);
        Ok(())
    }
}

/// Built-ins plus every `*.json` file in `dir`.
pub fn load_registry(dir: &Path) -> Result<TargetRegistry, TargetError> {
    let io = |source| TargetError::Io {
        path: dir.to_owned(),
        source,
    };
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(io)?;
    files.retain(|p| p.is_file() && p.extension().is_some_and(|e| e == "json"));
    files.sort();

    let mut registry = TargetRegistry::builtin();
    for path in files {
        let text = std::fs::read_to_string(&path).map_err(|source| TargetError::Io {
            path: path.clone(),
            source,
        })?;
        let profile =
            TargetProfile::from_json(&text).map_err(|message| TargetError::ProfileParse {
                path: path.clone(),
                message,
            })?;
        registry.insert(profile, &path)?;
    }
    Ok(registry)
}

/// Convenience for [`TargetRegistry::lookup`] that clones the profile.
pub fn lookup_target(registry: &TargetRegistry, name: &str) -> Result<TargetProfile, TargetError> {
    registry.lookup(name).cloned()
}

#[cfg(test)]
mod tests {
    use super::*;

    const SHIPPED: &str = include_str!("../profiles/lrz-supermuc-ng.json");

    fn write(dir: &Path, file: &str, text: &str) {
        std::fs::write(dir.join(file), text).unwrap();
    }

    #[test]
    fn empty_dir_has_builtins_only() {
        let dir = tempfile::tempdir().unwrap();
        let reg = load_registry(dir.path()).unwrap();
        assert_eq!(reg.len(), TargetRegistry::builtin().len());
        assert_eq!(
            reg.lookup("test:sim").unwrap().scheduler,
            SchedulerKind::Slurm
        );
    }

    #[test]
    fn two_profiles() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.json", SHIPPED);
        write(
            dir.path(),
            "b.json",
            &SHIPPED
                .replace("lrz:supermuc-ng", "lrz:linux-cluster")
                .replace("SLURM", "PBS"),
        );
        write(dir.path(), "notes.txt", "ignored");
        let reg = load_registry(dir.path()).unwrap();
        assert_eq!(reg.len(), TargetRegistry::builtin().len() + 2);
        assert_eq!(
            lookup_target(&reg, "lrz:supermuc-ng").unwrap().scheduler,
            SchedulerKind::Slurm
        );
        assert_eq!(
            reg.lookup("lrz:linux-cluster").unwrap().launcher(),
            "mpiexec -n"
        );
    }

    #[test]
    fn duplicate_of_builtin() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            "sim.json",
            include_str!("../profiles/builtin/test-sim.json"),
        );
        assert!(matches!(
            load_registry(dir.path()),
            Err(TargetError::DuplicateTarget { name, .. }) if name == "test:sim"
        ));
    }

    #[test]
    fn empty_name_unknown() {
        assert!(matches!(
            TargetRegistry::builtin().lookup(""),
            Err(TargetError::UnknownTarget(_))
        ));
    }

    #[test]
    fn rejects_bad_profiles() {
        let cases = [
            SHIPPED.replace("\"SLURM\"", "\"LSF\""),
            SHIPPED.replace("\"RUN ldconfig\"", "\"###includelocalmpi###\""),
            SHIPPED.replace("lrz:supermuc-ng", "supermuc"),
            SHIPPED.replace("\"workdir-root\"", "\"colour\": 1, \"workdir-root\""),
        ];
        for text in cases {
            let dir = tempfile::tempdir().unwrap();
            write(dir.path(), "x.json", &text);
            assert!(
                matches!(
                    load_registry(dir.path()),
                    Err(TargetError::ProfileParse { .. })
                ),
                "{text}"
            );
        }
        let empty_snippet: Result<DockerfileFragment, _> = Vec::<String>::new().try_into();
        assert!(empty_snippet.is_err());
    }
}
