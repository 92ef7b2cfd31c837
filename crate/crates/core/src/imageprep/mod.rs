//! Dockerfile adaptation for a target cluster and the two-stage build
//! (image, then container archive).

#[cfg(feature = "runtime")]
mod build;

#[cfg(feature = "runtime")]
pub use build::{
    build_image, pack_container, ArchivePacker, BuiltImage, ChBuilder2TarPacker, ContainerArchive,
    DockerBuilder, ImageBuilder, ImageError, ImageRef, MockBuilder, MockPacker,
};

use serde::Serialize;
use thiserror::Error;

use crate::targets::TargetProfile;

/// Line the user places where the cluster's MPI build belongs.
pub const MPI_MARKER: &str = "###includelocalmpi###";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransformError {
    #[error("Dockerfile is empty")]
    EmptyDockerfile,
    #[error("MultipleMarkers: {MPI_MARKER} appears on lines {lines:?}; only one MPI insertion point is allowed")]
    MultipleMarkers { lines: Vec<usize> },
    #[error("{MPI_MARKER} on line {line} must stand alone on its own instruction line")]
    MarkerNotAlone { line: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TransformedDockerfile {
    pub lines: Vec<String>,
    pub mount_path: String,
    pub target: String,
}

impl TransformedDockerfile {
    pub fn text(&self) -> String {
        let mut text = self.lines.join("\n");
        text.push('\n');
        text
    }
}

fn is_shell_safe(s: &str) -> bool {
    !s.is_empty()
        && s.bytes()
            .all(|b| b.is_ascii_alphanumeric() || b"/._-+:=@%,".contains(&b))
}

fn sh_quote(s: &str) -> String {
    if is_shell_safe(s) {
        s.to_owned()
    } else {
        format!("'{}'", s.replace('\'', r"'\''"))
    }
}

/// Instructions appended after the user's own: the mount directory (plus the
/// profile's site mount points) and the profile's symlinks.
pub fn adaptation_lines(profile: &TargetProfile, mount: &str) -> Vec<String> {
    let mut dirs = vec![sh_quote(mount)];
    for m in &profile.site_mounts {
        let d = sh_quote(&m.container);
        if !dirs.contains(&d) {
            dirs.push(d);
        }
    }
    let mut lines = vec![format!("RUN mkdir -p {}", dirs.join(" "))];
    for link in &profile.extra_symlinks {
        lines.push(format!(
            "RUN ln -sfn {} {}",
            sh_quote(&link.target),
            sh_quote(&link.link)
        ));
    }
    lines
}

fn physical_lines(src: &str) -> Vec<&str> {
    let mut lines: Vec<&str> = src.split('\n').collect();
    if src.ends_with('\n') {
        lines.pop();
    }
    lines
}

fn continues(line: &str) -> bool {
    line.trim_end().ends_with('\\')
}

/// Replaces the MPI marker with the profile's snippet and appends the mount
/// directory and symlink instructions. Every other line is copied verbatim.
/// Applying the transform to its own output changes nothing.
pub fn transform_dockerfile(
    src: &str,
    profile: &TargetProfile,
    mount: &str,
) -> Result<TransformedDockerfile, TransformError> {
    if src.trim().is_empty() {
        return Err(TransformError::EmptyDockerfile);
    }
    let input = physical_lines(src);

    // Locate marker lines on logical-line boundaries.
    let mut markers = Vec::new();
    let mut in_continuation = false;
    for (i, line) in input.iter().enumerate() {
        let starts_logical = !in_continuation;
        in_continuation = continues(line);
        if !line.contains(MPI_MARKER) {
            continue;
        }
        if starts_logical && !in_continuation && line.trim() == MPI_MARKER {
            markers.push(i);
        } else {
            return Err(TransformError::MarkerNotAlone { line: i + 1 });
        }
    }
    if markers.len() > 1 {
        return Err(TransformError::MultipleMarkers {
            lines: markers.iter().map(|i| i + 1).collect(),
        });
    }

    let snippet = profile.mpi_snippet.lines();
    let mut lines = Vec::with_capacity(input.len() + snippet.len() + 4);
    for (i, line) in input.iter().enumerate() {
        if markers.contains(&i) {
            lines.extend(snippet.iter().cloned());
        } else {
            lines.push((*line).to_owned());
        }
    }

    let suffix = adaptation_lines(profile, mount);
    if !lines.ends_with(&suffix) {
        lines.extend(suffix);
    }

    Ok(TransformedDockerfile {
        lines,
        mount_path: mount.to_owned(),
        target: profile.name.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::{SiteMount, Symlink, TargetRegistry};

    fn profile() -> TargetProfile {
        let mut p = TargetRegistry::builtin()
            .lookup("test:sim")
            .unwrap()
            .clone();
        p.extra_symlinks.push(Symlink {
            link: "/opt/site".into(),
            target: "/lrz/sys/site".into(),
        });
        p.site_mounts.push(SiteMount {
            host: "/lrz/sys".into(),
            container: "/lrz/sys".into(),
        });
        p
    }

    const SRC: &str = "FROM ubuntu:20.04\nRUN apt-get update \\\n    && apt-get install -y g++\n###includelocalmpi###\nRUN make lulesh\nCMD [\"/built/lulesh\"]\n";

    #[test]
    fn marker_replaced_in_place() {
        let p = profile();
        let out = transform_dockerfile(SRC, &p, "/data").unwrap();
        let snippet = p.mpi_snippet.lines();
        assert_eq!(&out.lines[..3], &physical_lines(SRC)[..3]);
        assert_eq!(&out.lines[3..3 + snippet.len()], snippet);
        assert_eq!(out.lines[3 + snippet.len()], "RUN make lulesh");
        assert_eq!(
            &out.lines[out.lines.len() - 2..],
            [
                "RUN mkdir -p /data /lrz/sys",
                "RUN ln -sfn /lrz/sys/site /opt/site"
            ]
        );
        assert!(!out.text().contains(MPI_MARKER));
    }

    #[test]
    fn no_marker_is_passthrough_plus_suffix() {
        let p = profile();
        let src = "FROM alpine\nRUN true\n";
        let out = transform_dockerfile(src, &p, "/in put").unwrap();
        assert_eq!(
            out.lines,
            [
                "FROM alpine",
                "RUN true",
                "RUN mkdir -p '/in put' /lrz/sys",
                "RUN ln -sfn /lrz/sys/site /opt/site"
            ]
        );
    }

    #[test]
    fn idempotent() {
        let p = profile();
        let once = transform_dockerfile(SRC, &p, "/data").unwrap();
        let twice = transform_dockerfile(&once.text(), &p, "/data").unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn two_markers() {
        let src = format!("FROM a\n{MPI_MARKER}\nRUN x\n  {MPI_MARKER}  \n");
        assert_eq!(
            transform_dockerfile(&src, &profile(), "/data"),
            Err(TransformError::MultipleMarkers { lines: vec![2, 4] })
        );
    }

    #[test]
    fn marker_inside_continuation() {
        let src = format!("FROM a\nRUN x \\\n{MPI_MARKER}\n");
        assert_eq!(
            transform_dockerfile(&src, &profile(), "/data"),
            Err(TransformError::MarkerNotAlone { line: 3 })
        );
        let src = format!("FROM a\n# {MPI_MARKER}\n");
        assert!(matches!(
            transform_dockerfile(&src, &profile(), "/data"),
            Err(TransformError::MarkerNotAlone { line: 2 })
        ));
    }

    #[test]
    fn empty_source() {
        assert_eq!(
            transform_dockerfile(" \n", &profile(), "/data"),
            Err(TransformError::EmptyDockerfile)
        );
    }
}
