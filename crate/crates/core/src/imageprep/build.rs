use std::collections::HashMap;
use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use flate2::{Compression, GzBuilder};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::TransformedDockerfile;
use crate::digest::sha256_file;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("BuildFailed (exit {exit_code:?}):\n{log}")]
    BuildFailed { exit_code: Option<i32>, log: String },
    #[error("image builder unavailable: {0}")]
    BuilderUnavailable(String),
    #[error("PackFailed: {0}")]
    PackFailed(String),
    #[error("output directory {} is not writable: {reason}", .path.display())]
    OutDirUnwritable { path: PathBuf, reason: String },
}

/// Opaque handle to a built image, e.g. `mock:<digest>` or a docker tag.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageRef(pub String);

impl fmt::Display for ImageRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone)]
pub struct BuiltImage {
    pub image: ImageRef,
    /// Name the archive is derived from, e.g. `lulesh.dash`.
    pub name: String,
    pub log: String,
}

/// A packed Charliecloud image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContainerArchive {
    pub path: PathBuf,
    pub image_name: String,
    /// SHA-256 of the file, lowercase hex.
    pub checksum: String,
    pub created_at: DateTime<Utc>,
}

impl ContainerArchive {
    pub fn file_name(&self) -> String {
        format!("{}.tar.gz", self.image_name)
    }

    /// Recomputes the checksum from disk.
    pub fn verify(&self) -> std::io::Result<bool> {
        Ok(sha256_file(&self.path)? == self.checksum)
    }

    /// Describes an existing archive file, hashing it.
    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_suffix(".tar.gz"))
            .ok_or_else(|| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidInput,
                    format!("{} is not a .tar.gz archive", path.display()),
                )
            })?;
        let created_at = std::fs::metadata(path)?
            .modified()
            .map(DateTime::<Utc>::from)
            .unwrap_or_else(|_| Utc::now());
        Ok(ContainerArchive {
            path: path.to_owned(),
            image_name: name.to_owned(),
            checksum: sha256_file(path)?,
            created_at,
        })
    }
}

pub trait ImageBuilder: Send + Sync {
    fn build(
        &self,
        df: &TransformedDockerfile,
        name: &str,
        context: &Path,
    ) -> Result<BuiltImage, ImageError>;

    /// Whether independent builds may run at the same time.
    fn supports_concurrent_builds(&self) -> bool;
}

pub trait ArchivePacker: Send + Sync {
    /// Writes `<image.name>.tar.gz` into `out_dir` and returns its path.
    fn pack(&self, image: &BuiltImage, out_dir: &Path) -> Result<PathBuf, ImageError>;
}

pub fn build_image(
    df: &TransformedDockerfile,
    builder: &dyn ImageBuilder,
    name: &str,
    context: &Path,
) -> Result<BuiltImage, ImageError> {
    builder.build(df, name, context)
}

fn ensure_writable(dir: &Path) -> Result<(), ImageError> {
    let unwritable = |reason: String| ImageError::OutDirUnwritable {
        path: dir.to_owned(),
        reason,
    };
    std::fs::create_dir_all(dir).map_err(|e| unwritable(e.to_string()))?;
    tempfile::Builder::new()
        .prefix(".easey-probe")
        .tempfile_in(dir)
        .map(drop)
        .map_err(|e| unwritable(e.to_string()))
}

pub fn pack_container(
    image: &BuiltImage,
    out_dir: &Path,
    packer: &dyn ArchivePacker,
) -> Result<ContainerArchive, ImageError> {
    ensure_writable(out_dir)?;
    let path = packer.pack(image, out_dir)?;
    if !path.exists() {
        return Err(ImageError::PackFailed(format!(
            "packer reported {} but no file was written",
            path.display()
        )));
    }
    let checksum = sha256_file(&path).map_err(|e| ImageError::PackFailed(e.to_string()))?;
    Ok(ContainerArchive {
        path,
        image_name: image.name.clone(),
        checksum,
        created_at: Utc::now(),
    })
}

/// Digest the mock builder assigns: SHA-256 over every line followed by `\n`.
pub fn mock_digest(lines: &[String]) -> String {
    let mut h = Sha256::new();
    for line in lines {
        h.update(line.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

type ImageTable = Arc<Mutex<HashMap<String, Vec<String>>>>;

/// Deterministic in-process builder. Images are remembered so that a
/// [`MockPacker`] created from it can pack them.
#[derive(Debug, Clone, Default)]
pub struct MockBuilder {
    images: ImageTable,
    fail_on: Option<String>,
}

impl MockBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fail any build whose instructions contain `needle`.
    pub fn failing_on(needle: impl Into<String>) -> Self {
        MockBuilder {
            fail_on: Some(needle.into()),
            ..Self::default()
        }
    }

    pub fn packer(&self) -> MockPacker {
        MockPacker {
            images: Arc::clone(&self.images),
        }
    }
}

impl ImageBuilder for MockBuilder {
    fn build(
        &self,
        df: &TransformedDockerfile,
        name: &str,
        _context: &Path,
    ) -> Result<BuiltImage, ImageError> {
        let mut log = String::new();
        let total = df.lines.len();
        for (i, line) in df.lines.iter().enumerate() {
            log.push_str(&format!("Step {}/{} : {}\n", i + 1, total, line));
            if self.fail_on.as_deref().is_some_and(|n| line.contains(n)) {
                log.push_str("The command returned a non-zero code: 1\n");
                return Err(ImageError::BuildFailed {
                    exit_code: Some(1),
                    log,
                });
            }
        }
        let digest = mock_digest(&df.lines);
        log.push_str(&format!("Successfully built mock:{digest}\n"));
        self.images
            .lock()
            .expect("image table poisoned")
            .insert(digest.clone(), df.lines.clone());
        Ok(BuiltImage {
            image: ImageRef(format!("mock:{digest}")),
            name: name.to_owned(),
            log,
        })
    }

    fn supports_concurrent_builds(&self) -> bool {
        true
    }
}

/// Packs mock images as a gzip tarball of a small synthetic root
/// filesystem. Byte-identical output for identical images.
#[derive(Debug, Clone)]
pub struct MockPacker {
    images: ImageTable,
}

fn mock_rootfs_dirs(lines: &[String]) -> Vec<String> {
    let mut dirs: Vec<String> = [
        "bin",
        "dev",
        "etc",
        "etc/easey",
        "proc",
        "sys",
        "tmp",
        "usr",
        "var",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    // Directories created by `RUN mkdir -p` become part of the tree.
    for line in lines {
        if let Some(rest) = line.strip_prefix("RUN mkdir -p ") {
            for d in rest.split_whitespace() {
                let d = d.trim_matches('\'').trim_matches('/');
                let mut acc = String::new();
                for part in d.split('/').filter(|p| !p.is_empty()) {
                    if !acc.is_empty() {
                        acc.push('/');
                    }
                    acc.push_str(part);
                    if !dirs.contains(&acc) {
                        dirs.push(acc.clone());
                    }
                }
            }
        }
    }
    dirs.sort();
    dirs
}

fn append_entry<W: std::io::Write>(
    tar: &mut tar::Builder<W>,
    path: &str,
    data: Option<&[u8]>,
) -> std::io::Result<()> {
    let mut header = tar::Header::new_gnu();
    header.set_mtime(0);
    header.set_uid(0);
    header.set_gid(0);
    match data {
        Some(bytes) => {
            header.set_entry_type(tar::EntryType::Regular);
            header.set_mode(0o644);
            header.set_size(bytes.len() as u64);
            header.set_cksum();
            tar.append_data(&mut header, path, bytes)
        }
        None => {
            header.set_entry_type(tar::EntryType::Directory);
            header.set_mode(0o755);
            header.set_size(0);
            header.set_cksum();
            tar.append_data(&mut header, format!("{path}/"), std::io::empty())
        }
    }
}

impl ArchivePacker for MockPacker {
    fn pack(&self, image: &BuiltImage, out_dir: &Path) -> Result<PathBuf, ImageError> {
        let digest = image.image.0.strip_prefix("mock:").ok_or_else(|| {
            ImageError::PackFailed(format!("{} is not a mock image", image.image))
        })?;
        let lines = self
            .images
            .lock()
            .expect("image table poisoned")
            .get(digest)
            .cloned()
            .ok_or_else(|| ImageError::PackFailed(format!("unknown image {}", image.image)))?;

        let path = out_dir.join(format!("{}.tar.gz", image.name));
        let write = || -> std::io::Result<()> {
            let file = std::fs::File::create(&path)?;
            let gz = GzBuilder::new()
                .mtime(0)
                .write(file, Compression::default());
            let mut tar = tar::Builder::new(gz);
            let root = &image.name;
            append_entry(&mut tar, root, None)?;
            for dir in mock_rootfs_dirs(&lines) {
                append_entry(&mut tar, &format!("{root}/{dir}"), None)?;
            }
            let dockerfile = lines.join("\n") + "\n";
            append_entry(
                &mut tar,
                &format!("{root}/etc/easey/Dockerfile"),
                Some(dockerfile.as_bytes()),
            )?;
            append_entry(
                &mut tar,
                &format!("{root}/etc/easey/image"),
                Some(format!("{}\n", image.image).as_bytes()),
            )?;
            tar.into_inner()?.finish()?.sync_all()
        };
        write().map_err(|e| ImageError::PackFailed(e.to_string()))?;
        Ok(path)
    }
}

fn probe(binary: &str, arg: &str) -> Result<(), ImageError> {
    match Command::new(binary)
        .arg(arg)
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .status()
    {
        Ok(s) if s.success() => Ok(()),
        Ok(s) => Err(ImageError::BuilderUnavailable(format!(
            "`{binary} {arg}` exited with {s}"
        ))),
        Err(e) => Err(ImageError::BuilderUnavailable(format!("{binary}: {e}"))),
    }
}

/// Builds with a local Docker daemon. Building usually needs root or
/// membership in the docker group.
#[derive(Debug, Clone, Default)]
pub struct DockerBuilder {
    pub binary: Option<String>,
}

impl DockerBuilder {
    fn bin(&self) -> &str {
        self.binary.as_deref().unwrap_or("docker")
    }
}

impl ImageBuilder for DockerBuilder {
    fn build(
        &self,
        df: &TransformedDockerfile,
        name: &str,
        context: &Path,
    ) -> Result<BuiltImage, ImageError> {
        probe(self.bin(), "version")?;
        let mut child = Command::new(self.bin())
            .args(["build", "-t", name, "-f", "-"])
            .arg(context)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| ImageError::BuilderUnavailable(e.to_string()))?;
        child
            .stdin
            .take()
            .expect("piped stdin")
            .write_all(df.text().as_bytes())
            .map_err(|e| ImageError::BuildFailed {
                exit_code: None,
                log: e.to_string(),
            })?;
        let out = child
            .wait_with_output()
            .map_err(|e| ImageError::BuilderUnavailable(e.to_string()))?;
        let log = String::from_utf8_lossy(&out.stdout).into_owned()
            + &String::from_utf8_lossy(&out.stderr);
        if !out.status.success() {
            return Err(ImageError::BuildFailed {
                exit_code: out.status.code(),
                log,
            });
        }
        Ok(BuiltImage {
            image: ImageRef(name.to_owned()),
            name: name.to_owned(),
            log,
        })
    }

    fn supports_concurrent_builds(&self) -> bool {
        true
    }
}

/// Packs a builder image with Charliecloud's `ch-builder2tar`.
#[derive(Debug, Clone, Default)]
pub struct ChBuilder2TarPacker {
    pub binary: Option<String>,
}

impl ArchivePacker for ChBuilder2TarPacker {
    fn pack(&self, image: &BuiltImage, out_dir: &Path) -> Result<PathBuf, ImageError> {
        let bin = self.binary.as_deref().unwrap_or("ch-builder2tar");
        let out = Command::new(bin)
            .arg(&image.image.0)
            .arg(out_dir)
            .output()
            .map_err(|e| ImageError::PackFailed(format!("{bin}: {e}")))?;
        if !out.status.success() {
            return Err(ImageError::PackFailed(
                String::from_utf8_lossy(&out.stderr).into_owned(),
            ));
        }
        // ch-builder2tar names the tarball after the tag with ':' → '.'
        let produced = out_dir.join(format!("{}.tar.gz", image.image.0.replace([':', '/'], ".")));
        let wanted = out_dir.join(format!("{}.tar.gz", image.name));
        if produced != wanted {
            std::fs::rename(&produced, &wanted)
                .map_err(|e| ImageError::PackFailed(format!("{}: {e}", produced.display())))?;
        }
        Ok(wanted)
    }
}
