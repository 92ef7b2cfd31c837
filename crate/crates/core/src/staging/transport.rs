use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Duration;

use suppaftp::types::FileType;
use suppaftp::{FtpError, FtpStream, Status};

use super::creds::Credential;
use crate::config::TransferEndpoint;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    /// Credentials rejected; never retried.
    Auth(String),
    /// Worth retrying: connection trouble, server-side errors.
    Transient(String),
    /// Retrying cannot help: missing file, client errors.
    Permanent(String),
}

/// Moves one file between an endpoint and a local path. Both directions
/// return the number of bytes moved.
pub trait Transport: Send + Sync {
    fn fetch(
        &self,
        endpoint: &TransferEndpoint,
        cred: &Credential,
        dest: &Path,
    ) -> Result<u64, TransportError>;

    fn push(
        &self,
        src: &Path,
        endpoint: &TransferEndpoint,
        cred: &Credential,
    ) -> Result<u64, TransportError>;
}

fn local_io(path: &Path, e: io::Error) -> TransportError {
    TransportError::Permanent(format!("{}: {e}", path.display()))
}

/// HTTPS GET and PUT. Plain `http://` URLs are accepted as well, which is
/// what local test servers speak.
pub struct HttpsTransport {
    agent: ureq::Agent,
}

impl Default for HttpsTransport {
    fn default() -> Self {
        Self::new()
    }
}

impl HttpsTransport {
    pub fn new() -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(300)))
            .build()
            .into();
        HttpsTransport { agent }
    }

    fn check_url(location: &str) -> Result<(), TransportError> {
        if location.starts_with("https://") || location.starts_with("http://") {
            Ok(())
        } else {
            Err(TransportError::Permanent(format!(
                "{location:?} is not an http(s) URL"
            )))
        }
    }

    fn map_err(url: &str, e: ureq::Error) -> TransportError {
        match e {
            ureq::Error::StatusCode(code @ (401 | 403)) => {
                TransportError::Auth(format!("{url}: HTTP status {code}"))
            }
            ureq::Error::StatusCode(code @ (408 | 429 | 500..)) => {
                TransportError::Transient(format!("{url}: HTTP status {code}"))
            }
            ureq::Error::StatusCode(code) => {
                TransportError::Permanent(format!("{url}: HTTP status {code}"))
            }
            ureq::Error::Io(_)
            | ureq::Error::Timeout(_)
            | ureq::Error::HostNotFound
            | ureq::Error::ConnectionFailed => TransportError::Transient(format!("{url}: {e}")),
            other => TransportError::Permanent(format!("{url}: {other}")),
        }
    }
}

impl Transport for HttpsTransport {
    fn fetch(
        &self,
        endpoint: &TransferEndpoint,
        cred: &Credential,
        dest: &Path,
    ) -> Result<u64, TransportError> {
        let url = endpoint.location.as_str();
        Self::check_url(url)?;
        let mut req = self.agent.get(url);
        if let Some(token) = &cred.secret {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let resp = req.call().map_err(|e| Self::map_err(url, e))?;
        let mut reader = resp.into_body().into_reader();
        let mut file = fs::File::create(dest).map_err(|e| local_io(dest, e))?;
        io::copy(&mut reader, &mut file)
            .map_err(|e| TransportError::Transient(format!("{url}: body read failed: {e}")))
    }

    fn push(
        &self,
        src: &Path,
        endpoint: &TransferEndpoint,
        cred: &Credential,
    ) -> Result<u64, TransportError> {
        let url = endpoint.location.as_str();
        Self::check_url(url)?;
        let body = fs::read(src).map_err(|e| local_io(src, e))?;
        let mut req = self.agent.put(url);
        if let Some(token) = &cred.secret {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        req.send(&body[..]).map_err(|e| Self::map_err(url, e))?;
        Ok(body.len() as u64)
    }
}

/// FTP RETR and STOR in binary mode. Anonymous login when the endpoint has
/// no credential.
pub struct FtpTransport;

struct FtpUrl {
    addr: String,
    path: String,
}

fn parse_ftp_url(location: &str) -> Result<FtpUrl, TransportError> {
    let rest = location
        .strip_prefix("ftp://")
        .ok_or_else(|| TransportError::Permanent(format!("{location:?} is not an ftp URL")))?;
    let (hostport, path) = rest.split_once('/').unwrap_or((rest, ""));
    if hostport.is_empty() || path.is_empty() {
        return Err(TransportError::Permanent(format!(
            "{location:?} needs a host and a file path"
        )));
    }
    let addr = if hostport.contains(':') {
        hostport.to_owned()
    } else {
        format!("{hostport}:21")
    };
    Ok(FtpUrl {
        addr,
        path: format!("/{path}"),
    })
}

fn map_ftp(location: &str, e: FtpError) -> TransportError {
    match &e {
        FtpError::UnexpectedResponse(r) if r.status == Status::NotLoggedIn => {
            TransportError::Auth(format!("{location}: {e}"))
        }
        FtpError::UnexpectedResponse(r) if (400..500).contains(&r.status.code()) => {
            TransportError::Transient(format!("{location}: {e}"))
        }
        FtpError::ConnectionError(_) => TransportError::Transient(format!("{location}: {e}")),
        _ => TransportError::Permanent(format!("{location}: {e}")),
    }
}

impl FtpTransport {
    fn session(
        url: &FtpUrl,
        location: &str,
        cred: &Credential,
    ) -> Result<FtpStream, TransportError> {
        let mut ftp = FtpStream::connect(&url.addr).map_err(|e| map_ftp(location, e))?;
        let (user, pass) = match &cred.secret {
            Some(p) => (cred.user.as_str(), p.as_str()),
            None => ("anonymous", "anonymous@"),
        };
        ftp.login(user, pass).map_err(|e| map_ftp(location, e))?;
        ftp.transfer_type(FileType::Binary)
            .map_err(|e| map_ftp(location, e))?;
        Ok(ftp)
    }
}

impl Transport for FtpTransport {
    fn fetch(
        &self,
        endpoint: &TransferEndpoint,
        cred: &Credential,
        dest: &Path,
    ) -> Result<u64, TransportError> {
        let loc = endpoint.location.as_str();
        let url = parse_ftp_url(loc)?;
        let mut ftp = Self::session(&url, loc, cred)?;
        let buf = ftp.retr_as_buffer(&url.path).map_err(|e| map_ftp(loc, e))?;
        let _ = ftp.quit();
        let bytes = buf.into_inner();
        fs::write(dest, &bytes).map_err(|e| local_io(dest, e))?;
        Ok(bytes.len() as u64)
    }

    fn push(
        &self,
        src: &Path,
        endpoint: &TransferEndpoint,
        cred: &Credential,
    ) -> Result<u64, TransportError> {
        let loc = endpoint.location.as_str();
        let url = parse_ftp_url(loc)?;
        let mut file = fs::File::open(src).map_err(|e| local_io(src, e))?;
        let mut ftp = Self::session(&url, loc, cred)?;
        let n = ftp
            .put_file(&url.path, &mut file)
            .map_err(|e| map_ftp(loc, e))?;
        let _ = ftp.quit();
        Ok(n)
    }
}

/// scp with key files. Locations are `host:path`, `user@host:path` or
/// `scp://host[:port]/path`.
///
/// Hosts registered with [`ScpTransport::with_loopback`] are served from a
/// local directory instead of spawning `scp`; the simulator's storage is
/// exposed this way.
#[derive(Default)]
pub struct ScpTransport {
    loopback: BTreeMap<String, PathBuf>,
}

struct ScpTarget {
    host: String,
    port: Option<u16>,
    path: String,
}

fn parse_scp(location: &str) -> Result<ScpTarget, TransportError> {
    let bad = || TransportError::Permanent(format!("{location:?} is not an scp location"));
    if let Some(rest) = location.strip_prefix("scp://") {
        let (hostport, path) = rest.split_once('/').ok_or_else(bad)?;
        let (host, port) = match hostport.rsplit_once(':') {
            Some((h, p)) => (h, Some(p.parse().map_err(|_| bad())?)),
            None => (hostport, None),
        };
        return Ok(ScpTarget {
            host: host.rsplit('@').next().unwrap_or(host).to_owned(),
            port,
            path: format!("/{path}"),
        });
    }
    let (host, path) = location.split_once(':').ok_or_else(bad)?;
    if host.is_empty() || host.contains('/') || path.is_empty() {
        return Err(bad());
    }
    Ok(ScpTarget {
        host: host.rsplit('@').next().unwrap_or(host).to_owned(),
        port: None,
        path: path.to_owned(),
    })
}

impl ScpTransport {
    pub fn with_loopback(mut self, host: impl Into<String>, root: impl Into<PathBuf>) -> Self {
        self.loopback.insert(host.into(), root.into());
        self
    }

    fn loopback_path(&self, target: &ScpTarget) -> Option<Result<PathBuf, TransportError>> {
        let root = self.loopback.get(&target.host)?;
        let rel = Path::new(target.path.trim_start_matches('/'));
        if rel
            .components()
            .any(|c| matches!(c, std::path::Component::ParentDir))
        {
            return Some(Err(TransportError::Permanent(format!(
                "{}: path leaves the loopback root",
                target.path
            ))));
        }
        Some(Ok(root.join(rel)))
    }

    fn run_scp(
        &self,
        target: &ScpTarget,
        cred: &Credential,
        from: &str,
        to: &str,
    ) -> Result<(), TransportError> {
        let mut cmd = Command::new("scp");
        cmd.args(["-B", "-q", "-o", "BatchMode=yes"]);
        if let Some(key) = &cred.key_path {
            cmd.arg("-i").arg(key);
        }
        if let Some(port) = target.port {
            cmd.arg("-P").arg(port.to_string());
        }
        let out = cmd
            .arg(from)
            .arg(to)
            .output()
            .map_err(|e| TransportError::Permanent(format!("cannot run scp: {e}")))?;
        if out.status.success() {
            return Ok(());
        }
        let stderr = String::from_utf8_lossy(&out.stderr).trim().to_owned();
        if stderr.contains("Permission denied (publickey") {
            Err(TransportError::Auth(stderr))
        } else if stderr.contains("No such file") {
            Err(TransportError::Permanent(stderr))
        } else {
            Err(TransportError::Transient(stderr))
        }
    }

    fn remote_spec(target: &ScpTarget, cred: &Credential) -> String {
        if cred.user.is_empty() {
            format!("{}:{}", target.host, target.path)
        } else {
            format!("{}@{}:{}", cred.user, target.host, target.path)
        }
    }
}

impl Transport for ScpTransport {
    fn fetch(
        &self,
        endpoint: &TransferEndpoint,
        cred: &Credential,
        dest: &Path,
    ) -> Result<u64, TransportError> {
        let target = parse_scp(&endpoint.location)?;
        if let Some(src) = self.loopback_path(&target) {
            let src = src?;
            return fs::copy(&src, dest)
                .map_err(|e| TransportError::Permanent(format!("{}: {e}", endpoint.location)));
        }
        self.run_scp(
            &target,
            cred,
            &Self::remote_spec(&target, cred),
            &dest.display().to_string(),
        )?;
        fs::metadata(dest)
            .map(|m| m.len())
            .map_err(|e| local_io(dest, e))
    }

    fn push(
        &self,
        src: &Path,
        endpoint: &TransferEndpoint,
        cred: &Credential,
    ) -> Result<u64, TransportError> {
        let target = parse_scp(&endpoint.location)?;
        let len = fs::metadata(src).map_err(|e| local_io(src, e))?.len();
        if let Some(dest) = self.loopback_path(&target) {
            let dest = dest?;
            if let Some(parent) = dest.parent() {
                fs::create_dir_all(parent).map_err(|e| local_io(parent, e))?;
            }
            return fs::copy(src, &dest).map_err(|e| local_io(&dest, e));
        }
        self.run_scp(
            &target,
            cred,
            &src.display().to_string(),
            &Self::remote_spec(&target, cred),
        )?;
        Ok(len)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ftp_urls() {
        let u = parse_ftp_url("ftp://h/pub/a.dat").unwrap();
        assert_eq!((u.addr.as_str(), u.path.as_str()), ("h:21", "/pub/a.dat"));
        let u = parse_ftp_url("ftp://127.0.0.1:2121/a").unwrap();
        assert_eq!(u.addr, "127.0.0.1:2121");
        assert!(parse_ftp_url("ftp://h").is_err());
        assert!(parse_ftp_url("https://h/a").is_err());
    }

    #[test]
    fn scp_locations() {
        let t = parse_scp("alice@login:/home/a/in.dat").unwrap();
        assert_eq!(
            (t.host.as_str(), t.path.as_str(), t.port),
            ("login", "/home/a/in.dat", None)
        );
        let t = parse_scp("scp://sim:2200/x/y").unwrap();
        assert_eq!(
            (t.host.as_str(), t.path.as_str(), t.port),
            ("sim", "/x/y", Some(2200))
        );
        assert!(parse_scp("/plain/path").is_err());
    }

    #[test]
    fn loopback_round_trip() {
        let root = tempfile::tempdir().unwrap();
        let local = tempfile::tempdir().unwrap();
        fs::write(root.path().join("in.dat"), b"12345").unwrap();
        let t = ScpTransport::default().with_loopback("sim", root.path());
        let ep = |loc: &str| TransferEndpoint {
            location: loc.into(),
            protocol: crate::config::Protocol::Scp,
            user: "u".into(),
            auth: None,
        };
        let cred = Credential::anonymous("u");
        let dest = local.path().join("in.dat");
        assert_eq!(t.fetch(&ep("sim:/in.dat"), &cred, &dest), Ok(5));
        assert_eq!(t.push(&dest, &ep("sim:/out/copy.dat"), &cred), Ok(5));
        assert_eq!(
            fs::read(root.path().join("out/copy.dat")).unwrap(),
            b"12345"
        );
        assert!(matches!(
            t.fetch(&ep("sim:/../etc/passwd"), &cred, &dest),
            Err(TransportError::Permanent(_))
        ));
    }
}
