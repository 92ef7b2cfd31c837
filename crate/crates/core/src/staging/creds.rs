use std::path::{Path, PathBuf};

use super::StagingError;
use crate::config::{Protocol, TransferEndpoint};

/// What a transport needs to authenticate one transfer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Credential {
    pub user: String,
    /// scp: private key file.
    pub key_path: Option<PathBuf>,
    /// https: bearer token; ftp: password. Read from the referenced file.
    pub secret: Option<String>,
}

impl Credential {
    pub fn anonymous(user: impl Into<String>) -> Self {
        Credential {
            user: user.into(),
            key_path: None,
            secret: None,
        }
    }
}

/// Resolves the `auth` references of transfer endpoints to key files.
///
/// Relative references are looked up in the base directory (usually the
/// directory of the job config). Read-only once built, so it can be shared
/// between concurrent staging pipelines.
#[derive(Debug, Clone, Default)]
pub struct CredentialStore {
    base_dir: PathBuf,
    default_key: Option<PathBuf>,
}

impl CredentialStore {
    pub fn new(base_dir: impl Into<PathBuf>) -> Self {
        CredentialStore {
            base_dir: base_dir.into(),
            default_key: None,
        }
    }

    /// Key used for scp endpoints that carry no `auth` reference.
    pub fn with_default_key(mut self, key: impl Into<PathBuf>) -> Self {
        self.default_key = Some(key.into());
        self
    }

    pub fn default_key(&self) -> Option<&Path> {
        self.default_key.as_deref()
    }

    fn locate(&self, reference: &str) -> PathBuf {
        if let Some(rest) = reference.strip_prefix("~/") {
            if let Some(home) = std::env::var_os("HOME") {
                return PathBuf::from(home).join(rest);
            }
        }
        self.base_dir.join(reference)
    }

    pub fn resolve(&self, endpoint: &TransferEndpoint) -> Result<Credential, StagingError> {
        let mut cred = Credential::anonymous(endpoint.user.clone());
        let key = match &endpoint.auth {
            Some(r) => Some(self.locate(r)),
            None if endpoint.protocol == Protocol::Scp => self.default_key.clone(),
            None => None,
        };
        let Some(key) = key else {
            return Ok(cred);
        };
        if !key.is_file() {
            return Err(StagingError::AuthFailed(format!(
                "key file {} not found",
                key.display()
            )));
        }
        match endpoint.protocol {
            Protocol::Scp => cred.key_path = Some(key),
            _ => {
                let text = std::fs::read_to_string(&key)
                    .map_err(|e| StagingError::AuthFailed(format!("{}: {e}", key.display())))?;
                cred.secret = Some(text.trim().to_owned());
            }
        }
        Ok(cred)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ep(protocol: Protocol, auth: Option<&str>) -> TransferEndpoint {
        TransferEndpoint {
            location: "x".into(),
            protocol,
            user: "bob".into(),
            auth: auth.map(Into::into),
        }
    }

    #[test]
    fn resolution() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("token"), "s3cret\n").unwrap();
        std::fs::write(dir.path().join("id_ed25519"), "KEY").unwrap();
        let store = CredentialStore::new(dir.path());

        let c = store.resolve(&ep(Protocol::Https, Some("token"))).unwrap();
        assert_eq!(c.secret.as_deref(), Some("s3cret"));
        let c = store
            .resolve(&ep(Protocol::Scp, Some("id_ed25519")))
            .unwrap();
        assert_eq!(c.key_path, Some(dir.path().join("id_ed25519")));
        assert_eq!(
            store.resolve(&ep(Protocol::Ftp, None)).unwrap(),
            Credential::anonymous("bob")
        );
        assert!(matches!(
            store.resolve(&ep(Protocol::Scp, Some("missing"))),
            Err(StagingError::AuthFailed(_))
        ));
        let with_default = store.clone().with_default_key(dir.path().join("nope"));
        assert!(matches!(
            with_default.resolve(&ep(Protocol::Scp, None)),
            Err(StagingError::AuthFailed(_))
        ));
    }
}
