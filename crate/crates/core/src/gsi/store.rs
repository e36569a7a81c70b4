//! On-disk layout for CA state, user credentials and trust anchors.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::RngCore;

use super::cert::{self, Certificate, PrivateKey};
use super::{CertificateAuthority, GsiError, ProxyCredential};
use crate::time::Timestamp;

pub const ENV_USER_CRED_DIR: &str = "MINIGRID_USER_CRED_DIR";
pub const ENV_TRUST_DIR: &str = "MINIGRID_TRUST_DIR";

fn write_private(path: &Path, text: &str) -> io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        fs::set_permissions(path, fs::Permissions::from_mode(0o600))?;
    }
    Ok(())
}

/// CA directory holding `cacert.pem` and `cakey.pem`.
#[derive(Debug, Clone)]
pub struct CaStore {
    pub dir: PathBuf,
}

impl CaStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        CaStore { dir: dir.into() }
    }

    fn cert_path(&self) -> PathBuf {
        self.dir.join("cacert.pem")
    }

    fn key_path(&self) -> PathBuf {
        self.dir.join("cakey.pem")
    }

    pub fn is_initialized(&self) -> bool {
        self.cert_path().exists()
    }

    pub fn init(
        &self,
        name: &str,
        now: Timestamp,
        rng: &mut impl RngCore,
    ) -> Result<CertificateAuthority, GsiError> {
        if self.is_initialized() {
            return Err(GsiError::AlreadyInitialized);
        }
        let ca = CertificateAuthority::create(name, now, rng)?;
        fs::create_dir_all(&self.dir)?;
        write_private(&self.key_path(), &cert::ca_key_armored(ca.secret()))?;
        fs::write(self.cert_path(), ca.root.to_armored())?;
        Ok(ca)
    }

    pub fn load(&self) -> Result<CertificateAuthority, GsiError> {
        let cert_text = match fs::read_to_string(self.cert_path()) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(GsiError::NotInitialized),
            Err(e) => return Err(e.into()),
        };
        let root = Certificate::from_armored(&cert_text)?;
        let (_, key) = cert::parse_bundle(&fs::read_to_string(self.key_path())?)?;
        let key = key.ok_or_else(|| GsiError::Malformed("CA key file has no key".into()))?;
        if key.public() != root.public_key {
            return Err(GsiError::Malformed("CA key does not match CA certificate".into()));
        }
        let name = root
            .subject
            .strip_prefix("/O=Grid/OU=GlobusTest/OU=")
            .and_then(|r| r.strip_suffix("/CN=Globus Simple CA"))
            .unwrap_or(&root.subject)
            .to_string();
        Ok(CertificateAuthority::from_parts(name, root, key))
    }
}

/// Per-user credential directory: `usercert.pem`, `userkey.pem` and the
/// current `proxy.pem`.
#[derive(Debug, Clone)]
pub struct CredentialDir {
    pub dir: PathBuf,
}

impl CredentialDir {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        CredentialDir { dir: dir.into() }
    }

    pub fn from_env() -> Option<Self> {
        std::env::var_os(ENV_USER_CRED_DIR).map(CredentialDir::new)
    }

    pub fn cert_path(&self) -> PathBuf {
        self.dir.join("usercert.pem")
    }

    pub fn key_path(&self) -> PathBuf {
        self.dir.join("userkey.pem")
    }

    pub fn proxy_path(&self) -> PathBuf {
        self.dir.join("proxy.pem")
    }

    pub fn save_user(&self, cert: &Certificate, key: &PrivateKey) -> Result<(), GsiError> {
        fs::create_dir_all(&self.dir)?;
        fs::write(self.cert_path(), cert.to_armored())?;
        write_private(&self.key_path(), &key.to_armored())?;
        Ok(())
    }

    pub fn load_user(&self) -> Result<(Certificate, PrivateKey), GsiError> {
        let read = |p: PathBuf| match fs::read_to_string(&p) {
            Ok(t) => Ok(t),
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                Err(GsiError::NoUserCert(p.display().to_string()))
            }
            Err(e) => Err(e.into()),
        };
        let cert = Certificate::from_armored(&read(self.cert_path())?)?;
        let key = PrivateKey::from_armored(&read(self.key_path())?)?;
        Ok((cert, key))
    }

    pub fn save_proxy(&self, proxy: &ProxyCredential) -> Result<(), GsiError> {
        write_private(&self.proxy_path(), &proxy.to_armored())?;
        Ok(())
    }

    pub fn load_proxy(&self) -> Result<ProxyCredential, GsiError> {
        match fs::read_to_string(self.proxy_path()) {
            Ok(t) => ProxyCredential::from_armored(&t),
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                Err(GsiError::NoProxyFound(self.proxy_path().display().to_string()))
            }
            Err(e) => Err(e.into()),
        }
    }

    pub fn remove_proxy(&self) -> Result<bool, GsiError> {
        match fs::remove_file(self.proxy_path()) {
            Ok(()) => Ok(true),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(false),
            Err(e) => Err(e.into()),
        }
    }
}

/// Writes a trust anchor as `<key_id>.pem`.
pub fn install_anchor(dir: &Path, root: &Certificate) -> Result<PathBuf, GsiError> {
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("{}.pem", root.key_id));
    fs::write(&path, root.to_armored())?;
    Ok(path)
}

/// Loads every `*.pem` anchor in name order; a missing directory is empty.
pub fn load_trust_dir(dir: &Path) -> Result<Vec<Certificate>, GsiError> {
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pem"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| Certificate::from_armored(&fs::read_to_string(p)?))
        .collect()
}
