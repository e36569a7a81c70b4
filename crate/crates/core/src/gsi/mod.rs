//! Grid security: a simple certificate authority, user certificates,
//! short-lived proxy credentials, delegation, chain verification with clock
//! skew tolerance, and the grid-mapfile.

mod cert;
pub mod sig;
mod store;

use std::fmt;

use rand::RngCore;
use thiserror::Error;

use crate::time::{Span, Timestamp};

pub use cert::{key_id_for, Certificate, PrivateKey};
pub use sig::{PublicKey, SecretKey, Signature};
pub use store::{
    load_trust_dir, install_anchor, CaStore, CredentialDir, ENV_TRUST_DIR, ENV_USER_CRED_DIR,
};

pub const PROXY_SUFFIX: &str = "/CN=proxy";
pub const DEFAULT_PROXY_LIFETIME: Span = Span::from_hours(12);
pub const DEFAULT_MAX_SKEW: Span = Span::from_secs(300);
pub const CA_LIFETIME: Span = Span::from_hours(5 * 365 * 24);
pub const FUTURE_CERT_PHRASE: &str = "You have sent a certificate with future date/time";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VerifyError {
    #[error("empty certificate chain")]
    EmptyChain,
    #[error("bad signature on certificate {subject}")]
    BadSignature { subject: String },
    #[error("issuer {issuer} is not a trusted authority")]
    UnknownIssuer { issuer: String },
    #[error("{subject} is not a valid proxy of its issuer")]
    InvalidProxy { subject: String },
    #[error("{FUTURE_CERT_PHRASE}: {subject} is not valid before {}, local time is {}", .not_before.ctime(), .now.ctime())]
    FutureCertificate {
        subject: String,
        not_before: Timestamp,
        now: Timestamp,
    },
    #[error("certificate {subject} expired at {}, local time is {}", .not_after.ctime(), .now.ctime())]
    Expired {
        subject: String,
        not_after: Timestamp,
        now: Timestamp,
    },
}

impl VerifyError {
    pub fn code(&self) -> &'static str {
        match self {
            VerifyError::EmptyChain => "EmptyChain",
            VerifyError::BadSignature { .. } => "BadSignature",
            VerifyError::UnknownIssuer { .. } => "UnknownIssuer",
            VerifyError::InvalidProxy { .. } => "InvalidProxy",
            VerifyError::FutureCertificate { .. } => "FutureCertificate",
            VerifyError::Expired { .. } => "Expired",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GsiError {
    #[error("certificate authority already initialized")]
    AlreadyInitialized,
    #[error("certificate authority not initialized")]
    NotInitialized,
    #[error("certificate lifetime must be positive")]
    InvalidLifetime,
    #[error("bad pass phrase")]
    BadPassphrase,
    #[error("user certificate expired at {}", .0.ctime())]
    UserCertExpired(Timestamp),
    #[error("user certificate not valid until {}", .0.ctime())]
    UserCertNotYetValid(Timestamp),
    #[error("no proxy credential found at {0}")]
    NoProxyFound(String),
    #[error("no user certificate found at {0}")]
    NoUserCert(String),
    #[error("proxy credential expired at {}", .0.ctime())]
    ProxyExpired(Timestamp),
    #[error("invalid distinguished name {0:?}")]
    InvalidDn(String),
    #[error("malformed credential: {0}")]
    Malformed(String),
    #[error("credential storage: {0}")]
    Io(String),
    #[error(transparent)]
    Verify(#[from] VerifyError),
}

impl GsiError {
    pub fn code(&self) -> &'static str {
        match self {
            GsiError::AlreadyInitialized => "AlreadyInitialized",
            GsiError::NotInitialized => "NotInitialized",
            GsiError::InvalidLifetime => "InvalidLifetime",
            GsiError::BadPassphrase => "BadPassphrase",
            GsiError::UserCertExpired(_) => "UserCertExpired",
            GsiError::UserCertNotYetValid(_) => "UserCertNotYetValid",
            GsiError::NoProxyFound(_) => "NoProxyFound",
            GsiError::NoUserCert(_) => "NoUserCert",
            GsiError::ProxyExpired(_) => "ProxyExpired",
            GsiError::InvalidDn(_) => "InvalidDn",
            GsiError::Malformed(_) => "Malformed",
            GsiError::Io(_) => "Io",
            GsiError::Verify(v) => v.code(),
        }
    }
}

impl From<std::io::Error> for GsiError {
    fn from(e: std::io::Error) -> Self {
        GsiError::Io(e.to_string())
    }
}

pub fn ca_dn(name: &str) -> String {
    format!("/O=Grid/OU=GlobusTest/OU={name}/CN=Globus Simple CA")
}

/// `simpleCA-<host>`, the CA naming convention of the testbed.
pub fn ca_name_for_host(host: &str) -> String {
    format!("simpleCA-{host}")
}

/// A user DN issued under the named CA.
pub fn user_dn(ca_name: &str, common_name: &str) -> String {
    format!("/O=Grid/OU=GlobusTest/OU={ca_name}/OU=Local/CN={common_name}")
}

#[derive(Debug, Clone)]
pub struct CertificateAuthority {
    pub name: String,
    pub root: Certificate,
    key: SecretKey,
}

impl CertificateAuthority {
    /// Creates a self-signed root valid from `now`.
    pub fn create(name: &str, now: Timestamp, rng: &mut impl RngCore) -> Result<Self, GsiError> {
        let key = SecretKey::generate(rng);
        let dn = ca_dn(name);
        let root = Certificate::sign(&dn, &dn, now, now + CA_LIFETIME, key.public(), &key)?;
        Ok(CertificateAuthority {
            name: name.to_string(),
            root,
            key,
        })
    }

    pub(crate) fn from_parts(name: String, root: Certificate, key: SecretKey) -> Self {
        CertificateAuthority { name, root, key }
    }

    pub(crate) fn secret(&self) -> &SecretKey {
        &self.key
    }

    /// Issues an end-entity certificate valid from `now` for `lifetime`,
    /// clipped to the root's validity. The key is sealed with `passphrase`.
    pub fn issue_cert(
        &self,
        subject: &str,
        lifetime: Span,
        passphrase: &str,
        now: Timestamp,
        rng: &mut impl RngCore,
    ) -> Result<(Certificate, PrivateKey), GsiError> {
        if lifetime <= Span::ZERO {
            return Err(GsiError::InvalidLifetime);
        }
        let secret = SecretKey::generate(rng);
        let not_after = (now + lifetime).min(self.root.not_after);
        let cert = Certificate::sign(
            subject,
            &self.root.subject,
            now,
            not_after,
            secret.public(),
            &self.key,
        )?;
        Ok((cert, PrivateKey::seal(&secret, passphrase, rng)))
    }
}

/// A proxy certificate chain (leaf first, end-entity last) with the
/// unencrypted key of the leaf.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProxyCredential {
    pub chain: Vec<Certificate>,
    key: SecretKey,
}

impl ProxyCredential {
    pub fn new(chain: Vec<Certificate>, key: SecretKey) -> Result<Self, GsiError> {
        match chain.first() {
            Some(leaf) if leaf.public_key == key.public() => Ok(ProxyCredential { chain, key }),
            Some(_) => Err(GsiError::Malformed("proxy key does not match certificate".into())),
            None => Err(VerifyError::EmptyChain.into()),
        }
    }

    pub fn leaf(&self) -> &Certificate {
        &self.chain[0]
    }

    pub fn end_entity(&self) -> &Certificate {
        self.chain.last().expect("chain is never empty")
    }

    pub fn subject(&self) -> &str {
        &self.leaf().subject
    }

    /// Identity of the user the proxy speaks for.
    pub fn identity(&self) -> &str {
        &self.end_entity().subject
    }

    pub fn not_after(&self) -> Timestamp {
        self.leaf().not_after
    }

    /// Signs a fresh proxy of this proxy, valid from `now` (the delegating
    /// node's clock) and never outliving the parent.
    pub fn delegate(
        &self,
        now: Timestamp,
        lifetime: Span,
        rng: &mut impl RngCore,
    ) -> Result<ProxyCredential, GsiError> {
        if now >= self.not_after() {
            return Err(GsiError::ProxyExpired(self.not_after()));
        }
        if lifetime <= Span::ZERO {
            return Err(GsiError::InvalidLifetime);
        }
        let key = SecretKey::generate(rng);
        let leaf = Certificate::sign(
            &format!("{}{PROXY_SUFFIX}", self.subject()),
            self.subject(),
            now,
            (now + lifetime).min(self.not_after()),
            key.public(),
            &self.key,
        )?;
        let mut chain = vec![leaf];
        chain.extend(self.chain.iter().cloned());
        Ok(ProxyCredential { chain, key })
    }

    /// Certificates followed by the unencrypted leaf key.
    pub fn to_armored(&self) -> String {
        let mut out: String = self.chain.iter().map(Certificate::to_armored).collect();
        out.push_str(&cert::proxy_key_armored(&self.key));
        out
    }

    pub fn from_armored(text: &str) -> Result<ProxyCredential, GsiError> {
        let (chain, key) = cert::parse_bundle(text)?;
        let key = key.ok_or_else(|| GsiError::Malformed("proxy file has no key".into()))?;
        ProxyCredential::new(chain, key)
    }
}

/// Creates a proxy for a user certificate, valid from `now` for `lifetime`
/// and clipped to the user certificate's expiry.
pub fn proxy_init(
    cert: &Certificate,
    key: &PrivateKey,
    passphrase: &str,
    lifetime: Span,
    now: Timestamp,
    rng: &mut impl RngCore,
) -> Result<ProxyCredential, GsiError> {
    let user_key = key.unlock(passphrase)?;
    if user_key.public() != cert.public_key {
        return Err(GsiError::Malformed("key does not match certificate".into()));
    }
    if now >= cert.not_after {
        return Err(GsiError::UserCertExpired(cert.not_after));
    }
    if now < cert.not_before {
        return Err(GsiError::UserCertNotYetValid(cert.not_before));
    }
    if lifetime <= Span::ZERO {
        return Err(GsiError::InvalidLifetime);
    }
    let proxy_key = SecretKey::generate(rng);
    let leaf = Certificate::sign(
        &format!("{}{PROXY_SUFFIX}", cert.subject),
        &cert.subject,
        now,
        (now + lifetime).min(cert.not_after),
        proxy_key.public(),
        &user_key,
    )?;
    let cred = ProxyCredential::new(vec![leaf, cert.clone()], proxy_key)?;
    if !cred.leaf().verify_signed_by(cert.public_key) {
        return Err(VerifyError::BadSignature {
            subject: cred.subject().to_string(),
        }
        .into());
    }
    Ok(cred)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProxyInfo {
    pub subject: String,
    pub issuer: String,
    pub identity: String,
    pub time_left: Span,
    pub expired: bool,
}

impl fmt::Display for ProxyInfo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "subject  : {}", self.subject)?;
        writeln!(f, "issuer   : {}", self.issuer)?;
        writeln!(f, "identity : {}", self.identity)?;
        write!(f, "timeleft : {}", self.time_left.hms())?;
        if self.expired {
            write!(f, " (expired)")?;
        }
        Ok(())
    }
}

pub fn proxy_info(proxy: &ProxyCredential, now: Timestamp) -> ProxyInfo {
    let left = (proxy.not_after() - now).max(Span::ZERO);
    ProxyInfo {
        subject: proxy.subject().to_string(),
        issuer: proxy.leaf().issuer.clone(),
        identity: proxy.identity().to_string(),
        time_left: left,
        expired: left == Span::ZERO,
    }
}

/// Verifies signatures up to an intact self-signed trust anchor, proxy
/// naming, then validity windows (anchor included) widened by `max_skew`.
pub fn verify_chain(
    chain: &[Certificate],
    anchors: &[Certificate],
    now: Timestamp,
    max_skew: Span,
) -> Result<(), VerifyError> {
    let last = chain.last().ok_or(VerifyError::EmptyChain)?;

    for pair in chain.windows(2) {
        if !pair[0].verify_signed_by(pair[1].public_key) {
            return Err(VerifyError::BadSignature {
                subject: pair[0].subject.clone(),
            });
        }
    }
    let candidates: Vec<&Certificate> = anchors
        .iter()
        .filter(|a| a.subject == last.issuer && a.is_self_signed())
        .collect();
    if candidates.is_empty() {
        return Err(VerifyError::UnknownIssuer {
            issuer: last.issuer.clone(),
        });
    }
    let intact: Vec<&Certificate> = candidates
        .iter()
        .copied()
        .filter(|a| a.verify_signed_by(a.public_key))
        .collect();
    if intact.is_empty() {
        return Err(VerifyError::BadSignature {
            subject: candidates[0].subject.clone(),
        });
    }
    let Some(anchor) = intact.iter().find(|a| last.verify_signed_by(a.public_key)) else {
        return Err(VerifyError::BadSignature {
            subject: last.subject.clone(),
        });
    };

    for pair in chain.windows(2) {
        let (child, parent) = (&pair[0], &pair[1]);
        if child.issuer != parent.subject {
            return Err(VerifyError::UnknownIssuer {
                issuer: child.issuer.clone(),
            });
        }
        if child.subject != format!("{}{PROXY_SUFFIX}", parent.subject) {
            return Err(VerifyError::InvalidProxy {
                subject: child.subject.clone(),
            });
        }
    }

    for cert in chain.iter().chain([*anchor]) {
        if now < cert.not_before - max_skew {
            return Err(VerifyError::FutureCertificate {
                subject: cert.subject.clone(),
                not_before: cert.not_before,
                now,
            });
        }
        if now > cert.not_after + max_skew {
            return Err(VerifyError::Expired {
                subject: cert.subject.clone(),
                not_after: cert.not_after,
                now,
            });
        }
    }
    Ok(())
}

/// Removes exactly one trailing `/CN=proxy`.
pub fn strip_proxy(dn: &str) -> &str {
    dn.strip_suffix(PROXY_SUFFIX).unwrap_or(dn)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AuthzError {
    #[error("requested identity {claimed} does not match credential {actual}")]
    IdentityMismatch { claimed: String, actual: String },
    #[error("{0} is not listed in the grid-mapfile")]
    NotMapped(String),
}

impl AuthzError {
    pub fn code(&self) -> &'static str {
        match self {
            AuthzError::IdentityMismatch { .. } => "IdentityMismatch",
            AuthzError::NotMapped(_) => "NotAuthorized",
        }
    }
}

/// DN to local account mapping, one `"<DN>" <account>` entry per line.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GridMap {
    entries: Vec<(String, String)>,
}

impl GridMap {
    pub fn new() -> Self {
        GridMap::default()
    }

    pub fn insert(&mut self, dn: &str, account: &str) {
        self.entries.retain(|(d, _)| d != dn);
        self.entries.push((dn.to_string(), account.to_string()));
    }

    pub fn parse(text: &str) -> Result<GridMap, GsiError> {
        let mut map = GridMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || GsiError::Malformed(format!("grid-mapfile line {}", i + 1));
            let rest = line.strip_prefix('"').ok_or_else(bad)?;
            let (dn, account) = rest.split_once('"').ok_or_else(bad)?;
            let account = account.trim();
            if account.is_empty() || account.contains(char::is_whitespace) {
                return Err(bad());
            }
            map.insert(dn, account);
        }
        Ok(map)
    }

    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|(dn, a)| format!("\"{dn}\" {a}\n"))
            .collect()
    }

    pub fn lookup(&self, dn: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(d, _)| d == dn)
            .map(|(_, a)| a.as_str())
    }

    /// Maps a request's owner DN to a local account. The DN, with one proxy
    /// suffix removed, must name the chain's end-entity.
    pub fn authorize(&self, owner_dn: &str, chain: &[Certificate]) -> Result<String, AuthzError> {
        let claimed = strip_proxy(owner_dn);
        let actual = chain.last().map(|c| c.subject.as_str()).unwrap_or("");
        if claimed != actual {
            return Err(AuthzError::IdentityMismatch {
                claimed: claimed.to_string(),
                actual: actual.to_string(),
            });
        }
        self.lookup(claimed)
            .map(str::to_string)
            .ok_or_else(|| AuthzError::NotMapped(claimed.to_string()))
    }
}

#[cfg(test)]
mod tests;
