//! Certificates, pass-phrase protected keys and their armored text form.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use rand::RngCore;
use sha2::{Digest, Sha256};

use super::sig::{PublicKey, SecretKey, Signature};
use super::GsiError;
use crate::time::Timestamp;

const CERT_LABEL: &str = "MINIGRID CERTIFICATE";
const KEY_LABEL: &str = "MINIGRID ENCRYPTED PRIVATE KEY";
const PROXY_KEY_LABEL: &str = "MINIGRID PROXY KEY";
const CA_KEY_LABEL: &str = "MINIGRID CA KEY";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate {
    pub subject: String,
    pub issuer: String,
    pub not_before: Timestamp,
    pub not_after: Timestamp,
    pub key_id: String,
    pub public_key: PublicKey,
    pub signature: Signature,
}

pub fn key_id_for(public: PublicKey) -> String {
    let d = Sha256::digest(public.0.to_be_bytes());
    hex(&d[..8])
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<Vec<u8>> {
    if !s.len().is_multiple_of(2) {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(s.get(i..i + 2)?, 16).ok())
        .collect()
}

pub(crate) fn check_dn(dn: &str) -> Result<(), GsiError> {
    if dn.starts_with('/') && dn.len() > 1 && !dn.chars().any(|c| c.is_control()) {
        Ok(())
    } else {
        Err(GsiError::InvalidDn(dn.to_string()))
    }
}

impl Certificate {
    /// Builds and signs a certificate.
    pub fn sign(
        subject: &str,
        issuer: &str,
        not_before: Timestamp,
        not_after: Timestamp,
        public_key: PublicKey,
        signer: &SecretKey,
    ) -> Result<Certificate, GsiError> {
        check_dn(subject)?;
        check_dn(issuer)?;
        if not_before >= not_after {
            return Err(GsiError::InvalidLifetime);
        }
        let mut cert = Certificate {
            subject: subject.to_string(),
            issuer: issuer.to_string(),
            not_before,
            not_after,
            key_id: key_id_for(public_key),
            public_key,
            signature: Signature { e: 0, s: 0 },
        };
        cert.signature = signer.sign(&cert.tbs());
        Ok(cert)
    }

    /// The signed portion of the canonical encoding.
    pub fn tbs(&self) -> Vec<u8> {
        format!(
            "subject: {}\nissuer: {}\nnot_before: {}\nnot_after: {}\nkey_id: {}\npublic: {:016x}\n",
            self.subject,
            self.issuer,
            self.not_before.millis(),
            self.not_after.millis(),
            self.key_id,
            self.public_key.0
        )
        .into_bytes()
    }

    pub fn canonical(&self) -> Vec<u8> {
        let mut out = self.tbs();
        out.extend_from_slice(
            format!("signature: {:016x} {:016x}\n", self.signature.e, self.signature.s).as_bytes(),
        );
        out
    }

    pub fn is_self_signed(&self) -> bool {
        self.subject == self.issuer
    }

    pub fn verify_signed_by(&self, issuer_key: PublicKey) -> bool {
        issuer_key.verify(&self.tbs(), &self.signature)
    }

    pub fn to_armored(&self) -> String {
        armor(CERT_LABEL, &self.canonical())
    }

    pub fn from_canonical(bytes: &[u8]) -> Result<Certificate, GsiError> {
        let text = std::str::from_utf8(bytes).map_err(|_| malformed("certificate is not UTF-8"))?;
        let f = fields(
            text,
            &["subject", "issuer", "not_before", "not_after", "key_id", "public", "signature"],
        )?;
        let num = |s: &str| s.parse::<i64>().map_err(|_| malformed("bad timestamp"));
        let h64 = |s: &str| {
            (s.len() == 16)
                .then(|| u64::from_str_radix(s, 16).ok())
                .flatten()
                .ok_or_else(|| malformed("bad hex field"))
        };
        check_dn(f[0])?;
        check_dn(f[1])?;
        let (e, s) = f[6].split_once(' ').ok_or_else(|| malformed("bad signature"))?;
        let cert = Certificate {
            subject: f[0].to_string(),
            issuer: f[1].to_string(),
            not_before: Timestamp::from_millis(num(f[2])?),
            not_after: Timestamp::from_millis(num(f[3])?),
            key_id: f[4].to_string(),
            public_key: PublicKey(h64(f[5])?),
            signature: Signature { e: h64(e)?, s: h64(s)? },
        };
        if cert.canonical() != bytes {
            return Err(malformed("certificate encoding is not canonical"));
        }
        Ok(cert)
    }

    pub fn from_armored(text: &str) -> Result<Certificate, GsiError> {
        let blocks = dearmor_all(text)?;
        match blocks.as_slice() {
            [(label, body)] if label == CERT_LABEL => Certificate::from_canonical(body),
            _ => Err(malformed("expected exactly one certificate block")),
        }
    }
}

/// Secret key sealed under a pass-phrase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrivateKey {
    pub key_id: String,
    salt: [u8; 16],
    sealed: u64,
    check: [u8; 8],
}

fn pass_key(salt: &[u8; 16], passphrase: &str) -> ([u8; 8], [u8; 8]) {
    let k = Sha256::new()
        .chain_update(b"minigrid-key")
        .chain_update(salt)
        .chain_update(passphrase.as_bytes())
        .finalize();
    let c = Sha256::new().chain_update(b"check").chain_update(k).finalize();
    (
        k[..8].try_into().expect("8 bytes"),
        c[..8].try_into().expect("8 bytes"),
    )
}

impl PrivateKey {
    pub fn seal(secret: &SecretKey, passphrase: &str, rng: &mut impl RngCore) -> PrivateKey {
        let mut salt = [0u8; 16];
        rng.fill_bytes(&mut salt);
        let (pad, check) = pass_key(&salt, passphrase);
        PrivateKey {
            key_id: key_id_for(secret.public()),
            salt,
            sealed: secret.scalar() ^ u64::from_be_bytes(pad),
            check,
        }
    }

    pub fn unlock(&self, passphrase: &str) -> Result<SecretKey, GsiError> {
        let (pad, check) = pass_key(&self.salt, passphrase);
        if check != self.check {
            return Err(GsiError::BadPassphrase);
        }
        SecretKey::from_scalar(self.sealed ^ u64::from_be_bytes(pad))
            .filter(|k| key_id_for(k.public()) == self.key_id)
            .ok_or_else(|| malformed("key does not match its key id"))
    }

    pub fn to_armored(&self) -> String {
        let body = format!(
            "key_id: {}\nsalt: {}\nsealed: {:016x}\ncheck: {}\n",
            self.key_id,
            hex(&self.salt),
            self.sealed,
            hex(&self.check)
        );
        armor(KEY_LABEL, body.as_bytes())
    }

    pub fn from_armored(text: &str) -> Result<PrivateKey, GsiError> {
        let blocks = dearmor_all(text)?;
        let [(label, body)] = blocks.as_slice() else {
            return Err(malformed("expected exactly one key block"));
        };
        if label != KEY_LABEL {
            return Err(malformed("not an encrypted private key"));
        }
        let text = std::str::from_utf8(body).map_err(|_| malformed("key is not UTF-8"))?;
        let f = fields(text, &["key_id", "salt", "sealed", "check"])?;
        let bytes = |s: &str, n: usize| {
            unhex(s)
                .filter(|b| b.len() == n)
                .ok_or_else(|| malformed("bad hex field"))
        };
        Ok(PrivateKey {
            key_id: f[0].to_string(),
            salt: bytes(f[1], 16)?.try_into().expect("16 bytes"),
            sealed: u64::from_be_bytes(bytes(f[2], 8)?.try_into().expect("8 bytes")),
            check: bytes(f[3], 8)?.try_into().expect("8 bytes"),
        })
    }
}

pub(crate) fn proxy_key_armored(key: &SecretKey) -> String {
    armor(PROXY_KEY_LABEL, format!("secret: {:016x}\n", key.scalar()).as_bytes())
}

pub(crate) fn ca_key_armored(key: &SecretKey) -> String {
    armor(CA_KEY_LABEL, format!("secret: {:016x}\n", key.scalar()).as_bytes())
}

/// Splits a credential file into its certificates and optional unencrypted key.
pub(crate) fn parse_bundle(text: &str) -> Result<(Vec<Certificate>, Option<SecretKey>), GsiError> {
    let mut certs = Vec::new();
    let mut key = None;
    for (label, body) in dearmor_all(text)? {
        match label.as_str() {
            CERT_LABEL => certs.push(Certificate::from_canonical(&body)?),
            PROXY_KEY_LABEL | CA_KEY_LABEL => {
                let text = std::str::from_utf8(&body).map_err(|_| malformed("key is not UTF-8"))?;
                let f = fields(text, &["secret"])?;
                let x = u64::from_str_radix(f[0], 16).map_err(|_| malformed("bad proxy key"))?;
                key = Some(SecretKey::from_scalar(x).ok_or_else(|| malformed("bad proxy key"))?);
            }
            other => return Err(malformed(&format!("unexpected block {other}"))),
        }
    }
    Ok((certs, key))
}

fn malformed(msg: &str) -> GsiError {
    GsiError::Malformed(msg.to_string())
}

/// Parses `name: value` lines in exactly the given order.
fn fields<'a>(text: &'a str, names: &[&str]) -> Result<Vec<&'a str>, GsiError> {
    let lines: Vec<&str> = text.strip_suffix('\n').unwrap_or(text).split('\n').collect();
    if lines.len() != names.len() {
        return Err(malformed("wrong number of fields"));
    }
    lines
        .iter()
        .zip(names)
        .map(|(line, name)| {
            line.strip_prefix(name)
                .and_then(|r| r.strip_prefix(": "))
                .ok_or_else(|| malformed(&format!("expected field {name}")))
        })
        .collect()
}

fn armor(label: &str, body: &[u8]) -> String {
    let b64 = STANDARD.encode(body);
    let mut out = format!("-----BEGIN {label}-----\n");
    for chunk in b64.as_bytes().chunks(64) {
        out.push_str(std::str::from_utf8(chunk).expect("base64 is ASCII"));
        out.push('\n');
    }
    out.push_str(&format!("-----END {label}-----\n"));
    out
}

fn dearmor_all(text: &str) -> Result<Vec<(String, Vec<u8>)>, GsiError> {
    let mut blocks = Vec::new();
    let mut lines = text.lines();
    while let Some(line) = lines.next() {
        if line.trim().is_empty() {
            continue;
        }
        let label = line
            .strip_prefix("-----BEGIN ")
            .and_then(|l| l.strip_suffix("-----"))
            .ok_or_else(|| malformed("expected BEGIN marker"))?;
        let end = format!("-----END {label}-----");
        let mut b64 = String::new();
        loop {
            let l = lines.next().ok_or_else(|| malformed("missing END marker"))?;
            if l == end {
                break;
            }
            b64.push_str(l.trim());
        }
        let body = STANDARD
            .decode(b64)
            .map_err(|_| malformed("bad base64 payload"))?;
        blocks.push((label.to_string(), body));
    }
    Ok(blocks)
}
