//! File staging between submit and execute nodes: digests, chunking,
//! per-job sandboxes, output delivery and the submitter's job event log.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::lrm::JobId;
use crate::time::Timestamp;

pub const CHUNK_SIZE: usize = 64 * 1024;

pub fn digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Splits a payload into transfer chunks; an empty payload is one empty chunk.
pub fn chunks(data: &[u8]) -> Vec<&[u8]> {
    if data.is_empty() {
        vec![data]
    } else {
        data.chunks(CHUNK_SIZE).collect()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StagingError {
    #[error("source file {0} does not exist")]
    MissingSource(String),
    #[error("digest mismatch for {name}: expected {expected}, received {actual}")]
    DigestMismatch {
        name: String,
        expected: String,
        actual: String,
    },
    #[error("{0:?} would escape the job sandbox")]
    PathEscape(String),
    #[error("no sandbox for job {0}")]
    SandboxMissing(String),
    #[error("transfer not authorized: {0}")]
    AuthFailed(String),
    #[error("staging I/O: {0}")]
    Io(String),
}

impl StagingError {
    pub fn code(&self) -> &'static str {
        match self {
            StagingError::MissingSource(_) => "MissingSource",
            StagingError::DigestMismatch { .. } => "DigestMismatch",
            StagingError::PathEscape(_) => "PathEscape",
            StagingError::SandboxMissing(_) => "SandboxMissing",
            StagingError::AuthFailed(_) => "AuthFailed",
            StagingError::Io(_) => "Io",
        }
    }
}

impl From<io::Error> for StagingError {
    fn from(e: io::Error) -> Self {
        StagingError::Io(e.to_string())
    }
}

/// Sandbox file names are flat: no separators, no dot names.
pub fn check_name(name: &str) -> Result<(), StagingError> {
    let bad = name.is_empty()
        || name == "."
        || name == ".."
        || name.contains(['/', '\\', '\0']);
    if bad {
        Err(StagingError::PathEscape(name.to_string()))
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub size: u64,
    pub digest: String,
}

impl ManifestEntry {
    pub fn of(name: &str, bytes: &[u8]) -> Self {
        ManifestEntry {
            name: name.to_string(),
            size: bytes.len() as u64,
            digest: digest(bytes),
        }
    }
}

/// A file together with the digest the sender computed for it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transfer {
    pub name: String,
    pub data: Vec<u8>,
    pub digest: String,
}

impl Transfer {
    pub fn new(name: &str, data: Vec<u8>) -> Self {
        let digest = digest(&data);
        Transfer {
            name: name.to_string(),
            data,
            digest,
        }
    }

    pub fn verify(&self) -> Result<(), StagingError> {
        let actual = digest(&self.data);
        if actual == self.digest {
            Ok(())
        } else {
            Err(StagingError::DigestMismatch {
                name: self.name.clone(),
                expected: self.digest.clone(),
                actual,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sandbox {
    pub job_ref: String,
    pub root: PathBuf,
    pub manifest: Vec<ManifestEntry>,
}

impl Sandbox {
    pub fn path(&self, name: &str) -> Result<PathBuf, StagingError> {
        check_name(name)?;
        Ok(self.root.join(name))
    }
}

/// Per-job sandboxes under one spool directory on an execute node.
#[derive(Debug, Clone)]
pub struct SandboxStore {
    root: PathBuf,
}

impl SandboxStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        SandboxStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, job_ref: &str) -> Result<PathBuf, StagingError> {
        check_name(job_ref)?;
        Ok(self.root.join(job_ref))
    }

    /// Verifies and writes the received files. Repeating a stage-in with the
    /// same files is a no-op.
    pub fn stage_in(&self, job_ref: &str, items: &[Transfer]) -> Result<Sandbox, StagingError> {
        let dir = self.dir(job_ref)?;
        for item in items {
            check_name(&item.name)?;
            item.verify()?;
        }
        fs::create_dir_all(&dir)?;
        for item in items {
            let path = dir.join(&item.name);
            let current = fs::read(&path).ok();
            if current.as_deref() != Some(item.data.as_slice()) {
                fs::write(&path, &item.data)?;
            }
            #[cfg(unix)]
            if item.name == crate::jobspec::STAGED_EXECUTABLE {
                use std::os::unix::fs::PermissionsExt;
                fs::set_permissions(&path, fs::Permissions::from_mode(0o755))?;
            }
        }
        self.open(job_ref)
    }

    pub fn exists(&self, job_ref: &str) -> bool {
        self.dir(job_ref).is_ok_and(|d| d.is_dir())
    }

    pub fn open(&self, job_ref: &str) -> Result<Sandbox, StagingError> {
        let dir = self.dir(job_ref)?;
        if !dir.is_dir() {
            return Err(StagingError::SandboxMissing(job_ref.to_string()));
        }
        let mut names: Vec<String> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_file())
            .filter_map(|e| e.file_name().into_string().ok())
            .collect();
        names.sort();
        let manifest = names
            .iter()
            .map(|n| Ok(ManifestEntry::of(n, &fs::read(dir.join(n))?)))
            .collect::<Result<_, io::Error>>()?;
        Ok(Sandbox {
            job_ref: job_ref.to_string(),
            root: dir,
            manifest,
        })
    }

    pub fn read(&self, job_ref: &str, name: &str) -> Result<Vec<u8>, StagingError> {
        check_name(name)?;
        let dir = self.dir(job_ref)?;
        if !dir.is_dir() {
            return Err(StagingError::SandboxMissing(job_ref.to_string()));
        }
        match fs::read(dir.join(name)) {
            Ok(b) => Ok(b),
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                Err(StagingError::MissingSource(name.to_string()))
            }
            Err(e) => Err(e.into()),
        }
    }

    pub fn write(&self, job_ref: &str, name: &str, bytes: &[u8]) -> Result<(), StagingError> {
        check_name(name)?;
        let dir = self.dir(job_ref)?;
        if !dir.is_dir() {
            return Err(StagingError::SandboxMissing(job_ref.to_string()));
        }
        fs::write(dir.join(name), bytes)?;
        Ok(())
    }

    /// Deletes a sandbox after its outputs have been collected.
    pub fn release(&self, job_ref: &str) -> Result<bool, StagingError> {
        let dir = self.dir(job_ref)?;
        match fs::remove_dir_all(&dir) {
            Ok(()) => Ok(true),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(false),
            Err(e) => Err(e.into()),
        }
    }
}

/// Writes collected outputs into the submitter's directory after checking
/// their digests. Each name is the basename requested in the submit file.
pub fn stage_out(dest_dir: &Path, items: &[Transfer]) -> Result<Vec<PathBuf>, StagingError> {
    for item in items {
        check_name(&item.name)?;
        item.verify()?;
    }
    fs::create_dir_all(dest_dir)?;
    items
        .iter()
        .map(|item| {
            let path = dest_dir.join(&item.name);
            fs::write(&path, &item.data)?;
            Ok(path)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LogEvent {
    Submitted { host: String },
    Executing { host: String },
    Terminated { exit_code: i32 },
    Held { reason: String },
}

impl LogEvent {
    pub fn code(&self) -> u32 {
        match self {
            LogEvent::Submitted { .. } => 0,
            LogEvent::Executing { .. } => 1,
            LogEvent::Terminated { .. } => 5,
            LogEvent::Held { .. } => 12,
        }
    }

    fn text(&self) -> String {
        match self {
            LogEvent::Submitted { host } => format!("Job submitted from host: {host}"),
            LogEvent::Executing { host } => format!("Job executing on host: {host}"),
            LogEvent::Terminated { exit_code } => {
                format!("Job terminated.\n\t(1) Normal termination (return value {exit_code})")
            }
            LogEvent::Held { reason } => format!("Job was held.\n\t{reason}"),
        }
    }

    /// One event block, terminated by a `...` line.
    pub fn render(&self, id: JobId, at: Timestamp) -> String {
        format!(
            "{:03} ({}) {} {}\n...\n",
            self.code(),
            id,
            at.log_stamp(),
            self.text()
        )
    }
}

pub fn append_log_event(path: &Path, id: JobId, at: Timestamp, event: &LogEvent) -> io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(event.render(id, at).as_bytes())
}
