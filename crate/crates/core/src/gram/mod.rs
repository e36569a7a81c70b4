//! LRM-neutral remote job submission: the gatekeeper service, pluggable
//! LRM adapters, and the client-side request session.
//!
//! Both ends are transport-free state machines: they consume frames and
//! timer ticks and return frames to send, so the same code runs on the
//! deterministic simulator and over sockets.

mod client;
mod gatekeeper;

use std::fmt;
use std::str::FromStr;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use thiserror::Error;

use crate::gsi::{AuthzError, Certificate, VerifyError};
use crate::jobspec::{
    join_args, parse_native, split_args, Dialect, DialectError, GramJobRequest, StageItem,
    DIALECT_REVISION,
};
use crate::lrm::{JobId, JobState};
use crate::staging::StagingError;
use crate::time::Span;
use crate::wire::{Frame, MessageType};

pub use client::{ClientSession, Outcome, SessionConfig};
pub use gatekeeper::{Gatekeeper, GatekeeperConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GramState {
    Pending,
    Active,
    Done,
    Failed,
}

impl GramState {
    pub const ALL: [GramState; 4] = [
        GramState::Pending,
        GramState::Active,
        GramState::Done,
        GramState::Failed,
    ];

    pub fn from_lrm(state: JobState) -> GramState {
        match state {
            JobState::Idle => GramState::Pending,
            JobState::Running | JobState::Suspended => GramState::Active,
            JobState::Completed => GramState::Done,
            JobState::Removed | JobState::Held => GramState::Failed,
        }
    }

    pub fn is_final(self) -> bool {
        matches!(self, GramState::Done | GramState::Failed)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GramState::Pending => "PENDING",
            GramState::Active => "ACTIVE",
            GramState::Done => "DONE",
            GramState::Failed => "FAILED",
        }
    }
}

impl fmt::Display for GramState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GramState {
    type Err = GramError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        GramState::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| GramError::Protocol(format!("unknown state {s:?}")))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GramError {
    #[error("no credential presented; a proxy credential is required")]
    NoCredential,
    #[error("authentication failed: {0}")]
    AuthFailed(VerifyError),
    #[error("not authorized: {0}")]
    NotAuthorized(AuthzError),
    #[error("no adapter for jobmanager-{0}")]
    UnknownJobmanager(String),
    #[error("adapter failure: {0}")]
    AdapterFailure(String),
    #[error("adapter {adapter} expects native text revision {expected}, received {got}")]
    VersionMismatch {
        adapter: String,
        expected: u32,
        got: String,
    },
    #[error("unknown request {0}")]
    UnknownRequest(String),
    #[error("staged file {0} was never received")]
    MissingSource(String),
    #[error("malformed message: {0}")]
    Protocol(String),
    #[error("no reply from {contact} within {}", .waited.hms())]
    Timeout { contact: String, waited: Span },
    #[error("remote contact lost: {contact} did not answer {misses} consecutive requests")]
    ContactLost { contact: String, misses: u32 },
    #[error(transparent)]
    Staging(StagingError),
    #[error("{detail}")]
    Remote { code: String, detail: String },
}

impl GramError {
    pub fn code(&self) -> &str {
        match self {
            GramError::NoCredential => "AuthFailed",
            GramError::AuthFailed(v) => v.code(),
            GramError::NotAuthorized(e) => e.code(),
            GramError::UnknownJobmanager(_) => "UnknownJobmanager",
            GramError::AdapterFailure(_) => "AdapterFailure",
            GramError::VersionMismatch { .. } => "VersionMismatch",
            GramError::UnknownRequest(_) => "UnknownRequest",
            GramError::MissingSource(_) => "MissingSource",
            GramError::Protocol(_) => "ProtocolError",
            GramError::Timeout { .. } => "Timeout",
            GramError::ContactLost { .. } => "ContactLost",
            GramError::Staging(e) => e.code(),
            GramError::Remote { code, .. } => code,
        }
    }

    pub fn to_frame(&self) -> Frame {
        Frame::error(self.code(), &self.to_string())
    }

    /// Rebuilds an error carried by an ERROR frame.
    pub fn from_frame(frame: &Frame) -> GramError {
        GramError::Remote {
            code: frame.get("code").unwrap_or("ProtocolError").to_string(),
            detail: frame.get("detail").unwrap_or("").to_string(),
        }
    }
}

/// What an LRM reports about one job.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobSnapshot {
    pub state: JobState,
    pub run_time: Span,
    pub hold_reason: Option<String>,
}

/// The gatekeeper's view of a site's LRM. `sandbox` names the staged
/// directory the job runs in.
pub trait LrmBackend {
    fn submit(&mut self, job: &crate::jobspec::NativeJob, account: &str, sandbox: &str) -> Result<JobId, String>;
    fn snapshot(&self, id: JobId) -> Option<JobSnapshot>;
    fn hold(&mut self, id: JobId, reason: &str) -> Result<(), String>;
    fn cancel(&mut self, id: JobId) -> Result<(), String>;
}

/// Translates native text for one LRM dialect.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LrmAdapter {
    pub dialect: Dialect,
    /// Native text revision this adapter accepts.
    pub revision: u32,
    pub alive: bool,
}

impl LrmAdapter {
    pub fn new(dialect: Dialect) -> Self {
        LrmAdapter {
            dialect,
            revision: DIALECT_REVISION,
            alive: true,
        }
    }

    pub fn submit(
        &self,
        backend: &mut dyn LrmBackend,
        native: &str,
        account: &str,
        sandbox: &str,
    ) -> Result<JobId, GramError> {
        let job = parse_native(native, self.dialect).map_err(|e| match e {
            DialectError::UnknownDialect(d) => GramError::UnknownJobmanager(d),
            other => GramError::AdapterFailure(other.to_string()),
        })?;
        if job.revision != Some(self.revision) {
            return Err(GramError::VersionMismatch {
                adapter: self.dialect.name().to_string(),
                expected: self.revision,
                got: job.revision.map_or("none".into(), |r| r.to_string()),
            });
        }
        backend
            .submit(&job, account, sandbox)
            .map_err(GramError::AdapterFailure)
    }

    pub fn poll(&self, backend: &dyn LrmBackend, id: JobId) -> Option<JobSnapshot> {
        backend.snapshot(id)
    }

    pub fn cancel(&self, backend: &mut dyn LrmBackend, id: JobId) -> Result<(), GramError> {
        backend.cancel(id).map_err(GramError::AdapterFailure)
    }
}

/// Header value carrying a certificate chain.
pub fn encode_chain(chain: &[Certificate]) -> String {
    let text: String = chain.iter().map(Certificate::to_armored).collect();
    STANDARD.encode(text)
}

pub fn decode_chain(value: &str) -> Result<Vec<Certificate>, GramError> {
    let bad = |m: &str| GramError::Protocol(format!("credential: {m}"));
    let bytes = STANDARD.decode(value).map_err(|_| bad("bad base64"))?;
    let text = String::from_utf8(bytes).map_err(|_| bad("not UTF-8"))?;
    let mut certs = Vec::new();
    let mut block = String::new();
    for line in text.lines() {
        block.push_str(line);
        block.push('\n');
        if line.starts_with("-----END ") {
            certs.push(Certificate::from_armored(&block).map_err(|e| bad(&e.to_string()))?);
            block.clear();
        }
    }
    if !block.trim().is_empty() {
        return Err(bad("trailing data"));
    }
    Ok(certs)
}

pub fn attach_chain(frame: Frame, chain: &[Certificate]) -> Frame {
    if chain.is_empty() {
        frame
    } else {
        frame.with("credential", encode_chain(chain))
    }
}

fn header<'a>(frame: &'a Frame, key: &str) -> Result<&'a str, GramError> {
    frame
        .get(key)
        .ok_or_else(|| GramError::Protocol(format!("{} without {key}", frame.kind)))
}

pub fn request_frame(req: &GramJobRequest) -> Frame {
    let mut f = Frame::new(MessageType::JobRequest)
        .with("request-id", &req.request_id)
        .with("executable", &req.executable)
        .with("arguments", join_args(&req.arguments))
        .with("stdout", &req.stdout_name)
        .with("stderr", &req.stderr_name)
        .with("owner-dn", &req.owner_dn)
        .with("lrm", &req.target_lrm)
        .with("stage-count", req.stage_in.len());
    for (i, item) in req.stage_in.iter().enumerate() {
        f.set(
            &format!("stage-{i}"),
            join_args(&[item.name.clone(), item.digest.clone(), item.source.clone()]),
        );
    }
    f
}

pub fn parse_request_frame(f: &Frame) -> Result<GramJobRequest, GramError> {
    let count: usize = header(f, "stage-count")?
        .parse()
        .map_err(|_| GramError::Protocol("bad stage-count".into()))?;
    let mut stage_in = Vec::with_capacity(count);
    for i in 0..count {
        let words = split_args(header(f, &format!("stage-{i}"))?).map_err(GramError::Protocol)?;
        let [name, digest, source] = <[String; 3]>::try_from(words)
            .map_err(|_| GramError::Protocol(format!("bad stage-{i}")))?;
        stage_in.push(StageItem { name, source, digest });
    }
    Ok(GramJobRequest {
        executable: header(f, "executable")?.to_string(),
        arguments: split_args(header(f, "arguments")?).map_err(GramError::Protocol)?,
        stdout_name: header(f, "stdout")?.to_string(),
        stderr_name: header(f, "stderr")?.to_string(),
        owner_dn: header(f, "owner-dn")?.to_string(),
        target_lrm: header(f, "lrm")?.to_string(),
        stage_in,
        request_id: header(f, "request-id")?.to_string(),
    })
}

#[cfg(test)]
mod tests;
