//! Grid-universe routing: Globus-universe jobs wait in the submitter's own
//! queue while a client session runs them on a remote gatekeeper, and the
//! local record mirrors the remote state.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::RngCore;
use thiserror::Error;

use crate::gram::{ClientSession, GramError, GramState, Outcome, SessionConfig};
use crate::gsi::{GsiError, ProxyCredential};
use crate::jobspec::{to_gram_request, SubmitDescription, Universe};
use crate::lrm::{JobId, JobState, Lrm, LrmError, Submitted};
use crate::staging::{self, LogEvent, StagingError, Transfer};
use crate::time::Timestamp;
use crate::wire::Frame;

pub const CONTACT_LOST_REASON: &str = "remote contact lost";

#[derive(Debug, Error)]
pub enum GridqError {
    #[error("submit description is not in the Globus universe")]
    NotGridUniverse,
    #[error(transparent)]
    Lrm(#[from] LrmError),
}

impl GridqError {
    pub fn code(&self) -> &'static str {
        match self {
            GridqError::NotGridUniverse => "NotGridUniverse",
            GridqError::Lrm(e) => e.code(),
        }
    }
}

/// Local state a grid job shows for each remote state.
pub fn mirror_state(state: GramState) -> JobState {
    match state {
        GramState::Pending => JobState::Idle,
        GramState::Active => JobState::Running,
        GramState::Done => JobState::Completed,
        GramState::Failed => JobState::Held,
    }
}

/// Where a grid job's files live on the submitting node.
#[derive(Debug, Clone)]
pub struct JobFiles {
    /// Directory the job was submitted from.
    pub iwd: PathBuf,
    pub output: Option<String>,
    pub error: Option<String>,
    pub log: Option<String>,
}

impl JobFiles {
    pub fn for_spec(sd: &SubmitDescription, iwd: &Path) -> Self {
        JobFiles {
            iwd: iwd.to_path_buf(),
            output: sd.output.clone(),
            error: sd.error.clone(),
            log: sd.log.clone(),
        }
    }

    fn resolve(&self, name: &str) -> PathBuf {
        self.iwd.join(name)
    }

    pub fn log_event(&self, id: JobId, at: Timestamp, event: &LogEvent) {
        if let Some(log) = &self.log {
            let _ = staging::append_log_event(&self.resolve(log), id, at, event);
        }
    }
}

#[derive(Debug)]
struct GridJob {
    files: JobFiles,
    session: Option<ClientSession>,
    contact: String,
    reported_executing: bool,
}

/// One frame bound for a gatekeeper, tagged with the session it belongs to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outgoing {
    pub contact: String,
    pub request_id: String,
    pub frame: Frame,
}

/// Reads a file on the submitting node.
pub type FileReader<'a> = dyn Fn(&str) -> std::io::Result<Vec<u8>> + 'a;

/// Condor-G for one submit node.
#[derive(Debug)]
pub struct GridManager {
    short_host: String,
    config: SessionConfig,
    next_request: u64,
    jobs: BTreeMap<JobId, GridJob>,
    by_request: BTreeMap<String, JobId>,
}

impl GridManager {
    pub fn new(host: &str) -> Self {
        GridManager {
            short_host: host.split('.').next().unwrap_or(host).to_string(),
            config: SessionConfig::grid(),
            next_request: 0,
            jobs: BTreeMap::new(),
            by_request: BTreeMap::new(),
        }
    }

    pub fn with_config(mut self, config: SessionConfig) -> Self {
        self.config = config;
        self
    }

    /// A request id unique across the testbed: short host plus a counter.
    pub fn next_request_id(&mut self) -> String {
        self.next_request += 1;
        format!("{}-{}", self.short_host, self.next_request)
    }

    pub fn tracked(&self) -> impl Iterator<Item = JobId> + '_ {
        self.jobs.keys().copied()
    }

    pub fn contact_of(&self, id: JobId) -> Option<&str> {
        self.jobs.get(&id).map(|j| j.contact.as_str())
    }

    /// Queues a Globus-universe description locally and starts one remote
    /// session per proc. A missing or unusable proxy holds the jobs instead.
    #[allow(clippy::too_many_arguments)]
    pub fn submit_grid(
        &mut self,
        lrm: &mut Lrm,
        sd: &SubmitDescription,
        owner: &str,
        iwd: &Path,
        proxy: Result<&ProxyCredential, GsiError>,
        read: &FileReader<'_>,
        now: Timestamp,
        rng: &mut impl RngCore,
    ) -> Result<Submitted, GridqError> {
        if sd.universe != Universe::Globus || sd.grid_resource.is_none() {
            return Err(GridqError::NotGridUniverse);
        }
        let submitted = lrm.submit(sd, owner, now)?;
        let files = JobFiles::for_spec(sd, iwd);
        for &id in &submitted.ids {
            files.log_event(id, now, &LogEvent::Submitted { host: lrm.host().to_string() });
            let request_id = self.next_request_id();
            let started = self.start(sd, &request_id, proxy.as_deref(), read, now, rng);
            let contact = sd
                .grid_resource
                .as_ref()
                .map(|g| g.contact.to_string())
                .unwrap_or_default();
            let mut job = GridJob {
                files: files.clone(),
                session: None,
                contact,
                reported_executing: false,
            };
            match started {
                Ok(session) => {
                    self.by_request.insert(request_id, id);
                    job.session = Some(session);
                }
                Err(reason) => {
                    lrm.hold(id, &reason, now)?;
                    job.files.log_event(id, now, &LogEvent::Held { reason });
                    continue;
                }
            }
            self.jobs.insert(id, job);
        }
        Ok(submitted)
    }

    fn start(
        &self,
        sd: &SubmitDescription,
        request_id: &str,
        proxy: Result<&ProxyCredential, &GsiError>,
        read: &FileReader<'_>,
        now: Timestamp,
        rng: &mut impl RngCore,
    ) -> Result<ClientSession, String> {
        let proxy = proxy.map_err(|e| format!("{}: {e}; run mg-proxy-init", e.code()))?;
        let delegated = proxy
            .delegate(now, proxy.not_after() - now, rng)
            .map_err(|e| format!("{}: {e}; run mg-proxy-init", e.code()))?;
        let (contact, req) = to_gram_request(sd, proxy.identity(), request_id)
            .map_err(|e| e.to_string())?;
        let mut uploads = Vec::new();
        for item in &req.stage_in {
            let data = read(&item.source).map_err(|e| {
                let err = StagingError::MissingSource(format!("{} ({e})", item.source));
                format!("{}: {err}", err.code())
            })?;
            uploads.push((item.name.clone(), data));
        }
        Ok(ClientSession::new(
            &contact.host,
            req,
            uploads,
            delegated.chain,
            self.config,
            now,
        ))
    }

    /// Drives session timers and returns frames to send.
    pub fn tick(&mut self, lrm: &mut Lrm, now: Timestamp) -> Vec<Outgoing> {
        let ids: Vec<JobId> = self.jobs.keys().copied().collect();
        let mut out = Vec::new();
        for id in ids {
            let job = self.jobs.get_mut(&id).expect("tracked");
            if let Some(session) = job.session.as_mut() {
                if let Some(frame) = session.on_tick(now) {
                    out.push(outgoing(session, frame));
                }
            }
            self.mirror(lrm, id, now);
        }
        out
    }

    /// Delivers a gatekeeper reply to the session that sent the request.
    pub fn on_reply(
        &mut self,
        lrm: &mut Lrm,
        request_id: &str,
        frame: &Frame,
        now: Timestamp,
    ) -> Vec<Outgoing> {
        let Some(&id) = self.by_request.get(request_id) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        if let Some(session) = self.jobs.get_mut(&id).and_then(|j| j.session.as_mut()) {
            if let Some(next) = session.on_frame(frame, now) {
                out.push(outgoing(session, next));
            }
        }
        self.mirror(lrm, id, now);
        out
    }

    /// Applies the mirror mapping to one job's local record.
    fn mirror(&mut self, lrm: &mut Lrm, id: JobId, now: Timestamp) {
        let Some(job) = self.jobs.get_mut(&id) else {
            return;
        };
        let Some(session) = job.session.as_ref() else {
            return;
        };
        let local = match lrm.job(id) {
            Some(j) => j.state,
            None => {
                self.forget(id);
                return;
            }
        };
        if local.is_terminal() || local == JobState::Held {
            self.forget(id);
            return;
        }
        let remote = session.state().unwrap_or(GramState::Pending);
        let run_time = session.run_time();
        let contact = job.contact.clone();
        if remote >= GramState::Active && local == JobState::Idle && remote != GramState::Failed {
            let _ = lrm.start_remote(id, &contact, now);
            if !job.reported_executing {
                job.reported_executing = true;
                job.files.log_event(id, now, &LogEvent::Executing { host: contact.clone() });
            }
        }
        let _ = lrm.set_remote_run_time(id, run_time);

        match session.result().cloned() {
            None => {}
            Some(Ok(outcome)) => {
                let files = job.files.clone();
                match deliver(&files, &outcome) {
                    Ok(()) => {
                        let _ = lrm.complete(id, now, 0);
                        files.log_event(id, now, &LogEvent::Terminated { exit_code: 0 });
                    }
                    Err(e) => self.hold(lrm, id, &format!("{}: {e}", e.code()), now),
                }
                self.forget(id);
            }
            Some(Err(e)) => {
                let reason = match &e {
                    GramError::ContactLost { .. } | GramError::Timeout { .. } => {
                        CONTACT_LOST_REASON.to_string()
                    }
                    other => format!("{}: {other}", other.code()),
                };
                self.hold(lrm, id, &reason, now);
                self.forget(id);
            }
        }
    }

    fn hold(&mut self, lrm: &mut Lrm, id: JobId, reason: &str, now: Timestamp) {
        if lrm.hold(id, reason, now).is_ok() {
            if let Some(job) = self.jobs.get(&id) {
                job.files.log_event(id, now, &LogEvent::Held { reason: reason.to_string() });
            }
        }
    }

    fn forget(&mut self, id: JobId) {
        if let Some(job) = self.jobs.remove(&id) {
            if let Some(s) = job.session {
                self.by_request.remove(s.request_id());
            }
        }
    }
}

fn outgoing(session: &ClientSession, frame: Frame) -> Outgoing {
    Outgoing {
        contact: session.contact().to_string(),
        request_id: session.request_id().to_string(),
        frame,
    }
}

/// Writes collected stdout and stderr under the paths the submit file gave.
fn deliver(files: &JobFiles, outcome: &Outcome) -> Result<(), StagingError> {
    for path in [&files.output, &files.error].into_iter().flatten() {
        let full = files.resolve(path);
        let dir = full.parent().unwrap_or(&files.iwd).to_path_buf();
        let base = full.file_name().and_then(|n| n.to_str()).unwrap_or(path);
        staging::stage_out(&dir, &[Transfer::new(base, outcome.output(base).to_vec())])?;
    }
    Ok(())
}
