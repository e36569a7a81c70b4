use std::collections::BTreeMap;

use super::{
    header, parse_request_frame, decode_chain, GramError, GramState, LrmAdapter, LrmBackend,
};
use crate::gsi::{verify_chain, Certificate, GridMap, DEFAULT_MAX_SKEW};
use crate::jobspec::{render_dialect, DEFAULT_GATEKEEPER_PORT};
use crate::lrm::JobId;
use crate::staging::{self, SandboxStore, StagingError, Transfer, CHUNK_SIZE};
use crate::time::{Span, Timestamp};
use crate::wire::{Frame, MessageType};

#[derive(Debug, Clone)]
pub struct GatekeeperConfig {
    pub host: String,
    pub port: u16,
    pub max_skew: Span,
    pub gridmap: GridMap,
    pub anchors: Vec<Certificate>,
}

impl GatekeeperConfig {
    pub fn new(host: &str) -> Self {
        GatekeeperConfig {
            host: host.to_string(),
            port: DEFAULT_GATEKEEPER_PORT,
            max_skew: DEFAULT_MAX_SKEW,
            gridmap: GridMap::new(),
            anchors: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
struct RequestEntry {
    adapter: String,
    job: JobId,
    stdout_name: String,
    stderr_name: String,
    seen: GramState,
    fail_code: Option<String>,
    released: bool,
}

/// The gatekeeper: authenticates, authorizes, picks an adapter, stages
/// files and submits; then answers status, collect and fetch requests.
#[derive(Debug)]
pub struct Gatekeeper {
    pub config: GatekeeperConfig,
    adapters: BTreeMap<String, LrmAdapter>,
    sandboxes: SandboxStore,
    uploads: BTreeMap<String, BTreeMap<String, Vec<u8>>>,
    requests: BTreeMap<String, RequestEntry>,
    log: Vec<String>,
}

impl Gatekeeper {
    pub fn new(config: GatekeeperConfig, sandboxes: SandboxStore) -> Self {
        Gatekeeper {
            config,
            adapters: BTreeMap::new(),
            sandboxes,
            uploads: BTreeMap::new(),
            requests: BTreeMap::new(),
            log: Vec::new(),
        }
    }

    /// Registers an adapter under its jobmanager name (`condor`, `sge`, ...).
    pub fn register(&mut self, jobmanager: &str, adapter: LrmAdapter) {
        self.adapters.insert(jobmanager.to_string(), adapter);
    }

    pub fn adapter_mut(&mut self, jobmanager: &str) -> Option<&mut LrmAdapter> {
        self.adapters.get_mut(jobmanager)
    }

    pub fn adapters(&self) -> impl Iterator<Item = (&str, &LrmAdapter)> {
        self.adapters.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn sandboxes(&self) -> &SandboxStore {
        &self.sandboxes
    }

    pub fn job_for(&self, request_id: &str) -> Option<JobId> {
        self.requests.get(request_id).map(|r| r.job)
    }

    pub fn drain_log(&mut self) -> Vec<String> {
        std::mem::take(&mut self.log)
    }

    fn note(&mut self, now: Timestamp, msg: String) {
        self.log.push(format!("{} {msg}", now.log_stamp()));
    }

    /// Handles one frame. `None` means the request went unanswered (an
    /// unresponsive adapter).
    pub fn handle(
        &mut self,
        frame: &Frame,
        backend: &mut dyn LrmBackend,
        now: Timestamp,
    ) -> Option<Frame> {
        let seq = frame.get("seq").map(str::to_string);
        let result = match frame.kind {
            MessageType::XferPut => self.on_put(frame, now).map(Some),
            MessageType::JobRequest => self.on_request(frame, backend, now),
            MessageType::JobStatus => self.on_status(frame, backend, now),
            MessageType::JobCollect => self.on_collect(frame, now).map(Some),
            MessageType::XferGet => self.on_get(frame, now).map(Some),
            other => Err(GramError::Protocol(format!("unexpected {other}"))),
        };
        let reply = match result {
            Ok(reply) => reply?,
            Err(e) => {
                let rid = frame.get("request-id").unwrap_or("-").to_string();
                self.note(now, format!("{} {rid} rejected: {} {}", frame.kind, e.code(), e));
                e.to_frame()
            }
        };
        Some(match seq {
            Some(s) => reply.with("seq", s),
            None => reply,
        })
    }

    fn authenticate(&self, frame: &Frame, now: Timestamp) -> Result<Vec<Certificate>, GramError> {
        let chain = match frame.get("credential") {
            Some(v) => decode_chain(v)?,
            None => return Err(GramError::NoCredential),
        };
        if chain.is_empty() {
            return Err(GramError::NoCredential);
        }
        verify_chain(&chain, &self.config.anchors, now, self.config.max_skew)
            .map_err(GramError::AuthFailed)?;
        Ok(chain)
    }

    fn authorize(&self, dn: &str, chain: &[Certificate]) -> Result<String, GramError> {
        self.config
            .gridmap
            .authorize(dn, chain)
            .map_err(GramError::NotAuthorized)
    }

    fn on_put(&mut self, frame: &Frame, now: Timestamp) -> Result<Frame, GramError> {
        let chain = self.authenticate(frame, now)?;
        self.authorize(chain.last().map(|c| c.subject.as_str()).unwrap_or(""), &chain)?;
        let rid = header(frame, "request-id")?.to_string();
        let name = header(frame, "name")?.to_string();
        staging::check_name(&name).map_err(GramError::Staging)?;
        let offset: usize = header(frame, "offset")?
            .parse()
            .map_err(|_| GramError::Protocol("bad offset".into()))?;
        let buf = self.uploads.entry(rid).or_default().entry(name.clone()).or_default();
        if offset > buf.len() {
            return Err(GramError::Protocol(format!("gap before offset {offset} in {name}")));
        }
        buf.truncate(offset);
        buf.extend_from_slice(&frame.payload);
        Ok(Frame::new(MessageType::XferPut)
            .with("name", name)
            .with("received", buf.len()))
    }

    fn on_request(
        &mut self,
        frame: &Frame,
        backend: &mut dyn LrmBackend,
        now: Timestamp,
    ) -> Result<Option<Frame>, GramError> {
        let req = parse_request_frame(frame)?;
        let chain = self.authenticate(frame, now)?;
        if let Some(entry) = self.requests.get(&req.request_id) {
            return Ok(Some(handle_frame(&req.request_id, entry.job, entry.seen)));
        }
        let account = self.authorize(&req.owner_dn, &chain)?;
        let adapter = self
            .adapters
            .get(&req.target_lrm)
            .cloned()
            .ok_or_else(|| GramError::UnknownJobmanager(req.target_lrm.clone()))?;
        self.note(
            now,
            format!(
                "JOB-REQUEST {} from {} mapped to {account}, jobmanager-{}",
                req.request_id, req.owner_dn, req.target_lrm
            ),
        );
        if !adapter.alive {
            self.note(
                now,
                format!(
                    "adapter {} not responding; request {} left unanswered",
                    req.target_lrm, req.request_id
                ),
            );
            return Ok(None);
        }
        let native = render_dialect(&req, adapter.dialect.name())
            .map_err(|e| GramError::AdapterFailure(e.to_string()))?;

        let mut items = Vec::new();
        let uploads = self.uploads.get(&req.request_id);
        for item in &req.stage_in {
            let data = uploads
                .and_then(|u| u.get(&item.name))
                .cloned()
                .ok_or_else(|| GramError::MissingSource(item.name.clone()))?;
            items.push(Transfer {
                name: item.name.clone(),
                data,
                digest: item.digest.clone(),
            });
        }
        let staged = self.sandboxes.stage_in(&req.request_id, &items);
        let stage_failure = match staged {
            Ok(_) => None,
            Err(e @ StagingError::DigestMismatch { .. }) => {
                self.sandboxes
                    .stage_in(&req.request_id, &[])
                    .map_err(|e| GramError::AdapterFailure(e.to_string()))?;
                Some(e)
            }
            Err(e) => return Err(GramError::Staging(e)),
        };

        let job = match adapter.submit(backend, &native, &account, &req.request_id) {
            Ok(job) => job,
            Err(e) => {
                let _ = self.sandboxes.release(&req.request_id);
                return Err(e);
            }
        };
        self.uploads.remove(&req.request_id);
        let mut entry = RequestEntry {
            adapter: req.target_lrm.clone(),
            job,
            stdout_name: req.stdout_name.clone(),
            stderr_name: req.stderr_name.clone(),
            seen: GramState::Pending,
            fail_code: None,
            released: false,
        };
        self.note(
            now,
            format!("request {} submitted as job {job} via {} adapter", req.request_id, adapter.dialect.name()),
        );
        if let Some(e) = stage_failure {
            let reason = format!("{}: {e}", e.code());
            backend.hold(job, &reason).map_err(GramError::AdapterFailure)?;
            self.note(now, format!("job {job} held: {reason}"));
            entry.fail_code = Some(e.code().to_string());
        }
        self.requests.insert(req.request_id.clone(), entry);
        Ok(Some(handle_frame(&req.request_id, job, GramState::Pending)))
    }

    fn entry(&self, frame: &Frame) -> Result<(String, RequestEntry), GramError> {
        let rid = header(frame, "request-id")?;
        self.requests
            .get(rid)
            .cloned()
            .map(|e| (rid.to_string(), e))
            .ok_or_else(|| GramError::UnknownRequest(rid.to_string()))
    }

    fn on_status(
        &mut self,
        frame: &Frame,
        backend: &mut dyn LrmBackend,
        now: Timestamp,
    ) -> Result<Option<Frame>, GramError> {
        self.authenticate(frame, now)?;
        let (rid, entry) = self.entry(frame)?;
        let adapter = self
            .adapters
            .get(&entry.adapter)
            .cloned()
            .ok_or_else(|| GramError::UnknownJobmanager(entry.adapter.clone()))?;
        if !adapter.alive {
            self.note(now, format!("adapter {} not responding to status of {rid}", entry.adapter));
            return Ok(None);
        }
        let snap = adapter
            .poll(backend, entry.job)
            .ok_or_else(|| GramError::AdapterFailure(format!("LRM lost job {}", entry.job)))?;
        // Never report a state earlier than one already reported.
        let state = GramState::from_lrm(snap.state).max(entry.seen);
        if state != entry.seen {
            self.note(now, format!("request {rid} job {} {} -> {state}", entry.job, entry.seen));
        }
        let e = self.requests.get_mut(&rid).expect("entry exists");
        e.seen = state;
        let mut reply = handle_frame(&rid, entry.job, state).with("run-time", snap.run_time.millis());
        if state == GramState::Failed {
            let reason = snap.hold_reason.unwrap_or_else(|| "job removed".into());
            reply.set("reason", reason);
            reply.set("reason-code", entry.fail_code.as_deref().unwrap_or("JobFailed"));
        }
        Ok(Some(reply))
    }

    fn on_collect(&mut self, frame: &Frame, now: Timestamp) -> Result<Frame, GramError> {
        self.authenticate(frame, now)?;
        let (rid, entry) = self.entry(frame)?;
        if frame.get("release") == Some("true") {
            if !entry.released {
                self.sandboxes
                    .release(&rid)
                    .map_err(|e| GramError::AdapterFailure(e.to_string()))?;
                self.requests.get_mut(&rid).expect("entry exists").released = true;
                self.note(now, format!("request {rid} sandbox released"));
            }
            return Ok(Frame::new(MessageType::JobCollect)
                .with("request-id", rid)
                .with("released", "true"));
        }
        if !entry.seen.is_final() {
            return Err(GramError::Protocol(format!("request {rid} is {}", entry.seen)));
        }
        let mut reply = Frame::new(MessageType::JobCollect)
            .with("request-id", &rid)
            .with("file-count", 2);
        for (i, name) in [&entry.stdout_name, &entry.stderr_name].into_iter().enumerate() {
            let data = self.sandboxes.read(&rid, name).unwrap_or_default();
            reply.set(
                &format!("file-{i}"),
                format!("{} {} {}", data.len(), staging::digest(&data), name),
            );
        }
        Ok(reply)
    }

    fn on_get(&mut self, frame: &Frame, now: Timestamp) -> Result<Frame, GramError> {
        self.authenticate(frame, now)?;
        let (rid, entry) = self.entry(frame)?;
        let name = header(frame, "name")?;
        if name != entry.stdout_name && name != entry.stderr_name {
            return Err(GramError::Protocol(format!("{name} is not an output of {rid}")));
        }
        let offset: usize = header(frame, "offset")?
            .parse()
            .map_err(|_| GramError::Protocol("bad offset".into()))?;
        let data = self.sandboxes.read(&rid, name).unwrap_or_default();
        let end = (offset + CHUNK_SIZE).min(data.len());
        let chunk = data.get(offset.min(end)..end).unwrap_or_default().to_vec();
        Ok(Frame::new(MessageType::XferGet)
            .with("request-id", rid)
            .with("name", name)
            .with("offset", offset)
            .with("size", data.len())
            .with_payload(chunk))
    }
}

fn handle_frame(rid: &str, job: JobId, state: GramState) -> Frame {
    Frame::new(MessageType::JobRequest)
        .with("request-id", rid)
        .with("job-id", job)
        .with("state", state)
}
