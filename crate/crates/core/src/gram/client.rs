use std::collections::BTreeMap;

use super::{attach_chain, request_frame, GramError, GramState};
use crate::gsi::Certificate;
use crate::jobspec::GramJobRequest;
use crate::lrm::JobId;
use crate::staging::{self, StagingError, CHUNK_SIZE};
use crate::time::{Span, Timestamp};
use crate::wire::{Frame, MessageType};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionConfig {
    pub poll_interval: Span,
    /// How long to wait for a reply before resending.
    pub retry_interval: Span,
    /// Consecutive unanswered sends before giving up.
    pub max_misses: Option<u32>,
    /// Total time allowed from start to collected output.
    pub deadline: Option<Span>,
}

impl SessionConfig {
    /// Synchronous remote run.
    pub fn job_run() -> Self {
        SessionConfig {
            poll_interval: Span::from_millis(500),
            retry_interval: Span::from_secs(5),
            max_misses: None,
            deadline: Some(Span::from_secs(60)),
        }
    }

    /// Grid-universe jobs mirrored by a local queue.
    pub fn grid() -> Self {
        SessionConfig {
            poll_interval: Span::from_secs(2),
            retry_interval: Span::from_secs(2),
            max_misses: Some(5),
            deadline: None,
        }
    }
}

/// A finished remote job.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub job: JobId,
    pub state: GramState,
    pub run_time: Span,
    pub outputs: BTreeMap<String, Vec<u8>>,
}

impl Outcome {
    pub fn output(&self, name: &str) -> &[u8] {
        self.outputs.get(name).map(Vec::as_slice).unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Phase {
    Upload { item: usize, offset: usize },
    Submit,
    Poll { next: Timestamp },
    Collect,
    Fetch { file: usize, offset: usize },
    Release,
    Finished,
}

#[derive(Debug, Clone)]
struct Expected {
    name: String,
    size: usize,
    digest: String,
}

/// Client half of one remote job: uploads, submits, polls, collects and
/// releases, one outstanding message at a time.
#[derive(Debug, Clone)]
pub struct ClientSession {
    contact: String,
    request: GramJobRequest,
    uploads: Vec<(String, Vec<u8>)>,
    chain: Vec<Certificate>,
    config: SessionConfig,
    started: Timestamp,
    phase: Phase,
    seq: u64,
    outstanding: Option<(Frame, Timestamp)>,
    misses: u32,
    job: Option<JobId>,
    state: Option<GramState>,
    run_time: Span,
    expected: Vec<Expected>,
    fetched: BTreeMap<String, Vec<u8>>,
    result: Option<Result<Outcome, GramError>>,
}

impl ClientSession {
    /// `uploads` holds the bytes for each of the request's stage-in items.
    pub fn new(
        contact: &str,
        mut request: GramJobRequest,
        uploads: Vec<(String, Vec<u8>)>,
        chain: Vec<Certificate>,
        config: SessionConfig,
        now: Timestamp,
    ) -> Self {
        for item in &mut request.stage_in {
            if let Some((_, data)) = uploads.iter().find(|(n, _)| *n == item.name) {
                item.digest = staging::digest(data);
            }
        }
        let phase = if uploads.is_empty() {
            Phase::Submit
        } else {
            Phase::Upload { item: 0, offset: 0 }
        };
        ClientSession {
            contact: contact.to_string(),
            request,
            uploads,
            chain,
            config,
            started: now,
            phase,
            seq: 0,
            outstanding: None,
            misses: 0,
            job: None,
            state: None,
            run_time: Span::ZERO,
            expected: Vec::new(),
            fetched: BTreeMap::new(),
            result: None,
        }
    }

    pub fn contact(&self) -> &str {
        &self.contact
    }

    pub fn request_id(&self) -> &str {
        &self.request.request_id
    }

    pub fn remote_job(&self) -> Option<JobId> {
        self.job
    }

    /// Last state reported by the gatekeeper.
    pub fn state(&self) -> Option<GramState> {
        self.state
    }

    pub fn run_time(&self) -> Span {
        self.run_time
    }

    pub fn is_finished(&self) -> bool {
        self.result.is_some()
    }

    pub fn result(&self) -> Option<&Result<Outcome, GramError>> {
        self.result.as_ref()
    }

    pub fn into_result(self) -> Option<Result<Outcome, GramError>> {
        self.result
    }

    /// Advances timers. Returns a frame to send, if any.
    pub fn on_tick(&mut self, now: Timestamp) -> Option<Frame> {
        if self.result.is_some() {
            return None;
        }
        if let Some(limit) = self.config.deadline {
            if now - self.started >= limit {
                self.fail(GramError::Timeout {
                    contact: self.contact.clone(),
                    waited: limit,
                });
                return None;
            }
        }
        if let Some((frame, sent)) = &self.outstanding {
            if now - *sent < self.config.retry_interval {
                return None;
            }
            self.misses += 1;
            if let Some(max) = self.config.max_misses {
                if self.misses >= max {
                    let misses = self.misses;
                    self.fail(GramError::ContactLost {
                        contact: self.contact.clone(),
                        misses,
                    });
                    return None;
                }
            }
            let frame = frame.clone();
            self.outstanding = Some((frame.clone(), now));
            return Some(frame);
        }
        match self.phase {
            Phase::Poll { next } if now >= next => self.send(now),
            Phase::Poll { .. } | Phase::Finished => None,
            _ => self.send(now),
        }
    }

    /// Consumes a reply. Returns the next frame to send, if any.
    pub fn on_frame(&mut self, frame: &Frame, now: Timestamp) -> Option<Frame> {
        let current = self.outstanding.as_ref()?.0.get("seq").map(str::to_string);
        if self.result.is_some() || frame.get("seq").map(str::to_string) != current {
            return None;
        }
        self.outstanding = None;
        self.misses = 0;
        if frame.is_error() {
            self.fail(GramError::from_frame(frame));
            return None;
        }
        if let Err(e) = self.advance(frame, now) {
            self.fail(e);
            return None;
        }
        match self.phase {
            Phase::Poll { .. } | Phase::Finished => None,
            _ => self.send(now),
        }
    }

    fn fail(&mut self, e: GramError) {
        self.outstanding = None;
        self.phase = Phase::Finished;
        self.result = Some(Err(e));
    }

    fn advance(&mut self, frame: &Frame, now: Timestamp) -> Result<(), GramError> {
        let bad = |m: &str| GramError::Protocol(m.to_string());
        self.phase = match self.phase.clone() {
            Phase::Upload { item, offset } => {
                let len = self.uploads[item].1.len();
                let next = (offset + CHUNK_SIZE).min(len);
                if next < len {
                    Phase::Upload { item, offset: next }
                } else if item + 1 < self.uploads.len() {
                    Phase::Upload { item: item + 1, offset: 0 }
                } else {
                    Phase::Submit
                }
            }
            Phase::Submit => {
                let job = frame.get("job-id").ok_or_else(|| bad("reply without job-id"))?;
                self.job = Some(job.parse().map_err(|_| bad("bad job-id"))?);
                self.observe(frame)?;
                Phase::Poll { next: now + self.config.poll_interval }
            }
            Phase::Poll { .. } => {
                let state = self.observe(frame)?;
                if let Some(ms) = frame.get("run-time") {
                    self.run_time = Span::from_millis(ms.parse().map_err(|_| bad("bad run-time"))?);
                }
                match state {
                    GramState::Done => Phase::Collect,
                    GramState::Failed => {
                        return Err(GramError::Remote {
                            code: frame.get("reason-code").unwrap_or("JobFailed").to_string(),
                            detail: frame.get("reason").unwrap_or("remote job failed").to_string(),
                        })
                    }
                    _ => Phase::Poll { next: now + self.config.poll_interval },
                }
            }
            Phase::Collect => {
                let count: usize = frame
                    .get("file-count")
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| bad("collect reply without file-count"))?;
                self.expected.clear();
                for i in 0..count {
                    let line = frame
                        .get(&format!("file-{i}"))
                        .ok_or_else(|| bad("missing manifest line"))?;
                    let mut parts = line.splitn(3, ' ');
                    let (Some(size), Some(digest), Some(name)) = (parts.next(), parts.next(), parts.next()) else {
                        return Err(bad("bad manifest line"));
                    };
                    self.expected.push(Expected {
                        name: name.to_string(),
                        size: size.parse().map_err(|_| bad("bad size"))?,
                        digest: digest.to_string(),
                    });
                }
                self.fetched.clear();
                self.next_fetch(0)
            }
            Phase::Fetch { file, offset } => {
                let want = &self.expected[file];
                let buf = self.fetched.entry(want.name.clone()).or_default();
                buf.truncate(offset);
                buf.extend_from_slice(&frame.payload);
                if buf.len() < want.size && !frame.payload.is_empty() {
                    Phase::Fetch { file, offset: buf.len() }
                } else {
                    let actual = staging::digest(buf);
                    if actual != want.digest {
                        return Err(GramError::Staging(StagingError::DigestMismatch {
                            name: want.name.clone(),
                            expected: want.digest.clone(),
                            actual,
                        }));
                    }
                    self.next_fetch(file + 1)
                }
            }
            Phase::Release => {
                self.result = Some(Ok(Outcome {
                    job: self.job.ok_or_else(|| bad("no job id"))?,
                    state: self.state.unwrap_or(GramState::Done),
                    run_time: self.run_time,
                    outputs: std::mem::take(&mut self.fetched),
                }));
                Phase::Finished
            }
            Phase::Finished => Phase::Finished,
        };
        Ok(())
    }

    fn next_fetch(&self, file: usize) -> Phase {
        if file < self.expected.len() {
            Phase::Fetch { file, offset: 0 }
        } else {
            Phase::Release
        }
    }

    fn observe(&mut self, frame: &Frame) -> Result<GramState, GramError> {
        let state: GramState = frame
            .get("state")
            .ok_or_else(|| GramError::Protocol("reply without state".into()))?
            .parse()?;
        self.state = Some(state);
        Ok(state)
    }

    fn send(&mut self, now: Timestamp) -> Option<Frame> {
        let rid = self.request.request_id.clone();
        let frame = match &self.phase {
            Phase::Upload { item, offset } => {
                let (name, data) = &self.uploads[*item];
                let end = (offset + CHUNK_SIZE).min(data.len());
                Frame::new(MessageType::XferPut)
                    .with("request-id", &rid)
                    .with("name", name)
                    .with("offset", offset)
                    .with_payload(data[*offset..end].to_vec())
            }
            Phase::Submit => request_frame(&self.request),
            Phase::Poll { .. } => Frame::new(MessageType::JobStatus).with("request-id", &rid),
            Phase::Collect => Frame::new(MessageType::JobCollect).with("request-id", &rid),
            Phase::Fetch { file, offset } => Frame::new(MessageType::XferGet)
                .with("request-id", &rid)
                .with("name", &self.expected[*file].name)
                .with("offset", offset),
            Phase::Release => Frame::new(MessageType::JobCollect)
                .with("request-id", &rid)
                .with("release", "true"),
            Phase::Finished => return None,
        };
        self.seq += 1;
        let frame = attach_chain(frame.with("seq", self.seq), &self.chain);
        self.outstanding = Some((frame.clone(), now));
        Some(frame)
    }
}
