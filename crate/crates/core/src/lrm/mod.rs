//! The per-site batch-queue local resource manager: job queue, slot model,
//! job state machine, priority-then-FIFO scheduler and completed-job history.
//!
//! The LRM is a plain in-memory state machine. File staging, task execution
//! and persistence are driven by the owning site, which feeds it timestamps
//! from its own clock.

pub mod history;
mod render;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::classad::{self, AdKind, ClassAd, Expr};
use crate::jobspec::{SubmitDescription, Universe};
use crate::time::{Span, Timestamp};

pub use history::HistoryRow;
pub use render::{render_history, render_queue, render_status};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct JobId {
    pub cluster: u32,
    pub proc_id: u32,
}

impl JobId {
    pub const fn new(cluster: u32, proc_id: u32) -> Self {
        JobId { cluster, proc_id }
    }
}

impl fmt::Display for JobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.cluster, self.proc_id)
    }
}

impl FromStr for JobId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (c, p) = s.split_once('.').unwrap_or((s, "0"));
        match (c.parse::<u32>(), p.parse::<u32>()) {
            (Ok(c), Ok(p)) if c > 0 => Ok(JobId::new(c, p)),
            _ => Err(format!("bad job id {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum JobState {
    Idle,
    Running,
    Completed,
    Removed,
    Held,
    Suspended,
}

impl JobState {
    pub const ALL: [JobState; 6] = [
        JobState::Idle,
        JobState::Running,
        JobState::Completed,
        JobState::Removed,
        JobState::Held,
        JobState::Suspended,
    ];

    pub fn code(self) -> char {
        match self {
            JobState::Idle => 'I',
            JobState::Running => 'R',
            JobState::Completed => 'C',
            JobState::Removed => 'X',
            JobState::Held => 'H',
            JobState::Suspended => 'S',
        }
    }

    pub fn from_code(c: char) -> Option<JobState> {
        JobState::ALL.into_iter().find(|s| s.code() == c)
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Completed | JobState::Removed)
    }

    /// The legal-transition graph.
    pub fn can_become(self, to: JobState) -> bool {
        use JobState::*;
        matches!(
            (self, to),
            (Idle, Running | Removed | Held)
                | (Running, Completed | Idle | Suspended | Removed)
                | (Suspended, Running | Removed)
                | (Held, Idle | Removed)
        )
    }
}

/// Checks that a job's observed state sequence (starting at creation) is a
/// path in the legal-transition graph. New jobs always start Idle.
pub fn check_trajectory(states: &[JobState]) -> Result<(), (usize, JobState, JobState)> {
    if let Some(&first) = states.first() {
        if first != JobState::Idle {
            return Err((0, first, first));
        }
    }
    for (i, w) in states.windows(2).enumerate() {
        if !w[0].can_become(w[1]) {
            return Err((i + 1, w[0], w[1]));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobRecord {
    pub id: JobId,
    pub owner: String,
    pub submitted: Timestamp,
    /// Accumulated while Running, excluding the current run interval.
    pub run_time: Span,
    pub running_since: Option<Timestamp>,
    pub state: JobState,
    pub priority: i64,
    pub cmd: String,
    pub spec: SubmitDescription,
    pub claimed_slot: Option<String>,
    pub completed_at: Option<Timestamp>,
    pub hold_reason: Option<String>,
    pub exit_code: Option<i32>,
    /// Run time is reported by a remote site instead of accrued locally.
    pub remote_accounting: bool,
}

impl JobRecord {
    pub fn run_time_at(&self, now: Timestamp) -> Span {
        match (self.state, self.running_since) {
            (JobState::Running, Some(since)) if !self.remote_accounting => {
                self.run_time + (now - since).max(Span::ZERO)
            }
            _ => self.run_time,
        }
    }

    /// `hostname -f`: executable basename plus arguments, as condor_q shows it.
    pub fn short_cmd(&self) -> String {
        let base = self
            .spec
            .executable
            .rsplit('/')
            .next()
            .unwrap_or(&self.spec.executable);
        match self.cmd.split_once(' ') {
            Some((_, args)) => format!("{base} {args}"),
            None => base.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotState {
    Unclaimed,
    Claimed,
    Owner,
}

impl fmt::Display for SlotState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SlotState::Unclaimed => "Unclaimed",
            SlotState::Claimed => "Claimed",
            SlotState::Owner => "Owner",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activity {
    Idle,
    Busy,
}

impl fmt::Display for Activity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activity::Idle => "Idle",
            Activity::Busy => "Busy",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotAd {
    pub name: String,
    pub opsys: String,
    pub arch: String,
    pub state: SlotState,
    pub activity: Activity,
    pub load_avg: f64,
    /// MiB.
    pub memory: i64,
    pub activity_since: Timestamp,
}

impl SlotAd {
    pub fn activity_time(&self, now: Timestamp) -> Span {
        now - self.activity_since
    }

    pub fn to_classad(&self) -> ClassAd {
        ClassAd::new(AdKind::Machine)
            .with("Name", self.name.as_str())
            .with("OpSys", self.opsys.as_str())
            .with("Arch", self.arch.as_str())
            .with("State", self.state.to_string())
            .with("Activity", self.activity.to_string())
            .with("LoadAvg", self.load_avg)
            .with("Memory", self.memory)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrmConfig {
    pub host: String,
    pub slots: usize,
    pub opsys: String,
    pub arch: String,
    pub memory: i64,
    /// How long Completed/Removed jobs stay visible in the queue.
    pub linger: Span,
}

impl LrmConfig {
    pub fn new(host: &str, slots: usize) -> Self {
        LrmConfig {
            host: host.to_string(),
            slots,
            opsys: "LINUX".into(),
            arch: "INTEL".into(),
            memory: 1001,
            linger: Span::from_secs(4),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LrmError {
    #[error("unknown job {0}")]
    UnknownJob(JobId),
    #[error("job {id}: illegal transition {from:?} -> {to:?}")]
    IllegalTransition {
        id: JobId,
        from: JobState,
        to: JobState,
    },
    #[error("cannot spool job: {0}")]
    SpoolFailure(String),
    #[error("job {0} is not a grid-universe job")]
    NotGridJob(JobId),
}

impl LrmError {
    pub fn code(&self) -> &'static str {
        match self {
            LrmError::UnknownJob(_) => "UnknownJob",
            LrmError::IllegalTransition { .. } => "IllegalTransition",
            LrmError::SpoolFailure(_) => "SpoolFailure",
            LrmError::NotGridJob(_) => "NotGridJob",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Submitted {
    pub ids: Vec<JobId>,
}

impl Submitted {
    pub fn first(&self) -> JobId {
        self.ids[0]
    }

    /// `1 job(s) submitted to cluster 13.`
    pub fn ack(&self) -> String {
        format!(
            "{} job(s) submitted to cluster {}.",
            self.ids.len(),
            self.first().cluster
        )
    }
}

/// One state change; `from` is `None` when the job was created.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transition {
    pub at: Timestamp,
    pub id: JobId,
    pub from: Option<JobState>,
    pub to: JobState,
}

impl fmt::Display for Transition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let from = self.from.map_or('-', JobState::code);
        write!(f, "{} {}->{}", self.id, from, self.to.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct QueueSummary {
    pub completed: usize,
    pub removed: usize,
    pub idle: usize,
    pub running: usize,
    pub held: usize,
    pub suspended: usize,
}

impl QueueSummary {
    pub fn total(&self) -> usize {
        self.completed + self.removed + self.idle + self.running + self.held + self.suspended
    }

    fn count(&mut self, s: JobState) {
        match s {
            JobState::Completed => self.completed += 1,
            JobState::Removed => self.removed += 1,
            JobState::Idle => self.idle += 1,
            JobState::Running => self.running += 1,
            JobState::Held => self.held += 1,
            JobState::Suspended => self.suspended += 1,
        }
    }
}

impl fmt::Display for QueueSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} jobs; {} completed, {} removed, {} idle, {} running, {} held, {} suspended",
            self.total(),
            self.completed,
            self.removed,
            self.idle,
            self.running,
            self.held,
            self.suspended
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueueRow {
    pub id: JobId,
    pub owner: String,
    pub submitted: Timestamp,
    pub run_time: Span,
    pub state: JobState,
    pub priority: i64,
    pub cmd: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueueSnapshot {
    pub rows: Vec<QueueRow>,
    pub summary: QueueSummary,
}

#[derive(Debug, Clone)]
pub struct Lrm {
    config: LrmConfig,
    slots: Vec<SlotAd>,
    jobs: BTreeMap<JobId, JobRecord>,
    history: Vec<HistoryRow>,
    next_cluster: u32,
    transitions: Vec<Transition>,
}

impl Lrm {
    pub fn new(config: LrmConfig, now: Timestamp) -> Self {
        let slots = (1..=config.slots)
            .map(|i| SlotAd {
                name: format!("slot{i}@{}", config.host),
                opsys: config.opsys.clone(),
                arch: config.arch.clone(),
                state: SlotState::Unclaimed,
                activity: Activity::Idle,
                load_avg: 0.0,
                memory: config.memory,
                activity_since: now,
            })
            .collect();
        Lrm {
            config,
            slots,
            jobs: BTreeMap::new(),
            history: Vec::new(),
            next_cluster: 1,
            transitions: Vec::new(),
        }
    }

    pub fn config(&self) -> &LrmConfig {
        &self.config
    }

    pub fn host(&self) -> &str {
        &self.config.host
    }

    /// Overrides the next cluster number (must not go backwards).
    pub fn set_next_cluster(&mut self, next: u32) {
        self.next_cluster = self.next_cluster.max(next.max(1));
    }

    pub fn next_cluster(&self) -> u32 {
        self.next_cluster
    }

    /// Replaces the slot list; used to model heterogeneous pools.
    pub fn set_slots(&mut self, slots: Vec<SlotAd>) {
        self.slots = slots;
    }

    /// Queues `queue_count` procs of one new cluster, all Idle.
    pub fn submit(
        &mut self,
        sd: &SubmitDescription,
        owner: &str,
        now: Timestamp,
    ) -> Result<Submitted, LrmError> {
        if sd.executable.is_empty() {
            return Err(LrmError::SpoolFailure("empty executable".into()));
        }
        let cluster = self.next_cluster;
        self.next_cluster += 1;
        let ids: Vec<JobId> = (0..sd.queue_count.max(1))
            .map(|p| JobId::new(cluster, p))
            .collect();
        for &id in &ids {
            self.jobs.insert(
                id,
                JobRecord {
                    id,
                    owner: owner.to_string(),
                    submitted: now,
                    run_time: Span::ZERO,
                    running_since: None,
                    state: JobState::Idle,
                    priority: sd.priority,
                    cmd: sd.command_line(),
                    spec: sd.clone(),
                    claimed_slot: None,
                    completed_at: None,
                    hold_reason: None,
                    exit_code: None,
                    remote_accounting: sd.universe == Universe::Globus,
                },
            );
            self.transitions.push(Transition {
                at: now,
                id,
                from: None,
                to: JobState::Idle,
            });
        }
        Ok(Submitted { ids })
    }

    pub fn job(&self, id: JobId) -> Option<&JobRecord> {
        self.jobs.get(&id)
    }

    pub fn jobs(&self) -> impl Iterator<Item = &JobRecord> {
        self.jobs.values()
    }

    pub fn slots(&self) -> &[SlotAd] {
        &self.slots
    }

    /// Ad for a queued job, as used by matchmaking.
    pub fn job_ad(job: &JobRecord) -> ClassAd {
        let req = job
            .spec
            .requirements
            .as_deref()
            .and_then(|r| Expr::parse(r).ok())
            .unwrap_or(Expr::Bool(true));
        let mut ad = ClassAd::new(AdKind::Job)
            .with("Owner", job.owner.as_str())
            .with("Cmd", job.spec.executable.as_str())
            .with("Requirements", req)
            .with("ClusterId", job.id.cluster as i64)
            .with("ProcId", job.id.proc_id as i64)
            .with("JobPrio", job.priority);
        if let Some(rank) = job.spec.rank.as_deref().and_then(|r| Expr::parse(r).ok()) {
            ad.set("Rank", rank);
        }
        ad
    }

    /// Idle local jobs in scheduling order: priority descending, then
    /// submission time, then id.
    fn idle_order(&self) -> Vec<&JobRecord> {
        let mut idle: Vec<&JobRecord> = self
            .jobs
            .values()
            .filter(|j| j.state == JobState::Idle && j.spec.universe == Universe::Vanilla)
            .collect();
        idle.sort_by(|a, b| {
            b.priority
                .cmp(&a.priority)
                .then(a.submitted.cmp(&b.submitted))
                .then(a.id.cmp(&b.id))
        });
        idle
    }

    /// One negotiation cycle. Each Idle job takes the best Unclaimed slot
    /// that matches it; all assignments are then applied together.
    pub fn schedule_tick(&mut self, now: Timestamp) -> Vec<(JobId, String)> {
        let mut ads: Vec<ClassAd> = self.slots.iter().map(SlotAd::to_classad).collect();
        let mut plan = Vec::new();
        for job in self.idle_order() {
            let ad = Self::job_ad(job);
            if let Some(name) = classad::matchmake(&ad, &ads).into_iter().next() {
                if let Some(slot_ad) = ads.iter_mut().find(|a| a.name() == Some(name.as_str())) {
                    slot_ad.set("State", "Claimed");
                }
                plan.push((job.id, name));
            }
        }
        for (id, slot) in &plan {
            self.start_on_slot(*id, slot, now)
                .expect("planned assignment is valid");
        }
        plan
    }

    fn start_on_slot(&mut self, id: JobId, slot_name: &str, now: Timestamp) -> Result<(), LrmError> {
        self.transition(id, JobState::Running, now)?;
        let job = self.jobs.get_mut(&id).expect("job exists");
        job.claimed_slot = Some(slot_name.to_string());
        if let Some(slot) = self.slots.iter_mut().find(|s| s.name == slot_name) {
            slot.state = SlotState::Claimed;
            slot.activity = Activity::Busy;
            slot.load_avg = 1.0;
            slot.activity_since = now;
        }
        Ok(())
    }

    fn release_slot(&mut self, id: JobId, now: Timestamp) {
        let Some(job) = self.jobs.get_mut(&id) else {
            return;
        };
        if let Some(name) = job.claimed_slot.take() {
            if let Some(slot) = self.slots.iter_mut().find(|s| s.name == name) {
                slot.state = SlotState::Unclaimed;
                slot.activity = Activity::Idle;
                slot.load_avg = 0.0;
                slot.activity_since = now;
            }
        }
    }

    /// Restricts an operation to jobs currently in `from`.
    fn require(&self, id: JobId, from: JobState, to: JobState) -> Result<(), LrmError> {
        let state = self.jobs.get(&id).ok_or(LrmError::UnknownJob(id))?.state;
        if state == from {
            Ok(())
        } else {
            Err(LrmError::IllegalTransition { id, from: state, to })
        }
    }

    fn transition(&mut self, id: JobId, to: JobState, now: Timestamp) -> Result<(), LrmError> {
        let job = self.jobs.get_mut(&id).ok_or(LrmError::UnknownJob(id))?;
        let from = job.state;
        if !from.can_become(to) {
            return Err(LrmError::IllegalTransition { id, from, to });
        }
        if from == JobState::Running {
            if let Some(since) = job.running_since.take() {
                if !job.remote_accounting {
                    job.run_time = job.run_time + (now - since).max(Span::ZERO);
                }
            }
        }
        if to == JobState::Running {
            job.running_since = Some(now);
        }
        if to.is_terminal() {
            job.completed_at = Some(now);
        }
        if to != JobState::Held {
            job.hold_reason = None;
        }
        job.state = to;
        self.transitions.push(Transition {
            at: now,
            id,
            from: Some(from),
            to,
        });
        Ok(())
    }

    /// Running → Completed; frees the slot. The record lingers in the queue
    /// before [`Lrm::retire`] moves it to history.
    pub fn complete(&mut self, id: JobId, now: Timestamp, exit_code: i32) -> Result<(), LrmError> {
        self.transition(id, JobState::Completed, now)?;
        self.release_slot(id, now);
        if let Some(job) = self.jobs.get_mut(&id) {
            job.exit_code = Some(exit_code);
        }
        Ok(())
    }

    pub fn remove(&mut self, id: JobId, now: Timestamp) -> Result<(), LrmError> {
        self.transition(id, JobState::Removed, now)?;
        self.release_slot(id, now);
        Ok(())
    }

    /// Holds a job. A Running job is first returned to Idle (vacated), since
    /// Running → Held is not a legal edge.
    pub fn hold(&mut self, id: JobId, reason: &str, now: Timestamp) -> Result<(), LrmError> {
        let state = self.jobs.get(&id).ok_or(LrmError::UnknownJob(id))?.state;
        if state == JobState::Running {
            self.transition(id, JobState::Idle, now)?;
            self.release_slot(id, now);
        }
        self.transition(id, JobState::Held, now)?;
        self.jobs.get_mut(&id).expect("job exists").hold_reason = Some(reason.to_string());
        Ok(())
    }

    /// Held → Idle.
    pub fn release(&mut self, id: JobId, now: Timestamp) -> Result<(), LrmError> {
        self.require(id, JobState::Held, JobState::Idle)?;
        self.transition(id, JobState::Idle, now)
    }

    /// Running → Idle, giving the slot back so the job can be rematched.
    pub fn vacate(&mut self, id: JobId, now: Timestamp) -> Result<(), LrmError> {
        self.require(id, JobState::Running, JobState::Idle)?;
        self.transition(id, JobState::Idle, now)?;
        self.release_slot(id, now);
        Ok(())
    }

    pub fn suspend(&mut self, id: JobId, now: Timestamp) -> Result<(), LrmError> {
        self.transition(id, JobState::Suspended, now)?;
        if let Some(slot_name) = self.jobs[&id].claimed_slot.clone() {
            if let Some(slot) = self.slots.iter_mut().find(|s| s.name == slot_name) {
                slot.activity = Activity::Idle;
                slot.load_avg = 0.0;
                slot.activity_since = now;
            }
        }
        Ok(())
    }

    pub fn resume(&mut self, id: JobId, now: Timestamp) -> Result<(), LrmError> {
        self.require(id, JobState::Suspended, JobState::Running)?;
        self.transition(id, JobState::Running, now)?;
        if let Some(slot_name) = self.jobs[&id].claimed_slot.clone() {
            if let Some(slot) = self.slots.iter_mut().find(|s| s.name == slot_name) {
                slot.activity = Activity::Busy;
                slot.load_avg = 1.0;
                slot.activity_since = now;
            }
        }
        Ok(())
    }

    /// Marks a grid-universe job Running on a remote resource. `label`
    /// names the remote claim and stands in for a local slot.
    pub fn start_remote(&mut self, id: JobId, label: &str, now: Timestamp) -> Result<(), LrmError> {
        let job = self.jobs.get(&id).ok_or(LrmError::UnknownJob(id))?;
        if job.spec.universe != Universe::Globus {
            return Err(LrmError::NotGridJob(id));
        }
        self.require(id, JobState::Idle, JobState::Running)?;
        self.transition(id, JobState::Running, now)?;
        self.jobs.get_mut(&id).expect("job exists").claimed_slot = Some(label.to_string());
        Ok(())
    }

    /// Records remotely reported run time for a grid-universe job.
    pub fn set_remote_run_time(&mut self, id: JobId, run_time: Span) -> Result<(), LrmError> {
        let job = self.jobs.get_mut(&id).ok_or(LrmError::UnknownJob(id))?;
        if !job.remote_accounting {
            return Err(LrmError::NotGridJob(id));
        }
        job.run_time = job.run_time.max(run_time);
        Ok(())
    }

    fn lingered(&self, job: &JobRecord, now: Timestamp) -> bool {
        job.state.is_terminal()
            && job
                .completed_at
                .is_some_and(|t| now >= t + self.config.linger)
    }

    /// Moves terminal jobs whose linger period has passed into history and
    /// returns the new history rows.
    pub fn retire(&mut self, now: Timestamp) -> Vec<HistoryRow> {
        let done: Vec<JobId> = self
            .jobs
            .values()
            .filter(|j| self.lingered(j, now))
            .map(|j| j.id)
            .collect();
        let mut rows = Vec::new();
        for id in done {
            let job = self.jobs.remove(&id).expect("job exists");
            let row = HistoryRow {
                id,
                owner: job.owner.clone(),
                submitted: job.submitted,
                run_time: job.run_time,
                state: job.state,
                completed: job.completed_at.unwrap_or(now),
                cmd: job.cmd.clone(),
            };
            self.history.push(row.clone());
            rows.push(row);
        }
        rows
    }

    pub fn query_queue(&self, now: Timestamp) -> QueueSnapshot {
        let mut summary = QueueSummary::default();
        let rows = self
            .jobs
            .values()
            .filter(|j| !self.lingered(j, now))
            .map(|j| {
                summary.count(j.state);
                QueueRow {
                    id: j.id,
                    owner: j.owner.clone(),
                    submitted: j.submitted,
                    run_time: j.run_time_at(now),
                    state: j.state,
                    priority: j.priority,
                    cmd: j.short_cmd(),
                }
            })
            .collect();
        QueueSnapshot { rows, summary }
    }

    pub fn query_status(&self) -> Vec<SlotAd> {
        self.slots.clone()
    }

    /// Completed and removed jobs, newest completion first.
    pub fn query_history(&self) -> Vec<HistoryRow> {
        let mut rows = self.history.clone();
        history::sort_newest_first(&mut rows);
        rows
    }

    /// The history row of a retired job.
    pub fn history_row(&self, id: JobId) -> Option<&HistoryRow> {
        self.history.iter().find(|r| r.id == id)
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn drain_transitions(&mut self) -> Vec<Transition> {
        std::mem::take(&mut self.transitions)
    }
}

#[cfg(test)]
mod tests;
