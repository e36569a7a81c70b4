//! Deterministic multi-site harness: sites with their own clocks, an
//! in-process message queue between daemons, fault injection and scripted
//! scenarios.
//!
//! Events run in (time, sender, sequence) order. Each site ticks every
//! 500 ms of reference time and negotiates on whole seconds.

pub mod clock;
pub mod config;
pub mod fault;
pub mod scenario;
pub mod site;
pub mod task;

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::gram::{ClientSession, GatekeeperConfig, Gatekeeper, GramError, LrmAdapter, Outcome, SessionConfig};
use crate::gsi::{
    self, ca_name_for_host, install_anchor, load_trust_dir, user_dn, CaStore, GridMap, GsiError,
    ProxyCredential, ProxyInfo,
};
use crate::gridq::GridqError;
use crate::jobspec::{
    parse_submit_file, ContactString, GramJobRequest, SubmitError, Universe, DIALECT_REVISION,
};
use crate::lrm::{history, JobId, JobState, Lrm, LrmConfig, LrmError, Submitted};
use crate::staging::{append_log_event, LogEvent, SandboxStore};
use crate::time::{Span, Timestamp};
use crate::wire::{Frame, MessageType};

pub use clock::VirtualClock;
pub use config::{ConfigError, Roles, SiteSpec, TestbedConfig, UserSpec};
pub use fault::{ActiveFault, FaultKind, FaultSpec};
pub use scenario::{Scenario, Step};
pub use site::{ExecContext, Site, SiteFs, CA_DIR, HISTORY_FILE, SANDBOX_DIR, TRUST_DIR};
pub use task::{TaskEnv, TaskOutput, TaskProgram, TASK_MAGIC};

use site::SiteBackend;

pub const TICK: Span = Span::from_millis(500);
pub const GRIDMAP_FILE: &str = "/etc/grid-security/grid-mapfile";
/// Lifetime of user certificates issued by the testbed CA.
pub const USER_CERT_LIFETIME: Span = Span::from_hours(365 * 24);

#[derive(Debug, Error)]
pub enum TestbedError {
    #[error("duplicate site name {0:?}")]
    DuplicateSiteName(String),
    #[error("exactly one site must hold the ca role, found {0}")]
    NoCaRole(usize),
    #[error("site {0} has no slots")]
    NoSlots(String),
    #[error("unknown target {0:?}")]
    UnknownTarget(String),
    #[error("step {step}: {msg}")]
    ScriptError { step: usize, msg: String },
    #[error("{0}: no such file")]
    NoSuchFile(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Gsi(#[from] GsiError),
    #[error(transparent)]
    Submit(#[from] SubmitError),
    #[error(transparent)]
    Lrm(#[from] LrmError),
    #[error(transparent)]
    Gridq(#[from] GridqError),
    #[error(transparent)]
    Gram(#[from] GramError),
}

impl TestbedError {
    pub fn code(&self) -> &str {
        match self {
            TestbedError::DuplicateSiteName(_) => "DuplicateSiteName",
            TestbedError::NoCaRole(_) => "NoCaRole",
            TestbedError::NoSlots(_) => "NoSlots",
            TestbedError::UnknownTarget(_) => "UnknownTarget",
            TestbedError::ScriptError { .. } => "ScriptError",
            TestbedError::NoSuchFile(_) => "NoSuchFile",
            TestbedError::Io(_) => "Io",
            TestbedError::Config(_) => "ConfigError",
            TestbedError::Gsi(e) => e.code(),
            TestbedError::Submit(e) => e.code(),
            TestbedError::Lrm(e) => e.code(),
            TestbedError::Gridq(e) => e.code(),
            TestbedError::Gram(e) => e.code(),
        }
    }
}

impl From<std::io::Error> for TestbedError {
    fn from(e: std::io::Error) -> Self {
        TestbedError::Io(e.to_string())
    }
}

/// Which daemon a message is addressed to on its site.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Endpoint {
    Gatekeeper,
    GridManager,
    JobRun(u64),
}

#[derive(Debug, Clone)]
struct Envelope {
    from: String,
    to: String,
    dest: Endpoint,
    reply: Endpoint,
    request_id: String,
    frame: Frame,
}

#[derive(Debug, Clone)]
enum EventKind {
    Tick(String),
    Deliver(Box<Envelope>),
    TaskDone { site: String, job: JobId },
}

#[derive(Debug, Clone)]
struct Event {
    at: Timestamp,
    sender: String,
    seq: u64,
    kind: EventKind,
}

impl Event {
    fn key(&self) -> (Timestamp, &str, u64) {
        (self.at, &self.sender, self.seq)
    }
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

#[derive(Debug)]
struct JobRun {
    site: String,
    session: ClientSession,
}

/// Handle to a synchronous remote run started with [`Testbed::start_job_run`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunHandle(u64);

/// What proxy creation reports.
#[derive(Debug, Clone)]
pub struct ProxyReport {
    pub cert_file: String,
    pub key_file: String,
    pub trust_dir: String,
    pub output_file: String,
    pub identity: String,
    pub proxy: ProxyCredential,
}

pub struct Testbed {
    config: TestbedConfig,
    clock: VirtualClock,
    sites: BTreeMap<String, Site>,
    hosts: BTreeMap<String, String>,
    ca_site: String,
    queue: BinaryHeap<Reverse<Event>>,
    seq: u64,
    rng: ChaCha8Rng,
    faults: Vec<ActiveFault>,
    runs: BTreeMap<u64, JobRun>,
    next_run: u64,
    trace: Vec<String>,
    trajectories: BTreeMap<(String, JobId), Vec<JobState>>,
    run_dir: PathBuf,
}

impl Testbed {
    /// Builds every site under `run_dir`: queues and slots, gatekeepers,
    /// the CA, trust anchors on every node, user credentials and gridmaps.
    pub fn build(config: TestbedConfig, run_dir: &Path) -> Result<Testbed, TestbedError> {
        let mut names = BTreeMap::new();
        for s in &config.sites {
            if names.insert(s.name.clone(), ()).is_some() {
                return Err(TestbedError::DuplicateSiteName(s.name.clone()));
            }
            if s.slots == 0 {
                return Err(TestbedError::NoSlots(s.name.clone()));
            }
        }
        let cas: Vec<&SiteSpec> = config.sites.iter().filter(|s| s.roles.ca).collect();
        if cas.len() != 1 {
            return Err(TestbedError::NoCaRole(cas.len()));
        }
        let ca_spec = cas[0].clone();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut clock = VirtualClock::new(config.epoch);
        // Credentials predate the run so nodes with slow clocks can use them.
        let issued = config.epoch - Span::from_hours(24);

        let ca_fs = SiteFs::new(run_dir.join("sites").join(&ca_spec.name).join("fs"));
        let ca = CaStore::new(ca_fs.real(CA_DIR)).init(&ca_name_for_host(&ca_spec.host), issued, &mut rng)?;

        let mut gridmap = GridMap::new();
        let mut user_creds = Vec::new();
        for u in &config.users {
            let dn = user_dn(&ca.name, &u.common_name);
            let (cert, key) = ca.issue_cert(&dn, USER_CERT_LIFETIME, &u.passphrase, issued, &mut rng)?;
            gridmap.insert(&dn, &config.account_for(&u.name));
            user_creds.push((u.name.clone(), cert, key));
        }

        let mut sites = BTreeMap::new();
        let mut hosts = BTreeMap::new();
        for spec in &config.sites {
            clock.set_offset(&spec.name, spec.skew);
            let fs = SiteFs::new(run_dir.join("sites").join(&spec.name).join("fs"));
            for p in TaskProgram::ALL {
                fs.write(p.path(), p.script().as_bytes())?;
            }
            install_anchor(&fs.real(TRUST_DIR), &ca.root)?;
            fs.write(GRIDMAP_FILE, gridmap.render().as_bytes())?;
            let local = clock.read(&spec.name);
            let mut lrm = Lrm::new(LrmConfig::new(&spec.host, spec.slots), local);
            lrm.set_next_cluster(spec.first_cluster);
            let gatekeeper = spec.roles.gatekeeper.then(|| {
                let mut gc = GatekeeperConfig::new(&spec.host);
                gc.max_skew = config.max_skew;
                gc.gridmap = gridmap.clone();
                gc.anchors = vec![ca.root.clone()];
                let mut gk = Gatekeeper::new(gc, SandboxStore::new(fs.real(SANDBOX_DIR)));
                gk.register(spec.dialect.jobmanager(), LrmAdapter::new(spec.dialect));
                gk
            });
            let site = Site::new(
                spec.clone(),
                fs,
                lrm,
                gatekeeper,
                run_dir.join("logs").join(&spec.name),
            );
            for (name, cert, key) in &user_creds {
                site.credentials(name).save_user(cert, key)?;
            }
            let short = spec.host.split('.').next().unwrap_or(&spec.host);
            for alias in [spec.name.as_str(), spec.host.as_str(), short] {
                hosts.entry(alias.to_string()).or_insert_with(|| spec.name.clone());
            }
            sites.insert(spec.name.clone(), site);
        }

        let mut tb = Testbed {
            clock,
            sites,
            hosts,
            ca_site: ca_spec.name.clone(),
            queue: BinaryHeap::new(),
            seq: 0,
            rng,
            faults: Vec::new(),
            runs: BTreeMap::new(),
            next_run: 0,
            trace: Vec::new(),
            trajectories: BTreeMap::new(),
            run_dir: run_dir.to_path_buf(),
            config,
        };
        let names: Vec<String> = tb.sites.keys().cloned().collect();
        for name in names {
            let at = tb.clock.now() + TICK;
            tb.push(at, &name, EventKind::Tick(name.clone()));
        }
        Ok(tb)
    }

    pub fn config(&self) -> &TestbedConfig {
        &self.config
    }

    pub fn run_dir(&self) -> &Path {
        &self.run_dir
    }

    pub fn clock(&self) -> &VirtualClock {
        &self.clock
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    pub fn ca_site(&self) -> &str {
        &self.ca_site
    }

    pub fn sites(&self) -> impl Iterator<Item = &Site> {
        self.sites.values()
    }

    /// Site by name or host name.
    pub fn site(&self, name: &str) -> Result<&Site, TestbedError> {
        let key = self.hosts.get(name).map(String::as_str).unwrap_or(name);
        self.sites
            .get(key)
            .ok_or_else(|| TestbedError::UnknownTarget(name.to_string()))
    }

    fn site_name(&self, name: &str) -> Result<String, TestbedError> {
        self.site(name).map(|s| s.name().to_string())
    }

    /// The site's own clock.
    pub fn local_now(&self, site: &str) -> Timestamp {
        self.clock.read(site)
    }

    /// Site that answers for a host name, if any.
    pub fn resolve_host(&self, host: &str) -> Option<&str> {
        self.hosts.get(host).map(String::as_str)
    }

    /// Every line recorded so far: deliveries, drops, task starts and ends,
    /// queue transitions and faults.
    pub fn trace(&self) -> &[String] {
        &self.trace
    }

    /// State sequence of every job seen on every site, creation first.
    pub fn trajectories(&self) -> &BTreeMap<(String, JobId), Vec<JobState>> {
        &self.trajectories
    }

    fn stamp(&self) -> String {
        let ms = self.clock.elapsed().millis();
        format!("+{}.{:03}", ms / 1000, ms % 1000)
    }

    fn note(&mut self, line: String) {
        let s = format!("{} {line}", self.stamp());
        self.trace.push(s);
    }

    fn push(&mut self, at: Timestamp, sender: &str, kind: EventKind) {
        self.seq += 1;
        self.queue.push(Reverse(Event {
            at,
            sender: sender.to_string(),
            seq: self.seq,
            kind,
        }));
    }

    // ---- time ----

    /// Runs every event due within `dt` and returns the trace lines added.
    pub fn advance(&mut self, dt: Span) -> Vec<String> {
        let t = self.clock.now() + dt.max(Span::ZERO);
        self.advance_to(t)
    }

    pub fn advance_to(&mut self, t: Timestamp) -> Vec<String> {
        let start = self.trace.len();
        while self.queue.peek().is_some_and(|Reverse(e)| e.at <= t) {
            self.step();
        }
        self.clock.advance_to(t);
        self.expire_faults();
        self.trace[start..].to_vec()
    }

    /// Runs the next event, moving time to it.
    fn step(&mut self) {
        let Some(Reverse(ev)) = self.queue.pop() else {
            return;
        };
        self.clock.advance_to(ev.at);
        self.expire_faults();
        match ev.kind {
            EventKind::Tick(site) => self.on_tick(&site),
            EventKind::Deliver(env) => self.deliver(*env),
            EventKind::TaskDone { site, job } => self.task_done(&site, job),
        }
    }

    fn on_tick(&mut self, name: &str) {
        let local = self.clock.read(name);
        let on_second = self.clock.elapsed().millis() % 1000 == 0;
        let mut starts = Vec::new();
        let outgoing = {
            let site = self.sites.get_mut(name).expect("ticking site exists");
            let rows = site.lrm.retire(local);
            if !rows.is_empty() {
                let _ = history::append(&site.fs.real(HISTORY_FILE), &rows);
                for r in &rows {
                    site.contexts.remove(&r.id);
                    site.log("lrm", local, &format!("{} moved to history", r.id));
                }
            }
            if on_second && site.spec.roles.lrm {
                starts = site.lrm.schedule_tick(local);
            }
            site.grid.tick(&mut site.lrm, local)
        };
        for (id, slot) in starts {
            self.start_task(name, id, &slot);
        }
        for o in outgoing {
            self.send_to_host(name, Endpoint::GridManager, &o.contact, &o.request_id, o.frame);
        }
        let handles: Vec<u64> = self
            .runs
            .iter()
            .filter(|(_, r)| r.site == name && !r.session.is_finished())
            .map(|(h, _)| *h)
            .collect();
        for h in handles {
            let run = self.runs.get_mut(&h).expect("listed");
            if let Some(frame) = run.session.on_tick(local) {
                let contact = run.session.contact().to_string();
                let rid = run.session.request_id().to_string();
                self.send_to_host(name, Endpoint::JobRun(h), &contact, &rid, frame);
            }
        }
        self.record_transitions(name);
        let next = self.clock.now() + TICK;
        self.push(next, name, EventKind::Tick(name.to_string()));
    }

    fn record_transitions(&mut self, name: &str) {
        let Some(site) = self.sites.get_mut(name) else {
            return;
        };
        let local = self.clock.read(name);
        let ts = site.lrm.drain_transitions();
        for t in &ts {
            site.log("lrm", local, &t.to_string());
        }
        for t in ts {
            self.trajectories
                .entry((name.to_string(), t.id))
                .or_default()
                .push(t.to);
            self.note(format!("{name} {t}"));
        }
    }

    // ---- execution ----

    fn start_task(&mut self, name: &str, id: JobId, slot: &str) {
        let local = self.clock.read(name);
        let duration = self.config.task_duration;
        let site = self.sites.get_mut(name).expect("site exists");
        let Some(job) = site.lrm.job(id) else {
            return;
        };
        let (exe, args, owner) = (job.spec.executable.clone(), job.spec.arguments.clone(), job.owner.clone());
        let ctx = site
            .contexts
            .entry(id)
            .or_insert_with(|| ExecContext::for_spec(&job.spec, &Site::home(&owner)))
            .clone();
        let path = match &ctx.staged {
            Some(staged) if site.fs.exists(&ctx.path(staged)) => ctx.path(staged),
            _ => ctx.path(&exe),
        };
        let out = match site.fs.read(&path) {
            Ok(bytes) => match TaskProgram::from_file(&bytes) {
                Some(p) => p.run(&TaskEnv {
                    host: &site.spec.host,
                    now: local,
                    args: &args,
                    default_duration: duration,
                }),
                None => failed(format!("{exe}: cannot execute binary file\n"), 126),
            },
            Err(_) => failed(format!("{exe}: No such file or directory\n"), 127),
        };
        if let Some(log) = &ctx.log {
            let host = site.spec.host.clone();
            let _ = append_log_event(&site.fs.real(&ctx.path(log)), id, local, &LogEvent::Executing { host });
        }
        site.log("lrm", local, &format!("{id} started on {slot}: {exe}"));
        let done = self.clock.now() + out.duration;
        site.running.insert(id, out);
        self.note(format!("{name} start {id} {exe}"));
        self.push(done, name, EventKind::TaskDone { site: name.to_string(), job: id });
    }

    fn task_done(&mut self, name: &str, id: JobId) {
        let local = self.clock.read(name);
        let site = self.sites.get_mut(name).expect("site exists");
        let Some(out) = site.running.remove(&id) else {
            return;
        };
        if site.lrm.job(id).map(|j| j.state) != Some(JobState::Running) {
            return;
        }
        if let Some(ctx) = site.contexts.get(&id).cloned() {
            for (file, data) in [(&ctx.stdout, &out.stdout), (&ctx.stderr, &out.stderr)] {
                if let Some(f) = file {
                    let _ = site.fs.write(&ctx.path(f), data);
                }
            }
            if let Some(log) = &ctx.log {
                let ev = LogEvent::Terminated { exit_code: out.exit_code };
                let _ = append_log_event(&site.fs.real(&ctx.path(log)), id, local, &ev);
            }
        }
        let _ = site.lrm.complete(id, local, out.exit_code);
        site.log("lrm", local, &format!("{id} exited with status {}", out.exit_code));
        self.note(format!("{name} done {id} exit {}", out.exit_code));
        self.record_transitions(name);
    }

    // ---- transport ----

    fn fault_on(&self, kind: FaultKind, site: &str) -> bool {
        self.faults
            .iter()
            .any(|f| f.spec.kind == kind && f.spec.target == site)
    }

    fn send_to_host(&mut self, from: &str, reply: Endpoint, host: &str, rid: &str, frame: Frame) {
        let Some(to) = self.hosts.get(host).cloned() else {
            self.note(format!("{from} -> {host} {} unresolvable", frame.kind));
            return;
        };
        self.post(from, &to, Endpoint::Gatekeeper, reply, rid, frame);
    }

    fn post(&mut self, from: &str, to: &str, dest: Endpoint, reply: Endpoint, rid: &str, mut frame: Frame) {
        let kind = frame.kind;
        if self.fault_on(FaultKind::Partition, from) || self.fault_on(FaultKind::Partition, to) {
            self.note(format!("{from} -> {to} {kind} dropped"));
            return;
        }
        let is_transfer = matches!(kind, MessageType::XferPut | MessageType::XferGet);
        if is_transfer
            && !frame.payload.is_empty()
            && (self.fault_on(FaultKind::CorruptTransfer, from) || self.fault_on(FaultKind::CorruptTransfer, to))
        {
            frame.payload[0] ^= 0x01;
            self.note(format!("{from} -> {to} {kind} corrupted"));
        }
        let at = self.clock.now() + self.config.latency_between(from, to);
        let env = Envelope {
            from: from.to_string(),
            to: to.to_string(),
            dest,
            reply,
            request_id: rid.to_string(),
            frame,
        };
        self.push(at, from, EventKind::Deliver(Box::new(env)));
    }

    fn deliver(&mut self, env: Envelope) {
        let label = match env.frame.get("seq") {
            Some(seq) => format!("{} -> {} {} {} seq {seq}", env.from, env.to, env.frame.kind, env.request_id),
            None => format!("{} -> {} {} {}", env.from, env.to, env.frame.kind, env.request_id),
        };
        self.note(format!("deliver {label}"));
        let local = self.clock.read(&env.to);
        match env.dest {
            Endpoint::Gatekeeper => {
                let reply = {
                    let site = self.sites.get_mut(&env.to).expect("routed to a site");
                    let Some(gk) = site.gatekeeper.as_mut() else {
                        return;
                    };
                    let mut backend = SiteBackend {
                        lrm: &mut site.lrm,
                        contexts: &mut site.contexts,
                        now: local,
                    };
                    let reply = gk.handle(&env.frame, &mut backend, local);
                    for line in gk.drain_log() {
                        site.log("gatekeeper", local, &line);
                    }
                    reply
                };
                self.record_transitions(&env.to);
                if let Some(r) = reply {
                    self.post(&env.to, &env.from, env.reply, Endpoint::Gatekeeper, &env.request_id, r);
                }
            }
            Endpoint::GridManager => {
                let outgoing = {
                    let site = self.sites.get_mut(&env.to).expect("routed to a site");
                    site.grid.on_reply(&mut site.lrm, &env.request_id, &env.frame, local)
                };
                for o in outgoing {
                    self.send_to_host(&env.to, Endpoint::GridManager, &o.contact, &o.request_id, o.frame);
                }
                self.record_transitions(&env.to);
            }
            Endpoint::JobRun(h) => {
                let Some(run) = self.runs.get_mut(&h) else {
                    return;
                };
                if let Some(next) = run.session.on_frame(&env.frame, local) {
                    let contact = run.session.contact().to_string();
                    let rid = run.session.request_id().to_string();
                    self.send_to_host(&env.to, Endpoint::JobRun(h), &contact, &rid, next);
                }
            }
        }
    }

    // ---- faults ----

    pub fn active_faults(&self) -> &[ActiveFault] {
        &self.faults
    }

    /// Activates a fault, replacing any of the same kind on the same node.
    pub fn inject_fault(&mut self, spec: FaultSpec) -> Result<(), TestbedError> {
        let target = self.site_name(&spec.target)?;
        let spec = FaultSpec { target: target.clone(), ..spec };
        self.clear_fault(spec.kind, &target)?;
        let site = self.sites.get_mut(&target).expect("resolved");
        match spec.kind {
            FaultKind::ClockSkew => {
                let offset = site.spec.skew + spec.skew;
                self.clock.set_offset(&target, offset);
            }
            FaultKind::KillAdapter | FaultKind::AdapterVersionMismatch => {
                let gk = site
                    .gatekeeper
                    .as_mut()
                    .ok_or_else(|| TestbedError::UnknownTarget(format!("{target} has no gatekeeper")))?;
                let names: Vec<String> = gk.adapters().map(|(n, _)| n.to_string()).collect();
                for n in names {
                    let a = gk.adapter_mut(&n).expect("listed");
                    if spec.kind == FaultKind::KillAdapter {
                        a.alive = false;
                    } else {
                        a.revision = DIALECT_REVISION + 1;
                    }
                }
            }
            FaultKind::DropProxy | FaultKind::CorruptTransfer | FaultKind::Partition => {}
        }
        let now = self.clock.now();
        let active = ActiveFault {
            until: spec.duration.map(|d| now + d),
            spec,
            since: now,
        };
        self.note(format!("fault {active}"));
        self.faults.push(active);
        Ok(())
    }

    /// Reverts a fault. Returns whether it was active.
    pub fn clear_fault(&mut self, kind: FaultKind, target: &str) -> Result<bool, TestbedError> {
        let target = self.site_name(target)?;
        let Some(pos) = self
            .faults
            .iter()
            .position(|f| f.spec.kind == kind && f.spec.target == target)
        else {
            return Ok(false);
        };
        self.faults.remove(pos);
        let site = self.sites.get_mut(&target).expect("resolved");
        match kind {
            FaultKind::ClockSkew => {
                let skew = site.spec.skew;
                self.clock.set_offset(&target, skew);
            }
            FaultKind::KillAdapter | FaultKind::AdapterVersionMismatch => {
                if let Some(gk) = site.gatekeeper.as_mut() {
                    let names: Vec<String> = gk.adapters().map(|(n, _)| n.to_string()).collect();
                    for n in names {
                        let a = gk.adapter_mut(&n).expect("listed");
                        a.alive = true;
                        a.revision = DIALECT_REVISION;
                    }
                }
            }
            FaultKind::DropProxy | FaultKind::CorruptTransfer | FaultKind::Partition => {}
        }
        self.note(format!("clear {kind} {target}"));
        Ok(true)
    }

    fn expire_faults(&mut self) {
        let now = self.clock.now();
        let due: Vec<(FaultKind, String)> = self
            .faults
            .iter()
            .filter(|f| f.until.is_some_and(|u| u <= now))
            .map(|f| (f.spec.kind, f.spec.target.clone()))
            .collect();
        for (kind, target) in due {
            let _ = self.clear_fault(kind, &target);
        }
    }

    // ---- user operations ----

    /// Writes a file as `user`; relative paths start at the user's home.
    pub fn write_file(&mut self, site: &str, user: &str, path: &str, data: &[u8]) -> Result<String, TestbedError> {
        let site = self.site(site)?;
        let vpath = SiteFs::resolve(&Site::home(user), path);
        site.fs.write(&vpath, data)?;
        Ok(vpath)
    }

    pub fn read_file(&self, site: &str, user: &str, path: &str) -> Result<Vec<u8>, TestbedError> {
        let site = self.site(site)?;
        let vpath = SiteFs::resolve(&Site::home(user), path);
        site.fs.read(&vpath).map_err(|_| TestbedError::NoSuchFile(vpath))
    }

    /// Loads the user's proxy as the site sees it, with node paths in errors.
    pub fn load_proxy(&self, site: &str, user: &str) -> Result<ProxyCredential, GsiError> {
        let s = self.site(site).map_err(|e| GsiError::Io(e.to_string()))?;
        let vpath = format!("{}/proxy.pem", Site::cred_vdir(user));
        if self.fault_on(FaultKind::DropProxy, s.name()) {
            return Err(GsiError::NoProxyFound(vpath));
        }
        s.credentials(user).load_proxy().map_err(|e| match e {
            GsiError::NoProxyFound(_) => GsiError::NoProxyFound(vpath),
            other => other,
        })
    }

    /// Submits a submit file on behalf of `user`, from the user's home.
    pub fn submit(&mut self, site: &str, user: &str, path: &str) -> Result<Submitted, TestbedError> {
        let name = self.site_name(site)?;
        let cwd = Site::home(user);
        let text = self.read_file(&name, user, path)?;
        let sd = parse_submit_file(&String::from_utf8_lossy(&text))?;
        let local = self.clock.read(&name);
        let submitted = match sd.universe {
            Universe::Globus => {
                let proxy = self.load_proxy(&name, user);
                let site = self.sites.get_mut(&name).expect("resolved");
                let iwd = site.fs.real(&cwd);
                let fs = site.fs.clone();
                let reader = |src: &str| fs.read(&SiteFs::resolve(&cwd, src));
                site.grid.submit_grid(
                    &mut site.lrm,
                    &sd,
                    user,
                    &iwd,
                    proxy.as_ref().map_err(Clone::clone),
                    &reader,
                    local,
                    &mut self.rng,
                )?
            }
            _ => {
                let site = self.sites.get_mut(&name).expect("resolved");
                let exe = SiteFs::resolve(&cwd, &sd.executable);
                if !site.fs.exists(&exe) {
                    return Err(LrmError::SpoolFailure(format!("executable {exe} not found")).into());
                }
                let submitted = site.lrm.submit(&sd, user, local)?;
                for &id in &submitted.ids {
                    let ctx = ExecContext::for_spec(&sd, &cwd);
                    if let Some(log) = &ctx.log {
                        let ev = LogEvent::Submitted { host: site.spec.host.clone() };
                        let _ = append_log_event(&site.fs.real(&ctx.path(log)), id, local, &ev);
                    }
                    site.contexts.insert(id, ctx);
                }
                submitted
            }
        };
        let site = &self.sites[&name];
        site.log("lrm", local, &format!("{user} submitted cluster {}", submitted.first().cluster));
        self.record_transitions(&name);
        Ok(submitted)
    }

    pub fn remove(&mut self, site: &str, id: JobId) -> Result<(), TestbedError> {
        let name = self.site_name(site)?;
        let local = self.clock.read(&name);
        let s = self.sites.get_mut(&name).expect("resolved");
        s.lrm.remove(id, local)?;
        s.running.remove(&id);
        s.log("lrm", local, &format!("{id} removed"));
        self.record_transitions(&name);
        Ok(())
    }

    /// Creates and stores a proxy from the user's certificate, then checks
    /// it against the node's trust anchors.
    pub fn proxy_init(
        &mut self,
        site: &str,
        user: &str,
        passphrase: &str,
        lifetime: Span,
    ) -> Result<ProxyReport, TestbedError> {
        let name = self.site_name(site)?;
        let local = self.clock.read(&name);
        let max_skew = self.config.max_skew;
        let s = &self.sites[&name];
        let creds = s.credentials(user);
        let dir = Site::cred_vdir(user);
        let (cert, key) = creds.load_user().map_err(|e| match e {
            GsiError::NoUserCert(_) => GsiError::NoUserCert(format!("{dir}/usercert.pem")),
            other => other,
        })?;
        let proxy = gsi::proxy_init(&cert, &key, passphrase, lifetime, local, &mut self.rng)?;
        let anchors = load_trust_dir(&s.fs.real(TRUST_DIR))?;
        gsi::verify_chain(&proxy.chain, &anchors, local, max_skew).map_err(GsiError::from)?;
        creds.save_proxy(&proxy)?;
        s.log("gsi", local, &format!("proxy created for {}", proxy.identity()));
        Ok(ProxyReport {
            cert_file: format!("{dir}/usercert.pem"),
            key_file: format!("{dir}/userkey.pem"),
            trust_dir: TRUST_DIR.to_string(),
            output_file: format!("{dir}/proxy.pem"),
            identity: cert.subject.clone(),
            proxy,
        })
    }

    pub fn proxy_info(&self, site: &str, user: &str) -> Result<ProxyInfo, TestbedError> {
        let name = self.site_name(site)?;
        let proxy = self.load_proxy(&name, user)?;
        Ok(gsi::proxy_info(&proxy, self.clock.read(&name)))
    }

    /// Starts a synchronous remote run; the first frame leaves immediately.
    pub fn start_job_run(
        &mut self,
        site: &str,
        user: &str,
        contact: &ContactString,
        executable: &str,
        args: &[String],
    ) -> Result<RunHandle, TestbedError> {
        let name = self.site_name(site)?;
        let proxy = self.load_proxy(&name, user)?;
        let local = self.clock.read(&name);
        let delegated = proxy.delegate(local, proxy.not_after() - local, &mut self.rng)?;
        let s = self.sites.get_mut(&name).expect("resolved");
        let request_id = s.grid.next_request_id();
        let req = GramJobRequest {
            executable: executable.to_string(),
            arguments: args.to_vec(),
            stdout_name: "stdout".into(),
            stderr_name: "stderr".into(),
            owner_dn: proxy.identity().to_string(),
            target_lrm: contact.lrm().to_string(),
            stage_in: Vec::new(),
            request_id: request_id.clone(),
        };
        let mut session = ClientSession::new(
            &contact.host,
            req,
            Vec::new(),
            delegated.chain,
            SessionConfig::job_run(),
            local,
        );
        s.log("gram-client", local, &format!("{request_id} -> {contact} {executable}"));
        let first = session.on_tick(local);
        self.next_run += 1;
        let h = self.next_run;
        self.runs.insert(h, JobRun { site: name.clone(), session });
        if let Some(frame) = first {
            self.send_to_host(&name, Endpoint::JobRun(h), &contact.host, &request_id, frame);
        }
        Ok(RunHandle(h))
    }

    /// Result of a run, once it has finished.
    pub fn job_run_result(&self, h: RunHandle) -> Option<Result<Outcome, GramError>> {
        self.runs.get(&h.0).and_then(|r| r.session.result().cloned())
    }

    /// Runs a job remotely and waits, in virtual time, for its output.
    pub fn job_run(
        &mut self,
        site: &str,
        user: &str,
        contact: &ContactString,
        executable: &str,
        args: &[String],
    ) -> Result<Outcome, TestbedError> {
        let h = self.start_job_run(site, user, contact, executable, args)?;
        loop {
            if let Some(result) = self.job_run_result(h) {
                self.runs.remove(&h.0);
                return result.map_err(TestbedError::from);
            }
            self.step();
        }
    }

    /// Creates a CA in the site's CA directory.
    pub fn ca_init(&mut self, site: &str) -> Result<String, TestbedError> {
        let name = self.site_name(site)?;
        let local = self.clock.read(&name);
        let s = &self.sites[&name];
        let ca = CaStore::new(s.fs.real(CA_DIR)).init(&ca_name_for_host(&s.spec.host), local, &mut self.rng)?;
        Ok(ca.root.subject.clone())
    }

    /// Signs a certificate for `user` with the site's CA, installs it for
    /// that user on every node and maps it in every gridmap.
    pub fn ca_sign(&mut self, site: &str, user: &str, common_name: &str, passphrase: &str) -> Result<String, TestbedError> {
        let name = self.site_name(site)?;
        let local = self.clock.read(&name);
        let ca = CaStore::new(self.sites[&name].fs.real(CA_DIR)).load()?;
        let dn = user_dn(&ca.name, common_name);
        let (cert, key) = ca.issue_cert(&dn, USER_CERT_LIFETIME, passphrase, local, &mut self.rng)?;
        let account = self.config.account_for(user);
        for s in self.sites.values_mut() {
            s.credentials(user).save_user(&cert, &key)?;
            if let Some(gk) = s.gatekeeper.as_mut() {
                gk.config.gridmap.insert(&dn, &account);
                s.fs.write(GRIDMAP_FILE, gk.config.gridmap.render().as_bytes())?;
            }
        }
        Ok(dn)
    }
}

fn failed(stderr: String, exit_code: i32) -> TaskOutput {
    TaskOutput {
        stdout: Vec::new(),
        stderr: stderr.into_bytes(),
        exit_code,
        duration: Span::ZERO,
    }
}
