use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gsi::{ca_name_for_host, proxy_init, user_dn, CertificateAuthority, ProxyCredential};
use crate::jobspec::NativeJob;
use crate::staging::SandboxStore;
use crate::time::Timestamp;

#[derive(Default)]
struct MockLrm {
    next: u32,
    jobs: BTreeMap<JobId, (NativeJob, String, JobSnapshot)>,
}

impl MockLrm {
    fn set(&mut self, id: JobId, state: JobState) {
        self.jobs.get_mut(&id).unwrap().2.state = state;
    }
}

impl LrmBackend for MockLrm {
    fn submit(&mut self, job: &NativeJob, account: &str, _sandbox: &str) -> Result<JobId, String> {
        self.next += 1;
        let id = JobId { cluster: self.next, proc_id: 0 };
        let snap = JobSnapshot {
            state: JobState::Idle,
            run_time: Span::ZERO,
            hold_reason: None,
        };
        self.jobs.insert(id, (job.clone(), account.to_string(), snap));
        Ok(id)
    }
    fn snapshot(&self, id: JobId) -> Option<JobSnapshot> {
        self.jobs.get(&id).map(|j| j.2.clone())
    }
    fn hold(&mut self, id: JobId, reason: &str) -> Result<(), String> {
        let j = self.jobs.get_mut(&id).ok_or("no job")?;
        j.2.state = JobState::Held;
        j.2.hold_reason = Some(reason.to_string());
        Ok(())
    }
    fn cancel(&mut self, id: JobId) -> Result<(), String> {
        self.set(id, JobState::Removed);
        Ok(())
    }
}

const HOST: &str = "ca.it2.ddu.ac.in";

fn t0() -> Timestamp {
    Timestamp::ymd_hms(2013, 2, 13, 13, 11, 48)
}

struct World {
    gk: Gatekeeper,
    lrm: MockLrm,
    proxy: ProxyCredential,
    _dir: tempfile::TempDir,
}

fn world() -> World {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let issued = Timestamp::ymd_hms(2013, 2, 1, 0, 0, 0);
    let ca = CertificateAuthority::create(&ca_name_for_host(HOST), issued, &mut rng).unwrap();
    let dn = user_dn(&ca.name, "GT User");
    let (cert, key) = ca
        .issue_cert(&dn, Span::from_hours(24 * 365), "pw", issued, &mut rng)
        .unwrap();
    let proxy = proxy_init(&cert, &key, "pw", Span::from_hours(12), t0(), &mut rng).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut config = GatekeeperConfig::new(HOST);
    config.anchors = vec![ca.root.clone()];
    config.gridmap.insert(&dn, "gtuser");
    let mut gk = Gatekeeper::new(config, SandboxStore::new(dir.path()));
    gk.register("condor", LrmAdapter::new(Dialect::Condor));
    gk.register("sge", LrmAdapter::new(Dialect::SgeLike));
    World {
        gk,
        lrm: MockLrm::default(),
        proxy,
        _dir: dir,
    }
}

fn request(w: &World, lrm: &str, rid: &str) -> GramJobRequest {
    GramJobRequest {
        executable: "/bin/date".into(),
        arguments: vec![],
        stdout_name: "stdout".into(),
        stderr_name: "stderr".into(),
        owner_dn: w.proxy.identity().to_string(),
        target_lrm: lrm.into(),
        stage_in: vec![],
        request_id: rid.into(),
    }
}

fn send(w: &mut World, frame: Frame) -> Option<Frame> {
    w.gk.handle(&frame, &mut w.lrm, t0())
}

fn send_signed(w: &mut World, frame: Frame) -> Option<Frame> {
    let frame = attach_chain(frame, &w.proxy.chain);
    send(w, frame)
}

#[test]
fn state_mapping_is_total() {
    let expected = [
        (JobState::Idle, GramState::Pending),
        (JobState::Running, GramState::Active),
        (JobState::Completed, GramState::Done),
        (JobState::Removed, GramState::Failed),
        (JobState::Held, GramState::Failed),
        (JobState::Suspended, GramState::Active),
    ];
    assert_eq!(expected.len(), JobState::ALL.len());
    for s in JobState::ALL {
        let want = expected.iter().find(|(l, _)| *l == s).unwrap().1;
        assert_eq!(GramState::from_lrm(s), want, "{s:?}");
    }
    for g in GramState::ALL {
        assert_eq!(g.as_str().parse::<GramState>().unwrap(), g);
    }
    assert!("RUNNING".parse::<GramState>().is_err());
}

#[test]
fn request_frame_round_trips() {
    let w = world();
    let mut req = request(&w, "condor", "grid-b-1");
    req.arguments = vec!["-f".into(), "two words".into()];
    req.stage_in.push(crate::jobspec::StageItem {
        name: "executable".into(),
        source: "/bin/hostname".into(),
        digest: "ab".repeat(32),
    });
    let frame = request_frame(&req);
    let (back, _) = Frame::decode(&frame.encode()).unwrap();
    assert_eq!(parse_request_frame(&back).unwrap(), req);
}

#[test]
fn chain_header_round_trips() {
    let w = world();
    let v = encode_chain(&w.proxy.chain);
    assert_eq!(decode_chain(&v).unwrap(), w.proxy.chain);
    assert!(decode_chain("!!").is_err());
}

#[test]
fn valid_request_is_pending_with_lrm_id() {
    let mut w = world();
    let req = request(&w, "condor", "r1");
    let reply = send_signed(&mut w, request_frame(&req)).unwrap();
    assert_eq!(reply.get("state"), Some("PENDING"));
    assert_eq!(reply.get("job-id"), Some("1.0"));
    let (native, account, _) = &w.lrm.jobs[&JobId { cluster: 1, proc_id: 0 }];
    assert_eq!(native.executable, "/bin/date");
    assert_eq!(account, "gtuser");
}

#[test]
fn duplicate_request_is_not_resubmitted() {
    let mut w = world();
    let req = request(&w, "condor", "r1");
    let a = send_signed(&mut w, request_frame(&req)).unwrap();
    let b = send_signed(&mut w, request_frame(&req)).unwrap();
    assert_eq!(a, b);
    assert_eq!(w.lrm.jobs.len(), 1);
}

fn rejected(w: &mut World, frame: Frame, signed: bool) -> String {
    let reply = if signed { send_signed(w, frame) } else { send(w, frame) }.unwrap();
    assert!(reply.is_error(), "{reply:?}");
    assert!(w.lrm.jobs.is_empty(), "rejection touched the LRM");
    reply.get("code").unwrap().to_string()
}

#[test]
fn rejections_leave_the_lrm_untouched() {
    let mut w = world();
    let req = request(&w, "condor", "r1");
    let code = rejected(&mut w, request_frame(&req), false);
    assert_eq!(code, "AuthFailed");

    let lsf = request(&w, "lsf", "r2");
    let code = rejected(&mut w, request_frame(&lsf), true);
    assert_eq!(code, "UnknownJobmanager");

    let mut stranger = request(&w, "condor", "r3");
    stranger.owner_dn = "/O=Grid/CN=Somebody Else".into();
    let code = rejected(&mut w, request_frame(&stranger), true);
    assert_eq!(code, "IdentityMismatch");

    w.gk.config.gridmap = crate::gsi::GridMap::new();
    let code = rejected(&mut w, request_frame(&req), true);
    assert_eq!(code, "NotAuthorized");
}

#[test]
fn future_dated_credential_is_rejected_with_the_phrase() {
    let mut w = world();
    w.gk.config.max_skew = Span::from_secs(60);
    let req = request(&w, "condor", "r1");
    let frame = attach_chain(request_frame(&req), &w.proxy.chain);
    let reply = w.gk.handle(&frame, &mut w.lrm, t0() - Span::from_secs(300)).unwrap();
    assert_eq!(reply.get("code"), Some("FutureCertificate"));
    assert!(reply.get("detail").unwrap().contains(crate::gsi::FUTURE_CERT_PHRASE));
    assert!(w.lrm.jobs.is_empty());
}

#[test]
fn newer_adapter_revision_rejects_native_text() {
    let mut w = world();
    w.gk.adapter_mut("condor").unwrap().revision += 1;
    let req = request(&w, "condor", "r1");
    let code = rejected(&mut w, request_frame(&req), true);
    assert_eq!(code, "VersionMismatch");
}

#[test]
fn dead_adapter_leaves_request_unanswered_and_logs() {
    let mut w = world();
    w.gk.adapter_mut("condor").unwrap().alive = false;
    let req = request(&w, "condor", "r1");
    assert!(send_signed(&mut w, request_frame(&req)).is_none());
    assert!(w.gk.drain_log().iter().any(|l| l.contains("not responding")));
}

#[test]
fn status_is_monotone() {
    let mut w = world();
    let req = request(&w, "condor", "r1");
    send_signed(&mut w, request_frame(&req)).unwrap();
    let id = JobId { cluster: 1, proc_id: 0 };
    let status = Frame::new(MessageType::JobStatus).with("request-id", "r1");
    let mut seen = Vec::new();
    for s in [JobState::Idle, JobState::Running, JobState::Idle, JobState::Running, JobState::Completed] {
        w.lrm.set(id, s);
        seen.push(send_signed(&mut w, status.clone()).unwrap().get("state").unwrap().to_string());
    }
    assert_eq!(seen, ["PENDING", "ACTIVE", "ACTIVE", "ACTIVE", "DONE"]);
    let unknown = Frame::new(MessageType::JobStatus).with("request-id", "nope");
    assert_eq!(send_signed(&mut w, unknown).unwrap().get("code"), Some("UnknownRequest"));
}

/// Pumps a session against the gatekeeper; `lrm_step` runs before each tick.
fn drive(
    w: &mut World,
    mut session: ClientSession,
    mut tamper: impl FnMut(&mut Frame),
    mut lrm_step: impl FnMut(&mut MockLrm, &Gatekeeper, Timestamp),
) -> Result<Outcome, GramError> {
    let mut now = t0();
    for _ in 0..10_000 {
        lrm_step(&mut w.lrm, &w.gk, now);
        let mut out = session.on_tick(now);
        while let Some(mut f) = out.take() {
            tamper(&mut f);
            if let Some(mut reply) = w.gk.handle(&f, &mut w.lrm, now) {
                tamper(&mut reply);
                out = session.on_frame(&reply, now);
            }
        }
        if let Some(r) = session.result() {
            return r.clone();
        }
        now = now + Span::from_millis(100);
    }
    panic!("session never finished");
}

fn run_to_completion(lrm: &mut MockLrm, gk: &Gatekeeper, data: &[u8]) {
    let ids: Vec<JobId> = lrm.jobs.keys().copied().collect();
    for id in ids {
        let state = lrm.jobs[&id].2.state;
        if state == JobState::Idle {
            lrm.set(id, JobState::Running);
        } else if state == JobState::Running {
            let sandbox = gk_sandbox(gk, id);
            gk.sandboxes().write(&sandbox, "stdout", data).unwrap();
            gk.sandboxes().write(&sandbox, "stderr", b"").unwrap();
            lrm.set(id, JobState::Completed);
        }
    }
}

fn gk_sandbox(gk: &Gatekeeper, id: JobId) -> String {
    (0..100)
        .map(|i| format!("r{i}"))
        .find(|r| gk.job_for(r) == Some(id))
        .unwrap()
}

#[test]
fn session_runs_to_collected_output() {
    let mut w = world();
    let req = request(&w, "condor", "r1");
    let s = ClientSession::new(HOST, req, vec![], w.proxy.chain.clone(), SessionConfig::job_run(), t0());
    let big: Vec<u8> = (0..200_000u32).map(|i| (i % 251) as u8).collect();
    let out = drive(&mut w, s, |_| {}, |l, g, _| run_to_completion(l, g, &big)).unwrap();
    assert_eq!(out.state, GramState::Done);
    assert_eq!(out.output("stdout"), big.as_slice());
    assert_eq!(out.output("stderr"), b"");
    assert!(!w.gk.sandboxes().exists("r1"), "sandbox released after collect");
}

#[test]
fn uploads_are_staged_with_digests() {
    let mut w = world();
    let mut req = request(&w, "condor", "r1");
    req.stage_in.push(crate::jobspec::StageItem {
        name: "executable".into(),
        source: "/bin/hostname".into(),
        digest: String::new(),
    });
    let exe = b"#!minigrid-task /bin/hostname\n".to_vec();
    let mut s = ClientSession::new(HOST, req, vec![("executable".into(), exe.clone())], w.proxy.chain.clone(), SessionConfig::job_run(), t0());
    let put = s.on_tick(t0()).unwrap();
    assert_eq!(put.kind, MessageType::XferPut);
    let reply = send(&mut w, put).unwrap();
    let submit = s.on_frame(&reply, t0()).unwrap();
    assert_eq!(submit.kind, MessageType::JobRequest);
    assert_eq!(send(&mut w, submit).unwrap().get("state"), Some("PENDING"));
    assert_eq!(w.gk.sandboxes().read("r1", "executable").unwrap(), exe);
}

#[test]
fn corrupted_upload_holds_the_job() {
    let mut w = world();
    let mut req = request(&w, "condor", "r1");
    req.stage_in.push(crate::jobspec::StageItem {
        name: "executable".into(),
        source: "/bin/hostname".into(),
        digest: String::new(),
    });
    let exe = b"#!minigrid-task /bin/hostname\n".to_vec();
    let s = ClientSession::new(HOST, req, vec![("executable".into(), exe)], w.proxy.chain.clone(), SessionConfig::job_run(), t0());
    let flip = |f: &mut Frame| {
        if f.kind == MessageType::XferPut && !f.payload.is_empty() {
            f.payload[0] ^= 1;
        }
    };
    let err = drive(&mut w, s, flip, |_, _, _| {}).unwrap_err();
    assert_eq!(err.code(), "DigestMismatch");
    let (_, _, snap) = &w.lrm.jobs[&JobId { cluster: 1, proc_id: 0 }];
    assert_eq!(snap.state, JobState::Held);
}

#[test]
fn corrupted_download_is_detected() {
    let mut w = world();
    let req = request(&w, "condor", "r1");
    let s = ClientSession::new(HOST, req, vec![], w.proxy.chain.clone(), SessionConfig::job_run(), t0());
    let flip = |f: &mut Frame| {
        if f.kind == MessageType::XferGet && !f.payload.is_empty() {
            f.payload[0] ^= 1;
        }
    };
    let err = drive(&mut w, s, flip, |l, g, _| run_to_completion(l, g, b"Wed Feb  5 09:00:05 IST 2013\n")).unwrap_err();
    assert_eq!(err.code(), "DigestMismatch");
}

#[test]
fn silent_gatekeeper_times_out_or_loses_contact() {
    let mut w = world();
    w.gk.adapter_mut("condor").unwrap().alive = false;
    let req = request(&w, "condor", "r1");
    let s = ClientSession::new(HOST, req.clone(), vec![], w.proxy.chain.clone(), SessionConfig::job_run(), t0());
    let err = drive(&mut w, s, |_| {}, |_, _, _| {}).unwrap_err();
    assert_eq!(err.code(), "Timeout");
    assert!(err.to_string().contains(HOST));

    let s = ClientSession::new(HOST, req, vec![], w.proxy.chain.clone(), SessionConfig::grid(), t0());
    let err = drive(&mut w, s, |_| {}, |_, _, _| {}).unwrap_err();
    assert_eq!(err, GramError::ContactLost { contact: HOST.into(), misses: 5 });
}

#[test]
fn failed_job_reports_hold_reason() {
    let mut w = world();
    let req = request(&w, "condor", "r1");
    let s = ClientSession::new(HOST, req, vec![], w.proxy.chain.clone(), SessionConfig::job_run(), t0());
    let err = drive(&mut w, s, |_| {}, |l, _, _| {
        if let Some(id) = l.jobs.keys().next().copied() {
            if l.jobs[&id].2.state == JobState::Idle {
                l.hold(id, "spool full").unwrap();
            }
        }
    })
    .unwrap_err();
    assert_eq!(err.code(), "JobFailed");
    assert_eq!(err.to_string(), "spool full");
}

#[test]
fn both_dialects_submit_the_same_job() {
    let mut by_dialect = Vec::new();
    for lrm in ["condor", "sge"] {
        let mut w = world();
        let mut req = request(&w, lrm, "r1");
        req.executable = "/bin/hostname".into();
        req.arguments = vec!["-f".into()];
        send_signed(&mut w, request_frame(&req)).unwrap();
        let (native, _, _) = w.lrm.jobs.values().next().unwrap().clone();
        by_dialect.push((native.executable, native.arguments, native.stdout_name, native.stderr_name));
    }
    assert_eq!(by_dialect[0], by_dialect[1]);
}
