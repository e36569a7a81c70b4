use super::*;
use proptest::prelude::*;

fn t0() -> Timestamp {
    Timestamp::ymd_hms(2013, 2, 13, 13, 2, 10)
}

fn secs(s: i64) -> Span {
    Span::from_secs(s)
}

fn hostname_job() -> SubmitDescription {
    let mut sd = SubmitDescription::vanilla("/bin/hostname");
    sd.output = Some("result.out".into());
    sd.error = Some("result.err".into());
    sd.log = Some("result.log".into());
    sd
}

fn site() -> Lrm {
    Lrm::new(LrmConfig::new("grid-b.it2.ddu.ac.in", 2), t0())
}

#[test]
fn job_ids_render_cluster_dot_proc() {
    assert_eq!(JobId::new(13, 0).to_string(), "13.0");
    assert_eq!("13.0".parse::<JobId>(), Ok(JobId::new(13, 0)));
    assert_eq!("9".parse::<JobId>(), Ok(JobId::new(9, 0)));
    assert!("x.0".parse::<JobId>().is_err());
    assert!("0.0".parse::<JobId>().is_err());
}

#[test]
fn legal_transition_table() {
    use JobState::*;
    let legal = [
        (Idle, Running),
        (Idle, Removed),
        (Idle, Held),
        (Running, Completed),
        (Running, Idle),
        (Running, Suspended),
        (Running, Removed),
        (Suspended, Running),
        (Suspended, Removed),
        (Held, Idle),
        (Held, Removed),
    ];
    for from in JobState::ALL {
        for to in JobState::ALL {
            assert_eq!(from.can_become(to), legal.contains(&(from, to)), "{from:?}->{to:?}");
        }
    }
    assert!(check_trajectory(&[Idle, Running, Completed]).is_ok());
    assert!(check_trajectory(&[Idle, Running, Idle, Held, Idle, Running, Completed]).is_ok());
    assert_eq!(check_trajectory(&[Idle, Completed]), Err((1, Idle, Completed)));
    assert!(check_trajectory(&[Running]).is_err());
}

#[test]
fn submit_acks_with_cluster_number() {
    let mut lrm = site();
    lrm.set_next_cluster(13);
    let sub = lrm.submit(&hostname_job(), "grid-b", t0()).unwrap();
    assert_eq!(sub.ack(), "1 job(s) submitted to cluster 13.");
    let next = lrm.submit(&hostname_job(), "grid-b", t0()).unwrap();
    assert_eq!(next.first(), JobId::new(14, 0));

    let mut many = hostname_job();
    many.queue_count = 3;
    let sub = lrm.submit(&many, "grid-b", t0()).unwrap();
    assert_eq!(sub.ids, vec![JobId::new(15, 0), JobId::new(15, 1), JobId::new(15, 2)]);
    assert_eq!(sub.ack(), "3 job(s) submitted to cluster 15.");
}

#[test]
fn next_cluster_never_goes_backwards() {
    let mut lrm = site();
    lrm.set_next_cluster(10);
    lrm.set_next_cluster(3);
    assert_eq!(lrm.next_cluster(), 10);
}

#[test]
fn local_round_trip_reaches_history() {
    let mut lrm = site();
    lrm.set_next_cluster(13);
    let id = lrm.submit(&hostname_job(), "grid-b", t0()).unwrap().first();
    let snap = lrm.query_queue(t0());
    assert_eq!(
        snap.summary.to_string(),
        "1 jobs; 0 completed, 0 removed, 1 idle, 0 running, 0 held, 0 suspended"
    );

    let plan = lrm.schedule_tick(t0() + secs(1));
    assert_eq!(plan, vec![(id, "slot1@grid-b.it2.ddu.ac.in".to_string())]);
    let slot = &lrm.slots()[0];
    assert_eq!((slot.state, slot.activity), (SlotState::Claimed, Activity::Busy));

    lrm.complete(id, t0() + secs(2), 0).unwrap();
    let slot = &lrm.slots()[0];
    assert_eq!((slot.state, slot.activity), (SlotState::Unclaimed, Activity::Idle));
    assert_eq!(lrm.job(id).unwrap().run_time.run_time(), "0+00:00:01");

    // Still visible while lingering.
    let snap = lrm.query_queue(t0() + secs(4));
    assert_eq!(snap.summary.completed, 1);
    assert!(lrm.retire(t0() + secs(5)).is_empty());

    let snap = lrm.query_queue(t0() + secs(6));
    assert_eq!(snap.summary.total(), 0);
    let rows = lrm.retire(t0() + secs(6));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].state, JobState::Completed);
    assert_eq!(rows[0].cmd, "/bin/hostname");
    assert_eq!(lrm.query_history(), rows);
    assert!(lrm.job(id).is_none());
}

#[test]
fn run_time_accrues_only_while_running() {
    let mut lrm = site();
    let id = lrm.submit(&hostname_job(), "u", t0()).unwrap().first();
    lrm.schedule_tick(t0() + secs(10));
    assert_eq!(lrm.job(id).unwrap().run_time_at(t0() + secs(15)), secs(5));
    lrm.suspend(id, t0() + secs(15)).unwrap();
    assert_eq!(lrm.job(id).unwrap().run_time_at(t0() + secs(100)), secs(5));
    lrm.resume(id, t0() + secs(100)).unwrap();
    lrm.complete(id, t0() + secs(103), 0).unwrap();
    assert_eq!(lrm.job(id).unwrap().run_time, secs(8));
}

#[test]
fn illegal_transitions_are_rejected() {
    let mut lrm = site();
    let id = lrm.submit(&hostname_job(), "u", t0()).unwrap().first();
    assert_eq!(
        lrm.complete(id, t0(), 0),
        Err(LrmError::IllegalTransition {
            id,
            from: JobState::Idle,
            to: JobState::Completed
        })
    );
    assert_eq!(
        lrm.remove(JobId::new(99, 0), t0()),
        Err(LrmError::UnknownJob(JobId::new(99, 0)))
    );
    lrm.remove(id, t0()).unwrap();
    assert!(lrm.release(id, t0()).is_err());
}

#[test]
fn hold_of_running_job_vacates_first() {
    let mut lrm = site();
    let id = lrm.submit(&hostname_job(), "u", t0()).unwrap().first();
    lrm.schedule_tick(t0());
    lrm.hold(id, "remote contact lost", t0() + secs(3)).unwrap();
    let job = lrm.job(id).unwrap();
    assert_eq!(job.state, JobState::Held);
    assert_eq!(job.hold_reason.as_deref(), Some("remote contact lost"));
    assert_eq!(lrm.slots()[0].state, SlotState::Unclaimed);
    let states: Vec<_> = lrm
        .transitions()
        .iter()
        .filter(|t| t.id == id)
        .map(|t| t.to)
        .collect();
    assert_eq!(
        states,
        vec![JobState::Idle, JobState::Running, JobState::Idle, JobState::Held]
    );
    lrm.release(id, t0() + secs(4)).unwrap();
    assert_eq!(lrm.job(id).unwrap().hold_reason, None);
}

#[test]
fn removed_slot_is_freed() {
    let mut lrm = site();
    let id = lrm.submit(&hostname_job(), "u", t0()).unwrap().first();
    lrm.schedule_tick(t0());
    lrm.remove(id, t0() + secs(1)).unwrap();
    assert!(lrm.slots().iter().all(|s| s.state == SlotState::Unclaimed));
    assert_eq!(lrm.query_queue(t0() + secs(1)).summary.removed, 1);
}

#[test]
fn scheduler_is_priority_then_fifo() {
    let mut lrm = Lrm::new(LrmConfig::new("h", 1), t0());
    let a = lrm.submit(&hostname_job(), "u", t0()).unwrap().first();
    let b = lrm.submit(&hostname_job(), "u", t0() + secs(1)).unwrap().first();
    let mut urgent = hostname_job();
    urgent.priority = 5;
    let c = lrm.submit(&urgent, "u", t0() + secs(2)).unwrap().first();

    let mut order = Vec::new();
    let mut now = t0() + secs(3);
    for _ in 0..3 {
        let plan = lrm.schedule_tick(now);
        assert_eq!(plan.len(), 1);
        order.push(plan[0].0);
        now = now + secs(1);
        lrm.complete(plan[0].0, now, 0).unwrap();
    }
    assert_eq!(order, vec![c, a, b]);
}

#[test]
fn grid_jobs_are_not_scheduled_locally() {
    let mut lrm = site();
    let mut sd = hostname_job();
    sd.universe = Universe::Globus;
    let id = lrm.submit(&sd, "gtuser", t0()).unwrap().first();
    assert!(lrm.schedule_tick(t0()).is_empty());
    lrm.start_remote(id, "7.0@grid-v.it2.ddu.ac.in/jobmanager-condor", t0()).unwrap();
    lrm.set_remote_run_time(id, secs(5)).unwrap();
    // Remote accounting is not overwritten by local elapsed time.
    assert_eq!(lrm.job(id).unwrap().run_time_at(t0() + secs(60)), secs(5));
    lrm.complete(id, t0() + secs(6), 0).unwrap();
    assert!(lrm.slots().iter().all(|s| s.state == SlotState::Unclaimed));

    let local = lrm.submit(&hostname_job(), "u", t0()).unwrap().first();
    assert_eq!(
        lrm.start_remote(local, "x", t0()),
        Err(LrmError::NotGridJob(local))
    );
}

#[test]
fn queue_cmd_shows_basename_and_args() {
    let mut lrm = site();
    let mut sd = SubmitDescription::vanilla("/bin/hostname");
    sd.arguments = vec!["-f".into()];
    let id = lrm.submit(&sd, "gtuser", t0()).unwrap().first();
    assert_eq!(lrm.job(id).unwrap().short_cmd(), "hostname -f");
    assert_eq!(lrm.job(id).unwrap().cmd, "/bin/hostname -f");
}

#[test]
fn history_is_newest_first() {
    let mut lrm = Lrm::new(LrmConfig::new("h", 2), t0());
    let a = lrm.submit(&hostname_job(), "u", t0()).unwrap().first();
    let b = lrm.submit(&hostname_job(), "u", t0()).unwrap().first();
    lrm.schedule_tick(t0());
    lrm.complete(a, t0() + secs(1), 0).unwrap();
    lrm.complete(b, t0() + secs(1), 0).unwrap();
    let c = lrm.submit(&hostname_job(), "u", t0()).unwrap().first();
    lrm.schedule_tick(t0() + secs(1));
    lrm.complete(c, t0() + secs(2), 0).unwrap();
    lrm.retire(t0() + secs(10));
    let ids: Vec<_> = lrm.query_history().iter().map(|r| r.id).collect();
    assert_eq!(ids, vec![c, b, a]);
}

#[test]
fn status_table_for_idle_pool() {
    let lrm = site();
    let text = render_status(&lrm.query_status(), t0() + secs(19));
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("Name"));
    assert!(lines[0].ends_with("ActvtyTime"));
    assert!(lines[2].starts_with("slot1@grid-b.it2.ddu.ac.in"));
    for col in ["LINUX", "INTEL", "Unclaimed", "Idle", "0.000", "1001", "0+00:00:19"] {
        assert!(lines[2].contains(col), "{col} missing from {:?}", lines[2]);
    }
    let totals: Vec<&str> = text
        .lines()
        .filter(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            f.len() == 8 && f[1].parse::<usize>().is_ok()
        })
        .collect();
    assert_eq!(totals.len(), 2);
    for l in totals {
        let f: Vec<&str> = l.split_whitespace().collect();
        assert_eq!(&f[1..], ["2", "0", "0", "2", "0", "0", "0"]);
    }
}

#[test]
fn status_table_for_empty_pool() {
    let text = render_status(&[], t0());
    assert!(text.starts_with("Name"));
    let last = text.lines().last().unwrap();
    let f: Vec<&str> = last.split_whitespace().collect();
    assert_eq!(f, ["Total", "0", "0", "0", "0", "0", "0", "0"]);
}

#[test]
fn queue_listing_shape() {
    let mut lrm = site();
    lrm.set_next_cluster(9);
    let mut sd = SubmitDescription::vanilla("/bin/hostname");
    sd.arguments = vec!["-f".into()];
    let start = Timestamp::ymd_hms(2013, 2, 5, 15, 7, 50);
    lrm.submit(&sd, "gtuser", start).unwrap();
    let text = render_queue(&lrm.query_queue(start), "grid-b.it2.ddu.ac.in");
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "-- Submitter: grid-b.it2.ddu.ac.in");
    let header: Vec<&str> = lines[1].split_whitespace().collect();
    assert_eq!(header, ["ID", "OWNER", "SUBMITTED", "RUN_TIME", "ST", "PRI", "SIZE", "CMD"]);
    let row: Vec<&str> = lines[2].split_whitespace().collect();
    assert_eq!(
        row,
        ["9.0", "gtuser", "2/5", "15:07", "0+00:00:00", "I", "0", "0.0", "hostname", "-f"]
    );
    assert_eq!(lines[3], "");
    assert_eq!(
        lines[4],
        "1 jobs; 0 completed, 0 removed, 1 idle, 0 running, 0 held, 0 suspended"
    );
}

#[test]
fn history_listing_shape() {
    let row = HistoryRow {
        id: JobId::new(13, 0),
        owner: "grid-b".into(),
        submitted: Timestamp::ymd_hms(2013, 2, 13, 13, 2, 10),
        run_time: secs(1),
        state: JobState::Completed,
        completed: Timestamp::ymd_hms(2013, 2, 13, 13, 2, 11),
        cmd: "/bin/hostname".into(),
    };
    let text = render_history(&[row]);
    let lines: Vec<&str> = text.lines().collect();
    let header: Vec<&str> = lines[0].split_whitespace().collect();
    assert_eq!(header, ["ID", "OWNER", "SUBMITTED", "RUN_TIME", "ST", "COMPLETED", "CMD"]);
    let f: Vec<&str> = lines[1].split_whitespace().collect();
    assert_eq!(
        f,
        ["13.0", "grid-b", "2/13", "13:02", "0+00:00:01", "C", "2/13", "13:02", "/bin/hostname"]
    );
}

/// Reference scheduler: Memory-threshold requirements with Rank on Memory,
/// computed without the expression evaluator.
fn oracle_schedule(
    jobs: &[(i64, i64, i64)], // (priority, submit second, min memory)
    mems: &[i64],
) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..jobs.len()).collect();
    order.sort_by(|&a, &b| {
        jobs[b].0.cmp(&jobs[a].0).then(jobs[a].1.cmp(&jobs[b].1)).then(a.cmp(&b))
    });
    let mut free = vec![true; mems.len()];
    let mut plan = Vec::new();
    for j in order {
        let best = (0..mems.len())
            .filter(|&s| free[s] && mems[s] >= jobs[j].2)
            .max_by(|&a, &b| mems[a].cmp(&mems[b]).then(b.cmp(&a)));
        if let Some(s) = best {
            free[s] = false;
            plan.push((j, s));
        }
    }
    plan
}

proptest! {
    #[test]
    fn scheduler_agrees_with_reference(
        mems in prop::collection::vec(prop::sample::select(vec![256i64, 512, 1001, 2048]), 1..5),
        jobs in prop::collection::vec((0i64..3, 0i64..4, prop::sample::select(vec![0i64, 300, 600, 1500, 4000])), 0..7),
    ) {
        let mut lrm = Lrm::new(LrmConfig::new("h", 0), t0());
        // Slot names sort the same way as their indices (fewer than 10 slots).
        lrm.set_slots(mems.iter().enumerate().map(|(i, &m)| SlotAd {
            name: format!("slot{}@h", i + 1),
            opsys: "LINUX".into(),
            arch: "INTEL".into(),
            state: SlotState::Unclaimed,
            activity: Activity::Idle,
            load_avg: 0.0,
            memory: m,
            activity_since: t0(),
        }).collect());
        let mut ids = Vec::new();
        for &(prio, at, min_mem) in &jobs {
            let mut sd = hostname_job();
            sd.priority = prio;
            sd.requirements = Some(format!("TARGET.Memory >= {min_mem}"));
            sd.rank = Some("TARGET.Memory".into());
            ids.push(lrm.submit(&sd, "u", t0() + secs(at)).unwrap().first());
        }
        let mut got = lrm.schedule_tick(t0() + secs(10));
        got.sort();
        let mut want: Vec<(JobId, String)> = oracle_schedule(&jobs, &mems)
            .into_iter()
            .map(|(j, s)| (ids[j], format!("slot{}@h", s + 1)))
            .collect();
        want.sort();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn random_operations_keep_legal_trajectories(ops in prop::collection::vec((0u8..8, 0usize..4), 0..60)) {
        let mut lrm = Lrm::new(LrmConfig::new("h", 2), t0());
        let mut ids = Vec::new();
        let mut now = t0();
        for (op, k) in ops {
            now = now + secs(1);
            let pick = ids.get(k % ids.len().max(1)).copied();
            match (op, pick) {
                (0, _) => ids.push(lrm.submit(&hostname_job(), "u", now).unwrap().first()),
                (1, _) => { lrm.schedule_tick(now); }
                (2, Some(id)) => { let _ = lrm.complete(id, now, 0); }
                (3, Some(id)) => { let _ = lrm.remove(id, now); }
                (4, Some(id)) => { let _ = lrm.hold(id, "test", now); }
                (5, Some(id)) => { let _ = lrm.release(id, now); }
                (7, Some(id)) => { let _ = lrm.vacate(id, now); }
                (6, Some(id)) => { let _ = lrm.suspend(id, now).or_else(|_| lrm.resume(id, now)); }
                _ => {}
            }
            lrm.retire(now);
            let claimed = lrm.slots().iter().filter(|s| s.state == SlotState::Claimed).count();
            let holding = lrm.jobs().filter(|j| matches!(j.state, JobState::Running | JobState::Suspended)).count();
            prop_assert_eq!(claimed, holding);
            for s in lrm.slots() {
                prop_assert!(s.activity != Activity::Busy || s.state == SlotState::Claimed);
            }
        }
        for id in ids {
            let states: Vec<JobState> = lrm.transitions().iter().filter(|t| t.id == id).map(|t| t.to).collect();
            prop_assert!(check_trajectory(&states).is_ok(), "{:?}", states);
        }
    }
}
