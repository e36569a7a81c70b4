//! End-to-end acceptance checks on the in-process testbed. Prints one
//! PASS/FAIL line per criterion and exits non-zero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use minigrid::classad::Expr;
use minigrid::cli::{self, CommandOutput};
use minigrid::gsi::{self, CertificateAuthority, VerifyError, FUTURE_CERT_PHRASE};
use minigrid::jobspec::{parse_contact_string, split_args};
use minigrid::lrm::{Activity, SlotAd, SlotState};
use minigrid::testbed::HISTORY_FILE;
use minigrid::{
    Certificate, GramState, JobId, JobState, Lrm, LrmConfig, Scenario, Span, SubmitDescription, Testbed,
    TestbedConfig, Timestamp,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

const PAPER3: &str = include_str!("../../../configs/paper3.cfg");
const NEUTRAL: &str = include_str!("../../../configs/neutral.cfg");
const LOCAL_SUBMIT: &str = include_str!("../../../scenarios/local-submit.mgs");
const JOB_RUN: &str = include_str!("../../../scenarios/globus-job-run.mgs");
const GRID_UNIVERSE: &str = include_str!("../../../scenarios/grid-universe.mgs");

const SCENARIOS: [(&str, &str); 3] = [
    ("local-submit", LOCAL_SUBMIT),
    ("globus-job-run", JOB_RUN),
    ("grid-universe", GRID_UNIVERSE),
];

const CA_CONTACT: &str = "ca.it2.ddu.ac.in/jobmanager-condor";
const BUDGET: Duration = Duration::from_secs(5);

type Check = Result<(), String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn up(cfg: &str) -> Result<(Testbed, TempDir), String> {
    let dir = TempDir::new().map_err(|e| e.to_string())?;
    let cfg = TestbedConfig::parse(cfg).map_err(|e| e.to_string())?;
    let tb = Testbed::build(cfg, dir.path()).map_err(|e| e.to_string())?;
    Ok((tb, dir))
}

fn play(cfg: &str, script: &str) -> Result<(Testbed, TempDir, String), String> {
    let (mut tb, dir) = up(cfg)?;
    let scenario = Scenario::parse(script).map_err(|e| e.to_string())?;
    let transcript = tb.run_scenario(&scenario).map_err(|e| e.to_string())?;
    Ok((tb, dir, transcript))
}

/// Splits a transcript into (command line, output) pairs.
fn blocks(transcript: &str) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = Vec::new();
    for line in transcript.lines() {
        match line.split_once(":~$ ") {
            Some((_, cmd)) if !line.starts_with(' ') && line.contains('@') => {
                out.push((cmd.to_string(), String::new()))
            }
            _ => {
                if let Some((_, body)) = out.last_mut() {
                    body.push_str(line);
                    body.push('\n');
                }
            }
        }
    }
    out
}

fn output_of<'a>(blocks: &'a [(String, String)], prefix: &str) -> Vec<&'a str> {
    blocks
        .iter()
        .filter(|(c, _)| c.starts_with(prefix))
        .map(|(_, o)| o.as_str())
        .collect()
}

fn sh(tb: &mut Testbed, site: &str, user: &str, line: &str) -> CommandOutput {
    let argv = split_args(line).expect("well-formed command line");
    cli::execute(tb, site, user, &argv, "globus\n")
}

/// `Tue Feb  5 09:00:02 IST 2013`
fn is_date_line(line: &str) -> bool {
    let f: Vec<&str> = line.split_whitespace().collect();
    let days = ["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"];
    f.len() == 6
        && days.contains(&f[0])
        && f[1] == "Feb"
        && f[2].parse::<u32>().is_ok()
        && f[3].len() == 8
        && f[3].split(':').all(|p| p.len() == 2 && p.parse::<u32>().is_ok())
        && f[4] == "IST"
        && f[5] == "2013"
}

// ---- 1 ----

fn local_submit_round_trip() -> Check {
    let (tb, _dir, transcript) = play(PAPER3, LOCAL_SUBMIT)?;
    let b = blocks(&transcript);

    let submit = output_of(&b, "mg-submit");
    ensure!(submit.len() == 1, "expected one submit, got {}", submit.len());
    ensure!(
        submit[0].lines().any(|l| l == "1 job(s) submitted to cluster 1."),
        "ack missing:\n{}",
        submit[0]
    );

    let site = tb.site("grid-b").map_err(|e| e.to_string())?;
    let rows = site.lrm.query_history();
    ensure!(rows.len() == 1, "history has {} rows", rows.len());
    ensure!(rows[0].state == JobState::Completed, "history ST is {:?}", rows[0].state);
    ensure!(rows[0].cmd == "/bin/hostname", "history CMD is {}", rows[0].cmd);
    let history = output_of(&b, "mg-history");
    ensure!(
        history.iter().any(|h| h.lines().any(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            f.first() == Some(&"1.0") && f.get(5) == Some(&"C") && f.last() == Some(&"/bin/hostname")
        })),
        "no C row in mg-history output"
    );

    let out = tb.read_file("grid-b", "grid-b", "result.out").map_err(|e| e.to_string())?;
    let out = String::from_utf8_lossy(&out);
    let short = site.host().split('.').next().unwrap_or_default();
    ensure!(out == format!("{short}\n"), "result.out is {out:?}, host {}", site.host());

    let status = output_of(&b, "mg-status");
    ensure!(status.len() == 3, "expected three status calls, got {}", status.len());
    let totals = |s: &str| {
        s.lines()
            .rfind(|l| l.trim_start().starts_with("Total "))
            .map(|l| l.split_whitespace().collect::<Vec<_>>().join(" "))
    };
    let idle_pool = "Total 2 0 0 2 0 0 0";
    ensure!(totals(status[0]).as_deref() == Some(idle_pool), "initial totals {:?}", totals(status[0]));
    ensure!(
        totals(status[1]).as_deref() == Some("Total 2 0 1 1 0 0 0"),
        "busy totals {:?}",
        totals(status[1])
    );
    ensure!(
        status[0].lines().last() == status[2].lines().last(),
        "final totals line differs from the idle pool:\n{}\n{}",
        status[0],
        status[2]
    );
    ensure!(totals(status[2]).as_deref() == Some(idle_pool), "final totals {:?}", totals(status[2]));
    let exact = "               Total     2     0       0         2       0          0        0";
    ensure!(status[2].lines().last() == Some(exact), "final totals bytes {:?}", status[2].lines().last());
    Ok(())
}

// ---- 2 ----

fn remote_run() -> Check {
    let (tb, _dir, transcript) = play(PAPER3, JOB_RUN)?;
    let b = blocks(&transcript);

    let run = output_of(&b, "mg-job-run");
    ensure!(run.len() == 1, "expected one job run");
    let lines: Vec<&str> = run[0].lines().collect();
    ensure!(lines.len() == 1 && is_date_line(lines[0]), "job-run printed {:?}", run[0]);

    let ca = tb.site("ca").map_err(|e| e.to_string())?;
    let rows = ca.lrm.query_history();
    ensure!(rows.len() == 1, "ca history has {} rows", rows.len());
    ensure!(rows[0].cmd == "/bin/date", "ca history CMD is {}", rows[0].cmd);
    let persisted = minigrid::lrm::history::load(&ca.fs.real(HISTORY_FILE)).map_err(|e| e.to_string())?;
    ensure!(persisted.len() == 1, "history file has {} rows", persisted.len());

    let proxy = tb.load_proxy("grid-b", "gtuser").map_err(|e| e.to_string())?;
    let leaf = proxy.leaf();
    let validity = leaf.not_after - leaf.not_before;
    let twelve = Span::from_hours(12).millis();
    ensure!(
        (validity.millis() - twelve).abs() <= 1000,
        "proxy validity {}",
        validity.hms()
    );
    let info = output_of(&b, "mg-proxy-info");
    ensure!(
        info.len() == 1 && info[0].contains("timeleft : 12:00:00"),
        "proxy-info output {:?}",
        info
    );
    Ok(())
}

// ---- 3 ----

fn grid_universe_lifecycle() -> Check {
    let (_tb, _dir, transcript) = play(PAPER3, GRID_UNIVERSE)?;
    let b = blocks(&transcript);
    let watch = output_of(&b, "mg-q --watch 2");
    ensure!(watch.len() == 1, "expected one watch");

    let frames: Vec<&str> = watch[0].lines().filter(|l| l.starts_with("Every ")).collect();
    ensure!(
        frames.iter().all(|l| l.starts_with("Every 2.0s: mg-q")),
        "frames not 2 s apart: {frames:?}"
    );
    let mut seen: Vec<&str> = Vec::new();
    for line in watch[0].lines().filter(|l| l.contains(" jobs; ")) {
        if seen.last() != Some(&line) {
            seen.push(line);
        }
    }
    let want = [
        "1 jobs; 0 completed, 0 removed, 1 idle, 0 running, 0 held, 0 suspended",
        "1 jobs; 0 completed, 0 removed, 0 idle, 1 running, 0 held, 0 suspended",
        "1 jobs; 1 completed, 0 removed, 0 idle, 0 running, 0 held, 0 suspended",
        "0 jobs; 0 completed, 0 removed, 0 idle, 0 running, 0 held, 0 suspended",
    ];
    ensure!(seen == want, "summary sequence {seen:#?}");
    Ok(())
}

// ---- 4 ----

fn adapter_neutrality() -> Check {
    let (mut tb, _dir) = up(NEUTRAL)?;
    tb.proxy_init("ca", "gtuser", "globus", Span::from_hours(12))
        .map_err(|e| e.to_string())?;
    let condor = parse_contact_string("ca.it2.ddu.ac.in/jobmanager-condor").map_err(|e| e.to_string())?;
    let sge = parse_contact_string("sge.it2.ddu.ac.in/jobmanager-sge").map_err(|e| e.to_string())?;

    let args: Vec<String> = ["same", "bytes", "everywhere"].map(String::from).to_vec();
    let a = tb.job_run("ca", "gtuser", &condor, "/bin/echo", &args).map_err(|e| e.to_string())?;
    let b = tb.job_run("ca", "gtuser", &sge, "/bin/echo", &args).map_err(|e| e.to_string())?;
    ensure!(a.output("stdout") == b"same bytes everywhere\n", "condor stdout {:?}", a.output("stdout"));
    ensure!(a.output("stdout") == b.output("stdout"), "stdout differs");
    ensure!(a.output("stderr") == b.output("stderr"), "stderr differs");
    ensure!(
        a.state == GramState::Done && b.state == GramState::Done,
        "states {:?} {:?}",
        a.state,
        b.state
    );

    let h1 = tb.start_job_run("ca", "gtuser", &condor, "/bin/date", &[]).map_err(|e| e.to_string())?;
    let h2 = tb.start_job_run("ca", "gtuser", &sge, "/bin/date", &[]).map_err(|e| e.to_string())?;
    let mut done = (None, None);
    for _ in 0..200 {
        tb.advance(Span::from_millis(500));
        done = (tb.job_run_result(h1), tb.job_run_result(h2));
        if done.0.is_some() && done.1.is_some() {
            break;
        }
    }
    let (Some(Ok(a)), Some(Ok(b))) = done else {
        return Err(format!("concurrent runs did not both finish: {done:?}"));
    };
    ensure!(a.output("stdout") == b.output("stdout"), "date output differs");
    ensure!(a.state == GramState::Done && b.state == GramState::Done, "concurrent states");
    Ok(())
}

// ---- 5 ----

struct FaultCase {
    kind: &'static str,
    target: &'static str,
    value: &'static str,
    code: &'static str,
    needle: &'static str,
}

const FAULTS: [FaultCase; 6] = [
    FaultCase {
        kind: "clock_skew",
        target: "grid-b",
        value: "300",
        code: "FutureCertificate",
        needle: FUTURE_CERT_PHRASE,
    },
    FaultCase {
        kind: "drop_proxy",
        target: "grid-b",
        value: "",
        code: "NoProxyFound",
        needle: "hint: create a proxy credential with mg-proxy-init",
    },
    FaultCase {
        kind: "adapter_version_mismatch",
        target: "ca",
        value: "",
        code: "VersionMismatch",
        needle: "hint:",
    },
    FaultCase {
        kind: "kill_adapter",
        target: "ca",
        value: "",
        code: "Timeout",
        needle: "hint:",
    },
    FaultCase {
        kind: "corrupt_transfer",
        target: "ca",
        value: "",
        code: "DigestMismatch",
        needle: "hint:",
    },
    FaultCase {
        kind: "partition",
        target: "ca",
        value: "",
        code: "Timeout",
        needle: "hint:",
    },
];

fn remote_date(tb: &mut Testbed) -> CommandOutput {
    sh(tb, "grid-b", "gtuser", &format!("mg-job-run {CA_CONTACT} /bin/date"))
}

fn fault_taxonomy() -> Check {
    for case in &FAULTS {
        let (mut tb, _dir) = up(PAPER3)?;
        let init = sh(&mut tb, "grid-b", "gtuser", "mg-proxy-init");
        ensure!(init.code == 0, "proxy-init failed: {}", init.stderr);

        let inject = format!("mg-testbed fault {} {} {}", case.kind, case.target, case.value);
        let r = sh(&mut tb, "ca", "ca", inject.trim());
        ensure!(r.code == 0, "{}: inject failed: {}", case.kind, r.stderr);

        let failed = remote_date(&mut tb);
        let tag = format!("error [{}]", case.code);
        ensure!(
            failed.code != 0 && failed.stderr.contains(&tag),
            "{}: expected {tag}, got code {} stderr {:?}",
            case.kind,
            failed.code,
            failed.stderr
        );
        ensure!(
            failed.code == cli::exit_code_for(case.code),
            "{}: exit code {}",
            case.kind,
            failed.code
        );
        ensure!(
            failed.stderr.contains(case.needle),
            "{}: {:?} missing from {:?}",
            case.kind,
            case.needle,
            failed.stderr
        );
        let codes: Vec<&str> = FAULTS.iter().map(|f| f.code).filter(|c| *c != case.code).collect();
        ensure!(
            !codes.iter().any(|c| failed.stderr.contains(&format!("[{c}]"))),
            "{}: more than one code in {:?}",
            case.kind,
            failed.stderr
        );

        let clear = sh(&mut tb, "ca", "ca", &format!("mg-testbed fault {} {} --clear", case.kind, case.target));
        ensure!(clear.stdout.contains("cleared"), "{}: clear said {:?}", case.kind, clear.stdout);
        let ok = remote_date(&mut tb);
        let lines: Vec<&str> = ok.stdout.lines().collect();
        ensure!(
            ok.code == 0 && lines.len() == 1 && is_date_line(lines[0]),
            "{}: after clearing, job-run gave code {} {:?} {:?}",
            case.kind,
            ok.code,
            ok.stdout,
            ok.stderr
        );
    }
    Ok(())
}

// ---- 6 ----

#[derive(Debug, Clone)]
enum Req {
    True,
    MemAtLeast(i64),
    MemBelow(i64),
    ArchIs(&'static str),
    ArchIsNot(&'static str),
    And(Box<Req>, Box<Req>),
    Or(Box<Req>, Box<Req>),
}

const ARCHES: [&str; 2] = ["INTEL", "X86_64"];
const MEMORIES: [i64; 5] = [256, 512, 1001, 2048, 4096];

impl Req {
    fn random(rng: &mut ChaCha8Rng, depth: u32) -> Req {
        let leaf = depth == 0 || rng.gen_bool(0.5);
        if leaf {
            match rng.gen_range(0..5) {
                0 => Req::True,
                1 => Req::MemAtLeast(MEMORIES[rng.gen_range(0..MEMORIES.len())] + rng.gen_range(-1..=1)),
                2 => Req::MemBelow(MEMORIES[rng.gen_range(0..MEMORIES.len())] + rng.gen_range(-1..=1)),
                3 => Req::ArchIs(ARCHES[rng.gen_range(0..2)]),
                _ => Req::ArchIsNot(ARCHES[rng.gen_range(0..2)]),
            }
        } else {
            let a = Box::new(Req::random(rng, depth - 1));
            let b = Box::new(Req::random(rng, depth - 1));
            if rng.gen_bool(0.5) {
                Req::And(a, b)
            } else {
                Req::Or(a, b)
            }
        }
    }

    fn text(&self) -> String {
        match self {
            Req::True => "TRUE".into(),
            Req::MemAtLeast(m) => format!("TARGET.Memory >= {m}"),
            Req::MemBelow(m) => format!("TARGET.Memory < {m}"),
            Req::ArchIs(a) => format!("TARGET.Arch == \"{a}\""),
            Req::ArchIsNot(a) => format!("TARGET.Arch != \"{a}\""),
            Req::And(a, b) => format!("({}) && ({})", a.text(), b.text()),
            Req::Or(a, b) => format!("({}) || ({})", a.text(), b.text()),
        }
    }

    fn holds(&self, memory: i64, arch: &str) -> bool {
        match self {
            Req::True => true,
            Req::MemAtLeast(m) => memory >= *m,
            Req::MemBelow(m) => memory < *m,
            Req::ArchIs(a) => arch == *a,
            Req::ArchIsNot(a) => arch != *a,
            Req::And(a, b) => a.holds(memory, arch) && b.holds(memory, arch),
            Req::Or(a, b) => a.holds(memory, arch) || b.holds(memory, arch),
        }
    }
}

struct RefJob {
    priority: i64,
    submitted: i64,
    req: Req,
    rank_memory: bool,
}

/// Every idle job in priority, submit-time, id order takes the free
/// matching slot with the highest rank, lowest index on ties.
fn reference_schedule(jobs: &[RefJob], slots: &[(i64, &str)]) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..jobs.len()).collect();
    order.sort_by(|&a, &b| {
        jobs[b]
            .priority
            .cmp(&jobs[a].priority)
            .then(jobs[a].submitted.cmp(&jobs[b].submitted))
            .then(a.cmp(&b))
    });
    let mut taken = vec![false; slots.len()];
    let mut plan = Vec::new();
    for j in order {
        let mut best: Option<(i64, usize)> = None;
        for (s, &(memory, arch)) in slots.iter().enumerate() {
            if taken[s] || !jobs[j].req.holds(memory, arch) {
                continue;
            }
            let rank = if jobs[j].rank_memory { memory } else { 0 };
            if best.is_none_or(|(r, _)| rank > r) {
                best = Some((rank, s));
            }
        }
        if let Some((_, s)) = best {
            taken[s] = true;
            plan.push((j, s));
        }
    }
    plan
}

fn scheduler_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let t0 = Timestamp::ymd_hms(2013, 2, 13, 13, 0, 0);
    let mut mismatches = 0;
    let mut first = None;
    for instance in 0..500 {
        let n_slots = rng.gen_range(1..=6);
        let n_jobs = rng.gen_range(0..=6);
        let slots: Vec<(i64, &str)> = (0..n_slots)
            .map(|_| (MEMORIES[rng.gen_range(0..MEMORIES.len())], ARCHES[rng.gen_range(0..2)]))
            .collect();
        let jobs: Vec<RefJob> = (0..n_jobs)
            .map(|_| RefJob {
                priority: rng.gen_range(0..3),
                submitted: rng.gen_range(0..4),
                req: Req::random(&mut rng, 2),
                rank_memory: rng.gen_bool(0.5),
            })
            .collect();

        let mut lrm = Lrm::new(LrmConfig::new("h", 0), t0);
        lrm.set_slots(
            slots
                .iter()
                .enumerate()
                .map(|(i, &(memory, arch))| SlotAd {
                    name: format!("slot{}@h", i + 1),
                    opsys: "LINUX".into(),
                    arch: arch.into(),
                    state: SlotState::Unclaimed,
                    activity: Activity::Idle,
                    load_avg: 0.0,
                    memory,
                    activity_since: t0,
                })
                .collect(),
        );
        let mut ids = Vec::new();
        for j in &jobs {
            let mut sd = SubmitDescription::vanilla("/bin/true");
            sd.priority = j.priority;
            let text = j.req.text();
            ensure!(Expr::parse(&text).is_ok(), "generated requirement {text:?} does not parse");
            sd.requirements = Some(text);
            sd.rank = j.rank_memory.then(|| "TARGET.Memory".to_string());
            let id = lrm
                .submit(&sd, "u", t0 + Span::from_secs(j.submitted))
                .map_err(|e| e.to_string())?
                .first();
            ids.push(id);
        }
        let mut got: Vec<(JobId, String)> = lrm.schedule_tick(t0 + Span::from_secs(10));
        got.sort();
        let mut want: Vec<(JobId, String)> = reference_schedule(&jobs, &slots)
            .into_iter()
            .map(|(j, s)| (ids[j], format!("slot{}@h", s + 1)))
            .collect();
        want.sort();
        if got != want {
            mismatches += 1;
            first.get_or_insert(format!("instance {instance}: got {got:?}, want {want:?}"));
        }
    }
    ensure!(mismatches == 0, "{mismatches} mismatches; first {}", first.unwrap_or_default());
    Ok(())
}

// ---- 7 ----

/// Edges of the job state graph by state letter.
const LEGAL: [&str; 11] = ["IR", "IX", "IH", "RC", "RI", "RS", "RX", "SR", "SX", "HI", "HX"];

/// Rebuilds each job's state sequence from a site's lrm log.
fn replay_lrm_log(text: &str) -> Result<BTreeMap<String, Vec<(char, char)>>, String> {
    let mut jobs: BTreeMap<String, Vec<(char, char)>> = BTreeMap::new();
    for line in text.lines() {
        let f: Vec<&str> = line.split_whitespace().collect();
        let Some(edge) = f.last().filter(|e| e.len() == 4 && &e[1..3] == "->") else {
            continue;
        };
        let id = f.len().checked_sub(2).map(|i| f[i]).ok_or("short log line")?;
        let c: Vec<char> = edge.chars().collect();
        jobs.entry(id.to_string()).or_default().push((c[0], c[3]));
    }
    Ok(jobs)
}

fn trajectory_is_legal(edges: &[(char, char)]) -> Result<(), String> {
    let Some(&(first_from, first_to)) = edges.first() else {
        return Ok(());
    };
    if (first_from, first_to) != ('-', 'I') {
        return Err(format!("job did not start Idle: {first_from}->{first_to}"));
    }
    for w in edges.windows(2) {
        if w[0].1 != w[1].0 {
            return Err(format!("gap between {:?} and {:?}", w[0], w[1]));
        }
    }
    for &(from, to) in &edges[1..] {
        if !LEGAL.contains(&format!("{from}{to}").as_str()) {
            return Err(format!("illegal transition {from}->{to}"));
        }
    }
    Ok(())
}

fn check_logs(run_dir: &Path, label: &str) -> Result<usize, String> {
    let mut jobs = 0;
    let logs = fs::read_dir(run_dir.join("logs")).map_err(|e| e.to_string())?;
    for site in logs {
        let site = site.map_err(|e| e.to_string())?;
        let Ok(text) = fs::read_to_string(site.path().join("lrm.log")) else {
            continue;
        };
        for (id, edges) in replay_lrm_log(&text)? {
            trajectory_is_legal(&edges)
                .map_err(|e| format!("{label} {} job {id}: {e}", site.file_name().to_string_lossy()))?;
            jobs += 1;
        }
    }
    Ok(jobs)
}

fn state_machine_safety() -> Check {
    let mut jobs = 0;
    for (name, script) in SCENARIOS {
        let (_tb, dir, _) = play(PAPER3, script)?;
        jobs += check_logs(dir.path(), name)?;
    }
    let hold_and_remove = "\
at 0 gtuser@grid-b mg-proxy-init
file gtuser@grid-b g.sub <<END
Universe = Globus
grid_resource = gt5 grid-v.it2.ddu.ac.in/jobmanager-condor
Executable = /bin/sleep
Arguments = 30
Queue
END
file gtuser@grid-b v.sub <<END
Executable = /bin/sleep
Arguments = 30
Queue 3
END
at 1 gtuser@grid-b mg-submit v.sub
at 1 gtuser@grid-b mg-submit g.sub
at 4 gtuser@grid-b mg-rm 1.2
at 5 gtuser@grid-b mg-rm 1.0
at 6 gtuser@grid-b mg-rm 2.0
at 60 gtuser@grid-b mg-q
";
    let (_tb, dir, transcript) = play(PAPER3, hold_and_remove)?;
    ensure!(transcript.contains("marked for removal"), "removals did not run:\n{transcript}");
    jobs += check_logs(dir.path(), "hold-and-remove")?;
    ensure!(jobs >= 9, "only {jobs} job trajectories replayed");
    Ok(())
}

// ---- 8 ----

fn flip_bit(cert: &Certificate, rng: &mut ChaCha8Rng) -> Option<Certificate> {
    let mut bytes = cert.canonical();
    let i = rng.gen_range(0..bytes.len());
    bytes[i] ^= 1 << rng.gen_range(0..8);
    Certificate::from_canonical(&bytes).ok()
}

fn credential_properties() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let base = Timestamp::ymd_hms(2013, 2, 5, 9, 0, 0);
    let (mut false_accepts, mut false_rejects, mut tampered) = (0, 0, 0);
    for trial in 0..1000 {
        let created = base + Span::from_secs(rng.gen_range(0..86_400));
        let ca = CertificateAuthority::create(&format!("ca{trial}"), created, &mut rng).map_err(|e| e.to_string())?;
        let issued = created + Span::from_secs(rng.gen_range(0..3600));
        let cert_life = Span::from_hours(rng.gen_range(1..=24 * 365));
        let (cert, key) = ca
            .issue_cert(&gsi::user_dn(&ca.name, "Trial User"), cert_life, "pw", issued, &mut rng)
            .map_err(|e| e.to_string())?;
        let proxy_at = issued + Span::from_secs(rng.gen_range(0..60));
        let mut proxy = gsi::proxy_init(&cert, &key, "pw", Span::from_hours(rng.gen_range(1..=24)), proxy_at, &mut rng)
            .map_err(|e| e.to_string())?;
        for _ in 0..rng.gen_range(0..=2) {
            let at = proxy.leaf().not_before + Span::from_secs(rng.gen_range(0..30));
            proxy = proxy.delegate(at, Span::from_hours(6), &mut rng).map_err(|e| e.to_string())?;
        }
        let chain = proxy.chain.clone();
        let anchors = [ca.root.clone()];
        let lo = chain.iter().map(|c| c.not_before).max().expect("non-empty");
        let hi = chain.iter().map(|c| c.not_after).min().expect("non-empty");
        let now = Timestamp::from_millis(rng.gen_range(lo.millis()..=hi.millis()));

        if gsi::verify_chain(&chain, &anchors, now, Span::ZERO).is_err() {
            false_rejects += 1;
        }

        let victim = rng.gen_range(0..chain.len());
        tampered += 1;
        if let Some(bad) = flip_bit(&chain[victim], &mut rng) {
            let mut forged = chain.clone();
            forged[victim] = bad;
            if forged != chain && gsi::verify_chain(&forged, &anchors, now, Span::ZERO).is_ok() {
                false_accepts += 1;
            }
        }
        let bad_root = flip_bit(&ca.root, &mut rng).filter(|r| *r != ca.root);
        if let Some(root) = bad_root {
            if gsi::verify_chain(&chain, &[root], now, Span::ZERO).is_ok() {
                false_accepts += 1;
            }
        }
    }
    ensure!(false_rejects == 0, "{false_rejects} false rejects");
    ensure!(false_accepts == 0, "{false_accepts} false accepts");
    ensure!(tampered == 1000, "{tampered} tampering trials");

    let ca = CertificateAuthority::create("skewca", base - Span::from_hours(24), &mut rng).map_err(|e| e.to_string())?;
    let (cert, key) = ca
        .issue_cert(&gsi::user_dn("skewca", "Skew User"), Span::from_hours(48), "pw", base - Span::from_hours(1), &mut rng)
        .map_err(|e| e.to_string())?;
    let proxy = gsi::proxy_init(&cert, &key, "pw", Span::from_hours(12), base, &mut rng).map_err(|e| e.to_string())?;
    let anchors = [ca.root.clone()];
    let skew = Span::from_secs(60);
    let one = Span::from_secs(1);
    let verify = |now: Timestamp| gsi::verify_chain(&proxy.chain, &anchors, now, skew);
    let nb = proxy.leaf().not_before;
    let na = proxy.leaf().not_after;
    ensure!(verify(nb - skew + one).is_ok(), "rejected {} early at max_skew - 1 s", (skew - one).secs());
    ensure!(verify(nb - skew).is_ok(), "rejected at exactly max_skew early");
    ensure!(
        matches!(verify(nb - skew - one), Err(VerifyError::FutureCertificate { .. })),
        "accepted max_skew + 1 s early"
    );
    ensure!(verify(na + skew - one).is_ok(), "rejected at max_skew - 1 s late");
    ensure!(
        matches!(verify(na + skew + one), Err(VerifyError::Expired { .. })),
        "accepted max_skew + 1 s late"
    );

    for (offset, ok) in [("59", true), ("61", false)] {
        let (mut tb, _dir) = up(PAPER3)?;
        sh(&mut tb, "grid-b", "gtuser", "mg-proxy-init");
        sh(&mut tb, "ca", "ca", &format!("mg-testbed fault clock_skew grid-b {offset}"));
        let r = remote_date(&mut tb);
        ensure!(
            (r.code == 0) == ok,
            "testbed skew {offset}s against max_skew 60: code {} {:?}",
            r.code,
            r.stderr
        );
        if !ok {
            ensure!(r.stderr.contains("[FutureCertificate]"), "skew 61s gave {:?}", r.stderr);
        }
    }
    Ok(())
}

// ---- 9 ----

fn determinism() -> Check {
    for (name, script) in SCENARIOS {
        let (tb1, _d1, a) = play(PAPER3, script)?;
        let (tb2, _d2, b) = play(PAPER3, script)?;
        ensure!(!a.is_empty(), "{name}: empty transcript");
        if a != b {
            let line = a.lines().zip(b.lines()).position(|(x, y)| x != y).unwrap_or(0);
            return Err(format!("{name}: transcripts differ at line {}", line + 1));
        }
        ensure!(tb1.trace() == tb2.trace(), "{name}: event traces differ");
    }
    Ok(())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("local submit round trip", local_submit_round_trip),
        ("remote run through the gatekeeper", remote_run),
        ("grid universe queue lifecycle", grid_universe_lifecycle),
        ("adapter neutrality", adapter_neutrality),
        ("fault taxonomy", fault_taxonomy),
        ("scheduler against reference", scheduler_oracle),
        ("state machine safety", state_machine_safety),
        ("credential properties", credential_properties),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        let result = result.and_then(|()| {
            if took <= BUDGET {
                Ok(())
            } else {
                Err(format!("took {:.2}s, over the {}s budget", took.as_secs_f64(), BUDGET.as_secs()))
            }
        });
        match result {
            Ok(()) => println!("criterion {}: PASS {name} ({:.2}s)", i + 1, took.as_secs_f64()),
            Err(e) => {
                failed += 1;
                println!("criterion {}: FAIL {name} ({:.2}s): {e}", i + 1, took.as_secs_f64());
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
