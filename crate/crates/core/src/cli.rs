//! The `mg` command suite. Commands run against a [`Testbed`] and return
//! their rendered output, so the same code serves scenarios, tests and the
//! `mg` binary.
//!
//! Each tool is reachable as `mg <tool>` or through an `mg-<tool>` alias.

use std::fmt::Write;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::gsi::DEFAULT_PROXY_LIFETIME;
use crate::jobspec::parse_contact_string;
use crate::lrm::{render_history, render_queue, render_status, JobId};
use crate::testbed::{FaultKind, FaultSpec, Testbed, TestbedError};
use crate::time::Span;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_AUTH: i32 = 3;
pub const EXIT_REMOTE: i32 = 4;
pub const EXIT_TIMEOUT: i32 = 5;

/// Watch frames rendered before giving up on an ever-busy queue.
const MAX_WATCH_FRAMES: usize = 1000;

#[derive(Debug, Parser)]
#[command(name = "mg", version, about = "minigrid command suite")]
pub struct Cli {
    /// Site to run on (name or host).
    #[arg(long, global = true)]
    pub site: Option<String>,
    /// Account to act as.
    #[arg(long = "as-user", global = true)]
    pub as_user: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Slots of a pool and their totals.
    Status { pool: Option<String> },
    /// Queue the jobs of a submit file.
    Submit { file: String },
    /// Jobs in the local queue.
    Q {
        /// Re-render every N seconds until the queue is empty.
        #[arg(long, value_name = "N")]
        watch: Option<u32>,
    },
    /// Finished jobs, newest first.
    History,
    /// Remove a queued job.
    Rm { id: String },
    /// Create a proxy credential from the user certificate.
    #[command(name = "proxy-init")]
    ProxyInit {
        #[arg(long)]
        debug: bool,
        #[arg(long)]
        verify: bool,
    },
    /// Show the current proxy credential.
    #[command(name = "proxy-info")]
    ProxyInfo,
    /// Run a command on a remote gatekeeper and print its output.
    #[command(name = "job-run")]
    JobRun {
        contact: String,
        #[arg(required = true, trailing_var_arg = true, allow_hyphen_values = true)]
        command: Vec<String>,
    },
    /// Certificate authority administration.
    Ca {
        #[command(subcommand)]
        action: CaAction,
    },
    /// Testbed administration.
    Testbed {
        #[command(subcommand)]
        action: TestbedAction,
    },
}

#[derive(Debug, Subcommand)]
pub enum CaAction {
    /// Create the CA on this site.
    Init,
    /// Issue a user certificate; the key pass phrase is read from stdin.
    Sign {
        user: String,
        #[arg(required = true, trailing_var_arg = true)]
        common_name: Vec<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum TestbedAction {
    /// Start the sites described by a config file.
    Up { config: String },
    /// Stop the testbed.
    Down,
    /// Inject, clear or list faults (`fault list`).
    Fault {
        kind: String,
        node: Option<String>,
        #[arg(allow_negative_numbers = true)]
        value: Option<String>,
        #[arg(long)]
        clear: bool,
        /// Clear automatically after this many seconds.
        #[arg(long = "for", value_name = "SECS")]
        duration: Option<u32>,
    },
}

/// What one invocation printed and its exit status.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CommandOutput {
    pub stdout: String,
    pub stderr: String,
    pub code: i32,
}

/// Rewrites `mg-<tool> args` into `mg <tool> args` and the single-dash
/// long flags the proxy tools accept.
pub fn normalize_argv(argv: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(argv.len() + 1);
    let Some(first) = argv.first() else {
        return vec!["mg".into()];
    };
    let base = first.rsplit('/').next().unwrap_or(first);
    match base.strip_prefix("mg-") {
        Some(tool) => {
            out.push("mg".to_string());
            out.push(tool.to_string());
        }
        None => out.push("mg".to_string()),
    }
    for a in &argv[1..] {
        match a.as_str() {
            "-debug" => out.push("--debug".into()),
            "-verify" => out.push("--verify".into()),
            _ => out.push(a.clone()),
        }
    }
    out
}

pub fn parse(argv: &[String]) -> Result<Cli, clap::Error> {
    Cli::try_parse_from(normalize_argv(argv))
}

/// Program name for messages, e.g. `mg-submit`.
pub fn tool_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Status { .. } => "mg-status",
        Command::Submit { .. } => "mg-submit",
        Command::Q { .. } => "mg-q",
        Command::History => "mg-history",
        Command::Rm { .. } => "mg-rm",
        Command::ProxyInit { .. } => "mg-proxy-init",
        Command::ProxyInfo => "mg-proxy-info",
        Command::JobRun { .. } => "mg-job-run",
        Command::Ca { .. } => "mg-ca",
        Command::Testbed { .. } => "mg-testbed",
    }
}

/// A failure with its stable code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: String,
    pub message: String,
}

impl CliError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        CliError {
            code: code.to_string(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        exit_code_for(&self.code)
    }

    /// `tool: error [Code]: message` followed by a `hint:` line.
    pub fn render(&self, tool: &str) -> String {
        format!(
            "{tool}: error [{}]: {}\nhint: {}\n",
            self.code,
            self.message,
            remediation(&self.code)
        )
    }
}

impl From<TestbedError> for CliError {
    fn from(e: TestbedError) -> Self {
        CliError::new(e.code(), e.to_string())
    }
}

pub fn exit_code_for(code: &str) -> i32 {
    match code {
        "Timeout" | "ContactLost" => EXIT_TIMEOUT,
        "NoProxyFound" | "ProxyExpired" | "BadPassphrase" | "NoUserCert" | "UserCertExpired"
        | "UserCertNotYetValid" | "FutureCertificate" | "Expired"
        | "UnknownIssuer" | "BadSignature" | "InvalidProxy" | "EmptyChain" | "AuthFailed"
        | "NotAuthorized" | "IdentityMismatch" => EXIT_AUTH,
        "Usage" | "MalformedContact" | "UnknownTarget" | "NoSuchFile" | "BadJobId"
        | "UnknownFault" | "MissingQueue" | "UnknownUniverse" | "MalformedGridResource"
        | "GlobusWithoutGridResource" | "GridResourceWithoutGlobus" | "MissingExecutable"
        | "MalformedLine" | "BadQueueCount" | "AfterQueue" | "BadExpression" | "BadArguments"
        | "BadPriority" | "ConfigError" | "DuplicateSiteName" | "NoCaRole" | "NoSlots" | "ScriptError"
        | "UnknownDialect" | "InvalidDn" | "InvalidLifetime" | "PathEscape" => EXIT_USAGE,
        _ => EXIT_REMOTE,
    }
}

/// One line telling the user what to do about an error code.
pub fn remediation(code: &str) -> &'static str {
    match code {
        "NoProxyFound" => "create a proxy credential with mg-proxy-init, then retry",
        "ProxyExpired" => "the proxy has expired; run mg-proxy-init again",
        "BadPassphrase" => "re-enter the GRID pass phrase for your user key",
        "NoUserCert" => "ask the CA administrator to issue a certificate with mg-ca sign",
        "UserCertExpired" | "UserCertNotYetValid" => {
            "check this node's clock against the CA, or request a new certificate"
        }
        "FutureCertificate" | "Expired" => {
            "synchronize the clocks of the submit and gatekeeper nodes against a reference time server"
        }
        "UnknownIssuer" | "BadSignature" | "InvalidProxy" | "EmptyChain" | "AuthFailed" => {
            "install the CA certificate in the trusted certificates directory and recreate the proxy"
        }
        "NotAuthorized" | "IdentityMismatch" => {
            "ask the site administrator to map your certificate subject in the grid-mapfile"
        }
        "VersionMismatch" => {
            "install matching middleware versions on the submit and execute nodes; see the gatekeeper log"
        }
        "UnknownJobmanager" => "check the jobmanager name in the contact string",
        "AdapterFailure" => "check the gatekeeper and LRM logs on the execute site",
        "Timeout" | "ContactLost" => {
            "check that the gatekeeper host is reachable and its LRM adapter is running; see the gatekeeper log"
        }
        "DigestMismatch" | "SizeMismatch" => "a file was corrupted in transfer; resubmit the job",
        "MissingSource" => "check that every staged file exists on the submit node",
        "MalformedContact" => "use a contact string of the form host[:port]/jobmanager-<lrm>",
        "PoolUnreachable" => "check the pool name, or start the testbed with mg-testbed up",
        "UnknownJob" => "list current jobs with mg-q",
        "IllegalTransition" => "the job is not in a state that allows this operation; check mg-q",
        "AlreadyInitialized" => "the CA already exists; issue certificates with mg-ca sign",
        "NotInitialized" => "create the CA with mg-ca init on the CA site",
        "UnknownTarget" => "name a site or host defined in the testbed config",
        "NoSuchFile" => "check the file path; relative paths start in your home directory",
        "Usage" | "BadJobId" | "UnknownFault" => "run with --help for usage",
        "ConfigError" => "fix the testbed config file",
        "SpoolFailure" => "check that the executable exists on the submit node",
        "NotGridUniverse" => "set Universe = Globus and a grid_resource line",
        _ if exit_code_for(code) == EXIT_USAGE => "fix the submit file and resubmit",
        _ => "see the daemon logs under the testbed run directory",
    }
}

/// Output for a command line that did not parse: help and version text go
/// to stdout with status 0, anything else is a usage error.
pub fn parse_failure(e: &clap::Error) -> CommandOutput {
    let text = e.render().to_string();
    match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => CommandOutput {
            stdout: text,
            stderr: String::new(),
            code: EXIT_OK,
        },
        _ => CommandOutput {
            stdout: String::new(),
            stderr: format!("{text}hint: {}\n", remediation("Usage")),
            code: EXIT_USAGE,
        },
    }
}

/// Runs one command line as `user` on `site`. `stdin` supplies pass
/// phrases.
pub fn execute(tb: &mut Testbed, site: &str, user: &str, argv: &[String], stdin: &str) -> CommandOutput {
    let cli = match parse(argv) {
        Ok(c) => c,
        Err(e) => return parse_failure(&e),
    };
    let site = cli.site.clone().unwrap_or_else(|| site.to_string());
    let user = cli.as_user.clone().unwrap_or_else(|| user.to_string());
    let tool = tool_name(&cli.command);
    let mut stdout = String::new();
    let mut stderr = String::new();
    match run(tb, &site, &user, &cli.command, stdin, &mut stdout, &mut stderr) {
        Ok(()) => CommandOutput { stdout, stderr, code: EXIT_OK },
        Err(e) => {
            stderr.push_str(&e.render(tool));
            CommandOutput {
                stdout,
                stderr,
                code: e.exit_code(),
            }
        }
    }
}

/// One line per site, as printed when a testbed comes up.
pub fn announce(tb: &Testbed) -> String {
    let mut out = String::new();
    for s in tb.sites() {
        let r = s.spec.roles;
        let roles: Vec<&str> = [(r.lrm, "lrm"), (r.gatekeeper, "gatekeeper"), (r.ca, "ca")]
            .into_iter()
            .filter_map(|(on, n)| on.then_some(n))
            .collect();
        writeln!(
            out,
            "site {} up: {} slots={} dialect={} skew={:+}s roles={}",
            s.name(),
            s.host(),
            s.spec.slots,
            s.spec.dialect.name(),
            s.spec.skew.secs(),
            roles.join(",")
        )
        .unwrap();
    }
    out
}

fn first_line(stdin: &str) -> &str {
    stdin.lines().next().unwrap_or("").trim_end_matches('\r')
}

fn run(
    tb: &mut Testbed,
    site: &str,
    user: &str,
    cmd: &Command,
    stdin: &str,
    out: &mut String,
    err: &mut String,
) -> Result<(), CliError> {
    match cmd {
        Command::Status { pool } => {
            let target = pool.as_deref().unwrap_or(site);
            let s = tb
                .site(target)
                .map_err(|_| CliError::new("PoolUnreachable", format!("cannot reach pool {target}")))?;
            out.push_str(&render_status(&s.lrm.query_status(), tb.local_now(s.name())));
        }
        Command::Submit { file } => {
            let sub = tb.submit(site, user, file)?;
            out.push_str("Submitting job(s).\n");
            writeln!(out, "{}", sub.ack()).unwrap();
        }
        Command::Q { watch: None } => {
            let s = tb.site(site)?;
            out.push_str(&render_queue(&s.lrm.query_queue(tb.local_now(s.name())), s.host()));
        }
        Command::Q { watch: Some(n) } => {
            let n = (*n).max(1);
            let name = tb.site(site)?.name().to_string();
            for frame in 0..MAX_WATCH_FRAMES {
                if frame > 0 {
                    tb.advance(Span::from_secs(n.into()));
                    out.push('\n');
                }
                let s = tb.site(&name)?;
                let now = tb.local_now(&name);
                let snap = s.lrm.query_queue(now);
                writeln!(out, "Every {n}.0s: mg-q  {}\n", now.ctime()).unwrap();
                out.push_str(&render_queue(&snap, s.host()));
                if snap.summary.total() == 0 {
                    break;
                }
            }
        }
        Command::History => {
            let s = tb.site(site)?;
            out.push_str(&render_history(&s.lrm.query_history()));
        }
        Command::Rm { id } => {
            let job: JobId = id
                .parse()
                .map_err(|_| CliError::new("BadJobId", format!("{id:?} is not a job id")))?;
            tb.remove(site, job)?;
            writeln!(out, "Job {job} marked for removal").unwrap();
        }
        Command::ProxyInit { debug, verify } => {
            let pass = first_line(stdin);
            let r = tb.proxy_init(site, user, pass, DEFAULT_PROXY_LIFETIME)?;
            if *debug {
                writeln!(out, "User Cert File: {}", r.cert_file).unwrap();
                writeln!(out, "User Key File: {}", r.key_file).unwrap();
                writeln!(out, "Trusted CA Cert Dir: {}", r.trust_dir).unwrap();
                writeln!(out, "Output File: {}", r.output_file).unwrap();
            }
            writeln!(out, "Your identity: {}", r.identity).unwrap();
            out.push_str("Enter GRID pass phrase for this identity:\n");
            out.push_str("Creating proxy .....+++++++\nDone\n");
            if *verify {
                out.push_str("Proxy Verify OK\n");
            }
            writeln!(out, "Your proxy is valid until: {}", r.proxy.not_after().ctime()).unwrap();
        }
        Command::ProxyInfo => {
            let info = tb.proxy_info(site, user)?;
            writeln!(out, "{info}").unwrap();
        }
        Command::JobRun { contact, command } => {
            let contact = parse_contact_string(contact).map_err(|e| CliError::new(e.code(), e.to_string()))?;
            let outcome = tb.job_run(site, user, &contact, &command[0], &command[1..])?;
            out.push_str(&String::from_utf8_lossy(outcome.output("stdout")));
            err.push_str(&String::from_utf8_lossy(outcome.output("stderr")));
        }
        Command::Ca { action: CaAction::Init } => {
            let subject = tb.ca_init(site)?;
            writeln!(out, "CA initialized: {subject}").unwrap();
        }
        Command::Ca {
            action: CaAction::Sign { user: who, common_name },
        } => {
            let pass = first_line(stdin);
            if pass.is_empty() {
                return Err(CliError::new("BadPassphrase", "no pass phrase given on stdin"));
            }
            let dn = tb.ca_sign(site, who, &common_name.join(" "), pass)?;
            writeln!(out, "Signed certificate: {dn}").unwrap();
            writeln!(out, "Installed for {who} in /home/{who}/.globus on every site").unwrap();
        }
        Command::Testbed { action } => run_admin(tb, action, out)?,
    }
    Ok(())
}

fn run_admin(tb: &mut Testbed, action: &TestbedAction, out: &mut String) -> Result<(), CliError> {
    match action {
        TestbedAction::Up { .. } => {
            out.push_str("testbed already up\n");
            out.push_str(&announce(tb));
        }
        TestbedAction::Down => out.push_str("testbed down\n"),
        TestbedAction::Fault { kind, node: None, .. } if kind == "list" => {
            if tb.active_faults().is_empty() {
                out.push_str("no active faults\n");
            }
            for f in tb.active_faults() {
                writeln!(out, "{f}").unwrap();
            }
        }
        TestbedAction::Fault {
            kind,
            node,
            value,
            clear,
            duration,
        } => {
            let kind: FaultKind = kind.parse().map_err(|e: String| CliError::new("UnknownFault", e))?;
            let node = node
                .as_deref()
                .ok_or_else(|| CliError::new("Usage", "fault needs a target node"))?;
            if *clear {
                let was = tb.clear_fault(kind, node)?;
                let state = if was { "cleared" } else { "was not active" };
                writeln!(out, "fault {kind} on {node} {state}").unwrap();
                return Ok(());
            }
            let mut spec = FaultSpec::new(kind, node);
            if kind == FaultKind::ClockSkew {
                let v = value
                    .as_deref()
                    .ok_or_else(|| CliError::new("Usage", "clock_skew needs an offset in seconds"))?;
                let secs: i64 = v
                    .parse()
                    .map_err(|_| CliError::new("Usage", format!("bad offset {v:?}")))?;
                spec = spec.with_skew(Span::from_secs(secs));
            }
            if let Some(d) = duration {
                spec = spec.for_span(Span::from_secs((*d).into()));
            }
            tb.inject_fault(spec)?;
            let active = tb.active_faults().last().expect("just injected");
            writeln!(out, "fault injected: {active}").unwrap();
        }
    }
    Ok(())
}
