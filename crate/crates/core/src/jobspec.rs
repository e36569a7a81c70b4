//! Submit files, contact strings, the LRM-neutral job request, and the
//! per-LRM native dialects a request is translated into.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::classad::Expr;

/// Default gatekeeper port when a contact string omits one.
pub const DEFAULT_GATEKEEPER_PORT: u16 = 2119;

/// The only grid_resource protocol tag accepted.
pub const GRID_PROTOCOL: &str = "gt5";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Universe {
    Vanilla,
    Globus,
}

impl fmt::Display for Universe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Universe::Vanilla => "Vanilla",
            Universe::Globus => "Globus",
        })
    }
}

/// `host[:port]/jobmanager-<lrm>`
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ContactString {
    pub host: String,
    pub port: Option<u16>,
    pub service: String,
}

impl ContactString {
    /// The LRM suffix of the service, e.g. `condor` for `jobmanager-condor`.
    pub fn lrm(&self) -> &str {
        &self.service["jobmanager-".len()..]
    }

    pub fn port_or_default(&self) -> u16 {
        self.port.unwrap_or(DEFAULT_GATEKEEPER_PORT)
    }
}

impl fmt::Display for ContactString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.host)?;
        if let Some(p) = self.port {
            write!(f, ":{p}")?;
        }
        write!(f, "/{}", self.service)
    }
}

impl FromStr for ContactString {
    type Err = ContactError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_contact_string(s)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed contact string {text:?}: {reason}")]
pub struct ContactError {
    pub text: String,
    pub reason: &'static str,
}

impl ContactError {
    pub fn code(&self) -> &'static str {
        "MalformedContact"
    }
}

pub fn parse_contact_string(text: &str) -> Result<ContactString, ContactError> {
    let err = |reason| ContactError {
        text: text.to_string(),
        reason,
    };
    let (hostport, service) = text.split_once('/').ok_or_else(|| err("missing '/'"))?;
    let (host, port) = match hostport.split_once(':') {
        Some((h, p)) => {
            let canonical = !p.is_empty() && (p == "0" || !p.starts_with('0'));
            let port: u16 = p
                .parse()
                .ok()
                .filter(|_| canonical && p.bytes().all(|b| b.is_ascii_digit()))
                .ok_or_else(|| err("bad port"))?;
            (h, Some(port))
        }
        None => (hostport, None),
    };
    if host.is_empty()
        || !host
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'.' || b == b'-' || b == b'_')
    {
        return Err(err("bad host name"));
    }
    let Some(lrm) = service.strip_prefix("jobmanager-") else {
        return Err(err("service must start with jobmanager-"));
    };
    if lrm.is_empty() || service.chars().any(|c| c.is_whitespace() || c == '/') {
        return Err(err("bad jobmanager name"));
    }
    Ok(ContactString {
        host: host.to_string(),
        port,
        service: service.to_string(),
    })
}

/// grid_resource value: protocol tag plus contact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridResource {
    pub protocol: String,
    pub contact: ContactString,
}

impl fmt::Display for GridResource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.protocol, self.contact)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubmitDescription {
    pub universe: Universe,
    pub executable: String,
    pub arguments: Vec<String>,
    pub output: Option<String>,
    pub error: Option<String>,
    pub log: Option<String>,
    pub input: Option<String>,
    /// Expression text; validated at parse time.
    pub requirements: Option<String>,
    pub rank: Option<String>,
    pub priority: i64,
    pub grid_resource: Option<GridResource>,
    pub queue_count: u32,
}

impl SubmitDescription {
    pub fn vanilla(executable: &str) -> Self {
        SubmitDescription {
            universe: Universe::Vanilla,
            executable: executable.to_string(),
            arguments: Vec::new(),
            output: None,
            error: None,
            log: None,
            input: None,
            requirements: None,
            rank: None,
            priority: 0,
            grid_resource: None,
            queue_count: 1,
        }
    }

    /// Executable followed by its arguments, as shown in history listings.
    pub fn command_line(&self) -> String {
        let mut s = self.executable.clone();
        if !self.arguments.is_empty() {
            s.push(' ');
            s.push_str(&join_args(&self.arguments));
        }
        s
    }

    /// Renders back to the submit-file format.
    pub fn to_submit_text(&self) -> String {
        let mut out = format!("Universe = {}\n", self.universe);
        if let Some(gr) = &self.grid_resource {
            out.push_str(&format!("grid_resource = {gr}\n"));
        }
        out.push_str(&format!("Executable = {}\n", self.executable));
        if !self.arguments.is_empty() {
            out.push_str(&format!("Arguments = {}\n", join_args(&self.arguments)));
        }
        for (key, val) in [
            ("Input", &self.input),
            ("Output", &self.output),
            ("Error", &self.error),
            ("Log", &self.log),
            ("Requirements", &self.requirements),
            ("Rank", &self.rank),
        ] {
            if let Some(v) = val {
                out.push_str(&format!("{key} = {v}\n"));
            }
        }
        if self.priority != 0 {
            out.push_str(&format!("Priority = {}\n", self.priority));
        }
        if self.queue_count == 1 {
            out.push_str("Queue\n");
        } else {
            out.push_str(&format!("Queue {}\n", self.queue_count));
        }
        out
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SubmitError {
    #[error("no Queue command found")]
    MissingQueue,
    #[error("line {line}: unknown universe {value:?}")]
    UnknownUniverse { line: usize, value: String },
    #[error("line {line}: malformed grid_resource {value:?}")]
    MalformedGridResource { line: usize, value: String },
    #[error("Globus universe requires grid_resource")]
    GlobusWithoutGridResource,
    #[error("line {line}: grid_resource is only valid in the Globus universe")]
    GridResourceWithoutGlobus { line: usize },
    #[error("no Executable given")]
    MissingExecutable,
    #[error("line {line}: expected `Key = Value`")]
    MalformedLine { line: usize },
    #[error("line {line}: bad Queue count")]
    BadQueueCount { line: usize },
    #[error("line {line}: only a single trailing Queue command is supported")]
    AfterQueue { line: usize },
    #[error("line {line}: bad {key} expression: {reason}")]
    BadExpression {
        line: usize,
        key: &'static str,
        reason: String,
    },
    #[error("line {line}: {reason}")]
    BadArguments { line: usize, reason: String },
    #[error("line {line}: bad Priority")]
    BadPriority { line: usize },
}

impl SubmitError {
    pub fn code(&self) -> &'static str {
        match self {
            SubmitError::MissingQueue => "MissingQueue",
            SubmitError::UnknownUniverse { .. } => "UnknownUniverse",
            SubmitError::MalformedGridResource { .. } => "MalformedGridResource",
            SubmitError::GlobusWithoutGridResource => "GlobusWithoutGridResource",
            SubmitError::GridResourceWithoutGlobus { .. } => "GridResourceWithoutGlobus",
            SubmitError::MissingExecutable => "MissingExecutable",
            SubmitError::MalformedLine { .. } => "MalformedLine",
            SubmitError::BadQueueCount { .. } => "BadQueueCount",
            SubmitError::AfterQueue { .. } => "AfterQueue",
            SubmitError::BadExpression { .. } => "BadExpression",
            SubmitError::BadArguments { .. } => "BadArguments",
            SubmitError::BadPriority { .. } => "BadPriority",
        }
    }
}

/// Parses a submit file: `Key = Value` lines, `#` comments, and a final
/// `Queue [n]`. Keys are case-insensitive and later duplicates win.
pub fn parse_submit_file(text: &str) -> Result<SubmitDescription, SubmitError> {
    let mut universe = (0, Universe::Vanilla);
    let mut executable = None;
    let mut arguments = Vec::new();
    let mut output = None;
    let mut error = None;
    let mut log = None;
    let mut input = None;
    let mut requirements = None;
    let mut rank = None;
    let mut priority = 0;
    let mut grid_resource: Option<(usize, GridResource)> = None;
    let mut queue_count = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if queue_count.is_some() {
            return Err(SubmitError::AfterQueue { line: line_no });
        }
        let mut words = line.split_whitespace();
        if words.next().is_some_and(|w| w.eq_ignore_ascii_case("queue")) {
            let count = match words.next() {
                None => 1,
                Some(n) => n
                    .parse::<u32>()
                    .ok()
                    .filter(|&n| n > 0)
                    .ok_or(SubmitError::BadQueueCount { line: line_no })?,
            };
            if words.next().is_some() {
                return Err(SubmitError::BadQueueCount { line: line_no });
            }
            queue_count = Some(count);
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or(SubmitError::MalformedLine { line: line_no })?;
        let key = key.trim().to_ascii_lowercase();
        let value = value.trim().to_string();
        let opt = |v: String| if v.is_empty() { None } else { Some(v) };
        match key.as_str() {
            "universe" => {
                let u = if value.eq_ignore_ascii_case("vanilla") {
                    Universe::Vanilla
                } else if value.eq_ignore_ascii_case("globus") {
                    Universe::Globus
                } else {
                    return Err(SubmitError::UnknownUniverse {
                        line: line_no,
                        value,
                    });
                };
                universe = (line_no, u);
            }
            "executable" => executable = opt(value),
            "arguments" => {
                arguments = split_args(&value).map_err(|reason| SubmitError::BadArguments {
                    line: line_no,
                    reason,
                })?
            }
            "output" => output = opt(value),
            "error" => error = opt(value),
            "log" => log = opt(value),
            "input" => input = opt(value),
            "requirements" | "rank" => {
                let name = if key == "rank" { "Rank" } else { "Requirements" };
                if let Err(e) = Expr::parse(&value) {
                    return Err(SubmitError::BadExpression {
                        line: line_no,
                        key: name,
                        reason: e.to_string(),
                    });
                }
                if key == "rank" {
                    rank = Some(value);
                } else {
                    requirements = Some(value);
                }
            }
            "priority" => {
                priority = value
                    .parse()
                    .map_err(|_| SubmitError::BadPriority { line: line_no })?
            }
            "grid_resource" => {
                let malformed = || SubmitError::MalformedGridResource {
                    line: line_no,
                    value: value.clone(),
                };
                let mut parts = value.split_whitespace();
                let (Some(tag), Some(contact), None) = (parts.next(), parts.next(), parts.next())
                else {
                    return Err(malformed());
                };
                if tag != GRID_PROTOCOL {
                    return Err(malformed());
                }
                let contact = parse_contact_string(contact).map_err(|_| malformed())?;
                grid_resource = Some((
                    line_no,
                    GridResource {
                        protocol: tag.to_string(),
                        contact,
                    },
                ));
            }
            // Unknown keys are accepted and ignored, as the batch system does.
            _ => {}
        }
    }

    let queue_count = queue_count.ok_or(SubmitError::MissingQueue)?;
    let executable = executable.ok_or(SubmitError::MissingExecutable)?;
    match (universe.1, &grid_resource) {
        (Universe::Globus, None) => return Err(SubmitError::GlobusWithoutGridResource),
        (Universe::Vanilla, Some((line, _))) => {
            return Err(SubmitError::GridResourceWithoutGlobus { line: *line })
        }
        _ => {}
    }
    Ok(SubmitDescription {
        universe: universe.1,
        executable,
        arguments,
        output,
        error,
        log,
        input,
        requirements,
        rank,
        priority,
        grid_resource: grid_resource.map(|(_, g)| g),
        queue_count,
    })
}

/// Splits an argument string on whitespace; double quotes group, and inside
/// quotes `\"` and `\\` are escapes.
pub fn split_args(s: &str) -> Result<Vec<String>, String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut in_token = false;
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        match c {
            '"' => {
                in_token = true;
                loop {
                    match chars.next() {
                        None => return Err("unterminated quote".into()),
                        Some('"') => break,
                        Some('\\') => match chars.next() {
                            Some(e @ ('"' | '\\')) => cur.push(e),
                            Some(other) => {
                                cur.push('\\');
                                cur.push(other);
                            }
                            None => return Err("unterminated quote".into()),
                        },
                        Some(other) => cur.push(other),
                    }
                }
            }
            c if c.is_whitespace() => {
                if in_token {
                    out.push(std::mem::take(&mut cur));
                    in_token = false;
                }
            }
            other => {
                in_token = true;
                cur.push(other);
            }
        }
    }
    if in_token {
        out.push(cur);
    }
    Ok(out)
}

/// Quotes one argument so that [`split_args`] returns it unchanged.
pub fn quote_arg(arg: &str) -> String {
    let needs = arg.is_empty() || arg.chars().any(|c| c.is_whitespace() || c == '"');
    if !needs {
        return arg.to_string();
    }
    let mut s = String::with_capacity(arg.len() + 2);
    s.push('"');
    for c in arg.chars() {
        if c == '"' || c == '\\' {
            s.push('\\');
        }
        s.push(c);
    }
    s.push('"');
    s
}

pub fn join_args(args: &[String]) -> String {
    args.iter().map(|a| quote_arg(a)).collect::<Vec<_>>().join(" ")
}

/// One file the gatekeeper must receive before the job may run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageItem {
    /// Name inside the job sandbox.
    pub name: String,
    /// Path on the submitting node.
    pub source: String,
    /// Hex SHA-256; empty until the submitter has read the source.
    pub digest: String,
}

/// The LRM-neutral job request carried to a gatekeeper.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GramJobRequest {
    pub executable: String,
    pub arguments: Vec<String>,
    pub stdout_name: String,
    pub stderr_name: String,
    pub owner_dn: String,
    pub target_lrm: String,
    pub stage_in: Vec<StageItem>,
    pub request_id: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GramRequestError {
    #[error("submit description is not in the Globus universe")]
    NotGridUniverse,
}

impl GramRequestError {
    pub fn code(&self) -> &'static str {
        "NotGridUniverse"
    }
}

fn basename(path: &str) -> &str {
    path.rsplit('/').next().unwrap_or(path)
}

/// Sandbox name the executable is staged under.
pub const STAGED_EXECUTABLE: &str = "executable";

/// Translates a grid-universe submit description into a gatekeeper request.
pub fn to_gram_request(
    sd: &SubmitDescription,
    owner_dn: &str,
    request_id: &str,
) -> Result<(ContactString, GramJobRequest), GramRequestError> {
    let gr = match (&sd.universe, &sd.grid_resource) {
        (Universe::Globus, Some(gr)) => gr,
        _ => return Err(GramRequestError::NotGridUniverse),
    };
    let mut stage_in = vec![StageItem {
        name: STAGED_EXECUTABLE.to_string(),
        source: sd.executable.clone(),
        digest: String::new(),
    }];
    if let Some(input) = &sd.input {
        stage_in.push(StageItem {
            name: basename(input).to_string(),
            source: input.clone(),
            digest: String::new(),
        });
    }
    let req = GramJobRequest {
        executable: sd.executable.clone(),
        arguments: sd.arguments.clone(),
        stdout_name: sd.output.as_deref().map(basename).unwrap_or("stdout").to_string(),
        stderr_name: sd.error.as_deref().map(basename).unwrap_or("stderr").to_string(),
        owner_dn: owner_dn.to_string(),
        target_lrm: gr.contact.lrm().to_string(),
        stage_in,
        request_id: request_id.to_string(),
    };
    Ok((gr.contact.clone(), req))
}

/// Native submission languages the LRM adapters speak.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dialect {
    Condor,
    SgeLike,
}

/// Revision of the native text layout that adapters emit and accept.
pub const DIALECT_REVISION: u32 = 1;

const DIALECT_MARKER: &str = "# minigrid-dialect:";

impl Dialect {
    pub fn name(self) -> &'static str {
        match self {
            Dialect::Condor => "condor",
            Dialect::SgeLike => "sgelike",
        }
    }

    /// The jobmanager suffix a gatekeeper registers for this dialect.
    pub fn jobmanager(self) -> &'static str {
        match self {
            Dialect::Condor => "condor",
            Dialect::SgeLike => "sge",
        }
    }
}

impl fmt::Display for Dialect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dialect {
    type Err = DialectError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "condor" => Ok(Dialect::Condor),
            "sgelike" | "sge" => Ok(Dialect::SgeLike),
            other => Err(DialectError::UnknownDialect(other.to_string())),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DialectError {
    #[error("unknown dialect {0:?}")]
    UnknownDialect(String),
    #[error("native text has no command line")]
    MissingCommand,
    #[error("native text is not valid: {0}")]
    Invalid(String),
}

impl DialectError {
    pub fn code(&self) -> &'static str {
        match self {
            DialectError::UnknownDialect(_) => "UnknownDialect",
            DialectError::MissingCommand | DialectError::Invalid(_) => "AdapterFailure",
        }
    }
}

/// What an LRM needs out of native text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NativeJob {
    pub executable: String,
    pub arguments: Vec<String>,
    pub stdout_name: String,
    pub stderr_name: String,
    /// Layout revision from the marker line, if present.
    pub revision: Option<u32>,
}

/// Renders a request as native submit text. `dialect` is a registered
/// dialect name (`condor` or `sgelike`).
pub fn render_dialect(req: &GramJobRequest, dialect: &str) -> Result<String, DialectError> {
    let d: Dialect = dialect.parse()?;
    Ok(render_native(req, d, DIALECT_REVISION))
}

pub fn render_native(req: &GramJobRequest, dialect: Dialect, revision: u32) -> String {
    match dialect {
        Dialect::Condor => {
            let mut s = format!("{DIALECT_MARKER} condor {revision}\n");
            s.push_str("Universe = Vanilla\n");
            s.push_str(&format!("Executable = {}\n", req.executable));
            if !req.arguments.is_empty() {
                s.push_str(&format!("Arguments = {}\n", join_args(&req.arguments)));
            }
            s.push_str(&format!("Output = {}\n", req.stdout_name));
            s.push_str(&format!("Error = {}\n", req.stderr_name));
            s.push_str("Log = gram_job.log\n");
            s.push_str("Queue\n");
            s
        }
        Dialect::SgeLike => {
            let mut s = String::from("#!/bin/sh\n");
            s.push_str(&format!("{DIALECT_MARKER} sgelike {revision}\n"));
            s.push_str(&format!("#$ -N {}\n", quote_arg(&req.request_id)));
            s.push_str(&format!("#$ -o {}\n", quote_arg(&req.stdout_name)));
            s.push_str(&format!("#$ -e {}\n", quote_arg(&req.stderr_name)));
            let mut cmd = vec![req.executable.clone()];
            cmd.extend(req.arguments.iter().cloned());
            s.push_str(&join_args(&cmd));
            s.push('\n');
            s
        }
    }
}

fn marker_revision(text: &str) -> Option<u32> {
    text.lines()
        .find_map(|l| l.trim().strip_prefix(DIALECT_MARKER))
        .and_then(|rest| rest.split_whitespace().nth(1))
        .and_then(|r| r.parse().ok())
}

/// Parses native text back into the fields the LRM needs.
pub fn parse_native(text: &str, dialect: Dialect) -> Result<NativeJob, DialectError> {
    let revision = marker_revision(text);
    match dialect {
        Dialect::Condor => {
            let sd = parse_submit_file(text).map_err(|e| DialectError::Invalid(e.to_string()))?;
            Ok(NativeJob {
                executable: sd.executable,
                arguments: sd.arguments,
                stdout_name: sd.output.unwrap_or_else(|| "stdout".into()),
                stderr_name: sd.error.unwrap_or_else(|| "stderr".into()),
                revision,
            })
        }
        Dialect::SgeLike => {
            let mut stdout_name = "stdout".to_string();
            let mut stderr_name = "stderr".to_string();
            let mut command = None;
            for line in text.lines().map(str::trim) {
                if let Some(directive) = line.strip_prefix("#$") {
                    let words = split_args(directive).map_err(DialectError::Invalid)?;
                    match words.as_slice() {
                        [flag, v] if flag == "-o" => stdout_name = v.clone(),
                        [flag, v] if flag == "-e" => stderr_name = v.clone(),
                        _ => {}
                    }
                } else if line.is_empty() || line.starts_with('#') {
                    continue;
                } else if command.is_none() {
                    command = Some(split_args(line).map_err(DialectError::Invalid)?);
                }
            }
            let mut words = command.ok_or(DialectError::MissingCommand)?.into_iter();
            let executable = words.next().ok_or(DialectError::MissingCommand)?;
            Ok(NativeJob {
                executable,
                arguments: words.collect(),
                stdout_name,
                stderr_name,
                revision,
            })
        }
    }
}
