use std::fmt;

use crate::time::{Span, Timestamp};

/// First-line marker of an executable file on a simulated node.
pub const TASK_MAGIC: &str = "#!minigrid-task";

/// Interpreted stand-ins for the system binaries jobs run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskProgram {
    Hostname,
    Date,
    Echo,
    Sleep,
    True,
    False,
}

#[derive(Debug, Clone, Copy)]
pub struct TaskEnv<'a> {
    /// Fully qualified name of the executing node.
    pub host: &'a str,
    /// The node's own clock when the task starts.
    pub now: Timestamp,
    pub args: &'a [String],
    pub default_duration: Span,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskOutput {
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
    pub exit_code: i32,
    pub duration: Span,
}

impl TaskOutput {
    fn ok(stdout: String, duration: Span) -> Self {
        TaskOutput {
            stdout: stdout.into_bytes(),
            stderr: Vec::new(),
            exit_code: 0,
            duration,
        }
    }

    fn fail(stderr: String, exit_code: i32) -> Self {
        TaskOutput {
            stdout: Vec::new(),
            stderr: stderr.into_bytes(),
            exit_code,
            duration: Span::ZERO,
        }
    }
}

impl TaskProgram {
    pub const ALL: [TaskProgram; 6] = [
        TaskProgram::Hostname,
        TaskProgram::Date,
        TaskProgram::Echo,
        TaskProgram::Sleep,
        TaskProgram::True,
        TaskProgram::False,
    ];

    /// Install path on every node.
    pub fn path(self) -> &'static str {
        match self {
            TaskProgram::Hostname => "/bin/hostname",
            TaskProgram::Date => "/bin/date",
            TaskProgram::Echo => "/bin/echo",
            TaskProgram::Sleep => "/bin/sleep",
            TaskProgram::True => "/bin/true",
            TaskProgram::False => "/bin/false",
        }
    }

    pub fn lookup(name: &str) -> Option<TaskProgram> {
        TaskProgram::ALL.into_iter().find(|p| p.path() == name)
    }

    /// File contents that identify this program.
    pub fn script(self) -> String {
        format!("{TASK_MAGIC} {}\n", self.path())
    }

    /// Recognises a program file by its first line.
    pub fn from_file(bytes: &[u8]) -> Option<TaskProgram> {
        let first = bytes.split(|&b| b == b'\n').next()?;
        let line = std::str::from_utf8(first).ok()?;
        let name = line.strip_prefix(TASK_MAGIC)?.trim();
        TaskProgram::lookup(name)
    }

    pub fn run(self, env: &TaskEnv<'_>) -> TaskOutput {
        let d = env.default_duration;
        match self {
            TaskProgram::Hostname => match env.args.first().map(String::as_str) {
                None => {
                    let short = env.host.split('.').next().unwrap_or(env.host);
                    TaskOutput::ok(format!("{short}\n"), d)
                }
                Some("-f") | Some("--fqdn") => TaskOutput::ok(format!("{}\n", env.host), d),
                Some(other) => TaskOutput::fail(format!("hostname: invalid option {other}\n"), 1),
            },
            TaskProgram::Date => TaskOutput::ok(format!("{}\n", env.now.date_line()), d),
            TaskProgram::Echo => TaskOutput::ok(format!("{}\n", env.args.join(" ")), d),
            TaskProgram::Sleep => match env.args.first().and_then(|a| a.parse::<u32>().ok()) {
                Some(n) => TaskOutput::ok(String::new(), Span::from_secs(n.into())),
                None => TaskOutput::fail("sleep: missing or invalid operand\n".into(), 1),
            },
            TaskProgram::True => TaskOutput::ok(String::new(), d),
            TaskProgram::False => TaskOutput {
                exit_code: 1,
                duration: d,
                ..TaskOutput::ok(String::new(), d)
            },
        }
    }
}

impl fmt::Display for TaskProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.path())
    }
}
