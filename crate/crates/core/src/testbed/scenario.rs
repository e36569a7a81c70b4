//! Scripted sessions against a testbed.
//!
//! ```text
//! file grid-b@grid-b myjob.sub <<EOF
//! Executable = /bin/hostname
//! Queue
//! EOF
//! at 0 grid-b@grid-b mg-submit myjob.sub
//! expect 1 job(s) submitted to cluster 1.
//! ```
//!
//! `at` runs a command no earlier than that many seconds after the epoch;
//! `expect` checks the previous command's output.

use std::fmt::Write;

use super::{Site, Testbed, TestbedError};
use crate::cli;
use crate::jobspec::split_args;
use crate::time::Span;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    Run {
        at: Span,
        user: String,
        site: String,
        argv: Vec<String>,
    },
    Expect(String),
    File {
        user: String,
        site: String,
        path: String,
        content: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Scenario {
    pub steps: Vec<Step>,
}

fn script_err(step: usize, msg: impl Into<String>) -> TestbedError {
    TestbedError::ScriptError {
        step,
        msg: msg.into(),
    }
}

fn parse_who(step: usize, who: &str) -> Result<(String, String), TestbedError> {
    who.split_once('@')
        .filter(|(u, s)| !u.is_empty() && !s.is_empty())
        .map(|(u, s)| (u.to_string(), s.to_string()))
        .ok_or_else(|| script_err(step, format!("expected user@site, got {who:?}")))
}

fn parse_at(step: usize, t: &str) -> Result<Span, TestbedError> {
    let secs: f64 = t
        .parse()
        .ok()
        .filter(|s: &f64| s.is_finite() && *s >= 0.0)
        .ok_or_else(|| script_err(step, format!("bad time {t:?}")))?;
    Ok(Span::from_millis((secs * 1000.0).round() as i64))
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, TestbedError> {
        let mut steps = Vec::new();
        let mut lines = text.lines();
        while let Some(raw) = lines.next() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let n = steps.len() + 1;
            let (word, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
            let rest = rest.trim();
            match word {
                "at" => {
                    let mut parts = rest.splitn(3, char::is_whitespace);
                    let (Some(t), Some(who), Some(cmd)) = (parts.next(), parts.next(), parts.next()) else {
                        return Err(script_err(n, "usage: at <secs> <user>@<site> <command>"));
                    };
                    let (user, site) = parse_who(n, who)?;
                    let argv = split_args(cmd.trim()).map_err(|e| script_err(n, e))?;
                    if argv.is_empty() {
                        return Err(script_err(n, "empty command"));
                    }
                    steps.push(Step::Run {
                        at: parse_at(n, t)?,
                        user,
                        site,
                        argv,
                    });
                }
                "expect" => steps.push(Step::Expect(rest.to_string())),
                "file" => {
                    let parts: Vec<&str> = rest.split_whitespace().collect();
                    let [who, path, marker] = parts[..] else {
                        return Err(script_err(n, "usage: file <user>@<site> <path> <<END"));
                    };
                    let end = marker
                        .strip_prefix("<<")
                        .filter(|m| !m.is_empty())
                        .ok_or_else(|| script_err(n, "file needs a <<END marker"))?;
                    let (user, site) = parse_who(n, who)?;
                    let mut content = String::new();
                    let mut closed = false;
                    for body in lines.by_ref() {
                        if body.trim() == end {
                            closed = true;
                            break;
                        }
                        content.push_str(body);
                        content.push('\n');
                    }
                    if !closed {
                        return Err(script_err(n, format!("missing {end} terminator")));
                    }
                    steps.push(Step::File {
                        user,
                        site,
                        path: path.to_string(),
                        content,
                    });
                }
                other => return Err(script_err(n, format!("unknown step {other:?}"))),
            }
        }
        Ok(Scenario { steps })
    }
}

impl Testbed {
    /// Runs a script and returns every prompt and output it produced.
    pub fn run_scenario(&mut self, scenario: &Scenario) -> Result<String, TestbedError> {
        let mut transcript = String::new();
        let mut last = String::new();
        for (i, step) in scenario.steps.iter().enumerate() {
            let n = i + 1;
            match step {
                Step::File {
                    user,
                    site,
                    path,
                    content,
                } => {
                    self.write_file(site, user, path, content.as_bytes())
                        .map_err(|e| script_err(n, e.to_string()))?;
                }
                Step::Run { at, user, site, argv } => {
                    self.site(site).map_err(|e| script_err(n, e.to_string()))?;
                    let due = self.clock().base() + *at;
                    if due > self.now() {
                        self.advance_to(due);
                    }
                    let passphrase = self
                        .config()
                        .users
                        .iter()
                        .find(|u| &u.name == user)
                        .map(|u| u.passphrase.clone())
                        .unwrap_or_default();
                    let out = cli::execute(self, site, user, argv, &format!("{passphrase}\n"));
                    let short = self.site(site).map(Site::name).unwrap_or(site);
                    writeln!(transcript, "{user}@{short}:~$ {}", argv.join(" ")).unwrap();
                    transcript.push_str(&out.stdout);
                    transcript.push_str(&out.stderr);
                    last = format!("{}{}", out.stdout, out.stderr);
                }
                Step::Expect(want) => {
                    if !last.contains(want.as_str()) {
                        return Err(script_err(n, format!("expected {want:?} in output:\n{last}")));
                    }
                }
            }
        }
        Ok(transcript)
    }
}
