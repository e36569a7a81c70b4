use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use crate::gram::{Gatekeeper, JobSnapshot, LrmBackend};
use crate::gridq::GridManager;
use crate::gsi::CredentialDir;
use crate::jobspec::{NativeJob, SubmitDescription};
use crate::lrm::{JobId, JobState, Lrm};
use crate::time::Timestamp;

use super::config::SiteSpec;
use super::task::TaskOutput;

pub const SANDBOX_DIR: &str = "/var/spool/minigrid/sandboxes";
pub const TRUST_DIR: &str = "/etc/grid-security/certificates";
pub const CA_DIR: &str = "/var/lib/minigrid/simpleCA";
pub const HISTORY_FILE: &str = "/var/lib/minigrid/history";

/// A node's files, rooted in a host directory. Paths handed in and out are
/// the node's own absolute paths.
#[derive(Debug, Clone)]
pub struct SiteFs {
    root: PathBuf,
}

impl SiteFs {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        SiteFs { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Absolute, normalised node path for `path` seen from `cwd`.
    pub fn resolve(cwd: &str, path: &str) -> String {
        let joined = if path.starts_with('/') {
            path.to_string()
        } else {
            format!("{cwd}/{path}")
        };
        let mut parts: Vec<&str> = Vec::new();
        for part in joined.split('/') {
            match part {
                "" | "." => {}
                ".." => {
                    parts.pop();
                }
                p => parts.push(p),
            }
        }
        format!("/{}", parts.join("/"))
    }

    pub fn real(&self, vpath: &str) -> PathBuf {
        let rel = SiteFs::resolve("/", vpath);
        self.root.join(rel.trim_start_matches('/'))
    }

    pub fn read(&self, vpath: &str) -> io::Result<Vec<u8>> {
        fs::read(self.real(vpath))
    }

    pub fn write(&self, vpath: &str, bytes: &[u8]) -> io::Result<()> {
        let p = self.real(vpath);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(p, bytes)
    }

    pub fn exists(&self, vpath: &str) -> bool {
        self.real(vpath).exists()
    }
}

/// Where a running job reads and writes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecContext {
    pub workdir: String,
    pub stdout: Option<String>,
    pub stderr: Option<String>,
    pub log: Option<String>,
    /// Name of a staged executable inside `workdir` to prefer.
    pub staged: Option<String>,
}

impl ExecContext {
    pub fn for_spec(sd: &SubmitDescription, iwd: &str) -> Self {
        ExecContext {
            workdir: iwd.to_string(),
            stdout: sd.output.clone(),
            stderr: sd.error.clone(),
            log: sd.log.clone(),
            staged: None,
        }
    }

    pub fn path(&self, name: &str) -> String {
        SiteFs::resolve(&self.workdir, name)
    }
}

pub struct Site {
    pub spec: SiteSpec,
    pub fs: SiteFs,
    pub lrm: Lrm,
    pub gatekeeper: Option<Gatekeeper>,
    pub grid: GridManager,
    pub(crate) contexts: BTreeMap<JobId, ExecContext>,
    pub(crate) running: BTreeMap<JobId, TaskOutput>,
    log_dir: PathBuf,
}

impl Site {
    pub(crate) fn new(
        spec: SiteSpec,
        fs: SiteFs,
        lrm: Lrm,
        gatekeeper: Option<Gatekeeper>,
        log_dir: PathBuf,
    ) -> Self {
        let grid = GridManager::new(&spec.host);
        Site {
            spec,
            fs,
            lrm,
            gatekeeper,
            grid,
            contexts: BTreeMap::new(),
            running: BTreeMap::new(),
            log_dir,
        }
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn host(&self) -> &str {
        &self.spec.host
    }

    pub fn home(user: &str) -> String {
        format!("/home/{user}")
    }

    pub fn cred_vdir(user: &str) -> String {
        format!("{}/.globus", Site::home(user))
    }

    pub fn credentials(&self, user: &str) -> CredentialDir {
        CredentialDir::new(self.fs.real(&Site::cred_vdir(user)))
    }

    /// Node path of a host path under this site's root, if it is one.
    pub fn virtual_path(&self, real: &Path) -> String {
        match real.strip_prefix(self.fs.root()) {
            Ok(rel) => format!("/{}", rel.display()),
            Err(_) => real.display().to_string(),
        }
    }

    pub fn log_path(&self, daemon: &str) -> PathBuf {
        self.log_dir.join(format!("{daemon}.log"))
    }

    /// Appends one line to a daemon log. Lines that already carry a stamp
    /// are written as they are.
    pub fn log(&self, daemon: &str, at: Timestamp, line: &str) {
        let _ = fs::create_dir_all(&self.log_dir);
        if let Ok(mut f) = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.log_path(daemon))
        {
            let stamp = at.log_stamp();
            let _ = if line.starts_with(&stamp) {
                writeln!(f, "{line}")
            } else {
                writeln!(f, "{stamp} {line}")
            };
        }
    }

    pub fn read_log(&self, daemon: &str) -> String {
        fs::read_to_string(self.log_path(daemon)).unwrap_or_default()
    }
}

/// The gatekeeper's handle on a site's queue at one instant.
pub(crate) struct SiteBackend<'a> {
    pub lrm: &'a mut Lrm,
    pub contexts: &'a mut BTreeMap<JobId, ExecContext>,
    pub now: Timestamp,
}

impl LrmBackend for SiteBackend<'_> {
    fn submit(&mut self, job: &NativeJob, account: &str, sandbox: &str) -> Result<JobId, String> {
        let mut sd = SubmitDescription::vanilla(&job.executable);
        sd.arguments = job.arguments.clone();
        sd.output = Some(job.stdout_name.clone());
        sd.error = Some(job.stderr_name.clone());
        let id = self
            .lrm
            .submit(&sd, account, self.now)
            .map_err(|e| e.to_string())?
            .first();
        let mut ctx = ExecContext::for_spec(&sd, &format!("{SANDBOX_DIR}/{sandbox}"));
        ctx.staged = Some(crate::jobspec::STAGED_EXECUTABLE.to_string());
        self.contexts.insert(id, ctx);
        Ok(id)
    }

    fn snapshot(&self, id: JobId) -> Option<JobSnapshot> {
        if let Some(j) = self.lrm.job(id) {
            return Some(JobSnapshot {
                state: j.state,
                run_time: j.run_time_at(self.now),
                hold_reason: j.hold_reason.clone(),
            });
        }
        self.lrm.history_row(id).map(|r| JobSnapshot {
            state: r.state,
            run_time: r.run_time,
            hold_reason: None,
        })
    }

    fn hold(&mut self, id: JobId, reason: &str) -> Result<(), String> {
        self.lrm.hold(id, reason, self.now).map_err(|e| e.to_string())
    }

    fn cancel(&mut self, id: JobId) -> Result<(), String> {
        match self.lrm.job(id).map(|j| j.state) {
            Some(JobState::Completed | JobState::Removed) | None => Ok(()),
            Some(_) => self.lrm.remove(id, self.now).map_err(|e| e.to_string()),
        }
    }
}
