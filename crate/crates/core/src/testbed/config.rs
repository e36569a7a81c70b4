//! Line-oriented testbed description.
//!
//! ```text
//! site ca host ca.it2.ddu.ac.in slots 2 dialect condor skew 0 roles lrm,gatekeeper,ca
//! user gtuser passphrase secret cn GT User
//! map gtuser gtuser
//! max_skew 60
//! ```

use std::collections::BTreeMap;

use thiserror::Error;

use crate::gsi::DEFAULT_MAX_SKEW;
use crate::jobspec::Dialect;
use crate::time::{Span, Timestamp};

/// 2013-02-05 09:00:00, the clock every run starts from.
pub fn default_epoch() -> Timestamp {
    Timestamp::ymd_hms(2013, 2, 5, 9, 0, 0)
}

pub const DEFAULT_LATENCY: Span = Span::from_millis(10);
pub const DEFAULT_TASK_DURATION: Span = Span::from_secs(5);
pub const DEFAULT_PASSPHRASE: &str = "minigrid";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Roles {
    pub lrm: bool,
    pub gatekeeper: bool,
    pub ca: bool,
}

impl Roles {
    fn parse(text: &str) -> Result<Roles, String> {
        let mut r = Roles::default();
        for role in text.split(',').filter(|s| !s.is_empty()) {
            match role {
                "lrm" => r.lrm = true,
                "gatekeeper" => r.gatekeeper = true,
                "ca" => r.ca = true,
                other => return Err(format!("unknown role {other:?}")),
            }
        }
        Ok(r)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiteSpec {
    pub name: String,
    pub host: String,
    pub slots: usize,
    pub dialect: Dialect,
    pub skew: Span,
    pub roles: Roles,
    /// First cluster number the site's queue hands out.
    pub first_cluster: u32,
}

impl SiteSpec {
    pub fn new(name: &str, host: &str, slots: usize) -> Self {
        SiteSpec {
            name: name.to_string(),
            host: host.to_string(),
            slots,
            dialect: Dialect::Condor,
            skew: Span::ZERO,
            roles: Roles {
                lrm: true,
                gatekeeper: true,
                ca: false,
            },
            first_cluster: 1,
        }
    }

    pub fn with_ca(mut self) -> Self {
        self.roles.ca = true;
        self
    }

    pub fn with_dialect(mut self, d: Dialect) -> Self {
        self.dialect = d;
        self
    }

    pub fn with_skew(mut self, skew: Span) -> Self {
        self.skew = skew;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserSpec {
    pub name: String,
    pub passphrase: String,
    pub common_name: String,
}

impl UserSpec {
    pub fn new(name: &str, common_name: &str) -> Self {
        UserSpec {
            name: name.to_string(),
            passphrase: DEFAULT_PASSPHRASE.to_string(),
            common_name: common_name.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestbedConfig {
    pub sites: Vec<SiteSpec>,
    pub users: Vec<UserSpec>,
    /// Grid user to local account; users without an entry map to themselves.
    pub accounts: BTreeMap<String, String>,
    pub max_skew: Span,
    pub latency: Span,
    pub links: BTreeMap<(String, String), Span>,
    pub task_duration: Span,
    pub seed: u64,
    pub epoch: Timestamp,
}

impl Default for TestbedConfig {
    fn default() -> Self {
        TestbedConfig {
            sites: Vec::new(),
            users: Vec::new(),
            accounts: BTreeMap::new(),
            max_skew: DEFAULT_MAX_SKEW,
            latency: DEFAULT_LATENCY,
            links: BTreeMap::new(),
            task_duration: DEFAULT_TASK_DURATION,
            seed: 2013,
            epoch: default_epoch(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {msg}")]
pub struct ConfigError {
    pub line: usize,
    pub msg: String,
}

impl TestbedConfig {
    pub fn new(sites: Vec<SiteSpec>) -> Self {
        TestbedConfig {
            sites,
            ..TestbedConfig::default()
        }
    }

    pub fn with_user(mut self, user: UserSpec) -> Self {
        self.users.push(user);
        self
    }

    pub fn account_for(&self, user: &str) -> String {
        self.accounts.get(user).cloned().unwrap_or_else(|| user.to_string())
    }

    /// One-way latency between two sites; links are symmetric.
    pub fn latency_between(&self, a: &str, b: &str) -> Span {
        let key = if a <= b { (a, b) } else { (b, a) };
        self.links
            .get(&(key.0.to_string(), key.1.to_string()))
            .copied()
            .unwrap_or(self.latency)
    }

    pub fn parse(text: &str) -> Result<TestbedConfig, ConfigError> {
        let mut cfg = TestbedConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let words: Vec<&str> = line.split_whitespace().collect();
            cfg.apply(&words).map_err(|msg| ConfigError { line: i + 1, msg })?;
        }
        Ok(cfg)
    }

    fn apply(&mut self, words: &[&str]) -> Result<(), String> {
        let int = |w: Option<&&str>, what: &str| -> Result<i64, String> {
            w.ok_or_else(|| format!("{what} needs a value"))?
                .parse::<i64>()
                .map_err(|_| format!("bad {what} value"))
        };
        match words[0] {
            "site" => self.sites.push(parse_site(words)?),
            "user" => self.users.push(parse_user(words)?),
            "map" => match words {
                [_, user, account] => {
                    self.accounts.insert(user.to_string(), account.to_string());
                }
                _ => return Err("usage: map <user> <account>".into()),
            },
            "max_skew" => self.max_skew = Span::from_secs(int(words.get(1), "max_skew")?),
            "latency" => self.latency = Span::from_millis(int(words.get(1), "latency")?),
            "link" => match words {
                [_, a, b, ms] => {
                    let ms: i64 = ms.parse().map_err(|_| "bad link latency".to_string())?;
                    let key = if a <= b { (a, b) } else { (b, a) };
                    self.links
                        .insert((key.0.to_string(), key.1.to_string()), Span::from_millis(ms));
                }
                _ => return Err("usage: link <site> <site> <ms>".into()),
            },
            "task_seconds" => {
                self.task_duration = Span::from_secs(int(words.get(1), "task_seconds")?)
            }
            "seed" => self.seed = int(words.get(1), "seed")? as u64,
            "epoch" => {
                let text = words[1..].join(" ");
                let dt = chrono::NaiveDateTime::parse_from_str(&text, "%Y-%m-%d %H:%M:%S")
                    .map_err(|_| format!("bad epoch {text:?}"))?;
                self.epoch = Timestamp::from_millis(dt.and_utc().timestamp_millis());
            }
            other => return Err(format!("unknown directive {other:?}")),
        }
        Ok(())
    }
}

fn parse_site(words: &[&str]) -> Result<SiteSpec, String> {
    let name = words.get(1).ok_or("site needs a name")?;
    let mut spec = SiteSpec::new(name, "", 1);
    let mut host = None;
    let mut slots = None;
    let mut rest = words[2..].chunks(2);
    for pair in rest.by_ref() {
        let [key, value] = pair else {
            return Err(format!("site {name}: {} has no value", pair[0]));
        };
        match *key {
            "host" => host = Some(value.to_string()),
            "slots" => slots = Some(value.parse().map_err(|_| "bad slot count".to_string())?),
            "dialect" => spec.dialect = value.parse().map_err(|e| format!("{e}"))?,
            "skew" => {
                let s: i64 = value.parse().map_err(|_| "bad skew".to_string())?;
                spec.skew = Span::from_secs(s);
            }
            "roles" => spec.roles = Roles::parse(value)?,
            "cluster" => {
                spec.first_cluster = value.parse().map_err(|_| "bad cluster".to_string())?
            }
            other => return Err(format!("site {name}: unknown key {other:?}")),
        }
    }
    spec.host = host.ok_or_else(|| format!("site {name}: missing host"))?;
    spec.slots = slots.ok_or_else(|| format!("site {name}: missing slots"))?;
    Ok(spec)
}

fn parse_user(words: &[&str]) -> Result<UserSpec, String> {
    let name = words.get(1).ok_or("user needs a name")?;
    let mut user = UserSpec::new(name, name);
    let mut i = 2;
    while i < words.len() {
        match words[i] {
            "passphrase" => {
                user.passphrase = words.get(i + 1).ok_or("passphrase needs a value")?.to_string();
                i += 2;
            }
            "cn" => {
                if i + 1 >= words.len() {
                    return Err("cn needs a value".into());
                }
                user.common_name = words[i + 1..].join(" ");
                i = words.len();
            }
            other => return Err(format!("user {name}: unknown key {other:?}")),
        }
    }
    Ok(user)
}
