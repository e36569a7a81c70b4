use std::fmt;
use std::str::FromStr;

use crate::time::{Span, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FaultKind {
    ClockSkew,
    DropProxy,
    KillAdapter,
    CorruptTransfer,
    Partition,
    AdapterVersionMismatch,
}

impl FaultKind {
    pub const ALL: [FaultKind; 6] = [
        FaultKind::ClockSkew,
        FaultKind::DropProxy,
        FaultKind::KillAdapter,
        FaultKind::CorruptTransfer,
        FaultKind::Partition,
        FaultKind::AdapterVersionMismatch,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FaultKind::ClockSkew => "clock_skew",
            FaultKind::DropProxy => "drop_proxy",
            FaultKind::KillAdapter => "kill_adapter",
            FaultKind::CorruptTransfer => "corrupt_transfer",
            FaultKind::Partition => "partition",
            FaultKind::AdapterVersionMismatch => "adapter_version_mismatch",
        }
    }
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FaultKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FaultKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown fault kind {s:?}"))
    }
}

/// A fault against one node. `skew` only applies to clock faults and is
/// added to the node's configured offset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaultSpec {
    pub kind: FaultKind,
    pub target: String,
    pub skew: Span,
    /// Active for this long after injection; `None` until cleared.
    pub duration: Option<Span>,
}

impl FaultSpec {
    pub fn new(kind: FaultKind, target: &str) -> Self {
        FaultSpec {
            kind,
            target: target.to_string(),
            skew: Span::ZERO,
            duration: None,
        }
    }

    pub fn with_skew(mut self, skew: Span) -> Self {
        self.skew = skew;
        self
    }

    pub fn for_span(mut self, d: Span) -> Self {
        self.duration = Some(d);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveFault {
    pub spec: FaultSpec,
    pub since: Timestamp,
    pub until: Option<Timestamp>,
}

impl fmt::Display for ActiveFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.spec.kind, self.spec.target)?;
        if self.spec.kind == FaultKind::ClockSkew {
            write!(f, " {:+}", self.spec.skew.secs())?;
        }
        if let Some(until) = self.until {
            write!(f, " until {}", until.ctime())?;
        }
        Ok(())
    }
}
