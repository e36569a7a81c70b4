use std::collections::BTreeMap;

use crate::time::{Span, Timestamp};

/// Shared simulation time plus a fixed offset per node.
#[derive(Debug, Clone)]
pub struct VirtualClock {
    base: Timestamp,
    now: Timestamp,
    offsets: BTreeMap<String, Span>,
}

impl VirtualClock {
    pub fn new(base: Timestamp) -> Self {
        VirtualClock {
            base,
            now: base,
            offsets: BTreeMap::new(),
        }
    }

    pub fn base(&self) -> Timestamp {
        self.base
    }

    /// Reference time, free of any node offset.
    pub fn now(&self) -> Timestamp {
        self.now
    }

    pub fn elapsed(&self) -> Span {
        self.now - self.base
    }

    /// Moves time forward; earlier targets are ignored.
    pub fn advance_to(&mut self, t: Timestamp) {
        self.now = self.now.max(t);
    }

    pub fn set_offset(&mut self, node: &str, offset: Span) {
        self.offsets.insert(node.to_string(), offset);
    }

    pub fn offset(&self, node: &str) -> Span {
        self.offsets.get(node).copied().unwrap_or(Span::ZERO)
    }

    /// What the node's own clock shows.
    pub fn read(&self, node: &str) -> Timestamp {
        self.now + self.offset(node)
    }
}
