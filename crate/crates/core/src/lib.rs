pub mod classad;
pub mod jobspec;
pub mod time;
pub mod lrm;
pub mod gsi;
pub mod staging;
pub mod wire;
pub mod gram;
pub mod gridq;
pub mod testbed;
pub mod cli;

pub use classad::{ClassAd, Expr, Value};
pub use gram::{GramError, GramState, Outcome};
pub use gsi::{Certificate, GsiError, ProxyCredential};
pub use jobspec::{ContactString, Dialect, GramJobRequest, SubmitDescription};
pub use lrm::{JobId, JobState, Lrm, LrmConfig};
pub use testbed::{FaultKind, FaultSpec, Scenario, Testbed, TestbedConfig, TestbedError};
pub use time::{Span, Timestamp};
pub use wire::Frame;
