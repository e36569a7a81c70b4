//! Virtual timestamps and the text renderings used by the queue tools.
//!
//! All times in the stack are milliseconds since the Unix epoch, interpreted
//! as wall-clock time in the fixed testbed timezone (no conversions happen).

use std::fmt;
use std::ops::{Add, Neg, Sub};

use chrono::{DateTime, NaiveDateTime};

/// Label printed by `/bin/date` and similar renderings.
pub const TESTBED_TZ: &str = "IST";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp(i64);

impl Timestamp {
    pub const fn from_millis(ms: i64) -> Self {
        Timestamp(ms)
    }

    pub const fn from_secs(s: i64) -> Self {
        Timestamp(s * 1000)
    }

    /// Builds a timestamp from calendar fields. Panics on an invalid date,
    /// which only happens with hard-coded constants.
    pub fn ymd_hms(y: i32, mo: u32, d: u32, h: u32, mi: u32, s: u32) -> Self {
        let dt = chrono::NaiveDate::from_ymd_opt(y, mo, d)
            .and_then(|date| date.and_hms_opt(h, mi, s))
            .expect("valid calendar time");
        Timestamp(dt.and_utc().timestamp_millis())
    }

    pub const fn millis(self) -> i64 {
        self.0
    }

    pub const fn secs(self) -> i64 {
        self.0.div_euclid(1000)
    }

    fn naive(self) -> NaiveDateTime {
        DateTime::from_timestamp_millis(self.0)
            .unwrap_or_default()
            .naive_utc()
    }

    /// `Thu Feb 14 01:11:48 2013`
    pub fn ctime(self) -> String {
        self.naive().format("%a %b %e %H:%M:%S %Y").to_string()
    }

    /// `Wed Feb 13 13:14:05 IST 2013`, the `/bin/date` rendering.
    pub fn date_line(self) -> String {
        let n = self.naive();
        format!(
            "{} {} {}",
            n.format("%a %b %e %H:%M:%S"),
            TESTBED_TZ,
            n.format("%Y")
        )
    }

    /// `2/13 13:02`, as in the SUBMITTED and COMPLETED columns.
    pub fn short_date(self) -> String {
        let n = self.naive();
        format!("{}", n.format("%-m/%-d %H:%M"))
    }

    /// `02/13 13:02:11`, the user-log event stamp.
    pub fn log_stamp(self) -> String {
        self.naive().format("%m/%d %H:%M:%S").to_string()
    }

    /// `2013-02-05 15:07:56.000`, used in daemon logs.
    pub fn iso(self) -> String {
        self.naive().format("%Y-%m-%d %H:%M:%S%.3f").to_string()
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.iso())
    }
}

/// Signed span of virtual time in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Span(i64);

impl Span {
    pub const ZERO: Span = Span(0);

    pub const fn from_millis(ms: i64) -> Self {
        Span(ms)
    }

    pub const fn from_secs(s: i64) -> Self {
        Span(s * 1000)
    }

    pub const fn from_hours(h: i64) -> Self {
        Span(h * 3_600_000)
    }

    pub const fn millis(self) -> i64 {
        self.0
    }

    pub const fn secs(self) -> i64 {
        self.0.div_euclid(1000)
    }

    /// `D+HH:MM:SS`, the RUN_TIME / ActvtyTime rendering. Negative spans
    /// render as zero.
    pub fn run_time(self) -> String {
        let total = self.secs().max(0);
        let (days, rem) = (total / 86_400, total % 86_400);
        format!(
            "{}+{:02}:{:02}:{:02}",
            days,
            rem / 3600,
            (rem % 3600) / 60,
            rem % 60
        )
    }

    /// `H:MM:SS` with unbounded hours, as printed for proxy time left.
    pub fn hms(self) -> String {
        let total = self.secs().max(0);
        format!("{}:{:02}:{:02}", total / 3600, (total % 3600) / 60, total % 60)
    }
}

impl Add<Span> for Timestamp {
    type Output = Timestamp;
    fn add(self, rhs: Span) -> Timestamp {
        Timestamp(self.0.saturating_add(rhs.0))
    }
}

impl Sub<Span> for Timestamp {
    type Output = Timestamp;
    fn sub(self, rhs: Span) -> Timestamp {
        Timestamp(self.0.saturating_sub(rhs.0))
    }
}

impl Sub for Timestamp {
    type Output = Span;
    fn sub(self, rhs: Timestamp) -> Span {
        Span(self.0.saturating_sub(rhs.0))
    }
}

impl Add for Span {
    type Output = Span;
    fn add(self, rhs: Span) -> Span {
        Span(self.0.saturating_add(rhs.0))
    }
}

impl Sub for Span {
    type Output = Span;
    fn sub(self, rhs: Span) -> Span {
        Span(self.0.saturating_sub(rhs.0))
    }
}

impl Neg for Span {
    type Output = Span;
    fn neg(self) -> Span {
        Span(self.0.saturating_neg())
    }
}
