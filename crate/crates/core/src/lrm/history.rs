//! Completed-job history rows and their append-only file format.
//!
//! The file is UTF-8, one tab-separated row per terminal job, after a
//! schema header line. Times are milliseconds. The command column escapes
//! backslash, tab and newline.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use super::{JobId, JobState};
use crate::time::{Span, Timestamp};

pub const SCHEMA_HEADER: &str = "# minigrid-history v1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryRow {
    pub id: JobId,
    pub owner: String,
    pub submitted: Timestamp,
    pub run_time: Span,
    pub state: JobState,
    pub completed: Timestamp,
    pub cmd: String,
}

pub fn sort_newest_first(rows: &mut [HistoryRow]) {
    rows.sort_by(|a, b| b.completed.cmp(&a.completed).then(b.id.cmp(&a.id)));
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> Option<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        out.push(match chars.next()? {
            '\\' => '\\',
            't' => '\t',
            'n' => '\n',
            'r' => '\r',
            _ => return None,
        });
    }
    Some(out)
}

pub fn encode_row(row: &HistoryRow) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}",
        row.id,
        escape(&row.owner),
        row.submitted.millis(),
        row.run_time.millis(),
        row.state.code(),
        row.completed.millis(),
        escape(&row.cmd)
    )
}

pub fn decode_row(line: &str) -> Option<HistoryRow> {
    let f: Vec<&str> = line.split('\t').collect();
    let [id, owner, submitted, run_time, st, completed, cmd] = f.as_slice() else {
        return None;
    };
    let mut st = st.chars();
    let state = JobState::from_code(st.next()?)?;
    if st.next().is_some() {
        return None;
    }
    Some(HistoryRow {
        id: id.parse().ok()?,
        owner: unescape(owner)?,
        submitted: Timestamp::from_millis(submitted.parse().ok()?),
        run_time: Span::from_millis(run_time.parse().ok()?),
        state,
        completed: Timestamp::from_millis(completed.parse().ok()?),
        cmd: unescape(cmd)?,
    })
}

/// Appends rows, writing the schema header first if the file is new.
pub fn append(path: &Path, rows: &[HistoryRow]) -> io::Result<()> {
    let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "{SCHEMA_HEADER}")?;
    }
    for row in rows {
        writeln!(f, "{}", encode_row(row))?;
    }
    Ok(())
}

/// Loads every row; a missing file is an empty history.
pub fn load(path: &Path) -> io::Result<Vec<HistoryRow>> {
    let f = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line != SCHEMA_HEADER {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("unsupported history header {line:?}"),
                ));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        rows.push(decode_row(&line).ok_or_else(|| {
            io::Error::new(
                io::ErrorKind::InvalidData,
                format!("bad history row at line {}", i + 1),
            )
        })?);
    }
    Ok(rows)
}
