use std::collections::BTreeMap;
use std::fmt::Write;

use super::{HistoryRow, QueueSnapshot, SlotAd, SlotState};
use crate::time::Timestamp;

/// Pool status table followed by per-platform totals.
pub fn render_status(slots: &[SlotAd], now: Timestamp) -> String {
    let w = slots.iter().map(|s| s.name.len()).max().unwrap_or(0).max(4);
    let mut out = String::new();
    writeln!(
        out,
        "{:<w$}  {:<6} {:<6} {:<10} {:<8} {:<7} {:<5} ActvtyTime",
        "Name", "OpSys", "Arch", "State", "Activity", "LoadAv", "Mem"
    )
    .unwrap();
    out.push('\n');
    for s in slots {
        writeln!(
            out,
            "{:<w$}  {:<6} {:<6} {:<10} {:<8} {:<7.3} {:<5} {}",
            s.name,
            s.opsys,
            s.arch,
            s.state.to_string(),
            s.activity.to_string(),
            s.load_avg,
            s.memory,
            s.activity_time(now).run_time()
        )
        .unwrap();
    }
    if !slots.is_empty() {
        out.push('\n');
    }

    // [total, owner, claimed, unclaimed]; matched/preempting/backfill are always 0.
    let mut groups: BTreeMap<String, [usize; 4]> = BTreeMap::new();
    let mut total = [0usize; 4];
    for s in slots {
        let g = groups.entry(format!("{}/{}", s.arch, s.opsys)).or_default();
        let col = match s.state {
            SlotState::Owner => 1,
            SlotState::Claimed => 2,
            SlotState::Unclaimed => 3,
        };
        for t in [&mut *g, &mut total] {
            t[0] += 1;
            t[col] += 1;
        }
    }
    writeln!(
        out,
        "{:>20} {:>5} {:>5} {:>7} {:>9} {:>7} {:>10} {:>8}",
        "", "Total", "Owner", "Claimed", "Unclaimed", "Matched", "Preempting", "Backfill"
    )
    .unwrap();
    out.push('\n');
    let row = |out: &mut String, label: &str, c: &[usize; 4]| {
        writeln!(
            out,
            "{:>20} {:>5} {:>5} {:>7} {:>9} {:>7} {:>10} {:>8}",
            label, c[0], c[1], c[2], c[3], 0, 0, 0
        )
        .unwrap();
    };
    for (label, c) in &groups {
        row(&mut out, label, c);
    }
    out.push('\n');
    row(&mut out, "Total", &total);
    out
}

/// Queue listing: submitter header, one row per visible job, summary line.
pub fn render_queue(snap: &QueueSnapshot, submitter_host: &str) -> String {
    let mut out = String::new();
    writeln!(out, "-- Submitter: {submitter_host}").unwrap();
    writeln!(
        out,
        "{:<8} {:<10} {:<11} {:>12} {:<2} {:<3} {:<4} CMD",
        "ID", "OWNER", "SUBMITTED", "RUN_TIME", "ST", "PRI", "SIZE"
    )
    .unwrap();
    for r in &snap.rows {
        writeln!(
            out,
            "{:<8} {:<10} {:<11} {:>12} {:<2} {:<3} {:<4} {}",
            r.id.to_string(),
            r.owner,
            r.submitted.short_date(),
            r.run_time.run_time(),
            r.state.code(),
            r.priority,
            "0.0",
            r.cmd
        )
        .unwrap();
    }
    out.push('\n');
    writeln!(out, "{}", snap.summary).unwrap();
    out
}

/// History listing; rows are printed in the order given.
pub fn render_history(rows: &[HistoryRow]) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{:<8} {:<10} {:<11} {:>12} {:<2} {:<11} CMD",
        "ID", "OWNER", "SUBMITTED", "RUN_TIME", "ST", "COMPLETED"
    )
    .unwrap();
    for r in rows {
        writeln!(
            out,
            "{:<8} {:<10} {:<11} {:>12} {:<2} {:<11} {}",
            r.id.to_string(),
            r.owner,
            r.submitted.short_date(),
            r.run_time.run_time(),
            r.state.code(),
            r.completed.short_date(),
            r.cmd
        )
        .unwrap();
    }
    out
}
