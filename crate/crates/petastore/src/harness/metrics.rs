//! Metrics computed from a scenario trace.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use super::trace::TraceEvent;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub duration_ms: u64,
    pub availability: f64,
    pub reads_ok: u64,
    pub reads_failed: u64,
    pub checksum_errors: u64,
    pub lock_collision_rate: f64,
    pub lock_grants: u64,
    pub lock_queued: u64,
    pub open_files_peak: u64,
    pub open_connections_peak: u64,
    pub redirect_histogram: BTreeMap<String, u64>,
    pub compression_ratio: f64,
    pub staging_count: u64,
    pub replication_count: u64,
    pub purge_count: u64,
    pub orphan_locks_reaped: u64,
    pub sessions_reaped: u64,
    pub ops_opened: u64,
    pub ops_done: u64,
    pub ops_failed: u64,
    pub ops_crashed: u64,
    pub skims: u64,
}

/// Successful reads over attempted reads. A failed open attempt counts as
/// a failed read; with nothing attempted the store was never unavailable.
pub fn compute_availability(events: &[TraceEvent]) -> f64 {
    let (ok, failed) = read_counts(events);
    ratio_or_one(ok, ok + failed)
}

fn ratio_or_one(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

fn read_counts(events: &[TraceEvent]) -> (u64, u64) {
    let mut ok = 0;
    let mut failed = 0;
    for e in events {
        match e.event.as_str() {
            "DATA" => ok += 1,
            "RETRY" | "ERR" => failed += 1,
            _ => {}
        }
    }
    (ok, failed)
}

fn peak(events: &[TraceEvent], up: &str, down: &str) -> u64 {
    let (mut cur, mut max) = (0i64, 0i64);
    for e in events {
        if e.event == up {
            cur += 1;
            max = max.max(cur);
        } else if e.event == down {
            cur -= 1;
        }
    }
    max as u64
}

impl Report {
    pub fn from_trace(events: &[TraceEvent]) -> Self {
        let (reads_ok, reads_failed) = read_counts(events);
        let mut r = Report {
            duration_ms: events.last().map_or(0, |e| e.time),
            availability: ratio_or_one(reads_ok, reads_ok + reads_failed),
            reads_ok,
            reads_failed,
            open_files_peak: peak(events, "HANDLE", "CLOSE"),
            open_connections_peak: peak(events, "ACCEPT", "HANGUP"),
            ..Default::default()
        };
        let (mut logical, mut physical) = (0u64, 0u64);
        for e in events {
            match e.event.as_str() {
                "ERR" if e.arg("code") == Some("CHECKSUM_MISMATCH") => r.checksum_errors += 1,
                "GRANTED" if e.num("queued") == Some(0) => r.lock_grants += 1,
                "QUEUED" => r.lock_queued += 1,
                "GO" => {
                    let s = e.arg("slave").unwrap_or("?").to_string();
                    *r.redirect_histogram.entry(s).or_default() += 1;
                }
                "REGISTER" => {
                    logical += e.num("logical").unwrap_or(0);
                    physical += e.num("physical").unwrap_or(0);
                }
                "STAGE" => r.staging_count += 1,
                "REPLICATE" => r.replication_count += 1,
                "PURGE" => r.purge_count += 1,
                "RELEASED" if e.num("reaped") == Some(1) => r.orphan_locks_reaped += 1,
                "REAP" => r.sessions_reaped += 1,
                "OPEN" => r.ops_opened += 1,
                "DONE" => r.ops_done += 1,
                "CRASHED" => r.ops_crashed += 1,
                "SKIM" => r.skims += 1,
                _ => {}
            }
            if e.event == "ERR" && e.num("fatal") == Some(1) {
                r.ops_failed += 1;
            }
        }
        r.lock_collision_rate = if r.lock_grants + r.lock_queued == 0 {
            0.0
        } else {
            r.lock_queued as f64 / (r.lock_grants + r.lock_queued) as f64
        };
        r.compression_ratio = if physical == 0 {
            0.0
        } else {
            logical as f64 / physical as f64
        };
        r
    }

    /// Machine-readable `key=value` lines.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn fmt::Display| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("duration_ms", &self.duration_ms);
        kv("availability", &format!("{:.6}", self.availability));
        kv("reads_ok", &self.reads_ok);
        kv("reads_failed", &self.reads_failed);
        kv("checksum_errors", &self.checksum_errors);
        kv("lock_collision_rate", &format!("{:.6}", self.lock_collision_rate));
        kv("lock_grants", &self.lock_grants);
        kv("lock_queued", &self.lock_queued);
        kv("open_files_peak", &self.open_files_peak);
        kv("open_connections_peak", &self.open_connections_peak);
        for (slave, n) in &self.redirect_histogram {
            kv(&format!("redirects.{slave}"), n);
        }
        kv("compression_ratio", &format!("{:.4}", self.compression_ratio));
        kv("staging_count", &self.staging_count);
        kv("replication_count", &self.replication_count);
        kv("purge_count", &self.purge_count);
        kv("orphan_locks_reaped", &self.orphan_locks_reaped);
        kv("sessions_reaped", &self.sessions_reaped);
        kv("ops_opened", &self.ops_opened);
        kv("ops_done", &self.ops_done);
        kv("ops_failed", &self.ops_failed);
        kv("ops_crashed", &self.ops_crashed);
        kv("skims", &self.skims);
        s
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<24} {:>12}", "metric", "value")?;
        writeln!(f, "{:-<24} {:->12}", "", "")?;
        let rows: [(&str, String); 14] = [
            (
                "simulated time (s)",
                format!("{:.1}", self.duration_ms as f64 / 1000.0),
            ),
            ("availability", format!("{:.4}", self.availability)),
            (
                "reads ok / failed",
                format!("{}/{}", self.reads_ok, self.reads_failed),
            ),
            ("checksum errors", self.checksum_errors.to_string()),
            ("lock collision rate", format!("{:.4}", self.lock_collision_rate)),
            ("open files peak", self.open_files_peak.to_string()),
            ("connections peak", self.open_connections_peak.to_string()),
            ("compression ratio", format!("{:.3}", self.compression_ratio)),
            ("stagings", self.staging_count.to_string()),
            ("replications", self.replication_count.to_string()),
            ("purges", self.purge_count.to_string()),
            ("orphan locks reaped", self.orphan_locks_reaped.to_string()),
            (
                "ops done/failed/crashed",
                format!("{}/{}/{}", self.ops_done, self.ops_failed, self.ops_crashed),
            ),
            ("skims", self.skims.to_string()),
        ];
        for (k, v) in rows {
            writeln!(f, "{k:<24} {v:>12}")?;
        }
        if !self.redirect_histogram.is_empty() {
            writeln!(f)?;
            writeln!(f, "{:<24} {:>12}", "redirects", "count")?;
            for (s, n) in &self.redirect_histogram {
                writeln!(f, "{s:<24} {n:>12}")?;
            }
        }
        writeln!(f)?;
        f.write_str(&self.to_kv())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::trace::parse_trace;

    #[test]
    fn availability_arithmetic() {
        let mut t = String::new();
        for i in 0..96 {
            t += &format!("{i}\tc\tDATA\top=1\n");
        }
        for i in 0..4 {
            t += &format!("{i}\tc\tERR\top=1 code=X fatal=0\n");
        }
        let ev = parse_trace(&t).unwrap();
        assert!((compute_availability(&ev) - 0.96).abs() < 1e-12);
        assert_eq!(compute_availability(&[]), 1.0);
    }

    #[test]
    fn peaks_and_ratios() {
        let t = "0\tm\tREGISTER\tlogical=300 physical=100\n\
                 1\tc\tHANDLE\top=1\n2\tc\tHANDLE\top=2\n3\tc\tCLOSE\top=1\n4\tc\tHANDLE\top=3\n\
                 5\tlocks\tGRANTED\tqueued=0\n6\tlocks\tQUEUED\tpos=1\n7\tlocks\tGRANTED\tqueued=1\n";
        let r = Report::from_trace(&parse_trace(t).unwrap());
        assert_eq!(r.open_files_peak, 2);
        assert_eq!(r.compression_ratio, 3.0);
        assert_eq!(r.lock_collision_rate, 0.5);
        assert!(r.to_kv().contains("open_files_peak=2\n"));
    }
}
