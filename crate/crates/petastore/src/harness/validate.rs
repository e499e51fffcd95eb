//! Trace validators. Each replays the trace and reports the events that
//! break one property.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::trace::TraceEvent;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub check: &'static str,
    pub time: u64,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {}ms: {}", self.check, self.time, self.detail)
    }
}

fn v(check: &'static str, e: &TraceEvent, detail: String) -> Violation {
    Violation {
        check,
        time: e.time,
        detail,
    }
}

pub fn validate_all(events: &[TraceEvent]) -> Vec<Violation> {
    let mut out = conservation(events);
    out.extend(purge_safety(events));
    out.extend(lock_safety(events));
    out.extend(stale_sessions(events));
    out.extend(events.iter().filter(|e| e.event == "INVARIANT").map(|e| {
        v(
            "invariant",
            e,
            format!("{} {}", e.actor, e.arg("detail").unwrap_or("")),
        )
    }));
    out
}

/// Every OPEN ends in exactly one of DONE, a fatal ERR or CRASHED.
pub fn conservation(events: &[TraceEvent]) -> Vec<Violation> {
    let mut open: BTreeMap<u64, u32> = BTreeMap::new();
    let mut out = Vec::new();
    for e in events {
        let Some(op) = e.num("op") else { continue };
        let terminal = match e.event.as_str() {
            "OPEN" => {
                if open.insert(op, 0).is_some() {
                    out.push(v("conservation", e, format!("op {op} opened twice")));
                }
                false
            }
            "DONE" | "CRASHED" => true,
            "ERR" => e.num("fatal") == Some(1),
            _ => false,
        };
        if terminal {
            match open.get_mut(&op) {
                Some(n) => *n += 1,
                None => out.push(v("conservation", e, format!("op {op} ends without OPEN"))),
            }
        }
    }
    let last = events.last().map_or(0, |e| e.time);
    for (op, n) in open {
        if n != 1 {
            out.push(Violation {
                check: "conservation",
                time: last,
                detail: format!("op {op} has {n} outcomes"),
            });
        }
    }
    out
}

/// No purge of a file a client has open on that slave, and no purge of the
/// last disk copy of a file that tertiary storage does not hold.
pub fn purge_safety(events: &[TraceEvent]) -> Vec<Violation> {
    let mut archived: BTreeMap<u64, bool> = BTreeMap::new();
    let mut copies: BTreeMap<u64, BTreeSet<String>> = BTreeMap::new();
    let mut op_file: BTreeMap<u64, u64> = BTreeMap::new();
    let mut op_slave: BTreeMap<u64, String> = BTreeMap::new();
    let mut handles: BTreeMap<(u64, String), u32> = BTreeMap::new();
    let mut out = Vec::new();
    for e in events {
        let file = e.num("file");
        let slave = e.arg("slave").map(str::to_string);
        match (e.event.as_str(), file, slave) {
            ("REGISTER", Some(f), _) => {
                archived.insert(f, e.num("archived") == Some(1));
            }
            ("PLACE", Some(f), Some(s)) | ("LAND", Some(f), Some(s)) => {
                copies.entry(f).or_default().insert(s);
            }
            ("GO", Some(f), _) => {
                if let Some(op) = e.num("op") {
                    op_file.insert(op, f);
                }
            }
            ("HANDLE", _, Some(s)) => {
                if let Some(op) = e.num("op") {
                    if let Some(&f) = op_file.get(&op) {
                        *handles.entry((f, s.clone())).or_default() += 1;
                        op_slave.insert(op, s);
                    }
                }
            }
            ("CLOSE", _, _) => {
                if let Some(op) = e.num("op") {
                    if let (Some(s), Some(&f)) = (op_slave.remove(&op), op_file.get(&op)) {
                        if let Some(n) = handles.get_mut(&(f, s)) {
                            *n = n.saturating_sub(1);
                        }
                    }
                }
            }
            ("PURGE", Some(f), Some(s)) => {
                let open = handles.get(&(f, s.clone())).copied().unwrap_or(0);
                if open > 0 {
                    out.push(v(
                        "purge_safety",
                        e,
                        format!("file {f} purged from {s} with {open} open"),
                    ));
                }
                let set = copies.entry(f).or_default();
                set.remove(&s);
                if set.is_empty() && !archived.get(&f).copied().unwrap_or(false) {
                    out.push(v(
                        "purge_safety",
                        e,
                        format!("last copy of unarchived file {f} purged"),
                    ));
                }
            }
            _ => {}
        }
    }
    out
}

/// Holders of one resource are always compatible: many readers or one
/// updater.
pub fn lock_safety(events: &[TraceEvent]) -> Vec<Violation> {
    let mut held: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    let mut out = Vec::new();
    for e in events.iter().filter(|e| e.actor == "locks") {
        match e.event.as_str() {
            "GRANTED" => {
                let (Some(c), Some(r), Some(m)) = (e.arg("client"), e.arg("res"), e.arg("mode")) else {
                    continue;
                };
                let h = held.entry(r.to_string()).or_default();
                let conflict = h.iter().any(|(hc, hm)| hc != c && (m == "U" || hm == "U"));
                if conflict {
                    out.push(v(
                        "lock_safety",
                        e,
                        format!("{c} got {m} on {r} while held by {h:?}"),
                    ));
                }
                h.insert(c.to_string(), m.to_string());
            }
            "RELEASED" => {
                if let (Some(c), Some(r)) = (e.arg("client"), e.arg("res")) {
                    if let Some(h) = held.get_mut(r) {
                        h.remove(c);
                    }
                }
            }
            "REAP" => {
                if let Some(c) = e.arg("client") {
                    for h in held.values_mut() {
                        h.remove(c);
                    }
                }
            }
            "RESTART" => held.clear(),
            _ => {}
        }
    }
    out
}

/// At the quiescent audit the lock server knows exactly the live clients.
pub fn stale_sessions(events: &[TraceEvent]) -> Vec<Violation> {
    events
        .iter()
        .filter(|e| e.event == "AUDIT")
        .filter(|e| e.num("sessions") != e.num("live"))
        .map(|e| {
            v(
                "stale_sessions",
                e,
                format!(
                    "{} sessions for {} live clients",
                    e.arg("sessions").unwrap_or("?"),
                    e.arg("live").unwrap_or("?")
                ),
            )
        })
        .collect()
}
