//! Lock service front end: the text protocol over a [`LockTable`], plus the
//! `lockstats.tsv` dump.

use std::collections::BTreeMap;

use anyhow::{bail, Result};
use petastore_core::lock::protocol::{parse_request, Reply, Request};
use petastore_core::lock::{Acquire, Grant, LockConfig, LockTable, ReapOutcome, ResourceStats};
use petastore_core::Timestamp;

/// Everything one request caused.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Handled {
    pub request: Option<Request>,
    pub reply: Reply,
    /// Locks handed to other, previously queued clients.
    pub grants: Vec<Grant>,
    pub reaped: ReapOutcome,
}

#[derive(Debug, Clone, Default)]
pub struct LockService {
    pub table: LockTable,
}

impl LockService {
    pub fn new(config: LockConfig) -> Self {
        Self {
            table: LockTable::new(config),
        }
    }

    pub fn handle_line(&mut self, line: &str, now: Timestamp) -> Handled {
        let req = match parse_request(line) {
            Ok(r) => r,
            Err(_) => {
                return Handled {
                    request: None,
                    reply: Reply::Err("BAD_REQUEST".into()),
                    grants: Vec::new(),
                    reaped: ReapOutcome::default(),
                }
            }
        };
        let t = &mut self.table;
        let mut grants = Vec::new();
        let mut reaped = ReapOutcome::default();
        let reply = match &req {
            Request::Connect(c) => match t.connect(c, now) {
                Ok(()) => Reply::Ok,
                Err(e) => Reply::Err(e.code().into()),
            },
            Request::Lock(c, r, m) => match t.acquire(c, r, *m, now) {
                Ok(Acquire::Granted) => Reply::Grant,
                Ok(Acquire::Queued(p)) => Reply::Queue(p),
                Err(e) => Reply::Err(e.code().into()),
            },
            Request::Unlock(c, r) => match t.release(c, r, now) {
                Ok(g) => {
                    grants = g;
                    Reply::Ok
                }
                Err(e) => Reply::Err(e.code().into()),
            },
            // Keepalive doubles as a reap sweep.
            Request::Ping(c) => match t.heartbeat(c, now) {
                Ok(()) => {
                    reaped = t.reap_orphans(now);
                    Reply::Ok
                }
                Err(e) => Reply::Err(e.code().into()),
            },
        };
        grants.extend(reaped.granted.iter().cloned());
        Handled {
            request: Some(req),
            reply,
            grants,
            reaped,
        }
    }

    /// Periodic sweep independent of client traffic.
    pub fn sweep(&mut self, now: Timestamp) -> ReapOutcome {
        self.table.reap_orphans(now)
    }

    pub fn lockstats_tsv(&self) -> String {
        render_lockstats(self.table.stats())
    }
}

pub fn render_lockstats(stats: &BTreeMap<String, ResourceStats>) -> String {
    let mut out = String::from("resource\tgrants\tcollisions\tmax_queue\n");
    for (r, s) in stats {
        out.push_str(&format!("{r}\t{}\t{}\t{}\n", s.grants, s.collisions, s.max_queue));
    }
    out
}

pub fn parse_lockstats(text: &str) -> Result<BTreeMap<String, ResourceStats>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate().skip(1).filter(|(_, l)| !l.is_empty()) {
        let f: Vec<&str> = line.split('\t').collect();
        let [r, g, c, q] = f[..] else {
            bail!("lockstats.tsv:{}: expected 4 fields", n + 1);
        };
        out.insert(
            r.to_string(),
            ResourceStats {
                grants: g.parse()?,
                collisions: c.parse()?,
                max_queue: q.parse()?,
            },
        );
    }
    Ok(out)
}
