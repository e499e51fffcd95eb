//! Line-oriented text protocol for the lock service.
//!
//! Requests: `CONN <client>`, `LOCK <client> <resource> R|U`,
//! `UNLK <client> <resource>`, `PING <client>`.
//! Replies: `OK`, `GRANT`, `QUEUE <pos>`, `ERR <code>`. Grants handed to
//! previously queued clients are announced as `GRANT <resource>`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use super::{Acquire, ClientId, Grant, LockError, LockMode, LockTable};
use crate::time::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Request {
    Connect(ClientId),
    Lock(ClientId, String, LockMode),
    Unlock(ClientId, String),
    Ping(ClientId),
}

impl Request {
    pub fn client(&self) -> &ClientId {
        match self {
            Request::Connect(c) | Request::Lock(c, _, _) | Request::Unlock(c, _) | Request::Ping(c) => c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reply {
    Ok,
    Grant,
    Queue(usize),
    Err(String),
}

impl fmt::Display for Request {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Request::Connect(c) => write!(f, "CONN {c}"),
            Request::Lock(c, r, m) => write!(f, "LOCK {c} {r} {}", m.code()),
            Request::Unlock(c, r) => write!(f, "UNLK {c} {r}"),
            Request::Ping(c) => write!(f, "PING {c}"),
        }
    }
}

impl fmt::Display for Reply {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reply::Ok => f.write_str("OK"),
            Reply::Grant => f.write_str("GRANT"),
            Reply::Queue(pos) => write!(f, "QUEUE {pos}"),
            Reply::Err(code) => write!(f, "ERR {code}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("BAD_REQUEST: {0}")]
pub struct ParseError(pub String);

pub fn parse_request(line: &str) -> Result<Request, ParseError> {
    let mut parts = line.split_ascii_whitespace();
    let verb = parts.next().ok_or_else(|| ParseError("empty line".into()))?;
    let args: Vec<&str> = parts.collect();
    let arity = |n: usize| {
        if args.len() == n {
            Ok(())
        } else {
            Err(ParseError(format!("{verb} takes {n} argument(s)")))
        }
    };
    match verb {
        "CONN" => {
            arity(1)?;
            Ok(Request::Connect(ClientId::from(args[0])))
        }
        "LOCK" => {
            arity(3)?;
            let mode = match args[2] {
                "R" => LockMode::Read,
                "U" => LockMode::Update,
                m => return Err(ParseError(format!("unknown mode `{m}`"))),
            };
            Ok(Request::Lock(ClientId::from(args[0]), args[1].into(), mode))
        }
        "UNLK" => {
            arity(2)?;
            Ok(Request::Unlock(ClientId::from(args[0]), args[1].into()))
        }
        "PING" => {
            arity(1)?;
            Ok(Request::Ping(ClientId::from(args[0])))
        }
        other => Err(ParseError(format!("unknown verb `{other}`"))),
    }
}

pub fn parse_reply(line: &str) -> Option<Reply> {
    let mut parts = line.split_ascii_whitespace();
    match (parts.next()?, parts.next()) {
        ("OK", None) => Some(Reply::Ok),
        ("GRANT", _) => Some(Reply::Grant),
        ("QUEUE", Some(pos)) => pos.parse().ok().map(Reply::Queue),
        ("ERR", Some(code)) => Some(Reply::Err(code.into())),
        _ => None,
    }
}

fn err(e: LockError) -> Reply {
    Reply::Err(e.code().into())
}

/// Applies one request to the table. Returns the direct reply plus any
/// grants handed to other (previously queued) clients.
///
/// `PING` also runs as an implicit keepalive and a reap sweep, so a server
/// that only ever sees traffic still drops dead sessions.
pub fn apply(table: &mut LockTable, req: &Request, now: Timestamp) -> (Reply, Vec<Grant>) {
    match req {
        Request::Connect(c) => match table.connect(c, now) {
            Ok(()) => (Reply::Ok, Vec::new()),
            Err(e) => (err(e), Vec::new()),
        },
        Request::Lock(c, r, m) => match table.acquire(c, r, *m, now) {
            Ok(Acquire::Granted) => (Reply::Grant, Vec::new()),
            Ok(Acquire::Queued(pos)) => (Reply::Queue(pos), Vec::new()),
            Err(e) => (err(e), Vec::new()),
        },
        Request::Unlock(c, r) => match table.release(c, r, now) {
            Ok(grants) => (Reply::Ok, grants),
            Err(e) => (err(e), Vec::new()),
        },
        Request::Ping(c) => match table.heartbeat(c, now) {
            Ok(()) => (Reply::Ok, table.reap_orphans(now).granted),
            Err(e) => (err(e), Vec::new()),
        },
    }
}
