//! Line-framed text protocol between clients, masters and slaves.
//!
//! Client to master: `OPEN <path>`, answered by `GO <host:port>`,
//! `WAIT <ms>` or `ERR <code>`. Client to slave: `READ <file_id> <offset>
//! <len>`, answered by `DATA <len>` followed by `len` raw bytes, or
//! `ERR <code>`.

use alloc::string::{String, ToString};
use core::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MasterReply {
    Go(String),
    Wait(u64),
    Err(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReadRequest {
    pub file_id: u64,
    pub offset: u64,
    pub len: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SlaveReply {
    /// Header only; the payload follows on the wire.
    Data(u64),
    Err(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed line: {0:?}")]
pub struct ParseError(pub String);

fn bad(line: &str) -> ParseError {
    ParseError(line.into())
}

/// Path of an `OPEN` line.
pub fn parse_open(line: &str) -> Result<&str, ParseError> {
    match line.trim_end().split_once(' ') {
        Some(("OPEN", path)) if !path.is_empty() && !path.contains(char::is_whitespace) => Ok(path),
        _ => Err(bad(line)),
    }
}

pub fn parse_master_reply(line: &str) -> Result<MasterReply, ParseError> {
    let line = line.trim_end();
    match line.split_once(' ') {
        Some(("GO", addr)) if !addr.is_empty() => Ok(MasterReply::Go(addr.into())),
        Some(("WAIT", ms)) => ms.parse().map(MasterReply::Wait).map_err(|_| bad(line)),
        Some(("ERR", code)) if !code.is_empty() => Ok(MasterReply::Err(code.into())),
        _ => Err(bad(line)),
    }
}

pub fn parse_read(line: &str) -> Result<ReadRequest, ParseError> {
    let line = line.trim_end();
    let mut it = line.split(' ');
    if it.next() != Some("READ") {
        return Err(bad(line));
    }
    let mut num = || {
        it.next()
            .and_then(|s| s.parse::<u64>().ok())
            .ok_or_else(|| bad(line))
    };
    let r = ReadRequest {
        file_id: num()?,
        offset: num()?,
        len: num()?,
    };
    if it.next().is_some() {
        return Err(bad(line));
    }
    Ok(r)
}

pub fn parse_slave_reply(line: &str) -> Result<SlaveReply, ParseError> {
    let line = line.trim_end();
    match line.split_once(' ') {
        Some(("DATA", n)) => n.parse().map(SlaveReply::Data).map_err(|_| bad(line)),
        Some(("ERR", code)) if !code.is_empty() => Ok(SlaveReply::Err(code.into())),
        _ => Err(bad(line)),
    }
}

impl fmt::Display for MasterReply {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MasterReply::Go(a) => write!(f, "GO {a}"),
            MasterReply::Wait(ms) => write!(f, "WAIT {ms}"),
            MasterReply::Err(c) => write!(f, "ERR {c}"),
        }
    }
}

impl fmt::Display for ReadRequest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "READ {} {} {}", self.file_id, self.offset, self.len)
    }
}

impl fmt::Display for SlaveReply {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SlaveReply::Data(n) => write!(f, "DATA {n}"),
            SlaveReply::Err(c) => write!(f, "ERR {c}"),
        }
    }
}

impl From<&super::OpenReply> for MasterReply {
    fn from(r: &super::OpenReply) -> Self {
        match r {
            super::OpenReply::Redirect { addr, .. } => MasterReply::Go(addr.clone()),
            super::OpenReply::Wait { ms, .. } => MasterReply::Wait(*ms),
        }
    }
}

impl From<&super::RedirError> for MasterReply {
    fn from(e: &super::RedirError) -> Self {
        MasterReply::Err(e.code().to_string())
    }
}
