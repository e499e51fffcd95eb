//! A redirector cluster: one master, its slave disks and the tertiary tier,
//! with the master's planned actions carried out against real images.
//!
//! Block frames travel after a `DATA <n>` line as `n` bytes:
//! `codec(1) file_id(8) count(4)` then per frame `index(4) logical_len(4)
//! logical_offset(8) physical_offset(8) compressed_len(4) crc32(4) bytes`,
//! all big-endian.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::rc::Rc;

use anyhow::{anyhow, bail, Result};
use petastore_core::redirect::hierarchy::{Resolution, Resolver};
use petastore_core::redirect::protocol::{parse_read, ReadRequest, SlaveReply};
use petastore_core::redirect::{Action, Load, Master, RedirError, SlaveId};
use petastore_core::storage::{BlockEntry, BlockFrames, CodecId, Disk, Frame, StorageError};
use petastore_core::Timestamp;

pub fn encode_frames(f: &BlockFrames) -> Vec<u8> {
    let mut out = Vec::with_capacity(13 + f.wire_len() + f.frames.len() * 32);
    out.push(f.codec.0);
    out.extend_from_slice(&f.file_id.to_be_bytes());
    out.extend_from_slice(&(f.frames.len() as u32).to_be_bytes());
    for fr in &f.frames {
        out.extend_from_slice(&fr.index.to_be_bytes());
        out.extend_from_slice(&fr.logical_len.to_be_bytes());
        out.extend_from_slice(&fr.entry.logical_offset.to_be_bytes());
        out.extend_from_slice(&fr.entry.physical_offset.to_be_bytes());
        out.extend_from_slice(&fr.entry.compressed_len.to_be_bytes());
        out.extend_from_slice(&fr.entry.crc32.to_be_bytes());
        out.extend_from_slice(&fr.bytes);
    }
    out
}

pub fn decode_frames(mut b: &[u8]) -> Result<BlockFrames> {
    fn take<'a>(b: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
        if b.len() < n {
            bail!("frame payload truncated");
        }
        let (h, t) = b.split_at(n);
        *b = t;
        Ok(h)
    }
    let u32_ = |b: &mut &[u8]| -> Result<u32> { Ok(u32::from_be_bytes(take(b, 4)?.try_into()?)) };
    let u64_ = |b: &mut &[u8]| -> Result<u64> { Ok(u64::from_be_bytes(take(b, 8)?.try_into()?)) };
    let codec = CodecId(take(&mut b, 1)?[0]);
    let file_id = u64_(&mut b)?;
    let count = u32_(&mut b)?;
    let mut frames = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let index = u32_(&mut b)?;
        let logical_len = u32_(&mut b)?;
        let entry = BlockEntry {
            logical_offset: u64_(&mut b)?,
            physical_offset: u64_(&mut b)?,
            compressed_len: u32_(&mut b)?,
            crc32: u32_(&mut b)?,
        };
        let bytes = take(&mut b, entry.compressed_len as usize)?.to_vec();
        frames.push(Frame {
            index,
            entry,
            logical_len,
            bytes,
        });
    }
    if !b.is_empty() {
        bail!("trailing bytes after frames");
    }
    Ok(BlockFrames {
        file_id,
        codec,
        frames,
    })
}

/// Full wire response for a slave read: header line plus payload.
pub fn render_read_response(r: &Result<BlockFrames, String>) -> Vec<u8> {
    match r {
        Ok(f) => {
            let body = encode_frames(f);
            let mut out = format!("{}\n", SlaveReply::Data(body.len() as u64)).into_bytes();
            out.extend_from_slice(&body);
            out
        }
        Err(code) => format!("{}\n", SlaveReply::Err(code.clone())).into_bytes(),
    }
}

#[derive(Debug, Clone, Default)]
pub struct SlaveNode {
    pub addr: String,
    pub disk: Disk,
    /// Whether the process is up. An offline node serves nothing and stops
    /// reporting load.
    pub up: bool,
    pub connections: u32,
    pub open: BTreeMap<u64, u32>,
    served_since_report: u64,
    last_report: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InFlight {
    pub file: u64,
    pub to: SlaveId,
    /// `None` for a staging from tertiary.
    pub from: Option<SlaveId>,
    pub completion: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClusterEvent {
    Action(Action),
    Landed { file: u64, slave: SlaveId, staged: bool },
    Failed { file: u64, slave: SlaveId },
}

pub struct Cluster {
    pub master: Master,
    pub nodes: BTreeMap<SlaveId, SlaveNode>,
    pub tertiary: BTreeMap<u64, Vec<u8>>,
    pub inflight: Vec<InFlight>,
    /// Files whose last purge left no copy anywhere outside tertiary.
    pub purged: BTreeSet<u64>,
}

impl Cluster {
    pub fn new(master: Master) -> Self {
        Self {
            master,
            nodes: BTreeMap::new(),
            tertiary: BTreeMap::new(),
            inflight: Vec::new(),
            purged: BTreeSet::new(),
        }
    }

    pub fn add_slave(
        &mut self,
        id: SlaveId,
        addr: &str,
        capacity: u64,
        now: Timestamp,
    ) -> Result<(), RedirError> {
        self.master.add_slave(id, addr, capacity, now)?;
        self.nodes.insert(
            id,
            SlaveNode {
                addr: addr.into(),
                up: true,
                last_report: now,
                ..SlaveNode::default()
            },
        );
        Ok(())
    }

    /// Registers a stored-file image under `path`. With `archive`, the image
    /// also goes to tertiary; `place_on` installs it on a slave right away.
    pub fn add_file(
        &mut self,
        path: &str,
        file_id: u64,
        image: Vec<u8>,
        archive: bool,
        place_on: Option<SlaveId>,
    ) -> Result<(), RedirError> {
        self.master
            .register_file(path, file_id, image.len() as u64, archive)?;
        if let Some(s) = place_on {
            self.master.place(file_id, s)?;
            self.nodes
                .get_mut(&s)
                .ok_or(RedirError::UnknownSlave(s))?
                .disk
                .install(file_id, image.clone());
        }
        if archive {
            self.tertiary.insert(file_id, image);
        }
        Ok(())
    }

    pub fn set_up(&mut self, id: SlaveId, up: bool) {
        if let Some(n) = self.nodes.get_mut(&id) {
            n.up = up;
            if !up {
                n.connections = 0;
                n.open.clear();
            }
        }
    }

    /// Up slaves report their load to the master.
    pub fn report_loads(&mut self, now: Timestamp) {
        for (&id, n) in &mut self.nodes {
            if !n.up {
                continue;
            }
            let dt = now.since(n.last_report).as_secs_f64();
            let rate = if dt > 0.0 {
                (n.served_since_report as f64 / dt) as u64
            } else {
                0
            };
            let load = Load {
                active_connections: n.connections,
                open_files: n.open.len() as u32,
                bytes_rate: rate,
            };
            let _ = self.master.report_load(id, now, load);
            n.served_since_report = 0;
            n.last_report = now;
        }
    }

    fn execute(&mut self, a: Action) {
        match a {
            Action::Purge { file, slave } => {
                if let Some(n) = self.nodes.get_mut(&slave) {
                    n.disk.remove(file);
                }
                if self.master.holders(file).is_empty() {
                    self.purged.insert(file);
                }
            }
            Action::Stage { file, slave } => {
                if let Some((_, t)) = self
                    .master
                    .staging()
                    .find(|(f, t)| *f == file && t.slave == slave)
                {
                    self.inflight.push(InFlight {
                        file,
                        to: slave,
                        from: None,
                        completion: t.completion,
                    });
                }
            }
            Action::Replicate { file, from, to } => {
                if let Some((_, t)) = self
                    .master
                    .replicating()
                    .find(|(f, t)| *f == file && t.slave == to)
                {
                    self.inflight.push(InFlight {
                        file,
                        to,
                        from: Some(from),
                        completion: t.completion,
                    });
                }
            }
        }
    }

    /// Runs one master tick, executes what it planned and lands every
    /// transfer due by `now`.
    pub fn advance(&mut self, now: Timestamp) -> Vec<ClusterEvent> {
        let mut events = Vec::new();
        for a in self.master.tick(now) {
            self.execute(a);
            events.push(ClusterEvent::Action(a));
        }
        let (due, rest): (Vec<InFlight>, Vec<InFlight>) =
            self.inflight.drain(..).partition(|t| t.completion <= now);
        self.inflight = rest;
        for t in due {
            let source = match t.from {
                None => self.tertiary.get(&t.file).cloned(),
                Some(s) => self
                    .nodes
                    .get(&s)
                    .filter(|n| n.up)
                    .and_then(|n| n.disk.image(t.file).map(<[u8]>::to_vec)),
            };
            let target_up = self.nodes.get(&t.to).is_some_and(|n| n.up);
            let still_planned = match t.from {
                None => self.master.staging().any(|(f, x)| f == t.file && x.slave == t.to),
                Some(_) => self
                    .master
                    .replicating()
                    .any(|(f, x)| f == t.file && x.slave == t.to),
            };
            if !still_planned {
                continue;
            }
            match source {
                Some(image) if target_up => {
                    self.nodes
                        .get_mut(&t.to)
                        .expect("known")
                        .disk
                        .install(t.file, image);
                    let r = match t.from {
                        None => self.master.staging_complete(t.file, t.to),
                        Some(_) => self.master.replication_complete(t.file, t.to),
                    };
                    if r.is_ok() {
                        self.purged.remove(&t.file);
                        events.push(ClusterEvent::Landed {
                            file: t.file,
                            slave: t.to,
                            staged: t.from.is_none(),
                        });
                    }
                }
                _ => {
                    self.master.transfer_failed(t.file, t.to);
                    events.push(ClusterEvent::Failed {
                        file: t.file,
                        slave: t.to,
                    });
                }
            }
        }
        events
    }

    /// Serves the block frames for one read on `slave`.
    pub fn read(&mut self, slave: SlaveId, req: &ReadRequest) -> Result<BlockFrames, String> {
        let n = self.nodes.get_mut(&slave).ok_or("UNKNOWN_SLAVE")?;
        if !n.up {
            return Err("OFFLINE".into());
        }
        let frames = n
            .disk
            .read_blocks(req.file_id, req.offset, req.len)
            .map_err(|e: StorageError| e.code().to_string())?;
        n.served_since_report += frames.wire_len() as u64;
        Ok(frames)
    }

    pub fn read_line(&mut self, slave: SlaveId, line: &str) -> Vec<u8> {
        let r = parse_read(line)
            .map_err(|_| "BAD_REQUEST".to_string())
            .and_then(|req| self.read(slave, &req));
        render_read_response(&r)
    }

    pub fn slave_by_addr(&self, addr: &str) -> Option<SlaveId> {
        self.nodes.iter().find(|(_, n)| n.addr == addr).map(|(&id, _)| id)
    }

    /// A client opened `file` on `slave`.
    pub fn attach(&mut self, slave: SlaveId, file: u64) {
        if let Some(n) = self.nodes.get_mut(&slave) {
            n.connections += 1;
            *n.open.entry(file).or_insert(0) += 1;
        }
    }

    /// Ends an [`attach`](Self::attach)ed read and tells the master.
    pub fn detach(&mut self, slave: SlaveId, file: u64) {
        self.hangup(slave, file);
        self.master.close(slave, file);
    }

    /// Drops a slave connection without touching the master's view.
    pub fn hangup(&mut self, slave: SlaveId, file: u64) {
        if let Some(n) = self.nodes.get_mut(&slave) {
            n.connections = n.connections.saturating_sub(1);
            if let Some(c) = n.open.get_mut(&file) {
                *c -= 1;
                if *c == 0 {
                    n.open.remove(&file);
                }
            }
        }
    }
}

/// A cluster shared with a super-master.
#[derive(Clone)]
pub struct SharedCluster {
    name: String,
    pub inner: Rc<RefCell<Cluster>>,
}

impl SharedCluster {
    pub fn new(c: Cluster) -> Self {
        Self {
            name: c.master.name().to_string(),
            inner: Rc::new(RefCell::new(c)),
        }
    }
}

impl Resolver for SharedCluster {
    fn name(&self) -> &str {
        &self.name
    }

    fn resolve(&mut self, path: &str, now: Timestamp) -> Result<Resolution, RedirError> {
        self.inner.borrow_mut().master.resolve(path, now)
    }
}

pub fn frames_from_wire(header: &str, body: &[u8]) -> Result<BlockFrames> {
    match petastore_core::redirect::protocol::parse_slave_reply(header)? {
        SlaveReply::Data(n) if n as usize == body.len() => decode_frames(body),
        SlaveReply::Data(n) => Err(anyhow!("DATA {n} but {} bytes followed", body.len())),
        SlaveReply::Err(code) => Err(anyhow!("slave error {code}")),
    }
}
