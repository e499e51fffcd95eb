//! Load-balancing redirector.
//!
//! A [`Master`] knows which slave data servers hold which files. An open is
//! answered with a redirection to the least-loaded online holder; files on
//! no online slave are staged in from tertiary storage while the client is
//! told to wait. Periodic [`Master::tick`]s replicate hot files and purge
//! idle ones under disk pressure. Masters nest behind a [`SuperMaster`].
//!
//! The master only plans. It emits [`Action`]s and learns about completed
//! transfers through [`Master::staging_complete`] and
//! [`Master::replication_complete`].

pub mod hierarchy;
pub mod policy;
pub mod protocol;

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub use hierarchy::{Resolution, Resolver, SuperMaster};
pub use policy::{PolicyConfig, PolicyError};

use crate::hash::fnv1a;
use crate::storage::LatencyModel;
use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SlaveId(pub u32);

impl fmt::Display for SlaveId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "slave{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlaveStatus {
    Online,
    Offline,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Load {
    pub active_connections: u32,
    pub open_files: u32,
    pub bytes_rate: u64,
}

#[derive(Debug, Clone)]
pub struct SlaveState {
    pub id: SlaveId,
    pub addr: String,
    pub load: Load,
    pub last_report: Timestamp,
    pub disk_capacity: u64,
    /// Sum of resident file sizes.
    pub disk_used: u64,
    /// Space promised to transfers in flight.
    pub reserved: u64,
    pub resident: BTreeSet<u64>,
    pub open_reads: BTreeMap<u64, u32>,
    admin_offline: bool,
    silent: bool,
}

impl SlaveState {
    pub fn status(&self) -> SlaveStatus {
        if self.admin_offline || self.silent {
            SlaveStatus::Offline
        } else {
            SlaveStatus::Online
        }
    }

    pub fn is_online(&self) -> bool {
        self.status() == SlaveStatus::Online
    }

    pub fn free(&self) -> u64 {
        self.disk_capacity.saturating_sub(self.disk_used + self.reserved)
    }

    fn above_pct(&self, pct: u8) -> bool {
        u128::from(self.disk_used) * 100 > u128::from(self.disk_capacity) * u128::from(pct)
    }

    fn open_count(&self, file: u64) -> u32 {
        self.open_reads.get(&file).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone)]
pub struct FileEntry {
    pub file_id: u64,
    pub path: String,
    pub size: u64,
    pub in_tertiary: bool,
    pub last_access: Option<Timestamp>,
    /// Access times within the policy window, oldest first.
    pub accesses: VecDeque<Timestamp>,
    rr: u64,
}

impl FileEntry {
    fn prune(&mut self, now: Timestamp, window: core::time::Duration) {
        while self.accesses.front().is_some_and(|&a| now.since(a) > window) {
            self.accesses.pop_front();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transfer {
    pub slave: SlaveId,
    pub completion: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Action {
    Stage { file: u64, slave: SlaveId },
    Replicate { file: u64, from: SlaveId, to: SlaveId },
    Purge { file: u64, slave: SlaveId },
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Stage { file, slave } => write!(f, "STAGE {file} {slave}"),
            Action::Replicate { file, from, to } => write!(f, "REPLICATE {file} {from} {to}"),
            Action::Purge { file, slave } => write!(f, "PURGE {file} {slave}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OpenReply {
    Redirect {
        slave: SlaveId,
        addr: String,
        file_id: u64,
    },
    Wait {
        ms: u64,
        file_id: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RedirError {
    #[error("NOT_FOUND: {0}")]
    NotFound(String),
    #[error("NO_SLAVES")]
    NoSlaves,
    #[error("UNAVAILABLE: file {0} is only on offline slaves")]
    Unavailable(u64),
    #[error("NO_SPACE for file {0}")]
    NoSpace(u64),
    #[error("UNKNOWN_SLAVE: {0}")]
    UnknownSlave(SlaveId),
    #[error("{0} already registered")]
    DuplicateSlave(SlaveId),
    #[error("file {0} or its path already registered")]
    DuplicateFile(u64),
    #[error("unknown file {0}")]
    UnknownFile(u64),
    #[error("no transfer of file {0} to {1} in flight")]
    NoTransfer(u64, SlaveId),
}

impl RedirError {
    pub fn code(&self) -> &'static str {
        match self {
            RedirError::NotFound(_) => "NOT_FOUND",
            RedirError::NoSlaves => "NO_SLAVES",
            RedirError::Unavailable(_) => "UNAVAILABLE",
            RedirError::NoSpace(_) => "NO_SPACE",
            RedirError::UnknownSlave(_) => "UNKNOWN_SLAVE",
            RedirError::DuplicateSlave(_) => "DUPLICATE_SLAVE",
            RedirError::DuplicateFile(_) => "DUPLICATE_FILE",
            RedirError::UnknownFile(_) => "UNKNOWN_FILE",
            RedirError::NoTransfer(..) => "NO_TRANSFER",
        }
    }
}

const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct Master {
    name: String,
    policy: PolicyConfig,
    latency: LatencyModel,
    slaves: BTreeMap<SlaveId, SlaveState>,
    paths: BTreeMap<String, u64>,
    files: BTreeMap<u64, FileEntry>,
    staging: BTreeMap<u64, Transfer>,
    replicating: BTreeMap<(u64, SlaveId), Transfer>,
    /// Actions decided outside `tick`, handed out first at the next tick.
    pending: VecDeque<Action>,
}

impl Master {
    pub fn new(name: &str, policy: PolicyConfig, latency: LatencyModel) -> Self {
        Self {
            name: name.into(),
            policy,
            latency,
            slaves: BTreeMap::new(),
            paths: BTreeMap::new(),
            files: BTreeMap::new(),
            staging: BTreeMap::new(),
            replicating: BTreeMap::new(),
            pending: VecDeque::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn policy(&self) -> &PolicyConfig {
        &self.policy
    }

    pub fn slaves(&self) -> impl Iterator<Item = &SlaveState> {
        self.slaves.values()
    }

    pub fn slave(&self, id: SlaveId) -> Option<&SlaveState> {
        self.slaves.get(&id)
    }

    pub fn files(&self) -> impl Iterator<Item = &FileEntry> {
        self.files.values()
    }

    pub fn file(&self, id: u64) -> Option<&FileEntry> {
        self.files.get(&id)
    }

    pub fn file_id(&self, path: &str) -> Option<u64> {
        self.paths.get(path).copied()
    }

    pub fn staging(&self) -> impl Iterator<Item = (u64, Transfer)> + '_ {
        self.staging.iter().map(|(&f, &t)| (f, t))
    }

    pub fn replicating(&self) -> impl Iterator<Item = (u64, Transfer)> + '_ {
        self.replicating.iter().map(|(&(f, _), &t)| (f, t))
    }

    /// All slaves holding `file`, online or not.
    pub fn holders(&self, file: u64) -> Vec<SlaveId> {
        self.slaves
            .values()
            .filter(|s| s.resident.contains(&file))
            .map(|s| s.id)
            .collect()
    }

    pub fn score(&self, id: SlaveId) -> Option<f64> {
        self.slaves.get(&id).map(|s| self.policy.load_score(&s.load))
    }

    fn slave_mut(&mut self, id: SlaveId) -> Result<&mut SlaveState, RedirError> {
        self.slaves.get_mut(&id).ok_or(RedirError::UnknownSlave(id))
    }

    pub fn add_slave(
        &mut self,
        id: SlaveId,
        addr: &str,
        capacity: u64,
        now: Timestamp,
    ) -> Result<(), RedirError> {
        if self.slaves.contains_key(&id) {
            return Err(RedirError::DuplicateSlave(id));
        }
        self.slaves.insert(
            id,
            SlaveState {
                id,
                addr: addr.into(),
                load: Load::default(),
                last_report: now,
                disk_capacity: capacity,
                disk_used: 0,
                reserved: 0,
                resident: BTreeSet::new(),
                open_reads: BTreeMap::new(),
                admin_offline: false,
                silent: false,
            },
        );
        Ok(())
    }

    pub fn register_file(
        &mut self,
        path: &str,
        file_id: u64,
        size: u64,
        in_tertiary: bool,
    ) -> Result<(), RedirError> {
        if self.files.contains_key(&file_id) || self.paths.contains_key(path) {
            return Err(RedirError::DuplicateFile(file_id));
        }
        self.paths.insert(path.into(), file_id);
        self.files.insert(
            file_id,
            FileEntry {
                file_id,
                path: path.into(),
                size,
                in_tertiary,
                last_access: None,
                accesses: VecDeque::new(),
                rr: fnv1a(path.as_bytes()),
            },
        );
        Ok(())
    }

    /// Declares `file` resident on `slave`, e.g. for the initial layout.
    pub fn place(&mut self, file: u64, slave: SlaveId) -> Result<(), RedirError> {
        let size = self.files.get(&file).ok_or(RedirError::UnknownFile(file))?.size;
        let s = self.slave_mut(slave)?;
        if s.resident.contains(&file) {
            return Ok(());
        }
        if s.free() < size {
            return Err(RedirError::NoSpace(file));
        }
        s.resident.insert(file);
        s.disk_used += size;
        Ok(())
    }

    /// Applies a load report. Reports older than the last accepted one are
    /// ignored (returns `false`). A fresh report revives a slave that had
    /// only gone silent.
    pub fn report_load(&mut self, id: SlaveId, at: Timestamp, load: Load) -> Result<bool, RedirError> {
        let s = self.slave_mut(id)?;
        if at < s.last_report {
            return Ok(false);
        }
        s.last_report = at;
        s.load = load;
        s.silent = false;
        Ok(true)
    }

    pub fn set_slave_status(
        &mut self,
        id: SlaveId,
        status: SlaveStatus,
        now: Timestamp,
    ) -> Result<(), RedirError> {
        let s = self.slave_mut(id)?;
        match status {
            SlaveStatus::Offline => {
                s.admin_offline = true;
                self.abort_transfers_to(id);
            }
            SlaveStatus::Online => {
                s.admin_offline = false;
                s.silent = false;
                s.last_report = s.last_report.max(now);
            }
        }
        Ok(())
    }

    fn abort_transfers_to(&mut self, id: SlaveId) {
        let mut freed = 0;
        let files = &self.files;
        self.staging.retain(|f, t| {
            let keep = t.slave != id;
            if !keep {
                freed += files[f].size;
            }
            keep
        });
        self.replicating.retain(|&(f, to), _| {
            let keep = to != id;
            if !keep {
                freed += files[&f].size;
            }
            keep
        });
        if let Some(s) = self.slaves.get_mut(&id) {
            s.reserved -= freed;
        }
    }

    /// Online slaves ordered by load, then id.
    fn by_load(&self) -> Vec<(f64, SlaveId)> {
        let mut v: Vec<(f64, SlaveId)> = self
            .slaves
            .values()
            .filter(|s| s.is_online())
            .map(|s| (self.policy.load_score(&s.load), s.id))
            .collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        v
    }

    pub fn open(&mut self, path: &str, now: Timestamp) -> Result<OpenReply, RedirError> {
        let fid = *self
            .paths
            .get(path)
            .ok_or_else(|| RedirError::NotFound(path.into()))?;
        let window = self.policy.window;
        let f = self.files.get_mut(&fid).expect("path maps to a file");
        f.prune(now, window);
        f.accesses.push_back(now);
        f.last_access = Some(now);
        let (size, in_tertiary) = (f.size, f.in_tertiary);

        let online = self.by_load();
        if online.is_empty() {
            return Err(RedirError::NoSlaves);
        }
        let holders: Vec<(f64, SlaveId)> = online
            .iter()
            .copied()
            .filter(|(_, id)| self.slaves[id].resident.contains(&fid))
            .collect();
        if let Some(&(best, _)) = holders.first() {
            let tied: Vec<SlaveId> = holders
                .iter()
                .take_while(|(s, _)| *s <= best + TIE_EPS)
                .map(|&(_, id)| id)
                .collect();
            let f = self.files.get_mut(&fid).expect("present");
            let pick = tied[(f.rr % tied.len() as u64) as usize];
            f.rr = f.rr.wrapping_add(1);
            let s = self.slaves.get_mut(&pick).expect("online slave");
            *s.open_reads.entry(fid).or_insert(0) += 1;
            return Ok(OpenReply::Redirect {
                slave: pick,
                addr: s.addr.clone(),
                file_id: fid,
            });
        }
        if let Some(t) = self.staging.get(&fid) {
            return Ok(OpenReply::Wait {
                ms: t.completion.since(now).as_millis().max(1) as u64,
                file_id: fid,
            });
        }
        if !in_tertiary {
            return Err(RedirError::Unavailable(fid));
        }
        let target = match online.iter().find(|(_, id)| self.slaves[id].free() >= size) {
            Some(&(_, id)) => id,
            None => online
                .iter()
                .map(|&(_, id)| id)
                .find(|&id| self.make_room(id, size))
                .ok_or(RedirError::NoSpace(fid))?,
        };
        let completion = now + self.latency.fetch_time(size);
        self.slaves.get_mut(&target).expect("online").reserved += size;
        self.staging.insert(
            fid,
            Transfer {
                slave: target,
                completion,
            },
        );
        self.pending.push_back(Action::Stage {
            file: fid,
            slave: target,
        });
        Ok(OpenReply::Wait {
            ms: completion.since(now).as_millis().max(1) as u64,
            file_id: fid,
        })
    }

    /// Ends a read started by a redirect to `slave`.
    pub fn close(&mut self, slave: SlaveId, file: u64) {
        if let Some(s) = self.slaves.get_mut(&slave) {
            if let Some(n) = s.open_reads.get_mut(&file) {
                *n -= 1;
                if *n == 0 {
                    s.open_reads.remove(&file);
                }
            }
        }
    }

    fn purgeable(&self, id: SlaveId) -> Vec<u64> {
        let s = &self.slaves[&id];
        let mut v: Vec<(Timestamp, u64)> = s
            .resident
            .iter()
            .copied()
            .filter(|&f| s.open_count(f) == 0)
            .filter(|&f| self.files[&f].in_tertiary || self.holders(f).len() > 1)
            .filter(|&f| !self.replicating.iter().any(|(&(rf, _), _)| rf == f))
            .map(|f| (self.files[&f].last_access.unwrap_or(Timestamp::ZERO), f))
            .collect();
        // Files idle past the threshold come first by construction: they are
        // exactly the oldest. Beyond them the same order is plain LRU.
        v.sort();
        v.into_iter().map(|(_, f)| f).collect()
    }

    fn purge(&mut self, id: SlaveId, file: u64) -> Action {
        let size = self.files[&file].size;
        let s = self.slaves.get_mut(&id).expect("known slave");
        s.resident.remove(&file);
        s.disk_used -= size;
        Action::Purge { file, slave: id }
    }

    /// Purges enough on `id` to fit `need` more bytes, or nothing at all.
    fn make_room(&mut self, id: SlaveId, need: u64) -> bool {
        let s = &self.slaves[&id];
        let deficit = (s.disk_used + s.reserved + need).saturating_sub(s.disk_capacity);
        if need > s.disk_capacity {
            return false;
        }
        let mut chosen = Vec::new();
        let mut freed = 0;
        for f in self.purgeable(id) {
            if freed >= deficit {
                break;
            }
            freed += self.files[&f].size;
            chosen.push(f);
        }
        if freed < deficit {
            return false;
        }
        for f in chosen {
            let a = self.purge(id, f);
            self.pending.push_back(a);
        }
        true
    }

    pub fn tick(&mut self, now: Timestamp) -> Vec<Action> {
        let mut actions: Vec<Action> = self.pending.drain(..).collect();

        let liveness = self.policy.liveness;
        let silent: Vec<SlaveId> = self
            .slaves
            .values()
            .filter(|s| s.is_online() && now.since(s.last_report) > liveness)
            .map(|s| s.id)
            .collect();
        for id in silent {
            self.slaves.get_mut(&id).expect("listed").silent = true;
            self.abort_transfers_to(id);
        }

        let window = self.policy.window;
        for f in self.files.values_mut() {
            f.prune(now, window);
        }
        let hot: Vec<u64> = self
            .files
            .values()
            .filter(|f| f.accesses.len() >= self.policy.replicate_threshold as usize)
            .map(|f| f.file_id)
            .collect();
        for fid in hot {
            if let Some(a) = self.plan_replica(fid, now) {
                actions.push(a);
            }
        }

        let pressured: Vec<SlaveId> = self
            .slaves
            .values()
            .filter(|s| s.is_online() && s.above_pct(self.policy.high_pct))
            .map(|s| s.id)
            .collect();
        for id in pressured {
            for f in self.purgeable(id) {
                if !self.slaves[&id].above_pct(self.policy.low_pct) {
                    break;
                }
                actions.push(self.purge(id, f));
            }
        }
        actions
    }

    fn plan_replica(&mut self, fid: u64, now: Timestamp) -> Option<Action> {
        if self.replicating.keys().any(|&(f, _)| f == fid) {
            return None;
        }
        let size = self.files[&fid].size;
        let copies = self.holders(fid).len();
        if copies >= self.policy.replica_cap {
            return None;
        }
        let online = self.by_load();
        let &(best_load, from) = online
            .iter()
            .find(|(_, id)| self.slaves[id].resident.contains(&fid))?;
        if best_load < self.policy.hot_load_threshold {
            return None;
        }
        let &(_, to) = online.iter().find(|(_, id)| {
            let s = &self.slaves[id];
            !s.resident.contains(&fid)
                && s.free() >= size
                && self.staging.get(&fid).is_none_or(|t| t.slave != *id)
        })?;
        self.slaves.get_mut(&to).expect("online").reserved += size;
        self.replicating.insert(
            (fid, to),
            Transfer {
                slave: to,
                completion: now + self.latency.fetch_time(size),
            },
        );
        Some(Action::Replicate { file: fid, from, to })
    }

    fn land(&mut self, file: u64, slave: SlaveId) {
        let size = self.files[&file].size;
        let s = self.slaves.get_mut(&slave).expect("transfer target exists");
        s.reserved -= size;
        if s.resident.insert(file) {
            s.disk_used += size;
        }
    }

    pub fn staging_complete(&mut self, file: u64, slave: SlaveId) -> Result<(), RedirError> {
        match self.staging.get(&file) {
            Some(t) if t.slave == slave => {
                self.staging.remove(&file);
                self.land(file, slave);
                Ok(())
            }
            _ => Err(RedirError::NoTransfer(file, slave)),
        }
    }

    pub fn replication_complete(&mut self, file: u64, to: SlaveId) -> Result<(), RedirError> {
        self.replicating
            .remove(&(file, to))
            .ok_or(RedirError::NoTransfer(file, to))?;
        self.land(file, to);
        Ok(())
    }

    /// Drops a failed transfer and its reservation.
    pub fn transfer_failed(&mut self, file: u64, slave: SlaveId) {
        let size = self.files.get(&file).map_or(0, |f| f.size);
        let staged = self.staging.get(&file).is_some_and(|t| t.slave == slave);
        if staged {
            self.staging.remove(&file);
        }
        if staged || self.replicating.remove(&(file, slave)).is_some() {
            if let Some(s) = self.slaves.get_mut(&slave) {
                s.reserved -= size;
            }
        }
    }

    /// Internal bookkeeping checks; returns the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        for s in self.slaves.values() {
            let used: u64 = s.resident.iter().map(|f| self.files[f].size).sum();
            if used != s.disk_used {
                return Err(alloc::format!("{}: disk_used {} != {}", s.id, s.disk_used, used));
            }
            if s.disk_used + s.reserved > s.disk_capacity {
                return Err(alloc::format!("{}: over capacity", s.id));
            }
            let reserved: u64 = self
                .staging
                .iter()
                .filter(|(_, t)| t.slave == s.id)
                .map(|(f, _)| self.files[f].size)
                .chain(
                    self.replicating
                        .keys()
                        .filter(|(_, to)| *to == s.id)
                        .map(|(f, _)| self.files[f].size),
                )
                .sum();
            if reserved != s.reserved {
                return Err(alloc::format!(
                    "{}: reserved {} != {}",
                    s.id,
                    s.reserved,
                    reserved
                ));
            }
        }
        Ok(())
    }
}
