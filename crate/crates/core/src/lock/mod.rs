//! Lock service: READ/UPDATE locks on named resources, sessions bounded by a
//! connection capacity, and heartbeat-driven reaping of crashed clients.
//!
//! The table is a single serialization point. Every method takes the
//! current time explicitly so the same code runs under the simulated clock
//! of the harness and the wall clock of the TCP server.

pub mod protocol;

use alloc::borrow::ToOwned;
use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::time::Duration;

use crate::time::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClientId(pub String);

impl ClientId {
    pub fn new(id: impl Into<String>) -> Self {
        ClientId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ClientId {
    fn from(s: &str) -> Self {
        ClientId(s.to_owned())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LockMode {
    Read,
    Update,
}

impl LockMode {
    pub fn compatible(self, other: LockMode) -> bool {
        self == LockMode::Read && other == LockMode::Read
    }

    pub fn code(self) -> char {
        match self {
            LockMode::Read => 'R',
            LockMode::Update => 'U',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum LockError {
    #[error("REJECTED_AT_CAPACITY")]
    RejectedAtCapacity,
    #[error("REJECTED_DUPLICATE")]
    RejectedDuplicate,
    #[error("NO_SESSION")]
    NoSession,
    #[error("NOT_HELD")]
    NotHeld,
}

impl LockError {
    pub fn code(self) -> &'static str {
        match self {
            LockError::RejectedAtCapacity => "REJECTED_AT_CAPACITY",
            LockError::RejectedDuplicate => "REJECTED_DUPLICATE",
            LockError::NoSession => "NO_SESSION",
            LockError::NotHeld => "NOT_HELD",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LockConfig {
    pub max_connections: usize,
    pub heartbeat_interval: Duration,
    /// Sessions silent for longer than `heartbeat_interval * deadline_factor`
    /// are reaped.
    pub deadline_factor: u32,
    pub record_history: bool,
}

impl Default for LockConfig {
    fn default() -> Self {
        Self {
            max_connections: 1024,
            heartbeat_interval: Duration::from_secs(5),
            deadline_factor: 3,
            record_history: false,
        }
    }
}

impl LockConfig {
    pub fn deadline(&self) -> Duration {
        self.heartbeat_interval * self.deadline_factor
    }
}

/// One granted lock as seen by the table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LockEntry {
    pub resource: String,
    pub mode: LockMode,
    pub holder: ClientId,
    pub granted_at: Timestamp,
    pub last_heartbeat: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Acquire {
    Granted,
    /// 1-based position in the resource's FIFO wait queue.
    Queued(usize),
}

/// A lock handed to a previously queued client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grant {
    pub client: ClientId,
    pub resource: String,
    pub mode: LockMode,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LockEvent {
    Granted {
        at: Timestamp,
        client: ClientId,
        resource: String,
        mode: LockMode,
    },
    Queued {
        at: Timestamp,
        client: ClientId,
        resource: String,
        mode: LockMode,
    },
    Released {
        at: Timestamp,
        client: ClientId,
        resource: String,
    },
    Withdrawn {
        at: Timestamp,
        client: ClientId,
        resource: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReapOutcome {
    pub closed_sessions: Vec<ClientId>,
    pub released: Vec<LockEntry>,
    pub granted: Vec<Grant>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ResourceStats {
    pub grants: u64,
    pub collisions: u64,
    pub max_queue: usize,
}

#[derive(Debug, Clone)]
struct Session {
    connected_at: Timestamp,
    last_heartbeat: Timestamp,
    held: BTreeSet<String>,
    waiting: BTreeSet<String>,
}

#[derive(Debug, Clone)]
struct Holder {
    client: ClientId,
    mode: LockMode,
    granted_at: Timestamp,
}

#[derive(Debug, Clone)]
struct Waiter {
    client: ClientId,
    mode: LockMode,
}

#[derive(Debug, Clone, Default)]
struct ResourceState {
    holders: Vec<Holder>,
    queue: VecDeque<Waiter>,
}

impl ResourceState {
    fn admits(&self, mode: LockMode) -> bool {
        self.holders.iter().all(|h| h.mode.compatible(mode))
    }

    fn is_idle(&self) -> bool {
        self.holders.is_empty() && self.queue.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TableCounters {
    pub acquires: u64,
    pub collisions: u64,
    pub orphans_reaped: u64,
    pub sessions_reaped: u64,
    pub rejected: u64,
}

#[derive(Debug, Clone)]
pub struct LockTable {
    config: LockConfig,
    sessions: BTreeMap<ClientId, Session>,
    resources: BTreeMap<String, ResourceState>,
    stats: BTreeMap<String, ResourceStats>,
    counters: TableCounters,
    history: Vec<LockEvent>,
}

impl Default for LockTable {
    fn default() -> Self {
        Self::new(LockConfig::default())
    }
}

impl LockTable {
    pub fn new(config: LockConfig) -> Self {
        Self {
            config,
            sessions: BTreeMap::new(),
            resources: BTreeMap::new(),
            stats: BTreeMap::new(),
            counters: TableCounters::default(),
            history: Vec::new(),
        }
    }

    pub fn config(&self) -> &LockConfig {
        &self.config
    }

    pub fn session_count(&self) -> usize {
        self.sessions.len()
    }

    pub fn has_session(&self, client: &ClientId) -> bool {
        self.sessions.contains_key(client)
    }

    pub fn sessions(&self) -> impl Iterator<Item = (&ClientId, Timestamp, Timestamp)> {
        self.sessions
            .iter()
            .map(|(c, s)| (c, s.connected_at, s.last_heartbeat))
    }

    pub fn counters(&self) -> TableCounters {
        self.counters
    }

    pub fn stats(&self) -> &BTreeMap<String, ResourceStats> {
        &self.stats
    }

    pub fn history(&self) -> &[LockEvent] {
        &self.history
    }

    /// Current holders of `resource`.
    pub fn holders(&self, resource: &str) -> Vec<(ClientId, LockMode)> {
        self.resources
            .get(resource)
            .map(|r| r.holders.iter().map(|h| (h.client.clone(), h.mode)).collect())
            .unwrap_or_default()
    }

    pub fn queue_len(&self, resource: &str) -> usize {
        self.resources.get(resource).map_or(0, |r| r.queue.len())
    }

    pub fn holds(&self, client: &ClientId, resource: &str) -> Option<LockMode> {
        self.resources
            .get(resource)?
            .holders
            .iter()
            .find(|h| &h.client == client)
            .map(|h| h.mode)
    }

    /// All granted locks, in resource order.
    pub fn entries(&self) -> Vec<LockEntry> {
        let mut out = Vec::new();
        for (resource, state) in &self.resources {
            for h in &state.holders {
                let last_heartbeat = self
                    .sessions
                    .get(&h.client)
                    .map_or(h.granted_at, |s| s.last_heartbeat);
                out.push(LockEntry {
                    resource: resource.clone(),
                    mode: h.mode,
                    holder: h.client.clone(),
                    granted_at: h.granted_at,
                    last_heartbeat,
                });
            }
        }
        out
    }

    fn record(&mut self, ev: impl FnOnce() -> LockEvent) {
        if self.config.record_history {
            self.history.push(ev());
        }
    }

    /// Opens a session. A rejected connect leaves the table untouched.
    pub fn connect(&mut self, client: &ClientId, now: Timestamp) -> Result<(), LockError> {
        if self.sessions.contains_key(client) {
            return Err(LockError::RejectedDuplicate);
        }
        if self.sessions.len() >= self.config.max_connections {
            if !self.any_expired(now) {
                return Err(LockError::RejectedAtCapacity);
            }
            self.reap_orphans(now);
        }
        self.sessions.insert(
            client.clone(),
            Session {
                connected_at: now,
                last_heartbeat: now,
                held: BTreeSet::new(),
                waiting: BTreeSet::new(),
            },
        );
        Ok(())
    }

    /// Closes a session cleanly, releasing everything it holds.
    pub fn disconnect(&mut self, client: &ClientId, now: Timestamp) -> Result<Vec<Grant>, LockError> {
        if !self.sessions.contains_key(client) {
            return Err(LockError::NoSession);
        }
        let (_, grants) = self.drop_session(client, now);
        Ok(grants)
    }

    pub fn acquire(
        &mut self,
        client: &ClientId,
        resource: &str,
        mode: LockMode,
        now: Timestamp,
    ) -> Result<Acquire, LockError> {
        let session = self.sessions.get_mut(client).ok_or(LockError::NoSession)?;
        let state = self.resources.entry(resource.to_owned()).or_default();

        if let Some(pos) = state.queue.iter().position(|w| &w.client == client) {
            return Ok(Acquire::Queued(pos + 1));
        }
        if let Some(idx) = state.holders.iter().position(|h| &h.client == client) {
            let held = state.holders[idx].mode;
            if held == LockMode::Update || mode == LockMode::Read {
                return Ok(Acquire::Granted);
            }
            if state.holders.len() == 1 {
                state.holders[idx].mode = LockMode::Update;
                self.counters.acquires += 1;
                self.record(|| LockEvent::Granted {
                    at: now,
                    client: client.clone(),
                    resource: resource.to_owned(),
                    mode,
                });
                return Ok(Acquire::Granted);
            }
        }

        self.counters.acquires += 1;
        let stats = self.stats.entry(resource.to_owned()).or_default();
        let upgrading = state.holders.iter().any(|h| &h.client == client);
        if !upgrading && state.queue.is_empty() && state.admits(mode) {
            state.holders.push(Holder {
                client: client.clone(),
                mode,
                granted_at: now,
            });
            session.held.insert(resource.to_owned());
            stats.grants += 1;
            self.record(|| LockEvent::Granted {
                at: now,
                client: client.clone(),
                resource: resource.to_owned(),
                mode,
            });
            return Ok(Acquire::Granted);
        }

        state.queue.push_back(Waiter {
            client: client.clone(),
            mode,
        });
        session.waiting.insert(resource.to_owned());
        let pos = state.queue.len();
        stats.collisions += 1;
        stats.max_queue = stats.max_queue.max(pos);
        self.counters.collisions += 1;
        self.record(|| LockEvent::Queued {
            at: now,
            client: client.clone(),
            resource: resource.to_owned(),
            mode,
        });
        Ok(Acquire::Queued(pos))
    }

    pub fn release(
        &mut self,
        client: &ClientId,
        resource: &str,
        now: Timestamp,
    ) -> Result<Vec<Grant>, LockError> {
        let session = self.sessions.get_mut(client).ok_or(LockError::NoSession)?;
        if !session.held.remove(resource) {
            return Err(LockError::NotHeld);
        }
        let state = self
            .resources
            .get_mut(resource)
            .expect("session held-set and resource table out of sync");
        state.holders.retain(|h| &h.client != client);
        self.record(|| LockEvent::Released {
            at: now,
            client: client.clone(),
            resource: resource.to_owned(),
        });
        Ok(self.promote(resource, now))
    }

    /// Withdraws a queued request, e.g. after a client-side timeout.
    pub fn cancel(
        &mut self,
        client: &ClientId,
        resource: &str,
        now: Timestamp,
    ) -> Result<Vec<Grant>, LockError> {
        let session = self.sessions.get_mut(client).ok_or(LockError::NoSession)?;
        if !session.waiting.remove(resource) {
            return Err(LockError::NotHeld);
        }
        if let Some(state) = self.resources.get_mut(resource) {
            state.queue.retain(|w| &w.client != client);
        }
        self.record(|| LockEvent::Withdrawn {
            at: now,
            client: client.clone(),
            resource: resource.to_owned(),
        });
        // Removing a head waiter may unblock compatible requests behind it.
        Ok(self.promote(resource, now))
    }

    pub fn heartbeat(&mut self, client: &ClientId, now: Timestamp) -> Result<(), LockError> {
        let session = self.sessions.get_mut(client).ok_or(LockError::NoSession)?;
        session.last_heartbeat = session.last_heartbeat.max(now);
        Ok(())
    }

    fn expired(&self, session: &Session, now: Timestamp) -> bool {
        now.since(session.last_heartbeat) > self.config.deadline()
    }

    fn any_expired(&self, now: Timestamp) -> bool {
        self.sessions.values().any(|s| self.expired(s, now))
    }

    /// Closes every session whose heartbeat is older than the deadline,
    /// releases its locks, drops its queued requests and promotes waiters.
    pub fn reap_orphans(&mut self, now: Timestamp) -> ReapOutcome {
        let dead: Vec<ClientId> = self
            .sessions
            .iter()
            .filter(|(_, s)| self.expired(s, now))
            .map(|(c, _)| c.clone())
            .collect();
        let mut outcome = ReapOutcome::default();
        for client in dead {
            let (released, grants) = self.drop_session(&client, now);
            self.counters.orphans_reaped += released.len() as u64;
            self.counters.sessions_reaped += 1;
            outcome.released.extend(released);
            outcome.granted.extend(grants);
            outcome.closed_sessions.push(client);
        }
        // A grant may go to a client that was itself reaped later in the loop.
        outcome
            .granted
            .retain(|g| self.holds(&g.client, &g.resource).is_some());
        outcome
    }

    fn drop_session(&mut self, client: &ClientId, now: Timestamp) -> (Vec<LockEntry>, Vec<Grant>) {
        let session = self
            .sessions
            .remove(client)
            .expect("drop_session on unknown client");
        let mut released = Vec::new();
        let mut touched = BTreeSet::new();
        for resource in &session.waiting {
            if let Some(state) = self.resources.get_mut(resource) {
                state.queue.retain(|w| &w.client != client);
                touched.insert(resource.clone());
            }
        }
        for resource in &session.held {
            let state = self
                .resources
                .get_mut(resource)
                .expect("session held-set and resource table out of sync");
            if let Some(idx) = state.holders.iter().position(|h| &h.client == client) {
                let h = state.holders.remove(idx);
                released.push(LockEntry {
                    resource: resource.clone(),
                    mode: h.mode,
                    holder: client.clone(),
                    granted_at: h.granted_at,
                    last_heartbeat: session.last_heartbeat,
                });
            }
            self.record(|| LockEvent::Released {
                at: now,
                client: client.clone(),
                resource: resource.clone(),
            });
            touched.insert(resource.clone());
        }
        let mut grants = Vec::new();
        for resource in touched {
            grants.extend(self.promote(&resource, now));
        }
        (released, grants)
    }

    /// Grants the longest-waiting run of compatible requests at the head of
    /// the queue.
    fn promote(&mut self, resource: &str, now: Timestamp) -> Vec<Grant> {
        let mut grants = Vec::new();
        let Some(state) = self.resources.get_mut(resource) else {
            return grants;
        };
        while let Some(front) = state.queue.front() {
            let mode = front.mode;
            let upgrading = state.holders.iter().any(|h| h.client == front.client);
            let fits = if upgrading {
                state.holders.len() == 1
            } else {
                state.admits(mode)
            };
            if !fits {
                break;
            }
            let w = state.queue.pop_front().expect("front exists");
            if upgrading {
                state.holders[0].mode = mode;
            } else {
                state.holders.push(Holder {
                    client: w.client.clone(),
                    mode,
                    granted_at: now,
                });
            }
            if let Some(s) = self.sessions.get_mut(&w.client) {
                s.waiting.remove(resource);
                s.held.insert(resource.to_owned());
            }
            self.stats.entry(resource.to_owned()).or_default().grants += 1;
            if self.config.record_history {
                self.history.push(LockEvent::Granted {
                    at: now,
                    client: w.client.clone(),
                    resource: resource.to_owned(),
                    mode,
                });
            }
            grants.push(Grant {
                client: w.client,
                resource: resource.to_owned(),
                mode,
            });
        }
        if state.is_idle() {
            self.resources.remove(resource);
        }
        grants
    }

    /// Checks the table's internal invariants; used by tests and the harness
    /// validators.
    pub fn check_invariants(&self) -> Result<(), String> {
        use alloc::format;
        if self.sessions.len() > self.config.max_connections {
            return Err(format!(
                "{} sessions exceed capacity {}",
                self.sessions.len(),
                self.config.max_connections
            ));
        }
        for (resource, state) in &self.resources {
            let updates = state
                .holders
                .iter()
                .filter(|h| h.mode == LockMode::Update)
                .count();
            if updates > 0 && state.holders.len() > 1 {
                return Err(format!("{resource}: UPDATE holder coexists with others"));
            }
            for h in &state.holders {
                let ok = self
                    .sessions
                    .get(&h.client)
                    .is_some_and(|s| s.held.contains(resource));
                if !ok {
                    return Err(format!("{resource}: holder {} has no session", h.client));
                }
            }
        }
        Ok(())
    }
}

/// Validates a recorded lock history: at no point does an UPDATE holder
/// coexist with another holder of the same resource.
pub fn validate_history(events: &[LockEvent]) -> Result<(), String> {
    use alloc::format;
    let mut held: BTreeMap<&str, BTreeMap<&ClientId, LockMode>> = BTreeMap::new();
    for (i, ev) in events.iter().enumerate() {
        match ev {
            LockEvent::Granted {
                client,
                resource,
                mode,
                ..
            } => {
                let holders = held.entry(resource.as_str()).or_default();
                holders.insert(client, *mode);
                let updates = holders.values().filter(|m| **m == LockMode::Update).count();
                if updates > 0 && holders.len() > 1 {
                    return Err(format!("event {i}: exclusive lock violated on {resource}"));
                }
            }
            LockEvent::Released { client, resource, .. } => {
                let removed = held.get_mut(resource.as_str()).and_then(|h| h.remove(client));
                if removed.is_none() {
                    return Err(format!("event {i}: {client} released unheld {resource}"));
                }
            }
            LockEvent::Queued { .. } | LockEvent::Withdrawn { .. } => {}
        }
    }
    Ok(())
}
