//! Discrete-event scenario runner.
//!
//! Every server runs in-process and every interaction is a protocol line
//! carried by the simulated network: lock requests go through the lock
//! service's text protocol, opens through the master's, reads through the
//! slaves' framed `DATA` replies, which clients verify and inflate. One
//! seeded RNG is consumed in event order, so the trace is a pure function
//! of the scenario.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Zipf};

use petastore_core::bridge::Bridge;
use petastore_core::lock::{ClientId, LockConfig, LockMode, LockTable, ReapOutcome};
use petastore_core::redirect::hierarchy::{Resolver, SuperMaster};
use petastore_core::redirect::protocol::{parse_master_reply, parse_open, MasterReply};
use petastore_core::redirect::{Master, OpenReply, SlaveId};
use petastore_core::storage::{client_decompress, CodecId, CodecRegistry};
use petastore_core::store::{CollectionKind, MetadataLocks, NoLocks, StoreError};
use petastore_core::{ComponentKind, DataClass, EventHeader, FederationId, Locator, Timestamp};

use super::corpus;
use super::scenario::{Fault, FaultKind, Mode, Scenario, ScenarioError};
use super::trace::Trace;
use crate::files::pack;
use crate::server::lock::{Handled, LockService};
use crate::server::redir::{frames_from_wire, Cluster, ClusterEvent, SharedCluster};

const PING_MS: u64 = 5_000;
const TICK_MS: u64 = 1_000;
const REPORT_MS: u64 = 5_000;
const RTO_MS: u64 = 1_000;
const RETRY_BACKOFF_MS: u64 = 100;
const PRODUCE_MS: u64 = 2_000;
const WAITER_HOLD_MS: u64 = 1_000;
/// Give up draining this long after the scenario ends.
const DRAIN_CAP_MS: u64 = 600_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Dest {
    Locks,
    Master,
    Slave(u32),
}

#[derive(Debug, Clone)]
enum Msg {
    Line(String),
    Bytes(Vec<u8>),
}

#[derive(Debug, Clone)]
enum Ev {
    Start(usize, u32),
    Ping(usize, u32),
    NextJob(usize, u32),
    HolderLock(usize, u32),
    Release(usize, u32),
    ChunkDone(usize, u32, u64),
    Reopen(usize, u32, u64),
    Timeout(usize, u32, u64),
    ConnRetry(usize, u32),
    ToServer {
        c: usize,
        inc: u32,
        dest: Dest,
        token: u64,
        conn: u64,
        line: String,
    },
    ToClient {
        c: usize,
        inc: u32,
        from: Dest,
        token: u64,
        msg: Msg,
    },
    Tick(usize),
    Report(usize),
    LockSweep,
    Epoch(u64),
    Fault(usize),
    SlaveUp(u32),
    PowerUp,
    Restart(usize),
    End,
    Audit,
}

struct Queued {
    at: Timestamp,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Queued {
    fn eq(&self, o: &Self) -> bool {
        (self.at, self.seq) == (o.at, o.seq)
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Queued {
    fn cmp(&self, o: &Self) -> Ordering {
        (self.at, self.seq).cmp(&(o.at, o.seq))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Reader,
    Producer(u32),
    Holder(u32),
    Waiter(u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Phase {
    Connecting,
    Idle,
    Locking(String, LockMode),
    Working,
    Unlocking,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pend {
    Conn,
    Ping,
    Lock,
    Unlock,
    Open(u64),
    Read(u64),
}

struct Job {
    run: u32,
    epoch: u64,
    ops: BTreeSet<u64>,
}

struct Client {
    name: String,
    session: String,
    kind: Kind,
    inc: u32,
    restarts: u32,
    alive: bool,
    connected: bool,
    phase: Phase,
    pending: BTreeMap<u64, Pend>,
    job: Option<Job>,
    offset_ms: u64,
}

struct Op {
    client: usize,
    path: String,
    file_id: u64,
    slave: Option<u32>,
    accepted: bool,
    reads_done: u32,
    tries: u32,
    offset: u64,
}

/// What a finished scenario leaves behind.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: String,
    pub end: Timestamp,
}

pub fn run_scenario(s: &Scenario) -> Result<RunOutput, ScenarioError> {
    s.validate()?;
    let mut sim = Sim::new(s)?;
    sim.run();
    Ok(RunOutput {
        end: sim.now,
        trace: sim.trace.into_string(),
    })
}

/// Fails any metadata lock the client does not already hold.
struct HeldLocks<'a> {
    table: &'a LockTable,
    client: ClientId,
}

impl MetadataLocks for HeldLocks<'_> {
    fn lock(&mut self, resource: &str, mode: LockMode) -> Result<(), StoreError> {
        match self.table.holds(&self.client, resource) {
            Some(LockMode::Update) => Ok(()),
            Some(LockMode::Read) if mode == LockMode::Read => Ok(()),
            _ => Err(StoreError::LockTimeout(resource.into())),
        }
    }

    fn unlock(&mut self, _: &str) {}
}

struct Sim<'a> {
    sc: &'a Scenario,
    now: Timestamp,
    end: Timestamp,
    seq: u64,
    queue: BinaryHeap<Reverse<Queued>>,
    rng: ChaCha8Rng,
    trace: Trace,
    clients: Vec<Client>,
    by_session: BTreeMap<String, usize>,
    lock_config: LockConfig,
    locks: LockService,
    locks_up: bool,
    sweeps: BTreeSet<Timestamp>,
    clusters: Vec<SharedCluster>,
    top: Box<dyn Resolver>,
    bridge: Bridge,
    files: BTreeMap<String, u64>,
    ops: BTreeMap<u64, Op>,
    next_op: u64,
    next_token: u64,
    channels: BTreeMap<(usize, Dest, bool), Timestamp>,
    loss: Option<(f64, Timestamp)>,
    power_down: bool,
    admin_down: BTreeSet<u32>,
    slave_busy: BTreeMap<u32, Timestamp>,
    draining: bool,
    audit_scheduled: bool,
    settle_after: Timestamp,
    done: bool,
    zipf: Zipf<f64>,
    think: Exp<f64>,
    codecs: CodecRegistry,
    faults: Vec<Fault>,
}

fn fed(run: u32) -> FederationId {
    FederationId::new(format!("run{run}"), DataClass::Real).expect("valid run label")
}

fn stream_path(run: u32, stream: u32) -> String {
    format!("/run{run}/s{stream}")
}

impl<'a> Sim<'a> {
    fn new(sc: &'a Scenario) -> Result<Self, ScenarioError> {
        let invalid = |m: String| ScenarioError::Invalid(m);
        let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
        let mut trace = Trace::default();
        let t0 = Timestamp::ZERO;

        let mut clusters = Vec::new();
        for m in 0..sc.n_masters {
            let mut c = Cluster::new(Master::new(&format!("master{m}"), sc.policy.clone(), sc.tertiary));
            for j in 0..sc.n_slaves {
                let id = m * sc.n_slaves + j;
                c.add_slave(
                    SlaveId(id),
                    &format!("slave{id}"),
                    sc.slave_capacity_kb * 1024,
                    t0,
                )
                .map_err(|e| invalid(e.to_string()))?;
            }
            clusters.push(c);
        }

        let mut bridge = Bridge::new();
        let mut files = BTreeMap::new();
        let chunk_events = sc.events_per_stream.max(1) as u64;
        for run in 0..sc.runs {
            let f = fed(run);
            bridge
                .register_federation(f.clone())
                .map_err(|e| invalid(e.to_string()))?;
            let m = (run % sc.n_masters) as usize;
            for k in 0..sc.streams_per_run {
                let file_id = u64::from(run * sc.streams_per_run + k + 1);
                let path = Scenario::stream_file(run, k);
                let bytes = corpus::generate(
                    sc.seed ^ (file_id << 20),
                    (sc.file_kb * 1024) as usize,
                    sc.corpus_noise,
                );
                let (stored, image) =
                    pack(&bytes, CodecId::REFERENCE_LZ).map_err(|e| invalid(e.to_string()))?;
                let archive = rng.gen_bool(sc.archive_fraction);
                let home = SlaveId(m as u32 * sc.n_slaves + (file_id as u32 % sc.n_slaves));
                trace.emit(
                    t0,
                    &format!("master{m}"),
                    "REGISTER",
                    &[
                        ("file", &file_id),
                        ("path", &path),
                        ("logical", &stored.logical_size),
                        ("physical", &stored.physical_size),
                        ("archived", &u8::from(archive)),
                    ],
                );
                trace.emit(
                    t0,
                    &format!("master{m}"),
                    "PLACE",
                    &[("file", &file_id), ("slave", &home)],
                );
                clusters[m]
                    .add_file(&path, file_id, image, archive, Some(home))
                    .map_err(|e| invalid(e.to_string()))?;
                files.insert(path, file_id);

                let store = bridge.store_mut(&f).expect("registered");
                let sp = stream_path(run, k);
                let cid = store
                    .create_collection(&sp, CollectionKind::Stream, &mut NoLocks)
                    .map_err(|e| invalid(e.to_string()))?;
                let rec = sc.file_kb * 1024 / chunk_events;
                let events = (0..chunk_events).map(|e| {
                    EventHeader::new(u64::from(run) << 32 | e, run).with_component(
                        ComponentKind::Aod,
                        Locator {
                            file_id,
                            offset: e * rec,
                            length: rec as u32,
                        },
                    )
                });
                store
                    .append_events(cid, events)
                    .map_err(|e| invalid(e.to_string()))?;
                bridge
                    .bind_collection(&sp, &f, CollectionKind::Stream)
                    .map_err(|e| invalid(e.to_string()))?;
            }
        }

        let clusters: Vec<SharedCluster> = clusters.into_iter().map(SharedCluster::new).collect();
        let top: Box<dyn Resolver> = if clusters.len() == 1 {
            Box::new(clusters[0].clone())
        } else {
            let mut sm = SuperMaster::new("super");
            for run in 0..sc.runs {
                let m = (run % sc.n_masters) as usize;
                sm.add_child(&format!("/run{run}"), Box::new(clusters[m].clone()));
            }
            Box::new(sm)
        };

        let mut clients = Vec::new();
        for (i, name) in sc.client_names().into_iter().enumerate() {
            let kind = match sc.mode {
                Mode::Jobs if i < sc.n_clients as usize => Kind::Reader,
                Mode::Jobs => Kind::Producer(i as u32 - sc.n_clients),
                Mode::Locks if i < sc.n_clients as usize => Kind::Holder(i as u32),
                Mode::Locks => Kind::Waiter(i as u32 - sc.n_clients),
            };
            clients.push(Client {
                session: name.clone(),
                name,
                kind,
                inc: 0,
                restarts: 0,
                alive: true,
                connected: false,
                phase: Phase::Connecting,
                pending: BTreeMap::new(),
                job: None,
                offset_ms: (i as u64 * 7) % 1000,
            });
        }
        let by_session = clients
            .iter()
            .enumerate()
            .map(|(i, c)| (c.session.clone(), i))
            .collect();

        let mut faults = sc.faults.clone();
        if sc.mode == Mode::Locks {
            // Crash holders between their pings, well after they locked.
            for i in 0..sc.lock_crashes.min(sc.n_clients) {
                faults.push(Fault {
                    at_ms: 20_500 + u64::from(i) * 10,
                    kind: FaultKind::ClientCrash,
                    target: format!("hold{i}"),
                    args: Vec::new(),
                });
            }
            faults.sort_by_key(|f| f.at_ms);
        }

        let lock_config = LockConfig {
            record_history: false,
            ..LockConfig::default()
        };
        let zipf = Zipf::new(u64::from(sc.runs), sc.hot_spot_zipf_s).map_err(|e| invalid(e.to_string()))?;
        let think = Exp::new(1.0 / sc.think_ms.max(1) as f64).map_err(|e| invalid(e.to_string()))?;
        Ok(Self {
            sc,
            now: t0,
            end: Timestamp::from_secs(sc.duration_s),
            seq: 0,
            queue: BinaryHeap::new(),
            rng,
            trace,
            clients,
            by_session,
            lock_config,
            locks: LockService::new(lock_config),
            locks_up: true,
            sweeps: BTreeSet::new(),
            clusters,
            top,
            bridge,
            files,
            ops: BTreeMap::new(),
            next_op: 1,
            next_token: 1,
            channels: BTreeMap::new(),
            loss: None,
            power_down: false,
            admin_down: BTreeSet::new(),
            slave_busy: BTreeMap::new(),
            draining: false,
            audit_scheduled: false,
            settle_after: t0,
            done: false,
            zipf,
            think,
            codecs: CodecRegistry::default(),
            faults,
        })
    }

    fn at(&mut self, at: Timestamp, ev: Ev) {
        self.seq += 1;
        self.queue.push(Reverse(Queued {
            at,
            seq: self.seq,
            ev,
        }));
    }

    fn after(&mut self, ms: u64, ev: Ev) {
        let t = self.now + Duration::from_millis(ms);
        self.at(t, ev);
    }

    fn emit(&mut self, actor: &str, event: &str, args: &[(&str, &dyn std::fmt::Display)]) {
        self.trace.emit(self.now, actor, event, args);
    }

    fn run(&mut self) {
        for c in 0..self.clients.len() {
            let off = self.clients[c].offset_ms;
            self.at(Timestamp(off), Ev::Start(c, 0));
        }
        for m in 0..self.clusters.len() {
            self.at(Timestamp(TICK_MS), Ev::Tick(m));
            self.at(Timestamp(REPORT_MS), Ev::Report(m));
        }
        if self.sc.mode == Mode::Jobs && self.sc.runs_in_parallel > 0 {
            self.at(Timestamp(2_000), Ev::Epoch(0));
        }
        for i in 0..self.faults.len() {
            let t = Timestamp(self.faults[i].at_ms);
            if t < self.end {
                self.at(t, Ev::Fault(i));
            }
        }
        let end = self.end;
        self.at(end, Ev::End);
        while let Some(Reverse(q)) = self.queue.pop() {
            self.now = q.at;
            self.handle(q.ev);
            if self.done {
                return;
            }
            if self.draining {
                self.maybe_quiesce();
            }
        }
        self.audit();
    }

    fn live(&self, c: usize, inc: u32) -> bool {
        let cl = &self.clients[c];
        cl.alive && cl.inc == inc
    }

    fn handle(&mut self, ev: Ev) {
        match ev {
            Ev::Start(c, inc) if self.live(c, inc) => self.start(c),
            Ev::Ping(c, inc) if self.live(c, inc) => self.ping(c),
            Ev::NextJob(c, inc) if self.live(c, inc) => self.next_job(c),
            Ev::HolderLock(c, inc) if self.live(c, inc) => {
                if let Kind::Holder(i) | Kind::Waiter(i) = self.clients[c].kind {
                    self.lock(c, format!("res{i}"), LockMode::Update);
                }
            }
            Ev::Release(c, inc) if self.live(c, inc) => self.unlock(c),
            Ev::ChunkDone(c, inc, op) if self.live(c, inc) => self.chunk_done(op),
            Ev::Reopen(c, inc, op) if self.live(c, inc) => {
                if self.ops.contains_key(&op) {
                    let path = self.ops[&op].path.clone();
                    let name = self.clients[c].name.clone();
                    self.emit(&name, "REOPEN", &[("op", &op), ("path", &path)]);
                    self.send_open(op);
                }
            }
            Ev::Timeout(c, inc, token) if self.live(c, inc) => self.timeout(c, token),
            Ev::ConnRetry(c, inc) if self.live(c, inc) => self.connect(c),
            Ev::ToServer {
                c,
                inc,
                dest,
                token,
                conn,
                line,
            } => self.server_recv(c, inc, dest, token, conn, line),
            Ev::ToClient {
                c,
                inc,
                from,
                token,
                msg,
            } if self.live(c, inc) => self.client_recv(c, from, token, msg),
            Ev::Tick(m) => {
                if !self.power_down {
                    self.cluster_tick(m);
                }
                if !self.done {
                    self.after(TICK_MS, Ev::Tick(m));
                }
            }
            Ev::Report(m) => {
                if !self.power_down {
                    let now = self.now;
                    self.clusters[m].inner.borrow_mut().report_loads(now);
                }
                self.after(REPORT_MS, Ev::Report(m));
            }
            Ev::LockSweep => {
                self.sweeps.remove(&self.now);
                if self.locks_up {
                    let out = self.locks.sweep(self.now);
                    self.trace_reaps(&out);
                    self.push_grants(&out.granted);
                }
            }
            Ev::Epoch(e) => self.epoch(e),
            Ev::Fault(i) => self.fault(i),
            Ev::SlaveUp(j) => {
                self.admin_down.remove(&j);
                if !self.power_down {
                    self.slave_power(j, true);
                }
            }
            Ev::PowerUp => self.power_up(),
            Ev::Restart(c) => self.restart(c),
            Ev::End => {
                self.draining = true;
                self.emit("harness", "END", &[]);
            }
            Ev::Audit => self.audit(),
            _ => {}
        }
    }

    // ---- network -------------------------------------------------------

    fn delay(&mut self) -> u64 {
        let mut d = self.sc.net_latency_ms;
        if let Some((p, until)) = self.loss {
            if self.now < until {
                // TCP retransmits until the segment gets through.
                let mut tries = 0;
                while tries < 6 && self.rng.gen_bool(p) {
                    d += RTO_MS << tries;
                    tries += 1;
                }
            } else {
                self.loss = None;
            }
        }
        d
    }

    /// Delivery time on a FIFO channel.
    fn channel_time(&mut self, c: usize, dest: Dest, to_server: bool) -> Timestamp {
        let d = self.delay();
        let t = self.now + Duration::from_millis(d);
        let last = self
            .channels
            .entry((c, dest, to_server))
            .or_insert(Timestamp::ZERO);
        let t = t.max(*last);
        *last = t;
        t
    }

    fn send(&mut self, c: usize, dest: Dest, token: u64, conn: u64, line: String) {
        let t = self.channel_time(c, dest, true);
        let inc = self.clients[c].inc;
        self.at(
            t,
            Ev::ToServer {
                c,
                inc,
                dest,
                token,
                conn,
                line,
            },
        );
    }

    fn reply(&mut self, c: usize, inc: u32, from: Dest, token: u64, msg: Msg, extra_ms: u64) {
        let mut t = self.channel_time(c, from, false);
        t = t + Duration::from_millis(extra_ms);
        self.at(
            t,
            Ev::ToClient {
                c,
                inc,
                from,
                token,
                msg,
            },
        );
    }

    fn token(&mut self, c: usize, p: Pend) -> u64 {
        let t = self.next_token;
        self.next_token += 1;
        self.clients[c].pending.insert(t, p);
        t
    }

    // ---- lock-service clients ------------------------------------------

    fn start(&mut self, c: usize) {
        self.clients[c].phase = Phase::Connecting;
        self.connect(c);
        let inc = self.clients[c].inc;
        self.after(PING_MS, Ev::Ping(c, inc));
    }

    fn connect(&mut self, c: usize) {
        self.clients[c].connected = false;
        self.clients[c]
            .pending
            .retain(|_, p| !matches!(p, Pend::Conn | Pend::Lock | Pend::Unlock));
        let line = format!("CONN {}", self.clients[c].session);
        let tok = self.token(c, Pend::Conn);
        self.send(c, Dest::Locks, tok, 0, line);
        let inc = self.clients[c].inc;
        self.after(2 * self.sc.timeout_ms, Ev::Timeout(c, inc, tok));
    }

    fn ping(&mut self, c: usize) {
        let line = format!("PING {}", self.clients[c].session);
        let tok = self.token(c, Pend::Ping);
        self.send(c, Dest::Locks, tok, 0, line);
        if !self.done {
            let inc = self.clients[c].inc;
            self.after(PING_MS, Ev::Ping(c, inc));
        }
    }

    fn lock(&mut self, c: usize, res: String, mode: LockMode) {
        let line = format!("LOCK {} {res} {}", self.clients[c].session, mode.code());
        self.clients[c].phase = Phase::Locking(res, mode);
        let tok = self.token(c, Pend::Lock);
        self.send(c, Dest::Locks, tok, 0, line);
    }

    fn unlock(&mut self, c: usize) {
        let res = match &self.clients[c].kind {
            Kind::Holder(i) | Kind::Waiter(i) => format!("res{i}"),
            _ => match self.clients[c].job.as_ref() {
                Some(j) => self.run_resource(j.run),
                None => return self.unlocked(c),
            },
        };
        self.clients[c].phase = Phase::Unlocking;
        let line = format!("UNLK {} {res}", self.clients[c].session);
        let tok = self.token(c, Pend::Unlock);
        self.send(c, Dest::Locks, tok, 0, line);
    }

    fn run_resource(&self, run: u32) -> String {
        self.bridge
            .store(&fed(run))
            .and_then(|s| s.metadata_resource(&stream_path(run, 0)).ok())
            .expect("stream collections exist")
    }

    fn connected(&mut self, c: usize) {
        self.clients[c].connected = true;
        let inc = self.clients[c].inc;
        match self.clients[c].phase.clone() {
            Phase::Connecting => {
                self.clients[c].phase = Phase::Idle;
                match self.clients[c].kind {
                    Kind::Reader => self.next_job(c),
                    Kind::Producer(_) => {}
                    Kind::Holder(_) => self.at(self.now.max(Timestamp(1_000)), Ev::HolderLock(c, inc)),
                    Kind::Waiter(_) => self.at(self.now.max(Timestamp(2_000)), Ev::HolderLock(c, inc)),
                }
            }
            Phase::Locking(res, mode) => self.lock(c, res, mode),
            Phase::Unlocking => self.unlocked(c),
            Phase::Idle | Phase::Working => {}
        }
    }

    fn granted(&mut self, c: usize) {
        self.clients[c].phase = Phase::Working;
        let inc = self.clients[c].inc;
        match self.clients[c].kind {
            Kind::Reader => self.start_reads(c),
            Kind::Producer(_) => {
                self.produce(c);
                self.after(PRODUCE_MS, Ev::Release(c, inc));
            }
            Kind::Holder(_) => {}
            Kind::Waiter(_) => self.after(WAITER_HOLD_MS, Ev::Release(c, inc)),
        }
    }

    fn unlocked(&mut self, c: usize) {
        let cl = &mut self.clients[c];
        cl.phase = Phase::Idle;
        cl.job = None;
        if cl.kind == Kind::Reader {
            let inc = cl.inc;
            let think = self.think.sample(&mut self.rng).round() as u64;
            self.after(think, Ev::NextJob(c, inc));
        }
    }

    fn client_recv(&mut self, c: usize, from: Dest, token: u64, msg: Msg) {
        if token == 0 {
            // Pushed `GRANT <resource>`.
            if let (Msg::Line(l), Phase::Locking(res, _)) = (&msg, &self.clients[c].phase) {
                if l.strip_prefix("GRANT ") == Some(res.as_str()) {
                    self.granted(c);
                }
            }
            return;
        }
        let Some(p) = self.clients[c].pending.remove(&token) else {
            return;
        };
        match (p, msg) {
            (Pend::Conn, Msg::Line(l)) => {
                if l == "OK" || l == "ERR REJECTED_DUPLICATE" {
                    self.connected(c);
                } else {
                    let inc = self.clients[c].inc;
                    self.after(1_000, Ev::ConnRetry(c, inc));
                }
            }
            (Pend::Ping, Msg::Line(l)) => {
                if l == "ERR NO_SESSION" && self.clients[c].connected {
                    self.connect(c);
                }
            }
            (Pend::Lock, Msg::Line(l)) => {
                if l == "GRANT" {
                    self.granted(c);
                } else if l == "ERR NO_SESSION" {
                    self.connect(c);
                }
            }
            (Pend::Unlock, _) => self.unlocked(c),
            (Pend::Open(op), Msg::Line(l)) if from == Dest::Master => self.open_reply(op, &l),
            (Pend::Read(op), Msg::Bytes(b)) => self.read_reply(op, &b),
            _ => {}
        }
    }

    fn timeout(&mut self, c: usize, token: u64) {
        match self.clients[c].pending.remove(&token) {
            Some(Pend::Conn) => self.connect(c),
            Some(Pend::Open(op)) => self.retry_or_fail(op, "TIMEOUT"),
            Some(Pend::Read(op)) => {
                self.close_handle(op);
                self.retry_or_fail(op, "TIMEOUT");
            }
            _ => {}
        }
    }

    // ---- readers and producers -----------------------------------------

    fn pick_run(&mut self) -> u32 {
        let k = self.zipf.sample(&mut self.rng) as u64 - 1;
        // The popular runs shift every epoch.
        let epoch = self.now.as_millis() / (self.sc.epoch_s * 1000);
        ((k + epoch) % u64::from(self.sc.runs)) as u32
    }

    fn next_job(&mut self, c: usize) {
        if self.draining || !self.clients[c].connected {
            self.clients[c].phase = Phase::Idle;
            return;
        }
        let run = self.pick_run();
        self.clients[c].job = Some(Job {
            run,
            epoch: 0,
            ops: BTreeSet::new(),
        });
        let res = self.run_resource(run);
        self.lock(c, res, LockMode::Read);
    }

    fn epoch(&mut self, e: u64) {
        if self.draining {
            return;
        }
        let rip = self.sc.runs_in_parallel;
        for c in 0..self.clients.len() {
            let Kind::Producer(i) = self.clients[c].kind else {
                continue;
            };
            let cl = &self.clients[c];
            if !cl.alive || !cl.connected || cl.phase != Phase::Idle {
                continue;
            }
            let run = ((e * u64::from(rip) + u64::from(i)) % u64::from(self.sc.runs)) as u32;
            self.clients[c].job = Some(Job {
                run,
                epoch: e,
                ops: BTreeSet::new(),
            });
            let res = self.run_resource(run);
            self.lock(c, res, LockMode::Update);
        }
        let next = Timestamp((e + 1) * self.sc.epoch_s * 1000 + 2_000);
        self.at(next, Ev::Epoch(e + 1));
    }

    fn produce(&mut self, c: usize) {
        let Some(job) = self.clients[c].job.as_ref() else {
            return;
        };
        let (run, epoch) = (job.run, job.epoch);
        let Kind::Producer(i) = self.clients[c].kind else {
            return;
        };
        let n = self.sc.events_per_stream as u64;
        for k in 0..self.sc.skims_per_run {
            let mut ords: Vec<u64> = (0..n).filter(|_| self.rng.gen_bool(0.1)).collect();
            if ords.is_empty() {
                ords.push(0);
            }
            let path = format!("/run{run}/skim_e{epoch}_p{i}_{k}");
            let mut held = HeldLocks {
                table: &self.locks.table,
                client: ClientId::new(self.clients[c].session.clone()),
            };
            let store = self.bridge.store_mut(&fed(run)).expect("federation exists");
            let r = store.create_skim(&path, &stream_path(run, 0), "sel", &ords, &mut held);
            let name = self.clients[c].name.clone();
            match r {
                Ok(_) => {
                    let _ = self
                        .bridge
                        .bind_collection(&path, &fed(run), CollectionKind::Skim);
                    self.emit(&name, "SKIM", &[("path", &path), ("events", &ords.len())]);
                }
                Err(e) => {
                    let code = e.to_string().split(':').next().unwrap_or("").replace(' ', "_");
                    self.emit(&name, "SKIMERR", &[("path", &path), ("code", &code)])
                }
            }
        }
    }

    fn start_reads(&mut self, c: usize) {
        let run = self.clients[c].job.as_ref().expect("reader job").run;
        for k in 0..self.sc.streams_per_run {
            let path = Scenario::stream_file(run, k);
            let op = self.next_op;
            self.next_op += 1;
            self.ops.insert(
                op,
                Op {
                    client: c,
                    file_id: self.files[&path],
                    path: path.clone(),
                    slave: None,
                    accepted: false,
                    reads_done: 0,
                    tries: 0,
                    offset: 0,
                },
            );
            self.clients[c].job.as_mut().expect("job").ops.insert(op);
            let name = self.clients[c].name.clone();
            self.emit(&name, "OPEN", &[("op", &op), ("path", &path)]);
            self.send_open(op);
        }
    }

    fn send_open(&mut self, op: u64) {
        let c = self.ops[&op].client;
        let line = format!("OPEN {}", self.ops[&op].path);
        let tok = self.token(c, Pend::Open(op));
        self.send(c, Dest::Master, tok, op, line);
        let inc = self.clients[c].inc;
        self.after(self.sc.timeout_ms, Ev::Timeout(c, inc, tok));
    }

    fn open_reply(&mut self, op: u64, line: &str) {
        if !self.ops.contains_key(&op) {
            return;
        }
        match parse_master_reply(line) {
            Ok(MasterReply::Go(addr)) => {
                let Some(j) = addr.strip_prefix("slave").and_then(|n| n.parse::<u32>().ok()) else {
                    return self.retry_or_fail(op, "BAD_REPLY");
                };
                let o = self.ops.get_mut(&op).expect("live op");
                o.slave = Some(j);
                let name = self.clients[o.client].name.clone();
                self.emit(&name, "HANDLE", &[("op", &op), ("slave", &SlaveId(j))]);
                self.send_read(op);
            }
            Ok(MasterReply::Wait(ms)) => {
                let c = self.ops[&op].client;
                let inc = self.clients[c].inc;
                self.after(ms, Ev::Reopen(c, inc, op));
            }
            Ok(MasterReply::Err(code)) => self.retry_or_fail(op, &code),
            Err(_) => self.retry_or_fail(op, "BAD_REPLY"),
        }
    }

    fn send_read(&mut self, op: u64) {
        let chunk = self.sc.chunk_kb * 1024;
        let chunks = (self.sc.file_kb * 1024) / chunk;
        let offset = self.rng.gen_range(0..chunks) * chunk;
        let o = self.ops.get_mut(&op).expect("live op");
        o.offset = offset;
        let (c, j, fid) = (o.client, o.slave.expect("redirected"), o.file_id);
        let tok = self.token(c, Pend::Read(op));
        self.send(c, Dest::Slave(j), tok, op, format!("READ {fid} {offset} {chunk}"));
        let inc = self.clients[c].inc;
        self.after(self.sc.timeout_ms, Ev::Timeout(c, inc, tok));
    }

    fn read_reply(&mut self, op: u64, bytes: &[u8]) {
        let Some(o) = self.ops.get(&op) else { return };
        let (c, offset) = (o.client, o.offset);
        let name = self.clients[c].name.clone();
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap_or(bytes.len());
        let head = String::from_utf8_lossy(&bytes[..nl]).into_owned();
        if let Some(code) = head.strip_prefix("ERR ") {
            let code = code.to_string();
            self.close_handle(op);
            return self.retry_or_fail(op, &code);
        }
        let len = self.sc.chunk_kb * 1024;
        let body = bytes.get(nl + 1..).unwrap_or(&[]);
        let ok = frames_from_wire(&head, body)
            .ok()
            .and_then(|f| client_decompress(&f, &self.codecs, offset, len).ok());
        match ok {
            Some(data) if data.len() as u64 == len => {
                self.emit(&name, "DATA", &[("op", &op), ("off", &offset), ("len", &len)]);
            }
            _ => {
                self.emit(
                    &name,
                    "ERR",
                    &[
                        ("op", &op),
                        ("code", &"CHECKSUM_MISMATCH"),
                        ("fatal", &0),
                        ("off", &offset),
                        ("len", &len),
                    ],
                );
            }
        }
        let inc = self.clients[c].inc;
        self.after(self.sc.cpu_ms_per_chunk, Ev::ChunkDone(c, inc, op));
    }

    fn chunk_done(&mut self, op: u64) {
        let Some(o) = self.ops.get_mut(&op) else { return };
        o.reads_done += 1;
        if o.reads_done < self.sc.reads_per_file {
            self.send_read(op);
        } else {
            self.close_handle(op);
            let name = self.clients[self.ops[&op].client].name.clone();
            self.emit(&name, "DONE", &[("op", &op)]);
            self.end_op(op);
        }
    }

    fn retry_or_fail(&mut self, op: u64, code: &str) {
        let Some(o) = self.ops.get_mut(&op) else { return };
        o.tries += 1;
        let (c, tries) = (o.client, o.tries);
        let name = self.clients[c].name.clone();
        if tries > self.sc.max_retries {
            self.emit(&name, "ERR", &[("op", &op), ("code", &code), ("fatal", &1)]);
            self.end_op(op);
        } else {
            self.emit(&name, "RETRY", &[("op", &op), ("try", &tries), ("code", &code)]);
            let inc = self.clients[c].inc;
            self.after(RETRY_BACKOFF_MS, Ev::Reopen(c, inc, op));
        }
    }

    /// Ends the client's use of its redirect: drops the slave connection
    /// and tells the master the read is over.
    fn close_handle(&mut self, op: u64) {
        let Some(o) = self.ops.get_mut(&op) else { return };
        let Some(j) = o.slave.take() else { return };
        let (c, fid, accepted) = (o.client, o.file_id, std::mem::take(&mut o.accepted));
        let cl = self.cluster_of(j);
        if accepted {
            self.clusters[cl].inner.borrow_mut().hangup(SlaveId(j), fid);
            let client = self.clients[c].name.clone();
            self.emit(
                &format!("slave{j}"),
                "HANGUP",
                &[("op", &op), ("client", &client)],
            );
        }
        self.clusters[cl].inner.borrow_mut().master.close(SlaveId(j), fid);
        let name = self.clients[c].name.clone();
        self.emit(&name, "CLOSE", &[("op", &op), ("slave", &SlaveId(j))]);
    }

    fn end_op(&mut self, op: u64) {
        let Some(o) = self.ops.remove(&op) else { return };
        let c = o.client;
        let empty = match self.clients[c].job.as_mut() {
            Some(j) => {
                j.ops.remove(&op);
                j.ops.is_empty()
            }
            None => false,
        };
        if empty && self.clients[c].phase == Phase::Working {
            self.unlock(c);
        }
    }

    fn cluster_of(&self, slave: u32) -> usize {
        (slave / self.sc.n_slaves) as usize
    }

    // ---- servers -------------------------------------------------------

    fn server_recv(&mut self, c: usize, inc: u32, dest: Dest, token: u64, conn: u64, line: String) {
        match dest {
            Dest::Locks => {
                if !self.locks_up {
                    return;
                }
                let h = self.locks.handle_line(&line, self.now);
                self.trace_lock(&h);
                self.reply(c, inc, dest, token, Msg::Line(h.reply.to_string()), 0);
                self.trace_reaps(&h.reaped);
                self.push_grants(&h.grants);
                let t = self.now + self.lock_config.deadline() + Duration::from_millis(1);
                if self.sweeps.insert(t) {
                    self.at(t, Ev::LockSweep);
                }
            }
            Dest::Master => {
                if self.power_down {
                    return;
                }
                let reply = match parse_open(&line) {
                    Ok(path) => {
                        let r = self.top.resolve(path, self.now);
                        self.trace_resolution(conn, &r);
                        match r {
                            Ok(res) => MasterReply::from(&res.reply),
                            Err(e) => MasterReply::from(&e),
                        }
                    }
                    Err(_) => MasterReply::Err("BAD_REQUEST".into()),
                };
                self.reply(c, inc, dest, token, Msg::Line(reply.to_string()), 0);
            }
            Dest::Slave(j) => {
                let cl = self.cluster_of(j);
                if !self.clusters[cl].inner.borrow().nodes[&SlaveId(j)].up {
                    return;
                }
                if let Some(o) = self.ops.get_mut(&conn) {
                    if o.slave == Some(j) && !o.accepted && self.clients[c].inc == inc {
                        o.accepted = true;
                        let fid = o.file_id;
                        self.clusters[cl].inner.borrow_mut().attach(SlaveId(j), fid);
                        let client = self.clients[c].name.clone();
                        self.emit(
                            &format!("slave{j}"),
                            "ACCEPT",
                            &[("op", &conn), ("client", &client)],
                        );
                    }
                }
                let out = self.clusters[cl].inner.borrow_mut().read_line(SlaveId(j), &line);
                // Serialized transfer at the slave's bandwidth.
                let service = out.len() as u64 * 1000 / (self.sc.slave_bw_mbps * 1_000_000);
                let busy = self.slave_busy.entry(j).or_insert(Timestamp::ZERO);
                let start = (*busy).max(self.now);
                *busy = start + Duration::from_millis(service);
                let wait = busy.as_millis() - self.now.as_millis();
                self.reply(c, inc, dest, token, Msg::Bytes(out), wait);
            }
        }
    }

    fn trace_resolution(
        &mut self,
        op: u64,
        r: &Result<petastore_core::redirect::hierarchy::Resolution, petastore_core::redirect::RedirError>,
    ) {
        match r {
            Ok(res) => {
                let actor = res.route.last().cloned().unwrap_or_default();
                match &res.reply {
                    OpenReply::Redirect { slave, file_id, .. } => self.emit(
                        &actor,
                        "GO",
                        &[
                            ("op", &op),
                            ("file", file_id),
                            ("slave", slave),
                            ("hops", &res.hops),
                        ],
                    ),
                    OpenReply::Wait { ms, file_id } => self.emit(
                        &actor,
                        "WAIT",
                        &[("op", &op), ("file", file_id), ("ms", ms), ("hops", &res.hops)],
                    ),
                }
            }
            Err(e) => self.emit("master", "REFUSE", &[("op", &op), ("code", &e.code())]),
        }
    }

    fn trace_lock(&mut self, h: &Handled) {
        use petastore_core::lock::protocol::{Reply, Request};
        let Some(req) = &h.request else {
            return self.emit("locks", "BAD_REQUEST", &[]);
        };
        match (req, &h.reply) {
            (Request::Connect(c), Reply::Ok) => self.emit("locks", "SESSION", &[("client", c)]),
            (Request::Connect(c), Reply::Err(code)) => {
                self.emit("locks", "REJECT", &[("client", c), ("code", code)])
            }
            (Request::Lock(c, r, m), Reply::Grant) => self.emit(
                "locks",
                "GRANTED",
                &[("client", c), ("res", r), ("mode", &m.code()), ("queued", &0)],
            ),
            (Request::Lock(c, r, m), Reply::Queue(p)) => self.emit(
                "locks",
                "QUEUED",
                &[("client", c), ("res", r), ("mode", &m.code()), ("pos", p)],
            ),
            (Request::Unlock(c, r), Reply::Ok) => {
                self.emit("locks", "RELEASED", &[("client", c), ("res", r)])
            }
            _ => {}
        }
    }

    fn trace_reaps(&mut self, out: &ReapOutcome) {
        for c in &out.closed_sessions {
            self.emit("locks", "REAP", &[("client", c)]);
        }
        for e in &out.released {
            self.emit(
                "locks",
                "RELEASED",
                &[("client", &e.holder), ("res", &e.resource), ("reaped", &1)],
            );
        }
    }

    fn push_grants(&mut self, grants: &[petastore_core::lock::Grant]) {
        for g in grants {
            self.emit(
                "locks",
                "GRANTED",
                &[
                    ("client", &g.client),
                    ("res", &g.resource),
                    ("mode", &g.mode.code()),
                    ("queued", &1),
                ],
            );
            if let Some(&c) = self.by_session.get(g.client.as_str()) {
                let inc = self.clients[c].inc;
                self.reply(
                    c,
                    inc,
                    Dest::Locks,
                    0,
                    Msg::Line(format!("GRANT {}", g.resource)),
                    0,
                );
            }
        }
    }

    fn cluster_tick(&mut self, m: usize) {
        let now = self.now;
        let events = self.clusters[m].inner.borrow_mut().advance(now);
        let actor = format!("master{m}");
        for e in events {
            match e {
                ClusterEvent::Action(a) => {
                    use petastore_core::redirect::Action;
                    match a {
                        Action::Stage { file, slave } => {
                            self.emit(&actor, "STAGE", &[("file", &file), ("slave", &slave)])
                        }
                        Action::Replicate { file, from, to } => self.emit(
                            &actor,
                            "REPLICATE",
                            &[("file", &file), ("from", &from), ("to", &to)],
                        ),
                        Action::Purge { file, slave } => {
                            self.emit(&actor, "PURGE", &[("file", &file), ("slave", &slave)])
                        }
                    }
                }
                ClusterEvent::Landed { file, slave, staged } => self.emit(
                    &actor,
                    "LAND",
                    &[("file", &file), ("slave", &slave), ("staged", &u8::from(staged))],
                ),
                ClusterEvent::Failed { file, slave } => {
                    self.emit(&actor, "XFERFAIL", &[("file", &file), ("slave", &slave)])
                }
            }
        }
    }

    // ---- faults ----------------------------------------------------------

    fn fault(&mut self, i: usize) {
        let f = self.faults[i].clone();
        let args = f.args.join(",");
        self.emit(
            "harness",
            "FAULT",
            &[("kind", &f.kind.as_str()), ("target", &f.target), ("args", &args)],
        );
        match f.kind {
            FaultKind::ClientCrash => {
                let Some(c) = self.clients.iter().position(|cl| cl.name == f.target) else {
                    return;
                };
                self.crash(c);
                if let Some(ms) = f.duration_ms(0) {
                    self.after(ms, Ev::Restart(c));
                }
            }
            FaultKind::SlaveOffline => {
                let j: u32 = f.target["slave".len()..].parse().expect("validated target");
                self.admin_down.insert(j);
                self.slave_power(j, false);
                if let Some(ms) = f.duration_ms(0) {
                    self.after(ms, Ev::SlaveUp(j));
                }
            }
            FaultKind::PowerOutage => {
                self.power_down = true;
                self.locks_up = false;
                for j in 0..self.sc.slave_count() {
                    self.slave_power(j, false);
                }
                let ms = f.duration_ms(0).expect("validated downtime");
                self.after(ms, Ev::PowerUp);
            }
            FaultKind::PacketLoss => {
                let pct = f.args[0].parse::<f64>().expect("validated pct") / 100.0;
                let until = self.now + Duration::from_millis(f.duration_ms(1).expect("validated duration"));
                self.loss = Some((pct, until));
            }
            FaultKind::TornWrite => {
                let j: u32 = f.target["slave".len()..].parse().expect("validated target");
                let fid = self.files[&f.args[0]];
                let block: u32 = f.args[1].parse().expect("validated block");
                let cl = self.cluster_of(j);
                let mut g = self.clusters[cl].inner.borrow_mut();
                let node = g.nodes.get_mut(&SlaveId(j)).expect("validated slave");
                let resident = node.disk.is_resident(fid);
                node.disk.inject_torn_write(fid, block);
                drop(g);
                self.emit(
                    &format!("slave{j}"),
                    "TORN",
                    &[
                        ("file", &fid),
                        ("block", &block),
                        ("resident", &u8::from(resident)),
                    ],
                );
            }
        }
    }

    fn slave_power(&mut self, j: u32, up: bool) {
        let cl = self.cluster_of(j);
        let was = self.clusters[cl].inner.borrow().nodes[&SlaveId(j)].up;
        if was == up {
            return;
        }
        if !up {
            // Connections die with the process.
            let dropped: Vec<u64> = self
                .ops
                .iter()
                .filter(|(_, o)| o.slave == Some(j) && o.accepted)
                .map(|(&id, _)| id)
                .collect();
            for op in dropped {
                self.ops.get_mut(&op).expect("listed").accepted = false;
                let client = self.clients[self.ops[&op].client].name.clone();
                self.emit(
                    &format!("slave{j}"),
                    "HANGUP",
                    &[("op", &op), ("client", &client)],
                );
            }
        }
        self.clusters[cl].inner.borrow_mut().set_up(SlaveId(j), up);
        self.emit(&format!("slave{j}"), if up { "UP" } else { "DOWN" }, &[]);
    }

    fn power_up(&mut self) {
        self.power_down = false;
        self.locks = LockService::new(self.lock_config);
        self.locks_up = true;
        self.emit("locks", "RESTART", &[]);
        for j in 0..self.sc.slave_count() {
            if !self.admin_down.contains(&j) {
                self.slave_power(j, true);
            }
        }
        let now = self.now;
        for c in &self.clusters {
            c.inner.borrow_mut().report_loads(now);
        }
        self.settle_after = self.settle_after.max(now + Duration::from_millis(2 * PING_MS));
    }

    fn crash(&mut self, c: usize) {
        if !self.clients[c].alive {
            return;
        }
        let name = self.clients[c].name.clone();
        self.emit(&name, "CRASH", &[("session", &self.clients[c].session.clone())]);
        let ops: Vec<u64> = self.clients[c]
            .job
            .as_ref()
            .map(|j| j.ops.iter().copied().collect())
            .unwrap_or_default();
        for op in ops {
            self.close_handle(op);
            self.emit(&name, "CRASHED", &[("op", &op)]);
            self.ops.remove(&op);
        }
        let cl = &mut self.clients[c];
        cl.alive = false;
        cl.connected = false;
        cl.inc += 1;
        cl.job = None;
        cl.pending.clear();
        cl.phase = Phase::Connecting;
        let deadline = self.lock_config.deadline() + Duration::from_millis(1);
        self.settle_after = self.settle_after.max(self.now + deadline);
    }

    fn restart(&mut self, c: usize) {
        if self.done || self.clients[c].alive {
            return;
        }
        let cl = &mut self.clients[c];
        cl.alive = true;
        cl.restarts += 1;
        cl.session = format!("{}.{}", cl.name, cl.restarts);
        let (s, inc, name) = (cl.session.clone(), cl.inc, cl.name.clone());
        self.by_session.insert(s.clone(), c);
        self.emit(&name, "RESTART", &[("session", &s)]);
        self.at(self.now, Ev::Start(c, inc));
    }

    // ---- end of run ------------------------------------------------------

    fn maybe_quiesce(&mut self) {
        if self.audit_scheduled {
            return;
        }
        let cap = self.end + Duration::from_millis(DRAIN_CAP_MS);
        let busy = !self.ops.is_empty()
            || self.clients.iter().any(|c| {
                c.alive
                    && matches!(c.phase, Phase::Unlocking | Phase::Connecting | Phase::Working)
                    && !matches!(c.kind, Kind::Holder(_))
            });
        if busy && self.now < cap {
            return;
        }
        if busy {
            let stuck: Vec<u64> = self.ops.keys().copied().collect();
            for op in stuck {
                let c = self.ops[&op].client;
                self.close_handle(op);
                let name = self.clients[c].name.clone();
                self.emit(&name, "CRASHED", &[("op", &op), ("reason", &"cutoff")]);
                self.ops.remove(&op);
            }
        }
        self.audit_scheduled = true;
        let t = self.now.max(self.settle_after);
        self.at(t, Ev::Audit);
    }

    fn audit(&mut self) {
        if self.done {
            return;
        }
        let out = self.locks.sweep(self.now);
        self.trace_reaps(&out);
        self.push_grants(&out.granted);
        let sessions = self.locks.table.session_count();
        let live = self.clients.iter().filter(|c| c.alive).count();
        let counters = self.locks.table.counters();
        self.emit(
            "harness",
            "AUDIT",
            &[
                ("sessions", &sessions),
                ("live", &live),
                ("collections", &self.bridge.binding_count()),
                ("lock_acquires", &counters.acquires),
            ],
        );
        for c in &self.clusters {
            if let Err(e) = c.inner.borrow().master.check_invariants() {
                let m = c.inner.borrow().master.name().to_string();
                self.trace
                    .emit(self.now, &m, "INVARIANT", &[("detail", &e.replace(' ', "_"))]);
            }
        }
        self.done = true;
    }
}
