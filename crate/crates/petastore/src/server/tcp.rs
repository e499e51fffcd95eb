//! Thread-per-connection TCP front ends for the lock service and a
//! redirector cluster. Time is wall-clock milliseconds since server start.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context, Result};
use petastore_core::lock::protocol::{Reply, Request};
use petastore_core::lock::{ClientId, Grant, LockConfig};
use petastore_core::redirect::hierarchy::Resolver;
use petastore_core::redirect::protocol::{parse_open, parse_read, MasterReply};
use petastore_core::redirect::{OpenReply, SlaveId};
use petastore_core::storage::BlockFrames;
use petastore_core::Timestamp;

use super::lock::LockService;
use super::redir::{frames_from_wire, Cluster};

#[derive(Clone)]
struct Clock(Instant);

impl Clock {
    fn now(&self) -> Timestamp {
        Timestamp(self.0.elapsed().as_millis() as u64)
    }
}

/// A running listener set; dropping it stops accepting.
pub struct ServerHandle {
    pub addrs: Vec<SocketAddr>,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addrs[0]
    }

    pub fn shutdown(mut self) {
        self.stop_all();
    }

    fn stop_all(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for a in &self.addrs {
            let _ = TcpStream::connect(a);
        }
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    /// Blocks until the process is killed.
    pub fn wait(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if !self.threads.is_empty() {
            self.stop_all();
        }
    }
}

fn accept_loop(
    listener: TcpListener,
    stop: Arc<AtomicBool>,
    handler: impl Fn(TcpStream) + Send + Sync + 'static,
) -> JoinHandle<()> {
    let handler = Arc::new(handler);
    thread::spawn(move || {
        for conn in listener.incoming() {
            if stop.load(Ordering::SeqCst) {
                break;
            }
            let Ok(conn) = conn else { continue };
            let _ = conn.set_nodelay(true);
            let h = handler.clone();
            thread::spawn(move || h(conn));
        }
    })
}

/// One line per write, so a reply never waits on a partial segment.
fn send_line(w: &mut impl Write, line: &str) -> std::io::Result<()> {
    w.write_all(format!("{line}\n").as_bytes())
}

type Writers = BTreeMap<ClientId, Arc<Mutex<TcpStream>>>;

struct LockShared {
    service: LockService,
    writers: Writers,
}

fn push_grants(writers: &Writers, grants: &[Grant]) {
    for g in grants {
        if let Some(w) = writers.get(&g.client) {
            let _ = send_line(&mut *w.lock().unwrap(), &format!("GRANT {}", g.resource));
        }
    }
}

/// Serves the lock protocol. Grants for queued clients are pushed to the
/// connection that issued their `CONN`. A background sweep reaps sessions
/// that stop pinging even when no traffic arrives.
pub fn spawn_lock_server(bind: &str, config: LockConfig) -> Result<ServerHandle> {
    let listener = TcpListener::bind(bind).with_context(|| format!("binding {bind}"))?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let clock = Clock(Instant::now());
    let shared = Arc::new(Mutex::new(LockShared {
        service: LockService::new(config),
        writers: BTreeMap::new(),
    }));

    let (sh, ck) = (shared.clone(), clock.clone());
    let acceptor = accept_loop(listener, stop.clone(), move |conn| {
        let Ok(w) = conn.try_clone() else { return };
        let w = Arc::new(Mutex::new(w));
        for line in BufReader::new(conn).lines() {
            let Ok(line) = line else { break };
            let mut g = sh.lock().unwrap();
            let h = g.service.handle_line(&line, ck.now());
            if let (Some(Request::Connect(c)), Reply::Ok) = (&h.request, &h.reply) {
                g.writers.insert(c.clone(), w.clone());
            }
            for c in &h.reaped.closed_sessions {
                g.writers.remove(c);
            }
            if send_line(&mut *w.lock().unwrap(), &h.reply.to_string()).is_err() {
                break;
            }
            push_grants(&g.writers, &h.grants);
        }
    });

    let (sh, st) = (shared, stop.clone());
    let sweeper = thread::spawn(move || {
        let period = config.heartbeat_interval.min(Duration::from_secs(1));
        while !st.load(Ordering::SeqCst) {
            thread::sleep(period.min(Duration::from_millis(200)));
            let mut g = sh.lock().unwrap();
            let out = g.service.sweep(clock.now());
            for c in &out.closed_sessions {
                g.writers.remove(c);
            }
            push_grants(&g.writers, &out.granted);
        }
    });
    Ok(ServerHandle {
        addrs: vec![addr],
        stop,
        threads: vec![acceptor, sweeper],
    })
}

/// A line-oriented client for the lock server.
pub struct LockClient {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl LockClient {
    pub fn connect(addr: SocketAddr) -> Result<Self> {
        let s = TcpStream::connect(addr)?;
        s.set_nodelay(true)?;
        s.set_read_timeout(Some(Duration::from_secs(10)))?;
        Ok(Self {
            reader: BufReader::new(s.try_clone()?),
            writer: s,
        })
    }

    /// Sends one request line and returns the reply line.
    pub fn send(&mut self, line: &str) -> Result<String> {
        send_line(&mut self.writer, line)?;
        self.recv()
    }

    /// Next line from the server (a reply or a pushed `GRANT <resource>`).
    pub fn recv(&mut self) -> Result<String> {
        let mut out = String::new();
        if self.reader.read_line(&mut out)? == 0 {
            bail!("server closed the connection");
        }
        Ok(out.trim_end().to_string())
    }
}

/// Serves a redirector cluster: `OPEN` on the master address, `READ` on one
/// address per slave. A ticker thread reports loads and advances the
/// cluster every `tick`.
pub fn spawn_redir_cluster(
    bind_host: &str,
    cluster: Cluster,
    slave_count: u32,
    capacity: u64,
    tick: Duration,
) -> Result<(ServerHandle, Arc<Mutex<Cluster>>)> {
    let stop = Arc::new(AtomicBool::new(false));
    let clock = Clock(Instant::now());
    let cluster = Arc::new(Mutex::new(cluster));
    let master_l = TcpListener::bind(format!("{bind_host}:0"))?;
    let mut addrs = vec![master_l.local_addr()?];
    let mut threads = Vec::new();

    for i in 0..slave_count {
        let l = TcpListener::bind(format!("{bind_host}:0"))?;
        let a = l.local_addr()?;
        addrs.push(a);
        let id = SlaveId(i);
        cluster
            .lock()
            .unwrap()
            .add_slave(id, &a.to_string(), capacity, clock.now())
            .map_err(|e| anyhow!("{e}"))?;
        let c = cluster.clone();
        threads.push(accept_loop(l, stop.clone(), move |conn| {
            let Ok(mut w) = conn.try_clone() else { return };
            let mut touched = Vec::new();
            for line in BufReader::new(conn).lines() {
                let Ok(line) = line else { break };
                let mut g = c.lock().unwrap();
                if let Ok(r) = parse_read(&line) {
                    if !touched.contains(&r.file_id) {
                        touched.push(r.file_id);
                        g.attach(id, r.file_id);
                    }
                }
                let out = g.read_line(id, &line);
                drop(g);
                if w.write_all(&out).is_err() {
                    break;
                }
            }
            let mut g = c.lock().unwrap();
            for f in touched {
                g.detach(id, f);
            }
        }));
    }

    let (c, ck) = (cluster.clone(), clock.clone());
    threads.push(accept_loop(master_l, stop.clone(), move |conn| {
        let Ok(mut w) = conn.try_clone() else { return };
        for line in BufReader::new(conn).lines() {
            let Ok(line) = line else { break };
            let reply = match parse_open(&line) {
                Ok(path) => match c.lock().unwrap().master.resolve(path, ck.now()) {
                    Ok(res) => MasterReply::from(&res.reply),
                    Err(e) => MasterReply::from(&e),
                },
                Err(_) => MasterReply::Err("BAD_REQUEST".into()),
            };
            if send_line(&mut w, &reply.to_string()).is_err() {
                break;
            }
        }
    }));

    let (c, st) = (cluster.clone(), stop.clone());
    threads.push(thread::spawn(move || {
        while !st.load(Ordering::SeqCst) {
            thread::sleep(tick);
            let mut g = c.lock().unwrap();
            let now = clock.now();
            g.report_loads(now);
            g.advance(now);
        }
    }));

    Ok((ServerHandle { addrs, stop, threads }, cluster))
}

/// Client side of a redirected read: `OPEN` at the master (waiting out
/// stagings up to `max_wait`), then `READ` at the slave it names.
pub fn open_and_read(
    master: SocketAddr,
    path: &str,
    file_id: u64,
    offset: u64,
    len: u64,
    max_wait: Duration,
) -> Result<BlockFrames> {
    let deadline = Instant::now() + max_wait;
    let m = TcpStream::connect(master)?;
    m.set_nodelay(true)?;
    let mut mr = BufReader::new(m.try_clone()?);
    let mut mw = m;
    let slave = loop {
        send_line(&mut mw, &format!("OPEN {path}"))?;
        let mut line = String::new();
        mr.read_line(&mut line)?;
        match petastore_core::redirect::protocol::parse_master_reply(&line)? {
            MasterReply::Go(addr) => break addr,
            MasterReply::Wait(ms) => {
                if Instant::now() >= deadline {
                    bail!("still staging after {max_wait:?}");
                }
                thread::sleep(Duration::from_millis(ms.min(500)));
            }
            MasterReply::Err(code) => bail!("master refused: {code}"),
        }
    };
    let s = TcpStream::connect(&slave).with_context(|| format!("connecting to {slave}"))?;
    s.set_nodelay(true)?;
    let mut sr = BufReader::new(s.try_clone()?);
    let mut sw = s;
    send_line(&mut sw, &format!("READ {file_id} {offset} {len}"))?;
    let mut head = String::new();
    sr.read_line(&mut head)?;
    let n = match petastore_core::redirect::protocol::parse_slave_reply(&head)? {
        petastore_core::redirect::protocol::SlaveReply::Data(n) => n as usize,
        petastore_core::redirect::protocol::SlaveReply::Err(code) => bail!("slave refused: {code}"),
    };
    let mut body = vec![0; n];
    sr.read_exact(&mut body)?;
    frames_from_wire(head.trim_end(), &body)
}

/// Convenience for callers holding a redirect.
pub fn describe(reply: &OpenReply) -> String {
    MasterReply::from(reply).to_string()
}
