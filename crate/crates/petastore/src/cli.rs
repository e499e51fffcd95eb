//! The `petastore` command line.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use petastore_core::bridge::Bridge;
use petastore_core::conditions::{sweep, ConditionKey};
use petastore_core::lock::LockConfig;
use petastore_core::redirect::policy::PolicyConfig;
use petastore_core::redirect::{Master, SlaveId};
use petastore_core::storage::{CodecId, LatencyModel};
use petastore_core::store::{CollectionKind, NoLocks};
use petastore_core::{ComponentKind, EventHeader, FederationId, Locator, Timestamp};

use crate::harness::metrics::Report;
use crate::harness::scenario::Scenario;
use crate::harness::trace::parse_trace;
use crate::server::redir::Cluster;
use crate::server::tcp::{open_and_read, spawn_lock_server, spawn_redir_cluster, LockClient};
use crate::{catalog, cdbfile, files, harness};

#[derive(Parser, Debug)]
#[command(name = "petastore", version, about = "Federated event store toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run a scenario file and print its report.
    Run {
        scenario: PathBuf,
        /// Where to write the trace.
        #[arg(long, default_value = "trace.tsv")]
        trace: PathBuf,
    },
    /// Recompute the report of a trace.
    Report { trace: PathBuf },
    /// Bridge catalog administration.
    Catalog(CatalogArgs),
    /// Collections of one federation and stored files.
    Store(StoreArgs),
    /// Conditions database.
    Cdb(CdbArgs),
    /// Lock service.
    Locks {
        #[command(subcommand)]
        cmd: LocksCmd,
    },
    /// Redirector.
    Redir {
        #[command(subcommand)]
        cmd: RedirCmd,
    },
}

#[derive(Args, Debug)]
pub struct CatalogArgs {
    #[arg(long, default_value = ".")]
    pub root: PathBuf,
    #[command(subcommand)]
    pub cmd: CatalogCmd,
}

#[derive(Subcommand, Debug)]
pub enum CatalogCmd {
    /// Add a federation, e.g. `run12:REAL`.
    Register { federation: FederationId },
    /// Bind an existing collection of a federation into the bridge.
    Bind { path: String, federation: FederationId },
    /// Print the federation and kind a path resolves to.
    Resolve { path: String },
    /// Materialize a collection into another federation.
    DeepCopy { path: String, target: FederationId },
}

#[derive(Args, Debug)]
pub struct StoreArgs {
    #[arg(long, default_value = ".")]
    pub root: PathBuf,
    #[command(subcommand)]
    pub cmd: StoreCmd,
}

#[derive(Subcommand, Debug)]
pub enum StoreCmd {
    /// List collections of a federation under a prefix.
    Ls {
        federation: FederationId,
        #[arg(default_value = "/")]
        prefix: String,
    },
    /// Create a stream of synthetic headers, or a skim with `--skim-of`.
    Create {
        federation: FederationId,
        path: String,
        #[arg(long, default_value_t = 0)]
        events: u64,
        #[arg(long)]
        skim_of: Option<String>,
        /// Comma-separated ordinals for a skim.
        #[arg(long, value_delimiter = ',')]
        ordinals: Vec<u64>,
    },
    /// Write `input` as a compressed, checksummed stored file.
    Pack {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        raw: bool,
    },
    /// Verify and inflate a stored file.
    Unpack { input: PathBuf, output: PathBuf },
}

#[derive(Args, Debug)]
pub struct CdbArgs {
    #[arg(long, default_value = "cdb")]
    pub db: PathBuf,
    #[command(subcommand)]
    pub cmd: CdbCmd,
}

#[derive(Subcommand, Debug)]
pub enum CdbCmd {
    /// Insert a payload valid over [begin, end).
    Insert {
        path: String,
        condition_type: String,
        begin: u64,
        end: u64,
        #[arg(long, default_value = "default")]
        revision: String,
        /// Insertion time in ms; defaults to one past the latest record.
        #[arg(long)]
        at: Option<u64>,
        /// Payload text; `--payload-file` reads it from a file.
        #[arg(long, conflicts_with = "payload_file")]
        payload: Option<String>,
        #[arg(long)]
        payload_file: Option<PathBuf>,
    },
    /// Look up the payload valid at `t`.
    Lookup {
        path: String,
        condition_type: String,
        t: u64,
        #[arg(long, default_value = "default")]
        revision: String,
        #[arg(long)]
        as_of: Option<u64>,
        /// Resolve the revision and cutoff through a configuration.
        #[arg(long, conflicts_with_all = ["revision", "as_of"])]
        config: Option<String>,
    },
    /// Merge another store into this one.
    Sweep { source: PathBuf },
    /// Write the keys under `prefix`, as seen by `config`, to a new store.
    Extract {
        config: String,
        output: PathBuf,
        #[arg(long, default_value = "/")]
        prefix: String,
    },
    /// Create a configuration from `prefix=revision` bindings.
    Mkconfig {
        name: String,
        #[arg(required = true)]
        bindings: Vec<String>,
        #[arg(long)]
        cutoff: Option<u64>,
    },
}

#[derive(Subcommand, Debug)]
pub enum LocksCmd {
    /// Serve the lock protocol until killed.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7070")]
        bind: String,
        #[arg(long, default_value_t = 1024)]
        max_connections: usize,
        #[arg(long, default_value_t = 5000)]
        heartbeat_ms: u64,
    },
    /// Send request lines on one connection and print the replies.
    Send {
        addr: SocketAddr,
        #[arg(required = true)]
        lines: Vec<String>,
    },
}

#[derive(Subcommand, Debug)]
pub enum RedirCmd {
    /// Serve files through a master and its slaves until killed.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 3)]
        slaves: u32,
        #[arg(long, default_value_t = 256)]
        capacity_mb: u64,
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Files to serve as `/<name>`, ids from 1 in order.
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Open a path through a master and read a range.
    Open {
        master: SocketAddr,
        path: String,
        file_id: u64,
        offset: u64,
        len: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Validate a policy file and print it normalized.
    PolicyCheck { file: PathBuf },
}

pub fn main_with(cli: Cli, out: &mut dyn std::io::Write) -> Result<i32> {
    match cli.command {
        Command::Run { scenario, trace } => {
            let text =
                fs::read_to_string(&scenario).with_context(|| format!("reading {}", scenario.display()))?;
            let s = Scenario::parse(&text)?;
            let o = harness::run(&s)?;
            files::write_atomic(&trace, o.trace.as_bytes())?;
            write!(out, "{}", o.report)?;
            for v in &o.violations {
                writeln!(out, "violation: {v}")?;
            }
            Ok(if o.violations.is_empty() { 0 } else { 1 })
        }
        Command::Report { trace } => {
            let text = fs::read_to_string(&trace).with_context(|| format!("reading {}", trace.display()))?;
            write!(out, "{}", Report::from_trace(&parse_trace(&text)?))?;
            Ok(0)
        }
        Command::Catalog(a) => catalog_cmd(&a.root, a.cmd, out).map(|_| 0),
        Command::Store(a) => store_cmd(&a.root, a.cmd, out).map(|_| 0),
        Command::Cdb(a) => cdb_cmd(&a.db, a.cmd, out).map(|_| 0),
        Command::Locks { cmd } => locks_cmd(cmd, out).map(|_| 0),
        Command::Redir { cmd } => redir_cmd(cmd, out).map(|_| 0),
    }
}

fn catalog_cmd(root: &Path, cmd: CatalogCmd, out: &mut dyn std::io::Write) -> Result<()> {
    let mut bridge = catalog::load_bridge(root)?;
    match cmd {
        CatalogCmd::Register { federation } => {
            bridge.register_federation(federation.clone())?;
            writeln!(out, "registered {federation}")?;
        }
        CatalogCmd::Bind { path, federation } => {
            let kind = bridge
                .store(&federation)
                .ok_or_else(|| anyhow!("UNKNOWN_FEDERATION: {federation}"))?
                .get(&path)
                .ok_or_else(|| anyhow!("NOT_FOUND: {path} in {federation}"))?
                .kind();
            bridge.bind_collection(&path, &federation, kind)?;
            writeln!(out, "{path}\t{federation}\t{}", kind.as_str())?;
        }
        CatalogCmd::Resolve { path } => {
            let (fed, kind) = bridge.resolve(&path)?;
            writeln!(out, "{path}\t{fed}\t{}", kind.as_str())?;
            return Ok(());
        }
        CatalogCmd::DeepCopy { path, target } => {
            let new_path = bridge.deep_copy(&path, &target, &mut NoLocks)?;
            writeln!(out, "{new_path}")?;
        }
    }
    catalog::save_bridge(root, &bridge)
}

fn store_mut<'a>(
    bridge: &'a mut Bridge,
    fed: &FederationId,
) -> Result<&'a mut petastore_core::store::EventStore> {
    bridge
        .store_mut(fed)
        .ok_or_else(|| anyhow!("UNKNOWN_FEDERATION: {fed}"))
}

fn store_cmd(root: &Path, cmd: StoreCmd, out: &mut dyn std::io::Write) -> Result<()> {
    match cmd {
        StoreCmd::Ls { federation, prefix } => {
            let bridge = catalog::load_bridge(root)?;
            let store = bridge
                .store(&federation)
                .ok_or_else(|| anyhow!("UNKNOWN_FEDERATION: {federation}"))?;
            for p in store.list(&prefix) {
                let c = store.get(&p).expect("listed");
                writeln!(out, "{p}\t{}\t{}", c.kind().as_str(), c.len())?;
            }
        }
        StoreCmd::Create {
            federation,
            path,
            events,
            skim_of,
            ordinals,
        } => {
            let mut bridge = catalog::load_bridge(root)?;
            let store = store_mut(&mut bridge, &federation)?;
            match skim_of {
                Some(src) => {
                    store.create_skim(&path, &src, "cli", &ordinals, &mut NoLocks)?;
                }
                None => {
                    let id = store.create_collection(&path, CollectionKind::Stream, &mut NoLocks)?;
                    let run = federation
                        .run_label()
                        .trim_start_matches(|c: char| !c.is_ascii_digit());
                    let run: u32 = run.parse().unwrap_or(0);
                    store.append_events(
                        id,
                        (0..events).map(|e| {
                            EventHeader::new(e, run).with_component(
                                ComponentKind::Aod,
                                Locator {
                                    file_id: 1,
                                    offset: e * 4096,
                                    length: 4096,
                                },
                            )
                        }),
                    )?;
                }
            }
            writeln!(out, "created {path} in {federation}")?;
            catalog::save_bridge(root, &bridge)?;
        }
        StoreCmd::Pack { input, output, raw } => {
            let bytes = fs::read(&input).with_context(|| format!("reading {}", input.display()))?;
            let codec = if raw { CodecId::NONE } else { CodecId::REFERENCE_LZ };
            let f = files::write_packed(&output, &bytes, codec)?;
            writeln!(
                out,
                "{} bytes -> {} bytes ({:.3}:1, {} blocks)",
                f.logical_size,
                f.physical_size,
                f.logical_size as f64 / f.physical_size.max(1) as f64,
                f.blocks.len()
            )?;
        }
        StoreCmd::Unpack { input, output } => {
            let bytes = files::read_packed(&input)?;
            files::write_atomic(&output, &bytes)?;
            writeln!(out, "{} bytes", bytes.len())?;
        }
    }
    Ok(())
}

fn cdb_cmd(db: &Path, cmd: CdbCmd, out: &mut dyn std::io::Write) -> Result<()> {
    let tag = db
        .file_name()
        .and_then(|n| n.to_str())
        .filter(|n| !n.is_empty())
        .unwrap_or("cdb")
        .to_string();
    let mut store = cdbfile::load(db, &tag)?;
    let next_time = |s: &petastore_core::conditions::ConditionStore| {
        Timestamp(
            s.records()
                .iter()
                .map(|r| r.inserted_at.as_millis() + 1)
                .max()
                .unwrap_or(1),
        )
    };
    match cmd {
        CdbCmd::Insert {
            path,
            condition_type,
            begin,
            end,
            revision,
            at,
            payload,
            payload_file,
        } => {
            let blob = match (payload, payload_file) {
                (Some(p), _) => p.into_bytes(),
                (None, Some(f)) => fs::read(&f).with_context(|| format!("reading {}", f.display()))?,
                (None, None) => bail!("one of --payload or --payload-file is required"),
            };
            let at = at.map(Timestamp).unwrap_or_else(|| next_time(&store));
            let key = ConditionKey::new(&path, &condition_type)?;
            let seq = store.insert_blob(key, begin, end, at, &revision, &blob)?;
            writeln!(out, "inserted seq={seq} at={}", at.as_millis())?;
        }
        CdbCmd::Lookup {
            path,
            condition_type,
            t,
            revision,
            as_of,
            config,
        } => {
            let key = ConditionKey::new(&path, &condition_type)?;
            let rec = match config {
                Some(c) => store.lookup_config(&key, t, &c)?,
                None => store.lookup(&key, t, Timestamp(as_of.unwrap_or(u64::MAX)), &revision)?,
            };
            writeln!(
                out,
                "{}\t{} [{}, {})\trev={} inserted={} origin={}:{}",
                rec.key.path,
                rec.key.condition_type,
                rec.validity.begin,
                rec.validity.end,
                rec.revision,
                rec.inserted_at.as_millis(),
                rec.origin.tag,
                rec.origin.seq
            )?;
            let blob = store.payload(rec.payload).expect("stored payload");
            out.write_all(blob)?;
            writeln!(out)?;
            return Ok(());
        }
        CdbCmd::Sweep { source } => {
            let src = cdbfile::load(&source, "source")?;
            let n = sweep(&src, &mut store);
            writeln!(out, "merged {n} records")?;
        }
        CdbCmd::Extract {
            config,
            output,
            prefix,
        } => {
            let under = |p: &str| prefix == "/" || p == prefix || p.starts_with(&format!("{prefix}/"));
            let sub = store.extract_subset(|k| under(&k.path), &config)?;
            cdbfile::save(&output, &sub)?;
            writeln!(out, "extracted {} records to {}", sub.len(), output.display())?;
            return Ok(());
        }
        CdbCmd::Mkconfig {
            name,
            bindings,
            cutoff,
        } => {
            let pairs = bindings
                .iter()
                .map(|b| {
                    b.split_once('=')
                        .map(|(p, r)| (p.to_string(), r.to_string()))
                        .ok_or_else(|| anyhow!("binding `{b}` is not prefix=revision"))
                })
                .collect::<Result<Vec<_>>>()?;
            let cutoff = cutoff.map(Timestamp).unwrap_or_else(|| next_time(&store));
            let c = store.mkconfig(&name, pairs, cutoff)?;
            writeln!(out, "{}\tstate={}", c.name, c.state)?;
        }
    }
    cdbfile::save(db, &store)
}

fn locks_cmd(cmd: LocksCmd, out: &mut dyn std::io::Write) -> Result<()> {
    match cmd {
        LocksCmd::Serve {
            bind,
            max_connections,
            heartbeat_ms,
        } => {
            let config = LockConfig {
                max_connections,
                heartbeat_interval: Duration::from_millis(heartbeat_ms),
                ..LockConfig::default()
            };
            let h = spawn_lock_server(&bind, config)?;
            writeln!(out, "listening on {}", h.addr())?;
            out.flush()?;
            h.wait();
        }
        LocksCmd::Send { addr, lines } => {
            let mut c = LockClient::connect(addr)?;
            for l in lines {
                writeln!(out, "{}", c.send(&l)?)?;
            }
        }
    }
    Ok(())
}

fn redir_cmd(cmd: RedirCmd, out: &mut dyn std::io::Write) -> Result<()> {
    match cmd {
        RedirCmd::Serve {
            host,
            slaves,
            capacity_mb,
            policy,
            files: paths,
        } => {
            let policy = match policy {
                Some(p) => PolicyConfig::parse(&fs::read_to_string(&p)?)?,
                None => PolicyConfig::default(),
            };
            let cluster = Cluster::new(Master::new("master", policy, LatencyModel::default()));
            let (h, shared) = spawn_redir_cluster(
                &host,
                cluster,
                slaves,
                capacity_mb * 1024 * 1024,
                Duration::from_millis(500),
            )?;
            {
                let mut g = shared.lock().expect("cluster lock");
                for (i, p) in paths.iter().enumerate() {
                    let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
                    let (_, image) = files::pack(&bytes, CodecId::REFERENCE_LZ)?;
                    let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("file");
                    let id = i as u64 + 1;
                    let home = SlaveId(i as u32 % slaves.max(1));
                    g.add_file(&format!("/{name}"), id, image, true, Some(home))?;
                    writeln!(out, "/{name}\tfile={id}\t{home}")?;
                }
            }
            writeln!(out, "master {}", h.addrs[0])?;
            for (i, a) in h.addrs[1..].iter().enumerate() {
                writeln!(out, "slave{i} {a}")?;
            }
            out.flush()?;
            h.wait();
        }
        RedirCmd::Open {
            master,
            path,
            file_id,
            offset,
            len,
            output,
        } => {
            let frames = open_and_read(master, &path, file_id, offset, len, Duration::from_secs(600))?;
            let data = petastore_core::storage::client_decompress(
                &frames,
                &petastore_core::storage::CodecRegistry::default(),
                offset,
                len,
            )?;
            match output {
                Some(p) => files::write_atomic(&p, &data)?,
                None => out.write_all(&data)?,
            }
        }
        RedirCmd::PolicyCheck { file } => {
            let p = PolicyConfig::parse(&fs::read_to_string(&file)?)?;
            write!(out, "{}", p.to_text())?;
        }
    }
    Ok(())
}
