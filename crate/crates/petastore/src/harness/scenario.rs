//! Scenario files: `key=value` lines, `#` comments.
//!
//! Faults repeat as `fault=<seconds> <KIND> <target> [args...]`; policy
//! overrides are `policy.<key>=<value>` with the keys of the policy file.

use std::fmt;

use petastore_core::redirect::policy::PolicyConfig;
use petastore_core::storage::LatencyModel;
use std::time::Duration;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScenarioError {
    #[error("INVALID_SCENARIO: {0}")]
    Invalid(String),
    #[error("UNKNOWN_TARGET: {0}")]
    UnknownTarget(String),
}

impl ScenarioError {
    pub fn code(&self) -> &'static str {
        match self {
            ScenarioError::Invalid(_) => "INVALID_SCENARIO",
            ScenarioError::UnknownTarget(_) => "UNKNOWN_TARGET",
        }
    }
}

fn invalid(m: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(m.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Analysis jobs reading stream files plus skim producers.
    Jobs,
    /// Lock holders and queued waiters, for crash recovery.
    Locks,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultKind {
    /// `CLIENT_CRASH <client> [restart_s]`
    ClientCrash,
    /// `SLAVE_OFFLINE <slave> [duration_s]`
    SlaveOffline,
    /// `POWER_OUTAGE all <downtime_s>`
    PowerOutage,
    /// `PACKET_LOSS all <pct> <duration_s>`
    PacketLoss,
    /// `TORN_WRITE <slave> <path> <block>`
    TornWrite,
}

impl FaultKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FaultKind::ClientCrash => "CLIENT_CRASH",
            FaultKind::SlaveOffline => "SLAVE_OFFLINE",
            FaultKind::PowerOutage => "POWER_OUTAGE",
            FaultKind::PacketLoss => "PACKET_LOSS",
            FaultKind::TornWrite => "TORN_WRITE",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "CLIENT_CRASH" => FaultKind::ClientCrash,
            "SLAVE_OFFLINE" => FaultKind::SlaveOffline,
            "POWER_OUTAGE" => FaultKind::PowerOutage,
            "PACKET_LOSS" => FaultKind::PacketLoss,
            "TORN_WRITE" => FaultKind::TornWrite,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fault {
    pub at_ms: u64,
    pub kind: FaultKind,
    pub target: String,
    pub args: Vec<String>,
}

impl Fault {
    fn num(&self, i: usize) -> Option<f64> {
        self.args.get(i).and_then(|a| a.parse().ok())
    }

    /// Optional trailing duration in ms (restart delay, downtime, ...).
    pub fn duration_ms(&self, i: usize) -> Option<u64> {
        self.num(i).map(|s| (s * 1000.0).round() as u64)
    }
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {}",
            self.at_ms as f64 / 1000.0,
            self.kind.as_str(),
            self.target
        )?;
        for a in &self.args {
            write!(f, " {a}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub seed: u64,
    pub mode: Mode,
    pub duration_s: u64,
    pub n_masters: u32,
    /// Slaves per master.
    pub n_slaves: u32,
    pub slave_capacity_kb: u64,
    pub slave_bw_mbps: u64,
    pub n_clients: u32,
    pub runs: u32,
    pub streams_per_run: u32,
    pub skims_per_run: u32,
    pub runs_in_parallel: u32,
    pub events_per_stream: u32,
    pub hot_spot_zipf_s: f64,
    pub epoch_s: u64,
    pub file_kb: u64,
    pub chunk_kb: u64,
    pub reads_per_file: u32,
    pub cpu_ms_per_chunk: u64,
    pub think_ms: u64,
    /// Fraction of stream files with a tertiary copy.
    pub archive_fraction: f64,
    pub corpus_noise: f64,
    pub net_latency_ms: u64,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub lock_crashes: u32,
    pub tertiary: LatencyModel,
    pub policy: PolicyConfig,
    pub faults: Vec<Fault>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            seed: 1,
            mode: Mode::Jobs,
            duration_s: 300,
            n_masters: 1,
            n_slaves: 3,
            slave_capacity_kb: 256 * 1024,
            slave_bw_mbps: 100,
            n_clients: 10,
            runs: 8,
            streams_per_run: 4,
            skims_per_run: 1,
            runs_in_parallel: 2,
            events_per_stream: 64,
            hot_spot_zipf_s: 1.1,
            epoch_s: 60,
            file_kb: 128,
            chunk_kb: 16,
            reads_per_file: 4,
            cpu_ms_per_chunk: 100,
            think_ms: 200,
            archive_fraction: 1.0,
            corpus_noise: super::corpus::DEFAULT_NOISE,
            net_latency_ms: 1,
            timeout_ms: 1000,
            max_retries: 3,
            lock_crashes: 50,
            tertiary: LatencyModel {
                base: Duration::from_secs(2),
                per_gib: Duration::from_secs(60),
            },
            policy: PolicyConfig::default(),
            faults: Vec::new(),
        }
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let mut s = Scenario::default();
        let mut policy = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |m: &str| invalid(format!("line {}: {m}", n + 1));
            let (k, v) = line.split_once('=').ok_or_else(|| at("expected key=value"))?;
            let (k, v) = (k.trim(), v.trim());
            macro_rules! num {
                () => {
                    v.parse().map_err(|_| at(&format!("bad value for {k}")))?
                };
            }
            if let Some(pk) = k.strip_prefix("policy.") {
                policy.push_str(&format!("{pk}={v}\n"));
                continue;
            }
            match k {
                "seed" => s.seed = num!(),
                "mode" => {
                    s.mode = match v {
                        "jobs" => Mode::Jobs,
                        "locks" => Mode::Locks,
                        _ => return Err(at("mode is jobs or locks")),
                    }
                }
                "duration_s" => s.duration_s = num!(),
                "n_masters" => s.n_masters = num!(),
                "n_slaves" => s.n_slaves = num!(),
                "slave_capacity_kb" => s.slave_capacity_kb = num!(),
                "slave_bw_mbps" => s.slave_bw_mbps = num!(),
                "n_clients" => s.n_clients = num!(),
                "runs" => s.runs = num!(),
                "streams_per_run" => s.streams_per_run = num!(),
                "skims_per_run" => s.skims_per_run = num!(),
                "runs_in_parallel" => s.runs_in_parallel = num!(),
                "events_per_stream" => s.events_per_stream = num!(),
                "hot_spot_zipf_s" => s.hot_spot_zipf_s = num!(),
                "epoch_s" => s.epoch_s = num!(),
                "file_kb" => s.file_kb = num!(),
                "chunk_kb" => s.chunk_kb = num!(),
                "reads_per_file" => s.reads_per_file = num!(),
                "cpu_ms_per_chunk" => s.cpu_ms_per_chunk = num!(),
                "think_ms" => s.think_ms = num!(),
                "archive_fraction" => s.archive_fraction = num!(),
                "corpus_noise" => s.corpus_noise = num!(),
                "net_latency_ms" => s.net_latency_ms = num!(),
                "timeout_ms" => s.timeout_ms = num!(),
                "max_retries" => s.max_retries = num!(),
                "lock_crashes" => s.lock_crashes = num!(),
                "tertiary_base_s" => s.tertiary.base = Duration::from_secs_f64(num!()),
                "tertiary_per_gib_s" => s.tertiary.per_gib = Duration::from_secs_f64(num!()),
                "fault" => s.faults.push(parse_fault(v).map_err(|m| at(&m))?),
                _ => return Err(at(&format!("unknown key {k}"))),
            }
        }
        if !policy.is_empty() {
            s.policy = PolicyConfig::parse(&policy).map_err(|e| invalid(e.to_string()))?;
        }
        s.faults.sort_by_key(|f| f.at_ms);
        s.validate()?;
        Ok(s)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "seed={}\nmode={}\nduration_s={}\nn_masters={}\nn_slaves={}\nslave_capacity_kb={}\n\
             slave_bw_mbps={}\nn_clients={}\nruns={}\nstreams_per_run={}\nskims_per_run={}\n\
             runs_in_parallel={}\nevents_per_stream={}\nhot_spot_zipf_s={}\nepoch_s={}\nfile_kb={}\n\
             chunk_kb={}\nreads_per_file={}\ncpu_ms_per_chunk={}\nthink_ms={}\narchive_fraction={}\n\
             corpus_noise={}\nnet_latency_ms={}\ntimeout_ms={}\nmax_retries={}\nlock_crashes={}\n\
             tertiary_base_s={}\ntertiary_per_gib_s={}\n",
            self.seed,
            match self.mode {
                Mode::Jobs => "jobs",
                Mode::Locks => "locks",
            },
            self.duration_s,
            self.n_masters,
            self.n_slaves,
            self.slave_capacity_kb,
            self.slave_bw_mbps,
            self.n_clients,
            self.runs,
            self.streams_per_run,
            self.skims_per_run,
            self.runs_in_parallel,
            self.events_per_stream,
            self.hot_spot_zipf_s,
            self.epoch_s,
            self.file_kb,
            self.chunk_kb,
            self.reads_per_file,
            self.cpu_ms_per_chunk,
            self.think_ms,
            self.archive_fraction,
            self.corpus_noise,
            self.net_latency_ms,
            self.timeout_ms,
            self.max_retries,
            self.lock_crashes,
            self.tertiary.base.as_secs_f64(),
            self.tertiary.per_gib.as_secs_f64(),
        );
        for l in self.policy.to_text().lines() {
            out.push_str(&format!("policy.{l}\n"));
        }
        for f in &self.faults {
            out.push_str(&format!("fault={f}\n"));
        }
        out
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let need = |ok: bool, m: &str| if ok { Ok(()) } else { Err(invalid(m)) };
        need(self.duration_s > 0, "duration_s must be positive")?;
        need(
            self.n_masters > 0 && self.n_slaves > 0,
            "need at least one master and one slave",
        )?;
        need(self.n_clients > 0, "need at least one client")?;
        need(self.runs > 0 && self.streams_per_run > 0, "need runs and streams")?;
        need(
            self.runs_in_parallel <= self.runs,
            "runs_in_parallel exceeds runs",
        )?;
        need(self.events_per_stream > 0, "events_per_stream must be positive")?;
        need(
            self.hot_spot_zipf_s > 0.0 && self.hot_spot_zipf_s.is_finite(),
            "hot_spot_zipf_s must be positive",
        )?;
        need(self.epoch_s > 0, "epoch_s must be positive")?;
        need(
            self.file_kb > 0 && self.chunk_kb > 0 && self.chunk_kb <= self.file_kb,
            "need 0 < chunk_kb <= file_kb",
        )?;
        need(self.reads_per_file > 0, "reads_per_file must be positive")?;
        need(
            (0.0..=1.0).contains(&self.archive_fraction),
            "archive_fraction must be in [0, 1]",
        )?;
        need(
            (0.0..=1.0).contains(&self.corpus_noise),
            "corpus_noise must be in [0, 1]",
        )?;
        need(self.slave_bw_mbps > 0, "slave_bw_mbps must be positive")?;
        need(self.timeout_ms > 0, "timeout_ms must be positive")?;
        self.policy.validate().map_err(|e| invalid(e.to_string()))?;
        for f in &self.faults {
            self.check_target(f)?;
        }
        Ok(())
    }

    pub fn client_names(&self) -> Vec<String> {
        match self.mode {
            Mode::Jobs => (0..self.n_clients)
                .map(|i| format!("client{i}"))
                .chain((0..self.runs_in_parallel).map(|i| format!("prod{i}")))
                .collect(),
            Mode::Locks => (0..self.n_clients)
                .map(|i| format!("hold{i}"))
                .chain((0..self.n_clients).map(|i| format!("wait{i}")))
                .collect(),
        }
    }

    pub fn slave_count(&self) -> u32 {
        self.n_masters * self.n_slaves
    }

    pub fn stream_file(run: u32, stream: u32) -> String {
        format!("/run{run}/s{stream}.db")
    }

    fn check_target(&self, f: &Fault) -> Result<(), ScenarioError> {
        let unknown = || Err(ScenarioError::UnknownTarget(f.to_string()));
        let slave = |t: &str| {
            t.strip_prefix("slave")
                .and_then(|n| n.parse::<u32>().ok())
                .is_some_and(|n| n < self.slave_count())
        };
        match f.kind {
            FaultKind::ClientCrash => {
                if !self.client_names().contains(&f.target) {
                    return unknown();
                }
            }
            FaultKind::SlaveOffline => {
                if !slave(&f.target) {
                    return unknown();
                }
            }
            FaultKind::PowerOutage => {
                if f.target != "all" || f.duration_ms(0).is_none() {
                    return Err(invalid(format!("{f}: expected `POWER_OUTAGE all <downtime_s>`")));
                }
            }
            FaultKind::PacketLoss => {
                let pct = f.num(0);
                if f.target != "all"
                    || !pct.is_some_and(|p| (0.0..=100.0).contains(&p))
                    || f.duration_ms(1).is_none()
                {
                    return Err(invalid(format!(
                        "{f}: expected `PACKET_LOSS all <pct> <duration_s>`"
                    )));
                }
            }
            FaultKind::TornWrite => {
                let path_ok = f.args.first().is_some_and(|p| {
                    (0..self.runs).any(|r| (0..self.streams_per_run).any(|s| Self::stream_file(r, s) == *p))
                });
                if !slave(&f.target) || !path_ok {
                    return unknown();
                }
                if f.args.get(1).and_then(|b| b.parse::<u32>().ok()).is_none() {
                    return Err(invalid(format!(
                        "{f}: expected `TORN_WRITE <slave> <path> <block>`"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn parse_fault(v: &str) -> Result<Fault, String> {
    let mut it = v.split_whitespace();
    let at: f64 = it
        .next()
        .and_then(|t| t.parse().ok())
        .filter(|t: &f64| *t >= 0.0 && t.is_finite())
        .ok_or("fault needs a non-negative time in seconds")?;
    let kind = it.next().ok_or("fault needs a kind")?;
    let kind = FaultKind::parse(kind).ok_or_else(|| format!("unknown fault kind {kind}"))?;
    let target = it.next().ok_or("fault needs a target")?.to_string();
    Ok(Fault {
        at_ms: (at * 1000.0).round() as u64,
        kind,
        target,
        args: it.map(String::from).collect(),
    })
}
