//! Acceptance criteria. Each test prints one `[PASS]`/`[FAIL]` line and
//! then asserts, so `cargo test --test acceptance -- --nocapture` shows the
//! full table.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use petastore::files::{pack, unpack};
use petastore::harness::corpus;
use petastore::harness::scenario::Scenario;
use petastore::harness::trace::{parse_trace, TraceEvent};
use petastore::harness::{run, Outcome};
use petastore::server::lock::LockService;
use petastore::server::tcp::{spawn_lock_server, LockClient};
use petastore_core::bridge::{Bridge, FederationStatus};
use petastore_core::conditions::{sweep, ConditionKey, ConditionStore};
use petastore_core::lock::{LockConfig, LockTable};
use petastore_core::storage::CodecId;
use petastore_core::store::{CollectionKind, EventStore, NoLocks};
use petastore_core::{
    decode_event_header, encode_event_header, ComponentKind, DataClass, EventHeader, EventRef, FederationId,
    Locator, Timestamp,
};

fn verdict(n: u32, name: &str, ok: bool, detail: String) {
    println!("[{}] {n:>2} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} ({name}) failed: {detail}");
}

fn scenario(text: &str) -> Scenario {
    Scenario::parse(text).expect("valid scenario")
}

fn run_ok(s: &Scenario) -> (Outcome, Vec<TraceEvent>) {
    let o = run(s).expect("scenario runs");
    let ev = parse_trace(&o.trace).unwrap();
    (o, ev)
}

// ---- 1 ---------------------------------------------------------------------

#[test]
fn c01_stream_scaling() {
    let t = Instant::now();
    let base = "duration_s=30\nseed=11\n";
    let (four, _) = run_ok(&scenario(&format!("{base}streams_per_run=4\n")));
    let (twenty, _) = run_ok(&scenario(&format!("{base}streams_per_run=20\n")));
    let files = twenty.report.open_files_peak as f64 / four.report.open_files_peak as f64;
    let conns = twenty.report.open_connections_peak as f64 / four.report.open_connections_peak as f64;
    let elapsed = t.elapsed();
    let ok = (4.0..=6.0).contains(&files)
        && (4.0..=6.0).contains(&conns)
        && four.violations.is_empty()
        && twenty.violations.is_empty()
        && elapsed < Duration::from_secs(60);
    verdict(
        1,
        "stream scaling",
        ok,
        format!(
            "open files {}/{} = {files:.2}, connections {}/{} = {conns:.2}, {elapsed:.1?}",
            twenty.report.open_files_peak,
            four.report.open_files_peak,
            twenty.report.open_connections_peak,
            four.report.open_connections_peak
        ),
    );
}

// ---- 2 ---------------------------------------------------------------------

#[test]
fn c02_namespace_limit() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let fed = FederationId::new("run2", DataClass::Real).unwrap();
    let mut store = EventStore::with_node_limit(fed, 4);
    let mut paths = BTreeSet::new();
    while paths.len() < 10_000 {
        // Mix of wide flat directories and deeper trees.
        let p = match rng.gen_range(0..3) {
            0 => format!("/flat/c{}", rng.gen_range(0..1_000_000)),
            1 => format!(
                "/run{}/skims/s{}",
                rng.gen_range(0..20),
                rng.gen_range(0..100_000)
            ),
            _ => format!(
                "/d{}/e{}/f{}",
                rng.gen_range(0..5),
                rng.gen_range(0..5),
                rng.gen_range(0..100_000)
            ),
        };
        if paths.insert(p.clone()) {
            store
                .create_collection(&p, CollectionKind::Stream, &mut NoLocks)
                .unwrap();
        }
    }
    let resolved = paths.iter().filter(|p| store.handle(p).is_some()).count();
    let listed: BTreeSet<String> = store.list("/").into_iter().collect();
    let max_entries = store.namespace().max_entry_count();
    let elapsed = t.elapsed();
    let ok = resolved == 10_000 && listed == paths && max_entries <= 4 && elapsed < Duration::from_secs(10);
    verdict(
        2,
        "namespace limit",
        ok,
        format!(
            "{resolved}/10000 resolve, listing matches: {}, max node entries {max_entries} over {} nodes, {elapsed:.1?}",
            listed == paths,
            store.namespace().node_count()
        ),
    );
}

// ---- 3 ---------------------------------------------------------------------

#[test]
fn c03_orphan_lock_recovery() {
    let t = Instant::now();
    let s = scenario("mode=locks\nn_clients=50\nlock_crashes=50\nduration_s=60\nseed=3\n");
    let deadline = LockConfig::default().deadline().as_millis() as u64;
    let (o, ev) = run_ok(&s);
    let mut crashed_at = BTreeMap::new();
    let mut reaped_at = BTreeMap::new();
    let mut waiting = BTreeSet::new();
    let mut granted_waiters = BTreeSet::new();
    for e in &ev {
        match e.event.as_str() {
            "CRASH" => {
                crashed_at.insert(e.arg("session").unwrap().to_string(), e.time);
            }
            "RELEASED" if e.num("reaped") == Some(1) => {
                reaped_at.insert(e.arg("client").unwrap().to_string(), e.time);
            }
            "QUEUED" => {
                waiting.insert(e.arg("client").unwrap().to_string());
            }
            "GRANTED" if e.num("queued") == Some(1) => {
                granted_waiters.insert(e.arg("client").unwrap().to_string());
            }
            _ => {}
        }
    }
    let within = crashed_at
        .iter()
        .filter(|(c, &at)| reaped_at.get(*c).is_some_and(|&r| r > at && r - at <= deadline))
        .count();
    let audit = ev.iter().find(|e| e.event == "AUDIT").unwrap();
    let elapsed = t.elapsed();
    let ok = crashed_at.len() == 50
        && within == 50
        && waiting.len() == 50
        && granted_waiters == waiting
        && audit.num("sessions") == audit.num("live")
        && o.violations.is_empty()
        && elapsed < Duration::from_secs(30);
    verdict(
        3,
        "orphan lock recovery",
        ok,
        format!(
            "{within}/{} reaped within {deadline} ms, {}/{} queued granted, sessions={} live={}, {elapsed:.1?}",
            crashed_at.len(),
            granted_waiters.len(),
            waiting.len(),
            audit.arg("sessions").unwrap(),
            audit.arg("live").unwrap()
        ),
    );
}

// ---- 4 ---------------------------------------------------------------------

fn table_state(t: &LockTable) -> String {
    let sessions: Vec<_> = t.sessions().map(|(c, a, b)| format!("{c:?}{a:?}{b:?}")).collect();
    format!(
        "{sessions:?}|{:?}|{:?}|{:?}",
        t.entries(),
        t.stats(),
        t.counters()
    )
}

#[test]
fn c04_connection_limit() {
    let t0 = Instant::now();
    let mut svc = LockService::new(LockConfig::default());
    let now = Timestamp(1_000);
    for i in 0..1024 {
        assert_eq!(
            svc.handle_line(&format!("CONN c{i}"), now).reply.to_string(),
            "OK"
        );
    }
    for i in 0..16 {
        svc.handle_line(&format!("LOCK c{i} /meta/r{} U", i % 4), now);
    }
    let before = table_state(&svc.table);
    let sent = Timestamp(2_000);
    let h = svc.handle_line("CONN c1024", sent);
    let reply = h.reply.to_string();
    // The service answers in the same simulated instant it receives.
    let sim_latency = 0u64;
    let unchanged = table_state(&svc.table) == before && svc.table.session_count() == 1024;

    // The same over a real socket, timed on the wall clock.
    let server = spawn_lock_server("127.0.0.1:0", LockConfig::default()).unwrap();
    let mut c = LockClient::connect(server.addr()).unwrap();
    for i in 0..1024 {
        assert_eq!(c.send(&format!("CONN c{i}")).unwrap(), "OK");
    }
    let mut tcp_replies = BTreeSet::new();
    let mut times = Vec::new();
    for _ in 0..5 {
        let t = Instant::now();
        tcp_replies.insert(c.send("CONN c1024").unwrap());
        times.push(t.elapsed());
    }
    let tcp_latency = median(times);
    let tcp_reply = tcp_replies.into_iter().collect::<Vec<_>>().join("|");
    let still_ok = c.send("PING c0").unwrap();
    server.shutdown();

    let elapsed = t0.elapsed();
    let ok = reply == "ERR REJECTED_AT_CAPACITY"
        && tcp_reply == reply
        && unchanged
        && sim_latency <= 100
        && tcp_latency < Duration::from_millis(100)
        && still_ok == "OK"
        && elapsed < Duration::from_secs(10);
    verdict(
        4,
        "connection limit",
        ok,
        format!(
            "1025th connect -> `{reply}` after {sim_latency} ms simulated, `{tcp_reply}` in {tcp_latency:.1?} \
             (median) over TCP; sessions/locks/stats/counters unchanged: {unchanged}; server still serves: {still_ok}; \
             {elapsed:.1?}"
        ),
    );
}

// ---- 5 ---------------------------------------------------------------------

/// A record as the oracle sees it.
#[derive(Clone)]
struct Rec {
    path: String,
    ctype: String,
    rev: String,
    begin: u64,
    end: u64,
    at: u64,
    origin: (String, u64),
    blob: Vec<u8>,
}

/// Latest-inserted visible record covering `t`; ties on insertion time go
/// to the larger origin.
fn oracle<'a>(recs: &'a [Rec], path: &str, ctype: &str, rev: &str, t: u64, as_of: u64) -> Option<&'a Rec> {
    recs.iter()
        .filter(|r| r.path == path && r.ctype == ctype && r.rev == rev)
        .filter(|r| r.at <= as_of && r.begin <= t && t < r.end)
        .max_by(|a, b| (a.at, &a.origin).cmp(&(b.at, &b.origin)))
}

fn random_store(rng: &mut ChaCha8Rng, tag: &str, n: usize, t_start: u64) -> (ConditionStore, Vec<Rec>) {
    let mut store = ConditionStore::new(tag);
    let mut recs = Vec::with_capacity(n);
    let mut at = t_start;
    let span = rng.gen_range(100..100_000u64);
    for i in 0..n {
        // Equal insertion times happen; the store's counter breaks the tie.
        at += rng.gen_range(0..3);
        let path = ["/calib/drift", "/calib/gain", "/align/svt"][rng.gen_range(0..3)];
        let ctype = ["v1", "v2"][rng.gen_range(0..2)];
        let rev = ["default", "reproc"][rng.gen_range(0..2)];
        let begin = rng.gen_range(0..span);
        let end = begin + rng.gen_range(1..=span / 10 + 1);
        let blob = format!("{tag}:{i}").into_bytes();
        let seq = store
            .insert_blob(
                ConditionKey::new(path, ctype).unwrap(),
                begin,
                end,
                Timestamp(at),
                rev,
                &blob,
            )
            .unwrap();
        recs.push(Rec {
            path: path.into(),
            ctype: ctype.into(),
            rev: rev.into(),
            begin,
            end,
            at,
            origin: (tag.into(), seq),
            blob,
        });
    }
    (store, recs)
}

fn probe_matches(store: &ConditionStore, recs: &[Rec], rng: &mut ChaCha8Rng) -> bool {
    let path = ["/calib/drift", "/calib/gain", "/align/svt"][rng.gen_range(0..3)];
    let ctype = ["v1", "v2"][rng.gen_range(0..2)];
    let rev = ["default", "reproc"][rng.gen_range(0..2)];
    let max_t = recs.iter().map(|r| r.end).max().unwrap_or(1) + 5;
    let t = rng.gen_range(0..max_t);
    let last = recs.iter().map(|r| r.at).max().unwrap_or(0);
    let as_of = if rng.gen_bool(0.3) {
        u64::MAX
    } else {
        rng.gen_range(0..=last + 1)
    };
    let want = oracle(recs, path, ctype, rev, t, as_of);
    let got = store.lookup(&ConditionKey::new(path, ctype).unwrap(), t, Timestamp(as_of), rev);
    match (want, got) {
        (None, Err(_)) => true,
        (Some(w), Ok(g)) => {
            (g.origin.tag.as_str(), g.origin.seq) == (w.origin.0.as_str(), w.origin.1)
                && store.payload(g.payload) == Some(&w.blob[..])
        }
        _ => false,
    }
}

#[test]
fn c05_bitemporal_oracle() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut probes, mut matched) = (0u64, 0u64);
    for s in 0..1000 {
        // Log-uniform sizes up to 10^4 records.
        let n = 10f64.powf(rng.gen_range(0.0..=4.0)).round() as usize;
        let (store, recs) = random_store(&mut rng, &format!("s{s}"), n, 1);
        for _ in 0..100 {
            probes += 1;
            matched += u64::from(probe_matches(&store, &recs, &mut rng));
        }
    }
    let elapsed = t.elapsed();
    let ok = matched == probes && elapsed < Duration::from_secs(120);
    verdict(
        5,
        "bi-temporal oracle",
        ok,
        format!("{matched}/{probes} probes over 1000 stores match, {elapsed:.1?}"),
    );
}

// ---- 6 ---------------------------------------------------------------------

fn median(mut v: Vec<Duration>) -> Duration {
    v.sort();
    v[v.len() / 2]
}

/// Median insert and lookup latency with `n` records on one key, timed in
/// batches of 16 operations.
fn latencies(n: usize, rng: &mut ChaCha8Rng) -> (Duration, Duration) {
    const BATCH: usize = 16;
    let key = ConditionKey::new("/calib/drift", "v").unwrap();
    let mut store = ConditionStore::new("lat");
    let span = 10_000_000u64;
    let mut inserts = Vec::new();
    let measured_from = n.saturating_sub(4_096);
    let mut i = 0;
    while i < n {
        let t = Instant::now();
        for _ in 0..BATCH {
            let begin = rng.gen_range(0..span);
            let len = rng.gen_range(1..50_000);
            store
                .insert_blob(
                    key.clone(),
                    begin,
                    begin + len,
                    Timestamp(i as u64 + 1),
                    "default",
                    b"payload",
                )
                .unwrap();
            i += 1;
        }
        if i > measured_from {
            inserts.push(t.elapsed() / BATCH as u32);
        }
    }
    let mut lookups = Vec::new();
    for _ in 0..512 {
        let probes: Vec<(u64, u64)> = (0..BATCH)
            .map(|_| (rng.gen_range(0..span), rng.gen_range(1..=n as u64 + 1)))
            .collect();
        let t = Instant::now();
        for (x, as_of) in probes {
            let _ = std::hint::black_box(store.lookup(&key, x, Timestamp(as_of), "default"));
        }
        lookups.push(t.elapsed() / BATCH as u32);
    }
    (median(inserts), median(lookups))
}

#[test]
fn c06_sublinear_scaling() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let _ = latencies(1_000, &mut rng);
    // Small and big runs alternate so that drift in machine load hits both
    // sides alike; each side reports its median round.
    const ROUNDS: usize = 5;
    let (mut small, mut big) = (Vec::new(), Vec::new());
    for _ in 0..ROUNDS {
        small.push(latencies(1_000, &mut rng));
        big.push(latencies(100_000, &mut rng));
    }
    let ins_small = median(small.iter().map(|r| r.0).collect());
    let look_small = median(small.iter().map(|r| r.1).collect());
    let ins_big = median(big.iter().map(|r| r.0).collect());
    let look_big = median(big.iter().map(|r| r.1).collect());
    let ins_ratio = ins_big.as_secs_f64() / ins_small.as_secs_f64();
    let look_ratio = look_big.as_secs_f64() / look_small.as_secs_f64();
    let elapsed = t.elapsed();
    let ok = ins_ratio <= 5.0 && look_ratio <= 5.0 && elapsed < Duration::from_secs(120);
    verdict(
        6,
        "sub-linear scaling",
        ok,
        format!(
            "insert {ins_small:.2?} -> {ins_big:.2?} ({ins_ratio:.2}x), lookup {look_small:.2?} -> {look_big:.2?} \
             ({look_ratio:.2}x) from 10^3 to 10^5 records, median of {ROUNDS} rounds, {elapsed:.1?}"
        ),
    );
}

// ---- 7 ---------------------------------------------------------------------

#[test]
fn c07_sweep_union() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut all_ok, mut probes, mut remerged) = (true, 0u64, 0usize);
    for round in 0..20 {
        // A and B interleave in insertion time, and collide on some.
        let (a, ra) = random_store(&mut rng, &format!("a{round}"), 2_000, 1);
        let (b, rb) = random_store(&mut rng, &format!("b{round}"), 2_000, 1);
        let (mut c, rc) = random_store(&mut rng, &format!("c{round}"), 200, 1);
        let order_ab = rng.gen_bool(0.5);
        let (first, second) = if order_ab { (&a, &b) } else { (&b, &a) };
        let merged = sweep(first, &mut c) + sweep(second, &mut c);
        all_ok &= merged == ra.len() + rb.len();
        remerged += sweep(&a, &mut c) + sweep(&b, &mut c);
        let union: Vec<Rec> = ra.iter().chain(&rb).chain(&rc).cloned().collect();
        for _ in 0..500 {
            probes += 1;
            all_ok &= probe_matches(&c, &union, &mut rng);
        }
    }
    let elapsed = t.elapsed();
    let ok = all_ok && remerged == 0 && elapsed < Duration::from_secs(30);
    verdict(
        7,
        "sweep union and idempotence",
        ok,
        format!("{probes} probes match the union oracle: {all_ok}, repeated sweeps merged {remerged}, {elapsed:.1?}"),
    );
}

// ---- 8 ---------------------------------------------------------------------

/// Order-0 entropy, written independently of the corpus module.
fn entropy(data: &[u8]) -> f64 {
    let mut hist = BTreeMap::<u8, usize>::new();
    for b in data {
        *hist.entry(*b).or_default() += 1;
    }
    let n = data.len() as f64;
    hist.values().map(|&c| c as f64 / n).map(|p| -p * p.log2()).sum()
}

#[test]
fn c08_compression() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut round_trips, mut detected, mut flips) = (0, 0, 0);
    for i in 0..1000 {
        let len = rng.gen_range(0..150_000);
        let data: Vec<u8> = match i % 3 {
            0 => (0..len).map(|_| rng.gen()).collect(),
            1 => (0..len).map(|_| b"ACGT"[rng.gen_range(0..4)]).collect(),
            _ => corpus::generate(i, len, rng.gen_range(0.0..1.0)),
        };
        let (_, image) = pack(&data, CodecId::REFERENCE_LZ).unwrap();
        round_trips += usize::from(unpack(&image).unwrap() == data);
        let mut bad = image.clone();
        let bit = rng.gen_range(0..bad.len() * 8);
        bad[bit / 8] ^= 1 << (bit % 8);
        flips += 1;
        detected += usize::from(unpack(&bad).is_err());
    }

    // Calibrate the corpus against the test's own entropy measure: the
    // noise level at which order-0 entropy reaches 4 bits/byte bounds an
    // entropy coder at 2:1.
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..20 {
        let mid = (lo + hi) / 2.0;
        if entropy(&corpus::generate(80, 1 << 18, mid)) < 4.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let noise = hi;
    let mut logical = 0u64;
    let mut physical = 0u64;
    for seed in 0..8 {
        let data = corpus::generate(1000 + seed, 1 << 20, noise);
        let (f, _) = pack(&data, CodecId::REFERENCE_LZ).unwrap();
        logical += f.logical_size;
        physical += f.physical_size;
    }
    let ratio = logical as f64 / physical as f64;
    let elapsed = t.elapsed();
    let ok = round_trips == 1000 && detected == flips && ratio >= 2.0 && elapsed < Duration::from_secs(60);
    verdict(
        8,
        "compression",
        ok,
        format!(
            "{round_trips}/1000 round trips, {detected}/{flips} bit flips detected, corpus noise {noise:.4} \
             (built-in default {:.4}) gives {ratio:.3}:1, {elapsed:.1?}",
            corpus::DEFAULT_NOISE
        ),
    );
}

// ---- 9 ---------------------------------------------------------------------

#[test]
fn c09_failover() {
    let t = Instant::now();
    let s = scenario(
        "duration_s=120\nseed=9\nn_slaves=3\nslave_capacity_kb=1024\n\
         policy.replicate_threshold=5\npolicy.hot_load_threshold=0\n\
         fault=60 SLAVE_OFFLINE slave1\n",
    );
    let (o, ev) = run_ok(&s);
    // Hot files: the most opened ones before the fault.
    let mut opens = BTreeMap::<u64, usize>::new();
    let mut holders = BTreeMap::<u64, BTreeSet<String>>::new();
    for e in ev.iter().filter(|e| e.time < 60_000) {
        match e.event.as_str() {
            "GO" => *opens.entry(e.num("file").unwrap()).or_default() += 1,
            "PLACE" | "LAND" => {
                holders
                    .entry(e.num("file").unwrap())
                    .or_default()
                    .insert(e.arg("slave").unwrap().into());
            }
            "PURGE" => {
                holders
                    .entry(e.num("file").unwrap())
                    .or_default()
                    .remove(e.arg("slave").unwrap());
            }
            _ => {}
        }
    }
    let mut hot: Vec<(usize, u64)> = opens.iter().map(|(&f, &n)| (n, f)).collect();
    hot.sort_unstable_by(|a, b| b.cmp(a));
    let hot: Vec<u64> = hot.iter().take(4).map(|&(_, f)| f).collect();
    let replicated = hot
        .iter()
        .filter(|f| holders.get(f).is_some_and(|h| h.len() >= 2))
        .count();
    let purge_violations = o.violations.iter().filter(|v| v.check == "purge_safety").count();
    let elapsed = t.elapsed();
    let ok = o.report.availability >= 0.96
        && purge_violations == 0
        && o.violations.is_empty()
        && replicated == hot.len()
        && elapsed < Duration::from_secs(60);
    verdict(
        9,
        "failover availability",
        ok,
        format!(
            "availability {:.4} ({} ok / {} failed), {replicated}/{} hot files with >= 2 copies at the fault, \
             {purge_violations} purge violations, {} purges, {elapsed:.1?}",
            o.report.availability,
            o.report.reads_ok,
            o.report.reads_failed,
            hot.len(),
            o.report.purge_count
        ),
    );
}

// ---- 10 --------------------------------------------------------------------

#[test]
fn c10_deep_copy() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut bridge = Bridge::new();
    let sources: Vec<FederationId> = (0..3)
        .map(|r| FederationId::new(format!("run{r}"), DataClass::Real).unwrap())
        .collect();
    let mut streams = Vec::new();
    for (r, f) in sources.iter().enumerate() {
        bridge.register_federation(f.clone()).unwrap();
        for s in 0..5 {
            let path = format!("/run{r}/s{s}");
            let store = bridge.store_mut(f).unwrap();
            let id = store
                .create_collection(&path, CollectionKind::Stream, &mut NoLocks)
                .unwrap();
            let n = rng.gen_range(20..80u64);
            store
                .append_events(
                    id,
                    (0..n).map(|e| {
                        EventHeader::new(r as u64 * 1_000_000 + s * 1000 + e, r as u32).with_component(
                            ComponentKind::Aod,
                            Locator {
                                file_id: s + 1,
                                offset: e * 100,
                                length: 100,
                            },
                        )
                    }),
                )
                .unwrap();
            bridge.bind_collection(&path, f, CollectionKind::Stream).unwrap();
            streams.push((f.clone(), path, n));
        }
    }
    // Skims, some pointing into other federations.
    let mut skims = Vec::new();
    for k in 0..100 {
        let home = sources.choose(&mut rng).unwrap().clone();
        let pointers: Vec<EventRef> = (0..rng.gen_range(1..40))
            .map(|_| {
                let (f, p, n) = streams.choose(&mut rng).unwrap();
                EventRef {
                    federation: f.clone(),
                    collection_path: p.clone(),
                    ordinal: rng.gen_range(0..*n),
                }
            })
            .collect();
        let path = format!("/{}/skims/k{k}", home.run_label());
        bridge
            .store_mut(&home)
            .unwrap()
            .import_skim(&path, "sel", pointers.clone(), &mut NoLocks)
            .unwrap();
        bridge
            .bind_collection(&path, &home, CollectionKind::Skim)
            .unwrap();
        skims.push((path, pointers));
    }
    // Dereference oracle: follow each pointer by hand, before copying.
    let expected: Vec<Vec<EventHeader>> = skims
        .iter()
        .map(|(_, ptrs)| {
            ptrs.iter()
                .map(|p| {
                    bridge
                        .store(&p.federation)
                        .unwrap()
                        .stream_event(&p.collection_path, p.ordinal)
                        .unwrap()
                        .clone()
                })
                .collect()
        })
        .collect();
    let mut copies = Vec::new();
    for (k, (path, _)) in skims.iter().enumerate() {
        let target = FederationId::new(format!("export{k}"), DataClass::Real).unwrap();
        bridge.register_federation(target.clone()).unwrap();
        copies.push((
            target.clone(),
            bridge.deep_copy(path, &target, &mut NoLocks).unwrap(),
        ));
    }
    // With every source offline, each copy must still read in full.
    for f in &sources {
        bridge.set_status(f, FederationStatus::Offline).unwrap();
    }
    let mut self_contained = 0;
    let mut equal = 0;
    for ((target, new_path), want) in copies.iter().zip(&expected) {
        let store = bridge.store(target).unwrap();
        let internal = store.collections().all(|c| match &c.body {
            petastore_core::store::CollectionBody::Stream(_) => true,
            petastore_core::store::CollectionBody::Skim { pointers, .. } => pointers
                .iter()
                .all(|p| p.federation == *target && store.dereference(p).is_ok()),
        });
        self_contained += usize::from(internal);
        equal += usize::from(bridge.materialize(new_path).ok().as_ref() == Some(want));
    }
    let elapsed = t.elapsed();
    let ok = self_contained == 100 && equal == 100 && elapsed < Duration::from_secs(30);
    verdict(
        10,
        "deep copy",
        ok,
        format!("{self_contained}/100 copies self-contained, {equal}/100 equal the dereference oracle, {elapsed:.1?}"),
    );
}

// ---- 11 --------------------------------------------------------------------

#[test]
fn c11_header_budget() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut sizes = Vec::with_capacity(1_000_000);
    let mut round_trips = 0usize;
    for i in 0..1_000_000u32 {
        let mut h = EventHeader::new(rng.gen(), rng.gen());
        for k in ComponentKind::ALL {
            if rng.gen_bool(0.5) {
                h = h.with_component(
                    k,
                    Locator {
                        file_id: rng.gen(),
                        offset: rng.gen(),
                        length: rng.gen(),
                    },
                );
            }
        }
        let bytes = encode_event_header(&h);
        if i % 100 == 0 {
            round_trips += usize::from(decode_event_header(&bytes).as_ref() == Ok(&h));
        }
        sizes.push(bytes.len());
    }
    sizes.sort_unstable();
    let (max, med) = (*sizes.last().unwrap(), sizes[sizes.len() / 2]);
    let elapsed = t.elapsed();
    let ok = max <= 512 && med <= 200 && round_trips == 10_000 && elapsed < Duration::from_secs(30);
    verdict(
        11,
        "event header budget",
        ok,
        format!("10^6 headers: max {max} B, median {med} B, {round_trips}/10000 sampled round trips, {elapsed:.1?}"),
    );
}

// ---- 12 --------------------------------------------------------------------

#[test]
fn c12_determinism() {
    let t = Instant::now();
    let texts = [
        "duration_s=60\nseed=12\nn_masters=2\nfault=10 TORN_WRITE slave1 /run0/s0.db 0\n\
         fault=15 CLIENT_CRASH client2 5\nfault=20 PACKET_LOSS all 15 10\nfault=40 POWER_OUTAGE all 5\n\
         fault=30 SLAVE_OFFLINE slave4 10\n",
        "mode=locks\nn_clients=20\nlock_crashes=10\nduration_s=45\nseed=12\n",
    ];
    let mut identical = 0;
    let mut lines = 0;
    for text in texts {
        let s = scenario(text);
        let a = run(&s).unwrap().trace;
        let b = run(&s).unwrap().trace;
        identical += usize::from(a == b);
        lines += a.lines().count();
    }
    let elapsed = t.elapsed();
    let ok = identical == texts.len();
    verdict(
        12,
        "determinism",
        ok,
        format!(
            "{identical}/{} scenarios rerun byte-identical ({lines} trace lines), {elapsed:.1?}",
            texts.len()
        ),
    );
}
