use std::thread;
use std::time::Duration;

use petastore::files::pack;
use petastore::server::redir::Cluster;
use petastore::server::tcp::{open_and_read, spawn_lock_server, spawn_redir_cluster, LockClient};
use petastore_core::lock::LockConfig;
use petastore_core::redirect::policy::PolicyConfig;
use petastore_core::redirect::{Master, SlaveId};
use petastore_core::storage::{client_decompress, CodecId, CodecRegistry, LatencyModel};

#[test]
fn lock_server_queues_pushes_grants_and_reaps() {
    let cfg = LockConfig {
        heartbeat_interval: Duration::from_millis(300),
        max_connections: 2,
        ..LockConfig::default()
    };
    let h = spawn_lock_server("127.0.0.1:0", cfg).unwrap();
    let mut a = LockClient::connect(h.addr()).unwrap();
    let mut b = LockClient::connect(h.addr()).unwrap();
    assert_eq!(a.send("CONN a").unwrap(), "OK");
    assert_eq!(b.send("CONN b").unwrap(), "OK");
    assert_eq!(b.send("CONN c").unwrap(), "ERR REJECTED_AT_CAPACITY");
    assert_eq!(a.send("LOCK a /meta U").unwrap(), "GRANT");
    assert_eq!(b.send("LOCK b /meta R").unwrap(), "QUEUE 1");
    assert_eq!(a.send("UNLK a /meta").unwrap(), "OK");
    assert_eq!(b.recv().unwrap(), "GRANT /meta");
    assert_eq!(a.send("bogus").unwrap(), "ERR BAD_REQUEST");

    // `a` holds a lock and goes silent; `b` keeps pinging and gets it once
    // the sweeper reaps `a`.
    assert_eq!(b.send("UNLK b /meta").unwrap(), "OK");
    assert_eq!(a.send("LOCK a /meta U").unwrap(), "GRANT");
    assert_eq!(b.send("LOCK b /meta U").unwrap(), "QUEUE 1");
    let mut granted = false;
    for _ in 0..80 {
        thread::sleep(Duration::from_millis(50));
        let r = b.send("PING b").unwrap();
        let r = if r.starts_with("GRANT ") {
            granted = true;
            b.recv().unwrap()
        } else {
            r
        };
        assert_eq!(r, "OK");
        if granted {
            break;
        }
    }
    assert!(granted);
    assert_eq!(a.send("PING a").unwrap(), "ERR NO_SESSION");
    h.shutdown();
}

#[test]
fn redirected_read_over_sockets() {
    let data = petastore::harness::corpus::generate(9, 100_000, 0.3);
    let (_, image) = pack(&data, CodecId::REFERENCE_LZ).unwrap();
    let cluster = Cluster::new(Master::new("m", PolicyConfig::default(), LatencyModel::default()));
    let (h, shared) =
        spawn_redir_cluster("127.0.0.1", cluster, 2, 1 << 30, Duration::from_millis(50)).unwrap();
    shared
        .lock()
        .unwrap()
        .add_file("/run1/s0.db", 1, image, true, Some(SlaveId(1)))
        .unwrap();
    let frames = open_and_read(
        h.addrs[0],
        "/run1/s0.db",
        1,
        40_000,
        30_000,
        Duration::from_secs(5),
    )
    .unwrap();
    let got = client_decompress(&frames, &CodecRegistry::default(), 40_000, 30_000).unwrap();
    assert_eq!(got, &data[40_000..70_000]);
    let err = open_and_read(h.addrs[0], "/missing", 2, 0, 1, Duration::from_secs(1)).unwrap_err();
    assert!(
        err.to_string().contains("NOT_FOUND") || err.to_string().contains("refused"),
        "{err}"
    );
    h.shutdown();
}
