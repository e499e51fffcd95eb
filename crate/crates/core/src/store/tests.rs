use super::*;
use crate::lock::LockConfig;
use crate::model::{ComponentKind, DataClass, Locator};
use alloc::collections::BTreeSet;
use alloc::vec;

fn fed() -> FederationId {
    FederationId::new("run3", DataClass::Real).unwrap()
}

fn header(i: u64) -> EventHeader {
    EventHeader::new(i, 3).with_component(
        ComponentKind::Aod,
        Locator {
            file_id: 10,
            offset: i * 512,
            length: 512,
        },
    )
}

fn stream(store: &mut EventStore, path: &str, n: u64) -> CollectionId {
    let id = store
        .create_collection(path, CollectionKind::Stream, &mut NoLocks)
        .unwrap();
    store.append_events(id, (0..n).map(header)).unwrap();
    id
}

#[test]
fn twelve_thousand_precreated_collections_are_listable() {
    let mut s = EventStore::new(fed());
    for node in 0..100 {
        for c in 0..120 {
            s.create_collection(
                &format!("/pr/node{node:03}/coll{c:03}"),
                CollectionKind::Skim,
                &mut NoLocks,
            )
            .unwrap();
        }
    }
    assert_eq!(s.list("/pr/").len(), 12_000);
    assert_eq!(s.list("/pr/node042/").len(), 120);
}

#[test]
fn duplicate_path() {
    let mut s = EventStore::new(fed());
    stream(&mut s, "/a", 0);
    assert_eq!(
        s.create_collection("/a", CollectionKind::Stream, &mut NoLocks),
        Err(StoreError::DuplicatePath("/a".into()))
    );
    assert!(matches!(
        s.create_collection("nope", CollectionKind::Stream, &mut NoLocks),
        Err(StoreError::InvalidPath(_))
    ));
}

#[test]
fn appends_keep_dense_ordinals() {
    let mut s = EventStore::new(fed());
    let id = stream(&mut s, "/s", 3);
    assert_eq!(s.append_events(id, (3..5).map(header)), Ok(5));
    let events = s.read_collection("/s", &mut NoLocks).unwrap();
    assert_eq!(
        events.iter().map(|e| e.event_id).collect::<Vec<_>>(),
        [0, 1, 2, 3, 4]
    );
}

#[test]
fn append_to_skim_is_wrong_kind() {
    let mut s = EventStore::new(fed());
    stream(&mut s, "/s", 1);
    let skim = s.create_skim("/k", "/s", "sel", &[0], &mut NoLocks).unwrap();
    assert_eq!(
        s.append_events(skim, [header(9)]),
        Err(StoreError::WrongKind("/k".into()))
    );
}

#[test]
fn hundred_thousand_events_round_trip() {
    let mut s = EventStore::new(fed());
    let id = stream(&mut s, "/big", 0);
    let input: Vec<EventHeader> = (0..100_000).map(header).collect();
    s.append_events(id, input.clone()).unwrap();
    assert_eq!(s.read_collection("/big", &mut NoLocks).unwrap(), input);
}

#[test]
fn skim_dereference() {
    let mut s = EventStore::new(fed());
    stream(&mut s, "/s", 5);
    s.create_skim("/empty", "/s", "none", &[], &mut NoLocks).unwrap();
    assert!(s.read_collection("/empty", &mut NoLocks).unwrap().is_empty());
    s.create_skim("/even", "/s", "even", &[0, 2, 4], &mut NoLocks)
        .unwrap();
    let got = s.read_collection("/even", &mut NoLocks).unwrap();
    assert_eq!(got, vec![header(0), header(2), header(4)]);
}

#[test]
fn skim_bounds_and_sources() {
    let mut s = EventStore::new(fed());
    stream(&mut s, "/s", 5);
    assert_eq!(
        s.create_skim("/k", "/s", "x", &[5], &mut NoLocks),
        Err(StoreError::OrdinalOutOfRange { ordinal: 5, size: 5 })
    );
    assert_eq!(
        s.create_skim("/k", "/missing", "x", &[0], &mut NoLocks),
        Err(StoreError::NotFound("/missing".into()))
    );
    assert_eq!(
        s.create_skim("/k", "/s", "x", &[2, 1], &mut NoLocks),
        Err(StoreError::UnsortedSelection)
    );
    assert!(s.get("/k").is_none());
}

#[test]
fn dangling_pointer_on_read() {
    let mut s = EventStore::new(fed());
    stream(&mut s, "/s", 2);
    let bad = EventRef {
        federation: fed(),
        collection_path: "/s".into(),
        ordinal: 7,
    };
    s.import_skim("/bad", "x", vec![bad.clone()], &mut NoLocks)
        .unwrap();
    assert_eq!(
        s.read_collection("/bad", &mut NoLocks),
        Err(StoreError::DanglingPointer(bad))
    );
}

#[test]
fn read_is_independent_of_tree_shape() {
    let mut split = EventStore::with_node_limit(fed(), 4);
    let mut flat = EventStore::new(fed());
    for s in [&mut split, &mut flat] {
        for i in 0..2_000u64 {
            let id = s
                .create_collection(&format!("/r/c{i}"), CollectionKind::Stream, &mut NoLocks)
                .unwrap();
            s.append_events(id, (i..i + 3).map(header)).unwrap();
        }
    }
    assert!(split.namespace().node_count() > flat.namespace().node_count());
    for i in (0..2_000u64).step_by(37) {
        let p = format!("/r/c{i}");
        assert_eq!(
            split.read_collection(&p, &mut NoLocks).unwrap(),
            flat.read_collection(&p, &mut NoLocks).unwrap()
        );
    }
    assert_eq!(split.list("/"), flat.list("/"));
}

#[test]
fn skim_creation_takes_update_lock_through_lock_table() {
    let mut table = LockTable::new(LockConfig {
        record_history: true,
        ..LockConfig::default()
    });
    let job = ClientId::from("skimjob");
    let user = ClientId::from("user");
    table.connect(&job, Timestamp(0)).unwrap();
    table.connect(&user, Timestamp(0)).unwrap();
    let mut s = EventStore::new(fed());
    stream(&mut s, "/r3/streams/A", 10);

    let resource = s.metadata_resource("/r3/streams/skimX").unwrap();
    s.create_skim(
        "/r3/streams/skimX",
        "/r3/streams/A",
        "X",
        &[1, 2],
        &mut TableLocks::new(&mut table, job.clone(), Timestamp(1)),
    )
    .unwrap();
    // taken and released again
    assert!(table.holders(&resource).is_empty());
    assert_eq!(table.stats()[&resource].grants, 1);

    // a reader holding the node blocks the writer, which times out cleanly
    table
        .acquire(&user, &resource, LockMode::Read, Timestamp(2))
        .unwrap();
    let err = s.create_skim(
        "/r3/streams/skimY",
        "/r3/streams/A",
        "Y",
        &[3],
        &mut TableLocks::new(&mut table, job.clone(), Timestamp(3)),
    );
    assert_eq!(err, Err(StoreError::LockTimeout(resource.clone())));
    assert!(s.get("/r3/streams/skimY").is_none());
    assert_eq!(table.queue_len(&resource), 0);
    // readers do not block readers
    let read = s.read_collection(
        "/r3/streams/skimX",
        &mut TableLocks::new(&mut table, job, Timestamp(4)),
    );
    assert_eq!(read.unwrap().len(), 2);
}

#[test]
fn lock_hold_work_is_independent_of_source_size() {
    let mut visits = BTreeSet::new();
    for n in [10u64, 100_000] {
        let mut s = EventStore::new(fed());
        stream(&mut s, "/r/src", n);
        let ordinals: Vec<u64> = (0..n).collect();
        let before = s.critical_section_visits();
        s.create_skim("/r/skim", "/r/src", "all", &ordinals, &mut NoLocks)
            .unwrap();
        visits.insert(s.critical_section_visits() - before);
    }
    assert_eq!(visits.len(), 1, "lock-held work varied: {visits:?}");
}
