//! On-disk layout of a bridge catalog and its federation stores.
//!
//! ```text
//! <root>/federations.list            <run_label>:<data_class>\t<ONLINE|OFFLINE>
//! <root>/bridge.map                  <path>\t<run_label>:<data_class>\t<STREAM|SKIM>
//! <root>/feds/<run>_<class>/namespace.journal   <id>\t<kind>\t<path>, creation order
//! <root>/feds/<run>_<class>/segments/<id>.pst   one stored file per collection
//! ```
//!
//! Segment payloads are big-endian binary. A stream is `count(8)` then
//! `len(2) | encoded header` per event; a skim is `count(8) | name` then
//! `fed | path | ordinal(8)` per pointer, strings as `len(2) | bytes`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use petastore_core::bridge::{Bridge, BridgeEntry, FederationStatus};
use petastore_core::storage::CodecId;
use petastore_core::store::{CollectionBody, CollectionKind, EventStore, NoLocks};
use petastore_core::{decode_event_header, encode_event_header, EventRef, FederationId};

use crate::files::{read_packed, write_atomic, write_packed};

pub const FEDERATIONS_FILE: &str = "federations.list";
pub const BRIDGE_MAP: &str = "bridge.map";
pub const JOURNAL: &str = "namespace.journal";

pub fn fed_dir(root: &Path, fed: &FederationId) -> PathBuf {
    root.join("feds")
        .join(format!("{}_{}", fed.run_label(), fed.data_class()))
}

pub fn render_bridge_map<'a>(entries: impl IntoIterator<Item = &'a BridgeEntry>) -> String {
    entries
        .into_iter()
        .map(|e| format!("{}\t{}\t{}\n", e.collection_path, e.federation, e.kind.as_str()))
        .collect()
}

pub fn parse_bridge_map(text: &str) -> Result<Vec<BridgeEntry>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            let f: Vec<&str> = l.split('\t').collect();
            let [path, fed, kind] = f[..] else {
                bail!("{BRIDGE_MAP}:{}: expected 3 tab-separated fields", n + 1);
            };
            Ok(BridgeEntry {
                collection_path: path.into(),
                federation: fed.parse().map_err(|e| anyhow!("{BRIDGE_MAP}:{}: {e}", n + 1))?,
                kind: kind.parse().map_err(|e| anyhow!("{BRIDGE_MAP}:{}: {e}", n + 1))?,
            })
        })
        .collect()
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_be_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            bail!("segment truncated");
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u16(&mut self) -> Result<usize> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into()?) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into()?))
    }

    fn str(&mut self) -> Result<&'a str> {
        let n = self.u16()?;
        Ok(std::str::from_utf8(self.take(n)?)?)
    }
}

fn encode_segment(body: &CollectionBody) -> Vec<u8> {
    let mut out = Vec::new();
    match body {
        CollectionBody::Stream(events) => {
            out.extend_from_slice(&(events.len() as u64).to_be_bytes());
            for h in events {
                let enc = encode_event_header(h);
                out.extend_from_slice(&(enc.len() as u16).to_be_bytes());
                out.extend_from_slice(&enc);
            }
        }
        CollectionBody::Skim {
            selection_name,
            pointers,
        } => {
            out.extend_from_slice(&(pointers.len() as u64).to_be_bytes());
            put_str(&mut out, selection_name);
            for p in pointers {
                put_str(&mut out, &p.federation.to_string());
                put_str(&mut out, &p.collection_path);
                out.extend_from_slice(&p.ordinal.to_be_bytes());
            }
        }
    }
    out
}

pub fn save_store(dir: &Path, store: &EventStore) -> Result<()> {
    let segs = dir.join("segments");
    fs::create_dir_all(&segs)?;
    let mut journal = String::new();
    for (id, c) in store.collections().enumerate() {
        journal.push_str(&format!("{id}\t{}\t{}\n", c.kind().as_str(), c.path));
        write_packed(
            &segs.join(format!("{id}.pst")),
            &encode_segment(&c.body),
            CodecId::REFERENCE_LZ,
        )?;
    }
    write_atomic(&dir.join(JOURNAL), journal.as_bytes())
}

pub fn load_store(dir: &Path, fed: FederationId) -> Result<EventStore> {
    let mut store = EventStore::new(fed);
    let journal = match fs::read_to_string(dir.join(JOURNAL)) {
        Ok(j) => j,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(store),
        Err(e) => return Err(e.into()),
    };
    for (n, line) in journal.lines().enumerate() {
        let ctx = || format!("{JOURNAL}:{}", n + 1);
        let f: Vec<&str> = line.split('\t').collect();
        let [id, kind, path] = f[..] else {
            bail!("{}: expected 3 fields", ctx());
        };
        let kind: CollectionKind = kind.parse().map_err(|e| anyhow!("{}: {e}", ctx()))?;
        let bytes = read_packed(&dir.join("segments").join(format!("{id}.pst"))).with_context(ctx)?;
        let mut r = Reader { buf: &bytes };
        let count = r.u64()?;
        match kind {
            CollectionKind::Stream => {
                let mut events = Vec::with_capacity(count as usize);
                for _ in 0..count {
                    let n = r.u16()?;
                    events.push(decode_event_header(r.take(n)?).with_context(ctx)?);
                }
                let cid = store.create_collection(path, kind, &mut NoLocks)?;
                store.append_events(cid, events)?;
            }
            CollectionKind::Skim => {
                let name = r.str()?.to_string();
                let mut pointers = Vec::with_capacity(count as usize);
                for _ in 0..count {
                    let federation = r.str()?.parse().map_err(|e| anyhow!("{}: {e}", ctx()))?;
                    let collection_path = r.str()?.to_string();
                    pointers.push(EventRef {
                        federation,
                        collection_path,
                        ordinal: r.u64()?,
                    });
                }
                store.import_skim(path, &name, pointers, &mut NoLocks)?;
            }
        }
    }
    Ok(store)
}

pub fn save_bridge(root: &Path, bridge: &Bridge) -> Result<()> {
    fs::create_dir_all(root)?;
    let mut feds = String::new();
    for d in bridge.federations() {
        feds.push_str(&format!("{}\t{}\n", d.id, d.status.as_str()));
        save_store(
            &fed_dir(root, &d.id),
            bridge.store(&d.id).expect("listed federation"),
        )?;
    }
    write_atomic(&root.join(FEDERATIONS_FILE), feds.as_bytes())?;
    write_atomic(
        &root.join(BRIDGE_MAP),
        render_bridge_map(bridge.bindings()).as_bytes(),
    )
}

/// Loads a catalog; a missing root yields an empty bridge.
pub fn load_bridge(root: &Path) -> Result<Bridge> {
    let mut bridge = Bridge::new();
    let feds = match fs::read_to_string(root.join(FEDERATIONS_FILE)) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(bridge),
        Err(e) => return Err(e.into()),
    };
    for (n, line) in feds.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let (id, status) = line
            .split_once('\t')
            .ok_or_else(|| anyhow!("{FEDERATIONS_FILE}:{}: expected 2 fields", n + 1))?;
        let id: FederationId = id
            .parse()
            .map_err(|e| anyhow!("{FEDERATIONS_FILE}:{}: {e}", n + 1))?;
        let status: FederationStatus = status
            .parse()
            .map_err(|e| anyhow!("{FEDERATIONS_FILE}:{}: {e}", n + 1))?;
        let store = load_store(&fed_dir(root, &id), id)?;
        bridge.attach_federation(store, status)?;
    }
    let map = match fs::read_to_string(root.join(BRIDGE_MAP)) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(e.into()),
    };
    for e in parse_bridge_map(&map)? {
        bridge.bind_collection(&e.collection_path, &e.federation, e.kind)?;
    }
    Ok(bridge)
}

#[cfg(test)]
mod tests {
    use super::*;
    use petastore_core::{ComponentKind, DataClass, EventHeader, Locator};

    fn fed(run: &str) -> FederationId {
        FederationId::new(run, DataClass::Real).unwrap()
    }

    #[test]
    fn bridge_map_lines() {
        let text = "/run1/s0\trun1:REAL\tSTREAM\n/run1/k\trun1:SIM\tSKIM\n";
        let entries = parse_bridge_map(text).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[1].kind, CollectionKind::Skim);
        assert_eq!(render_bridge_map(&entries), text);
        assert!(parse_bridge_map("/x\trun1:REAL").is_err());
        assert!(parse_bridge_map("/x\trun1:BOGUS\tSTREAM").is_err());
    }

    #[test]
    fn catalog_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = Bridge::new();
        b.register_federation(fed("run1")).unwrap();
        b.register_federation(fed("run2")).unwrap();
        b.set_status(&fed("run2"), FederationStatus::Offline).unwrap();
        let s = b.store_mut(&fed("run1")).unwrap();
        let id = s
            .create_collection("/run1/s0", CollectionKind::Stream, &mut NoLocks)
            .unwrap();
        let loc = Locator {
            file_id: 3,
            offset: 9,
            length: 100,
        };
        s.append_events(
            id,
            (0..50).map(|i| EventHeader::new(i, 1).with_component(ComponentKind::Aod, loc)),
        )
        .unwrap();
        s.create_skim("/run1/k", "/run1/s0", "muons", &[1, 5, 7], &mut NoLocks)
            .unwrap();
        b.bind_collection("/run1/s0", &fed("run1"), CollectionKind::Stream)
            .unwrap();
        b.bind_collection("/run1/k", &fed("run1"), CollectionKind::Skim)
            .unwrap();
        save_bridge(dir.path(), &b).unwrap();

        let back = load_bridge(dir.path()).unwrap();
        assert_eq!(
            back.federations().collect::<Vec<_>>(),
            b.federations().collect::<Vec<_>>()
        );
        assert_eq!(back.binding_count(), 2);
        assert_eq!(
            back.materialize("/run1/k").unwrap(),
            b.materialize("/run1/k").unwrap()
        );
        assert_eq!(back.materialize("/run1/s0").unwrap().len(), 50);
    }

    #[test]
    fn missing_root_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(load_bridge(&dir.path().join("nope")).unwrap().binding_count(), 0);
    }
}
