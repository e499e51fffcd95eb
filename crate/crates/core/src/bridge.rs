//! The bridge catalog: one logical namespace over many federations.
//!
//! Clients resolve a collection path to the federation that holds it
//! without knowing how data is partitioned. The bridge also performs deep
//! copies, extracting a collection (materializing skim pointers) into
//! another federation as a self-contained stream.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::model::{EventHeader, FederationId};
use crate::store::{CollectionBody, CollectionKind, EventStore, MetadataLocks, StoreError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FederationStatus {
    Online,
    Offline,
}

impl FederationStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            FederationStatus::Online => "ONLINE",
            FederationStatus::Offline => "OFFLINE",
        }
    }
}

impl core::str::FromStr for FederationStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ONLINE" => Ok(FederationStatus::Online),
            "OFFLINE" => Ok(FederationStatus::Offline),
            other => Err(format!("unknown federation status `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FederationDescriptor {
    pub id: FederationId,
    pub status: FederationStatus,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BridgeEntry {
    pub collection_path: String,
    pub federation: FederationId,
    pub kind: CollectionKind,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BridgeError {
    #[error("DUPLICATE_FEDERATION: {0}")]
    DuplicateFederation(FederationId),
    #[error("UNKNOWN_FEDERATION: {0}")]
    UnknownFederation(FederationId),
    #[error("DUPLICATE_PATH: {0}")]
    DuplicatePath(String),
    #[error("NOT_FOUND: {0}")]
    NotFound(String),
    #[error("FEDERATION_OFFLINE: {0}")]
    FederationOffline(FederationId),
    #[error("DANGLING_POINTER: {0}")]
    DanglingPointer(String),
    #[error(transparent)]
    Store(StoreError),
}

impl From<StoreError> for BridgeError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::DanglingPointer(r) => {
                BridgeError::DanglingPointer(format!("{}{}#{}", r.federation, r.collection_path, r.ordinal))
            }
            StoreError::NotFound(p) => BridgeError::NotFound(p),
            other => BridgeError::Store(other),
        }
    }
}

#[derive(Debug, Clone)]
struct Federation {
    status: FederationStatus,
    store: EventStore,
}

#[derive(Debug, Clone)]
pub struct Bridge {
    node_limit: usize,
    federations: BTreeMap<FederationId, Federation>,
    bindings: BTreeMap<String, BridgeEntry>,
}

impl Default for Bridge {
    fn default() -> Self {
        Self::new()
    }
}

impl Bridge {
    pub fn new() -> Self {
        Self::with_node_limit(crate::store::DEFAULT_NODE_LIMIT)
    }

    /// Federation stores created by this bridge use `node_limit`.
    pub fn with_node_limit(node_limit: usize) -> Self {
        Self {
            node_limit,
            federations: BTreeMap::new(),
            bindings: BTreeMap::new(),
        }
    }

    pub fn register_federation(&mut self, id: FederationId) -> Result<(), BridgeError> {
        if self.federations.contains_key(&id) {
            return Err(BridgeError::DuplicateFederation(id));
        }
        let store = EventStore::with_node_limit(id.clone(), self.node_limit);
        self.federations.insert(
            id,
            Federation {
                status: FederationStatus::Online,
                store,
            },
        );
        Ok(())
    }

    /// Registers a federation together with an existing store, e.g. one
    /// loaded from disk.
    pub fn attach_federation(
        &mut self,
        store: EventStore,
        status: FederationStatus,
    ) -> Result<(), BridgeError> {
        let id = store.federation().clone();
        if self.federations.contains_key(&id) {
            return Err(BridgeError::DuplicateFederation(id));
        }
        self.federations.insert(id, Federation { status, store });
        Ok(())
    }

    pub fn federations(&self) -> impl Iterator<Item = FederationDescriptor> + '_ {
        self.federations.iter().map(|(id, f)| FederationDescriptor {
            id: id.clone(),
            status: f.status,
        })
    }

    pub fn set_status(&mut self, id: &FederationId, status: FederationStatus) -> Result<(), BridgeError> {
        self.federations
            .get_mut(id)
            .ok_or_else(|| BridgeError::UnknownFederation(id.clone()))?
            .status = status;
        Ok(())
    }

    pub fn store(&self, id: &FederationId) -> Option<&EventStore> {
        self.federations.get(id).map(|f| &f.store)
    }

    pub fn store_mut(&mut self, id: &FederationId) -> Option<&mut EventStore> {
        self.federations.get_mut(id).map(|f| &mut f.store)
    }

    pub fn bindings(&self) -> impl Iterator<Item = &BridgeEntry> {
        self.bindings.values()
    }

    pub fn binding_count(&self) -> usize {
        self.bindings.len()
    }

    pub fn bind_collection(
        &mut self,
        path: &str,
        federation: &FederationId,
        kind: CollectionKind,
    ) -> Result<(), BridgeError> {
        if !self.federations.contains_key(federation) {
            return Err(BridgeError::UnknownFederation(federation.clone()));
        }
        crate::store::namespace::segments(path)
            .map_err(|_| BridgeError::Store(StoreError::InvalidPath(path.into())))?;
        if self.bindings.contains_key(path) {
            return Err(BridgeError::DuplicatePath(path.into()));
        }
        self.bindings.insert(
            path.into(),
            BridgeEntry {
                collection_path: path.into(),
                federation: federation.clone(),
                kind,
            },
        );
        Ok(())
    }

    pub fn resolve(&self, path: &str) -> Result<(FederationId, CollectionKind), BridgeError> {
        let entry = self
            .bindings
            .get(path)
            .ok_or_else(|| BridgeError::NotFound(path.into()))?;
        self.online(&entry.federation)?;
        Ok((entry.federation.clone(), entry.kind))
    }

    fn online(&self, id: &FederationId) -> Result<&Federation, BridgeError> {
        let fed = self
            .federations
            .get(id)
            .ok_or_else(|| BridgeError::UnknownFederation(id.clone()))?;
        if fed.status == FederationStatus::Offline {
            return Err(BridgeError::FederationOffline(id.clone()));
        }
        Ok(fed)
    }

    /// Every event of the collection at `path`, with skim pointers
    /// dereferenced through whichever federation they name.
    pub fn materialize(&self, path: &str) -> Result<Vec<EventHeader>, BridgeError> {
        let (fed_id, _) = self.resolve(path)?;
        let fed = self.online(&fed_id)?;
        let coll = fed
            .store
            .get(path)
            .ok_or_else(|| BridgeError::NotFound(path.into()))?;
        match &coll.body {
            CollectionBody::Stream(events) => Ok(events.clone()),
            CollectionBody::Skim { pointers, .. } => pointers
                .iter()
                .map(|p| {
                    let holder = match self.federations.get(&p.federation) {
                        Some(f) if f.status == FederationStatus::Offline => {
                            return Err(BridgeError::FederationOffline(p.federation.clone()))
                        }
                        Some(f) => f,
                        None => return Err(StoreError::DanglingPointer(p.clone()).into()),
                    };
                    Ok(holder.store.dereference(p)?.clone())
                })
                .collect(),
        }
    }

    /// Deep-copy target path for `path` in `target`.
    pub fn deep_copy_path(path: &str, target: &FederationId) -> String {
        format!("{path}@{target}")
    }

    /// Copies the collection at `path` into `target` as a stream of
    /// materialized events. Every check runs before any mutation; binding
    /// the new path is the commit point, so a failed copy leaves both the
    /// bridge and the target federation untouched.
    pub fn deep_copy(
        &mut self,
        path: &str,
        target: &FederationId,
        locks: &mut dyn MetadataLocks,
    ) -> Result<String, BridgeError> {
        self.resolve(path)?;
        self.online(target)?;
        let events = self.materialize(path)?;
        let new_path = Self::deep_copy_path(path, target);
        if self.bindings.contains_key(&new_path) {
            return Err(BridgeError::DuplicatePath(new_path));
        }
        let store = &mut self
            .federations
            .get_mut(target)
            .expect("target checked online above")
            .store;
        if store.get(&new_path).is_some() {
            return Err(BridgeError::DuplicatePath(new_path));
        }
        let id = store.create_collection(&new_path, CollectionKind::Stream, locks)?;
        store.append_events(id, events)?;
        self.bind_collection(&new_path, target, CollectionKind::Stream)?;
        Ok(new_path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ComponentKind, DataClass, EventRef, Locator};
    use crate::store::NoLocks;
    use alloc::string::ToString;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fid(run: &str, class: DataClass) -> FederationId {
        FederationId::new(run, class).unwrap()
    }

    fn six() -> Bridge {
        let mut b = Bridge::new();
        for run in ["run1", "run2", "run3"] {
            for class in [DataClass::Real, DataClass::Sim] {
                b.register_federation(fid(run, class)).unwrap();
            }
        }
        b
    }

    fn header(i: u64) -> EventHeader {
        EventHeader::new(i, 1).with_component(
            ComponentKind::Tag,
            Locator {
                file_id: 1,
                offset: i,
                length: 8,
            },
        )
    }

    fn add_stream(b: &mut Bridge, fed: &FederationId, path: &str, n: u64) {
        let s = b.store_mut(fed).unwrap();
        let id = s
            .create_collection(path, CollectionKind::Stream, &mut NoLocks)
            .unwrap();
        s.append_events(id, (0..n).map(header)).unwrap();
        b.bind_collection(path, fed, CollectionKind::Stream).unwrap();
    }

    #[test]
    fn six_federations_for_three_runs() {
        let b = six();
        assert_eq!(b.federations().count(), 6);
        assert!(b.federations().all(|d| d.status == FederationStatus::Online));
    }

    #[test]
    fn duplicate_federation() {
        let mut b = six();
        let id = fid("run1", DataClass::Real);
        assert_eq!(
            b.register_federation(id.clone()),
            Err(BridgeError::DuplicateFederation(id))
        );
    }

    #[test]
    fn bind_and_resolve() {
        let mut b = six();
        let r3 = fid("run3", DataClass::Real);
        b.bind_collection("/r3/stream/A", &r3, CollectionKind::Stream)
            .unwrap();
        assert_eq!(
            b.resolve("/r3/stream/A"),
            Ok((r3.clone(), CollectionKind::Stream))
        );
        assert_eq!(
            b.bind_collection(
                "/r3/stream/A",
                &fid("run2", DataClass::Sim),
                CollectionKind::Stream
            ),
            Err(BridgeError::DuplicatePath("/r3/stream/A".into()))
        );
        assert_eq!(
            b.bind_collection("/x", &fid("run9", DataClass::Real), CollectionKind::Stream),
            Err(BridgeError::UnknownFederation(fid("run9", DataClass::Real)))
        );
        assert_eq!(b.resolve("/nope"), Err(BridgeError::NotFound("/nope".into())));
    }

    #[test]
    fn offline_federation_fails_resolution() {
        let mut b = six();
        let r1 = fid("run1", DataClass::Sim);
        b.bind_collection("/r1/s", &r1, CollectionKind::Stream).unwrap();
        b.set_status(&r1, FederationStatus::Offline).unwrap();
        assert_eq!(
            b.resolve("/r1/s"),
            Err(BridgeError::FederationOffline(r1.clone()))
        );
        b.set_status(&r1, FederationStatus::Online).unwrap();
        assert!(b.resolve("/r1/s").is_ok());
    }

    #[test]
    fn four_streams_and_115_skims_per_run() {
        let mut b = six();
        let mut expected = Vec::new();
        for run in ["run1", "run2", "run3"] {
            let fed = fid(run, DataClass::Real);
            for s in 0..4 {
                let p = format!("/{run}/stream/{s}");
                b.bind_collection(&p, &fed, CollectionKind::Stream).unwrap();
                expected.push((p, fed.clone(), CollectionKind::Stream));
            }
            for k in 0..115 {
                let p = format!("/{run}/skim/{k}");
                b.bind_collection(&p, &fed, CollectionKind::Skim).unwrap();
                expected.push((p, fed.clone(), CollectionKind::Skim));
            }
        }
        assert_eq!(b.binding_count(), 3 * 119);
        for (p, fed, kind) in expected {
            assert_eq!(b.resolve(&p), Ok((fed, kind)));
        }
    }

    #[test]
    fn resolve_matches_scan_over_100k_bindings() {
        let mut b = six();
        let feds: Vec<FederationId> = b.federations().map(|d| d.id).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut all = Vec::new();
        for i in 0..100_000u32 {
            let fed = feds[rng.gen_range(0..feds.len())].clone();
            let p = format!("/c/{}/{i}", rng.gen_range(0..500));
            b.bind_collection(&p, &fed, CollectionKind::Skim).unwrap();
            all.push((p, fed));
        }
        for _ in 0..2_000 {
            let (p, _) = &all[rng.gen_range(0..all.len())];
            let scanned = b
                .bindings()
                .find(|e| &e.collection_path == p)
                .map(|e| e.federation.clone())
                .unwrap();
            assert_eq!(b.resolve(p).unwrap().0, scanned);
        }
    }

    #[test]
    fn deep_copy_of_stream() {
        let mut b = six();
        let src = fid("run1", DataClass::Real);
        let dst = fid("run2", DataClass::Real);
        add_stream(&mut b, &src, "/r1/s", 100);
        let p = b.deep_copy("/r1/s", &dst, &mut NoLocks).unwrap();
        assert_eq!(p, "/r1/s@run2:REAL");
        assert_eq!(b.resolve(&p).unwrap(), (dst.clone(), CollectionKind::Stream));
        let copied = b.store(&dst).unwrap().read_collection(&p, &mut NoLocks).unwrap();
        assert_eq!(copied, (0..100).map(header).collect::<Vec<_>>());
    }

    #[test]
    fn deep_copy_of_skim_preserves_order() {
        let mut b = six();
        let src = fid("run1", DataClass::Real);
        let dst = fid("run1", DataClass::Sim);
        add_stream(&mut b, &src, "/r1/s", 10);
        let s = b.store_mut(&src).unwrap();
        s.create_skim("/r1/k", "/r1/s", "k", &[2, 5, 7], &mut NoLocks)
            .unwrap();
        b.bind_collection("/r1/k", &src, CollectionKind::Skim).unwrap();
        let p = b.deep_copy("/r1/k", &dst, &mut NoLocks).unwrap();
        let got = b.store(&dst).unwrap().read_collection(&p, &mut NoLocks).unwrap();
        assert_eq!(got, vec![header(2), header(5), header(7)]);
    }

    #[test]
    fn dangling_skim_leaves_target_unchanged() {
        let mut b = six();
        let src = fid("run1", DataClass::Real);
        let dst = fid("run3", DataClass::Real);
        add_stream(&mut b, &src, "/r1/s", 3);
        let bad = EventRef {
            federation: src.clone(),
            collection_path: "/r1/s".into(),
            ordinal: 3,
        };
        b.store_mut(&src)
            .unwrap()
            .import_skim("/r1/bad", "bad", vec![bad], &mut NoLocks)
            .unwrap();
        b.bind_collection("/r1/bad", &src, CollectionKind::Skim).unwrap();
        let bindings_before = b.binding_count();
        let err = b.deep_copy("/r1/bad", &dst, &mut NoLocks).unwrap_err();
        assert!(matches!(err, BridgeError::DanglingPointer(_)), "{err:?}");
        assert_eq!(b.binding_count(), bindings_before);
        assert!(b.store(&dst).unwrap().is_empty());
    }

    #[test]
    fn deep_copy_errors() {
        let mut b = six();
        let src = fid("run1", DataClass::Real);
        let dst = fid("run2", DataClass::Real);
        add_stream(&mut b, &src, "/r1/s", 1);
        assert_eq!(
            b.deep_copy("/none", &dst, &mut NoLocks),
            Err(BridgeError::NotFound("/none".into()))
        );
        b.set_status(&dst, FederationStatus::Offline).unwrap();
        assert_eq!(
            b.deep_copy("/r1/s", &dst, &mut NoLocks),
            Err(BridgeError::FederationOffline(dst.clone()))
        );
        b.set_status(&dst, FederationStatus::Online).unwrap();
        b.deep_copy("/r1/s", &dst, &mut NoLocks).unwrap();
        assert!(matches!(
            b.deep_copy("/r1/s", &dst, &mut NoLocks),
            Err(BridgeError::DuplicatePath(_))
        ));
    }

    #[test]
    fn status_text() {
        assert_eq!(
            "OFFLINE".parse::<FederationStatus>(),
            Ok(FederationStatus::Offline)
        );
        assert_eq!(FederationStatus::Online.as_str().to_string(), "ONLINE");
    }
}
