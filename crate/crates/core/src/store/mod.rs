//! Per-federation event store: stream collections holding event headers and
//! skim collections holding pointers into streams.

pub mod namespace;

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::lock::{Acquire, ClientId, LockMode, LockTable};
use crate::model::{EventHeader, EventRef, FederationId};
use crate::time::Timestamp;
pub use namespace::{CollectionId, Namespace, NodeId, PathError, DEFAULT_NODE_LIMIT};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StoreError {
    #[error("invalid collection path `{0}`")]
    InvalidPath(String),
    #[error("DUPLICATE_PATH: {0}")]
    DuplicatePath(String),
    #[error("NOT_FOUND: {0}")]
    NotFound(String),
    #[error("WRONG_KIND: {0}")]
    WrongKind(String),
    #[error("ORDINAL_OUT_OF_RANGE: ordinal {ordinal} >= size {size}")]
    OrdinalOutOfRange { ordinal: u64, size: u64 },
    #[error("selection ordinals must be strictly increasing")]
    UnsortedSelection,
    #[error("DANGLING_POINTER: {0:?}")]
    DanglingPointer(EventRef),
    #[error("LOCK_TIMEOUT: {0}")]
    LockTimeout(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CollectionKind {
    Stream,
    Skim,
}

impl CollectionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CollectionKind::Stream => "STREAM",
            CollectionKind::Skim => "SKIM",
        }
    }
}

impl core::str::FromStr for CollectionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "STREAM" => Ok(CollectionKind::Stream),
            "SKIM" => Ok(CollectionKind::Skim),
            other => Err(format!("unknown collection kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CollectionBody {
    Stream(Vec<EventHeader>),
    Skim {
        selection_name: String,
        pointers: Vec<EventRef>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Collection {
    pub path: String,
    pub body: CollectionBody,
}

impl Collection {
    pub fn kind(&self) -> CollectionKind {
        match self.body {
            CollectionBody::Stream(_) => CollectionKind::Stream,
            CollectionBody::Skim { .. } => CollectionKind::Skim,
        }
    }

    pub fn len(&self) -> usize {
        match &self.body {
            CollectionBody::Stream(e) => e.len(),
            CollectionBody::Skim { pointers, .. } => pointers.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Access to the collection-metadata locks guarding namespace nodes.
pub trait MetadataLocks {
    fn lock(&mut self, resource: &str, mode: LockMode) -> Result<(), StoreError>;
    fn unlock(&mut self, resource: &str);
}

/// For single-owner stores (tools, tests) where nothing else can collide.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoLocks;

impl MetadataLocks for NoLocks {
    fn lock(&mut self, _: &str, _: LockMode) -> Result<(), StoreError> {
        Ok(())
    }

    fn unlock(&mut self, _: &str) {}
}

/// Metadata locking through a [`LockTable`] session.
///
/// Locks the client already holds are reused and left alone on unlock. A
/// request that would queue is withdrawn and reported as `LOCK_TIMEOUT`:
/// within one synchronous call nobody else can release the blocker.
pub struct TableLocks<'a> {
    table: &'a mut LockTable,
    client: ClientId,
    now: Timestamp,
    acquired: Vec<String>,
}

impl<'a> TableLocks<'a> {
    pub fn new(table: &'a mut LockTable, client: ClientId, now: Timestamp) -> Self {
        Self {
            table,
            client,
            now,
            acquired: Vec::new(),
        }
    }
}

impl MetadataLocks for TableLocks<'_> {
    fn lock(&mut self, resource: &str, mode: LockMode) -> Result<(), StoreError> {
        match self.table.holds(&self.client, resource) {
            Some(LockMode::Update) => return Ok(()),
            Some(LockMode::Read) if mode == LockMode::Read => return Ok(()),
            _ => {}
        }
        match self.table.acquire(&self.client, resource, mode, self.now) {
            Ok(Acquire::Granted) => {
                self.acquired.push(resource.to_string());
                Ok(())
            }
            Ok(Acquire::Queued(_)) => {
                let _ = self.table.cancel(&self.client, resource, self.now);
                Err(StoreError::LockTimeout(resource.to_string()))
            }
            Err(e) => Err(StoreError::LockTimeout(format!("{resource}: {e}"))),
        }
    }

    fn unlock(&mut self, resource: &str) {
        if let Some(i) = self.acquired.iter().position(|r| r == resource) {
            self.acquired.swap_remove(i);
            let _ = self.table.release(&self.client, resource, self.now);
        }
    }
}

#[derive(Debug, Clone)]
pub struct EventStore {
    federation: FederationId,
    namespace: Namespace,
    collections: Vec<Collection>,
    critical_section_visits: u64,
}

impl EventStore {
    pub fn new(federation: FederationId) -> Self {
        Self::with_node_limit(federation, DEFAULT_NODE_LIMIT)
    }

    pub fn with_node_limit(federation: FederationId, node_limit: usize) -> Self {
        Self {
            federation,
            namespace: Namespace::new(node_limit),
            collections: Vec::new(),
            critical_section_visits: 0,
        }
    }

    pub fn federation(&self) -> &FederationId {
        &self.federation
    }

    pub fn namespace(&self) -> &Namespace {
        &self.namespace
    }

    pub fn len(&self) -> usize {
        self.collections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.collections.is_empty()
    }

    /// Collections in creation order.
    pub fn collections(&self) -> impl Iterator<Item = &Collection> {
        self.collections.iter()
    }

    /// Namespace node visits made while holding a metadata lock, summed
    /// over the store's lifetime.
    pub fn critical_section_visits(&self) -> u64 {
        self.critical_section_visits
    }

    /// Lock resource guarding the namespace node that `path` lives in.
    pub fn metadata_resource(&self, path: &str) -> Result<String, StoreError> {
        let node = self
            .namespace
            .metadata_node(path)
            .map_err(|_| StoreError::InvalidPath(path.into()))?;
        Ok(format!("meta:{}:{}", self.federation, node.0))
    }

    pub fn handle(&self, path: &str) -> Option<CollectionId> {
        self.namespace.lookup(path)
    }

    pub fn get(&self, path: &str) -> Option<&Collection> {
        self.handle(path).map(|id| &self.collections[id.0 as usize])
    }

    pub fn collection(&self, id: CollectionId) -> &Collection {
        &self.collections[id.0 as usize]
    }

    pub fn list(&self, prefix: &str) -> Vec<String> {
        self.namespace.list(prefix).into_iter().map(|(p, _)| p).collect()
    }

    /// The event at `ordinal` of stream `path`, if both exist.
    pub fn stream_event(&self, path: &str, ordinal: u64) -> Option<&EventHeader> {
        match &self.get(path)?.body {
            CollectionBody::Stream(events) => events.get(usize::try_from(ordinal).ok()?),
            CollectionBody::Skim { .. } => None,
        }
    }

    fn register(
        &mut self,
        path: &str,
        body: CollectionBody,
        locks: &mut dyn MetadataLocks,
    ) -> Result<CollectionId, StoreError> {
        let resource = self.metadata_resource(path)?;
        locks.lock(&resource, LockMode::Update)?;
        let id = CollectionId(self.collections.len() as u32);
        let result = self.namespace.insert(path, id);
        self.critical_section_visits += self.namespace.last_visits();
        locks.unlock(&resource);
        match result {
            Ok(()) => {
                self.collections.push(Collection {
                    path: path.into(),
                    body,
                });
                Ok(id)
            }
            Err(PathError::Duplicate) => Err(StoreError::DuplicatePath(path.into())),
            Err(PathError::Invalid) => Err(StoreError::InvalidPath(path.into())),
        }
    }

    pub fn create_collection(
        &mut self,
        path: &str,
        kind: CollectionKind,
        locks: &mut dyn MetadataLocks,
    ) -> Result<CollectionId, StoreError> {
        let body = match kind {
            CollectionKind::Stream => CollectionBody::Stream(Vec::new()),
            CollectionKind::Skim => CollectionBody::Skim {
                selection_name: String::new(),
                pointers: Vec::new(),
            },
        };
        self.register(path, body, locks)
    }

    /// Appends to a stream; returns the new size.
    pub fn append_events(
        &mut self,
        id: CollectionId,
        headers: impl IntoIterator<Item = EventHeader>,
    ) -> Result<usize, StoreError> {
        let c = self
            .collections
            .get_mut(id.0 as usize)
            .ok_or_else(|| StoreError::NotFound(format!("collection #{}", id.0)))?;
        match &mut c.body {
            CollectionBody::Stream(events) => {
                events.extend(headers);
                Ok(events.len())
            }
            CollectionBody::Skim { .. } => Err(StoreError::WrongKind(c.path.clone())),
        }
    }

    /// Creates a skim selecting `ordinals` of stream `source`. Pointers are
    /// built before the metadata lock is taken; the lock covers only the
    /// namespace insertion.
    pub fn create_skim(
        &mut self,
        path: &str,
        source: &str,
        selection_name: &str,
        ordinals: &[u64],
        locks: &mut dyn MetadataLocks,
    ) -> Result<CollectionId, StoreError> {
        let src = self
            .get(source)
            .ok_or_else(|| StoreError::NotFound(source.into()))?;
        let size = match &src.body {
            CollectionBody::Stream(e) => e.len() as u64,
            CollectionBody::Skim { .. } => return Err(StoreError::WrongKind(source.into())),
        };
        if ordinals.windows(2).any(|w| w[0] >= w[1]) {
            return Err(StoreError::UnsortedSelection);
        }
        if let Some(&bad) = ordinals.iter().find(|&&o| o >= size) {
            return Err(StoreError::OrdinalOutOfRange { ordinal: bad, size });
        }
        let pointers = ordinals
            .iter()
            .map(|&ordinal| EventRef {
                federation: self.federation.clone(),
                collection_path: source.into(),
                ordinal,
            })
            .collect();
        self.import_skim(path, selection_name, pointers, locks)
    }

    /// Registers a skim with caller-supplied pointers, which are not
    /// validated. Used when restoring persisted stores and to build
    /// deliberately broken skims in tests.
    pub fn import_skim(
        &mut self,
        path: &str,
        selection_name: &str,
        pointers: Vec<EventRef>,
        locks: &mut dyn MetadataLocks,
    ) -> Result<CollectionId, StoreError> {
        let body = CollectionBody::Skim {
            selection_name: selection_name.into(),
            pointers,
        };
        self.register(path, body, locks)
    }

    /// Resolves one pointer that targets this federation.
    pub fn dereference(&self, r: &EventRef) -> Result<&EventHeader, StoreError> {
        if r.federation != self.federation {
            return Err(StoreError::DanglingPointer(r.clone()));
        }
        self.stream_event(&r.collection_path, r.ordinal)
            .ok_or_else(|| StoreError::DanglingPointer(r.clone()))
    }

    /// Events of a stream, or the dereferenced targets of a skim in pointer
    /// order.
    pub fn read_collection(
        &self,
        path: &str,
        locks: &mut dyn MetadataLocks,
    ) -> Result<Vec<EventHeader>, StoreError> {
        let resource = self.metadata_resource(path)?;
        locks.lock(&resource, LockMode::Read)?;
        let found = self.handle(path);
        locks.unlock(&resource);
        let id = found.ok_or_else(|| StoreError::NotFound(path.into()))?;
        match &self.collection(id).body {
            CollectionBody::Stream(events) => Ok(events.clone()),
            CollectionBody::Skim { pointers, .. } => {
                pointers.iter().map(|p| self.dereference(p).cloned()).collect()
            }
        }
    }
}

#[cfg(test)]
mod tests;
