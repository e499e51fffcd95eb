//! Bi-temporal conditions database.
//!
//! Each record is valid over a half-open interval of detector time and
//! becomes visible at its insertion time. A lookup at `(t, as_of)` returns
//! the latest-inserted record that was visible at `as_of` and covers `t`, so
//! newer calibrations shadow older ones without erasing history.
//!
//! Records of one `(key, revision)` are kept in shadowing order and indexed
//! by [`index::StabIndex`]; lookups and appends cost polylog in the number
//! of records under the key, never a scan.

pub mod index;
pub mod payload;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

pub use index::{Interval, StabIndex};
pub use payload::{PayloadArena, PayloadRef};

use crate::state_id::{compute_state_id, StateId};
use crate::store::namespace::segments;
use crate::time::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConditionsError {
    #[error("NON_MONOTONE_INSERTION_TIME: {got} is before {last}")]
    NonMonotoneInsertionTime { last: Timestamp, got: Timestamp },
    #[error("invalid validity interval [{0}, {1})")]
    InvalidInterval(u64, u64),
    #[error("invalid condition key: {0}")]
    InvalidKey(String),
    #[error("invalid name: {0:?}")]
    InvalidName(String),
    #[error("NO_MATCH")]
    NoMatch,
    #[error("UNKNOWN_CONFIG: {0}")]
    UnknownConfig(String),
    #[error("UNBOUND_PREFIX: {0}")]
    UnboundPrefix(String),
    #[error("configuration {0} already exists")]
    DuplicateConfig(String),
    #[error("prefix {0} bound twice")]
    DuplicateBinding(String),
    #[error("unknown payload {0:?}")]
    UnknownPayload(PayloadRef),
}

impl ConditionsError {
    pub fn code(&self) -> &'static str {
        match self {
            ConditionsError::NonMonotoneInsertionTime { .. } => "NON_MONOTONE_INSERTION_TIME",
            ConditionsError::InvalidInterval(..) => "INVALID_INTERVAL",
            ConditionsError::InvalidKey(_) => "INVALID_KEY",
            ConditionsError::InvalidName(_) => "INVALID_NAME",
            ConditionsError::NoMatch => "NO_MATCH",
            ConditionsError::UnknownConfig(_) => "UNKNOWN_CONFIG",
            ConditionsError::UnboundPrefix(_) => "UNBOUND_PREFIX",
            ConditionsError::DuplicateConfig(_) => "DUPLICATE_CONFIG",
            ConditionsError::DuplicateBinding(_) => "DUPLICATE_BINDING",
            ConditionsError::UnknownPayload(_) => "UNKNOWN_PAYLOAD",
        }
    }
}

fn check_name(s: &str) -> Result<(), ConditionsError> {
    if s.is_empty() || s.chars().any(|c| c.is_whitespace() || c.is_control()) {
        Err(ConditionsError::InvalidName(s.into()))
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConditionKey {
    pub path: String,
    pub condition_type: String,
}

impl ConditionKey {
    pub fn new(path: &str, condition_type: &str) -> Result<Self, ConditionsError> {
        segments(path).map_err(|_| ConditionsError::InvalidKey(path.into()))?;
        check_name(condition_type)?;
        Ok(Self {
            path: path.into(),
            condition_type: condition_type.into(),
        })
    }
}

/// Where a record was first inserted. Survives sweeps and extraction, and
/// identifies the record across stores.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Origin {
    pub tag: String,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IovRecord {
    pub key: ConditionKey,
    pub validity: Interval,
    pub inserted_at: Timestamp,
    pub revision: String,
    /// Local insertion counter of the holding store.
    pub seq: u64,
    pub origin: Origin,
    pub payload: PayloadRef,
}

impl IovRecord {
    /// Shadowing order: insertion time, then origin. Within one store this
    /// is `(inserted_at, seq)`; across stores it does not depend on the
    /// order in which sweeps happened.
    pub fn priority_cmp(&self, other: &Self) -> Ordering {
        (self.inserted_at, &self.origin).cmp(&(other.inserted_at, &other.origin))
    }
}

/// Arguments of [`ConditionStore::insert`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NewIov {
    pub key: ConditionKey,
    pub validity: Interval,
    pub inserted_at: Timestamp,
    pub revision: String,
    pub payload: PayloadRef,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigurationRecord {
    pub name: String,
    /// Namespace prefix to revision.
    pub bindings: BTreeMap<String, String>,
    pub insertion_cutoff: Timestamp,
    pub state: StateId,
}

impl ConfigurationRecord {
    pub fn new(
        name: &str,
        bindings: impl IntoIterator<Item = (String, String)>,
        insertion_cutoff: Timestamp,
    ) -> Result<Self, ConditionsError> {
        check_name(name)?;
        let mut map = BTreeMap::new();
        for (prefix, rev) in bindings {
            if prefix != "/" {
                segments(&prefix).map_err(|_| ConditionsError::InvalidKey(prefix.clone()))?;
            }
            check_name(&rev)?;
            if map.insert(prefix.clone(), rev).is_some() {
                return Err(ConditionsError::DuplicateBinding(prefix));
            }
        }
        let sorted: Vec<(&String, &String)> = map.iter().collect();
        let state = compute_state_id(name, insertion_cutoff, &sorted)
            .expect("BTreeMap iterates in strictly increasing key order");
        Ok(Self {
            name: name.into(),
            bindings: map,
            insertion_cutoff,
            state,
        })
    }

    /// Revision bound to the longest prefix of `path`, matching whole
    /// segments only (`/calib` covers `/calib/drift` but not `/calibx`).
    pub fn revision_for(&self, path: &str) -> Option<&str> {
        let mut probe = path;
        loop {
            if let Some(rev) = self.bindings.get(probe) {
                return Some(rev);
            }
            match probe.rfind('/') {
                Some(0) if probe != "/" => probe = "/",
                Some(i) if i > 0 => probe = &probe[..i],
                _ => return None,
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
struct History {
    /// Record indices in shadowing order.
    ranks: Vec<u32>,
    inserted: Vec<Timestamp>,
    /// Every `MARK_EVERY`-th entry of `inserted`, so the visibility search
    /// touches a small hot array and then one short run.
    marks: Vec<Timestamp>,
    index: StabIndex,
    dirty: bool,
}

const MARK_EVERY: usize = 32;

impl History {
    fn visible_prefix(&self, as_of: Timestamp) -> usize {
        let m = self.marks.partition_point(|&x| x <= as_of);
        if m == 0 {
            return 0;
        }
        let lo = (m - 1) * MARK_EVERY;
        let hi = (lo + MARK_EVERY).min(self.inserted.len());
        lo + self.inserted[lo..hi].partition_point(|&x| x <= as_of)
    }

    fn remark(&mut self) {
        self.marks.clear();
        self.marks.extend(self.inserted.iter().step_by(MARK_EVERY));
    }
}

/// One conditions store. Single writer; `&self` methods are pure reads.
#[derive(Debug, Clone)]
pub struct ConditionStore {
    tag: String,
    records: Vec<IovRecord>,
    histories: BTreeMap<ConditionKey, BTreeMap<String, History>>,
    origins: BTreeSet<Origin>,
    last_inserted_at: Option<Timestamp>,
    next_seq: u64,
    configs: BTreeMap<String, ConfigurationRecord>,
    payloads: PayloadArena,
    /// Some history needs an index rebuild.
    unsettled: bool,
}

impl ConditionStore {
    /// `tag` names the store in record origins; distinct stores that will
    /// ever be swept together need distinct tags.
    pub fn new(tag: &str) -> Self {
        Self::with_arena(tag, PayloadArena::default())
    }

    pub fn with_arena(tag: &str, payloads: PayloadArena) -> Self {
        Self {
            tag: tag.into(),
            records: Vec::new(),
            histories: BTreeMap::new(),
            origins: BTreeSet::new(),
            last_inserted_at: None,
            next_seq: 1,
            configs: BTreeMap::new(),
            payloads,
            unsettled: false,
        }
    }

    /// Rebuilds a store from persisted parts.
    pub fn restore(
        tag: &str,
        payloads: PayloadArena,
        records: Vec<IovRecord>,
        configs: Vec<ConfigurationRecord>,
    ) -> Result<Self, ConditionsError> {
        let mut s = Self::with_arena(tag, payloads);
        for r in records {
            if s.payloads.get(r.payload).is_none() {
                return Err(ConditionsError::UnknownPayload(r.payload));
            }
            if r.origin.tag == s.tag {
                s.last_inserted_at = s.last_inserted_at.max(Some(r.inserted_at));
            }
            s.next_seq = s.next_seq.max(r.seq + 1);
            s.place(r);
        }
        s.settle();
        for c in configs {
            s.configs.insert(c.name.clone(), c);
        }
        Ok(s)
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[IovRecord] {
        &self.records
    }

    pub fn payloads(&self) -> &PayloadArena {
        &self.payloads
    }

    pub fn payload(&self, r: PayloadRef) -> Option<&[u8]> {
        self.payloads.get(r)
    }

    pub fn put_payload(&mut self, blob: &[u8]) -> PayloadRef {
        self.payloads.put(blob)
    }

    pub fn configs(&self) -> impl Iterator<Item = &ConfigurationRecord> {
        self.configs.values()
    }

    pub fn config(&self, name: &str) -> Option<&ConfigurationRecord> {
        self.configs.get(name)
    }

    pub fn keys(&self) -> impl Iterator<Item = &ConditionKey> {
        self.histories.keys()
    }

    pub fn revisions<'a>(&'a self, key: &ConditionKey) -> impl Iterator<Item = &'a str> {
        self.histories
            .get(key)
            .into_iter()
            .flat_map(|m| m.keys().map(String::as_str))
    }

    pub fn insert(&mut self, new: NewIov) -> Result<u64, ConditionsError> {
        if let Some(last) = self.last_inserted_at {
            if new.inserted_at < last {
                return Err(ConditionsError::NonMonotoneInsertionTime {
                    last,
                    got: new.inserted_at,
                });
            }
        }
        segments(&new.key.path).map_err(|_| ConditionsError::InvalidKey(new.key.path.clone()))?;
        check_name(&new.key.condition_type)?;
        check_name(&new.revision)?;
        if self.payloads.get(new.payload).is_none() {
            return Err(ConditionsError::UnknownPayload(new.payload));
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.last_inserted_at = Some(new.inserted_at);
        self.place(IovRecord {
            key: new.key,
            validity: new.validity,
            inserted_at: new.inserted_at,
            revision: new.revision,
            seq,
            origin: Origin {
                tag: self.tag.clone(),
                seq,
            },
            payload: new.payload,
        });
        self.settle();
        Ok(seq)
    }

    /// Stores `blob` and inserts a record pointing at it.
    pub fn insert_blob(
        &mut self,
        key: ConditionKey,
        begin: u64,
        end: u64,
        inserted_at: Timestamp,
        revision: &str,
        blob: &[u8],
    ) -> Result<u64, ConditionsError> {
        let validity = Interval::new(begin, end).ok_or(ConditionsError::InvalidInterval(begin, end))?;
        if let Some(last) = self.last_inserted_at {
            if inserted_at < last {
                return Err(ConditionsError::NonMonotoneInsertionTime {
                    last,
                    got: inserted_at,
                });
            }
        }
        check_name(revision)?;
        let payload = self.payloads.put(blob);
        self.insert(NewIov {
            key,
            validity,
            inserted_at,
            revision: revision.into(),
            payload,
        })
    }

    /// Files a record into its history. Appends go straight into the index;
    /// anything landing mid-order marks the history for a rebuild.
    fn place(&mut self, rec: IovRecord) {
        let idx = self.records.len() as u32;
        let records = &self.records;
        let h = self
            .histories
            .entry(rec.key.clone())
            .or_default()
            .entry(rec.revision.clone())
            .or_default();
        let pos = h
            .ranks
            .partition_point(|&r| records[r as usize].priority_cmp(&rec) == Ordering::Less);
        if pos == h.ranks.len() {
            if !h.dirty {
                h.index.push(rec.validity);
            }
            h.ranks.push(idx);
            if h.inserted.len().is_multiple_of(MARK_EVERY) {
                h.marks.push(rec.inserted_at);
            }
            h.inserted.push(rec.inserted_at);
        } else {
            h.ranks.insert(pos, idx);
            h.inserted.insert(pos, rec.inserted_at);
            h.dirty = true;
            self.unsettled = true;
        }
        self.origins.insert(rec.origin.clone());
        self.records.push(rec);
    }

    fn settle(&mut self) {
        if !core::mem::take(&mut self.unsettled) {
            return;
        }
        let records = &self.records;
        for h in self.histories.values_mut().flat_map(BTreeMap::values_mut) {
            if h.dirty {
                h.index = StabIndex::from_intervals(h.ranks.iter().map(|&r| records[r as usize].validity));
                h.remark();
                h.dirty = false;
            }
        }
    }

    fn history(&self, key: &ConditionKey, revision: &str) -> Option<&History> {
        self.histories.get(key)?.get(revision)
    }

    pub fn lookup(
        &self,
        key: &ConditionKey,
        t: u64,
        as_of: Timestamp,
        revision: &str,
    ) -> Result<&IovRecord, ConditionsError> {
        let h = self.history(key, revision).ok_or(ConditionsError::NoMatch)?;
        let rank = h
            .index
            .stab(h.visible_prefix(as_of), t)
            .ok_or(ConditionsError::NoMatch)?;
        Ok(&self.records[h.ranks[rank] as usize])
    }

    pub fn mkconfig(
        &mut self,
        name: &str,
        bindings: impl IntoIterator<Item = (String, String)>,
        insertion_cutoff: Timestamp,
    ) -> Result<&ConfigurationRecord, ConditionsError> {
        if self.configs.contains_key(name) {
            return Err(ConditionsError::DuplicateConfig(name.into()));
        }
        let c = ConfigurationRecord::new(name, bindings, insertion_cutoff)?;
        Ok(self.configs.entry(name.into()).or_insert(c))
    }

    pub fn lookup_config(
        &self,
        key: &ConditionKey,
        t: u64,
        config_name: &str,
    ) -> Result<&IovRecord, ConditionsError> {
        let c = self
            .configs
            .get(config_name)
            .ok_or_else(|| ConditionsError::UnknownConfig(config_name.into()))?;
        let rev = c
            .revision_for(&key.path)
            .ok_or_else(|| ConditionsError::UnboundPrefix(key.path.clone()))?;
        self.lookup(key, t, c.insertion_cutoff, rev)
    }

    /// Records of `(key, revision)` that win at some `t` when queried
    /// `as_of`, in shadowing order. Everything else is shadowed for good.
    pub fn visible_records(&self, key: &ConditionKey, revision: &str, as_of: Timestamp) -> Vec<&IovRecord> {
        let Some(h) = self.history(key, revision) else {
            return Vec::new();
        };
        let mut paint: BTreeMap<u64, (u64, usize)> = BTreeMap::new();
        for rank in 0..h.visible_prefix(as_of) {
            let iv = self.records[h.ranks[rank] as usize].validity;
            overpaint(&mut paint, iv, rank);
        }
        let winners: BTreeSet<usize> = paint.values().map(|&(_, r)| r).collect();
        winners
            .into_iter()
            .map(|r| &self.records[h.ranks[r] as usize])
            .collect()
    }

    /// Copies a record from another store, keeping its origin.
    fn adopt(&mut self, rec: &IovRecord, blob: &[u8]) {
        let payload = self.payloads.put(blob);
        let seq = self.next_seq;
        self.next_seq += 1;
        self.place(IovRecord {
            seq,
            payload,
            ..rec.clone()
        });
    }

    /// A self-contained store with the configuration `config_name` and, for
    /// keys matching `predicate`, just the records that configuration can
    /// ever return. Answers `lookup_config` like `self` on those keys.
    pub fn extract_subset(
        &self,
        predicate: impl Fn(&ConditionKey) -> bool,
        config_name: &str,
    ) -> Result<ConditionStore, ConditionsError> {
        let c = self
            .configs
            .get(config_name)
            .ok_or_else(|| ConditionsError::UnknownConfig(config_name.into()))?;
        let mut out = ConditionStore::new(&self.tag);
        out.configs.insert(c.name.clone(), c.clone());
        for key in self.histories.keys().filter(|k| predicate(k)) {
            let Some(rev) = c.revision_for(&key.path) else {
                continue;
            };
            for rec in self.visible_records(key, rev, c.insertion_cutoff) {
                out.adopt(rec, self.payloads.get(rec.payload).expect("payload present"));
            }
        }
        out.settle();
        out.last_inserted_at = out.records.iter().map(|r| r.inserted_at).max();
        Ok(out)
    }
}

/// Paints `iv` with `rank` over a map of disjoint pieces `begin -> (end, rank)`.
fn overpaint(paint: &mut BTreeMap<u64, (u64, usize)>, iv: Interval, rank: usize) {
    let (b, e) = (iv.begin, iv.end);
    if let Some((&pb, &(pe, pr))) = paint.range(..b).next_back() {
        if pe > b {
            paint.insert(pb, (b, pr));
            if pe > e {
                paint.insert(e, (pe, pr));
            }
        }
    }
    let covered: Vec<u64> = paint.range(b..e).map(|(&k, _)| k).collect();
    for k in covered {
        let (pe, pr) = paint.remove(&k).expect("key just listed");
        if pe > e {
            paint.insert(e, (pe, pr));
        }
    }
    paint.insert(b, (e, rank));
}

/// Copies every record of `source` that `target` lacks, with payloads.
/// Returns the number merged; sweeping again merges nothing.
pub fn sweep(source: &ConditionStore, target: &mut ConditionStore) -> usize {
    let mut merged = 0;
    for rec in &source.records {
        if target.origins.contains(&rec.origin) {
            continue;
        }
        let blob = source.payloads.get(rec.payload).expect("payload present");
        target.adopt(rec, blob);
        merged += 1;
    }
    target.settle();
    merged
}

impl core::fmt::Display for ConditionKey {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}#{}", self.path, self.condition_type)
    }
}

impl core::fmt::Display for Origin {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}:{}", self.tag, self.seq)
    }
}
