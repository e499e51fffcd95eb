//! Hierarchical collection namespace whose nodes never exceed a fixed entry
//! limit.
//!
//! Each directory is a tree of nodes. A node starts as a leaf mapping path
//! segments to slots; when an insertion would push it past the limit, it is
//! turned into a split node with `fanout = min(16, limit)` child shards and
//! its entries are redistributed by one hash digit of the segment. Digits
//! are drawn from a hash salted by shard depth, so segments that collide at
//! one depth are separated at the next.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::hash;

pub const DEFAULT_NODE_LIMIT: usize = 65536;
const MAX_FANOUT: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CollectionId(pub u32);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Slot {
    dir: Option<NodeId>,
    collection: Option<CollectionId>,
}

#[derive(Debug, Clone)]
enum Body {
    Leaf(BTreeMap<String, Slot>),
    Split(Vec<NodeId>),
}

#[derive(Debug, Clone)]
struct Node {
    depth: u32,
    body: Body,
}

impl Node {
    fn leaf(depth: u32) -> Self {
        Node {
            depth,
            body: Body::Leaf(BTreeMap::new()),
        }
    }

    fn entry_count(&self) -> usize {
        match &self.body {
            Body::Leaf(m) => m.len(),
            Body::Split(b) => b.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum PathError {
    #[error("path must start with `/` and have non-empty segments without whitespace")]
    Invalid,
    #[error("path already bound")]
    Duplicate,
}

/// Splits `/a/b/c` into `["a", "b", "c"]`, rejecting malformed paths.
pub fn segments(path: &str) -> Result<Vec<&str>, PathError> {
    let rest = path.strip_prefix('/').ok_or(PathError::Invalid)?;
    let segs: Vec<&str> = rest.split('/').collect();
    let ok = segs
        .iter()
        .all(|s| !s.is_empty() && !s.chars().any(char::is_whitespace));
    if ok {
        Ok(segs)
    } else {
        Err(PathError::Invalid)
    }
}

#[derive(Debug, Clone)]
pub struct Namespace {
    nodes: Vec<Node>,
    limit: usize,
    fanout: usize,
    /// Node visits performed by the last mutating call.
    last_visits: u64,
}

impl Default for Namespace {
    fn default() -> Self {
        Self::new(DEFAULT_NODE_LIMIT)
    }
}

impl Namespace {
    pub const ROOT: NodeId = NodeId(0);

    /// # Panics
    /// If `limit < 2`; a node must be able to hold at least two shards.
    pub fn new(limit: usize) -> Self {
        assert!(limit >= 2, "namespace node limit must be at least 2");
        Self {
            nodes: alloc::vec![Node::leaf(0)],
            limit,
            fanout: limit.min(MAX_FANOUT),
            last_visits: 0,
        }
    }

    pub fn limit(&self) -> usize {
        self.limit
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn last_visits(&self) -> u64 {
        self.last_visits
    }

    pub fn max_entry_count(&self) -> usize {
        self.nodes.iter().map(Node::entry_count).max().unwrap_or(0)
    }

    fn digit(&self, depth: u32, seg: &str) -> usize {
        (hash::salted(u64::from(depth), seg.as_bytes()) % self.fanout as u64) as usize
    }

    fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0 as usize]
    }

    fn node_mut(&mut self, id: NodeId) -> &mut Node {
        &mut self.nodes[id.0 as usize]
    }

    /// The leaf within directory `dir` that does or would hold `seg`.
    fn leaf_for(&self, dir: NodeId, seg: &str, visits: &mut u64) -> NodeId {
        let mut cur = dir;
        loop {
            *visits += 1;
            let node = self.node(cur);
            match &node.body {
                Body::Leaf(_) => return cur,
                Body::Split(buckets) => cur = buckets[self.digit(node.depth, seg)],
            }
        }
    }

    fn slot(&self, dir: NodeId, seg: &str, visits: &mut u64) -> Option<Slot> {
        let leaf = self.leaf_for(dir, seg, visits);
        match &self.node(leaf).body {
            Body::Leaf(m) => m.get(seg).copied(),
            Body::Split(_) => unreachable!("leaf_for returns leaves"),
        }
    }

    /// Deepest existing directory along the parent chain of `path`. This is
    /// the only pre-existing node an insertion of `path` mutates.
    pub fn metadata_node(&self, path: &str) -> Result<NodeId, PathError> {
        let segs = segments(path)?;
        let mut dir = Self::ROOT;
        let mut visits = 0;
        for seg in &segs[..segs.len() - 1] {
            match self.slot(dir, seg, &mut visits).and_then(|s| s.dir) {
                Some(d) => dir = d,
                None => break,
            }
        }
        Ok(dir)
    }

    pub fn lookup(&self, path: &str) -> Option<CollectionId> {
        let segs = segments(path).ok()?;
        let mut dir = Self::ROOT;
        let mut visits = 0;
        let (last, parents) = segs.split_last()?;
        for seg in parents {
            dir = self.slot(dir, seg, &mut visits)?.dir?;
        }
        self.slot(dir, last, &mut visits)?.collection
    }

    pub fn insert(&mut self, path: &str, id: CollectionId) -> Result<(), PathError> {
        let segs = segments(path)?;
        if self.lookup(path).is_some() {
            return Err(PathError::Duplicate);
        }
        let mut visits = 0;
        let (last, parents) = segs.split_last().ok_or(PathError::Invalid)?;
        let mut dir = Self::ROOT;
        for seg in parents {
            let slot = self.slot(dir, seg, &mut visits).unwrap_or_default();
            dir = match slot.dir {
                Some(d) => d,
                None => {
                    let child = self.alloc(Node::leaf(0));
                    self.put(
                        dir,
                        seg,
                        Slot {
                            dir: Some(child),
                            ..slot
                        },
                        &mut visits,
                    );
                    child
                }
            };
        }
        let slot = self.slot(dir, last, &mut visits).unwrap_or_default();
        self.put(
            dir,
            last,
            Slot {
                collection: Some(id),
                ..slot
            },
            &mut visits,
        );
        self.last_visits = visits;
        Ok(())
    }

    fn alloc(&mut self, node: Node) -> NodeId {
        let id = NodeId(u32::try_from(self.nodes.len()).expect("namespace node ids exhausted"));
        self.nodes.push(node);
        id
    }

    /// Inserts or overwrites `seg` in directory `dir`, splitting the target
    /// leaf first if the insertion would exceed the limit.
    fn put(&mut self, dir: NodeId, seg: &str, slot: Slot, visits: &mut u64) {
        loop {
            let leaf = self.leaf_for(dir, seg, visits);
            let limit = self.limit;
            let Body::Leaf(map) = &mut self.node_mut(leaf).body else {
                unreachable!("leaf_for returns leaves");
            };
            if map.contains_key(seg) || map.len() < limit {
                map.insert(seg.into(), slot);
                return;
            }
            self.split(leaf);
        }
    }

    fn split(&mut self, leaf: NodeId) {
        let depth = self.node(leaf).depth;
        let buckets: Vec<NodeId> = (0..self.fanout)
            .map(|_| self.alloc(Node::leaf(depth + 1)))
            .collect();
        let old = core::mem::replace(&mut self.node_mut(leaf).body, Body::Split(buckets.clone()));
        let Body::Leaf(entries) = old else {
            unreachable!("only leaves are split");
        };
        for (seg, slot) in entries {
            let b = buckets[self.digit(depth, &seg)];
            if let Body::Leaf(m) = &mut self.node_mut(b).body {
                m.insert(seg, slot);
            }
        }
    }

    /// Every collection whose path starts with `prefix`, sorted by path.
    pub fn list(&self, prefix: &str) -> Vec<(String, CollectionId)> {
        let mut out = Vec::new();
        self.walk_dir(Self::ROOT, &mut String::new(), &mut |path, id| {
            if path.starts_with(prefix) {
                out.push((String::from(path), id));
            }
        });
        out.sort();
        out
    }

    fn walk_dir(&self, dir: NodeId, path: &mut String, f: &mut dyn FnMut(&str, CollectionId)) {
        let mut stack = alloc::vec![dir];
        let mut entries: Vec<(&String, &Slot)> = Vec::new();
        while let Some(n) = stack.pop() {
            match &self.node(n).body {
                Body::Leaf(m) => entries.extend(m.iter()),
                Body::Split(b) => stack.extend(b.iter().copied()),
            }
        }
        for (seg, slot) in entries {
            let len = path.len();
            path.push('/');
            path.push_str(seg);
            if let Some(id) = slot.collection {
                f(path, id);
            }
            if let Some(d) = slot.dir {
                self.walk_dir(d, path, f);
            }
            path.truncate(len);
        }
    }
}
