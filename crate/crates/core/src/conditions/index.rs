//! Stabbing index over one (key, revision) history.
//!
//! Records are ranked by shadowing priority. A lookup asks for the
//! highest-ranked record among the first `p` ranks (those inserted no later
//! than `as_of`) whose validity interval contains `t`.
//!
//! Ranks are the leaves of an implicit segment tree. Every complete node
//! stores the upper envelope of its leaves: the time axis cut into pieces,
//! each labelled with the highest rank covering it. A query climbs from the
//! prefix boundary and probes the left siblings on the way, so one binary
//! search per level answers it. A node's envelope is built once, when its
//! last leaf arrives, by overlaying its right child on its left.

use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Interval {
    pub begin: u64,
    pub end: u64,
}

impl Interval {
    pub fn new(begin: u64, end: u64) -> Option<Self> {
        (begin < end).then_some(Self { begin, end })
    }

    pub fn contains(&self, t: u64) -> bool {
        self.begin <= t && t < self.end
    }
}

/// `[begin, end)` is topped by `rank`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Piece {
    begin: u64,
    end: u64,
    rank: u32,
}

/// Lays `over` on top of `under`; both are sorted, disjoint piece lists.
fn overlay(under: impl Iterator<Item = Piece>, over: impl Iterator<Item = Piece>, out: &mut Vec<Piece>) {
    let mut under = under;
    let mut over = over.peekable();
    let mut cur = under.next();
    loop {
        match (cur, over.peek().copied()) {
            (None, None) => break,
            (Some(u), o) if o.is_none_or(|o| u.begin < o.begin) => {
                let stop = o.map_or(u.end, |o| u.end.min(o.begin));
                out.push(Piece { end: stop, ..u });
                cur = if stop < u.end {
                    Some(Piece { begin: stop, ..u })
                } else {
                    under.next()
                };
            }
            (_, Some(o)) => {
                over.next();
                out.push(o);
                while let Some(u) = cur {
                    if u.end > o.end {
                        cur = Some(Piece {
                            begin: u.begin.max(o.end),
                            ..u
                        });
                        break;
                    }
                    cur = under.next();
                }
            }
            (Some(_), None) => unreachable!("guard holds when nothing is on top"),
        }
    }
}

const SCAN_LEVEL: usize = 4;

/// Keys per search block: one cache line of `u64`.
const BLOCK: usize = 8;

/// Envelopes of the complete nodes of one level, back to back.
///
/// Each node's piece starts are padded to a whole number of blocks, and
/// `fence` holds the first start of every block, so a probe binary searches
/// the node's stretch of the fence and then reads a single block.
#[derive(Debug, Clone, Default)]
struct Level {
    begins: Vec<u64>,
    /// `(end, rank)` of the piece with the same index.
    tails: Vec<(u64, u32)>,
    fence: Vec<u64>,
    /// Node `i` owns blocks `bounds[i]..bounds[i + 1]`.
    bounds: Vec<u32>,
}

impl Level {
    fn new() -> Self {
        Self {
            bounds: alloc::vec![0],
            ..Self::default()
        }
    }

    fn pieces(&self, i: usize) -> impl Iterator<Item = Piece> + '_ {
        let (lo, hi) = (
            self.bounds[i] as usize * BLOCK,
            self.bounds[i + 1] as usize * BLOCK,
        );
        (lo..hi).filter(|&k| self.begins[k] != PAD).map(|k| Piece {
            begin: self.begins[k],
            end: self.tails[k].0,
            rank: self.tails[k].1,
        })
    }

    fn stab(&self, i: usize, t: u64) -> Option<usize> {
        let (lo, hi) = (self.bounds[i] as usize, self.bounds[i + 1] as usize);
        let b = lo + self.fence[lo..hi].partition_point(|&f| f <= t);
        if b == lo {
            return None;
        }
        let block = (b - 1) * BLOCK..b * BLOCK;
        let k = block.start + self.begins[block].partition_point(|&x| x <= t);
        let (end, rank) = self.tails[k - 1];
        (t < end).then_some(rank as usize)
    }

    fn push(&mut self, pieces: &[Piece]) {
        for p in pieces {
            self.begins.push(p.begin);
            self.tails.push((p.end, p.rank));
        }
        while !self.begins.len().is_multiple_of(BLOCK) {
            self.begins.push(PAD);
            self.tails.push((0, 0));
        }
        let from = self.fence.len() * BLOCK;
        self.fence.extend(self.begins[from..].iter().step_by(BLOCK));
        self.bounds.push(self.fence.len() as u32);
    }
}

/// Filler start; no probe time reaches it because every end is larger.
const PAD: u64 = u64::MAX;

#[derive(Debug, Clone, Default)]
pub struct StabIndex {
    leaves: Vec<Interval>,
    /// `levels[l - SCAN_LEVEL - 1]` holds the complete nodes of level `l`;
    /// node `i` spans ranks `[i << l, (i + 1) << l)`. Below that, leaves
    /// are scanned directly.
    levels: Vec<Level>,
    scratch: Vec<Piece>,
}

impl StabIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_intervals(ivs: impl IntoIterator<Item = Interval>) -> Self {
        let mut s = Self::new();
        for iv in ivs {
            s.push(iv);
        }
        s
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    fn level(&self, l: usize) -> &Level {
        &self.levels[l - SCAN_LEVEL - 1]
    }

    /// Appends the next rank.
    pub fn push(&mut self, iv: Interval) {
        let rank = self.leaves.len();
        assert!(rank < u32::MAX as usize, "stab index full");
        self.leaves.push(iv);
        let n = rank + 1;
        let mut l = SCAN_LEVEL + 1;
        while n.is_multiple_of(1 << l) {
            let i = rank >> l;
            let mut built = core::mem::take(&mut self.scratch);
            built.clear();
            if l == SCAN_LEVEL + 1 {
                let mut tmp = Vec::new();
                for r in i << l..n {
                    let top = Piece {
                        begin: self.leaves[r].begin,
                        end: self.leaves[r].end,
                        rank: r as u32,
                    };
                    tmp.clear();
                    overlay(built.iter().copied(), core::iter::once(top), &mut tmp);
                    core::mem::swap(&mut built, &mut tmp);
                }
            } else {
                let below = self.level(l - 1);
                overlay(below.pieces(2 * i), below.pieces(2 * i + 1), &mut built);
            }
            if self.levels.len() < l - SCAN_LEVEL {
                self.levels.push(Level::new());
            }
            self.levels[l - SCAN_LEVEL - 1].push(&built);
            self.scratch = built;
            l += 1;
        }
    }

    /// Highest rank below `prefix` whose interval contains `t`.
    ///
    /// Starts at the prefix boundary and climbs; the complete left sibling
    /// at each level holds the next lower block of ranks, so the first one
    /// that covers `t` has the answer.
    pub fn stab(&self, prefix: usize, t: u64) -> Option<usize> {
        let prefix = prefix.min(self.leaves.len());
        if prefix == 0 {
            return None;
        }
        let mut i = (prefix - 1) >> SCAN_LEVEL;
        if let Some(r) = self.scan(i << SCAN_LEVEL, prefix, t) {
            return Some(r);
        }
        let mut l = SCAN_LEVEL;
        while i > 0 {
            if i & 1 == 1 {
                let hit = if l == SCAN_LEVEL {
                    self.scan((i - 1) << l, i << l, t)
                } else {
                    self.level(l).stab(i - 1, t)
                };
                if hit.is_some() {
                    return hit;
                }
            }
            i >>= 1;
            l += 1;
        }
        None
    }

    fn scan(&self, lo: usize, hi: usize, t: u64) -> Option<usize> {
        (lo..hi).rev().find(|&r| self.leaves[r].contains(t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn iv(b: u64, e: u64) -> Interval {
        Interval::new(b, e).unwrap()
    }

    fn pc(begin: u64, end: u64, rank: u32) -> Piece {
        Piece { begin, end, rank }
    }

    #[test]
    fn overlay_trims_and_splits_what_is_below() {
        let mut out = Vec::new();
        let under = [pc(0, 10, 0), pc(12, 20, 1), pc(30, 40, 2)];
        let over = [pc(5, 15, 3), pc(18, 19, 4), pc(45, 50, 5)];
        overlay(under.into_iter(), over.into_iter(), &mut out);
        assert_eq!(
            out,
            [
                pc(0, 5, 0),
                pc(5, 15, 3),
                pc(15, 18, 1),
                pc(18, 19, 4),
                pc(19, 20, 1),
                pc(30, 40, 2),
                pc(45, 50, 5)
            ]
        );
    }

    #[test]
    fn empty_interval_rejected() {
        assert_eq!(Interval::new(5, 5), None);
        assert_eq!(Interval::new(6, 5), None);
    }

    fn brute(leaves: &[Interval], prefix: usize, t: u64) -> Option<usize> {
        (0..prefix.min(leaves.len()))
            .rev()
            .find(|&r| leaves[r].contains(t))
    }

    proptest! {
        #[test]
        fn overlay_matches_pointwise_top(
            under in proptest::collection::vec((0u64..60, 1u64..15), 0..20),
            over in proptest::collection::vec((0u64..60, 1u64..15), 0..20),
        ) {
            // Disjoint, sorted piece lists from arbitrary intervals.
            let disjoint = |ivs: Vec<(u64, u64)>, base: u32| {
                let mut out: Vec<Piece> = Vec::new();
                for (k, (b, w)) in ivs.into_iter().enumerate() {
                    let mut tmp = Vec::new();
                    overlay(out.iter().copied(), core::iter::once(pc(b, b + w, base + k as u32)), &mut tmp);
                    out = tmp;
                }
                out
            };
            let u = disjoint(under, 0);
            let o = disjoint(over, 100);
            let mut out = Vec::new();
            overlay(u.iter().copied(), o.iter().copied(), &mut out);
            let at = |ps: &[Piece], t: u64| ps.iter().find(|p| p.begin <= t && t < p.end).map(|p| p.rank);
            for t in 0..80 {
                prop_assert_eq!(at(&out, t), at(&o, t).or(at(&u, t)));
            }
            for w in out.windows(2) {
                prop_assert!(w[0].end <= w[1].begin && w[0].begin < w[0].end);
            }
        }

        #[test]
        fn stab_matches_backward_scan(
            ivs in proptest::collection::vec((0u64..100, 1u64..30), 1..70),
            probes in proptest::collection::vec((0usize..80, 0u64..140), 50),
        ) {
            let leaves: Vec<Interval> = ivs.into_iter().map(|(b, w)| iv(b, b + w)).collect();
            let idx = StabIndex::from_intervals(leaves.iter().copied());
            for (p, t) in probes {
                prop_assert_eq!(idx.stab(p, t), brute(&leaves, p, t));
            }
        }

        #[test]
        fn stab_matches_backward_scan_across_many_levels(
            ivs in proptest::collection::vec((0u64..2_000, 1u64..40), 1..600),
            probes in proptest::collection::vec((0usize..650, 0u64..2_100), 100),
        ) {
            let leaves: Vec<Interval> = ivs.into_iter().map(|(b, w)| iv(b, b + w)).collect();
            let idx = StabIndex::from_intervals(leaves.iter().copied());
            for (p, t) in probes {
                prop_assert_eq!(idx.stab(p, t), brute(&leaves, p, t));
            }
        }
    }
}
