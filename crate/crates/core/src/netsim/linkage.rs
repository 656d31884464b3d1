//! Linking rotating DL ids without registry knowledge.
//!
//! Ids advance by a fixed per-node step, so any three ids `a, b, c` with
//! `b - a == c - b` (mod 2^128) probably belong to one node. The tracker
//! joins such triples into clusters and scores how many observed reports
//! end up in a cluster dominated by their true sender.

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::Serialize;

use super::NodeIndex;

const DEFAULT_WINDOW: usize = 1024;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinkageReport {
    /// Distinct DL ids observed.
    pub observed: u64,
    /// Ids that ended up in a cluster of three or more.
    pub linked: u64,
    /// Linked ids whose cluster majority is their true sender.
    pub attributed: u64,
    pub clusters: u64,
    /// `attributed / observed`, 0 when nothing was observed.
    pub score: f64,
    /// Distinct public keys seen in load-control traffic.
    pub public_keys_seen: u64,
}

#[derive(Clone, Debug)]
pub struct LinkageTracker {
    window: usize,
    ids: Vec<u128>,
    senders: Vec<NodeIndex>,
    index: HashMap<u128, usize>,
    parent: Vec<usize>,
    recent: VecDeque<usize>,
}

impl Default for LinkageTracker {
    fn default() -> Self {
        Self::with_window(DEFAULT_WINDOW)
    }
}

impl LinkageTracker {
    /// `window` bounds how many recent ids each new id is compared with.
    pub fn with_window(window: usize) -> Self {
        Self {
            window: window.max(2),
            ids: Vec::new(),
            senders: Vec::new(),
            index: HashMap::new(),
            parent: Vec::new(),
            recent: VecDeque::new(),
        }
    }

    pub fn observed(&self) -> usize {
        self.ids.len()
    }

    /// Records an id. `sender` is ground truth for scoring only.
    pub fn observe(&mut self, id: u128, sender: NodeIndex) {
        if self.index.contains_key(&id) {
            return;
        }
        let c = self.ids.len();
        self.ids.push(id);
        self.senders.push(sender);
        self.parent.push(c);
        self.index.insert(id, c);
        for k in 0..self.recent.len() {
            let b = self.recent[k];
            let step = id.wrapping_sub(self.ids[b]);
            let prev = self.ids[b].wrapping_sub(step);
            if let Some(&a) = self.index.get(&prev) {
                if a != c {
                    self.union(a, b);
                    self.union(b, c);
                }
            }
        }
        self.recent.push_back(c);
        if self.recent.len() > self.window {
            self.recent.pop_front();
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.parent[hi] = lo;
        }
    }

    pub fn report(&self, public_keys_seen: u64) -> LinkageReport {
        let mut uf = self.clone();
        let mut clusters: BTreeMap<usize, BTreeMap<NodeIndex, u64>> = BTreeMap::new();
        for i in 0..uf.ids.len() {
            let root = uf.find(i);
            *clusters
                .entry(root)
                .or_default()
                .entry(uf.senders[i])
                .or_default() += 1;
        }
        let mut linked = 0;
        let mut attributed = 0;
        let mut count = 0;
        for members in clusters.values() {
            let size: u64 = members.values().sum();
            if size < 3 {
                continue;
            }
            count += 1;
            linked += size;
            attributed += members.values().max().copied().unwrap_or(0);
        }
        let observed = self.ids.len() as u64;
        LinkageReport {
            observed,
            linked,
            attributed,
            clusters: count,
            score: if observed == 0 {
                0.0
            } else {
                attributed as f64 / observed as f64
            },
            public_keys_seen,
        }
    }
}
