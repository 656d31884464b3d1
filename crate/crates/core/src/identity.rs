//! Rotating identifiers and the DISCO-side registry of shared secrets.
//!
//! A node picks an id, an additive pattern and a secret value at bootstrap
//! and shares them with the DISCO. After every accepted report both sides
//! move the id forward by the pattern (mod 2^128) and bump the nonce, so the
//! two copies stay in lockstep without ever sending the nonce on the wire.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::crypto::PublicKey;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IdentityError {
    #[error("id {0} is already registered")]
    DuplicateId(NodeId),
    #[error("owner {0} already has a registry record")]
    DuplicateOwner(PublicKey),
    #[error("no record for id {0}")]
    NotFound(NodeId),
}

/// 128-bit rotating identifier, serialized as 16 big-endian bytes.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct NodeId(pub u128);

impl NodeId {
    pub fn to_bytes(self) -> [u8; 16] {
        self.0.to_be_bytes()
    }

    pub fn wrapping_step(self, delta: u128, steps: u64) -> NodeId {
        NodeId(self.0.wrapping_add(delta.wrapping_mul(steps as u128)))
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NodeId({:032x})", self.0)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

/// The 32-byte value only the node and the DISCO know.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct SecretValue(pub [u8; 32]);

impl fmt::Debug for SecretValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretValue(..)")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeCredentials {
    pub current_id: NodeId,
    pub pattern_delta: u128,
    pub secret_value: SecretValue,
    pub nonce: u64,
}

impl NodeCredentials {
    pub fn new(id: NodeId, pattern_delta: u128, secret_value: SecretValue) -> Self {
        Self {
            current_id: id,
            pattern_delta,
            secret_value,
            nonce: 0,
        }
    }

    /// Next id in the pattern and next nonce.
    #[must_use]
    pub fn advance(&self) -> Self {
        self.advance_by(1)
    }

    #[must_use]
    pub fn advance_by(&self, steps: u64) -> Self {
        Self {
            current_id: self.current_id.wrapping_step(self.pattern_delta, steps),
            nonce: self.nonce + steps,
            ..*self
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegistryRecord {
    pub credentials: NodeCredentials,
    pub owner_pk: PublicKey,
}

impl RegistryRecord {
    pub fn current_id(&self) -> NodeId {
        self.credentials.current_id
    }

    pub fn nonce(&self) -> u64 {
        self.credentials.nonce
    }
}

/// Where a received id sits relative to a record's current position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Located {
    pub owner: PublicKey,
    /// 0 = current id, positive = the sender is ahead (lost messages),
    /// negative = an id that was already consumed.
    pub offset: i64,
}

/// DISCO's per-node secret state, indexed by current id.
///
/// With a resync window `W > 0` the index also holds the `W` ids on either
/// side of each record's current id. The window index is rebuilt for a record
/// each time it advances, so lookups stay O(1).
#[derive(Debug, Default)]
pub struct Registry {
    records: Vec<RegistryRecord>,
    by_owner: HashMap<PublicKey, usize>,
    current: HashMap<NodeId, usize>,
    window: u32,
    windowed: HashMap<NodeId, (usize, i64)>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_window(window: u32) -> Self {
        Self {
            window,
            ..Self::default()
        }
    }

    pub fn window(&self) -> u32 {
        self.window
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn register(
        &mut self,
        id: NodeId,
        pattern_delta: u128,
        secret_value: SecretValue,
        owner_pk: PublicKey,
    ) -> Result<(), IdentityError> {
        if self.current.contains_key(&id) {
            return Err(IdentityError::DuplicateId(id));
        }
        if self.by_owner.contains_key(&owner_pk) {
            return Err(IdentityError::DuplicateOwner(owner_pk));
        }
        let idx = self.records.len();
        self.records.push(RegistryRecord {
            credentials: NodeCredentials::new(id, pattern_delta, secret_value),
            owner_pk,
        });
        self.by_owner.insert(owner_pk, idx);
        self.current.insert(id, idx);
        self.index_window(idx);
        Ok(())
    }

    /// Exact lookup by current id.
    pub fn lookup(&self, id: NodeId) -> Result<&RegistryRecord, IdentityError> {
        self.current
            .get(&id)
            .map(|&idx| &self.records[idx])
            .ok_or(IdentityError::NotFound(id))
    }

    /// Lookup that also consults the resync window.
    pub fn locate(&self, id: NodeId) -> Option<Located> {
        if let Some(&idx) = self.current.get(&id) {
            return Some(Located {
                owner: self.records[idx].owner_pk,
                offset: 0,
            });
        }
        self.windowed.get(&id).map(|&(idx, offset)| Located {
            owner: self.records[idx].owner_pk,
            offset,
        })
    }

    pub fn record(&self, owner: &PublicKey) -> Option<&RegistryRecord> {
        self.by_owner.get(owner).map(|&idx| &self.records[idx])
    }

    pub fn records(&self) -> impl Iterator<Item = &RegistryRecord> {
        self.records.iter()
    }

    /// Moves `owner`'s record forward `steps` positions and reindexes it.
    pub fn advance(&mut self, owner: &PublicKey, steps: u64) -> Option<&RegistryRecord> {
        let idx = *self.by_owner.get(owner)?;
        self.unindex_window(idx);
        let old = self.records[idx].credentials.current_id;
        self.current.remove(&old);
        let next = self.records[idx].credentials.advance_by(steps);
        self.records[idx].credentials = next;
        self.current.insert(next.current_id, idx);
        self.index_window(idx);
        Some(&self.records[idx])
    }

    fn window_ids(&self, idx: usize) -> Vec<(NodeId, i64)> {
        let creds = &self.records[idx].credentials;
        if self.window == 0 || creds.pattern_delta == 0 {
            return Vec::new();
        }
        let delta = creds.pattern_delta;
        let id = creds.current_id.0;
        (1..=self.window as u64)
            .flat_map(|j| {
                let step = delta.wrapping_mul(j as u128);
                [
                    (NodeId(id.wrapping_add(step)), j as i64),
                    (NodeId(id.wrapping_sub(step)), -(j as i64)),
                ]
            })
            .collect()
    }

    fn index_window(&mut self, idx: usize) {
        for (id, offset) in self.window_ids(idx) {
            self.windowed.insert(id, (idx, offset));
        }
    }

    fn unindex_window(&mut self, idx: usize) {
        for (id, _) in self.window_ids(idx) {
            if matches!(self.windowed.get(&id), Some(&(owner, _)) if owner == idx) {
                self.windowed.remove(&id);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::keygen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;
    use std::time::Instant;

    fn creds(id: u128, delta: u128) -> NodeCredentials {
        NodeCredentials::new(NodeId(id), delta, SecretValue([3; 32]))
    }

    fn owner(n: u8) -> PublicKey {
        keygen(&[n; 32]).unwrap().public()
    }

    #[test]
    fn zero_pattern_keeps_id_and_bumps_nonce() {
        let next = creds(42, 0).advance();
        assert_eq!(next.current_id, NodeId(42));
        assert_eq!(next.nonce, 1);
    }

    #[test]
    fn id_wraps_modulo_2_pow_128() {
        let next = creds(u128::MAX, 1).advance();
        assert_eq!(next.current_id, NodeId(0));
    }

    #[test]
    fn repeated_advance_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let start: u128 = rng.gen();
            let delta: u128 = rng.gen();
            let k: u64 = rng.gen_range(0..=1_000);
            let mut c = creds(start, delta);
            for _ in 0..k {
                c = c.advance();
            }
            let expected = start.wrapping_add(delta.wrapping_mul(k as u128));
            assert_eq!(c.current_id, NodeId(expected));
            assert_eq!(c.nonce, k);
        }
    }

    #[test]
    fn register_lookup_and_duplicates() {
        let mut reg = Registry::new();
        reg.register(NodeId(1), 5, SecretValue([1; 32]), owner(1))
            .unwrap();
        let rec = reg.lookup(NodeId(1)).unwrap();
        assert_eq!(rec.nonce(), 0);
        assert_eq!(rec.owner_pk, owner(1));
        assert_eq!(
            reg.register(NodeId(1), 9, SecretValue([2; 32]), owner(2)),
            Err(IdentityError::DuplicateId(NodeId(1)))
        );
        assert_eq!(
            reg.lookup(NodeId(77)),
            Err(IdentityError::NotFound(NodeId(77)))
        );
    }

    #[test]
    fn stale_id_is_not_found_after_advance() {
        let mut reg = Registry::new();
        reg.register(NodeId(10), 3, SecretValue([1; 32]), owner(1))
            .unwrap();
        reg.advance(&owner(1), 1);
        assert!(reg.lookup(NodeId(10)).is_err());
        assert!(reg.lookup(NodeId(13)).is_ok());
        assert_eq!(reg.locate(NodeId(10)), None);
    }

    #[test]
    fn lockstep_advance_keeps_lookup_working() {
        let mut reg = Registry::new();
        let mut node = creds(0xdead_beef, 0x1234_5678_9abc);
        reg.register(
            node.current_id,
            node.pattern_delta,
            node.secret_value,
            owner(1),
        )
        .unwrap();
        for _ in 0..100 {
            node = node.advance();
            reg.advance(&owner(1), 1);
            let rec = reg.lookup(node.current_id).unwrap();
            assert_eq!(rec.credentials, node);
        }
    }

    #[test]
    fn window_locates_ahead_and_stale_ids() {
        let mut reg = Registry::with_window(2);
        reg.register(NodeId(100), 10, SecretValue([1; 32]), owner(1))
            .unwrap();
        reg.advance(&owner(1), 2); // current 120
        let at = |id| reg.locate(NodeId(id)).map(|l| l.offset);
        assert_eq!(at(120), Some(0));
        assert_eq!(at(130), Some(1));
        assert_eq!(at(140), Some(2));
        assert_eq!(at(150), None);
        assert_eq!(at(110), Some(-1));
        assert_eq!(at(100), Some(-2));
        assert_eq!(at(90), None);
    }

    #[test]
    fn rotated_ids_do_not_repeat_at_small_scale() {
        for delta in [1u128, 7, 1 << 64, u128::MAX] {
            let mut c = creds(5, delta);
            let mut seen = HashSet::new();
            for _ in 0..2_000 {
                assert!(seen.insert(c.current_id));
                c = c.advance();
            }
        }
    }

    fn time_lookups(size: usize) -> f64 {
        let mut reg = Registry::new();
        let mut rng = ChaCha8Rng::seed_from_u64(size as u64);
        let mut ids = Vec::with_capacity(size);
        for i in 0..size {
            let id = NodeId(rng.gen());
            let mut seed = [0u8; 32];
            seed[..8].copy_from_slice(&(i as u64).to_be_bytes());
            // Owner keys only need to be distinct for the index.
            let pk = PublicKey::from_array(seed);
            reg.register(id, 1, SecretValue([0; 32]), pk).unwrap();
            ids.push(id);
        }
        let rounds = 200_000;
        let start = Instant::now();
        let mut hits = 0usize;
        for i in 0..rounds {
            if reg.lookup(ids[(i * 7919) % size]).is_ok() {
                hits += 1;
            }
        }
        assert_eq!(hits, rounds);
        start.elapsed().as_secs_f64() / rounds as f64
    }

    #[test]
    fn lookup_latency_is_flat_across_registry_sizes() {
        let small = time_lookups(10);
        let large = time_lookups(10_000);
        // Loose bound: an O(n) scan would be ~1000x slower at 10k.
        assert!(
            large < small * 20.0 + 1e-6,
            "small={small:e} large={large:e}"
        );
    }
}
