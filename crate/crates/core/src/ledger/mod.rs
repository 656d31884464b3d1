//! Permissioned, hash-chained, append-only block store.
//!
//! The DISCO is the only block producer. The first entry of block 0 is the
//! DISCO's self-signed genesis, which is also the trust anchor when a chain
//! is loaded from disk.

mod block;
mod store;

pub use block::{Block, Entry, MerkleRootEntry};
pub use store::{
    read_chain_bytes, read_chain_file, write_chain_bytes, write_chain_file, StoreError,
};

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use crate::crypto::{Digest, PublicKey};
use crate::transactions::{
    Admissible, GenesisTransaction, LedgerView, LoadControlTransaction, NodeRole, Reason,
};

#[derive(Debug, Error, Clone, PartialEq, Eq, serde::Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LedgerError {
    #[error("block height {found}, expected {expected}")]
    BadHeight { expected: u64, found: u64 },
    #[error("block {height}: prev_hash does not match the previous block")]
    BadPrevHash { height: u64 },
    #[error("block {height}: producer signature does not verify")]
    BadProducerSig { height: u64 },
    #[error("block {height}: entry {index} inadmissible ({reason})")]
    InadmissibleEntry {
        height: u64,
        index: usize,
        reason: Reason,
    },
    #[error("block {height}: malformed Merkle root entry")]
    BadRootEntry { height: u64 },
    #[error("chain does not start with the authority genesis")]
    MissingAuthority,
    #[error("transaction {0} not found")]
    NotFound(String),
}

type Location = (u64, usize);

#[derive(Debug, Clone)]
pub struct Ledger {
    authority: PublicKey,
    blocks: Vec<Block>,
    head_hash: Digest,
    by_id: HashMap<Digest, Location>,
    geneses: HashMap<PublicKey, Location>,
    heads: HashMap<PublicKey, Digest>,
}

impl Ledger {
    pub fn new(authority: PublicKey) -> Self {
        Self {
            authority,
            blocks: Vec::new(),
            head_hash: Digest::ZERO,
            by_id: HashMap::new(),
            geneses: HashMap::new(),
            heads: HashMap::new(),
        }
    }

    pub fn authority_key(&self) -> PublicKey {
        self.authority
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn height(&self) -> u64 {
        self.blocks.len() as u64
    }

    pub fn head_hash(&self) -> Digest {
        self.head_hash
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Validates `block` against the current head and appends it.
    pub fn append(&mut self, block: Block) -> Result<(), LedgerError> {
        self.validate(&block)?;
        let height = block.height;
        for (pos, entry) in block.entries.iter().enumerate() {
            if let Some(id) = entry.id() {
                self.by_id.insert(id, (height, pos));
            }
            match entry {
                Entry::Genesis(g) => {
                    self.geneses.insert(g.subject_pk, (height, pos));
                    self.heads.insert(g.subject_pk, g.id());
                }
                Entry::LoadControl(tx) => {
                    self.heads.insert(tx.pk_gen, tx.t_id);
                }
                Entry::MerkleRoot(_) => {}
            }
        }
        self.head_hash = block.hash();
        self.blocks.push(block);
        Ok(())
    }

    pub fn validate(&self, block: &Block) -> Result<(), LedgerError> {
        let expected = self.height();
        if block.height != expected {
            return Err(LedgerError::BadHeight {
                expected,
                found: block.height,
            });
        }
        let height = block.height;
        if block.prev_hash != self.head_hash {
            return Err(LedgerError::BadPrevHash { height });
        }
        if !block.signature_valid(&self.authority) {
            return Err(LedgerError::BadProducerSig { height });
        }
        let mut roots = 0;
        let mut pending = PendingView::new(self);
        for (index, entry) in block.entries.iter().enumerate() {
            let checked = match entry {
                Entry::MerkleRoot(m) => {
                    roots += 1;
                    if roots > 1 || m.leaf_count == 0 || m.period_id != block.period_id {
                        return Err(LedgerError::BadRootEntry { height });
                    }
                    continue;
                }
                Entry::LoadControl(tx) => tx.check(&pending),
                Entry::Genesis(g) => g.check(&pending),
            };
            checked.map_err(|reason| LedgerError::InadmissibleEntry {
                height,
                index,
                reason,
            })?;
            pending.add(entry);
        }
        if height == 0 && !starts_with_authority_genesis(block, &self.authority) {
            return Err(LedgerError::MissingAuthority);
        }
        Ok(())
    }

    pub fn find_transaction(&self, id: &Digest) -> Result<(u64, &Entry), LedgerError> {
        self.by_id
            .get(id)
            .map(|&(h, pos)| (h, &self.blocks[h as usize].entries[pos]))
            .ok_or_else(|| LedgerError::NotFound(id.to_hex()))
    }

    pub fn entries(&self) -> impl Iterator<Item = (u64, &Entry)> {
        self.blocks
            .iter()
            .flat_map(|b| b.entries.iter().map(move |e| (b.height, e)))
    }

    /// Root committed for `period_id`, if that period had any reports.
    pub fn merkle_root(&self, period_id: u64) -> Option<&MerkleRootEntry> {
        self.blocks
            .iter()
            .rev()
            .find(|b| b.period_id == period_id)
            .and_then(Block::merkle_root)
    }

    /// Last on-ledger transaction generated by `pk`, falling back to its genesis.
    pub fn chain_head_of(&self, pk: &PublicKey) -> Option<Digest> {
        self.heads.get(pk).copied()
    }
}

fn starts_with_authority_genesis(block: &Block, authority: &PublicKey) -> bool {
    matches!(block.entries.first(), Some(Entry::Genesis(g)) if g.role == NodeRole::Disco && g.subject_pk == *authority)
}

impl LedgerView for Ledger {
    fn authority(&self) -> PublicKey {
        self.authority
    }

    fn load_control(&self, t_id: &Digest) -> Option<&LoadControlTransaction> {
        match self.find_transaction(t_id) {
            Ok((_, Entry::LoadControl(tx))) => Some(tx),
            _ => None,
        }
    }

    fn genesis_of(&self, pk: &PublicKey) -> Option<&GenesisTransaction> {
        self.geneses
            .get(pk)
            .and_then(|&(h, pos)| match &self.blocks[h as usize].entries[pos] {
                Entry::Genesis(g) => Some(g),
                _ => None,
            })
    }

    fn contains_id(&self, id: &Digest) -> bool {
        self.by_id.contains_key(id)
    }
}

/// The ledger plus entries accepted earlier in the block being validated.
pub struct PendingView<'a> {
    base: &'a Ledger,
    txs: HashMap<Digest, &'a LoadControlTransaction>,
    geneses: HashMap<PublicKey, &'a GenesisTransaction>,
    ids: HashSet<Digest>,
}

impl<'a> PendingView<'a> {
    pub fn new(base: &'a Ledger) -> Self {
        Self {
            base,
            txs: HashMap::new(),
            geneses: HashMap::new(),
            ids: HashSet::new(),
        }
    }

    pub fn add(&mut self, entry: &'a Entry) {
        match entry {
            Entry::MerkleRoot(_) => {}
            Entry::LoadControl(tx) => {
                self.ids.insert(tx.t_id);
                self.txs.insert(tx.t_id, tx);
            }
            Entry::Genesis(g) => {
                self.ids.insert(g.id());
                self.geneses.insert(g.subject_pk, g);
            }
        }
    }
}

impl LedgerView for PendingView<'_> {
    fn authority(&self) -> PublicKey {
        self.base.authority
    }

    fn load_control(&self, t_id: &Digest) -> Option<&LoadControlTransaction> {
        self.txs
            .get(t_id)
            .copied()
            .or_else(|| self.base.load_control(t_id))
    }

    fn genesis_of(&self, pk: &PublicKey) -> Option<&GenesisTransaction> {
        self.geneses
            .get(pk)
            .copied()
            .or_else(|| self.base.genesis_of(pk))
    }

    fn contains_id(&self, id: &Digest) -> bool {
        self.ids.contains(id) || self.base.contains_id(id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct ChainCheck {
    pub valid: bool,
    pub blocks: u64,
    pub first_violation: Option<LedgerError>,
}

/// Rebuilds a ledger from `blocks`. The authority key is taken from the
/// genesis at the head of block 0.
pub fn replay(blocks: &[Block]) -> Result<Ledger, LedgerError> {
    let authority = match blocks.first().and_then(|b| b.entries.first()) {
        Some(Entry::Genesis(g)) if g.role == NodeRole::Disco => g.subject_pk,
        _ => return Err(LedgerError::MissingAuthority),
    };
    let mut ledger = Ledger::new(authority);
    for block in blocks {
        ledger.append(block.clone())?;
    }
    Ok(ledger)
}

/// Replays `blocks` from scratch. An empty chain is valid.
pub fn verify_chain(blocks: &[Block]) -> ChainCheck {
    let first_violation = if blocks.is_empty() {
        None
    } else {
        replay(blocks).err()
    };
    ChainCheck {
        valid: first_violation.is_none(),
        blocks: blocks.len() as u64,
        first_violation,
    }
}
