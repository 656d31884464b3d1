//! Binary Merkle tree over a period's report digests.
//!
//! `parent = H(left || right)`; an odd node at the end of a level is paired
//! with itself. A one-leaf tree's root is the leaf.

use thiserror::Error;

use crate::codec::{self, CodecError, Decode, Encode, Reader, Writer, TAG_MERKLE_PROOF};
use crate::crypto::{digest_concat, Digest};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MerkleError {
    #[error("cannot build a tree without leaves")]
    Empty,
    #[error("leaf index {index} out of range for {len} leaves")]
    Index { index: usize, len: usize },
}

/// Which side of the running hash the sibling sits on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MerkleProof {
    pub leaf_index: u32,
    pub siblings: Vec<(Digest, Side)>,
}

#[derive(Clone, Debug)]
pub struct MerkleTree {
    /// `levels[0]` are the leaves, the last level is the root.
    levels: Vec<Vec<Digest>>,
}

fn hash_pair(left: &Digest, right: &Digest) -> Digest {
    digest_concat(&[left.as_bytes(), right.as_bytes()])
}

impl MerkleTree {
    pub fn build(leaves: Vec<Digest>) -> Result<Self, MerkleError> {
        if leaves.is_empty() {
            return Err(MerkleError::Empty);
        }
        let mut levels = vec![leaves];
        while levels.last().map_or(0, Vec::len) > 1 {
            let level = levels.last().expect("non-empty");
            let next = level
                .chunks(2)
                .map(|pair| hash_pair(&pair[0], pair.get(1).unwrap_or(&pair[0])))
                .collect();
            levels.push(next);
        }
        Ok(Self { levels })
    }

    pub fn root(&self) -> Digest {
        self.levels.last().expect("at least one level")[0]
    }

    pub fn leaves(&self) -> &[Digest] {
        &self.levels[0]
    }

    pub fn len(&self) -> usize {
        self.levels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn prove(&self, index: usize) -> Result<MerkleProof, MerkleError> {
        if index >= self.len() {
            return Err(MerkleError::Index {
                index,
                len: self.len(),
            });
        }
        let mut siblings = Vec::with_capacity(self.levels.len() - 1);
        let mut i = index;
        for level in &self.levels[..self.levels.len() - 1] {
            let entry = if i.is_multiple_of(2) {
                (*level.get(i + 1).unwrap_or(&level[i]), Side::Right)
            } else {
                (level[i - 1], Side::Left)
            };
            siblings.push(entry);
            i /= 2;
        }
        Ok(MerkleProof {
            leaf_index: index as u32,
            siblings,
        })
    }
}

/// Recomputes the root from `leaf` and checks it against `root`. The sides
/// must also agree with the bits of `leaf_index`, which pins the position.
pub fn verify_proof(root: &Digest, leaf: &Digest, proof: &MerkleProof) -> bool {
    if proof.siblings.len() < 32 && (proof.leaf_index as u64) >> proof.siblings.len() != 0 {
        return false;
    }
    let mut acc = *leaf;
    for (level, (sibling, side)) in proof.siblings.iter().enumerate() {
        let bit_set = level < 32 && (proof.leaf_index >> level) & 1 == 1;
        acc = match side {
            Side::Left if bit_set => hash_pair(sibling, &acc),
            Side::Right if !bit_set => hash_pair(&acc, sibling),
            _ => return false,
        };
    }
    acc == *root
}

impl Encode for MerkleProof {
    fn encode_to(&self, w: &mut Writer) {
        w.u8(TAG_MERKLE_PROOF)
            .u32(self.leaf_index)
            .u32(self.siblings.len() as u32);
        for (d, side) in &self.siblings {
            w.u8(match side {
                Side::Left => 0,
                Side::Right => 1,
            })
            .digest(d);
        }
    }
}

impl Decode for MerkleProof {
    fn decode_from(r: &mut Reader<'_>) -> codec::Result<Self> {
        r.expect_tag(TAG_MERKLE_PROOF)?;
        let leaf_index = r.u32()?;
        let n = r.u32()? as usize;
        if n > r.remaining() / 33 {
            return Err(CodecError::Length {
                field: "proof.siblings",
                len: n,
            });
        }
        let siblings = (0..n)
            .map(|_| {
                let side = match r.u8()? {
                    0 => Side::Left,
                    1 => Side::Right,
                    _ => return Err(CodecError::InvalidField("proof.side")),
                };
                Ok((r.digest()?, side))
            })
            .collect::<codec::Result<Vec<_>>>()?;
        Ok(Self {
            leaf_index,
            siblings,
        })
    }
}
