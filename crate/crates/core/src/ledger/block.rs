use crate::codec::{
    self, CodecError, Decode, Encode, Reader, Writer, TAG_BLOCK, TAG_GENESIS, TAG_LOAD_CONTROL,
    TAG_MERKLE_ROOT,
};
use crate::crypto::{digest, verify, Digest, KeyPair, PublicKey, Signature};
use crate::transactions::{GenesisTransaction, LoadControlTransaction};

/// Commitment to one period's accepted DL transactions. The transactions
/// themselves never reach the ledger.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MerkleRootEntry {
    pub period_id: u64,
    pub root: Digest,
    pub leaf_count: u32,
}

impl Encode for MerkleRootEntry {
    fn encode_to(&self, w: &mut Writer) {
        w.u8(TAG_MERKLE_ROOT)
            .u64(self.period_id)
            .digest(&self.root)
            .u32(self.leaf_count);
    }
}

impl Decode for MerkleRootEntry {
    fn decode_from(r: &mut Reader<'_>) -> codec::Result<Self> {
        r.expect_tag(TAG_MERKLE_ROOT)?;
        Ok(Self {
            period_id: r.u64()?,
            root: r.digest()?,
            leaf_count: r.u32()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Entry {
    MerkleRoot(MerkleRootEntry),
    LoadControl(LoadControlTransaction),
    Genesis(GenesisTransaction),
}

impl Entry {
    /// t_id for load-control entries, genesis id for geneses.
    pub fn id(&self) -> Option<Digest> {
        match self {
            Entry::MerkleRoot(_) => None,
            Entry::LoadControl(tx) => Some(tx.t_id),
            Entry::Genesis(g) => Some(g.id()),
        }
    }
}

impl Encode for Entry {
    fn encode_to(&self, w: &mut Writer) {
        match self {
            Entry::MerkleRoot(e) => e.encode_to(w),
            Entry::LoadControl(tx) => tx.encode_to(w),
            Entry::Genesis(g) => g.encode_to(w),
        }
    }
}

impl Decode for Entry {
    fn decode_from(r: &mut Reader<'_>) -> codec::Result<Self> {
        Ok(match r.peek_u8()? {
            TAG_MERKLE_ROOT => Entry::MerkleRoot(MerkleRootEntry::decode_from(r)?),
            TAG_LOAD_CONTROL => Entry::LoadControl(LoadControlTransaction::decode_from(r)?),
            TAG_GENESIS => Entry::Genesis(GenesisTransaction::decode_from(r)?),
            _ => return Err(CodecError::InvalidField("block.entry kind")),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Digest,
    pub period_id: u64,
    pub entries: Vec<Entry>,
    pub producer_sig: Signature,
}

impl Block {
    /// Builds and signs a block in one step.
    pub fn produce(
        height: u64,
        prev_hash: Digest,
        period_id: u64,
        entries: Vec<Entry>,
        producer: &KeyPair,
    ) -> Self {
        let mut block = Self {
            height,
            prev_hash,
            period_id,
            entries,
            producer_sig: Signature::from_array([0u8; 64]),
        };
        block.producer_sig = producer.sign(&block.signing_bytes());
        block
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.write_body(&mut w);
        w.zeroed_signature();
        w.into_bytes()
    }

    /// Digest of the full canonical encoding, signature included.
    pub fn hash(&self) -> Digest {
        digest(&self.encode())
    }

    pub fn signature_valid(&self, producer: &PublicKey) -> bool {
        verify(producer, &self.signing_bytes(), &self.producer_sig)
    }

    pub fn merkle_root(&self) -> Option<&MerkleRootEntry> {
        self.entries.iter().find_map(|e| match e {
            Entry::MerkleRoot(m) => Some(m),
            _ => None,
        })
    }

    fn write_body(&self, w: &mut Writer) {
        w.u8(TAG_BLOCK)
            .u64(self.height)
            .digest(&self.prev_hash)
            .u64(self.period_id)
            .u32(self.entries.len() as u32);
        for entry in &self.entries {
            w.bytes(&entry.encode());
        }
    }
}

impl Encode for Block {
    fn encode_to(&self, w: &mut Writer) {
        self.write_body(w);
        w.signature(Some(&self.producer_sig));
    }
}

impl Decode for Block {
    fn decode_from(r: &mut Reader<'_>) -> codec::Result<Self> {
        r.expect_tag(TAG_BLOCK)?;
        let height = r.u64()?;
        let prev_hash = r.digest()?;
        let period_id = r.u64()?;
        let n = r.u32()? as usize;
        if n > r.remaining() / 4 {
            return Err(CodecError::Length {
                field: "block.entries",
                len: n,
            });
        }
        let entries = (0..n)
            .map(|_| Entry::decode(r.bytes("block.entry")?))
            .collect::<codec::Result<Vec<_>>>()?;
        let producer_sig = r
            .signature("block.producer_sig")?
            .ok_or(CodecError::Length {
                field: "block.producer_sig",
                len: 0,
            })?;
        Ok(Self {
            height,
            prev_hash,
            period_id,
            entries,
            producer_sig,
        })
    }
}
