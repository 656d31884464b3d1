//! Two-party signed load-control transaction.

use thiserror::Error;

use crate::codec::{self, Decode, Encode, Reader, Writer, TAG_LOAD_CONTROL};
use crate::crypto::{digest, verify, Digest, KeyPair, PublicKey, Signature};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TxError {
    #[error("signing key does not match {0}")]
    KeyMismatch(&'static str),
}

/// `T_ID || P_T_ID || PKGen || SignGen || PKRec || SignRec || Ref.DISCO.ID || Metadata`
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoadControlTransaction {
    pub t_id: Digest,
    /// Generator's previous transaction, or its genesis.
    pub p_t_id: Digest,
    pub pk_gen: PublicKey,
    pub sign_gen: Option<Signature>,
    pub pk_rec: PublicKey,
    pub sign_rec: Option<Signature>,
    /// DISCO request that triggered this transaction; `None` (all zero on
    /// the wire) for DISCO-generated transactions.
    pub ref_disco_id: Option<Digest>,
    pub metadata: Vec<u8>,
}

impl LoadControlTransaction {
    pub fn new(
        p_t_id: Digest,
        pk_gen: PublicKey,
        pk_rec: PublicKey,
        ref_disco_id: Option<Digest>,
        metadata: Vec<u8>,
    ) -> Self {
        let mut tx = Self {
            t_id: Digest::ZERO,
            p_t_id,
            pk_gen,
            sign_gen: None,
            pk_rec,
            sign_rec: None,
            ref_disco_id: ref_disco_id.filter(|d| !d.is_zero()),
            metadata,
        };
        tx.t_id = tx.compute_tid();
        tx
    }

    /// The bytes both parties sign and whose digest is the t_id: the
    /// canonical encoding with the t_id and both signature bodies zeroed.
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.write(&mut w, true);
        w.into_bytes()
    }

    pub fn compute_tid(&self) -> Digest {
        digest(&self.signing_bytes())
    }

    pub fn sign_as_generator(mut self, key: &KeyPair) -> Result<Self, TxError> {
        if key.public() != self.pk_gen {
            return Err(TxError::KeyMismatch("pk_gen"));
        }
        self.sign_gen = Some(key.sign(&self.signing_bytes()));
        Ok(self)
    }

    pub fn countersign_as_receiver(mut self, key: &KeyPair) -> Result<Self, TxError> {
        if key.public() != self.pk_rec {
            return Err(TxError::KeyMismatch("pk_rec"));
        }
        self.sign_rec = Some(key.sign(&self.signing_bytes()));
        Ok(self)
    }

    pub fn generator_signature_valid(&self) -> bool {
        self.sign_gen
            .as_ref()
            .is_some_and(|s| verify(&self.pk_gen, &self.signing_bytes(), s))
    }

    pub fn receiver_signature_valid(&self) -> bool {
        self.sign_rec
            .as_ref()
            .is_some_and(|s| verify(&self.pk_rec, &self.signing_bytes(), s))
    }

    pub fn is_fully_signed(&self) -> bool {
        self.sign_gen.is_some() && self.sign_rec.is_some()
    }

    fn write(&self, w: &mut Writer, zeroed: bool) {
        w.u8(TAG_LOAD_CONTROL);
        if zeroed {
            w.digest(&Digest::ZERO);
        } else {
            w.digest(&self.t_id);
        }
        w.digest(&self.p_t_id).public_key(&self.pk_gen);
        if zeroed {
            w.zeroed_signature();
        } else {
            w.signature(self.sign_gen.as_ref());
        }
        w.public_key(&self.pk_rec);
        if zeroed {
            w.zeroed_signature();
        } else {
            w.signature(self.sign_rec.as_ref());
        }
        w.digest(&self.ref_disco_id.unwrap_or(Digest::ZERO))
            .bytes(&self.metadata);
    }
}

impl Encode for LoadControlTransaction {
    fn encode_to(&self, w: &mut Writer) {
        self.write(w, false);
    }
}

impl Decode for LoadControlTransaction {
    fn decode_from(r: &mut Reader<'_>) -> codec::Result<Self> {
        r.expect_tag(TAG_LOAD_CONTROL)?;
        let t_id = r.digest()?;
        let p_t_id = r.digest()?;
        let pk_gen = r.public_key()?;
        let sign_gen = r.signature("load_control.sign_gen")?;
        let pk_rec = r.public_key()?;
        let sign_rec = r.signature("load_control.sign_rec")?;
        let ref_disco_id = Some(r.digest()?).filter(|d| !d.is_zero());
        let metadata = r.bytes("load_control.metadata")?.to_vec();
        Ok(Self {
            t_id,
            p_t_id,
            pk_gen,
            sign_gen,
            pk_rec,
            sign_rec,
            ref_disco_id,
            metadata,
        })
    }
}

pub fn compute_tid(tx: &LoadControlTransaction) -> Digest {
    tx.compute_tid()
}
