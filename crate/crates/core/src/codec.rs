//! Canonical byte encoding.
//!
//! Rules shared by every record:
//!
//! * integers are fixed-width big-endian;
//! * fixed-size values (ids, digests, public keys) are written raw;
//! * variable-length values are prefixed by a 4-byte big-endian length;
//! * every record starts with a one-byte type tag.
//!
//! Decoding is strict: a byte string decodes to at most one record and
//! re-encoding a decoded record reproduces the input exactly. The full byte
//! layout of each record is documented in `docs/wire-format.md`.

use thiserror::Error;

use crate::crypto::{Digest, PublicKey, Signature, DIGEST_LEN, PUBLIC_KEY_LEN, SIGNATURE_LEN};
use crate::ledger::Block;
use crate::ledger::MerkleRootEntry;
use crate::merkle::MerkleProof;
use crate::transactions::{DlTransaction, GenesisTransaction, LoadControlTransaction};

pub const TAG_DL: u8 = 0x01;
pub const TAG_LOAD_CONTROL: u8 = 0x02;
pub const TAG_GENESIS: u8 = 0x03;
pub const TAG_BLOCK: u8 = 0x04;
pub const TAG_MERKLE_PROOF: u8 = 0x05;
pub const TAG_MERKLE_ROOT: u8 = 0x06;

/// Upper bound for any single length prefix.
pub const MAX_FIELD_LEN: usize = 16 * 1024 * 1024;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("input truncated: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("unknown record tag 0x{0:02x}")]
    UnknownTag(u8),
    #[error("expected record tag 0x{expected:02x}, found 0x{found:02x}")]
    UnexpectedTag { expected: u8, found: u8 },
    #[error("{0} trailing bytes after record")]
    TrailingBytes(usize),
    #[error("invalid length {len} for {field}")]
    Length { field: &'static str, len: usize },
    #[error("invalid value for {0}")]
    InvalidField(&'static str),
}

pub type Result<T> = std::result::Result<T, CodecError>;

/// Types with a canonical encoding.
pub trait Encode {
    fn encode_to(&self, w: &mut Writer);

    fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode_to(&mut w);
        w.into_bytes()
    }
}

pub trait Decode: Sized {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self>;

    /// Decodes exactly one value; leftover input is an error.
    fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let value = Self::decode_from(&mut r)?;
        r.finish()?;
        Ok(value)
    }
}

#[derive(Default, Debug)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u128(&mut self, v: u128) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn raw(&mut self, bytes: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(bytes);
        self
    }

    pub fn digest(&mut self, d: &Digest) -> &mut Self {
        self.raw(d.as_bytes())
    }

    pub fn public_key(&mut self, pk: &PublicKey) -> &mut Self {
        self.raw(pk.as_bytes())
    }

    /// Length-prefixed byte string.
    pub fn bytes(&mut self, bytes: &[u8]) -> &mut Self {
        let len = u32::try_from(bytes.len()).expect("field longer than 4 GiB");
        self.u32(len).raw(bytes)
    }

    /// Optional signature: length 0 when absent, 64 otherwise.
    pub fn signature(&mut self, sig: Option<&Signature>) -> &mut Self {
        match sig {
            Some(sig) => self.bytes(sig.as_bytes()),
            None => self.u32(0),
        }
    }

    /// Signature slot with the body zero-filled, as used in signing preimages.
    pub fn zeroed_signature(&mut self) -> &mut Self {
        self.bytes(&[0u8; SIGNATURE_LEN])
    }
}

#[derive(Debug)]
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn finish(&self) -> Result<()> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(CodecError::TrailingBytes(n)),
        }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(CodecError::Truncated {
                offset: self.pos,
                needed: n - self.remaining(),
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("take returned N bytes"))
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_be_bytes(self.array()?))
    }

    pub fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_be_bytes(self.array()?))
    }

    pub fn digest(&mut self) -> Result<Digest> {
        Ok(Digest::from_bytes(self.array::<DIGEST_LEN>()?))
    }

    /// Raw 32-byte key. Point validity is checked at signature verification.
    pub fn public_key(&mut self) -> Result<PublicKey> {
        Ok(PublicKey::from_array(self.array::<PUBLIC_KEY_LEN>()?))
    }

    pub fn expect_tag(&mut self, expected: u8) -> Result<()> {
        let found = self.u8()?;
        if found == expected {
            Ok(())
        } else {
            Err(CodecError::UnexpectedTag { expected, found })
        }
    }

    /// Reads a 4-byte length prefix and validates it against the remaining input.
    pub fn length(&mut self, field: &'static str) -> Result<usize> {
        let len = self.u32()? as usize;
        if len > MAX_FIELD_LEN || len > self.remaining() {
            return Err(CodecError::Length { field, len });
        }
        Ok(len)
    }

    pub fn bytes(&mut self, field: &'static str) -> Result<&'a [u8]> {
        let len = self.length(field)?;
        self.take(len)
    }

    pub fn signature(&mut self, field: &'static str) -> Result<Option<Signature>> {
        let len = self.u32()? as usize;
        match len {
            0 => Ok(None),
            SIGNATURE_LEN => Ok(Some(Signature::from_array(self.array()?))),
            _ => Err(CodecError::Length { field, len }),
        }
    }

    pub fn peek_u8(&self) -> Result<u8> {
        self.buf
            .get(self.pos)
            .copied()
            .ok_or(CodecError::Truncated {
                offset: self.pos,
                needed: 1,
            })
    }
}

/// Any top-level record, dispatched on its tag byte.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Record {
    Dl(DlTransaction),
    LoadControl(LoadControlTransaction),
    Genesis(GenesisTransaction),
    Block(Block),
    MerkleProof(MerkleProof),
    MerkleRoot(MerkleRootEntry),
}

impl Encode for Record {
    fn encode_to(&self, w: &mut Writer) {
        match self {
            Record::Dl(x) => x.encode_to(w),
            Record::LoadControl(x) => x.encode_to(w),
            Record::Genesis(x) => x.encode_to(w),
            Record::Block(x) => x.encode_to(w),
            Record::MerkleProof(x) => x.encode_to(w),
            Record::MerkleRoot(x) => x.encode_to(w),
        }
    }
}

impl Decode for Record {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self> {
        Ok(match r.peek_u8()? {
            TAG_DL => Record::Dl(DlTransaction::decode_from(r)?),
            TAG_LOAD_CONTROL => Record::LoadControl(LoadControlTransaction::decode_from(r)?),
            TAG_GENESIS => Record::Genesis(GenesisTransaction::decode_from(r)?),
            TAG_BLOCK => Record::Block(Block::decode_from(r)?),
            TAG_MERKLE_PROOF => Record::MerkleProof(MerkleProof::decode_from(r)?),
            TAG_MERKLE_ROOT => Record::MerkleRoot(MerkleRootEntry::decode_from(r)?),
            other => return Err(CodecError::UnknownTag(other)),
        })
    }
}

pub fn encode(record: &Record) -> Vec<u8> {
    record.encode()
}

pub fn decode(bytes: &[u8]) -> Result<Record> {
    Record::decode(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_is_truncated() {
        assert!(matches!(decode(&[]), Err(CodecError::Truncated { .. })));
    }

    #[test]
    fn unknown_tag() {
        assert_eq!(decode(&[0xff, 1, 2, 3]), Err(CodecError::UnknownTag(0xff)));
        assert_eq!(decode(&[0x00]), Err(CodecError::UnknownTag(0x00)));
    }

    #[test]
    fn length_prefix_beyond_input_is_a_length_error() {
        let mut r = Reader::new(&[0, 0, 0, 9, 1, 2]);
        assert_eq!(r.bytes("x"), Err(CodecError::Length { field: "x", len: 9 }));
    }

    #[test]
    fn signature_slot_accepts_only_0_or_64() {
        let mut w = Writer::new();
        w.bytes(&[1u8; 10]);
        let bytes = w.into_bytes();
        let mut r = Reader::new(&bytes);
        assert_eq!(
            r.signature("sig"),
            Err(CodecError::Length {
                field: "sig",
                len: 10
            })
        );
    }
}
