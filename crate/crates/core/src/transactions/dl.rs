//! Demand/load report authenticated by a shared-secret hash.

use crate::codec::{self, CodecError, Decode, Encode, Reader, Writer, TAG_DL};
use crate::crypto::{digest_concat, Digest};
use crate::identity::{NodeCredentials, NodeId, SecretValue};

/// Encoded size of every DL transaction.
pub const DL_ENCODED_LEN: usize = 1 + 16 + 4 + 8 + 1 + 32;

/// Byte offsets inside the encoding, used by tests and the tamper tooling.
pub const DL_DATA_OFFSET: usize = 1 + 16 + 4;
pub const DL_FLAG_OFFSET: usize = DL_DATA_OFFSET + 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum DlFlag {
    Demand = 0,
    Load = 1,
}

impl DlFlag {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(DlFlag::Demand),
            1 => Some(DlFlag::Load),
            _ => None,
        }
    }
}

/// `ID || Data || DLFlag || Secret`. No key material, no signature and no
/// nonce travel with the report.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct DlTransaction {
    pub id: NodeId,
    /// Watt-hours (or the sensor's contracted unit for sensor readings).
    pub data: u64,
    pub flag: DlFlag,
    pub secret: Digest,
}

/// `H(secret_value || nonce || data || flag)` with the nonce and data as
/// 8-byte big-endian integers. The flag is bound too, otherwise a demand
/// report could be relabelled as load without detection.
pub fn dl_secret(secret_value: &SecretValue, nonce: u64, data: u64, flag: DlFlag) -> Digest {
    digest_concat(&[
        &secret_value.0,
        &nonce.to_be_bytes(),
        &data.to_be_bytes(),
        &[flag as u8],
    ])
}

/// Builds the report for the credentials' current id and nonce. The caller
/// advances the credentials once the report is sent.
pub fn make_dl(credentials: &NodeCredentials, data: u64, flag: DlFlag) -> DlTransaction {
    DlTransaction {
        id: credentials.current_id,
        data,
        flag,
        secret: dl_secret(&credentials.secret_value, credentials.nonce, data, flag),
    }
}

impl DlTransaction {
    /// Merkle leaf: digest of the full canonical encoding.
    pub fn leaf(&self) -> Digest {
        crate::crypto::digest(&self.encode())
    }
}

impl Encode for DlTransaction {
    fn encode_to(&self, w: &mut Writer) {
        w.u8(TAG_DL)
            .u128(self.id.0)
            .bytes(&self.data.to_be_bytes())
            .u8(self.flag as u8)
            .digest(&self.secret);
    }
}

impl Decode for DlTransaction {
    fn decode_from(r: &mut Reader<'_>) -> codec::Result<Self> {
        r.expect_tag(TAG_DL)?;
        let id = NodeId(r.u128()?);
        let len = r.u32()? as usize;
        if len != 8 {
            return Err(CodecError::Length {
                field: "dl.data",
                len,
            });
        }
        let data = r.u64()?;
        let flag = DlFlag::from_byte(r.u8()?).ok_or(CodecError::InvalidField("dl.flag"))?;
        let secret = r.digest()?;
        Ok(Self {
            id,
            data,
            flag,
            secret,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::digest;

    fn creds() -> NodeCredentials {
        NodeCredentials::new(NodeId(0x0102_0304), 99, SecretValue([0x5a; 32]))
    }

    #[test]
    fn encoded_length_is_62_bytes() {
        let tx = make_dl(&creds(), 500, DlFlag::Demand);
        assert_eq!(tx.encode().len(), 62);
        assert_eq!(DL_ENCODED_LEN, 62);
    }

    #[test]
    fn flag_only_difference_is_a_single_byte_in_the_body() {
        let a = make_dl(&creds(), 500, DlFlag::Demand);
        let b = DlTransaction {
            flag: DlFlag::Load,
            ..a
        };
        let (ea, eb) = (a.encode(), b.encode());
        let diff: Vec<usize> = (0..ea.len()).filter(|&i| ea[i] != eb[i]).collect();
        assert_eq!(diff, vec![DL_FLAG_OFFSET]);
        assert_eq!(ea[DL_FLAG_OFFSET], 0);
        assert_eq!(eb[DL_FLAG_OFFSET], 1);
    }

    #[test]
    fn golden_layout() {
        let tx = make_dl(&creds(), 500, DlFlag::Load);
        let bytes = tx.encode();
        assert_eq!(bytes[0], 0x01);
        assert_eq!(&bytes[1..17], &0x0102_0304u128.to_be_bytes());
        assert_eq!(&bytes[17..21], &[0, 0, 0, 8]);
        assert_eq!(&bytes[21..29], &500u64.to_be_bytes());
        assert_eq!(bytes[29], 1);
        assert_eq!(&bytes[30..62], tx.secret.as_bytes());
    }

    #[test]
    fn secret_matches_standalone_digest() {
        let c = creds();
        let tx = make_dl(&c, 500, DlFlag::Demand);
        let mut preimage = Vec::new();
        preimage.extend_from_slice(&[0x5a; 32]);
        preimage.extend_from_slice(&[0u8; 8]);
        preimage.extend_from_slice(&[0, 0, 0, 0, 0, 0, 0x01, 0xf4]);
        preimage.push(0);
        assert_eq!(tx.secret, digest(&preimage));
    }

    #[test]
    fn deterministic_and_non_mutating() {
        let c = creds();
        let a = make_dl(&c, 7, DlFlag::Load);
        let b = make_dl(&c, 7, DlFlag::Load);
        assert_eq!(a.encode(), b.encode());
        assert_eq!(c, creds());
        let next = make_dl(&c.advance(), 7, DlFlag::Load);
        assert_ne!(a.secret, next.secret);
        assert_ne!(a.id, next.id);
    }

    #[test]
    fn decode_rejects_bad_flag_length_and_trailing_bytes() {
        let mut bytes = make_dl(&creds(), 1, DlFlag::Load).encode();
        let mut bad_flag = bytes.clone();
        bad_flag[DL_FLAG_OFFSET] = 2;
        assert_eq!(
            DlTransaction::decode(&bad_flag),
            Err(CodecError::InvalidField("dl.flag"))
        );
        let mut bad_len = bytes.clone();
        bad_len[20] = 9;
        assert!(matches!(
            DlTransaction::decode(&bad_len),
            Err(CodecError::Length { .. })
        ));
        bytes.push(0);
        assert_eq!(
            DlTransaction::decode(&bytes),
            Err(CodecError::TrailingBytes(1))
        );
    }
}
