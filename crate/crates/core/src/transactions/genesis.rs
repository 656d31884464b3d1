//! Admission records anchoring each node's transaction chain.

use crate::codec::{self, CodecError, Decode, Encode, Reader, Writer, TAG_GENESIS};
use crate::crypto::{digest, verify, Digest, KeyPair, PublicKey, Signature};

use super::TxError;

#[derive(
    Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum NodeRole {
    Disco = 0,
    Producer = 1,
    Consumer = 2,
    Storage = 3,
    Sensor = 4,
    Device = 5,
}

impl NodeRole {
    pub fn from_byte(b: u8) -> Option<Self> {
        use NodeRole::*;
        [Disco, Producer, Consumer, Storage, Sensor, Device]
            .into_iter()
            .find(|r| *r as u8 == b)
    }

    /// Customer-site equipment installed under a contract; admission needs
    /// the customer's countersignature.
    pub fn is_customer_site(&self) -> bool {
        matches!(self, NodeRole::Sensor | NodeRole::Device)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            NodeRole::Disco => "disco",
            NodeRole::Producer => "producer",
            NodeRole::Consumer => "consumer",
            NodeRole::Storage => "storage",
            NodeRole::Sensor => "sensor",
            NodeRole::Device => "device",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GenesisTransaction {
    pub role: NodeRole,
    pub subject_pk: PublicKey,
    /// Owning customer, only for sensors and devices.
    pub customer_pk: Option<PublicKey>,
    /// Contract transaction a sensor/device is installed under.
    pub contract_ref: Option<Digest>,
    pub disco_sig: Option<Signature>,
    pub customer_sig: Option<Signature>,
    /// UTF-8 label: sensor type or device class for customer-site nodes.
    pub metadata: Vec<u8>,
}

impl GenesisTransaction {
    pub fn participant(role: NodeRole, subject_pk: PublicKey, label: &str) -> Self {
        Self {
            role,
            subject_pk,
            customer_pk: None,
            contract_ref: None,
            disco_sig: None,
            customer_sig: None,
            metadata: label.as_bytes().to_vec(),
        }
    }

    pub fn customer_site(
        role: NodeRole,
        subject_pk: PublicKey,
        customer_pk: PublicKey,
        contract_ref: Digest,
        label: &str,
    ) -> Self {
        Self {
            role,
            subject_pk,
            customer_pk: Some(customer_pk),
            contract_ref: Some(contract_ref).filter(|d| !d.is_zero()),
            disco_sig: None,
            customer_sig: None,
            metadata: label.as_bytes().to_vec(),
        }
    }

    pub fn label(&self) -> &str {
        std::str::from_utf8(&self.metadata).unwrap_or("")
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.write(&mut w, true);
        w.into_bytes()
    }

    /// Identifier used as `P_T_ID` by the subject's first transaction.
    pub fn id(&self) -> Digest {
        digest(&self.signing_bytes())
    }

    pub fn sign_as_disco(mut self, key: &KeyPair) -> Self {
        self.disco_sig = Some(key.sign(&self.signing_bytes()));
        self
    }

    pub fn countersign_as_customer(mut self, key: &KeyPair) -> Result<Self, TxError> {
        if self.customer_pk != Some(key.public()) {
            return Err(TxError::KeyMismatch("customer_pk"));
        }
        self.customer_sig = Some(key.sign(&self.signing_bytes()));
        Ok(self)
    }

    pub fn disco_signature_valid(&self, disco: &PublicKey) -> bool {
        self.disco_sig
            .as_ref()
            .is_some_and(|s| verify(disco, &self.signing_bytes(), s))
    }

    pub fn customer_signature_valid(&self) -> bool {
        match (&self.customer_pk, &self.customer_sig) {
            (Some(pk), Some(sig)) => verify(pk, &self.signing_bytes(), sig),
            _ => false,
        }
    }

    fn write(&self, w: &mut Writer, zeroed: bool) {
        w.u8(TAG_GENESIS)
            .u8(self.role as u8)
            .public_key(&self.subject_pk)
            .public_key(&self.customer_pk.unwrap_or(PublicKey::ZERO))
            .digest(&self.contract_ref.unwrap_or(Digest::ZERO));
        if zeroed {
            w.zeroed_signature().zeroed_signature();
        } else {
            w.signature(self.disco_sig.as_ref())
                .signature(self.customer_sig.as_ref());
        }
        w.bytes(&self.metadata);
    }
}

impl Encode for GenesisTransaction {
    fn encode_to(&self, w: &mut Writer) {
        self.write(w, false);
    }
}

impl Decode for GenesisTransaction {
    fn decode_from(r: &mut Reader<'_>) -> codec::Result<Self> {
        r.expect_tag(TAG_GENESIS)?;
        let role = NodeRole::from_byte(r.u8()?).ok_or(CodecError::InvalidField("genesis.role"))?;
        let subject_pk = r.public_key()?;
        let customer_pk = Some(r.public_key()?).filter(|pk| !pk.is_zero());
        let contract_ref = Some(r.digest()?).filter(|d| !d.is_zero());
        let disco_sig = r.signature("genesis.disco_sig")?;
        let customer_sig = r.signature("genesis.customer_sig")?;
        let metadata = r.bytes("genesis.metadata")?.to_vec();
        Ok(Self {
            role,
            subject_pk,
            customer_pk,
            contract_ref,
            disco_sig,
            customer_sig,
            metadata,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::keygen;

    #[test]
    fn id_is_stable_under_signing_and_round_trips() {
        let disco = keygen(&[1; 32]).unwrap();
        let customer = keygen(&[2; 32]).unwrap();
        let sensor = keygen(&[3; 32]).unwrap();
        let g = GenesisTransaction::customer_site(
            NodeRole::Sensor,
            sensor.public(),
            customer.public(),
            digest(b"contract"),
            "temperature",
        );
        let id = g.id();
        let g = g.sign_as_disco(&disco);
        assert_eq!(g.id(), id);
        assert!(g.disco_signature_valid(&disco.public()));
        assert!(!g.customer_signature_valid());
        let g = g.countersign_as_customer(&customer).unwrap();
        assert_eq!(g.id(), id);
        assert!(g.customer_signature_valid());
        assert_eq!(GenesisTransaction::decode(&g.encode()).unwrap(), g);
        assert_eq!(g.label(), "temperature");
        assert!(g.clone().countersign_as_customer(&disco).is_err());
    }

    #[test]
    fn role_byte_round_trip() {
        for b in 0..=5u8 {
            assert_eq!(NodeRole::from_byte(b).unwrap() as u8, b);
        }
        assert_eq!(NodeRole::from_byte(6), None);
    }
}
