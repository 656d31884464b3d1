//! Structured contents of the load-control `metadata` field.
//!
//! The first byte selects the payload kind:
//!
//! | kind | body |
//! |------|------|
//! | 0x01 contract | sealed box bytes (ephemeral key + ciphertext) of the encoded [`ContractTerms`] |
//! | 0x02 request  | [`ActionRequest`] |
//! | 0x03 response | [`ActionResponse`] |

use crate::codec::{self, CodecError, Decode, Encode, Reader, Writer};
use crate::crypto::{Digest, PublicKey, SealedBox};

const KIND_CONTRACT: u8 = 0x01;
const KIND_REQUEST: u8 = 0x02;
const KIND_RESPONSE: u8 = 0x03;

/// What the customer agrees to: controllable device classes, the hours in
/// which control is allowed, and how many sensors of each type may be
/// installed.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct ContractTerms {
    pub device_classes: Vec<String>,
    /// Half-open hour window `[start, end)` in 0..=24. `start == end` means
    /// no hours.
    pub hours: (u8, u8),
    pub sensors: Vec<(String, u32)>,
}

impl ContractTerms {
    pub fn allows_device(&self, class: &str) -> bool {
        self.device_classes.iter().any(|c| c == class)
    }

    pub fn allows_hour(&self, hour: u8) -> bool {
        hour >= self.hours.0 && hour < self.hours.1
    }

    pub fn sensor_limit(&self, sensor_type: &str) -> u32 {
        self.sensors
            .iter()
            .find(|(t, _)| t == sensor_type)
            .map_or(0, |&(_, n)| n)
    }
}

fn utf8(bytes: &[u8], field: &'static str) -> codec::Result<String> {
    String::from_utf8(bytes.to_vec()).map_err(|_| CodecError::InvalidField(field))
}

impl Encode for ContractTerms {
    fn encode_to(&self, w: &mut Writer) {
        w.u32(self.device_classes.len() as u32);
        for c in &self.device_classes {
            w.bytes(c.as_bytes());
        }
        w.u8(self.hours.0).u8(self.hours.1);
        w.u32(self.sensors.len() as u32);
        for (t, n) in &self.sensors {
            w.bytes(t.as_bytes()).u32(*n);
        }
    }
}

impl Decode for ContractTerms {
    fn decode_from(r: &mut Reader<'_>) -> codec::Result<Self> {
        let n = r.u32()? as usize;
        // Each entry needs at least its 4-byte length prefix.
        if n > r.remaining() / 4 {
            return Err(CodecError::Length {
                field: "terms.device_classes",
                len: n,
            });
        }
        let device_classes = (0..n)
            .map(|_| utf8(r.bytes("terms.device_class")?, "terms.device_class"))
            .collect::<codec::Result<Vec<_>>>()?;
        let hours = (r.u8()?, r.u8()?);
        if hours.0 > 24 || hours.1 > 24 || hours.0 > hours.1 {
            return Err(CodecError::InvalidField("terms.hours"));
        }
        let n = r.u32()? as usize;
        if n > r.remaining() / 8 {
            return Err(CodecError::Length {
                field: "terms.sensors",
                len: n,
            });
        }
        let sensors = (0..n)
            .map(|_| {
                Ok((
                    utf8(r.bytes("terms.sensor_type")?, "terms.sensor_type")?,
                    r.u32()?,
                ))
            })
            .collect::<codec::Result<Vec<_>>>()?;
        Ok(Self {
            device_classes,
            hours,
            sensors,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Off,
    ReduceBy(u64),
    /// Sensor access: send the current reading back in the response.
    ReportReading,
}

impl Action {
    fn code(&self) -> (u8, u64) {
        match *self {
            Action::Off => (0, 0),
            Action::ReduceBy(wh) => (1, wh),
            Action::ReportReading => (2, 0),
        }
    }

    fn from_code(code: u8, amount: u64) -> codec::Result<Self> {
        match (code, amount) {
            (0, 0) => Ok(Action::Off),
            (1, wh) => Ok(Action::ReduceBy(wh)),
            (2, 0) => Ok(Action::ReportReading),
            _ => Err(CodecError::InvalidField("request.action")),
        }
    }
}

/// DISCO → device/sensor instruction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionRequest {
    pub target: PublicKey,
    /// Device class or sensor type of the target.
    pub label: String,
    pub action: Action,
    pub period_id: u64,
    pub hour: u8,
}

impl Encode for ActionRequest {
    fn encode_to(&self, w: &mut Writer) {
        let (code, amount) = self.action.code();
        w.public_key(&self.target)
            .bytes(self.label.as_bytes())
            .u8(code)
            .u64(amount)
            .u64(self.period_id)
            .u8(self.hour);
    }
}

impl Decode for ActionRequest {
    fn decode_from(r: &mut Reader<'_>) -> codec::Result<Self> {
        let target = r.public_key()?;
        let label = utf8(r.bytes("request.label")?, "request.label")?;
        let code = r.u8()?;
        let amount = r.u64()?;
        let action = Action::from_code(code, amount)?;
        let period_id = r.u64()?;
        let hour = r.u8()?;
        if hour >= 24 {
            return Err(CodecError::InvalidField("request.hour"));
        }
        Ok(Self {
            target,
            label,
            action,
            period_id,
            hour,
        })
    }
}

/// Device/sensor → DISCO acknowledgement of an executed request.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionResponse {
    pub request: Digest,
    pub action: Action,
    /// Sensor reading for `ReportReading`, otherwise the applied reduction.
    pub value: u64,
}

impl Encode for ActionResponse {
    fn encode_to(&self, w: &mut Writer) {
        let (code, amount) = self.action.code();
        w.digest(&self.request).u8(code).u64(amount).u64(self.value);
    }
}

impl Decode for ActionResponse {
    fn decode_from(r: &mut Reader<'_>) -> codec::Result<Self> {
        let request = r.digest()?;
        let code = r.u8()?;
        let amount = r.u64()?;
        Ok(Self {
            request,
            action: Action::from_code(code, amount)?,
            value: r.u64()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Payload {
    Contract(SealedBox),
    Request(ActionRequest),
    Response(ActionResponse),
}

impl Payload {
    pub fn to_metadata(&self) -> Vec<u8> {
        let mut w = Writer::new();
        match self {
            Payload::Contract(sealed) => {
                w.u8(KIND_CONTRACT).raw(&sealed.to_bytes());
            }
            Payload::Request(req) => {
                w.u8(KIND_REQUEST);
                req.encode_to(&mut w);
            }
            Payload::Response(resp) => {
                w.u8(KIND_RESPONSE);
                resp.encode_to(&mut w);
            }
        }
        w.into_bytes()
    }

    pub fn from_metadata(bytes: &[u8]) -> codec::Result<Self> {
        let mut r = Reader::new(bytes);
        let payload = match r.u8()? {
            KIND_CONTRACT => {
                let rest = r.take(r.remaining())?;
                Payload::Contract(
                    SealedBox::from_bytes(rest)
                        .map_err(|_| CodecError::InvalidField("contract"))?,
                )
            }
            KIND_REQUEST => Payload::Request(ActionRequest::decode_from(&mut r)?),
            KIND_RESPONSE => Payload::Response(ActionResponse::decode_from(&mut r)?),
            _ => return Err(CodecError::InvalidField("metadata.kind")),
        };
        r.finish()?;
        Ok(payload)
    }

    pub fn is_contract(bytes: &[u8]) -> bool {
        bytes.first() == Some(&KIND_CONTRACT)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::keygen;
    use proptest::prelude::*;

    fn terms() -> ContractTerms {
        ContractTerms {
            device_classes: vec!["hvac".into(), "ev_charger".into()],
            hours: (12, 20),
            sensors: vec![("temperature".into(), 2)],
        }
    }

    #[test]
    fn terms_queries() {
        let t = terms();
        assert!(t.allows_device("hvac"));
        assert!(!t.allows_device("fridge"));
        assert!(t.allows_hour(12) && t.allows_hour(19));
        assert!(!t.allows_hour(20) && !t.allows_hour(11));
        assert_eq!(t.sensor_limit("temperature"), 2);
        assert_eq!(t.sensor_limit("humidity"), 0);
    }

    #[test]
    fn payload_round_trips() {
        let pk = keygen(&[1; 32]).unwrap().public();
        let req = Payload::Request(ActionRequest {
            target: pk,
            label: "hvac".into(),
            action: Action::ReduceBy(500),
            period_id: 3,
            hour: 14,
        });
        assert_eq!(Payload::from_metadata(&req.to_metadata()).unwrap(), req);
        let resp = Payload::Response(ActionResponse {
            request: crate::crypto::digest(b"r"),
            action: Action::ReportReading,
            value: 21,
        });
        assert_eq!(Payload::from_metadata(&resp.to_metadata()).unwrap(), resp);
        assert!(Payload::from_metadata(&[9]).is_err());
        assert!(Payload::from_metadata(&[]).is_err());
    }

    proptest! {
        #[test]
        fn terms_round_trip(
            classes in proptest::collection::vec("[a-z_]{1,12}", 0..4),
            start in 0u8..=24, len in 0u8..=24,
            sensors in proptest::collection::vec(("[a-z]{1,10}", 0u32..10), 0..3),
        ) {
            let end = start.saturating_add(len).min(24);
            let t = ContractTerms { device_classes: classes, hours: (start, end), sensors };
            let bytes = t.encode();
            prop_assert_eq!(ContractTerms::decode(&bytes).unwrap(), t);
        }

        #[test]
        fn terms_decode_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
            if let Ok(t) = ContractTerms::decode(&bytes) {
                prop_assert_eq!(t.encode(), bytes);
            }
        }
    }
}
