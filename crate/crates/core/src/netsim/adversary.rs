//! Adversaries sitting on the wire.
//!
//! Each adversary sees every original message once, when it is sent, and
//! answers with an [`Interference`]: what happens to the message itself and
//! which extra messages to schedule. Adversaries are registered by mode name
//! and built from `[[adversaries]]` tables in the scenario file.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::linkage::{LinkageReport, LinkageTracker};
use super::{Message, MessageKind, NodeIndex, Origin};
use crate::codec::{Decode, Encode};
use crate::crypto::{keygen, Digest, KeyPair};
use crate::identity::{NodeId, SecretValue};
use crate::transactions::{dl_secret, DlFlag, DlTransaction, LoadControlTransaction};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Deliver,
    Drop,
    Tamper { index: usize, value: u8 },
}

/// An extra message created by an adversary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Injection {
    /// Ticks on top of the normal one-tick latency.
    pub delay: u64,
    /// Schedule before the intercepted message (same tick only).
    pub ahead: bool,
    pub from: NodeIndex,
    pub to: NodeIndex,
    pub kind: MessageKind,
    pub payload: Vec<u8>,
    pub origin: Origin,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Interference {
    pub outcome: Outcome,
    pub injections: Vec<Injection>,
}

impl Interference {
    pub fn pass() -> Self {
        Self {
            outcome: Outcome::Deliver,
            injections: Vec::new(),
        }
    }
}

/// Byte-identical copy of `msg`, delivered `delay` ticks after the original.
pub fn inject_replay(msg: &Message, delay: u64) -> Injection {
    Injection {
        delay: delay.max(1),
        ahead: false,
        from: msg.from,
        to: msg.to,
        kind: msg.kind,
        payload: msg.payload.clone(),
        origin: Origin::Replay,
    }
}

/// `payload` with the byte at `position` replaced. `None` if the position is
/// out of range or the byte would not change.
pub fn inject_tamper(payload: &[u8], position: usize, value: u8) -> Option<Vec<u8>> {
    let old = *payload.get(position)?;
    if old == value {
        return None;
    }
    let mut out = payload.to_vec();
    out[position] = value;
    Some(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AdversaryReport {
    pub mode: String,
    pub observed: u64,
    pub replayed: u64,
    pub tampered: u64,
    pub forged: u64,
    pub dropped: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub linkage: Option<LinkageReport>,
}

pub trait Adversary: fmt::Debug {
    fn mode(&self) -> &str;
    fn observe(&mut self, msg: &Message, tick: u64) -> Interference;
    fn report(&self) -> AdversaryReport;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdversaryError {
    #[error("unknown adversary mode `{0}`")]
    UnknownMode(String),
    #[error("intensity {0} outside [0, 1]")]
    Intensity(f64),
    #[error("max_delay must be at least 1")]
    Delay,
}

/// One `[[adversaries]]` table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarySpec {
    pub mode: String,
    /// Probability of acting on each targeted message.
    #[serde(default = "default_intensity")]
    pub intensity: f64,
    /// Defaults to a value derived from the scenario seed.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_targets")]
    pub targets: Vec<MessageKind>,
    /// Replays land 1..=max_delay ticks after the original.
    #[serde(default = "default_max_delay")]
    pub max_delay: u64,
}

fn default_intensity() -> f64 {
    1.0
}

fn default_targets() -> Vec<MessageKind> {
    vec![MessageKind::Dl]
}

fn default_max_delay() -> u64 {
    5
}

impl Default for AdversarySpec {
    fn default() -> Self {
        Self {
            mode: String::new(),
            intensity: default_intensity(),
            seed: None,
            targets: default_targets(),
            max_delay: default_max_delay(),
        }
    }
}

/// State every built-in adversary shares.
#[derive(Debug)]
struct Base {
    rng: ChaCha20Rng,
    intensity: f64,
    targets: BTreeSet<MessageKind>,
    report: AdversaryReport,
}

impl Base {
    fn new(mode: &str, spec: &AdversarySpec, seed: u64) -> Self {
        Self {
            rng: ChaCha20Rng::seed_from_u64(spec.seed.unwrap_or(seed)),
            intensity: spec.intensity,
            targets: spec.targets.iter().copied().collect(),
            report: AdversaryReport {
                mode: mode.into(),
                ..AdversaryReport::default()
            },
        }
    }

    /// Whether to act on this message. Only original traffic of a targeted
    /// kind is considered.
    fn fires(&mut self, msg: &Message) -> bool {
        if !self.targets.contains(&msg.kind) {
            return false;
        }
        self.report.observed += 1;
        self.rng.gen_bool(self.intensity)
    }
}

#[derive(Debug)]
pub struct Replayer {
    base: Base,
    max_delay: u64,
}

impl Replayer {
    pub fn new(spec: &AdversarySpec, seed: u64) -> Self {
        Self {
            base: Base::new("replayer", spec, seed),
            max_delay: spec.max_delay,
        }
    }
}

impl Adversary for Replayer {
    fn mode(&self) -> &str {
        "replayer"
    }

    fn observe(&mut self, msg: &Message, _tick: u64) -> Interference {
        if !self.base.fires(msg) {
            return Interference::pass();
        }
        self.base.report.replayed += 1;
        let delay = self.base.rng.gen_range(1..=self.max_delay);
        Interference {
            outcome: Outcome::Deliver,
            injections: vec![inject_replay(msg, delay)],
        }
    }

    fn report(&self) -> AdversaryReport {
        self.base.report.clone()
    }
}

#[derive(Debug)]
pub struct Tamperer {
    base: Base,
}

impl Tamperer {
    pub fn new(spec: &AdversarySpec, seed: u64) -> Self {
        Self {
            base: Base::new("tamperer", spec, seed),
        }
    }
}

impl Adversary for Tamperer {
    fn mode(&self) -> &str {
        "tamperer"
    }

    fn observe(&mut self, msg: &Message, _tick: u64) -> Interference {
        if msg.payload.is_empty() || !self.base.fires(msg) {
            return Interference::pass();
        }
        self.base.report.tampered += 1;
        let index = self.base.rng.gen_range(0..msg.payload.len());
        let value = msg.payload[index] ^ self.base.rng.gen_range(1..=255u8);
        Interference {
            outcome: Outcome::Tamper { index, value },
            injections: Vec::new(),
        }
    }

    fn report(&self) -> AdversaryReport {
        self.base.report.clone()
    }
}

/// Makes up DL reports (random ids, or the observed id with a guessed
/// secret) and re-signs load-control transactions with its own key.
#[derive(Debug)]
pub struct Forger {
    base: Base,
    key: KeyPair,
}

impl Forger {
    pub fn new(spec: &AdversarySpec, seed: u64) -> Self {
        let mut base = Base::new("forger", spec, seed);
        let key = keygen(&base.rng.gen::<[u8; 32]>()).expect("32-byte seed");
        Self { base, key }
    }

    fn forge_dl(&mut self, msg: &Message) -> Option<Injection> {
        let rng = &mut self.base.rng;
        let (payload, ahead) = if rng.gen_bool(0.5) {
            let tx = DlTransaction {
                id: NodeId(rng.gen()),
                data: rng.gen(),
                flag: if rng.gen() {
                    DlFlag::Load
                } else {
                    DlFlag::Demand
                },
                secret: Digest::from_bytes(rng.gen()),
            };
            (tx.encode(), false)
        } else {
            // Right id, wrong secret_value. Sent ahead of the real report so
            // the id is still current when it arrives.
            let seen = DlTransaction::decode(&msg.payload).ok()?;
            let guess = SecretValue(rng.gen());
            let data = rng.gen::<u32>() as u64;
            let tx = DlTransaction {
                data,
                secret: dl_secret(&guess, rng.gen_range(0..1_000), data, seen.flag),
                ..seen
            };
            (tx.encode(), true)
        };
        Some(Injection {
            delay: 0,
            ahead,
            from: msg.from,
            to: msg.to,
            kind: MessageKind::Dl,
            payload,
            origin: Origin::Forgery,
        })
    }

    fn forge_load_control(&mut self, msg: &Message) -> Option<Injection> {
        let mut tx = LoadControlTransaction::decode(&msg.payload).ok()?;
        tx.sign_gen = Some(self.key.sign(&tx.signing_bytes()));
        Some(Injection {
            delay: 0,
            ahead: true,
            from: msg.from,
            to: msg.to,
            kind: msg.kind,
            payload: tx.encode(),
            origin: Origin::Forgery,
        })
    }
}

impl Adversary for Forger {
    fn mode(&self) -> &str {
        "forger"
    }

    fn observe(&mut self, msg: &Message, _tick: u64) -> Interference {
        if !self.base.fires(msg) {
            return Interference::pass();
        }
        let forged = match msg.kind {
            MessageKind::Dl => self.forge_dl(msg),
            MessageKind::LoadControl => self.forge_load_control(msg),
            _ => None,
        };
        let injections: Vec<_> = forged.into_iter().collect();
        self.base.report.forged += injections.len() as u64;
        Interference {
            outcome: Outcome::Deliver,
            injections,
        }
    }

    fn report(&self) -> AdversaryReport {
        self.base.report.clone()
    }
}

/// Loses messages. Not an attack in itself; used to study desynchronisation.
#[derive(Debug)]
pub struct Dropper {
    base: Base,
}

impl Dropper {
    pub fn new(spec: &AdversarySpec, seed: u64) -> Self {
        Self {
            base: Base::new("dropper", spec, seed),
        }
    }
}

impl Adversary for Dropper {
    fn mode(&self) -> &str {
        "dropper"
    }

    fn observe(&mut self, msg: &Message, _tick: u64) -> Interference {
        if !self.base.fires(msg) {
            return Interference::pass();
        }
        self.base.report.dropped += 1;
        Interference {
            outcome: Outcome::Drop,
            injections: Vec::new(),
        }
    }

    fn report(&self) -> AdversaryReport {
        self.base.report.clone()
    }
}

/// Passive observer. Links DL ids into per-sender chains from the payload
/// alone; the true sender is only used to score the result.
#[derive(Debug)]
pub struct Eavesdropper {
    base: Base,
    tracker: LinkageTracker,
    keys_seen: BTreeSet<[u8; 32]>,
}

impl Eavesdropper {
    pub fn new(spec: &AdversarySpec, seed: u64) -> Self {
        Self {
            base: Base::new("eavesdropper", spec, seed),
            tracker: LinkageTracker::default(),
            keys_seen: BTreeSet::new(),
        }
    }

    pub fn tracker(&self) -> &LinkageTracker {
        &self.tracker
    }
}

impl Adversary for Eavesdropper {
    fn mode(&self) -> &str {
        "eavesdropper"
    }

    fn observe(&mut self, msg: &Message, _tick: u64) -> Interference {
        if !self.base.fires(msg) {
            return Interference::pass();
        }
        match msg.kind {
            MessageKind::Dl => {
                if let Ok(tx) = DlTransaction::decode(&msg.payload) {
                    self.tracker.observe(tx.id.0, msg.from);
                }
            }
            MessageKind::LoadControl => {
                if let Ok(tx) = LoadControlTransaction::decode(&msg.payload) {
                    self.keys_seen.insert(*tx.pk_gen.as_bytes());
                    self.keys_seen.insert(*tx.pk_rec.as_bytes());
                }
            }
            _ => {}
        }
        Interference::pass()
    }

    fn report(&self) -> AdversaryReport {
        AdversaryReport {
            linkage: Some(self.tracker.report(self.keys_seen.len() as u64)),
            ..self.base.report.clone()
        }
    }
}

pub type AdversaryFactory = fn(&AdversarySpec, u64) -> Box<dyn Adversary>;

/// Mode name → constructor.
#[derive(Clone)]
pub struct AdversaryRegistry {
    factories: BTreeMap<String, AdversaryFactory>,
}

impl AdversaryRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, mode: &str, factory: AdversaryFactory) {
        self.factories.insert(mode.to_string(), factory);
    }

    pub fn modes(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    /// `seed` is used when the spec does not pin its own.
    pub fn build(
        &self,
        spec: &AdversarySpec,
        seed: u64,
    ) -> Result<Box<dyn Adversary>, AdversaryError> {
        let factory = self
            .factories
            .get(&spec.mode)
            .ok_or_else(|| AdversaryError::UnknownMode(spec.mode.clone()))?;
        if !(0.0..=1.0).contains(&spec.intensity) {
            return Err(AdversaryError::Intensity(spec.intensity));
        }
        if spec.max_delay == 0 {
            return Err(AdversaryError::Delay);
        }
        Ok(factory(spec, seed))
    }
}

impl Default for AdversaryRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register("replayer", |s, seed| Box::new(Replayer::new(s, seed)));
        r.register("tamperer", |s, seed| Box::new(Tamperer::new(s, seed)));
        r.register("forger", |s, seed| Box::new(Forger::new(s, seed)));
        r.register("eavesdropper", |s, seed| {
            Box::new(Eavesdropper::new(s, seed))
        });
        r.register("dropper", |s, seed| Box::new(Dropper::new(s, seed)));
        r
    }
}

impl fmt::Debug for AdversaryRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::NodeCredentials;
    use crate::transactions::make_dl;

    fn dl_message(id: u64, n: u128) -> Message {
        let creds = NodeCredentials::new(NodeId(n), 7, SecretValue([1; 32]));
        Message {
            id,
            from: 1,
            to: 0,
            kind: MessageKind::Dl,
            payload: make_dl(&creds, 10, DlFlag::Load).encode(),
            origin: Origin::Original,
        }
    }

    fn spec(mode: &str, intensity: f64) -> AdversarySpec {
        AdversarySpec {
            mode: mode.into(),
            intensity,
            ..AdversarySpec::default()
        }
    }

    #[test]
    fn registry_modes_and_validation() {
        let r = AdversaryRegistry::default();
        assert_eq!(
            r.modes().collect::<Vec<_>>(),
            ["dropper", "eavesdropper", "forger", "replayer", "tamperer"]
        );
        assert_eq!(
            r.build(&spec("sniffer", 1.0), 0).unwrap_err(),
            AdversaryError::UnknownMode("sniffer".into())
        );
        assert_eq!(
            r.build(&spec("replayer", 1.5), 0).unwrap_err(),
            AdversaryError::Intensity(1.5)
        );
        let zero_delay = AdversarySpec {
            max_delay: 0,
            ..spec("replayer", 1.0)
        };
        assert_eq!(r.build(&zero_delay, 0).unwrap_err(), AdversaryError::Delay);
    }

    #[test]
    fn replayer_at_full_intensity_copies_each_message_once() {
        let mut a = Replayer::new(&spec("replayer", 1.0), 3);
        for i in 0..100 {
            let msg = dl_message(i, i as u128);
            let out = a.observe(&msg, 0);
            assert_eq!(out.outcome, Outcome::Deliver);
            assert_eq!(out.injections.len(), 1);
            assert_eq!(out.injections[0].payload, msg.payload);
            assert!((1..=5).contains(&out.injections[0].delay));
        }
        assert_eq!(a.report().replayed, 100);
    }

    #[test]
    fn untargeted_kinds_pass() {
        let mut a = Tamperer::new(&spec("tamperer", 1.0), 3);
        let mut msg = dl_message(0, 1);
        msg.kind = MessageKind::Block;
        assert_eq!(a.observe(&msg, 0), Interference::pass());
        assert_eq!(a.report().observed, 0);
    }

    #[test]
    fn tamper_changes_exactly_one_byte() {
        let mut a = Tamperer::new(&spec("tamperer", 1.0), 3);
        for i in 0..200 {
            let msg = dl_message(i, 9);
            let Outcome::Tamper { index, value } = a.observe(&msg, 0).outcome else {
                panic!("no tamper")
            };
            let changed = inject_tamper(&msg.payload, index, value).unwrap();
            let diff = changed
                .iter()
                .zip(&msg.payload)
                .filter(|(a, b)| a != b)
                .count();
            assert_eq!(diff, 1);
        }
        assert!(inject_tamper(&[1, 2], 2, 0).is_none());
        assert!(inject_tamper(&[1, 2], 0, 1).is_none());
    }

    #[test]
    fn zero_intensity_never_acts() {
        let mut a = Dropper::new(&spec("dropper", 0.0), 1);
        for i in 0..100 {
            assert_eq!(a.observe(&dl_message(i, 1), 0).outcome, Outcome::Deliver);
        }
        assert_eq!(a.report().observed, 100);
        assert_eq!(a.report().dropped, 0);
    }

    #[test]
    fn same_seed_same_decisions() {
        let run = || {
            let mut a = Tamperer::new(&spec("tamperer", 0.3), 42);
            (0..500)
                .map(|i| a.observe(&dl_message(i, 5), 0))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn forger_produces_decodable_forgeries() {
        let mut a = Forger::new(&spec("forger", 1.0), 8);
        let mut ahead = 0;
        for i in 0..200 {
            let out = a.observe(&dl_message(i, 77), 0);
            let inj = &out.injections[0];
            assert_eq!(inj.origin, Origin::Forgery);
            DlTransaction::decode(&inj.payload).unwrap();
            ahead += inj.ahead as u32;
        }
        assert!(ahead > 50 && ahead < 150);
    }
}
