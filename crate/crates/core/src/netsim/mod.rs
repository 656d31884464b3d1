//! Deterministic discrete-event message fabric.
//!
//! Time is a logical tick. Every message is delivered one tick after it is
//! sent unless an adversary drops or delays it. Events due at the same tick
//! run in the order they were scheduled, so a run is a pure function of the
//! seed and the configuration.

mod adversary;
mod linkage;

pub use adversary::{
    inject_replay, inject_tamper, Adversary, AdversaryError, AdversaryFactory, AdversaryRegistry,
    AdversaryReport, AdversarySpec, Dropper, Eavesdropper, Forger, Injection, Interference,
    Outcome, Replayer, Tamperer,
};
pub use linkage::LinkageTracker;

use std::collections::BTreeMap;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::crypto::digest;

pub type NodeIndex = usize;

/// The DISCO always sits at index 0.
pub const DISCO: NodeIndex = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Dl,
    LoadControl,
    Genesis,
    Block,
    Receipt,
    /// Customer → own sensor/device: the contract it is installed under.
    Provision,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Original,
    Replay,
    Tamper,
    Forgery,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Message {
    pub id: u64,
    pub from: NodeIndex,
    pub to: NodeIndex,
    pub kind: MessageKind,
    pub payload: Vec<u8>,
    pub origin: Origin,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Recipient {
    One(NodeIndex),
    /// Every node except the sender.
    Broadcast,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Outgoing {
    pub to: Recipient,
    pub kind: MessageKind,
    pub payload: Vec<u8>,
}

impl Outgoing {
    pub fn to(to: NodeIndex, kind: MessageKind, payload: Vec<u8>) -> Self {
        Self {
            to: Recipient::One(to),
            kind,
            payload,
        }
    }

    pub fn broadcast(kind: MessageKind, payload: Vec<u8>) -> Self {
        Self {
            to: Recipient::Broadcast,
            kind,
            payload,
        }
    }
}

/// A simulated node. Handlers only see their own state and the message.
pub trait Node {
    fn on_tick(&mut self, tick: u64) -> Vec<Outgoing>;
    fn on_message(&mut self, tick: u64, msg: &Message) -> Vec<Outgoing>;
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TraceEvent {
    pub tick: u64,
    pub event: &'static str,
    pub msg: u64,
    pub from: NodeIndex,
    pub to: NodeIndex,
    pub kind: MessageKind,
    pub origin: Origin,
    pub len: usize,
    /// First 8 bytes of the payload digest, hex.
    pub payload: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
}

#[derive(Default, Debug)]
pub struct Network {
    tick: u64,
    seq: u64,
    next_id: u64,
    queue: BTreeMap<(u64, u64), Message>,
    adversaries: Vec<Box<dyn Adversary>>,
    counts: BTreeMap<(MessageKind, Origin), Counts>,
    trace: Option<Vec<TraceEvent>>,
}

impl Network {
    pub fn new(adversaries: Vec<Box<dyn Adversary>>) -> Self {
        Self {
            adversaries,
            ..Self::default()
        }
    }

    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn adversaries(&self) -> &[Box<dyn Adversary>] {
        &self.adversaries
    }

    pub fn counts(&self) -> &BTreeMap<(MessageKind, Origin), Counts> {
        &self.counts
    }

    /// Totals for one message kind across origins.
    pub fn kind_counts(&self, kind: MessageKind) -> Counts {
        self.counts.iter().filter(|((k, _), _)| *k == kind).fold(
            Counts::default(),
            |acc, (_, c)| Counts {
                sent: acc.sent + c.sent,
                delivered: acc.delivered + c.delivered,
                dropped: acc.dropped + c.dropped,
            },
        )
    }

    pub fn trace(&self) -> Option<&[TraceEvent]> {
        self.trace.as_deref()
    }

    pub fn write_trace(&self, out: &mut impl Write) -> io::Result<()> {
        for event in self.trace.iter().flatten() {
            serde_json::to_writer(&mut *out, event)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    fn record(&mut self, event: &'static str, msg: &Message) {
        if let Some(trace) = &mut self.trace {
            trace.push(TraceEvent {
                tick: self.tick,
                event,
                msg: msg.id,
                from: msg.from,
                to: msg.to,
                kind: msg.kind,
                origin: msg.origin,
                len: msg.payload.len(),
                payload: hex::encode(&digest(&msg.payload).as_bytes()[..8]),
            });
        }
    }

    fn count(&mut self, msg: &Message) -> &mut Counts {
        self.counts.entry((msg.kind, msg.origin)).or_default()
    }

    fn schedule(&mut self, due: u64, msg: Message) {
        self.queue.insert((due, self.seq), msg);
        self.seq += 1;
    }

    fn new_message(
        &mut self,
        from: NodeIndex,
        to: NodeIndex,
        kind: MessageKind,
        payload: Vec<u8>,
        origin: Origin,
    ) -> Message {
        let id = self.next_id;
        self.next_id += 1;
        Message {
            id,
            from,
            to,
            kind,
            payload,
            origin,
        }
    }

    /// Puts an original message on the wire. Each adversary, in order, may
    /// drop or modify it and may schedule extra messages.
    pub fn send(&mut self, from: NodeIndex, to: NodeIndex, kind: MessageKind, payload: Vec<u8>) {
        let mut msg = self.new_message(from, to, kind, payload, Origin::Original);
        self.count(&msg).sent += 1;
        self.record("send", &msg);
        let tick = self.tick;
        let mut ahead = Vec::new();
        let mut later = Vec::new();
        let mut dropped = false;
        for i in 0..self.adversaries.len() {
            let Interference {
                outcome,
                injections,
            } = self.adversaries[i].observe(&msg, tick);
            for inj in injections {
                if inj.ahead {
                    ahead.push(inj);
                } else {
                    later.push(inj);
                }
            }
            match outcome {
                Outcome::Deliver => {}
                Outcome::Drop => {
                    dropped = true;
                    break;
                }
                Outcome::Tamper { index, value } => {
                    if let Some(b) = msg.payload.get_mut(index) {
                        *b = value;
                        msg.origin = Origin::Tamper;
                        self.record("tamper", &msg);
                    }
                }
            }
        }
        for inj in ahead {
            self.inject(inj);
        }
        if dropped {
            // Attribute the loss to the message as it was sent.
            self.counts
                .entry((msg.kind, Origin::Original))
                .or_default()
                .dropped += 1;
            self.record("drop", &msg);
        } else {
            if msg.origin == Origin::Tamper {
                // Re-file the message under its new origin.
                self.counts
                    .entry((msg.kind, Origin::Original))
                    .or_default()
                    .sent -= 1;
                self.count(&msg).sent += 1;
            }
            self.schedule(tick + 1, msg);
        }
        for inj in later {
            self.inject(inj);
        }
    }

    fn inject(&mut self, inj: Injection) {
        let msg = self.new_message(inj.from, inj.to, inj.kind, inj.payload, inj.origin);
        self.count(&msg).sent += 1;
        self.record("inject", &msg);
        self.schedule(self.tick + 1 + inj.delay, msg);
    }

    /// Removes and returns every message due at the current tick.
    pub fn take_due(&mut self) -> Vec<Message> {
        let mut due = Vec::new();
        while let Some(entry) = self.queue.first_entry() {
            if entry.key().0 > self.tick {
                break;
            }
            let msg = entry.remove();
            self.count(&msg).delivered += 1;
            self.record("deliver", &msg);
            due.push(msg);
        }
        due
    }

    pub fn advance(&mut self) {
        self.tick += 1;
    }

    pub fn reports(&self) -> Vec<AdversaryReport> {
        self.adversaries.iter().map(|a| a.report()).collect()
    }
}

/// Nodes plus the network between them.
pub struct World<N: Node> {
    pub network: Network,
    nodes: Vec<N>,
}

impl<N: Node> World<N> {
    pub fn new(nodes: Vec<N>, network: Network) -> Self {
        Self { network, nodes }
    }

    pub fn tick(&self) -> u64 {
        self.network.tick()
    }

    pub fn nodes(&self) -> &[N] {
        &self.nodes
    }

    pub fn nodes_mut(&mut self) -> &mut [N] {
        &mut self.nodes
    }

    pub fn into_parts(self) -> (Vec<N>, Network) {
        (self.nodes, self.network)
    }

    /// Puts `out` on the wire as if `from` had produced it.
    pub fn dispatch(&mut self, from: NodeIndex, out: Vec<Outgoing>) {
        for o in out {
            match o.to {
                Recipient::One(to) => self.network.send(from, to, o.kind, o.payload),
                Recipient::Broadcast => {
                    for to in (0..self.nodes.len()).filter(|&i| i != from) {
                        self.network.send(from, to, o.kind, o.payload.clone());
                    }
                }
            }
        }
    }

    /// One tick: timers fire in node order, then due messages are handed to
    /// their recipients in schedule order.
    pub fn step(&mut self) {
        let tick = self.network.tick();
        for i in 0..self.nodes.len() {
            let out = self.nodes[i].on_tick(tick);
            self.dispatch(i, out);
        }
        for msg in self.network.take_due() {
            if let Some(node) = self.nodes.get_mut(msg.to) {
                let out = node.on_message(tick, &msg);
                self.dispatch(msg.to, out);
            }
        }
        self.network.advance();
    }

    /// Delivers until nothing is in flight, without firing timers.
    /// Bounded by `max_ticks` in case nodes keep answering each other.
    pub fn drain(&mut self, max_ticks: u64) {
        for _ in 0..max_ticks {
            if self.network.pending() == 0 {
                break;
            }
            let tick = self.network.tick();
            for msg in self.network.take_due() {
                if let Some(node) = self.nodes.get_mut(msg.to) {
                    let out = node.on_message(tick, &msg);
                    self.dispatch(msg.to, out);
                }
            }
            self.network.advance();
        }
    }
}
