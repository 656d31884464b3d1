//! DISCO and participant nodes wrapped as simulator actors.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{Decode, Encode};
use crate::crypto::PublicKey;
use crate::disco::{Commit, DiscoNode, DlVerdict, DropReason, Receipt, SignedContract};
use crate::ledger::Block;
use crate::netsim::{Message, MessageKind, Node, NodeIndex, Origin, Outgoing, DISCO};
use crate::participant::ParticipantNode;
use crate::policy::PeriodSummary;
use crate::transactions::{
    ContractTerms, DlFlag, GenesisTransaction, LoadControlTransaction, NodeRole, Payload,
};

use super::config::FlagMode;

/// A sensor or device the DISCO installs once the customer's contract is
/// on the ledger.
#[derive(Clone, Debug)]
pub struct PlannedSite {
    pub role: NodeRole,
    pub pk: PublicKey,
    pub label: String,
}

#[derive(Clone, Debug, Default)]
pub struct DiscoStats {
    /// `(origin, verdict)` for every DL message that reached the DISCO.
    pub dl: BTreeMap<Origin, BTreeMap<Option<DropReason>, u64>>,
    pub load_control_rejected: BTreeMap<String, u64>,
    pub genesis_rejected: BTreeMap<String, u64>,
    pub contracts_offered: u64,
    pub requests_issued: u64,
    pub receipts_issued: u64,
    pub periods: Vec<PeriodSummary>,
}

pub struct DiscoActor {
    pub node: DiscoNode,
    period_length: u64,
    addr: BTreeMap<PublicKey, NodeIndex>,
    offers: Vec<(PublicKey, ContractTerms)>,
    sites: BTreeMap<PublicKey, Vec<PlannedSite>>,
    installed: BTreeSet<PublicKey>,
    pub stats: DiscoStats,
}

impl DiscoActor {
    pub fn new(
        node: DiscoNode,
        period_length: u64,
        addr: BTreeMap<PublicKey, NodeIndex>,
        offers: Vec<(PublicKey, ContractTerms)>,
        sites: BTreeMap<PublicKey, Vec<PlannedSite>>,
    ) -> Self {
        Self {
            node,
            period_length,
            addr,
            offers,
            sites,
            installed: BTreeSet::new(),
            stats: DiscoStats::default(),
        }
    }

    /// Commits the period and publishes the block and receipts, without
    /// starting any new workflow. Used to close a run.
    pub fn commit_only(&mut self) -> Vec<Outgoing> {
        self.commit().0
    }

    fn commit(&mut self) -> (Vec<Outgoing>, PeriodSummary) {
        let Commit {
            block,
            receipts,
            summary,
        } = self.node.commit_period();
        let mut out = vec![Outgoing::broadcast(MessageKind::Block, block.encode())];
        self.stats.receipts_issued += receipts.len() as u64;
        for (owner, receipt) in receipts {
            if let Some(&to) = self.addr.get(&owner) {
                out.push(Outgoing::to(to, MessageKind::Receipt, receipt.encode()));
            }
        }
        self.stats.periods.push(summary.clone());
        (out, summary)
    }

    /// Closes the period and sends everything that follows from it.
    pub fn close_period(&mut self) -> Vec<Outgoing> {
        let (mut out, summary) = self.commit();
        if summary.period_id == 0 {
            for (customer, terms) in std::mem::take(&mut self.offers) {
                if let (Ok(tx), Some(&to)) = (
                    self.node.initiate_contract(&customer, &terms),
                    self.addr.get(&customer),
                ) {
                    self.stats.contracts_offered += 1;
                    out.push(Outgoing::to(to, MessageKind::LoadControl, tx.encode()));
                }
            }
        }
        out.extend(self.install_sites());
        for tx in self.node.determine_actions(&summary) {
            if let Some(&to) = self.addr.get(&tx.pk_rec) {
                self.stats.requests_issued += 1;
                out.push(Outgoing::to(to, MessageKind::LoadControl, tx.encode()));
            }
        }
        out
    }

    fn install_sites(&mut self) -> Vec<Outgoing> {
        let mut out = Vec::new();
        let ready: Vec<(PublicKey, SignedContract)> = self
            .sites
            .keys()
            .filter(|c| !self.installed.contains(*c))
            .filter_map(|c| self.node.contract_of(c).map(|k| (*c, k.clone())))
            .collect();
        for (customer, contract) in ready {
            self.installed.insert(customer);
            let Some(&to) = self.addr.get(&customer) else {
                continue;
            };
            for site in &self.sites[&customer] {
                if let Ok(g) =
                    self.node
                        .issue_sensor_genesis(site.role, site.pk, &site.label, &contract.t_id)
                {
                    out.push(Outgoing::to(to, MessageKind::Genesis, g.encode()));
                }
            }
        }
        out
    }

    fn on_dl(&mut self, msg: &Message) {
        let verdict = match self.node.verify_dl_bytes(&msg.payload) {
            DlVerdict::Accept { .. } => None,
            DlVerdict::Drop(reason) => Some(reason),
        };
        *self
            .stats
            .dl
            .entry(msg.origin)
            .or_default()
            .entry(verdict)
            .or_default() += 1;
    }

    fn on_load_control(&mut self, msg: &Message) {
        let result = LoadControlTransaction::decode(&msg.payload)
            .map_err(crate::disco::DiscoError::from)
            .and_then(|tx| self.node.receive_load_control(tx));
        if let Err(e) = result {
            *self
                .stats
                .load_control_rejected
                .entry(e.label())
                .or_default() += 1;
        }
    }

    fn on_genesis(&mut self, msg: &Message) {
        let result = GenesisTransaction::decode(&msg.payload)
            .map_err(crate::disco::DiscoError::from)
            .and_then(|g| self.node.receive_genesis(g));
        if let Err(e) = result {
            *self.stats.genesis_rejected.entry(e.label()).or_default() += 1;
        }
    }
}

/// Deterministic reading generator.
#[derive(Clone, Debug)]
pub struct DataSource {
    rng: ChaCha8Rng,
    min: u64,
    max: u64,
    flag: FlagMode,
    sent: u64,
}

impl DataSource {
    pub fn new(seed: u64, min: u64, max: u64, flag: FlagMode) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            min,
            max,
            flag,
            sent: 0,
        }
    }

    fn next(&mut self) -> (u64, DlFlag) {
        let data = self.rng.gen_range(self.min..=self.max);
        let flag = match self.flag {
            FlagMode::Load => DlFlag::Load,
            FlagMode::Demand => DlFlag::Demand,
            FlagMode::Alternate if self.sent.is_multiple_of(2) => DlFlag::Demand,
            FlagMode::Alternate => DlFlag::Load,
        };
        self.sent += 1;
        (data, flag)
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParticipantStats {
    pub reports_sent: u64,
    pub responses_sent: u64,
    pub malformed: u64,
    pub blocks_rejected: u64,
}

pub struct ParticipantActor {
    pub node: ParticipantNode,
    report_every: u64,
    offset: u64,
    source: DataSource,
    /// Own sensors and devices, for provisioning.
    sites: BTreeMap<PublicKey, NodeIndex>,
    pub stats: ParticipantStats,
}

impl ParticipantActor {
    pub fn new(node: ParticipantNode, report_every: u64, offset: u64, source: DataSource) -> Self {
        Self {
            node,
            report_every,
            offset: if report_every == 0 {
                0
            } else {
                offset % report_every
            },
            source,
            sites: BTreeMap::new(),
            stats: ParticipantStats::default(),
        }
    }

    pub fn with_sites(mut self, sites: BTreeMap<PublicKey, NodeIndex>) -> Self {
        self.sites = sites;
        self
    }

    fn send_to_disco(&mut self, txs: impl IntoIterator<Item = LoadControlTransaction>) -> Vec<Outgoing> {
        txs.into_iter()
            .map(|tx| {
                self.stats.responses_sent += 1;
                Outgoing::to(DISCO, MessageKind::LoadControl, tx.encode())
            })
            .collect()
    }

    fn on_load_control(&mut self, tx: LoadControlTransaction) -> Vec<Outgoing> {
        let reply = if Payload::is_contract(&tx.metadata) {
            self.node.countersign_contract(tx)
        } else {
            self.node.acknowledge_request(tx)
        };
        match reply {
            Ok(signed) => vec![Outgoing::to(
                DISCO,
                MessageKind::LoadControl,
                signed.encode(),
            )],
            Err(_) => Vec::new(),
        }
    }

    fn on_genesis(&mut self, g: GenesisTransaction) -> Vec<Outgoing> {
        let subject = g.subject_pk;
        let Ok((signed, contract)) = self.node.countersign_site_genesis(g) else {
            return Vec::new();
        };
        let mut out = vec![Outgoing::to(DISCO, MessageKind::Genesis, signed.encode())];
        if let Some(&to) = self.sites.get(&subject) {
            out.push(Outgoing::to(to, MessageKind::Provision, contract.encode()));
        }
        out
    }
}

impl Node for ParticipantActor {
    fn on_tick(&mut self, tick: u64) -> Vec<Outgoing> {
        if self.report_every == 0
            || tick % self.report_every != self.offset
            || !self.node.is_admitted()
        {
            return Vec::new();
        }
        let (data, flag) = self.source.next();
        match self.node.report(data, flag) {
            Ok(tx) => {
                self.stats.reports_sent += 1;
                vec![Outgoing::to(DISCO, MessageKind::Dl, tx.encode())]
            }
            Err(_) => Vec::new(),
        }
    }

    fn on_message(&mut self, _tick: u64, msg: &Message) -> Vec<Outgoing> {
        match msg.kind {
            MessageKind::Block => {
                match Block::decode(&msg.payload).map(|b| self.node.on_block(b)) {
                    Ok(Ok(responses)) => self.send_to_disco(responses),
                    Ok(Err(_)) => {
                        self.stats.blocks_rejected += 1;
                        Vec::new()
                    }
                    Err(_) => {
                        self.stats.malformed += 1;
                        Vec::new()
                    }
                }
            }
            MessageKind::Receipt => {
                match Receipt::decode(&msg.payload) {
                    Ok(r) => {
                        self.node.receive_receipt(r);
                    }
                    Err(_) => self.stats.malformed += 1,
                }
                Vec::new()
            }
            MessageKind::LoadControl => match LoadControlTransaction::decode(&msg.payload) {
                Ok(tx) => self.on_load_control(tx),
                Err(_) => {
                    self.stats.malformed += 1;
                    Vec::new()
                }
            },
            MessageKind::Genesis => match GenesisTransaction::decode(&msg.payload) {
                Ok(g) => self.on_genesis(g),
                Err(_) => {
                    self.stats.malformed += 1;
                    Vec::new()
                }
            },
            MessageKind::Provision => {
                match SignedContract::decode(&msg.payload) {
                    Ok(c) => self.node.provision(c),
                    Err(_) => self.stats.malformed += 1,
                }
                Vec::new()
            }
            MessageKind::Dl => Vec::new(),
        }
    }
}

impl Node for DiscoActor {
    fn on_tick(&mut self, tick: u64) -> Vec<Outgoing> {
        if tick.is_multiple_of(self.period_length) {
            self.close_period()
        } else {
            Vec::new()
        }
    }

    fn on_message(&mut self, _tick: u64, msg: &Message) -> Vec<Outgoing> {
        match msg.kind {
            MessageKind::Dl => self.on_dl(msg),
            MessageKind::LoadControl => self.on_load_control(msg),
            MessageKind::Genesis => self.on_genesis(msg),
            _ => {}
        }
        Vec::new()
    }
}

pub enum SimNode {
    Disco(Box<DiscoActor>),
    Participant(Box<ParticipantActor>),
}

impl SimNode {
    pub fn as_participant(&self) -> Option<&ParticipantActor> {
        match self {
            SimNode::Participant(p) => Some(p),
            SimNode::Disco(_) => None,
        }
    }

    pub fn as_disco_mut(&mut self) -> Option<&mut DiscoActor> {
        match self {
            SimNode::Disco(d) => Some(d),
            SimNode::Participant(_) => None,
        }
    }
}

impl Node for SimNode {
    fn on_tick(&mut self, tick: u64) -> Vec<Outgoing> {
        match self {
            SimNode::Disco(d) => d.on_tick(tick),
            SimNode::Participant(p) => p.on_tick(tick),
        }
    }

    fn on_message(&mut self, tick: u64, msg: &Message) -> Vec<Outgoing> {
        match self {
            SimNode::Disco(d) => d.on_message(tick, msg),
            SimNode::Participant(p) => p.on_message(tick, msg),
        }
    }
}
