//! Run report: counters gathered from the actors plus checks over the
//! final ledger.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::disco::{DiscoNode, DropReason};
use crate::ledger::{verify_chain, Entry, Ledger, LedgerError};
use crate::netsim::{AdversaryReport, MessageKind, Network, Origin};
use crate::participant::{AccessReport, ParticipantNode, Rejection};
use crate::policy::PeriodSummary;
use crate::transactions::{Action, LedgerView, NodeRole, Payload};

use super::bench::BenchReport;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct NodeCounts {
    pub producers: u64,
    pub consumers: u64,
    pub storage: u64,
    pub sensors: u64,
    pub devices: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct OriginCounts {
    pub delivered: u64,
    pub accepted: u64,
    pub dropped: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DlCounts {
    /// Reports produced by participants.
    pub sent: u64,
    /// DL messages that reached the DISCO, whatever their origin.
    pub delivered: u64,
    pub accepted: u64,
    pub dropped: u64,
    pub dropped_by_reason: BTreeMap<DropReason, u64>,
    pub by_origin: BTreeMap<Origin, OriginCounts>,
    /// Reports lost in transit.
    pub lost: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ReceiptCounts {
    pub issued: u64,
    pub verified: u64,
    pub rejected: u64,
    /// `verified / issued`; 1 when nothing was issued.
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ChainSummary {
    pub valid: bool,
    pub first_violation: Option<LedgerError>,
    pub blocks: u64,
    pub head: String,
    pub geneses: u64,
    pub load_control: u64,
    pub merkle_roots: u64,
    /// Sum of committed leaf counts.
    pub committed_leaves: u64,
    /// DL transactions stored as ledger entries. Always 0 by construction.
    pub dl_entries: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ContractCounts {
    pub offered: u64,
    pub signed: u64,
    pub site_geneses: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ActionCounts {
    /// Requests the DISCO signed and sent.
    pub requested: u64,
    /// Requests countersigned by their target and committed.
    pub committed: u64,
    /// Requests the target executed (status change or reading).
    pub executed: u64,
    pub responses_committed: u64,
    /// Refusals by participants, sensors and devices.
    pub refused: BTreeMap<Rejection, u64>,
    /// Load-control messages the DISCO did not accept.
    pub disco_rejected: BTreeMap<String, u64>,
    pub genesis_rejected: BTreeMap<String, u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct GatingCheck {
    pub status_changes: u64,
    /// Status changes not backed by an on-ledger, dual-signed,
    /// contract-conformant DISCO request.
    pub ungated: u64,
    pub responses: u64,
    /// Responses whose request reference does not resolve.
    pub unresolved_refs: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Lockstep {
    pub reporters: u64,
    pub in_sync: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct NetworkRow {
    pub kind: MessageKind,
    pub origin: Origin,
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub seed: u64,
    pub ticks: u64,
    pub period_length: u64,
    pub resync_window: u32,
    pub nodes: NodeCounts,
    pub dl: DlCounts,
    pub receipts: ReceiptCounts,
    pub chain: ChainSummary,
    pub contracts: ContractCounts,
    pub actions: ActionCounts,
    pub gating: GatingCheck,
    pub lockstep: Lockstep,
    /// Highest linkage score among eavesdroppers, if any ran.
    pub linkage_score: Option<f64>,
    pub adversaries: Vec<AdversaryReport>,
    pub network: Vec<NetworkRow>,
    pub periods: Vec<PeriodSummary>,
    pub audits: Vec<AccessReport>,
    /// Timings are kept out of run reports so they stay reproducible; see
    /// the `bench` command.
    pub benchmark: Option<BenchReport>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }

    /// Short human-readable summary.
    pub fn summary(&self) -> String {
        let mut lines = vec![
            format!(
                "blocks {} (chain {}), periods {}",
                self.chain.blocks,
                if self.chain.valid { "valid" } else { "INVALID" },
                self.periods.len()
            ),
            format!(
                "DL: sent {} delivered {} accepted {} dropped {}",
                self.dl.sent, self.dl.delivered, self.dl.accepted, self.dl.dropped
            ),
        ];
        for (reason, n) in &self.dl.dropped_by_reason {
            lines.push(format!("  dropped {reason:?}: {n}"));
        }
        lines.push(format!(
            "receipts: {}/{} verified",
            self.receipts.verified, self.receipts.issued
        ));
        lines.push(format!(
            "contracts: {} offered, {} signed; site geneses {}",
            self.contracts.offered, self.contracts.signed, self.contracts.site_geneses
        ));
        lines.push(format!(
            "actions: {} requested, {} committed, {} executed, {} refused",
            self.actions.requested,
            self.actions.committed,
            self.actions.executed,
            self.actions.refused.values().sum::<u64>()
        ));
        lines.push(format!(
            "lockstep: {}/{} reporters in sync",
            self.lockstep.in_sync, self.lockstep.reporters
        ));
        if let Some(score) = self.linkage_score {
            lines.push(format!("linkage score: {score:.3}"));
        }
        lines.join("\n")
    }
}

pub(super) fn dl_counts(
    sent: u64,
    seen: &BTreeMap<Origin, BTreeMap<Option<DropReason>, u64>>,
    net: &Network,
) -> DlCounts {
    let mut c = DlCounts {
        sent,
        lost: net.kind_counts(MessageKind::Dl).dropped,
        ..DlCounts::default()
    };
    for (origin, verdicts) in seen {
        let row = c.by_origin.entry(*origin).or_default();
        for (verdict, n) in verdicts {
            row.delivered += n;
            match verdict {
                None => row.accepted += n,
                Some(reason) => {
                    row.dropped += n;
                    *c.dropped_by_reason.entry(*reason).or_default() += n;
                }
            }
        }
        c.delivered += row.delivered;
        c.accepted += row.accepted;
        c.dropped += row.dropped;
    }
    c
}

pub(super) fn chain_summary(ledger: &Ledger) -> ChainSummary {
    let check = verify_chain(ledger.blocks());
    let mut s = ChainSummary {
        valid: check.valid,
        first_violation: check.first_violation,
        blocks: ledger.height(),
        head: ledger.head_hash().to_hex(),
        geneses: 0,
        load_control: 0,
        merkle_roots: 0,
        committed_leaves: 0,
        dl_entries: 0,
    };
    for (_, entry) in ledger.entries() {
        match entry {
            Entry::Genesis(_) => s.geneses += 1,
            Entry::LoadControl(_) => s.load_control += 1,
            Entry::MerkleRoot(r) => {
                s.merkle_roots += 1;
                s.committed_leaves += u64::from(r.leaf_count);
            }
        }
    }
    s
}

/// Counts committed contracts, requests and responses on the DISCO ledger.
pub(super) fn committed(ledger: &Ledger) -> (u64, u64, u64, u64) {
    let authority = ledger.authority_key();
    let (mut contracts, mut sites, mut requests, mut responses) = (0, 0, 0, 0);
    for (_, entry) in ledger.entries() {
        match entry {
            Entry::Genesis(g) if g.role.is_customer_site() => sites += 1,
            Entry::LoadControl(tx) if tx.pk_gen == authority => {
                match Payload::from_metadata(&tx.metadata) {
                    Ok(Payload::Contract(_)) => contracts += 1,
                    Ok(Payload::Request(_)) => requests += 1,
                    _ => {}
                }
            }
            Entry::LoadControl(tx) if tx.ref_disco_id.is_some() => responses += 1,
            _ => {}
        }
    }
    (contracts, sites, requests, responses)
}

/// Checks every status change on every site node against the DISCO's
/// final ledger, and every committed response's back-reference.
pub fn gating(disco: &DiscoNode, sites: &[&ParticipantNode]) -> GatingCheck {
    let ledger = disco.ledger();
    let authority = ledger.authority_key();
    let mut g = GatingCheck::default();
    for node in sites {
        for change in node.status_log() {
            g.status_changes += 1;
            if !gated(disco, node, &change.request) {
                g.ungated += 1;
            }
        }
    }
    for (_, entry) in ledger.entries() {
        let Entry::LoadControl(tx) = entry else {
            continue;
        };
        let Some(r) = tx.ref_disco_id else { continue };
        g.responses += 1;
        let resolves = ledger.load_control(&r).is_some_and(|req| {
            req.pk_gen == authority
                && req.pk_rec == tx.pk_gen
                && matches!(
                    Payload::from_metadata(&req.metadata),
                    Ok(Payload::Request(_))
                )
        });
        if !resolves {
            g.unresolved_refs += 1;
        }
    }
    g
}

fn gated(disco: &DiscoNode, node: &ParticipantNode, request: &crate::crypto::Digest) -> bool {
    let ledger = disco.ledger();
    let Some(tx) = ledger.load_control(request) else {
        return false;
    };
    if tx.pk_gen != ledger.authority_key()
        || tx.pk_rec != node.public()
        || !tx.generator_signature_valid()
        || !tx.receiver_signature_valid()
    {
        return false;
    }
    let Ok(Payload::Request(req)) = Payload::from_metadata(&tx.metadata) else {
        return false;
    };
    let Some(genesis) = ledger.genesis_of(&node.public()) else {
        return false;
    };
    if genesis.role != NodeRole::Device || req.target != node.public() {
        return false;
    }
    let terms = genesis
        .customer_pk
        .and_then(|c| disco.contract_of(&c))
        .filter(|c| Some(c.t_id) == genesis.contract_ref)
        .map(|c| &c.terms);
    terms.is_some_and(|t| {
        t.allows_device(genesis.label())
            && t.allows_hour(req.hour)
            && matches!(req.action, Action::Off | Action::ReduceBy(_))
    })
}
