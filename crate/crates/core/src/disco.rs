//! The distribution company node: verifies DL reports, commits each period
//! as a Merkle root, drives the contract workflow and issues load-control
//! requests.

use std::collections::{BTreeMap, BTreeSet};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use thiserror::Error;

use crate::codec::{self, CodecError, Decode, Encode, Reader, Writer};
use crate::crypto::{seal, CryptoError, Digest, KeyPair, PublicKey};
use crate::identity::{IdentityError, NodeId, Registry, SecretValue};
use crate::ledger::{Block, Entry, Ledger, MerkleRootEntry, PendingView};
use crate::merkle::{MerkleProof, MerkleTree};
use crate::policy::{ControllableDevice, LoadControlPolicy, PeriodSummary};
use crate::transactions::{
    dl_secret, Action, ActionRequest, Admissible, ContractTerms, DlFlag, DlTransaction,
    GenesisTransaction, LedgerView, LoadControlTransaction, NodeRole, Payload, Reason,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    UnknownId,
    BadSecret,
    DuplicateNonce,
    /// Bytes did not decode as a DL transaction.
    Malformed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DlVerdict {
    /// `skipped` is how many positions the record jumped to resynchronise
    /// (always 0 without a resync window).
    Accept {
        owner: PublicKey,
        skipped: u64,
    },
    Drop(DropReason),
}

impl DlVerdict {
    pub fn is_accept(&self) -> bool {
        matches!(self, DlVerdict::Accept { .. })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DiscoError {
    #[error("party has no genesis on the ledger")]
    NotAdmitted,
    #[error("reference does not resolve to a signed contract")]
    BadRef,
    #[error("transaction rejected: {0}")]
    Rejected(Reason),
    #[error("transaction was not requested by this node")]
    Unsolicited,
    #[error("role {0:?} cannot be admitted this way")]
    WrongRole(NodeRole),
    #[error(transparent)]
    Identity(#[from] IdentityError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Malformed(#[from] CodecError),
}

impl DiscoError {
    /// Stable snake_case label for counters.
    pub fn label(&self) -> String {
        match self {
            DiscoError::NotAdmitted => "not_admitted".into(),
            DiscoError::BadRef => "bad_ref".into(),
            DiscoError::Rejected(r) => serde_json::to_value(r)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_default(),
            DiscoError::Unsolicited => "unsolicited".into(),
            DiscoError::WrongRole(_) => "wrong_role".into(),
            DiscoError::Identity(_) => "identity".into(),
            DiscoError::Crypto(_) => "crypto".into(),
            DiscoError::Malformed(_) => "malformed".into(),
        }
    }
}

/// Inclusion proof handed to the owner of a committed DL report.
///
/// Layout: `period_id u64 || DL record || MerkleProof record`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Receipt {
    pub period_id: u64,
    pub tx: DlTransaction,
    pub proof: MerkleProof,
}

impl Encode for Receipt {
    fn encode_to(&self, w: &mut Writer) {
        w.u64(self.period_id);
        self.tx.encode_to(w);
        self.proof.encode_to(w);
    }
}

impl Decode for Receipt {
    fn decode_from(r: &mut Reader<'_>) -> codec::Result<Self> {
        Ok(Self {
            period_id: r.u64()?,
            tx: DlTransaction::decode_from(r)?,
            proof: MerkleProof::decode_from(r)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DiscoConfig {
    pub resync_window: u32,
    /// Only address devices whose contract allows the class and the hour.
    /// Turning this off models a DISCO that oversteps its contracts.
    pub respect_contracts: bool,
    /// Ask every admitted sensor for a reading every this many periods
    /// (0 = never).
    pub sensor_poll_every: u64,
}

impl Default for DiscoConfig {
    fn default() -> Self {
        Self {
            resync_window: 0,
            respect_contracts: true,
            sensor_poll_every: 0,
        }
    }
}

/// Result of closing a period.
#[derive(Clone, Debug)]
pub struct Commit {
    pub block: Block,
    pub receipts: Vec<(PublicKey, Receipt)>,
    pub summary: PeriodSummary,
}

/// What a countersigned or response transaction turned into.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Queued {
    Contract { customer: PublicKey },
    Request { target: PublicKey },
    Response { request: Digest, from: PublicKey },
}

#[derive(Clone, Debug)]
enum Proposal {
    Contract { customer: PublicKey },
    Request { target: PublicKey },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SignedContract {
    pub t_id: Digest,
    pub terms: ContractTerms,
}

/// Layout: `t_id (32) || terms`.
impl Encode for SignedContract {
    fn encode_to(&self, w: &mut Writer) {
        w.digest(&self.t_id);
        self.terms.encode_to(w);
    }
}

impl Decode for SignedContract {
    fn decode_from(r: &mut Reader<'_>) -> codec::Result<Self> {
        Ok(Self {
            t_id: r.digest()?,
            terms: ContractTerms::decode_from(r)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SiteNode {
    pub pk: PublicKey,
    pub role: NodeRole,
    pub label: String,
    pub customer: PublicKey,
}

pub struct DiscoNode {
    keypair: KeyPair,
    config: DiscoConfig,
    registry: Registry,
    ledger: Ledger,
    policy: Box<dyn LoadControlPolicy>,
    period_id: u64,
    pending_dl: Vec<(PublicKey, DlTransaction)>,
    period_load: u64,
    period_demand: u64,
    queue: Vec<Entry>,
    awaiting: BTreeMap<Digest, (LoadControlTransaction, Proposal)>,
    pending_geneses: BTreeMap<Digest, GenesisTransaction>,
    outstanding_requests: BTreeSet<Digest>,
    proposed_terms: BTreeMap<Digest, (PublicKey, ContractTerms)>,
    contracts: BTreeMap<PublicKey, SignedContract>,
    site_nodes: Vec<SiteNode>,
    readings: BTreeMap<PublicKey, u64>,
    seal_rng: ChaCha20Rng,
}

impl DiscoNode {
    /// Creates the node and queues its own genesis, so the first commit
    /// produces block 0.
    pub fn new(
        keypair: KeyPair,
        policy: Box<dyn LoadControlPolicy>,
        config: DiscoConfig,
        seal_seed: u64,
    ) -> Self {
        let genesis = GenesisTransaction::participant(NodeRole::Disco, keypair.public(), "disco")
            .sign_as_disco(&keypair);
        Self {
            ledger: Ledger::new(keypair.public()),
            registry: Registry::with_window(config.resync_window),
            keypair,
            config,
            policy,
            period_id: 0,
            pending_dl: Vec::new(),
            period_load: 0,
            period_demand: 0,
            queue: vec![Entry::Genesis(genesis)],
            awaiting: BTreeMap::new(),
            pending_geneses: BTreeMap::new(),
            outstanding_requests: BTreeSet::new(),
            proposed_terms: BTreeMap::new(),
            contracts: BTreeMap::new(),
            site_nodes: Vec::new(),
            readings: BTreeMap::new(),
            seal_rng: ChaCha20Rng::seed_from_u64(seal_seed),
        }
    }

    pub fn public(&self) -> PublicKey {
        self.keypair.public()
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn policy(&self) -> &dyn LoadControlPolicy {
        self.policy.as_ref()
    }

    /// Period that the next commit closes.
    pub fn period_id(&self) -> u64 {
        self.period_id
    }

    pub fn pending_dl(&self) -> usize {
        self.pending_dl.len()
    }

    pub fn queued(&self) -> &[Entry] {
        &self.queue
    }

    pub fn outstanding_requests(&self) -> &BTreeSet<Digest> {
        &self.outstanding_requests
    }

    pub fn contract_of(&self, customer: &PublicKey) -> Option<&SignedContract> {
        self.contracts.get(customer)
    }

    pub fn site_nodes(&self) -> &[SiteNode] {
        &self.site_nodes
    }

    /// Latest sensor reading received through a response transaction.
    pub fn reading(&self, sensor: &PublicKey) -> Option<u64> {
        self.readings.get(sensor).copied()
    }

    /// Registers the DL credentials agreed with a node at installation.
    pub fn register_reporter(
        &mut self,
        owner: PublicKey,
        id: NodeId,
        pattern_delta: u128,
        secret_value: SecretValue,
    ) -> Result<(), DiscoError> {
        self.registry
            .register(id, pattern_delta, secret_value, owner)?;
        Ok(())
    }

    /// Issues and queues the genesis for a producer, consumer or storage node.
    pub fn admit(
        &mut self,
        role: NodeRole,
        pk: PublicKey,
        label: &str,
    ) -> Result<GenesisTransaction, DiscoError> {
        if role == NodeRole::Disco || role.is_customer_site() {
            return Err(DiscoError::WrongRole(role));
        }
        let genesis = GenesisTransaction::participant(role, pk, label).sign_as_disco(&self.keypair);
        self.enqueue(Entry::Genesis(genesis.clone()))?;
        Ok(genesis)
    }

    pub fn verify_dl_bytes(&mut self, bytes: &[u8]) -> DlVerdict {
        match DlTransaction::decode(bytes) {
            Ok(tx) => self.verify_dl(&tx),
            Err(_) => DlVerdict::Drop(DropReason::Malformed),
        }
    }

    /// Checks a report against the registry. On success the report joins the
    /// current period and the owner's record moves to its next id.
    pub fn verify_dl(&mut self, tx: &DlTransaction) -> DlVerdict {
        let Some(located) = self.registry.locate(tx.id) else {
            return DlVerdict::Drop(DropReason::UnknownId);
        };
        if located.offset < 0 {
            return DlVerdict::Drop(DropReason::DuplicateNonce);
        }
        let skipped = located.offset as u64;
        let record = self
            .registry
            .record(&located.owner)
            .expect("located owner is registered");
        let expected = record.credentials.advance_by(skipped);
        if dl_secret(&expected.secret_value, expected.nonce, tx.data, tx.flag) != tx.secret {
            return DlVerdict::Drop(DropReason::BadSecret);
        }
        self.registry.advance(&located.owner, skipped + 1);
        self.pending_dl.push((located.owner, *tx));
        match self.ledger.genesis_of(&located.owner).map(|g| g.role) {
            Some(NodeRole::Sensor) => {
                self.readings.insert(located.owner, tx.data);
            }
            _ => match tx.flag {
                DlFlag::Load => self.period_load = self.period_load.saturating_add(tx.data),
                DlFlag::Demand => self.period_demand = self.period_demand.saturating_add(tx.data),
            },
        }
        DlVerdict::Accept {
            owner: located.owner,
            skipped,
        }
    }

    /// Closes the current period: commits the Merkle root of the accepted
    /// reports together with every queued ledger entry, and hands out one
    /// receipt per report.
    pub fn commit_period(&mut self) -> Commit {
        let period_id = self.period_id;
        let mut entries = std::mem::take(&mut self.queue);
        let mut receipts = Vec::with_capacity(self.pending_dl.len());
        if !self.pending_dl.is_empty() {
            let tree = MerkleTree::build(self.pending_dl.iter().map(|(_, tx)| tx.leaf()).collect())
                .expect("non-empty period");
            for (i, (owner, tx)) in self.pending_dl.iter().enumerate() {
                let proof = tree.prove(i).expect("index within tree");
                receipts.push((
                    *owner,
                    Receipt {
                        period_id,
                        tx: *tx,
                        proof,
                    },
                ));
            }
            entries.push(Entry::MerkleRoot(MerkleRootEntry {
                period_id,
                root: tree.root(),
                leaf_count: tree.len() as u32,
            }));
        }
        let block = Block::produce(
            self.ledger.height(),
            self.ledger.head_hash(),
            period_id,
            entries,
            &self.keypair,
        );
        self.ledger
            .append(block.clone())
            .expect("queued entries were checked against the ledger");
        self.absorb(&block);

        let summary = PeriodSummary {
            period_id,
            hour: (period_id % 24) as u8,
            total_load: self.period_load,
            total_demand: self.period_demand,
            accepted: self.pending_dl.len() as u64,
        };
        self.pending_dl.clear();
        self.period_load = 0;
        self.period_demand = 0;
        self.period_id += 1;
        Commit {
            block,
            receipts,
            summary,
        }
    }

    fn absorb(&mut self, block: &Block) {
        for entry in &block.entries {
            match entry {
                Entry::LoadControl(tx) => {
                    if let Some((customer, terms)) = self.proposed_terms.remove(&tx.t_id) {
                        self.contracts.insert(
                            customer,
                            SignedContract {
                                t_id: tx.t_id,
                                terms,
                            },
                        );
                    }
                }
                Entry::Genesis(g) if g.role.is_customer_site() => {
                    self.site_nodes.push(SiteNode {
                        pk: g.subject_pk,
                        role: g.role,
                        label: g.label().to_string(),
                        customer: g.customer_pk.expect("site genesis names its customer"),
                    });
                }
                _ => {}
            }
        }
    }

    /// Starts the contract workflow with an admitted consumer. The returned
    /// transaction carries the sealed terms and the DISCO signature only.
    pub fn initiate_contract(
        &mut self,
        customer: &PublicKey,
        terms: &ContractTerms,
    ) -> Result<LoadControlTransaction, DiscoError> {
        match self.ledger.genesis_of(customer) {
            Some(g) if g.role == NodeRole::Consumer => {}
            _ => return Err(DiscoError::NotAdmitted),
        }
        let mut eph = [0u8; 32];
        self.seal_rng.fill_bytes(&mut eph);
        let sealed = seal(customer, &terms.encode(), eph)?;
        let tx = self.propose(*customer, Payload::Contract(sealed).to_metadata());
        self.proposed_terms
            .insert(tx.t_id, (*customer, terms.clone()));
        self.awaiting.insert(
            tx.t_id,
            (
                tx.clone(),
                Proposal::Contract {
                    customer: *customer,
                },
            ),
        );
        Ok(tx)
    }

    fn propose(&self, receiver: PublicKey, metadata: Vec<u8>) -> LoadControlTransaction {
        let head = self
            .ledger
            .chain_head_of(&self.public())
            .expect("DISCO genesis is committed before any proposal");
        LoadControlTransaction::new(head, self.public(), receiver, None, metadata)
            .sign_as_generator(&self.keypair)
            .expect("generator is this node")
    }

    /// Issues the genesis of a sensor or device under an on-ledger contract.
    /// The customer named in the contract must countersign it.
    pub fn issue_sensor_genesis(
        &mut self,
        role: NodeRole,
        subject: PublicKey,
        label: &str,
        contract_tid: &Digest,
    ) -> Result<GenesisTransaction, DiscoError> {
        if !role.is_customer_site() {
            return Err(DiscoError::WrongRole(role));
        }
        let contract = self
            .ledger
            .load_control(contract_tid)
            .filter(|c| c.pk_gen == self.public() && Payload::is_contract(&c.metadata))
            .ok_or(DiscoError::BadRef)?;
        let genesis =
            GenesisTransaction::customer_site(role, subject, contract.pk_rec, *contract_tid, label)
                .sign_as_disco(&self.keypair);
        self.pending_geneses.insert(genesis.id(), genesis.clone());
        Ok(genesis)
    }

    /// Accepts a site genesis back from the customer.
    pub fn receive_genesis(&mut self, genesis: GenesisTransaction) -> Result<(), DiscoError> {
        let id = genesis.id();
        self.check(&Entry::Genesis(genesis.clone()))?;
        if !self.pending_geneses.contains_key(&id) {
            return Err(DiscoError::Unsolicited);
        }
        self.pending_geneses.remove(&id);
        self.queue.push(Entry::Genesis(genesis));
        Ok(())
    }

    /// Turns the period's policy decisions (and any due sensor polls) into
    /// DISCO-signed requests awaiting the target's countersignature.
    pub fn determine_actions(&mut self, summary: &PeriodSummary) -> Vec<LoadControlTransaction> {
        let devices: Vec<ControllableDevice> = self
            .site_nodes
            .iter()
            .filter(|n| n.role == NodeRole::Device)
            .filter(|n| !self.config.respect_contracts || self.in_contract(n, summary.hour))
            .map(|n| ControllableDevice {
                pk: n.pk,
                class: n.label.clone(),
                customer: n.customer,
            })
            .collect();
        let mut planned: Vec<(PublicKey, String, Action)> = self
            .policy
            .plan(summary, &devices)
            .into_iter()
            .map(|a| (a.target, a.label, a.action))
            .collect();
        let poll = self.config.sensor_poll_every;
        if poll > 0 && summary.period_id.is_multiple_of(poll) {
            planned.extend(
                self.site_nodes
                    .iter()
                    .filter(|n| n.role == NodeRole::Sensor)
                    .map(|n| (n.pk, n.label.clone(), Action::ReportReading)),
            );
        }
        planned
            .into_iter()
            .map(|(target, label, action)| self.request(target, label, action, summary))
            .collect()
    }

    fn in_contract(&self, node: &SiteNode, hour: u8) -> bool {
        self.contracts
            .get(&node.customer)
            .is_some_and(|c| c.terms.allows_device(&node.label) && c.terms.allows_hour(hour))
    }

    /// Builds one signed request. Exposed so scenarios can script requests
    /// outside the policy.
    pub fn request(
        &mut self,
        target: PublicKey,
        label: String,
        action: Action,
        summary: &PeriodSummary,
    ) -> LoadControlTransaction {
        let payload = Payload::Request(ActionRequest {
            target,
            label,
            action,
            period_id: summary.period_id,
            hour: summary.hour,
        });
        let tx = self.propose(target, payload.to_metadata());
        self.outstanding_requests.insert(tx.t_id);
        self.awaiting
            .insert(tx.t_id, (tx.clone(), Proposal::Request { target }));
        tx
    }

    /// Handles a load-control transaction coming back from the network:
    /// either a countersigned DISCO proposal or a response to a request,
    /// which the DISCO countersigns. Admissible results are queued for the
    /// next block.
    pub fn receive_load_control(
        &mut self,
        tx: LoadControlTransaction,
    ) -> Result<Queued, DiscoError> {
        if tx.pk_gen == self.public() {
            self.check(&Entry::LoadControl(tx.clone()))?;
            let (proposed, kind) = self.awaiting.get(&tx.t_id).ok_or(DiscoError::Unsolicited)?;
            if proposed.sign_gen != tx.sign_gen {
                return Err(DiscoError::Unsolicited);
            }
            let queued = match kind {
                Proposal::Contract { customer } => Queued::Contract {
                    customer: *customer,
                },
                Proposal::Request { target } => Queued::Request { target: *target },
            };
            self.awaiting.remove(&tx.t_id);
            self.queue.push(Entry::LoadControl(tx));
            return Ok(queued);
        }
        if tx.pk_rec != self.public() {
            return Err(DiscoError::Unsolicited);
        }
        if tx.t_id != tx.compute_tid() {
            return Err(DiscoError::Rejected(Reason::BadTid));
        }
        if !tx.generator_signature_valid() {
            return Err(DiscoError::Rejected(Reason::BadSignature));
        }
        if self.ledger.contains_id(&tx.t_id) || self.queue.iter().any(|e| e.id() == Some(tx.t_id)) {
            return Err(DiscoError::Rejected(Reason::Duplicate));
        }
        let request = tx
            .ref_disco_id
            .filter(|r| self.outstanding_requests.contains(r))
            .ok_or(DiscoError::Rejected(Reason::BadRef))?;
        let Ok(Payload::Response(response)) = Payload::from_metadata(&tx.metadata) else {
            return Err(DiscoError::Rejected(Reason::BadRef));
        };
        if response.request != request {
            return Err(DiscoError::Rejected(Reason::BadRef));
        }
        let from = tx.pk_gen;
        let signed = tx
            .countersign_as_receiver(&self.keypair)
            .expect("receiver is this node");
        self.check(&Entry::LoadControl(signed.clone()))?;
        self.outstanding_requests.remove(&request);
        if response.action == Action::ReportReading {
            self.readings.insert(from, response.value);
        }
        self.queue.push(Entry::LoadControl(signed));
        Ok(Queued::Response { request, from })
    }

    /// Admissibility against the ledger plus everything already queued.
    fn check(&self, entry: &Entry) -> Result<(), DiscoError> {
        let mut view = PendingView::new(&self.ledger);
        for queued in &self.queue {
            view.add(queued);
        }
        let result = match entry {
            Entry::LoadControl(tx) => tx.check(&view),
            Entry::Genesis(g) => g.check(&view),
            Entry::MerkleRoot(_) => Ok(()),
        };
        result.map_err(DiscoError::Rejected)
    }

    fn enqueue(&mut self, entry: Entry) -> Result<(), DiscoError> {
        self.check(&entry)?;
        self.queue.push(entry);
        Ok(())
    }
}

impl std::fmt::Debug for DiscoNode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiscoNode")
            .field("pk", &self.public())
            .field("period_id", &self.period_id)
            .field("height", &self.ledger.height())
            .field("pending_dl", &self.pending_dl.len())
            .field("queued", &self.queue.len())
            .finish()
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::crypto::{keygen, open};
    use crate::identity::NodeCredentials;
    use crate::merkle::verify_proof;
    use crate::policy::{PolicyParams, ThresholdPolicy};
    use crate::transactions::{make_dl, ActionResponse};

    pub(crate) fn key(n: u8) -> KeyPair {
        keygen(&[n; 32]).unwrap()
    }

    pub(crate) fn terms() -> ContractTerms {
        ContractTerms {
            device_classes: vec!["ev".into(), "hvac".into()],
            hours: (0, 24),
            sensors: vec![("temperature".into(), 2)],
        }
    }

    pub(crate) fn disco(params: PolicyParams, config: DiscoConfig) -> DiscoNode {
        DiscoNode::new(
            key(1),
            Box::new(ThresholdPolicy::new(&params).unwrap()),
            config,
            7,
        )
    }

    fn creds(n: u8) -> NodeCredentials {
        NodeCredentials::new(
            NodeId(u128::from(n) << 64),
            0x1000 + u128::from(n),
            SecretValue([n; 32]),
        )
    }

    /// DISCO with one admitted consumer (key 2) reporting with `creds(2)`.
    fn admitted(config: DiscoConfig) -> (DiscoNode, NodeCredentials) {
        let mut d = disco(PolicyParams::default(), config);
        let c = creds(2);
        d.admit(NodeRole::Consumer, key(2).public(), "c").unwrap();
        d.register_reporter(
            key(2).public(),
            c.current_id,
            c.pattern_delta,
            c.secret_value,
        )
        .unwrap();
        d.commit_period();
        (d, c)
    }

    /// Adds a signed contract for consumer key(2) and one device per class.
    pub(crate) fn with_devices(d: &mut DiscoNode, classes: &[&str]) -> Vec<KeyPair> {
        let customer = key(2);
        let proposal = d.initiate_contract(&customer.public(), &terms()).unwrap();
        let signed = proposal.countersign_as_receiver(&customer).unwrap();
        d.receive_load_control(signed.clone()).unwrap();
        d.commit_period();
        let mut keys = Vec::new();
        for (i, class) in classes.iter().enumerate() {
            let dev = key(100 + i as u8);
            let g = d
                .issue_sensor_genesis(NodeRole::Device, dev.public(), class, &signed.t_id)
                .unwrap()
                .countersign_as_customer(&customer)
                .unwrap();
            d.receive_genesis(g).unwrap();
            keys.push(dev);
        }
        d.commit_period();
        keys
    }

    #[test]
    fn accept_then_replay_then_tamper() {
        let (mut d, mut c) = admitted(DiscoConfig::default());
        let tx = make_dl(&c, 500, DlFlag::Load);
        assert_eq!(
            d.verify_dl(&tx),
            DlVerdict::Accept {
                owner: key(2).public(),
                skipped: 0
            }
        );
        c = c.advance();
        assert_eq!(d.verify_dl(&tx), DlVerdict::Drop(DropReason::UnknownId));
        let mut bad = make_dl(&c, 500, DlFlag::Load);
        bad.data = 501;
        assert_eq!(d.verify_dl(&bad), DlVerdict::Drop(DropReason::BadSecret));
        // A rejected report leaves the record where it was.
        assert!(d.verify_dl(&make_dl(&c, 500, DlFlag::Load)).is_accept());
        assert_eq!(
            d.registry().record(&key(2).public()).unwrap().credentials,
            c.advance()
        );
    }

    #[test]
    fn window_reports_duplicates_and_resyncs() {
        let (mut d, c) = admitted(DiscoConfig {
            resync_window: 4,
            ..DiscoConfig::default()
        });
        let first = make_dl(&c, 1, DlFlag::Load);
        assert!(d.verify_dl(&first).is_accept());
        assert_eq!(
            d.verify_dl(&first),
            DlVerdict::Drop(DropReason::DuplicateNonce)
        );
        // Two reports lost in transit: the third still lands.
        let ahead = c.advance_by(3);
        assert_eq!(
            d.verify_dl(&make_dl(&ahead, 9, DlFlag::Load)),
            DlVerdict::Accept {
                owner: key(2).public(),
                skipped: 2
            }
        );
        assert_eq!(
            d.registry().record(&key(2).public()).unwrap().credentials,
            ahead.advance()
        );
        // Beyond the window nothing matches.
        let far = ahead.advance_by(10);
        assert_eq!(
            d.verify_dl(&make_dl(&far, 9, DlFlag::Load)),
            DlVerdict::Drop(DropReason::UnknownId)
        );
    }

    #[test]
    fn malformed_bytes() {
        let (mut d, c) = admitted(DiscoConfig::default());
        let mut bytes = make_dl(&c, 1, DlFlag::Load).encode();
        bytes.pop();
        assert_eq!(
            d.verify_dl_bytes(&bytes),
            DlVerdict::Drop(DropReason::Malformed)
        );
    }

    #[test]
    fn empty_period_has_no_root_and_no_receipts() {
        let (mut d, _) = admitted(DiscoConfig::default());
        let commit = d.commit_period();
        assert!(commit.block.merkle_root().is_none());
        assert!(commit.receipts.is_empty());
        assert_eq!(d.ledger().height(), 2);
    }

    #[test]
    fn single_report_root_is_its_leaf() {
        let (mut d, c) = admitted(DiscoConfig::default());
        let tx = make_dl(&c, 42, DlFlag::Demand);
        d.verify_dl(&tx);
        let commit = d.commit_period();
        let root = commit.block.merkle_root().unwrap();
        assert_eq!(root.root, tx.leaf());
        assert_eq!(root.leaf_count, 1);
        assert_eq!(commit.summary.total_demand, 42);
    }

    #[test]
    fn fifty_receipts_verify_against_the_committed_root() {
        let (mut d, mut c) = admitted(DiscoConfig::default());
        for i in 0..50 {
            assert!(d.verify_dl(&make_dl(&c, i, DlFlag::Load)).is_accept());
            c = c.advance();
        }
        let commit = d.commit_period();
        let root = d.ledger().merkle_root(commit.summary.period_id).unwrap();
        assert_eq!(root.leaf_count, 50);
        assert_eq!(commit.receipts.len(), 50);
        for (owner, r) in &commit.receipts {
            assert_eq!(*owner, key(2).public());
            assert!(verify_proof(&root.root, &r.tx.leaf(), &r.proof));
            assert_eq!(Receipt::decode(&r.encode()).unwrap(), *r);
        }
        assert_eq!(commit.summary.total_load, (0..50).sum::<u64>());
        assert_eq!(d.pending_dl(), 0);
    }

    #[test]
    fn contract_workflow() {
        let (mut d, _) = admitted(DiscoConfig::default());
        assert_eq!(
            d.initiate_contract(&key(9).public(), &terms()).unwrap_err(),
            DiscoError::NotAdmitted
        );
        let customer = key(2);
        let tx = d.initiate_contract(&customer.public(), &terms()).unwrap();
        assert!(tx.ref_disco_id.is_none());
        assert!(tx.generator_signature_valid() && tx.sign_rec.is_none());
        let Payload::Contract(sealed) = Payload::from_metadata(&tx.metadata).unwrap() else {
            panic!("not a contract")
        };
        assert_eq!(
            ContractTerms::decode(&open(&customer, &sealed).unwrap()).unwrap(),
            terms()
        );
        assert_eq!(
            d.receive_load_control(tx.clone()),
            Err(DiscoError::Rejected(Reason::MissingSignature))
        );

        let signed = tx.countersign_as_receiver(&customer).unwrap();
        assert_eq!(
            d.receive_load_control(signed.clone()),
            Ok(Queued::Contract {
                customer: customer.public()
            })
        );
        assert_eq!(
            d.receive_load_control(signed.clone()),
            Err(DiscoError::Rejected(Reason::Duplicate))
        );
        let commit = d.commit_period();
        assert!(commit
            .block
            .entries
            .contains(&Entry::LoadControl(signed.clone())));
        assert_eq!(d.contract_of(&customer.public()).unwrap().t_id, signed.t_id);
    }

    #[test]
    fn unsolicited_countersigned_transaction() {
        let (mut d, _) = admitted(DiscoConfig::default());
        let head = d.ledger().chain_head_of(&d.public()).unwrap();
        let tx = LoadControlTransaction::new(head, d.public(), key(2).public(), None, vec![9])
            .sign_as_generator(&key(1))
            .unwrap()
            .countersign_as_receiver(&key(2))
            .unwrap();
        assert_eq!(d.receive_load_control(tx), Err(DiscoError::Unsolicited));
    }

    #[test]
    fn site_genesis_needs_contract_and_customer() {
        let (mut d, _) = admitted(DiscoConfig::default());
        let sensor = key(50);
        assert_eq!(
            d.issue_sensor_genesis(
                NodeRole::Sensor,
                sensor.public(),
                "temperature",
                &Digest::ZERO
            )
            .unwrap_err(),
            DiscoError::BadRef
        );
        let customer = key(2);
        let c = d.initiate_contract(&customer.public(), &terms()).unwrap();
        let c = c.countersign_as_receiver(&customer).unwrap();
        d.receive_load_control(c.clone()).unwrap();
        // Not on the ledger yet.
        assert_eq!(
            d.issue_sensor_genesis(NodeRole::Sensor, sensor.public(), "temperature", &c.t_id)
                .unwrap_err(),
            DiscoError::BadRef
        );
        d.commit_period();
        let g = d
            .issue_sensor_genesis(NodeRole::Sensor, sensor.public(), "temperature", &c.t_id)
            .unwrap();
        assert_eq!(
            d.receive_genesis(g.clone()),
            Err(DiscoError::Rejected(Reason::MissingSignature))
        );
        let g = g.countersign_as_customer(&customer).unwrap();
        d.receive_genesis(g.clone()).unwrap();
        d.commit_period();
        assert_eq!(d.ledger().genesis_of(&sensor.public()), Some(&g));
        assert_eq!(d.site_nodes()[0].label, "temperature");
    }

    #[test]
    fn threshold_requests() {
        let params = PolicyParams {
            capacity_threshold: 1_000,
            per_device_reduction: 100,
            curtailment_order: vec!["ev".into(), "hvac".into()],
            ..PolicyParams::default()
        };
        let mut d = disco(params, DiscoConfig::default());
        d.admit(NodeRole::Consumer, key(2).public(), "c").unwrap();
        d.commit_period();
        let devices = with_devices(&mut d, &["hvac", "ev", "pool"]);
        let mut summary = PeriodSummary {
            total_load: 1_000,
            ..PeriodSummary::default()
        };
        assert!(d.determine_actions(&summary).is_empty());
        summary.total_load = 1_200;
        let requests = d.determine_actions(&summary);
        assert_eq!(requests.len(), 2);
        assert_eq!(requests[0].pk_rec, devices[1].public());
        assert_eq!(requests[1].pk_rec, devices[0].public());
        for r in &requests {
            assert!(r.ref_disco_id.is_none());
            assert!(r.generator_signature_valid());
            assert!(d.outstanding_requests().contains(&r.t_id));
        }
    }

    #[test]
    fn contracts_limit_addressable_devices() {
        let params = PolicyParams {
            capacity_threshold: 1,
            per_device_reduction: 1,
            curtailment_order: vec!["pool".into()],
            ..PolicyParams::default()
        };
        let summary = PeriodSummary {
            total_load: 100,
            ..PeriodSummary::default()
        };
        for (respect, expected) in [(true, 0), (false, 1)] {
            let mut d = disco(
                params.clone(),
                DiscoConfig {
                    respect_contracts: respect,
                    ..DiscoConfig::default()
                },
            );
            d.admit(NodeRole::Consumer, key(2).public(), "c").unwrap();
            d.commit_period();
            with_devices(&mut d, &["pool"]);
            assert_eq!(d.determine_actions(&summary).len(), expected);
        }
    }

    #[test]
    fn response_round_trip() {
        let params = PolicyParams {
            capacity_threshold: 1,
            per_device_reduction: 1_000,
            curtailment_order: vec!["ev".into()],
            ..PolicyParams::default()
        };
        let mut d = disco(params, DiscoConfig::default());
        d.admit(NodeRole::Consumer, key(2).public(), "c").unwrap();
        d.commit_period();
        let dev = with_devices(&mut d, &["ev"]).remove(0);
        let summary = PeriodSummary {
            total_load: 10,
            ..PeriodSummary::default()
        };
        let request = d.determine_actions(&summary).remove(0);
        let request = request.countersign_as_receiver(&dev).unwrap();
        assert_eq!(
            d.receive_load_control(request.clone()),
            Ok(Queued::Request {
                target: dev.public()
            })
        );
        d.commit_period();

        let response = |r: Option<Digest>| {
            let meta = Payload::Response(ActionResponse {
                request: request.t_id,
                action: Action::ReduceBy(1_000),
                value: 1_000,
            })
            .to_metadata();
            let prev = d.ledger().chain_head_of(&dev.public()).unwrap();
            LoadControlTransaction::new(prev, dev.public(), d.public(), r, meta)
                .sign_as_generator(&dev)
                .unwrap()
        };
        let wrong_ref = response(Some(Digest::ZERO)).clone();
        let good = response(Some(request.t_id));
        assert_eq!(
            d.receive_load_control(wrong_ref),
            Err(DiscoError::Rejected(Reason::BadRef))
        );
        assert_eq!(
            d.receive_load_control(good.clone()),
            Ok(Queued::Response {
                request: request.t_id,
                from: dev.public()
            })
        );
        assert!(d.outstanding_requests().is_empty());
        assert_eq!(
            d.receive_load_control(good),
            Err(DiscoError::Rejected(Reason::Duplicate))
        );
        let block = d.commit_period().block;
        assert_eq!(block.entries.len(), 1);
    }

    #[test]
    fn sensors_are_polled_and_their_reports_do_not_count_as_load() {
        let mut d = disco(
            PolicyParams::default(),
            DiscoConfig {
                sensor_poll_every: 2,
                ..DiscoConfig::default()
            },
        );
        d.admit(NodeRole::Consumer, key(2).public(), "c").unwrap();
        d.commit_period();
        let customer = key(2);
        let c = d.initiate_contract(&customer.public(), &terms()).unwrap();
        let c = c.countersign_as_receiver(&customer).unwrap();
        d.receive_load_control(c.clone()).unwrap();
        d.commit_period();
        let sensor = key(60);
        let g = d
            .issue_sensor_genesis(NodeRole::Sensor, sensor.public(), "temperature", &c.t_id)
            .unwrap()
            .countersign_as_customer(&customer)
            .unwrap();
        d.receive_genesis(g).unwrap();
        let sc = creds(60);
        d.register_reporter(
            sensor.public(),
            sc.current_id,
            sc.pattern_delta,
            sc.secret_value,
        )
        .unwrap();
        d.commit_period();
        assert!(d.verify_dl(&make_dl(&sc, 215, DlFlag::Load)).is_accept());
        let commit = d.commit_period();
        assert_eq!(commit.summary.total_load, 0);
        assert_eq!(d.reading(&sensor.public()), Some(215));
        let polls = d.determine_actions(&PeriodSummary {
            period_id: 4,
            ..PeriodSummary::default()
        });
        assert_eq!(polls.len(), 1);
        let Payload::Request(req) = Payload::from_metadata(&polls[0].metadata).unwrap() else {
            panic!()
        };
        assert_eq!(req.action, Action::ReportReading);
        assert!(d
            .determine_actions(&PeriodSummary {
                period_id: 5,
                ..PeriodSummary::default()
            })
            .is_empty());
    }
}
