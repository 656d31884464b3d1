//! Customer-side nodes: metering participants, sensors and controllable
//! devices. Each keeps its own replica of the ledger and only trusts what
//! it can verify there.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::Decode;
use crate::crypto::{open, Digest, KeyPair, PublicKey};
use crate::disco::{Receipt, SignedContract};
use crate::identity::NodeCredentials;
use crate::ledger::{Block, Entry, Ledger, LedgerError};
use crate::merkle::verify_proof;
use crate::transactions::{
    make_dl, Action, ActionRequest, ActionResponse, ContractTerms, DlFlag, DlTransaction,
    GenesisTransaction, LedgerView, LoadControlTransaction, NodeRole, Payload,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "state", content = "wh")]
pub enum DeviceStatus {
    #[default]
    On,
    Off,
    Reduced(u64),
}

/// One applied status change, with the request that authorised it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StatusChange {
    pub request: Digest,
    pub from: DeviceStatus,
    pub to: DeviceStatus,
}

/// Terms a consumer is willing to sign: every device class and sensor type
/// in the offer must be on the allow-list, sensor counts must not exceed the
/// listed maxima and the control hours must lie inside `hours`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceptancePredicate {
    #[serde(default)]
    pub device_classes: Vec<String>,
    #[serde(default = "all_day")]
    pub hours: (u8, u8),
    #[serde(default)]
    pub sensors: Vec<(String, u32)>,
}

fn all_day() -> (u8, u8) {
    (0, 24)
}

impl AcceptancePredicate {
    pub fn accepts(&self, terms: &ContractTerms) -> bool {
        let classes_ok = terms
            .device_classes
            .iter()
            .all(|c| self.device_classes.contains(c));
        let (start, end) = terms.hours;
        let hours_ok = start == end || (start >= self.hours.0 && end <= self.hours.1);
        let sensors_ok = terms.sensors.iter().all(|(t, n)| {
            self.sensors
                .iter()
                .any(|(allowed, max)| allowed == t && n <= max)
        });
        classes_ok && hours_ok && sensors_ok
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParticipantError {
    #[error("node has no genesis on its ledger replica")]
    NotAdmitted,
    #[error("node has no DL credentials")]
    NoCredentials,
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Rejection {
    #[error("not addressed to this node")]
    NotAddressed,
    #[error("contract metadata does not decrypt")]
    Decrypt,
    #[error("generator signature missing or invalid")]
    BadSignature,
    #[error("metadata is not the expected payload")]
    Malformed,
    #[error("terms outside the acceptance predicate")]
    OutsidePolicy,
    #[error("no contract in force")]
    NoContract,
    #[error("request not found on the ledger")]
    NotOnLedger,
    #[error("request outside the contract")]
    OutsideContract,
}

/// One request touching an audited node, as found on the ledger.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessRow {
    pub requester: String,
    pub target: String,
    /// Device class or sensor type of the target.
    pub label: String,
    pub request: String,
    pub action: String,
    /// Period of the block that carries the request.
    pub period_observed: u64,
    /// Responses on the ledger that reference the request.
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequesterSummary {
    pub requester: String,
    pub requests: u64,
    pub responses: u64,
    pub first_period: u64,
    pub last_period: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessReport {
    pub participant: String,
    pub rows: Vec<AccessRow>,
    pub requesters: Vec<RequesterSummary>,
}

/// Lists every request on `ledger` that targets `participant` or one of the
/// sensors and devices installed under its contracts.
pub fn audit(participant: &PublicKey, ledger: &Ledger) -> AccessReport {
    let mut owned: BTreeMap<PublicKey, String> = BTreeMap::new();
    let mut responses: BTreeMap<Digest, u64> = BTreeMap::new();
    for (_, entry) in ledger.entries() {
        match entry {
            Entry::Genesis(g)
                if g.subject_pk == *participant || g.customer_pk == Some(*participant) =>
            {
                owned.insert(g.subject_pk, g.label().to_string());
            }
            Entry::LoadControl(tx) => {
                if let Some(r) = tx.ref_disco_id {
                    *responses.entry(r).or_default() += 1;
                }
            }
            _ => {}
        }
    }
    let mut rows = Vec::new();
    for block in ledger.blocks() {
        for entry in &block.entries {
            let Entry::LoadControl(tx) = entry else {
                continue;
            };
            let Ok(Payload::Request(req)) = Payload::from_metadata(&tx.metadata) else {
                continue;
            };
            let Some(label) = owned.get(&tx.pk_rec) else {
                continue;
            };
            rows.push(AccessRow {
                requester: tx.pk_gen.to_hex(),
                target: tx.pk_rec.to_hex(),
                label: label.clone(),
                request: tx.t_id.to_hex(),
                action: action_name(&req.action),
                period_observed: block.period_id,
                count: responses.get(&tx.t_id).copied().unwrap_or(0),
            });
        }
    }
    let mut by_requester: BTreeMap<&str, RequesterSummary> = BTreeMap::new();
    for row in &rows {
        let s = by_requester
            .entry(&row.requester)
            .or_insert_with(|| RequesterSummary {
                requester: row.requester.clone(),
                requests: 0,
                responses: 0,
                first_period: row.period_observed,
                last_period: row.period_observed,
            });
        s.requests += 1;
        s.responses += row.count;
        s.first_period = s.first_period.min(row.period_observed);
        s.last_period = s.last_period.max(row.period_observed);
    }
    AccessReport {
        participant: participant.to_hex(),
        requesters: by_requester.into_values().collect(),
        rows,
    }
}

fn action_name(action: &Action) -> String {
    match action {
        Action::Off => "off".into(),
        Action::ReduceBy(wh) => format!("reduce_by:{wh}"),
        Action::ReportReading => "report_reading".into(),
    }
}

/// Responses are re-sent if they have not reached the ledger after this
/// many blocks.
const RESEND_AFTER_BLOCKS: u64 = 2;

#[derive(Debug)]
pub struct ParticipantNode {
    pub name: String,
    role: NodeRole,
    keypair: KeyPair,
    /// Device class or sensor type for site nodes.
    label: String,
    credentials: Option<NodeCredentials>,
    ledger: Ledger,
    sent_leaves: BTreeSet<Digest>,
    receipts: Vec<Receipt>,
    early_receipts: Vec<Receipt>,
    receipts_rejected: u64,
    acceptance: AcceptancePredicate,
    offered: BTreeMap<Digest, ContractTerms>,
    contract: Option<SignedContract>,
    approved_site_nodes: BTreeMap<PublicKey, (NodeRole, String)>,
    status: DeviceStatus,
    status_log: Vec<StatusChange>,
    last_reading: u64,
    executed: BTreeSet<Digest>,
    unlanded: BTreeMap<Digest, (LoadControlTransaction, u64)>,
    refusals: BTreeMap<Rejection, u64>,
}

impl ParticipantNode {
    pub fn new(
        name: impl Into<String>,
        role: NodeRole,
        keypair: KeyPair,
        disco: PublicKey,
        credentials: Option<NodeCredentials>,
    ) -> Self {
        Self {
            name: name.into(),
            role,
            keypair,
            label: String::new(),
            credentials,
            ledger: Ledger::new(disco),
            sent_leaves: BTreeSet::new(),
            receipts: Vec::new(),
            early_receipts: Vec::new(),
            receipts_rejected: 0,
            acceptance: AcceptancePredicate::default(),
            offered: BTreeMap::new(),
            contract: None,
            approved_site_nodes: BTreeMap::new(),
            status: DeviceStatus::On,
            status_log: Vec::new(),
            last_reading: 0,
            executed: BTreeSet::new(),
            unlanded: BTreeMap::new(),
            refusals: BTreeMap::new(),
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn with_acceptance(mut self, acceptance: AcceptancePredicate) -> Self {
        self.acceptance = acceptance;
        self
    }

    pub fn public(&self) -> PublicKey {
        self.keypair.public()
    }

    pub fn keypair(&self) -> &KeyPair {
        &self.keypair
    }

    pub fn role(&self) -> NodeRole {
        self.role
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn credentials(&self) -> Option<&NodeCredentials> {
        self.credentials.as_ref()
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn is_admitted(&self) -> bool {
        self.ledger.genesis_of(&self.public()).is_some()
    }

    pub fn receipts(&self) -> &[Receipt] {
        &self.receipts
    }

    pub fn receipts_rejected(&self) -> u64 {
        self.receipts_rejected
    }

    pub fn contract(&self) -> Option<&SignedContract> {
        self.contract.as_ref()
    }

    pub fn status(&self) -> DeviceStatus {
        self.status
    }

    pub fn status_log(&self) -> &[StatusChange] {
        &self.status_log
    }

    pub fn refusals(&self) -> &BTreeMap<Rejection, u64> {
        &self.refusals
    }

    /// Requests this node has executed.
    pub fn executed(&self) -> usize {
        self.executed.len()
    }

    /// Responses sent but not yet seen on the ledger.
    pub fn unlanded_responses(&self) -> impl Iterator<Item = &LoadControlTransaction> {
        self.unlanded.values().map(|(tx, _)| tx)
    }

    /// Builds the next report and advances the local credentials.
    pub fn report(&mut self, data: u64, flag: DlFlag) -> Result<DlTransaction, ParticipantError> {
        if !self.is_admitted() {
            return Err(ParticipantError::NotAdmitted);
        }
        let creds = self
            .credentials
            .as_mut()
            .ok_or(ParticipantError::NoCredentials)?;
        let tx = make_dl(creds, data, flag);
        *creds = creds.advance();
        self.sent_leaves.insert(tx.leaf());
        if self.role == NodeRole::Sensor {
            self.last_reading = data;
        }
        Ok(tx)
    }

    /// Keeps the receipt if it proves one of this node's reports against the
    /// root committed for its period.
    pub fn receive_receipt(&mut self, receipt: Receipt) -> bool {
        if receipt.period_id >= self.ledger.height()
            && self.ledger.merkle_root(receipt.period_id).is_none()
        {
            self.early_receipts.push(receipt);
            return true;
        }
        self.check_receipt(receipt)
    }

    fn check_receipt(&mut self, receipt: Receipt) -> bool {
        let ok = self.sent_leaves.contains(&receipt.tx.leaf())
            && self
                .ledger
                .merkle_root(receipt.period_id)
                .is_some_and(|root| {
                    receipt.proof.leaf_index < root.leaf_count
                        && verify_proof(&root.root, &receipt.tx.leaf(), &receipt.proof)
                });
        if ok {
            self.sent_leaves.remove(&receipt.tx.leaf());
            self.receipts.push(receipt);
        } else {
            self.receipts_rejected += 1;
        }
        ok
    }

    /// Customer side of the contract workflow: decrypt, check the terms
    /// against the acceptance predicate, countersign.
    pub fn countersign_contract(
        &mut self,
        tx: LoadControlTransaction,
    ) -> Result<LoadControlTransaction, Rejection> {
        let result = self.try_countersign_contract(tx);
        if let Err(r) = result {
            self.refuse(r);
        }
        result
    }

    fn try_countersign_contract(
        &mut self,
        tx: LoadControlTransaction,
    ) -> Result<LoadControlTransaction, Rejection> {
        if tx.pk_rec != self.public() || self.role != NodeRole::Consumer {
            return Err(Rejection::NotAddressed);
        }
        if !Payload::is_contract(&tx.metadata) {
            return Err(Rejection::Malformed);
        }
        let Ok(Payload::Contract(sealed)) = Payload::from_metadata(&tx.metadata) else {
            return Err(Rejection::Decrypt);
        };
        let plain = open(&self.keypair, &sealed).map_err(|_| Rejection::Decrypt)?;
        let terms = ContractTerms::decode(&plain).map_err(|_| Rejection::Malformed)?;
        if tx.pk_gen != self.ledger.authority_key()
            || tx.t_id != tx.compute_tid()
            || !tx.generator_signature_valid()
        {
            return Err(Rejection::BadSignature);
        }
        if !self.acceptance.accepts(&terms) {
            return Err(Rejection::OutsidePolicy);
        }
        let signed = tx
            .countersign_as_receiver(&self.keypair)
            .map_err(|_| Rejection::NotAddressed)?;
        self.offered.insert(signed.t_id, terms);
        Ok(signed)
    }

    /// Customer approval of a sensor or device genesis under its contract.
    /// Returns the countersigned genesis and the contract the new node is
    /// provisioned with.
    pub fn countersign_site_genesis(
        &mut self,
        genesis: GenesisTransaction,
    ) -> Result<(GenesisTransaction, SignedContract), Rejection> {
        let result = self.try_countersign_site_genesis(genesis);
        if let Err(r) = result {
            self.refuse(r);
        }
        result
    }

    fn try_countersign_site_genesis(
        &mut self,
        genesis: GenesisTransaction,
    ) -> Result<(GenesisTransaction, SignedContract), Rejection> {
        if genesis.customer_pk != Some(self.public()) || !genesis.role.is_customer_site() {
            return Err(Rejection::NotAddressed);
        }
        if !genesis.disco_signature_valid(&self.ledger.authority_key()) {
            return Err(Rejection::BadSignature);
        }
        let contract = self.contract.clone().ok_or(Rejection::NoContract)?;
        if genesis.contract_ref != Some(contract.t_id) {
            return Err(Rejection::OutsideContract);
        }
        let label = genesis.label().to_string();
        if !self.approved_site_nodes.contains_key(&genesis.subject_pk) {
            let allowed = match genesis.role {
                NodeRole::Device => contract.terms.allows_device(&label),
                _ => {
                    let installed = self
                        .approved_site_nodes
                        .values()
                        .filter(|(r, l)| *r == NodeRole::Sensor && *l == label)
                        .count() as u32;
                    installed < contract.terms.sensor_limit(&label)
                }
            };
            if !allowed {
                return Err(Rejection::OutsideContract);
            }
            self.approved_site_nodes
                .insert(genesis.subject_pk, (genesis.role, label));
        }
        let signed = genesis
            .countersign_as_customer(&self.keypair)
            .map_err(|_| Rejection::NotAddressed)?;
        Ok((signed, contract))
    }

    /// Installs the customer's contract on a sensor or device.
    pub fn provision(&mut self, contract: SignedContract) {
        self.contract = Some(contract);
    }

    /// Device/sensor side of a request: verify and countersign so the DISCO
    /// can put it on the ledger. Nothing is executed yet.
    pub fn acknowledge_request(
        &mut self,
        tx: LoadControlTransaction,
    ) -> Result<LoadControlTransaction, Rejection> {
        let result = self.pre_check(&tx).and_then(|_| {
            tx.countersign_as_receiver(&self.keypair)
                .map_err(|_| Rejection::NotAddressed)
        });
        if let Err(r) = result {
            self.refuse(r);
        }
        result
    }

    fn pre_check(&self, tx: &LoadControlTransaction) -> Result<ActionRequest, Rejection> {
        if tx.pk_rec != self.public() {
            return Err(Rejection::NotAddressed);
        }
        if tx.pk_gen != self.ledger.authority_key()
            || tx.t_id != tx.compute_tid()
            || !tx.generator_signature_valid()
        {
            return Err(Rejection::BadSignature);
        }
        let Ok(Payload::Request(req)) = Payload::from_metadata(&tx.metadata) else {
            return Err(Rejection::Malformed);
        };
        self.conforms(&req)?;
        Ok(req)
    }

    /// Whether `req` is within the contract this node was installed under,
    /// as linked from its genesis on the ledger.
    pub fn conforms(&self, req: &ActionRequest) -> Result<(), Rejection> {
        if req.target != self.public() || req.label != self.label {
            return Err(Rejection::NotAddressed);
        }
        let contract = self.contract.as_ref().ok_or(Rejection::NoContract)?;
        let linked = self
            .ledger
            .genesis_of(&self.public())
            .is_some_and(|g| g.contract_ref == Some(contract.t_id))
            && self.ledger.load_control(&contract.t_id).is_some();
        if !linked {
            return Err(Rejection::NoContract);
        }
        let terms = &contract.terms;
        let ok = match (self.role, req.action) {
            (NodeRole::Device, Action::Off | Action::ReduceBy(_)) => {
                terms.allows_device(&self.label) && terms.allows_hour(req.hour)
            }
            (NodeRole::Sensor, Action::ReportReading) => terms.sensor_limit(&self.label) > 0,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Rejection::OutsideContract)
        }
    }

    /// Executes an on-ledger request and returns the response transaction.
    /// Anything that does not check out is refused without a state change.
    pub fn execute_action(
        &mut self,
        request: &LoadControlTransaction,
    ) -> Result<LoadControlTransaction, Rejection> {
        let result = self.try_execute(request);
        if let Err(r) = result {
            self.refuse(r);
        }
        result
    }

    fn try_execute(
        &mut self,
        request: &LoadControlTransaction,
    ) -> Result<LoadControlTransaction, Rejection> {
        let req = self.pre_check(request)?;
        let on_ledger = self
            .ledger
            .load_control(&request.t_id)
            .is_some_and(|stored| stored == request && stored.receiver_signature_valid());
        if !on_ledger {
            return Err(Rejection::NotOnLedger);
        }
        let value = match req.action {
            Action::Off => {
                self.set_status(request.t_id, DeviceStatus::Off);
                0
            }
            Action::ReduceBy(wh) => {
                self.set_status(request.t_id, DeviceStatus::Reduced(wh));
                wh
            }
            Action::ReportReading => self.last_reading,
        };
        self.executed.insert(request.t_id);
        let prev = self
            .ledger
            .chain_head_of(&self.public())
            .expect("admitted node has a genesis");
        let meta = Payload::Response(ActionResponse {
            request: request.t_id,
            action: req.action,
            value,
        })
        .to_metadata();
        let response = LoadControlTransaction::new(
            prev,
            self.public(),
            request.pk_gen,
            Some(request.t_id),
            meta,
        )
        .sign_as_generator(&self.keypair)
        .expect("generator is this node");
        self.unlanded
            .insert(response.t_id, (response.clone(), self.ledger.height()));
        Ok(response)
    }

    fn set_status(&mut self, request: Digest, to: DeviceStatus) {
        self.status_log.push(StatusChange {
            request,
            from: self.status,
            to,
        });
        self.status = to;
    }

    fn refuse(&mut self, r: Rejection) {
        *self.refusals.entry(r).or_default() += 1;
    }

    /// Appends a block to the local replica and reacts to it. Returns the
    /// transactions to send to the DISCO: responses to newly committed
    /// requests and re-sends of responses that have not landed.
    pub fn on_block(&mut self, block: Block) -> Result<Vec<LoadControlTransaction>, LedgerError> {
        if block.height < self.ledger.height() {
            return match self.ledger.blocks().get(block.height as usize) {
                Some(b) if *b == block => Ok(Vec::new()),
                _ => Err(LedgerError::BadHeight {
                    expected: self.ledger.height(),
                    found: block.height,
                }),
            };
        }
        self.ledger.append(block.clone())?;
        let me = self.public();
        let mut out = Vec::new();
        for entry in &block.entries {
            match entry {
                Entry::LoadControl(tx) => {
                    if let Some(terms) = self.offered.remove(&tx.t_id) {
                        self.contract = Some(SignedContract {
                            t_id: tx.t_id,
                            terms,
                        });
                    }
                    if tx.pk_gen == me {
                        self.unlanded.remove(&tx.t_id);
                    }
                    if tx.pk_rec == me
                        && tx.pk_gen == self.ledger.authority_key()
                        && !self.executed.contains(&tx.t_id)
                    {
                        if let Ok(Payload::Request(_)) = Payload::from_metadata(&tx.metadata) {
                            if let Ok(response) = self.execute_action(tx) {
                                out.push(response);
                            }
                        }
                    }
                }
                Entry::Genesis(g) if g.customer_pk == Some(me) => {
                    self.approved_site_nodes
                        .entry(g.subject_pk)
                        .or_insert_with(|| (g.role, g.label().to_string()));
                }
                _ => {}
            }
        }
        let height = self.ledger.height();
        for (tx, sent_at) in self.unlanded.values_mut() {
            if height >= *sent_at + RESEND_AFTER_BLOCKS && !out.contains(tx) {
                *sent_at = height;
                out.push(tx.clone());
            }
        }
        for receipt in std::mem::take(&mut self.early_receipts) {
            if receipt.period_id >= self.ledger.height()
                && self.ledger.merkle_root(receipt.period_id).is_none()
            {
                self.early_receipts.push(receipt);
            } else {
                self.check_receipt(receipt);
            }
        }
        Ok(out)
    }

    pub fn audit(&self, chain: &Ledger) -> AccessReport {
        audit(&self.public(), chain)
    }
}
