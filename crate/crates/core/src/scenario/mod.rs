//! End-to-end scenarios: build a world from a config file, run it, and
//! emit the chain, the report, the trace and the key files.

mod actors;
pub mod bench;
mod config;
mod report;

pub use actors::{
    DataSource, DiscoActor, DiscoStats, ParticipantActor, ParticipantStats, PlannedSite, SimNode,
};
pub use bench::{bench, BenchReport, BenchRow};
pub use config::{
    BenchSettings, ConfigError, DataSpec, DiscoSettings, FlagMode, OutputPaths, ParticipantSpec,
    ScenarioConfig, SensorSpec, TermsSpec,
};
pub use report::{
    gating, ActionCounts, ChainSummary, ContractCounts, DlCounts, GatingCheck, Lockstep,
    NetworkRow, NodeCounts, OriginCounts, ReceiptCounts, RunReport,
};

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{keygen, KeyPair, PublicKey, SEED_LEN};
use crate::disco::{DiscoConfig, DiscoNode};
use crate::identity::{NodeCredentials, NodeId, SecretValue};
use crate::ledger::{self, read_chain_file, write_chain_file, Block, ChainCheck, StoreError};
use crate::netsim::{AdversaryRegistry, Network, TraceEvent, World, DISCO};
use crate::participant::{audit, AccessReport, ParticipantNode};
use crate::policy::PolicyRegistry;
use crate::transactions::{ContractTerms, NodeRole};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Upper bound on ticks spent delivering in-flight messages after the last
/// scheduled tick.
const DRAIN_TICKS: u64 = 1_000;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot read key file {path}: {source}")]
    KeyRead {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("key file {path}: {detail}")]
    KeyParse { path: String, detail: String },
    #[error("chain verification failed: {0}")]
    Verification(String),
}

impl ScenarioError {
    /// Process exit code for the category of failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::Config(ConfigError::Read { .. }) => EXIT_IO,
            ScenarioError::Config(_) | ScenarioError::KeyParse { .. } => EXIT_USAGE,
            ScenarioError::Store(StoreError::Io { .. }) => EXIT_IO,
            ScenarioError::Store(_) | ScenarioError::Verification(_) => EXIT_VERIFY,
            ScenarioError::Write { .. } | ScenarioError::KeyRead { .. } => EXIT_IO,
        }
    }
}

/// Contents of a per-node key file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyFile {
    pub name: String,
    pub role: NodeRole,
    pub public_key: String,
    pub secret_seed: String,
}

/// Everything a finished run produced.
pub struct Simulation {
    pub report: RunReport,
    pub world: World<SimNode>,
    pub keys: Vec<KeyFile>,
}

impl Simulation {
    pub fn disco(&self) -> &DiscoActor {
        match &self.world.nodes()[DISCO] {
            SimNode::Disco(d) => d,
            SimNode::Participant(_) => unreachable!("index 0 is the DISCO"),
        }
    }

    pub fn participants(&self) -> impl Iterator<Item = &ParticipantActor> {
        self.world
            .nodes()
            .iter()
            .filter_map(SimNode::as_participant)
    }

    pub fn participant(&self, name: &str) -> Option<&ParticipantActor> {
        self.participants().find(|p| p.node.name == name)
    }

    pub fn blocks(&self) -> &[Block] {
        self.disco().node.ledger().blocks()
    }

    pub fn chain_bytes(&self) -> Vec<u8> {
        ledger::write_chain_bytes(self.blocks())
    }

    pub fn trace(&self) -> Option<&[TraceEvent]> {
        self.world.network.trace()
    }
}

struct Roster {
    nodes: Vec<SimNode>,
    keys: Vec<KeyFile>,
}

fn draw_key(rng: &mut ChaCha20Rng) -> KeyPair {
    keygen(&rng.gen::<[u8; SEED_LEN]>()).expect("32-byte seed")
}

fn draw_credentials(rng: &mut ChaCha20Rng) -> NodeCredentials {
    // An even step would halve the id orbit; keep it odd.
    NodeCredentials::new(
        NodeId(rng.gen()),
        rng.gen::<u128>() | 1,
        SecretValue(rng.gen()),
    )
}

fn key_file(name: &str, role: NodeRole, key: &KeyPair) -> KeyFile {
    KeyFile {
        name: name.to_string(),
        role,
        public_key: key.public().to_hex(),
        secret_seed: hex::encode(key.seed()),
    }
}

/// One consumer's site equipment before node indices are assigned.
struct SiteDraft {
    customer: PublicKey,
    name: String,
    role: NodeRole,
    key: KeyPair,
    label: String,
    credentials: Option<NodeCredentials>,
    report_every: u64,
    source: DataSource,
}

fn build_roster(config: &ScenarioConfig) -> Result<Roster, ScenarioError> {
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let disco_key = draw_key(&mut rng);
    let seal_seed: u64 = rng.gen();
    let policy = PolicyRegistry::default()
        .build(&config.policy)
        .map_err(|e| ConfigError::Invalid {
            field: "policy".into(),
            detail: e.to_string(),
        })?;
    let mut disco = DiscoNode::new(
        disco_key.clone(),
        policy,
        DiscoConfig {
            resync_window: config.resync_window,
            respect_contracts: config.disco.respect_contracts,
            sensor_poll_every: config.disco.sensor_poll_every,
        },
        seal_seed,
    );
    let mut keys = vec![key_file("disco", NodeRole::Disco, &disco_key)];
    let mut names = BTreeSet::from(["disco".to_string()]);
    let mut top = Vec::new();
    let mut drafts = Vec::new();
    let mut offers = Vec::new();
    let invalid = |field: String, detail: &str| {
        ScenarioError::Config(ConfigError::Invalid {
            field,
            detail: detail.to_string(),
        })
    };

    for (i, spec) in config.participants.iter().enumerate() {
        let prefix = spec
            .name
            .clone()
            .unwrap_or_else(|| spec.role.as_str().to_string());
        for k in 0..spec.count {
            let name = if spec.count == 1 && spec.name.is_some() {
                prefix.clone()
            } else {
                format!("{prefix}-{k}")
            };
            if !names.insert(name.clone()) {
                return Err(invalid(
                    format!("participants[{i}].name"),
                    "duplicate node name",
                ));
            }
            let key = draw_key(&mut rng);
            let creds = draw_credentials(&mut rng);
            let source = DataSource::new(rng.gen(), spec.data.min, spec.data.max, spec.data.flag);
            disco
                .admit(spec.role, key.public(), &name)
                .map_err(|e| invalid(format!("participants[{i}].role"), &e.to_string()))?;
            disco
                .register_reporter(
                    key.public(),
                    creds.current_id,
                    creds.pattern_delta,
                    creds.secret_value,
                )
                .map_err(|e| invalid(format!("participants[{i}]"), &e.to_string()))?;
            let mut node = ParticipantNode::new(
                name.clone(),
                spec.role,
                key.clone(),
                disco_key.public(),
                Some(creds),
            );
            if let Some(terms) = &spec.contract {
                offers.push((key.public(), ContractTerms::from(terms)));
                let accept = spec.accept.as_ref().unwrap_or(terms);
                node = node.with_acceptance(accept.into());
            }
            for (j, class) in spec.devices.iter().enumerate() {
                let device_name = format!("{name}.{class}-{j}");
                let device_key = draw_key(&mut rng);
                drafts.push(SiteDraft {
                    customer: key.public(),
                    name: device_name,
                    role: NodeRole::Device,
                    key: device_key,
                    label: class.clone(),
                    credentials: None,
                    report_every: 0,
                    source: DataSource::new(0, 0, 0, FlagMode::Load),
                });
            }
            for sensor in &spec.sensors {
                for j in 0..sensor.count.unwrap_or(1) {
                    let sensor_key = draw_key(&mut rng);
                    let sensor_creds = draw_credentials(&mut rng);
                    let source = DataSource::new(
                        rng.gen(),
                        sensor.min.unwrap_or(15),
                        sensor.max.unwrap_or(30),
                        FlagMode::Load,
                    );
                    disco
                        .register_reporter(
                            sensor_key.public(),
                            sensor_creds.current_id,
                            sensor_creds.pattern_delta,
                            sensor_creds.secret_value,
                        )
                        .map_err(|e| {
                            invalid(format!("participants[{i}].sensors"), &e.to_string())
                        })?;
                    drafts.push(SiteDraft {
                        customer: key.public(),
                        name: format!("{name}.{}-{j}", sensor.sensor_type),
                        role: NodeRole::Sensor,
                        key: sensor_key,
                        label: sensor.sensor_type.clone(),
                        credentials: Some(sensor_creds),
                        report_every: sensor.report_every.unwrap_or(config.period_length),
                        source,
                    });
                }
            }
            keys.push(key_file(&name, spec.role, &key));
            let report_every = spec.report_every.unwrap_or(config.period_length);
            top.push((node, report_every, source));
        }
    }

    let first_site = 1 + top.len();
    let mut addr: BTreeMap<PublicKey, usize> = BTreeMap::new();
    for (i, (node, _, _)) in top.iter().enumerate() {
        addr.insert(node.public(), 1 + i);
    }
    let mut sites_of: BTreeMap<PublicKey, BTreeMap<PublicKey, usize>> = BTreeMap::new();
    let mut planned: BTreeMap<PublicKey, Vec<PlannedSite>> = BTreeMap::new();
    for (i, d) in drafts.iter().enumerate() {
        addr.insert(d.key.public(), first_site + i);
        sites_of
            .entry(d.customer)
            .or_default()
            .insert(d.key.public(), first_site + i);
        planned.entry(d.customer).or_default().push(PlannedSite {
            role: d.role,
            pk: d.key.public(),
            label: d.label.clone(),
        });
    }

    let mut nodes = vec![SimNode::Disco(Box::new(DiscoActor::new(
        disco,
        config.period_length,
        addr,
        offers,
        planned,
    )))];
    for (i, (node, every, source)) in top.into_iter().enumerate() {
        let sites = sites_of.remove(&node.public()).unwrap_or_default();
        let actor = ParticipantActor::new(node, every, (1 + i) as u64, source).with_sites(sites);
        nodes.push(SimNode::Participant(Box::new(actor)));
    }
    for (i, d) in drafts.into_iter().enumerate() {
        keys.push(key_file(&d.name, d.role, &d.key));
        let node = ParticipantNode::new(d.name, d.role, d.key, disco_key.public(), d.credentials)
            .with_label(d.label);
        let actor = ParticipantActor::new(node, d.report_every, (first_site + i) as u64, d.source);
        nodes.push(SimNode::Participant(Box::new(actor)));
    }
    Ok(Roster { nodes, keys })
}

/// Runs a scenario in memory. `trace` keeps the per-message event log.
pub fn simulate(config: &ScenarioConfig, trace: bool) -> Result<Simulation, ScenarioError> {
    config.validate()?;
    let Roster { nodes, keys } = build_roster(config)?;
    let mut adversary_rng = ChaCha20Rng::seed_from_u64(config.seed ^ 0xad5e_55a7);
    let registry = AdversaryRegistry::default();
    let mut adversaries = Vec::new();
    for (i, spec) in config.adversaries.iter().enumerate() {
        let seed = spec.seed.unwrap_or_else(|| adversary_rng.gen());
        adversaries.push(
            registry
                .build(spec, seed)
                .map_err(|e| ConfigError::Invalid {
                    field: format!("adversaries[{i}]"),
                    detail: e.to_string(),
                })?,
        );
    }
    let mut network = Network::new(adversaries);
    if trace {
        network = network.with_trace();
    }
    let mut world = World::new(nodes, network);
    for _ in 0..config.ticks {
        world.step();
    }
    // Deliver what is in flight, commit it, and hand out the last block.
    world.drain(DRAIN_TICKS);
    let out = world.nodes_mut()[DISCO]
        .as_disco_mut()
        .expect("index 0 is the DISCO")
        .commit_only();
    world.dispatch(DISCO, out);
    world.drain(DRAIN_TICKS);

    let report = build_report(config, &world);
    Ok(Simulation {
        report,
        world,
        keys,
    })
}

fn build_report(config: &ScenarioConfig, world: &World<SimNode>) -> RunReport {
    let SimNode::Disco(disco) = &world.nodes()[DISCO] else {
        unreachable!("index 0 is the DISCO")
    };
    let participants: Vec<&ParticipantActor> = world
        .nodes()
        .iter()
        .filter_map(SimNode::as_participant)
        .collect();
    let ledger = disco.node.ledger();

    let mut nodes = NodeCounts::default();
    for p in &participants {
        match p.node.role() {
            NodeRole::Producer => nodes.producers += 1,
            NodeRole::Consumer => nodes.consumers += 1,
            NodeRole::Storage => nodes.storage += 1,
            NodeRole::Sensor => nodes.sensors += 1,
            NodeRole::Device => nodes.devices += 1,
            NodeRole::Disco => {}
        }
    }

    let sent = participants.iter().map(|p| p.stats.reports_sent).sum();
    let dl = report::dl_counts(sent, &disco.stats.dl, &world.network);

    let issued = disco.stats.receipts_issued;
    let verified: u64 = participants
        .iter()
        .map(|p| p.node.receipts().len() as u64)
        .sum();
    let receipts = ReceiptCounts {
        issued,
        verified,
        rejected: participants
            .iter()
            .map(|p| p.node.receipts_rejected())
            .sum(),
        rate: if issued == 0 {
            1.0
        } else {
            verified as f64 / issued as f64
        },
    };

    let (signed, site_geneses, committed, responses_committed) = report::committed(ledger);
    let mut refused = BTreeMap::new();
    for p in &participants {
        for (r, n) in p.node.refusals() {
            *refused.entry(*r).or_default() += n;
        }
    }
    let executed = participants
        .iter()
        .filter(|p| p.node.role().is_customer_site())
        .map(|p| p.node.executed() as u64)
        .sum();
    let actions = ActionCounts {
        requested: disco.stats.requests_issued,
        committed,
        executed,
        responses_committed,
        refused,
        disco_rejected: disco.stats.load_control_rejected.clone(),
        genesis_rejected: disco.stats.genesis_rejected.clone(),
    };

    let sites: Vec<&ParticipantNode> = participants
        .iter()
        .filter(|p| p.node.role().is_customer_site())
        .map(|p| &p.node)
        .collect();

    let mut lockstep = Lockstep::default();
    for p in &participants {
        if let Some(creds) = p.node.credentials() {
            lockstep.reporters += 1;
            let synced = disco
                .node
                .registry()
                .record(&p.node.public())
                .is_some_and(|r| r.credentials == *creds);
            lockstep.in_sync += u64::from(synced);
        }
    }

    let adversaries = world.network.reports();
    let linkage_score = adversaries
        .iter()
        .filter_map(|a| a.linkage.as_ref().map(|l| l.score))
        .reduce(f64::max);
    let network = world
        .network
        .counts()
        .iter()
        .map(|((kind, origin), c)| NetworkRow {
            kind: *kind,
            origin: *origin,
            sent: c.sent,
            delivered: c.delivered,
            dropped: c.dropped,
        })
        .collect();
    let audits = participants
        .iter()
        .filter(|p| p.node.role() == NodeRole::Consumer)
        .map(|p| p.node.audit(p.node.ledger()))
        .collect();

    RunReport {
        seed: config.seed,
        ticks: config.ticks,
        period_length: config.period_length,
        resync_window: config.resync_window,
        nodes,
        dl,
        receipts,
        chain: report::chain_summary(ledger),
        contracts: ContractCounts {
            offered: disco.stats.contracts_offered,
            signed,
            site_geneses,
        },
        actions,
        gating: gating(&disco.node, &sites),
        lockstep,
        linkage_score,
        adversaries,
        network,
        periods: disco.stats.periods.clone(),
        audits,
        benchmark: None,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), ScenarioError> {
    let err = |source| ScenarioError::Write {
        path: path.display().to_string(),
        source,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(err)?;
    }
    fs::write(path, bytes).map_err(err)
}

/// Paths written by [`run`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Written {
    pub chain: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub keys: Vec<PathBuf>,
}

/// Runs the scenario and writes every configured output.
pub fn run(config: &ScenarioConfig) -> Result<(Simulation, Written), ScenarioError> {
    let sim = simulate(config, config.output.trace.is_some())?;
    let out = &config.output;
    let mut written = Written::default();
    if let Some(path) = &out.chain {
        write_chain_file(path, sim.blocks())?;
        written.chain = Some(path.clone());
    }
    if let Some(path) = &out.report {
        write_file(path, sim.report.to_json().as_bytes())?;
        written.report = Some(path.clone());
    }
    if let Some(path) = &out.trace {
        let mut buf = Vec::new();
        sim.world
            .network
            .write_trace(&mut buf)
            .expect("writing to memory");
        write_file(path, &buf)?;
        written.trace = Some(path.clone());
    }
    if let Some(dir) = &out.keys {
        for k in &sim.keys {
            let path = dir.join(format!("{}.json", k.name));
            let mut json = serde_json::to_string_pretty(k).expect("key file serialises");
            json.push('\n');
            write_file(&path, json.as_bytes())?;
            written.keys.push(path);
        }
    }
    if !sim.report.chain.valid {
        let detail = sim
            .report
            .chain
            .first_violation
            .as_ref()
            .map(ToString::to_string)
            .unwrap_or_default();
        return Err(ScenarioError::Verification(detail));
    }
    Ok((sim, written))
}

/// Reads a participant key. Accepts a key file as written by [`run`] or a
/// bare hex public key.
pub fn load_public_key(path: &Path) -> Result<PublicKey, ScenarioError> {
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::KeyRead {
        path: path.display().to_string(),
        source,
    })?;
    let parse_err = |detail: String| ScenarioError::KeyParse {
        path: path.display().to_string(),
        detail,
    };
    let trimmed = text.trim();
    let hex_key = if trimmed.starts_with('{') {
        let file: KeyFile = serde_json::from_str(trimmed).map_err(|e| parse_err(e.to_string()))?;
        file.public_key
    } else {
        trimmed.to_string()
    };
    PublicKey::from_hex(&hex_key).map_err(|e| parse_err(e.to_string()))
}

/// Audits a persisted chain for the participant in `key_path`. The chain
/// must verify; an empty chain gives an empty report.
pub fn audit_files(chain_path: &Path, key_path: &Path) -> Result<AccessReport, ScenarioError> {
    let pk = load_public_key(key_path)?;
    let blocks = read_chain_file(chain_path)?;
    if blocks.is_empty() {
        return Ok(AccessReport {
            participant: pk.to_hex(),
            ..AccessReport::default()
        });
    }
    let ledger = ledger::replay(&blocks).map_err(|e| ScenarioError::Verification(e.to_string()))?;
    Ok(audit(&pk, &ledger))
}

pub fn verify_chain_file(chain_path: &Path) -> Result<ChainCheck, ScenarioError> {
    let blocks = read_chain_file(chain_path)?;
    Ok(ledger::verify_chain(&blocks))
}
