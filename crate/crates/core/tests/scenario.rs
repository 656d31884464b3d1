use dlc_core::disco::DropReason;
use dlc_core::ledger::{read_chain_file, Entry};
use dlc_core::netsim::Origin;
use dlc_core::participant::audit;
use dlc_core::scenario::{
    self, audit_files, load_public_key, simulate, ScenarioConfig, EXIT_IO, EXIT_USAGE, EXIT_VERIFY,
};
use dlc_core::transactions::{Action, LedgerView, NodeRole, Payload};

fn config(text: &str) -> ScenarioConfig {
    ScenarioConfig::from_toml(text, "test").unwrap()
}

const HOUSES: &str = r#"
seed = 11
ticks = 100
period_length = 10

[[participants]]
role = "consumer"
count = 10
report_every = 10
"#;

const SITES: &str = r#"
seed = 5
ticks = 120
period_length = 10

[disco]
sensor_poll_every = 2

[policy]
capacity_threshold = 500
curtailment_order = ["ev"]
per_device_reduction = 400

[[participants]]
name = "home"
role = "consumer"
count = 3
report_every = 5
data = { min = 300, max = 600 }
contract = { device_classes = ["ev"], hours = [0, 24], sensors = [["temperature", 1]] }
devices = ["ev"]
sensors = [{ type = "temperature", report_every = 10 }]
"#;

#[test]
fn ten_consumers_ten_periods_is_clean() {
    let sim = simulate(&config(HOUSES), false).unwrap();
    let r = &sim.report;
    assert_eq!(r.nodes.consumers, 10);
    // Nobody reports before block 0 reaches them at tick 1.
    assert!(r.dl.sent >= 90, "{}", r.dl.sent);
    assert_eq!(r.dl.accepted, r.dl.sent);
    assert_eq!(r.dl.dropped, 0);
    assert!(r.chain.valid);
    // Bootstrap block, one per period boundary, and the closing block.
    assert_eq!(r.chain.blocks, 11);
    assert_eq!(r.receipts.issued, r.dl.sent);
    assert_eq!(r.receipts.verified, r.dl.sent);
    assert_eq!(r.chain.committed_leaves, r.dl.sent);
    assert_eq!(r.lockstep.in_sync, 10);
}

#[test]
fn accounting_identities_hold() {
    for text in [
        HOUSES,
        SITES,
        include_str!("../../../scenarios/adversarial.toml"),
    ] {
        let r = simulate(&config(text), false).unwrap().report;
        assert_eq!(r.dl.accepted + r.dl.dropped, r.dl.delivered);
        assert_eq!(r.dl.dropped_by_reason.values().sum::<u64>(), r.dl.dropped);
        let by_origin: u64 = r.dl.by_origin.values().map(|o| o.delivered).sum();
        assert_eq!(by_origin, r.dl.delivered);
        assert_eq!(r.chain.committed_leaves, r.dl.accepted);
        assert_eq!(r.receipts.issued, r.dl.accepted);
        // Tampered originals are re-filed under their new origin.
        let delivered = |o| r.dl.by_origin.get(&o).map_or(0, |c| c.delivered);
        assert_eq!(
            delivered(Origin::Original) + delivered(Origin::Tamper) + r.dl.lost,
            r.dl.sent
        );
        let net_sent: u64 = r.network.iter().map(|n| n.sent).sum();
        let net_delivered: u64 = r.network.iter().map(|n| n.delivered + n.dropped).sum();
        assert_eq!(
            net_sent, net_delivered,
            "every message is delivered or dropped"
        );
    }
}

#[test]
fn contract_workflow_installs_sites_and_gates_actions() {
    let sim = simulate(&config(SITES), false).unwrap();
    let r = &sim.report;
    assert_eq!(r.contracts.offered, 3);
    assert_eq!(r.contracts.signed, 3);
    assert_eq!(r.contracts.site_geneses, 6);
    assert!(r.actions.committed > 0);
    assert!(r.gating.status_changes > 0);
    assert_eq!(r.gating.ungated, 0);
    assert_eq!(r.gating.unresolved_refs, 0);
    assert!(r.actions.refused.is_empty(), "{:?}", r.actions.refused);

    let disco = &sim.disco().node;
    let polled = sim
        .participants()
        .filter(|p| p.node.role() == NodeRole::Sensor)
        .filter(|p| disco.reading(&p.node.public()).is_some())
        .count();
    assert_eq!(polled, 3);
    for p in sim
        .participants()
        .filter(|p| p.node.role() == NodeRole::Device)
    {
        assert!(
            p.node.contract().is_some(),
            "{} was provisioned",
            p.node.name
        );
        assert!(!p.node.status_log().is_empty());
    }
}

#[test]
fn overstepping_disco_is_refused_by_devices() {
    let text = SITES
        .replace(
            "sensor_poll_every = 2",
            "sensor_poll_every = 0\nrespect_contracts = false",
        )
        .replace("devices = [\"ev\"]", "devices = [\"ev\", \"pool\"]");
    let sim = simulate(&config(&text), false).unwrap();
    let r = &sim.report;
    // The pool pump is outside every contract: the customer never approves
    // its genesis, so it never becomes addressable.
    assert!(r.actions.refused.values().sum::<u64>() > 0);
    assert_eq!(r.gating.ungated, 0);
    for p in sim.participants().filter(|p| p.node.label() == "pool") {
        assert!(p.node.status_log().is_empty());
    }
}

#[test]
fn requests_outside_contract_hours_are_refused() {
    let text = SITES
        .replace("hours = [0, 24]", "hours = [0, 2]")
        .replace("ticks = 120", "ticks = 300")
        .replace(
            "sensor_poll_every = 2",
            "sensor_poll_every = 0\nrespect_contracts = false",
        );
    let sim = simulate(&config(&text), false).unwrap();
    let r = &sim.report;
    assert!(r
        .actions
        .refused
        .contains_key(&dlc_core::participant::Rejection::OutsideContract));
    let ledger = sim.disco().node.ledger();
    for p in sim
        .participants()
        .filter(|p| p.node.role() == NodeRole::Device)
    {
        for change in p.node.status_log() {
            let tx = ledger.load_control(&change.request).unwrap();
            let Ok(Payload::Request(req)) = Payload::from_metadata(&tx.metadata) else {
                panic!("status change without a request")
            };
            assert!(req.hour < 2, "executed at hour {}", req.hour);
            assert!(matches!(req.action, Action::Off | Action::ReduceBy(_)));
        }
    }
    assert_eq!(r.gating.ungated, 0);
}

#[test]
fn replays_are_all_dropped() {
    let text = format!("{HOUSES}\n[[adversaries]]\nmode = \"replayer\"\nintensity = 0.3\n");
    let r = simulate(&config(&text), false).unwrap().report;
    let replay = &r.dl.by_origin[&Origin::Replay];
    assert!(replay.delivered > 10);
    assert_eq!(replay.accepted, 0);
    assert_eq!(r.dl.accepted, r.dl.sent);
    // Without a window the replayed id has already rotated away.
    assert_eq!(
        r.dl.dropped_by_reason[&DropReason::UnknownId],
        replay.delivered
    );

    let windowed = text.replace(
        "period_length = 10",
        "period_length = 10\nresync_window = 3",
    );
    let r = simulate(&config(&windowed), false).unwrap().report;
    assert_eq!(r.dl.accepted, r.dl.sent);
    assert!(r.dl.dropped_by_reason[&DropReason::DuplicateNonce] > 0);
}

#[test]
fn dropped_reports_desync_without_window_and_recover_with_one() {
    let base = format!("{HOUSES}\n[[adversaries]]\nmode = \"dropper\"\nintensity = 0.1\n");
    let r = simulate(&config(&base), false).unwrap().report;
    assert!(r.dl.lost > 0);
    assert!(r.lockstep.in_sync < r.lockstep.reporters);
    assert!(r.dl.dropped_by_reason.contains_key(&DropReason::UnknownId));

    let windowed = base.replace(
        "period_length = 10",
        "period_length = 10\nresync_window = 8",
    );
    let r = simulate(&config(&windowed), false).unwrap().report;
    assert_eq!(r.dl.accepted + r.dl.lost, r.dl.sent);
    assert_eq!(r.dl.dropped, 0);
}

#[test]
fn eavesdropper_links_rotating_ids() {
    let text = format!("{HOUSES}\n[[adversaries]]\nmode = \"eavesdropper\"\n");
    let text = text.replace("report_every = 10", "report_every = 2");
    let r = simulate(&config(&text), false).unwrap().report;
    let score = r.linkage_score.unwrap();
    assert!(score > 0.9, "additive id rotation is linkable: {score}");
}

#[test]
fn same_seed_same_bytes() {
    let c = config(include_str!("../../../scenarios/adversarial.toml"));
    let a = simulate(&c, true).unwrap();
    let b = simulate(&c, true).unwrap();
    assert_eq!(a.chain_bytes(), b.chain_bytes());
    assert_eq!(a.report.to_json(), b.report.to_json());
    assert_eq!(a.trace(), b.trace());
    let mut other = c.clone();
    other.seed += 1;
    assert_ne!(
        simulate(&other, false).unwrap().chain_bytes(),
        a.chain_bytes()
    );
}

#[test]
fn run_writes_outputs_and_file_audit_matches() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(SITES);
    c.output.chain = Some(dir.path().join("chain.bin"));
    c.output.report = Some(dir.path().join("report.json"));
    c.output.trace = Some(dir.path().join("trace.jsonl"));
    c.output.keys = Some(dir.path().join("keys"));
    let (sim, written) = scenario::run(&c).unwrap();
    assert_eq!(written.keys.len(), sim.keys.len());

    let blocks = read_chain_file(&dir.path().join("chain.bin")).unwrap();
    assert_eq!(blocks, sim.blocks());
    assert!(blocks
        .iter()
        .flat_map(|b| &b.entries)
        .all(|e| !matches!(e, Entry::MerkleRoot(r) if r.leaf_count == 0)));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["chain"]["valid"], true);
    let trace = std::fs::read_to_string(dir.path().join("trace.jsonl")).unwrap();
    assert!(trace
        .lines()
        .all(|l| serde_json::from_str::<serde_json::Value>(l).is_ok()));

    for name in ["home-0", "home-1", "home-2"] {
        let key = dir.path().join("keys").join(format!("{name}.json"));
        let from_file = audit_files(&dir.path().join("chain.bin"), &key).unwrap();
        let in_sim = sim.participant(name).unwrap();
        assert_eq!(from_file, in_sim.node.audit(in_sim.node.ledger()));
        assert!(sim.report.audits.contains(&from_file));
        assert!(!from_file.rows.is_empty());
        assert_eq!(load_public_key(&key).unwrap(), in_sim.node.public());
    }
}

#[test]
fn audit_of_a_single_sensor_request_is_one_row() {
    let text = SITES
        .replace("count = 3", "count = 1")
        .replace("devices = [\"ev\"]\n", "")
        .replace("device_classes = [\"ev\"], ", "")
        .replace("ticks = 120", "ticks = 50")
        .replace("sensor_poll_every = 2", "sensor_poll_every = 3");
    let sim = simulate(&config(&text), false).unwrap();
    let home = sim.participant("home").unwrap();
    let report = audit(&home.node.public(), sim.disco().node.ledger());
    assert_eq!(report.rows.len(), 1, "{report:#?}");
    assert_eq!(report.rows[0].action, "report_reading");
    assert_eq!(report.rows[0].count, 1);
    assert_eq!(report.requesters.len(), 1);
}

#[test]
fn empty_chain_audits_to_an_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    let chain = dir.path().join("empty.bin");
    std::fs::write(&chain, b"").unwrap();
    let key = dir.path().join("k.hex");
    std::fs::write(&key, "11".repeat(32)).unwrap();
    let report = audit_files(&chain, &key).unwrap();
    assert!(report.rows.is_empty() && report.requesters.is_empty());
    assert!(scenario::verify_chain_file(&chain).unwrap().valid);
}

#[test]
fn error_categories() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    assert_eq!(
        ScenarioConfig::load(&missing)
            .map(|_| ())
            .map_err(scenario::ScenarioError::from)
            .unwrap_err()
            .exit_code(),
        EXIT_IO
    );
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "seed = 1\nticks = 1\nperiod_length = 0\n").unwrap();
    let err = scenario::ScenarioError::from(ScenarioConfig::load(&bad).unwrap_err());
    assert_eq!(err.exit_code(), EXIT_USAGE);

    let garbage = dir.path().join("garbage.bin");
    std::fs::write(&garbage, [0, 0, 0, 9, 1, 2]).unwrap();
    assert_eq!(
        scenario::verify_chain_file(&garbage)
            .unwrap_err()
            .exit_code(),
        EXIT_VERIFY
    );
    let key = dir.path().join("key.json");
    std::fs::write(&key, "{\"public_key\": 3}").unwrap();
    assert_eq!(load_public_key(&key).unwrap_err().exit_code(), EXIT_USAGE);
    assert_eq!(load_public_key(&missing).unwrap_err().exit_code(), EXIT_IO);
}
