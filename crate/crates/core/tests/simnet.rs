use std::path::PathBuf;

use proptest::prelude::*;

use forensicross::case::CaseNumber;
use forensicross::chain::ChainId;
use forensicross::interchain::CorruptionRule;
use forensicross::provenance::ChainVerdict;
use forensicross::simnet::{
    self, message_scenario, CompareTemplate, Event, FaultKind, FaultSpec, HopStatus, Scenario, SimError, Simulation,
};
use forensicross::topology::Design;

fn scenario(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name);
    Scenario::from_toml_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const BUNDLED: [&str; 5] = [
    "lifecycle_three_chain.toml",
    "provenance_two_chain.toml",
    "routing_mesh.toml",
    "routing_bridge.toml",
    "faults_bridge.toml",
];

#[test]
fn every_started_hop_is_decided() {
    for name in BUNDLED {
        let out = simnet::run(scenario(name)).unwrap();
        let s = &out.snapshot.summary;
        assert!(s.completed, "{name}");
        assert_eq!(
            s.hops_started,
            s.hops_validated + s.hops_rejected + s.hops_expired,
            "{name}"
        );
        assert_eq!(s.hops_started, out.hops.len() as u64, "{name}");
        assert!(out.hops.iter().all(|h| h.status != HopStatus::Pending), "{name}");
        assert_eq!(s.workload_errors, 0, "{name}");
    }
}

#[test]
fn honest_runs_keep_every_chain_valid() {
    for name in BUNDLED {
        let out = simnet::run(scenario(name)).unwrap();
        for c in &out.snapshot.chains {
            assert_eq!(c.broken_at, None, "{name}: {}", c.chain_id);
        }
    }
}

#[test]
fn fault_scenario_isolates_damage() {
    let out = simnet::run(scenario("faults_bridge.toml")).unwrap();
    // B's forging majority gets its body through verification, A's lone forger does not
    let forged: Vec<_> = out
        .hops
        .iter()
        .filter(|h| h.body_matches_origin == Some(false))
        .collect();
    assert!(!forged.is_empty());
    assert!(forged.iter().all(|h| h.from == ChainId::new("B")));
    assert!(out
        .hops
        .iter()
        .filter(|h| h.from == ChainId::new("A"))
        .all(|h| h.status == HopStatus::Validated && h.body_matches_origin == Some(true)));
    assert!(out.snapshot.summary.contract_errors >= 1);

    let report = &out.reports.last().expect("provenance completes").report;
    assert_eq!(report.verdicts[&ChainId::new("C")], ChainVerdict::Intact);
    assert_eq!(report.tampered_cells(), vec![(ChainId::new("A"), 0)]);
}

#[test]
fn unique_forgers_stall_verification_instead_of_passing() {
    let t = CompareTemplate::default();
    let mut s = message_scenario(2, Design::Bridge, &t);
    s.faults = (0..2)
        .map(|j| FaultSpec {
            at: 0,
            kind: FaultKind::CompromiseMutualNode {
                node: format!("c0/m{j}"),
                rule: CorruptionRule::Unique,
            },
        })
        .collect();
    let out = simnet::run(s).unwrap();
    let first = out.hops.iter().find(|h| h.origin_tx_id.0 == "c0:0").unwrap();
    assert_eq!(first.status, HopStatus::Rejected);
}

#[test]
fn silent_majority_expires() {
    let t = CompareTemplate::default();
    let mut s = message_scenario(2, Design::Bridge, &t);
    s.faults = (0..2)
        .map(|j| FaultSpec {
            at: 0,
            kind: FaultKind::CompromiseMutualNode {
                node: format!("c0/m{j}"),
                rule: CorruptionRule::Silent,
            },
        })
        .collect();
    let timeout = s.timeout;
    let out = simnet::run(s).unwrap();
    let first = out.hops.iter().find(|h| h.origin_tx_id.0 == "c0:0").unwrap();
    assert_eq!(first.status, HopStatus::Expired);
    assert_eq!(first.duration(), None);
    let expired_at = out.log.iter().find_map(|r| match &r.event {
        Event::HopDecided {
            origin_tx_id,
            status: HopStatus::Expired,
            ..
        } if origin_tx_id.0 == "c0:0" => Some(r.tick),
        _ => None,
    });
    assert_eq!(expired_at, Some(first.sent_tick + timeout));
}

#[test]
fn unknown_fault_target_is_rejected() {
    let mut s = scenario("routing_bridge.toml");
    s.faults.push(FaultSpec {
        at: 0,
        kind: FaultKind::TamperOffchain {
            chain: "Z".into(),
            case: "R-1".into(),
            stage: 0,
            tx_index: 0,
            mutation: forensicross::provenance::TamperMutation::FlipByte { offset: 0 },
        },
    });
    assert!(matches!(simnet::run(s), Err(SimError::WorkloadReferencesUnknownChain(c)) if c == "Z"));
}

#[test]
fn even_mutual_set_fails_validation() {
    let mut s = scenario("routing_bridge.toml");
    s.topology.n_i = 2;
    assert!(matches!(Simulation::new(s), Err(SimError::InvalidTopology(_))));
}

#[test]
fn tampering_after_the_run_is_localized() {
    let (_, mut world) = Simulation::new(scenario("lifecycle_three_chain.toml"))
        .unwrap()
        .finish();
    let case = CaseNumber::new("CASE-2024-001");
    let carol = world.user("carol").unwrap().1.public_key();
    world
        .tamper(
            &ChainId::new("B"),
            &case,
            2,
            0,
            &forensicross::provenance::TamperMutation::ReplaceBody("x".into()),
        )
        .unwrap();
    let report = world.extract_report(&case, &carol).unwrap();
    assert_eq!(report.tampered_cells(), vec![(ChainId::new("B"), 2)]);

    let outsider = world.user("bob").unwrap().1.public_key();
    assert!(world.extract_report(&case, &outsider).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn any_seed_reproduces_and_delivers(seed in any::<u64>(), k in 2u64..5) {
        let t = CompareTemplate { seed, ..Default::default() };
        for design in [Design::Mesh, Design::Bridge] {
            let a = simnet::run(message_scenario(k, design, &t)).unwrap();
            let b = simnet::run(message_scenario(k, design, &t)).unwrap();
            prop_assert_eq!(a.event_log_jsonl(), b.event_log_jsonl());
            prop_assert!(a.hops.iter().all(|h| h.status == HopStatus::Validated));
        }
    }

    #[test]
    fn latency_scales_durations(latency in 1u64..6) {
        let t = CompareTemplate { latency, ..Default::default() };
        for (design, hops) in [(Design::Mesh, 1), (Design::Bridge, 2)] {
            let out = simnet::run(message_scenario(3, design, &t)).unwrap();
            let d = out.hops.iter()
                .filter(|h| h.origin_tx_id.0 == "c0:0" && !h.to.is_bridge())
                .filter_map(|h| h.duration())
                .max();
            prop_assert_eq!(d, Some(hops * latency));
        }
    }
}
