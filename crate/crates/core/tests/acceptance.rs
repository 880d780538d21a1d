//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the verdict lines are always printed.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use forensicross::case::{CaseNumber, Vote};
use forensicross::chain::{validate_encoded_blocks, Block, Chain, ChainId, PayloadKind, Transaction, TxId};
use forensicross::crypto::{KeyPair, Signature};
use forensicross::interchain::{verify_translations, CorruptionRule, NodeId, TranslatedEnvelope, VerificationStatus};
use forensicross::payload::Payload;
use forensicross::provenance::TamperMutation;
use forensicross::registry::{Registry, StageOutcome};
use forensicross::simnet::{
    message_scenario, CompareTemplate, FaultKind, FaultSpec, HopRecord, HopStatus, Scenario, Simulation,
};
use forensicross::topology::{
    bridge_requirements, communication_counts, crossover_k, mesh_mutual_nodes, Design, Pattern,
};

type Check = Result<(), String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn load(name: &str) -> Scenario {
    let src = std::fs::read_to_string(scenario_dir().join(name)).expect("bundled scenario readable");
    Scenario::from_toml_str(&src).expect("bundled scenario parses")
}

fn topology_formulas() -> Check {
    for k in 1..=10u64 {
        // every unordered pair of chains gets its own 3-node set
        let pairs = (0..k).flat_map(|a| (a + 1..k).map(move |b| (a, b))).count() as u64;
        let mesh = mesh_mutual_nodes(k).map_err(|e| e.to_string())?;
        ensure(mesh == 3 * pairs, || format!("k={k}: mesh {mesh} != {}", 3 * pairs))?;

        // smallest bridge satisfying the sizing rules, found by search
        let b_min = (0..).find(|b| *b >= 3 * k && *b > 2).unwrap();
        let m_min = (0..).find(|m| 2 * b_min < *m && (m % 2 == 1)).unwrap();
        let got = bridge_requirements(k).map_err(|e| e.to_string())?;
        ensure(got == (m_min, b_min), || {
            format!("k={k}: bridge {got:?} != {:?}", (m_min, b_min))
        })?;
    }
    let crossover = (1..=10u64).find(|&k| 3 * k * (k - 1) / 2 >= 3 * k).unwrap();
    ensure(crossover_k() == crossover && crossover == 3, || {
        format!("crossover {} vs oracle {crossover}", crossover_k())
    })
}

fn envelope(node: usize, body: u8) -> TranslatedEnvelope {
    TranslatedEnvelope {
        origin_tx_id: TxId("A:0".into()),
        origin_chain: ChainId::new("A"),
        destination_chains: vec![ChainId::new("B")],
        canonical_body: vec![body],
        translator_node: NodeId::new(format!("A/m{node}")),
        translator_signature: Signature::EMPTY,
    }
}

fn brute_force_status(expected: usize, counts: &[usize]) -> VerificationStatus {
    let submitted: usize = counts.iter().sum();
    let modal = counts.iter().copied().max().unwrap_or(0);
    if modal * 2 > expected {
        return VerificationStatus::Validated;
    }
    // can any body still collect a strict majority?
    let reachable = (0..=expected - submitted).any(|extra| (modal + extra) * 2 > expected);
    if reachable {
        VerificationStatus::Pending
    } else {
        VerificationStatus::Rejected
    }
}

fn majority_soundness() -> Check {
    let mut cases = 0u64;
    for e in [3usize, 5, 7, 9] {
        for a in 0..=e {
            for b in 0..=e - a {
                for c in 0..=e - a - b {
                    let counts = [a, b, c];
                    let mut subs = Vec::new();
                    let mut node = 0;
                    for (body, n) in counts.iter().enumerate() {
                        for _ in 0..*n {
                            subs.push(envelope(node, body as u8));
                            node += 1;
                        }
                    }
                    let want = brute_force_status(e, &counts);
                    for order in [false, true] {
                        if order {
                            subs.reverse();
                        }
                        let (status, body) = verify_translations(e, &subs);
                        ensure(status == want, || {
                            format!("e={e} counts={counts:?}: {status:?} != {want:?}")
                        })?;
                        let validated = status == VerificationStatus::Validated;
                        ensure(validated == (counts.iter().max().unwrap() * 2 > e), || {
                            format!("e={e} counts={counts:?}: validated={validated}")
                        })?;
                        if validated {
                            let modal = counts.iter().position(|n| n * 2 > e).unwrap() as u8;
                            ensure(body == Some(vec![modal]), || {
                                format!("e={e} counts={counts:?}: wrong body")
                            })?;
                        }
                        cases += 1;
                    }
                }
            }
        }
    }
    ensure(cases > 0, || "no cases enumerated".into())
}

fn first_hop(hops: &[HopRecord]) -> Option<&HopRecord> {
    hops.iter().find(|h| h.origin_tx_id.0 == "c0:0" && h.hop == 1)
}

fn safety_bound() -> Check {
    for n_i in [3u64, 5, 7] {
        for compromised in 0..=n_i {
            let t = CompareTemplate {
                n_i,
                ..Default::default()
            };
            let mut scenario = message_scenario(2, Design::Bridge, &t);
            scenario.faults = (0..compromised)
                .map(|j| FaultSpec {
                    at: 0,
                    kind: FaultKind::CompromiseMutualNode {
                        node: format!("c0/m{j}"),
                        rule: CorruptionRule::Identical,
                    },
                })
                .collect();
            let out = forensicross::simnet::run(scenario).map_err(|e| e.to_string())?;
            let hop = first_hop(&out.hops).ok_or_else(|| format!("n_i={n_i} c={compromised}: no first hop"))?;
            let malicious_validated = hop.status == HopStatus::Validated && hop.body_matches_origin == Some(false);
            let expect = 2 * compromised > n_i;
            ensure(malicious_validated == expect, || {
                format!(
                    "n_i={n_i} c={compromised}: malicious validated {malicious_validated}, status {:?}",
                    hop.status
                )
            })?;
            if !expect {
                ensure(hop.body_matches_origin == Some(true), || {
                    format!("n_i={n_i} c={compromised}: honest body not validated")
                })?;
            }
        }
    }
    Ok(())
}

fn tamper_localization() -> Check {
    let sim = Simulation::new(load("provenance_two_chain.toml")).map_err(|e| e.to_string())?;
    let (_, world) = sim.finish();
    ensure(world.orgs.len() == 2 && world.stage_count == 5, || {
        "expected 2 chains and 5 stages".into()
    })?;
    let case = CaseNumber::new("C-7");
    let requester = world.user("quinn").ok_or("no quinn")?.1.public_key();
    let mut baseline = world.clone();
    let clean = baseline.extract_report(&case, &requester).map_err(|e| e.to_string())?;
    ensure(clean.all_intact(), || "untampered baseline not intact".into())?;

    let mut positions = 0;
    for (chain, org) in &world.orgs {
        for stage in 0..world.stage_count {
            let n = org.offchain().stage_transactions(&case, stage).len();
            ensure(n >= 3, || format!("{chain} stage {stage} has only {n} transactions"))?;
            for index in 0..n {
                let mut w = world.clone();
                w.tamper(chain, &case, stage, index, &TamperMutation::FlipByte { offset: 0 })
                    .map_err(|e| e.to_string())?;
                let report = w.extract_report(&case, &requester).map_err(|e| e.to_string())?;
                let cells = report.tampered_cells();
                ensure(cells == vec![(chain.clone(), stage)], || {
                    format!("tamper {chain}:{stage}:{index} reported {cells:?}")
                })?;
                positions += 1;
            }
        }
    }
    ensure(positions >= 30, || format!("only {positions} positions tried"))
}

fn random_chain(rng: &mut ChaCha8Rng, trial: u64) -> (Chain, Vec<KeyPair>) {
    let id = ChainId::new(format!("T{trial}"));
    let validators: Vec<KeyPair> = (0..3).map(|i| KeyPair::derive(&format!("trial{trial}/v{i}"))).collect();
    let user = KeyPair::derive(&format!("trial{trial}/user"));
    let mut chain = Chain::new(id.clone(), validators.iter().map(KeyPair::public_key).collect());
    let mut counter = 0u32;
    for h in 0..20u64 {
        for _ in 0..rng.gen_range(0..4) {
            counter += 1;
            let mut body = counter.to_le_bytes().to_vec();
            body.extend((0..rng.gen_range(0..24)).map(|_| rng.gen::<u8>()));
            let tx = Transaction::new_signed(&user, PayloadKind::InterchainEnvelope, body, id.clone(), vec![]);
            chain.submit_transaction(tx).expect("fresh tx accepted");
        }
        let scheduled = *chain.scheduled_validator().expect("non-empty authority set");
        let v = validators.iter().find(|k| k.public_key() == scheduled).unwrap();
        chain.mine_block(v, h).expect("scheduled validator mines");
    }
    (chain, validators)
}

fn chain_integrity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for trial in 0..500u64 {
        let (mut chain, _) = random_chain(&mut rng, trial);
        ensure(chain.validate_chain().broken_height().is_none(), || {
            format!("trial {trial}: fresh chain broken")
        })?;
        let mut encoded: Vec<Vec<u8>> = chain.blocks().iter().map(Block::encode).collect();
        let j = rng.gen_range(0..encoded.len());
        let at = rng.gen_range(0..encoded[j].len());
        encoded[j][at] ^= rng.gen_range(1..=255u8);

        let broken = validate_encoded_blocks(chain.chain_id(), chain.authority_set(), &encoded).broken_height();
        ensure(matches!(broken, Some(h) if h <= j as u64), || {
            format!("trial {trial}: byte {at} of block {j} mutated, broken at {broken:?}")
        })?;
        if let Ok(block) = Block::decode(&encoded[j]) {
            chain.blocks_mut()[j] = block;
            let broken = chain.validate_chain().broken_height();
            ensure(matches!(broken, Some(h) if h <= j as u64), || {
                format!("trial {trial}: decodable mutation of block {j} gave {broken:?}")
            })?;
        }
    }
    Ok(())
}

fn unanimity() -> Check {
    let chains = ["A", "B", "C", "D"];
    for p in 2..=4usize {
        for mask in 0..(1u32 << p) {
            let votes: Vec<Vote> = (0..p)
                .map(|i| {
                    if mask >> i & 1 == 1 {
                        Vote::Approve
                    } else {
                        Vote::Reject(format!("no from {i}"))
                    }
                })
                .collect();
            let dests: Vec<ChainId> = chains[1..p].iter().map(|c| ChainId::new(*c)).collect();
            let tx = Payload::CaseCreate {
                case_number: "U-1".into(),
                destinations: dests.clone(),
            }
            .into_transaction(&KeyPair::derive("creator"), ChainId::new("A"), dests);
            let mut reg = Registry::new(5);
            reg.register_case(&tx).map_err(|e| e.to_string())?;
            let case = CaseNumber::new("U-1");
            reg.open_stage_proposal(&case, &ChainId::new("A"), 1, 0)
                .map_err(|e| e.to_string())?;
            let mut last = None;
            for (i, v) in votes.iter().enumerate() {
                last = Some(
                    reg.process_stage_vote(&case, &ChainId::new(chains[i]), 1, v.clone())
                        .map_err(|e| e.to_string())?,
                );
            }
            let all_approve = votes.iter().all(Vote::is_approve);
            let advanced = last == Some(StageOutcome::Advanced);
            let stage = reg.case(&case).unwrap().current_stage;
            ensure(advanced == all_approve && (stage == 1) == all_approve, || {
                format!("p={p} votes={votes:?}: outcome {last:?}, stage {stage}")
            })?;
        }
    }
    Ok(())
}

fn final_duration(hops: &[HopRecord], origin: &str) -> Option<u64> {
    hops.iter()
        .filter(|h| h.origin_tx_id.0 == origin && !h.to.is_bridge())
        .filter_map(HopRecord::duration)
        .max()
}

fn hop_model() -> Check {
    let t = CompareTemplate::default();
    for k in 2..=6u64 {
        let mesh = forensicross::simnet::run(message_scenario(k, Design::Mesh, &t)).map_err(|e| e.to_string())?;
        let bridge = forensicross::simnet::run(message_scenario(k, Design::Bridge, &t)).map_err(|e| e.to_string())?;
        let dm = final_duration(&mesh.hops, "c0:0").ok_or("mesh single not delivered")?;
        let db = final_duration(&bridge.hops, "c0:0").ok_or("bridge single not delivered")?;
        // one latency per hop: direct pair versus origin, bridge, destination
        ensure(dm == t.latency && db == 2 * t.latency && db == 2 * dm, || {
            format!("k={k}: mesh {dm} bridge {db}")
        })?;

        let count = |hops: &[HopRecord]| hops.iter().filter(|h| h.origin_tx_id.0 == "c0:1").count() as u64;
        let oracle = (k - 1, 1 + (k - 1));
        let analytic = communication_counts(k, Pattern::Broadcast).map_err(|e| e.to_string())?;
        let measured = (count(&mesh.hops), count(&bridge.hops));
        ensure(measured == oracle && analytic == oracle, || {
            format!("k={k}: broadcast measured {measured:?}, analytic {analytic:?}, oracle {oracle:?}")
        })?;
    }
    Ok(())
}

fn determinism() -> Check {
    let mut names: Vec<String> = std::fs::read_dir(scenario_dir())
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .filter(|n| n.ends_with(".toml"))
        .collect();
    names.sort();
    ensure(!names.is_empty(), || "no bundled scenarios".into())?;
    for name in &names {
        let a = forensicross::simnet::run(load(name)).map_err(|e| format!("{name}: {e}"))?;
        let b = forensicross::simnet::run(load(name)).map_err(|e| format!("{name}: {e}"))?;
        ensure(a.event_log_jsonl() == b.event_log_jsonl(), || {
            format!("{name}: event logs differ")
        })?;
        ensure(a.metrics_csv() == b.metrics_csv(), || format!("{name}: metrics differ"))?;
        ensure(a.snapshot_json() == b.snapshot_json(), || {
            format!("{name}: snapshots differ")
        })?;
    }
    Ok(())
}

fn lifecycle() -> Check {
    let sim = Simulation::new(load("lifecycle_three_chain.toml")).map_err(|e| e.to_string())?;
    let (out, world) = sim.finish();
    ensure(out.snapshot.summary.completed, || "run did not complete".into())?;
    let case = CaseNumber::new("CASE-2024-001");

    let registry = world.registry().ok_or("no registry")?;
    let contract = registry.case(&case).ok_or("case not registered")?;
    ensure(contract.participants().len() == 3, || {
        "case is not shared by 3 chains".into()
    })?;
    ensure(!contract.query_nodes.is_empty(), || "no query nodes".into())?;
    let outcomes: Vec<_> = contract.rounds.iter().map(|r| r.outcome.clone()).collect();
    let blocked = outcomes
        .iter()
        .filter(|o| matches!(o, Some(StageOutcome::Blocked(_))))
        .count();
    let advanced = outcomes.iter().filter(|o| **o == Some(StageOutcome::Advanced)).count();
    ensure(blocked == 1 && advanced as u32 == world.stage_count - 1, || {
        format!("rounds: {advanced} advanced, {blocked} blocked")
    })?;
    ensure(contract.current_stage == world.stage_count - 1, || {
        format!("bridge stage {}", contract.current_stage)
    })?;

    let mut digests = BTreeMap::new();
    for (chain, org) in &world.orgs {
        let local = org.case(&case).ok_or_else(|| format!("{chain} lacks the case"))?;
        ensure(local.current_stage == contract.current_stage, || {
            format!("{chain} at stage {}", local.current_stage)
        })?;
        digests.insert(
            chain.clone(),
            local.policy_digest().ok_or_else(|| format!("{chain} has no policy"))?,
        );
    }
    ensure(
        contract.policy_digest.is_some() && digests.values().all(|d| Some(*d) == contract.policy_digest),
        || format!("policy digests differ: {digests:?}"),
    )?;

    let accesses: usize = world.orgs.values().map(|o| o.access_log().len()).sum();
    ensure(accesses == 20, || format!("{accesses} logged accesses"))?;

    let carol = world.user("carol").ok_or("no carol")?.1.public_key();
    let report = out
        .reports
        .iter()
        .find(|r| r.requester == carol)
        .ok_or("no provenance report for carol")?;
    ensure(report.report.all_intact() && report.report.verdicts.len() == 3, || {
        format!("report {:?}", report.report.verdicts)
    })
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("topology formulas", topology_formulas),
        ("majority verification soundness", majority_soundness),
        ("safety bound", safety_bound),
        ("tamper localization completeness", tamper_localization),
        ("chain integrity", chain_integrity),
        ("unanimity", unanimity),
        ("hop-count and duration model", hop_model),
        ("determinism", determinism),
        ("end-to-end lifecycle", lifecycle),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(()) => println!("PASS {}. {name} ({secs:.2}s)", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {}. {name} ({secs:.2}s): {why}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
