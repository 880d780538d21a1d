//! World state and the discrete-event loop.
//!
//! Time is a logical tick. Within a tick, queued events run in scheduling
//! order, then every chain whose block time divides the tick mines its pool.
//! Mining hands each cross-chain transaction to the mutual nodes of the next
//! link; their envelopes arrive `latency` ticks later at the receiving
//! contract's verification ledger.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};

use serde::Serialize;

use crate::case::{CaseNumber, StageIndex, Vote};
use crate::chain::{Chain, ChainId, PayloadKind, Transaction, TxId};
use crate::crypto::{hash, Digest, KeyPair, PublicKey};
use crate::interchain::{
    canonical_translation, BridgeFormat, MutualNode, MutualNodeSet, NodeId, TranslatedEnvelope, VerificationLedger,
    VerificationStatus,
};
use crate::lifecycle::{LocalEffect, Organization, ReceivedRecord};
use crate::payload::{Notice, Payload};
use crate::provenance::{
    assemble_bundle, extract_provenance, verify_and_localize, ChainSection, OffchainCaseStore, ProvenanceError,
    SealedEnvelope, TamperMutation, TamperReport,
};
use crate::registry::{Registry, RegistrySnapshot, StageOutcome};
use crate::topology::Design;

use super::events::{Event, HopRecord, HopStatus, LogRecord, Summary};
use super::scenario::{FaultKind, Scenario, WorkloadAction};
use super::SimError;

#[derive(Debug, Clone)]
struct PendingRequest {
    case_number: CaseNumber,
    requester: PublicKey,
    requester_chain: ChainId,
    expected: Vec<ChainId>,
    sections: BTreeMap<ChainId, ChainSection>,
}

/// The bridge chain and its contracts.
#[derive(Debug, Clone)]
pub struct BridgeState {
    pub chain: Chain,
    pub contract_key: KeyPair,
    pub registry: Registry,
    requests: BTreeMap<u64, PendingRequest>,
    next_request: u64,
}

#[derive(Debug, Clone)]
pub struct World {
    pub design: Design,
    pub stage_count: u32,
    pub orgs: BTreeMap<ChainId, Organization>,
    pub bridge: Option<BridgeState>,
    pub sets: Vec<MutualNodeSet>,
    pub ledgers: BTreeMap<(ChainId, ChainId), VerificationLedger>,
    validators: BTreeMap<PublicKey, KeyPair>,
    users: BTreeMap<String, (ChainId, KeyPair)>,
}

fn node_keys(seed: u64, node: &str) -> KeyPair {
    KeyPair::derive(&format!("{seed}/{node}"))
}

impl World {
    /// Builds chains, mutual-node sets, contracts and users. Keys derive from
    /// the seed and node names only.
    pub fn build(s: &Scenario) -> World {
        let seed = s.seed;
        let n_i = s.topology.n_i as usize;
        let n = s.topology.n as usize;
        let chains = s.chain_ids();
        let mut validators = BTreeMap::new();
        let mut key = |name: &str| {
            let kp = node_keys(seed, name);
            validators.insert(kp.public_key(), kp.clone());
            kp
        };
        let mutual = |label: &str, key: &mut dyn FnMut(&str) -> KeyPair| -> Vec<MutualNode> {
            (0..n_i)
                .map(|j| {
                    let id = format!("{label}/m{j}");
                    MutualNode::honest(NodeId::new(id.clone()), key(&id))
                })
                .collect()
        };

        let mut sets = Vec::new();
        let mut members: BTreeMap<ChainId, Vec<PublicKey>> = BTreeMap::new();
        let mut bridge_members = Vec::new();
        match s.design() {
            Design::Bridge => {
                for c in &chains {
                    let nodes = mutual(c.as_str(), &mut key);
                    let pks: Vec<PublicKey> = nodes.iter().map(|m| m.keys.public_key()).collect();
                    members.entry(c.clone()).or_default().extend(&pks);
                    bridge_members.extend(pks);
                    sets.push(
                        MutualNodeSet::new(c.clone(), ChainId::bridge(), nodes)
                            .expect("validated topology has odd sets above 2"),
                    );
                }
            }
            Design::Mesh => {
                for (i, a) in chains.iter().enumerate() {
                    for b in &chains[i + 1..] {
                        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                        let nodes = mutual(&format!("{lo}-{hi}"), &mut key);
                        for m in &nodes {
                            members.entry(a.clone()).or_default().push(m.keys.public_key());
                            members.entry(b.clone()).or_default().push(m.keys.public_key());
                        }
                        sets.push(
                            MutualNodeSet::new(lo.clone(), hi.clone(), nodes)
                                .expect("validated topology has odd sets above 2"),
                        );
                    }
                }
            }
        }

        let mut orgs = BTreeMap::new();
        for c in &chains {
            let mut authority = members.remove(c).unwrap_or_default();
            for j in authority.len()..n {
                authority.push(key(&format!("{c}/n{j}")).public_key());
            }
            let contract = KeyPair::derive(&format!("{seed}/{c}/contract"));
            orgs.insert(
                c.clone(),
                Organization::new(Chain::new(c.clone(), authority), contract, s.stage_count),
            );
        }

        let bridge = (s.design() == Design::Bridge).then(|| {
            for j in bridge_members.len()..s.topology.m as usize {
                bridge_members.push(key(&format!("bridge/n{j}")).public_key());
            }
            BridgeState {
                chain: Chain::new(ChainId::bridge(), bridge_members),
                contract_key: KeyPair::derive(&format!("{seed}/bridge/contract")),
                registry: Registry::new(s.stage_count),
                requests: BTreeMap::new(),
                next_request: 0,
            }
        });

        let mut users = BTreeMap::new();
        for u in &s.users {
            let chain = ChainId::new(u.chain.clone());
            let kp = KeyPair::derive(&format!("{seed}/{}/user/{}", u.chain, u.name));
            orgs.get_mut(&chain).expect("validated user chain").register_user(
                u.name.clone(),
                u.role.as_str(),
                kp.public_key(),
            );
            users.insert(u.name.clone(), (chain, kp));
        }

        World {
            design: s.design(),
            stage_count: s.stage_count,
            orgs,
            bridge,
            sets,
            ledgers: BTreeMap::new(),
            validators,
            users,
        }
    }

    pub fn org(&self, chain: &ChainId) -> Option<&Organization> {
        self.orgs.get(chain)
    }

    pub fn registry(&self) -> Option<&Registry> {
        self.bridge.as_ref().map(|b| &b.registry)
    }

    pub fn user(&self, name: &str) -> Option<&(ChainId, KeyPair)> {
        self.users.get(name)
    }

    pub fn set_between(&self, a: &ChainId, b: &ChainId) -> Option<&MutualNodeSet> {
        self.sets.iter().find(|s| s.links(a, b))
    }

    pub fn all_chains(&self) -> impl Iterator<Item = &Chain> {
        self.orgs
            .values()
            .map(Organization::chain)
            .chain(self.bridge.as_ref().map(|b| &b.chain))
    }

    pub fn tamper(
        &mut self,
        chain: &ChainId,
        case_number: &CaseNumber,
        stage: StageIndex,
        index: usize,
        mutation: &TamperMutation,
    ) -> Result<(), ProvenanceError> {
        let org = self
            .orgs
            .get_mut(chain)
            .ok_or_else(|| ProvenanceError::TamperTargetMissing {
                chain: chain.clone(),
                case: case_number.clone(),
                stage,
                index,
            })?;
        org.offchain_mut().tamper(case_number, stage, index, mutation)
    }

    /// Runs extraction and verification immediately, outside the event loop.
    /// The request is still authorized and logged by the registry.
    pub fn extract_report(
        &mut self,
        case_number: &CaseNumber,
        requester: &PublicKey,
    ) -> Result<TamperReport, ProvenanceError> {
        let bridge = self
            .bridge
            .as_mut()
            .ok_or_else(|| ProvenanceError::MalformedBundle("mesh design keeps no bridge reference".into()))?;
        let stores: BTreeMap<ChainId, &OffchainCaseStore> =
            self.orgs.iter().map(|(id, o)| (id.clone(), o.offchain())).collect();
        let sealed = extract_provenance(&mut bridge.registry, &stores, case_number, *requester)?;
        let bundle = sealed
            .open(requester)
            .ok_or_else(|| ProvenanceError::MalformedBundle("bundle sealed to another key".into()))?;
        verify_and_localize(&bundle)
    }

    pub fn snapshot(&self, summary: Summary) -> WorldSnapshot {
        WorldSnapshot {
            design: self.design,
            stage_count: self.stage_count,
            chains: self
                .all_chains()
                .map(|c| ChainSummary {
                    chain_id: c.chain_id().clone(),
                    height: c.height(),
                    head_digest: c.head_digest(),
                    broken_at: c.validate_chain().broken_height(),
                })
                .collect(),
            cases: self
                .orgs
                .values()
                .flat_map(|o| {
                    o.cases().map(|c| CaseView {
                        chain: o.chain_id().clone(),
                        case_number: c.case_number.clone(),
                        current_stage: c.current_stage,
                        policy_digest: c.policy_digest(),
                    })
                })
                .collect(),
            registry: self.registry().map(Registry::snapshot),
            summary,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ChainSummary {
    pub chain_id: ChainId,
    pub height: u64,
    pub head_digest: Digest,
    pub broken_at: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CaseView {
    pub chain: ChainId,
    pub case_number: CaseNumber,
    pub current_stage: StageIndex,
    pub policy_digest: Option<Digest>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WorldSnapshot {
    pub design: Design,
    pub stage_count: u32,
    pub chains: Vec<ChainSummary>,
    pub cases: Vec<CaseView>,
    pub registry: Option<RegistrySnapshot>,
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProvenanceOutcome {
    pub tick: u64,
    pub chain: ChainId,
    pub requester: PublicKey,
    pub report: TamperReport,
}

#[derive(Debug)]
enum Pending {
    Workload(usize),
    Fault(usize),
    Deliver {
        from: ChainId,
        to: ChainId,
        envelope: Box<TranslatedEnvelope>,
    },
    Expire {
        hop: usize,
    },
}

#[derive(Debug)]
struct Scheduled {
    tick: u64,
    seq: u64,
    item: Pending,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.tick, self.seq) == (other.tick, other.seq)
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.tick, self.seq).cmp(&(other.tick, other.seq))
    }
}

#[derive(Debug, Clone, Copy)]
struct RouteStart {
    tick: u64,
    kind: PayloadKind,
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub log: Vec<LogRecord>,
    pub hops: Vec<HopRecord>,
    pub reports: Vec<ProvenanceOutcome>,
    pub snapshot: WorldSnapshot,
}

pub struct Simulation {
    scenario: Scenario,
    world: World,
    queue: BinaryHeap<Reverse<Scheduled>>,
    tick: u64,
    next_sched: u64,
    next_log: u64,
    log: Vec<LogRecord>,
    hops: Vec<HopRecord>,
    honest_bodies: Vec<Vec<u8>>,
    hop_index: BTreeMap<(ChainId, ChainId, TxId), usize>,
    routes: BTreeMap<TxId, RouteStart>,
    vote_scripts: BTreeMap<(CaseNumber, StageIndex, u32), BTreeMap<ChainId, String>>,
    reports: Vec<ProvenanceOutcome>,
    summary: Summary,
    finished: bool,
}

impl Simulation {
    pub fn new(scenario: Scenario) -> Result<Simulation, SimError> {
        scenario.validate()?;
        let max_latency = scenario
            .network
            .links
            .iter()
            .map(|l| l.latency)
            .chain([scenario.network.latency])
            .max()
            .unwrap_or(1);
        if scenario.timeout <= max_latency {
            return Err(SimError::InvalidScenario(format!(
                "timeout {} must exceed the largest link latency {max_latency}",
                scenario.timeout
            )));
        }
        let world = World::build(&scenario);
        let mut sim = Simulation {
            scenario,
            world,
            queue: BinaryHeap::new(),
            tick: 0,
            next_sched: 0,
            next_log: 0,
            log: Vec::new(),
            hops: Vec::new(),
            honest_bodies: Vec::new(),
            hop_index: BTreeMap::new(),
            routes: BTreeMap::new(),
            vote_scripts: BTreeMap::new(),
            reports: Vec::new(),
            summary: Summary::default(),
            finished: false,
        };
        let starts: Vec<(u64, Pending)> = sim
            .scenario
            .workload
            .iter()
            .enumerate()
            .map(|(i, w)| (w.at, Pending::Workload(i)))
            .chain(
                sim.scenario
                    .faults
                    .iter()
                    .enumerate()
                    .map(|(i, f)| (f.at, Pending::Fault(i))),
            )
            .collect();
        for (at, p) in starts {
            sim.schedule(at, p);
        }
        sim.emit(Event::RunStarted {
            design: sim.world.design,
            seed: sim.scenario.seed,
            chains: sim.scenario.chain_ids(),
        });
        Ok(sim)
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn world_mut(&mut self) -> &mut World {
        &mut self.world
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn hops(&self) -> &[HopRecord] {
        &self.hops
    }

    fn schedule(&mut self, tick: u64, item: Pending) {
        let seq = self.next_sched;
        self.next_sched += 1;
        self.queue.push(Reverse(Scheduled { tick, seq, item }));
    }

    fn emit(&mut self, event: Event) {
        let seq = self.next_log;
        self.next_log += 1;
        self.log.push(LogRecord {
            tick: self.tick,
            seq,
            event,
        });
    }

    fn contract_error(&mut self, chain: &ChainId, error: impl ToString) {
        self.summary.contract_errors += 1;
        self.emit(Event::ContractError {
            chain: chain.clone(),
            error: error.to_string(),
        });
    }

    fn block_time(&self, chain: &ChainId) -> u64 {
        if chain.is_bridge() {
            return self.scenario.network.bridge_block_time;
        }
        self.scenario
            .chains
            .iter()
            .find(|c| c.id == chain.as_str())
            .and_then(|c| c.block_time)
            .unwrap_or(self.scenario.network.block_time)
    }

    fn latency(&self, from: &ChainId, to: &ChainId) -> u64 {
        self.scenario
            .network
            .links
            .iter()
            .find(|l| l.from == from.as_str() && l.to == to.as_str())
            .map_or(self.scenario.network.latency, |l| l.latency)
    }

    fn pools_pending(&self) -> bool {
        self.world.all_chains().any(|c| !c.pending_pool().is_empty())
    }

    /// Runs until nothing is queued and every pool is empty, or until
    /// `max_ticks`.
    pub fn run_to_completion(&mut self) {
        if self.finished {
            return;
        }
        let mut t = self.queue.peek().map_or(0, |Reverse(s)| s.tick);
        let completed = loop {
            if t > self.scenario.max_ticks {
                break false;
            }
            self.tick = t;
            while self.queue.peek().is_some_and(|Reverse(s)| s.tick <= t) {
                let Reverse(s) = self.queue.pop().expect("peeked");
                self.handle(s.item);
            }
            self.mine_due();
            t = match (self.queue.peek(), self.pools_pending()) {
                (_, true) => t + 1,
                (Some(Reverse(s)), false) => s.tick,
                (None, false) => break true,
            };
        };
        self.summary.final_tick = self.tick;
        self.summary.completed = completed;
        let summary = self.summary.clone();
        self.emit(Event::RunFinished { summary });
        self.finished = true;
    }

    pub fn finish(mut self) -> (RunOutput, World) {
        self.run_to_completion();
        let snapshot = self.world.snapshot(self.summary.clone());
        (
            RunOutput {
                log: self.log,
                hops: self.hops,
                reports: self.reports,
                snapshot,
            },
            self.world,
        )
    }

    fn handle(&mut self, item: Pending) {
        match item {
            Pending::Workload(i) => self.run_workload(i),
            Pending::Fault(i) => self.apply_fault(i),
            Pending::Deliver { from, to, envelope } => self.deliver(from, to, *envelope),
            Pending::Expire { hop } => {
                if self.hops[hop].status == HopStatus::Pending {
                    self.hops[hop].status = HopStatus::Expired;
                    self.summary.hops_expired += 1;
                    let h = &self.hops[hop];
                    let event = Event::HopDecided {
                        origin_tx_id: h.origin_tx_id.clone(),
                        hop: h.hop,
                        from: h.from.clone(),
                        to: h.to.clone(),
                        status: HopStatus::Expired,
                        duration: None,
                    };
                    self.emit(event);
                }
            }
        }
    }

    fn run_workload(&mut self, index: usize) {
        let item = self.scenario.workload[index].clone();
        let action = item.action;
        let chain = ChainId::new(action.chain());
        let result = self.execute(&action);
        let (tx_id, error) = match result {
            Ok(id) => (id, None),
            Err(e) => {
                self.summary.workload_errors += 1;
                (None, Some(e))
            }
        };
        self.emit(Event::Workload {
            index,
            action: action.name(),
            chain,
            tx_id,
            error,
        });
    }

    fn execute(&mut self, action: &WorkloadAction) -> Result<Option<TxId>, String> {
        let (_, user) = self.world.users[action.user()].clone();
        let chain = ChainId::new(action.chain());
        let tick = self.tick;
        let stage_count = self.scenario.stage_count;
        let err = |e: crate::lifecycle::LifecycleError| e.to_string();
        let tx = {
            let org = self.world.orgs.get_mut(&chain).expect("validated chain");
            match action {
                WorkloadAction::CreateCase { case, destinations, .. } => org
                    .create_case_request(
                        &user,
                        CaseNumber::new(case.clone()),
                        destinations.iter().map(|d| ChainId::new(d.clone())).collect(),
                    )
                    .map_err(err)?,
                WorkloadAction::DispatchPolicy { case, policy, .. } => {
                    let policy = self.scenario.policies[policy].to_policy(stage_count);
                    org.dispatch_access_policy(&user, &CaseNumber::new(case.clone()), policy)
                        .map_err(err)?
                }
                WorkloadAction::AssignQueryNodes { case, query_nodes, .. } => {
                    let keys = query_nodes.iter().map(|q| self.world.users[q].1.public_key()).collect();
                    org.assign_query_nodes(&user, &CaseNumber::new(case.clone()), keys)
                        .map_err(err)?
                }
                WorkloadAction::ProposeStage { case, reject, .. } => {
                    let case_number = CaseNumber::new(case.clone());
                    let tx = org.propose_stage(&user, &case_number).map_err(err)?;
                    if let Ok(Payload::StageProposal { stage, attempt, .. }) = Payload::of(&tx) {
                        let script = reject
                            .iter()
                            .map(|(c, r)| (ChainId::new(c.clone()), r.clone()))
                            .collect();
                        self.vote_scripts.insert((case_number, stage, attempt), script);
                    }
                    tx
                }
                WorkloadAction::Access {
                    case,
                    access,
                    data,
                    count,
                    ..
                } => {
                    let case_number = CaseNumber::new(case.clone());
                    let mut last = None;
                    for i in 0..*count {
                        let digest = hash(format!("{data}#{i}").as_bytes());
                        let (_, id) = org
                            .log_data_access(&user, &case_number, *access, digest, tick)
                            .map_err(err)?;
                        last = Some(id);
                    }
                    return Ok(last);
                }
                WorkloadAction::ProvenanceRequest { case, .. } => org
                    .provenance_request(&user, &CaseNumber::new(case.clone()))
                    .map_err(err)?,
                WorkloadAction::Message { to, body, .. } => {
                    Payload::Interchain(Notice::Message(body.as_bytes().to_vec())).into_transaction(
                        &user,
                        chain.clone(),
                        to.iter().map(|d| ChainId::new(d.clone())).collect(),
                    )
                }
            }
        };
        self.submit_at(&chain, tx).map(Some)
    }

    fn apply_fault(&mut self, index: usize) {
        let fault = self.scenario.faults[index].clone();
        let (description, result) = match &fault.kind {
            FaultKind::CompromiseMutualNode { node, rule } => {
                let node = NodeId::new(node.clone());
                let result = match self.world.sets.iter_mut().find(|s| s.member(&node).is_some()) {
                    Some(set) => set.compromise(&node, *rule).map_err(|e| e.to_string()),
                    None => Err(format!("no mutual node named {node}")),
                };
                (format!("compromise {node} ({rule:?})"), result)
            }
            FaultKind::TamperOffchain {
                chain,
                case,
                stage,
                tx_index,
                mutation,
            } => (
                format!("tamper {chain}:{case} stage {stage} tx {tx_index}"),
                self.world
                    .tamper(
                        &ChainId::new(chain.clone()),
                        &CaseNumber::new(case.clone()),
                        *stage,
                        *tx_index,
                        mutation,
                    )
                    .map_err(|e| e.to_string()),
            ),
        };
        self.emit(Event::Fault {
            index,
            description,
            error: result.err(),
        });
    }

    fn submit_at(&mut self, chain: &ChainId, tx: Transaction) -> Result<TxId, String> {
        if chain.is_bridge() {
            let bridge = self.world.bridge.as_mut().expect("bridge design");
            bridge.chain.submit_transaction(tx).map_err(|e| e.to_string())
        } else {
            let org = self.world.orgs.get_mut(chain).expect("known chain");
            org.submit(tx).map_err(|e| e.to_string())
        }
    }

    fn submit_or_log(&mut self, chain: &ChainId, tx: Transaction) {
        if let Err(e) = self.submit_at(chain, tx) {
            self.contract_error(chain, e);
        }
    }

    fn mine_due(&mut self) {
        let t = self.tick;
        let due: Vec<ChainId> = self
            .world
            .all_chains()
            .filter(|c| !c.pending_pool().is_empty())
            .map(|c| c.chain_id().clone())
            .filter(|c| t.is_multiple_of(self.block_time(c)))
            .collect();
        for id in due {
            let block = {
                let chain = match self.world.bridge.as_mut() {
                    Some(b) if id.is_bridge() => &mut b.chain,
                    _ => self.world.orgs.get_mut(&id).expect("known chain").chain_mut(),
                };
                let validator = *chain.scheduled_validator().expect("authority set is never empty");
                let keys = &self.world.validators[&validator];
                chain
                    .mine_block(keys, t)
                    .expect("scheduled validator belongs to the authority set")
                    .clone()
            };
            self.summary.blocks_mined += 1;
            self.emit(Event::BlockMined {
                chain: id.clone(),
                height: block.height,
                transactions: block.transactions.len(),
                header_digest: block.header_digest(),
            });
            for tx in &block.transactions {
                if id.is_bridge() {
                    for d in tx.destination_chains.iter().filter(|d| !d.is_bridge()) {
                        self.send_hop(&id, d, tx);
                    }
                    continue;
                }
                let effect = self.world.orgs.get_mut(&id).expect("known chain").apply_mined(tx);
                match effect {
                    Some(LocalEffect::CaseOpened(case_number)) => self.emit(Event::CaseInstalled {
                        chain: id.clone(),
                        case_number,
                    }),
                    Some(LocalEffect::PolicyStored { case_number, digest }) => self.emit(Event::PolicyStored {
                        chain: id.clone(),
                        case_number,
                        digest,
                    }),
                    _ => {}
                }
                match self.world.design {
                    Design::Bridge => {
                        if !tx.destination_chains.is_empty() || tx.payload_kind == PayloadKind::DataAccessLog {
                            self.send_hop(&id, &ChainId::bridge(), tx);
                        }
                    }
                    Design::Mesh => {
                        for d in &tx.destination_chains {
                            if d != &id && self.world.orgs.contains_key(d) {
                                self.send_hop(&id, d, tx);
                            }
                        }
                    }
                }
            }
        }
    }

    /// Hands a freshly mined `tx` to the mutual nodes linking `from` and `to`.
    fn send_hop(&mut self, from: &ChainId, to: &ChainId, tx: &Transaction) {
        let Some(set) = self.world.set_between(from, to) else {
            self.contract_error(from, format!("no mutual nodes link {from} and {to}"));
            return;
        };
        let (origin, honest) = match canonical_translation(tx) {
            Ok(t) => t,
            Err(e) => return self.contract_error(from, e),
        };
        let mut envelopes = Vec::new();
        for m in set.members() {
            match set.translate(tx, &m.id, to) {
                Ok(Some(env)) => envelopes.push(env),
                Ok(None) => {}
                Err(e) => return self.contract_error(from, e),
            }
        }
        let relayed = matches!(Payload::of(tx), Ok(Payload::Interchain(Notice::Relay { .. })));
        let tick = self.tick;
        let start = *self.routes.entry(origin.clone()).or_insert(RouteStart {
            tick,
            kind: tx.payload_kind,
        });
        let key = (from.clone(), to.clone(), origin.clone());
        if self.hop_index.contains_key(&key) {
            return self.contract_error(from, format!("{origin} already routed {from}->{to}"));
        }
        let count = envelopes.len() as u32;
        let hop = self.hops.len();
        self.hops.push(HopRecord {
            origin_tx_id: origin.clone(),
            origin_chain: if relayed {
                self.origin_chain_of(tx)
            } else {
                tx.source_chain.clone()
            },
            kind: start.kind,
            hop: if relayed { 2 } else { 1 },
            from: from.clone(),
            to: to.clone(),
            start_tick: start.tick,
            sent_tick: tick,
            decided_tick: None,
            envelopes: count,
            status: HopStatus::Pending,
            body_matches_origin: None,
        });
        self.honest_bodies.push(honest);
        self.hop_index.insert(key, hop);
        self.summary.hops_started += 1;
        self.summary.envelopes_sent += u64::from(count);
        self.emit(Event::EnvelopesSent {
            origin_tx_id: origin,
            hop: self.hops[hop].hop,
            from: from.clone(),
            to: to.clone(),
            count,
        });
        let arrive = tick + self.latency(from, to);
        for envelope in envelopes {
            self.schedule(
                arrive,
                Pending::Deliver {
                    from: from.clone(),
                    to: to.clone(),
                    envelope: Box::new(envelope),
                },
            );
        }
        self.schedule(tick + self.scenario.timeout, Pending::Expire { hop });
    }

    fn origin_chain_of(&self, relay: &Transaction) -> ChainId {
        match Payload::of(relay) {
            Ok(Payload::Interchain(Notice::Relay { origin_chain, .. })) => origin_chain,
            _ => relay.source_chain.clone(),
        }
    }

    fn deliver(&mut self, from: ChainId, to: ChainId, envelope: TranslatedEnvelope) {
        let origin = envelope.origin_tx_id.clone();
        let Some(&hop) = self.hop_index.get(&(from.clone(), to.clone(), origin.clone())) else {
            return self.contract_error(&to, format!("envelope for unrouted {origin}"));
        };
        let set = self
            .world
            .sets
            .iter()
            .find(|s| s.links(&from, &to))
            .expect("hop was routed over this set");
        let ledger = self.world.ledgers.entry((from.clone(), to.clone())).or_default();
        let outcome = match ledger.submit(envelope, set) {
            Ok(o) => o,
            Err(e) => return self.contract_error(&to, e),
        };
        if !outcome.decided_now || self.hops[hop].status != HopStatus::Pending {
            return;
        }
        let body = ledger.entry(&origin).and_then(|e| e.validated_body.clone());
        let status = match outcome.status {
            VerificationStatus::Validated => {
                self.summary.hops_validated += 1;
                HopStatus::Validated
            }
            _ => {
                self.summary.hops_rejected += 1;
                HopStatus::Rejected
            }
        };
        let h = &mut self.hops[hop];
        h.status = status;
        h.decided_tick = Some(self.tick);
        h.body_matches_origin = body.as_ref().map(|b| b == &self.honest_bodies[hop]);
        let event = Event::HopDecided {
            origin_tx_id: origin.clone(),
            hop: h.hop,
            from: from.clone(),
            to: to.clone(),
            status,
            duration: h.duration(),
        };
        self.emit(event);
        if let Some(body) = body {
            self.accept(&to, &from, origin, body);
        }
    }

    /// Executes a validated translation at the receiving contract.
    fn accept(&mut self, at: &ChainId, from: &ChainId, origin: TxId, body: Vec<u8>) {
        match BridgeFormat::decode(&body) {
            None => self.contract_error(at, format!("validated body for {origin} does not decode")),
            Some(BridgeFormat::StageHash {
                case_number,
                chain,
                stage,
                tx_digest,
            }) => {
                let Some(bridge) = self.world.bridge.as_mut().filter(|_| at.is_bridge()) else {
                    return self.contract_error(at, "stage hash sent to an organization chain");
                };
                match bridge
                    .registry
                    .record_stage_hash(&case_number, &chain, stage, tx_digest)
                {
                    Ok(r) => {
                        let stage_leaf = r.stage_leaf;
                        self.emit(Event::StageHashRecorded {
                            case_number,
                            chain,
                            stage,
                            stage_leaf,
                        });
                    }
                    Err(e) => self.contract_error(at, e),
                }
                let record = self.record_tx(at, from, &origin, &body, vec![]);
                self.submit_or_log(at, record);
            }
            Some(BridgeFormat::Transaction(tx)) => {
                if !matches!(tx.verify_signature(), Ok(true)) {
                    return self.contract_error(at, format!("origin signature of {origin} does not verify"));
                }
                let payload = match Payload::of(&tx) {
                    Ok(p) => p,
                    Err(e) => return self.contract_error(at, e),
                };
                if at.is_bridge() {
                    self.bridge_execute(from, origin, body, tx, payload);
                } else {
                    self.org_execute(at, from, origin, body, tx, payload);
                }
            }
        }
    }

    /// Bridge record of an accepted translation; forwarded when it has
    /// destinations.
    fn record_tx(&self, at: &ChainId, from: &ChainId, origin: &TxId, body: &[u8], dests: Vec<ChainId>) -> Transaction {
        let key = match &self.world.bridge {
            Some(b) if at.is_bridge() => &b.contract_key,
            _ => self.world.orgs[at].contract_key(),
        };
        let notice = if dests.is_empty() {
            Notice::Received {
                origin_tx_id: origin.clone(),
                origin_chain: from.clone(),
                canonical_body: body.to_vec(),
            }
        } else {
            Notice::Relay {
                origin_tx_id: origin.clone(),
                origin_chain: from.clone(),
                canonical_body: body.to_vec(),
            }
        };
        Payload::Interchain(notice).into_transaction(key, at.clone(), dests)
    }

    fn bridge_notice(&mut self, notice: Notice, dests: Vec<ChainId>) {
        let bridge = self.world.bridge.as_ref().expect("bridge design");
        let tx = Payload::Interchain(notice).into_transaction(&bridge.contract_key, ChainId::bridge(), dests);
        self.submit_or_log(&ChainId::bridge(), tx);
    }

    fn reg(&mut self) -> &mut Registry {
        &mut self.world.bridge.as_mut().expect("bridge design").registry
    }

    fn bridge_execute(&mut self, from: &ChainId, origin: TxId, body: Vec<u8>, tx: Transaction, payload: Payload) {
        let bridge_id = ChainId::bridge();
        let src = tx.source_chain.clone();
        let mut relay_to = Vec::new();
        match payload {
            Payload::CaseCreate { .. } => match self.reg().register_case(&tx) {
                Ok((case, dests)) => {
                    relay_to = dests.clone();
                    self.emit(Event::CaseRegistered {
                        case_number: case.case_number,
                        source: src,
                        destinations: dests,
                    });
                }
                Err(e) => self.contract_error(&bridge_id, e),
            },
            Payload::AccessControl { case_number, policy } => match self.reg().store_policy(&case_number, &src, policy)
            {
                Ok(digest) => {
                    relay_to = self
                        .reg()
                        .case(&case_number)
                        .map(|c| c.destination_chains.clone())
                        .unwrap_or_default();
                    self.emit(Event::PolicyStored {
                        chain: bridge_id.clone(),
                        case_number,
                        digest,
                    });
                }
                Err(e) => self.contract_error(&bridge_id, e),
            },
            Payload::QueryNodeAssign {
                case_number,
                query_nodes,
            } => match self
                .reg()
                .assign_query_nodes(&case_number, &src, query_nodes)
                .map(|c| c.query_nodes.len())
            {
                Ok(count) => {
                    self.emit(Event::QueryNodesAssigned { case_number, count });
                }
                Err(e) => self.contract_error(&bridge_id, e),
            },
            Payload::StageProposal {
                case_number,
                stage,
                attempt,
            } => {
                let reg = self.reg();
                let opened = reg
                    .open_stage_proposal(&case_number, &src, stage, attempt)
                    .and_then(|()| reg.process_stage_vote(&case_number, &src, stage, Vote::Approve));
                match opened {
                    Ok(outcome) => {
                        relay_to = self
                            .reg()
                            .case(&case_number)
                            .map(|c| c.participants().into_iter().filter(|p| p != &src).collect())
                            .unwrap_or_default();
                        self.emit(Event::StageVote {
                            chain: src,
                            case_number: case_number.clone(),
                            stage,
                            attempt,
                            approve: true,
                        });
                        self.close_round(&case_number, stage, attempt, outcome);
                    }
                    Err(e) => self.contract_error(&bridge_id, e),
                }
            }
            Payload::StageVote {
                case_number,
                stage,
                attempt,
                vote,
            } => {
                let approve = vote.is_approve();
                match self.reg().process_stage_vote(&case_number, &src, stage, vote) {
                    Ok(outcome) => {
                        self.emit(Event::StageVote {
                            chain: src,
                            case_number: case_number.clone(),
                            stage,
                            attempt,
                            approve,
                        });
                        self.close_round(&case_number, stage, attempt, outcome);
                    }
                    Err(e) => self.contract_error(&bridge_id, e),
                }
            }
            Payload::ProvenanceRequest { case_number } => {
                let requester = tx.sender_public_key;
                match self.reg().authorize_provenance(&case_number, &requester) {
                    Ok(()) => {
                        let bridge = self.world.bridge.as_mut().expect("bridge design");
                        let id = bridge.next_request;
                        bridge.next_request += 1;
                        let expected = bridge
                            .registry
                            .case(&case_number)
                            .map(|c| c.participants())
                            .unwrap_or_default();
                        bridge.requests.insert(
                            id,
                            PendingRequest {
                                case_number: case_number.clone(),
                                requester,
                                requester_chain: src,
                                expected: expected.clone(),
                                sections: BTreeMap::new(),
                            },
                        );
                        self.bridge_notice(
                            Notice::ProvenanceFetch {
                                request_id: id,
                                case_number,
                                requester,
                            },
                            expected,
                        );
                    }
                    Err(e) => {
                        self.emit(Event::ProvenanceDenied {
                            case_number: case_number.clone(),
                            requester,
                        });
                        self.bridge_notice(
                            Notice::ProvenanceDenied {
                                case_number,
                                requester,
                                reason: e.to_string(),
                            },
                            vec![src],
                        );
                    }
                }
            }
            Payload::Interchain(Notice::Message(_)) => {
                relay_to = tx
                    .destination_chains
                    .iter()
                    .filter(|d| !d.is_bridge() && **d != src)
                    .cloned()
                    .collect();
            }
            Payload::Interchain(Notice::ProvenanceSection { request_id, section }) => {
                self.collect_section(request_id, &src, section);
            }
            other => self.contract_error(&bridge_id, format!("bridge cannot execute {:?}", other.kind())),
        }
        let record = self.record_tx(&bridge_id, from, &origin, &body, relay_to);
        self.submit_or_log(&bridge_id, record);
    }

    fn close_round(&mut self, case_number: &CaseNumber, stage: StageIndex, attempt: u32, outcome: StageOutcome) {
        let participants = self
            .world
            .registry()
            .and_then(|r| r.case(case_number))
            .map(|c| c.participants())
            .unwrap_or_default();
        let (advanced, reasons) = match outcome {
            StageOutcome::AwaitingVotes => return,
            StageOutcome::Advanced => (true, Vec::new()),
            StageOutcome::Blocked(r) => (false, r),
        };
        self.emit(Event::StageRoundClosed {
            case_number: case_number.clone(),
            stage,
            attempt,
            advanced,
            reasons: reasons.clone(),
        });
        let notice = if advanced {
            Notice::StageAdvanced {
                case_number: case_number.clone(),
                stage,
            }
        } else {
            Notice::StageBlocked {
                case_number: case_number.clone(),
                stage,
                attempt,
                reasons,
            }
        };
        self.bridge_notice(notice, participants);
    }

    fn collect_section(&mut self, request_id: u64, src: &ChainId, section: SealedEnvelope<ChainSection>) {
        let bridge_id = ChainId::bridge();
        let bridge = self.world.bridge.as_mut().expect("bridge design");
        let Some(section) = section.open(&bridge.contract_key.public_key()) else {
            return self.contract_error(&bridge_id, "section sealed to another key");
        };
        let Some(req) = bridge.requests.get_mut(&request_id) else {
            return self.contract_error(&bridge_id, format!("no open provenance request {request_id}"));
        };
        if &section.chain_id != src || !req.expected.contains(src) {
            return self.contract_error(&bridge_id, format!("unexpected section from {src}"));
        }
        req.sections.insert(src.clone(), section);
        if req.sections.len() < req.expected.len() {
            return;
        }
        let req = bridge.requests.remove(&request_id).expect("present");
        match assemble_bundle(&bridge.registry, &req.case_number, req.requester, req.sections) {
            Ok(bundle) => self.bridge_notice(
                Notice::ProvenanceDelivery {
                    request_id,
                    bundle: SealedEnvelope::seal(req.requester, bundle),
                },
                vec![req.requester_chain],
            ),
            Err(e) => self.contract_error(&bridge_id, e),
        }
    }

    fn org_execute(
        &mut self,
        at: &ChainId,
        from: &ChainId,
        origin: TxId,
        body: Vec<u8>,
        tx: Transaction,
        payload: Payload,
    ) {
        let record = self.record_tx(at, from, &origin, &body, vec![]);
        self.submit_or_log(at, record);
        let contract_key = self.world.orgs[at].contract_key().clone();
        let org = self.world.orgs.get_mut(at).expect("known chain");
        org.record_received(ReceivedRecord {
            origin_tx_id: origin.clone(),
            origin_chain: tx.source_chain.clone(),
            canonical_body: body.clone(),
        });
        match payload {
            Payload::CaseCreate {
                case_number,
                destinations,
            } => {
                if org.install_case(
                    case_number.clone(),
                    tx.source_chain.clone(),
                    destinations,
                    tx.sender_public_key,
                ) {
                    self.emit(Event::CaseInstalled {
                        chain: at.clone(),
                        case_number,
                    });
                }
            }
            Payload::AccessControl { case_number, policy } => match org.store_policy(&case_number, policy) {
                Ok(digest) => self.emit(Event::PolicyStored {
                    chain: at.clone(),
                    case_number,
                    digest,
                }),
                Err(e) => self.contract_error(at, e),
            },
            Payload::StageProposal {
                case_number,
                stage,
                attempt,
            } => {
                let vote = self
                    .vote_scripts
                    .get(&(case_number.clone(), stage, attempt))
                    .and_then(|s| s.get(at))
                    .map_or(Vote::Approve, |r| Vote::Reject(r.clone()));
                let vote_tx = Payload::StageVote {
                    case_number,
                    stage,
                    attempt,
                    vote,
                }
                .into_transaction(&contract_key, at.clone(), vec![ChainId::bridge()]);
                self.submit_or_log(at, vote_tx);
            }
            Payload::Interchain(Notice::StageAdvanced { case_number, stage }) => {
                match org.set_stage(&case_number, stage) {
                    Ok(()) => self.emit(Event::StageAdvanced {
                        chain: at.clone(),
                        case_number,
                        stage,
                    }),
                    Err(e) => self.contract_error(at, e),
                }
            }
            Payload::Interchain(Notice::Message(bytes)) => self.emit(Event::MessageReceived {
                chain: at.clone(),
                origin_tx_id: origin,
                bytes: bytes.len(),
            }),
            Payload::Interchain(Notice::ProvenanceFetch {
                request_id,
                case_number,
                ..
            }) => {
                let section = org.offchain().section(&case_number);
                let bridge_pk = self
                    .world
                    .bridge
                    .as_ref()
                    .expect("fetch only comes from the bridge")
                    .contract_key
                    .public_key();
                let reply = Payload::Interchain(Notice::ProvenanceSection {
                    request_id,
                    section: SealedEnvelope::seal(bridge_pk, section),
                })
                .into_transaction(&contract_key, at.clone(), vec![ChainId::bridge()]);
                self.submit_or_log(at, reply);
            }
            Payload::Interchain(Notice::ProvenanceDelivery { bundle, .. }) => {
                let requester = bundle.recipient;
                if org.user(&requester).is_none() {
                    return self.contract_error(at, "provenance bundle for a user of another chain");
                }
                let Some(bundle) = bundle.open(&requester) else {
                    return self.contract_error(at, "bundle does not open");
                };
                match verify_and_localize(&bundle) {
                    Ok(report) => {
                        self.emit(Event::ProvenanceReport {
                            chain: at.clone(),
                            case_number: report.case_number.clone(),
                            requester,
                            intact: report.all_intact(),
                            tampered: report.tampered_cells(),
                        });
                        self.reports.push(ProvenanceOutcome {
                            tick: self.tick,
                            chain: at.clone(),
                            requester,
                            report,
                        });
                    }
                    Err(e) => self.contract_error(at, e),
                }
            }
            Payload::Interchain(Notice::StageBlocked { .. } | Notice::ProvenanceDenied { .. }) => {}
            other => self.contract_error(at, format!("{at} cannot execute {:?}", other.kind())),
        }
    }
}
