//! Bridge-side case registry.
//!
//! Holds the case contracts, per-(chain, stage) transaction hash records, the
//! query-node sets, and runs stage-progress voting. A proposal round only
//! advances the case when every participating chain approves.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::case::{CaseNumber, StageIndex, Vote};
use crate::chain::{ChainId, Transaction};
use crate::crypto::{Digest, PublicKey};
use crate::lifecycle::AccessPolicy;
use crate::payload::Payload;
use crate::provenance::{case_chain_root, stage_leaf, BridgeReference};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("case {0} is already registered")]
    DuplicateCase(CaseNumber),
    #[error("case {0} has no destination chains")]
    NoDestinations(CaseNumber),
    #[error("case {0} is not registered")]
    UnknownCase(CaseNumber),
    #[error("chain {chain} does not participate in case {case}")]
    NonParticipant { case: CaseNumber, chain: ChainId },
    #[error("stage {stage} is ahead of the case's current stage {current}")]
    FutureStage { stage: StageIndex, current: StageIndex },
    #[error("stage {stage} is not open for voting (current stage {current})")]
    StaleStage { stage: StageIndex, current: StageIndex },
    #[error("a proposal for stage {0} is still collecting votes")]
    ProposalInProgress(StageIndex),
    #[error("{0} already voted in this round")]
    DoubleVote(ChainId),
    #[error("only the source chain {0} may set the access policy")]
    NotCaseSource(ChainId),
    #[error("{0} is not a query node for this case")]
    NotQueryNode(PublicKey),
    #[error("transaction is not a case creation request")]
    NotCaseCreate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum StageOutcome {
    Advanced,
    AwaitingVotes,
    Blocked(Vec<(ChainId, String)>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProposalRound {
    pub stage: StageIndex,
    pub attempt: u32,
    pub proposer: ChainId,
    pub votes: BTreeMap<ChainId, Vote>,
    pub outcome: Option<StageOutcome>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CaseContract {
    pub case_number: CaseNumber,
    pub source_chain: ChainId,
    pub destination_chains: Vec<ChainId>,
    pub creator_public_key: PublicKey,
    pub current_stage: StageIndex,
    pub query_nodes: BTreeSet<PublicKey>,
    /// Votes of the open round, by stage.
    pub stage_votes: BTreeMap<StageIndex, BTreeMap<ChainId, Vote>>,
    pub policy_digest: Option<Digest>,
    #[serde(skip)]
    pub policy: Option<AccessPolicy>,
    pub rounds: Vec<ProposalRound>,
}

impl CaseContract {
    pub fn participants(&self) -> Vec<ChainId> {
        let mut all = vec![self.source_chain.clone()];
        all.extend(self.destination_chains.iter().cloned());
        all
    }

    pub fn participates(&self, chain: &ChainId) -> bool {
        &self.source_chain == chain || self.destination_chains.contains(chain)
    }

    fn open_round(&mut self) -> Option<&mut ProposalRound> {
        self.rounds.last_mut().filter(|r| r.outcome.is_none())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StageHashRecord {
    pub case_number: CaseNumber,
    pub chain_id: ChainId,
    pub stage: StageIndex,
    pub stage_leaf: Digest,
    pub tx_hashes: Vec<Digest>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProvenanceAccessRecord {
    pub case_number: CaseNumber,
    pub requester: PublicKey,
    pub granted: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Registry {
    stage_count: u32,
    cases: BTreeMap<CaseNumber, CaseContract>,
    stage_hashes: BTreeMap<(CaseNumber, ChainId, StageIndex), StageHashRecord>,
    provenance_log: Vec<ProvenanceAccessRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RegistrySnapshot {
    pub stage_count: u32,
    pub cases: Vec<CaseContract>,
    pub stage_hashes: Vec<StageHashRecord>,
    pub bridge_roots: Vec<BridgeReference>,
    pub provenance_requests: Vec<ProvenanceAccessRecord>,
}

impl Registry {
    /// `stage_count` must be at least 1.
    pub fn new(stage_count: u32) -> Self {
        assert!(stage_count > 0, "a case has at least one stage");
        Registry {
            stage_count,
            ..Default::default()
        }
    }

    pub fn stage_count(&self) -> u32 {
        self.stage_count
    }

    pub fn case(&self, case_number: &CaseNumber) -> Option<&CaseContract> {
        self.cases.get(case_number)
    }

    pub fn cases(&self) -> impl Iterator<Item = &CaseContract> {
        self.cases.values()
    }

    fn case_mut(&mut self, case_number: &CaseNumber) -> Result<&mut CaseContract, RegistryError> {
        self.cases
            .get_mut(case_number)
            .ok_or_else(|| RegistryError::UnknownCase(case_number.clone()))
    }

    fn participant_case_mut(
        &mut self,
        case_number: &CaseNumber,
        chain: &ChainId,
    ) -> Result<&mut CaseContract, RegistryError> {
        let case = self.case_mut(case_number)?;
        if !case.participates(chain) {
            return Err(RegistryError::NonParticipant {
                case: case_number.clone(),
                chain: chain.clone(),
            });
        }
        Ok(case)
    }

    /// Creates the case contract from a validated `CaseCreate` and returns it
    /// with the destination chains that must be notified.
    pub fn register_case(&mut self, tx: &Transaction) -> Result<(CaseContract, Vec<ChainId>), RegistryError> {
        let Ok(Payload::CaseCreate {
            case_number,
            destinations,
        }) = Payload::of(tx)
        else {
            return Err(RegistryError::NotCaseCreate);
        };
        if self.cases.contains_key(&case_number) {
            return Err(RegistryError::DuplicateCase(case_number));
        }
        let destinations: Vec<ChainId> = destinations
            .into_iter()
            .filter(|d| !d.is_bridge() && d != &tx.source_chain)
            .collect();
        if destinations.is_empty() {
            return Err(RegistryError::NoDestinations(case_number));
        }
        let contract = CaseContract {
            case_number: case_number.clone(),
            source_chain: tx.source_chain.clone(),
            destination_chains: destinations.clone(),
            creator_public_key: tx.sender_public_key,
            current_stage: 0,
            query_nodes: BTreeSet::new(),
            stage_votes: BTreeMap::new(),
            policy_digest: None,
            policy: None,
            rounds: Vec::new(),
        };
        self.cases.insert(case_number, contract.clone());
        Ok((contract, destinations))
    }

    pub fn store_policy(
        &mut self,
        case_number: &CaseNumber,
        chain: &ChainId,
        policy: AccessPolicy,
    ) -> Result<Digest, RegistryError> {
        let case = self.case_mut(case_number)?;
        if &case.source_chain != chain {
            return Err(RegistryError::NotCaseSource(case.source_chain.clone()));
        }
        let digest = policy.digest();
        case.policy_digest = Some(digest);
        case.policy = Some(policy);
        Ok(digest)
    }

    /// Appends a transaction hash in arrival order and recomputes the leaf.
    pub fn record_stage_hash(
        &mut self,
        case_number: &CaseNumber,
        chain: &ChainId,
        stage: StageIndex,
        tx_hash: Digest,
    ) -> Result<&StageHashRecord, RegistryError> {
        let case = self.participant_case_mut(case_number, chain)?;
        if stage > case.current_stage {
            return Err(RegistryError::FutureStage {
                stage,
                current: case.current_stage,
            });
        }
        let record = self
            .stage_hashes
            .entry((case_number.clone(), chain.clone(), stage))
            .or_insert_with(|| StageHashRecord {
                case_number: case_number.clone(),
                chain_id: chain.clone(),
                stage,
                stage_leaf: stage_leaf(&[]),
                tx_hashes: Vec::new(),
            });
        record.tx_hashes.push(tx_hash);
        record.stage_leaf = stage_leaf(&record.tx_hashes);
        Ok(record)
    }

    pub fn stage_hash_record(
        &self,
        case_number: &CaseNumber,
        chain: &ChainId,
        stage: StageIndex,
    ) -> Option<&StageHashRecord> {
        self.stage_hashes.get(&(case_number.clone(), chain.clone(), stage))
    }

    pub fn assign_query_nodes(
        &mut self,
        case_number: &CaseNumber,
        chain: &ChainId,
        keys: impl IntoIterator<Item = PublicKey>,
    ) -> Result<&CaseContract, RegistryError> {
        let case = self.participant_case_mut(case_number, chain)?;
        case.query_nodes.extend(keys);
        Ok(case)
    }

    /// Opens a voting round for `stage`, which must be the stage right after
    /// the current one. No vote is cast here.
    pub fn open_stage_proposal(
        &mut self,
        case_number: &CaseNumber,
        proposer: &ChainId,
        stage: StageIndex,
        attempt: u32,
    ) -> Result<(), RegistryError> {
        let stage_count = self.stage_count;
        let case = self.participant_case_mut(case_number, proposer)?;
        if stage != case.current_stage + 1 || stage >= stage_count {
            return Err(RegistryError::StaleStage {
                stage,
                current: case.current_stage,
            });
        }
        if let Some(open) = case.open_round() {
            return Err(RegistryError::ProposalInProgress(open.stage));
        }
        case.rounds.push(ProposalRound {
            stage,
            attempt,
            proposer: proposer.clone(),
            votes: BTreeMap::new(),
            outcome: None,
        });
        case.stage_votes.insert(stage, BTreeMap::new());
        Ok(())
    }

    /// Records one chain's vote. The round resolves once every participant
    /// has voted: `Advanced` only if all approved, otherwise `Blocked` with
    /// every rejection reason.
    pub fn process_stage_vote(
        &mut self,
        case_number: &CaseNumber,
        chain: &ChainId,
        stage: StageIndex,
        vote: Vote,
    ) -> Result<StageOutcome, RegistryError> {
        let case = self.participant_case_mut(case_number, chain)?;
        let current = case.current_stage;
        let participants = case.participants();
        let round = match case.open_round() {
            Some(r) if r.stage == stage => r,
            _ => return Err(RegistryError::StaleStage { stage, current }),
        };
        if round.votes.contains_key(chain) {
            return Err(RegistryError::DoubleVote(chain.clone()));
        }
        round.votes.insert(chain.clone(), vote);
        let votes = round.votes.clone();
        case.stage_votes.insert(stage, votes.clone());

        if participants.iter().any(|p| !votes.contains_key(p)) {
            return Ok(StageOutcome::AwaitingVotes);
        }
        let reasons: Vec<(ChainId, String)> = participants
            .iter()
            .filter_map(|p| match &votes[p] {
                Vote::Approve => None,
                Vote::Reject(reason) => Some((p.clone(), reason.clone())),
            })
            .collect();
        let outcome = if reasons.is_empty() {
            case.current_stage = stage;
            StageOutcome::Advanced
        } else {
            StageOutcome::Blocked(reasons)
        };
        case.open_round().expect("round still open").outcome = Some(outcome.clone());
        Ok(outcome)
    }

    /// Checks that `requester` may pull provenance for the case and logs the
    /// decision either way.
    pub fn authorize_provenance(
        &mut self,
        case_number: &CaseNumber,
        requester: &PublicKey,
    ) -> Result<(), RegistryError> {
        let granted = self
            .case(case_number)
            .ok_or_else(|| RegistryError::UnknownCase(case_number.clone()))?
            .query_nodes
            .contains(requester);
        self.provenance_log.push(ProvenanceAccessRecord {
            case_number: case_number.clone(),
            requester: *requester,
            granted,
        });
        if granted {
            Ok(())
        } else {
            Err(RegistryError::NotQueryNode(*requester))
        }
    }

    pub fn provenance_log(&self) -> &[ProvenanceAccessRecord] {
        &self.provenance_log
    }

    /// Stage leaves (empty stages included) and case root held for `chain`.
    pub fn bridge_reference(
        &self,
        case_number: &CaseNumber,
        chain: &ChainId,
    ) -> Result<BridgeReference, RegistryError> {
        let case = self
            .case(case_number)
            .ok_or_else(|| RegistryError::UnknownCase(case_number.clone()))?;
        if !case.participates(chain) {
            return Err(RegistryError::NonParticipant {
                case: case_number.clone(),
                chain: chain.clone(),
            });
        }
        let stage_leaves: Vec<Digest> = (0..self.stage_count)
            .map(|s| {
                self.stage_hash_record(case_number, chain, s)
                    .map_or_else(|| stage_leaf(&[]), |r| r.stage_leaf)
            })
            .collect();
        let root = case_chain_root(&stage_leaves, self.stage_count).expect("one leaf per configured stage");
        Ok(BridgeReference {
            chain_id: chain.clone(),
            stage_leaves,
            root,
        })
    }

    pub fn snapshot(&self) -> RegistrySnapshot {
        let mut bridge_roots = Vec::new();
        for case in self.cases.values() {
            for chain in case.participants() {
                if let Ok(r) = self.bridge_reference(&case.case_number, &chain) {
                    bridge_roots.push(r);
                }
            }
        }
        RegistrySnapshot {
            stage_count: self.stage_count,
            cases: self.cases.values().cloned().collect(),
            stage_hashes: self.stage_hashes.values().cloned().collect(),
            bridge_roots,
            provenance_requests: self.provenance_log.clone(),
        }
    }
}
