//! Event-log records.

use serde::Serialize;

use crate::case::{CaseNumber, StageIndex};
use crate::chain::{ChainId, PayloadKind, TxId};
use crate::crypto::{Digest, PublicKey};
use crate::topology::Design;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HopStatus {
    Pending,
    Validated,
    Rejected,
    Expired,
}

/// One verification hop of a routed transaction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HopRecord {
    pub origin_tx_id: TxId,
    pub origin_chain: ChainId,
    pub kind: PayloadKind,
    pub hop: u32,
    pub from: ChainId,
    pub to: ChainId,
    /// Tick at which the origin transaction reached its mutual nodes.
    pub start_tick: u64,
    pub sent_tick: u64,
    pub decided_tick: Option<u64>,
    pub envelopes: u32,
    pub status: HopStatus,
    pub body_matches_origin: Option<bool>,
}

impl HopRecord {
    pub fn duration(&self) -> Option<u64> {
        self.decided_tick.map(|t| t - self.start_tick)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Summary {
    pub final_tick: u64,
    pub completed: bool,
    pub blocks_mined: u64,
    pub envelopes_sent: u64,
    pub hops_started: u64,
    pub hops_validated: u64,
    pub hops_rejected: u64,
    pub hops_expired: u64,
    pub workload_errors: u64,
    pub contract_errors: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    RunStarted {
        design: Design,
        seed: u64,
        chains: Vec<ChainId>,
    },
    Workload {
        index: usize,
        action: &'static str,
        chain: ChainId,
        tx_id: Option<TxId>,
        error: Option<String>,
    },
    Fault {
        index: usize,
        description: String,
        error: Option<String>,
    },
    BlockMined {
        chain: ChainId,
        height: u64,
        transactions: usize,
        header_digest: Digest,
    },
    EnvelopesSent {
        origin_tx_id: TxId,
        hop: u32,
        from: ChainId,
        to: ChainId,
        count: u32,
    },
    HopDecided {
        origin_tx_id: TxId,
        hop: u32,
        from: ChainId,
        to: ChainId,
        status: HopStatus,
        duration: Option<u64>,
    },
    CaseRegistered {
        case_number: CaseNumber,
        source: ChainId,
        destinations: Vec<ChainId>,
    },
    CaseInstalled {
        chain: ChainId,
        case_number: CaseNumber,
    },
    PolicyStored {
        chain: ChainId,
        case_number: CaseNumber,
        digest: Digest,
    },
    QueryNodesAssigned {
        case_number: CaseNumber,
        count: usize,
    },
    StageHashRecorded {
        case_number: CaseNumber,
        chain: ChainId,
        stage: StageIndex,
        stage_leaf: Digest,
    },
    StageVote {
        chain: ChainId,
        case_number: CaseNumber,
        stage: StageIndex,
        attempt: u32,
        approve: bool,
    },
    StageRoundClosed {
        case_number: CaseNumber,
        stage: StageIndex,
        attempt: u32,
        advanced: bool,
        reasons: Vec<(ChainId, String)>,
    },
    StageAdvanced {
        chain: ChainId,
        case_number: CaseNumber,
        stage: StageIndex,
    },
    MessageReceived {
        chain: ChainId,
        origin_tx_id: TxId,
        bytes: usize,
    },
    ProvenanceDenied {
        case_number: CaseNumber,
        requester: PublicKey,
    },
    ProvenanceReport {
        chain: ChainId,
        case_number: CaseNumber,
        requester: PublicKey,
        intact: bool,
        tampered: Vec<(ChainId, StageIndex)>,
    },
    ContractError {
        chain: ChainId,
        error: String,
    },
    RunFinished {
        summary: Summary,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LogRecord {
    pub tick: u64,
    pub seq: u64,
    #[serde(flatten)]
    pub event: Event,
}
