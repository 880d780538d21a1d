//! Per-case provenance: off-chain transaction store, stage leaves, case roots,
//! bundle extraction and tamper localization.
//!
//! A stage leaf is `H(H(d_1 || d_2 || ... || d_n))` over the digests of the
//! stage's transactions in mining order. A chain's case root is the Merkle
//! root over its stage leaves. The bridge keeps both; a query node recomputes
//! them from the delivered transactions and compares root first, then stage by
//! stage.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::case::{stage_name, CaseNumber, StageIndex};
use crate::chain::{ChainId, Transaction};
use crate::crypto::{self, Digest, PublicKey};
use crate::registry::{Registry, RegistryError};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProvenanceError {
    #[error("expected {expected} stage leaves, got {found}")]
    StageCountMismatch { expected: u32, found: usize },
    #[error("case {0} is not registered")]
    UnknownCase(CaseNumber),
    #[error("{0} is not a query node for this case")]
    NotQueryNode(PublicKey),
    #[error("malformed bundle: {0}")]
    MalformedBundle(String),
    #[error("no off-chain record at {chain} case {case} stage {stage} index {index}")]
    TamperTargetMissing {
        chain: ChainId,
        case: CaseNumber,
        stage: StageIndex,
        index: usize,
    },
}

impl From<RegistryError> for ProvenanceError {
    fn from(e: RegistryError) -> Self {
        match e {
            RegistryError::UnknownCase(c) => ProvenanceError::UnknownCase(c),
            RegistryError::NotQueryNode(k) => ProvenanceError::NotQueryNode(k),
            other => ProvenanceError::MalformedBundle(other.to_string()),
        }
    }
}

pub fn stage_leaf(tx_hashes: &[Digest]) -> Digest {
    let inner = crypto::hash_concat(tx_hashes.iter());
    crypto::hash(inner.as_ref())
}

pub fn case_chain_root(stage_leaves: &[Digest], stage_count: u32) -> Result<Digest, ProvenanceError> {
    if stage_leaves.len() != stage_count as usize {
        return Err(ProvenanceError::StageCountMismatch {
            expected: stage_count,
            found: stage_leaves.len(),
        });
    }
    crypto::merkle_root(stage_leaves).map_err(|_| ProvenanceError::StageCountMismatch {
        expected: stage_count,
        found: 0,
    })
}

fn leaves_of(stages: &[Vec<Transaction>]) -> Vec<Digest> {
    stages
        .iter()
        .map(|txs| stage_leaf(&txs.iter().map(Transaction::digest).collect::<Vec<_>>()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TamperMutation {
    /// XOR one byte of the body (offset taken modulo body length).
    FlipByte {
        offset: usize,
    },
    ReplaceBody(String),
}

/// Full case transactions kept off-chain by one organization, per stage, in
/// mining order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OffchainCaseStore {
    chain_id: ChainId,
    stage_count: u32,
    cases: BTreeMap<CaseNumber, Vec<Vec<Transaction>>>,
}

impl OffchainCaseStore {
    pub fn new(chain_id: ChainId, stage_count: u32) -> Self {
        OffchainCaseStore {
            chain_id,
            stage_count,
            cases: BTreeMap::new(),
        }
    }

    pub fn chain_id(&self) -> &ChainId {
        &self.chain_id
    }

    pub fn append(&mut self, case_number: &CaseNumber, stage: StageIndex, tx: Transaction) {
        let stages = self
            .cases
            .entry(case_number.clone())
            .or_insert_with(|| vec![Vec::new(); self.stage_count as usize]);
        if let Some(list) = stages.get_mut(stage as usize) {
            list.push(tx);
        }
    }

    pub fn stage_transactions(&self, case_number: &CaseNumber, stage: StageIndex) -> &[Transaction] {
        self.cases
            .get(case_number)
            .and_then(|s| s.get(stage as usize))
            .map_or(&[], Vec::as_slice)
    }

    pub fn tamper(
        &mut self,
        case_number: &CaseNumber,
        stage: StageIndex,
        index: usize,
        mutation: &TamperMutation,
    ) -> Result<(), ProvenanceError> {
        let missing = || ProvenanceError::TamperTargetMissing {
            chain: self.chain_id.clone(),
            case: case_number.clone(),
            stage,
            index,
        };
        let tx = self
            .cases
            .get_mut(case_number)
            .and_then(|s| s.get_mut(stage as usize))
            .and_then(|l| l.get_mut(index))
            .ok_or_else(missing)?;
        match mutation {
            TamperMutation::FlipByte { offset } => {
                if tx.body.is_empty() {
                    tx.body.push(0xff);
                } else {
                    let at = offset % tx.body.len();
                    tx.body[at] ^= 0xff;
                }
            }
            TamperMutation::ReplaceBody(text) => tx.body = text.as_bytes().to_vec(),
        }
        Ok(())
    }

    /// This chain's section of a provenance bundle.
    pub fn section(&self, case_number: &CaseNumber) -> ChainSection {
        let stages = self
            .cases
            .get(case_number)
            .cloned()
            .unwrap_or_else(|| vec![Vec::new(); self.stage_count as usize]);
        let stage_leaves = leaves_of(&stages);
        let root = case_chain_root(&stage_leaves, self.stage_count).expect("one leaf per stage");
        ChainSection {
            chain_id: self.chain_id.clone(),
            stages,
            stage_leaves,
            root,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainSection {
    pub chain_id: ChainId,
    pub stages: Vec<Vec<Transaction>>,
    pub stage_leaves: Vec<Digest>,
    pub root: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BridgeReference {
    pub chain_id: ChainId,
    pub stage_leaves: Vec<Digest>,
    pub root: Digest,
}

/// Plaintext payload tagged with the key of the only intended reader.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SealedEnvelope<T> {
    pub recipient: PublicKey,
    pub payload: T,
}

impl<T> SealedEnvelope<T> {
    pub fn seal(recipient: PublicKey, payload: T) -> Self {
        SealedEnvelope { recipient, payload }
    }

    pub fn open(self, reader: &PublicKey) -> Option<T> {
        (self.recipient == *reader).then_some(self.payload)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceBundle {
    pub case_number: CaseNumber,
    pub stage_count: u32,
    pub sections: BTreeMap<ChainId, ChainSection>,
    pub bridge: BTreeMap<ChainId, BridgeReference>,
    pub recipient: PublicKey,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChainVerdict {
    Intact,
    Tampered(BTreeSet<StageIndex>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TamperReport {
    pub case_number: CaseNumber,
    pub stage_count: u32,
    pub verdicts: BTreeMap<ChainId, ChainVerdict>,
}

impl TamperReport {
    pub fn all_intact(&self) -> bool {
        self.verdicts.values().all(|v| *v == ChainVerdict::Intact)
    }

    pub fn tampered_cells(&self) -> Vec<(ChainId, StageIndex)> {
        let mut out = Vec::new();
        for (chain, verdict) in &self.verdicts {
            if let ChainVerdict::Tampered(stages) = verdict {
                out.extend(stages.iter().map(|s| (chain.clone(), *s)));
            }
        }
        out
    }

    /// `chain,stage,verdict` rows covering every cell.
    pub fn cells_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["chain", "stage", "verdict"])
            .expect("in-memory csv write");
        for (chain, verdict) in &self.verdicts {
            for s in 0..self.stage_count {
                let cell = match verdict {
                    ChainVerdict::Tampered(set) if set.contains(&s) => "tampered",
                    _ => "intact",
                };
                w.write_record([chain.as_str(), &s.to_string(), cell])
                    .expect("in-memory csv write");
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv output is utf-8")
    }

    /// Stage x chain table, one row per stage.
    pub fn render_matrix(&self) -> String {
        let chains: Vec<&ChainId> = self.verdicts.keys().collect();
        let names: Vec<String> = (0..self.stage_count)
            .map(|s| format!("{s} {}", stage_name(s, self.stage_count)))
            .collect();
        let label_w = names.iter().map(String::len).max().unwrap_or(5).max(5);
        let col_w = chains.iter().map(|c| c.as_str().len()).max().unwrap_or(0).max(8);
        let mut out = String::new();
        let _ = write!(out, "{:label_w$}", "stage");
        for c in &chains {
            let _ = write!(out, "  {:>col_w$}", c.as_str());
        }
        out.push('\n');
        for (s, name) in names.iter().enumerate() {
            let _ = write!(out, "{name:label_w$}");
            for c in &chains {
                let cell = match &self.verdicts[*c] {
                    ChainVerdict::Tampered(set) if set.contains(&(s as StageIndex)) => "TAMPERED",
                    _ => "ok",
                };
                let _ = write!(out, "  {cell:>col_w$}");
            }
            out.push('\n');
        }
        out
    }
}

/// Consolidates per-chain sections with the bridge's reference leaves and
/// roots. Every participant of the case must have supplied a section.
pub fn assemble_bundle(
    registry: &Registry,
    case_number: &CaseNumber,
    recipient: PublicKey,
    sections: BTreeMap<ChainId, ChainSection>,
) -> Result<ProvenanceBundle, ProvenanceError> {
    let case = registry
        .case(case_number)
        .ok_or_else(|| ProvenanceError::UnknownCase(case_number.clone()))?;
    let mut bridge = BTreeMap::new();
    for chain in case.participants() {
        if !sections.contains_key(&chain) {
            return Err(ProvenanceError::MalformedBundle(format!("no section from {chain}")));
        }
        bridge.insert(chain.clone(), registry.bridge_reference(case_number, &chain)?);
    }
    Ok(ProvenanceBundle {
        case_number: case_number.clone(),
        stage_count: registry.stage_count(),
        sections,
        bridge,
        recipient,
    })
}

/// Authorizes `requester` against the case's query nodes, collects a
/// section from every participating chain's store and seals the bundle to
/// the requester. Denials are recorded in the registry's request log.
pub fn extract_provenance(
    registry: &mut Registry,
    stores: &BTreeMap<ChainId, &OffchainCaseStore>,
    case_number: &CaseNumber,
    requester: PublicKey,
) -> Result<SealedEnvelope<ProvenanceBundle>, ProvenanceError> {
    registry.authorize_provenance(case_number, &requester)?;
    let participants = registry.case(case_number).map(|c| c.participants()).unwrap_or_default();
    let mut sections = BTreeMap::new();
    for chain in participants {
        let store = stores
            .get(&chain)
            .ok_or_else(|| ProvenanceError::MalformedBundle(format!("no off-chain store for {chain}")))?;
        sections.insert(chain, store.section(case_number));
    }
    let bundle = assemble_bundle(registry, case_number, requester, sections)?;
    Ok(SealedEnvelope::seal(requester, bundle))
}

/// Recomputes every chain's stage leaves and root from the delivered
/// transactions and compares them with the bridge reference.
pub fn verify_and_localize(bundle: &ProvenanceBundle) -> Result<TamperReport, ProvenanceError> {
    let malformed = |m: String| ProvenanceError::MalformedBundle(m);
    if bundle.sections.len() != bundle.bridge.len() {
        return Err(malformed(format!(
            "{} sections but {} bridge references",
            bundle.sections.len(),
            bundle.bridge.len()
        )));
    }
    let mut verdicts = BTreeMap::new();
    for (chain, section) in &bundle.sections {
        let reference = bundle
            .bridge
            .get(chain)
            .ok_or_else(|| malformed(format!("missing bridge reference for {chain}")))?;
        if section.stages.len() != bundle.stage_count as usize {
            return Err(malformed(format!(
                "{chain} section has {} stages",
                section.stages.len()
            )));
        }
        if case_chain_root(&reference.stage_leaves, bundle.stage_count)? != reference.root {
            return Err(malformed(format!("bridge reference for {chain} is inconsistent")));
        }
        let local_leaves = leaves_of(&section.stages);
        let local_root = case_chain_root(&local_leaves, bundle.stage_count)?;
        let verdict = if local_root == reference.root {
            ChainVerdict::Intact
        } else {
            let stages = local_leaves
                .iter()
                .zip(&reference.stage_leaves)
                .enumerate()
                .filter(|(_, (local, bridge))| local != bridge)
                .map(|(i, _)| i as StageIndex)
                .collect();
            ChainVerdict::Tampered(stages)
        };
        verdicts.insert(chain.clone(), verdict);
    }
    Ok(TamperReport {
        case_number: bundle.case_number.clone(),
        stage_count: bundle.stage_count,
        verdicts,
    })
}
