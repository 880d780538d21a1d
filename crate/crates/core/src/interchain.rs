//! Inter-chain communication: mutual-node translation and strict-majority
//! verification of translated envelopes.
//!
//! A transaction mined on one chain is picked up by every mutual node that
//! bridges it to the next hop. Each node renders it in the canonical bridge
//! format and signs the result. The receiving contract accepts a body once
//! strictly more than half of the expected mutual nodes have submitted
//! byte-identical copies of it.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::case::{CaseNumber, StageIndex};
use crate::chain::{ChainId, PayloadKind, Transaction, TxId};
use crate::codec;
use crate::crypto::{self, Digest, KeyPair, Signature};
use crate::payload::{Notice, Payload};

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

impl NodeId {
    pub fn new(s: impl Into<String>) -> Self {
        NodeId(s.into())
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId::new(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InterchainError {
    #[error("node {0} is not a mutual node of this set")]
    NotMutualNode(NodeId),
    #[error("mutual node set for {chain} has {size} members; needs an odd size above 2")]
    InvalidSetSize { chain: ChainId, size: usize },
    #[error("duplicate submission from {node} for {origin}")]
    DuplicateSubmission { node: NodeId, origin: TxId },
    #[error("translator signature from {0} does not verify")]
    BadTranslatorSignature(NodeId),
    #[error("transaction has no id; it was never accepted by its source chain")]
    UnsubmittedTransaction,
}

/// How a compromised mutual node mistranslates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorruptionRule {
    /// Every node with this rule emits the same forged body, so they collude.
    Identical,
    /// Each node emits its own forged body.
    Unique,
    /// The node never submits.
    Silent,
}

/// Canonical bridge-format content of a translation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum BridgeFormat {
    /// The full origin transaction.
    Transaction(Transaction),
    /// Only the hash of a case transaction, forwarded for provenance.
    StageHash {
        case_number: CaseNumber,
        chain: ChainId,
        stage: StageIndex,
        tx_digest: Digest,
    },
}

impl BridgeFormat {
    pub fn decode(bytes: &[u8]) -> Option<BridgeFormat> {
        codec::decode(bytes).ok()
    }
}

/// Honest translation of a mined transaction: the origin id it is tracked
/// under and the canonical body. Bridge relay records unwrap to the body they
/// carry, so the destination sees exactly what the source's mutual nodes
/// produced.
pub fn canonical_translation(tx: &Transaction) -> Result<(TxId, Vec<u8>), InterchainError> {
    let id = tx.tx_id.clone().ok_or(InterchainError::UnsubmittedTransaction)?;
    let payload = Payload::of(tx).ok();
    match payload {
        Some(Payload::Interchain(Notice::Relay {
            origin_tx_id,
            canonical_body,
            ..
        })) => Ok((origin_tx_id, canonical_body)),
        Some(Payload::DataAccessLog(entry)) => Ok((
            id,
            codec::encode(&BridgeFormat::StageHash {
                case_number: entry.case_number,
                chain: tx.source_chain.clone(),
                stage: entry.stage,
                tx_digest: tx.digest(),
            }),
        )),
        _ => Ok((id, codec::encode(&BridgeFormat::Transaction(tx.clone())))),
    }
}

fn forge(honest: &[u8], tag: &str) -> Vec<u8> {
    match BridgeFormat::decode(honest) {
        Some(BridgeFormat::Transaction(mut tx)) => {
            tx.payload_kind = PayloadKind::InterchainEnvelope;
            tx.body = Payload::Interchain(Notice::Message(format!("forged{tag}").into_bytes())).encode();
            codec::encode(&BridgeFormat::Transaction(tx))
        }
        Some(BridgeFormat::StageHash {
            case_number,
            chain,
            stage,
            tx_digest,
        }) => codec::encode(&BridgeFormat::StageHash {
            case_number,
            chain,
            stage,
            tx_digest: crypto::hash_concat([tx_digest.as_ref(), b"forged", tag.as_bytes()]),
        }),
        None => {
            let mut out = honest.to_vec();
            out.extend_from_slice(tag.as_bytes());
            out
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslatedEnvelope {
    pub origin_tx_id: TxId,
    pub origin_chain: ChainId,
    pub destination_chains: Vec<ChainId>,
    #[serde(with = "codec::hex_bytes")]
    pub canonical_body: Vec<u8>,
    pub translator_node: NodeId,
    pub translator_signature: Signature,
}

impl TranslatedEnvelope {
    pub fn signing_bytes(&self) -> Vec<u8> {
        codec::encode(&(
            &self.origin_tx_id,
            &self.origin_chain,
            &self.destination_chains,
            &self.canonical_body,
            &self.translator_node,
        ))
    }

    pub fn body_digest(&self) -> Digest {
        crypto::hash(&self.canonical_body)
    }
}

#[derive(Debug, Clone)]
pub struct MutualNode {
    pub id: NodeId,
    pub keys: KeyPair,
    pub corruption: Option<CorruptionRule>,
}

impl MutualNode {
    pub fn honest(id: NodeId, keys: KeyPair) -> Self {
        MutualNode {
            id,
            keys,
            corruption: None,
        }
    }
}

/// Nodes that are members of both `chain_id` and `counterpart`.
#[derive(Debug, Clone)]
pub struct MutualNodeSet {
    chain_id: ChainId,
    counterpart: ChainId,
    members: Vec<MutualNode>,
}

impl MutualNodeSet {
    /// Sizes must be odd and above 2 so a strict majority always exists.
    pub fn new(chain_id: ChainId, counterpart: ChainId, members: Vec<MutualNode>) -> Result<Self, InterchainError> {
        let size = members.len();
        if size <= 2 || size.is_multiple_of(2) {
            return Err(InterchainError::InvalidSetSize { chain: chain_id, size });
        }
        Ok(MutualNodeSet {
            chain_id,
            counterpart,
            members,
        })
    }

    pub fn chain_id(&self) -> &ChainId {
        &self.chain_id
    }

    pub fn counterpart(&self) -> &ChainId {
        &self.counterpart
    }

    /// True when this set links `a` and `b`, in either direction.
    pub fn links(&self, a: &ChainId, b: &ChainId) -> bool {
        (&self.chain_id == a && &self.counterpart == b) || (&self.chain_id == b && &self.counterpart == a)
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self) -> &[MutualNode] {
        &self.members
    }

    pub fn member(&self, node: &NodeId) -> Option<&MutualNode> {
        self.members.iter().find(|m| &m.id == node)
    }

    pub fn compromise(&mut self, node: &NodeId, rule: CorruptionRule) -> Result<(), InterchainError> {
        let m = self
            .members
            .iter_mut()
            .find(|m| &m.id == node)
            .ok_or_else(|| InterchainError::NotMutualNode(node.clone()))?;
        m.corruption = Some(rule);
        Ok(())
    }

    /// `node`'s signed translation of `tx` for delivery to `target`. A
    /// silent compromised node yields `None`.
    pub fn translate(
        &self,
        tx: &Transaction,
        node: &NodeId,
        target: &ChainId,
    ) -> Result<Option<TranslatedEnvelope>, InterchainError> {
        let member = self
            .member(node)
            .ok_or_else(|| InterchainError::NotMutualNode(node.clone()))?;
        let (origin_tx_id, honest) = canonical_translation(tx)?;
        let canonical_body = match member.corruption {
            None => honest,
            Some(CorruptionRule::Identical) => forge(&honest, ""),
            Some(CorruptionRule::Unique) => forge(&honest, &format!(":{}", member.id)),
            Some(CorruptionRule::Silent) => return Ok(None),
        };
        let mut env = TranslatedEnvelope {
            origin_tx_id,
            origin_chain: tx.source_chain.clone(),
            destination_chains: vec![target.clone()],
            canonical_body,
            translator_node: member.id.clone(),
            translator_signature: Signature::EMPTY,
        };
        env.translator_signature = member.keys.sign(&env.signing_bytes());
        Ok(Some(env))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerificationStatus {
    Pending,
    Validated,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerEntry {
    pub origin_tx_id: TxId,
    pub expected: usize,
    pub submissions: Vec<TranslatedEnvelope>,
    pub status: VerificationStatus,
    pub validated_body: Option<Vec<u8>>,
}

/// Verdict for one ledger entry given its submissions so far. Only the first
/// submission of each translator counts.
pub fn verify_translations(
    expected: usize,
    submissions: &[TranslatedEnvelope],
) -> (VerificationStatus, Option<Vec<u8>>) {
    let mut seen_nodes = std::collections::BTreeSet::new();
    let mut counts: BTreeMap<&[u8], usize> = BTreeMap::new();
    for s in submissions {
        if seen_nodes.insert(&s.translator_node) {
            *counts.entry(s.canonical_body.as_slice()).or_default() += 1;
        }
    }
    let (modal_body, modal) = counts
        .iter()
        .max_by_key(|(_, c)| **c)
        .map_or((None, 0), |(b, c)| (Some(*b), *c));
    if 2 * modal > expected {
        return (VerificationStatus::Validated, modal_body.map(<[u8]>::to_vec));
    }
    let remaining = expected.saturating_sub(seen_nodes.len());
    if 2 * (modal + remaining) <= expected {
        (VerificationStatus::Rejected, None)
    } else {
        (VerificationStatus::Pending, None)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubmitOutcome {
    pub status: VerificationStatus,
    /// True only on the submission that decided the entry.
    pub decided_now: bool,
}

/// Per-contract record of translated submissions, keyed by origin tx id.
/// Decisions are final: a validated or rejected entry never changes status.
#[derive(Debug, Clone, Default)]
pub struct VerificationLedger {
    entries: BTreeMap<TxId, LedgerEntry>,
}

impl VerificationLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entry(&self, origin: &TxId) -> Option<&LedgerEntry> {
        self.entries.get(origin)
    }

    pub fn entries(&self) -> impl Iterator<Item = &LedgerEntry> {
        self.entries.values()
    }

    /// Checks membership and signature, counts the envelope and re-evaluates.
    pub fn submit(
        &mut self,
        envelope: TranslatedEnvelope,
        set: &MutualNodeSet,
    ) -> Result<SubmitOutcome, InterchainError> {
        let member = set
            .member(&envelope.translator_node)
            .ok_or_else(|| InterchainError::NotMutualNode(envelope.translator_node.clone()))?;
        let sig_ok = crypto::verify(
            &envelope.signing_bytes(),
            &envelope.translator_signature,
            &member.keys.public_key(),
        );
        if !matches!(sig_ok, Ok(true)) {
            return Err(InterchainError::BadTranslatorSignature(envelope.translator_node));
        }
        let entry = self
            .entries
            .entry(envelope.origin_tx_id.clone())
            .or_insert_with(|| LedgerEntry {
                origin_tx_id: envelope.origin_tx_id.clone(),
                expected: set.size(),
                submissions: Vec::new(),
                status: VerificationStatus::Pending,
                validated_body: None,
            });
        if entry
            .submissions
            .iter()
            .any(|s| s.translator_node == envelope.translator_node)
        {
            return Err(InterchainError::DuplicateSubmission {
                node: envelope.translator_node,
                origin: envelope.origin_tx_id,
            });
        }
        entry.submissions.push(envelope);
        if entry.status != VerificationStatus::Pending {
            return Ok(SubmitOutcome {
                status: entry.status,
                decided_now: false,
            });
        }
        let (status, body) = verify_translations(entry.expected, &entry.submissions);
        entry.status = status;
        entry.validated_body = body;
        Ok(SubmitOutcome {
            status,
            decided_now: status != VerificationStatus::Pending,
        })
    }
}
