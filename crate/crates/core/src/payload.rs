//! Transaction bodies.
//!
//! Each [`PayloadKind`] has one body shape. Bodies are canonical encodings of
//! [`Payload`]; decoding checks that the shape matches the declared kind.

use serde::{Deserialize, Serialize};

use crate::case::{CaseNumber, StageIndex, Vote};
use crate::chain::{ChainId, PayloadKind, Transaction, TxId};
use crate::codec;
use crate::crypto::{KeyPair, PublicKey};
use crate::lifecycle::{AccessLogEntry, AccessPolicy};
use crate::provenance::{ChainSection, ProvenanceBundle, SealedEnvelope};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Payload {
    CaseCreate {
        case_number: CaseNumber,
        destinations: Vec<ChainId>,
    },
    AccessControl {
        case_number: CaseNumber,
        policy: AccessPolicy,
    },
    QueryNodeAssign {
        case_number: CaseNumber,
        query_nodes: Vec<PublicKey>,
    },
    StageProposal {
        case_number: CaseNumber,
        stage: StageIndex,
        attempt: u32,
    },
    StageVote {
        case_number: CaseNumber,
        stage: StageIndex,
        attempt: u32,
        vote: Vote,
    },
    DataAccessLog(AccessLogEntry),
    Interchain(Notice),
    ProvenanceRequest {
        case_number: CaseNumber,
    },
}

/// Contract-to-contract traffic carried as `InterchainEnvelope` transactions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Notice {
    /// Opaque application message between organizations.
    Message(#[serde(with = "codec::hex_bytes")] Vec<u8>),
    /// Bridge record of a validated translation, forwarded onward verbatim.
    Relay {
        origin_tx_id: TxId,
        origin_chain: ChainId,
        #[serde(with = "codec::hex_bytes")]
        canonical_body: Vec<u8>,
    },
    /// Destination record of an accepted translation.
    Received {
        origin_tx_id: TxId,
        origin_chain: ChainId,
        #[serde(with = "codec::hex_bytes")]
        canonical_body: Vec<u8>,
    },
    StageAdvanced {
        case_number: CaseNumber,
        stage: StageIndex,
    },
    StageBlocked {
        case_number: CaseNumber,
        stage: StageIndex,
        attempt: u32,
        reasons: Vec<(ChainId, String)>,
    },
    ProvenanceFetch {
        request_id: u64,
        case_number: CaseNumber,
        requester: PublicKey,
    },
    ProvenanceSection {
        request_id: u64,
        section: SealedEnvelope<ChainSection>,
    },
    ProvenanceDelivery {
        request_id: u64,
        bundle: SealedEnvelope<ProvenanceBundle>,
    },
    ProvenanceDenied {
        case_number: CaseNumber,
        requester: PublicKey,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PayloadError {
    #[error("body does not decode: {0}")]
    Undecodable(String),
    #[error("body is a {found:?} payload but the transaction declares {declared:?}")]
    KindMismatch { declared: PayloadKind, found: PayloadKind },
}

impl Payload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::CaseCreate { .. } => PayloadKind::CaseCreate,
            Payload::AccessControl { .. } => PayloadKind::AccessControl,
            Payload::QueryNodeAssign { .. } => PayloadKind::QueryNodeAssign,
            Payload::StageProposal { .. } => PayloadKind::StageProposal,
            Payload::StageVote { .. } => PayloadKind::StageVote,
            Payload::DataAccessLog(_) => PayloadKind::DataAccessLog,
            Payload::Interchain(_) => PayloadKind::InterchainEnvelope,
            Payload::ProvenanceRequest { .. } => PayloadKind::ProvenanceRequest,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        codec::encode(self)
    }

    pub fn decode(kind: PayloadKind, body: &[u8]) -> Result<Payload, PayloadError> {
        let payload: Payload = codec::decode(body).map_err(|e| PayloadError::Undecodable(e.to_string()))?;
        if payload.kind() != kind {
            return Err(PayloadError::KindMismatch {
                declared: kind,
                found: payload.kind(),
            });
        }
        Ok(payload)
    }

    pub fn of(tx: &Transaction) -> Result<Payload, PayloadError> {
        Self::decode(tx.payload_kind, &tx.body)
    }

    pub fn into_transaction(self, sender: &KeyPair, source: ChainId, destinations: Vec<ChainId>) -> Transaction {
        Transaction::new_signed(sender, self.kind(), self.encode(), source, destinations)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_is_checked_on_decode() {
        let p = Payload::ProvenanceRequest {
            case_number: "C-1".into(),
        };
        let body = p.encode();
        assert_eq!(Payload::decode(PayloadKind::ProvenanceRequest, &body).unwrap(), p);
        assert!(matches!(
            Payload::decode(PayloadKind::CaseCreate, &body),
            Err(PayloadError::KindMismatch { .. })
        ));
        assert!(matches!(
            Payload::decode(PayloadKind::CaseCreate, b"junk"),
            Err(PayloadError::Undecodable(_))
        ));
    }
}
