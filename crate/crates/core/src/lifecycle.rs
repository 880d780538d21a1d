//! Organization-side case lifecycle: case requests, the staged role matrix,
//! and access logging.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::case::{CaseNumber, StageIndex};
use crate::chain::{Chain, ChainId, SubmitError, Transaction, TxId};
use crate::crypto::{self, Digest, KeyPair, PublicKey};
use crate::payload::Payload;
use crate::provenance::OffchainCaseStore;

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Role(pub String);

impl Role {
    pub fn new(s: impl Into<String>) -> Self {
        Role(s.into())
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl From<&str> for Role {
    fn from(s: &str) -> Self {
        Role::new(s)
    }
}

pub const DEFAULT_ROLES: [&str; 4] = ["investigator", "analyst", "auditor", "query-node"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Action {
    Read,
    Upload,
    ProposeStage,
    Query,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Read, Action::Upload, Action::ProposeStage, Action::Query];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AccessDecision {
    Allowed,
    Denied,
}

/// Static (role, stage) -> action-set matrix. Anything not granted is denied.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessPolicy {
    pub roles: BTreeSet<Role>,
    pub grants: BTreeMap<Role, BTreeMap<StageIndex, BTreeSet<Action>>>,
}

impl AccessPolicy {
    pub fn deny_all() -> Self {
        Self::default()
    }

    pub fn with_roles<I, R>(roles: I) -> Self
    where
        I: IntoIterator<Item = R>,
        R: Into<Role>,
    {
        AccessPolicy {
            roles: roles.into_iter().map(Into::into).collect(),
            grants: BTreeMap::new(),
        }
    }

    /// Adds `actions` for `role` at each of `stages`.
    pub fn grant(
        mut self,
        role: impl Into<Role>,
        stages: impl IntoIterator<Item = StageIndex>,
        actions: &[Action],
    ) -> Self {
        let per_stage = self.grants.entry(role.into()).or_default();
        for s in stages {
            per_stage.entry(s).or_default().extend(actions.iter().copied());
        }
        self
    }

    pub fn validate(&self) -> Result<(), LifecycleError> {
        for role in self.grants.keys() {
            if !self.roles.contains(role) {
                return Err(LifecycleError::MalformedPolicy(format!(
                    "grant references undeclared role {role}"
                )));
            }
        }
        Ok(())
    }

    pub fn digest(&self) -> Digest {
        crypto::hash_value(self)
    }
}

pub fn check_access(policy: &AccessPolicy, role: &Role, stage: StageIndex, action: Action) -> AccessDecision {
    let granted = policy
        .grants
        .get(role)
        .and_then(|per_stage| per_stage.get(&stage))
        .is_some_and(|actions| actions.contains(&action));
    if granted {
        AccessDecision::Allowed
    } else {
        AccessDecision::Denied
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessLogEntry {
    pub case_number: CaseNumber,
    pub actor: PublicKey,
    pub role: Role,
    pub action: Action,
    pub stage: StageIndex,
    pub decision: AccessDecision,
    pub logical_time: u64,
    pub payload_digest: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LifecycleError {
    #[error("user {0} is not registered on this chain")]
    UnknownUser(PublicKey),
    #[error("a shared case needs at least one destination chain")]
    EmptyDestinations,
    #[error("case {0} is not known on this chain")]
    UnknownCase(CaseNumber),
    #[error("malformed policy: {0}")]
    MalformedPolicy(String),
    #[error("only the source chain of case {0} may do this")]
    NotCaseSource(CaseNumber),
    #[error("{action:?} denied for role {role} at stage {stage}")]
    AccessDenied {
        role: Role,
        stage: StageIndex,
        action: Action,
    },
    #[error("case {0} is already at its last stage")]
    NoNextStage(CaseNumber),
    #[error(transparent)]
    Submit(#[from] SubmitError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UserRecord {
    pub name: String,
    pub role: Role,
    pub public_key: PublicKey,
}

/// Local copy of a shared case contract.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LocalCase {
    pub case_number: CaseNumber,
    pub source_chain: ChainId,
    pub destinations: Vec<ChainId>,
    pub creator_public_key: PublicKey,
    pub current_stage: StageIndex,
    pub policy: Option<AccessPolicy>,
    pub proposal_attempts: BTreeMap<StageIndex, u32>,
}

impl LocalCase {
    pub fn participants(&self) -> Vec<ChainId> {
        let mut all = vec![self.source_chain.clone()];
        all.extend(self.destinations.iter().cloned());
        all
    }

    pub fn policy_digest(&self) -> Option<Digest> {
        self.policy.as_ref().map(AccessPolicy::digest)
    }

    fn effective_policy(&self) -> AccessPolicy {
        self.policy.clone().unwrap_or_default()
    }
}

/// Envelope accepted from another chain and incorporated locally.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReceivedRecord {
    pub origin_tx_id: TxId,
    pub origin_chain: ChainId,
    #[serde(with = "crate::codec::hex_bytes")]
    pub canonical_body: Vec<u8>,
}

/// What executing a freshly mined transaction did to local contract state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LocalEffect {
    CaseOpened(CaseNumber),
    PolicyStored { case_number: CaseNumber, digest: Digest },
    AccessLogged(AccessLogEntry),
}

/// One organization chain together with its contract state.
#[derive(Debug, Clone)]
pub struct Organization {
    chain: Chain,
    contract_key: KeyPair,
    stage_count: u32,
    users: BTreeMap<PublicKey, UserRecord>,
    cases: BTreeMap<CaseNumber, LocalCase>,
    offchain: OffchainCaseStore,
    access_log: Vec<AccessLogEntry>,
    received: Vec<ReceivedRecord>,
}

impl Organization {
    pub fn new(chain: Chain, contract_key: KeyPair, stage_count: u32) -> Self {
        let offchain = OffchainCaseStore::new(chain.chain_id().clone(), stage_count);
        Organization {
            chain,
            contract_key,
            stage_count,
            users: BTreeMap::new(),
            cases: BTreeMap::new(),
            offchain,
            access_log: Vec::new(),
            received: Vec::new(),
        }
    }

    pub fn chain_id(&self) -> &ChainId {
        self.chain.chain_id()
    }

    pub fn chain(&self) -> &Chain {
        &self.chain
    }

    pub fn chain_mut(&mut self) -> &mut Chain {
        &mut self.chain
    }

    pub fn contract_key(&self) -> &KeyPair {
        &self.contract_key
    }

    pub fn register_user(&mut self, name: impl Into<String>, role: impl Into<Role>, public_key: PublicKey) {
        self.users.insert(
            public_key,
            UserRecord {
                name: name.into(),
                role: role.into(),
                public_key,
            },
        );
    }

    pub fn user(&self, key: &PublicKey) -> Option<&UserRecord> {
        self.users.get(key)
    }

    pub fn case(&self, case_number: &CaseNumber) -> Option<&LocalCase> {
        self.cases.get(case_number)
    }

    pub fn cases(&self) -> impl Iterator<Item = &LocalCase> {
        self.cases.values()
    }

    pub fn offchain(&self) -> &OffchainCaseStore {
        &self.offchain
    }

    pub fn offchain_mut(&mut self) -> &mut OffchainCaseStore {
        &mut self.offchain
    }

    pub fn access_log(&self) -> &[AccessLogEntry] {
        &self.access_log
    }

    pub fn received(&self) -> &[ReceivedRecord] {
        &self.received
    }

    fn registered(&self, user: &KeyPair) -> Result<&UserRecord, LifecycleError> {
        let pk = user.public_key();
        self.users.get(&pk).ok_or(LifecycleError::UnknownUser(pk))
    }

    fn known_case(&self, case_number: &CaseNumber) -> Result<&LocalCase, LifecycleError> {
        self.cases
            .get(case_number)
            .ok_or_else(|| LifecycleError::UnknownCase(case_number.clone()))
    }

    pub fn submit(&mut self, tx: Transaction) -> Result<TxId, LifecycleError> {
        Ok(self.chain.submit_transaction(tx)?)
    }

    /// Signed `CaseCreate` request; the local case contract appears once it
    /// is mined.
    pub fn create_case_request(
        &self,
        user: &KeyPair,
        case_number: CaseNumber,
        destinations: Vec<ChainId>,
    ) -> Result<Transaction, LifecycleError> {
        self.registered(user)?;
        if destinations.is_empty() {
            return Err(LifecycleError::EmptyDestinations);
        }
        let payload = Payload::CaseCreate {
            case_number,
            destinations: destinations.clone(),
        };
        Ok(payload.into_transaction(user, self.chain_id().clone(), destinations))
    }

    pub fn dispatch_access_policy(
        &self,
        user: &KeyPair,
        case_number: &CaseNumber,
        policy: AccessPolicy,
    ) -> Result<Transaction, LifecycleError> {
        self.registered(user)?;
        let case = self.known_case(case_number)?;
        if &case.source_chain != self.chain_id() {
            return Err(LifecycleError::NotCaseSource(case_number.clone()));
        }
        policy.validate()?;
        let payload = Payload::AccessControl {
            case_number: case_number.clone(),
            policy,
        };
        Ok(payload.into_transaction(user, self.chain_id().clone(), case.destinations.clone()))
    }

    pub fn assign_query_nodes(
        &self,
        user: &KeyPair,
        case_number: &CaseNumber,
        query_nodes: Vec<PublicKey>,
    ) -> Result<Transaction, LifecycleError> {
        self.registered(user)?;
        self.known_case(case_number)?;
        let payload = Payload::QueryNodeAssign {
            case_number: case_number.clone(),
            query_nodes,
        };
        Ok(payload.into_transaction(user, self.chain_id().clone(), vec![ChainId::bridge()]))
    }

    /// Proposal to move the case to the next stage. Needs the
    /// `ProposeStage` grant at the current stage.
    pub fn propose_stage(&mut self, user: &KeyPair, case_number: &CaseNumber) -> Result<Transaction, LifecycleError> {
        let role = self.registered(user)?.role.clone();
        let case = self.known_case(case_number)?;
        let stage = case.current_stage;
        if check_access(&case.effective_policy(), &role, stage, Action::ProposeStage) == AccessDecision::Denied {
            return Err(LifecycleError::AccessDenied {
                role,
                stage,
                action: Action::ProposeStage,
            });
        }
        let next = stage + 1;
        if next >= self.stage_count {
            return Err(LifecycleError::NoNextStage(case_number.clone()));
        }
        let others: Vec<ChainId> = case
            .participants()
            .into_iter()
            .filter(|c| c != self.chain_id())
            .collect();
        let case = self.cases.get_mut(case_number).expect("checked above");
        let attempt = case.proposal_attempts.entry(next).or_insert(0);
        *attempt += 1;
        let payload = Payload::StageProposal {
            case_number: case_number.clone(),
            stage: next,
            attempt: *attempt,
        };
        Ok(payload.into_transaction(user, self.chain_id().clone(), others))
    }

    /// Records a retrieval or upload attempt, allowed or not, as a
    /// `DataAccessLog` transaction in the local pool.
    pub fn log_data_access(
        &mut self,
        user: &KeyPair,
        case_number: &CaseNumber,
        action: Action,
        payload_digest: Digest,
        logical_time: u64,
    ) -> Result<(AccessLogEntry, TxId), LifecycleError> {
        let role = self.registered(user)?.role.clone();
        let case = self.known_case(case_number)?;
        let stage = case.current_stage;
        let entry = AccessLogEntry {
            case_number: case_number.clone(),
            actor: user.public_key(),
            role: role.clone(),
            action,
            stage,
            decision: check_access(&case.effective_policy(), &role, stage, action),
            logical_time,
            payload_digest,
        };
        let tx = Payload::DataAccessLog(entry.clone()).into_transaction(user, self.chain_id().clone(), vec![]);
        let id = self.submit(tx)?;
        Ok((entry, id))
    }

    pub fn provenance_request(&self, user: &KeyPair, case_number: &CaseNumber) -> Result<Transaction, LifecycleError> {
        self.registered(user)?;
        let payload = Payload::ProvenanceRequest {
            case_number: case_number.clone(),
        };
        Ok(payload.into_transaction(user, self.chain_id().clone(), vec![ChainId::bridge()]))
    }

    /// Runs the local contracts over a transaction that was just mined here.
    pub fn apply_mined(&mut self, tx: &Transaction) -> Option<LocalEffect> {
        let payload = Payload::of(tx).ok()?;
        match payload {
            Payload::CaseCreate {
                case_number,
                destinations,
            } => {
                if self.cases.contains_key(&case_number) {
                    return None;
                }
                let source = self.chain_id().clone();
                self.install_case(case_number.clone(), source, destinations, tx.sender_public_key);
                Some(LocalEffect::CaseOpened(case_number))
            }
            Payload::AccessControl { case_number, policy } => {
                let digest = self.store_policy(&case_number, policy).ok()?;
                Some(LocalEffect::PolicyStored { case_number, digest })
            }
            Payload::DataAccessLog(entry) => {
                self.offchain.append(&entry.case_number, entry.stage, tx.clone());
                self.access_log.push(entry.clone());
                Some(LocalEffect::AccessLogged(entry))
            }
            _ => None,
        }
    }

    /// Creates the local copy of a case announced by another chain.
    pub fn install_case(
        &mut self,
        case_number: CaseNumber,
        source_chain: ChainId,
        destinations: Vec<ChainId>,
        creator_public_key: PublicKey,
    ) -> bool {
        if self.cases.contains_key(&case_number) {
            return false;
        }
        self.cases.insert(
            case_number.clone(),
            LocalCase {
                case_number,
                source_chain,
                destinations,
                creator_public_key,
                current_stage: 0,
                policy: None,
                proposal_attempts: BTreeMap::new(),
            },
        );
        true
    }

    pub fn store_policy(&mut self, case_number: &CaseNumber, policy: AccessPolicy) -> Result<Digest, LifecycleError> {
        policy.validate()?;
        let case = self
            .cases
            .get_mut(case_number)
            .ok_or_else(|| LifecycleError::UnknownCase(case_number.clone()))?;
        let digest = policy.digest();
        case.policy = Some(policy);
        Ok(digest)
    }

    pub fn set_stage(&mut self, case_number: &CaseNumber, stage: StageIndex) -> Result<(), LifecycleError> {
        let case = self
            .cases
            .get_mut(case_number)
            .ok_or_else(|| LifecycleError::UnknownCase(case_number.clone()))?;
        case.current_stage = case.current_stage.max(stage);
        Ok(())
    }

    pub fn record_received(&mut self, record: ReceivedRecord) {
        self.received.push(record);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn org() -> (Organization, KeyPair, KeyPair) {
        let validator = KeyPair::derive("A/n0");
        let chain = Chain::new("A".into(), vec![validator.public_key()]);
        let mut org = Organization::new(chain, KeyPair::derive("A/contract"), 5);
        let user = KeyPair::derive("alice");
        org.register_user("alice", "investigator", user.public_key());
        (org, user, validator)
    }

    fn sample_policy() -> AccessPolicy {
        AccessPolicy::with_roles(DEFAULT_ROLES)
            .grant("investigator", 0..5, &[Action::Upload, Action::ProposeStage])
            .grant("analyst", [3], &[Action::Read])
    }

    #[test]
    fn case_request_shape_and_errors() {
        let (org, user, _) = org();
        let tx = org.create_case_request(&user, "C-7".into(), vec!["B".into()]).unwrap();
        assert_eq!(tx.payload_kind, crate::chain::PayloadKind::CaseCreate);
        assert_eq!(tx.destination_chains, vec![ChainId::from("B")]);
        assert_eq!(
            org.create_case_request(&user, "C-7".into(), vec![]),
            Err(LifecycleError::EmptyDestinations)
        );
        let stranger = KeyPair::derive("mallory");
        assert!(matches!(
            org.create_case_request(&stranger, "C-7".into(), vec!["B".into()]),
            Err(LifecycleError::UnknownUser(_))
        ));
    }

    #[test]
    fn mined_case_create_opens_local_case() {
        let (mut org, user, v) = org();
        let tx = org.create_case_request(&user, "C-7".into(), vec!["B".into()]).unwrap();
        org.submit(tx).unwrap();
        let block = org.chain_mut().mine_block(&v, 1).unwrap().clone();
        let effect = org.apply_mined(&block.transactions[0]);
        assert_eq!(effect, Some(LocalEffect::CaseOpened("C-7".into())));
        let case = org.case(&"C-7".into()).unwrap();
        assert_eq!(case.creator_public_key, user.public_key());
        assert_eq!(case.current_stage, 0);
    }

    #[test]
    fn policy_validation() {
        assert!(sample_policy().validate().is_ok());
        let bad = AccessPolicy::with_roles(["analyst"]).grant("ghost", [0], &[Action::Read]);
        assert!(matches!(bad.validate(), Err(LifecycleError::MalformedPolicy(_))));
        let empty = AccessPolicy::with_roles(DEFAULT_ROLES);
        assert!(empty.validate().is_ok());
        for a in Action::ALL {
            assert_eq!(
                check_access(&empty, &"investigator".into(), 0, a),
                AccessDecision::Denied
            );
        }
    }

    #[test]
    fn check_access_examples() {
        let p = sample_policy();
        assert_eq!(
            check_access(&p, &"investigator".into(), 0, Action::Upload),
            AccessDecision::Allowed
        );
        assert_eq!(
            check_access(&p, &"analyst".into(), 0, Action::Upload),
            AccessDecision::Denied
        );
        assert_eq!(
            check_access(&p, &"analyst".into(), 3, Action::Read),
            AccessDecision::Allowed
        );
    }

    #[test]
    fn exhaustive_sweep_matches_table_oracle() {
        let roles = ["investigator", "analyst", "auditor"];
        // independent table: (role index, stage) -> allowed action list
        let mut table: Vec<(usize, u32, Action)> = Vec::new();
        for s in 0..5 {
            table.push((0, s, Action::Upload));
            table.push((0, s, Action::ProposeStage));
        }
        table.push((1, 3, Action::Read));
        table.push((2, 4, Action::Query));
        table.push((2, 2, Action::Read));
        let mut p = AccessPolicy::with_roles(roles);
        for (r, s, a) in &table {
            p = p.grant(roles[*r], [*s], &[*a]);
        }
        for (ri, r) in roles.iter().enumerate() {
            for s in 0..5 {
                for a in Action::ALL {
                    let expected = table.iter().any(|(tr, ts, ta)| *tr == ri && *ts == s && *ta == a);
                    let got = check_access(&p, &Role::from(*r), s, a) == AccessDecision::Allowed;
                    assert_eq!(got, expected, "{r} stage {s} {a:?}");
                }
            }
        }
    }

    #[test]
    fn denied_access_is_still_logged() {
        let (mut org, user, v) = org();
        org.submit(org.create_case_request(&user, "C-1".into(), vec!["B".into()]).unwrap())
            .unwrap();
        let b = org.chain_mut().mine_block(&v, 1).unwrap().clone();
        org.apply_mined(&b.transactions[0]);
        // no policy yet: deny by default
        let (entry, _) = org
            .log_data_access(&user, &"C-1".into(), Action::Read, crypto::hash(b"r"), 2)
            .unwrap();
        assert_eq!(entry.decision, AccessDecision::Denied);
        let p = org
            .dispatch_access_policy(&user, &"C-1".into(), sample_policy())
            .unwrap();
        org.submit(p).unwrap();
        let b = org.chain_mut().mine_block(&v, 3).unwrap().clone();
        for tx in &b.transactions {
            org.apply_mined(tx);
        }
        let (entry, _) = org
            .log_data_access(&user, &"C-1".into(), Action::Upload, crypto::hash(b"u"), 4)
            .unwrap();
        assert_eq!(entry.decision, AccessDecision::Allowed);
        let b = org.chain_mut().mine_block(&v, 5).unwrap().clone();
        for tx in &b.transactions {
            org.apply_mined(tx);
        }
        assert_eq!(org.access_log().len(), 2);
        assert_eq!(org.offchain().stage_transactions(&"C-1".into(), 0).len(), 2);
        assert!(matches!(
            org.log_data_access(&user, &"C-9".into(), Action::Read, crypto::hash(b""), 6),
            Err(LifecycleError::UnknownCase(_))
        ));
    }

    #[test]
    fn only_source_dispatches_policy() {
        let (mut org, user, _) = org();
        org.install_case("C-2".into(), "B".into(), vec!["A".into()], user.public_key());
        assert_eq!(
            org.dispatch_access_policy(&user, &"C-2".into(), sample_policy()),
            Err(LifecycleError::NotCaseSource("C-2".into()))
        );
    }

    #[test]
    fn proposals_need_grant_and_count_attempts() {
        let (mut org, user, _) = org();
        org.install_case("C-3".into(), "A".into(), vec!["B".into()], user.public_key());
        assert!(matches!(
            org.propose_stage(&user, &"C-3".into()),
            Err(LifecycleError::AccessDenied { .. })
        ));
        org.store_policy(&"C-3".into(), sample_policy()).unwrap();
        let t1 = org.propose_stage(&user, &"C-3".into()).unwrap();
        let t2 = org.propose_stage(&user, &"C-3".into()).unwrap();
        let attempts: Vec<u32> = [t1, t2]
            .iter()
            .map(|t| match Payload::of(t).unwrap() {
                Payload::StageProposal { stage, attempt, .. } => {
                    assert_eq!(stage, 1);
                    attempt
                }
                other => panic!("{other:?}"),
            })
            .collect();
        assert_eq!(attempts, vec![1, 2]);
        org.set_stage(&"C-3".into(), 4).unwrap();
        assert_eq!(
            org.propose_stage(&user, &"C-3".into()),
            Err(LifecycleError::NoNextStage("C-3".into()))
        );
    }
}
