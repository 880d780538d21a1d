//! Scenario files.
//!
//! A scenario is TOML: topology, chain list, network timing, users, named
//! access policies, a timed workload and timed faults.
//!
//! ```toml
//! seed = 7
//! stage_count = 5
//!
//! [topology]
//! design = "bridge"
//! k = 2
//! m = 13
//! n = 7
//! n_i = 3
//! b_i = 6
//!
//! [[chains]]
//! id = "A"
//! [[chains]]
//! id = "B"
//!
//! [[users]]
//! chain = "A"
//! name = "alice"
//! role = "investigator"
//!
//! [[workload]]
//! at = 1
//! action = "message"
//! chain = "A"
//! user = "alice"
//! to = ["B"]
//! body = "hello"
//! ```

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::case::StageIndex;
use crate::chain::ChainId;
use crate::interchain::CorruptionRule;
use crate::lifecycle::{AccessPolicy, Action, Role};
use crate::provenance::TamperMutation;
use crate::topology::{validate_topology, Design, TopologyParams};

use super::SimError;

fn default_stage_count() -> u32 {
    5
}
fn default_timeout() -> u64 {
    50
}
fn default_max_ticks() -> u64 {
    100_000
}
fn one() -> u64 {
    1
}
fn one_u32() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_stage_count")]
    pub stage_count: u32,
    /// Ticks a verification hop may stay undecided before it expires.
    #[serde(default = "default_timeout")]
    pub timeout: u64,
    #[serde(default = "default_max_ticks")]
    pub max_ticks: u64,
    pub topology: TopologySpec,
    pub chains: Vec<ChainSpec>,
    #[serde(default)]
    pub network: NetworkSpec,
    #[serde(default)]
    pub users: Vec<UserSpec>,
    #[serde(default)]
    pub policies: BTreeMap<String, PolicySpec>,
    #[serde(default)]
    pub workload: Vec<WorkloadItem>,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub design: Design,
    pub k: u64,
    #[serde(default)]
    pub m: u64,
    pub n: u64,
    pub n_i: u64,
    #[serde(default)]
    pub b_i: u64,
}

impl TopologySpec {
    pub fn params(&self) -> TopologyParams {
        TopologyParams {
            k: self.k,
            m: self.m,
            n: self.n,
            n_i: self.n_i,
            b_i: self.b_i,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    pub id: String,
    /// Overrides `network.block_time`.
    pub block_time: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    #[serde(default = "one")]
    pub block_time: u64,
    #[serde(default = "one")]
    pub bridge_block_time: u64,
    #[serde(default = "one")]
    pub latency: u64,
    #[serde(default)]
    pub links: Vec<LinkSpec>,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec {
            block_time: 1,
            bridge_block_time: 1,
            latency: 1,
            links: Vec::new(),
        }
    }
}

/// Latency override for envelopes travelling `from` -> `to`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub from: String,
    pub to: String,
    pub latency: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSpec {
    pub chain: String,
    pub name: String,
    pub role: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub roles: Vec<String>,
    #[serde(default)]
    pub grants: Vec<GrantSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrantSpec {
    pub role: String,
    /// Every stage when absent.
    pub stages: Option<Vec<StageIndex>>,
    pub actions: Vec<Action>,
}

impl PolicySpec {
    pub fn to_policy(&self, stage_count: u32) -> AccessPolicy {
        self.grants.iter().fold(
            AccessPolicy::with_roles(self.roles.iter().map(|r| Role::new(r.clone()))),
            |p, g| {
                let stages = g.stages.clone().unwrap_or_else(|| (0..stage_count).collect());
                p.grant(Role::new(g.role.clone()), stages, &g.actions)
            },
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadItem {
    pub at: u64,
    #[serde(flatten)]
    pub action: WorkloadAction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "kebab-case")]
pub enum WorkloadAction {
    CreateCase {
        chain: String,
        user: String,
        case: String,
        destinations: Vec<String>,
    },
    DispatchPolicy {
        chain: String,
        user: String,
        case: String,
        policy: String,
    },
    AssignQueryNodes {
        chain: String,
        user: String,
        case: String,
        /// User names.
        query_nodes: Vec<String>,
    },
    ProposeStage {
        chain: String,
        user: String,
        case: String,
        /// Chains that reject this proposal round, with their reasons.
        #[serde(default)]
        reject: BTreeMap<String, String>,
    },
    Access {
        chain: String,
        user: String,
        case: String,
        access: Action,
        data: String,
        #[serde(default = "one_u32")]
        count: u32,
    },
    ProvenanceRequest {
        chain: String,
        user: String,
        case: String,
    },
    Message {
        chain: String,
        user: String,
        to: Vec<String>,
        body: String,
    },
}

impl WorkloadAction {
    pub fn name(&self) -> &'static str {
        match self {
            WorkloadAction::CreateCase { .. } => "create-case",
            WorkloadAction::DispatchPolicy { .. } => "dispatch-policy",
            WorkloadAction::AssignQueryNodes { .. } => "assign-query-nodes",
            WorkloadAction::ProposeStage { .. } => "propose-stage",
            WorkloadAction::Access { .. } => "access",
            WorkloadAction::ProvenanceRequest { .. } => "provenance-request",
            WorkloadAction::Message { .. } => "message",
        }
    }

    pub fn chain(&self) -> &str {
        match self {
            WorkloadAction::CreateCase { chain, .. }
            | WorkloadAction::DispatchPolicy { chain, .. }
            | WorkloadAction::AssignQueryNodes { chain, .. }
            | WorkloadAction::ProposeStage { chain, .. }
            | WorkloadAction::Access { chain, .. }
            | WorkloadAction::ProvenanceRequest { chain, .. }
            | WorkloadAction::Message { chain, .. } => chain,
        }
    }

    pub fn user(&self) -> &str {
        match self {
            WorkloadAction::CreateCase { user, .. }
            | WorkloadAction::DispatchPolicy { user, .. }
            | WorkloadAction::AssignQueryNodes { user, .. }
            | WorkloadAction::ProposeStage { user, .. }
            | WorkloadAction::Access { user, .. }
            | WorkloadAction::ProvenanceRequest { user, .. }
            | WorkloadAction::Message { user, .. } => user,
        }
    }

    fn referenced_chains(&self) -> Vec<&str> {
        let mut out = vec![self.chain()];
        match self {
            WorkloadAction::CreateCase { destinations, .. } => out.extend(destinations.iter().map(String::as_str)),
            WorkloadAction::ProposeStage { reject, .. } => out.extend(reject.keys().map(String::as_str)),
            WorkloadAction::Message { to, .. } => out.extend(to.iter().map(String::as_str)),
            _ => {}
        }
        out
    }

    /// Actions that need the bridge registry.
    fn bridge_only(&self) -> bool {
        matches!(
            self,
            WorkloadAction::DispatchPolicy { .. }
                | WorkloadAction::AssignQueryNodes { .. }
                | WorkloadAction::ProposeStage { .. }
                | WorkloadAction::ProvenanceRequest { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultSpec {
    #[serde(default)]
    pub at: u64,
    #[serde(flatten)]
    pub kind: FaultKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FaultKind {
    CompromiseMutualNode {
        node: String,
        rule: CorruptionRule,
    },
    TamperOffchain {
        chain: String,
        case: String,
        stage: StageIndex,
        tx_index: usize,
        mutation: TamperMutation,
    },
}

fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].matches('\n').count() + 1
}

impl Scenario {
    pub fn from_toml_str(src: &str) -> Result<Scenario, SimError> {
        toml::from_str(src).map_err(|e| SimError::Parse {
            line: e.span().map(|s| line_of(src, s.start)),
            message: e.message().to_string(),
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes to toml")
    }

    pub fn design(&self) -> Design {
        self.topology.design
    }

    pub fn chain_ids(&self) -> Vec<ChainId> {
        self.chains.iter().map(|c| ChainId::new(c.id.clone())).collect()
    }

    /// Structural checks that must pass before a run starts.
    pub fn validate(&self) -> Result<(), SimError> {
        let violations = validate_topology(&self.topology.params(), self.design());
        if !violations.is_empty() {
            return Err(SimError::InvalidTopology(violations));
        }
        if self.stage_count == 0 {
            return Err(SimError::InvalidScenario("stage_count must be at least 1".into()));
        }
        if self.chains.len() as u64 != self.topology.k {
            return Err(SimError::InvalidScenario(format!(
                "topology.k is {} but {} chains are listed",
                self.topology.k,
                self.chains.len()
            )));
        }
        let mut ids = BTreeSet::new();
        for c in &self.chains {
            if ChainId::new(c.id.clone()).is_bridge() {
                return Err(SimError::InvalidScenario(format!("chain id {:?} is reserved", c.id)));
            }
            if !ids.insert(c.id.as_str()) {
                return Err(SimError::InvalidScenario(format!("chain {} listed twice", c.id)));
            }
            if c.block_time == Some(0) {
                return Err(SimError::InvalidScenario(format!("chain {} has block_time 0", c.id)));
            }
        }
        let net = &self.network;
        if net.block_time == 0 || net.bridge_block_time == 0 || net.latency == 0 {
            return Err(SimError::InvalidScenario(
                "block times and latency must be at least 1".into(),
            ));
        }
        let known = |c: &str| ids.contains(c) || ChainId::new(c).is_bridge();
        for l in &net.links {
            for c in [&l.from, &l.to] {
                if !known(c) {
                    return Err(SimError::WorkloadReferencesUnknownChain(c.clone()));
                }
            }
            if l.latency == 0 {
                return Err(SimError::InvalidScenario(format!(
                    "link {}->{} has latency 0",
                    l.from, l.to
                )));
            }
        }
        let mut users = BTreeSet::new();
        for u in &self.users {
            if !ids.contains(u.chain.as_str()) {
                return Err(SimError::WorkloadReferencesUnknownChain(u.chain.clone()));
            }
            if !users.insert(u.name.as_str()) {
                return Err(SimError::InvalidScenario(format!("user {} defined twice", u.name)));
            }
        }
        for (name, p) in &self.policies {
            p.to_policy(self.stage_count)
                .validate()
                .map_err(|e| SimError::InvalidScenario(format!("policy {name}: {e}")))?;
        }
        for item in &self.workload {
            let a = &item.action;
            for c in a.referenced_chains() {
                if !ids.contains(c) {
                    return Err(SimError::WorkloadReferencesUnknownChain(c.to_string()));
                }
            }
            if !users.contains(a.user()) {
                return Err(SimError::InvalidScenario(format!(
                    "{} references unknown user {}",
                    a.name(),
                    a.user()
                )));
            }
            if let WorkloadAction::DispatchPolicy { policy, .. } = a {
                if !self.policies.contains_key(policy) {
                    return Err(SimError::InvalidScenario(format!("unknown policy {policy}")));
                }
            }
            if let WorkloadAction::AssignQueryNodes { query_nodes, .. } = a {
                if let Some(q) = query_nodes.iter().find(|q| !users.contains(q.as_str())) {
                    return Err(SimError::InvalidScenario(format!("query node {q} is not a user")));
                }
            }
            if self.design() == Design::Mesh && a.bridge_only() {
                return Err(SimError::UnsupportedInMesh(a.name()));
            }
        }
        for f in &self.faults {
            if let FaultKind::TamperOffchain { chain, .. } = &f.kind {
                if !ids.contains(chain.as_str()) {
                    return Err(SimError::WorkloadReferencesUnknownChain(chain.clone()));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
seed = 3

[topology]
design = "bridge"
k = 2
m = 13
n = 7
n_i = 3
b_i = 6

[[chains]]
id = "A"
[[chains]]
id = "B"
block_time = 2

[[users]]
chain = "A"
name = "alice"
role = "investigator"

[policies.open]
roles = ["investigator"]
grants = [{ role = "investigator", actions = ["read", "propose-stage"] }]

[[workload]]
at = 1
action = "create-case"
chain = "A"
user = "alice"
case = "C-1"
destinations = ["B"]

[[workload]]
at = 4
action = "propose-stage"
chain = "A"
user = "alice"
case = "C-1"
reject = { B = "not ready" }

[[faults]]
at = 9
kind = "tamper-offchain"
chain = "B"
case = "C-1"
stage = 0
tx_index = 1
mutation = { flip-byte = { offset = 4 } }
"#;

    #[test]
    fn parses_and_validates() {
        let s = Scenario::from_toml_str(BASE).unwrap();
        s.validate().unwrap();
        assert_eq!((s.stage_count, s.timeout, s.network.latency), (5, 50, 1));
        assert_eq!(s.chains[1].block_time, Some(2));
        assert_eq!(s.workload.len(), 2);
        assert!(matches!(
            &s.workload[1].action,
            WorkloadAction::ProposeStage { reject, .. } if reject["B"] == "not ready"
        ));
        assert!(matches!(
            s.faults[0].kind,
            FaultKind::TamperOffchain {
                mutation: TamperMutation::FlipByte { offset: 4 },
                ..
            }
        ));
        let p = s.policies["open"].to_policy(5);
        assert_eq!(p.grants[&Role::new("investigator")].len(), 5);
    }

    #[test]
    fn toml_round_trip() {
        let s = Scenario::from_toml_str(BASE).unwrap();
        assert_eq!(Scenario::from_toml_str(&s.to_toml_string()).unwrap(), s);
    }

    #[test]
    fn parse_error_has_line() {
        let bad = BASE.replace("n_i = 3", "n_i = \"three\"");
        match Scenario::from_toml_str(&bad) {
            Err(SimError::Parse { line: Some(l), .. }) => assert_eq!(l, 9),
            other => panic!("{other:?}"),
        }
        assert!(Scenario::from_toml_str("seed = 1\nbogus = 2\n").is_err());
    }

    #[test]
    fn validation_errors() {
        let s = Scenario::from_toml_str(&BASE.replace("n_i = 3", "n_i = 2")).unwrap();
        assert!(matches!(s.validate(), Err(SimError::InvalidTopology(_))));
        let s = Scenario::from_toml_str(&BASE.replace("destinations = [\"B\"]", "destinations = [\"Z\"]")).unwrap();
        assert_eq!(s.validate(), Err(SimError::WorkloadReferencesUnknownChain("Z".into())));
        let s = Scenario::from_toml_str(&BASE.replace("design = \"bridge\"", "design = \"mesh\"")).unwrap();
        assert_eq!(s.validate(), Err(SimError::UnsupportedInMesh("propose-stage")));
        let s = Scenario::from_toml_str(&BASE.replace("id = \"B\"", "id = \"bridge\"")).unwrap();
        assert!(matches!(s.validate(), Err(SimError::InvalidScenario(_))));
    }
}
