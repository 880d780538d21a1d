//! Mutual-node sizing for the mesh and bridge designs.
//!
//! All counts are plain integers. `n` is the node count of every
//! organization chain; the bridge-side bound on `b_i` compares against the
//! organization nodes taken together (`k * n`), since the bridge-side mutual
//! nodes are drawn from all of them.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Minimum mutual nodes per link.
pub const MIN_MUTUAL: u64 = 3;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TopologyError {
    #[error("need at least {min} chains, got {got}")]
    TooFewChains { min: u64, got: u64 },
    #[error("empty range: k_min={k_min} exceeds k_max={k_max}")]
    BadRange { k_min: u64, k_max: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyParams {
    pub k: u64,
    pub m: u64,
    pub n: u64,
    pub n_i: u64,
    pub b_i: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Design {
    Mesh,
    Bridge,
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Design::Mesh => "mesh",
            Design::Bridge => "bridge",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Constraint {
    NonPositiveCount,
    /// 2 < n_i < m/2
    MutualBelowHalfBridge,
    /// 2 < n_i < n/2
    MutualBelowHalfChain,
    /// mutual sets of different chains share no node
    DisjointMutualSets,
    /// 2 < b_i <= min(k*n/2, m/2)
    BridgeMutualBound,
    /// n_i odd
    OddMutualCount,
    /// m >= 6k+1
    BridgeNodeMinimum,
    /// b_i >= 3k
    BridgeMutualMinimum,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: Constraint,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.constraint, self.detail)
    }
}

/// Every violated constraint for `p` under `design`; empty means the topology
/// can be built.
pub fn validate_topology(p: &TopologyParams, design: Design) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |constraint, detail: String| out.push(Violation { constraint, detail });

    if p.k == 0 || p.n == 0 || p.n_i == 0 || (design == Design::Bridge && (p.m == 0 || p.b_i == 0)) {
        push(
            Constraint::NonPositiveCount,
            format!("all counts must be positive: {p:?}"),
        );
        return out;
    }
    // x < y/2 and x <= y/2 without fractions
    let below_half = |x: u64, y: u64| 2 * x < y;
    let at_most_half = |x: u64, y: u64| 2 * x <= y;

    if p.n_i <= 2 || !below_half(p.n_i, p.n) {
        push(
            Constraint::MutualBelowHalfChain,
            format!("n_i={} must exceed 2 and stay below n/2={}", p.n_i, p.n as f64 / 2.0),
        );
    }
    if p.n_i.is_multiple_of(2) {
        push(Constraint::OddMutualCount, format!("n_i={} is even", p.n_i));
    }
    match design {
        Design::Mesh => {
            // each chain hosts one mutual set per other chain
            if (p.k - 1) * p.n_i > p.n {
                push(
                    Constraint::DisjointMutualSets,
                    format!("{} disjoint sets of {} do not fit in {} nodes", p.k - 1, p.n_i, p.n),
                );
            }
        }
        Design::Bridge => {
            if p.n_i <= 2 || !below_half(p.n_i, p.m) {
                push(
                    Constraint::MutualBelowHalfBridge,
                    format!("n_i={} must exceed 2 and stay below m/2={}", p.n_i, p.m as f64 / 2.0),
                );
            }
            if p.b_i <= 2 || !at_most_half(p.b_i, p.k * p.n) || !at_most_half(p.b_i, p.m) {
                push(
                    Constraint::BridgeMutualBound,
                    format!(
                        "b_i={} must exceed 2 and not exceed min(k*n/2, m/2)={}",
                        p.b_i,
                        (p.k * p.n).min(p.m) as f64 / 2.0
                    ),
                );
            }
            if p.b_i < p.k * p.n_i {
                push(
                    Constraint::DisjointMutualSets,
                    format!("{} disjoint sets of {} do not fit in b_i={}", p.k, p.n_i, p.b_i),
                );
            }
            let (m_min, b_min) = requirements(p.k);
            if p.m < m_min {
                push(Constraint::BridgeNodeMinimum, format!("m={} below {m_min}", p.m));
            }
            if p.b_i < b_min {
                push(Constraint::BridgeMutualMinimum, format!("b_i={} below {b_min}", p.b_i));
            }
        }
    }
    out
}

fn check_k(k: u64, min: u64) -> Result<(), TopologyError> {
    if k < min {
        Err(TopologyError::TooFewChains { min, got: k })
    } else {
        Ok(())
    }
}

fn requirements(k: u64) -> (u64, u64) {
    (6 * k + 1, MIN_MUTUAL * k)
}

/// Mutual nodes needed when every pair of chains is linked directly.
pub fn mesh_mutual_nodes(k: u64) -> Result<u64, TopologyError> {
    check_k(k, 1)?;
    Ok(k * (k - 1) * MIN_MUTUAL / 2)
}

/// `(m_min, b_min)` for a bridge serving `k` chains.
pub fn bridge_requirements(k: u64) -> Result<(u64, u64), TopologyError> {
    check_k(k, 1)?;
    Ok(requirements(k))
}

pub fn bridge_mutual_nodes(k: u64) -> Result<u64, TopologyError> {
    bridge_requirements(k).map(|(_, b)| b)
}

/// Smallest `k` from which the bridge needs no more mutual nodes than the mesh.
pub fn crossover_k() -> u64 {
    (1..)
        .find(|&k| requirements(k).1 <= k * (k - 1) * MIN_MUTUAL / 2)
        .expect("the mesh count grows quadratically")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pattern {
    SingleDestination,
    Broadcast,
}

/// Verification hops for one cross-chain message: `(mesh, bridge)`.
pub fn communication_counts(k: u64, pattern: Pattern) -> Result<(u64, u64), TopologyError> {
    check_k(k, 2)?;
    let dests = match pattern {
        Pattern::SingleDestination => 1,
        Pattern::Broadcast => k - 1,
    };
    Ok((dests, 1 + dests))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub k: u64,
    pub mesh_mutual: u64,
    pub bridge_mutual: u64,
    pub mesh_hops_broadcast: u64,
    pub bridge_hops_broadcast: u64,
    pub m_min: u64,
    pub b_min: u64,
}

pub fn comparison_table(k_min: u64, k_max: u64) -> Result<Vec<ComparisonRow>, TopologyError> {
    check_k(k_min, 1)?;
    if k_min > k_max {
        return Err(TopologyError::BadRange { k_min, k_max });
    }
    (k_min..=k_max)
        .map(|k| {
            // a lone chain sends nothing cross-chain
            let (mesh_hops_broadcast, bridge_hops_broadcast) = if k < 2 {
                (0, 0)
            } else {
                communication_counts(k, Pattern::Broadcast)?
            };
            let (m_min, b_min) = bridge_requirements(k)?;
            Ok(ComparisonRow {
                k,
                mesh_mutual: mesh_mutual_nodes(k)?,
                bridge_mutual: b_min,
                mesh_hops_broadcast,
                bridge_hops_broadcast,
                m_min,
                b_min,
            })
        })
        .collect()
}

pub fn table_csv(rows: &[ComparisonRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv output is utf-8")
}
