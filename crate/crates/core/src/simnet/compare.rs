//! Mesh versus bridge comparison over a range of chain counts.

use serde::Serialize;

use crate::chain::{ChainId, TxId};
use crate::topology::{Design, TopologyError};

use super::events::{HopRecord, HopStatus};
use super::scenario::{ChainSpec, NetworkSpec, Scenario, TopologySpec, UserSpec, WorkloadAction, WorkloadItem};
use super::{run, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompareTemplate {
    pub seed: u64,
    pub n_i: u64,
    pub latency: u64,
    pub block_time: u64,
}

impl Default for CompareTemplate {
    fn default() -> Self {
        CompareTemplate {
            seed: 0,
            n_i: 3,
            latency: 1,
            block_time: 1,
        }
    }
}

/// Tick of the single-destination message (chain 0 to chain 1).
pub const SINGLE_AT: u64 = 1;
/// Tick of the broadcast message from chain 0 to every other chain.
pub const BROADCAST_AT: u64 = 100;

pub fn chain_name(i: u64) -> String {
    format!("c{i}")
}

/// `k` chains, one user each, a single-destination message and a broadcast,
/// sized to the smallest valid topology for `t.n_i`.
pub fn message_scenario(k: u64, design: Design, t: &CompareTemplate) -> Scenario {
    let n_i = t.n_i;
    let n = (2 * n_i + 1).max(k.saturating_sub(1) * n_i);
    let m = (6 * k + 1).max(2 * k * n_i + 1);
    let (m, b_i) = match design {
        Design::Bridge => (m, k * n_i),
        Design::Mesh => (0, 0),
    };
    let chains: Vec<String> = (0..k).map(chain_name).collect();
    let message = |at, to: Vec<String>, body: &str| WorkloadItem {
        at,
        action: WorkloadAction::Message {
            chain: chains[0].clone(),
            user: "u0".into(),
            to,
            body: body.into(),
        },
    };
    let mut workload = Vec::new();
    if k >= 2 {
        workload.push(message(SINGLE_AT, vec![chains[1].clone()], "single"));
        workload.push(message(BROADCAST_AT, chains[1..].to_vec(), "broadcast"));
    }
    Scenario {
        seed: t.seed,
        stage_count: 5,
        timeout: 50 + 4 * t.latency,
        max_ticks: 100_000,
        topology: TopologySpec {
            design,
            k,
            m,
            n,
            n_i,
            b_i,
        },
        chains: chains
            .iter()
            .map(|id| ChainSpec {
                id: id.clone(),
                block_time: None,
            })
            .collect(),
        network: NetworkSpec {
            block_time: t.block_time,
            bridge_block_time: 1,
            latency: t.latency,
            links: Vec::new(),
        },
        users: chains
            .iter()
            .enumerate()
            .map(|(i, c)| UserSpec {
                chain: c.clone(),
                name: format!("u{i}"),
                role: "investigator".into(),
            })
            .collect(),
        policies: Default::default(),
        workload,
        faults: Vec::new(),
    }
}

/// Hops that end at an organization chain, grouped by origin.
fn final_hops<'a>(hops: &'a [HopRecord], origin: &'a TxId) -> impl Iterator<Item = &'a HopRecord> + 'a {
    hops.iter()
        .filter(move |h| &h.origin_tx_id == origin && !h.to.is_bridge())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DesignMeasure {
    pub mutual_nodes: u64,
    pub single_duration: u64,
    pub mean_duration: f64,
    pub broadcast_hops: u64,
    pub envelopes: u64,
}

fn measure(k: u64, design: Design, t: &CompareTemplate) -> Result<DesignMeasure, SimError> {
    let scenario = message_scenario(k, design, t);
    let out = run(scenario)?;
    let single = TxId::new(&ChainId::new(chain_name(0)), 0);
    let broadcast = TxId::new(&ChainId::new(chain_name(0)), 1);
    let finals: Vec<&HopRecord> = final_hops(&out.hops, &single)
        .chain(final_hops(&out.hops, &broadcast))
        .collect();
    if finals.iter().any(|h| h.status != HopStatus::Validated) || finals.is_empty() {
        return Err(SimError::InvalidScenario(format!(
            "k={k} {design}: a comparison message was not delivered"
        )));
    }
    let single_duration = final_hops(&out.hops, &single)
        .filter_map(HopRecord::duration)
        .max()
        .unwrap_or(0);
    let total: u64 = finals.iter().filter_map(|h| h.duration()).sum();
    let mutual_nodes = match design {
        Design::Mesh => k * k.saturating_sub(1) / 2 * t.n_i,
        Design::Bridge => k * t.n_i,
    };
    Ok(DesignMeasure {
        mutual_nodes,
        single_duration,
        mean_duration: total as f64 / finals.len() as f64,
        broadcast_hops: out.hops.iter().filter(|h| h.origin_tx_id == broadcast).count() as u64,
        envelopes: out.hops.iter().map(|h| u64::from(h.envelopes)).sum(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompareRow {
    pub k: u64,
    pub mesh_mutual: u64,
    pub bridge_mutual: u64,
    pub mesh_mean_duration: f64,
    pub bridge_mean_duration: f64,
    pub duration_ratio: f64,
    pub mesh_broadcast_hops: u64,
    pub bridge_broadcast_hops: u64,
    pub mesh_envelopes: u64,
    pub bridge_envelopes: u64,
}

/// Runs the message scenario under both designs for every `k` in range.
pub fn compare_designs(k_min: u64, k_max: u64, t: &CompareTemplate) -> Result<Vec<CompareRow>, SimError> {
    if k_min < 2 {
        return Err(SimError::InvalidScenario(
            TopologyError::TooFewChains { min: 2, got: k_min }.to_string(),
        ));
    }
    (k_min..=k_max)
        .map(|k| {
            let mesh = measure(k, Design::Mesh, t)?;
            let bridge = measure(k, Design::Bridge, t)?;
            Ok(CompareRow {
                k,
                mesh_mutual: mesh.mutual_nodes,
                bridge_mutual: bridge.mutual_nodes,
                mesh_mean_duration: mesh.mean_duration,
                bridge_mean_duration: bridge.mean_duration,
                duration_ratio: bridge.mean_duration / mesh.mean_duration,
                mesh_broadcast_hops: mesh.broadcast_hops,
                bridge_broadcast_hops: bridge.broadcast_hops,
                mesh_envelopes: mesh.envelopes,
                bridge_envelopes: bridge.envelopes,
            })
        })
        .collect()
}

pub fn compare_table_csv(rows: &[CompareRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv output is utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{bridge_mutual_nodes, mesh_mutual_nodes};

    #[test]
    fn generated_scenarios_validate() {
        for k in 2..=6 {
            for d in [Design::Mesh, Design::Bridge] {
                message_scenario(k, d, &CompareTemplate::default()).validate().unwrap();
            }
        }
        let t = CompareTemplate {
            n_i: 7,
            ..Default::default()
        };
        message_scenario(2, Design::Bridge, &t).validate().unwrap();
    }

    #[test]
    fn small_range() {
        let rows = compare_designs(2, 5, &CompareTemplate::default()).unwrap();
        assert_eq!(rows[0].duration_ratio, 2.0);
        for r in &rows {
            assert_eq!(r.mesh_mutual, mesh_mutual_nodes(r.k).unwrap());
            assert_eq!(r.bridge_mutual, bridge_mutual_nodes(r.k).unwrap());
        }
        assert_eq!((rows[1].mesh_mutual, rows[1].bridge_mutual), (9, 9));
        assert_eq!((rows[3].mesh_mutual, rows[3].bridge_mutual), (30, 15));
        assert!(compare_designs(1, 3, &CompareTemplate::default()).is_err());
        let csv = compare_table_csv(&rows);
        assert!(csv.starts_with("k,mesh_mutual,bridge_mutual,"));
    }
}
