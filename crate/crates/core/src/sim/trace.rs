use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::adversary::AttackMove;
use crate::dag::{Block, BlockId, ChainRule, DagState};
use crate::stats::Summary;

use super::{Rule, SimConfig, Simulation, GENESIS};

/// One line of the per-block CSV, taken from node 0's final view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRow {
    pub id: BlockId,
    pub miner: String,
    pub time: f64,
    /// `None` for blocks outside every epoch (they trail the order).
    pub epoch: Option<usize>,
    pub position: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub honest_blocks: usize,
    pub attacker_blocks: usize,
    /// Honest blocks the configured rule keeps, over all honest blocks.
    pub utilization: f64,
    /// Honest blocks inside some epoch of node 0's pivot chain, over all
    /// honest blocks (the rest are tips that no pivot block references yet).
    pub epoch_coverage: f64,
    pub pivot_length: usize,
    pub pivot_reversions: u64,
    pub confirmed_reversions: u64,
    pub relays: u64,
    pub stale_marked: u64,
    pub idle_attacker_wins: u64,
    pub end_time: f64,
    pub confirmation: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub config: SimConfig,
    /// Every block in creation order, genesis first.
    pub blocks: Vec<Block>,
    pub final_orders: Vec<Vec<BlockId>>,
    pub rows: Vec<BlockRow>,
    pub metrics: SimMetrics,
    /// Per-block confirmation latency in seconds, in creation order.
    pub latencies: Vec<(BlockId, f64)>,
    pub attack_moves: Vec<AttackMove>,
}

impl SimTrace {
    /// CSV with columns `id,miner,time,epoch,position`.
    pub fn blocks_csv(&self) -> String {
        let mut out = String::from("id,miner,time,epoch,position\n");
        let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.id,
                r.miner,
                r.time,
                opt(r.epoch),
                opt(r.position)
            ));
        }
        out
    }
}

fn honest_non_genesis(dag: &DagState, b: BlockId) -> bool {
    b != GENESIS && dag.block(b).is_some_and(|x| x.miner.is_honest())
}

pub(super) fn build(sim: Simulation) -> SimTrace {
    let node0 = &sim.nodes[0].dag;
    let order = node0.total_order();
    let epochs = node0.epochs();
    let honest = node0.blocks().filter(|b| honest_non_genesis(node0, b.id)).count();
    let kept = match sim.config.rule {
        Rule::Conflux => order.iter().filter(|b| honest_non_genesis(node0, **b)).count(),
        Rule::Ghost => node0
            .baseline_chain(ChainRule::Ghost)
            .iter()
            .filter(|b| honest_non_genesis(node0, **b))
            .count(),
        Rule::Longest => node0
            .baseline_chain(ChainRule::Longest)
            .iter()
            .filter(|b| honest_non_genesis(node0, **b))
            .count(),
    };
    let in_epochs = epochs
        .epoch_of
        .keys()
        .filter(|b| honest_non_genesis(node0, **b))
        .count();
    let ratio = |x: usize| if honest == 0 { 1.0 } else { x as f64 / honest as f64 };

    let position: HashMap<BlockId, usize> = order.iter().enumerate().map(|(i, b)| (*b, i)).collect();
    let rows = sim
        .created
        .iter()
        .filter(|b| node0.contains(b.id))
        .map(|b| BlockRow {
            id: b.id,
            miner: b.miner.to_string(),
            time: b.timestamp,
            epoch: epochs.epoch_of.get(&b.id).copied(),
            position: position.get(&b.id).copied(),
        })
        .collect();

    let mut latencies = Vec::new();
    if sim.config.track_confirmation {
        let public_epochs = sim.public.epochs();
        for b in &sim.created {
            if !b.miner.is_honest() || b.id == GENESIS {
                continue;
            }
            let Some(&e) = public_epochs.epoch_of.get(&b.id) else {
                continue;
            };
            if let Some(&at) = sim.confirm_time.get(&public_epochs.pivot[e]) {
                latencies.push((b.id, (at - b.timestamp).max(0.0)));
            }
        }
    }
    let values: Vec<f64> = latencies.iter().map(|(_, l)| *l).collect();

    let metrics = SimMetrics {
        honest_blocks: honest,
        attacker_blocks: sim.created.iter().filter(|b| !b.miner.is_honest()).count(),
        utilization: ratio(kept),
        epoch_coverage: ratio(in_epochs),
        pivot_length: epochs.pivot.len(),
        pivot_reversions: sim.counters.pivot_reversions,
        confirmed_reversions: sim.counters.confirmed_reversions,
        relays: sim.counters.relays,
        stale_marked: sim.counters.stale_marked,
        idle_attacker_wins: sim.counters.idle_attacker_wins,
        end_time: sim.now,
        confirmation: Summary::of(&values),
    };
    SimTrace {
        final_orders: sim.nodes.iter().map(|n| n.dag.total_order()).collect(),
        blocks: sim.created.iter().map(|b| (**b).clone()).collect(),
        rows,
        metrics,
        latencies,
        attack_moves: sim.attacker.as_ref().map(|a| a.moves().to_vec()).unwrap_or_default(),
        config: sim.config,
    }
}
