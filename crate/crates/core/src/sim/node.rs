//! Honest node behaviour: merging received blocks and generating new ones.

use std::collections::HashMap;
use std::sync::Arc;

use crate::dag::{Block, BlockId, DagState, Miner};
use crate::ledger::Transaction;

use super::Rule;

/// Timestamp sanity rule applied to every block a node links in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaleRule {
    pub window: usize,
    pub future: Option<f64>,
}

impl StaleRule {
    pub const OFF: StaleRule = StaleRule {
        window: 0,
        future: None,
    };

    /// Stale when the timestamp is older than the median timestamp of the
    /// last `window` pivot blocks in `dag`, or further ahead of `now` than
    /// `future`.
    pub fn is_stale(&self, dag: &DagState, block: &Block, now: f64) -> bool {
        if let Some(f) = self.future {
            if block.timestamp > now + f {
                return true;
            }
        }
        if self.window == 0 {
            return false;
        }
        let chain = dag.pivot_chain();
        let recent = &chain[chain.len().saturating_sub(self.window)..];
        let mut ts: Vec<f64> = recent
            .iter()
            .map(|b| dag.block(*b).expect("pivot block present").timestamp)
            .collect();
        ts.sort_by(f64::total_cmp);
        block.timestamp < ts[ts.len() / 2]
    }
}

#[derive(Debug, Clone)]
pub struct NodeState {
    pub id: u32,
    pub dag: DagState,
    pub receipt_time: HashMap<BlockId, f64>,
}

impl NodeState {
    pub fn new(id: u32, genesis: Block) -> Self {
        let gid = genesis.id;
        NodeState {
            id,
            dag: DagState::new(genesis).expect("genesis block is well formed"),
            receipt_time: HashMap::from([(gid, 0.0)]),
        }
    }

    /// Merges a delivered block. Returns the blocks that became valid, which
    /// the node relays once each; a duplicate yields nothing.
    pub fn on_receive(&mut self, block: Arc<Block>, now: f64, stale: &StaleRule) -> Vec<BlockId> {
        let mut classify = |dag: &DagState, b: &Block| stale.is_stale(dag, b, now);
        let linked = match self.dag.insert_arc_with(block, &mut classify) {
            Ok(linked) => linked,
            Err(_) => return Vec::new(),
        };
        for id in &linked {
            self.receipt_time.insert(*id, now);
        }
        linked
    }

    /// Builds this node's next block under `rule`.
    pub fn on_generate(&self, id: BlockId, now: f64, rule: Rule, txs: Vec<Transaction>) -> Block {
        let dag = &self.dag;
        let (parent, refs) = match rule {
            Rule::Conflux => {
                let parent = dag.pivot();
                (parent, dag.tips().into_iter().filter(|t| *t != parent).collect())
            }
            Rule::Ghost => (dag.pivot(), Vec::new()),
            Rule::Longest => (dag.longest_tip(), Vec::new()),
        };
        Block::new(id, parent, refs, now, Miner::Honest(self.id)).with_transactions(txs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blk(id: u64, parent: u64, ts: f64) -> Arc<Block> {
        Arc::new(Block::new(BlockId(id), BlockId(parent), [], ts, Miner::Honest(1)))
    }

    #[test]
    fn duplicate_delivery_changes_nothing() {
        let mut n = NodeState::new(0, Block::genesis(BlockId(0)));
        assert_eq!(n.on_receive(blk(1, 0, 1.0), 1.0, &StaleRule::OFF), vec![BlockId(1)]);
        let before = n.dag.clone();
        assert!(n.on_receive(blk(1, 0, 1.0), 2.0, &StaleRule::OFF).is_empty());
        assert_eq!(n.dag, before);
        assert_eq!(n.receipt_time[&BlockId(1)], 1.0);
    }

    #[test]
    fn child_before_parent() {
        let mut n = NodeState::new(0, Block::genesis(BlockId(0)));
        assert!(n.on_receive(blk(2, 1, 2.0), 2.0, &StaleRule::OFF).is_empty());
        assert_eq!(
            n.on_receive(blk(1, 0, 1.0), 3.0, &StaleRule::OFF),
            vec![BlockId(1), BlockId(2)]
        );
    }

    #[test]
    fn genesis_only_generates_plain_child() {
        let n = NodeState::new(0, Block::genesis(BlockId(0)));
        let b = n.on_generate(BlockId(5), 1.0, Rule::Conflux, vec![]);
        assert_eq!(b.parent, Some(BlockId(0)));
        assert!(b.references.is_empty());
    }

    #[test]
    fn stale_thresholds() {
        let mut n = NodeState::new(0, Block::genesis(BlockId(0)));
        for i in 1..=5u64 {
            n.on_receive(blk(i, i - 1, 10.0 * i as f64), 10.0 * i as f64, &StaleRule::OFF);
        }
        let rule = StaleRule {
            window: 3,
            future: Some(5.0),
        };
        assert!(!rule.is_stale(&n.dag, &blk(9, 5, 49.0), 50.0));
        assert!(rule.is_stale(&n.dag, &blk(9, 5, 39.0), 50.0));
        assert!(rule.is_stale(&n.dag, &blk(9, 5, 56.0), 50.0));
        assert!(!StaleRule::OFF.is_stale(&n.dag, &blk(9, 5, 1e9), 50.0));
    }
}
