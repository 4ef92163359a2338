//! Pivot chain selection, epoch partition and the block total order.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{BlockId, DagError, DagState};

/// Chain-selection rule used by the chain-based baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainRule {
    Longest,
    Ghost,
}

/// Blocks grouped by the pivot block whose epoch they fall in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EpochPartition {
    /// Pivot chain, genesis first.
    pub pivot: Vec<BlockId>,
    pub epoch_of: BTreeMap<BlockId, usize>,
    pub members: Vec<BTreeSet<BlockId>>,
    /// Blocks outside the past of every pivot block. They wait for a future
    /// pivot block to reference them.
    pub unordered: BTreeSet<BlockId>,
}

impl DagState {
    /// Last block of the pivot chain.
    pub fn pivot(&self) -> BlockId {
        self.id_at(self.pivot_idx_from(0))
    }

    /// Last block of the pivot chain of the subtree rooted at `b`.
    pub fn pivot_from(&self, b: BlockId) -> Result<BlockId, DagError> {
        Ok(self.id_at(self.pivot_idx_from(self.idx(b)?)))
    }

    /// Heaviest child by pivot weight, ties to the smallest id.
    fn heaviest_child(&self, i: u32) -> Option<u32> {
        // Sentinel: the first child is always adopted, so the id of "no
        // block" is never compared.
        let mut best: Option<(u64, u32)> = None;
        for &c in &self.entries[i as usize].children {
            let w = self.entries[c as usize].weight;
            let better = match best {
                None => true,
                Some((bw, bc)) => w > bw || (w == bw && self.id_at(c) < self.id_at(bc)),
            };
            if better {
                best = Some((w, c));
            }
        }
        best.map(|(_, c)| c)
    }

    fn pivot_idx_from(&self, start: u32) -> u32 {
        let mut cur = start;
        while let Some(next) = self.heaviest_child(cur) {
            cur = next;
        }
        cur
    }

    fn pivot_chain_idx(&self) -> Vec<u32> {
        let mut chain = vec![0u32];
        let mut cur = 0u32;
        while let Some(next) = self.heaviest_child(cur) {
            chain.push(next);
            cur = next;
        }
        chain
    }

    /// Pivot chain from genesis to the pivot tip.
    pub fn pivot_chain(&self) -> Vec<BlockId> {
        self.pivot_chain_idx().into_iter().map(|i| self.id_at(i)).collect()
    }

    /// Whether `b` lies on the current pivot chain. Costs O(depth of `b`)
    /// rather than a full pivot computation.
    pub fn is_on_pivot_chain(&self, b: BlockId) -> bool {
        let Ok(mut cur) = self.idx(b) else {
            return false;
        };
        while let Some(p) = self.entries[cur as usize].parent {
            if self.heaviest_child(p) != Some(cur) {
                return false;
            }
            cur = p;
        }
        true
    }

    pub fn epochs(&self) -> EpochPartition {
        let chain = self.pivot_chain_idx();
        let (epochs, assigned) = self.epochs_idx(&chain);
        let mut epoch_of = BTreeMap::new();
        let mut members = Vec::with_capacity(epochs.len());
        for (e, blocks) in epochs.iter().enumerate() {
            let set: BTreeSet<BlockId> = blocks.iter().map(|&i| self.id_at(i)).collect();
            for b in &set {
                epoch_of.insert(*b, e);
            }
            members.push(set);
        }
        let unordered = (0..self.entries.len() as u32)
            .filter(|&i| !assigned[i as usize])
            .map(|i| self.id_at(i))
            .collect();
        EpochPartition {
            pivot: chain.iter().map(|&i| self.id_at(i)).collect(),
            epoch_of,
            members,
            unordered,
        }
    }

    /// Ordered list of every block in or before the epoch of pivot block `a`.
    pub fn conflux_order(&self, a: BlockId) -> Result<Vec<BlockId>, DagError> {
        let ai = self.idx(a)?;
        let chain = self.pivot_chain_idx();
        let pos = chain
            .iter()
            .position(|&c| c == ai)
            .ok_or(DagError::NotOnPivotChain(a))?;
        let (epochs, _) = self.epochs_idx(&chain[..=pos]);
        Ok(epochs.into_iter().flatten().map(|i| self.id_at(i)).collect())
    }

    /// Order of the whole graph: the pivot tip's order followed by the blocks
    /// no pivot block reaches yet, arranged as one trailing epoch (exactly
    /// where a block generated now would put them).
    pub fn total_order(&self) -> Vec<BlockId> {
        let chain = self.pivot_chain_idx();
        let (epochs, assigned) = self.epochs_idx(&chain);
        let mut out: Vec<BlockId> = epochs.into_iter().flatten().map(|i| self.id_at(i)).collect();
        let rest: Vec<u32> = (0..self.entries.len() as u32)
            .filter(|&i| !assigned[i as usize])
            .collect();
        out.extend(self.order_rounds(&rest).into_iter().map(|i| self.id_at(i)));
        out
    }

    pub fn baseline_chain(&self, rule: ChainRule) -> Vec<BlockId> {
        match rule {
            ChainRule::Ghost => self.pivot_chain(),
            ChainRule::Longest => self.longest_chain_idx().into_iter().map(|i| self.id_at(i)).collect(),
        }
    }

    /// Tip of the longest parental chain (ties to the smallest id at each
    /// divergence).
    pub fn longest_tip(&self) -> BlockId {
        self.id_at(*self.longest_chain_idx().last().expect("chain holds genesis"))
    }

    fn longest_chain_idx(&self) -> Vec<u32> {
        // Entries are topologically ordered, so children always come after
        // their parent.
        let n = self.entries.len();
        let mut height = vec![0u32; n];
        for i in (0..n).rev() {
            if let Some(p) = self.entries[i].parent {
                let p = p as usize;
                height[p] = height[p].max(height[i] + 1);
            }
        }
        let mut chain = vec![0u32];
        let mut cur = 0u32;
        loop {
            let best = self.entries[cur as usize]
                .children
                .iter()
                .copied()
                .max_by(|&a, &b| {
                    height[a as usize]
                        .cmp(&height[b as usize])
                        .then_with(|| self.id_at(b).cmp(&self.id_at(a)))
                });
            match best {
                Some(c) => {
                    chain.push(c);
                    cur = c;
                }
                None => return chain,
            }
        }
    }

    /// Epoch sets for a prefix of the pivot chain, each already in final
    /// order. The epoch of pivot block `a` is found by walking `a`'s past and
    /// stopping at blocks already assigned to an earlier epoch; those are
    /// exactly the past of `a`'s parent.
    fn epochs_idx(&self, chain: &[u32]) -> (Vec<Vec<u32>>, Vec<bool>) {
        let mut assigned = vec![false; self.entries.len()];
        let mut epochs = Vec::with_capacity(chain.len());
        for &a in chain {
            let mut delta = Vec::new();
            let mut stack = vec![a];
            assigned[a as usize] = true;
            while let Some(x) = stack.pop() {
                delta.push(x);
                for &o in &self.entries[x as usize].out {
                    if !assigned[o as usize] {
                        assigned[o as usize] = true;
                        stack.push(o);
                    }
                }
            }
            epochs.push(self.order_rounds(&delta));
        }
        (epochs, assigned)
    }

    /// Topological sort of `set` in rounds: each round takes every block with
    /// no remaining out-edge into the set, sorted by id.
    fn order_rounds(&self, set: &[u32]) -> Vec<u32> {
        let local: HashMap<u32, usize> = set.iter().enumerate().map(|(k, &i)| (i, k)).collect();
        let mut remaining = vec![0usize; set.len()];
        let mut referrers: Vec<Vec<usize>> = vec![Vec::new(); set.len()];
        for (k, &i) in set.iter().enumerate() {
            for o in &self.entries[i as usize].out {
                if let Some(&ko) = local.get(o) {
                    remaining[k] += 1;
                    referrers[ko].push(k);
                }
            }
        }
        let mut round: Vec<usize> = (0..set.len()).filter(|&k| remaining[k] == 0).collect();
        let mut out = Vec::with_capacity(set.len());
        while !round.is_empty() {
            round.sort_unstable_by_key(|&k| self.id_at(set[k]));
            let mut next = Vec::new();
            for &k in &round {
                out.push(set[k]);
                for &r in &referrers[k] {
                    remaining[r] -= 1;
                    if remaining[r] == 0 {
                        next.push(r);
                    }
                }
            }
            round = next;
        }
        debug_assert_eq!(out.len(), set.len(), "graph is acyclic");
        out
    }
}
