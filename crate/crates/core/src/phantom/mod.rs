//! Greedy blue-set coloring and main chain of the PHANTOM protocol.
//!
//! Every edge counts as a plain reference here; the parent/reference split of
//! [`DagState`] is ignored. `past(b)` excludes `b` itself and a block's score
//! is `|Blue_k(past(b))|`.

mod attack;

pub use attack::{
    attack_success_probability, attack_success_probability_for_share, build_attack_dag, h, mining_race_success,
    run_liveness_attack, AttackDag, AttackSchedule, Checkpoint, LemmaChecks, LivenessReport, MiningRace,
    PhantomError, Role, MALICIOUS_BASE,
};

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};

use crate::dag::{BlockId, DagState};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhantomColoring {
    pub k: usize,
    pub blue: BTreeSet<BlockId>,
    pub score: BTreeMap<BlockId, usize>,
    /// Genesis first, `b_max` of the whole graph last.
    pub main_chain: Vec<BlockId>,
}

/// Coloring of every `past(b)` in a graph, computed once and shared by all
/// ancestor-closed views of that graph.
#[derive(Debug, Clone)]
pub struct Phantom {
    k: usize,
    ids: Vec<BlockId>,
    index: HashMap<BlockId, usize>,
    out: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    past: Vec<FixedBitSet>,
    future: Vec<FixedBitSet>,
    /// `Blue_k(past(b))`.
    blue_past: Vec<FixedBitSet>,
    /// `b_max` of `past(b)`.
    selected: Vec<Option<usize>>,
}

impl Phantom {
    pub fn new(state: &DagState, k: usize) -> Self {
        let ids: Vec<BlockId> = state.blocks().map(|b| b.id).collect();
        let n = ids.len();
        let index: HashMap<BlockId, usize> = ids.iter().enumerate().map(|(i, b)| (*b, i)).collect();
        let out: Vec<Vec<usize>> = state
            .blocks()
            .map(|b| b.out_edges().map(|o| index[&o]).collect())
            .collect();
        let mut children = vec![Vec::new(); n];
        for (i, outs) in out.iter().enumerate() {
            for &o in outs {
                children[o].push(i);
            }
        }
        // blocks() is topological: every block after its whole past
        let mut past = vec![FixedBitSet::with_capacity(n); n];
        for i in 0..n {
            let mut p = FixedBitSet::with_capacity(n);
            for &o in &out[i] {
                p.union_with(&past[o]);
                p.insert(o);
            }
            past[i] = p;
        }
        let mut future = vec![FixedBitSet::with_capacity(n); n];
        for i in (0..n).rev() {
            for &o in &out[i] {
                let (lo, hi) = future.split_at_mut(i);
                lo[o].union_with(&hi[0]);
                lo[o].insert(i);
            }
        }
        let mut ph = Phantom {
            k,
            ids,
            index,
            out,
            children,
            past,
            future,
            blue_past: Vec::with_capacity(n),
            selected: Vec::with_capacity(n),
        };
        for i in 0..n {
            let tips = ph.tips_of_past(i);
            let (blue, sel) = ph.color(&ph.past[i].clone(), &tips);
            ph.blue_past.push(blue);
            ph.selected.push(sel);
        }
        ph
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Maximal elements of `past(i)`: direct references that are not
    /// ancestors of another direct reference.
    fn tips_of_past(&self, i: usize) -> Vec<usize> {
        let refs = &self.out[i];
        refs.iter()
            .copied()
            .filter(|&r| !refs.iter().any(|&o| o != r && self.past[o].contains(r)))
            .collect()
    }

    fn score_idx(&self, i: usize) -> usize {
        self.blue_past[i].count_ones(..)
    }

    fn pick_max(&self, tips: &[usize]) -> Option<usize> {
        tips.iter().copied().min_by(|&a, &b| {
            self.score_idx(b)
                .cmp(&self.score_idx(a))
                .then_with(|| self.ids[a].cmp(&self.ids[b]))
        })
    }

    /// Blue set of the ancestor-closed set `set` whose maximal elements are
    /// `tips`.
    fn color(&self, set: &FixedBitSet, tips: &[usize]) -> (FixedBitSet, Option<usize>) {
        let n = self.ids.len();
        let Some(bmax) = self.pick_max(tips) else {
            return (FixedBitSet::with_capacity(n), None);
        };
        let mut blue = self.blue_past[bmax].clone();
        blue.insert(bmax);
        // anti(b_max) within the set; b_max is maximal so nothing in the set
        // descends from it
        let mut anti = set.clone();
        anti.difference_with(&self.past[bmax]);
        anti.set(bmax, false);
        for x in self.kahn_order(&anti) {
            let mut related = self.past[x].clone();
            related.union_with(&self.future[x]);
            related.insert(x);
            let blue_anti = blue.difference(&related).count();
            if blue_anti < self.k {
                blue.insert(x);
            }
        }
        (blue, Some(bmax))
    }

    /// Topological order of a subset, ancestors first, ties to the smallest id.
    fn kahn_order(&self, subset: &FixedBitSet) -> Vec<usize> {
        let members: Vec<usize> = subset.ones().collect();
        let mut waiting: HashMap<usize, usize> = HashMap::with_capacity(members.len());
        let mut dependants: HashMap<usize, Vec<usize>> = HashMap::new();
        let mut ready = BinaryHeap::new();
        for &x in &members {
            let deps: Vec<usize> = self.out[x].iter().copied().filter(|o| subset.contains(*o)).collect();
            for &o in &deps {
                dependants.entry(o).or_default().push(x);
            }
            if deps.is_empty() {
                ready.push(Reverse((self.ids[x], x)));
            } else {
                waiting.insert(x, deps.len());
            }
        }
        let mut order = Vec::with_capacity(members.len());
        while let Some(Reverse((_, x))) = ready.pop() {
            order.push(x);
            for &y in dependants.get(&x).map(Vec::as_slice).unwrap_or(&[]) {
                let w = waiting.get_mut(&y).expect("dependant is waiting");
                *w -= 1;
                if *w == 0 {
                    ready.push(Reverse((self.ids[y], y)));
                }
            }
        }
        order
    }

    fn to_ids(&self, set: &FixedBitSet) -> BTreeSet<BlockId> {
        set.ones().map(|i| self.ids[i]).collect()
    }

    pub fn score(&self, b: BlockId) -> Option<usize> {
        self.index.get(&b).map(|&i| self.score_idx(i))
    }

    /// `Blue_k(past(b))`.
    pub fn blue_past(&self, b: BlockId) -> Option<BTreeSet<BlockId>> {
        self.index.get(&b).map(|&i| self.to_ids(&self.blue_past[i]))
    }

    /// `past(b)`, excluding `b`.
    pub fn past(&self, b: BlockId) -> Option<BTreeSet<BlockId>> {
        self.index.get(&b).map(|&i| self.to_ids(&self.past[i]))
    }

    /// Blocks neither in the past nor in the future of `b`, within `view`
    /// (the whole graph when `None`).
    pub fn anti(&self, b: BlockId, view: Option<&BTreeSet<BlockId>>) -> Option<BTreeSet<BlockId>> {
        let i = *self.index.get(&b)?;
        let mut related = self.past[i].clone();
        related.union_with(&self.future[i]);
        related.insert(i);
        Some(
            (0..self.ids.len())
                .filter(|j| !related.contains(*j))
                .map(|j| self.ids[j])
                .filter(|id| view.is_none_or(|v| v.contains(id)))
                .collect(),
        )
    }

    fn view_bits(&self, view: &BTreeSet<BlockId>) -> FixedBitSet {
        let mut bits = FixedBitSet::with_capacity(self.ids.len());
        for b in view {
            bits.insert(self.index[b]);
        }
        bits
    }

    fn view_tips(&self, bits: &FixedBitSet) -> Vec<usize> {
        bits.ones()
            .filter(|&i| !self.children[i].iter().any(|c| bits.contains(*c)))
            .collect()
    }

    /// True when `x` and `y` are distinct and neither is an ancestor of the
    /// other.
    pub fn in_anti(&self, x: BlockId, y: BlockId) -> bool {
        let (i, j) = (self.index[&x], self.index[&y]);
        i != j && !self.past[i].contains(j) && !self.future[i].contains(j)
    }

    /// `|anti(b) ∩ S|` where `S` is the set of blocks satisfying `pred`.
    pub fn anti_count(&self, b: BlockId, pred: impl Fn(BlockId) -> bool) -> usize {
        let i = self.index[&b];
        let count = |set: &FixedBitSet| set.ones().filter(|&x| pred(self.ids[x])).count();
        let total = self.ids.iter().enumerate().filter(|&(x, id)| x != i && pred(*id)).count();
        total - count(&self.past[i]) - count(&self.future[i])
    }

    /// Whether `Blue_k(past(b))` is exactly the members of `past(b)` that
    /// satisfy `pred`.
    pub fn blue_past_is(&self, b: BlockId, pred: impl Fn(BlockId) -> bool) -> bool {
        let i = self.index[&b];
        self.past[i]
            .ones()
            .all(|x| self.blue_past[i].contains(x) == pred(self.ids[x]))
    }

    /// Main chain ending at the best of the given tips. Genesis first.
    pub fn main_chain_from_tips(&self, tips: &[BlockId]) -> Vec<BlockId> {
        let tips: Vec<usize> = tips.iter().map(|t| self.index[t]).collect();
        self.chain_down(self.pick_max(&tips))
    }

    fn chain_down(&self, mut cur: Option<usize>) -> Vec<BlockId> {
        let mut chain = Vec::new();
        while let Some(c) = cur {
            chain.push(self.ids[c]);
            cur = self.selected[c];
        }
        chain.reverse();
        chain
    }

    /// Main chain of an ancestor-closed subset of the graph: its `b_max`,
    /// then the `b_max` of that block's past, down to genesis. Genesis first.
    pub fn main_chain_of(&self, view: &BTreeSet<BlockId>) -> Vec<BlockId> {
        let bits = self.view_bits(view);
        self.chain_down(self.pick_max(&self.view_tips(&bits)))
    }

    /// Full coloring of an ancestor-closed subset of the graph.
    pub fn coloring_of(&self, view: &BTreeSet<BlockId>) -> PhantomColoring {
        let bits = self.view_bits(view);
        let (blue, _) = self.color(&bits, &self.view_tips(&bits));
        PhantomColoring {
            k: self.k,
            blue: self.to_ids(&blue),
            score: bits.ones().map(|i| (self.ids[i], self.score_idx(i))).collect(),
            main_chain: self.main_chain_of(view),
        }
    }

    pub fn coloring(&self) -> PhantomColoring {
        self.coloring_of(&self.ids.iter().copied().collect())
    }
}

pub fn phantom_color(state: &DagState, k: usize) -> PhantomColoring {
    Phantom::new(state, k).coloring()
}
