//! Block DAG data model.
//!
//! A [`DagState`] holds one node's view of the block graph: every block has a
//! single parent edge (forming the parental tree rooted at genesis) and any
//! number of reference edges. Blocks are only linked into the graph once their
//! whole past is present; anything else waits in a pending buffer.

mod file;
mod order;

pub use file::{parse_dag_file, write_dag_file, DagFile, DagFileError, DAG_FILE_HEADER};
pub use order::{ChainRule, EpochPartition};

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::Transaction;

/// Opaque block identifier. Unique within a graph and totally ordered; all
/// tie-breaking in the protocol goes through this ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlockId(pub u64);

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Who produced a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Miner {
    Honest(u32),
    Adversary,
}

impl Miner {
    pub fn is_honest(self) -> bool {
        matches!(self, Miner::Honest(_))
    }
}

impl fmt::Display for Miner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Miner::Honest(n) => write!(f, "node{n}"),
            Miner::Adversary => f.write_str("adversary"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub id: BlockId,
    /// `None` only for genesis.
    pub parent: Option<BlockId>,
    /// Reference edges, excluding the parent. Kept sorted and distinct.
    pub references: Vec<BlockId>,
    pub transactions: Vec<Transaction>,
    /// Simulated seconds.
    pub timestamp: f64,
    pub miner: Miner,
}

impl Block {
    pub fn genesis(id: BlockId) -> Self {
        Block {
            id,
            parent: None,
            references: Vec::new(),
            transactions: Vec::new(),
            timestamp: 0.0,
            miner: Miner::Honest(0),
        }
    }

    /// Builds a block, normalizing the reference list (sorted, deduplicated,
    /// parent removed).
    pub fn new(
        id: BlockId,
        parent: BlockId,
        references: impl IntoIterator<Item = BlockId>,
        timestamp: f64,
        miner: Miner,
    ) -> Self {
        let mut refs: Vec<BlockId> = references.into_iter().filter(|r| *r != parent).collect();
        refs.sort_unstable();
        refs.dedup();
        Block {
            id,
            parent: Some(parent),
            references: refs,
            transactions: Vec::new(),
            timestamp,
            miner,
        }
    }

    pub fn with_transactions(mut self, txs: Vec<Transaction>) -> Self {
        self.transactions = txs;
        self
    }

    /// Parent followed by references.
    pub fn out_edges(&self) -> impl Iterator<Item = BlockId> + '_ {
        self.parent.iter().copied().chain(self.references.iter().copied())
    }

    fn check_shape(&self) -> Result<(), DagError> {
        let invalid = |reason: &str| DagError::InvalidBlock {
            id: self.id,
            reason: reason.to_string(),
        };
        let Some(parent) = self.parent else {
            return Err(invalid("only genesis may omit the parent"));
        };
        if parent == self.id || self.references.contains(&self.id) {
            return Err(DagError::CyclicReference(self.id));
        }
        if self.references.contains(&parent) {
            return Err(invalid("parent also listed as a reference"));
        }
        let distinct: HashSet<_> = self.references.iter().collect();
        if distinct.len() != self.references.len() {
            return Err(invalid("duplicate reference"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DagError {
    #[error("block {0} is already present")]
    DuplicateBlock(BlockId),
    #[error("inserting block {0} would create a cycle")]
    CyclicReference(BlockId),
    #[error("unknown block {0}")]
    UnknownBlock(BlockId),
    #[error("block {0} is not on the pivot chain")]
    NotOnPivotChain(BlockId),
    #[error("invalid block {id}: {reason}")]
    InvalidBlock { id: BlockId, reason: String },
}

/// Per-block bookkeeping. Indices are positions in `DagState::entries`, which
/// is always a topological order (every block after its whole past).
#[derive(Debug, Clone)]
struct Entry {
    block: Arc<Block>,
    parent: Option<u32>,
    out: Vec<u32>,
    children: Vec<u32>,
    incoming: u32,
    depth: u32,
    subtree_size: u64,
    weight: u64,
    honest_weight: u64,
    stale: bool,
}

#[derive(Debug, Clone, Default)]
struct Pending {
    blocks: HashMap<BlockId, Arc<Block>>,
    /// missing dependency -> blocks waiting on it
    waiting: HashMap<BlockId, Vec<BlockId>>,
}

/// One node's local block graph.
///
/// Alongside the raw graph it keeps three per-block subtree counters, updated
/// incrementally along the parent path on every insertion:
/// `subtree_size` (all blocks), `weight` (blocks not flagged stale, used for
/// pivot selection) and `honest_weight` (blocks with an honest miner).
#[derive(Debug, Clone)]
pub struct DagState {
    entries: Vec<Entry>,
    index: HashMap<BlockId, u32>,
    pending: Pending,
}

impl DagState {
    pub fn new(genesis: Block) -> Result<Self, DagError> {
        if genesis.parent.is_some() || !genesis.references.is_empty() {
            return Err(DagError::InvalidBlock {
                id: genesis.id,
                reason: "genesis must have no parent and no references".into(),
            });
        }
        let id = genesis.id;
        let honest = genesis.miner.is_honest() as u64;
        let mut index = HashMap::new();
        index.insert(id, 0);
        Ok(DagState {
            entries: vec![Entry {
                block: Arc::new(genesis),
                parent: None,
                out: Vec::new(),
                children: Vec::new(),
                incoming: 0,
                depth: 0,
                subtree_size: 1,
                weight: 1,
                honest_weight: honest,
                stale: false,
            }],
            index,
            pending: Pending::default(),
        })
    }

    pub fn genesis(&self) -> BlockId {
        self.entries[0].block.id
    }

    /// Number of valid (linked) blocks.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: BlockId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn is_pending(&self, id: BlockId) -> bool {
        self.pending.blocks.contains_key(&id)
    }

    pub fn pending_ids(&self) -> BTreeSet<BlockId> {
        self.pending.blocks.keys().copied().collect()
    }

    pub fn block(&self, id: BlockId) -> Option<&Block> {
        self.index.get(&id).map(|&i| &*self.entries[i as usize].block)
    }

    pub fn block_arc(&self, id: BlockId) -> Option<&Arc<Block>> {
        self.index.get(&id).map(|&i| &self.entries[i as usize].block)
    }

    /// Valid blocks in insertion order (a topological order).
    pub fn blocks(&self) -> impl Iterator<Item = &Block> + '_ {
        self.entries.iter().map(|e| &*e.block)
    }

    pub fn block_ids(&self) -> BTreeSet<BlockId> {
        self.index.keys().copied().collect()
    }

    pub fn parent(&self, id: BlockId) -> Result<Option<BlockId>, DagError> {
        Ok(self.entries[self.idx(id)? as usize]
            .parent
            .map(|p| self.id_at(p)))
    }

    pub fn children(&self, id: BlockId) -> Result<BTreeSet<BlockId>, DagError> {
        let e = &self.entries[self.idx(id)? as usize];
        Ok(e.children.iter().map(|&c| self.id_at(c)).collect())
    }

    /// Blocks sharing this block's parent, excluding itself.
    pub fn siblings(&self, id: BlockId) -> Result<BTreeSet<BlockId>, DagError> {
        let i = self.idx(id)?;
        Ok(match self.entries[i as usize].parent {
            None => BTreeSet::new(),
            Some(p) => self.entries[p as usize]
                .children
                .iter()
                .filter(|&&c| c != i)
                .map(|&c| self.id_at(c))
                .collect(),
        })
    }

    pub fn subtree_size(&self, id: BlockId) -> Result<u64, DagError> {
        Ok(self.entries[self.idx(id)? as usize].subtree_size)
    }

    /// Subtree size ignoring stale blocks; this is what pivot selection uses.
    pub fn weight(&self, id: BlockId) -> Result<u64, DagError> {
        Ok(self.entries[self.idx(id)? as usize].weight)
    }

    /// Number of honest-mined blocks in the subtree.
    pub fn honest_weight(&self, id: BlockId) -> Result<u64, DagError> {
        Ok(self.entries[self.idx(id)? as usize].honest_weight)
    }

    pub fn is_stale(&self, id: BlockId) -> Result<bool, DagError> {
        Ok(self.entries[self.idx(id)? as usize].stale)
    }

    /// Distance from genesis along parent edges.
    pub fn depth(&self, id: BlockId) -> Result<u32, DagError> {
        Ok(self.entries[self.idx(id)? as usize].depth)
    }

    /// Blocks with no incoming edge of either kind.
    pub fn tips(&self) -> BTreeSet<BlockId> {
        self.entries
            .iter()
            .filter(|e| e.incoming == 0)
            .map(|e| e.block.id)
            .collect()
    }

    pub fn insert_block(&mut self, block: Block) -> Result<Vec<BlockId>, DagError> {
        self.insert_block_with(block, &mut |_, _| false)
    }

    /// Inserts `block`, buffering it until its ancestry is complete.
    ///
    /// `classify_stale` is consulted for each block right before it is linked
    /// in, with the graph as it stands at that moment. Returns the ids that
    /// became valid, in the order they were linked.
    pub fn insert_block_with(
        &mut self,
        block: Block,
        classify_stale: &mut dyn FnMut(&DagState, &Block) -> bool,
    ) -> Result<Vec<BlockId>, DagError> {
        self.insert_arc_with(Arc::new(block), classify_stale)
    }

    pub fn insert_arc(&mut self, block: Arc<Block>) -> Result<Vec<BlockId>, DagError> {
        self.insert_arc_with(block, &mut |_, _| false)
    }

    pub fn insert_arc_with(
        &mut self,
        block: Arc<Block>,
        classify_stale: &mut dyn FnMut(&DagState, &Block) -> bool,
    ) -> Result<Vec<BlockId>, DagError> {
        let id = block.id;
        if self.contains(id) || self.is_pending(id) {
            return Err(DagError::DuplicateBlock(id));
        }
        block.check_shape()?;

        let missing: Vec<BlockId> = block.out_edges().filter(|d| !self.contains(*d)).collect();
        if !missing.is_empty() {
            if self.reaches_through_pending(&missing, id) {
                return Err(DagError::CyclicReference(id));
            }
            for m in &missing {
                self.pending.waiting.entry(*m).or_default().push(id);
            }
            self.pending.blocks.insert(id, block);
            return Ok(Vec::new());
        }

        let mut linked = Vec::new();
        let mut queue = VecDeque::from([block]);
        while let Some(b) = queue.pop_front() {
            let stale = classify_stale(self, &b);
            let bid = b.id;
            self.link(b, stale);
            linked.push(bid);
            if let Some(waiters) = self.pending.waiting.remove(&bid) {
                for w in waiters {
                    let ready = self
                        .pending
                        .blocks
                        .get(&w)
                        .is_some_and(|wb| wb.out_edges().all(|d| self.contains(d)));
                    if ready {
                        if let Some(wb) = self.pending.blocks.remove(&w) {
                            queue.push_back(wb);
                        }
                    }
                }
            }
        }
        Ok(linked)
    }

    /// Whether following missing dependencies through the pending buffer
    /// leads back to `target`.
    fn reaches_through_pending(&self, start: &[BlockId], target: BlockId) -> bool {
        let mut seen = HashSet::new();
        let mut stack: Vec<BlockId> = start.to_vec();
        while let Some(x) = stack.pop() {
            if x == target {
                return true;
            }
            if !seen.insert(x) {
                continue;
            }
            if let Some(b) = self.pending.blocks.get(&x) {
                stack.extend(b.out_edges().filter(|d| !self.contains(*d)));
            }
        }
        false
    }

    fn link(&mut self, block: Arc<Block>, stale: bool) {
        let pos = self.entries.len() as u32;
        let parent = block.parent.map(|p| self.index[&p]);
        let out: Vec<u32> = block.out_edges().map(|d| self.index[&d]).collect();
        for &o in &out {
            self.entries[o as usize].incoming += 1;
        }
        let honest = block.miner.is_honest() as u64;
        let live = (!stale) as u64;
        let depth = parent.map_or(0, |p| self.entries[p as usize].depth + 1);
        if let Some(p) = parent {
            self.entries[p as usize].children.push(pos);
        }
        let mut cursor = parent;
        while let Some(c) = cursor {
            let e = &mut self.entries[c as usize];
            e.subtree_size += 1;
            e.weight += live;
            e.honest_weight += honest;
            cursor = e.parent;
        }
        self.index.insert(block.id, pos);
        self.entries.push(Entry {
            block,
            parent,
            out,
            children: Vec::new(),
            incoming: 0,
            depth,
            subtree_size: 1,
            weight: live,
            honest_weight: honest,
            stale,
        });
    }

    /// Flags an already linked block as stale, removing it from the pivot
    /// weights of its ancestors. Idempotent.
    pub fn mark_stale(&mut self, id: BlockId) -> Result<(), DagError> {
        let i = self.idx(id)? as usize;
        if self.entries[i].stale {
            return Ok(());
        }
        self.entries[i].stale = true;
        let mut cursor = Some(i as u32);
        while let Some(c) = cursor {
            let e = &mut self.entries[c as usize];
            e.weight -= 1;
            cursor = e.parent;
        }
        Ok(())
    }

    /// Genesis-to-`b` path along parent edges.
    pub fn chain(&self, b: BlockId) -> Result<Vec<BlockId>, DagError> {
        let mut cursor = Some(self.idx(b)?);
        let mut path = Vec::new();
        while let Some(c) = cursor {
            path.push(self.id_at(c));
            cursor = self.entries[c as usize].parent;
        }
        path.reverse();
        Ok(path)
    }

    /// All blocks reachable from `b` through parent and reference edges,
    /// including `b`.
    pub fn past(&self, b: BlockId) -> Result<BTreeSet<BlockId>, DagError> {
        let start = self.idx(b)?;
        let mut seen = vec![false; self.entries.len()];
        let mut stack = vec![start];
        seen[start as usize] = true;
        let mut out = BTreeSet::new();
        while let Some(x) = stack.pop() {
            out.insert(self.id_at(x));
            for &o in &self.entries[x as usize].out {
                if !seen[o as usize] {
                    seen[o as usize] = true;
                    stack.push(o);
                }
            }
        }
        Ok(out)
    }

    /// Blocks in the parental subtree rooted at `b`, including `b`.
    pub fn subtree(&self, b: BlockId) -> Result<BTreeSet<BlockId>, DagError> {
        let start = self.idx(b)?;
        let mut out = BTreeSet::new();
        let mut stack = vec![start];
        while let Some(x) = stack.pop() {
            out.insert(self.id_at(x));
            stack.extend(self.entries[x as usize].children.iter().copied());
        }
        Ok(out)
    }

    /// Rebuilds every subtree counter from scratch and compares it with the
    /// incrementally maintained value. Returns the first mismatching block.
    pub fn verify_subtree_counters(&self) -> Option<BlockId> {
        let n = self.entries.len();
        let mut size = vec![1u64; n];
        let mut weight: Vec<u64> = self.entries.iter().map(|e| (!e.stale) as u64).collect();
        let mut honest: Vec<u64> = self
            .entries
            .iter()
            .map(|e| e.block.miner.is_honest() as u64)
            .collect();
        for i in (0..n).rev() {
            if let Some(p) = self.entries[i].parent {
                let p = p as usize;
                size[p] += size[i];
                weight[p] += weight[i];
                honest[p] += honest[i];
            }
        }
        (0..n)
            .find(|&i| {
                let e = &self.entries[i];
                e.subtree_size != size[i] || e.weight != weight[i] || e.honest_weight != honest[i]
            })
            .map(|i| self.id_at(i as u32))
    }

    fn idx(&self, id: BlockId) -> Result<u32, DagError> {
        self.index.get(&id).copied().ok_or(DagError::UnknownBlock(id))
    }

    fn id_at(&self, i: u32) -> BlockId {
        self.entries[i as usize].block.id
    }
}

/// Two states are equal when they hold the same valid blocks with the same
/// stale flags and the same pending buffer, regardless of insertion order.
impl PartialEq for DagState {
    fn eq(&self, other: &Self) -> bool {
        if self.genesis() != other.genesis()
            || self.entries.len() != other.entries.len()
            || self.pending_ids() != other.pending_ids()
        {
            return false;
        }
        self.entries.iter().all(|e| match other.index.get(&e.block.id) {
            None => false,
            Some(&j) => {
                let o = &other.entries[j as usize];
                e.block == o.block
                    && e.stale == o.stale
                    && e.subtree_size == o.subtree_size
                    && e.weight == o.weight
            }
        })
    }
}
