#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use conflux::dag::{parse_dag_file, Block, BlockId, DagFile, DagState, Miner};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SAMPLE: &str = include_str!("../../fixtures/sample.dag");
pub const SAMPLE_SHUFFLED: &str = include_str!("../../fixtures/sample_shuffled.dag");

pub fn sample() -> (DagFile, DagState) {
    let file = parse_dag_file(SAMPLE).unwrap();
    let state = file.into_state().unwrap();
    (file, state)
}

pub fn names(file: &DagFile, ids: &[BlockId]) -> Vec<String> {
    ids.iter().map(|b| file.name(*b)).collect()
}

/// Blocks of a random DAG in a topological creation order, genesis first.
/// Ids are scrambled so that id order and creation order disagree.
pub fn random_blocks(seed: u64, n: usize) -> Vec<Block> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<u64> = (1..=n as u64 * 4).collect();
    ids.shuffle(&mut rng);
    let mut blocks = vec![Block::genesis(BlockId(0))];
    let mut tips: BTreeSet<BlockId> = BTreeSet::from([BlockId(0)]);
    for (i, &id) in ids.iter().enumerate().take(n).skip(1) {
        let existing: Vec<BlockId> = blocks.iter().map(|b| b.id).collect();
        // bias the parent towards recent blocks so chains get some depth
        let window = existing.len().min(8);
        let parent = *existing[existing.len() - window..].choose(&mut rng).unwrap();
        let tip_list: Vec<BlockId> = tips.iter().copied().filter(|t| *t != parent).collect();
        let nrefs = rng.random_range(0..=tip_list.len().min(3));
        let refs: Vec<BlockId> = tip_list.choose_multiple(&mut rng, nrefs).copied().collect();
        let miner = if rng.random_bool(0.2) {
            Miner::Adversary
        } else {
            Miner::Honest(rng.random_range(0..4))
        };
        let b = Block::new(BlockId(id), parent, refs.clone(), i as f64, miner);
        tips.remove(&parent);
        for r in &refs {
            tips.remove(r);
        }
        tips.insert(b.id);
        blocks.push(b);
    }
    blocks
}

pub fn build(blocks: &[Block]) -> DagState {
    let genesis = blocks.iter().find(|b| b.parent.is_none()).unwrap().clone();
    let mut s = DagState::new(genesis).unwrap();
    for b in blocks.iter().filter(|b| b.parent.is_some()) {
        s.insert_block(b.clone()).unwrap();
    }
    assert!(s.pending_ids().is_empty());
    s
}

pub fn random_dag(seed: u64, n: usize) -> DagState {
    build(&random_blocks(seed, n))
}

/// Ancestors of `b`, including `b`, by breadth-first search over all edges.
pub fn past_oracle(state: &DagState, b: BlockId) -> BTreeSet<BlockId> {
    let mut seen = BTreeSet::from([b]);
    let mut queue = VecDeque::from([b]);
    while let Some(x) = queue.pop_front() {
        for o in state.block(x).unwrap().out_edges() {
            if seen.insert(o) {
                queue.push_back(o);
            }
        }
    }
    seen
}

fn children_map(state: &DagState) -> BTreeMap<BlockId, Vec<BlockId>> {
    let mut m: BTreeMap<BlockId, Vec<BlockId>> = BTreeMap::new();
    for b in state.blocks() {
        if let Some(p) = b.parent {
            m.entry(p).or_default().push(b.id);
        }
    }
    m
}

fn subtree_weight(state: &DagState, kids: &BTreeMap<BlockId, Vec<BlockId>>, b: BlockId) -> u64 {
    let own = (!state.is_stale(b).unwrap()) as u64;
    own + kids
        .get(&b)
        .map(|c| c.iter().map(|x| subtree_weight(state, kids, *x)).sum())
        .unwrap_or(0)
}

/// Heaviest-subtree descent recomputed from scratch at every step.
pub fn pivot_oracle(state: &DagState) -> Vec<BlockId> {
    let kids = children_map(state);
    let mut chain = vec![state.genesis()];
    loop {
        let cur = *chain.last().unwrap();
        let Some(c) = kids.get(&cur) else { break };
        let best = c
            .iter()
            .copied()
            .max_by(|a, b| {
                subtree_weight(state, &kids, *a)
                    .cmp(&subtree_weight(state, &kids, *b))
                    .then(b.cmp(a))
            })
            .unwrap();
        chain.push(best);
    }
    chain
}

/// `past(p_i) - past(p_{i-1})` along the pivot chain.
pub fn epochs_oracle(state: &DagState, pivot: &[BlockId]) -> Vec<BTreeSet<BlockId>> {
    let mut prev = BTreeSet::new();
    pivot
        .iter()
        .map(|p| {
            let past = past_oracle(state, *p);
            let e = past.difference(&prev).copied().collect();
            prev = past;
            e
        })
        .collect()
}

/// Kick-out bound by direct compensated summation of every term, with the
/// tail summed term by term instead of through the regularized gamma.
pub fn kickout_oracle(q: f64, lambda_h: f64, t: f64, n: u64, m: u64) -> f64 {
    if m > n {
        return 1.0;
    }
    let gap = n - m;
    let mu = q * lambda_h * t;
    if mu == 0.0 {
        return q.powi(gap as i32 + 1).min(1.0);
    }
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    let mut add = |x: f64| {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    };
    let mut ln_p = -mu;
    for k in 0..=gap {
        if k > 0 {
            ln_p += mu.ln() - (k as f64).ln();
        }
        add((ln_p + (gap - k + 1) as f64 * q.ln()).exp());
    }
    // tail: keep summing masses until they vanish past the mode
    let mut k = gap;
    loop {
        k += 1;
        ln_p += mu.ln() - (k as f64).ln();
        let term = ln_p.exp();
        add(term);
        if (k as f64) > mu && term < 1e-300 {
            break;
        }
        if k > gap + 1_000_000 {
            break;
        }
    }
    (sum + comp).min(1.0)
}

/// Wilson score interval.
pub fn wilson(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    let n = trials as f64;
    let p = successes as f64 / n;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn coin(rng: &mut ChaCha8Rng, p: f64) -> bool {
    rng.random_bool(p)
}
