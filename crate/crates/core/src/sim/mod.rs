//! Deterministic discrete-event network simulation.
//!
//! One global Poisson process produces mining events; each is won by an
//! honest node (uniformly) or by the attacker. Blocks travel directly from
//! the sender to every other honest node with a delay of at most `d`.
//!
//! Randomness: a single `u64` seed feeds four ChaCha8 streams (see
//! [`STREAM_MINING`] and friends), so each concern draws from its own
//! sequence and adding, say, transactions does not shift the mining times.

mod config;
mod node;
mod trace;

pub use config::{DelayKind, Rule, SimConfig};
pub use node::{NodeState, StaleRule};
pub use trace::{BlockRow, SimMetrics, SimTrace};

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

use crate::adversary::Attacker;
use crate::confirm::{confirm_decision, prefix_risk_scoped, Decision, RiskParams, SiblingScope};
use crate::dag::{Block, BlockId, DagState};
use crate::ledger::Transaction;

pub const STREAM_MINING: u64 = 1;
pub const STREAM_DELAYS: u64 = 2;
pub const STREAM_IDS: u64 = 3;
pub const STREAM_TXS: u64 = 4;

pub const GENESIS: BlockId = BlockId(0);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("cannot parse configuration: {0}")]
    ConfigParse(String),
}

#[derive(Debug, Clone)]
enum EventKind {
    Mine,
    Deliver { node: usize, block: Arc<Block> },
    /// The block has been public for `d` seconds.
    Settle { block: Arc<Block> },
    /// Attacker withholding deadline.
    Inject,
}

#[derive(Debug, Clone)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // reversed: BinaryHeap pops the earliest (time, seq) first
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// What one call to [`Simulation::step`] did.
#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    HonestMined { node: usize, block: BlockId },
    AttackerMined { block: Option<BlockId> },
    Delivered { node: usize, linked: Vec<BlockId> },
    Settled { block: BlockId },
    Deadline,
}

#[derive(Debug, Clone, Default)]
struct Counters {
    relays: u64,
    pivot_reversions: u64,
    stale_marked: u64,
    idle_attacker_wins: u64,
    confirmed_reversions: u64,
}

pub struct Simulation {
    config: SimConfig,
    rng_mine: ChaCha8Rng,
    rng_delay: ChaCha8Rng,
    rng_ids: ChaCha8Rng,
    rng_tx: ChaCha8Rng,
    mine_gap: Exp<f64>,
    queue: BinaryHeap<Event>,
    seq: u64,
    now: f64,
    nodes: Vec<NodeState>,
    last_tip: Vec<BlockId>,
    /// Every mined block, withheld ones included.
    global: DagState,
    /// Every published block.
    public: DagState,
    /// Every block published at least `d` ago.
    settled: DagState,
    created: Vec<Arc<Block>>,
    used_ids: HashSet<u64>,
    stale: StaleRule,
    attacker: Option<Attacker>,
    counters: Counters,
    /// Pivot prefix of `public` currently considered confirmed.
    confirmed: Vec<BlockId>,
    confirm_time: HashMap<BlockId, f64>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl Simulation {
    pub fn new(config: SimConfig, attacker: Option<Attacker>) -> Result<Self, SimError> {
        config.validate()?;
        let genesis = Block::genesis(GENESIS);
        let nodes: Vec<NodeState> = (0..config.num_nodes as u32)
            .map(|i| NodeState::new(i, genesis.clone()))
            .collect();
        let fresh = || DagState::new(genesis.clone()).expect("genesis is well formed");
        let mut sim = Simulation {
            rng_mine: stream(config.seed, STREAM_MINING),
            rng_delay: stream(config.seed, STREAM_DELAYS),
            rng_ids: stream(config.seed, STREAM_IDS),
            rng_tx: stream(config.seed, STREAM_TXS),
            mine_gap: Exp::new(config.lambda).map_err(|e| SimError::ConfigInvalid(e.to_string()))?,
            queue: BinaryHeap::new(),
            seq: 0,
            now: 0.0,
            last_tip: vec![GENESIS; nodes.len()],
            nodes,
            global: fresh(),
            public: fresh(),
            settled: fresh(),
            created: vec![Arc::new(genesis.clone())],
            used_ids: HashSet::from([GENESIS.0]),
            stale: StaleRule {
                window: config.stale_window,
                future: config.stale_future,
            },
            attacker,
            counters: Counters::default(),
            confirmed: vec![GENESIS],
            confirm_time: HashMap::from([(GENESIS, 0.0)]),
            config,
        };
        sim.schedule_mine();
        Ok(sim)
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    pub fn global_view(&self) -> &DagState {
        &self.global
    }

    pub fn public_view(&self) -> &DagState {
        &self.public
    }

    pub fn settled_view(&self) -> &DagState {
        &self.settled
    }

    pub fn attacker(&self) -> Option<&Attacker> {
        self.attacker.as_ref()
    }

    /// Blocks in creation order.
    pub fn created(&self) -> &[Arc<Block>] {
        &self.created
    }

    fn push(&mut self, time: f64, kind: EventKind) {
        self.seq += 1;
        self.queue.push(Event {
            time,
            seq: self.seq,
            kind,
        });
    }

    fn schedule_mine(&mut self) {
        let at = self.now + self.mine_gap.sample(&mut self.rng_mine);
        if at < self.config.duration {
            self.push(at, EventKind::Mine);
        }
    }

    fn fresh_id(&mut self) -> BlockId {
        loop {
            let x: u64 = self.rng_ids.random();
            if self.used_ids.insert(x) {
                return BlockId(x);
            }
        }
    }

    fn synthetic_txs(&mut self, miner: usize) -> Vec<Transaction> {
        let n = self.config.block_size_txs;
        let accounts = self.config.num_nodes;
        let mut txs = Vec::with_capacity(n);
        for k in 0..n {
            let txid: u64 = self.rng_tx.random();
            if k == 0 {
                txs.push(Transaction::coinbase(txid, format!("n{miner}").as_str(), 50));
            } else {
                let from = self.rng_tx.random_range(0..accounts);
                let to = self.rng_tx.random_range(0..accounts);
                let amount = self.rng_tx.random_range(1..=20u64);
                txs.push(Transaction::transfer(
                    txid,
                    format!("n{from}").as_str(),
                    format!("n{to}").as_str(),
                    amount,
                ));
            }
        }
        txs
    }

    fn delay(&mut self, from: Option<usize>, to: usize) -> f64 {
        let d = self.config.d;
        match self.config.delay_model {
            DelayKind::Constant => d,
            DelayKind::Uniform => {
                if d == 0.0 {
                    0.0
                } else {
                    self.rng_delay.random_range(0.0..=d)
                }
            }
            DelayKind::Matrix => match from {
                Some(f) => self.config.delay_matrix.as_ref().expect("validated")[f][to],
                None => d,
            },
        }
    }

    /// Makes a block public: every honest node except `origin` gets it
    /// within `d`.
    fn publish(&mut self, block: Arc<Block>, origin: Option<usize>) {
        self.public
            .insert_arc(block.clone())
            .expect("published blocks are unique");
        for node in 0..self.nodes.len() {
            if Some(node) == origin {
                continue;
            }
            let at = self.now + self.delay(origin, node);
            self.push(
                at,
                EventKind::Deliver {
                    node,
                    block: block.clone(),
                },
            );
        }
        let at = self.now + self.config.d;
        self.push(at, EventKind::Settle { block });
    }

    fn note_pivot_change(&mut self, node: usize) {
        let dag = &self.nodes[node].dag;
        let tip = dag.pivot();
        let prev = self.last_tip[node];
        if tip != prev && !dag.is_on_pivot_chain(prev) {
            self.counters.pivot_reversions += 1;
        }
        self.last_tip[node] = tip;
    }

    fn release_withheld(&mut self) {
        let Some(att) = self.attacker.as_mut() else {
            return;
        };
        let released = att.release(&self.global, self.now);
        for b in released {
            self.publish(b, None);
        }
    }

    /// Processes the next event. Returns `None` once nothing is left.
    pub fn step(&mut self) -> Option<Step> {
        let ev = self.queue.pop()?;
        self.now = ev.time;
        let step = match ev.kind {
            EventKind::Mine => {
                let u: f64 = self.rng_mine.random();
                let share = self.config.attacker_share();
                let step = if u < share {
                    self.attacker_mine()
                } else {
                    let n = self.nodes.len();
                    let node = (((u - share) / (1.0 - share)) * n as f64) as usize;
                    self.honest_mine(node.min(n - 1))
                };
                self.schedule_mine();
                step
            }
            EventKind::Deliver { node, block } => {
                let linked = self.nodes[node].on_receive(block, self.now, &self.stale);
                if !linked.is_empty() {
                    self.counters.relays += linked.len() as u64;
                    for id in &linked {
                        if self.nodes[node].dag.is_stale(*id).unwrap_or(false) {
                            self.counters.stale_marked += 1;
                        }
                    }
                    self.note_pivot_change(node);
                }
                Step::Delivered { node, linked }
            }
            EventKind::Settle { block } => {
                let id = block.id;
                self.settled
                    .insert_arc(block)
                    .expect("settled blocks are unique");
                if self.config.track_confirmation {
                    self.advance_confirmation();
                }
                Step::Settled { block: id }
            }
            EventKind::Inject => {
                self.release_withheld();
                Step::Deadline
            }
        };
        Some(step)
    }

    fn honest_mine(&mut self, node: usize) -> Step {
        let id = self.fresh_id();
        let txs = self.synthetic_txs(node);
        let block = Arc::new(self.nodes[node].on_generate(id, self.now, self.config.rule, txs));
        self.nodes[node].on_receive(block.clone(), self.now, &self.stale);
        self.note_pivot_change(node);
        self.global
            .insert_arc(block.clone())
            .expect("honest blocks extend the global view");
        if let Some(att) = self.attacker.as_mut() {
            att.observe_honest(&block);
        }
        self.created.push(block.clone());
        self.publish(block, Some(node));
        Step::HonestMined { node, block: id }
    }

    fn attacker_mine(&mut self) -> Step {
        if self.attacker.is_none() {
            self.counters.idle_attacker_wins += 1;
            return Step::AttackerMined { block: None };
        }
        let id = self.fresh_id();
        let now = self.now;
        let att = self.attacker.as_mut().expect("checked above");
        let Some(block) = att.mine(&self.global, id, now) else {
            self.counters.idle_attacker_wins += 1;
            return Step::AttackerMined { block: None };
        };
        let horizon = att.plan().withhold_horizon;
        self.global
            .insert_arc(block.clone())
            .expect("attacker blocks extend the global view");
        self.created.push(block);
        self.push(now + horizon, EventKind::Inject);
        self.release_withheld();
        Step::AttackerMined { block: Some(id) }
    }

    /// Extends the confirmed pivot prefix of the public view as far as the
    /// risk bound allows.
    fn advance_confirmation(&mut self) {
        let chain = self.public.pivot_chain();
        let keep = self
            .confirmed
            .iter()
            .zip(&chain)
            .take_while(|(a, b)| a == b)
            .count();
        if keep < self.confirmed.len() {
            self.counters.confirmed_reversions += 1;
            self.confirmed.truncate(keep);
        }
        let params = RiskParams {
            q: self.config.confirm_q,
            lambda_h: self.config.lambda_h(),
            t: self.now,
            d: self.config.d,
            epsilon_tail: 1e-12,
        };
        while self.confirmed.len() < chain.len() {
            let b = chain[self.confirmed.len()];
            let report = prefix_risk_scoped(&self.public, b, &params, &self.settled, SiblingScope::IncludeUnseen)
                .expect("block is on the public pivot chain");
            if confirm_decision(&report, self.config.confirm_tolerance) != Decision::Confirmed {
                break;
            }
            self.confirm_time.entry(b).or_insert(self.now);
            self.confirmed.push(b);
        }
    }

    /// Runs until no event is left.
    pub fn run_to_end(&mut self) {
        while self.step().is_some() {}
    }

    pub fn finish(mut self) -> SimTrace {
        self.run_to_end();
        trace::build(self)
    }
}

/// Runs one scenario without an attacker.
pub fn run(config: &SimConfig) -> Result<SimTrace, SimError> {
    Ok(Simulation::new(config.clone(), None)?.finish())
}

/// Like [`run`] with an attacker attached.
pub fn run_with(config: &SimConfig, attacker: Attacker) -> Result<SimTrace, SimError> {
    Ok(Simulation::new(config.clone(), Some(attacker))?.finish())
}
