//! The withholding attack that expels an honest block from PHANTOM's main
//! chain arbitrarily late, and its success probability.
//!
//! Honest block `b_j` is `BlockId(j)` with `b_1` as genesis; malicious block
//! `a_i` is `BlockId(MALICIOUS_BASE + i)`, so id tie-breaks favour honest
//! blocks.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Phantom;
use crate::dag::{Block, BlockId, DagState, Miner};

pub const MALICIOUS_BASE: u64 = 1_000_000;

/// Tail mass below which the infinite product is cut off.
const PRODUCT_TAIL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhantomError {
    #[error("schedule infeasible: {0}")]
    ScheduleInfeasible(String),
    #[error("domain error: {0}")]
    DomainError(String),
}

/// `h_n = (n-2)(n-1)/2 + 1`, so `h_1 = h_2 = 1`.
pub fn h(n: u64) -> u64 {
    assert!(n >= 1, "h is defined from n = 1");
    (n - 1) * n.saturating_sub(2) / 2 + 1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackSchedule {
    pub k_delta: u64,
    pub k_prime: u64,
    pub i_max: u64,
    /// `h_i` for `i` in `1..=i_max + k_delta`.
    pub h: BTreeMap<u64, u64>,
    /// Honest index whose generation releases `a_i`: `h_{i-1+k_delta}`.
    pub release_times: BTreeMap<u64, u64>,
}

impl AttackSchedule {
    pub fn new(k_delta: u64, k_prime: u64, i_max: u64) -> Result<Self, PhantomError> {
        if k_delta < 2 {
            return Err(PhantomError::ScheduleInfeasible("k_delta must be at least 2".into()));
        }
        if i_max == 0 {
            return Err(PhantomError::ScheduleInfeasible("i_max must be at least 1".into()));
        }
        if (k_delta as i128) * (k_delta as i128 - 7) < 4 * k_prime as i128 {
            return Err(PhantomError::ScheduleInfeasible(format!(
                "k_delta = {k_delta} too small for k' = {k_prime}: need k_delta(k_delta - 7) >= 4k'"
            )));
        }
        Ok(AttackSchedule {
            k_delta,
            k_prime,
            i_max,
            h: (1..=i_max + k_delta).map(|i| (i, h(i))).collect(),
            release_times: (1..=i_max).map(|i| (i, h(i - 1 + k_delta))).collect(),
        })
    }

    /// PHANTOM's cluster parameter.
    pub fn k(&self) -> u64 {
        self.k_delta + self.k_prime
    }

    pub fn honest_count(&self) -> u64 {
        h(self.i_max + self.k_delta)
    }

    /// First index from which a release can expel `b_2`.
    pub fn flip_start(&self) -> u64 {
        (3 * self.k_delta).saturating_sub(14).max(1)
    }

    /// Group of `b_j`: `b_1` and `b_2` stand alone, later blocks come in
    /// groups of `k' + 1` that cannot see each other.
    fn group(&self, j: u64) -> u64 {
        if j <= 2 {
            j - 1
        } else {
            2 + (j - 3) / (self.k_prime + 1)
        }
    }

    fn group_members(&self, g: u64) -> std::ops::RangeInclusive<u64> {
        if g <= 1 {
            return g + 1..=g + 1;
        }
        let first = 3 + (g - 2) * (self.k_prime + 1);
        first..=(first + self.k_prime).min(self.honest_count())
    }

    /// Largest `i` whose `a_i` is released before `b_j` is generated.
    fn latest_seen(&self, j: u64) -> Option<u64> {
        (1..=self.i_max).rev().find(|&i| self.release_times[&i] < j)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Honest(u64),
    Malicious(u64),
}

impl Role {
    pub fn id(self) -> BlockId {
        match self {
            Role::Honest(j) => BlockId(j),
            Role::Malicious(i) => BlockId(MALICIOUS_BASE + i),
        }
    }

    pub fn label(self) -> String {
        match self {
            Role::Honest(j) => format!("b{j}"),
            Role::Malicious(i) => format!("a{i}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AttackDag {
    pub schedule: AttackSchedule,
    pub state: DagState,
    pub roles: BTreeMap<BlockId, Role>,
}

impl AttackDag {
    pub fn labels(&self) -> BTreeMap<BlockId, String> {
        self.roles.iter().map(|(id, r)| (*id, r.label())).collect()
    }

    pub fn honest(&self) -> impl Iterator<Item = BlockId> + '_ {
        (1..=self.schedule.honest_count()).map(BlockId)
    }

    pub fn malicious(&self) -> impl Iterator<Item = BlockId> + '_ {
        (1..=self.schedule.i_max).map(|i| Role::Malicious(i).id())
    }

    /// What honest nodes hold once `b_v` is generated: `b_1..=b_v` and every
    /// released malicious block.
    pub fn honest_view(&self, v: u64) -> BTreeSet<BlockId> {
        let s = &self.schedule;
        (1..=v.min(s.honest_count()))
            .map(BlockId)
            .chain(
                (1..=s.i_max)
                    .filter(|i| s.release_times[i] <= v)
                    .map(|i| Role::Malicious(i).id()),
            )
            .collect()
    }

    /// The honest view at `b_v` after the attacker broadcasts `a_1..=a_w`.
    pub fn counterfactual_view(&self, v: u64, w: u64) -> BTreeSet<BlockId> {
        let mut view = self.honest_view(v);
        view.extend((1..=w.min(self.schedule.i_max)).map(|i| Role::Malicious(i).id()));
        view
    }
}

/// Builds honest blocks `b_1..=b_{h(i_max + k_delta)}` and malicious blocks
/// `a_1..=a_{i_max}`. Each block references only the maximal elements of the
/// ancestor set it is meant to have, which leaves every past set unchanged.
pub fn build_attack_dag(schedule: &AttackSchedule) -> Result<AttackDag, PhantomError> {
    let s = AttackSchedule::new(schedule.k_delta, schedule.k_prime, schedule.i_max)?;
    let b1 = BlockId(1);
    let mut state = DagState::new(Block::genesis(b1)).expect("genesis is valid");
    let mut roles = BTreeMap::from([(b1, Role::Honest(1))]);

    // a_i can be inserted once b_{h_i} and a_{i-1} exist
    let mut next_a = 1;
    let insert = |state: &mut DagState, id: BlockId, refs: Vec<BlockId>, ts: f64, miner: Miner| {
        let parent = refs[0];
        state
            .insert_block(Block::new(id, parent, refs, ts, miner))
            .expect("attack DAG is well formed");
    };
    for j in 1..=s.honest_count() {
        if j > 1 {
            let mut refs: Vec<BlockId> = s.group_members(s.group(j) - 1).map(BlockId).collect();
            if let Some(i) = s.latest_seen(j) {
                refs.push(Role::Malicious(i).id());
            }
            insert(&mut state, BlockId(j), refs, j as f64, Miner::Honest(0));
            roles.insert(BlockId(j), Role::Honest(j));
        }
        while next_a <= s.i_max && s.h[&next_a] == j {
            let i = next_a;
            let mut refs: Vec<BlockId> = s
                .group_members(s.group(j))
                .filter(|x| *x <= j)
                .map(BlockId)
                .collect();
            if i > 1 {
                refs.push(Role::Malicious(i - 1).id());
            }
            let id = Role::Malicious(i).id();
            insert(&mut state, id, refs, j as f64 + 0.5, Miner::Adversary);
            roles.insert(id, Role::Malicious(i));
            next_a += 1;
        }
    }
    Ok(AttackDag {
        schedule: s,
        state,
        roles,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaChecks {
    /// `|anti(a_i) ∩ B| = (k_delta - 1)(k_delta + 2i - 4)/2` for every `i`.
    pub malicious_anti_count: bool,
    /// `|anti(b_j) ∩ A| < k_delta` for every `j`.
    pub honest_anti_bound: bool,
    /// `|anti(b_j) ∩ B| <= k'` for every `j`, and `anti(b_2) ∩ B` is empty.
    pub honest_anti_honest: bool,
    /// `Blue_k(past(b_j)) = past(b_j) ∩ B`.
    pub honest_blue_past: bool,
    /// `Blue_k(past(a_i)) = past(a_i)`.
    pub malicious_blue_past: bool,
    pub violations: Vec<String>,
}

impl LemmaChecks {
    pub fn all_hold(&self) -> bool {
        self.violations.is_empty()
    }
}

fn check_lemmas(dag: &AttackDag, ph: &Phantom) -> LemmaChecks {
    let s = &dag.schedule;
    let honest: Vec<BlockId> = dag.honest().collect();
    let malicious: Vec<BlockId> = dag.malicious().collect();
    let is_honest = |b: BlockId| b.0 < MALICIOUS_BASE;
    let mut violations = Vec::new();

    let mut malicious_anti_count = true;
    for (i, &a) in (1..).zip(&malicious) {
        let got = ph.anti_count(a, is_honest) as u64;
        let want = (s.k_delta - 1) * (s.k_delta + 2 * i - 4) / 2;
        if got != want {
            malicious_anti_count = false;
            violations.push(format!("|anti(a{i}) ∩ B| = {got}, expected {want}"));
        }
    }
    let mut honest_anti_bound = true;
    let mut honest_anti_honest = true;
    let mut honest_blue_past = true;
    for &b in &honest {
        let got = malicious.iter().filter(|&&a| ph.in_anti(b, a)).count() as u64;
        if got >= s.k_delta {
            honest_anti_bound = false;
            violations.push(format!("|anti(b{}) ∩ A| = {got} >= {}", b.0, s.k_delta));
        }
        let peers = ph.anti_count(b, is_honest) as u64;
        if peers > s.k_prime || (b.0 == 2 && peers > 0) {
            honest_anti_honest = false;
            violations.push(format!("|anti(b{}) ∩ B| = {peers}", b.0));
        }
        if !ph.blue_past_is(b, is_honest) {
            honest_blue_past = false;
            violations.push(format!("Blue_k(past(b{})) differs from past(b{}) ∩ B", b.0, b.0));
        }
    }
    let mut malicious_blue_past = true;
    for (i, &a) in (1..).zip(&malicious) {
        if !ph.blue_past_is(a, |_| true) {
            malicious_blue_past = false;
            violations.push(format!("Blue_k(past(a{i})) differs from past(a{i})"));
        }
    }
    LemmaChecks {
        malicious_anti_count,
        honest_anti_bound,
        honest_anti_honest,
        honest_blue_past,
        malicious_blue_past,
        violations,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Malicious index `w` whose early broadcast is tested.
    pub w: u64,
    /// Last honest index generated: `h_{w+1} - 1`.
    pub v: u64,
    pub honest_tip: BlockId,
    pub honest_through_b2: bool,
    pub attack_tip: BlockId,
    pub attack_through_a1: bool,
    pub attack_expels_b2: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LivenessReport {
    pub schedule: AttackSchedule,
    pub k: u64,
    pub blocks: usize,
    pub lemmas: LemmaChecks,
    pub checkpoints: Vec<Checkpoint>,
    /// Honest snapshots `b_2..=b_last` whose main chain has a malicious tip
    /// or skips `b_2`.
    pub honest_snapshot_violations: Vec<u64>,
    pub violations: usize,
}

/// Replays the schedule. For every `w` in `checkpoints` the honest view at
/// `v = h_{w+1} - 1` is compared with the same view after `a_1..=a_w` are
/// broadcast; every honest snapshot in between is checked for an honest tip
/// and `b_2` on the main chain.
pub fn run_liveness_attack(
    schedule: &AttackSchedule,
    k: u64,
    checkpoints: &[u64],
) -> Result<LivenessReport, PhantomError> {
    let dag = build_attack_dag(schedule)?;
    let s = &dag.schedule;
    let ph = Phantom::new(&dag.state, k as usize);
    let lemmas = check_lemmas(&dag, &ph);
    let b2 = BlockId(2);
    let a1 = Role::Malicious(1).id();

    let mut rows = Vec::with_capacity(checkpoints.len());
    for &w in checkpoints {
        if !(1..=s.i_max).contains(&w) {
            return Err(PhantomError::DomainError(format!("checkpoint {w} outside 1..={}", s.i_max)));
        }
        let v = (h(w + 1) - 1).max(2);
        let honest = ph.main_chain_of(&dag.honest_view(v));
        let attack = ph.main_chain_of(&dag.counterfactual_view(v, w));
        rows.push(Checkpoint {
            w,
            v,
            honest_tip: *honest.last().expect("non-empty view"),
            honest_through_b2: honest.contains(&b2),
            attack_tip: *attack.last().expect("non-empty view"),
            attack_through_a1: attack.contains(&a1),
            attack_expels_b2: !attack.contains(&b2),
        });
    }

    let mut honest_snapshot_violations = Vec::new();
    // tips of the growing honest view, kept incrementally
    let mut tips: BTreeSet<BlockId> = BTreeSet::from([BlockId(1)]);
    let add = |tips: &mut BTreeSet<BlockId>, id: BlockId| {
        for o in dag.state.block(id).expect("block exists").out_edges() {
            tips.remove(&o);
        }
        tips.insert(id);
    };
    let mut next_release = 1;
    for v in 2..=s.honest_count() {
        add(&mut tips, BlockId(v));
        while next_release <= s.i_max && s.release_times[&next_release] == v {
            add(&mut tips, Role::Malicious(next_release).id());
            next_release += 1;
        }
        let tip_list: Vec<BlockId> = tips.iter().copied().collect();
        let chain = ph.main_chain_from_tips(&tip_list);
        let tip_honest = chain.last().is_some_and(|t| t.0 < MALICIOUS_BASE);
        if !tip_honest || !chain.contains(&b2) {
            honest_snapshot_violations.push(v);
        }
    }

    let violations = rows
        .iter()
        .filter(|c| {
            let flips = c.w < s.flip_start() || (c.attack_through_a1 && c.attack_expels_b2);
            !(c.honest_through_b2 && flips)
        })
        .count()
        + honest_snapshot_violations.len()
        + lemmas.violations.len();
    Ok(LivenessReport {
        schedule: s.clone(),
        k,
        blocks: dag.state.len(),
        lemmas,
        checkpoints: rows,
        honest_snapshot_violations,
        violations,
    })
}

fn check_probability_args(q: f64, k_delta: u64) -> Result<(), PhantomError> {
    if !(q > 0.0 && q.is_finite()) {
        return Err(PhantomError::DomainError("q must be positive and finite".into()));
    }
    if k_delta % 2 == 1 {
        return Err(PhantomError::DomainError("k_delta must be even".into()));
    }
    if k_delta < 6 {
        return Err(PhantomError::DomainError("k_delta must be at least 6 so that c > 0".into()));
    }
    Ok(())
}

/// `ln(1 - e^{-x})` for `x > 0`.
fn ln_one_minus_exp_neg(x: f64) -> f64 {
    (-(-x).exp()).ln_1p()
}

/// Lower bound on the chance the attack never fails, with `q` the attacker
/// to honest rate ratio:
/// `(1 - e^{-cq})^{3k_delta-15} * prod_{i >= 3k_delta-14} (1 - e^{-q(i-1)})`
/// with `c = 1.5 k_delta - 8`. The product stops once the geometric tail
/// `e^{-qn}/(1 - e^{-q})` drops below 1e-12 and the tail is folded in as a
/// final `(1 - tail)` factor.
pub fn attack_success_probability(q: f64, k_delta: u64) -> Result<f64, PhantomError> {
    check_probability_args(q, k_delta)?;
    let c = 1.5 * k_delta as f64 - 8.0;
    let first = 3 * k_delta - 14;
    let mut ln_p = (first - 1) as f64 * ln_one_minus_exp_neg(c * q);
    let ln_denom = ln_one_minus_exp_neg(q);
    let mut n = first;
    loop {
        ln_p += ln_one_minus_exp_neg(q * (n - 1) as f64);
        let ln_tail = -q * n as f64 - ln_denom;
        if ln_tail < PRODUCT_TAIL.ln() {
            ln_p += (-ln_tail.exp()).ln_1p();
            break;
        }
        n += 1;
    }
    Ok(ln_p.exp())
}

/// [`attack_success_probability`] for an attacker holding `share` of the
/// total mining power, i.e. `q = share / (1 - share)`.
pub fn attack_success_probability_for_share(share: f64, k_delta: u64) -> Result<f64, PhantomError> {
    if !(share > 0.0 && share < 1.0) {
        return Err(PhantomError::DomainError("share must lie in (0, 1)".into()));
    }
    attack_success_probability(share / (1.0 - share), k_delta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningRace {
    pub q: f64,
    pub c: u64,
    pub trials: u64,
    pub successes: u64,
    pub frequency: f64,
    /// `1 - (1 + q)^{-c}`.
    pub exact: f64,
    /// `1 - e^{-cq/(1+q)}`, the per-block factor at the attacker's share.
    pub share_factor: f64,
}

/// Races one attacker block (rate `q`) against `c` honest blocks (rate 1)
/// `trials` times.
pub fn mining_race_success(q: f64, c: u64, trials: u64, seed: u64) -> Result<MiningRace, PhantomError> {
    if !(q > 0.0 && q.is_finite()) || c == 0 || trials == 0 {
        return Err(PhantomError::DomainError("need q > 0, c >= 1 and trials >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let attacker = Exp::new(q).expect("positive rate");
    let honest = Gamma::new(c as f64, 1.0).expect("positive shape");
    let successes = (0..trials)
        .filter(|_| attacker.sample(&mut rng) < honest.sample(&mut rng))
        .count() as u64;
    let cf = c as f64;
    Ok(MiningRace {
        q,
        c,
        trials,
        successes,
        frequency: successes as f64 / trials as f64,
        exact: 1.0 - (-cf * q.ln_1p()).exp(),
        share_factor: 1.0 - (-cf * q / (1.0 + q)).exp(),
    })
}
