//! Attacker strategies and the double-spend experiment.
//!
//! The attacker sees every block the instant it is mined and keeps its own
//! blocks private until a release condition fires. Released blocks then go
//! through the ordinary delivery path.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::confirm::{confirm_decision, prefix_risk_scoped, Decision, RiskParams, SiblingScope};
use crate::dag::{Block, BlockId, DagState, Miner};
use crate::sim::{SimConfig, SimError, Simulation, Step};
use crate::stats::{wilson_interval, z_for_confidence};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AttackError {
    #[error("cannot parse attack plan: {0}")]
    PlanParse(String),
    #[error("invalid attack plan: {0}")]
    PlanInvalid(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Grow the sibling closest to overtaking a pivot ancestor of the target.
    PivotRevert,
    /// Mine like an honest node but publish late.
    WithholdRelease,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReleaseTrigger {
    /// Release as soon as a private sibling would win a pivot choice on the
    /// target's chain.
    Overtake,
    /// Only the withholding horizon releases blocks.
    Horizon,
}

/// Flat TOML-friendly attack description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackPlan {
    pub strategy: Strategy,
    /// Fixed target block. When absent the target is the first honest block
    /// timestamped at or after `target_after`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_block: Option<BlockId>,
    #[serde(default)]
    pub target_after: f64,
    /// Longest time a block stays private.
    pub withhold_horizon: f64,
    #[serde(default = "default_trigger")]
    pub release_trigger: ReleaseTrigger,
    /// How long the experiment keeps watching after the victim confirms.
    #[serde(default = "default_monitor")]
    pub monitor_window: f64,
}

fn default_trigger() -> ReleaseTrigger {
    ReleaseTrigger::Overtake
}

fn default_monitor() -> f64 {
    60.0
}

impl AttackPlan {
    pub fn pivot_revert(target_after: f64, withhold_horizon: f64) -> Self {
        AttackPlan {
            strategy: Strategy::PivotRevert,
            target_block: None,
            target_after,
            withhold_horizon,
            release_trigger: ReleaseTrigger::Overtake,
            monitor_window: default_monitor(),
        }
    }

    pub fn withhold_release(withhold_horizon: f64) -> Self {
        AttackPlan {
            strategy: Strategy::WithholdRelease,
            target_block: None,
            target_after: 0.0,
            withhold_horizon,
            release_trigger: ReleaseTrigger::Horizon,
            monitor_window: default_monitor(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, AttackError> {
        let plan: AttackPlan = toml::from_str(text).map_err(|e| AttackError::PlanParse(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plan serializes")
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if !(self.withhold_horizon > 0.0 && self.withhold_horizon.is_finite()) {
            return Err(AttackError::PlanInvalid(
                "withhold_horizon must be positive and finite".into(),
            ));
        }
        if !(self.target_after >= 0.0 && self.target_after.is_finite()) {
            return Err(AttackError::PlanInvalid("target_after must be non-negative".into()));
        }
        if !(self.monitor_window >= 0.0 && self.monitor_window.is_finite()) {
            return Err(AttackError::PlanInvalid("monitor_window must be non-negative".into()));
        }
        Ok(())
    }
}

/// One attacker block and the reasoning behind its parent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackMove {
    pub time: f64,
    pub block: BlockId,
    pub parent: BlockId,
    /// Chosen (pivot ancestor, sibling) pair; `None` sibling means a new one.
    pub pair: Option<(BlockId, Option<BlockId>)>,
    /// Size of the global view when the choice was made.
    pub global_len: usize,
}

/// Pair (a, a') over pivot ancestors `a` of `target` (genesis excluded) and
/// their siblings `a'` minimizing `|Subtree(a)| - |Subtree(a')|`. A not yet
/// existing sibling counts as size 0. Ties go to the smaller `a`, then to an
/// existing sibling over a new one, then to the smaller `a'`.
pub fn revert_argmin(global: &DagState, target: BlockId) -> Option<(BlockId, Option<BlockId>)> {
    // (gap, a, new sibling, a')
    type Key = (i64, BlockId, bool, Option<BlockId>);
    let chain = global.chain(target).ok()?;
    let mut best: Option<(Key, (BlockId, Option<BlockId>))> = None;
    let mut consider = |key: Key, pair| {
        if best.as_ref().is_none_or(|(k, _)| key < *k) {
            best = Some((key, pair));
        }
    };
    for &a in &chain[1..] {
        let size_a = global.subtree_size(a).ok()? as i64;
        for s in global.siblings(a).ok()? {
            let gap = size_a - global.subtree_size(s).ok()? as i64;
            consider((gap, a, false, Some(s)), (a, Some(s)));
        }
        consider((size_a, a, true, None), (a, None));
    }
    best.map(|(_, pair)| pair)
}

/// Whether some sibling of a pivot ancestor of `target` would win the pivot
/// choice against it in `view`.
pub fn sibling_overtakes(view: &DagState, target: BlockId) -> bool {
    let Ok(chain) = view.chain(target) else {
        return false;
    };
    chain[1..].iter().any(|&a| {
        let size_a = view.subtree_size(a).unwrap_or(0);
        view.siblings(a).unwrap_or_default().into_iter().any(|s| {
            let size_s = view.subtree_size(s).unwrap_or(0);
            size_s > size_a || (size_s == size_a && s < a)
        })
    })
}

#[derive(Debug, Clone)]
pub struct Attacker {
    plan: AttackPlan,
    target: Option<BlockId>,
    /// Withheld blocks with their mining time, oldest first.
    private: Vec<(Arc<Block>, f64)>,
    moves: Vec<AttackMove>,
    released: usize,
}

impl Attacker {
    pub fn new(plan: AttackPlan) -> Self {
        Attacker {
            target: plan.target_block,
            plan,
            private: Vec::new(),
            moves: Vec::new(),
            released: 0,
        }
    }

    pub fn plan(&self) -> &AttackPlan {
        &self.plan
    }

    pub fn target(&self) -> Option<BlockId> {
        self.target
    }

    pub fn moves(&self) -> &[AttackMove] {
        &self.moves
    }

    pub fn withheld(&self) -> usize {
        self.private.len()
    }

    pub fn released(&self) -> usize {
        self.released
    }

    pub fn observe_honest(&mut self, block: &Block) {
        if self.target.is_none() && self.plan.target_block.is_none() && block.timestamp >= self.plan.target_after {
            self.target = Some(block.id);
        }
    }

    /// Produces the attacker's next block, or `None` when there is nothing
    /// to attack yet. The caller adds it to the global view.
    pub fn mine(&mut self, global: &DagState, id: BlockId, now: f64) -> Option<Arc<Block>> {
        let (parent, refs, pair) = match self.plan.strategy {
            Strategy::PivotRevert => {
                let target = self.target.filter(|t| global.contains(*t))?;
                let (a, s) = revert_argmin(global, target)?;
                let parent = match s {
                    Some(s) => s,
                    None => global.parent(a).ok()??,
                };
                (parent, Vec::new(), Some((a, s)))
            }
            Strategy::WithholdRelease => {
                let parent = global.pivot();
                let refs: Vec<BlockId> = global.tips().into_iter().filter(|t| *t != parent).collect();
                (parent, refs, None)
            }
        };
        self.moves.push(AttackMove {
            time: now,
            block: id,
            parent,
            pair,
            global_len: global.len(),
        });
        let block = Arc::new(Block::new(id, parent, refs, now, Miner::Adversary));
        self.private.push((block.clone(), now));
        Some(block)
    }

    /// Blocks to publish now. Everything withheld goes out together.
    pub fn release(&mut self, global: &DagState, now: f64) -> Vec<Arc<Block>> {
        let Some(&(_, oldest)) = self.private.first() else {
            return Vec::new();
        };
        let expired = oldest + self.plan.withhold_horizon <= now;
        let triggered = self.plan.release_trigger == ReleaseTrigger::Overtake
            && self.target.is_some_and(|t| sibling_overtakes(global, t));
        if !(expired || triggered) {
            return Vec::new();
        }
        self.released += self.private.len();
        self.private.drain(..).map(|(b, _)| b).collect()
    }
}

/// Result of one seeded double-spend attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub target: Option<BlockId>,
    pub confirmed: bool,
    pub confirm_time: Option<f64>,
    /// Prefix bound when the victim confirmed.
    pub bound: Option<f64>,
    pub reverted: bool,
    pub revert_time: Option<f64>,
    pub attacker_blocks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub runs: usize,
    pub confirmed: usize,
    pub reverted: usize,
    /// Reverted over confirmed runs.
    pub frequency: f64,
    /// 99% Wilson interval on `frequency`.
    pub ci_low: f64,
    pub ci_high: f64,
    /// Mean prefix bound at confirmation time.
    pub mean_bound: f64,
    /// The interval's lower end does not exceed the mean bound.
    pub bound_dominates: bool,
    pub outcomes: Vec<SeedOutcome>,
}

impl ExperimentReport {
    /// CSV with one line per seed.
    pub fn outcomes_csv(&self) -> String {
        let mut out = String::from("seed,target,confirmed,confirm_time,bound,reverted,revert_time,attacker_blocks\n");
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for o in &self.outcomes {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                o.seed,
                o.target.map(|t| t.to_string()).unwrap_or_default(),
                o.confirmed,
                f(o.confirm_time),
                f(o.bound),
                o.reverted,
                f(o.revert_time),
                o.attacker_blocks
            ));
        }
        out
    }
}

/// Runs one attempt: the victim waits until the target has been on every
/// honest pivot chain for `d` seconds and its risk bound (assuming the true
/// attacker power) is below `tolerance`, then watches for a reversal.
pub fn double_spend_run(config: &SimConfig, plan: &AttackPlan, tolerance: f64) -> Result<SeedOutcome, AttackError> {
    plan.validate()?;
    let mut sim = Simulation::new(config.clone(), Some(Attacker::new(plan.clone())))?;
    let n = config.num_nodes;
    let params = RiskParams {
        q: config.attacker_q,
        lambda_h: config.lambda_h(),
        t: 0.0,
        d: config.d,
        epsilon_tail: 1e-12,
    };
    let mut on_pivot = vec![false; n];
    let mut tracking = false;
    let mut since: Option<f64> = None;
    let mut out = SeedOutcome {
        seed: config.seed,
        target: None,
        confirmed: false,
        confirm_time: None,
        bound: None,
        reverted: false,
        revert_time: None,
        attacker_blocks: 0,
    };
    while let Some(step) = sim.step() {
        let now = sim.now();
        let Some(target) = sim.attacker().and_then(|a| a.target()) else {
            continue;
        };
        let touched = match step {
            Step::HonestMined { node, .. } => Some(node),
            Step::Delivered { node, ref linked } if !linked.is_empty() => Some(node),
            _ => None,
        };
        if !tracking {
            tracking = true;
            out.target = Some(target);
            for (k, flag) in on_pivot.iter_mut().enumerate() {
                *flag = sim.nodes()[k].dag.is_on_pivot_chain(target);
            }
        } else if let Some(k) = touched {
            on_pivot[k] = sim.nodes()[k].dag.is_on_pivot_chain(target);
        }
        let all_on = on_pivot.iter().all(|x| *x);
        since = if all_on { since.or(Some(now)) } else { None };

        if let Some(at) = out.confirm_time {
            if on_pivot.iter().all(|x| !*x) {
                out.reverted = true;
                out.revert_time = Some(now);
                break;
            }
            if now >= at + plan.monitor_window {
                break;
            }
        } else if since.is_some_and(|s| s <= now - config.d) && sim.public_view().is_on_pivot_chain(target) {
            let report = prefix_risk_scoped(
                sim.public_view(),
                target,
                &params.with_t(now),
                sim.settled_view(),
                SiblingScope::IncludeUnseen,
            )
            .expect("target is on the public pivot chain");
            if confirm_decision(&report, tolerance) == Decision::Confirmed {
                out.confirmed = true;
                out.confirm_time = Some(now);
                out.bound = Some(report.prefix_bound);
            }
        }
        if now >= config.duration {
            break;
        }
    }
    out.attacker_blocks = sim.attacker().map_or(0, |a| a.moves().len());
    Ok(out)
}

/// Repeats [`double_spend_run`] for seeds `config.seed .. config.seed + seeds`.
pub fn double_spend_experiment(
    config: &SimConfig,
    plan: &AttackPlan,
    tolerance: f64,
    seeds: u64,
) -> Result<ExperimentReport, AttackError> {
    config.validate()?;
    plan.validate()?;
    let outcomes = (0..seeds)
        .into_par_iter()
        .map(|i| {
            let cfg = SimConfig {
                seed: config.seed.wrapping_add(i),
                ..config.clone()
            };
            double_spend_run(&cfg, plan, tolerance)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let confirmed = outcomes.iter().filter(|o| o.confirmed).count();
    let reverted = outcomes.iter().filter(|o| o.reverted).count();
    let frequency = if confirmed == 0 { 0.0 } else { reverted as f64 / confirmed as f64 };
    let (ci_low, ci_high) = wilson_interval(reverted as u64, confirmed as u64, z_for_confidence(0.99));
    let mean_bound = if confirmed == 0 {
        0.0
    } else {
        outcomes.iter().filter_map(|o| o.bound).sum::<f64>() / confirmed as f64
    };
    Ok(ExperimentReport {
        runs: outcomes.len(),
        confirmed,
        reverted,
        frequency,
        ci_low,
        ci_high,
        mean_bound,
        bound_dominates: ci_low <= mean_bound,
        outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(edges: &[(u64, u64)]) -> DagState {
        let mut s = DagState::new(Block::genesis(BlockId(0))).unwrap();
        for &(id, p) in edges {
            s.insert_block(Block::new(BlockId(id), BlockId(p), [], 0.0, Miner::Honest(0)))
                .unwrap();
        }
        s
    }

    #[test]
    fn bootstrap_creates_sibling_of_target() {
        let s = state(&[(1, 0), (2, 1)]);
        assert_eq!(revert_argmin(&s, BlockId(2)), Some((BlockId(2), None)));
        let mut att = Attacker::new(AttackPlan {
            target_block: Some(BlockId(2)),
            ..AttackPlan::pivot_revert(0.0, 10.0)
        });
        let b = att.mine(&s, BlockId(9), 1.0).unwrap();
        assert_eq!(b.parent, Some(BlockId(1)));
        assert_eq!(b.miner, Miner::Adversary);
    }

    #[test]
    fn existing_sibling_is_preferred_on_ties() {
        // 2 and 3 are siblings of size 1; a fresh sibling of 2 also has gap 1
        let s = state(&[(1, 0), (2, 1), (3, 1)]);
        assert_eq!(revert_argmin(&s, BlockId(2)), Some((BlockId(2), Some(BlockId(3)))));
    }

    #[test]
    fn horizon_releases_everything() {
        let mut g = state(&[(1, 0)]);
        let mut att = Attacker::new(AttackPlan::withhold_release(5.0));
        let b = att.mine(&g, BlockId(7), 1.0).unwrap();
        g.insert_arc(b).unwrap();
        assert!(att.release(&g, 5.9).is_empty());
        assert_eq!(att.release(&g, 6.0).len(), 1);
        assert_eq!(att.withheld(), 0);
    }

    #[test]
    fn overtake_trigger_fires_at_first_crossing() {
        let mut g = state(&[(1, 0), (2, 1)]);
        let mut att = Attacker::new(AttackPlan {
            target_block: Some(BlockId(2)),
            ..AttackPlan::pivot_revert(0.0, 1e6)
        });
        let b = att.mine(&g, BlockId(8), 1.0).unwrap();
        g.insert_arc(b).unwrap();
        // sizes tie at 1; block 8 > 2 so the target still wins
        assert!(att.release(&g, 1.0).is_empty());
        let b = att.mine(&g, BlockId(9), 2.0).unwrap();
        assert_eq!(b.parent, Some(BlockId(8)));
        g.insert_arc(b).unwrap();
        assert_eq!(att.release(&g, 2.0).len(), 2);
    }

    #[test]
    fn plan_parsing() {
        let p = AttackPlan::from_toml("strategy = \"pivot_revert\"\nwithhold_horizon = 30\ntarget_after = 2.5").unwrap();
        assert_eq!(p.release_trigger, ReleaseTrigger::Overtake);
        assert_eq!(AttackPlan::from_toml(&p.to_toml()).unwrap(), p);
        assert!(AttackPlan::from_toml("strategy = \"pivot_revert\"\nwithhold_horizon = 0").is_err());
        assert!(AttackPlan::from_toml("strategy = \"nope\"\nwithhold_horizon = 1").is_err());
    }
}
