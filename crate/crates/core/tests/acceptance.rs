//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::collections::{BTreeSet, HashMap};
use std::time::{Duration, Instant};

use common::*;
use conflux::adversary::{double_spend_experiment, AttackPlan};
use conflux::confirm::{sibling_kickout_bound, RiskParams};
use conflux::dag::{BlockId, ChainRule, DagState};
use conflux::ledger::{derive_tx_order, TxStatus};
use conflux::phantom::{
    attack_success_probability, attack_success_probability_for_share, run_liveness_attack, AttackSchedule,
};
use conflux::sim::{self, Rule, SimConfig};
use rand::seq::SliceRandom;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn c1_sample() -> Outcome {
    let start = Instant::now();
    let (file, s) = sample();
    let pivot = names(&file, &s.pivot_chain());
    let longest = names(&file, &s.baseline_chain(ChainRule::Longest));
    let order = names(&file, &s.total_order());
    let (verdicts, _) = derive_tx_order(&s.total_order(), &s).unwrap();
    let status = |txid: u64, block: &str| {
        verdicts
            .iter()
            .find(|v| v.txid == txid && file.name(v.block) == block)
            .map(|v| v.status)
    };
    let elapsed = start.elapsed();
    let ok = pivot == ["Genesis", "A", "C", "E", "H"]
        && longest == ["Genesis", "B", "F", "J", "I", "K"]
        && order == ["Genesis", "A", "B", "C", "D", "F", "E", "G", "J", "I", "H", "K"]
        && status(3, "B") == Some(TxStatus::Conflict)
        && status(4, "B") == Some(TxStatus::Applied)
        && status(4, "G") == Some(TxStatus::Duplicate)
        && elapsed < Duration::from_secs(1);
    outcome(ok, format!("order {} in {elapsed:?}", order.join(" ")))
}

fn order_violations(s: &DagState) -> usize {
    let order = s.total_order();
    let pos: HashMap<BlockId, usize> = order.iter().enumerate().map(|(i, b)| (*b, i)).collect();
    let mut bad = (pos.len() != s.len()) as usize;
    for b in s.blocks() {
        bad += b.out_edges().filter(|o| pos[o] >= pos[&b.id]).count();
    }
    let e = s.epochs();
    let mut seen: BTreeSet<BlockId> = e.unordered.clone();
    for m in &e.members {
        for b in m {
            bad += !seen.insert(*b) as usize;
        }
    }
    bad += (seen != s.block_ids()) as usize;
    bad
}

fn c2_order_properties() -> Outcome {
    let start = Instant::now();
    let mut violations = 0;
    let mut r = rng(2);
    for seed in 0..1000u64 {
        let n = r.random_range(1..=300);
        let blocks = random_blocks(1_000 + seed, n);
        let s = build(&blocks);
        violations += order_violations(&s);
        let mut shuffled = blocks.clone();
        shuffled.shuffle(&mut r);
        let other = build(&shuffled);
        violations += (other.total_order() != s.total_order() || other.epochs() != s.epochs()) as usize;
    }
    let elapsed = start.elapsed();
    outcome(
        violations == 0 && elapsed < Duration::from_secs(30),
        format!("1000 DAGs, {violations} violations, {elapsed:?}"),
    )
}

fn c3_prefix_stability() -> Outcome {
    let mut violations = 0;
    let mut r = rng(3);
    for seed in 0..500u64 {
        let n = r.random_range(4..=250);
        let blocks = random_blocks(5_000 + seed, n);
        let k = r.random_range(1..n);
        let small = build(&blocks[..k]);
        let big = build(&blocks);
        let (p1, p2) = (small.pivot_chain(), big.pivot_chain());
        let shared = p1.iter().zip(&p2).take_while(|(a, b)| a == b).count();
        let b = p1[shared - 1];
        violations += (small.conflux_order(b).unwrap() != big.conflux_order(b).unwrap()) as usize;
    }
    outcome(violations == 0, format!("500 pairs, {violations} violations"))
}

fn params(q: f64, lh: f64, t: f64) -> RiskParams {
    RiskParams::new(q, lh, t, 0.0).unwrap()
}

fn c4_risk_formula() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut points = 0;
    for q in [0.02, 0.1, 0.25, 0.45, 0.8] {
        for (lh, t) in [(0.1, 0.0), (0.1, 600.0), (1.0, 30.0), (2.0, 250.0), (0.5, 2000.0)] {
            for (n, m) in [(0, 0), (3, 1), (10, 10), (12, 2), (40, 5), (80, 20), (300, 9), (6, 8)] {
                let got = sibling_kickout_bound(n, m, &params(q, lh, t));
                worst = worst.max((got - kickout_oracle(q, lh, t, n, m)).abs());
                points += 1;
            }
        }
    }
    let mut mono = 0;
    let qs = [0.0, 0.05, 0.1, 0.2, 0.3, 0.5, 0.8];
    let ts = [0.0, 10.0, 60.0, 300.0, 1200.0];
    for (qi, &q) in qs.iter().enumerate() {
        for (ti, &t) in ts.iter().enumerate() {
            for n in 0..40u64 {
                for m in 0..12u64 {
                    let b = sibling_kickout_bound(n, m, &params(q, 0.2, t));
                    mono += (sibling_kickout_bound(n + 1, m, &params(q, 0.2, t)) > b + 1e-15) as usize;
                    mono += (sibling_kickout_bound(n, m + 1, &params(q, 0.2, t)) < b - 1e-15) as usize;
                    if qi + 1 < qs.len() {
                        mono += (sibling_kickout_bound(n, m, &params(qs[qi + 1], 0.2, t)) < b - 1e-15) as usize;
                    }
                    if ti + 1 < ts.len() {
                        mono += (sibling_kickout_bound(n, m, &params(q, 0.2, ts[ti + 1])) < b - 1e-15) as usize;
                    }
                }
            }
        }
    }
    let mut edge = 0;
    for (n, m) in [(0, 0), (5, 5), (9, 2), (500, 0)] {
        edge += (sibling_kickout_bound(n, m, &params(0.0, 1.0, 100.0)) != 0.0) as usize;
    }
    for q in [0.0, 0.3, 0.9] {
        edge += (sibling_kickout_bound(2, 3, &params(q, 1.0, 100.0)) != 1.0) as usize;
    }
    outcome(
        points == 200 && worst <= 1e-9 && mono == 0 && edge == 0,
        format!("{points} points, max deviation {worst:.2e}, {mono} monotonicity and {edge} edge violations"),
    )
}

fn c5_bound_dominance() -> Outcome {
    let plan = AttackPlan::pivot_revert(5.0, 1000.0);
    let mut pass = true;
    let mut parts = Vec::new();
    for (q, base) in [(0.1, 10_000u64), (0.2, 20_000), (0.25, 30_000)] {
        let cfg = SimConfig {
            num_nodes: 4,
            lambda: 1.0 + q,
            attacker_q: q,
            d: 0.5,
            duration: 200.0,
            seed: base,
            ..SimConfig::default()
        };
        let r = double_spend_experiment(&cfg, &plan, 1e-4, 10_000).unwrap();
        pass &= r.confirmed > 0 && r.bound_dominates;
        parts.push(format!(
            "q={q}: {}/{} reverted, 99% band [{:.2e}, {:.2e}], mean bound {:.2e}",
            r.reverted, r.confirmed, r.ci_low, r.ci_high, r.mean_bound
        ));
    }
    outcome(pass, parts.join("; "))
}

fn c6_utilization() -> Outcome {
    let d = 1.0;
    let mut conflux_ok = true;
    let mut longest = Vec::new();
    for ld in [0.1, 0.5, 1.0, 2.0] {
        let lambda = ld / d;
        let mut total = 0.0;
        for seed in 0..50 {
            let cfg = SimConfig {
                num_nodes: 10,
                lambda,
                d,
                duration: 300.0 / lambda,
                seed,
                ..SimConfig::default()
            };
            conflux_ok &= sim::run(&cfg).unwrap().metrics.utilization == 1.0;
            total += sim::run(&SimConfig {
                rule: Rule::Longest,
                ..cfg
            })
            .unwrap()
            .metrics
            .utilization;
        }
        longest.push(total / 50.0);
    }
    let monotone = longest.windows(2).all(|w| w[1] <= w[0]);
    let shown: Vec<String> = longest.iter().map(|x| format!("{x:.3}")).collect();
    outcome(
        conflux_ok && monotone,
        format!("conflux always 1: {conflux_ok}; longest mean {}", shown.join(" > ")),
    )
}

fn attack_cases() -> [(u64, u64); 2] {
    [(8, 2), (12, 3)]
}

fn c7_phantom_lemmas() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (kd, kp) in attack_cases() {
        let i_max = 3 * kd - 14 + 2;
        let r = run_liveness_attack(&AttackSchedule::new(kd, kp, i_max).unwrap(), kd + kp, &[]).unwrap();
        let l = &r.lemmas;
        let ok = l.malicious_anti_count && l.honest_anti_bound && l.honest_blue_past && l.malicious_blue_past;
        pass &= ok && l.all_hold();
        parts.push(format!("k_delta={kd} k'={kp} i_max={i_max}: {} violations", l.violations.len()));
    }
    outcome(pass, parts.join("; "))
}

fn c8_phantom_kickout() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (kd, kp) in attack_cases() {
        let i_max = 3 * kd - 14 + 2;
        let sched = AttackSchedule::new(kd, kp, i_max).unwrap();
        let all: Vec<u64> = (1..=i_max).collect();
        let r = run_liveness_attack(&sched, kd + kp, &all).unwrap();
        let bad = r
            .checkpoints
            .iter()
            .filter(|c| !c.honest_through_b2 || (c.w >= sched.flip_start() && !c.attack_through_a1))
            .count();
        pass &= bad == 0 && r.honest_snapshot_violations.is_empty() && r.violations == 0;
        parts.push(format!(
            "k_delta={kd}: {} checkpoints, flips required from w={}, {bad} bad, {} snapshot violations",
            r.checkpoints.len(),
            sched.flip_start(),
            r.honest_snapshot_violations.len()
        ));
    }
    outcome(pass, parts.join("; "))
}

fn c9_phantom_probability() -> Outcome {
    // 15% of the total power, i.e. a rate ratio of 0.15/0.85
    let share = attack_success_probability_for_share(0.15, 40).unwrap();
    let ratio = attack_success_probability(0.15, 40).unwrap();
    outcome(
        (share - 0.989).abs() <= 0.001,
        format!("15% share: {share:.6}; rate ratio 0.15: {ratio:.6}"),
    )
}

fn cli(args: &[&str]) -> (i32, Vec<u8>) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = conflux::cli::run(std::iter::once("conflux").chain(args.iter().copied()), &mut out, &mut err);
    (code, out)
}

fn c10_determinism() -> Outcome {
    let config = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/sim_small.toml");
    let dir = tempfile::tempdir().unwrap();
    let saved = dir.path().join("run.json");
    let args = [
        "simulate",
        "--config",
        config,
        "--seeds",
        "3",
        "--rules",
        "conflux,ghost,longest",
        "--sweep-lambda-d",
        "0.5,2",
    ];
    let (c1, first) = cli(&args);
    let (c2, second) = cli(&args);
    std::fs::write(&saved, &first).unwrap();
    let (c3, replayed) = cli(&["simulate", "--replay", saved.to_str().unwrap()]);
    let ok = c1 == 0 && c2 == 0 && c3 == 0 && first == second && first == replayed;
    outcome(ok, format!("{} bytes, rerun and replay identical: {ok}", first.len()))
}

fn main() {
    let criteria: [(u32, fn() -> Outcome); 10] = [
        (1, c1_sample),
        (2, c2_order_properties),
        (3, c3_prefix_stability),
        (4, c4_risk_formula),
        (5, c5_bound_dominance),
        (6, c6_utilization),
        (7, c7_phantom_lemmas),
        (8, c8_phantom_kickout),
        (9, c9_phantom_probability),
        (10, c10_determinism),
    ];
    let mut failed = 0;
    for (n, f) in criteria {
        let start = Instant::now();
        let o = f();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        failed += !o.pass as usize;
        println!("criterion {n}: {verdict} ({:.1}s) {}", start.elapsed().as_secs_f64(), o.detail);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
