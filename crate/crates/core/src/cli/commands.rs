use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    emit, read, render_json, write_file, AttackArgs, CliError, Format, Header, OrderArgs, PhantomArgs, RiskArgs,
    SimulateArgs, TOOL,
};
use crate::adversary::{double_spend_experiment, AttackError, AttackPlan};
use crate::confirm::{confirm_decision, sibling_kickout_bound, RiskParams};
use crate::dag::{parse_dag_file, write_dag_file, BlockId, DagFileError};
use crate::ledger::{derive_tx_order, verdicts_csv};
use crate::phantom::{
    attack_success_probability, build_attack_dag, run_liveness_attack, AttackSchedule, PhantomError, Role,
};
use crate::sim::{self, Rule, SimConfig, SimError, SimMetrics};
use crate::stats::Summary;

fn sim_error(e: SimError) -> CliError {
    match e {
        SimError::ConfigParse(m) => CliError::Parse(format!("config: {m}")),
        SimError::ConfigInvalid(m) => CliError::Domain(format!("config: {m}")),
    }
}

fn attack_error(e: AttackError) -> CliError {
    match e {
        AttackError::PlanParse(m) => CliError::Parse(format!("plan: {m}")),
        AttackError::PlanInvalid(m) => CliError::Domain(format!("plan: {m}")),
        AttackError::Sim(e) => sim_error(e),
    }
}

fn dag_file_error(e: DagFileError) -> CliError {
    match e {
        DagFileError::Parse { .. } | DagFileError::MissingHeader => CliError::Parse(e.to_string()),
        _ => CliError::Domain(e.to_string()),
    }
}

fn phantom_error(e: PhantomError) -> CliError {
    CliError::Domain(e.to_string())
}

pub(super) fn order(args: OrderArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let file = parse_dag_file(&read(&args.file)?).map_err(dag_file_error)?;
    let state = file.into_state().map_err(dag_file_error)?;
    let order = state.total_order();
    let epochs = state.epochs();
    let (verdicts, ledger) = derive_tx_order(&order, &state).map_err(|e| CliError::Domain(e.to_string()))?;
    if let Some(path) = &args.verdicts_csv {
        write_file(path, &verdicts_csv(&verdicts))?;
    }
    let names = |ids: &[BlockId]| ids.iter().map(|b| file.name(*b)).collect::<Vec<_>>();
    let text = match args.format {
        Format::Json => {
            let header = Header::new("order", None, json!({ "file": args.file.display().to_string() }));
            render_json(&json!({
                "header": header,
                "pivot_chain": names(&epochs.pivot),
                "epochs": epochs.members.iter().map(|m| names(&m.iter().copied().collect::<Vec<_>>())).collect::<Vec<_>>(),
                "total_order": names(&order),
                "verdicts": verdicts.iter().map(|v| json!({
                    "txid": v.txid,
                    "status": v.status,
                    "position": v.position,
                    "block": file.name(v.block),
                })).collect::<Vec<_>>(),
                "balances": ledger.balances,
            }))
        }
        Format::Csv => {
            let mut out = String::from("position,block,label,epoch\n");
            for (i, b) in order.iter().enumerate() {
                let epoch = epochs.epoch_of.get(b).map(|e| e.to_string()).unwrap_or_default();
                out.push_str(&format!("{i},{b},{},{epoch}\n", file.name(*b)));
            }
            out
        }
    };
    emit(&args.out, &text, stdout)
}

pub(super) fn risk(args: RiskArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let params = RiskParams::new(args.q, args.lambda_h, args.t, args.d).map_err(|e| CliError::Domain(e.to_string()))?;
    if !(args.tolerance > 0.0 && args.tolerance <= 1.0) {
        return Err(CliError::Domain("tolerance must lie in (0, 1]".into()));
    }
    let bound = sibling_kickout_bound(args.n, args.m, &params);
    let report = crate::confirm::RiskReport {
        per_sibling: Vec::new(),
        prefix_bound: bound,
        argmax_pair: None,
        min_gap: None,
    };
    let header = Header::new(
        "risk",
        None,
        json!({
            "q": args.q, "lambda_h": args.lambda_h, "t": args.t, "d": args.d,
            "n": args.n, "m": args.m, "tolerance": args.tolerance,
        }),
    );
    let text = render_json(&json!({
        "header": header,
        "bound": bound,
        "decision": confirm_decision(&report, args.tolerance),
    }));
    emit(&args.out, &text, stdout)
}

/// Everything a simulate run depends on; stored in the output header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulatePlan {
    sim: SimConfig,
    seeds: u64,
    rules: Vec<Rule>,
    sweep_lambda_d: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct RunRow {
    lambda_d: Option<f64>,
    rule: Rule,
    seed: u64,
    metrics: SimMetrics,
}

#[derive(Debug, Clone, Serialize)]
struct TableRow {
    lambda_d: Option<f64>,
    rule: Rule,
    runs: usize,
    mean_utilization: f64,
    mean_epoch_coverage: f64,
    mean_pivot_reversions: f64,
    /// Pooled over every run's per-block latencies.
    confirmation: Option<Summary>,
}

fn replay_plan(path: &std::path::Path) -> Result<SimulatePlan, CliError> {
    let doc: Value = serde_json::from_str(&read(path)?).map_err(|e| CliError::Parse(format!("replay: {e}")))?;
    let header: Header = serde_json::from_value(doc.get("header").cloned().unwrap_or(Value::Null))
        .map_err(|e| CliError::Parse(format!("replay header: {e}")))?;
    if header.tool != TOOL || header.command != "simulate" {
        return Err(CliError::Parse("replay: not a simulate output".into()));
    }
    serde_json::from_value(header.config).map_err(|e| CliError::Parse(format!("replay config: {e}")))
}

pub(super) fn simulate(args: SimulateArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let plan = match &args.replay {
        Some(path) => replay_plan(path)?,
        None => {
            let path = args.config.as_ref().expect("clap enforces --config");
            let mut sim = SimConfig::from_toml(&read(path)?).map_err(sim_error)?;
            if let Some(seed) = args.seed {
                sim.seed = seed;
            }
            let rules = if args.rules.is_empty() { vec![sim.rule] } else { args.rules.clone() };
            SimulatePlan {
                sim,
                seeds: args.seeds,
                rules,
                sweep_lambda_d: args.sweep_lambda_d.clone(),
            }
        }
    };
    plan.sim.validate().map_err(sim_error)?;
    if plan.seeds == 0 || plan.rules.is_empty() {
        return Err(CliError::Domain("need at least one seed and one rule".into()));
    }
    if !plan.sweep_lambda_d.is_empty() && plan.sim.d <= 0.0 {
        return Err(CliError::Domain("a lambda * d sweep needs d > 0".into()));
    }
    if plan.sweep_lambda_d.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
        return Err(CliError::Domain("sweep values must be positive".into()));
    }

    let points: Vec<Option<f64>> = if plan.sweep_lambda_d.is_empty() {
        vec![None]
    } else {
        plan.sweep_lambda_d.iter().copied().map(Some).collect()
    };
    let mut jobs = Vec::new();
    for &ld in &points {
        for &rule in &plan.rules {
            for i in 0..plan.seeds {
                let mut cfg = plan.sim.clone();
                cfg.rule = rule;
                cfg.seed = plan.sim.seed.wrapping_add(i);
                if let Some(x) = ld {
                    cfg.lambda = x / cfg.d;
                }
                jobs.push((ld, cfg));
            }
        }
    }
    let traces = jobs
        .par_iter()
        .map(|(ld, cfg)| sim::run(cfg).map(|t| (*ld, t)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(sim_error)?;

    if let Some(dir) = &args.blocks_dir {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io {
            path: dir.clone(),
            message: e.to_string(),
        })?;
        for (ld, t) in &traces {
            let suffix = ld.map(|x| format!("_ld{x}")).unwrap_or_default();
            let name = format!("blocks_{}_seed{}{suffix}.csv", t.config.rule.name(), t.config.seed);
            let text = format!("#conflux-blocks v1\n{}", t.blocks_csv());
            write_file(&dir.join(name), &text)?;
        }
    }

    let mut table = Vec::new();
    for &ld in &points {
        for &rule in &plan.rules {
            let group: Vec<_> = traces
                .iter()
                .filter(|(l, t)| *l == ld && t.config.rule == rule)
                .map(|(_, t)| t)
                .collect();
            let n = group.len() as f64;
            let mean = |f: &dyn Fn(&SimMetrics) -> f64| group.iter().map(|t| f(&t.metrics)).sum::<f64>() / n;
            let latencies: Vec<f64> = group.iter().flat_map(|t| t.latencies.iter().map(|(_, l)| *l)).collect();
            table.push(TableRow {
                lambda_d: ld,
                rule,
                runs: group.len(),
                mean_utilization: mean(&|m| m.utilization),
                mean_epoch_coverage: mean(&|m| m.epoch_coverage),
                mean_pivot_reversions: mean(&|m| m.pivot_reversions as f64),
                confirmation: Summary::of(&latencies),
            });
        }
    }
    let runs: Vec<RunRow> = traces
        .into_iter()
        .map(|(ld, t)| RunRow {
            lambda_d: ld,
            rule: t.config.rule,
            seed: t.config.seed,
            metrics: t.metrics,
        })
        .collect();
    let header = Header::new(
        "simulate",
        Some(plan.sim.seed),
        serde_json::to_value(&plan).expect("plan serializes"),
    );
    let text = render_json(&json!({ "header": header, "table": table, "runs": runs }));
    emit(&args.out, &text, stdout)
}

pub(super) fn attack(args: AttackArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let mut config = SimConfig::from_toml(&read(&args.config)?).map_err(sim_error)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let plan = AttackPlan::from_toml(&read(&args.plan)?).map_err(attack_error)?;
    let tolerance = args.tolerance.unwrap_or(config.confirm_tolerance);
    if !(tolerance > 0.0 && tolerance <= 1.0) {
        return Err(CliError::Domain("tolerance must lie in (0, 1]".into()));
    }
    if args.seeds == 0 {
        return Err(CliError::Domain("need at least one seed".into()));
    }
    let report = double_spend_experiment(&config, &plan, tolerance, args.seeds).map_err(attack_error)?;
    if let Some(path) = &args.csv {
        write_file(path, &report.outcomes_csv())?;
    }
    let header = Header::new(
        "attack",
        Some(config.seed),
        json!({ "sim": config, "plan": plan, "seeds": args.seeds, "tolerance": tolerance }),
    );
    let text = render_json(&json!({
        "header": header,
        "runs": report.runs,
        "confirmed": report.confirmed,
        "reverted": report.reverted,
        "frequency": report.frequency,
        "ci_low": report.ci_low,
        "ci_high": report.ci_high,
        "confidence": 0.99,
        "mean_bound": report.mean_bound,
        "bound_dominates": report.bound_dominates,
    }));
    emit(&args.out, &text, stdout)
}

#[derive(Debug, Serialize)]
struct BoundReport {
    q: f64,
    attacker_share: f64,
    success_probability: f64,
    /// The bound when the `--q` value is read as a share of total power.
    #[serde(skip_serializing_if = "Option::is_none")]
    success_probability_q_as_share: Option<f64>,
}

pub(super) fn phantom_attack(args: PhantomArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let i_max = args
        .i_max
        .unwrap_or_else(|| (3 * args.k_delta).saturating_sub(14).max(1));
    let schedule = AttackSchedule::new(args.k_delta, args.k_prime, i_max).map_err(phantom_error)?;

    let bound = match (args.q, args.attacker_share) {
        (Some(q), _) => Some(BoundReport {
            q,
            attacker_share: q / (1.0 + q),
            success_probability: attack_success_probability(q, args.k_delta).map_err(phantom_error)?,
            success_probability_q_as_share: if q < 1.0 {
                Some(attack_success_probability(q / (1.0 - q), args.k_delta).map_err(phantom_error)?)
            } else {
                None
            },
        }),
        (None, Some(share)) => {
            if !(share > 0.0 && share < 1.0) {
                return Err(CliError::Domain("attacker share must lie in (0, 1)".into()));
            }
            let q = share / (1.0 - share);
            Some(BoundReport {
                q,
                attacker_share: share,
                success_probability: attack_success_probability(q, args.k_delta).map_err(phantom_error)?,
                success_probability_q_as_share: None,
            })
        }
        (None, None) => None,
    };

    let checkpoints: Vec<u64> = (1..=i_max).collect();
    let report = run_liveness_attack(&schedule, schedule.k(), &checkpoints).map_err(phantom_error)?;
    if let Some(path) = &args.dag_out {
        let dag = build_attack_dag(&schedule).map_err(phantom_error)?;
        write_file(path, &write_dag_file(&dag.state, &dag.labels()))?;
    }
    let label = |b: BlockId| {
        if b.0 >= crate::phantom::MALICIOUS_BASE {
            Role::Malicious(b.0 - crate::phantom::MALICIOUS_BASE).label()
        } else {
            Role::Honest(b.0).label()
        }
    };
    let flip_start = schedule.flip_start();
    let rows: Vec<Value> = report
        .checkpoints
        .iter()
        .map(|c| {
            json!({
                "w": c.w,
                "v": c.v,
                "flip_expected": c.w >= flip_start,
                "honest_tip": label(c.honest_tip),
                "honest_through_b2": c.honest_through_b2,
                "attack_tip": label(c.attack_tip),
                "attack_through_a1": c.attack_through_a1,
                "attack_expels_b2": c.attack_expels_b2,
            })
        })
        .collect();
    let mut lemmas: BTreeMap<&str, Value> = BTreeMap::new();
    lemmas.insert("malicious_anti_count", json!(report.lemmas.malicious_anti_count));
    lemmas.insert("honest_anti_bound", json!(report.lemmas.honest_anti_bound));
    lemmas.insert("honest_anti_honest", json!(report.lemmas.honest_anti_honest));
    lemmas.insert("honest_blue_past", json!(report.lemmas.honest_blue_past));
    lemmas.insert("malicious_blue_past", json!(report.lemmas.malicious_blue_past));
    lemmas.insert("violations", json!(report.lemmas.violations));

    let header = Header::new(
        "phantom-attack",
        None,
        json!({
            "k_delta": args.k_delta, "k_prime": args.k_prime, "i_max": i_max,
            "q": args.q, "attacker_share": args.attacker_share,
        }),
    );
    let text = render_json(&json!({
        "header": header,
        "k": schedule.k(),
        "honest_blocks": schedule.honest_count(),
        "malicious_blocks": i_max,
        "flip_start": flip_start,
        "lemmas": lemmas,
        "checkpoints": rows,
        "honest_snapshot_violations": report.honest_snapshot_violations,
        "violations": report.violations,
        "bound": bound,
    }));
    emit(&args.out, &text, stdout)
}
