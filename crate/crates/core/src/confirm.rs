//! Confirmation risk: attacker block-count distribution, the per-sibling
//! kick-out bound and the prefix bound over a block's pivot ancestry.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, ln_gamma};
use thiserror::Error;

use crate::dag::{BlockId, DagError, DagState};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfirmError {
    #[error("invalid risk parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Dag(#[from] DagError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskParams {
    /// Attacker rate as a fraction of the honest rate.
    pub q: f64,
    /// Honest blocks per second.
    pub lambda_h: f64,
    /// Elapsed seconds for the single-pair bound. [`prefix_risk`] reads it as
    /// the current time and derives each pair's elapsed time from it.
    pub t: f64,
    /// Network delay bound in seconds.
    pub d: f64,
    /// Mass left out when a caller truncates the Poisson series.
    pub epsilon_tail: f64,
}

impl RiskParams {
    pub fn new(q: f64, lambda_h: f64, t: f64, d: f64) -> Result<Self, ConfirmError> {
        let p = RiskParams {
            q,
            lambda_h,
            t,
            d,
            epsilon_tail: 1e-12,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ConfirmError> {
        let bad = |m: &str| Err(ConfirmError::InvalidParams(m.to_string()));
        if !(0.0..1.0).contains(&self.q) {
            return bad("q must lie in [0, 1)");
        }
        if !(self.lambda_h > 0.0 && self.lambda_h.is_finite()) {
            return bad("lambda_h must be positive");
        }
        if !(self.t >= 0.0 && self.t.is_finite()) {
            return bad("t must be non-negative");
        }
        if !(self.d >= 0.0 && self.d.is_finite()) {
            return bad("d must be non-negative");
        }
        if !(self.epsilon_tail > 0.0 && self.epsilon_tail <= 1e-9) {
            return bad("epsilon_tail must lie in (0, 1e-9]");
        }
        Ok(())
    }

    pub fn with_t(self, t: f64) -> Self {
        RiskParams { t, ..self }
    }

    /// Expected attacker blocks within `t`.
    pub fn attacker_mean(&self) -> f64 {
        self.q * self.lambda_h * self.t
    }
}

/// Probability the attacker mines exactly `k` blocks in time `t`.
pub fn zeta(k: u64, params: &RiskParams) -> f64 {
    poisson_pmf(k, params.attacker_mean())
}

fn poisson_pmf(k: u64, mu: f64) -> f64 {
    if mu == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    let kf = k as f64;
    (kf * mu.ln() - mu - ln_gamma(kf + 1.0)).exp()
}

/// P(K > j) for K ~ Poisson(mu).
pub fn poisson_tail(j: u64, mu: f64) -> f64 {
    if mu == 0.0 {
        return 0.0;
    }
    gamma_lr(j as f64 + 1.0, mu).clamp(0.0, 1.0)
}

/// Smallest `k` such that the first `k + 1` masses sum to at least
/// `1 - epsilon_tail`.
pub fn zeta_cutoff(params: &RiskParams) -> u64 {
    let mu = params.attacker_mean();
    let mut k = mu.floor() as u64;
    while poisson_tail(k, mu) > params.epsilon_tail {
        k += 1;
    }
    k
}

/// Terms whose power-of-`q` factor underflows `f64` are folded into one
/// upper bound instead of being summed.
const DROP_LN: f64 = -745.0;

/// Upper bound on the chance that a sibling with `m` honest subtree blocks
/// overtakes a pivot block whose subtree holds `n` blocks seen by everyone.
pub fn sibling_kickout_bound(n: u64, m: u64, params: &RiskParams) -> f64 {
    if m > n {
        return 1.0;
    }
    let gap = n - m;
    if params.q == 0.0 {
        return 0.0;
    }
    let mu = params.attacker_mean();
    let ln_q = params.q.ln();
    if mu == 0.0 {
        // only k = 0 has mass
        return ((gap + 1) as f64 * ln_q).exp().min(1.0);
    }
    // k below k_lo carries a factor of at most q^(span + 2); those terms are
    // replaced by that factor times their total Poisson mass.
    let span = (DROP_LN / ln_q).ceil() as u64;
    let k_lo = gap.saturating_sub(span);
    let ln_mu = mu.ln();
    let mut sum = 0.0;
    for k in k_lo..=gap {
        let kf = k as f64;
        let ln_term = kf * ln_mu - mu - ln_gamma(kf + 1.0) + (gap - k + 1) as f64 * ln_q;
        sum += ln_term.exp();
    }
    if k_lo > 0 {
        let below = 1.0 - poisson_tail(k_lo - 1, mu);
        sum += ((gap - k_lo + 2) as f64 * ln_q).exp() * below;
    }
    (sum + poisson_tail(gap, mu)).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiblingRisk {
    pub pivot: BlockId,
    /// `None` stands for a sibling nobody honest has seen yet.
    pub sibling: Option<BlockId>,
    pub n: u64,
    pub m: u64,
    /// Seconds since the pair's common parent was generated.
    pub t: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub per_sibling: Vec<SiblingRisk>,
    pub prefix_bound: f64,
    pub argmax_pair: Option<(BlockId, Option<BlockId>)>,
    /// Smallest subtree-size lead of a pivot block over one of its observed
    /// siblings.
    pub min_gap: Option<i64>,
}

/// Which competitors [`prefix_risk_scoped`] considers for each pivot block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiblingScope {
    /// Only siblings present in the state.
    Observed,
    /// Observed siblings plus, for every pivot block, a withheld sibling with
    /// no honest blocks under it.
    IncludeUnseen,
}

/// Risk that `b` leaves the pivot chain: the largest kick-out bound over
/// every pivot ancestor of `b` and each of its observed siblings. With no
/// sibling anywhere the bound is 0.
///
/// `state` is the union of what honest nodes have seen and `honest_view` the
/// part of it every honest node had at time `params.t - params.d`. `n` counts
/// honest blocks under the pivot ancestor in `honest_view`; `m` counts honest
/// blocks under the sibling in `state`.
pub fn prefix_risk(
    state: &DagState,
    b: BlockId,
    params: &RiskParams,
    honest_view: &DagState,
) -> Result<RiskReport, DagError> {
    prefix_risk_scoped(state, b, params, honest_view, SiblingScope::Observed)
}

pub fn prefix_risk_scoped(
    state: &DagState,
    b: BlockId,
    params: &RiskParams,
    honest_view: &DagState,
    scope: SiblingScope,
) -> Result<RiskReport, DagError> {
    if !state.is_on_pivot_chain(b) {
        if state.contains(b) {
            return Err(DagError::NotOnPivotChain(b));
        }
        return Err(DagError::UnknownBlock(b));
    }
    let mut report = RiskReport {
        per_sibling: Vec::new(),
        prefix_bound: 0.0,
        argmax_pair: None,
        min_gap: None,
    };
    let chain = state.chain(b)?;
    for w in chain.windows(2) {
        let (parent, a) = (w[0], w[1]);
        let siblings = state.siblings(a)?;
        if siblings.is_empty() && scope == SiblingScope::Observed {
            continue;
        }
        let born = state.block(parent).map_or(0.0, |p| p.timestamp);
        let pair = params.with_t((params.t - born).max(0.0));
        let n = if honest_view.contains(a) {
            honest_view.honest_weight(a)?
        } else {
            0
        };
        let size_a = state.subtree_size(a)? as i64;
        let mut competitors: Vec<(Option<BlockId>, u64)> = Vec::with_capacity(siblings.len() + 1);
        for s in siblings {
            let gap = size_a - state.subtree_size(s)? as i64;
            report.min_gap = Some(report.min_gap.map_or(gap, |g| g.min(gap)));
            competitors.push((Some(s), state.honest_weight(s)?));
        }
        if scope == SiblingScope::IncludeUnseen {
            competitors.push((None, 0));
        }
        for (s, m) in competitors {
            let bound = sibling_kickout_bound(n, m, &pair);
            if report.argmax_pair.is_none() || bound > report.prefix_bound {
                report.prefix_bound = bound;
                report.argmax_pair = Some((a, s));
            }
            report.per_sibling.push(SiblingRisk {
                pivot: a,
                sibling: s,
                n,
                m,
                t: pair.t,
                bound,
            });
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Confirmed,
    Wait,
}

/// Confirmed iff the prefix bound is below `tolerance`.
pub fn confirm_decision(report: &RiskReport, tolerance: f64) -> Decision {
    if report.prefix_bound < tolerance {
        Decision::Confirmed
    } else {
        Decision::Wait
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(q: f64, t: f64) -> RiskParams {
        RiskParams::new(q, 0.1, t, 0.0).unwrap()
    }

    #[test]
    fn zero_power_attacker() {
        let params = p(0.0, 600.0);
        assert_eq!(zeta(0, &params), 1.0);
        assert_eq!(zeta(3, &params), 0.0);
        assert_eq!(sibling_kickout_bound(5, 5, &params), 0.0);
        assert_eq!(sibling_kickout_bound(9, 2, &params), 0.0);
        assert_eq!(sibling_kickout_bound(2, 3, &params), 1.0);
    }

    #[test]
    fn no_elapsed_time_leaves_only_the_power_term() {
        let params = p(0.5, 0.0);
        assert!((sibling_kickout_bound(3, 1, &params) - 0.125).abs() < 1e-15);
    }

    #[test]
    fn zeta_normalizes() {
        let params = p(0.2, 600.0);
        let total: f64 = (0..=zeta_cutoff(&params)).map(|k| zeta(k, &params)).sum();
        assert!((total - 1.0).abs() < 1e-12, "{total}");
    }

    #[test]
    fn params_are_validated() {
        assert!(RiskParams::new(1.0, 0.1, 1.0, 0.0).is_err());
        assert!(RiskParams::new(0.1, 0.0, 1.0, 0.0).is_err());
        assert!(RiskParams::new(0.1, 0.1, -1.0, 0.0).is_err());
        assert!(RiskParams::new(-0.1, 0.1, 1.0, 0.0).is_err());
    }

    #[test]
    fn decision_threshold_is_strict() {
        let r = RiskReport {
            per_sibling: vec![],
            prefix_bound: 0.0,
            argmax_pair: None,
            min_gap: None,
        };
        assert_eq!(confirm_decision(&r, 1e-9), Decision::Confirmed);
        let r = RiskReport { prefix_bound: 1.0, ..r };
        assert_eq!(confirm_decision(&r, 0.999), Decision::Wait);
        assert_eq!(confirm_decision(&r, 1.0), Decision::Wait);
    }
}
