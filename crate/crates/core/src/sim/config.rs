use serde::{Deserialize, Serialize};

use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayKind {
    /// Every delivery takes exactly `d`.
    Constant,
    /// Uniform on `[0, d]`, sampled per delivery.
    Uniform,
    /// Fixed per-pair delays from `delay_matrix`.
    Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Conflux,
    Ghost,
    Longest,
}

impl Rule {
    pub const ALL: [Rule; 3] = [Rule::Conflux, Rule::Ghost, Rule::Longest];

    pub fn name(self) -> &'static str {
        match self {
            Rule::Conflux => "conflux",
            Rule::Ghost => "ghost",
            Rule::Longest => "longest",
        }
    }
}

impl std::str::FromStr for Rule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "conflux" => Ok(Rule::Conflux),
            "ghost" => Ok(Rule::Ghost),
            "longest" => Ok(Rule::Longest),
            other => Err(format!("unknown rule `{other}` (expected conflux, ghost or longest)")),
        }
    }
}

/// Scenario description. Deserializes from a flat TOML table; every field
/// except the ones documented as required has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub num_nodes: usize,
    /// Total block rate (honest plus attacker), blocks per second.
    pub lambda: f64,
    /// Attacker rate as a fraction of the honest rate.
    pub attacker_q: f64,
    pub delay_model: DelayKind,
    /// Delay bound in seconds.
    pub d: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delay_matrix: Option<Vec<Vec<f64>>>,
    pub block_size_txs: usize,
    /// Seconds during which blocks are mined. Delivery continues afterwards
    /// until no message is in flight.
    pub duration: f64,
    pub seed: u64,
    pub rule: Rule,
    /// Number of recent pivot blocks whose median timestamp bounds a new
    /// block's timestamp from below. Zero disables the check.
    pub stale_window: usize,
    /// Largest accepted timestamp lead over the receiver's clock.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stale_future: Option<f64>,
    /// Attacker power assumed when measuring confirmation latency.
    pub confirm_q: f64,
    pub confirm_tolerance: f64,
    /// Whether to measure confirmation latency at all.
    pub track_confirmation: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            num_nodes: 4,
            lambda: 1.0,
            attacker_q: 0.0,
            delay_model: DelayKind::Constant,
            d: 1.0,
            delay_matrix: None,
            block_size_txs: 0,
            duration: 100.0,
            seed: 0,
            rule: Rule::Conflux,
            stale_window: 0,
            stale_future: None,
            confirm_q: 0.25,
            confirm_tolerance: 1e-4,
            track_confirmation: false,
        }
    }
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| SimError::ConfigParse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Honest block rate.
    pub fn lambda_h(&self) -> f64 {
        self.lambda / (1.0 + self.attacker_q)
    }

    /// Chance a mining event goes to the attacker.
    pub fn attacker_share(&self) -> f64 {
        self.attacker_q / (1.0 + self.attacker_q)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::ConfigInvalid(m));
        if self.num_nodes == 0 {
            return bad("num_nodes must be at least 1".into());
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be positive".into());
        }
        if !(0.0..1.0).contains(&self.attacker_q) {
            return bad("attacker_q must lie in [0, 1)".into());
        }
        if !(self.d >= 0.0 && self.d.is_finite()) {
            return bad("d must be non-negative".into());
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad("duration must be positive".into());
        }
        if !(0.0..1.0).contains(&self.confirm_q) {
            return bad("confirm_q must lie in [0, 1)".into());
        }
        if !(self.confirm_tolerance > 0.0 && self.confirm_tolerance <= 1.0) {
            return bad("confirm_tolerance must lie in (0, 1]".into());
        }
        if let Some(f) = self.stale_future {
            if f.is_nan() || f < 0.0 {
                return bad("stale_future must be non-negative".into());
            }
        }
        match (self.delay_model, &self.delay_matrix) {
            (DelayKind::Matrix, None) => return bad("delay_model = \"matrix\" needs delay_matrix".into()),
            (DelayKind::Matrix, Some(m)) => {
                if m.len() != self.num_nodes || m.iter().any(|row| row.len() != self.num_nodes) {
                    return bad(format!("delay_matrix must be {0}x{0}", self.num_nodes));
                }
                if m.iter().flatten().any(|&x| !(x >= 0.0 && x <= self.d)) {
                    return bad("delay_matrix entries must lie in [0, d]".into());
                }
            }
            (_, Some(_)) => return bad("delay_matrix is only used with delay_model = \"matrix\"".into()),
            _ => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_roundtrip() {
        let cfg = SimConfig {
            delay_model: DelayKind::Matrix,
            num_nodes: 2,
            delay_matrix: Some(vec![vec![0.0, 0.5], vec![0.25, 0.0]]),
            stale_future: Some(30.0),
            ..SimConfig::default()
        };
        assert_eq!(SimConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(SimConfig::from_toml("num_nodes = 0").is_err());
        assert!(SimConfig::from_toml("attacker_q = 1.0").is_err());
        assert!(SimConfig::from_toml("nodes = 3").is_err());
        assert!(SimConfig::from_toml("delay_model = \"matrix\"").is_err());
        let m = "num_nodes = 2\nd = 0.1\ndelay_model = \"matrix\"\ndelay_matrix = [[0, 0.2], [0, 0]]";
        assert!(SimConfig::from_toml(m).is_err());
    }
}
