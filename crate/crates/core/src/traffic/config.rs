use serde::{Deserialize, Serialize};

use crate::dpkalman::Scheme;
use crate::error::{Error, Result};

/// Configuration of a traffic experiment. Velocities are in km/h, positions
/// in meters, times in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub n_participants: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(rename = "T_s")]
    pub t_s: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub mean_initial_velocity: f64,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<Scheme>,
    /// Velocity the filters start from; defaults to `mean_initial_velocity`.
    #[serde(default)]
    pub filter_init_velocity: Option<f64>,
    #[serde(default = "default_velocity_std")]
    pub init_velocity_std: f64,
    #[serde(default = "default_position_std")]
    pub init_position_std: f64,
    /// Worker threads for the trials. Results do not depend on it, so it is
    /// not echoed into the summary.
    #[serde(default, skip_serializing)]
    pub threads: Option<usize>,
    /// Grid points of the `λ`-cap sweep of the synthesized scheme (0 keeps
    /// the free-`λ` solution).
    #[serde(default = "default_sweep_steps")]
    pub sweep_steps: usize,
}

fn default_horizon() -> usize {
    600
}

fn default_trials() -> usize {
    50
}

fn default_schemes() -> Vec<Scheme> {
    Scheme::ALL.to_vec()
}

fn default_velocity_std() -> f64 {
    5.0
}

fn default_position_std() -> f64 {
    50.0
}

fn default_sweep_steps() -> usize {
    12
}

impl Default for SimulationConfig {
    /// The fleet experiment: 200 vehicles at 45 km/h, `ρ = 100` m,
    /// `ε = ln 3`, `δ = 0.05`.
    fn default() -> Self {
        Self {
            n_participants: 200,
            horizon: default_horizon(),
            trials: default_trials(),
            seed: 0,
            t_s: 1.0,
            sigma1: 1.0,
            sigma2: 1.0,
            rho: 100.0,
            epsilon: 3f64.ln(),
            delta: 0.05,
            mean_initial_velocity: 45.0,
            schemes: default_schemes(),
            filter_init_velocity: None,
            init_velocity_std: default_velocity_std(),
            init_position_std: default_position_std(),
            threads: None,
            sweep_steps: default_sweep_steps(),
        }
    }
}

impl SimulationConfig {
    /// Parses and validates a JSON config; errors name the offending line
    /// and column or field.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn filter_init_velocity(&self) -> f64 {
        self.filter_init_velocity.unwrap_or(self.mean_initial_velocity)
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, msg: String| Err(Error::Invalid(format!("config field `{name}`: {msg}")));
        if self.n_participants == 0 || self.n_participants >= 1 << 24 {
            return field(
                "n_participants",
                format!("must lie in [1, 2^24), got {}", self.n_participants),
            );
        }
        if self.horizon == 0 {
            return field("horizon", "must be at least 1".into());
        }
        if self.trials == 0 || self.trials as u64 > u32::MAX as u64 {
            return field("trials", format!("must lie in [1, 2^32), got {}", self.trials));
        }
        for (name, v) in [
            ("T_s", self.t_s),
            ("sigma1", self.sigma1),
            ("sigma2", self.sigma2),
            ("epsilon", self.epsilon),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return field(name, format!("must be positive and finite, got {v}"));
            }
        }
        if !(self.delta > 0.0 && self.delta <= 0.5) {
            return field("delta", format!("must lie in (0, 0.5], got {}", self.delta));
        }
        for (name, v) in [
            ("rho", self.rho),
            ("init_velocity_std", self.init_velocity_std),
            ("init_position_std", self.init_position_std),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return field(name, format!("must be nonnegative and finite, got {v}"));
            }
        }
        for (name, v) in [
            ("mean_initial_velocity", Some(self.mean_initial_velocity)),
            ("filter_init_velocity", self.filter_init_velocity),
        ] {
            if let Some(v) = v {
                if !v.is_finite() {
                    return field(name, format!("must be finite, got {v}"));
                }
            }
        }
        if self.schemes.is_empty() {
            return field("schemes", "list at least one scheme".into());
        }
        for (i, s) in self.schemes.iter().enumerate() {
            if self.schemes[..i].contains(s) {
                return field("schemes", format!("`{s}` listed twice"));
            }
        }
        if self.threads == Some(0) {
            return field("threads", "must be at least 1".into());
        }
        Ok(())
    }
}
