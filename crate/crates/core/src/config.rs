//! Run configuration: JSON schema, validation, and object construction.
//!
//! A run is fully described by one JSON document — model, payoff, level
//! geometry, estimator kind, accuracy target, and sampling controls — plus
//! the RNG seed. Reruns with the same document and seed are byte-identical,
//! so reports embed the SHA-256 digest of the effective configuration
//! alongside the seed to make every output self-describing.
//!
//! Unknown fields anywhere in the document are rejected: a typo in a
//! parameter name must fail loudly rather than silently fall back to a
//! default.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::{DiscreteFactor, LossFactorModel};
use crate::mlmc::{
    AdaptiveOptions, EstimatorKind, LevelGeometry, DEFAULT_COST_BUDGET, DEFAULT_PILOT_SAMPLES,
};
use crate::payoff::{GenericPayoff, LossPayoff, ScaledPayoff, TranchePayoff, TrancheQuote};
use crate::structural::StructuralParams;

/// Top-level run configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub payoff: PayoffConfig,
    pub geometry: LevelGeometry,
    pub estimator: EstimatorKind,
    /// Target standard deviation of the multilevel estimate.
    pub gamma: f64,
    /// Pilot samples drawn when a level becomes active.
    #[serde(default = "default_pilot_samples")]
    pub pilot_samples: u64,
    /// Base RNG seed (CLI `--seed` overrides it).
    #[serde(default)]
    pub seed: u64,
    /// Sampling cost budget; exceeding it aborts the run.
    #[serde(default = "default_cost_budget")]
    pub cost_budget: f64,
    /// Convergence studies only: evaluate both estimator kinds on the same
    /// coupled draws instead of independent streams.
    #[serde(default)]
    pub share_pilot_draws: bool,
    #[serde(default)]
    pub convergence: ConvergenceConfig,
    #[serde(default)]
    pub cdf: CdfConfig,
}

fn default_pilot_samples() -> u64 {
    DEFAULT_PILOT_SAMPLES
}

fn default_cost_budget() -> f64 {
    DEFAULT_COST_BUDGET
}

/// Settings of fixed-depth convergence runs.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    #[serde(default = "default_samples_per_level")]
    pub samples_per_level: u64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            samples_per_level: default_samples_per_level(),
        }
    }
}

fn default_samples_per_level() -> u64 {
    100_000
}

/// Settings of factor-distribution sampling.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CdfConfig {
    #[serde(default = "default_cdf_samples")]
    pub samples: u64,
    /// Basket size standing in for the factor under the structural model,
    /// which has no scalar mixing variable to sample directly.
    #[serde(default = "default_proxy_basket")]
    pub proxy_basket: u64,
}

impl Default for CdfConfig {
    fn default() -> Self {
        Self {
            samples: default_cdf_samples(),
            proxy_basket: default_proxy_basket(),
        }
    }
}

fn default_cdf_samples() -> u64 {
    100_000
}

fn default_proxy_basket() -> u64 {
    1_000
}

/// Loss-factor model selection.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelConfig {
    Discrete(DiscreteConfig),
    Beta(BetaConfig),
    Vasicek(VasicekConfig),
    Structural(StructuralConfig),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteConfig {
    /// `(value, weight)` pairs; weights must sum to one.
    pub atoms: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaConfig {
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VasicekConfig {
    pub default_prob: f64,
    pub correlation: f64,
}

/// Structural-model parameters; every field defaults to the calibrated
/// value, so an empty object selects the reference parameterisation.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructuralConfig {
    #[serde(default = "default_initial_mean")]
    pub initial_mean: f64,
    #[serde(default = "default_initial_std")]
    pub initial_std: f64,
    /// The calibration does not pin the drift down; leaving it out selects
    /// zero and emits a warning.
    #[serde(default)]
    pub drift: Option<f64>,
    #[serde(default = "default_structural_correlation")]
    pub correlation: f64,
    #[serde(default = "default_jump_rate")]
    pub jump_rate: f64,
    #[serde(default = "default_jump_mean")]
    pub jump_mean: f64,
    #[serde(default = "default_jump_var")]
    pub jump_var: f64,
    #[serde(default = "default_maturity")]
    pub maturity: f64,
    #[serde(default = "default_obs_interval")]
    pub obs_interval: f64,
}

impl StructuralConfig {
    /// Materialise the parameter set, defaulting an absent drift to zero.
    pub fn to_params(&self) -> StructuralParams {
        StructuralParams {
            initial_mean: self.initial_mean,
            initial_std: self.initial_std,
            drift: self.drift.unwrap_or(0.0),
            correlation: self.correlation,
            jump_rate: self.jump_rate,
            jump_mean: self.jump_mean,
            jump_var: self.jump_var,
            maturity: self.maturity,
            obs_interval: self.obs_interval,
        }
    }
}

fn default_initial_mean() -> f64 {
    StructuralParams::default().initial_mean
}

fn default_initial_std() -> f64 {
    StructuralParams::default().initial_std
}

fn default_structural_correlation() -> f64 {
    StructuralParams::default().correlation
}

fn default_jump_rate() -> f64 {
    StructuralParams::default().jump_rate
}

fn default_jump_mean() -> f64 {
    StructuralParams::default().jump_mean
}

fn default_jump_var() -> f64 {
    StructuralParams::default().jump_var
}

fn default_maturity() -> f64 {
    StructuralParams::default().maturity
}

fn default_obs_interval() -> f64 {
    StructuralParams::default().obs_interval
}

/// Payoff selection.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PayoffConfig {
    /// Tranche payoff directly in loss-fraction units.
    Tranche(TrancheConfig),
    /// Market-style tranche quote on total notional with a recovery rate;
    /// converted to loss-fraction units and scaled back for reporting.
    Quote(QuoteConfig),
    /// Identity payoff `p(l) = l` (expected loss fraction).
    Identity,
    /// Smooth power payoff `p(l) = l^exponent`.
    Power(PowerConfig),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrancheConfig {
    pub attachment: f64,
    pub detachment: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuoteConfig {
    pub attach: f64,
    pub detach: f64,
    pub recovery: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerConfig {
    pub exponent: u32,
}

/// A payoff constructed from configuration, dispatching to the concrete
/// implementations.
pub enum BuiltPayoff {
    Tranche(TranchePayoff),
    ScaledTranche(ScaledPayoff<TranchePayoff>),
    Generic(GenericPayoff),
}

impl BuiltPayoff {
    /// The underlying tranche and the scale applied to its values, when the
    /// payoff is tranche-shaped; exact limit computations need both.
    pub fn as_tranche(&self) -> Option<(&TranchePayoff, f64)> {
        match self {
            BuiltPayoff::Tranche(t) => Some((t, 1.0)),
            BuiltPayoff::ScaledTranche(s) => Some((s.inner(), s.scale())),
            BuiltPayoff::Generic(_) => None,
        }
    }
}

impl LossPayoff for BuiltPayoff {
    fn value(&self, loss: f64) -> f64 {
        match self {
            BuiltPayoff::Tranche(t) => t.value(loss),
            BuiltPayoff::ScaledTranche(s) => s.value(loss),
            BuiltPayoff::Generic(g) => g.value(loss),
        }
    }

    fn lipschitz(&self) -> f64 {
        match self {
            BuiltPayoff::Tranche(t) => t.lipschitz(),
            BuiltPayoff::ScaledTranche(s) => s.lipschitz(),
            BuiltPayoff::Generic(g) => g.lipschitz(),
        }
    }

    fn derivative_lipschitz(&self) -> Option<f64> {
        match self {
            BuiltPayoff::Tranche(t) => t.derivative_lipschitz(),
            BuiltPayoff::ScaledTranche(s) => s.derivative_lipschitz(),
            BuiltPayoff::Generic(g) => g.derivative_lipschitz(),
        }
    }
}

impl RunConfig {
    /// Parse a configuration from JSON text.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Load a configuration file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// SHA-256 digest of the effective configuration (canonical JSON of
    /// this struct, including defaulted fields and the seed).
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let canonical = serde_json::to_string(self).expect("config serializes");
        let hash = Sha256::digest(canonical.as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Build the validated loss-factor model.
    pub fn build_model(&self) -> Result<LossFactorModel> {
        let model = match &self.model {
            ModelConfig::Discrete(cfg) => {
                LossFactorModel::Discrete(DiscreteFactor::new(cfg.atoms.clone())?)
            }
            ModelConfig::Beta(cfg) => LossFactorModel::Beta {
                alpha: cfg.alpha,
                beta: cfg.beta,
            },
            ModelConfig::Vasicek(cfg) => LossFactorModel::Vasicek {
                default_prob: cfg.default_prob,
                correlation: cfg.correlation,
            },
            ModelConfig::Structural(cfg) => LossFactorModel::Structural(cfg.to_params()),
        };
        model.validate()?;
        Ok(model)
    }

    /// Build the payoff, converting quotes to loss-fraction units.
    pub fn build_payoff(&self) -> Result<BuiltPayoff> {
        match &self.payoff {
            PayoffConfig::Tranche(cfg) => Ok(BuiltPayoff::Tranche(TranchePayoff::new(
                cfg.attachment,
                cfg.detachment,
            )?)),
            PayoffConfig::Quote(cfg) => {
                let quote = TrancheQuote::new(cfg.attach, cfg.detach, cfg.recovery)?;
                let tranche = quote.to_payoff()?;
                Ok(BuiltPayoff::ScaledTranche(ScaledPayoff::new(
                    tranche,
                    quote.loss_scale(),
                )?))
            }
            PayoffConfig::Identity => Ok(BuiltPayoff::Generic(GenericPayoff::identity())),
            PayoffConfig::Power(cfg) => Ok(BuiltPayoff::Generic(GenericPayoff::power(
                cfg.exponent,
            )?)),
        }
    }

    /// Validated copy of the level geometry.
    pub fn build_geometry(&self) -> Result<LevelGeometry> {
        LevelGeometry::new(
            self.geometry.refinement,
            self.geometry.base_size,
            self.geometry.max_level,
        )
    }

    /// Adaptive-driver options derived from this configuration.
    pub fn adaptive_options(&self) -> AdaptiveOptions {
        AdaptiveOptions {
            gamma: self.gamma,
            pilot_samples: self.pilot_samples,
            cost_budget: self.cost_budget,
            seed: self.seed,
        }
    }

    /// Check every part of the configuration; returns the first problem.
    pub fn validate(&self) -> Result<()> {
        self.build_model()?;
        self.build_payoff()?;
        self.build_geometry()?;
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::Config(format!(
                "gamma must be a positive number, got {}",
                self.gamma
            )));
        }
        if self.pilot_samples == 0 {
            return Err(Error::Config("pilot_samples must be at least 1".into()));
        }
        if !(self.cost_budget.is_finite() && self.cost_budget > 0.0) {
            return Err(Error::Config(format!(
                "cost_budget must be a positive number, got {}",
                self.cost_budget
            )));
        }
        if self.convergence.samples_per_level == 0 {
            return Err(Error::Config(
                "convergence.samples_per_level must be at least 1".into(),
            ));
        }
        if self.cdf.samples == 0 {
            return Err(Error::Config("cdf.samples must be at least 1".into()));
        }
        if self.cdf.proxy_basket == 0 {
            return Err(Error::Config("cdf.proxy_basket must be at least 1".into()));
        }
        Ok(())
    }

    /// Non-fatal notes the CLI should surface on stderr.
    pub fn warnings(&self) -> Vec<String> {
        let mut warnings = Vec::new();
        if let ModelConfig::Structural(cfg) = &self.model {
            if cfg.drift.is_none() {
                warnings.push(
                    "structural drift not specified; defaulting to 0 (the calibration leaves it free)"
                        .to_string(),
                );
            }
        }
        warnings
    }
}
