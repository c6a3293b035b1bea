use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::controllers::{ControllerKind, PfSettings, SpendPredictor};
use crate::env::{
    DeclineForm, EnvTheta, ExecutionConfig, HistoryConfig, MonthlyConvention, RegimeKind,
    RegimeSpec,
};
use crate::error::{Error, Result};

/// Regime as written in a config file; unset fields take per-kind defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeConfig {
    pub kind: RegimeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rw_sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decline_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decline_form: Option<DeclineForm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smooth_lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smooth_upper: Option<f64>,
}

impl RegimeConfig {
    pub fn spec(&self) -> RegimeSpec<f64> {
        let base = match self.kind {
            RegimeKind::Static => RegimeSpec::static_regime(),
            RegimeKind::RandomWalk => RegimeSpec::random_walk(0.025),
            RegimeKind::Seasonal => RegimeSpec::seasonal(0.1, DeclineForm::Geometric),
        };
        RegimeSpec {
            kind: self.kind,
            rw_sigma: self.rw_sigma.unwrap_or(base.rw_sigma),
            decline_rate: self.decline_rate.unwrap_or(base.decline_rate),
            decline_form: self.decline_form.unwrap_or(base.decline_form),
            smooth_lower: self.smooth_lower.unwrap_or(base.smooth_lower),
            smooth_upper: self.smooth_upper.unwrap_or(base.smooth_upper),
        }
    }

    fn resolved(&self) -> Self {
        let s = self.spec();
        Self {
            kind: s.kind,
            rw_sigma: Some(s.rw_sigma),
            decline_rate: Some(s.decline_rate),
            decline_form: Some(s.decline_form),
            smooth_lower: Some(s.smooth_lower),
            smooth_upper: Some(s.smooth_upper),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSettings {
    pub theta0: EnvTheta<f64>,
    pub exec: ExecutionConfig<f64>,
}

impl Default for EnvSettings {
    fn default() -> Self {
        Self {
            theta0: EnvTheta {
                amplitude: 1000.0,
                rate: 0.001,
                shape: 1.6,
            },
            exec: ExecutionConfig {
                tracking_rate: 0.5,
                exec_noise_coeff: 1.0,
                obs_noise_sd: 30.0,
                alpha_drift_sigma: 0.0,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HistorySettings {
    pub years: usize,
    pub annual_budget: f64,
    pub sinusoid_amplitude: f64,
    pub peak_week: f64,
}

impl Default for HistorySettings {
    fn default() -> Self {
        Self {
            years: 2,
            annual_budget: 364_000.0,
            sinusoid_amplitude: 0.3,
            peak_week: 6.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetSettings {
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub weeks_per_month: usize,
    pub quarter: usize,
    /// Week-1 ratio anchor; `None` uses `B_Q / W`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anchor: Option<f64>,
}

impl Default for BudgetSettings {
    fn default() -> Self {
        Self {
            lambda_lo: 0.9,
            lambda_hi: 1.1,
            weeks_per_month: 4,
            quarter: 1,
            anchor: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentificationSettings {
    /// Trailing history weeks for the static fit.
    pub static_weeks: usize,
    pub rolling_window: usize,
}

impl Default for IdentificationSettings {
    fn default() -> Self {
        Self {
            static_weeks: 52,
            rolling_window: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsSettings {
    pub bootstrap_reps: usize,
}

impl Default for StatsSettings {
    fn default() -> Self {
        Self {
            bootstrap_reps: 10_000,
        }
    }
}

fn default_weeks() -> usize {
    12
}
fn default_controllers() -> Vec<ControllerKind> {
    vec![
        ControllerKind::BaselinePacing,
        ControllerKind::MpcStatic,
        ControllerKind::MpcOracle,
    ]
}
fn default_trials() -> usize {
    200
}
fn default_seed() -> u64 {
    20_240_601
}
fn default_predictor() -> SpendPredictor<f64> {
    SpendPredictor::Identity
}

/// One experiment: a regime, an environment and a list of controllers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub regime: RegimeConfig,
    #[serde(default)]
    pub env: EnvSettings,
    #[serde(default)]
    pub history: HistorySettings,
    #[serde(default)]
    pub budget: BudgetSettings,
    #[serde(default = "default_weeks")]
    pub weeks: usize,
    #[serde(default = "default_weeks")]
    pub weeks_per_quarter: usize,
    #[serde(default = "default_controllers")]
    pub controllers: Vec<ControllerKind>,
    #[serde(default = "default_trials")]
    pub n_trials: usize,
    #[serde(default = "default_seed")]
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_predictor")]
    pub spend_predictor: SpendPredictor<f64>,
    #[serde(default)]
    pub identification: IdentificationSettings,
    #[serde(default)]
    pub particle_filter: PfSettings,
    #[serde(default)]
    pub statistics: StatsSettings,
    /// Values swept for the parameter named in `sweep.param`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub param: String,
    pub values: Vec<f64>,
}

/// Scalars a sweep may vary.
pub const SWEEPABLE: [&str; 12] = [
    "decline_rate",
    "rw_sigma",
    "smooth_lower",
    "smooth_upper",
    "tracking_rate",
    "exec_noise_coeff",
    "obs_noise_sd",
    "alpha_drift_sigma",
    "amplitude",
    "rate",
    "shape",
    "sinusoid_amplitude",
];

fn bad(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| bad(&json_field(&e), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| bad("<file>", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn regime_spec(&self) -> RegimeSpec<f64> {
        self.regime.spec()
    }

    pub fn history_config(&self) -> HistoryConfig<f64> {
        HistoryConfig {
            years: self.history.years,
            annual_budget: self.history.annual_budget,
            sinusoid_amplitude: self.history.sinusoid_amplitude,
            peak_week: self.history.peak_week,
            weeks_per_quarter: self.weeks_per_quarter,
            theta0: self.env.theta0,
            exec: self.env.exec,
            regime: self.regime_spec(),
        }
    }

    pub fn monthly_convention(&self) -> MonthlyConvention {
        MonthlyConvention {
            weeks_per_month: self.budget.weeks_per_month,
            quarter: self.budget.quarter,
        }
    }

    /// Controllers that will actually run: the configured ones plus the
    /// oracle, deduplicated in declaration order.
    pub fn run_controllers(&self) -> Vec<ControllerKind> {
        let mut out: Vec<ControllerKind> = Vec::new();
        for k in self.controllers.iter().copied().chain([ControllerKind::MpcOracle]) {
            if !out.contains(&k) {
                out.push(k);
            }
        }
        out
    }

    /// Every default written out, sweep removed.
    pub fn effective(&self) -> Self {
        let mut c = self.clone();
        c.regime = self.regime.resolved();
        c.sweep = None;
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.controllers.is_empty() {
            return Err(bad("controllers", "at least one controller is required"));
        }
        if self.weeks == 0 {
            return Err(bad("weeks", "must be at least 1"));
        }
        if self.weeks_per_quarter < 2 {
            return Err(bad("weeks_per_quarter", "must be at least 2"));
        }
        if self.n_trials == 0 {
            return Err(bad("n_trials", "must be at least 1"));
        }
        if self.history.years == 0 {
            return Err(bad("history.years", "must be at least 1"));
        }
        if !(self.history.annual_budget > 0.0 && self.history.annual_budget.is_finite()) {
            return Err(bad("history.annual_budget", "must be finite and > 0"));
        }
        if !(0.0..1.0).contains(&self.history.sinusoid_amplitude) {
            return Err(bad("history.sinusoid_amplitude", "must lie in [0, 1)"));
        }
        if !(self.budget.lambda_lo > 0.0 && self.budget.lambda_hi >= self.budget.lambda_lo) {
            return Err(bad("budget.lambda_lo", "need 0 < lambda_lo <= lambda_hi"));
        }
        if !(1..=4).contains(&self.budget.quarter) {
            return Err(bad("budget.quarter", "must be 1..=4"));
        }
        if self.budget.weeks_per_month == 0 {
            return Err(bad("budget.weeks_per_month", "must be at least 1"));
        }
        if let Some(a) = self.budget.anchor {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(bad("budget.anchor", "must be finite and >= 0"));
            }
        }
        if self.identification.rolling_window < 3 {
            return Err(bad("identification.rolling_window", "must be at least 3"));
        }
        if self.identification.static_weeks < 3 {
            return Err(bad("identification.static_weeks", "must be at least 3"));
        }
        if self.particle_filter.n_particles < 2 {
            return Err(bad("particle_filter.n_particles", "must be at least 2"));
        }
        if !(self.particle_filter.init_spread >= 0.0) {
            return Err(bad("particle_filter.init_spread", "must be >= 0"));
        }
        if self.statistics.bootstrap_reps < 100 {
            return Err(bad("statistics.bootstrap_reps", "must be at least 100"));
        }
        if let SpendPredictor::Tracking { alpha } = self.spend_predictor {
            if !(alpha > 0.0 && alpha <= 1.0) {
                return Err(bad("spend_predictor.alpha", "must lie in (0, 1]"));
            }
        }
        self.regime_spec().validate().map_err(|e| bad("regime", e.to_string()))?;
        self.env.theta0.validate().map_err(|e| bad("env.theta0", e.to_string()))?;
        self.env.exec.validate().map_err(|e| bad("env.exec", e.to_string()))?;
        if let Some(s) = &self.sweep {
            if !SWEEPABLE.contains(&s.param.as_str()) {
                return Err(bad("sweep.param", format!("unknown parameter `{}`", s.param)));
            }
            if s.values.is_empty() {
                return Err(bad("sweep.values", "at least one value is required"));
            }
        }
        Ok(())
    }

    /// Sets a sweepable scalar and revalidates.
    pub fn with_param(&self, name: &str, value: f64) -> Result<Self> {
        let mut c = self.clone();
        match name {
            "decline_rate" => c.regime.decline_rate = Some(value),
            "rw_sigma" => c.regime.rw_sigma = Some(value),
            "smooth_lower" => c.regime.smooth_lower = Some(value),
            "smooth_upper" => c.regime.smooth_upper = Some(value),
            "tracking_rate" => c.env.exec.tracking_rate = value,
            "exec_noise_coeff" => c.env.exec.exec_noise_coeff = value,
            "obs_noise_sd" => c.env.exec.obs_noise_sd = value,
            "alpha_drift_sigma" => c.env.exec.alpha_drift_sigma = value,
            "amplitude" => c.env.theta0.amplitude = value,
            "rate" => c.env.theta0.rate = value,
            "shape" => c.env.theta0.shape = value,
            "sinusoid_amplitude" => c.history.sinusoid_amplitude = value,
            other => {
                return Err(bad(
                    "param",
                    format!("unknown parameter `{other}`; sweepable: {}", SWEEPABLE.join(", ")),
                ))
            }
        }
        c.validate()?;
        Ok(c)
    }
}

/// Best-effort field name from a serde error message.
fn json_field(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    for marker in ["missing field `", "unknown field `"] {
        if let Some(rest) = msg.split(marker).nth(1) {
            if let Some(name) = rest.split('`').next() {
                return name.to_string();
            }
        }
    }
    "<json>".to_string()
}
