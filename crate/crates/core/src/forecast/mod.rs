//! Horizon forecasts of the control-model parameters.

mod particle;
mod seasonal;

pub use particle::{pf_forecast, pf_init, pf_update, ParticleSet, PfOutcome};
pub use seasonal::{seasonal_fit, seasonal_predict, SeasonalModel};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::response::CtrlTheta;
use crate::scalar::Scalar;

/// Point forecasts `θ̂_{τ+h|τ}` for `h = 0..horizon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaForecast<T = f64> {
    pub base_week: i64,
    pub horizon: usize,
    pub values: Vec<CtrlTheta<T>>,
}

impl<T: Scalar> ThetaForecast<T> {
    pub fn new(base_week: i64, values: Vec<CtrlTheta<T>>) -> Result<Self> {
        let f = Self {
            base_week,
            horizon: values.len(),
            values,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(domain("forecast horizon must be at least 1"));
        }
        if self.values.len() != self.horizon {
            return Err(domain(format!(
                "forecast has {} values for horizon {}",
                self.values.len(),
                self.horizon
            )));
        }
        self.values.iter().try_for_each(CtrlTheta::validate)
    }
}

/// Holds `theta_hat` fixed over the horizon.
pub fn static_forecast<T: Scalar>(
    theta_hat: CtrlTheta<T>,
    base_week: i64,
    horizon: usize,
) -> Result<ThetaForecast<T>> {
    ThetaForecast::new(base_week, vec![theta_hat; horizon])
}
