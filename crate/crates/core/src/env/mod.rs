//! Synthetic spend–return environment.
//!
//! Weekly budgets are turned into daily spend by a noisy first-order tracking
//! loop; daily spend produces returns through a Richards-type saturating curve
//! scaled by a week-of-quarter efficiency factor. Latent curve parameters
//! either stay fixed, follow a log random walk, or stay fixed while the
//! efficiency factor declines within every quarter.

mod history;
mod noise;

pub use history::{
    construct_quarter_budget, generate_history, quarter_budget_from_proportions, week_of_quarter,
    week_of_year, EnvState, HistoryConfig, HistoryDataset, MonthlyConvention, WeeklyAggregate,
    DAYS_PER_WEEK, WEEKS_PER_YEAR,
};
pub use noise::{NoiseKey, NoiseStream, Purpose};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::scalar::Scalar;

/// True latent response parameters: `A·(1 − e^{−k·s})^ν` per day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvTheta<T = f64> {
    /// Asymptotic daily return `A`.
    pub amplitude: T,
    /// Curvature `k`, per unit of daily spend.
    pub rate: T,
    /// Richards exponent `ν`; `1` is plain exponential saturation.
    pub shape: T,
}

impl<T: Scalar> EnvTheta<T> {
    pub fn new(amplitude: T, rate: T, shape: T) -> Result<Self> {
        let t = Self {
            amplitude,
            rate,
            shape,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("amplitude", self.amplitude),
            ("rate", self.rate),
            ("shape", self.shape),
        ] {
            if !(v.is_finite() && v > T::zero()) {
                return Err(domain(format!("EnvTheta.{name} must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeKind {
    Static,
    RandomWalk,
    Seasonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeclineForm {
    /// `e^{−δw}`
    Exponential,
    /// `(1 − δ)^w`
    Geometric,
}

/// Operating regime plus the smoothness guardrail that goes with it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeSpec<T = f64> {
    pub kind: RegimeKind,
    /// Log random-walk innovation sd per week (random-walk regime only).
    pub rw_sigma: T,
    /// Within-quarter decline rate δ (seasonal regime only).
    pub decline_rate: T,
    pub decline_form: DeclineForm,
    /// Largest allowed week-to-week relative decrease γ_L.
    pub smooth_lower: T,
    /// Largest allowed week-to-week relative increase γ_U.
    pub smooth_upper: T,
}

impl<T: Scalar> RegimeSpec<T> {
    pub fn static_regime() -> Self {
        Self {
            kind: RegimeKind::Static,
            rw_sigma: T::zero(),
            decline_rate: T::zero(),
            decline_form: DeclineForm::Geometric,
            smooth_lower: T::lit(0.3),
            smooth_upper: T::lit(0.3),
        }
    }

    pub fn random_walk(sigma: T) -> Self {
        Self {
            kind: RegimeKind::RandomWalk,
            rw_sigma: sigma,
            ..Self::static_regime()
        }
    }

    pub fn seasonal(delta: T, form: DeclineForm) -> Self {
        Self {
            kind: RegimeKind::Seasonal,
            decline_rate: delta,
            decline_form: form,
            smooth_lower: T::lit(0.2),
            smooth_upper: T::lit(0.2),
            ..Self::static_regime()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rw_sigma >= T::zero() && self.rw_sigma.is_finite()) {
            return Err(domain("rw_sigma must be finite and >= 0"));
        }
        if !(self.decline_rate >= T::zero() && self.decline_rate < T::one()) {
            return Err(domain("decline_rate must lie in [0, 1)"));
        }
        if !(self.smooth_lower >= T::zero() && self.smooth_lower < T::one()) {
            return Err(domain("smooth_lower must lie in [0, 1)"));
        }
        if !(self.smooth_upper >= T::zero() && self.smooth_upper.is_finite()) {
            return Err(domain("smooth_upper must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Execution layer parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExecutionConfig<T = f64> {
    /// Tracking rate α ∈ (0, 1).
    pub tracking_rate: T,
    /// σ_ξ: daily delivery noise variance is `σ_ξ² · b/7`.
    pub exec_noise_coeff: T,
    /// σ_ε: sd of additive daily return noise.
    pub obs_noise_sd: T,
    /// Log-odds random-walk sd for α; `0` keeps α fixed.
    pub alpha_drift_sigma: T,
}

impl<T: Scalar> ExecutionConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.tracking_rate > T::zero() && self.tracking_rate < T::one()) {
            return Err(domain("tracking_rate must lie in (0, 1)"));
        }
        for (name, v) in [
            ("exec_noise_coeff", self.exec_noise_coeff),
            ("obs_noise_sd", self.obs_noise_sd),
            ("alpha_drift_sigma", self.alpha_drift_sigma),
        ] {
            if !(v >= T::zero() && v.is_finite()) {
                return Err(domain(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// One executed week.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeekRecord<T = f64> {
    /// Signed week key (evaluation weeks are `1..=W`).
    pub week: i64,
    pub planned_budget: T,
    pub realized_spend: T,
    pub realized_return: T,
    pub daily_spend: [T; DAYS_PER_WEEK],
    pub daily_return: [T; DAYS_PER_WEEK],
    /// Day-7 spend; seeds the next week's tracking loop.
    pub end_of_week_daily_spend: T,
}

/// Richards-type response `A·(1 − e^{−k·s})^ν`.
pub fn richards_response<T: Scalar>(spend: T, theta: &EnvTheta<T>) -> Result<T> {
    if !(spend.is_finite() && spend >= T::zero()) {
        return Err(domain(format!("spend must be finite and >= 0, got {spend}")));
    }
    Ok(richards_unchecked(spend, theta))
}

#[inline]
pub(crate) fn richards_unchecked<T: Scalar>(spend: T, theta: &EnvTheta<T>) -> T {
    let u = -(-theta.rate * spend).exp_m1();
    if u <= T::zero() {
        return T::zero();
    }
    if theta.shape == T::one() {
        theta.amplitude * u
    } else {
        theta.amplitude * u.powf(theta.shape)
    }
}

/// First and second derivative of the Richards curve in spend.
pub(crate) fn richards_derivatives<T: Scalar>(spend: T, theta: &EnvTheta<T>) -> (T, T) {
    let e = (-theta.rate * spend).exp();
    let u = T::one() - e;
    let (a, k, nu) = (theta.amplitude, theta.rate, theta.shape);
    if u <= T::zero() {
        // at s = 0 the slope is finite only for ν ≤ 1
        return if nu == T::one() {
            (a * k, -a * k * k)
        } else {
            (T::zero(), T::zero())
        };
    }
    let up = u.powf(nu - T::one());
    let d1 = a * nu * k * e * up;
    let d2 = a * nu * k * k * e * u.powf(nu - T::lit(2.0)) * ((nu - T::one()) * e - u);
    (d1, d2)
}

/// Runs the seven-day tracking loop for one week.
pub fn step_week<T: Scalar>(
    prev_day_spend: T,
    budget: T,
    exec: &ExecutionConfig<T>,
    theta: &EnvTheta<T>,
    efficiency: T,
    noise: &NoiseStream,
    week: i64,
) -> Result<WeekRecord<T>> {
    step_week_with_alpha(
        prev_day_spend,
        budget,
        exec.tracking_rate,
        exec,
        theta,
        efficiency,
        noise,
        week,
    )
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn step_week_with_alpha<T: Scalar>(
    prev_day_spend: T,
    budget: T,
    alpha: T,
    exec: &ExecutionConfig<T>,
    theta: &EnvTheta<T>,
    efficiency: T,
    noise: &NoiseStream,
    week: i64,
) -> Result<WeekRecord<T>> {
    if !(budget >= T::zero() && budget.is_finite()) {
        return Err(domain(format!("budget must be finite and >= 0, got {budget}")));
    }
    if !(prev_day_spend >= T::zero() && prev_day_spend.is_finite()) {
        return Err(domain("prev_day_spend must be finite and >= 0"));
    }
    if !(efficiency > T::zero() && efficiency.is_finite()) {
        return Err(domain("efficiency must be finite and > 0"));
    }
    let target = budget / T::from_count(DAYS_PER_WEEK);
    let delivery_sd = exec.exec_noise_coeff * target.sqrt();
    let mut daily_spend = [T::zero(); DAYS_PER_WEEK];
    let mut daily_return = [T::zero(); DAYS_PER_WEEK];
    let mut s = prev_day_spend;
    for d in 0..DAYS_PER_WEEK {
        let day = d as u32 + 1;
        let xi = T::lit(noise.normal(NoiseKey::new(week, day, Purpose::Delivery)));
        let eps = T::lit(noise.normal(NoiseKey::new(week, day, Purpose::Observation)));
        s = (s + alpha * (target - s) + delivery_sd * xi).max(T::zero());
        daily_spend[d] = s;
        daily_return[d] = efficiency * richards_unchecked(s, theta) + exec.obs_noise_sd * eps;
    }
    Ok(WeekRecord {
        week,
        planned_budget: budget,
        realized_spend: daily_spend.iter().copied().sum(),
        realized_return: daily_return.iter().copied().sum(),
        daily_spend,
        daily_return,
        end_of_week_daily_spend: s,
    })
}

/// Moves latent parameters to `week` (the week they will apply to).
pub fn advance_theta<T: Scalar>(
    theta: &EnvTheta<T>,
    regime: &RegimeSpec<T>,
    noise: &NoiseStream,
    week: i64,
) -> EnvTheta<T> {
    match regime.kind {
        RegimeKind::Static | RegimeKind::Seasonal => *theta,
        RegimeKind::RandomWalk => {
            if regime.rw_sigma == T::zero() {
                return *theta;
            }
            let ea = T::lit(noise.normal(NoiseKey::new(week, 0, Purpose::ThetaAmplitude)));
            let ek = T::lit(noise.normal(NoiseKey::new(week, 0, Purpose::ThetaRate)));
            EnvTheta {
                amplitude: theta.amplitude * (regime.rw_sigma * ea).exp(),
                rate: theta.rate * (regime.rw_sigma * ek).exp(),
                shape: theta.shape,
            }
        }
    }
}

/// Moves the tracking rate to `week` under a logit random walk.
pub fn advance_alpha<T: Scalar>(alpha: T, sigma: T, noise: &NoiseStream, week: i64) -> T {
    if sigma == T::zero() {
        return alpha;
    }
    let z = T::lit(noise.normal(NoiseKey::new(week, 0, Purpose::AlphaDrift)));
    let logit = (alpha / (T::one() - alpha)).ln() + sigma * z;
    T::one() / (T::one() + (-logit).exp())
}

/// Week-of-quarter efficiency multiplier (`1` outside the seasonal regime).
pub fn seasonal_factor<T: Scalar>(week_of_quarter: usize, regime: &RegimeSpec<T>) -> T {
    if regime.kind != RegimeKind::Seasonal {
        return T::one();
    }
    let w = T::from_count(week_of_quarter);
    match regime.decline_form {
        DeclineForm::Exponential => (-regime.decline_rate * w).exp(),
        DeclineForm::Geometric => (T::one() - regime.decline_rate).powf(w),
    }
}
