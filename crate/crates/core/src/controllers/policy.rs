use serde::{Deserialize, Serialize};

use super::{
    baseline_plan_week, compute_pacing_ratios, mpc_plan_week, oracle_theta_forecast, ControllerKind,
    HorizonForecast, PacingRatios, QuarterState, SpendPredictor, TrueWeek,
};
use crate::env::{HistoryDataset, NoiseStream, RegimeSpec, WeekRecord};
use crate::error::{Error, Result};
use crate::forecast::{
    pf_forecast, pf_init, pf_update, seasonal_fit, seasonal_predict, static_forecast, ParticleSet,
    SeasonalModel,
};
use crate::response::{fit_exp_saturation, rolling_identify, CtrlTheta};
use crate::scalar::Scalar;
use crate::solver::{HorizonSolution, SolveStatus};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PfSettings {
    pub n_particles: usize,
    pub init_spread: f64,
    /// Weeks used for the prior fit, ending where the burn-in starts.
    pub prior_weeks: usize,
    /// Trailing history weeks replayed through the filter before the quarter.
    pub burn_in_weeks: usize,
    /// Process noise the filter assumes; `None` uses the regime's value.
    pub rw_sigma: Option<f64>,
}

impl Default for PfSettings {
    fn default() -> Self {
        Self {
            n_particles: 1000,
            init_spread: 0.3,
            prior_weeks: 26,
            burn_in_weeks: 12,
            rw_sigma: None,
        }
    }
}

/// Everything a controller may look at before the quarter starts.
#[derive(Debug, Clone)]
pub struct ControllerContext<'a, T = f64> {
    pub history: &'a HistoryDataset<T>,
    pub regime: &'a RegimeSpec<T>,
    pub weeks: usize,
    /// Week key of evaluation week 1.
    pub quarter_start: i64,
    pub predictor: SpendPredictor<T>,
    /// Trailing weeks for the static fit.
    pub identification_weeks: usize,
    /// Window of the rolling fits feeding the seasonal model.
    pub rolling_window: usize,
    pub weeks_per_quarter: usize,
    pub pf: PfSettings,
    /// True per-week response over the quarter (oracle only).
    pub truth: &'a [TrueWeek<T>],
    /// Controller-private randomness (particle filter).
    pub noise: &'a NoiseStream,
}

/// A planned budget and how it was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision<T = f64> {
    pub budget: T,
    pub status: Option<SolveStatus>,
    pub relaxed: bool,
    /// Full horizon solve behind an MPC decision.
    pub solution: Option<HorizonSolution<T>>,
}

#[derive(Debug, Clone)]
enum Inner<T> {
    Baseline(PacingRatios<T>),
    Static(CtrlTheta<T>),
    Particle {
        set: ParticleSet<T>,
        rw_sigma: T,
        obs_sd: T,
        noise: NoiseStream,
        degenerate_steps: usize,
    },
    Seasonal(SeasonalModel<T>),
    Oracle(Vec<TrueWeek<T>>),
}

/// A policy instance owning its estimator state for one quarter.
#[derive(Debug, Clone)]
pub struct Controller<T = f64> {
    kind: ControllerKind,
    quarter_start: i64,
    predictor: SpendPredictor<T>,
    regime: RegimeSpec<T>,
    inner: Inner<T>,
}

fn triples<T: Scalar>(history: &HistoryDataset<T>) -> Vec<(i64, T, T)> {
    history.weekly.iter().map(|w| (w.week, w.spend, w.ret)).collect()
}

fn tail<X>(v: &[X], n: usize) -> &[X] {
    &v[v.len().saturating_sub(n)..]
}

impl<T: Scalar> Controller<T> {
    pub fn build(kind: ControllerKind, ctx: &ControllerContext<'_, T>) -> Result<Self> {
        let inner = match kind {
            ControllerKind::BaselinePacing => {
                Inner::Baseline(compute_pacing_ratios(ctx.history, ctx.quarter_start, ctx.weeks)?)
            }
            ControllerKind::MpcStatic => {
                let pairs = ctx.history.weekly_pairs();
                Inner::Static(fit_exp_saturation(tail(&pairs, ctx.identification_weeks))?.theta)
            }
            ControllerKind::MpcParticleFilter => Self::build_particle(ctx)?,
            ControllerKind::MpcSeasonal => {
                let ident = rolling_identify(&triples(ctx.history), ctx.rolling_window)?;
                if !ident.skipped.is_empty() {
                    log::debug!("{} rolling fits skipped", ident.skipped.len());
                }
                Inner::Seasonal(seasonal_fit(&ident.thetas, ctx.weeks_per_quarter)?)
            }
            ControllerKind::MpcOracle => {
                if ctx.truth.len() < ctx.weeks {
                    return Err(Error::InsufficientData(format!(
                        "oracle needs {} true weeks, got {}",
                        ctx.weeks,
                        ctx.truth.len()
                    )));
                }
                Inner::Oracle(ctx.truth.to_vec())
            }
        };
        Ok(Self {
            kind,
            quarter_start: ctx.quarter_start,
            predictor: ctx.predictor,
            regime: *ctx.regime,
            inner,
        })
    }

    fn build_particle(ctx: &ControllerContext<'_, T>) -> Result<Inner<T>> {
        let pairs = ctx.history.weekly_pairs();
        let n = pairs.len();
        let burn = ctx.pf.burn_in_weeks.min(n.saturating_sub(3));
        let prior_end = n - burn;
        let prior_start = prior_end.saturating_sub(ctx.pf.prior_weeks);
        let prior_obs = &pairs[prior_start..prior_end];
        let fit = fit_exp_saturation(prior_obs)?;
        let dof = T::from_count(prior_obs.len().saturating_sub(2).max(1));
        let max_r = prior_obs.iter().fold(T::zero(), |m, p| m.max(p.1.abs()));
        let obs_sd = (fit.residual_sse / dof).sqrt().max(T::lit(1e-6) * max_r.max(T::one()));
        let rw_sigma = T::lit(ctx.pf.rw_sigma.unwrap_or(ctx.regime.rw_sigma.to_f64_lossy()));
        let mut set = pf_init(&fit.theta, T::lit(ctx.pf.init_spread), ctx.pf.n_particles, ctx.noise)?;
        let mut degenerate_steps = 0;
        for w in &ctx.history.weekly[prior_end..] {
            let out = pf_update(&set, (w.spend, w.ret), rw_sigma, obs_sd, ctx.noise, w.week)?;
            degenerate_steps += out.degenerate as usize;
            set = out.set;
        }
        Ok(Inner::Particle {
            set,
            rw_sigma,
            obs_sd,
            noise: ctx.noise.clone(),
            degenerate_steps,
        })
    }

    pub fn kind(&self) -> ControllerKind {
        self.kind
    }

    /// Current particle cloud, for diagnostics.
    pub fn particle_set(&self) -> Option<&ParticleSet<T>> {
        match &self.inner {
            Inner::Particle { set, .. } => Some(set),
            _ => None,
        }
    }

    /// Filter steps whose likelihoods all underflowed.
    pub fn degenerate_steps(&self) -> usize {
        match &self.inner {
            Inner::Particle {
                degenerate_steps, ..
            } => *degenerate_steps,
            _ => 0,
        }
    }

    /// Forecast the planner would use at `state`.
    pub fn forecast(&self, state: &QuarterState<T>) -> Result<Option<HorizonForecast<T>>> {
        let h = state.horizon();
        let base = self.quarter_start + state.week as i64 - 1;
        Ok(Some(match &self.inner {
            Inner::Baseline(_) => return Ok(None),
            Inner::Static(theta) => HorizonForecast::Surrogate(static_forecast(*theta, base, h)?),
            Inner::Particle { set, .. } => HorizonForecast::Surrogate(pf_forecast(set, base, h)?),
            Inner::Seasonal(model) => HorizonForecast::Surrogate(seasonal_predict(model, base, h)?),
            Inner::Oracle(truth) => oracle_theta_forecast(truth, state.week, h)?,
        }))
    }

    pub fn plan(&mut self, state: &QuarterState<T>) -> Result<Decision<T>> {
        if let Inner::Baseline(ratios) = &self.inner {
            return Ok(Decision {
                budget: baseline_plan_week(state, ratios)?,
                status: None,
                relaxed: false,
                solution: None,
            });
        }
        let forecast = self.forecast(state)?.expect("planner forecast");
        let out = mpc_plan_week(state, &forecast, &self.predictor, &self.regime)?;
        Ok(Decision {
            budget: out.budget,
            status: Some(out.solution.status),
            relaxed: out.relaxed,
            solution: Some(out.solution),
        })
    }

    /// Feeds back a realized week.
    pub fn observe(&mut self, rec: &WeekRecord<T>) -> Result<()> {
        if let Inner::Particle {
            set,
            rw_sigma,
            obs_sd,
            noise,
            degenerate_steps,
        } = &mut self.inner
        {
            let out = pf_update(set, (rec.realized_spend, rec.realized_return), *rw_sigma, *obs_sd, noise, rec.week)?;
            *degenerate_steps += out.degenerate as usize;
            *set = out.set;
        }
        Ok(())
    }
}
