//! Allocation policies: reactive pacing and receding-horizon planners.

mod policy;

pub use policy::{Controller, ControllerContext, Decision, PfSettings};

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::env::{EnvTheta, HistoryDataset, RegimeSpec, WeekRecord, WEEKS_PER_YEAR};
use crate::error::{domain, Error, Result};
use crate::forecast::ThetaForecast;
use crate::scalar::Scalar;
use crate::solver::{
    solve_horizon, HorizonProblem, HorizonSolution, SolveStatus, SpendMap, WeekReturn, WeekTerm,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    BaselinePacing,
    MpcStatic,
    MpcParticleFilter,
    MpcSeasonal,
    MpcOracle,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 5] = [
        ControllerKind::BaselinePacing,
        ControllerKind::MpcStatic,
        ControllerKind::MpcParticleFilter,
        ControllerKind::MpcSeasonal,
        ControllerKind::MpcOracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::BaselinePacing => "baseline_pacing",
            ControllerKind::MpcStatic => "mpc_static",
            ControllerKind::MpcParticleFilter => "mpc_particle_filter",
            ControllerKind::MpcSeasonal => "mpc_seasonal",
            ControllerKind::MpcOracle => "mpc_oracle",
        }
    }

    pub fn is_mpc(self) -> bool {
        self != ControllerKind::BaselinePacing
    }
}

impl std::fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Budget bookkeeping at the start of week `week` of a `weeks`-week quarter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarterState<T = f64> {
    pub week: usize,
    pub weeks: usize,
    pub quarter_budget: T,
    pub remaining_budget: T,
    /// Previous planned budget, or the pre-quarter anchor in week 1.
    pub last_budget: T,
    pub last_day_spend: T,
    pub history_so_far: Vec<WeekRecord<T>>,
}

impl<T: Scalar> QuarterState<T> {
    pub fn new(quarter_budget: T, weeks: usize, anchor: T, last_day_spend: T) -> Result<Self> {
        if weeks == 0 {
            return Err(domain("a quarter needs at least one week"));
        }
        if !(quarter_budget >= T::zero() && quarter_budget.is_finite()) {
            return Err(domain(format!("quarter budget must be finite and >= 0, got {quarter_budget}")));
        }
        Ok(Self {
            week: 1,
            weeks,
            quarter_budget,
            remaining_budget: quarter_budget,
            last_budget: anchor,
            last_day_spend,
            history_so_far: Vec::with_capacity(weeks),
        })
    }

    /// Weeks left including the current one.
    pub fn horizon(&self) -> usize {
        self.weeks + 1 - self.week
    }

    pub fn is_done(&self) -> bool {
        self.week > self.weeks
    }

    /// Books a realized week: `B_rem ← B_rem − s`.
    pub fn apply(&mut self, rec: WeekRecord<T>) -> Result<()> {
        if self.is_done() {
            return Err(domain("quarter already finished"));
        }
        self.remaining_budget -= rec.realized_spend;
        self.last_budget = rec.planned_budget;
        self.last_day_spend = rec.end_of_week_daily_spend;
        self.week += 1;
        self.history_so_far.push(rec);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioSource {
    Historical,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacingRatios<T = f64> {
    pub ratios: Vec<T>,
    pub source: RatioSource,
}

impl<T: Scalar> PacingRatios<T> {
    pub fn uniform(weeks: usize) -> Self {
        Self {
            ratios: vec![T::one() / T::from_count(weeks); weeks],
            source: RatioSource::Uniform,
        }
    }
}

/// Week-of-quarter spend shares from the same weeks one year earlier.
///
/// Evaluation week `t` (key `quarter_start + t − 1`) is matched to the
/// history week 52 keys before it. Falls back to uniform shares whenever a
/// matching week is missing or the shares are not well defined.
pub fn compute_pacing_ratios<T: Scalar>(
    history: &HistoryDataset<T>,
    quarter_start: i64,
    weeks: usize,
) -> Result<PacingRatios<T>> {
    if weeks == 0 {
        return Err(domain("weeks must be at least 1"));
    }
    let spends: Option<Vec<T>> = (0..weeks)
        .map(|t| {
            let key = quarter_start + t as i64 - WEEKS_PER_YEAR as i64;
            history.weekly.iter().find(|w| w.week == key).map(|w| w.spend)
        })
        .collect();
    let Some(spends) = spends else {
        return Ok(PacingRatios::uniform(weeks));
    };
    let total: T = spends.iter().copied().sum();
    if !(total > T::zero() && total.is_finite()) || spends.iter().any(|s| *s < T::zero()) {
        return Ok(PacingRatios::uniform(weeks));
    }
    Ok(PacingRatios {
        ratios: spends.iter().map(|s| *s / total).collect(),
        source: RatioSource::Historical,
    })
}

/// `b_t = B_rem·π_t / Σ_{j≥t} π_j`; the whole remainder when the tail
/// shares are all zero.
pub fn baseline_plan_week<T: Scalar>(state: &QuarterState<T>, ratios: &PacingRatios<T>) -> Result<T> {
    let t = state.week;
    if t == 0 || t > state.weeks || ratios.ratios.len() != state.weeks {
        return Err(domain(format!(
            "week {t} outside 1..={} or ratio length {} mismatched",
            state.weeks,
            ratios.ratios.len()
        )));
    }
    let remaining = state.remaining_budget.max(T::zero());
    let tail: T = ratios.ratios[t - 1..].iter().copied().sum();
    if tail <= T::zero() {
        return Ok(remaining);
    }
    Ok(remaining * ratios.ratios[t - 1] / tail)
}

/// True per-week response handed to the oracle planner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueWeek<T = f64> {
    pub theta: EnvTheta<T>,
    pub efficiency: T,
}

/// What an MPC planner predicts for each remaining week.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum HorizonForecast<T = f64> {
    /// Exponential-saturation surrogate with forecast parameters.
    Surrogate(ThetaForecast<T>),
    /// The simulator's own response curve and efficiency.
    Truth(Vec<TrueWeek<T>>),
}

impl<T: Scalar> HorizonForecast<T> {
    pub fn horizon(&self) -> usize {
        match self {
            HorizonForecast::Surrogate(f) => f.horizon,
            HorizonForecast::Truth(v) => v.len(),
        }
    }

    fn week_return(&self, h: usize) -> WeekReturn<T> {
        match self {
            HorizonForecast::Surrogate(f) => WeekReturn::ExpSaturation {
                theta: f.values[h],
                gain: T::one(),
            },
            HorizonForecast::Truth(v) => WeekReturn::Richards {
                theta: v[h].theta,
                efficiency: v[h].efficiency,
                days: T::lit(7.0),
            },
        }
    }
}

/// Slice of the true parameter path covering weeks `week..week+horizon`.
pub fn oracle_theta_forecast<T: Scalar>(
    truth: &[TrueWeek<T>],
    week: usize,
    horizon: usize,
) -> Result<HorizonForecast<T>> {
    if week == 0 || week - 1 + horizon > truth.len() || horizon == 0 {
        return Err(domain(format!(
            "oracle path of {} weeks cannot cover weeks {week}..{}",
            truth.len(),
            week + horizon
        )));
    }
    Ok(HorizonForecast::Truth(truth[week - 1..week - 1 + horizon].to_vec()))
}

/// Realized weekly spend model used inside the planner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpendPredictor<T = f64> {
    Identity,
    /// Noise-free tracking recursion with rate `alpha` for the first week;
    /// later weeks use the identity.
    Tracking { alpha: T },
}

pub fn spend_predictor_identity<T: Scalar>(b: T) -> T {
    b
}

/// `7·(b/7) + (s₀ − b/7)·Σ_{d=1}^{7}(1−α)^d`.
pub fn spend_predictor_tracking<T: Scalar>(b: T, prev_day_spend: T, alpha: T) -> T {
    tracking_map(prev_day_spend, alpha).apply(b)
}

fn tracking_map<T: Scalar>(prev_day_spend: T, alpha: T) -> SpendMap<T> {
    let r = T::one() - alpha;
    let mut geo = T::zero();
    let mut p = T::one();
    for _ in 0..7 {
        p *= r;
        geo += p;
    }
    SpendMap {
        slope: T::one() - geo / T::lit(7.0),
        offset: prev_day_spend * geo,
    }
}

impl<T: Scalar> SpendPredictor<T> {
    fn map(&self, h: usize, prev_day_spend: T) -> SpendMap<T> {
        match *self {
            SpendPredictor::Tracking { alpha } if h == 0 && alpha < T::one() => {
                tracking_map(prev_day_spend, alpha)
            }
            _ => SpendMap::identity(),
        }
    }
}

/// Outcome of one planning call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanOutcome<T = f64> {
    pub budget: T,
    pub solution: HorizonSolution<T>,
    /// Lower ratio bounds or the spend predictor had to be relaxed.
    pub relaxed: bool,
}

/// Builds the quarter-end horizon problem and returns its first action.
pub fn mpc_plan_week<T: Scalar>(
    state: &QuarterState<T>,
    forecast: &HorizonForecast<T>,
    predictor: &SpendPredictor<T>,
    regime: &RegimeSpec<T>,
) -> Result<PlanOutcome<T>> {
    let h = state.horizon();
    if state.is_done() {
        return Err(domain("quarter already finished"));
    }
    if forecast.horizon() != h {
        return Err(domain(format!(
            "forecast horizon {} does not match {h} remaining weeks",
            forecast.horizon()
        )));
    }
    let build = |pred: &SpendPredictor<T>| HorizonProblem {
        weeks: (0..h)
            .map(|i| WeekTerm {
                ret: forecast.week_return(i),
                spend: pred.map(i, state.last_day_spend),
            })
            .collect(),
        budget_cap: state.remaining_budget.max(T::zero()),
        anchor: state.last_budget.max(T::zero()),
        lower_ratio: T::one() - regime.smooth_lower,
        upper_ratio: T::one() + regime.smooth_upper,
        bounds_active: true,
    };
    let (solution, fallback) = match solve_horizon(&build(predictor)) {
        Ok(s) => (s, false),
        Err(Error::Infeasible { .. }) if *predictor != SpendPredictor::Identity => {
            (solve_horizon(&build(&SpendPredictor::Identity))?, true)
        }
        Err(e) => return Err(e),
    };
    let relaxed = fallback || solution.status == SolveStatus::RelaxedFeasible;
    if relaxed {
        log::debug!("week {}: planner constraints relaxed", state.week);
    }
    Ok(PlanOutcome {
        budget: solution.budgets[0],
        solution,
        relaxed,
    })
}

/// One row of a controller trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow<T = f64> {
    pub week: usize,
    pub planned: T,
    pub realized_spend: T,
    pub realized_return: T,
    pub remaining_before: T,
    pub remaining_after: T,
    pub status: Option<SolveStatus>,
    pub relaxed: bool,
}

/// Writes `week,planned,realized_spend,realized_return,remaining_before,remaining_after,solver_status,relaxed`.
pub fn write_trace_csv<T: Scalar, W: Write>(rows: &[TraceRow<T>], mut out: W) -> Result<()> {
    writeln!(
        out,
        "week,planned,realized_spend,realized_return,remaining_before,remaining_after,solver_status,relaxed"
    )?;
    for r in rows {
        let status = match r.status {
            None => "none",
            Some(SolveStatus::Optimal) => "optimal",
            Some(SolveStatus::MaxIter) => "max_iter",
            Some(SolveStatus::RelaxedFeasible) => "relaxed_feasible",
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{status},{}",
            r.week, r.planned, r.realized_spend, r.realized_return, r.remaining_before, r.remaining_after, r.relaxed
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests;
