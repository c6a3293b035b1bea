//! Historical data generation and quarterly budget construction.
//!
//! Calendar: 52-week years of 7 days; "months" are 4-week blocks with the
//! 13th block folded into month 12. Week keys are signed so that the last
//! historical week is `0` and the evaluation quarter starts at week `1`.

use std::f64::consts::TAU;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{
    advance_alpha, advance_theta, seasonal_factor, step_week_with_alpha, EnvTheta,
    ExecutionConfig, NoiseKey, NoiseStream, Purpose, RegimeSpec,
};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DAYS_PER_WEEK: usize = 7;
pub const WEEKS_PER_YEAR: usize = 52;
const MONTHS_PER_YEAR: usize = 12;

/// Week of quarter `1..=weeks_per_quarter` for a signed week key.
pub fn week_of_quarter(week: i64, weeks_per_quarter: usize) -> usize {
    ((week - 1).rem_euclid(weeks_per_quarter as i64) + 1) as usize
}

/// Week of year `1..=52` for a signed week key.
pub fn week_of_year(week: i64) -> usize {
    ((week - 1).rem_euclid(WEEKS_PER_YEAR as i64) + 1) as usize
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistoryConfig<T = f64> {
    pub years: usize,
    /// Planned annual spend; the flat daily target is `annual_budget / 364`.
    pub annual_budget: T,
    /// Relative amplitude of the annual sinusoid on the daily target.
    pub sinusoid_amplitude: T,
    /// Week of year at which the sinusoid peaks.
    pub peak_week: T,
    pub weeks_per_quarter: usize,
    pub theta0: EnvTheta<T>,
    pub exec: ExecutionConfig<T>,
    pub regime: RegimeSpec<T>,
}

/// Latent state handed from the end of history to the evaluation quarter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvState<T = f64> {
    /// Parameters that applied to the last historical week.
    pub theta: EnvTheta<T>,
    pub alpha: T,
    pub last_day_spend: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeeklyAggregate<T = f64> {
    pub week: i64,
    pub planned: T,
    pub spend: T,
    #[serde(rename = "return")]
    pub ret: T,
}

/// Daily observations plus their exact weekly sums.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistoryDataset<T = f64> {
    /// `(day, spend)` with days numbered `1..=364·years`.
    pub daily_spend: Vec<(i64, T)>,
    pub daily_return: Vec<(i64, T)>,
    pub years: usize,
    pub weekly: Vec<WeeklyAggregate<T>>,
    pub end_state: EnvState<T>,
}

impl<T: Scalar> HistoryDataset<T> {
    pub fn is_empty(&self) -> bool {
        self.weekly.is_empty()
    }

    /// Weekly `(spend, return)` pairs in chronological order.
    pub fn weekly_pairs(&self) -> Vec<(T, T)> {
        self.weekly.iter().map(|w| (w.spend, w.ret)).collect()
    }

    /// The trailing 52 weeks.
    pub fn final_year(&self) -> &[WeeklyAggregate<T>] {
        let n = self.weekly.len();
        &self.weekly[n.saturating_sub(WEEKS_PER_YEAR)..]
    }

    /// Checks the structural invariants (equal lengths, contiguous days,
    /// weekly totals equal to 7-day sums).
    pub fn check_invariants(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Domain(format!("history invariant: {m}")));
        if self.daily_spend.len() != self.daily_return.len() {
            return bad("daily series lengths differ");
        }
        if self.daily_spend.len() != self.weekly.len() * DAYS_PER_WEEK {
            return bad("daily length is not 7 × weeks");
        }
        for (i, ((ds, _), (dr, _))) in self.daily_spend.iter().zip(&self.daily_return).enumerate() {
            if *ds != i as i64 + 1 || *dr != i as i64 + 1 {
                return bad("day indices not contiguous");
            }
        }
        for (w, agg) in self.weekly.iter().enumerate() {
            let days = w * DAYS_PER_WEEK..(w + 1) * DAYS_PER_WEEK;
            let s: T = self.daily_spend[days.clone()].iter().map(|p| p.1).sum();
            let r: T = self.daily_return[days].iter().map(|p| p.1).sum();
            if s != agg.spend || r != agg.ret {
                return bad("weekly aggregate differs from 7-day sum");
            }
        }
        Ok(())
    }

    /// Writes `day,spend,return` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "day,spend,return")?;
        for ((day, s), (_, r)) in self.daily_spend.iter().zip(&self.daily_return) {
            writeln!(out, "{day},{s},{r}")?;
        }
        Ok(())
    }
}

/// Planned daily target for a week of year under the sinusoidal schedule.
pub(crate) fn history_daily_target<T: Scalar>(cfg: &HistoryConfig<T>, week_of_year: usize) -> T {
    let base = cfg.annual_budget / T::from_count(WEEKS_PER_YEAR * DAYS_PER_WEEK);
    let phase =
        T::lit(TAU) * (T::from_count(week_of_year) - cfg.peak_week) / T::from_count(WEEKS_PER_YEAR);
    base * (T::one() + cfg.sinusoid_amplitude * phase.cos())
}

/// Simulates `years` of daily spend and returns under the configured regime.
pub fn generate_history<T: Scalar>(
    cfg: &HistoryConfig<T>,
    noise: &NoiseStream,
) -> Result<HistoryDataset<T>> {
    if cfg.years < 1 {
        return Err(Error::InsufficientData("history needs at least one year".into()));
    }
    cfg.theta0.validate()?;
    cfg.exec.validate()?;
    cfg.regime.validate()?;
    let n_weeks = cfg.years * WEEKS_PER_YEAR;
    let first_key = 1 - n_weeks as i64;
    let mut theta = cfg.theta0;
    let mut alpha = cfg.exec.tracking_rate;
    let mut prev = history_daily_target(cfg, week_of_year(first_key));
    let mut daily_spend = Vec::with_capacity(n_weeks * DAYS_PER_WEEK);
    let mut daily_return = Vec::with_capacity(n_weeks * DAYS_PER_WEEK);
    let mut weekly = Vec::with_capacity(n_weeks);
    for i in 0..n_weeks {
        let key = first_key + i as i64;
        if i > 0 {
            theta = advance_theta(&theta, &cfg.regime, noise, key);
            alpha = advance_alpha(alpha, cfg.exec.alpha_drift_sigma, noise, key);
        }
        let budget = history_daily_target(cfg, week_of_year(key)) * T::from_count(DAYS_PER_WEEK);
        let eff = seasonal_factor(week_of_quarter(key, cfg.weeks_per_quarter), &cfg.regime);
        let rec = step_week_with_alpha(prev, budget, alpha, &cfg.exec, &theta, eff, noise, key)?;
        for d in 0..DAYS_PER_WEEK {
            let day = (i * DAYS_PER_WEEK + d + 1) as i64;
            daily_spend.push((day, rec.daily_spend[d]));
            daily_return.push((day, rec.daily_return[d]));
        }
        weekly.push(WeeklyAggregate {
            week: key,
            planned: budget,
            spend: rec.realized_spend,
            ret: rec.realized_return,
        });
        prev = rec.end_of_week_daily_spend;
    }
    Ok(HistoryDataset {
        daily_spend,
        daily_return,
        years: cfg.years,
        weekly,
        end_state: EnvState {
            theta,
            alpha,
            last_day_spend: prev,
        },
    })
}

/// Calendar used to turn historical spend into monthly proportions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonthlyConvention {
    pub weeks_per_month: usize,
    /// Evaluation quarter `1..=4`.
    pub quarter: usize,
}

impl Default for MonthlyConvention {
    fn default() -> Self {
        Self {
            weeks_per_month: 4,
            quarter: 1,
        }
    }
}

impl MonthlyConvention {
    /// Month `1..=12` of a week of year; trailing weeks fold into month 12.
    pub fn month_of_week(&self, week_of_year: usize) -> usize {
        ((week_of_year - 1) / self.weeks_per_month + 1).min(MONTHS_PER_YEAR)
    }

    pub fn quarter_months(&self) -> std::ops::RangeInclusive<usize> {
        let first = 3 * (self.quarter - 1) + 1;
        first..=first + 2
    }
}

/// `Σ_{m ∈ months} ρ_m · λ · S_year`.
pub fn quarter_budget_from_proportions<T: Scalar>(
    annual_spend: T,
    lambda: T,
    proportions: &[T],
    months: impl IntoIterator<Item = usize>,
) -> T {
    let scaled = lambda * annual_spend;
    months
        .into_iter()
        .map(|m| proportions[m - 1] * scaled)
        .sum()
}

/// Builds the evaluation-quarter budget from the final historical year.
pub fn construct_quarter_budget<T: Scalar>(
    history: &HistoryDataset<T>,
    lambda_range: (T, T),
    convention: &MonthlyConvention,
    noise: &NoiseStream,
) -> Result<T> {
    if history.weekly.len() < WEEKS_PER_YEAR {
        return Err(Error::InsufficientData(
            "budget construction needs one full historical year".into(),
        ));
    }
    if !(1..=4).contains(&convention.quarter) || convention.weeks_per_month == 0 {
        return Err(Error::Domain("invalid monthly convention".into()));
    }
    let (lo, hi) = lambda_range;
    if !(lo > T::zero() && hi >= lo) {
        return Err(Error::Domain("lambda range must satisfy 0 < lo <= hi".into()));
    }
    let mut monthly = [T::zero(); MONTHS_PER_YEAR];
    for agg in history.final_year() {
        monthly[convention.month_of_week(week_of_year(agg.week)) - 1] += agg.spend;
    }
    let annual: T = monthly.iter().copied().sum();
    if !(annual > T::zero()) {
        return Err(Error::InsufficientData("final historical year has no spend".into()));
    }
    let proportions: Vec<T> = monthly.iter().map(|&h| h / annual).collect();
    let lambda = if hi == lo {
        lo
    } else {
        lo + (hi - lo) * T::lit(noise.uniform(NoiseKey::new(0, 0, Purpose::BudgetScale)))
    };
    Ok(quarter_budget_from_proportions(
        annual,
        lambda,
        &proportions,
        convention.quarter_months(),
    ))
}
