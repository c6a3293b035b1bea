//! Paired Monte Carlo evaluation of the controllers.

mod stats;

pub use stats::{bootstrap_ci, improvement_pct, normalized_return, oracle_gap_pct, paired_t, PairedT};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cli::ExperimentConfig;
use crate::controllers::{
    Controller, ControllerContext, ControllerKind, QuarterState, TraceRow, TrueWeek,
};
use crate::env::{
    advance_alpha, advance_theta, construct_quarter_budget, generate_history, seasonal_factor,
    step_week_with_alpha, week_of_quarter, HistoryDataset, NoiseKey, NoiseStream, Purpose,
};
use crate::error::{domain, Error, Result};
use crate::forecast::ParticleSet;
use crate::solver::{HorizonSolution, SolveStatus};
use stats::mean;

/// One controller's closed-loop quarter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerOutcome {
    pub kind: ControllerKind,
    pub total_return: f64,
    pub total_spend: f64,
    pub utilization: f64,
    pub normalized_return: f64,
    pub relaxed_weeks: usize,
    pub max_iter_weeks: usize,
    pub trace: Vec<TraceRow<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub trial_id: usize,
    pub trial_seed: u64,
    pub quarter_budget: f64,
    pub oracle_return: f64,
    pub outcomes: Vec<ControllerOutcome>,
}

impl TrialReport {
    pub fn outcome(&self, kind: ControllerKind) -> Option<&ControllerOutcome> {
        self.outcomes.iter().find(|o| o.kind == kind)
    }
}

/// Optional per-trial diagnostics.
#[derive(Debug, Clone, Default)]
pub struct TrialDumps {
    pub history: Option<HistoryDataset<f64>>,
    /// `(week, cloud)` before each planning call of the particle filter.
    pub particles: Vec<(i64, ParticleSet<f64>)>,
    /// Every horizon solve, by controller and week.
    pub solves: Vec<(ControllerKind, usize, HorizonSolution<f64>)>,
}

/// Seed of trial `trial_id` under `master_seed`.
pub fn trial_seed(master_seed: u64, trial_id: usize) -> u64 {
    NoiseStream::new(master_seed).bits(NoiseKey::indexed(0, 0, Purpose::TrialSeed, trial_id as u32))
}

/// Runs every configured controller (plus the oracle) on one realization.
pub fn run_trial(cfg: &ExperimentConfig, trial_id: usize) -> Result<TrialReport> {
    run_trial_with(cfg, trial_id, &cfg.run_controllers(), None)
}

/// Like [`run_trial`] with an explicit controller list; the list must
/// contain the oracle. Duplicate kinds replay the same policy again.
pub fn run_trial_with(
    cfg: &ExperimentConfig,
    trial_id: usize,
    kinds: &[ControllerKind],
    mut dumps: Option<&mut TrialDumps>,
) -> Result<TrialReport> {
    if !kinds.contains(&ControllerKind::MpcOracle) {
        return Err(domain("the oracle controller must always run"));
    }
    let seed = trial_seed(cfg.master_seed, trial_id);
    let noise = NoiseStream::new(seed);
    let regime = cfg.regime_spec();
    let exec = cfg.env.exec;
    let history = generate_history(&cfg.history_config(), &noise)?;
    let quarter_budget = construct_quarter_budget(
        &history,
        (cfg.budget.lambda_lo, cfg.budget.lambda_hi),
        &cfg.monthly_convention(),
        &noise,
    )?;

    // latent path over the quarter, independent of any policy
    let weeks = cfg.weeks;
    let mut theta = history.end_state.theta;
    let mut alpha = history.end_state.alpha;
    let mut truth = Vec::with_capacity(weeks);
    let mut alphas = Vec::with_capacity(weeks);
    for t in 1..=weeks as i64 {
        theta = advance_theta(&theta, &regime, &noise, t);
        alpha = advance_alpha(alpha, exec.alpha_drift_sigma, &noise, t);
        truth.push(TrueWeek {
            theta,
            efficiency: seasonal_factor(week_of_quarter(t, cfg.weeks_per_quarter), &regime),
        });
        alphas.push(alpha);
    }

    let anchor = cfg.budget.anchor.unwrap_or(quarter_budget / weeks as f64);
    let mut outcomes = Vec::with_capacity(kinds.len());
    let mut key_logs: Vec<Vec<NoiseKey>> = Vec::with_capacity(kinds.len());
    for &kind in kinds {
        let private = noise.derive(kind as u64 + 1);
        let ctx = ControllerContext {
            history: &history,
            regime: &regime,
            weeks,
            quarter_start: 1,
            predictor: cfg.spend_predictor,
            identification_weeks: cfg.identification.static_weeks,
            rolling_window: cfg.identification.rolling_window,
            weeks_per_quarter: cfg.weeks_per_quarter,
            pf: cfg.particle_filter,
            truth: &truth,
            noise: &private,
        };
        let mut ctrl = Controller::build(kind, &ctx)
            .map_err(|e| domain(format!("{kind}: initialization failed: {e}")))?;
        let env_noise = NoiseStream::with_log(seed);
        let mut state = QuarterState::new(quarter_budget, weeks, anchor, history.end_state.last_day_spend)?;
        let mut trace = Vec::with_capacity(weeks);
        let (mut relaxed_weeks, mut max_iter_weeks) = (0, 0);
        while !state.is_done() {
            let t = state.week;
            if let (Some(d), Some(ps)) = (dumps.as_deref_mut(), ctrl.particle_set()) {
                d.particles.push((t as i64, ps.clone()));
            }
            let decision = ctrl
                .plan(&state)
                .map_err(|e| domain(format!("{kind}: planning week {t} failed: {e}")))?;
            if let (Some(d), Some(sol)) = (dumps.as_deref_mut(), &decision.solution) {
                d.solves.push((kind, t, sol.clone()));
            }
            relaxed_weeks += decision.relaxed as usize;
            max_iter_weeks += (decision.status == Some(SolveStatus::MaxIter)) as usize;
            let rec = step_week_with_alpha(
                state.last_day_spend,
                decision.budget.max(0.0),
                alphas[t - 1],
                &exec,
                &truth[t - 1].theta,
                truth[t - 1].efficiency,
                &env_noise,
                t as i64,
            )?;
            let remaining_before = state.remaining_budget;
            ctrl.observe(&rec)
                .map_err(|e| domain(format!("{kind}: update after week {t} failed: {e}")))?;
            trace.push(TraceRow {
                week: t,
                planned: rec.planned_budget,
                realized_spend: rec.realized_spend,
                realized_return: rec.realized_return,
                remaining_before,
                remaining_after: remaining_before - rec.realized_spend,
                status: decision.status,
                relaxed: decision.relaxed,
            });
            state.apply(rec)?;
        }
        if max_iter_weeks > 0 {
            log::warn!("trial {trial_id}: {kind} hit the Newton step limit in {max_iter_weeks} weeks");
        }
        key_logs.push(env_noise.drained_log());
        let total_return: f64 = trace.iter().map(|r| r.realized_return).sum();
        let total_spend: f64 = trace.iter().map(|r| r.realized_spend).sum();
        outcomes.push(ControllerOutcome {
            kind,
            total_return,
            total_spend,
            utilization: total_spend / quarter_budget,
            normalized_return: f64::NAN,
            relaxed_weeks,
            max_iter_weeks,
            trace,
        });
    }

    for (k, log) in kinds.iter().zip(&key_logs).skip(1) {
        if *log != key_logs[0] {
            return Err(domain(format!("pairing violated: {k} consumed different noise keys")));
        }
    }
    let oracle_return = outcomes
        .iter()
        .find(|o| o.kind == ControllerKind::MpcOracle)
        .map(|o| o.total_return)
        .expect("oracle ran");
    for o in &mut outcomes {
        o.normalized_return = if o.kind == ControllerKind::MpcOracle {
            1.0
        } else {
            normalized_return(o.total_return, oracle_return)?
        };
    }
    if let Some(d) = dumps {
        d.history = Some(history);
    }
    Ok(TrialReport {
        trial_id,
        trial_seed: seed,
        quarter_budget,
        oracle_return,
        outcomes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerSummary {
    pub kind: ControllerKind,
    pub mean_normalized_return: f64,
    pub mean_utilization: f64,
    pub min_utilization: f64,
    pub mean_oracle_gap_pct: f64,
    pub gap_ci_t: (f64, f64),
    pub gap_ci_bootstrap: (f64, f64),
    pub relaxed_weeks: usize,
    pub max_iter_weeks: usize,
}

/// A controller compared with the baseline on per-trial `Δ%`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub kind: ControllerKind,
    pub mean_delta_pct: f64,
    pub delta_ci_t: (f64, f64),
    pub delta_ci_bootstrap: (f64, f64),
    pub t_stat: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub n_trials: usize,
    pub n_failed: usize,
    pub failures: Vec<(usize, String)>,
    pub controllers: Vec<ControllerSummary>,
    pub comparisons: Vec<Comparison>,
}

impl ExperimentSummary {
    pub fn controller(&self, kind: ControllerKind) -> Option<&ControllerSummary> {
        self.controllers.iter().find(|c| c.kind == kind)
    }

    pub fn comparison(&self, kind: ControllerKind) -> Option<&Comparison> {
        self.comparisons.iter().find(|c| c.kind == kind)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub reports: Vec<TrialReport>,
    pub summary: ExperimentSummary,
}

/// Runs `cfg.n_trials` trials on the current rayon pool; results are
/// ordered by trial id whatever the scheduling.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let kinds = cfg.run_controllers();
    let results: Vec<(usize, Result<TrialReport>)> = (0..cfg.n_trials)
        .into_par_iter()
        .map(|i| (i, run_trial_with(cfg, i, &kinds, None)))
        .collect();
    let mut reports = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (i, r) in results {
        match r {
            Ok(rep) => reports.push(rep),
            Err(e) => {
                log::warn!("trial {i} excluded: {e}");
                failures.push((i, e.to_string()));
            }
        }
    }
    let summary = summarize(cfg, &kinds, &reports, failures)?;
    Ok(ExperimentResult { reports, summary })
}

/// `(t interval, bootstrap interval, t statistic, p-value)`
type Intervals = ((f64, f64), (f64, f64), f64, f64);

/// Reduces trial reports (already sorted by trial id) to summary metrics.
pub fn summarize(
    cfg: &ExperimentConfig,
    kinds: &[ControllerKind],
    reports: &[TrialReport],
    failures: Vec<(usize, String)>,
) -> Result<ExperimentSummary> {
    let n = reports.len();
    if n == 0 {
        return Err(Error::InsufficientData(format!(
            "all {} trials failed: {}",
            failures.len(),
            failures.first().map(|f| f.1.as_str()).unwrap_or("")
        )));
    }
    let b_reps = cfg.statistics.bootstrap_reps;
    let ci = |xs: &[f64], salt: u64| -> Result<Intervals> {
        let boot = bootstrap_ci(xs, b_reps, NoiseStream::new(cfg.master_seed).derive(salt).seed())?;
        if xs.len() < 2 {
            let m = xs[0];
            return Ok(((m, m), boot, 0.0, 1.0));
        }
        let t = paired_t(xs)?;
        Ok((t.ci95, boot, t.t_stat, t.p_value))
    };
    let mut controllers = Vec::new();
    let mut comparisons = Vec::new();
    for (ki, &kind) in kinds.iter().enumerate() {
        let outs: Vec<&ControllerOutcome> = reports
            .iter()
            .map(|r| r.outcome(kind).expect("every trial runs every controller"))
            .collect();
        let gaps: Vec<f64> = reports
            .iter()
            .zip(&outs)
            .map(|(r, o)| oracle_gap_pct(r.oracle_return, o.total_return))
            .collect::<Result<_>>()?;
        let (gap_ci_t, gap_ci_bootstrap, _, _) = ci(&gaps, 2 * ki as u64 + 1)?;
        let utils: Vec<f64> = outs.iter().map(|o| o.utilization).collect();
        controllers.push(ControllerSummary {
            kind,
            mean_normalized_return: mean(&outs.iter().map(|o| o.normalized_return).collect::<Vec<_>>()),
            mean_utilization: mean(&utils),
            min_utilization: utils.iter().copied().fold(f64::INFINITY, f64::min),
            mean_oracle_gap_pct: mean(&gaps),
            gap_ci_t,
            gap_ci_bootstrap,
            relaxed_weeks: outs.iter().map(|o| o.relaxed_weeks).sum(),
            max_iter_weeks: outs.iter().map(|o| o.max_iter_weeks).sum(),
        });
        if kind == ControllerKind::BaselinePacing || !kinds.contains(&ControllerKind::BaselinePacing) {
            continue;
        }
        let deltas: Vec<f64> = reports
            .iter()
            .zip(&outs)
            .map(|(r, o)| {
                let base = r.outcome(ControllerKind::BaselinePacing).expect("baseline ran");
                improvement_pct(o.total_return, base.total_return)
            })
            .collect::<Result<_>>()?;
        let (delta_ci_t, delta_ci_bootstrap, t_stat, p_value) = ci(&deltas, 2 * ki as u64 + 2)?;
        comparisons.push(Comparison {
            kind,
            mean_delta_pct: mean(&deltas),
            delta_ci_t,
            delta_ci_bootstrap,
            t_stat,
            p_value,
        });
    }
    Ok(ExperimentSummary {
        n_trials: n,
        n_failed: failures.len(),
        failures,
        controllers,
        comparisons,
    })
}

#[cfg(test)]
mod tests;
