use std::fmt::Write as _;
use std::io::Write;

use super::ExperimentConfig;
use crate::controllers::ControllerKind;
use crate::error::Result;
use crate::harness::{improvement_pct, oracle_gap_pct, ExperimentResult, ExperimentSummary, TrialReport};

pub const SUMMARY_HEADER: &str = "controller,n_trials,n_failed,mean_normalized_return,mean_utilization,min_utilization,\
mean_oracle_gap_pct,gap_ci_t_lo,gap_ci_t_hi,gap_ci_boot_lo,gap_ci_boot_hi,\
mean_delta_pct,delta_ci_t_lo,delta_ci_t_hi,delta_ci_boot_lo,delta_ci_boot_hi,t_stat,p_value,\
relaxed_weeks,max_iter_weeks";

pub const TRIALS_HEADER: &str = "trial,seed,controller,quarter_budget,total_return,total_spend,\
utilization,normalized_return,oracle_gap_pct,delta_pct";

/// Summary rows without the header; `prefix` is prepended to every row.
pub fn summary_rows(s: &ExperimentSummary, prefix: &str) -> String {
    let mut out = String::new();
    for c in &s.controllers {
        let delta = match s.comparison(c.kind) {
            Some(d) => format!(
                "{},{},{},{},{},{},{}",
                d.mean_delta_pct,
                d.delta_ci_t.0,
                d.delta_ci_t.1,
                d.delta_ci_bootstrap.0,
                d.delta_ci_bootstrap.1,
                d.t_stat,
                d.p_value
            ),
            None => ",,,,,,".to_string(),
        };
        let _ = writeln!(
            out,
            "{prefix}{},{},{},{},{},{},{},{},{},{},{},{delta},{},{}",
            c.kind,
            s.n_trials,
            s.n_failed,
            c.mean_normalized_return,
            c.mean_utilization,
            c.min_utilization,
            c.mean_oracle_gap_pct,
            c.gap_ci_t.0,
            c.gap_ci_t.1,
            c.gap_ci_bootstrap.0,
            c.gap_ci_bootstrap.1,
            c.relaxed_weeks,
            c.max_iter_weeks
        );
    }
    out
}

pub fn write_summary_csv<W: Write>(s: &ExperimentSummary, mut out: W) -> Result<()> {
    writeln!(out, "{SUMMARY_HEADER}")?;
    out.write_all(summary_rows(s, "").as_bytes())?;
    Ok(())
}

pub fn write_trials_csv<W: Write>(reports: &[TrialReport], mut out: W) -> Result<()> {
    writeln!(out, "{TRIALS_HEADER}")?;
    for r in reports {
        let base = r.outcome(ControllerKind::BaselinePacing).map(|b| b.total_return);
        for o in &r.outcomes {
            let gap = oracle_gap_pct(r.oracle_return, o.total_return)?;
            let delta = match base {
                Some(b) => improvement_pct(o.total_return, b)?.to_string(),
                None => String::new(),
            };
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{gap},{delta}",
                r.trial_id,
                r.trial_seed,
                o.kind,
                r.quarter_budget,
                o.total_return,
                o.total_spend,
                o.utilization,
                o.normalized_return
            )?;
        }
    }
    Ok(())
}

fn ci(c: (f64, f64)) -> String {
    format!("[{:.2}, {:.2}]", c.0, c.1)
}

/// Human-readable results table.
pub fn markdown_report(cfg: &ExperimentConfig, res: &ExperimentResult) -> String {
    let s = &res.summary;
    let regime = cfg.regime_spec();
    let mut md = String::new();
    let title = if cfg.name.is_empty() { "experiment" } else { &cfg.name };
    let _ = writeln!(md, "# Results: {title}\n");
    let _ = writeln!(
        md,
        "Regime `{:?}` (rw_sigma {}, decline_rate {}, guardrails -{}/+{}), {} weeks, master seed {}.\n",
        regime.kind, regime.rw_sigma, regime.decline_rate, regime.smooth_lower, regime.smooth_upper, cfg.weeks, cfg.master_seed
    );
    let _ = writeln!(
        md,
        "Trials: {} completed, {} failed. Intervals are 95%: paired t and percentile bootstrap ({} resamples).\n",
        s.n_trials, s.n_failed, cfg.statistics.bootstrap_reps
    );
    let _ = writeln!(
        md,
        "| Controller | Normalized return | Δ% vs baseline | Δ% CI (t) | Δ% CI (bootstrap) | p-value | Oracle gap % | Gap CI (t) | Utilization |"
    );
    let _ = writeln!(md, "|---|---|---|---|---|---|---|---|---|");
    for c in &s.controllers {
        let (d, dt, db, p) = match s.comparison(c.kind) {
            Some(x) => (
                format!("{:+.2}", x.mean_delta_pct),
                ci(x.delta_ci_t),
                ci(x.delta_ci_bootstrap),
                format!("{:.4}", x.p_value),
            ),
            None => ("-".into(), "-".into(), "-".into(), "-".into()),
        };
        let _ = writeln!(
            md,
            "| {} | {:.4} | {d} | {dt} | {db} | {p} | {:.2} | {} | {:.4} |",
            c.kind,
            c.mean_normalized_return,
            c.mean_oracle_gap_pct,
            ci(c.gap_ci_t),
            c.mean_utilization
        );
    }
    let relaxed: usize = s.controllers.iter().map(|c| c.relaxed_weeks).sum();
    let max_iter: usize = s.controllers.iter().map(|c| c.max_iter_weeks).sum();
    let _ = writeln!(
        md,
        "\nPlanner weeks with relaxed constraints: {relaxed}; weeks at the Newton step limit: {max_iter}."
    );
    if !s.failures.is_empty() {
        let _ = writeln!(md, "\n## Excluded trials\n");
        for (i, why) in &s.failures {
            let _ = writeln!(md, "- trial {i}: {why}");
        }
    }
    md
}

/// Table of one sweep: a row per (value, controller).
pub fn sweep_markdown(param: &str, rows: &[(f64, ExperimentSummary)]) -> String {
    let mut md = String::new();
    let _ = writeln!(md, "# Sweep over `{param}`\n");
    let _ = writeln!(md, "| {param} | Controller | Normalized return | Δ% vs baseline | Δ% CI (bootstrap) | Oracle gap % | Utilization |");
    let _ = writeln!(md, "|---|---|---|---|---|---|---|");
    for (v, s) in rows {
        for c in &s.controllers {
            let (d, db) = match s.comparison(c.kind) {
                Some(x) => (format!("{:+.2}", x.mean_delta_pct), ci(x.delta_ci_bootstrap)),
                None => ("-".into(), "-".into()),
            };
            let _ = writeln!(
                md,
                "| {v} | {} | {:.4} | {d} | {db} | {:.2} | {:.4} |",
                c.kind, c.mean_normalized_return, c.mean_oracle_gap_pct, c.mean_utilization
            );
        }
    }
    md
}
