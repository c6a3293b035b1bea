//! Command-line drivers: config loading, experiment runs, sweeps and output files.

mod config;
pub mod plot;
pub mod report;

pub use config::{
    BudgetSettings, EnvSettings, ExperimentConfig, HistorySettings, IdentificationSettings,
    RegimeConfig, StatsSettings, SweepSpec, SWEEPABLE,
};

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::controllers::{write_trace_csv, ControllerKind};
use crate::error::{Error, Result};
use crate::harness::{run_experiment, run_trial_with, ExperimentResult, ExperimentSummary, TrialDumps};
use crate::response::rolling_identify;

/// Exit code for invalid configs and usage errors.
pub const EXIT_CONFIG: i32 = 2;
/// Exit code for failures while running.
pub const EXIT_RUNTIME: i32 = 1;

/// Options shared by `run` and `sweep`.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides the config's `output_dir`.
    pub out: Option<PathBuf>,
    /// Worker threads; `None` uses rayon's default.
    pub jobs: Option<usize>,
    pub debug_dumps: bool,
    /// Number of trials to draw budget trajectories for.
    pub plots: usize,
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::Json(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn report_error(e: &Error) -> i32 {
    eprintln!("error: {e}");
    exit_code(e)
}

fn out_dir(cfg: &ExperimentConfig, opts: &RunOptions, config_path: &Path) -> PathBuf {
    if let Some(o) = &opts.out {
        return o.clone();
    }
    if let Some(o) = &cfg.output_dir {
        return o.clone();
    }
    let stem = config_path.file_stem().and_then(|s| s.to_str()).unwrap_or("experiment");
    PathBuf::from("results").join(stem)
}

fn with_pool<R: Send>(jobs: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        b = b.num_threads(j.max(1));
    }
    let pool = b
        .build()
        .map_err(|e| Error::Config { field: "jobs".into(), message: e.to_string() })?;
    Ok(pool.install(f))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes all result files for one experiment into `dir`.
pub fn write_outputs(cfg: &ExperimentConfig, res: &ExperimentResult, dir: &Path, opts: &RunOptions) -> Result<()> {
    fs::create_dir_all(dir)?;
    report::write_summary_csv(&res.summary, create(&dir.join("summary.csv"))?)?;
    report::write_trials_csv(&res.reports, create(&dir.join("trials.csv"))?)?;
    fs::write(dir.join("report.md"), report::markdown_report(cfg, res))?;
    let mut eff = serde_json::to_string_pretty(&cfg.effective())?;
    eff.push('\n');
    fs::write(dir.join("effective_config.json"), eff)?;
    if opts.plots > 0 {
        let pdir = dir.join("plots");
        fs::create_dir_all(&pdir)?;
        for r in res.reports.iter().take(opts.plots) {
            fs::write(pdir.join(format!("trial_{:04}_budgets.svg", r.trial_id)), plot::budget_svg(r))?;
        }
    }
    if opts.debug_dumps {
        write_debug_dumps(cfg, &dir.join("debug"))?;
    }
    Ok(())
}

/// Replays trial 0 with diagnostics and writes them under `dir`.
pub fn write_debug_dumps(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut dumps = TrialDumps::default();
    let report = run_trial_with(cfg, 0, &cfg.run_controllers(), Some(&mut dumps))?;
    if let Some(h) = &dumps.history {
        h.write_csv(create(&dir.join("history.csv"))?)?;
        let triples: Vec<(i64, f64, f64)> = h.weekly.iter().map(|w| (w.week, w.spend, w.ret)).collect();
        rolling_identify(&triples, cfg.identification.rolling_window)?
            .write_csv(create(&dir.join("identified.csv"))?)?;
    }
    for o in &report.outcomes {
        write_trace_csv(&o.trace, create(&dir.join(format!("trace_{}.csv", o.kind)))?)?;
    }
    if !dumps.particles.is_empty() {
        let mut f = create(&dir.join("particles.csv"))?;
        for (i, (week, set)) in dumps.particles.iter().enumerate() {
            set.write_csv(&mut f, *week, i == 0)?;
        }
        f.flush()?;
    }
    let solves: Vec<serde_json::Value> = dumps
        .solves
        .iter()
        .map(|(k, w, s)| serde_json::json!({ "controller": k, "week": w, "solution": s }))
        .collect();
    fs::write(dir.join("solves.json"), serde_json::to_string_pretty(&solves)?)?;
    Ok(())
}

fn log_summary(s: &ExperimentSummary) {
    for c in &s.controllers {
        let d = s
            .comparison(c.kind)
            .map(|d| format!(", delta {:+.2}% (p={:.4})", d.mean_delta_pct, d.p_value))
            .unwrap_or_default();
        println!(
            "{:<22} normalized {:.4}, oracle gap {:.2}%, utilization {:.4}{d}",
            c.kind.to_string(),
            c.mean_normalized_return,
            c.mean_oracle_gap_pct,
            c.mean_utilization
        );
    }
    if s.n_failed > 0 {
        println!("{} trials excluded", s.n_failed);
    }
}

/// `run <config>`; returns the process exit code.
pub fn run_command(config_path: &Path, opts: &RunOptions) -> i32 {
    let cfg = match ExperimentConfig::load(config_path) {
        Ok(c) => c,
        Err(e) => return report_error(&e),
    };
    let dir = out_dir(&cfg, opts, config_path);
    let res = with_pool(opts.jobs, || run_experiment(&cfg)).and_then(|r| r);
    let res = match res {
        Ok(r) => r,
        Err(e) => return report_error(&e),
    };
    if let Err(e) = write_outputs(&cfg, &res, &dir, opts) {
        return report_error(&e);
    }
    log_summary(&res.summary);
    println!("results written to {}", dir.display());
    0
}

/// Parses `a,b,c` into numbers.
pub fn parse_values(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|v| {
            v.trim().parse::<f64>().map_err(|e| Error::Config {
                field: "values".into(),
                message: format!("`{v}`: {e}"),
            })
        })
        .collect()
}

/// `sweep <config> --param NAME --values a,b,c`; falls back to the config's
/// `sweep` block when `param` or `values` are missing.
pub fn sweep_command(config_path: &Path, param: Option<&str>, values: Option<&[f64]>, opts: &RunOptions) -> i32 {
    match sweep(config_path, param, values, opts) {
        Ok(()) => 0,
        Err(e) => report_error(&e),
    }
}

fn sweep(config_path: &Path, param: Option<&str>, values: Option<&[f64]>, opts: &RunOptions) -> Result<()> {
    let cfg = ExperimentConfig::load(config_path)?;
    let usage = |m: &str| Error::Config { field: "param".into(), message: m.into() };
    let param = param
        .map(str::to_string)
        .or_else(|| cfg.sweep.as_ref().map(|s| s.param.clone()))
        .ok_or_else(|| usage("no --param given and the config has no sweep block"))?;
    let values = values
        .map(<[f64]>::to_vec)
        .or_else(|| cfg.sweep.as_ref().filter(|s| s.param == param).map(|s| s.values.clone()))
        .ok_or_else(|| usage("no --values given for the swept parameter"))?;
    if values.is_empty() {
        return Err(Error::Config { field: "values".into(), message: "at least one value is required".into() });
    }
    // all points are validated before any runs
    let points: Vec<(f64, ExperimentConfig)> = values
        .iter()
        .map(|&v| cfg.with_param(&param, v).map(|c| (v, c)))
        .collect::<Result<_>>()?;
    let dir = out_dir(&cfg, opts, config_path);
    fs::create_dir_all(&dir)?;
    let mut rows = Vec::with_capacity(points.len());
    let mut csv = format!("{param},{}\n", report::SUMMARY_HEADER);
    for (v, c) in &points {
        println!("{param} = {v}");
        let res = with_pool(opts.jobs, || run_experiment(c))??;
        write_outputs(c, &res, &dir.join(format!("{param}_{v}")), opts)?;
        log_summary(&res.summary);
        csv.push_str(&report::summary_rows(&res.summary, &format!("{v},")));
        rows.push((*v, res.summary));
    }
    fs::write(dir.join("sweep.csv"), csv)?;
    fs::write(dir.join("sweep.md"), report::sweep_markdown(&param, &rows))?;
    println!("results written to {}", dir.display());
    Ok(())
}

/// Kinds accepted in `controllers` lists, for help text.
pub fn controller_names() -> Vec<&'static str> {
    ControllerKind::ALL.iter().map(|k| k.name()).collect()
}
