//! Per-trial metrics and the paired statistics on their differences.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::env::{NoiseKey, NoiseStream, Purpose};
use crate::error::{domain, Result};

/// `R^π / R^oracle`.
pub fn normalized_return(policy_return: f64, oracle_return: f64) -> Result<f64> {
    if !(oracle_return > 0.0) {
        return Err(domain(format!("oracle return must be > 0, got {oracle_return}")));
    }
    Ok(policy_return / oracle_return)
}

/// `100·(R^π − R^base)/R^base`.
pub fn improvement_pct(policy: f64, base: f64) -> Result<f64> {
    if !(base > 0.0) {
        return Err(domain(format!("baseline return must be > 0, got {base}")));
    }
    Ok(100.0 * (policy - base) / base)
}

/// `100·(R^oracle − R^π)/R^oracle`.
pub fn oracle_gap_pct(oracle: f64, policy: f64) -> Result<f64> {
    if !(oracle > 0.0) {
        return Err(domain(format!("oracle return must be > 0, got {oracle}")));
    }
    Ok(100.0 * (oracle - policy) / oracle)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedT {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub ci95: (f64, f64),
}

/// Two-sided one-sample t test of `mean(diffs) = 0`.
///
/// Zero spread: `p = 1` when the mean is zero, `p = 0` otherwise, and the
/// interval collapses to the mean.
pub fn paired_t(diffs: &[f64]) -> Result<PairedT> {
    let n = diffs.len();
    if n < 2 {
        return Err(domain("paired t needs at least 2 differences"));
    }
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(domain("differences must be finite"));
    }
    let nf = n as f64;
    let mean = diffs.iter().sum::<f64>() / nf;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let sd = var.sqrt();
    let scale = diffs.iter().fold(0.0f64, |m, d| m.max(d.abs())).max(f64::MIN_POSITIVE);
    if sd <= 1e-14 * scale {
        let (t_stat, p_value) = if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (mean.signum() * f64::INFINITY, 0.0)
        };
        return Ok(PairedT {
            n,
            mean,
            sd: 0.0,
            t_stat,
            p_value,
            ci95: (mean, mean),
        });
    }
    let se = sd / nf.sqrt();
    let t_stat = mean / se;
    let dist = StudentsT::new(0.0, 1.0, nf - 1.0).map_err(|e| domain(e.to_string()))?;
    let p_value = (2.0 * dist.cdf(-t_stat.abs())).min(1.0);
    let q = dist.inverse_cdf(0.975);
    Ok(PairedT {
        n,
        mean,
        sd,
        t_stat,
        p_value,
        ci95: (mean - q * se, mean + q * se),
    })
}

/// Percentile interval `(2.5%, 97.5%)` of `b_reps` resampled means.
pub fn bootstrap_ci(diffs: &[f64], b_reps: usize, seed: u64) -> Result<(f64, f64)> {
    let n = diffs.len();
    if n == 0 {
        return Err(domain("bootstrap needs at least one value"));
    }
    if b_reps < 100 {
        return Err(domain("bootstrap needs at least 100 replicates"));
    }
    if n == 1 {
        return Ok((diffs[0], diffs[0]));
    }
    let noise = NoiseStream::new(seed);
    let mut means: Vec<f64> = (0..b_reps)
        .map(|r| {
            let total: f64 = (0..n)
                .map(|i| {
                    let key = NoiseKey::indexed(r as i64, 0, Purpose::Bootstrap, i as u32);
                    diffs[(noise.bits(key) % n as u64) as usize]
                })
                .sum();
            total / n as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    Ok((quantile_sorted(&means, 0.025), quantile_sorted(&means, 0.975)))
}

/// Linear-interpolation quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}
