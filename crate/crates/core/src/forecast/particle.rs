use std::io::Write;

use serde::{Deserialize, Serialize};

use super::ThetaForecast;
use crate::env::{NoiseKey, NoiseStream, Purpose};
use crate::error::{domain, Result};
use crate::response::{exp_sat_unchecked, CtrlTheta};
use crate::scalar::Scalar;

/// Weighted cloud over `(ln ρ_max, ln κ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleSet<T = f64> {
    pub particles: Vec<[T; 2]>,
    pub weights: Vec<T>,
    pub ess: T,
}

/// Result of one filter step.
#[derive(Debug, Clone, PartialEq)]
pub struct PfOutcome<T = f64> {
    pub set: ParticleSet<T>,
    /// Effective sample size after reweighting, before any resampling.
    pub ess_before_resample: T,
    pub resampled: bool,
    /// Every likelihood underflowed; weights were reset to uniform.
    pub degenerate: bool,
}

impl<T: Scalar> ParticleSet<T> {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Weighted mean of the log particles.
    pub fn mean_log(&self) -> [T; 2] {
        let mut m = [T::zero(); 2];
        for (p, &w) in self.particles.iter().zip(&self.weights) {
            m[0] += w * p[0];
            m[1] += w * p[1];
        }
        m
    }

    /// Writes `week,index,log_rho_max,log_kappa,weight` rows.
    pub fn write_csv<W: Write>(&self, mut out: W, week: i64, header: bool) -> Result<()> {
        if header {
            writeln!(out, "week,index,log_rho_max,log_kappa,weight")?;
        }
        for (i, (p, w)) in self.particles.iter().zip(&self.weights).enumerate() {
            writeln!(out, "{week},{i},{},{},{w}", p[0], p[1])?;
        }
        Ok(())
    }
}

fn ess<T: Scalar>(w: &[T]) -> T {
    T::one() / w.iter().map(|&x| x * x).sum::<T>()
}

fn uniform_weights<T: Scalar>(n: usize) -> Vec<T> {
    vec![T::one() / T::from_count(n); n]
}

/// Draws `n` particles with `ln θ ~ N(ln prior, spread²·I)` and uniform weights.
pub fn pf_init<T: Scalar>(
    prior: &CtrlTheta<T>,
    spread: T,
    n_particles: usize,
    noise: &NoiseStream,
) -> Result<ParticleSet<T>> {
    if n_particles < 2 {
        return Err(domain("particle filter needs at least 2 particles"));
    }
    prior.validate()?;
    if !(spread >= T::zero() && spread.is_finite()) {
        return Err(domain(format!("spread must be finite and >= 0, got {spread}")));
    }
    let centre = prior.ln();
    let particles = (0..n_particles)
        .map(|i| {
            let mut p = centre;
            for (c, v) in p.iter_mut().enumerate() {
                let z = noise.normal(NoiseKey::indexed(0, c as u32, Purpose::PfInit, i as u32));
                *v += spread * T::lit(z);
            }
            p
        })
        .collect();
    Ok(ParticleSet {
        particles,
        weights: uniform_weights(n_particles),
        ess: T::from_count(n_particles),
    })
}

/// One propagate / reweight / resample step on a weekly `(spend, return)`
/// observation. `week` keys the noise draws.
pub fn pf_update<T: Scalar>(
    ps: &ParticleSet<T>,
    observed: (T, T),
    rw_sigma: T,
    obs_sd: T,
    noise: &NoiseStream,
    week: i64,
) -> Result<PfOutcome<T>> {
    let (spend, ret) = observed;
    if !(spend >= T::zero() && spend.is_finite() && ret.is_finite()) {
        return Err(domain(format!("observation must be finite with spend >= 0, got ({spend}, {ret})")));
    }
    if !(obs_sd > T::zero() && obs_sd.is_finite()) {
        return Err(domain(format!("obs_sd must be > 0, got {obs_sd}")));
    }
    if !(rw_sigma >= T::zero() && rw_sigma.is_finite()) {
        return Err(domain(format!("rw_sigma must be >= 0, got {rw_sigma}")));
    }
    let n = ps.len();
    let mut particles = ps.particles.clone();
    if rw_sigma > T::zero() {
        for (i, p) in particles.iter_mut().enumerate() {
            for (c, v) in p.iter_mut().enumerate() {
                let z = noise.normal(NoiseKey::indexed(week, c as u32, Purpose::PfPropagate, i as u32));
                *v += rw_sigma * T::lit(z);
            }
        }
    }

    let half = T::lit(0.5);
    let log_lik: Vec<T> = particles
        .iter()
        .map(|p| {
            let z = (ret - exp_sat_unchecked(spend, &CtrlTheta::from_ln(*p))) / obs_sd;
            -half * z * z
        })
        .collect();
    let best = log_lik.iter().copied().fold(T::neg_infinity(), T::max);
    // the largest Gaussian kernel e^{best} would be 0 in this precision
    let degenerate = !(best.is_finite() && best.exp() > T::zero());
    let mut weights = if degenerate {
        uniform_weights(n)
    } else {
        let raw: Vec<T> = ps
            .weights
            .iter()
            .zip(&log_lik)
            .map(|(&w, &l)| w * (l - best).exp())
            .collect();
        let total: T = raw.iter().copied().sum();
        if total > T::zero() && total.is_finite() {
            raw.into_iter().map(|w| w / total).collect()
        } else {
            uniform_weights(n)
        }
    };
    let ess_before = ess(&weights);
    let mut resampled = false;
    if ess_before < T::from_count(n) * half {
        particles = systematic_resample(&particles, &weights, noise, week);
        let jitter = T::lit(0.2) * rw_sigma;
        if jitter > T::zero() {
            for (i, p) in particles.iter_mut().enumerate() {
                for (c, v) in p.iter_mut().enumerate() {
                    let z = noise.normal(NoiseKey::indexed(week, c as u32, Purpose::PfJitter, i as u32));
                    *v += jitter * T::lit(z);
                }
            }
        }
        weights = uniform_weights(n);
        resampled = true;
    }
    let ess_now = ess(&weights).min(T::from_count(n)).max(T::one());
    Ok(PfOutcome {
        set: ParticleSet {
            particles,
            weights,
            ess: ess_now,
        },
        ess_before_resample: ess_before,
        resampled,
        degenerate,
    })
}

fn systematic_resample<T: Scalar>(
    particles: &[[T; 2]],
    weights: &[T],
    noise: &NoiseStream,
    week: i64,
) -> Vec<[T; 2]> {
    let n = particles.len();
    let nf = n as f64;
    let u0 = (1.0 - noise.uniform(NoiseKey::new(week, 0, Purpose::PfResample))) / nf;
    let mut out = Vec::with_capacity(n);
    let mut cum = weights[0].to_f64_lossy();
    let mut j = 0;
    for i in 0..n {
        let u = u0 + i as f64 / nf;
        while u > cum && j + 1 < n {
            j += 1;
            cum += weights[j].to_f64_lossy();
        }
        out.push(particles[j]);
    }
    out
}

/// `exp` of the weighted mean log particle, held over the horizon.
pub fn pf_forecast<T: Scalar>(
    ps: &ParticleSet<T>,
    base_week: i64,
    horizon: usize,
) -> Result<ThetaForecast<T>> {
    if ps.is_empty() {
        return Err(domain("empty particle set"));
    }
    ThetaForecast::new(base_week, vec![CtrlTheta::from_ln(ps.mean_log()); horizon])
}
