//! Control-facing response model `ρ_max·(1 − e^{−κ·s})` and its estimation.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::linalg::{solve, Matrix};
use crate::scalar::Scalar;

/// Exponential-saturation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CtrlTheta<T = f64> {
    pub rho_max: T,
    pub kappa: T,
}

impl<T: Scalar> CtrlTheta<T> {
    pub fn new(rho_max: T, kappa: T) -> Result<Self> {
        let t = Self { rho_max, kappa };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho_max.is_finite() && self.rho_max > T::zero()) {
            return Err(domain(format!("rho_max must be finite and > 0, got {}", self.rho_max)));
        }
        if !(self.kappa.is_finite() && self.kappa > T::zero()) {
            return Err(domain(format!("kappa must be finite and > 0, got {}", self.kappa)));
        }
        Ok(())
    }

    pub fn ln(&self) -> [T; 2] {
        [self.rho_max.ln(), self.kappa.ln()]
    }

    pub fn from_ln(p: [T; 2]) -> Self {
        Self {
            rho_max: p[0].exp(),
            kappa: p[1].exp(),
        }
    }
}

/// `ρ_max·(1 − e^{−κ·s})`.
pub fn exp_saturation<T: Scalar>(spend: T, theta: &CtrlTheta<T>) -> Result<T> {
    if !(spend.is_finite() && spend >= T::zero()) {
        return Err(domain(format!("spend must be finite and >= 0, got {spend}")));
    }
    Ok(exp_sat_unchecked(spend, theta))
}

#[inline]
pub(crate) fn exp_sat_unchecked<T: Scalar>(spend: T, theta: &CtrlTheta<T>) -> T {
    -theta.rho_max * (-theta.kappa * spend).exp_m1()
}

/// Spend at which the curve reaches `eta·ρ_max`: `−ln(1 − η)/κ`.
pub fn saturation_spend<T: Scalar>(eta: T, theta: &CtrlTheta<T>) -> Result<T> {
    if !(eta > T::zero() && eta < T::one()) {
        return Err(domain(format!("eta must lie in (0, 1), got {eta}")));
    }
    Ok(-(-eta).ln_1p() / theta.kappa)
}

/// Jacobian row of the model with respect to `(ln ρ_max, ln κ)`.
pub fn model_jacobian<T: Scalar>(spend: T, theta: &CtrlTheta<T>) -> [T; 2] {
    let e = (-theta.kappa * spend).exp();
    [
        exp_sat_unchecked(spend, theta),
        theta.rho_max * theta.kappa * spend * e,
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult<T = f64> {
    pub theta: CtrlTheta<T>,
    pub residual_sse: T,
    pub iterations: usize,
    /// Projected gradient of the SSE fell below tolerance.
    pub converged: bool,
}

/// Levenberg–Marquardt settings for [`fit_exp_saturation_with`].
#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Multipliers applied to the initial κ for the extra starts.
    pub kappa_starts: &'static [f64],
    pub gradient_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            kappa_starts: &[1.0, 3.0, 1.0 / 3.0, 9.0, 1.0 / 9.0, 27.0],
            gradient_tol: 1e-12,
        }
    }
}

const KAPPA_MIN: f64 = 1e-8;
const KAPPA_MAX: f64 = 1.0;
/// Beyond this κs the curve's slope is below e^{-10} of its initial slope.
const SATURATED_KS: f64 = 10.0;

struct Problem<'a, T> {
    obs: &'a [(T, T)],
    lo: [T; 2],
    hi: [T; 2],
}

impl<T: Scalar> Problem<'_, T> {
    fn sse(&self, p: [T; 2]) -> T {
        let th = CtrlTheta::from_ln(p);
        self.obs
            .iter()
            .map(|&(s, r)| {
                let e = r - exp_sat_unchecked(s, &th);
                e * e
            })
            .sum()
    }

    fn clamp(&self, p: [T; 2]) -> [T; 2] {
        [
            p[0].max(self.lo[0]).min(self.hi[0]),
            p[1].max(self.lo[1]).min(self.hi[1]),
        ]
    }

    /// `(JᵀJ, Jᵀr)` at `p`.
    fn normal_equations(&self, p: [T; 2]) -> ([[T; 2]; 2], [T; 2]) {
        let th = CtrlTheta::from_ln(p);
        let mut jtj = [[T::zero(); 2]; 2];
        let mut jtr = [T::zero(); 2];
        for &(s, r) in self.obs {
            let j = model_jacobian(s, &th);
            let res = r - exp_sat_unchecked(s, &th);
            for a in 0..2 {
                jtr[a] += j[a] * res;
                for b in 0..2 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        (jtj, jtr)
    }

    /// Infinity norm of the SSE gradient after dropping components that
    /// push against an active bound.
    fn projected_gradient(&self, p: [T; 2], jtr: [T; 2]) -> T {
        let mut g = T::zero();
        for a in 0..2 {
            // descent direction for SSE is +Jᵀr
            let at_lo = p[a] <= self.lo[a] && jtr[a] < T::zero();
            let at_hi = p[a] >= self.hi[a] && jtr[a] > T::zero();
            if !(at_lo || at_hi) {
                g = g.max((T::lit(2.0) * jtr[a]).abs());
            }
        }
        g
    }

    fn run(&self, start: [T; 2], opts: &FitOptions, grad_scale: T) -> FitResult<T> {
        let mut p = self.clamp(start);
        let mut sse = self.sse(p);
        let mut lambda = T::lit(1e-3);
        let mut iterations = 0;
        let tol = T::lit(opts.gradient_tol) * grad_scale;
        let mut converged = false;
        while iterations < opts.max_iterations {
            iterations += 1;
            let (jtj, jtr) = self.normal_equations(p);
            if self.projected_gradient(p, jtr) <= tol {
                converged = true;
                break;
            }
            let mut accepted = false;
            for _ in 0..40 {
                let a = Matrix::from_rows(&[
                    vec![jtj[0][0] * (T::one() + lambda), jtj[0][1]],
                    vec![jtj[1][0], jtj[1][1] * (T::one() + lambda)],
                ]);
                let step = solve(&a, &jtr, T::lit(1e-300).max(T::min_positive_value()));
                if let Some(d) = step {
                    let cand = self.clamp([p[0] + d[0], p[1] + d[1]]);
                    let cand_sse = self.sse(cand);
                    if cand_sse.is_finite() && cand_sse <= sse {
                        let moved = (cand[0] - p[0]).abs() + (cand[1] - p[1]).abs();
                        p = cand;
                        let improvement = sse - cand_sse;
                        sse = cand_sse;
                        lambda = (lambda / T::lit(3.0)).max(T::lit(1e-12));
                        accepted = true;
                        if moved <= T::epsilon() * T::lit(4.0)
                            || improvement <= T::epsilon() * sse
                        {
                            let (_, jtr) = self.normal_equations(p);
                            converged = self.projected_gradient(p, jtr) <= tol;
                            return FitResult {
                                theta: CtrlTheta::from_ln(p),
                                residual_sse: sse,
                                iterations,
                                converged,
                            };
                        }
                        break;
                    }
                }
                lambda *= T::lit(4.0);
            }
            if !accepted {
                let (_, jtr) = self.normal_equations(p);
                converged = self.projected_gradient(p, jtr) <= tol;
                break;
            }
        }
        FitResult {
            theta: CtrlTheta::from_ln(p),
            residual_sse: sse,
            iterations,
            converged,
        }
    }
}

/// Least-squares fit of the exponential-saturation curve to `(spend, return)`
/// pairs, Levenberg–Marquardt in log-parameters with multi-start over κ.
pub fn fit_exp_saturation<T: Scalar>(obs: &[(T, T)]) -> Result<FitResult<T>> {
    fit_exp_saturation_with(obs, &FitOptions::default())
}

pub fn fit_exp_saturation_with<T: Scalar>(
    obs: &[(T, T)],
    opts: &FitOptions,
) -> Result<FitResult<T>> {
    if obs.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 observations, got {}",
            obs.len()
        )));
    }
    if obs
        .iter()
        .any(|&(s, r)| !(s.is_finite() && r.is_finite()) || s < T::zero())
    {
        return Err(domain("observations must be finite with nonnegative spend"));
    }
    let s_min = obs.iter().fold(T::infinity(), |m, o| m.min(o.0));
    let s_max = obs.iter().fold(T::neg_infinity(), |m, o| m.max(o.0));
    if !(s_max > s_min) {
        return Err(Error::NonIdentifiable("all spends are identical".into()));
    }
    let r_max = obs.iter().fold(T::neg_infinity(), |m, o| m.max(o.1));
    if !(r_max > T::zero()) {
        return Err(Error::NonIdentifiable(
            "no positive returns: rho_max collapses to the zero boundary".into(),
        ));
    }
    let n = T::from_count(obs.len());
    let s_bar = obs.iter().map(|o| o.0).sum::<T>() / n;
    let r_bar = obs.iter().map(|o| o.1).sum::<T>() / n;
    let rho0 = T::lit(1.2) * r_max;
    let kappa0 = if r_bar > T::zero() && s_bar > T::zero() {
        -(-(r_bar / rho0)).ln_1p() / s_bar
    } else {
        T::one() / s_max
    };
    let problem = Problem {
        obs,
        lo: [(T::lit(1e-9) * r_max).ln(), T::lit(KAPPA_MIN).ln()],
        hi: [(T::lit(100.0) * r_max).ln(), T::lit(KAPPA_MAX).ln()],
    };
    let sum_sq = obs.iter().map(|o| o.1 * o.1).sum::<T>();
    let grad_scale = sum_sq.max(T::min_positive_value());
    let mut best: Option<FitResult<T>> = None;
    for &mult in opts.kappa_starts {
        let start = [rho0.ln(), (kappa0 * T::lit(mult)).ln()];
        let fit = problem.run(start, opts, grad_scale);
        let better = match &best {
            None => true,
            Some(b) => fit.residual_sse < b.residual_sse,
        };
        if better {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one start"))
}

/// Per-week parameters identified from sliding windows.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RollingIdentification<T = f64> {
    pub thetas: Vec<(i64, CtrlTheta<T>)>,
    /// Weeks whose window fit failed, with the reason.
    pub skipped: Vec<(i64, String)>,
}

impl<T: Scalar> RollingIdentification<T> {
    /// Writes `week,rho_max,kappa` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "week,rho_max,kappa")?;
        for (w, th) in &self.thetas {
            writeln!(out, "{w},{},{}", th.rho_max, th.kappa)?;
        }
        Ok(())
    }
}

/// True when the window does not identify κ: a parameter sits on its box
/// constraint, or the curve is flat over the observed spends.
fn at_bound<T: Scalar>(theta: &CtrlTheta<T>, obs: &[(T, T)]) -> bool {
    let r_max = obs.iter().fold(T::zero(), |m, o| m.max(o.1));
    let s_min = obs.iter().fold(T::infinity(), |m, o| m.min(o.0));
    let near = |x: T, b: T| ((x / b).ln()).abs() < T::lit(1e-6);
    near(theta.kappa, T::lit(KAPPA_MIN))
        || near(theta.kappa, T::lit(KAPPA_MAX))
        || near(theta.rho_max, T::lit(100.0) * r_max)
        || theta.kappa * s_min > T::lit(SATURATED_KS)
}

/// Least-squares scale for a fixed κ: `Σ r g / Σ g²` with `g = 1 − e^{−κs}`.
fn fit_rho_given_kappa<T: Scalar>(obs: &[(T, T)], kappa: T) -> Option<CtrlTheta<T>> {
    let (num, den) = obs.iter().fold((T::zero(), T::zero()), |(a, b), &(s, r)| {
        let g = -(-kappa * s).exp_m1();
        (a + r * g, b + g * g)
    });
    CtrlTheta::new(num / den, kappa).ok()
}

/// Fits the curve on a centered window around every week of `weekly`
/// (`(week, spend, return)` triples), truncating windows at the ends of the
/// series. A window as wide as the whole series yields one shared fit.
/// Windows whose fit runs into a parameter bound do not identify κ; they keep
/// the κ of a fit on the whole series and refit only ρ_max.
pub fn rolling_identify<T: Scalar>(
    weekly: &[(i64, T, T)],
    window_weeks: usize,
) -> Result<RollingIdentification<T>> {
    if window_weeks < 3 {
        return Err(domain("window_weeks must be at least 3"));
    }
    let n = weekly.len();
    if n < window_weeks {
        return Err(Error::InsufficientData(format!(
            "history has {n} weeks, window needs {window_weeks}"
        )));
    }
    let pairs: Vec<(T, T)> = weekly.iter().map(|&(_, s, r)| (s, r)).collect();
    let mut out = RollingIdentification::default();
    let mut global: Option<Result<CtrlTheta<T>>> = None;
    if window_weeks >= n {
        match fit_exp_saturation(&pairs) {
            Ok(fit) => out.thetas = weekly.iter().map(|w| (w.0, fit.theta)).collect(),
            Err(e) => out.skipped = weekly.iter().map(|w| (w.0, e.to_string())).collect(),
        }
        return Ok(out);
    }
    let before = window_weeks / 2;
    let after = window_weeks - 1 - before;
    for i in 0..n {
        let lo = i.saturating_sub(before);
        let hi = (i + after).min(n - 1);
        match fit_exp_saturation(&pairs[lo..=hi]) {
            Ok(fit) if fit.theta.validate().is_err() => {
                out.skipped.push((weekly[i].0, "invalid fitted parameters".into()))
            }
            Ok(fit) if at_bound(&fit.theta, &pairs[lo..=hi]) => {
                if global.is_none() {
                    global = Some(fit_exp_saturation(&pairs).map(|f| f.theta));
                }
                match global.as_ref().expect("just set") {
                    Ok(g) => match fit_rho_given_kappa(&pairs[lo..=hi], g.kappa) {
                        Some(th) => out.thetas.push((weekly[i].0, th)),
                        None => out.skipped.push((weekly[i].0, "no positive scale at the shared kappa".into())),
                    },
                    Err(e) => out.skipped.push((weekly[i].0, format!("kappa not identified: {e}"))),
                }
            }
            Ok(fit) => out.thetas.push((weekly[i].0, fit.theta)),
            Err(e) => out.skipped.push((weekly[i].0, e.to_string())),
        }
    }
    Ok(out)
}
