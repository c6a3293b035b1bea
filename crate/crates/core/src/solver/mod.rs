//! Finite-horizon budget planner.
//!
//! Maximizes `Σ_h f_h(ŝ_h(b_h))` over `b ∈ ℝ^H` subject to
//!
//! ```text
//! Σ_h ŝ_h(b_h) ≤ cap,    b_h ≥ 0,
//! (1−γ_L)·b_{h−1} ≤ b_h ≤ (1+γ_U)·b_{h−1},   b_{−1} = anchor
//! ```
//!
//! with a logarithmic-barrier interior method: damped Newton steps on the
//! barrier subproblem, barrier weight shrunk by 0.2 per outer iteration.
//! Every constraint is linear and every `ŝ_h` affine, so for concave `f_h`
//! any KKT point is a global maximizer; [`kkt_residual`] certifies it.

mod kkt;

pub use kkt::{kkt_residual, Constraint, ConstraintKind};

use serde::{Deserialize, Serialize};

use crate::env::{richards_derivatives, richards_unchecked, EnvTheta};
use crate::error::{Error, Result};
use crate::linalg::{solve, Matrix};
use crate::response::{exp_sat_unchecked, CtrlTheta};
use crate::scalar::Scalar;

/// Predicted return of one week as a function of its spend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeekReturn<T = f64> {
    /// `gain · ρ_max(1 − e^{−κ x})`
    ExpSaturation { theta: CtrlTheta<T>, gain: T },
    /// `days · efficiency · A(1 − e^{−k x/days})^ν`: weekly spend spread evenly over days.
    Richards {
        theta: EnvTheta<T>,
        efficiency: T,
        days: T,
    },
    /// `linear·x − ½·quad·x²`
    Quadratic { linear: T, quad: T },
}

impl<T: Scalar> WeekReturn<T> {
    pub fn value(&self, x: T) -> T {
        match *self {
            WeekReturn::ExpSaturation { theta, gain } => gain * exp_sat_unchecked(x, &theta),
            WeekReturn::Richards {
                theta,
                efficiency,
                days,
            } => days * efficiency * richards_unchecked((x / days).max(T::zero()), &theta),
            WeekReturn::Quadratic { linear, quad } => linear * x - T::lit(0.5) * quad * x * x,
        }
    }

    /// First and second derivative in `x`.
    pub fn derivatives(&self, x: T) -> (T, T) {
        match *self {
            WeekReturn::ExpSaturation { theta, gain } => {
                let e = (-theta.kappa * x).exp();
                let d1 = gain * theta.rho_max * theta.kappa * e;
                (d1, -theta.kappa * d1)
            }
            WeekReturn::Richards {
                theta,
                efficiency,
                days,
            } => {
                let (d1, d2) = richards_derivatives((x / days).max(T::zero()), &theta);
                (efficiency * d1, efficiency * d2 / days)
            }
            WeekReturn::Quadratic { linear, quad } => (linear - quad * x, -quad),
        }
    }

    /// S-shaped curves are convex near zero; the solver then relies on
    /// curvature clamping and checks concavity only at the returned point.
    pub fn is_sigmoidal(&self) -> bool {
        matches!(self, WeekReturn::Richards { theta, .. } if theta.shape > T::one())
    }
}

/// Affine spend predictor `ŝ(b) = slope·b + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpendMap<T = f64> {
    pub slope: T,
    pub offset: T,
}

impl<T: Scalar> SpendMap<T> {
    pub fn identity() -> Self {
        Self {
            slope: T::one(),
            offset: T::zero(),
        }
    }

    #[inline]
    pub fn apply(&self, b: T) -> T {
        self.slope * b + self.offset
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeekTerm<T = f64> {
    pub ret: WeekReturn<T>,
    pub spend: SpendMap<T>,
}

impl<T: Scalar> WeekTerm<T> {
    pub fn value(&self, b: T) -> T {
        self.ret.value(self.spend.apply(b))
    }

    /// Derivatives in `b`.
    pub fn derivatives(&self, b: T) -> (T, T) {
        let (d1, d2) = self.ret.derivatives(self.spend.apply(b));
        (self.spend.slope * d1, self.spend.slope * self.spend.slope * d2)
    }
}

/// One finite-horizon planning instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonProblem<T = f64> {
    pub weeks: Vec<WeekTerm<T>>,
    pub budget_cap: T,
    /// Previous week's planned budget `b_{τ−1}`.
    pub anchor: T,
    /// `1 − γ_L`
    pub lower_ratio: T,
    /// `1 + γ_U`
    pub upper_ratio: T,
    pub bounds_active: bool,
}

impl<T: Scalar> HorizonProblem<T> {
    pub fn horizon(&self) -> usize {
        self.weeks.len()
    }

    pub fn objective(&self, b: &[T]) -> T {
        self.weeks.iter().zip(b).map(|(w, &x)| w.value(x)).sum()
    }

    pub fn total_spend(&self, b: &[T]) -> T {
        self.weeks.iter().zip(b).map(|(w, &x)| w.spend.apply(x)).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Domain(format!("horizon problem: {m}")));
        if self.weeks.is_empty() {
            return bad("horizon must be at least 1");
        }
        if !(self.budget_cap >= T::zero() && self.budget_cap.is_finite()) {
            return bad("budget_cap must be finite and >= 0");
        }
        if self.bounds_active {
            if !(self.anchor >= T::zero() && self.anchor.is_finite()) {
                return bad("anchor must be finite and >= 0");
            }
            if !(self.lower_ratio >= T::zero()
                && self.lower_ratio <= T::one()
                && self.upper_ratio >= T::one()
                && self.upper_ratio.is_finite())
            {
                return bad("ratios must satisfy 0 <= lower <= 1 <= upper");
            }
        }
        for w in &self.weeks {
            if !(w.spend.slope > T::zero() && w.spend.offset >= T::zero()) {
                return bad("spend maps need slope > 0 and offset >= 0");
            }
        }
        Ok(())
    }

    /// Minimum total spend any ratio-feasible plan must incur.
    fn min_chain_spend(&self) -> T {
        let mut level = self.anchor;
        let mut total = T::zero();
        for w in &self.weeks {
            level *= self.lower_ratio;
            total += w.spend.apply(level);
        }
        total
    }

    fn offsets(&self) -> T {
        self.weeks.iter().map(|w| w.spend.offset).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    /// Lower ratio bounds could not be met within the budget and were dropped.
    RelaxedFeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonSolution<T = f64> {
    pub budgets: Vec<T>,
    pub objective: T,
    pub kkt_residual: T,
    pub status: SolveStatus,
    pub newton_steps: usize,
    /// The problem actually solved (lower bounds removed when relaxed).
    pub solved: HorizonProblem<T>,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub kkt_tol: f64,
    pub outer_iterations: usize,
    pub mu_factor: f64,
    pub max_newton_steps: usize,
    /// Relative barrier duality gap `m·μ / max(1, |f|)` required to stop.
    pub gap_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            kkt_tol: 1e-6,
            outer_iterations: 8,
            mu_factor: 0.2,
            max_newton_steps: 200,
            gap_tol: 1e-11,
        }
    }
}

pub fn solve_horizon<T: Scalar>(problem: &HorizonProblem<T>) -> Result<HorizonSolution<T>> {
    solve_horizon_with(problem, &SolverOptions::default())
}

pub fn solve_horizon_with<T: Scalar>(
    problem: &HorizonProblem<T>,
    opts: &SolverOptions,
) -> Result<HorizonSolution<T>> {
    problem.validate()?;
    probe_concavity(problem)?;
    let h = problem.horizon();
    let eps = T::epsilon();
    let room = problem.budget_cap - problem.offsets();
    if room < T::zero() {
        return Err(Error::Infeasible {
            violations: vec![format!(
                "spend-map offsets {} exceed budget cap {}",
                problem.offsets(),
                problem.budget_cap
            )],
        });
    }

    let mut work = problem.clone();
    let mut relaxed = false;
    if work.bounds_active && work.lower_ratio > T::zero() {
        let min_spend = work.min_chain_spend();
        if min_spend >= work.budget_cap * (T::one() - T::lit(1e3) * eps) && min_spend > T::zero() {
            work.lower_ratio = T::zero();
            relaxed = true;
        }
    }

    // degenerate cases with an empty interior: the feasible set is a point
    let scale = work.budget_cap.abs().max(T::one());
    let zero_anchor = work.bounds_active && work.anchor <= eps * scale;
    if room <= eps * scale || zero_anchor {
        return finish(&work, vec![T::zero(); h], relaxed, 0, opts);
    }
    if work.bounds_active && work.upper_ratio - work.lower_ratio <= eps {
        let plan = vec![work.anchor; h];
        if work.total_spend(&plan) <= work.budget_cap {
            return finish(&work, plan, relaxed, 0, opts);
        }
        work.lower_ratio = T::zero();
        relaxed = true;
    }

    let constraints = kkt::build_constraints(&work);
    let mut b = interior_start(&work);
    let slack = |b: &[T]| -> Vec<T> { constraints.iter().map(|c| c.slack(b)).collect() };
    debug_assert!(slack(&b).iter().all(|&s| s > T::zero()), "start not interior");

    let m = T::from_count(constraints.len());
    let grad0: T = work
        .weeks
        .iter()
        .zip(&b)
        .map(|(w, &x)| w.derivatives(x).0.abs() * x.abs())
        .sum();
    let mut mu = if grad0 > T::zero() {
        T::lit(0.1) * grad0 / m
    } else {
        T::lit(1e-3) * work.objective(&b).abs().max(T::one()) / m
    };

    let tol = T::lit(opts.kkt_tol);
    let mut steps = 0usize;
    let mut outer = 0usize;
    loop {
        steps += newton_centering(&work, &constraints, &mut b, mu, opts.max_newton_steps - steps);
        outer += 1;
        if outer >= opts.outer_iterations {
            let res = kkt_residual(&work, &b).unwrap_or(T::infinity());
            let gap = m * mu / work.objective(&b).abs().max(T::one());
            let gap_ok = gap <= T::lit(opts.gap_tol).max(T::lit(1e3) * eps);
            if (res <= tol && gap_ok) || steps >= opts.max_newton_steps || outer >= 60 {
                break;
            }
        }
        if steps >= opts.max_newton_steps {
            break;
        }
        mu *= T::lit(opts.mu_factor);
    }
    for x in b.iter_mut() {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
    finish(&work, b, relaxed, steps, opts)
}

fn finish<T: Scalar>(
    work: &HorizonProblem<T>,
    budgets: Vec<T>,
    relaxed: bool,
    newton_steps: usize,
    opts: &SolverOptions,
) -> Result<HorizonSolution<T>> {
    let kkt = kkt_residual(work, &budgets)?;
    let status = if relaxed {
        SolveStatus::RelaxedFeasible
    } else if kkt <= T::lit(opts.kkt_tol) {
        SolveStatus::Optimal
    } else {
        SolveStatus::MaxIter
    };
    for (i, w) in work.weeks.iter().enumerate() {
        if w.ret.is_sigmoidal() && w.derivatives(budgets[i]).1 > T::zero() && budgets[i] > T::zero()
        {
            log::debug!("week {i}: solution sits on the convex part of an S-shaped return");
        }
    }
    Ok(HorizonSolution {
        objective: work.objective(&budgets),
        budgets,
        kkt_residual: kkt,
        status,
        newton_steps,
        solved: work.clone(),
    })
}

/// Rejects concave-claimed terms that show positive curvature anywhere on
/// `[0, cap]`.
fn probe_concavity<T: Scalar>(problem: &HorizonProblem<T>) -> Result<()> {
    let top = problem.budget_cap.max(T::one());
    for (index, w) in problem.weeks.iter().enumerate() {
        if w.ret.is_sigmoidal() {
            continue;
        }
        for k in 0..=16 {
            let b = top * T::from_count(k) / T::lit(16.0);
            let (d1, d2) = w.derivatives(b);
            let tol = T::lit(1e-9) * (d1.abs() / top.max(T::one()) + T::min_positive_value());
            if d2 > tol {
                return Err(Error::NonConcave {
                    index,
                    at: b.to_f64_lossy(),
                    curvature: d2.to_f64_lossy(),
                });
            }
        }
    }
    Ok(())
}

/// Strictly feasible starting plan: uniform if it clears every bound,
/// otherwise a geometric path inside the ratio chain.
fn interior_start<T: Scalar>(p: &HorizonProblem<T>) -> Vec<T> {
    let h = p.horizon();
    let slopes: T = p.weeks.iter().map(|w| w.spend.slope).sum();
    let room = p.budget_cap - p.offsets();
    let uniform = T::lit(0.9) * room / slopes;
    if !p.bounds_active {
        return vec![uniform; h];
    }
    let (l, u, a) = (p.lower_ratio, p.upper_ratio, p.anchor);
    if l < T::one() && u > T::one() && uniform > l * a && uniform < u * a {
        return vec![uniform; h];
    }
    let path = |r: T| -> Vec<T> {
        let mut level = a;
        (0..h)
            .map(|_| {
                level *= r;
                level
            })
            .collect()
    };
    let spend = |r: T| p.total_spend(&path(r));
    // largest ratio keeping total spend at most 90% of the way from the minimum to the cap
    let target = spend(l) + T::lit(0.9) * (p.budget_cap - spend(l));
    let r_hi = if spend(u) <= target {
        u
    } else {
        let (mut lo, mut hi) = (l, u);
        for _ in 0..200 {
            let mid = T::lit(0.5) * (lo + hi);
            if spend(mid) <= target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    path(T::lit(0.5) * (l + r_hi))
}

/// Damped Newton on the barrier subproblem; returns steps taken.
fn newton_centering<T: Scalar>(
    p: &HorizonProblem<T>,
    cons: &[Constraint<T>],
    b: &mut Vec<T>,
    mu: T,
    budget: usize,
) -> usize {
    let h = p.horizon();
    let barrier = |x: &[T]| -> Option<T> {
        let mut acc = p.objective(x);
        for c in cons {
            let s = c.slack(x);
            if !(s > T::zero()) {
                return None;
            }
            acc += mu * s.ln();
        }
        Some(acc)
    };
    let mut steps = 0;
    while steps < budget {
        steps += 1;
        let mut grad = vec![T::zero(); h];
        let mut hess = Matrix::zeros(h, h);
        for (i, w) in p.weeks.iter().enumerate() {
            let (d1, d2) = w.derivatives(b[i]);
            grad[i] = d1;
            hess.add_to(i, i, d2.min(T::zero()));
        }
        for c in cons {
            let s = c.slack(b);
            for &(i, ai) in &c.coeffs {
                grad[i] -= mu * ai / s;
                for &(j, aj) in &c.coeffs {
                    hess.add_to(i, j, -mu * ai * aj / (s * s));
                }
            }
        }
        let mut neg = Matrix::zeros(h, h);
        for i in 0..h {
            for j in 0..h {
                neg.set(i, j, -hess.get(i, j));
            }
        }
        let Some(dir) = solve(&neg, &grad, T::lit(1e-300).max(T::min_positive_value())) else {
            break;
        };
        let decrement: T = grad.iter().zip(&dir).map(|(g, d)| *g * *d).sum();
        let phi0 = barrier(b).expect("iterate stays interior");
        if decrement <= T::lit(1e-13) * phi0.abs().max(T::one()) {
            break;
        }
        // fraction to boundary
        let mut t_max = T::one();
        for c in cons {
            let ds: T = c.coeffs.iter().map(|&(i, a)| a * dir[i]).sum();
            if ds > T::zero() {
                t_max = t_max.min(T::lit(0.99) * c.slack(b) / ds);
            }
        }
        let mut t = t_max;
        let mut moved = false;
        for _ in 0..60 {
            let cand: Vec<T> = b.iter().zip(&dir).map(|(x, d)| *x + t * *d).collect();
            if let Some(phi) = barrier(&cand) {
                if phi >= phi0 + T::lit(1e-4) * t * decrement {
                    *b = cand;
                    moved = true;
                    break;
                }
            }
            t *= T::lit(0.5);
        }
        if !moved {
            break;
        }
    }
    steps
}
