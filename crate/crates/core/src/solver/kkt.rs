use serde::{Deserialize, Serialize};

use super::HorizonProblem;
use crate::error::{Error, Result};
use crate::linalg::{solve, Matrix};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintKind {
    Budget,
    NonNegative(usize),
    RatioLower(usize),
    RatioUpper(usize),
}

/// Linear inequality `Σ coeff_i·b_i ≤ rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint<T> {
    pub kind: ConstraintKind,
    pub coeffs: Vec<(usize, T)>,
    pub rhs: T,
}

impl<T: Scalar> Constraint<T> {
    pub fn slack(&self, b: &[T]) -> T {
        self.rhs - self.coeffs.iter().map(|&(i, a)| a * b[i]).sum::<T>()
    }

    /// Magnitude used to make slacks scale-free.
    fn scale(&self, b: &[T]) -> T {
        let lhs = self
            .coeffs
            .iter()
            .map(|&(i, a)| (a * b[i]).abs())
            .fold(T::zero(), T::max);
        T::one().max(self.rhs.abs()).max(lhs)
    }
}

pub(crate) fn build_constraints<T: Scalar>(p: &HorizonProblem<T>) -> Vec<Constraint<T>> {
    let h = p.horizon();
    let mut out = Vec::with_capacity(3 * h + 1);
    out.push(Constraint {
        kind: ConstraintKind::Budget,
        coeffs: p.weeks.iter().enumerate().map(|(i, w)| (i, w.spend.slope)).collect(),
        rhs: p.budget_cap - p.weeks.iter().map(|w| w.spend.offset).sum::<T>(),
    });
    for i in 0..h {
        out.push(Constraint {
            kind: ConstraintKind::NonNegative(i),
            coeffs: vec![(i, -T::one())],
            rhs: T::zero(),
        });
    }
    if p.bounds_active {
        let (l, u) = (p.lower_ratio, p.upper_ratio);
        for i in 0..h {
            if l > T::zero() {
                out.push(if i == 0 {
                    Constraint {
                        kind: ConstraintKind::RatioLower(0),
                        coeffs: vec![(0, -T::one())],
                        rhs: -l * p.anchor,
                    }
                } else {
                    Constraint {
                        kind: ConstraintKind::RatioLower(i),
                        coeffs: vec![(i - 1, l), (i, -T::one())],
                        rhs: T::zero(),
                    }
                });
            }
            out.push(if i == 0 {
                Constraint {
                    kind: ConstraintKind::RatioUpper(0),
                    coeffs: vec![(0, T::one())],
                    rhs: u * p.anchor,
                }
            } else {
                Constraint {
                    kind: ConstraintKind::RatioUpper(i),
                    coeffs: vec![(i, T::one()), (i - 1, -u)],
                    rhs: T::zero(),
                }
            });
        }
    }
    out
}

const FEAS_TOL: f64 = 1e-6;
const ACTIVE_TOL: f64 = 1e-6;

/// Scaled KKT residual of a feasible candidate: the larger of the
/// stationarity residual `‖∇f − Σ λ_i a_i‖_∞ / max(1, ‖∇f‖_∞)` and the
/// complementarity products `λ_i·slack_i`, with nonnegative multipliers
/// fitted by least squares over the near-active constraints.
pub fn kkt_residual<T: Scalar>(problem: &HorizonProblem<T>, candidate: &[T]) -> Result<T> {
    let h = problem.horizon();
    if candidate.len() != h {
        return Err(Error::Domain(format!(
            "candidate has {} entries, horizon is {h}",
            candidate.len()
        )));
    }
    let cons = build_constraints(problem);
    let violations: Vec<String> = cons
        .iter()
        .filter_map(|c| {
            let s = c.slack(candidate);
            (s < -T::lit(FEAS_TOL) * c.scale(candidate))
                .then(|| format!("{:?} violated by {}", c.kind, -s))
        })
        .collect();
    if !violations.is_empty() {
        return Err(Error::Infeasible { violations });
    }
    let grad: Vec<T> = problem
        .weeks
        .iter()
        .zip(candidate)
        .map(|(w, &b)| w.derivatives(b).0)
        .collect();
    let gnorm = grad.iter().fold(T::zero(), |m, g| m.max(g.abs()));
    let gscale = gnorm.max(T::one());
    let mut active: Vec<&Constraint<T>> = cons
        .iter()
        .filter(|c| c.slack(candidate) <= T::lit(ACTIVE_TOL) * c.scale(candidate))
        .collect();

    // nonnegative least squares by dropping the most negative multiplier
    let mut lambdas: Vec<T> = Vec::new();
    loop {
        if active.is_empty() {
            lambdas.clear();
            break;
        }
        let k = active.len();
        let mut a = Matrix::zeros(h, k);
        for (j, c) in active.iter().enumerate() {
            for &(i, v) in &c.coeffs {
                a.add_to(i, j, v);
            }
        }
        let mut gram = a.gram();
        let ridge = (0..k).map(|j| gram.get(j, j)).fold(T::zero(), T::max) * T::lit(1e-12);
        for j in 0..k {
            gram.add_to(j, j, ridge.max(T::min_positive_value()));
        }
        let rhs = a.t_mul_vec(&grad);
        let Some(sol) = solve(&gram, &rhs, T::zero()) else {
            lambdas.clear();
            active.clear();
            break;
        };
        let (worst, min) = sol
            .iter()
            .enumerate()
            .fold((0, T::zero()), |(wi, wv), (i, &v)| if v < wv { (i, v) } else { (wi, wv) });
        if min < T::zero() {
            active.remove(worst);
            continue;
        }
        lambdas = sol;
        break;
    }

    let mut resid = grad.clone();
    for (c, &lam) in active.iter().zip(&lambdas) {
        for &(i, v) in &c.coeffs {
            resid[i] -= lam * v;
        }
    }
    let stationarity = resid.iter().fold(T::zero(), |m, r| m.max(r.abs())) / gscale;
    let bscale = candidate.iter().fold(T::one(), |m, b| m.max(b.abs()));
    let complementarity = active
        .iter()
        .zip(&lambdas)
        .map(|(c, &lam)| lam * c.slack(candidate).max(T::zero()) / (gscale * bscale))
        .fold(T::zero(), T::max);
    Ok(stationarity.max(complementarity))
}
