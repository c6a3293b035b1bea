use serde::{Deserialize, Serialize};

use super::ThetaForecast;
use crate::env::week_of_quarter;
use crate::error::{domain, Error, Result};
use crate::linalg::{least_squares, Matrix};
use crate::response::CtrlTheta;
use crate::scalar::Scalar;

/// Log-linear trend plus week-of-quarter effects, fitted per parameter
/// (`[ln ρ_max, ln κ]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalModel<T = f64> {
    pub weeks_per_quarter: usize,
    pub intercepts: [T; 2],
    /// Slope per week.
    pub trends: [T; 2],
    /// Offsets indexed by week of quarter − 1; each row sums to zero.
    pub week_effects: [Vec<T>; 2],
    pub sse: [T; 2],
    pub n: usize,
}

impl<T: Scalar> SeasonalModel<T> {
    /// Fitted `[ln ρ_max, ln κ]` at a week key.
    pub fn log_at(&self, week: i64) -> [T; 2] {
        let w = T::lit(week as f64);
        let q = week_of_quarter(week, self.weeks_per_quarter) - 1;
        [0, 1].map(|c| self.intercepts[c] + self.trends[c] * w + self.week_effects[c][q])
    }
}

/// Row `[1, w − w̄, effect codes…]`: column `1 + j` is `+1` in week of
/// quarter `j + 1`, `−1` in the last week of quarter.
fn design_row<T: Scalar>(week: i64, centre: f64, wpq: usize) -> Vec<T> {
    let mut row = vec![T::zero(); wpq + 1];
    row[0] = T::one();
    row[1] = T::lit(week as f64 - centre);
    let q = week_of_quarter(week, wpq);
    if q == wpq {
        for v in &mut row[2..] {
            *v = -T::one();
        }
    } else {
        row[1 + q] = T::one();
    }
    row
}

/// OLS of `ln θ_w` on `[1, w, week-of-quarter effects]` per parameter.
pub fn seasonal_fit<T: Scalar>(
    identified: &[(i64, CtrlTheta<T>)],
    weeks_per_quarter: usize,
) -> Result<SeasonalModel<T>> {
    if weeks_per_quarter < 2 {
        return Err(domain("weeks_per_quarter must be at least 2"));
    }
    let n = identified.len();
    let (first, last) = match (identified.first(), identified.last()) {
        (Some(a), Some(b)) => (a.0, b.0),
        _ => return Err(Error::InsufficientData("no identified parameters".into())),
    };
    let span = (last - first + 1).max(0) as usize;
    if span < 2 * weeks_per_quarter || n < weeks_per_quarter + 2 {
        return Err(Error::RankDeficient(format!(
            "seasonal regression needs two full quarters, got {n} points spanning {span} weeks"
        )));
    }
    let centre = identified.iter().map(|p| p.0 as f64).sum::<f64>() / n as f64;
    let rows: Vec<Vec<T>> = identified
        .iter()
        .map(|p| design_row(p.0, centre, weeks_per_quarter))
        .collect();
    let x = Matrix::from_rows(&rows);
    let mut model = SeasonalModel {
        weeks_per_quarter,
        intercepts: [T::zero(); 2],
        trends: [T::zero(); 2],
        week_effects: [vec![T::zero(); weeks_per_quarter], vec![T::zero(); weeks_per_quarter]],
        sse: [T::zero(); 2],
        n,
    };
    for c in 0..2 {
        let y: Vec<T> = identified.iter().map(|p| p.1.ln()[c]).collect();
        let beta = least_squares(&x, &y, T::lit(1e-10).max(T::epsilon() * T::lit(64.0)))
            .ok_or_else(|| Error::RankDeficient("seasonal design matrix is singular".into()))?;
        model.trends[c] = beta[1];
        model.intercepts[c] = beta[0] - beta[1] * T::lit(centre);
        let mut last = T::zero();
        for j in 0..weeks_per_quarter - 1 {
            model.week_effects[c][j] = beta[2 + j];
            last -= beta[2 + j];
        }
        model.week_effects[c][weeks_per_quarter - 1] = last;
        let fitted = x.mul_vec(&beta);
        model.sse[c] = fitted.iter().zip(&y).map(|(f, y)| (*f - *y) * (*f - *y)).sum();
    }
    Ok(model)
}

/// `θ̂_{τ+h} = exp(β₀ + β₁(τ+h) + effect[woq(τ+h)])`.
pub fn seasonal_predict<T: Scalar>(
    model: &SeasonalModel<T>,
    base_week: i64,
    horizon: usize,
) -> Result<ThetaForecast<T>> {
    let values = (0..horizon as i64)
        .map(|h| CtrlTheta::from_ln(model.log_at(base_week + h)))
        .collect();
    ThetaForecast::new(base_week, values)
}
