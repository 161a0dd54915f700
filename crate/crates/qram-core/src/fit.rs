//! Least-squares fits used by the scaling analyses: a log-log power law
//! y = c · x^a, and plain linear regression with R².

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// y = prefactor · x^exponent fitted by least squares in log-log space.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub prefactor: f64,
    pub r_squared: f64,
}

impl PowerLawFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.prefactor * x.powf(self.exponent)
    }
}

/// Ordinary least squares of y on x. Returns (slope, intercept, R²).
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(CoreError::numerical(
            "linear fit needs >= 2 matched points".to_string(),
        ));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(CoreError::numerical("degenerate x values in fit".to_string()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok((slope, intercept, r_squared))
}

/// Fit y = c · x^a over strictly positive points.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLawFit> {
    if points.len() < 3 {
        return Err(CoreError::numerical(
            "power-law fit needs >= 3 points".to_string(),
        ));
    }
    if let Some(&(x, y)) = points.iter().find(|(x, y)| *x <= 0.0 || *y <= 0.0) {
        return Err(CoreError::numerical(format!(
            "non-positive point ({x}, {y}) in power-law fit input"
        )));
    }
    let xs: Vec<f64> = points.iter().map(|(x, _)| x.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, y)| y.ln()).collect();
    let (slope, intercept, r_squared) = linear_fit(&xs, &ys)?;
    Ok(PowerLawFit { exponent: slope, prefactor: intercept.exp(), r_squared })
}

/// Largest integer n >= 1 whose fitted infidelity stays within `eps_max`.
/// Returns 0 when even n = 1 exceeds the budget.
pub fn max_feasible_n(fit: &PowerLawFit, eps_max: f64, n_cap: u32) -> u32 {
    let mut best = 0;
    for n in 1..=n_cap {
        if fit.eval(f64::from(n)) <= eps_max {
            best = n;
        } else if fit.exponent > 0.0 {
            break;
        }
    }
    best
}
