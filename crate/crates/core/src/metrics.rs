//! Model scoring: normalised mean squared error and joint log-likelihood.

use ndarray::ArrayView2;

use crate::beta::row_kernel;
use crate::error::{Error, Result};

/// Per-turbine score entry. `observed` marks training membership.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub turbine_id: String,
    pub observed: bool,
    pub nmse: f64,
    pub jll: f64,
}

/// Normalised mean squared error: `100 * sum((y - y_hat)^2) / (N * var(y))`
/// with the population variance, so predicting the mean scores exactly 100
/// and a perfect prediction scores 0.
pub fn nmse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    if y.is_empty() || y.len() != y_hat.len() {
        return Err(Error::dimension(format!(
            "nmse needs equal nonzero lengths, got {} and {}",
            y.len(),
            y_hat.len()
        )));
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    // N * population variance, kept as a plain sum of squares so the mean
    // predictor scores exactly 100.
    let denom: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if denom == 0.0 {
        return Err(Error::domain(
            "nmse undefined: the measured data have zero variance",
        ));
    }
    let sse: f64 = y
        .iter()
        .zip(y_hat.iter())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok(100.0 * sse / denom)
}

/// Joint log-likelihood of test targets under per-draw beta parameters,
/// averaged over the `S` posterior draws: rows of `mu_draws`/`phi_draws`
/// are draws, columns are test points.
pub fn jll(
    y_test: &[f64],
    mu_draws: ArrayView2<'_, f64>,
    phi_draws: ArrayView2<'_, f64>,
) -> Result<f64> {
    let s = mu_draws.nrows();
    let n = y_test.len();
    if s == 0 || n == 0 {
        return Err(Error::dimension("jll needs at least one draw and one row"));
    }
    if mu_draws.dim() != phi_draws.dim() || mu_draws.ncols() != n {
        return Err(Error::dimension(format!(
            "jll shape mismatch: y has {n} rows, mu {:?}, phi {:?}",
            mu_draws.dim(),
            phi_draws.dim()
        )));
    }
    for (i, &v) in y_test.iter().enumerate() {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::domain(format!(
                "test target at row {i} is {v}; squeeze boundary values before scoring"
            )));
        }
    }
    let ln_y: Vec<f64> = y_test.iter().map(|v| v.ln()).collect();
    let ln_1my: Vec<f64> = y_test.iter().map(|v| (1.0 - v).ln()).collect();
    let mut total = 0.0;
    for d in 0..s {
        for i in 0..n {
            let (ll, _, _) = row_kernel(ln_y[i], ln_1my[i], mu_draws[(d, i)], phi_draws[(d, i)]);
            total += ll;
        }
    }
    Ok(total / s as f64)
}

/// Write per-turbine rows plus aggregate means per observed/unobserved
/// group, matching the dashed mean lines of the score figures.
pub fn write_scores_csv<W: std::io::Write>(rows: &[ScoreRow], mut w: W) -> Result<()> {
    writeln!(w, "turbine_id,observed,nmse,jll")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.turbine_id, r.observed, r.nmse, r.jll)?;
    }
    for (label, observed) in [("MEAN[observed]", true), ("MEAN[unobserved]", false)] {
        let group: Vec<&ScoreRow> = rows.iter().filter(|r| r.observed == observed).collect();
        if group.is_empty() {
            continue;
        }
        let n = group.len() as f64;
        let nmse = group.iter().map(|r| r.nmse).sum::<f64>() / n;
        let jll = group.iter().map(|r| r.jll).sum::<f64>() / n;
        writeln!(w, "{label},{observed},{nmse},{jll}")?;
    }
    Ok(())
}
