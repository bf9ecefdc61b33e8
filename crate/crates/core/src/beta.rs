//! Beta likelihood with mean/precision parameterization, logit and log links
//! over a design matrix, and the analytic log-likelihood gradient.

use ndarray::{Array1, ArrayView1};

use crate::error::{Error, Result};
use crate::special::{digamma_unchecked, expit, log_gamma_unchecked, Probability};
use crate::splines::DesignMatrix;

/// Beta distribution in the (mean, precision) parameterization: the shape
/// parameters are `a = mu * phi` and `b = (1 - mu) * phi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaParams {
    mu: Probability,
    phi: f64,
}

impl BetaParams {
    pub fn new(mu: Probability, phi: f64) -> Result<Self> {
        if !(phi > 0.0) || !phi.is_finite() {
            return Err(Error::domain(format!("precision must be positive, got {phi}")));
        }
        Ok(BetaParams { mu, phi })
    }

    pub fn mu(&self) -> f64 {
        self.mu.get()
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn shape_a(&self) -> f64 {
        self.mu.get() * self.phi
    }

    pub fn shape_b(&self) -> f64 {
        (1.0 - self.mu.get()) * self.phi
    }
}

/// Coefficient pair for the mean (`eta`) and precision (`zeta`) linear
/// predictors over a shared design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionCoefficients {
    pub eta: Array1<f64>,
    pub zeta: Array1<f64>,
}

impl RegressionCoefficients {
    pub fn new(eta: Array1<f64>, zeta: Array1<f64>) -> Result<Self> {
        if eta.len() != zeta.len() {
            return Err(Error::dimension(format!(
                "eta has length {}, zeta has length {}",
                eta.len(),
                zeta.len()
            )));
        }
        if eta.iter().chain(zeta.iter()).any(|v| !v.is_finite()) {
            return Err(Error::domain("coefficients must be finite".to_string()));
        }
        Ok(RegressionCoefficients { eta, zeta })
    }

    pub fn width(&self) -> usize {
        self.eta.len()
    }
}

/// Log-density of the beta distribution at `y`.
pub fn beta_logpdf(y: Probability, params: &BetaParams) -> f64 {
    let (ll, _, _) = row_kernel(
        y.get().ln(),
        (1.0 - y.get()).ln(),
        params.mu(),
        params.phi(),
    );
    ll
}

/// Mean and variance implied by the parameterization.
pub fn beta_mean_var(params: &BetaParams) -> (f64, f64) {
    let mu = params.mu();
    (mu, mu * (1.0 - mu) / (1.0 + params.phi()))
}

/// Mean link: elementwise logistic of the linear predictor `X * eta`.
/// Every output is strictly inside (0, 1).
pub fn link_mean(x: &DesignMatrix, eta: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    if eta.len() != x.ncols() {
        return Err(Error::dimension(format!(
            "eta length {} does not match design width {}",
            eta.len(),
            x.ncols()
        )));
    }
    let f1 = x.values().dot(&eta);
    Ok(f1.mapv(|v| expit(v).get()))
}

/// Precision link: elementwise exponential of `X * zeta`, strictly positive.
pub fn link_precision(x: &DesignMatrix, zeta: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    if zeta.len() != x.ncols() {
        return Err(Error::dimension(format!(
            "zeta length {} does not match design width {}",
            zeta.len(),
            x.ncols()
        )));
    }
    let f2 = x.values().dot(&zeta);
    let phi = f2.mapv(f64::exp);
    if let Some(row) = phi.iter().position(|v| !v.is_finite()) {
        return Err(Error::domain(format!(
            "precision link overflowed at row {row} (linear predictor {})",
            f2[row]
        )));
    }
    Ok(phi)
}

/// Shared kernel: log-density plus its derivatives with respect to the two
/// linear predictors, given precomputed `ln y` and `ln (1-y)`.
#[inline]
pub(crate) fn row_kernel(ln_y: f64, ln_1my: f64, mu: f64, phi: f64) -> (f64, f64, f64) {
    let a = mu * phi;
    let b = (1.0 - mu) * phi;
    let ll = log_gamma_unchecked(phi) - log_gamma_unchecked(a) - log_gamma_unchecked(b)
        + (a - 1.0) * ln_y
        + (b - 1.0) * ln_1my;
    let psi_a = digamma_unchecked(a);
    let psi_b = digamma_unchecked(b);
    let psi_phi = digamma_unchecked(phi);
    let d_f1 = phi * mu * (1.0 - mu) * ((ln_y - ln_1my) - psi_a + psi_b);
    let d_f2 = phi * (mu * (ln_y + psi_phi - psi_a) + (1.0 - mu) * (ln_1my + psi_phi - psi_b));
    (ll, d_f1, d_f2)
}

fn validate_targets(y: &[f64]) -> Result<()> {
    for (i, &v) in y.iter().enumerate() {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::domain(format!(
                "target at row {i} is {v}, outside the open interval (0, 1)"
            )));
        }
    }
    Ok(())
}

fn check_lengths(y: &[f64], x: &DesignMatrix, coeffs: &RegressionCoefficients) -> Result<()> {
    if y.len() != x.nrows() {
        return Err(Error::dimension(format!(
            "{} targets vs {} design rows",
            y.len(),
            x.nrows()
        )));
    }
    if coeffs.width() != x.ncols() {
        return Err(Error::dimension(format!(
            "coefficient width {} vs design width {}",
            coeffs.width(),
            x.ncols()
        )));
    }
    Ok(())
}

/// Sum of row-wise beta log-densities under the two links.
pub fn loglik(y: &[f64], x: &DesignMatrix, coeffs: &RegressionCoefficients) -> Result<f64> {
    check_lengths(y, x, coeffs)?;
    validate_targets(y)?;
    let f1 = x.values().dot(&coeffs.eta);
    let f2 = x.values().dot(&coeffs.zeta);
    let mut total = 0.0;
    for i in 0..y.len() {
        let mu = expit(f1[i]).get();
        let phi = f2[i].exp();
        if !phi.is_finite() {
            return Err(Error::domain(format!(
                "precision link overflowed at row {i} (linear predictor {})",
                f2[i]
            )));
        }
        let (ll, _, _) = row_kernel(y[i].ln(), (1.0 - y[i]).ln(), mu, phi);
        total += ll;
    }
    Ok(total)
}

/// Analytic gradient of [`loglik`] with respect to `eta` and `zeta`.
pub fn grad_loglik(
    y: &[f64],
    x: &DesignMatrix,
    coeffs: &RegressionCoefficients,
) -> Result<(Array1<f64>, Array1<f64>)> {
    check_lengths(y, x, coeffs)?;
    validate_targets(y)?;
    let f1 = x.values().dot(&coeffs.eta);
    let f2 = x.values().dot(&coeffs.zeta);
    let n = y.len();
    let mut g1 = Array1::zeros(n);
    let mut g2 = Array1::zeros(n);
    for i in 0..n {
        let mu = expit(f1[i]).get();
        let phi = f2[i].exp();
        if !phi.is_finite() {
            return Err(Error::domain(format!(
                "precision link overflowed at row {i} (linear predictor {})",
                f2[i]
            )));
        }
        let (_, d1, d2) = row_kernel(y[i].ln(), (1.0 - y[i]).ln(), mu, phi);
        g1[i] = d1;
        g2[i] = d2;
    }
    let values = x.values();
    let xt = values.t();
    Ok((xt.dot(&g1), xt.dot(&g2)))
}

/// Map targets into the open unit interval: `y' = (y (N - 1) + 1/2) / N`
/// with `N` the dataset size. Applied once per dataset before fitting or
/// likelihood scoring so capped observations at exactly 0 or 1 become
/// interior.
pub fn squeeze_unit_interval(y: &mut [f64]) {
    let n = y.len() as f64;
    if n == 0.0 {
        return;
    }
    for v in y.iter_mut() {
        *v = (*v * (n - 1.0) + 0.5) / n;
    }
}
