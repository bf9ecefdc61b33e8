//! Scalar special functions backing the beta likelihood and its gradient.

use crate::error::{Error, Result};

/// A value strictly inside the open unit interval.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Probability(f64);

impl Probability {
    /// Construct from a value in (0, 1).
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value > 0.0 && value < 1.0 {
            Ok(Probability(value))
        } else {
            Err(Error::domain(format!(
                "probability must lie strictly in (0, 1), got {value}"
            )))
        }
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

// Largest f64 below 1 and a safe positive floor; expit saturates to these.
const ONE_INTERIOR: f64 = 1.0 - f64::EPSILON / 2.0;
const ZERO_INTERIOR: f64 = f64::MIN_POSITIVE;

/// Logistic function 1 / (1 + e^{-x}), saturating to the nearest
/// representable interior value instead of 0 or 1.
#[inline]
pub fn expit(x: f64) -> Probability {
    // Branch on sign so the exponential never overflows.
    let p = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    Probability(p.clamp(ZERO_INTERIOR, ONE_INTERIOR))
}

/// Log-odds, the inverse of [`expit`].
#[inline]
pub fn logit(p: Probability) -> f64 {
    let p = p.get();
    (p / (1.0 - p)).ln()
}

// Lanczos approximation with g = 7 and 9 coefficients.
const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEFFS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_7;

/// Natural log of the gamma function for x > 0.
pub fn log_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::domain(format!("log_gamma requires x > 0, got {x}")));
    }
    Ok(log_gamma_unchecked(x))
}

#[inline]
pub(crate) fn log_gamma_unchecked(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection keeps the Lanczos argument away from the pole at 0.
        let sin_pi_x = (std::f64::consts::PI * x).sin();
        (std::f64::consts::PI / sin_pi_x).ln() - log_gamma_unchecked(1.0 - x)
    } else {
        let z = x - 1.0;
        let mut sum = LANCZOS_COEFFS[0];
        for (i, c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
            sum += c / (z + i as f64);
        }
        let t = z + LANCZOS_G + 0.5;
        HALF_LN_TWO_PI + (z + 0.5) * t.ln() - t + sum.ln()
    }
}

// Asymptotic series coefficients -B_{2n}/(2n) for psi(x) ~ ln x - 1/(2x) + sum c_n x^{-2n}.
const DIGAMMA_TAIL: [f64; 7] = [
    -1.0 / 12.0,
    1.0 / 120.0,
    -1.0 / 252.0,
    1.0 / 240.0,
    -1.0 / 132.0,
    691.0 / 32760.0,
    -1.0 / 12.0,
];

/// Digamma function psi(x) = d/dx ln Gamma(x) for x > 0.
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::domain(format!("digamma requires x > 0, got {x}")));
    }
    Ok(digamma_unchecked(x))
}

#[inline]
pub(crate) fn digamma_unchecked(x: f64) -> f64 {
    // Shift into the asymptotic regime, then evaluate the tail series.
    let mut acc = 0.0;
    let mut z = x;
    while z < 10.0 {
        acc -= 1.0 / z;
        z += 1.0;
    }
    let inv2 = 1.0 / (z * z);
    let mut tail = 0.0;
    let mut pow = inv2;
    for c in DIGAMMA_TAIL {
        tail += c * pow;
        pow *= inv2;
    }
    acc + z.ln() - 0.5 / z + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference log-gamma: recurrence shift to z >= 30, then a Stirling series
    // with Bernoulli terms through z^-13. Independent of the Lanczos route.
    fn log_gamma_oracle(x: f64) -> f64 {
        let mut shift = 0.0;
        let mut z = x;
        while z < 30.0 {
            shift -= z.ln();
            z += 1.0;
        }
        let series = [
            1.0 / 12.0,
            -1.0 / 360.0,
            1.0 / 1260.0,
            -1.0 / 1680.0,
            1.0 / 1188.0,
            -691.0 / 360_360.0,
            7.0 / 1092.0,
        ];
        let inv = 1.0 / z;
        let inv2 = inv * inv;
        let mut tail = 0.0;
        let mut pow = inv;
        for c in series {
            tail += c * pow;
            pow *= inv2;
        }
        shift + (z - 0.5) * z.ln() - z + HALF_LN_TWO_PI + tail
    }

    // Reference digamma: same family of series but a much deeper shift, so the
    // truncation behaviour differs from the implementation under test.
    fn digamma_oracle(x: f64) -> f64 {
        let mut acc = 0.0;
        let mut z = x;
        while z < 50.0 {
            acc -= 1.0 / z;
            z += 1.0;
        }
        let series = [
            -1.0 / 12.0,
            1.0 / 120.0,
            -1.0 / 252.0,
            1.0 / 240.0,
            -1.0 / 132.0,
            691.0 / 32760.0,
        ];
        let inv2 = 1.0 / (z * z);
        let mut tail = 0.0;
        let mut pow = inv2;
        for c in series {
            tail += c * pow;
            pow *= inv2;
        }
        acc + z.ln() - 0.5 / z + tail
    }

    fn assert_close(actual: f64, expected: f64, tol: f64) {
        let scale = expected.abs().max(1.0);
        assert!(
            (actual - expected).abs() <= tol * scale,
            "got {actual}, want {expected} (tol {tol})"
        );
    }

    #[test]
    fn expit_at_zero_is_half() {
        assert_eq!(expit(0.0).get(), 0.5);
    }

    #[test]
    fn expit_symmetry_identity() {
        let x = 2.0;
        assert_close(expit(x).get() + expit(-x).get(), 1.0, 1e-15);
    }

    #[test]
    fn expit_matches_reference_value() {
        // 1/(1+e^{-2}) evaluated at high precision.
        assert_close(expit(2.0).get(), 0.880_797_077_977_882_3, 1e-15);
    }

    #[test]
    fn expit_interior_and_monotone_on_dense_grid() {
        let mut prev = 0.0;
        for i in 0..=6000 {
            let x = -30.0 + i as f64 * 0.01;
            let p = expit(x).get();
            assert!(p > 0.0 && p < 1.0, "expit({x}) = {p} not interior");
            assert!(p >= prev, "expit not nondecreasing at {x}");
            prev = p;
        }
    }

    #[test]
    fn expit_saturates_interior_at_extremes() {
        assert!(expit(1e4).get() < 1.0);
        assert!(expit(-1e4).get() > 0.0);
    }

    #[test]
    fn log_gamma_trivial_values() {
        assert_close(log_gamma(1.0).unwrap(), 0.0, 1e-14);
        assert_close(log_gamma(2.0).unwrap(), 0.0, 1e-14);
    }

    #[test]
    fn log_gamma_half_is_half_ln_pi() {
        // Gamma(1/2) = sqrt(pi).
        let expected = 0.5 * std::f64::consts::PI.ln();
        assert_close(log_gamma(0.5).unwrap(), expected, 1e-14);
        assert_close(expected, 0.572_364_942_9, 1e-9);
    }

    #[test]
    fn log_gamma_matches_oracle_across_domain() {
        // Log-spaced sweep of [1e-3, 1e6].
        for i in 0..=900 {
            let x = 10f64.powf(-3.0 + i as f64 * 0.01);
            let want = log_gamma_oracle(x);
            assert_close(log_gamma(x).unwrap(), want, 1e-12);
        }
    }

    #[test]
    fn log_gamma_recurrence_property() {
        for i in 0..=995 {
            let x = 0.5 + i as f64 * 0.1;
            let lhs = log_gamma(x + 1.0).unwrap();
            let rhs = log_gamma(x).unwrap() + x.ln();
            assert_close(lhs, rhs, 1e-10);
        }
    }

    #[test]
    fn log_gamma_rejects_nonpositive() {
        assert!(log_gamma(0.0).is_err());
        assert!(log_gamma(-1.5).is_err());
        assert!(log_gamma(f64::NAN).is_err());
    }

    #[test]
    fn digamma_reference_values() {
        // psi(1) = -gamma, psi(2) = 1 - gamma, psi(1/2) = -gamma - 2 ln 2.
        assert_close(digamma(1.0).unwrap(), -0.577_215_664_901_532_9, 1e-12);
        assert_close(digamma(2.0).unwrap(), 0.422_784_335_098_467_1, 1e-12);
        assert_close(digamma(0.5).unwrap(), -1.963_510_026_021_423_5, 1e-12);
    }

    #[test]
    fn digamma_recurrence_against_psi_one() {
        let psi1 = digamma(1.0).unwrap();
        assert_close(digamma(2.0).unwrap(), psi1 + 1.0, 1e-12);
    }

    #[test]
    fn digamma_matches_oracle_across_domain() {
        for i in 0..=700 {
            let x = 10f64.powf(-3.0 + i as f64 * 0.01);
            assert_close(digamma(x).unwrap(), digamma_oracle(x), 1e-10);
        }
    }

    #[test]
    fn digamma_is_derivative_of_log_gamma() {
        let h = 1e-6;
        for i in 0..=199 {
            let x = 0.5 + i as f64 * 0.5;
            let fd = (log_gamma(x + h).unwrap() - log_gamma(x - h).unwrap()) / (2.0 * h);
            let psi = digamma(x).unwrap();
            let scale = psi.abs().max(1.0);
            assert!(
                (fd - psi).abs() <= 1e-6 * scale,
                "fd {fd} vs digamma {psi} at x={x}"
            );
        }
    }

    #[test]
    fn digamma_rejects_nonpositive() {
        assert!(digamma(0.0).is_err());
        assert!(digamma(-0.5).is_err());
    }

    #[test]
    fn probability_constructor_enforces_interior() {
        assert!(Probability::new(0.0).is_err());
        assert!(Probability::new(1.0).is_err());
        assert!(Probability::new(f64::NAN).is_err());
        assert_eq!(Probability::new(0.25).unwrap().get(), 0.25);
    }

    #[test]
    fn logit_inverts_expit() {
        for &x in &[-8.0, -1.0, 0.0, 0.3, 5.0] {
            assert_close(logit(expit(x)), x, 1e-9);
        }
    }
}
