//! Flat parameter-vector layout per model variant.
//!
//! Packed order:
//! - np:   `eta[t]`, `zeta[t]` per training turbine, in layout order
//! - cp:   `eta`, `zeta`
//! - pp:   `eps_eta[t]`, `eps_zeta[t]` per turbine, then `mu_eta`,
//!         `mu_zeta`, `log_sigma_eta`, `log_sigma_zeta` (non-centered;
//!         `eta_t = mu_eta + sigma_eta * eps_t`, scalar sigmas on log scale)
//! - meta: `M_eta_x`, `M_eta_y`, `M_zeta_x`, `M_zeta_y`, each stored
//!         row-major as `[intercept row, slope row]` of a 2 x B matrix

use ndarray::{Array1, Array2};

use super::{ModelSpec, Variant};
use crate::draws::ParamIndex;
use crate::error::{Error, Result};

/// Parameter spans for a spec.
pub fn param_index(spec: &ModelSpec) -> ParamIndex {
    let b = spec.design_width();
    let mut spans: Vec<(String, usize)> = Vec::new();
    match spec.variant {
        Variant::Np => {
            for t in spec.layout.training() {
                spans.push((format!("eta[{}]", t.id), b));
                spans.push((format!("zeta[{}]", t.id), b));
            }
        }
        Variant::Cp => {
            spans.push(("eta".to_string(), b));
            spans.push(("zeta".to_string(), b));
        }
        Variant::Pp => {
            for t in spec.layout.training() {
                spans.push((format!("eps_eta[{}]", t.id), b));
                spans.push((format!("eps_zeta[{}]", t.id), b));
            }
            spans.push(("mu_eta".to_string(), b));
            spans.push(("mu_zeta".to_string(), b));
            spans.push(("log_sigma_eta".to_string(), 1));
            spans.push(("log_sigma_zeta".to_string(), 1));
        }
        Variant::Meta => {
            for name in ["M_eta_x", "M_eta_y", "M_zeta_x", "M_zeta_y"] {
                spans.push((name.to_string(), 2 * b));
            }
        }
    }
    ParamIndex::new(spans)
}

/// Total number of sampled parameters.
pub fn param_count(spec: &ModelSpec) -> usize {
    let b = spec.design_width();
    let t = spec.layout.n_training();
    match spec.variant {
        Variant::Np => 2 * b * t,
        Variant::Cp => 2 * b,
        Variant::Pp => 2 * b * t + 2 * b + 2,
        Variant::Meta => 8 * b,
    }
}

/// Structured view of a packed vector.
#[derive(Debug, Clone, PartialEq)]
pub enum UnpackedParams {
    Np {
        /// `(eta, zeta)` per training turbine, in layout order.
        coeffs: Vec<(Array1<f64>, Array1<f64>)>,
    },
    Cp {
        eta: Array1<f64>,
        zeta: Array1<f64>,
    },
    Pp {
        eps: Vec<(Array1<f64>, Array1<f64>)>,
        mu_eta: Array1<f64>,
        mu_zeta: Array1<f64>,
        log_sigma_eta: f64,
        log_sigma_zeta: f64,
    },
    Meta {
        m_eta_x: Array2<f64>,
        m_eta_y: Array2<f64>,
        m_zeta_x: Array2<f64>,
        m_zeta_y: Array2<f64>,
    },
}

fn check_len(spec: &ModelSpec, theta: &[f64]) -> Result<()> {
    let want = param_count(spec);
    if theta.len() != want {
        return Err(Error::dimension(format!(
            "packed vector has length {}, spec {} requires {want}",
            theta.len(),
            spec.variant
        )));
    }
    Ok(())
}

pub fn unpack(spec: &ModelSpec, theta: &[f64]) -> Result<UnpackedParams> {
    check_len(spec, theta)?;
    let b = spec.design_width();
    let t = spec.layout.n_training();
    let vec_at = |start: usize| Array1::from_iter(theta[start..start + b].iter().copied());
    match spec.variant {
        Variant::Np => {
            let coeffs = (0..t)
                .map(|i| (vec_at(2 * b * i), vec_at(2 * b * i + b)))
                .collect();
            Ok(UnpackedParams::Np { coeffs })
        }
        Variant::Cp => Ok(UnpackedParams::Cp {
            eta: vec_at(0),
            zeta: vec_at(b),
        }),
        Variant::Pp => {
            let eps = (0..t)
                .map(|i| (vec_at(2 * b * i), vec_at(2 * b * i + b)))
                .collect();
            let base = 2 * b * t;
            Ok(UnpackedParams::Pp {
                eps,
                mu_eta: vec_at(base),
                mu_zeta: vec_at(base + b),
                log_sigma_eta: theta[base + 2 * b],
                log_sigma_zeta: theta[base + 2 * b + 1],
            })
        }
        Variant::Meta => {
            let mat_at = |start: usize| {
                Array2::from_shape_vec((2, b), theta[start..start + 2 * b].to_vec())
                    .expect("length checked")
            };
            Ok(UnpackedParams::Meta {
                m_eta_x: mat_at(0),
                m_eta_y: mat_at(2 * b),
                m_zeta_x: mat_at(4 * b),
                m_zeta_y: mat_at(6 * b),
            })
        }
    }
}

pub fn pack(spec: &ModelSpec, params: &UnpackedParams) -> Result<Array1<f64>> {
    let mut theta = Vec::with_capacity(param_count(spec));
    match (spec.variant, params) {
        (Variant::Np, UnpackedParams::Np { coeffs }) => {
            for (eta, zeta) in coeffs {
                theta.extend(eta.iter());
                theta.extend(zeta.iter());
            }
        }
        (Variant::Cp, UnpackedParams::Cp { eta, zeta }) => {
            theta.extend(eta.iter());
            theta.extend(zeta.iter());
        }
        (
            Variant::Pp,
            UnpackedParams::Pp {
                eps,
                mu_eta,
                mu_zeta,
                log_sigma_eta,
                log_sigma_zeta,
            },
        ) => {
            for (e, z) in eps {
                theta.extend(e.iter());
                theta.extend(z.iter());
            }
            theta.extend(mu_eta.iter());
            theta.extend(mu_zeta.iter());
            theta.push(*log_sigma_eta);
            theta.push(*log_sigma_zeta);
        }
        (
            Variant::Meta,
            UnpackedParams::Meta {
                m_eta_x,
                m_eta_y,
                m_zeta_x,
                m_zeta_y,
            },
        ) => {
            for m in [m_eta_x, m_eta_y, m_zeta_x, m_zeta_y] {
                theta.extend(m.iter());
            }
        }
        _ => {
            return Err(Error::config(format!(
                "unpacked parameters do not match variant {}",
                spec.variant
            )))
        }
    }
    let theta = Array1::from_vec(theta);
    check_len(spec, theta.as_slice().unwrap())?;
    Ok(theta)
}

/// Turbine coefficients implied by a packed vector, for every training
/// turbine in layout order.
pub(crate) fn training_coefficients(
    spec: &ModelSpec,
    theta: &[f64],
) -> Result<Vec<(Array1<f64>, Array1<f64>)>> {
    match unpack(spec, theta)? {
        UnpackedParams::Np { coeffs } => Ok(coeffs),
        UnpackedParams::Cp { eta, zeta } => Ok(spec
            .layout
            .training()
            .map(|_| (eta.clone(), zeta.clone()))
            .collect()),
        UnpackedParams::Pp {
            eps,
            mu_eta,
            mu_zeta,
            log_sigma_eta,
            log_sigma_zeta,
        } => {
            let sigma_eta = log_sigma_eta.exp();
            let sigma_zeta = log_sigma_zeta.exp();
            Ok(eps
                .iter()
                .map(|(e, z)| (&mu_eta + &(e * sigma_eta), &mu_zeta + &(z * sigma_zeta)))
                .collect())
        }
        UnpackedParams::Meta {
            m_eta_x,
            m_eta_y,
            m_zeta_x,
            m_zeta_y,
        } => Ok(spec
            .layout
            .training()
            .map(|t| {
                (
                    meta_map(&m_eta_x, &m_eta_y, t.x, t.y),
                    meta_map(&m_zeta_x, &m_zeta_y, t.x, t.y),
                )
            })
            .collect()),
    }
}

/// First-order spatial map: `[1, x] Mx + [1, y] My`.
pub(crate) fn meta_map(mx: &Array2<f64>, my: &Array2<f64>, x: f64, y: f64) -> Array1<f64> {
    let b = mx.ncols();
    Array1::from_shape_fn(b, |j| mx[(0, j)] + x * mx[(1, j)] + my[(0, j)] + y * my[(1, j)])
}
