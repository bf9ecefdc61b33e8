//! Unnormalized log-posterior and analytic gradient for every variant.

use ndarray::{Array1, ArrayView1};

use super::pack::{meta_map, param_count};
use super::{ModelData, ModelSpec, TurbineData, Variant};
use crate::beta::row_kernel;
use crate::error::{Error, Result};
use crate::nuts::LogDensity;
use crate::special::expit;

const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_7;

fn normal_lpdf(v: f64, scale: f64) -> f64 {
    -HALF_LN_TWO_PI - scale.ln() - v * v / (2.0 * scale * scale)
}

fn normal_lpdf_sum(values: ArrayView1<'_, f64>, scale: f64) -> f64 {
    values.iter().map(|&v| normal_lpdf(v, scale)).sum()
}

/// Log-likelihood of one turbine block plus its gradient with respect to
/// the block's linear coefficients. Returns `None` on numeric overflow.
fn block_ll_grad(
    block: &TurbineData,
    eta: ArrayView1<'_, f64>,
    zeta: ArrayView1<'_, f64>,
    want_grad: bool,
) -> Option<(f64, Option<(Array1<f64>, Array1<f64>)>)> {
    let x = block.x.values();
    let f1 = x.dot(&eta);
    let f2 = x.dot(&zeta);
    let n = block.n_rows();
    let mut ll = 0.0;
    let mut g1 = Array1::zeros(if want_grad { n } else { 0 });
    let mut g2 = Array1::zeros(if want_grad { n } else { 0 });
    for i in 0..n {
        let mu = expit(f1[i]).get();
        let phi = f2[i].exp();
        if !phi.is_finite() || phi <= 0.0 {
            return None;
        }
        let (l, d1, d2) = row_kernel(block.ln_y[i], block.ln_1my[i], mu, phi);
        if !l.is_finite() {
            return None;
        }
        ll += l;
        if want_grad {
            g1[i] = d1;
            g2[i] = d2;
        }
    }
    let grads = if want_grad {
        let xt = x.t();
        Some((xt.dot(&g1), xt.dot(&g2)))
    } else {
        None
    };
    Some((ll, grads))
}

/// Evaluate log-posterior, optionally accumulating the gradient in packed
/// layout. `Err` carries the parameter span (or turbine) responsible for a
/// non-finite result.
fn evaluate(
    spec: &ModelSpec,
    data: &ModelData,
    theta: &[f64],
    mut grad: Option<&mut [f64]>,
) -> std::result::Result<f64, String> {
    let b = spec.design_width();
    let t = spec.layout.n_training();
    let s = spec.prior_scale;
    let s2 = s * s;

    if let Some(pos) = theta.iter().position(|v| !v.is_finite()) {
        let span = super::pack::param_index(spec)
            .span_of(pos)
            .map(|sp| sp.name.clone())
            .unwrap_or_else(|| format!("theta[{pos}]"));
        return Err(span);
    }
    if let Some(g) = grad.as_deref_mut() {
        g.iter_mut().for_each(|v| *v = 0.0);
    }

    let want_grad = grad.is_some();
    let view = |start: usize| ArrayView1::from(&theta[start..start + b]);
    let mut lp = 0.0;

    match spec.variant {
        Variant::Np => {
            for (i, block) in data.blocks().iter().enumerate() {
                let eta = view(2 * b * i);
                let zeta = view(2 * b * i + b);
                let (ll, grads) = block_ll_grad(block, eta, zeta, want_grad)
                    .ok_or_else(|| format!("eta[{}]", block.turbine_id))?;
                lp += ll;
                lp += normal_lpdf_sum(eta, s) + normal_lpdf_sum(zeta, s);
                if let Some(g) = grad.as_deref_mut() {
                    let (ge, gz) = grads.expect("requested");
                    for j in 0..b {
                        g[2 * b * i + j] = ge[j] - eta[j] / s2;
                        g[2 * b * i + b + j] = gz[j] - zeta[j] / s2;
                    }
                }
            }
        }
        Variant::Cp => {
            let eta = view(0);
            let zeta = view(b);
            for block in data.blocks() {
                let (ll, grads) = block_ll_grad(block, eta, zeta, want_grad)
                    .ok_or_else(|| "eta".to_string())?;
                lp += ll;
                if let Some(g) = grad.as_deref_mut() {
                    let (ge, gz) = grads.expect("requested");
                    for j in 0..b {
                        g[j] += ge[j];
                        g[b + j] += gz[j];
                    }
                }
            }
            lp += normal_lpdf_sum(eta, s) + normal_lpdf_sum(zeta, s);
            if let Some(g) = grad.as_deref_mut() {
                for j in 0..b {
                    g[j] -= eta[j] / s2;
                    g[b + j] -= zeta[j] / s2;
                }
            }
        }
        Variant::Pp => {
            let base = 2 * b * t;
            let mu_eta = view(base);
            let mu_zeta = view(base + b);
            let u_eta = theta[base + 2 * b];
            let u_zeta = theta[base + 2 * b + 1];
            let sig_eta = u_eta.exp();
            let sig_zeta = u_zeta.exp();
            if !sig_eta.is_finite() || !sig_zeta.is_finite() {
                return Err("log_sigma_eta".to_string());
            }
            let mut g_mu_eta: Array1<f64> = Array1::zeros(if want_grad { b } else { 0 });
            let mut g_mu_zeta: Array1<f64> = Array1::zeros(if want_grad { b } else { 0 });
            let mut g_u_eta = 0.0;
            let mut g_u_zeta = 0.0;

            for (i, block) in data.blocks().iter().enumerate() {
                let eps_e = view(2 * b * i);
                let eps_z = view(2 * b * i + b);
                let eta = &mu_eta + &(&eps_e * sig_eta);
                let zeta = &mu_zeta + &(&eps_z * sig_zeta);
                let (ll, grads) = block_ll_grad(block, eta.view(), zeta.view(), want_grad)
                    .ok_or_else(|| format!("eps_eta[{}]", block.turbine_id))?;
                lp += ll;
                // Standard-normal prior on the non-centered residuals.
                lp += eps_e.iter().map(|&e| normal_lpdf(e, 1.0)).sum::<f64>();
                lp += eps_z.iter().map(|&e| normal_lpdf(e, 1.0)).sum::<f64>();
                if let Some(g) = grad.as_deref_mut() {
                    let (ge, gz) = grads.expect("requested");
                    for j in 0..b {
                        g[2 * b * i + j] = sig_eta * ge[j] - eps_e[j];
                        g[2 * b * i + b + j] = sig_zeta * gz[j] - eps_z[j];
                        g_mu_eta[j] += ge[j];
                        g_mu_zeta[j] += gz[j];
                        g_u_eta += sig_eta * eps_e[j] * ge[j];
                        g_u_zeta += sig_zeta * eps_z[j] * gz[j];
                    }
                }
            }

            lp += normal_lpdf_sum(mu_eta, s) + normal_lpdf_sum(mu_zeta, s);
            // Half-normal prior on the scales, sampled on the log scale:
            // add ln 2 for the folding and the Jacobian term u = ln(sigma).
            let sp = spec.pp_sigma_scale;
            lp += 2.0 * std::f64::consts::LN_2
                + normal_lpdf(sig_eta, sp)
                + normal_lpdf(sig_zeta, sp)
                + u_eta
                + u_zeta;
            if let Some(g) = grad.as_deref_mut() {
                for j in 0..b {
                    g[base + j] = g_mu_eta[j] - mu_eta[j] / s2;
                    g[base + b + j] = g_mu_zeta[j] - mu_zeta[j] / s2;
                }
                g[base + 2 * b] = g_u_eta - sig_eta * sig_eta / (sp * sp) + 1.0;
                g[base + 2 * b + 1] = g_u_zeta - sig_zeta * sig_zeta / (sp * sp) + 1.0;
            }
        }
        Variant::Meta => {
            let mat = |k: usize| {
                ndarray::ArrayView2::from_shape((2, b), &theta[2 * b * k..2 * b * (k + 1)])
                    .expect("length checked")
            };
            let m_eta_x = mat(0).to_owned();
            let m_eta_y = mat(1).to_owned();
            let m_zeta_x = mat(2).to_owned();
            let m_zeta_y = mat(3).to_owned();

            for (block, turbine) in data.blocks().iter().zip(spec.layout.training()) {
                let eta = meta_map(&m_eta_x, &m_eta_y, turbine.x, turbine.y);
                let zeta = meta_map(&m_zeta_x, &m_zeta_y, turbine.x, turbine.y);
                let (ll, grads) = block_ll_grad(block, eta.view(), zeta.view(), want_grad)
                    .ok_or_else(|| format!("M_eta_x (turbine {})", block.turbine_id))?;
                lp += ll;
                if let Some(g) = grad.as_deref_mut() {
                    let (ge, gz) = grads.expect("requested");
                    // Back-propagate through [1, x] M_x + [1, y] M_y.
                    for j in 0..b {
                        g[j] += ge[j];
                        g[b + j] += turbine.x * ge[j];
                        g[2 * b + j] += ge[j];
                        g[3 * b + j] += turbine.y * ge[j];
                        g[4 * b + j] += gz[j];
                        g[5 * b + j] += turbine.x * gz[j];
                        g[6 * b + j] += gz[j];
                        g[7 * b + j] += turbine.y * gz[j];
                    }
                }
            }
            lp += theta[..8 * b].iter().map(|&v| normal_lpdf(v, s)).sum::<f64>();
            if let Some(g) = grad.as_deref_mut() {
                for j in 0..8 * b {
                    g[j] -= theta[j] / s2;
                }
            }
        }
    }

    if !lp.is_finite() {
        return Err("log_posterior".to_string());
    }
    Ok(lp)
}

/// Unnormalized log-posterior of `theta` given per-turbine data blocks.
pub fn log_posterior(spec: &ModelSpec, data: &ModelData, theta: &[f64]) -> Result<f64> {
    check_shapes(spec, theta)?;
    evaluate(spec, data, theta, None).map_err(|span| Error::NonFinite { span })
}

/// Analytic gradient of [`log_posterior`] in packed layout.
pub fn grad_log_posterior(
    spec: &ModelSpec,
    data: &ModelData,
    theta: &[f64],
) -> Result<Array1<f64>> {
    check_shapes(spec, theta)?;
    let mut grad = vec![0.0; theta.len()];
    evaluate(spec, data, theta, Some(&mut grad))
        .map_err(|span| Error::NonFinite { span })?;
    Ok(Array1::from_vec(grad))
}

/// Fused evaluation used by the sampler.
pub fn log_posterior_and_grad(
    spec: &ModelSpec,
    data: &ModelData,
    theta: &[f64],
    grad: &mut [f64],
) -> Result<f64> {
    check_shapes(spec, theta)?;
    evaluate(spec, data, theta, Some(grad)).map_err(|span| Error::NonFinite { span })
}

fn check_shapes(spec: &ModelSpec, theta: &[f64]) -> Result<()> {
    let want = param_count(spec);
    if theta.len() != want {
        return Err(Error::dimension(format!(
            "theta has length {}, variant {} requires {want}",
            theta.len(),
            spec.variant
        )));
    }
    Ok(())
}

/// Sampler adapter: non-finite posteriors surface as `-inf`, which NUTS
/// treats as a divergence rather than an error.
pub struct PosteriorTarget<'a> {
    spec: &'a ModelSpec,
    data: &'a ModelData,
}

impl<'a> PosteriorTarget<'a> {
    pub fn new(spec: &'a ModelSpec, data: &'a ModelData) -> Self {
        PosteriorTarget { spec, data }
    }
}

impl LogDensity for PosteriorTarget<'_> {
    fn dim(&self) -> usize {
        param_count(self.spec)
    }

    fn logp_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        match evaluate(self.spec, self.data, theta, Some(grad)) {
            Ok(lp) => lp,
            Err(_) => f64::NEG_INFINITY,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testutil::{grid_layout, random_blocks};
    use crate::splines::SplineConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_spec(variant: Variant) -> ModelSpec {
        // 3 training turbines, B = 6 (order 2, no interior knots).
        ModelSpec::new(
            variant,
            SplineConfig::new(2, 0).unwrap(),
            grid_layout(1, 3, 1),
        )
        .unwrap()
    }

    #[test]
    fn cp_posterior_composes_likelihood_and_prior() {
        let spec = ModelSpec::new(
            Variant::Cp,
            SplineConfig::new(2, 0).unwrap(),
            grid_layout(1, 1, 1),
        )
        .unwrap();
        let data = random_blocks(&spec, 1, 3);
        let b = spec.design_width();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let theta: Vec<f64> = (0..2 * b).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let lp = log_posterior(&spec, &data, &theta).unwrap();

        let eta = Array1::from_iter(theta[..b].iter().copied());
        let zeta = Array1::from_iter(theta[b..].iter().copied());
        let coeffs = crate::beta::RegressionCoefficients::new(eta, zeta).unwrap();
        let block = &data.blocks()[0];
        let ll = crate::beta::loglik(&block.y, &block.x, &coeffs).unwrap();
        let prior: f64 = theta.iter().map(|&v| normal_lpdf(v, 3.0)).sum();
        assert!((lp - (ll + prior)).abs() < 1e-10);
    }

    #[test]
    fn meta_at_zero_matches_cp_likelihood_at_zero() {
        let meta = tiny_spec(Variant::Meta);
        let data = random_blocks(&meta, 8, 9);
        let theta = vec![0.0; param_count(&meta)];
        let lp_meta = log_posterior(&meta, &data, &theta).unwrap();

        // Same likelihood as every turbine at zero coefficients.
        let b = meta.design_width();
        let zero = crate::beta::RegressionCoefficients::new(
            Array1::zeros(b),
            Array1::zeros(b),
        )
        .unwrap();
        let ll: f64 = data
            .blocks()
            .iter()
            .map(|blk| crate::beta::loglik(&blk.y, &blk.x, &zero).unwrap())
            .sum();
        let prior = 8.0 * b as f64 * normal_lpdf(0.0, 3.0);
        assert!((lp_meta - (ll + prior)).abs() < 1e-9);
    }

    #[test]
    fn np_posterior_factorizes_over_turbines() {
        let spec = tiny_spec(Variant::Np);
        let data = random_blocks(&spec, 6, 31);
        let n = param_count(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let theta: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.6..0.6)).collect();
        let joint = log_posterior(&spec, &data, &theta).unwrap();

        let b = spec.design_width();
        let mut sum = 0.0;
        for (i, turbine) in spec.layout.training().enumerate() {
            let single_layout = crate::model::FarmLayout::new(vec![crate::model::Turbine {
                id: turbine.id.clone(),
                x: turbine.x,
                y: turbine.y,
                is_training: true,
            }])
            .unwrap();
            let single =
                ModelSpec::new(Variant::Np, spec.spline.clone(), single_layout).unwrap();
            let block = data.blocks()[i].clone();
            let sdata = ModelData::for_spec(&single, vec![block]).unwrap();
            sum +=
                log_posterior(&single, &sdata, &theta[2 * b * i..2 * b * (i + 1)]).unwrap();
        }
        assert!((joint - sum).abs() < 1e-9, "{joint} vs {sum}");
    }

    #[test]
    fn gradients_match_finite_differences_all_variants() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for variant in [Variant::Np, Variant::Cp, Variant::Pp, Variant::Meta] {
            let spec = tiny_spec(variant);
            let data = random_blocks(&spec, 7, 555);
            let n = param_count(&spec);
            for _ in 0..5 {
                let theta: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.7..0.7)).collect();
                let grad = grad_log_posterior(&spec, &data, &theta).unwrap();
                let h = 1e-5;
                for j in 0..n {
                    let mut plus = theta.clone();
                    let mut minus = theta.clone();
                    plus[j] += h;
                    minus[j] -= h;
                    let fd = (log_posterior(&spec, &data, &plus).unwrap()
                        - log_posterior(&spec, &data, &minus).unwrap())
                        / (2.0 * h);
                    assert!(
                        (fd - grad[j]).abs() <= 1e-6 * grad[j].abs().max(1.0),
                        "{variant} coord {j}: fd {fd} vs analytic {}",
                        grad[j]
                    );
                }
            }
        }
    }

    #[test]
    fn meta_gradient_is_coordinate_weighted_sum() {
        let spec = ModelSpec::new(
            Variant::Meta,
            SplineConfig::new(2, 0).unwrap(),
            grid_layout(1, 2, 1),
        )
        .unwrap();
        let data = random_blocks(&spec, 5, 77);
        let b = spec.design_width();
        let n = param_count(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let theta: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.4..0.4)).collect();
        let grad = grad_log_posterior(&spec, &data, &theta).unwrap();

        // Per-turbine likelihood gradients with the mapped coefficients.
        let coeffs = super::super::pack::training_coefficients(&spec, &theta).unwrap();
        let mut expected_slope = Array1::<f64>::zeros(b);
        for ((block, turbine), (eta, zeta)) in data
            .blocks()
            .iter()
            .zip(spec.layout.training())
            .zip(coeffs.iter())
        {
            let rc = crate::beta::RegressionCoefficients::new(eta.clone(), zeta.clone())
                .unwrap();
            let (ge, _) = crate::beta::grad_loglik(&block.y, &block.x, &rc).unwrap();
            expected_slope = expected_slope + ge.mapv(|v| v * turbine.x);
        }
        // Slope row of M_eta_x lives at offset b; subtract its prior term.
        for j in 0..b {
            let want = expected_slope[j] - theta[b + j] / 9.0;
            assert!(
                (grad[b + j] - want).abs() < 1e-9 * want.abs().max(1.0),
                "col {j}: {} vs {want}",
                grad[b + j]
            );
        }
    }

    #[test]
    fn prior_only_gradient_vanishes_at_zero() {
        for variant in [Variant::Np, Variant::Cp, Variant::Meta] {
            let spec = tiny_spec(variant);
            let empty_blocks: Vec<TurbineData> = spec
                .layout
                .training()
                .map(|t| {
                    let x = crate::splines::design_matrix(
                        ndarray::Array2::zeros((0, 3)).view(),
                        &spec.spline,
                    )
                    .unwrap();
                    TurbineData::new(t.id.clone(), vec![], x).unwrap()
                })
                .collect();
            let data = ModelData::for_spec(&spec, empty_blocks).unwrap();
            let theta = vec![0.0; param_count(&spec)];
            let grad = grad_log_posterior(&spec, &data, &theta).unwrap();
            assert!(
                grad.iter().all(|v| v.abs() < 1e-12),
                "{variant}: {grad:?}"
            );
        }
    }

    #[test]
    fn meta_invariant_under_coordinate_swap() {
        let spec = ModelSpec::new(
            Variant::Meta,
            SplineConfig::new(2, 0).unwrap(),
            grid_layout(2, 3, 2),
        )
        .unwrap();
        let data = random_blocks(&spec, 6, 404);
        let n = param_count(&spec);
        let b = spec.design_width();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let theta: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let lp = log_posterior(&spec, &data, &theta).unwrap();

        // Swap x <-> y in the layout together with (M_*x) <-> (M_*y).
        let swapped_layout = crate::model::FarmLayout::new(
            spec.layout
                .turbines()
                .iter()
                .map(|t| crate::model::Turbine {
                    id: t.id.clone(),
                    x: t.y,
                    y: t.x,
                    is_training: t.is_training,
                })
                .collect(),
        )
        .unwrap();
        let swapped_spec =
            ModelSpec::new(Variant::Meta, spec.spline.clone(), swapped_layout).unwrap();
        let mut swapped_theta = theta.clone();
        swapped_theta[..2 * b].copy_from_slice(&theta[2 * b..4 * b]); // M_eta_y -> M_eta_x
        swapped_theta[2 * b..4 * b].copy_from_slice(&theta[..2 * b]);
        swapped_theta[4 * b..6 * b].copy_from_slice(&theta[6 * b..8 * b]);
        swapped_theta[6 * b..8 * b].copy_from_slice(&theta[4 * b..6 * b]);
        let lp_swapped = log_posterior(&swapped_spec, &data, &swapped_theta).unwrap();
        assert!((lp - lp_swapped).abs() < 1e-10 * lp.abs().max(1.0));
    }

    #[test]
    fn non_finite_theta_names_span() {
        let spec = tiny_spec(Variant::Pp);
        let data = random_blocks(&spec, 4, 3);
        let mut theta = vec![0.0; param_count(&spec)];
        let idx = spec.layout.n_training() * 2 * spec.design_width(); // mu_eta start
        theta[idx] = f64::NAN;
        let err = log_posterior(&spec, &data, &theta).unwrap_err();
        assert!(err.to_string().contains("mu_eta"), "{err}");
    }

    #[test]
    fn sampler_target_returns_neg_inf_not_error() {
        let spec = tiny_spec(Variant::Cp);
        let data = random_blocks(&spec, 4, 5);
        let target = PosteriorTarget::new(&spec, &data);
        let n = param_count(&spec);
        let mut grad = vec![0.0; n];
        // Enormous zeta overflows the precision link.
        let mut theta = vec![0.0; n];
        for v in theta[spec.design_width()..].iter_mut() {
            *v = 500.0;
        }
        let lp = target.logp_grad(&theta, &mut grad);
        assert_eq!(lp, f64::NEG_INFINITY);
    }
}
