//! Posterior-predictive machinery: coefficient extraction per variant,
//! spatial coefficient prediction, and Monte Carlo power predictions.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;

use super::pack::param_index;
use super::{ModelSpec, Variant};
use crate::draws::{quantile_sorted, PosteriorDraws};
use crate::error::{Error, Result};
use crate::special::expit;
use crate::splines::DesignMatrix;

/// Per-draw coefficient vectors for one prediction target.
#[derive(Debug, Clone)]
pub struct CoeffDraws {
    /// `draws x B`
    pub eta: Array2<f64>,
    /// `draws x B`
    pub zeta: Array2<f64>,
}

impl CoeffDraws {
    pub fn n_draws(&self) -> usize {
        self.eta.nrows()
    }
}

/// What to predict for: a turbine known to the layout, or raw coordinates
/// (metamodel only).
#[derive(Debug, Clone, Copy)]
pub enum PredictTarget<'a> {
    Turbine(&'a str),
    Location { x: f64, y: f64 },
}

/// Extract per-draw coefficients for a target under the fitted variant.
///
/// - np: the turbine must have been fitted (training member).
/// - cp: the shared coefficients, any target.
/// - pp: fitted turbines get their own recentered coefficients; unobserved
///   turbines fall back to the population-level means.
/// - meta: any turbine or coordinate via the first-order spatial map.
pub fn coefficient_draws(
    spec: &ModelSpec,
    draws: &PosteriorDraws,
    target: PredictTarget<'_>,
) -> Result<CoeffDraws> {
    let index = param_index(spec);
    if draws.n_params() != index.total() {
        return Err(Error::dimension(format!(
            "draws have {} parameters, spec implies {}",
            draws.n_params(),
            index.total()
        )));
    }
    let b = spec.design_width();
    let pooled = draws.pooled_matrix();
    let s = pooled.nrows();
    if s == 0 {
        return Err(Error::fit("no posterior draws available"));
    }

    let slice_per_draw = |start: usize| -> Array2<f64> {
        let mut out = Array2::zeros((s, b));
        for d in 0..s {
            out.row_mut(d)
                .assign(&pooled.row(d).slice(ndarray::s![start..start + b]));
        }
        out
    };

    let turbine_of = |id: &str| {
        spec.layout
            .get(id)
            .ok_or_else(|| Error::config(format!("turbine `{id}` not in layout")))
    };

    match spec.variant {
        Variant::Np => {
            let id = match target {
                PredictTarget::Turbine(id) => id,
                PredictTarget::Location { .. } => {
                    return Err(Error::config(
                        "coordinate prediction requires a meta fit; np fits are per-turbine",
                    ))
                }
            };
            let eta_span = index.span(&format!("eta[{id}]"))?;
            let zeta_span = index.span(&format!("zeta[{id}]"))?;
            Ok(CoeffDraws {
                eta: slice_per_draw(eta_span.start),
                zeta: slice_per_draw(zeta_span.start),
            })
        }
        Variant::Cp => {
            match target {
                PredictTarget::Turbine(id) => {
                    turbine_of(id)?;
                }
                PredictTarget::Location { .. } => {
                    return Err(Error::config(
                        "coordinate prediction requires a meta fit; cp is location-free",
                    ))
                }
            }
            Ok(CoeffDraws {
                eta: slice_per_draw(index.span("eta")?.start),
                zeta: slice_per_draw(index.span("zeta")?.start),
            })
        }
        Variant::Pp => {
            let id = match target {
                PredictTarget::Turbine(id) => id,
                PredictTarget::Location { .. } => {
                    return Err(Error::config(
                        "coordinate prediction requires a meta fit; pp has no spatial map",
                    ))
                }
            };
            let turbine = turbine_of(id)?;
            let mu_eta = slice_per_draw(index.span("mu_eta")?.start);
            let mu_zeta = slice_per_draw(index.span("mu_zeta")?.start);
            if !turbine.is_training {
                // Unobserved turbines only see the population level.
                return Ok(CoeffDraws {
                    eta: mu_eta,
                    zeta: mu_zeta,
                });
            }
            let eps_eta = slice_per_draw(index.span(&format!("eps_eta[{id}]"))?.start);
            let eps_zeta = slice_per_draw(index.span(&format!("eps_zeta[{id}]"))?.start);
            let u_eta = index.span("log_sigma_eta")?.start;
            let u_zeta = index.span("log_sigma_zeta")?.start;
            let mut eta = mu_eta;
            let mut zeta = mu_zeta;
            for d in 0..s {
                let sig_e = pooled[(d, u_eta)].exp();
                let sig_z = pooled[(d, u_zeta)].exp();
                for j in 0..b {
                    eta[(d, j)] += sig_e * eps_eta[(d, j)];
                    zeta[(d, j)] += sig_z * eps_zeta[(d, j)];
                }
            }
            Ok(CoeffDraws { eta, zeta })
        }
        Variant::Meta => {
            let (x, y) = match target {
                PredictTarget::Turbine(id) => {
                    let t = turbine_of(id)?;
                    (t.x, t.y)
                }
                PredictTarget::Location { x, y } => (x, y),
            };
            let mex = index.span("M_eta_x")?.start;
            let mey = index.span("M_eta_y")?.start;
            let mzx = index.span("M_zeta_x")?.start;
            let mzy = index.span("M_zeta_y")?.start;
            let mut eta = Array2::zeros((s, b));
            let mut zeta = Array2::zeros((s, b));
            for d in 0..s {
                let row = pooled.row(d);
                let map = |m: usize, j: usize, coord: f64| row[m + j] + coord * row[m + b + j];
                for j in 0..b {
                    eta[(d, j)] = map(mex, j, x) + map(mey, j, y);
                    zeta[(d, j)] = map(mzx, j, x) + map(mzy, j, y);
                }
            }
            Ok(CoeffDraws { eta, zeta })
        }
    }
}

/// Spatial coefficient prediction at arbitrary normalized coordinates.
/// Only defined for metamodel fits.
pub fn metamodel_predict_coeffs(
    spec: &ModelSpec,
    draws: &PosteriorDraws,
    coords: &[(f64, f64)],
) -> Result<Vec<CoeffDraws>> {
    if spec.variant != Variant::Meta {
        return Err(Error::config(format!(
            "metamodel_predict_coeffs requires a meta fit, got {}",
            spec.variant
        )));
    }
    coords
        .iter()
        .map(|&(x, y)| coefficient_draws(spec, draws, PredictTarget::Location { x, y }))
        .collect()
}

/// Per-draw mean and precision surfaces over new design rows
/// (`draws x rows` each).
pub fn predictive_mu_phi(
    coeffs: &CoeffDraws,
    x_new: &DesignMatrix,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if coeffs.eta.ncols() != x_new.ncols() {
        return Err(Error::dimension(format!(
            "coefficient width {} vs design width {}",
            coeffs.eta.ncols(),
            x_new.ncols()
        )));
    }
    let xt = x_new.values();
    let f1 = coeffs.eta.dot(&xt.t());
    let f2 = coeffs.zeta.dot(&xt.t());
    let mu = f1.mapv(|v| expit(v).get());
    let phi = f2.mapv(f64::exp);
    if let Some(((d, r), _)) = phi.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::domain(format!(
            "precision link overflowed for draw {d}, row {r}"
        )));
    }
    Ok((mu, phi))
}

/// One prediction row: posterior-predictive mean and the requested
/// quantiles of the beta mixture across draws.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub mean: f64,
    pub quantiles: Vec<f64>,
}

/// Monte Carlo posterior-predictive summary for each design row: the mean
/// is the draw-average of the linked mean, quantiles come from sampling
/// `samples_per_draw` beta variates per posterior draw.
pub fn predict_power(
    coeffs: &CoeffDraws,
    x_new: &DesignMatrix,
    quantiles: &[f64],
    samples_per_draw: usize,
    seed: u64,
) -> Result<Vec<PredictionRow>> {
    if coeffs.n_draws() == 0 {
        return Err(Error::fit("no posterior draws available"));
    }
    if samples_per_draw == 0 {
        return Err(Error::config("samples_per_draw must be positive"));
    }
    if let Some(q) = quantiles.iter().find(|q| !(**q > 0.0 && **q < 1.0)) {
        return Err(Error::config(format!("quantile {q} outside (0, 1)")));
    }
    let (mu, phi) = predictive_mu_phi(coeffs, x_new)?;
    let s = mu.nrows();
    let n = mu.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut samples = Vec::with_capacity(s * samples_per_draw);
    for r in 0..n {
        let mean = mu.column(r).sum() / s as f64;
        samples.clear();
        for d in 0..s {
            let a = mu[(d, r)] * phi[(d, r)];
            let b = (1.0 - mu[(d, r)]) * phi[(d, r)];
            let beta = rand_distr::Beta::new(a, b).map_err(|e| {
                Error::domain(format!("invalid beta shapes at draw {d}, row {r}: {e}"))
            })?;
            for _ in 0..samples_per_draw {
                samples.push(beta.sample(&mut rng));
            }
        }
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let qs = quantiles
            .iter()
            .map(|&q| quantile_sorted(&samples, q))
            .collect();
        rows.push(PredictionRow {
            mean,
            quantiles: qs,
        });
    }
    Ok(rows)
}

/// Convenience: mean of the linked means per row, without sampling.
pub fn predictive_mean(coeffs: &CoeffDraws, x_new: &DesignMatrix) -> Result<Vec<f64>> {
    let (mu, _) = predictive_mu_phi(coeffs, x_new)?;
    let s = mu.nrows() as f64;
    Ok((0..mu.ncols()).map(|r| mu.column(r).sum() / s).collect())
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::draws::ChainDiagnostics;
    use crate::model::testutil::grid_layout;
    use crate::model::{ModelSpec, Variant};
    use crate::splines::{design_matrix, SplineConfig};
    use ndarray::{Array2, Array3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn meta_spec() -> ModelSpec {
        ModelSpec::new(
            Variant::Meta,
            SplineConfig::new(2, 0).unwrap(),
            grid_layout(2, 3, 2),
        )
        .unwrap()
    }

    fn fake_draws(spec: &ModelSpec, n_draws: usize, seed: u64) -> PosteriorDraws {
        let index = param_index(spec);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = Array3::zeros((2, n_draws, index.total()));
        a.mapv_inplace(|_: f64| rng.gen_range(-0.5..0.5));
        let p = index.total();
        PosteriorDraws::new(
            a,
            index,
            ChainDiagnostics {
                rhat: vec![None; p],
                ess_bulk: vec![None; p],
                divergences: 0,
                treedepth_hits: 0,
            },
        )
    }

    #[test]
    fn training_location_reproduces_in_fit_coefficients() {
        let spec = meta_spec();
        let draws = fake_draws(&spec, 4, 1);
        let turbine = spec.layout.training().next().unwrap().clone();
        let by_id = coefficient_draws(&spec, &draws, PredictTarget::Turbine(&turbine.id))
            .unwrap();
        let by_loc = metamodel_predict_coeffs(&spec, &draws, &[(turbine.x, turbine.y)])
            .unwrap()
            .remove(0);
        assert_eq!(by_id.eta, by_loc.eta);
        assert_eq!(by_id.zeta, by_loc.zeta);

        // Draw-by-draw match with the packed training map.
        let pooled = draws.pooled_matrix();
        for d in 0..pooled.nrows() {
            let coeffs = crate::model::pack::training_coefficients(
                &spec,
                pooled.row(d).as_slice().unwrap(),
            )
            .unwrap();
            let pos = spec
                .layout
                .training()
                .position(|t| t.id == turbine.id)
                .unwrap();
            assert_eq!(by_id.eta.row(d).to_vec(), coeffs[pos].0.to_vec());
        }
    }

    #[test]
    fn meta_coefficients_affine_in_x() {
        let spec = meta_spec();
        let draws = fake_draws(&spec, 3, 2);
        let at = |x: f64| {
            metamodel_predict_coeffs(&spec, &draws, &[(x, 0.4)])
                .unwrap()
                .remove(0)
        };
        let lo = at(0.0);
        let hi = at(1.0);
        let mid = at(0.5);
        for d in 0..mid.n_draws() {
            for j in 0..mid.eta.ncols() {
                let want = 0.5 * (lo.eta[(d, j)] + hi.eta[(d, j)]);
                assert!((mid.eta[(d, j)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn meta_map_matches_matrix_oracle() {
        let spec = meta_spec();
        let draws = fake_draws(&spec, 3, 3);
        let b = spec.design_width();
        let index = param_index(&spec);
        let pooled = draws.pooled_matrix();
        let (x, y) = (0.3, 0.8);
        let got = metamodel_predict_coeffs(&spec, &draws, &[(x, y)])
            .unwrap()
            .remove(0);
        for d in 0..3 {
            let row = pooled.row(d);
            let mat = |name: &str| {
                let s = index.span(name).unwrap().start;
                Array2::from_shape_vec((2, b), row.slice(ndarray::s![s..s + 2 * b]).to_vec())
                    .unwrap()
            };
            let cx = ndarray::arr2(&[[1.0, x]]);
            let cy = ndarray::arr2(&[[1.0, y]]);
            let eta_star = cx.dot(&mat("M_eta_x")) + cy.dot(&mat("M_eta_y"));
            for j in 0..b {
                assert!((got.eta[(d, j)] - eta_star[(0, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn non_meta_rejects_coordinates() {
        let spec = ModelSpec::new(
            Variant::Cp,
            SplineConfig::new(2, 0).unwrap(),
            grid_layout(1, 2, 1),
        )
        .unwrap();
        let draws = fake_draws(&spec, 2, 4);
        assert!(metamodel_predict_coeffs(&spec, &draws, &[(0.5, 0.5)]).is_err());
        assert!(coefficient_draws(
            &spec,
            &draws,
            PredictTarget::Location { x: 0.1, y: 0.1 }
        )
        .is_err());
    }

    #[test]
    fn pp_unobserved_turbine_uses_population_means() {
        let spec = ModelSpec::new(
            Variant::Pp,
            SplineConfig::new(2, 0).unwrap(),
            grid_layout(1, 4, 2),
        )
        .unwrap();
        let draws = fake_draws(&spec, 3, 5);
        let index = param_index(&spec);
        let mu_start = index.span("mu_eta").unwrap().start;
        let got =
            coefficient_draws(&spec, &draws, PredictTarget::Turbine("T01")).unwrap();
        let pooled = draws.pooled_matrix();
        for d in 0..pooled.nrows() {
            for j in 0..spec.design_width() {
                assert_eq!(got.eta[(d, j)], pooled[(d, mu_start + j)]);
            }
        }
    }

    fn uniform_coeff_draws(b: usize) -> CoeffDraws {
        // mu = 1/2 and phi = 2 on a partition-of-unity design requires a
        // linear predictor of 0 for eta and ln(2)/3 per block for zeta
        // (three blocks sum to one each).
        CoeffDraws {
            eta: Array2::zeros((1, b)),
            zeta: Array2::from_elem((1, b), std::f64::consts::LN_2 / 3.0),
        }
    }

    #[test]
    fn uniform_predictive_quantiles() {
        let cfg = SplineConfig::six_basis_preset();
        let x = design_matrix(ndarray::arr2(&[[0.2, 0.5, 0.8]]).view(), &cfg).unwrap();
        let coeffs = uniform_coeff_draws(x.ncols());
        let rows =
            predict_power(&coeffs, &x, &[0.025, 0.975], 200_000, 7).unwrap();
        assert!((rows[0].mean - 0.5).abs() < 1e-12);
        assert!((rows[0].quantiles[0] - 0.025).abs() < 0.004, "{:?}", rows[0]);
        assert!((rows[0].quantiles[1] - 0.975).abs() < 0.004);
    }

    #[test]
    fn predictive_mean_is_draw_average_of_link_mean() {
        let cfg = SplineConfig::new(2, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let feats = Array2::from_shape_fn((6, 3), |_| rng.gen());
        let x = design_matrix(feats.view(), &cfg).unwrap();
        let b = x.ncols();
        let eta = Array2::from_shape_fn((5, b), |_| rng.gen_range(-1.0..1.0));
        let zeta = Array2::from_shape_fn((5, b), |_| rng.gen_range(-0.5..0.5));
        let coeffs = CoeffDraws { eta: eta.clone(), zeta };
        let means = predictive_mean(&coeffs, &x).unwrap();
        for r in 0..x.nrows() {
            let mut acc = 0.0;
            for d in 0..5 {
                let m = crate::beta::link_mean(&x, eta.row(d)).unwrap();
                acc += m[r];
            }
            assert!((means[r] - acc / 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn coverage_of_predictive_band_on_known_truth() {
        // Simulate from fixed (mu, phi) rows and check the 95% band.
        let cfg = SplineConfig::six_basis_preset();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let n = 10_000;
        let feats = Array2::from_shape_fn((n, 3), |_| rng.gen());
        let x = design_matrix(feats.view(), &cfg).unwrap();
        let b = x.ncols();
        let eta = Array2::from_elem((1, b), 0.3);
        let zeta = Array2::from_elem((1, b), 0.8);
        let coeffs = CoeffDraws {
            eta: eta.clone(),
            zeta: zeta.clone(),
        };
        let rows = predict_power(&coeffs, &x, &[0.025, 0.975], 400, 5).unwrap();
        let (mu, phi) = predictive_mu_phi(&coeffs, &x).unwrap();
        let mut inside = 0usize;
        for r in 0..n {
            let beta =
                rand_distr::Beta::new(mu[(0, r)] * phi[(0, r)], (1.0 - mu[(0, r)]) * phi[(0, r)])
                    .unwrap();
            let y: f64 = beta.sample(&mut rng);
            if y >= rows[r].quantiles[0] && y <= rows[r].quantiles[1] {
                inside += 1;
            }
        }
        let coverage = inside as f64 / n as f64;
        assert!(
            (coverage - 0.95).abs() < 0.02,
            "coverage {coverage} outside 95% +/- 2pp"
        );
    }

    #[test]
    fn predict_power_validates_inputs() {
        let cfg = SplineConfig::new(2, 0).unwrap();
        let x = design_matrix(ndarray::arr2(&[[0.5, 0.5, 0.5]]).view(), &cfg).unwrap();
        let coeffs = uniform_coeff_draws(x.ncols());
        assert!(predict_power(&coeffs, &x, &[1.5], 10, 0).is_err());
        assert!(predict_power(&coeffs, &x, &[0.5], 0, 0).is_err());
        let empty = CoeffDraws {
            eta: Array2::zeros((0, x.ncols())),
            zeta: Array2::zeros((0, x.ncols())),
        };
        assert!(predict_power(&empty, &x, &[0.5], 10, 0).is_err());
    }
}
