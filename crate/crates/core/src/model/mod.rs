//! Model variants over the B-spline beta regression likelihood: independent
//! per-turbine fits, a single shared fit, a partially-pooled hierarchy, and
//! a spatial metamodel mapping turbine coordinates to coefficients.

mod pack;
mod posterior;
mod predict;

pub use pack::{pack, param_count, param_index, unpack, UnpackedParams};
pub use posterior::{grad_log_posterior, log_posterior, log_posterior_and_grad, PosteriorTarget};
pub use predict::{
    coefficient_draws, metamodel_predict_coeffs, predict_power, predictive_mu_phi, CoeffDraws,
    PredictTarget, PredictionRow,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::splines::{DesignMatrix, SplineConfig};

/// One turbine with normalized farm coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turbine {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub is_training: bool,
}

/// Turbine ids and normalized positions, with training membership flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Turbine>", into = "Vec<Turbine>")]
pub struct FarmLayout {
    turbines: Vec<Turbine>,
}

impl TryFrom<Vec<Turbine>> for FarmLayout {
    type Error = Error;
    fn try_from(turbines: Vec<Turbine>) -> Result<Self> {
        FarmLayout::new(turbines)
    }
}

impl From<FarmLayout> for Vec<Turbine> {
    fn from(layout: FarmLayout) -> Self {
        layout.turbines
    }
}

impl FarmLayout {
    pub fn new(turbines: Vec<Turbine>) -> Result<Self> {
        if turbines.is_empty() {
            return Err(Error::config("layout must contain at least one turbine"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for t in &turbines {
            if !seen.insert(t.id.as_str()) {
                return Err(Error::config(format!("duplicate turbine id `{}`", t.id)));
            }
            if t.id.contains(',') {
                return Err(Error::config(format!(
                    "turbine id `{}` may not contain commas",
                    t.id
                )));
            }
            let in_unit = |v: f64| (0.0..=1.0).contains(&v);
            if !in_unit(t.x) || !in_unit(t.y) {
                return Err(Error::config(format!(
                    "turbine `{}` coordinates ({}, {}) outside [0, 1]",
                    t.id, t.x, t.y
                )));
            }
        }
        if !turbines.iter().any(|t| t.is_training) {
            return Err(Error::config("at least one training turbine is required"));
        }
        Ok(FarmLayout { turbines })
    }

    pub fn turbines(&self) -> &[Turbine] {
        &self.turbines
    }

    pub fn training(&self) -> impl Iterator<Item = &Turbine> {
        self.turbines.iter().filter(|t| t.is_training)
    }

    pub fn n_training(&self) -> usize {
        self.training().count()
    }

    pub fn get(&self, id: &str) -> Option<&Turbine> {
        self.turbines.iter().find(|t| t.id == id)
    }

    /// Mark every k-th turbine (in layout order) as training.
    pub fn with_every_kth_training(mut self, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::config("training stride must be positive"));
        }
        for (i, t) in self.turbines.iter_mut().enumerate() {
            t.is_training = i % k == 0;
        }
        Ok(self)
    }

    /// Mark an explicit id list as training.
    pub fn with_training_ids(mut self, ids: &[String]) -> Result<Self> {
        for id in ids {
            if !self.turbines.iter().any(|t| &t.id == id) {
                return Err(Error::config(format!("unknown training turbine `{id}`")));
            }
        }
        for t in self.turbines.iter_mut() {
            t.is_training = ids.contains(&t.id);
        }
        FarmLayout::new(self.turbines)
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "turbine_id,x,y,is_training")?;
        for t in &self.turbines {
            writeln!(w, "{},{},{},{}", t.id, t.x, t.y, t.is_training)?;
        }
        Ok(())
    }

    pub fn read_csv<R: std::io::BufRead>(r: R) -> Result<Self> {
        let mut turbines = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(Error::Io)?;
            if i == 0 {
                if line.trim_end() != "turbine_id,x,y,is_training" {
                    return Err(Error::Parse {
                        line: 1,
                        message: "expected header `turbine_id,x,y,is_training`".to_string(),
                    });
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 4 {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected 4 fields, got {}", parts.len()),
                });
            }
            let parse = |s: &str, what: &str| -> Result<f64> {
                s.parse().map_err(|e| Error::Parse {
                    line: i + 1,
                    message: format!("bad {what}: {e}"),
                })
            };
            turbines.push(Turbine {
                id: parts[0].to_string(),
                x: parse(parts[1], "x")?,
                y: parse(parts[2], "y")?,
                is_training: parts[3].trim() == "true",
            });
        }
        FarmLayout::new(turbines)
    }
}

/// Pooling structure of the fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Independent coefficients per turbine.
    Np,
    /// One shared coefficient pair for every turbine.
    Cp,
    /// Turbine coefficients drawn around population-level means.
    Pp,
    /// Coefficients are first-order linear functions of turbine coordinates.
    Meta,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Np => "np",
            Variant::Cp => "cp",
            Variant::Pp => "pp",
            Variant::Meta => "meta",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "np" => Ok(Variant::Np),
            "cp" => Ok(Variant::Cp),
            "pp" => Ok(Variant::Pp),
            "meta" => Ok(Variant::Meta),
            other => Err(Error::config(format!(
                "unknown variant `{other}` (expected np, cp, pp or meta)"
            ))),
        }
    }
}

/// Full model description: variant, spline basis, farm layout and prior
/// scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub spline: SplineConfig,
    pub layout: FarmLayout,
    #[serde(default = "default_prior_scale")]
    pub prior_scale: f64,
    #[serde(default = "default_pp_sigma_scale")]
    pub pp_sigma_scale: f64,
}

fn default_prior_scale() -> f64 {
    3.0
}

fn default_pp_sigma_scale() -> f64 {
    1.0
}

impl ModelSpec {
    pub fn new(variant: Variant, spline: SplineConfig, layout: FarmLayout) -> Result<Self> {
        let spec = ModelSpec {
            variant,
            spline,
            layout,
            prior_scale: default_prior_scale(),
            pp_sigma_scale: default_pp_sigma_scale(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.prior_scale > 0.0) {
            return Err(Error::config("prior_scale must be positive"));
        }
        if !(self.pp_sigma_scale > 0.0) {
            return Err(Error::config("pp_sigma_scale must be positive"));
        }
        if self.layout.n_training() == 0 {
            return Err(Error::config("at least one training turbine is required"));
        }
        Ok(())
    }

    /// Design-matrix width: three features, each with its own spline block.
    pub fn design_width(&self) -> usize {
        3 * self.spline.basis_per_feature()
    }
}

/// Observations for one turbine: interior targets plus their design matrix
/// and cached logs for the likelihood kernel.
#[derive(Debug, Clone)]
pub struct TurbineData {
    pub turbine_id: String,
    pub y: Vec<f64>,
    pub x: DesignMatrix,
    pub(crate) ln_y: Vec<f64>,
    pub(crate) ln_1my: Vec<f64>,
}

impl TurbineData {
    pub fn new(turbine_id: impl Into<String>, y: Vec<f64>, x: DesignMatrix) -> Result<Self> {
        let turbine_id = turbine_id.into();
        if y.len() != x.nrows() {
            return Err(Error::dimension(format!(
                "turbine `{turbine_id}`: {} targets vs {} design rows",
                y.len(),
                x.nrows()
            )));
        }
        for (i, &v) in y.iter().enumerate() {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::domain(format!(
                    "turbine `{turbine_id}` row {i}: target {v} outside (0, 1); squeeze the dataset first"
                )));
            }
        }
        let ln_y = y.iter().map(|v| v.ln()).collect();
        let ln_1my = y.iter().map(|v| (1.0 - v).ln()).collect();
        Ok(TurbineData {
            turbine_id,
            y,
            x,
            ln_y,
            ln_1my,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }
}

/// Per-turbine data blocks covering exactly the training turbines of a
/// layout, in layout order.
#[derive(Debug, Clone)]
pub struct ModelData {
    blocks: Vec<TurbineData>,
}

impl ModelData {
    pub fn for_spec(spec: &ModelSpec, mut blocks: Vec<TurbineData>) -> Result<Self> {
        let expected: Vec<&str> = spec.layout.training().map(|t| t.id.as_str()).collect();
        let got: std::collections::BTreeSet<&str> =
            blocks.iter().map(|b| b.turbine_id.as_str()).collect();
        let want: std::collections::BTreeSet<&str> = expected.iter().copied().collect();
        if got != want {
            let missing: Vec<&&str> = want.difference(&got).collect();
            let extra: Vec<&&str> = got.difference(&want).collect();
            return Err(Error::config(format!(
                "data blocks do not match training turbines (missing {missing:?}, unexpected {extra:?})"
            )));
        }
        if blocks.len() != expected.len() {
            return Err(Error::config("duplicate turbine data blocks"));
        }
        let width = spec.design_width();
        for b in &blocks {
            if b.x.ncols() != width {
                return Err(Error::dimension(format!(
                    "turbine `{}` design width {} does not match spec width {width}",
                    b.turbine_id,
                    b.x.ncols()
                )));
            }
        }
        blocks.sort_by_key(|b| {
            expected
                .iter()
                .position(|id| *id == b.turbine_id)
                .expect("validated above")
        });
        Ok(ModelData { blocks })
    }

    pub fn blocks(&self) -> &[TurbineData] {
        &self.blocks
    }

    pub fn n_rows(&self) -> usize {
        self.blocks.iter().map(|b| b.n_rows()).sum()
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_rejects_duplicates_and_bad_coords() {
        let t = |id: &str, x: f64| Turbine {
            id: id.to_string(),
            x,
            y: 0.5,
            is_training: true,
        };
        assert!(FarmLayout::new(vec![t("a", 0.1), t("a", 0.2)]).is_err());
        assert!(FarmLayout::new(vec![t("a", 1.5)]).is_err());
        assert!(FarmLayout::new(vec![]).is_err());
        let mut nt = t("a", 0.3);
        nt.is_training = false;
        assert!(FarmLayout::new(vec![nt]).is_err());
    }

    #[test]
    fn every_kth_training_selection() {
        let layout = testutil::grid_layout(2, 4, 4);
        let ids: Vec<&str> = layout.training().map(|t| t.id.as_str()).collect();
        assert_eq!(ids, vec!["T00", "T04"]);
    }

    #[test]
    fn layout_csv_round_trip() {
        let layout = testutil::grid_layout(2, 2, 2);
        let mut buf = Vec::new();
        layout.write_csv(&mut buf).unwrap();
        let back = FarmLayout::read_csv(std::io::Cursor::new(&buf)).unwrap();
        assert_eq!(layout, back);
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("META".parse::<Variant>().unwrap(), Variant::Meta);
        assert!("other".parse::<Variant>().is_err());
    }

    #[test]
    fn turbine_data_rejects_boundary_targets() {
        let x = crate::splines::design_matrix(
            ndarray::Array2::zeros((2, 3)).view(),
            &SplineConfig::six_basis_preset(),
        )
        .unwrap();
        assert!(TurbineData::new("t", vec![0.5, 1.0], x).is_err());
    }

    #[test]
    fn model_data_requires_exact_training_cover() {
        let layout = testutil::grid_layout(1, 4, 2); // training: T00, T02
        let spec = ModelSpec::new(
            Variant::Cp,
            SplineConfig::six_basis_preset(),
            layout,
        )
        .unwrap();
        let blocks = vec![];
        assert!(ModelData::for_spec(&spec, blocks).is_err());
    }
}
