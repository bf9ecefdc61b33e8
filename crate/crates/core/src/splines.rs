//! Clamped B-spline bases and the stacked multi-feature design matrix.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// B-spline configuration for one feature.
///
/// `order` is polynomial degree + 1 (4 = cubic). The basis count per feature
/// follows the clamped Cox-de Boor construction: `interior_knots + order`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSplineConfig", into = "RawSplineConfig")]
pub struct SplineConfig {
    order: usize,
    interior_knots: usize,
    basis_per_feature: usize,
    domain: (f64, f64),
}

#[derive(Serialize, Deserialize)]
struct RawSplineConfig {
    order: usize,
    interior_knots: usize,
    #[serde(default)]
    basis_per_feature: Option<usize>,
    #[serde(default = "unit_domain")]
    domain: (f64, f64),
}

fn unit_domain() -> (f64, f64) {
    (0.0, 1.0)
}

impl TryFrom<RawSplineConfig> for SplineConfig {
    type Error = Error;

    fn try_from(raw: RawSplineConfig) -> Result<Self> {
        let cfg = SplineConfig::with_domain(raw.order, raw.interior_knots, raw.domain)?;
        if let Some(b) = raw.basis_per_feature {
            if b != cfg.basis_per_feature {
                return Err(Error::config(format!(
                    "basis_per_feature {b} inconsistent with order {} + interior_knots {}",
                    raw.order, raw.interior_knots
                )));
            }
        }
        Ok(cfg)
    }
}

impl From<SplineConfig> for RawSplineConfig {
    fn from(cfg: SplineConfig) -> Self {
        RawSplineConfig {
            order: cfg.order,
            interior_knots: cfg.interior_knots,
            basis_per_feature: Some(cfg.basis_per_feature),
            domain: cfg.domain,
        }
    }
}

impl SplineConfig {
    pub fn new(order: usize, interior_knots: usize) -> Result<Self> {
        Self::with_domain(order, interior_knots, (0.0, 1.0))
    }

    pub fn with_domain(order: usize, interior_knots: usize, domain: (f64, f64)) -> Result<Self> {
        if order < 2 {
            return Err(Error::config(format!(
                "spline order must be at least 2, got {order}"
            )));
        }
        if !(domain.0.is_finite() && domain.1.is_finite() && domain.0 < domain.1) {
            return Err(Error::config(format!(
                "spline domain must be a finite nonempty interval, got [{}, {}]",
                domain.0, domain.1
            )));
        }
        Ok(SplineConfig {
            order,
            interior_knots,
            basis_per_feature: interior_knots + order,
            domain,
        })
    }

    /// Cubic splines with 2 interior knots: 6 basis functions per feature,
    /// so three features give an 18-column design matrix.
    pub fn six_basis_preset() -> Self {
        SplineConfig::new(4, 2).expect("preset is valid")
    }

    /// Cubic splines with 4 interior knots: 8 basis functions per feature.
    pub fn eight_basis_preset() -> Self {
        SplineConfig::new(4, 4).expect("preset is valid")
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn interior_knots(&self) -> usize {
        self.interior_knots
    }

    pub fn basis_per_feature(&self) -> usize {
        self.basis_per_feature
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }
}

impl Default for SplineConfig {
    fn default() -> Self {
        SplineConfig::six_basis_preset()
    }
}

/// Nondecreasing knot sequence with the boundary knots repeated `order` times.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    knots: Vec<f64>,
    order: usize,
}

impl KnotVector {
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn basis_count(&self) -> usize {
        self.knots.len() - self.order
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[0], self.knots[self.knots.len() - 1])
    }
}

/// Build a clamped knot vector with uniformly spaced interior knots.
pub fn make_knots(config: &SplineConfig) -> KnotVector {
    let (lo, hi) = config.domain;
    let k = config.order;
    let m = config.interior_knots;
    let mut knots = Vec::with_capacity(2 * k + m);
    knots.extend(std::iter::repeat(lo).take(k));
    let step = (hi - lo) / (m + 1) as f64;
    for i in 1..=m {
        knots.push(lo + step * i as f64);
    }
    knots.extend(std::iter::repeat(hi).take(k));
    KnotVector { knots, order: k }
}

/// Evaluate all basis functions at `x`, returning a dense vector of length
/// `basis_count`. At most `order` entries are nonzero. Values are
/// nonnegative and sum to one; at the clamped endpoints a single basis
/// function is exactly one. Points outside the domain are rejected, never
/// extrapolated.
pub fn basis_eval(knots: &KnotVector, x: f64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; knots.basis_count()];
    basis_eval_into(knots, x, &mut out)?;
    Ok(out)
}

pub(crate) fn basis_eval_into(knots: &KnotVector, x: f64, out: &mut [f64]) -> Result<()> {
    let (lo, hi) = knots.domain();
    if !(x >= lo && x <= hi) {
        return Err(Error::domain(format!(
            "spline input {x} outside domain [{lo}, {hi}]"
        )));
    }
    let k = knots.order;
    let n = knots.basis_count();
    let t = &knots.knots;

    // Knot span containing x, clamped so the top endpoint lands in the last
    // nonempty span.
    let span = if x >= t[n] {
        n - 1
    } else {
        t.partition_point(|&v| v <= x).max(k) - 1
    };

    // Triangular Cox-de Boor recurrence over the `k` active functions.
    let mut vals = vec![0.0; k];
    let mut left = vec![0.0; k];
    let mut right = vec![0.0; k];
    vals[0] = 1.0;
    for j in 1..k {
        left[j] = x - t[span + 1 - j];
        right[j] = t[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let tmp = vals[r] / denom;
            vals[r] = saved + right[r + 1] * tmp;
            saved = left[j - r] * tmp;
        }
        vals[j] = saved;
    }

    out.iter_mut().for_each(|v| *v = 0.0);
    let first = span + 1 - k;
    out[first..first + k].copy_from_slice(&vals);
    Ok(())
}

/// Row-stacked B-spline expansion of several features.
///
/// Column blocks are aligned with the input feature order; each row's
/// entries within one block sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    values: Array2<f64>,
    feature_blocks: Vec<(usize, usize)>,
}

impl DesignMatrix {
    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn feature_blocks(&self) -> &[(usize, usize)] {
        &self.feature_blocks
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    /// Column labels of the form `f{feature}_b{basis}`, both 1-based.
    pub fn column_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.ncols());
        for (f, &(_, width)) in self.feature_blocks.iter().enumerate() {
            for b in 0..width {
                names.push(format!("f{}_b{}", f + 1, b + 1));
            }
        }
        names
    }

    /// Write the matrix as CSV with a `f{feature}_b{basis}` header.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", self.column_names().join(","))?;
        for row in self.values.rows() {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Build the stacked design matrix for `features` (one column per input
/// feature, all values inside the spline domain).
pub fn design_matrix(features: ArrayView2<'_, f64>, config: &SplineConfig) -> Result<DesignMatrix> {
    let knots = make_knots(config);
    let m = config.basis_per_feature();
    let n_features = features.ncols();
    let n = features.nrows();
    let width = m * n_features;

    let mut bad_rows = Vec::new();
    let (lo, hi) = config.domain;
    for (i, row) in features.rows().into_iter().enumerate() {
        if row.iter().any(|&v| !(v >= lo && v <= hi)) {
            bad_rows.push(i);
        }
    }
    if !bad_rows.is_empty() {
        let shown: Vec<String> = bad_rows.iter().take(10).map(|i| i.to_string()).collect();
        let suffix = if bad_rows.len() > 10 { ", ..." } else { "" };
        return Err(Error::domain(format!(
            "{} feature rows outside [{lo}, {hi}]: rows {}{suffix}",
            bad_rows.len(),
            shown.join(", ")
        )));
    }

    let mut values = Array2::zeros((n, width));
    let mut scratch = vec![0.0; m];
    for (i, row) in features.rows().into_iter().enumerate() {
        for (f, &x) in row.iter().enumerate() {
            basis_eval_into(&knots, x, &mut scratch)?;
            for (b, &v) in scratch.iter().enumerate() {
                values[(i, f * m + b)] = v;
            }
        }
    }
    let feature_blocks = (0..n_features).map(|f| (f * m, m)).collect();
    Ok(DesignMatrix {
        values,
        feature_blocks,
    })
}

/// Wrap an existing matrix as a design matrix with equal-width blocks.
pub(crate) fn design_matrix_from_parts(
    values: Array2<f64>,
    basis_per_feature: usize,
) -> DesignMatrix {
    assert_eq!(values.ncols() % basis_per_feature, 0);
    let blocks = (0..values.ncols() / basis_per_feature)
        .map(|f| (f * basis_per_feature, basis_per_feature))
        .collect();
    DesignMatrix {
        values,
        feature_blocks: blocks,
    }
}
