//! Posterior draw storage with named parameter spans, plus CSV round-trips.

use std::io::{BufRead, Write};

use ndarray::{Array2, Array3, ArrayView1, ArrayView3};

use crate::error::{Error, Result};

/// A named contiguous slice of the packed parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpan {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

/// Ordered set of parameter spans covering a packed vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamIndex {
    spans: Vec<ParamSpan>,
    total: usize,
}

impl ParamIndex {
    pub fn new(names_and_lens: impl IntoIterator<Item = (String, usize)>) -> Self {
        let mut spans = Vec::new();
        let mut start = 0;
        for (name, len) in names_and_lens {
            spans.push(ParamSpan { name, start, len });
            start += len;
        }
        ParamIndex {
            spans,
            total: start,
        }
    }

    /// Single anonymous span, used for raw sampler targets.
    pub fn flat(dim: usize) -> Self {
        ParamIndex::new([("theta".to_string(), dim)])
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn spans(&self) -> &[ParamSpan] {
        &self.spans
    }

    pub fn span(&self, name: &str) -> Result<&ParamSpan> {
        self.spans
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::dimension(format!("no parameter span named `{name}`")))
    }

    /// Span containing the flat index.
    pub fn span_of(&self, flat: usize) -> Option<&ParamSpan> {
        self.spans
            .iter()
            .find(|s| flat >= s.start && flat < s.start + s.len)
    }

    /// One label per scalar parameter: `name` for singleton spans,
    /// `name[i]` otherwise.
    pub fn scalar_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.total);
        for s in &self.spans {
            if s.len == 1 {
                names.push(s.name.clone());
            } else {
                for i in 0..s.len {
                    names.push(format!("{}[{i}]", s.name));
                }
            }
        }
        names
    }
}

/// Per-parameter convergence diagnostics; `None` marks parameters whose
/// statistic is not computable (constant across all draws).
#[derive(Debug, Clone, PartialEq)]
pub struct ChainDiagnostics {
    pub rhat: Vec<Option<f64>>,
    pub ess_bulk: Vec<Option<f64>>,
    pub divergences: usize,
    pub treedepth_hits: usize,
}

impl ChainDiagnostics {
    pub fn max_rhat(&self) -> Option<f64> {
        self.rhat
            .iter()
            .flatten()
            .copied()
            .fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v))))
    }

    pub fn min_ess(&self) -> Option<f64> {
        self.ess_bulk
            .iter()
            .flatten()
            .copied()
            .fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.min(v))))
    }

    pub fn summary_line(&self) -> String {
        let rhat = self
            .max_rhat()
            .map_or("n/a".to_string(), |v| format!("{v:.4}"));
        let ess = self
            .min_ess()
            .map_or("n/a".to_string(), |v| format!("{v:.1}"));
        format!(
            "max rhat {rhat}, min ess_bulk {ess}, divergences {}, treedepth hits {}",
            self.divergences, self.treedepth_hits
        )
    }

    /// CSV table `parameter,rhat,ess_bulk`; non-computable entries are empty.
    pub fn write_csv<W: Write>(&self, names: &[String], mut w: W) -> Result<()> {
        writeln!(w, "parameter,rhat,ess_bulk")?;
        for (i, name) in names.iter().enumerate() {
            let fmt = |v: &Option<f64>| v.map_or(String::new(), |x| x.to_string());
            writeln!(w, "{name},{},{}", fmt(&self.rhat[i]), fmt(&self.ess_bulk[i]))?;
        }
        Ok(())
    }
}

/// Posterior draws: `chains x draws x params`, with the pack/unpack index
/// and sampler diagnostics attached.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    draws: Array3<f64>,
    index: ParamIndex,
    diagnostics: ChainDiagnostics,
}

impl PosteriorDraws {
    pub fn new(draws: Array3<f64>, index: ParamIndex, diagnostics: ChainDiagnostics) -> Self {
        assert_eq!(draws.dim().2, index.total(), "index does not match draws");
        PosteriorDraws {
            draws,
            index,
            diagnostics,
        }
    }

    pub fn n_chains(&self) -> usize {
        self.draws.dim().0
    }

    pub fn n_draws(&self) -> usize {
        self.draws.dim().1
    }

    pub fn n_params(&self) -> usize {
        self.draws.dim().2
    }

    pub fn view(&self) -> ArrayView3<'_, f64> {
        self.draws.view()
    }

    pub fn index(&self) -> &ParamIndex {
        &self.index
    }

    pub fn diagnostics(&self) -> &ChainDiagnostics {
        &self.diagnostics
    }

    /// Draws of one scalar parameter pooled across chains, chain-major.
    pub fn pooled(&self, param: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_chains() * self.n_draws());
        for c in 0..self.n_chains() {
            out.extend(self.draws.slice(ndarray::s![c, .., param]).iter().copied());
        }
        out
    }

    /// Flattened parameter vectors, one row per pooled draw (chain-major).
    pub fn pooled_matrix(&self) -> Array2<f64> {
        let (c, d, p) = self.draws.dim();
        let mut out = Array2::zeros((c * d, p));
        for chain in 0..c {
            for draw in 0..d {
                out.row_mut(chain * d + draw)
                    .assign(&self.draws.slice(ndarray::s![chain, draw, ..]));
            }
        }
        out
    }

    pub fn param_mean(&self, param: usize) -> f64 {
        let v = self.pooled(param);
        v.iter().sum::<f64>() / v.len() as f64
    }

    pub fn param_sd(&self, param: usize) -> f64 {
        let v = self.pooled(param);
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    }

    /// Pooled quantile with linear interpolation between order statistics.
    pub fn param_quantile(&self, param: usize, q: f64) -> f64 {
        let mut v = self.pooled(param);
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        quantile_sorted(&v, q)
    }

    /// Columnar CSV: `chain,draw` followed by one column per scalar
    /// parameter.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let names = self.index.scalar_names();
        writeln!(w, "chain,draw,{}", names.join(","))?;
        for c in 0..self.n_chains() {
            for d in 0..self.n_draws() {
                let mut line = String::with_capacity(16 * (2 + self.n_params()));
                line.push_str(&c.to_string());
                line.push(',');
                line.push_str(&d.to_string());
                for p in 0..self.n_params() {
                    line.push(',');
                    line.push_str(&self.draws[(c, d, p)].to_string());
                }
                writeln!(w, "{line}")?;
            }
        }
        Ok(())
    }

    /// Read draws written by [`Self::write_csv`]. The header must match the
    /// expected index exactly; diagnostics are recomputed from the draws.
    pub fn read_csv<R: BufRead>(r: R, index: ParamIndex) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: "empty draws file".to_string(),
            })?
            .map_err(Error::Io)?;
        let expected = format!("chain,draw,{}", index.scalar_names().join(","));
        if header.trim_end() != expected {
            return Err(Error::Parse {
                line: 1,
                message: "draws header does not match the model parameter index".to_string(),
            });
        }
        let p = index.total();
        let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line.map_err(Error::Io)?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let parse_err = |message: String| Error::Parse {
                line: lineno + 2,
                message,
            };
            let chain: usize = parts
                .next()
                .ok_or_else(|| parse_err("missing chain".into()))?
                .parse()
                .map_err(|e| parse_err(format!("bad chain index: {e}")))?;
            let _draw: usize = parts
                .next()
                .ok_or_else(|| parse_err("missing draw".into()))?
                .parse()
                .map_err(|e| parse_err(format!("bad draw index: {e}")))?;
            let vals: Vec<f64> = parts
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| parse_err(format!("bad value: {e}")))?;
            if vals.len() != p {
                return Err(parse_err(format!(
                    "expected {p} parameter values, got {}",
                    vals.len()
                )));
            }
            rows.push((chain, vals));
        }
        let n_chains = rows.iter().map(|(c, _)| c + 1).max().unwrap_or(0);
        if n_chains == 0 {
            return Err(Error::Parse {
                line: 2,
                message: "no draws in file".to_string(),
            });
        }
        let per_chain = rows.len() / n_chains;
        if per_chain * n_chains != rows.len() {
            return Err(Error::Parse {
                line: rows.len() + 1,
                message: "chains have unequal draw counts".to_string(),
            });
        }
        let mut draws = Array3::zeros((n_chains, per_chain, p));
        let mut cursor = vec![0usize; n_chains];
        for (chain, vals) in rows {
            let d = cursor[chain];
            cursor[chain] += 1;
            for (j, v) in vals.into_iter().enumerate() {
                draws[(chain, d, j)] = v;
            }
        }
        let diagnostics = crate::nuts::diagnostics_for(draws.view());
        Ok(PosteriorDraws::new(draws, index, diagnostics))
    }
}

/// Quantile of an ascending-sorted slice, linear interpolation between
/// order statistics.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Arithmetic mean.
pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub(crate) fn sample_sd(values: ArrayView1<'_, f64>) -> f64 {
    let n = values.len() as f64;
    let m = values.sum() / n;
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}
