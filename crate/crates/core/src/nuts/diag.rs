//! Rank-normalized split R-hat and bulk effective sample size.

use ndarray::{Array2, ArrayView3};

use crate::draws::ChainDiagnostics;

/// Rank-normalized split R-hat per parameter. Parameters that are constant
/// across every chain and draw are not computable and yield `None`, as do
/// inputs with fewer than 2 chains or 4 draws per chain.
pub fn split_rhat(draws: ArrayView3<'_, f64>) -> Vec<Option<f64>> {
    let (chains, n, params) = draws.dim();
    (0..params)
        .map(|p| {
            if chains < 2 || n < 4 {
                return None;
            }
            let m = param_matrix(draws, p);
            rhat_max_of_bulk_and_folded(&m)
        })
        .collect()
}

/// Rank-normalized bulk ESS per parameter via Geyer's initial monotone
/// sequence on the combined autocorrelation. `None` for constant
/// parameters or too-short inputs.
pub fn ess_bulk(draws: ArrayView3<'_, f64>) -> Vec<Option<f64>> {
    let (chains, n, params) = draws.dim();
    (0..params)
        .map(|p| {
            if chains < 2 || n < 4 {
                return None;
            }
            let m = param_matrix(draws, p);
            let split = split_chains(&m);
            if is_constant(&split) {
                return None;
            }
            let z = rank_normalize(&split);
            ess_from_chains(&z)
        })
        .collect()
}

/// Bundle both diagnostics; divergence counters are the caller's to fill.
pub fn diagnostics_for(draws: ArrayView3<'_, f64>) -> ChainDiagnostics {
    ChainDiagnostics {
        rhat: split_rhat(draws),
        ess_bulk: ess_bulk(draws),
        divergences: 0,
        treedepth_hits: 0,
    }
}

fn param_matrix(draws: ArrayView3<'_, f64>, p: usize) -> Array2<f64> {
    let (chains, n, _) = draws.dim();
    let mut out = Array2::zeros((chains, n));
    for c in 0..chains {
        for d in 0..n {
            out[(c, d)] = draws[(c, d, p)];
        }
    }
    out
}

fn is_constant(m: &Array2<f64>) -> bool {
    let first = m[(0, 0)];
    m.iter().all(|&v| v == first)
}

/// Split every chain in half (dropping the middle draw when odd).
fn split_chains(m: &Array2<f64>) -> Array2<f64> {
    let (chains, n) = m.dim();
    let half = n / 2;
    let mut out = Array2::zeros((2 * chains, half));
    for c in 0..chains {
        for i in 0..half {
            out[(2 * c, i)] = m[(c, i)];
            out[(2 * c + 1, i)] = m[(c, n - half + i)];
        }
    }
    out
}

/// Pooled average ranks mapped through the normal quantile function.
fn rank_normalize(m: &Array2<f64>) -> Array2<f64> {
    let (chains, n) = m.dim();
    let total = chains * n;
    let mut order: Vec<usize> = (0..total).collect();
    let flat: Vec<f64> = m.iter().copied().collect();
    order.sort_by(|&a, &b| flat[a].partial_cmp(&flat[b]).unwrap());

    let mut ranks = vec![0.0; total];
    let mut i = 0;
    while i < total {
        let mut j = i;
        while j + 1 < total && flat[order[j + 1]] == flat[order[i]] {
            j += 1;
        }
        // Average rank for ties, 1-based.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }

    let s = total as f64;
    let mut z = Array2::zeros((chains, n));
    for c in 0..chains {
        for d in 0..n {
            let r = ranks[c * n + d];
            z[(c, d)] = inv_phi((r - 0.375) / (s + 0.25));
        }
    }
    z
}

fn rhat_max_of_bulk_and_folded(m: &Array2<f64>) -> Option<f64> {
    let split = split_chains(m);
    if is_constant(&split) {
        return None;
    }
    let bulk = basic_rhat(&rank_normalize(&split));

    let mut flat: Vec<f64> = split.iter().copied().collect();
    flat.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = crate::draws::quantile_sorted(&flat, 0.5);
    let folded = split.mapv(|v| (v - median).abs());
    let folded_rhat = if is_constant(&folded) {
        None
    } else {
        basic_rhat(&rank_normalize(&folded))
    };

    match (bulk, folded_rhat) {
        (Some(a), Some(b)) => Some(a.max(b)),
        (Some(a), None) => Some(a),
        (None, b) => b,
    }
}

/// Classic between/within variance ratio on already-transformed chains.
fn basic_rhat(z: &Array2<f64>) -> Option<f64> {
    let (m, n) = z.dim();
    let nf = n as f64;
    let means: Vec<f64> = (0..m).map(|c| z.row(c).sum() / nf).collect();
    let vars: Vec<f64> = (0..m)
        .map(|c| {
            z.row(c).iter().map(|v| (v - means[c]).powi(2)).sum::<f64>() / (nf - 1.0)
        })
        .collect();
    let w: f64 = vars.iter().sum::<f64>() / m as f64;
    if w <= 0.0 {
        return None;
    }
    let grand = means.iter().sum::<f64>() / m as f64;
    let b_over_n =
        means.iter().map(|v| (v - grand).powi(2)).sum::<f64>() / (m as f64 - 1.0);
    let var_plus = (nf - 1.0) / nf * w + b_over_n;
    Some((var_plus / w).sqrt())
}

/// Geyer initial-monotone-sequence ESS on transformed split chains.
fn ess_from_chains(z: &Array2<f64>) -> Option<f64> {
    let (m, n) = z.dim();
    let nf = n as f64;
    let total = (m * n) as f64;

    let means: Vec<f64> = (0..m).map(|c| z.row(c).sum() / nf).collect();
    // Autocovariance with divisor n, per chain, computed lazily by lag.
    let acov = |c: usize, t: usize| -> f64 {
        let row = z.row(c);
        let mut acc = 0.0;
        for i in 0..n - t {
            acc += (row[i] - means[c]) * (row[i + t] - means[c]);
        }
        acc / nf
    };

    let acov0: Vec<f64> = (0..m).map(|c| acov(c, 0)).collect();
    let w: f64 = acov0.iter().map(|v| v * nf / (nf - 1.0)).sum::<f64>() / m as f64;
    if w <= 0.0 {
        return None;
    }
    let grand = means.iter().sum::<f64>() / m as f64;
    let b_over_n =
        means.iter().map(|v| (v - grand).powi(2)).sum::<f64>() / (m as f64 - 1.0);
    let var_plus = (nf - 1.0) / nf * w + b_over_n;

    let rho = |t: usize| -> f64 {
        let mean_acov = (0..m).map(|c| acov(c, t)).sum::<f64>() / m as f64;
        1.0 - (w - mean_acov) / var_plus
    };

    // Sum consecutive-lag pairs while positive, enforcing monotone decay.
    let mut pair_sum = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let pair = rho(t) + rho(t + 1);
        if pair <= 0.0 {
            break;
        }
        pair_sum += pair.min(prev_pair);
        prev_pair = pair.min(prev_pair);
        t += 2;
    }
    let mut tau = -1.0 + 2.0 * pair_sum;
    // Super-efficient (antithetic) chains are allowed, but cap the implied
    // ESS at total * log10(total).
    tau = tau.max(1.0 / total.log10());
    Some(total / tau)
}

// Inverse standard-normal CDF (Acklam's rational approximation, ~1e-9
// relative error; ample for rank transforms).
fn inv_phi(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}
