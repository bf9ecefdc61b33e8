//! Multinomial No-U-Turn sampler with dual-averaging step-size adaptation
//! and windowed diagonal mass-matrix estimation.

mod diag;

pub use diag::{diagnostics_for, ess_bulk, split_rhat};

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::draws::{ChainDiagnostics, ParamIndex, PosteriorDraws};
use crate::error::{Error, Result};

/// Unnormalized log-density with gradient, callable from several chains at
/// once.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Log-density at `theta`; the gradient is written into `grad`.
    /// Non-finite results are treated as divergences by the sampler.
    fn logp_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup: usize,
    pub draws: usize,
    pub target_accept: f64,
    pub max_treedepth: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            chains: 4,
            warmup: 2000,
            draws: 2000,
            target_accept: 0.8,
            max_treedepth: 10,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains < 1 {
            return Err(Error::config("at least one chain is required"));
        }
        if self.warmup < 1 || self.draws < 1 {
            return Err(Error::config("warmup and draws must be positive"));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::config(format!(
                "target_accept must lie in (0,1), got {}",
                self.target_accept
            )));
        }
        if self.max_treedepth < 1 {
            return Err(Error::config("max_treedepth must be positive"));
        }
        Ok(())
    }
}

/// Energy error beyond which a transition is declared divergent.
const DIVERGENCE_THRESHOLD: f64 = 1000.0;

#[derive(Clone)]
struct State {
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
}

/// One symplectic leapfrog step with a diagonal mass matrix (`inv_mass` is
/// the inverse metric, i.e. estimated posterior variances). A non-finite
/// density or gradient surfaces as `divergent`, not as an error.
pub struct LeapfrogStep {
    pub position: Vec<f64>,
    pub momentum: Vec<f64>,
    pub log_density: f64,
    pub divergent: bool,
}

pub fn leapfrog(
    target: &impl LogDensity,
    position: &[f64],
    momentum: &[f64],
    step_size: f64,
    inv_mass: &[f64],
) -> LeapfrogStep {
    let mut grad = vec![0.0; target.dim()];
    let logp = target.logp_grad(position, &mut grad);
    let state = State {
        q: position.to_vec(),
        p: momentum.to_vec(),
        grad,
        logp,
    };
    let stepped = leapfrog_state(target, &state, step_size, inv_mass);
    let divergent = !stepped.logp.is_finite() || stepped.grad.iter().any(|g| !g.is_finite());
    LeapfrogStep {
        position: stepped.q,
        momentum: stepped.p,
        log_density: stepped.logp,
        divergent,
    }
}

fn leapfrog_state(
    target: &impl LogDensity,
    from: &State,
    step: f64,
    inv_mass: &[f64],
) -> State {
    let dim = from.q.len();
    let mut p = from.p.clone();
    for i in 0..dim {
        p[i] += 0.5 * step * from.grad[i];
    }
    let mut q = from.q.clone();
    for i in 0..dim {
        q[i] += step * inv_mass[i] * p[i];
    }
    let mut grad = vec![0.0; dim];
    let logp = target.logp_grad(&q, &mut grad);
    if logp.is_finite() {
        for i in 0..dim {
            p[i] += 0.5 * step * grad[i];
        }
    }
    State { q, p, grad, logp }
}

fn kinetic(p: &[f64], inv_mass: &[f64]) -> f64 {
    0.5 * p
        .iter()
        .zip(inv_mass.iter())
        .map(|(pi, mi)| mi * pi * pi)
        .sum::<f64>()
}

fn hamiltonian(state: &State, inv_mass: &[f64]) -> f64 {
    -state.logp + kinetic(&state.p, inv_mass)
}

fn is_turning(minus: &State, plus: &State, inv_mass: &[f64]) -> bool {
    let mut dot_minus = 0.0;
    let mut dot_plus = 0.0;
    for i in 0..minus.q.len() {
        let dq = plus.q[i] - minus.q[i];
        dot_minus += dq * inv_mass[i] * minus.p[i];
        dot_plus += dq * inv_mass[i] * plus.p[i];
    }
    dot_minus < 0.0 || dot_plus < 0.0
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    hi + (lo - hi).exp().ln_1p()
}

struct Subtree {
    minus: State,
    plus: State,
    sample: Vec<f64>,
    sample_logp: f64,
    log_sum_weight: f64,
    sum_accept: f64,
    n_leapfrog: usize,
    divergent: bool,
    turning: bool,
}

#[allow(clippy::too_many_arguments)]
fn build_tree(
    target: &impl LogDensity,
    depth: usize,
    from: &State,
    direction: f64,
    h0: f64,
    step_size: f64,
    inv_mass: &[f64],
    rng: &mut ChaCha8Rng,
) -> Subtree {
    if depth == 0 {
        let state = leapfrog_state(target, from, direction * step_size, inv_mass);
        let h = hamiltonian(&state, inv_mass);
        let delta = h - h0;
        let divergent = !delta.is_finite() || delta > DIVERGENCE_THRESHOLD;
        let accept = if delta.is_finite() {
            (-delta).min(0.0).exp()
        } else {
            0.0
        };
        return Subtree {
            sample: state.q.clone(),
            sample_logp: state.logp,
            minus: state.clone(),
            plus: state,
            log_sum_weight: if divergent { f64::NEG_INFINITY } else { -delta },
            sum_accept: accept,
            n_leapfrog: 1,
            divergent,
            turning: false,
        };
    }

    let mut first = build_tree(
        target,
        depth - 1,
        from,
        direction,
        h0,
        step_size,
        inv_mass,
        rng,
    );
    if first.divergent || first.turning {
        return first;
    }
    let outer = if direction > 0.0 {
        first.plus.clone()
    } else {
        first.minus.clone()
    };
    let second = build_tree(
        target,
        depth - 1,
        &outer,
        direction,
        h0,
        step_size,
        inv_mass,
        rng,
    );

    first.sum_accept += second.sum_accept;
    first.n_leapfrog += second.n_leapfrog;
    if second.divergent || second.turning {
        first.divergent |= second.divergent;
        first.turning |= second.turning;
        return first;
    }

    // Unbiased multinomial sample across the two halves.
    let total = log_add_exp(first.log_sum_weight, second.log_sum_weight);
    if total > f64::NEG_INFINITY
        && rng.gen::<f64>().ln() < second.log_sum_weight - total
    {
        first.sample = second.sample;
        first.sample_logp = second.sample_logp;
    }
    first.log_sum_weight = total;
    if direction > 0.0 {
        first.plus = second.plus;
    } else {
        first.minus = second.minus;
    }
    first.turning = is_turning(&first.minus, &first.plus, inv_mass);
    first
}

struct TransitionInfo {
    accept_stat: f64,
    divergent: bool,
    hit_max_depth: bool,
}

fn transition(
    target: &impl LogDensity,
    state: &mut State,
    step_size: f64,
    inv_mass: &[f64],
    max_treedepth: usize,
    rng: &mut ChaCha8Rng,
) -> TransitionInfo {
    // Fresh momentum: p ~ N(0, M) with M the inverse of `inv_mass`.
    for i in 0..state.p.len() {
        let z: f64 = StandardNormal.sample(rng);
        state.p[i] = z / inv_mass[i].sqrt();
    }
    let h0 = hamiltonian(state, inv_mass);

    let mut minus = state.clone();
    let mut plus = state.clone();
    let mut sample = state.q.clone();
    let mut sample_logp = state.logp;
    let mut traj_log_weight = 0.0;
    let mut sum_accept = 0.0;
    let mut n_leapfrog = 0usize;
    let mut divergent = false;
    let mut hit_max_depth = true;

    for depth in 0..max_treedepth {
        let direction: f64 = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let from = if direction > 0.0 { &plus } else { &minus };
        let sub = build_tree(
            target, depth, from, direction, h0, step_size, inv_mass, rng,
        );
        sum_accept += sub.sum_accept;
        n_leapfrog += sub.n_leapfrog;
        if sub.divergent {
            divergent = true;
            hit_max_depth = false;
            break;
        }
        if sub.turning {
            hit_max_depth = false;
            break;
        }
        // Biased progressive sampling favouring the fresh subtree.
        if rng.gen::<f64>().ln() < sub.log_sum_weight - traj_log_weight {
            sample = sub.sample.clone();
            sample_logp = sub.sample_logp;
        }
        traj_log_weight = log_add_exp(traj_log_weight, sub.log_sum_weight);
        if direction > 0.0 {
            plus = sub.plus;
        } else {
            minus = sub.minus;
        }
        if is_turning(&minus, &plus, inv_mass) {
            hit_max_depth = false;
            break;
        }
    }

    state.q = sample;
    state.logp = sample_logp;
    target.logp_grad(&state.q, &mut state.grad);

    TransitionInfo {
        accept_stat: if n_leapfrog > 0 {
            sum_accept / n_leapfrog as f64
        } else {
            0.0
        },
        divergent,
        hit_max_depth,
    }
}

// Nesterov dual averaging on log step size.
struct DualAveraging {
    mu: f64,
    log_eps: f64,
    log_eps_bar: f64,
    h_bar: f64,
    m: f64,
    target: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(eps0: f64, target: f64) -> Self {
        DualAveraging {
            mu: (10.0 * eps0).ln(),
            log_eps: eps0.ln(),
            log_eps_bar: 0.0,
            h_bar: 0.0,
            m: 0.0,
            target,
        }
    }

    fn update(&mut self, accept: f64) {
        self.m += 1.0;
        let frac = 1.0 / (self.m + Self::T0);
        self.h_bar = (1.0 - frac) * self.h_bar + frac * (self.target - accept);
        self.log_eps = self.mu - self.m.sqrt() / Self::GAMMA * self.h_bar;
        let w = self.m.powf(-Self::KAPPA);
        self.log_eps_bar = w * self.log_eps + (1.0 - w) * self.log_eps_bar;
    }

    fn current(&self) -> f64 {
        self.log_eps.exp()
    }

    fn averaged(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Welford {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn add(&mut self, x: &[f64]) {
        self.n += 1;
        let nf = self.n as f64;
        for i in 0..x.len() {
            let d = x[i] - self.mean[i];
            self.mean[i] += d / nf;
            self.m2[i] += d * (x[i] - self.mean[i]);
        }
    }

    /// Regularized variance estimate, shrunk toward a small identity.
    fn regularized_variance(&self) -> Option<Vec<f64>> {
        if self.n < 2 {
            return None;
        }
        let nf = self.n as f64;
        let shrink = nf / (nf + 5.0);
        Some(
            self.m2
                .iter()
                .map(|m2| (shrink * m2 / (nf - 1.0) + 1e-3 * (1.0 - shrink)).max(1e-12))
                .collect(),
        )
    }
}

// Stan-style warmup phases: a step-size-only opening buffer, doubling
// variance-estimation windows, and a closing step-size buffer.
fn mass_window_ends(warmup: usize) -> (usize, Vec<usize>) {
    let (mut init, mut term, mut base) = (75usize, 50usize, 25usize);
    if warmup < 20 {
        return (warmup, Vec::new());
    }
    if warmup < init + term + base {
        init = (warmup as f64 * 0.15) as usize;
        term = (warmup as f64 * 0.10) as usize;
        base = warmup.saturating_sub(init + term);
        if base < 2 {
            return (warmup, Vec::new());
        }
    }
    let mut ends = Vec::new();
    let last = warmup - term;
    let mut start = init;
    let mut size = base;
    loop {
        let mut end = start + size;
        if end + 2 * size > last {
            end = last;
        }
        ends.push(end);
        if end >= last {
            break;
        }
        start = end;
        size *= 2;
    }
    (init, ends)
}

fn find_initial_step(
    target: &impl LogDensity,
    state: &State,
    inv_mass: &[f64],
    rng: &mut ChaCha8Rng,
) -> f64 {
    let mut trial = state.clone();
    for i in 0..trial.p.len() {
        let z: f64 = StandardNormal.sample(rng);
        trial.p[i] = z / inv_mass[i].sqrt();
    }
    let h0 = hamiltonian(&trial, inv_mass);
    let mut eps = 1.0;
    let accept_of = |eps: f64| -> f64 {
        let s = leapfrog_state(target, &trial, eps, inv_mass);
        let h = hamiltonian(&s, inv_mass);
        if h.is_finite() {
            (h0 - h).exp()
        } else {
            0.0
        }
    };
    let dir: f64 = if accept_of(eps) > 0.5 { 1.0 } else { -1.0 };
    for _ in 0..100 {
        let a = accept_of(eps);
        if (dir > 0.0 && a <= 0.5) || (dir < 0.0 && a >= 0.5) {
            break;
        }
        eps *= 2f64.powf(dir);
        if !(1e-10..=1e10).contains(&eps) {
            break;
        }
    }
    eps.clamp(1e-10, 1e10)
}

struct ChainOutput {
    draws: Vec<Vec<f64>>,
    divergences: usize,
    treedepth_hits: usize,
}

fn run_chain(
    target: &impl LogDensity,
    config: &SamplerConfig,
    chain_idx: usize,
) -> Result<ChainOutput> {
    let dim = target.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(chain_idx as u64 + 1);

    // Jittered start, retried if the density is not finite there.
    let mut state = None;
    for _ in 0..100 {
        let q: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut grad = vec![0.0; dim];
        let logp = target.logp_grad(&q, &mut grad);
        if logp.is_finite() && grad.iter().all(|g| g.is_finite()) {
            state = Some(State {
                q,
                p: vec![0.0; dim],
                grad,
                logp,
            });
            break;
        }
    }
    let mut state = state.ok_or_else(|| {
        Error::fit("could not find a finite initial point in [-2, 2]^dim".to_string())
    })?;

    let mut inv_mass = vec![1.0; dim];
    let mut eps = find_initial_step(target, &state, &inv_mass, &mut rng);
    let mut da = DualAveraging::new(eps, config.target_accept);
    let (_init_buffer, window_ends) = mass_window_ends(config.warmup);
    let window_start = window_ends.first().map(|_| _init_buffer);
    let mut welford = Welford::new(dim);
    let mut next_window = 0usize;
    let mut warmup_divergences = 0usize;

    for m in 0..config.warmup {
        let info = transition(
            target,
            &mut state,
            da.current(),
            &inv_mass,
            config.max_treedepth,
            &mut rng,
        );
        da.update(info.accept_stat);
        if info.divergent {
            warmup_divergences += 1;
        }
        if let Some(start) = window_start {
            if m >= start && next_window < window_ends.len() {
                welford.add(&state.q);
                if m + 1 == window_ends[next_window] {
                    if let Some(var) = welford.regularized_variance() {
                        inv_mass = var;
                    }
                    welford = Welford::new(dim);
                    next_window += 1;
                    eps = find_initial_step(target, &state, &inv_mass, &mut rng);
                    da = DualAveraging::new(eps, config.target_accept);
                }
            }
        }
    }
    if warmup_divergences == config.warmup {
        return Err(Error::fit(format!(
            "chain {chain_idx}: every warmup transition diverged ({warmup_divergences}/{})",
            config.warmup
        )));
    }
    eps = da.averaged();

    let mut draws = Vec::with_capacity(config.draws);
    let mut divergences = 0usize;
    let mut treedepth_hits = 0usize;
    for _ in 0..config.draws {
        let info = transition(
            target,
            &mut state,
            eps,
            &inv_mass,
            config.max_treedepth,
            &mut rng,
        );
        if info.divergent {
            divergences += 1;
        }
        if info.hit_max_depth {
            treedepth_hits += 1;
        }
        draws.push(state.q.clone());
    }

    Ok(ChainOutput {
        draws,
        divergences,
        treedepth_hits,
    })
}

/// Run NUTS with the given named parameter layout. Chains execute in
/// parallel on independent RNG streams derived from the seed; given
/// identical config and target, the output is bit-reproducible.
pub fn nuts_sample_indexed(
    target: &(impl LogDensity + Sync),
    config: &SamplerConfig,
    index: ParamIndex,
) -> Result<PosteriorDraws> {
    config.validate()?;
    if target.dim() < 1 {
        return Err(Error::config("target dimension must be at least 1"));
    }
    if index.total() != target.dim() {
        return Err(Error::dimension(format!(
            "parameter index covers {} scalars but the target has dimension {}",
            index.total(),
            target.dim()
        )));
    }

    let outputs: Vec<Result<ChainOutput>> = (0..config.chains)
        .into_par_iter()
        .map(|c| run_chain(target, config, c))
        .collect();

    let mut chains = Vec::with_capacity(config.chains);
    for out in outputs {
        chains.push(out?);
    }

    let mut draws = Array3::zeros((config.chains, config.draws, target.dim()));
    for (c, chain) in chains.iter().enumerate() {
        for (d, q) in chain.draws.iter().enumerate() {
            for (j, &v) in q.iter().enumerate() {
                draws[(c, d, j)] = v;
            }
        }
    }
    let mut diagnostics: ChainDiagnostics = diag::diagnostics_for(draws.view());
    diagnostics.divergences = chains.iter().map(|c| c.divergences).sum();
    diagnostics.treedepth_hits = chains.iter().map(|c| c.treedepth_hits).sum();
    Ok(PosteriorDraws::new(draws, index, diagnostics))
}

/// Run NUTS with an anonymous flat parameter vector.
pub fn nuts_sample(
    target: &(impl LogDensity + Sync),
    config: &SamplerConfig,
) -> Result<PosteriorDraws> {
    nuts_sample_indexed(target, config, ParamIndex::flat(target.dim()))
}
