//! Approximate message passing (TAP form) for the RBM posterior.
//!
//! Only node quantities are stored: `m_i^t` and `G_a^{t-1}`, `G_a^{t-2}`, so the
//! state is `O(N + M)` on top of the data. One step reads
//!
//! ```text
//! G_a^{t-1} = (1/sqrt N) sum_i sigma_i^a m_i^{t-1} - beta (1 - Q^{t-1}) tanh(beta G_a^{t-2})
//! m_i^t     = tanh( sum_b (beta sigma_i^b / sqrt N) tanh(beta G_b^{t-1})
//!                   - (beta^2 m_i^{t-1} / N) sum_b (1 - tanh^2(beta G_b^{t-1})) )
//! ```
//!
//! with `G^{-1} = 0`.

use crate::error::{Error, Result};
use crate::model::{Dataset, Marginals, ModelParams};
use crate::mp::{ConvergenceReport, InitKind, MpOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct AmpState {
    pub m: Vec<f64>,
    pub m_prev: Vec<f64>,
    /// `G_a^{t-1}`.
    pub g: Vec<f64>,
    /// `G_a^{t-2}`.
    pub g_prev: Vec<f64>,
    pub q: f64,
    pub q_prev: f64,
    pub iteration: usize,
}

impl AmpState {
    pub fn new(dataset: &Dataset, init: &InitKind, seed: u64) -> Result<Self> {
        let n = dataset.n_visible();
        init.validate(n)?;
        let m = init.fill(n, n, seed);
        let q = mean_square(&m);
        Ok(Self {
            m_prev: m.clone(),
            m,
            g: vec![0.0; dataset.n_samples()],
            g_prev: vec![0.0; dataset.n_samples()],
            q,
            q_prev: q,
            iteration: 0,
        })
    }

    pub fn marginals(&self) -> Marginals {
        Marginals::from_clamped(self.m.clone())
    }
}

pub(crate) fn mean_square(m: &[f64]) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>() / m.len() as f64
}

/// `(1/sqrt N) sum_i sigma_i^a x_i` for every constraint.
pub(crate) fn project(dataset: &Dataset, x: &[f64]) -> Vec<f64> {
    let inv_sqrt_n = 1.0 / (dataset.n_visible() as f64).sqrt();
    dataset
        .rows()
        .map(|sigma| sigma.iter().zip(x).map(|(&s, &v)| s as f64 * v).sum::<f64>() * inv_sqrt_n)
        .collect()
}

/// `(1/sqrt N) sum_a sigma_i^a y_a` for every feature.
pub(crate) fn back_project(dataset: &Dataset, y: &[f64]) -> Vec<f64> {
    let n = dataset.n_visible();
    let inv_sqrt_n = 1.0 / (n as f64).sqrt();
    let mut out = vec![0.0; n];
    for (sigma, &w) in dataset.rows().zip(y) {
        for (o, &s) in out.iter_mut().zip(sigma) {
            *o += s as f64 * w;
        }
    }
    out.iter_mut().for_each(|o| *o *= inv_sqrt_n);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Reaction {
    Onsager,
    /// Both memory terms dropped: plain mean-field iteration.
    Naive,
}

fn step(state: &mut AmpState, dataset: &Dataset, beta: f64, damping: f64, reaction: Reaction) -> Result<f64> {
    let n = dataset.n_visible() as f64;
    let field = project(dataset, &state.m);
    let mut g_new: Vec<f64> = field;
    if reaction == Reaction::Onsager {
        let coeff = beta * (1.0 - state.q);
        for (g, &old) in g_new.iter_mut().zip(&state.g) {
            *g -= coeff * (beta * old).tanh();
        }
    }
    let t: Vec<f64> = g_new.iter().map(|g| (beta * g).tanh()).collect();
    let local = back_project(dataset, &t);
    let onsager = match reaction {
        Reaction::Onsager => beta * beta / n * t.iter().map(|x| 1.0 - x * x).sum::<f64>(),
        Reaction::Naive => 0.0,
    };
    let mut delta = 0.0f64;
    let mut m_next = Vec::with_capacity(state.m.len());
    for (i, (&h, &m)) in local.iter().zip(&state.m).enumerate() {
        let fresh = (beta * h - onsager * m).tanh();
        if !fresh.is_finite() {
            return Err(Error::Divergence {
                sample: 0,
                feature: i,
                iteration: state.iteration,
            });
        }
        let next = (1.0 - damping) * fresh + damping * m;
        delta = delta.max((next - m).abs());
        m_next.push(next);
    }
    state.g_prev = std::mem::replace(&mut state.g, g_new);
    state.m_prev = std::mem::replace(&mut state.m, m_next);
    state.q_prev = state.q;
    state.q = mean_square(&state.m);
    state.iteration += 1;
    Ok(delta)
}

fn run(
    dataset: &Dataset,
    params: &ModelParams,
    init: &InitKind,
    seed: u64,
    opts: &MpOptions,
    reaction: Reaction,
) -> Result<(Marginals, AmpState, ConvergenceReport)> {
    params.validate()?;
    opts.validate()?;
    opts.require_synchronous("AMP")?;
    let mut state = AmpState::new(dataset, init, seed)?;
    let mut report = ConvergenceReport {
        converged: false,
        iterations: 0,
        max_delta: f64::INFINITY,
    };
    if dataset.n_samples() == 0 {
        state.m.iter_mut().for_each(|m| *m = 0.0);
        state.q = 0.0;
        report.converged = true;
        report.max_delta = 0.0;
        return Ok((state.marginals(), state, report));
    }
    for _ in 0..opts.max_iter {
        let delta = step(&mut state, dataset, params.beta, opts.damping, reaction)?;
        report.iterations += 1;
        report.max_delta = delta;
        if delta < opts.tol {
            report.converged = true;
            break;
        }
    }
    Ok((state.marginals(), state, report))
}

pub fn amp_run(
    dataset: &Dataset,
    params: &ModelParams,
    init: &InitKind,
    seed: u64,
    opts: &MpOptions,
) -> Result<(Marginals, AmpState, ConvergenceReport)> {
    run(dataset, params, init, seed, opts, Reaction::Onsager)
}

/// The same iteration without the Onsager terms, kept for comparison.
pub fn naive_mean_field_run(
    dataset: &Dataset,
    params: &ModelParams,
    init: &InitKind,
    seed: u64,
    opts: &MpOptions,
) -> Result<(Marginals, AmpState, ConvergenceReport)> {
    run(dataset, params, init, seed, opts, Reaction::Naive)
}

/// Largest violations of the two TAP equations at the state's current `m`,
/// with `G_a` taken from the state:
/// `G_a = (1/sqrt N) sum_i sigma_i^a m_i - beta (1 - Q) tanh(beta G_a)` and
/// `m_i = tanh(beta H_i)` with the Onsager-corrected local field.
pub fn amp_residuals(state: &AmpState, dataset: &Dataset, params: &ModelParams) -> (f64, f64) {
    let beta = params.beta;
    let n = dataset.n_visible() as f64;
    let q = mean_square(&state.m);
    let field = project(dataset, &state.m);
    let g_res = field
        .iter()
        .zip(&state.g)
        .map(|(&f, &g)| (g - (f - beta * (1.0 - q) * (beta * g).tanh())).abs())
        .fold(0.0, f64::max);
    let t: Vec<f64> = state.g.iter().map(|g| (beta * g).tanh()).collect();
    let local = back_project(dataset, &t);
    let onsager = beta * beta / n * t.iter().map(|x| 1.0 - x * x).sum::<f64>();
    let m_res = local
        .iter()
        .zip(&state.m)
        .map(|(&h, &m)| (m - (beta * h - onsager * m).tanh()).abs())
        .fold(0.0, f64::max);
    (g_res, m_res)
}
