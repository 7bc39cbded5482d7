//! sMP for the RBM with a binary field `B_h * phi0` on the hidden unit.
//!
//! The unknown sign `B_h` becomes an extra variable node `lambda` linked to
//! every constraint. Its messages are
//!
//! ```text
//! m_{lambda->a} = tanh(sum_{b != a} u_{b->lambda})
//! u_{b->lambda} = atanh(tanh(beta G_b) tanh(beta phi0))
//! ```
//!
//! and the constraint-to-feature message mixes the two field signs:
//!
//! ```text
//! u_{b->i} = 1/2 ln [p cosh beta(G + s + phi0) + (1-p) cosh beta(G + s - phi0)]
//!                 / [p cosh beta(G - s + phi0) + (1-p) cosh beta(G - s - phi0)]
//! ```
//!
//! with `p = (1 + m_{lambda->b}) / 2`, `G = G_{b->i}` and `s = sigma_i^b / sqrt N`.
//! With `phi0 = 0` the recursion is plain sMP.

use crate::error::{Error, Result};
use crate::model::{Dataset, Marginals, ModelParams};
use crate::mp::{clamped_atanh, ln_cosh, log_add_exp, update_feature_messages, ConvergenceReport, InitKind, MpOptions};
use crate::rbm_mp::{check_shapes, smp_init, RbmCavityState};

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenFieldState {
    pub cavity: RbmCavityState,
    /// `m_{lambda->a}`, one per constraint.
    pub m_lambda: Vec<f64>,
    /// `u_{a->lambda}`, one per constraint.
    pub u_lambda: Vec<f64>,
}

impl HiddenFieldState {
    pub fn marginals(&self) -> Marginals {
        self.cavity.marginals()
    }

    /// `<B_h> = tanh(sum_b u_{b->lambda})`.
    pub fn field_mean(&self) -> f64 {
        self.u_lambda.iter().sum::<f64>().tanh()
    }
}

/// Feature messages start as in [`smp_init`]; the field messages start at zero.
pub fn hidden_field_init(
    dataset: &Dataset,
    params: &ModelParams,
    init: &InitKind,
    seed: u64,
) -> Result<HiddenFieldState> {
    let cavity = smp_init(dataset, params, init, seed)?;
    Ok(HiddenFieldState {
        cavity,
        m_lambda: vec![0.0; dataset.n_samples()],
        u_lambda: vec![0.0; dataset.n_samples()],
    })
}

fn log_mixture(p: f64, a: f64, b: f64) -> f64 {
    let lp = if p > 0.0 { p.ln() } else { f64::NEG_INFINITY };
    let lq = if p < 1.0 { (1.0 - p).ln() } else { f64::NEG_INFINITY };
    log_add_exp(lp + ln_cosh(a), lq + ln_cosh(b))
}

fn update_constraint_messages(state: &mut HiddenFieldState, dataset: &Dataset, beta: f64, phi0: f64) -> Result<()> {
    let n = state.cavity.n;
    let inv_sqrt_n = 1.0 / (n as f64).sqrt();
    let t_field = (beta * phi0).tanh();
    let cavity = &mut state.cavity;
    for (a, ((sigma, m_row), u_row)) in dataset
        .rows()
        .zip(cavity.m_edge.chunks_exact(n))
        .zip(cavity.u_edge.chunks_exact_mut(n))
        .enumerate()
    {
        let g_full: f64 = sigma.iter().zip(m_row).map(|(&s, &m)| s as f64 * m).sum::<f64>() * inv_sqrt_n;
        state.u_lambda[a] = clamped_atanh((beta * g_full).tanh() * t_field);
        let p = (1.0 + state.m_lambda[a]) / 2.0;
        for (i, ((&s, &m), u)) in sigma.iter().zip(m_row).zip(u_row.iter_mut()).enumerate() {
            let s = s as f64 * inv_sqrt_n;
            let g = g_full - s * m;
            let up = log_mixture(p, beta * (g + s + phi0), beta * (g + s - phi0));
            let down = log_mixture(p, beta * (g - s + phi0), beta * (g - s - phi0));
            let value = 0.5 * (up - down);
            if !value.is_finite() {
                return Err(Error::Divergence {
                    sample: a,
                    feature: i,
                    iteration: cavity.iteration,
                });
            }
            *u = value;
        }
    }
    Ok(())
}

/// One synchronous sweep over all four message families. Returns the largest
/// change among the `m_{i->a}` and `m_{lambda->a}` messages.
pub fn hidden_field_sweep(
    state: &mut HiddenFieldState,
    dataset: &Dataset,
    params: &ModelParams,
    damping: f64,
) -> Result<f64> {
    check_shapes(&state.cavity, dataset)?;
    if state.m_lambda.len() != dataset.n_samples() {
        return Err(Error::invalid("field messages do not match the dataset"));
    }
    update_constraint_messages(state, dataset, params.beta, params.hidden_field)?;
    let n = state.cavity.n;
    let mut delta = update_feature_messages(&mut state.cavity.m_edge, &state.cavity.u_edge, n, damping);
    let total: f64 = state.u_lambda.iter().sum();
    for (m, &u) in state.m_lambda.iter_mut().zip(&state.u_lambda) {
        let next = (1.0 - damping) * (total - u).tanh() + damping * *m;
        delta = delta.max((next - *m).abs());
        *m = next;
    }
    state.cavity.iteration += 1;
    Ok(delta)
}

/// Runs the extended sMP with field strength `params.hidden_field` from the
/// synchronous schedule. Returns feature marginals and `<B_h>`.
pub fn smp_hidden_field_run(
    dataset: &Dataset,
    params: &ModelParams,
    init: &InitKind,
    seed: u64,
    opts: &MpOptions,
) -> Result<(Marginals, f64, HiddenFieldState, ConvergenceReport)> {
    opts.validate()?;
    let mut state = hidden_field_init(dataset, params, init, seed)?;
    let mut report = ConvergenceReport {
        converged: false,
        iterations: 0,
        max_delta: f64::INFINITY,
    };
    for _ in 0..opts.max_iter {
        let delta = hidden_field_sweep(&mut state, dataset, params, opts.damping)?;
        report.iterations += 1;
        report.max_delta = delta;
        if delta < opts.tol {
            report.converged = true;
            break;
        }
    }
    update_constraint_messages(&mut state, dataset, params.beta, params.hidden_field)?;
    Ok((state.marginals(), state.field_mean(), state, report))
}
