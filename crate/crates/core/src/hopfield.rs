//! Message passing for the Hopfield approximation of the RBM posterior,
//! `P(xi | data) ∝ prod_a exp(beta_tilde (xi·sigma^a)^2 / 2N)` with
//! `beta_tilde = beta^2`.
//!
//! The cavity field of constraint `b` seen from feature `i` has mean
//! `G_{b->i}` and variance `C_{b->i}`; integrating the quadratic weight over it
//! gives the factor `F_{b->i} = 1 / (1 - beta_tilde C_{b->i})`, which only
//! exists while `beta_tilde C_{b->i} < 1`. Every evaluation of that
//! denominator is guarded.

use crate::error::{Error, Result};
use crate::model::{Dataset, Marginals, ModelParams};
use crate::mp::{
    column_sums, ln_cosh, update_feature_messages, BetheObservables, ConvergenceReport, InitKind, MpOptions,
};
use crate::rbm_amp::{back_project, mean_square, project, AmpState};

use std::f64::consts::LN_2;

/// Smallest admissible value of `1 - beta_tilde C`.
pub const SINGULAR_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct HopfieldCavityState {
    n: usize,
    /// `m_{i->a}`, row-major by constraint.
    m_edge: Vec<f64>,
    /// `v_{a->i} = beta_tilde sigma_i^a G_{a->i} F_{a->i} / sqrt N`.
    v_edge: Vec<f64>,
    pub iteration: usize,
}

impl HopfieldCavityState {
    pub fn m_edges(&self) -> &[f64] {
        &self.m_edge
    }

    /// `m_{i->a}`.
    pub fn m(&self, i: usize, a: usize) -> f64 {
        self.m_edge[a * self.n + i]
    }

    /// `m_i = tanh(beta_tilde H_i)`.
    pub fn marginals(&self) -> Marginals {
        Marginals::from_clamped(column_sums(&self.v_edge, self.n).into_iter().map(f64::tanh).collect())
    }
}

fn denominator(beta_tilde: f64, c: f64, location: impl FnOnce() -> String) -> Result<f64> {
    let d = 1.0 - beta_tilde * c;
    if d <= SINGULAR_TOL {
        return Err(Error::Singular {
            margin: d,
            location: location(),
        });
    }
    Ok(d)
}

fn check_shapes(state: &HopfieldCavityState, dataset: &Dataset) -> Result<()> {
    if state.n != dataset.n_visible() || state.m_edge.len() != dataset.as_slice().len() {
        return Err(Error::invalid("cavity state does not match the dataset shape"));
    }
    Ok(())
}

pub fn hopfield_smp_init(
    dataset: &Dataset,
    params: &ModelParams,
    init: &InitKind,
    seed: u64,
) -> Result<HopfieldCavityState> {
    params.validate()?;
    let n = dataset.n_visible();
    init.validate(n)?;
    let edges = n * dataset.n_samples();
    Ok(HopfieldCavityState {
        n,
        m_edge: init.fill(n, edges, seed),
        v_edge: vec![0.0; edges],
        iteration: 0,
    })
}

/// Full sums `G_a`, `C_a` of one constraint.
fn constraint_sums(sigma: &[i8], m_row: &[f64], inv_sqrt_n: f64) -> (f64, f64) {
    let mut g = 0.0;
    let mut c = 0.0;
    for (&s, &m) in sigma.iter().zip(m_row) {
        g += s as f64 * m;
        c += 1.0 - m * m;
    }
    (g * inv_sqrt_n, c * inv_sqrt_n * inv_sqrt_n)
}

fn update_constraint_messages(state: &mut HopfieldCavityState, dataset: &Dataset, beta_tilde: f64) -> Result<()> {
    let n = state.n;
    let nf = n as f64;
    let inv_sqrt_n = 1.0 / nf.sqrt();
    let iteration = state.iteration;
    for (a, ((sigma, m_row), v_row)) in dataset
        .rows()
        .zip(state.m_edge.chunks_exact(n))
        .zip(state.v_edge.chunks_exact_mut(n))
        .enumerate()
    {
        let (g_full, c_full) = constraint_sums(sigma, m_row, inv_sqrt_n);
        for (i, ((&s, &m), v)) in sigma.iter().zip(m_row).zip(v_row.iter_mut()).enumerate() {
            let s = s as f64;
            let g = g_full - s * m * inv_sqrt_n;
            let c = c_full - (1.0 - m * m) / nf;
            let d = denominator(beta_tilde, c, || {
                format!("edge (sample {a}, feature {i}), sweep {iteration}")
            })?;
            *v = beta_tilde * s * g * inv_sqrt_n / d;
        }
    }
    Ok(())
}

/// One synchronous sweep; returns the largest change of an `m` message.
pub fn hopfield_smp_sweep(
    state: &mut HopfieldCavityState,
    dataset: &Dataset,
    params: &ModelParams,
    damping: f64,
) -> Result<f64> {
    check_shapes(state, dataset)?;
    update_constraint_messages(state, dataset, params.beta_tilde())?;
    let delta = update_feature_messages(&mut state.m_edge, &state.v_edge, state.n, damping);
    state.iteration += 1;
    Ok(delta)
}

pub fn hopfield_smp_run(
    dataset: &Dataset,
    params: &ModelParams,
    init: &InitKind,
    seed: u64,
    opts: &MpOptions,
) -> Result<(Marginals, HopfieldCavityState, ConvergenceReport)> {
    opts.validate()?;
    opts.require_synchronous("Hopfield sMP")?;
    let mut state = hopfield_smp_init(dataset, params, init, seed)?;
    let mut report = ConvergenceReport {
        converged: false,
        iterations: 0,
        max_delta: f64::INFINITY,
    };
    for _ in 0..opts.max_iter {
        let delta = hopfield_smp_sweep(&mut state, dataset, params, opts.damping)?;
        report.iterations += 1;
        report.max_delta = delta;
        if delta < opts.tol {
            report.converged = true;
            break;
        }
    }
    update_constraint_messages(&mut state, dataset, params.beta_tilde())?;
    Ok((state.marginals(), state, report))
}

/// Bethe observables of the Hopfield posterior at the messages in `state`,
/// evaluated at coupling `beta_tilde`.
///
/// `free_entropy` is `ln Z / N`, `entropy` is `(1 - beta_tilde d/dbeta_tilde)`
/// of it at fixed messages, and `energy` is the effective energy conjugate to
/// `beta_tilde`, so `free_entropy = entropy - beta_tilde * energy`.
pub fn hopfield_bethe_at(state: &HopfieldCavityState, dataset: &Dataset, beta_tilde: f64) -> Result<BetheObservables> {
    check_shapes(state, dataset)?;
    let n = state.n;
    let nf = n as f64;
    let inv_sqrt_n = 1.0 / nf.sqrt();
    let bt = beta_tilde;

    let mut h = vec![0.0; n];
    let mut h_prime = vec![0.0; n];
    let mut ln_z_edges = 0.0;
    let mut s_edges = 0.0;
    let mut ln_z_a = 0.0;
    let mut s_a = 0.0;

    for (a, (sigma, m_row)) in dataset.rows().zip(state.m_edge.chunks_exact(n)).enumerate() {
        let (g_full, c_full) = constraint_sums(sigma, m_row, inv_sqrt_n);
        let d = denominator(bt, c_full, || format!("constraint {a}"))?;
        let f = 1.0 / d;
        let f_prime = bt * c_full / (d * d);
        ln_z_a += bt / 2.0 * g_full * g_full * f - 0.5 * d.ln();
        s_a += -0.5 * d.ln() - bt * c_full / (2.0 * d) - bt / 2.0 * g_full * g_full * f_prime;

        for (i, (&s, &m)) in sigma.iter().zip(m_row).enumerate() {
            let s = s as f64;
            let g = g_full - s * m * inv_sqrt_n;
            let c = c_full - (1.0 - m * m) / nf;
            let d = denominator(bt, c, || format!("edge (sample {a}, feature {i})"))?;
            let f = 1.0 / d;
            let f_prime = bt * c / (d * d);
            let q = 1.0 / nf + g * g;
            ln_z_edges += bt / 2.0 * q * f - 0.5 * d.ln();
            s_edges += -0.5 * d.ln() - bt * c / (2.0 * d) - bt / 2.0 * q * f_prime;
            h[i] += s * g * f * inv_sqrt_n;
            h_prime[i] += s * g * f_prime * inv_sqrt_n;
        }
    }

    let mut ln_z_i = ln_z_edges;
    let mut s_i = s_edges;
    for (&hi, &hpi) in h.iter().zip(&h_prime) {
        let x = bt * hi;
        let lz = LN_2 + ln_cosh(x);
        ln_z_i += lz;
        s_i += lz - (x + bt * hpi) * x.tanh();
    }

    let w = nf - 1.0;
    let free_entropy = (ln_z_i - w * ln_z_a) / nf;
    let entropy = (s_i - w * s_a) / nf;
    let energy = if bt > 0.0 { (entropy - free_entropy) / bt } else { 0.0 };
    Ok(BetheObservables {
        free_entropy,
        entropy,
        energy,
    })
}

pub fn hopfield_bethe_observables(
    state: &HopfieldCavityState,
    dataset: &Dataset,
    params: &ModelParams,
) -> Result<BetheObservables> {
    params.validate()?;
    hopfield_bethe_at(state, dataset, params.beta_tilde())
}

/// `f = -ln Z / (N beta_tilde)`.
pub fn hopfield_bethe_free_energy(state: &HopfieldCavityState, dataset: &Dataset, params: &ModelParams) -> Result<f64> {
    Ok(hopfield_bethe_observables(state, dataset, params)?.free_energy(params.beta_tilde()))
}

pub fn hopfield_bethe_entropy(state: &HopfieldCavityState, dataset: &Dataset, params: &ModelParams) -> Result<f64> {
    Ok(hopfield_bethe_observables(state, dataset, params)?.entropy)
}

/// Residual of `free_entropy = entropy - beta_tilde * energy` with the energy
/// taken as a central difference `-dPhi/dbeta_tilde` at fixed messages.
pub fn hopfield_identity_residual(
    state: &HopfieldCavityState,
    dataset: &Dataset,
    params: &ModelParams,
    step: f64,
) -> Result<f64> {
    let bt = params.beta_tilde();
    let b = hopfield_bethe_at(state, dataset, bt)?;
    let up = hopfield_bethe_at(state, dataset, bt + step)?.free_entropy;
    let down = hopfield_bethe_at(state, dataset, bt - step)?.free_entropy;
    let energy_fd = -(up - down) / (2.0 * step);
    Ok((b.free_entropy - (b.entropy - bt * energy_fd)).abs())
}

fn amp_step(state: &mut AmpState, dataset: &Dataset, beta_tilde: f64, damping: f64) -> Result<f64> {
    let n = dataset.n_visible() as f64;
    let alpha = dataset.n_samples() as f64 / n;
    let d_now = denominator(beta_tilde, 1.0 - state.q, || {
        format!("AMP step {}, Q^(t-1)", state.iteration)
    })?;
    let d_before = denominator(beta_tilde, 1.0 - state.q_prev, || {
        format!("AMP step {}, Q^(t-2)", state.iteration)
    })?;
    let mut g_new = project(dataset, &state.m);
    let memory = beta_tilde * (1.0 - state.q) / d_before;
    for (g, &old) in g_new.iter_mut().zip(&state.g) {
        *g -= memory * old;
    }
    let local = back_project(dataset, &g_new);
    let gain = beta_tilde / d_now;
    let mut delta = 0.0f64;
    let mut m_next = Vec::with_capacity(state.m.len());
    for (i, (&h, &m)) in local.iter().zip(&state.m).enumerate() {
        let fresh = (gain * h - alpha * gain * m).tanh();
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

/// Time-indexed AMP for the Hopfield posterior, with `G^{-1} = 0` and
/// `Q^{-1} = Q^0`.
pub fn hopfield_amp_run(
    dataset: &Dataset,
    params: &ModelParams,
    init: &InitKind,
    seed: u64,
    opts: &MpOptions,
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
    for _ in 0..opts.max_iter {
        let delta = amp_step(&mut state, dataset, params.beta_tilde(), opts.damping)?;
        report.iterations += 1;
        report.max_delta = delta;
        if delta < opts.tol {
            report.converged = true;
            break;
        }
    }
    Ok((state.marginals(), state, report))
}

/// Largest violations of the fixed-point equations
/// `G_a = (1 - beta_tilde (1 - Q)) (1/sqrt N) sum_i sigma_i^a m_i` and
/// `m_i = tanh(beta_tilde F [(1/sqrt N) sum_a sigma_i^a G_a - alpha m_i])`
/// at the state's current `m` and `G`.
pub fn hopfield_amp_residuals(state: &AmpState, dataset: &Dataset, params: &ModelParams) -> Result<(f64, f64)> {
    let bt = params.beta_tilde();
    let alpha = dataset.n_samples() as f64 / dataset.n_visible() as f64;
    let q = mean_square(&state.m);
    let d = denominator(bt, 1.0 - q, || "AMP residual".into())?;
    let field = project(dataset, &state.m);
    let g_res = field
        .iter()
        .zip(&state.g)
        .map(|(&f, &g)| (g - d * f).abs())
        .fold(0.0, f64::max);
    let local = back_project(dataset, &state.g);
    let m_res = local
        .iter()
        .zip(&state.m)
        .map(|(&h, &m)| (m - (bt / d * (h - alpha * m)).tanh()).abs())
        .fold(0.0, f64::max);
    Ok((g_res, m_res))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sample_dataset, FeatureVector};

    fn instance(n: usize, m: usize, beta: f64, seed: u64) -> (FeatureVector, Dataset) {
        let xi = FeatureVector::random(n, seed).unwrap();
        let d = sample_dataset(&xi, beta, m, seed + 1000).unwrap();
        (xi, d)
    }

    #[test]
    fn zero_state_is_invariant() {
        let (_, d) = instance(30, 40, 0.8, 1);
        let p = ModelParams::hopfield(0.8);
        let mut st = hopfield_smp_init(&d, &p, &InitKind::Zero, 0).unwrap();
        assert_eq!(hopfield_smp_sweep(&mut st, &d, &p, 0.0).unwrap(), 0.0);
        let (m, _, rep) = hopfield_amp_run(&d, &p, &InitKind::Zero, 0, &MpOptions::default()).unwrap();
        assert!(rep.converged && m.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn singular_coupling_is_an_error() {
        let (_, d) = instance(20, 20, 1.0, 1);
        let p = ModelParams::hopfield(1.1);
        let r = hopfield_smp_run(&d, &p, &InitKind::Zero, 0, &MpOptions::default());
        assert!(matches!(r, Err(Error::Singular { .. })));
        let r = hopfield_amp_run(&d, &p, &InitKind::Zero, 0, &MpOptions::default());
        assert!(matches!(r, Err(Error::Singular { .. })));
    }

    #[test]
    fn empty_dataset_observables() {
        let d = Dataset::from_rows(6, vec![]).unwrap();
        let p = ModelParams::hopfield(0.8);
        let (_, st, _) = hopfield_smp_run(&d, &p, &InitKind::default(), 0, &MpOptions::default()).unwrap();
        let b = hopfield_bethe_observables(&st, &d, &p).unwrap();
        assert!((b.free_entropy - LN_2).abs() < 1e-15);
        assert!((b.entropy - LN_2).abs() < 1e-15);
        assert_eq!(b.energy, 0.0);
    }

    #[test]
    fn bethe_identity_by_finite_differences() {
        let (_, d) = instance(60, 90, 0.8, 2);
        let p = ModelParams::hopfield(0.8);
        let (_, st, _) = hopfield_smp_run(&d, &p, &InitKind::default(), 1, &MpOptions::default()).unwrap();
        let r = hopfield_identity_residual(&st, &d, &p, 1e-5).unwrap();
        assert!(r < 1e-7, "residual {r}");
    }

    #[test]
    fn amp_fixed_point_residuals() {
        let (xi, d) = instance(200, 1000, 0.8, 3);
        let p = ModelParams::hopfield(0.8);
        let opts = MpOptions::default().with_tol(1e-10).with_max_iter(5000);
        let (_, st, rep) = hopfield_amp_run(&d, &p, &InitKind::Planted(xi), 0, &opts).unwrap();
        assert!(rep.converged);
        let (g, m) = hopfield_amp_residuals(&st, &d, &p).unwrap();
        assert!(g < 1e-8 && m < 1e-8, "{g} {m}");
    }

    #[test]
    fn gauge_covariance() {
        let (_, d) = instance(10, 12, 0.8, 4);
        let eps: Vec<i8> = vec![1, -1, -1, 1, 1, 1, -1, 1, -1, -1];
        let g = d.gauge_transformed(&FeatureVector::new(eps.clone()).unwrap()).unwrap();
        let p = ModelParams::hopfield(0.6);
        let opts = MpOptions::default().with_tol(1e-12).with_max_iter(5000);
        let (m1, _, r1) = hopfield_smp_run(&d, &p, &InitKind::default(), 1, &opts).unwrap();
        // gauge the initial messages too: start from the transformed fixed point's basin
        let init = InitKind::Planted(
            FeatureVector::new(
                m1.as_slice()
                    .iter()
                    .zip(&eps)
                    .map(|(&m, &e)| if m * e as f64 >= 0.0 { 1 } else { -1 })
                    .collect(),
            )
            .unwrap(),
        );
        let (m2, _, r2) = hopfield_smp_run(&g, &p, &init, 1, &opts).unwrap();
        assert!(r1.converged && r2.converged);
        for ((a, b), &e) in m1.as_slice().iter().zip(m2.as_slice()).zip(&eps) {
            assert!((a * e as f64 - b).abs() < 1e-8, "{a} {b}");
        }
    }

    #[test]
    fn small_beta_agrees_with_rbm() {
        let (_, d) = instance(10, 20, 0.2, 5);
        let opts = MpOptions::default().with_tol(1e-12);
        let (mh, _, _) =
            hopfield_smp_run(&d, &ModelParams::hopfield(0.2), &InitKind::RandomSmall(0.5), 1, &opts).unwrap();
        let (mr, _, _) =
            crate::rbm_mp::smp_run(&d, &ModelParams::rbm(0.2), &InitKind::RandomSmall(0.5), 1, &opts).unwrap();
        let diff: f64 = mh
            .as_slice()
            .iter()
            .zip(mr.as_slice())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / 10.0;
        assert!(diff <= 0.02, "{diff}");
    }
}
