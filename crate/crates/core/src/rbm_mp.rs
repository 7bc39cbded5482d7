//! Simplified message passing (sMP) on the factor graph of the RBM posterior
//! `P(xi | data) ∝ prod_a cosh(beta xi·sigma^a / sqrt N)`.
//!
//! Each constraint `a` sees the other features through a Gaussian cavity field
//! of mean `G_{a->i}` and variance `Xi^2_{a->i}`, which reduces the message
//! from `a` to `i` to
//! `u_{a->i} = atanh(tanh(beta G_{a->i}) tanh(beta sigma_i^a / sqrt N))`.
//! The cavity sums are obtained from the full sums `G_a`, `Xi^2_a` by removing
//! the `i` term, so a sweep costs `O(NM)`.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::model::{Dataset, Marginals, ModelParams};
use crate::mp::{
    column_sums, fast_clamped_atanh, fast_tanh, ln_cosh, sigmoid, softplus, BetheObservables, ConvergenceReport,
    InitKind, MpOptions, Schedule, ATANH_CLAMP,
};
use crate::rng;

/// Edge messages of the RBM factor graph, row-major by constraint:
/// `m_edge[a * N + i] = m_{i->a}` and `u_edge[a * N + i] = u_{a->i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RbmCavityState {
    pub(crate) n: usize,
    pub(crate) m_edge: Vec<f64>,
    pub(crate) u_edge: Vec<f64>,
    pub iteration: usize,
}

impl RbmCavityState {
    pub fn n_visible(&self) -> usize {
        self.n
    }

    pub fn m_edges(&self) -> &[f64] {
        &self.m_edge
    }

    pub fn u_edges(&self) -> &[f64] {
        &self.u_edge
    }

    /// `m_{i->a}`.
    pub fn m(&self, i: usize, a: usize) -> f64 {
        self.m_edge[a * self.n + i]
    }

    /// `u_{a->i}`.
    pub fn u(&self, a: usize, i: usize) -> f64 {
        self.u_edge[a * self.n + i]
    }

    /// `m_i = tanh(sum_b u_{b->i})` from the stored constraint messages.
    pub fn marginals(&self) -> Marginals {
        Marginals::from_clamped(column_sums(&self.u_edge, self.n).into_iter().map(f64::tanh).collect())
    }
}

pub(crate) fn check_shapes(state: &RbmCavityState, dataset: &Dataset) -> Result<()> {
    if state.n != dataset.n_visible() || state.m_edge.len() != dataset.as_slice().len() {
        return Err(Error::invalid("cavity state does not match the dataset shape"));
    }
    Ok(())
}

pub fn smp_init(dataset: &Dataset, params: &ModelParams, init: &InitKind, seed: u64) -> Result<RbmCavityState> {
    params.validate()?;
    let n = dataset.n_visible();
    init.validate(n)?;
    let edges = n * dataset.n_samples();
    Ok(RbmCavityState {
        n,
        m_edge: init.fill(n, edges, seed),
        u_edge: vec![0.0; edges],
        iteration: 0,
    })
}

/// Recomputes every `u_{a->i}` from the current `m_{i->a}`.
pub(crate) fn update_constraint_messages(state: &mut RbmCavityState, dataset: &Dataset, beta: f64) -> Result<()> {
    let n = state.n;
    let inv_sqrt_n = 1.0 / (n as f64).sqrt();
    let t_coupling = (beta * inv_sqrt_n).tanh();
    for (a, ((sigma, m_row), u_row)) in dataset
        .rows()
        .zip(state.m_edge.chunks_exact(n))
        .zip(state.u_edge.chunks_exact_mut(n))
        .enumerate()
    {
        let g_full: f64 = sigma.iter().zip(m_row).map(|(&s, &m)| s as f64 * m).sum::<f64>() * inv_sqrt_n;
        for (i, ((&s, &m), u)) in sigma.iter().zip(m_row).zip(u_row.iter_mut()).enumerate() {
            let s = s as f64;
            let g_cav = g_full - s * m * inv_sqrt_n;
            let value = fast_clamped_atanh(fast_tanh(beta * g_cav) * s * t_coupling);
            if !value.is_finite() {
                return Err(Error::Divergence {
                    sample: a,
                    feature: i,
                    iteration: state.iteration,
                });
            }
            *u = value;
        }
    }
    Ok(())
}

/// One synchronous sweep: all `u_{a->i}`, then all `m_{i->a}`. Returns the
/// largest change of an `m` message.
pub fn smp_sweep(state: &mut RbmCavityState, dataset: &Dataset, params: &ModelParams) -> Result<f64> {
    let delta = sweep(state, dataset, params, 0.0, Schedule::Synchronous, None)?;
    state.u_edge.iter_mut().for_each(|u| *u = fast_clamped_atanh(*u));
    Ok(delta)
}

/// Synchronous sweep that leaves `tanh u_{a->i}` (not `u`) in `u_edge`.
///
/// Since `|tanh u| <= tanh(beta / sqrt N)`, the feature update can use
/// `tanh(H_i - u) = (T_i - t) / (1 - T_i t)` with `T_i = tanh H_i`, and `H_i`
/// is accumulated as the log of running products of `(1 + t) / (1 - t)`.
/// This costs one `exp` per edge instead of two `exp` and one `ln`.
fn synchronous_sweep(state: &mut RbmCavityState, dataset: &Dataset, beta: f64, damping: f64) -> Result<f64> {
    let n = state.n;
    let inv_sqrt_n = 1.0 / (n as f64).sqrt();
    let t_coupling = (beta * inv_sqrt_n).tanh();
    let bound = t_coupling.min(ATANH_CLAMP);
    let log_ratio = ((1.0 + bound) / (1.0 - bound)).ln();
    let chunk = if log_ratio > 0.0 {
        (600.0 / log_ratio).clamp(1.0, 64.0) as usize
    } else {
        64
    };

    let mut totals = vec![0.0; n];
    let mut products = vec![1.0; n];
    for (a, ((sigma, m_row), t_row)) in dataset
        .rows()
        .zip(state.m_edge.chunks_exact(n))
        .zip(state.u_edge.chunks_exact_mut(n))
        .enumerate()
    {
        let g_full: f64 = sigma.iter().zip(m_row).map(|(&s, &m)| s as f64 * m).sum::<f64>() * inv_sqrt_n;
        for (i, ((&s, &m), t)) in sigma.iter().zip(m_row).zip(t_row.iter_mut()).enumerate() {
            let s = s as f64;
            let value =
                (fast_tanh(beta * (g_full - s * m * inv_sqrt_n)) * s * t_coupling).clamp(-ATANH_CLAMP, ATANH_CLAMP);
            if !value.is_finite() {
                return Err(Error::Divergence {
                    sample: a,
                    feature: i,
                    iteration: state.iteration,
                });
            }
            *t = value;
            products[i] *= (1.0 + value) / (1.0 - value);
        }
        if (a + 1) % chunk == 0 {
            fold_products(&mut totals, &mut products);
        }
    }
    fold_products(&mut totals, &mut products);

    let cavity_tanh: Vec<f64> = totals.iter().map(|&h| fast_tanh(h)).collect();
    let mut delta = 0.0f64;
    for (m_row, t_row) in state.m_edge.chunks_exact_mut(n).zip(state.u_edge.chunks_exact(n)) {
        for ((m, &t), &big_t) in m_row.iter_mut().zip(t_row).zip(&cavity_tanh) {
            let next = (1.0 - damping) * (big_t - t) / (1.0 - big_t * t) + damping * *m;
            delta = delta.max((next - *m).abs());
            *m = next;
        }
    }
    Ok(delta)
}

fn fold_products(totals: &mut [f64], products: &mut [f64]) {
    for (h, p) in totals.iter_mut().zip(products.iter_mut()) {
        *h += 0.5 * p.ln();
        *p = 1.0;
    }
}

fn sweep(
    state: &mut RbmCavityState,
    dataset: &Dataset,
    params: &ModelParams,
    damping: f64,
    schedule: Schedule,
    order_rng: Option<&mut rand_chacha::ChaCha8Rng>,
) -> Result<f64> {
    check_shapes(state, dataset)?;
    let delta = match (schedule, order_rng) {
        (Schedule::RandomSequential, Some(r)) => sequential_sweep(state, dataset, params.beta, damping, r)?,
        _ => synchronous_sweep(state, dataset, params.beta, damping)?,
    };
    state.iteration += 1;
    Ok(delta)
}

fn sequential_sweep(
    state: &mut RbmCavityState,
    dataset: &Dataset,
    beta: f64,
    damping: f64,
    order_rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<f64> {
    let n = state.n;
    let m_count = dataset.n_samples();
    let inv_sqrt_n = 1.0 / (n as f64).sqrt();
    let t_coupling = (beta * inv_sqrt_n).tanh();
    let mut g_full: Vec<f64> = dataset
        .rows()
        .zip(state.m_edge.chunks_exact(n))
        .map(|(sigma, m_row)| sigma.iter().zip(m_row).map(|(&s, &m)| s as f64 * m).sum::<f64>() * inv_sqrt_n)
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(order_rng);
    let mut delta = 0.0f64;
    for &i in &order {
        let mut total = 0.0;
        for a in 0..m_count {
            let k = a * n + i;
            let s = dataset.as_slice()[k] as f64;
            let g_cav = g_full[a] - s * state.m_edge[k] * inv_sqrt_n;
            let u = fast_clamped_atanh(fast_tanh(beta * g_cav) * s * t_coupling);
            if !u.is_finite() {
                return Err(Error::Divergence {
                    sample: a,
                    feature: i,
                    iteration: state.iteration,
                });
            }
            state.u_edge[k] = u;
            total += u;
        }
        for a in 0..m_count {
            let k = a * n + i;
            let s = dataset.as_slice()[k] as f64;
            let old = state.m_edge[k];
            let next = (1.0 - damping) * fast_tanh(total - state.u_edge[k]) + damping * old;
            delta = delta.max((next - old).abs());
            g_full[a] += s * (next - old) * inv_sqrt_n;
            state.m_edge[k] = next;
        }
    }
    Ok(delta)
}

/// Iterates sweeps from `state` until the largest message change drops below
/// `opts.tol` or `opts.max_iter` sweeps have run. The constraint messages are
/// refreshed from the final feature messages before returning.
pub fn smp_continue(
    state: &mut RbmCavityState,
    dataset: &Dataset,
    params: &ModelParams,
    seed: u64,
    opts: &MpOptions,
) -> Result<ConvergenceReport> {
    opts.validate()?;
    params.validate()?;
    let mut order_rng = rng::stream(seed, rng::STREAM_SCHEDULE);
    let mut report = ConvergenceReport {
        converged: false,
        iterations: 0,
        max_delta: f64::INFINITY,
    };
    for _ in 0..opts.max_iter {
        let delta = sweep(
            state,
            dataset,
            params,
            opts.damping,
            opts.schedule,
            Some(&mut order_rng),
        )?;
        report.iterations += 1;
        report.max_delta = delta;
        if delta < opts.tol {
            report.converged = true;
            break;
        }
    }
    update_constraint_messages(state, dataset, params.beta)?;
    Ok(report)
}

pub fn smp_run(
    dataset: &Dataset,
    params: &ModelParams,
    init: &InitKind,
    seed: u64,
    opts: &MpOptions,
) -> Result<(Marginals, RbmCavityState, ConvergenceReport)> {
    let mut state = smp_init(dataset, params, init, seed)?;
    let report = smp_continue(&mut state, dataset, params, seed, opts)?;
    Ok((state.marginals(), state, report))
}

/// Bethe free entropy, entropy and energy densities at the messages in `state`.
///
/// With `x_pm = beta (G_{a->i} ± sigma_i^a / sqrt N)`:
/// * `ln Z_i = sum_a [beta^2 Xi^2_{a->i}/2 + ln cosh x_+] + ln(1 + prod_a G_{a->i})`,
///   `G_{a->i} = e^{-2 u_{a->i}} = cosh x_- / cosh x_+`;
/// * `ln Z_a = beta^2 Xi^2_a / 2 + ln cosh(beta G_a)`;
/// * `N ln Z/N = sum_i ln Z_i - (N-1) sum_a ln Z_a`, and likewise for the
///   entropy and (with the opposite sign convention) the energy.
pub fn bethe_observables(state: &RbmCavityState, dataset: &Dataset, params: &ModelParams) -> Result<BetheObservables> {
    check_shapes(state, dataset)?;
    params.validate()?;
    let beta = params.beta;
    let n = state.n;
    let nf = n as f64;
    let inv_sqrt_n = 1.0 / nf.sqrt();

    // Per feature node: sum_a [beta^2 Xi^2/2 + ln cosh x_+], ln prod_a G_{a->i},
    // and sum_a H_{a->i}(±1) / beta.
    let mut base = vec![0.0; n];
    let mut log_prod_g = vec![0.0; n];
    let mut h_plus = vec![0.0; n];
    let mut h_minus = vec![0.0; n];

    let mut ln_z_a = 0.0;
    let mut ds_a = 0.0;
    let mut de_a = 0.0;

    for (sigma, m_row) in dataset.rows().zip(state.m_edge.chunks_exact(n)) {
        let mut g_full = 0.0;
        let mut xi2_full = 0.0;
        for (&s, &m) in sigma.iter().zip(m_row) {
            g_full += s as f64 * m;
            xi2_full += 1.0 - m * m;
        }
        g_full *= inv_sqrt_n;
        xi2_full /= nf;

        let bg = beta * g_full;
        let t = bg.tanh();
        ln_z_a += beta * beta * xi2_full / 2.0 + ln_cosh(bg);
        ds_a += ln_cosh(bg) - beta * beta * xi2_full / 2.0 - bg * t;
        de_a += beta * xi2_full + g_full * t;

        for (i, (&s, &m)) in sigma.iter().zip(m_row).enumerate() {
            let s = s as f64;
            let g = g_full - s * m * inv_sqrt_n;
            let xi2 = xi2_full - (1.0 - m * m) / nf;
            let y_plus = g + s * inv_sqrt_n;
            let y_minus = g - s * inv_sqrt_n;
            let lc_plus = ln_cosh(beta * y_plus);
            let lc_minus = ln_cosh(beta * y_minus);
            base[i] += beta * beta * xi2 / 2.0 + lc_plus;
            log_prod_g[i] += lc_minus - lc_plus;
            h_plus[i] += beta * xi2 + y_plus * (beta * y_plus).tanh();
            h_minus[i] += beta * xi2 + y_minus * (beta * y_minus).tanh();
        }
    }

    let mut ln_z_i = 0.0;
    let mut ds_i = 0.0;
    let mut de_i = 0.0;
    for i in 0..n {
        let lz = base[i] + softplus(log_prod_g[i]);
        // P(xi_i = +1) = 1 / (1 + prod G), P(xi_i = -1) = prod G / (1 + prod G).
        let p_minus = sigmoid(log_prod_g[i]);
        let p_plus = sigmoid(-log_prod_g[i]);
        let mean_h = p_plus * h_plus[i] + p_minus * h_minus[i];
        ln_z_i += lz;
        ds_i += lz - beta * mean_h;
        de_i += mean_h;
    }

    let w = nf - 1.0;
    Ok(BetheObservables {
        free_entropy: (ln_z_i - w * ln_z_a) / nf,
        entropy: (ds_i - w * ds_a) / nf,
        energy: (-de_i + w * de_a) / nf,
    })
}

/// `f_RS`, the Bethe free energy density.
pub fn bethe_free_energy(state: &RbmCavityState, dataset: &Dataset, params: &ModelParams) -> Result<f64> {
    Ok(bethe_observables(state, dataset, params)?.free_energy(params.beta))
}

pub fn bethe_entropy(state: &RbmCavityState, dataset: &Dataset, params: &ModelParams) -> Result<f64> {
    Ok(bethe_observables(state, dataset, params)?.entropy)
}

pub fn bethe_energy(state: &RbmCavityState, dataset: &Dataset, params: &ModelParams) -> Result<f64> {
    Ok(bethe_observables(state, dataset, params)?.energy)
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
    fn zero_state_is_a_fixed_point() {
        let (_, d) = instance(30, 20, 1.3, 1);
        let p = ModelParams::rbm(1.3);
        let mut st = smp_init(&d, &p, &InitKind::Zero, 0).unwrap();
        let delta = smp_sweep(&mut st, &d, &p).unwrap();
        assert_eq!(delta, 0.0);
        assert!(st.u_edges().iter().all(|&u| u == 0.0));
        assert!(st.m_edges().iter().all(|&m| m == 0.0));
    }

    #[test]
    fn random_init_is_reproducible() {
        let (_, d) = instance(20, 10, 1.0, 2);
        let p = ModelParams::rbm(1.0);
        let a = smp_init(&d, &p, &InitKind::RandomSmall(0.1), 5).unwrap();
        let b = smp_init(&d, &p, &InitKind::RandomSmall(0.1), 5).unwrap();
        assert_eq!(a, b);
        assert!(a.m_edges().iter().all(|m| m.abs() < 0.1));
        assert!(smp_init(&d, &p, &InitKind::RandomSmall(1.0), 5).is_err());
    }

    #[test]
    fn single_sample_matches_direct_formula() {
        let (_, d) = instance(6, 1, 1.0, 3);
        let p = ModelParams::rbm(1.0);
        let mut st = smp_init(&d, &p, &InitKind::RandomSmall(0.5), 9).unwrap();
        let m0: Vec<f64> = st.m_edges().to_vec();
        smp_sweep(&mut st, &d, &p).unwrap();
        let n = 6.0f64;
        let sigma = d.sample(0);
        for i in 0..6 {
            let g: f64 = (0..6).filter(|&j| j != i).map(|j| sigma[j] as f64 * m0[j]).sum::<f64>() / n.sqrt();
            let u = ((1.0 * g).tanh() * (sigma[i] as f64 / n.sqrt()).tanh()).atanh();
            assert!((st.u(0, i) - u).abs() < 1e-14);
            // a single constraint: the cavity sum excluding a is empty
            assert!(st.m(i, 0).abs() < 1e-15);
        }
        let marg = st.marginals();
        for i in 0..6 {
            assert!((marg.as_slice()[i] - st.u(0, i).tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn sequential_schedule_reaches_same_fixed_point() {
        let (_, d) = instance(60, 90, 1.2, 4);
        let p = ModelParams::rbm(1.2);
        let opts = MpOptions::default().with_tol(1e-10).with_max_iter(5000);
        let (m_sync, _, r1) = smp_run(&d, &p, &InitKind::RandomSmall(0.1), 1, &opts).unwrap();
        let seq = MpOptions {
            schedule: Schedule::RandomSequential,
            ..opts
        };
        let (m_seq, _, r2) = smp_run(&d, &p, &InitKind::RandomSmall(0.1), 1, &seq).unwrap();
        assert!(r1.converged && r2.converged);
        // same fixed point up to the global sign
        let dot: f64 = m_sync.as_slice().iter().zip(m_seq.as_slice()).map(|(a, b)| a * b).sum();
        let sign = dot.signum();
        let diff = m_sync
            .as_slice()
            .iter()
            .zip(m_seq.as_slice())
            .map(|(a, b)| (a - sign * b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-6, "diff {diff}");
    }

    #[test]
    fn converged_run_is_a_fixed_point() {
        let (_, d) = instance(100, 150, 1.0, 1);
        let p = ModelParams::rbm(1.0);
        let opts = MpOptions::default().with_tol(1e-8).with_max_iter(5000);
        let (_, mut st, rep) = smp_run(&d, &p, &InitKind::RandomSmall(0.1), 1, &opts).unwrap();
        assert!(rep.converged);
        assert!(rep.max_delta <= 1e-8);
        let extra = smp_sweep(&mut st, &d, &p).unwrap();
        assert!(extra <= 1e-8, "extra sweep moved messages by {extra}");
    }

    #[test]
    fn empty_dataset_observables() {
        let d = Dataset::from_rows(5, vec![]).unwrap();
        let p = ModelParams::rbm(1.0);
        let (m, st, _) = smp_run(&d, &p, &InitKind::Zero, 0, &MpOptions::default()).unwrap();
        assert!(m.as_slice().iter().all(|&x| x == 0.0));
        let b = bethe_observables(&st, &d, &p).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!((b.free_entropy - ln2).abs() < 1e-15);
        assert!((b.entropy - ln2).abs() < 1e-15);
        assert_eq!(b.energy, 0.0);
    }

    #[test]
    fn zero_fixed_point_closed_forms() {
        // At the uninformative fixed point s = ln2 - alpha beta^2/2 and
        // eps = -alpha sqrt(N) tanh(beta / sqrt N) ≈ -alpha beta.
        let n = 400;
        let (_, d) = instance(n, 400, 1.0, 6);
        let p = ModelParams::rbm(1.0);
        let st = smp_init(&d, &p, &InitKind::Zero, 0).unwrap();
        let b = bethe_observables(&st, &d, &p).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!((b.entropy - (ln2 - 0.5)).abs() < 1e-3, "s {}", b.entropy);
        assert!((b.energy + 1.0).abs() < 1e-2, "eps {}", b.energy);
        let exact_eps = -(n as f64).sqrt() * (1.0 / (n as f64).sqrt()).tanh();
        assert!((b.energy - exact_eps).abs() < 1e-10);
    }

    #[test]
    fn thermodynamic_identity_at_fixed_point() {
        let (_, d) = instance(80, 120, 1.1, 7);
        let p = ModelParams::rbm(1.1);
        let opts = MpOptions::default().with_max_iter(5000);
        let (_, st, _) = smp_run(&d, &p, &InitKind::RandomSmall(0.1), 2, &opts).unwrap();
        let b = bethe_observables(&st, &d, &p).unwrap();
        assert!((b.free_entropy - (b.entropy - p.beta * b.energy)).abs() < 1e-6);
        assert!((bethe_free_energy(&st, &d, &p).unwrap() * -p.beta - b.free_entropy).abs() < 1e-12);
    }

    #[test]
    fn energy_is_beta_derivative_of_free_entropy_at_fixed_messages() {
        let (_, d) = instance(40, 60, 1.2, 8);
        let p = ModelParams::rbm(1.2);
        let (_, st, _) = smp_run(&d, &p, &InitKind::RandomSmall(0.1), 4, &MpOptions::default()).unwrap();
        let h = 1e-5;
        let up = bethe_observables(&st, &d, &ModelParams::rbm(1.2 + h))
            .unwrap()
            .free_entropy;
        let down = bethe_observables(&st, &d, &ModelParams::rbm(1.2 - h))
            .unwrap()
            .free_entropy;
        let eps = bethe_energy(&st, &d, &p).unwrap();
        assert!((-(up - down) / (2.0 * h) - eps).abs() < 1e-6);
    }

    #[test]
    fn gauge_covariance() {
        let (_, d) = instance(10, 14, 1.5, 9);
        let p = ModelParams::rbm(1.5);
        let eps = FeatureVector::random(10, 77).unwrap();
        let dg = d.gauge_transformed(&eps).unwrap();
        let opts = MpOptions::default().with_tol(1e-12).with_max_iter(10_000);
        let init = InitKind::Planted(FeatureVector::random(10, 5).unwrap());
        let (m, _, r1) = smp_run(&d, &p, &init, 0, &opts).unwrap();
        // transform the initial condition consistently
        let init_g = match &init {
            InitKind::Planted(x) => InitKind::Planted(
                FeatureVector::new(x.as_slice().iter().zip(eps.as_slice()).map(|(a, b)| a * b).collect()).unwrap(),
            ),
            _ => unreachable!(),
        };
        let (mg, _, r2) = smp_run(&dg, &p, &init_g, 0, &opts).unwrap();
        assert!(r1.converged && r2.converged);
        for i in 0..10 {
            let expected = eps.as_slice()[i] as f64 * m.as_slice()[i];
            assert!((mg.as_slice()[i] - expected).abs() < 1e-9);
        }
    }
}
