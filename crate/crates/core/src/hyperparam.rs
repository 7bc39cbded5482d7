//! Learning the inverse temperature from data by expectation-maximization.
//!
//! The E-step runs sMP at the current `beta` and reads off the Bethe energy
//! `eps`. The M-step solves the stationarity condition of the `beta`
//! posterior at finite `N`,
//!
//! ```text
//! beta_new = sqrt(N) atanh(-eps / (alpha sqrt N))
//! ```
//!
//! and the update is damped: `beta <- eta beta_new + (1 - eta) beta`.

use serde::{Deserialize, Serialize};

use crate::ensemble::{run_ensemble, Algorithm, EnsembleConfig, EnsemblePoint, InitPolicy};
use crate::error::{Error, Result};
use crate::model::{overlaps, Dataset, FeatureVector, ModelParams};
use crate::mp::{ln_cosh, InitKind, MpOptions};
use crate::rbm_mp::{bethe_observables, smp_continue, smp_init, RbmCavityState};
use crate::rng::derive_seed;

/// Arguments this close to `±1` are clamped instead of rejected.
pub const ATANH_SLACK: f64 = 1e-9;
/// Where clamped arguments land.
pub const ATANH_CLAMP: f64 = 1.0 - 1e-12;

/// How much message passing each E-step does.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerPolicy {
    /// Sweep until the message change drops below `tol`, at most `max_iter`.
    ToTolerance { tol: f64, max_iter: usize },
    /// A fixed number of sweeps.
    Sweeps(usize),
}

impl Default for InnerPolicy {
    fn default() -> Self {
        InnerPolicy::ToTolerance {
            tol: 1e-6,
            max_iter: 1000,
        }
    }
}

impl InnerPolicy {
    fn options(self, damping: f64) -> MpOptions {
        match self {
            InnerPolicy::ToTolerance { tol, max_iter } => MpOptions::default().with_tol(tol).with_max_iter(max_iter),
            // a tolerance no sweep can reach
            InnerPolicy::Sweeps(k) => MpOptions::default().with_tol(f64::MIN_POSITIVE).with_max_iter(k),
        }
        .with_damping(damping)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    pub eta: f64,
    pub outer_tol: f64,
    pub outer_max: usize,
    #[serde(default)]
    pub inner: InnerPolicy,
    /// Message damping inside the E-step.
    #[serde(default)]
    pub damping: f64,
    #[serde(default)]
    pub init: InitKind,
    /// Independent restarts; the one with the largest final log posterior wins.
    #[serde(default = "one")]
    pub n_starts: usize,
}

fn one() -> usize {
    1
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            eta: 0.02,
            outer_tol: 1e-6,
            outer_max: 5000,
            inner: InnerPolicy::default(),
            damping: 0.0,
            init: InitKind::default(),
            n_starts: 1,
        }
    }
}

impl EmOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::invalid(format!("eta must lie in (0, 1], got {}", self.eta)));
        }
        if !(self.outer_tol > 0.0) || self.outer_max == 0 || self.n_starts == 0 {
            return Err(Error::invalid(
                "outer_tol > 0, outer_max >= 1 and n_starts >= 1 are required",
            ));
        }
        if let InnerPolicy::Sweeps(0) = self.inner {
            return Err(Error::invalid("an E-step needs at least one sweep"));
        }
        self.inner.options(self.damping).validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaTrajectory {
    /// `beta(0) = beta0`, then one entry per outer iteration.
    pub betas: Vec<f64>,
    /// Bethe energy of the E-step that produced `betas[t + 1]`.
    pub energies: Vec<f64>,
    pub q_abs: Vec<Option<f64>>,
    pub inner_converged: Vec<bool>,
    pub converged: bool,
    /// `ln P(beta | data)` up to a constant, at the final messages.
    pub log_posterior: f64,
    /// Marginals at the last E-step.
    pub marginals: Vec<f64>,
}

impl BetaTrajectory {
    pub fn beta(&self) -> f64 {
        *self.betas.last().expect("trajectory starts with beta0")
    }
}

/// The finite-`N` M-step.
pub fn m_step(energy: f64, alpha: f64, n: usize) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::invalid("the M-step needs at least one sample"));
    }
    let sqrt_n = (n as f64).sqrt();
    let mut x = -energy / (alpha * sqrt_n);
    if !x.is_finite() || x.abs() >= 1.0 + ATANH_SLACK {
        return Err(Error::AtanhDomain { value: x.abs() });
    }
    if x.abs() > ATANH_CLAMP {
        log::warn!("M-step argument {x} clamped to the atanh domain");
        x = x.signum() * ATANH_CLAMP;
    }
    Ok(sqrt_n * x.atanh())
}

/// `ln P(beta | data)` up to a `beta`-independent constant, with the Bethe
/// free entropy standing in for `ln Z / N`.
fn log_posterior(free_entropy: f64, beta: f64, n: usize, m: usize) -> f64 {
    let nf = n as f64;
    nf * free_entropy - nf * m as f64 * (std::f64::consts::LN_2 + ln_cosh(beta / nf.sqrt()))
}

fn learn_from(
    dataset: &Dataset,
    beta0: f64,
    opts: &EmOptions,
    init: &InitKind,
    seed: u64,
    xi_true: Option<&FeatureVector>,
) -> Result<BetaTrajectory> {
    let n = dataset.n_visible();
    let m = dataset.n_samples();
    let inner = opts.inner.options(opts.damping);
    let mut beta = beta0;
    let mut state: RbmCavityState = smp_init(dataset, &ModelParams::rbm(beta), init, seed)?;
    let mut traj = BetaTrajectory {
        betas: vec![beta],
        energies: Vec::new(),
        q_abs: Vec::new(),
        inner_converged: Vec::new(),
        converged: false,
        log_posterior: f64::NAN,
        marginals: Vec::new(),
    };
    for t in 0..opts.outer_max {
        let params = ModelParams::rbm(beta);
        let report = smp_continue(&mut state, dataset, &params, derive_seed(seed, t as u64), &inner)?;
        let bethe = bethe_observables(&state, dataset, &params)?;
        let marg = state.marginals();
        traj.q_abs
            .push(xi_true.map(|xi| overlaps(xi, &marg)).transpose()?.map(|o| o.q_abs));
        traj.inner_converged.push(report.converged);
        traj.energies.push(bethe.energy);
        traj.log_posterior = log_posterior(bethe.free_entropy, beta, n, m);
        traj.marginals = marg.as_slice().to_vec();

        let target = if m == 0 {
            0.0
        } else {
            m_step(bethe.energy, dataset.alpha(), n)?
        };
        let next = opts.eta * target + (1.0 - opts.eta) * beta;
        if !(next > 0.0 && next.is_finite()) {
            return Err(Error::invalid(format!(
                "beta left the positive axis at outer step {t}: {next}"
            )));
        }
        let step = (next - beta).abs();
        beta = next;
        traj.betas.push(beta);
        log::debug!("EM step {t}: beta = {beta}, eps = {}", bethe.energy);
        if step < opts.outer_tol {
            traj.converged = true;
            break;
        }
    }
    Ok(traj)
}

/// EM estimate of `beta` for `dataset`, starting from `beta0`.
///
/// With `n_starts > 1`, start `k` uses `derive_seed(seed, k)` for its
/// messages and the run with the largest final log posterior is returned.
pub fn learn_beta(
    dataset: &Dataset,
    beta0: f64,
    opts: &EmOptions,
    seed: u64,
    xi_true: Option<&FeatureVector>,
) -> Result<BetaTrajectory> {
    opts.validate()?;
    if !(beta0 > 0.0 && beta0.is_finite()) {
        return Err(Error::invalid(format!("beta0 must be finite and > 0, got {beta0}")));
    }
    let mut best: Option<BetaTrajectory> = None;
    for k in 0..opts.n_starts {
        let s = if k == 0 { seed } else { derive_seed(seed, k as u64) };
        let traj = learn_from(dataset, beta0, opts, &opts.init, s, xi_true)?;
        if best.as_ref().is_none_or(|b| traj.log_posterior > b.log_posterior) {
            best = Some(traj);
        }
    }
    Ok(best.expect("n_starts >= 1"))
}

/// One row of a temperature-mismatch table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MismatchRow {
    pub factor: f64,
    pub beta: f64,
    pub points: Vec<EnsemblePoint>,
}

/// Runs the same planted ensemble (data at `beta_star`) with inference at
/// `factor * beta_star` for each factor.
#[allow(clippy::too_many_arguments)]
pub fn mismatch_experiment(
    algorithm: Algorithm,
    n: usize,
    alphas: &[f64],
    beta_star: f64,
    factors: &[f64],
    instances: usize,
    seed: u64,
    init: InitPolicy,
    opts: &MpOptions,
) -> Result<Vec<MismatchRow>> {
    if factors.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
        return Err(Error::invalid("temperature factors must be positive"));
    }
    factors
        .iter()
        .map(|&factor| {
            let config = EnsembleConfig {
                n,
                alphas: alphas.to_vec(),
                beta_data: beta_star,
                beta: factor * beta_star,
                instances,
                seed,
                algorithm,
                init,
                opts: *opts,
            };
            Ok(MismatchRow {
                factor,
                beta: config.beta,
                points: run_ensemble(&config)?.points,
            })
        })
        .collect()
}
