//! Large-`N` theory: density evolution of the message-passing fixed points,
//! replica-symmetric saddle points for both variants, thresholds, and
//! continuation scans over the data density `alpha`.
//!
//! Averages against the data measure `e^{-beta^2/2} cosh(beta t) Dt` are a
//! mixture of the shifted Gaussians `N(+-beta, 1)`. Under either component the
//! field `q t + sqrt(r - q^2) y` is itself Gaussian with mean `+-beta q` and
//! variance `r`, so every double integral collapses to a single one over
//! [`GaussianRule::fine`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Variant;
use crate::mp::ln_cosh;
use crate::quadrature::GaussianRule;

use std::f64::consts::LN_2;

/// Margin below which `1 - beta_tilde (1 - r)` counts as singular.
pub const SINGULAR_TOL: f64 = 1e-12;

/// Below this, a negative `r - q^2` is rounding and gets clamped to zero.
const VARIANCE_SLACK: f64 = 1e-10;

/// `T_e = sqrt(2 ln 2)`, the temperature at which `alpha_c = alpha_{s=0}`.
pub fn t_e() -> f64 {
    (2.0 * LN_2).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityEvolutionParams {
    #[serde(rename = "Q")]
    pub q: f64,
    #[serde(rename = "Q_hat")]
    pub q_hat: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ReplicaOrderParams {
    pub q: f64,
    pub r: f64,
    pub q_hat: f64,
    pub r_hat: f64,
}

impl ReplicaOrderParams {
    /// `q = r = value` with zero conjugates.
    pub fn symmetric(value: f64) -> Self {
        Self {
            q: value,
            r: value,
            ..Self::default()
        }
    }

    /// `r - q^2`, with rounding-level negatives clamped.
    fn variance(&self) -> Result<f64> {
        let v = self.r - self.q * self.q;
        if v < -VARIANCE_SLACK {
            return Err(Error::Inconsistent { gap: v });
        }
        Ok(v.max(0.0))
    }
}

/// Damped fixed-point iteration settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Weight kept on the old value.
    pub damping: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 10_000,
            damping: 0.5,
        }
    }
}

impl SolverOptions {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 || !(0.0..1.0).contains(&self.damping) {
            return Err(Error::invalid(format!("bad solver options {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Solution<T> {
    pub params: T,
    pub converged: bool,
    pub iterations: usize,
    /// Largest parameter change in the last iteration.
    pub residual: f64,
}

fn check_alpha_beta(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("alpha must be finite and >= 0, got {alpha}")));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::invalid(format!("beta must be finite and > 0, got {beta}")));
    }
    Ok(())
}

fn mix(old: f64, new: f64, damping: f64) -> f64 {
    damping * old + (1.0 - damping) * new
}

// ---------------------------------------------------------------------------
// RBM

pub fn rbm_alpha_c(beta: f64) -> f64 {
    beta.powi(-4)
}

/// Data density at which the `q = 0` entropy `ln 2 - alpha beta^2 / 2` vanishes.
pub fn rbm_alpha_s0(beta: f64) -> f64 {
    2.0 * LN_2 / (beta * beta)
}

/// Temperature of the entropy crisis at data density `alpha`.
pub fn rbm_crisis_temperature(alpha: f64) -> f64 {
    (alpha / (2.0 * LN_2)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalSet {
    pub alpha_c: f64,
    pub alpha_s0: f64,
    pub t_e: f64,
}

impl CriticalSet {
    pub fn crisis_temperature(&self, alpha: f64) -> f64 {
        rbm_crisis_temperature(alpha)
    }
}

pub fn rbm_critical_set(beta: f64) -> Result<CriticalSet> {
    check_alpha_beta(0.0, beta)?;
    Ok(CriticalSet {
        alpha_c: rbm_alpha_c(beta),
        alpha_s0: rbm_alpha_s0(beta),
        t_e: t_e(),
    })
}

/// Leading behavior of the overlap just above the transition,
/// `q = beta^4 (alpha - alpha_c) / (1 + beta^2)`, from expanding the saddle
/// point to second order in `q` on the Nishimori line.
pub fn rbm_overlap_asymptote(alpha: f64, beta: f64) -> f64 {
    beta.powi(4) * (alpha - rbm_alpha_c(beta)) / (1.0 + beta * beta)
}

pub fn de_rbm_solve(
    alpha: f64,
    beta: f64,
    init_q: f64,
    opts: &SolverOptions,
) -> Result<Solution<DensityEvolutionParams>> {
    check_alpha_beta(alpha, beta)?;
    opts.validate()?;
    if !(0.0..=1.0).contains(&init_q) {
        return Err(Error::invalid(format!("init Q must lie in [0, 1], got {init_q}")));
    }
    let rule = GaussianRule::fine();
    let mut q = init_q;
    let mut q_hat = 0.0;
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let sq = beta * q.sqrt();
        let q_hat_new = rule.expect(|z| (sq * z).tanh().powi(2));
        let sh = beta * (alpha * q_hat_new).sqrt();
        let q_new = mix(q, rule.expect(|z| (sh * z).tanh().powi(2)), opts.damping);
        residual = (q_new - q).abs().max((q_hat_new - q_hat).abs());
        q = q_new;
        q_hat = q_hat_new;
        if residual < opts.tol {
            return Ok(Solution {
                params: DensityEvolutionParams { q, q_hat },
                converged: true,
                iterations: it,
                residual,
            });
        }
    }
    Ok(Solution {
        params: DensityEvolutionParams { q, q_hat },
        converged: false,
        iterations: opts.max_iter,
        residual,
    })
}

/// Conjugate parameters `(q_hat, r_hat)` for given `(q, r)`. Only the
/// `N(+beta, 1)` component is needed: `tanh` is odd and `tanh^2` even.
fn rbm_conjugates(rule: &GaussianRule, alpha: f64, beta: f64, p: &ReplicaOrderParams) -> Result<(f64, f64)> {
    p.variance()?;
    let mean = beta * beta * p.q;
    let sd = beta * p.r.max(0.0).sqrt();
    let k = alpha * beta * beta;
    Ok((
        k * rule.expect(|z| (mean + sd * z).tanh()),
        k * rule.expect(|z| (mean + sd * z).tanh().powi(2)),
    ))
}

fn replica_iterate(
    init: ReplicaOrderParams,
    opts: &SolverOptions,
    rule: &GaussianRule,
    mut conjugates: impl FnMut(&ReplicaOrderParams) -> Result<(f64, f64)>,
) -> Result<Solution<ReplicaOrderParams>> {
    opts.validate()?;
    if !(init.r >= 0.0 && init.r <= 1.0 && init.q.abs() <= 1.0) {
        return Err(Error::invalid(format!(
            "initial order parameters out of range: {init:?}"
        )));
    }
    init.variance()?;
    let mut p = init;
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let (q_hat, r_hat) = conjugates(&p)?;
        let sr = r_hat.max(0.0).sqrt();
        let q_new = rule.expect(|z| (q_hat + sr * z).tanh());
        let r_new = rule.expect(|z| (q_hat + sr * z).tanh().powi(2));
        let next = ReplicaOrderParams {
            q: mix(p.q, q_new, opts.damping),
            r: mix(p.r, r_new, opts.damping),
            q_hat,
            r_hat,
        };
        residual = [next.q - p.q, next.r - p.r, next.q_hat - p.q_hat, next.r_hat - p.r_hat]
            .iter()
            .fold(0.0f64, |acc, d| acc.max(d.abs()));
        p = next;
        if residual < opts.tol {
            return Ok(Solution {
                params: p,
                converged: true,
                iterations: it,
                residual,
            });
        }
    }
    Ok(Solution {
        params: p,
        converged: false,
        iterations: opts.max_iter,
        residual,
    })
}

pub fn replica_rbm_solve(
    alpha: f64,
    beta: f64,
    init: ReplicaOrderParams,
    opts: &SolverOptions,
) -> Result<Solution<ReplicaOrderParams>> {
    check_alpha_beta(alpha, beta)?;
    let rule = GaussianRule::fine();
    replica_iterate(init, opts, &rule, |p| rbm_conjugates(&rule, alpha, beta, p))
}

fn ln_2cosh_term(rule: &GaussianRule, p: &ReplicaOrderParams) -> f64 {
    let sr = p.r_hat.max(0.0).sqrt();
    LN_2 + rule.expect(|z| ln_cosh(p.q_hat + sr * z))
}

/// `alpha E_tilted ln cosh beta (q t + sqrt(r - q^2) y)` with the tilt at `beta_data`.
fn rbm_energetic_term(
    rule: &GaussianRule,
    p: &ReplicaOrderParams,
    alpha: f64,
    beta: f64,
    beta_data: f64,
) -> Result<f64> {
    p.variance()?;
    let mean = beta * beta_data * p.q;
    let sd = beta * p.r.max(0.0).sqrt();
    Ok(alpha * rule.expect(|z| ln_cosh(mean + sd * z)))
}

/// Replica free entropy `-beta f` when the data were generated at `beta_data`
/// and inference runs at `beta`.
pub fn replica_rbm_free_entropy_mismatched(
    p: &ReplicaOrderParams,
    alpha: f64,
    beta: f64,
    beta_data: f64,
) -> Result<f64> {
    check_alpha_beta(alpha, beta)?;
    let rule = GaussianRule::fine();
    Ok(-p.q * p.q_hat
        + p.r_hat * (p.r - 1.0) / 2.0
        + alpha * beta * beta * (1.0 - p.r) / 2.0
        + ln_2cosh_term(&rule, p)
        + rbm_energetic_term(&rule, p, alpha, beta, beta_data)?)
}

/// Replica free entropy `-beta f` on the Nishimori line.
pub fn replica_rbm_free_entropy(p: &ReplicaOrderParams, alpha: f64, beta: f64) -> Result<f64> {
    replica_rbm_free_entropy_mismatched(p, alpha, beta, beta)
}

pub fn replica_rbm_free_energy(p: &ReplicaOrderParams, alpha: f64, beta: f64) -> Result<f64> {
    Ok(-replica_rbm_free_entropy(p, alpha, beta)? / beta)
}

/// Entropy density at a saddle point. It equals `(1 - beta d/dbeta)` of the
/// free entropy with the data temperature held fixed.
pub fn replica_rbm_entropy(p: &ReplicaOrderParams, alpha: f64, beta: f64) -> Result<f64> {
    check_alpha_beta(alpha, beta)?;
    let rule = GaussianRule::fine();
    Ok(
        -2.0 * p.q * p.q_hat + p.r * p.r_hat + p.r_hat * (p.r - 1.0) / 2.0 - alpha * beta * beta * (p.r + 1.0) / 2.0
            + ln_2cosh_term(&rule, p)
            + rbm_energetic_term(&rule, p, alpha, beta, beta)?,
    )
}

// ---------------------------------------------------------------------------
// Hopfield

/// `alpha_c^r = ((1 - beta_tilde) / beta_tilde)^2` with `beta_tilde = beta^2`.
pub fn hopfield_alpha_c(beta: f64) -> f64 {
    let bt = beta * beta;
    ((1.0 - bt) / bt).powi(2)
}

/// Slope `beta_tilde^2 / (2 (1 - beta_tilde))` of `r` just above `alpha_c^r`.
pub fn hopfield_r_slope(beta: f64) -> f64 {
    let bt = beta * beta;
    bt * bt / (2.0 * (1.0 - bt))
}

fn hopfield_denominator(beta_tilde: f64, r: f64, location: &str) -> Result<f64> {
    let d = 1.0 - beta_tilde * (1.0 - r);
    if d <= SINGULAR_TOL {
        return Err(Error::Singular {
            margin: d,
            location: location.to_string(),
        });
    }
    Ok(d)
}

pub fn de_hopfield_solve(alpha: f64, beta: f64, init_q: f64, opts: &SolverOptions) -> Result<Solution<f64>> {
    check_alpha_beta(alpha, beta)?;
    opts.validate()?;
    if !(0.0..=1.0).contains(&init_q) {
        return Err(Error::invalid(format!("init Q must lie in [0, 1], got {init_q}")));
    }
    let rule = GaussianRule::fine();
    let bt = beta * beta;
    let mut q = init_q;
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let d = hopfield_denominator(bt, q, "Hopfield density evolution")?;
        let scale = bt * (alpha * q).sqrt() / d;
        let q_new = mix(q, rule.expect(|z| (scale * z).tanh().powi(2)), opts.damping);
        residual = (q_new - q).abs();
        q = q_new;
        if residual < opts.tol {
            return Ok(Solution {
                params: q,
                converged: true,
                iterations: it,
                residual,
            });
        }
    }
    Ok(Solution {
        params: q,
        converged: false,
        iterations: opts.max_iter,
        residual,
    })
}

pub fn replica_hopfield_solve(
    alpha: f64,
    beta: f64,
    init: ReplicaOrderParams,
    opts: &SolverOptions,
) -> Result<Solution<ReplicaOrderParams>> {
    check_alpha_beta(alpha, beta)?;
    let rule = GaussianRule::fine();
    let bt = beta * beta;
    replica_iterate(init, opts, &rule, |p| {
        let d = hopfield_denominator(bt, p.r, "Hopfield saddle point")?;
        let k = alpha * bt * bt;
        Ok((k * p.q / d, k * (bt * p.q * p.q + p.r) / (d * d)))
    })
}

/// Free entropy `-beta_tilde f` of the Hopfield approximation, with the
/// data generated at `beta_tilde_data`.
pub fn replica_hopfield_free_entropy_mismatched(
    p: &ReplicaOrderParams,
    alpha: f64,
    beta_tilde: f64,
    beta_tilde_data: f64,
) -> Result<f64> {
    check_alpha_beta(alpha, beta_tilde)?;
    let rule = GaussianRule::fine();
    let d = hopfield_denominator(beta_tilde, p.r, "Hopfield free entropy")?;
    Ok(
        -p.q * p.q_hat + p.r_hat * (p.r - 1.0) / 2.0 + ln_2cosh_term(&rule, p) - alpha / 2.0 * d.ln()
            + alpha * beta_tilde * (p.r + beta_tilde_data * p.q * p.q) / (2.0 * d),
    )
}

pub fn replica_hopfield_free_entropy(p: &ReplicaOrderParams, alpha: f64, beta: f64) -> Result<f64> {
    let bt = beta * beta;
    replica_hopfield_free_entropy_mismatched(p, alpha, bt, bt)
}

pub fn replica_hopfield_entropy(p: &ReplicaOrderParams, alpha: f64, beta: f64) -> Result<f64> {
    check_alpha_beta(alpha, beta)?;
    let rule = GaussianRule::fine();
    let bt = beta * beta;
    let d = hopfield_denominator(bt, p.r, "Hopfield entropy")?;
    Ok(ln_2cosh_term(&rule, p)
        - alpha / 2.0 * d.ln()
        - alpha * bt * (d * (1.0 - 3.0 * p.r) + 2.0 * p.r + 2.0 * p.q * p.q * bt) / (2.0 * d * d))
}

// ---------------------------------------------------------------------------
// Scans

/// Starting point of the cold branch.
pub const COLD_START: f64 = 1e-3;
/// Warm starts are lifted to at least this so a branch can leave `q = 0`.
pub const WARM_FLOOR: f64 = 1e-6;
/// Starting point of the planted branch.
pub const PLANTED_START: f64 = 0.99;
/// Branches further apart than this (in `q` or `r`) are flagged.
pub const BRANCH_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Cold,
    Planted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BranchPolicy {
    Cold,
    Planted,
    #[default]
    Both,
}

impl BranchPolicy {
    fn branches(self) -> &'static [Branch] {
        match self {
            BranchPolicy::Cold => &[Branch::Cold],
            BranchPolicy::Planted => &[Branch::Planted],
            BranchPolicy::Both => &[Branch::Cold, Branch::Planted],
        }
    }
}

/// One grid point of one branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub alpha: f64,
    pub q: f64,
    pub r: f64,
    pub q_hat: f64,
    pub r_hat: f64,
    pub s: f64,
    pub f: f64,
    pub branch: Branch,
    pub converged: bool,
    /// `ok`, `branches_differ`, or the solver error.
    pub status: String,
}

/// Solves, then evaluates `(s, f)`. `f` is `-free_entropy / beta` for the RBM
/// and `-free_entropy / beta_tilde` for the Hopfield variant.
pub fn solve_point(
    model: Variant,
    alpha: f64,
    beta: f64,
    init: ReplicaOrderParams,
    opts: &SolverOptions,
) -> Result<(Solution<ReplicaOrderParams>, f64, f64)> {
    match model {
        Variant::Rbm => {
            let sol = replica_rbm_solve(alpha, beta, init, opts)?;
            let s = replica_rbm_entropy(&sol.params, alpha, beta)?;
            let f = replica_rbm_free_energy(&sol.params, alpha, beta)?;
            Ok((sol, s, f))
        }
        Variant::Hopfield => {
            let sol = replica_hopfield_solve(alpha, beta, init, opts)?;
            let s = replica_hopfield_entropy(&sol.params, alpha, beta)?;
            let f = -replica_hopfield_free_entropy(&sol.params, alpha, beta)? / (beta * beta);
            Ok((sol, s, f))
        }
    }
}

fn scan_branch(model: Variant, beta: f64, grid: &[f64], branch: Branch, opts: &SolverOptions) -> Vec<PhaseRow> {
    let start = match branch {
        Branch::Cold => COLD_START,
        Branch::Planted => PLANTED_START,
    };
    let mut init = ReplicaOrderParams::symmetric(start);
    grid.iter()
        .map(|&alpha| match solve_point(model, alpha, beta, init, opts) {
            Ok((sol, s, f)) => {
                let p = sol.params;
                init = ReplicaOrderParams {
                    q: p.q.max(WARM_FLOOR),
                    r: p.r.max(WARM_FLOOR),
                    ..p
                };
                if init.q * init.q > init.r {
                    init.r = init.q * init.q;
                }
                PhaseRow {
                    alpha,
                    q: p.q,
                    r: p.r,
                    q_hat: p.q_hat,
                    r_hat: p.r_hat,
                    s,
                    f,
                    branch,
                    converged: sol.converged,
                    status: "ok".into(),
                }
            }
            Err(e) => {
                log::warn!("{branch:?} branch failed at alpha = {alpha}: {e}");
                init = ReplicaOrderParams::symmetric(start);
                PhaseRow {
                    alpha,
                    q: f64::NAN,
                    r: f64::NAN,
                    q_hat: f64::NAN,
                    r_hat: f64::NAN,
                    s: f64::NAN,
                    f: f64::NAN,
                    branch,
                    converged: false,
                    status: e.to_string(),
                }
            }
        })
        .collect()
}

/// Continuation scan over a monotone `alpha` grid. Each branch warm-starts
/// from its previous grid point; the two branches run in parallel. Rows come
/// back grouped by branch, cold first.
pub fn scan_phase_diagram(
    model: Variant,
    beta: f64,
    alpha_grid: &[f64],
    policy: BranchPolicy,
    opts: &SolverOptions,
) -> Result<Vec<PhaseRow>> {
    check_alpha_beta(0.0, beta)?;
    opts.validate()?;
    let increasing = alpha_grid.windows(2).all(|w| w[0] < w[1]);
    let decreasing = alpha_grid.windows(2).all(|w| w[0] > w[1]);
    if !(increasing || decreasing) {
        return Err(Error::invalid("alpha grid must be strictly monotone"));
    }
    if let Some(&bad) = alpha_grid.iter().find(|a| !(**a >= 0.0 && a.is_finite())) {
        return Err(Error::invalid(format!("alpha grid contains {bad}")));
    }
    let mut tables: Vec<Vec<PhaseRow>> = policy
        .branches()
        .par_iter()
        .map(|&branch| scan_branch(model, beta, alpha_grid, branch, opts))
        .collect();
    if let [cold, planted] = tables.as_mut_slice() {
        for (c, p) in cold.iter_mut().zip(planted.iter_mut()) {
            let apart = (c.q - p.q).abs() > BRANCH_TOL || (c.r - p.r).abs() > BRANCH_TOL;
            if apart && c.status == "ok" && p.status == "ok" {
                c.status = "branches_differ".into();
                p.status = "branches_differ".into();
            }
        }
    }
    Ok(tables.into_iter().flatten().collect())
}

/// `alpha` in `[lo, hi]` where the entropy of the chosen branch crosses zero,
/// by bisection with warm-started solves. `Ok(None)` if there is no sign change.
pub fn entropy_zero_crossing(
    model: Variant,
    beta: f64,
    branch: Branch,
    lo: f64,
    hi: f64,
    tol: f64,
    opts: &SolverOptions,
) -> Result<Option<f64>> {
    let start = ReplicaOrderParams::symmetric(match branch {
        Branch::Cold => COLD_START,
        Branch::Planted => PLANTED_START,
    });
    let entropy = |alpha: f64| solve_point(model, alpha, beta, start, opts).map(|(_, s, _)| s);
    let (mut a, mut b) = (lo, hi);
    let (mut sa, sb) = (entropy(a)?, entropy(b)?);
    if sa.signum() == sb.signum() {
        return Ok(None);
    }
    while b - a > tol {
        let mid = 0.5 * (a + b);
        let sm = entropy(mid)?;
        if sm.signum() == sa.signum() {
            a = mid;
            sa = sm;
        } else {
            b = mid;
        }
    }
    Ok(Some(0.5 * (a + b)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> SolverOptions {
        SolverOptions::default()
    }

    #[test]
    fn critical_set_values() {
        let c = rbm_critical_set(1.0).unwrap();
        assert_eq!(c.alpha_c, 1.0);
        assert!((c.alpha_s0 - 1.3862944).abs() < 1e-7);
        assert!((c.t_e - 1.1774100226).abs() < 1e-10);
        assert!((rbm_alpha_c(0.8) - 2.44140625).abs() < 1e-12);
        let b = 1.0 / t_e();
        assert!((rbm_alpha_c(b) - rbm_alpha_s0(b)).abs() < 1e-12);
        assert!((c.crisis_temperature(2.0 * LN_2) - 1.0).abs() < 1e-15);
        assert!(rbm_alpha_c(1e3) < 1e-11);
        assert!((hopfield_alpha_c(0.8) - 0.31640625).abs() < 1e-12);
        assert!((hopfield_r_slope(0.8) - 0.568889).abs() < 1e-6);
    }

    #[test]
    fn density_evolution_rbm() {
        let below = de_rbm_solve(0.5, 1.0, 0.5, &opts()).unwrap();
        assert!(below.converged && below.params.q < 1e-8);
        let above = de_rbm_solve(1.5, 1.0, 0.5, &opts()).unwrap();
        assert!(above.converged && above.params.q > 0.01 && above.params.q < 1.0);
        let zero = de_rbm_solve(1.5, 2.0, 0.0, &opts()).unwrap();
        assert_eq!(zero.params.q, 0.0);
    }

    #[test]
    fn rbm_cold_branch_reduces_to_density_evolution() {
        for alpha in [1.2, 1.6, 2.5] {
            let de = de_rbm_solve(alpha, 1.0, 0.5, &opts()).unwrap();
            let init = ReplicaOrderParams {
                q: 0.0,
                r: 0.5,
                ..Default::default()
            };
            let rep = replica_rbm_solve(alpha, 1.0, init, &opts()).unwrap();
            assert!(de.converged && rep.converged);
            assert_eq!(rep.params.q, 0.0);
            assert!(
                (rep.params.r - de.params.q).abs() < 1e-8,
                "{} {}",
                rep.params.r,
                de.params.q
            );
        }
    }

    #[test]
    fn rbm_q_zero_closed_forms() {
        let zero = ReplicaOrderParams::default();
        for (alpha, beta) in [(0.3, 0.5), (1.0, 1.0), (2.0, 1.4)] {
            let s = replica_rbm_entropy(&zero, alpha, beta).unwrap();
            assert!((s - (LN_2 - alpha * beta * beta / 2.0)).abs() < 1e-10);
            let phi = replica_rbm_free_entropy(&zero, alpha, beta).unwrap();
            assert!((phi - (LN_2 + alpha * beta * beta / 2.0)).abs() < 1e-10);
        }
        assert!((replica_rbm_free_entropy(&zero, 0.0, 1.0).unwrap() - LN_2).abs() < 1e-15);
        let sol = replica_rbm_solve(0.7, 1.0, ReplicaOrderParams::default(), &opts()).unwrap();
        assert_eq!(sol.params, ReplicaOrderParams::default());
    }

    #[test]
    fn rbm_informative_branch_is_on_the_nishimori_line() {
        for alpha in [1.2, 1.5, 3.0] {
            let sol = replica_rbm_solve(alpha, 1.0, ReplicaOrderParams::symmetric(0.5), &opts()).unwrap();
            assert!(sol.converged);
            assert!(sol.params.q > 0.05);
            assert!((sol.params.q - sol.params.r).abs() < 1e-8);
        }
    }

    #[test]
    fn rbm_entropy_is_the_temperature_derivative_at_fixed_data() {
        let (alpha, beta) = (1.2, 1.0);
        let sol = replica_rbm_solve(alpha, beta, ReplicaOrderParams::symmetric(0.5), &opts()).unwrap();
        let p = sol.params;
        let h = 1e-4;
        let d = (replica_rbm_free_entropy_mismatched(&p, alpha, beta + h, beta).unwrap()
            - replica_rbm_free_entropy_mismatched(&p, alpha, beta - h, beta).unwrap())
            / (2.0 * h);
        let fd = replica_rbm_free_entropy(&p, alpha, beta).unwrap() - beta * d;
        let s = replica_rbm_entropy(&p, alpha, beta).unwrap();
        assert!((fd - s).abs() < 1e-5, "{fd} vs {s}");
    }

    #[test]
    fn rbm_saddle_point_is_stationary() {
        let (alpha, beta) = (1.8, 0.9);
        let p = replica_rbm_solve(alpha, beta, ReplicaOrderParams::symmetric(0.5), &opts())
            .unwrap()
            .params;
        let phi = |p: &ReplicaOrderParams| replica_rbm_free_entropy(p, alpha, beta).unwrap();
        let h = 1e-5;
        for k in 0..4 {
            let bump = |sign: f64| {
                let mut x = p;
                match k {
                    0 => x.q += sign * h,
                    1 => x.r += sign * h,
                    2 => x.q_hat += sign * h,
                    _ => x.r_hat += sign * h,
                }
                x
            };
            let g = (phi(&bump(1.0)) - phi(&bump(-1.0))) / (2.0 * h);
            assert!(g.abs() < 1e-6, "component {k}: gradient {g}");
        }
    }

    #[test]
    fn rbm_threshold_asymptote() {
        for beta in [0.8, 1.0, 1.3] {
            let alpha = rbm_alpha_c(beta) + 0.01;
            let sol = replica_rbm_solve(alpha, beta, ReplicaOrderParams::symmetric(0.5), &opts()).unwrap();
            let q = sol.params.q;
            assert!(sol.converged);
            assert!(
                ((q - rbm_overlap_asymptote(alpha, beta)) / q).abs() <= 0.01,
                "beta {beta}: q = {q}"
            );
        }
        let below = replica_rbm_solve(0.9, 1.0, ReplicaOrderParams::symmetric(0.5), &opts()).unwrap();
        assert!(below.params.q < 1e-3);
    }

    #[test]
    fn hopfield_density_evolution() {
        let below = de_hopfield_solve(0.3, 0.8, 0.5, &opts()).unwrap();
        assert!(below.params < 1e-6);
        let above = de_hopfield_solve(0.6, 0.8, 0.5, &opts()).unwrap();
        assert!(above.converged && above.params > 0.05);
        assert_eq!(de_hopfield_solve(1.0, 0.8, 0.0, &opts()).unwrap().params, 0.0);
        assert!(matches!(
            de_hopfield_solve(1.0, 1.2, 0.0, &opts()),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn hopfield_cold_branch_matches_density_evolution() {
        for alpha in [0.5, 1.0, 2.0] {
            let de = de_hopfield_solve(alpha, 0.8, 0.5, &opts()).unwrap();
            let init = ReplicaOrderParams {
                q: 0.0,
                r: 0.5,
                ..Default::default()
            };
            let rep = replica_hopfield_solve(alpha, 0.8, init, &opts()).unwrap();
            assert!((rep.params.r - de.params).abs() < 1e-8);
        }
    }

    #[test]
    fn hopfield_r_asymptote() {
        let alpha = hopfield_alpha_c(0.8) + 0.001;
        let sol = replica_hopfield_solve(alpha, 0.8, ReplicaOrderParams::symmetric(0.5), &opts()).unwrap();
        let want = hopfield_r_slope(0.8) * 0.001;
        assert!(((sol.params.r - want) / want).abs() < 0.01);
    }

    #[test]
    fn hopfield_mismatch_breaks_nishimori() {
        let sol = replica_hopfield_solve(3.0, 0.8, ReplicaOrderParams::symmetric(0.5), &opts()).unwrap();
        assert!(sol.converged);
        assert!(sol.params.q > 0.05);
        assert!((sol.params.q - sol.params.r).abs() > 1e-3);
    }

    #[test]
    fn hopfield_entropy_is_the_temperature_derivative_at_fixed_data() {
        let (alpha, beta) = (2.0, 0.8);
        let bt = beta * beta;
        let p = replica_hopfield_solve(alpha, beta, ReplicaOrderParams::symmetric(0.5), &opts())
            .unwrap()
            .params;
        let h = 1e-4;
        let d = (replica_hopfield_free_entropy_mismatched(&p, alpha, bt + h, bt).unwrap()
            - replica_hopfield_free_entropy_mismatched(&p, alpha, bt - h, bt).unwrap())
            / (2.0 * h);
        let fd = replica_hopfield_free_entropy(&p, alpha, beta).unwrap() - bt * d;
        let s = replica_hopfield_entropy(&p, alpha, beta).unwrap();
        assert!((fd - s).abs() < 1e-6, "{fd} vs {s}");
        let zero = ReplicaOrderParams::default();
        assert!((replica_hopfield_entropy(&zero, 0.0, beta).unwrap() - LN_2).abs() < 1e-15);
    }

    #[test]
    fn scan_flags_and_orders_rows() {
        let grid = [0.5, 1.0, 1.5];
        let rows = scan_phase_diagram(Variant::Rbm, 1.0, &grid, BranchPolicy::Both, &opts()).unwrap();
        assert_eq!(rows.len(), 6);
        assert!(rows[..3].iter().all(|r| r.branch == Branch::Cold));
        assert!(rows[0].q < 1e-3 && rows[2].q > 0.1);
        assert!((rows[2].q - rows[5].q).abs() < 1e-6);
        assert!(scan_phase_diagram(Variant::Rbm, 1.0, &[1.0, 0.5, 2.0], BranchPolicy::Both, &opts()).is_err());
    }

    #[test]
    fn entropy_crisis_on_the_cold_branch() {
        let a = entropy_zero_crossing(Variant::Rbm, 0.8, Branch::Cold, 1.5, 2.4, 1e-6, &opts())
            .unwrap()
            .unwrap();
        assert!((a - 2.0 * LN_2 / 0.64).abs() < 1e-3, "{a}");
    }
}
