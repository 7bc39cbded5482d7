//! Exact enumeration of the posteriors for small `N`.
//!
//! Every posterior here is invariant under `xi -> -xi` (jointly with
//! `B -> -B` when the hidden field is on), so the plain marginals vanish. A
//! message-passing fixed point breaks that symmetry, and the quantity it
//! approximates is the marginal restricted to one half of the state space:
//! `2 * sum_{xi . ref > 0} P(xi) xi`. That is what `resolved` holds.
//!
//! Two entropies are reported. `entropy` is `(1 - beta d/dbeta) ln Z / N`, the
//! quantity the Bethe entropy estimates. `shannon_entropy` is
//! `-(1/N) sum P ln P`. They coincide for the Hopfield weight, which is linear
//! in its coupling, and differ for the RBM.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Dataset, Marginals, ModelParams, Variant};
use crate::mp::ln_cosh;

pub const MAX_N: usize = 20;
pub const MAX_N_HIDDEN_FIELD: usize = 18;

/// Step of the central difference used for the energy.
pub const ENERGY_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactPosterior {
    /// `ln sum_xi W(xi)` with the unnormalized weight of the variant.
    pub log_z: f64,
    pub marginals: Marginals,
    /// Marginals restricted to `xi . ref > 0`; `None` without a reference.
    pub resolved: Option<Marginals>,
    pub entropy: f64,
    pub shannon_entropy: f64,
    /// `-(1/N) d ln Z / d(coupling)` by central differences. The coupling is
    /// `beta` for the RBM and `beta^2` for the Hopfield model.
    pub energy: f64,
    /// The same derivative as an exact posterior average.
    pub energy_direct: f64,
    /// `<B_h>` and its resolved counterpart, hidden-field posterior only.
    pub field_mean: Option<f64>,
    pub resolved_field_mean: Option<f64>,
}

impl ExactPosterior {
    pub fn free_entropy(&self, n: usize) -> f64 {
        self.log_z / n as f64
    }
}

#[derive(Clone, Copy)]
enum Weight {
    Rbm { beta: f64 },
    Hopfield { beta_tilde: f64 },
    HiddenField { beta: f64, phi0: f64 },
}

impl Weight {
    fn coupling(self) -> f64 {
        match self {
            Weight::Rbm { beta } | Weight::HiddenField { beta, .. } => beta,
            Weight::Hopfield { beta_tilde } => beta_tilde,
        }
    }

    fn with_coupling(self, c: f64) -> Self {
        match self {
            Weight::Rbm { .. } => Weight::Rbm { beta: c },
            Weight::Hopfield { .. } => Weight::Hopfield { beta_tilde: c },
            Weight::HiddenField { phi0, .. } => Weight::HiddenField { beta: c, phi0 },
        }
    }

    /// `ln W` and `d ln W / d(coupling)` for one field configuration; with
    /// the hidden field, one entry per `B = +1, -1`.
    fn eval(self, x: &[f64], out: &mut [(f64, f64); 2]) {
        match self {
            Weight::Rbm { beta } => {
                let (mut lw, mut d) = (0.0, 0.0);
                for &v in x {
                    lw += ln_cosh(beta * v);
                    d += v * (beta * v).tanh();
                }
                out[0] = (lw, d);
            }
            Weight::Hopfield { beta_tilde } => {
                let s: f64 = x.iter().map(|v| v * v).sum::<f64>() / 2.0;
                out[0] = (beta_tilde * s, s);
            }
            Weight::HiddenField { beta, phi0 } => {
                for (slot, b) in out.iter_mut().zip([1.0, -1.0]) {
                    let (mut lw, mut d) = (0.0, 0.0);
                    for &v in x {
                        let y = v + b * phi0;
                        lw += ln_cosh(beta * y);
                        d += y * (beta * y).tanh();
                    }
                    *slot = (lw, d);
                }
            }
        }
    }

    fn branches(self) -> usize {
        match self {
            Weight::HiddenField { .. } => 2,
            _ => 1,
        }
    }
}

/// Log-domain accumulator that rescales whenever a larger log-weight shows up.
struct Accumulator {
    shift: f64,
    z: f64,
    m: Vec<f64>,
    m_resolved: Vec<f64>,
    lw: f64,
    dlw: f64,
    field: f64,
    field_resolved: f64,
}

impl Accumulator {
    fn new(n: usize) -> Self {
        Self {
            shift: f64::NEG_INFINITY,
            z: 0.0,
            m: vec![0.0; n],
            m_resolved: vec![0.0; n],
            lw: 0.0,
            dlw: 0.0,
            field: 0.0,
            field_resolved: 0.0,
        }
    }

    fn rescale(&mut self, lw: f64) {
        if lw > self.shift {
            let f = (self.shift - lw).exp();
            self.z *= f;
            self.m.iter_mut().for_each(|v| *v *= f);
            self.m_resolved.iter_mut().for_each(|v| *v *= f);
            self.lw *= f;
            self.dlw *= f;
            self.field *= f;
            self.field_resolved *= f;
            self.shift = lw;
        }
    }

    fn log_z(&self) -> f64 {
        self.shift + self.z.ln()
    }
}

fn log_z_only(cols: &[Vec<f64>], m: usize, weight: Weight) -> f64 {
    let mut x: Vec<f64> = (0..m).map(|a| cols.iter().map(|c| c[a]).sum()).collect();
    let mut shift = f64::NEG_INFINITY;
    let mut z = 0.0;
    let mut xi = vec![1.0f64; cols.len()];
    let mut out = [(0.0, 0.0); 2];
    for k in 0u64..(1u64 << cols.len()) {
        if k > 0 {
            flip(&mut x, &mut xi, cols, k);
        }
        weight.eval(&x, &mut out);
        for &(lw, _) in &out[..weight.branches()] {
            if lw > shift {
                z *= (shift - lw).exp();
                shift = lw;
            }
            z += (lw - shift).exp();
        }
    }
    shift + z.ln()
}

/// Gray-code step `k`: flips the feature at the lowest set bit of `k`.
fn flip(x: &mut [f64], xi: &mut [f64], cols: &[Vec<f64>], k: u64) {
    let i = k.trailing_zeros() as usize;
    let s = 2.0 * xi[i];
    for (v, &c) in x.iter_mut().zip(&cols[i]) {
        *v -= s * c;
    }
    xi[i] = -xi[i];
}

fn enumerate(dataset: &Dataset, weight: Weight, reference: Option<&[f64]>, max_n: usize) -> Result<ExactPosterior> {
    let n = dataset.n_visible();
    let m = dataset.n_samples();
    if n > max_n {
        return Err(Error::TooLarge { n, max: max_n });
    }
    if n == 0 {
        return Err(Error::invalid("cannot enumerate an empty feature vector"));
    }
    if let Some(r) = reference {
        if r.len() != n {
            return Err(Error::invalid("reference length differs from N"));
        }
    }
    let inv_sqrt_n = 1.0 / (n as f64).sqrt();
    // column-major copy scaled by 1/sqrt N, so x_a = sum_i xi_i cols[i][a]
    let cols: Vec<Vec<f64>> = (0..n)
        .map(|i| dataset.rows().map(|row| row[i] as f64 * inv_sqrt_n).collect())
        .collect();

    let mut x: Vec<f64> = (0..m).map(|a| cols.iter().map(|c| c[a]).sum()).collect();
    let mut xi = vec![1.0f64; n];
    let mut acc = Accumulator::new(n);
    let mut out = [(0.0, 0.0); 2];
    for k in 0u64..(1u64 << n) {
        if k > 0 {
            flip(&mut x, &mut xi, cols.as_slice(), k);
        }
        weight.eval(&x, &mut out);
        let side = reference.map(|r| xi.iter().zip(r).map(|(a, b)| a * b).sum::<f64>() > 0.0);
        for (branch, &(lw, dlw)) in out[..weight.branches()].iter().enumerate() {
            acc.rescale(lw);
            let w = (lw - acc.shift).exp();
            acc.z += w;
            acc.lw += w * lw;
            acc.dlw += w * dlw;
            let b = if branch == 0 { 1.0 } else { -1.0 };
            acc.field += w * b;
            for (mi, &s) in acc.m.iter_mut().zip(&xi) {
                *mi += w * s;
            }
            if side == Some(true) {
                for (mi, &s) in acc.m_resolved.iter_mut().zip(&xi) {
                    *mi += w * s;
                }
                acc.field_resolved += w * b;
            }
        }
    }

    let nf = n as f64;
    let log_z = acc.log_z();
    let c = weight.coupling();
    let energy_direct = -acc.dlw / acc.z / nf;
    let up = log_z_only(&cols, m, weight.with_coupling(c + ENERGY_STEP));
    let down = log_z_only(&cols, m, weight.with_coupling(c - ENERGY_STEP));
    let energy = -(up - down) / (2.0 * ENERGY_STEP) / nf;
    let hidden = matches!(weight, Weight::HiddenField { .. });
    Ok(ExactPosterior {
        log_z,
        marginals: Marginals::from_clamped(acc.m.iter().map(|v| v / acc.z).collect()),
        resolved: reference.map(|_| Marginals::from_clamped(acc.m_resolved.iter().map(|v| 2.0 * v / acc.z).collect())),
        entropy: log_z / nf + c * energy_direct,
        shannon_entropy: (log_z - acc.lw / acc.z) / nf,
        energy,
        energy_direct,
        field_mean: hidden.then(|| acc.field / acc.z),
        resolved_field_mean: (hidden && reference.is_some()).then(|| 2.0 * acc.field_resolved / acc.z),
    })
}

/// `P(xi) ∝ prod_a cosh(beta xi . sigma^a / sqrt N)`.
pub fn exact_rbm_posterior(dataset: &Dataset, beta: f64, reference: Option<&[f64]>) -> Result<ExactPosterior> {
    ModelParams::rbm(beta).validate()?;
    enumerate(dataset, Weight::Rbm { beta }, reference, MAX_N)
}

/// `P(xi) ∝ prod_a exp(beta^2 (xi . sigma^a)^2 / 2N)`.
pub fn exact_hopfield_posterior(dataset: &Dataset, beta: f64, reference: Option<&[f64]>) -> Result<ExactPosterior> {
    ModelParams::hopfield(beta).validate()?;
    enumerate(
        dataset,
        Weight::Hopfield {
            beta_tilde: beta * beta,
        },
        reference,
        MAX_N,
    )
}

/// `P(xi, B) ∝ prod_a cosh(beta (xi . sigma^a / sqrt N + B phi0))` with a
/// uniform prior on `B = ±1`.
pub fn exact_hidden_field_posterior(
    dataset: &Dataset,
    beta: f64,
    phi0: f64,
    reference: Option<&[f64]>,
) -> Result<ExactPosterior> {
    ModelParams::rbm(beta).with_hidden_field(phi0).validate()?;
    enumerate(
        dataset,
        Weight::HiddenField { beta, phi0 },
        reference,
        MAX_N_HIDDEN_FIELD,
    )
}

/// Dispatches on the variant and on whether the hidden field is on.
pub fn exact_posterior(dataset: &Dataset, params: &ModelParams, reference: Option<&[f64]>) -> Result<ExactPosterior> {
    match params.variant {
        Variant::Rbm if params.hidden_field != 0.0 => {
            exact_hidden_field_posterior(dataset, params.beta, params.hidden_field, reference)
        }
        Variant::Rbm => exact_rbm_posterior(dataset, params.beta, reference),
        Variant::Hopfield => exact_hopfield_posterior(dataset, params.beta, reference),
    }
}

/// Every state with its normalized probability, Gray-code order. For
/// inspection at `N <= 12`.
pub fn posterior_table(dataset: &Dataset, params: &ModelParams) -> Result<Vec<(Vec<i8>, f64)>> {
    const TABLE_MAX: usize = 12;
    let n = dataset.n_visible();
    if n > TABLE_MAX {
        return Err(Error::TooLarge { n, max: TABLE_MAX });
    }
    params.validate()?;
    let weight = match params.variant {
        Variant::Rbm if params.hidden_field != 0.0 => Weight::HiddenField {
            beta: params.beta,
            phi0: params.hidden_field,
        },
        Variant::Rbm => Weight::Rbm { beta: params.beta },
        Variant::Hopfield => Weight::Hopfield {
            beta_tilde: params.beta_tilde(),
        },
    };
    let inv_sqrt_n = 1.0 / (n as f64).sqrt();
    let cols: Vec<Vec<f64>> = (0..n)
        .map(|i| dataset.rows().map(|row| row[i] as f64 * inv_sqrt_n).collect())
        .collect();
    let log_z = log_z_only(&cols, dataset.n_samples(), weight);
    let mut x: Vec<f64> = (0..dataset.n_samples())
        .map(|a| cols.iter().map(|c| c[a]).sum())
        .collect();
    let mut xi = vec![1.0f64; n];
    let mut out = [(0.0, 0.0); 2];
    let mut table = Vec::with_capacity(1 << n);
    for k in 0u64..(1u64 << n) {
        if k > 0 {
            flip(&mut x, &mut xi, &cols, k);
        }
        weight.eval(&x, &mut out);
        let p: f64 = out[..weight.branches()].iter().map(|(lw, _)| (lw - log_z).exp()).sum();
        table.push((xi.iter().map(|&s| s as i8).collect(), p));
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sample_dataset, FeatureVector};
    use std::f64::consts::LN_2;

    fn data(n: usize, m: usize, beta: f64, seed: u64) -> (FeatureVector, Dataset) {
        let xi = FeatureVector::random(n, seed).unwrap();
        let d = sample_dataset(&xi, beta, m, seed + 7).unwrap();
        (xi, d)
    }

    /// Plain nested loops over all states, no Gray code and no rescaling.
    fn naive(d: &Dataset, w: impl Fn(&[f64]) -> f64) -> (f64, Vec<f64>) {
        let n = d.n_visible();
        let mut z = 0.0;
        let mut m = vec![0.0; n];
        for k in 0..(1u32 << n) {
            let xi: Vec<f64> = (0..n).map(|i| if k >> i & 1 == 1 { -1.0 } else { 1.0 }).collect();
            let x: Vec<f64> = d
                .rows()
                .map(|r| r.iter().zip(&xi).map(|(&s, &v)| s as f64 * v).sum::<f64>() / (n as f64).sqrt())
                .collect();
            let wt = w(&x);
            z += wt;
            for (mi, v) in m.iter_mut().zip(&xi) {
                *mi += wt * v;
            }
        }
        (z.ln(), m.into_iter().map(|v| v / z).collect())
    }

    #[test]
    fn empty_dataset() {
        let d = Dataset::from_rows(6, vec![]).unwrap();
        for e in [
            exact_rbm_posterior(&d, 1.0, None).unwrap(),
            exact_hopfield_posterior(&d, 1.0, None).unwrap(),
        ] {
            assert!((e.log_z - 6.0 * LN_2).abs() < 1e-12);
            assert!((e.entropy - LN_2).abs() < 1e-12);
            assert!((e.shannon_entropy - LN_2).abs() < 1e-12);
            assert!(e.marginals.as_slice().iter().all(|&m| m == 0.0));
            assert_eq!(e.energy_direct, 0.0);
        }
    }

    #[test]
    fn gray_code_matches_nested_loops() {
        let (_, d) = data(8, 6, 1.0, 1);
        let beta = 1.3;
        let e = exact_rbm_posterior(&d, beta, None).unwrap();
        let (lz, _) = naive(&d, |x| x.iter().map(|v| (beta * v).cosh()).product());
        assert!((e.log_z - lz).abs() < 1e-12);
        let h = exact_hopfield_posterior(&d, 0.7, None).unwrap();
        let (lz, _) = naive(&d, |x| x.iter().map(|v| (0.49 * v * v / 2.0).exp()).product());
        assert!((h.log_z - lz).abs() < 1e-12);
    }

    #[test]
    fn plain_marginals_vanish() {
        let (_, d) = data(8, 5, 1.0, 2);
        let e = exact_rbm_posterior(&d, 1.0, None).unwrap();
        assert!(e.marginals.as_slice().iter().all(|m| m.abs() < 1e-12));
        assert!(e.entropy >= 0.0 && e.entropy <= LN_2);
    }

    #[test]
    fn resolved_marginals_follow_the_reference() {
        let (xi, d) = data(10, 30, 1.5, 3);
        let r: Vec<f64> = xi.as_slice().iter().map(|&v| v as f64).collect();
        let e = exact_rbm_posterior(&d, 1.5, Some(&r)).unwrap();
        let flipped: Vec<f64> = r.iter().map(|v| -v).collect();
        let f = exact_rbm_posterior(&d, 1.5, Some(&flipped)).unwrap();
        let res = e.resolved.unwrap();
        for (a, b) in res.as_slice().iter().zip(f.resolved.unwrap().as_slice()) {
            assert!((a + b).abs() < 1e-12);
        }
        let q: f64 = res.as_slice().iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / 10.0;
        assert!(q > 0.3, "{q}");
    }

    #[test]
    fn energy_two_ways() {
        let (_, d) = data(10, 5, 1.0, 4);
        let e = exact_rbm_posterior(&d, 1.0, None).unwrap();
        assert!((e.energy - e.energy_direct).abs() < 1e-6);
        let h = exact_hopfield_posterior(&d, 0.6, None).unwrap();
        assert!((h.energy - h.energy_direct).abs() < 1e-6);
        // the Hopfield weight is linear in its coupling, so both entropies agree
        assert!((h.entropy - h.shannon_entropy).abs() < 1e-12);
    }

    #[test]
    fn hopfield_matches_rbm_at_small_beta() {
        let (xi, d) = data(8, 6, 1.0, 5);
        let r: Vec<f64> = xi.as_slice().iter().map(|&v| v as f64).collect();
        let beta = 0.1;
        let a = exact_rbm_posterior(&d, beta, Some(&r)).unwrap().resolved.unwrap();
        let b = exact_hopfield_posterior(&d, beta, Some(&r)).unwrap().resolved.unwrap();
        let diff = a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff < 10.0 * beta.powi(4), "{diff}");
    }

    #[test]
    fn hidden_field_reduction_and_strong_field_limit() {
        let (xi, d) = data(8, 4, 1.0, 6);
        let r: Vec<f64> = xi.as_slice().iter().map(|&v| v as f64).collect();
        let plain = exact_rbm_posterior(&d, 1.0, Some(&r)).unwrap();
        let ext = exact_hidden_field_posterior(&d, 1.0, 0.0, Some(&r)).unwrap();
        assert!((ext.log_z - plain.log_z - LN_2).abs() < 1e-12);
        for (a, b) in plain
            .resolved
            .unwrap()
            .as_slice()
            .iter()
            .zip(ext.resolved.unwrap().as_slice())
        {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(ext.field_mean.unwrap().abs() < 1e-12);
        // for phi0 -> inf, <B | xi> -> tanh(beta sum_a x_a): a finite limit, not +-1
        let a = exact_hidden_field_posterior(&d, 1.0, 20.0, Some(&r)).unwrap();
        let b = exact_hidden_field_posterior(&d, 1.0, 40.0, Some(&r)).unwrap();
        let (fa, fb) = (a.resolved_field_mean.unwrap(), b.resolved_field_mean.unwrap());
        assert!((fa - fb).abs() < 1e-9 && fb.abs() < 1.0);
    }

    #[test]
    fn refuses_large_n() {
        let d = Dataset::from_rows(21, vec![1; 21]).unwrap();
        assert!(matches!(
            exact_rbm_posterior(&d, 1.0, None),
            Err(Error::TooLarge { n: 21, max: 20 })
        ));
        let d = Dataset::from_rows(19, vec![1; 19]).unwrap();
        assert!(matches!(
            exact_hidden_field_posterior(&d, 1.0, 0.3, None),
            Err(Error::TooLarge { .. })
        ));
    }

    #[test]
    fn table_is_normalized() {
        let (_, d) = data(6, 4, 1.0, 7);
        let t = posterior_table(&d, &ModelParams::rbm(1.0).with_hidden_field(0.4)).unwrap();
        assert_eq!(t.len(), 64);
        assert!((t.iter().map(|(_, p)| p).sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
