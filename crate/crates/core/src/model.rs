//! The generative model: a single hidden unit coupled to `N` visible units
//! through binary synapses `xi`, with joint law
//! `P(sigma, h) ∝ exp(beta * h * xi·sigma / sqrt(N))`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// A binary feature (synapse) vector, every component `+1` or `-1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<i8>", into = "Vec<i8>")]
pub struct FeatureVector(Vec<i8>);

impl FeatureVector {
    pub fn new(components: Vec<i8>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("feature vector must have at least one component"));
        }
        if let Some(pos) = components.iter().position(|&c| c != 1 && c != -1) {
            return Err(Error::invalid(format!(
                "feature component {pos} is {}, expected +1 or -1",
                components[pos]
            )));
        }
        Ok(Self(components))
    }

    /// Uniformly random feature with equiprobable signs.
    pub fn random(n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("feature vector must have at least one component"));
        }
        let mut r = rng::stream(seed, rng::STREAM_FEATURE);
        Ok(Self((0..n).map(|_| if r.random::<bool>() { 1 } else { -1 }).collect()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.0
    }

    pub fn flipped(&self) -> Self {
        Self(self.0.iter().map(|&c| -c).collect())
    }
}

impl TryFrom<Vec<i8>> for FeatureVector {
    type Error = Error;
    fn try_from(v: Vec<i8>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<FeatureVector> for Vec<i8> {
    fn from(f: FeatureVector) -> Self {
        f.0
    }
}

/// `M` binary samples of `N` visible units, stored row-major by sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    samples: Vec<i8>,
    n_visible: usize,
    n_samples: usize,
}

impl Dataset {
    /// Builds a dataset from row-major `±1` entries. `n_samples = 0` is allowed
    /// (an empty factor graph) as long as `n_visible ≥ 1`.
    pub fn from_rows(n_visible: usize, samples: Vec<i8>) -> Result<Self> {
        if n_visible == 0 {
            return Err(Error::invalid("dataset needs at least one visible unit"));
        }
        if samples.len() % n_visible != 0 {
            return Err(Error::invalid(format!(
                "{} entries do not form rows of length {n_visible}",
                samples.len()
            )));
        }
        if let Some(pos) = samples.iter().position(|&s| s != 1 && s != -1) {
            return Err(Error::invalid(format!(
                "entry (sample {}, unit {}) is {}, expected +1 or -1",
                pos / n_visible,
                pos % n_visible,
                samples[pos]
            )));
        }
        let n_samples = samples.len() / n_visible;
        Ok(Self {
            samples,
            n_visible,
            n_samples,
        })
    }

    pub fn n_visible(&self) -> usize {
        self.n_visible
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    /// Data density `alpha = M / N`.
    pub fn alpha(&self) -> f64 {
        self.n_samples as f64 / self.n_visible as f64
    }

    pub fn sample(&self, a: usize) -> &[i8] {
        &self.samples[a * self.n_visible..(a + 1) * self.n_visible]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[i8]> {
        self.samples.chunks_exact(self.n_visible)
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.samples
    }

    /// Applies the gauge transform `sigma_i^a -> eps_i sigma_i^a`.
    pub fn gauge_transformed(&self, eps: &FeatureVector) -> Result<Self> {
        if eps.len() != self.n_visible {
            return Err(Error::invalid("gauge vector length differs from N"));
        }
        let samples = self
            .rows()
            .flat_map(|row| row.iter().zip(eps.as_slice()).map(|(&s, &e)| s * e))
            .collect();
        Ok(Self {
            samples,
            n_visible: self.n_visible,
            n_samples: self.n_samples,
        })
    }

    /// The first `m` samples.
    pub fn truncated(&self, m: usize) -> Self {
        let m = m.min(self.n_samples);
        Self {
            samples: self.samples[..m * self.n_visible].to_vec(),
            n_visible: self.n_visible,
            n_samples: m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[default]
    Rbm,
    Hopfield,
}

/// Inverse temperature, model variant and hidden-unit field strength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub beta: f64,
    pub variant: Variant,
    /// Strength `phi0` of the binary hidden-unit field `B_h * phi0`.
    #[serde(default)]
    pub hidden_field: f64,
}

impl ModelParams {
    pub fn rbm(beta: f64) -> Self {
        Self {
            beta,
            variant: Variant::Rbm,
            hidden_field: 0.0,
        }
    }

    pub fn hopfield(beta: f64) -> Self {
        Self {
            beta,
            variant: Variant::Hopfield,
            hidden_field: 0.0,
        }
    }

    pub fn with_hidden_field(mut self, phi0: f64) -> Self {
        self.hidden_field = phi0;
        self
    }

    /// Effective coupling of the Hopfield approximation, `beta^2`.
    pub fn beta_tilde(&self) -> f64 {
        self.beta * self.beta
    }

    /// Message passing accepts `beta = 0` (the decoupled limit); the mean-field
    /// solvers require it strictly positive.
    pub fn validate(&self) -> Result<()> {
        if !self.beta.is_finite() || self.beta < 0.0 {
            return Err(Error::invalid(format!(
                "beta must be finite and >= 0, got {}",
                self.beta
            )));
        }
        if !self.hidden_field.is_finite() {
            return Err(Error::invalid("hidden field must be finite"));
        }
        Ok(())
    }
}

/// Posterior magnetizations `m_i = <xi_i>`, so `P_i(xi_i) = (1 + m_i xi_i) / 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Marginals(Vec<f64>);

impl Marginals {
    pub fn new(m: Vec<f64>) -> Result<Self> {
        if let Some(pos) = m.iter().position(|x| !(x.abs() <= 1.0)) {
            return Err(Error::invalid(format!("marginal {pos} = {} outside [-1, 1]", m[pos])));
        }
        Ok(Self(m))
    }

    pub(crate) fn from_clamped(m: Vec<f64>) -> Self {
        Self(m.into_iter().map(|x| x.clamp(-1.0, 1.0)).collect())
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// `Q = (1/N) sum_i m_i^2`.
    pub fn self_overlap(&self) -> f64 {
        self.0.iter().map(|m| m * m).sum::<f64>() / self.0.len() as f64
    }
}

impl TryFrom<Vec<f64>> for Marginals {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Marginals> for Vec<f64> {
    fn from(m: Marginals) -> Self {
        m.0
    }
}

/// Draws `m` samples by ancestral sampling: `h` uniform on `{±1}`, then each
/// `sigma_i` independently with `P(sigma_i = +1 | h) = (1 + tanh(beta h xi_i / sqrt N)) / 2`.
///
/// Sample `a` uses ChaCha stream `a` of `seed`, so the result does not depend
/// on how the work is scheduled.
pub fn sample_dataset(xi: &FeatureVector, beta: f64, m: usize, seed: u64) -> Result<Dataset> {
    if m == 0 {
        return Err(Error::invalid("number of samples must be >= 1"));
    }
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::invalid(format!("beta must be finite and >= 0, got {beta}")));
    }
    let n = xi.len();
    let scale = beta / (n as f64).sqrt();
    // P(sigma_i = +1 | h xi_i = +1); the h xi_i = -1 case is its complement.
    let p_aligned = 0.5 * (1.0 + scale.tanh());
    let mut samples = Vec::with_capacity(n * m);
    for a in 0..m {
        let mut r = rng::stream(seed, a as u64);
        let h: i8 = if r.random::<bool>() { 1 } else { -1 };
        for &x in xi.as_slice() {
            let aligned = r.random::<f64>() < p_aligned;
            let s = if aligned { h * x } else { -h * x };
            samples.push(s);
        }
    }
    Dataset::from_rows(n, samples)
}

/// Maximizer of the posterior marginals: `sign(m_i)`, with `m_i = 0 -> +1`.
pub fn mpm_estimate(m: &Marginals) -> FeatureVector {
    FeatureVector(m.as_slice().iter().map(|&x| if x < 0.0 { -1 } else { 1 }).collect())
}

/// Overlap statistics between a planted feature and inferred marginals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Overlaps {
    /// `(1/N) sum xi_true_i m_i`.
    pub q_mag: f64,
    /// `(1/N) sum xi_true_i sign(m_i)`.
    pub q_mpm: f64,
    /// `|q_mag|`; the posterior is invariant under `xi -> -xi`.
    pub q_abs: f64,
    /// `(1/N) sum m_i^2`.
    pub self_overlap: f64,
}

pub fn overlaps(xi_true: &FeatureVector, m: &Marginals) -> Result<Overlaps> {
    if xi_true.len() != m.len() {
        return Err(Error::invalid(format!(
            "length mismatch: feature has {} components, marginals {}",
            xi_true.len(),
            m.len()
        )));
    }
    let n = xi_true.len() as f64;
    let est = mpm_estimate(m);
    let mut q_mag = 0.0;
    let mut q_mpm = 0i64;
    for ((&x, &mi), &e) in xi_true.as_slice().iter().zip(m.as_slice()).zip(est.as_slice()) {
        q_mag += x as f64 * mi;
        q_mpm += (x * e) as i64;
    }
    let q_mag = q_mag / n;
    Ok(Overlaps {
        q_mag,
        q_mpm: q_mpm as f64 / n,
        q_abs: q_mag.abs(),
        self_overlap: m.self_overlap(),
    })
}
