//! Pieces shared by every message-passing engine: initialization, run
//! options, convergence reports and the result record.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{overlaps, FeatureVector, Marginals, Variant};
use crate::rng;

/// Clip applied to `atanh` arguments so saturated messages stay finite.
pub const ATANH_CLAMP: f64 = 1.0 - 1e-15;

/// Default scale of `InitKind::RandomSmall`.
pub const DEFAULT_INIT_SCALE: f64 = 0.1;

/// Starting point of the messages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Zero,
    /// Uniform on `(-scale, scale)`.
    RandomSmall(f64),
    /// `0.99 * xi`, i.e. inside the basin of the planted feature.
    Planted(FeatureVector),
}

impl Default for InitKind {
    fn default() -> Self {
        InitKind::RandomSmall(DEFAULT_INIT_SCALE)
    }
}

impl InitKind {
    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            InitKind::RandomSmall(scale) if !(*scale > 0.0 && *scale < 1.0) => {
                Err(Error::invalid(format!("init scale must lie in (0, 1), got {scale}")))
            }
            InitKind::Planted(xi) if xi.len() != n => Err(Error::invalid(format!(
                "planted init has {} components, dataset has {n} visible units",
                xi.len()
            ))),
            _ => Ok(()),
        }
    }

    /// `count` values for a layout whose entries cycle over the `n` features
    /// (row-major `M x N` edges, or just `N` nodes).
    pub(crate) fn fill(&self, n: usize, count: usize, seed: u64) -> Vec<f64> {
        match self {
            InitKind::Zero => vec![0.0; count],
            InitKind::RandomSmall(scale) => {
                let mut r = rng::stream(seed, rng::STREAM_MESSAGES);
                (0..count).map(|_| r.random_range(-scale..*scale)).collect()
            }
            InitKind::Planted(xi) => (0..count).map(|k| 0.99 * xi.as_slice()[k % n] as f64).collect(),
        }
    }
}

/// Order in which a sweep visits the factor graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// All constraint-to-feature messages, then all feature-to-constraint messages.
    #[default]
    Synchronous,
    /// Feature nodes one at a time in a fresh random order each sweep.
    RandomSequential,
}

/// Stopping rule and damping for a message-passing run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Weight kept on the old message: `m <- (1 - damping) m_new + damping m_old`.
    pub damping: f64,
    pub schedule: Schedule,
}

impl Default for MpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 1000,
            damping: 0.0,
            schedule: Schedule::Synchronous,
        }
    }
}

impl MpOptions {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_damping(mut self, damping: f64) -> Self {
        self.damping = damping;
        self
    }

    /// For engines whose update order is fixed by their time indexes.
    pub(crate) fn require_synchronous(&self, engine: &str) -> Result<()> {
        if self.schedule != Schedule::Synchronous {
            return Err(Error::invalid(format!(
                "{engine} supports only the synchronous schedule"
            )));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::invalid(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::invalid(format!(
                "damping must lie in [0, 1), got {}",
                self.damping
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub converged: bool,
    pub iterations: usize,
    /// Largest absolute message change in the last sweep.
    pub max_delta: f64,
}

/// Bethe estimates of the thermodynamic densities.
///
/// `free_entropy` is `ln Z / N` (that is `-beta f`). For the Hopfield variant
/// the energy is conjugate to `beta_tilde = beta^2`, so the identity reads
/// `free_entropy = entropy - beta_tilde * energy` there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetheObservables {
    pub free_entropy: f64,
    pub entropy: f64,
    pub energy: f64,
}

impl BetheObservables {
    /// `f = -free_entropy / beta` (the conjugate temperature for the variant).
    pub fn free_energy(&self, beta: f64) -> f64 {
        -self.free_entropy / beta
    }
}

/// The JSON-serializable summary of one inference run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub variant: Variant,
    pub algorithm: String,
    pub marginals: Marginals,
    pub q_mag: Option<f64>,
    pub q_abs: Option<f64>,
    #[serde(rename = "Q")]
    pub self_overlap: f64,
    pub s: Option<f64>,
    pub f: Option<f64>,
    #[serde(rename = "epsilon")]
    pub energy: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl RunRecord {
    pub fn new(
        variant: Variant,
        algorithm: &str,
        marginals: Marginals,
        report: &ConvergenceReport,
        xi_true: Option<&FeatureVector>,
        bethe: Option<(BetheObservables, f64)>,
    ) -> Result<Self> {
        let ov = xi_true.map(|xi| overlaps(xi, &marginals)).transpose()?;
        Ok(Self {
            variant,
            algorithm: algorithm.to_string(),
            self_overlap: marginals.self_overlap(),
            marginals,
            q_mag: ov.map(|o| o.q_mag),
            q_abs: ov.map(|o| o.q_abs),
            s: bethe.map(|(b, _)| b.entropy),
            f: bethe.map(|(b, beta)| b.free_energy(beta)),
            energy: bethe.map(|(b, _)| b.energy),
            converged: report.converged,
            iterations: report.iterations,
        })
    }
}

/// `ln cosh x`, stable for large `|x|`.
#[inline]
pub fn ln_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// `ln(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `1 / (1 + e^{-x})`.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn clamped_atanh(x: f64) -> f64 {
    x.clamp(-ATANH_CLAMP, ATANH_CLAMP).atanh()
}

/// `tanh` through one `exp`; absolute error ~1e-16, about twice as fast as
/// the libm routine. Used in the per-edge loops.
#[inline]
pub(crate) fn fast_tanh(x: f64) -> f64 {
    if x.abs() > 20.0 {
        return x.signum();
    }
    let e = (2.0 * x).exp();
    (e - 1.0) / (e + 1.0)
}

/// [`clamped_atanh`] through one `ln`, same accuracy trade as [`fast_tanh`].
#[inline]
pub(crate) fn fast_clamped_atanh(x: f64) -> f64 {
    let x = x.clamp(-ATANH_CLAMP, ATANH_CLAMP);
    0.5 * ((1.0 + x) / (1.0 - x)).ln()
}

/// `ln(e^a + e^b)`.
#[inline]
pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `sum_b u_{b->i}` over the row-major `M x N` edge array.
pub(crate) fn column_sums(edges: &[f64], n: usize) -> Vec<f64> {
    let mut sums = vec![0.0; n];
    for row in edges.chunks_exact(n) {
        for (s, &u) in sums.iter_mut().zip(row) {
            *s += u;
        }
    }
    sums
}

/// Feature-to-constraint update shared by the RBM and Hopfield engines:
/// `m_{i->a} = tanh(sum_{b != a} u_{b->i})`, returning the largest change.
pub(crate) fn update_feature_messages(m_edge: &mut [f64], u_edge: &[f64], n: usize, damping: f64) -> f64 {
    let totals = column_sums(u_edge, n);
    let mut delta = 0.0f64;
    for (m_row, u_row) in m_edge.chunks_exact_mut(n).zip(u_edge.chunks_exact(n)) {
        for ((m, &u), &total) in m_row.iter_mut().zip(u_row).zip(&totals) {
            let fresh = fast_tanh(total - u);
            let next = (1.0 - damping) * fresh + damping * *m;
            delta = delta.max((next - *m).abs());
            *m = next;
        }
    }
    delta
}
