//! Seeded ensembles of planted instances and their summary statistics.
//!
//! Instance `k` of an ensemble with base seed `s` uses the derived seed
//! `derive_seed(s, k)` for both its feature vector and its samples. One
//! dataset of the largest size on the α grid is drawn per instance and
//! truncated for smaller α, so the grid points of one instance share data.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hopfield::{hopfield_amp_run, hopfield_bethe_observables, hopfield_smp_run};
use crate::model::{sample_dataset, Dataset, FeatureVector, ModelParams, Variant};
use crate::mp::{BetheObservables, InitKind, MpOptions, RunRecord, DEFAULT_INIT_SCALE};
use crate::rbm_amp::{amp_run, naive_mean_field_run};
use crate::rbm_mp::{bethe_observables, smp_run};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Smp,
    Amp,
    /// AMP without the Onsager terms.
    Naive,
    HopfieldSmp,
    HopfieldAmp,
}

impl Algorithm {
    pub fn variant(self) -> Variant {
        match self {
            Algorithm::Smp | Algorithm::Amp | Algorithm::Naive => Variant::Rbm,
            Algorithm::HopfieldSmp | Algorithm::HopfieldAmp => Variant::Hopfield,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Smp => "smp",
            Algorithm::Amp => "amp",
            Algorithm::Naive => "naive",
            Algorithm::HopfieldSmp => "hopfield_smp",
            Algorithm::HopfieldAmp => "hopfield_amp",
        }
    }

    /// Whether the engine produces Bethe observables.
    pub fn has_bethe(self) -> bool {
        matches!(self, Algorithm::Smp | Algorithm::HopfieldSmp)
    }
}

/// How an ensemble member's messages start; `Planted` uses that member's own
/// feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitPolicy {
    Zero,
    RandomSmall(f64),
    Planted,
}

impl Default for InitPolicy {
    fn default() -> Self {
        InitPolicy::RandomSmall(DEFAULT_INIT_SCALE)
    }
}

impl InitPolicy {
    pub fn resolve(self, xi: &FeatureVector) -> InitKind {
        match self {
            InitPolicy::Zero => InitKind::Zero,
            InitPolicy::RandomSmall(s) => InitKind::RandomSmall(s),
            InitPolicy::Planted => InitKind::Planted(xi.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub index: usize,
    pub seed: u64,
    pub xi: FeatureVector,
    pub dataset: Dataset,
}

impl Instance {
    pub fn generate(n: usize, m: usize, beta_data: f64, base_seed: u64, index: usize) -> Result<Self> {
        let seed = derive_seed(base_seed, index as u64);
        let xi = FeatureVector::random(n, seed)?;
        let dataset = if m == 0 {
            Dataset::from_rows(n, Vec::new())?
        } else {
            sample_dataset(&xi, beta_data, m, seed)?
        };
        Ok(Self {
            index,
            seed,
            xi,
            dataset,
        })
    }
}

/// `M = round(alpha N)`.
pub fn samples_for(alpha: f64, n: usize) -> usize {
    (alpha * n as f64).round() as usize
}

/// Runs one engine on one dataset and scores it against the planted feature.
pub fn run_one(
    algorithm: Algorithm,
    dataset: &Dataset,
    xi: &FeatureVector,
    beta: f64,
    init: &InitKind,
    seed: u64,
    opts: &MpOptions,
) -> Result<RunRecord> {
    let variant = algorithm.variant();
    let params = match variant {
        Variant::Rbm => ModelParams::rbm(beta),
        Variant::Hopfield => ModelParams::hopfield(beta),
    };
    let (marginals, report, bethe): (_, _, Option<BetheObservables>) = match algorithm {
        Algorithm::Smp => {
            let (m, st, rep) = smp_run(dataset, &params, init, seed, opts)?;
            let b = bethe_observables(&st, dataset, &params)?;
            (m, rep, Some(b))
        }
        Algorithm::HopfieldSmp => {
            let (m, st, rep) = hopfield_smp_run(dataset, &params, init, seed, opts)?;
            let b = hopfield_bethe_observables(&st, dataset, &params)?;
            (m, rep, Some(b))
        }
        Algorithm::Amp => {
            let (m, _, rep) = amp_run(dataset, &params, init, seed, opts)?;
            (m, rep, None)
        }
        Algorithm::Naive => {
            let (m, _, rep) = naive_mean_field_run(dataset, &params, init, seed, opts)?;
            (m, rep, None)
        }
        Algorithm::HopfieldAmp => {
            let (m, _, rep) = hopfield_amp_run(dataset, &params, init, seed, opts)?;
            (m, rep, None)
        }
    };
    let conjugate = match variant {
        Variant::Rbm => params.beta,
        Variant::Hopfield => params.beta_tilde(),
    };
    RunRecord::new(
        variant,
        algorithm.name(),
        marginals,
        &report,
        Some(xi),
        bethe.map(|b| (b, conjugate)),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n: usize,
    pub alphas: Vec<f64>,
    /// Temperature the data are generated at.
    pub beta_data: f64,
    /// Temperature used for inference.
    pub beta: f64,
    pub instances: usize,
    pub seed: u64,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub init: InitPolicy,
    #[serde(default)]
    pub opts: MpOptions,
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.instances == 0 {
            return Err(Error::invalid("ensemble needs N >= 1 and at least one instance"));
        }
        if self.alphas.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::invalid("alpha grid must be finite and non-negative"));
        }
        if !(self.beta_data > 0.0 && self.beta_data.is_finite() && self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid("temperatures must be finite and > 0"));
        }
        self.opts.validate()
    }
}

/// One run of the ensemble. `record` is `None` when the engine failed;
/// `error` then holds the message.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceRow {
    pub instance: usize,
    pub seed: u64,
    pub alpha: f64,
    pub m: usize,
    pub record: Option<RunRecord>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Stat {
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
}

impl Stat {
    /// Mean and standard error of the mean; `NaN` mean for an empty sample.
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        let count = v.len();
        if count == 0 {
            return Self {
                mean: f64::NAN,
                stderr: f64::NAN,
                count,
            };
        }
        let mean = v.iter().sum::<f64>() / count as f64;
        let stderr = if count > 1 {
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
            (var / count as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, stderr, count }
    }
}

/// Statistics at one grid point. Overlaps use every successful run; the
/// thermodynamic densities only the converged ones.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsemblePoint {
    pub alpha: f64,
    pub m: usize,
    pub runs: usize,
    pub converged: usize,
    pub failed: usize,
    pub q_abs: Stat,
    pub q_mag: Stat,
    pub self_overlap: Stat,
    pub iterations: Stat,
    pub entropy: Stat,
    pub free_energy: Stat,
    pub energy: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleResult {
    pub points: Vec<EnsemblePoint>,
    pub rows: Vec<InstanceRow>,
}

pub fn summarize(alpha: f64, m: usize, rows: &[&InstanceRow]) -> EnsemblePoint {
    let ok: Vec<&RunRecord> = rows.iter().filter_map(|r| r.record.as_ref()).collect();
    let conv: Vec<&RunRecord> = ok.iter().copied().filter(|r| r.converged).collect();
    EnsemblePoint {
        alpha,
        m,
        runs: rows.len(),
        converged: conv.len(),
        failed: rows.len() - ok.len(),
        q_abs: Stat::of(ok.iter().filter_map(|r| r.q_abs)),
        q_mag: Stat::of(ok.iter().filter_map(|r| r.q_mag)),
        self_overlap: Stat::of(ok.iter().map(|r| r.self_overlap)),
        iterations: Stat::of(ok.iter().map(|r| r.iterations as f64)),
        entropy: Stat::of(conv.iter().filter_map(|r| r.s)),
        free_energy: Stat::of(conv.iter().filter_map(|r| r.f)),
        energy: Stat::of(conv.iter().filter_map(|r| r.energy)),
    }
}

/// Runs `config.algorithm` on every (instance, α) pair. Work is spread over
/// the rayon pool; results come back in (α, instance) order regardless.
pub fn run_ensemble(config: &EnsembleConfig) -> Result<EnsembleResult> {
    config.validate()?;
    let sizes: Vec<usize> = config.alphas.iter().map(|&a| samples_for(a, config.n)).collect();
    let m_max = sizes.iter().copied().max().unwrap_or(0);
    let instances: Vec<Instance> = (0..config.instances)
        .into_par_iter()
        .map(|k| Instance::generate(config.n, m_max, config.beta_data, config.seed, k))
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, usize)> = (0..config.alphas.len())
        .flat_map(|g| (0..config.instances).map(move |k| (g, k)))
        .collect();
    let rows: Vec<InstanceRow> = jobs
        .par_iter()
        .map(|&(g, k)| {
            let inst = &instances[k];
            let data = inst.dataset.truncated(sizes[g]);
            let init = config.init.resolve(&inst.xi);
            let out = run_one(
                config.algorithm,
                &data,
                &inst.xi,
                config.beta,
                &init,
                inst.seed,
                &config.opts,
            );
            if let Err(e) = &out {
                log::warn!("instance {k} at alpha {}: {e}", config.alphas[g]);
            }
            InstanceRow {
                instance: k,
                seed: inst.seed,
                alpha: config.alphas[g],
                m: sizes[g],
                error: out.as_ref().err().map(|e| e.to_string()),
                record: out.ok(),
            }
        })
        .collect();

    let points = config
        .alphas
        .iter()
        .zip(&sizes)
        .enumerate()
        .map(|(g, (&alpha, &m))| {
            let at: Vec<&InstanceRow> = rows[g * config.instances..(g + 1) * config.instances].iter().collect();
            summarize(alpha, m, &at)
        })
        .collect();
    Ok(EnsembleResult { points, rows })
}

/// Mean over paired runs of `|f(a) - f(b)|`, matched on (instance, α), for
/// runs that succeeded on both sides. Returns one value per α of `a`.
pub fn paired_mean_abs_difference(
    a: &EnsembleResult,
    b: &EnsembleResult,
    f: impl Fn(&RunRecord) -> Option<f64>,
) -> Vec<(f64, Stat)> {
    a.points
        .iter()
        .map(|p| {
            let diffs = a.rows.iter().filter(|r| r.alpha == p.alpha).filter_map(|ra| {
                let rb = b
                    .rows
                    .iter()
                    .find(|rb| rb.alpha == ra.alpha && rb.instance == ra.instance)?;
                Some((f(ra.record.as_ref()?)? - f(rb.record.as_ref()?)?).abs())
            });
            (p.alpha, Stat::of(diffs))
        })
        .collect()
}
