//! Experiment configuration: defaults, then a preset, then a JSON file, then
//! command-line flags, each layer overriding the previous one.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use binrbm::ensemble::{Algorithm, InitPolicy};
use binrbm::meanfield::BranchPolicy;
use binrbm::{MpOptions, Variant};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Bumped whenever a CSV column is added, removed or renamed.
pub const SCHEMA_VERSION: u32 = 1;

pub const PRESETS: &[(&str, &str)] = &[
    ("fig2", include_str!("../presets/fig2.json")),
    ("fig3", include_str!("../presets/fig3.json")),
    ("fig4", include_str!("../presets/fig4.json")),
    ("fig5", include_str!("../presets/fig5.json")),
    ("fig5-mnist", include_str!("../presets/fig5-mnist.json")),
    ("fig6", include_str!("../presets/fig6.json")),
    ("fig7", include_str!("../presets/fig7.json")),
    ("fig8", include_str!("../presets/fig8.json")),
    ("netsize", include_str!("../presets/netsize.json")),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Smp,
    Amp,
    /// AMP without the Onsager terms.
    Naive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Theory {
    #[default]
    Replica,
    De,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    Zero,
    #[default]
    Random,
    Planted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MnistConfig {
    pub digits: Vec<u8>,
    pub limit: usize,
    pub threshold: u8,
    pub images: String,
    pub labels: String,
}

impl Default for MnistConfig {
    fn default() -> Self {
        Self {
            digits: vec![0, 1],
            limit: 1000,
            threshold: binrbm::io::DEFAULT_MNIST_THRESHOLD,
            images: "train-images-idx3-ubyte".into(),
            labels: "train-labels-idx1-ubyte".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: Variant,
    pub algorithms: Vec<Engine>,
    pub theory: Theory,
    pub n: usize,
    /// Several network sizes; overrides `n` when non-empty.
    pub ns: Vec<usize>,
    /// Sample count for `generate` and `oracle-check`.
    pub m: usize,
    pub alphas: Vec<f64>,
    /// Sample counts, used instead of `alphas` when non-empty.
    pub samples: Vec<usize>,
    /// Finer grid for the theory lines; `alphas` when empty.
    pub theory_alphas: Vec<f64>,
    pub beta: f64,
    pub betas: Vec<f64>,
    /// Data temperature of a mismatch run; inference runs at `factor * beta_star`.
    pub beta_star: Option<f64>,
    pub factors: Vec<f64>,
    /// Keeps `beta / sqrt N` fixed across `ns`.
    pub beta_over_sqrt_n: Option<f64>,
    pub n_instances: usize,
    pub seed: u64,
    pub init: Init,
    pub init_scale: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
    pub branch: BranchPolicy,
    pub eta: f64,
    pub beta0s: Vec<f64>,
    pub outer_tol: f64,
    pub outer_max: usize,
    pub mnist: Option<MnistConfig>,
    pub feature_map_betas: Vec<f64>,
    pub feature_map_samples: usize,
    /// Dataset CSV to run `infer` on instead of a generated ensemble.
    pub data: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mp = MpOptions::default();
        Self {
            model: Variant::Rbm,
            algorithms: vec![Engine::Smp],
            theory: Theory::Replica,
            n: 100,
            ns: Vec::new(),
            m: 100,
            alphas: vec![1.0],
            samples: Vec::new(),
            theory_alphas: Vec::new(),
            beta: 1.0,
            betas: Vec::new(),
            beta_star: None,
            factors: Vec::new(),
            beta_over_sqrt_n: None,
            n_instances: 1,
            seed: 1,
            init: Init::Random,
            init_scale: binrbm::mp::DEFAULT_INIT_SCALE,
            tol: mp.tol,
            max_iter: mp.max_iter,
            damping: mp.damping,
            branch: BranchPolicy::Both,
            eta: 0.02,
            beta0s: vec![0.8],
            outer_tol: 1e-6,
            outer_max: 5000,
            mnist: None,
            feature_map_betas: Vec::new(),
            feature_map_samples: 50,
            data: None,
        }
    }
}

fn positive(name: &str, x: f64) -> Result<()> {
    if !(x > 0.0 && x.is_finite()) {
        bail!("{name} must be finite and > 0, got {x}");
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        positive("beta", self.beta)?;
        for &b in self.betas.iter().chain(&self.beta0s).chain(&self.factors) {
            positive("beta, beta0 and factors", b)?;
        }
        for x in [self.beta_star, self.beta_over_sqrt_n].into_iter().flatten() {
            positive("beta_star and beta_over_sqrt_n", x)?;
        }
        for &b in &self.feature_map_betas {
            positive("feature map beta", b)?;
        }
        if self.n == 0 || self.ns.contains(&0) {
            bail!("N must be >= 1");
        }
        if self.n_instances == 0 {
            bail!("n_instances must be >= 1");
        }
        if let Some(a) = self
            .alphas
            .iter()
            .chain(&self.theory_alphas)
            .find(|a| !(a.is_finite() && **a >= 0.0))
        {
            bail!("alpha must be finite and >= 0, got {a}");
        }
        if self.algorithms.is_empty() {
            bail!("at least one algorithm is required");
        }
        if !(self.init_scale > 0.0 && self.init_scale < 1.0) {
            bail!("init_scale must lie in (0, 1), got {}", self.init_scale);
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            bail!("eta must lie in (0, 1], got {}", self.eta);
        }
        positive("outer_tol", self.outer_tol)?;
        self.mp_options().validate()?;
        Ok(())
    }

    pub fn mp_options(&self) -> MpOptions {
        MpOptions::default()
            .with_tol(self.tol)
            .with_max_iter(self.max_iter)
            .with_damping(self.damping)
    }

    pub fn init_policy(&self) -> InitPolicy {
        match self.init {
            Init::Zero => InitPolicy::Zero,
            Init::Random => InitPolicy::RandomSmall(self.init_scale),
            Init::Planted => InitPolicy::Planted,
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        if self.ns.is_empty() {
            vec![self.n]
        } else {
            self.ns.clone()
        }
    }

    pub fn betas(&self) -> Vec<f64> {
        if self.betas.is_empty() {
            vec![self.beta]
        } else {
            self.betas.clone()
        }
    }

    /// `(beta_data, beta)` pairs to run at size `n`.
    pub fn temperatures(&self, n: usize) -> Vec<(f64, f64)> {
        if let Some(c) = self.beta_over_sqrt_n {
            let b = c * (n as f64).sqrt();
            return vec![(b, b)];
        }
        if !self.factors.is_empty() {
            let star = self.beta_star.unwrap_or(self.beta);
            return self.factors.iter().map(|f| (star, f * star)).collect();
        }
        self.betas().into_iter().map(|b| (b, b)).collect()
    }

    /// The α grid at size `n`.
    pub fn alpha_grid(&self, n: usize) -> Vec<f64> {
        if self.samples.is_empty() {
            self.alphas.clone()
        } else {
            self.samples.iter().map(|&m| m as f64 / n as f64).collect()
        }
    }

    pub fn theory_grid(&self) -> Vec<f64> {
        if self.theory_alphas.is_empty() {
            self.alphas.clone()
        } else {
            self.theory_alphas.clone()
        }
    }

    pub fn algorithm(&self, engine: Engine) -> Result<Algorithm> {
        Ok(match (self.model, engine) {
            (Variant::Rbm, Engine::Smp) => Algorithm::Smp,
            (Variant::Rbm, Engine::Amp) => Algorithm::Amp,
            (Variant::Rbm, Engine::Naive) => Algorithm::Naive,
            (Variant::Hopfield, Engine::Smp) => Algorithm::HopfieldSmp,
            (Variant::Hopfield, Engine::Amp) => Algorithm::HopfieldAmp,
            (Variant::Hopfield, Engine::Naive) => bail!("the naive engine exists for the RBM only"),
        })
    }
}

fn merge(base: &mut Map<String, Value>, layer: Map<String, Value>) {
    for (k, v) in layer {
        base.insert(k, v);
    }
}

fn object(value: Value, origin: &str) -> Result<Map<String, Value>> {
    match value {
        Value::Object(map) => Ok(map),
        _ => bail!("{origin}: expected a JSON object"),
    }
}

pub fn preset(name: &str) -> Result<Map<String, Value>> {
    let text = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .with_context(|| {
            let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            format!("unknown preset {name:?}; available: {}", names.join(", "))
        })?;
    object(
        serde_json::from_str(text).with_context(|| format!("preset {name}"))?,
        name,
    )
}

/// Layers `preset`, the file at `config_path` and `overrides` on top of the defaults.
pub fn resolve(
    preset_name: Option<&str>,
    config_path: Option<&Path>,
    overrides: Map<String, Value>,
) -> Result<ExperimentConfig> {
    let mut merged = Map::new();
    if let Some(name) = preset_name {
        merge(&mut merged, preset(name)?);
    }
    if let Some(path) = config_path {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        merge(&mut merged, object(value, &path.display().to_string())?);
    }
    merge(&mut merged, overrides);
    let config: ExperimentConfig =
        serde_json::from_value(Value::Object(merged)).context("invalid experiment configuration")?;
    config.validate()?;
    Ok(config)
}

/// Parses `key=value`; the value is read as JSON and falls back to a string.
pub fn parse_assignment(text: &str) -> Result<(String, Value)> {
    let (key, raw) = text
        .split_once('=')
        .with_context(|| format!("expected key=value, got {text:?}"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.trim().to_string(), value))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_resolves() {
        for (name, _) in PRESETS {
            resolve(Some(name), None, Map::new()).unwrap_or_else(|e| panic!("{name}: {e:#}"));
        }
    }

    #[test]
    fn flags_override_presets() {
        let mut o = Map::new();
        o.insert("n".into(), Value::from(50));
        let c = resolve(Some("fig3"), None, o).unwrap();
        assert_eq!(c.n, 50);
        assert_eq!(c.n_instances, 30);
    }

    #[test]
    fn bad_values_are_rejected() {
        for (k, v) in [
            ("beta", Value::from(-1.0)),
            ("n_instances", Value::from(0)),
            ("colour", Value::from(1)),
        ] {
            let mut o = Map::new();
            o.insert(k.into(), v);
            assert!(resolve(None, None, o).is_err(), "{k}");
        }
    }

    #[test]
    fn assignments_parse_as_json() {
        assert_eq!(
            parse_assignment("alphas=[0.5,1]").unwrap().1,
            serde_json::json!([0.5, 1])
        );
        assert_eq!(parse_assignment("model=hopfield").unwrap().1, Value::from("hopfield"));
        assert!(parse_assignment("nokey").is_err());
    }

    #[test]
    fn mismatch_temperatures() {
        let c = ExperimentConfig {
            beta_star: Some(0.8),
            factors: vec![0.5, 1.0],
            ..ExperimentConfig::default()
        };
        assert_eq!(c.temperatures(100), vec![(0.8, 0.4), (0.8, 0.8)]);
        let c = ExperimentConfig {
            beta_over_sqrt_n: Some(0.1),
            ..ExperimentConfig::default()
        };
        assert_eq!(c.temperatures(400), vec![(2.0, 2.0)]);
    }
}
