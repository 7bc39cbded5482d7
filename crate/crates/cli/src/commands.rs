use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use binrbm::ensemble::{run_ensemble, run_one, EnsembleConfig, Instance, Stat};
use binrbm::hyperparam::{learn_beta, BetaTrajectory, EmOptions, InnerPolicy};
use binrbm::io::{import_mnist_idx, load_dataset_csv, save_dataset_csv, write_feature_map};
use binrbm::meanfield::{de_hopfield_solve, de_rbm_solve, scan_phase_diagram, SolverOptions};
use binrbm::oracle::{exact_posterior, posterior_table};
use binrbm::rbm_mp::smp_run;
use binrbm::{mpm_estimate, Dataset, FeatureVector, InitKind, ModelParams, Variant};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Theory, SCHEMA_VERSION};
use crate::output::{Cell, Table};
use crate::row;

/// What `generate` records next to each dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub schema_version: u32,
    pub n: usize,
    pub m: usize,
    pub beta: f64,
    /// Seed of this instance, derived from `base_seed` and `instance`.
    pub seed: u64,
    pub base_seed: u64,
    pub instance: usize,
    pub xi: Vec<i8>,
}

pub fn sidecar_path(data: &Path) -> PathBuf {
    data.with_extension("json")
}

fn model_name(v: Variant) -> &'static str {
    match v {
        Variant::Rbm => "rbm",
        Variant::Hopfield => "hopfield",
    }
}

fn params(model: Variant, beta: f64) -> ModelParams {
    match model {
        Variant::Rbm => ModelParams::rbm(beta),
        Variant::Hopfield => ModelParams::hopfield(beta),
    }
}

pub fn write_manifest(out: &Path, command: &str, config: &ExperimentConfig) -> Result<()> {
    let manifest = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config": config,
    });
    let path = out.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

pub fn generate(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for k in 0..cfg.n_instances {
        let inst = Instance::generate(cfg.n, cfg.m, cfg.beta, cfg.seed, k)?;
        let data = out.join(format!("dataset_{k}.csv"));
        save_dataset_csv(&inst.dataset, &data)?;
        let sidecar = Sidecar {
            schema_version: SCHEMA_VERSION,
            n: cfg.n,
            m: cfg.m,
            beta: cfg.beta,
            seed: inst.seed,
            base_seed: cfg.seed,
            instance: k,
            xi: inst.xi.as_slice().to_vec(),
        };
        let side = sidecar_path(&data);
        std::fs::write(&side, serde_json::to_string_pretty(&sidecar)? + "\n")
            .with_context(|| format!("writing {}", side.display()))?;
        written.push(data);
    }
    Ok(written)
}

const SUMMARY_HEADER: &[&str] = &[
    "model",
    "algorithm",
    "n",
    "beta_data",
    "beta",
    "alpha",
    "m",
    "runs",
    "converged",
    "failed",
    "q_abs",
    "q_abs_se",
    "Q",
    "Q_se",
    "s",
    "s_se",
    "f",
    "f_se",
    "epsilon",
    "epsilon_se",
    "iterations",
];

const INSTANCE_HEADER: &[&str] = &[
    "model",
    "algorithm",
    "n",
    "beta_data",
    "beta",
    "alpha",
    "m",
    "instance",
    "seed",
    "q_abs",
    "q_mag",
    "Q",
    "s",
    "f",
    "epsilon",
    "iterations",
    "converged",
    "error",
];

fn stat_cells(s: &Stat) -> [Cell; 2] {
    [Cell::F(s.mean), Cell::F(s.stderr)]
}

pub fn infer(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let mut summary = Table::create(out.join("summary.csv"), SUMMARY_HEADER)?;
    let mut instances = Table::create(out.join("instances.csv"), INSTANCE_HEADER)?;
    if let Some(path) = &cfg.data {
        infer_file(cfg, path, &mut summary, &mut instances)?;
    } else {
        for n in cfg.sizes() {
            for (beta_data, beta) in cfg.temperatures(n) {
                for &engine in &cfg.algorithms {
                    let algorithm = cfg.algorithm(engine)?;
                    let ens = EnsembleConfig {
                        n,
                        alphas: cfg.alpha_grid(n),
                        beta_data,
                        beta,
                        instances: cfg.n_instances,
                        seed: cfg.seed,
                        algorithm,
                        init: cfg.init_policy(),
                        opts: cfg.mp_options(),
                    };
                    log::info!("{} N={n} beta={beta} (data {beta_data})", algorithm.name());
                    let result = run_ensemble(&ens)?;
                    let key = || row![model_name(cfg.model), algorithm.name(), n, beta_data, beta];
                    for p in &result.points {
                        let mut r = key();
                        r.extend(row![p.alpha, p.m, p.runs, p.converged, p.failed]);
                        for s in [&p.q_abs, &p.self_overlap, &p.entropy, &p.free_energy, &p.energy] {
                            r.extend(stat_cells(s));
                        }
                        r.push(Cell::F(p.iterations.mean));
                        summary.row(r)?;
                    }
                    for row in &result.rows {
                        let mut r = key();
                        r.extend(row![row.alpha, row.m, row.instance, row.seed]);
                        r.extend(record_cells(row.record.as_ref(), row.error.as_deref()));
                        instances.row(r)?;
                    }
                }
            }
        }
    }
    summary.finish()?;
    instances.finish()?;
    Ok(())
}

fn record_cells(record: Option<&binrbm::RunRecord>, error: Option<&str>) -> Vec<Cell> {
    match record {
        Some(r) => row![
            r.q_abs,
            r.q_mag,
            r.self_overlap,
            r.s,
            r.f,
            r.energy,
            r.iterations,
            r.converged,
            ""
        ],
        None => row![None, None, None, None, None, None, "", "", error.unwrap_or("")],
    }
}

fn infer_file(cfg: &ExperimentConfig, path: &Path, summary: &mut Table, instances: &mut Table) -> Result<()> {
    let dataset = load_dataset_csv(path)?;
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).with_context(|| {
        format!(
            "reading {} (the sidecar carries the feature used for scoring)",
            side.display()
        )
    })?;
    let sidecar: Sidecar = serde_json::from_str(&text).with_context(|| format!("parsing {}", side.display()))?;
    let xi = FeatureVector::new(sidecar.xi.clone())?;
    if xi.len() != dataset.n_visible() {
        bail!(
            "{}: feature has {} components, dataset {}",
            side.display(),
            xi.len(),
            dataset.n_visible()
        );
    }
    let n = dataset.n_visible();
    for (_, beta) in cfg.temperatures(n) {
        for &engine in &cfg.algorithms {
            let algorithm = cfg.algorithm(engine)?;
            let init = cfg.init_policy().resolve(&xi);
            let outcome = run_one(algorithm, &dataset, &xi, beta, &init, sidecar.seed, &cfg.mp_options());
            if let Err(e) = &outcome {
                log::warn!("{}: {e}", path.display());
            }
            let key = || {
                row![
                    model_name(cfg.model),
                    algorithm.name(),
                    n,
                    sidecar.beta,
                    beta,
                    dataset.alpha()
                ]
            };
            let record = outcome.as_ref().ok();
            let err = outcome.as_ref().err().map(|e| e.to_string());
            let mut r = key();
            r.extend(row![dataset.n_samples(), sidecar.instance, sidecar.seed]);
            r.extend(record_cells(record, err.as_deref()));
            instances.row(r)?;

            let conv = record.filter(|r| r.converged);
            let one = |x: Option<f64>| Stat::of(x);
            let mut r = key();
            r.extend(row![
                dataset.n_samples(),
                1usize,
                usize::from(conv.is_some()),
                usize::from(record.is_none())
            ]);
            for s in [
                one(record.and_then(|r| r.q_abs)),
                one(record.map(|r| r.self_overlap)),
                one(conv.and_then(|r| r.s)),
                one(conv.and_then(|r| r.f)),
                one(conv.and_then(|r| r.energy)),
            ] {
                r.extend(stat_cells(&s));
            }
            r.push(record.map(|r| r.iterations as f64).into());
            summary.row(r)?;
        }
    }
    Ok(())
}

pub fn meanfield(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let grid = cfg.theory_grid();
    let opts = SolverOptions::default();
    match cfg.theory {
        Theory::Replica => {
            let header = [
                "model",
                "beta",
                "alpha",
                "branch",
                "q",
                "r",
                "q_hat",
                "r_hat",
                "s",
                "f",
                "converged",
                "status",
            ];
            let mut t = Table::create(out.join("phase.csv"), &header)?;
            for beta in cfg.betas() {
                for p in scan_phase_diagram(cfg.model, beta, &grid, cfg.branch, &opts)? {
                    let branch = serde_json::to_value(p.branch)?.as_str().unwrap_or_default().to_string();
                    t.row(row![
                        model_name(cfg.model),
                        beta,
                        p.alpha,
                        branch,
                        p.q,
                        p.r,
                        p.q_hat,
                        p.r_hat,
                        p.s,
                        p.f,
                        p.converged,
                        p.status
                    ])?;
                }
            }
            t.finish()?;
        }
        Theory::De => {
            let header = ["model", "beta", "alpha", "Q", "Q_hat", "converged", "status"];
            let mut t = Table::create(out.join("de.csv"), &header)?;
            for beta in cfg.betas() {
                let mut start = 0.5;
                for &alpha in &grid {
                    let outcome = match cfg.model {
                        Variant::Rbm => de_rbm_solve(alpha, beta, start, &opts)
                            .map(|s| (s.params.q, Some(s.params.q_hat), s.converged)),
                        Variant::Hopfield => {
                            de_hopfield_solve(alpha, beta, start, &opts).map(|s| (s.params, None, s.converged))
                        }
                    };
                    match outcome {
                        Ok((q, q_hat, converged)) => {
                            start = q.clamp(1e-3, 1.0);
                            t.row(row![model_name(cfg.model), beta, alpha, q, q_hat, converged, "ok"])?;
                        }
                        Err(e) => {
                            start = 0.5;
                            t.row(row![
                                model_name(cfg.model),
                                beta,
                                alpha,
                                None,
                                None,
                                false,
                                e.to_string()
                            ])?;
                        }
                    }
                }
            }
            t.finish()?;
        }
    }
    Ok(())
}

fn em_options(cfg: &ExperimentConfig) -> EmOptions {
    EmOptions {
        eta: cfg.eta,
        outer_tol: cfg.outer_tol,
        outer_max: cfg.outer_max,
        inner: InnerPolicy::ToTolerance {
            tol: cfg.tol,
            max_iter: cfg.max_iter,
        },
        damping: cfg.damping,
        init: match cfg.init {
            crate::config::Init::Zero => InitKind::Zero,
            _ => InitKind::RandomSmall(cfg.init_scale),
        },
        n_starts: 1,
    }
}

const TRAJECTORY_HEADER: &[&str] = &[
    "m",
    "instance",
    "beta0",
    "step",
    "beta",
    "energy",
    "q_abs",
    "inner_converged",
];
const EM_SUMMARY_HEADER: &[&str] = &[
    "m",
    "instance",
    "beta0",
    "beta_hat",
    "deviation",
    "steps",
    "converged",
    "log_posterior",
    "error",
];

struct EmJob {
    m: usize,
    instance: usize,
    beta0: f64,
}

fn write_trajectory(t: &mut Table, job: &EmJob, traj: &BetaTrajectory) -> Result<()> {
    t.row(row![
        job.m,
        job.instance,
        job.beta0,
        0usize,
        traj.betas[0],
        None,
        None,
        ""
    ])?;
    for (step, beta) in traj.betas.iter().enumerate().skip(1) {
        t.row(row![
            job.m,
            job.instance,
            job.beta0,
            step,
            *beta,
            traj.energies[step - 1],
            traj.q_abs[step - 1],
            traj.inner_converged[step - 1]
        ])?;
    }
    Ok(())
}

fn run_em_jobs(
    jobs: &[EmJob],
    truth: Option<f64>,
    out: &Path,
    run: impl Fn(&EmJob) -> binrbm::Result<BetaTrajectory> + Sync,
) -> Result<()> {
    let results: Vec<_> = jobs.par_iter().map(&run).collect();
    let mut traj_table = Table::create(out.join("trajectories.csv"), TRAJECTORY_HEADER)?;
    let mut summary = Table::create(out.join("em_summary.csv"), EM_SUMMARY_HEADER)?;
    for (job, result) in jobs.iter().zip(results) {
        match result {
            Ok(traj) => {
                write_trajectory(&mut traj_table, job, &traj)?;
                let b = traj.beta();
                summary.row(row![
                    job.m,
                    job.instance,
                    job.beta0,
                    b,
                    truth.map(|t| (b - t).abs()),
                    traj.betas.len() - 1,
                    traj.converged,
                    traj.log_posterior,
                    ""
                ])?;
            }
            Err(e) => {
                log::warn!(
                    "EM job (M={}, instance {}, beta0 {}): {e}",
                    job.m,
                    job.instance,
                    job.beta0
                );
                summary.row(row![
                    job.m,
                    job.instance,
                    job.beta0,
                    None,
                    None,
                    "",
                    "",
                    None,
                    e.to_string()
                ])?;
            }
        }
    }
    traj_table.finish()?;
    summary.finish()?;
    Ok(())
}

pub fn em(cfg: &ExperimentConfig, out: &Path, mnist_dir: Option<&Path>) -> Result<()> {
    let opts = em_options(cfg);
    match &cfg.mnist {
        None => {
            let sizes: Vec<usize> = if cfg.samples.is_empty() {
                cfg.alphas
                    .iter()
                    .map(|&a| binrbm::ensemble::samples_for(a, cfg.n))
                    .collect()
            } else {
                cfg.samples.clone()
            };
            let mut jobs = Vec::new();
            for &m in &sizes {
                for instance in 0..cfg.n_instances {
                    for &beta0 in &cfg.beta0s {
                        jobs.push(EmJob { m, instance, beta0 });
                    }
                }
            }
            run_em_jobs(&jobs, Some(cfg.beta), out, |job| {
                let inst = Instance::generate(cfg.n, job.m, cfg.beta, cfg.seed, job.instance)?;
                learn_beta(&inst.dataset, job.beta0, &opts, inst.seed, Some(&inst.xi))
            })
        }
        Some(mnist) => {
            let dir = mnist_dir.context("MNIST mode needs --mnist-dir or BINRBM_MNIST_DIR")?;
            let digits: BTreeSet<u8> = mnist.digits.iter().copied().collect();
            let data = import_mnist_idx(
                dir.join(&mnist.images),
                dir.join(&mnist.labels),
                &digits,
                mnist.limit,
                mnist.threshold,
            )?;
            let jobs: Vec<EmJob> = cfg
                .beta0s
                .iter()
                .map(|&beta0| EmJob {
                    m: data.n_samples(),
                    instance: 0,
                    beta0,
                })
                .collect();
            run_em_jobs(&jobs, None, out, |job| {
                learn_beta(&data, job.beta0, &opts, cfg.seed, None)
            })?;
            feature_maps(cfg, &data, out)
        }
    }
}

fn feature_maps(cfg: &ExperimentConfig, data: &Dataset, out: &Path) -> Result<()> {
    let n = data.n_visible();
    let side = (n as f64).sqrt().round() as usize;
    let width = if side * side == n { side } else { n };
    let subset = data.truncated(cfg.feature_map_samples.min(data.n_samples()));
    for &beta in &cfg.feature_map_betas {
        let init = InitKind::RandomSmall(cfg.init_scale);
        let (marginals, _, report) = smp_run(&subset, &ModelParams::rbm(beta), &init, cfg.seed, &cfg.mp_options())?;
        if !report.converged {
            log::warn!(
                "feature map at beta {beta} did not converge ({} sweeps)",
                report.iterations
            );
        }
        write_feature_map(
            &mpm_estimate(&marginals),
            width,
            out.join(format!("feature_beta{beta}.csv")),
        )?;
    }
    Ok(())
}

pub fn oracle_check(cfg: &ExperimentConfig, out: &Path, dump: bool) -> Result<()> {
    let header = [
        "instance",
        "seed",
        "Q",
        "mean_abs_dm",
        "s_bethe",
        "s_exact",
        "s_shannon",
        "f_bethe",
        "f_exact",
        "epsilon_bethe",
        "epsilon_exact",
        "resolved",
        "converged",
    ];
    let mut t = Table::create(out.join("oracle.csv"), &header)?;
    let engine = cfg.algorithm(crate::config::Engine::Smp)?;
    let p = params(cfg.model, cfg.beta);
    let conjugate = match cfg.model {
        Variant::Rbm => p.beta,
        Variant::Hopfield => p.beta_tilde(),
    };
    for k in 0..cfg.n_instances {
        let inst = Instance::generate(cfg.n, cfg.m, cfg.beta, cfg.seed, k)?;
        let init = cfg.init_policy().resolve(&inst.xi);
        let rec = run_one(
            engine,
            &inst.dataset,
            &inst.xi,
            cfg.beta,
            &init,
            inst.seed,
            &cfg.mp_options(),
        )?;
        let reference = (rec.self_overlap > 1e-6).then(|| rec.marginals.as_slice());
        let exact = exact_posterior(&inst.dataset, &p, reference)?;
        let target = exact.resolved.as_ref().unwrap_or(&exact.marginals);
        let dm = Stat::of(
            rec.marginals
                .as_slice()
                .iter()
                .zip(target.as_slice())
                .map(|(a, b)| (a - b).abs()),
        )
        .mean;
        t.row(row![
            k,
            inst.seed,
            rec.self_overlap,
            dm,
            rec.s,
            exact.entropy,
            exact.shannon_entropy,
            rec.f,
            -exact.free_entropy(cfg.n) / conjugate,
            rec.energy,
            exact.energy,
            exact.resolved.is_some(),
            rec.converged
        ])?;
        if dump && k == 0 {
            let mut d = Table::create(out.join("posterior.csv"), &["state", "probability"])?;
            for (state, prob) in posterior_table(&inst.dataset, &p)? {
                let s: String = state.iter().map(|&x| if x > 0 { '+' } else { '-' }).collect();
                d.row(row![s, prob])?;
            }
            d.finish()?;
        }
    }
    t.finish()?;
    Ok(())
}
