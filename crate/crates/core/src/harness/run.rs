use std::time::Instant;

use faer::Mat;
use rayon::prelude::*;

use super::config::{Estimator, ExperimentConfig};
use crate::ensembles::{observe, sample_signal, stream_rng, ChannelParams};
use crate::mmse::empirical_mse;
use crate::rie::{identity_shrink, oracle_singular_values, reconstruct, shrink_spectrum, DenoiseOptions};
use crate::spectral::svd_spectrum;
use crate::{Error, Result};

/// One estimator applied to one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRow {
    pub estimator: Estimator,
    pub lambda: f64,
    pub trial: usize,
    pub mse: f64,
    pub normalized_mse: f64,
    pub seed: u64,
    /// Stream of `seed` the trial drew from.
    pub stream: u64,
    pub runtime_ms: f64,
    /// Singular values that fell back to pass-through at the density floor.
    pub edge_count: usize,
    /// Set when the trial failed; such rows carry NaN errors and are left
    /// out of the aggregates.
    pub error: Option<String>,
}

/// Per (estimator, lambda) summary over successful trials.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub estimator: Estimator,
    pub lambda: f64,
    pub mean_mse: f64,
    /// Sample standard deviation over `sqrt(trials)`; zero for one trial.
    pub stderr: f64,
    pub mean_normalized_mse: f64,
    pub stderr_normalized: f64,
    pub n: usize,
    pub m: usize,
    pub trials: usize,
    pub failed: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    /// Ordered by lambda, then trial, then estimator as configured.
    pub rows: Vec<TrialRow>,
    /// Ordered by estimator as configured, then lambda.
    pub aggregates: Vec<Aggregate>,
}

impl ExperimentResult {
    pub fn aggregate(&self, estimator: Estimator, lambda: f64) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.estimator == estimator && a.lambda == lambda)
    }

    pub fn failed_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }
}

/// Stream used for trial `trial` at the `lambda_index`-th SNR.
pub(crate) fn trial_stream(lambda_index: usize, trial: usize) -> u64 {
    ((lambda_index as u64) << 32) | trial as u64
}

/// Stream used for the shared signal in fixed-signal mode.
pub(crate) const FIXED_SIGNAL_STREAM: u64 = u64::MAX;

pub(crate) fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let k = values.len();
    if k == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    if k == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1) as f64;
    (mean, (var / k as f64).sqrt())
}

/// (estimator, mse, edge count, runtime in ms) per configured estimator.
type TrialOutcome = Vec<(Estimator, f64, usize, f64)>;

struct Task {
    lambda_index: usize,
    lambda: f64,
    trial: usize,
}

fn run_trial(cfg: &ExperimentConfig, task: &Task, fixed: Option<&Mat<f64>>) -> Result<TrialOutcome> {
    let params = ChannelParams::new(cfg.n, cfg.m, task.lambda)?;
    let mut rng = stream_rng(cfg.master_seed, trial_stream(task.lambda_index, task.trial));
    let owned;
    let s = match fixed {
        Some(s) => s,
        None => {
            owned = sample_signal(&cfg.prior.build(), &params, &mut rng)?;
            &owned
        }
    };
    let noise = cfg.noise.build(params.alpha);
    let obs = observe(s, &noise, &params, &mut rng)?;
    let spectrum = svd_spectrum(&obs.y, true)?;
    let options = DenoiseOptions {
        eta: cfg.eta_override,
        leave_one_out: false,
        clamp: cfg.clamp,
    };
    let mut out = Vec::with_capacity(cfg.estimators.len());
    for &est in &cfg.estimators {
        let start = Instant::now();
        let shrinkage = match est {
            Estimator::Rie => {
                let shrinker = cfg
                    .noise
                    .shrinker(params.alpha)
                    .ok_or_else(|| Error::Config("noise has no R-transform".into()))?;
                shrink_spectrum(&spectrum, task.lambda, &shrinker, &options)?
            }
            Estimator::Oracle => oracle_singular_values(s, &spectrum)?,
            Estimator::Identity => identity_shrink(&spectrum, task.lambda)?,
        };
        let estimate = reconstruct(&spectrum, &shrinkage)?;
        let mse = empirical_mse(s, &estimate)?;
        out.push((est, mse, shrinkage.edge_count(), start.elapsed().as_secs_f64() * 1e3));
    }
    Ok(out)
}

/// Runs every (lambda, trial) pair of `cfg` and aggregates per estimator.
///
/// Trials run in parallel; trial `t` at the `k`-th SNR draws from a stream
/// determined by `(k, t)` only, so results do not depend on scheduling.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    super::with_thread_pool(|| run_validated(cfg))
}

fn run_validated(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let alpha = cfg.alpha();
    let fixed = if cfg.fixed_signal {
        let params = ChannelParams::new(cfg.n, cfg.m, 1.0)?;
        let mut rng = stream_rng(cfg.master_seed, FIXED_SIGNAL_STREAM);
        Some(sample_signal(&cfg.prior.build(), &params, &mut rng)?)
    } else {
        None
    };
    let tasks: Vec<Task> = cfg
        .lambda_grid
        .iter()
        .enumerate()
        .flat_map(|(k, &lambda)| {
            (0..cfg.trials).map(move |trial| Task {
                lambda_index: k,
                lambda,
                trial,
            })
        })
        .collect();

    let outcomes: Vec<Result<TrialOutcome>> = tasks.par_iter().map(|t| run_trial(cfg, t, fixed.as_ref())).collect();

    let norm = cfg.prior.second_moment(alpha);
    let mut rows = Vec::with_capacity(tasks.len() * cfg.estimators.len());
    for (task, outcome) in tasks.iter().zip(outcomes) {
        let stream = trial_stream(task.lambda_index, task.trial);
        match outcome {
            Ok(values) => rows.extend(values.into_iter().map(|(estimator, mse, edges, ms)| TrialRow {
                estimator,
                lambda: task.lambda,
                trial: task.trial,
                mse,
                normalized_mse: mse / norm,
                seed: cfg.master_seed,
                stream,
                runtime_ms: ms,
                edge_count: edges,
                error: None,
            })),
            Err(e) if e.is_numerical() => {
                log::warn!("trial {} at lambda {} failed: {e}", task.trial, task.lambda);
                rows.extend(cfg.estimators.iter().map(|&estimator| TrialRow {
                    estimator,
                    lambda: task.lambda,
                    trial: task.trial,
                    mse: f64::NAN,
                    normalized_mse: f64::NAN,
                    seed: cfg.master_seed,
                    stream,
                    runtime_ms: 0.0,
                    edge_count: 0,
                    error: Some(e.to_string()),
                }));
            }
            Err(e) => return Err(e),
        }
    }

    let aggregates = aggregate_rows(cfg, &rows);
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        log::warn!("{failed} rows failed and were excluded from the aggregates");
    }
    Ok(ExperimentResult {
        config: cfg.clone(),
        rows,
        aggregates,
    })
}

pub(crate) fn aggregate_rows(cfg: &ExperimentConfig, rows: &[TrialRow]) -> Vec<Aggregate> {
    let mut out = Vec::new();
    for &est in &cfg.estimators {
        for &lambda in &cfg.lambda_grid {
            let selected: Vec<&TrialRow> = rows
                .iter()
                .filter(|r| r.estimator == est && r.lambda == lambda)
                .collect();
            let ok: Vec<&TrialRow> = selected.iter().copied().filter(|r| r.error.is_none()).collect();
            let mses: Vec<f64> = ok.iter().map(|r| r.mse).collect();
            let normalized: Vec<f64> = ok.iter().map(|r| r.normalized_mse).collect();
            let (mean_mse, stderr) = mean_and_stderr(&mses);
            let (mean_normalized_mse, stderr_normalized) = mean_and_stderr(&normalized);
            out.push(Aggregate {
                estimator: est,
                lambda,
                mean_mse,
                stderr,
                mean_normalized_mse,
                stderr_normalized,
                n: cfg.n,
                m: cfg.m,
                trials: ok.len(),
                failed: selected.len() - ok.len(),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{NoiseSpec, PriorSpec};

    fn small(prior: PriorSpec, noise: NoiseSpec) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(prior, noise, 60, 80);
        cfg.lambda_grid = vec![0.5, 2.0];
        cfg.trials = 3;
        cfg.master_seed = 11;
        cfg
    }

    #[test]
    fn zero_noise_identity_is_exact() {
        let mut cfg = ExperimentConfig::new(PriorSpec::Gaussian, NoiseSpec::Zero, 20, 30);
        cfg.lambda_grid = vec![1.0];
        cfg.trials = 1;
        cfg.estimators = vec![Estimator::Identity];
        let res = run_experiment(&cfg).unwrap();
        assert_eq!(res.rows.len(), 1);
        assert!(res.rows[0].mse < 1e-24);
    }

    #[test]
    fn rows_are_ordered_and_deterministic() {
        let cfg = small(PriorSpec::Gaussian, NoiseSpec::Gaussian);
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.rows.len(), 2 * 3 * 3);
        let key: Vec<(f64, usize)> = a.rows.iter().map(|r| (r.lambda, r.trial)).collect();
        let mut sorted = key.clone();
        sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(key, sorted);
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert_eq!(x.mse.to_bits(), y.mse.to_bits());
        }
    }

    #[test]
    fn aggregates_match_rows() {
        let cfg = small(PriorSpec::Sparse { p: 0.3 }, NoiseSpec::Uniform02);
        let mut cfg = cfg;
        cfg.m = 60;
        let res = run_experiment(&cfg).unwrap();
        assert_eq!(res.aggregates.len(), 3 * 2);
        for agg in &res.aggregates {
            let v: Vec<f64> = res
                .rows
                .iter()
                .filter(|r| r.estimator == agg.estimator && r.lambda == agg.lambda)
                .map(|r| r.mse)
                .collect();
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt();
            assert!((agg.mean_mse - mean).abs() < 1e-12);
            assert!((agg.stderr - sd / (v.len() as f64).sqrt()).abs() < 1e-12);
            assert!((agg.mean_normalized_mse - mean / 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn fixed_signal_is_shared() {
        let mut cfg = small(PriorSpec::Gaussian, NoiseSpec::Zero);
        cfg.fixed_signal = true;
        cfg.estimators = vec![Estimator::Identity];
        let res = run_experiment(&cfg).unwrap();
        assert!(res.rows.iter().all(|r| r.mse < 1e-24));
    }

    #[test]
    fn stderr_conventions() {
        assert_eq!(mean_and_stderr(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_and_stderr(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
        assert!(mean_and_stderr(&[]).0.is_nan());
    }

    #[test]
    fn streams_are_distinct() {
        assert_ne!(trial_stream(0, 1), trial_stream(1, 0));
        assert_ne!(trial_stream(2, 7), FIXED_SIGNAL_STREAM);
    }
}
