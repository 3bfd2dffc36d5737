use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;

use super::config::{ExperimentConfig, PriorSpec};
use super::run::{mean_and_stderr, trial_stream, FIXED_SIGNAL_STREAM};
use crate::ensembles::{observe, sample_signal, stream_rng, ChannelParams, NoiseModel};
use crate::mmse::{empirical_mse, mmse_gaussian, mutual_information_curve, MmseReport};
use crate::rie::{overlap_empirical, reconstruct, shrink_spectrum, DenoiseOptions, OverlapTheory, Shrinker};
use crate::spectral::{estimate_half_density, svd_spectrum, DEFAULT_GRID_POINTS};
use crate::{Error, Result};

/// One observation rank against one signal rank.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapRow {
    pub lambda: f64,
    pub sigma_index: usize,
    /// `sqrt(lambda)` times the signal singular value at `sigma_index`.
    pub sigma: f64,
    pub rank: usize,
    /// Trial-averaged observation singular value at `rank`.
    pub gamma: f64,
    pub empirical: f64,
    /// NaN where the density is below the edge floor.
    pub theory: f64,
    /// Averages over the cell containing this row; `None` for ranks in the
    /// dropped trailing partial bin.
    pub empirical_binned: Option<f64>,
    pub theory_binned: Option<f64>,
}

/// A binned cell used for the agreement metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapBin {
    pub lambda: f64,
    pub sigma_index: usize,
    pub gamma: f64,
    pub empirical: f64,
    pub theory: f64,
}

#[derive(Debug, Clone)]
pub struct OverlapReport {
    pub rows: Vec<OverlapRow>,
    pub bins: Vec<OverlapBin>,
    /// `(lambda, gamma_min, gamma_max)` of the trial-averaged spectrum.
    pub support: Vec<(f64, f64, f64)>,
    pub trials: usize,
    pub failed: usize,
}

pub const OVERLAP_HEADER: &str = "lambda,sigma_index,sigma,rank,gamma,empirical,theory,empirical_binned,theory_binned";

impl OverlapReport {
    /// Largest `|empirical - theory| / |theory|` over bins whose mean `gamma`
    /// lies strictly inside the middle `fraction` of `[gamma_min, gamma_max]`.
    pub fn max_relative_error(&self, fraction: f64) -> f64 {
        let margin = (1.0 - fraction) / 2.0;
        self.bins
            .iter()
            .filter(|b| {
                self.support.iter().any(|&(l, lo, hi)| {
                    let r = hi - lo;
                    l == b.lambda && b.gamma > lo + margin * r && b.gamma < hi - margin * r
                })
            })
            .map(|b| ((b.empirical - b.theory) / b.theory).abs())
            .fold(0.0, |acc: f64, e| if e.is_nan() { f64::NAN } else { acc.max(e) })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let mut w = csv::Writer::from_writer(out);
        w.write_record(OVERLAP_HEADER.split(','))?;
        for r in &self.rows {
            w.write_record([
                r.lambda.to_string(),
                r.sigma_index.to_string(),
                r.sigma.to_string(),
                r.rank.to_string(),
                r.gamma.to_string(),
                r.empirical.to_string(),
                r.theory.to_string(),
                opt(r.empirical_binned),
                opt(r.theory_binned),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Signal ranks `N/10, N/4, N/2, 3N/4`.
pub fn default_sigma_indices(n: usize) -> Vec<usize> {
    let mut v = vec![n / 10, n / 4, n / 2, 3 * n / 4];
    v.dedup();
    v
}

/// Empirical and predicted overlaps side by side for a fixed signal.
///
/// The signal is drawn once from the fixed-signal stream; for every SNR the
/// noise of trial `k` comes from stream `k`. The prediction uses the
/// trial-averaged observation spectrum and is averaged over the same
/// `(gamma_bin x sigma_window)` cells as the empirical values.
pub fn run_overlap_experiment(cfg: &ExperimentConfig, sigma_indices: &[usize]) -> Result<OverlapReport> {
    cfg.validate()?;
    if !cfg.fixed_signal {
        return Err(Error::Config("the overlap experiment needs fixed_signal = true".into()));
    }
    if sigma_indices.is_empty() || sigma_indices.iter().any(|&j| j >= cfg.n) {
        return Err(Error::Config(format!(
            "sigma indices must be nonempty and < n = {}",
            cfg.n
        )));
    }
    super::with_thread_pool(|| overlap_validated(cfg, sigma_indices))
}

fn overlap_validated(cfg: &ExperimentConfig, sigma_indices: &[usize]) -> Result<OverlapReport> {
    let alpha = cfg.alpha();
    let base = ChannelParams::new(cfg.n, cfg.m, 1.0)?;
    let s = sample_signal(
        &cfg.prior.build(),
        &base,
        &mut stream_rng(cfg.master_seed, FIXED_SIGNAL_STREAM),
    )?;
    let noise = cfg.noise.build(alpha);
    let rt = noise
        .rtransform
        .clone()
        .ok_or_else(|| Error::Config(format!("no closed-form R-transform for {:?} noise", cfg.noise)))?;
    let n = cfg.n;

    let mut report = OverlapReport {
        rows: Vec::new(),
        bins: Vec::new(),
        support: Vec::new(),
        trials: 0,
        failed: 0,
    };
    for &lambda in &cfg.lambda_grid {
        let params = base.with_snr(lambda)?;
        let study = overlap_empirical(&s, &noise, &params, cfg.trials, cfg.master_seed)?;
        let theory = OverlapTheory::new(study.gamma_mean.clone(), alpha, Arc::clone(&rt), cfg.eta_override)?;
        report.trials += study.trials;
        report.failed += study.failed;
        let lo = study.gamma_mean.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = study.gamma_mean.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        report.support.push((lambda, lo, hi));

        let pointwise = study.theory_matrix(&theory, sigma_indices);
        for (col, &j) in sigma_indices.iter().enumerate() {
            let emp = study.binned_curve(j, cfg.sigma_window, cfg.gamma_bin);
            let th = study.binned_theory(&theory, j, cfg.sigma_window, cfg.gamma_bin);
            for (b, &g) in emp.gamma_grid.iter().enumerate() {
                report.bins.push(OverlapBin {
                    lambda,
                    sigma_index: j,
                    gamma: g,
                    empirical: emp.values[b],
                    theory: th.values[b],
                });
            }
            for i in 0..n {
                let b = i / cfg.gamma_bin;
                report.rows.push(OverlapRow {
                    lambda,
                    sigma_index: j,
                    sigma: study.sigma[j],
                    rank: i,
                    gamma: study.gamma_mean[i],
                    empirical: study.overlap[(i, j)],
                    theory: pointwise[col][i],
                    empirical_binned: emp.values.get(b).copied(),
                    theory_binned: th.values.get(b).copied(),
                });
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmseCurveConfig {
    pub prior: PriorSpec,
    pub n: usize,
    pub m: usize,
    pub lambda_max: f64,
    /// Grid points on `[0, lambda_max]`, endpoints included.
    pub points: usize,
    pub master_seed: u64,
    pub eta: Option<f64>,
    pub trials: usize,
}

impl MmseCurveConfig {
    pub fn new(prior: PriorSpec, n: usize, m: usize, lambda_max: f64, points: usize) -> Self {
        Self {
            prior,
            n,
            m,
            lambda_max,
            points,
            master_seed: 0,
            eta: None,
            trials: 1,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n > self.m {
            return Err(Error::Config(format!(
                "need 1 <= n <= m, got n = {}, m = {}",
                self.n, self.m
            )));
        }
        if !(self.lambda_max.is_finite() && self.lambda_max > 0.0) {
            return Err(Error::Config(format!(
                "lambda_max must be > 0, got {}",
                self.lambda_max
            )));
        }
        if self.points < 2 {
            return Err(Error::Config("points must be >= 2".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MmseCurve {
    /// One report per grid point; the point at `lambda = 0` carries the
    /// prior's second moment.
    pub reports: Vec<MmseReport<f64>>,
    /// `(lambda, I(lambda))` from the theory column.
    pub mutual_information: Vec<(f64, f64)>,
}

impl MmseCurve {
    /// [`crate::mmse::write_reports_csv`] columns plus `mutual_information`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "lambda",
            "alpha",
            "theory_mmse",
            "empirical_mse",
            "stderr",
            "int_mu_over_x2",
            "int_mu_cubed",
            "mutual_information",
        ])?;
        for (r, &(_, mi)) in self.reports.iter().zip(&self.mutual_information) {
            w.write_record([
                r.lambda.to_string(),
                r.alpha.to_string(),
                r.theory_mmse.to_string(),
                opt(r.empirical_mse),
                opt(r.stderr),
                opt(r.int_mu_over_x2),
                r.int_mu_cubed.to_string(),
                mi.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

struct PointOutcome {
    theory: f64,
    mse: f64,
    second_moment: f64,
    int_mu_over_x2: Option<f64>,
    int_mu_cubed: f64,
    divergent: bool,
}

fn mmse_point(cfg: &MmseCurveConfig, index: usize, trial: usize, lambda: f64) -> Result<PointOutcome> {
    let params = ChannelParams::new(cfg.n, cfg.m, lambda)?;
    let mut rng = stream_rng(cfg.master_seed, trial_stream(index, trial));
    let s = sample_signal(&cfg.prior.build(), &params, &mut rng)?;
    let obs = observe(&s, &NoiseModel::gaussian(params.alpha), &params, &mut rng)?;
    let spectrum = svd_spectrum(&obs.y, true)?;
    let density = estimate_half_density(&spectrum, cfg.eta, DEFAULT_GRID_POINTS)?;
    let report = mmse_gaussian(&density, lambda, params.alpha)?;
    let options = DenoiseOptions {
        eta: cfg.eta,
        ..DenoiseOptions::default()
    };
    let shrinkage = shrink_spectrum(&spectrum, lambda, &Shrinker::Gaussian, &options)?;
    let mse = empirical_mse(&s, &reconstruct(&spectrum, &shrinkage)?)?;
    Ok(PointOutcome {
        theory: report.theory_mmse,
        mse,
        second_moment: report.second_moment_s,
        int_mu_over_x2: report.int_mu_over_x2,
        int_mu_cubed: report.int_mu_cubed,
        divergent: report.divergent,
    })
}

/// Gaussian-noise MMSE on `points` SNR values in `[0, lambda_max]`, from the
/// quadrature formula averaged over `trials` draws, alongside the RIE's
/// empirical MSE and the mutual information integrated from the formula.
pub fn mmse_curve(cfg: &MmseCurveConfig) -> Result<MmseCurve> {
    cfg.validate()?;
    super::with_thread_pool(|| mmse_curve_validated(cfg))
}

fn mmse_curve_validated(cfg: &MmseCurveConfig) -> Result<MmseCurve> {
    let alpha = cfg.n as f64 / cfg.m as f64;
    let m2 = cfg.prior.second_moment(alpha);
    let step = cfg.lambda_max / (cfg.points - 1) as f64;
    let lambdas: Vec<f64> = (0..cfg.points).map(|k| k as f64 * step).collect();
    let tasks: Vec<(usize, usize)> = (1..cfg.points)
        .flat_map(|k| (0..cfg.trials).map(move |t| (k, t)))
        .collect();
    let outcomes: Vec<Result<PointOutcome>> = tasks
        .par_iter()
        .map(|&(k, t)| mmse_point(cfg, k, t, lambdas[k]))
        .collect();

    let mut reports = vec![MmseReport {
        lambda: 0.0,
        alpha,
        theory_mmse: m2,
        empirical_mse: Some(m2),
        stderr: None,
        second_moment_s: m2,
        int_mu_over_x2: None,
        int_mu_cubed: 0.0,
        divergent: false,
    }];
    let mut outcomes = outcomes.into_iter();
    for &lambda in &lambdas[1..] {
        let chunk: Vec<PointOutcome> = outcomes.by_ref().take(cfg.trials).collect::<Result<_>>()?;
        let avg = |f: &dyn Fn(&PointOutcome) -> f64| chunk.iter().map(f).sum::<f64>() / chunk.len() as f64;
        let mses: Vec<f64> = chunk.iter().map(|o| o.mse).collect();
        let (mean_mse, stderr) = mean_and_stderr(&mses);
        let int_mu_over_x2 = if chunk.iter().all(|o| o.int_mu_over_x2.is_some()) {
            Some(avg(&|o| o.int_mu_over_x2.unwrap_or(0.0)))
        } else {
            None
        };
        reports.push(MmseReport {
            lambda,
            alpha,
            theory_mmse: avg(&|o| o.theory),
            empirical_mse: Some(mean_mse),
            stderr: Some(stderr),
            second_moment_s: avg(&|o| o.second_moment),
            int_mu_over_x2,
            int_mu_cubed: avg(&|o| o.int_mu_cubed),
            divergent: chunk.iter().any(|o| o.divergent),
        });
    }
    let samples: Vec<(f64, f64)> = reports.iter().map(|r| (r.lambda, r.theory_mmse)).collect();
    let mutual_information = mutual_information_curve(&samples, alpha)?;
    Ok(MmseCurve {
        reports,
        mutual_information,
    })
}
