use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ensembles::{NoiseModel, SignalPrior, SpectrumSampler};
use crate::rie::Shrinker;
use crate::{Error, Result};

/// Signal prior as written in a config: `gaussian`, `sparse:<p>` or
/// `uniform:<lo>:<hi>` (Haar-rotated spectrum uniform on `[lo, hi]`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PriorSpec {
    Gaussian,
    Sparse { p: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl PriorSpec {
    pub fn build(&self) -> SignalPrior<f64> {
        match *self {
            PriorSpec::Gaussian => SignalPrior::GaussianIid,
            PriorSpec::Sparse { p } => SignalPrior::SparseDiag { p },
            PriorSpec::Uniform { lo, hi } => SignalPrior::HaarSpectrum(SpectrumSampler::uniform(lo, hi)),
        }
    }

    /// `int x^2 mu_S` of the limiting singular value law.
    pub fn second_moment(&self, alpha: f64) -> f64 {
        match *self {
            PriorSpec::Gaussian => 1.0 / alpha,
            PriorSpec::Sparse { p } => 1.0 - p,
            PriorSpec::Uniform { lo, hi } => (lo * lo + lo * hi + hi * hi) / 3.0,
        }
    }
}

impl FromStr for PriorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::Config(format!(
                "unknown prior `{s}`; expected gaussian, sparse:<p> or uniform:<lo>:<hi>"
            ))
        };
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad());
        let parts: Vec<&str> = s.trim().split(':').collect();
        let spec = match parts.as_slice() {
            ["gaussian"] => PriorSpec::Gaussian,
            ["sparse", p] => PriorSpec::Sparse { p: num(p)? },
            ["uniform", lo, hi] => PriorSpec::Uniform {
                lo: num(lo)?,
                hi: num(hi)?,
            },
            _ => return Err(bad()),
        };
        match spec {
            PriorSpec::Sparse { p } if !(0.0..=1.0).contains(&p) => {
                Err(Error::Config(format!("sparsity {p} outside [0, 1]")))
            }
            PriorSpec::Uniform { lo, hi } if !(lo >= 0.0 && hi >= lo && hi.is_finite()) => {
                Err(Error::Config(format!("uniform range [{lo}, {hi}] is invalid")))
            }
            ok => Ok(ok),
        }
    }
}

impl TryFrom<String> for PriorSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl fmt::Display for PriorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PriorSpec::Gaussian => f.write_str("gaussian"),
            PriorSpec::Sparse { p } => write!(f, "sparse:{p}"),
            PriorSpec::Uniform { lo, hi } => write!(f, "uniform:{lo}:{hi}"),
        }
    }
}

impl From<PriorSpec> for String {
    fn from(p: PriorSpec) -> String {
        p.to_string()
    }
}

/// Noise ensemble as written in a config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseSpec {
    Gaussian,
    Uniform02,
    /// No noise at all; useful as a sanity check.
    Zero,
}

impl NoiseSpec {
    pub fn build(&self, alpha: f64) -> NoiseModel<f64> {
        match self {
            NoiseSpec::Gaussian => NoiseModel::gaussian(alpha),
            NoiseSpec::Uniform02 => NoiseModel::haar_uniform(alpha),
            NoiseSpec::Zero => NoiseModel::zero(),
        }
    }

    /// The RIE variant for this noise, if its R-transform is known.
    pub fn shrinker(&self, alpha: f64) -> Option<Shrinker<f64>> {
        match self {
            NoiseSpec::Gaussian => Some(Shrinker::Gaussian),
            _ => self.build(alpha).rtransform.map(Shrinker::General),
        }
    }
}

impl FromStr for NoiseSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "gaussian" => Ok(NoiseSpec::Gaussian),
            "uniform02" => Ok(NoiseSpec::Uniform02),
            "zero" => Ok(NoiseSpec::Zero),
            other => Err(Error::Config(format!(
                "unknown noise `{other}`; expected gaussian, uniform02 or zero"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Rie,
    Oracle,
    Identity,
}

impl Estimator {
    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::Rie => "rie",
            Estimator::Oracle => "oracle",
            Estimator::Identity => "identity",
        }
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rie" => Ok(Estimator::Rie),
            "oracle" => Ok(Estimator::Oracle),
            "identity" => Ok(Estimator::Identity),
            other => Err(Error::Config(format!("unknown estimator `{other}`"))),
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The SNR values plotted in the figures.
pub const DEFAULT_LAMBDA_GRID: [f64; 10] = [0.1, 0.3, 0.5, 0.7, 0.9, 1.0, 2.0, 3.0, 4.0, 5.0];

fn default_lambda_grid() -> Vec<f64> {
    DEFAULT_LAMBDA_GRID.to_vec()
}

fn default_trials() -> usize {
    10
}

fn default_estimators() -> Vec<Estimator> {
    vec![Estimator::Rie, Estimator::Oracle, Estimator::Identity]
}

fn default_ten() -> usize {
    10
}

/// An experiment description, read from JSON. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub prior: PriorSpec,
    pub noise: NoiseSpec,
    pub n: usize,
    pub m: usize,
    #[serde(default = "default_lambda_grid")]
    pub lambda_grid: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<Estimator>,
    #[serde(default)]
    pub eta_override: Option<f64>,
    #[serde(default)]
    pub output_path: Option<PathBuf>,
    /// Draw `S` once and keep it across trials and SNRs.
    #[serde(default)]
    pub fixed_signal: bool,
    /// Clamp negative RIE values at zero.
    #[serde(default)]
    pub clamp: bool,
    /// Also write gnuplot `.dat` files.
    #[serde(default)]
    pub emit_dat: bool,
    /// Overlap runs: signal ranks to report.
    #[serde(default)]
    pub sigma_indices: Option<Vec<usize>>,
    /// Overlap runs: signal ranks averaged around each reported rank.
    #[serde(default = "default_ten")]
    pub sigma_window: usize,
    /// Overlap runs: observation ranks per bin.
    #[serde(default = "default_ten")]
    pub gamma_bin: usize,
}

impl ExperimentConfig {
    /// A config with defaults for everything but the model and dimensions.
    pub fn new(prior: PriorSpec, noise: NoiseSpec, n: usize, m: usize) -> Self {
        Self {
            prior,
            noise,
            n,
            m,
            lambda_grid: default_lambda_grid(),
            trials: default_trials(),
            master_seed: 0,
            estimators: default_estimators(),
            eta_override: None,
            output_path: None,
            fixed_signal: false,
            clamp: false,
            emit_dat: false,
            sigma_indices: None,
            sigma_window: default_ten(),
            gamma_bin: default_ten(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn alpha(&self) -> f64 {
        self.n as f64 / self.m as f64
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n == 0 || self.n > self.m {
            return fail(format!("need 1 <= n <= m, got n = {}, m = {}", self.n, self.m));
        }
        if self.trials == 0 {
            return fail("trials must be >= 1".into());
        }
        if self.lambda_grid.is_empty() {
            return fail("lambda_grid is empty".into());
        }
        if self.lambda_grid.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return fail("lambda_grid values must be finite and > 0".into());
        }
        if self.lambda_grid.windows(2).any(|p| !(p[1] > p[0])) {
            return fail("lambda_grid must be strictly increasing".into());
        }
        if self.estimators.is_empty() {
            return fail("no estimators selected".into());
        }
        let mut seen = self.estimators.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.estimators.len() {
            return fail("estimators contain duplicates".into());
        }
        if let Some(eta) = self.eta_override {
            if !(eta.is_finite() && eta > 0.0) {
                return fail(format!("eta_override must be > 0, got {eta}"));
            }
        }
        if self.estimators.contains(&Estimator::Rie) && self.noise.shrinker(self.alpha()).is_none() {
            return fail(format!(
                "no closed-form R-transform for {:?} noise at alpha = {}",
                self.noise,
                self.alpha()
            ));
        }
        if let Some(idx) = &self.sigma_indices {
            if idx.iter().any(|&j| j >= self.n) {
                return fail(format!("sigma_indices must be < n = {}", self.n));
            }
        }
        if self.sigma_window == 0 || self.gamma_bin == 0 {
            return fail("sigma_window and gamma_bin must be >= 1".into());
        }
        Ok(())
    }
}
