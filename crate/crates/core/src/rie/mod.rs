//! Singular value shrinkage: the oracle, the Gaussian-noise and
//! general-noise rotational invariant estimators, and reconstruction.

mod overlap;

use std::io::Write;
use std::sync::Arc;

use faer::Mat;
use num_complex::Complex;

use crate::freeprob::RTransform;
use crate::spectral::{default_eta, eval_at_singular_values, svd_spectrum, PointEstimate, SingularSpectrum};
use crate::{Error, Real, Result};

pub use overlap::{overlap_empirical, overlap_theory, zeta_star, OverlapCurve, OverlapStudy, OverlapTheory, ZetaPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShrinkageMethod {
    Oracle,
    GaussianRie,
    GeneralRie,
    /// `xi = gamma / sqrt(lambda)`.
    Identity,
}

impl ShrinkageMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            ShrinkageMethod::Oracle => "oracle",
            ShrinkageMethod::GaussianRie => "gaussian-rie",
            ShrinkageMethod::GeneralRie => "general-rie",
            ShrinkageMethod::Identity => "identity",
        }
    }
}

/// Shrunk singular values aligned with the observed `gamma`.
#[derive(Debug, Clone)]
pub struct ShrinkageResult<T> {
    pub gamma: Vec<T>,
    pub xi: Vec<T>,
    /// Set where the density at `gamma_i` fell below the floor and the
    /// pass-through `gamma_i / sqrt(lambda)` was used instead.
    pub edge_flags: Vec<bool>,
    pub method: ShrinkageMethod,
}

impl<T: Real> ShrinkageResult<T> {
    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }

    /// Replaces negative values with zero.
    pub fn clamp_nonnegative(&mut self) {
        for v in self.xi.iter_mut() {
            *v = v.max(T::zero());
        }
    }

    pub fn edge_count(&self) -> usize {
        self.edge_flags.iter().filter(|&&f| f).count()
    }

    /// CSV with header `gamma,xi,flag`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["gamma", "xi", "flag"])?;
        for i in 0..self.len() {
            w.write_record([
                self.gamma[i].to_string(),
                self.xi[i].to_string(),
                u8::from(self.edge_flags[i]).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_snr<T: Real>(lambda: T) -> Result<()> {
    if !(lambda > T::zero()) || !lambda.is_finite() {
        return Err(Error::param("lambda", format!("must be finite and > 0, got {lambda}")));
    }
    Ok(())
}

fn check_alignment<T: Real>(spectrum: &SingularSpectrum<T>, per_gamma: &PointEstimate<T>) -> Result<()> {
    if per_gamma.mu.len() != spectrum.len() {
        return Err(Error::mismatch(
            format!("{} per-gamma values", spectrum.len()),
            per_gamma.mu.len(),
        ));
    }
    Ok(())
}

/// `xi_i = u_i^T S v_i`, the per-realisation optimum for the observed
/// singular vectors.
pub fn oracle_singular_values<T: Real>(s: &Mat<T>, spectrum: &SingularSpectrum<T>) -> Result<ShrinkageResult<T>> {
    let (u, v) = spectrum.factors()?;
    if s.nrows() != u.nrows() || s.ncols() != v.nrows() {
        return Err(Error::mismatch(
            format!("{}x{}", u.nrows(), v.nrows()),
            format!("{}x{}", s.nrows(), s.ncols()),
        ));
    }
    let us = u.transpose() * s;
    let xi = (0..spectrum.len())
        .map(|i| {
            let mut acc = T::zero();
            for k in 0..s.ncols() {
                acc += us[(i, k)] * v[(k, i)];
            }
            acc
        })
        .collect();
    Ok(ShrinkageResult {
        gamma: spectrum.values.clone(),
        xi,
        edge_flags: vec![false; spectrum.len()],
        method: ShrinkageMethod::Oracle,
    })
}

/// `xi = gamma / sqrt(lambda)`.
pub fn identity_shrink<T: Real>(spectrum: &SingularSpectrum<T>, lambda: T) -> Result<ShrinkageResult<T>> {
    check_snr(lambda)?;
    let a = lambda.sqrt();
    Ok(ShrinkageResult {
        gamma: spectrum.values.clone(),
        xi: spectrum.values.iter().map(|&g| g / a).collect(),
        edge_flags: vec![false; spectrum.len()],
        method: ShrinkageMethod::Identity,
    })
}

fn shrink_with<T: Real>(
    spectrum: &SingularSpectrum<T>,
    lambda: T,
    alpha: T,
    per_gamma: &PointEstimate<T>,
    method: ShrinkageMethod,
    correction: impl Fn(usize, T) -> T,
) -> Result<ShrinkageResult<T>> {
    check_snr(lambda)?;
    check_alignment(spectrum, per_gamma)?;
    let rank_deficient = alpha < T::one() && spectrum.values.iter().any(|&g| g == T::zero());
    if rank_deficient {
        return Err(Error::param(
            "spectrum",
            "a zero singular value makes the (1 - alpha)/gamma term undefined",
        ));
    }
    let a = lambda.sqrt();
    let xi = spectrum
        .values
        .iter()
        .enumerate()
        .map(|(i, &g)| {
            if per_gamma.edge[i] {
                g / a
            } else {
                (g - correction(i, g)) / a
            }
        })
        .collect();
    Ok(ShrinkageResult {
        gamma: spectrum.values.clone(),
        xi,
        edge_flags: per_gamma.edge.clone(),
        method,
    })
}

/// Gaussian-noise shrinkage
/// `xi = (gamma - (1 - alpha)/(alpha gamma) - 2 pi H(gamma)) / sqrt(lambda)`.
pub fn gaussian_rie_shrink<T: Real>(
    spectrum: &SingularSpectrum<T>,
    lambda: T,
    alpha: T,
    per_gamma: &PointEstimate<T>,
) -> Result<ShrinkageResult<T>> {
    let two = T::lit(2.0);
    let c = (T::one() - alpha) / alpha;
    shrink_with(
        spectrum,
        lambda,
        alpha,
        per_gamma,
        ShrinkageMethod::GaussianRie,
        |i, g| {
            let bulk = if c == T::zero() { T::zero() } else { c / g };
            bulk + two * per_gamma.pi_hilbert(i)
        },
    )
}

/// The complex argument at which the noise R-transform is evaluated.
pub(crate) fn shrinkage_argument<T: Real>(gamma: T, alpha: T, pi_h: T, pi_mu: T) -> Complex<T> {
    let one = T::one();
    let b = if alpha == one { T::zero() } else { (one - alpha) / gamma };
    Complex::new(
        b * pi_h + alpha * pi_h * pi_h - alpha * pi_mu * pi_mu,
        pi_mu * (b + T::lit(2.0) * alpha * pi_h),
    )
}

/// General-noise shrinkage
/// `xi = (gamma - Im C(w) / (pi mu(gamma))) / sqrt(lambda)`.
pub fn general_rie_shrink<T: Real>(
    spectrum: &SingularSpectrum<T>,
    lambda: T,
    alpha: T,
    rtransform: &dyn RTransform<T>,
    per_gamma: &PointEstimate<T>,
) -> Result<ShrinkageResult<T>> {
    shrink_with(
        spectrum,
        lambda,
        alpha,
        per_gamma,
        ShrinkageMethod::GeneralRie,
        |i, g| {
            let pi_mu = per_gamma.pi_mu(i);
            let w = shrinkage_argument(g, alpha, per_gamma.pi_hilbert(i), pi_mu);
            rtransform.eval(w).im / pi_mu
        },
    )
}

/// `U diag(xi) V^T`.
pub fn reconstruct<T: Real>(spectrum: &SingularSpectrum<T>, shrinkage: &ShrinkageResult<T>) -> Result<Mat<T>> {
    let (u, v) = spectrum.factors()?;
    if shrinkage.len() != spectrum.len() {
        return Err(Error::mismatch(
            format!("{} shrunk values", spectrum.len()),
            shrinkage.len(),
        ));
    }
    let mut scaled = u.clone();
    for (k, &x) in shrinkage.xi.iter().enumerate() {
        for i in 0..scaled.nrows() {
            scaled[(i, k)] *= x;
        }
    }
    Ok(&scaled * v.transpose())
}

/// Which RIE formula to apply.
#[derive(Clone)]
pub enum Shrinker<T> {
    Gaussian,
    General(Arc<dyn RTransform<T>>),
}

#[derive(Debug, Clone, Copy)]
pub struct DenoiseOptions<T> {
    /// Kernel width; the default policy when `None`.
    pub eta: Option<T>,
    pub leave_one_out: bool,
    pub clamp: bool,
}

impl<T> Default for DenoiseOptions<T> {
    fn default() -> Self {
        Self {
            eta: None,
            leave_one_out: false,
            clamp: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Denoised<T> {
    pub estimate: Mat<T>,
    pub spectrum: SingularSpectrum<T>,
    pub shrinkage: ShrinkageResult<T>,
}

/// SVD, per-value density estimate, shrinkage and reconstruction of `y`.
pub fn denoise<T: Real>(
    y: &Mat<T>,
    lambda: T,
    shrinker: &Shrinker<T>,
    options: &DenoiseOptions<T>,
) -> Result<Denoised<T>> {
    let spectrum = svd_spectrum(y, true)?;
    let shrinkage = shrink_spectrum(&spectrum, lambda, shrinker, options)?;
    let estimate = reconstruct(&spectrum, &shrinkage)?;
    Ok(Denoised {
        estimate,
        spectrum,
        shrinkage,
    })
}

/// The RIE values for an already decomposed observation.
pub fn shrink_spectrum<T: Real>(
    spectrum: &SingularSpectrum<T>,
    lambda: T,
    shrinker: &Shrinker<T>,
    options: &DenoiseOptions<T>,
) -> Result<ShrinkageResult<T>> {
    let eta = options.eta.unwrap_or_else(|| default_eta(&spectrum.values));
    let per_gamma = eval_at_singular_values(spectrum, eta, options.leave_one_out)?;
    let alpha = spectrum.alpha();
    let mut out = match shrinker {
        Shrinker::Gaussian => gaussian_rie_shrink(spectrum, lambda, alpha, &per_gamma)?,
        Shrinker::General(rt) => general_rie_shrink(spectrum, lambda, alpha, rt.as_ref(), &per_gamma)?,
    };
    if options.clamp {
        out.clamp_nonnegative();
    }
    if out.edge_count() > 0 {
        log::debug!("{} singular values hit the density floor", out.edge_count());
    }
    Ok(out)
}
