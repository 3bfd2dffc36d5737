//! Singular vector overlaps between observation and signal: the
//! resolvent-based prediction and the Monte-Carlo estimate.

use std::io::Write;
use std::sync::Arc;

use faer::Mat;
use num_complex::Complex;
use rayon::prelude::*;

use crate::ensembles::{combine, stream_rng, ChannelParams, NoiseModel};
use crate::freeprob::{t_alpha, RTransform};
use crate::spectral::{default_eta, resolvent, stieltjes_cauchy, svd_spectrum, symmetric_grid, EDGE_FLOOR};
use crate::{Error, Real, Result};

/// Solutions `zeta_a`, `zeta_b` of the resolvent relations at `z`.
#[derive(Debug, Clone, Copy)]
pub struct ZetaPair<T> {
    pub z: Complex<T>,
    pub zeta_a: Complex<T>,
    pub zeta_b: Complex<T>,
    /// `M_Y(1 / z^2)`.
    pub m_y: Complex<T>,
    /// `G(z)` of the symmetrized observation spectrum.
    pub g: Complex<T>,
}

/// `zeta_a`, `zeta_b` at `z` (with `Im z < 0`) for observation singular
/// values `mu_y`.
pub fn zeta_star<T: Real>(
    z: Complex<T>,
    mu_y: &[T],
    alpha: T,
    noise_rtransform: &dyn RTransform<T>,
) -> Result<ZetaPair<T>> {
    if !(z.im < T::zero()) {
        return Err(Error::param("z", "must lie in the lower half plane"));
    }
    if mu_y.is_empty() {
        return Err(Error::param("mu_y", "must be nonempty"));
    }
    let g = resolvent(mu_y, z);
    let one = Complex::new(T::one(), T::zero());
    let m = z * g - one;
    let u = t_alpha(m, Complex::new(alpha, T::zero())) / (z * z);
    let c = noise_rtransform.eval(u);
    let zeta_a = z * c / (m + one);
    let zeta_b = z * c * alpha / (m * alpha + one);
    let finite = |c: Complex<T>| c.re.is_finite() && c.im.is_finite();
    if !(finite(zeta_a) && finite(zeta_b)) {
        return Err(Error::Numerical(format!("zeta is not finite at z = {z}")));
    }
    Ok(ZetaPair {
        z,
        zeta_a,
        zeta_b,
        m_y: m,
        g,
    })
}

/// Predicted rescaled overlaps for a fixed observation spectrum.
pub struct OverlapTheory<T> {
    values: Vec<T>,
    alpha: T,
    rtransform: Arc<dyn RTransform<T>>,
    eta: T,
    floor: T,
}

impl<T: Real> OverlapTheory<T> {
    /// `eta` defaults to the spectral policy for `mu_y`.
    pub fn new(mu_y: Vec<T>, alpha: T, rtransform: Arc<dyn RTransform<T>>, eta: Option<T>) -> Result<Self> {
        if mu_y.is_empty() {
            return Err(Error::param("mu_y", "must be nonempty"));
        }
        let eta = eta.unwrap_or_else(|| default_eta(&mu_y));
        let grid = symmetric_grid(&mu_y, 512);
        let peak = stieltjes_cauchy(&mu_y, &grid, eta)?
            .g
            .iter()
            .fold(T::zero(), |acc, g| acc.max(g.im / T::PI()));
        Ok(Self {
            values: mu_y,
            alpha,
            rtransform,
            eta,
            floor: peak * T::lit(EDGE_FLOOR),
        })
    }

    pub fn eta(&self) -> T {
        self.eta
    }

    /// `Im[sigma / ((z - zeta_b)(z - zeta_a) - sigma^2)] / (pi mu(gamma))`
    /// at `z = gamma - i eta`, where `sigma` is a singular value of the
    /// scaled signal `sqrt(lambda) S`.
    pub fn overlap(&self, gamma: T, sigma: T) -> Result<T> {
        let z = Complex::new(gamma, -self.eta);
        let zp = zeta_star(z, &self.values, self.alpha, self.rtransform.as_ref())?;
        let pi_mu = zp.g.im;
        if pi_mu / T::PI() < self.floor {
            return Err(Error::OutOfRange {
                what: "gamma",
                value: gamma.as_f64(),
                range: "density above the edge floor".into(),
            });
        }
        let s2 = Complex::new(sigma * sigma, T::zero());
        let den = (z - zp.zeta_b) * (z - zp.zeta_a) - s2;
        Ok((Complex::new(sigma, T::zero()) / den).im / pi_mu)
    }
}

/// One-shot form of [`OverlapTheory::overlap`].
pub fn overlap_theory<T: Real>(
    gamma: T,
    sigma: T,
    mu_y: &[T],
    alpha: T,
    noise_rtransform: Arc<dyn RTransform<T>>,
    eta: Option<T>,
) -> Result<T> {
    OverlapTheory::new(mu_y.to_vec(), alpha, noise_rtransform, eta)?.overlap(gamma, sigma)
}

/// Overlap values along a `gamma` axis for one signal value.
#[derive(Debug, Clone)]
pub struct OverlapCurve<T> {
    pub gamma_grid: Vec<T>,
    pub sigma: T,
    pub values: Vec<T>,
}

impl<T: Real> OverlapCurve<T> {
    /// CSV with header `gamma,sigma,overlap`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["gamma", "sigma", "overlap"])?;
        for (g, v) in self.gamma_grid.iter().zip(&self.values) {
            w.write_record([g.to_string(), self.sigma.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Trial-averaged overlaps against a fixed signal.
#[derive(Debug, Clone)]
pub struct OverlapStudy<T> {
    /// Mean observed singular value at each rank.
    pub gamma_mean: Vec<T>,
    /// Singular values of `sqrt(lambda) S`, largest first.
    pub sigma: Vec<T>,
    /// `N (u_i . l_j)(v_i . r_j)` averaged over trials; row `i` is the
    /// observation rank, column `j` the signal rank.
    pub overlap: Mat<T>,
    pub trials: usize,
    pub failed: usize,
}

/// Trials are summed in fixed-size chunks so the result does not depend on
/// the thread count.
const CHUNK: usize = 8;

struct Partial<T> {
    overlap: Mat<T>,
    gamma: Vec<T>,
    trials: usize,
    failed: usize,
}

/// Monte-Carlo rescaled overlaps with `S` held fixed; trial `k` draws its
/// noise from stream `k` of `master_seed`.
pub fn overlap_empirical<T: Real>(
    s_fixed: &Mat<T>,
    noise: &NoiseModel<T>,
    params: &ChannelParams<T>,
    trials: usize,
    master_seed: u64,
) -> Result<OverlapStudy<T>> {
    if trials == 0 {
        return Err(Error::param("trials", "must be >= 1"));
    }
    let (n, m) = (params.n, params.m);
    if s_fixed.nrows() != n || s_fixed.ncols() != m {
        return Err(Error::mismatch(
            format!("{n}x{m}"),
            format!("{}x{}", s_fixed.nrows(), s_fixed.ncols()),
        ));
    }
    let signal = svd_spectrum(s_fixed, true)?;
    let (ls, rs) = signal.factors()?;
    let root = params.snr.sqrt();
    let nn = T::count(n);

    let chunks = trials.div_ceil(CHUNK);
    let partials: Vec<Result<Partial<T>>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut part = Partial {
                overlap: Mat::zeros(n, n),
                gamma: vec![T::zero(); n],
                trials: 0,
                failed: 0,
            };
            for k in c * CHUNK..((c + 1) * CHUNK).min(trials) {
                let mut rng = stream_rng(master_seed, k as u64);
                let z = noise.sample(n, m, &mut rng)?;
                let y = combine(s_fixed, &z, params.snr);
                let obs = match svd_spectrum(&y, true) {
                    Ok(s) => s,
                    Err(e) => {
                        log::warn!("overlap trial {k} failed: {e}");
                        part.failed += 1;
                        continue;
                    }
                };
                let (u, v) = obs.factors()?;
                let a = u.transpose() * ls;
                let b = v.transpose() * rs;
                for j in 0..n {
                    for i in 0..n {
                        part.overlap[(i, j)] += nn * a[(i, j)] * b[(i, j)];
                    }
                }
                for (acc, &g) in part.gamma.iter_mut().zip(&obs.values) {
                    *acc += g;
                }
                part.trials += 1;
            }
            Ok(part)
        })
        .collect();

    let mut overlap = Mat::zeros(n, n);
    let mut gamma = vec![T::zero(); n];
    let (mut used, mut failed) = (0, 0);
    for part in partials {
        let part = part?;
        overlap = &overlap + &part.overlap;
        for (acc, g) in gamma.iter_mut().zip(part.gamma) {
            *acc += g;
        }
        used += part.trials;
        failed += part.failed;
    }
    if used == 0 {
        return Err(Error::Numerical("every overlap trial failed".into()));
    }
    let scale = T::one() / T::count(used);
    Ok(OverlapStudy {
        gamma_mean: gamma.into_iter().map(|g| g * scale).collect(),
        sigma: signal.values.iter().map(|&s| root * s).collect(),
        overlap: Mat::from_fn(n, n, |i, j| overlap[(i, j)] * scale),
        trials: used,
        failed,
    })
}

/// Ranks `center - window/2 .. center + window/2`, clipped to `0..n`.
fn window(center: usize, width: usize, n: usize) -> std::ops::Range<usize> {
    let width = width.max(1).min(n);
    let start = center.saturating_sub(width / 2).min(n - width);
    start..start + width
}

fn bins(n: usize, width: usize) -> Vec<std::ops::Range<usize>> {
    let width = width.max(1);
    (0..n / width).map(|b| b * width..(b + 1) * width).collect()
}

fn mean<T: Real>(it: impl Iterator<Item = T>, count: usize) -> T {
    it.sum::<T>() / T::count(count)
}

impl<T: Real> OverlapStudy<T> {
    pub fn n(&self) -> usize {
        self.gamma_mean.len()
    }

    /// Unbinned curve against the signal value at rank `j`.
    pub fn curve(&self, j: usize) -> OverlapCurve<T> {
        OverlapCurve {
            gamma_grid: self.gamma_mean.clone(),
            sigma: self.sigma[j],
            values: (0..self.n()).map(|i| self.overlap[(i, j)]).collect(),
        }
    }

    /// Curve averaged over `sigma_window` signal ranks around `j_center` and
    /// over consecutive blocks of `gamma_bin` observation ranks. A trailing
    /// partial block is dropped.
    pub fn binned_curve(&self, j_center: usize, sigma_window: usize, gamma_bin: usize) -> OverlapCurve<T> {
        let js = window(j_center, sigma_window, self.n());
        let bs = bins(self.n(), gamma_bin);
        OverlapCurve {
            gamma_grid: bs
                .iter()
                .map(|b| mean(b.clone().map(|i| self.gamma_mean[i]), b.len()))
                .collect(),
            sigma: mean(js.clone().map(|j| self.sigma[j]), js.len()),
            values: bs
                .iter()
                .map(|b| {
                    let cells = b.len() * js.len();
                    mean(
                        b.clone()
                            .flat_map(|i| js.clone().map(move |j| (i, j)))
                            .map(|(i, j)| self.overlap[(i, j)]),
                        cells,
                    )
                })
                .collect(),
        }
    }

    /// Predicted overlap for every observation rank against signal rank `j`,
    /// using the trial-averaged spectrum as the observation law. Ranks at
    /// the density floor give NaN.
    pub fn theory_matrix(&self, theory: &OverlapTheory<T>, signal_ranks: &[usize]) -> Vec<Vec<T>> {
        signal_ranks
            .par_iter()
            .map(|&j| {
                self.gamma_mean
                    .iter()
                    .map(|&g| theory.overlap(g, self.sigma[j]).unwrap_or_else(|_| T::nan()))
                    .collect()
            })
            .collect()
    }

    /// Theory averaged over the same cells as [`Self::binned_curve`].
    pub fn binned_theory(
        &self,
        theory: &OverlapTheory<T>,
        j_center: usize,
        sigma_window: usize,
        gamma_bin: usize,
    ) -> OverlapCurve<T> {
        let js: Vec<usize> = window(j_center, sigma_window, self.n()).collect();
        let table = self.theory_matrix(theory, &js);
        let bs = bins(self.n(), gamma_bin);
        OverlapCurve {
            gamma_grid: bs
                .iter()
                .map(|b| mean(b.clone().map(|i| self.gamma_mean[i]), b.len()))
                .collect(),
            sigma: mean(js.iter().map(|&j| self.sigma[j]), js.len()),
            values: bs
                .iter()
                .map(|b| {
                    let cells = b.len() * js.len();
                    mean(table.iter().flat_map(|row| b.clone().map(move |i| row[i])), cells)
                })
                .collect(),
        }
    }
}
