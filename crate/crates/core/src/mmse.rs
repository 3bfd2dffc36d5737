//! Mean squared errors: empirical, asymptotic (general and Gaussian noise),
//! the Hilbert transform identities behind the Gaussian formula, and the
//! mutual information obtained by integrating the MMSE in the SNR.

use std::io::Write;

use faer::Mat;

use crate::quad::{cumulative_trapezoid, trapezoid};
use crate::spectral::DensityEstimate;
use crate::{Error, Real, Result};

/// Asymptotic MMSE at one SNR, with the integrals it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct MmseReport<T> {
    pub lambda: T,
    pub alpha: T,
    pub theory_mmse: T,
    pub empirical_mse: Option<T>,
    pub stderr: Option<T>,
    /// `int x^2 mu_S`, recovered from the second moment of `mu_Y`.
    pub second_moment_s: T,
    /// `int mu_Y / x^2`; not evaluated when `alpha = 1`.
    pub int_mu_over_x2: Option<T>,
    pub int_mu_cubed: T,
    /// Set when `alpha < 1` and the density does not vanish near the
    /// origin, so `int mu_Y / x^2` depends on the cutoff.
    pub divergent: bool,
}

/// `(1/N) |S - S_hat|_F^2`.
pub fn empirical_mse<T: Real>(s: &Mat<T>, s_hat: &Mat<T>) -> Result<T> {
    if s.nrows() != s_hat.nrows() || s.ncols() != s_hat.ncols() {
        return Err(Error::mismatch(
            format!("{}x{}", s.nrows(), s.ncols()),
            format!("{}x{}", s_hat.nrows(), s_hat.ncols()),
        ));
    }
    let mut acc = T::zero();
    for j in 0..s.ncols() {
        for i in 0..s.nrows() {
            let d = s[(i, j)] - s_hat[(i, j)];
            acc += d * d;
        }
    }
    Ok(acc / T::count(s.nrows()))
}

/// MSE divided by the signal's second moment (`1 - p` for the sparse prior).
pub fn normalized_mse<T: Real>(mse: T, second_moment_s: T) -> T {
    mse / second_moment_s
}

/// `int x^2 mu_S - int xi^2 mu_Y`, the second integral as a (weighted) mean
/// over the atoms of `mu_Y`.
pub fn mmse_general<T: Real>(second_moment_s: T, xi: &[T], weights: Option<&[T]>) -> Result<T> {
    if xi.is_empty() {
        return Err(Error::param("xi", "must be nonempty"));
    }
    let mean_sq = match weights {
        None => xi.iter().map(|&x| x * x).sum::<T>() / T::count(xi.len()),
        Some(w) => {
            if w.len() != xi.len() {
                return Err(Error::mismatch(format!("{} weights", xi.len()), w.len()));
            }
            xi.iter().zip(w).map(|(&x, &w)| w * x * x).sum()
        }
    };
    Ok(second_moment_s - mean_sq)
}

/// Gaussian-noise MMSE
/// `(1/lambda)[1/alpha - (1/alpha - 1)^2 int mu/x^2 - (pi^2/3) int mu^3]`
/// from the density of the observed singular values on `x >= 0`.
pub fn mmse_gaussian<T: Real>(density: &DensityEstimate<T>, lambda: T, alpha: T) -> Result<MmseReport<T>> {
    if density.symmetrized {
        return Err(Error::param(
            "density",
            "expects the density of the singular values on x >= 0, not the symmetrized one",
        ));
    }
    if !(lambda > T::zero()) || !lambda.is_finite() {
        return Err(Error::param("lambda", format!("must be finite and > 0, got {lambda}")));
    }
    if !(alpha > T::zero() && alpha <= T::one()) {
        return Err(Error::param("alpha", format!("must lie in (0, 1], got {alpha}")));
    }
    let x = &density.grid;
    let mu = &density.mu;
    if x.len() < 2 || x[0] < T::zero() {
        return Err(Error::param("density", "needs a grid on x >= 0"));
    }
    let one = T::one();
    let cubes: Vec<T> = mu.iter().map(|&m| m * m * m).collect();
    let int_mu_cubed = trapezoid(x, &cubes);
    let moments: Vec<T> = x.iter().zip(mu).map(|(&t, &m)| t * t * m).collect();
    let mean_y2 = trapezoid(x, &moments);

    let inv_alpha = one / alpha;
    let (int_mu_over_x2, divergent) = if alpha == one {
        (None, false)
    } else {
        // The kernel estimate leaks a tail of order eta / x^2 into the gap
        // below the support, so the lower edge is taken where mu / x^2 is
        // smallest between the origin and the density peak. A minimum at the
        // peak itself means there is no gap.
        let peak = (0..x.len()).fold(0, |best, i| if mu[i] > mu[best] { i } else { best });
        let ratio = |i: usize| mu[i] / (x[i] * x[i]);
        let first = x.iter().position(|&t| t > T::zero()).unwrap_or(x.len() - 1);
        let start = (first..=peak.max(first)).fold(first, |best, i| if ratio(i) < ratio(best) { i } else { best });
        let divergent = start >= peak || mu[start] > T::lit(0.5) * mu[peak];
        if divergent {
            log::warn!("density does not vanish near the origin; int mu/x^2 depends on the cutoff");
        }
        let f: Vec<T> = x[start..]
            .iter()
            .zip(&mu[start..])
            .map(|(&t, &m)| m / (t * t))
            .collect();
        (Some(trapezoid(&x[start..], &f)), divergent)
    };
    let bulk = (inv_alpha - one) * (inv_alpha - one) * int_mu_over_x2.unwrap_or_else(T::zero);
    let theory = (inv_alpha - bulk - T::PI() * T::PI() / T::lit(3.0) * int_mu_cubed) / lambda;
    Ok(MmseReport {
        lambda,
        alpha,
        theory_mmse: theory,
        empirical_mse: None,
        stderr: None,
        second_moment_s: (mean_y2 - inv_alpha) / lambda,
        int_mu_over_x2,
        int_mu_cubed,
        divergent,
    })
}

/// Residuals of the Hilbert transform identities for an even density `f`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityResiduals<T> {
    /// `int f H^2 - (1/3) int f^3`.
    pub cubic: T,
    /// `int x f H - (1/2 pi) (int f)^2`.
    pub moment: T,
    /// `int (H/x) f + (1/2 pi)(pv int f/x)^2 - (pi/2) f(0)^2`.
    pub inverse: T,
    /// The same without the `f(0)` term; only zero when `f(0) = 0`.
    pub inverse_without_origin: T,
    /// `(pi/2) f(0)^2`.
    pub origin_term: T,
}

impl<T: Real> IdentityResiduals<T> {
    pub fn max_abs(&self) -> T {
        self.cubic.abs().max(self.moment.abs()).max(self.inverse.abs())
    }
}

/// Evaluates the three identities on the grid of `f` by the trapezoid rule.
///
/// The singular factor `1/x` is handled by symmetry: on a symmetric grid the
/// principal value integrand cancels in pairs, and at a grid point `x = 0`
/// the ratio `H/x` is replaced by the central difference slope of `H`.
pub fn hilbert_identity_suite<T: Real>(f: &DensityEstimate<T>) -> Result<IdentityResiduals<T>> {
    if !f.symmetrized {
        return Err(Error::param("f", "must be a symmetrized density"));
    }
    let x = &f.grid;
    let n = x.len();
    if n < 3 {
        return Err(Error::param("f", "needs at least three grid points"));
    }
    let tol = T::tol(1e-9) * x[n - 1].abs().max(T::one());
    if (0..n).any(|i| (x[i] + x[n - 1 - i]).abs() > tol) {
        return Err(Error::param("f", "grid must be symmetric about 0"));
    }
    let (mu, h) = (&f.mu, &f.hilbert);
    let pi = T::PI();
    let two = T::lit(2.0);

    let mass = trapezoid(x, mu);
    let fh2: Vec<T> = (0..n).map(|i| mu[i] * h[i] * h[i]).collect();
    let f3: Vec<T> = mu.iter().map(|&m| m * m * m).collect();
    let xfh: Vec<T> = (0..n).map(|i| x[i] * mu[i] * h[i]).collect();

    let zero_at = |i: usize| x[i].abs() <= tol;
    let h_over_x: Vec<T> = (0..n)
        .map(|i| {
            if zero_at(i) {
                let (l, r) = (i.saturating_sub(1), (i + 1).min(n - 1));
                (h[r] - h[l]) / (x[r] - x[l])
            } else {
                h[i] / x[i]
            }
        })
        .collect();
    let hxf: Vec<T> = (0..n).map(|i| h_over_x[i] * mu[i]).collect();
    let f_over_x: Vec<T> = (0..n)
        .map(|i| if zero_at(i) { T::zero() } else { mu[i] / x[i] })
        .collect();
    let pv = trapezoid(x, &f_over_x);
    let f0 = f.interpolate(T::zero()).map_or(T::zero(), |(m, _)| m);
    let origin_term = pi / two * f0 * f0;
    let inverse_without_origin = trapezoid(x, &hxf) + pv * pv / (two * pi);

    Ok(IdentityResiduals {
        cubic: trapezoid(x, &fh2) - trapezoid(x, &f3) / T::lit(3.0),
        moment: trapezoid(x, &xfh) - mass * mass / (two * pi),
        inverse: inverse_without_origin - origin_term,
        inverse_without_origin,
        origin_term,
    })
}

/// `(alpha/2) int_0^lambda MMSE`, the per-entry mutual information, by the
/// trapezoid rule on the sampled grid.
pub fn mutual_information_curve<T: Real>(samples: &[(T, T)], alpha: T) -> Result<Vec<(T, T)>> {
    if samples.is_empty() {
        return Err(Error::param("samples", "must be nonempty"));
    }
    if samples[0].0 != T::zero() {
        return Err(Error::param("samples", "the SNR grid must start at 0"));
    }
    if samples.windows(2).any(|p| !(p[1].0 > p[0].0)) {
        return Err(Error::param("samples", "the SNR grid must be strictly increasing"));
    }
    let (l, m): (Vec<T>, Vec<T>) = samples.iter().copied().unzip();
    let half = alpha / T::lit(2.0);
    Ok(l.iter()
        .zip(cumulative_trapezoid(&l, &m))
        .map(|(&l, i)| (l, half * i))
        .collect())
}

fn opt<T: Real>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// CSV with header
/// `lambda,alpha,theory_mmse,empirical_mse,stderr,int_mu_over_x2,int_mu_cubed`.
pub fn write_reports_csv<T: Real, W: Write>(reports: &[MmseReport<T>], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "lambda",
        "alpha",
        "theory_mmse",
        "empirical_mse",
        "stderr",
        "int_mu_over_x2",
        "int_mu_cubed",
    ])?;
    for r in reports {
        w.write_record([
            r.lambda.to_string(),
            r.alpha.to_string(),
            r.theory_mmse.to_string(),
            opt(r.empirical_mse),
            opt(r.stderr),
            opt(r.int_mu_over_x2),
            r.int_mu_cubed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
