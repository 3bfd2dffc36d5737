//! Empirical singular spectra and Cauchy-kernel estimates of the symmetrized
//! density, its Stieltjes transform and its Hilbert transform.

use std::io::Write;

use faer::Mat;
use num_complex::Complex;
use rayon::prelude::*;

use crate::quad::trapezoid;
use crate::{Error, Real, Result};

/// Relative density floor below which a point is flagged as an edge point.
pub const EDGE_FLOOR: f64 = 1e-4;

/// Default number of grid points for density estimates.
pub const DEFAULT_GRID_POINTS: usize = 512;

/// Grid half-width as a multiple of the largest singular value.
pub const GRID_MARGIN: f64 = 1.05;

/// Singular values of an `n x m` matrix (`n <= m`), largest first, with the
/// thin factors when requested: `left` is `n x n`, `right` is `m x n`.
#[derive(Debug, Clone)]
pub struct SingularSpectrum<T> {
    pub values: Vec<T>,
    pub n: usize,
    pub m: usize,
    pub left: Option<Mat<T>>,
    pub right: Option<Mat<T>>,
}

impl<T: Real> SingularSpectrum<T> {
    /// Spectrum without factors, e.g. for synthetic tests.
    ///
    /// Values are sorted into descending order.
    pub fn from_values(mut values: Vec<T>, m: usize) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(Error::param("values", "singular values must be finite and >= 0"));
        }
        let n = values.len();
        if n == 0 || n > m {
            return Err(Error::InvalidDimensions {
                rows: n,
                cols: m,
                reason: "requires 1 <= n <= m",
            });
        }
        values.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
        Ok(Self {
            values,
            n,
            m,
            left: None,
            right: None,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max(&self) -> T {
        self.values.first().copied().unwrap_or_else(T::zero)
    }

    pub fn alpha(&self) -> T {
        T::count(self.n) / T::count(self.m)
    }

    /// `(U, V)` factors, or [`Error::MissingFactors`].
    pub fn factors(&self) -> Result<(&Mat<T>, &Mat<T>)> {
        match (&self.left, &self.right) {
            (Some(u), Some(v)) => Ok((u, v)),
            _ => Err(Error::MissingFactors),
        }
    }
}

/// SVD of `a`, largest singular value first.
///
/// Equal values keep the order the backend returned them in (a stable sort
/// is applied to the backend output).
pub fn svd_spectrum<T: Real>(a: &Mat<T>, keep_vectors: bool) -> Result<SingularSpectrum<T>> {
    let (n, m) = (a.nrows(), a.ncols());
    if n == 0 || n > m {
        return Err(Error::InvalidDimensions {
            rows: n,
            cols: m,
            reason: "requires 1 <= n <= m; transpose the input first",
        });
    }
    for j in 0..m {
        for i in 0..n {
            if !a[(i, j)].is_finite() {
                return Err(Error::Numerical(format!("non-finite entry at ({i}, {j})")));
            }
        }
    }
    let fail = |e| Error::Numerical(format!("SVD did not converge: {e:?}"));

    if !keep_vectors {
        let mut values = a.singular_values().map_err(fail)?;
        for v in values.iter_mut() {
            *v = v.max(T::zero());
        }
        values.sort_by(|x, y| y.partial_cmp(x).expect("finite"));
        return Ok(SingularSpectrum {
            values,
            n,
            m,
            left: None,
            right: None,
        });
    }

    let svd = a.thin_svd().map_err(fail)?;
    let s = svd.S().column_vector();
    let raw: Vec<T> = (0..n).map(|i| s[i].max(T::zero())).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| raw[y].partial_cmp(&raw[x]).expect("finite"));
    let (u, v) = (svd.U(), svd.V());
    let left = Mat::from_fn(n, n, |i, k| u[(i, order[k])]);
    let right = Mat::from_fn(m, n, |i, k| v[(i, order[k])]);
    Ok(SingularSpectrum {
        values: order.iter().map(|&k| raw[k]).collect(),
        n,
        m,
        left: Some(left),
        right: Some(right),
    })
}

/// The `2N` atoms `{-gamma_i} U {+gamma_i}` in increasing order.
pub fn symmetrize<T: Real>(values: &[T]) -> Vec<T> {
    let mut out: Vec<T> = values.iter().map(|&v| -v.abs()).collect();
    out.extend(values.iter().map(|v| v.abs()));
    out.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    out
}

/// Default kernel width `max(gamma_max / 4, 1e-3) / sqrt(N)`.
pub fn default_eta<T: Real>(values: &[T]) -> T {
    let gmax = values.iter().fold(T::zero(), |acc, &v| acc.max(v));
    let w = (gmax / T::lit(4.0)).max(T::lit(1e-3));
    w / T::count(values.len().max(1)).sqrt()
}

/// Symmetrized resolvent `G(z) = (1/2N) sum_k [1/(z - g_k) + 1/(z + g_k)]`
/// at an arbitrary complex point.
pub fn resolvent<T: Real>(values: &[T], z: Complex<T>) -> Complex<T> {
    let mut acc = Complex::new(T::zero(), T::zero());
    for &g in values {
        acc = acc + (z - g).inv() + (z + g).inv();
    }
    acc / T::count(2 * values.len())
}

/// Cauchy-kernel resolvent `G(x - i eta)` at real points.
#[derive(Debug, Clone)]
pub struct StieltjesEval<T> {
    pub points: Vec<T>,
    pub eta: T,
    pub g: Vec<Complex<T>>,
}

/// `G(x - i eta)` for the symmetrized atoms, optionally dropping the pair
/// `±gamma_skip` (normalising by the remaining atom count).
fn cauchy_at<T: Real>(values: &[T], x: T, eta: T, skip: Option<usize>) -> Complex<T> {
    let eta2 = eta * eta;
    let (mut re, mut im) = (T::zero(), T::zero());
    for (k, &g) in values.iter().enumerate() {
        if skip == Some(k) {
            continue;
        }
        let d1 = x - g;
        let d2 = x + g;
        let q1 = d1 * d1 + eta2;
        let q2 = d2 * d2 + eta2;
        re = re + d1 / q1 + d2 / q2;
        im = im + eta / q1 + eta / q2;
    }
    let atoms = values.len() - usize::from(skip.is_some());
    let norm = T::count(2 * atoms);
    Complex::new(re / norm, im / norm)
}

pub fn stieltjes_cauchy<T: Real>(values: &[T], points: &[T], eta: T) -> Result<StieltjesEval<T>> {
    if !(eta > T::zero()) || !eta.is_finite() {
        return Err(Error::param("eta", format!("must be finite and > 0, got {eta}")));
    }
    if values.is_empty() {
        return Err(Error::param("spectrum", "must be nonempty"));
    }
    let g = points.par_iter().map(|&x| cauchy_at(values, x, eta, None)).collect();
    Ok(StieltjesEval {
        points: points.to_vec(),
        eta,
        g,
    })
}

/// Density and Hilbert transform on a strictly increasing grid.
#[derive(Debug, Clone)]
pub struct DensityEstimate<T> {
    pub grid: Vec<T>,
    pub mu: Vec<T>,
    pub hilbert: Vec<T>,
    /// True for the even density of `±gamma`; false for the density of the
    /// singular values themselves on `x >= 0`.
    pub symmetrized: bool,
    /// Points where `mu` fell below [`EDGE_FLOOR`] times its maximum.
    pub edge: Vec<bool>,
    /// Number of negative density values clipped to zero.
    pub clipped: usize,
}

fn edge_flags<T: Real>(mu: &[T]) -> Vec<bool> {
    let peak = mu.iter().fold(T::zero(), |acc, &v| acc.max(v));
    let floor = peak * T::lit(EDGE_FLOOR);
    mu.iter().map(|&v| v < floor).collect()
}

/// `mu = Im G / pi`, `H = Re G / pi`, clipping negative densities.
pub fn density_and_hilbert<T: Real>(eval: &StieltjesEval<T>, symmetrized: bool) -> DensityEstimate<T> {
    let mut clipped = 0;
    let mu: Vec<T> = eval
        .g
        .iter()
        .map(|g| {
            let v = g.im / T::PI();
            if v < T::zero() {
                clipped += 1;
                T::zero()
            } else {
                v
            }
        })
        .collect();
    if clipped > 0 {
        log::warn!("clipped {clipped} negative density values");
    }
    DensityEstimate {
        grid: eval.points.clone(),
        hilbert: eval.g.iter().map(|g| g.re / T::PI()).collect(),
        edge: edge_flags(&mu),
        mu,
        symmetrized,
        clipped,
    }
}

/// `points` equally spaced values covering `[lo, hi]`.
pub fn uniform_grid<T: Real>(lo: T, hi: T, points: usize) -> Vec<T> {
    let last = T::count(points.saturating_sub(1).max(1));
    (0..points).map(|i| lo + (hi - lo) * T::count(i) / last).collect()
}

/// Symmetric grid on `[-1.05 gamma_max, 1.05 gamma_max]`.
pub fn symmetric_grid<T: Real>(values: &[T], points: usize) -> Vec<T> {
    let half = half_width(values);
    uniform_grid(-half, half, points)
}

fn half_width<T: Real>(values: &[T]) -> T {
    let gmax = values.iter().fold(T::zero(), |acc, &v| acc.max(v));
    T::lit(GRID_MARGIN) * gmax.max(T::lit(1e-3))
}

/// Symmetrized density estimate on the default symmetric grid.
pub fn estimate_density<T: Real>(
    spectrum: &SingularSpectrum<T>,
    eta: Option<T>,
    points: usize,
) -> Result<DensityEstimate<T>> {
    let eta = eta.unwrap_or_else(|| default_eta(&spectrum.values));
    let grid = symmetric_grid(&spectrum.values, points);
    Ok(density_and_hilbert(
        &stieltjes_cauchy(&spectrum.values, &grid, eta)?,
        true,
    ))
}

/// Density of the singular values themselves on `[0, 1.05 gamma_max]`,
/// i.e. twice the symmetrized density. The Hilbert column keeps the
/// symmetrized transform.
pub fn estimate_half_density<T: Real>(
    spectrum: &SingularSpectrum<T>,
    eta: Option<T>,
    points: usize,
) -> Result<DensityEstimate<T>> {
    let eta = eta.unwrap_or_else(|| default_eta(&spectrum.values));
    let grid = uniform_grid(T::zero(), half_width(&spectrum.values), points);
    let mut est = density_and_hilbert(&stieltjes_cauchy(&spectrum.values, &grid, eta)?, false);
    for v in est.mu.iter_mut() {
        *v *= T::lit(2.0);
    }
    Ok(est)
}

impl<T: Real> DensityEstimate<T> {
    /// Trapezoid integral of `mu` over the grid.
    pub fn mass(&self) -> T {
        trapezoid(&self.grid, &self.mu)
    }

    /// Rescales `mu` to unit mass; returns the mass before rescaling.
    pub fn renormalize(&mut self) -> T {
        let mass = self.mass();
        if mass > T::zero() {
            for v in self.mu.iter_mut() {
                *v /= mass;
            }
        }
        mass
    }

    /// Linear interpolation of `(mu, hilbert)` at `x`; `None` outside the grid.
    pub fn interpolate(&self, x: T) -> Option<(T, T)> {
        let g = &self.grid;
        if g.is_empty() || x < g[0] || x > g[g.len() - 1] {
            return None;
        }
        let k = g.partition_point(|&p| p <= x).clamp(1, g.len().max(2) - 1);
        if g.len() == 1 {
            return Some((self.mu[0], self.hilbert[0]));
        }
        let t = (x - g[k - 1]) / (g[k] - g[k - 1]);
        let lerp = |v: &[T]| v[k - 1] + (v[k] - v[k - 1]) * t;
        Some((lerp(&self.mu), lerp(&self.hilbert)))
    }

    /// CSV with header `x,mu,hilbert,flag`; `flag` is 1 at edge points.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "mu", "hilbert", "flag"])?;
        for i in 0..self.grid.len() {
            w.write_record([
                self.grid[i].to_string(),
                self.mu[i].to_string(),
                self.hilbert[i].to_string(),
                u8::from(self.edge[i]).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Density and Hilbert transform at each singular value.
#[derive(Debug, Clone)]
pub struct PointEstimate<T> {
    pub points: Vec<T>,
    pub eta: T,
    pub mu: Vec<T>,
    pub hilbert: Vec<T>,
    pub edge: Vec<bool>,
}

impl<T: Real> PointEstimate<T> {
    /// `pi * mu` at index `i`.
    pub fn pi_mu(&self, i: usize) -> T {
        T::PI() * self.mu[i]
    }

    /// `pi * H` at index `i`.
    pub fn pi_hilbert(&self, i: usize) -> T {
        T::PI() * self.hilbert[i]
    }
}

/// Symmetrized density and Hilbert transform at every `gamma_i`.
///
/// With `leave_one_out` the pair `±gamma_i` is removed from the kernel sum
/// at its own point.
pub fn eval_at_singular_values<T: Real>(
    spectrum: &SingularSpectrum<T>,
    eta: T,
    leave_one_out: bool,
) -> Result<PointEstimate<T>> {
    let values = &spectrum.values;
    if values.is_empty() {
        return Err(Error::param("spectrum", "must be nonempty"));
    }
    if leave_one_out && values.len() < 2 {
        return Err(Error::param("leave_one_out", "needs at least two singular values"));
    }
    if !(eta > T::zero()) || !eta.is_finite() {
        return Err(Error::param("eta", format!("must be finite and > 0, got {eta}")));
    }
    let g: Vec<Complex<T>> = (0..values.len())
        .into_par_iter()
        .map(|i| cauchy_at(values, values[i], eta, leave_one_out.then_some(i)))
        .collect();
    let mu: Vec<T> = g.iter().map(|g| (g.im / T::PI()).max(T::zero())).collect();
    Ok(PointEstimate {
        points: values.clone(),
        eta,
        hilbert: g.iter().map(|g| g.re / T::PI()).collect(),
        edge: edge_flags(&mu),
        mu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::{sample_gaussian_matrix, stream_rng};

    fn square_gaussian_spectrum(n: usize, seed: u64) -> SingularSpectrum<f64> {
        let a = sample_gaussian_matrix(n, n, 1.0 / n as f64, &mut stream_rng(seed, 0)).unwrap();
        svd_spectrum(&a, false).unwrap()
    }

    #[test]
    fn values_are_sorted_descending() {
        let mut a = Mat::<f64>::zeros(3, 4);
        a[(0, 0)] = 3.0;
        a[(1, 1)] = 1.0;
        a[(2, 2)] = 2.0;
        for keep in [false, true] {
            let s = svd_spectrum(&a, keep).unwrap();
            for (got, want) in s.values.iter().zip([3.0, 2.0, 1.0]) {
                assert!((got - want).abs() < 1e-12);
            }
        }
        let z = svd_spectrum(&Mat::<f64>::zeros(2, 5), true).unwrap();
        assert!(z.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn svd_rejects_bad_input() {
        assert!(svd_spectrum(&Mat::<f64>::zeros(4, 3), false).is_err());
        let mut a = Mat::<f64>::zeros(2, 3);
        a[(1, 1)] = f64::NAN;
        assert!(matches!(svd_spectrum(&a, false), Err(Error::Numerical(_))));
    }

    #[test]
    fn frobenius_identity_and_reconstruction() {
        let a = sample_gaussian_matrix(5, 8, 1.0, &mut stream_rng(1, 0)).unwrap();
        let s = svd_spectrum(&a, true).unwrap();
        let sum2: f64 = s.values.iter().map(|v| v * v).sum();
        let frob2 = a.norm_l2().powi(2);
        assert!((sum2 - frob2).abs() < 1e-10 * frob2.max(1.0));

        let (u, v) = s.factors().unwrap();
        let mut us = u.clone();
        for k in 0..5 {
            for i in 0..5 {
                us[(i, k)] *= s.values[k];
            }
        }
        let rec = &us * v.transpose();
        assert!((&rec - &a).norm_l2() / a.norm_l2() < 1e-8);
    }

    #[test]
    fn symmetrize_orders_signed_atoms() {
        assert_eq!(symmetrize(&[2.0, 1.0]), vec![-2.0, -1.0, 1.0, 2.0]);
        assert_eq!(symmetrize(&[0.0f64; 3]).len(), 6);
        let atoms = symmetrize(&[3.0, 0.25, 1.5]);
        assert_eq!(atoms.iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn single_atom_two_term_value() {
        // (1/2)[1/(-i-1) + 1/(-i+1)]: both terms have imaginary part 1/2.
        let t1 = Complex::new(-1.0, -1.0f64).inv();
        let t2 = Complex::new(1.0, -1.0f64).inv();
        let want = (t1 + t2) * 0.5;
        let got = stieltjes_cauchy(&[1.0], &[0.0], 1.0).unwrap().g[0];
        assert!((got - want).norm() < 1e-15);
        assert!((got.im - 0.5).abs() < 1e-15);
        assert!(stieltjes_cauchy(&[1.0], &[0.0], 0.0).is_err());
    }

    #[test]
    fn far_field_is_one_over_x() {
        let values = [0.5, 1.0, 2.0];
        let x = 20.0;
        let g = stieltjes_cauchy(&values, &[x], default_eta(&values)).unwrap().g[0];
        let m2 = values.iter().map(|v| v * v).sum::<f64>() / 3.0;
        assert!((g - Complex::new(1.0 / x, 0.0)).norm() < 2.0 * m2 / (x * x));
    }

    #[test]
    fn semicircle_density_and_hilbert() {
        let s = square_gaussian_spectrum(2000, 21);
        let eval = stieltjes_cauchy(&s.values, &[0.0], 0.05).unwrap();
        let mu0 = eval.g[0].im / std::f64::consts::PI;
        assert!((mu0 * std::f64::consts::PI - 1.0).abs() < 0.05, "mu(0) {mu0}");

        let est = estimate_density(&s, None, DEFAULT_GRID_POINTS).unwrap();
        for (x, h) in est.grid.iter().zip(&est.hilbert) {
            if x.abs() <= 1.5 {
                assert!((std::f64::consts::PI * h - x / 2.0).abs() < 0.05, "x {x}");
            }
        }
        let (_, h0) = est.interpolate(0.0).unwrap();
        assert!(h0.abs() < 1e-3);
    }

    #[test]
    fn density_is_even_and_hilbert_odd() {
        let s = square_gaussian_spectrum(300, 3);
        let est = estimate_density(&s, None, 257).unwrap();
        let n = est.grid.len();
        for i in 0..n {
            assert!((est.mu[i] - est.mu[n - 1 - i]).abs() < 1e-10);
            assert!((est.hilbert[i] + est.hilbert[n - 1 - i]).abs() < 1e-10);
        }
    }

    #[test]
    fn mass_is_close_to_one_and_renormalizes() {
        let s = square_gaussian_spectrum(1000, 4);
        let mut est = estimate_density(&s, None, DEFAULT_GRID_POINTS).unwrap();
        let before = est.renormalize();
        assert!((0.98..=1.02).contains(&before), "mass {before}");
        assert!((est.mass() - 1.0).abs() < 1e-12);
        assert_eq!(est.clipped, 0);
    }

    #[test]
    fn plemelj_views_agree() {
        let values = [0.3, 1.1, 1.7, 2.2];
        let grid = uniform_grid(-3.0, 3.0, 41);
        let eval = stieltjes_cauchy(&values, &grid, 0.2).unwrap();
        let est = density_and_hilbert(&eval, true);
        for (i, &x) in grid.iter().enumerate() {
            let z = Complex::new(x, -0.2);
            let direct = resolvent(&values, z);
            let pi = std::f64::consts::PI;
            let view = Complex::new(pi * est.hilbert[i], pi * est.mu[i]);
            assert!((direct - view).norm() < 1e-14);
        }
    }

    #[test]
    fn point_values_match_grid_interpolation() {
        let s = square_gaussian_spectrum(500, 5);
        let eta = default_eta(&s.values);
        let est = density_and_hilbert(
            &stieltjes_cauchy(&s.values, &symmetric_grid(&s.values, 4096), eta).unwrap(),
            true,
        );
        let pts = eval_at_singular_values(&s, eta, false).unwrap();
        for i in 0..s.len() {
            let (mu, h) = est.interpolate(s.values[i]).unwrap();
            assert!((mu - pts.mu[i]).abs() < 1e-3);
            assert!((h - pts.hilbert[i]).abs() < 1e-3);
        }
    }

    #[test]
    fn point_values_depend_on_value_only() {
        let s = SingularSpectrum::from_values(vec![1.0, 1.0, 0.5], 3).unwrap();
        let pts = eval_at_singular_values(&s, 0.1, false).unwrap();
        assert_eq!(pts.mu[0], pts.mu[1]);
        assert_eq!(pts.hilbert[0], pts.hilbert[1]);

        let one = SingularSpectrum::from_values(vec![0.7], 2).unwrap();
        assert_eq!(eval_at_singular_values(&one, 0.1, false).unwrap().mu.len(), 1);
        assert!(eval_at_singular_values(&one, 0.1, true).is_err());
    }

    #[test]
    fn leave_one_out_drops_self_term() {
        let s = SingularSpectrum::from_values(vec![2.0, 1.0], 2).unwrap();
        let loo = eval_at_singular_values(&s, 0.5, true).unwrap();
        // Only the pair ±1 remains at x = 2.
        let want = cauchy_at(&[1.0], 2.0, 0.5, None);
        assert!((loo.mu[0] - want.im / std::f64::consts::PI).abs() < 1e-15);
    }

    #[test]
    fn csv_layout() {
        let s = SingularSpectrum::from_values(vec![1.0, 0.5], 2).unwrap();
        let est = estimate_density(&s, Some(0.1), 5).unwrap();
        let mut buf = Vec::new();
        est.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("x,mu,hilbert,flag"));
        assert_eq!(text.lines().count(), 6);
    }

    #[test]
    fn single_precision_estimate() {
        let s = SingularSpectrum::from_values(vec![1.0f32, 0.8, 0.3], 4).unwrap();
        let est = estimate_density(&s, None, 64).unwrap();
        assert!(est.mu.iter().all(|v| v.is_finite()));
    }
}
