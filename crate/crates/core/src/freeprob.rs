//! Rectangular free-probability transforms of a measure on `[0, K]`:
//! `M`, `T`, `H = z T(M(z))` and the rectangular R-transform
//! `C(z) = T^{-1}(z / H^{-1}(z))`.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use num_complex::Complex;
use num_traits::Num;

use crate::spectral::{DensityEstimate, SingularSpectrum};
use crate::{Error, Real, Result};

/// A rectangular R-transform that can be evaluated off the real axis.
pub trait RTransform<T>: Send + Sync {
    fn eval(&self, z: Complex<T>) -> Complex<T>;

    fn name(&self) -> &'static str;
}

/// `C(z) = z / alpha`, the transform of the Gaussian (Marchenko-Pastur) law.
#[derive(Debug, Clone, Copy)]
pub struct MarchenkoPastur<T> {
    pub alpha: T,
}

impl<T: Real> MarchenkoPastur<T> {
    pub fn new(alpha: T) -> Self {
        Self { alpha }
    }
}

impl<T: Real> RTransform<T> for MarchenkoPastur<T> {
    fn eval(&self, z: Complex<T>) -> Complex<T> {
        z / self.alpha
    }

    fn name(&self) -> &'static str {
        "marchenko-pastur"
    }
}

/// `C(z) = 2 sqrt(z) coth(2 sqrt(z)) - 1` for singular values uniform on
/// `[0, 2]`, square case.
///
/// The function is even in `sqrt(z)`, so the branch of the root is
/// immaterial; the principal root is used.
#[derive(Debug, Clone, Copy, Default)]
pub struct Uniform02;

/// Below this modulus the Taylor series replaces the closed form, which
/// loses digits to the cancellation `x coth x - 1`.
const UNIFORM02_SERIES_RADIUS: f64 = 1e-3;

/// Bernoulli numbers `B_2, B_4, ..., B_16`.
const BERNOULLI_EVEN: [f64; 8] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
];

fn uniform02_series<T: Real>(z: Complex<T>) -> Complex<T> {
    // x coth x = sum_n B_2n (2x)^2n / (2n)!, with x^2 = 4z.
    let mut acc = Complex::new(T::zero(), T::zero());
    let mut zn = Complex::new(T::one(), T::zero());
    let mut scale = 1.0f64;
    let mut fact = 1.0f64;
    for (k, b) in BERNOULLI_EVEN.iter().enumerate() {
        let n = (k + 1) as f64;
        zn *= z;
        scale *= 16.0;
        fact *= (2.0 * n - 1.0) * (2.0 * n);
        acc += zn * T::lit(b * scale / fact);
    }
    acc
}

impl<T: Real> RTransform<T> for Uniform02 {
    fn eval(&self, z: Complex<T>) -> Complex<T> {
        if z.norm() < T::lit(UNIFORM02_SERIES_RADIUS) {
            return uniform02_series(z);
        }
        let w = z.sqrt() * T::lit(2.0);
        // Re w >= 0, so exp(-2w) cannot overflow.
        let e = (-w * T::lit(2.0)).exp();
        let one = Complex::new(T::one(), T::zero());
        w * (one + e) / (one - e) - one
    }

    fn name(&self) -> &'static str {
        "uniform02"
    }
}

/// `C = 0`: the transform of `delta_0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroTransform;

impl<T: Real> RTransform<T> for ZeroTransform {
    fn eval(&self, _z: Complex<T>) -> Complex<T> {
        Complex::new(T::zero(), T::zero())
    }

    fn name(&self) -> &'static str {
        "zero"
    }
}

/// The closed-form transforms known to the toolkit, by name.
pub fn closed_form_rtransforms<T: Real>(alpha: T) -> Vec<Arc<dyn RTransform<T>>> {
    vec![
        Arc::new(MarchenkoPastur::new(alpha)),
        Arc::new(Uniform02),
        Arc::new(ZeroTransform),
    ]
}

/// `T(z) = (alpha z + 1)(z + 1)`, for real or complex arguments.
pub fn t_alpha<N: Num + Copy>(z: N, alpha: N) -> N {
    (alpha * z + N::one()) * (z + N::one())
}

/// The root of `T(y) = x` with `T^{-1}(1) = 0`.
///
/// Written as `2(x - 1) / (sqrt(D) + 1 + alpha)`, the rationalised form of
/// `(-(1 + alpha) + sqrt(D)) / (2 alpha)`, which avoids cancellation near
/// `x = 1` and stays finite as `alpha -> 0`.
pub fn t_alpha_inverse<T: Real>(x: T, alpha: T) -> Result<T> {
    let b = T::one() + alpha;
    let d = b * b + T::lit(4.0) * alpha * (x - T::one());
    if d < T::zero() {
        return Err(Error::OutOfRange {
            what: "T argument",
            value: x.as_f64(),
            range: "discriminant must be nonnegative".into(),
        });
    }
    Ok(T::lit(2.0) * (x - T::one()) / (d.sqrt() + b))
}

type AnalyticM<T> = dyn Fn(T) -> T + Send + Sync;

/// How a measure on `[0, K]` is represented.
#[derive(Clone)]
pub enum MeasureForm<T> {
    /// Point masses with weights summing to one.
    Atoms { values: Vec<T>, weights: Vec<T> },
    /// Density samples on an increasing grid in `[0, K]`, unit mass.
    Grid { x: Vec<T>, density: Vec<T> },
    /// A user supplied `M(z)`.
    Analytic(Arc<AnalyticM<T>>),
}

impl<T: fmt::Debug> fmt::Debug for MeasureForm<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeasureForm::Atoms { values, .. } => write!(f, "Atoms({} values)", values.len()),
            MeasureForm::Grid { x, .. } => write!(f, "Grid({} points)", x.len()),
            MeasureForm::Analytic(_) => f.write_str("Analytic"),
        }
    }
}

/// A probability measure on `[0, K]`.
#[derive(Debug, Clone)]
pub struct MeasureRep<T> {
    pub form: MeasureForm<T>,
    pub support_bound: T,
}

impl<T: Real> MeasureRep<T> {
    /// Uniform weights on `values`.
    pub fn atoms(values: Vec<T>) -> Result<Self> {
        let w = T::one() / T::count(values.len().max(1));
        let weights = vec![w; values.len()];
        Self::weighted_atoms(values, weights)
    }

    pub fn weighted_atoms(values: Vec<T>, weights: Vec<T>) -> Result<Self> {
        if values.is_empty() || values.len() != weights.len() {
            return Err(Error::mismatch(format!("{} weights", values.len()), weights.len()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(Error::param("atoms", "must be finite and >= 0"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < T::zero()) {
            return Err(Error::param("weights", "must be finite and >= 0"));
        }
        let total: T = weights.iter().copied().sum();
        if (total - T::one()).abs() > T::tol(1e-12) * T::count(values.len()) {
            return Err(Error::param("weights", format!("sum to {total}, not 1")));
        }
        let k = values.iter().fold(T::zero(), |acc, &v| acc.max(v));
        Ok(Self {
            form: MeasureForm::Atoms { values, weights },
            support_bound: k,
        })
    }

    /// Empirical singular value distribution.
    pub fn from_spectrum(spectrum: &SingularSpectrum<T>) -> Result<Self> {
        Self::atoms(spectrum.values.clone())
    }

    /// Density samples; the mass is normalised to one.
    pub fn grid(x: Vec<T>, density: Vec<T>) -> Result<Self> {
        if x.len() < 2 || x.len() != density.len() {
            return Err(Error::mismatch(format!("{} density values", x.len()), density.len()));
        }
        if x[0] < T::zero() || x.windows(2).any(|p| !(p[1] > p[0])) {
            return Err(Error::param("grid", "must be increasing and start at >= 0"));
        }
        let mass = crate::quad::trapezoid(&x, &density);
        if !(mass > T::zero()) {
            return Err(Error::param("density", "has no mass"));
        }
        let density = density.into_iter().map(|d| d.max(T::zero()) / mass).collect();
        let k = x[x.len() - 1];
        Ok(Self {
            form: MeasureForm::Grid { x, density },
            support_bound: k,
        })
    }

    /// The `x >= 0` part of a density estimate. A symmetrized estimate is
    /// folded onto the half line.
    pub fn from_density(est: &DensityEstimate<T>) -> Result<Self> {
        let (x, d): (Vec<T>, Vec<T>) = est
            .grid
            .iter()
            .zip(&est.mu)
            .filter(|(x, _)| **x >= T::zero())
            .map(|(&x, &m)| (x, m))
            .unzip();
        Self::grid(x, d)
    }

    /// A measure known only through `M(z)` on `[0, K^-2)`.
    pub fn analytic<F>(m: F, support_bound: T) -> Result<Self>
    where
        F: Fn(T) -> T + Send + Sync + 'static,
    {
        if !support_bound.is_finite() || support_bound < T::zero() {
            return Err(Error::param("support_bound", "must be finite and >= 0"));
        }
        Ok(Self {
            form: MeasureForm::Analytic(Arc::new(m)),
            support_bound,
        })
    }

    /// Right end of the domain of `M`, `K^-2` (infinite for `delta_0`).
    pub fn z_edge(&self) -> T {
        let k = self.support_bound;
        if k > T::zero() {
            T::one() / (k * k)
        } else {
            T::infinity()
        }
    }
}

/// A measure together with the aspect ratio its transforms are taken at.
#[derive(Debug, Clone)]
pub struct TransformContext<T> {
    pub alpha: T,
    pub measure: MeasureRep<T>,
}

/// Safety margin keeping iterates off the pole at `K^-2`.
pub const EDGE_MARGIN: f64 = 1e-9;

const MAX_NEWTON: usize = 100;
const MAX_BISECTION: usize = 400;

impl<T: Real> TransformContext<T> {
    pub fn new(alpha: T, measure: MeasureRep<T>) -> Result<Self> {
        if !(alpha > T::zero() && alpha <= T::one()) {
            return Err(Error::param("alpha", format!("must lie in (0, 1], got {alpha}")));
        }
        Ok(Self { alpha, measure })
    }

    fn check_domain(&self, z: T) -> Result<()> {
        let edge = self.measure.z_edge();
        if !(z >= T::zero()) || z >= edge {
            return Err(Error::OutOfRange {
                what: "z",
                value: z.as_f64(),
                range: format!("[0, {})", edge.as_f64()),
            });
        }
        Ok(())
    }

    /// `(M(z), M'(z))`.
    fn m_and_derivative(&self, z: T) -> Result<(T, T)> {
        self.check_domain(z)?;
        let one = T::one();
        Ok(match &self.measure.form {
            MeasureForm::Atoms { values, weights } => {
                let (mut m, mut dm) = (T::zero(), T::zero());
                for (&t, &w) in values.iter().zip(weights) {
                    let t2 = t * t;
                    let q = one / (one - t2 * z);
                    // w / (1 - t^2 z) - w, written without the cancellation.
                    m += w * t2 * z * q;
                    dm += w * t2 * q * q;
                }
                (m, dm)
            }
            MeasureForm::Grid { x, density } => {
                let f: Vec<T> = x
                    .iter()
                    .zip(density)
                    .map(|(&t, &d)| d * t * t * z / (one - t * t * z))
                    .collect();
                let g: Vec<T> = x
                    .iter()
                    .zip(density)
                    .map(|(&t, &d)| {
                        let q = one / (one - t * t * z);
                        d * t * t * q * q
                    })
                    .collect();
                (crate::quad::trapezoid(x, &f), crate::quad::trapezoid(x, &g))
            }
            MeasureForm::Analytic(m) => {
                let edge = self.measure.z_edge();
                let h = T::lit(1e-6) * (z.abs() + T::lit(1e-3)).min(edge);
                let lo = (z - h).max(T::zero());
                let hi = z + h;
                let dm = if hi < edge {
                    (m(hi) - m(lo)) / (hi - lo)
                } else {
                    (m(z) - m(lo)) / (z - lo)
                };
                (m(z), dm)
            }
        })
    }

    /// `M(z) = int mu(t) / (1 - t^2 z) dt - 1` on `[0, K^-2)`.
    pub fn m_transform(&self, z: T) -> Result<T> {
        Ok(self.m_and_derivative(z)?.0)
    }

    /// `H(z) = z T(M(z))`.
    pub fn h_transform(&self, z: T) -> Result<T> {
        let m = self.m_transform(z)?;
        Ok(z * t_alpha(m, self.alpha))
    }

    fn h_and_derivative(&self, z: T) -> Result<(T, T)> {
        let (m, dm) = self.m_and_derivative(z)?;
        let a = self.alpha;
        let t = t_alpha(m, a);
        let dt = T::lit(2.0) * a * m + T::one() + a;
        Ok((z * t, t + z * dt * dm))
    }

    /// Solves `H(z) = w` on `[0, K^-2)` by safeguarded Newton iteration.
    pub fn invert_h(&self, w: T) -> Result<T> {
        if !(w >= T::zero()) || !w.is_finite() {
            return Err(Error::OutOfRange {
                what: "w",
                value: w.as_f64(),
                range: "[0, inf)".into(),
            });
        }
        if w == T::zero() {
            return Ok(T::zero());
        }
        let edge = self.measure.z_edge();
        if edge.is_infinite() {
            // delta_0: M = 0 and H is the identity.
            return Ok(w);
        }
        let mut hi = edge * (T::one() - T::lit(EDGE_MARGIN));
        let h_hi = self.h_transform(hi)?;
        if w > h_hi {
            return Err(Error::OutOfRange {
                what: "w",
                value: w.as_f64(),
                range: format!("[0, {}] (attainable range of H)", h_hi.as_f64()),
            });
        }
        let tol = T::tol(1e-12) * w.max(T::one());
        let mut lo = T::zero();
        // H(z) >= z, so the root is at most w.
        let mut z = w.min(hi * T::lit(0.5));
        let mut newton_steps = 0;
        for _ in 0..MAX_NEWTON + MAX_BISECTION {
            let (h, dh) = self.h_and_derivative(z)?;
            let f = h - w;
            if f.abs() <= tol {
                return Ok(z);
            }
            if f > T::zero() {
                hi = z;
            } else {
                lo = z;
            }
            let mid = lo + (hi - lo) * T::lit(0.5);
            let next = if newton_steps < MAX_NEWTON && dh > T::zero() {
                newton_steps += 1;
                let cand = z - f / dh;
                if cand > lo && cand < hi {
                    cand
                } else {
                    mid
                }
            } else {
                mid
            };
            if next == z || hi - lo <= T::epsilon() * hi {
                // The bracket has collapsed to adjacent floats.
                return Ok(next);
            }
            z = next;
        }
        Err(Error::Numerical(format!("H inversion did not converge for w = {w}")))
    }

    /// `C(z) = T^{-1}(z / H^{-1}(z))`, with `C(0) = 0`.
    pub fn rect_r_transform(&self, z: T) -> Result<T> {
        if z == T::zero() {
            return Ok(T::zero());
        }
        let h_inv = self.invert_h(z)?;
        t_alpha_inverse(z / h_inv, self.alpha)
    }
}

/// One row of a free convolution check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvolutionResidual<T> {
    pub z: T,
    pub c_y: T,
    pub c_s: T,
    pub c_z: T,
    pub residual: T,
}

/// `C_Y(z) - C_S(z) - C_Z(z)` at each point.
pub fn check_free_convolution<T: Real>(
    mu_s: &TransformContext<T>,
    mu_z: &TransformContext<T>,
    mu_y: &TransformContext<T>,
    z_points: &[T],
) -> Result<Vec<ConvolutionResidual<T>>> {
    let tol = T::tol(1e-12);
    if (mu_s.alpha - mu_y.alpha).abs() > tol || (mu_z.alpha - mu_y.alpha).abs() > tol {
        return Err(Error::param("alpha", "all three measures must share alpha"));
    }
    z_points
        .iter()
        .map(|&z| {
            let c_y = mu_y.rect_r_transform(z)?;
            let c_s = mu_s.rect_r_transform(z)?;
            let c_z = mu_z.rect_r_transform(z)?;
            Ok(ConvolutionResidual {
                z,
                c_y,
                c_s,
                c_z,
                residual: c_y - c_s - c_z,
            })
        })
        .collect()
}

/// CSV with header `z,c_y,c_s,c_z,residual`.
pub fn write_residuals_csv<T: Real, W: Write>(rows: &[ConvolutionResidual<T>], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["z", "c_y", "c_s", "c_z", "residual"])?;
    for r in rows {
        w.write_record([
            r.z.to_string(),
            r.c_y.to_string(),
            r.c_s.to_string(),
            r.c_z.to_string(),
            r.residual.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
