//! Signal and noise ensembles and the additive observation channel
//! `Y = sqrt(lambda) S + Z`.

mod io;

use std::fmt;
use std::sync::Arc;

use faer::Mat;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::freeprob::{MarchenkoPastur, RTransform, Uniform02, ZeroTransform};
use crate::{Error, Real, Result};

pub use io::{
    read_matrix, read_matrix_binary, read_matrix_csv, write_matrix, write_matrix_binary, write_matrix_csv, MATRIX_MAGIC,
};

/// Per-trial random stream.
pub type StreamRng = ChaCha8Rng;

/// Returns the generator for stream `stream` under `master_seed`.
///
/// Streams with distinct ids are independent ChaCha streams keyed by the same
/// seed, so trial `k` draws the same numbers regardless of scheduling.
pub fn stream_rng(master_seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

/// Dimensions and signal-to-noise ratio of the channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams<T> {
    pub n: usize,
    pub m: usize,
    pub snr: T,
    pub alpha: T,
}

impl<T: Real> ChannelParams<T> {
    /// Builds parameters with `alpha = n / m`.
    pub fn new(n: usize, m: usize, snr: T) -> Result<Self> {
        let alpha = T::count(n) / T::count(m.max(1));
        Self::with_alpha(n, m, snr, alpha)
    }

    /// Builds parameters with an explicitly stated aspect ratio, which must
    /// agree with `n / m`.
    pub fn with_alpha(n: usize, m: usize, snr: T, alpha: T) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::InvalidDimensions {
                rows: n,
                cols: m,
                reason: "dimensions must be positive",
            });
        }
        if n > m {
            return Err(Error::InvalidDimensions {
                rows: n,
                cols: m,
                reason: "requires n <= m; transpose the input first",
            });
        }
        let exact = n as f64 / m as f64;
        if (alpha.as_f64() - exact).abs() > 1e-12_f64.max(T::epsilon().as_f64() * 4.0) {
            return Err(Error::param("alpha", format!("{alpha} does not match n/m = {exact}")));
        }
        if !snr.is_finite() || snr < T::zero() {
            return Err(Error::param("snr", format!("must be finite and >= 0, got {snr}")));
        }
        Ok(Self { n, m, snr, alpha })
    }

    /// Same dimensions, different SNR.
    pub fn with_snr(self, snr: T) -> Result<Self> {
        Self::with_alpha(self.n, self.m, snr, self.alpha)
    }
}

type SamplerFn<T> = dyn Fn(usize, &mut dyn RngCore) -> Vec<T> + Send + Sync;

/// User-supplied sampler of `n` singular values.
#[derive(Clone)]
pub struct SpectrumSampler<T>(Arc<SamplerFn<T>>);

impl<T: Real> SpectrumSampler<T> {
    pub fn new<F>(f: F) -> Self
    where
        F: Fn(usize, &mut dyn RngCore) -> Vec<T> + Send + Sync + 'static,
    {
        Self(Arc::new(f))
    }

    /// I.i.d. uniform values on `[lo, hi]`.
    pub fn uniform(lo: T, hi: T) -> Self {
        let (lo, hi) = (lo.as_f64(), hi.as_f64());
        Self::new(move |n, rng| (0..n).map(|_| T::lit(lo + (hi - lo) * rng.random::<f64>())).collect())
    }

    /// Always returns zeros.
    pub fn zeros() -> Self {
        Self::new(|n, _| vec![T::zero(); n])
    }

    /// Draws `n` values and checks they are finite and nonnegative.
    pub fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Result<Vec<T>> {
        let values = (self.0)(n, rng);
        if values.len() != n {
            return Err(Error::mismatch(format!("{n} singular values"), values.len()));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < T::zero()) {
            return Err(Error::param(
                "sampler",
                format!("returned {bad}; singular values must be finite and >= 0"),
            ));
        }
        Ok(values)
    }
}

impl<T> fmt::Debug for SpectrumSampler<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SpectrumSampler(..)")
    }
}

/// Signal ensemble.
#[derive(Debug, Clone)]
pub enum SignalPrior<T> {
    /// I.i.d. Gaussian entries with variance `1/N`.
    GaussianIid,
    /// Haar-rotated spectrum with singular values `0` (probability `p`) or `1`.
    SparseDiag { p: T },
    /// Haar-rotated spectrum drawn from a user sampler.
    HaarSpectrum(SpectrumSampler<T>),
}

impl<T: Real> SignalPrior<T> {
    /// Second moment of the limiting singular value law, `int x^2 mu_S`.
    ///
    /// `None` for user samplers.
    pub fn second_moment(&self, alpha: T) -> Option<T> {
        match self {
            SignalPrior::GaussianIid => Some(T::one() / alpha),
            SignalPrior::SparseDiag { p } => Some(T::one() - *p),
            SignalPrior::HaarSpectrum(_) => None,
        }
    }

    fn validate(&self) -> Result<()> {
        if let SignalPrior::SparseDiag { p } = self {
            if !(T::zero()..=T::one()).contains(p) {
                return Err(Error::param("p", format!("must lie in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

/// Noise ensemble.
#[derive(Debug, Clone)]
pub enum NoiseKind<T> {
    /// I.i.d. Gaussian entries with variance `1/N`.
    GaussianIid,
    /// Haar-rotated spectrum, singular values i.i.d. uniform on `[0, 2]`.
    HaarUniform,
    /// Haar-rotated spectrum drawn from a user sampler.
    HaarSpectrum(SpectrumSampler<T>),
}

/// Noise ensemble together with its rectangular R-transform, when known.
#[derive(Clone)]
pub struct NoiseModel<T> {
    pub kind: NoiseKind<T>,
    pub rtransform: Option<Arc<dyn RTransform<T>>>,
}

impl<T: Real> NoiseModel<T> {
    /// Gaussian noise; carries `C(z) = z / alpha`.
    pub fn gaussian(alpha: T) -> Self {
        Self {
            kind: NoiseKind::GaussianIid,
            rtransform: Some(Arc::new(MarchenkoPastur::new(alpha))),
        }
    }

    /// Haar-rotated uniform `[0, 2]` spectrum.
    ///
    /// The closed-form R-transform is only known for square matrices, so it
    /// is attached only when `alpha == 1`.
    pub fn haar_uniform(alpha: T) -> Self {
        let square = (alpha - T::one()).abs() <= T::tol(1e-12);
        Self {
            kind: NoiseKind::HaarUniform,
            rtransform: square.then(|| Arc::new(Uniform02) as Arc<dyn RTransform<T>>),
        }
    }

    pub fn custom(sampler: SpectrumSampler<T>, rtransform: Option<Arc<dyn RTransform<T>>>) -> Self {
        Self {
            kind: NoiseKind::HaarSpectrum(sampler),
            rtransform,
        }
    }

    /// Degenerate all-zero noise with `C = 0`.
    pub fn zero() -> Self {
        Self::custom(SpectrumSampler::zeros(), Some(Arc::new(ZeroTransform)))
    }

    /// Draws one `n x m` noise matrix.
    pub fn sample<R: RngCore>(&self, n: usize, m: usize, rng: &mut R) -> Result<Mat<T>> {
        match &self.kind {
            NoiseKind::GaussianIid => sample_gaussian_matrix(n, m, T::one() / T::count(n), rng),
            NoiseKind::HaarUniform => {
                let sigma = SpectrumSampler::uniform(T::zero(), T::lit(2.0)).sample(n, rng)?;
                sample_haar_rotated(&sigma, n, m, rng)
            }
            NoiseKind::HaarSpectrum(sampler) => {
                let sigma = sampler.sample(n, rng)?;
                sample_haar_rotated(&sigma, n, m, rng)
            }
        }
    }
}

impl<T: fmt::Debug> fmt::Debug for NoiseModel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NoiseModel")
            .field("kind", &self.kind)
            .field("rtransform", &self.rtransform.is_some())
            .finish()
    }
}

/// One realisation of the channel.
#[derive(Debug, Clone)]
pub struct Observation<T> {
    pub y: Mat<T>,
    pub params: ChannelParams<T>,
    pub truth: Option<Mat<T>>,
    /// Seed of the noise stream, when the draw came from [`observe_seeded`].
    pub seed: Option<u64>,
}

impl<T: Real> Observation<T> {
    /// Redraws the noise matrix used for this observation.
    pub fn regenerate_noise(&self, noise: &NoiseModel<T>) -> Option<Result<Mat<T>>> {
        let seed = self.seed?;
        Some(noise.sample(self.params.n, self.params.m, &mut stream_rng(seed, 0)))
    }
}

/// `n x m` matrix of i.i.d. centred Gaussians with the given variance.
pub fn sample_gaussian_matrix<T: Real, R: Rng + ?Sized>(
    n: usize,
    m: usize,
    entry_variance: T,
    rng: &mut R,
) -> Result<Mat<T>> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidDimensions {
            rows: n,
            cols: m,
            reason: "dimensions must be positive",
        });
    }
    if !entry_variance.is_finite() || entry_variance < T::zero() {
        return Err(Error::param(
            "entry_variance",
            format!("must be finite and >= 0, got {entry_variance}"),
        ));
    }
    let sd = entry_variance.sqrt();
    let mut a = Mat::zeros(n, m);
    for j in 0..m {
        for i in 0..n {
            let g: f64 = rng.sample(StandardNormal);
            a[(i, j)] = sd * T::lit(g);
        }
    }
    Ok(a)
}

/// Haar-distributed matrix with orthonormal columns, `rows x cols`,
/// `cols <= rows`.
///
/// Thin QR of a Gaussian matrix, with each column of `Q` multiplied by the
/// sign of the matching diagonal entry of `R`. With `cols == rows` this is a
/// Haar orthogonal matrix; otherwise it is the first `cols` columns of one.
pub fn haar_orthonormal<T: Real, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Result<Mat<T>> {
    if cols > rows {
        return Err(Error::InvalidDimensions {
            rows,
            cols,
            reason: "orthonormal columns need cols <= rows",
        });
    }
    let g = sample_gaussian_matrix(rows, cols, T::one(), rng)?;
    let qr = g.qr();
    let mut q = qr.compute_thin_Q();
    let r = qr.thin_R();
    for j in 0..cols {
        if r[(j, j)] < T::zero() {
            for i in 0..rows {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    Ok(q)
}

/// `U diag(sigma) V^T` with `U` Haar on O(n) and `V` Haar on O(m).
///
/// Only the first `n` columns of `V` meet the rectangular diagonal, so only
/// those are drawn.
pub fn sample_haar_rotated<T: Real, R: Rng + ?Sized>(sigma: &[T], n: usize, m: usize, rng: &mut R) -> Result<Mat<T>> {
    if sigma.len() != n {
        return Err(Error::mismatch(format!("{n} singular values"), sigma.len()));
    }
    if n == 0 || n > m {
        return Err(Error::InvalidDimensions {
            rows: n,
            cols: m,
            reason: "requires 1 <= n <= m",
        });
    }
    if let Some(bad) = sigma.iter().find(|v| !v.is_finite() || **v < T::zero()) {
        return Err(Error::param(
            "sigma",
            format!("singular values must be finite and >= 0, got {bad}"),
        ));
    }
    let mut u = haar_orthonormal::<T, R>(n, n, rng)?;
    let v = haar_orthonormal::<T, R>(m, n, rng)?;
    for (j, &s) in sigma.iter().enumerate() {
        for i in 0..n {
            u[(i, j)] *= s;
        }
    }
    Ok(&u * v.transpose())
}

/// Draws a signal matrix from `prior`.
pub fn sample_signal<T: Real, R: RngCore>(
    prior: &SignalPrior<T>,
    params: &ChannelParams<T>,
    rng: &mut R,
) -> Result<Mat<T>> {
    prior.validate()?;
    let (n, m) = (params.n, params.m);
    match prior {
        SignalPrior::GaussianIid => sample_gaussian_matrix(n, m, T::one() / T::count(n), rng),
        SignalPrior::SparseDiag { p } => {
            let p = p.as_f64();
            let sigma: Vec<T> = (0..n)
                .map(|_| if rng.random::<f64>() < p { T::zero() } else { T::one() })
                .collect();
            sample_haar_rotated(&sigma, n, m, rng)
        }
        SignalPrior::HaarSpectrum(sampler) => {
            let sigma = sampler.sample(n, rng)?;
            sample_haar_rotated(&sigma, n, m, rng)
        }
    }
}

/// `sqrt(lambda) S + Z` for a freshly drawn `Z`.
pub fn observe<T: Real, R: RngCore>(
    s: &Mat<T>,
    noise: &NoiseModel<T>,
    params: &ChannelParams<T>,
    rng: &mut R,
) -> Result<Observation<T>> {
    check_shape(s, params)?;
    let z = noise.sample(params.n, params.m, rng)?;
    Ok(Observation {
        y: combine(s, &z, params.snr),
        params: *params,
        truth: Some(s.clone()),
        seed: None,
    })
}

/// Like [`observe`], drawing the noise from stream 0 of `seed` and recording
/// the seed so the draw can be regenerated.
pub fn observe_seeded<T: Real>(
    s: &Mat<T>,
    noise: &NoiseModel<T>,
    params: &ChannelParams<T>,
    seed: u64,
) -> Result<Observation<T>> {
    let mut obs = observe(s, noise, params, &mut stream_rng(seed, 0))?;
    obs.seed = Some(seed);
    Ok(obs)
}

/// `sqrt(lambda) s + z`, elementwise.
pub fn combine<T: Real>(s: &Mat<T>, z: &Mat<T>, snr: T) -> Mat<T> {
    let a = snr.sqrt();
    Mat::from_fn(s.nrows(), s.ncols(), |i, j| a * s[(i, j)] + z[(i, j)])
}

fn check_shape<T: Real>(s: &Mat<T>, params: &ChannelParams<T>) -> Result<()> {
    if s.nrows() != params.n || s.ncols() != params.m {
        return Err(Error::mismatch(
            format!("{}x{}", params.n, params.m),
            format!("{}x{}", s.nrows(), s.ncols()),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frob2(a: &Mat<f64>) -> f64 {
        let mut acc = 0.0;
        for j in 0..a.ncols() {
            for i in 0..a.nrows() {
                acc += a[(i, j)] * a[(i, j)];
            }
        }
        acc
    }

    fn singular_values(a: &Mat<f64>) -> Vec<f64> {
        a.singular_values().unwrap()
    }

    #[test]
    fn params_reject_tall_and_bad_alpha() {
        assert!(ChannelParams::<f64>::new(5, 3, 1.0).is_err());
        assert!(ChannelParams::<f64>::new(0, 3, 1.0).is_err());
        assert!(ChannelParams::<f64>::with_alpha(2, 4, 1.0, 0.5 + 1e-9).is_err());
        assert!(ChannelParams::<f64>::new(2, 4, -1.0).is_err());
        let p = ChannelParams::<f64>::new(1, 4, 0.0).unwrap();
        assert_eq!(p.alpha, 0.25);
    }

    #[test]
    fn zero_variance_gives_zero_matrix() {
        let a = sample_gaussian_matrix(3, 3, 0.0f64, &mut stream_rng(1, 0)).unwrap();
        assert_eq!(frob2(&a), 0.0);
        assert!(sample_gaussian_matrix(0, 3, 1.0f64, &mut stream_rng(1, 0)).is_err());
        assert!(sample_gaussian_matrix(2, 3, -1.0f64, &mut stream_rng(1, 0)).is_err());
    }

    #[test]
    fn gaussian_sampling_is_seed_deterministic() {
        let a = sample_gaussian_matrix(2, 2, 0.5f64, &mut stream_rng(42, 0)).unwrap();
        let b = sample_gaussian_matrix(2, 2, 0.5f64, &mut stream_rng(42, 0)).unwrap();
        assert_eq!(a, b);
        let c = sample_gaussian_matrix(2, 2, 0.5f64, &mut stream_rng(42, 1)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn gaussian_frobenius_mean() {
        let mut rng = stream_rng(7, 0);
        let mean = (0..100)
            .map(|_| frob2(&sample_gaussian_matrix(200, 800, 1.0 / 200.0, &mut rng).unwrap()))
            .sum::<f64>()
            / 100.0;
        assert!((mean / 800.0 - 1.0).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn haar_rotation_preserves_spectrum() {
        let mut rng = stream_rng(3, 0);
        let sigma = vec![0.5, 3.0, 1.0, 2.0, 0.0];
        let a = sample_haar_rotated(&sigma, 5, 9, &mut rng).unwrap();
        let got = singular_values(&a);
        for (g, want) in got.iter().zip([3.0, 2.0, 1.0, 0.5, 0.0]) {
            assert!((g - want).abs() < 1e-10);
        }
        let z = sample_haar_rotated(&[0.0; 4], 4, 6, &mut rng).unwrap();
        assert_eq!(frob2(&z), 0.0);
        assert!(sample_haar_rotated(&[1.0; 3], 4, 6, &mut rng).is_err());
        assert!(sample_haar_rotated(&[-1.0, 1.0], 2, 6, &mut rng).is_err());
    }

    #[test]
    fn haar_columns_are_orthonormal() {
        let q = haar_orthonormal::<f64, _>(40, 40, &mut stream_rng(5, 0)).unwrap();
        let g = q.transpose() * &q;
        for i in 0..40 {
            for j in 0..40 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g[(i, j)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn haar_first_column_is_uniform_on_sphere() {
        let mut rng = stream_rng(11, 0);
        let mean = (0..1000)
            .map(|_| {
                let q = haar_orthonormal::<f64, _>(50, 50, &mut rng).unwrap();
                q[(0, 0)] * q[(0, 0)]
            })
            .sum::<f64>()
            / 1000.0;
        assert!((mean * 50.0 - 1.0).abs() < 0.1, "mean {mean}");
    }

    #[test]
    fn sparse_prior_extremes() {
        let params = ChannelParams::new(6, 8, 1.0f64).unwrap();
        let mut rng = stream_rng(1, 0);
        let zero = sample_signal(&SignalPrior::SparseDiag { p: 1.0 }, &params, &mut rng).unwrap();
        assert_eq!(frob2(&zero), 0.0);
        let ones = sample_signal(&SignalPrior::SparseDiag { p: 0.0 }, &params, &mut rng).unwrap();
        assert!(singular_values(&ones).iter().all(|s| (s - 1.0).abs() < 1e-10));
        assert!(sample_signal(&SignalPrior::SparseDiag { p: 1.5 }, &params, &mut rng).is_err());
    }

    #[test]
    fn gaussian_signal_second_moment() {
        let params = ChannelParams::new(500, 500, 1.0f64).unwrap();
        let s = sample_signal(&SignalPrior::GaussianIid, &params, &mut stream_rng(2, 0)).unwrap();
        let m2: f64 = singular_values(&s).iter().map(|x| x * x).sum::<f64>() / 500.0;
        assert!((m2 - 1.0).abs() < 0.05);
    }

    #[test]
    fn observe_limits() {
        let params = ChannelParams::new(4, 6, 0.0f64).unwrap();
        let s = sample_gaussian_matrix(4, 6, 1.0, &mut stream_rng(9, 1)).unwrap();
        let noise = NoiseModel::gaussian(params.alpha);
        let obs = observe_seeded(&s, &noise, &params, 77).unwrap();
        let z = obs.regenerate_noise(&noise).unwrap().unwrap();
        assert_eq!(obs.y, z);

        let params = params.with_snr(2.0).unwrap();
        let obs = observe(&s, &NoiseModel::zero(), &params, &mut stream_rng(1, 0)).unwrap();
        for j in 0..6 {
            for i in 0..4 {
                assert_eq!(obs.y[(i, j)], 2.0f64.sqrt() * s[(i, j)]);
            }
        }
        let wrong = Mat::<f64>::zeros(3, 6);
        assert!(observe(&wrong, &noise, &params, &mut stream_rng(1, 0)).is_err());
    }

    #[test]
    fn observed_energy_adds() {
        let params = ChannelParams::new(300, 300, 1.0f64).unwrap();
        let s = sample_signal(&SignalPrior::GaussianIid, &params, &mut stream_rng(4, 0)).unwrap();
        let noise = NoiseModel::gaussian(1.0);
        let mut rng = stream_rng(4, 1);
        let mean = (0..50)
            .map(|_| frob2(&observe(&s, &noise, &params, &mut rng).unwrap().y))
            .sum::<f64>()
            / 50.0;
        let want = frob2(&s) + 300.0;
        assert!((mean / want - 1.0).abs() < 0.05);
    }

    #[test]
    fn single_precision_sampling() {
        let params = ChannelParams::new(20, 30, 1.0f32).unwrap();
        let s = sample_signal(&SignalPrior::SparseDiag { p: 0.5f32 }, &params, &mut stream_rng(1, 0)).unwrap();
        let obs = observe(
            &s,
            &NoiseModel::haar_uniform(params.alpha),
            &params,
            &mut stream_rng(1, 1),
        )
        .unwrap();
        assert_eq!(obs.y.nrows(), 20);
    }
}
