//! Small-size invariant suites behind the `check` subcommand.

use std::f64::consts::PI;

use faer::Mat;
use rand::Rng;

use crate::ensembles::{haar_orthonormal, sample_gaussian_matrix, sample_haar_rotated, stream_rng, StreamRng};
use crate::freeprob::{MarchenkoPastur, MeasureRep, TransformContext};
use crate::mmse::{hilbert_identity_suite, mutual_information_curve};
use crate::rie::{
    denoise, gaussian_rie_shrink, general_rie_shrink, reconstruct, DenoiseOptions, ShrinkageMethod, ShrinkageResult,
    Shrinker,
};
use crate::spectral::{
    default_eta, estimate_density, eval_at_singular_values, svd_spectrum, uniform_grid, DensityEstimate,
    SingularSpectrum,
};
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Suite = fn(&mut StreamRng) -> Result<(bool, String)>;

const SUITES: [(&str, Suite); 9] = [
    ("gaussian_reduction", gaussian_reduction),
    ("rotation_equivariance", rotation_equivariance),
    ("mse_decomposition", mse_decomposition),
    ("plemelj_mass", plemelj_mass),
    ("h_inverse", h_inverse),
    ("hilbert_identities", hilbert_identities),
    ("i_mmse", i_mmse),
    ("spectrum_preservation", spectrum_preservation),
    ("density_symmetry", density_symmetry),
];

/// Runs every suite with its own stream of `seed`.
pub fn run_checks(seed: u64) -> Vec<CheckOutcome> {
    faer::set_global_parallelism(faer::Par::Seq);
    SUITES
        .iter()
        .enumerate()
        .map(|(k, &(name, suite))| {
            let mut rng = stream_rng(seed, k as u64);
            match suite(&mut rng) {
                Ok((passed, detail)) => CheckOutcome { name, passed, detail },
                Err(e) => CheckOutcome {
                    name,
                    passed: false,
                    detail: format!("error: {e}"),
                },
            }
        })
        .collect()
}

fn random_spectrum(rng: &mut StreamRng, n: usize, m: usize) -> Result<SingularSpectrum<f64>> {
    let values = (0..n).map(|_| 0.1 + 2.0 * rng.random::<f64>()).collect();
    SingularSpectrum::from_values(values, m)
}

fn gaussian_reduction(rng: &mut StreamRng) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let n = rng.random_range(20..60);
        let m = n + rng.random_range(0..60);
        let spectrum = random_spectrum(rng, n, m)?;
        let alpha = spectrum.alpha();
        let lambda = 0.2 + 4.0 * rng.random::<f64>();
        let est = eval_at_singular_values(&spectrum, default_eta(&spectrum.values), false)?;
        let a = gaussian_rie_shrink(&spectrum, lambda, alpha, &est)?;
        let b = general_rie_shrink(&spectrum, lambda, alpha, &MarchenkoPastur::new(alpha), &est)?;
        for (x, y) in a.xi.iter().zip(&b.xi) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok((worst < 1e-10, format!("max |diff| = {worst:.3e}")))
}

fn rotation_equivariance(rng: &mut StreamRng) -> Result<(bool, String)> {
    let (n, m) = (30, 50);
    let y = sample_gaussian_matrix::<f64, _>(n, m, 1.0 / n as f64, rng)?;
    let u = haar_orthonormal::<f64, _>(n, n, rng)?;
    let v = haar_orthonormal::<f64, _>(m, m, rng)?;
    let rotated = &(&u * &y) * v.transpose();
    let opts = DenoiseOptions::default();
    let a = denoise(&y, 1.0, &Shrinker::Gaussian, &opts)?.estimate;
    let b = denoise(&rotated, 1.0, &Shrinker::Gaussian, &opts)?.estimate;
    let diff = (&b - &(&(&u * &a) * v.transpose())).norm_l2() / a.norm_l2();
    Ok((diff < 1e-6, format!("relative difference = {diff:.3e}")))
}

fn mse_decomposition(rng: &mut StreamRng) -> Result<(bool, String)> {
    let (n, m) = (20, 35);
    let s = sample_gaussian_matrix::<f64, _>(n, m, 1.0 / n as f64, rng)?;
    let y = sample_gaussian_matrix::<f64, _>(n, m, 1.0 / n as f64, rng)?;
    let spectrum = svd_spectrum(&y, true)?;
    let (u, v) = spectrum.factors()?;
    let xi: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 0.5).collect();
    let shrink = ShrinkageResult {
        gamma: spectrum.values.clone(),
        xi: xi.clone(),
        edge_flags: vec![false; n],
        method: ShrinkageMethod::Identity,
    };
    let direct = (&reconstruct(&spectrum, &shrink)? - &s).norm_l2().powi(2) / n as f64;
    let overlaps = &(u.transpose() * &s) * v;
    let cross: f64 = (0..n).map(|i| xi[i] * overlaps[(i, i)]).sum();
    let expanded = (s.norm_l2().powi(2) + xi.iter().map(|x| x * x).sum::<f64>() - 2.0 * cross) / n as f64;
    let err = (direct - expanded).abs();
    Ok((err < 1e-8, format!("|direct - expanded| = {err:.3e}")))
}

fn plemelj_mass(rng: &mut StreamRng) -> Result<(bool, String)> {
    let y = sample_gaussian_matrix::<f64, _>(200, 300, 1.0 / 200.0, rng)?;
    let d = estimate_density(&svd_spectrum(&y, false)?, None, 1024)?;
    let mass = d.mass();
    Ok(((mass - 1.0).abs() < 0.03 && d.clipped == 0, format!("mass = {mass:.5}")))
}

fn h_inverse(rng: &mut StreamRng) -> Result<(bool, String)> {
    let spectrum = random_spectrum(rng, 80, 160)?;
    let ctx = TransformContext::new(0.5, MeasureRep::from_spectrum(&spectrum)?)?;
    let edge = ctx.measure.z_edge();
    let mut worst = 0.0f64;
    for frac in [0.05, 0.2, 0.5, 0.8, 0.95] {
        let z = frac * edge;
        let back = ctx.invert_h(ctx.h_transform(z)?)?;
        worst = worst.max((back - z).abs() / z);
    }
    Ok((worst < 1e-9, format!("max relative error = {worst:.3e}")))
}

fn hilbert_identities(_: &mut StreamRng) -> Result<(bool, String)> {
    let grid = uniform_grid(-2.2, 2.2, 1024);
    let mu = grid
        .iter()
        .map(|&x: &f64| (4.0 - x * x).max(0.0).sqrt() / (2.0 * PI))
        .collect();
    let hilbert = grid
        .iter()
        .map(|&x: &f64| {
            if x.abs() <= 2.0 {
                x / (2.0 * PI)
            } else {
                (x - x.signum() * (x * x - 4.0).sqrt()) / (2.0 * PI)
            }
        })
        .collect();
    let f = DensityEstimate {
        edge: vec![false; grid.len()],
        grid,
        mu,
        hilbert,
        symmetrized: true,
        clipped: 0,
    };
    let r = hilbert_identity_suite(&f)?;
    Ok((
        r.max_abs() < 1e-3,
        format!(
            "cubic {:.2e}, moment {:.2e}, inverse {:.2e}",
            r.cubic, r.moment, r.inverse
        ),
    ))
}

fn i_mmse(_: &mut StreamRng) -> Result<(bool, String)> {
    let samples: Vec<(f64, f64)> = (0..=300)
        .map(|k| k as f64 / 100.0)
        .map(|l| (l, 1.0 / (1.0 + l)))
        .collect();
    let mi = mutual_information_curve(&samples, 1.0)?;
    let worst = mi
        .iter()
        .map(|&(l, i)| (i - (1.0 + l).ln() / 2.0).abs())
        .fold(0.0, f64::max);
    Ok((worst < 1e-3, format!("max error = {worst:.3e}")))
}

fn spectrum_preservation(rng: &mut StreamRng) -> Result<(bool, String)> {
    let q = haar_orthonormal::<f64, _>(40, 25, rng)?;
    let gram = q.transpose() * &q;
    let ortho = (&gram - &Mat::<f64>::identity(25, 25)).norm_l2();
    let mut sigma: Vec<f64> = (0..25).map(|_| 3.0 * rng.random::<f64>()).collect();
    let a = sample_haar_rotated(&sigma, 25, 40, rng)?;
    sigma.sort_by(|x, y| y.total_cmp(x));
    let got = svd_spectrum(&a, false)?.values;
    let drift = got.iter().zip(&sigma).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    Ok((
        ortho < 1e-12 && drift < 1e-12,
        format!("orthogonality {ortho:.2e}, singular value drift {drift:.2e}"),
    ))
}

fn density_symmetry(rng: &mut StreamRng) -> Result<(bool, String)> {
    let spectrum = random_spectrum(rng, 100, 150)?;
    let d = estimate_density(&spectrum, None, 513)?;
    let n = d.grid.len();
    let worst = (0..n)
        .map(|i| {
            (d.mu[i] - d.mu[n - 1 - i])
                .abs()
                .max((d.hilbert[i] + d.hilbert[n - 1 - i]).abs())
        })
        .fold(0.0, f64::max);
    Ok((worst < 1e-12, format!("max asymmetry = {worst:.3e}")))
}
