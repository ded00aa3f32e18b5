//! Stationary centered Gaussian tensor fields with power-law correlations,
//! synthesized spectrally on the torus.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::fft::LatticeFft;
use crate::lattice::{Lattice, TensorField};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSpec {
    /// Decay exponent, `0 < beta < d`.
    pub beta: f64,
    /// Covariance normalization; `amplitude <= 1` keeps `|C(x)| <= |x|^-beta`.
    pub amplitude: f64,
    /// Length `l0 >= h` setting the infrared regularization
    /// `kappa = 2 pi / (L l0)` of the spectral density.
    pub smoothing_scale: f64,
}

impl CovarianceSpec {
    pub fn new(beta: f64, amplitude: f64, smoothing_scale: f64) -> Self {
        CovarianceSpec {
            beta,
            amplitude,
            smoothing_scale,
        }
    }

    pub fn validate(&self, lat: &Lattice) -> Result<()> {
        let d = lat.dim() as f64;
        if !(self.beta > 0.0 && self.beta < d) {
            return Err(LabError::invalid(format!(
                "beta must lie in (0, {d}), got {}",
                self.beta
            )));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(LabError::invalid("amplitude must be finite and >= 0"));
        }
        if !(self.smoothing_scale >= lat.spacing() * (1.0 - 1e-12)) {
            return Err(LabError::invalid(format!(
                "smoothing scale {} is below the lattice spacing {}",
                self.smoothing_scale,
                lat.spacing()
            )));
        }
        Ok(())
    }

    /// Unnormalized density `(|xi|^2 + kappa^2)^((beta - d)/2)` per Fourier
    /// mode, zero at the zero mode.
    fn raw_density(&self, fft: &LatticeFft) -> Vec<f64> {
        let lat = fft.lattice();
        let d = lat.dim();
        let base = 2.0 * std::f64::consts::PI / lat.box_size();
        let kappa2 = (base / self.smoothing_scale).powi(2);
        let expo = 0.5 * (self.beta - d as f64);
        (0..lat.sites())
            .map(|idx| {
                if idx == 0 {
                    return 0.0;
                }
                let k = fft.wave_numbers(idx);
                let xi2: f64 = (0..d).map(|a| (base * k[a] as f64).powi(2)).sum();
                (xi2 + kappa2).powf(expo)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSeed {
    pub base_seed: u64,
    pub sample_index: u64,
}

impl FieldSeed {
    pub fn new(base_seed: u64, sample_index: u64) -> Self {
        FieldSeed {
            base_seed,
            sample_index,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.base_seed);
        rng.set_stream(self.sample_index);
        rng
    }
}

/// Precomputed spectral filter for one `(spec, lattice)` pair; reusable
/// across realizations.
#[derive(Debug, Clone)]
pub struct GaussianSynthesizer {
    spec: CovarianceSpec,
    fft: LatticeFft,
    /// Normalized spectral weights `P_k`, so that the covariance is
    /// `C(x) = (1/N) sum_k P_k e^{i k x}`.
    power: Vec<f64>,
    filter: Vec<f64>,
}

impl GaussianSynthesizer {
    pub fn new(spec: &CovarianceSpec, lat: Lattice) -> Result<Self> {
        spec.validate(&lat)?;
        let fft = LatticeFft::new(lat);
        let raw = spec.raw_density(&fft);
        let unit_cov = covariance_from_power(&fft, &raw);
        // Largest ratio |C(x)| |x|^beta over |x| >= 1.
        let mut worst: f64 = 0.0;
        for (idx, c) in unit_cov.iter().enumerate() {
            let dist = lat.position(idx).iter().map(|x| x * x).sum::<f64>().sqrt();
            if dist >= 1.0 {
                worst = worst.max(c.abs() * dist.powf(spec.beta));
            }
        }
        let scale = if worst > 0.0 { spec.amplitude / worst } else { 0.0 };
        let power: Vec<f64> = raw.iter().map(|p| p * scale).collect();
        let filter = power.iter().map(|p| p.sqrt()).collect();
        Ok(GaussianSynthesizer {
            spec: spec.clone(),
            fft,
            power,
            filter,
        })
    }

    pub fn spec(&self) -> &CovarianceSpec {
        &self.spec
    }

    pub fn lattice(&self) -> &Lattice {
        self.fft.lattice()
    }

    pub fn power(&self) -> &[f64] {
        &self.power
    }

    pub fn fft(&self) -> &LatticeFft {
        &self.fft
    }

    /// Exact covariance function of the synthesized field on the torus.
    pub fn covariance(&self) -> Vec<f64> {
        covariance_from_power(&self.fft, &self.power)
    }

    /// One scalar realization: white noise filtered in Fourier space.
    pub fn scalar(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let lat = self.lattice();
        let noise: Vec<f64> = (0..lat.sites()).map(|_| StandardNormal.sample(rng)).collect();
        let mut buf = self.fft.forward_real(&noise);
        for (b, f) in buf.iter_mut().zip(&self.filter) {
            *b *= *f;
        }
        self.fft.inverse(&mut buf);
        buf.iter().map(|c| c.re).collect()
    }

    /// Tensor realization with `d*d` independent components.
    pub fn tensor(&self, seed: FieldSeed) -> TensorField {
        let lat = *self.lattice();
        let d = lat.dim();
        let mut rng = seed.rng();
        let comps = (0..d * d).map(|_| self.scalar(&mut rng)).collect();
        TensorField {
            lattice: lat,
            comps,
            symmetric: d == 1,
        }
    }
}

fn covariance_from_power(fft: &LatticeFft, power: &[f64]) -> Vec<f64> {
    let mut buf: Vec<Complex64> = power.iter().map(|&p| Complex64::new(p, 0.0)).collect();
    fft.inverse(&mut buf);
    buf.iter().map(|c| c.re).collect()
}

pub fn synthesize_gaussian(spec: &CovarianceSpec, lat: Lattice, seed: FieldSeed) -> Result<TensorField> {
    Ok(GaussianSynthesizer::new(spec, lat)?.tensor(seed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialProfile {
    /// Lags in physical units: 0 and dyadic multiples of h up to L/2.
    pub lags: Vec<f64>,
    pub values: Vec<f64>,
    /// Standard error across samples (NaN for a single sample).
    pub std_errors: Vec<f64>,
}

impl RadialProfile {
    pub fn at(&self, lag: f64) -> Option<f64> {
        self.lags
            .iter()
            .position(|l| (l - lag).abs() < 1e-9)
            .map(|i| self.values[i])
    }
}

/// Empirical covariance of one tensor component at dyadic axis lags,
/// pooled over positions, axis directions and samples.
pub fn estimate_covariance(samples: &[TensorField], component: usize) -> Result<RadialProfile> {
    let first = samples
        .first()
        .ok_or_else(|| LabError::InsufficientData("no samples".into()))?;
    let lat = first.lattice;
    let d = lat.dim();
    if component >= d * d {
        return Err(LabError::invalid("component out of range"));
    }
    let sites = lat.sites();
    let mean: f64 = samples
        .iter()
        .map(|s| s.comps[component].iter().sum::<f64>())
        .sum::<f64>()
        / (sites * samples.len()) as f64;

    let mut lag_sites = vec![0usize];
    let mut l = 1;
    while l <= lat.n() / 2 {
        lag_sites.push(l);
        l *= 2;
    }
    let mut values = Vec::with_capacity(lag_sites.len());
    let mut std_errors = Vec::with_capacity(lag_sites.len());
    for &lag in &lag_sites {
        let per_sample: Vec<f64> = samples
            .iter()
            .map(|s| {
                let v = &s.comps[component];
                let mut acc = 0.0;
                for axis in 0..d {
                    for idx in 0..sites {
                        let j = lat.shift(idx, axis, lag as i64);
                        acc += (v[j] - mean) * (v[idx] - mean);
                    }
                }
                acc / (sites * d) as f64
            })
            .collect();
        let m = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
        let se = if per_sample.len() > 1 {
            let var = per_sample.iter().map(|x| (x - m).powi(2)).sum::<f64>()
                / (per_sample.len() - 1) as f64;
            (var / per_sample.len() as f64).sqrt()
        } else {
            f64::NAN
        };
        values.push(m);
        std_errors.push(se);
    }
    Ok(RadialProfile {
        lags: lag_sites.iter().map(|&l| l as f64 * lat.spacing()).collect(),
        values,
        std_errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_beta_out_of_range() {
        let lat = Lattice::unit(2, 16).unwrap();
        for beta in [0.0, 2.0, -0.1, 3.0] {
            let spec = CovarianceSpec::new(beta, 1.0, 1.0);
            assert!(synthesize_gaussian(&spec, lat, FieldSeed::new(1, 0)).is_err());
        }
    }

    #[test]
    fn zero_amplitude_gives_zero_field() {
        let lat = Lattice::unit(2, 16).unwrap();
        let f = synthesize_gaussian(&CovarianceSpec::new(0.5, 0.0, 1.0), lat, FieldSeed::new(1, 0))
            .unwrap();
        assert!(f.comps.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn deterministic_and_decorrelated() {
        let lat = Lattice::unit(2, 64).unwrap();
        let syn = GaussianSynthesizer::new(&CovarianceSpec::new(1.5, 1.0, 1.0), lat).unwrap();
        let a = syn.tensor(FieldSeed::new(42, 3));
        let b = syn.tensor(FieldSeed::new(42, 3));
        assert_eq!(a, b);
        let c = syn.tensor(FieldSeed::new(42, 4));
        let (x, y) = (&a.comps[0], &c.comps[0]);
        let sx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let sy = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let rho = x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>() / (sx * sy);
        // Null standard deviation of the correlation of two independent
        // stationary fields; reduces to 1/sqrt(N) for white noise.
        let cov = syn.covariance();
        let n_sites = lat.sites() as f64;
        let null_sd = cov.iter().map(|c| c * c).sum::<f64>().sqrt() / (cov[0] * n_sites.sqrt());
        assert!(rho.abs() < 3.0 * null_sd, "rho = {rho}, null sd = {null_sd}");
    }

    #[test]
    fn realization_mean_is_zero() {
        let lat = Lattice::unit(2, 32).unwrap();
        let f = synthesize_gaussian(&CovarianceSpec::new(0.5, 1.0, 1.0), lat, FieldSeed::new(9, 1))
            .unwrap();
        for c in &f.comps {
            let m = c.iter().sum::<f64>() / c.len() as f64;
            assert!(m.abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_covariance_obeys_decay_bound() {
        let lat = Lattice::unit(2, 64).unwrap();
        for beta in [0.25, 0.5, 1.0, 1.75] {
            let syn = GaussianSynthesizer::new(&CovarianceSpec::new(beta, 1.0, 1.0), lat).unwrap();
            let cov = syn.covariance();
            let mut worst: f64 = 0.0;
            for (idx, c) in cov.iter().enumerate() {
                let dist = lat.position(idx).iter().map(|x| x * x).sum::<f64>().sqrt();
                if dist >= 1.0 {
                    worst = worst.max(c.abs() * dist.powf(beta));
                }
            }
            assert!((worst - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn lag_zero_is_empirical_variance() {
        let lat = Lattice::unit(2, 16).unwrap();
        let syn = GaussianSynthesizer::new(&CovarianceSpec::new(0.5, 1.0, 1.0), lat).unwrap();
        let samples: Vec<_> = (0..3).map(|i| syn.tensor(FieldSeed::new(5, i))).collect();
        let prof = estimate_covariance(&samples, 0).unwrap();
        let all: Vec<f64> = samples.iter().flat_map(|s| s.comps[0].clone()).collect();
        let m = all.iter().sum::<f64>() / all.len() as f64;
        let var = all.iter().map(|v| (v - m).powi(2)).sum::<f64>() / all.len() as f64;
        assert!((prof.values[0] - var).abs() < 1e-12);
    }

    #[test]
    fn white_noise_has_no_correlation_at_positive_lags() {
        let lat = Lattice::unit(2, 32).unwrap();
        let samples: Vec<_> = (0..20)
            .map(|i| {
                let mut rng = FieldSeed::new(77, i).rng();
                let comps = (0..4)
                    .map(|_| (0..lat.sites()).map(|_| StandardNormal.sample(&mut rng)).collect())
                    .collect();
                TensorField {
                    lattice: lat,
                    comps,
                    symmetric: false,
                }
            })
            .collect();
        let prof = estimate_covariance(&samples, 0).unwrap();
        for (i, lag) in prof.lags.iter().enumerate() {
            if *lag >= 2.0 {
                assert!(prof.values[i].abs() <= 3.0 * prof.std_errors[i], "lag {lag}");
            }
        }
    }
}
