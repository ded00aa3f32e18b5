//! Monte Carlo campaigns over coefficient realizations: configuration,
//! per-sample records, and the statistics computed from record streams.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coeffmap::{apply_phi, CoefficientMapSpec, MapRegistry};
use crate::corrector::{CorrectorSet, SolveRecord};
use crate::error::{LabError, Result};
use crate::functionals::{estimate_rstar, mean_value_check, smallness_screen, HarmonicKind, HarmonicTrial};
use crate::gaussfield::{CovarianceSpec, FieldSeed, GaussianSynthesizer};
use crate::lattice::{cube_average, grad, lq_norm, DyadicCube, Lattice, Region, ScalarField, TensorField};
use crate::sensitivity::{exponents, sensitivity_norms};
use crate::solver::SolveOptions;
use crate::stats::{
    fit_line, fit_through_origin, isotonic_nonincreasing, mean_estimate, normal_quantile,
    sample_variance, wilson_interval, LinearFit, MeanEstimate, OriginFit,
};

pub const RECORD_VERSION: u32 = 1;

/// Campaign parameters. Parsed from flat `key = value` text; every key is
/// optional and falls back to the default below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    pub d: usize,
    pub n: usize,
    /// Box side `L`; defaults to `n` (unit spacing).
    pub box_size: Option<f64>,
    pub beta: f64,
    pub amplitude: f64,
    pub smoothing_scale: f64,
    pub map: String,
    pub lambda: f64,
    pub samples: usize,
    pub base_seed: u64,
    /// Averaging radii; dyadic and at most `L/8`.
    pub radii: Vec<f64>,
    /// Tail thresholds `M <= 1`, in units of `tail_scale`.
    pub thresholds: Vec<f64>,
    /// Unit for thresholds; defaults to the sample standard deviation of the
    /// observable at the smallest radius.
    pub tail_scale: Option<f64>,
    pub rel_tolerance: f64,
    pub max_iterations: Option<usize>,
    pub preconditioner: String,
    /// Constant in front of the iterated-log bound defining `r_*`.
    pub rstar_threshold: f64,
    /// Replace `rstar_threshold` in tail statistics by the campaign median
    /// of `D^2` at the smallest scanned radius.
    pub rstar_auto: bool,
    pub with_sigma: bool,
    /// Record `|dF_r/da|_q` per radius (one adjoint solve per radius).
    pub sensitivity: bool,
    /// Number of translated observation windows (centers spaced `n/windows`
    /// along the diagonal).
    pub windows: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            d: 2,
            n: 128,
            box_size: None,
            beta: 0.5,
            amplitude: 1.0,
            smoothing_scale: 1.0,
            map: "scalar-isotropic".into(),
            lambda: 0.5,
            samples: 200,
            base_seed: 1,
            radii: vec![2.0, 4.0, 8.0, 16.0],
            thresholds: vec![0.25, 0.5, 0.75, 1.0],
            tail_scale: None,
            rel_tolerance: 1e-10,
            max_iterations: None,
            preconditioner: "fft-laplace".into(),
            rstar_threshold: 1.0,
            rstar_auto: false,
            with_sigma: true,
            sensitivity: false,
            windows: 2,
        }
    }
}

impl EnsembleConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| LabError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn lattice(&self) -> Result<Lattice> {
        Lattice::new(self.d, self.n, self.box_size.unwrap_or(self.n as f64))
    }

    pub fn covariance(&self) -> CovarianceSpec {
        CovarianceSpec::new(self.beta, self.amplitude, self.smoothing_scale)
    }

    pub fn map_spec(&self) -> CoefficientMapSpec {
        CoefficientMapSpec {
            variant: self.map.clone(),
            lambda: self.lambda,
        }
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            rel_tolerance: self.rel_tolerance,
            max_iterations: self.max_iterations,
            preconditioner: self.preconditioner.clone(),
            lambda: self.lambda,
        }
    }

    /// Checks the lattice, field, map and solver keys only.
    pub fn validate_model(&self) -> Result<()> {
        let lat = self.lattice()?;
        self.covariance().validate(&lat)?;
        MapRegistry::with_builtins().build(&self.map, self.lambda, self.d)?;
        let opts = self.solve_options();
        opts.validate()?;
        crate::solver::PreconditionerRegistry::with_builtins().build(
            &opts.preconditioner,
            &TensorField::identity(Lattice::unit(1, 4)?),
            &opts,
        )?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_model()?;
        let lat = self.lattice()?;
        if self.samples == 0 {
            return Err(LabError::invalid("samples must be at least 1"));
        }
        if self.n < 16 {
            return Err(LabError::invalid("n must be at least 16 for the r_* scan"));
        }
        if self.radii.is_empty() {
            return Err(LabError::invalid("at least one radius is required"));
        }
        for &r in &self.radii {
            if r > lat.box_size() / 8.0 * (1.0 + 1e-12) || r < lat.spacing() {
                return Err(LabError::invalid(format!(
                    "radius {r} outside [h, L/8] = [{}, {}]",
                    lat.spacing(),
                    lat.box_size() / 8.0
                )));
            }
            DyadicCube::at_origin(&lat, r)?;
        }
        if self.radii.windows(2).any(|w| w[0] >= w[1]) {
            return Err(LabError::invalid("radii must be strictly increasing"));
        }
        if self.thresholds.iter().any(|&m| !(m > 0.0 && m <= 1.0)) {
            return Err(LabError::invalid("tail thresholds must lie in (0, 1]"));
        }
        if let Some(s) = self.tail_scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(LabError::invalid("tail_scale must be positive"));
            }
        }
        if !(self.rstar_threshold > 0.0) {
            return Err(LabError::invalid("rstar_threshold must be positive"));
        }
        if self.windows == 0 || self.n % self.windows != 0 {
            return Err(LabError::invalid("windows must be a positive divisor of n"));
        }
        Ok(())
    }

    /// Grid centers of the observation windows.
    pub fn window_centers(&self) -> Vec<Vec<i64>> {
        (0..self.windows)
            .map(|w| vec![(w * self.n / self.windows) as i64; self.d])
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleStatus {
    Ok,
    Failed,
}

/// One realization's results. Field order is the serialization order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub kind: String,
    pub index: u64,
    pub seed: FieldSeed,
    pub status: SampleStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub a_hom: Vec<f64>,
    pub solves: Vec<SolveRecord>,
    pub flux_potential_residuals: Vec<f64>,
    /// `grad_phi[w][k][i*d + j]`: average of `d_j phi_i` over the cube of
    /// radius `radii[k]` around window center `w`.
    pub grad_phi: Vec<Vec<Vec<f64>>>,
    /// `grad_sigma[w][k][(i*P + p)*d + l]`: average of `d_l sigma_i` for the
    /// `p`-th skew pair.
    pub grad_sigma: Vec<Vec<Vec<f64>>>,
    /// `D(r)` on origin cubes at the `r_*` scan radii.
    pub sublinearity: Vec<f64>,
    pub rstar: Option<f64>,
    pub rstar_censored: Option<bool>,
    /// `|grad phi_i|_p / |a e_i|_p` with the exponent `p` of `beta`.
    pub meyers: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensitivity: Option<Vec<f64>>,
}

impl SampleRecord {
    fn failed(seed: FieldSeed, err: &LabError) -> Self {
        SampleRecord {
            kind: "sample".into(),
            index: seed.sample_index,
            seed,
            status: SampleStatus::Failed,
            error: Some(err.to_string()),
            a_hom: Vec::new(),
            solves: Vec::new(),
            flux_potential_residuals: Vec::new(),
            grad_phi: Vec::new(),
            grad_sigma: Vec::new(),
            sublinearity: Vec::new(),
            rstar: None,
            rstar_censored: None,
            meyers: Vec::new(),
            sensitivity: None,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == SampleStatus::Ok
    }

    /// Average of `d_1 phi_1` at window `w`, radius index `k`.
    pub fn observable(&self, w: usize, k: usize) -> Option<f64> {
        self.grad_phi.get(w)?.get(k)?.first().copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: String,
    version: u32,
    config: EnsembleConfig,
}

/// Shared per-campaign state.
pub struct SampleContext {
    pub config: EnsembleConfig,
    pub lattice: Lattice,
    pub synthesizer: GaussianSynthesizer,
    pub map: Box<dyn crate::coeffmap::CoefficientMap>,
    pub opts: SolveOptions,
}

impl SampleContext {
    /// Needs only a valid model; campaign drivers validate the rest.
    pub fn new(config: &EnsembleConfig) -> Result<Self> {
        config.validate_model()?;
        let lattice = config.lattice()?;
        Ok(SampleContext {
            synthesizer: GaussianSynthesizer::new(&config.covariance(), lattice)?,
            map: config.map_spec().build(config.d)?,
            opts: config.solve_options(),
            config: config.clone(),
            lattice,
        })
    }

    pub fn coefficient(&self, seed: FieldSeed) -> (TensorField, TensorField) {
        let at = self.synthesizer.tensor(seed);
        let a = apply_phi(&at, self.map.as_ref());
        (at, a)
    }

    pub fn run_sample(&self, index: u64) -> SampleRecord {
        let seed = FieldSeed::new(self.config.base_seed, index);
        self.try_sample(seed).unwrap_or_else(|e| SampleRecord::failed(seed, &e))
    }

    fn try_sample(&self, seed: FieldSeed) -> Result<SampleRecord> {
        let cfg = &self.config;
        let lat = self.lattice;
        let d = cfg.d;
        let (_, a) = self.coefficient(seed);
        let set = CorrectorSet::assemble(&a, &self.opts, cfg.with_sigma)?;
        let grads_phi: Vec<_> = set.phi.iter().map(grad).collect();
        let grads_sigma: Vec<_> = set.sigma.iter().flatten().map(grad).collect();
        let mut grad_phi = Vec::new();
        let mut grad_sigma = Vec::new();
        for center in cfg.window_centers() {
            let mut per_r_phi = Vec::new();
            let mut per_r_sigma = Vec::new();
            for &r in &cfg.radii {
                let cube = DyadicCube::centered(&lat, r, &center)?;
                let mut v = Vec::with_capacity(d * d);
                for g in &grads_phi {
                    for c in &g.comps {
                        v.push(cube_average(&lat, c, &cube)?);
                    }
                }
                per_r_phi.push(v);
                let mut s = Vec::new();
                for g in &grads_sigma {
                    for c in &g.comps {
                        s.push(cube_average(&lat, c, &cube)?);
                    }
                }
                per_r_sigma.push(s);
            }
            grad_phi.push(per_r_phi);
            grad_sigma.push(per_r_sigma);
        }
        let comps: Vec<&ScalarField> = set.components();
        let rep = estimate_rstar(&comps, cfg.beta, cfg.rstar_threshold, &[0; 3])?;
        let sublinearity = rep.d_squared.iter().map(|v| v.sqrt()).collect();
        let expo = exponents(cfg.beta, d)?;
        let meyers = (0..d)
            .map(|i| {
                let num = lq_norm(&grads_phi[i], expo.p, &Region::Whole)?;
                let den = lq_norm(&a.column(i), expo.p, &Region::Whole)?;
                Ok(num / den)
            })
            .collect::<Result<Vec<_>>>()?;
        let sensitivity = if cfg.sensitivity {
            Some(sensitivity_norms(&a, &set.phi[0], &cfg.radii, expo.q, &self.opts)?)
        } else {
            None
        };
        let record = set.record();
        Ok(SampleRecord {
            kind: "sample".into(),
            index: seed.sample_index,
            seed,
            status: SampleStatus::Ok,
            error: None,
            a_hom: record.a_hom,
            solves: record.solves,
            flux_potential_residuals: record.flux_potential_residuals,
            grad_phi,
            grad_sigma,
            sublinearity,
            rstar: Some(rep.rstar),
            rstar_censored: Some(rep.censored),
            meyers,
            sensitivity,
        })
    }
}

/// Runs every sample on a pool of `workers` threads. Records come back in
/// sample-index order and do not depend on `workers`.
pub fn run_ensemble(config: &EnsembleConfig, workers: usize) -> Result<Vec<SampleRecord>> {
    config.validate()?;
    let ctx = SampleContext::new(config)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| LabError::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| {
        (0..config.samples as u64)
            .into_par_iter()
            .map(|i| ctx.run_sample(i))
            .collect()
    }))
}

pub fn records_to_jsonl(config: &EnsembleConfig, records: &[SampleRecord]) -> Result<String> {
    let header = Header {
        kind: "header".into(),
        version: RECORD_VERSION,
        config: config.clone(),
    };
    let mut out = serde_json::to_string(&header)?;
    out.push('\n');
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_records(path: &Path, config: &EnsembleConfig, records: &[SampleRecord]) -> Result<()> {
    fs::write(path, records_to_jsonl(config, records)?)?;
    Ok(())
}

/// Parses a record stream. Concatenated streams are accepted when their
/// headers agree.
pub fn parse_records(text: &str) -> Result<(EnsembleConfig, Vec<SampleRecord>)> {
    let mut config: Option<EnsembleConfig> = None;
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line)?;
        match value.get("kind").and_then(|k| k.as_str()) {
            Some("header") => {
                let h: Header = serde_json::from_value(value)?;
                match &config {
                    Some(c) if *c != h.config => {
                        return Err(LabError::Config(format!(
                            "line {}: header differs from the first header",
                            lineno + 1
                        )))
                    }
                    _ => config = Some(h.config),
                }
            }
            Some("sample") => records.push(serde_json::from_value(value)?),
            _ => {
                return Err(LabError::Config(format!("line {}: unknown record kind", lineno + 1)));
            }
        }
    }
    let config = config.ok_or_else(|| LabError::Config("record stream has no header".into()))?;
    records.sort_by_key(|r: &SampleRecord| r.index);
    Ok((config, records))
}

pub fn read_records(path: &Path) -> Result<(EnsembleConfig, Vec<SampleRecord>)> {
    parse_records(&fs::read_to_string(path)?)
}

/// `log Var(F_r)` against `log r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceDecay {
    pub radii: Vec<f64>,
    pub variances: Vec<f64>,
    pub samples: usize,
    pub fit: LinearFit,
    pub predicted_slope: f64,
}

pub fn fit_variance_decay(radii: &[f64], variances: &[f64], beta: f64, samples: usize) -> Result<VarianceDecay> {
    if radii.len() < 3 {
        return Err(LabError::InsufficientData(format!("need 3 radii, got {}", radii.len())));
    }
    if variances.iter().any(|v| !(*v > 0.0)) {
        return Err(LabError::InsufficientData("a variance is zero".into()));
    }
    let x: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let y: Vec<f64> = variances.iter().map(|v| v.ln()).collect();
    Ok(VarianceDecay {
        radii: radii.to_vec(),
        variances: variances.to_vec(),
        samples,
        fit: fit_line(&x, &y)?,
        predicted_slope: -beta,
    })
}

/// Variance of the average of `d_1 phi_1` per radius, averaged over the
/// observation windows.
pub fn variance_decay_fit(config: &EnsembleConfig, records: &[SampleRecord]) -> Result<VarianceDecay> {
    let ok: Vec<&SampleRecord> = records.iter().filter(|r| r.is_ok()).collect();
    if ok.len() < 50 {
        return Err(LabError::InsufficientData(format!(
            "variance fit needs 50 samples, got {}",
            ok.len()
        )));
    }
    let variances: Vec<f64> = (0..config.radii.len())
        .map(|k| {
            (0..config.windows)
                .map(|w| {
                    let v: Vec<f64> = ok.iter().filter_map(|r| r.observable(w, k)).collect();
                    sample_variance(&v)
                })
                .sum::<f64>()
                / config.windows as f64
        })
        .collect();
    fit_variance_decay(&config.radii, &variances, config.beta, ok.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub r: f64,
    pub m: f64,
    pub exceedances: usize,
    pub count: usize,
    pub p_hat: f64,
    pub interval: (f64, f64),
}

/// Empirical `P(|F| >= m)` with its score interval.
pub fn tail_estimate(values: &[f64], r: f64, m: f64) -> TailRow {
    let exceedances = values.iter().filter(|v| v.abs() >= m).count();
    let count = values.len();
    TailRow {
        r,
        m,
        exceedances,
        count,
        p_hat: if count == 0 { 0.0 } else { exceedances as f64 / count as f64 },
        interval: wilson_interval(exceedances, count),
    }
}

/// Fits of the tail table against `x = r^beta M^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    /// `-log P` against `x`.
    pub linear: LinearFit,
    /// `z^2` against `x` through the origin, `z` the two-sided Gaussian
    /// quantile of `P`.
    pub quantile: OriginFit,
    pub points: usize,
}

pub fn fit_tail(rows: &[TailRow], beta: f64) -> Result<TailFit> {
    let used: Vec<&TailRow> = rows.iter().filter(|r| r.p_hat > 0.0 && r.p_hat < 1.0).collect();
    let x: Vec<f64> = used.iter().map(|r| r.r.powf(beta) * r.m * r.m).collect();
    let neglog: Vec<f64> = used.iter().map(|r| -r.p_hat.ln()).collect();
    let z2: Vec<f64> = used
        .iter()
        .map(|r| normal_quantile(1.0 - r.p_hat / 2.0).powi(2))
        .collect();
    Ok(TailFit {
        linear: fit_line(&x, &neglog)?,
        quantile: fit_through_origin(&x, &z2)?,
        points: used.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub scale: f64,
    pub rows: Vec<TailRow>,
    pub fit: Option<TailFit>,
}

pub fn tail_report(config: &EnsembleConfig, records: &[SampleRecord]) -> Result<TailReport> {
    let ok: Vec<&SampleRecord> = records.iter().filter(|r| r.is_ok()).collect();
    if ok.is_empty() {
        return Err(LabError::InsufficientData("no successful samples".into()));
    }
    let scale = match config.tail_scale {
        Some(s) => s,
        None => {
            let v: Vec<f64> = ok.iter().filter_map(|r| r.observable(0, 0)).collect();
            sample_variance(&v).sqrt()
        }
    };
    let mut rows = Vec::new();
    for (k, &r) in config.radii.iter().enumerate() {
        let values: Vec<f64> = ok.iter().filter_map(|rec| rec.observable(0, k)).collect();
        for &m in &config.thresholds {
            rows.push(tail_estimate(&values, r, m * scale));
        }
    }
    let fit = if scale > 0.0 { fit_tail(&rows, config.beta).ok() } else { None };
    Ok(TailReport { scale, rows, fit })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RstarTail {
    /// Constant of the iterated-log bound the table was computed with.
    pub threshold: f64,
    pub r0: Vec<f64>,
    pub p_hat: Vec<f64>,
    /// Nonincreasing smoothing of `p_hat`.
    pub p_isotonic: Vec<f64>,
    pub intervals: Vec<(f64, f64)>,
    pub count: usize,
    pub censored: usize,
    /// `-log P(r_* > r0)` against `r0^beta`, over grid points with
    /// `0 < P < 1`.
    pub fit: Option<LinearFit>,
}

/// Survival table of `r_*` on a grid. Censored values count as exceeding
/// every grid point.
pub fn rstar_tail_from_values(values: &[(f64, bool)], grid: &[f64], beta: f64, threshold: f64) -> RstarTail {
    let count = values.len();
    let censored = values.iter().filter(|v| v.1).count();
    let exceed: Vec<usize> = grid
        .iter()
        .map(|&r0| values.iter().filter(|&&(r, c)| c || r > r0).count())
        .collect();
    let p_hat: Vec<f64> = exceed.iter().map(|&k| k as f64 / count.max(1) as f64).collect();
    let intervals = exceed.iter().map(|&k| wilson_interval(k, count)).collect();
    let p_isotonic = isotonic_nonincreasing(&p_hat, &vec![1.0; p_hat.len()]);
    let pts: Vec<(f64, f64)> = grid
        .iter()
        .zip(&p_hat)
        .filter(|(_, &p)| p > 0.0 && p < 1.0)
        .map(|(&r0, &p)| (r0.powf(beta), -p.ln()))
        .collect();
    let fit = if pts.len() >= 2 {
        let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        fit_line(&x, &y).ok()
    } else {
        None
    };
    RstarTail {
        threshold,
        r0: grid.to_vec(),
        p_hat,
        p_isotonic,
        intervals,
        count,
        censored,
        fit,
    }
}

/// Median of `D^2` at the smallest scanned radius.
pub fn calibrate_rstar_threshold(records: &[SampleRecord]) -> Option<f64> {
    let mut v: Vec<f64> = records
        .iter()
        .filter(|r| r.is_ok())
        .filter_map(|r| r.sublinearity.first().map(|d| d * d))
        .collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

pub fn rstar_tail(config: &EnsembleConfig, records: &[SampleRecord]) -> Result<RstarTail> {
    let grid = crate::functionals::rstar_radii(&config.lattice()?);
    let ok: Vec<&SampleRecord> = records.iter().filter(|r| r.is_ok()).collect();
    let threshold = if config.rstar_auto {
        calibrate_rstar_threshold(records)
            .ok_or_else(|| LabError::InsufficientData("no D profiles in records".into()))?
    } else {
        config.rstar_threshold
    };
    let values: Vec<(f64, bool)> = if config.rstar_auto {
        ok.iter()
            .filter(|r| r.sublinearity.len() == grid.len())
            .map(|r| {
                let d2: Vec<f64> = r.sublinearity.iter().map(|d| d * d).collect();
                crate::functionals::rstar_from_profile(&grid, &d2, config.beta, threshold)
            })
            .collect()
    } else {
        ok.iter()
            .filter_map(|r| Some((r.rstar?, r.rstar_censored.unwrap_or(false))))
            .collect()
    };
    if values.is_empty() {
        return Err(LabError::InsufficientData("no r_* values in records".into()));
    }
    Ok(rstar_tail_from_values(&values, &grid, config.beta, threshold))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowMean {
    pub window: usize,
    pub r: f64,
    pub estimate: MeanEstimate,
    pub interval99: (f64, f64),
    pub zero_outside: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowDifference {
    pub window: usize,
    pub r: f64,
    /// Paired difference against window 0.
    pub estimate: MeanEstimate,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    pub means: Vec<WindowMean>,
    pub differences: Vec<WindowDifference>,
    pub flagged: bool,
}

/// Per-window means of the averaged `d_1 phi_1` with 99% intervals, and
/// paired differences between windows.
pub fn stationarity_check(config: &EnsembleConfig, records: &[SampleRecord]) -> Result<StationarityReport> {
    let ok: Vec<&SampleRecord> = records.iter().filter(|r| r.is_ok()).collect();
    if ok.len() < 50 {
        return Err(LabError::InsufficientData(format!(
            "stationarity check needs 50 samples, got {}",
            ok.len()
        )));
    }
    if config.windows < 2 {
        return Err(LabError::InsufficientData("stationarity check needs 2 windows".into()));
    }
    let z99 = normal_quantile(0.995);
    let mut means = Vec::new();
    let mut differences = Vec::new();
    for (k, &r) in config.radii.iter().enumerate() {
        let base: Vec<f64> = ok.iter().filter_map(|rec| rec.observable(0, k)).collect();
        for w in 0..config.windows {
            let vals: Vec<f64> = ok.iter().filter_map(|rec| rec.observable(w, k)).collect();
            let est = mean_estimate(&vals);
            let iv = est.interval(0.99);
            means.push(WindowMean {
                window: w,
                r,
                estimate: est,
                interval99: iv,
                zero_outside: iv.0 > 0.0 || iv.1 < 0.0,
            });
            if w > 0 {
                let diff: Vec<f64> = vals.iter().zip(&base).map(|(a, b)| a - b).collect();
                let est = mean_estimate(&diff);
                differences.push(WindowDifference {
                    window: w,
                    r,
                    significant: est.mean.abs() > z99 * est.std_error,
                    estimate: est,
                });
            }
        }
    }
    let flagged = means.iter().any(|m| m.zero_outside) || differences.iter().any(|d| d.significant);
    Ok(StationarityReport {
        means,
        differences,
        flagged,
    })
}

/// Variance of the origin-cube average of `d_1 phi_1` per radius under the
/// linear response of a scalar coefficient to its Gaussian input, up to one
/// common factor. Its log-log slope is the finite-box reference for
/// [`variance_decay_fit`].
pub fn linearized_variance_profile(synth: &GaussianSynthesizer, radii: &[f64]) -> Result<Vec<f64>> {
    let lat = *synth.lattice();
    let fft = synth.fft();
    let n = lat.n();
    let d = lat.dim();
    let z: Vec<rustfft::num_complex::Complex64> = (0..n)
        .map(|k| rustfft::num_complex::Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / n as f64) - 1.0)
        .collect();
    let multiplier: Vec<f64> = (0..lat.sites())
        .map(|idx| {
            let c = lat.coords(idx);
            let total: f64 = (0..d).map(|a| z[c[a]].norm_sqr()).sum();
            if total == 0.0 {
                0.0
            } else {
                (z[c[0]].norm_sqr() / total).powi(2)
            }
        })
        .collect();
    radii
        .iter()
        .map(|&r| {
            let cube = DyadicCube::at_origin(&lat, r)?;
            let sites = cube.sites(&lat);
            let mut w = vec![0.0; lat.sites()];
            for &x in &sites {
                w[x] = 1.0 / sites.len() as f64;
            }
            let wh = fft.forward_real(&w);
            Ok(wh
                .iter()
                .zip(synth.power())
                .zip(&multiplier)
                .map(|((c, p), m)| p * m * c.norm_sqr())
                .sum::<f64>()
                / lat.sites() as f64)
        })
        .collect()
}

/// Ensemble mean of the per-sample homogenized coefficients.
pub fn ensemble_a_hom(records: &[SampleRecord]) -> Option<Vec<MeanEstimate>> {
    let ok: Vec<&SampleRecord> = records.iter().filter(|r| r.is_ok()).collect();
    let len = ok.first()?.a_hom.len();
    Some(
        (0..len)
            .map(|e| mean_estimate(&ok.iter().map(|r| r.a_hom[e]).collect::<Vec<_>>()))
            .collect(),
    )
}

/// Mean-value diagnostics over realizations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanValueSample {
    pub index: u64,
    pub passes_screen: bool,
    pub max_sublinearity: f64,
    pub trials: Vec<HarmonicTrial>,
    pub caccioppoli: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanValueSummary {
    pub r: f64,
    pub big_r: f64,
    pub screen_threshold: f64,
    pub samples: Vec<MeanValueSample>,
    pub pass_rate: f64,
    /// Largest ratio over screened samples and all their harmonics.
    pub max_ratio_passing: Option<f64>,
    pub max_ratio_all: f64,
    /// Ratio quantiles (0.5, 0.9, max) per harmonic kind.
    pub quantiles: BTreeMap<String, (f64, f64, f64)>,
}

pub fn run_mean_value_campaign(
    config: &EnsembleConfig,
    r: f64,
    big_r: f64,
    random_trials: usize,
    screen_threshold: f64,
    workers: usize,
) -> Result<MeanValueSummary> {
    if config.samples == 0 {
        return Err(LabError::invalid("samples must be at least 1"));
    }
    let ctx = SampleContext::new(config)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| LabError::Config(format!("cannot start worker pool: {e}")))?;
    let samples: Vec<MeanValueSample> = pool.install(|| {
        (0..config.samples as u64)
            .into_par_iter()
            .map(|i| {
                let seed = FieldSeed::new(config.base_seed, i);
                let (_, a) = ctx.coefficient(seed);
                let set = CorrectorSet::assemble(&a, &ctx.opts, true)?;
                let comps = set.components();
                let lat = ctx.lattice;
                let mut max_d: f64 = 0.0;
                let mut rho = r;
                while rho <= lat.box_size() / 4.0 * (1.0 + 1e-12) {
                    max_d = max_d.max(crate::functionals::sublinearity(&comps, &DyadicCube::at_origin(&lat, rho)?));
                    rho *= 2.0;
                }
                // Boundary data uses a stream disjoint from the coefficient's.
                let trial_seed = FieldSeed::new(config.base_seed ^ 0x9E37_79B9_7F4A_7C15, i);
                let trials = mean_value_check(&a, Some(&set), r, big_r, random_trials, trial_seed, &ctx.opts)?;
                Ok(MeanValueSample {
                    index: i,
                    passes_screen: smallness_screen(&comps, r, screen_threshold)?,
                    max_sublinearity: max_d,
                    caccioppoli: crate::functionals::caccioppoli_ratio(&comps, big_r / 2.0)?,
                    trials,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let passing: Vec<&MeanValueSample> = samples.iter().filter(|s| s.passes_screen).collect();
    let ratios = |set: &[&MeanValueSample]| -> Vec<f64> {
        set.iter()
            .flat_map(|s| s.trials.iter().map(|t| t.mean_value_ratio))
            .collect()
    };
    let all: Vec<&MeanValueSample> = samples.iter().collect();
    let max_of = |v: Vec<f64>| v.into_iter().fold(f64::NEG_INFINITY, f64::max);
    let mut quantiles = BTreeMap::new();
    for kind in [HarmonicKind::RandomBoundary, HarmonicKind::Corrected] {
        let mut v: Vec<f64> = samples
            .iter()
            .flat_map(|s| s.trials.iter().filter(|t| t.kind == kind).map(|t| t.mean_value_ratio))
            .collect();
        if v.is_empty() {
            continue;
        }
        v.sort_by(|a, b| a.total_cmp(b));
        let q = |p: f64| v[((v.len() - 1) as f64 * p).round() as usize];
        let name = serde_json::to_value(kind)?.as_str().unwrap_or("unknown").to_string();
        quantiles.insert(name, (q(0.5), q(0.9), q(1.0)));
    }
    Ok(MeanValueSummary {
        r,
        big_r,
        screen_threshold,
        pass_rate: passing.len() as f64 / samples.len().max(1) as f64,
        max_ratio_passing: if passing.is_empty() { None } else { Some(max_of(ratios(&passing))) },
        max_ratio_all: max_of(ratios(&all)),
        samples,
        quantiles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn small_config() -> EnsembleConfig {
        EnsembleConfig {
            n: 32,
            samples: 3,
            radii: vec![1.0, 2.0, 4.0],
            ..EnsembleConfig::default()
        }
    }

    #[test]
    fn config_parsing_and_validation() {
        let cfg = EnsembleConfig::from_toml_str(
            "# campaign\nd = 2\nn = 64\nbeta = 0.25\nradii = [2, 4, 8]\nmap = \"eigenvalue-clamp\"\n",
        )
        .unwrap();
        assert_eq!(cfg.n, 64);
        assert_eq!(cfg.radii, vec![2.0, 4.0, 8.0]);
        assert_eq!(cfg.samples, EnsembleConfig::default().samples);
        cfg.validate().unwrap();
        assert!(matches!(EnsembleConfig::from_toml_str("bogus = 1"), Err(LabError::Config(_))));
        for bad in [
            EnsembleConfig { samples: 0, ..small_config() },
            EnsembleConfig { radii: vec![8.0], ..small_config() },
            EnsembleConfig { radii: vec![3.0], ..small_config() },
            EnsembleConfig { thresholds: vec![1.5], ..small_config() },
            EnsembleConfig { beta: 2.0, ..small_config() },
            EnsembleConfig { map: "cubic".into(), ..small_config() },
            EnsembleConfig { preconditioner: "amg".into(), ..small_config() },
            EnsembleConfig { windows: 3, ..small_config() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn identity_ensemble_records_zeros() {
        let cfg = EnsembleConfig {
            amplitude: 0.0,
            samples: 1,
            ..small_config()
        };
        let recs = run_ensemble(&cfg, 1).unwrap();
        assert_eq!(recs.len(), 1);
        let r = &recs[0];
        assert!(r.is_ok());
        assert!(r.grad_phi.iter().flatten().flatten().all(|v| *v == 0.0));
        assert!(r.grad_sigma.iter().flatten().flatten().all(|v| *v == 0.0));
        assert_eq!(r.rstar, Some(4.0));
        assert_eq!(r.rstar_censored, Some(false));
    }

    #[test]
    fn records_are_deterministic_and_roundtrip() {
        let cfg = small_config();
        let a = records_to_jsonl(&cfg, &run_ensemble(&cfg, 1).unwrap()).unwrap();
        let b = records_to_jsonl(&cfg, &run_ensemble(&cfg, 2).unwrap()).unwrap();
        assert_eq!(a, b);
        let (c2, recs) = parse_records(&a).unwrap();
        assert_eq!(c2, cfg);
        assert_eq!(records_to_jsonl(&c2, &recs).unwrap(), a);
        // Concatenation of identical headers is accepted.
        let doubled = format!("{a}{}", a.lines().next().unwrap());
        assert_eq!(parse_records(&doubled).unwrap().1.len(), 3);
        let other = records_to_jsonl(&EnsembleConfig { beta: 0.3, ..cfg }, &[]).unwrap();
        assert!(parse_records(&format!("{a}{other}")).is_err());
    }

    #[test]
    fn exact_power_law_variances() {
        let radii = [2.0, 4.0, 8.0, 16.0];
        let var: Vec<f64> = radii.iter().map(|r: &f64| r.powf(-0.5)).collect();
        let fit = fit_variance_decay(&radii, &var, 0.5, 100).unwrap();
        assert!((fit.fit.slope + 0.5).abs() < 1e-12);
        assert!(fit_variance_decay(&radii[..2], &var[..2], 0.5, 100).is_err());
    }

    #[test]
    fn tail_estimates() {
        let vals = vec![0.1, -0.2, 0.3];
        let row = tail_estimate(&vals, 4.0, 0.5);
        assert_eq!(row.p_hat, 0.0);
        assert_eq!(row.interval, (0.0, 1.0));
        let vals: Vec<f64> = (0..100).map(|i| i as f64 / 1000.0).collect();
        let row = tail_estimate(&vals, 4.0, 0.5);
        assert_eq!((row.p_hat, row.interval.1), (0.0, 0.03));
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let g: Vec<f64> = (0..20000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let row = tail_estimate(&g, 1.0, 1.0);
        assert!(row.interval.0 <= 0.3173 && 0.3173 <= row.interval.1, "{row:?}");
        let ms = [0.25, 0.5, 1.0, 2.0];
        let ps: Vec<f64> = ms.iter().map(|&m| tail_estimate(&g, 1.0, m).p_hat).collect();
        assert!(ps.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn tail_fit_recovers_gaussian_slope() {
        // F_r ~ N(0, c r^-beta): z^2 = r^beta M^2 / c.
        let beta = 0.5;
        let c = 0.04;
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let mut rows = Vec::new();
        for r in [8.0f64, 16.0, 32.0] {
            let sd = (c * r.powf(-beta)).sqrt();
            let vals: Vec<f64> = (0..100_000)
                .map(|_| sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                .collect();
            for m in [0.25, 0.5, 0.75, 1.0] {
                rows.push(tail_estimate(&vals, r, m * c.sqrt() * 8f64.powf(-beta / 2.0)));
            }
        }
        let fit = fit_tail(&rows, beta).unwrap();
        assert!((fit.quantile.slope * c - 1.0).abs() < 0.05, "{}", fit.quantile.slope * c);
        assert!(fit.linear.r_squared >= 0.9);
    }

    #[test]
    fn rstar_tail_synthetic_and_degenerate() {
        let beta = 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let exp = rand_distr::Exp1;
        // P(r > r0) = exp(-r0^beta)  <=>  r = E^(1/beta) with E ~ Exp(1).
        let vals: Vec<(f64, bool)> = (0..100_000)
            .map(|_| {
                let e: f64 = exp.sample(&mut rng);
                (e.powf(1.0 / beta), false)
            })
            .collect();
        let t = rstar_tail_from_values(&vals, &[1.0, 2.0, 4.0, 8.0, 16.0], beta, 1.0);
        let fit = t.fit.unwrap();
        assert!((fit.slope - 1.0).abs() < 0.05, "{}", fit.slope);
        let minimal: Vec<(f64, bool)> = vec![(4.0, false); 10];
        let t = rstar_tail_from_values(&minimal, &[4.0, 8.0, 16.0], beta, 1.0);
        assert!(t.p_hat.iter().all(|p| *p == 0.0));
        // Censoring never lowers the estimate.
        let mixed = vec![(4.0, false), (32.0, true), (8.0, false)];
        let uncensored: Vec<(f64, bool)> = mixed.iter().filter(|v| !v.1).cloned().collect();
        let t1 = rstar_tail_from_values(&mixed, &[4.0, 8.0, 32.0], beta, 1.0);
        let t2 = rstar_tail_from_values(&uncensored, &[4.0, 8.0, 32.0], beta, 1.0);
        assert!(t1.p_hat.iter().zip(&t2.p_hat).all(|(a, b)| a >= b));
        assert_eq!(t1.p_hat[2], 1.0 / 3.0);
    }

    #[test]
    fn stationarity_of_identity_ensemble() {
        let cfg = EnsembleConfig {
            amplitude: 0.0,
            samples: 50,
            ..small_config()
        };
        let recs = run_ensemble(&cfg, 1).unwrap();
        let rep = stationarity_check(&cfg, &recs).unwrap();
        assert!(rep.means.iter().all(|m| m.estimate.mean == 0.0));
        assert!(!rep.flagged);
        assert!(stationarity_check(&cfg, &recs[..10]).is_err());
    }

    #[test]
    fn failed_samples_are_recorded() {
        let cfg = EnsembleConfig {
            max_iterations: Some(1),
            rel_tolerance: 1e-12,
            samples: 2,
            ..small_config()
        };
        let recs = run_ensemble(&cfg, 1).unwrap();
        assert_eq!(recs.len(), 2);
        assert!(recs.iter().all(|r| r.status == SampleStatus::Failed && r.error.is_some()));
    }

    #[test]
    fn mean_value_campaign_runs() {
        let cfg = EnsembleConfig {
            n: 32,
            samples: 2,
            radii: vec![2.0],
            ..EnsembleConfig::default()
        };
        let s = run_mean_value_campaign(&cfg, 2.0, 8.0, 2, 10.0, 1).unwrap();
        assert_eq!(s.samples.len(), 2);
        assert!(s.samples.iter().all(|m| m.trials.len() == 4));
        assert!(s.max_ratio_all >= 1.0);
        assert!((0.0..=1.0).contains(&s.pass_rate));
    }
    #[test]
    fn linearized_profile_for_white_noise() {
        // Nearly flat spectrum: averages of a projected white field decay like r^-d.
        let lat = Lattice::unit(2, 128).unwrap();
        let synth = GaussianSynthesizer::new(&CovarianceSpec::new(1.99, 1.0, 1.0), lat).unwrap();
        let v = linearized_variance_profile(&synth, &[2.0, 4.0, 8.0]).unwrap();
        let slope = (v[2] / v[0]).ln() / 4f64.ln();
        assert!((slope + 2.0).abs() < 0.15, "{slope}");
        let synth = GaussianSynthesizer::new(&CovarianceSpec::new(0.5, 1.0, 1.0), lat).unwrap();
        let v = linearized_variance_profile(&synth, &[2.0, 4.0, 8.0, 16.0]).unwrap();
        assert!(v.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn auto_threshold_recomputes_rstar() {
        let cfg = EnsembleConfig {
            samples: 8,
            rstar_auto: true,
            ..small_config()
        };
        let recs = run_ensemble(&cfg, 1).unwrap();
        let t = rstar_tail(&cfg, &recs).unwrap();
        assert_eq!(Some(t.threshold), calibrate_rstar_threshold(&recs));
        // At the median threshold about half the samples exceed the smallest radius.
        assert!(t.p_hat[0] > 0.0 && t.p_hat[0] <= 0.5 + 1e-12, "{:?}", t.p_hat);
        let fixed = rstar_tail(&EnsembleConfig { rstar_auto: false, ..cfg }, &recs).unwrap();
        assert_eq!(fixed.threshold, 1.0);
    }
}
