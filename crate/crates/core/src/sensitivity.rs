//! Sensitivity of corrector functionals to the coefficient field: exponent
//! bookkeeping, adjoint representations of `dF/da` for functionals of
//! `grad phi` and `grad sigma`, finite-difference verification, and the
//! norm and decay studies built on them.

use rand::Rng;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::coeffmap::{frobenius, pullback_field, CoefficientMap};
use crate::corrector::{flux, solve_corrector, solve_sigma};
use crate::error::{LabError, Result};
use crate::fft::LatticeFft;
use crate::functionals::FunctionalSpec;
use crate::lattice::{
    backward_partial, div, grad, lq_norm, DyadicCube, Lattice, Region, ScalarField, TensorField,
    VectorField,
};
use crate::solver::{solve_divform, PoissonSolver, SolveOptions};
use crate::stats::{fit_line, LinearFit};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentSet {
    pub beta: f64,
    pub d: usize,
    /// `1/q = 1 - beta/(2d)`.
    pub q: f64,
    /// `1/p = 1/q - 1/2`.
    pub p: f64,
    /// `p/(p-1)`.
    pub dual_p: f64,
}

pub fn exponents(beta: f64, d: usize) -> Result<ExponentSet> {
    if d == 0 || !(beta > 0.0 && beta < d as f64) {
        return Err(LabError::invalid(format!("beta must lie in (0, {d}), got {beta}")));
    }
    let inv_q = 1.0 - beta / (2.0 * d as f64);
    let inv_p = inv_q - 0.5;
    let p = 1.0 / inv_p;
    Ok(ExponentSet {
        beta,
        d,
        q: 1.0 / inv_q,
        p,
        dual_p: p / (p - 1.0),
    })
}

/// `dF/da` as a tensor field, with the auxiliary solutions that produced it.
#[derive(Debug, Clone)]
pub struct MalliavinField {
    pub derivative: TensorField,
    /// `vbar` for `grad phi` functionals; `v` and `vtilde` for `grad sigma`.
    pub auxiliaries: Vec<ScalarField>,
    pub residual: f64,
}

impl MalliavinField {
    /// Directional derivative `<dF/da, da>` (Frobenius product, volume
    /// weighted).
    pub fn pair(&self, da: &TensorField) -> f64 {
        self.derivative.inner(da)
    }

    pub fn lq_norm(&self, q: f64) -> Result<f64> {
        lq_norm(&self.derivative, q, &Region::Whole)
    }

    /// Chain-rule companion `dF/d(atilde)`.
    pub fn pullback(&self, atilde: &TensorField, map: &dyn CoefficientMap) -> TensorField {
        pullback_field(atilde, &self.derivative, map)
    }
}

fn shifted_gradient(phi_i: &ScalarField, i: usize) -> VectorField {
    let mut g = grad(phi_i);
    g.comps[i].iter_mut().for_each(|v| *v += 1.0);
    g
}

/// Representation of `dF/da` for `F = <g, grad phi_i>`:
/// `grad vbar (x) (grad phi_i + e_i)` with `-div(a^T grad vbar) = div g`.
pub fn malliavin_phi(
    a: &TensorField,
    phi_i: &ScalarField,
    f: &FunctionalSpec,
    i: usize,
    opts: &SolveOptions,
) -> Result<MalliavinField> {
    let vbar = solve_divform(a, &f.weight, true, opts)?;
    let derivative = TensorField::outer(&grad(&vbar.solution), &shifted_gradient(phi_i, i));
    Ok(MalliavinField {
        derivative,
        auxiliaries: vec![vbar.solution],
        residual: vbar.residual,
    })
}

/// Representation of `dF/da` for `F = <g, grad sigma_ijk>`:
/// `(w + grad vtilde) (x) (grad phi_i + e_i)` where `-Lap v = div g`,
/// `w = (B_j v) e_k - (B_k v) e_j` and `-div(a^T grad vtilde) = div(a^T w)`.
pub fn malliavin_sigma(
    a: &TensorField,
    phi_i: &ScalarField,
    f: &FunctionalSpec,
    i: usize,
    j: usize,
    k: usize,
    opts: &SolveOptions,
) -> Result<MalliavinField> {
    let lat = a.lattice;
    let d = lat.dim();
    if j == k || j >= d || k >= d {
        return Err(LabError::invalid(format!("need distinct j, k < {d}, got ({j}, {k})")));
    }
    let v = PoissonSolver::new(lat).solve(&div(&f.weight));
    let mut w = VectorField::zeros(lat);
    w.comps[k] = backward_partial(&v, j).values;
    w.comps[j] = backward_partial(&v, k).scaled(-1.0).values;
    let at = a.transpose();
    let source = at.apply(&w);
    let vt = solve_divform(a, &source, true, opts)?;
    let mut left = grad(&vt.solution);
    for (l, c) in left.comps.iter_mut().enumerate() {
        c.iter_mut().zip(&w.comps[l]).for_each(|(x, y)| *x += y);
    }
    Ok(MalliavinField {
        derivative: TensorField::outer(&left, &shifted_gradient(phi_i, i)),
        auxiliaries: vec![v, vt.solution],
        residual: vt.residual,
    })
}

/// Which corrector component a verification functional reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    Phi { i: usize },
    Sigma { i: usize, j: usize, k: usize },
}

/// `F(a)` by a full nonlinear solve.
pub fn evaluate_functional(a: &TensorField, f: &FunctionalSpec, target: Target, opts: &SolveOptions) -> Result<f64> {
    match target {
        Target::Phi { i } => {
            let (phi, _, _) = solve_corrector(a, i, opts)?;
            Ok(f.apply(&grad(&phi)))
        }
        Target::Sigma { i, j, k } => {
            let (phi, _, _) = solve_corrector(a, i, opts)?;
            let q = flux(a, &phi, i);
            let (lo, hi, sign) = if j < k { (j, k, 1.0) } else { (k, j, -1.0) };
            let d = a.lattice.dim();
            let p = crate::corrector::skew_pairs(d)
                .iter()
                .position(|&pr| pr == (lo, hi))
                .ok_or_else(|| LabError::invalid("sigma indices out of range"))?;
            let sigma = solve_sigma(&q, &PoissonSolver::new(a.lattice));
            Ok(sign * f.apply(&grad(&sigma[p])))
        }
    }
}

pub fn representation(
    a: &TensorField,
    f: &FunctionalSpec,
    target: Target,
    opts: &SolveOptions,
) -> Result<MalliavinField> {
    let i = match target {
        Target::Phi { i } | Target::Sigma { i, .. } => i,
    };
    let (phi, _, _) = solve_corrector(a, i, opts)?;
    match target {
        Target::Phi { i } => malliavin_phi(a, &phi, f, i, opts),
        Target::Sigma { i, j, k } => malliavin_sigma(a, &phi, f, i, j, k, opts),
    }
}

/// Symmetric perturbation direction with i.i.d. uniform entries, scaled so
/// that the largest entry has modulus one.
pub fn random_direction(lat: Lattice, rng: &mut impl Rng) -> TensorField {
    let d = lat.dim();
    let mut t = TensorField::zeros(lat);
    for x in 0..lat.sites() {
        let mut m = vec![0.0; d * d];
        for j in 0..d {
            for l in j..d {
                let v: f64 = rng.random_range(-1.0..1.0);
                m[j * d + l] = v;
                m[l * d + j] = v;
            }
        }
        t.set_matrix(x, &m);
    }
    let max = t.comps.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut t = t.scaled(1.0 / max);
    t.symmetric = true;
    t
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdCheck {
    pub epsilon: f64,
    pub predicted: f64,
    pub finite_difference: f64,
    pub rel_error: f64,
}

/// Central difference `(F(a + eps da) - F(a - eps da)) / (2 eps)` against
/// the representation.
pub fn check_direction(
    a: &TensorField,
    f: &FunctionalSpec,
    target: Target,
    rep: &MalliavinField,
    da: &TensorField,
    epsilon: f64,
    opts: &SolveOptions,
) -> Result<FdCheck> {
    let plus = a.axpy(epsilon, da);
    let minus = a.axpy(-epsilon, da);
    let fd = (evaluate_functional(&plus, f, target, opts)? - evaluate_functional(&minus, f, target, opts)?)
        / (2.0 * epsilon);
    let predicted = rep.pair(da);
    let scale = predicted.abs().max(f64::MIN_POSITIVE);
    Ok(FdCheck {
        epsilon,
        predicted,
        finite_difference: fd,
        rel_error: (fd - predicted).abs() / scale,
    })
}

/// Central-difference checks of one representation along several random
/// directions, each at every step size in `epsilons`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentationCheck {
    pub target: Target,
    pub epsilons: Vec<f64>,
    /// `checks[t][e]`: direction `t`, step `epsilons[e]`.
    pub checks: Vec<Vec<FdCheck>>,
}

impl RepresentationCheck {
    pub fn max_rel_error(&self, e: usize) -> f64 {
        self.checks.iter().map(|c| c[e].rel_error).fold(0.0, f64::max)
    }
}

pub fn verify_representation(
    a: &TensorField,
    f: &FunctionalSpec,
    target: Target,
    trials: usize,
    epsilons: &[f64],
    rng: &mut impl Rng,
    opts: &SolveOptions,
) -> Result<RepresentationCheck> {
    let rep = representation(a, f, target, opts)?;
    let checks = (0..trials)
        .map(|_| {
            let da = random_direction(a.lattice, rng);
            epsilons
                .iter()
                .map(|&eps| check_direction(a, f, target, &rep, &da, eps, opts))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RepresentationCheck {
        target,
        epsilons: epsilons.to_vec(),
        checks,
    })
}

/// `|dF_r/da|_q` for the average of `d_1 phi_1` over the origin cube of each
/// radius, reusing one corrector solve.
pub fn sensitivity_norms(
    a: &TensorField,
    phi_0: &ScalarField,
    radii: &[f64],
    q: f64,
    opts: &SolveOptions,
) -> Result<Vec<f64>> {
    radii
        .iter()
        .map(|&r| {
            let f = crate::functionals::make_average_functional(a.lattice, r, 0)?;
            malliavin_phi(a, phi_0, &f, 0, opts)?.lq_norm(q)
        })
        .collect()
}

/// Regression of `log mean_s |dF_r/da|_q` on `log r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingStudy {
    pub radii: Vec<f64>,
    /// `norms[s][k]`: sample `s`, radius `radii[k]`.
    pub norms: Vec<Vec<f64>>,
    pub mean_norms: Vec<f64>,
    pub fit: LinearFit,
    pub predicted_slope: f64,
}

pub fn lq_scaling_fit(radii: &[f64], norms: Vec<Vec<f64>>, beta: f64) -> Result<ScalingStudy> {
    if norms.is_empty() {
        return Err(LabError::InsufficientData("no samples".into()));
    }
    let mean_norms: Vec<f64> = (0..radii.len())
        .map(|k| norms.iter().map(|s| s[k]).sum::<f64>() / norms.len() as f64)
        .collect();
    let x: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let y: Vec<f64> = mean_norms.iter().map(|v| v.ln()).collect();
    Ok(ScalingStudy {
        radii: radii.to_vec(),
        fit: fit_line(&x, &y)?,
        norms,
        mean_norms,
        predicted_slope: -beta / 2.0,
    })
}

/// CSV lines `beta,r,sample,lq_norm,seed` for a scaling study.
pub fn scaling_csv(study: &ScalingStudy, beta: f64, base_seed: u64) -> String {
    let mut out = String::from("beta,r,sample,lq_norm,seed\n");
    for (s, row) in study.norms.iter().enumerate() {
        for (r, v) in study.radii.iter().zip(row) {
            out.push_str(&format!("{beta},{r},{s},{v:e},{base_seed}\n"));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayProfile {
    /// `(2^n r, |grad v|_p over 2^n r <= |x| < 2^{n+1} r)`.
    pub annuli: Vec<(f64, f64)>,
    pub total: f64,
    pub fit: Option<LinearFit>,
    pub predicted_slope: f64,
}

/// Annulus norms of `grad v` around the origin for `n = 1, 2, ...` while the
/// outer cube fits in the box.
pub fn decay_profile(v: &ScalarField, r: f64, p: f64) -> Result<DecayProfile> {
    let lat = v.lattice;
    let g = grad(v);
    let d = lat.dim() as f64;
    let mut annuli = Vec::new();
    let mut scale = 2.0 * r;
    while 2.0 * scale <= lat.box_size() / 2.0 * (1.0 + 1e-12) {
        let region = Region::Annulus {
            inner: DyadicCube::at_origin(&lat, scale)?,
            outer: DyadicCube::at_origin(&lat, 2.0 * scale)?,
        };
        annuli.push((scale, lq_norm(&g, p, &region)?));
        scale *= 2.0;
    }
    let fit = if annuli.len() >= 2 {
        let x: Vec<f64> = annuli.iter().map(|(s, _)| (s / r).ln()).collect();
        let y: Vec<f64> = annuli.iter().map(|(_, n)| n.ln()).collect();
        fit_line(&x, &y).ok()
    } else {
        None
    };
    Ok(DecayProfile {
        total: lq_norm(&g, p, &Region::Whole)?,
        annuli,
        fit,
        predicted_slope: -d + d / p,
    })
}

/// `sum_c sum_{x,y} G_c(x) C(x - y) G_c(y) h^{2d}` for a tensor field whose
/// components are independent with covariance `C(x) = (1/N) sum_k P_k e^{ikx}`.
pub fn cov_quadratic_form(dfdatilde: &TensorField, power: &[f64]) -> f64 {
    let lat = dfdatilde.lattice;
    let fft = LatticeFft::new(lat);
    let n = lat.sites() as f64;
    let vol2 = lat.cell_volume().powi(2);
    dfdatilde
        .comps
        .iter()
        .map(|c| {
            let spec: Vec<Complex64> = fft.forward_real(c);
            spec.iter().zip(power).map(|(z, p)| p * z.norm_sqr()).sum::<f64>() / n * vol2
        })
        .sum()
}

/// Largest pointwise excess `|dF/d(atilde)| - |dF/da|` (Frobenius); at most
/// rounding for a 1-Lipschitz map.
pub fn domination_excess(dfdatilde: &TensorField, dfda: &TensorField) -> f64 {
    (0..dfda.lattice.sites())
        .map(|x| frobenius(&dfdatilde.matrix_at(x)) - frobenius(&dfda.matrix_at(x)))
        .fold(f64::NEG_INFINITY, f64::max)
}
