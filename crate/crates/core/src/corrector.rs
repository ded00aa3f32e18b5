//! Extended corrector `(phi, sigma)`, fluxes and the homogenized coefficient
//! of one realization on the torus.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::lattice::{
    backward_partial, forward_partial, grad, ScalarField, TensorField, VectorField,
};
use crate::solver::{solve_divform, PoissonSolver, SolveOptions};

/// `phi_i` with `-div(a(e_i + grad phi_i)) = 0` and zero mean.
pub fn solve_corrector(a: &TensorField, i: usize, opts: &SolveOptions) -> Result<(ScalarField, f64, usize)> {
    let d = a.lattice.dim();
    if i >= d {
        return Err(LabError::invalid(format!("direction {i} out of range for d = {d}")));
    }
    let s = solve_divform(a, &a.column(i), false, opts)?;
    Ok((s.solution, s.residual, s.iterations))
}

/// `q_i = a (e_i + grad phi_i)`.
pub fn flux(a: &TensorField, phi_i: &ScalarField, i: usize) -> VectorField {
    let mut g = grad(phi_i);
    g.comps[i].iter_mut().for_each(|v| *v += 1.0);
    a.apply(&g)
}

/// Matrix (row-major) whose column `i` is the box mean of `q_i`.
pub fn homogenized_coefficient(fluxes: &[VectorField]) -> Vec<f64> {
    let d = fluxes.len();
    let mut m = vec![0.0; d * d];
    for (i, q) in fluxes.iter().enumerate() {
        for (j, v) in q.means().into_iter().enumerate() {
            m[j * d + i] = v;
        }
    }
    m
}

/// Ordered pairs `j < k` indexing the independent components of `sigma_i`.
pub fn skew_pairs(d: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for j in 0..d {
        for k in (j + 1)..d {
            out.push((j, k));
        }
    }
    out
}

/// `sigma_ijk` for `j < k`, solving `-Lap sigma_ijk = D_j q_ik - D_k q_ij`.
pub fn solve_sigma(q_i: &VectorField, poisson: &PoissonSolver) -> Vec<ScalarField> {
    skew_pairs(q_i.lattice.dim())
        .into_iter()
        .map(|(j, k)| {
            let qk = ScalarField {
                lattice: q_i.lattice,
                values: q_i.comps[k].clone(),
            };
            let qj = ScalarField {
                lattice: q_i.lattice,
                values: q_i.comps[j].clone(),
            };
            let mut rhs = forward_partial(&qk, j);
            let dk = forward_partial(&qj, k);
            rhs.values.iter_mut().zip(&dk.values).for_each(|(r, s)| *r -= s);
            poisson.solve(&rhs)
        })
        .collect()
}

/// Divergence of the skew family, `(div sigma_i)_j = sum_k B_k sigma_ijk`.
pub fn sigma_divergence(sigma_i: &[ScalarField], d: usize) -> Vec<Vec<f64>> {
    let lat = sigma_i.first().map(|s| s.lattice);
    let Some(lat) = lat else {
        return vec![vec![0.0]; d];
    };
    let mut out = vec![lat.zeros(); d];
    for (s, (j, k)) in sigma_i.iter().zip(skew_pairs(d)) {
        // sigma_ijk contributes B_k to row j and -B_j to row k.
        let bk = backward_partial(s, k);
        let bj = backward_partial(s, j);
        out[j].iter_mut().zip(&bk.values).for_each(|(o, v)| *o += v);
        out[k].iter_mut().zip(&bj.values).for_each(|(o, v)| *o -= v);
    }
    out
}

/// `|div sigma_i - (q_i - mean q_i)|_2 / |q_i - mean q_i|_2`. The denominator
/// is floored at `1e-4 |q_i|_2` so that fluxes which are constant up to
/// solver noise do not divide noise by noise.
pub fn check_flux_potential(sigma_i: &[ScalarField], q_i: &VectorField) -> f64 {
    let d = q_i.lattice.dim();
    let means = q_i.means();
    let divs = if d == 1 {
        vec![vec![0.0; q_i.lattice.sites()]]
    } else {
        sigma_divergence(sigma_i, d)
    };
    let mut num = 0.0;
    let mut den = 0.0;
    let mut total = 0.0;
    for j in 0..d {
        for (x, &q) in q_i.comps[j].iter().enumerate() {
            let c = q - means[j];
            num += (divs[j][x] - c).powi(2);
            den += c * c;
            total += q * q;
        }
    }
    let den = den.max(1e-8 * total);
    if den <= f64::MIN_POSITIVE {
        0.0
    } else {
        (num / den).sqrt()
    }
}

/// Solver outcome for one equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveRecord {
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct CorrectorSet {
    pub phi: Vec<ScalarField>,
    /// `sigma[i][p]` is `sigma_ijk` for the `p`-th pair of [`skew_pairs`].
    pub sigma: Vec<Vec<ScalarField>>,
    pub flux: Vec<VectorField>,
    pub a_hom: Vec<f64>,
    pub records: Vec<SolveRecord>,
}

impl CorrectorSet {
    /// Correctors in every direction; `with_sigma` adds the flux potential.
    pub fn assemble(a: &TensorField, opts: &SolveOptions, with_sigma: bool) -> Result<Self> {
        let d = a.lattice.dim();
        let mut phi = Vec::with_capacity(d);
        let mut flux_fields = Vec::with_capacity(d);
        let mut records = Vec::with_capacity(d);
        for i in 0..d {
            let (p, residual, iterations) = solve_corrector(a, i, opts)?;
            flux_fields.push(flux(a, &p, i));
            phi.push(p);
            records.push(SolveRecord { residual, iterations });
        }
        let sigma = if with_sigma && d > 1 {
            let poisson = PoissonSolver::new(a.lattice);
            flux_fields.iter().map(|q| solve_sigma(q, &poisson)).collect()
        } else {
            vec![Vec::new(); d]
        };
        Ok(CorrectorSet {
            a_hom: homogenized_coefficient(&flux_fields),
            phi,
            sigma,
            flux: flux_fields,
            records,
        })
    }

    pub fn dim(&self) -> usize {
        self.phi.len()
    }

    pub fn has_sigma(&self) -> bool {
        self.dim() == 1 || self.sigma.iter().all(|s| !s.is_empty())
    }

    /// `sigma_ijk` for any `j, k`, using skew symmetry; zero when `j == k`.
    pub fn sigma_component(&self, i: usize, j: usize, k: usize) -> ScalarField {
        let lat = self.phi[i].lattice;
        if j == k || self.sigma[i].is_empty() {
            return ScalarField::zeros(lat);
        }
        let (lo, hi, sign) = if j < k { (j, k, 1.0) } else { (k, j, -1.0) };
        let p = skew_pairs(self.dim())
            .iter()
            .position(|&pair| pair == (lo, hi))
            .expect("pair in range");
        self.sigma[i][p].scaled(sign)
    }

    pub fn flux_potential_residuals(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|i| check_flux_potential(&self.sigma[i], &self.flux[i]))
            .collect()
    }

    /// Scalar components of `(phi, sigma)`: all `phi_i`, then the independent
    /// `sigma_ijk`.
    pub fn components(&self) -> Vec<&ScalarField> {
        self.phi.iter().chain(self.sigma.iter().flatten()).collect()
    }

    pub fn record(&self) -> CorrectorRecord {
        CorrectorRecord {
            d: self.dim(),
            a_hom: self.a_hom.clone(),
            solves: self.records.clone(),
            flux_potential_residuals: if self.has_sigma() {
                self.flux_potential_residuals()
            } else {
                Vec::new()
            },
        }
    }
}

/// JSON summary of a [`CorrectorSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectorRecord {
    pub d: usize,
    pub a_hom: Vec<f64>,
    pub solves: Vec<SolveRecord>,
    pub flux_potential_residuals: Vec<f64>,
}

/// Matrix harmonic mean `(mean a^{-1})^{-1}` and arithmetic mean of a field.
pub fn harmonic_arithmetic_means(a: &TensorField) -> (Vec<f64>, Vec<f64>) {
    use nalgebra::DMatrix;
    let d = a.lattice.dim();
    let sites = a.lattice.sites() as f64;
    let mut inv_sum = DMatrix::<f64>::zeros(d, d);
    let mut sum = DMatrix::<f64>::zeros(d, d);
    for x in 0..a.lattice.sites() {
        let m = DMatrix::from_row_slice(d, d, &a.matrix_at(x));
        inv_sum += m.clone().try_inverse().expect("elliptic coefficient");
        sum += m;
    }
    let hm = (inv_sum / sites).try_inverse().expect("elliptic coefficient");
    let am = sum / sites;
    let to_vec = |m: DMatrix<f64>| (0..d).flat_map(|j| (0..d).map(move |l| (j, l))).map(|(j, l)| m[(j, l)]).collect();
    (to_vec(hm), to_vec(am))
}
