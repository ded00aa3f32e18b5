//! Averaging functionals, dyadic multiscale decompositions, sublinearity
//! of the extended corrector, the minimal radius `r_*`, and regularity
//! diagnostics for a-harmonic functions.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corrector::CorrectorSet;
use crate::error::{LabError, Result};
use crate::gaussfield::FieldSeed;
use crate::lattice::{
    cube_average, grad, lq_norm, DyadicCube, Lattice, Region, ScalarField, SiteField,
    TensorField, VectorField,
};
use crate::solver::{solve_dirichlet, SolveOptions, SubBox};

/// A linear functional `F h = sum_x g(x) . h(x) h^d` with weight supported
/// in a cube.
#[derive(Debug, Clone)]
pub struct FunctionalSpec {
    pub weight: VectorField,
    pub radius: f64,
    pub cube: DyadicCube,
}

impl FunctionalSpec {
    pub fn apply(&self, h: &VectorField) -> f64 {
        self.weight.inner(h)
    }

    pub fn weight_norm(&self, p: f64) -> Result<f64> {
        lq_norm(&self.weight, p, &Region::Whole)
    }

    /// `|g|_p r^{(p-1)d/p}`; at most one for a normalized functional.
    pub fn certificate(&self, p: f64) -> Result<f64> {
        let d = self.weight.lattice.dim() as f64;
        Ok(self.weight_norm(p)? * self.radius.powf((p - 1.0) * d / p))
    }

    /// `|F h|` divided by `(avg_cube |h|^s)^{1/s}` with `s = 2d/(d+beta)`.
    pub fn boundedness_ratio(&self, h: &VectorField, beta: f64) -> f64 {
        let d = h.lattice.dim() as f64;
        let s = 2.0 * d / (d + beta);
        let bound = crate::lattice::lq_average(h, s, &Region::Cube(self.cube.clone())).powf(1.0 / s);
        let v = self.apply(h).abs();
        if bound == 0.0 {
            if v == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            v / bound
        }
    }
}

/// Average of component `component` over the cube of radius `r` centered at
/// the origin.
pub fn make_average_functional(lat: Lattice, r: f64, component: usize) -> Result<FunctionalSpec> {
    make_average_functional_at(lat, r, component, &[0; 3])
}

pub fn make_average_functional_at(
    lat: Lattice,
    r: f64,
    component: usize,
    center: &[i64],
) -> Result<FunctionalSpec> {
    if component >= lat.dim() {
        return Err(LabError::invalid(format!("component {component} out of range")));
    }
    if !(r >= lat.spacing() && r <= lat.box_size() / 2.0) {
        return Err(LabError::invalid(format!(
            "radius {r} outside [h, L/2] = [{}, {}]",
            lat.spacing(),
            lat.box_size() / 2.0
        )));
    }
    let cube = DyadicCube::centered(&lat, r, center)?;
    let sites = cube.sites(&lat);
    let w = 1.0 / (sites.len() as f64 * lat.cell_volume());
    let mut weight = VectorField::zeros(lat);
    for &x in &sites {
        weight.comps[component][x] = w;
    }
    Ok(FunctionalSpec { weight, radius: r, cube })
}

/// `F_{Q,n} zeta = (avg_{Q_n} zeta - avg_Q zeta) / r` for the `2^d` children
/// `Q_n` of a parent cube `Q` of radius `r`.
#[derive(Debug, Clone)]
pub struct SubcubeFunctionals {
    pub parent: DyadicCube,
    pub children: Vec<DyadicCube>,
}

pub fn make_subcube_functionals(lat: &Lattice, parent: &DyadicCube) -> Result<SubcubeFunctionals> {
    if parent.side < 2 || parent.side > lat.n() {
        return Err(LabError::invalid("parent cube must have at least two sites per side"));
    }
    Ok(SubcubeFunctionals {
        parent: parent.clone(),
        children: parent.children(),
    })
}

impl SubcubeFunctionals {
    pub fn values(&self, zeta: &ScalarField) -> Result<Vec<f64>> {
        let lat = zeta.lattice;
        let parent = cube_average(&lat, &zeta.values, &self.parent)?;
        self.children
            .iter()
            .map(|c| Ok((cube_average(&lat, &zeta.values, c)? - parent) / self.parent.radius))
            .collect()
    }

    /// Both sides of the Poincare splitting on the parent cube:
    /// `avg_Q |zeta - avg_Q zeta|^2 <= max_n (r F_n)^2 + C r^2 avg_Q |grad zeta|^2`,
    /// where `C` is the discrete Neumann constant of a child cube.
    pub fn poincare_sides(&self, zeta: &ScalarField) -> Result<PoincareSides> {
        let lat = zeta.lattice;
        let r = self.parent.radius;
        let sites = self.parent.sites(&lat);
        let mean = cube_average(&lat, &zeta.values, &self.parent)?;
        let lhs = sites.iter().map(|&x| (zeta.values[x] - mean).powi(2)).sum::<f64>() / sites.len() as f64;
        let coarse = self
            .values(zeta)?
            .into_iter()
            .map(|f| (r * f).powi(2))
            .fold(0.0, f64::max);
        let g = grad(zeta);
        let grad_avg = crate::lattice::lq_average(&g, 2.0, &Region::Cube(self.parent.clone()));
        let m = self.parent.side as f64 / 2.0;
        let constant = 1.0 / (4.0 * m * m * (std::f64::consts::PI / (2.0 * m)).sin().powi(2));
        Ok(PoincareSides {
            lhs,
            coarse,
            gradient: constant * r * r * grad_avg,
            constant,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoincareSides {
    pub lhs: f64,
    pub coarse: f64,
    pub gradient: f64,
    pub constant: f64,
}

/// All dyadic sub-cubes of `window` with the given radius.
pub fn subdivide(window: &DyadicCube, r: f64) -> Result<Vec<DyadicCube>> {
    if r > window.radius * (1.0 + 1e-12) {
        return Err(LabError::invalid(format!("level {r} exceeds window radius {}", window.radius)));
    }
    let mut cubes = vec![window.clone()];
    while cubes[0].radius > r * (1.0 + 1e-12) {
        if cubes[0].side < 2 {
            return Err(LabError::invalid(format!("level {r} is below the lattice spacing")));
        }
        cubes = cubes.iter().flat_map(|c| c.children()).collect();
    }
    if (cubes[0].radius - r).abs() > 1e-9 * r {
        return Err(LabError::invalid(format!("level {r} is not dyadic relative to the window")));
    }
    Ok(cubes)
}

/// Replaces values on each level-`r` sub-cube of `window` by their average;
/// values outside the window are kept.
pub fn dyadic_projection(field: &ScalarField, r: f64, window: &DyadicCube) -> Result<ScalarField> {
    let lat = field.lattice;
    let mut out = field.clone();
    for cube in subdivide(window, r)? {
        let sites = cube.sites(&lat);
        let avg = sites.iter().map(|&x| field.values[x]).sum::<f64>() / sites.len() as f64;
        for x in sites {
            out.values[x] = avg;
        }
    }
    Ok(out)
}

/// Orthogonal decomposition of the centered window energy of a family of
/// scalar fields across dyadic levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiscaleEnergy {
    /// `avg_W |f - P_{r1} f|^2`.
    pub fine: f64,
    /// `(r, avg_W |P_{r/2} f - P_r f|^2)` for `r = 2 r1, ..., R`.
    pub levels: Vec<(f64, f64)>,
    /// `avg_W |f - avg_W f|^2`.
    pub total: f64,
}

impl MultiscaleEnergy {
    pub fn sum(&self) -> f64 {
        self.fine + self.levels.iter().map(|(_, e)| e).sum::<f64>()
    }
}

pub fn multiscale_energy(fields: &[&ScalarField], r1: f64, window: &DyadicCube) -> Result<MultiscaleEnergy> {
    let Some(first) = fields.first() else {
        return Err(LabError::invalid("no fields given"));
    };
    let lat = first.lattice;
    let sites = window.sites(&lat);
    let count = sites.len() as f64;
    let mut radii = vec![r1];
    while radii.last().copied().unwrap_or(r1) < window.radius * (1.0 - 1e-12) {
        radii.push(radii.last().copied().unwrap_or(r1) * 2.0);
    }
    let mut fine = 0.0;
    let mut levels = vec![0.0; radii.len() - 1];
    let mut total = 0.0;
    for f in fields {
        let projections = radii
            .iter()
            .map(|&r| dyadic_projection(f, r, window))
            .collect::<Result<Vec<_>>>()?;
        let mean = sites.iter().map(|&x| f.values[x]).sum::<f64>() / count;
        for &x in &sites {
            fine += (f.values[x] - projections[0].values[x]).powi(2);
            total += (f.values[x] - mean).powi(2);
            for (l, e) in levels.iter_mut().enumerate() {
                *e += (projections[l].values[x] - projections[l + 1].values[x]).powi(2);
            }
        }
    }
    Ok(MultiscaleEnergy {
        fine: fine / count,
        levels: radii[1..].iter().copied().zip(levels.into_iter().map(|e| e / count)).collect(),
        total: total / count,
    })
}

/// `(1/r) (avg_cube sum_c |f_c - avg f_c|^2)^{1/2}` for the cube's radius `r`.
pub fn sublinearity(fields: &[&ScalarField], cube: &DyadicCube) -> f64 {
    let Some(first) = fields.first() else {
        return 0.0;
    };
    let sites = cube.sites(&first.lattice);
    let count = sites.len() as f64;
    let mut acc = 0.0;
    for f in fields {
        let mean = sites.iter().map(|&x| f.values[x]).sum::<f64>() / count;
        acc += sites.iter().map(|&x| (f.values[x] - mean).powi(2)).sum::<f64>() / count;
    }
    acc.sqrt() / cube.radius
}

/// `f(z) = ln(e + ln z)`.
pub fn iterated_log(z: f64) -> f64 {
    (std::f64::consts::E + z.ln()).ln()
}

/// Dyadic radii `4h, 8h, ..., L/4` scanned by the `r_*` estimator.
pub fn rstar_radii(lat: &Lattice) -> Vec<f64> {
    let mut out = Vec::new();
    let mut r = 4.0 * lat.spacing();
    while r <= lat.box_size() / 4.0 * (1.0 + 1e-12) {
        out.push(r);
        r *= 2.0;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RstarReport {
    pub rstar: f64,
    /// True when no admissible radius satisfied the bound; `rstar` is then
    /// the largest scanned radius.
    pub censored: bool,
    pub radii: Vec<f64>,
    /// `D^2(r)` per radius.
    pub d_squared: Vec<f64>,
    /// `f(r / r_*)` per radius `r >= r_*`.
    pub f_values: Vec<(f64, f64)>,
}

/// Whether `D^2(r) <= kappa (r0/r)^beta f(r/r0)` at one pair.
pub fn rstar_bound_holds(d2: f64, r0: f64, r: f64, beta: f64, threshold: f64) -> bool {
    d2 <= threshold * (r0 / r).powf(beta) * iterated_log(r / r0)
}

/// Minimal dyadic `r0` for which the iterated-log bound holds at every
/// scanned `r >= r0`, given `D^2` per radius.
pub fn rstar_from_profile(radii: &[f64], d_squared: &[f64], beta: f64, threshold: f64) -> (f64, bool) {
    for (i, &r0) in radii.iter().enumerate() {
        let ok = radii[i..]
            .iter()
            .zip(&d_squared[i..])
            .all(|(&r, &d2)| rstar_bound_holds(d2, r0, r, beta, threshold));
        if ok {
            return (r0, false);
        }
    }
    (radii.last().copied().unwrap_or(0.0), true)
}

/// `r_*` of the family `(phi, sigma)` on cubes centered at `center`.
pub fn estimate_rstar(
    fields: &[&ScalarField],
    beta: f64,
    threshold: f64,
    center: &[i64],
) -> Result<RstarReport> {
    let Some(first) = fields.first() else {
        return Err(LabError::invalid("no fields given"));
    };
    let lat = first.lattice;
    if !(beta > 0.0 && beta < lat.dim() as f64) {
        return Err(LabError::invalid(format!("beta {beta} outside (0, d)")));
    }
    let radii = rstar_radii(&lat);
    if radii.is_empty() {
        return Err(LabError::invalid("lattice too small for the r_* scan (need n >= 16)"));
    }
    let d_squared = radii
        .iter()
        .map(|&r| Ok(sublinearity(fields, &DyadicCube::centered(&lat, r, center)?).powi(2)))
        .collect::<Result<Vec<_>>>()?;
    let (rstar, censored) = rstar_from_profile(&radii, &d_squared, beta, threshold);
    let f_values = radii
        .iter()
        .filter(|&&r| r >= rstar)
        .map(|&r| (r, iterated_log(r / rstar)))
        .collect();
    Ok(RstarReport {
        rstar,
        censored,
        radii,
        d_squared,
        f_values,
    })
}

/// `max_{rho in [r, R] dyadic} avg_rho |grad u|^2 / avg_R |grad u|^2` for a
/// gradient field on origin-centered cubes.
pub fn mean_value_ratio(grad_u: &VectorField, r: f64, big_r: f64) -> Result<f64> {
    let lat = grad_u.lattice;
    let outer = crate::lattice::lq_average(grad_u, 2.0, &Region::Cube(DyadicCube::at_origin(&lat, big_r)?));
    if outer == 0.0 {
        return Ok(0.0);
    }
    let mut worst: f64 = 0.0;
    let mut rho = r;
    while rho <= big_r * (1.0 + 1e-12) {
        let inner = crate::lattice::lq_average(grad_u, 2.0, &Region::Cube(DyadicCube::at_origin(&lat, rho)?));
        worst = worst.max(inner / outer);
        rho *= 2.0;
    }
    Ok(worst)
}

/// `(avg_{R/2} |grad u|^2)^{1/2} / avg_R |grad u|`.
pub fn reverse_holder_ratio(grad_u: &VectorField, big_r: f64) -> Result<f64> {
    let lat = grad_u.lattice;
    let l2 = crate::lattice::lq_average(grad_u, 2.0, &Region::Cube(DyadicCube::at_origin(&lat, big_r / 2.0)?)).sqrt();
    let l1 = crate::lattice::lq_average(grad_u, 1.0, &Region::Cube(DyadicCube::at_origin(&lat, big_r)?));
    Ok(if l1 == 0.0 { 0.0 } else { l2 / l1 })
}

/// `int_rho |grad(phi, sigma)|^2` over `rho^{-2} int_{2 rho} |(phi, sigma) - mean|^2 + rho^d`.
pub fn caccioppoli_ratio(fields: &[&ScalarField], rho: f64) -> Result<f64> {
    let Some(first) = fields.first() else {
        return Err(LabError::invalid("no fields given"));
    };
    let lat = first.lattice;
    let vol = lat.cell_volume();
    let inner = DyadicCube::at_origin(&lat, rho)?;
    let outer = DyadicCube::at_origin(&lat, 2.0 * rho)?;
    let outer_sites = outer.sites(&lat);
    let mut lhs = 0.0;
    let mut osc = 0.0;
    for f in fields {
        let g = grad(f);
        lhs += lq_norm(&g, 2.0, &Region::Cube(inner.clone()))?.powi(2);
        let mean = cube_average(&lat, &f.values, &outer)?;
        osc += outer_sites.iter().map(|&x| (f.values[x] - mean).powi(2)).sum::<f64>() * vol;
    }
    let rhs = osc / (rho * rho) + rho.powi(lat.dim() as i32);
    Ok(lhs / rhs)
}

/// Origin of a-harmonic test functions in [`mean_value_check`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HarmonicKind {
    RandomBoundary,
    Corrected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicTrial {
    pub kind: HarmonicKind,
    pub mean_value_ratio: f64,
    pub reverse_holder_ratio: f64,
}

/// Regularity diagnostics for a-harmonic functions on the cube of radius
/// `R`: Dirichlet solutions whose boundary data is a random harmonic
/// polynomial of degree at most two and, when correctors are supplied, the
/// corrected coordinates `x_i + phi_i`.
pub fn mean_value_check(
    a: &TensorField,
    correctors: Option<&CorrectorSet>,
    r: f64,
    big_r: f64,
    random_trials: usize,
    seed: FieldSeed,
    opts: &SolveOptions,
) -> Result<Vec<HarmonicTrial>> {
    let lat = a.lattice;
    if !(r <= big_r && big_r <= lat.box_size() / 4.0) {
        return Err(LabError::invalid(format!(
            "need r <= R <= L/4, got r = {r}, R = {big_r}"
        )));
    }
    DyadicCube::at_origin(&lat, r)?;
    let outer = DyadicCube::at_origin(&lat, big_r)?;
    let half = outer.side as i64 / 2;
    // Interior of the box is exactly the cube of radius R.
    let sub = SubBox {
        corner: vec![-half - 1; lat.dim()],
        side: outer.side + 2,
    };
    let mut rng = seed.rng();
    let mut out = Vec::new();
    for _ in 0..random_trials {
        let d = lat.dim();
        let linear: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut quad = vec![0.0; d * d];
        for i in 0..d {
            for j in i + 1..d {
                quad[i * d + j] = StandardNormal.sample(&mut rng);
            }
            if i + 1 < d {
                let c: f64 = StandardNormal.sample(&mut rng);
                quad[i * d + i] += c;
                quad[(i + 1) * d + i + 1] -= c;
            }
        }
        let data = ScalarField {
            lattice: lat,
            values: (0..lat.sites())
                .map(|x| {
                    let c = lat.signed_coords(x);
                    let y: Vec<f64> = (0..d).map(|i| c[i] as f64 * lat.spacing() / big_r).collect();
                    let mut v: f64 = linear.iter().zip(&y).map(|(l, t)| l * t).sum();
                    for i in 0..d {
                        for j in i..d {
                            v += quad[i * d + j] * y[i] * y[j];
                        }
                    }
                    v
                })
                .collect(),
        };
        let u = solve_dirichlet(a, &data, &sub, opts)?.solution;
        let g = grad(&u);
        out.push(HarmonicTrial {
            kind: HarmonicKind::RandomBoundary,
            mean_value_ratio: mean_value_ratio(&g, r, big_r)?,
            reverse_holder_ratio: reverse_holder_ratio(&g, big_r)?,
        });
    }
    if let Some(set) = correctors {
        for (i, phi) in set.phi.iter().enumerate() {
            let mut g = grad(phi);
            g.comps[i].iter_mut().for_each(|v| *v += 1.0);
            out.push(HarmonicTrial {
                kind: HarmonicKind::Corrected,
                mean_value_ratio: mean_value_ratio(&g, r, big_r)?,
                reverse_holder_ratio: reverse_holder_ratio(&g, big_r)?,
            });
        }
    }
    Ok(out)
}

/// Smallness screen: `D(rho) <= threshold` for every dyadic `rho` in
/// `[r, L/4]`.
pub fn smallness_screen(fields: &[&ScalarField], r: f64, threshold: f64) -> Result<bool> {
    let Some(first) = fields.first() else {
        return Ok(true);
    };
    let lat = first.lattice;
    let mut rho = r;
    while rho <= lat.box_size() / 4.0 * (1.0 + 1e-12) {
        if sublinearity(fields, &DyadicCube::at_origin(&lat, rho)?) > threshold {
            return Ok(false);
        }
        rho *= 2.0;
    }
    Ok(true)
}

impl SiteField for FunctionalSpec {
    fn lattice(&self) -> &Lattice {
        &self.weight.lattice
    }

    fn site_magnitude(&self, idx: usize) -> f64 {
        self.weight.site_magnitude(idx)
    }
}
