//! Pointwise 1-Lipschitz maps from Gaussian tensors to elliptic symmetric
//! coefficients, selected by name through a registry.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::lattice::TensorField;

/// A map `m -> a` taking `d x d` matrices (row-major) to symmetric matrices
/// with spectrum in `[lambda, 1]`, 1-Lipschitz in the Frobenius norm.
pub trait CoefficientMap: Send + Sync {
    fn name(&self) -> &'static str;

    fn lambda(&self) -> f64;

    fn map(&self, m: &[f64], d: usize) -> Vec<f64>;

    /// Vector-Jacobian product `DΦ(m)^T g`, the chain rule that turns a
    /// derivative with respect to `a` into one with respect to the
    /// Gaussian input.
    fn pullback(&self, m: &[f64], g: &[f64], d: usize) -> Vec<f64>;
}

/// `a = mu(m_11) Id` with `mu = lambda + (1 - lambda) S(m_11)` and
/// `S(t) = (1 + tanh(k t)) / 2`. The slope `k` is chosen so that the
/// Frobenius Lipschitz constant of the composite is exactly 1.
#[derive(Debug, Clone)]
pub struct ScalarIsotropic {
    lambda: f64,
    steepness: f64,
}

impl ScalarIsotropic {
    pub fn new(lambda: f64, d: usize) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(ScalarIsotropic {
            lambda,
            steepness: 2.0 / ((1.0 - lambda) * (d as f64).sqrt()),
        })
    }

    pub fn squash(&self, t: f64) -> f64 {
        0.5 * (1.0 + (self.steepness * t).tanh())
    }

    pub fn squash_slope(&self, t: f64) -> f64 {
        let th = (self.steepness * t).tanh();
        0.5 * self.steepness * (1.0 - th * th)
    }

    pub fn multiplier(&self, t: f64) -> f64 {
        self.lambda + (1.0 - self.lambda) * self.squash(t)
    }
}

impl CoefficientMap for ScalarIsotropic {
    fn name(&self) -> &'static str {
        "scalar-isotropic"
    }

    fn lambda(&self) -> f64 {
        self.lambda
    }

    fn map(&self, m: &[f64], d: usize) -> Vec<f64> {
        let mu = self.multiplier(m[0]);
        let mut out = vec![0.0; d * d];
        for j in 0..d {
            out[j * d + j] = mu;
        }
        out
    }

    fn pullback(&self, m: &[f64], g: &[f64], d: usize) -> Vec<f64> {
        let trace: f64 = (0..d).map(|j| g[j * d + j]).sum();
        let mut out = vec![0.0; d * d];
        out[0] = (1.0 - self.lambda) * self.squash_slope(m[0]) * trace;
        out
    }
}

/// Frobenius projection onto `{lambda Id <= a <= Id}` of `sym(m) + c Id`
/// with `c = (1 + lambda) / 2`, so that a centered input maps to the middle
/// of the admissible range.
#[derive(Debug, Clone)]
pub struct EigenvalueClamp {
    lambda: f64,
}

impl EigenvalueClamp {
    pub fn new(lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(EigenvalueClamp { lambda })
    }

    fn shifted_sym(&self, m: &[f64], d: usize) -> DMatrix<f64> {
        let c = 0.5 * (1.0 + self.lambda);
        DMatrix::from_fn(d, d, |j, l| {
            0.5 * (m[j * d + l] + m[l * d + j]) + if j == l { c } else { 0.0 }
        })
    }
}

impl CoefficientMap for EigenvalueClamp {
    fn name(&self) -> &'static str {
        "eigenvalue-clamp"
    }

    fn lambda(&self) -> f64 {
        self.lambda
    }

    fn map(&self, m: &[f64], d: usize) -> Vec<f64> {
        let eig = SymmetricEigen::new(self.shifted_sym(m, d));
        let clamped = eig.eigenvalues.map(|v| v.clamp(self.lambda, 1.0));
        let q = &eig.eigenvectors;
        let a = q * DMatrix::from_diagonal(&clamped) * q.transpose();
        let mut out = vec![0.0; d * d];
        for j in 0..d {
            for l in 0..d {
                // exact symmetry
                out[j * d + l] = 0.5 * (a[(j, l)] + a[(l, j)]);
            }
        }
        out
    }

    fn pullback(&self, m: &[f64], g: &[f64], d: usize) -> Vec<f64> {
        // Daleckii-Krein: Df[E] = Q (Gamma o Q^T E Q) Q^T, self-adjoint, then
        // the symmetrization's adjoint symmetrizes g.
        let eig = SymmetricEigen::new(self.shifted_sym(m, d));
        let lam = &eig.eigenvalues;
        let f = |v: f64| v.clamp(self.lambda, 1.0);
        let fp = |v: f64| if v > self.lambda && v < 1.0 { 1.0 } else { 0.0 };
        let q = &eig.eigenvectors;
        let gs = DMatrix::from_fn(d, d, |j, l| 0.5 * (g[j * d + l] + g[l * d + j]));
        let mut inner = q.transpose() * gs * q;
        for j in 0..d {
            for l in 0..d {
                let gap = lam[j] - lam[l];
                let gamma = if gap.abs() > 1e-12 {
                    (f(lam[j]) - f(lam[l])) / gap
                } else {
                    fp(lam[j])
                };
                inner[(j, l)] *= gamma;
            }
        }
        let back = q * inner * q.transpose();
        let mut out = vec![0.0; d * d];
        for j in 0..d {
            for l in 0..d {
                out[j * d + l] = back[(j, l)];
            }
        }
        out
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(LabError::invalid(format!("ellipticity must lie in (0,1), got {lambda}")));
    }
    Ok(())
}

pub type MapFactory = fn(lambda: f64, d: usize) -> Result<Box<dyn CoefficientMap>>;

/// Name-indexed collection of coefficient maps.
pub struct MapRegistry {
    entries: Vec<(&'static str, MapFactory)>,
}

impl MapRegistry {
    pub fn empty() -> Self {
        MapRegistry { entries: Vec::new() }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("scalar-isotropic", |lambda, d| {
            Ok(Box::new(ScalarIsotropic::new(lambda, d)?))
        });
        r.register("eigenvalue-clamp", |lambda, _| {
            Ok(Box::new(EigenvalueClamp::new(lambda)?))
        });
        r
    }

    /// Registers a factory; a later registration under the same name wins.
    pub fn register(&mut self, name: &'static str, factory: MapFactory) {
        self.entries.retain(|(n, _)| *n != name);
        self.entries.push((name, factory));
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }

    pub fn build(&self, name: &str, lambda: f64, d: usize) -> Result<Box<dyn CoefficientMap>> {
        let (_, factory) = self
            .entries
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| {
                LabError::invalid(format!(
                    "unknown coefficient map '{name}' (known: {})",
                    self.names().join(", ")
                ))
            })?;
        factory(lambda, d)
    }
}

impl Default for MapRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientMapSpec {
    pub variant: String,
    pub lambda: f64,
}

impl Default for CoefficientMapSpec {
    fn default() -> Self {
        CoefficientMapSpec {
            variant: "scalar-isotropic".into(),
            lambda: 0.5,
        }
    }
}

impl CoefficientMapSpec {
    pub fn build(&self, d: usize) -> Result<Box<dyn CoefficientMap>> {
        MapRegistry::with_builtins().build(&self.variant, self.lambda, d)
    }
}

/// Site-wise `a(x) = Φ(ã(x))`.
pub fn apply_phi(atilde: &TensorField, map: &dyn CoefficientMap) -> TensorField {
    let lat = atilde.lattice;
    let d = lat.dim();
    let mut out = TensorField::zeros(lat);
    for idx in 0..lat.sites() {
        let m = atilde.matrix_at(idx);
        out.set_matrix(idx, &map.map(&m, d));
    }
    out.symmetric = true;
    out
}

/// Chain rule `∂F/∂ã(x) = DΦ(ã(x))^T ∂F/∂a(x)`.
pub fn pullback_field(
    atilde: &TensorField,
    dfda: &TensorField,
    map: &dyn CoefficientMap,
) -> TensorField {
    let lat = atilde.lattice;
    let d = lat.dim();
    let mut out = TensorField::zeros(lat);
    out.symmetric = false;
    for idx in 0..lat.sites() {
        let m = atilde.matrix_at(idx);
        let g = dfda.matrix_at(idx);
        out.set_matrix(idx, &map.pullback(&m, &g, d));
    }
    out
}

pub(crate) fn frobenius(m: &[f64]) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Smallest and largest eigenvalue of a symmetric row-major matrix.
pub fn eigen_range(m: &[f64], d: usize) -> (f64, f64) {
    let mat = DMatrix::from_fn(d, d, |j, l| 0.5 * (m[j * d + l] + m[l * d + j]));
    let ev = SymmetricEigen::new(mat).eigenvalues;
    (ev.min(), ev.max())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Lattice;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
        (0..d * d).map(|_| rng.random_range(-scale..scale)).collect()
    }

    #[test]
    fn zero_input_gives_midpoint_for_scalar_map() {
        let lat = Lattice::unit(2, 8).unwrap();
        let map = ScalarIsotropic::new(0.3, 2).unwrap();
        let a = apply_phi(&TensorField::zeros(lat), &map);
        let expect = 0.3 + 0.7 / 2.0;
        for idx in 0..lat.sites() {
            assert!((a.get(idx, 0, 0) - expect).abs() < 1e-15);
            assert!((a.get(idx, 1, 1) - expect).abs() < 1e-15);
            assert_eq!(a.get(idx, 0, 1), 0.0);
        }
    }

    #[test]
    fn outputs_are_elliptic_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let reg = MapRegistry::with_builtins();
        for name in reg.names() {
            for d in 1..=3 {
                let map = reg.build(name, 0.25, d).unwrap();
                for _ in 0..500 {
                    let m = random_matrix(&mut rng, d, 5.0);
                    let a = map.map(&m, d);
                    let (lo, hi) = eigen_range(&a, d);
                    assert!(lo >= 0.25 - 1e-12 && hi <= 1.0 + 1e-12, "{name} {lo} {hi}");
                    for j in 0..d {
                        for l in 0..d {
                            assert!((a[j * d + l] - a[l * d + j]).abs() < 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn maps_are_one_lipschitz_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let reg = MapRegistry::with_builtins();
        for name in reg.names() {
            for d in 1..=3 {
                let map = reg.build(name, 0.5, d).unwrap();
                for k in 0..10_000 / 3 {
                    let scale = if k % 2 == 0 { 0.05 } else { 2.0 };
                    let m1 = random_matrix(&mut rng, d, scale);
                    let m2 = random_matrix(&mut rng, d, scale);
                    let da: Vec<f64> = map
                        .map(&m1, d)
                        .iter()
                        .zip(map.map(&m2, d))
                        .map(|(x, y)| x - y)
                        .collect();
                    let dm: Vec<f64> = m1.iter().zip(&m2).map(|(x, y)| x - y).collect();
                    assert!(frobenius(&da) <= frobenius(&dm) * (1.0 + 1e-9));
                }
            }
        }
    }

    #[test]
    fn pullback_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let reg = MapRegistry::with_builtins();
        let eps = 1e-6;
        for name in reg.names() {
            let d = 2;
            let map = reg.build(name, 0.4, d).unwrap();
            for _ in 0..50 {
                let m = random_matrix(&mut rng, d, 0.3);
                let g = random_matrix(&mut rng, d, 1.0);
                let e = random_matrix(&mut rng, d, 1.0);
                let plus: Vec<f64> = m.iter().zip(&e).map(|(x, y)| x + eps * y).collect();
                let minus: Vec<f64> = m.iter().zip(&e).map(|(x, y)| x - eps * y).collect();
                let fd: f64 = map
                    .map(&plus, d)
                    .iter()
                    .zip(map.map(&minus, d))
                    .zip(&g)
                    .map(|((p, q), gv)| (p - q) / (2.0 * eps) * gv)
                    .sum();
                let an: f64 = map.pullback(&m, &g, d).iter().zip(&e).map(|(p, v)| p * v).sum();
                assert!((fd - an).abs() < 1e-6, "{name}: fd {fd} vs {an}");
            }
        }
    }

    #[test]
    fn pullback_is_dominated() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let reg = MapRegistry::with_builtins();
        for name in reg.names() {
            for d in 1..=3 {
                let map = reg.build(name, 0.5, d).unwrap();
                for _ in 0..500 {
                    let m = random_matrix(&mut rng, d, 1.0);
                    let g = random_matrix(&mut rng, d, 1.0);
                    let pb = map.pullback(&m, &g, d);
                    assert!(frobenius(&pb) <= frobenius(&g) * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn registry_lookup() {
        let mut reg = MapRegistry::with_builtins();
        assert!(reg.build("nope", 0.5, 2).is_err());
        assert!(reg.build("scalar-isotropic", 1.5, 2).is_err());
        reg.register("scalar-isotropic", |l, _| Ok(Box::new(EigenvalueClamp::new(l)?)));
        assert_eq!(reg.build("scalar-isotropic", 0.5, 2).unwrap().name(), "eigenvalue-clamp");
    }
}
