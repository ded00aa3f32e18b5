//! Periodic lattice, discrete vector calculus and dyadic cube geometry.
//!
//! The gradient is a forward difference and the divergence a backward
//! difference, so that `div = -grad^T` holds exactly in the lattice inner
//! product `<u, v> = sum_x u(x) v(x) h^d`.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub const MAX_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    d: usize,
    n: usize,
    box_size: f64,
}

impl Lattice {
    pub fn new(d: usize, n: usize, box_size: f64) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&d) {
            return Err(LabError::invalid(format!("dimension must be 1, 2 or 3, got {d}")));
        }
        if n < 4 || !n.is_power_of_two() {
            return Err(LabError::invalid(format!(
                "sites per axis must be a power of two >= 4, got {n}"
            )));
        }
        if !(box_size.is_finite() && box_size > 0.0) {
            return Err(LabError::invalid(format!("box size must be positive, got {box_size}")));
        }
        Ok(Lattice { d, n, box_size })
    }

    /// Lattice with `L = n`, i.e. unit spacing.
    pub fn unit(d: usize, n: usize) -> Result<Self> {
        Self::new(d, n, n as f64)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn box_size(&self) -> f64 {
        self.box_size
    }

    pub fn spacing(&self) -> f64 {
        self.box_size / self.n as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.d as i32)
    }

    pub fn sites(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.n.pow(axis as u32)
    }

    /// Grid coordinates of a linear index; unused axes are zero.
    pub fn coords(&self, mut idx: usize) -> [usize; MAX_DIM] {
        let mut c = [0; MAX_DIM];
        for slot in c.iter_mut().take(self.d) {
            *slot = idx % self.n;
            idx /= self.n;
        }
        c
    }

    /// Linear index of (possibly negative or out of range) coordinates,
    /// wrapped periodically.
    pub fn index(&self, coords: &[i64]) -> usize {
        let n = self.n as i64;
        let mut idx = 0usize;
        for axis in (0..self.d).rev() {
            let c = coords.get(axis).copied().unwrap_or(0).rem_euclid(n) as usize;
            idx = idx * self.n + c;
        }
        idx
    }

    pub fn shift(&self, idx: usize, axis: usize, delta: i64) -> usize {
        let mut c = self.coords(idx).map(|v| v as i64);
        c[axis] += delta;
        self.index(&c[..self.d])
    }

    /// Periodic displacement of a site from the origin, each component in
    /// `[-n/2, n/2)`, in grid units.
    pub fn signed_coords(&self, idx: usize) -> [i64; MAX_DIM] {
        let half = (self.n / 2) as i64;
        self.coords(idx).map(|c| {
            let c = c as i64;
            if c >= half {
                c - self.n as i64
            } else {
                c
            }
        })
    }

    /// Physical position of a site with periodic coordinates centered at 0.
    pub fn position(&self, idx: usize) -> [f64; MAX_DIM] {
        let h = self.spacing();
        self.signed_coords(idx).map(|c| c as f64 * h)
    }

    pub fn zeros(&self) -> Vec<f64> {
        vec![0.0; self.sites()]
    }
}

/// Visits every pair `(x, x + e_axis)` with periodic wrap.
#[inline]
fn for_each_forward_pair(lat: &Lattice, axis: usize, mut f: impl FnMut(usize, usize)) {
    let s = lat.stride(axis);
    let n = lat.n();
    let block = s * n;
    let total = lat.sites();
    let mut base = 0;
    while base < total {
        for c in 0..n {
            let row = base + c * s;
            let next = if c + 1 < n { row + s } else { base };
            for k in 0..s {
                f(row + k, next + k);
            }
        }
        base += block;
    }
}

pub(crate) fn forward_diff_into(lat: &Lattice, u: &[f64], axis: usize, out: &mut [f64]) {
    let inv_h = 1.0 / lat.spacing();
    for_each_forward_pair(lat, axis, |x, xp| out[x] = (u[xp] - u[x]) * inv_h);
}

pub(crate) fn backward_diff_into(lat: &Lattice, u: &[f64], axis: usize, out: &mut [f64]) {
    let inv_h = 1.0 / lat.spacing();
    for_each_forward_pair(lat, axis, |x, xp| out[xp] = (u[xp] - u[x]) * inv_h);
}

/// `out -= backward_diff(u)` along `axis`, used to accumulate `-div`.
pub(crate) fn sub_backward_diff(lat: &Lattice, u: &[f64], axis: usize, out: &mut [f64]) {
    let inv_h = 1.0 / lat.spacing();
    for_each_forward_pair(lat, axis, |x, xp| out[xp] -= (u[xp] - u[x]) * inv_h);
}

pub(crate) fn dot_raw(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn mean_raw(a: &[f64]) -> f64 {
    a.iter().sum::<f64>() / a.len() as f64
}

/// Per-site magnitude of a field, used by norms and diagnostics.
pub trait SiteField {
    fn lattice(&self) -> &Lattice;
    fn site_magnitude(&self, idx: usize) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub lattice: Lattice,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(lattice: Lattice) -> Self {
        ScalarField { values: lattice.zeros(), lattice }
    }

    pub fn from_values(lattice: Lattice, values: Vec<f64>) -> Result<Self> {
        if values.len() != lattice.sites() {
            return Err(LabError::invalid(format!(
                "expected {} values, got {}",
                lattice.sites(),
                values.len()
            )));
        }
        Ok(ScalarField { lattice, values })
    }

    pub fn from_fn(lattice: Lattice, f: impl Fn([f64; MAX_DIM]) -> f64) -> Self {
        let values = (0..lattice.sites()).map(|i| f(lattice.position(i))).collect();
        ScalarField { lattice, values }
    }

    pub fn mean(&self) -> f64 {
        mean_raw(&self.values)
    }

    /// Subtracts the box mean in place.
    pub fn center(&mut self) {
        let m = self.mean();
        self.values.iter_mut().for_each(|v| *v -= m);
    }

    pub fn inner(&self, other: &ScalarField) -> f64 {
        dot_raw(&self.values, &other.values) * self.lattice.cell_volume()
    }

    pub fn scaled(&self, s: f64) -> Self {
        ScalarField {
            lattice: self.lattice,
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn cube_average(&self, cube: &DyadicCube) -> Result<f64> {
        cube_average(&self.lattice, &self.values, cube)
    }

    /// Translates by `shift` grid sites: `out(x) = self(x - shift)`.
    pub fn translated(&self, shift: &[i64]) -> Self {
        ScalarField {
            lattice: self.lattice,
            values: translate_raw(&self.lattice, &self.values, shift),
        }
    }
}

impl SiteField for ScalarField {
    fn lattice(&self) -> &Lattice {
        &self.lattice
    }
    fn site_magnitude(&self, idx: usize) -> f64 {
        self.values[idx].abs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub lattice: Lattice,
    /// One buffer per component.
    pub comps: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn zeros(lattice: Lattice) -> Self {
        VectorField {
            comps: (0..lattice.dim()).map(|_| lattice.zeros()).collect(),
            lattice,
        }
    }

    pub fn from_comps(lattice: Lattice, comps: Vec<Vec<f64>>) -> Result<Self> {
        if comps.len() != lattice.dim() || comps.iter().any(|c| c.len() != lattice.sites()) {
            return Err(LabError::invalid("vector field component layout mismatch"));
        }
        Ok(VectorField { lattice, comps })
    }

    /// The constant field `e_i`.
    pub fn unit(lattice: Lattice, i: usize) -> Self {
        let mut v = Self::zeros(lattice);
        v.comps[i].iter_mut().for_each(|x| *x = 1.0);
        v
    }

    pub fn inner(&self, other: &VectorField) -> f64 {
        self.comps
            .iter()
            .zip(&other.comps)
            .map(|(a, b)| dot_raw(a, b))
            .sum::<f64>()
            * self.lattice.cell_volume()
    }

    pub fn means(&self) -> Vec<f64> {
        self.comps.iter().map(|c| mean_raw(c)).collect()
    }

    pub fn scaled(&self, s: f64) -> Self {
        VectorField {
            lattice: self.lattice,
            comps: self.comps.iter().map(|c| c.iter().map(|v| v * s).collect()).collect(),
        }
    }

    pub fn cube_average(&self, cube: &DyadicCube) -> Result<Vec<f64>> {
        self.comps
            .iter()
            .map(|c| cube_average(&self.lattice, c, cube))
            .collect()
    }

    pub fn translated(&self, shift: &[i64]) -> Self {
        VectorField {
            lattice: self.lattice,
            comps: self
                .comps
                .iter()
                .map(|c| translate_raw(&self.lattice, c, shift))
                .collect(),
        }
    }
}

impl SiteField for VectorField {
    fn lattice(&self) -> &Lattice {
        &self.lattice
    }
    fn site_magnitude(&self, idx: usize) -> f64 {
        self.comps.iter().map(|c| c[idx] * c[idx]).sum::<f64>().sqrt()
    }
}

/// Per-site `d x d` matrices, stored as `d*d` component buffers in
/// row-major order: component `(j, l)` lives at `j * d + l`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    pub lattice: Lattice,
    pub comps: Vec<Vec<f64>>,
    pub symmetric: bool,
}

impl TensorField {
    pub fn zeros(lattice: Lattice) -> Self {
        let d = lattice.dim();
        TensorField {
            comps: (0..d * d).map(|_| lattice.zeros()).collect(),
            lattice,
            symmetric: true,
        }
    }

    pub fn identity(lattice: Lattice) -> Self {
        Self::scalar_multiple(&ScalarField {
            lattice,
            values: vec![1.0; lattice.sites()],
        })
    }

    /// `mu(x) * Id`.
    pub fn scalar_multiple(mu: &ScalarField) -> Self {
        let lattice = mu.lattice;
        let mut t = Self::zeros(lattice);
        let d = lattice.dim();
        for j in 0..d {
            t.comps[j * d + j].copy_from_slice(&mu.values);
        }
        t
    }

    /// Diagonal field with the given per-axis entries.
    pub fn diagonal(lattice: Lattice, diag: &[Vec<f64>]) -> Result<Self> {
        let d = lattice.dim();
        if diag.len() != d || diag.iter().any(|c| c.len() != lattice.sites()) {
            return Err(LabError::invalid("diagonal layout mismatch"));
        }
        let mut t = Self::zeros(lattice);
        for j in 0..d {
            t.comps[j * d + j].clone_from(&diag[j]);
        }
        Ok(t)
    }

    pub fn from_comps(lattice: Lattice, comps: Vec<Vec<f64>>, symmetric: bool) -> Result<Self> {
        let d = lattice.dim();
        if comps.len() != d * d || comps.iter().any(|c| c.len() != lattice.sites()) {
            return Err(LabError::invalid("tensor field component layout mismatch"));
        }
        let t = TensorField { lattice, comps, symmetric };
        if symmetric && t.max_asymmetry() > 1e-12 {
            return Err(LabError::invalid("tensor field flagged symmetric is not symmetric"));
        }
        Ok(t)
    }

    #[inline]
    pub fn get(&self, idx: usize, j: usize, l: usize) -> f64 {
        self.comps[j * self.lattice.dim() + l][idx]
    }

    pub fn matrix_at(&self, idx: usize) -> Vec<f64> {
        self.comps.iter().map(|c| c[idx]).collect()
    }

    pub fn set_matrix(&mut self, idx: usize, m: &[f64]) {
        for (c, v) in self.comps.iter_mut().zip(m) {
            c[idx] = *v;
        }
    }

    pub fn max_asymmetry(&self) -> f64 {
        let d = self.lattice.dim();
        let mut worst: f64 = 0.0;
        for j in 0..d {
            for l in (j + 1)..d {
                let a = &self.comps[j * d + l];
                let b = &self.comps[l * d + j];
                for (x, y) in a.iter().zip(b) {
                    worst = worst.max((x - y).abs());
                }
            }
        }
        worst
    }

    pub fn transpose(&self) -> Self {
        let d = self.lattice.dim();
        let mut t = self.clone();
        for j in 0..d {
            for l in 0..d {
                t.comps[j * d + l].clone_from(&self.comps[l * d + j]);
            }
        }
        t
    }

    /// Frobenius inner product `sum_x A(x):B(x) h^d`.
    pub fn inner(&self, other: &TensorField) -> f64 {
        self.comps
            .iter()
            .zip(&other.comps)
            .map(|(a, b)| dot_raw(a, b))
            .sum::<f64>()
            * self.lattice.cell_volume()
    }

    /// `self + s * other`, with the symmetry flag kept only if both are set.
    pub fn axpy(&self, s: f64, other: &TensorField) -> Self {
        TensorField {
            lattice: self.lattice,
            comps: self
                .comps
                .iter()
                .zip(&other.comps)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + s * y).collect())
                .collect(),
            symmetric: self.symmetric && other.symmetric,
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        TensorField {
            lattice: self.lattice,
            comps: self.comps.iter().map(|c| c.iter().map(|v| v * s).collect()).collect(),
            symmetric: self.symmetric,
        }
    }

    /// Applies the per-site matrix to a vector field: `(A v)_j = sum_l A_jl v_l`.
    pub fn apply(&self, v: &VectorField) -> VectorField {
        let mut out = VectorField::zeros(self.lattice);
        self.apply_into(&v.comps, &mut out.comps);
        out
    }

    pub(crate) fn apply_into(&self, v: &[Vec<f64>], out: &mut [Vec<f64>]) {
        let d = self.lattice.dim();
        for j in 0..d {
            let (first, rest) = (&self.comps[j * d], &self.comps[j * d + 1..j * d + d]);
            let o = &mut out[j];
            for ((ov, a), x) in o.iter_mut().zip(first).zip(&v[0]) {
                *ov = a * x;
            }
            for (l, al) in rest.iter().enumerate() {
                for ((ov, a), x) in o.iter_mut().zip(al).zip(&v[l + 1]) {
                    *ov += a * x;
                }
            }
        }
    }

    /// Column `i` as a vector field, i.e. `A e_i`.
    pub fn column(&self, i: usize) -> VectorField {
        let d = self.lattice.dim();
        VectorField {
            lattice: self.lattice,
            comps: (0..d).map(|j| self.comps[j * d + i].clone()).collect(),
        }
    }

    /// Outer product field `u ⊗ w`, component `(j, l) = u_j w_l`.
    pub fn outer(u: &VectorField, w: &VectorField) -> Self {
        let d = u.lattice.dim();
        let mut comps = Vec::with_capacity(d * d);
        for j in 0..d {
            for l in 0..d {
                comps.push(u.comps[j].iter().zip(&w.comps[l]).map(|(a, b)| a * b).collect());
            }
        }
        TensorField {
            lattice: u.lattice,
            comps,
            symmetric: false,
        }
    }

    pub fn translated(&self, shift: &[i64]) -> Self {
        TensorField {
            lattice: self.lattice,
            comps: self
                .comps
                .iter()
                .map(|c| translate_raw(&self.lattice, c, shift))
                .collect(),
            symmetric: self.symmetric,
        }
    }
}

impl SiteField for TensorField {
    fn lattice(&self) -> &Lattice {
        &self.lattice
    }
    fn site_magnitude(&self, idx: usize) -> f64 {
        self.comps.iter().map(|c| c[idx] * c[idx]).sum::<f64>().sqrt()
    }
}

fn translate_raw(lat: &Lattice, values: &[f64], shift: &[i64]) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for (idx, v) in values.iter().enumerate() {
        let mut c = lat.coords(idx).map(|x| x as i64);
        for (ci, s) in c.iter_mut().zip(shift) {
            *ci += s;
        }
        out[lat.index(&c[..lat.dim()])] = *v;
    }
    out
}

/// Forward-difference gradient with periodic wrap.
pub fn grad(u: &ScalarField) -> VectorField {
    let lat = u.lattice;
    let mut out = VectorField::zeros(lat);
    for (j, comp) in out.comps.iter_mut().enumerate() {
        forward_diff_into(&lat, &u.values, j, comp);
    }
    out
}

/// Backward-difference divergence, the negative adjoint of [`grad`].
pub fn div(h: &VectorField) -> ScalarField {
    let lat = h.lattice;
    let mut out = ScalarField::zeros(lat);
    let mut tmp = lat.zeros();
    for (j, comp) in h.comps.iter().enumerate() {
        backward_diff_into(&lat, comp, j, &mut tmp);
        out.values.iter_mut().zip(&tmp).for_each(|(o, t)| *o += t);
    }
    out
}

/// Backward-difference derivative of a scalar field along `axis`.
pub fn backward_partial(u: &ScalarField, axis: usize) -> ScalarField {
    let mut out = ScalarField::zeros(u.lattice);
    backward_diff_into(&u.lattice, &u.values, axis, &mut out.values);
    out
}

/// Forward-difference derivative of a scalar field along `axis`.
pub fn forward_partial(u: &ScalarField, axis: usize) -> ScalarField {
    let mut out = ScalarField::zeros(u.lattice);
    forward_diff_into(&u.lattice, &u.values, axis, &mut out.values);
    out
}

/// The (2d+1)-point Laplacian, `div(grad u)`.
pub fn laplacian(u: &ScalarField) -> ScalarField {
    div(&grad(u))
}

/// Axis-aligned cube of side `2 * radius` on the lattice. The corner is in
/// grid units and may lie outside `[0, n)`; membership wraps periodically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DyadicCube {
    pub radius: f64,
    pub corner: Vec<i64>,
    /// Side length in sites.
    pub side: usize,
}

impl DyadicCube {
    /// Cube of the given radius with its center at grid site `center`
    /// (sites `center - r/h .. center + r/h - 1` per axis).
    pub fn centered(lat: &Lattice, radius: f64, center: &[i64]) -> Result<Self> {
        let side = side_in_sites(lat, radius)?;
        let half = (side / 2) as i64;
        let corner = (0..lat.dim())
            .map(|a| center.get(a).copied().unwrap_or(0) - half)
            .collect();
        Ok(DyadicCube { radius, corner, side })
    }

    pub fn at_origin(lat: &Lattice, radius: f64) -> Result<Self> {
        Self::centered(lat, radius, &[0; MAX_DIM])
    }

    pub fn with_corner(lat: &Lattice, radius: f64, corner: &[i64]) -> Result<Self> {
        let side = side_in_sites(lat, radius)?;
        Ok(DyadicCube {
            radius,
            corner: corner[..lat.dim()].to_vec(),
            side,
        })
    }

    /// The cubes of the given radius tiling the whole box, corners at
    /// multiples of the side length.
    pub fn tiling(lat: &Lattice, radius: f64) -> Result<Vec<DyadicCube>> {
        let side = side_in_sites(lat, radius)?;
        let per_axis = lat.n() / side;
        let count = per_axis.pow(lat.dim() as u32);
        let mut cubes = Vec::with_capacity(count);
        for k in 0..count {
            let mut rem = k;
            let corner = (0..lat.dim())
                .map(|_| {
                    let c = (rem % per_axis * side) as i64;
                    rem /= per_axis;
                    c
                })
                .collect();
            cubes.push(DyadicCube { radius, corner, side });
        }
        Ok(cubes)
    }

    /// The `2^d` sub-cubes of half the radius.
    pub fn children(&self) -> Vec<DyadicCube> {
        let d = self.corner.len();
        let half = self.side / 2;
        (0..(1usize << d))
            .map(|mask| DyadicCube {
                radius: self.radius / 2.0,
                corner: (0..d)
                    .map(|a| self.corner[a] + if mask >> a & 1 == 1 { half as i64 } else { 0 })
                    .collect(),
                side: half,
            })
            .collect()
    }

    pub fn site_count(&self) -> usize {
        self.side.pow(self.corner.len() as u32)
    }

    /// Wrapped linear indices of the sites inside the cube.
    pub fn sites(&self, lat: &Lattice) -> Vec<usize> {
        let d = lat.dim();
        let mut out = Vec::with_capacity(self.site_count());
        let mut offs = [0i64; MAX_DIM];
        for _ in 0..self.site_count() {
            let c: Vec<i64> = (0..d).map(|a| self.corner[a] + offs[a]).collect();
            out.push(lat.index(&c));
            for o in offs.iter_mut().take(d) {
                *o += 1;
                if *o < self.side as i64 {
                    break;
                }
                *o = 0;
            }
        }
        out
    }

    /// Periodic membership test.
    pub fn contains(&self, lat: &Lattice, idx: usize) -> bool {
        let n = lat.n() as i64;
        let c = lat.coords(idx);
        (0..lat.dim()).all(|a| (c[a] as i64 - self.corner[a]).rem_euclid(n) < self.side as i64)
    }
}

fn side_in_sites(lat: &Lattice, radius: f64) -> Result<usize> {
    let side_f = 2.0 * radius / lat.spacing();
    let side = side_f.round();
    if !(side >= 1.0 && (side_f - side).abs() < 1e-9) {
        return Err(LabError::invalid(format!(
            "radius {radius} is not representable on a lattice with spacing {}",
            lat.spacing()
        )));
    }
    let side = side as usize;
    if !side.is_power_of_two() || side > lat.n() {
        return Err(LabError::invalid(format!(
            "radius {radius} is not dyadic within the box (side {side} sites, n = {})",
            lat.n()
        )));
    }
    Ok(side)
}

pub fn cube_average(lat: &Lattice, values: &[f64], cube: &DyadicCube) -> Result<f64> {
    let sites = cube.sites(lat);
    if sites.is_empty() {
        return Err(LabError::invalid("empty cube"));
    }
    Ok(sites.iter().map(|&i| values[i]).sum::<f64>() / sites.len() as f64)
}

/// Integration region for norms.
#[derive(Debug, Clone)]
pub enum Region {
    Whole,
    Cube(DyadicCube),
    /// Sites inside `outer` but not inside `inner`.
    Annulus { inner: DyadicCube, outer: DyadicCube },
}

impl Region {
    pub fn sites(&self, lat: &Lattice) -> Vec<usize> {
        match self {
            Region::Whole => (0..lat.sites()).collect(),
            Region::Cube(c) => c.sites(lat),
            Region::Annulus { inner, outer } => outer
                .sites(lat)
                .into_iter()
                .filter(|&i| !inner.contains(lat, i))
                .collect(),
        }
    }
}

/// `(sum_{x in region} |f(x)|^q h^d)^(1/q)`.
pub fn lq_norm<F: SiteField + ?Sized>(field: &F, q: f64, region: &Region) -> Result<f64> {
    if !(q >= 1.0) {
        return Err(LabError::invalid(format!("norm exponent must be >= 1, got {q}")));
    }
    let lat = *field.lattice();
    let sum: f64 = match region {
        Region::Whole => (0..lat.sites()).map(|i| field.site_magnitude(i).powf(q)).sum(),
        _ => region
            .sites(&lat)
            .into_iter()
            .map(|i| field.site_magnitude(i).powf(q))
            .sum(),
    };
    Ok((sum * lat.cell_volume()).powf(1.0 / q))
}

/// Average of `|f|^q` over a region (no volume factor).
pub fn lq_average<F: SiteField + ?Sized>(field: &F, q: f64, region: &Region) -> f64 {
    let sites = region.sites(field.lattice());
    sites.iter().map(|&i| field.site_magnitude(i).powf(q)).sum::<f64>() / sites.len() as f64
}
