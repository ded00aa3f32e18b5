//! Linear solvers: FFT inversion of the periodic Laplacian, preconditioned
//! conjugate gradients for `-div(a grad u) = div h` on zero-mean fields, and
//! Dirichlet solves on sub-boxes.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::fft::LatticeFft;
use crate::lattice::{
    backward_diff_into, div, dot_raw, forward_diff_into, grad, lq_norm, mean_raw,
    sub_backward_diff, Lattice, Region, ScalarField, TensorField, VectorField,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub rel_tolerance: f64,
    /// Defaults to `10 n d` when unset.
    pub max_iterations: Option<usize>,
    /// Registered preconditioner name.
    pub preconditioner: String,
    /// Ellipticity used to scale the constant-coefficient preconditioner.
    pub lambda: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            rel_tolerance: 1e-10,
            max_iterations: None,
            preconditioner: "fft-laplace".into(),
            lambda: 0.5,
        }
    }
}

impl SolveOptions {
    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.rel_tolerance = tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tolerance > 0.0 && self.rel_tolerance <= 1e-4) {
            return Err(LabError::invalid(format!(
                "relative tolerance must lie in (0, 1e-4], got {}",
                self.rel_tolerance
            )));
        }
        Ok(())
    }

    fn iteration_cap(&self, lat: &Lattice) -> usize {
        self.max_iterations.unwrap_or(10 * lat.n() * lat.dim())
    }
}

/// A solution together with its convergence record.
#[derive(Debug, Clone)]
pub struct Solved {
    pub solution: ScalarField,
    pub iterations: usize,
    /// Final true relative residual `|b - A u| / |b|`.
    pub residual: f64,
}

pub trait Preconditioner {
    fn name(&self) -> &'static str;
    /// `z = M^{-1} r`.
    fn apply(&mut self, r: &[f64], z: &mut [f64]);
}

/// Inverse of `c (-Laplacian)` on zero-mean fields.
pub struct FftLaplace {
    fft: LatticeFft,
    inv_symbol: Vec<f64>,
    buf: Vec<Complex64>,
}

impl FftLaplace {
    pub fn new(lat: Lattice, coefficient: f64) -> Self {
        let fft = LatticeFft::new(lat);
        let inv_symbol = fft
            .neg_laplacian_symbol()
            .into_iter()
            .enumerate()
            .map(|(i, s)| if i == 0 { 0.0 } else { 1.0 / (coefficient * s) })
            .collect();
        FftLaplace {
            buf: vec![Complex64::default(); lat.sites()],
            fft,
            inv_symbol,
        }
    }
}

impl Preconditioner for FftLaplace {
    fn name(&self) -> &'static str {
        "fft-laplace"
    }

    fn apply(&mut self, r: &[f64], z: &mut [f64]) {
        for (b, v) in self.buf.iter_mut().zip(r) {
            *b = Complex64::new(*v, 0.0);
        }
        self.fft.forward(&mut self.buf);
        for (b, s) in self.buf.iter_mut().zip(&self.inv_symbol) {
            *b *= *s;
        }
        self.fft.inverse(&mut self.buf);
        for (zv, b) in z.iter_mut().zip(&self.buf) {
            *zv = b.re;
        }
    }
}

/// Diagonal scaling by the inverse stencil diagonal.
pub struct Jacobi {
    inv_diag: Vec<f64>,
}

impl Jacobi {
    pub fn new(inv_diag: Vec<f64>) -> Self {
        Jacobi { inv_diag }
    }

    pub fn for_periodic(a: &TensorField) -> Self {
        let lat = a.lattice;
        let d = lat.dim();
        let h2 = lat.spacing().powi(2);
        let inv_diag = (0..lat.sites())
            .map(|x| {
                let mut s = 0.0;
                for j in 0..d {
                    for l in 0..d {
                        s += a.get(x, j, l);
                    }
                    s += a.get(lat.shift(x, j, -1), j, j);
                }
                h2 / s
            })
            .collect();
        Jacobi { inv_diag }
    }
}

impl Preconditioner for Jacobi {
    fn name(&self) -> &'static str {
        "jacobi"
    }

    fn apply(&mut self, r: &[f64], z: &mut [f64]) {
        for ((zv, rv), w) in z.iter_mut().zip(r).zip(&self.inv_diag) {
            *zv = rv * w;
        }
    }
}

pub struct IdentityPreconditioner;

impl Preconditioner for IdentityPreconditioner {
    fn name(&self) -> &'static str {
        "identity"
    }

    fn apply(&mut self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
    }
}

pub type PreconditionerFactory = fn(&TensorField, &SolveOptions) -> Box<dyn Preconditioner>;

/// Name-indexed preconditioners for the periodic divergence-form solve.
pub struct PreconditionerRegistry {
    entries: Vec<(&'static str, PreconditionerFactory)>,
}

impl PreconditionerRegistry {
    pub fn with_builtins() -> Self {
        let mut r = PreconditionerRegistry { entries: Vec::new() };
        r.register("fft-laplace", |a, opts| {
            Box::new(FftLaplace::new(a.lattice, 0.5 * (opts.lambda + 1.0)))
        });
        r.register("jacobi", |a, _| Box::new(Jacobi::for_periodic(a)));
        r.register("identity", |_, _| Box::new(IdentityPreconditioner));
        r
    }

    pub fn register(&mut self, name: &'static str, factory: PreconditionerFactory) {
        self.entries.retain(|(n, _)| *n != name);
        self.entries.push((name, factory));
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }

    pub fn build(&self, name: &str, a: &TensorField, opts: &SolveOptions) -> Result<Box<dyn Preconditioner>> {
        self.entries
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, f)| f(a, opts))
            .ok_or_else(|| {
                LabError::invalid(format!(
                    "unknown preconditioner '{name}' (known: {})",
                    self.names().join(", ")
                ))
            })
    }
}

/// Scalar field inversion of the periodic `-Laplacian` with cached plans.
#[derive(Debug, Clone)]
pub struct PoissonSolver {
    fft: LatticeFft,
    inv_symbol: Vec<f64>,
}

impl PoissonSolver {
    pub fn new(lat: Lattice) -> Self {
        let fft = LatticeFft::new(lat);
        let inv_symbol = fft
            .neg_laplacian_symbol()
            .into_iter()
            .enumerate()
            .map(|(i, s)| if i == 0 { 0.0 } else { 1.0 / s })
            .collect();
        PoissonSolver { fft, inv_symbol }
    }

    /// Zero-mean `u` with `-Δu = rhs - mean(rhs)`.
    pub fn solve(&self, rhs: &ScalarField) -> ScalarField {
        let mut buf = self.fft.forward_real(&rhs.values);
        for (b, s) in buf.iter_mut().zip(&self.inv_symbol) {
            *b *= *s;
        }
        self.fft.inverse(&mut buf);
        ScalarField {
            lattice: rhs.lattice,
            values: buf.iter().map(|c| c.re).collect(),
        }
    }
}

pub fn poisson_solve(rhs: &ScalarField) -> ScalarField {
    PoissonSolver::new(rhs.lattice).solve(rhs)
}

/// `u -> -div(a grad u)` with reusable workspace.
pub struct DivFormOperator<'a> {
    a: &'a TensorField,
    grad: Vec<Vec<f64>>,
    flux: Vec<Vec<f64>>,
}

impl<'a> DivFormOperator<'a> {
    pub fn new(a: &'a TensorField) -> Self {
        let lat = a.lattice;
        DivFormOperator {
            a,
            grad: (0..lat.dim()).map(|_| lat.zeros()).collect(),
            flux: (0..lat.dim()).map(|_| lat.zeros()).collect(),
        }
    }

    pub fn apply(&mut self, u: &[f64], out: &mut [f64]) {
        let lat = self.a.lattice;
        for (j, g) in self.grad.iter_mut().enumerate() {
            forward_diff_into(&lat, u, j, g);
        }
        self.a.apply_into(&self.grad, &mut self.flux);
        out.iter_mut().for_each(|v| *v = 0.0);
        for (j, f) in self.flux.iter().enumerate() {
            sub_backward_diff(&lat, f, j, out);
        }
    }
}

/// `-div(a grad u)` as a field.
pub fn apply_divform(a: &TensorField, u: &ScalarField) -> ScalarField {
    let mut out = ScalarField::zeros(u.lattice);
    DivFormOperator::new(a).apply(&u.values, &mut out.values);
    out
}

/// Preconditioned conjugate gradients for a symmetric positive
/// (semi-)definite operator. With `project_mean` the iterates are kept in
/// the zero-mean subspace.
fn pcg(
    mut op: impl FnMut(&[f64], &mut [f64]),
    precond: &mut dyn Preconditioner,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
    project_mean: bool,
) -> Result<(usize, f64)> {
    let len = b.len();
    let b_norm = dot_raw(b, b).sqrt();
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok((0, 0.0));
    }
    let project = |v: &mut [f64]| {
        if project_mean {
            let m = mean_raw(v);
            v.iter_mut().for_each(|e| *e -= m);
        }
    };
    let mut r = vec![0.0; len];
    let mut z = vec![0.0; len];
    let mut p = vec![0.0; len];
    let mut ap = vec![0.0; len];
    let mut total = 0;
    let mut rel = f64::INFINITY;

    // Restarts from the true residual guard against recurrence drift.
    for _restart in 0..4 {
        op(x, &mut ap);
        for i in 0..len {
            r[i] = b[i] - ap[i];
        }
        project(&mut r);
        rel = dot_raw(&r, &r).sqrt() / b_norm;
        if rel <= tol {
            return Ok((total, rel));
        }
        precond.apply(&r, &mut z);
        project(&mut z);
        p.copy_from_slice(&z);
        let mut rz = dot_raw(&r, &z);
        while total < max_iter {
            op(&p, &mut ap);
            let pap = dot_raw(&p, &ap);
            if pap <= 0.0 {
                break;
            }
            let alpha = rz / pap;
            for i in 0..len {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            total += 1;
            if dot_raw(&r, &r).sqrt() / b_norm <= tol {
                break;
            }
            precond.apply(&r, &mut z);
            project(&mut z);
            let rz_new = dot_raw(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..len {
                p[i] = z[i] + beta * p[i];
            }
        }
        if total >= max_iter {
            break;
        }
    }
    op(x, &mut ap);
    for i in 0..len {
        r[i] = b[i] - ap[i];
    }
    project(&mut r);
    let final_rel = dot_raw(&r, &r).sqrt() / b_norm;
    if final_rel <= tol {
        Ok((total, final_rel))
    } else {
        Err(LabError::NoConvergence {
            iterations: total,
            residual: final_rel.min(rel.max(final_rel)),
        })
    }
}

/// Zero-mean `u` with `-div(a grad u) = div h`, or with `a^T` when
/// `transpose` is set.
pub fn solve_divform(
    a: &TensorField,
    h: &VectorField,
    transpose: bool,
    opts: &SolveOptions,
) -> Result<Solved> {
    let rhs = div(h);
    solve_divform_rhs(a, &rhs, transpose, opts)
}

/// As [`solve_divform`] with an explicit zero-mean right-hand side.
pub fn solve_divform_rhs(
    a: &TensorField,
    rhs: &ScalarField,
    transpose: bool,
    opts: &SolveOptions,
) -> Result<Solved> {
    opts.validate()?;
    let lat = a.lattice;
    let at;
    let coeff = if transpose && !a.symmetric {
        at = a.transpose();
        &at
    } else {
        a
    };
    let mut b = rhs.values.clone();
    let m = mean_raw(&b);
    b.iter_mut().for_each(|v| *v -= m);
    let mut precond =
        PreconditionerRegistry::with_builtins().build(&opts.preconditioner, coeff, opts)?;
    let mut op = DivFormOperator::new(coeff);
    let mut x = lat.zeros();
    let (iterations, residual) = pcg(
        |u, out| op.apply(u, out),
        precond.as_mut(),
        &b,
        &mut x,
        opts.rel_tolerance,
        opts.iteration_cap(&lat),
        true,
    )?;
    Ok(Solved {
        solution: ScalarField { lattice: lat, values: x },
        iterations,
        residual,
    })
}

/// A rectangular block of sites `corner .. corner + side` per axis (grid
/// units, wrapped periodically). Not required to be dyadic.
#[derive(Debug, Clone, PartialEq)]
pub struct SubBox {
    pub corner: Vec<i64>,
    pub side: usize,
}

impl SubBox {
    pub fn centered(lat: &Lattice, half_side: usize) -> Self {
        SubBox {
            corner: vec![-(half_side as i64); lat.dim()],
            side: 2 * half_side,
        }
    }

    fn local_count(&self) -> usize {
        self.side.pow(self.corner.len() as u32)
    }

    fn local_coords(&self, mut k: usize) -> Vec<usize> {
        (0..self.corner.len())
            .map(|_| {
                let c = k % self.side;
                k /= self.side;
                c
            })
            .collect()
    }

    pub fn global_index(&self, lat: &Lattice, local: &[usize]) -> usize {
        let c: Vec<i64> = local
            .iter()
            .zip(&self.corner)
            .map(|(l, c)| *l as i64 + c)
            .collect();
        lat.index(&c)
    }

    pub fn is_boundary(&self, local: &[usize]) -> bool {
        local.iter().any(|&c| c == 0 || c + 1 == self.side)
    }
}

/// Dirichlet problem `-div(a grad u) = 0` in the interior of `sub`, `u` equal
/// to `boundary` on its outer layer. Returns a full-lattice field that
/// vanishes outside the sub-box.
pub fn solve_dirichlet(
    a: &TensorField,
    boundary: &ScalarField,
    sub: &SubBox,
    opts: &SolveOptions,
) -> Result<Solved> {
    opts.validate()?;
    let lat = a.lattice;
    let d = lat.dim();
    if sub.side < 3 || sub.side >= lat.n() {
        return Err(LabError::invalid("sub-box must have 3 <= side < n"));
    }
    let m = sub.side;
    let count = sub.local_count();
    let h = lat.spacing();
    let stride: Vec<usize> = (0..d).map(|a| m.pow(a as u32)).collect();
    let coords: Vec<Vec<usize>> = (0..count).map(|k| sub.local_coords(k)).collect();
    let global: Vec<usize> = coords.iter().map(|c| sub.global_index(&lat, c)).collect();
    let interior: Vec<bool> = coords.iter().map(|c| !sub.is_boundary(c)).collect();
    // Flux sites need all forward neighbours inside the box.
    let has_flux: Vec<bool> = coords.iter().map(|c| c.iter().all(|&v| v + 1 < m)).collect();

    let local_a: Vec<Vec<f64>> = (0..count).map(|k| a.matrix_at(global[k])).collect();

    let apply = |u: &[f64], out: &mut [f64]| {
        let mut flux = vec![0.0; count * d];
        for k in 0..count {
            if !has_flux[k] {
                continue;
            }
            let mut g = [0.0; 3];
            for (l, gl) in g.iter_mut().enumerate().take(d) {
                *gl = (u[k + stride[l]] - u[k]) / h;
            }
            for j in 0..d {
                flux[k * d + j] = (0..d).map(|l| local_a[k][j * d + l] * g[l]).sum();
            }
        }
        for k in 0..count {
            if !interior[k] {
                out[k] = 0.0;
                continue;
            }
            let mut s = 0.0;
            for j in 0..d {
                s -= (flux[k * d + j] - flux[(k - stride[j]) * d + j]) / h;
            }
            out[k] = s;
        }
    };

    let mut ub = vec![0.0; count];
    for k in 0..count {
        if !interior[k] {
            let v = boundary.values[global[k]];
            if !v.is_finite() {
                return Err(LabError::invalid("non-finite boundary value"));
            }
            ub[k] = v;
        }
    }
    let mut b = vec![0.0; count];
    apply(&ub, &mut b);
    b.iter_mut().for_each(|v| *v = -*v);

    let unit: Vec<f64> = (0..count).map(|k| if interior[k] { 1.0 } else { 0.0 }).collect();
    let inv_diag: Vec<f64> = (0..count)
        .map(|k| {
            if !interior[k] {
                return 0.0;
            }
            let mut s = 0.0;
            for j in 0..d {
                for l in 0..d {
                    s += local_a[k][j * d + l];
                }
                s += local_a[k - stride[j]][j * d + j];
            }
            h * h / s
        })
        .collect();
    let mut precond = Jacobi::new(inv_diag);
    let mut x = vec![0.0; count];
    let masked = |u: &[f64], out: &mut [f64]| {
        let tmp: Vec<f64> = u.iter().zip(&unit).map(|(a, b)| a * b).collect();
        apply(&tmp, out);
    };
    let (iterations, residual) = pcg(
        masked,
        &mut precond,
        &b,
        &mut x,
        opts.rel_tolerance,
        opts.max_iterations.unwrap_or(10 * m * d).max(4 * count.min(100_000)),
        false,
    )?;
    let mut out = ScalarField::zeros(lat);
    for k in 0..count {
        out.values[global[k]] = if interior[k] { x[k] } else { ub[k] };
    }
    Ok(Solved {
        solution: out,
        iterations,
        residual,
    })
}

/// `|grad w|_p / |h|_p` for `-div(a grad w) = div h`; zero for `h = 0`.
pub fn meyers_ratio(a: &TensorField, h: &VectorField, p: f64, opts: &SolveOptions) -> Result<f64> {
    let hn = lq_norm(h, p, &Region::Whole)?;
    if hn == 0.0 {
        return Ok(0.0);
    }
    let w = solve_divform(a, h, false, opts)?;
    Ok(lq_norm(&grad(&w.solution), p, &Region::Whole)? / hn)
}

/// Relative residual `|div(a grad u) + div h| / |div h|` of a candidate.
pub fn divform_residual(a: &TensorField, u: &ScalarField, h: &VectorField) -> f64 {
    let rhs = div(h);
    let au = apply_divform(a, u);
    let num: f64 = au
        .values
        .iter()
        .zip(&rhs.values)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let den = rhs.values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

#[allow(dead_code)]
fn backward_partial_raw(lat: &Lattice, u: &[f64], axis: usize) -> Vec<f64> {
    let mut out = lat.zeros();
    backward_diff_into(lat, u, axis, &mut out);
    out
}
