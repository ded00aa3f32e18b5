//! Multi-dimensional FFT on the periodic lattice, built from 1D transforms
//! applied axis by axis. Forward transforms are unnormalized; the inverse
//! divides by the number of sites.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::lattice::Lattice;

#[derive(Clone)]
pub struct LatticeFft {
    lattice: Lattice,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for LatticeFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LatticeFft").field("lattice", &self.lattice).finish()
    }
}

impl LatticeFft {
    pub fn new(lattice: Lattice) -> Self {
        let mut planner = FftPlanner::new();
        LatticeFft {
            forward: planner.plan_fft_forward(lattice.n()),
            inverse: planner.plan_fft_inverse(lattice.n()),
            lattice,
        }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, &self.forward);
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, &self.inverse);
        let s = 1.0 / self.lattice.sites() as f64;
        data.iter_mut().for_each(|c| *c *= s);
    }

    pub fn forward_real(&self, values: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }

    fn transform(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let lat = &self.lattice;
        let n = lat.n();
        assert_eq!(data.len(), lat.sites());
        let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
        // Axis 0 is contiguous.
        plan.process_with_scratch(data, &mut scratch);
        let mut line = vec![Complex64::default(); n];
        for axis in 1..lat.dim() {
            let s = lat.stride(axis);
            let block = s * n;
            let mut base = 0;
            while base < data.len() {
                for k in 0..s {
                    for (c, slot) in line.iter_mut().enumerate() {
                        *slot = data[base + c * s + k];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (c, v) in line.iter().enumerate() {
                        data[base + c * s + k] = *v;
                    }
                }
                base += block;
            }
        }
    }

    /// Integer wave numbers of a linear index, each in `[-n/2, n/2)`.
    pub fn wave_numbers(&self, idx: usize) -> [i64; crate::lattice::MAX_DIM] {
        self.lattice.signed_coords(idx)
    }

    /// Symbol of the discrete `-Laplacian`: `(4/h^2) sum_j sin^2(pi k_j / n)`.
    pub fn neg_laplacian_symbol(&self) -> Vec<f64> {
        let lat = &self.lattice;
        let n = lat.n();
        let h = lat.spacing();
        let s2: Vec<f64> = (0..n)
            .map(|k| (std::f64::consts::PI * k as f64 / n as f64).sin().powi(2))
            .collect();
        (0..lat.sites())
            .map(|idx| {
                let c = lat.coords(idx);
                4.0 / (h * h) * (0..lat.dim()).map(|a| s2[c[a]]).sum::<f64>()
            })
            .collect()
    }
}
