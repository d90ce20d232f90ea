//! Periodic grid geometry, the retained wavenumber lattice and FFT plans.
//!
//! Fourier coefficients are stored in FFT order on an `N^d` lattice: axis index
//! `i` carries wavenumber `i` for `i <= N/2` and `i - N` otherwise. Nonlinear
//! products are evaluated on a finer physical grid of `M^d` nodes with
//! `M >= dealias * N`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{CbfedError, Result};

/// Geometry of the periodic domain and its discretisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Spatial dimension, 2 or 3.
    pub dim: usize,
    /// Fourier modes per axis; even and at least 8.
    pub n: usize,
    /// Torus period.
    pub length: f64,
    /// Oversampling factor of the physical grid, at least 3/2.
    pub dealias: f64,
}

impl GridSpec {
    /// Grid with the minimal 3/2 dealiasing factor.
    pub fn new(dim: usize, n: usize, length: f64) -> Result<Self> {
        Self::with_dealias(dim, n, length, 1.5)
    }

    /// Grid with an explicit oversampling factor.
    pub fn with_dealias(dim: usize, n: usize, length: f64, dealias: f64) -> Result<Self> {
        let spec = GridSpec {
            dim,
            n,
            length,
            dealias,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        if self.dim != 2 && self.dim != 3 {
            return Err(CbfedError::Config(format!(
                "dimension must be 2 or 3, got {}",
                self.dim
            )));
        }
        if self.n < 8 || self.n % 2 != 0 {
            return Err(CbfedError::Config(format!(
                "modes per axis must be even and >= 8, got {}",
                self.n
            )));
        }
        if !(self.length > 0.0 && self.length.is_finite()) {
            return Err(CbfedError::Config(format!(
                "torus period must be positive, got {}",
                self.length
            )));
        }
        if !(self.dealias >= 1.5 && self.dealias.is_finite()) {
            return Err(CbfedError::Config(format!(
                "dealias factor must be >= 1.5, got {}",
                self.dealias
            )));
        }
        Ok(())
    }

    /// Physical nodes per axis: `ceil(dealias * N)` rounded up to even.
    pub fn physical_n(&self) -> usize {
        let m = (self.dealias * self.n as f64 - 1e-9).ceil() as usize;
        m + m % 2
    }

    /// Volume `L^d` of the torus.
    pub fn volume(&self) -> f64 {
        self.length.powi(self.dim as i32)
    }

    /// Number of lattice points `N^d` per component.
    pub fn modes(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// Number of physical nodes `M^d` per component.
    pub fn nodes(&self) -> usize {
        self.physical_n().pow(self.dim as u32)
    }

    /// Scale `2π/L` converting integer wavenumbers to angular ones.
    pub fn wave_scale(&self) -> f64 {
        2.0 * PI / self.length
    }
}

/// Grid context: lattice tables and FFT plans shared by all fields on a grid.
///
/// Construct once with [`Grid::new`] and share through the returned `Arc`.
pub struct Grid {
    spec: GridSpec,
    m: usize,
    kvec: Vec<[i32; 3]>,
    ksq: Vec<f64>,
    active: Vec<bool>,
    neg: Vec<usize>,
    node_of: Vec<usize>,
    active_list: Vec<usize>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Grid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Grid")
            .field("spec", &self.spec)
            .field("physical_n", &self.m)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
    }
}

fn wavenumber(i: usize, n: usize) -> i32 {
    if i <= n / 2 {
        i as i32
    } else {
        i as i32 - n as i32
    }
}

impl Grid {
    /// Builds lattice tables and FFT plans for `spec`.
    pub fn new(spec: GridSpec) -> Result<Arc<Self>> {
        spec.validate()?;
        let n = spec.n;
        let d = spec.dim;
        let m = spec.physical_n();
        let modes = spec.modes();
        let half = (n / 2) as i32;
        let mut kvec = Vec::with_capacity(modes);
        let mut ksq = Vec::with_capacity(modes);
        let mut active = Vec::with_capacity(modes);
        let mut node_of = Vec::with_capacity(modes);
        let scale2 = spec.wave_scale().powi(2);
        for flat in 0..modes {
            let mut rem = flat;
            let mut k = [0i32; 3];
            for a in (0..d).rev() {
                k[a] = wavenumber(rem % n, n);
                rem /= n;
            }
            let mut node = 0usize;
            for &ka in k.iter().take(d) {
                node = node * m + ka.rem_euclid(m as i32) as usize;
            }
            let k2: i64 = k.iter().map(|&v| (v as i64) * (v as i64)).sum();
            kvec.push(k);
            ksq.push(scale2 * k2 as f64);
            active.push(k.iter().take(d).all(|&v| v.abs() < half));
            node_of.push(node);
        }
        let mut neg = vec![0usize; modes];
        for (flat, k) in kvec.iter().enumerate() {
            let mut idx = 0usize;
            for &ka in k.iter().take(d) {
                idx = idx * n + (-ka).rem_euclid(n as i32) as usize;
            }
            neg[flat] = idx;
        }
        let active_list = (0..modes).filter(|&i| active[i]).collect();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(m);
        let inv = planner.plan_fft_inverse(m);
        Ok(Arc::new(Grid {
            spec,
            m,
            kvec,
            ksq,
            active,
            neg,
            node_of,
            active_list,
            fwd,
            inv,
        }))
    }

    /// Geometry of this grid.
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    /// Spatial dimension.
    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    /// Modes per axis.
    pub fn n(&self) -> usize {
        self.spec.n
    }

    /// Physical nodes per axis.
    pub fn physical_n(&self) -> usize {
        self.m
    }

    /// Lattice points per component.
    pub fn modes(&self) -> usize {
        self.kvec.len()
    }

    /// Physical nodes per component.
    pub fn nodes(&self) -> usize {
        self.m.pow(self.spec.dim as u32)
    }

    /// Integer wavenumber at a flat lattice index (unused axes are 0).
    pub fn k(&self, idx: usize) -> [i32; 3] {
        self.kvec[idx]
    }

    /// Stokes eigenvalue `(2π/L)^2 |k|^2` at a flat lattice index.
    pub fn lambda(&self, idx: usize) -> f64 {
        self.ksq[idx]
    }

    /// All Stokes eigenvalues in lattice order.
    pub fn lambdas(&self) -> &[f64] {
        &self.ksq
    }

    /// Whether the lattice point carries a degree of freedom.
    ///
    /// Nyquist planes (`|k_j| = N/2`) have no real-valued partner on the
    /// refined grid and are kept at zero.
    pub fn is_active(&self, idx: usize) -> bool {
        self.active[idx]
    }

    /// Flat indices of all active lattice points.
    pub fn active_indices(&self) -> &[usize] {
        &self.active_list
    }

    /// Flat index of `-k`.
    pub fn neg(&self, idx: usize) -> usize {
        self.neg[idx]
    }

    /// Flat index of a wavenumber, if it lies in the active lattice.
    pub fn index_of(&self, k: [i32; 3]) -> Option<usize> {
        let n = self.spec.n as i32;
        let mut idx = 0usize;
        for &ka in k.iter().take(self.spec.dim) {
            if ka.abs() >= n / 2 {
                return None;
            }
            idx = idx * self.spec.n + ka.rem_euclid(n) as usize;
        }
        if k.iter().skip(self.spec.dim).any(|&v| v != 0) {
            return None;
        }
        Some(idx)
    }

    /// Physical coordinates of a node.
    pub fn node_coords(&self, node: usize) -> [f64; 3] {
        let d = self.spec.dim;
        let h = self.spec.length / self.m as f64;
        let mut rem = node;
        let mut x = [0.0; 3];
        for a in (0..d).rev() {
            x[a] = (rem % self.m) as f64 * h;
            rem /= self.m;
        }
        x
    }

    /// Quadrature weight `L^d / M^d` of a physical node.
    pub fn node_weight(&self) -> f64 {
        self.spec.volume() / self.nodes() as f64
    }

    /// In-place multidimensional FFT over the physical grid (unnormalised).
    fn fft_nd(&self, buf: &mut [Complex64], inverse: bool) {
        let plan = if inverse { &self.inv } else { &self.fwd };
        let m = self.m;
        let d = self.spec.dim;
        let nodes = buf.len();
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        plan.process_with_scratch(buf, &mut scratch);
        if d == 1 {
            return;
        }
        let mut lines = vec![Complex64::new(0.0, 0.0); nodes];
        for axis in 0..d - 1 {
            let stride = m.pow((d - 1 - axis) as u32);
            let outer = nodes / (m * stride);
            for o in 0..outer {
                let base = o * m * stride;
                for j in 0..m {
                    let src = &buf[base + j * stride..base + (j + 1) * stride];
                    for (s, v) in src.iter().enumerate() {
                        lines[(o * stride + s) * m + j] = *v;
                    }
                }
            }
            plan.process_with_scratch(&mut lines, &mut scratch);
            for o in 0..outer {
                let base = o * m * stride;
                for j in 0..m {
                    let dst = &mut buf[base + j * stride..base + (j + 1) * stride];
                    for (s, v) in dst.iter_mut().enumerate() {
                        *v = lines[(o * stride + s) * m + j];
                    }
                }
            }
        }
    }

    /// Evaluates real fields given by Hermitian coefficient arrays on the
    /// physical grid. Two fields share one complex transform.
    pub fn synthesize(&self, coeffs: &[&[Complex64]]) -> Vec<Vec<f64>> {
        let nodes = self.nodes();
        let mut out = Vec::with_capacity(coeffs.len());
        for pair in coeffs.chunks(2) {
            let mut buf = vec![Complex64::new(0.0, 0.0); nodes];
            let i = Complex64::new(0.0, 1.0);
            for &idx in &self.active_list {
                let mut v = pair[0][idx];
                if pair.len() == 2 {
                    v += i * pair[1][idx];
                }
                buf[self.node_of[idx]] = v;
            }
            self.fft_nd(&mut buf, true);
            out.push(buf.iter().map(|z| z.re).collect());
            if pair.len() == 2 {
                out.push(buf.iter().map(|z| z.im).collect());
            }
        }
        out
    }

    /// Fourier coefficients of real physical fields, truncated to the active
    /// lattice. Two fields share one complex transform.
    pub fn analyze(&self, values: &[&[f64]]) -> Vec<Vec<Complex64>> {
        let nodes = self.nodes();
        let modes = self.modes();
        let norm = 1.0 / nodes as f64;
        let mut out = Vec::with_capacity(values.len());
        for pair in values.chunks(2) {
            let mut buf: Vec<Complex64> = if pair.len() == 2 {
                pair[0]
                    .iter()
                    .zip(pair[1].iter())
                    .map(|(&a, &b)| Complex64::new(a, b))
                    .collect()
            } else {
                pair[0].iter().map(|&a| Complex64::new(a, 0.0)).collect()
            };
            self.fft_nd(&mut buf, false);
            let mut a = vec![Complex64::new(0.0, 0.0); modes];
            let mut b = vec![Complex64::new(0.0, 0.0); modes];
            for &idx in &self.active_list {
                let f = buf[self.node_of[idx]] * norm;
                let g = buf[self.node_of[self.neg[idx]]].conj() * norm;
                if pair.len() == 2 {
                    a[idx] = (f + g) * 0.5;
                    b[idx] = (f - g) * Complex64::new(0.0, -0.5);
                } else {
                    a[idx] = (f + g) * 0.5;
                }
            }
            out.push(a);
            if pair.len() == 2 {
                out.push(b);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn physical_grid_is_even_and_oversampled() {
        let g = GridSpec::new(2, 64, 1.0).unwrap();
        assert_eq!(g.physical_n(), 96);
        let g = GridSpec::with_dealias(2, 10, 1.0, 1.5).unwrap();
        assert_eq!(g.physical_n(), 16);
        let g = GridSpec::with_dealias(2, 8, 1.0, 2.0).unwrap();
        assert_eq!(g.physical_n(), 16);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(GridSpec::new(1, 16, 1.0).is_err());
        assert!(GridSpec::new(2, 6, 1.0).is_err());
        assert!(GridSpec::new(2, 17, 1.0).is_err());
        assert!(GridSpec::new(2, 16, 0.0).is_err());
        assert!(GridSpec::with_dealias(2, 16, 1.0, 1.2).is_err());
    }

    #[test]
    fn lattice_tables_are_consistent() {
        let grid = Grid::new(GridSpec::new(3, 8, 2.0).unwrap()).unwrap();
        for idx in 0..grid.modes() {
            let k = grid.k(idx);
            let nk = grid.k(grid.neg(idx));
            if grid.is_active(idx) {
                assert_eq!([-k[0], -k[1], -k[2]], nk);
                assert_eq!(grid.index_of(k), Some(idx));
            }
            let expect = (PI).powi(2) * (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
            assert!((grid.lambda(idx) - expect).abs() < 1e-12 * expect.max(1.0));
        }
        assert_eq!(grid.active_indices().len(), 7usize.pow(3));
    }
}
