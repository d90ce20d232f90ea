//! Truncated Fourier representation of real periodic vector fields.
//!
//! A field is `y(x) = Σ_k ŷ_k e^{2πi k·x/L}` over the active lattice, so
//! Parseval reads `∫|y|² = L^d Σ_k |ŷ_k|²`. The zero mode is carried like any
//! other mode.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{CbfedError, Result};
use crate::grid::{Grid, GridSpec};
use crate::rng::{keyed_stream, wavenumber_counter, DOMAIN_FIELD};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Snapshot file magic bytes.
pub const SNAPSHOT_MAGIC: &[u8; 4] = b"CBFD";
/// Snapshot format version.
pub const SNAPSHOT_VERSION: u32 = 1;

/// Norms available on fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Norm {
    /// `L²` norm, computed by Parseval.
    H,
    /// Full `H¹` norm: `(‖f‖² + ‖∇f‖²)^{1/2}`.
    V,
    /// `‖∇f‖_H`.
    GradH,
    /// `L^p` norm by quadrature on the physical grid.
    Lp(f64),
    /// Graph norm of the Stokes operator: `(‖f‖² + ‖Af‖²)^{1/2}`.
    DA,
}

/// Real `d`-vector field stored as Fourier coefficients on a [`Grid`].
#[derive(Clone)]
pub struct FourierField {
    grid: Arc<Grid>,
    comps: Vec<Vec<Complex64>>,
    div_free: bool,
}

impl std::fmt::Debug for FourierField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FourierField")
            .field("grid", self.grid.spec())
            .field("div_free", &self.div_free)
            .field("norm_h", &self.norm_h())
            .finish()
    }
}

/// Field values at the nodes of the dealiased physical grid.
#[derive(Clone, Debug)]
pub struct PhysicalField {
    grid: Arc<Grid>,
    values: Vec<Vec<f64>>,
}

impl PhysicalField {
    /// Wraps nodal values; every component must have `M^d` entries.
    pub fn new(grid: Arc<Grid>, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != grid.dim() || values.iter().any(|v| v.len() != grid.nodes()) {
            return Err(CbfedError::Config(format!(
                "physical field needs {} components of {} nodes",
                grid.dim(),
                grid.nodes()
            )));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(CbfedError::Domain("physical field has non-finite values".into()));
        }
        Ok(PhysicalField { grid, values })
    }

    /// Grid the values live on.
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// Component `c` at every node.
    pub fn component(&self, c: usize) -> &[f64] {
        &self.values[c]
    }

    /// All components.
    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// Number of collocation nodes.
    pub fn node_count(&self) -> usize {
        self.grid.nodes()
    }

    /// Largest pointwise Euclidean magnitude.
    pub fn max_magnitude(&self) -> f64 {
        (0..self.node_count())
            .map(|j| self.values.iter().map(|v| v[j] * v[j]).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Coefficients of the field truncated to the active lattice.
    pub fn to_fourier(&self) -> FourierField {
        let refs: Vec<&[f64]> = self.values.iter().map(|v| v.as_slice()).collect();
        let comps = self.grid.analyze(&refs);
        FourierField {
            grid: self.grid.clone(),
            comps,
            div_free: false,
        }
    }
}

impl FourierField {
    /// The zero field (flagged divergence-free).
    pub fn zeros(grid: &Arc<Grid>) -> Self {
        FourierField {
            grid: grid.clone(),
            comps: vec![vec![ZERO; grid.modes()]; grid.dim()],
            div_free: true,
        }
    }

    /// Builds a field from raw component arrays in lattice order.
    ///
    /// Inactive (Nyquist) entries are cleared; Hermitian symmetry is the
    /// caller's responsibility and can be checked with
    /// [`FourierField::hermitian_defect`].
    pub fn from_components(grid: &Arc<Grid>, mut comps: Vec<Vec<Complex64>>) -> Result<Self> {
        if comps.len() != grid.dim() || comps.iter().any(|c| c.len() != grid.modes()) {
            return Err(CbfedError::Config(format!(
                "expected {} components of {} coefficients",
                grid.dim(),
                grid.modes()
            )));
        }
        for c in comps.iter_mut() {
            for (idx, v) in c.iter_mut().enumerate() {
                if !grid.is_active(idx) {
                    *v = ZERO;
                }
            }
        }
        Ok(FourierField {
            grid: grid.clone(),
            comps,
            div_free: false,
        })
    }

    /// Field whose coefficient at wavenumber `k` is `f(k)`; the result is
    /// made Hermitian by averaging `f(k)` with `conj(f(-k))`.
    pub fn from_fn<F>(grid: &Arc<Grid>, f: F) -> Self
    where
        F: Fn([i32; 3]) -> [Complex64; 3],
    {
        let d = grid.dim();
        let mut raw = vec![vec![ZERO; grid.modes()]; d];
        for &idx in grid.active_indices() {
            let v = f(grid.k(idx));
            for c in 0..d {
                raw[c][idx] = v[c];
            }
        }
        let mut out = FourierField {
            grid: grid.clone(),
            comps: raw.clone(),
            div_free: false,
        };
        for &idx in grid.active_indices() {
            let neg = grid.neg(idx);
            for c in 0..d {
                out.comps[c][idx] = (raw[c][idx] + raw[c][neg].conj()) * 0.5;
            }
        }
        out
    }

    /// Random divergence-free field with independent Gaussian coefficients
    /// of standard deviation `spectrum(|k|)`.
    ///
    /// Each wavenumber draws from its own keyed stream, so the same seed
    /// yields the same field restricted to any grid resolution.
    pub fn random<S>(grid: &Arc<Grid>, seed: u64, spectrum: S) -> Self
    where
        S: Fn(f64) -> f64,
    {
        let d = grid.dim();
        let f = FourierField::from_fn(grid, |k| {
            let kn = ((k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64).sqrt();
            let amp = spectrum(kn);
            let mut out = [ZERO; 3];
            if amp == 0.0 {
                return out;
            }
            let mut rng = keyed_stream(seed, DOMAIN_FIELD, 0, wavenumber_counter(k));
            for v in out.iter_mut().take(d) {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                *v = Complex64::new(re, im) * amp;
            }
            out
        });
        f.leray_project()
    }

    /// Random smooth divergence-free field: Gaussian spectrum of width
    /// `kmax/2` cut off at `|k| <= kmax`, scaled to `‖y‖_H = amplitude`.
    pub fn random_smooth(grid: &Arc<Grid>, seed: u64, kmax: f64, amplitude: f64) -> Self {
        let f = FourierField::random(grid, seed, |kn| {
            if kn <= kmax {
                (-(2.0 * kn / kmax).powi(2)).exp()
            } else {
                0.0
            }
        });
        let n = f.norm_h();
        if n > 0.0 {
            f.scale(amplitude / n)
        } else {
            f
        }
    }

    /// Constant field with the given vector value.
    pub fn constant(grid: &Arc<Grid>, value: &[f64]) -> Result<Self> {
        if value.len() != grid.dim() {
            return Err(CbfedError::Config(format!(
                "constant field needs {} components",
                grid.dim()
            )));
        }
        let mut f = FourierField::zeros(grid);
        let zero = grid.index_of([0, 0, 0]).expect("zero mode is always active");
        for (c, &v) in value.iter().enumerate() {
            f.comps[c][zero] = Complex64::new(v, 0.0);
        }
        Ok(f)
    }

    /// Shear flow `(a·sin(2π m x₂/L), 0[, 0])`, an eigenfunction of the Stokes
    /// operator with `B(y) = 0`.
    pub fn shear(grid: &Arc<Grid>, amplitude: f64, wavenumber: i32) -> Result<Self> {
        let k = [0, wavenumber, 0];
        let kn = [0, -wavenumber, 0];
        let (Some(ip), Some(im)) = (grid.index_of(k), grid.index_of(kn)) else {
            return Err(CbfedError::Config(format!(
                "shear wavenumber {wavenumber} is not resolved"
            )));
        };
        let mut f = FourierField::zeros(grid);
        if wavenumber == 0 {
            return Ok(f);
        }
        f.comps[0][ip] = Complex64::new(0.0, -0.5 * amplitude);
        f.comps[0][im] = Complex64::new(0.0, 0.5 * amplitude);
        Ok(f)
    }

    /// Grid context.
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// Grid geometry.
    pub fn spec(&self) -> &GridSpec {
        self.grid.spec()
    }

    /// Whether the field carries the divergence-free flag.
    pub fn is_div_free(&self) -> bool {
        self.div_free
    }

    /// Sets the divergence-free flag after checking the per-mode defect.
    pub fn mark_div_free(mut self) -> Result<Self> {
        let defect = self.divergence_defect();
        if defect > 1e-10 {
            return Err(CbfedError::Domain(format!(
                "field is not divergence-free (defect {defect:e})"
            )));
        }
        self.div_free = true;
        Ok(self)
    }

    /// Coefficients of component `c` in lattice order.
    pub fn component(&self, c: usize) -> &[Complex64] {
        &self.comps[c]
    }

    /// All component arrays.
    pub fn components(&self) -> &[Vec<Complex64>] {
        &self.comps
    }

    /// Coefficient vector at a flat lattice index.
    pub fn coeff(&self, idx: usize) -> [Complex64; 3] {
        let mut v = [ZERO; 3];
        for (c, comp) in self.comps.iter().enumerate() {
            v[c] = comp[idx];
        }
        v
    }

    /// Coefficient vector at wavenumber `k`, if resolved.
    pub fn coeff_at(&self, k: [i32; 3]) -> Option<[Complex64; 3]> {
        self.grid.index_of(k).map(|idx| self.coeff(idx))
    }

    fn same_grid(&self, other: &FourierField) {
        assert!(
            Arc::ptr_eq(&self.grid, &other.grid) || self.grid.spec() == other.grid.spec(),
            "fields live on different grids"
        );
    }

    /// Mutable coefficient arrays for in-crate kernels.
    pub(crate) fn components_mut(&mut self) -> &mut [Vec<Complex64>] {
        &mut self.comps
    }

    /// Overrides the divergence-free flag for in-crate kernels.
    pub(crate) fn set_div_free(&mut self, flag: bool) {
        self.div_free = flag;
    }

    /// Applies `f(idx, coefficient)` to every coefficient of every component.
    pub fn map_modes<F>(&self, f: F) -> Self
    where
        F: Fn(usize, Complex64) -> Complex64,
    {
        let comps = self
            .comps
            .iter()
            .map(|c| c.iter().enumerate().map(|(i, &v)| f(i, v)).collect())
            .collect();
        FourierField {
            grid: self.grid.clone(),
            comps,
            div_free: self.div_free,
        }
    }

    /// Multiplies each mode by a real factor depending on its lattice index.
    pub fn scale_modes<F>(&self, factor: F) -> Self
    where
        F: Fn(usize) -> f64,
    {
        let factors: Vec<f64> = (0..self.grid.modes()).map(factor).collect();
        self.map_modes(|i, v| v * factors[i])
    }

    /// `s · self`.
    pub fn scale(&self, s: f64) -> Self {
        self.map_modes(|_, v| v * s)
    }

    /// `self + s · other`.
    pub fn axpy(&self, s: f64, other: &FourierField) -> Self {
        self.same_grid(other);
        let comps = self
            .comps
            .iter()
            .zip(&other.comps)
            .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| x + y * s).collect())
            .collect();
        FourierField {
            grid: self.grid.clone(),
            comps,
            div_free: self.div_free && other.div_free,
        }
    }

    /// In-place `self += s · other`.
    pub fn add_scaled(&mut self, s: f64, other: &FourierField) {
        self.same_grid(other);
        for (a, b) in self.comps.iter_mut().zip(&other.comps) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y * s;
            }
        }
        self.div_free = self.div_free && other.div_free;
    }

    /// `H` inner product `(f, g) = L^d Σ Re(f̂_k · conj(ĝ_k))`.
    pub fn inner_h(&self, other: &FourierField) -> f64 {
        self.same_grid(other);
        let s: f64 = self
            .comps
            .iter()
            .zip(&other.comps)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x * y.conj()).re).sum::<f64>())
            .sum();
        s * self.grid.spec().volume()
    }

    /// Weighted spectral sum `L^d Σ w(idx) |f̂_k|²`.
    pub fn weighted_energy<F>(&self, w: F) -> f64
    where
        F: Fn(usize) -> f64,
    {
        let mut s = 0.0;
        for idx in 0..self.grid.modes() {
            let e: f64 = self.comps.iter().map(|c| c[idx].norm_sqr()).sum();
            if e != 0.0 {
                s += w(idx) * e;
            }
        }
        s * self.grid.spec().volume()
    }

    /// `‖f‖_H`.
    pub fn norm_h(&self) -> f64 {
        self.weighted_energy(|_| 1.0).sqrt()
    }

    /// `‖∇f‖_H`.
    pub fn norm_grad(&self) -> f64 {
        let g = &self.grid;
        self.weighted_energy(|i| g.lambda(i)).sqrt()
    }

    /// `‖Af‖_H` with `A` acting as `λ_k` per mode.
    pub fn norm_stokes(&self) -> f64 {
        let g = &self.grid;
        self.weighted_energy(|i| g.lambda(i).powi(2)).sqrt()
    }

    /// Dual-norm surrogate `‖(I + A)^{-1/2} f‖_H`.
    pub fn norm_dual(&self) -> f64 {
        let g = &self.grid;
        self.weighted_energy(|i| 1.0 / (1.0 + g.lambda(i))).sqrt()
    }

    /// Evaluates one of the supported norms.
    pub fn norm(&self, which: Norm) -> Result<f64> {
        match which {
            Norm::H => Ok(self.norm_h()),
            Norm::GradH => Ok(self.norm_grad()),
            Norm::V => Ok((self.norm_h().powi(2) + self.norm_grad().powi(2)).sqrt()),
            Norm::DA => Ok((self.norm_h().powi(2) + self.norm_stokes().powi(2)).sqrt()),
            Norm::Lp(p) => {
                if !(p >= 1.0) || !p.is_finite() {
                    return Err(CbfedError::Domain(format!("L^p norm needs p >= 1, got {p}")));
                }
                Ok(self.to_physical().integral_abs_pow(p).powf(1.0 / p))
            }
        }
    }

    /// Values on the dealiased physical grid.
    pub fn to_physical(&self) -> PhysicalField {
        let refs: Vec<&[Complex64]> = self.comps.iter().map(|c| c.as_slice()).collect();
        PhysicalField {
            grid: self.grid.clone(),
            values: self.grid.synthesize(&refs),
        }
    }

    /// Coefficients of `∂_j y_i`, ordered `[i * d + j]`.
    pub fn gradient_coeffs(&self) -> Vec<Vec<Complex64>> {
        let d = self.grid.dim();
        let s = self.grid.spec().wave_scale();
        let mut out = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                out.push(
                    self.comps[i]
                        .iter()
                        .enumerate()
                        .map(|(idx, &v)| v * Complex64::new(0.0, s * self.grid.k(idx)[j] as f64))
                        .collect(),
                );
            }
        }
        out
    }

    /// Leray projection: `(I - k kᵀ/|k|²) ŷ_k` for `k ≠ 0`; the mean is kept.
    pub fn leray_project(&self) -> Self {
        let d = self.grid.dim();
        let mut out = self.clone();
        for &idx in self.grid.active_indices() {
            let k = self.grid.k(idx);
            let k2: f64 = k.iter().map(|&v| (v * v) as f64).sum();
            if k2 == 0.0 {
                continue;
            }
            let mut kc = ZERO;
            for c in 0..d {
                kc += out.comps[c][idx] * k[c] as f64;
            }
            let kc = kc / k2;
            for c in 0..d {
                out.comps[c][idx] -= kc * k[c] as f64;
            }
        }
        out.div_free = true;
        out
    }

    /// Largest per-mode `|k·ŷ_k| / (|k| ‖ŷ_k‖)` over nonzero coefficients.
    pub fn divergence_defect(&self) -> f64 {
        let d = self.grid.dim();
        let mut worst: f64 = 0.0;
        for &idx in self.grid.active_indices() {
            let k = self.grid.k(idx);
            let mut kc = ZERO;
            let mut mag = 0.0;
            for c in 0..d {
                kc += self.comps[c][idx] * k[c] as f64;
                mag += self.comps[c][idx].norm_sqr();
            }
            let kn = ((k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64).sqrt();
            if mag > 0.0 && kn > 0.0 {
                worst = worst.max(kc.norm() / (kn * mag.sqrt()));
            }
        }
        worst
    }

    /// Largest `|ŷ_{-k} - conj(ŷ_k)|` relative to the largest coefficient.
    pub fn hermitian_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for comp in &self.comps {
            for &idx in self.grid.active_indices() {
                let neg = self.grid.neg(idx);
                worst = worst.max((comp[neg] - comp[idx].conj()).norm());
                scale = scale.max(comp[idx].norm());
            }
        }
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }

    /// Stokes operator: multiplies mode `k` by `λ_k`.
    ///
    /// Errors if the input is not divergence-free to `1e-10` per mode.
    pub fn stokes_apply(&self) -> Result<Self> {
        let defect = self.divergence_defect();
        if defect > 1e-10 {
            return Err(CbfedError::Domain(format!(
                "Stokes operator needs a divergence-free field (defect {defect:e})"
            )));
        }
        let g = self.grid.clone();
        let mut out = self.scale_modes(|i| g.lambda(i));
        out.div_free = true;
        Ok(out)
    }

    /// `-Δ` applied componentwise (equals `A` on divergence-free fields).
    pub fn neg_laplacian(&self) -> Self {
        let g = self.grid.clone();
        self.scale_modes(|i| g.lambda(i))
    }

    /// Largest absolute difference between coefficients of two fields.
    pub fn max_coeff_diff(&self, other: &FourierField) -> f64 {
        self.same_grid(other);
        self.comps
            .iter()
            .zip(&other.comps)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).norm()))
            .fold(0.0, f64::max)
    }

    /// True if every coefficient is finite.
    pub fn is_finite(&self) -> bool {
        self.comps
            .iter()
            .flatten()
            .all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Evaluates the truncated Fourier series at an arbitrary point.
    pub fn evaluate_at(&self, x: [f64; 3]) -> [f64; 3] {
        let d = self.grid.dim();
        let s = self.grid.spec().wave_scale();
        let mut out = [0.0; 3];
        for &idx in self.grid.active_indices() {
            let k = self.grid.k(idx);
            let phase: f64 = (0..d).map(|a| k[a] as f64 * x[a]).sum::<f64>() * s;
            let e = Complex64::from_polar(1.0, phase);
            for (c, o) in out.iter_mut().enumerate().take(d) {
                *o += (self.comps[c][idx] * e).re;
            }
        }
        out
    }

    /// Writes the field in the binary snapshot format.
    ///
    /// Layout: magic `CBFD`, version `u32`, `d u32`, `N u32`, `L f64`, kind
    /// `u8` (1 = divergence-free), then for every wavenumber in row-major order
    /// with `k_j` running from `-N/2+1` to `N/2`, the `d` components as
    /// little-endian `(re, im)` pairs of `f64`.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        let spec = self.grid.spec();
        w.write_all(SNAPSHOT_MAGIC)?;
        w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
        w.write_all(&(spec.dim as u32).to_le_bytes())?;
        w.write_all(&(spec.n as u32).to_le_bytes())?;
        w.write_all(&spec.length.to_le_bytes())?;
        w.write_all(&[u8::from(self.div_free)])?;
        for idx in snapshot_order(&self.grid) {
            for comp in &self.comps {
                w.write_all(&comp[idx].re.to_le_bytes())?;
                w.write_all(&comp[idx].im.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads a snapshot written by [`FourierField::write_snapshot`] onto a
    /// grid with the same dimension, resolution and period.
    pub fn read_snapshot<R: Read>(grid: &Arc<Grid>, mut r: R) -> Result<Self> {
        let header = read_snapshot_header(&mut r)?;
        let spec = grid.spec();
        if header.dim != spec.dim || header.n != spec.n || header.length != spec.length {
            return Err(CbfedError::Config(format!(
                "snapshot grid (d={}, N={}, L={}) does not match (d={}, N={}, L={})",
                header.dim, header.n, header.length, spec.dim, spec.n, spec.length
            )));
        }
        let mut comps = vec![vec![ZERO; grid.modes()]; spec.dim];
        let mut buf = [0u8; 8];
        for idx in snapshot_order(grid) {
            for comp in comps.iter_mut() {
                r.read_exact(&mut buf)?;
                let re = f64::from_le_bytes(buf);
                r.read_exact(&mut buf)?;
                let im = f64::from_le_bytes(buf);
                comp[idx] = Complex64::new(re, im);
            }
        }
        let mut f = FourierField::from_components(grid, comps)?;
        if header.div_free {
            f = f.mark_div_free()?;
        }
        Ok(f)
    }
}

/// Header of a binary snapshot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnapshotHeader {
    /// Spatial dimension.
    pub dim: usize,
    /// Modes per axis.
    pub n: usize,
    /// Torus period.
    pub length: f64,
    /// Whether the field was flagged divergence-free.
    pub div_free: bool,
}

/// Reads and validates the header of a binary snapshot.
pub fn read_snapshot_header<R: Read>(r: &mut R) -> Result<SnapshotHeader> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(CbfedError::Io("not a CBFD snapshot".into()));
    }
    let mut u = [0u8; 4];
    r.read_exact(&mut u)?;
    let version = u32::from_le_bytes(u);
    if version != SNAPSHOT_VERSION {
        return Err(CbfedError::Io(format!("unsupported snapshot version {version}")));
    }
    r.read_exact(&mut u)?;
    let dim = u32::from_le_bytes(u) as usize;
    r.read_exact(&mut u)?;
    let n = u32::from_le_bytes(u) as usize;
    let mut f = [0u8; 8];
    r.read_exact(&mut f)?;
    let length = f64::from_le_bytes(f);
    let mut kind = [0u8; 1];
    r.read_exact(&mut kind)?;
    Ok(SnapshotHeader {
        dim,
        n,
        length,
        div_free: kind[0] == 1,
    })
}

fn snapshot_order(grid: &Grid) -> Vec<usize> {
    let n = grid.n() as i32;
    let d = grid.dim();
    let ks: Vec<i32> = (-n / 2 + 1..=n / 2).collect();
    let total = ks.len().pow(d as u32);
    let mut out = Vec::with_capacity(total);
    for t in 0..total {
        let mut rem = t;
        let mut idx = 0usize;
        let mut digits = [0usize; 3];
        for a in (0..d).rev() {
            digits[a] = rem % ks.len();
            rem /= ks.len();
        }
        for &dig in digits.iter().take(d) {
            idx = idx * grid.n() + ks[dig].rem_euclid(n) as usize;
        }
        out.push(idx);
    }
    out
}

impl PhysicalField {
    /// Quadrature of `|y|^p` over the torus.
    pub fn integral_abs_pow(&self, p: f64) -> f64 {
        let w = self.grid.node_weight();
        let mut s = 0.0;
        for j in 0..self.node_count() {
            let m2: f64 = self.values.iter().map(|v| v[j] * v[j]).sum();
            s += crate::operators::abs_pow(m2.sqrt(), p);
        }
        s * w
    }
}

impl Add for &FourierField {
    type Output = FourierField;
    fn add(self, rhs: &FourierField) -> FourierField {
        self.axpy(1.0, rhs)
    }
}

impl Sub for &FourierField {
    type Output = FourierField;
    fn sub(self, rhs: &FourierField) -> FourierField {
        self.axpy(-1.0, rhs)
    }
}

impl Mul<f64> for &FourierField {
    type Output = FourierField;
    fn mul(self, rhs: f64) -> FourierField {
        self.scale(rhs)
    }
}

impl Neg for &FourierField {
    type Output = FourierField;
    fn neg(self) -> FourierField {
        self.scale(-1.0)
    }
}

/// Angular wavenumber of a single mode, `2π|k|/L`.
pub fn angular_wavenumber(spec: &GridSpec, k: [i32; 3]) -> f64 {
    2.0 * PI / spec.length * ((k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Arc<Grid> {
        Grid::new(GridSpec::new(2, n, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn single_mode_matches_closed_form_at_nodes() {
        let g = grid(16);
        let a = Complex64::new(0.7, -0.2);
        let k = [3, -2, 0];
        let f = FourierField::from_fn(&g, |kk| {
            let mut v = [ZERO; 3];
            if kk == k {
                v[0] = a;
            } else if kk == [-k[0], -k[1], 0] {
                v[0] = a.conj();
            }
            v
        });
        let p = f.to_physical();
        for node in 0..g.nodes() {
            let x = g.node_coords(node);
            let phase = 2.0 * PI * (k[0] as f64 * x[0] + k[1] as f64 * x[1]);
            let exact = 2.0 * (a * Complex64::from_polar(1.0, phase)).re;
            assert!((p.component(0)[node] - exact).abs() < 1e-12);
            assert!(p.component(1)[node].abs() < 1e-14);
        }
    }

    #[test]
    fn round_trip_reproduces_random_fields() {
        for n in [8, 16, 32] {
            let g = grid(n);
            for seed in 0..10 {
                let f = FourierField::random(&g, seed, |_| 1.0);
                let back = f.to_physical().to_fourier();
                let err = (&back - &f).norm_h() / f.norm_h();
                assert!(err < 1e-12, "n={n} seed={seed} err={err}");
            }
        }
    }

    #[test]
    fn shear_norms_match_closed_forms() {
        let g = grid(16);
        let a = 1.7;
        let f = FourierField::shear(&g, a, 1).unwrap();
        assert!((f.norm_h() - a / 2f64.sqrt()).abs() < 1e-14);
        let l4 = f.norm(Norm::Lp(4.0)).unwrap().powi(4);
        assert!((l4 - 0.375 * a.powi(4)).abs() < 1e-12);
        let c = FourierField::constant(&g, &[-2.5, 0.0]).unwrap();
        assert!((c.norm_h() - 2.5).abs() < 1e-15);
    }

    #[test]
    fn snapshot_round_trip() {
        let g = grid(8);
        let f = FourierField::random(&g, 9, |_| 1.0);
        let mut buf = Vec::new();
        f.write_snapshot(&mut buf).unwrap();
        assert_eq!(buf.len(), 25 + 8 * 8 * 2 * 16);
        let back = FourierField::read_snapshot(&g, buf.as_slice()).unwrap();
        assert_eq!(back.max_coeff_diff(&f), 0.0);
        assert!(back.is_div_free());
        let other = grid(16);
        assert!(FourierField::read_snapshot(&other, buf.as_slice()).is_err());
    }
}
