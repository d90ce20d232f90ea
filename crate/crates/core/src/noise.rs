//! Trace-class Gaussian forcing with covariance `Q = σ²(I + A)^{-ε}`.
//!
//! The noise lives on a real orthonormal basis of the retained
//! divergence-free subspace: constant vectors at `k = 0` and
//! `√2 L^{-d/2} p cos(2πk·x/L)`, `√2 L^{-d/2} p sin(2πk·x/L)` for one
//! representative of every `±k` pair, `p ⊥ k`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CbfedError, Result};
use crate::field::FourierField;
use crate::grid::Grid;
use crate::operators::ModelParams;
use crate::rng::{keyed_stream, DOMAIN_AUX, DOMAIN_NOISE};

/// Covariance exponent, amplitude and master seed of the noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Exponent `ε` of `Q = σ²(I + A)^{-ε}`.
    pub eps_q: f64,
    /// Amplitude `σ`.
    pub amplitude: f64,
    /// Master seed of every random stream.
    pub seed: u64,
}

impl NoiseSpec {
    /// Unit-amplitude noise with exponent `eps_q`.
    pub fn new(eps_q: f64, seed: u64) -> Result<Self> {
        let s = NoiseSpec {
            eps_q,
            amplitude: 1.0,
            seed,
        };
        s.validate()?;
        Ok(s)
    }

    /// Copy with amplitude `σ`.
    pub fn with_amplitude(mut self, amplitude: f64) -> Self {
        self.amplitude = amplitude;
        self
    }

    /// Copy with another seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Basic sanity: `ε > 0` and `σ >= 0`.
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_q > 0.0 && self.eps_q.is_finite()) {
            return Err(CbfedError::Config(format!("eps_q must be positive, got {}", self.eps_q)));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(CbfedError::Config(format!(
                "noise amplitude must be >= 0, got {}",
                self.amplitude
            )));
        }
        Ok(())
    }

    /// `Tr Q < ∞` needs `ε > d/2`.
    pub fn trace_q_admissible(&self, dim: usize) -> bool {
        self.eps_q > dim as f64 / 2.0
    }

    /// `Tr(AQ) < ∞` needs `ε > d/2 + 1`.
    pub fn trace_aq_admissible(&self, dim: usize) -> bool {
        self.eps_q > dim as f64 / 2.0 + 1.0
    }

    /// Errors unless `Tr(AQ)` is finite.
    pub fn require_trace_aq(&self, dim: usize) -> Result<()> {
        if self.trace_aq_admissible(dim) {
            Ok(())
        } else {
            Err(CbfedError::Admissibility(format!(
                "V-level estimates need eps_q > d/2 + 1 = {}, got {}",
                dim as f64 / 2.0 + 1.0,
                self.eps_q
            )))
        }
    }

    /// Covariance eigenvalue `σ²(1 + λ)^{-ε}`.
    pub fn eigenvalue(&self, lambda: f64) -> f64 {
        self.amplitude * self.amplitude * (1.0 + lambda).powf(-self.eps_q)
    }
}

/// Shape of a real basis function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModeKind {
    /// Constant vector (`k = 0`).
    Constant,
    /// `√2 p cos(2πk·x/L)`, normalized.
    Cos,
    /// `√2 p sin(2πk·x/L)`, normalized.
    Sin,
}

/// One element of the real divergence-free eigenbasis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenMode {
    /// Representative wavenumber.
    pub k: [i32; 3],
    /// Flat lattice index of `k`.
    pub idx: usize,
    /// Stokes eigenvalue `λ_k`.
    pub lambda: f64,
    /// Covariance eigenvalue `μ_k`.
    pub mu: f64,
    /// Unit polarization, orthogonal to `k` when `k ≠ 0`.
    pub polarization: [f64; 3],
    /// Cosine, sine or constant.
    pub kind: ModeKind,
    /// Polarization index within the wavenumber.
    pub pol: u8,
}

/// Partial trace with an integral-comparison bound on the dropped tail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceReport {
    /// Sum over retained modes.
    pub partial: f64,
    /// Upper bound on the remainder; `None` when the series diverges.
    pub tail_bound: Option<f64>,
}

/// Enumerated eigenbasis together with its covariance.
#[derive(Debug, Clone)]
pub struct NoiseBasis {
    grid: Arc<Grid>,
    spec: NoiseSpec,
    modes: Vec<EigenMode>,
}

fn is_representative(k: [i32; 3]) -> bool {
    match k.iter().find(|&&v| v != 0) {
        Some(&v) => v > 0,
        None => false,
    }
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Orthonormal polarizations spanning `k^⊥` (`d - 1` of them).
pub fn polarizations(dim: usize, k: [i32; 3]) -> Vec<[f64; 3]> {
    let kf = [k[0] as f64, k[1] as f64, k[2] as f64];
    if dim == 2 {
        return vec![normalize([-kf[1], kf[0], 0.0])];
    }
    let mut axis = 0;
    for a in 1..3 {
        if k[a].abs() < k[axis].abs() {
            axis = a;
        }
    }
    let mut unit = [0.0; 3];
    unit[axis] = 1.0;
    let e1 = normalize(cross(kf, unit));
    let e2 = cross(normalize(kf), e1);
    vec![e1, e2]
}

impl NoiseBasis {
    /// Enumerates the basis, sorted by `λ`, then `k`, then kind, then
    /// polarization.
    pub fn new(grid: &Arc<Grid>, spec: NoiseSpec) -> Result<Self> {
        spec.validate()?;
        let d = grid.dim();
        let mut modes = Vec::new();
        for &idx in grid.active_indices() {
            let k = grid.k(idx);
            let lambda = grid.lambda(idx);
            let mu = spec.eigenvalue(lambda);
            if k == [0, 0, 0] {
                for c in 0..d {
                    let mut p = [0.0; 3];
                    p[c] = 1.0;
                    modes.push(EigenMode {
                        k,
                        idx,
                        lambda,
                        mu,
                        polarization: p,
                        kind: ModeKind::Constant,
                        pol: c as u8,
                    });
                }
            } else if is_representative(k) {
                for (pi, p) in polarizations(d, k).into_iter().enumerate() {
                    for kind in [ModeKind::Cos, ModeKind::Sin] {
                        modes.push(EigenMode {
                            k,
                            idx,
                            lambda,
                            mu,
                            polarization: p,
                            kind,
                            pol: pi as u8,
                        });
                    }
                }
            }
        }
        let ksq = |k: [i32; 3]| k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
        modes.sort_by(|a, b| {
            ksq(a.k)
                .cmp(&ksq(b.k))
                .then(a.k.cmp(&b.k))
                .then(a.kind.cmp(&b.kind))
                .then(a.pol.cmp(&b.pol))
        });
        Ok(NoiseBasis {
            grid: grid.clone(),
            spec,
            modes,
        })
    }

    /// Grid of the basis.
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// Covariance specification.
    pub fn spec(&self) -> &NoiseSpec {
        &self.spec
    }

    /// Basis elements in canonical order.
    pub fn modes(&self) -> &[EigenMode] {
        &self.modes
    }

    /// Number of basis elements.
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    /// True when the basis is empty (never for valid grids).
    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    fn half_volume(&self) -> f64 {
        self.grid.spec().volume().sqrt()
    }

    /// Coordinates `(f, e_j)` of `f` in the basis.
    pub fn coefficients(&self, f: &FourierField) -> Vec<f64> {
        let d = self.grid.dim();
        let hv = self.half_volume();
        let s2 = 2f64.sqrt();
        self.modes
            .iter()
            .map(|m| {
                let mut pv = Complex64::new(0.0, 0.0);
                for c in 0..d {
                    pv += f.component(c)[m.idx] * m.polarization[c];
                }
                match m.kind {
                    ModeKind::Constant => hv * pv.re,
                    ModeKind::Cos => s2 * hv * pv.re,
                    ModeKind::Sin => -s2 * hv * pv.im,
                }
            })
            .collect()
    }

    /// `Σ_{j < m} a_j e_j` for the first `m` coefficients of `a`.
    pub fn synthesize(&self, a: &[f64], m: usize) -> FourierField {
        let d = self.grid.dim();
        let hv = self.half_volume();
        let s2 = 2f64.sqrt();
        let mut out = FourierField::zeros(&self.grid);
        {
            let comps = out.components_mut();
            for (mode, &aj) in self.modes.iter().zip(a).take(m) {
                if aj == 0.0 {
                    continue;
                }
                let z = match mode.kind {
                    ModeKind::Constant => Complex64::new(aj / hv, 0.0),
                    ModeKind::Cos => Complex64::new(aj / (s2 * hv), 0.0),
                    ModeKind::Sin => Complex64::new(0.0, -aj / (s2 * hv)),
                };
                let neg = self.grid.neg(mode.idx);
                for (c, comp) in comps.iter_mut().enumerate().take(d) {
                    let v = z * mode.polarization[c];
                    comp[mode.idx] += v;
                    if neg != mode.idx {
                        comp[neg] += v.conj();
                    }
                }
            }
        }
        out.set_div_free(true);
        out
    }

    /// Projection onto the first `m` basis elements.
    pub fn project(&self, f: &FourierField, m: usize) -> FourierField {
        self.synthesize(&self.coefficients(f), m)
    }

    /// `√Q f`: mode `k` multiplied by `σ(1 + λ_k)^{-ε/2}`.
    pub fn sqrt_q_apply(&self, f: &FourierField) -> FourierField {
        let g = self.grid.clone();
        let s = self.spec;
        f.scale_modes(|i| s.eigenvalue(g.lambda(i)).sqrt())
    }

    /// `Q f`.
    pub fn q_apply(&self, f: &FourierField) -> FourierField {
        let g = self.grid.clone();
        let s = self.spec;
        f.scale_modes(|i| s.eigenvalue(g.lambda(i)))
    }

    /// `Tr Q` over retained modes with tail bound.
    pub fn trace_q(&self) -> TraceReport {
        TraceReport {
            partial: self.modes.iter().map(|m| m.mu).sum(),
            tail_bound: self.tail_bound(0.0),
        }
    }

    /// `Tr(AQ)` over retained modes with tail bound.
    pub fn trace_aq(&self) -> TraceReport {
        TraceReport {
            partial: self.modes.iter().map(|m| m.lambda * m.mu).sum(),
            tail_bound: self.tail_bound(1.0),
        }
    }

    /// Bound on `Σ_{|k_j| >= N/2 for some j} (d-1) λ^a σ²(1+λ)^{-ε}`.
    ///
    /// Each lattice point is compared with the unit cube around it; with
    /// `λ^a (1+λ)^{-ε} <= (c u)^{2a-2ε}`, `c = 2π/L`, the sum is at most
    /// `(d-1) S_d σ² ∫_{K-√d}^∞ (c u)^{2a-2ε} (u + √d/2)^{d-1} du`.
    fn tail_bound(&self, a: f64) -> Option<f64> {
        let d = self.grid.dim();
        let df = d as f64;
        let e = 2.0 * a - 2.0 * self.spec.eps_q;
        if e + df >= 0.0 {
            return None;
        }
        let c = 2.0 * PI / self.grid.spec().length;
        let k = self.grid.n() as f64 / 2.0;
        let u0 = k - df.sqrt();
        let h = df.sqrt() / 2.0;
        let pow_int = |j: f64| u0.powf(e + j + 1.0) / (-(e + j + 1.0));
        let poly = if d == 2 {
            pow_int(1.0) + h * pow_int(0.0)
        } else {
            pow_int(2.0) + 2.0 * h * pow_int(1.0) + h * h * pow_int(0.0)
        };
        let sphere = if d == 2 { 2.0 * PI } else { 4.0 * PI };
        let s2 = self.spec.amplitude * self.spec.amplitude;
        Some((df - 1.0) * sphere * s2 * c.powf(e) * poly)
    }

    /// One increment `√Q ΔW` over `dt` drawn from `rng`.
    pub fn wiener_increment<R: Rng>(&self, dt: f64, rng: &mut R) -> FourierField {
        let sd = dt.sqrt();
        let a: Vec<f64> = self
            .modes
            .iter()
            .map(|m| {
                let xi: f64 = rng.sample(StandardNormal);
                m.mu.sqrt() * sd * xi
            })
            .collect();
        self.synthesize(&a, a.len())
    }
}

/// Exact transition of the scalar OU process `dY = -θY dt + √μ dβ`:
/// `Y' = e^{-θh} Y + √(μ(1 - e^{-2θh})/(2θ)) ξ`.
pub fn ou_exact_step(y: f64, theta: f64, mu: f64, h: f64, xi: f64) -> f64 {
    let var = -mu * (-2.0 * theta * h).exp_m1() / (2.0 * theta);
    (-theta * h).exp() * y + var.sqrt() * xi
}

/// Stationary variance `μ/(2θ)` of the scalar OU process.
pub fn ou_stationary_variance(theta: f64, mu: f64) -> f64 {
    mu / (2.0 * theta)
}

/// Brownian and OU increments of one coarse step, per basis element and
/// before the `√μ_j` scaling.
#[derive(Debug, Clone)]
pub struct NoiseDraw {
    /// `ΔW_j` over the step.
    pub dw: Vec<f64>,
    /// `∫ e^{-θ_j(t_{n+1}-s)} dβ_j(s)` over the step.
    pub ou: Vec<f64>,
}

/// Counter-based sampler of Brownian and OU increments on a fine grid.
///
/// Fine step `f` of path `p` always draws two normals per basis element
/// from the stream keyed by `(seed, noise domain, p)` at counter `f`, so
/// coarser steps that aggregate fine ones see the same Brownian path.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    basis: Arc<NoiseBasis>,
    fine_dt: f64,
    theta: Vec<f64>,
    fine_decay: Vec<f64>,
    c1: Vec<f64>,
    c2: Vec<f64>,
}

impl NoiseSampler {
    /// Sampler with fine step `fine_dt` and OU rates `μλ_j + α`.
    pub fn new(basis: Arc<NoiseBasis>, p: &ModelParams, fine_dt: f64) -> Result<Self> {
        if !(fine_dt > 0.0) {
            return Err(CbfedError::Config(format!("noise step must be positive, got {fine_dt}")));
        }
        let sd = fine_dt.sqrt();
        let theta: Vec<f64> = basis.modes().iter().map(|m| p.linear_rate(m.lambda)).collect();
        let fine_decay = theta.iter().map(|t| (-t * fine_dt).exp()).collect();
        let c1: Vec<f64> = theta
            .iter()
            .map(|&t| -(-t * fine_dt).exp_m1() / (t * sd))
            .collect();
        let c2 = theta
            .iter()
            .zip(&c1)
            .map(|(&t, &c)| {
                let var = -(-2.0 * t * fine_dt).exp_m1() / (2.0 * t);
                (var - c * c).max(0.0).sqrt()
            })
            .collect();
        Ok(NoiseSampler {
            basis,
            fine_dt,
            theta,
            fine_decay,
            c1,
            c2,
        })
    }

    /// Underlying basis.
    pub fn basis(&self) -> &Arc<NoiseBasis> {
        &self.basis
    }

    /// Fine step.
    pub fn fine_dt(&self) -> f64 {
        self.fine_dt
    }

    /// OU rate `θ_j` of each basis element.
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// Number of fine steps per coarse step `dt`.
    pub fn ratio(&self, dt: f64) -> Result<usize> {
        let m = (dt / self.fine_dt).round();
        if m < 1.0 || (m * self.fine_dt - dt).abs() > 1e-9 * dt {
            return Err(CbfedError::Config(format!(
                "step {dt} is not a multiple of the noise step {}",
                self.fine_dt
            )));
        }
        Ok(m as usize)
    }

    /// Aggregated increments of coarse step `n` (covering `ratio` fine steps)
    /// on path `path`.
    pub fn draw(&self, path: u64, n: usize, ratio: usize) -> NoiseDraw {
        let len = self.theta.len();
        let mut dw = vec![0.0; len];
        let mut ou = vec![0.0; len];
        let sd = self.fine_dt.sqrt();
        for f in n * ratio..(n + 1) * ratio {
            let mut rng = keyed_stream(self.basis.spec().seed, DOMAIN_NOISE, path, f as u64);
            for j in 0..len {
                let x1: f64 = rng.sample(StandardNormal);
                let x2: f64 = rng.sample(StandardNormal);
                dw[j] += sd * x1;
                ou[j] = self.fine_decay[j] * ou[j] + self.c1[j] * x1 + self.c2[j] * x2;
            }
        }
        NoiseDraw { dw, ou }
    }

    /// `√Q ΔW` as a field.
    pub fn wiener_field(&self, draw: &NoiseDraw) -> FourierField {
        let a: Vec<f64> = self
            .basis
            .modes()
            .iter()
            .zip(&draw.dw)
            .map(|(m, w)| m.mu.sqrt() * w)
            .collect();
        self.basis.synthesize(&a, a.len())
    }
}

/// Endpoint samples of one scalar OU mode after `steps` exact steps of
/// size `h` from 0; sample `s` uses its own keyed stream.
pub fn ou_mode_samples(
    seed: u64,
    mode: u64,
    theta: f64,
    mu: f64,
    h: f64,
    steps: usize,
    samples: usize,
) -> Vec<f64> {
    (0..samples)
        .map(|s| {
            let mut rng = keyed_stream(seed, DOMAIN_AUX, mode, s as u64);
            let mut y = 0.0;
            for _ in 0..steps {
                let xi: f64 = rng.sample(StandardNormal);
                y = ou_exact_step(y, theta, mu, h, xi);
            }
            y
        })
        .collect()
}

/// Summary of OU paths simulated on the field level.
#[derive(Debug, Clone)]
pub struct OuPath {
    /// Coefficients `(Y(T), e_j)`.
    pub final_coeffs: Vec<f64>,
    /// `sup_t sup_x |Y(t, x)|` over step times and physical nodes.
    pub sup_abs: f64,
}

/// Simulates the field OU process `dY + (μA + α)Y dt = √Q dW`, `Y(0) = 0`,
/// exactly at the step times.
pub fn ou_path(
    sampler: &NoiseSampler,
    dt: f64,
    steps: usize,
    path: u64,
    track_sup: bool,
) -> Result<OuPath> {
    let ratio = sampler.ratio(dt)?;
    let basis = sampler.basis();
    let decay: Vec<f64> = sampler.theta().iter().map(|t| (-t * dt).exp()).collect();
    let mut y = vec![0.0; basis.len()];
    let mut sup: f64 = 0.0;
    for n in 0..steps {
        let draw = sampler.draw(path, n, ratio);
        for (j, m) in basis.modes().iter().enumerate() {
            y[j] = decay[j] * y[j] + m.mu.sqrt() * draw.ou[j];
        }
        if track_sup {
            let field = basis.synthesize(&y, y.len());
            sup = sup.max(field.to_physical().max_magnitude());
        }
    }
    Ok(OuPath {
        final_coeffs: y,
        sup_abs: sup,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    fn basis(n: usize) -> NoiseBasis {
        let g = Grid::new(GridSpec::new(2, n, 1.0).unwrap()).unwrap();
        NoiseBasis::new(&g, NoiseSpec::new(3.0, 1).unwrap()).unwrap()
    }

    #[test]
    fn basis_counts_match_divergence_free_multiplicity() {
        let b = basis(8);
        // 7x7 active lattice: 2 constants plus one real mode per k ≠ 0.
        assert_eq!(b.len(), 2 + 48);
        assert_eq!(b.modes()[0].kind, ModeKind::Constant);
        assert_eq!(b.modes()[1].kind, ModeKind::Constant);
        assert_eq!(b.modes()[0].mu, 1.0);
    }

    #[test]
    fn coefficients_invert_synthesis() {
        let b = basis(8);
        let a: Vec<f64> = (0..b.len()).map(|j| (j as f64 * 0.37).sin()).collect();
        let f = b.synthesize(&a, a.len());
        let back = b.coefficients(&f);
        for (x, y) in a.iter().zip(&back) {
            assert!((x - y).abs() < 1e-13);
        }
        assert!((f.norm_h().powi(2) - a.iter().map(|v| v * v).sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn ou_step_preserves_stationary_variance() {
        let (t, mu, h) = (2.0, 0.5, 0.1);
        let v = ou_stationary_variance(t, mu);
        let e2 = (-2.0 * t * h).exp();
        let var_step = mu * (1.0 - e2) / (2.0 * t);
        assert!((e2 * v + var_step - v).abs() < 1e-15);
        assert_eq!(ou_exact_step(0.0, t, mu, h, 0.0), 0.0);
    }
}
