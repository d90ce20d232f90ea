//! Model operators `A`, `B`, `C₁`, `C₂`, `Γ`, the trilinear form, the
//! quasi-monotonicity constants and runnable versions of the operator
//! inequalities.
//!
//! Pointwise nonlinearities are evaluated on the dealiased physical grid,
//! transformed back, truncated and Leray-projected.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{CbfedError, Result};
use crate::field::FourierField;

/// `m^e` for `m >= 0`, with `0^e = 0` for `e != 0` and `0^0 = 1`.
///
/// Integer exponents use repeated multiplication; other exponents use
/// `exp(e·ln m)`.
pub fn abs_pow(m: f64, e: f64) -> f64 {
    if e == 0.0 {
        return 1.0;
    }
    if m == 0.0 {
        return 0.0;
    }
    if e.fract() == 0.0 && e.abs() <= 32.0 {
        m.powi(e as i32)
    } else {
        (e * m.ln()).exp()
    }
}

/// Physical and model constants of the CBFeD system.
///
/// Dimension and torus period live on the grid of the fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Brinkman viscosity `μ > 0`.
    pub mu: f64,
    /// Darcy coefficient `α > 0`.
    pub alpha: f64,
    /// Forchheimer coefficient `β > 0`.
    pub beta: f64,
    /// Secondary coefficient: damping if positive, pumping if negative.
    pub gamma: f64,
    /// Absorption exponent `r >= 3`.
    pub r: f64,
    /// Secondary exponent `1 <= q < r`.
    pub q: f64,
    /// Whether the convective term `B` is included.
    pub convective: bool,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            mu: 1.0,
            alpha: 1.0,
            beta: 1.0,
            gamma: -0.5,
            r: 4.0,
            q: 2.0,
            convective: true,
        }
    }
}

impl ModelParams {
    /// Validated parameter set.
    pub fn new(mu: f64, alpha: f64, beta: f64, gamma: f64, r: f64, q: f64) -> Result<Self> {
        let p = ModelParams {
            mu,
            alpha,
            beta,
            gamma,
            r,
            q,
            convective: true,
        };
        p.validate()?;
        Ok(p)
    }

    /// Copy with the convective term switched on or off.
    pub fn with_convection(mut self, on: bool) -> Self {
        self.convective = on;
        self
    }

    /// Checks positivity, exponent ordering and the critical-case condition.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("mu", self.mu), ("alpha", self.alpha)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CbfedError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        // β = 0 is allowed only as a switch for linear test problems.
        if !(self.beta >= 0.0 && self.beta.is_finite()) || !self.gamma.is_finite() {
            return Err(CbfedError::Config(format!(
                "beta must be >= 0 and gamma finite, got beta={} gamma={}",
                self.beta, self.gamma
            )));
        }
        if !(self.r >= 3.0 && self.r.is_finite()) {
            return Err(CbfedError::Config(format!("r must be >= 3, got {}", self.r)));
        }
        if !(self.q >= 1.0 && self.q < self.r) {
            return Err(CbfedError::Config(format!(
                "need 1 <= q < r, got q={} r={}",
                self.q, self.r
            )));
        }
        if self.r == 3.0 && self.beta > 0.0 && 2.0 * self.beta * self.mu <= 1.0 {
            return Err(CbfedError::Admissibility(format!(
                "critical case r = 3 needs 2βμ > 1, got {}",
                2.0 * self.beta * self.mu
            )));
        }
        Ok(())
    }

    /// `μλ + α`, the linear decay rate of a mode with Stokes eigenvalue `λ`.
    pub fn linear_rate(&self, lambda: f64) -> f64 {
        self.mu * lambda + self.alpha
    }
}

/// Constants making `Γ + κI` monotone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    /// Constant from the `C₂` term.
    pub eta1: f64,
    /// Second constant from the `C₂` term.
    pub eta2: f64,
    /// Constant from the convective term (0 when `r = 3`).
    pub eta3: f64,
    /// Shift `κ = η₁ + η₂ + η₃`.
    pub kappa: f64,
    /// Free constant inside `η₃`.
    pub eps_p31: f64,
}

impl DerivedConstants {
    /// Evaluates `η₁, η₂, η₃` and `κ` for `p`.
    ///
    /// `η₁ = η₂ = 0` when `q = 1` or `γ = 0`; `η₃ = 0` when `r = 3`, where the
    /// condition `2βμ > 1` replaces it.
    pub fn new(p: &ModelParams, eps_p31: f64) -> Result<Self> {
        if p.r == p.q {
            return Err(CbfedError::Domain("derived constants need r != q".into()));
        }
        if !(eps_p31 > 0.0) {
            return Err(CbfedError::Domain(format!("eps_p31 must be positive, got {eps_p31}")));
        }
        if !(p.beta > 0.0) {
            return Err(CbfedError::Domain("derived constants need beta > 0".into()));
        }
        if p.r == 3.0 && 2.0 * p.beta * p.mu <= 1.0 {
            return Err(CbfedError::Admissibility(format!(
                "r = 3 needs 2βμ > 1, got {}",
                2.0 * p.beta * p.mu
            )));
        }
        let (r, q) = (p.r, p.q);
        let g = p.gamma.abs();
        let eta_c2 = |two_pow: f64| -> f64 {
            if q == 1.0 || g == 0.0 {
                return 0.0;
            }
            let bracket = two_pow * q * g * (q - 1.0) / (p.beta * (r - 1.0));
            (r - q) / (r - 1.0) * bracket.powf((q - 1.0) / (r - q))
        };
        let eta1 = eta_c2(2f64.powf(q));
        let eta2 = eta_c2(2f64.powf(q + 1.0));
        let eta3 = if r == 3.0 {
            0.0
        } else {
            let bracket = 4.0 / (eps_p31 * p.beta * p.mu * (r - 1.0));
            (r - 3.0) / (2.0 * p.mu * (r - 1.0)) * bracket.powf(2.0 / (r - 3.0))
        };
        Ok(DerivedConstants {
            eta1,
            eta2,
            eta3,
            kappa: eta1 + eta2 + eta3,
            eps_p31,
        })
    }
}

/// Quadratures gathered while evaluating the nonlinear terms.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PointwiseDiag {
    /// `∫|y|^{r+1}`.
    pub int_r1: f64,
    /// `∫|y|^{q+1}`.
    pub int_q1: f64,
    /// `∫|y|^{r-1}|∇y|²`.
    pub weighted_grad: f64,
}

/// Explicit part of the right-hand side together with its diagnostics.
#[derive(Debug, Clone)]
pub struct NonlinearTerms {
    /// `-(B(y) + βC₁(y) + γC₂(y))`, Leray-projected.
    pub rhs: FourierField,
    /// Quadratures at `y`.
    pub diag: PointwiseDiag,
}

struct Physical {
    y: Vec<Vec<f64>>,
    grad: Vec<Vec<f64>>,
}

fn physical_with_grad(y: &FourierField) -> Physical {
    let grid = y.grid();
    let yc: Vec<&[Complex64]> = y.components().iter().map(|c| c.as_slice()).collect();
    let gc = y.gradient_coeffs();
    let gr: Vec<&[Complex64]> = gc.iter().map(|c| c.as_slice()).collect();
    Physical {
        y: grid.synthesize(&yc),
        grad: grid.synthesize(&gr),
    }
}

fn to_projected(y: &FourierField, values: &[Vec<f64>]) -> FourierField {
    let refs: Vec<&[f64]> = values.iter().map(|v| v.as_slice()).collect();
    let comps = y.grid().analyze(&refs);
    FourierField::from_components(y.grid(), comps)
        .expect("analysis returns grid-shaped arrays")
        .leray_project()
}

/// Evaluates `-(B(y) + βC₁(y) + γC₂(y))` with one forward transform and the
/// quadratures used by the energy diagnostics.
pub fn nonlinear_terms(y: &FourierField, p: &ModelParams) -> NonlinearTerms {
    let grid = y.grid();
    let d = grid.dim();
    let nodes = grid.nodes();
    let ph = physical_with_grad(y);
    let mut out = vec![vec![0.0; nodes]; d];
    let (mut ir, mut iq, mut wg) = (0.0, 0.0, 0.0);
    let (er, eq) = (p.r - 1.0, p.q - 1.0);
    for j in 0..nodes {
        let mut m2 = 0.0;
        for c in 0..d {
            m2 += ph.y[c][j] * ph.y[c][j];
        }
        let m = m2.sqrt();
        let pr = abs_pow(m, er);
        let pq = abs_pow(m, eq);
        let mut g2 = 0.0;
        for gvals in &ph.grad {
            g2 += gvals[j] * gvals[j];
        }
        ir += pr * m2;
        iq += pq * m2;
        wg += pr * g2;
        let coef = p.beta * pr + p.gamma * pq;
        for i in 0..d {
            let mut v = coef * ph.y[i][j];
            if p.convective {
                for jj in 0..d {
                    v += ph.y[jj][j] * ph.grad[i * d + jj][j];
                }
            }
            out[i][j] = -v;
        }
    }
    let w = grid.node_weight();
    NonlinearTerms {
        rhs: to_projected(y, &out),
        diag: PointwiseDiag {
            int_r1: ir * w,
            int_q1: iq * w,
            weighted_grad: wg * w,
        },
    }
}

/// `B(y) = P[(y·∇)y]`, evaluated pseudo-spectrally with dealiasing.
pub fn bilinear_b(y: &FourierField) -> FourierField {
    let grid = y.grid();
    let d = grid.dim();
    let ph = physical_with_grad(y);
    let mut out = vec![vec![0.0; grid.nodes()]; d];
    for (i, o) in out.iter_mut().enumerate() {
        for (j, v) in o.iter_mut().enumerate() {
            *v = (0..d).map(|jj| ph.y[jj][j] * ph.grad[i * d + jj][j]).sum();
        }
    }
    to_projected(y, &out)
}

/// Trilinear form `b(y, z, w) = ∫ (y·∇)z · w` by dealiased quadrature.
pub fn trilinear_b(y: &FourierField, z: &FourierField, w: &FourierField) -> f64 {
    let grid = y.grid();
    let d = grid.dim();
    let yc: Vec<&[Complex64]> = y.components().iter().map(|c| c.as_slice()).collect();
    let wc: Vec<&[Complex64]> = w.components().iter().map(|c| c.as_slice()).collect();
    let gz = z.gradient_coeffs();
    let gc: Vec<&[Complex64]> = gz.iter().map(|c| c.as_slice()).collect();
    let yp = grid.synthesize(&yc);
    let wp = grid.synthesize(&wc);
    let gp = grid.synthesize(&gc);
    let mut s = 0.0;
    for j in 0..grid.nodes() {
        for i in 0..d {
            let adv: f64 = (0..d).map(|jj| yp[jj][j] * gp[i * d + jj][j]).sum();
            s += adv * wp[i][j];
        }
    }
    s * grid.node_weight()
}

/// `P(|y|^{e-1} y)`; for `e = 1` the Leray projection of `y` itself.
pub fn power_term(y: &FourierField, e: f64) -> FourierField {
    if e == 1.0 {
        return if y.is_div_free() {
            y.clone()
        } else {
            y.leray_project()
        };
    }
    let grid = y.grid();
    let d = grid.dim();
    let yc: Vec<&[Complex64]> = y.components().iter().map(|c| c.as_slice()).collect();
    let mut yp = grid.synthesize(&yc);
    for j in 0..grid.nodes() {
        let m = (0..d).map(|c| yp[c][j] * yp[c][j]).sum::<f64>().sqrt();
        let f = abs_pow(m, e - 1.0);
        for comp in yp.iter_mut() {
            comp[j] *= f;
        }
    }
    to_projected(y, &yp)
}

/// Damping operator `C₁(y) = P(|y|^{r-1} y)`.
pub fn damping_c1(y: &FourierField, r: f64) -> FourierField {
    power_term(y, r)
}

/// Pumping/damping operator `C₂(y) = P(|y|^{q-1} y)`.
pub fn pumping_c2(y: &FourierField, q: f64) -> FourierField {
    power_term(y, q)
}

/// Linear part `μAy + αy` of `Γ`.
pub fn gamma_linear(y: &FourierField, p: &ModelParams) -> Result<FourierField> {
    let ay = y.stokes_apply()?;
    Ok(ay.scale(p.mu).axpy(p.alpha, y))
}

/// Nonlinear part `B(y) + βC₁(y) + γC₂(y)` of `Γ`.
pub fn gamma_nonlinear(y: &FourierField, p: &ModelParams) -> FourierField {
    nonlinear_terms(y, p).rhs.scale(-1.0)
}

/// `Γ(y) = μAy + αy + B(y) + βC₁(y) + γC₂(y)`.
pub fn gamma_apply(y: &FourierField, p: &ModelParams) -> Result<FourierField> {
    Ok(&gamma_linear(y, p)? + &gamma_nonlinear(y, p))
}

/// `((Γ + κI)(y) - (Γ + κI)(z), y - z)`.
pub fn monotonicity_gap(
    y: &FourierField,
    z: &FourierField,
    kappa: f64,
    p: &ModelParams,
) -> Result<f64> {
    let w = y - z;
    let gy = gamma_apply(y, p)?;
    let gz = gamma_apply(z, p)?;
    Ok((&gy - &gz).inner_h(&w) + kappa * w.inner_h(&w))
}

/// Returns `(⟨C₁(y) - C₁(z), y - z⟩, 2^{1-r} ‖y - z‖^{r+1}_{L^{r+1}})`.
pub fn c1_monotonicity(y: &FourierField, z: &FourierField, r: f64) -> (f64, f64) {
    let w = y - z;
    let lhs = (&damping_c1(y, r) - &damping_c1(z, r)).inner_h(&w);
    let lower = 2f64.powf(1.0 - r) * w.to_physical().integral_abs_pow(r + 1.0);
    (lhs, lower)
}

/// Returns `(‖C₁(y) - C₁(z)‖_*, r 2^{r-2} (‖y‖^{r-1} + ‖z‖^{r-1}) ‖y - z‖)`
/// with `L^{r+1}` norms on the right and the spectral dual surrogate
/// `‖(I + A)^{-1/2}·‖_H` on the left.
pub fn c1_lipschitz(y: &FourierField, z: &FourierField, r: f64) -> (f64, f64) {
    let lhs = (&damping_c1(y, r) - &damping_c1(z, r)).norm_dual();
    let ny = y.to_physical().integral_abs_pow(r + 1.0).powf(1.0 / (r + 1.0));
    let nz = z.to_physical().integral_abs_pow(r + 1.0).powf(1.0 / (r + 1.0));
    let nw = (y - z).to_physical().integral_abs_pow(r + 1.0).powf(1.0 / (r + 1.0));
    let rhs = r * 2f64.powf(r - 2.0) * (ny.powf(r - 1.0) + nz.powf(r - 1.0)) * nw;
    (lhs, rhs)
}

/// Relative residual of the identity
/// `∫(-Δy)·|y|^{r-1}y = ∫|∇y|²|y|^{r-1} + 4(r-1)/(r+1)² ∫|∇|y|^{(r+1)/2}|²`.
///
/// The gradient of `|y|^{(r+1)/2}` is expanded by the chain rule, so the
/// second integral is `(r-1) ∫ |y|^{r-3} Σ_i (y·∂_i y)²`. Returns 0 for the
/// zero field.
pub fn commutation_identity_residual(y: &FourierField, r: f64) -> f64 {
    let grid = y.grid();
    let d = grid.dim();
    let ph = physical_with_grad(y);
    let lap = y.neg_laplacian();
    let lc: Vec<&[Complex64]> = lap.components().iter().map(|c| c.as_slice()).collect();
    let lp = grid.synthesize(&lc);
    let (mut lhs, mut first, mut second) = (0.0, 0.0, 0.0);
    for j in 0..grid.nodes() {
        let m2: f64 = (0..d).map(|c| ph.y[c][j] * ph.y[c][j]).sum();
        let m = m2.sqrt();
        let pr = abs_pow(m, r - 1.0);
        let mut g2 = 0.0;
        let mut s2 = 0.0;
        for i in 0..d {
            let mut s = 0.0;
            for c in 0..d {
                let g = ph.grad[c * d + i][j];
                g2 += g * g;
                s += ph.y[c][j] * g;
            }
            s2 += s * s;
            lhs += lp[i][j] * pr * ph.y[i][j];
        }
        first += g2 * pr;
        if r != 1.0 {
            second += abs_pow(m, r - 3.0) * s2;
        }
    }
    let rhs = first + (r - 1.0) * second;
    if lhs == 0.0 && rhs == 0.0 {
        return 0.0;
    }
    (lhs - rhs).abs() / lhs.abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Grid, GridSpec};
    use std::sync::Arc;

    fn grid(n: usize) -> Arc<Grid> {
        Grid::new(GridSpec::new(2, n, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn abs_pow_conventions() {
        assert_eq!(abs_pow(0.0, 0.0), 1.0);
        assert_eq!(abs_pow(0.0, 2.5), 0.0);
        assert_eq!(abs_pow(2.0, 3.0), 8.0);
        assert!((abs_pow(2.0, 0.5) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn eta1_matches_independent_arithmetic() {
        let p = ModelParams::new(1.0, 1.0, 1.0, 1.0, 5.0, 2.0).unwrap();
        let c = DerivedConstants::new(&p, 1.0).unwrap();
        // bracket = 4·2·1·1/(1·4) = 2, exponent 1/3, prefactor 3/4
        assert!((c.eta1 - 0.75 * 2f64.cbrt()).abs() < 1e-12);
        assert!((c.eta1 - 0.944_940).abs() < 1e-6);
        // bracket doubles for η₂
        assert!((c.eta2 - 0.75 * 4f64.cbrt()).abs() < 1e-12);
        // η₃ = 2/(2·4)·(4/4)^{1} = 1/4
        assert!((c.eta3 - 0.25).abs() < 1e-12);
        assert!((c.kappa - (c.eta1 + c.eta2 + c.eta3)).abs() < 1e-15);
    }

    #[test]
    fn degenerate_constants() {
        let p = ModelParams::new(1.0, 1.0, 1.0, 0.7, 4.0, 1.0).unwrap();
        let c = DerivedConstants::new(&p, 1.0).unwrap();
        assert_eq!((c.eta1, c.eta2), (0.0, 0.0));
        let p = ModelParams::new(1.0, 1.0, 1.0, 0.0, 4.0, 2.0).unwrap();
        let c = DerivedConstants::new(&p, 1.0).unwrap();
        assert_eq!((c.eta1, c.eta2), (0.0, 0.0));
        let p = ModelParams::new(1.0, 1.0, 1.0, 0.3, 3.0, 2.0).unwrap();
        assert_eq!(DerivedConstants::new(&p, 1.0).unwrap().eta3, 0.0);
        assert!(matches!(
            ModelParams::new(0.5, 1.0, 0.9, 0.0, 3.0, 2.0),
            Err(CbfedError::Admissibility(_))
        ));
        assert!(ModelParams::new(1.0, 1.0, 1.0, 0.0, 4.0, 4.0).is_err());
    }

    #[test]
    fn shear_flow_is_advection_free() {
        let g = grid(16);
        let y = FourierField::shear(&g, 0.8, 1).unwrap();
        assert!(bilinear_b(&y).norm_h() < 1e-14);
        let (r, a) = (3.0, 0.8f64);
        let c1 = damping_c1(&y, r);
        assert!((c1.inner_h(&y) - 0.375 * a.powi(4)).abs() < 1e-12);
    }

    #[test]
    fn linear_eigen_action_of_gamma() {
        let g = grid(16);
        let p = ModelParams {
            beta: 0.0,
            gamma: 0.0,
            ..ModelParams::default()
        };
        let y = FourierField::shear(&g, 0.3, 1).unwrap();
        let gy = gamma_apply(&y, &p).unwrap();
        let expect = y.scale(p.mu * 4.0 * std::f64::consts::PI.powi(2) + p.alpha);
        assert!((&gy - &expect).norm_h() < 1e-13);
    }
}
