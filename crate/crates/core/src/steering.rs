//! Sign feedback `v = -ρ sgn(y - y₁)` steering the system to a target in
//! finite time, and the approximate-controllability construction with
//! `B = √Q`.
//!
//! The smoothed sign is evaluated at the new state: with `ỹ` the
//! exponential update of `y_n`, the step solves
//! `y_{n+1} = ỹ - ρ dt · smooth_sgn(y_{n+1} - y₁, ε)` in closed form, which
//! gives `v = -ρ w̃ / max(ε + ρ dt, ‖w̃‖)` with `w̃ = ỹ - y₁`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{CbfedError, Result};
use crate::field::{FourierField, Norm};
use crate::noise::NoiseBasis;
use crate::operators::{gamma_apply, ModelParams};
use crate::solver::{integrate, FieldSource, Kick, Stepper, TimeGrid, Trajectory};

/// Default safety factor applied to [`rho_min`].
pub const DEFAULT_MARGIN: f64 = 1.1;
/// Steps excluded from the monotone-decrease check.
pub const TRANSIENT_STEPS: usize = 5;

/// `w/ε` if `‖w‖_H <= ε`, else `w/‖w‖_H`.
pub fn smooth_sgn(w: &FourierField, eps: f64) -> Result<FourierField> {
    if !(eps > 0.0) {
        return Err(CbfedError::Domain(format!("smoothing must be positive, got {eps}")));
    }
    let n = w.norm_h();
    Ok(w.scale(1.0 / n.max(eps)))
}

/// Extinction time `T₀ = -(1/κ) ln(1 - κ dist0/(ρ - ‖Γ(y₁)‖))`.
///
/// Returns `∞` when the logarithm's argument is not positive. For `κ = 0`
/// the limit `dist0/(ρ - ‖Γ(y₁)‖)` is used.
pub fn extinction_time(rho: f64, kappa: f64, dist0: f64, gamma_y1: f64) -> Result<f64> {
    if !(rho > gamma_y1) {
        return Err(CbfedError::Precondition(format!(
            "need ρ > ‖Γ(y₁)‖, got ρ={rho} ‖Γ(y₁)‖={gamma_y1}"
        )));
    }
    if !(kappa >= 0.0) || !(dist0 >= 0.0) {
        return Err(CbfedError::Domain("need κ >= 0 and dist0 >= 0".into()));
    }
    let gap = rho - gamma_y1;
    if kappa == 0.0 {
        return Ok(dist0 / gap);
    }
    let arg = 1.0 - kappa * dist0 / gap;
    if arg <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-arg.ln() / kappa)
}

/// Smallest `ρ` with `T₀(ρ) <= T`, times `margin`:
/// `margin · (‖Γ(y₁)‖ + κ dist0 / (1 - e^{-κT}))`.
pub fn rho_min(dist0: f64, gamma_y1: f64, kappa: f64, horizon: f64, margin: f64) -> Result<f64> {
    if !(horizon > 0.0) || !(kappa >= 0.0) || !(margin >= 1.0) {
        return Err(CbfedError::Domain(format!(
            "need T > 0, κ >= 0, margin >= 1; got T={horizon} κ={kappa} margin={margin}"
        )));
    }
    let slope = if kappa == 0.0 {
        dist0 / horizon
    } else {
        kappa * dist0 / -(-kappa * horizon).exp_m1()
    };
    Ok(margin * (gamma_y1 + slope))
}

/// Closed-loop steering parameters.
#[derive(Debug, Clone)]
pub struct SteerConfig {
    /// Target `y₁`.
    pub target: FourierField,
    /// Horizon `T`.
    pub horizon: f64,
    /// Feedback gain `ρ`.
    pub rho: f64,
    /// Smoothing width `ε_sgn`.
    pub eps_sgn: f64,
    /// Smoothing floor `ε_min`.
    pub eps_min: f64,
    /// Success tolerance on `‖y(T) - y₁‖_H`.
    pub delta_h: f64,
}

impl SteerConfig {
    /// Validated configuration.
    pub fn new(
        target: FourierField,
        horizon: f64,
        rho: f64,
        eps_sgn: f64,
        eps_min: f64,
        delta_h: f64,
    ) -> Result<Self> {
        let c = SteerConfig {
            target,
            horizon,
            rho,
            eps_sgn,
            eps_min,
            delta_h,
        };
        c.validate()?;
        Ok(c)
    }

    /// Smoothing and tolerance scaled to `dist0 = ‖y₀ - y₁‖_H`:
    /// `ε_sgn = 1e-2 dist0`, `ε_min = 1e-6 dist0`,
    /// `δ_H = max(1e-3 dist0, 10 ε_min)`.
    pub fn scaled(y0: &FourierField, target: FourierField, horizon: f64, rho: f64) -> Result<Self> {
        let dist0 = (y0 - &target).norm_h().max(1e-12);
        let eps_min = 1e-6 * dist0;
        SteerConfig::new(
            target,
            horizon,
            rho,
            1e-2 * dist0,
            eps_min,
            (1e-3 * dist0).max(10.0 * eps_min),
        )
    }

    /// Checks `ρ > 0`, `ε_sgn >= ε_min > 0`, `δ_H > 0`, `T > 0`.
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) || !(self.horizon > 0.0) || !(self.delta_h > 0.0) {
            return Err(CbfedError::Config(format!(
                "need ρ, T, δ_H > 0; got ρ={} T={} δ_H={}",
                self.rho, self.horizon, self.delta_h
            )));
        }
        if !(self.eps_min > 0.0 && self.eps_sgn >= self.eps_min) {
            return Err(CbfedError::Config(format!(
                "need ε_sgn >= ε_min > 0; got ε_sgn={} ε_min={}",
                self.eps_sgn, self.eps_min
            )));
        }
        Ok(())
    }

    fn smoothing(&self, dist: f64) -> f64 {
        self.eps_min.max(self.eps_sgn.min(dist / 10.0))
    }

    /// Feedback rate for the state `y_n` and its exponential update `ỹ`.
    pub fn feedback(&self, y_n: &FourierField, y_tilde: &FourierField, dt: f64) -> FourierField {
        let eps = self.smoothing((y_n - &self.target).norm_h());
        let w = y_tilde - &self.target;
        let nw = w.norm_h();
        w.scale(-self.rho / (eps + self.rho * dt).max(nw))
    }
}

/// Quantities fixing the gain of a steering problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteerPlan {
    /// `‖y₀ - y₁‖_H`.
    pub dist0: f64,
    /// `‖Γ(y₁)‖_H`.
    pub gamma_y1: f64,
    /// Shift `κ`.
    pub kappa: f64,
    /// [`rho_min`] without margin.
    pub rho_min: f64,
    /// Chosen gain.
    pub rho: f64,
    /// Predicted extinction time at the chosen gain.
    pub t0: f64,
}

impl SteerPlan {
    /// Gain `margin · rho_min` for reaching `y₁` from `y₀` by `horizon`.
    pub fn new(
        y0: &FourierField,
        y1: &FourierField,
        p: &ModelParams,
        kappa: f64,
        horizon: f64,
        margin: f64,
    ) -> Result<Self> {
        let dist0 = (y0 - y1).norm_h();
        let gamma_y1 = gamma_apply(y1, p)?.norm_h();
        let base = rho_min(dist0, gamma_y1, kappa, horizon, 1.0)?;
        let rho = base * margin;
        let t0 = if rho > gamma_y1 {
            extinction_time(rho, kappa, dist0, gamma_y1)?
        } else {
            0.0
        };
        Ok(SteerPlan {
            dist0,
            gamma_y1,
            kappa,
            rho_min: base,
            rho,
            t0,
        })
    }
}

/// Outcome of a closed-loop run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteerReport {
    /// `‖y₀ - y₁‖_H`.
    pub dist0: f64,
    /// `‖y(T) - y₁‖_H`.
    pub achieved: f64,
    /// Success tolerance.
    pub delta_h: f64,
    /// `achieved <= δ_H`.
    pub success: bool,
    /// First step time with distance `<= δ_H`.
    pub first_hit: Option<f64>,
    /// Predicted extinction time (`None` if infinite).
    pub predicted_t0: Option<f64>,
    /// Gain used.
    pub rho: f64,
    /// `‖Γ(y₁)‖_H`.
    pub gamma_y1: f64,
    /// Shift `κ`.
    pub kappa: f64,
    /// Largest certificate residual, relative to `dist0`.
    pub certificate_max: f64,
    /// `∫ ‖v‖²_H dt`.
    pub control_energy: f64,
    /// `max_n ‖v_n‖_H`.
    pub max_control: f64,
    /// Distance non-increasing after the transient (tolerance `ε_min`).
    pub monotone_after_transient: bool,
    /// Graph norms of `y₀` and `y₁` in `D(A)`.
    pub da_norms: [f64; 2],
    /// Set when `y₁` carries energy near the truncation.
    pub resolution_warning: Option<String>,
}

/// Trajectory, series and report of a closed-loop run.
#[derive(Debug, Clone)]
pub struct SteerRun {
    /// State trajectory.
    pub trajectory: Trajectory,
    /// `‖y_n - y₁‖_H` for `n = 0..=steps`.
    pub distance: Vec<f64>,
    /// `‖v_n‖_H` per step.
    pub control_norm: Vec<f64>,
    /// Certificate residual at each step time (0 beyond `min(T₀, T)`).
    pub certificate: Vec<f64>,
    /// Summary.
    pub report: SteerReport,
}

/// Residual series `max(0, e^{-κt}‖y(t) - y₁‖ + (ρ - G)(1 - e^{-κt})/κ - dist0)`
/// over `t <= min(T₀, T)`, relative to `dist0`.
pub fn decay_certificate(
    times: &[f64],
    distance: &[f64],
    rho: f64,
    kappa: f64,
    gamma_y1: f64,
    t0: f64,
) -> Vec<f64> {
    let dist0 = distance.first().copied().unwrap_or(0.0);
    let gap = rho - gamma_y1;
    times
        .iter()
        .zip(distance)
        .map(|(&t, &d)| {
            if t > t0 || dist0 == 0.0 {
                return 0.0;
            }
            let growth = if kappa == 0.0 {
                t
            } else {
                -(-kappa * t).exp_m1() / kappa
            };
            let lhs = (-kappa * t).exp() * d + gap * growth;
            (lhs - dist0).max(0.0) / dist0
        })
        .collect()
}

fn resolution_warning(y1: &FourierField) -> Option<String> {
    let grid = y1.grid().clone();
    let cut = (grid.n() as f64 / 4.0).powi(2);
    let high = y1.weighted_energy(|i| {
        let k = grid.k(i);
        if ((k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64) > cut {
            1.0
        } else {
            0.0
        }
    });
    let total = y1.norm_h().powi(2);
    if total > 0.0 && high > 1e-6 * total {
        Some(format!(
            "target has {:.2e} of its energy above N/4; ‖Γ(y₁)‖ and ρ depend on resolution",
            high / total
        ))
    } else {
        None
    }
}

/// Closed-loop run from `y0` towards `cfg.target`. `observer(n, v_n)` sees
/// every control rate.
pub fn steer_observed<O>(
    y0: &FourierField,
    cfg: &SteerConfig,
    p: &ModelParams,
    tg: &TimeGrid,
    kappa: f64,
    mut observer: O,
) -> Result<SteerRun>
where
    O: FnMut(usize, &FourierField),
{
    cfg.validate()?;
    let stepper = Stepper::new(y0.grid(), *p, tg.dt())?;
    let gamma_y1 = gamma_apply(&cfg.target, p)?.norm_h();
    let dist0 = (y0 - &cfg.target).norm_h();
    let t0 = if cfg.rho > gamma_y1 {
        extinction_time(cfg.rho, kappa, dist0, gamma_y1)?
    } else {
        f64::INFINITY
    };
    let mut control_norm = Vec::with_capacity(tg.steps());
    let mut distance = Vec::with_capacity(tg.steps() + 1);
    let dt = tg.dt();
    let trajectory = integrate(&stepper, y0, tg, &FieldSource::Zero, |n, _, y, yt| {
        distance.push((y - &cfg.target).norm_h());
        let v = cfg.feedback(y, yt, dt);
        control_norm.push(v.norm_h());
        observer(n, &v);
        Ok(Kick {
            control: Some(v),
            noise: None,
        })
    })?;
    distance.push((&trajectory.final_state - &cfg.target).norm_h());
    let achieved = *distance.last().expect("trajectory has a final state");
    let first_hit = distance
        .iter()
        .position(|&d| d <= cfg.delta_h)
        .map(|n| trajectory.times[n]);
    let horizon = t0.min(tg.t_final());
    let certificate = decay_certificate(&trajectory.times, &distance, cfg.rho, kappa, gamma_y1, horizon);
    let monotone = distance
        .windows(2)
        .skip(TRANSIENT_STEPS)
        .all(|w| w[1] <= w[0] + cfg.eps_min);
    let report = SteerReport {
        dist0,
        achieved,
        delta_h: cfg.delta_h,
        success: achieved <= cfg.delta_h,
        first_hit,
        predicted_t0: t0.is_finite().then_some(t0),
        rho: cfg.rho,
        gamma_y1,
        kappa,
        certificate_max: certificate.iter().copied().fold(0.0, f64::max),
        control_energy: control_norm.iter().map(|v| v * v * dt).sum(),
        max_control: control_norm.iter().copied().fold(0.0, f64::max),
        monotone_after_transient: monotone,
        da_norms: [y0.norm(Norm::DA)?, cfg.target.norm(Norm::DA)?],
        resolution_warning: resolution_warning(&cfg.target),
    };
    Ok(SteerRun {
        trajectory,
        distance,
        control_norm,
        certificate,
        report,
    })
}

/// Closed-loop run; see [`steer_observed`].
pub fn steer(
    y0: &FourierField,
    cfg: &SteerConfig,
    p: &ModelParams,
    tg: &TimeGrid,
    kappa: f64,
) -> Result<SteerRun> {
    steer_observed(y0, cfg, p, tg, kappa, |_, _| {})
}

/// Result of the two-pass approximate-control experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproxControlReport {
    /// Requested tolerance on `‖P_M v - v‖_{L²(0,T;H)}`.
    pub eps_tol: f64,
    /// Number of basis elements kept.
    pub modes_used: usize,
    /// Size of the basis.
    pub modes_available: usize,
    /// Achieved `‖P_M v - v‖_{L²(0,T;H)}`.
    pub truncation: f64,
    /// `‖u‖_{L²(0,T;H)}` with `u = Q^{-1/2} P_M v`.
    pub u_norm: f64,
    /// `‖y_ε(T) - y₁‖_H` with control `Bu`.
    pub endpoint: f64,
    /// Endpoint distance of the feedback run itself.
    pub steer_endpoint: f64,
    /// `e^{2κT}/(2κ) · √ε_tol + δ_H`.
    pub bound: f64,
    /// `endpoint <= bound`.
    pub within_bound: bool,
}

/// Open-loop control `Bu` and the controlled trajectory it produces.
#[derive(Debug, Clone)]
pub struct ApproxControlRun {
    /// Summary.
    pub report: ApproxControlReport,
    /// Final state `y_ε(T)`.
    pub final_state: FourierField,
    /// Basis coordinates of `BV(t_n) = ∫_0^{t_n} Bu`, `n = 0..=steps`, if
    /// requested.
    pub bv_coeffs: Option<Vec<Vec<f64>>>,
}

/// Builds `u = Q^{-1/2} P_M v` from the feedback `v` of [`steer`] and reruns
/// the system with control `Bu = P_M v`, `B = √Q`.
///
/// `M` is the smallest count with `‖P_M v - v‖_{L²(0,T;H)} <= ε_tol`; when
/// every basis element is needed the projection is skipped.
#[allow(clippy::too_many_arguments)]
pub fn approx_steer_with_b(
    y0: &FourierField,
    cfg: &SteerConfig,
    p: &ModelParams,
    tg: &TimeGrid,
    kappa: f64,
    basis: &Arc<NoiseBasis>,
    eps_tol: f64,
    keep_bv: bool,
) -> Result<ApproxControlRun> {
    if !(eps_tol > 0.0) {
        return Err(CbfedError::Domain(format!("ε_tol must be positive, got {eps_tol}")));
    }
    let dt = tg.dt();
    let len = basis.len();
    let mut energy = vec![0.0; len];
    let first = steer_observed(y0, cfg, p, tg, kappa, |_, v| {
        for (e, a) in energy.iter_mut().zip(basis.coefficients(v)) {
            *e += dt * a * a;
        }
    })?;
    let mut tail = vec![0.0; len + 1];
    for j in (0..len).rev() {
        tail[j] = tail[j + 1] + energy[j];
    }
    let target = eps_tol * eps_tol;
    let m = match (0..=len).find(|&m| tail[m] <= target) {
        Some(m) => m,
        None => {
            return Err(CbfedError::ToleranceUnreachable {
                requested: eps_tol,
                best: tail[len].sqrt(),
            })
        }
    };
    let full = m == len;
    let mut u_norm2 = 0.0;
    for (j, mode) in basis.modes().iter().enumerate().take(m) {
        u_norm2 += energy[j] / mode.mu;
    }

    // Second pass: feedback and open loop advance in lockstep.
    let stepper = Stepper::new(y0.grid(), *p, dt)?;
    let start = if y0.is_div_free() {
        y0.clone()
    } else {
        y0.leray_project()
    };
    let mut y = start.clone();
    let mut z = start;
    let mut nl_y = stepper.nonlinear(&y);
    let mut nl_z = stepper.nonlinear(&z);
    let mut bv = keep_bv.then(|| vec![vec![0.0; len]]);
    let mut acc = vec![0.0; len];
    let cap = crate::solver::NORM_CAP * (y0.norm_h() + 1.0);
    for n in 0..tg.steps() {
        let (yt, _) = stepper.advance(&y, &nl_y, None, None);
        let v = cfg.feedback(&y, &yt, dt);
        let (mut zt, _) = stepper.advance(&z, &nl_z, None, None);
        let bu = if full {
            v.clone()
        } else {
            basis.project(&v, m)
        };
        zt.add_scaled(dt, &bu);
        let mut yn = yt;
        yn.add_scaled(dt, &v);
        if !zt.is_finite() || zt.norm_h() > cap {
            return Err(CbfedError::BlowUp {
                step: n,
                time: tg.time(n),
                reason: "open-loop controlled run diverged".into(),
            });
        }
        if let Some(series) = bv.as_mut() {
            for (a, c) in acc.iter_mut().zip(basis.coefficients(&bu)) {
                *a += dt * c;
            }
            series.push(acc.clone());
        }
        nl_y = stepper.nonlinear(&yn);
        nl_z = stepper.nonlinear(&zt);
        y = yn;
        z = zt;
    }
    let endpoint = (&z - &cfg.target).norm_h();
    let t = tg.t_final();
    let bound = if kappa > 0.0 {
        (2.0 * kappa * t).exp() / (2.0 * kappa) * eps_tol.sqrt() + cfg.delta_h
    } else {
        f64::INFINITY
    };
    Ok(ApproxControlRun {
        report: ApproxControlReport {
            eps_tol,
            modes_used: m,
            modes_available: len,
            truncation: tail[m].sqrt(),
            u_norm: u_norm2.sqrt(),
            endpoint,
            steer_endpoint: first.report.achieved,
            bound,
            within_bound: endpoint <= bound,
        },
        final_state: z,
        bv_coeffs: bv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extinction_time_closed_form() {
        let t0 = extinction_time(2.0, 1.0, 1.0, 0.0).unwrap();
        assert!((t0 - 2f64.ln()).abs() < 1e-15);
        assert_eq!(extinction_time(3.0, 1.0, 0.0, 1.0).unwrap(), 0.0);
        assert!(extinction_time(1.0, 1.0, 1.0, 1.0).is_err());
        assert_eq!(extinction_time(0.9, 1.0, 1.0, 0.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn rho_min_inverts_extinction_time() {
        let rho = rho_min(1.0, 0.0, 1.0, 2f64.ln(), 1.0).unwrap();
        assert!((rho - 2.0).abs() < 1e-14);
        assert_eq!(rho_min(0.0, 0.7, 1.0, 1.0, 1.0).unwrap(), 0.7);
    }
}
