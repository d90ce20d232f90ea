//! Stochastic CBFeD system `dX + Γ(X) dt = f dt + √Q dW`, integrated
//! directly and through the splitting `X = Z + Y` with `Y` the
//! Ornstein–Uhlenbeck process, plus the Itô-energy and moment-bound
//! diagnostics.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CbfedError, Result};
use crate::field::FourierField;
use crate::noise::{NoiseBasis, NoiseDraw, NoiseSampler, NoiseSpec};
use crate::operators::ModelParams;
use crate::solver::{check_state, integrate, FieldSource, Kick, Recorder, Stepper, TimeGrid, Trajectory, NORM_CAP};
use crate::stats::{mean_ci, MeanCi};

/// Which integrator(s) to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Exponential Euler–Maruyama.
    Direct,
    /// `Z`-equation with exact OU process.
    OuDecomposition,
    /// Both, on the same noise realization.
    Both,
}

/// Inputs of a stochastic run.
#[derive(Debug, Clone)]
pub struct StochasticRunConfig {
    /// Initial state `x`.
    pub x0: FourierField,
    /// Deterministic forcing `f`.
    pub forcing: FieldSource,
    /// Time grid.
    pub time_grid: TimeGrid,
    /// Model parameters.
    pub params: ModelParams,
    /// Noise covariance and seed.
    pub noise: NoiseSpec,
    /// Step of the underlying Brownian path; defaults to `dt`.
    pub noise_dt: Option<f64>,
}

/// Per-path integrals and suprema entering the moment bounds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PathDiagnostics {
    /// `sup_t ‖X‖²_H`.
    pub sup_h2: f64,
    /// `∫‖X‖²_H`.
    pub int_h2: f64,
    /// `∫‖∇X‖²_H`.
    pub int_grad2: f64,
    /// `∫‖X‖^{r+1}_{L^{r+1}}`.
    pub int_r1: f64,
    /// `∫‖X‖^{q+1}_{L^{q+1}}`.
    pub int_q1: f64,
    /// `sup_t ‖∇X‖²_H`.
    pub sup_grad2: f64,
    /// `∫‖AX‖²_H`.
    pub int_stokes2: f64,
    /// `∫‖|X|^{(r-1)/2}∇X‖²_H`.
    pub int_weighted_grad: f64,
    /// Largest substep count used by the safety controller.
    pub max_substeps: usize,
}

fn trapezoid(v: &[f64], dt: f64) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    dt * (v.iter().sum::<f64>() - 0.5 * (v[0] + v[v.len() - 1]))
}

fn sup(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

impl PathDiagnostics {
    /// Diagnostics of a trajectory (trapezoid rule in time).
    pub fn from_trajectory(tr: &Trajectory) -> Self {
        let dt = tr.time_grid.dt();
        PathDiagnostics {
            sup_h2: sup(&tr.energy),
            int_h2: trapezoid(&tr.energy, dt),
            int_grad2: trapezoid(&tr.grad_energy, dt),
            int_r1: trapezoid(&tr.int_r1, dt),
            int_q1: trapezoid(&tr.int_q1, dt),
            sup_grad2: sup(&tr.grad_energy),
            int_stokes2: trapezoid(&tr.stokes_energy, dt),
            int_weighted_grad: trapezoid(&tr.weighted_grad, dt),
            max_substeps: tr.max_substeps(),
        }
    }
}

/// Both integrators on one noise realization.
#[derive(Debug, Clone)]
pub struct PairedRun {
    /// Direct integrator.
    pub direct: Trajectory,
    /// OU splitting.
    pub ou: Trajectory,
    /// `‖X_direct(T) - X_ou(T)‖_H`.
    pub endpoint_gap: f64,
}

/// Stochastic integrator sharing its stepper and noise sampler across paths.
#[derive(Debug, Clone)]
pub struct StochasticSolver {
    cfg: StochasticRunConfig,
    stepper: Stepper,
    sampler: Arc<NoiseSampler>,
    ratio: usize,
    trace_q: f64,
    trace_aq: f64,
}

impl StochasticSolver {
    /// Prepares stepper, basis and sampler. The noise needs `Tr Q < ∞`.
    pub fn new(cfg: StochasticRunConfig) -> Result<Self> {
        let grid = cfg.x0.grid().clone();
        cfg.noise.validate()?;
        if !cfg.noise.trace_q_admissible(grid.dim()) {
            return Err(CbfedError::Admissibility(format!(
                "Tr Q is infinite for eps_q = {} <= d/2",
                cfg.noise.eps_q
            )));
        }
        cfg.forcing.check_grid(&grid)?;
        let stepper = Stepper::new(&grid, cfg.params, cfg.time_grid.dt())?;
        let basis = Arc::new(NoiseBasis::new(&grid, cfg.noise)?);
        let trace_q = basis.trace_q().partial;
        let trace_aq = basis.trace_aq().partial;
        let noise_dt = cfg.noise_dt.unwrap_or(cfg.time_grid.dt());
        let sampler = Arc::new(NoiseSampler::new(basis, &cfg.params, noise_dt)?);
        let ratio = sampler.ratio(cfg.time_grid.dt())?;
        Ok(StochasticSolver {
            cfg,
            stepper,
            sampler,
            ratio,
            trace_q,
            trace_aq,
        })
    }

    /// Run configuration.
    pub fn config(&self) -> &StochasticRunConfig {
        &self.cfg
    }

    /// Noise basis.
    pub fn basis(&self) -> &Arc<NoiseBasis> {
        self.sampler.basis()
    }

    /// Noise sampler.
    pub fn sampler(&self) -> &Arc<NoiseSampler> {
        &self.sampler
    }

    /// Truncated `Tr Q`.
    pub fn trace_q(&self) -> f64 {
        self.trace_q
    }

    /// Truncated `Tr(AQ)`.
    pub fn trace_aq(&self) -> f64 {
        self.trace_aq
    }

    fn noise_off(&self) -> bool {
        self.cfg.noise.amplitude == 0.0
    }

    /// Direct integrator; `observer(n, x_n, draw)` sees the state before
    /// step `n` and its noise draw (`None` when the noise is off).
    pub fn solve_direct_observed<O>(&self, path: u64, mut observer: O) -> Result<Trajectory>
    where
        O: FnMut(usize, &FourierField, Option<&NoiseDraw>),
    {
        let off = self.noise_off();
        integrate(
            &self.stepper,
            &self.cfg.x0,
            &self.cfg.time_grid,
            &self.cfg.forcing,
            |n, _, y, _| {
                if off {
                    observer(n, y, None);
                    return Ok(Kick::default());
                }
                let draw = self.sampler.draw(path, n, self.ratio);
                observer(n, y, Some(&draw));
                Ok(Kick {
                    control: None,
                    noise: Some(self.sampler.wiener_field(&draw)),
                })
            },
        )
    }

    /// Direct integrator `X_{n+1} = E(X_n) + √Q ΔW_n`.
    pub fn solve_direct(&self, path: u64) -> Result<(Trajectory, PathDiagnostics)> {
        let tr = self.solve_direct_observed(path, |_, _, _| {})?;
        let d = PathDiagnostics::from_trajectory(&tr);
        Ok((tr, d))
    }

    /// OU splitting: `Y` advanced exactly, `Z` by the exponential update with
    /// explicit terms evaluated at `Z + Y`; returns the trajectory of
    /// `X = Z + Y`.
    pub fn solve_via_ou(&self, path: u64) -> Result<(Trajectory, PathDiagnostics)> {
        let tg = self.cfg.time_grid;
        let basis = self.sampler.basis();
        let decay: Vec<f64> = self
            .sampler
            .theta()
            .iter()
            .map(|t| (-t * tg.dt()).exp())
            .collect();
        let sqrt_mu: Vec<f64> = basis.modes().iter().map(|m| m.mu.sqrt()).collect();
        let x0 = if self.cfg.x0.is_div_free() {
            self.cfg.x0.clone()
        } else {
            self.cfg.x0.leray_project()
        };
        let cap = NORM_CAP * (x0.norm_h() + 1.0);
        let mut y_coef = vec![0.0; basis.len()];
        let mut y_field: Option<FourierField> = None;
        let mut z = x0.clone();
        let mut x = x0;
        let mut rec = Recorder::new(tg, &x);
        let mut nl = self.stepper.nonlinear(&x);
        rec.state(0, &x, &nl);
        let off = self.noise_off();
        for n in 0..tg.steps() {
            let t = tg.time(n);
            let g = self.cfg.forcing.at(n);
            let (z_next, subs) = self.stepper.advance(&z, &nl, g, y_field.as_ref());
            if !off {
                let draw = self.sampler.draw(path, n, self.ratio);
                for j in 0..y_coef.len() {
                    y_coef[j] = decay[j] * y_coef[j] + sqrt_mu[j] * draw.ou[j];
                }
                y_field = Some(basis.synthesize(&y_coef, y_coef.len()));
            }
            let x_next = match &y_field {
                Some(y) => &z_next + y,
                None => z_next.clone(),
            };
            check_state(&x_next, cap, n, t)?;
            let (work, forcing_left) = match g {
                Some(g) => {
                    let mid = (&x + &x_next).scale(0.5);
                    (tg.dt() * g.inner_h(&mid), tg.dt() * g.inner_h(&x))
                }
                None => (0.0, 0.0),
            };
            rec.step(work, forcing_left, 0.0, subs);
            nl = self.stepper.nonlinear(&x_next);
            z = z_next;
            x = x_next;
            rec.state(n + 1, &x, &nl);
        }
        let tr = rec.finish(x);
        let d = PathDiagnostics::from_trajectory(&tr);
        Ok((tr, d))
    }

    /// Both integrators on path `path`.
    pub fn solve_both(&self, path: u64) -> Result<PairedRun> {
        let (direct, _) = self.solve_direct(path)?;
        let (ou, _) = self.solve_via_ou(path)?;
        let endpoint_gap = (&direct.final_state - &ou.final_state).norm_h();
        Ok(PairedRun {
            direct,
            ou,
            endpoint_gap,
        })
    }

    /// Runs `n_paths` direct paths in parallel; results are ordered by path
    /// index.
    pub fn run_paths(&self, n_paths: usize) -> Vec<Result<PathDiagnostics>> {
        (0..n_paths as u64)
            .into_par_iter()
            .map(|path| self.solve_direct(path).map(|(_, d)| d))
            .collect()
    }
}

/// Relative residual of the discrete Itô energy identity at every step
/// time, with left-point sums:
///
/// `‖X_n‖² + 2Σ dt(α‖X‖² + μ‖∇X‖² + β∫|X|^{r+1} + γ∫|X|^{q+1})
///  - ‖x‖² - 2Σ dt(f, X) - Tr(Q) t_n - 2Σ(√QΔW, X)`.
pub fn ito_energy_residual(traj: &Trajectory, p: &ModelParams, trace_q: f64) -> Vec<f64> {
    let dt = traj.time_grid.dt();
    let e0 = traj.energy[0];
    let mut out = Vec::with_capacity(traj.energy.len());
    let (mut diss, mut gq, mut forcing, mut mart) = (0.0, 0.0, 0.0, 0.0);
    for n in 0..traj.energy.len() {
        if n > 0 {
            let m = n - 1;
            diss += 2.0
                * dt
                * (p.alpha * traj.energy[m] + p.mu * traj.grad_energy[m] + p.beta * traj.int_r1[m]);
            gq += 2.0 * dt * p.gamma * traj.int_q1[m];
            forcing += 2.0 * traj.forcing_left[m];
            mart += 2.0 * traj.noise_left[m];
        }
        let ito = trace_q * traj.times[n];
        let lhs = traj.energy[n] + diss + gq;
        let rhs = e0 + forcing + ito + mart;
        let scale = [traj.energy[n], diss, gq.abs(), e0, forcing.abs(), ito, mart.abs()]
            .into_iter()
            .fold(0.0, f64::max);
        out.push(if scale == 0.0 { 0.0 } else { (lhs - rhs) / scale });
    }
    out
}

/// H-level or V-level moment estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundLevel {
    /// Energy estimate in `H`.
    H,
    /// Gradient estimate in `V`.
    V,
}

/// Constants of the moment bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    /// `ϰ = (β(r+1)/(q+1))^{(q+1)/(r-q)} (r-q)/(r+1)`.
    pub varkappa: f64,
    /// `η₄ = (r-3)/(2μ(r-1)) [8/(βμ(r-1))]^{2/(r-3)}` (`r > 3`).
    pub eta4: f64,
    /// `η₅ = (q|γ|)^{(r-1)/(r-q)} [4(q-1)/(β(r-1))]^{(q-1)/(r-q)} (r-q)/(r-1)`.
    pub eta5: f64,
    /// `η₆ = (2θμ|γ|q(q-1))^{(3-q)/(q-1)} (3-q)/2` (`r = 3`; `|γ|` for `q = 1`).
    pub eta6: f64,
    /// Splitting parameter `θ ∈ (0, 1)` of the `r = 3` case.
    pub theta: f64,
}

impl BoundConstants {
    /// Evaluates the constants for `p` and `θ`.
    pub fn new(p: &ModelParams, theta: f64) -> Result<Self> {
        if !(theta > 0.0 && theta < 1.0) {
            return Err(CbfedError::Config(format!("θ must lie in (0, 1), got {theta}")));
        }
        let (r, q, g) = (p.r, p.q, p.gamma.abs());
        let varkappa = (p.beta * (r + 1.0) / (q + 1.0)).powf((q + 1.0) / (r - q)) * (r - q) / (r + 1.0);
        let eta4 = if r > 3.0 {
            (r - 3.0) / (2.0 * p.mu * (r - 1.0)) * (8.0 / (p.beta * p.mu * (r - 1.0))).powf(2.0 / (r - 3.0))
        } else {
            0.0
        };
        let eta5 = (q * g).powf((r - 1.0) / (r - q))
            * (4.0 / p.beta * (q - 1.0) / (r - 1.0)).powf((q - 1.0) / (r - q))
            * (r - q)
            / (r - 1.0);
        let eta6 = if q == 1.0 {
            g
        } else {
            (2.0 * theta * p.mu * g * q * (q - 1.0)).powf((3.0 - q) / (q - 1.0)) * (3.0 - q) / 2.0
        };
        Ok(BoundConstants {
            varkappa,
            eta4,
            eta5,
            eta6,
            theta,
        })
    }
}

/// Monte Carlo comparison of a moment estimate with its bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    /// Level checked.
    pub level: BoundLevel,
    /// `"r>3"` or `"r=3"` for the V level, `"H"` otherwise.
    pub case: String,
    /// Paths that finished.
    pub paths: usize,
    /// Paths aborted by the blow-up guard.
    pub aborted: usize,
    /// Mean of the left side with 95% half-width.
    pub lhs: MeanCi,
    /// Right side.
    pub rhs: f64,
    /// `rhs / (mean + half-width)`.
    pub slack: f64,
    /// `mean + half-width <= rhs`.
    pub passes: bool,
    /// Constants used.
    pub constants: BoundConstants,
}

/// Left side of the selected estimate for one path.
pub fn bound_lhs(d: &PathDiagnostics, p: &ModelParams, level: BoundLevel, theta: f64) -> f64 {
    match level {
        BoundLevel::H => {
            d.sup_h2 + 2.0 * p.mu * d.int_grad2 + 2.0 * p.alpha * d.int_h2 + 2.0 * p.beta * d.int_r1
        }
        BoundLevel::V if p.r > 3.0 => {
            d.sup_grad2
                + 2.0 * p.mu * d.int_stokes2
                + 4.0 * p.alpha * d.int_grad2
                + 2.0 * p.beta * d.int_weighted_grad
        }
        BoundLevel::V => {
            d.sup_grad2
                + p.mu * (1.0 - theta) * d.int_stokes2
                + 2.0 * (p.beta - 1.0 / (2.0 * theta * p.mu)) * d.int_weighted_grad
        }
    }
}

/// Right side of the selected estimate.
pub fn bound_rhs(solver: &StochasticSolver, level: BoundLevel, c: &BoundConstants) -> Result<f64> {
    let cfg = solver.config();
    let p = &cfg.params;
    let tg = cfg.time_grid;
    let t = tg.t_final();
    let (mut f_dual, mut f_h) = (0.0, 0.0);
    for n in 0..tg.steps() {
        if let Some(f) = cfg.forcing.at(n) {
            f_dual += tg.dt() * f.norm_dual().powi(2);
            f_h += tg.dt() * f.norm_h().powi(2);
        }
    }
    let x = &cfg.x0;
    match level {
        BoundLevel::H => {
            let vol = x.spec().volume();
            let growth = c.varkappa * (2.0 * p.gamma.abs()).powf((p.r + 1.0) / (p.r - p.q)) * vol * t;
            Ok(2.0
                * (x.norm_h().powi(2)
                    + (1.0 / p.alpha + 1.0 / p.mu) * f_dual
                    + growth
                    + 7.0 * solver.trace_q() * t))
        }
        BoundLevel::V => {
            cfg.noise.require_trace_aq(x.grid().dim())?;
            let g2 = x.norm_grad().powi(2);
            if p.r > 3.0 {
                Ok(2.0 * (g2 + f_h / p.mu + 7.0 * t * solver.trace_aq())
                    * (2.0 * (c.eta4 + c.eta5) * t).exp())
            } else {
                if !(2.0 * p.beta * p.mu > 1.0) {
                    return Err(CbfedError::Admissibility("r = 3 needs 2βμ > 1".into()));
                }
                Ok(2.0
                    * (g2 + f_h / (2.0 * p.mu * (1.0 - c.theta)) + 7.0 * t * solver.trace_aq())
                    * (2.0 * c.eta6 * t).exp())
            }
        }
    }
}

/// Compares path diagnostics with the selected bound.
pub fn bound_from_paths(
    solver: &StochasticSolver,
    paths: &[Result<PathDiagnostics>],
    level: BoundLevel,
    theta: f64,
) -> Result<BoundCheck> {
    let p = solver.config().params;
    let c = BoundConstants::new(&p, theta)?;
    let ok: Vec<&PathDiagnostics> = paths.iter().filter_map(|r| r.as_ref().ok()).collect();
    if ok.is_empty() {
        return Err(CbfedError::Experiment("every path aborted".into()));
    }
    let lhs: Vec<f64> = ok.iter().map(|d| bound_lhs(d, &p, level, theta)).collect();
    let lhs = mean_ci(&lhs);
    let rhs = bound_rhs(solver, level, &c)?;
    let top = lhs.mean + lhs.half_width;
    let case = match level {
        BoundLevel::H => "H".to_string(),
        BoundLevel::V if p.r > 3.0 => "r>3".to_string(),
        BoundLevel::V => "r=3".to_string(),
    };
    Ok(BoundCheck {
        level,
        case,
        paths: ok.len(),
        aborted: paths.len() - ok.len(),
        lhs,
        rhs,
        slack: rhs / top,
        passes: top <= rhs,
        constants: c,
    })
}

/// Runs `n_paths` paths and checks the selected bound.
pub fn expectation_bound_check(
    solver: &StochasticSolver,
    level: BoundLevel,
    n_paths: usize,
    theta: f64,
) -> Result<BoundCheck> {
    if level == BoundLevel::V {
        solver.config().noise.require_trace_aq(solver.config().x0.grid().dim())?;
    }
    let paths = solver.run_paths(n_paths);
    bound_from_paths(solver, &paths, level, theta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn varkappa_by_hand() {
        let p = ModelParams::default();
        let c = BoundConstants::new(&p, 0.5).unwrap();
        // (5/3)^{3/2} · 2/5
        assert!((c.varkappa - (5.0f64 / 3.0).powf(1.5) * 0.4).abs() < 1e-14);
        // (r-3)/(2μ(r-1)) [8/(βμ(r-1))]^{2} = (1/6)(8/3)²
        assert!((c.eta4 - 64.0 / 54.0).abs() < 1e-14);
    }

    #[test]
    fn eta6_linear_secondary_term() {
        let p = ModelParams::new(1.0, 1.0, 1.0, -0.3, 3.0, 1.0).unwrap();
        let c = BoundConstants::new(&p, 0.5).unwrap();
        assert_eq!(c.eta6, 0.3);
        assert!((c.eta5 - 0.3).abs() < 1e-15);
    }
}
