//! Exponential-Euler time integration of the controlled CBFeD system.
//!
//! Per Fourier mode the linear part `μA + αI` is integrated exactly and the
//! nonlinear terms plus forcing are held constant over the step:
//!
//! `ŷ' = e^{-L h} ŷ + (1 - e^{-L h})/L · (N̂(y) + ĝ)`, with `L = μλ_k + α`.
//!
//! Controls of rate `v` and noise increments `ξ` are added after the linear
//! update, `y^{n+1} = ŷ' + dt·v + ξ`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{CbfedError, Result};
use crate::field::FourierField;
use crate::grid::Grid;
use crate::operators::{nonlinear_terms, ModelParams, NonlinearTerms};

/// Maximum number of local step halvings.
pub const MAX_HALVINGS: usize = 8;
/// Relative size of the explicit increment that triggers a halving.
pub const SAFETY_RATIO: f64 = 0.2;
/// Runaway threshold factor on `‖y₀‖ + 1`.
pub const NORM_CAP: f64 = 1e6;

/// Uniform time grid on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t_final: f64,
    dt: f64,
    steps: usize,
    stride: usize,
}

impl TimeGrid {
    /// Grid with step `dt`; `T/dt` must be an integer to `1e-12`.
    pub fn new(t_final: f64, dt: f64) -> Result<Self> {
        if !(t_final > 0.0 && t_final.is_finite()) || !(dt > 0.0 && dt.is_finite()) {
            return Err(CbfedError::Config(format!(
                "time grid needs T > 0 and dt > 0, got T={t_final} dt={dt}"
            )));
        }
        let steps = (t_final / dt).round() as usize;
        if steps == 0 || (steps as f64 * dt - t_final).abs() > 1e-12 * t_final.max(1.0) {
            return Err(CbfedError::Config(format!(
                "T = {t_final} is not an integer multiple of dt = {dt}"
            )));
        }
        Ok(TimeGrid {
            t_final,
            dt,
            steps,
            stride: steps,
        })
    }

    /// Copy that stores a snapshot every `stride` steps.
    pub fn with_stride(mut self, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(CbfedError::Config("snapshot stride must be >= 1".into()));
        }
        self.stride = stride;
        Ok(self)
    }

    /// Final time `T`.
    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    /// Step size.
    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of steps.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Snapshot stride.
    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Time of step index `n`.
    pub fn time(&self, n: usize) -> f64 {
        if n == self.steps {
            self.t_final
        } else {
            n as f64 * self.dt
        }
    }

    /// Same horizon with half the step.
    pub fn halved(&self) -> Self {
        TimeGrid {
            t_final: self.t_final,
            dt: self.dt / 2.0,
            steps: self.steps * 2,
            stride: self.stride * 2,
        }
    }
}

/// Time-indexed field source sampled at step starts.
#[derive(Debug, Clone, Default)]
pub enum FieldSource {
    /// Identically zero.
    #[default]
    Zero,
    /// Constant in time.
    Constant(FourierField),
    /// One field per step.
    PerStep(Vec<FourierField>),
}

impl FieldSource {
    /// Constant source, Leray-projected.
    pub fn constant(f: &FourierField) -> Self {
        FieldSource::Constant(f.leray_project())
    }

    /// Errors unless every field lives on `grid`.
    pub fn check_grid(&self, grid: &Grid) -> Result<()> {
        let fields: &[FourierField] = match self {
            FieldSource::Zero => &[],
            FieldSource::Constant(f) => std::slice::from_ref(f),
            FieldSource::PerStep(v) => v,
        };
        if fields.iter().any(|f| f.spec() != grid.spec()) {
            return Err(CbfedError::Config("source field lives on another grid".into()));
        }
        Ok(())
    }

    /// Value at step `n`, `None` for zero.
    pub fn at(&self, n: usize) -> Option<&FourierField> {
        match self {
            FieldSource::Zero => None,
            FieldSource::Constant(f) => Some(f),
            FieldSource::PerStep(v) => v.get(n).or_else(|| v.last()),
        }
    }
}

/// Per-mode exponential factors at one step size.
#[derive(Debug, Clone)]
struct Factors {
    decay: Vec<f64>,
    phi: Vec<f64>,
}

impl Factors {
    fn new(grid: &Grid, p: &ModelParams, h: f64) -> Self {
        let mut decay = vec![0.0; grid.modes()];
        let mut phi = vec![0.0; grid.modes()];
        for &idx in grid.active_indices() {
            let l = p.linear_rate(grid.lambda(idx));
            let e = (-l * h).exp();
            decay[idx] = e;
            phi[idx] = -(-l * h).exp_m1() / l;
        }
        Factors { decay, phi }
    }
}

/// Exponential-Euler stepper with precomputed factors for every halving
/// level.
#[derive(Debug, Clone)]
pub struct Stepper {
    grid: Arc<Grid>,
    params: ModelParams,
    dt: f64,
    levels: Vec<Factors>,
}

impl Stepper {
    /// Stepper for step `dt` on `grid`.
    pub fn new(grid: &Arc<Grid>, params: ModelParams, dt: f64) -> Result<Self> {
        params.validate()?;
        if !(dt > 0.0) {
            return Err(CbfedError::Config(format!("dt must be positive, got {dt}")));
        }
        let levels = (0..=MAX_HALVINGS)
            .map(|l| Factors::new(grid, &params, dt / (1u64 << l) as f64))
            .collect();
        Ok(Stepper {
            grid: grid.clone(),
            params,
            dt,
            levels,
        })
    }

    /// Model parameters.
    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// Step size.
    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Grid.
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// Decay factor `e^{-(μλ+α)dt}` of lattice index `idx`.
    pub fn decay(&self, idx: usize) -> f64 {
        self.levels[0].decay[idx]
    }

    /// Explicit terms at `y`.
    pub fn nonlinear(&self, y: &FourierField) -> NonlinearTerms {
        nonlinear_terms(y, &self.params)
    }

    fn etd(
        &self,
        y: &FourierField,
        rhs: &FourierField,
        forcing: Option<&FourierField>,
        level: usize,
    ) -> FourierField {
        let f = &self.levels[level];
        let mut out = y.clone();
        let div_free = y.is_div_free() && rhs.is_div_free() && forcing.map_or(true, |g| g.is_div_free());
        {
            let comps = out.components_mut();
            for (c, comp) in comps.iter_mut().enumerate() {
                let n = rhs.component(c);
                let g = forcing.map(|g| g.component(c));
                for &idx in self.grid.active_indices() {
                    let mut src = n[idx];
                    if let Some(g) = g {
                        src += g[idx];
                    }
                    comp[idx] = comp[idx] * f.decay[idx] + src * f.phi[idx];
                }
            }
        }
        out.set_div_free(div_free);
        out
    }

    /// One step of size `dt` from `y`, with explicit terms evaluated at
    /// `y + shift` and `nl` their value at the start.
    ///
    /// If `h·‖N‖ > 0.2‖y‖` the step is split in two halves, recursively, up to
    /// [`MAX_HALVINGS`] levels. Returns the new state and the number of
    /// substeps taken.
    pub fn advance(
        &self,
        y: &FourierField,
        nl: &NonlinearTerms,
        forcing: Option<&FourierField>,
        shift: Option<&FourierField>,
    ) -> (FourierField, usize) {
        self.advance_level(y, &nl.rhs, forcing, shift, 0)
    }

    fn advance_level(
        &self,
        y: &FourierField,
        rhs: &FourierField,
        forcing: Option<&FourierField>,
        shift: Option<&FourierField>,
        level: usize,
    ) -> (FourierField, usize) {
        let h = self.dt / (1u64 << level) as f64;
        let scale = match shift {
            Some(s) => (y + s).norm_h(),
            None => y.norm_h(),
        };
        if level < MAX_HALVINGS && h * rhs.norm_h() > SAFETY_RATIO * scale {
            let (y1, c1) = self.advance_level(y, rhs, forcing, shift, level + 1);
            let rhs1 = match shift {
                Some(s) => self.nonlinear(&(&y1 + s)).rhs,
                None => self.nonlinear(&y1).rhs,
            };
            let (y2, c2) = self.advance_level(&y1, &rhs1, forcing, shift, level + 1);
            return (y2, c1 + c2);
        }
        (self.etd(y, rhs, forcing, level), 1)
    }

    /// Single step without controls; see [`Stepper::advance`].
    pub fn step(&self, y: &FourierField, forcing: Option<&FourierField>) -> FourierField {
        let nl = self.nonlinear(y);
        self.advance(y, &nl, forcing, None).0
    }
}

/// Additive inputs applied after the exponential update of one step.
#[derive(Debug, Clone, Default)]
pub struct Kick {
    /// Control rate `v`; contributes `dt·v`.
    pub control: Option<FourierField>,
    /// Absolute increment, e.g. `√Q ΔW`.
    pub noise: Option<FourierField>,
}

/// Time series and snapshots of one run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Time grid of the run.
    pub time_grid: TimeGrid,
    /// `t_n` for `n = 0..=steps`.
    pub times: Vec<f64>,
    /// `‖y_n‖²_H`.
    pub energy: Vec<f64>,
    /// `‖∇y_n‖²_H`.
    pub grad_energy: Vec<f64>,
    /// `∫|y_n|^{r+1}`.
    pub int_r1: Vec<f64>,
    /// `∫|y_n|^{q+1}`.
    pub int_q1: Vec<f64>,
    /// `∫|y_n|^{r-1}|∇y_n|²`.
    pub weighted_grad: Vec<f64>,
    /// `‖Ay_n‖²_H`.
    pub stokes_energy: Vec<f64>,
    /// Per step: `dt·(f + v, (y_n + y_{n+1})/2)`.
    pub work: Vec<f64>,
    /// Per step: `dt·(f, y_n)`.
    pub forcing_left: Vec<f64>,
    /// Per step: `(ξ_n, y_n)` for the noise increment `ξ_n`.
    pub noise_left: Vec<f64>,
    /// Per step: number of substeps taken by the safety controller.
    pub substeps: Vec<usize>,
    /// Stored states.
    pub snapshots: Vec<FourierField>,
    /// Times of the stored states.
    pub snapshot_times: Vec<f64>,
    /// Final state.
    pub final_state: FourierField,
}

impl Trajectory {
    /// `‖y_n‖_H` series.
    pub fn norm_h(&self) -> Vec<f64> {
        self.energy.iter().map(|e| e.sqrt()).collect()
    }

    /// `‖∇y_n‖_H` series.
    pub fn norm_grad(&self) -> Vec<f64> {
        self.grad_energy.iter().map(|e| e.sqrt()).collect()
    }

    /// `‖y_n‖_{L^{r+1}}` series.
    pub fn norm_lr1(&self, r: f64) -> Vec<f64> {
        self.int_r1.iter().map(|v| v.powf(1.0 / (r + 1.0))).collect()
    }

    /// `‖y_n‖_{L^{q+1}}` series.
    pub fn norm_lq1(&self, q: f64) -> Vec<f64> {
        self.int_q1.iter().map(|v| v.powf(1.0 / (q + 1.0))).collect()
    }

    /// Largest number of substeps used in one step.
    pub fn max_substeps(&self) -> usize {
        self.substeps.iter().copied().max().unwrap_or(1)
    }
}

pub(crate) struct Recorder {
    traj: Trajectory,
}

impl Recorder {
    pub(crate) fn new(tg: TimeGrid, y0: &FourierField) -> Self {
        Recorder {
            traj: Trajectory {
                time_grid: tg,
                times: Vec::with_capacity(tg.steps() + 1),
                energy: Vec::with_capacity(tg.steps() + 1),
                grad_energy: Vec::with_capacity(tg.steps() + 1),
                int_r1: Vec::with_capacity(tg.steps() + 1),
                int_q1: Vec::with_capacity(tg.steps() + 1),
                weighted_grad: Vec::with_capacity(tg.steps() + 1),
                stokes_energy: Vec::with_capacity(tg.steps() + 1),
                work: Vec::with_capacity(tg.steps()),
                forcing_left: Vec::with_capacity(tg.steps()),
                noise_left: Vec::with_capacity(tg.steps()),
                substeps: Vec::with_capacity(tg.steps()),
                snapshots: Vec::new(),
                snapshot_times: Vec::new(),
                final_state: y0.clone(),
            },
        }
    }

    pub(crate) fn state(&mut self, n: usize, y: &FourierField, nl: &NonlinearTerms) {
        let tg = self.traj.time_grid;
        let t = tg.time(n);
        self.traj.times.push(t);
        self.traj.energy.push(y.norm_h().powi(2));
        self.traj.grad_energy.push(y.norm_grad().powi(2));
        self.traj.int_r1.push(nl.diag.int_r1);
        self.traj.int_q1.push(nl.diag.int_q1);
        self.traj.weighted_grad.push(nl.diag.weighted_grad);
        self.traj.stokes_energy.push(y.norm_stokes().powi(2));
        if n % tg.stride() == 0 || n == tg.steps() {
            self.traj.snapshots.push(y.clone());
            self.traj.snapshot_times.push(t);
        }
    }
}

impl Recorder {
    pub(crate) fn step(&mut self, work: f64, forcing_left: f64, noise_left: f64, substeps: usize) {
        self.traj.work.push(work);
        self.traj.forcing_left.push(forcing_left);
        self.traj.noise_left.push(noise_left);
        self.traj.substeps.push(substeps);
    }

    pub(crate) fn finish(mut self, y: FourierField) -> Trajectory {
        self.traj.final_state = y;
        self.traj
    }
}

pub(crate) fn check_state(y: &FourierField, cap: f64, n: usize, t: f64) -> Result<()> {
    if !y.is_finite() {
        return Err(CbfedError::BlowUp {
            step: n,
            time: t,
            reason: "non-finite coefficients".into(),
        });
    }
    let norm = y.norm_h();
    if norm > cap {
        return Err(CbfedError::BlowUp {
            step: n,
            time: t,
            reason: format!("‖y‖_H = {norm:e} exceeds cap {cap:e}"),
        });
    }
    Ok(())
}

/// Runs the stepper from `y0` over `tg` with forcing `f` and per-step kicks.
///
/// `kick(n, t_n, y_n, ỹ)` receives the state at the start of step `n` and the
/// exponential update `ỹ`, and returns the additive inputs of the step.
pub fn integrate<K>(
    stepper: &Stepper,
    y0: &FourierField,
    tg: &TimeGrid,
    f: &FieldSource,
    mut kick: K,
) -> Result<Trajectory>
where
    K: FnMut(usize, f64, &FourierField, &FourierField) -> Result<Kick>,
{
    if (stepper.dt() - tg.dt()).abs() > 1e-15 * tg.dt() {
        return Err(CbfedError::Config("stepper and time grid disagree on dt".into()));
    }
    if y0.spec() != stepper.grid().spec() {
        return Err(CbfedError::Config("initial state lives on another grid".into()));
    }
    f.check_grid(stepper.grid())?;
    let dt = tg.dt();
    let cap = NORM_CAP * (y0.norm_h() + 1.0);
    let mut y = if y0.is_div_free() {
        y0.clone()
    } else {
        y0.leray_project()
    };
    let mut rec = Recorder::new(*tg, &y);
    let mut nl = stepper.nonlinear(&y);
    rec.state(0, &y, &nl);
    for n in 0..tg.steps() {
        let t = tg.time(n);
        let g = f.at(n);
        let (mut next, subs) = stepper.advance(&y, &nl, g, None);
        let k = kick(n, t, &y, &next)?;
        if let Some(v) = &k.control {
            next.add_scaled(dt, v);
        }
        let mut noise_left = 0.0;
        if let Some(xi) = &k.noise {
            noise_left = xi.inner_h(&y);
            next.add_scaled(1.0, xi);
        }
        check_state(&next, cap, n, t)?;
        let mid = (&y + &next).scale(0.5);
        let mut work = 0.0;
        let mut forcing_left = 0.0;
        if let Some(g) = g {
            work += dt * g.inner_h(&mid);
            forcing_left = dt * g.inner_h(&y);
        }
        if let Some(v) = &k.control {
            work += dt * v.inner_h(&mid);
        }
        rec.step(work, forcing_left, noise_left, subs);
        nl = stepper.nonlinear(&next);
        y = next;
        rec.state(n + 1, &y, &nl);
    }
    Ok(rec.finish(y))
}

/// Solves the forced, open-loop controlled system `y' + Γ(y) = f + g`.
///
/// Both sources enter the exponential update as a constant-in-step forcing.
pub fn solve(
    y0: &FourierField,
    control: &FieldSource,
    f: &FieldSource,
    tg: &TimeGrid,
    p: &ModelParams,
) -> Result<Trajectory> {
    let stepper = Stepper::new(y0.grid(), *p, tg.dt())?;
    control.check_grid(y0.grid())?;
    f.check_grid(y0.grid())?;
    let combined = match (control, f) {
        (FieldSource::Zero, other) | (other, FieldSource::Zero) => other.clone(),
        (a, b) => {
            let fields = (0..tg.steps())
                .map(|n| {
                    let mut s = a.at(n).expect("nonzero source").clone();
                    s.add_scaled(1.0, b.at(n).expect("nonzero source"));
                    s
                })
                .collect();
            FieldSource::PerStep(fields)
        }
    };
    integrate(&stepper, y0, tg, &combined, |_, _, _, _| Ok(Kick::default()))
}

/// Per-step relative residual of the discrete energy balance
///
/// `½Δ‖y‖² + dt·trap(μ‖∇y‖² + α‖y‖² + β∫|y|^{r+1} + γ∫|y|^{q+1}) - work`,
///
/// divided by the largest of its three terms (0 when all vanish).
pub fn energy_balance_residual(traj: &Trajectory, p: &ModelParams) -> Vec<f64> {
    let dt = traj.time_grid.dt();
    let dis = |n: usize| {
        p.mu * traj.grad_energy[n]
            + p.alpha * traj.energy[n]
            + p.beta * traj.int_r1[n]
            + p.gamma * traj.int_q1[n]
    };
    (0..traj.work.len())
        .map(|n| {
            let de = 0.5 * (traj.energy[n + 1] - traj.energy[n]);
            let diss = 0.5 * dt * (dis(n) + dis(n + 1));
            let w = traj.work[n];
            let scale = de.abs().max(diss.abs()).max(w.abs());
            if scale == 0.0 {
                0.0
            } else {
                (de + diss - w).abs() / scale
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    #[test]
    fn time_grid_rejects_non_integer_ratio() {
        assert!(TimeGrid::new(1.0, 0.3).is_err());
        let tg = TimeGrid::new(1.0, 1e-3).unwrap();
        assert_eq!(tg.steps(), 1000);
        assert_eq!(tg.time(1000), 1.0);
    }

    #[test]
    fn zero_state_stays_zero() {
        let g = Grid::new(GridSpec::new(2, 8, 1.0).unwrap()).unwrap();
        let y0 = FourierField::zeros(&g).leray_project();
        let tg = TimeGrid::new(0.1, 0.01).unwrap();
        let tr = solve(&y0, &FieldSource::Zero, &FieldSource::Zero, &tg, &ModelParams::default())
            .unwrap();
        assert_eq!(tr.final_state.norm_h(), 0.0);
        assert!(energy_balance_residual(&tr, &ModelParams::default())
            .iter()
            .all(|&r| r == 0.0));
    }
}
