//! Monte Carlo evidence for irreducibility: hitting probabilities of
//! target balls, the noise-to-control shadowing bound, the covariance
//! identity behind non-degeneracy, and resolvent accessibility.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CbfedError, Result};
use crate::field::FourierField;
use crate::noise::{NoiseBasis, NoiseSpec};
use crate::operators::ModelParams;
use crate::rng::{keyed_stream, DOMAIN_PROBE};
use crate::solver::{FieldSource, TimeGrid};
use crate::stats::{mean_ci, quantile, spearman, linear_fit, wilson, Z95};
use crate::steering::ApproxControlRun;
use crate::stochastic::{StochasticRunConfig, StochasticSolver};

/// Paths per bin of the envelope regression.
pub const ENVELOPE_BIN: usize = 10;

/// Smallest path count for which the Wilson intervals are reported.
pub const MIN_PATHS: usize = 100;

/// Paths from `start` and the target ball(s) around `target`.
#[derive(Debug, Clone)]
pub struct HittingExperiment {
    /// Initial state `x`.
    pub start: FourierField,
    /// Ball centre `x₁`.
    pub target: FourierField,
    /// Horizon and step.
    pub time_grid: TimeGrid,
    /// Ball radii.
    pub radii: Vec<f64>,
    /// Number of paths.
    pub n_paths: usize,
    /// Noise covariance and seed.
    pub noise: NoiseSpec,
    /// Model parameters.
    pub params: ModelParams,
    /// Deterministic forcing.
    pub forcing: FieldSource,
}

impl HittingExperiment {
    /// Checks radii and path count.
    pub fn validate(&self) -> Result<()> {
        if self.radii.is_empty() || self.radii.iter().any(|r| !(*r > 0.0)) {
            return Err(CbfedError::Config("radii must be positive and non-empty".into()));
        }
        if self.n_paths < MIN_PATHS {
            return Err(CbfedError::Config(format!(
                "at least {MIN_PATHS} paths are needed, got {}",
                self.n_paths
            )));
        }
        Ok(())
    }

    /// Stochastic solver of the experiment.
    pub fn solver(&self) -> Result<StochasticSolver> {
        StochasticSolver::new(StochasticRunConfig {
            x0: self.start.clone(),
            forcing: self.forcing.clone(),
            time_grid: self.time_grid,
            params: self.params,
            noise: self.noise,
            noise_dt: None,
        })
    }
}

/// Empirical hitting probability of one ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusEstimate {
    /// Ball radius.
    pub radius: f64,
    /// Paths ending inside the ball.
    pub hits: usize,
    /// `hits / n`.
    pub p_hat: f64,
    /// Wilson 95% lower bound.
    pub ci_low: f64,
    /// Wilson 95% upper bound.
    pub ci_high: f64,
}

fn radius_estimates(radii: &[f64], distances: &[Option<f64>]) -> Vec<RadiusEstimate> {
    let n = distances.len();
    radii
        .iter()
        .map(|&radius| {
            let hits = distances
                .iter()
                .filter(|d| d.is_some_and(|d| d < radius))
                .count();
            let (ci_low, ci_high) = wilson(hits, n, Z95);
            RadiusEstimate {
                radius,
                hits,
                p_hat: hits as f64 / n as f64,
                ci_low,
                ci_high,
            }
        })
        .collect()
}

/// Hitting estimates with per-path endpoint distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingResult {
    /// One estimate per radius, in input order.
    pub estimates: Vec<RadiusEstimate>,
    /// `‖X(T) - x₁‖_H` per path; `None` for aborted paths, which count as
    /// misses.
    pub distances: Vec<Option<f64>>,
    /// Aborted paths.
    pub aborted: usize,
    /// Master noise seed; path `i` uses stream index `i`.
    pub seed: u64,
}

impl HittingResult {
    /// Every Wilson lower bound is positive.
    pub fn witness(&self) -> bool {
        self.estimates.iter().all(|e| e.ci_low > 0.0)
    }

    /// `p̂` is non-decreasing in the radius.
    pub fn monotone_in_radius(&self) -> bool {
        let mut e = self.estimates.clone();
        e.sort_by(|a, b| a.radius.total_cmp(&b.radius));
        e.windows(2).all(|w| w[0].hits <= w[1].hits)
    }
}

/// Runs the experiment's paths and counts endpoints in each ball.
pub fn hitting_probability(exp: &HittingExperiment) -> Result<HittingResult> {
    exp.validate()?;
    let solver = exp.solver()?;
    let distances: Vec<Option<f64>> = (0..exp.n_paths as u64)
        .into_par_iter()
        .map(|path| {
            solver
                .solve_direct(path)
                .ok()
                .map(|(tr, _)| (&tr.final_state - &exp.target).norm_h())
        })
        .collect();
    let aborted = distances.iter().filter(|d| d.is_none()).count();
    if aborted == distances.len() {
        return Err(CbfedError::Experiment("every path aborted".into()));
    }
    Ok(HittingResult {
        estimates: radius_estimates(&exp.radii, &distances),
        distances,
        aborted,
        seed: exp.noise.seed,
    })
}

/// Noise-to-control distance and endpoint gap of one path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShadowingPath {
    /// `‖X(T) - y(T)‖_H`.
    pub d_end: f64,
    /// `max_n ‖BW(t_n) - BV(t_n)‖_V` with `‖·‖²_V = ‖·‖²_H + ‖∇·‖²_H`.
    pub sup_v: f64,
    /// `‖BW(T) - BV(T)‖_H`.
    pub terminal: f64,
    /// `sup_v + terminal`.
    pub d_noise: f64,
}

/// Summary of the shadowing experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowingResult {
    /// Per-path distances; aborted paths are dropped.
    pub paths: Vec<ShadowingPath>,
    /// Aborted paths.
    pub aborted: usize,
    /// `‖y(T) - x₁‖_H` of the controlled run.
    pub controlled_endpoint: f64,
    /// Spearman correlation of `d_noise` and `d_end`.
    pub rank_correlation: f64,
    /// Median `d_end` over all paths.
    pub median_end: f64,
    /// Median `d_end` over the lowest `d_noise` decile.
    pub low_decile_median_end: f64,
    /// `low_decile_median_end < median_end`.
    pub low_decile_closer: bool,
    /// Exponent `(r+1)/(2r)` of the envelope.
    pub exponent: f64,
    /// Slope of `log d_end` against `log d_noise` over all paths.
    pub pathwise_slope: f64,
    /// Slope of the upper envelope: `log max d_end` against `log median
    /// d_noise` over bins of [`ENVELOPE_BIN`] paths sorted by `d_noise`.
    pub envelope_slope: f64,
    /// Smallest `C_T` with `d_end <= C_T d_noise^a + terminal` on the first
    /// half of the paths.
    pub c_t_half: f64,
    /// Same over all paths.
    pub c_t_full: f64,
}

impl ShadowingResult {
    /// `c_t_full / c_t_half`.
    pub fn c_t_ratio(&self) -> f64 {
        self.c_t_full / self.c_t_half
    }
}

fn envelope_slope(d_noise: &[f64], d_end: &[f64]) -> f64 {
    let mut idx: Vec<usize> = (0..d_noise.len()).collect();
    idx.sort_by(|&i, &j| d_noise[i].total_cmp(&d_noise[j]));
    let (mut bx, mut by) = (Vec::new(), Vec::new());
    for chunk in idx.chunks_exact(ENVELOPE_BIN) {
        let xs: Vec<f64> = chunk.iter().map(|&i| d_noise[i]).collect();
        bx.push(quantile(&xs, 0.5).ln());
        by.push(chunk.iter().map(|&i| d_end[i]).fold(0.0, f64::max).ln());
    }
    if bx.len() < 2 {
        return f64::NAN;
    }
    linear_fit(&bx, &by).0
}

fn envelope_constant(paths: &[ShadowingPath], a: f64) -> f64 {
    paths
        .iter()
        .map(|p| (p.d_end - p.terminal).max(0.0) / p.d_noise.powf(a))
        .fold(0.0, f64::max)
}

/// Compares stochastic paths with the open-loop run driven by `Bu`.
///
/// `control` must carry the basis coordinates of `BV` (see
/// [`crate::steering::approx_steer_with_b`] with `keep_bv`).
pub fn shadowing_gap(exp: &HittingExperiment, control: &ApproxControlRun) -> Result<ShadowingResult> {
    exp.validate()?;
    let bv = control
        .bv_coeffs
        .as_ref()
        .ok_or_else(|| CbfedError::Precondition("control run was made without BV coordinates".into()))?;
    let solver = exp.solver()?;
    let steps = exp.time_grid.steps();
    if bv.len() != steps + 1 {
        return Err(CbfedError::Precondition("control and experiment time grids differ".into()));
    }
    let basis = solver.basis().clone();
    let sqrt_mu: Vec<f64> = basis.modes().iter().map(|m| m.mu.sqrt()).collect();
    let lambda: Vec<f64> = basis.modes().iter().map(|m| m.lambda).collect();
    let y_end = &control.final_state;
    let run = |path: u64| -> Option<ShadowingPath> {
        let mut w = vec![0.0; basis.len()];
        let mut sup_v: f64 = 0.0;
        let tr = solver
            .solve_direct_observed(path, |n, _, draw| {
                if let Some(d) = draw {
                    for j in 0..w.len() {
                        w[j] += sqrt_mu[j] * d.dw[j];
                    }
                }
                let v2: f64 = w
                    .iter()
                    .zip(&bv[n + 1])
                    .zip(&lambda)
                    .map(|((a, b), l)| (1.0 + l) * (a - b).powi(2))
                    .sum();
                sup_v = sup_v.max(v2.sqrt());
            })
            .ok()?;
        let terminal = w
            .iter()
            .zip(&bv[steps])
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        Some(ShadowingPath {
            d_end: (&tr.final_state - y_end).norm_h(),
            sup_v,
            terminal,
            d_noise: sup_v + terminal,
        })
    };
    let all: Vec<Option<ShadowingPath>> = (0..exp.n_paths as u64).into_par_iter().map(run).collect();
    let aborted = all.iter().filter(|p| p.is_none()).count();
    let paths: Vec<ShadowingPath> = all.into_iter().flatten().collect();
    if paths.len() < 2 {
        return Err(CbfedError::Experiment("too few paths finished".into()));
    }
    let d_noise: Vec<f64> = paths.iter().map(|p| p.d_noise).collect();
    let d_end: Vec<f64> = paths.iter().map(|p| p.d_end).collect();
    let cut = quantile(&d_noise, 0.1);
    let low: Vec<f64> = paths
        .iter()
        .filter(|p| p.d_noise <= cut)
        .map(|p| p.d_end)
        .collect();
    let median_end = quantile(&d_end, 0.5);
    let low_decile_median_end = quantile(&low, 0.5);
    let r = exp.params.r;
    let exponent = (r + 1.0) / (2.0 * r);
    let lx: Vec<f64> = d_noise.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = d_end.iter().map(|v| v.ln()).collect();
    Ok(ShadowingResult {
        aborted,
        controlled_endpoint: (y_end - &exp.target).norm_h(),
        rank_correlation: spearman(&d_noise, &d_end),
        median_end,
        low_decile_median_end,
        low_decile_closer: low_decile_median_end < median_end,
        exponent,
        pathwise_slope: linear_fit(&lx, &ly).0,
        envelope_slope: envelope_slope(&d_noise, &d_end),
        c_t_half: envelope_constant(&paths[..paths.len() / 2], exponent),
        c_t_full: envelope_constant(&paths, exponent),
        paths,
    })
}

/// Test functionals of the covariance identity, as basis coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    /// `ψ(t)`.
    pub psi: Vec<f64>,
    /// `x`.
    pub x: Vec<f64>,
}

/// `t(Qψ,ψ) + T(Qx,x) + 2t(Qψ,x)`.
pub fn covariance_form(basis: &NoiseBasis, probe: &Probe, t: f64, horizon: f64) -> f64 {
    basis
        .modes()
        .iter()
        .zip(probe.psi.iter().zip(&probe.x))
        .map(|(m, (p, x))| m.mu * (t * p * p + horizon * x * x + 2.0 * t * p * x))
        .sum()
}

/// Empirical second moment of the Gaussian functional at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NondegeneracyRow {
    /// Time `t ∈ (0, T]`.
    pub t: f64,
    /// Sample mean of `((√QW(t), ψ) + (√QW(T), x))²`.
    pub empirical: f64,
    /// Standard error of the sample mean.
    pub std_error: f64,
    /// Exact form.
    pub form: f64,
    /// `|empirical - form| <= 3 std_error`.
    pub within: bool,
}

/// Result of [`nondegeneracy_check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NondegeneracyReport {
    /// One row per time.
    pub rows: Vec<NondegeneracyRow>,
    /// Smallest covariance eigenvalue; positive means `ker Q = {0}`.
    pub min_eigenvalue: f64,
    /// Form at `ψ = x = 0`.
    pub zero_form: f64,
    /// Form at `t = T`, `ψ = x`, divided by `4T(Qx,x)`.
    pub diagonal_ratio: f64,
    /// Smallest form over the random probes.
    pub min_probe_form: f64,
    /// Every row within its Monte Carlo band, the kernel trivial and the
    /// form positive on every nonzero probe.
    pub passes: bool,
}

/// Basis coordinates of a random field supported on `|k| <= kmax`.
pub fn random_probe(basis: &NoiseBasis, seed: u64, kmax: f64) -> Vec<f64> {
    let f = FourierField::random_smooth(basis.grid(), seed, kmax, 1.0);
    basis.coefficients(&f)
}

/// Monte Carlo check of the covariance identity on `times`, with
/// `samples` draws per time and random band-limited probes.
pub fn nondegeneracy_check(
    basis: &NoiseBasis,
    horizon: f64,
    times: &[f64],
    samples: usize,
    probes: usize,
) -> Result<NondegeneracyReport> {
    if samples < 1000 {
        return Err(CbfedError::Config(format!("at least 1000 samples are needed, got {samples}")));
    }
    if times.iter().any(|t| !(*t > 0.0 && *t <= horizon)) {
        return Err(CbfedError::Config("times must lie in (0, T]".into()));
    }
    let seed = basis.spec().seed;
    let probe = Probe {
        psi: random_probe(basis, seed ^ 0x5a5a, 3.0),
        x: random_probe(basis, seed ^ 0xa5a5, 3.0),
    };
    let sqrt_mu: Vec<f64> = basis.modes().iter().map(|m| m.mu.sqrt()).collect();
    let rows = times
        .iter()
        .enumerate()
        .map(|(ti, &t)| {
            let vals: Vec<f64> = (0..samples as u64)
                .into_par_iter()
                .map(|s| {
                    let mut rng = keyed_stream(seed, DOMAIN_PROBE, s, ti as u64);
                    let mut acc = 0.0;
                    for j in 0..sqrt_mu.len() {
                        let z1: f64 = rng.sample(StandardNormal);
                        let z2: f64 = rng.sample(StandardNormal);
                        let wt = t.sqrt() * z1;
                        let wtt = wt + (horizon - t).sqrt() * z2;
                        acc += sqrt_mu[j] * (wt * probe.psi[j] + wtt * probe.x[j]);
                    }
                    acc * acc
                })
                .collect();
            let m = mean_ci(&vals);
            let se = m.std_dev / (m.n as f64).sqrt();
            let form = covariance_form(basis, &probe, t, horizon);
            NondegeneracyRow {
                t,
                empirical: m.mean,
                std_error: se,
                form,
                within: (m.mean - form).abs() <= 3.0 * se,
            }
        })
        .collect::<Vec<_>>();
    let min_eigenvalue = basis.modes().iter().map(|m| m.mu).fold(f64::INFINITY, f64::min);
    let zeros = vec![0.0; basis.len()];
    let zero_form = covariance_form(
        basis,
        &Probe {
            psi: zeros.clone(),
            x: zeros,
        },
        horizon,
        horizon,
    );
    let qxx: f64 = basis.modes().iter().zip(&probe.x).map(|(m, x)| m.mu * x * x).sum();
    let diag = covariance_form(
        basis,
        &Probe {
            psi: probe.x.clone(),
            x: probe.x.clone(),
        },
        horizon,
        horizon,
    );
    let min_probe_form = (0..probes as u64)
        .map(|i| {
            let pr = Probe {
                psi: random_probe(basis, seed.wrapping_add(2 * i + 1), 3.0),
                x: random_probe(basis, seed.wrapping_add(2 * i + 2), 3.0),
            };
            let t = horizon * (i as f64 + 0.5) / probes.max(1) as f64;
            covariance_form(basis, &pr, t, horizon)
        })
        .fold(f64::INFINITY, f64::min);
    let passes = rows.iter().all(|r| r.within)
        && min_eigenvalue > 0.0
        && zero_form == 0.0
        && (probes == 0 || min_probe_form > 0.0);
    Ok(NondegeneracyReport {
        rows,
        min_eigenvalue,
        zero_form,
        diagonal_ratio: diag / (4.0 * horizon * qxx),
        min_probe_form,
        passes,
    })
}

/// Resolvent estimate for one `(radius, λ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolventEstimate {
    /// Ball radius.
    pub radius: f64,
    /// Resolvent parameter `λ`.
    pub lambda: f64,
    /// Truncated quadrature of `λ∫e^{-λt}P(t)dt`.
    pub estimate: f64,
    /// 95% half-width over paths.
    pub half_width: f64,
    /// `e^{-λT_max}`, the mass beyond the horizon.
    pub tail: f64,
    /// `estimate - half_width - tail > 0`.
    pub witness: bool,
}

/// Result of [`accessibility_resolvent`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessibilityResult {
    /// Quadrature nodes, starting at 0.
    pub times: Vec<f64>,
    /// `p̂(t)` per radius (outer) and node (inner).
    pub p_hat: Vec<Vec<f64>>,
    /// Estimates, radius-major.
    pub estimates: Vec<ResolventEstimate>,
    /// Aborted paths, counted as misses at every node.
    pub aborted: usize,
}

/// Weights of `λ∫_0^{t_K} e^{-λt} p(t) dt` for `p` piecewise linear on
/// `nodes`.
pub fn resolvent_weights(nodes: &[f64], lambda: f64) -> Vec<f64> {
    let mut w = vec![0.0; nodes.len()];
    for i in 0..nodes.len().saturating_sub(1) {
        let (a, b) = (nodes[i], nodes[i + 1]);
        let (ea, eb) = ((-lambda * a).exp(), (-lambda * b).exp());
        let mass = ea - eb;
        // λ∫(t-a)e^{-λt}dt over [a, b]
        let first = -(b - a) * eb + mass / lambda;
        let right = first / (b - a);
        w[i] += mass - right;
        w[i + 1] += right;
    }
    w
}

/// Geometric step indices from one step to `steps`, deduplicated.
pub fn geometric_steps(steps: usize, points: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..points)
        .map(|i| {
            let s = (steps as f64).powf(i as f64 / (points.max(2) - 1) as f64);
            (s.round() as usize).clamp(1, steps)
        })
        .collect();
    out.dedup();
    out
}

/// Estimates `R_λ(x, B(x₀, r))` for every radius and `λ`, from paths of
/// length `T_max` sampled on a geometric time grid of `points` nodes.
pub fn accessibility_resolvent(
    exp: &HittingExperiment,
    lambdas: &[f64],
    points: usize,
) -> Result<AccessibilityResult> {
    exp.validate()?;
    let t_max = exp.time_grid.t_final();
    for &l in lambdas {
        if !(l > 0.0) {
            return Err(CbfedError::Domain(format!("λ must be positive, got {l}")));
        }
        if (-l * t_max).exp() > 1e-3 {
            return Err(CbfedError::Precondition(format!(
                "e^(-λ T_max) = {:.3e} exceeds 1e-3 for λ = {l}",
                (-l * t_max).exp()
            )));
        }
    }
    let solver = exp.solver()?;
    let steps = exp.time_grid.steps();
    let sample = geometric_steps(steps, points);
    let mut times = vec![0.0];
    times.extend(sample.iter().map(|&n| exp.time_grid.time(n)));
    let d0 = (&exp.start - &exp.target).norm_h();
    // distances[path][node]
    let distances: Vec<Option<Vec<f64>>> = (0..exp.n_paths as u64)
        .into_par_iter()
        .map(|path| {
            let mut d = vec![d0];
            let mut next = 0;
            let tr = solver
                .solve_direct_observed(path, |n, y, _| {
                    if next < sample.len() && sample[next] == n {
                        d.push((y - &exp.target).norm_h());
                        next += 1;
                    }
                })
                .ok()?;
            if next < sample.len() {
                d.push((&tr.final_state - &exp.target).norm_h());
            }
            Some(d)
        })
        .collect();
    let aborted = distances.iter().filter(|d| d.is_none()).count();
    if aborted == distances.len() {
        return Err(CbfedError::Experiment("every path aborted".into()));
    }
    let n = distances.len() as f64;
    let mut p_hat = Vec::new();
    let mut estimates = Vec::new();
    for &radius in &exp.radii {
        let hits: Vec<Vec<f64>> = distances
            .iter()
            .map(|d| match d {
                Some(d) => d.iter().map(|v| if *v < radius { 1.0 } else { 0.0 }).collect(),
                None => vec![0.0; times.len()],
            })
            .collect();
        p_hat.push(
            (0..times.len())
                .map(|i| hits.iter().map(|h| h[i]).sum::<f64>() / n)
                .collect(),
        );
        for &lambda in lambdas {
            let w = resolvent_weights(&times, lambda);
            let per_path: Vec<f64> = hits
                .iter()
                .map(|h| h.iter().zip(&w).map(|(a, b)| a * b).sum())
                .collect();
            let m = mean_ci(&per_path);
            let tail = (-lambda * t_max).exp();
            estimates.push(ResolventEstimate {
                radius,
                lambda,
                estimate: m.mean,
                half_width: m.half_width,
                tail,
                witness: m.mean - m.half_width - tail > 0.0,
            });
        }
    }
    Ok(AccessibilityResult {
        times,
        p_hat,
        estimates,
        aborted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolvent_weights_integrate_constants() {
        let nodes = [0.0, 0.1, 0.4, 1.0, 2.0];
        let l = 3.0;
        let w = resolvent_weights(&nodes, l);
        let total: f64 = w.iter().sum();
        assert!((total - (1.0 - (-l * 2.0f64).exp())).abs() < 1e-14);
        // p(t) = t: λ∫_0^2 t e^{-λt} dt = (1 - e^{-2λ}(1 + 2λ))/λ
        let lin: f64 = w.iter().zip(&nodes).map(|(a, b)| a * b).sum();
        let exact = (1.0 - (-2.0 * l).exp() * (1.0 + 2.0 * l)) / l;
        assert!((lin - exact).abs() < 1e-14);
    }

    #[test]
    fn geometric_steps_cover_the_horizon() {
        let s = geometric_steps(200, 12);
        assert_eq!(s[0], 1);
        assert_eq!(*s.last().unwrap(), 200);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
    }
}
