//! Reusable verification suites: operator identities, grid-refinement and
//! time-refinement studies, and noise statistics against brute-force
//! oracles.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::field::FourierField;
use crate::grid::{Grid, GridSpec};
use crate::noise::{ou_mode_samples, ou_stationary_variance, NoiseBasis, NoiseSampler, NoiseSpec};
use crate::operators::{
    c1_monotonicity, commutation_identity_residual, damping_c1, monotonicity_gap, trilinear_b,
    DerivedConstants, ModelParams,
};
use crate::rng::{keyed_stream, DOMAIN_AUX};
use crate::solver::{solve, FieldSource, TimeGrid};
use crate::stats::{linear_fit, observed_order, pearson};

/// Tolerance of the per-mode divergence check.
pub const PROJECTION_TOL: f64 = 1e-12;
/// Relative tolerance of the trilinear identities.
pub const TRILINEAR_TOL: f64 = 1e-10;
/// Relative tolerance of `⟨C₁(y), y⟩ = ‖y‖^{r+1}_{L^{r+1}}`.
pub const C1_IDENTITY_TOL: f64 = 1e-8;
/// Relative slack allowed in the monotonicity inequalities.
pub const MONOTONE_SLACK: f64 = 1e-10;

/// Worst cases of the operator property suite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorSuite {
    /// Random pairs tested.
    pub pairs: usize,
    /// Largest per-mode `|k·ŷ_k|/(|k|‖ŷ_k‖)` after projection.
    pub projection_defect: f64,
    /// Largest `‖P(Py) - Py‖` over coefficient magnitudes.
    pub idempotence_defect: f64,
    /// Largest `|b(y,z,z)| / (‖y‖_∞‖∇z‖‖z‖)`.
    pub skew_rel: f64,
    /// Largest `|b(y,z,w) + b(y,w,z)|` relative to the same scale.
    pub antisymmetry_rel: f64,
    /// Largest relative defect of `⟨C₁(y), y⟩ = ‖y‖^{r+1}_{L^{r+1}}`.
    pub c1_identity_rel: f64,
    /// Pairs with `⟨C₁(y)-C₁(z), y-z⟩ < 2^{1-r}‖y-z‖^{r+1}` beyond the slack.
    pub c1_monotone_violations: usize,
    /// Smallest relative margin of the `C₁` lower bound.
    pub c1_monotone_margin: f64,
    /// Pairs with a negative shifted monotonicity gap beyond the slack.
    pub monotone_violations: usize,
    /// Smallest relative monotonicity gap.
    pub monotone_margin: f64,
    /// Shift `κ` used.
    pub kappa: f64,
}

impl OperatorSuite {
    /// Every check within its tolerance.
    pub fn passes(&self) -> bool {
        self.projection_defect <= PROJECTION_TOL
            && self.skew_rel <= TRILINEAR_TOL
            && self.antisymmetry_rel <= TRILINEAR_TOL
            && self.c1_identity_rel <= C1_IDENTITY_TOL
            && self.c1_monotone_violations == 0
            && self.monotone_violations == 0
    }
}

/// Random field of pair `i`: smooth, with amplitude spread over two decades.
fn suite_field(grid: &Arc<Grid>, seed: u64, i: u64) -> FourierField {
    let amp = 10f64.powf(((i * 7919) % 101) as f64 / 50.0 - 1.0);
    let kmax = 2.0 + ((i * 31) % 6) as f64;
    FourierField::random_smooth(grid, seed.wrapping_add(i), kmax, amp)
}

/// Runs the operator property suite on `pairs` random pairs.
pub fn operator_suite(grid: &Arc<Grid>, p: &ModelParams, pairs: usize, seed: u64) -> Result<OperatorSuite> {
    let kappa = DerivedConstants::new(p, 1.0)?.kappa;
    let r = p.r;
    let rows: Vec<Result<[f64; 7]>> = (0..pairs as u64)
        .into_par_iter()
        .map(|i| {
            let y = suite_field(grid, seed, 3 * i);
            let z = suite_field(grid, seed, 3 * i + 1);
            let w = suite_field(grid, seed, 3 * i + 2);
            let raw = FourierField::random(grid, seed ^ i, |k| (1.0 + k * k).powf(-1.0));
            // `random` projects; undo by adding a gradient field.
            let grad = FourierField::from_fn(grid, |k| {
                let phase = ((k[0] * 3 + k[1] * 5 + k[2] * 7) as f64).sin();
                let s = (-((k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64) / 8.0).exp() * phase;
                [
                    num_complex::Complex64::new(s * k[0] as f64, 0.0),
                    num_complex::Complex64::new(s * k[1] as f64, 0.0),
                    num_complex::Complex64::new(s * k[2] as f64, 0.0),
                ]
            });
            let py = (&raw + &grad).leray_project();
            let proj = py.divergence_defect();
            let idem = py.leray_project().max_coeff_diff(&py);

            let yinf = y.to_physical().max_magnitude();
            let scale = yinf * z.norm_grad() * z.norm_h().max(w.norm_h());
            let skew = trilinear_b(&y, &z, &z).abs() / scale;
            let anti = (trilinear_b(&y, &z, &w) + trilinear_b(&y, &w, &z)).abs() / scale;

            let lr = y.to_physical().integral_abs_pow(r + 1.0);
            let c1 = ((damping_c1(&y, r).inner_h(&y) - lr) / lr).abs();

            let (lhs, lower) = c1_monotonicity(&y, &z, r);
            let c1_margin = (lhs - lower) / lhs.abs().max(lower.abs());

            let gap = monotonicity_gap(&y, &z, kappa, p)?;
            let d = &y - &z;
            let mono_scale = kappa * d.norm_h().powi(2) + gap.abs();
            let mono_margin = gap / mono_scale;
            Ok([proj, idem, skew, anti, c1, c1_margin, mono_margin])
        })
        .collect();
    let mut out = OperatorSuite {
        pairs,
        projection_defect: 0.0,
        idempotence_defect: 0.0,
        skew_rel: 0.0,
        antisymmetry_rel: 0.0,
        c1_identity_rel: 0.0,
        c1_monotone_violations: 0,
        c1_monotone_margin: f64::INFINITY,
        monotone_violations: 0,
        monotone_margin: f64::INFINITY,
        kappa,
    };
    for row in rows {
        let [proj, idem, skew, anti, c1, c1m, mm] = row?;
        out.projection_defect = out.projection_defect.max(proj);
        out.idempotence_defect = out.idempotence_defect.max(idem);
        out.skew_rel = out.skew_rel.max(skew);
        out.antisymmetry_rel = out.antisymmetry_rel.max(anti);
        out.c1_identity_rel = out.c1_identity_rel.max(c1);
        out.c1_monotone_margin = out.c1_monotone_margin.min(c1m);
        out.monotone_margin = out.monotone_margin.min(mm);
        if c1m < -MONOTONE_SLACK {
            out.c1_monotone_violations += 1;
        }
        if mm < -MONOTONE_SLACK {
            out.monotone_violations += 1;
        }
    }
    Ok(out)
}

/// Grid-refinement study of the commutation identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementStudy {
    /// Grid sizes.
    pub sizes: Vec<usize>,
    /// Relative residual per grid.
    pub residuals: Vec<f64>,
    /// Fitted order in `1/N`.
    pub order: f64,
}

/// Residual of the commutation identity for one random field of finite
/// smoothness (spectrum `(1+|k|²)^{-3/2}`), restricted to each grid.
pub fn commutation_study(r: f64, sizes: &[usize], seed: u64) -> Result<RefinementStudy> {
    let mut residuals = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let g = Grid::new(GridSpec::new(2, n, 1.0)?)?;
        let y = FourierField::random(&g, seed, |k| (1.0 + k * k).powf(-1.5));
        residuals.push(commutation_identity_residual(&y, r));
    }
    let h: Vec<f64> = sizes.iter().map(|&n| 1.0 / n as f64).collect();
    Ok(RefinementStudy {
        sizes: sizes.to_vec(),
        order: observed_order(&h, &residuals),
        residuals,
    })
}

/// Endpoint errors of the single-mode linear run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearExactness {
    /// `‖y(T) - e^{-(4π²μ+α)T}y₀‖_H`.
    pub abs_error: f64,
    /// Same, divided by the exact norm.
    pub rel_error: f64,
}

/// Shear mode `m = 1` on the unit torus with `β = γ = 0`, compared with
/// `e^{-(4π²μ + α)t}y₀`.
pub fn linear_exactness(n: usize, mu: f64, alpha: f64, horizon: f64, dt: f64) -> Result<LinearExactness> {
    let g = Grid::new(GridSpec::new(2, n, 1.0)?)?;
    let y0 = FourierField::shear(&g, 1.0, 1)?;
    let p = ModelParams::new(mu, alpha, 0.0, 0.0, 4.0, 2.0)?;
    let tr = solve(&y0, &FieldSource::Zero, &FieldSource::Zero, &TimeGrid::new(horizon, dt)?, &p)?;
    let exact = y0.scale((-(mu * 4.0 * PI * PI + alpha) * horizon).exp());
    let abs_error = (&tr.final_state - &exact).norm_h();
    Ok(LinearExactness {
        abs_error,
        rel_error: abs_error / exact.norm_h(),
    })
}

/// Time-refinement study with a known order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderStudy {
    /// Steps, coarse to fine.
    pub dts: Vec<f64>,
    /// Relative endpoint errors.
    pub errors: Vec<f64>,
    /// Fitted order.
    pub order: f64,
}

/// Same shear mode with `β = 0`, `q = 1`, so `γC₂(y) = γy` is linear but
/// handled by the explicit part of the scheme; exact solution
/// `e^{-(4π²μ + α + γ)t}y₀`. Runs `dt·2^halvings` down to `dt`.
pub fn explicit_linear_order(
    n: usize,
    mu: f64,
    alpha: f64,
    gamma: f64,
    horizon: f64,
    dt: f64,
    halvings: u32,
) -> Result<OrderStudy> {
    let g = Grid::new(GridSpec::new(2, n, 1.0)?)?;
    let y0 = FourierField::shear(&g, 1.0, 1)?;
    let p = ModelParams::new(mu, alpha, 0.0, gamma, 4.0, 1.0)?;
    let exact = y0.scale((-(mu * 4.0 * PI * PI + alpha + gamma) * horizon).exp());
    let mut dts = Vec::new();
    let mut errors = Vec::new();
    let mut tg = TimeGrid::new(horizon, dt * 2f64.powi(halvings as i32))?;
    for _ in 0..=halvings {
        let tr = solve(&y0, &FieldSource::Zero, &FieldSource::Zero, &tg, &p)?;
        dts.push(tg.dt());
        errors.push((&tr.final_state - &exact).norm_h() / exact.norm_h());
        tg = tg.halved();
    }
    Ok(OrderStudy {
        order: observed_order(&dts, &errors),
        dts,
        errors,
    })
}

/// Lattice sum `Σ_k m(k) λ_k^a σ²(1+λ_k)^{-ε}` over `|k_j| < N/2`, with
/// `m(0) = d` and `m(k) = d - 1` otherwise, written without the basis.
pub fn brute_force_trace(spec: &GridSpec, noise: &NoiseSpec, a: f64) -> f64 {
    let half = (spec.n / 2) as i32;
    let c = 2.0 * PI / spec.length;
    let d = spec.dim;
    let range = -(half - 1)..half;
    let mut sum = 0.0;
    let third: Vec<i32> = if d == 3 { range.clone().collect() } else { vec![0] };
    for k0 in range.clone() {
        for k1 in range.clone() {
            for &k2 in &third {
                let k2n = (k0 * k0 + k1 * k1 + k2 * k2) as f64;
                let lam = c * c * k2n;
                let mult = if k2n == 0.0 { d } else { d - 1 } as f64;
                let la = if a == 0.0 { 1.0 } else { lam.powf(a) };
                sum += mult * la * noise.amplitude.powi(2) * (1.0 + lam).powf(-noise.eps_q);
            }
        }
    }
    sum
}

/// Empirical variance of one OU mode against its stationary value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuVarianceRow {
    /// Position in the basis.
    pub mode: usize,
    /// Decay rate `μλ + α`.
    pub theta: f64,
    /// `μ/(2θ)`.
    pub expected: f64,
    /// Sample variance.
    pub empirical: f64,
    /// `|empirical - expected| / (expected √(2/(n-1)))`.
    pub z_score: f64,
}

/// Noise statistics against closed forms and brute-force sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseStatistics {
    /// Basis `Tr Q`.
    pub trace_q: f64,
    /// Lattice-sum `Tr Q`.
    pub trace_q_oracle: f64,
    /// Basis `Tr(AQ)`.
    pub trace_aq: f64,
    /// Lattice-sum `Tr(AQ)`.
    pub trace_aq_oracle: f64,
    /// Largest relative trace mismatch.
    pub trace_rel_error: f64,
    /// Per-mode OU variances.
    pub ou_rows: Vec<OuVarianceRow>,
    /// Largest OU z-score.
    pub ou_max_z: f64,
    /// Mean of `‖√QΔW‖²_H / dt`.
    pub isometry_mean: f64,
    /// Standard error of that mean.
    pub isometry_se: f64,
    /// `|mean - Tr Q| / se`.
    pub isometry_z: f64,
    /// Slope of `log Var(ΔW_0)` against `log dt` over aggregated steps.
    pub variance_slope: f64,
    /// Largest absolute cross-correlation of OU increments over 50
    /// consecutive mode pairs.
    pub max_cross_correlation: f64,
    /// `4/√samples`.
    pub cross_correlation_limit: f64,
}

impl NoiseStatistics {
    /// Traces to `1e-12`, OU and isometry within 3σ, uncorrelated modes.
    pub fn passes(&self) -> bool {
        self.trace_rel_error <= 1e-12
            && self.ou_max_z <= 3.0
            && self.isometry_z <= 3.0
            && self.max_cross_correlation <= self.cross_correlation_limit
    }
}

fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Checks traces, `modes` OU stationary variances from `samples` samples
/// each, and the isometry `E‖√QΔW‖² = Tr Q dt` from `samples` increments.
pub fn noise_statistics(
    basis: &Arc<NoiseBasis>,
    p: &ModelParams,
    modes: usize,
    samples: usize,
    dt: f64,
) -> Result<NoiseStatistics> {
    let spec = *basis.grid().spec();
    let noise = *basis.spec();
    let tq = basis.trace_q().partial;
    let taq = basis.trace_aq().partial;
    let tq_o = brute_force_trace(&spec, &noise, 0.0);
    let taq_o = brute_force_trace(&spec, &noise, 1.0);
    let trace_rel_error = ((tq - tq_o) / tq_o).abs().max(((taq - taq_o) / taq_o).abs());

    let chosen: Vec<usize> = (0..modes)
        .map(|i| i * basis.len() / modes.max(1))
        .collect();
    let rows: Vec<OuVarianceRow> = chosen
        .par_iter()
        .map(|&j| {
            let m = &basis.modes()[j];
            let theta = p.linear_rate(m.lambda);
            // Ten relaxation times of exact steps.
            let steps = 20;
            let h = 10.0 / (theta * steps as f64);
            let xs = ou_mode_samples(noise.seed, j as u64, theta, m.mu, h, steps, samples);
            let expected = ou_stationary_variance(theta, m.mu);
            let empirical = sample_variance(&xs);
            let se = expected * (2.0 / (samples as f64 - 1.0)).sqrt();
            OuVarianceRow {
                mode: j,
                theta,
                expected,
                empirical,
                z_score: (empirical - expected).abs() / se,
            }
        })
        .collect();
    let ou_max_z = rows.iter().map(|r| r.z_score).fold(0.0, f64::max);

    let norms: Vec<f64> = (0..samples as u64)
        .into_par_iter()
        .map(|s| {
            let mut rng = keyed_stream(noise.seed, DOMAIN_AUX, u64::MAX, s);
            basis.wiener_increment(dt, &mut rng).norm_h().powi(2) / dt
        })
        .collect();
    let mean = norms.iter().sum::<f64>() / samples as f64;
    let se = (sample_variance(&norms) / samples as f64).sqrt();

    // Aggregated Brownian increments of the production sampler: variance of
    // the first coordinate against the coarse step.
    let sampler = NoiseSampler::new(basis.clone(), p, dt)?;
    let ratios = [1usize, 2, 4, 8];
    let vars: Vec<f64> = ratios
        .iter()
        .map(|&k| {
            let xs: Vec<f64> = (0..samples as u64)
                .into_par_iter()
                .map(|s| sampler.draw(s, 0, k).dw[0])
                .collect();
            sample_variance(&xs)
        })
        .collect();
    let lx: Vec<f64> = ratios.iter().map(|&k| (k as f64 * dt).ln()).collect();
    let ly: Vec<f64> = vars.iter().map(|v| v.ln()).collect();
    let variance_slope = linear_fit(&lx, &ly).0;

    // Cross-correlations of the OU increments of consecutive modes, drawn
    // jointly by the production sampler.
    let pairs = 50.min(basis.len().saturating_sub(1));
    let joint: Vec<Vec<f64>> = (0..samples as u64)
        .into_par_iter()
        .map(|s| {
            let mut ou = sampler.draw(s, 1, 1).ou;
            ou.truncate(pairs + 1);
            ou
        })
        .collect();
    let max_cross_correlation = (0..pairs)
        .map(|j| {
            let a: Vec<f64> = joint.iter().map(|v| v[j]).collect();
            let b: Vec<f64> = joint.iter().map(|v| v[j + 1]).collect();
            pearson(&a, &b).abs()
        })
        .fold(0.0, f64::max);

    Ok(NoiseStatistics {
        trace_q: tq,
        trace_q_oracle: tq_o,
        trace_aq: taq,
        trace_aq_oracle: taq_o,
        trace_rel_error,
        ou_rows: rows,
        ou_max_z,
        isometry_mean: mean,
        isometry_se: se,
        isometry_z: (mean - tq).abs() / se,
        variance_slope,
        max_cross_correlation,
        cross_correlation_limit: 4.0 / (samples as f64).sqrt(),
    })
}
