//! Hitting probabilities, the covariance form and resolvent quadrature.

use std::sync::Arc;

use cbfed::irreducibility::{
    accessibility_resolvent, covariance_form, geometric_steps, hitting_probability, random_probe,
    resolvent_weights, HittingExperiment, Probe, MIN_PATHS,
};
use cbfed::noise::{NoiseBasis, NoiseSpec};
use cbfed::solver::{FieldSource, TimeGrid};
use cbfed::stats::wilson;
use cbfed::{CbfedError, FourierField, Grid, GridSpec, ModelParams};
use proptest::prelude::*;

fn grid() -> Arc<Grid> {
    Grid::new(GridSpec::new(2, 16, 1.0).unwrap()).unwrap()
}

fn experiment(n_paths: usize, radii: Vec<f64>) -> HittingExperiment {
    let g = grid();
    HittingExperiment {
        start: FourierField::zeros(&g),
        target: FourierField::zeros(&g),
        time_grid: TimeGrid::new(0.2, 1e-2).unwrap(),
        radii,
        n_paths,
        noise: NoiseSpec::new(2.5, 1).unwrap(),
        params: ModelParams::default(),
        forcing: FieldSource::Zero,
    }
}

#[test]
fn too_few_paths_or_bad_radii_are_rejected() {
    assert!(matches!(experiment(MIN_PATHS - 1, vec![1.0]).validate(), Err(CbfedError::Config(_))));
    assert!(experiment(MIN_PATHS, vec![]).validate().is_err());
    assert!(experiment(MIN_PATHS, vec![0.0]).validate().is_err());
    assert!(experiment(MIN_PATHS, vec![1.0]).validate().is_ok());
}

#[test]
fn larger_balls_are_hit_more_often() {
    let r = hitting_probability(&experiment(MIN_PATHS, vec![0.5, 1.0, 1e3])).unwrap();
    assert!(r.monotone_in_radius());
    let last = r.estimates.last().unwrap();
    assert_eq!(last.hits, MIN_PATHS);
    assert!(r.witness());
}

#[test]
fn short_horizons_fail_the_resolvent_precondition() {
    let e = experiment(MIN_PATHS, vec![1.0]);
    assert!(matches!(accessibility_resolvent(&e, &[2.0], 8), Err(CbfedError::Precondition(_))));
    assert!(matches!(accessibility_resolvent(&e, &[-1.0], 8), Err(CbfedError::Domain(_))));
}

#[test]
fn covariance_form_splits_into_increments() {
    // W(T) = W(t) + (W(T) - W(t)) with independent pieces gives
    // t(Q(ψ+x), ψ+x) + (T - t)(Qx, x).
    let g = grid();
    let basis = NoiseBasis::new(&g, NoiseSpec::new(2.5, 3).unwrap()).unwrap();
    let probe = Probe {
        psi: random_probe(&basis, 1, 3.0),
        x: random_probe(&basis, 2, 3.0),
    };
    let q = |v: &dyn Fn(usize) -> f64| -> f64 {
        basis.modes().iter().enumerate().map(|(j, m)| m.mu * v(j) * v(j)).sum()
    };
    let (t, horizon) = (0.3, 1.0);
    let oracle = t * q(&|j| probe.psi[j] + probe.x[j]) + (horizon - t) * q(&|j| probe.x[j]);
    let form = covariance_form(&basis, &probe, t, horizon);
    assert!((form - oracle).abs() <= 1e-12 * oracle.abs(), "{form} vs {oracle}");
}

#[test]
fn resolvent_weights_integrate_linear_functions_exactly() {
    let nodes = [0.0, 0.1, 0.25, 0.7, 2.0];
    let lambda = 5.0;
    let w = resolvent_weights(&nodes, lambda);
    let b = nodes[nodes.len() - 1];
    let e = (-lambda * b).exp();
    // λ∫₀ᵇ e^{-λt} dt and λ∫₀ᵇ t e^{-λt} dt
    let zeroth = 1.0 - e;
    let first = (1.0 - e) / lambda - b * e;
    let s0: f64 = w.iter().sum();
    let s1: f64 = w.iter().zip(&nodes).map(|(w, t)| w * t).sum();
    assert!((s0 - zeroth).abs() < 1e-14);
    assert!((s1 - first).abs() < 1e-14);
}

#[test]
fn geometric_steps_are_increasing_and_end_at_the_horizon() {
    let s = geometric_steps(100, 16);
    assert_eq!(s[0], 1);
    assert_eq!(*s.last().unwrap(), 100);
    assert!(s.windows(2).all(|w| w[0] < w[1]));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn wilson_interval_contains_the_estimate(n in 1usize..2000, frac in 0.0f64..=1.0) {
        let k = ((n as f64) * frac).round() as usize;
        let (lo, hi) = wilson(k, n, 1.959_963_984_540_054);
        let p = k as f64 / n as f64;
        prop_assert!(0.0 <= lo && lo <= p && p <= hi && hi <= 1.0);
        prop_assert_eq!(lo == 0.0, k == 0);
    }
}
