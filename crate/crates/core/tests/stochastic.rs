//! Stochastic integrators, the Itô energy identity and the moment bounds.

use cbfed::noise::NoiseSpec;
use cbfed::solver::{solve, FieldSource, TimeGrid};
use cbfed::stochastic::{
    bound_from_paths, expectation_bound_check, ito_energy_residual, BoundLevel, StochasticRunConfig,
    StochasticSolver,
};
use cbfed::{FourierField, Grid, GridSpec, ModelParams};

fn config(eps_q: f64, amplitude: f64, seed: u64) -> StochasticRunConfig {
    let g = Grid::new(GridSpec::new(2, 16, 1.0).unwrap()).unwrap();
    StochasticRunConfig {
        x0: FourierField::random_smooth(&g, 5, 3.0, 1.0),
        forcing: FieldSource::Zero,
        time_grid: TimeGrid::new(0.1, 1e-3).unwrap(),
        params: ModelParams::default(),
        noise: NoiseSpec::new(eps_q, seed).unwrap().with_amplitude(amplitude),
        noise_dt: None,
    }
}

#[test]
fn silent_noise_reproduces_the_deterministic_solver() {
    let cfg = config(2.5, 0.0, 1);
    let det = solve(&cfg.x0, &FieldSource::Zero, &FieldSource::Zero, &cfg.time_grid, &cfg.params).unwrap();
    let s = StochasticSolver::new(cfg).unwrap();
    let (direct, _) = s.solve_direct(0).unwrap();
    assert_eq!(direct.final_state.max_coeff_diff(&det.final_state), 0.0);
}

#[test]
fn paths_are_reproducible_and_distinct() {
    let s = StochasticSolver::new(config(2.5, 1.0, 7)).unwrap();
    let a = s.solve_direct(3).unwrap().0.final_state;
    let b = s.solve_direct(3).unwrap().0.final_state;
    let c = s.solve_direct(4).unwrap().0.final_state;
    assert_eq!(a.max_coeff_diff(&b), 0.0);
    assert!(a.max_coeff_diff(&c) > 0.0);
}

#[test]
fn ito_residual_starts_at_zero_and_stays_small() {
    let s = StochasticSolver::new(config(2.5, 1.0, 2)).unwrap();
    let (tr, _) = s.solve_direct(0).unwrap();
    let res = ito_energy_residual(&tr, &s.config().params, s.trace_q());
    assert_eq!(res[0], 0.0);
    assert!(res.iter().all(|r| r.abs() < 0.1), "max {}", res.iter().fold(0.0f64, |m, r| m.max(r.abs())));
}

#[test]
fn integrators_agree_on_one_realization() {
    let s = StochasticSolver::new(config(2.5, 1.0, 3)).unwrap();
    let run = s.solve_both(0).unwrap();
    let scale = run.direct.final_state.norm_h();
    assert!(run.endpoint_gap < 0.05 * scale, "{} vs {}", run.endpoint_gap, scale);
}

#[test]
fn infinite_trace_is_rejected() {
    assert!(StochasticSolver::new(config(0.9, 1.0, 0)).is_err());
}

#[test]
fn gradient_bound_needs_a_trace_class_gradient_covariance() {
    let s = StochasticSolver::new(config(1.5, 1.0, 0)).unwrap();
    assert!(expectation_bound_check(&s, BoundLevel::V, 4, 0.5).is_err());
    assert!(expectation_bound_check(&s, BoundLevel::H, 4, 0.5).is_ok());
}

#[test]
fn energy_bound_holds_on_a_small_ensemble() {
    let s = StochasticSolver::new(config(2.5, 1.0, 4)).unwrap();
    let paths = s.run_paths(32);
    for level in [BoundLevel::H, BoundLevel::V] {
        let c = bound_from_paths(&s, &paths, level, 0.5).unwrap();
        assert_eq!(c.paths, 32);
        assert!(c.passes, "{level:?}: {} vs {}", c.lhs.mean, c.rhs);
    }
}
