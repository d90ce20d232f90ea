//! Time integrator against closed-form solutions of linear problems.

use std::f64::consts::PI;
use std::sync::Arc;

use cbfed::solver::{energy_balance_residual, solve, FieldSource, TimeGrid};
use cbfed::{CbfedError, FourierField, Grid, GridSpec, ModelParams};

fn grid(n: usize) -> Arc<Grid> {
    Grid::new(GridSpec::new(2, n, 1.0).unwrap()).unwrap()
}

fn linear(mu: f64, alpha: f64) -> ModelParams {
    ModelParams::new(mu, alpha, 0.0, 0.0, 4.0, 2.0).unwrap()
}

#[test]
fn free_decay_is_exact() {
    let g = grid(32);
    let y0 = FourierField::shear(&g, 1.0, 2).unwrap();
    let (mu, alpha) = (0.05, 0.3);
    let tg = TimeGrid::new(1.0, 1e-2).unwrap();
    let tr = solve(&y0, &FieldSource::Zero, &FieldSource::Zero, &tg, &linear(mu, alpha)).unwrap();
    let rate = mu * 16.0 * PI * PI + alpha;
    let exact = y0.scale((-rate).exp());
    assert!((&tr.final_state - &exact).norm_h() <= 1e-13 * exact.norm_h());
}

#[test]
fn constant_forcing_relaxes_exactly() {
    // y' + (μλ + α)y = f, y(0) = 0  ⇒  y(t) = (1 - e^{-ct}) f / c.
    let g = grid(16);
    let f = FourierField::shear(&g, 3.0, 1).unwrap();
    let (mu, alpha) = (0.1, 0.5);
    let c = mu * 4.0 * PI * PI + alpha;
    let tg = TimeGrid::new(0.7, 7e-2).unwrap();
    let y0 = FourierField::zeros(&g);
    let tr = solve(&y0, &FieldSource::Zero, &FieldSource::constant(&f), &tg, &linear(mu, alpha)).unwrap();
    let exact = f.scale(-(-c * 0.7f64).exp_m1() / c);
    assert!((&tr.final_state - &exact).norm_h() <= 1e-13 * exact.norm_h());
}

#[test]
fn explicit_terms_converge_at_first_order() {
    // β = 0, q = 1: γC₂(y) = γy is treated explicitly.
    let g = grid(16);
    let y0 = FourierField::shear(&g, 1.0, 1).unwrap();
    let p = ModelParams::new(0.05, 0.1, 0.0, 0.5, 4.0, 1.0).unwrap();
    let exact = y0.scale((-(0.05 * 4.0 * PI * PI + 0.1 + 0.5f64)).exp());
    let mut errs = Vec::new();
    let mut tg = TimeGrid::new(1.0, 1e-2).unwrap();
    for _ in 0..3 {
        let tr = solve(&y0, &FieldSource::Zero, &FieldSource::Zero, &tg, &p).unwrap();
        errs.push((&tr.final_state - &exact).norm_h());
        tg = tg.halved();
    }
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!((1.8..2.2).contains(&ratio), "halving ratio {ratio}");
    }
}

#[test]
fn nonlinear_run_keeps_the_energy_balance() {
    let g = grid(32);
    let y0 = FourierField::random_smooth(&g, 4, 4.0, 1.0);
    let tg = TimeGrid::new(0.2, 1e-3).unwrap();
    let p = ModelParams::default();
    let tr = solve(&y0, &FieldSource::Zero, &FieldSource::Zero, &tg, &p).unwrap();
    let worst = energy_balance_residual(&tr, &p)
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    assert!(worst < 5e-2, "energy balance residual {worst}");
    assert!(tr.final_state.divergence_defect() < 1e-9);
    assert!(tr.energy.windows(2).all(|w| w[1] <= w[0]), "unforced energy must decay");
}

#[test]
fn snapshots_follow_the_stride() {
    let g = grid(16);
    let y0 = FourierField::random_smooth(&g, 1, 3.0, 1.0);
    let tg = TimeGrid::new(0.1, 1e-3).unwrap().with_stride(25).unwrap();
    let tr = solve(&y0, &FieldSource::Zero, &FieldSource::Zero, &tg, &ModelParams::default()).unwrap();
    assert_eq!(tr.snapshot_times.len(), 5);
    assert!((tr.snapshot_times[1] - 0.025).abs() < 1e-15);
    assert_eq!(tr.times.len(), 101);
}

#[test]
fn mismatched_grids_are_rejected() {
    let a = FourierField::zeros(&grid(16));
    let b = FourierField::zeros(&grid(32));
    let tg = TimeGrid::new(0.01, 1e-3).unwrap();
    let err = solve(&a, &FieldSource::Zero, &FieldSource::constant(&b), &tg, &ModelParams::default());
    assert!(matches!(err, Err(CbfedError::Config(_))), "{err:?}");
}
