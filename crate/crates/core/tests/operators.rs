//! Properties of the projection, the convective form and the damping terms
//! on random smooth fields.

use std::sync::Arc;

use cbfed::operators::{
    bilinear_b, c1_lipschitz, c1_monotonicity, damping_c1, monotonicity_gap, trilinear_b,
};
use cbfed::{DerivedConstants, FourierField, Grid, GridSpec, ModelParams};
use proptest::prelude::*;

fn grid(n: usize) -> Arc<Grid> {
    Grid::new(GridSpec::new(2, n, 1.0).unwrap()).unwrap()
}

fn field(g: &Arc<Grid>, seed: u64, kmax: f64, amp: f64) -> FourierField {
    FourierField::random_smooth(g, seed, kmax, amp)
}

/// `∫|y|^p` summed node by node from the physical values.
fn lp_power(y: &FourierField, p: f64) -> f64 {
    let ph = y.to_physical();
    let g = y.grid();
    (0..g.nodes())
        .map(|j| {
            let m2: f64 = ph.values().iter().map(|c| c[j] * c[j]).sum();
            m2.sqrt().powf(p)
        })
        .sum::<f64>()
        * g.node_weight()
}

#[test]
fn default_shift_matches_hand_computation() {
    // r = 4, q = 2, μ = β = 1, |γ| = 1/2, ε = 1:
    // η₁ = (2/3)·(4/3)^{1/2}, η₂ = (2/3)·(8/3)^{1/2}, η₃ = (1/6)·(4/3)².
    let c = DerivedConstants::new(&ModelParams::default(), 1.0).unwrap();
    let eta1 = 2.0 / 3.0 * (4.0f64 / 3.0).sqrt();
    let eta2 = 2.0 / 3.0 * (8.0f64 / 3.0).sqrt();
    let eta3 = 16.0 / 54.0;
    assert!((c.eta1 - eta1).abs() < 1e-14);
    assert!((c.eta2 - eta2).abs() < 1e-14);
    assert!((c.eta3 - eta3).abs() < 1e-14);
    assert!((c.kappa - (eta1 + eta2 + eta3)).abs() < 1e-14);
}

#[test]
fn critical_exponent_requires_strong_damping() {
    let p = ModelParams::new(0.4, 1.0, 1.0, 0.0, 3.0, 2.0);
    assert!(p.is_err(), "2βμ = 0.8 must be rejected at r = 3");
}

#[test]
fn convection_vanishes_for_shear_flow() {
    let g = grid(32);
    let y = FourierField::shear(&g, 1.5, 2).unwrap();
    assert!(bilinear_b(&y).norm_h() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn projection_is_idempotent_and_solenoidal(seed in 0u64..10_000, amp in 0.1f64..10.0) {
        let g = grid(16);
        let y = FourierField::random(&g, seed, |k| (1.0 + k * k).powf(-1.0)).scale(amp);
        let py = y.leray_project();
        prop_assert!(py.divergence_defect() <= 1e-12);
        prop_assert!(py.leray_project().max_coeff_diff(&py) <= 1e-14 * amp);
        // The projection is orthogonal: ‖Py‖ ≤ ‖y‖ and (y - Py, Py) = 0.
        prop_assert!(py.norm_h() <= y.norm_h() * (1.0 + 1e-14));
        prop_assert!((&y - &py).inner_h(&py).abs() <= 1e-12 * y.norm_h().powi(2));
    }

    #[test]
    fn trilinear_form_is_skew(seed in 0u64..10_000, kmax in 2.0f64..6.0) {
        let g = grid(16);
        let y = field(&g, seed, kmax, 1.0);
        let z = field(&g, seed + 1, kmax, 1.0);
        let w = field(&g, seed + 2, kmax, 1.0);
        let scale = y.norm_grad() * z.norm_grad() * w.norm_grad() + 1e-300;
        prop_assert!(trilinear_b(&y, &z, &z).abs() <= 1e-10 * scale);
        prop_assert!((trilinear_b(&y, &z, &w) + trilinear_b(&y, &w, &z)).abs() <= 1e-10 * scale);
    }

    #[test]
    fn damping_pairs_to_the_lebesgue_norm(seed in 0u64..10_000, r in 3.0f64..6.0) {
        let g = grid(16);
        let y = field(&g, seed, 4.0, 2.0);
        let lhs = damping_c1(&y, r).inner_h(&y);
        let rhs = lp_power(&y, r + 1.0);
        prop_assert!((lhs - rhs).abs() <= 1e-8 * rhs);
    }

    #[test]
    fn damping_is_strongly_monotone_and_locally_lipschitz(seed in 0u64..10_000, r in 1.5f64..6.0) {
        let g = grid(16);
        let y = field(&g, seed, 4.0, 1.5);
        let z = field(&g, seed + 7, 3.0, 0.5);
        let (lhs, lower) = c1_monotonicity(&y, &z, r);
        prop_assert!(lhs >= lower - 1e-10 * lhs.abs().max(1.0));
        let (dual, bound) = c1_lipschitz(&y, &z, r);
        prop_assert!(dual <= bound * (1.0 + 1e-10));
    }

    #[test]
    fn shifted_operator_is_monotone(seed in 0u64..10_000, amp in 0.1f64..5.0) {
        let g = grid(16);
        let p = ModelParams::default();
        let kappa = DerivedConstants::new(&p, 1.0).unwrap().kappa;
        let y = field(&g, seed, 4.0, amp);
        let z = field(&g, seed + 3, 4.0, amp);
        let gap = monotonicity_gap(&y, &z, kappa, &p).unwrap();
        prop_assert!(gap >= -1e-10 * (&y - &z).norm_h().powi(2).max(1e-300));
    }
}
