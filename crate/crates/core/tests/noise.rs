//! Covariance traces, Brownian aggregation and OU statistics.

use std::sync::Arc;

use cbfed::noise::{ou_mode_samples, ou_stationary_variance, NoiseBasis, NoiseSampler, NoiseSpec};
use cbfed::{Grid, GridSpec, ModelParams};

fn basis(dim: usize, n: usize, eps: f64, seed: u64) -> Arc<NoiseBasis> {
    let g = Grid::new(GridSpec::new(dim, n, 1.0).unwrap()).unwrap();
    Arc::new(NoiseBasis::new(&g, NoiseSpec::new(eps, seed).unwrap()).unwrap())
}

/// `Σ m(k) λ_k^a (1 + λ_k)^{-ε}` over `|k_i| < N/2` on the unit 2-torus,
/// with two polarizations at `k = 0` and one elsewhere.
fn lattice_sum_2d(n: i32, eps: f64, a: f64) -> f64 {
    let mut s = 0.0;
    for k1 in -(n / 2 - 1)..n / 2 {
        for k2 in -(n / 2 - 1)..n / 2 {
            let lambda = 4.0 * std::f64::consts::PI.powi(2) * (k1 * k1 + k2 * k2) as f64;
            let m = if k1 == 0 && k2 == 0 { 2.0 } else { 1.0 };
            let w = if a == 0.0 { 1.0 } else { lambda.powf(a) };
            s += m * w * (1.0 + lambda).powf(-eps);
        }
    }
    s
}

#[test]
fn traces_match_the_lattice_sum() {
    for (n, eps) in [(16, 2.5), (32, 1.5), (32, 3.0)] {
        let b = basis(2, n, eps, 1);
        let tq = b.trace_q().partial;
        let oracle = lattice_sum_2d(n as i32, eps, 0.0);
        assert!((tq - oracle).abs() <= 1e-12 * oracle, "n={n} eps={eps}: {tq} vs {oracle}");
        let taq = b.trace_aq().partial;
        let oracle = lattice_sum_2d(n as i32, eps, 1.0);
        assert!((taq - oracle).abs() <= 1e-12 * oracle, "n={n} eps={eps}: {taq} vs {oracle}");
    }
}

#[test]
fn admissibility_thresholds_follow_the_dimension() {
    let s = NoiseSpec::new(1.2, 0).unwrap();
    assert!(s.trace_q_admissible(2));
    assert!(!s.trace_q_admissible(3));
    assert!(!s.trace_aq_admissible(2));
    assert!(s.require_trace_aq(2).is_err());
    assert!(NoiseSpec::new(2.5, 0).unwrap().require_trace_aq(2).is_ok());
}

#[test]
fn tail_bound_covers_finer_grids() {
    let coarse = basis(2, 8, 2.5, 0).trace_q();
    let fine = basis(2, 64, 2.5, 0).trace_q();
    let tail = coarse.tail_bound.expect("convergent series has a tail bound");
    assert!(coarse.partial < fine.partial);
    assert!(fine.partial <= coarse.partial + tail);
}

#[test]
fn coarse_steps_aggregate_fine_brownian_increments() {
    let b = basis(2, 16, 2.5, 9);
    let p = ModelParams::default();
    let s = NoiseSampler::new(b, &p, 1e-3).unwrap();
    let coarse = s.draw(5, 3, 4);
    let fine: Vec<_> = (12..16).map(|n| s.draw(5, n, 1)).collect();
    for j in 0..coarse.dw.len() {
        let sum: f64 = fine.iter().map(|d| d.dw[j]).sum();
        assert!((coarse.dw[j] - sum).abs() < 1e-14);
    }
    assert!(s.ratio(1.5e-3).is_err());
}

#[test]
fn draws_depend_only_on_seed_path_and_step() {
    let p = ModelParams::default();
    let a = NoiseSampler::new(basis(2, 16, 2.5, 3), &p, 1e-2).unwrap();
    let b = NoiseSampler::new(basis(2, 16, 2.5, 3), &p, 1e-2).unwrap();
    let c = NoiseSampler::new(basis(2, 16, 2.5, 4), &p, 1e-2).unwrap();
    assert_eq!(a.draw(7, 2, 1).dw, b.draw(7, 2, 1).dw);
    assert_ne!(a.draw(7, 2, 1).dw, c.draw(7, 2, 1).dw);
    assert_ne!(a.draw(7, 2, 1).dw, a.draw(8, 2, 1).dw);
}

#[test]
fn ou_modes_reach_their_stationary_variance() {
    // Each mode is an OU process with rate θ and noise intensity μ_j.
    for (theta, mu) in [(0.5, 1.0), (4.0, 0.2), (40.0, 3.0)] {
        let v = ou_stationary_variance(theta, mu);
        assert!((v - mu / (2.0 * theta)).abs() < 1e-15);
        let xs = ou_mode_samples(11, 0, theta, mu, 10.0 / theta / 20.0, 20, 8000);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        // Standard error of a Gaussian sample variance: v √(2/(n-1)).
        let se = v * (2.0 / 7999.0f64).sqrt();
        assert!((var - v).abs() < 4.0 * se, "θ={theta}: {var} vs {v}");
    }
}
