use std::sync::Arc;

use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use tlse_core::basis::BasisFamily;
use tlse_core::estimator::{
    assemble, choose_dimension, l2rho_risk, lse, tlse, TruthProjection, DEFAULT_RANK_TOL,
};
use tlse_core::kernels::{Kernel, RadialKernel};
use tlse_core::measure::{l2rho_inner, DensityModel};
use tlse_core::quadrature::QuadratureGrid;
use tlse_core::sim::{generate_seeded, Dataset, NoiseLaw, SystemConfig};
use tlse_core::theory::coercivity_constant;

fn uniform() -> DensityModel {
    DensityModel::AnalyticUniformPair
}

fn poly(n: usize) -> Arc<BasisFamily> {
    Arc::new(BasisFamily::poly(n, &uniform(), 0.0, 0.95).unwrap())
}

/// Normal equations from the literal definition, one sample at a time.
fn normal_oracle(ds: &Dataset, basis: &BasisFamily, n: usize) -> (Vec<f64>, Vec<f64>) {
    let (np, d) = (ds.n_particles(), ds.dim());
    let mut a = vec![0.0; n * n];
    let mut b = vec![0.0; n];
    for m in 0..ds.n_samples() {
        let x = ds.positions(m);
        let cols: Vec<Vec<f64>> = (0..n)
            .map(|k| tlse_core::sim::forward(&|r: f64| basis.eval(k, r), x, np, d))
            .collect();
        for k in 0..n {
            for l in 0..n {
                a[k * n + l] += cols[k].iter().zip(&cols[l]).map(|(p, q)| p * q).sum::<f64>();
            }
            b[k] += cols[k].iter().zip(ds.observations(m)).map(|(p, q)| p * q).sum::<f64>();
        }
    }
    let s = 1.0 / (ds.n_samples() * np) as f64;
    (a.iter().map(|v| v * s).collect(), b.iter().map(|v| v * s).collect())
}

#[test]
fn assembly_matches_literal_definition() {
    let cfg = SystemConfig {
        dim: 2,
        ..SystemConfig::uniform(4, 600, NoiseLaw::Gaussian { sigma: 0.2 }, 3)
    };
    let basis = BasisFamily::poly(5, &uniform(), 0.0, 1.0).unwrap();
    let kernel = Kernel::expansion(vec![0.5, -0.2, 0.1], Arc::new(basis.clone())).unwrap();
    let ds = generate_seeded(&cfg, &kernel).unwrap();
    let sys = assemble(&ds, &basis, 5).unwrap();
    let (a, b) = normal_oracle(&ds, &basis, 5);
    for k in 0..5 {
        assert_abs_diff_eq!(sys.b[k], b[k], epsilon = 1e-12);
        for l in 0..5 {
            assert_abs_diff_eq!(sys.a[(k, l)], a[k * 5 + l], epsilon = 1e-12);
        }
    }
}

#[test]
fn assembly_is_thread_count_invariant() {
    let cfg = SystemConfig::uniform(5, 3000, NoiseLaw::Gaussian { sigma: 0.1 }, 8);
    let basis = poly(6);
    let ds = generate_seeded(&cfg, &RadialKernel::power(1.0).standalone().unwrap()).unwrap();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let many = rayon::ThreadPoolBuilder::new().num_threads(6).build().unwrap();
    let s1 = one.install(|| assemble(&ds, &basis, 6).unwrap());
    let s2 = many.install(|| assemble(&ds, &basis, 6).unwrap());
    assert_eq!(s1.checksum, s2.checksum);
    assert_eq!(s1.a, s2.a);
}

#[test]
fn doubling_observations_doubles_b_only() {
    let cfg = SystemConfig::uniform(3, 500, NoiseLaw::Gaussian { sigma: 0.5 }, 1);
    let basis = poly(4);
    let ds = generate_seeded(&cfg, &RadialKernel::power(2.0).standalone().unwrap()).unwrap();
    let doubled = ds.with_observations(ds.y().iter().map(|v| 2.0 * v).collect()).unwrap();
    let (s1, s2) = (assemble(&ds, &basis, 4).unwrap(), assemble(&doubled, &basis, 4).unwrap());
    assert_eq!(s1.a, s2.a);
    assert_eq!(&s1.b * 2.0, s2.b);
}

#[test]
fn singular_construction_is_gated() {
    // the second normalized indicator lives on [1/2, 1]; no pair reaches it
    let basis = BasisFamily::haar(2, &uniform(), 0.0, 1.0).unwrap();
    let (m, n) = (200, 5);
    let cfg = SystemConfig::uniform(n, m, NoiseLaw::Gaussian { sigma: 0.1 }, 0);
    let x: Vec<f64> = (0..m * n).map(|k| 0.125 * ((k * 37 % 101) as f64 / 100.0)).collect();
    let y: Vec<f64> = (0..m * n).map(|k| ((k % 7) as f64 - 3.0) * 0.01).collect();
    let ds = Dataset::from_parts(cfg, None, x, y).unwrap();
    let sys = assemble(&ds, &basis, 2).unwrap();
    assert!(sys.lambda_min <= 1e-12);
    let est = tlse(&sys, coercivity_constant(n).unwrap() / 4.0).unwrap();
    assert!(est.gated);
    assert!(est.coefficients.iter().all(|&c| c == 0.0));
}

#[test]
fn risk_matches_weighted_quadrature() {
    let basis = poly(12);
    let truth = |r: f64| (2.0 * r).sin() + 0.3 * r * r;
    let grid = QuadratureGrid::composite(0.0, 0.95, 64, 16);
    let proj = TruthProjection::by_quadrature(&truth, &basis, 12, &grid);
    let cfg = SystemConfig::uniform(5, 4000, NoiseLaw::Gaussian { sigma: 0.1 }, 5);
    let ds = tlse_core::sim::generate(&cfg, &truth, None, &tlse_core::rng::SeedTree::new(5)).unwrap();
    for n in [3, 6] {
        let sys = assemble(&ds, &basis, n).unwrap();
        let est = tlse(&sys, coercivity_constant(5).unwrap() / 4.0).unwrap();
        let risk = l2rho_risk(&est, &proj);
        let fitted = |r: f64| basis.combination(&est.coefficients, r);
        let direct = l2rho_inner(
            |r| fitted(r) - truth(r),
            |r| fitted(r) - truth(r),
            &uniform(),
            &grid,
        );
        assert_abs_diff_eq!(risk, direct, epsilon = 1e-6);
    }
}

#[test]
fn dimension_choice() {
    assert_eq!(choose_dimension(512, 1.0, 1.0).unwrap(), 8);
    assert_eq!(choose_dimension(16384, 2.0, 1.0).unwrap(), 6);
    assert_eq!(choose_dimension(1, 1.0, 1.0).unwrap(), 1);
    assert_eq!(choose_dimension(1000, 1.0, 1.0).unwrap(), 10);
    assert!(choose_dimension(0, 1.0, 1.0).is_err());
}

fn random_system() -> impl Strategy<Value = (u64, usize, usize, f64)> {
    (0u64..1000, 3usize..6, 20usize..200, 0.0f64..0.5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn gating_dichotomy((seed, np, m, sigma) in random_system(), n in 1usize..10) {
        let cfg = SystemConfig::uniform(np, m, NoiseLaw::Gaussian { sigma }, seed);
        let ds = generate_seeded(&cfg, &RadialKernel::power(1.0).standalone().unwrap()).unwrap();
        let sys = assemble(&ds, &poly(9), n.min(9)).unwrap();
        let est = tlse(&sys, coercivity_constant(np).unwrap() / 4.0).unwrap();
        let residual = (&sys.a * nalgebra::DVector::from_vec(est.coefficients.clone()) - &sys.b).norm();
        let gated = est.gated && est.coefficients.iter().all(|&c| c == 0.0);
        let solved = residual <= 1e-8 * sys.b.norm();
        prop_assert!(gated != solved || (gated && sys.b.norm() == 0.0));
    }

    #[test]
    fn tlse_equals_lse_when_well_conditioned(seed in 0u64..1000, n in 1usize..5) {
        let cfg = SystemConfig::uniform(4, 3000, NoiseLaw::Gaussian { sigma: 0.1 }, seed);
        let ds = generate_seeded(&cfg, &RadialKernel::power(1.0).standalone().unwrap()).unwrap();
        let sys = assemble(&ds, &poly(4), n).unwrap();
        let t = tlse(&sys, coercivity_constant(4).unwrap() / 4.0).unwrap();
        prop_assume!(!t.gated);
        let l = lse(&sys, DEFAULT_RANK_TOL).unwrap();
        for (a, b) in t.coefficients.iter().zip(&l.coefficients) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }
}
