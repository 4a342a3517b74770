use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tlse_core::basis::BasisFamily;
use tlse_core::measure::DensityModel;
use tlse_core::quadrature::QuadratureGrid;
use tlse_core::rng::SeedTree;
use tlse_core::sim::{forward, sample_positions, NoiseLaw, SystemConfig};
use tlse_core::theory::{
    bernstein_tail_bound, coercivity_constant, discretized_normal_operator,
    empirical_mean_fourth_moment_oracle, hs_norm_g, pacbayes_min_samples, pacbayes_tail_bound,
    TailBoundParams,
};

fn uniform() -> DensityModel {
    DensityModel::AnalyticUniformPair
}

/// Per-sample `⟨R_ψk, R_ψl⟩/N` minus its single-pair and three-particle
/// decomposition, averaged over samples, with its standard error.
#[test]
fn operator_decomposition_matches_monte_carlo() {
    let np = 4usize;
    let m = 20_000;
    let basis = BasisFamily::poly(3, &uniform(), 0.0, 1.0).unwrap();
    let cfg = SystemConfig::uniform(np, m, NoiseLaw::None, 77);
    let x = sample_positions(&cfg, &SeedTree::new(77)).unwrap();
    let nf = np as f64;
    let pair_w = (nf - 1.0) / (nf * nf);
    let triple_w = (nf - 1.0) * (nf - 2.0) / (nf * nf);
    for (k, l) in [(0, 0), (0, 1), (1, 2), (2, 2)] {
        let diffs: Vec<f64> = (0..m)
            .map(|s| {
                let xs = &x[s * np..(s + 1) * np];
                let rk = forward(&|r: f64| basis.eval(k, r), xs, np, 1);
                let rl = forward(&|r: f64| basis.eval(l, r), xs, np, 1);
                let lhs: f64 = rk.iter().zip(&rl).map(|(a, b)| a * b).sum::<f64>() / nf;
                let (mut pair, mut triple, mut n2, mut n3) = (0.0, 0.0, 0.0, 0.0);
                for i in 0..np {
                    for j in 0..np {
                        if j == i {
                            continue;
                        }
                        let rij = (xs[i] - xs[j]).abs();
                        pair += basis.eval(k, rij) * basis.eval(l, rij);
                        n2 += 1.0;
                        for jj in 0..np {
                            if jj == i || jj == j {
                                continue;
                            }
                            let rij2 = (xs[i] - xs[jj]).abs();
                            let dot = (xs[i] - xs[j]).signum() * (xs[i] - xs[jj]).signum();
                            triple += basis.eval(k, rij) * basis.eval(l, rij2) * dot;
                            n3 += 1.0;
                        }
                    }
                }
                lhs - pair_w * pair / n2 - triple_w * triple / n3
            })
            .collect();
        let mean = diffs.iter().sum::<f64>() / m as f64;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        let se = (var / m as f64).sqrt();
        assert!(mean.abs() <= 5.0 * se.max(1e-15), "({k},{l}): {mean} vs se {se}");
    }
}

#[test]
fn operator_discretization_structure() {
    let basis = BasisFamily::poly(8, &uniform(), 0.0, 1.0).unwrap();
    let grid = QuadratureGrid::on_breakpoints(&(0..=64).map(|i| i as f64 / 64.0).collect::<Vec<_>>(), 12);
    for np in [3, 5, 10] {
        let op = discretized_normal_operator(&basis, 8, np, &grid).unwrap();
        let c = coercivity_constant(np).unwrap();
        let nf = np as f64;
        let recon = &op.l_g * ((nf - 1.0) * (nf - 2.0) / (nf * nf)) + nalgebra::DMatrix::identity(8, 8) * c;
        assert!((&recon - &op.l_bar).amax() < 1e-14);
        assert!((&op.l_bar - op.l_bar.transpose()).amax() < 1e-10);
        assert!(op.lambda_min() >= c - 1e-3);
    }
}

#[test]
fn hilbert_schmidt_norm_is_below_half() {
    let grid = QuadratureGrid::composite(0.0, 1.0, 64, 8);
    let hs = hs_norm_g(&grid);
    assert!(hs <= 0.5 + 1e-3, "{hs}");
    assert!(hs > 0.1);
}

/// Fourth moment by summing over multinomial count vectors.
fn moment_by_counts(atoms: &[(Vec<f64>, f64)], m: usize) -> f64 {
    let n = atoms[0].0.len();
    let mean: Vec<f64> = (0..n).map(|k| atoms.iter().map(|(v, p)| p * v[k]).sum()).collect();
    let fact = |k: usize| (1..=k).map(|v| v as f64).product::<f64>();
    let mut total = 0.0;
    let mut counts = vec![0usize; atoms.len()];
    fn rec(
        idx: usize,
        left: usize,
        counts: &mut Vec<usize>,
        f: &mut dyn FnMut(&[usize]),
    ) {
        if idx + 1 == counts.len() {
            counts[idx] = left;
            f(counts);
            return;
        }
        for c in 0..=left {
            counts[idx] = c;
            rec(idx + 1, left - c, counts, f);
        }
    }
    rec(0, m, &mut counts, &mut |c: &[usize]| {
        let mut coef = fact(m);
        let mut prob = 1.0;
        for (ci, (_, p)) in c.iter().zip(atoms) {
            coef /= fact(*ci);
            prob *= p.powi(*ci as i32);
        }
        let sq: f64 = (0..n)
            .map(|k| {
                let avg: f64 = c.iter().zip(atoms).map(|(ci, (v, _))| *ci as f64 * v[k]).sum::<f64>() / m as f64;
                (avg - mean[k]).powi(2)
            })
            .sum();
        total += coef * prob * sq * sq;
    });
    total
}

#[test]
fn moment_oracle_against_count_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..100 {
        let atoms_n = rng.random_range(1..=4usize);
        let dim = rng.random_range(1..=2usize);
        let m = rng.random_range(1..=3usize);
        let raw: Vec<f64> = (0..atoms_n).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let atoms: Vec<(Vec<f64>, f64)> = raw
            .iter()
            .map(|w| ((0..dim).map(|_| rng.random_range(-2.0..2.0)).collect(), w / total))
            .collect();
        let oracle = empirical_mean_fourth_moment_oracle(&atoms, m).unwrap();
        assert_abs_diff_eq!(oracle.exact, moment_by_counts(&atoms, m), epsilon = 1e-12);
        assert!(oracle.exact <= oracle.bound + 1e-15);
    }
}

fn params() -> impl Strategy<Value = TailBoundParams> {
    (2usize..20, 100usize..1_000_000, 0.05f64..0.95, 1.0f64..5.0, 1.0f64..10.0, 3usize..10).prop_map(
        |(n, m, epsilon, cmax, kappa, np)| TailBoundParams {
            n,
            m,
            epsilon,
            c: coercivity_constant(np).unwrap(),
            cmax,
            kappa,
            n_particles: np,
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn bernstein_monotone(p in params(), extra in 1usize..100_000) {
        let base = bernstein_tail_bound(&p).unwrap().raw;
        let more_m = bernstein_tail_bound(&TailBoundParams { m: p.m + extra, ..p }).unwrap().raw;
        let more_n = bernstein_tail_bound(&TailBoundParams { n: p.n + 1, ..p }).unwrap().raw;
        prop_assert!(more_m <= base);
        prop_assert!(more_n >= base);
    }

    #[test]
    fn pacbayes_monotone(p in params(), factor in 1.0f64..4.0) {
        let m = (pacbayes_min_samples(&TailBoundParams { n: p.n + 1, ..p }) * factor).ceil() as usize + 1;
        let p = TailBoundParams { m, ..p };
        let base = pacbayes_tail_bound(&p).unwrap().raw;
        let more_m = pacbayes_tail_bound(&TailBoundParams { m: m * 2, ..p }).unwrap().raw;
        let more_n = pacbayes_tail_bound(&TailBoundParams { n: p.n + 1, ..p }).unwrap().raw;
        prop_assert!(more_m <= base);
        prop_assert!(more_n >= base);
    }
}
