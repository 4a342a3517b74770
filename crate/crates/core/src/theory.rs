//! Operator-level and probabilistic facts behind the estimator: the
//! uniform-law integral kernel, coercivity, left-tail bounds for the smallest
//! eigenvalue of the normal matrix, and fourth-moment conditions.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BasisFamily;
use crate::error::{Error, Result};
use crate::estimator::{assemble, smallest_eigenvalue};
use crate::kernels::{Kernel, Radial};
use crate::measure::{l2rho_inner, DensityModel};
use crate::quadrature::QuadratureGrid;
use crate::rng::{keys, SeedTree};
use crate::sim::{forward_into, generate, pair_direction, SystemConfig, COINCIDENT_TOL};

/// `c = (N − 1)/N²`, the coercivity constant of the normal operator.
pub fn coercivity_constant(n_particles: usize) -> Result<f64> {
    if n_particles < 3 {
        return Err(Error::Domain(format!("need N >= 3, got {n_particles}")));
    }
    let n = n_particles as f64;
    Ok((n - 1.0) / (n * n))
}

/// Weight of `L_G` in `L̄ = ((N−1)(N−2)/N²) L_G + ((N−1)/N²) I`.
fn lg_weight(n_particles: usize) -> f64 {
    let n = n_particles as f64;
    (n - 1.0) * (n - 2.0) / (n * n)
}

/// `G̃(r, s) = G(r, s) ρ'(r) ρ'(s)` for iid uniform positions in one dimension.
pub fn analytic_g_tilde(r: f64, s: f64) -> f64 {
    let base = 2.0 - ((r - s).abs() + (r + s).abs());
    if r + s <= 1.0 {
        base - (2.0 - 2.0 * (r + s).abs())
    } else {
        base
    }
}

/// The integral kernel `G(r, s)` of `L_G` with respect to `ρ ⊗ ρ`.
pub fn analytic_g(r: f64, s: f64) -> Result<f64> {
    let denom = 4.0 * (1.0 - r) * (1.0 - s);
    if !(0.0..=1.0).contains(&r) || !(0.0..=1.0).contains(&s) || denom < 1e-12 {
        return Err(Error::Domain(format!("G is singular at ({r}, {s})")));
    }
    Ok(analytic_g_tilde(r, s) / denom)
}

/// `∫∫ G(r,s)² ρ'(r) ρ'(s) dr ds` by tensor quadrature on `grid × grid`.
pub fn hs_norm_g(grid: &QuadratureGrid) -> f64 {
    let rho: Vec<f64> = grid.nodes.iter().map(|&r| 2.0 * (1.0 - r)).collect();
    grid.nodes
        .par_iter()
        .enumerate()
        .map(|(p, &r)| {
            let mut acc = 0.0;
            for (q, &s) in grid.nodes.iter().enumerate() {
                if rho[p] < 1e-10 || rho[q] < 1e-10 {
                    continue;
                }
                let gt = analytic_g_tilde(r, s);
                acc += grid.weights[q] * gt * gt / (rho[p] * rho[q]);
            }
            grid.weights[p] * acc
        })
        .collect::<Vec<_>>()
        .iter()
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorDiscretization {
    pub basis_id: String,
    pub n: usize,
    pub n_particles: usize,
    pub panels: usize,
    pub l_g: DMatrix<f64>,
    pub l_bar: DMatrix<f64>,
}

impl OperatorDiscretization {
    pub fn lambda_min(&self) -> f64 {
        SymmetricEigen::new(self.l_bar.clone()).eigenvalues.min()
    }

    pub fn lambda_max(&self) -> f64 {
        SymmetricEigen::new(self.l_bar.clone()).eigenvalues.max()
    }

    pub fn lambda_min_lg(&self) -> f64 {
        SymmetricEigen::new(self.l_g.clone()).eigenvalues.min()
    }
}

/// `L_G(k,l) = ∫∫ ψ_k(r) ψ_l(s) G̃(r,s) dr ds` on the basis interval.
fn discretize_lg(basis: &BasisFamily, n: usize, grid: &QuadratureGrid) -> DMatrix<f64> {
    let g = grid.len();
    let mut wpsi = DMatrix::<f64>::zeros(g, n);
    let mut buf = vec![0.0; n];
    for (p, (&r, &w)) in grid.nodes.iter().zip(&grid.weights).enumerate() {
        basis.eval_into(r, &mut buf);
        for k in 0..n {
            wpsi[(p, k)] = w * buf[k];
        }
    }
    let kernel = DMatrix::from_fn(g, g, |p, q| analytic_g_tilde(grid.nodes[p], grid.nodes[q]));
    let lg = wpsi.tr_mul(&(kernel * &wpsi));
    (&lg + lg.transpose()) * 0.5
}

/// Galerkin matrices of `L_G` and `L̄` for the first `n` basis functions.
pub fn discretized_normal_operator(
    basis: &BasisFamily,
    n: usize,
    n_particles: usize,
    grid: &QuadratureGrid,
) -> Result<OperatorDiscretization> {
    if !basis.model().is_uniform_pair() {
        return Err(Error::UnsupportedMeasure(
            "the analytic kernel exists only for iid uniform positions".into(),
        ));
    }
    if n == 0 || n > basis.n() {
        return Err(Error::Precondition(format!("n = {n} exceeds basis size {}", basis.n())));
    }
    let c = coercivity_constant(n_particles)?;
    let l_g = discretize_lg(basis, n, grid);
    let l_bar = &l_g * lg_weight(n_particles) + DMatrix::identity(n, n) * c;
    Ok(OperatorDiscretization {
        basis_id: basis.id().to_string(),
        n,
        n_particles,
        panels: grid.panels,
        l_g,
        l_bar,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticSystem {
    pub a_inf: DMatrix<f64>,
    pub b_inf: DVector<f64>,
    pub lambda_min: f64,
    /// `A∞⁻¹ b∞`
    pub solution: DVector<f64>,
    /// `‖θ*_n − A∞⁻¹ b∞‖²`
    pub extra_bias: f64,
    /// `c⁻² Σ_{l>n} θ*_l²`
    pub bound: f64,
    pub holds: bool,
}

/// Large-sample limit of the normal system for a truth `Σ_l θ*_l ψ_l`.
pub fn asymptotic_normal_system(
    basis: &BasisFamily,
    n: usize,
    n_particles: usize,
    truth: &[f64],
    grid: &QuadratureGrid,
) -> Result<AsymptoticSystem> {
    let k = truth.len().max(n);
    if k > basis.n() {
        return Err(Error::Precondition(format!(
            "truth has {} modes but the basis only {}",
            truth.len(),
            basis.n()
        )));
    }
    let full = discretized_normal_operator(basis, k, n_particles, grid)?;
    let mut theta = DVector::zeros(k);
    for (i, t) in truth.iter().enumerate() {
        theta[i] = *t;
    }
    let b_full = &full.l_bar * &theta;
    let a_inf = full.l_bar.view((0, 0), (n, n)).into_owned();
    let b_inf = b_full.rows(0, n).into_owned();
    let lambda_min = smallest_eigenvalue(&a_inf)?;
    let solution = a_inf
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("asymptotic normal matrix is not positive definite".into()))?
        .solve(&b_inf);
    let extra_bias = (theta.rows(0, n) - &solution).norm_squared();
    let c = coercivity_constant(n_particles)?;
    let tail: f64 = truth.iter().skip(n).map(|t| t * t).sum();
    let bound = tail / (c * c);
    Ok(AsymptoticSystem {
        a_inf,
        b_inf,
        lambda_min,
        solution,
        extra_bias,
        bound,
        holds: extra_bias <= bound + 1e-8,
    })
}

/// Difference between `(1/N)‖R_φ[X]‖²` and its expansion into single-pair and
/// three-particle terms.
pub fn per_sample_identity<K: Radial + ?Sized>(kernel: &K, x: &[f64], n: usize, d: usize) -> f64 {
    let mut r = vec![0.0; n * d];
    forward_into(kernel, x, n, d, &mut r);
    let lhs = r.iter().map(|v| v * v).sum::<f64>() / n as f64;

    let mut unit = vec![0.0; n * n * d];
    let mut phi = vec![0.0; n * n];
    let mut u = vec![0.0; d];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let dist = pair_direction(x, i, j, d, &mut u);
            if dist < COINCIDENT_TOL {
                continue;
            }
            phi[i * n + j] = kernel.value(dist);
            unit[(i * n + j) * d..(i * n + j + 1) * d].copy_from_slice(&u);
        }
    }
    let mut single = 0.0;
    let mut triple = 0.0;
    for i in 0..n {
        for j in 0..n {
            if j == i {
                continue;
            }
            single += phi[i * n + j].powi(2);
            for jp in 0..n {
                if jp == i || jp == j {
                    continue;
                }
                let dot: f64 = (0..d)
                    .map(|c| unit[(i * n + j) * d + c] * unit[(i * n + jp) * d + c])
                    .sum();
                triple += phi[i * n + j] * phi[i * n + jp] * dot;
            }
        }
    }
    let rhs = (single + triple) / (n as f64).powi(3);
    (lhs - rhs).abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailBoundParams {
    pub n: usize,
    pub m: usize,
    pub epsilon: f64,
    /// Coercivity constant `c`.
    pub c: f64,
    pub cmax: f64,
    /// Fourth-to-second moment ratio `κ`.
    pub kappa: f64,
    pub n_particles: usize,
}

impl TailBoundParams {
    fn validate(&self) -> Result<()> {
        if self.n == 0
            || !(self.epsilon > 0.0 && self.epsilon < 1.0)
            || !(self.c > 0.0 && self.cmax > 0.0 && self.kappa > 0.0)
            || self.n_particles == 0
        {
            return Err(Error::Precondition(format!("invalid tail-bound parameters {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailBound {
    pub raw: f64,
    /// `raw` clamped to `[0, 1]`.
    pub probability: f64,
}

impl TailBound {
    fn new(raw: f64) -> Self {
        Self {
            raw,
            probability: raw.clamp(0.0, 1.0),
        }
    }

    pub fn is_vacuous(&self) -> bool {
        self.raw >= 1.0
    }
}

/// Matrix-Bernstein bound on `P(λ_min(A) ≤ (1 − ε)c)`.
pub fn bernstein_tail_bound(p: &TailBoundParams) -> Result<TailBound> {
    p.validate()?;
    let n = p.n as f64;
    let nc2 = n * p.cmax * p.cmax;
    let num = p.m as f64 * p.epsilon * p.epsilon * p.c * p.c / 4.0;
    let den = nc2 * nc2 + nc2 * p.epsilon * p.c / 3.0;
    Ok(TailBound::new(2.0 * n * (-num / den).exp()))
}

/// Sample size from which the PAC-Bayes bound applies.
pub fn pacbayes_min_samples(p: &TailBoundParams) -> f64 {
    let nn = p.n_particles as f64;
    16.0 * p.kappa * nn * nn / (p.c * p.c) * (5.0 * p.cmax * p.cmax / p.c).ln() * p.n as f64
        / (p.epsilon * p.epsilon)
}

/// PAC-Bayes bound on `P(λ_min(A) ≤ (1 − ε)c/2)`.
pub fn pacbayes_tail_bound(p: &TailBoundParams) -> Result<TailBound> {
    p.validate()?;
    if p.n < 2 {
        return Err(Error::Precondition("the PAC-Bayes bound needs n >= 2".into()));
    }
    let need = pacbayes_min_samples(p);
    if (p.m as f64) < need {
        return Err(Error::Precondition(format!(
            "PAC-Bayes bound needs M >= {} (got {})",
            need.ceil(),
            p.m
        )));
    }
    Ok(TailBound::new(pacbayes_log_bound(p).exp()))
}

/// Logarithm of the PAC-Bayes expression, evaluated without the sample-size condition.
pub fn pacbayes_log_bound(p: &TailBoundParams) -> f64 {
    let nn = p.n_particles as f64;
    p.n as f64 * (5.0 * p.cmax * p.cmax / p.c).ln()
        - p.epsilon * p.epsilon * p.m as f64 * p.c * p.c / (16.0 * p.kappa * nn * nn)
}

/// Wilson score interval at 95% for `k` successes in `trials`.
pub fn wilson_interval(k: usize, trials: usize) -> (f64, f64) {
    let z = 1.959_963_984_540_054;
    let n = trials as f64;
    let p = k as f64 / n;
    let denom = 1.0 + z * z / n;
    let center = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    let lo = if k == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if k == trials { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

/// Replicate `rep` draws everything from this subtree.
pub fn replicate_tree(tree: &SeedTree, rep: usize) -> SeedTree {
    tree.child(keys::REPLICATE).child(rep as u64)
}

/// `λ_min` of the assembled normal matrix in `reps` independent replicates.
/// Observations do not enter `A`, so the data are generated with a zero kernel.
pub fn lambda_min_replicates(
    config: &SystemConfig,
    basis: &BasisFamily,
    n: usize,
    reps: usize,
    tree: &SeedTree,
) -> Result<Vec<f64>> {
    (0..reps)
        .into_par_iter()
        .map(|rep| {
            let data = generate(config, &|_: f64| 0.0, None, &replicate_tree(tree, rep))?;
            Ok(assemble(&data, basis, n)?.lambda_min)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailFrequency {
    pub count: usize,
    pub reps: usize,
    pub frequency: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl TailFrequency {
    pub fn from_samples(samples: &[f64], threshold: f64) -> Self {
        let count = samples.iter().filter(|&&l| l <= threshold).count();
        let (ci_lo, ci_hi) = wilson_interval(count, samples.len());
        Self {
            count,
            reps: samples.len(),
            frequency: count as f64 / samples.len() as f64,
            ci_lo,
            ci_hi,
        }
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci_hi - self.ci_lo)
    }
}

/// Fraction of replicates with `λ_min(A) ≤ threshold`.
pub fn empirical_tail_frequency(
    config: &SystemConfig,
    basis: &BasisFamily,
    n: usize,
    threshold: f64,
    reps: usize,
    tree: &SeedTree,
) -> Result<TailFrequency> {
    if reps < 100 {
        return Err(Error::Precondition(format!("need at least 100 replicates, got {reps}")));
    }
    let samples = lambda_min_replicates(config, basis, n, reps, tree)?;
    Ok(TailFrequency::from_samples(&samples, threshold))
}

/// `κ̂ = mean ‖R_φ[X]‖⁴ / (mean ‖R_φ[X]‖²)²` for a kernel of unit `L²_ρ` norm.
pub fn fourth_moment_ratio<K: Radial + ?Sized>(
    kernel: &K,
    model: &DensityModel,
    grid: &QuadratureGrid,
    config: &SystemConfig,
    m_mc: usize,
    tree: &SeedTree,
) -> Result<f64> {
    let norm_sq = l2rho_inner(|r| kernel.value(r), |r| kernel.value(r), model, grid);
    if (norm_sq.sqrt() - 1.0).abs() > 1e-6 {
        return Err(Error::Precondition(format!(
            "kernel must have unit L2(rho) norm, got {}",
            norm_sq.sqrt()
        )));
    }
    let mut cfg = config.clone();
    cfg.n_samples = m_mc;
    let data = generate(&cfg, kernel, None, tree)?;
    let (n, d) = (cfg.n_particles, cfg.dim);
    let sq: Vec<f64> = (0..m_mc)
        .into_par_iter()
        .map(|m| {
            let mut r = vec![0.0; n * d];
            forward_into(kernel, data.positions(m), n, d, &mut r);
            r.iter().map(|v| v * v).sum::<f64>()
        })
        .collect();
    let m2 = sq.iter().sum::<f64>() / m_mc as f64;
    let m4 = sq.iter().map(|v| v * v).sum::<f64>() / m_mc as f64;
    if m2 <= 0.0 {
        return Err(Error::Numerical("kernel produces no interaction on the sample".into()));
    }
    Ok(m4 / (m2 * m2))
}

/// `κ̂` of the worst of the first `n` basis functions, used in place of the
/// supremum over the smoothness class.
pub fn kappa_surrogate(
    basis: &BasisFamily,
    n: usize,
    config: &SystemConfig,
    m_mc: usize,
    tree: &SeedTree,
) -> Result<f64> {
    let (lo, hi) = basis.interval();
    let grid = QuadratureGrid::composite(lo, hi, 64, (n + 20).max(16));
    let mut worst = 0.0f64;
    for k in 0..n {
        let f = |r: f64| basis.eval(k, r);
        let scale = l2rho_inner(f, f, basis.model(), &grid).sqrt();
        let unit = move |r: f64| basis.eval(k, r) / scale;
        worst = worst.max(fourth_moment_ratio(&unit, basis.model(), &grid, config, m_mc, &tree.child(k as u64))?);
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentOracle {
    /// `E|mean_m(Z_m) − EZ|⁴`
    pub exact: f64,
    /// `(6n/M²) Σ_k E|Z(k) − EZ(k)|⁴`
    pub bound: f64,
}

pub const ORACLE_MAX_SAMPLES: usize = 6;
pub const ORACLE_MAX_ATOMS: usize = 4;

/// Exact fourth moment of the empirical mean of `m` iid copies of a discrete
/// random vector, by enumerating all `atoms^m` outcomes.
pub fn empirical_mean_fourth_moment_oracle(atoms: &[(Vec<f64>, f64)], m: usize) -> Result<MomentOracle> {
    if m == 0 || m > ORACLE_MAX_SAMPLES || atoms.is_empty() || atoms.len() > ORACLE_MAX_ATOMS {
        return Err(Error::Config(format!(
            "enumeration needs 1 <= M <= {ORACLE_MAX_SAMPLES} and 1..={ORACLE_MAX_ATOMS} atoms"
        )));
    }
    let n = atoms[0].0.len();
    if n == 0 || atoms.iter().any(|(v, _)| v.len() != n) {
        return Err(Error::Config("atoms must share a positive dimension".into()));
    }
    if atoms.iter().any(|(_, p)| !(*p >= 0.0)) || (atoms.iter().map(|a| a.1).sum::<f64>() - 1.0).abs() > 1e-12 {
        return Err(Error::Config("atom probabilities must be nonnegative and sum to 1".into()));
    }
    let mean: Vec<f64> = (0..n)
        .map(|k| atoms.iter().map(|(v, p)| p * v[k]).sum())
        .collect();
    let centered: Vec<Vec<f64>> = atoms
        .iter()
        .map(|(v, _)| v.iter().zip(&mean).map(|(a, b)| a - b).collect())
        .collect();

    let a = atoms.len();
    let mut idx = vec![0usize; m];
    let mut exact = 0.0;
    loop {
        let mut prob = 1.0;
        let mut avg = vec![0.0; n];
        for &i in &idx {
            prob *= atoms[i].1;
            for k in 0..n {
                avg[k] += centered[i][k] / m as f64;
            }
        }
        let sq: f64 = avg.iter().map(|v| v * v).sum();
        exact += prob * sq * sq;
        let mut pos = 0;
        loop {
            if pos == m {
                let coord4: f64 = (0..n)
                    .map(|k| atoms.iter().zip(&centered).map(|((_, p), c)| p * c[k].powi(4)).sum::<f64>())
                    .sum();
                let bound = 6.0 * n as f64 / (m * m) as f64 * coord4;
                return Ok(MomentOracle { exact, bound });
            }
            idx[pos] += 1;
            if idx[pos] < a {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentCell {
    pub n: usize,
    pub m: usize,
    /// `(E‖(A − A∞)θ*_n‖⁴)^{1/2}`
    pub a_moment: f64,
    /// `(E‖b − b∞‖⁴)^{1/2}`
    pub b_moment: f64,
    pub a_normalized: f64,
    pub b_normalized: f64,
}

/// Monte Carlo fourth moments of the normal matrix and vector around their
/// limits, for a truth `Σ_l θ*_l ψ_l` in `basis`.
#[allow(clippy::too_many_arguments)]
pub fn normal_vector_moment_scaling(
    config: &SystemConfig,
    basis: &std::sync::Arc<BasisFamily>,
    truth: &[f64],
    n_list: &[usize],
    m_list: &[usize],
    reps: usize,
    tree: &SeedTree,
    grid: &QuadratureGrid,
) -> Result<Vec<MomentCell>> {
    let n_max = *n_list.iter().max().ok_or_else(|| Error::Config("empty n list".into()))?;
    if reps == 0 || m_list.is_empty() {
        return Err(Error::Config("need replicates and at least one M".into()));
    }
    let np = config.n_particles;
    let limit = asymptotic_normal_system(basis, n_max, np, truth, grid)?;
    let kernel = Kernel::expansion(truth.to_vec(), basis.clone())?;
    let mut cells = Vec::new();
    for (mi, &m) in m_list.iter().enumerate() {
        let mut cfg = config.clone();
        cfg.n_samples = m;
        let sub = tree.child(mi as u64);
        let draws: Vec<(Vec<f64>, Vec<f64>)> = (0..reps)
            .into_par_iter()
            .map(|rep| -> Result<(Vec<f64>, Vec<f64>)> {
                let data = generate(&cfg, &kernel, None, &replicate_tree(&sub, rep))?;
                let sys = assemble(&data, basis, n_max)?;
                let mut a_dev = Vec::with_capacity(n_list.len());
                let mut b_dev = Vec::with_capacity(n_list.len());
                for &n in n_list {
                    let theta = DVector::from_fn(n, |k, _| truth.get(k).copied().unwrap_or(0.0));
                    let da = sys.a.view((0, 0), (n, n)) - limit.a_inf.view((0, 0), (n, n));
                    a_dev.push((da * theta).norm_squared().powi(2));
                    let db = sys.b.rows(0, n) - limit.b_inf.rows(0, n);
                    b_dev.push(db.norm_squared().powi(2));
                }
                Ok((a_dev, b_dev))
            })
            .collect::<Result<_>>()?;
        for (j, &n) in n_list.iter().enumerate() {
            let a4 = draws.iter().map(|d| d.0[j]).sum::<f64>() / reps as f64;
            let b4 = draws.iter().map(|d| d.1[j]).sum::<f64>() / reps as f64;
            let scale = m as f64 / n as f64;
            cells.push(MomentCell {
                n,
                m,
                a_moment: a4.sqrt(),
                b_moment: b4.sqrt(),
                a_normalized: a4.sqrt() * scale,
                b_normalized: b4.sqrt() * scale,
            });
        }
    }
    Ok(cells)
}
