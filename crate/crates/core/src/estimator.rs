//! Normal-system assembly, the tamed LSE and baseline regularized solvers,
//! the dimension rule, and `L²_ρ` risk.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::basis::BasisFamily;
use crate::error::{Error, Result};
use crate::kernels::Radial;
use crate::quadrature::QuadratureGrid;
use crate::sim::{pair_direction, Dataset, COINCIDENT_TOL};

/// Samples per assembly work item. Fixed so that the reduction order never
/// depends on the thread count.
const CHUNK: usize = 256;

pub const DEFAULT_RANK_TOL: f64 = 1e-10;
const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct NormalSystem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub n: usize,
    pub n_samples: usize,
    pub n_particles: usize,
    pub lambda_min: f64,
    pub basis_id: String,
    pub checksum: String,
}

impl NormalSystem {
    /// Builds a system from explicit parts, computing `λ_min` and the checksum.
    pub fn from_parts(
        a: DMatrix<f64>,
        b: DVector<f64>,
        n_samples: usize,
        n_particles: usize,
        basis_id: impl Into<String>,
    ) -> Result<Self> {
        if !a.is_square() || a.nrows() != b.len() {
            return Err(Error::Contract(format!(
                "normal matrix {}x{} does not match vector of length {}",
                a.nrows(),
                a.ncols(),
                b.len()
            )));
        }
        let lambda_min = smallest_eigenvalue(&a)?;
        let checksum = checksum(&a, &b);
        Ok(Self {
            n: b.len(),
            a,
            b,
            n_samples,
            n_particles,
            lambda_min,
            basis_id: basis_id.into(),
            checksum,
        })
    }

    /// Leading `n × n` block and first `n` entries.
    pub fn truncate(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.n {
            return Err(Error::Precondition(format!("cannot truncate size {} to {n}", self.n)));
        }
        Self::from_parts(
            self.a.view((0, 0), (n, n)).into_owned(),
            self.b.rows(0, n).into_owned(),
            self.n_samples,
            self.n_particles,
            self.basis_id.clone(),
        )
    }
}

fn checksum(a: &DMatrix<f64>, b: &DVector<f64>) -> String {
    let mut h = Sha256::new();
    for v in a.iter().chain(b.iter()) {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Rows of `R_{ψ_k}[X]` for one configuration: `out[(i·d + c)·n + k]`.
pub fn design_rows(basis: &BasisFamily, x: &[f64], n_particles: usize, d: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(out.len(), n_particles * d * n);
    out.iter_mut().for_each(|v| *v = 0.0);
    let inv_n = 1.0 / n_particles as f64;
    let mut u = vec![0.0; d];
    let mut psi = vec![0.0; n];
    for i in 0..n_particles {
        for j in i + 1..n_particles {
            let r = pair_direction(x, i, j, d, &mut u);
            if r < COINCIDENT_TOL {
                continue;
            }
            if basis.is_local() {
                let Some((k, v)) = basis.local_value(r) else {
                    continue;
                };
                if k >= n {
                    continue;
                }
                for c in 0..d {
                    let f = v * u[c] * inv_n;
                    out[(i * d + c) * n + k] += f;
                    out[(j * d + c) * n + k] -= f;
                }
            } else {
                basis.eval_into(r, &mut psi);
                for (c, uc) in u.iter().enumerate() {
                    let s = uc * inv_n;
                    let (ri, rj) = ((i * d + c) * n, (j * d + c) * n);
                    for k in 0..n {
                        let f = psi[k] * s;
                        out[ri + k] += f;
                        out[rj + k] -= f;
                    }
                }
            }
        }
    }
}

/// Unnormalized `Σ ΦᵀΦ` (upper triangle) and `Σ Φᵀy` for one block of rows.
fn accumulate(rows: &[f64], y: &[f64], n: usize, a: &mut [f64], b: &mut [f64], nz: &mut Vec<usize>) {
    for (row, &yv) in rows.chunks(n).zip(y) {
        nz.clear();
        nz.extend((0..n).filter(|&k| row[k] != 0.0));
        for (p, &k) in nz.iter().enumerate() {
            let rk = row[k];
            b[k] += rk * yv;
            for &l in &nz[p..] {
                a[k * n + l] += rk * row[l];
            }
        }
    }
}

struct Partial {
    a: Vec<f64>,
    b: Vec<f64>,
}

fn tree_sum(mut parts: Vec<Partial>) -> Partial {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut left) = it.next() {
            if let Some(right) = it.next() {
                left.a.iter_mut().zip(&right.a).for_each(|(x, y)| *x += y);
                left.b.iter_mut().zip(&right.b).for_each(|(x, y)| *x += y);
            }
            next.push(left);
        }
        parts = next;
    }
    parts.pop().expect("at least one partial")
}

fn finish_system(sum: Partial, n: usize, m: usize, n_particles: usize, basis_id: &str) -> Result<NormalSystem> {
    let scale = 1.0 / (m * n_particles) as f64;
    let mut a = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        for l in k..n {
            let v = sum.a[k * n + l] * scale;
            a[(k, l)] = v;
            a[(l, k)] = v;
        }
    }
    let b = DVector::from_iterator(n, sum.b.iter().map(|v| v * scale));
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite entry during assembly".into()));
    }
    NormalSystem::from_parts(a, b, m, n_particles, basis_id)
}

/// `A = (1/MN) Σ_m Φ_mᵀΦ_m`, `b = (1/MN) Σ_m Φ_mᵀY^m`.
pub fn assemble(dataset: &Dataset, basis: &BasisFamily, n: usize) -> Result<NormalSystem> {
    if n == 0 || n > basis.n() {
        return Err(Error::Precondition(format!(
            "requested n = {n} but the basis has {} functions",
            basis.n()
        )));
    }
    let m = dataset.n_samples();
    if m == 0 {
        return Err(Error::Precondition("empty dataset".into()));
    }
    let (np, d) = (dataset.n_particles(), dataset.dim());
    let stride = np * d;
    let chunks: Vec<usize> = (0..m.div_ceil(CHUNK)).collect();
    let parts: Vec<Partial> = chunks
        .par_iter()
        .map(|&c| {
            let mut part = Partial {
                a: vec![0.0; n * n],
                b: vec![0.0; n],
            };
            let mut rows = vec![0.0; stride * n];
            let mut nz = Vec::with_capacity(n);
            for s in c * CHUNK..((c + 1) * CHUNK).min(m) {
                design_rows(basis, dataset.positions(s), np, d, n, &mut rows);
                accumulate(&rows, dataset.observations(s), n, &mut part.a, &mut part.b, &mut nz);
            }
            part
        })
        .collect();
    finish_system(tree_sum(parts), n, m, np, basis.id())
}

/// Design rows of every sample, for experiments that reuse positions.
#[derive(Debug, Clone)]
pub struct Design {
    pub rows: Vec<f64>,
    pub n: usize,
    pub n_samples: usize,
    pub n_particles: usize,
    pub dim: usize,
    pub basis_id: String,
}

impl Design {
    pub fn new(dataset: &Dataset, basis: &BasisFamily, n: usize) -> Result<Self> {
        if n == 0 || n > basis.n() {
            return Err(Error::Precondition(format!("n = {n} exceeds basis size {}", basis.n())));
        }
        let (np, d) = (dataset.n_particles(), dataset.dim());
        let stride = np * d;
        let mut rows = vec![0.0; dataset.n_samples() * stride * n];
        rows.par_chunks_mut(stride * n)
            .enumerate()
            .for_each(|(s, out)| design_rows(basis, dataset.positions(s), np, d, n, out));
        Ok(Self {
            rows,
            n,
            n_samples: dataset.n_samples(),
            n_particles: np,
            dim: d,
            basis_id: basis.id().to_string(),
        })
    }

    /// Normal system for observations `y` (same layout as `Dataset::y`).
    pub fn system(&self, y: &[f64]) -> Result<NormalSystem> {
        let n = self.n;
        let stride = self.n_particles * self.dim;
        let m = self.n_samples;
        let chunks: Vec<usize> = (0..m.div_ceil(CHUNK)).collect();
        let parts: Vec<Partial> = chunks
            .par_iter()
            .map(|&c| {
                let mut part = Partial {
                    a: vec![0.0; n * n],
                    b: vec![0.0; n],
                };
                let mut nz = Vec::with_capacity(n);
                let (s0, s1) = (c * CHUNK, ((c + 1) * CHUNK).min(m));
                accumulate(
                    &self.rows[s0 * stride * n..s1 * stride * n],
                    &y[s0 * stride..s1 * stride],
                    n,
                    &mut part.a,
                    &mut part.b,
                    &mut nz,
                );
                part
            })
            .collect();
        finish_system(tree_sum(parts), n, m, self.n_particles, &self.basis_id)
    }

    /// `b` only, for a fixed `A`.
    pub fn normal_vector(&self, y: &[f64]) -> DVector<f64> {
        let n = self.n;
        let mut b = DVector::zeros(n);
        for (row, &yv) in self.rows.chunks(n).zip(y) {
            if yv == 0.0 {
                continue;
            }
            for k in 0..n {
                b[k] += row[k] * yv;
            }
        }
        b / (self.n_samples * self.n_particles) as f64
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn smallest_eigenvalue(a: &DMatrix<f64>) -> Result<f64> {
    check_symmetric(a)?;
    if a.nrows() == 0 {
        return Err(Error::Contract("empty matrix".into()));
    }
    Ok(SymmetricEigen::new(a.clone()).eigenvalues.min())
}

fn check_symmetric(a: &DMatrix<f64>) -> Result<()> {
    if !a.is_square() {
        return Err(Error::Contract("matrix is not square".into()));
    }
    let asym = (a - a.transpose()).amax();
    if asym > SYMMETRY_TOL {
        return Err(Error::Contract(format!("matrix asymmetric by {asym:.3e}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "estimator", rename_all = "snake_case")]
pub enum EstimatorKind {
    Tlse { threshold: f64 },
    Lse { rank_tol: f64 },
    Tikhonov { lambda: f64 },
    Tsvd { cut: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub coefficients: Vec<f64>,
    pub gated: bool,
    pub kind: EstimatorKind,
    pub lambda_min: f64,
    /// `‖Aθ̂ − b‖₂`
    pub residual: f64,
}

fn solve_residual(system: &NormalSystem, theta: &DVector<f64>) -> f64 {
    (&system.a * theta - &system.b).norm()
}

fn result(system: &NormalSystem, theta: DVector<f64>, gated: bool, kind: EstimatorKind) -> EstimateResult {
    EstimateResult {
        residual: solve_residual(system, &theta),
        coefficients: theta.iter().copied().collect(),
        gated,
        kind,
        lambda_min: system.lambda_min,
    }
}

/// Tamed LSE: zero when `λ_min(A) ≤ threshold`, otherwise `A⁻¹b`.
pub fn tlse(system: &NormalSystem, threshold: f64) -> Result<EstimateResult> {
    if !(threshold > 0.0) {
        return Err(Error::Precondition(format!("threshold must be positive, got {threshold}")));
    }
    let kind = EstimatorKind::Tlse { threshold };
    if system.lambda_min <= threshold {
        return Ok(result(system, DVector::zeros(system.n), true, kind));
    }
    let chol = system.a.clone().cholesky().ok_or_else(|| {
        Error::Numerical(format!(
            "Cholesky failed with lambda_min = {:.3e} above threshold {threshold:.3e}",
            system.lambda_min
        ))
    })?;
    let mut theta = chol.solve(&system.b);
    let r = &system.b - &system.a * &theta;
    theta += chol.solve(&r);
    Ok(result(system, theta, false, kind))
}

/// Pseudo-inverse solve with singular values below `rel_tol · σ_max` dropped.
fn pinv_solve(system: &NormalSystem, rel_tol: f64) -> DVector<f64> {
    let eig = SymmetricEigen::new(system.a.clone());
    let smax = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut theta = DVector::zeros(system.n);
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam.abs() > rel_tol * smax && lam.abs() > 0.0 {
            let v = eig.eigenvectors.column(i);
            theta += v * (v.dot(&system.b) / lam);
        }
    }
    theta
}

/// Moore–Penrose solution `A†b`.
pub fn lse(system: &NormalSystem, rank_tol: f64) -> Result<EstimateResult> {
    if !(rank_tol > 0.0 && rank_tol < 1.0) {
        return Err(Error::Precondition(format!("rank_tol must lie in (0, 1), got {rank_tol}")));
    }
    let theta = pinv_solve(system, rank_tol);
    Ok(result(system, theta, false, EstimatorKind::Lse { rank_tol }))
}

/// Truncated SVD at relative cut.
pub fn tsvd(system: &NormalSystem, cut: f64) -> Result<EstimateResult> {
    if !(cut > 0.0 && cut < 1.0) {
        return Err(Error::Precondition(format!("cut must lie in (0, 1), got {cut}")));
    }
    let theta = pinv_solve(system, cut);
    Ok(result(system, theta, false, EstimatorKind::Tsvd { cut }))
}

/// `(A + λI)θ̂ = b`.
pub fn tikhonov(system: &NormalSystem, lambda: f64) -> Result<EstimateResult> {
    if !(lambda > 0.0) {
        return Err(Error::Precondition(format!("lambda must be positive, got {lambda}")));
    }
    let reg = &system.a + DMatrix::identity(system.n, system.n) * lambda;
    let chol = reg
        .cholesky()
        .ok_or_else(|| Error::Numerical("regularized matrix not positive definite".into()))?;
    let theta = chol.solve(&system.b);
    Ok(result(system, theta, false, EstimatorKind::Tikhonov { lambda }))
}

pub fn estimate(system: &NormalSystem, kind: EstimatorKind) -> Result<EstimateResult> {
    match kind {
        EstimatorKind::Tlse { threshold } => tlse(system, threshold),
        EstimatorKind::Lse { rank_tol } => lse(system, rank_tol),
        EstimatorKind::Tikhonov { lambda } => tikhonov(system, lambda),
        EstimatorKind::Tsvd { cut } => tsvd(system, cut),
    }
}

/// `n = max(1, ⌊γ M^{1/(2β+1)}⌋)`.
pub fn choose_dimension(m: usize, beta: f64, gamma: f64) -> Result<usize> {
    if m == 0 || !(beta > 0.0) || !(gamma > 0.0) {
        return Err(Error::Domain(format!(
            "choose_dimension needs M >= 1, beta > 0, gamma > 0 (got {m}, {beta}, {gamma})"
        )));
    }
    let x = gamma * (m as f64).powf(1.0 / (2.0 * beta + 1.0));
    // exact powers such as 512^(1/3) round to just below the integer
    let n = (x + 1e-9 * x.max(1.0)).floor();
    Ok((n as usize).max(1))
}

/// Coefficients of a truth kernel in a basis, with its total `L²_ρ` energy on
/// the basis interval.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthProjection {
    pub coefficients: Vec<f64>,
    pub norm_sq: f64,
}

impl TruthProjection {
    /// A truth given directly as coefficients in the basis.
    pub fn from_coefficients(coefficients: Vec<f64>) -> Self {
        let norm_sq = coefficients.iter().map(|c| c * c).sum();
        Self {
            coefficients,
            norm_sq,
        }
    }

    /// Projects `truth` on the first `k_max` basis functions by quadrature.
    pub fn by_quadrature<K: Radial + ?Sized>(
        truth: &K,
        basis: &BasisFamily,
        k_max: usize,
        grid: &QuadratureGrid,
    ) -> Self {
        let k_max = k_max.min(basis.n());
        let mut coefficients = vec![0.0; k_max];
        let mut norm_sq = 0.0;
        let mut buf = vec![0.0; k_max];
        for (&r, &w) in grid.nodes.iter().zip(&grid.weights) {
            let f = truth.value(r);
            let wr = w * basis.model().density(r);
            norm_sq += wr * f * f;
            basis.eval_into(r, &mut buf);
            for (c, p) in coefficients.iter_mut().zip(&buf) {
                *c += wr * f * p;
            }
        }
        Self {
            coefficients,
            norm_sq,
        }
    }

    /// `Σ_{k>n} θ_k²`, computed as the energy not captured by the first `n` modes.
    pub fn tail(&self, n: usize) -> f64 {
        let head: f64 = self.coefficients.iter().take(n).map(|c| c * c).sum();
        (self.norm_sq - head).max(0.0)
    }
}

/// `‖θ̂ − θ*_{1:n}‖² + Σ_{k>n} θ*_k²`.
pub fn l2rho_risk(result: &EstimateResult, truth: &TruthProjection) -> f64 {
    let n = result.coefficients.len();
    let mut err = 0.0;
    for k in 0..n {
        let t = truth.coefficients.get(k).copied().unwrap_or(0.0);
        err += (result.coefficients[k] - t).powi(2);
    }
    err + truth.tail(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{BasisFamily, Seed};
    use crate::kernels::Kernel;
    use crate::measure::DensityModel;
    use crate::rng::SeedTree;
    use crate::sim::{generate, NoiseLaw, SystemConfig};
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn constant_basis() -> BasisFamily {
        BasisFamily::poly(1, &DensityModel::AnalyticUniformPair, 0.0, 1.0).unwrap()
    }

    fn system(a: &[f64], b: &[f64]) -> NormalSystem {
        let n = b.len();
        NormalSystem::from_parts(
            DMatrix::from_row_slice(n, n, a),
            DVector::from_column_slice(b),
            1,
            3,
            "test",
        )
        .unwrap()
    }

    #[test]
    fn single_sample_gram_by_hand() {
        let cfg = SystemConfig::uniform(3, 1, NoiseLaw::None, 0);
        let d = Dataset::from_parts(cfg, None, vec![0.0, 0.5, 1.0], vec![0.0; 3]).unwrap();
        let s = assemble(&d, &constant_basis(), 1).unwrap();
        assert_abs_diff_eq!(s.a[(0, 0)], 8.0 / 27.0, epsilon = 1e-15);
        assert_eq!(s.b[0], 0.0);
    }

    #[test]
    fn assembly_is_linear_in_y_and_psd() {
        let cfg = SystemConfig::uniform(4, 600, NoiseLaw::Gaussian { sigma: 0.1 }, 1);
        let basis = BasisFamily::poly(6, &DensityModel::AnalyticUniformPair, 0.0, 0.95).unwrap();
        let d = generate(&cfg, &|r: f64| r.sin(), None, &SeedTree::new(5)).unwrap();
        let s1 = assemble(&d, &basis, 6).unwrap();
        let y2: Vec<f64> = d.y().iter().map(|v| 2.0 * v).collect();
        let s2 = assemble(&d.with_observations(y2).unwrap(), &basis, 6).unwrap();
        assert_eq!(s1.a, s2.a);
        assert_eq!(&s1.b * 2.0, s2.b);
        assert!(s1.lambda_min >= -1e-10);
        assert!((&s1.a - s1.a.transpose()).amax() == 0.0);

        let design = Design::new(&d, &basis, 6).unwrap();
        let s3 = design.system(d.y()).unwrap();
        assert_eq!(s3.a, s1.a);
        assert_eq!(s3.checksum, s1.checksum);
        assert!((design.normal_vector(d.y()) - &s1.b).amax() < 1e-15);
    }

    #[test]
    fn zero_truth_noiseless_gives_zero_b() {
        let cfg = SystemConfig::uniform(3, 50, NoiseLaw::None, 2);
        let basis = BasisFamily::haar(8, &DensityModel::AnalyticUniformPair, 0.0, 0.95).unwrap();
        let d = generate(&cfg, &|_: f64| 0.0, None, &SeedTree::new(1)).unwrap();
        let s = assemble(&d, &basis, 8).unwrap();
        assert!(s.b.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn local_and_dense_paths_agree() {
        let cfg = SystemConfig::uniform(5, 300, NoiseLaw::Gaussian { sigma: 0.1 }, 2);
        let model = DensityModel::AnalyticUniformPair;
        let haar = BasisFamily::haar(6, &model, 0.0, 0.95).unwrap();
        let grid = crate::quadrature::QuadratureGrid::on_breakpoints(
            &(0..=6).map(|k| 0.95 * k as f64 / 6.0).collect::<Vec<_>>(),
            4,
        );
        let seeds: Vec<Seed> = (0..6)
            .map(|k| {
                let (a, c) = (0.95 * k as f64 / 6.0, 0.95 * (k + 1) as f64 / 6.0);
                let last = k == 5;
                Arc::new(move |r: f64| if r >= a && (r < c || (last && r <= c)) { 1.0 } else { 0.0 }) as Seed
            })
            .collect();
        let dense = BasisFamily::gram_schmidt(seeds, &model, &grid).unwrap();
        let d = generate(&cfg, &|r: f64| 1.0 - r, None, &SeedTree::new(3)).unwrap();
        let s1 = assemble(&d, &haar, 6).unwrap();
        let s2 = assemble(&d, &dense, 6).unwrap();
        assert!((s1.a - s2.a).amax() < 1e-12);
        assert!((s1.b - s2.b).amax() < 1e-12);
    }

    #[test]
    fn eigenvalue_basics() {
        assert_eq!(smallest_eigenvalue(&DMatrix::identity(3, 3)).unwrap(), 1.0);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5]));
        assert_abs_diff_eq!(smallest_eigenvalue(&d).unwrap(), 0.5, epsilon = 1e-15);
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(matches!(smallest_eigenvalue(&asym), Err(Error::Contract(_))));
    }

    #[test]
    fn tlse_semantics() {
        let s = system(&[1.0, 0.0, 0.0, 0.0], &[1.0, 1.0]);
        let r = tlse(&s, 0.05).unwrap();
        assert!(r.gated);
        assert_eq!(r.coefficients, vec![0.0, 0.0]);
        let s = system(&[1.0, 0.0, 0.0, 1.0], &[0.3, -2.0]);
        let r = tlse(&s, 0.05).unwrap();
        assert!(!r.gated);
        assert_abs_diff_eq!(r.coefficients[0], 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(r.coefficients[1], -2.0, epsilon = 1e-15);
        assert!(matches!(tlse(&s, 0.0), Err(Error::Precondition(_))));
    }

    #[test]
    fn lse_and_regularizers() {
        let s = system(&[1.0, 0.0, 0.0, 0.0], &[1.0, 1.0]);
        let r = lse(&s, DEFAULT_RANK_TOL).unwrap();
        assert_abs_diff_eq!(r.coefficients[0], 1.0, epsilon = 1e-15);
        assert_eq!(r.coefficients[1], 0.0);
        let s = system(&[1.0, 0.0, 0.0, 1.0], &[0.4, 1.0]);
        let r = tikhonov(&s, 1.0).unwrap();
        assert_abs_diff_eq!(r.coefficients[0], 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(r.coefficients[1], 0.5, epsilon = 1e-15);
        let s = system(&[2.0, 0.5, 0.5, 1.0], &[1.0, -1.0]);
        let direct = s.a.clone().lu().solve(&s.b).unwrap();
        let t = tikhonov(&s, 1e-12).unwrap();
        assert!((DVector::from_vec(t.coefficients) - &direct).amax() < 1e-10);
        let a = tsvd(&s, 1e-6).unwrap();
        let b = lse(&s, 1e-6).unwrap();
        assert_eq!(a.coefficients, b.coefficients);
        assert!(tsvd(&s, 1.0).is_err());
        assert!(tikhonov(&s, 0.0).is_err());
    }

    #[test]
    fn dimension_rule() {
        assert_eq!(choose_dimension(1000, 1.0, 1.0).unwrap(), 10);
        assert_eq!(choose_dimension(512, 1.0, 1.0).unwrap(), 8);
        assert_eq!(choose_dimension(1, 1.0, 1.0).unwrap(), 1);
        assert_eq!(choose_dimension(1 << 20, 1e9, 2.5).unwrap(), 2);
        assert_eq!(choose_dimension(100, 1.0, 0.01).unwrap(), 1);
        assert!(choose_dimension(0, 1.0, 1.0).is_err());
    }

    #[test]
    fn risk_against_direct_quadrature() {
        let model = DensityModel::AnalyticUniformPair;
        let basis = Arc::new(BasisFamily::poly(40, &model, 0.0, 0.95).unwrap());
        let grid = QuadratureGrid::composite(0.0, 0.95, 64, 16);
        let truth = |r: f64| (3.0 * r).cos() + r * r;
        let proj = TruthProjection::by_quadrature(&truth, &basis, 40, &grid);
        let est = EstimateResult {
            coefficients: vec![0.7, -0.2, 0.1, 0.05],
            gated: false,
            kind: EstimatorKind::Lse { rank_tol: 1e-10 },
            lambda_min: 1.0,
            residual: 0.0,
        };
        let fitted = Kernel::expansion(est.coefficients.clone(), basis.clone()).unwrap();
        let direct = grid.integrate(|r| (fitted.value(r) - truth(r)).powi(2) * model.density(r));
        assert_abs_diff_eq!(l2rho_risk(&est, &proj), direct, epsilon = 1e-6);

        let gated = EstimateResult {
            coefficients: vec![0.0; 4],
            gated: true,
            ..est
        };
        assert_abs_diff_eq!(l2rho_risk(&gated, &proj), proj.norm_sq, epsilon = 1e-12);
        let exact = TruthProjection::from_coefficients(vec![1.0, 2.0]);
        let hit = EstimateResult {
            coefficients: vec![1.0, 2.0],
            ..gated
        };
        assert_eq!(l2rho_risk(&hit, &exact), 0.0);
    }
}
