//! Fano–Tsybakov lower-bound construction: disjoint intervals, bump
//! hypotheses indexed by a Varshamov–Gilbert codebook, their certificates, and
//! the minimum-distance test experiment.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BasisFamily;
use crate::error::{Error, Result};
use crate::estimator::Design;
use crate::kernels::{bump, holder_check, BumpTerm, Radial, RadialKernel};
use crate::measure::DensityModel;
use crate::quadrature::QuadratureGrid;
use crate::rng::{keys, SeedTree};
use crate::sim::{forward_into, observe, Dataset, NoiseLaw};
use crate::theory::replicate_tree;

pub const DEFAULT_CODEBOOK_TRIES: u64 = 1_000_000;
/// KL budget targeted by the amplitude scaling; certification requires `α < 1/8`.
pub const TARGET_ALPHA: f64 = 1.0 / 9.0;
const HOLDER_POINTS: usize = 2048;
const SUBPANELS: usize = 8;
const PANEL_ORDER: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalPack {
    pub centers: Vec<f64>,
    pub halfwidth: f64,
    pub floor: f64,
    /// High-density region the intervals were placed in.
    pub region: (f64, f64),
}

impl IntervalPack {
    pub fn count(&self) -> usize {
        self.centers.len()
    }
}

fn high_density_region(model: &DensityModel, floor: f64) -> Result<(f64, f64)> {
    let regions = model.high_density_intervals(floor);
    match regions.len() {
        0 => Err(Error::Domain(format!("density never exceeds floor {floor}"))),
        1 => Ok(regions[0]),
        k => Err(Error::UnsupportedMeasure(format!(
            "high-density set splits into {k} intervals"
        ))),
    }
}

/// `K̄` equidistant intervals of halfwidth `h = span/(4K̄)` starting at the
/// left end of the high-density region.
pub fn build_intervals(model: &DensityModel, kbar: usize, floor: f64) -> Result<IntervalPack> {
    if kbar == 0 {
        return Err(Error::Precondition("need at least one interval".into()));
    }
    let (lo, hi) = high_density_region(model, floor)?;
    build_intervals_with_halfwidth(model, kbar, (hi - lo) / (4 * kbar) as f64, floor)
}

/// Intervals of a prescribed halfwidth; fails if `4K̄h` exceeds the region.
pub fn build_intervals_with_halfwidth(
    model: &DensityModel,
    kbar: usize,
    halfwidth: f64,
    floor: f64,
) -> Result<IntervalPack> {
    if kbar == 0 || !(halfwidth > 0.0) {
        return Err(Error::Precondition("need K̄ >= 1 and h > 0".into()));
    }
    let (lo, hi) = high_density_region(model, floor)?;
    let span = hi - lo;
    if 4.0 * kbar as f64 * halfwidth > span * (1.0 + 1e-12) {
        return Err(Error::Infeasible {
            reason: format!("{kbar} intervals of halfwidth {halfwidth} need length {}", 4.0 * kbar as f64 * halfwidth),
            max_feasible: (span / (4.0 * halfwidth)).floor() as usize,
        });
    }
    let centers: Vec<f64> = (1..=kbar)
        .map(|l| lo + (2 * l - 1) as f64 * halfwidth)
        .collect();
    for &c in &centers {
        for t in [-1.0, -0.5, 0.0, 0.5, 1.0] {
            let r = c + t * halfwidth;
            if model.density(r) < floor {
                return Err(Error::Contract(format!("density below floor at r = {r}")));
            }
        }
    }
    Ok(IntervalPack {
        centers,
        halfwidth,
        floor,
        region: (lo, hi),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Codebook {
    pub length: usize,
    /// `codewords[0]` is the zero word.
    pub codewords: Vec<Vec<u8>>,
    pub min_distance: usize,
}

impl Codebook {
    /// Number of codewords besides the zero word.
    pub fn k(&self) -> usize {
        self.codewords.len() - 1
    }
}

pub fn hamming(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Smallest pairwise Hamming distance, by checking every pair.
pub fn verify_codebook(codewords: &[Vec<u8>]) -> usize {
    let mut best = usize::MAX;
    for i in 0..codewords.len() {
        for j in i + 1..codewords.len() {
            best = best.min(hamming(&codewords[i], &codewords[j]));
        }
    }
    best
}

/// Randomized greedy search for `⌈2^{K̄/8}⌉` nonzero binary words of length
/// `K̄` at pairwise Hamming distance at least `⌈K̄/8⌉`, the zero word included.
pub fn varshamov_gilbert(kbar: usize, tree: &SeedTree, max_tries: u64) -> Result<Codebook> {
    if kbar < 8 {
        return Err(Error::Precondition(format!("need K̄ >= 8, got {kbar}")));
    }
    let needed = 2f64.powf(kbar as f64 / 8.0).ceil() as usize;
    let dmin = kbar.div_ceil(8);
    let mut rng = tree.child(keys::CODEBOOK).stream(kbar as u64);
    let mut words = vec![vec![0u8; kbar]];
    let mut tries = 0u64;
    while words.len() < needed + 1 {
        if tries == max_tries {
            return Err(Error::RetryExceeded {
                tries,
                found: words.len() - 1,
                needed,
            });
        }
        tries += 1;
        let cand: Vec<u8> = (0..kbar).map(|_| rng.random_range(0..2u8)).collect();
        if words.iter().all(|w| hamming(w, &cand) >= dmin) {
            words.push(cand);
        }
    }
    let min_distance = verify_codebook(&words);
    Ok(Codebook {
        length: kbar,
        codewords: words,
        min_distance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSet {
    pub pack: IntervalPack,
    pub codebook: Codebook,
    pub beta: f64,
    pub lipschitz: f64,
    /// Multiplier on the nominal bump amplitude `L h^β`.
    pub scale: f64,
    pub kernels: Vec<RadialKernel>,
    /// `∫ bump((r − r_ℓ)/h)² dρ` for each interval.
    pub interval_energy: Vec<f64>,
    pub min_distance: f64,
    /// Half the minimum pairwise `L²_ρ` distance.
    pub separation: f64,
    pub sigma: f64,
    /// `Nd/(2σ²)`
    pub c_eta: f64,
    pub n_particles: usize,
    pub dim: usize,
    pub alpha: Option<f64>,
    pub holder_quotient: f64,
}

impl HypothesisSet {
    pub fn amplitude(&self) -> f64 {
        self.scale * self.lipschitz * self.pack.halfwidth.powf(self.beta)
    }

    pub fn k(&self) -> usize {
        self.codebook.k()
    }

    pub fn kernel(&self, k: usize) -> crate::kernels::Kernel {
        self.kernels[k].standalone().expect("bump sums always resolve")
    }

    /// `‖φ_j − φ_k‖²_{L²_ρ}` from the interval energies.
    pub fn distance_sq(&self, j: usize, k: usize) -> f64 {
        let a = self.amplitude();
        a * a * self.codebook.codewords[j]
            .iter()
            .zip(&self.codebook.codewords[k])
            .zip(&self.interval_energy)
            .filter(|((x, y), _)| x != y)
            .map(|(_, e)| e)
            .sum::<f64>()
    }

    pub fn certified(&self) -> bool {
        matches!(self.alpha, Some(a) if a < 0.125) && self.min_distance >= 2.0 * self.separation
    }
}

/// Quadrature panels covering the bump supports `[r_ℓ − h/2, r_ℓ + h/2]`.
pub fn support_grid(pack: &IntervalPack) -> QuadratureGrid {
    let h = pack.halfwidth;
    let mut edges = Vec::new();
    for &c in &pack.centers {
        let (a, b) = (c - 0.5 * h, c + 0.5 * h);
        for s in 0..=SUBPANELS {
            let e = a + (b - a) * s as f64 / SUBPANELS as f64;
            if edges.last().is_none_or(|&l: &f64| e > l + 1e-15) {
                edges.push(e);
            }
        }
    }
    QuadratureGrid::on_breakpoints(&edges, PANEL_ORDER)
}

fn bump_kernels(pack: &IntervalPack, book: &Codebook, amplitude: f64) -> Vec<RadialKernel> {
    book.codewords
        .iter()
        .map(|w| RadialKernel::BumpSum {
            terms: w
                .iter()
                .zip(&pack.centers)
                .filter(|(bit, _)| **bit == 1)
                .map(|(_, &center)| BumpTerm {
                    center,
                    halfwidth: pack.halfwidth,
                    amplitude,
                })
                .collect(),
        })
        .collect()
}

/// Hypotheses `φ_k = Σ_ℓ ω^{(k)}_ℓ · scale · L h^β · bump((r − r_ℓ)/h)`.
#[allow(clippy::too_many_arguments)]
pub fn build_hypotheses(
    pack: &IntervalPack,
    book: &Codebook,
    beta: f64,
    lipschitz: f64,
    scale: f64,
    sigma: f64,
    n_particles: usize,
    dim: usize,
    model: &DensityModel,
) -> Result<HypothesisSet> {
    if book.length != pack.count() {
        return Err(Error::Config(format!(
            "codeword length {} does not match {} intervals",
            book.length,
            pack.count()
        )));
    }
    if !(beta > 0.0 && lipschitz > 0.0 && scale >= 0.0 && sigma > 0.0) {
        return Err(Error::Domain("need beta, L, sigma > 0 and scale >= 0".into()));
    }
    let h = pack.halfwidth;
    let amplitude = scale * lipschitz * h.powf(beta);
    let interval_energy: Vec<f64> = pack
        .centers
        .iter()
        .map(|&c| {
            let g = QuadratureGrid::composite(c - 0.5 * h, c + 0.5 * h, SUBPANELS, PANEL_ORDER);
            g.integrate(|r| bump((r - c) / h).powi(2) * model.density(r))
        })
        .collect();
    let kernels = bump_kernels(pack, book, amplitude);
    let mut set = HypothesisSet {
        pack: pack.clone(),
        codebook: book.clone(),
        beta,
        lipschitz,
        scale,
        kernels,
        interval_energy,
        min_distance: 0.0,
        separation: 0.0,
        sigma,
        c_eta: (n_particles * dim) as f64 / (2.0 * sigma * sigma),
        n_particles,
        dim,
        alpha: None,
        holder_quotient: 0.0,
    };
    let mut dmin = f64::INFINITY;
    for j in 0..set.kernels.len() {
        for k in j + 1..set.kernels.len() {
            dmin = dmin.min(set.distance_sq(j, k).sqrt());
        }
    }
    set.min_distance = dmin;
    set.separation = 0.5 * dmin;
    let (lo, hi) = holder_window(pack);
    let mut worst = 0.0f64;
    for k in 0..set.kernels.len() {
        let kernel = set.kernel(k);
        let rep = holder_check(&kernel, beta, lipschitz, lo, hi, HOLDER_POINTS)?;
        worst = worst.max(rep.max_quotient);
    }
    set.holder_quotient = worst;
    Ok(set)
}

fn holder_window(pack: &IntervalPack) -> (f64, f64) {
    let h = pack.halfwidth;
    (
        pack.centers[0] - h,
        pack.centers[pack.count() - 1] + h,
    )
}

/// `Q(ℓ, ℓ') = Σ_m ⟨R_{b_ℓ}[X^m], R_{b_ℓ'}[X^m]⟩` for unit-amplitude bumps `b_ℓ`.
fn bump_gram(pack: &IntervalPack, positions: &Dataset) -> DMatrix<f64> {
    let kbar = pack.count();
    let (n, d) = (positions.n_particles(), positions.dim());
    let stride = n * d;
    let h = pack.halfwidth;
    let per_sample: Vec<DMatrix<f64>> = (0..positions.n_samples())
        .into_par_iter()
        .map(|m| {
            let x = positions.positions(m);
            let mut rows = DMatrix::<f64>::zeros(stride, kbar);
            let mut out = vec![0.0; stride];
            for (l, &c) in pack.centers.iter().enumerate() {
                forward_into(&move |r: f64| bump((r - c) / h), x, n, d, &mut out);
                for (i, v) in out.iter().enumerate() {
                    rows[(i, l)] = *v;
                }
            }
            rows.tr_mul(&rows)
        })
        .collect();
    per_sample
        .into_iter()
        .fold(DMatrix::zeros(kbar, kbar), |acc, q| acc + q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlBudget {
    /// Upper bound on `KL(P_k, P_0)` for `k = 1..K`.
    pub per_k: Vec<f64>,
    pub average: f64,
    pub alpha: f64,
}

fn budget_from_gram(set: &HypothesisSet, q: &DMatrix<f64>) -> Result<KlBudget> {
    let k = set.k();
    if k <= 1 {
        return Err(Error::Precondition("α is undefined for K <= 1".into()));
    }
    let a = set.amplitude();
    let per_k: Vec<f64> = set.codebook.codewords[1..]
        .iter()
        .map(|w| {
            let v = nalgebra::DVector::from_iterator(w.len(), w.iter().map(|&b| b as f64));
            set.c_eta * a * a * (v.transpose() * q * &v)[(0, 0)]
        })
        .collect();
    let average = per_k.iter().sum::<f64>() / k as f64;
    Ok(KlBudget {
        alpha: average / (k as f64).ln(),
        per_k,
        average,
    })
}

/// `KL_k ≤ c_η Σ_m ‖R_{φ_k}[X^m]‖²` for Gaussian noise and fixed positions.
pub fn kl_budget(set: &HypothesisSet, positions: &Dataset) -> Result<KlBudget> {
    budget_from_gram(set, &bump_gram(&set.pack, positions))
}

/// Builds the hypotheses with the largest amplitude scale (at most 1) that
/// keeps `α ≤ target_alpha` and the grid Hölder quotient within `L`, then
/// records the KL certificate.
#[allow(clippy::too_many_arguments)]
pub fn certify_hypotheses(
    pack: &IntervalPack,
    book: &Codebook,
    beta: f64,
    lipschitz: f64,
    sigma: f64,
    positions: &Dataset,
    model: &DensityModel,
    target_alpha: f64,
) -> Result<HypothesisSet> {
    let (n, d) = (positions.n_particles(), positions.dim());
    let unit = build_hypotheses(pack, book, beta, lipschitz, 1.0, sigma, n, d, model)?;
    let q = bump_gram(pack, positions);
    let at_unit = budget_from_gram(&unit, &q)?;
    let mut scale = 1.0f64;
    if at_unit.alpha > 0.0 {
        // the budget is quadratic in the scale
        scale = scale.min((target_alpha / at_unit.alpha).sqrt());
    }
    if unit.holder_quotient > lipschitz {
        scale = scale.min(lipschitz / unit.holder_quotient);
    }
    let mut set = build_hypotheses(pack, book, beta, lipschitz, scale, sigma, n, d, model)?;
    set.alpha = Some(budget_from_gram(&set, &q)?.alpha);
    Ok(set)
}

/// Precomputed hypothesis values for repeated minimum-distance tests.
#[derive(Debug, Clone)]
pub struct MinDistanceTester {
    grid: QuadratureGrid,
    /// `w_q ρ(r_q) φ_k(r_q)` per hypothesis.
    weighted: Vec<Vec<f64>>,
    norms_sq: Vec<f64>,
}

impl MinDistanceTester {
    pub fn new(set: &HypothesisSet, model: &DensityModel) -> Self {
        let grid = support_grid(&set.pack);
        let weighted: Vec<Vec<f64>> = (0..set.kernels.len())
            .map(|k| {
                let kernel = set.kernel(k);
                grid.nodes
                    .iter()
                    .zip(&grid.weights)
                    .map(|(&r, &w)| w * model.density(r) * kernel.value(r))
                    .collect()
            })
            .collect();
        let norms_sq = (0..set.kernels.len())
            .map(|k| {
                let kernel = set.kernel(k);
                weighted[k].iter().zip(&grid.nodes).map(|(w, &r)| w * kernel.value(r)).sum()
            })
            .collect();
        Self {
            grid,
            weighted,
            norms_sq,
        }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.grid.nodes
    }

    /// Index minimizing `‖φ̂ − φ_k‖²` given `φ̂` at the tester's nodes; ties go to the smallest index.
    pub fn choose(&self, estimate: &[f64]) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (k, w) in self.weighted.iter().enumerate() {
            let cross: f64 = w.iter().zip(estimate).map(|(a, b)| a * b).sum();
            let score = self.norms_sq[k] - 2.0 * cross;
            if score < best.0 {
                best = (score, k);
            }
        }
        best.1
    }
}

/// `argmin_k ‖φ̂ − φ_k‖_{L²_ρ}` with ties broken by the smallest index.
pub fn min_distance_test<K: Radial + ?Sized>(estimate: &K, set: &HypothesisSet, model: &DensityModel) -> usize {
    let tester = MinDistanceTester::new(set, model);
    let vals: Vec<f64> = tester.nodes().iter().map(|&r| estimate.value(r)).collect();
    tester.choose(&vals)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FanoRecord {
    pub replicate: usize,
    pub truth: usize,
    pub chosen: usize,
    pub error: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FanoOutcome {
    pub records: Vec<FanoRecord>,
    pub error_rate: f64,
    pub std_error: f64,
    pub alpha: f64,
    pub floor: f64,
    pub gated: usize,
}

pub const CELLS_PER_INTERVAL: usize = 4;

/// Haar basis whose cells tile `[lo, lo + 4K̄h]` at width `2h/cells_per_interval`,
/// so each bump support is a union of cells when `cells_per_interval` is even.
pub fn fano_basis(pack: &IntervalPack, model: &DensityModel, cells_per_interval: usize) -> Result<BasisFamily> {
    let lo = pack.region.0;
    let hi = lo + 2.0 * pack.count() as f64 * pack.halfwidth;
    BasisFamily::haar(pack.count() * cells_per_interval.max(1), model, lo, hi)
}

/// `⌈M^{1/(2β+1)}⌉`
pub fn default_kbar(n_samples: usize, beta: f64) -> usize {
    (n_samples as f64).powf(1.0 / (2.0 * beta + 1.0)).ceil() as usize
}

/// Codebook, centers, halfwidth, amplitude, and certificates.
pub fn export_hypotheses_json(set: &HypothesisSet, path: &std::path::Path) -> Result<()> {
    let summary = serde_json::json!({
        "K": set.k(),
        "Kbar": set.pack.count(),
        "codewords": set.codebook.codewords,
        "min_hamming": set.codebook.min_distance,
        "centers": set.pack.centers,
        "h": set.pack.halfwidth,
        "amplitude": set.amplitude(),
        "scale": set.scale,
        "beta": set.beta,
        "L": set.lipschitz,
        "alpha": set.alpha,
        "min_distance": set.min_distance,
        "separation": set.separation,
        "holder_quotient": set.holder_quotient,
        "certified": set.certified(),
    });
    std::fs::write(path, serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}

/// One row per replicate: `(replicate, true_k, chosen_k, error)`.
pub fn export_fano_csv(outcome: &FanoOutcome, path: &std::path::Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["replicate", "true_k", "chosen_k", "error"])?;
    for r in &outcome.records {
        w.write_record([
            r.replicate.to_string(),
            r.truth.to_string(),
            r.chosen.to_string(),
            u8::from(r.error).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `(log(K+1) − log 2)/log K − α`
pub fn fano_floor(k: usize, alpha: f64) -> Result<f64> {
    if k <= 1 {
        return Err(Error::Precondition("the Fano floor needs K >= 2".into()));
    }
    let kf = k as f64;
    Ok(((kf + 1.0).ln() - 2f64.ln()) / kf.ln() - alpha)
}

/// Draws a hypothesis uniformly per replicate, simulates observations at the
/// fixed positions, fits the tLSE in `basis`, and applies the minimum-distance test.
pub fn fano_experiment(
    set: &HypothesisSet,
    positions: &Dataset,
    basis: &BasisFamily,
    threshold: f64,
    reps: usize,
    tree: &SeedTree,
) -> Result<FanoOutcome> {
    let alpha = set
        .alpha
        .ok_or_else(|| Error::Precondition("hypothesis set has no KL certificate".into()))?;
    if !set.certified() {
        return Err(Error::Precondition(format!("hypothesis set is not certified (α = {alpha})")));
    }
    let floor = fano_floor(set.k(), alpha)?;
    let mut config = positions.config.clone();
    config.noise = NoiseLaw::Gaussian { sigma: set.sigma };
    let n = basis.n();
    let design = Design::new(positions, basis, n)?;
    let zeros = vec![0.0; positions.y().len()];
    let base = design.system(&zeros)?;
    let chol = if base.lambda_min > threshold {
        Some(base.a.clone().cholesky().ok_or_else(|| {
            Error::Numerical("Cholesky failed above the gating threshold".into())
        })?)
    } else {
        None
    };
    let tester = MinDistanceTester::new(set, basis.model());
    let kernels: Vec<_> = (0..set.kernels.len()).map(|k| set.kernel(k)).collect();
    let records: Vec<FanoRecord> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let sub = replicate_tree(tree, rep);
            let truth = sub.child(keys::HYPOTHESIS).stream(0).random_range(0..kernels.len());
            let y = observe(&config, &kernels[truth], positions.x(), &sub);
            let chosen = match &chol {
                None => tester.choose(&vec![0.0; tester.nodes().len()]),
                Some(c) => {
                    let theta = c.solve(&design.normal_vector(&y));
                    let coeffs: Vec<f64> = theta.iter().copied().collect();
                    let vals: Vec<f64> = tester
                        .nodes()
                        .iter()
                        .map(|&r| basis.combination(&coeffs, r))
                        .collect();
                    tester.choose(&vals)
                }
            };
            FanoRecord {
                replicate: rep,
                truth,
                chosen,
                error: chosen != truth,
            }
        })
        .collect();
    let errors = records.iter().filter(|r| r.error).count();
    let p = errors as f64 / reps as f64;
    Ok(FanoOutcome {
        error_rate: p,
        std_error: (p * (1.0 - p) / reps as f64).sqrt(),
        alpha,
        floor,
        gated: if chol.is_none() { reps } else { 0 },
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn uniform() -> DensityModel {
        DensityModel::AnalyticUniformPair
    }

    #[test]
    fn intervals_for_uniform_pair() {
        let p = build_intervals(&uniform(), 8, 0.1).unwrap();
        assert_abs_diff_eq!(p.halfwidth, 0.95 / 32.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.centers[0], 0.95 / 32.0, epsilon = 1e-15);
        for w in p.centers.windows(2) {
            assert!(w[1] - w[0] >= 2.0 * p.halfwidth - 1e-15);
        }
        assert_eq!(build_intervals(&uniform(), 1, 0.1).unwrap().count(), 1);
        assert!(build_intervals(&uniform(), 4, 2.5).is_err());
        let err = build_intervals_with_halfwidth(&uniform(), 20, 0.05, 0.1).unwrap_err();
        assert!(matches!(err, Error::Infeasible { max_feasible: 4, .. }));
    }

    #[test]
    fn codebooks() {
        let tree = SeedTree::new(11);
        assert!(matches!(varshamov_gilbert(7, &tree, 10), Err(Error::Precondition(_))));
        let b8 = varshamov_gilbert(8, &tree, DEFAULT_CODEBOOK_TRIES).unwrap();
        assert!(b8.k() >= 2);
        assert!(verify_codebook(&b8.codewords) >= 1);
        let b16 = varshamov_gilbert(16, &tree, DEFAULT_CODEBOOK_TRIES).unwrap();
        assert!(b16.k() >= 4);
        assert!(verify_codebook(&b16.codewords) >= 2);
        assert!(b16.codewords[0].iter().all(|&b| b == 0));
        assert!(matches!(varshamov_gilbert(64, &tree, 3), Err(Error::RetryExceeded { .. })));
    }

    #[test]
    fn hypotheses_and_distances() {
        let pack = build_intervals(&uniform(), 8, 0.1).unwrap();
        let book = varshamov_gilbert(8, &SeedTree::new(2), DEFAULT_CODEBOOK_TRIES).unwrap();
        let set = build_hypotheses(&pack, &book, 1.0, 1.0, 0.5, 0.1, 3, 1, &uniform()).unwrap();
        assert!(set.kernel(0).is_zero());
        // one-slot difference against a direct quadrature of the bump
        let (c, h) = (pack.centers[2], pack.halfwidth);
        let g = QuadratureGrid::composite(c - h, c + h, 64, 16);
        let amp = set.amplitude();
        let direct = g.integrate(|r| (amp * bump((r - c) / h)).powi(2) * 2.0 * (1.0 - r));
        assert_abs_diff_eq!(amp * amp * set.interval_energy[2], direct, epsilon = 1e-14);
        // routine distance against quadrature of the difference
        let (kj, kk) = (set.kernel(1), set.kernel(2));
        let grid = support_grid(&pack);
        let diff = grid.integrate(|r| (kj.value(r) - kk.value(r)).powi(2) * 2.0 * (1.0 - r));
        assert_abs_diff_eq!(set.distance_sq(1, 2), diff, epsilon = 1e-14);
        assert!(set.min_distance >= 2.0 * set.separation);
    }

    #[test]
    fn min_distance_test_identifies_hypotheses() {
        let pack = build_intervals(&uniform(), 8, 0.1).unwrap();
        let book = varshamov_gilbert(8, &SeedTree::new(2), DEFAULT_CODEBOOK_TRIES).unwrap();
        let set = build_hypotheses(&pack, &book, 1.0, 1.0, 1.0, 0.1, 3, 1, &uniform()).unwrap();
        for k in 0..set.kernels.len() {
            assert_eq!(min_distance_test(&set.kernel(k), &set, &uniform()), k);
        }
        assert_eq!(min_distance_test(&|_: f64| 0.0, &set, &uniform()), 0);
    }

    #[test]
    fn fano_floor_values() {
        assert_abs_diff_eq!(fano_floor(2, 0.0).unwrap(), (1.5f64).ln() / 2f64.ln(), epsilon = 1e-15);
        assert!(fano_floor(1, 0.0).is_err());
    }
}
