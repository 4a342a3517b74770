//! Orthonormal bases of `L²_ρ` on the learning interval.
//!
//! Polynomial families are generated by the Stieltjes procedure: the
//! orthonormal polynomials are stored through their three-term recurrence
//! coefficients, which spans the same spaces as Gram–Schmidt on monomials but
//! stays well conditioned at high degree.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{DensityModel, DEFAULT_DENSITY_FLOOR};
use crate::quadrature::QuadratureGrid;

/// Number of equispaced nodes used for the sup-norm bound.
pub const CMAX_GRID: usize = 4096;

const EXTRA_ORDER: usize = 20;
const VERIFY_EXTRA_ORDER: usize = 37;
const DEPENDENCE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    WeightedTrig,
    GramSchmidtPoly,
    NormalizedHaar,
    Seeded,
}

impl BasisKind {
    fn tag(self) -> &'static str {
        match self {
            Self::WeightedTrig => "trig",
            Self::GramSchmidtPoly => "poly",
            Self::NormalizedHaar => "haar",
            Self::Seeded => "seeded",
        }
    }
}

pub type Seed = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Repr {
    Trig { scales: Vec<f64> },
    Recurrence { alpha: Vec<f64>, beta: Vec<f64>, head: f64 },
    Haar { edges: Vec<f64>, norms: Vec<f64> },
    Seeded { seeds: Vec<Seed>, coeffs: Vec<Vec<f64>> },
}

/// `n` orthonormal functions on `[lo, hi]`, zero outside.
#[derive(Clone)]
pub struct BasisFamily {
    kind: BasisKind,
    id: String,
    model: DensityModel,
    lo: f64,
    hi: f64,
    repr: Repr,
    cmax_prefix: Vec<f64>,
    residual: f64,
}

impl fmt::Debug for BasisFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BasisFamily")
            .field("id", &self.id)
            .field("n", &self.n())
            .field("cmax", &self.cmax())
            .field("residual", &self.residual)
            .finish()
    }
}

fn model_tag(model: &DensityModel) -> &'static str {
    match model {
        DensityModel::AnalyticUniformPair => "uniform_pair",
        DensityModel::Tabulated { .. } => "tabulated",
        DensityModel::Empirical { .. } => "empirical",
    }
}

fn check_interval(model: &DensityModel, lo: f64, hi: f64, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Config("basis size must be at least 1".into()));
    }
    if !(0.0 <= lo && lo < hi && hi <= 1.0) {
        return Err(Error::Domain(format!("interval [{lo}, {hi}] not inside [0, 1]")));
    }
    if model.mass(lo, hi) <= 0.0 {
        return Err(Error::Domain(format!("interval [{lo}, {hi}] carries no mass")));
    }
    Ok(())
}

/// Panels split at the model's breakpoints inside `[lo, hi]`.
fn breakpoint_grid(model: &DensityModel, lo: f64, hi: f64, order: usize) -> QuadratureGrid {
    let mut edges = vec![lo];
    edges.extend(model.breakpoints().into_iter().filter(|&b| b > lo && b < hi));
    edges.push(hi);
    edges.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
    QuadratureGrid::on_breakpoints(&edges, order)
}

impl BasisFamily {
    /// `ψ_k(x) ∝ √(2/ℓ) sin(kπ(x − lo)/ℓ)/√ρ(x)` with `ℓ = hi − lo`.
    pub fn weighted_trig(
        n: usize,
        model: &DensityModel,
        lo: f64,
        hi: f64,
        floor: f64,
    ) -> Result<Self> {
        check_interval(model, lo, hi, n)?;
        let probe = QuadratureGrid::composite(lo, hi, 64.max(n), 16);
        let equi = (0..CMAX_GRID).map(|i| lo + (hi - lo) * i as f64 / (CMAX_GRID - 1) as f64);
        for r in probe.nodes.iter().copied().chain(equi) {
            let density = model.density(r);
            if density < floor * (1.0 - 1e-12) {
                return Err(Error::UnboundedBasis { r, density, floor });
            }
        }
        let mut fam = Self {
            kind: BasisKind::WeightedTrig,
            id: String::new(),
            model: model.clone(),
            lo,
            hi,
            repr: Repr::Trig {
                scales: vec![1.0; n],
            },
            cmax_prefix: vec![],
            residual: 0.0,
        };
        let grid = breakpoint_grid(model, lo, hi, 16).refined_to(64.max(n));
        let gram = fam.gram_matrix(n, &grid);
        fam.repr = Repr::Trig {
            scales: (0..n).map(|k| 1.0 / gram[(k, k)].sqrt()).collect(),
        };
        fam.finish(&grid.refined())
    }

    /// Orthonormal polynomials of degree `0..n` by the discretized Stieltjes procedure.
    pub fn poly(n: usize, model: &DensityModel, lo: f64, hi: f64) -> Result<Self> {
        check_interval(model, lo, hi, n)?;
        let grid = breakpoint_grid(model, lo, hi, n + EXTRA_ORDER);
        let mu: Vec<f64> = grid
            .nodes
            .iter()
            .zip(&grid.weights)
            .map(|(&r, &w)| w * model.density(r))
            .collect();
        let x = &grid.nodes;
        let dot = |a: &[f64], b: &[f64]| -> f64 {
            a.iter().zip(b).zip(&mu).map(|((p, q), m)| p * q * m).sum()
        };
        let total: f64 = mu.iter().sum();
        let head = 1.0 / total.sqrt();
        let mut q: Vec<Vec<f64>> = vec![vec![head; x.len()]];
        let mut alpha = Vec::with_capacity(n);
        let mut beta = vec![0.0];
        for k in 0..n - 1 {
            let mut v: Vec<f64> = x.iter().zip(&q[k]).map(|(r, p)| r * p).collect();
            alpha.push(dot(&v, &q[k]));
            for _ in 0..2 {
                for qj in &q {
                    let c = dot(&v, qj);
                    v.iter_mut().zip(qj).for_each(|(a, b)| *a -= c * b);
                }
            }
            let norm = dot(&v, &v).sqrt();
            if norm < DEPENDENCE_TOL {
                return Err(Error::DependentSeeds { index: k + 1, norm });
            }
            beta.push(norm);
            v.iter_mut().for_each(|a| *a /= norm);
            q.push(v);
        }
        let fam = Self {
            kind: BasisKind::GramSchmidtPoly,
            id: String::new(),
            model: model.clone(),
            lo,
            hi,
            repr: Repr::Recurrence { alpha, beta, head },
            cmax_prefix: vec![],
            residual: 0.0,
        };
        let verify = breakpoint_grid(model, lo, hi, n + VERIFY_EXTRA_ORDER);
        fam.finish(&verify)
    }

    /// `1_{cell}/√ρ(cell)` on `n` equal-width cells of `[lo, hi]`.
    pub fn haar(n: usize, model: &DensityModel, lo: f64, hi: f64) -> Result<Self> {
        check_interval(model, lo, hi, n)?;
        let edges: Vec<f64> = (0..=n)
            .map(|k| lo + (hi - lo) * k as f64 / n as f64)
            .collect();
        let mut norms = Vec::with_capacity(n);
        for k in 0..n {
            let (a, b) = (edges[k], edges[k + 1]);
            let mass = model.mass(a, b);
            if mass <= 0.0 {
                return Err(Error::UnboundedBasis {
                    r: 0.5 * (a + b),
                    density: 0.0,
                    floor: 0.0,
                });
            }
            norms.push(1.0 / mass.sqrt());
        }
        let mut verify_edges = edges.clone();
        verify_edges.extend(model.breakpoints().into_iter().filter(|&b| b > lo && b < hi));
        verify_edges.sort_by(f64::total_cmp);
        verify_edges.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
        let fam = Self {
            kind: BasisKind::NormalizedHaar,
            id: String::new(),
            model: model.clone(),
            lo,
            hi,
            repr: Repr::Haar { edges, norms },
            cmax_prefix: vec![],
            residual: 0.0,
        };
        fam.finish(&QuadratureGrid::on_breakpoints(&verify_edges, 4))
    }

    /// Modified Gram–Schmidt (applied twice) of arbitrary seed functions under
    /// the quadrature inner product of `grid`.
    pub fn gram_schmidt(seeds: Vec<Seed>, model: &DensityModel, grid: &QuadratureGrid) -> Result<Self> {
        let n = seeds.len();
        check_interval(model, grid.lo, grid.hi, n)?;
        let mu: Vec<f64> = grid
            .nodes
            .iter()
            .zip(&grid.weights)
            .map(|(&r, &w)| w * model.density(r))
            .collect();
        let dot = |a: &[f64], b: &[f64]| -> f64 {
            a.iter().zip(b).zip(&mu).map(|((p, q), m)| p * q * m).sum()
        };
        let mut vals: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut coeffs: Vec<Vec<f64>> = Vec::with_capacity(n);
        for (k, seed) in seeds.iter().enumerate() {
            let mut v: Vec<f64> = grid.nodes.iter().map(|&r| seed(r)).collect();
            if v.iter().any(|a| !a.is_finite()) {
                return Err(Error::Numerical(format!("seed {k} is not finite on the grid")));
            }
            let start = dot(&v, &v).sqrt();
            let mut c = vec![0.0; n];
            c[k] = 1.0;
            for _ in 0..2 {
                for (qj, cj) in vals.iter().zip(&coeffs) {
                    let p = dot(&v, qj);
                    v.iter_mut().zip(qj).for_each(|(a, b)| *a -= p * b);
                    c.iter_mut().zip(cj).for_each(|(a, b)| *a -= p * b);
                }
            }
            let norm = dot(&v, &v).sqrt();
            if !(norm > DEPENDENCE_TOL * start.max(1.0)) {
                return Err(Error::DependentSeeds { index: k, norm });
            }
            v.iter_mut().for_each(|a| *a /= norm);
            c.iter_mut().for_each(|a| *a /= norm);
            vals.push(v);
            coeffs.push(c);
        }
        let fam = Self {
            kind: BasisKind::Seeded,
            id: String::new(),
            model: model.clone(),
            lo: grid.lo,
            hi: grid.hi,
            repr: Repr::Seeded { seeds, coeffs },
            cmax_prefix: vec![],
            residual: 0.0,
        };
        fam.finish(grid)
    }

    fn finish(mut self, verify: &QuadratureGrid) -> Result<Self> {
        let n = self.n();
        self.id = format!(
            "{}:n={}:[{},{}]:{}",
            self.kind.tag(),
            n,
            self.lo,
            self.hi,
            model_tag(&self.model)
        );
        let gram = self.gram_matrix(n, verify);
        self.residual = (&gram - DMatrix::identity(n, n)).amax();
        let mut running = vec![0.0f64; n];
        let mut buf = vec![0.0; n];
        for i in 0..CMAX_GRID {
            let r = self.lo + (self.hi - self.lo) * i as f64 / (CMAX_GRID - 1) as f64;
            self.eval_into(r, &mut buf);
            for (m, v) in running.iter_mut().zip(&buf) {
                *m = m.max(v.abs());
            }
        }
        for k in 1..n {
            running[k] = running[k].max(running[k - 1]);
        }
        if running.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("{} is not finite on the grid", self.id)));
        }
        self.cmax_prefix = running;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        match &self.repr {
            Repr::Trig { scales } => scales.len(),
            Repr::Recurrence { beta, .. } => beta.len(),
            Repr::Haar { norms, .. } => norms.len(),
            Repr::Seeded { seeds, .. } => seeds.len(),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn model(&self) -> &DensityModel {
        &self.model
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    /// Largest `|ψ_k|` over all `k` and the sup-norm grid.
    pub fn cmax(&self) -> f64 {
        *self.cmax_prefix.last().expect("nonempty family")
    }

    /// Sup-norm bound of the first `n` functions.
    pub fn cmax_prefix(&self, n: usize) -> f64 {
        self.cmax_prefix[n.clamp(1, self.n()) - 1]
    }

    /// `max_{j,k} |⟨ψ_j, ψ_k⟩ − δ_jk|` on the verification grid.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    /// Haar cells are disjoint, so at most one function is nonzero at any point.
    pub fn is_local(&self) -> bool {
        matches!(self.repr, Repr::Haar { .. })
    }

    /// For local families: the index and value of the one function nonzero at `r`.
    pub fn local_value(&self, r: f64) -> Option<(usize, f64)> {
        match &self.repr {
            Repr::Haar { edges, norms } => {
                if r < self.lo || r > self.hi {
                    return None;
                }
                let k = (edges.partition_point(|&e| e <= r).max(1) - 1).min(norms.len() - 1);
                Some((k, norms[k]))
            }
            _ => None,
        }
    }

    /// Fills `out[k] = ψ_k(r)` for `k < out.len()`.
    pub fn eval_into(&self, r: f64, out: &mut [f64]) {
        let n = out.len();
        debug_assert!(n <= self.n());
        if r < self.lo || r > self.hi {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        match &self.repr {
            Repr::Trig { scales } => {
                let width = self.hi - self.lo;
                let env = (2.0 / width).sqrt() / self.model.density(r).sqrt();
                let t = std::f64::consts::PI * (r - self.lo) / width;
                for (k, v) in out.iter_mut().enumerate() {
                    *v = scales[k] * env * ((k + 1) as f64 * t).sin();
                }
            }
            Repr::Recurrence { alpha, beta, head } => {
                let mut prev = 0.0;
                let mut cur = *head;
                out[0] = cur;
                for k in 1..n {
                    let next = ((r - alpha[k - 1]) * cur - beta[k - 1] * prev) / beta[k];
                    prev = cur;
                    cur = next;
                    out[k] = cur;
                }
            }
            Repr::Haar { .. } => {
                out.iter_mut().for_each(|v| *v = 0.0);
                if let Some((k, v)) = self.local_value(r) {
                    if k < n {
                        out[k] = v;
                    }
                }
            }
            Repr::Seeded { seeds, coeffs } => {
                let s: Vec<f64> = seeds.iter().map(|f| f(r)).collect();
                for (k, v) in out.iter_mut().enumerate() {
                    *v = coeffs[k].iter().zip(&s).map(|(c, x)| c * x).sum();
                }
            }
        }
    }

    pub fn eval(&self, k: usize, r: f64) -> f64 {
        let mut buf = vec![0.0; k + 1];
        self.eval_into(r, &mut buf);
        buf[k]
    }

    /// `Σ_k θ_k ψ_k(r)` without materializing the basis values.
    pub fn combination(&self, theta: &[f64], r: f64) -> f64 {
        if theta.is_empty() || r < self.lo || r > self.hi {
            return 0.0;
        }
        match &self.repr {
            Repr::Recurrence { alpha, beta, head } => {
                let mut prev = 0.0;
                let mut cur = *head;
                let mut acc = theta[0] * cur;
                for k in 1..theta.len() {
                    let next = ((r - alpha[k - 1]) * cur - beta[k - 1] * prev) / beta[k];
                    prev = cur;
                    cur = next;
                    acc += theta[k] * cur;
                }
                acc
            }
            Repr::Haar { .. } => match self.local_value(r) {
                Some((k, v)) if k < theta.len() => theta[k] * v,
                _ => 0.0,
            },
            _ => {
                let mut buf = vec![0.0; theta.len()];
                self.eval_into(r, &mut buf);
                buf.iter().zip(theta).map(|(a, b)| a * b).sum()
            }
        }
    }

    /// Gram matrix of the first `n` functions under the quadrature of `grid`.
    pub fn gram_matrix(&self, n: usize, grid: &QuadratureGrid) -> DMatrix<f64> {
        let g = grid.len();
        let mut psi = DMatrix::<f64>::zeros(g, n);
        let mut buf = vec![0.0; n];
        for (q, (&r, &w)) in grid.nodes.iter().zip(&grid.weights).enumerate() {
            self.eval_into(r, &mut buf);
            let s = (w * self.model.density(r)).sqrt();
            for k in 0..n {
                psi[(q, k)] = buf[k] * s;
            }
        }
        psi.tr_mul(&psi)
    }

    /// Writes the defining coefficients as `(k, field, value)` rows.
    pub fn export_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["k", "field", "value"])?;
        let mut row = |k: usize, field: &str, v: f64| {
            w.write_record([k.to_string(), field.to_string(), format!("{v:.17e}")])
        };
        match &self.repr {
            Repr::Trig { scales } => {
                for (k, s) in scales.iter().enumerate() {
                    row(k, "scale", *s)?;
                }
            }
            Repr::Recurrence { alpha, beta, head } => {
                row(0, "head", *head)?;
                for (k, a) in alpha.iter().enumerate() {
                    row(k, "alpha", *a)?;
                }
                for (k, b) in beta.iter().enumerate() {
                    row(k, "beta", *b)?;
                }
            }
            Repr::Haar { edges, norms } => {
                for (k, e) in edges.iter().enumerate() {
                    row(k, "edge", *e)?;
                }
                for (k, v) in norms.iter().enumerate() {
                    row(k, "norm", *v)?;
                }
            }
            Repr::Seeded { coeffs, .. } => {
                for (k, c) in coeffs.iter().enumerate() {
                    for (j, v) in c.iter().enumerate() {
                        row(k, &format!("seed{j}"), *v)?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Basis selection as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum BasisSpec {
    WeightedTrig {
        n: usize,
        #[serde(default)]
        interval: Option<[f64; 2]>,
        #[serde(default = "default_floor")]
        floor: f64,
    },
    Poly {
        n: usize,
        #[serde(default)]
        interval: Option<[f64; 2]>,
    },
    Haar {
        n: usize,
        #[serde(default)]
        interval: Option<[f64; 2]>,
    },
}

fn default_floor() -> f64 {
    DEFAULT_DENSITY_FLOOR
}

impl BasisSpec {
    pub fn n(&self) -> usize {
        match self {
            Self::WeightedTrig { n, .. } | Self::Poly { n, .. } | Self::Haar { n, .. } => *n,
        }
    }

    pub fn with_n(&self, n: usize) -> Self {
        let mut s = self.clone();
        match &mut s {
            Self::WeightedTrig { n: m, .. } | Self::Poly { n: m, .. } | Self::Haar { n: m, .. } => {
                *m = n
            }
        }
        s
    }

    /// Explicit interval, or the support above the default density floor.
    pub fn interval(&self, model: &DensityModel) -> Result<(f64, f64)> {
        let explicit = match self {
            Self::WeightedTrig { interval, .. }
            | Self::Poly { interval, .. }
            | Self::Haar { interval, .. } => *interval,
        };
        match explicit {
            Some([lo, hi]) => Ok((lo, hi)),
            None => model.support(DEFAULT_DENSITY_FLOOR),
        }
    }

    pub fn build(&self, model: &DensityModel) -> Result<BasisFamily> {
        let (lo, hi) = self.interval(model)?;
        match *self {
            Self::WeightedTrig { n, floor, .. } => {
                BasisFamily::weighted_trig(n, model, lo, hi, floor)
            }
            Self::Poly { n, .. } => BasisFamily::poly(n, model, lo, hi),
            Self::Haar { n, .. } => BasisFamily::haar(n, model, lo, hi),
        }
    }
}

/// Families addressable by id.
#[derive(Debug, Clone, Default)]
pub struct BasisRegistry {
    families: BTreeMap<String, Arc<BasisFamily>>,
}

impl BasisRegistry {
    pub fn insert(&mut self, family: Arc<BasisFamily>) -> String {
        let id = family.id().to_string();
        self.families.insert(id.clone(), family);
        id
    }

    pub fn get(&self, id: &str) -> Result<Arc<BasisFamily>> {
        self.families
            .get(id)
            .cloned()
            .ok_or_else(|| Error::Config(format!("unknown basis id '{id}'")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{l2rho_inner, l2rho_norm};
    use approx::assert_abs_diff_eq;

    fn uniform() -> DensityModel {
        DensityModel::AnalyticUniformPair
    }

    fn flat() -> DensityModel {
        DensityModel::tabulated(vec![0.0, 1.0], vec![1.0, 1.0]).unwrap()
    }

    #[test]
    fn trig_on_flat_density() {
        let b = BasisFamily::weighted_trig(5, &flat(), 0.0, 1.0, 0.1).unwrap();
        assert_abs_diff_eq!(b.eval(0, 0.5), 2f64.sqrt(), epsilon = 1e-10);
        assert!(b.residual() <= 1e-8);
    }

    #[test]
    fn trig_under_uniform_pair() {
        let b = BasisFamily::weighted_trig(8, &uniform(), 0.0, 0.95, 0.1).unwrap();
        assert!(b.residual() <= 1e-8, "{}", b.residual());
        let envelope = 2f64.sqrt() / (0.1f64 * 0.95).sqrt();
        assert!(b.cmax() <= envelope * (1.0 + 1e-8));
        let err = BasisFamily::weighted_trig(4, &uniform(), 0.0, 1.0, 0.1).unwrap_err();
        assert!(matches!(err, Error::UnboundedBasis { .. }));
    }

    #[test]
    fn poly_family_is_orthonormal() {
        for n in [1, 6, 40, 200] {
            let b = BasisFamily::poly(n, &uniform(), 0.0, 0.95).unwrap();
            assert!(b.residual() <= 1e-10, "n = {n}: {}", b.residual());
        }
        let b = BasisFamily::poly(1, &uniform(), 0.0, 1.0).unwrap();
        assert_abs_diff_eq!(b.eval(0, 0.3), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(b.cmax(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn poly_matches_monomial_gram_schmidt() {
        let n = 6;
        let grid = QuadratureGrid::composite(0.0, 0.95, 16, 16);
        let seeds: Vec<Seed> = (0..n)
            .map(|k| Arc::new(move |r: f64| r.powi(k as i32)) as Seed)
            .collect();
        let gs = BasisFamily::gram_schmidt(seeds, &uniform(), &grid).unwrap();
        let rec = BasisFamily::poly(n, &uniform(), 0.0, 0.95).unwrap();
        for &r in &[0.0, 0.13, 0.5, 0.77, 0.95] {
            for k in 0..n {
                assert_abs_diff_eq!(gs.eval(k, r), rec.eval(k, r), epsilon = 1e-8);
            }
        }
        let gram = gs.gram_matrix(n, &grid);
        for j in 0..n {
            for k in 0..n {
                if j != k {
                    assert!(gram[(j, k)].abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn dependent_seeds_are_rejected() {
        let grid = QuadratureGrid::composite(0.0, 0.95, 8, 8);
        let seeds: Vec<Seed> = vec![
            Arc::new(|r: f64| r),
            Arc::new(|r: f64| 1.0 + r),
            Arc::new(|_r: f64| 2.0),
        ];
        let err = BasisFamily::gram_schmidt(seeds, &uniform(), &grid).unwrap_err();
        assert!(matches!(err, Error::DependentSeeds { index: 2, .. }));
    }

    #[test]
    fn haar_family() {
        let n = 10;
        let b = BasisFamily::haar(n, &uniform(), 0.0, 0.95).unwrap();
        assert!(b.residual() <= 1e-12);
        let last = 1.0 - (1.0 - 0.855f64).powi(2);
        let p = (1.0 - (1.0 - 0.95f64).powi(2)) - last;
        assert_abs_diff_eq!(b.cmax(), 1.0 / p.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(b.eval(0, 0.01), 1.0 / uniform().mass(0.0, 0.095).sqrt(), epsilon = 1e-12);
        assert_eq!(b.eval(1, 0.01), 0.0);
        assert_eq!(b.local_value(0.99), None);
        // matches Gram–Schmidt of the cell indicators
        let edges: Vec<f64> = (0..=n).map(|k| 0.095 * k as f64).collect();
        let grid = QuadratureGrid::on_breakpoints(&edges, 4);
        let seeds: Vec<Seed> = (0..n)
            .map(|k| {
                let (a, c) = (edges[k], edges[k + 1]);
                Arc::new(move |r: f64| if r >= a && r < c { 1.0 } else { 0.0 }) as Seed
            })
            .collect();
        let gs = BasisFamily::gram_schmidt(seeds, &uniform(), &grid).unwrap();
        for k in 0..n {
            let mid = 0.5 * (edges[k] + edges[k + 1]);
            assert_abs_diff_eq!(gs.eval(k, mid), b.eval(k, mid), epsilon = 1e-10);
        }
    }

    #[test]
    fn cmax_nondecreasing() {
        let b = BasisFamily::poly(30, &uniform(), 0.0, 0.95).unwrap();
        for n in 2..=30 {
            assert!(b.cmax_prefix(n) >= b.cmax_prefix(n - 1));
        }
        assert_eq!(b.cmax_prefix(30), b.cmax());
    }

    #[test]
    fn parseval_on_span() {
        let b = BasisFamily::poly(12, &uniform(), 0.0, 0.95).unwrap();
        let theta: Vec<f64> = (1..=12).map(|k| (k as f64).sin() / k as f64).collect();
        let grid = QuadratureGrid::composite(0.0, 0.95, 32, 16);
        let norm = l2rho_norm(|r| b.combination(&theta, r), &uniform(), &grid);
        let energy: f64 = theta.iter().map(|t| t * t).sum();
        assert_abs_diff_eq!(norm * norm, energy, epsilon = 1e-8);
        let direct = l2rho_inner(|r| b.eval(3, r), |r| b.eval(3, r), &uniform(), &grid);
        assert_abs_diff_eq!(direct, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn gram_is_stable_under_refinement() {
        let b = BasisFamily::poly(10, &uniform(), 0.0, 0.95).unwrap();
        let g = QuadratureGrid::default_on(0.0, 0.95);
        let diff = (b.gram_matrix(10, &g) - b.gram_matrix(10, &g.refined())).amax();
        assert!(diff <= 1e-8);
    }

    #[test]
    fn tabulated_and_empirical_poly() {
        let t = DensityModel::tabulated_normalized(vec![0.0, 0.3, 1.0], vec![1.0, 2.0, 0.5]).unwrap();
        let b = BasisFamily::poly(8, &t, 0.0, 1.0).unwrap();
        assert!(b.residual() <= 1e-10);
        let sample: Vec<f64> = (0..900).map(|i| ((i * 37 % 900) as f64 + 0.5) / 900.0).collect();
        let e = DensityModel::empirical(sample).unwrap();
        let b = BasisFamily::poly(5, &e, 0.0, 0.9).unwrap();
        assert!(b.residual() <= 1e-10);
    }

    #[test]
    fn spec_and_registry() {
        let spec: BasisSpec = serde_json::from_str(r#"{"family":"poly","n":4}"#).unwrap();
        let fam = Arc::new(spec.build(&uniform()).unwrap());
        assert_eq!(fam.interval(), (0.0, 0.95));
        let mut reg = BasisRegistry::default();
        let id = reg.insert(fam.clone());
        assert_eq!(id, "poly:n=4:[0,0.95]:uniform_pair");
        assert!(reg.get(&id).is_ok());
        assert!(matches!(reg.get("x"), Err(Error::Config(_))));
        assert_eq!(spec.with_n(9).n(), 9);
    }

    #[test]
    fn export_coefficients() {
        let dir = tempfile::tempdir().unwrap();
        let b = BasisFamily::poly(4, &uniform(), 0.0, 0.95).unwrap();
        let p = dir.path().join("poly.csv");
        b.export_csv(&p).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert_eq!(text.lines().count(), 1 + 1 + 3 + 4);
    }
}
