//! Exploration measure of pairwise distances and the weighted L²_ρ geometry
//! on the learning interval.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::QuadratureGrid;
use crate::sim::Dataset;

/// Default floor a₀ below which the density is treated as unexplored.
pub const DEFAULT_DENSITY_FLOOR: f64 = 0.1;

const MASS_TOL: f64 = 1e-8;

/// Law of the pairwise distance |X_i − X_j| on [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityModel {
    /// Distance of two independent uniforms on [0, 1]: density 2(1 − r).
    AnalyticUniformPair,
    /// Piecewise-linear density through `(nodes[i], values[i])`, zero outside the nodes.
    Tabulated { nodes: Vec<f64>, values: Vec<f64> },
    /// Sorted sample of observed distances, read as a histogram.
    Empirical { sample: Vec<f64> },
}

impl DensityModel {
    pub fn tabulated(nodes: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        validate_table(&nodes, &values)?;
        let mass = trapezoid(&nodes, &values);
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::Domain(format!(
                "tabulated density has total mass {mass}, expected 1"
            )));
        }
        Ok(Self::Tabulated { nodes, values })
    }

    /// Rescales `values` to unit mass before validating.
    pub fn tabulated_normalized(nodes: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        validate_table(&nodes, &values)?;
        let mass = trapezoid(&nodes, &values);
        if mass <= 0.0 {
            return Err(Error::Domain("tabulated density has zero mass".into()));
        }
        let values = values.into_iter().map(|v| v / mass).collect();
        Self::tabulated(nodes, values)
    }

    pub fn empirical(mut sample: Vec<f64>) -> Result<Self> {
        if sample.is_empty() {
            return Err(Error::Domain("empirical measure needs at least one distance".into()));
        }
        if sample.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::Domain("distances must be finite and nonnegative".into()));
        }
        sample.sort_by(f64::total_cmp);
        Ok(Self::Empirical { sample })
    }

    /// Density at `r`, which must lie in [0, 1].
    pub fn density_at(&self, r: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::Domain(format!("r = {r} outside [0, 1]")));
        }
        Ok(self.density(r))
    }

    /// Unchecked density, zero outside the model's range.
    pub fn density(&self, r: f64) -> f64 {
        match self {
            Self::AnalyticUniformPair => {
                if (0.0..=1.0).contains(&r) {
                    2.0 * (1.0 - r)
                } else {
                    0.0
                }
            }
            Self::Tabulated { nodes, values } => interpolate(nodes, values, r),
            Self::Empirical { sample } => {
                let h = histogram_bins(sample);
                let (lo, hi, bins, width) = (h.lo, h.hi, h.bins, h.width);
                if width <= 0.0 || r < lo || r > hi {
                    return 0.0;
                }
                let b = (((r - lo) / width).floor() as usize).min(bins - 1);
                let a = lo + b as f64 * width;
                let top = if b + 1 == bins { hi } else { a + width };
                let count = count_in(sample, a, top, b + 1 == bins);
                count as f64 / (sample.len() as f64 * width)
            }
        }
    }

    /// Cumulative distribution function.
    pub fn cdf(&self, r: f64) -> f64 {
        match self {
            Self::AnalyticUniformPair => {
                let r = r.clamp(0.0, 1.0);
                1.0 - (1.0 - r) * (1.0 - r)
            }
            Self::Tabulated { nodes, values } => {
                let mut acc = 0.0;
                for i in 0..nodes.len() - 1 {
                    let (a, b) = (nodes[i], nodes[i + 1]);
                    if r <= a {
                        break;
                    }
                    let top = r.min(b);
                    let fa = values[i];
                    let ft = interpolate(nodes, values, top);
                    acc += 0.5 * (fa + ft) * (top - a);
                }
                acc
            }
            Self::Empirical { sample } => {
                let k = sample.partition_point(|&x| x <= r);
                k as f64 / sample.len() as f64
            }
        }
    }

    /// ρ([a, b]).
    pub fn mass(&self, a: f64, b: f64) -> f64 {
        match self {
            Self::Empirical { sample } => {
                count_in(sample, a, b, true) as f64 / sample.len() as f64
            }
            _ => self.cdf(b) - self.cdf(a),
        }
    }

    /// Maximal intervals on which the density exceeds `floor`, in increasing order.
    pub fn high_density_intervals(&self, floor: f64) -> Vec<(f64, f64)> {
        match self {
            Self::AnalyticUniformPair => {
                if floor < 2.0 {
                    vec![(0.0, 1.0 - floor / 2.0)]
                } else {
                    vec![]
                }
            }
            Self::Tabulated { nodes, values } => {
                let mut out = Vec::new();
                let mut start: Option<f64> = None;
                for i in 0..nodes.len() {
                    let above = values[i] > floor;
                    if i > 0 {
                        let (x0, x1, v0, v1) = (nodes[i - 1], nodes[i], values[i - 1], values[i]);
                        let was = v0 > floor;
                        if was != above {
                            let t = (floor - v0) / (v1 - v0);
                            let cross = x0 + t * (x1 - x0);
                            if above {
                                start = Some(cross);
                            } else if let Some(s) = start.take() {
                                out.push((s, cross));
                            }
                        }
                    } else if above {
                        start = Some(nodes[0]);
                    }
                }
                if let Some(s) = start {
                    out.push((s, nodes[nodes.len() - 1]));
                }
                out.retain(|(a, b)| b > a);
                out
            }
            Self::Empirical { sample } => {
                let h = histogram_bins(sample);
                if h.width <= 0.0 {
                    return vec![];
                }
                let mut out: Vec<(f64, f64)> = Vec::new();
                for b in 0..h.bins {
                    let a = h.lo + b as f64 * h.width;
                    let top = if b + 1 == h.bins { h.hi } else { a + h.width };
                    let d = count_in(sample, a, top, b + 1 == h.bins) as f64
                        / (sample.len() as f64 * h.width);
                    if d > floor {
                        match out.last_mut() {
                            Some(last) if (last.1 - a).abs() < 1e-15 => last.1 = top,
                            _ => out.push((a, top)),
                        }
                    }
                }
                out
            }
        }
    }

    /// Longest interval on which the density exceeds `floor`.
    pub fn support(&self, floor: f64) -> Result<(f64, f64)> {
        self.high_density_intervals(floor)
            .into_iter()
            .max_by(|a, b| (a.1 - a.0).total_cmp(&(b.1 - b.0)))
            .ok_or_else(|| Error::Domain(format!("density never exceeds floor {floor}")))
    }

    pub fn total_mass(&self) -> f64 {
        match self {
            Self::AnalyticUniformPair | Self::Empirical { .. } => 1.0,
            Self::Tabulated { nodes, values } => trapezoid(nodes, values),
        }
    }

    /// Points where the density is not smooth; quadrature panels should not straddle them.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            Self::AnalyticUniformPair => vec![],
            Self::Tabulated { nodes, .. } => nodes.clone(),
            Self::Empirical { sample } => {
                let h = histogram_bins(sample);
                (0..=h.bins).map(|b| h.lo + b as f64 * h.width).collect()
            }
        }
    }

    pub fn is_uniform_pair(&self) -> bool {
        matches!(self, Self::AnalyticUniformPair)
    }
}

struct Histogram {
    lo: f64,
    hi: f64,
    bins: usize,
    width: f64,
}

fn histogram_bins(sample: &[f64]) -> Histogram {
    let lo = sample[0];
    let hi = sample[sample.len() - 1];
    let bins = (sample.len() as f64).sqrt().ceil().max(1.0) as usize;
    Histogram {
        lo,
        hi,
        bins,
        width: (hi - lo) / bins as f64,
    }
}

fn count_in(sorted: &[f64], a: f64, b: f64, closed: bool) -> usize {
    let start = sorted.partition_point(|&x| x < a);
    let end = if closed {
        sorted.partition_point(|&x| x <= b)
    } else {
        sorted.partition_point(|&x| x < b)
    };
    end.saturating_sub(start)
}

fn validate_table(nodes: &[f64], values: &[f64]) -> Result<()> {
    if nodes.len() < 2 || nodes.len() != values.len() {
        return Err(Error::Domain(
            "tabulated density needs at least two (node, value) pairs".into(),
        ));
    }
    if nodes.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(Error::Domain("tabulated nodes must lie in [0, 1]".into()));
    }
    if nodes.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::Domain("tabulated nodes must be strictly increasing".into()));
    }
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Domain("density values must be finite and nonnegative".into()));
    }
    Ok(())
}

fn trapezoid(nodes: &[f64], values: &[f64]) -> f64 {
    nodes
        .windows(2)
        .zip(values.windows(2))
        .map(|(x, v)| 0.5 * (v[0] + v[1]) * (x[1] - x[0]))
        .sum()
}

fn interpolate(nodes: &[f64], values: &[f64], r: f64) -> f64 {
    if r < nodes[0] || r > nodes[nodes.len() - 1] {
        return 0.0;
    }
    let i = nodes.partition_point(|&x| x <= r);
    if i == nodes.len() {
        return values[values.len() - 1];
    }
    let (x0, x1) = (nodes[i - 1], nodes[i]);
    let t = (r - x0) / (x1 - x0);
    values[i - 1] + t * (values[i] - values[i - 1])
}

/// All ordered pairwise distances |X_i^m − X_j^m|, i ≠ j, sorted.
pub fn empirical_measure(dataset: &Dataset) -> Result<DensityModel> {
    let (n, d) = (dataset.n_particles(), dataset.dim());
    if dataset.n_samples() == 0 || n < 2 {
        return Err(Error::Precondition(
            "empirical measure needs M >= 1 samples of N >= 2 particles".into(),
        ));
    }
    let mut sample = Vec::with_capacity(dataset.n_samples() * n * (n - 1));
    for m in 0..dataset.n_samples() {
        let x = dataset.positions(m);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    sample.push(distance(&x[i * d..(i + 1) * d], &x[j * d..(j + 1) * d]));
                }
            }
        }
    }
    DensityModel::empirical(sample)
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// ⟨f, g⟩ in L²_ρ restricted to the grid's interval.
pub fn l2rho_inner(
    f: impl Fn(f64) -> f64,
    g: impl Fn(f64) -> f64,
    model: &DensityModel,
    grid: &QuadratureGrid,
) -> f64 {
    grid.nodes
        .iter()
        .zip(&grid.weights)
        .map(|(&r, &w)| w * f(r) * g(r) * model.density(r))
        .sum()
}

pub fn l2rho_norm(f: impl Fn(f64) -> f64, model: &DensityModel, grid: &QuadratureGrid) -> f64 {
    l2rho_inner(&f, &f, model, grid).max(0.0).sqrt()
}

/// Kolmogorov–Smirnov distance between a sorted sample and a continuous CDF.
pub fn ks_distance(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Loads a two-column (node, density) CSV. A non-numeric first row is read as a header.
pub fn load_tabulated_csv(path: impl AsRef<Path>) -> Result<DensityModel> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut nodes = Vec::new();
    let mut values = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let offset = record.position().map(|p| p.byte()).unwrap_or(0);
        if record.len() != 2 {
            return Err(Error::Parse {
                offset,
                message: format!("expected 2 columns, found {}", record.len()),
            });
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) => {
                nodes.push(v[0]);
                values.push(v[1]);
            }
            Err(_) if row == 0 => continue,
            Err(e) => {
                return Err(Error::Parse {
                    offset,
                    message: e.to_string(),
                })
            }
        }
    }
    DensityModel::tabulated(nodes, values)
}

/// Writes an empirical sample as a single `distance` column.
pub fn export_sample_csv(model: &DensityModel, path: impl AsRef<Path>) -> Result<()> {
    let DensityModel::Empirical { sample } = model else {
        return Err(Error::Config("only empirical measures export samples".into()));
    };
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["distance"])?;
    for r in sample {
        w.write_record([format!("{r:.17e}")])?;
    }
    w.flush()?;
    Ok(())
}
