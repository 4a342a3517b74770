//! Experiment configuration files: `[system]`, `[kernel]`, `[basis]`, and
//! `[experiment]` tables. Unknown keys are rejected.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tlse_core::basis::{BasisFamily, BasisSpec};
use tlse_core::estimator::{EstimatorKind, TruthProjection};
use tlse_core::kernels::{ClosedForm, Kernel, RadialKernel};
use tlse_core::measure::{empirical_measure, load_tabulated_csv, DensityModel};
use tlse_core::quadrature::QuadratureGrid;
use tlse_core::rng::SeedTree;
use tlse_core::sim::{generate, PositionLaw, SystemConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    RateSweep,
    TailSweep,
    Coercivity,
    Lowerbound,
    IdentitySuite,
    Simulate,
    Estimate,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::RateSweep => "rate_sweep",
            Self::TailSweep => "tail_sweep",
            Self::Coercivity => "coercivity",
            Self::Lowerbound => "lowerbound",
            Self::IdentitySuite => "identity_suite",
            Self::Simulate => "simulate",
            Self::Estimate => "estimate",
        }
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let quoted = format!("\"{s}\"");
        serde_json::from_str(&quoted).with_context(|| format!("unknown experiment {s:?}"))
    }
}

/// Ground-truth kernel. `series` and `expansion` live in the `[basis]` family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelConfig {
    /// `θ_k = scale · k^{−decay}` for `k = 1..modes`.
    Series {
        decay: f64,
        #[serde(default = "default_modes")]
        modes: usize,
        #[serde(default = "one")]
        scale: f64,
    },
    Expansion { coefficients: Vec<f64> },
    /// `jumps` breakpoints at `hi · frac(k g)` with `g` the inverse plastic
    /// number, taking the value `cos(3k)` to the right of the `k`-th one.
    Staircase {
        #[serde(default = "default_jumps")]
        jumps: usize,
        #[serde(default = "default_hi")]
        hi: f64,
    },
    PiecewiseConstant { breakpoints: Vec<f64>, values: Vec<f64> },
    Power {
        exponent: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    Indicator { amplitude: f64, lo: f64, hi: f64 },
    GaussianBump { center: f64, width: f64, amplitude: f64 },
    Zero,
}

fn default_modes() -> usize {
    500
}
fn default_jumps() -> usize {
    9
}
fn default_hi() -> f64 {
    0.95
}
fn one() -> f64 {
    1.0
}

const STAIRCASE_MULTIPLIER: f64 = 0.754_877_666_246_692_7;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensityConfig {
    #[default]
    UniformPair,
    Tabulated { path: PathBuf },
    /// Pairwise distances of a pilot sample drawn from the configured system.
    Empirical {
        #[serde(default = "default_pilot")]
        pilot_samples: usize,
    },
}

fn default_pilot() -> usize {
    2000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: ExperimentKind,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Sample sizes for rate and tail sweeps.
    #[serde(default)]
    pub m_list: Vec<usize>,
    #[serde(default = "one")]
    pub beta: f64,
    #[serde(default = "one")]
    pub gamma: f64,
    /// Gating threshold; defaults to a quarter of the coercivity constant.
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    /// Basis dimensions for tail sweeps and coercivity.
    #[serde(default)]
    pub n_list: Vec<usize>,
    #[serde(default)]
    pub density: DensityConfig,
    #[serde(default = "default_floor")]
    pub density_floor: f64,
    /// Monte Carlo samples for κ and for the coercivity check.
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    #[serde(default = "default_mc_n")]
    pub mc_n: usize,
    #[serde(default = "default_mc_replicates")]
    pub mc_replicates: usize,
    /// Panels per axis for the Hilbert–Schmidt tensor grid.
    #[serde(default = "default_hs_panels")]
    pub hs_panels: usize,
    #[serde(default = "default_identity_trials")]
    pub identity_trials: usize,
    #[serde(default = "default_kbar")]
    pub kbar_list: Vec<usize>,
    #[serde(default = "one")]
    pub lipschitz: f64,
    #[serde(default = "default_fano_reps")]
    pub fano_replicates: usize,
    /// Moment-scaling grid; empty skips it.
    #[serde(default)]
    pub moment_n_list: Vec<usize>,
    #[serde(default)]
    pub moment_m_list: Vec<usize>,
    #[serde(default = "default_moment_reps")]
    pub moment_replicates: usize,
    #[serde(default)]
    pub estimator: Option<EstimatorKind>,
    /// Fixed basis dimension: overrides the rate rule in `rate_sweep`, and
    /// defaults to the `[basis]` size in `estimate`.
    #[serde(default)]
    pub n: Option<usize>,
    /// Input for `estimate`, output stem for `simulate`.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    /// Output directory; `--out` takes precedence.
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_replicates() -> usize {
    20
}
fn default_epsilons() -> Vec<f64> {
    vec![0.5]
}
fn default_floor() -> f64 {
    tlse_core::measure::DEFAULT_DENSITY_FLOOR
}
fn default_mc_samples() -> usize {
    100_000
}
fn default_mc_n() -> usize {
    8
}
fn default_mc_replicates() -> usize {
    20
}
fn default_hs_panels() -> usize {
    128
}
fn default_identity_trials() -> usize {
    1000
}
fn default_kbar() -> Vec<usize> {
    vec![8, 16, 24]
}
fn default_fano_reps() -> usize {
    2000
}
fn default_moment_reps() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    #[serde(default = "default_kernel")]
    pub kernel: KernelConfig,
    pub basis: BasisSpec,
    pub experiment: ExperimentSection,
}

fn default_kernel() -> KernelConfig {
    KernelConfig::Zero
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        let e = &self.experiment;
        ensure!(e.replicates >= 1, "replicates must be at least 1");
        ensure!(e.beta > 0.0 && e.gamma > 0.0, "beta and gamma must be positive");
        ensure!(
            e.epsilons.iter().all(|v| *v > 0.0 && *v < 1.0),
            "epsilons must lie in (0, 1)"
        );
        if let Some(t) = e.threshold {
            ensure!(t > 0.0, "threshold must be positive");
        }
        match e.name {
            ExperimentKind::RateSweep => {
                ensure!(e.m_list.len() >= 3, "rate_sweep needs at least three sample sizes");
                ensure!(
                    e.m_list.windows(2).all(|w| w[0] < w[1]),
                    "m_list must be strictly increasing"
                );
            }
            ExperimentKind::TailSweep => {
                ensure!(!e.m_list.is_empty() && !e.n_list.is_empty(), "tail_sweep needs m_list and n_list");
                ensure!(e.replicates >= 100, "tail_sweep needs at least 100 replicates");
            }
            ExperimentKind::Coercivity => {
                ensure!(!e.n_list.is_empty(), "coercivity needs n_list");
            }
            ExperimentKind::Lowerbound => {
                ensure!(!e.kbar_list.is_empty(), "lowerbound needs kbar_list");
            }
            ExperimentKind::Estimate => {
                ensure!(e.dataset.is_some(), "estimate needs experiment.dataset");
            }
            ExperimentKind::IdentitySuite | ExperimentKind::Simulate => {}
        }
        if let KernelConfig::Series { modes, .. } = self.kernel {
            ensure!(modes >= 1, "series truth needs at least one mode");
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("configs serialize");
        hex::encode(Sha256::digest(&json))
    }

    pub fn threshold(&self) -> Result<f64> {
        match self.experiment.threshold {
            Some(t) => Ok(t),
            None => Ok(tlse_core::theory::coercivity_constant(self.system.n_particles)? / 4.0),
        }
    }

    pub fn tree(&self) -> SeedTree {
        SeedTree::new(self.system.seed)
    }

    pub fn density(&self) -> Result<DensityModel> {
        Ok(match &self.experiment.density {
            DensityConfig::UniformPair => {
                if self.system.positions != PositionLaw::IidUniform || self.system.dim != 1 {
                    bail!("the analytic pair density needs iid uniform positions in d = 1");
                }
                DensityModel::AnalyticUniformPair
            }
            DensityConfig::Tabulated { path } => load_tabulated_csv(path)?,
            DensityConfig::Empirical { pilot_samples } => {
                let mut cfg = self.system.clone();
                cfg.n_samples = *pilot_samples;
                let pilot = generate(&cfg, &|_: f64| 0.0, None, &self.tree().child(PILOT_KEY))?;
                empirical_measure(&pilot)?
            }
        })
    }
}

const PILOT_KEY: u64 = 100;

/// A truth kernel bound to the family it is expanded in, if any.
pub struct Truth {
    pub kernel: Kernel,
    pub spec: RadialKernel,
    /// Exact coefficients in the `[basis]` family, when the truth is defined by them.
    pub coefficients: Option<Vec<f64>>,
}

impl Truth {
    /// `Σ_{k>n} θ_k²` and the head coefficients, from exact coefficients or by
    /// quadrature against `basis` on `grid`.
    pub fn projection(&self, basis: &BasisFamily, n: usize, grid: &QuadratureGrid) -> TruthProjection {
        match &self.coefficients {
            Some(c) => TruthProjection::from_coefficients(c.clone()),
            None => TruthProjection::by_quadrature(&self.kernel, basis, n, grid),
        }
    }

    /// Breakpoints of a piecewise-constant truth.
    pub fn breakpoints(&self) -> Vec<f64> {
        match &self.spec {
            RadialKernel::PiecewiseConstant { breakpoints, .. } => breakpoints.clone(),
            _ => Vec::new(),
        }
    }
}

pub fn staircase(jumps: usize, hi: f64) -> Result<RadialKernel> {
    ensure!(jumps >= 1 && hi > 0.0 && hi <= 1.0, "staircase needs jumps >= 1 and hi in (0, 1]");
    let mut cuts: Vec<(f64, f64)> = (1..=jumps)
        .map(|k| {
            let kf = k as f64;
            (hi * (kf * STAIRCASE_MULTIPLIER).fract(), (3.0 * kf).cos())
        })
        .collect();
    cuts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut breakpoints = vec![0.0];
    let mut values = vec![0.0];
    for (b, v) in cuts {
        if b > *breakpoints.last().unwrap() {
            breakpoints.push(b);
            values.push(v);
        } else {
            *values.last_mut().unwrap() = v;
        }
    }
    breakpoints.push(hi);
    Ok(RadialKernel::piecewise_constant(breakpoints, values)?)
}

impl KernelConfig {
    /// Number of `[basis]` functions the truth needs.
    pub fn modes(&self) -> usize {
        match self {
            Self::Series { modes, .. } => *modes,
            Self::Expansion { coefficients } => coefficients.len(),
            _ => 0,
        }
    }

    pub fn build(&self, basis: Option<&Arc<BasisFamily>>) -> Result<Truth> {
        let closed = |c: ClosedForm| -> Result<Truth> {
            let spec = RadialKernel::ClosedForm(c);
            Ok(Truth {
                kernel: spec.standalone()?,
                spec,
                coefficients: None,
            })
        };
        match self {
            Self::Series { .. } | Self::Expansion { .. } => {
                let basis = basis.context("a basis-expanded truth needs the [basis] family")?;
                let coefficients: Vec<f64> = match self {
                    Self::Series { decay, modes, scale } => (1..=*modes)
                        .map(|k| scale * (k as f64).powf(-decay))
                        .collect(),
                    Self::Expansion { coefficients } => coefficients.clone(),
                    _ => unreachable!(),
                };
                ensure!(
                    coefficients.len() <= basis.n(),
                    "truth needs {} basis functions but the family has {}",
                    coefficients.len(),
                    basis.n()
                );
                let kernel = Kernel::expansion(coefficients.clone(), basis.clone())?;
                Ok(Truth {
                    spec: kernel.spec().clone(),
                    kernel,
                    coefficients: Some(coefficients),
                })
            }
            Self::Staircase { jumps, hi } => {
                let spec = staircase(*jumps, *hi)?;
                Ok(Truth {
                    kernel: spec.standalone()?,
                    spec,
                    coefficients: None,
                })
            }
            Self::PiecewiseConstant { breakpoints, values } => {
                let spec = RadialKernel::piecewise_constant(breakpoints.clone(), values.clone())?;
                Ok(Truth {
                    kernel: spec.standalone()?,
                    spec,
                    coefficients: None,
                })
            }
            Self::Power { exponent, scale } => closed(ClosedForm::Power {
                exponent: *exponent,
                scale: *scale,
            }),
            Self::Indicator { amplitude, lo, hi } => closed(ClosedForm::Indicator {
                amplitude: *amplitude,
                lo: *lo,
                hi: *hi,
            }),
            Self::GaussianBump {
                center,
                width,
                amplitude,
            } => closed(ClosedForm::GaussianBump {
                center: *center,
                width: *width,
                amplitude: *amplitude,
            }),
            Self::Zero => closed(ClosedForm::Zero),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[system]
n_particles = 5
dim = 1
n_samples = 100
positions = { law = "iid_uniform" }
noise = { law = "gaussian", sigma = 0.1 }
seed = 3

[kernel]
kind = "series"
decay = 1.75

[basis]
family = "poly"
n = 8

[experiment]
name = "rate_sweep"
m_list = [512, 1024, 2048]
"#;

    #[test]
    fn parses_and_hashes() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.experiment.name, ExperimentKind::RateSweep);
        assert_eq!(cfg.kernel.modes(), 500);
        assert_eq!(cfg.hash(), ExperimentConfig::from_toml(MINIMAL).unwrap().hash());
        let mut other = cfg.clone();
        other.system.seed = 4;
        assert_ne!(cfg.hash(), other.hash());
    }

    #[test]
    fn unknown_keys_are_errors() {
        let bad = MINIMAL.replace("seed = 3", "seed = 3\ncolour = 1");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
        let bad = MINIMAL.replace("m_list", "m_lst");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
        let bad = MINIMAL.replace("decay = 1.75", "decay = 1.75\nshape = 2");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn rate_sweep_needs_increasing_sizes() {
        let bad = MINIMAL.replace("[512, 1024, 2048]", "[512, 512, 2048]");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn experiment_names_round_trip() {
        for k in [ExperimentKind::RateSweep, ExperimentKind::IdentitySuite, ExperimentKind::Lowerbound] {
            assert_eq!(k.name().parse::<ExperimentKind>().unwrap(), k);
        }
        assert!("nope".parse::<ExperimentKind>().is_err());
    }

    #[test]
    fn staircase_shape() {
        let RadialKernel::PiecewiseConstant { breakpoints, values } = staircase(9, 0.95).unwrap() else {
            panic!()
        };
        assert_eq!(breakpoints.len(), 11);
        assert_eq!(values.len(), 10);
        assert_eq!(breakpoints[0], 0.0);
        assert_eq!(*breakpoints.last().unwrap(), 0.95);
        assert!(values.iter().skip(1).all(|v| v.abs() <= 1.0));
    }
}
