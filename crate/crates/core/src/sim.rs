//! Data generation for `Y = R_φ[X] + η` and the forward interaction operator.

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{Radial, RadialKernel};
use crate::rng::{keys, SeedTree, StreamRng};

/// Pairs closer than this contribute nothing to the forward operator.
pub const COINCIDENT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum ComponentLaw {
    Uniform { lo: f64, hi: f64 },
    Beta { a: f64, b: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum PositionLaw {
    IidUniform,
    /// One Euler–Maruyama step from `initial` under the drift `R_drift`, clamped to `[0,1]^d`.
    EulerMaruyamaStep {
        drift: RadialKernel,
        dt: f64,
        sigma: f64,
        initial: Box<PositionLaw>,
    },
    /// Draws a component by weight, then all particles iid from it.
    ConditionalIidMixture {
        components: Vec<ComponentLaw>,
        weights: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseLaw {
    Gaussian { sigma: f64 },
    None,
    CenteredUniform { half_range: f64 },
}

impl NoiseLaw {
    pub fn variance(&self) -> f64 {
        match *self {
            Self::Gaussian { sigma } => sigma * sigma,
            Self::None => 0.0,
            Self::CenteredUniform { half_range } => half_range * half_range / 3.0,
        }
    }

    fn sample(&self, rng: &mut StreamRng) -> f64 {
        match *self {
            Self::Gaussian { sigma } => {
                let z: f64 = rng.sample(StandardNormal);
                sigma * z
            }
            Self::None => 0.0,
            Self::CenteredUniform { half_range } => {
                half_range * (2.0 * rng.random::<f64>() - 1.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub n_particles: usize,
    pub dim: usize,
    pub n_samples: usize,
    pub positions: PositionLaw,
    pub noise: NoiseLaw,
    #[serde(default)]
    pub seed: u64,
}

impl SystemConfig {
    pub fn uniform(n_particles: usize, n_samples: usize, noise: NoiseLaw, seed: u64) -> Self {
        Self {
            n_particles,
            dim: 1,
            n_samples,
            positions: PositionLaw::IidUniform,
            noise,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_particles < 3 {
            return Err(Error::Config(format!(
                "need N >= 3 particles, got {}",
                self.n_particles
            )));
        }
        if self.dim == 0 || self.n_samples == 0 {
            return Err(Error::Config("need d >= 1 and M >= 1".into()));
        }
        match self.noise {
            NoiseLaw::Gaussian { sigma } if !(sigma >= 0.0) => {
                return Err(Error::Config("noise sigma must be nonnegative".into()))
            }
            NoiseLaw::CenteredUniform { half_range } if !(half_range >= 0.0) => {
                return Err(Error::Config("noise half-range must be nonnegative".into()))
            }
            _ => {}
        }
        validate_law(&self.positions)
    }
}

fn validate_law(law: &PositionLaw) -> Result<()> {
    match law {
        PositionLaw::IidUniform => Ok(()),
        PositionLaw::EulerMaruyamaStep {
            drift,
            dt,
            sigma,
            initial,
        } => {
            if !(*dt >= 0.0 && *sigma >= 0.0) {
                return Err(Error::Config("Euler–Maruyama needs dt >= 0, sigma >= 0".into()));
            }
            drift.validate()?;
            validate_law(initial)
        }
        PositionLaw::ConditionalIidMixture {
            components,
            weights,
        } => {
            if components.is_empty() || components.len() != weights.len() {
                return Err(Error::Config(
                    "mixture needs one weight per component".into(),
                ));
            }
            if weights.iter().any(|w| !(*w >= 0.0))
                || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12
            {
                return Err(Error::Config("mixture weights must be nonnegative and sum to 1".into()));
            }
            for c in components {
                match *c {
                    ComponentLaw::Uniform { lo, hi } if !(0.0 <= lo && lo < hi && hi <= 1.0) => {
                        return Err(Error::Config("uniform component needs 0 <= lo < hi <= 1".into()))
                    }
                    ComponentLaw::Beta { a, b } if !(a > 0.0 && b > 0.0) => {
                        return Err(Error::Config("beta component needs a, b > 0".into()))
                    }
                    _ => {}
                }
            }
            Ok(())
        }
    }
}

/// `M` samples of `N` particles in `d` dimensions, stored sample-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub config: SystemConfig,
    pub truth: Option<RadialKernel>,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Dataset {
    pub fn from_parts(
        config: SystemConfig,
        truth: Option<RadialKernel>,
        x: Vec<f64>,
        y: Vec<f64>,
    ) -> Result<Self> {
        let len = config.n_samples * config.n_particles * config.dim;
        if x.len() != len || y.len() != len {
            return Err(Error::Config(format!(
                "arrays of length {} and {} do not match M*N*d = {len}",
                x.len(),
                y.len()
            )));
        }
        Ok(Self {
            config,
            truth,
            x,
            y,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.config.n_samples
    }

    pub fn n_particles(&self) -> usize {
        self.config.n_particles
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    fn stride(&self) -> usize {
        self.config.n_particles * self.config.dim
    }

    /// Positions of sample `m`, particle-major (`N × d`).
    pub fn positions(&self, m: usize) -> &[f64] {
        let s = self.stride();
        &self.x[m * s..(m + 1) * s]
    }

    pub fn observations(&self, m: usize) -> &[f64] {
        let s = self.stride();
        &self.y[m * s..(m + 1) * s]
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Same positions with new observations.
    pub fn with_observations(&self, y: Vec<f64>) -> Result<Self> {
        Self::from_parts(self.config.clone(), self.truth.clone(), self.x.clone(), y)
    }
}

/// `R_φ[X]` for one configuration `x` (`N × d`, particle-major).
pub fn forward<K: Radial + ?Sized>(kernel: &K, x: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * d];
    forward_into(kernel, x, n, d, &mut out);
    out
}

pub fn forward_into<K: Radial + ?Sized>(kernel: &K, x: &[f64], n: usize, d: usize, out: &mut [f64]) {
    debug_assert_eq!(x.len(), n * d);
    out.iter_mut().for_each(|v| *v = 0.0);
    let inv_n = 1.0 / n as f64;
    let mut u = vec![0.0; d];
    for i in 0..n {
        for j in i + 1..n {
            let r = pair_direction(x, i, j, d, &mut u);
            if r < COINCIDENT_TOL {
                continue;
            }
            let f = kernel.value(r) * inv_n;
            for c in 0..d {
                out[i * d + c] += f * u[c];
                out[j * d + c] -= f * u[c];
            }
        }
    }
}

/// Writes the unit vector from `x_j` to `x_i` into `u` and returns `|x_i − x_j|`.
pub(crate) fn pair_direction(x: &[f64], i: usize, j: usize, d: usize, u: &mut [f64]) -> f64 {
    let mut r2 = 0.0;
    for c in 0..d {
        let diff = x[i * d + c] - x[j * d + c];
        u[c] = diff;
        r2 += diff * diff;
    }
    let r = r2.sqrt();
    if r >= COINCIDENT_TOL {
        u.iter_mut().for_each(|v| *v /= r);
    }
    r
}

/// Positions of sample `m`; the stream is addressed by `m` alone.
pub fn sample_configuration(
    config: &SystemConfig,
    law: &PositionLaw,
    drift_registry: &crate::basis::BasisRegistry,
    rng: &mut StreamRng,
    out: &mut [f64],
) -> Result<()> {
    let (n, d) = (config.n_particles, config.dim);
    match law {
        PositionLaw::IidUniform => {
            for v in out.iter_mut() {
                *v = rng.random::<f64>();
            }
        }
        PositionLaw::EulerMaruyamaStep {
            drift,
            dt,
            sigma,
            initial,
        } => {
            sample_configuration(config, initial, drift_registry, rng, out)?;
            let kernel = drift.resolve(drift_registry)?;
            let push = forward(&kernel, out, n, d);
            let scale = sigma * dt.sqrt();
            for (v, p) in out.iter_mut().zip(push) {
                let xi: f64 = rng.sample(StandardNormal);
                *v = (*v + p * dt + scale * xi).clamp(0.0, 1.0);
            }
        }
        PositionLaw::ConditionalIidMixture {
            components,
            weights,
        } => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = components.len() - 1;
            for (k, w) in weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    pick = k;
                    break;
                }
            }
            match components[pick] {
                ComponentLaw::Uniform { lo, hi } => {
                    let dist = Uniform::new(lo, hi).map_err(|e| Error::Config(e.to_string()))?;
                    for v in out.iter_mut() {
                        *v = dist.sample(rng);
                    }
                }
                ComponentLaw::Beta { a, b } => {
                    let dist = Beta::new(a, b).map_err(|e| Error::Config(e.to_string()))?;
                    for v in out.iter_mut() {
                        *v = dist.sample(rng);
                    }
                }
            }
        }
    }
    Ok(())
}

/// All `M` position arrays, each from its own substream of `tree`.
pub fn sample_positions(config: &SystemConfig, tree: &SeedTree) -> Result<Vec<f64>> {
    sample_positions_with(config, tree, &crate::basis::BasisRegistry::default())
}

pub fn sample_positions_with(
    config: &SystemConfig,
    tree: &SeedTree,
    registry: &crate::basis::BasisRegistry,
) -> Result<Vec<f64>> {
    config.validate()?;
    let stride = config.n_particles * config.dim;
    let mut x = vec![0.0; config.n_samples * stride];
    let pos = tree.child(keys::POSITIONS);
    x.par_chunks_mut(stride)
        .enumerate()
        .try_for_each(|(m, chunk)| {
            let mut rng = pos.stream(m as u64);
            sample_configuration(config, &config.positions, registry, &mut rng, chunk)
        })?;
    Ok(x)
}

/// Observations `Y^m = R_φ[X^m] + η^m` for given positions.
pub fn observe<K: Radial + ?Sized>(
    config: &SystemConfig,
    kernel: &K,
    x: &[f64],
    tree: &SeedTree,
) -> Vec<f64> {
    let (n, d) = (config.n_particles, config.dim);
    let stride = n * d;
    let noise = tree.child(keys::NOISE);
    let mut y = vec![0.0; x.len()];
    y.par_chunks_mut(stride)
        .zip(x.par_chunks(stride))
        .enumerate()
        .for_each(|(m, (ym, xm))| {
            forward_into(kernel, xm, n, d, ym);
            if config.noise != NoiseLaw::None {
                let mut rng = noise.stream(m as u64);
                for v in ym.iter_mut() {
                    *v += config.noise.sample(&mut rng);
                }
            }
        });
    y
}

/// Draws a dataset from `tree`. The kernel spec, if given, is recorded as the truth.
pub fn generate<K: Radial + ?Sized>(
    config: &SystemConfig,
    kernel: &K,
    truth: Option<RadialKernel>,
    tree: &SeedTree,
) -> Result<Dataset> {
    let x = sample_positions(config, tree)?;
    let y = observe(config, kernel, &x, tree);
    Dataset::from_parts(config.clone(), truth, x, y)
}

/// Draws a dataset from the seed stored in `config`.
pub fn generate_seeded(config: &SystemConfig, kernel: &crate::kernels::Kernel) -> Result<Dataset> {
    generate(
        config,
        kernel,
        Some(kernel.spec().clone()),
        &SeedTree::new(config.seed),
    )
}
