//! Radial interaction kernels, smoothness classes, and the bump function used
//! by the lower-bound hypotheses.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::basis::{BasisFamily, BasisRegistry};
use crate::error::{Error, Result};

/// Anything that can be evaluated as a function of distance.
pub trait Radial: Sync {
    fn value(&self, r: f64) -> f64;
}

impl<F: Fn(f64) -> f64 + Sync> Radial for F {
    fn value(&self, r: f64) -> f64 {
        self(r)
    }
}

/// Named closed-form kernels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClosedForm {
    /// `scale · r^exponent`
    Power {
        exponent: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    /// `amplitude · 1_[lo, hi](r)`
    Indicator { amplitude: f64, lo: f64, hi: f64 },
    /// `amplitude · exp(−(r − center)² / (2 width²))`
    GaussianBump {
        center: f64,
        width: f64,
        amplitude: f64,
    },
    Zero,
}

fn one() -> f64 {
    1.0
}

/// One term `amplitude · bump((r − center)/halfwidth)`. The term is supported
/// on `(center − halfwidth/2, center + halfwidth/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpTerm {
    pub center: f64,
    pub halfwidth: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RadialKernel {
    ClosedForm(ClosedForm),
    /// `Σ_k coefficients[k] ψ_k(r)` for the basis registered under `basis`.
    BasisExpansion {
        coefficients: Vec<f64>,
        basis: String,
    },
    /// `values[i]` on `[breakpoints[i], breakpoints[i+1])`, zero outside.
    PiecewiseConstant {
        breakpoints: Vec<f64>,
        values: Vec<f64>,
    },
    BumpSum { terms: Vec<BumpTerm> },
}

impl RadialKernel {
    pub fn zero() -> Self {
        Self::ClosedForm(ClosedForm::Zero)
    }

    pub fn power(exponent: f64) -> Self {
        Self::ClosedForm(ClosedForm::Power {
            exponent,
            scale: 1.0,
        })
    }

    pub fn indicator(amplitude: f64, lo: f64, hi: f64) -> Self {
        Self::ClosedForm(ClosedForm::Indicator { amplitude, lo, hi })
    }

    pub fn piecewise_constant(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let k = Self::PiecewiseConstant {
            breakpoints,
            values,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::PiecewiseConstant {
                breakpoints,
                values,
            } => {
                if breakpoints.len() < 2 || values.len() + 1 != breakpoints.len() {
                    return Err(Error::Config(
                        "piecewise-constant kernel needs len(values) = len(breakpoints) - 1 >= 1"
                            .into(),
                    ));
                }
                if breakpoints.iter().any(|b| !(0.0..=1.0).contains(b))
                    || breakpoints.windows(2).any(|p| p[1] <= p[0])
                {
                    return Err(Error::Config(
                        "breakpoints must be strictly increasing within [0, 1]".into(),
                    ));
                }
            }
            Self::BumpSum { terms } => {
                if terms.iter().any(|t| t.halfwidth <= 0.0) {
                    return Err(Error::Config("bump halfwidth must be positive".into()));
                }
            }
            Self::ClosedForm(ClosedForm::GaussianBump { width, .. }) if *width <= 0.0 => {
                return Err(Error::Config("Gaussian bump width must be positive".into()));
            }
            _ => {}
        }
        Ok(())
    }

    /// Binds basis references so the kernel can be evaluated.
    pub fn resolve(&self, registry: &BasisRegistry) -> Result<Kernel> {
        self.validate()?;
        let basis = match self {
            Self::BasisExpansion {
                coefficients,
                basis,
            } => {
                let family = registry.get(basis)?;
                if coefficients.len() > family.n() {
                    return Err(Error::Config(format!(
                        "{} coefficients for basis '{basis}' of size {}",
                        coefficients.len(),
                        family.n()
                    )));
                }
                Some(family)
            }
            _ => None,
        };
        Ok(Kernel {
            spec: self.clone(),
            basis,
        })
    }

    /// Resolves without a registry; fails for basis expansions.
    pub fn standalone(&self) -> Result<Kernel> {
        self.resolve(&BasisRegistry::default())
    }

    pub fn eval(&self, r: f64, registry: &BasisRegistry) -> Result<f64> {
        self.resolve(registry)?.eval(r)
    }
}

/// A kernel with any basis reference bound.
#[derive(Debug, Clone)]
pub struct Kernel {
    spec: RadialKernel,
    basis: Option<Arc<BasisFamily>>,
}

impl Kernel {
    pub fn expansion(coefficients: Vec<f64>, basis: Arc<BasisFamily>) -> Result<Self> {
        if coefficients.len() > basis.n() {
            return Err(Error::Config(format!(
                "{} coefficients for a basis of size {}",
                coefficients.len(),
                basis.n()
            )));
        }
        Ok(Self {
            spec: RadialKernel::BasisExpansion {
                coefficients,
                basis: basis.id().to_string(),
            },
            basis: Some(basis),
        })
    }

    pub fn spec(&self) -> &RadialKernel {
        &self.spec
    }

    pub fn eval(&self, r: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::Domain(format!("r = {r} outside [0, 1]")));
        }
        Ok(self.value(r))
    }

    pub fn is_zero(&self) -> bool {
        match &self.spec {
            RadialKernel::ClosedForm(ClosedForm::Zero) => true,
            RadialKernel::BasisExpansion { coefficients, .. } => {
                coefficients.iter().all(|&c| c == 0.0)
            }
            RadialKernel::PiecewiseConstant { values, .. } => values.iter().all(|&v| v == 0.0),
            RadialKernel::BumpSum { terms } => terms.iter().all(|t| t.amplitude == 0.0),
            _ => false,
        }
    }
}

impl Radial for Kernel {
    fn value(&self, r: f64) -> f64 {
        match &self.spec {
            RadialKernel::ClosedForm(c) => match *c {
                ClosedForm::Power { exponent, scale } => scale * r.powf(exponent),
                ClosedForm::Indicator { amplitude, lo, hi } => {
                    if (lo..=hi).contains(&r) {
                        amplitude
                    } else {
                        0.0
                    }
                }
                ClosedForm::GaussianBump {
                    center,
                    width,
                    amplitude,
                } => amplitude * (-(r - center).powi(2) / (2.0 * width * width)).exp(),
                ClosedForm::Zero => 0.0,
            },
            RadialKernel::BasisExpansion { coefficients, .. } => self
                .basis
                .as_ref()
                .expect("resolved expansion carries its basis")
                .combination(coefficients, r),
            RadialKernel::PiecewiseConstant {
                breakpoints,
                values,
            } => {
                let last = breakpoints.len() - 1;
                if r < breakpoints[0] || r > breakpoints[last] {
                    return 0.0;
                }
                let i = breakpoints.partition_point(|&b| b <= r);
                values[(i.max(1) - 1).min(values.len() - 1)]
            }
            RadialKernel::BumpSum { terms } => terms
                .iter()
                .map(|t| t.amplitude * bump((r - t.center) / t.halfwidth))
                .sum(),
        }
    }
}

/// `e · exp(−1/(1 − 4u²))` on `|u| < 1/2`, zero elsewhere. Peaks at `bump(0) = 1`.
pub fn bump(u: f64) -> f64 {
    let q = 1.0 - 4.0 * u * u;
    if q < 1e-12 {
        return 0.0;
    }
    (1.0 - 1.0 / q).exp()
}

/// Sobolev ellipsoid `{θ : Σ k^{2β} θ_k² ≤ L}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SobolevSpec {
    pub beta: f64,
    pub radius: f64,
}

impl SobolevSpec {
    pub fn new(beta: f64, radius: f64) -> Result<Self> {
        if !(beta > 0.0 && radius > 0.0) {
            return Err(Error::Domain(format!(
                "Sobolev class needs beta > 0 and L > 0, got beta = {beta}, L = {radius}"
            )));
        }
        Ok(Self { beta, radius })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipsoidCheck {
    pub member: bool,
    pub sum: f64,
}

/// `Σ_k k^{2β} θ_k²` with `k` starting at 1.
pub fn ellipsoid_check(theta: &[f64], spec: &SobolevSpec) -> EllipsoidCheck {
    let sum: f64 = theta
        .iter()
        .enumerate()
        .map(|(i, t)| ((i + 1) as f64).powf(2.0 * spec.beta) * t * t)
        .sum();
    EllipsoidCheck {
        member: sum <= spec.radius,
        sum,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SobolevTail {
    pub tail: f64,
    pub bound: f64,
}

/// Tail energy `Σ_{k>n} θ_k²` against the class bound `L n^{−2β}`.
pub fn sobolev_tail(theta: &[f64], n: usize, spec: &SobolevSpec) -> Result<SobolevTail> {
    if n == 0 {
        return Err(Error::Precondition("tail index n must be at least 1".into()));
    }
    let check = ellipsoid_check(theta, spec);
    if !check.member {
        return Err(Error::Precondition(format!(
            "coefficients outside the ellipsoid: sum {} > L = {}",
            check.sum, spec.radius
        )));
    }
    let tail: f64 = theta.iter().skip(n).map(|t| t * t).sum();
    let bound = spec.radius * (n as f64).powf(-2.0 * spec.beta);
    if tail > bound * (1.0 + 1e-12) {
        return Err(Error::Contract(format!(
            "tail {tail} exceeds bound {bound} at n = {n}"
        )));
    }
    Ok(SobolevTail { tail, bound })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolderReport {
    /// Derivative order `l = ⌈β⌉ − 1` whose increments are tested.
    pub order: usize,
    /// `max |f^(l)(x) − f^(l)(y)| / |x − y|^{β−l}` over grid pairs.
    pub max_quotient: f64,
    pub passes: bool,
}

/// Grid check of `|f^(l)(x) − f^(l)(y)| ≤ L |x − y|^{β−l}` on `[lo, hi]`, with
/// `f^(l)` approximated by forward differences.
pub fn holder_check<K: Radial + ?Sized>(
    f: &K,
    beta: f64,
    lipschitz: f64,
    lo: f64,
    hi: f64,
    points: usize,
) -> Result<HolderReport> {
    if beta <= 0.0 || lipschitz <= 0.0 || points < 3 || hi <= lo {
        return Err(Error::Domain("invalid Hölder check parameters".into()));
    }
    let order = (beta.ceil() as usize).saturating_sub(1);
    let step = (hi - lo) / (points - 1) as f64;
    let mut vals: Vec<f64> = (0..points).map(|i| f.value(lo + i as f64 * step)).collect();
    for _ in 0..order {
        vals = vals.windows(2).map(|p| (p[1] - p[0]) / step).collect();
    }
    let expo = beta - order as f64;
    let mut max_quotient = 0.0f64;
    for i in 0..vals.len() {
        for j in i + 1..vals.len() {
            let gap = ((j - i) as f64 * step).powf(expo);
            max_quotient = max_quotient.max((vals[j] - vals[i]).abs() / gap);
        }
    }
    Ok(HolderReport {
        order,
        max_quotient,
        passes: max_quotient <= lipschitz * (1.0 + 1e-9),
    })
}
