//! Experiment runners. Each one writes its tables into a [`Sink`] and returns a
//! typed report that is also saved as JSON.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use tlse_core::basis::{BasisFamily, BasisSpec};
use tlse_core::estimator::{assemble, choose_dimension, estimate, l2rho_risk, EstimatorKind, TruthProjection};
use tlse_core::io::{export_dataset_csv, export_normal_system, read_dataset, write_dataset};
use tlse_core::lowerbound::{
    build_intervals, certify_hypotheses, fano_basis, fano_experiment, varshamov_gilbert, CELLS_PER_INTERVAL,
    DEFAULT_CODEBOOK_TRIES, TARGET_ALPHA,
};
use tlse_core::measure::DensityModel;
use tlse_core::quadrature::QuadratureGrid;
use tlse_core::rng::SeedTree;
use tlse_core::sim::{forward, generate, sample_positions, Dataset, NoiseLaw, SystemConfig};
use tlse_core::theory::{
    bernstein_tail_bound, coercivity_constant, discretized_normal_operator, hs_norm_g, kappa_surrogate,
    lambda_min_replicates, normal_vector_moment_scaling, pacbayes_min_samples, pacbayes_tail_bound,
    per_sample_identity, replicate_tree, MomentCell, TailBoundParams, TailFrequency,
};

use crate::config::{ExperimentConfig, ExperimentKind, KernelConfig, Truth};
use crate::fit::{fit_loglog_slope, LogLogFit};
use crate::output::{f, Sink};
use crate::plot::LogLogPlot;

/// Child keys of the config's seed tree, one per independent task.
mod keys {
    pub const KAPPA: u64 = 200;
    pub const MOMENTS: u64 = 201;
    pub const IDENTITY: u64 = 202;
    pub const MONTE_CARLO: u64 = 203;
    pub const LOWERBOUND: u64 = 204;
    pub const TAIL: u64 = 205;
    pub const RATE: u64 = 206;
}

/// Mean risks at or below this are treated as exact recovery.
pub const DEGENERATE_RISK: f64 = 1e-20;

/// Identity checks must hold to this absolute tolerance.
pub const IDENTITY_TOL: f64 = 1e-12;

const PROJECTION_PANELS: usize = 64;
const PROJECTION_ORDER: usize = 16;
const OPERATOR_PANELS: usize = 64;

/// Runs the experiment named in the config.
pub fn run(cfg: &ExperimentConfig, sink: &Sink) -> Result<String> {
    Ok(match cfg.experiment.name {
        ExperimentKind::RateSweep => {
            let r = run_rate_sweep(cfg, sink)?;
            match (&r.fit, &r.notice) {
                (Some(fit), _) => format!(
                    "rate_sweep: slope {:.4} (reference {:.4}), R² {:.4}",
                    fit.slope, r.reference_slope, fit.r_squared
                ),
                (None, Some(n)) => format!("rate_sweep: {n}"),
                (None, None) => "rate_sweep: no fit".into(),
            }
        }
        ExperimentKind::TailSweep => {
            let r = run_tail_sweep(cfg, sink)?;
            format!(
                "tail_sweep: {} cells, {} violate the Bernstein bound",
                r.rows.len(),
                r.rows.iter().filter(|c| c.bernstein_violated()).count()
            )
        }
        ExperimentKind::Coercivity => {
            let r = run_coercivity(cfg, sink)?;
            format!(
                "coercivity: target {:.6}, lambda_min {:?}, hs_norm {:.6}, identity residual {:.3e}",
                r.target,
                r.operator.iter().map(|o| o.lambda_min).collect::<Vec<_>>(),
                r.hs_norm,
                r.identity_residual
            )
        }
        ExperimentKind::Lowerbound => {
            let r = run_lowerbound(cfg, sink)?;
            r.rows
                .iter()
                .map(|row| match &row.failure {
                    Some(why) => format!("lowerbound K̄={}: not certified ({why})", row.kbar),
                    None => format!(
                        "lowerbound K̄={}: p_e {:.4} ± {:.4}, floor {:.4}",
                        row.kbar, row.error_rate, row.std_error, row.floor
                    ),
                })
                .collect::<Vec<_>>()
                .join("\n")
        }
        ExperimentKind::IdentitySuite => {
            let r = run_identity_suite(cfg, sink)?;
            r.checks
                .iter()
                .map(|c| format!("{}: max residual {:.3e}", c.check, c.max_residual))
                .collect::<Vec<_>>()
                .join("\n")
        }
        ExperimentKind::Simulate => {
            let path = run_simulate(cfg, sink)?;
            format!("simulate: wrote {}", path.display())
        }
        ExperimentKind::Estimate => {
            let r = run_estimate(cfg, sink)?;
            format!("estimate: gated = {}, lambda_min = {:.6e}", r.gated, r.lambda_min)
        }
    })
}

fn system_with(cfg: &ExperimentConfig, m: usize) -> SystemConfig {
    let mut s = cfg.system.clone();
    s.n_samples = m;
    s
}

fn nested(spec: &BasisSpec) -> bool {
    !matches!(spec, BasisSpec::Haar { .. })
}

/// Families for each dimension in `ns`. Nested families are built once at the
/// largest size needed; Haar is rebuilt for each `n`.
fn families(
    spec: &BasisSpec,
    model: &DensityModel,
    ns: &[usize],
    at_least: usize,
) -> Result<BTreeMap<usize, Arc<BasisFamily>>> {
    let mut out = BTreeMap::new();
    if nested(spec) {
        let size = ns.iter().copied().max().unwrap_or(0).max(at_least).max(spec.n());
        let fam = Arc::new(spec.with_n(size).build(model)?);
        for &n in ns {
            out.insert(n, fam.clone());
        }
    } else {
        for &n in ns {
            if let std::collections::btree_map::Entry::Vacant(slot) = out.entry(n) {
                slot.insert(Arc::new(spec.with_n(n).build(model)?));
            }
        }
    }
    Ok(out)
}

fn truth_for(cfg: &ExperimentConfig, model: &DensityModel, shared: Option<&Arc<BasisFamily>>) -> Result<Truth> {
    let modes = cfg.kernel.modes();
    if modes == 0 {
        return cfg.kernel.build(None);
    }
    match shared {
        Some(fam) if fam.n() >= modes => cfg.kernel.build(Some(fam)),
        _ => {
            let fam = Arc::new(cfg.basis.with_n(modes.max(cfg.basis.n())).build(model)?);
            cfg.kernel.build(Some(&fam))
        }
    }
}

/// Quadrature grid whose panel edges include the truth's jumps and the cell
/// edges of a local basis.
fn projection_grid(basis: &BasisFamily, n: usize, truth: &Truth) -> QuadratureGrid {
    let (lo, hi) = basis.interval();
    let mut edges: Vec<f64> = (0..=PROJECTION_PANELS)
        .map(|i| lo + (hi - lo) * i as f64 / PROJECTION_PANELS as f64)
        .collect();
    if basis.is_local() {
        edges.extend((1..n).map(|i| lo + (hi - lo) * i as f64 / n as f64));
    }
    edges.extend(truth.breakpoints().into_iter().filter(|&b| b > lo && b < hi));
    edges.extend(basis.model().breakpoints().into_iter().filter(|&b| b > lo && b < hi));
    edges.sort_by(f64::total_cmp);
    edges.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    QuadratureGrid::on_breakpoints(&edges, PROJECTION_ORDER.max(n / 2 + 8))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatePoint {
    #[serde(rename = "M")]
    pub m: usize,
    pub n: usize,
    pub mean_risk: f64,
    pub std_error: f64,
    pub replicates: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFitResult {
    pub points: Vec<RatePoint>,
    pub fit: Option<LogLogFit>,
    pub reference_slope: f64,
    pub notice: Option<String>,
}

/// Mean `L²_ρ` risk of the configured estimator over a grid of sample sizes.
pub fn run_rate_sweep(cfg: &ExperimentConfig, sink: &Sink) -> Result<RateFitResult> {
    let e = &cfg.experiment;
    let model = cfg.density()?;
    let ns: Vec<usize> = e
        .m_list
        .iter()
        .map(|&m| match e.n {
            Some(n) => Ok(n),
            None => choose_dimension(m, e.beta, e.gamma),
        })
        .collect::<Result<_, _>>()?;
    let fams = families(&cfg.basis, &model, &ns, cfg.kernel.modes())?;
    let shared = if nested(&cfg.basis) { fams.values().next() } else { None };
    let truth = truth_for(cfg, &model, shared)?;
    let kind = match e.estimator {
        Some(k) => k,
        None => EstimatorKind::Tlse {
            threshold: cfg.threshold()?,
        },
    };
    let tree = cfg.tree().child(keys::RATE);
    let mut points = Vec::with_capacity(ns.len());
    for (mi, (&m, &n)) in e.m_list.iter().zip(&ns).enumerate() {
        let fam = &fams[&n];
        let projection = match (&truth.coefficients, shared) {
            (Some(c), Some(_)) => TruthProjection::from_coefficients(c.clone()),
            _ => TruthProjection::by_quadrature(&truth.kernel, fam, n, &projection_grid(fam, n, &truth)),
        };
        let system = system_with(cfg, m);
        let sub = tree.child(mi as u64);
        let risks: Vec<Option<f64>> = (0..e.replicates)
            .into_par_iter()
            .map(|rep| -> Result<Option<f64>> {
                let data = generate(&system, &truth.kernel, None, &replicate_tree(&sub, rep))?;
                let normal = assemble(&data, fam, n)?;
                Ok(match estimate(&normal, kind) {
                    Ok(res) => Some(l2rho_risk(&res, &projection)).filter(|r| r.is_finite()),
                    Err(_) => None,
                })
            })
            .collect::<Result<_>>()?;
        let ok: Vec<f64> = risks.iter().flatten().copied().collect();
        let k = ok.len();
        let mean = if k > 0 { ok.iter().sum::<f64>() / k as f64 } else { f64::NAN };
        let std_error = if k > 1 {
            (ok.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (k - 1) as f64 / k as f64).sqrt()
        } else {
            f64::NAN
        };
        points.push(RatePoint {
            m,
            n,
            mean_risk: mean,
            std_error,
            replicates: k,
            failed: risks.len() - k,
        });
    }

    let reference_slope = -2.0 * e.beta / (2.0 * e.beta + 1.0);
    let xy: Vec<(f64, f64)> = points.iter().map(|p| (p.m as f64, p.mean_risk)).collect();
    let (fit, notice) = if xy.iter().all(|p| p.1.is_finite() && p.1 <= DEGENERATE_RISK) {
        (
            None,
            Some(format!("degenerate data: every mean risk is at most {DEGENERATE_RISK:e}, slope fit skipped")),
        )
    } else {
        match fit_loglog_slope(&xy) {
            Ok(fit) => (Some(fit), None),
            Err(err) => (None, Some(format!("slope fit skipped: {err}"))),
        }
    };

    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            vec![
                p.m.to_string(),
                p.n.to_string(),
                f(p.mean_risk),
                f(p.std_error),
                p.replicates.to_string(),
                p.failed.to_string(),
            ]
        })
        .collect();
    sink.csv("rate_sweep.csv", &["M", "n", "mean_risk", "std_error", "replicates", "failed"], &rows)?;
    let svg = LogLogPlot {
        title: "L2(rho) risk against sample size",
        x_label: "M",
        y_label: "mean risk",
        points: &xy,
        fit: fit.map(|f| (f.slope, f.intercept)),
        reference_slope: Some(reference_slope),
    }
    .render();
    sink.text("rate_sweep.svg", &svg)?;
    let result = RateFitResult {
        points,
        fit,
        reference_slope,
        notice,
    };
    sink.json("rate_fit.json", &result)?;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailRow {
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub epsilon: f64,
    pub threshold: f64,
    pub freq: TailFrequency,
    pub bernstein_raw: f64,
    pub pacbayes_threshold: f64,
    pub pacbayes_frequency: f64,
    /// NaN below the bound's minimum sample size.
    pub pacbayes_raw: f64,
    pub cmax: f64,
    pub kappa: f64,
}

impl TailRow {
    pub fn bernstein_vacuous(&self) -> bool {
        self.bernstein_raw >= 1.0
    }

    pub fn pacbayes_vacuous(&self) -> bool {
        !(self.pacbayes_raw < 1.0)
    }

    /// Empirical frequency above the bound plus the Wilson half-width in a
    /// cell where the bound is informative.
    pub fn bernstein_violated(&self) -> bool {
        !self.bernstein_vacuous() && self.freq.frequency > self.bernstein_raw + self.freq.half_width()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailReport {
    pub coercivity: f64,
    pub rows: Vec<TailRow>,
    pub moments: Vec<MomentCell>,
    /// max/min of `(E‖b − b∞‖⁴)^{1/2}·M/n` over the moment grid.
    pub moment_ratio: Option<f64>,
}

/// Truth coefficients in the polynomial family for the moment-scaling grid:
/// the configured series, or `k^{−(β+3/4)}`, cut at `2·n_max` modes.
fn moment_truth(cfg: &ExperimentConfig, n_max: usize) -> Vec<f64> {
    let len = 2 * n_max;
    match &cfg.kernel {
        KernelConfig::Series { decay, modes, scale } => {
            (1..=len.min(*modes)).map(|k| scale * (k as f64).powf(-decay)).collect()
        }
        KernelConfig::Expansion { coefficients } => coefficients.iter().copied().take(len).collect(),
        _ => (1..=len).map(|k| (k as f64).powf(-(cfg.experiment.beta + 0.75))).collect(),
    }
}

/// Empirical left-tail frequencies of `λ_min(A)` next to both tail bounds.
pub fn run_tail_sweep(cfg: &ExperimentConfig, sink: &Sink) -> Result<TailReport> {
    let e = &cfg.experiment;
    let model = cfg.density()?;
    let np = cfg.system.n_particles;
    let c = coercivity_constant(np)?;
    let fams = families(&cfg.basis, &model, &e.n_list, 0)?;
    let tree = cfg.tree().child(keys::TAIL);
    let mut rows = Vec::new();
    for (ni, &n) in e.n_list.iter().enumerate() {
        let fam = &fams[&n];
        let cmax = fam.cmax_prefix(n);
        let kappa = kappa_surrogate(
            fam,
            n,
            &system_with(cfg, e.mc_samples),
            e.mc_samples,
            &cfg.tree().child(keys::KAPPA).child(ni as u64),
        )?;
        for (mi, &m) in e.m_list.iter().enumerate() {
            let samples = lambda_min_replicates(
                &system_with(cfg, m),
                fam,
                n,
                e.replicates,
                &tree.child(ni as u64).child(mi as u64),
            )?;
            for &epsilon in &e.epsilons {
                let p = TailBoundParams {
                    n,
                    m,
                    epsilon,
                    c,
                    cmax,
                    kappa,
                    n_particles: np,
                };
                let threshold = (1.0 - epsilon) * c;
                let pac_threshold = threshold / 2.0;
                let pac_count = samples.iter().filter(|&&l| l <= pac_threshold).count();
                let pacbayes_raw = if n >= 2 && (m as f64) >= pacbayes_min_samples(&p) {
                    pacbayes_tail_bound(&p)?.raw
                } else {
                    f64::NAN
                };
                rows.push(TailRow {
                    n,
                    m,
                    epsilon,
                    threshold,
                    freq: TailFrequency::from_samples(&samples, threshold),
                    bernstein_raw: bernstein_tail_bound(&p)?.raw,
                    pacbayes_threshold: pac_threshold,
                    pacbayes_frequency: pac_count as f64 / samples.len() as f64,
                    pacbayes_raw,
                    cmax,
                    kappa,
                });
            }
        }
    }
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.n.to_string(),
                r.m.to_string(),
                f(r.epsilon),
                f(r.threshold),
                f(r.freq.frequency),
                f(r.freq.ci_lo),
                f(r.freq.ci_hi),
                f(r.bernstein_raw),
                f(r.pacbayes_raw),
                r.freq.count.to_string(),
                r.freq.reps.to_string(),
                u8::from(r.bernstein_vacuous()).to_string(),
                f(r.pacbayes_threshold),
                f(r.pacbayes_frequency),
                u8::from(r.pacbayes_vacuous()).to_string(),
                f(r.cmax),
                f(r.kappa),
            ]
        })
        .collect();
    sink.csv(
        "tail_sweep.csv",
        &[
            "n",
            "M",
            "epsilon",
            "threshold",
            "frequency",
            "ci_lo",
            "ci_hi",
            "bernstein_raw",
            "pacbayes_raw",
            "count",
            "replicates",
            "bernstein_vacuous",
            "pacbayes_threshold",
            "pacbayes_frequency",
            "pacbayes_vacuous",
            "cmax",
            "kappa",
        ],
        &table,
    )?;

    let mut moments = Vec::new();
    let mut moment_ratio = None;
    if !e.moment_n_list.is_empty() && !e.moment_m_list.is_empty() {
        let n_max = *e.moment_n_list.iter().max().unwrap();
        let coeffs = moment_truth(cfg, n_max);
        let (lo, hi) = cfg.basis.interval(&model)?;
        let spec = BasisSpec::Poly {
            n: coeffs.len().max(n_max),
            interval: Some([lo, hi]),
        };
        let fam = Arc::new(spec.build(&model)?);
        let (lo, hi) = fam.interval();
        let grid = QuadratureGrid::composite(lo, hi, OPERATOR_PANELS, coeffs.len() / 2 + 12);
        moments = normal_vector_moment_scaling(
            &cfg.system,
            &fam,
            &coeffs,
            &e.moment_n_list,
            &e.moment_m_list,
            e.moment_replicates,
            &cfg.tree().child(keys::MOMENTS),
            &grid,
        )?;
        let (lo, hi) = moments
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(a, b), c| (a.min(c.b_normalized), b.max(c.b_normalized)));
        moment_ratio = Some(hi / lo);
        let table: Vec<Vec<String>> = moments
            .iter()
            .map(|c| {
                vec![
                    c.n.to_string(),
                    c.m.to_string(),
                    f(c.a_moment),
                    f(c.b_moment),
                    f(c.a_normalized),
                    f(c.b_normalized),
                ]
            })
            .collect();
        sink.csv(
            "moment_scaling.csv",
            &["n", "M", "a_moment", "b_moment", "a_normalized", "b_normalized"],
            &table,
        )?;
    }
    let report = TailReport {
        coercivity: c,
        rows,
        moments,
        moment_ratio,
    };
    sink.json("tail_sweep.json", &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatorRow {
    pub n: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloLambda {
    #[serde(rename = "M")]
    pub m: usize,
    pub n: usize,
    pub replicates: usize,
    pub mean: f64,
    /// Standard deviation of a single draw.
    pub sd: f64,
    pub min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoercivityReport {
    pub n_particles: usize,
    pub target: f64,
    pub operator: Vec<OperatorRow>,
    pub hs_norm: f64,
    pub identity_residual: f64,
    pub monte_carlo: Option<MonteCarloLambda>,
}

/// Smallest eigenvalues of the discretized limit operator, its Hilbert–Schmidt
/// kernel norm, the identity residual, and a Monte Carlo check.
pub fn run_coercivity(cfg: &ExperimentConfig, sink: &Sink) -> Result<CoercivityReport> {
    let e = &cfg.experiment;
    let model = cfg.density()?;
    ensure!(model.is_uniform_pair(), "coercivity needs iid uniform positions");
    let np = cfg.system.n_particles;
    let target = coercivity_constant(np)?;
    let n_max = e.n_list.iter().copied().max().unwrap_or(1).max(e.mc_n);
    let fam = Arc::new(cfg.basis.with_n(n_max.max(cfg.basis.n())).build(&model)?);
    let (lo, hi) = fam.interval();
    let mut operator = Vec::new();
    for &n in &e.n_list {
        let grid = QuadratureGrid::composite(lo, hi, OPERATOR_PANELS, n / 2 + 12);
        let op = discretized_normal_operator(&fam, n, np, &grid)?;
        operator.push(OperatorRow {
            n,
            lambda_min: op.lambda_min(),
            lambda_max: op.lambda_max(),
        });
    }
    let hs_norm = hs_norm_g(&QuadratureGrid::composite(0.0, 1.0, e.hs_panels, 8));
    let checks = identity_checks(&cfg.tree().child(keys::IDENTITY), e.identity_trials);
    let identity_residual = checks[0].max_residual;

    let monte_carlo = if e.mc_replicates > 0 && e.mc_samples > 0 {
        let lams = lambda_min_replicates(
            &system_with(cfg, e.mc_samples),
            &fam,
            e.mc_n,
            e.mc_replicates,
            &cfg.tree().child(keys::MONTE_CARLO),
        )?;
        let k = lams.len() as f64;
        let mean = lams.iter().sum::<f64>() / k;
        let sd = if lams.len() > 1 {
            (lams.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(MonteCarloLambda {
            m: e.mc_samples,
            n: e.mc_n,
            replicates: lams.len(),
            mean,
            sd,
            min: lams.iter().copied().fold(f64::INFINITY, f64::min),
        })
    } else {
        None
    };

    let rows: Vec<Vec<String>> = operator
        .iter()
        .map(|o| vec![o.n.to_string(), f(o.lambda_min), f(o.lambda_max), f(target), f(o.lambda_min - target)])
        .collect();
    sink.csv("coercivity.csv", &["n", "lambda_min", "lambda_max", "target", "gap"], &rows)?;
    let report = CoercivityReport {
        n_particles: np,
        target,
        operator,
        hs_norm,
        identity_residual,
        monte_carlo,
    };
    sink.json("coercivity.json", &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityCheck {
    pub check: String,
    pub trials: usize,
    pub max_residual: f64,
    pub tolerance: f64,
}

impl IdentityCheck {
    pub fn passes(&self) -> bool {
        self.max_residual <= self.tolerance
    }
}

/// A random smooth kernel `a + b r + c cos(w r) + d r^p`.
fn random_kernel(rng: &mut impl Rng) -> impl Fn(f64) -> f64 + Sync + Copy {
    let a = rng.random_range(-1.0..1.0);
    let b = rng.random_range(-1.0..1.0);
    let c = rng.random_range(-1.0..1.0);
    let w = rng.random_range(0.5..8.0);
    let d = rng.random_range(-1.0..1.0);
    let p = rng.random_range(0.5..3.0);
    move |r: f64| a + b * r + c * (w * r).cos() + d * r.powf(p)
}

/// Residuals of the per-sample energy identity, momentum conservation, and
/// linearity of the forward operator over `trials` random `(X, φ)` pairs.
pub fn identity_checks(tree: &SeedTree, trials: usize) -> Vec<IdentityCheck> {
    let residuals: Vec<[f64; 3]> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree.stream(t as u64);
            let n = rng.random_range(3..=8usize);
            let d = rng.random_range(1..=3usize);
            let x: Vec<f64> = (0..n * d).map(|_| rng.random::<f64>()).collect();
            let phi = random_kernel(&mut rng);
            let psi = random_kernel(&mut rng);
            let (s, u) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let identity = per_sample_identity(&phi, &x, n, d);
            let r = forward(&phi, &x, n, d);
            let momentum = (0..d)
                .map(|c| (0..n).map(|i| r[i * d + c]).sum::<f64>().abs())
                .fold(0.0, f64::max);
            let combo = move |v: f64| s * phi(v) + u * psi(v);
            let lhs = forward(&combo, &x, n, d);
            let rp = forward(&psi, &x, n, d);
            let linearity = lhs
                .iter()
                .zip(r.iter().zip(&rp))
                .map(|(l, (a, b))| (l - s * a - u * b).abs())
                .fold(0.0, f64::max);
            [identity, momentum, linearity]
        })
        .collect();
    ["per_sample_identity", "momentum", "linearity"]
        .iter()
        .enumerate()
        .map(|(k, name)| IdentityCheck {
            check: name.to_string(),
            trials,
            max_residual: residuals.iter().map(|r| r[k]).fold(0.0, f64::max),
            tolerance: IDENTITY_TOL,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityReport {
    pub checks: Vec<IdentityCheck>,
}

pub fn run_identity_suite(cfg: &ExperimentConfig, sink: &Sink) -> Result<IdentityReport> {
    let checks = identity_checks(&cfg.tree().child(keys::IDENTITY), cfg.experiment.identity_trials);
    let rows: Vec<Vec<String>> = checks
        .iter()
        .map(|c| {
            vec![
                c.check.clone(),
                c.trials.to_string(),
                f(c.max_residual),
                f(c.tolerance),
                u8::from(c.passes()).to_string(),
            ]
        })
        .collect();
    sink.csv("identity.csv", &["check", "trials", "max_residual", "tolerance", "passes"], &rows)?;
    let report = IdentityReport { checks };
    sink.json("identity.json", &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LowerboundRow {
    pub kbar: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub min_hamming: usize,
    pub halfwidth: f64,
    pub amplitude: f64,
    pub scale: f64,
    pub alpha: f64,
    pub min_distance: f64,
    pub separation: f64,
    pub holder_quotient: f64,
    pub certified: bool,
    /// Failing certificate condition, if any.
    pub failure: Option<String>,
    pub error_rate: f64,
    pub std_error: f64,
    pub floor: f64,
    pub gated: usize,
}

impl LowerboundRow {
    pub fn above_floor(&self) -> bool {
        self.certified && self.error_rate >= self.floor - 3.0 * self.std_error
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LowerboundReport {
    pub rows: Vec<LowerboundRow>,
}

/// Builds and certifies a hypothesis set for each `K̄` and measures the error
/// of the minimum-distance test against the Fano floor.
pub fn run_lowerbound(cfg: &ExperimentConfig, sink: &Sink) -> Result<LowerboundReport> {
    let e = &cfg.experiment;
    let model = cfg.density()?;
    let NoiseLaw::Gaussian { sigma } = cfg.system.noise else {
        bail!("lowerbound needs Gaussian noise");
    };
    let tree = cfg.tree().child(keys::LOWERBOUND);
    let x = sample_positions(&cfg.system, &tree)?;
    let zeros = vec![0.0; x.len()];
    let positions = Dataset::from_parts(cfg.system.clone(), None, x, zeros)?;
    let threshold = cfg.threshold()?;
    let mut rows = Vec::new();
    for &kbar in &e.kbar_list {
        let sub = tree.child(kbar as u64);
        let pack = build_intervals(&model, kbar, e.density_floor)?;
        let book = varshamov_gilbert(kbar, &sub, DEFAULT_CODEBOOK_TRIES)?;
        let set = certify_hypotheses(&pack, &book, e.beta, e.lipschitz, sigma, &positions, &model, TARGET_ALPHA)?;
        let alpha = set.alpha.unwrap_or(f64::NAN);
        let failure = if !(alpha < 0.125) {
            Some(format!("KL budget alpha = {alpha} is not below 1/8"))
        } else if set.min_distance < 2.0 * set.separation {
            Some(format!(
                "minimum distance {} is below twice the separation {}",
                set.min_distance, set.separation
            ))
        } else {
            None
        };
        let mut row = LowerboundRow {
            kbar,
            k: set.k(),
            min_hamming: set.codebook.min_distance,
            halfwidth: set.pack.halfwidth,
            amplitude: set.amplitude(),
            scale: set.scale,
            alpha,
            min_distance: set.min_distance,
            separation: set.separation,
            holder_quotient: set.holder_quotient,
            certified: failure.is_none(),
            failure,
            error_rate: f64::NAN,
            std_error: f64::NAN,
            floor: f64::NAN,
            gated: 0,
        };
        sink.json(&format!("hypotheses_K{kbar}.json"), &set)?;
        if row.certified {
            let basis = fano_basis(&pack, &model, CELLS_PER_INTERVAL)?;
            let out = fano_experiment(&set, &positions, &basis, threshold, e.fano_replicates, &sub)?;
            let records: Vec<Vec<String>> = out
                .records
                .iter()
                .map(|r| {
                    vec![
                        r.replicate.to_string(),
                        r.truth.to_string(),
                        r.chosen.to_string(),
                        u8::from(r.error).to_string(),
                    ]
                })
                .collect();
            sink.csv(&format!("fano_K{kbar}.csv"), &["replicate", "true_k", "chosen_k", "error"], &records)?;
            row.error_rate = out.error_rate;
            row.std_error = out.std_error;
            row.floor = out.floor;
            row.gated = out.gated;
        }
        rows.push(row);
    }
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.kbar.to_string(),
                r.k.to_string(),
                r.min_hamming.to_string(),
                f(r.halfwidth),
                f(r.amplitude),
                f(r.scale),
                f(r.alpha),
                f(r.min_distance),
                f(r.separation),
                u8::from(r.certified).to_string(),
                f(r.error_rate),
                f(r.std_error),
                f(r.floor),
                r.failure.clone().unwrap_or_default(),
            ]
        })
        .collect();
    sink.csv(
        "lowerbound.csv",
        &[
            "Kbar",
            "K",
            "min_hamming",
            "h",
            "amplitude",
            "scale",
            "alpha",
            "min_distance",
            "separation",
            "certified",
            "error_rate",
            "std_error",
            "fano_floor",
            "failure",
        ],
        &table,
    )?;
    let report = LowerboundReport { rows };
    sink.json("lowerbound.json", &report)?;
    Ok(report)
}

/// Prepends the manifest row to a file written by the core library.
fn stamp(sink: &Sink, path: &std::path::Path) -> Result<()> {
    let body = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    std::fs::write(path, format!("{}\n{body}", sink.manifest.row()))?;
    Ok(())
}

/// Draws a dataset and writes the binary file, its sidecar, and a CSV view.
pub fn run_simulate(cfg: &ExperimentConfig, sink: &Sink) -> Result<PathBuf> {
    let model = cfg.density()?;
    let fams = if cfg.kernel.modes() > 0 {
        families(&cfg.basis, &model, &[cfg.kernel.modes()], 0)?
    } else {
        BTreeMap::new()
    };
    let truth = truth_for(cfg, &model, fams.values().next())?;
    let data = generate(&cfg.system, &truth.kernel, Some(truth.spec.clone()), &cfg.tree())?;
    let path = match &cfg.experiment.dataset {
        Some(p) if p.is_absolute() => p.clone(),
        Some(p) => sink.path(&p.to_string_lossy()),
        None => sink.path("dataset.ikds"),
    };
    write_dataset(&data, &path)?;
    let csv = sink.path("dataset.csv");
    export_dataset_csv(&data, &csv)?;
    stamp(sink, &csv)?;
    Ok(path)
}

/// Fits the configured estimator on a saved dataset.
pub fn run_estimate(cfg: &ExperimentConfig, sink: &Sink) -> Result<tlse_core::estimator::EstimateResult> {
    let e = &cfg.experiment;
    let path = e.dataset.as_ref().context("estimate needs experiment.dataset")?;
    let data = read_dataset(path)?;
    let model = cfg.density()?;
    let n = e.n.unwrap_or(cfg.basis.n());
    let fam = cfg.basis.with_n(n.max(cfg.basis.n())).build(&model)?;
    let system = assemble(&data, &fam, n)?;
    let kind = match e.estimator {
        Some(k) => k,
        None => EstimatorKind::Tlse {
            threshold: cfg.threshold()?,
        },
    };
    let result = estimate(&system, kind)?;
    sink.json("estimate.json", &result)?;
    let normal = sink.path("normal_system.csv");
    export_normal_system(&system, &normal)?;
    stamp(sink, &normal)?;
    Ok(result)
}
