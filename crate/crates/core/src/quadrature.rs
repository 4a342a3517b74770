//! Gauss–Legendre rules and composite quadrature grids.

use serde::{Deserialize, Serialize};

/// Nodes and weights of the `order`-point Gauss–Legendre rule on [-1, 1].
///
/// Newton iteration on the three-term Legendre recurrence, started from the
/// Tricomi-type asymptotic guess; accurate to a few ulps well beyond order 1000.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1, "Gauss–Legendre order must be positive");
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Composite Gauss–Legendre grid on `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureGrid {
    pub lo: f64,
    pub hi: f64,
    pub panels: usize,
    pub order: usize,
    pub edges: Vec<f64>,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

pub const DEFAULT_PANELS: usize = 64;
pub const DEFAULT_ORDER: usize = 8;

impl QuadratureGrid {
    pub fn composite(lo: f64, hi: f64, panels: usize, order: usize) -> Self {
        let edges: Vec<f64> = (0..=panels)
            .map(|p| lo + (hi - lo) * p as f64 / panels as f64)
            .collect();
        Self::on_breakpoints(&edges, order)
    }

    pub fn default_on(lo: f64, hi: f64) -> Self {
        Self::composite(lo, hi, DEFAULT_PANELS, DEFAULT_ORDER)
    }

    /// One Gauss–Legendre panel per consecutive pair of `edges`.
    pub fn on_breakpoints(edges: &[f64], order: usize) -> Self {
        assert!(edges.len() >= 2, "need at least one panel");
        let (x, w) = gauss_legendre(order);
        let panels = edges.len() - 1;
        let mut nodes = Vec::with_capacity(panels * order);
        let mut weights = Vec::with_capacity(panels * order);
        for pair in edges.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            assert!(b > a, "panel edges must be strictly increasing");
            let half = 0.5 * (b - a);
            let mid = 0.5 * (b + a);
            for (xi, wi) in x.iter().zip(&w) {
                nodes.push(mid + half * xi);
                weights.push(half * wi);
            }
        }
        Self {
            lo: edges[0],
            hi: edges[edges.len() - 1],
            panels,
            order,
            edges: edges.to_vec(),
            nodes,
            weights,
        }
    }

    /// Same panels, each split in two.
    pub fn refined(&self) -> Self {
        let mut edges = Vec::with_capacity(2 * self.panels + 1);
        for p in self.edges.windows(2) {
            edges.push(p[0]);
            edges.push(0.5 * (p[0] + p[1]));
        }
        edges.push(self.hi);
        Self::on_breakpoints(&edges, self.order)
    }

    /// Refines until there are at least `panels` panels.
    pub fn refined_to(&self, panels: usize) -> Self {
        let mut g = self.clone();
        while g.panels < panels {
            g = g.refined();
        }
        g
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}
