//! Gauss–Legendre quadrature on (0, 1) with an endpoint-clustering change of
//! variables, used for expectations under Beta laws whose integrands blow up
//! polynomially at p → 0 or p → 1.

use std::f64::consts::PI;

/// Default node count.
pub const DEFAULT_NODES: usize = 128;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // three-term recurrence for P_n(x) and P_{n-1}(x)
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let k = k as f64;
                let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// A quadrature rule for ∫₀¹ f(p) dp after the substitution
/// `p = u^k / (u^k + (1-u)^k)`, which packs nodes against both endpoints.
#[derive(Clone, Debug)]
pub struct UnitRule {
    points: Vec<(f64, f64)>,
    weights: Vec<f64>,
}

impl UnitRule {
    pub fn new(n: usize, clustering: u32) -> Self {
        let (x, w) = gauss_legendre(n);
        let k = clustering as f64;
        let mut points = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for (xi, wi) in x.into_iter().zip(w) {
            let u = 0.5 * (xi + 1.0);
            let a = u.powf(k);
            let b = (1.0 - u).powf(k);
            let p = a / (a + b);
            let q = b / (a + b);
            let jac = k * u.powf(k - 1.0) * (1.0 - u).powf(k - 1.0) / ((a + b) * (a + b));
            if p > 0.0 && q > 0.0 && jac > 0.0 {
                points.push((p, q));
                weights.push(0.5 * wi * jac);
            }
        }
        Self { points, weights }
    }

    /// The integrand receives `(p, 1 - p)`, the complement computed without
    /// cancellation.
    pub fn integrate(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(&(p, q), &w)| w * f(p, q)).sum()
    }
}

/// Integral with a node-doubling error estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub error_estimate: f64,
}

/// ∫₀¹ f(p) dp using `n` and `2n` nodes; the difference is the error estimate.
pub fn integrate_unit(f: impl Fn(f64, f64) -> f64, n: usize, clustering: u32) -> Integral {
    let coarse = UnitRule::new(n, clustering).integrate(&f);
    let fine = UnitRule::new(2 * n, clustering).integrate(&f);
    Integral { value: fine, error_estimate: (fine - coarse).abs() }
}
