use std::sync::OnceLock;

use crate::error::{Error, Result};

pub const MAX_GAUSS_POINTS: usize = 64;

/// Gauss–Legendre rule on the reference interval `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussRule {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Nodes in increasing order.
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Nodes and weights mapped affinely onto `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        self.points
            .iter()
            .zip(&self.weights)
            .map(move |(t, w)| (a + half * (t + 1.0), half * w))
    }
}

/// `n`-point Gauss–Legendre rule, `1 <= n <= 64`.
pub fn gauss_legendre(n: usize) -> Result<GaussRule> {
    gauss_ref(n).cloned()
}

pub(crate) fn gauss_ref(n: usize) -> Result<&'static GaussRule> {
    static TABLE: OnceLock<Vec<GaussRule>> = OnceLock::new();
    if !(1..=MAX_GAUSS_POINTS).contains(&n) {
        return Err(Error::argument(format!(
            "Gauss rule size {n} outside 1..={MAX_GAUSS_POINTS}"
        )));
    }
    let table = TABLE.get_or_init(|| (1..=MAX_GAUSS_POINTS).map(compute).collect());
    Ok(&table[n - 1])
}

/// Newton iteration on the Legendre polynomial from Chebyshev-like initial guesses.
fn compute(n: usize) -> GaussRule {
    let mut points = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for k in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        points[k] = -x;
        points[n - 1 - k] = x;
        weights[k] = w;
        weights[n - 1 - k] = w;
    }
    if n % 2 == 1 {
        points[n / 2] = 0.0;
    }
    GaussRule { points, weights }
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}
