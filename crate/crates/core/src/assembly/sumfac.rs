//! Sum-factorized contraction of per-direction weight matrices against a
//! tensor grid of point values.

use crate::cutgeom::TensorSpace;
use crate::error::{Error, Result};
use crate::quadrature::PointSuperset;

/// Values of a scalar field on the tensor grid of superset points.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientGrid {
    pub ext: [usize; 3],
    pub values: Vec<f64>,
}

impl CoefficientGrid {
    #[inline]
    pub fn at(&self, q: &[usize; 3]) -> f64 {
        self.values[(q[0] * self.ext[1] + q[1]) * self.ext[2] + q[2]]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Evaluates `c` once at every point of the superset tensor grid.
pub fn precompute_input(
    space: &TensorSpace,
    supersets: &[PointSuperset],
    c: &dyn Fn(&[f64]) -> f64,
) -> Result<CoefficientGrid> {
    let dim = space.dim();
    let mut ext = [1; 3];
    for d in 0..dim {
        ext[d] = supersets[d].len();
    }
    let mut values = Vec::with_capacity(ext.iter().product());
    let mut x = vec![0.0; dim];
    for q0 in 0..ext[0] {
        for q1 in 0..ext[1] {
            for q2 in 0..ext[2] {
                let q = [q0, q1, q2];
                for d in 0..dim {
                    x[d] = supersets[d].points()[q[d]];
                }
                let v = c(&x);
                if !v.is_finite() {
                    return Err(Error::Evaluation(x));
                }
                values.push(v);
            }
        }
    }
    Ok(CoefficientGrid { ext, values })
}

/// Dense `rows × points.len()` weight matrix of one direction, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    pub points: Vec<usize>,
    pub rows: usize,
    pub w: Vec<f64>,
}

impl Factor {
    pub fn cols(&self) -> usize {
        self.points.len()
    }
}

/// Reusable buffers for [`SumFactorizer::contract`].
#[derive(Debug, Default)]
pub struct SumFactorizer {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl SumFactorizer {
    pub fn new() -> Self {
        Self::default()
    }

    /// `out[j_1..j_d] = Σ_q Π_d W_d[j_d][q_d] · C(q_1..q_d)`, contracting the
    /// first direction first. Returns the result in row-major order over
    /// `(rows_1, .., rows_d)` and adds the floating-point operation count to `flops`.
    pub fn contract(&mut self, factors: &[&Factor], grid: &CoefficientGrid, flops: &mut u64) -> &[f64] {
        let dim = factors.len();
        // gather the sub-grid touched by the rule points
        let mut qext = [1; 3];
        for d in 0..dim {
            qext[d] = factors[d].cols();
        }
        self.a.clear();
        self.a.reserve(qext.iter().product());
        let empty = [0usize];
        let p = |d: usize| if d < dim { &factors[d].points[..] } else { &empty[..] };
        let (p0, p1, p2) = (p(0), p(1), p(2));
        for &q0 in p0 {
            for &q1 in p1 {
                let base = (q0 * grid.ext[1] + q1) * grid.ext[2];
                for &q2 in p2 {
                    self.a.push(grid.values[base + q2]);
                }
            }
        }
        // shape [J_0..J_{k-1}, Q_k..Q_{dim-1}] in `a`
        let mut outer = 1;
        for (k, f) in factors.iter().enumerate() {
            let nq = f.cols();
            let nj = f.rows;
            let inner: usize = (k + 1..dim).map(|d| qext[d]).product();
            self.b.clear();
            self.b.resize(outer * nj * inner, 0.0);
            for a in 0..outer {
                let src = &self.a[a * nq * inner..(a + 1) * nq * inner];
                let dst = &mut self.b[a * nj * inner..(a + 1) * nj * inner];
                for j in 0..nj {
                    let wrow = &f.w[j * nq..(j + 1) * nq];
                    let out = &mut dst[j * inner..(j + 1) * inner];
                    for (q, &w) in wrow.iter().enumerate() {
                        let s = &src[q * inner..(q + 1) * inner];
                        for (o, &v) in out.iter_mut().zip(s) {
                            *o += w * v;
                        }
                    }
                }
            }
            *flops += (outer * nj * inner * (2 * nq).saturating_sub(1)) as u64;
            std::mem::swap(&mut self.a, &mut self.b);
            outer *= nj;
        }
        &self.a
    }
}

/// Operation count of [`SumFactorizer::contract`] for the given shapes.
pub fn contraction_flops(rows: &[usize], cols: &[usize]) -> u64 {
    let mut total = 0u64;
    for k in 0..rows.len() {
        let outer: usize = rows[..k].iter().product();
        let inner: usize = cols[k + 1..].iter().product();
        total += (outer * rows[k] * inner * (2 * cols[k]).saturating_sub(1)) as u64;
    }
    total
}
