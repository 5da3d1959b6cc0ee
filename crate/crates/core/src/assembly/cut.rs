//! Local mass blocks and load vectors of cut elements.

use crate::cutgeom::{MultiIndex, TensorSpace};
use crate::error::{Error, Result};
use crate::quadrature::{CutCellRule, SlicedCellRule};

/// Integrates products of the local functions of one cut element.
///
/// With `pairs` the result is the local mass block `G[a][b]` (row-major over
/// the lexicographic local indices), otherwise the local load vector.
pub struct CutElementIntegrator<'a> {
    space: &'a TensorSpace,
    element: MultiIndex,
    n: [usize; 3],
    pairs: bool,
}

impl<'a> CutElementIntegrator<'a> {
    pub fn new(space: &'a TensorSpace, element: MultiIndex, pairs: bool) -> Self {
        let mut n = [1; 3];
        for d in 0..space.dim() {
            n[d] = space.basis(d).degree() + 1;
        }
        Self { space, element, n, pairs }
    }

    pub fn local_len(&self) -> usize {
        self.n.iter().product()
    }

    fn width(&self, d: usize) -> usize {
        if self.pairs {
            self.n[d] * self.n[d]
        } else {
            self.n[d]
        }
    }

    /// Nested evaluation following the level structure of a sliced rule.
    pub fn sliced(&self, rule: &SlicedCellRule, f: &dyn Fn(&[f64]) -> f64, flops: &mut u64) -> Result<Vec<f64>> {
        let mut x = [0.0; 3];
        let levels = self.level(rule, 0, 0..rule.levels[0].len(), &mut x, f, flops)?;
        Ok(self.reorder(rule, &levels))
    }

    fn level(
        &self,
        rule: &SlicedCellRule,
        l: usize,
        range: std::ops::Range<usize>,
        x: &mut [f64; 3],
        f: &dyn Fn(&[f64]) -> f64,
        flops: &mut u64,
    ) -> Result<Vec<f64>> {
        let dim = rule.dim;
        let d = rule.axes[l];
        let n = self.n[d];
        let m = self.width(d);
        let child: usize = (l + 1..dim).map(|k| self.width(rule.axes[k])).product();
        let mut acc = vec![0.0; m * child];
        let mut vals = vec![0.0; n];
        let mut prod = vec![0.0; m];
        let basis = self.space.basis(d);
        for node in &rule.levels[l][range] {
            x[d] = node.coord;
            basis.eval_in_element(self.element[d], node.coord, &mut vals);
            let mut s = node.weight;
            let sub = if l + 1 == dim {
                let v = f(&x[..dim]);
                if !v.is_finite() {
                    return Err(Error::Evaluation(x[..dim].to_vec()));
                }
                s *= v;
                None
            } else {
                let (a, b) = node.children;
                Some(self.level(rule, l + 1, a as usize..b as usize, x, f, flops)?)
            };
            if self.pairs {
                for a in 0..n {
                    for b in 0..n {
                        prod[a * n + b] = s * vals[a] * vals[b];
                    }
                }
            } else {
                for a in 0..n {
                    prod[a] = s * vals[a];
                }
            }
            *flops += 1 + 2 * m as u64;
            match sub {
                None => {
                    for (o, v) in acc.iter_mut().zip(&prod) {
                        *o += v;
                    }
                }
                Some(t) => {
                    for (k, &pk) in prod.iter().enumerate() {
                        let out = &mut acc[k * child..(k + 1) * child];
                        for (o, v) in out.iter_mut().zip(&t) {
                            *o += pk * v;
                        }
                    }
                    *flops += 2 * (m * child) as u64;
                }
            }
        }
        Ok(acc)
    }

    /// Converts from level order `[(a,b) per level]` to physical lexicographic order.
    fn reorder(&self, rule: &SlicedCellRule, t: &[f64]) -> Vec<f64> {
        let dim = rule.dim;
        let len = self.local_len();
        let mut out = vec![0.0; if self.pairs { len * len } else { len }];
        let mut stride = [0; 3];
        let mut s = 1;
        for d in (0..3).rev() {
            stride[d] = s;
            s *= self.n[d];
        }
        for (lin, &v) in t.iter().enumerate() {
            let mut rest = lin;
            let (mut row, mut col) = (0, 0);
            for l in (0..dim).rev() {
                let d = rule.axes[l];
                let w = self.width(d);
                let k = rest % w;
                rest /= w;
                if self.pairs {
                    row += (k / self.n[d]) * stride[d];
                    col += (k % self.n[d]) * stride[d];
                } else {
                    row += k * stride[d];
                }
            }
            if self.pairs {
                out[row * len + col] = v;
            } else {
                out[row] = v;
            }
        }
        out
    }

    /// Point-by-point evaluation on a flat rule.
    pub fn flat(&self, rule: &CutCellRule, f: &dyn Fn(&[f64]) -> f64) -> Result<Vec<f64>> {
        let dim = self.space.dim();
        let len = self.local_len();
        let mut out = vec![0.0; if self.pairs { len * len } else { len }];
        let mut vals: Vec<Vec<f64>> = (0..dim).map(|d| vec![0.0; self.n[d]]).collect();
        let mut phi = vec![0.0; len];
        for (x, &w) in rule.points.iter().zip(&rule.weights) {
            let v = f(&x[..dim]);
            if !v.is_finite() {
                return Err(Error::Evaluation(x[..dim].to_vec()));
            }
            for d in 0..dim {
                self.space.basis(d).eval_in_element(self.element[d], x[d], &mut vals[d]);
            }
            for (k, ph) in phi.iter_mut().enumerate() {
                let mut rest = k;
                let mut prod = 1.0;
                for d in (0..dim).rev() {
                    prod *= vals[d][rest % self.n[d]];
                    rest /= self.n[d];
                }
                *ph = prod;
            }
            if self.pairs {
                for a in 0..len {
                    for b in 0..len {
                        out[a * len + b] += w * v * phi[a] * phi[b];
                    }
                }
            } else {
                for a in 0..len {
                    out[a] += w * v * phi[a];
                }
            }
        }
        Ok(out)
    }
}
