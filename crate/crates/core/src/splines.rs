//! Univariate B-spline bases on open knot vectors.
//!
//! Evaluation uses the Cox–de Boor triangle, knot insertion is Boehm's
//! single-knot blend, and [`BSplineBasis::integrate_pair`] is the exact
//! per-span Gauss oracle for mass entries.

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre;

/// Relative tolerance used when deciding whether two knots coincide.
const KNOT_TOL: f64 = 1e-12;

/// Nondecreasing knot sequence of an open (clamped) B-spline basis.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    degree: usize,
    knots: Vec<f64>,
}

impl KnotVector {
    pub fn new(degree: usize, knots: Vec<f64>) -> Result<Self> {
        if degree < 1 {
            return Err(Error::argument("degree must be at least 1"));
        }
        if knots.iter().any(|k| !k.is_finite()) {
            return Err(Error::argument("knots must be finite"));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::argument("knots must be nondecreasing"));
        }
        let m = knots.len();
        if m < 2 * (degree + 1) {
            return Err(Error::argument(format!(
                "need at least {} knots for degree {degree}, got {m}",
                2 * (degree + 1)
            )));
        }
        let (a, b) = (knots[0], knots[m - 1]);
        if a >= b {
            return Err(Error::argument("knot vector spans an empty interval"));
        }
        let lead = knots.iter().take_while(|&&k| k == a).count();
        let trail = knots.iter().rev().take_while(|&&k| k == b).count();
        if lead != degree + 1 || trail != degree + 1 {
            return Err(Error::argument(
                "knot vector is not open: end knots must repeat exactly degree+1 times",
            ));
        }
        let mut run = 1;
        for w in knots.windows(2) {
            run = if w[1] == w[0] { run + 1 } else { 1 };
            if run > degree + 1 {
                return Err(Error::argument("interior knot multiplicity exceeds degree+1"));
            }
        }
        Ok(Self { degree, knots })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn num_functions(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[0], self.knots[self.knots.len() - 1])
    }

    /// Number of knots equal to `value` (within the knot tolerance).
    pub fn multiplicity(&self, value: f64) -> usize {
        let tol = self.tolerance();
        self.knots.iter().filter(|&&k| (k - value).abs() <= tol).count()
    }

    fn tolerance(&self) -> f64 {
        let (a, b) = self.domain();
        KNOT_TOL * (b - a)
    }
}

/// Open knot vector with `h` uniform spans on `[a, b]` and simple interior knots.
pub fn make_open_uniform_knots(p: usize, h: usize, a: f64, b: f64) -> Result<KnotVector> {
    if p < 1 || h < 1 || !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(Error::argument(format!(
            "invalid uniform knot request p={p}, h={h}, [{a}, {b}]"
        )));
    }
    let mut knots = Vec::with_capacity(h + 2 * p + 1);
    knots.extend(std::iter::repeat_n(a, p + 1));
    for e in 1..h {
        knots.push(a + (b - a) * e as f64 / h as f64);
    }
    knots.extend(std::iter::repeat_n(b, p + 1));
    KnotVector::new(p, knots)
}

/// B-spline basis with its element (nonempty span) structure.
#[derive(Debug, Clone)]
pub struct BSplineBasis {
    kv: KnotVector,
    /// Distinct knot values; element `e` is `[breaks[e], breaks[e+1]]`.
    breaks: Vec<f64>,
    /// Knot index `mu` with `knots[mu] < knots[mu+1]` for each element.
    span_knot: Vec<usize>,
    /// Inclusive element range covering the support of each function.
    supports: Vec<(usize, usize)>,
}

impl BSplineBasis {
    pub fn new(kv: KnotVector) -> Self {
        let p = kv.degree();
        let knots = kv.knots();
        let mut breaks = vec![knots[0]];
        let mut span_knot = Vec::new();
        for mu in p..knots.len() - p - 1 {
            if knots[mu + 1] > knots[mu] {
                span_knot.push(mu);
                breaks.push(knots[mu + 1]);
            }
        }
        let supports = (0..kv.num_functions())
            .map(|i| {
                // elements whose knot span lies in [knots[i], knots[i+p+1]]
                let first = span_knot.iter().position(|&mu| mu >= i).unwrap();
                let last = span_knot.iter().rposition(|&mu| mu <= i + p).unwrap();
                (first, last)
            })
            .collect();
        Self { kv, breaks, span_knot, supports }
    }

    /// Uniform open basis, the mesh type used throughout the harness.
    pub fn uniform(p: usize, h: usize, a: f64, b: f64) -> Result<Self> {
        Ok(Self::new(make_open_uniform_knots(p, h, a, b)?))
    }

    pub fn knot_vector(&self) -> &KnotVector {
        &self.kv
    }

    pub fn degree(&self) -> usize {
        self.kv.degree()
    }

    pub fn num_functions(&self) -> usize {
        self.kv.num_functions()
    }

    pub fn num_elements(&self) -> usize {
        self.span_knot.len()
    }

    pub fn domain(&self) -> (f64, f64) {
        self.kv.domain()
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn element_bounds(&self, e: usize) -> (f64, f64) {
        (self.breaks[e], self.breaks[e + 1])
    }

    /// Inclusive element range of `supp(B_i)`.
    pub fn support(&self, i: usize) -> (usize, usize) {
        self.supports[i]
    }

    /// Index of the first of the `p+1` functions nonzero on element `e`.
    pub fn first_function(&self, e: usize) -> usize {
        self.span_knot[e] - self.degree()
    }

    /// Element containing `x`; half-open spans, the right end maps to the last span.
    pub fn find_element(&self, x: f64) -> Result<usize> {
        let (a, b) = self.domain();
        if !(x >= a && x <= b) {
            return Err(Error::Domain(format!("x = {x} outside [{a}, {b}]")));
        }
        let n = self.num_elements();
        // partition_point gives the number of breaks <= x
        let e = self.breaks[1..n].partition_point(|&t| t <= x);
        Ok(e.min(n - 1))
    }

    /// The `p+1` function values nonzero at `x`, with the index of the first one.
    pub fn eval_nonzero(&self, x: f64) -> Result<(usize, Vec<f64>)> {
        let e = self.find_element(x)?;
        let mut vals = vec![0.0; self.degree() + 1];
        self.eval_in_element(e, x, &mut vals);
        Ok((self.first_function(e), vals))
    }

    /// Cox–de Boor evaluation of the functions of element `e` at `x`.
    ///
    /// `x` may lie slightly outside the element; the polynomial pieces of that
    /// element are then extrapolated.
    pub fn eval_in_element(&self, e: usize, x: f64, out: &mut [f64]) {
        let p = self.degree();
        let knots = self.kv.knots();
        let mu = self.span_knot[e];
        let mut left = [0.0; 32];
        let mut right = [0.0; 32];
        debug_assert!(p < 32);
        out[0] = 1.0;
        for j in 1..=p {
            left[j] = x - knots[mu + 1 - j];
            right[j] = knots[mu + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let tmp = out[r] / (right[r + 1] + left[j - r]);
                out[r] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            out[j] = saved;
        }
    }

    /// Value of a single function `B_i(x)`.
    pub fn eval(&self, i: usize, x: f64) -> Result<f64> {
        let (first, vals) = self.eval_nonzero(x)?;
        Ok(if i >= first && i <= first + self.degree() {
            vals[i - first]
        } else {
            0.0
        })
    }

    /// Exact `∫ B_i B_j` over the whole domain.
    pub fn integrate_pair(&self, i: usize, j: usize) -> f64 {
        let (a, b) = self.domain();
        self.integrate_pair_on(i, j, a, b)
    }

    /// Exact `∫_{[lo, hi]} B_i B_j` where `lo` and `hi` are knot values.
    ///
    /// Per-span Gauss with `p+1` points is exact for the degree-`2p` product.
    pub fn integrate_pair_on(&self, i: usize, j: usize, lo: f64, hi: f64) -> f64 {
        let (si, ei) = self.supports[i];
        let (sj, ej) = self.supports[j];
        let (s, e) = (si.max(sj), ei.min(ej));
        if s > e {
            return 0.0;
        }
        let p = self.degree();
        let rule = gauss_legendre(p + 1).expect("gauss order within range");
        let tol = self.kv.tolerance();
        let mut vals = vec![0.0; p + 1];
        let mut sum = 0.0;
        for el in s..=e {
            let (x0, x1) = self.element_bounds(el);
            if x0 < lo - tol || x1 > hi + tol {
                continue;
            }
            let first = self.first_function(el);
            let half = 0.5 * (x1 - x0);
            for (t, w) in rule.points().iter().zip(rule.weights()) {
                let x = x0 + half * (t + 1.0);
                self.eval_in_element(el, x, &mut vals);
                sum += w * half * (vals[i - first] * vals[j - first]);
            }
        }
        sum
    }

    /// Exact `∫ B_i` over `[lo, hi]` (knot values).
    pub fn integrate_on(&self, i: usize, lo: f64, hi: f64) -> f64 {
        let (s, e) = self.supports[i];
        let p = self.degree();
        let rule = gauss_legendre((p + 1).div_ceil(2)).expect("gauss order within range");
        let tol = self.kv.tolerance();
        let mut vals = vec![0.0; p + 1];
        let mut sum = 0.0;
        for el in s..=e {
            let (x0, x1) = self.element_bounds(el);
            if x0 < lo - tol || x1 > hi + tol {
                continue;
            }
            let first = self.first_function(el);
            let half = 0.5 * (x1 - x0);
            for (t, w) in rule.points().iter().zip(rule.weights()) {
                self.eval_in_element(el, x0 + half * (t + 1.0), &mut vals);
                sum += w * half * vals[i - first];
            }
        }
        sum
    }

    /// Inserts `value` until its multiplicity reaches `target_multiplicity`.
    ///
    /// Returns the refined basis together with the subdivision matrix `S`,
    /// `B_i = Σ_k S[k][i] B̃_k`.
    pub fn insert_knot(
        &self,
        value: f64,
        target_multiplicity: usize,
    ) -> Result<(BSplineBasis, SubdivisionMatrix)> {
        let p = self.degree();
        let (a, b) = self.domain();
        let tol = self.kv.tolerance();
        if !(value > a + tol && value < b - tol) {
            return Err(Error::argument(format!(
                "knot {value} must lie strictly inside ({a}, {b})"
            )));
        }
        if target_multiplicity > p + 1 {
            return Err(Error::argument(format!(
                "target multiplicity {target_multiplicity} exceeds degree+1 = {}",
                p + 1
            )));
        }
        // snap to an existing knot so repeated insertions stay exact
        let value = self
            .kv
            .knots()
            .iter()
            .copied()
            .find(|k| (k - value).abs() <= tol)
            .unwrap_or(value);
        let mut knots = self.kv.knots().to_vec();
        let mut s = SubdivisionMatrix::identity(self.num_functions());
        let mut mult = self.kv.multiplicity(value);
        while mult < target_multiplicity {
            let (refined, step) = boehm_insert(p, &knots, value);
            s = step.compose(&s);
            knots = refined;
            mult += 1;
        }
        let refined = BSplineBasis::new(KnotVector::new(p, knots)?);
        Ok((refined, s))
    }
}

/// One Boehm insertion: returns the new knots and the `(n+1) × n` blend map.
fn boehm_insert(p: usize, knots: &[f64], t: f64) -> (Vec<f64>, SubdivisionMatrix) {
    let n = knots.len() - p - 1;
    // last knot index with knots[mu] <= t
    let mu = knots.partition_point(|&k| k <= t) - 1;
    let mut columns = vec![Vec::new(); n];
    for k in 0..=n {
        if k + p <= mu {
            columns[k].push((k, 1.0));
        } else if k > mu {
            columns[k - 1].push((k, 1.0));
        } else {
            let alpha = (t - knots[k]) / (knots[k + p] - knots[k]);
            if alpha != 0.0 {
                columns[k].push((k, alpha));
            }
            if alpha != 1.0 {
                columns[k - 1].push((k, 1.0 - alpha));
            }
        }
    }
    for c in &mut columns {
        c.sort_by_key(|&(k, _)| k);
    }
    let mut refined = knots.to_vec();
    refined.insert(mu + 1, t);
    (refined, SubdivisionMatrix { rows: n + 1, columns })
}

/// Sparse refinement map from an original to a knot-refined basis.
///
/// Stored by column: `columns[i]` lists `(k, S[k][i])` in increasing `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubdivisionMatrix {
    rows: usize,
    columns: Vec<Vec<(usize, f64)>>,
}

impl SubdivisionMatrix {
    pub fn identity(n: usize) -> Self {
        Self { rows: n, columns: (0..n).map(|i| vec![(i, 1.0)]).collect() }
    }

    /// Number of refined functions.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of original functions.
    pub fn cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, i: usize) -> &[(usize, f64)] {
        &self.columns[i]
    }

    pub fn get(&self, k: usize, i: usize) -> f64 {
        self.columns[i]
            .iter()
            .find(|&&(r, _)| r == k)
            .map_or(0.0, |&(_, v)| v)
    }

    /// `self · inner`, i.e. first refine with `inner`, then with `self`.
    fn compose(&self, inner: &SubdivisionMatrix) -> SubdivisionMatrix {
        let columns = inner
            .columns
            .iter()
            .map(|col| {
                let mut acc = vec![0.0; self.rows];
                let mut touched = vec![false; self.rows];
                for &(m, v) in col {
                    for &(k, s) in &self.columns[m] {
                        acc[k] += s * v;
                        touched[k] = true;
                    }
                }
                (0..self.rows)
                    .filter(|&k| touched[k] && acc[k] != 0.0)
                    .map(|k| (k, acc[k]))
                    .collect()
            })
            .collect();
        SubdivisionMatrix { rows: self.rows, columns }
    }

    /// Maps original coefficients to refined ones, `S · c`.
    pub fn apply(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        for (i, col) in self.columns.iter().enumerate() {
            for &(k, s) in col {
                out[k] += s * coeffs[i];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis(p: usize, knots: &[f64]) -> BSplineBasis {
        BSplineBasis::new(KnotVector::new(p, knots.to_vec()).unwrap())
    }

    #[test]
    fn uniform_knots() {
        let kv = make_open_uniform_knots(2, 4, -1.0, 1.0).unwrap();
        assert_eq!(kv.knots(), &[-1.0, -1.0, -1.0, -0.5, 0.0, 0.5, 1.0, 1.0, 1.0]);
        assert_eq!(kv.num_functions(), 6);
        let kv = make_open_uniform_knots(1, 1, 0.0, 1.0).unwrap();
        assert_eq!(kv.knots(), &[0.0, 0.0, 1.0, 1.0]);
        let b = BSplineBasis::uniform(6, 32, -1.0, 1.0).unwrap();
        assert_eq!(b.num_functions(), 38);
        assert_eq!(b.num_elements(), 32);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(make_open_uniform_knots(0, 4, 0.0, 1.0).is_err());
        assert!(make_open_uniform_knots(2, 0, 0.0, 1.0).is_err());
        assert!(make_open_uniform_knots(2, 4, 1.0, 1.0).is_err());
        assert!(KnotVector::new(2, vec![0.0, 0.0, 1.0, 1.0, 1.0, 1.0]).is_err());
        assert!(KnotVector::new(1, vec![0.0, 0.0, 0.5, 0.5, 0.5, 1.0, 1.0]).is_err());
    }

    #[test]
    fn hat_and_bernstein_values() {
        let b = basis(1, &[0.0, 0.0, 1.0, 1.0]);
        let (first, v) = b.eval_nonzero(0.25).unwrap();
        assert_eq!(first, 0);
        assert!((v[0] - 0.75).abs() < 1e-15 && (v[1] - 0.25).abs() < 1e-15);

        let b = basis(2, &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let (_, v) = b.eval_nonzero(0.5).unwrap();
        for (x, y) in v.iter().zip([0.25, 0.5, 0.25]) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn right_endpoint_uses_last_span() {
        let b = BSplineBasis::uniform(3, 5, 0.0, 1.0).unwrap();
        let (first, v) = b.eval_nonzero(1.0).unwrap();
        assert_eq!(first, b.num_functions() - 4);
        assert!((v[3] - 1.0).abs() < 1e-15);
        assert!(b.eval_nonzero(1.0 + 1e-9).is_err());
        assert!(b.eval_nonzero(-1e-9).is_err());
    }

    #[test]
    fn supports_cover_p_plus_one_elements() {
        let b = BSplineBasis::uniform(3, 8, 0.0, 1.0).unwrap();
        assert_eq!(b.support(0), (0, 0));
        assert_eq!(b.support(3), (0, 3));
        assert_eq!(b.support(5), (2, 5));
        assert_eq!(b.support(10), (7, 7));
    }

    #[test]
    fn insert_to_full_multiplicity_p1() {
        let b = basis(1, &[0.0, 0.0, 1.0, 1.0]);
        let (r, s) = b.insert_knot(0.5, 2).unwrap();
        assert_eq!(r.knot_vector().knots(), &[0.0, 0.0, 0.5, 0.5, 1.0, 1.0]);
        assert_eq!(r.num_functions(), 4);
        let col: Vec<f64> = (0..4).map(|k| s.get(k, 0)).collect();
        assert_eq!(col, vec![1.0, 0.5, 0.5, 0.0]);
        for x in [0.0, 0.1, 0.37, 0.5, 0.8, 1.0] {
            let refined: f64 = (0..4).map(|k| s.get(k, 0) * r.eval(k, x).unwrap()).sum();
            assert!((refined - (1.0 - x)).abs() < 1e-15);
        }
    }

    #[test]
    fn insertion_at_full_multiplicity_is_noop() {
        let b = basis(2, &[0.0, 0.0, 0.0, 0.5, 0.5, 0.5, 1.0, 1.0, 1.0]);
        let (r, s) = b.insert_knot(0.5, 3).unwrap();
        assert_eq!(r.knot_vector(), b.knot_vector());
        assert_eq!(s, SubdivisionMatrix::identity(b.num_functions()));
    }

    #[test]
    fn insertion_rejects_boundary_values() {
        let b = BSplineBasis::uniform(2, 4, 0.0, 1.0).unwrap();
        assert!(b.insert_knot(0.0, 1).is_err());
        assert!(b.insert_knot(1.0, 3).is_err());
        assert!(b.insert_knot(0.5, 4).is_err());
    }

    #[test]
    fn pair_integrals() {
        let b = basis(1, &[0.0, 0.0, 1.0, 2.0, 2.0]);
        assert!((b.integrate_pair(0, 1) - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(b.integrate_pair(0, 2), 0.0);
        // ∫(1-x)^2 2x(1-x) dx = 2 B(2,4) = 0.1
        let b = basis(2, &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        assert!((b.integrate_pair(0, 1) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn pair_integrals_are_symmetric_and_sum_to_moments() {
        let b = BSplineBasis::uniform(4, 7, -1.0, 2.0).unwrap();
        let n = b.num_functions();
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                assert_eq!(b.integrate_pair(i, j), b.integrate_pair(j, i));
                row += b.integrate_pair(i, j);
            }
            let (a, c) = b.domain();
            assert!((row - b.integrate_on(i, a, c)).abs() < 1e-14);
        }
    }
}
