//! Weighted quadrature by moment fitting on a Gauss-point superset.
//!
//! Every rule picks its points from the element-wise Gauss points of the
//! univariate mesh, so basis and coefficient evaluations at those points can
//! be shared by all rules (standard, discontinuous, and plain Gauss).

use nalgebra::{DMatrix, DVector};

use crate::cutgeom::Side;
use crate::error::{Error, Result};
use crate::quadrature::gauss::gauss_ref;
use crate::splines::{BSplineBasis, SubdivisionMatrix};

/// Relative residual above which a moment fit escalates to the Gauss rule.
pub const FIT_TOLERANCE: f64 = 1e-11;

/// Element-wise Gauss points of a univariate mesh.
#[derive(Debug, Clone)]
pub struct PointSuperset {
    per_span: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl PointSuperset {
    /// `n_per_span` Gauss points on every element of `basis`.
    pub fn new(basis: &BSplineBasis, n_per_span: usize) -> Result<Self> {
        let rule = gauss_ref(n_per_span)?;
        let mut points = Vec::with_capacity(n_per_span * basis.num_elements());
        let mut weights = Vec::with_capacity(points.capacity());
        for e in 0..basis.num_elements() {
            let (a, b) = basis.element_bounds(e);
            for (x, w) in rule.mapped(a, b) {
                points.push(x);
                weights.push(w);
            }
        }
        Ok(Self { per_span: n_per_span, points, weights })
    }

    /// The default superset with `p+1` points per element.
    pub fn for_basis(basis: &BSplineBasis) -> Self {
        Self::new(basis, basis.degree() + 1).expect("degree within Gauss table range")
    }

    pub fn per_span(&self) -> usize {
        self.per_span
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Gauss weights scaled to the element length.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn id(&self, element: usize, local: usize) -> usize {
        element * self.per_span + local
    }

    pub fn element_of(&self, id: usize) -> usize {
        id / self.per_span
    }

    pub fn span_ids(&self, element: usize) -> std::ops::Range<usize> {
        element * self.per_span..(element + 1) * self.per_span
    }
}

/// Values of the nonzero functions of a basis at every superset point.
#[derive(Debug, Clone)]
pub struct BasisTable {
    stride: usize,
    first: Vec<usize>,
    values: Vec<f64>,
}

impl BasisTable {
    pub fn new(basis: &BSplineBasis, superset: &PointSuperset) -> Self {
        let stride = basis.degree() + 1;
        let mut values = vec![0.0; stride * superset.len()];
        let mut first = Vec::with_capacity(superset.len());
        for (q, &x) in superset.points().iter().enumerate() {
            let e = superset.element_of(q);
            basis.eval_in_element(e, x, &mut values[q * stride..(q + 1) * stride]);
            first.push(basis.first_function(e));
        }
        Self { stride, first, values }
    }

    /// `B_j(x_q)`, zero outside the support.
    #[inline]
    pub fn value(&self, j: usize, q: usize) -> f64 {
        let f = self.first[q];
        if j >= f && j < f + self.stride {
            self.values[q * self.stride + j - f]
        } else {
            0.0
        }
    }

    /// Index of the first nonzero function at point `q` and the `p+1` values.
    pub fn nonzero(&self, q: usize) -> (usize, &[f64]) {
        (self.first[q], &self.values[q * self.stride..(q + 1) * self.stride])
    }
}

/// Per-test-function quadrature rule over superset points.
#[derive(Debug, Clone, PartialEq)]
pub struct WqRule {
    pub test: usize,
    /// Superset point ids, increasing.
    pub points: Vec<usize>,
    pub weights: Vec<f64>,
    /// Weights are `ω_q · B_test(x_q)` on full element Gauss rules.
    pub gauss_shortcut: bool,
}

impl WqRule {
    /// `Σ_q w_q g(x_q)` for a function given on superset points.
    pub fn apply(&self, g: impl Fn(usize) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(&q, w)| w * g(q)).sum()
    }
}

/// Discontinuous weighted-quadrature rule for one side of a split knot `δ`.
#[derive(Debug, Clone)]
pub struct DwqRule {
    pub rule: WqRule,
    pub delta: f64,
    pub side: Side,
    pub subdivision: SubdivisionMatrix,
    /// Active points that the standard rule of the same test function lacks.
    pub nested_points: Vec<usize>,
}

/// Standard activation: `m` index-spread points on each support element.
fn activation(basis: &BSplineBasis, superset: &PointSuperset, k: usize) -> Vec<usize> {
    let (e0, e1) = basis.support(k);
    let spans = e1 - e0 + 1;
    let conditions = trial_range(basis, k).count();
    let nps = superset.per_span();
    let m = conditions.div_ceil(spans).max(2).min(nps);
    let mut ids = Vec::with_capacity(m * spans);
    for e in e0..=e1 {
        let mut local: Vec<usize> = if m == 1 {
            vec![0]
        } else {
            (0..m)
                .map(|j| ((j * (nps - 1)) as f64 / (m - 1) as f64).round() as usize)
                .collect()
        };
        local.dedup();
        ids.extend(local.into_iter().map(|l| superset.id(e, l)));
    }
    ids
}

/// Functions whose support overlaps the support of `k`.
fn trial_range(basis: &BSplineBasis, k: usize) -> std::ops::RangeInclusive<usize> {
    let (e0, e1) = basis.support(k);
    basis.first_function(e0)..=basis.first_function(e1) + basis.degree()
}

fn covers_support(basis: &BSplineBasis, superset: &PointSuperset, k: usize, ids: &[usize]) -> bool {
    let (e0, e1) = basis.support(k);
    ids.len() == (e1 - e0 + 1) * superset.per_span()
}

/// `w_q = ω_q · B_k(x_q)` on all superset points of `supp(B_k)`.
fn gauss_weighted(basis: &BSplineBasis, superset: &PointSuperset, k: usize) -> (Vec<usize>, Vec<f64>) {
    let (e0, e1) = basis.support(k);
    let mut vals = vec![0.0; basis.degree() + 1];
    let mut ids = Vec::new();
    let mut weights = Vec::new();
    for e in e0..=e1 {
        let first = basis.first_function(e);
        for q in superset.span_ids(e) {
            basis.eval_in_element(e, superset.points()[q], &mut vals);
            ids.push(q);
            weights.push(superset.weights()[q] * vals[k - first]);
        }
    }
    (ids, weights)
}

/// Minimum-norm moment fit of test `k` on `ids`, escalating to the Gauss shortcut.
fn fit(
    basis: &BSplineBasis,
    superset: &PointSuperset,
    k: usize,
    ids: Vec<usize>,
) -> Result<(Vec<usize>, Vec<f64>, bool)> {
    if covers_support(basis, superset, k, &ids) {
        let (ids, w) = gauss_weighted(basis, superset, k);
        return Ok((ids, w, true));
    }
    let trials: Vec<usize> = trial_range(basis, k).collect();
    let mut a = DMatrix::<f64>::zeros(trials.len(), ids.len());
    let mut vals = vec![0.0; basis.degree() + 1];
    for (c, &q) in ids.iter().enumerate() {
        let e = superset.element_of(q);
        basis.eval_in_element(e, superset.points()[q], &mut vals);
        let first = basis.first_function(e);
        for (r, &j) in trials.iter().enumerate() {
            if j >= first && j <= first + basis.degree() {
                a[(r, c)] = vals[j - first];
            }
        }
    }
    let b = DVector::from_iterator(trials.len(), trials.iter().map(|&j| basis.integrate_pair(k, j)));
    let svd = a.clone().svd(true, true);
    let eps = 1e-14 * svd.singular_values.max();
    let w = svd
        .solve(&b, eps)
        .map_err(|e| Error::Construction(format!("moment fit for function {k}: {e}")))?;
    let scale = b.amax();
    let residual = (&a * &w - &b).amax();
    if residual <= FIT_TOLERANCE * scale {
        return Ok((ids, w.iter().copied().collect(), false));
    }
    let (ids, w) = gauss_weighted(basis, superset, k);
    Ok((ids, w, true))
}

/// One standard weighted-quadrature rule per test function.
pub fn build_wq_rules(basis: &BSplineBasis, superset: &PointSuperset) -> Result<Vec<WqRule>> {
    (0..basis.num_functions())
        .map(|i| {
            let (points, weights, gauss_shortcut) = fit(basis, superset, i, activation(basis, superset, i))?;
            Ok(WqRule { test: i, points, weights, gauss_shortcut })
        })
        .collect()
}

/// Discontinuous weighted quadrature for `B_i` on one side of the knot `delta`.
///
/// `standard` is the standard rule of the same test function; its points on
/// the good side are kept so that the result is nested over it.
pub fn build_dwq_rule(
    basis: &BSplineBasis,
    superset: &PointSuperset,
    standard: &WqRule,
    delta: f64,
    side: Side,
) -> Result<DwqRule> {
    let i = standard.test;
    let p = basis.degree();
    let (e0, e1) = basis.support(i);
    let (a, b) = basis.domain();
    let tol = 1e-12 * (b - a);
    let cut = basis.breaks()[e0 + 1..=e1]
        .iter()
        .position(|&t| (t - delta).abs() <= tol)
        .map(|k| e0 + 1 + k)
        .ok_or_else(|| {
            Error::argument(format!("delta = {delta} is not an interior knot of supp(B_{i})"))
        })?;
    let (g0, g1) = match side {
        Side::Below => (e0, cut - 1),
        Side::Above => (cut, e1),
    };
    let good = |e: usize| e >= g0 && e <= g1;

    let (refined, subdivision) = basis.insert_knot(delta, p + 1)?;
    debug_assert_eq!(refined.num_elements(), basis.num_elements());
    let parts: Vec<(usize, f64)> = subdivision
        .column(i)
        .iter()
        .copied()
        .filter(|&(k, _)| {
            let (s, e) = refined.support(k);
            good(s) && good(e)
        })
        .collect();

    let mut active: Vec<usize> = standard
        .points
        .iter()
        .copied()
        .filter(|&q| good(superset.element_of(q)))
        .collect();
    for &(k, _) in &parts {
        active.extend(activation(&refined, superset, k));
    }
    active.sort_unstable();
    active.dedup();
    let nested_points: Vec<usize> =
        active.iter().copied().filter(|q| !standard.points.contains(q)).collect();

    let full = active.len() == (g1 - g0 + 1) * superset.per_span();
    let (points, weights) = if full {
        let mut vals = vec![0.0; p + 1];
        let mut ids = Vec::new();
        let mut w = Vec::new();
        for e in g0..=g1 {
            let first = basis.first_function(e);
            for q in superset.span_ids(e) {
                basis.eval_in_element(e, superset.points()[q], &mut vals);
                ids.push(q);
                w.push(superset.weights()[q] * vals[i - first]);
            }
        }
        (ids, w)
    } else {
        let mut acc = vec![0.0; active.len()];
        for &(k, s) in &parts {
            let (rs, re) = refined.support(k);
            let local: Vec<usize> = active
                .iter()
                .copied()
                .filter(|&q| (rs..=re).contains(&superset.element_of(q)))
                .collect();
            let (ids, w, _) = fit(&refined, superset, k, local)?;
            for (q, wq) in ids.into_iter().zip(w) {
                let pos = active.binary_search(&q).expect("fit points are active");
                acc[pos] += s * wq;
            }
        }
        (active, acc)
    };
    Ok(DwqRule {
        rule: WqRule { test: i, points, weights, gauss_shortcut: full },
        delta: basis.breaks()[cut],
        side,
        subdivision,
        nested_points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splines::KnotVector;

    fn check_exact(basis: &BSplineBasis, sup: &PointSuperset, rule: &WqRule, lo: f64, hi: f64) -> f64 {
        let table = BasisTable::new(basis, sup);
        let i = rule.test;
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for j in 0..basis.num_functions() {
            let exact = basis.integrate_pair_on(i, j, lo, hi);
            let q = rule.apply(|q| table.value(j, q));
            worst = worst.max((q - exact).abs());
            scale = scale.max(exact.abs());
        }
        worst / scale
    }

    #[test]
    fn superset_layout() {
        let b = BSplineBasis::uniform(2, 4, -1.0, 1.0).unwrap();
        let s = PointSuperset::for_basis(&b);
        assert_eq!(s.len(), 12);
        assert!(s.points().windows(2).all(|w| w[0] < w[1]));
        let b = BSplineBasis::new(KnotVector::new(1, vec![0.0, 0.0, 0.5, 1.0, 1.0]).unwrap());
        let s = PointSuperset::new(&b, 1).unwrap();
        assert_eq!(s.points()[0], 0.25);
        assert_eq!(s.weights()[0], 0.5);
    }

    #[test]
    fn single_element_bernstein_uses_gauss_weights() {
        let b = BSplineBasis::uniform(2, 1, 0.0, 1.0).unwrap();
        let s = PointSuperset::for_basis(&b);
        let rules = build_wq_rules(&b, &s).unwrap();
        let r = &rules[0];
        assert!(r.gauss_shortcut);
        for (k, &q) in r.points.iter().enumerate() {
            let expected = s.weights()[q] * b.eval(0, s.points()[q]).unwrap();
            assert_eq!(r.weights[k], expected);
        }
        let table = BasisTable::new(&b, &s);
        let v = r.apply(|q| table.value(1, q));
        assert!((v - 0.1).abs() < 1e-15);
    }

    #[test]
    fn interior_rules_use_two_points_per_span() {
        let b = BSplineBasis::uniform(2, 10, 0.0, 1.0).unwrap();
        let s = PointSuperset::for_basis(&b);
        let rules = build_wq_rules(&b, &s).unwrap();
        for r in &rules[2..b.num_functions() - 2] {
            assert!(!r.gauss_shortcut);
            assert_eq!(r.points.len(), 6);
            assert!(check_exact(&b, &s, r, 0.0, 1.0) < 1e-12);
        }
        let total: std::collections::BTreeSet<usize> =
            rules.iter().flat_map(|r| r.points.iter().copied()).collect();
        assert_eq!(total.len(), 2 * 10 + 2);
    }

    #[test]
    fn interior_footprint_independent_of_degree() {
        for p in 2..=6 {
            let b = BSplineBasis::uniform(p, 24, 0.0, 1.0).unwrap();
            let s = PointSuperset::for_basis(&b);
            let rules = build_wq_rules(&b, &s).unwrap();
            let mid = &rules[b.num_functions() / 2];
            assert_eq!(mid.points.len(), 2 * (p + 1), "p={p}");
            assert!(check_exact(&b, &s, mid, 0.0, 1.0) < 1e-11);
        }
    }

    #[test]
    fn dwq_is_one_sided_and_exact() {
        let b = BSplineBasis::uniform(3, 8, 0.0, 1.0).unwrap();
        let s = PointSuperset::for_basis(&b);
        let rules = build_wq_rules(&b, &s).unwrap();
        let i = 5; // support elements 2..=5
        for (delta, side) in [(0.5, Side::Above), (0.5, Side::Below), (0.375, Side::Above)] {
            let d = build_dwq_rule(&b, &s, &rules[i], delta, side).unwrap();
            let (lo, hi) = match side {
                Side::Below => (0.0, delta),
                Side::Above => (delta, 1.0),
            };
            for (&q, &w) in d.rule.points.iter().zip(&d.rule.weights) {
                let x = s.points()[q];
                assert!(w == 0.0 || (x > lo && x < hi));
            }
            assert!(check_exact(&b, &s, &d.rule, lo, hi) < 1e-11);
            // nested over the standard rule's good-side points
            for &q in &rules[i].points {
                let x = s.points()[q];
                if x > lo && x < hi {
                    assert!(d.rule.points.contains(&q));
                }
            }
        }
    }

    #[test]
    fn dwq_rejects_foreign_knots() {
        let b = BSplineBasis::uniform(2, 8, 0.0, 1.0).unwrap();
        let s = PointSuperset::for_basis(&b);
        let rules = build_wq_rules(&b, &s).unwrap();
        // support of B_4 is [2/8, 5/8]
        assert!(build_dwq_rule(&b, &s, &rules[4], 0.125, Side::Above).is_err());
        assert!(build_dwq_rule(&b, &s, &rules[4], 0.25, Side::Above).is_err());
        assert!(build_dwq_rule(&b, &s, &rules[4], 0.3, Side::Above).is_err());
        assert!(build_dwq_rule(&b, &s, &rules[4], 0.375, Side::Above).is_ok());
    }

    #[test]
    fn short_good_side_takes_the_gauss_shortcut() {
        let b = BSplineBasis::uniform(2, 8, 0.0, 1.0).unwrap();
        let s = PointSuperset::for_basis(&b);
        let rules = build_wq_rules(&b, &s).unwrap();
        let d = build_dwq_rule(&b, &s, &rules[4], 0.5, Side::Above).unwrap();
        assert!(d.rule.gauss_shortcut);
        assert_eq!(d.rule.points.len(), 3);
        for (&q, &w) in d.rule.points.iter().zip(&d.rule.weights) {
            assert_eq!(w, s.weights()[q] * b.eval(4, s.points()[q]).unwrap());
        }
    }
}
