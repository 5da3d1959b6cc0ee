//! Extended B-splines: outer functions are eliminated by expressing them as
//! combinations of nearby inner functions that reproduce polynomials.

use nalgebra::{DMatrix, DVector};

use crate::assembly::{Discretization, SparseRowMatrix};
use crate::cutgeom::{IndexBox, MultiIndex, Tag};
use crate::error::{Error, Result};
use crate::splines::BSplineBasis;

/// Inner/outer partition of the active functions, as active (local) indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StabilityClasses {
    pub inner: Vec<usize>,
    pub outer: Vec<usize>,
}

/// Inner functions have at least one interior support element.
pub fn classify_stability(disc: &Discretization) -> StabilityClasses {
    let space = &disc.space;
    let dim = space.dim();
    let fgrid = space.function_grid();
    let egrid = space.element_grid();
    let mut inner = Vec::new();
    let mut outer = Vec::new();
    for (l, &g) in disc.active.globals().iter().enumerate() {
        let supp = space.support(&fgrid.multi(g));
        let stable = supp
            .iter(dim)
            .any(|e| disc.classification.element_tags[egrid.linear(&e)] == Tag::Interior);
        if stable {
            inner.push(l);
        } else {
            outer.push(l);
        }
    }
    StabilityClasses { inner, outer }
}

/// Extension of one outer function onto a tensor block of inner functions.
#[derive(Debug, Clone, PartialEq)]
pub struct Extension {
    /// Active index of the outer function.
    pub outer: usize,
    pub block: IndexBox,
    /// Univariate coefficients per direction, indexed from `block.lo`.
    pub coefficients: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct ExtensionMap {
    pub classes: StabilityClasses,
    pub extensions: Vec<Extension>,
    /// Rows: active functions; columns: inner functions in `classes.inner` order.
    pub operator: SparseRowMatrix,
}

/// Coefficients `e_l`, `l = l0..=l0+p`, with `B_j`'s polynomial coefficient
/// equal to `Σ e_l` times those of the block, for every polynomial of degree `p`.
///
/// Uses the dual functionals of Marsden's identity, `ψ_i(y) = Π_r (y − t_{i+r})`;
/// on uniform knots this is index-space Lagrange extrapolation.
pub fn extension_coefficients(basis: &BSplineBasis, j: usize, l0: usize) -> Result<Vec<f64>> {
    let p = basis.degree();
    let t = basis.knot_vector().knots();
    if l0 + p >= basis.num_functions() {
        return Err(Error::argument(format!("block {l0}..={} exceeds the basis", l0 + p)));
    }
    let psi = |i: usize, y: f64| (1..=p).map(|r| y - t[i + r]).product::<f64>();
    let (a, b) = (t[l0 + 1].min(t[j + 1]), t[l0 + p].max(t[j + p]).max(t[l0 + p + 1]));
    let (a, b) = if b > a { (a, b) } else { basis.domain() };
    let n = p + 1;
    let ys: Vec<f64> = (0..n)
        .map(|m| 0.5 * (a + b) - 0.5 * (b - a) * ((2 * m + 1) as f64 * std::f64::consts::PI / (2 * n) as f64).cos())
        .collect();
    let mat = DMatrix::from_fn(n, n, |m, l| psi(l0 + l, ys[m]));
    let rhs = DVector::from_iterator(n, ys.iter().map(|&y| psi(j, y)));
    let sol = mat
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Stabilization(format!("singular extension system for function {j}")))?;
    Ok(sol.iter().copied().collect())
}

/// Chooses a tensor block of inner functions for every outer function.
pub fn build_extension(disc: &Discretization, classes: &StabilityClasses) -> Result<ExtensionMap> {
    let space = &disc.space;
    let dim = space.dim();
    let fgrid = space.function_grid();
    let n = fgrid.ext;
    let ninner = classes.inner.len();

    // prefix sums of the inner indicator over the function grid
    let ext = [n[0] + 1, n[1] + 1, n[2] + 1];
    let at = |i: usize, j: usize, k: usize| (i * ext[1] + j) * ext[2] + k;
    let mut sums = vec![0i64; ext[0] * ext[1] * ext[2]];
    let mut is_inner = vec![false; fgrid.len()];
    for &l in &classes.inner {
        is_inner[disc.active.to_global(l)] = true;
    }
    for i in 1..ext[0] {
        for j in 1..ext[1] {
            for k in 1..ext[2] {
                let own = is_inner[fgrid.linear(&[i - 1, j - 1, k - 1])] as i64;
                sums[at(i, j, k)] = own + sums[at(i - 1, j, k)] + sums[at(i, j - 1, k)] + sums[at(i, j, k - 1)]
                    - sums[at(i - 1, j - 1, k)]
                    - sums[at(i - 1, j, k - 1)]
                    - sums[at(i, j - 1, k - 1)]
                    + sums[at(i - 1, j - 1, k - 1)];
            }
        }
    }
    let count = |lo: &MultiIndex, hi: &MultiIndex| {
        let b = [hi[0] + 1, hi[1] + 1, hi[2] + 1];
        sums[at(b[0], b[1], b[2])] - sums[at(lo[0], b[1], b[2])] - sums[at(b[0], lo[1], b[2])]
            - sums[at(b[0], b[1], lo[2])]
            + sums[at(lo[0], lo[1], b[2])]
            + sums[at(lo[0], b[1], lo[2])]
            + sums[at(b[0], lo[1], lo[2])]
            - sums[at(lo[0], lo[1], lo[2])]
    };

    let mut inner_col = vec![usize::MAX; fgrid.len()];
    for (k, &l) in classes.inner.iter().enumerate() {
        inner_col[disc.active.to_global(l)] = k;
    }

    // mean Greville abscissa of every block of p+1 consecutive functions
    let centers: Vec<Vec<f64>> = (0..dim)
        .map(|d| {
            let b = space.basis(d);
            let (t, p) = (b.knot_vector().knots(), b.degree());
            let greville: Vec<f64> = (0..n[d])
                .map(|l| if p == 0 { 0.5 * (t[l] + t[l + 1]) } else { t[l + 1..=l + p].iter().sum::<f64>() / p as f64 })
                .collect();
            greville.windows(p + 1).map(|w| w.iter().sum::<f64>() / (p + 1) as f64).collect()
        })
        .collect();

    let mut extensions = Vec::with_capacity(classes.outer.len());
    for &o in &classes.outer {
        let j = fgrid.multi(disc.active.to_global(o));
        // candidate block origins per direction: (twice the index distance, block center, origin)
        let cands: Vec<Vec<(usize, f64, usize)>> = (0..dim)
            .map(|d| {
                let p = space.basis(d).degree();
                (0..=n[d] - p - 1)
                    .map(|l0| ((2 * l0 + p).abs_diff(2 * j[d]), centers[d][l0], l0))
                    .collect()
            })
            .collect();
        // nearest block first; ties go to the block whose center lies deepest inside Ω
        let mut best: Option<(usize, f64, MultiIndex)> = None;
        let total: usize = cands.iter().map(|c| c.len()).product();
        for r in 0..total {
            let mut rest = r;
            let (mut lo, mut hi, mut x) = ([0; 3], [0; 3], [0.0; 3]);
            let mut dist = 0;
            for d in (0..dim).rev() {
                let (dd, cd, l0) = cands[d][rest % cands[d].len()];
                rest /= cands[d].len();
                dist += dd;
                x[d] = cd;
                lo[d] = l0;
                hi[d] = l0 + space.basis(d).degree();
            }
            if best.is_some_and(|(bd, _, _)| dist > bd) {
                continue;
            }
            let depth = disc.plane.signed_distance(&x[..dim]);
            if best.is_some_and(|(bd, bdepth, _)| dist == bd && depth >= bdepth) {
                continue;
            }
            let size: i64 = (0..dim).map(|d| (hi[d] + 1 - lo[d]) as i64).product();
            if count(&lo, &hi) == size {
                best = Some((dist, depth, lo));
            }
        }
        let Some((_, _, lo)) = best else {
            return Err(Error::Stabilization(format!(
                "no inner block of size (p+1)^d available for outer function {j:?}; refine the mesh"
            )));
        };
        let mut block = IndexBox { lo, hi: lo };
        let mut coefficients = Vec::with_capacity(dim);
        for d in 0..dim {
            let basis = space.basis(d);
            block.hi[d] = lo[d] + basis.degree();
            coefficients.push(extension_coefficients(basis, j[d], lo[d])?);
        }
        extensions.push(Extension { outer: o, block, coefficients });
    }

    // operator rows in active order
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); disc.active.len()];
    for &l in &classes.inner {
        rows[l].push((inner_col[disc.active.to_global(l)], 1.0));
    }
    for ext in &extensions {
        let row = &mut rows[ext.outer];
        for i in ext.block.iter(dim) {
            let v: f64 = (0..dim).map(|d| ext.coefficients[d][i[d] - ext.block.lo[d]]).product();
            row.push((inner_col[fgrid.linear(&i)], v));
        }
    }
    let operator = SparseRowMatrix::from_rows(ninner, rows)?;
    Ok(ExtensionMap { classes: classes.clone(), extensions, operator })
}

impl ExtensionMap {
    /// Identity extension (no outer functions), e.g. for unstabilized solves.
    pub fn identity(n: usize) -> Self {
        Self {
            classes: StabilityClasses { inner: (0..n).collect(), outer: Vec::new() },
            extensions: Vec::new(),
            operator: SparseRowMatrix::identity(n),
        }
    }

    pub fn num_inner(&self) -> usize {
        self.operator.ncols()
    }

    /// `(Eᵀ M E, Eᵀ b)`.
    pub fn apply(&self, m: &SparseRowMatrix, b: &[f64]) -> Result<(SparseRowMatrix, Vec<f64>)> {
        let e = &self.operator;
        if m.nrows() != e.nrows() || m.ncols() != e.nrows() || b.len() != e.nrows() {
            return Err(Error::Dimension(format!(
                "system of size {}x{} with {} loads vs extension with {} rows",
                m.nrows(),
                m.ncols(),
                b.len(),
                e.nrows()
            )));
        }
        let me = m.mul(e)?;
        let reduced = e.transpose_mul(&me)?;
        let mut be = vec![0.0; e.ncols()];
        for r in 0..e.nrows() {
            let (cols, vals) = e.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                be[c] += v * b[r];
            }
        }
        Ok((reduced, be))
    }

    /// Coefficients of all active functions from the inner unknowns.
    pub fn expand(&self, inner: &[f64]) -> Result<Vec<f64>> {
        if inner.len() != self.num_inner() {
            return Err(Error::Dimension(format!("{} inner values, expected {}", inner.len(), self.num_inner())));
        }
        let mut out = vec![0.0; self.operator.nrows()];
        self.operator.matvec(inner, &mut out);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_extrapolation() {
        let b = BSplineBasis::uniform(1, 6, 0.0, 1.0).unwrap();
        let e = extension_coefficients(&b, 1, 2).unwrap();
        assert!((e[0] - 2.0).abs() < 1e-13 && (e[1] + 1.0).abs() < 1e-13);
    }

    #[test]
    fn own_block_gives_kronecker_delta() {
        let b = BSplineBasis::uniform(3, 8, 0.0, 1.0).unwrap();
        let e = extension_coefficients(&b, 5, 4).unwrap();
        for (k, v) in e.iter().enumerate() {
            let expect = if k == 1 { 1.0 } else { 0.0 };
            assert!((v - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_interior_matches_index_lagrange() {
        let p = 3;
        let b = BSplineBasis::uniform(p, 12, -1.0, 1.0).unwrap();
        let (j, l0) = (4usize, 6usize);
        let e = extension_coefficients(&b, j, l0).unwrap();
        for (k, v) in e.iter().enumerate() {
            let l = (l0 + k) as f64;
            let lag: f64 = (l0..=l0 + p)
                .filter(|&m| m != l0 + k)
                .map(|m| (j as f64 - m as f64) / (l - m as f64))
                .product();
            assert!((v - lag).abs() < 1e-10, "{v} vs {lag}");
        }
    }
}
