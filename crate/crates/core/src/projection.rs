//! L2 projection: preconditioned CG, field evaluation and the relative L2 error on Ω.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::assembly::{ActiveSet, Discretization, SparseRowMatrix};
use crate::cutgeom::{Tag, TensorSpace};
use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre;

pub const CG_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// Final preconditioned residual relative to the initial one.
    pub residual: f64,
    pub converged: bool,
}

/// Jacobi-preconditioned conjugate gradients from a zero initial guess.
///
/// Stops once `sqrt(rᵀ D⁻¹ r) ≤ tol · sqrt(bᵀ D⁻¹ b)`; `maxit` defaults to `10 n`.
pub fn solve_cg(a: &SparseRowMatrix, b: &[f64], tol: f64, maxit: Option<usize>) -> Result<SolveReport> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::Dimension(format!("{}x{} system with {} loads", n, a.ncols(), b.len())));
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let maxit = maxit.unwrap_or(10 * n.max(1));
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz: f64 = dot(&r, &z);
    let norm0 = rz.max(0.0).sqrt();
    if norm0 == 0.0 {
        return Ok(SolveReport { solution: x, iterations: 0, residual: 0.0, converged: true });
    }
    let mut rel = 1.0;
    let mut it = 0;
    while it < maxit {
        a.matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            break;
        }
        let alpha = rz / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
            z[k] = r[k] * inv_diag[k];
        }
        it += 1;
        let rz_new = dot(&r, &z);
        rel = rz_new.max(0.0).sqrt() / norm0;
        if rel <= tol {
            break;
        }
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    Ok(SolveReport { solution: x, iterations: it, residual: rel, converged: rel <= tol })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Spreads active-ordered coefficients onto all functions of the space (zeros elsewhere).
pub fn scatter(active: &ActiveSet, total: usize, local: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; total];
    for (l, &v) in local.iter().enumerate() {
        out[active.to_global(l)] = v;
    }
    out
}

/// `Σ c_i B_i(x)` over the functions nonzero at `x`; `coefficients` spans the whole space.
pub fn eval_field(space: &TensorSpace, coefficients: &[f64], x: &[f64]) -> Result<f64> {
    if coefficients.len() != space.num_functions() {
        return Err(Error::Dimension(format!(
            "{} coefficients for {} functions",
            coefficients.len(),
            space.num_functions()
        )));
    }
    let e = space.find_element(x)?;
    let dim = space.dim();
    let vals: Vec<Vec<f64>> = (0..dim)
        .map(|d| {
            let mut v = vec![0.0; space.basis(d).degree() + 1];
            space.basis(d).eval_in_element(e[d], x[d], &mut v);
            v
        })
        .collect();
    let fb = space.element_functions(&e);
    let grid = space.function_grid();
    let mut s = 0.0;
    for i in fb.iter(dim) {
        let phi: f64 = (0..dim).map(|d| vals[d][i[d] - fb.lo[d]]).product();
        s += coefficients[grid.linear(&i)] * phi;
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L2Error {
    pub absolute: f64,
    pub relative: f64,
}

/// `sqrt(∫_Ω (u − f)² / ∫_Ω f²)` with `(p+2)^d` Gauss points on interior elements
/// and the discretization's cut-cell rules on cut elements.
pub fn l2_error(disc: &Discretization, coefficients: &[f64], f: &dyn Fn(&[f64]) -> f64) -> Result<L2Error> {
    let space = &disc.space;
    let dim = space.dim();
    let g = gauss_legendre(space.max_degree() + 2)?;
    let egrid = space.element_grid();
    let (mut err2, mut norm2) = (0.0, 0.0);
    let mut acc = |x: &[f64], w: f64| -> Result<()> {
        let fv = f(x);
        if !fv.is_finite() {
            return Err(Error::Evaluation(x.to_vec()));
        }
        let u = eval_field(space, coefficients, x)?;
        err2 += w * (u - fv) * (u - fv);
        norm2 += w * fv * fv;
        Ok(())
    };
    for (lin, tag) in disc.classification.element_tags.iter().enumerate() {
        match tag {
            Tag::Exterior => {}
            Tag::Cut => {
                let rule = disc.cut_rule(lin)?.flatten();
                for (x, &w) in rule.points.iter().zip(&rule.weights) {
                    acc(&x[..dim], w)?;
                }
            }
            Tag::Interior => {
                let (lo, hi) = space.element_bounds(&egrid.multi(lin));
                let per: Vec<Vec<(f64, f64)>> = (0..dim).map(|d| g.mapped(lo[d], hi[d]).collect()).collect();
                let nq = g.points().len();
                let mut x = [0.0; 3];
                for r in 0..nq.pow(dim as u32) {
                    let mut rest = r;
                    let mut w = 1.0;
                    for d in (0..dim).rev() {
                        let (xd, wd) = per[d][rest % nq];
                        rest /= nq;
                        x[d] = xd;
                        w *= wd;
                    }
                    acc(&x[..dim], w)?;
                }
            }
        }
    }
    if norm2 < 1e-300 {
        return Err(Error::Normalization(format!("∫f² = {norm2:e} over the domain")));
    }
    Ok(L2Error { absolute: err2.sqrt(), relative: (err2 / norm2).sqrt() })
}

/// Spectral condition estimate of a symmetric positive definite matrix, or of
/// its Jacobi-scaled form `D^{-1/2} A D^{-1/2}` when `jacobi` is set.
///
/// Lanczos with full reorthogonalization for up to `steps` iterations; the
/// extreme Ritz values bound the spectrum from inside, so the estimate is a
/// lower bound of the true condition number.
pub fn condition_estimate(a: &SparseRowMatrix, steps: usize, jacobi: bool) -> Result<f64> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(Error::Dimension(format!("condition estimate of a {}x{} matrix", n, a.ncols())));
    }
    let s: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if jacobi && d > 0.0 { 1.0 / d.sqrt() } else { 1.0 })
        .collect();
    let k = steps.min(n).max(1);
    // deterministic start vector with all components nonzero
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i as f64) * 0.7548776662).sin()).collect();
    let nv = dot(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= nv);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    let (mut alpha, mut beta) = (Vec::with_capacity(k), Vec::with_capacity(k));
    let mut tmp = vec![0.0; n];
    let mut w = vec![0.0; n];
    for j in 0..k {
        for i in 0..n {
            tmp[i] = s[i] * v[i];
        }
        a.matvec(&tmp, &mut w);
        for i in 0..n {
            w[i] *= s[i];
        }
        let aj = dot(&w, &v);
        alpha.push(aj);
        basis.push(v.clone());
        for _ in 0..2 {
            for q in &basis {
                let c = dot(&w, q);
                for i in 0..n {
                    w[i] -= c * q[i];
                }
            }
        }
        let bj = dot(&w, &w).sqrt();
        if j + 1 == k || bj <= 1e-14 * aj.abs() {
            break;
        }
        beta.push(bj);
        for i in 0..n {
            v[i] = w[i] / bj;
        }
    }
    let m = alpha.len();
    let t = DMatrix::from_fn(m, m, |r, c| {
        if r == c {
            alpha[r]
        } else if r == c + 1 {
            beta[c]
        } else if c == r + 1 {
            beta[r]
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(t).eigenvalues;
    let hi = eig.iter().cloned().fold(f64::MIN, f64::max);
    let lo = eig.iter().cloned().fold(f64::MAX, f64::min);
    if lo <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(hi / lo)
}
