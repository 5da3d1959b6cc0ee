//! Quadrature on background elements clipped by the planar interface.
//!
//! Two independent constructions are provided. [`build_cut_cell_rule`]
//! cones the clipped polytope into simplices from its vertex centroid and
//! places collapsed (Duffy) Gauss rules on them. [`SlicedCellRule`] instead
//! writes the clipped cell as a union of sub-elements with affine bounds
//! along one axis at a time (outer axis, then middle, then the axis most
//! aligned with the normal), and keeps the nested tensor structure so the
//! element matrix can be formed by sum factorization.

use crate::cutgeom::{HalfSpaceInterface, MeshClassification, Tag, TensorSpace};
use crate::error::{Error, Result};
use crate::quadrature::gauss::{gauss_ref, MAX_GAUSS_POINTS};

/// Convex polytope `cell ∩ {side <= 0}`.
///
/// In 3D `faces` are outward-oriented (counter-clockwise seen from outside)
/// vertex loops; in 2D there is a single counter-clockwise loop.
#[derive(Debug, Clone)]
pub struct ClippedCell {
    pub dim: usize,
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<Vec<usize>>,
}

/// Quadrature rule on the inside part of one cut element.
#[derive(Debug, Clone)]
pub struct CutCellRule {
    pub element: usize,
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub volume: f64,
}

impl CutCellRule {
    pub fn integrate(&self, f: impl Fn(&[f64; 3]) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(x, w)| w * f(x)).sum()
    }
}

/// Default collapsed-rule order, exact for the mass integrand on a cut cell.
pub fn default_cut_order(p: usize) -> usize {
    3 * p + 2
}

fn sub(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn lerp(a: &[f64; 3], b: &[f64; 3], t: f64) -> [f64; 3] {
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), a[2] + t * (b[2] - a[2])]
}

/// Checks that the plane genuinely cuts the box (same tolerance as element tags).
fn check_cut(lo: &[f64], hi: &[f64], plane: &HalfSpaceInterface, eps: f64) -> Result<()> {
    let (smin, smax) = plane.box_range(lo, hi);
    if smax <= eps {
        return Err(Error::Classification(format!("cell {lo:?}..{hi:?} lies inside the domain")));
    }
    if smin >= -eps {
        return Err(Error::Classification(format!("cell {lo:?}..{hi:?} lies outside the domain")));
    }
    Ok(())
}

/// Sutherland–Hodgman clip of a polygon loop, keeping `side <= 0`.
fn clip_loop(poly: &[[f64; 3]], side: &dyn Fn(&[f64; 3]) -> f64, tol: f64) -> Vec<[f64; 3]> {
    let mut out = Vec::with_capacity(poly.len() + 2);
    let n = poly.len();
    for k in 0..n {
        let (a, b) = (&poly[k], &poly[(k + 1) % n]);
        let (sa, sb) = (side(a), side(b));
        if sa <= tol {
            out.push(*a);
        }
        if (sa < -tol && sb > tol) || (sa > tol && sb < -tol) {
            out.push(lerp(a, b, sa / (sa - sb)));
        }
    }
    out
}

/// Exact clip of the box `[lo, hi]` by the half-space of `plane`.
pub fn clip_cell(lo: &[f64], hi: &[f64], plane: &HalfSpaceInterface) -> Result<ClippedCell> {
    let dim = plane.dim();
    let diag = (0..dim).map(|d| (hi[d] - lo[d]).powi(2)).sum::<f64>().sqrt();
    check_cut(lo, hi, plane, 1e-12 * diag)?;
    let tol = 1e-14 * diag;
    let side = |x: &[f64; 3]| plane.signed_distance(&x[..dim]);
    if dim == 2 {
        let rect = [[lo[0], lo[1], 0.0], [hi[0], lo[1], 0.0], [hi[0], hi[1], 0.0], [lo[0], hi[1], 0.0]];
        let vertices = clip_loop(&rect, &side, tol);
        let faces = vec![(0..vertices.len()).collect()];
        return Ok(ClippedCell { dim, vertices, faces });
    }
    let corner = |k: usize| {
        [
            if k & 1 == 0 { lo[0] } else { hi[0] },
            if k & 2 == 0 { lo[1] } else { hi[1] },
            if k & 4 == 0 { lo[2] } else { hi[2] },
        ]
    };
    const BOX_FACES: [[usize; 4]; 6] =
        [[0, 4, 6, 2], [1, 3, 7, 5], [0, 1, 5, 4], [2, 6, 7, 3], [0, 2, 3, 1], [4, 5, 7, 6]];
    let mut vertices: Vec<[f64; 3]> = Vec::new();
    let index_of = |x: [f64; 3], vertices: &mut Vec<[f64; 3]>| {
        let close = |v: &[f64; 3]| (0..3).all(|d| (v[d] - x[d]).abs() <= tol);
        match vertices.iter().position(close) {
            Some(k) => k,
            None => {
                vertices.push(x);
                vertices.len() - 1
            }
        }
    };
    let mut faces = Vec::new();
    for face in BOX_FACES {
        let poly: Vec<[f64; 3]> = face.iter().map(|&k| corner(k)).collect();
        let clipped = clip_loop(&poly, &side, tol);
        if clipped.len() < 3 {
            continue;
        }
        let mut ids: Vec<usize> = clipped.into_iter().map(|x| index_of(x, &mut vertices)).collect();
        ids.dedup();
        if ids.first() == ids.last() && ids.len() > 1 {
            ids.pop();
        }
        if ids.len() >= 3 {
            faces.push(ids);
        }
    }
    // cap polygon on the plane, ordered counter-clockwise about the outward normal
    let cap: Vec<usize> = (0..vertices.len()).filter(|&k| side(&vertices[k]).abs() <= tol).collect();
    if cap.len() >= 3 {
        let n = [plane.unit_normal()[0], plane.unit_normal()[1], plane.unit_normal()[2]];
        let mut c = [0.0; 3];
        for &k in &cap {
            for d in 0..3 {
                c[d] += vertices[k][d] / cap.len() as f64;
            }
        }
        let helper = if n[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
        let u = cross(&n, &helper);
        let v = cross(&n, &u);
        let mut ordered: Vec<(f64, usize)> = cap
            .iter()
            .map(|&k| {
                let r = sub(&vertices[k], &c);
                (dot(&r, &v).atan2(dot(&r, &u)), k)
            })
            .collect();
        ordered.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut loop_ids: Vec<usize> = ordered.into_iter().map(|(_, k)| k).collect();
        // make the loop counter-clockwise about +n
        let (a, b, d) = (vertices[loop_ids[0]], vertices[loop_ids[1]], vertices[loop_ids[2]]);
        if dot(&cross(&sub(&b, &a), &sub(&d, &a)), &n) < 0.0 {
            loop_ids.reverse();
        }
        faces.push(loop_ids);
    }
    Ok(ClippedCell { dim, vertices, faces })
}

impl ClippedCell {
    /// Simplices coning every (fan-triangulated) face to the vertex centroid.
    pub fn simplices(&self, min_measure: f64) -> Vec<(Vec<[f64; 3]>, f64)> {
        let nv = self.vertices.len() as f64;
        let mut c = [0.0; 3];
        for v in &self.vertices {
            for d in 0..3 {
                c[d] += v[d] / nv;
            }
        }
        let mut out = Vec::new();
        for face in &self.faces {
            for k in 1..face.len().saturating_sub(1) {
                let a = self.vertices[face[0]];
                let b = self.vertices[face[k]];
                let d = self.vertices[face[k + 1]];
                if self.dim == 2 {
                    // the single loop is itself fan-triangulated from its first vertex
                    let area = 0.5 * cross(&sub(&b, &a), &sub(&d, &a))[2];
                    if area.abs() > min_measure {
                        out.push((vec![a, b, d], area.abs()));
                    }
                } else {
                    let vol = dot(&sub(&a, &c), &cross(&sub(&b, &c), &sub(&d, &c))) / 6.0;
                    if vol.abs() > min_measure {
                        out.push((vec![c, a, b, d], vol.abs()));
                    }
                }
            }
        }
        out
    }

    pub fn volume(&self) -> f64 {
        self.simplices(0.0).iter().map(|(_, v)| v).sum()
    }
}

/// Collapsed Gauss rule of order `q` per direction on the clipped cell.
pub fn build_cut_cell_rule(
    element: usize,
    lo: &[f64],
    hi: &[f64],
    plane: &HalfSpaceInterface,
    order: usize,
) -> Result<CutCellRule> {
    let dim = plane.dim();
    let cell_volume: f64 = (0..dim).map(|d| hi[d] - lo[d]).product();
    let clipped = clip_cell(lo, hi, plane)?;
    let g = gauss_ref(order)?;
    let nodes: Vec<(f64, f64)> = g.mapped(0.0, 1.0).collect();
    let mut points = Vec::new();
    let mut weights = Vec::new();
    let mut volume = 0.0;
    for (s, measure) in clipped.simplices(1e-14 * cell_volume) {
        volume += measure;
        if dim == 2 {
            for &(u, wu) in &nodes {
                for &(v, wv) in &nodes {
                    let p = lerp(&lerp(&s[0], &s[1], u), &lerp(&s[0], &s[2], u), v);
                    points.push(p);
                    weights.push(wu * wv * u * 2.0 * measure);
                }
            }
        } else {
            for &(u, wu) in &nodes {
                for &(v, wv) in &nodes {
                    for &(w, ww) in &nodes {
                        let mut p = s[0];
                        for d in 0..3 {
                            p[d] += u * (s[1][d] - s[0][d])
                                + u * v * (s[2][d] - s[1][d])
                                + u * v * w * (s[3][d] - s[2][d]);
                        }
                        points.push(p);
                        weights.push(wu * wv * ww * u * u * v * 6.0 * measure);
                    }
                }
            }
        }
    }
    Ok(CutCellRule { element, points, weights, volume })
}

/// One quadrature node of a [`SlicedCellRule`] level.
#[derive(Debug, Clone, Copy)]
pub struct SliceNode {
    pub coord: f64,
    pub weight: f64,
    /// Child node range in the next level.
    pub children: (u32, u32),
}

/// Nested tensor-structured rule on a clipped cell.
///
/// Level `l` holds nodes along axis `axes[l]`; a node's weight already
/// contains the length of its (possibly variable) integration interval.
#[derive(Debug, Clone)]
pub struct SlicedCellRule {
    pub element: usize,
    pub dim: usize,
    pub axes: [usize; 3],
    pub levels: Vec<Vec<SliceNode>>,
}

/// Keeps `f <= 0` for an affine `f` on a 2D polygon.
fn clip_polygon2(poly: &[[f64; 2]], f: &dyn Fn(&[f64; 2]) -> f64, tol: f64) -> Vec<[f64; 2]> {
    let lifted: Vec<[f64; 3]> = poly.iter().map(|p| [p[0], p[1], 0.0]).collect();
    clip_loop(&lifted, &|x: &[f64; 3]| f(&[x[0], x[1]]), tol)
        .into_iter()
        .map(|x| [x[0], x[1]])
        .collect()
}

/// Vertical extent of a convex polygon at abscissa `x`.
fn extent_at(poly: &[[f64; 2]], x: f64) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for k in 0..poly.len() {
        let (a, b) = (poly[k], poly[(k + 1) % poly.len()]);
        let (x0, x1) = (a[0].min(b[0]), a[0].max(b[0]));
        if x < x0 || x > x1 || a[0] == b[0] {
            continue;
        }
        let y = a[1] + (x - a[0]) * (b[1] - a[1]) / (b[0] - a[0]);
        lo = lo.min(y);
        hi = hi.max(y);
    }
    (lo <= hi).then_some((lo, hi))
}

/// Affine lower and upper bound `y(x) = c0 + c1 x` on each vertical slab of a polygon.
fn polygon_slabs(poly: &[[f64; 2]], tol: f64) -> Vec<(f64, f64, [f64; 2], [f64; 2])> {
    let mut xs: Vec<f64> = poly.iter().map(|p| p[0]).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup_by(|a, b| (*a - *b).abs() <= tol);
    let mut out = Vec::new();
    for w in xs.windows(2) {
        let (xa, xb) = (w[0], w[1]);
        if xb - xa <= tol {
            continue;
        }
        let (x1, x2) = (xa + (xb - xa) / 3.0, xa + 2.0 * (xb - xa) / 3.0);
        let (Some((l1, h1)), Some((l2, h2))) = (extent_at(poly, x1), extent_at(poly, x2)) else {
            continue;
        };
        let slope_lo = (l2 - l1) / (x2 - x1);
        let slope_hi = (h2 - h1) / (x2 - x1);
        out.push((xa, xb, [l1 - slope_lo * x1, slope_lo], [h1 - slope_hi * x1, slope_hi]));
    }
    out
}

/// Inner-axis bounds: fixed interval or one side given by the plane.
#[derive(Clone, Copy)]
enum InnerBound {
    Full,
    Partial,
}

struct SliceBuilder {
    levels: Vec<Vec<SliceNode>>,
    counts: Vec<usize>,
}

impl SliceBuilder {
    fn new(dim: usize, order: usize) -> Self {
        // level l (outer = 0) resolves polynomial degree growing with the nesting depth
        let counts = (0..dim)
            .map(|l| ((dim - l) * order).div_ceil(3).clamp(1, MAX_GAUSS_POINTS))
            .collect();
        Self { levels: vec![Vec::new(); dim], counts }
    }

    /// Pushes the Gauss nodes of `[a, b]` on `level`; returns their index range.
    fn push(&mut self, level: usize, a: f64, b: f64, scale: f64) -> std::ops::Range<usize> {
        let start = self.levels[level].len();
        if b > a {
            let g = gauss_ref(self.counts[level]).unwrap();
            for (x, w) in g.mapped(a, b) {
                self.levels[level].push(SliceNode { coord: x, weight: w * scale, children: (0, 0) });
            }
        }
        start..self.levels[level].len()
    }

    fn link(&mut self, level: usize, node: usize, children: std::ops::Range<usize>) {
        self.levels[level][node].children = (children.start as u32, children.end as u32);
    }
}

impl SlicedCellRule {
    /// Builds the nested rule; `order` plays the role of the outermost Gauss count.
    pub fn new(
        element: usize,
        lo: &[f64],
        hi: &[f64],
        plane: &HalfSpaceInterface,
        order: usize,
    ) -> Result<Self> {
        let dim = plane.dim();
        let diag = (0..dim).map(|d| (hi[d] - lo[d]).powi(2)).sum::<f64>().sqrt();
        check_cut(lo, hi, plane, 1e-12 * diag)?;
        let tol = 1e-14 * diag;
        let n = plane.unit_normal();
        let q = plane.point();
        let k = (0..dim).max_by(|&a, &b| n[a].abs().total_cmp(&n[b].abs())).unwrap();
        let others: Vec<usize> = (0..dim).filter(|&d| d != k).collect();
        let mut axes = [0; 3];
        axes[..dim - 1].copy_from_slice(&others);
        axes[dim - 1] = k;
        // inner-axis coordinate of the plane over the outer coordinates
        let plane_height = |x: &[f64]| {
            let mut s = 0.0;
            for (j, &d) in others.iter().enumerate() {
                s += n[d] * (x[j] - q[d]);
            }
            q[k] - s / n[k]
        };
        let (z0, z1) = (lo[k], hi[k]);
        let upper = n[k] > 0.0;
        let inner = |x: &[f64], kind: InnerBound| -> (f64, f64) {
            match kind {
                InnerBound::Full => (z0, z1),
                InnerBound::Partial if upper => (z0, plane_height(x).clamp(z0, z1)),
                InnerBound::Partial => (plane_height(x).clamp(z0, z1), z1),
            }
        };
        // region of the outer coordinates where the inner interval is full / partial
        let full_sel = |x: &[f64]| if upper { z1 - plane_height(x) } else { plane_height(x) - z0 };
        let part_lo = |x: &[f64]| z0 - plane_height(x);
        let part_hi = |x: &[f64]| plane_height(x) - z1;

        let mut b = SliceBuilder::new(dim, order);
        if dim == 2 {
            let a = others[0];
            // clip the outer segment by each affine constraint
            let interval = |keep: &[&dyn Fn(&[f64]) -> f64]| {
                let (mut s, mut e) = (lo[a], hi[a]);
                for f in keep {
                    let (fs, fe) = (f(&[s]), f(&[e]));
                    if fs > 0.0 && fe > 0.0 {
                        return None;
                    }
                    if fs > 0.0 {
                        s += (e - s) * fs / (fs - fe);
                    } else if fe > 0.0 {
                        e += (s - e) * fe / (fe - fs);
                    }
                }
                Some((s, e))
            };
            let pieces = [
                (InnerBound::Full, interval(&[&full_sel])),
                (InnerBound::Partial, interval(&[&part_lo, &part_hi])),
            ];
            for (kind, seg) in pieces {
                let Some((s, e)) = seg else { continue };
                if e - s <= tol {
                    continue;
                }
                for o in b.push(0, s, e, 1.0) {
                    let x = [b.levels[0][o].coord];
                    let (zl, zh) = inner(&x, kind);
                    let r = b.push(1, zl, zh, 1.0);
                    b.link(0, o, r);
                }
            }
        } else {
            let (a0, a1) = (others[0], others[1]);
            let rect = [[lo[a0], lo[a1]], [hi[a0], lo[a1]], [hi[a0], hi[a1]], [lo[a0], hi[a1]]];
            let full = clip_polygon2(&rect, &|x| full_sel(x), tol);
            let part = clip_polygon2(&clip_polygon2(&rect, &|x| part_lo(x), tol), &|x| part_hi(x), tol);
            for (kind, poly) in [(InnerBound::Full, full), (InnerBound::Partial, part)] {
                if poly.len() < 3 {
                    continue;
                }
                for (xa, xb, ylo, yhi) in polygon_slabs(&poly, tol) {
                    for o in b.push(0, xa, xb, 1.0) {
                        let x = b.levels[0][o].coord;
                        let (yl, yh) = (ylo[0] + ylo[1] * x, yhi[0] + yhi[1] * x);
                        let mids = b.push(1, yl, yh.max(yl), 1.0);
                        for m in mids.clone() {
                            let y = b.levels[1][m].coord;
                            let (zl, zh) = inner(&[x, y], kind);
                            let r = b.push(2, zl, zh, 1.0);
                            b.link(1, m, r);
                        }
                        b.link(0, o, mids);
                    }
                }
            }
        }
        Ok(Self { element, dim, axes, levels: b.levels })
    }

    pub fn num_points(&self) -> usize {
        self.levels[self.dim - 1].len()
    }

    /// Flattened points and weights.
    pub fn flatten(&self) -> CutCellRule {
        let mut points = Vec::with_capacity(self.num_points());
        let mut weights = Vec::with_capacity(self.num_points());
        let mut x = [0.0; 3];
        self.walk(0, 0..self.levels[0].len(), 1.0, &mut x, &mut |x, w| {
            points.push(*x);
            weights.push(w);
        });
        let volume = weights.iter().sum();
        CutCellRule { element: self.element, points, weights, volume }
    }

    fn walk(
        &self,
        level: usize,
        range: std::ops::Range<usize>,
        w: f64,
        x: &mut [f64; 3],
        f: &mut dyn FnMut(&[f64; 3], f64),
    ) {
        for node in &self.levels[level][range] {
            x[self.axes[level]] = node.coord;
            if level + 1 == self.dim {
                f(x, w * node.weight);
            } else {
                let (s, e) = node.children;
                self.walk(level + 1, s as usize..e as usize, w * node.weight, x, f);
            }
        }
    }
}

/// `|Ω|` as interior element volumes plus cut-cell rule volumes.
pub fn omega_volume(
    space: &TensorSpace,
    cls: &MeshClassification,
    plane: &HalfSpaceInterface,
    order: usize,
) -> Result<f64> {
    let grid = space.element_grid();
    let mut vol = 0.0;
    for (lin, tag) in cls.element_tags.iter().enumerate() {
        let e = grid.multi(lin);
        match tag {
            Tag::Interior => vol += space.element_volume(&e),
            Tag::Cut => {
                let (lo, hi) = space.element_bounds(&e);
                vol += SlicedCellRule::new(lin, &lo, &hi, plane, order)?.flatten().volume;
            }
            Tag::Exterior => {}
        }
    }
    Ok(vol)
}
