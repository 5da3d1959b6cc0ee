//! Tensor-product spaces cut by a planar interface.
//!
//! Elements and functions are tagged [`Tag::Interior`], [`Tag::Cut`] or
//! [`Tag::Exterior`]; every cut function's support is then split into a
//! tensor-structured regular slab (bounded by an artificial knot `δ`) and the
//! leftover elements, see [`find_split`].

use serde::Serialize;

use crate::error::{Error, Result};
use crate::splines::BSplineBasis;

/// Multi-index padded to three entries; unused trailing entries are zero.
pub type MultiIndex = [usize; 3];

/// Inclusive axis-aligned box of element (or function) indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexBox {
    pub lo: MultiIndex,
    pub hi: MultiIndex,
}

impl IndexBox {
    pub fn extent(&self, d: usize) -> usize {
        self.hi[d] + 1 - self.lo[d]
    }

    pub fn count(&self, dim: usize) -> usize {
        (0..dim).map(|d| self.extent(d)).product()
    }

    pub fn contains(&self, idx: &MultiIndex, dim: usize) -> bool {
        (0..dim).all(|d| idx[d] >= self.lo[d] && idx[d] <= self.hi[d])
    }

    /// Lexicographic iteration (last direction fastest).
    pub fn iter(&self, dim: usize) -> impl Iterator<Item = MultiIndex> + '_ {
        let total = self.count(dim);
        (0..total).map(move |mut r| {
            let mut idx = [0; 3];
            for d in (0..dim).rev() {
                let ext = self.extent(d);
                idx[d] = self.lo[d] + r % ext;
                r /= ext;
            }
            idx
        })
    }
}

/// Lexicographic linearization over extents padded with ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    pub ext: [usize; 3],
}

impl Grid {
    pub fn len(&self) -> usize {
        self.ext.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn linear(&self, idx: &MultiIndex) -> usize {
        (idx[0] * self.ext[1] + idx[1]) * self.ext[2] + idx[2]
    }

    pub fn multi(&self, mut lin: usize) -> MultiIndex {
        let mut idx = [0; 3];
        for d in (0..3).rev() {
            idx[d] = lin % self.ext[d];
            lin /= self.ext[d];
        }
        idx
    }
}

/// Tensor product of univariate bases with identity geometry.
#[derive(Debug, Clone)]
pub struct TensorSpace {
    bases: Vec<BSplineBasis>,
    functions: Grid,
    elements: Grid,
}

impl TensorSpace {
    pub fn new(bases: Vec<BSplineBasis>) -> Result<Self> {
        if !(2..=3).contains(&bases.len()) {
            return Err(Error::argument(format!(
                "tensor spaces need 2 or 3 directions, got {}",
                bases.len()
            )));
        }
        let mut fext = [1; 3];
        let mut eext = [1; 3];
        for (d, b) in bases.iter().enumerate() {
            fext[d] = b.num_functions();
            eext[d] = b.num_elements();
        }
        Ok(Self { bases, functions: Grid { ext: fext }, elements: Grid { ext: eext } })
    }

    /// Same uniform basis in every direction on `[a, b]^dim`.
    pub fn uniform(dim: usize, p: usize, h: usize, a: f64, b: f64) -> Result<Self> {
        let basis = BSplineBasis::uniform(p, h, a, b)?;
        Self::new(vec![basis; dim])
    }

    pub fn dim(&self) -> usize {
        self.bases.len()
    }

    pub fn basis(&self, d: usize) -> &BSplineBasis {
        &self.bases[d]
    }

    pub fn bases(&self) -> &[BSplineBasis] {
        &self.bases
    }

    pub fn function_grid(&self) -> Grid {
        self.functions
    }

    pub fn element_grid(&self) -> Grid {
        self.elements
    }

    pub fn num_functions(&self) -> usize {
        self.functions.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn max_degree(&self) -> usize {
        self.bases.iter().map(|b| b.degree()).max().unwrap()
    }

    /// Lower and upper corner of the background domain.
    pub fn domain(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for (d, b) in self.bases.iter().enumerate() {
            (lo[d], hi[d]) = b.domain();
        }
        (lo, hi)
    }

    pub fn diameter(&self) -> f64 {
        let (lo, hi) = self.domain();
        (0..self.dim()).map(|d| (hi[d] - lo[d]).powi(2)).sum::<f64>().sqrt()
    }

    pub fn element_bounds(&self, e: &MultiIndex) -> ([f64; 3], [f64; 3]) {
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for (d, b) in self.bases.iter().enumerate() {
            (lo[d], hi[d]) = b.element_bounds(e[d]);
        }
        (lo, hi)
    }

    pub fn element_volume(&self, e: &MultiIndex) -> f64 {
        let (lo, hi) = self.element_bounds(e);
        (0..self.dim()).map(|d| hi[d] - lo[d]).product()
    }

    /// Element box covering `supp(B_i)`.
    pub fn support(&self, i: &MultiIndex) -> IndexBox {
        let mut lo = [0; 3];
        let mut hi = [0; 3];
        for (d, b) in self.bases.iter().enumerate() {
            (lo[d], hi[d]) = b.support(i[d]);
        }
        IndexBox { lo, hi }
    }

    /// Box of the functions whose support overlaps the support of `i`.
    pub fn neighbor_box(&self, i: &MultiIndex) -> IndexBox {
        let s = self.support(i);
        let mut nb = s;
        for (d, b) in self.bases.iter().enumerate() {
            nb.lo[d] = b.first_function(s.lo[d]);
            nb.hi[d] = b.first_function(s.hi[d]) + b.degree();
        }
        nb
    }

    /// Box of the functions nonzero on element `e`.
    pub fn element_functions(&self, e: &MultiIndex) -> IndexBox {
        let mut lo = [0; 3];
        let mut hi = [0; 3];
        for (d, b) in self.bases.iter().enumerate() {
            lo[d] = b.first_function(e[d]);
            hi[d] = lo[d] + b.degree();
        }
        IndexBox { lo, hi }
    }

    /// Element containing the point `x` (right end maps to the last element).
    pub fn find_element(&self, x: &[f64]) -> Result<MultiIndex> {
        let mut e = [0; 3];
        for (d, b) in self.bases.iter().enumerate() {
            e[d] = b.find_element(x[d])?;
        }
        Ok(e)
    }
}

/// Planar interface; the domain of interest is `{x : n·(x − q) <= 0}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HalfSpaceInterface {
    point: Vec<f64>,
    normal: Vec<f64>,
    unit: Vec<f64>,
}

impl HalfSpaceInterface {
    pub fn new(point: Vec<f64>, normal: Vec<f64>) -> Result<Self> {
        if point.len() != normal.len() || !(2..=3).contains(&point.len()) {
            return Err(Error::argument("plane point and normal need 2 or 3 matching components"));
        }
        let len = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(len > 0.0) || !len.is_finite() || point.iter().any(|v| !v.is_finite()) {
            return Err(Error::argument("plane normal must be finite and nonzero"));
        }
        let unit = normal.iter().map(|v| v / len).collect();
        Ok(Self { point, normal, unit })
    }

    /// The interface used in the reference experiments.
    pub fn reference() -> Self {
        Self::new(vec![0.1, 0.2, 0.3], vec![0.5, -0.2, 0.9]).unwrap()
    }

    pub fn dim(&self) -> usize {
        self.point.len()
    }

    pub fn point(&self) -> &[f64] {
        &self.point
    }

    pub fn normal(&self) -> &[f64] {
        &self.normal
    }

    pub fn unit_normal(&self) -> &[f64] {
        &self.unit
    }

    /// `n·(x − q)` with the normal as given.
    pub fn side(&self, x: &[f64]) -> f64 {
        self.normal.iter().zip(&self.point).zip(x).map(|((n, q), x)| n * (x - q)).sum()
    }

    /// Signed distance to the plane, negative inside.
    pub fn signed_distance(&self, x: &[f64]) -> f64 {
        self.unit.iter().zip(&self.point).zip(x).map(|((n, q), x)| n * (x - q)).sum()
    }

    pub fn is_inside(&self, x: &[f64]) -> bool {
        self.side(x) <= 0.0
    }

    /// Minimum and maximum signed distance over an axis-aligned box.
    pub fn box_range(&self, lo: &[f64], hi: &[f64]) -> (f64, f64) {
        let mut center = 0.0;
        let mut spread = 0.0;
        for d in 0..self.dim() {
            let c = 0.5 * (lo[d] + hi[d]);
            center += self.unit[d] * (c - self.point[d]);
            spread += self.unit[d].abs() * 0.5 * (hi[d] - lo[d]);
        }
        (center - spread, center + spread)
    }

    /// Copy moved along the normal so that the signed distance changes by `-offset`.
    pub fn shifted(&self, offset: f64) -> Self {
        let point = self.point.iter().zip(&self.unit).map(|(q, n)| q + offset * n).collect();
        Self::new(point, self.normal.clone()).unwrap()
    }

    pub fn flipped(&self) -> Self {
        Self::new(self.point.clone(), self.normal.iter().map(|n| -n).collect()).unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Tag {
    Interior,
    Cut,
    Exterior,
}

/// Element and function tags of a cut background mesh.
#[derive(Debug, Clone)]
pub struct MeshClassification {
    pub element_tags: Vec<Tag>,
    pub function_tags: Vec<Tag>,
    /// Linear indices of the cut elements, increasing.
    pub cut_elements: Vec<usize>,
}

impl MeshClassification {
    pub fn new(space: &TensorSpace, plane: &HalfSpaceInterface) -> Result<Self> {
        let element_tags = classify_elements(space, plane)?;
        let function_tags = classify_functions(space, &element_tags);
        let cut_elements = element_tags
            .iter()
            .enumerate()
            .filter(|(_, t)| **t == Tag::Cut)
            .map(|(e, _)| e)
            .collect();
        Ok(Self { element_tags, function_tags, cut_elements })
    }

    pub fn element_tag(&self, space: &TensorSpace, e: &MultiIndex) -> Tag {
        self.element_tags[space.element_grid().linear(e)]
    }

    pub fn function_tag(&self, space: &TensorSpace, i: &MultiIndex) -> Tag {
        self.function_tags[space.function_grid().linear(i)]
    }

    pub fn count_functions(&self, tag: Tag) -> usize {
        self.function_tags.iter().filter(|&&t| t == tag).count()
    }

    /// Linear indices of functions with the given tag, increasing.
    pub fn functions_with(&self, tag: Tag) -> Vec<usize> {
        (0..self.function_tags.len()).filter(|&i| self.function_tags[i] == tag).collect()
    }
}

/// Corner-sign element tags with tolerance `1e-12 · diameter`; Interior wins ties.
pub fn classify_elements(space: &TensorSpace, plane: &HalfSpaceInterface) -> Result<Vec<Tag>> {
    if plane.dim() != space.dim() {
        return Err(Error::Dimension(format!(
            "plane has {} components, space has dimension {}",
            plane.dim(),
            space.dim()
        )));
    }
    let eps = 1e-12 * space.diameter();
    let grid = space.element_grid();
    Ok((0..grid.len())
        .map(|lin| {
            let (lo, hi) = space.element_bounds(&grid.multi(lin));
            let (smin, smax) = plane.box_range(&lo, &hi);
            if smax <= eps {
                Tag::Interior
            } else if smin >= -eps {
                Tag::Exterior
            } else {
                Tag::Cut
            }
        })
        .collect())
}

/// Function tags from the tags of their support elements.
pub fn classify_functions(space: &TensorSpace, element_tags: &[Tag]) -> Vec<Tag> {
    let fgrid = space.function_grid();
    let egrid = space.element_grid();
    let dim = space.dim();
    (0..fgrid.len())
        .map(|lin| {
            let supp = space.support(&fgrid.multi(lin));
            let (mut all_in, mut all_out) = (true, true);
            for e in supp.iter(dim) {
                match element_tags[egrid.linear(&e)] {
                    Tag::Interior => all_out = false,
                    Tag::Exterior => all_in = false,
                    Tag::Cut => {
                        all_in = false;
                        all_out = false;
                    }
                }
            }
            if all_in {
                Tag::Interior
            } else if all_out {
                Tag::Exterior
            } else {
                Tag::Cut
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Side {
    Below,
    Above,
}

/// Artificial discontinuity `δ` bounding a cut function's regular slab.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitPlane {
    pub dir: usize,
    /// Break index in direction `dir`; `delta == breaks[break_index]`.
    pub break_index: usize,
    pub delta: f64,
    /// Side of `δ` integrated by the regular slab.
    pub side: Side,
}

/// Regular/cut decomposition of one cut function's support.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportSplit {
    pub function: usize,
    pub split: Option<SplitPlane>,
    /// Interior, tensor-structured slab on the good side of `δ`.
    pub regular_box: Option<IndexBox>,
    /// Interior support elements outside the slab (linear element indices).
    pub leftover_interior: Vec<usize>,
    /// Cut support elements (linear element indices).
    pub leftover_cut: Vec<usize>,
}

impl SupportSplit {
    pub fn regular_count(&self, dim: usize) -> usize {
        self.regular_box.map_or(0, |b| b.count(dim))
    }
}

struct Candidate {
    count: usize,
    volume: f64,
    dir: usize,
    distance: f64,
    plane: SplitPlane,
    slab: IndexBox,
}

impl Candidate {
    /// True if `self` should replace `best`.
    fn beats(&self, best: &Candidate) -> bool {
        let vol_tol = 1e-12 * best.volume.max(self.volume);
        if self.count != best.count {
            return self.count > best.count;
        }
        if (self.volume - best.volume).abs() > vol_tol {
            return self.volume > best.volume;
        }
        if self.dir != best.dir {
            return self.dir < best.dir;
        }
        // farther from the interface means more negative signed distance
        self.distance < best.distance - 1e-14
    }
}

/// Exhaustive search for the split knot maximizing the interior slab.
pub fn find_split(
    space: &TensorSpace,
    cls: &MeshClassification,
    plane: &HalfSpaceInterface,
    function: usize,
) -> SupportSplit {
    let dim = space.dim();
    let egrid = space.element_grid();
    let idx = space.function_grid().multi(function);
    let supp = space.support(&idx);
    let interior = |e: &MultiIndex| cls.element_tags[egrid.linear(e)] == Tag::Interior;

    let mut best: Option<Candidate> = None;
    for dir in 0..dim {
        for cut in supp.lo[dir]..supp.hi[dir] {
            for side in [Side::Below, Side::Above] {
                let mut slab = supp;
                match side {
                    Side::Below => slab.hi[dir] = cut,
                    Side::Above => slab.lo[dir] = cut + 1,
                }
                if !slab.iter(dim).all(|e| interior(&e)) {
                    continue;
                }
                let (lo, _) = space.element_bounds(&slab.lo);
                let (_, hi) = space.element_bounds(&slab.hi);
                let volume: f64 = (0..dim).map(|d| hi[d] - lo[d]).product();
                let center: Vec<f64> = (0..dim).map(|d| 0.5 * (lo[d] + hi[d])).collect();
                let break_index = cut + 1;
                let cand = Candidate {
                    count: slab.count(dim),
                    volume,
                    dir,
                    distance: plane.signed_distance(&center),
                    plane: SplitPlane {
                        dir,
                        break_index,
                        delta: space.basis(dir).breaks()[break_index],
                        side,
                    },
                    slab,
                };
                if best.as_ref().is_none_or(|b| cand.beats(b)) {
                    best = Some(cand);
                }
            }
        }
    }

    let (split, regular_box) = match best {
        Some(c) => (Some(c.plane), Some(c.slab)),
        None => (None, None),
    };
    let mut leftover_interior = Vec::new();
    let mut leftover_cut = Vec::new();
    for e in supp.iter(dim) {
        let lin = egrid.linear(&e);
        match cls.element_tags[lin] {
            Tag::Interior if !regular_box.is_some_and(|b| b.contains(&e, dim)) => {
                leftover_interior.push(lin)
            }
            Tag::Cut => leftover_cut.push(lin),
            _ => {}
        }
    }
    SupportSplit { function, split, regular_box, leftover_interior, leftover_cut }
}

/// Splits of all cut functions, in increasing function order.
pub fn find_all_splits(
    space: &TensorSpace,
    cls: &MeshClassification,
    plane: &HalfSpaceInterface,
) -> Vec<SupportSplit> {
    cls.functions_with(Tag::Cut)
        .into_iter()
        .map(|i| find_split(space, cls, plane, i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space2(p: usize, h: usize) -> TensorSpace {
        TensorSpace::uniform(2, p, h, 0.0, 1.0).unwrap()
    }

    #[test]
    fn multi_index_round_trip() {
        let s = TensorSpace::new(vec![
            BSplineBasis::uniform(2, 3, 0.0, 1.0).unwrap(),
            BSplineBasis::uniform(3, 4, 0.0, 2.0).unwrap(),
            BSplineBasis::uniform(1, 2, -1.0, 1.0).unwrap(),
        ])
        .unwrap();
        assert_eq!(s.num_functions(), 5 * 7 * 3);
        assert_eq!(s.num_elements(), 3 * 4 * 2);
        let g = s.function_grid();
        for lin in 0..g.len() {
            assert_eq!(g.linear(&g.multi(lin)), lin);
        }
    }

    #[test]
    fn reference_plane_corner_element() {
        let s = TensorSpace::uniform(3, 2, 4, -1.0, 1.0).unwrap();
        let plane = HalfSpaceInterface::reference();
        // corner (-0.5,-1,-0.5): 0.5*(-0.6) - 0.2*(-1.2) + 0.9*(-0.8) = -0.78
        let s_max = plane.side(&[-0.5, -1.0, -0.5]);
        assert!((s_max + 0.78).abs() < 1e-14);
        let tags = classify_elements(&s, &plane).unwrap();
        assert_eq!(tags[0], Tag::Interior);
    }

    #[test]
    fn straddling_and_grazing() {
        let s = space2(1, 2);
        let plane = HalfSpaceInterface::new(vec![0.25, 0.0], vec![1.0, 0.0]).unwrap();
        let tags = classify_elements(&s, &plane).unwrap();
        assert_eq!(tags, vec![Tag::Cut, Tag::Cut, Tag::Exterior, Tag::Exterior]);
        // plane on an element face: no cut elements
        let plane = HalfSpaceInterface::new(vec![0.5, 0.0], vec![1.0, 0.0]).unwrap();
        let tags = classify_elements(&s, &plane).unwrap();
        assert_eq!(tags, vec![Tag::Interior, Tag::Interior, Tag::Exterior, Tag::Exterior]);
        let cls = MeshClassification::new(&s, &plane).unwrap();
        assert!(cls.cut_elements.is_empty());
        // p=1: functions on x=0.5 straddle the face and are Cut
        let f = s.function_grid();
        assert_eq!(cls.function_tags[f.linear(&[0, 0, 0])], Tag::Interior);
        assert_eq!(cls.function_tags[f.linear(&[1, 1, 0])], Tag::Cut);
        assert_eq!(cls.function_tags[f.linear(&[2, 2, 0])], Tag::Exterior);
    }

    #[test]
    fn normal_scaling_does_not_change_tags() {
        let s = TensorSpace::uniform(3, 2, 4, -1.0, 1.0).unwrap();
        let a = HalfSpaceInterface::reference();
        let b = HalfSpaceInterface::new(vec![0.1, 0.2, 0.3], vec![5.0, -2.0, 9.0]).unwrap();
        assert_eq!(classify_elements(&s, &a).unwrap(), classify_elements(&s, &b).unwrap());
    }

    #[test]
    fn split_takes_the_interior_top_rows() {
        // interface below the top two element rows of a p=2 support
        let s = space2(2, 6);
        let plane = HalfSpaceInterface::new(vec![0.0, 0.3], vec![0.0, -1.0]).unwrap();
        let cls = MeshClassification::new(&s, &plane).unwrap();
        let f = s.function_grid().linear(&[3, 3, 0]);
        assert_eq!(cls.function_tags[f], Tag::Cut);
        let split = find_split(&s, &cls, &plane, f);
        let sp = split.split.unwrap();
        assert_eq!((sp.dir, sp.side), (1, Side::Above));
        assert!((sp.delta - 2.0 / 6.0).abs() < 1e-15);
        assert_eq!(split.regular_count(2), 6);
        assert_eq!(split.leftover_cut.len(), 3);
        assert!(split.leftover_interior.is_empty());
    }

    #[test]
    fn split_is_empty_when_every_slab_meets_the_cut() {
        // diagonal cut through the center element of a p=2 support on a 3x3 mesh:
        // every row and column of the support contains a non-interior element.
        let s = space2(2, 3);
        let plane = HalfSpaceInterface::new(vec![0.5, 0.5], vec![1.0, -1.0]).unwrap();
        let cls = MeshClassification::new(&s, &plane).unwrap();
        let f = s.function_grid().linear(&[2, 2, 0]);
        let split = find_split(&s, &cls, &plane, f);
        assert!(split.split.is_none());
        assert!(split.regular_box.is_none());
        assert_eq!(split.leftover_interior.len(), 3);
    }

    #[test]
    fn corner_cut_excludes_only_one_row() {
        let s = space2(2, 6);
        // clips only the far corner of element (4,4)
        let plane = HalfSpaceInterface::new(vec![0.8, 0.8], vec![1.0, 1.0]).unwrap();
        let cls = MeshClassification::new(&s, &plane).unwrap();
        let f = s.function_grid().linear(&[4, 4, 0]);
        let supp = s.support(&[4, 4, 0]);
        assert_eq!((supp.lo, supp.hi), ([2, 2, 0], [4, 4, 0]));
        assert_eq!(cls.element_tags[s.element_grid().linear(&[4, 4, 0])], Tag::Cut);
        assert_eq!(cls.function_tags[f], Tag::Cut);
        let split = find_split(&s, &cls, &plane, f);
        assert_eq!(split.regular_count(2), 6);
        let sp = split.split.unwrap();
        assert_eq!(sp.side, Side::Below);
        // tie between the two directions goes to the smaller index
        assert_eq!(sp.dir, 0);
        assert_eq!(split.leftover_interior.len(), 2);
        assert_eq!(split.leftover_cut.len(), 1);
    }
}
