//! Mass-matrix and load-vector formation on cut tensor meshes.
//!
//! Three schemes are provided:
//! - [`Scheme::Ref`]: element loop with `(p+1)^d` Gauss points on interior elements;
//! - [`Scheme::Hybrid`]: weighted-quadrature rows for interior functions, element-level
//!   Gauss with sum factorization on the interior support of cut functions;
//! - [`Scheme::Dwq`]: as hybrid, but the regular slab of a cut function is integrated
//!   row-wise with its discontinuous weighted-quadrature rule.
//!
//! Cut elements are integrated element-wise by the same routine in every scheme.

pub mod cut;
pub mod sparse;
pub mod sumfac;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cutgeom::{
    find_all_splits, HalfSpaceInterface, IndexBox, MeshClassification, MultiIndex, Side, SupportSplit,
    Tag, TensorSpace,
};
use crate::error::{Error, Result};
use crate::quadrature::{
    build_dwq_rule, build_wq_rules, default_cut_order, BasisTable, DwqRule, PointSuperset, SlicedCellRule,
    WqRule, MAX_GAUSS_POINTS,
};

pub use cut::CutElementIntegrator;
pub use sparse::{mass_pattern, ActiveSet, SparseRowMatrix};
pub use sumfac::{contraction_flops, precompute_input, CoefficientGrid, Factor, SumFactorizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Ref,
    Hybrid,
    Dwq,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Ref, Scheme::Hybrid, Scheme::Dwq];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Ref => "ref",
            Scheme::Hybrid => "hybrid",
            Scheme::Dwq => "dwq",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ref" => Ok(Scheme::Ref),
            "hybrid" => Ok(Scheme::Hybrid),
            "dwq" => Ok(Scheme::Dwq),
            _ => Err(Error::argument(format!("unknown scheme '{s}' (expected ref, hybrid or dwq)"))),
        }
    }
}

/// Wall-clock seconds per assembly component.
///
/// For [`Scheme::Ref`], `interior_rows` holds the interior element loop.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingBreakdown {
    pub prep_wq: f64,
    pub prep_input: f64,
    pub interior_rows: f64,
    pub cut_regular: f64,
    pub cut_elements: f64,
    pub total: f64,
}

impl TimingBreakdown {
    /// Componentwise minimum.
    pub fn min(&self, o: &Self) -> Self {
        Self {
            prep_wq: self.prep_wq.min(o.prep_wq),
            prep_input: self.prep_input.min(o.prep_input),
            interior_rows: self.interior_rows.min(o.interior_rows),
            cut_regular: self.cut_regular.min(o.cut_regular),
            cut_elements: self.cut_elements.min(o.cut_elements),
            total: self.total.min(o.total),
        }
    }
}

/// Floating-point operation counts of the assembly kernels.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FlopCounters {
    /// Sum-factorized interior rows (weighted-quadrature schemes).
    pub interior_rows: u64,
    pub interior_row_count: usize,
    /// Element loop over interior elements (reference scheme).
    pub interior_elements: u64,
    pub interior_element_count: usize,
    pub cut_regular: u64,
    pub cut_elements: u64,
    /// `(global function index, operations)` of every interior row.
    #[serde(skip)]
    pub per_row: Vec<(usize, u64)>,
}

/// How the regular support of cut rows was treated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CutRowStats {
    pub cut_rows: usize,
    /// Rows integrated with a discontinuous weighted-quadrature slab.
    pub dwq_rows: usize,
    /// Rows whose rule reduced to Gauss weights and took the element-wise path.
    pub dwq_gauss_rows: usize,
    pub empty_split_rows: usize,
}

/// Background mesh, interface, classification and the active sparsity pattern.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub space: TensorSpace,
    pub plane: HalfSpaceInterface,
    pub classification: MeshClassification,
    /// Support splits of all cut functions, by increasing function index.
    pub splits: Vec<SupportSplit>,
    pub active: ActiveSet,
    pub cut_order: usize,
    pattern: SparseRowMatrix,
}

impl Discretization {
    /// `cut_order` defaults to `3p+2`.
    pub fn new(space: TensorSpace, plane: HalfSpaceInterface, cut_order: Option<usize>) -> Result<Self> {
        if plane.dim() != space.dim() {
            return Err(Error::Dimension(format!(
                "plane of dimension {} in a {}-dimensional space",
                plane.dim(),
                space.dim()
            )));
        }
        let cut_order = cut_order.unwrap_or_else(|| default_cut_order(space.max_degree()));
        if !(1..=MAX_GAUSS_POINTS).contains(&cut_order) {
            return Err(Error::argument(format!("cut quadrature order {cut_order} outside 1..=64")));
        }
        let classification = MeshClassification::new(&space, &plane)?;
        let splits = find_all_splits(&space, &classification, &plane);
        let active = ActiveSet::new(&classification.function_tags);
        let pattern = mass_pattern(&space, &classification, &active);
        Ok(Self { space, plane, classification, splits, active, cut_order, pattern })
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn split(&self, function: usize) -> Option<&SupportSplit> {
        self.splits
            .binary_search_by_key(&function, |s| s.function)
            .ok()
            .map(|k| &self.splits[k])
    }

    /// Zero matrix with the mass sparsity pattern over active functions.
    pub fn empty_matrix(&self) -> SparseRowMatrix {
        self.pattern.clone()
    }

    pub fn cut_rule(&self, element: usize) -> Result<SlicedCellRule> {
        let e = self.space.element_grid().multi(element);
        let (lo, hi) = self.space.element_bounds(&e);
        SlicedCellRule::new(element, &lo, &hi, &self.plane, self.cut_order)
    }
}

/// Output of one matrix assembly.
#[derive(Debug, Clone)]
pub struct Assembled {
    pub matrix: SparseRowMatrix,
    pub timing: TimingBreakdown,
    pub flops: FlopCounters,
    pub cut_rows: CutRowStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct DwqKey {
    dir: usize,
    test: usize,
    break_index: usize,
    side: Side,
}

struct DwqEntry {
    rule: DwqRule,
    gram: Factor,
    load: Factor,
}

/// Rules and factor caches of one scheme on one discretization.
pub struct Assembler<'a> {
    disc: &'a Discretization,
    scheme: Scheme,
    supersets: Vec<PointSuperset>,
    tables: Vec<BasisTable>,
    wq: Vec<Vec<WqRule>>,
    wq_gram: Vec<Vec<Factor>>,
    wq_load: Vec<Vec<Factor>>,
    /// Per direction, indexed by `test * (p+1) + (element - first support element)`.
    elem_gram: Vec<Vec<Factor>>,
    elem_load: Vec<Vec<Factor>>,
    dwq: HashMap<DwqKey, DwqEntry>,
    cut_rules: Option<Vec<SlicedCellRule>>,
    prep_seconds: f64,
}

/// Gram factor `W[j][q] = w_q B_j(x_q)` over the trials overlapping the test support.
fn gram_factor(basis: &crate::splines::BSplineBasis, table: &BasisTable, test: usize, points: &[usize], w: &[f64]) -> Factor {
    let (e0, e1) = basis.support(test);
    let j0 = basis.first_function(e0);
    let j1 = basis.first_function(e1) + basis.degree();
    let rows = j1 + 1 - j0;
    let mut m = vec![0.0; rows * points.len()];
    for (c, (&q, &wq)) in points.iter().zip(w).enumerate() {
        let (first, vals) = table.nonzero(q);
        for (k, v) in vals.iter().enumerate() {
            m[(first + k - j0) * points.len() + c] = wq * v;
        }
    }
    Factor { points: points.to_vec(), rows, w: m }
}

impl<'a> Assembler<'a> {
    /// Builds the quadrature rules needed by `scheme` (timed as `prep_wq`).
    pub fn new(disc: &'a Discretization, scheme: Scheme) -> Result<Self> {
        let start = Instant::now();
        let space = &disc.space;
        let dim = space.dim();
        let supersets: Vec<PointSuperset> = space.bases().iter().map(PointSuperset::for_basis).collect();
        let tables: Vec<BasisTable> =
            (0..dim).map(|d| BasisTable::new(space.basis(d), &supersets[d])).collect();
        let mut me = Self {
            disc,
            scheme,
            supersets,
            tables,
            wq: Vec::new(),
            wq_gram: Vec::new(),
            wq_load: Vec::new(),
            elem_gram: Vec::new(),
            elem_load: Vec::new(),
            dwq: HashMap::new(),
            cut_rules: None,
            prep_seconds: 0.0,
        };
        if scheme != Scheme::Ref {
            me.build_weighted()?;
        }
        if scheme == Scheme::Dwq {
            me.build_dwq()?;
        }
        me.prep_seconds = start.elapsed().as_secs_f64();
        Ok(me)
    }

    fn build_weighted(&mut self) -> Result<()> {
        let space = &self.disc.space;
        for d in 0..space.dim() {
            let basis = space.basis(d);
            let sup = &self.supersets[d];
            let table = &self.tables[d];
            let rules = build_wq_rules(basis, sup)?;
            self.wq_gram.push(rules.iter().map(|r| gram_factor(basis, table, r.test, &r.points, &r.weights)).collect());
            self.wq_load.push(
                rules
                    .iter()
                    .map(|r| Factor { points: r.points.clone(), rows: 1, w: r.weights.clone() })
                    .collect(),
            );
            self.wq.push(rules);

            // element-level Gauss factors for the support of every test function
            let p = basis.degree();
            let mut gram = Vec::with_capacity(basis.num_functions() * (p + 1));
            let mut load = Vec::with_capacity(gram.capacity());
            for i in 0..basis.num_functions() {
                let (e0, e1) = basis.support(i);
                for k in 0..=p {
                    let e = (e0 + k).min(e1);
                    let ids: Vec<usize> = sup.span_ids(e).collect();
                    let first = basis.first_function(e);
                    let mut w = vec![0.0; (p + 1) * ids.len()];
                    let mut lw = vec![0.0; ids.len()];
                    for (c, &q) in ids.iter().enumerate() {
                        let (_, vals) = table.nonzero(q);
                        let wi = sup.weights()[q] * vals[i - first];
                        lw[c] = wi;
                        for (r, v) in vals.iter().enumerate() {
                            w[r * ids.len() + c] = wi * v;
                        }
                    }
                    gram.push(Factor { points: ids.clone(), rows: p + 1, w });
                    load.push(Factor { points: ids, rows: 1, w: lw });
                }
            }
            self.elem_gram.push(gram);
            self.elem_load.push(load);
        }
        Ok(())
    }

    fn build_dwq(&mut self) -> Result<()> {
        let space = &self.disc.space;
        let fgrid = space.function_grid();
        for s in &self.disc.splits {
            let Some(sp) = s.split else { continue };
            let idx = fgrid.multi(s.function);
            let key = DwqKey { dir: sp.dir, test: idx[sp.dir], break_index: sp.break_index, side: sp.side };
            if self.dwq.contains_key(&key) {
                continue;
            }
            let d = sp.dir;
            let basis = space.basis(d);
            let rule = build_dwq_rule(basis, &self.supersets[d], &self.wq[d][key.test], sp.delta, sp.side)?;
            let gram = gram_factor(basis, &self.tables[d], key.test, &rule.rule.points, &rule.rule.weights);
            let load = Factor { points: rule.rule.points.clone(), rows: 1, w: rule.rule.weights.clone() };
            self.dwq.insert(key, DwqEntry { rule, gram, load });
        }
        Ok(())
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn supersets(&self) -> &[PointSuperset] {
        &self.supersets
    }

    /// Standard weighted-quadrature rules per direction (empty for the reference scheme).
    pub fn wq_rules(&self) -> &[Vec<WqRule>] {
        &self.wq
    }

    /// All discontinuous rules built for the cut functions.
    pub fn dwq_rules(&self) -> impl Iterator<Item = (usize, &DwqRule)> {
        self.dwq.iter().map(|(k, v)| (k.dir, &v.rule))
    }

    fn elem_index(&self, d: usize, test: usize, element: usize) -> usize {
        let basis = self.disc.space.basis(d);
        test * (basis.degree() + 1) + element - basis.support(test).0
    }

    /// Adds a dense block over `bx` into row `row` of `m`, skipping structural zeros.
    fn scatter(&self, m: &mut SparseRowMatrix, row: usize, bx: &IndexBox, vals: &[f64]) {
        let dim = self.disc.dim();
        let fgrid = self.disc.space.function_grid();
        let active = &self.disc.active;
        let (cols, out) = m.row_mut(row);
        let mut k = 0;
        for (j, &v) in bx.iter(dim).zip(vals) {
            let g = fgrid.linear(&j);
            while k < cols.len() && active.to_global(cols[k]) < g {
                k += 1;
            }
            if k < cols.len() && active.to_global(cols[k]) == g {
                out[k] += v;
            }
        }
    }

    /// Adds an element block `src` over `inner` into a row buffer over `outer`.
    fn add_block(dim: usize, outer: &IndexBox, inner: &IndexBox, src: &[f64], dst: &mut [f64]) {
        let mut stride = [0; 3];
        let mut s = 1;
        for d in (0..dim).rev() {
            stride[d] = s;
            s *= outer.extent(d);
        }
        for (j, &v) in inner.iter(dim).zip(src) {
            let pos: usize = (0..dim).map(|d| (j[d] - outer.lo[d]) * stride[d]).sum();
            dst[pos] += v;
        }
    }

    /// Assembles the mass matrix with coefficient `c`.
    pub fn matrix(&mut self, c: &dyn Fn(&[f64]) -> f64) -> Result<Assembled> {
        let start = Instant::now();
        let mut m = self.disc.empty_matrix();
        let mut timing = TimingBreakdown { prep_wq: self.prep_seconds, ..Default::default() };
        let mut flops = FlopCounters::default();
        let mut stats = CutRowStats::default();
        if self.scheme == Scheme::Ref {
            let t = Instant::now();
            self.ref_elements(&mut m, c, &mut flops)?;
            timing.interior_rows = t.elapsed().as_secs_f64();
        } else {
            let t = Instant::now();
            let grid = precompute_input(&self.disc.space, &self.supersets, c)?;
            timing.prep_input = t.elapsed().as_secs_f64();
            let t = Instant::now();
            self.interior_rows(&mut m, &grid, &mut flops);
            timing.interior_rows = t.elapsed().as_secs_f64();
            let t = Instant::now();
            self.cut_regular(&mut m, &grid, &mut flops, &mut stats);
            timing.cut_regular = t.elapsed().as_secs_f64();
        }
        let t = Instant::now();
        self.cut_elements(&mut m, c, &mut flops)?;
        timing.cut_elements = t.elapsed().as_secs_f64();
        timing.total = start.elapsed().as_secs_f64() + self.prep_seconds;
        Ok(Assembled { matrix: m, timing, flops, cut_rows: stats })
    }

    /// Load vector `b_i = ∫_Ω f B_i` over active functions, using the scheme's rules.
    pub fn rhs(&mut self, f: &dyn Fn(&[f64]) -> f64) -> Result<Vec<f64>> {
        let mut b = vec![0.0; self.disc.active.len()];
        if self.scheme == Scheme::Ref {
            self.ref_elements_load(&mut b, f)?;
        } else {
            let grid = precompute_input(&self.disc.space, &self.supersets, f)?;
            self.rows_load(&mut b, &grid);
        }
        self.cut_elements_load(&mut b, f)?;
        Ok(b)
    }

    fn ref_elements(&self, m: &mut SparseRowMatrix, c: &dyn Fn(&[f64]) -> f64, flops: &mut FlopCounters) -> Result<()> {
        let space = &self.disc.space;
        let dim = space.dim();
        let egrid = space.element_grid();
        let fgrid = space.function_grid();
        let n: usize = (0..dim).map(|d| space.basis(d).degree() + 1).product();
        let mut local = vec![0.0; n * n];
        let mut phi = vec![0.0; n];
        let mut x = vec![0.0; dim];
        for (lin, tag) in self.disc.classification.element_tags.iter().enumerate() {
            if *tag != Tag::Interior {
                continue;
            }
            let e = egrid.multi(lin);
            local.fill(0.0);
            let mut qbox = IndexBox { lo: [0; 3], hi: [0; 3] };
            for d in 0..dim {
                let r = self.supersets[d].span_ids(e[d]);
                qbox.lo[d] = r.start;
                qbox.hi[d] = r.end - 1;
            }
            let mut ops = 0u64;
            for q in qbox.iter(dim) {
                let mut w = 1.0;
                for d in 0..dim {
                    x[d] = self.supersets[d].points()[q[d]];
                    w *= self.supersets[d].weights()[q[d]];
                }
                let v = c(&x);
                if !v.is_finite() {
                    return Err(Error::Evaluation(x));
                }
                let s = w * v;
                self.tensor_values(&q, &mut phi);
                for a in 0..n {
                    let sa = s * phi[a];
                    let row = &mut local[a * n..(a + 1) * n];
                    for (o, &pb) in row.iter_mut().zip(&phi) {
                        *o += sa * pb;
                    }
                }
                ops += (dim + 1 + (dim - 1) * n + n + 2 * n * n) as u64;
            }
            flops.interior_elements += ops;
            flops.interior_element_count += 1;
            let fb = space.element_functions(&e);
            for (a, i) in fb.iter(dim).enumerate() {
                let row = self.disc.active.to_local(fgrid.linear(&i)).expect("interior element functions are active");
                self.scatter(m, row, &fb, &local[a * n..(a + 1) * n]);
            }
        }
        Ok(())
    }

    fn ref_elements_load(&self, b: &mut [f64], f: &dyn Fn(&[f64]) -> f64) -> Result<()> {
        let space = &self.disc.space;
        let dim = space.dim();
        let egrid = space.element_grid();
        let fgrid = space.function_grid();
        let n: usize = (0..dim).map(|d| space.basis(d).degree() + 1).product();
        let mut phi = vec![0.0; n];
        let mut local = vec![0.0; n];
        let mut x = vec![0.0; dim];
        for (lin, tag) in self.disc.classification.element_tags.iter().enumerate() {
            if *tag != Tag::Interior {
                continue;
            }
            let e = egrid.multi(lin);
            local.fill(0.0);
            let mut qbox = IndexBox { lo: [0; 3], hi: [0; 3] };
            for d in 0..dim {
                let r = self.supersets[d].span_ids(e[d]);
                qbox.lo[d] = r.start;
                qbox.hi[d] = r.end - 1;
            }
            for q in qbox.iter(dim) {
                let mut w = 1.0;
                for d in 0..dim {
                    x[d] = self.supersets[d].points()[q[d]];
                    w *= self.supersets[d].weights()[q[d]];
                }
                let v = f(&x);
                if !v.is_finite() {
                    return Err(Error::Evaluation(x));
                }
                self.tensor_values(&q, &mut phi);
                for (o, ph) in local.iter_mut().zip(&phi) {
                    *o += w * v * ph;
                }
            }
            for (a, i) in space.element_functions(&e).iter(dim).enumerate() {
                let row = self.disc.active.to_local(fgrid.linear(&i)).expect("interior element functions are active");
                b[row] += local[a];
            }
        }
        Ok(())
    }

    /// Tensor-product values of the element functions at superset grid point `q`.
    fn tensor_values(&self, q: &MultiIndex, phi: &mut [f64]) {
        let dim = self.disc.dim();
        phi[0] = 1.0;
        let mut len = 1;
        for d in 0..dim {
            let (_, vals) = self.tables[d].nonzero(q[d]);
            let nd = vals.len();
            // expand in place from the back so that the last direction runs fastest
            for a in (0..len).rev() {
                let base = phi[a];
                for (k, v) in vals.iter().enumerate().rev() {
                    phi[a * nd + k] = base * v;
                }
            }
            len *= nd;
        }
    }

    fn interior_rows(&self, m: &mut SparseRowMatrix, grid: &CoefficientGrid, flops: &mut FlopCounters) {
        let space = &self.disc.space;
        let dim = space.dim();
        let fgrid = space.function_grid();
        let mut sf = SumFactorizer::new();
        for (row, &g) in self.disc.active.globals().iter().enumerate() {
            if self.disc.classification.function_tags[g] != Tag::Interior {
                continue;
            }
            let idx = fgrid.multi(g);
            let factors: Vec<&Factor> = (0..dim).map(|d| &self.wq_gram[d][idx[d]]).collect();
            let mut ops = 0;
            let block = sf.contract(&factors, grid, &mut ops);
            let nb = space.neighbor_box(&idx);
            self.scatter(m, row, &nb, block);
            flops.interior_rows += ops;
            flops.interior_row_count += 1;
            flops.per_row.push((g, ops));
        }
    }

    /// Slab factors of a cut row, if it is integrated with a discontinuous rule.
    fn dwq_entry(&self, split: &SupportSplit, idx: &MultiIndex) -> Option<(usize, &DwqEntry)> {
        if self.scheme != Scheme::Dwq {
            return None;
        }
        let sp = split.split?;
        let key = DwqKey { dir: sp.dir, test: idx[sp.dir], break_index: sp.break_index, side: sp.side };
        let entry = self.dwq.get(&key)?;
        (!entry.rule.rule.gauss_shortcut).then_some((sp.dir, entry))
    }

    fn cut_regular(
        &self,
        m: &mut SparseRowMatrix,
        grid: &CoefficientGrid,
        flops: &mut FlopCounters,
        stats: &mut CutRowStats,
    ) {
        let space = &self.disc.space;
        let dim = space.dim();
        let fgrid = space.function_grid();
        let egrid = space.element_grid();
        let mut sf = SumFactorizer::new();
        let mut buffer = Vec::new();
        for split in &self.disc.splits {
            let g = split.function;
            let row = self.disc.active.to_local(g).expect("cut functions are active");
            let idx = fgrid.multi(g);
            let nb = space.neighbor_box(&idx);
            buffer.clear();
            buffer.resize(nb.count(dim), 0.0);
            stats.cut_rows += 1;
            let mut ops = 0;
            let elements: Vec<usize> = match self.dwq_entry(split, &idx) {
                Some((dir, entry)) => {
                    stats.dwq_rows += 1;
                    let factors: Vec<&Factor> = (0..dim)
                        .map(|d| if d == dir { &entry.gram } else { &self.wq_gram[d][idx[d]] })
                        .collect();
                    let block = sf.contract(&factors, grid, &mut ops);
                    for (o, v) in buffer.iter_mut().zip(block) {
                        *o += v;
                    }
                    split.leftover_interior.clone()
                }
                None => {
                    if split.split.is_none() {
                        stats.empty_split_rows += 1;
                    } else if self.scheme == Scheme::Dwq {
                        stats.dwq_gauss_rows += 1;
                    }
                    let supp = space.support(&idx);
                    supp.iter(dim)
                        .map(|e| egrid.linear(&e))
                        .filter(|&e| self.disc.classification.element_tags[e] == Tag::Interior)
                        .collect()
                }
            };
            for e in elements {
                let em = egrid.multi(e);
                let factors: Vec<&Factor> = (0..dim)
                    .map(|d| &self.elem_gram[d][self.elem_index(d, idx[d], em[d])])
                    .collect();
                let block = sf.contract(&factors, grid, &mut ops);
                Self::add_block(dim, &nb, &space.element_functions(&em), block, &mut buffer);
            }
            self.scatter(m, row, &nb, &buffer);
            flops.cut_regular += ops;
        }
    }

    fn rows_load(&self, b: &mut [f64], grid: &CoefficientGrid) {
        let space = &self.disc.space;
        let dim = space.dim();
        let fgrid = space.function_grid();
        let egrid = space.element_grid();
        let mut sf = SumFactorizer::new();
        let mut ops = 0;
        for (row, &g) in self.disc.active.globals().iter().enumerate() {
            let idx = fgrid.multi(g);
            if self.disc.classification.function_tags[g] == Tag::Interior {
                let factors: Vec<&Factor> = (0..dim).map(|d| &self.wq_load[d][idx[d]]).collect();
                b[row] += sf.contract(&factors, grid, &mut ops)[0];
                continue;
            }
            let split = self.disc.split(g).expect("active non-interior functions are cut");
            let elements: Vec<usize> = match self.dwq_entry(split, &idx) {
                Some((dir, entry)) => {
                    let factors: Vec<&Factor> = (0..dim)
                        .map(|d| if d == dir { &entry.load } else { &self.wq_load[d][idx[d]] })
                        .collect();
                    b[row] += sf.contract(&factors, grid, &mut ops)[0];
                    split.leftover_interior.clone()
                }
                None => space
                    .support(&idx)
                    .iter(dim)
                    .map(|e| egrid.linear(&e))
                    .filter(|&e| self.disc.classification.element_tags[e] == Tag::Interior)
                    .collect(),
            };
            for e in elements {
                let em = egrid.multi(e);
                let factors: Vec<&Factor> = (0..dim)
                    .map(|d| &self.elem_load[d][self.elem_index(d, idx[d], em[d])])
                    .collect();
                b[row] += sf.contract(&factors, grid, &mut ops)[0];
            }
        }
    }

    fn ensure_cut_rules(&mut self) -> Result<()> {
        if self.cut_rules.is_none() {
            let rules = self
                .disc
                .classification
                .cut_elements
                .iter()
                .map(|&e| self.disc.cut_rule(e))
                .collect::<Result<Vec<_>>>()?;
            self.cut_rules = Some(rules);
        }
        Ok(())
    }

    fn cut_elements(&mut self, m: &mut SparseRowMatrix, c: &dyn Fn(&[f64]) -> f64, flops: &mut FlopCounters) -> Result<()> {
        self.ensure_cut_rules()?;
        let space = &self.disc.space;
        let dim = space.dim();
        let egrid = space.element_grid();
        let fgrid = space.function_grid();
        let mut ops = 0;
        for rule in self.cut_rules.as_ref().unwrap() {
            let e = egrid.multi(rule.element);
            let it = CutElementIntegrator::new(space, e, true);
            let local = it.sliced(rule, c, &mut ops)?;
            let n = it.local_len();
            let fb = space.element_functions(&e);
            for (a, i) in fb.iter(dim).enumerate() {
                let row = self.disc.active.to_local(fgrid.linear(&i)).expect("cut element functions are active");
                self.scatter(m, row, &fb, &local[a * n..(a + 1) * n]);
            }
        }
        flops.cut_elements += ops;
        Ok(())
    }

    fn cut_elements_load(&mut self, b: &mut [f64], f: &dyn Fn(&[f64]) -> f64) -> Result<()> {
        self.ensure_cut_rules()?;
        let space = &self.disc.space;
        let dim = space.dim();
        let egrid = space.element_grid();
        let fgrid = space.function_grid();
        let mut ops = 0;
        for rule in self.cut_rules.as_ref().unwrap() {
            let e = egrid.multi(rule.element);
            let local = CutElementIntegrator::new(space, e, false).sliced(rule, f, &mut ops)?;
            for (a, i) in space.element_functions(&e).iter(dim).enumerate() {
                let row = self.disc.active.to_local(fgrid.linear(&i)).expect("cut element functions are active");
                b[row] += local[a];
            }
        }
        Ok(())
    }
}

/// One-shot matrix assembly.
pub fn assemble(disc: &Discretization, scheme: Scheme, c: &dyn Fn(&[f64]) -> f64) -> Result<Assembled> {
    Assembler::new(disc, scheme)?.matrix(c)
}

/// One-shot load vector.
pub fn build_rhs(disc: &Discretization, scheme: Scheme, f: &dyn Fn(&[f64]) -> f64) -> Result<Vec<f64>> {
    Assembler::new(disc, scheme)?.rhs(f)
}
