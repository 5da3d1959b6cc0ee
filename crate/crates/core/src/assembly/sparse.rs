use std::io::Write;

use crate::cutgeom::{MeshClassification, Tag, TensorSpace};
use crate::error::{Error, Result};

/// Mapping between global function indices and active (non-exterior) ones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveSet {
    global: Vec<usize>,
    local: Vec<usize>,
}

const NONE: usize = usize::MAX;

impl ActiveSet {
    pub fn new(function_tags: &[Tag]) -> Self {
        let mut global = Vec::new();
        let mut local = vec![NONE; function_tags.len()];
        for (g, tag) in function_tags.iter().enumerate() {
            if *tag != Tag::Exterior {
                local[g] = global.len();
                global.push(g);
            }
        }
        Self { global, local }
    }

    pub fn len(&self) -> usize {
        self.global.len()
    }

    pub fn is_empty(&self) -> bool {
        self.global.is_empty()
    }

    pub fn to_local(&self, g: usize) -> Option<usize> {
        let l = self.local[g];
        (l != NONE).then_some(l)
    }

    pub fn to_global(&self, l: usize) -> usize {
        self.global[l]
    }

    pub fn globals(&self) -> &[usize] {
        &self.global
    }
}

/// Compressed sparse row matrix with sorted column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRowMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
}

impl SparseRowMatrix {
    /// Zero matrix with the given structure; columns of each row must be sorted.
    pub fn from_pattern(nrows: usize, ncols: usize, row_ptr: Vec<usize>, cols: Vec<usize>) -> Result<Self> {
        if row_ptr.len() != nrows + 1 || row_ptr[nrows] != cols.len() {
            return Err(Error::Dimension("row pointer does not match column list".into()));
        }
        for r in 0..nrows {
            let row = &cols[row_ptr[r]..row_ptr[r + 1]];
            if row.windows(2).any(|w| w[0] >= w[1]) || row.last().is_some_and(|&c| c >= ncols) {
                return Err(Error::argument(format!("row {r} columns unsorted or out of range")));
            }
        }
        let values = vec![0.0; cols.len()];
        Ok(Self { nrows, ncols, row_ptr, cols, values })
    }

    /// Builds a matrix from per-row `(column, value)` lists; duplicates are summed.
    pub fn from_rows(ncols: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut values = Vec::new();
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            for (c, v) in row {
                if c >= ncols {
                    return Err(Error::Dimension(format!("column {c} >= {ncols}")));
                }
                if cols.len() > *row_ptr.last().unwrap() && *cols.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Ok(Self { nrows: row_ptr.len() - 1, ncols, row_ptr, cols, values })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            cols: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let s = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.cols[s.clone()], &self.values[s])
    }

    pub fn row_mut(&mut self, r: usize) -> (&[usize], &mut [f64]) {
        let s = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.cols[s.clone()], &mut self.values[s])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        cols.binary_search(&c).map_or(0.0, |k| vals[k])
    }

    /// Adds `v` to an entry of the pattern; returns false if `(r, c)` is structurally zero.
    pub fn add(&mut self, r: usize, c: usize, v: f64) -> bool {
        let (cols, vals) = self.row_mut(r);
        match cols.binary_search(&c) {
            Ok(k) => {
                vals[k] += v;
                true
            }
            Err(_) => false,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            y[r] = cols.iter().zip(vals).map(|(&c, v)| v * x[c]).sum();
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows).map(|r| self.get(r, r)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn transpose(&self) -> Self {
        let mut rows = vec![Vec::new(); self.ncols];
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                rows[c].push((r, v));
            }
        }
        Self::from_rows(self.nrows, rows).expect("transpose keeps valid indices")
    }

    /// Largest entrywise difference, treating missing entries as zero.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(Error::Dimension(format!(
                "{}x{} vs {}x{}",
                self.nrows, self.ncols, other.nrows, other.ncols
            )));
        }
        let mut worst: f64 = 0.0;
        for r in 0..self.nrows {
            let (ca, va) = self.row(r);
            let (cb, vb) = other.row(r);
            let (mut i, mut j) = (0, 0);
            while i < ca.len() || j < cb.len() {
                let d = match (ca.get(i), cb.get(j)) {
                    (Some(a), Some(b)) if a == b => {
                        i += 1;
                        j += 1;
                        va[i - 1] - vb[j - 1]
                    }
                    (Some(a), Some(b)) if a < b => {
                        i += 1;
                        va[i - 1]
                    }
                    (Some(_), None) => {
                        i += 1;
                        va[i - 1]
                    }
                    _ => {
                        j += 1;
                        vb[j - 1]
                    }
                };
                worst = worst.max(d.abs());
            }
        }
        Ok(worst)
    }

    /// `Aᵀ B` for matrices with equal row counts.
    pub fn transpose_mul(&self, b: &Self) -> Result<Self> {
        self.transpose().mul(b)
    }

    pub fn mul(&self, b: &Self) -> Result<Self> {
        if self.ncols != b.nrows {
            return Err(Error::Dimension(format!("{} columns times {} rows", self.ncols, b.nrows)));
        }
        let mut acc = vec![0.0; b.ncols];
        let mut touched = vec![false; b.ncols];
        let mut rows = Vec::with_capacity(self.nrows);
        for r in 0..self.nrows {
            let mut list = Vec::new();
            let (ca, va) = self.row(r);
            for (&k, &a) in ca.iter().zip(va) {
                let (cb, vb) = b.row(k);
                for (&c, &v) in cb.iter().zip(vb) {
                    if !touched[c] {
                        touched[c] = true;
                        list.push(c);
                    }
                    acc[c] += a * v;
                }
            }
            list.sort_unstable();
            let row: Vec<(usize, f64)> = list.iter().map(|&c| (c, acc[c])).collect();
            for &c in &list {
                acc[c] = 0.0;
                touched[c] = false;
            }
            rows.push(row);
        }
        Self::from_rows(b.ncols, rows)
    }

    pub fn write_matrix_market(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(out, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (&c, v) in cols.iter().zip(vals) {
                writeln!(out, "{} {} {:.17e}", r + 1, c + 1, v)?;
            }
        }
        Ok(())
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, row) in d.iter_mut().enumerate() {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                row[c] = v;
            }
        }
        d
    }
}

/// Summed-area table of non-exterior elements over the element grid.
struct ElementCounts {
    ext: [usize; 3],
    sums: Vec<i64>,
}

impl ElementCounts {
    fn new(space: &TensorSpace, cls: &MeshClassification) -> Self {
        let g = space.element_grid();
        let ext = [g.ext[0] + 1, g.ext[1] + 1, g.ext[2] + 1];
        let mut sums = vec![0i64; ext[0] * ext[1] * ext[2]];
        let at = |i: usize, j: usize, k: usize| (i * ext[1] + j) * ext[2] + k;
        for i in 1..ext[0] {
            for j in 1..ext[1] {
                for k in 1..ext[2] {
                    let e = g.linear(&[i - 1, j - 1, k - 1]);
                    let own = (cls.element_tags[e] != Tag::Exterior) as i64;
                    sums[at(i, j, k)] = own + sums[at(i - 1, j, k)] + sums[at(i, j - 1, k)]
                        + sums[at(i, j, k - 1)]
                        - sums[at(i - 1, j - 1, k)]
                        - sums[at(i - 1, j, k - 1)]
                        - sums[at(i, j - 1, k - 1)]
                        + sums[at(i - 1, j - 1, k - 1)];
                }
            }
        }
        Self { ext, sums }
    }

    /// Number of non-exterior elements in the inclusive box `[lo, hi]`.
    fn count(&self, lo: &[usize; 3], hi: &[usize; 3]) -> i64 {
        let ext = self.ext;
        let at = |i: usize, j: usize, k: usize| self.sums[(i * ext[1] + j) * ext[2] + k];
        let (a, b) = (lo, [hi[0] + 1, hi[1] + 1, hi[2] + 1]);
        at(b[0], b[1], b[2]) - at(a[0], b[1], b[2]) - at(b[0], a[1], b[2]) - at(b[0], b[1], a[2])
            + at(a[0], a[1], b[2])
            + at(a[0], b[1], a[2])
            + at(b[0], a[1], a[2])
            - at(a[0], a[1], a[2])
    }
}

/// Sparsity pattern over active functions: `(i, j)` is stored if the
/// intersection of their supports contains a non-exterior element.
pub fn mass_pattern(space: &TensorSpace, cls: &MeshClassification, active: &ActiveSet) -> SparseRowMatrix {
    let dim = space.dim();
    let fgrid = space.function_grid();
    let counts = ElementCounts::new(space, cls);
    let mut row_ptr = Vec::with_capacity(active.len() + 1);
    let mut cols = Vec::new();
    row_ptr.push(0);
    for &gi in active.globals() {
        let idx = fgrid.multi(gi);
        let si = space.support(&idx);
        let nb = space.neighbor_box(&idx);
        for j in nb.iter(dim) {
            let gj = fgrid.linear(&j);
            let Some(lj) = active.to_local(gj) else { continue };
            let sj = space.support(&j);
            let mut lo = [0; 3];
            let mut hi = [0; 3];
            let mut empty = false;
            for d in 0..3 {
                lo[d] = si.lo[d].max(sj.lo[d]);
                hi[d] = si.hi[d].min(sj.hi[d]);
                empty |= lo[d] > hi[d];
            }
            if !empty && counts.count(&lo, &hi) > 0 {
                cols.push(lj);
            }
        }
        row_ptr.push(cols.len());
    }
    let n = active.len();
    SparseRowMatrix::from_pattern(n, n, row_ptr, cols).expect("pattern rows are sorted")
}
