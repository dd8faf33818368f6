//! Compressed-row matrices and per-slot stacks of them.

use rayon::prelude::*;

use super::dense::Tensor3;
use crate::error::{Error, Result};

/// A compressed sparse row matrix with strictly increasing column indices
/// within each row and no stored zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    rows: usize,
    cols: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Csr {
            rows,
            cols,
            offsets: vec![0; rows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Csr {
            rows: n,
            cols: n,
            offsets: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds from raw compressed-row arrays, checking structure.
    pub fn from_parts(
        rows: usize,
        cols: usize,
        offsets: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if offsets.len() != rows + 1 || offsets[0] != 0 {
            return Err(Error::shape(
                "row offsets must have rows + 1 entries starting at 0",
            ));
        }
        if offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::shape("row offsets not monotone"));
        }
        let nnz = offsets[rows];
        if indices.len() != nnz || values.len() != nnz {
            return Err(Error::shape("index/value arrays disagree with row offsets"));
        }
        for r in 0..rows {
            let idx = &indices[offsets[r]..offsets[r + 1]];
            if idx.iter().any(|&c| c >= cols) {
                return Err(Error::shape(format!(
                    "column index out of range in row {r}"
                )));
            }
            if idx.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::shape(format!(
                    "column indices not increasing in row {r}"
                )));
            }
        }
        let mut m = Csr {
            rows,
            cols,
            offsets,
            indices,
            values,
        };
        m.prune_zeros();
        Ok(m)
    }

    /// Builds from `(row, col, value)` triplets; duplicates are summed and
    /// resulting zeros dropped.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        for &(r, c, _) in &sorted {
            if r >= rows || c >= cols {
                return Err(Error::shape(format!(
                    "entry ({r}, {c}) outside a {rows}x{cols} matrix"
                )));
            }
        }
        sorted.sort_by_key(|a| (a.0, a.1));
        let mut offsets = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                values.push(v);
                offsets[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..rows {
            offsets[r + 1] += offsets[r];
        }
        let mut m = Csr {
            rows,
            cols,
            offsets,
            indices,
            values,
        };
        m.prune_zeros();
        Ok(m)
    }

    pub fn from_dense(rows: usize, cols: usize, data: &[f64]) -> Self {
        let mut offsets = Vec::with_capacity(rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        offsets.push(0);
        for r in 0..rows {
            for c in 0..cols {
                let v = data[r * cols + c];
                if v != 0.0 {
                    indices.push(c);
                    values.push(v);
                }
            }
            offsets.push(indices.len());
        }
        Csr {
            rows,
            cols,
            offsets,
            indices,
            values,
        }
    }

    fn prune_zeros(&mut self) {
        if self.values.iter().all(|&v| v != 0.0) {
            return;
        }
        let mut offsets = Vec::with_capacity(self.rows + 1);
        let mut indices = Vec::with_capacity(self.indices.len());
        let mut values = Vec::with_capacity(self.values.len());
        offsets.push(0);
        for r in 0..self.rows {
            for k in self.offsets[r]..self.offsets[r + 1] {
                if self.values[k] != 0.0 {
                    indices.push(self.indices[k]);
                    values.push(self.values[k]);
                }
            }
            offsets.push(indices.len());
        }
        self.offsets = offsets;
        self.indices = indices;
        self.values = values;
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.offsets[r], self.offsets[r + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (idx, vals) = self.row(r);
        match idx.binary_search(&c) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * self.cols];
        for r in 0..self.rows {
            let (idx, vals) = self.row(r);
            for (&c, &v) in idx.iter().zip(vals) {
                out[r * self.cols + c] = v;
            }
        }
        out
    }

    pub fn is_symmetric(&self) -> bool {
        if self.rows != self.cols {
            return false;
        }
        (0..self.rows).all(|r| {
            let (idx, vals) = self.row(r);
            idx.iter().zip(vals).all(|(&c, &v)| self.get(c, r) == v)
        })
    }

    /// Sparse-sparse product by row-wise accumulation.
    ///
    /// Each output row accumulates `a[r, k] * b[k, :]` for the stored `k` of
    /// row `r` in increasing order; touched columns are then sorted and
    /// explicit zeros dropped.
    pub fn matmul(&self, other: &Csr) -> Result<Csr> {
        if self.cols != other.rows {
            return Err(Error::shape(format!(
                "sparse product of {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let n = other.cols;
        let mut acc = vec![0.0f64; n];
        let mut seen = vec![false; n];
        let mut touched: Vec<usize> = Vec::new();
        let mut offsets = Vec::with_capacity(self.rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        offsets.push(0);
        for r in 0..self.rows {
            let (aidx, avals) = self.row(r);
            for (&k, &av) in aidx.iter().zip(avals) {
                let (bidx, bvals) = other.row(k);
                for (&c, &bv) in bidx.iter().zip(bvals) {
                    if !seen[c] {
                        seen[c] = true;
                        touched.push(c);
                    }
                    acc[c] += av * bv;
                }
            }
            touched.sort_unstable();
            for &c in &touched {
                let v = acc[c];
                if v != 0.0 {
                    indices.push(c);
                    values.push(v);
                }
                acc[c] = 0.0;
                seen[c] = false;
            }
            touched.clear();
            offsets.push(indices.len());
        }
        Ok(Csr {
            rows: self.rows,
            cols: n,
            offsets,
            indices,
            values,
        })
    }

    /// Elementwise sum by sorted merge of rows.
    pub fn add(&self, other: &Csr) -> Result<Csr> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::shape("sparse add of differently shaped matrices"));
        }
        let mut offsets = Vec::with_capacity(self.rows + 1);
        let mut indices = Vec::with_capacity(self.nnz() + other.nnz());
        let mut values = Vec::with_capacity(self.nnz() + other.nnz());
        offsets.push(0);
        let push = |c: usize, v: f64, indices: &mut Vec<usize>, values: &mut Vec<f64>| {
            if v != 0.0 {
                indices.push(c);
                values.push(v);
            }
        };
        for r in 0..self.rows {
            let (ai, av) = self.row(r);
            let (bi, bv) = other.row(r);
            let (mut p, mut q) = (0, 0);
            while p < ai.len() || q < bi.len() {
                if q == bi.len() || (p < ai.len() && ai[p] < bi[q]) {
                    push(ai[p], av[p], &mut indices, &mut values);
                    p += 1;
                } else if p == ai.len() || bi[q] < ai[p] {
                    push(bi[q], bv[q], &mut indices, &mut values);
                    q += 1;
                } else {
                    push(ai[p], av[p] + bv[q], &mut indices, &mut values);
                    p += 1;
                    q += 1;
                }
            }
            offsets.push(indices.len());
        }
        Ok(Csr {
            rows: self.rows,
            cols: self.cols,
            offsets,
            indices,
            values,
        })
    }

    /// `out (rows x n) += self * y (cols x n)`.
    pub(crate) fn mul_dense_acc(&self, values: &[f64], y: &[f64], out: &mut [f64], n: usize) {
        for r in 0..self.rows {
            let orow = &mut out[r * n..(r + 1) * n];
            for k in self.offsets[r]..self.offsets[r + 1] {
                let v = values[k];
                let c = self.indices[k];
                for (o, yv) in orow.iter_mut().zip(&y[c * n..(c + 1) * n]) {
                    *o += v * yv;
                }
            }
        }
    }
}

/// Stack of `d3` sparse `d1 x d2` frontal slices.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceSparse3 {
    d1: usize,
    d2: usize,
    slices: Vec<Csr>,
}

impl SliceSparse3 {
    pub fn new(d1: usize, d2: usize, slices: Vec<Csr>) -> Result<Self> {
        for (t, s) in slices.iter().enumerate() {
            if s.rows() != d1 || s.cols() != d2 {
                return Err(Error::shape(format!(
                    "slice {t} is {}x{}, expected {d1}x{d2}",
                    s.rows(),
                    s.cols()
                )));
            }
        }
        Ok(SliceSparse3 { d1, d2, slices })
    }

    pub fn empty(d1: usize, d2: usize, d3: usize) -> Self {
        SliceSparse3 {
            d1,
            d2,
            slices: vec![Csr::empty(d1, d2); d3],
        }
    }

    pub fn from_dense(x: &Tensor3) -> Self {
        let (d1, d2, d3) = x.dims();
        SliceSparse3 {
            d1,
            d2,
            slices: (0..d3)
                .map(|t| Csr::from_dense(d1, d2, x.slice(t)))
                .collect(),
        }
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.d1, self.d2, self.slices.len())
    }

    pub fn slices(&self) -> &[Csr] {
        &self.slices
    }

    pub fn slice(&self, t: usize) -> &Csr {
        &self.slices[t]
    }

    pub fn nnz(&self) -> usize {
        self.slices.iter().map(Csr::nnz).sum()
    }

    pub fn get(&self, i: usize, j: usize, t: usize) -> f64 {
        self.slices[t].get(i, j)
    }

    pub fn to_dense(&self) -> Tensor3 {
        let (d1, d2, d3) = self.dims();
        let mut out = Tensor3::zeros(d1, d2, d3);
        for (t, s) in self.slices.iter().enumerate() {
            out.slice_mut(t).copy_from_slice(&s.to_dense());
        }
        out
    }

    /// Concatenation of every slice's stored values, slice-major.
    pub fn flat_values(&self) -> Vec<f64> {
        self.slices
            .iter()
            .flat_map(|s| s.values().iter().copied())
            .collect()
    }

    /// Same structure with `value` at every stored position.
    pub fn with_value(&self, value: f64) -> SliceSparse3 {
        SliceSparse3 {
            d1: self.d1,
            d2: self.d2,
            slices: self
                .slices
                .iter()
                .map(|s| Csr {
                    values: vec![value; s.nnz()],
                    ..s.clone()
                })
                .collect(),
        }
    }

    /// `B_t = sum_{k=1..hops} A_t^k` for every slice, using sparse-sparse
    /// products only. Slices are processed independently.
    pub fn matpower_sum(&self, hops: usize) -> Result<SliceSparse3> {
        if hops == 0 {
            return Err(Error::param("hop count K must be at least 1"));
        }
        if self.d1 != self.d2 {
            return Err(Error::shape(format!(
                "matrix powers need square slices, got {}x{}",
                self.d1, self.d2
            )));
        }
        let slices = self
            .slices
            .par_iter()
            .map(|a| {
                let mut power = a.clone();
                let mut total = a.clone();
                for _ in 1..hops {
                    power = power.matmul(a)?;
                    total = total.add(&power)?;
                }
                Ok(total)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SliceSparse3 {
            d1: self.d1,
            d2: self.d2,
            slices,
        })
    }

    /// Adds the diagonal to every slice's support. Newly added positions
    /// carry `fill`; existing diagonal entries are kept.
    pub fn with_diagonal(&self, fill: f64) -> Result<SliceSparse3> {
        if self.d1 != self.d2 {
            return Err(Error::shape("diagonal augmentation needs square slices"));
        }
        let slices = self
            .slices
            .iter()
            .map(|s| {
                let mut trip: Vec<(usize, usize, f64)> = Vec::with_capacity(s.nnz() + self.d1);
                for r in 0..s.rows() {
                    let (idx, vals) = s.row(r);
                    let mut has_diag = false;
                    for (&c, &v) in idx.iter().zip(vals) {
                        has_diag |= c == r;
                        trip.push((r, c, v));
                    }
                    if !has_diag {
                        trip.push((r, r, fill));
                    }
                }
                Csr::from_triplets(self.d1, self.d2, &trip)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SliceSparse3 {
            d1: self.d1,
            d2: self.d2,
            slices,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> Csr {
        Csr::from_triplets(3, 3, &[(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0)]).unwrap()
    }

    #[test]
    fn triplets_sum_duplicates_and_drop_zeros() {
        let m = Csr::from_triplets(2, 2, &[(0, 1, 1.0), (0, 1, 2.0), (1, 0, 1.0), (1, 0, -1.0)])
            .unwrap();
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.get(0, 1), 3.0);
    }

    #[test]
    fn from_parts_validates_structure() {
        assert!(Csr::from_parts(2, 2, vec![0, 2, 1], vec![0, 1], vec![1.0, 1.0]).is_err());
        assert!(Csr::from_parts(1, 2, vec![0, 2], vec![1, 0], vec![1.0, 1.0]).is_err());
        assert!(Csr::from_parts(1, 2, vec![0, 1], vec![2], vec![1.0]).is_err());
        let m = Csr::from_parts(1, 3, vec![0, 2], vec![0, 2], vec![0.0, 4.0]).unwrap();
        assert_eq!(m.nnz(), 1);
    }

    #[test]
    fn single_hop_is_the_input() {
        let a = SliceSparse3::new(3, 3, vec![path3()]).unwrap();
        assert_eq!(a.matpower_sum(1).unwrap(), a);
    }

    #[test]
    fn path_two_hops_counts_walks() {
        let a = SliceSparse3::new(3, 3, vec![path3()]).unwrap();
        let b = a.matpower_sum(2).unwrap();
        let expect = [[1.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 1.0]];
        for (i, row) in expect.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_eq!(b.get(i, j, 0), v, "({i},{j})");
            }
        }
    }

    #[test]
    fn zero_hops_rejected() {
        let a = SliceSparse3::new(3, 3, vec![path3()]).unwrap();
        assert!(matches!(a.matpower_sum(0), Err(Error::Parameter(_))));
    }

    #[test]
    fn empty_slice_stays_empty() {
        let a = SliceSparse3::empty(4, 4, 2);
        let b = a.matpower_sum(3).unwrap();
        assert_eq!(b.nnz(), 0);
    }

    #[test]
    fn diagonal_augmentation_keeps_existing_entries() {
        let a = SliceSparse3::new(3, 3, vec![path3()]).unwrap();
        let b = a.matpower_sum(2).unwrap().with_diagonal(0.5).unwrap();
        assert_eq!(b.get(1, 1, 0), 2.0);
        let c = a.with_diagonal(0.5).unwrap();
        assert_eq!(c.get(1, 1, 0), 0.5);
        assert_eq!(c.nnz(), 7);
    }

    #[test]
    fn symmetric_check() {
        assert!(path3().is_symmetric());
        let m = Csr::from_triplets(2, 2, &[(0, 1, 1.0)]).unwrap();
        assert!(!m.is_symmetric());
    }
}
