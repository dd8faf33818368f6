use std::ops::Range;

use crate::error::{Error, Result};
use crate::tensor::{Csr, SliceSparse3};

/// Sparsity structure of a slice-sparse tensor with values held elsewhere
/// (typically on the tape). Rows are addressed slot-major: global row
/// `t * rows + i`. Stored values are laid out in the same order as
/// [`SliceSparse3::flat_values`].
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePattern {
    rows: usize,
    cols: usize,
    slots: usize,
    row_ptr: Vec<usize>,
    indices: Vec<usize>,
}

impl SparsePattern {
    pub fn of(x: &SliceSparse3) -> Self {
        let (rows, cols, slots) = x.dims();
        let mut row_ptr = Vec::with_capacity(rows * slots + 1);
        let mut indices = Vec::with_capacity(x.nnz());
        row_ptr.push(0);
        for s in x.slices() {
            for r in 0..rows {
                indices.extend_from_slice(s.row(r).0);
                row_ptr.push(indices.len());
            }
        }
        SparsePattern {
            rows,
            cols,
            slots,
            row_ptr,
            indices,
        }
    }

    /// The same structure repeated in every slot.
    pub fn repeated(csr: &Csr, slots: usize) -> Self {
        let nnz = csr.nnz();
        let mut row_ptr = Vec::with_capacity(csr.rows() * slots + 1);
        let mut indices = Vec::with_capacity(nnz * slots);
        row_ptr.push(0);
        for t in 0..slots {
            for r in 0..csr.rows() {
                row_ptr.push(t * nnz + csr.offsets()[r + 1]);
            }
            indices.extend_from_slice(csr.indices());
        }
        SparsePattern {
            rows: csr.rows(),
            cols: csr.cols(),
            slots,
            row_ptr,
            indices,
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.rows, self.cols, self.slots)
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    #[inline]
    pub fn row_range(&self, t: usize, i: usize) -> Range<usize> {
        let g = t * self.rows + i;
        self.row_ptr[g]..self.row_ptr[g + 1]
    }

    /// Value range owned by slot `t`.
    #[inline]
    pub fn slot_range(&self, t: usize) -> Range<usize> {
        self.row_ptr[t * self.rows]..self.row_ptr[(t + 1) * self.rows]
    }

    #[inline]
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Materializes with the given values. Explicit zeros are dropped.
    pub fn with_values(&self, values: &[f64]) -> Result<SliceSparse3> {
        if values.len() != self.nnz() {
            return Err(Error::shape(format!(
                "{} values for a pattern with {} entries",
                values.len(),
                self.nnz()
            )));
        }
        let slices = (0..self.slots)
            .map(|t| {
                let base = self.row_ptr[t * self.rows];
                let offsets: Vec<usize> = (0..=self.rows)
                    .map(|r| self.row_ptr[t * self.rows + r] - base)
                    .collect();
                let range = self.slot_range(t);
                Csr::from_parts(
                    self.rows,
                    self.cols,
                    offsets,
                    self.indices[range.clone()].to_vec(),
                    values[range].to_vec(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        SliceSparse3::new(self.rows, self.cols, slices)
    }
}
