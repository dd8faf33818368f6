//! Overlap scores `p_hat_ijt = <o_it, o_jt>` over the multi-hop support
//! plus self-loops, normalized per row with a masked softmax into the
//! aggregation tensor `P`.

use std::sync::Arc;

use crate::autodiff::{SparsePattern, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{SliceSparse3, Tensor3};

/// Support of `P` (`supp(B_t)` plus the diagonal of every slot) and the
/// row indices of `O` that each stored pair reads.
#[derive(Debug, Clone)]
pub struct AggregationSupport {
    pattern: Arc<SparsePattern>,
    left: Arc<Vec<usize>>,
    right: Arc<Vec<usize>>,
}

impl AggregationSupport {
    pub fn new(b: &SliceSparse3) -> Result<Self> {
        let (n, m, slots) = b.dims();
        if n != m {
            return Err(Error::shape(format!(
                "overlap support must be square, got {n}x{m}"
            )));
        }
        let pattern = SparsePattern::of(&b.with_diagonal(1.0)?);
        let mut left = Vec::with_capacity(pattern.nnz());
        let mut right = Vec::with_capacity(pattern.nnz());
        for t in 0..slots {
            for i in 0..n {
                for k in pattern.row_range(t, i) {
                    left.push(t * n + i);
                    right.push(t * n + pattern.indices()[k]);
                }
            }
        }
        Ok(AggregationSupport {
            pattern: Arc::new(pattern),
            left: Arc::new(left),
            right: Arc::new(right),
        })
    }

    pub fn pattern(&self) -> &Arc<SparsePattern> {
        &self.pattern
    }

    pub fn nnz(&self) -> usize {
        self.pattern.nnz()
    }
}

/// Values over an [`AggregationSupport`], kept even where they are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportValues {
    pattern: Arc<SparsePattern>,
    values: Vec<f64>,
}

/// Raw overlap scores.
pub type OverlapScores = SupportValues;
/// Row-stochastic aggregation weights.
pub type AggregationTensor = SupportValues;

impl SupportValues {
    pub fn pattern(&self) -> &Arc<SparsePattern> {
        &self.pattern
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Stored value at `(i, j, t)`, or `None` outside the support.
    pub fn get(&self, i: usize, j: usize, t: usize) -> Option<f64> {
        let r = self.pattern.row_range(t, i);
        let idx = &self.pattern.indices()[r.clone()];
        idx.binary_search(&j).ok().map(|k| self.values[r.start + k])
    }

    /// `(column, value)` pairs of row `i` in slot `t`.
    pub fn row(&self, t: usize, i: usize) -> Vec<(usize, f64)> {
        self.pattern
            .row_range(t, i)
            .map(|k| (self.pattern.indices()[k], self.values[k]))
            .collect()
    }

    pub fn to_sparse(&self) -> Result<SliceSparse3> {
        self.pattern.with_values(&self.values)
    }
}

/// Records `<o_it, o_jt>` for every stored pair of the support.
pub fn record_overlap_scores(tape: &mut Tape, o: Var, support: &AggregationSupport) -> Result<Var> {
    let (n, dim, slots) = tape.value(o).dims();
    let (pn, _, pslots) = support.pattern.dims();
    if n != pn || slots != pslots {
        return Err(Error::shape(format!(
            "features of dims {:?} for a support over {pn} nodes and {pslots} slots",
            tape.value(o).dims()
        )));
    }
    tape.pair_dot(o, dim, support.left.clone(), support.right.clone())
}

/// Records the row-wise masked softmax of the scores.
pub fn record_normalize(tape: &mut Tape, scores: Var, support: &AggregationSupport) -> Result<Var> {
    tape.masked_softmax(support.pattern.clone(), scores)
}

/// Evaluates overlap scores for fixed features.
pub fn overlap_scores(o: &Tensor3, support: &AggregationSupport) -> Result<OverlapScores> {
    let mut tape = Tape::new();
    let ov = tape.constant(o.clone());
    let s = record_overlap_scores(&mut tape, ov, support)?;
    Ok(SupportValues {
        pattern: support.pattern.clone(),
        values: tape.value(s).data().to_vec(),
    })
}

/// Softmax of each row of `scores` over its support.
pub fn normalize_scores(scores: &OverlapScores) -> Result<AggregationTensor> {
    let mut tape = Tape::new();
    let n = scores.values.len();
    let s = tape.constant(Tensor3::from_vec((n, 1, 1), scores.values.clone())?);
    let p = tape.masked_softmax(scores.pattern.clone(), s)?;
    Ok(SupportValues {
        pattern: scores.pattern.clone(),
        values: tape.value(p).data().to_vec(),
    })
}
