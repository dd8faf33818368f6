use crate::error::{Error, Result};

/// Dense third-order array.
///
/// Frontal slices are stored contiguously: entry `(i, j, t)` lives at
/// `t * d1 * d2 + i * d2 + j`, so slice `t` is a row-major `d1 x d2` matrix.
/// A matrix is a tensor with `d3 == 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dims: (usize, usize, usize),
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(d1: usize, d2: usize, d3: usize) -> Self {
        Tensor3 {
            dims: (d1, d2, d3),
            data: vec![0.0; d1 * d2 * d3],
        }
    }

    pub fn from_vec(dims: (usize, usize, usize), data: Vec<f64>) -> Result<Self> {
        let expected = dims.0 * dims.1 * dims.2;
        if data.len() != expected {
            return Err(Error::shape(format!(
                "{} values supplied for dims {:?} ({} expected)",
                data.len(),
                dims,
                expected
            )));
        }
        Ok(Tensor3 { dims, data })
    }

    pub fn from_fn(
        dims: (usize, usize, usize),
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let (d1, d2, d3) = dims;
        let mut data = Vec::with_capacity(d1 * d2 * d3);
        for t in 0..d3 {
            for i in 0..d1 {
                for j in 0..d2 {
                    data.push(f(i, j, t));
                }
            }
        }
        Tensor3 { dims, data }
    }

    /// Row-major `rows x cols` matrix.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_vec((rows, cols, 1), data)
    }

    pub fn scalar(v: f64) -> Self {
        Tensor3 {
            dims: (1, 1, 1),
            data: vec![v],
        }
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, t: usize) -> usize {
        t * self.dims.0 * self.dims.1 + i * self.dims.1 + j
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, t: usize) -> f64 {
        self.data[self.index(i, j, t)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, t: usize, v: f64) {
        let k = self.index(i, j, t);
        self.data[k] = v;
    }

    pub fn slice(&self, t: usize) -> &[f64] {
        let n = self.dims.0 * self.dims.1;
        &self.data[t * n..(t + 1) * n]
    }

    pub fn slice_mut(&mut self, t: usize) -> &mut [f64] {
        let n = self.dims.0 * self.dims.1;
        &mut self.data[t * n..(t + 1) * n]
    }

    pub fn tube(&self, i: usize, j: usize) -> Vec<f64> {
        (0..self.dims.2).map(|t| self.get(i, j, t)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor3 {
        Tensor3 {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, a: f64) -> Tensor3 {
        self.map(|v| a * v)
    }

    pub fn add(&self, other: &Tensor3) -> Result<Tensor3> {
        self.same_dims(other, "add")?;
        Ok(Tensor3 {
            dims: self.dims,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Largest absolute elementwise difference; infinite on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor3) -> f64 {
        if self.dims != other.dims {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub(crate) fn same_dims(&self, other: &Tensor3, what: &str) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::shape(format!(
                "{what}: dims {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }
}

/// `out (m x n) += a (m x k) * b (k x n)`, all row-major.
///
/// Inner loop order is fixed (i, p, j) so results do not depend on how
/// callers split work across threads.
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

/// `out (k x n) += a^T * g` where `a` is `m x k` and `g` is `m x n`.
pub(crate) fn gemm_at_b_acc(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, gv) in orow.iter_mut().zip(grow) {
                *o += aip * gv;
            }
        }
    }
}

/// `out (m x k) += g * b^T` where `g` is `m x n` and `b` is `k x n`.
pub(crate) fn gemm_a_bt_acc(g: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut s = 0.0;
            for (gv, bv) in grow.iter().zip(brow) {
                s += gv * bv;
            }
            out[i * k + p] += s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_slice_major() {
        let x = Tensor3::from_fn((2, 3, 2), |i, j, t| (100 * t + 10 * i + j) as f64);
        assert_eq!(x.slice(1)[0], 100.0);
        assert_eq!(x.slice(0)[4], 11.0);
        assert_eq!(x.tube(1, 2), vec![12.0, 112.0]);
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Tensor3::from_vec((2, 2, 2), vec![0.0; 7]).is_err());
    }

    #[test]
    fn gemm_variants_agree_with_naive() {
        let a: Vec<f64> = (0..6).map(|v| v as f64 - 2.0).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| (v as f64) * 0.5).collect(); // 3x4
        let mut c = vec![0.0; 8];
        gemm_acc(&a, &b, &mut c, 2, 3, 4);
        for i in 0..2 {
            for j in 0..4 {
                let s: f64 = (0..3).map(|p| a[i * 3 + p] * b[p * 4 + j]).sum();
                assert_eq!(c[i * 4 + j], s);
            }
        }
        // a^T c : 3x4
        let mut atc = vec![0.0; 12];
        gemm_at_b_acc(&a, &c, &mut atc, 2, 3, 4);
        for p in 0..3 {
            for j in 0..4 {
                let s: f64 = (0..2).map(|i| a[i * 3 + p] * c[i * 4 + j]).sum();
                assert!((atc[p * 4 + j] - s).abs() < 1e-12);
            }
        }
        // c b^T : 2x3
        let mut cbt = vec![0.0; 6];
        gemm_a_bt_acc(&c, &b, &mut cbt, 2, 3, 4);
        for i in 0..2 {
            for p in 0..3 {
                let s: f64 = (0..4).map(|j| c[i * 4 + j] * b[p * 4 + j]).sum();
                assert!((cbt[i * 3 + p] - s).abs() < 1e-9);
            }
        }
    }
}
