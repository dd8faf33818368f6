//! Invertible mode-3 transforms and the transform-domain tensor product.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::dense::{gemm_acc, Tensor3};
use super::sparse::{Csr, SliceSparse3};
use crate::error::{Error, Result};

const MAX_CONDITION: f64 = 1e12;
const INVERSE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransformKind {
    Identity,
    Dct2,
    Custom,
}

impl TransformKind {
    pub fn code(self) -> i64 {
        match self {
            TransformKind::Identity => 0,
            TransformKind::Dct2 => 1,
            TransformKind::Custom => 2,
        }
    }

    pub fn from_code(code: i64) -> Option<Self> {
        match code {
            0 => Some(TransformKind::Identity),
            1 => Some(TransformKind::Dct2),
            2 => Some(TransformKind::Custom),
            _ => None,
        }
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransformKind::Identity => "identity",
            TransformKind::Dct2 => "dct",
            TransformKind::Custom => "custom",
        })
    }
}

impl FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(TransformKind::Identity),
            "dct" | "dct2" => Ok(TransformKind::Dct2),
            other => Err(Error::param(format!(
                "unknown transform `{other}` (expected identity or dct)"
            ))),
        }
    }
}

/// A `T x T` invertible matrix `M` (row-major) applied along the slot axis,
/// together with its inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct Transform {
    kind: TransformKind,
    size: usize,
    forward: Vec<f64>,
    inverse: Vec<f64>,
}

impl Transform {
    pub fn identity(size: usize) -> Result<Self> {
        check_size(size)?;
        let eye = identity_matrix(size);
        Ok(Transform {
            kind: TransformKind::Identity,
            size,
            forward: eye.clone(),
            inverse: eye,
        })
    }

    /// Orthonormal type-II DCT: `M[k][n] = s_k cos(pi (2n + 1) k / 2T)`
    /// with `s_0 = sqrt(1/T)` and `s_k = sqrt(2/T)` otherwise.
    pub fn dct2(size: usize) -> Result<Self> {
        check_size(size)?;
        let t = size as f64;
        let mut forward = vec![0.0; size * size];
        for k in 0..size {
            let s = if k == 0 {
                (1.0 / t).sqrt()
            } else {
                (2.0 / t).sqrt()
            };
            for n in 0..size {
                forward[k * size + n] = s
                    * (std::f64::consts::PI * (2.0 * n as f64 + 1.0) * k as f64 / (2.0 * t)).cos();
            }
        }
        let inverse = transpose(&forward, size);
        Ok(Transform {
            kind: TransformKind::Dct2,
            size,
            forward,
            inverse,
        })
    }

    /// Caller-supplied row-major `size x size` matrix. The inverse is
    /// computed numerically; matrices whose 2-norm condition number exceeds
    /// 1e12 are rejected.
    pub fn custom(size: usize, matrix: Vec<f64>) -> Result<Self> {
        check_size(size)?;
        if matrix.len() != size * size {
            return Err(Error::shape(format!(
                "custom transform needs {} entries, got {}",
                size * size,
                matrix.len()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(
                "custom transform has non-finite entries".into(),
            ));
        }
        let m = DMatrix::from_row_slice(size, size, &matrix);
        let sv = m.clone().singular_values();
        let smax = sv.max();
        let smin = sv.min();
        let cond = if smin > 0.0 {
            smax / smin
        } else {
            f64::INFINITY
        };
        if !(cond <= MAX_CONDITION) {
            return Err(Error::IllConditioned(cond));
        }
        let inv = m.try_inverse().ok_or(Error::IllConditioned(cond))?;
        let mut inverse = vec![0.0; size * size];
        for r in 0..size {
            for c in 0..size {
                inverse[r * size + c] = inv[(r, c)];
            }
        }
        let tf = Transform {
            kind: TransformKind::Custom,
            size,
            forward: matrix,
            inverse,
        };
        let dev = tf.inverse_deviation();
        if dev > INVERSE_TOL {
            return Err(Error::Numeric(format!(
                "computed inverse deviates from identity by {dev:.3e}"
            )));
        }
        Ok(tf)
    }

    pub fn kind(&self) -> TransformKind {
        self.kind
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn forward(&self) -> &[f64] {
        &self.forward
    }

    pub fn inverse(&self) -> &[f64] {
        &self.inverse
    }

    pub fn is_identity(&self) -> bool {
        self.kind == TransformKind::Identity
    }

    /// Max-abs deviation of `M * M^-1` from the identity.
    pub fn inverse_deviation(&self) -> f64 {
        let n = self.size;
        let mut prod = vec![0.0; n * n];
        gemm_acc(&self.forward, &self.inverse, &mut prod, n, n, n);
        let eye = identity_matrix(n);
        prod.iter()
            .zip(&eye)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Builds a transform of a built-in kind.
pub fn make_transform(kind: TransformKind, size: usize) -> Result<Transform> {
    match kind {
        TransformKind::Identity => Transform::identity(size),
        TransformKind::Dct2 => Transform::dct2(size),
        TransformKind::Custom => Err(Error::param(
            "custom transforms need an explicit matrix (Transform::custom)",
        )),
    }
}

fn check_size(size: usize) -> Result<()> {
    if size == 0 {
        return Err(Error::param("transform size must be at least 1"));
    }
    Ok(())
}

pub(crate) fn identity_matrix(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

pub(crate) fn transpose(m: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            out[c * n + r] = m[r * n + c];
        }
    }
    out
}

/// Mode-3 product with a row-major `T x T` matrix: every tube `X(i, j, :)`
/// is replaced by `M * X(i, j, :)`.
pub fn mode3_product(x: &Tensor3, m: &[f64]) -> Result<Tensor3> {
    let (d1, d2, d3) = x.dims();
    if m.len() != d3 * d3 {
        return Err(Error::shape(format!(
            "mode-3 product of a tensor with {d3} slots and a matrix with {} entries",
            m.len()
        )));
    }
    let mut out = Tensor3::zeros(d1, d2, d3);
    mode3_into(x.data(), m, d1 * d2, d3, out.data_mut());
    Ok(out)
}

/// `out[t] += sum_s m[t, s] * x[s]` over contiguous slices of length `n`.
pub(crate) fn mode3_into(x: &[f64], m: &[f64], n: usize, slots: usize, out: &mut [f64]) {
    out.par_chunks_mut(n.max(1))
        .take(slots)
        .enumerate()
        .for_each(|(t, o)| {
            for s in 0..slots {
                let c = m[t * slots + s];
                if c == 0.0 {
                    continue;
                }
                for (ov, xv) in o.iter_mut().zip(&x[s * n..(s + 1) * n]) {
                    *ov += c * xv;
                }
            }
        });
}

/// Left operand of a face-wise product.
pub trait FacewiseLhs {
    /// `(rows, inner, slots)`.
    fn face_dims(&self) -> (usize, usize, usize);

    /// Ordinary matrix product of every frontal slice with the matching
    /// slice of `y`.
    fn facewise(&self, y: &Tensor3) -> Result<Tensor3>;

    /// Face-wise product conjugated by `tf`:
    /// `((X x3 M) facewise (Y x3 M)) x3 M^-1`.
    fn m_product(&self, y: &Tensor3, tf: &Transform) -> Result<Tensor3>;
}

fn check_facewise(lhs: (usize, usize, usize), y: &Tensor3) -> Result<()> {
    let (_, inner, slots) = lhs;
    let (yd1, _, yd3) = y.dims();
    if inner != yd1 || slots != yd3 {
        return Err(Error::shape(format!(
            "face-wise product of {:?} and {:?}",
            lhs,
            y.dims()
        )));
    }
    Ok(())
}

fn check_transform(slots: usize, tf: &Transform) -> Result<()> {
    if tf.size() != slots {
        return Err(Error::shape(format!(
            "transform of size {} applied to {slots} slots",
            tf.size()
        )));
    }
    Ok(())
}

impl FacewiseLhs for Tensor3 {
    fn face_dims(&self) -> (usize, usize, usize) {
        self.dims()
    }

    fn facewise(&self, y: &Tensor3) -> Result<Tensor3> {
        check_facewise(self.dims(), y)?;
        let (m, k, slots) = self.dims();
        let n = y.dims().1;
        let mut out = Tensor3::zeros(m, n, slots);
        if m * n > 0 {
            out.data_mut()
                .par_chunks_mut(m * n)
                .enumerate()
                .for_each(|(t, o)| gemm_acc(self.slice(t), y.slice(t), o, m, k, n));
        }
        Ok(out)
    }

    fn m_product(&self, y: &Tensor3, tf: &Transform) -> Result<Tensor3> {
        check_facewise(self.dims(), y)?;
        check_transform(self.dims().2, tf)?;
        if tf.is_identity() {
            return self.facewise(y);
        }
        let xh = mode3_product(self, tf.forward())?;
        let yh = mode3_product(y, tf.forward())?;
        mode3_product(&xh.facewise(&yh)?, tf.inverse())
    }
}

impl FacewiseLhs for SliceSparse3 {
    fn face_dims(&self) -> (usize, usize, usize) {
        self.dims()
    }

    fn facewise(&self, y: &Tensor3) -> Result<Tensor3> {
        check_facewise(self.dims(), y)?;
        let (m, _, slots) = self.dims();
        let n = y.dims().1;
        let mut out = Tensor3::zeros(m, n, slots);
        if m * n > 0 {
            out.data_mut()
                .par_chunks_mut(m * n)
                .enumerate()
                .for_each(|(t, o)| {
                    let s = self.slice(t);
                    s.mul_dense_acc(s.values(), y.slice(t), o, n)
                });
        }
        Ok(out)
    }

    fn m_product(&self, y: &Tensor3, tf: &Transform) -> Result<Tensor3> {
        check_facewise(self.dims(), y)?;
        check_transform(self.dims().2, tf)?;
        if tf.is_identity() {
            return self.facewise(y);
        }
        let xh = sparse_mode3(self, tf.forward())?;
        let yh = mode3_product(y, tf.forward())?;
        mode3_product(&xh.facewise(&yh)?, tf.inverse())
    }
}

/// Face-wise product of every slice pair.
pub fn facewise_product<X: FacewiseLhs + ?Sized>(x: &X, y: &Tensor3) -> Result<Tensor3> {
    x.facewise(y)
}

/// Transform-domain tensor product `X (*) Y` under `tf`.
pub fn m_product<X: FacewiseLhs + ?Sized>(x: &X, y: &Tensor3, tf: &Transform) -> Result<Tensor3> {
    x.m_product(y, tf)
}

/// Union of the per-slice supports as a single compressed-row structure
/// with unit values.
pub fn union_support(x: &SliceSparse3) -> Csr {
    let (d1, d2, _) = x.dims();
    let mut offsets = Vec::with_capacity(d1 + 1);
    let mut indices = Vec::new();
    offsets.push(0);
    let mut row: Vec<usize> = Vec::new();
    for r in 0..d1 {
        row.clear();
        for s in x.slices() {
            row.extend_from_slice(s.row(r).0);
        }
        row.sort_unstable();
        row.dedup();
        indices.extend_from_slice(&row);
        offsets.push(indices.len());
    }
    let nnz = indices.len();
    Csr::from_parts(d1, d2, offsets, indices, vec![1.0; nnz]).expect("union of valid supports")
}

/// Mode-3 product of a slice-sparse tensor. Tubes are mixed only over the
/// union of the slice supports; exact zeros are dropped afterwards.
pub fn sparse_mode3(x: &SliceSparse3, m: &[f64]) -> Result<SliceSparse3> {
    let (d1, d2, d3) = x.dims();
    if m.len() != d3 * d3 {
        return Err(Error::shape("mode-3 matrix does not match slot count"));
    }
    let union = union_support(x);
    let nnz = union.nnz();
    let mut tubes = vec![0.0; nnz * d3];
    for (t, s) in x.slices().iter().enumerate() {
        for r in 0..d1 {
            let (uidx, _) = union.row(r);
            let base = union.offsets()[r];
            let (idx, vals) = s.row(r);
            for (&c, &v) in idx.iter().zip(vals) {
                let k = base + uidx.binary_search(&c).expect("column in union");
                tubes[t * nnz + k] = v;
            }
        }
    }
    let mut mixed = vec![0.0; nnz * d3];
    mode3_into(&tubes, m, nnz, d3, &mut mixed);
    let slices = (0..d3)
        .map(|t| {
            Csr::from_parts(
                d1,
                d2,
                union.offsets().to_vec(),
                union.indices().to_vec(),
                mixed[t * nnz..(t + 1) * nnz].to_vec(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    SliceSparse3::new(d1, d2, slices)
}
