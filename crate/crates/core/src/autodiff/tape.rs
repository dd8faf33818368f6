//! Tensor-level reverse-mode tape.
//!
//! Every primitive records its inputs, its output value and whatever
//! auxiliary structure its backward rule needs. `backward` walks the tape
//! once in reverse order and accumulates adjoints by addition, so a value
//! consumed by several entries receives the sum of their contributions.

use std::sync::Arc;

use rayon::prelude::*;

use super::params::ParamStore;
use super::pattern::SparsePattern;
use crate::error::{Error, Result};
use crate::tensor::{gemm_a_bt_acc, gemm_acc, gemm_at_b_acc, mode3_into, transpose, Tensor3};

/// Probabilities are clamped into `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf {
        param: Option<String>,
    },
    Reshape {
        x: Var,
    },
    Facewise {
        a: Var,
        b: Var,
        shared: bool,
    },
    SparseFacewise {
        pattern: Arc<SparsePattern>,
        vals: Var,
        y: Var,
    },
    Mode3 {
        x: Var,
        mt: Arc<Vec<f64>>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        c: f64,
    },
    AddBias {
        x: Var,
        bias: Var,
    },
    Relu {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    MaskedSoftmax {
        pattern: Arc<SparsePattern>,
        scores: Var,
    },
    PairDot {
        x: Var,
        width: usize,
        left: Arc<Vec<usize>>,
        right: Arc<Vec<usize>>,
    },
    GatherConcat {
        x: Var,
        width: usize,
        left: Arc<Vec<usize>>,
        right: Arc<Vec<usize>>,
    },
    Scatter {
        x: Var,
        positions: Arc<Vec<usize>>,
    },
    Replicate {
        x: Var,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
    Bce {
        probs: Var,
        labels: Arc<Vec<f64>>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor3,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    sigmoid_fault: bool,
}

/// Adjoints of every tape entry after a backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Adjoint of `v`, or `None` when no gradient reached it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Test hook: scales the sigmoid backward rule by 1.5 so gradient
    /// checks have a negative control.
    pub fn inject_sigmoid_fault(&mut self) {
        self.sigmoid_fault = true;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor3 {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> Result<f64> {
        let t = self.value(v);
        if t.len() != 1 {
            return Err(Error::Contract(format!(
                "value of dims {:?} is not a scalar",
                t.dims()
            )));
        }
        Ok(t.data()[0])
    }

    fn push(&mut self, value: Tensor3, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, value: Tensor3) -> Var {
        self.push(value, Op::Leaf { param: None }, false)
    }

    /// Free leaf that receives a gradient but is not a stored parameter.
    pub fn variable(&mut self, value: Tensor3) -> Var {
        self.push(value, Op::Leaf { param: None }, true)
    }

    /// Leaf holding a copy of the named parameter.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let value = store.get(name)?.clone();
        Ok(self.push(
            value,
            Op::Leaf {
                param: Some(name.to_string()),
            },
            true,
        ))
    }

    /// Relabels dimensions without moving data.
    pub fn reshape(&mut self, x: Var, dims: (usize, usize, usize)) -> Result<Var> {
        let value = Tensor3::from_vec(dims, self.value(x).data().to_vec())?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape { x }, rg))
    }

    /// Face-wise matrix product. When `b` has a single slot and `a` has
    /// several, the same `b` multiplies every slice of `a`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k, ta) = self.value(a).dims();
        let (kb, n, tb) = self.value(b).dims();
        if k != kb || !(ta == tb || tb == 1) {
            return Err(Error::shape(format!(
                "matmul of {:?} and {:?}",
                (m, k, ta),
                (kb, n, tb)
            )));
        }
        let shared = tb == 1 && ta != 1;
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = Tensor3::zeros(m, n, ta);
        if shared {
            gemm_acc(av.data(), bv.data(), out.data_mut(), m * ta, k, n);
        } else if m * n > 0 {
            out.data_mut()
                .par_chunks_mut(m * n)
                .enumerate()
                .for_each(|(t, o)| gemm_acc(av.slice(t), bv.slice(t), o, m, k, n));
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Facewise { a, b, shared }, rg))
    }

    /// Slice-sparse times dense, face-wise: the sparse operand has the
    /// structure `pattern` and stored values `vals`.
    pub fn sparse_matmul(&mut self, pattern: Arc<SparsePattern>, vals: Var, y: Var) -> Result<Var> {
        let (rows, cols, slots) = pattern.dims();
        let (yr, n, yt) = self.value(y).dims();
        if self.value(vals).len() != pattern.nnz() {
            return Err(Error::shape("sparse values do not match pattern"));
        }
        if yr != cols || yt != slots {
            return Err(Error::shape(format!(
                "sparse matmul of {:?} and {:?}",
                pattern.dims(),
                self.value(y).dims()
            )));
        }
        let mut out = Tensor3::zeros(rows, n, slots);
        {
            let vv = self.value(vals).data();
            let yv = self.value(y);
            let idx = pattern.indices();
            if rows * n > 0 {
                out.data_mut()
                    .par_chunks_mut(rows * n)
                    .enumerate()
                    .for_each(|(t, o)| {
                        let ys = yv.slice(t);
                        for i in 0..rows {
                            let orow = &mut o[i * n..(i + 1) * n];
                            for k in pattern.row_range(t, i) {
                                let v = vv[k];
                                let c = idx[k];
                                for (ov, yy) in orow.iter_mut().zip(&ys[c * n..(c + 1) * n]) {
                                    *ov += v * yy;
                                }
                            }
                        }
                    });
            }
        }
        let rg = self.rg(vals) || self.rg(y);
        Ok(self.push(out, Op::SparseFacewise { pattern, vals, y }, rg))
    }

    /// Mode-3 product with a constant row-major `T x T` matrix.
    pub fn mode3(&mut self, x: Var, m: &[f64]) -> Result<Var> {
        let (d1, d2, d3) = self.value(x).dims();
        if m.len() != d3 * d3 {
            return Err(Error::shape("mode-3 matrix does not match slot count"));
        }
        let mut out = Tensor3::zeros(d1, d2, d3);
        mode3_into(self.value(x).data(), m, d1 * d2, d3, out.data_mut());
        let mt = Arc::new(transpose(m, d3));
        let rg = self.rg(x);
        Ok(self.push(out, Op::Mode3 { x, mt }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        av.same_dims(bv, "mul")?;
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor3::from_vec(av.dims(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).scale(c);
        let rg = self.rg(x);
        self.push(out, Op::Scale { x, c }, rg)
    }

    /// Adds a `1 x C x 1` row vector to every row of every slice.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, c, _) = self.value(x).dims();
        if self.value(bias).dims() != (1, c, 1) {
            return Err(Error::shape(format!(
                "bias of dims {:?} for rows of width {c}",
                self.value(bias).dims()
            )));
        }
        let mut out = self.value(x).clone();
        let b = self.value(bias).data();
        if c > 0 {
            for row in out.data_mut().chunks_mut(c) {
                for (o, bv) in row.iter_mut().zip(b) {
                    *o += bv;
                }
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(out, Op::AddBias { x, bias }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        let rg = self.rg(x);
        self.push(out, Op::Relu { x }, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let rg = self.rg(x);
        self.push(out, Op::Sigmoid { x }, rg)
    }

    /// Softmax of the stored scores within every row of `pattern`.
    pub fn masked_softmax(&mut self, pattern: Arc<SparsePattern>, scores: Var) -> Result<Var> {
        let sv = self.value(scores);
        if sv.len() != pattern.nnz() {
            return Err(Error::shape("scores do not match pattern"));
        }
        let (rows, _, slots) = pattern.dims();
        let mut out = vec![0.0; sv.len()];
        for t in 0..slots {
            for i in 0..rows {
                let r = pattern.row_range(t, i);
                softmax_into(&sv.data()[r.clone()], &mut out[r]);
            }
        }
        let n = out.len();
        let out = Tensor3::from_vec((n, 1, 1), out)?;
        let rg = self.rg(scores);
        Ok(self.push(out, Op::MaskedSoftmax { pattern, scores }, rg))
    }

    /// `out[k] = <row(left[k]), row(right[k])>` where `x` is read as
    /// consecutive rows of length `width`.
    pub fn pair_dot(
        &mut self,
        x: Var,
        width: usize,
        left: Arc<Vec<usize>>,
        right: Arc<Vec<usize>>,
    ) -> Result<Var> {
        let xv = self.value(x).data();
        check_rows(xv.len(), width, &left, &right)?;
        let out: Vec<f64> = left
            .iter()
            .zip(right.iter())
            .map(|(&l, &r)| {
                let a = &xv[l * width..(l + 1) * width];
                let b = &xv[r * width..(r + 1) * width];
                a.iter().zip(b).map(|(p, q)| p * q).sum()
            })
            .collect();
        let n = out.len();
        let out = Tensor3::from_vec((n, 1, 1), out)?;
        let rg = self.rg(x);
        Ok(self.push(
            out,
            Op::PairDot {
                x,
                width,
                left,
                right,
            },
            rg,
        ))
    }

    /// Row `k` of the `n x 2*width` output is `row(left[k]) || row(right[k])`.
    pub fn gather_concat(
        &mut self,
        x: Var,
        width: usize,
        left: Arc<Vec<usize>>,
        right: Arc<Vec<usize>>,
    ) -> Result<Var> {
        let xv = self.value(x).data();
        check_rows(xv.len(), width, &left, &right)?;
        let n = left.len();
        let mut out = Vec::with_capacity(n * 2 * width);
        for (&l, &r) in left.iter().zip(right.iter()) {
            out.extend_from_slice(&xv[l * width..(l + 1) * width]);
            out.extend_from_slice(&xv[r * width..(r + 1) * width]);
        }
        let out = Tensor3::from_vec((n, 2 * width, 1), out)?;
        let rg = self.rg(x);
        Ok(self.push(
            out,
            Op::GatherConcat {
                x,
                width,
                left,
                right,
            },
            rg,
        ))
    }

    /// Zero tensor of `dims` with `out[positions[k]] = x[k]`. Positions must
    /// be distinct.
    pub fn scatter(
        &mut self,
        x: Var,
        positions: Arc<Vec<usize>>,
        dims: (usize, usize, usize),
    ) -> Result<Var> {
        let xv = self.value(x).data();
        if xv.len() != positions.len() {
            return Err(Error::shape("scatter positions do not match input length"));
        }
        let mut out = Tensor3::zeros(dims.0, dims.1, dims.2);
        for (&p, &v) in positions.iter().zip(xv) {
            if p >= out.len() {
                return Err(Error::shape("scatter position out of range"));
            }
            out.data_mut()[p] = v;
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::Scatter { x, positions }, rg))
    }

    /// Copies a single-slot tensor into `slots` identical slices.
    pub fn replicate(&mut self, x: Var, slots: usize) -> Result<Var> {
        let (d1, d2, d3) = self.value(x).dims();
        if d3 != 1 {
            return Err(Error::shape("replicate expects a single-slot tensor"));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(src.len() * slots);
        for _ in 0..slots {
            data.extend_from_slice(src);
        }
        let out = Tensor3::from_vec((d1, d2, slots), data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Replicate { x }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor3::scalar(s), Op::Sum { x }, rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.is_empty() {
            return Err(Error::param("mean of an empty tensor"));
        }
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(x);
        Ok(self.push(Tensor3::scalar(s), Op::Mean { x }, rg))
    }

    /// Mean binary cross-entropy `-(1/n) sum [y ln p + (1 - y) ln(1 - p)]`
    /// with `p` clamped into `[1e-12, 1 - 1e-12]`.
    pub fn bce(&mut self, probs: Var, labels: Arc<Vec<f64>>) -> Result<Var> {
        let pv = self.value(probs).data();
        if pv.len() != labels.len() {
            return Err(Error::shape("prediction and label counts differ"));
        }
        if pv.is_empty() {
            return Err(Error::param("empty labeled set"));
        }
        let loss = bce_value(pv, &labels);
        let rg = self.rg(probs);
        Ok(self.push(Tensor3::scalar(loss), Op::Bce { probs, labels }, rg))
    }

    /// Runs reverse accumulation from the scalar `loss`.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got dims {:?}",
                self.value(loss).dims()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.backward_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Accumulates `d loss / d param` into the store for every parameter
    /// leaf on the tape. Other leaves are ignored.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(name) } = &node.op {
                if let Some(g) = grads.grads[idx].as_deref() {
                    store.accumulate_grad(name, g)?;
                }
            }
        }
        Ok(())
    }

    fn backward_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf { .. } => {}
            Op::Reshape { x } => self.acc(grads, *x, |d| add_into(d, g)),
            Op::Facewise { a, b, shared } => {
                let (m, k, slots) = self.value(*a).dims();
                let n = self.value(*b).dims().1;
                let av = self.value(*a);
                let bv = self.value(*b);
                if self.rg(*a) {
                    self.acc(grads, *a, |d| {
                        if *shared {
                            gemm_a_bt_acc(g, bv.data(), d, m * slots, k, n);
                        } else if m * k > 0 {
                            d.par_chunks_mut(m * k).enumerate().for_each(|(t, dt)| {
                                gemm_a_bt_acc(
                                    &g[t * m * n..(t + 1) * m * n],
                                    bv.slice(t),
                                    dt,
                                    m,
                                    k,
                                    n,
                                )
                            });
                        }
                    });
                }
                if self.rg(*b) {
                    self.acc(grads, *b, |d| {
                        if *shared {
                            gemm_at_b_acc(av.data(), g, d, m * slots, k, n);
                        } else if k * n > 0 {
                            d.par_chunks_mut(k * n).enumerate().for_each(|(t, dt)| {
                                gemm_at_b_acc(
                                    av.slice(t),
                                    &g[t * m * n..(t + 1) * m * n],
                                    dt,
                                    m,
                                    k,
                                    n,
                                )
                            });
                        }
                    });
                }
            }
            Op::SparseFacewise { pattern, vals, y } => {
                let (rows, cols, slots) = pattern.dims();
                let n = self.value(*y).dims().1;
                let yv = self.value(*y);
                let vv = self.value(*vals).data();
                let idx = pattern.indices();
                if self.rg(*vals) {
                    self.acc(grads, *vals, |d| {
                        for t in 0..slots {
                            let ys = yv.slice(t);
                            let gs = &g[t * rows * n..(t + 1) * rows * n];
                            for i in 0..rows {
                                let grow = &gs[i * n..(i + 1) * n];
                                for k in pattern.row_range(t, i) {
                                    let c = idx[k];
                                    d[k] += grow
                                        .iter()
                                        .zip(&ys[c * n..(c + 1) * n])
                                        .map(|(p, q)| p * q)
                                        .sum::<f64>();
                                }
                            }
                        }
                    });
                }
                if self.rg(*y) && cols * n > 0 {
                    self.acc(grads, *y, |d| {
                        d.par_chunks_mut(cols * n).enumerate().for_each(|(t, dt)| {
                            let gs = &g[t * rows * n..(t + 1) * rows * n];
                            for i in 0..rows {
                                let grow = &gs[i * n..(i + 1) * n];
                                for k in pattern.row_range(t, i) {
                                    let v = vv[k];
                                    let c = idx[k];
                                    for (o, gv) in dt[c * n..(c + 1) * n].iter_mut().zip(grow) {
                                        *o += v * gv;
                                    }
                                }
                            }
                        });
                    });
                }
            }
            Op::Mode3 { x, mt } => {
                let (d1, d2, d3) = node.value.dims();
                self.acc(grads, *x, |d| mode3_into(g, mt, d1 * d2, d3, d));
            }
            Op::Add { a, b } => {
                self.acc(grads, *a, |d| add_into(d, g));
                self.acc(grads, *b, |d| add_into(d, g));
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.acc(grads, *a, |d| {
                    for ((o, gv), bb) in d.iter_mut().zip(g).zip(bv) {
                        *o += gv * bb;
                    }
                });
                self.acc(grads, *b, |d| {
                    for ((o, gv), aa) in d.iter_mut().zip(g).zip(av) {
                        *o += gv * aa;
                    }
                });
            }
            Op::Scale { x, c } => self.acc(grads, *x, |d| {
                for (o, gv) in d.iter_mut().zip(g) {
                    *o += c * gv;
                }
            }),
            Op::AddBias { x, bias } => {
                self.acc(grads, *x, |d| add_into(d, g));
                let c = self.value(*bias).len();
                self.acc(grads, *bias, |d| {
                    if c > 0 {
                        for row in g.chunks(c) {
                            add_into(d, row);
                        }
                    }
                });
            }
            Op::Relu { x } => {
                let xv = self.value(*x).data();
                self.acc(grads, *x, |d| {
                    for ((o, gv), v) in d.iter_mut().zip(g).zip(xv) {
                        if *v > 0.0 {
                            *o += gv;
                        }
                    }
                });
            }
            Op::Sigmoid { x } => {
                let sv = node.value.data();
                let fault = if self.sigmoid_fault { 1.5 } else { 1.0 };
                self.acc(grads, *x, |d| {
                    for ((o, gv), s) in d.iter_mut().zip(g).zip(sv) {
                        *o += fault * gv * s * (1.0 - s);
                    }
                });
            }
            Op::MaskedSoftmax { pattern, scores } => {
                let w = node.value.data();
                let (rows, _, slots) = pattern.dims();
                self.acc(grads, *scores, |d| {
                    for t in 0..slots {
                        for i in 0..rows {
                            let r = pattern.row_range(t, i);
                            let dot: f64 = w[r.clone()]
                                .iter()
                                .zip(&g[r.clone()])
                                .map(|(a, b)| a * b)
                                .sum();
                            for k in r {
                                d[k] += w[k] * (g[k] - dot);
                            }
                        }
                    }
                });
            }
            Op::PairDot {
                x,
                width,
                left,
                right,
            } => {
                let xv = self.value(*x).data();
                let w = *width;
                self.acc(grads, *x, |d| {
                    for ((&l, &r), gv) in left.iter().zip(right.iter()).zip(g) {
                        for c in 0..w {
                            d[l * w + c] += gv * xv[r * w + c];
                            d[r * w + c] += gv * xv[l * w + c];
                        }
                    }
                });
            }
            Op::GatherConcat {
                x,
                width,
                left,
                right,
            } => {
                let w = *width;
                self.acc(grads, *x, |d| {
                    for (k, (&l, &r)) in left.iter().zip(right.iter()).enumerate() {
                        let row = &g[k * 2 * w..(k + 1) * 2 * w];
                        add_into(&mut d[l * w..(l + 1) * w], &row[..w]);
                        add_into(&mut d[r * w..(r + 1) * w], &row[w..]);
                    }
                });
            }
            Op::Scatter { x, positions } => self.acc(grads, *x, |d| {
                for (o, &p) in d.iter_mut().zip(positions.iter()) {
                    *o += g[p];
                }
            }),
            Op::Replicate { x } => {
                let n = self.value(*x).len();
                self.acc(grads, *x, |d| {
                    if n > 0 {
                        for chunk in g.chunks(n) {
                            add_into(d, chunk);
                        }
                    }
                });
            }
            Op::Sum { x } => self.acc(grads, *x, |d| {
                for o in d.iter_mut() {
                    *o += g[0];
                }
            }),
            Op::Mean { x } => {
                let n = self.value(*x).len() as f64;
                self.acc(grads, *x, |d| {
                    for o in d.iter_mut() {
                        *o += g[0] / n;
                    }
                });
            }
            Op::Bce { probs, labels } => {
                let pv = self.value(*probs).data();
                let n = pv.len() as f64;
                self.acc(grads, *probs, |d| {
                    for ((o, &p), &y) in d.iter_mut().zip(pv).zip(labels.iter()) {
                        if p > PROB_CLAMP && p < 1.0 - PROB_CLAMP {
                            *o += -g[0] * (y / p - (1.0 - y) / (1.0 - p)) / n;
                        }
                    }
                });
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.rg(v) {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
        f(slot);
    }
}

fn check_rows(len: usize, width: usize, left: &[usize], right: &[usize]) -> Result<()> {
    if width == 0 || !len.is_multiple_of(width) {
        return Err(Error::shape(format!(
            "cannot read {len} values as rows of {width}"
        )));
    }
    let nrows = len / width;
    if left.len() != right.len() {
        return Err(Error::shape("left/right index lists differ in length"));
    }
    if left.iter().chain(right.iter()).any(|&r| r >= nrows) {
        return Err(Error::shape(format!(
            "row index out of range (have {nrows} rows)"
        )));
    }
    Ok(())
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn bce_value(probs: &[f64], labels: &[f64]) -> f64 {
    let n = probs.len() as f64;
    -probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            y * p.ln() + (1.0 - y) * (1.0 - p).ln()
        })
        .sum::<f64>()
        / n
}

/// Max-subtracted softmax of `scores` written into `out`.
pub(crate) fn softmax_into(scores: &[f64], out: &mut [f64]) {
    if scores.is_empty() {
        return;
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &s) in out.iter_mut().zip(scores) {
        *o = (s - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Softmax restricted to `support`: the result holds one weight per
/// support index, in support order.
pub fn masked_softmax(scores: &[f64], support: &[usize]) -> Result<Vec<f64>> {
    if support.is_empty() {
        return Err(Error::param("masked softmax over an empty support"));
    }
    let picked = support
        .iter()
        .map(|&k| {
            scores
                .get(k)
                .copied()
                .ok_or_else(|| Error::shape(format!("support index {k} out of range")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = vec![0.0; picked.len()];
    softmax_into(&picked, &mut out);
    Ok(out)
}
