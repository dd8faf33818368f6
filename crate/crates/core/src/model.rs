//! High-order layers `H(l) = act(P (*) H(l-1) (*) W(l))` over the
//! aggregation tensor, and the pairwise link decoder.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamStore, SparsePattern, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::LabeledPair;
use crate::noa::{record_normalize, record_overlap_scores, AggregationSupport};
use crate::structfeat::{
    self, generate_features, mlp2, xavier, Activation, GeneratorInput, ParamVars,
};
use crate::tensor::{union_support, SliceSparse3, Tensor3, Transform, TransformKind};

pub const EMBED: &str = "embed.weight";
pub const DEC_FC1_W: &str = "dec.fc1.weight";
pub const DEC_FC1_B: &str = "dec.fc1.bias";
pub const DEC_FC2_W: &str = "dec.fc2.weight";
pub const DEC_FC2_B: &str = "dec.fc2.bias";

pub fn layer_weight(l: usize) -> String {
    format!("layer{l}.weight")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub num_nodes: usize,
    pub slots: usize,
    pub dim: usize,
    pub layers: usize,
    pub transform: TransformKind,
    /// Hidden activation everywhere; `Identity` is the linear test mode.
    pub activation: Activation,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::param("at least one layer is required"));
        }
        if self.dim == 0 || self.num_nodes == 0 || self.slots == 0 {
            return Err(Error::param(
                "node count, slot count and dimension must be positive",
            ));
        }
        Ok(())
    }
}

/// Registers every model parameter: embedding `N x F`, one `F x F x T`
/// weight per layer, the generator perceptrons and the `2F -> F -> 1`
/// decoder. Weights are Glorot-uniform, biases zero.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = cfg.dim;
    let mut store = ParamStore::new();
    store.insert(EMBED, xavier(&mut rng, cfg.num_nodes, f, 1));
    for l in 1..=cfg.layers {
        store.insert(layer_weight(l), xavier(&mut rng, f, f, cfg.slots));
    }
    structfeat::init_generator(&mut store, f, &mut rng);
    store.insert(DEC_FC1_W, xavier(&mut rng, 2 * f, f, 1));
    store.insert(DEC_FC1_B, Tensor3::zeros(1, f, 1));
    store.insert(DEC_FC2_W, xavier(&mut rng, f, 1, 1));
    store.insert(DEC_FC2_B, Tensor3::zeros(1, 1, 1));
    Ok(store)
}

/// How `P` enters the transform-domain product. Under the identity
/// transform slices stay independent; otherwise `P` is spread over the
/// union of its slice supports so it can be mixed along the slot axis.
#[derive(Debug, Clone)]
enum SparseOperand {
    Sliced,
    Union {
        positions: Arc<Vec<usize>>,
        union_nnz: usize,
        pattern: Arc<SparsePattern>,
    },
}

/// Constant structure shared by every forward pass on one graph.
#[derive(Debug, Clone)]
pub struct Model {
    cfg: ModelConfig,
    transform: Transform,
    generator: GeneratorInput,
    support: AggregationSupport,
    operand: SparseOperand,
}

impl Model {
    /// `overlap` is the multi-hop tensor `B` of the message-passing graph.
    pub fn new(cfg: ModelConfig, overlap: &SliceSparse3, transform: Transform) -> Result<Self> {
        cfg.validate()?;
        let (n, m, slots) = overlap.dims();
        if n != cfg.num_nodes || m != cfg.num_nodes || slots != cfg.slots {
            return Err(Error::shape(format!(
                "overlap tensor {:?} does not match {} nodes x {} slots",
                overlap.dims(),
                cfg.num_nodes,
                cfg.slots
            )));
        }
        if transform.size() != slots {
            return Err(Error::shape("transform size differs from slot count"));
        }
        let support = AggregationSupport::new(overlap)?;
        let operand = if transform.is_identity() {
            SparseOperand::Sliced
        } else {
            let sparse = support.pattern().with_values(&vec![1.0; support.nnz()])?;
            let union = union_support(&sparse);
            let union_nnz = union.nnz();
            let mut positions = Vec::with_capacity(support.nnz());
            for (t, s) in sparse.slices().iter().enumerate() {
                for r in 0..n {
                    let (uidx, _) = union.row(r);
                    let base = union.offsets()[r];
                    for c in s.row(r).0 {
                        let k = base + uidx.binary_search(c).expect("column in union");
                        positions.push(t * union_nnz + k);
                    }
                }
            }
            SparseOperand::Union {
                positions: Arc::new(positions),
                union_nnz,
                pattern: Arc::new(SparsePattern::repeated(&union, slots)),
            }
        };
        Ok(Model {
            cfg,
            transform,
            generator: GeneratorInput::new(overlap)?,
            support,
            operand,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn transform(&self) -> &Transform {
        &self.transform
    }

    pub fn support(&self) -> &AggregationSupport {
        &self.support
    }

    /// Records `O`, the overlap scores and their normalization; returns the
    /// values of `P` over the support.
    pub fn aggregation(&self, tape: &mut Tape, params: &ParamVars) -> Result<Var> {
        let o = generate_features(tape, &self.generator, params, self.cfg.activation)?;
        let scores = record_overlap_scores(tape, o, &self.support)?;
        record_normalize(tape, scores, &self.support)
    }

    /// Full forward pass; returns the final embeddings `H(L)`.
    pub fn forward(&self, tape: &mut Tape, params: &ParamVars) -> Result<Var> {
        let p = self.aggregation(tape, params)?;
        let h0 = tape.replicate(params.get(EMBED)?, self.cfg.slots)?;
        self.propagate(tape, params, p, h0)
    }

    /// Stacked layers from `h0` with aggregation values `p` over the
    /// model's support.
    pub fn propagate(&self, tape: &mut Tape, params: &ParamVars, p: Var, h0: Var) -> Result<Var> {
        let mut h = h0;
        for l in 1..=self.cfg.layers {
            let ph = self.sparse_m_product(tape, p, h)?;
            let w = params.get(&layer_weight(l))?;
            let z = dense_m_product(tape, ph, w, &self.transform)?;
            h = if l < self.cfg.layers {
                self.cfg.activation.apply(tape, z)
            } else {
                z
            };
            if !tape.value(h).is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite activations in layer {l}"
                )));
            }
        }
        Ok(h)
    }

    fn sparse_m_product(&self, tape: &mut Tape, p: Var, h: Var) -> Result<Var> {
        match &self.operand {
            SparseOperand::Sliced => tape.sparse_matmul(self.support.pattern().clone(), p, h),
            SparseOperand::Union {
                positions,
                union_nnz,
                pattern,
            } => {
                let slots = self.cfg.slots;
                let tubes = tape.scatter(p, positions.clone(), (*union_nnz, 1, slots))?;
                let ph = tape.mode3(tubes, self.transform.forward())?;
                let ph = tape.reshape(ph, (union_nnz * slots, 1, 1))?;
                let hh = tape.mode3(h, self.transform.forward())?;
                let prod = tape.sparse_matmul(pattern.clone(), ph, hh)?;
                tape.mode3(prod, self.transform.inverse())
            }
        }
    }

    /// Link probabilities `sigmoid(dec(h_it || h_jt))` for each pair.
    pub fn decode(
        &self,
        tape: &mut Tape,
        params: &ParamVars,
        h: Var,
        pairs: &[LabeledPair],
    ) -> Result<Var> {
        decode(tape, params, h, pairs)
    }
}

/// Transform-domain product of two dense tensors on the tape.
pub fn dense_m_product(tape: &mut Tape, x: Var, y: Var, tf: &Transform) -> Result<Var> {
    if tf.is_identity() {
        return tape.matmul(x, y);
    }
    let xh = tape.mode3(x, tf.forward())?;
    let yh = tape.mode3(y, tf.forward())?;
    let prod = tape.matmul(xh, yh)?;
    tape.mode3(prod, tf.inverse())
}

/// Decoder over embeddings `h` (`N x F x T`).
pub fn decode(tape: &mut Tape, params: &ParamVars, h: Var, pairs: &[LabeledPair]) -> Result<Var> {
    let (n, f, slots) = tape.value(h).dims();
    for p in pairs {
        if p.i >= n || p.j >= n || p.t >= slots {
            return Err(Error::shape(format!(
                "pair ({}, {}, {}) out of range for {n} nodes and {slots} slots",
                p.i, p.j, p.t
            )));
        }
    }
    let left = Arc::new(pairs.iter().map(|p| p.t * n + p.i).collect::<Vec<_>>());
    let right = Arc::new(pairs.iter().map(|p| p.t * n + p.j).collect::<Vec<_>>());
    let x = tape.gather_concat(h, f, left, right)?;
    let logits = mlp2(
        tape,
        x,
        params.get(DEC_FC1_W)?,
        params.get(DEC_FC1_B)?,
        params.get(DEC_FC2_W)?,
        params.get(DEC_FC2_B)?,
        Activation::Relu,
    )?;
    Ok(tape.sigmoid(logits))
}
