//! Multi-hop overlap tensor and the learned structural feature generator.
//!
//! `B_t = A_t + A_t^2 + ... + A_t^K` counts walks of length at most `K`
//! between node pairs in the training adjacency. Each node's structural
//! feature at slot `t` is `g_theta(sum_j g_edge(b_ijt))`, the sum running
//! over the stored entries of row `i` of `B_t`.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;

use crate::autodiff::{ParamStore, SparsePattern, Tape, Var};
use crate::error::Result;
use crate::graph::DynamicGraph;
use crate::tensor::{Csr, SliceSparse3, Tensor3};

pub const EDGE_FC1_W: &str = "gen.edge.fc1.weight";
pub const EDGE_FC1_B: &str = "gen.edge.fc1.bias";
pub const EDGE_FC2_W: &str = "gen.edge.fc2.weight";
pub const EDGE_FC2_B: &str = "gen.edge.fc2.bias";
pub const THETA_FC1_W: &str = "gen.theta.fc1.weight";
pub const THETA_FC1_B: &str = "gen.theta.fc1.bias";
pub const THETA_FC2_W: &str = "gen.theta.fc2.weight";
pub const THETA_FC2_B: &str = "gen.theta.fc2.bias";

/// Hidden activation of the perceptrons. `Identity` is the linear test
/// mode used to check the plumbing against hand-composed linear maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Identity => x,
        }
    }
}

/// `B` for the message-passing graph of `g`.
pub fn compute_overlap_tensor(g: &DynamicGraph, hops: usize) -> Result<SliceSparse3> {
    g.adjacency().matpower_sum(hops)
}

/// Memoizes overlap tensors by `(dataset, K, split seed)`.
#[derive(Debug, Default)]
pub struct OverlapCache {
    entries: HashMap<(String, usize, u64), Arc<SliceSparse3>>,
}

impl OverlapCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_compute(
        &mut self,
        dataset: &str,
        hops: usize,
        split_seed: u64,
        g: &DynamicGraph,
    ) -> Result<Arc<SliceSparse3>> {
        let key = (dataset.to_string(), hops, split_seed);
        if let Some(b) = self.entries.get(&key) {
            return Ok(b.clone());
        }
        let b = Arc::new(compute_overlap_tensor(g, hops)?);
        self.entries.insert(key, b.clone());
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Uniform Glorot initialization of a `fan_in x fan_out` matrix.
pub(crate) fn xavier(rng: &mut impl Rng, fan_in: usize, fan_out: usize, slots: usize) -> Tensor3 {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor3::from_fn((fan_in, fan_out, slots), |_, _, _| {
        rng.gen_range(-bound..bound)
    })
}

/// Registers both generator perceptrons (`1 -> F -> F` and `F -> F -> F`)
/// with Glorot weights and zero biases.
pub fn init_generator(store: &mut ParamStore, dim: usize, rng: &mut impl Rng) {
    store.insert(EDGE_FC1_W, xavier(rng, 1, dim, 1));
    store.insert(EDGE_FC1_B, Tensor3::zeros(1, dim, 1));
    store.insert(EDGE_FC2_W, xavier(rng, dim, dim, 1));
    store.insert(EDGE_FC2_B, Tensor3::zeros(1, dim, 1));
    store.insert(THETA_FC1_W, xavier(rng, dim, dim, 1));
    store.insert(THETA_FC1_B, Tensor3::zeros(1, dim, 1));
    store.insert(THETA_FC2_W, xavier(rng, dim, dim, 1));
    store.insert(THETA_FC2_B, Tensor3::zeros(1, dim, 1));
}

/// Precomputed constant input of the generator.
///
/// `g_edge` depends on `b_ijt` alone, so it is evaluated once per distinct
/// value of `B`; the per-node neighbourhood sum becomes a sparse product of
/// a `(N T) x U` count matrix with the `U x F` table of edge encodings.
#[derive(Debug, Clone)]
pub struct GeneratorInput {
    num_nodes: usize,
    slots: usize,
    distinct: Vec<f64>,
    counts: Arc<SparsePattern>,
    count_values: Vec<f64>,
}

impl GeneratorInput {
    pub fn new(b: &SliceSparse3) -> Result<Self> {
        let (n, _, slots) = b.dims();
        let mut distinct: Vec<f64> = b
            .slices()
            .iter()
            .flat_map(|s| s.values().iter().copied())
            .collect();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        let mut trip = Vec::new();
        for (t, s) in b.slices().iter().enumerate() {
            for i in 0..n {
                for &v in s.row(i).1 {
                    let u = distinct
                        .binary_search_by(|d| d.total_cmp(&v))
                        .expect("value present");
                    trip.push((t * n + i, u, 1.0));
                }
            }
        }
        let counts = Csr::from_triplets(n * slots, distinct.len(), &trip)?;
        let count_values = counts.values().to_vec();
        let counts = Arc::new(SparsePattern::repeated(&counts, 1));
        Ok(GeneratorInput {
            num_nodes: n,
            slots,
            distinct,
            counts,
            count_values,
        })
    }

    pub fn distinct_values(&self) -> &[f64] {
        &self.distinct
    }
}

/// Dense two-layer perceptron `act(x W1 + b1) W2 + b2` applied row-wise.
pub(crate) fn mlp2(
    tape: &mut Tape,
    x: Var,
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
    act: Activation,
) -> Result<Var> {
    let h = tape.matmul(x, w1)?;
    let h = tape.add_bias(h, b1)?;
    let h = act.apply(tape, h);
    let o = tape.matmul(h, w2)?;
    tape.add_bias(o, b2)
}

/// Records the generator on `tape`; the result is `O` with dims `N x F x T`.
pub fn generate_features(
    tape: &mut Tape,
    input: &GeneratorInput,
    params: &ParamVars,
    act: Activation,
) -> Result<Var> {
    let u = input.distinct.len();
    let values = tape.constant(Tensor3::from_vec((u, 1, 1), input.distinct.clone())?);
    let edge = mlp2(
        tape,
        values,
        params.get(EDGE_FC1_W)?,
        params.get(EDGE_FC1_B)?,
        params.get(EDGE_FC2_W)?,
        params.get(EDGE_FC2_B)?,
        act,
    )?;
    let counts = tape.constant(Tensor3::from_vec(
        (input.count_values.len(), 1, 1),
        input.count_values.clone(),
    )?);
    let summed = tape.sparse_matmul(input.counts.clone(), counts, edge)?;
    let o = mlp2(
        tape,
        summed,
        params.get(THETA_FC1_W)?,
        params.get(THETA_FC1_B)?,
        params.get(THETA_FC2_W)?,
        params.get(THETA_FC2_B)?,
        act,
    )?;
    let dim = tape.value(o).dims().1;
    tape.reshape(o, (input.num_nodes, dim, input.slots))
}

/// Tape handles for every parameter, bound once per tape.
#[derive(Debug, Clone, Default)]
pub struct ParamVars {
    vars: std::collections::BTreeMap<String, Var>,
}

impl ParamVars {
    pub fn bind(tape: &mut Tape, store: &ParamStore) -> Result<Self> {
        let mut vars = std::collections::BTreeMap::new();
        for name in store.names() {
            vars.insert(name.to_string(), tape.param(store, name)?);
        }
        Ok(ParamVars { vars })
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| crate::Error::Contract(format!("parameter `{name}` is not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{IdMap, SlotEdge};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn triangle() -> DynamicGraph {
        let e = |i, j| SlotEdge { i, j, weight: 1.0 };
        DynamicGraph::from_slot_edges(
            3,
            true,
            vec![vec![e(0, 1), e(1, 2), e(0, 2)]],
            IdMap::from_external(vec![0, 1, 2]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn one_hop_overlap_is_adjacency() {
        let g = triangle();
        assert_eq!(&compute_overlap_tensor(&g, 1).unwrap(), g.adjacency());
    }

    #[test]
    fn triangle_two_hops() {
        let b = compute_overlap_tensor(&triangle(), 2).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(b.get(i, j, 0), 2.0, "({i},{j})");
            }
        }
    }

    #[test]
    fn isolated_nodes_give_empty_slices() {
        let g = DynamicGraph::from_slot_edges(
            2,
            true,
            vec![vec![]],
            IdMap::from_external(vec![5, 6]).unwrap(),
        )
        .unwrap();
        assert_eq!(compute_overlap_tensor(&g, 2).unwrap().nnz(), 0);
    }

    #[test]
    fn cache_returns_same_tensor() {
        let g = triangle();
        let mut cache = OverlapCache::new();
        let a = cache.get_or_compute("tri", 2, 7, &g).unwrap();
        let b = cache.get_or_compute("tri", 2, 7, &g).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        let c = cache.get_or_compute("tri", 1, 7, &g).unwrap();
        assert!(!Arc::ptr_eq(&a, &c));
        assert_eq!(cache.len(), 2);
    }

    #[test]
    fn zero_weights_give_zero_features() {
        let b = compute_overlap_tensor(&triangle(), 2).unwrap();
        let input = GeneratorInput::new(&b).unwrap();
        let mut store = ParamStore::new();
        init_generator(&mut store, 4, &mut ChaCha8Rng::seed_from_u64(0));
        for (_, p) in store.iter_mut() {
            p.value.data_mut().fill(0.0);
        }
        let mut tape = Tape::new();
        let vars = ParamVars::bind(&mut tape, &store).unwrap();
        let o = generate_features(&mut tape, &input, &vars, Activation::Relu).unwrap();
        assert_eq!(tape.value(o).dims(), (3, 4, 1));
        assert!(tape.value(o).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_generator_passes_edge_encoding_through() {
        let e = SlotEdge {
            i: 0,
            j: 1,
            weight: 1.0,
        };
        let g = DynamicGraph::from_slot_edges(
            2,
            true,
            vec![vec![e]],
            IdMap::from_external(vec![0, 1]).unwrap(),
        )
        .unwrap();
        let b = compute_overlap_tensor(&g, 1).unwrap();
        let input = GeneratorInput::new(&b).unwrap();
        let f = 3;
        let eye = Tensor3::from_fn((f, f, 1), |i, j, _| if i == j { 1.0 } else { 0.0 });
        let mut store = ParamStore::new();
        init_generator(&mut store, f, &mut ChaCha8Rng::seed_from_u64(0));
        store.insert(
            EDGE_FC1_W,
            Tensor3::from_vec((1, f, 1), vec![0.5, -1.0, 2.0]).unwrap(),
        );
        for w in [EDGE_FC2_W, THETA_FC1_W, THETA_FC2_W] {
            store.insert(w, eye.clone());
        }
        let mut tape = Tape::new();
        let vars = ParamVars::bind(&mut tape, &store).unwrap();
        let o = generate_features(&mut tape, &input, &vars, Activation::Identity).unwrap();
        for i in 0..2 {
            let row: Vec<f64> = (0..f).map(|k| tape.value(o).get(i, k, 0)).collect();
            assert_eq!(row, vec![0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn features_are_permutation_equivariant() {
        let n = 6;
        let perm = [3, 0, 5, 1, 4, 2];
        let pairs = [(0, 1), (1, 2), (2, 3), (0, 4), (4, 5), (1, 4)];
        let build = |map: &dyn Fn(usize) -> usize| {
            let slot = pairs
                .iter()
                .map(|&(i, j)| SlotEdge {
                    i: map(i),
                    j: map(j),
                    weight: 1.0,
                })
                .collect();
            DynamicGraph::from_slot_edges(
                n,
                true,
                vec![slot],
                IdMap::from_external((0..n as i64).collect()).unwrap(),
            )
            .unwrap()
        };
        let mut store = ParamStore::new();
        init_generator(&mut store, 4, &mut ChaCha8Rng::seed_from_u64(2));
        let features = |g: &DynamicGraph| {
            let input = GeneratorInput::new(&compute_overlap_tensor(g, 2).unwrap()).unwrap();
            let mut tape = Tape::new();
            let vars = ParamVars::bind(&mut tape, &store).unwrap();
            let o = generate_features(&mut tape, &input, &vars, Activation::Relu).unwrap();
            tape.value(o).clone()
        };
        let base = features(&build(&|i| i));
        let permuted = features(&build(&|i| perm[i]));
        for i in 0..n {
            for k in 0..4 {
                assert_eq!(base.get(i, k, 0), permuted.get(perm[i], k, 0));
            }
        }
    }
}
