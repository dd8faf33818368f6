//! Naive dense reference for the full forward pass, written directly from
//! the model equations.

use std::f64::consts::PI;

use nohgnn::autodiff::{ParamStore, Tape};
use nohgnn::graph::{DynamicGraph, IdMap, LabeledPair, SlotEdge};
use nohgnn::model::{self, init_params, Model, ModelConfig};
use nohgnn::structfeat::{self as sf, compute_overlap_tensor, Activation, ParamVars};
use nohgnn::tensor::{make_transform, Tensor3, TransformKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Mat = Vec<Vec<f64>>;

pub struct Instance {
    pub graph: DynamicGraph,
    pub cfg: ModelConfig,
    pub hops: usize,
    pub store: ParamStore,
    pub pairs: Vec<LabeledPair>,
}

pub fn instance(seed: u64, transform: TransformKind) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(4..9);
    let slots = rng.gen_range(2..5);
    let dim = rng.gen_range(2..6);
    let layers = rng.gen_range(1..4);
    let hops = rng.gen_range(1..4);
    let mut edges = Vec::new();
    for _ in 0..slots {
        let mut slot = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.gen::<f64>() < 0.3 {
                    slot.push(SlotEdge { i, j, weight: 1.0 });
                }
            }
        }
        edges.push(slot);
    }
    let graph = DynamicGraph::from_slot_edges(
        n,
        true,
        edges,
        IdMap::from_external((0..n as i64).collect()).unwrap(),
    )
    .unwrap();
    let cfg = ModelConfig {
        num_nodes: n,
        slots,
        dim,
        layers,
        transform,
        activation: Activation::Relu,
    };
    let mut store = init_params(&cfg, seed).unwrap();
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names.iter().filter(|s| s.ends_with(".bias")) {
        let v = store.value_mut(name).unwrap();
        *v = Tensor3::from_fn(v.dims(), |_, _, _| rng.gen_range(-0.2..0.2));
    }
    let pairs = (0..12)
        .map(|_| LabeledPair {
            i: rng.gen_range(0..n),
            j: rng.gen_range(0..n),
            t: rng.gen_range(0..slots),
            label: 0,
        })
        .collect();
    Instance {
        graph,
        cfg,
        hops,
        store,
        pairs,
    }
}

fn matrix(store: &ParamStore, name: &str) -> Mat {
    let t = store.get(name).unwrap();
    let (r, c, _) = t.dims();
    (0..r)
        .map(|i| (0..c).map(|j| t.get(i, j, 0)).collect())
        .collect()
}

fn vector(store: &ParamStore, name: &str) -> Vec<f64> {
    matrix(store, name).remove(0)
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            for l in 0..k {
                out[i][j] += a[i][l] * b[l][j];
            }
        }
    }
    out
}

fn perceptron(x: &[f64], w1: &Mat, b1: &[f64], w2: &Mat, b2: &[f64], act: bool) -> Vec<f64> {
    let hidden: Vec<f64> = (0..b1.len())
        .map(|h| {
            let z = b1[h]
                + x.iter()
                    .enumerate()
                    .map(|(k, xk)| xk * w1[k][h])
                    .sum::<f64>();
            if act {
                relu(z)
            } else {
                z
            }
        })
        .collect();
    (0..b2.len())
        .map(|o| {
            b2[o]
                + hidden
                    .iter()
                    .enumerate()
                    .map(|(h, v)| v * w2[h][o])
                    .sum::<f64>()
        })
        .collect()
}

fn dct_coefficient(k: usize, n: usize, size: usize) -> f64 {
    let s = if k == 0 {
        (1.0 / size as f64).sqrt()
    } else {
        (2.0 / size as f64).sqrt()
    };
    s * (PI * (2 * n + 1) as f64 * k as f64 / (2 * size) as f64).cos()
}

fn to_domain(x: &[Mat], dct: bool) -> Vec<Mat> {
    if !dct {
        return x.to_vec();
    }
    let size = x.len();
    (0..size)
        .map(|k| {
            let mut acc = vec![vec![0.0; x[0][0].len()]; x[0].len()];
            for (n, xn) in x.iter().enumerate() {
                let c = dct_coefficient(k, n, size);
                for (r, row) in xn.iter().enumerate() {
                    for (col, v) in row.iter().enumerate() {
                        acc[r][col] += c * v;
                    }
                }
            }
            acc
        })
        .collect()
}

fn from_domain(x: &[Mat], dct: bool) -> Vec<Mat> {
    if !dct {
        return x.to_vec();
    }
    let size = x.len();
    (0..size)
        .map(|n| {
            let mut acc = vec![vec![0.0; x[0][0].len()]; x[0].len()];
            for (k, xk) in x.iter().enumerate() {
                let c = dct_coefficient(k, n, size);
                for (r, row) in xk.iter().enumerate() {
                    for (col, v) in row.iter().enumerate() {
                        acc[r][col] += c * v;
                    }
                }
            }
            acc
        })
        .collect()
}

/// Returns the final embeddings per slot and the decoder probabilities.
pub fn oracle(inst: &Instance) -> (Vec<Mat>, Vec<f64>) {
    let (n, slots, f) = (inst.cfg.num_nodes, inst.cfg.slots, inst.cfg.dim);
    let s = &inst.store;
    let dct = inst.cfg.transform == TransformKind::Dct2;
    let mut p_all = Vec::new();
    for t in 0..slots {
        let mut a = vec![vec![0.0; n]; n];
        for e in inst.graph.slot_edges(t) {
            a[e.i][e.j] = 1.0;
            a[e.j][e.i] = 1.0;
        }
        let mut power = a.clone();
        let mut b = a.clone();
        for _ in 1..inst.hops {
            power = matmul(&power, &a);
            for i in 0..n {
                for j in 0..n {
                    b[i][j] += power[i][j];
                }
            }
        }
        let o: Mat = (0..n)
            .map(|i| {
                let mut sum = vec![0.0; f];
                for j in 0..n {
                    if b[i][j] != 0.0 {
                        let g = perceptron(
                            &[b[i][j]],
                            &matrix(s, sf::EDGE_FC1_W),
                            &vector(s, sf::EDGE_FC1_B),
                            &matrix(s, sf::EDGE_FC2_W),
                            &vector(s, sf::EDGE_FC2_B),
                            true,
                        );
                        for k in 0..f {
                            sum[k] += g[k];
                        }
                    }
                }
                perceptron(
                    &sum,
                    &matrix(s, sf::THETA_FC1_W),
                    &vector(s, sf::THETA_FC1_B),
                    &matrix(s, sf::THETA_FC2_W),
                    &vector(s, sf::THETA_FC2_B),
                    true,
                )
            })
            .collect();
        let mut p = vec![vec![0.0; n]; n];
        for i in 0..n {
            let support: Vec<usize> = (0..n).filter(|&j| j == i || b[i][j] != 0.0).collect();
            let scores: Vec<f64> = support
                .iter()
                .map(|&j| (0..f).map(|k| o[i][k] * o[j][k]).sum())
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|v| (v - max).exp()).sum();
            for (&j, v) in support.iter().zip(&scores) {
                p[i][j] = (v - max).exp() / z;
            }
        }
        p_all.push(p);
    }
    let embed = matrix(s, model::EMBED);
    let mut h: Vec<Mat> = vec![embed; slots];
    for l in 1..=inst.cfg.layers {
        let w = s.get(&model::layer_weight(l)).unwrap();
        let w_slices: Vec<Mat> = (0..slots)
            .map(|t| {
                (0..f)
                    .map(|r| (0..f).map(|c| w.get(r, c, t)).collect())
                    .collect()
            })
            .collect();
        let (ph, hh, wh) = (
            to_domain(&p_all, dct),
            to_domain(&h, dct),
            to_domain(&w_slices, dct),
        );
        let z: Vec<Mat> = (0..slots)
            .map(|t| matmul(&matmul(&ph[t], &hh[t]), &wh[t]))
            .collect();
        h = from_domain(&z, dct);
        if l < inst.cfg.layers {
            for m in &mut h {
                for row in m.iter_mut() {
                    for v in row.iter_mut() {
                        *v = relu(*v);
                    }
                }
            }
        }
    }
    let probs = inst
        .pairs
        .iter()
        .map(|p| {
            let x: Vec<f64> = h[p.t][p.i].iter().chain(&h[p.t][p.j]).copied().collect();
            let logit = perceptron(
                &x,
                &matrix(s, model::DEC_FC1_W),
                &vector(s, model::DEC_FC1_B),
                &matrix(s, model::DEC_FC2_W),
                &vector(s, model::DEC_FC2_B),
                true,
            )[0];
            1.0 / (1.0 + (-logit).exp())
        })
        .collect();
    (h, probs)
}

/// Largest absolute deviation between the model and the naive reference
/// over the final embeddings and decoder outputs.
pub fn forward_deviation(seed: u64, transform: TransformKind) -> f64 {
    let inst = instance(seed, transform);
    let b = compute_overlap_tensor(&inst.graph, inst.hops).unwrap();
    let m = Model::new(
        inst.cfg,
        &b,
        make_transform(transform, inst.cfg.slots).unwrap(),
    )
    .unwrap();
    let mut tape = Tape::new();
    let vars = ParamVars::bind(&mut tape, &inst.store).unwrap();
    let h = m.forward(&mut tape, &vars).unwrap();
    let probs = m.decode(&mut tape, &vars, h, &inst.pairs).unwrap();
    let (h_ref, probs_ref) = oracle(&inst);
    let h = tape.value(h);
    let mut worst = 0.0f64;
    for (t, slice) in h_ref.iter().enumerate() {
        for (i, row) in slice.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                worst = worst.max((h.get(i, k, t) - v).abs());
            }
        }
    }
    for (a, b) in tape.value(probs).data().iter().zip(&probs_ref) {
        worst = worst.max((a - b).abs());
    }
    worst
}
