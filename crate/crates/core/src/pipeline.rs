//! Dataset preparation, cached artifacts and end-to-end helpers shared by
//! the command line and the tests.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check, GradCheckReport, ParamStore, Tape, DEFAULT_EPS};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::graph::{
    bin_snapshots, negative_sample, split_edges, BinOptions, DynamicGraph, EdgeList, EdgeSplit,
    IdMap, LabeledPair, LabeledPairSet, Role, SlotEdge, SplitFractions,
};
use crate::model::{init_params, Model, ModelConfig};
use crate::structfeat::{compute_overlap_tensor, Activation, OverlapCache, ParamVars};
use crate::tensor::{make_transform, Tensor3, TransformKind};
use crate::train::{
    build_model, derive_seed, evaluate_pairs, record_loss, Metrics, TrainConfig,
    STREAM_EVAL_NEGATIVES,
};

/// A binned graph with its frozen split and evaluation negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub graph: DynamicGraph,
    pub split: EdgeSplit,
    /// Validation positives followed by their negatives.
    pub val: LabeledPairSet,
    /// Test positives followed by their negatives.
    pub test: LabeledPairSet,
    pub split_seed: u64,
    pub neg_ratio: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrepareOptions {
    pub bin: BinOptions,
    pub fractions: SplitFractions,
    pub seed: u64,
    pub neg_ratio: usize,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        PrepareOptions {
            bin: BinOptions::default(),
            fractions: SplitFractions::default(),
            seed: 0,
            neg_ratio: 1,
        }
    }
}

pub fn prepare_dataset(name: &str, list: &EdgeList, opts: PrepareOptions) -> Result<Dataset> {
    let graph = bin_snapshots(list, opts.bin)?;
    Dataset::from_graph(name, graph, opts.fractions, opts.seed, opts.neg_ratio)
}

fn pair_rows(set: &LabeledPairSet) -> Vec<i64> {
    set.entries
        .iter()
        .flat_map(|p| [p.i as i64, p.j as i64, p.t as i64, p.label as i64])
        .collect()
}

fn pairs_from_rows(role: Role, rows: &[i64]) -> Result<LabeledPairSet> {
    if !rows.len().is_multiple_of(4) {
        return Err(Error::Format("pair record is not n x 4".into()));
    }
    let mut set = LabeledPairSet::new(role);
    for r in rows.chunks_exact(4) {
        if r[..3].iter().any(|&v| v < 0) || !(r[3] == 0 || r[3] == 1) {
            return Err(Error::Format(format!("invalid pair row {r:?}")));
        }
        set.entries.push(LabeledPair {
            i: r[0] as usize,
            j: r[1] as usize,
            t: r[2] as usize,
            label: r[3] as u8,
        });
    }
    Ok(set)
}

fn fnv1a(hash: &mut u64, values: &[i64]) {
    for v in values {
        for b in v.to_le_bytes() {
            *hash ^= b as u64;
            *hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
        }
    }
}

impl Dataset {
    pub fn from_graph(
        name: &str,
        graph: DynamicGraph,
        fractions: SplitFractions,
        seed: u64,
        neg_ratio: usize,
    ) -> Result<Dataset> {
        let split = split_edges(&graph, fractions, seed)?;
        let frozen = |set: &LabeledPairSet, k: u64| -> Result<LabeledPairSet> {
            if set.is_empty() {
                return Ok(set.clone());
            }
            let neg = negative_sample(
                &graph,
                set,
                neg_ratio,
                derive_seed(seed, STREAM_EVAL_NEGATIVES, k),
            )?;
            Ok(set.concat(&neg))
        };
        let val = frozen(&split.val, 1)?;
        let test = frozen(&split.test, 2)?;
        Ok(Dataset {
            name: name.to_string(),
            graph,
            split,
            val,
            test,
            split_seed: seed,
            neg_ratio,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn num_slots(&self) -> usize {
        self.graph.num_slots()
    }

    /// Labeled pairs for `role`. Training negatives are drawn with a fixed
    /// seed derived from `seed`.
    pub fn pairs(&self, role: Role, seed: u64) -> Result<LabeledPairSet> {
        match role {
            Role::Val => Ok(self.val.clone()),
            Role::Test => Ok(self.test.clone()),
            Role::Train => {
                let neg = negative_sample(
                    &self.graph,
                    &self.split.train,
                    self.neg_ratio,
                    derive_seed(seed, STREAM_EVAL_NEGATIVES, 0),
                )?;
                Ok(self.split.train.concat(&neg))
            }
        }
    }

    fn edge_rows(&self) -> (Vec<i64>, Vec<f64>) {
        let mut rows = Vec::with_capacity(self.graph.num_edges() * 3);
        let mut weights = Vec::with_capacity(self.graph.num_edges());
        for t in 0..self.num_slots() {
            for e in self.graph.slot_edges(t) {
                rows.extend([t as i64, e.i as i64, e.j as i64]);
                weights.push(e.weight);
            }
        }
        (rows, weights)
    }

    fn meta(&self) -> Vec<i64> {
        vec![
            self.num_nodes() as i64,
            self.num_slots() as i64,
            self.graph.undirected() as i64,
            self.split_seed as i64,
            self.neg_ratio as i64,
        ]
    }

    /// Content hash of the graph, split and evaluation pairs; checkpoints
    /// record it to detect use with a different dataset.
    pub fn fingerprint(&self) -> u64 {
        let mut h = 0xCBF2_9CE4_8422_2325u64;
        fnv1a(&mut h, &self.meta());
        let (rows, weights) = self.edge_rows();
        fnv1a(&mut h, &rows);
        fnv1a(
            &mut h,
            &weights
                .iter()
                .map(|w| w.to_bits() as i64)
                .collect::<Vec<_>>(),
        );
        for set in [&self.split.train, &self.val, &self.test] {
            fnv1a(&mut h, &pair_rows(set));
        }
        h
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new();
        ck.push_i64("dataset.meta", vec![5], self.meta())?;
        let ids = self.graph.id_map().external_ids().to_vec();
        ck.push_i64("dataset.ids", vec![ids.len() as u64], ids)?;
        let (rows, weights) = self.edge_rows();
        ck.push_i64("dataset.edges", vec![weights.len() as u64, 3], rows)?;
        ck.push_f64("dataset.weights", vec![weights.len() as u64], weights)?;
        for (key, set) in [
            ("dataset.train", &self.split.train),
            ("dataset.val", &self.val),
            ("dataset.test", &self.test),
        ] {
            ck.push_i64(key, vec![set.len() as u64, 4], pair_rows(set))?;
        }
        Ok(ck)
    }

    pub fn from_checkpoint(name: &str, ck: &Checkpoint) -> Result<Dataset> {
        let (_, meta) = ck.i64s("dataset.meta")?;
        if meta.len() != 5 || meta[0] <= 0 || meta[1] <= 0 || meta[4] <= 0 {
            return Err(Error::Format("malformed dataset header".into()));
        }
        let (n, slots) = (meta[0] as usize, meta[1] as usize);
        let id_map = IdMap::from_external(ck.i64s("dataset.ids")?.1.to_vec())?;
        let (_, rows) = ck.i64s("dataset.edges")?;
        let (_, weights) = ck.f64s("dataset.weights")?;
        if rows.len() != weights.len() * 3 {
            return Err(Error::Format("edge and weight records disagree".into()));
        }
        let mut edges = vec![Vec::new(); slots];
        for (r, &w) in rows.chunks_exact(3).zip(weights) {
            if r.iter().any(|&v| v < 0) || r[0] as usize >= slots {
                return Err(Error::Format(format!("invalid edge row {r:?}")));
            }
            edges[r[0] as usize].push(SlotEdge {
                i: r[1] as usize,
                j: r[2] as usize,
                weight: w,
            });
        }
        let graph = DynamicGraph::from_slot_edges(n, meta[2] != 0, edges, id_map)?;
        let train = pairs_from_rows(Role::Train, ck.i64s("dataset.train")?.1)?;
        let val = pairs_from_rows(Role::Val, ck.i64s("dataset.val")?.1)?;
        let test = pairs_from_rows(Role::Test, ck.i64s("dataset.test")?.1)?;
        let mut kept = vec![Vec::new(); slots];
        for p in &train.entries {
            let w = graph
                .slot_edges(p.t)
                .iter()
                .find(|e| (e.i, e.j) == (p.i, p.j))
                .map(|e| e.weight)
                .ok_or_else(|| Error::Format(format!("training pair {p:?} is not an edge")))?;
            kept[p.t].push(SlotEdge {
                i: p.i,
                j: p.j,
                weight: w,
            });
        }
        let masked = graph.with_edges(kept)?;
        let positives = |set: &LabeledPairSet, role| {
            let mut out = LabeledPairSet::new(role);
            out.entries.extend(set.positives().copied());
            out
        };
        let split = EdgeSplit {
            val: positives(&val, Role::Val),
            test: positives(&test, Role::Test),
            train,
            masked,
        };
        for set in [&split.train, &val, &test] {
            set.validate(&graph)?;
        }
        Ok(Dataset {
            name: name.to_string(),
            graph,
            split,
            val,
            test,
            split_seed: meta[3] as u64,
            neg_ratio: meta[4] as usize,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    /// Loads a dataset; its name is the file stem.
    pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
        let path = path.as_ref();
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Dataset::from_checkpoint(&name, &Checkpoint::load(path)?)
    }
}

/// Trained parameters plus the configuration needed to rebuild the model.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub config: TrainConfig,
    pub params: ParamStore,
    pub num_nodes: usize,
    pub slots: usize,
    pub fingerprint: u64,
    pub best_epoch: usize,
}

const PARAM_PREFIX: &str = "param.";

impl TrainedModel {
    pub fn new(config: TrainConfig, params: ParamStore, data: &Dataset, best_epoch: usize) -> Self {
        TrainedModel {
            config,
            params,
            num_nodes: data.num_nodes(),
            slots: data.num_slots(),
            fingerprint: data.fingerprint(),
            best_epoch,
        }
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let c = &self.config;
        let mut ck = Checkpoint::new();
        let meta = vec![
            self.num_nodes as i64,
            self.slots as i64,
            c.dim as i64,
            c.layers as i64,
            c.hops as i64,
            c.transform.code(),
            c.neg_ratio as i64,
            c.seed as i64,
            c.max_epochs as i64,
            c.patience as i64,
            self.best_epoch as i64,
            self.fingerprint as i64,
        ];
        ck.push_i64("model.meta", vec![meta.len() as u64], meta)?;
        ck.push_f64(
            "model.hyper",
            vec![3],
            vec![c.learning_rate, c.beta, c.threshold],
        )?;
        for (name, p) in self.params.iter() {
            ck.push_tensor(format!("{PARAM_PREFIX}{name}"), &p.value)?;
        }
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<TrainedModel> {
        let (_, m) = ck.i64s("model.meta")?;
        let (_, h) = ck.f64s("model.hyper")?;
        if m.len() != 12 || h.len() != 3 || m[..11].iter().any(|&v| v < 0) {
            return Err(Error::Format("malformed model header".into()));
        }
        let transform = TransformKind::from_code(m[5])
            .ok_or_else(|| Error::Format(format!("unknown transform code {}", m[5])))?;
        let config = TrainConfig {
            learning_rate: h[0],
            beta: h[1],
            threshold: h[2],
            dim: m[2] as usize,
            layers: m[3] as usize,
            hops: m[4] as usize,
            transform,
            neg_ratio: m[6] as usize,
            seed: m[7] as u64,
            max_epochs: m[8] as usize,
            patience: m[9] as usize,
        };
        let mut params = ParamStore::new();
        for r in ck.records() {
            if let Some(name) = r.name.strip_prefix(PARAM_PREFIX) {
                params.insert(name, ck.tensor(&r.name)?);
            }
        }
        Ok(TrainedModel {
            config,
            params,
            num_nodes: m[0] as usize,
            slots: m[1] as usize,
            best_epoch: m[10] as usize,
            fingerprint: m[11] as u64,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TrainedModel> {
        TrainedModel::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Fails with [`Error::Mismatch`] unless the model was trained on `data`.
    pub fn check_dataset(&self, data: &Dataset) -> Result<()> {
        if self.num_nodes != data.num_nodes() || self.slots != data.num_slots() {
            return Err(Error::Mismatch(format!(
                "model expects {} nodes x {} slots, dataset has {} x {}",
                self.num_nodes,
                self.slots,
                data.num_nodes(),
                data.num_slots()
            )));
        }
        if self.fingerprint != data.fingerprint() {
            return Err(Error::Mismatch(format!(
                "dataset {} differs from the training dataset",
                data.name
            )));
        }
        Ok(())
    }

    pub fn evaluate(&self, data: &Dataset, role: Role) -> Result<Metrics> {
        self.check_dataset(data)?;
        let model = build_model(data, &self.config, &mut OverlapCache::new())?;
        for (name, p) in init_params(model.config(), 0)?.iter() {
            let have = self
                .params
                .get(name)
                .map_err(|_| Error::Mismatch(format!("checkpoint lacks parameter {name}")))?;
            if have.dims() != p.value.dims() {
                return Err(Error::Mismatch(format!(
                    "parameter {name} has dims {:?}",
                    have.dims()
                )));
            }
        }
        let pairs = data.pairs(role, self.config.seed)?;
        evaluate_pairs(&model, &self.params, &pairs, self.config.threshold)
    }
}

/// Gradient check of the complete loss on a tiny random instance
/// (`N = 6`, `F = 4`, `T = 3`, `K = 2`, `L = 2`) with small random biases.
/// `fault` perturbs the sigmoid backward rule.
pub fn gradcheck_tiny(transform: TransformKind, seed: u64, fault: bool) -> Result<GradCheckReport> {
    let (n, f, slots) = (6, 4, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::with_capacity(slots);
    for t in 0..slots {
        let mut slot = vec![SlotEdge {
            i: t,
            j: t + 1,
            weight: 1.0,
        }];
        for i in 0..n {
            for j in i + 1..n {
                if (i, j) != (t, t + 1) && rng.gen::<f64>() < 0.35 {
                    slot.push(SlotEdge { i, j, weight: 1.0 });
                }
            }
        }
        edges.push(slot);
    }
    let ids = IdMap::from_external((0..n as i64).collect())?;
    let graph = DynamicGraph::from_slot_edges(n, true, edges, ids)?;
    let b = compute_overlap_tensor(&graph, 2)?;
    let cfg = ModelConfig {
        num_nodes: n,
        slots,
        dim: f,
        layers: 2,
        transform,
        activation: Activation::Relu,
    };
    let model = Model::new(cfg, &b, make_transform(transform, slots)?)?;
    let mut store = init_params(&cfg, seed)?;
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names.iter().filter(|n| n.ends_with(".bias")) {
        let v = store.value_mut(name)?;
        let d = v.dims();
        *v = Tensor3::from_fn(d, |_, _, _| rng.gen_range(-0.1..0.1));
    }
    let mut pairs = Vec::new();
    for t in 0..slots {
        for _ in 0..3 {
            let i = rng.gen_range(0..n);
            let j = (i + rng.gen_range(1..n)) % n;
            let label = graph.has_edge(t, i, j) as u8;
            pairs.push(LabeledPair { i, j, t, label });
        }
    }
    let labels = Arc::new(pairs.iter().map(|p| p.label as f64).collect::<Vec<_>>());
    grad_check(&store, DEFAULT_EPS, |s, tape: &mut Tape| {
        if fault {
            tape.inject_sigmoid_fault();
        }
        let vars = ParamVars::bind(tape, s)?;
        let h = model.forward(tape, &vars)?;
        let probs = model.decode(tape, &vars, h, &pairs)?;
        record_loss(tape, probs, labels.clone(), &vars, 0.01)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::PlantedPartition;

    fn small() -> Dataset {
        let pp = PlantedPartition {
            nodes: 20,
            slots: 4,
            p_in: 0.4,
            ..PlantedPartition::default()
        };
        Dataset::from_graph(
            "small",
            pp.generate(5).unwrap(),
            SplitFractions::default(),
            9,
            1,
        )
        .unwrap()
    }

    #[test]
    fn tiny_gradcheck_passes_in_both_modes() {
        for kind in [TransformKind::Identity, TransformKind::Dct2] {
            let r = gradcheck_tiny(kind, 0, false).unwrap();
            assert!(r.max_rel_error <= 1e-4, "{kind}: {r:?}");
        }
    }

    #[test]
    fn tiny_gradcheck_detects_fault() {
        let r = gradcheck_tiny(TransformKind::Identity, 0, true).unwrap();
        assert!(r.max_rel_error > 1e-4, "{r:?}");
    }

    #[test]
    fn evaluation_sets_hold_positives_then_negatives() {
        let d = small();
        assert_eq!(d.val.len(), 2 * d.split.val.len());
        assert_eq!(
            d.val.labels().iter().sum::<f64>() as usize,
            d.split.val.len()
        );
        for p in d
            .val
            .entries
            .iter()
            .chain(&d.test.entries)
            .filter(|p| p.label == 0)
        {
            assert!(!d.graph.has_edge(p.t, p.i, p.j));
        }
    }

    #[test]
    fn dataset_round_trips_through_checkpoint() {
        let d = small();
        let back = Dataset::from_checkpoint(
            "small",
            &Checkpoint::from_bytes(&d.to_checkpoint().unwrap().to_bytes()).unwrap(),
        )
        .unwrap();
        assert_eq!(back, d);
        assert_eq!(back.fingerprint(), d.fingerprint());
    }

    #[test]
    fn model_checkpoint_rejects_other_dataset() {
        let d = small();
        let cfg = TrainConfig {
            dim: 4,
            ..TrainConfig::default()
        };
        let params = init_params(&cfg.model_config(d.num_nodes(), d.num_slots()), 1).unwrap();
        let m = TrainedModel::new(cfg, params, &d, 0);
        let back = TrainedModel::from_checkpoint(&m.to_checkpoint().unwrap()).unwrap();
        assert_eq!(back.config, m.config);
        back.evaluate(&d, Role::Test).unwrap();
        let other = Dataset::from_graph("other", d.graph.clone(), SplitFractions::default(), 10, 1)
            .unwrap();
        assert!(matches!(
            back.evaluate(&other, Role::Test),
            Err(Error::Mismatch(_))
        ));
    }
}
