//! Full-batch training: cross-entropy with weight decay, Adam, F1/accuracy
//! and validation-F1 early stopping.

mod adam;
mod metrics;
mod stopping;

use std::sync::Arc;

use log::debug;
use serde::{Deserialize, Serialize};

pub use adam::{Adam, BETA1, BETA2, EPSILON};
pub use metrics::{compute_loss, evaluate, f1_score, Metrics};
pub use stopping::{run_schedule, Decision, EarlyStopping, ScheduleOutcome};

use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{negative_sample, LabeledPairSet};
use crate::model::{init_params, Model, ModelConfig};
use crate::pipeline::Dataset;
use crate::structfeat::{Activation, OverlapCache, ParamVars};
use crate::tensor::{make_transform, TransformKind};

pub const LEARNING_RATE_GRID: [f64; 6] = [0.1, 0.01, 0.02, 0.05, 0.001, 0.002];
pub const BETA_GRID: [f64; 4] = [0.01, 0.005, 0.001, 0.0005];

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub hops: usize,
    pub layers: usize,
    pub dim: usize,
    pub transform: TransformKind,
    pub seed: u64,
    pub neg_ratio: usize,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            beta: 0.001,
            max_epochs: 300,
            patience: 10,
            hops: 2,
            layers: 2,
            dim: 32,
            transform: TransformKind::Identity,
            seed: 0,
            neg_ratio: 1,
            threshold: 0.5,
        }
    }
}

fn bad(key: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        msg: msg.into(),
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(bad(
                "lr",
                format!("must be positive, got {}", self.learning_rate),
            ));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(bad(
                "beta",
                format!("must be non-negative, got {}", self.beta),
            ));
        }
        if self.max_epochs == 0 {
            return Err(bad("epochs", "must be at least 1"));
        }
        if self.patience == 0 {
            return Err(bad("patience", "must be at least 1"));
        }
        if !(1..=3).contains(&self.hops) {
            return Err(bad(
                "k_hops",
                format!("must be 1, 2 or 3, got {}", self.hops),
            ));
        }
        if self.layers == 0 {
            return Err(bad("layers", "must be at least 1"));
        }
        if self.dim == 0 {
            return Err(bad("dim", "must be at least 1"));
        }
        if self.neg_ratio == 0 {
            return Err(bad("neg_ratio", "must be at least 1"));
        }
        if self.transform == TransformKind::Custom {
            return Err(bad("transform", "custom transforms are not configurable"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(bad("threshold", "must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn model_config(&self, num_nodes: usize, slots: usize) -> ModelConfig {
        ModelConfig {
            num_nodes,
            slots,
            dim: self.dim,
            layers: self.layers,
            transform: self.transform,
            activation: Activation::Relu,
        }
    }
}

/// One line of the per-epoch metric log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub val_f1: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best-validation epoch.
    pub params: ParamStore,
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
    pub stopped_at: usize,
    pub val: Metrics,
    pub test: Metrics,
}

/// Derives an independent stream seed from `(seed, stream, index)`.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) const STREAM_TRAIN_NEGATIVES: u64 = 1;
pub(crate) const STREAM_EVAL_NEGATIVES: u64 = 2;

/// Records `BCE + beta * sum ||theta||^2` over every bound parameter.
pub fn record_loss(
    tape: &mut Tape,
    probs: Var,
    labels: Arc<Vec<f64>>,
    params: &ParamVars,
    beta: f64,
) -> Result<Var> {
    let bce = tape.bce(probs, labels)?;
    if beta == 0.0 {
        return Ok(bce);
    }
    let mut reg: Option<Var> = None;
    for (_, v) in params.iter() {
        let sq = tape.mul(v, v)?;
        let s = tape.sum(sq);
        reg = Some(match reg {
            None => s,
            Some(r) => tape.add(r, s)?,
        });
    }
    match reg {
        None => Ok(bce),
        Some(r) => {
            let r = tape.scale(r, beta);
            tape.add(bce, r)
        }
    }
}

/// Link probabilities for `pairs` under `store`.
pub fn predict(model: &Model, store: &ParamStore, pairs: &LabeledPairSet) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let vars = ParamVars::bind(&mut tape, store)?;
    let h = model.forward(&mut tape, &vars)?;
    let probs = model.decode(&mut tape, &vars, h, &pairs.entries)?;
    Ok(tape.value(probs).data().to_vec())
}

pub fn evaluate_pairs(
    model: &Model,
    store: &ParamStore,
    pairs: &LabeledPairSet,
    threshold: f64,
) -> Result<Metrics> {
    let probs = predict(model, store, pairs)?;
    evaluate(&probs, &pairs.labels(), threshold)
}

/// Builds the model for `data` under `cfg`, reusing `cache` for `B`.
pub fn build_model(data: &Dataset, cfg: &TrainConfig, cache: &mut OverlapCache) -> Result<Model> {
    let g = &data.split.masked;
    let b = cache.get_or_compute(&data.name, cfg.hops, data.split_seed, g)?;
    let tf = make_transform(cfg.transform, g.num_slots())?;
    Model::new(cfg.model_config(g.num_nodes(), g.num_slots()), &b, tf)
}

/// Training pairs for one epoch: every training positive plus freshly
/// drawn negatives.
pub fn epoch_pairs(data: &Dataset, ratio: usize, seed: u64) -> Result<LabeledPairSet> {
    let neg = negative_sample(&data.graph, &data.split.train, ratio, seed)?;
    Ok(data.split.train.concat(&neg))
}

pub fn train_loop(data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_loop_cached(data, cfg, &mut OverlapCache::new())
}

/// Full-batch training with early stopping on validation F1.
pub fn train_loop_cached(
    data: &Dataset,
    cfg: &TrainConfig,
    cache: &mut OverlapCache,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.split.train.is_empty() {
        return Err(Error::param("training set is empty"));
    }
    if data.val.is_empty() || data.test.is_empty() {
        return Err(Error::param("validation and test sets must be non-empty"));
    }
    let model = build_model(data, cfg, cache)?;
    let mut store = init_params(model.config(), cfg.seed)?;
    let mut best_store = store.clone();
    let mut adam = Adam::new(cfg.learning_rate);
    let mut stopper = EarlyStopping::new(cfg.patience, cfg.max_epochs);
    let mut history = Vec::new();
    let mut stopped_at = 0;
    for epoch in 1..=cfg.max_epochs {
        let seed = derive_seed(cfg.seed, STREAM_TRAIN_NEGATIVES, epoch as u64);
        let pairs = epoch_pairs(data, cfg.neg_ratio, seed)?;
        let mut tape = Tape::new();
        let vars = ParamVars::bind(&mut tape, &store)?;
        let h = model.forward(&mut tape, &vars)?;
        let probs = model.decode(&mut tape, &vars, h, &pairs.entries)?;
        let loss = record_loss(&mut tape, probs, Arc::new(pairs.labels()), &vars, cfg.beta)?;
        let loss_value = tape.scalar(loss)?;
        if !loss_value.is_finite() {
            return Err(Error::Numeric(format!("loss diverged at epoch {epoch}")));
        }
        store.zero_grads();
        tape.backward(loss, &mut store)?;
        drop(tape);
        adam.step(&mut store)?;
        let val = evaluate_pairs(&model, &store, &data.val, cfg.threshold)?;
        history.push(EpochLog {
            epoch,
            loss: loss_value,
            val_f1: val.f1,
            val_acc: val.accuracy,
        });
        debug!("epoch {epoch}: loss {loss_value:.6} val f1 {:.4}", val.f1);
        stopped_at = epoch;
        let decision = stopper.observe(epoch, val.f1);
        let (improved, stop) = match decision {
            Decision::Continue { improved } => (improved, false),
            Decision::Stop { improved } => (improved, true),
        };
        if improved {
            best_store = store.clone();
        }
        if stop {
            break;
        }
    }
    let best_epoch = stopper.best().map(|b| b.0).unwrap_or(0);
    let val = evaluate_pairs(&model, &best_store, &data.val, cfg.threshold)?;
    let test = evaluate_pairs(&model, &best_store, &data.test, cfg.threshold)?;
    Ok(TrainOutcome {
        params: best_store,
        history,
        best_epoch,
        stopped_at,
        val,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn invalid_values_name_their_key() {
        let mut c = TrainConfig::default();
        c.learning_rate = 0.0;
        assert!(matches!(c.validate(), Err(Error::Config { key, .. }) if key == "lr"));
        let mut c = TrainConfig::default();
        c.hops = 4;
        assert!(matches!(c.validate(), Err(Error::Config { key, .. }) if key == "k_hops"));
        let mut c = TrainConfig::default();
        c.beta = -1.0;
        assert!(matches!(c.validate(), Err(Error::Config { key, .. }) if key == "beta"));
        let mut c = TrainConfig::default();
        c.patience = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(1, STREAM_TRAIN_NEGATIVES, 1);
        assert_ne!(a, derive_seed(1, STREAM_TRAIN_NEGATIVES, 2));
        assert_ne!(a, derive_seed(2, STREAM_TRAIN_NEGATIVES, 1));
        assert_eq!(a, derive_seed(1, STREAM_TRAIN_NEGATIVES, 1));
    }
}
