use nohgnn::graph::SplitFractions;
use nohgnn::pipeline::Dataset;
use nohgnn::structfeat::OverlapCache;
use nohgnn::synthetic::PlantedPartition;
use nohgnn::train::{build_model, evaluate_pairs, train_loop, TrainConfig};

fn planted() -> Dataset {
    let g = PlantedPartition::default().generate(0).unwrap();
    Dataset::from_graph("planted", g, SplitFractions::default(), 0, 1).unwrap()
}

#[test]
fn smoothed_loss_is_non_increasing_early() {
    let data = planted();
    let cfg = TrainConfig {
        max_epochs: 20,
        patience: 20,
        ..TrainConfig::default()
    };
    let out = train_loop(&data, &cfg).unwrap();
    assert_eq!(out.history.len(), 20);
    let loss: Vec<f64> = out.history.iter().map(|h| h.loss).collect();
    let smooth: Vec<f64> = loss
        .windows(5)
        .map(|w| w.iter().sum::<f64>() / 5.0)
        .collect();
    for w in smooth.windows(2) {
        assert!(w[1] <= w[0], "smoothed loss rose: {smooth:?}");
    }
}

#[test]
fn best_parameters_reproduce_best_validation_score() {
    let data = planted();
    let cfg = TrainConfig {
        dim: 8,
        max_epochs: 40,
        patience: 5,
        ..TrainConfig::default()
    };
    let out = train_loop(&data, &cfg).unwrap();
    let best = &out.history[out.best_epoch - 1];
    assert_eq!(best.epoch, out.best_epoch);
    assert!(out.history.iter().all(|h| h.val_f1 <= best.val_f1));
    assert!(out.stopped_at == cfg.max_epochs || out.stopped_at == out.best_epoch + cfg.patience);
    let model = build_model(&data, &cfg, &mut OverlapCache::new()).unwrap();
    let val = evaluate_pairs(&model, &out.params, &data.val, cfg.threshold).unwrap();
    assert_eq!(val.f1, best.val_f1);
    assert_eq!(val, out.val);
}

#[test]
fn repeated_runs_are_identical() {
    let data = planted();
    let cfg = TrainConfig {
        dim: 8,
        max_epochs: 8,
        transform: nohgnn::tensor::TransformKind::Dct2,
        ..TrainConfig::default()
    };
    let a = train_loop(&data, &cfg).unwrap();
    let b = train_loop(&data, &cfg).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.test, b.test);
    for ((na, pa), (nb, pb)) in a.params.iter().zip(b.params.iter()) {
        assert_eq!(na, nb);
        assert_eq!(pa.value, pb.value);
    }
}
