use chase_core::data::{generate_synthetic, split_dataset, SynthConfig};
use chase_core::eval::{accuracy_at_k, evaluate};
use chase_core::model::TrainConfig;
use chase_core::train::{predict, predict_prepared, train};
use chase_core::{Error, LabeledTrace};

fn dataset(n: usize, seed: u64) -> Vec<LabeledTrace> {
    generate_synthetic(&SynthConfig {
        num_traces: n,
        instances_range: (4, 7),
        window_len: 16,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        dim: 16,
        heads: 2,
        buckets: 128,
        epochs,
        batch_size: 8,
        lr: 5e-3,
        ..TrainConfig::default()
    }
}

#[test]
fn learns_small_synthetic_set() {
    let all = dataset(120, 5);
    let (tr, va, te) = split_dataset(&all, [0.6, 0.2, 0.2], 1).unwrap();
    let fit = train(&tr, &va, quick(15)).unwrap();
    let first = fit.history.first().unwrap().train_loss;
    assert!(fit.final_loss().unwrap() < 0.5 * first);
    assert!(fit.history.windows(2).all(|w| w[1].epoch == w[0].epoch + 1));
    assert!(fit.model.anomaly_threshold.is_finite());

    let preds: Vec<_> = te.iter().map(|t| predict(&fit.model, &t.bundle).unwrap()).collect();
    let labels: Vec<_> = te.iter().map(|t| t.label.clone()).collect();
    assert!(accuracy_at_k(&preds, &labels, 1).unwrap() >= 0.8);
    let ts: Vec<f64> = te.iter().map(|t| t.bundle.start_ts()).collect();
    let report = evaluate(&preds, &labels, &ts).unwrap();
    let a: Vec<f64> = report.a_at_k.values().copied().collect();
    assert!(a.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(report.avg_at_5, a.iter().sum::<f64>() / 5.0);
}

#[test]
fn same_seed_same_result() {
    let all = dataset(40, 2);
    let (tr, va, _) = split_dataset(&all, [0.5, 0.25, 0.25], 1).unwrap();
    let a = train(&tr, &va, quick(3)).unwrap();
    let b = train(&tr, &va, quick(3)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn zero_epochs_and_edge_cases() {
    let all = dataset(30, 3);
    let (tr, va, _) = split_dataset(&all, [0.5, 0.25, 0.25], 1).unwrap();
    let fit = train(&tr, &va, quick(0)).unwrap();
    assert!(fit.history.is_empty());
    assert!(fit.model.anomaly_threshold.is_finite());

    let normal: Vec<_> = all.iter().filter(|t| !t.label.is_anomalous).cloned().collect();
    assert!(matches!(train(&normal, &va, quick(1)), Err(Error::EmptyTrainingSet)));

    let mut model = fit.model;
    model.anomaly_threshold = f64::INFINITY;
    for t in &all {
        assert!(!predict(&model, &t.bundle).unwrap().is_anomalous);
    }
}

#[test]
fn single_instance_and_tied_logits() {
    let mut t = dataset(1, 9).remove(0);
    let model = train(&dataset(20, 4), &[], quick(0)).unwrap().model;

    let keep = t.bundle.instances[0].id.clone();
    t.bundle.instances.truncate(1);
    t.bundle.edges.clear();
    t.bundle.metrics.retain(|m| m.instance_id == keep);
    t.bundle.logs.retain(|l| l.instance_id == keep);
    assert_eq!(predict(&model, &t.bundle).unwrap().ranking, vec![keep]);

    // zero head: every logit equal, ranking falls back to id order
    let mut flat = model.clone();
    flat.params.get_mut("head").unwrap().fill(0.0);
    let full = dataset(1, 9).remove(0);
    let prep = flat.prepare(&full.bundle, None).unwrap();
    let ranking = predict_prepared(&flat, &prep).unwrap().ranking;
    let mut sorted = ranking.clone();
    sorted.sort();
    assert_eq!(ranking, sorted);
}
