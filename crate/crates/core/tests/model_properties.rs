use std::collections::BTreeMap;

use chase_core::data::{generate_synthetic, SynthConfig, TopologyMode};
use chase_core::model::{Ablation, Model, TrainConfig};
use chase_core::train::{rca_loss, trace_gradients};
use proptest::prelude::*;

fn small_config(heads: usize, ablation: Ablation) -> TrainConfig {
    TrainConfig {
        dim: 4 * heads,
        heads,
        buckets: 32,
        ablation,
        ..TrainConfig::default()
    }
}

fn ablation() -> impl Strategy<Value = Ablation> {
    prop_oneof![Just(Ablation::None), Just(Ablation::V1), Just(Ablation::V2), Just(Ablation::V3)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn attention_sums_to_one_per_instance_and_head(
        seed in 0u64..1000,
        heads in 1usize..4,
        n in 2usize..9,
        abl in ablation(),
    ) {
        let synth = SynthConfig {
            num_traces: 1,
            instances_range: (n, n),
            window_len: 8,
            topology_mode: TopologyMode::Dynamic,
            seed,
            ..SynthConfig::default()
        };
        let trace = generate_synthetic(&synth).unwrap().remove(0);
        let mut cfg = small_config(heads, abl);
        cfg.seed = seed;
        let model = Model::new(cfg, synth.metric_names.clone()).unwrap();
        let prep = model.prepare(&trace.bundle, None).unwrap();
        let mut sums: BTreeMap<(usize, usize, String), f64> = BTreeMap::new();
        for r in model.attention_rows(&prep).unwrap() {
            prop_assert!(r.weight >= 0.0);
            *sums.entry((r.layer, r.head, r.instance_id)).or_default() += r.weight;
        }
        prop_assert_eq!(sums.len(), model.config.attn_layers * heads * n);
        for s in sums.values() {
            prop_assert!((s - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn loss_ignores_instance_order(
        logits in proptest::collection::vec(-20.0f64..20.0, 2..10),
        pick in any::<prop::sample::Index>(),
        rot in any::<prop::sample::Index>(),
    ) {
        let t = pick.index(logits.len());
        let r = rot.index(logits.len());
        let mut rotated = logits.clone();
        rotated.rotate_left(r);
        let t2 = (t + logits.len() - r) % logits.len();
        let a = rca_loss(&[logits], &[Some(t)]).unwrap();
        let b = rca_loss(&[rotated], &[Some(t2)]).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn absent_metric_groups_get_zero_gradient() {
    let synth = SynthConfig {
        num_traces: 1,
        instances_range: (4, 4),
        window_len: 8,
        fault_rate: 1.0,
        ..SynthConfig::default()
    };
    let trace = generate_synthetic(&synth).unwrap().remove(0);
    let mut names = synth.metric_names.clone();
    names.push("disk".into());
    let model = Model::new(small_config(2, Ablation::None), names).unwrap();
    let prep = model.prepare(&trace.bundle, trace.label.usable_root_cause()).unwrap();
    let (_, grads) = trace_gradients(&model, &prep, 1.0).unwrap();
    for (name, g) in &grads {
        let zero = g.iter().all(|&v| v == 0.0);
        let absent = name.contains("metric.disk") || name.contains("metric.<unknown>");
        assert_eq!(zero, absent, "{name}");
    }
}
