//! Seeded, stratified train/validation/test partition.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::trace::LabeledTrace;

/// Largest-remainder apportionment of `total` items by `weights` (summing to 1).
/// Ties in the fractional part go to the earlier slot.
pub fn split_counts(total: usize, weights: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Partition into `(train, validation, test)`. Each part keeps the input
/// order; the anomalous share of every non-empty part is as close to the
/// overall share as whole counts allow.
pub fn split_dataset(
    traces: &[LabeledTrace],
    ratios: [f64; 3],
    seed: u64,
) -> Result<(Vec<LabeledTrace>, Vec<LabeledTrace>, Vec<LabeledTrace>)> {
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidConfig(format!(
            "split ratios must be non-negative and sum to 1, got {ratios:?}"
        )));
    }
    let sum: f64 = ratios.iter().sum();
    let weights: Vec<f64> = ratios.iter().map(|r| r / sum).collect();
    let sizes = split_counts(traces.len(), &weights);
    for (i, (&n, &r)) in sizes.iter().zip(&ratios).enumerate() {
        if r > 0.0 && n == 0 {
            let name = ["train", "validation", "test"][i];
            return Err(Error::InsufficientData(format!(
                "{} traces leave the {name} split empty",
                traces.len()
            )));
        }
    }

    let mut anomalous: Vec<usize> = (0..traces.len()).filter(|&i| traces[i].label.is_anomalous).collect();
    let mut normal: Vec<usize> = (0..traces.len()).filter(|&i| !traces[i].label.is_anomalous).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    anomalous.shuffle(&mut rng);
    normal.shuffle(&mut rng);

    let size_weights: Vec<f64> = sizes.iter().map(|&s| s as f64 / traces.len().max(1) as f64).collect();
    let mut anom_counts = split_counts(anomalous.len(), &size_weights);
    // A part can't hold more anomalous traces than its size; move any excess on.
    for i in 0..3 {
        if anom_counts[i] > sizes[i] {
            let extra = anom_counts[i] - sizes[i];
            anom_counts[i] = sizes[i];
            let j = (0..3).find(|&j| anom_counts[j] < sizes[j]).expect("total fits");
            anom_counts[j] += extra;
        }
    }

    let mut parts: [Vec<usize>; 3] = Default::default();
    let (mut a, mut n) = (0, 0);
    for i in 0..3 {
        parts[i].extend_from_slice(&anomalous[a..a + anom_counts[i]]);
        a += anom_counts[i];
        let normals = sizes[i] - anom_counts[i];
        parts[i].extend_from_slice(&normal[n..n + normals]);
        n += normals;
    }
    let [train, val, test] = parts.map(|mut idx| {
        idx.sort_unstable();
        idx.into_iter().map(|i| traces[i].clone()).collect::<Vec<_>>()
    });
    Ok((train, val, test))
}
