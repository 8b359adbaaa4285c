//! Node encoders: instance category + invocation order, log text, metric windows.
//!
//! Log text is encoded as a mean of hashed token embeddings and metric windows
//! as a learned projection of seven shape statistics over the z-normalized
//! window. Both are deterministic and trainable end to end.

use std::collections::BTreeMap;
use std::hash::Hasher;

use fnv::FnvHasher;
use ndarray::{Array1, ArrayView1};

use crate::error::{Error, Result};
use crate::graph::{InstanceNode, LogNode, MetricNode};
use crate::tape::Mat;

/// Number of statistics in a metric window summary.
pub const SUMMARY_LEN: usize = 7;
/// Token-table row used when an instance printed no tokens.
pub const NO_LOG_BUCKET: usize = 0;
pub const DEFAULT_BUCKETS: usize = 4096;
pub const DEFAULT_N_BASE: f64 = 20000.0;
const STD_FLOOR: f64 = 1e-8;

/// Borrowed view of the encoder tensors.
#[derive(Debug, Clone, Copy)]
pub struct EncoderParams<'a> {
    /// Category embedding `[categories × d]`; `None` when the category layer is ablated.
    pub theta_e: Option<&'a Mat>,
    /// Hashed-token embeddings `[buckets × d]`.
    pub token_table: &'a Mat,
    /// `[SUMMARY_LEN × d]`.
    pub metric_proj: &'a Mat,
    pub n_base: f64,
}

impl EncoderParams<'_> {
    pub fn dim(&self) -> usize {
        self.token_table.ncols()
    }

    pub fn buckets(&self) -> usize {
        self.token_table.nrows()
    }
}

/// Sinusoidal code of invocation order `k`: `sin(k / n^(i/d))` on even `i`,
/// `cos(k / n^(i/d))` on odd `i`.
pub fn positional_encoding(k: usize, d: usize, n_base: f64) -> Vec<f64> {
    (0..d)
        .map(|i| {
            let angle = k as f64 / n_base.powf(i as f64 / d as f64);
            if i % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

/// Lowercased alphanumeric runs.
pub fn tokenize(message: &str) -> impl Iterator<Item = String> + '_ {
    message
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

/// Token bucket in `1..buckets`; bucket 0 stays reserved for empty logs.
pub fn token_bucket(token: &str, buckets: usize) -> usize {
    assert!(buckets >= 2, "need at least one bucket besides the reserved one");
    1 + (fnv1a64(token.as_bytes()) % (buckets as u64 - 1)) as usize
}

/// Bucket weights whose weighted sum of token-table rows is the log embedding.
pub fn log_bucket_weights(node: &LogNode, buckets: usize) -> Vec<(usize, f64)> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut total = 0usize;
    for msg in &node.messages {
        for tok in tokenize(msg) {
            *counts.entry(token_bucket(&tok, buckets)).or_default() += 1;
            total += 1;
        }
    }
    if total == 0 {
        return vec![(NO_LOG_BUCKET, 1.0)];
    }
    counts
        .into_iter()
        .map(|(b, c)| (b, c as f64 / total as f64))
        .collect()
}

/// `[last, mean, std, min, max, trend slope, max |Δ|]` of the z-normalized window.
pub fn metric_summary(series: &[f64]) -> Result<[f64; SUMMARY_LEN]> {
    if series.is_empty() {
        return Err(Error::EmptySeries);
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let z: Vec<f64> = if std < STD_FLOOR {
        vec![0.0; series.len()]
    } else {
        series.iter().map(|x| (x - mean) / std).collect()
    };

    let z_mean = z.iter().sum::<f64>() / n;
    let z_std = (z.iter().map(|x| (x - z_mean).powi(2)).sum::<f64>() / n).sqrt();
    let z_min = z.iter().copied().fold(f64::INFINITY, f64::min);
    let z_max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let t_mean = (n - 1.0) / 2.0;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, v) in z.iter().enumerate() {
        let dt = t as f64 - t_mean;
        sxy += dt * (v - z_mean);
        sxx += dt * dt;
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let max_step = z
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .fold(0.0, f64::max);

    Ok([z[z.len() - 1], z_mean, z_std, z_min, z_max, slope, max_step])
}

fn row_plus(row: ArrayView1<f64>, extra: &[f64]) -> Array1<f64> {
    &row + &ArrayView1::from(extra)
}

pub fn encode_instance(node: &InstanceNode, p: &EncoderParams) -> Array1<f64> {
    let pe = positional_encoding(node.order_k, p.dim(), p.n_base);
    match p.theta_e {
        Some(theta) => row_plus(theta.row(node.category.index()), &pe),
        None => Array1::from(pe),
    }
}

pub fn encode_log(node: &LogNode, p: &EncoderParams) -> Array1<f64> {
    let mut out = Array1::zeros(p.dim());
    for (b, w) in log_bucket_weights(node, p.buckets()) {
        out.scaled_add(w, &p.token_table.row(b));
    }
    out
}

pub fn encode_metric(node: &MetricNode, p: &EncoderParams) -> Result<Array1<f64>> {
    let summary = metric_summary(&node.series)?;
    Ok(ArrayView1::from(&summary[..]).dot(p.metric_proj))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::InstanceCategory;
    use proptest::prelude::*;

    const D: usize = 16;

    struct Owned {
        theta: Mat,
        table: Mat,
        proj: Mat,
    }

    impl Owned {
        fn new(fill: f64) -> Self {
            Owned {
                theta: Mat::from_shape_fn((InstanceCategory::COUNT, D), |(r, c)| (r * D + c) as f64 * fill),
                table: Mat::from_shape_fn((64, D), |(r, c)| ((r * 7 + c * 3) % 11) as f64 - 5.0),
                proj: Mat::from_shape_fn((SUMMARY_LEN, D), |(r, c)| if r == c { 1.0 } else { 0.0 }),
            }
        }

        fn view(&self) -> EncoderParams<'_> {
            EncoderParams {
                theta_e: Some(&self.theta),
                token_table: &self.table,
                metric_proj: &self.proj,
                n_base: DEFAULT_N_BASE,
            }
        }
    }

    fn instance(k: usize, category: InstanceCategory) -> InstanceNode {
        InstanceNode {
            id: format!("i{k}"),
            category,
            order_k: k,
            start_ts: 0.0,
        }
    }

    fn log(messages: &[&str]) -> LogNode {
        LogNode {
            instance: 0,
            messages: messages.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn metric(series: Vec<f64>) -> MetricNode {
        MetricNode {
            instance: 0,
            metric_name: "cpu".into(),
            interval_s: 1.0,
            series,
        }
    }

    #[test]
    fn positional_values() {
        let p0 = positional_encoding(0, 8, DEFAULT_N_BASE);
        for (i, v) in p0.iter().enumerate() {
            assert_eq!(*v, if i % 2 == 0 { 0.0 } else { 1.0 });
        }
        assert!((positional_encoding(1, 128, 20000.0)[0] - 0.841471).abs() < 1e-6);
        assert!((positional_encoding(2, 128, 20000.0)[0] - 0.909297).abs() < 1e-6);
    }

    #[test]
    fn positional_codes_distinct_for_small_orders() {
        let codes: Vec<_> = (0..=64).map(|k| positional_encoding(k, 128, DEFAULT_N_BASE)).collect();
        for a in 0..codes.len() {
            for b in a + 1..codes.len() {
                let gap = codes[a]
                    .iter()
                    .zip(&codes[b])
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max);
                assert!(gap > 1e-9, "k={a} and k={b} collide");
            }
        }
    }

    #[test]
    fn instance_encoding() {
        let mut params = Owned::new(0.0);
        let e = encode_instance(&instance(3, InstanceCategory::Gateway), &params.view());
        assert_eq!(e.to_vec(), positional_encoding(3, D, DEFAULT_N_BASE));

        let a = encode_instance(&instance(0, InstanceCategory::Message), &params.view());
        let b = encode_instance(&instance(0, InstanceCategory::Message), &params.view());
        assert_eq!(a, b);

        params = Owned::new(0.5);
        let c = InstanceCategory::Database;
        let e = encode_instance(&instance(2, c), &params.view());
        let pe = positional_encoding(2, D, DEFAULT_N_BASE);
        for i in 0..D {
            assert_eq!(e[i], params.theta[[c.index(), i]] + pe[i]);
        }
    }

    #[test]
    fn log_encoding() {
        let mut params = Owned::new(0.0);
        assert_eq!(encode_log(&log(&[]), &params.view()), params.table.row(0).to_owned());
        assert_eq!(encode_log(&log(&["", "!!"]), &params.view()), params.table.row(0).to_owned());

        let a = encode_log(&log(&["Disk full: write failed", "retry"]), &params.view());
        let b = encode_log(&log(&["retry FAILED", "write, full disk"]), &params.view());
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }

        params.table.fill(1.0);
        let one = encode_log(&log(&["timeout"]), &params.view());
        assert!(one.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn token_hash_is_fnv1a() {
        // published FNV-1a 64 test vectors
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
        for tok in ["error", "a", "x9"] {
            let b = token_bucket(tok, DEFAULT_BUCKETS);
            assert!((1..DEFAULT_BUCKETS).contains(&b));
        }
    }

    #[test]
    fn metric_encoding_degenerate_windows() {
        let params = Owned::new(0.0);
        for series in [vec![4.2; 10], vec![-3.0]] {
            assert_eq!(metric_summary(&series).unwrap(), [0.0; SUMMARY_LEN]);
            let out = encode_metric(&metric(series), &params.view()).unwrap();
            assert!(out.iter().all(|&v| v == 0.0));
        }
        assert!(matches!(metric_summary(&[]), Err(Error::EmptySeries)));
    }

    #[test]
    fn metric_encoding_last_value_zscore() {
        let params = Owned::new(0.0);
        let out = encode_metric(&metric(vec![0.0, 0.0, 0.0, 0.0, 10.0]), &params.view()).unwrap();
        assert!((out[0] - 2.0).abs() < 1e-12);
        let s = metric_summary(&[0.0, 0.0, 0.0, 0.0, 10.0]).unwrap();
        assert!((s[2] - 1.0).abs() < 1e-12);
        assert!((s[3] + 0.5).abs() < 1e-12);
        assert!((s[6] - 2.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn positional_in_unit_interval(k in 0usize..100_000, d in 1usize..64) {
            for v in positional_encoding(k, d, DEFAULT_N_BASE) {
                prop_assert!((-1.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn metric_affine_invariance(
            series in proptest::collection::vec(-100.0f64..100.0, 2..40),
            a in 0.01f64..50.0,
            b in -1000.0f64..1000.0,
        ) {
            let spread = series.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                - series.iter().copied().fold(f64::INFINITY, f64::min);
            prop_assume!(spread > 1e-3);
            let base = metric_summary(&series).unwrap();
            let moved: Vec<f64> = series.iter().map(|x| a * x + b).collect();
            let shifted = metric_summary(&moved).unwrap();
            for (x, y) in base.iter().zip(&shifted) {
                prop_assert!((x - y).abs() < 1e-9, "{x} vs {y}");
            }
        }

        #[test]
        fn log_linear_in_table(scale in -3.0f64..3.0) {
            let params = Owned::new(0.0);
            let node = log(&["GET /api/users 200", "cache miss"]);
            let base = encode_log(&node, &params.view());
            let scaled_table = &params.table * scale;
            let view = EncoderParams { token_table: &scaled_table, ..params.view() };
            let scaled = encode_log(&node, &view);
            for (x, y) in base.iter().zip(scaled.iter()) {
                prop_assert!((x * scale - y).abs() < 1e-9);
            }
        }
    }
}
