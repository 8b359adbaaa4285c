//! Ranking metrics: top-k accuracy, its five-point average, and the share of
//! traces flagged anomalous shortly after a fault.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::Serialize;

use crate::encoders::tokenize;
use crate::error::{Error, Result};
use crate::graph::build_invocation_graph;
use crate::trace::{TraceBundle, TraceLabel};

/// Instances of one trace ranked by root-cause likelihood.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedDiagnosis {
    pub trace_id: String,
    /// Instance ids, most likely root cause first.
    pub ranking: Vec<String>,
    /// Score of each ranked instance, aligned with `ranking`.
    pub scores: Vec<f64>,
    pub is_anomalous: bool,
}

impl RankedDiagnosis {
    /// Sort `(id, score)` pairs by score descending, ties by id.
    pub fn from_scores(
        trace_id: impl Into<String>,
        mut scored: Vec<(String, f64)>,
        is_anomalous: bool,
    ) -> Self {
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let (ranking, scores) = scored.into_iter().unzip();
        RankedDiagnosis {
            trace_id: trace_id.into(),
            ranking,
            scores,
            is_anomalous,
        }
    }

    /// 1-based position of `id`, if ranked.
    pub fn rank_of(&self, id: &str) -> Option<usize> {
        self.ranking.iter().position(|r| r == id).map(|p| p + 1)
    }
}

fn label_index(labels: &[TraceLabel]) -> HashMap<&str, &TraceLabel> {
    labels.iter().map(|l| (l.trace_id.as_str(), l)).collect()
}

/// Rank of the true root cause for every diagnosis whose label carries one.
/// A root cause missing from the ranking counts as never found.
fn truth_ranks(diagnoses: &[RankedDiagnosis], labels: &[TraceLabel]) -> Result<Vec<Option<usize>>> {
    let index = label_index(labels);
    let mut ranks = Vec::new();
    for d in diagnoses {
        let label = index
            .get(d.trace_id.as_str())
            .ok_or_else(|| Error::MissingLabel(d.trace_id.clone()))?;
        if let Some(root) = label.usable_root_cause() {
            ranks.push(d.rank_of(root));
        }
    }
    if ranks.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(ranks)
}

fn top_k_share(ranks: &[Option<usize>], k: usize) -> f64 {
    let hits = ranks.iter().filter(|r| matches!(r, Some(r) if *r <= k)).count();
    hits as f64 / ranks.len() as f64
}

/// Share of labeled anomalous traces whose root cause is in the top `k`.
pub fn accuracy_at_k(diagnoses: &[RankedDiagnosis], labels: &[TraceLabel], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    Ok(top_k_share(&truth_ranks(diagnoses, labels)?, k))
}

/// Mean of A@1 through A@5.
pub fn avg_at_5(diagnoses: &[RankedDiagnosis], labels: &[TraceLabel]) -> Result<f64> {
    let ranks = truth_ranks(diagnoses, labels)?;
    Ok((1..=5).map(|k| top_k_share(&ranks, k)).sum::<f64>() / 5.0)
}

/// Flagged share of traces with timestamp in `[fault_ts, fault_ts + 60·n]`.
pub fn percentage_at_n(flags: &[(f64, bool)], fault_ts: f64, n_minutes: f64) -> Result<f64> {
    let end = fault_ts + 60.0 * n_minutes;
    let (mut inside, mut flagged) = (0usize, 0usize);
    for &(ts, f) in flags {
        if ts >= fault_ts && ts <= end {
            inside += 1;
            flagged += f as usize;
        }
    }
    if inside == 0 {
        return Err(Error::EmptyWindow);
    }
    Ok(flagged as f64 / inside as f64)
}

const ERROR_KEYWORDS: [&str; 10] = [
    "error",
    "exception",
    "fail",
    "failed",
    "failure",
    "timeout",
    "refused",
    "denied",
    "fatal",
    "panic",
];

/// |z| above which the heuristic calls a trace anomalous.
pub const BASELINE_FLAG_Z: f64 = 4.0;
const SCALE_FLOOR: f64 = 1e-9;

/// Robust z-score of the last sample against the rest of the window.
pub fn last_sample_robust_z(series: &[f64]) -> f64 {
    if series.len() < 2 {
        return 0.0;
    }
    let (history, last) = series.split_at(series.len() - 1);
    let med = median(history);
    let deviations: Vec<f64> = history.iter().map(|x| (x - med).abs()).collect();
    let mut scale = 1.4826 * median(&deviations);
    if scale < SCALE_FLOOR {
        let mean = history.iter().sum::<f64>() / history.len() as f64;
        scale = (history.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / history.len() as f64).sqrt();
    }
    ((last[0] - med) / scale.max(SCALE_FLOOR)).abs()
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

pub fn error_keyword_count(messages: &[String]) -> usize {
    messages
        .iter()
        .flat_map(|m| tokenize(m))
        .filter(|t| ERROR_KEYWORDS.contains(&t.as_str()))
        .count()
}

/// Training-free ranking by max robust |z| of the last metric sample, then
/// error-keyword count, then id.
pub fn baseline_rank(bundle: &TraceBundle) -> Result<RankedDiagnosis> {
    let g = build_invocation_graph(bundle)?;
    let mut scored: Vec<(String, f64, usize)> = g
        .instances
        .iter()
        .enumerate()
        .map(|(i, node)| {
            let z = g
                .metrics_of(i)
                .map(|(_, m)| last_sample_robust_z(&m.series))
                .fold(0.0, f64::max);
            (node.id.clone(), z, error_keyword_count(&g.logs[i].messages))
        })
        .collect();
    scored.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| b.2.cmp(&a.2))
            .then_with(|| a.0.cmp(&b.0))
    });
    let is_anomalous = scored.first().is_some_and(|s| s.1 > BASELINE_FLAG_Z);
    Ok(RankedDiagnosis {
        trace_id: bundle.trace_id.clone(),
        ranking: scored.iter().map(|s| s.0.clone()).collect(),
        scores: scored.iter().map(|s| s.1).collect(),
        is_anomalous,
    })
}

/// Per-trace outcome kept in reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub trace_id: String,
    pub timestamp: f64,
    pub is_anomalous: bool,
    pub predicted_anomalous: bool,
    pub root_cause: Option<String>,
    pub top: Vec<String>,
    /// 1-based rank of the true root cause.
    pub truth_rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub a_at_k: BTreeMap<usize, f64>,
    pub avg_at_5: f64,
    /// Keyed by window length in minutes.
    pub percentage_at_n: BTreeMap<u32, f64>,
    pub dataset_size: usize,
    pub anomalous_traces: usize,
    pub records: Vec<TraceRecord>,
}

pub const PERCENTAGE_WINDOWS: [u32; 3] = [1, 3, 5];

/// Percentage@n averaged over every distinct labeled fault timestamp whose
/// window holds at least one trace. `None` when no label has a timestamp.
fn mean_percentage(flags: &[(f64, bool)], fault_times: &BTreeSet<u64>, n: u32) -> Option<f64> {
    let values: Vec<f64> = fault_times
        .iter()
        .filter_map(|bits| percentage_at_n(flags, f64::from_bits(*bits), n as f64).ok())
        .collect();
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// `timestamps[i]` is the trace time of `diagnoses[i]`.
pub fn evaluate(diagnoses: &[RankedDiagnosis], labels: &[TraceLabel], timestamps: &[f64]) -> Result<EvalReport> {
    if diagnoses.len() != timestamps.len() {
        return Err(Error::DimensionMismatch("one timestamp per diagnosis".into()));
    }
    let ranks = truth_ranks(diagnoses, labels)?;
    let a_at_k: BTreeMap<usize, f64> = (1..=5).map(|k| (k, top_k_share(&ranks, k))).collect();
    let avg = a_at_k.values().sum::<f64>() / 5.0;

    let index = label_index(labels);
    let mut records = Vec::with_capacity(diagnoses.len());
    let mut fault_times = BTreeSet::new();
    for (d, &ts) in diagnoses.iter().zip(timestamps) {
        let label = index[d.trace_id.as_str()];
        if let Some(t) = label.fault_ts.filter(|t| t.is_finite()) {
            fault_times.insert(t.to_bits());
        }
        let root = label.usable_root_cause().map(str::to_string);
        records.push(TraceRecord {
            trace_id: d.trace_id.clone(),
            timestamp: ts,
            is_anomalous: label.is_anomalous,
            predicted_anomalous: d.is_anomalous,
            truth_rank: root.as_deref().and_then(|r| d.rank_of(r)),
            root_cause: root,
            top: d.ranking.iter().take(5).cloned().collect(),
        });
    }
    let flags: Vec<(f64, bool)> = records.iter().map(|r| (r.timestamp, r.predicted_anomalous)).collect();
    let percentage_at_n = PERCENTAGE_WINDOWS
        .iter()
        .filter_map(|&n| mean_percentage(&flags, &fault_times, n).map(|p| (n, p)))
        .collect();

    Ok(EvalReport {
        a_at_k,
        avg_at_5: avg,
        percentage_at_n,
        dataset_size: diagnoses.len(),
        anomalous_traces: ranks.len(),
        records,
    })
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "traces evaluated      {}", self.dataset_size);
        let _ = writeln!(s, "with root-cause label {}", self.anomalous_traces);
        for (k, v) in &self.a_at_k {
            let _ = writeln!(s, "A@{k:<20}{v:.4}");
        }
        let _ = writeln!(s, "{:<22}{:.4}", "Avg@5", self.avg_at_5);
        if self.percentage_at_n.is_empty() {
            let _ = writeln!(s, "Percentage@n omitted: no fault timestamps in labels");
        }
        for (n, v) in &self.percentage_at_n {
            let _ = writeln!(s, "{:<22}{v:.4}", format!("Percentage@{n}"));
        }
        s
    }

    /// One JSON object per metric.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        let mut push = |metric: String, value: f64| {
            let rec = serde_json::json!({ "metric": metric, "value": value, "traces": self.dataset_size });
            s.push_str(&rec.to_string());
            s.push('\n');
        };
        for (k, v) in &self.a_at_k {
            push(format!("A@{k}"), *v);
        }
        push("Avg@5".into(), self.avg_at_5);
        for (n, v) in &self.percentage_at_n {
            push(format!("Percentage@{n}"), *v);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{InstanceCategory, InstanceRecord, LogRecord, MetricRecord};

    fn diag(trace: &str, ranking: &[&str]) -> RankedDiagnosis {
        RankedDiagnosis {
            trace_id: trace.into(),
            ranking: ranking.iter().map(|s| s.to_string()).collect(),
            scores: (0..ranking.len()).map(|i| -(i as f64)).collect(),
            is_anomalous: true,
        }
    }

    fn label(trace: &str, root: &str) -> TraceLabel {
        TraceLabel {
            trace_id: trace.into(),
            is_anomalous: true,
            root_cause: Some(root.into()),
            fault_type: None,
            fault_ts: None,
        }
    }

    #[test]
    fn ranks_two_and_four() {
        let d = [diag("t1", &["a", "b", "c", "d", "e"]), diag("t2", &["a", "b", "c", "d", "e"])];
        let l = [label("t1", "b"), label("t2", "d")];
        assert_eq!(accuracy_at_k(&d, &l, 1).unwrap(), 0.0);
        assert_eq!(accuracy_at_k(&d, &l, 3).unwrap(), 0.5);
        assert_eq!(accuracy_at_k(&d, &l, 5).unwrap(), 1.0);
        // A@1..5 = 0, 0.5, 0.5, 1, 1
        assert!((avg_at_5(&d, &l).unwrap() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn single_trace_rank_three() {
        let d = [diag("t", &["x", "y", "z", "w"])];
        let l = [label("t", "z")];
        assert!((avg_at_5(&d, &l).unwrap() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn normal_traces_excluded_and_empty_rejected() {
        let d = [diag("t1", &["a"]), diag("t2", &["a", "b"])];
        let l = [label("t1", "a"), TraceLabel::normal("t2")];
        assert_eq!(accuracy_at_k(&d, &l, 1).unwrap(), 1.0);
        assert!(matches!(
            accuracy_at_k(&d[1..], &l, 1),
            Err(Error::EmptyDataset)
        ));
        assert!(matches!(accuracy_at_k(&d, &l[..1], 1), Err(Error::MissingLabel(_))));
    }

    #[test]
    fn percentage_window_is_closed() {
        let t = 1000.0;
        let mut flags: Vec<(f64, bool)> = (0..10).map(|i| (t + i as f64 * 6.0, i < 2)).collect();
        assert!((percentage_at_n(&flags, t, 1.0).unwrap() - 0.2).abs() < 1e-15);
        flags.push((t + 60.0, true));
        flags.push((t + 61.0, true));
        flags.push((t - 1.0, true));
        assert!((percentage_at_n(&flags, t, 1.0).unwrap() - 3.0 / 11.0).abs() < 1e-15);
        assert!(matches!(percentage_at_n(&flags, 1e6, 1.0), Err(Error::EmptyWindow)));
    }

    #[test]
    fn tie_break_by_id() {
        let d = RankedDiagnosis::from_scores("t", vec![("b".into(), 1.0), ("a".into(), 1.0), ("c".into(), 2.0)], false);
        assert_eq!(d.ranking, vec!["c", "a", "b"]);
    }

    fn bundle(series: &[(&str, Vec<f64>)]) -> TraceBundle {
        TraceBundle {
            trace_id: "t".into(),
            instances: series
                .iter()
                .enumerate()
                .map(|(k, (id, _))| InstanceRecord {
                    id: id.to_string(),
                    category: InstanceCategory::Application,
                    start_ts: k as f64,
                })
                .collect(),
            edges: vec![],
            metrics: series
                .iter()
                .map(|(id, v)| MetricRecord {
                    instance_id: id.to_string(),
                    metric_name: "cpu".into(),
                    interval_s: 1.0,
                    values: v.iter().map(|x| Some(*x)).collect(),
                })
                .collect(),
            logs: vec![],
        }
    }

    #[test]
    fn baseline_cases() {
        let flat = vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.5];
        let mut spike = flat.clone();
        *spike.last_mut().unwrap() = 40.0;
        let b = bundle(&[("a", flat.clone()), ("z", spike), ("m", flat.clone())]);
        let d = baseline_rank(&b).unwrap();
        assert_eq!(d.ranking[0], "z");
        assert!(d.is_anomalous);

        let clean = bundle(&[("c", vec![1.0; 6]), ("a", vec![1.0; 6]), ("b", vec![1.0; 6])]);
        assert_eq!(baseline_rank(&clean).unwrap().ranking, vec!["a", "b", "c"]);

        let mut logged = clean.clone();
        logged.logs.push(LogRecord {
            instance_id: "c".into(),
            messages: vec!["connection refused; request failed".into()],
        });
        assert_eq!(baseline_rank(&logged).unwrap().ranking[0], "c");
    }

    #[test]
    fn report_formats() {
        let d = [diag("t1", &["a", "b"]), diag("t2", &["a", "b"])];
        let mut l = [label("t1", "a"), label("t2", "b")];
        let r = evaluate(&d, &l, &[0.0, 10.0]).unwrap();
        assert!(r.percentage_at_n.is_empty());
        assert!(r.to_table().contains("omitted"));
        assert_eq!(r.a_at_k[&1], 0.5);
        assert_eq!(r.to_jsonl().lines().count(), 6);

        l[0].fault_ts = Some(0.0);
        let r = evaluate(&d, &l, &[0.0, 10.0]).unwrap();
        assert_eq!(r.percentage_at_n[&1], 1.0);
        assert_eq!(r.to_jsonl().lines().count(), 9);
    }
}
