//! Synthetic traces with injected faults whose ground truth is known.
//!
//! Each trace is a random DAG over service instances. A faulty trace picks a
//! root cause uniformly; its metric windows end with a spike of
//! `signal_strength` standard deviations, and every descendant `h` hops away
//! sees `signal_strength · decay^h`. Ancestors are never touched. The root
//! cause logs error lines; affected descendants log an upstream warning with
//! probability `decay^h`, and any other instance logs a stray error with
//! probability `log_noise`.

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::InvocationGraph;
use crate::trace::{
    EdgeRecord, InstanceCategory, InstanceRecord, LabeledTrace, LogRecord, MetricRecord, TraceBundle, TraceLabel,
};

pub const FAULT_TYPES: [&str; 4] = ["cpu_exhaustion", "memory_leak", "network_delay", "disk_pressure"];

const BASE_TS: f64 = 1_700_000_000.0;
const TRACE_SPACING_S: f64 = 20.0;
const METRIC_INTERVAL_S: f64 = 10.0;
const MAX_FAULT_LEAD_S: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopologyMode {
    /// One topology shared by every trace.
    Static,
    /// A fresh topology and instance subset per trace.
    Dynamic,
}

impl FromStr for TopologyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(TopologyMode::Static),
            "dynamic" => Ok(TopologyMode::Dynamic),
            _ => Err(Error::InvalidConfig(format!("topology_mode must be static or dynamic, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_traces: usize,
    pub instances_range: (usize, usize),
    pub metric_names: Vec<String>,
    pub window_len: usize,
    pub fault_rate: f64,
    pub signal_strength: f64,
    pub propagation_decay: f64,
    pub topology_mode: TopologyMode,
    pub seed: u64,
    /// Probability that an unaffected instance logs a stray error line.
    pub log_noise: f64,
    /// Trailing samples carrying the injected deviation.
    pub fault_span: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_traces: 300,
            instances_range: (8, 15),
            metric_names: vec!["cpu".into(), "memory".into(), "latency".into()],
            window_len: 48,
            fault_rate: 0.7,
            signal_strength: 6.0,
            propagation_decay: 0.5,
            topology_mode: TopologyMode::Static,
            seed: 7,
            log_noise: 0.05,
            fault_span: 3,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let (lo, hi) = self.instances_range;
        if lo < 2 || hi < lo {
            return bad(format!("instances_range must satisfy 2 <= min <= max, got ({lo}, {hi})"));
        }
        if self.metric_names.is_empty() {
            return bad("metric_names must not be empty".into());
        }
        if self.window_len < 2 {
            return bad(format!("window_len must be at least 2, got {}", self.window_len));
        }
        if !(0.0..=1.0).contains(&self.fault_rate) {
            return bad(format!("fault_rate must lie in [0, 1], got {}", self.fault_rate));
        }
        if !(self.signal_strength.is_finite() && self.signal_strength >= 0.0) {
            return bad(format!("signal_strength must be non-negative, got {}", self.signal_strength));
        }
        if !(0.0..=1.0).contains(&self.propagation_decay) {
            return bad(format!("propagation_decay must lie in [0, 1], got {}", self.propagation_decay));
        }
        if !(0.0..=1.0).contains(&self.log_noise) {
            return bad(format!("log_noise must lie in [0, 1], got {}", self.log_noise));
        }
        if self.fault_span == 0 || self.fault_span > self.window_len {
            return bad(format!("fault_span must lie in [1, window_len], got {}", self.fault_span));
        }
        Ok(())
    }
}

/// Edges over positions `0..n` in topological order.
fn random_dag(rng: &mut ChaCha8Rng, n: usize) -> Vec<(usize, usize)> {
    let p = (2.0 / (n - 1) as f64).min(1.0);
    let mut edges = Vec::new();
    for dst in 1..n {
        let before = edges.len();
        for src in 0..dst {
            if rng.random_bool(p) {
                edges.push((src, dst));
            }
        }
        if edges.len() == before {
            edges.push((rng.random_range(0..dst), dst));
        }
    }
    edges
}

struct Topology {
    /// Pool index of the service at each topological position.
    services: Vec<usize>,
    edges: Vec<(usize, usize)>,
}

fn sample_topology(rng: &mut ChaCha8Rng, cfg: &SynthConfig, pool: usize) -> Topology {
    let (lo, hi) = cfg.instances_range;
    let n = rng.random_range(lo..=hi);
    let mut services: Vec<usize> = (0..pool).collect();
    services.shuffle(rng);
    services.truncate(n);
    Topology {
        services,
        edges: random_dag(rng, n),
    }
}

fn service_id(s: usize) -> String {
    format!("svc-{s:02}")
}

fn info_lines(rng: &mut ChaCha8Rng, id: &str) -> Vec<String> {
    let count = rng.random_range(1..=2);
    (0..count)
        .map(|_| match rng.random_range(0..3) {
            0 => format!("GET /api/{id}/items 200 in {} ms", rng.random_range(3..40)),
            1 => format!("cache hit ratio {:.2} on {id}", rng.random_range(0.6..0.99)),
            _ => format!("handled request batch of {} on {id}", rng.random_range(1..64)),
        })
        .collect()
}

fn generate_trace(cfg: &SynthConfig, index: usize, topo: &Topology) -> LabeledTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    let trace_id = format!("trace-{index:05}");
    let trace_ts = BASE_TS + index as f64 * TRACE_SPACING_S;

    let ids: Vec<String> = topo.services.iter().map(|&s| service_id(s)).collect();
    let n = ids.len();
    let instances = topo
        .services
        .iter()
        .enumerate()
        .map(|(k, &s)| InstanceRecord {
            id: ids[k].clone(),
            category: InstanceCategory::ALL[s % InstanceCategory::COUNT],
            start_ts: trace_ts + 0.01 * k as f64,
        })
        .collect();
    let edges = topo
        .edges
        .iter()
        .map(|&(a, b)| EdgeRecord {
            src: ids[a].clone(),
            dst: ids[b].clone(),
            is_async: rng.random_bool(0.2),
        })
        .collect();

    let faulty = rng.random_bool(cfg.fault_rate);
    let mut hops: BTreeMap<usize, usize> = BTreeMap::new();
    let mut label = TraceLabel::normal(trace_id.clone());
    if faulty {
        let root = rng.random_range(0..n);
        let g = InvocationGraph::from_edges(n, &topo.edges).expect("generated edges form a DAG");
        hops = g.hops_from(root).expect("root in range");
        let fault = *FAULT_TYPES.choose(&mut rng).expect("non-empty");
        label = TraceLabel {
            trace_id: trace_id.clone(),
            is_anomalous: true,
            root_cause: Some(ids[root].clone()),
            fault_type: Some(fault.to_string()),
            fault_ts: Some(trace_ts - rng.random_range(0.0..MAX_FAULT_LEAD_S)),
        };
    }

    let mut metrics = Vec::with_capacity(n * cfg.metric_names.len());
    for (k, id) in ids.iter().enumerate() {
        for (m, name) in cfg.metric_names.iter().enumerate() {
            let mean = 50.0 + 25.0 * m as f64 + rng.random_range(-5.0..5.0);
            let mut values: Vec<f64> = (0..cfg.window_len)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    mean + z
                })
                .collect();
            if let Some(&h) = hops.get(&k) {
                let shift = cfg.signal_strength * cfg.propagation_decay.powi(h as i32);
                for v in values.iter_mut().skip(cfg.window_len - cfg.fault_span) {
                    *v += shift;
                }
            }
            metrics.push(MetricRecord {
                instance_id: id.clone(),
                metric_name: name.clone(),
                interval_s: METRIC_INTERVAL_S,
                values: values.into_iter().map(Some).collect(),
            });
        }
    }

    let fault = label.fault_type.clone().unwrap_or_default();
    let logs = ids
        .iter()
        .enumerate()
        .map(|(k, id)| {
            let mut messages = info_lines(&mut rng, id);
            match hops.get(&k) {
                Some(0) => {
                    messages.push(format!("ERROR {fault} detected on {id}: request handler failed"));
                    messages.push(format!("exception while serving request on {id}: timeout"));
                }
                Some(&h) => {
                    if rng.random_bool(cfg.propagation_decay.powi(h as i32)) {
                        messages.push(format!("WARN upstream call from {id} failed, retrying"));
                    }
                }
                None => {
                    if rng.random_bool(cfg.log_noise) {
                        messages.push(format!("ERROR transient failure on {id}, recovered"));
                    }
                }
            }
            LogRecord {
                instance_id: id.clone(),
                messages,
            }
        })
        .collect();

    LabeledTrace {
        bundle: TraceBundle {
            trace_id,
            instances,
            edges,
            metrics,
            logs,
        },
        label,
    }
}

/// Traces in timestamp order. Deterministic in `cfg`; each trace draws from
/// its own random stream so traces can be produced independently.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Vec<LabeledTrace>> {
    cfg.validate()?;
    let pool = match cfg.topology_mode {
        TopologyMode::Static => cfg.instances_range.1,
        TopologyMode::Dynamic => 2 * cfg.instances_range.1,
    };
    let mut topo_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let shared = sample_topology(&mut topo_rng, cfg, pool);
    Ok((0..cfg.num_traces)
        .map(|i| match cfg.topology_mode {
            TopologyMode::Static => generate_trace(cfg, i, &shared),
            TopologyMode::Dynamic => {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(u64::MAX - i as u64);
                generate_trace(cfg, i, &sample_topology(&mut rng, cfg, pool))
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_invocation_graph;

    fn cfg() -> SynthConfig {
        SynthConfig {
            num_traces: 40,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_and_acyclic() {
        let a = generate_synthetic(&cfg()).unwrap();
        assert_eq!(a, generate_synthetic(&cfg()).unwrap());
        for t in &a {
            let g = build_invocation_graph(&t.bundle).unwrap();
            assert!((8..=15).contains(&g.len()));
            // start order follows topological order
            for e in &g.invocation_edges {
                assert!(e.caller < e.callee);
            }
        }
    }

    #[test]
    fn static_topology_is_shared_dynamic_is_not() {
        let shape = |t: &LabeledTrace| {
            let ids: Vec<_> = t.bundle.instances.iter().map(|i| i.id.clone()).collect();
            let edges: Vec<_> = t.bundle.edges.iter().map(|e| (e.src.clone(), e.dst.clone())).collect();
            (ids, edges)
        };
        let s = generate_synthetic(&cfg()).unwrap();
        assert!(s.iter().all(|t| shape(t) == shape(&s[0])));
        let d = generate_synthetic(&SynthConfig {
            topology_mode: TopologyMode::Dynamic,
            ..cfg()
        })
        .unwrap();
        let distinct: std::collections::BTreeSet<_> = d.iter().map(shape).collect();
        assert!(distinct.len() > 30);
    }

    #[test]
    fn no_faults_without_fault_rate() {
        let t = generate_synthetic(&SynthConfig {
            fault_rate: 0.0,
            ..cfg()
        })
        .unwrap();
        assert!(t.iter().all(|x| !x.label.is_anomalous && x.label.root_cause.is_none()));
    }

    #[test]
    fn faults_reach_descendants_only() {
        let c = SynthConfig {
            fault_rate: 1.0,
            signal_strength: 50.0,
            propagation_decay: 0.5,
            ..cfg()
        };
        for t in generate_synthetic(&c).unwrap() {
            let g = build_invocation_graph(&t.bundle).unwrap();
            let root = g.index_of(t.label.root_cause.as_deref().unwrap()).unwrap();
            let desc = g.descendants(root).unwrap();
            for (i, _) in g.instances.iter().enumerate() {
                let tail_shift = g
                    .metrics_of(i)
                    .map(|(_, m)| {
                        let w = m.series.len();
                        let head: f64 = m.series[..w - 3].iter().sum::<f64>() / (w - 3) as f64;
                        m.series[w - 1] - head
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
                if i == root || desc.contains(&i) {
                    assert!(tail_shift > 3.0);
                } else {
                    assert!(tail_shift < 6.0, "unaffected instance shows a large spike");
                }
            }
            assert!(t.label.fault_ts.unwrap() <= t.bundle.start_ts());
        }
    }

    #[test]
    fn invalid_configs() {
        for c in [
            SynthConfig { instances_range: (1, 4), ..cfg() },
            SynthConfig { instances_range: (5, 4), ..cfg() },
            SynthConfig { fault_rate: 1.5, ..cfg() },
            SynthConfig { signal_strength: -1.0, ..cfg() },
            SynthConfig { metric_names: vec![], ..cfg() },
        ] {
            assert!(matches!(generate_synthetic(&c), Err(Error::InvalidConfig(_))));
        }
    }
}
