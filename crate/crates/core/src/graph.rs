//! The heterogeneous invocation graph: instance nodes joined by invocation
//! edges, with metric and log data nodes attached to their instance.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use petgraph::algo::toposort;
use petgraph::graph::DiGraph;

use crate::error::{Error, Result};
use crate::trace::{InstanceCategory, TraceBundle};

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceNode {
    pub id: String,
    pub category: InstanceCategory,
    /// Temporal invocation order inside the trace; equals the node index.
    pub order_k: usize,
    pub start_ts: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricNode {
    pub instance: usize,
    pub metric_name: String,
    pub interval_s: f64,
    /// Gap-free series; `series.len()` is the window length.
    pub series: Vec<f64>,
}

impl MetricNode {
    pub fn window_len(&self) -> usize {
        self.series.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogNode {
    pub instance: usize,
    pub messages: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InvocationEdge {
    pub caller: usize,
    pub callee: usize,
    /// Kept for inspection only; all downstream math treats both kinds alike.
    pub is_async: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataNode {
    Metric(usize),
    Log(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Attachment {
    pub data: DataNode,
    pub instance: usize,
}

/// Immutable once built. Instance `i` has `order_k == i` and log node `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct InvocationGraph {
    pub trace_id: String,
    pub instances: Vec<InstanceNode>,
    pub metrics: Vec<MetricNode>,
    pub logs: Vec<LogNode>,
    pub invocation_edges: Vec<InvocationEdge>,
    pub attachment_edges: Vec<Attachment>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
}

impl InvocationGraph {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Callers of `v`, ascending by index.
    pub fn parents(&self, v: usize) -> &[usize] {
        &self.parents[v]
    }

    /// Callees of `v`, ascending by index.
    pub fn children(&self, v: usize) -> &[usize] {
        &self.children[v]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.instances.iter().position(|n| n.id == id)
    }

    /// Metric nodes attached to instance `v`, in graph order.
    pub fn metrics_of(&self, v: usize) -> impl Iterator<Item = (usize, &MetricNode)> {
        self.metrics
            .iter()
            .enumerate()
            .filter(move |(_, m)| m.instance == v)
    }

    fn check_index(&self, v: usize) -> Result<()> {
        if v < self.len() {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                index: v,
                len: self.len(),
            })
        }
    }

    /// Every node with a directed path to `v`, excluding `v`.
    pub fn ancestors(&self, v: usize) -> Result<BTreeSet<usize>> {
        self.check_index(v)?;
        Ok(reach(&self.parents, v))
    }

    /// Every node reachable from `v`, excluding `v`.
    pub fn descendants(&self, v: usize) -> Result<BTreeSet<usize>> {
        self.check_index(v)?;
        Ok(reach(&self.children, v))
    }

    /// Shortest hop count from `v` to every node reachable from it (including `v` at 0).
    pub fn hops_from(&self, v: usize) -> Result<BTreeMap<usize, usize>> {
        self.check_index(v)?;
        let mut dist = BTreeMap::from([(v, 0usize)]);
        let mut queue = VecDeque::from([v]);
        while let Some(u) = queue.pop_front() {
            let d = dist[&u];
            for &c in &self.children[u] {
                dist.entry(c).or_insert_with(|| {
                    queue.push_back(c);
                    d + 1
                });
            }
        }
        Ok(dist)
    }

    /// Instance subgraph rebuilt from explicit edges; used by tests and the
    /// synthetic generator.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyTrace);
        }
        let instances = (0..n)
            .map(|k| InstanceNode {
                id: format!("n{k:03}"),
                category: InstanceCategory::ALL[k % InstanceCategory::COUNT],
                order_k: k,
                start_ts: k as f64,
            })
            .collect();
        let edges = edges
            .iter()
            .map(|&(caller, callee)| InvocationEdge {
                caller,
                callee,
                is_async: false,
            })
            .collect();
        assemble(String::new(), instances, edges, Vec::new(), None)
    }
}

fn reach(adj: &[Vec<usize>], v: usize) -> BTreeSet<usize> {
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::from([v]);
    while let Some(u) = queue.pop_front() {
        for &w in &adj[u] {
            if w != v && seen.insert(w) {
                queue.push_back(w);
            }
        }
    }
    seen
}

/// Last observation carried forward, then zeros for a leading gap.
pub fn impute(values: &[Option<f64>]) -> Vec<f64> {
    let mut last = None;
    values
        .iter()
        .map(|v| match v.filter(|x| x.is_finite()) {
            Some(x) => {
                last = Some(x);
                x
            }
            None => last.unwrap_or(0.0),
        })
        .collect()
}

/// Assemble the invocation graph of one trace.
///
/// Repeated records of one instance collapse into a single node keeping the
/// earliest start. `order_k` follows `(start_ts, id)`.
pub fn build_invocation_graph(bundle: &TraceBundle) -> Result<InvocationGraph> {
    if bundle.instances.is_empty() {
        return Err(Error::EmptyTrace);
    }

    let mut earliest: HashMap<&str, (f64, InstanceCategory)> = HashMap::new();
    for rec in &bundle.instances {
        earliest
            .entry(rec.id.as_str())
            .and_modify(|e| {
                if rec.start_ts < e.0 {
                    *e = (rec.start_ts, rec.category);
                }
            })
            .or_insert((rec.start_ts, rec.category));
    }
    let mut ordered: Vec<(&str, f64, InstanceCategory)> =
        earliest.into_iter().map(|(id, (ts, c))| (id, ts, c)).collect();
    ordered.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));

    let index: HashMap<&str, usize> = ordered
        .iter()
        .enumerate()
        .map(|(k, (id, _, _))| (*id, k))
        .collect();
    let lookup = |id: &str| {
        index
            .get(id)
            .copied()
            .ok_or_else(|| Error::DanglingReference(id.to_string()))
    };

    let mut edges = Vec::with_capacity(bundle.edges.len());
    let mut seen_pairs = BTreeSet::new();
    for e in &bundle.edges {
        let caller = lookup(&e.src)?;
        let callee = lookup(&e.dst)?;
        if seen_pairs.insert((caller, callee)) {
            edges.push(InvocationEdge {
                caller,
                callee,
                is_async: e.is_async,
            });
        }
    }

    let instances = ordered
        .iter()
        .enumerate()
        .map(|(k, (id, ts, c))| InstanceNode {
            id: id.to_string(),
            category: *c,
            order_k: k,
            start_ts: *ts,
        })
        .collect();

    let mut metrics = Vec::with_capacity(bundle.metrics.len());
    for m in &bundle.metrics {
        let instance = lookup(&m.instance_id)?;
        if m.values.is_empty() {
            return Err(Error::EmptySeries);
        }
        metrics.push(MetricNode {
            instance,
            metric_name: m.metric_name.clone(),
            interval_s: m.interval_s,
            series: impute(&m.values),
        });
    }

    let mut messages: Vec<Vec<String>> = vec![Vec::new(); ordered.len()];
    for l in &bundle.logs {
        let instance = lookup(&l.instance_id)?;
        messages[instance].extend(l.messages.iter().cloned());
    }

    assemble(
        bundle.trace_id.clone(),
        instances,
        edges,
        metrics,
        Some(messages),
    )
}

fn assemble(
    trace_id: String,
    instances: Vec<InstanceNode>,
    invocation_edges: Vec<InvocationEdge>,
    metrics: Vec<MetricNode>,
    messages: Option<Vec<Vec<String>>>,
) -> Result<InvocationGraph> {
    let n = instances.len();
    let mut dag: DiGraph<(), ()> = DiGraph::with_capacity(n, invocation_edges.len());
    let nodes: Vec<_> = (0..n).map(|_| dag.add_node(())).collect();
    let mut parents = vec![Vec::new(); n];
    let mut children = vec![Vec::new(); n];
    for e in &invocation_edges {
        if e.caller >= n || e.callee >= n {
            return Err(Error::IndexOutOfRange {
                index: e.caller.max(e.callee),
                len: n,
            });
        }
        dag.add_edge(nodes[e.caller], nodes[e.callee], ());
        parents[e.callee].push(e.caller);
        children[e.caller].push(e.callee);
    }
    if let Err(cycle) = toposort(&dag, None) {
        let at = cycle.node_id().index();
        return Err(Error::CycleDetected(instances[at].id.clone()));
    }
    for list in parents.iter_mut().chain(children.iter_mut()) {
        list.sort_unstable();
        list.dedup();
    }

    let messages = messages.unwrap_or_else(|| vec![Vec::new(); n]);
    let logs: Vec<LogNode> = messages
        .into_iter()
        .enumerate()
        .map(|(instance, messages)| LogNode { instance, messages })
        .collect();
    let attachment_edges = metrics
        .iter()
        .enumerate()
        .map(|(i, m)| Attachment {
            data: DataNode::Metric(i),
            instance: m.instance,
        })
        .chain((0..n).map(|i| Attachment {
            data: DataNode::Log(i),
            instance: i,
        }))
        .collect();

    Ok(InvocationGraph {
        trace_id,
        instances,
        metrics,
        logs,
        invocation_edges,
        attachment_edges,
        parents,
        children,
    })
}
