//! Full model: parameter store, per-trace preprocessing and the differentiable
//! forward pass encoders → attention stack → hypergraph convolution → head.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    attention_layer, bind_layer, neighbor_segments, AttentionLayerParams, KindBlock, KindParams, LayerShape,
};
use crate::encoders::{log_bucket_weights, metric_summary, positional_encoding, EncoderParams, SUMMARY_LEN};
use crate::error::{Error, Result};
use crate::graph::{build_invocation_graph, InvocationGraph};
use crate::hypergraph::{build_causal_hyperedges, normalized_operator, IncidenceMatrix};
use crate::tape::{Mat, RowCombination, Segments, Tape, Var};
use crate::trace::{InstanceCategory, TraceBundle};

/// Parameter group for metric names not seen when the model was built.
pub const UNKNOWN_METRIC: &str = "metric.<unknown>";
pub const LOG_KIND: &str = "log";
/// Single projection group used when heterogeneous message passing is ablated.
pub const SHARED_KIND: &str = "shared";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Ablation {
    #[default]
    #[serde(rename = "none")]
    None,
    /// No learned category embedding; positional code only.
    V1,
    /// One projection group shared by every neighbor kind.
    V2,
    /// Head applied directly to the attention output.
    V3,
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::None => "none",
            Ablation::V1 => "V1",
            Ablation::V2 => "V2",
            Ablation::V3 => "V3",
        })
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Ablation::None),
            "v1" => Ok(Ablation::V1),
            "v2" => Ok(Ablation::V2),
            "v3" => Ok(Ablation::V3),
            _ => Err(Error::InvalidConfig(format!("ablation must be none, V1, V2 or V3, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub attn_layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub gamma: f64,
    pub leaky_slope: f64,
    pub hyper_layers: usize,
    pub n_base: f64,
    pub buckets: usize,
    pub dedup_hyperedges: bool,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            attn_layers: 3,
            heads: 8,
            dim: 128,
            gamma: 0.5,
            leaky_slope: 0.3,
            hyper_layers: 1,
            n_base: crate::encoders::DEFAULT_N_BASE,
            buckets: crate::encoders::DEFAULT_BUCKETS,
            dedup_hyperedges: false,
            lr: 1e-3,
            epochs: 30,
            batch_size: 16,
            seed: 0,
            ablation: Ablation::None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return bad(format!("dim ({}) must be a positive multiple of heads ({})", self.dim, self.heads));
        }
        if self.attn_layers == 0 {
            return bad("attn_layers must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if !self.leaky_slope.is_finite() {
            return bad("leaky_slope must be finite".into());
        }
        if !(self.n_base.is_finite() && self.n_base > 0.0) {
            return bad(format!("n_base must be positive, got {}", self.n_base));
        }
        if self.buckets < 2 {
            return bad(format!("buckets must be at least 2, got {}", self.buckets));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad(format!("lr must be finite and non-negative, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        Ok(())
    }
}

/// Named learnable tensors.
pub type ParamStore = BTreeMap<String, Mat>;

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: TrainConfig,
    /// Metric names with their own parameter group.
    pub metric_names: Vec<String>,
    pub params: ParamStore,
    pub anomaly_threshold: f64,
}

pub fn metric_kind(name: &str) -> String {
    format!("metric.{name}")
}

impl Model {
    /// Fresh parameters drawn from `config.seed`.
    pub fn new(config: TrainConfig, metric_names: impl IntoIterator<Item = String>) -> Result<Self> {
        config.validate()?;
        let metric_names: Vec<String> = metric_names.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let mut model = Model {
            config,
            metric_names,
            params: ParamStore::new(),
            anomaly_threshold: 0.0,
        };
        model.params = model.initial_params();
        Ok(model)
    }

    fn initial_params(&self) -> ParamStore {
        let c = &self.config;
        let d = c.dim;
        let dh = d / c.heads;
        let bound = 1.0 / (d as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let mut uniform = |r: usize, cols: usize| Mat::from_shape_fn((r, cols), |_| rng.random_range(-bound..bound));

        let mut p = ParamStore::new();
        if c.ablation != Ablation::V1 {
            p.insert("enc.theta_e".into(), uniform(InstanceCategory::COUNT, d));
        }
        p.insert("enc.token_table".into(), uniform(c.buckets, d));
        p.insert("enc.metric_proj".into(), uniform(SUMMARY_LEN, d));
        for l in 0..c.attn_layers {
            p.insert(format!("attn.{l}.query"), uniform(d, d));
            for kind in self.kinds() {
                p.insert(format!("attn.{l}.{kind}.key"), uniform(d, d));
                p.insert(format!("attn.{l}.{kind}.value"), uniform(d, d));
                p.insert(format!("attn.{l}.{kind}.a"), uniform(dh, dh));
                p.insert(format!("attn.{l}.{kind}.phi"), Mat::ones((1, 1)));
            }
            let noise = uniform(d, d).mapv(|v| v / bound * 0.01);
            p.insert(format!("attn.{l}.w_hat"), Mat::eye(d) + noise);
        }
        if c.ablation != Ablation::V3 {
            for l in 0..c.hyper_layers {
                p.insert(format!("hyper.{l}.theta"), uniform(d, d));
            }
        }
        p.insert("head".into(), uniform(d, 1));
        p
    }

    /// Neighbor kinds owning projection groups, in parameter order.
    pub fn kinds(&self) -> Vec<String> {
        if self.config.ablation == Ablation::V2 {
            return vec![SHARED_KIND.to_string()];
        }
        let mut kinds = vec![LOG_KIND.to_string()];
        kinds.extend(self.metric_names.iter().map(|m| metric_kind(m)));
        kinds.push(UNKNOWN_METRIC.to_string());
        kinds
    }

    pub fn kind_of_metric(&self, name: &str) -> String {
        if self.config.ablation == Ablation::V2 {
            SHARED_KIND.to_string()
        } else if self.metric_names.binary_search_by(|m| m.as_str().cmp(name)).is_ok() {
            metric_kind(name)
        } else {
            UNKNOWN_METRIC.to_string()
        }
    }

    fn log_kind(&self) -> &'static str {
        if self.config.ablation == Ablation::V2 {
            SHARED_KIND
        } else {
            LOG_KIND
        }
    }

    /// Total number of learnable scalars.
    pub fn num_parameters(&self) -> usize {
        self.params.values().map(Mat::len).sum()
    }

    pub fn param(&self, name: &str) -> Result<&Mat> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))
    }

    pub fn encoder_params(&self) -> Result<EncoderParams<'_>> {
        Ok(EncoderParams {
            theta_e: self.params.get("enc.theta_e"),
            token_table: self.param("enc.token_table")?,
            metric_proj: self.param("enc.metric_proj")?,
            n_base: self.config.n_base,
        })
    }

    pub fn layer_params(&self, l: usize) -> Result<AttentionLayerParams<'_>> {
        let mut kinds = BTreeMap::new();
        for kind in self.kinds() {
            let get = |suffix: &str| self.param(&format!("attn.{l}.{kind}.{suffix}"));
            kinds.insert(
                kind.clone(),
                KindParams {
                    key: get("key")?,
                    value: get("value")?,
                    a: get("a")?,
                    phi: get("phi")?,
                },
            );
        }
        Ok(AttentionLayerParams {
            query: self.param(&format!("attn.{l}.query"))?,
            w_hat: self.param(&format!("attn.{l}.w_hat"))?,
            kinds,
            heads: self.config.heads,
            gamma: self.config.gamma,
            leaky_slope: self.config.leaky_slope,
        })
    }

    fn shape(&self) -> LayerShape {
        LayerShape {
            dim: self.config.dim,
            heads: self.config.heads,
            gamma: self.config.gamma,
            leaky_slope: self.config.leaky_slope,
        }
    }

    /// Everything about a trace that does not depend on parameter values.
    pub fn prepare(&self, bundle: &TraceBundle, root_cause: Option<&str>) -> Result<PreparedTrace> {
        let graph = build_invocation_graph(bundle)?;
        self.prepare_graph(graph, root_cause)
    }

    pub fn prepare_graph(&self, graph: InvocationGraph, root_cause: Option<&str>) -> Result<PreparedTrace> {
        let n = graph.len();
        let d = self.config.dim;
        let target = match root_cause {
            Some(id) => Some(
                graph
                    .index_of(id)
                    .ok_or_else(|| Error::MissingLabel(graph.trace_id.clone()))?,
            ),
            None => None,
        };

        let categories = Arc::new(
            graph
                .instances
                .iter()
                .map(|i| vec![(i.category.index(), 1.0)])
                .collect(),
        );
        let mut positional = Mat::zeros((n, d));
        for (i, node) in graph.instances.iter().enumerate() {
            let pe = positional_encoding(node.order_k, d, self.config.n_base);
            positional.row_mut(i).assign(&ndarray::ArrayView1::from(&pe[..]));
        }
        let log_rows = Arc::new(
            graph
                .logs
                .iter()
                .map(|l| log_bucket_weights(l, self.config.buckets))
                .collect(),
        );

        // One block per kind: the log block first, then metric kinds in name order.
        let mut by_kind: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (m, node) in graph.metrics.iter().enumerate() {
            by_kind.entry(self.kind_of_metric(&node.metric_name)).or_default().push(m);
        }
        let log_kind = self.log_kind();
        let mut blocks = vec![Block {
            kind: log_kind.to_string(),
            logs: (0..n).collect(),
            summaries: Mat::zeros((0, SUMMARY_LEN)),
            metric_owners: Vec::new(),
            neighbor_ids: graph.instances.iter().map(|i| format!("{}/log", i.id)).collect(),
        }];
        for (kind, members) in by_kind {
            let mut summaries = Mat::zeros((members.len(), SUMMARY_LEN));
            let mut owners = Vec::with_capacity(members.len());
            let mut ids = Vec::with_capacity(members.len());
            for (r, &m) in members.iter().enumerate() {
                let node = &graph.metrics[m];
                let s = metric_summary(&node.series)?;
                summaries.row_mut(r).assign(&ndarray::ArrayView1::from(&s[..]));
                owners.push(node.instance);
                ids.push(format!("{}/{}", graph.instances[node.instance].id, node.metric_name));
            }
            if kind == log_kind {
                let block = &mut blocks[0];
                block.summaries = summaries;
                block.metric_owners = owners;
                block.neighbor_ids.extend(ids);
            } else {
                blocks.push(Block {
                    kind,
                    logs: Vec::new(),
                    summaries,
                    metric_owners: owners,
                    neighbor_ids: ids,
                });
            }
        }
        let owners: Vec<Vec<usize>> = blocks.iter().map(Block::owners).collect();
        let owner_refs: Vec<&[usize]> = owners.iter().map(Vec::as_slice).collect();
        let segments = neighbor_segments(&owner_refs, n)?;

        let incidence = build_causal_hyperedges(&graph, self.config.dedup_hyperedges)?;
        let delta = normalized_operator(&incidence)?;

        Ok(PreparedTrace {
            graph,
            categories,
            positional,
            log_rows,
            blocks,
            segments,
            incidence,
            delta,
            target,
        })
    }

    /// Record the forward pass of one trace on `tape`.
    pub fn forward<'p>(&'p self, prep: &PreparedTrace, tape: &mut Tape<'p>) -> Result<Forward> {
        let shape = self.shape();

        let positional = tape.constant(prep.positional.clone());
        let e_inst = match self.params.get("enc.theta_e") {
            Some(theta) => {
                let theta = tape.param("enc.theta_e", theta);
                let rows = tape.combine_rows(theta, prep.categories.clone());
                tape.add(rows, positional)
            }
            None => positional,
        };
        let table = tape.param("enc.token_table", self.param("enc.token_table")?);
        let e_log = tape.combine_rows(table, prep.log_rows.clone());
        let proj = tape.param("enc.metric_proj", self.param("enc.metric_proj")?);

        let n = prep.graph.len();
        let mut blocks = Vec::with_capacity(prep.blocks.len());
        for b in &prep.blocks {
            let mut parts = Vec::new();
            if !b.logs.is_empty() {
                if b.logs.len() == n && b.logs.iter().enumerate().all(|(i, &v)| i == v) {
                    parts.push(e_log);
                } else {
                    let rows = Arc::new(b.logs.iter().map(|&i| vec![(i, 1.0)]).collect());
                    parts.push(tape.combine_rows(e_log, rows));
                }
            }
            if !b.metric_owners.is_empty() {
                let s = tape.constant(b.summaries.clone());
                parts.push(tape.matmul(s, proj));
            }
            let emb = if parts.len() == 1 { parts[0] } else { tape.concat_rows(&parts) };
            blocks.push(KindBlock {
                kind: b.kind.clone(),
                emb,
                owners: b.owners(),
            });
        }

        let mut x = e_inst;
        let mut attention = Vec::with_capacity(self.config.attn_layers);
        for l in 0..self.config.attn_layers {
            let params = self.layer_params(l)?;
            let vars = bind_layer(tape, &format!("attn.{l}"), &params);
            let out = attention_layer(tape, &vars, x, &blocks, &prep.segments, shape)?;
            attention.push(out.weights);
            x = out.out;
        }

        if self.config.ablation != Ablation::V3 {
            let delta = tape.constant(prep.delta.clone());
            for l in 0..self.config.hyper_layers {
                let name = format!("hyper.{l}.theta");
                let theta = tape.param(&name, self.param(&name)?);
                let mixed = tape.matmul(delta, x);
                let lin = tape.matmul(mixed, theta);
                x = tape.leaky_relu(lin, self.config.leaky_slope);
            }
        }

        let head = tape.param("head", self.param("head")?);
        let logits = tape.matmul(x, head);
        Ok(Forward {
            logits,
            attention,
            embeddings: x,
        })
    }

    /// Root-cause logits, one per instance in graph order.
    pub fn logits(&self, prep: &PreparedTrace) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let fwd = self.forward(prep, &mut tape)?;
        Ok(tape.value(fwd.logits).column(0).to_vec())
    }

    /// Attention weights as CSV rows `trace_id,layer,head,instance_id,neighbor_id,weight`.
    pub fn attention_rows(&self, prep: &PreparedTrace) -> Result<Vec<AttentionRecord>> {
        let mut tape = Tape::new();
        let fwd = self.forward(prep, &mut tape)?;
        let mut owners = Vec::new();
        let mut ids = Vec::new();
        for b in &prep.blocks {
            owners.extend(b.owners());
            ids.extend(b.neighbor_ids.iter().cloned());
        }
        let mut out = Vec::new();
        for (layer, &w) in fwd.attention.iter().enumerate() {
            let w = tape.value(w);
            for seg in prep.segments.iter() {
                for &r in seg {
                    for head in 0..self.config.heads {
                        out.push(AttentionRecord {
                            trace_id: prep.graph.trace_id.clone(),
                            layer,
                            head,
                            instance_id: prep.graph.instances[owners[r]].id.clone(),
                            neighbor_id: ids[r].clone(),
                            weight: w[[r, head]],
                        });
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Neighbor rows of one parameter group.
#[derive(Debug, Clone)]
pub struct Block {
    pub kind: String,
    /// Instances whose log node is in this block.
    pub logs: Vec<usize>,
    /// `[metrics × SUMMARY_LEN]` window statistics.
    pub summaries: Mat,
    pub metric_owners: Vec<usize>,
    /// Stable neighbor names for exports, logs first.
    pub neighbor_ids: Vec<String>,
}

impl Block {
    pub fn owners(&self) -> Vec<usize> {
        self.logs.iter().chain(&self.metric_owners).copied().collect()
    }
}

/// Parameter-independent preprocessing of one trace, reusable across epochs.
#[derive(Debug, Clone)]
pub struct PreparedTrace {
    pub graph: InvocationGraph,
    pub categories: RowCombination,
    pub positional: Mat,
    pub log_rows: RowCombination,
    pub blocks: Vec<Block>,
    pub segments: Segments,
    pub incidence: IncidenceMatrix,
    pub delta: Mat,
    /// Root-cause index when the trace is labeled anomalous.
    pub target: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Forward {
    /// `[instances × 1]`.
    pub logits: Var,
    /// Per layer, `[neighbors × heads]` normalized weights.
    pub attention: Vec<Var>,
    /// Final instance embeddings fed to the head.
    pub embeddings: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub trace_id: String,
    pub layer: usize,
    pub head: usize,
    pub instance_id: String,
    pub neighbor_id: String,
    pub weight: f64,
}

pub const ATTENTION_CSV_HEADER: &str = "trace_id,layer,head,instance_id,neighbor_id,weight";

impl AttentionRecord {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.trace_id, self.layer, self.head, self.instance_id, self.neighbor_id, self.weight
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{EdgeRecord, InstanceRecord, LogRecord, MetricRecord};

    pub(crate) fn bundle() -> TraceBundle {
        let ids = ["a", "b", "c"];
        TraceBundle {
            trace_id: "t".into(),
            instances: ids
                .iter()
                .enumerate()
                .map(|(k, id)| InstanceRecord {
                    id: id.to_string(),
                    category: InstanceCategory::ALL[k],
                    start_ts: k as f64,
                })
                .collect(),
            edges: vec![
                EdgeRecord { src: "a".into(), dst: "b".into(), is_async: false },
                EdgeRecord { src: "a".into(), dst: "c".into(), is_async: true },
            ],
            metrics: ids
                .iter()
                .flat_map(|id| {
                    ["cpu", "mem"].map(|m| MetricRecord {
                        instance_id: id.to_string(),
                        metric_name: m.into(),
                        interval_s: 10.0,
                        values: (0..8).map(|t| Some((t * t % 5) as f64 + id.len() as f64)).collect(),
                    })
                })
                .collect(),
            logs: vec![LogRecord {
                instance_id: "b".into(),
                messages: vec!["ERROR timeout calling a".into()],
            }],
        }
    }

    fn small(ablation: Ablation) -> TrainConfig {
        TrainConfig {
            dim: 8,
            heads: 2,
            attn_layers: 2,
            buckets: 32,
            ablation,
            ..TrainConfig::default()
        }
    }

    fn names() -> Vec<String> {
        vec!["cpu".into(), "mem".into()]
    }

    #[test]
    fn ablations_toggle_exactly_their_tensors() {
        let base = Model::new(small(Ablation::None), names()).unwrap();
        let v1 = Model::new(small(Ablation::V1), names()).unwrap();
        let v2 = Model::new(small(Ablation::V2), names()).unwrap();
        let v3 = Model::new(small(Ablation::V3), names()).unwrap();
        let (d, dh, layers) = (8, 4, 2);
        let per_kind = 2 * d * d + dh * dh + 1;
        assert_eq!(base.num_parameters() - v1.num_parameters(), InstanceCategory::COUNT * d);
        assert_eq!(base.num_parameters() - v3.num_parameters(), d * d);
        // log, cpu, mem, unknown → shared
        assert_eq!(base.num_parameters() - v2.num_parameters(), layers * 3 * per_kind);
        assert!(!v3.params.keys().any(|k| k.starts_with("hyper.")));
        assert!(!v1.params.contains_key("enc.theta_e"));
    }

    #[test]
    fn initialization_contract() {
        let m = Model::new(small(Ablation::None), names()).unwrap();
        let bound = 1.0 / 8f64.sqrt();
        for (name, t) in &m.params {
            if name.ends_with(".phi") {
                assert_eq!(t[[0, 0]], 1.0);
            } else if name.ends_with(".w_hat") {
                for ((i, j), v) in t.indexed_iter() {
                    let off = v - if i == j { 1.0 } else { 0.0 };
                    assert!(off.abs() <= 0.01 + 1e-15);
                }
            } else {
                assert!(t.iter().all(|v| v.abs() <= bound), "{name}");
            }
        }
        let again = Model::new(small(Ablation::None), names()).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn forward_shapes_and_attention_normalization() {
        let m = Model::new(small(Ablation::None), names()).unwrap();
        let prep = m.prepare(&bundle(), Some("b")).unwrap();
        assert_eq!(prep.target, Some(1));
        assert_eq!(prep.blocks.len(), 3);
        let logits = m.logits(&prep).unwrap();
        assert_eq!(logits.len(), 3);
        assert!(logits.iter().all(|v| v.is_finite()));

        let rows = m.attention_rows(&prep).unwrap();
        // 3 instances × (1 log + 2 metrics) × 2 heads × 2 layers
        assert_eq!(rows.len(), 3 * 3 * 2 * 2);
        for layer in 0..2 {
            for head in 0..2 {
                for inst in ["a", "b", "c"] {
                    let total: f64 = rows
                        .iter()
                        .filter(|r| r.layer == layer && r.head == head && r.instance_id == inst)
                        .map(|r| r.weight)
                        .sum();
                    assert!((total - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn unknown_metric_uses_reserved_group() {
        let m = Model::new(small(Ablation::None), vec!["cpu".to_string()]).unwrap();
        assert_eq!(m.kind_of_metric("mem"), UNKNOWN_METRIC);
        assert_eq!(m.kind_of_metric("cpu"), "metric.cpu");
        let prep = m.prepare(&bundle(), None).unwrap();
        let kinds: Vec<_> = prep.blocks.iter().map(|b| b.kind.as_str()).collect();
        assert_eq!(kinds, vec!["log", "metric.<unknown>", "metric.cpu"]);
        assert!(m.logits(&prep).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn shared_group_holds_every_neighbor() {
        let m = Model::new(small(Ablation::V2), names()).unwrap();
        let prep = m.prepare(&bundle(), None).unwrap();
        assert_eq!(prep.blocks.len(), 1);
        assert_eq!(prep.blocks[0].owners().len(), 9);
        assert!(m.logits(&prep).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn positional_only_when_category_ablated() {
        let m = Model::new(small(Ablation::V1), names()).unwrap();
        let prep = m.prepare(&bundle(), None).unwrap();
        let mut tape = Tape::new();
        m.forward(&prep, &mut tape).unwrap();
        assert!(tape.params().iter().all(|(n, _)| n != "enc.theta_e"));
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        c.heads = 7;
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
        let mut c = TrainConfig::default();
        c.gamma = 1.5;
        assert!(c.validate().is_err());
        assert_eq!("v3".parse::<Ablation>().unwrap(), Ablation::V3);
        assert!("V4".parse::<Ablation>().is_err());
    }
}
