//! Instance-level anomaly detection by heterogeneous multi-head attention
//! between each instance node and its attached log and metric nodes.
//!
//! Every neighbor kind (the log node, each metric name) owns its own key and
//! value projections, a head-shared bilinear matrix `A` and a scalar prior
//! `phi`. For head `h`, neighbor `j` of instance `I` scores
//! `K_h(j) · A · Q_h(I)ᵀ · phi / sqrt(d)`; scores are softmax-normalized over
//! the neighbors of each instance, weight the value projections, and the
//! concatenated head outputs update the instance embedding through
//! `(1 - gamma) · LeakyReLU(X̂) · Ŵ + gamma · X`.
//!
//! Head `h` uses columns `h·d/H .. (h+1)·d/H` of the `[d × d]` key, value and
//! query matrices, which is the per-head `[d × d/H]` projection laid side by
//! side.

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::Array1;

use crate::error::{Error, Result};
use crate::tape::{Mat, Segments, Tape, Var};

/// Borrowed projections for one neighbor kind.
#[derive(Debug, Clone, Copy)]
pub struct KindParams<'a> {
    pub key: &'a Mat,
    pub value: &'a Mat,
    /// `[d/H × d/H]`, shared by all heads.
    pub a: &'a Mat,
    /// `1 × 1` prior significance.
    pub phi: &'a Mat,
}

#[derive(Debug, Clone)]
pub struct AttentionLayerParams<'a> {
    pub query: &'a Mat,
    pub w_hat: &'a Mat,
    pub kinds: BTreeMap<String, KindParams<'a>>,
    pub heads: usize,
    pub gamma: f64,
    pub leaky_slope: f64,
}

impl AttentionLayerParams<'_> {
    pub fn dim(&self) -> usize {
        self.query.nrows()
    }

    fn kind(&self, key: &str) -> Result<&KindParams<'_>> {
        self.kinds
            .get(key)
            .ok_or_else(|| Error::DimensionMismatch(format!("no parameters for neighbor kind `{key}`")))
    }
}

/// Tape handles of one kind's parameters.
#[derive(Debug, Clone, Copy)]
pub struct KindVars {
    pub key: Var,
    pub value: Var,
    pub a: Var,
    pub phi: Var,
}

#[derive(Debug, Clone)]
pub struct LayerVars {
    pub query: Var,
    pub w_hat: Var,
    pub kinds: BTreeMap<String, KindVars>,
}

/// Embeddings of all neighbors of one kind, row `r` attached to instance `owners[r]`.
#[derive(Debug, Clone)]
pub struct KindBlock {
    pub kind: String,
    pub emb: Var,
    pub owners: Vec<usize>,
}

/// Static layer settings.
#[derive(Debug, Clone, Copy)]
pub struct LayerShape {
    pub dim: usize,
    pub heads: usize,
    pub gamma: f64,
    pub leaky_slope: f64,
}

/// Intermediate nodes of one attention layer.
#[derive(Debug, Clone, Copy)]
pub struct LayerOutput {
    /// `[neighbors × H]` scores before normalization.
    pub raw_scores: Var,
    /// `[neighbors × H]` normalized per instance.
    pub weights: Var,
    /// `[instances × d]` aggregated anomaly information.
    pub x_hat: Var,
    /// `[instances × d]` updated instance embeddings.
    pub out: Var,
}

/// Neighbor rows of each instance after the blocks are stacked in order.
pub fn neighbor_segments(blocks_owners: &[&[usize]], instances: usize) -> Result<Segments> {
    let mut segments = vec![Vec::new(); instances];
    let mut row = 0;
    for owners in blocks_owners {
        for &o in owners.iter() {
            segments
                .get_mut(o)
                .ok_or(Error::IndexOutOfRange {
                    index: o,
                    len: instances,
                })?
                .push(row);
            row += 1;
        }
    }
    if segments.iter().any(Vec::is_empty) {
        return Err(Error::NoNeighbors);
    }
    Ok(Arc::new(segments))
}

pub fn bind_layer<'p>(tape: &mut Tape<'p>, prefix: &str, params: &AttentionLayerParams<'p>) -> LayerVars {
    let kinds = params
        .kinds
        .iter()
        .map(|(kind, p)| {
            let vars = KindVars {
                key: tape.param(&format!("{prefix}.{kind}.key"), p.key),
                value: tape.param(&format!("{prefix}.{kind}.value"), p.value),
                a: tape.param(&format!("{prefix}.{kind}.a"), p.a),
                phi: tape.param(&format!("{prefix}.{kind}.phi"), p.phi),
            };
            (kind.clone(), vars)
        })
        .collect();
    LayerVars {
        query: tape.param(&format!("{prefix}.query"), params.query),
        w_hat: tape.param(&format!("{prefix}.w_hat"), params.w_hat),
        kinds,
    }
}

/// Raw per-head scores for every neighbor row, stacked in block order.
pub fn raw_scores(tape: &mut Tape, vars: &LayerVars, x: Var, blocks: &[KindBlock], shape: LayerShape) -> Result<Var> {
    let q = tape.matmul(x, vars.query);
    let inv_sqrt_d = 1.0 / (shape.dim as f64).sqrt();
    let mut parts = Vec::with_capacity(blocks.len());
    for block in blocks {
        let kv = vars
            .kinds
            .get(&block.kind)
            .ok_or_else(|| Error::DimensionMismatch(format!("no parameters for neighbor kind `{}`", block.kind)))?;
        let k = tape.matmul(block.emb, kv.key);
        let ka = tape.head_matmul(k, kv.a, shape.heads);
        let rows = Arc::new(block.owners.iter().map(|&o| vec![(o, 1.0)]).collect());
        let q_owner = tape.combine_rows(q, rows);
        let dots = tape.head_dot(ka, q_owner, shape.heads);
        let prior = tape.scale_by(dots, kv.phi);
        parts.push(tape.scale(prior, inv_sqrt_d));
    }
    Ok(if parts.len() == 1 { parts[0] } else { tape.concat_rows(&parts) })
}

/// One full layer: score, normalize, aggregate, update.
pub fn attention_layer(
    tape: &mut Tape,
    vars: &LayerVars,
    x: Var,
    blocks: &[KindBlock],
    segments: &Segments,
    shape: LayerShape,
) -> Result<LayerOutput> {
    let raw = raw_scores(tape, vars, x, blocks, shape)?;
    let weights = tape.segment_softmax(raw, segments.clone());

    let mut values = Vec::with_capacity(blocks.len());
    for block in blocks {
        let kv = &vars.kinds[&block.kind];
        values.push(tape.matmul(block.emb, kv.value));
    }
    let v = if values.len() == 1 { values[0] } else { tape.concat_rows(&values) };
    let x_hat = tape.segment_weighted_sum(weights, v, segments.clone(), shape.heads);

    let out = update(tape, vars.w_hat, x_hat, x, shape);
    Ok(LayerOutput {
        raw_scores: raw,
        weights,
        x_hat,
        out,
    })
}

fn update(tape: &mut Tape, w_hat: Var, x_hat: Var, x: Var, shape: LayerShape) -> Var {
    let act = tape.leaky_relu(x_hat, shape.leaky_slope);
    let proj = tape.matmul(act, w_hat);
    let gated = tape.scale(proj, 1.0 - shape.gamma);
    let keep = tape.scale(x, shape.gamma);
    tape.add(gated, keep)
}

/// One neighbor of a single instance, for the standalone operations below.
#[derive(Debug, Clone)]
pub struct Neighbor {
    /// Parameter group, e.g. `log` or `metric.cpu`.
    pub kind: String,
    pub emb: Array1<f64>,
}

fn row(v: &Array1<f64>) -> Mat {
    v.clone().insert_axis(ndarray::Axis(0))
}

fn shape_of(params: &AttentionLayerParams) -> Result<LayerShape> {
    let dim = params.dim();
    if params.heads == 0 || !dim.is_multiple_of(params.heads) {
        return Err(Error::DimensionMismatch(format!("dim {dim} not divisible by {} heads", params.heads)));
    }
    Ok(LayerShape {
        dim,
        heads: params.heads,
        gamma: params.gamma,
        leaky_slope: params.leaky_slope,
    })
}

/// Neighbors grouped into one block per kind, in first-appearance order, plus
/// the permutation from stacked rows back to the caller's neighbor order.
fn single_instance_blocks(tape: &mut Tape, neighbors: &[Neighbor], dim: usize) -> Result<(Vec<KindBlock>, Vec<usize>)> {
    let mut order: Vec<&str> = Vec::new();
    for n in neighbors {
        if n.emb.len() != dim {
            return Err(Error::DimensionMismatch(format!("neighbor embedding of length {}", n.emb.len())));
        }
        if !order.contains(&n.kind.as_str()) {
            order.push(&n.kind);
        }
    }
    let mut blocks = Vec::new();
    let mut stacked_to_input = Vec::new();
    for kind in order {
        let members: Vec<usize> = (0..neighbors.len()).filter(|&i| neighbors[i].kind == kind).collect();
        let views: Vec<_> = members.iter().map(|&i| neighbors[i].emb.view()).collect();
        let emb = ndarray::stack(ndarray::Axis(0), &views).expect("equal lengths checked");
        blocks.push(KindBlock {
            kind: kind.to_string(),
            emb: tape.constant(emb),
            owners: vec![0; members.len()],
        });
        stacked_to_input.extend(members);
    }
    Ok((blocks, stacked_to_input))
}

fn unstack(values: &Mat, head: usize, stacked_to_input: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; stacked_to_input.len()];
    for (r, &i) in stacked_to_input.iter().enumerate() {
        out[i] = values[[r, head]];
    }
    out
}

/// Scores of one instance's neighbors for head `h`, before normalization.
pub fn raw_anomaly_scores(
    instance_emb: &Array1<f64>,
    neighbors: &[Neighbor],
    params: &AttentionLayerParams,
    h: usize,
) -> Result<Vec<f64>> {
    let shape = shape_of(params)?;
    if neighbors.is_empty() {
        return Err(Error::NoNeighbors);
    }
    if h >= shape.heads {
        return Err(Error::IndexOutOfRange {
            index: h,
            len: shape.heads,
        });
    }
    let mut tape = Tape::new();
    let vars = bind_for(&mut tape, params, neighbors)?;
    let x = tape.constant(row(instance_emb));
    let (blocks, perm) = single_instance_blocks(&mut tape, neighbors, shape.dim)?;
    let raw = raw_scores(&mut tape, &vars, x, &blocks, shape)?;
    Ok(unstack(tape.value(raw), h, &perm))
}

/// Normalized anomaly scores of one instance's neighbors for head `h`; sums to one.
pub fn compute_anomaly_scores(
    instance_emb: &Array1<f64>,
    neighbors: &[Neighbor],
    params: &AttentionLayerParams,
    h: usize,
) -> Result<Vec<f64>> {
    let raw = raw_anomaly_scores(instance_emb, neighbors, params, h)?;
    Ok(crate::tape::softmax(&raw))
}

/// Concatenation over heads of the score-weighted value projections.
/// `scores[h][j]` is the weight of neighbor `j` under head `h`.
pub fn aggregate_anomaly_information(
    neighbors: &[Neighbor],
    params: &AttentionLayerParams,
    scores: &[Vec<f64>],
) -> Result<Array1<f64>> {
    let shape = shape_of(params)?;
    if neighbors.is_empty() {
        return Err(Error::NoNeighbors);
    }
    if scores.len() != shape.heads || scores.iter().any(|s| s.len() != neighbors.len()) {
        return Err(Error::DimensionMismatch(format!(
            "expected {} score rows of length {}",
            shape.heads,
            neighbors.len()
        )));
    }
    let width = shape.dim / shape.heads;
    let mut out = Array1::zeros(shape.dim);
    for n in neighbors {
        if n.emb.len() != shape.dim {
            return Err(Error::DimensionMismatch(format!("neighbor embedding of length {}", n.emb.len())));
        }
    }
    for (j, n) in neighbors.iter().enumerate() {
        let v = n.emb.dot(params.kind(&n.kind)?.value);
        for (h, head_scores) in scores.iter().enumerate() {
            let block = ndarray::s![h * width..(h + 1) * width];
            out.slice_mut(block).scaled_add(head_scores[j], &v.slice(block));
        }
    }
    Ok(out)
}

/// `(1 - gamma) · LeakyReLU(x_hat) · Ŵ + gamma · e_instance`.
pub fn update_instance_embedding(
    x_hat: &Array1<f64>,
    e_instance: &Array1<f64>,
    params: &AttentionLayerParams,
) -> Result<Array1<f64>> {
    let shape = shape_of(params)?;
    if x_hat.len() != shape.dim || e_instance.len() != shape.dim {
        return Err(Error::DimensionMismatch("embedding width".into()));
    }
    let mut tape = Tape::new();
    let w_hat = tape.param("w_hat", params.w_hat);
    let xh = tape.constant(row(x_hat));
    let e = tape.constant(row(e_instance));
    let out = update(&mut tape, w_hat, xh, e, shape);
    Ok(tape.value(out).row(0).to_owned())
}

fn bind_for<'p>(tape: &mut Tape<'p>, params: &AttentionLayerParams<'p>, neighbors: &[Neighbor]) -> Result<LayerVars> {
    for n in neighbors {
        params.kind(&n.kind)?;
    }
    Ok(bind_layer(tape, "attn", params))
}

/// Instance embeddings after applying `layers` in sequence. `blocks` hold the
/// fixed neighbor embeddings (one matrix per kind with owners).
pub fn forward_stack(
    instance_emb: &Mat,
    blocks: &[(String, Mat, Vec<usize>)],
    layers: &[AttentionLayerParams],
) -> Result<Mat> {
    if layers.is_empty() {
        return Err(Error::DimensionMismatch("empty layer stack".into()));
    }
    let mut tape = Tape::new();
    let owners: Vec<&[usize]> = blocks.iter().map(|b| b.2.as_slice()).collect();
    let segments = neighbor_segments(&owners, instance_emb.nrows())?;
    let kind_blocks: Vec<KindBlock> = blocks
        .iter()
        .map(|(kind, emb, owners)| KindBlock {
            kind: kind.clone(),
            emb: tape.constant(emb.clone()),
            owners: owners.clone(),
        })
        .collect();
    let mut x = tape.constant(instance_emb.clone());
    for (l, params) in layers.iter().enumerate() {
        let shape = shape_of(params)?;
        let vars = bind_layer(&mut tape, &format!("attn.{l}"), params);
        x = attention_layer(&mut tape, &vars, x, &kind_blocks, &segments, shape)?.out;
    }
    Ok(tape.value(x).clone())
}
