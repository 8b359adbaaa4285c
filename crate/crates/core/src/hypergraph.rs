//! Trace-level causality hyperedges and hypergraph convolution.
//!
//! For every instance `v` the construction emits one hyperedge per caller
//! `p` holding `{v, p} ∪ ancestors(p)`, then one hyperedge holding
//! `{v} ∪ descendants(v)`. Columns follow instance order, then parent order,
//! then the descendant edge. Identical columns are kept unless deduplication
//! is requested.

use std::collections::BTreeSet;
use std::io::Write;

use crate::error::{Error, Result};
use crate::graph::InvocationGraph;
use crate::tape::{softmax, Mat};

#[derive(Debug, Clone, PartialEq)]
pub struct IncidenceMatrix {
    /// `[vertices × hyperedges]`, entries 0 or 1.
    pub h: Mat,
    /// Diagonal of the hyperedge weight matrix.
    pub edge_weights: Vec<f64>,
    /// Weighted vertex degrees.
    pub d_v: Vec<f64>,
    /// Hyperedge sizes.
    pub d_e: Vec<f64>,
}

impl IncidenceMatrix {
    /// Unit-weight incidence matrix from explicit member lists.
    pub fn from_columns(vertices: usize, columns: &[BTreeSet<usize>]) -> Self {
        let mut h = Mat::zeros((vertices, columns.len()));
        for (e, col) in columns.iter().enumerate() {
            for &v in col {
                h[[v, e]] = 1.0;
            }
        }
        let edge_weights = vec![1.0; columns.len()];
        let d_v = (0..vertices)
            .map(|i| (0..columns.len()).map(|e| edge_weights[e] * h[[i, e]]).sum())
            .collect();
        let d_e = (0..columns.len()).map(|e| h.column(e).sum()).collect();
        IncidenceMatrix {
            h,
            edge_weights,
            d_v,
            d_e,
        }
    }

    pub fn vertices(&self) -> usize {
        self.h.nrows()
    }

    pub fn hyperedges(&self) -> usize {
        self.h.ncols()
    }

    /// Member vertices of each hyperedge.
    pub fn columns(&self) -> Vec<BTreeSet<usize>> {
        (0..self.hyperedges())
            .map(|e| (0..self.vertices()).filter(|&v| self.h[[v, e]] != 0.0).collect())
            .collect()
    }

    /// Coordinate list `trace_id,node_index,hyperedge_index`, one row per nonzero.
    pub fn write_csv<W: Write>(&self, out: &mut W, trace_id: &str, header: bool) -> std::io::Result<()> {
        if header {
            writeln!(out, "trace_id,node_index,hyperedge_index")?;
        }
        for e in 0..self.hyperedges() {
            for v in 0..self.vertices() {
                if self.h[[v, e]] != 0.0 {
                    writeln!(out, "{trace_id},{v},{e}")?;
                }
            }
        }
        Ok(())
    }
}

pub fn build_causal_hyperedges(g: &InvocationGraph, dedup: bool) -> Result<IncidenceMatrix> {
    if g.is_empty() {
        return Err(Error::NotADag);
    }
    let mut columns: Vec<BTreeSet<usize>> = Vec::new();
    for v in 0..g.len() {
        for &p in g.parents(v) {
            let mut edge = g.ancestors(p)?;
            if edge.contains(&v) {
                return Err(Error::NotADag);
            }
            edge.insert(v);
            edge.insert(p);
            columns.push(edge);
        }
        let mut edge = g.descendants(v)?;
        if edge.contains(&v) {
            return Err(Error::NotADag);
        }
        edge.insert(v);
        columns.push(edge);
    }
    if dedup {
        let mut seen = BTreeSet::new();
        columns.retain(|c| seen.insert(c.clone()));
    }
    Ok(IncidenceMatrix::from_columns(g.len(), &columns))
}

/// `D_v^{-1/2} H W D_e^{-1} Hᵀ D_v^{-1/2}`.
pub fn normalized_operator(inc: &IncidenceMatrix) -> Result<Mat> {
    let n = inc.vertices();
    if let Some(v) = inc.d_v.iter().position(|&d| d <= 0.0) {
        return Err(Error::ZeroDegree(v));
    }
    if inc.d_e.iter().any(|&d| d <= 0.0) {
        return Err(Error::DimensionMismatch("empty hyperedge".into()));
    }
    let mut scaled = inc.h.clone();
    for e in 0..inc.hyperedges() {
        let w = inc.edge_weights[e] / inc.d_e[e];
        scaled.column_mut(e).mapv_inplace(|x| x * w);
    }
    let mut delta = scaled.dot(&inc.h.t());
    for i in 0..n {
        for j in 0..n {
            delta[[i, j]] /= (inc.d_v[i] * inc.d_v[j]).sqrt();
        }
    }
    Ok(delta)
}

/// `X ← LeakyReLU(Δ X Θ)` once per layer.
pub fn hypergraph_convolution(inc: &IncidenceMatrix, x: &Mat, thetas: &[Mat], slope: f64) -> Result<Mat> {
    if x.nrows() != inc.vertices() {
        return Err(Error::DimensionMismatch(format!(
            "{} embedding rows for {} vertices",
            x.nrows(),
            inc.vertices()
        )));
    }
    let delta = normalized_operator(inc)?;
    let mut out = x.clone();
    for theta in thetas {
        if theta.nrows() != out.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "theta has {} rows, embeddings have {} columns",
                theta.nrows(),
                out.ncols()
            )));
        }
        out = delta
            .dot(&out)
            .dot(theta)
            .mapv(|v| if v > 0.0 { v } else { slope * v });
    }
    Ok(out)
}

/// Per-instance root-cause logits `x · D`.
pub fn root_cause_scores(x: &Mat, head: &Mat) -> Result<Vec<f64>> {
    if head.dim() != (x.ncols(), 1) {
        return Err(Error::DimensionMismatch(format!(
            "head {:?} for embeddings of width {}",
            head.dim(),
            x.ncols()
        )));
    }
    Ok(x.dot(head).column(0).to_vec())
}

/// Root-cause distribution over the instances of one trace.
pub fn root_cause_distribution(logits: &[f64]) -> Vec<f64> {
    softmax(logits)
}
