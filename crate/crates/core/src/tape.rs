//! Reverse-mode differentiation over dense `f64` matrices.
//!
//! The tape records a fixed operator set (matrix products, sums, scaling,
//! LeakyReLU, sparse row combinations, row stacking, head-blocked bilinear
//! forms, segment softmax and segment weighted sums, cross-entropy). Values
//! are computed eagerly as operations are pushed; [`Tape::backward`] walks the
//! record in reverse and returns one gradient per node.
//!
//! Parameters enter the tape by reference so that forward passes over many
//! traces do not copy the parameter store.

use std::sync::Arc;

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

pub type Mat = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    /// Position on the tape; indexes the vector returned by `backward`.
    pub fn index(self) -> usize {
        self.0
    }
}

/// Row groups: `segments[s]` lists the rows that belong to group `s`.
pub type Segments = Arc<Vec<Vec<usize>>>;

/// Sparse row combination: output row `r` is `Σ w · input[i]` over `rows[r]`.
pub type RowCombination = Arc<Vec<Vec<(usize, f64)>>>;

enum Value<'p> {
    Owned(Mat),
    Borrowed(&'p Mat),
}

impl Value<'_> {
    fn get(&self) -> &Mat {
        match self {
            Value::Owned(m) => m,
            Value::Borrowed(m) => m,
        }
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    LeakyRelu(Var, f64),
    Combine(Var, RowCombination),
    ConcatRows(Vec<Var>),
    HeadMatMul { x: Var, a: Var, heads: usize },
    HeadDot { a: Var, b: Var, heads: usize },
    SegmentSoftmax { x: Var, segments: Segments },
    SegmentWeightedSum {
        w: Var,
        v: Var,
        segments: Segments,
        heads: usize,
    },
    CrossEntropy { logits: Var, target: usize },
}

struct Node<'p> {
    value: Value<'p>,
    op: Op,
}

#[derive(Default)]
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
    params: Vec<(String, Var)>,
}

fn accumulate(slot: &mut Option<Mat>, contribution: Mat) {
    match slot {
        Some(g) => *g += &contribution,
        None => *slot = Some(contribution),
    }
}

fn head_width(cols: usize, heads: usize) -> usize {
    assert!(heads > 0 && cols.is_multiple_of(heads), "{cols} columns not divisible by {heads} heads");
    cols / heads
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        self.nodes[v.0].value.get()
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Named learnable leaf borrowed from the parameter store.
    pub fn param(&mut self, name: &str, value: &'p Mat) -> Var {
        self.nodes.push(Node {
            value: Value::Borrowed(value),
            op: Op::Leaf,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.push((name.to_string(), v));
        v
    }

    /// Which side of zero every LeakyReLU input lies on, in tape order.
    /// Finite differences are only meaningful when this does not change.
    pub fn kink_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::LeakyRelu(a, _) => Some(a),
                _ => None,
            })
            .flat_map(|a| self.value(a).iter().map(|&x| x > 0.0).collect::<Vec<_>>())
            .collect()
    }

    pub fn params(&self) -> &[(String, Var)] {
        &self.params
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) * c;
        self.push(out, Op::Scale(a, c))
    }

    /// Multiply every entry of `a` by the `1 × 1` node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        let out = self.value(a) * self.scalar(s);
        self.push(out, Op::ScaleBy(a, s))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.value(a).mapv(|x| if x > 0.0 { x } else { slope * x });
        self.push(out, Op::LeakyRelu(a, slope))
    }

    /// Weighted gather of rows; covers row selection, one-hot products and means.
    pub fn combine_rows(&mut self, src: Var, rows: RowCombination) -> Var {
        let input = self.value(src);
        let mut out = Mat::zeros((rows.len(), input.ncols()));
        for (r, terms) in rows.iter().enumerate() {
            let mut row = out.row_mut(r);
            for &(i, w) in terms {
                row.scaled_add(w, &input.row(i));
            }
        }
        self.push(out, Op::Combine(src, rows))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&v| self.value(v).view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column mismatch");
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    /// Apply the square matrix `a` to each head block of `x`'s columns.
    pub fn head_matmul(&mut self, x: Var, a: Var, heads: usize) -> Var {
        let xv = self.value(x);
        let av = self.value(a);
        let w = head_width(xv.ncols(), heads);
        assert_eq!(av.dim(), (w, w), "head_matmul: block matrix shape");
        let mut out = Mat::zeros(xv.dim());
        for h in 0..heads {
            let block = s![.., h * w..(h + 1) * w];
            out.slice_mut(block).assign(&xv.slice(block).dot(av));
        }
        self.push(out, Op::HeadMatMul { x, a, heads })
    }

    /// Per-row, per-head dot product: `out[r, h] = Σ_{c ∈ head h} a[r, c]·b[r, c]`.
    pub fn head_dot(&mut self, a: Var, b: Var, heads: usize) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.dim(), bv.dim(), "head_dot: shape mismatch");
        let w = head_width(av.ncols(), heads);
        let mut out = Mat::zeros((av.nrows(), heads));
        for r in 0..av.nrows() {
            for h in 0..heads {
                let block = s![r, h * w..(h + 1) * w];
                out[[r, h]] = av.slice(block).dot(&bv.slice(block));
            }
        }
        self.push(out, Op::HeadDot { a, b, heads })
    }

    /// Column-wise softmax inside each row segment.
    pub fn segment_softmax(&mut self, x: Var, segments: Segments) -> Var {
        let xv = self.value(x);
        let mut out = Mat::zeros(xv.dim());
        for seg in segments.iter() {
            for c in 0..xv.ncols() {
                let max = seg.iter().map(|&r| xv[[r, c]]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for &r in seg {
                    let e = (xv[[r, c]] - max).exp();
                    out[[r, c]] = e;
                    total += e;
                }
                for &r in seg {
                    out[[r, c]] /= total;
                }
            }
        }
        self.push(out, Op::SegmentSoftmax { x, segments })
    }

    /// `out[s, head h] = Σ_{r ∈ segment s} w[r, h] · v[r, head h]`.
    pub fn segment_weighted_sum(&mut self, w: Var, v: Var, segments: Segments, heads: usize) -> Var {
        let wv = self.value(w);
        let vv = self.value(v);
        let width = head_width(vv.ncols(), heads);
        assert_eq!(wv.dim(), (vv.nrows(), heads), "segment_weighted_sum: weight shape");
        let mut out = Mat::zeros((segments.len(), vv.ncols()));
        for (s_idx, seg) in segments.iter().enumerate() {
            for &r in seg {
                for h in 0..heads {
                    let cols = h * width..(h + 1) * width;
                    out.slice_mut(s![s_idx, cols.clone()])
                        .scaled_add(wv[[r, h]], &vv.slice(s![r, cols]));
                }
            }
        }
        self.push(
            out,
            Op::SegmentWeightedSum {
                w,
                v,
                segments,
                heads,
            },
        )
    }

    /// `-log softmax(logits)[target]` over a single column of logits.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Var {
        let z = self.value(logits);
        assert_eq!(z.ncols(), 1, "cross_entropy expects a column of logits");
        let loss = log_sum_exp(z.iter().copied()) - z[[target, 0]];
        self.push(Mat::from_elem((1, 1), loss), Op::CrossEntropy { logits, target })
    }

    /// Gradients of `seed · root` with respect to every node, `None` where the
    /// node does not influence `root`.
    pub fn backward(&self, root: Var, seed: f64) -> Vec<Option<Mat>> {
        self.backward_with(root, Mat::from_elem(self.value(root).dim(), seed))
    }

    /// Reverse pass seeded with an explicit upstream gradient for `root`.
    pub fn backward_with(&self, root: Var, seed: Mat) -> Vec<Option<Mat>> {
        assert_eq!(seed.dim(), self.value(root).dim(), "seed shape");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = g.dot(&self.value(*b).t());
                    let db = self.value(*a).t().dot(&g);
                    accumulate(&mut grads[a.0], da);
                    accumulate(&mut grads[b.0], db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], g.clone());
                    accumulate(&mut grads[b.0], g.clone());
                }
                Op::Scale(a, c) => accumulate(&mut grads[a.0], &g * *c),
                Op::ScaleBy(a, sc) => {
                    let ds = (&g * self.value(*a)).sum();
                    accumulate(&mut grads[a.0], &g * self.scalar(*sc));
                    accumulate(&mut grads[sc.0], Mat::from_elem((1, 1), ds));
                }
                Op::LeakyRelu(a, slope) => {
                    let mut da = g.clone();
                    Zip::from(&mut da)
                        .and(self.value(*a))
                        .for_each(|d, &x| {
                            if x <= 0.0 {
                                *d *= slope
                            }
                        });
                    accumulate(&mut grads[a.0], da);
                }
                Op::Combine(src, rows) => {
                    let mut ds = Mat::zeros(self.value(*src).dim());
                    for (r, terms) in rows.iter().enumerate() {
                        for &(i, w) in terms {
                            ds.row_mut(i).scaled_add(w, &g.row(r));
                        }
                    }
                    accumulate(&mut grads[src.0], ds);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let rows = self.value(*p).nrows();
                        accumulate(&mut grads[p.0], g.slice(s![start..start + rows, ..]).to_owned());
                        start += rows;
                    }
                }
                Op::HeadMatMul { x, a, heads } => {
                    let xv = self.value(*x);
                    let av = self.value(*a);
                    let w = av.nrows();
                    let mut dx = Mat::zeros(xv.dim());
                    let mut da = Mat::zeros(av.dim());
                    for h in 0..*heads {
                        let block = s![.., h * w..(h + 1) * w];
                        let gb = g.slice(block);
                        dx.slice_mut(block).assign(&gb.dot(&av.t()));
                        da += &xv.slice(block).t().dot(&gb);
                    }
                    accumulate(&mut grads[x.0], dx);
                    accumulate(&mut grads[a.0], da);
                }
                Op::HeadDot { a, b, heads } => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let w = av.ncols() / heads;
                    let mut da = Mat::zeros(av.dim());
                    let mut db = Mat::zeros(bv.dim());
                    for r in 0..av.nrows() {
                        for h in 0..*heads {
                            let block = s![r, h * w..(h + 1) * w];
                            da.slice_mut(block).scaled_add(g[[r, h]], &bv.slice(block));
                            db.slice_mut(block).scaled_add(g[[r, h]], &av.slice(block));
                        }
                    }
                    accumulate(&mut grads[a.0], da);
                    accumulate(&mut grads[b.0], db);
                }
                Op::SegmentSoftmax { x, segments } => {
                    let y = self.nodes[idx].value.get();
                    let mut dx = Mat::zeros(y.dim());
                    for seg in segments.iter() {
                        for c in 0..y.ncols() {
                            let inner: f64 = seg.iter().map(|&r| y[[r, c]] * g[[r, c]]).sum();
                            for &r in seg {
                                dx[[r, c]] = y[[r, c]] * (g[[r, c]] - inner);
                            }
                        }
                    }
                    accumulate(&mut grads[x.0], dx);
                }
                Op::SegmentWeightedSum {
                    w,
                    v,
                    segments,
                    heads,
                } => {
                    let wv = self.value(*w);
                    let vv = self.value(*v);
                    let width = vv.ncols() / heads;
                    let mut dw = Mat::zeros(wv.dim());
                    let mut dv = Mat::zeros(vv.dim());
                    for (s_idx, seg) in segments.iter().enumerate() {
                        for &r in seg {
                            for h in 0..*heads {
                                let cols = h * width..(h + 1) * width;
                                let gs = g.slice(s![s_idx, cols.clone()]);
                                dw[[r, h]] += gs.dot(&vv.slice(s![r, cols.clone()]));
                                dv.slice_mut(s![r, cols]).scaled_add(wv[[r, h]], &gs);
                            }
                        }
                    }
                    accumulate(&mut grads[w.0], dw);
                    accumulate(&mut grads[v.0], dv);
                }
                Op::CrossEntropy { logits, target } => {
                    let z = self.value(*logits);
                    let upstream = g[[0, 0]];
                    let mut dz = softmax_column(z);
                    dz[[*target, 0]] -= 1.0;
                    dz *= upstream;
                    accumulate(&mut grads[logits.0], dz);
                }
            }
            grads[idx] = Some(g);
        }
        grads
    }
}

pub fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Softmax down a column vector.
pub fn softmax_column(z: &Mat) -> Mat {
    let lse = log_sum_exp(z.iter().copied());
    z.mapv(|v| (v - lse).exp())
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(z.iter().copied());
    z.iter().map(|v| (v - lse).exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Mat::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    /// Central-difference check of d(Σ out ⊙ probe)/d(input) for every entry
    /// of every input, with a random probe.
    fn check<F>(inputs: Vec<Mat>, build: F)
    where
        F: Fn(&mut Tape, &[Var]) -> Var,
    {
        let eps = 1e-6;
        let forward = |inputs: &[Mat]| {
            let mut tape = Tape::new();
            let vars: Vec<Var> = inputs.iter().map(|m| tape.constant(m.clone())).collect();
            let out = build(&mut tape, &vars);
            (tape, vars, out)
        };
        let (tape, vars, out) = forward(&inputs);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let probe = random(&mut rng, tape.value(out).nrows(), tape.value(out).ncols());
        let grads = tape.backward_with(out, probe.clone());
        let objective = |inputs: &[Mat]| {
            let (tape, _, out) = forward(inputs);
            (tape.value(out) * &probe).sum()
        };
        for (k, input) in inputs.iter().enumerate() {
            for r in 0..input.nrows() {
                for c in 0..input.ncols() {
                    let mut plus = inputs.clone();
                    plus[k][[r, c]] += eps;
                    let mut minus = inputs.clone();
                    minus[k][[r, c]] -= eps;
                    let numeric = (objective(&plus) - objective(&minus)) / (2.0 * eps);
                    let analytic = grads[vars[k].0].as_ref().map_or(0.0, |g| g[[r, c]]);
                    assert!(
                        (analytic - numeric).abs() <= 1e-6 * (1.0 + numeric.abs()),
                        "input {k} entry ({r},{c}): analytic {analytic} vs numeric {numeric}"
                    );
                }
            }
        }
    }

    #[test]
    fn matmul_add_scale_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        check(vec![random(&mut rng, 3, 4), random(&mut rng, 4, 2), random(&mut rng, 3, 2)], |t, v| {
            let m = t.matmul(v[0], v[1]);
            let a = t.add(m, v[2]);
            t.scale(a, -0.7)
        });
    }

    #[test]
    fn scale_by_and_leaky_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        check(vec![random(&mut rng, 3, 4), random(&mut rng, 1, 1)], |t, v| {
            let s = t.scale_by(v[0], v[1]);
            t.leaky_relu(s, 0.3)
        });
    }

    #[test]
    fn combine_and_concat_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: RowCombination = Arc::new(vec![vec![(0, 0.5), (2, 0.5)], vec![(1, 1.0)], vec![(2, 2.0)]]);
        check(vec![random(&mut rng, 3, 4), random(&mut rng, 2, 4)], move |t, v| {
            let c = t.combine_rows(v[0], rows.clone());
            t.concat_rows(&[c, v[1]])
        });
    }

    #[test]
    fn head_ops_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        check(
            vec![random(&mut rng, 5, 6), random(&mut rng, 3, 3), random(&mut rng, 5, 6)],
            |t, v| {
                let ka = t.head_matmul(v[0], v[1], 2);
                t.head_dot(ka, v[2], 2)
            },
        );
    }

    #[test]
    fn segment_ops_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let segments: Segments = Arc::new(vec![vec![0, 3], vec![1], vec![2, 4]]);
        check(vec![random(&mut rng, 5, 2), random(&mut rng, 5, 6)], move |t, v| {
            let w = t.segment_softmax(v[0], segments.clone());
            t.segment_weighted_sum(w, v[1], segments.clone(), 2)
        });
    }

    #[test]
    fn cross_entropy_grad_is_softmax_minus_onehot() {
        let z = array![[0.3], [-1.2], [2.0], [0.0]];
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone());
        let loss = tape.cross_entropy(zv, 1);
        let grads = tape.backward(loss, 1.0);
        let p = softmax_column(&z);
        let g = grads[zv.0].as_ref().unwrap();
        for i in 0..4 {
            let y = if i == 1 { 1.0 } else { 0.0 };
            assert!((g[[i, 0]] - (p[[i, 0]] - y)).abs() < 1e-15);
        }
        let expected = -p[[1, 0]].ln();
        assert!((tape.scalar(loss) - expected).abs() < 1e-12);
    }

    #[test]
    fn unused_leaf_has_no_gradient() {
        let mut tape = Tape::new();
        let a = tape.constant(array![[1.0, 2.0]]);
        let b = tape.constant(array![[3.0, 4.0]]);
        let out = tape.scale(a, 2.0);
        let grads = tape.backward(out, 1.0);
        assert!(grads[b.0].is_none());
        assert_eq!(grads[a.0].as_ref().unwrap(), &array![[2.0, 2.0]]);
    }

    #[test]
    fn segment_softmax_columns_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut tape = Tape::new();
        let x = tape.constant(random(&mut rng, 6, 3) * 20.0);
        let segments: Segments = Arc::new(vec![vec![0, 1, 2], vec![3], vec![4, 5]]);
        let y = tape.segment_softmax(x, segments.clone());
        for seg in segments.iter() {
            for c in 0..3 {
                let total: f64 = seg.iter().map(|&r| tape.value(y)[[r, c]]).sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }
}
