use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::kernels::{self, EdgeIndex, Segments};
use super::{Parameter, Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    #[default]
    Mean,
    Max,
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddBias(Var, Var),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    SegmentSoftmax(Var, Arc<Segments>),
    GatherScatter {
        source: Var,
        weight: Var,
        edges: Arc<EdgeIndex>,
        per_channel: bool,
    },
    BlockAggregate {
        source: Var,
        edges: Arc<EdgeIndex>,
        blocks: Arc<Vec<usize>>,
        width: usize,
    },
    ExpandGroups {
        input: Var,
        width: usize,
    },
    Column {
        input: Var,
        col: usize,
    },
    LookupColumns {
        table: Var,
        index: Arc<Vec<usize>>,
    },
    TileRows(Var),
    ConcatCols(Var, Var),
    Reshape(Var),
    Pool {
        input: Var,
        assignment: Arc<Vec<usize>>,
        mode: PoolMode,
        routes: Vec<usize>,
        counts: Vec<usize>,
    },
    MaskMul {
        input: Var,
        mask: Vec<T>,
    },
    GaussianLogKernel {
        points: Arc<Tensor<T>>,
        mu: Var,
        log_var: Var,
    },
    Sum(Var),
    Mean(Var),
    Bce {
        pred: Var,
        target: Arc<Vec<T>>,
    },
    CrossEntropy {
        logits: Var,
        labels: Arc<Vec<usize>>,
        probs: Vec<T>,
    },
    Mse {
        pred: Var,
        target: Arc<Vec<T>>,
        mask: Option<Arc<Vec<T>>>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Probability clamp used by [`Tape::bce`].
pub const BCE_CLAMP: f64 = 1e-7;

/// Records a forward computation for one reverse sweep.
///
/// Operations are appended in evaluation order, so the node list is
/// topologically sorted by construction. [`Tape::backward`] may run once;
/// [`Tape::zero_grad`] clears the gradients and re-arms it.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    backward_done: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::Dimension {
            op,
            left: a.to_vec(),
            right: b.to_vec(),
        });
    }
    Ok(())
}

fn matrix_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [r, c] => Ok((*r, *c)),
        [r] => Ok((*r, 1)),
        _ => Err(Error::Dimension {
            op,
            left: shape.to_vec(),
            right: vec![],
        }),
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last backward sweep with respect to `v`, if it was reached.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::new(self.nodes[v.0].value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    /// A leaf that takes part in differentiation.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn param(&mut self, p: &Parameter<T>) -> Var {
        self.input(p.value().clone())
    }

    /// Drop all gradients and allow another backward sweep.
    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
        self.backward_done = false;
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix_dims("matmul", self.shape(a))?;
        let (k2, n) = matrix_dims("matmul", self.shape(b))?;
        if k != k2 || self.shape(a).len() != 2 || self.shape(b).len() != 2 {
            return Err(Error::Dimension {
                op: "matmul",
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        same_shape(op, self.shape(a), self.shape(b))?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a);
        let t = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&x| x * s).collect()).expect("shape");
        let rg = self.rg(a);
        self.push(t, Op::Scale(a, s), rg)
    }

    /// `x + 1·biasᵀ` for `x: r×c` and a length-`c` bias.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = matrix_dims("add_bias", self.shape(x))?;
        if self.value(bias).len() != c {
            return Err(Error::Dimension {
                op: "add_bias",
                left: self.shape(x).to_vec(),
                right: self.shape(bias).to_vec(),
            });
        }
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(c.max(1)).take(r) {
            for (o, &bv) in row.iter_mut().zip(&b) {
                *o += bv;
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        let shape = self.shape(x).to_vec();
        Ok(self.push(Tensor::new(shape, out)?, Op::AddBias(x, bias), rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let v = self.value(a);
        let t = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&x| f(x)).collect()).expect("shape");
        let rg = self.rg(a);
        self.push(t, op, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > T::zero() { x } else { T::zero() }, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| T::one() / (T::one() + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.exp(), Op::Exp(a))
    }

    /// Softmax over the rows of each segment, independently per column.
    ///
    /// `logits` is `E` or `E×C`; `segments` must partition `[0, E)`.
    pub fn segment_softmax(&mut self, logits: Var, segments: Arc<Segments>) -> Result<Var> {
        let (e, c) = matrix_dims("segment_softmax", self.shape(logits))?;
        if segments.total() != e {
            return Err(Error::Structural(format!(
                "segments cover {} rows but logits have {e}",
                segments.total()
            )));
        }
        let x = self.value(logits).data();
        let mut out = vec![T::zero(); x.len()];
        for range in segments.iter() {
            for col in 0..c {
                let mut max = T::neg_infinity();
                for r in range.clone() {
                    max = max.max(x[r * c + col]);
                }
                let mut total = T::zero();
                for r in range.clone() {
                    let v = (x[r * c + col] - max).exp();
                    out[r * c + col] = v;
                    total += v;
                }
                for r in range.clone() {
                    out[r * c + col] = out[r * c + col] / total;
                }
            }
        }
        let shape = self.shape(logits).to_vec();
        let rg = self.rg(logits);
        Ok(self.push(Tensor::new(shape, out)?, Op::SegmentSoftmax(logits, segments), rg))
    }

    /// `y[dst] += w_e · source[src]` over all edges, for every graph in the batch.
    ///
    /// `source` is `(B·N)×Q`; `weight` is `E` / `E×1` (scalar per edge) or
    /// `E×Q` (per edge and channel).
    pub fn gather_scatter(&mut self, source: Var, edges: Arc<EdgeIndex>, weight: Var) -> Result<Var> {
        let (rows, q) = matrix_dims("gather_scatter", self.shape(source))?;
        let n = edges.nodes();
        if n == 0 || rows % n != 0 {
            return Err(Error::Dimension {
                op: "gather_scatter",
                left: self.shape(source).to_vec(),
                right: vec![n],
            });
        }
        let batch = rows / n;
        let wlen = self.value(weight).len();
        let per_channel = if wlen == edges.len() && (q == 1 || self.shape(weight).len() == 1 || self.shape(weight)[1] == 1) {
            false
        } else if wlen == edges.len() * q {
            true
        } else {
            return Err(Error::Dimension {
                op: "gather_scatter",
                left: vec![edges.len(), q],
                right: self.shape(weight).to_vec(),
            });
        };
        let out = kernels::scatter_forward(
            &edges,
            self.value(source).data(),
            self.value(weight).data(),
            per_channel,
            batch,
            q,
        );
        let rg = self.rg(source) || self.rg(weight);
        Ok(self.push(
            Tensor::new(vec![rows, q], out)?,
            Op::GatherScatter {
                source,
                weight,
                edges,
                per_channel,
            },
            rg,
        ))
    }

    /// `y[dst] += source[src, blocks[e]·width .. (blocks[e]+1)·width]`.
    pub fn block_aggregate(
        &mut self,
        source: Var,
        edges: Arc<EdgeIndex>,
        blocks: Arc<Vec<usize>>,
        width: usize,
    ) -> Result<Var> {
        let (rows, cols) = matrix_dims("block_aggregate", self.shape(source))?;
        let n = edges.nodes();
        if n == 0 || rows % n != 0 || blocks.len() != edges.len() {
            return Err(Error::Dimension {
                op: "block_aggregate",
                left: self.shape(source).to_vec(),
                right: vec![n, blocks.len()],
            });
        }
        if let Some(&b) = blocks.iter().find(|&&b| (b + 1) * width > cols) {
            return Err(Error::Bounds {
                op: "block_aggregate",
                index: b,
                len: cols / width.max(1),
            });
        }
        let batch = rows / n;
        let x = self.value(source).data();
        let mut out = vec![T::zero(); rows * width];
        for bi in 0..batch {
            for (e, (&s, &d)) in edges.src().iter().zip(edges.dst()).enumerate() {
                let off = (bi * n + s) * cols + blocks[e] * width;
                let src = &x[off..off + width];
                let dst = &mut out[(bi * n + d) * width..(bi * n + d + 1) * width];
                for (o, &v) in dst.iter_mut().zip(src) {
                    *o += v;
                }
            }
        }
        let rg = self.rg(source);
        Ok(self.push(
            Tensor::new(vec![rows, width], out)?,
            Op::BlockAggregate {
                source,
                edges,
                blocks,
                width,
            },
            rg,
        ))
    }

    /// Repeat each column `width` times: `E×C -> E×(C·width)`.
    pub fn expand_groups(&mut self, input: Var, width: usize) -> Result<Var> {
        let (e, c) = matrix_dims("expand_groups", self.shape(input))?;
        let x = self.value(input).data();
        let q = c * width;
        let mut out = Vec::with_capacity(e * q);
        for r in 0..e {
            for col in 0..q {
                out.push(x[r * c + col / width]);
            }
        }
        let rg = self.rg(input);
        Ok(self.push(Tensor::new(vec![e, q], out)?, Op::ExpandGroups { input, width }, rg))
    }

    pub fn column(&mut self, input: Var, col: usize) -> Result<Var> {
        let (e, c) = matrix_dims("column", self.shape(input))?;
        if col >= c {
            return Err(Error::Bounds {
                op: "column",
                index: col,
                len: c,
            });
        }
        let x = self.value(input).data();
        let out = (0..e).map(|r| x[r * c + col]).collect();
        let rg = self.rg(input);
        Ok(self.push(Tensor::new(vec![e], out)?, Op::Column { input, col }, rg))
    }

    /// `out[e, q] = table[q, index[e]]` for a `Q×R` table.
    pub fn lookup_columns(&mut self, table: Var, index: Arc<Vec<usize>>) -> Result<Var> {
        let (q, r) = matrix_dims("lookup_columns", self.shape(table))?;
        if let Some(&bad) = index.iter().find(|&&i| i >= r) {
            return Err(Error::Bounds {
                op: "lookup_columns",
                index: bad,
                len: r,
            });
        }
        let t = self.value(table).data();
        let mut out = Vec::with_capacity(index.len() * q);
        for &i in index.iter() {
            for row in 0..q {
                out.push(t[row * r + i]);
            }
        }
        let rg = self.rg(table);
        let e = index.len();
        Ok(self.push(Tensor::new(vec![e, q], out)?, Op::LookupColumns { table, index }, rg))
    }

    /// Stack `times` copies of a matrix vertically.
    pub fn tile_rows(&mut self, input: Var, times: usize) -> Result<Var> {
        let (r, c) = matrix_dims("tile_rows", self.shape(input))?;
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(x.len() * times);
        for _ in 0..times {
            out.extend_from_slice(x);
        }
        let rg = self.rg(input);
        Ok(self.push(Tensor::new(vec![r * times, c], out)?, Op::TileRows(input), rg))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = matrix_dims("concat_cols", self.shape(a))?;
        let (rb, cb) = matrix_dims("concat_cols", self.shape(b))?;
        if ra != rb {
            return Err(Error::Dimension {
                op: "concat_cols",
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        let xa = self.value(a).data();
        let xb = self.value(b).data();
        let mut out = Vec::with_capacity(ra * (ca + cb));
        for r in 0..ra {
            out.extend_from_slice(&xa[r * ca..(r + 1) * ca]);
            out.extend_from_slice(&xb[r * cb..(r + 1) * cb]);
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![ra, ca + cb], out)?, Op::ConcatCols(a, b), rg))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(input).clone().reshaped(shape)?;
        let rg = self.rg(input);
        Ok(self.push(t, Op::Reshape(input), rg))
    }

    /// Cluster pooling: `(B·n)×Q -> (B·m)×Q` by mean or max over the members of each cluster.
    ///
    /// Max routes its gradient to the first (lowest-index) maximizing node.
    pub fn pool(&mut self, input: Var, assignment: Arc<Vec<usize>>, clusters: usize, mode: PoolMode) -> Result<Var> {
        let (rows, q) = matrix_dims("pool", self.shape(input))?;
        let n = assignment.len();
        if n == 0 || rows % n != 0 {
            return Err(Error::Dimension {
                op: "pool",
                left: self.shape(input).to_vec(),
                right: vec![n],
            });
        }
        if let Some(&bad) = assignment.iter().find(|&&a| a >= clusters) {
            return Err(Error::Bounds {
                op: "pool",
                index: bad,
                len: clusters,
            });
        }
        let batch = rows / n;
        let mut counts = vec![0usize; clusters];
        for &a in assignment.iter() {
            counts[a] += 1;
        }
        if counts.contains(&0) {
            return Err(Error::Structural("pooling map has an empty cluster".into()));
        }
        let x = self.value(input).data();
        let mut out = vec![T::zero(); batch * clusters * q];
        let mut routes = Vec::new();
        match mode {
            PoolMode::Mean => {
                for b in 0..batch {
                    for (i, &a) in assignment.iter().enumerate() {
                        let src = &x[(b * n + i) * q..(b * n + i + 1) * q];
                        let dst = &mut out[(b * clusters + a) * q..(b * clusters + a + 1) * q];
                        for (o, &v) in dst.iter_mut().zip(src) {
                            *o += v;
                        }
                    }
                    for (m, &cnt) in counts.iter().enumerate() {
                        let inv = T::one() / T::of(cnt as f64);
                        for o in &mut out[(b * clusters + m) * q..(b * clusters + m + 1) * q] {
                            *o *= inv;
                        }
                    }
                }
            }
            PoolMode::Max => {
                routes = vec![usize::MAX; batch * clusters * q];
                for b in 0..batch {
                    for (i, &a) in assignment.iter().enumerate() {
                        for c in 0..q {
                            let v = x[(b * n + i) * q + c];
                            let slot = (b * clusters + a) * q + c;
                            if routes[slot] == usize::MAX || v > out[slot] {
                                out[slot] = v;
                                routes[slot] = (b * n + i) * q + c;
                            }
                        }
                    }
                }
            }
        }
        let rg = self.rg(input);
        Ok(self.push(
            Tensor::new(vec![batch * clusters, q], out)?,
            Op::Pool {
                input,
                assignment,
                mode,
                routes,
                counts,
            },
            rg,
        ))
    }

    /// Elementwise product with a constant mask.
    pub fn mask_mul(&mut self, input: Var, mask: Vec<T>) -> Result<Var> {
        if mask.len() != self.value(input).len() {
            return Err(Error::Dimension {
                op: "mask_mul",
                left: self.shape(input).to_vec(),
                right: vec![mask.len()],
            });
        }
        let x = self.value(input).data();
        let out = x.iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let shape = self.shape(input).to_vec();
        let rg = self.rg(input);
        Ok(self.push(Tensor::new(shape, out)?, Op::MaskMul { input, mask }, rg))
    }

    /// Diagonal Gaussian log-kernels.
    ///
    /// `out[e, k] = -½ Σ_d (v_ed − μ_kd)² · exp(−s_kd)` for constant points `v: E×D`,
    /// means `μ: K×D` and log-variances `s: K×D`.
    pub fn gaussian_log_kernel(&mut self, points: Arc<Tensor<T>>, mu: Var, log_var: Var) -> Result<Var> {
        let (e, d) = matrix_dims("gaussian_log_kernel", points.shape())?;
        let (k, d2) = matrix_dims("gaussian_log_kernel", self.shape(mu))?;
        same_shape("gaussian_log_kernel", self.shape(mu), self.shape(log_var))?;
        if d != d2 {
            return Err(Error::Dimension {
                op: "gaussian_log_kernel",
                left: points.shape().to_vec(),
                right: self.shape(mu).to_vec(),
            });
        }
        let v = points.data();
        let m = self.value(mu).data();
        let prec: Vec<T> = self.value(log_var).data().iter().map(|&s| (-s).exp()).collect();
        let half = T::of(0.5);
        let mut out = vec![T::zero(); e * k];
        for ei in 0..e {
            for ki in 0..k {
                let mut acc = T::zero();
                for di in 0..d {
                    let diff = v[ei * d + di] - m[ki * d + di];
                    acc += diff * diff * prec[ki * d + di];
                }
                out[ei * k + ki] = -half * acc;
            }
        }
        let rg = self.rg(mu) || self.rg(log_var);
        Ok(self.push(
            Tensor::new(vec![e, k], out)?,
            Op::GaussianLogKernel { points, mu, log_var },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let n = T::of(v.len().max(1) as f64);
        let s: T = v.data().iter().copied().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s / n), Op::Mean(a), rg)
    }

    /// Mean binary cross entropy of probabilities against 0/1 targets.
    pub fn bce(&mut self, pred: Var, target: Arc<Vec<T>>) -> Result<Var> {
        let p = self.value(pred).data();
        if p.len() != target.len() {
            return Err(Error::Dimension {
                op: "bce",
                left: self.shape(pred).to_vec(),
                right: vec![target.len()],
            });
        }
        if let Some(t) = target.iter().find(|&&t| t != T::zero() && t != T::one()) {
            return Err(Error::Contract(format!("bce target {t} is not 0 or 1")));
        }
        let lo = T::of(BCE_CLAMP);
        let hi = T::one() - lo;
        let mut total = T::zero();
        for (&pv, &t) in p.iter().zip(target.iter()) {
            let pc = pv.max(lo).min(hi);
            total += -(t * pc.ln() + (T::one() - t) * (T::one() - pc).ln());
        }
        let loss = total / T::of(p.len().max(1) as f64);
        let rg = self.rg(pred);
        Ok(self.push(Tensor::scalar(loss), Op::Bce { pred, target }, rg))
    }

    /// Mean negative log-softmax of the labelled class for `logits: N×K`.
    pub fn cross_entropy(&mut self, logits: Var, labels: Arc<Vec<usize>>) -> Result<Var> {
        let (n, k) = matrix_dims("cross_entropy", self.shape(logits))?;
        if labels.len() != n {
            return Err(Error::Dimension {
                op: "cross_entropy",
                left: self.shape(logits).to_vec(),
                right: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Bounds {
                op: "cross_entropy",
                index: bad,
                len: k,
            });
        }
        let x = self.value(logits).data();
        let mut probs = vec![T::zero(); n * k];
        let mut total = T::zero();
        for r in 0..n {
            let row = &x[r * k..(r + 1) * k];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            total += lse - row[labels[r]];
            for c in 0..k {
                probs[r * k + c] = (row[c] - lse).exp();
            }
        }
        let loss = total / T::of(n.max(1) as f64);
        let rg = self.rg(logits);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, labels, probs }, rg))
    }

    /// Mean squared error, optionally restricted to entries with mask 1.
    pub fn mse(&mut self, pred: Var, target: Arc<Vec<T>>, mask: Option<Arc<Vec<T>>>) -> Result<Var> {
        let p = self.value(pred).data();
        if p.len() != target.len() || mask.as_ref().is_some_and(|m| m.len() != p.len()) {
            return Err(Error::Dimension {
                op: "mse",
                left: self.shape(pred).to_vec(),
                right: vec![target.len()],
            });
        }
        let mut total = T::zero();
        let mut count = T::zero();
        for (i, (&pv, &t)) in p.iter().zip(target.iter()).enumerate() {
            let w = mask.as_ref().map_or(T::one(), |m| m[i]);
            total += w * (pv - t) * (pv - t);
            count += w;
        }
        let loss = if count > T::zero() { total / count } else { T::zero() };
        let rg = self.rg(pred);
        Ok(self.push(Tensor::scalar(loss), Op::Mse { pred, target, mask }, rg))
    }

    /// Reverse sweep from a scalar `loss`. Runs once per [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if self.backward_done {
            return Err(Error::Contract("backward already ran on this tape; call zero_grad first".into()));
        }
        self.backward_done = true;
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            self.propagate(i, &g)?;
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn accum(&mut self, v: Var, delta: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(delta) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&mut self, i: usize, g: &[T]) -> Result<()> {
        let mut pending: Vec<(Var, Vec<T>)> = Vec::with_capacity(2);
        let node = &self.nodes[i];
        let out = node.value.data();
        let nodes = &self.nodes;
        let val = |v: Var| nodes[v.0].value.data();
        let rg = |v: Var| nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = matrix_dims("matmul", nodes[a.0].value.shape())?;
                let n = nodes[b.0].value.cols();
                if rg(*a) {
                    pending.push((*a, kernels::matmul_nt(g, val(*b), m, k, n)));
                }
                if rg(*b) {
                    pending.push((*b, kernels::matmul_tn(val(*a), g, m, k, n)));
                }
            }
            Op::Add(a, b) => {
                pending.push((*a, g.to_vec()));
                pending.push((*b, g.to_vec()));
            }
            Op::Sub(a, b) => {
                pending.push((*a, g.to_vec()));
                pending.push((*b, g.iter().map(|&x| -x).collect()));
            }
            Op::Mul(a, b) => {
                let (xa, xb) = (val(*a), val(*b));
                pending.push((*a, g.iter().zip(xb).map(|(&gv, &y)| gv * y).collect()));
                pending.push((*b, g.iter().zip(xa).map(|(&gv, &x)| gv * x).collect()));
            }
            Op::Scale(a, s) => pending.push((*a, g.iter().map(|&x| x * *s).collect())),
            Op::AddBias(x, bias) => {
                pending.push((*x, g.to_vec()));
                if rg(*bias) {
                    let c = nodes[bias.0].value.len();
                    let mut gb = vec![T::zero(); c];
                    for row in g.chunks(c.max(1)) {
                        for (a, &b) in gb.iter_mut().zip(row) {
                            *a += b;
                        }
                    }
                    pending.push((*bias, gb));
                }
            }
            Op::Tanh(a) => pending.push((*a, g.iter().zip(out).map(|(&gv, &y)| gv * (T::one() - y * y)).collect())),
            Op::Relu(a) => pending.push((
                *a,
                g.iter()
                    .zip(val(*a))
                    .map(|(&gv, &x)| if x > T::zero() { gv } else { T::zero() })
                    .collect(),
            )),
            Op::Sigmoid(a) => pending.push((*a, g.iter().zip(out).map(|(&gv, &y)| gv * y * (T::one() - y)).collect())),
            Op::Exp(a) => pending.push((*a, g.iter().zip(out).map(|(&gv, &y)| gv * y).collect())),
            Op::SegmentSoftmax(a, segments) => {
                let c = node.value.cols().max(1);
                let mut gx = vec![T::zero(); g.len()];
                for range in segments.iter() {
                    for col in 0..c {
                        let mut inner = T::zero();
                        for r in range.clone() {
                            inner += out[r * c + col] * g[r * c + col];
                        }
                        for r in range.clone() {
                            let idx = r * c + col;
                            gx[idx] = out[idx] * (g[idx] - inner);
                        }
                    }
                }
                pending.push((*a, gx));
            }
            Op::GatherScatter {
                source,
                weight,
                edges,
                per_channel,
            } => {
                let (rows, q) = matrix_dims("gather_scatter", nodes[source.0].value.shape())?;
                let batch = rows / edges.nodes();
                let (gs, gw) = kernels::scatter_backward(
                    edges,
                    val(*source),
                    val(*weight),
                    g,
                    *per_channel,
                    batch,
                    q,
                    rg(*source),
                    rg(*weight),
                );
                if let Some(gs) = gs {
                    pending.push((*source, gs));
                }
                if let Some(gw) = gw {
                    pending.push((*weight, gw));
                }
            }
            Op::BlockAggregate {
                source,
                edges,
                blocks,
                width,
            } => {
                let (rows, cols) = matrix_dims("block_aggregate", nodes[source.0].value.shape())?;
                let n = edges.nodes();
                let batch = rows / n;
                let mut gs = vec![T::zero(); rows * cols];
                for bi in 0..batch {
                    for (e, (&s, &d)) in edges.src().iter().zip(edges.dst()).enumerate() {
                        let off = (bi * n + s) * cols + blocks[e] * width;
                        let gd = &g[(bi * n + d) * width..(bi * n + d + 1) * width];
                        for (t, &gv) in gs[off..off + width].iter_mut().zip(gd) {
                            *t += gv;
                        }
                    }
                }
                pending.push((*source, gs));
            }
            Op::ExpandGroups { input, width } => {
                let len = nodes[input.0].value.len();
                let mut gx = vec![T::zero(); len];
                for (idx, &gv) in g.iter().enumerate() {
                    gx[idx / width] += gv;
                }
                pending.push((*input, gx));
            }
            Op::Column { input, col } => {
                let c = nodes[input.0].value.cols().max(1);
                let mut gx = vec![T::zero(); nodes[input.0].value.len()];
                for (r, &gv) in g.iter().enumerate() {
                    gx[r * c + col] = gv;
                }
                pending.push((*input, gx));
            }
            Op::LookupColumns { table, index } => {
                let (q, r) = matrix_dims("lookup_columns", nodes[table.0].value.shape())?;
                let mut gt = vec![T::zero(); q * r];
                for (e, &col) in index.iter().enumerate() {
                    for row in 0..q {
                        gt[row * r + col] += g[e * q + row];
                    }
                }
                pending.push((*table, gt));
            }
            Op::TileRows(input) => {
                let len = nodes[input.0].value.len();
                let mut gx = vec![T::zero(); len];
                for chunk in g.chunks(len.max(1)) {
                    for (a, &b) in gx.iter_mut().zip(chunk) {
                        *a += b;
                    }
                }
                pending.push((*input, gx));
            }
            Op::ConcatCols(a, b) => {
                let ca = nodes[a.0].value.cols();
                let cb = nodes[b.0].value.cols();
                let rows = nodes[a.0].value.rows();
                let mut ga = Vec::with_capacity(rows * ca);
                let mut gb = Vec::with_capacity(rows * cb);
                for r in 0..rows {
                    let row = &g[r * (ca + cb)..(r + 1) * (ca + cb)];
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..]);
                }
                pending.push((*a, ga));
                pending.push((*b, gb));
            }
            Op::Reshape(a) => pending.push((*a, g.to_vec())),
            Op::Pool {
                input,
                assignment,
                mode,
                routes,
                counts,
            } => {
                let len = nodes[input.0].value.len();
                let mut gx = vec![T::zero(); len];
                match mode {
                    PoolMode::Mean => {
                        let n = assignment.len();
                        let m = counts.len();
                        let q = node.value.cols().max(1);
                        let batch = len / (n * q);
                        for b in 0..batch {
                            for (i, &a) in assignment.iter().enumerate() {
                                let inv = T::one() / T::of(counts[a] as f64);
                                let src = &g[(b * m + a) * q..(b * m + a + 1) * q];
                                for (t, &gv) in gx[(b * n + i) * q..(b * n + i + 1) * q].iter_mut().zip(src) {
                                    *t += gv * inv;
                                }
                            }
                        }
                    }
                    PoolMode::Max => {
                        for (slot, &r) in routes.iter().enumerate() {
                            gx[r] += g[slot];
                        }
                    }
                }
                pending.push((*input, gx));
            }
            Op::MaskMul { input, mask } => {
                pending.push((*input, g.iter().zip(mask).map(|(&gv, &m)| gv * m).collect()));
            }
            Op::GaussianLogKernel { points, mu, log_var } => {
                let (e, d) = (points.rows(), points.cols());
                let k = nodes[mu.0].value.rows();
                let v = points.data();
                let m = val(*mu);
                let prec: Vec<T> = val(*log_var).iter().map(|&s| (-s).exp()).collect();
                let half = T::of(0.5);
                let mut gmu = vec![T::zero(); k * d];
                let mut gls = vec![T::zero(); k * d];
                for ei in 0..e {
                    for ki in 0..k {
                        let gv = g[ei * k + ki];
                        for di in 0..d {
                            let diff = v[ei * d + di] - m[ki * d + di];
                            let p = prec[ki * d + di];
                            gmu[ki * d + di] += gv * diff * p;
                            gls[ki * d + di] += gv * half * diff * diff * p;
                        }
                    }
                }
                pending.push((*mu, gmu));
                pending.push((*log_var, gls));
            }
            Op::Sum(a) => {
                let len = nodes[a.0].value.len();
                pending.push((*a, vec![g[0]; len]));
            }
            Op::Mean(a) => {
                let len = nodes[a.0].value.len();
                pending.push((*a, vec![g[0] / T::of(len.max(1) as f64); len]));
            }
            Op::Bce { pred, target } => {
                let p = val(*pred);
                let lo = T::of(BCE_CLAMP);
                let hi = T::one() - lo;
                let scale = g[0] / T::of(p.len().max(1) as f64);
                let gp = p
                    .iter()
                    .zip(target.iter())
                    .map(|(&pv, &t)| {
                        if pv <= lo || pv >= hi {
                            T::zero()
                        } else {
                            scale * (pv - t) / (pv * (T::one() - pv))
                        }
                    })
                    .collect();
                pending.push((*pred, gp));
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let k = nodes[logits.0].value.cols().max(1);
                let scale = g[0] / T::of(labels.len().max(1) as f64);
                let mut gl: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (r, &l) in labels.iter().enumerate() {
                    gl[r * k + l] -= scale;
                }
                pending.push((*logits, gl));
            }
            Op::Mse { pred, target, mask } => {
                let p = val(*pred);
                let count: T = match mask {
                    Some(m) => m.iter().copied().sum(),
                    None => T::of(p.len() as f64),
                };
                if count > T::zero() {
                    let scale = g[0] * T::of(2.0) / count;
                    let gp = p
                        .iter()
                        .zip(target.iter())
                        .enumerate()
                        .map(|(i, (&pv, &t))| {
                            let w = mask.as_ref().map_or(T::one(), |m| m[i]);
                            scale * w * (pv - t)
                        })
                        .collect();
                    pending.push((*pred, gp));
                }
            }
        }
        for (v, delta) in pending {
            self.accum(v, delta);
        }
        Ok(())
    }
}
