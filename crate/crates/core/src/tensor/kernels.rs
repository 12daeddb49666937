use crate::error::{Error, Result};

use super::Real;

/// Directed edge list `src -> dst` over `n` nodes.
///
/// Accumulation into destinations always runs in edge-index order, so sums
/// are reproducible bit for bit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeIndex {
    n: usize,
    src: Vec<usize>,
    dst: Vec<usize>,
}

impl EdgeIndex {
    pub fn new(n: usize, src: Vec<usize>, dst: Vec<usize>) -> Result<Self> {
        if src.len() != dst.len() {
            return Err(Error::Dimension {
                op: "edge_index",
                left: vec![src.len()],
                right: vec![dst.len()],
            });
        }
        for &i in src.iter().chain(&dst) {
            if i >= n {
                return Err(Error::Bounds {
                    op: "edge_index",
                    index: i,
                    len: n,
                });
            }
        }
        Ok(Self { n, src, dst })
    }

    pub fn nodes(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    pub fn src(&self) -> &[usize] {
        &self.src
    }

    pub fn dst(&self) -> &[usize] {
        &self.dst
    }
}

/// Contiguous partition of `[0, len)` given by boundary offsets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segments {
    offsets: Vec<usize>,
}

impl Segments {
    /// Boundaries `0 = o_0 < o_1 < ... < o_s = len`. Every segment must be non-empty.
    pub fn from_offsets(offsets: Vec<usize>) -> Result<Self> {
        if offsets.first() != Some(&0) {
            return Err(Error::Structural("segment offsets must start at 0".into()));
        }
        if let Some(w) = offsets.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Structural(format!("segment {w} is empty")));
        }
        Ok(Self { offsets })
    }

    pub fn from_lengths(lengths: &[usize]) -> Result<Self> {
        let mut offsets = Vec::with_capacity(lengths.len() + 1);
        offsets.push(0);
        let mut acc = 0;
        for &l in lengths {
            acc += l;
            offsets.push(acc);
        }
        Self::from_offsets(offsets)
    }

    pub fn count(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Total length covered.
    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn range(&self, s: usize) -> std::ops::Range<usize> {
        self.offsets[s]..self.offsets[s + 1]
    }

    pub fn iter(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        self.offsets.windows(2).map(|w| w[0]..w[1])
    }
}

#[inline]
fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

#[inline]
fn dot<T: Real>(x: &[T], y: &[T]) -> T {
    x.iter().zip(y).fold(T::zero(), |acc, (&a, &b)| acc + a * b)
}

/// `c = a · b` with `a: m×k`, `b: k×n`.
pub(crate) fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av != T::zero() {
                axpy(av, &b[p * n..(p + 1) * n], row);
            }
        }
    }
    c
}

/// `aᵀ · g` with `a: m×k`, `g: m×n`, giving `k×n`.
pub(crate) fn matmul_tn<T: Real>(a: &[T], g: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av != T::zero() {
                axpy(av, grow, &mut out[p * n..(p + 1) * n]);
            }
        }
    }
    out
}

/// `g · bᵀ` with `g: m×n`, `b: k×n`, giving `m×k`.
pub(crate) fn matmul_nt<T: Real>(g: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * k];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            out[i * k + p] = dot(grow, &b[p * n..(p + 1) * n]);
        }
    }
    out
}

/// Weighted neighborhood aggregation over a batch of `batch` graphs that share `edges`.
///
/// `source` is `(batch·n)×q`; `weight` has `e` entries (per-edge scalar) or
/// `e·q` entries (per-edge, per-channel).
pub(crate) fn scatter_forward<T: Real>(
    edges: &EdgeIndex,
    source: &[T],
    weight: &[T],
    per_channel: bool,
    batch: usize,
    q: usize,
) -> Vec<T> {
    let n = edges.nodes();
    let mut out = vec![T::zero(); batch * n * q];
    for b in 0..batch {
        let base = b * n * q;
        for (e, (&s, &d)) in edges.src.iter().zip(&edges.dst).enumerate() {
            let src = &source[base + s * q..base + (s + 1) * q];
            let dst = &mut out[base + d * q..base + (d + 1) * q];
            if per_channel {
                let w = &weight[e * q..(e + 1) * q];
                for ((o, &x), &wv) in dst.iter_mut().zip(src).zip(w) {
                    *o += wv * x;
                }
            } else {
                axpy(weight[e], src, dst);
            }
        }
    }
    out
}

/// Gradients of [`scatter_forward`] with respect to source and weight.
pub(crate) fn scatter_backward<T: Real>(
    edges: &EdgeIndex,
    source: &[T],
    weight: &[T],
    grad_out: &[T],
    per_channel: bool,
    batch: usize,
    q: usize,
    want_source: bool,
    want_weight: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let n = edges.nodes();
    let mut gs = want_source.then(|| vec![T::zero(); source.len()]);
    let mut gw = want_weight.then(|| vec![T::zero(); weight.len()]);
    for b in 0..batch {
        let base = b * n * q;
        for (e, (&s, &d)) in edges.src.iter().zip(&edges.dst).enumerate() {
            let g = &grad_out[base + d * q..base + (d + 1) * q];
            if let Some(gs) = gs.as_mut() {
                let target = &mut gs[base + s * q..base + (s + 1) * q];
                if per_channel {
                    let w = &weight[e * q..(e + 1) * q];
                    for ((t, &gv), &wv) in target.iter_mut().zip(g).zip(w) {
                        *t += wv * gv;
                    }
                } else {
                    axpy(weight[e], g, target);
                }
            }
            if let Some(gw) = gw.as_mut() {
                let x = &source[base + s * q..base + (s + 1) * q];
                if per_channel {
                    let target = &mut gw[e * q..(e + 1) * q];
                    for ((t, &gv), &xv) in target.iter_mut().zip(g).zip(x) {
                        *t += gv * xv;
                    }
                } else {
                    gw[e] += dot(g, x);
                }
            }
        }
    }
    (gs, gw)
}
