//! Spatial neighbor graphs built from 2-D node coordinates.
//!
//! A [`NeighborGraph`] stores, for every destination node `i`, exactly `k`
//! incoming edges `j -> i` laid out contiguously, the first of which is the
//! self edge. Each edge carries the offset feature of [`edge_offset_feature`].

mod coarsen;
mod io;
mod laplacian;

pub use coarsen::{kmeans_coarsen, pool_apply, CoarseningMap};
pub use io::{EdgeRecord, GraphDocument};
pub use laplacian::{scaled_laplacian, LaplacianOperator};

use std::cmp::Ordering;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{EdgeIndex, Real, Segments, Tensor};

/// Length of the per-edge offset feature.
pub const DELTA_DIM: usize = 5;

/// Finite 2-D coordinates, one row per node.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeCoordinates {
    coords: Vec<[f64; 2]>,
}

impl NodeCoordinates {
    pub fn new(coords: Vec<[f64; 2]>) -> Result<Self> {
        if let Some(i) = coords.iter().position(|c| !c[0].is_finite() || !c[1].is_finite()) {
            return Err(Error::Parameter(format!("coordinate of node {i} is not finite")));
        }
        Ok(Self { coords })
    }

    /// Pixel centers of an `h×w` image, row-major, with `x = column` and `y = row`.
    pub fn grid(h: usize, w: usize) -> Self {
        let coords = (0..h)
            .flat_map(|r| (0..w).map(move |c| [c as f64, r as f64]))
            .collect();
        Self { coords }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn as_slice(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn get(&self, i: usize) -> [f64; 2] {
        self.coords[i]
    }

    /// Same points scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            coords: self.coords.iter().map(|c| [c[0] * factor, c[1] * factor]).collect(),
        }
    }

    /// Mean distance from each point to its nearest other point.
    pub fn mean_nearest_distance(&self) -> f64 {
        let n = self.coords.len();
        if n < 2 {
            return 1.0;
        }
        let total: f64 = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i)
                    .map(|j| sq_dist(self.coords[i], self.coords[j], None).sqrt())
                    .fold(f64::INFINITY, f64::min)
            })
            .sum();
        total / n as f64
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `(sign Δx, |Δx|, sign Δy, |Δy|, Δx² + Δy²)` with `Δ = c_i − c_j`.
pub fn edge_offset_feature(ci: [f64; 2], cj: [f64; 2]) -> [f64; DELTA_DIM] {
    offset_from_diff(ci[0] - cj[0], ci[1] - cj[1])
}

fn offset_from_diff(dx: f64, dy: f64) -> [f64; DELTA_DIM] {
    [sign(dx), dx.abs(), sign(dy), dy.abs(), dx * dx + dy * dy]
}

fn wrap(d: f64, period: f64) -> f64 {
    let mut w = d.rem_euclid(period);
    if w > period / 2.0 {
        w -= period;
    }
    w
}

fn diff(a: [f64; 2], b: [f64; 2], period: Option<[f64; 2]>) -> (f64, f64) {
    let (dx, dy) = (a[0] - b[0], a[1] - b[1]);
    match period {
        Some(p) => (wrap(dx, p[0]), wrap(dy, p[1])),
        None => (dx, dy),
    }
}

fn sq_dist(a: [f64; 2], b: [f64; 2], period: Option<[f64; 2]>) -> f64 {
    let (dx, dy) = diff(a, b, period);
    dx * dx + dy * dy
}

/// k-nearest-neighbor graph with per-edge offset features.
#[derive(Clone, Debug)]
pub struct NeighborGraph {
    k: usize,
    coords: NodeCoordinates,
    period: Option<[f64; 2]>,
    edges: Arc<EdgeIndex>,
    segments: Arc<Segments>,
    delta: Vec<[f64; DELTA_DIM]>,
    adjacency: Option<Vec<f64>>,
}

/// Build the kNN graph: node `i`'s neighborhood is itself plus the `k − 1`
/// closest other nodes, ties broken by lower index.
pub fn knn_build(coords: &NodeCoordinates, k: usize) -> Result<NeighborGraph> {
    NeighborGraph::build(coords, k, None)
}

/// As [`knn_build`] on a torus with the given periods; offsets use the shortest wrapped displacement.
pub fn knn_build_periodic(coords: &NodeCoordinates, k: usize, period: [f64; 2]) -> Result<NeighborGraph> {
    if !(period[0] > 0.0 && period[1] > 0.0) {
        return Err(Error::Parameter("torus periods must be positive".into()));
    }
    NeighborGraph::build(coords, k, Some(period))
}

impl NeighborGraph {
    fn build(coords: &NodeCoordinates, k: usize, period: Option<[f64; 2]>) -> Result<Self> {
        let n = coords.len();
        if k == 0 || k > n {
            return Err(Error::Parameter(format!("k = {k} must lie in 1..={n}")));
        }
        let pts = coords.as_slice();
        let mut src = Vec::with_capacity(n * k);
        let mut dst = Vec::with_capacity(n * k);
        let mut delta = Vec::with_capacity(n * k);
        let mut candidates: Vec<(f64, usize)> = Vec::with_capacity(n);
        for i in 0..n {
            candidates.clear();
            candidates.extend((0..n).filter(|&j| j != i).map(|j| (sq_dist(pts[i], pts[j], period), j)));
            let take = k - 1;
            if take > 0 && take < candidates.len() {
                candidates.select_nth_unstable_by(take - 1, by_distance_then_index);
                candidates.truncate(take);
            }
            candidates.sort_by(by_distance_then_index);
            for &j in std::iter::once(&i).chain(candidates.iter().take(take).map(|(_, j)| j)) {
                src.push(j);
                dst.push(i);
                let (dx, dy) = diff(pts[i], pts[j], period);
                delta.push(offset_from_diff(dx, dy));
            }
        }
        let edges = EdgeIndex::new(n, src, dst)?;
        let segments = Segments::from_lengths(&vec![k; n])?;
        Ok(Self {
            k,
            coords: coords.clone(),
            period,
            edges: Arc::new(edges),
            segments: Arc::new(segments),
            delta,
            adjacency: None,
        })
    }

    pub(crate) fn from_parts(
        k: usize,
        coords: NodeCoordinates,
        src: Vec<usize>,
        delta: Vec<[f64; DELTA_DIM]>,
    ) -> Result<Self> {
        let n = coords.len();
        if k == 0 || src.len() != n * k || delta.len() != src.len() {
            return Err(Error::Structural(format!(
                "graph with n = {n}, k = {k} needs {} edges, found {}",
                n * k,
                src.len()
            )));
        }
        let dst: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, k)).collect();
        for i in 0..n {
            if !src[i * k..(i + 1) * k].contains(&i) {
                return Err(Error::Structural(format!("node {i} has no self edge")));
            }
        }
        Ok(Self {
            k,
            coords,
            period: None,
            edges: Arc::new(EdgeIndex::new(n, src, dst)?),
            segments: Arc::new(Segments::from_lengths(&vec![k; n])?),
            delta,
            adjacency: None,
        })
    }

    pub fn n(&self) -> usize {
        self.coords.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn coords(&self) -> &NodeCoordinates {
        &self.coords
    }

    pub fn period(&self) -> Option<[f64; 2]> {
        self.period
    }

    pub fn edges(&self) -> &Arc<EdgeIndex> {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Destination-grouped segments, one per node.
    pub fn segments(&self) -> &Arc<Segments> {
        &self.segments
    }

    pub fn deltas(&self) -> &[[f64; DELTA_DIM]] {
        &self.delta
    }

    /// Ordered neighbor list of node `i` (self first).
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.edges.src()[i * self.k..(i + 1) * self.k]
    }

    /// Offset features as an `E×5` tensor.
    pub fn delta_tensor<T: Real>(&self) -> Tensor<T> {
        let data = self.delta.iter().flatten().map(|&v| T::of(v)).collect();
        Tensor::new(vec![self.delta.len(), DELTA_DIM], data).expect("delta shape")
    }

    /// Attach the row-normalized adjacency `G_ij = 1/k`.
    pub fn with_normalized_adjacency(mut self) -> Self {
        self.adjacency = Some(normalized_adjacency(&self));
        self
    }

    /// Per-edge `G_ij`, when attached.
    pub fn adjacency(&self) -> Option<&[f64]> {
        self.adjacency.as_deref()
    }

    pub fn adjacency_tensor<T: Real>(&self) -> Result<Tensor<T>> {
        let g = self
            .adjacency()
            .ok_or_else(|| Error::Contract("graph carries no normalized adjacency G_ij".into()))?;
        Tensor::new(vec![g.len()], g.iter().map(|&v| T::of(v)).collect())
    }
}

fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Uniform row-normalized adjacency: every one of node `i`'s `k` edges gets `1/k`.
pub fn normalized_adjacency(g: &NeighborGraph) -> Vec<f64> {
    let w = 1.0 / g.k() as f64;
    vec![w; g.num_edges()]
}
