//! The convolution operator family over a [`NeighborGraph`].
//!
//! Every layer follows the same calling convention: its parameters are bound
//! into the tape in the order returned by `params()`, and `forward` receives
//! those [`Var`]s together with the prepared [`GraphLevel`] and the batched
//! node features `x: (B·N)×P`.

mod cheby;
mod dsgc;
mod filter;
mod grid;
mod monet;
mod simple;

pub use cheby::ChebyLayer;
pub use dsgc::{mpnn_conv, DsgcLayer};
pub use filter::FilterMlp;
pub use grid::{DscLayer, FullConvLayer, GridStencil};
pub use monet::MonetLayer;
pub use simple::{graph_conv, label_propagate, GcLayer, LinearLayer};

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{scaled_laplacian, LaplacianOperator, NeighborGraph};
use crate::tensor::{EdgeIndex, Parameter, Real, Tape, Tensor, Var};

/// Operator tag shared by layer specs, manifests and the CLI.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Lp,
    Gc,
    Dsgc,
    Mpnn,
    Monet,
    Cheby,
    Dsc,
    Full,
    Linear,
}

impl LayerKind {
    pub const ALL: [LayerKind; 9] = [
        LayerKind::Lp,
        LayerKind::Gc,
        LayerKind::Dsgc,
        LayerKind::Mpnn,
        LayerKind::Monet,
        LayerKind::Cheby,
        LayerKind::Dsc,
        LayerKind::Full,
        LayerKind::Linear,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Lp => "lp",
            LayerKind::Gc => "gc",
            LayerKind::Dsgc => "dsgc",
            LayerKind::Mpnn => "mpnn",
            LayerKind::Monet => "monet",
            LayerKind::Cheby => "cheby",
            LayerKind::Dsc => "dsc",
            LayerKind::Full => "full",
            LayerKind::Linear => "linear",
        }
    }

    /// Whether the operator aggregates over neighborhoods (everything but `linear`).
    pub fn is_graph_op(self) -> bool {
        self != LayerKind::Linear
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LayerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Parameter(format!("unknown layer kind '{s}'")))
    }
}

/// Sizes that determine a layer's trainable parameter count.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDims {
    pub p: usize,
    pub q: usize,
    /// Channel groups (DSGC).
    pub c: usize,
    /// Filter MLP hidden width (DSGC, MPNN).
    pub h: usize,
    /// Kernels (MoNet) or polynomial order (ChebyNet).
    pub k: usize,
    /// Grid stencil size (DSC, full convolution).
    pub r: usize,
}

/// Closed-form trainable scalar count of a layer.
pub fn param_count(kind: LayerKind, d: LayerDims) -> usize {
    let pq = d.p * d.q;
    match kind {
        LayerKind::Lp => 0,
        LayerKind::Gc => pq,
        LayerKind::Dsgc => pq + (5 * d.h + d.h) + (d.h * d.c + d.c),
        LayerKind::Mpnn => pq + (5 * d.h + d.h) + (d.h + 1),
        LayerKind::Monet => d.k * pq + d.k * 10,
        LayerKind::Cheby => d.k * pq,
        LayerKind::Dsc => pq + d.q * d.r,
        LayerKind::Full => pq * d.r,
        LayerKind::Linear => pq + d.q,
    }
}

/// Per-layer entry of a serialized model manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerManifest {
    pub layer_kind: LayerKind,
    #[serde(rename = "P")]
    pub p: usize,
    #[serde(rename = "Q")]
    pub q: usize,
    #[serde(rename = "C")]
    pub c: usize,
    #[serde(rename = "H")]
    pub h: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub normalize: bool,
}

/// One resolution level: the graph plus the constant tensors the operators read.
pub struct GraphLevel<T> {
    graph: NeighborGraph,
    delta: Tensor<T>,
    adjacency: Tensor<T>,
    laplacian: OnceLock<(Arc<LaplacianOperator>, Arc<EdgeIndex>, Tensor<T>)>,
    stencil: OnceLock<std::result::Result<Arc<Vec<usize>>, String>>,
}

impl<T: Real> GraphLevel<T> {
    pub fn new(graph: NeighborGraph) -> Self {
        let graph = if graph.adjacency().is_some() {
            graph
        } else {
            graph.with_normalized_adjacency()
        };
        let delta = graph.delta_tensor();
        let adjacency = graph.adjacency_tensor().expect("attached above");
        Self {
            graph,
            delta,
            adjacency,
            laplacian: OnceLock::new(),
            stencil: OnceLock::new(),
        }
    }

    pub fn graph(&self) -> &NeighborGraph {
        &self.graph
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn delta(&self) -> &Tensor<T> {
        &self.delta
    }

    pub fn adjacency(&self) -> &Tensor<T> {
        &self.adjacency
    }

    /// Cached scaled Laplacian with its sparse aggregation form.
    pub fn laplacian(&self) -> Result<&(Arc<LaplacianOperator>, Arc<EdgeIndex>, Tensor<T>)> {
        if self.laplacian.get().is_none() {
            let op = scaled_laplacian(&self.graph)?;
            let (edges, w) = op.sparse();
            let _ = self.laplacian.set((Arc::new(op), edges, w));
        }
        Ok(self.laplacian.get().expect("initialized"))
    }

    /// Stencil index of every edge for the 3×3 grid stencil.
    pub fn grid_offsets(&self, stencil: GridStencil) -> Result<Arc<Vec<usize>>> {
        let cached = self.stencil.get_or_init(|| stencil.index_edges(&self.graph).map(Arc::new));
        cached.clone().map_err(Error::Contract)
    }
}

/// Bind parameters into the tape, preserving order.
pub fn bind<T: Real>(tape: &mut Tape<T>, params: &[&Parameter<T>]) -> Vec<Var> {
    params.iter().map(|p| tape.param(p)).collect()
}

/// Any layer of a model stack.
#[derive(Clone, Debug)]
pub enum ConvLayer<T> {
    Lp,
    Gc(GcLayer<T>),
    Dsgc(DsgcLayer<T>),
    Mpnn(DsgcLayer<T>),
    Monet(MonetLayer<T>),
    Cheby(ChebyLayer<T>),
    Dsc(DscLayer<T>),
    Full(FullConvLayer<T>),
    Linear(LinearLayer<T>),
}

impl<T: Real> ConvLayer<T> {
    pub fn kind(&self) -> LayerKind {
        match self {
            ConvLayer::Lp => LayerKind::Lp,
            ConvLayer::Gc(_) => LayerKind::Gc,
            ConvLayer::Dsgc(_) => LayerKind::Dsgc,
            ConvLayer::Mpnn(_) => LayerKind::Mpnn,
            ConvLayer::Monet(_) => LayerKind::Monet,
            ConvLayer::Cheby(_) => LayerKind::Cheby,
            ConvLayer::Dsc(_) => LayerKind::Dsc,
            ConvLayer::Full(_) => LayerKind::Full,
            ConvLayer::Linear(_) => LayerKind::Linear,
        }
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        match self {
            ConvLayer::Lp => Vec::new(),
            ConvLayer::Gc(l) => l.params(),
            ConvLayer::Dsgc(l) | ConvLayer::Mpnn(l) => l.params(),
            ConvLayer::Monet(l) => l.params(),
            ConvLayer::Cheby(l) => l.params(),
            ConvLayer::Dsc(l) => l.params(),
            ConvLayer::Full(l) => l.params(),
            ConvLayer::Linear(l) => l.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        match self {
            ConvLayer::Lp => Vec::new(),
            ConvLayer::Gc(l) => l.params_mut(),
            ConvLayer::Dsgc(l) | ConvLayer::Mpnn(l) => l.params_mut(),
            ConvLayer::Monet(l) => l.params_mut(),
            ConvLayer::Cheby(l) => l.params_mut(),
            ConvLayer::Dsc(l) => l.params_mut(),
            ConvLayer::Full(l) => l.params_mut(),
            ConvLayer::Linear(l) => l.params_mut(),
        }
    }

    /// Trainable scalars actually held by the layer.
    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    pub fn manifest(&self, in_channels: usize) -> LayerManifest {
        let mut m = LayerManifest {
            layer_kind: self.kind(),
            p: in_channels,
            q: in_channels,
            c: 1,
            h: 0,
            k: 0,
            normalize: false,
        };
        match self {
            ConvLayer::Lp => {}
            ConvLayer::Gc(l) => m.q = l.out_channels(),
            ConvLayer::Dsgc(l) | ConvLayer::Mpnn(l) => {
                m.q = l.out_channels();
                m.c = l.groups();
                m.h = l.filter().hidden();
                m.normalize = l.normalize();
            }
            ConvLayer::Monet(l) => {
                m.q = l.out_channels();
                m.k = l.kernels();
                m.normalize = l.gat_normalize();
            }
            ConvLayer::Cheby(l) => {
                m.q = l.out_channels();
                m.k = l.order();
            }
            ConvLayer::Dsc(l) => {
                m.q = l.out_channels();
                m.k = GridStencil::SIZE;
            }
            ConvLayer::Full(l) => {
                m.q = l.out_channels();
                m.k = GridStencil::SIZE;
            }
            ConvLayer::Linear(l) => m.q = l.out_channels(),
        }
        m
    }

    pub fn dims(&self, in_channels: usize) -> LayerDims {
        let m = self.manifest(in_channels);
        LayerDims {
            p: m.p,
            q: m.q,
            c: m.c,
            h: m.h,
            k: m.k,
            r: GridStencil::SIZE,
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, p: &[Var], level: &GraphLevel<T>, x: Var) -> Result<Var> {
        match self {
            ConvLayer::Lp => label_propagate(tape, level, x),
            ConvLayer::Gc(l) => l.forward(tape, p, level, x),
            ConvLayer::Dsgc(l) | ConvLayer::Mpnn(l) => l.forward(tape, p, level, x),
            ConvLayer::Monet(l) => l.forward(tape, p, level, x),
            ConvLayer::Cheby(l) => l.forward(tape, p, level, x),
            ConvLayer::Dsc(l) => l.forward(tape, p, level, x),
            ConvLayer::Full(l) => l.forward(tape, p, level, x),
            ConvLayer::Linear(l) => l.forward(tape, p, x),
        }
    }
}
