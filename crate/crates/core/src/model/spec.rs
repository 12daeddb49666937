use serde::{Deserialize, Serialize};

use crate::conv::{param_count, GridStencil, LayerDims, LayerKind};
use crate::error::{Error, Result};
use crate::tensor::PoolMode;

pub const DEFAULT_FILTER_HIDDEN: usize = 256;
pub const DEFAULT_CHEBY_ORDER: usize = 3;
pub const DEFAULT_MONET_KERNELS: usize = 2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    None,
    Tanh,
    Relu,
}

fn default_groups() -> usize {
    1
}

fn default_true() -> bool {
    true
}

fn default_hidden() -> usize {
    DEFAULT_FILTER_HIDDEN
}

/// One layer of the convolution stack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Expected neighborhood size of the graph this layer runs on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Channel groups `C` (DSGC).
    #[serde(default = "default_groups")]
    pub groups: usize,
    /// Filter normalization (DSGC, MPNN) or GAT-style normalization (MoNet).
    #[serde(default = "default_true")]
    pub normalize: bool,
    /// Filter MLP hidden width (DSGC, MPNN).
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    /// MoNet kernels or ChebyNet order; 0 selects the operator default.
    #[serde(default)]
    pub kernels: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub dropout: f64,
}

impl LayerSpec {
    pub fn new(kind: LayerKind, in_channels: usize, out_channels: usize) -> Self {
        Self {
            kind,
            in_channels,
            out_channels,
            k: None,
            groups: 1,
            normalize: true,
            hidden: DEFAULT_FILTER_HIDDEN,
            kernels: 0,
            activation: Activation::None,
            dropout: 0.0,
        }
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = Some(k);
        self
    }

    pub fn with_groups(mut self, c: usize) -> Self {
        self.groups = c;
        self
    }

    pub fn with_hidden(mut self, h: usize) -> Self {
        self.hidden = h;
        self
    }

    pub fn with_kernels(mut self, k: usize) -> Self {
        self.kernels = k;
        self
    }

    pub fn with_normalize(mut self, on: bool) -> Self {
        self.normalize = on;
        self
    }

    pub fn with_activation(mut self, a: Activation) -> Self {
        self.activation = a;
        self
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout = rate;
        self
    }

    /// Kernel count / order with the operator default applied.
    pub fn effective_kernels(&self) -> usize {
        match (self.kind, self.kernels) {
            (LayerKind::Cheby, 0) => DEFAULT_CHEBY_ORDER,
            (LayerKind::Monet, 0) => DEFAULT_MONET_KERNELS,
            (_, k) => k,
        }
    }

    pub fn effective_groups(&self) -> usize {
        match self.kind {
            LayerKind::Mpnn => 1,
            _ => self.groups,
        }
    }

    pub fn dims(&self) -> LayerDims {
        LayerDims {
            p: self.in_channels,
            q: self.out_channels,
            c: self.effective_groups(),
            h: self.hidden,
            k: self.effective_kernels(),
            r: GridStencil::SIZE,
        }
    }

    pub fn param_count(&self) -> usize {
        param_count(self.kind, self.dims())
    }
}

/// Cluster pooling inserted after a layer; the next level has `⌈n / factor⌉` nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolSpec {
    pub after_layer: usize,
    pub factor: usize,
    #[serde(default)]
    pub mode: PoolMode,
}

impl PoolSpec {
    pub fn clusters_for(&self, n: usize) -> usize {
        n.div_ceil(self.factor.max(1)).max(1)
    }
}

/// Task head applied after the convolution stack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HeadSpec {
    /// Per-node probability `sigmoid(x·w + b)`.
    NodeSigmoid,
    /// Per-node scalar `x·w + b`.
    NodeRegression,
    /// Flatten all node features of a sample, then an MLP ending in class logits.
    Classifier {
        #[serde(default)]
        hidden: Vec<usize>,
        classes: usize,
        #[serde(default)]
        dropout: f64,
    },
}

/// Ordered layer stack, pooling positions, head and node embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// Channels of the data fed to the model (before embeddings are appended).
    pub input_channels: usize,
    /// Width of the learned per-node embedding concatenated to the input; 0 disables it.
    #[serde(default)]
    pub embed_dim: usize,
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub pools: Vec<PoolSpec>,
    pub head: HeadSpec,
    /// Activation between the hidden layers of a classifier head.
    #[serde(default)]
    pub head_activation: Activation,
}

impl ModelSpec {
    /// Channels seen by the first layer: data channels plus embedding width.
    pub fn first_layer_inputs(&self) -> usize {
        self.input_channels + self.embed_dim
    }

    pub fn final_channels(&self) -> usize {
        self.layers
            .last()
            .map_or(self.first_layer_inputs(), |l| l.out_channels)
    }

    pub fn conv_layers(&self) -> usize {
        self.layers.iter().filter(|l| l.kind.is_graph_op()).count()
    }

    /// Structural checks that need no graph: channel chain, pooling order, groups, rates.
    pub fn validate(&self) -> Result<()> {
        let mut channels = self.first_layer_inputs();
        for (i, l) in self.layers.iter().enumerate() {
            if l.in_channels != channels {
                return Err(Error::layer_config(
                    i,
                    format!("expects {} input channels but receives {channels}", l.in_channels),
                ));
            }
            if l.kind == LayerKind::Lp && l.out_channels != l.in_channels {
                return Err(Error::layer_config(i, "label propagation keeps the channel count"));
            }
            if l.out_channels == 0 {
                return Err(Error::layer_config(i, "zero output channels"));
            }
            if l.kind == LayerKind::Dsgc && (l.groups == 0 || l.out_channels % l.groups != 0) {
                return Err(Error::layer_config(
                    i,
                    format!("groups C = {} must divide Q = {}", l.groups, l.out_channels),
                ));
            }
            if matches!(l.kind, LayerKind::Dsgc | LayerKind::Mpnn) && l.hidden == 0 {
                return Err(Error::layer_config(i, "filter hidden width must be positive"));
            }
            if !(0.0..1.0).contains(&l.dropout) {
                return Err(Error::layer_config(i, format!("dropout {} outside [0, 1)", l.dropout)));
            }
            channels = l.out_channels;
        }
        let mut last = None;
        for p in &self.pools {
            if p.after_layer >= self.layers.len() {
                return Err(Error::config(format!(
                    "pooling after layer {} but the stack has {} layers",
                    p.after_layer,
                    self.layers.len()
                )));
            }
            if last.is_some_and(|l| p.after_layer <= l) {
                return Err(Error::config("pooling positions must be strictly increasing"));
            }
            if p.factor == 0 {
                return Err(Error::layer_config(p.after_layer, "pooling factor must be positive"));
            }
            last = Some(p.after_layer);
        }
        if let HeadSpec::Classifier { classes, dropout, .. } = &self.head {
            if *classes < 2 {
                return Err(Error::config("classifier needs at least two classes"));
            }
            if !(0.0..1.0).contains(dropout) {
                return Err(Error::config(format!("head dropout {dropout} outside [0, 1)")));
            }
        }
        Ok(())
    }

    /// Level (graph resolution) on which layer `i` runs.
    pub fn level_of(&self, i: usize) -> usize {
        self.pools.iter().filter(|p| p.after_layer < i).count()
    }

    pub fn levels(&self) -> usize {
        self.pools.len() + 1
    }

    /// Closed-form parameter count for a graph stack with the given node count per level.
    pub fn param_count(&self, nodes_per_level: &[usize]) -> usize {
        let convs: usize = self.layers.iter().map(|l| l.param_count()).sum();
        let embed = self.embed_dim * nodes_per_level.first().copied().unwrap_or(0);
        let last_nodes = nodes_per_level.last().copied().unwrap_or(0);
        convs + embed + self.head_param_count(last_nodes)
    }

    pub fn head_param_count(&self, last_nodes: usize) -> usize {
        let c = self.final_channels();
        match &self.head {
            HeadSpec::NodeSigmoid | HeadSpec::NodeRegression => c + 1,
            HeadSpec::Classifier { hidden, classes, .. } => {
                let mut width = c * last_nodes;
                let mut total = 0;
                for &h in hidden.iter().chain(std::iter::once(classes)) {
                    total += width * h + h;
                    width = h;
                }
                total
            }
        }
    }
}
