//! Model assembly: layer specs, multi-resolution graph stacks, forward passes and presets.

mod io;
mod presets;
mod spec;

pub use io::{with_suffix, ModelManifest, ParamEntry, BLOB_MAGIC, BLOB_VERSION, MANIFEST_VERSION};
pub use presets::{
    doc_classify_preset, grid_classify_preset, match_width, sim_task_preset, ts_forecast_preset, FORECAST_GROUPS,
    FORECAST_HIDDEN, FORECAST_LAYERS, FORECAST_WIDTH, SIM_GROUPS, SIM_HIDDEN, SIM_K, SIM_LAYERS, SIM_WIDTH,
};
pub use spec::{
    Activation, HeadSpec, LayerSpec, ModelSpec, PoolSpec, DEFAULT_CHEBY_ORDER, DEFAULT_FILTER_HIDDEN,
    DEFAULT_MONET_KERNELS,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conv::{
    bind, ChebyLayer, ConvLayer, DscLayer, DsgcLayer, FullConvLayer, GcLayer, GraphLevel, LayerKind, LinearLayer,
    MonetLayer,
};
use crate::error::{Error, Result};
use crate::graph::{kmeans_coarsen, knn_build, pool_apply, CoarseningMap, NeighborGraph};
use crate::tensor::{Parameter, Real, Tape, Tensor, Var};

/// Graphs at every resolution a model runs on, with the maps between them.
pub struct GraphStack<T> {
    levels: Vec<GraphLevel<T>>,
    maps: Vec<CoarseningMap>,
}

impl<T: Real> GraphStack<T> {
    pub fn single(graph: NeighborGraph) -> Self {
        Self {
            levels: vec![GraphLevel::new(graph)],
            maps: Vec::new(),
        }
    }

    pub fn from_parts(levels: Vec<NeighborGraph>, maps: Vec<CoarseningMap>) -> Result<Self> {
        if levels.len() != maps.len() + 1 {
            return Err(Error::config(format!(
                "{} graph levels need {} coarsening maps, got {}",
                levels.len(),
                levels.len().saturating_sub(1),
                maps.len()
            )));
        }
        for (l, m) in maps.iter().enumerate() {
            if m.input_nodes() != levels[l].n() || m.clusters() != levels[l + 1].n() {
                return Err(Error::config(format!(
                    "coarsening map {l} goes {} -> {} but levels have {} and {} nodes",
                    m.input_nodes(),
                    m.clusters(),
                    levels[l].n(),
                    levels[l + 1].n()
                )));
            }
        }
        Ok(Self {
            levels: levels.into_iter().map(GraphLevel::new).collect(),
            maps,
        })
    }

    /// Coarsen `base` by k-means according to the model's pooling layers.
    ///
    /// Each coarse level is a kNN graph over the cluster centroids whose `k` is taken from
    /// the first layer running on it, falling back to the base graph's `k`.
    pub fn for_spec(spec: &ModelSpec, base: NeighborGraph, seed: u64) -> Result<Self> {
        let mut levels = vec![base];
        let mut maps = Vec::new();
        for (l, pool) in spec.pools.iter().enumerate() {
            let cur = &levels[l];
            let m = pool.clusters_for(cur.n());
            let map = kmeans_coarsen(cur.coords(), m, seed.wrapping_add(l as u64), pool.mode)?;
            let k = spec
                .layers
                .get(pool.after_layer + 1)
                .and_then(|s| s.k)
                .unwrap_or(levels[0].k())
                .min(m);
            let g = knn_build(&map.centroids(), k)?;
            maps.push(map);
            levels.push(g);
        }
        Self::from_parts(levels, maps)
    }

    pub fn levels(&self) -> &[GraphLevel<T>] {
        &self.levels
    }

    pub fn level(&self, i: usize) -> &GraphLevel<T> {
        &self.levels[i]
    }

    pub fn maps(&self) -> &[CoarseningMap] {
        &self.maps
    }

    pub fn nodes(&self) -> usize {
        self.levels[0].n()
    }

    pub fn nodes_per_level(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.n()).collect()
    }
}

/// Whether dropout is active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Dropout masks drawn from a generator seeded with the value.
    Train(u64),
    Eval,
}

/// Result of a forward pass.
pub struct Forward {
    /// `(B·N)×1` for node heads, `B×classes` logits for a classifier.
    pub output: Var,
    /// Tape variables of every parameter, in [`Model::params`] order.
    pub params: Vec<Var>,
}

/// A built model: layers, optional node embeddings and a head.
#[derive(Clone, Debug)]
pub struct Model<T> {
    spec: ModelSpec,
    layers: Vec<ConvLayer<T>>,
    embedding: Option<Parameter<T>>,
    head: Vec<LinearLayer<T>>,
    nodes_per_level: Vec<usize>,
}

pub(crate) fn build_layer<T: Real, R: Rng + ?Sized>(rng: &mut R, i: usize, s: &LayerSpec, nodes: usize) -> Result<ConvLayer<T>> {
    let (p, q) = (s.in_channels, s.out_channels);
    let tag = |e: Error| match e {
        Error::Config { msg, .. } => Error::layer_config(i, msg),
        other => other,
    };
    Ok(match s.kind {
        LayerKind::Lp => ConvLayer::Lp,
        LayerKind::Gc => ConvLayer::Gc(GcLayer::new(rng, p, q)),
        LayerKind::Dsgc => ConvLayer::Dsgc(DsgcLayer::new(rng, p, q, s.groups, s.hidden, s.normalize).map_err(tag)?),
        LayerKind::Mpnn => ConvLayer::Mpnn(DsgcLayer::new(rng, p, q, 1, s.hidden, s.normalize).map_err(tag)?),
        LayerKind::Monet => {
            ConvLayer::Monet(MonetLayer::new(rng, p, q, s.effective_kernels(), s.normalize).map_err(tag)?)
        }
        LayerKind::Cheby => ConvLayer::Cheby(ChebyLayer::new(rng, p, q, s.effective_kernels(), nodes).map_err(tag)?),
        LayerKind::Dsc => ConvLayer::Dsc(DscLayer::new(rng, p, q)),
        LayerKind::Full => ConvLayer::Full(FullConvLayer::new(rng, p, q)),
        LayerKind::Linear => ConvLayer::Linear(LinearLayer::new(rng, p, q)),
    })
}

/// Validate `spec` against `stack` and initialize parameters from `seed`.
///
/// Errors name the offending layer index.
pub fn build_model<T: Real>(spec: &ModelSpec, stack: &GraphStack<T>, seed: u64) -> Result<Model<T>> {
    spec.validate()?;
    if stack.maps.len() != spec.pools.len() {
        return Err(Error::config(format!(
            "spec pools {} times but the graph stack has {} coarsening maps",
            spec.pools.len(),
            stack.maps.len()
        )));
    }
    for (l, (pool, map)) in spec.pools.iter().zip(&stack.maps).enumerate() {
        let n = stack.levels[l].n();
        if map.input_nodes() != n || map.clusters() != pool.clusters_for(n) {
            return Err(Error::layer_config(
                pool.after_layer,
                format!(
                    "pooling expects {n} -> {} nodes but the coarsening map goes {} -> {}",
                    pool.clusters_for(n),
                    map.input_nodes(),
                    map.clusters()
                ),
            ));
        }
    }
    for (i, s) in spec.layers.iter().enumerate() {
        let level = &stack.levels[spec.level_of(i)];
        if let Some(k) = s.k {
            if s.kind.is_graph_op() && k.min(level.n()) != level.graph().k() {
                return Err(Error::layer_config(
                    i,
                    format!("layer expects k = {k} but its graph has k = {}", level.graph().k()),
                ));
            }
        }
        if matches!(s.kind, LayerKind::Dsc | LayerKind::Full) {
            level
                .grid_offsets(crate::conv::GridStencil)
                .map_err(|e| Error::layer_config(i, e.to_string()))?;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes_per_level = stack.nodes_per_level();
    let embedding = (spec.embed_dim > 0).then(|| {
        Parameter::new(
            "embedding",
            Tensor::uniform(&mut rng, &[stack.nodes(), spec.embed_dim], 0.1),
        )
    });
    let layers = spec
        .layers
        .iter()
        .enumerate()
        .map(|(i, s)| build_layer(&mut rng, i, s, nodes_per_level[spec.level_of(i)]))
        .collect::<Result<Vec<_>>>()?;
    let c = spec.final_channels();
    let head = match &spec.head {
        HeadSpec::NodeSigmoid | HeadSpec::NodeRegression => vec![LinearLayer::new(&mut rng, c, 1)],
        HeadSpec::Classifier { hidden, classes, .. } => {
            let mut width = c * nodes_per_level.last().copied().unwrap_or(0);
            let mut v = Vec::new();
            for &h in hidden.iter().chain(std::iter::once(classes)) {
                v.push(LinearLayer::new(&mut rng, width, h));
                width = h;
            }
            v
        }
    };
    Ok(Model {
        spec: spec.clone(),
        layers,
        embedding,
        head,
        nodes_per_level,
    })
}

fn activate<T: Real>(tape: &mut Tape<T>, a: Activation, x: Var) -> Var {
    match a {
        Activation::None => x,
        Activation::Tanh => tape.tanh(x),
        Activation::Relu => tape.relu(x),
    }
}

fn dropout<T: Real>(tape: &mut Tape<T>, x: Var, rate: f64, rng: &mut Option<ChaCha8Rng>) -> Result<Var> {
    let Some(rng) = rng.as_mut() else {
        return Ok(x);
    };
    if rate <= 0.0 {
        return Ok(x);
    }
    let keep = T::of(1.0 / (1.0 - rate));
    let mask = (0..tape.value(x).len())
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect();
    tape.mask_mul(x, mask)
}

impl<T: Real> Model<T> {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[ConvLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [ConvLayer<T>] {
        &mut self.layers
    }

    pub fn nodes_per_level(&self) -> &[usize] {
        &self.nodes_per_level
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        let mut v: Vec<&Parameter<T>> = self.embedding.iter().collect();
        for l in &self.layers {
            v.extend(l.params());
        }
        for h in &self.head {
            v.extend(h.params());
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut v: Vec<&mut Parameter<T>> = self.embedding.iter_mut().collect();
        for l in &mut self.layers {
            v.extend(l.params_mut());
        }
        for h in &mut self.head {
            v.extend(h.params_mut());
        }
        v
    }

    /// Trainable scalars actually held.
    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.zero_grad());
    }

    /// Forward pass over inputs `x: (B·N)×input_channels`.
    pub fn forward(&self, tape: &mut Tape<T>, stack: &GraphStack<T>, x: Tensor<T>, mode: Mode) -> Result<Forward> {
        let n = stack.nodes();
        let shape = x.shape().to_vec();
        if shape.len() != 2 || shape[1] != self.spec.input_channels || n == 0 || !shape[0].is_multiple_of(n) {
            return Err(Error::Dimension {
                op: "model_forward",
                left: shape,
                right: vec![n, self.spec.input_channels],
            });
        }
        if stack.nodes_per_level() != self.nodes_per_level {
            return Err(Error::Dimension {
                op: "model_forward",
                left: stack.nodes_per_level(),
                right: self.nodes_per_level.clone(),
            });
        }
        let batch = shape[0] / n;
        let mut rng = match mode {
            Mode::Train(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
            Mode::Eval => None,
        };
        let all = self.params();
        let pvars = bind(tape, &all);
        let mut cursor = 0;
        let mut take = |count: usize| {
            let s = &pvars[cursor..cursor + count];
            cursor += count;
            s.to_vec()
        };

        let mut h = tape.constant(x);
        if self.embedding.is_some() {
            let e = take(1)[0];
            let tiled = tape.tile_rows(e, batch)?;
            h = tape.concat_cols(h, tiled)?;
        }
        let mut level = 0;
        for (i, (layer, s)) in self.layers.iter().zip(&self.spec.layers).enumerate() {
            let p = take(layer.params().len());
            h = layer.forward(tape, &p, stack.level(level), h)?;
            h = activate(tape, s.activation, h);
            if let Some(pos) = self.spec.pools.iter().position(|pl| pl.after_layer == i) {
                h = pool_apply(tape, &stack.maps[pos], h)?;
                level += 1;
            }
            h = dropout(tape, h, s.dropout, &mut rng)?;
        }
        let output = match &self.spec.head {
            HeadSpec::NodeSigmoid => {
                let p = take(2);
                let y = self.head[0].forward(tape, &p, h)?;
                tape.sigmoid(y)
            }
            HeadSpec::NodeRegression => {
                let p = take(2);
                self.head[0].forward(tape, &p, h)?
            }
            HeadSpec::Classifier { dropout: rate, .. } => {
                let width = tape.value(h).len() / batch;
                h = tape.reshape(h, &[batch, width])?;
                let last = self.head.len() - 1;
                for (j, lin) in self.head.iter().enumerate() {
                    let p = take(2);
                    h = lin.forward(tape, &p, h)?;
                    if j < last {
                        h = activate(tape, self.spec.head_activation, h);
                        h = dropout(tape, h, *rate, &mut rng)?;
                    }
                }
                h
            }
        };
        Ok(Forward { output, params: pvars })
    }

    /// Forward in eval mode on a fresh tape, returning the output values.
    pub fn predict(&self, stack: &GraphStack<T>, x: Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, stack, x, Mode::Eval)?;
        Ok(tape.value(f.output).clone())
    }

    /// Copy the tape's gradients into the parameters (accumulating).
    pub fn collect_grads(&mut self, tape: &Tape<T>, fwd: &Forward) -> Result<()> {
        for (p, v) in self.params_mut().into_iter().zip(&fwd.params) {
            if let Some(g) = tape.grad(*v) {
                p.accumulate(&g)?;
            }
        }
        Ok(())
    }
}
