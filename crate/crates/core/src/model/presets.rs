use crate::conv::LayerKind;

use super::spec::{Activation, HeadSpec, LayerSpec, ModelSpec, PoolSpec};

/// DSGC channel width of every simulation layer.
pub const SIM_WIDTH: usize = 16;
/// Filter MLP hidden width in the simulation presets.
pub const SIM_HIDDEN: usize = 16;
/// Channel groups of the simulation DSGC layers.
pub const SIM_GROUPS: usize = 4;
pub const SIM_LAYERS: usize = 3;
pub const SIM_K: usize = 9;

pub const FORECAST_WIDTH: usize = 16;
pub const FORECAST_HIDDEN: usize = 16;
pub const FORECAST_GROUPS: usize = 4;
pub const FORECAST_LAYERS: usize = 7;

pub const DOC_LAYERS: usize = 5;
pub const DOC_WIDTH: usize = 16;
pub const DOC_MLP_HIDDEN: usize = 64;

/// Width in `1..=512` whose parameter count is closest to `target` (smallest on ties).
pub fn match_width(target: usize, count: impl Fn(usize) -> usize) -> usize {
    (1..=512)
        .min_by_key(|&w| count(w).abs_diff(target))
        .expect("non-empty range")
}

fn conv(kind: LayerKind, p: usize, q: usize, hidden: usize, groups: usize) -> LayerSpec {
    let s = LayerSpec::new(kind, p, q).with_hidden(hidden);
    if kind == LayerKind::Dsgc {
        s.with_groups(groups)
    } else {
        s
    }
}

fn stack(kind: LayerKind, input: usize, width: usize, depth: usize, hidden: usize, groups: usize) -> Vec<LayerSpec> {
    let mut layers = Vec::with_capacity(depth);
    let mut p = input;
    for _ in 0..depth {
        let q = if kind == LayerKind::Lp { p } else { width };
        layers.push(conv(kind, p, q, hidden, groups));
        p = q;
    }
    layers
}

fn sim_spec(kind: LayerKind, width: usize) -> ModelSpec {
    let layers = stack(kind, 1, width, SIM_LAYERS, SIM_HIDDEN, SIM_GROUPS)
        .into_iter()
        .map(|l| l.with_k(SIM_K).with_activation(Activation::Tanh))
        .collect();
    ModelSpec {
        input_channels: 1,
        embed_dim: 0,
        layers,
        pools: Vec::new(),
        head: HeadSpec::NodeSigmoid,
        head_activation: Activation::None,
    }
}

/// Three-layer per-node binary predictor for the simulation tasks.
///
/// The DSGC preset uses width [`SIM_WIDTH`]; every other operator gets the width that
/// brings its total parameter count closest to the DSGC preset's.
pub fn sim_task_preset(kind: LayerKind, h: usize, w: usize) -> ModelSpec {
    let nodes = [h * w];
    if kind == LayerKind::Dsgc {
        return sim_spec(kind, SIM_WIDTH);
    }
    let target = sim_spec(LayerKind::Dsgc, SIM_WIDTH).param_count(&nodes);
    let width = match_width(target, |w| sim_spec(kind, w).param_count(&nodes));
    sim_spec(kind, width)
}

fn forecast_spec(kind: LayerKind, p: usize, embed: usize, mask: bool, width: usize) -> ModelSpec {
    let input = p + usize::from(mask);
    let layers = stack(kind, input + embed, width, FORECAST_LAYERS, FORECAST_HIDDEN, FORECAST_GROUPS)
        .into_iter()
        .map(|l| l.with_activation(Activation::Tanh))
        .collect();
    ModelSpec {
        input_channels: input,
        embed_dim: embed,
        layers,
        pools: Vec::new(),
        head: HeadSpec::NodeRegression,
        head_activation: Activation::None,
    }
}

/// Seven-layer per-node regressor over a window of `p` past values.
///
/// Inputs are the window, an optional missing-data channel, then `embed` learned
/// embedding channels. Non-DSGC operators are width-matched to the DSGC budget.
pub fn ts_forecast_preset(kind: LayerKind, p: usize, embed: usize, mask: bool) -> ModelSpec {
    if kind == LayerKind::Dsgc {
        return forecast_spec(kind, p, embed, mask, FORECAST_WIDTH);
    }
    let target = forecast_spec(LayerKind::Dsgc, p, embed, mask, FORECAST_WIDTH).param_count(&[0]);
    let width = match_width(target, |w| forecast_spec(kind, p, embed, mask, w).param_count(&[0]));
    forecast_spec(kind, p, embed, mask, width)
}

/// Image-style classifier: one convolution per resolution level with k-means pooling between.
///
/// `ks` lists the neighborhood size of each level; `pool_factor` sets the cluster ratio.
pub fn grid_classify_preset(
    kind: LayerKind,
    input_channels: usize,
    width: usize,
    ks: &[usize],
    pool_factor: usize,
    classes: usize,
) -> ModelSpec {
    let mut p = input_channels;
    let mut layers = Vec::new();
    let mut pools = Vec::new();
    for (i, &k) in ks.iter().enumerate() {
        let q = if kind == LayerKind::Lp { p } else { width };
        layers.push(
            conv(kind, p, q, SIM_HIDDEN, SIM_GROUPS)
                .with_k(k)
                .with_activation(Activation::Relu),
        );
        p = q;
        if i + 1 < ks.len() {
            pools.push(PoolSpec {
                after_layer: i,
                factor: pool_factor,
                mode: crate::tensor::PoolMode::Max,
            });
        }
    }
    ModelSpec {
        input_channels,
        embed_dim: 0,
        layers,
        pools,
        head: HeadSpec::Classifier {
            hidden: Vec::new(),
            classes,
            dropout: 0.0,
        },
        head_activation: Activation::Relu,
    }
}

/// Document classifier: five convolutions with dropout 0.5, then a two-layer MLP.
pub fn doc_classify_preset(kind: LayerKind, classes: usize) -> ModelSpec {
    let layers = stack(kind, 1, DOC_WIDTH, DOC_LAYERS, SIM_HIDDEN, SIM_GROUPS)
        .into_iter()
        .map(|l| l.with_activation(Activation::Relu).with_dropout(0.5))
        .collect();
    ModelSpec {
        input_channels: 1,
        embed_dim: 0,
        layers,
        pools: Vec::new(),
        head: HeadSpec::Classifier {
            hidden: vec![DOC_MLP_HIDDEN],
            classes,
            dropout: 0.5,
        },
        head_activation: Activation::Relu,
    }
}
