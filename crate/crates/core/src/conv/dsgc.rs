use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Parameter, Real, Tape, Tensor, Var};

use super::filter::FilterMlp;
use super::GraphLevel;

/// Depthwise separable graph convolution.
///
/// `z = X·U`, then `y_iq = Σ_{j∈G(i)} w_{⌊q/D⌋}(Δ_ij) z_jq`, where the `C`
/// group filters are the outputs of one shared [`FilterMlp`] and `D = Q/C`.
/// With `normalize` set, each group's weights are a softmax over the
/// neighborhood of `i`, so they sum to one.
#[derive(Clone, Debug)]
pub struct DsgcLayer<T> {
    pub(crate) u: Parameter<T>,
    pub(crate) filter: FilterMlp<T>,
    normalize: bool,
}

impl<T: Real> DsgcLayer<T> {
    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        p: usize,
        q: usize,
        groups: usize,
        hidden: usize,
        normalize: bool,
    ) -> Result<Self> {
        if groups == 0 || !q.is_multiple_of(groups) {
            return Err(Error::config(format!(
                "channel groups C = {groups} must divide output channels Q = {q}"
            )));
        }
        Ok(Self {
            u: Parameter::new("u", Tensor::glorot(rng, &[p, q], p, q)),
            filter: FilterMlp::new(rng, hidden, groups),
            normalize,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.u.value().cols()
    }

    pub fn groups(&self) -> usize {
        self.filter.groups()
    }

    /// Channels per group, `D = Q / C`.
    pub fn group_width(&self) -> usize {
        self.out_channels() / self.groups()
    }

    pub fn normalize(&self) -> bool {
        self.normalize
    }

    pub fn filter(&self) -> &FilterMlp<T> {
        &self.filter
    }

    pub fn filter_mut(&mut self) -> &mut FilterMlp<T> {
        &mut self.filter
    }

    pub fn u(&self) -> &Parameter<T> {
        &self.u
    }

    pub fn u_mut(&mut self) -> &mut Parameter<T> {
        &mut self.u
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        let mut v = vec![&self.u];
        v.extend(self.filter.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut v = vec![&mut self.u];
        v.extend(self.filter.params_mut());
        v
    }

    pub fn forward(&self, tape: &mut Tape<T>, p: &[Var], level: &GraphLevel<T>, x: Var) -> Result<Var> {
        let z = tape.matmul(x, p[0])?;
        let delta = tape.constant(level.delta().clone());
        let logits = self.filter.logits(tape, &p[1..1 + FilterMlp::<T>::PARAMS], delta)?;
        self.aggregate(tape, level, z, logits)
    }

    /// Per-edge group weights from `E×C` filter logits (softmax-normalized when enabled).
    pub fn edge_weights(&self, tape: &mut Tape<T>, level: &GraphLevel<T>, logits: Var) -> Result<Var> {
        let shape = tape.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != level.graph().num_edges() || shape[1] != self.groups() {
            return Err(Error::Dimension {
                op: "dsgc",
                left: shape,
                right: vec![level.graph().num_edges(), self.groups()],
            });
        }
        if self.normalize {
            tape.segment_softmax(logits, level.graph().segments().clone())
        } else {
            Ok(logits)
        }
    }

    /// Aggregate `z` with weights derived from the given `E×C` logits.
    ///
    /// Exposed so a filter can be replaced by injected logits.
    pub fn aggregate(&self, tape: &mut Tape<T>, level: &GraphLevel<T>, z: Var, logits: Var) -> Result<Var> {
        let w = self.edge_weights(tape, level, logits)?;
        let c = self.groups();
        let w = if c == 1 || c == self.out_channels() {
            w
        } else {
            tape.expand_groups(w, self.group_width())?
        };
        tape.gather_scatter(z, level.graph().edges().clone(), w)
    }
}

/// MPNN edge-network convolution: DSGC with a single filter shared by all channels.
pub fn mpnn_conv<T: Real>(
    tape: &mut Tape<T>,
    level: &GraphLevel<T>,
    layer: &DsgcLayer<T>,
    p: &[Var],
    x: Var,
) -> Result<Var> {
    if layer.groups() != 1 {
        return Err(Error::config(format!("MPNN needs C = 1, layer has C = {}", layer.groups())));
    }
    layer.forward(tape, p, level, x)
}
