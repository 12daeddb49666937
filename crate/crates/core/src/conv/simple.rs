use rand::Rng;

use crate::error::Result;
use crate::tensor::{Parameter, Real, Tape, Tensor, Var};

use super::GraphLevel;

/// `y_i = Σ_j G_ij x_j` with the level's normalized adjacency.
pub fn label_propagate<T: Real>(tape: &mut Tape<T>, level: &GraphLevel<T>, x: Var) -> Result<Var> {
    let g = tape.constant(level.adjacency().clone());
    tape.gather_scatter(x, level.graph().edges().clone(), g)
}

/// `y = G·(X·U)`.
pub fn graph_conv<T: Real>(tape: &mut Tape<T>, level: &GraphLevel<T>, x: Var, u: Var) -> Result<Var> {
    let z = tape.matmul(x, u)?;
    label_propagate(tape, level, z)
}

/// Graph convolution with a learnable channel map `U: P×Q`.
#[derive(Clone, Debug)]
pub struct GcLayer<T> {
    pub(crate) u: Parameter<T>,
}

impl<T: Real> GcLayer<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, p: usize, q: usize) -> Self {
        Self {
            u: Parameter::new("u", Tensor::glorot(rng, &[p, q], p, q)),
        }
    }

    pub fn from_u(u: Tensor<T>) -> Self {
        Self {
            u: Parameter::new("u", u),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.u.value().cols()
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        vec![&self.u]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.u]
    }

    pub fn forward(&self, tape: &mut Tape<T>, p: &[Var], level: &GraphLevel<T>, x: Var) -> Result<Var> {
        graph_conv(tape, level, x, p[0])
    }
}

/// Per-node affine map `x·W + b` (1×1 convolution with bias).
#[derive(Clone, Debug)]
pub struct LinearLayer<T> {
    pub(crate) w: Parameter<T>,
    pub(crate) b: Parameter<T>,
}

impl<T: Real> LinearLayer<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, p: usize, q: usize) -> Self {
        Self {
            w: Parameter::new("w", Tensor::glorot(rng, &[p, q], p, q)),
            b: Parameter::new("b", Tensor::zeros(&[q])),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.w.value().cols()
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        vec![&self.w, &self.b]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.w, &mut self.b]
    }

    pub fn forward(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var> {
        let y = tape.matmul(x, p[0])?;
        tape.add_bias(y, p[1])
    }
}
