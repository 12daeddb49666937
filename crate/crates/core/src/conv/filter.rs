use rand::Rng;

use crate::error::Result;
use crate::graph::DELTA_DIM;
use crate::tensor::{Parameter, Real, Tape, Tensor, Var};

/// Two-layer perceptron mapping an edge offset feature to one logit per channel group.
///
/// `Δ (5) -> tanh(Δ·W₁ + b₁) (H) -> ·W₂ + b₂ (C)`. The output layer starts at
/// zero so a fresh filter is uniform over each neighborhood.
#[derive(Clone, Debug)]
pub struct FilterMlp<T> {
    pub(crate) w1: Parameter<T>,
    pub(crate) b1: Parameter<T>,
    pub(crate) w2: Parameter<T>,
    pub(crate) b2: Parameter<T>,
}

impl<T: Real> FilterMlp<T> {
    pub const PARAMS: usize = 4;

    pub fn new<R: Rng + ?Sized>(rng: &mut R, hidden: usize, groups: usize) -> Self {
        Self {
            w1: Parameter::new("filter.w1", Tensor::glorot(rng, &[DELTA_DIM, hidden], DELTA_DIM, hidden)),
            b1: Parameter::new("filter.b1", Tensor::zeros(&[hidden])),
            w2: Parameter::new("filter.w2", Tensor::zeros(&[hidden, groups])),
            b2: Parameter::new("filter.b2", Tensor::zeros(&[groups])),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w1.value().cols()
    }

    pub fn groups(&self) -> usize {
        self.w2.value().cols()
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    /// `E×C` logits for the `E×5` offsets in `delta`, using bound parameters `p = [w1, b1, w2, b2]`.
    pub fn logits(&self, tape: &mut Tape<T>, p: &[Var], delta: Var) -> Result<Var> {
        let h = tape.matmul(delta, p[0])?;
        let h = tape.add_bias(h, p[1])?;
        let h = tape.tanh(h);
        let o = tape.matmul(h, p[2])?;
        tape.add_bias(o, p[3])
    }
}
