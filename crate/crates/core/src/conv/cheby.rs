use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Parameter, Real, Tape, Tensor, Var};

use super::GraphLevel;

/// Chebyshev polynomial filter of order `K` on the scaled Laplacian.
///
/// `t⁰ = X`, `t¹ = L̃X`, `tᵏ = 2L̃tᵏ⁻¹ − tᵏ⁻²`, and `y = Σ_{k<K} tᵏ·U⁽ᵏ⁾`.
#[derive(Clone, Debug)]
pub struct ChebyLayer<T> {
    pub(crate) u: Vec<Parameter<T>>,
    nodes: usize,
}

impl<T: Real> ChebyLayer<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, p: usize, q: usize, order: usize, nodes: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::config("Chebyshev order K must be at least 1"));
        }
        let u = (0..order)
            .map(|k| Parameter::new(format!("u{k}"), Tensor::glorot(rng, &[p, q], p * order, q)))
            .collect();
        Ok(Self { u, nodes })
    }

    pub fn order(&self) -> usize {
        self.u.len()
    }

    pub fn out_channels(&self) -> usize {
        self.u[0].value().cols()
    }

    /// Node count of the graph whose Laplacian this layer was built for.
    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        self.u.iter().collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        self.u.iter_mut().collect()
    }

    pub fn forward(&self, tape: &mut Tape<T>, p: &[Var], level: &GraphLevel<T>, x: Var) -> Result<Var> {
        let (lap, edges, weights) = level.laplacian()?;
        if lap.n() != self.nodes {
            return Err(Error::Dimension {
                op: "cheby_conv",
                left: vec![self.nodes],
                right: vec![lap.n()],
            });
        }
        let w = tape.constant(weights.clone());
        let mut y = tape.matmul(x, p[0])?;
        if self.order() == 1 {
            return Ok(y);
        }
        let mut prev = x;
        let mut cur = tape.gather_scatter(x, edges.clone(), w)?;
        let term = tape.matmul(cur, p[1])?;
        y = tape.add(y, term)?;
        for uk in &p[2..self.order()] {
            let lt = tape.gather_scatter(cur, edges.clone(), w)?;
            let lt2 = tape.scale(lt, T::of(2.0));
            let next = tape.sub(lt2, prev)?;
            let term = tape.matmul(next, *uk)?;
            y = tape.add(y, term)?;
            prev = cur;
            cur = next;
        }
        Ok(y)
    }
}
