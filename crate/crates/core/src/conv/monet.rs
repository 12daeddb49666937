use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::DELTA_DIM;
use crate::tensor::{Parameter, Real, Tape, Tensor, Var};

use super::GraphLevel;

/// MoNet mixture-of-Gaussians convolution over edge offsets.
///
/// Kernel `k` weighs edge `(i, j)` by `exp(−½ (Δ_ij − μ_k)ᵀ Σ_k⁻¹ (Δ_ij − μ_k))` with a
/// diagonal `Σ_k = diag(exp(s_k))`, and each kernel has its own channel map `U⁽ᵏ⁾`.
/// With `gat_normalize`, the log-weights of every kernel are softmax-normalized over
/// each neighborhood instead of exponentiated.
#[derive(Clone, Debug)]
pub struct MonetLayer<T> {
    pub(crate) mu: Parameter<T>,
    pub(crate) log_var: Parameter<T>,
    pub(crate) u: Vec<Parameter<T>>,
    gat_normalize: bool,
}

impl<T: Real> MonetLayer<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, p: usize, q: usize, kernels: usize, gat_normalize: bool) -> Result<Self> {
        if kernels == 0 {
            return Err(Error::config("MoNet needs at least one kernel"));
        }
        let u = (0..kernels)
            .map(|k| Parameter::new(format!("u{k}"), Tensor::glorot(rng, &[p, q], p * kernels, q)))
            .collect();
        Ok(Self {
            mu: Parameter::new("mu", Tensor::uniform(rng, &[kernels, DELTA_DIM], 1.0)),
            log_var: Parameter::new("log_var", Tensor::zeros(&[kernels, DELTA_DIM])),
            u,
            gat_normalize,
        })
    }

    pub fn kernels(&self) -> usize {
        self.u.len()
    }

    pub fn out_channels(&self) -> usize {
        self.u[0].value().cols()
    }

    pub fn gat_normalize(&self) -> bool {
        self.gat_normalize
    }

    pub fn mu_mut(&mut self) -> &mut Parameter<T> {
        &mut self.mu
    }

    pub fn log_var_mut(&mut self) -> &mut Parameter<T> {
        &mut self.log_var
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        let mut v = vec![&self.mu, &self.log_var];
        v.extend(self.u.iter());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut v = vec![&mut self.mu, &mut self.log_var];
        v.extend(self.u.iter_mut());
        v
    }

    /// `E×K` edge weights: raw Gaussian values, or per-neighborhood softmax of their logs.
    pub fn kernel_weights(&self, tape: &mut Tape<T>, p: &[Var], level: &GraphLevel<T>) -> Result<Var> {
        let points = Arc::new(level.delta().clone());
        let log_w = tape.gaussian_log_kernel(points, p[0], p[1])?;
        if self.gat_normalize {
            tape.segment_softmax(log_w, level.graph().segments().clone())
        } else {
            Ok(tape.exp(log_w))
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, p: &[Var], level: &GraphLevel<T>, x: Var) -> Result<Var> {
        let w = self.kernel_weights(tape, p, level)?;
        let edges = level.graph().edges().clone();
        let mut y: Option<Var> = None;
        for k in 0..self.kernels() {
            let z = tape.matmul(x, p[2 + k])?;
            let wk = tape.column(w, k)?;
            let yk = tape.gather_scatter(z, edges.clone(), wk)?;
            y = Some(match y {
                Some(acc) => tape.add(acc, yk)?,
                None => yk,
            });
        }
        Ok(y.expect("at least one kernel"))
    }
}
