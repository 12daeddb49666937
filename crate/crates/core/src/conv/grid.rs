use rand::Rng;

use crate::error::Result;
use crate::graph::NeighborGraph;
use crate::tensor::{Parameter, Real, Tape, Tensor, Var};

use super::GraphLevel;

/// The 3×3 offset stencil of a regular grid.
///
/// Offset `(Δx, Δy) ∈ {−1, 0, 1}²` maps to table column `(Δy + 1)·3 + (Δx + 1)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GridStencil;

impl GridStencil {
    pub const SIZE: usize = 9;
    /// Column of the zero offset.
    pub const CENTER: usize = 4;

    pub fn index(dx: i64, dy: i64) -> Option<usize> {
        if (-1..=1).contains(&dx) && (-1..=1).contains(&dy) {
            Some(((dy + 1) * 3 + (dx + 1)) as usize)
        } else {
            None
        }
    }

    /// Stencil column of every edge, or a message naming the first off-grid edge.
    pub fn index_edges(self, g: &NeighborGraph) -> std::result::Result<Vec<usize>, String> {
        g.deltas()
            .iter()
            .enumerate()
            .map(|(e, d)| {
                let dx = d[0] * d[1];
                let dy = d[2] * d[3];
                let (rx, ry) = (dx.round(), dy.round());
                if (dx - rx).abs() > 1e-9 || (dy - ry).abs() > 1e-9 {
                    return Err(format!("edge {e} has off-grid offset ({dx}, {dy})"));
                }
                Self::index(rx as i64, ry as i64)
                    .ok_or_else(|| format!("edge {e} offset ({dx}, {dy}) lies outside the 3x3 stencil"))
            })
            .collect()
    }
}

/// Depthwise separable convolution on a regular grid: `z = X·U`, then a per-channel
/// lookup table `W: Q×R` indexed by each edge's stencil offset.
#[derive(Clone, Debug)]
pub struct DscLayer<T> {
    pub(crate) u: Parameter<T>,
    pub(crate) table: Parameter<T>,
}

impl<T: Real> DscLayer<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, p: usize, q: usize) -> Self {
        Self {
            u: Parameter::new("u", Tensor::glorot(rng, &[p, q], p, q)),
            table: Parameter::new(
                "table",
                Tensor::filled(&[q, GridStencil::SIZE], T::of(1.0 / GridStencil::SIZE as f64)),
            ),
        }
    }

    pub fn from_parts(u: Tensor<T>, table: Tensor<T>) -> Self {
        Self {
            u: Parameter::new("u", u),
            table: Parameter::new("table", table),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.u.value().cols()
    }

    pub fn table(&self) -> &Parameter<T> {
        &self.table
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        vec![&self.u, &self.table]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.u, &mut self.table]
    }

    pub fn forward(&self, tape: &mut Tape<T>, p: &[Var], level: &GraphLevel<T>, x: Var) -> Result<Var> {
        let index = level.grid_offsets(GridStencil)?;
        let z = tape.matmul(x, p[0])?;
        let w = tape.lookup_columns(p[1], index)?;
        tape.gather_scatter(z, level.graph().edges().clone(), w)
    }
}

/// Full convolution on a regular grid: one `P×Q` matrix per stencil offset.
///
/// Stored as a single `P×(R·Q)` matrix whose column block `r` is the map for offset `r`.
#[derive(Clone, Debug)]
pub struct FullConvLayer<T> {
    pub(crate) w: Parameter<T>,
    q: usize,
}

impl<T: Real> FullConvLayer<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, p: usize, q: usize) -> Self {
        let r = GridStencil::SIZE;
        Self {
            w: Parameter::new("w", Tensor::glorot(rng, &[p, r * q], p * r, q)),
            q,
        }
    }

    /// Build from per-offset matrices `blocks[r]: P×Q`.
    pub fn from_blocks(blocks: &[Tensor<T>]) -> Result<Self> {
        let p = blocks[0].rows();
        let q = blocks[0].cols();
        let r = blocks.len();
        let mut data = vec![T::zero(); p * r * q];
        for (b, t) in blocks.iter().enumerate() {
            for i in 0..p {
                for j in 0..q {
                    data[i * r * q + b * q + j] = t.at(i, j);
                }
            }
        }
        Ok(Self {
            w: Parameter::new("w", Tensor::new(vec![p, r * q], data)?),
            q,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.q
    }

    /// `W^(pq)` at stencil offset `r`.
    pub fn weight(&self, p: usize, q: usize, r: usize) -> T {
        self.w.value().at(p, r * self.q + q)
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        vec![&self.w]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.w]
    }

    pub fn forward(&self, tape: &mut Tape<T>, p: &[Var], level: &GraphLevel<T>, x: Var) -> Result<Var> {
        let index = level.grid_offsets(GridStencil)?;
        let z = tape.matmul(x, p[0])?;
        tape.block_aggregate(z, level.graph().edges().clone(), index, self.q)
    }
}
