//! Nested-loop reference implementations of the graph operators.

use dsgc::conv::{DsgcLayer, FullConvLayer, GridStencil, MonetLayer};
use dsgc::graph::NeighborGraph;
use dsgc::tensor::Tensor;

pub fn matmul(x: &Tensor<f64>, u: &Tensor<f64>) -> Vec<Vec<f64>> {
    (0..x.rows())
        .map(|i| (0..u.cols()).map(|q| (0..x.cols()).map(|p| x.at(i, p) * u.at(p, q)).sum()).collect())
        .collect()
}

pub fn flat(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter().flatten().copied().collect()
}

pub fn filter_logits(l: &DsgcLayer<f64>, delta: &[f64; 5]) -> Vec<f64> {
    let fp = l.filter().params();
    let (w1, b1, w2, b2) = (fp[0].value(), fp[1].value(), fp[2].value(), fp[3].value());
    let h: Vec<f64> = (0..w1.cols())
        .map(|j| ((0..5).map(|d| delta[d] * w1.at(d, j)).sum::<f64>() + b1.data()[j]).tanh())
        .collect();
    (0..w2.cols())
        .map(|c| (0..h.len()).map(|j| h[j] * w2.at(j, c)).sum::<f64>() + b2.data()[c])
        .collect()
}

/// Nested-loop DSGC over one graph of the batch.
pub fn dsgc_oracle(l: &DsgcLayer<f64>, g: &NeighborGraph, x: &Tensor<f64>) -> Vec<f64> {
    let z = matmul(x, l.u().value());
    let (q, c) = (l.out_channels(), l.groups());
    let d = q / c;
    let mut y = vec![vec![0.0; q]; g.n()];
    for i in 0..g.n() {
        let range = g.segments().range(i);
        let logits: Vec<Vec<f64>> = range.clone().map(|e| filter_logits(l, &g.deltas()[e])).collect();
        for grp in 0..c {
            let w: Vec<f64> = if l.normalize() {
                let m = logits.iter().map(|r| r[grp]).fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = logits.iter().map(|r| (r[grp] - m).exp()).sum();
                logits.iter().map(|r| (r[grp] - m).exp() / s).collect()
            } else {
                logits.iter().map(|r| r[grp]).collect()
            };
            for (slot, e) in range.clone().enumerate() {
                let j = g.edges().src()[e];
                for ch in grp * d..(grp + 1) * d {
                    y[i][ch] += w[slot] * z[j][ch];
                }
            }
        }
    }
    flat(&y)
}

pub fn monet_oracle(l: &MonetLayer<f64>, g: &NeighborGraph, x: &Tensor<f64>) -> Vec<f64> {
    let p = l.params();
    let (mu, s) = (p[0].value(), p[1].value());
    let q = l.out_channels();
    let mut y = vec![vec![0.0; q]; g.n()];
    for k in 0..l.kernels() {
        let z = matmul(x, p[2 + k].value());
        for i in 0..g.n() {
            let range = g.segments().range(i);
            let logw: Vec<f64> = range
                .clone()
                .map(|e| {
                    let d = g.deltas()[e];
                    -0.5 * (0..5).map(|t| (d[t] - mu.at(k, t)).powi(2) * (-s.at(k, t)).exp()).sum::<f64>()
                })
                .collect();
            let w: Vec<f64> = if l.gat_normalize() {
                let total: f64 = logw.iter().map(|v| v.exp()).sum();
                logw.iter().map(|v| v.exp() / total).collect()
            } else {
                logw.iter().map(|v| v.exp()).collect()
            };
            for (slot, e) in range.enumerate() {
                let j = g.edges().src()[e];
                for c in 0..q {
                    y[i][c] += w[slot] * z[j][c];
                }
            }
        }
    }
    flat(&y)
}

/// Mean of `z = X·U` over each neighborhood.
pub fn gc_oracle(g: &NeighborGraph, u: &Tensor<f64>, x: &Tensor<f64>) -> Vec<f64> {
    let z = matmul(x, u);
    let mut y = vec![vec![0.0; u.cols()]; g.n()];
    for (i, row) in y.iter_mut().enumerate() {
        let nb = g.neighbors(i);
        for &j in nb {
            for (q, v) in row.iter_mut().enumerate() {
                *v += z[j][q] / nb.len() as f64;
            }
        }
    }
    flat(&y)
}

fn stencil_of(g: &NeighborGraph, e: usize) -> usize {
    let d = g.deltas()[e];
    GridStencil::index((d[0] * d[1]) as i64, (d[2] * d[3]) as i64).unwrap()
}

pub fn dsc_oracle(g: &NeighborGraph, u: &Tensor<f64>, table: &Tensor<f64>, x: &Tensor<f64>) -> Vec<f64> {
    let z = matmul(x, u);
    let q = u.cols();
    let mut y = vec![vec![0.0; q]; g.n()];
    for (e, (&s, &d)) in g.edges().src().iter().zip(g.edges().dst()).enumerate() {
        let r = stencil_of(g, e);
        for c in 0..q {
            y[d][c] += table.at(c, r) * z[s][c];
        }
    }
    flat(&y)
}

pub fn full_oracle(g: &NeighborGraph, l: &FullConvLayer<f64>, x: &Tensor<f64>) -> Vec<f64> {
    let q = l.out_channels();
    let mut y = vec![vec![0.0; q]; g.n()];
    for (e, (&s, &d)) in g.edges().src().iter().zip(g.edges().dst()).enumerate() {
        let r = stencil_of(g, e);
        for c in 0..q {
            for p in 0..x.cols() {
                y[d][c] += l.weight(p, c, r) * x.at(s, p);
            }
        }
    }
    flat(&y)
}
