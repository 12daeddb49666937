use std::sync::Arc;

use crate::error::Result;
use crate::tensor::{EdgeIndex, Real, Tensor};

use super::NeighborGraph;

const POWER_TOL: f64 = 1e-6;
const POWER_MAX_ITERS: usize = 1000;

/// Dense scaled Laplacian `L̃ = 2L/λmax − I` of the symmetrized neighbor graph.
#[derive(Clone, Debug, PartialEq)]
pub struct LaplacianOperator {
    n: usize,
    dense: Vec<f64>,
    lambda_max: f64,
}

impl LaplacianOperator {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    /// Row-major `n×n` entries of `L̃`.
    pub fn dense(&self) -> &[f64] {
        &self.dense
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.dense[i * self.n + j]
    }

    /// Non-zero entries as aggregation edges `j -> i` with weights `L̃_ij`, in row-major order.
    pub fn sparse<T: Real>(&self) -> (Arc<EdgeIndex>, Tensor<T>) {
        let mut src = Vec::new();
        let mut dst = Vec::new();
        let mut w = Vec::new();
        for i in 0..self.n {
            for j in 0..self.n {
                let v = self.at(i, j);
                if v != 0.0 {
                    dst.push(i);
                    src.push(j);
                    w.push(T::of(v));
                }
            }
        }
        let len = w.len();
        let edges = EdgeIndex::new(self.n, src, dst).expect("indices < n");
        (Arc::new(edges), Tensor::new(vec![len], w).expect("weights"))
    }
}

/// Build `L̃` from the graph.
///
/// The adjacency is symmetrized with unit weights and no self loops. A node
/// left without neighbors gets a zero Laplacian row, so its `L̃` row is `−e_i`.
/// `λmax` comes from power iteration, padded by the final residual so the
/// spectrum of `L̃` stays inside `[−1, 1]`.
pub fn scaled_laplacian(g: &NeighborGraph) -> Result<LaplacianOperator> {
    let n = g.n();
    let mut adj = vec![0.0f64; n * n];
    for (&s, &d) in g.edges().src().iter().zip(g.edges().dst()) {
        if s != d {
            adj[d * n + s] = 1.0;
            adj[s * n + d] = 1.0;
        }
    }
    let degree: Vec<f64> = (0..n).map(|i| adj[i * n..(i + 1) * n].iter().sum()).collect();
    let mut lap = vec![0.0f64; n * n];
    for i in 0..n {
        if degree[i] == 0.0 {
            continue;
        }
        lap[i * n + i] = 1.0;
        for j in 0..n {
            if adj[i * n + j] != 0.0 {
                lap[i * n + j] = -adj[i * n + j] / (degree[i] * degree[j]).sqrt();
            }
        }
    }
    let mut lambda_max = power_iteration(&lap, n);
    if lambda_max < 1e-9 {
        lambda_max = 2.0;
    }
    let mut dense = lap;
    for i in 0..n {
        for j in 0..n {
            dense[i * n + j] *= 2.0 / lambda_max;
        }
        dense[i * n + i] -= 1.0;
    }
    Ok(LaplacianOperator { n, dense, lambda_max })
}

fn mat_vec(m: &[f64], v: &[f64], n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| m[i * n..(i + 1) * n].iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Largest eigenvalue of a symmetric positive semi-definite matrix, as an upper estimate.
fn power_iteration(m: &[f64], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    // fixed, non-degenerate start vector
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + ((i * 7919) % 97) as f64 / 97.0).collect();
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut lambda = 0.0;
    let mut residual = f64::INFINITY;
    for _ in 0..POWER_MAX_ITERS {
        let mv = mat_vec(m, &v, n);
        let next: f64 = mv.iter().zip(&v).map(|(a, b)| a * b).sum();
        residual = norm(&mv.iter().zip(&v).map(|(a, b)| a - next * b).collect::<Vec<_>>());
        let nm = norm(&mv);
        if nm == 0.0 {
            return 0.0;
        }
        let converged = (next - lambda).abs() < POWER_TOL && residual < POWER_TOL;
        lambda = next;
        v = mv.into_iter().map(|x| x / nm).collect();
        if converged {
            break;
        }
    }
    lambda + residual
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{knn_build, NodeCoordinates};

    #[test]
    fn two_nodes() {
        let c = NodeCoordinates::new(vec![[0.0, 0.0], [1.0, 0.0]]).unwrap();
        let l = scaled_laplacian(&knn_build(&c, 2).unwrap()).unwrap();
        assert!((l.lambda_max() - 2.0).abs() < 1e-6);
        let expected = [0.0, -1.0, -1.0, 0.0];
        for (a, b) in l.dense().iter().zip(expected) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn single_node() {
        let c = NodeCoordinates::new(vec![[0.3, 0.1]]).unwrap();
        let l = scaled_laplacian(&knn_build(&c, 1).unwrap()).unwrap();
        assert_eq!(l.lambda_max(), 2.0);
        assert_eq!(l.dense(), &[-1.0]);
    }

    #[test]
    fn symmetric() {
        let c = NodeCoordinates::grid(3, 4);
        let l = scaled_laplacian(&knn_build(&c, 3).unwrap()).unwrap();
        for i in 0..l.n() {
            for j in 0..l.n() {
                assert_eq!(l.at(i, j), l.at(j, i));
            }
        }
    }
}
