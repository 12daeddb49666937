#![allow(dead_code)]

pub mod oracles;

use dsgc::graph::{knn_build, NeighborGraph, NodeCoordinates};
use dsgc::tensor::{Tape, Tensor, Var};
use dsgc::Result;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor<R: Rng>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn random_coords<R: Rng>(rng: &mut R, n: usize, extent: f64) -> NodeCoordinates {
    NodeCoordinates::new((0..n).map(|_| [rng.gen_range(0.0..extent), rng.gen_range(0.0..extent)]).collect()).unwrap()
}

pub fn random_graph<R: Rng>(rng: &mut R, n: usize, k: usize) -> NeighborGraph {
    knn_build(&random_coords(rng, n, 3.0), k).unwrap()
}

/// Dense `N×N` operator `A[dst][src] = Σ w_e` of a scalar-weighted edge list.
pub fn dense_operator(g: &NeighborGraph, weights: &[f64]) -> Vec<Vec<f64>> {
    let n = g.n();
    let mut a = vec![vec![0.0; n]; n];
    for (e, (&s, &d)) in g.edges().src().iter().zip(g.edges().dst()).enumerate() {
        a[d][s] += weights[e];
    }
    a
}

pub fn dense_matmul(a: &[Vec<f64>], x: &Tensor<f64>) -> Vec<f64> {
    let (n, q) = (x.rows(), x.cols());
    let mut out = vec![0.0; a.len() * q];
    for i in 0..a.len() {
        for j in 0..n {
            for c in 0..q {
                out[i * q + c] += a[i][j] * x.at(j, c);
            }
        }
    }
    out
}

pub fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Worst relative error between tape gradients and central differences of
/// `Σ f(inputs) ⊙ R` for a fixed random `R`, over every input entry.
pub fn fd_max_rel_error(inputs: &[Tensor<f64>], seed: u64, f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>) -> f64 {
    let probe = |values: &[Tensor<f64>]| -> (f64, Tape<f64>, Vec<Var>, Var) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.input(v.clone())).collect();
        let y = f(&mut tape, &vars).unwrap();
        let shape = tape.shape(y).to_vec();
        let r = random_tensor(&mut rng(seed), &shape, 1.0);
        let r = tape.constant(r);
        let prod = tape.mul(y, r).unwrap();
        let loss = tape.sum(prod);
        (tape.value(loss).data()[0], tape, vars, loss)
    };
    let (_, mut tape, vars, loss) = probe(inputs);
    tape.backward(loss).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = tape.grad(vars[i]).map(|g| g.to_f64()).unwrap_or_else(|| vec![0.0; input.len()]);
        for j in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            let numeric = (probe(&plus).0 - probe(&minus).0) / (2.0 * h);
            let a = analytic[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}
