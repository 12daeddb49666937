use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{PoolMode, Real, Tape, Var};

use super::NodeCoordinates;

const MAX_LLOYD_ITERS: usize = 100;

/// Node-to-cluster assignment produced by K-means on coordinates.
///
/// Clusters are numbered in order of their lowest member node.
#[derive(Clone, Debug, PartialEq)]
pub struct CoarseningMap {
    assignment: Arc<Vec<usize>>,
    centroids: Vec<[f64; 2]>,
    mode: PoolMode,
    objective: Vec<f64>,
}

impl CoarseningMap {
    /// Every node its own cluster.
    pub fn identity(coords: &NodeCoordinates, mode: PoolMode) -> Self {
        Self {
            assignment: Arc::new((0..coords.len()).collect()),
            centroids: coords.as_slice().to_vec(),
            mode,
            objective: vec![0.0],
        }
    }

    pub fn from_assignment(assignment: Vec<usize>, coords: &NodeCoordinates, mode: PoolMode) -> Result<Self> {
        if assignment.len() != coords.len() {
            return Err(Error::Dimension {
                op: "coarsening_map",
                left: vec![assignment.len()],
                right: vec![coords.len()],
            });
        }
        let m = assignment.iter().max().map_or(0, |&a| a + 1);
        let centroids = centroids_of(coords.as_slice(), &assignment, m);
        if centroids.iter().any(|c| c[0].is_nan()) {
            return Err(Error::Structural("coarsening map has an empty cluster".into()));
        }
        let objective = vec![objective(coords.as_slice(), &assignment, &centroids)];
        Ok(Self {
            assignment: Arc::new(assignment),
            centroids,
            mode,
            objective,
        })
    }

    pub fn input_nodes(&self) -> usize {
        self.assignment.len()
    }

    pub fn clusters(&self) -> usize {
        self.centroids.len()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn centroids(&self) -> NodeCoordinates {
        NodeCoordinates::new(self.centroids.clone()).expect("centroids are finite")
    }

    pub fn mode(&self) -> PoolMode {
        self.mode
    }

    pub fn with_mode(mut self, mode: PoolMode) -> Self {
        self.mode = mode;
        self
    }

    /// Sum of squared distances to the assigned centroid after each Lloyd iteration.
    pub fn objective_history(&self) -> &[f64] {
        &self.objective
    }
}

fn sq(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn centroids_of(pts: &[[f64; 2]], assignment: &[usize], m: usize) -> Vec<[f64; 2]> {
    let mut sums = vec![[0.0f64; 2]; m];
    let mut counts = vec![0usize; m];
    for (p, &a) in pts.iter().zip(assignment) {
        sums[a][0] += p[0];
        sums[a][1] += p[1];
        counts[a] += 1;
    }
    sums.iter()
        .zip(&counts)
        .map(|(s, &c)| {
            if c == 0 {
                [f64::NAN, f64::NAN]
            } else {
                [s[0] / c as f64, s[1] / c as f64]
            }
        })
        .collect()
}

fn objective(pts: &[[f64; 2]], assignment: &[usize], centroids: &[[f64; 2]]) -> f64 {
    pts.iter().zip(assignment).map(|(p, &a)| sq(*p, centroids[a])).sum()
}

fn nearest(p: [f64; 2], centroids: &[[f64; 2]]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, &cen) in centroids.iter().enumerate() {
        let d = sq(p, cen);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

/// K-means++ seeding from `seed`, then Lloyd iterations until the assignment is stable
/// (at most 100). An empty cluster takes the point of the largest cluster that lies
/// farthest from that cluster's centroid.
pub fn kmeans_coarsen(coords: &NodeCoordinates, m: usize, seed: u64, mode: PoolMode) -> Result<CoarseningMap> {
    let n = coords.len();
    if m == 0 || m > n {
        return Err(Error::Parameter(format!("cluster count {m} must lie in 1..={n}")));
    }
    let pts = coords.as_slice();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut chosen = vec![false; n];
    let first = rng.gen_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![pts[first]];
    let mut d2: Vec<f64> = pts.iter().map(|&p| sq(p, pts[first])).collect();
    while centroids.len() < m {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 {
                    pick = Some(i);
                    if r < d {
                        break;
                    }
                    r -= d;
                }
            }
            pick.expect("positive mass")
        } else {
            chosen.iter().position(|&c| !c).expect("m <= n")
        };
        chosen[pick] = true;
        centroids.push(pts[pick]);
        for (d, &p) in d2.iter_mut().zip(pts) {
            *d = d.min(sq(p, pts[pick]));
        }
    }

    let mut assignment: Vec<usize> = pts.iter().map(|&p| nearest(p, &centroids)).collect();
    let mut history = Vec::new();
    for _ in 0..MAX_LLOYD_ITERS {
        repair_empty(pts, &mut assignment, m);
        centroids = centroids_of(pts, &assignment, m);
        history.push(objective(pts, &assignment, &centroids));
        let next: Vec<usize> = pts.iter().map(|&p| nearest(p, &centroids)).collect();
        if next == assignment {
            break;
        }
        assignment = next;
    }
    repair_empty(pts, &mut assignment, m);

    // canonical labels: clusters ordered by their lowest member
    let mut relabel = vec![usize::MAX; m];
    let mut next_label = 0;
    for a in assignment.iter_mut() {
        if relabel[*a] == usize::MAX {
            relabel[*a] = next_label;
            next_label += 1;
        }
        *a = relabel[*a];
    }
    let centroids = centroids_of(pts, &assignment, m);
    Ok(CoarseningMap {
        assignment: Arc::new(assignment),
        centroids,
        mode,
        objective: history,
    })
}

fn repair_empty(pts: &[[f64; 2]], assignment: &mut [usize], m: usize) {
    loop {
        let mut counts = vec![0usize; m];
        for &a in assignment.iter() {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else { return };
        let largest = (0..m).max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a))).unwrap_or(0);
        let centroids = centroids_of(pts, assignment, m);
        let far = (0..pts.len())
            .filter(|&i| assignment[i] == largest)
            .max_by(|&a, &b| {
                sq(pts[a], centroids[largest])
                    .total_cmp(&sq(pts[b], centroids[largest]))
                    .then(b.cmp(&a))
            })
            .expect("largest cluster is non-empty");
        assignment[far] = empty;
    }
}

/// Pool `(B·n)×Q` node features down to `(B·m)×Q` cluster features.
pub fn pool_apply<T: Real>(tape: &mut Tape<T>, map: &CoarseningMap, x: Var) -> Result<Var> {
    tape.pool(x, map.assignment.clone(), map.clusters(), map.mode)
}
