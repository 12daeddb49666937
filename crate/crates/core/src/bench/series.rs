use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{knn_build, NodeCoordinates};
use crate::train::TimeSeries;

use super::dataset::{DatasetFile, DatasetMeta, Payload, Splits};

/// Settings of the synthetic sensor network.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorTask {
    pub nodes: usize,
    pub steps: usize,
    pub missing_rate: f64,
    pub seed: u64,
    /// Neighborhood size of the stored graph.
    pub k: usize,
    pub blobs: usize,
    /// Distance every blob travels per step (unit-square units).
    pub speed: f64,
    /// Standard deviation of the graph-diffused innovation noise.
    pub noise: f64,
    /// Fixed sensor positions in the unit square; sampled uniformly when absent.
    pub coords: Option<Vec<[f64; 2]>>,
}

impl SensorTask {
    pub fn new(nodes: usize, steps: usize, missing_rate: f64, seed: u64) -> Self {
        Self {
            nodes,
            steps,
            missing_rate,
            seed,
            k: 8,
            blobs: 4,
            speed: 0.03,
            noise: 0.05,
            coords: None,
        }
    }
}

/// Gaussian blobs drifting with a common wind over the unit torus.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorField {
    wind: [f64; 2],
    centers: Vec<[f64; 2]>,
    widths: Vec<f64>,
    periods: Vec<f64>,
    phases: Vec<f64>,
}

fn torus_delta(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    if d > 0.5 {
        d - 1.0
    } else {
        d
    }
}

impl SensorField {
    pub fn random<R: Rng + ?Sized>(rng: &mut R, blobs: usize, speed: f64) -> Self {
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        Self {
            wind: [speed * angle.cos(), speed * angle.sin()],
            centers: (0..blobs).map(|_| [rng.gen(), rng.gen()]).collect(),
            widths: (0..blobs).map(|_| rng.gen_range(0.12..0.2)).collect(),
            periods: (0..blobs).map(|_| rng.gen_range(80.0..240.0)).collect(),
            phases: (0..blobs).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect(),
        }
    }

    /// Noiseless signal at position `x` and time step `t`.
    pub fn value(&self, x: [f64; 2], t: usize) -> f64 {
        let t = t as f64;
        let mut v = 0.0;
        for b in 0..self.centers.len() {
            let cx = self.centers[b][0] + self.wind[0] * t;
            let cy = self.centers[b][1] + self.wind[1] * t;
            let dx = torus_delta(x[0], cx);
            let dy = torus_delta(x[1], cy);
            let amp = 1.0 + 0.5 * (std::f64::consts::TAU * t / self.periods[b] + self.phases[b]).sin();
            v += amp * (-(dx * dx + dy * dy) / (2.0 * self.widths[b] * self.widths[b])).exp();
        }
        v
    }
}

/// Advected-field sensor readings with graph-diffused noise and random deletions.
///
/// Sensors sit in the unit square; the stored graph is the kNN graph over their
/// positions rescaled so the mean nearest-neighbor distance is 1.
pub fn gen_synthetic_sensor_series(task: &SensorTask) -> Result<DatasetFile> {
    if !(0.0..1.0).contains(&task.missing_rate) {
        return Err(Error::Parameter(format!("missing rate {} outside [0, 1)", task.missing_rate)));
    }
    if task.nodes < 2 || task.steps == 0 {
        return Err(Error::Parameter("series needs at least 2 sensors and 1 step".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(task.seed);
    let pts: Vec<[f64; 2]> = match &task.coords {
        Some(c) if c.len() == task.nodes => c.clone(),
        Some(c) => {
            return Err(Error::Parameter(format!(
                "{} fixed coordinates for {} sensors",
                c.len(),
                task.nodes
            )))
        }
        None => (0..task.nodes).map(|_| [rng.gen(), rng.gen()]).collect(),
    };
    let coords = NodeCoordinates::new(pts.clone())?;
    let field = SensorField::random(&mut rng, task.blobs, task.speed);
    let nn = coords.mean_nearest_distance();
    let scaled = if nn > 0.0 { coords.scaled(1.0 / nn) } else { coords.clone() };
    let graph = knn_build(&scaled, task.k.min(task.nodes))?;

    let n = task.nodes;
    let k = graph.k();
    let normal = Normal::new(0.0, task.noise.max(0.0)).map_err(|e| Error::Parameter(e.to_string()))?;
    let mut e = vec![0.0; n];
    let mut values = Vec::with_capacity(task.steps * n);
    let mut observed = Vec::with_capacity(task.steps * n);
    for t in 0..task.steps {
        let mut next = vec![0.0; n];
        for (i, v) in next.iter_mut().enumerate() {
            let diffused: f64 = graph.neighbors(i).iter().map(|&j| e[j]).sum::<f64>() / k as f64;
            *v = 0.8 * diffused + normal.sample(&mut rng);
        }
        e = next;
        for i in 0..n {
            let keep = rng.gen::<f64>() >= task.missing_rate;
            values.push(if keep { field.value(pts[i], t) + e[i] } else { 0.0 });
            observed.push(keep);
        }
    }
    let series = TimeSeries::new(task.steps, n, values, observed)?;
    let meta = DatasetMeta {
        missing_rate: Some(task.missing_rate),
        ..DatasetMeta::default()
    };
    Ok(DatasetFile::new(
        "series",
        task.seed,
        meta,
        &graph,
        Payload::Series { series },
        Splits::chronological(task.steps, 60, 20),
    ))
}
