use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{knn_build, NodeCoordinates};

use super::dataset::{DatasetFile, DatasetMeta, Payload, Splits};

/// Oriented-bar classes drawn by [`pattern_image`].
pub const GRID_CLASSES: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct GridTask {
    pub height: usize,
    pub width: usize,
    pub samples: usize,
    pub keep: f64,
    pub k: usize,
    pub noise: f64,
    pub seed: u64,
}

impl GridTask {
    pub fn new(height: usize, width: usize, samples: usize, keep: f64, seed: u64) -> Self {
        Self {
            height,
            width,
            samples,
            keep,
            k: 9,
            noise: 0.1,
            seed,
        }
    }

    /// Number of retained pixels, `round(keep·H·W)`.
    pub fn retained(&self) -> usize {
        (self.keep * (self.height * self.width) as f64).round() as usize
    }
}

/// Row-major `H×W` image of class `label`: a horizontal, vertical, diagonal or
/// anti-diagonal bar through a random point.
pub fn pattern_image<R: Rng + ?Sized>(rng: &mut R, h: usize, w: usize, label: usize) -> Vec<f64> {
    let r0 = rng.gen_range(0..h) as i64;
    let c0 = rng.gen_range(0..w) as i64;
    let mut img = vec![0.0; h * w];
    for r in 0..h as i64 {
        for c in 0..w as i64 {
            let on = match label {
                0 => r == r0,
                1 => c == c0,
                2 => r - c == r0 - c0,
                _ => r + c == r0 + c0,
            };
            if on {
                img[(r as usize) * w + c as usize] = 1.0;
            }
        }
    }
    img
}

/// Labelled patterns observed on one shared random subset of pixels.
///
/// Retained pixels (ascending row-major index) become the graph nodes.
pub fn gen_subsampled_grid(task: &GridTask) -> Result<DatasetFile> {
    if !(task.keep > 0.0 && task.keep <= 1.0) {
        return Err(Error::Parameter(format!("keep fraction {} outside (0, 1]", task.keep)));
    }
    let m = task.retained();
    if m == 0 {
        return Err(Error::Parameter("subsampling retains no pixels".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(task.seed);
    let mut pixels: Vec<usize> = (0..task.height * task.width).collect();
    pixels.shuffle(&mut rng);
    pixels.truncate(m);
    pixels.sort_unstable();
    let coords = NodeCoordinates::new(
        pixels
            .iter()
            .map(|&p| [(p % task.width) as f64, (p / task.width) as f64])
            .collect(),
    )?;
    let graph = knn_build(&coords, task.k.min(m))?;
    let noise = Normal::new(0.0, task.noise.max(0.0)).map_err(|e| Error::Parameter(e.to_string()))?;
    let mut inputs = Vec::with_capacity(task.samples);
    let mut labels = Vec::with_capacity(task.samples);
    for s in 0..task.samples {
        let label = s % GRID_CLASSES;
        let img = pattern_image(&mut rng, task.height, task.width, label);
        inputs.push(pixels.iter().map(|&p| img[p] + noise.sample(&mut rng)).collect());
        labels.push(label);
    }
    let splits = Splits::shuffled(&mut rng, task.samples, 0.7, 0.15);
    let meta = DatasetMeta {
        grid: Some([task.height, task.width]),
        keep: Some(task.keep),
        ..DatasetMeta::default()
    };
    Ok(DatasetFile::new(
        "grid",
        task.seed,
        meta,
        &graph,
        Payload::Class {
            channels: 1,
            classes: GRID_CLASSES,
            inputs,
            labels,
        },
        splits,
    ))
}
