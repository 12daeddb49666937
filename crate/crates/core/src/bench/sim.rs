use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{knn_build, knn_build_periodic, NeighborGraph, NodeCoordinates};
use crate::model::SIM_K;

use super::dataset::{DatasetFile, DatasetMeta, Payload, Splits};

pub const DEFAULT_DENSITY: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimKind {
    Shift,
    Rotation,
    Flip,
}

impl SimKind {
    pub const ALL: [SimKind; 3] = [SimKind::Shift, SimKind::Rotation, SimKind::Flip];

    pub fn as_str(self) -> &'static str {
        match self {
            SimKind::Shift => "shift",
            SimKind::Rotation => "rotation",
            SimKind::Flip => "flip",
        }
    }
}

impl fmt::Display for SimKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SimKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SimKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown simulation task '{s}'")))
    }
}

/// What the shift does with the column pushed past the right edge.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// Column `W−1` reappears at column 0 and the graph is built on the torus.
    #[default]
    Wrap,
    /// Column `W−1` is lost, column 0 becomes inactive, and the graph is planar.
    Drop,
}

impl Boundary {
    pub fn as_str(self) -> &'static str {
        match self {
            Boundary::Wrap => "wrap",
            Boundary::Drop => "drop",
        }
    }
}

impl FromStr for Boundary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wrap" => Ok(Boundary::Wrap),
            "drop" => Ok(Boundary::Drop),
            _ => Err(Error::Parameter(format!("unknown boundary '{s}' (expected wrap or drop)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimTask {
    pub kind: SimKind,
    pub height: usize,
    pub width: usize,
    pub samples: usize,
    pub seed: u64,
    pub density: f64,
    pub boundary: Boundary,
}

impl SimTask {
    pub fn new(kind: SimKind, height: usize, width: usize, samples: usize, seed: u64) -> Self {
        Self {
            kind,
            height,
            width,
            samples,
            seed,
            density: DEFAULT_DENSITY,
            boundary: Boundary::Wrap,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Parameter("grid must be non-empty".into()));
        }
        if self.kind == SimKind::Rotation && self.height != self.width {
            return Err(Error::Parameter(format!(
                "rotation needs a square grid, got {}x{}",
                self.height, self.width
            )));
        }
        if !(0.0..=1.0).contains(&self.density) {
            return Err(Error::Parameter(format!("density {} outside [0, 1]", self.density)));
        }
        Ok(())
    }

    /// Target of a row-major `H×W` signal.
    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        let (h, w) = (self.height, self.width);
        let mut y = vec![0.0; h * w];
        for r in 0..h {
            for c in 0..w {
                let v = x[r * w + c];
                match self.kind {
                    SimKind::Shift => {
                        if c + 1 < w {
                            y[r * w + c + 1] = v;
                        } else if self.boundary == Boundary::Wrap {
                            y[r * w] = v;
                        }
                    }
                    SimKind::Rotation => y[c * w + (h - 1 - r)] = v,
                    SimKind::Flip => y[r * w + (w - 1 - c)] = v,
                }
            }
        }
        y
    }

    /// kNN graph (`k = 9`) over pixel coordinates; on the torus for a wrapping shift.
    pub fn graph(&self) -> Result<NeighborGraph> {
        let coords = NodeCoordinates::grid(self.height, self.width);
        let k = SIM_K.min(self.height * self.width);
        if self.kind == SimKind::Shift && self.boundary == Boundary::Wrap {
            knn_build_periodic(&coords, k, [self.width as f64, self.height as f64])
        } else {
            knn_build(&coords, k)
        }
    }
}

/// Bernoulli(density) binary signals with their transformed targets; every sample is training data.
pub fn gen_sim_dataset(task: &SimTask) -> Result<DatasetFile> {
    task.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(task.seed);
    let n = task.height * task.width;
    let mut inputs = Vec::with_capacity(task.samples);
    let mut targets = Vec::with_capacity(task.samples);
    for _ in 0..task.samples {
        let x: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.gen::<f64>() < task.density))).collect();
        targets.push(task.transform(&x));
        inputs.push(x);
    }
    let graph = task.graph()?;
    let meta = DatasetMeta {
        grid: Some([task.height, task.width]),
        boundary: (task.kind == SimKind::Shift).then(|| task.boundary.as_str().to_string()),
        density: Some(task.density),
        ..DatasetMeta::default()
    };
    Ok(DatasetFile::new(
        &format!("sim-{}", task.kind),
        task.seed,
        meta,
        &graph,
        Payload::NodeBinary {
            channels: 1,
            inputs,
            targets,
        },
        Splits::all_train(task.samples),
    ))
}
