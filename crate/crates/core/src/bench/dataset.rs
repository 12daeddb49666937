use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphDocument, NeighborGraph};
use crate::train::{SampleSet, TaskData, Targets, TimeSeries};

pub const DATASET_VERSION: &str = "v1";

/// Index lists into the sample (or time stamp) axis.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    pub fn all_train(count: usize) -> Self {
        Self {
            train: (0..count).collect(),
            ..Self::default()
        }
    }

    /// Shuffled split with the given train and validation fractions; the remainder is test.
    pub fn shuffled<R: Rng + ?Sized>(rng: &mut R, count: usize, train: f64, val: f64) -> Self {
        let mut idx: Vec<usize> = (0..count).collect();
        idx.shuffle(rng);
        let a = (count as f64 * train).round() as usize;
        let b = (a + (count as f64 * val).round() as usize).min(count);
        let mut s = Self {
            train: idx[..a].to_vec(),
            val: idx[a..b].to_vec(),
            test: idx[b..].to_vec(),
        };
        s.train.sort_unstable();
        s.val.sort_unstable();
        s.test.sort_unstable();
        s
    }

    /// Contiguous chronological blocks of the given percentages.
    pub fn chronological(count: usize, train_pct: usize, val_pct: usize) -> Self {
        let a = count * train_pct / 100;
        let b = count * (train_pct + val_pct) / 100;
        Self {
            train: (0..a).collect(),
            val: (a..b).collect(),
            test: (b..count).collect(),
        }
    }

    /// Disjoint and covering `0..count`.
    pub fn check(&self, count: usize) -> Result<()> {
        let mut seen = vec![false; count];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= count {
                return Err(Error::Bounds {
                    op: "splits",
                    index: i,
                    len: count,
                });
            }
            if seen[i] {
                return Err(Error::Structural(format!("index {i} appears in more than one split")));
            }
            seen[i] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Structural(format!("index {i} is in no split")));
        }
        Ok(())
    }
}

/// Dataset payload: labelled samples over a fixed graph, or one multivariate series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Payload {
    NodeBinary {
        channels: usize,
        inputs: Vec<Vec<f64>>,
        targets: Vec<Vec<f64>>,
    },
    Class {
        channels: usize,
        classes: usize,
        inputs: Vec<Vec<f64>>,
        labels: Vec<usize>,
    },
    Series {
        series: TimeSeries,
    },
}

/// Generator parameters worth keeping with the data.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keep: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub missing_rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFile {
    pub version: String,
    pub task: String,
    pub seed: u64,
    #[serde(default)]
    pub meta: DatasetMeta,
    pub graph: GraphDocument,
    pub payload: Payload,
    pub splits: Splits,
}

impl DatasetFile {
    pub fn new(task: &str, seed: u64, meta: DatasetMeta, graph: &NeighborGraph, payload: Payload, splits: Splits) -> Self {
        Self {
            version: DATASET_VERSION.to_string(),
            task: task.to_string(),
            seed,
            meta,
            graph: GraphDocument::from(graph),
            payload,
            splits,
        }
    }

    pub fn count(&self) -> usize {
        match &self.payload {
            Payload::NodeBinary { inputs, .. } | Payload::Class { inputs, .. } => inputs.len(),
            Payload::Series { series } => series.steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != DATASET_VERSION {
            return Err(Error::Parameter(format!("unsupported dataset version '{}'", self.version)));
        }
        self.splits.check(self.count())?;
        let n = self.graph.n;
        match &self.payload {
            Payload::NodeBinary { channels, inputs, targets } => {
                if targets.len() != inputs.len() || targets.iter().any(|t| t.len() != n) {
                    return Err(Error::Structural("node targets do not match samples × nodes".into()));
                }
                check_inputs(inputs, n * channels)?;
            }
            Payload::Class {
                channels,
                classes,
                inputs,
                labels,
            } => {
                if labels.len() != inputs.len() {
                    return Err(Error::Structural("label count differs from sample count".into()));
                }
                if let Some(&l) = labels.iter().find(|&&l| l >= *classes) {
                    return Err(Error::Bounds {
                        op: "dataset_labels",
                        index: l,
                        len: *classes,
                    });
                }
                check_inputs(inputs, n * channels)?;
            }
            Payload::Series { series } => {
                if series.nodes != n {
                    return Err(Error::Structural(format!(
                        "series has {} nodes, graph has {n}",
                        series.nodes
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let d: Self = serde_json::from_str(s)?;
        d.validate()?;
        Ok(d)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    pub fn neighbor_graph(&self) -> Result<NeighborGraph> {
        self.graph.to_graph()
    }

    /// Train/val/test sample sets for sample-based payloads.
    pub fn task_data(&self) -> Result<TaskData> {
        let n = self.graph.n;
        let pick = |idx: &[usize]| -> Result<SampleSet> {
            match &self.payload {
                Payload::NodeBinary { channels, inputs, targets } => SampleSet::new(
                    n,
                    *channels,
                    idx.iter().map(|&i| inputs[i].clone()).collect(),
                    Targets::NodeBinary(idx.iter().map(|&i| targets[i].clone()).collect()),
                ),
                Payload::Class {
                    channels, inputs, labels, ..
                } => SampleSet::new(
                    n,
                    *channels,
                    idx.iter().map(|&i| inputs[i].clone()).collect(),
                    Targets::Class(idx.iter().map(|&i| labels[i]).collect()),
                ),
                Payload::Series { .. } => Err(Error::config("series datasets are split by the forecast protocol")),
            }
        };
        Ok(TaskData {
            train: pick(&self.splits.train)?,
            val: pick(&self.splits.val)?,
            test: pick(&self.splits.test)?,
        })
    }
}

fn check_inputs(inputs: &[Vec<f64>], width: usize) -> Result<()> {
    if let Some(i) = inputs.iter().position(|x| x.len() != width) {
        return Err(Error::Dimension {
            op: "dataset_inputs",
            left: vec![inputs[i].len()],
            right: vec![width],
        });
    }
    Ok(())
}
