use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GraphStack, Model};
use crate::tensor::Real;

use super::{rmse, SampleSet, TaskData, Targets};

/// Multivariate series `values[t·n + i]` with an observation flag per entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSeries {
    pub steps: usize,
    pub nodes: usize,
    pub values: Vec<f64>,
    pub observed: Vec<bool>,
}

impl TimeSeries {
    pub fn new(steps: usize, nodes: usize, values: Vec<f64>, observed: Vec<bool>) -> Result<Self> {
        if values.len() != steps * nodes || observed.len() != steps * nodes {
            return Err(Error::Dimension {
                op: "time_series",
                left: vec![values.len(), observed.len()],
                right: vec![steps, nodes],
            });
        }
        if let Some(i) = values.iter().zip(&observed).position(|(v, &o)| o && !v.is_finite()) {
            return Err(Error::Structural(format!("observed value {i} is not finite")));
        }
        Ok(Self {
            steps,
            nodes,
            values,
            observed,
        })
    }

    pub fn fully_observed(steps: usize, nodes: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(steps, nodes, values, vec![true; steps * nodes])
    }

    pub fn at(&self, t: usize, i: usize) -> Option<f64> {
        let k = t * self.nodes + i;
        self.observed[k].then_some(self.values[k])
    }
}

/// Chronological 60/20/20 split of target time stamps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeriesSplit {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl SeriesSplit {
    pub fn chronological(steps: usize) -> Self {
        let a = steps * 60 / 100;
        let b = steps * 80 / 100;
        Self {
            train: 0..a,
            val: a..b,
            test: b..steps,
        }
    }
}

/// Affine standardization fitted on observed training values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: f64,
    pub std: f64,
}

impl Normalizer {
    pub fn fit(series: &TimeSeries, steps: Range<usize>) -> Self {
        let vals: Vec<f64> = steps
            .flat_map(|t| (0..series.nodes).filter_map(move |i| series.at(t, i)))
            .collect();
        if vals.is_empty() {
            return Self { mean: 0.0, std: 1.0 };
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
        let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        Self { mean, std }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// One-step-ahead rolling forecast over a series.
///
/// The input for target time `t` holds the true values `y_{t−p} … y_{t−1}` of every
/// node (standardized, missing entries set to 0) and, when `mask` is set, a final
/// channel that is 1 where `y_{t−1}` is missing.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastProblem {
    pub series: TimeSeries,
    pub window: usize,
    pub mask: bool,
    pub norm: Normalizer,
    pub split: SeriesSplit,
}

impl ForecastProblem {
    pub fn new(series: TimeSeries, window: usize, mask: bool) -> Result<Self> {
        if window == 0 {
            return Err(Error::config("forecast window p must be at least 1"));
        }
        let split = SeriesSplit::chronological(series.steps);
        let norm = Normalizer::fit(&series, split.train.clone());
        Ok(Self {
            series,
            window,
            mask,
            norm,
            split,
        })
    }

    pub fn channels(&self) -> usize {
        self.window + usize::from(self.mask)
    }

    /// Target time stamps of `range` that have a full window of history.
    fn usable(&self, range: Range<usize>) -> Vec<usize> {
        let skipped = range.clone().filter(|&t| t < self.window).count();
        if skipped > 0 {
            log::warn!(
                "skipping {skipped} time stamps in {}..{} without {} steps of history",
                range.start,
                range.end,
                self.window
            );
        }
        range.filter(|&t| t >= self.window).collect()
    }

    pub fn samples(&self, range: Range<usize>) -> Result<SampleSet> {
        let n = self.series.nodes;
        let c = self.channels();
        let times = self.usable(range);
        let mut inputs = Vec::with_capacity(times.len());
        let mut values = Vec::with_capacity(times.len());
        let mut mask = Vec::with_capacity(times.len());
        for &t in &times {
            let mut x = vec![0.0; n * c];
            for i in 0..n {
                for (w, s) in (t - self.window..t).enumerate() {
                    x[i * c + w] = self.series.at(s, i).map_or(0.0, |v| self.norm.apply(v));
                }
                if self.mask && self.series.at(t - 1, i).is_none() {
                    x[i * c + self.window] = 1.0;
                }
            }
            inputs.push(x);
            values.push((0..n).map(|i| self.series.at(t, i).map_or(0.0, |v| self.norm.apply(v))).collect());
            mask.push((0..n).map(|i| f64::from(u8::from(self.series.at(t, i).is_some()))).collect());
        }
        SampleSet::new(
            n,
            c,
            inputs,
            Targets::NodeRegression {
                values,
                mask,
                scale: self.norm.std,
            },
        )
    }

    pub fn task_data(&self) -> Result<TaskData> {
        Ok(TaskData {
            train: self.samples(self.split.train.clone())?,
            val: self.samples(self.split.val.clone())?,
            test: self.samples(self.split.test.clone())?,
        })
    }

    /// RMSE of predicting the last observed value in the window (training mean if none).
    pub fn persistence_rmse(&self, range: Range<usize>) -> Result<f64> {
        let (mut p, mut y) = (Vec::new(), Vec::new());
        for t in self.usable(range) {
            for i in 0..self.series.nodes {
                let Some(target) = self.series.at(t, i) else {
                    continue;
                };
                let last = (t - self.window..t)
                    .rev()
                    .find_map(|s| self.series.at(s, i))
                    .unwrap_or(self.norm.mean);
                p.push(last);
                y.push(target);
            }
        }
        rmse(&p, &y)
    }
}

/// Test-split RMSE in original units, over every observed test entry.
pub fn rolling_forecast_eval<T: Real>(model: &Model<T>, stack: &GraphStack<T>, problem: &ForecastProblem) -> Result<f64> {
    problem.samples(problem.split.test.clone())?.metric(model, stack)
}
