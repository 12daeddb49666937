//! Losses, metrics, learning-rate schedules and the epoch loop.

mod forecast;

pub use forecast::{rolling_forecast_eval, ForecastProblem, Normalizer, SeriesSplit, TimeSeries};

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GraphStack, Mode, Model};
use crate::tensor::{Optimizer, OptimizerKind, Parameter, Precision, Real, Tape, Tensor, Var, BCE_CLAMP};

pub const REPORT_VERSION: &str = "v1";
pub const CURVE_HEADER: &str = "epoch,train_loss,val_metric";
const EVAL_BATCH: usize = 256;

/// Mean binary cross entropy with probabilities clamped `1e-7` away from 0 and 1.
pub fn bce_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Dimension {
            op: "bce_loss",
            left: vec![pred.len()],
            right: vec![target.len()],
        });
    }
    if let Some(t) = target.iter().find(|&&t| t != 0.0 && t != 1.0) {
        return Err(Error::Contract(format!("bce target {t} is not 0 or 1")));
    }
    let total: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / pred.len().max(1) as f64)
}

/// Mean negative log-softmax of the labelled class; `logits` is row-major `N×K`.
pub fn cross_entropy_loss(logits: &[f64], classes: usize, labels: &[usize]) -> Result<f64> {
    if classes == 0 || logits.len() != labels.len() * classes {
        return Err(Error::Dimension {
            op: "cross_entropy_loss",
            left: vec![logits.len()],
            right: vec![labels.len(), classes],
        });
    }
    let mut total = 0.0;
    for (row, &l) in logits.chunks(classes).zip(labels) {
        if l >= classes {
            return Err(Error::Bounds {
                op: "cross_entropy_loss",
                index: l,
                len: classes,
            });
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        total += lse - row[l];
    }
    Ok(total / labels.len().max(1) as f64)
}

pub fn rmse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Dimension {
            op: "rmse",
            left: vec![pred.len()],
            right: vec![target.len()],
        });
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let ss: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((ss / pred.len() as f64).sqrt())
}

/// Step decay: the rate is multiplied by `factor` at each milestone fraction of the run.
#[derive(Clone, Debug, PartialEq)]
pub struct LrSchedule {
    pub initial: f64,
    pub epochs: usize,
    pub milestones: Vec<f64>,
    pub factor: f64,
}

impl LrSchedule {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self
            .milestones
            .iter()
            .filter(|&&m| epoch >= (m * self.epochs as f64).floor() as usize)
            .count();
        self.initial * self.factor.powi(passed as i32)
    }
}

fn default_milestones() -> Vec<f64> {
    vec![0.5, 0.75]
}

fn default_decay() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub epochs: usize,
    #[serde(default = "default_milestones")]
    pub milestones: Vec<f64>,
    #[serde(default = "default_decay")]
    pub decay: f64,
    /// Samples per step; `None` trains full-batch.
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub precision: Precision,
}

impl TrainConfig {
    pub fn new(optimizer: OptimizerKind, lr: f64, epochs: usize) -> Self {
        Self {
            optimizer,
            lr,
            epochs,
            milestones: default_milestones(),
            decay: default_decay(),
            batch_size: None,
            seed: 0,
            precision: Precision::F32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate {} must be positive", self.lr)));
        }
        if let Some(m) = self.milestones.iter().find(|m| !(**m > 0.0 && **m < 1.0)) {
            return Err(Error::config(format!("milestone {m} outside (0, 1)")));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("milestones must be strictly increasing"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::config("batch size must be positive"));
        }
        Ok(())
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            initial: self.lr,
            epochs: self.epochs,
            milestones: self.milestones.clone(),
            factor: self.decay,
        }
    }
}

/// Supervision attached to a set of samples.
#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    /// Per-node 0/1 labels, one `N`-vector per sample. Loss and metric: BCE.
    NodeBinary(Vec<Vec<f64>>),
    /// Per-node values with an observation mask. Loss: masked MSE; metric: masked RMSE × `scale`.
    NodeRegression {
        values: Vec<Vec<f64>>,
        mask: Vec<Vec<f64>>,
        scale: f64,
    },
    /// One class per sample. Loss: cross entropy; metric: error rate.
    Class(Vec<usize>),
}

/// Samples with node features `N×P` (row-major) and their targets.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub nodes: usize,
    pub channels: usize,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Targets,
}

impl SampleSet {
    pub fn new(nodes: usize, channels: usize, inputs: Vec<Vec<f64>>, targets: Targets) -> Result<Self> {
        let count = match &targets {
            Targets::NodeBinary(t) => t.len(),
            Targets::NodeRegression { values, mask, .. } => {
                if mask.len() != values.len() {
                    return Err(Error::Structural("regression mask and values differ in length".into()));
                }
                values.len()
            }
            Targets::Class(c) => c.len(),
        };
        if count != inputs.len() {
            return Err(Error::Structural(format!(
                "{} inputs but {count} targets",
                inputs.len()
            )));
        }
        if let Some(i) = inputs.iter().position(|x| x.len() != nodes * channels) {
            return Err(Error::Dimension {
                op: "sample_set",
                left: vec![inputs[i].len()],
                right: vec![nodes, channels],
            });
        }
        Ok(Self {
            nodes,
            channels,
            inputs,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn batch_input<T: Real>(&self, idx: &[usize]) -> Tensor<T> {
        let mut data = Vec::with_capacity(idx.len() * self.nodes * self.channels);
        for &i in idx {
            data.extend(self.inputs[i].iter().map(|&v| T::of(v)));
        }
        Tensor::new(vec![idx.len() * self.nodes, self.channels], data).expect("validated sample shape")
    }

    fn loss<T: Real>(&self, tape: &mut Tape<T>, output: Var, idx: &[usize]) -> Result<Var> {
        match &self.targets {
            Targets::NodeBinary(t) => {
                let target = idx.iter().flat_map(|&i| t[i].iter().map(|&v| T::of(v))).collect();
                tape.bce(output, Arc::new(target))
            }
            Targets::NodeRegression { values, mask, .. } => {
                let target = idx.iter().flat_map(|&i| values[i].iter().map(|&v| T::of(v))).collect();
                let m = idx.iter().flat_map(|&i| mask[i].iter().map(|&v| T::of(v))).collect();
                tape.mse(output, Arc::new(target), Some(Arc::new(m)))
            }
            Targets::Class(c) => tape.cross_entropy(output, Arc::new(idx.iter().map(|&i| c[i]).collect())),
        }
    }

    /// Model predictions for every sample, in sample order, as `f64`.
    pub fn predict<T: Real>(&self, model: &Model<T>, stack: &GraphStack<T>) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(self.len());
        let all: Vec<usize> = (0..self.len()).collect();
        for chunk in all.chunks(EVAL_BATCH) {
            let y = model.predict(stack, self.batch_input(chunk))?;
            let per = y.len() / chunk.len();
            out.extend(y.to_f64().chunks(per).map(|c| c.to_vec()));
        }
        Ok(out)
    }

    /// Lower-is-better metric of the model on this set.
    pub fn metric<T: Real>(&self, model: &Model<T>, stack: &GraphStack<T>) -> Result<f64> {
        let pred = self.predict(model, stack)?;
        self.metric_of(&pred)
    }

    pub fn metric_of(&self, pred: &[Vec<f64>]) -> Result<f64> {
        match &self.targets {
            Targets::NodeBinary(t) => bce_loss(&pred.concat(), &t.concat()),
            Targets::NodeRegression { values, mask, scale } => {
                let (mut p, mut y) = (Vec::new(), Vec::new());
                for ((ps, vs), ms) in pred.iter().zip(values).zip(mask) {
                    for ((&a, &b), &m) in ps.iter().zip(vs).zip(ms) {
                        if m > 0.0 {
                            p.push(a * scale);
                            y.push(b * scale);
                        }
                    }
                }
                rmse(&p, &y)
            }
            Targets::Class(c) => {
                let wrong = pred
                    .iter()
                    .zip(c)
                    .filter(|(row, &l)| {
                        let best = row
                            .iter()
                            .enumerate()
                            .fold((0, f64::NEG_INFINITY), |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc })
                            .0;
                        best != l
                    })
                    .count();
                Ok(wrong as f64 / c.len().max(1) as f64)
            }
        }
    }
}

/// Train, validation and test samples.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskData {
    pub train: SampleSet,
    pub val: SampleSet,
    pub test: SampleSet,
}

/// Outcome of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub version: String,
    pub label: String,
    pub seed: u64,
    pub precision: Precision,
    pub param_count: usize,
    pub epochs: usize,
    pub train_loss: Vec<f64>,
    pub val_metric: Vec<f64>,
    /// Epoch whose parameters were kept (best validation metric).
    pub best_epoch: usize,
    /// Metric of the kept parameters on the test set, absent when there is none.
    pub test_metric: Option<f64>,
    pub wall_seconds: f64,
}

impl TrainReport {
    pub fn final_train_loss(&self) -> f64 {
        self.train_loss.last().copied().unwrap_or(f64::NAN)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn curve_csv(&self) -> String {
        let mut s = String::from(CURVE_HEADER);
        s.push('\n');
        for (e, (l, v)) in self.train_loss.iter().zip(&self.val_metric).enumerate() {
            s.push_str(&format!("{e},{l},{v}\n"));
        }
        s
    }

    pub fn write(&self, json: &Path, csv: &Path) -> Result<()> {
        std::fs::write(json, self.to_json()?).map_err(|e| Error::io(json, e))?;
        std::fs::write(csv, self.curve_csv()).map_err(|e| Error::io(csv, e))?;
        Ok(())
    }
}

fn snapshot<T: Real>(model: &Model<T>) -> Vec<Tensor<T>> {
    model.params().iter().map(|p| p.value().clone()).collect()
}

fn restore<T: Real>(model: &mut Model<T>, values: Vec<Tensor<T>>) -> Result<()> {
    for (p, v) in model.params_mut().into_iter().zip(values) {
        p.set_value(v)?;
    }
    Ok(())
}

/// One optimization step on the samples `idx`; returns the batch loss.
pub fn train_step<T: Real>(
    model: &mut Model<T>,
    stack: &GraphStack<T>,
    data: &SampleSet,
    idx: &[usize],
    opt: &mut Optimizer<T>,
    dropout_seed: u64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let fwd = model.forward(&mut tape, stack, data.batch_input(idx), Mode::Train(dropout_seed))?;
    let loss = data.loss(&mut tape, fwd.output, idx)?;
    let value = tape.value(loss).data()[0].to_f64_lossy();
    if !value.is_finite() {
        return Ok(value);
    }
    tape.backward(loss)?;
    model.zero_grad();
    model.collect_grads(&tape, &fwd)?;
    let mut params: Vec<&mut Parameter<T>> = model.params_mut();
    opt.step(&mut params)?;
    Ok(value)
}

/// Deterministic epoch loop with step-decayed learning rate and best-validation selection.
///
/// When `data.val` is empty the final parameters are kept and the validation series
/// repeats the training loss.
pub fn train_loop<T: Real>(
    model: &mut Model<T>,
    stack: &GraphStack<T>,
    data: &TaskData,
    cfg: &TrainConfig,
    label: &str,
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::config("empty training set"));
    }
    let start = Instant::now();
    let schedule = cfg.schedule();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let batch = cfg.batch_size.unwrap_or(data.train.len()).min(data.train.len());
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut train_loss = Vec::with_capacity(cfg.epochs);
    let mut val_metric = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Vec<Tensor<T>>)> = None;
    let mut step = 0u64;

    for epoch in 0..cfg.epochs {
        opt.set_lr(schedule.lr_at(epoch));
        if batch < order.len() {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let l = train_step(model, stack, &data.train, chunk, &mut opt, cfg.seed ^ step.wrapping_mul(0x9E37_79B9))?;
            step += 1;
            if !l.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("training loss became {l} at step {step}"),
                });
            }
            total += l * chunk.len() as f64;
        }
        let epoch_loss = total / data.train.len() as f64;
        train_loss.push(epoch_loss);
        let v = if data.val.is_empty() {
            epoch_loss
        } else {
            let v = data.val.metric(model, stack)?;
            if !v.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("validation metric became {v}"),
                });
            }
            if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                best = Some((v, epoch, snapshot(model)));
            }
            v
        };
        val_metric.push(v);
        log::debug!("{label} epoch {epoch} loss {epoch_loss:.6} val {v:.6}");
    }

    let best_epoch = match best {
        Some((_, e, values)) => {
            restore(model, values)?;
            e
        }
        None => cfg.epochs - 1,
    };
    let test_metric = if data.test.is_empty() {
        None
    } else {
        Some(data.test.metric(model, stack)?)
    };
    Ok(TrainReport {
        version: REPORT_VERSION.to_string(),
        label: label.to_string(),
        seed: cfg.seed,
        precision: T::PRECISION,
        param_count: model.num_params(),
        epochs: cfg.epochs,
        train_loss,
        val_metric,
        best_epoch,
        test_metric,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}
