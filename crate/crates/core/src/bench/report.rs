use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::TrainReport;

/// Mean and sample standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

/// Aggregate over the seeds of one model label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub label: String,
    pub runs: usize,
    pub seeds: Vec<u64>,
    pub param_count: usize,
    pub final_train_loss: Stat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_metric: Option<Stat>,
}

/// Group reports by label (in first-appearance order) and aggregate each group.
pub fn summarize(reports: &[TrainReport]) -> Vec<Summary> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<&TrainReport>> = BTreeMap::new();
    for r in reports {
        if !groups.contains_key(r.label.as_str()) {
            order.push(&r.label);
        }
        groups.entry(&r.label).or_default().push(r);
    }
    order
        .into_iter()
        .map(|label| {
            let g = &groups[label];
            let losses: Vec<f64> = g.iter().map(|r| r.final_train_loss()).collect();
            let tests: Vec<f64> = g.iter().filter_map(|r| r.test_metric).collect();
            Summary {
                label: label.to_string(),
                runs: g.len(),
                seeds: g.iter().map(|r| r.seed).collect(),
                param_count: g[0].param_count,
                final_train_loss: Stat::of(&losses),
                test_metric: (tests.len() == g.len()).then(|| Stat::of(&tests)),
            }
        })
        .collect()
}

/// Read every `*.report.json` in `dir`, sorted by file name.
pub fn load_reports(dir: &Path) -> Result<Vec<TrainReport>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".report.json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let s = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            TrainReport::from_json(&s)
        })
        .collect()
}

pub fn format_summary(summary: &[Summary]) -> String {
    let mut s = format!(
        "{:<16} {:>5} {:>8} {:>24} {:>24}\n",
        "model", "runs", "params", "final_train_loss", "test_metric"
    );
    for m in summary {
        let test = m
            .test_metric
            .map_or("-".to_string(), |t| format!("{:.6} ± {:.6}", t.mean, t.std));
        s.push_str(&format!(
            "{:<16} {:>5} {:>8} {:>24} {:>24}\n",
            m.label,
            m.runs,
            m.param_count,
            format!("{:.6} ± {:.6}", m.final_train_loss.mean, m.final_train_loss.std),
            test
        ));
    }
    s
}
