use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{knn_build, NodeCoordinates};

use super::dataset::{DatasetFile, DatasetMeta, Payload, Splits};

#[derive(Clone, Debug, PartialEq)]
pub struct DocTask {
    pub vocab: usize,
    pub classes: usize,
    pub docs: usize,
    pub doc_len: usize,
    /// Probability that a token is drawn from its document's topic words.
    pub topic_weight: f64,
    pub k: usize,
    pub seed: u64,
}

impl DocTask {
    pub fn new(vocab: usize, classes: usize, docs: usize, seed: u64) -> Self {
        Self {
            vocab,
            classes,
            docs,
            doc_len: 60,
            topic_weight: 0.4,
            k: 8,
            seed,
        }
    }
}

/// Bag-of-words documents over a vocabulary laid out in the plane.
///
/// Each class owns a cluster of words around its own center in the plane; a
/// document mixes tokens from its class cluster with uniform background words.
/// Node features are `ln(1 + count)` per word, the graph is kNN over word positions.
pub fn gen_synthetic_docs(task: &DocTask) -> Result<DatasetFile> {
    if task.classes < 2 || task.vocab < task.classes || task.docs == 0 {
        return Err(Error::Parameter(
            "documents need at least two classes, a vocabulary per class and one document".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(task.seed);
    let spread = Normal::new(0.0, 0.6).map_err(|e| Error::Parameter(e.to_string()))?;
    let centers: Vec<[f64; 2]> = (0..task.classes)
        .map(|c| {
            let a = std::f64::consts::TAU * c as f64 / task.classes as f64;
            [3.0 * a.cos(), 3.0 * a.sin()]
        })
        .collect();
    let topic: Vec<usize> = (0..task.vocab).map(|w| w % task.classes).collect();
    let pts: Vec<[f64; 2]> = topic
        .iter()
        .map(|&c| [centers[c][0] + spread.sample(&mut rng), centers[c][1] + spread.sample(&mut rng)])
        .collect();
    let graph = knn_build(&NodeCoordinates::new(pts)?, task.k.min(task.vocab))?;
    let members: Vec<Vec<usize>> = (0..task.classes)
        .map(|c| (0..task.vocab).filter(|&w| topic[w] == c).collect())
        .collect();

    let mut inputs = Vec::with_capacity(task.docs);
    let mut labels = Vec::with_capacity(task.docs);
    for d in 0..task.docs {
        let label = d % task.classes;
        let mut counts = vec![0usize; task.vocab];
        for _ in 0..task.doc_len {
            let w = if rng.gen::<f64>() < task.topic_weight {
                members[label][rng.gen_range(0..members[label].len())]
            } else {
                rng.gen_range(0..task.vocab)
            };
            counts[w] += 1;
        }
        inputs.push(counts.iter().map(|&c| (c as f64).ln_1p()).collect());
        labels.push(label);
    }
    let splits = Splits::shuffled(&mut rng, task.docs, 0.7, 0.15);
    Ok(DatasetFile::new(
        "docs",
        task.seed,
        DatasetMeta::default(),
        &graph,
        Payload::Class {
            channels: 1,
            classes: task.classes,
            inputs,
            labels,
        },
        splits,
    ))
}
