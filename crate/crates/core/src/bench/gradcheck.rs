use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::conv::{bind, ConvLayer, GraphLevel, LayerKind};
use crate::error::{Error, Result};
use crate::graph::{knn_build, knn_build_periodic, NodeCoordinates};
use crate::model::{build_layer, LayerSpec};
use crate::tensor::{Tape, Tensor};

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-5;
const FLOOR: f64 = 1e-6;

/// A layer kind as checked by the gradient harness; MoNet appears with and without GAT normalization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GradTarget {
    pub kind: LayerKind,
    pub gat: bool,
}

impl GradTarget {
    pub fn all() -> Vec<GradTarget> {
        let mut v: Vec<GradTarget> = LayerKind::ALL.iter().map(|&kind| GradTarget { kind, gat: false }).collect();
        v.push(GradTarget {
            kind: LayerKind::Monet,
            gat: true,
        });
        v
    }
}

impl fmt::Display for GradTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.gat {
            write!(f, "{}-gat", self.kind)
        } else {
            write!(f, "{}", self.kind)
        }
    }
}

impl FromStr for GradTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.strip_suffix("-gat") {
            Some("monet") => Ok(GradTarget {
                kind: LayerKind::Monet,
                gat: true,
            }),
            Some(_) => Err(Error::Parameter(format!("only monet has a GAT variant, got '{s}'"))),
            None => Ok(GradTarget {
                kind: s.parse()?,
                gat: false,
            }),
        }
    }
}

/// Instance sizes for a gradient check.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GradSizes {
    pub p: usize,
    pub q: usize,
    pub groups: usize,
    pub hidden: usize,
    pub kernels: usize,
    pub nodes: usize,
    pub batch: usize,
}

impl Default for GradSizes {
    fn default() -> Self {
        Self {
            p: 3,
            q: 4,
            groups: 2,
            hidden: 5,
            kernels: 0,
            nodes: 12,
            batch: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupResult {
    pub group: String,
    pub entries: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradReport {
    pub layer: String,
    pub groups: Vec<GroupResult>,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < GRADCHECK_TOLERANCE
    }
}

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

fn loss_of(layer: &ConvLayer<f64>, level: &GraphLevel<f64>, x: &Tensor<f64>, proj: &[f64]) -> Result<f64> {
    let mut tape = Tape::new();
    let pv = bind(&mut tape, &layer.params());
    let xv = tape.constant(x.clone());
    let y = layer.forward(&mut tape, &pv, level, xv)?;
    let v = tape.value(y);
    Ok(v.data().iter().zip(proj).map(|(a, b)| a * b).sum())
}

/// Compare tape gradients of `Σ y ⊙ R` (fixed random `R`) with central differences,
/// for every parameter tensor and the input, in double precision.
pub fn gradcheck(target: GradTarget, sizes: GradSizes, seed: u64) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = sizes.nodes;
    let graph = if matches!(target.kind, LayerKind::Dsc | LayerKind::Full) {
        let w = 4;
        let h = n.div_ceil(w).max(3);
        knn_build_periodic(&NodeCoordinates::grid(h, w), 9, [w as f64, h as f64])?
    } else {
        let pts = (0..n).map(|_| [rng.gen_range(0.0..3.0), rng.gen_range(0.0..3.0)]).collect();
        knn_build(&NodeCoordinates::new(pts)?, 4.min(n))?
    };
    let n = graph.n();
    let level = GraphLevel::<f64>::new(graph);
    let q = if target.kind == LayerKind::Lp { sizes.p } else { sizes.q };
    let spec = LayerSpec::new(target.kind, sizes.p, q)
        .with_groups(if target.kind == LayerKind::Dsgc { sizes.groups } else { 1 })
        .with_hidden(sizes.hidden)
        .with_kernels(sizes.kernels)
        .with_normalize(target.kind != LayerKind::Monet || target.gat);
    let mut layer = build_layer::<f64, _>(&mut rng, 0, &spec, n)?;
    for p in layer.params_mut() {
        for v in p.value_mut().data_mut() {
            *v = rng.gen_range(-0.8..0.8);
        }
    }
    let x = Tensor::uniform(&mut rng, &[sizes.batch * n, sizes.p], 1.0);
    let out_len = sizes.batch * n * q;
    let proj: Vec<f64> = (0..out_len).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let mut tape = Tape::new();
    let pv = bind(&mut tape, &layer.params());
    let xv = tape.input(x.clone());
    let y = layer.forward(&mut tape, &pv, &level, xv)?;
    let r = tape.constant(Tensor::new(tape.shape(y).to_vec(), proj.clone())?);
    let prod = tape.mul(y, r)?;
    let loss = tape.sum(prod);
    tape.backward(loss)?;

    let mut groups = Vec::new();
    let names: Vec<String> = layer.params().iter().map(|p| p.name().to_string()).collect();
    for (pi, name) in names.iter().enumerate() {
        let analytic = tape.grad(pv[pi]).unwrap_or_else(|| Tensor::zeros(layer.params()[pi].value().shape()));
        let mut worst: f64 = 0.0;
        let len = analytic.len();
        for e in 0..len {
            let orig = layer.params()[pi].value().data()[e];
            layer.params_mut()[pi].value_mut().data_mut()[e] = orig + STEP;
            let up = loss_of(&layer, &level, &x, &proj)?;
            layer.params_mut()[pi].value_mut().data_mut()[e] = orig - STEP;
            let down = loss_of(&layer, &level, &x, &proj)?;
            layer.params_mut()[pi].value_mut().data_mut()[e] = orig;
            worst = worst.max(rel_error(analytic.data()[e], (up - down) / (2.0 * STEP)));
        }
        groups.push(GroupResult {
            group: name.clone(),
            entries: len,
            max_rel_error: worst,
        });
    }
    let gx = tape.grad(xv).unwrap_or_else(|| Tensor::zeros(x.shape()));
    let mut worst: f64 = 0.0;
    let mut xp = x.clone();
    for e in 0..x.len() {
        let orig = x.data()[e];
        xp.data_mut()[e] = orig + STEP;
        let up = loss_of(&layer, &level, &xp, &proj)?;
        xp.data_mut()[e] = orig - STEP;
        let down = loss_of(&layer, &level, &xp, &proj)?;
        xp.data_mut()[e] = orig;
        worst = worst.max(rel_error(gx.data()[e], (up - down) / (2.0 * STEP)));
    }
    groups.push(GroupResult {
        group: "input".into(),
        entries: x.len(),
        max_rel_error: worst,
    });
    Ok(GradReport {
        layer: target.to_string(),
        groups,
    })
}

/// Gradient checks for every layer kind, including MoNet with GAT normalization.
pub fn gradcheck_all(seed: u64) -> Result<Vec<GradReport>> {
    GradTarget::all()
        .into_iter()
        .map(|t| gradcheck(t, GradSizes::default(), seed))
        .collect()
}

/// Plain-text table: one line per parameter group and a verdict per layer.
pub fn format_grad_table(reports: &[GradReport]) -> String {
    let mut s = format!("{:<10} {:<10} {:>8} {:>14}  {}\n", "layer", "group", "entries", "max_rel_err", "status");
    for r in reports {
        for g in &r.groups {
            let status = if g.max_rel_error < GRADCHECK_TOLERANCE { "ok" } else { "FAIL" };
            s.push_str(&format!(
                "{:<10} {:<10} {:>8} {:>14.3e}  {status}\n",
                r.layer, g.group, g.entries, g.max_rel_error
            ));
        }
    }
    s
}
