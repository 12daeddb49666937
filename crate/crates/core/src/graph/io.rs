use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{NeighborGraph, NodeCoordinates, DELTA_DIM};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeRecord {
    pub dst: usize,
    pub src: usize,
    pub delta: [f64; DELTA_DIM],
}

/// JSON form of a [`NeighborGraph`]: `{n, k, coords, edges: [{dst, src, delta}]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDocument {
    pub n: usize,
    pub k: usize,
    pub coords: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<[f64; 2]>,
    pub edges: Vec<EdgeRecord>,
}

impl From<&NeighborGraph> for GraphDocument {
    fn from(g: &NeighborGraph) -> Self {
        let edges = g
            .edges()
            .src()
            .iter()
            .zip(g.edges().dst())
            .zip(g.deltas())
            .map(|((&src, &dst), &delta)| EdgeRecord { dst, src, delta })
            .collect();
        Self {
            n: g.n(),
            k: g.k(),
            coords: g.coords().as_slice().to_vec(),
            period: g.period(),
            edges,
        }
    }
}

impl GraphDocument {
    pub fn to_graph(&self) -> Result<NeighborGraph> {
        if self.coords.len() != self.n {
            return Err(Error::Structural(format!(
                "graph document lists {} coordinates for n = {}",
                self.coords.len(),
                self.n
            )));
        }
        for (e, rec) in self.edges.iter().enumerate() {
            if rec.dst != e / self.k.max(1) {
                return Err(Error::Structural(format!(
                    "edge {e}: edges must be grouped by destination, {} per node",
                    self.k
                )));
            }
        }
        let coords = NodeCoordinates::new(self.coords.clone())?;
        let src = self.edges.iter().map(|e| e.src).collect();
        let delta = self.edges.iter().map(|e| e.delta).collect();
        let mut g = NeighborGraph::from_parts(self.k, coords, src, delta)?;
        g.period = self.period;
        Ok(g)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
