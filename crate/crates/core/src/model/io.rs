use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::conv::LayerManifest;
use crate::error::{Error, Result};
use crate::tensor::{Precision, Real, Tensor};

use super::{build_model, GraphStack, Model, ModelSpec};

pub const MANIFEST_VERSION: &str = "v1";
pub const BLOB_MAGIC: &[u8; 8] = b"DSGCPRM\0";
pub const BLOB_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Human-readable description of a trained model; the values live in the binary blob.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelManifest {
    pub version: String,
    pub precision: Precision,
    pub spec: ModelSpec,
    pub nodes_per_level: Vec<usize>,
    pub layers: Vec<LayerManifest>,
    pub param_count: usize,
    pub params: Vec<ParamEntry>,
}

impl ModelManifest {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Parameter(format!("unsupported manifest version '{}'", m.version)));
        }
        Ok(m)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.buf.len() {
            return Err(Error::Structural(format!("parameter blob truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// `stem` with `.ext` appended, keeping any dots already in the file name.
pub fn with_suffix(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn element_width(p: Precision) -> u8 {
    match p {
        Precision::F32 => 4,
        Precision::F64 => 8,
    }
}

impl<T: Real> Model<T> {
    pub fn manifest(&self) -> ModelManifest {
        let mut channels = self.spec.first_layer_inputs();
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let m = l.manifest(channels);
                channels = m.q;
                m
            })
            .collect();
        ModelManifest {
            version: MANIFEST_VERSION.to_string(),
            precision: T::PRECISION,
            spec: self.spec.clone(),
            nodes_per_level: self.nodes_per_level.clone(),
            layers,
            param_count: self.num_params(),
            params: self
                .params()
                .iter()
                .map(|p| ParamEntry {
                    name: p.name().to_string(),
                    shape: p.value().shape().to_vec(),
                })
                .collect(),
        }
    }

    /// Little-endian parameter blob: magic, version, element width, then each tensor's shape and values.
    pub fn to_blob(&self) -> Vec<u8> {
        let params = self.params();
        let mut out = Vec::new();
        out.extend_from_slice(BLOB_MAGIC);
        out.extend_from_slice(&BLOB_VERSION.to_le_bytes());
        out.push(element_width(T::PRECISION));
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for p in params {
            let shape = p.value().shape();
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in p.value().data() {
                match T::PRECISION {
                    Precision::F32 => out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes()),
                    Precision::F64 => out.extend_from_slice(&v.to_f64_lossy().to_le_bytes()),
                }
            }
        }
        out
    }

    /// Rebuild from a manifest and blob over the same graph stack.
    pub fn from_saved(manifest: &ModelManifest, blob: &[u8], stack: &GraphStack<T>) -> Result<Self> {
        if manifest.precision != T::PRECISION {
            return Err(Error::Parameter(format!(
                "model was saved in {} but is loaded as {}",
                manifest.precision.as_str(),
                T::PRECISION.as_str()
            )));
        }
        let mut model = build_model(&manifest.spec, stack, 0)?;
        if model.nodes_per_level != manifest.nodes_per_level {
            return Err(Error::Dimension {
                op: "model_load",
                left: manifest.nodes_per_level.clone(),
                right: model.nodes_per_level.clone(),
            });
        }
        let mut r = Reader { buf: blob, pos: 0 };
        if r.take(8)? != BLOB_MAGIC {
            return Err(Error::Structural("not a parameter blob".into()));
        }
        let version = r.u32()?;
        if version != BLOB_VERSION {
            return Err(Error::Structural(format!("unsupported blob version {version}")));
        }
        let width = r.take(1)?[0];
        if width != element_width(T::PRECISION) {
            return Err(Error::Structural(format!("blob stores {width}-byte elements")));
        }
        let count = r.u32()? as usize;
        let mut params = model.params_mut();
        if count != params.len() {
            return Err(Error::Structural(format!(
                "blob holds {count} tensors, model has {}",
                params.len()
            )));
        }
        for p in params.iter_mut() {
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                let v = match T::PRECISION {
                    Precision::F32 => f32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes")) as f64,
                    Precision::F64 => f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")),
                };
                data.push(T::of(v));
            }
            p.set_value(Tensor::new(shape, data)?)?;
        }
        if r.pos != blob.len() {
            return Err(Error::Structural("trailing bytes after parameter blob".into()));
        }
        Ok(model)
    }

    /// Write `<stem>.json` and `<stem>.bin`.
    pub fn save(&self, stem: &Path) -> Result<()> {
        let json = with_suffix(stem, "json");
        let bin = with_suffix(stem, "bin");
        std::fs::write(&json, self.manifest().to_json()?).map_err(|e| Error::io(&json, e))?;
        std::fs::write(&bin, self.to_blob()).map_err(|e| Error::io(&bin, e))?;
        Ok(())
    }

    pub fn load(stem: &Path, stack: &GraphStack<T>) -> Result<Self> {
        let json = with_suffix(stem, "json");
        let bin = with_suffix(stem, "bin");
        let text = std::fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
        let blob = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        Self::from_saved(&ModelManifest::from_json(&text)?, &blob, stack)
    }
}
