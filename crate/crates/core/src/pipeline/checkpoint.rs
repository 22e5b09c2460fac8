//! Binary checkpoints: `SACK` magic, a little-endian u64 header length, a JSON header, then
//! every array as row-major little-endian f64 at the offsets the header lists.
//!
//! The network layout is not stored; it is rebuilt from the saved configuration and the
//! parameters are matched back by name.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, TrainConfig};
use crate::atlas::Atlas;
use crate::autodiff::Mat;
use crate::error::{Error, Result};
use crate::mesh::Face;
use crate::nn::{Adam, AdamConfig};

const MAGIC: &[u8; 4] = b"SACK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// In f64 elements from the start of the data block.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtlasHeader {
    pub faces: Vec<Face>,
    pub neighbours: Vec<Vec<usize>>,
    pub iteration: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub version: u32,
    pub config: TrainConfig,
    pub epoch: usize,
    pub adam_step: u64,
    pub alpha: f64,
    pub trained: bool,
    pub atlases: Vec<AtlasHeader>,
    pub arrays: Vec<ArrayEntry>,
}

struct Writer {
    arrays: Vec<ArrayEntry>,
    data: Vec<f64>,
}

impl Writer {
    fn push(&mut self, name: String, m: &Mat) {
        self.arrays.push(ArrayEntry { name, rows: m.nrows(), cols: m.ncols(), offset: self.data.len() });
        self.data.extend(m.iter());
    }
}

pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let mut w = Writer { arrays: Vec::new(), data: Vec::new() };
    let (adam_m, adam_v) = model.adam.moments();
    for (i, (name, value)) in model.params.iter().enumerate() {
        w.push(format!("param/{name}"), value);
        w.push(format!("adam_m/{name}"), &adam_m[i]);
        w.push(format!("adam_v/{name}"), &adam_v[i]);
    }
    for (m, c) in model.clusters.iter().enumerate() {
        w.push(format!("atlas/{m}"), &c.atlas.positions);
    }
    w.push("weights".into(), &model.weights);
    let header = Header {
        version: VERSION,
        config: model.config.clone(),
        epoch: model.epoch,
        adam_step: model.adam.steps(),
        alpha: model.alpha,
        trained: model.clusters.iter().all(|c| c.generator.trained),
        atlases: model
            .clusters
            .iter()
            .map(|c| AtlasHeader {
                faces: c.atlas.faces.clone(),
                neighbours: c.atlas.neighbours.clone(),
                iteration: c.atlas.iteration,
            })
            .collect(),
        arrays: w.arrays,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + json.len() + 8 * w.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in &w.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn save(path: &Path, model: &Model) -> Result<()> {
    fs::write(path, to_bytes(model)?)?;
    Ok(())
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn read_header(bytes: &[u8]) -> Result<(Header, &[u8])> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(bad("missing magic bytes"));
    }
    let len = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
    let json = bytes.get(12..12 + len).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(json)?;
    if header.version != VERSION {
        return Err(bad(format!("unsupported version {}", header.version)));
    }
    Ok((header, &bytes[12 + len..]))
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let (header, data) = read_header(bytes)?;
    if data.len() % 8 != 0 {
        return Err(bad("data block is not a whole number of f64 values"));
    }
    let values: Vec<f64> = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let array = |name: &str| -> Result<Mat> {
        let e = header.arrays.iter().find(|a| a.name == name).ok_or_else(|| bad(format!("missing array {name}")))?;
        let slice = values.get(e.offset..e.offset + e.rows * e.cols).ok_or_else(|| bad(format!("array {name} out of range")))?;
        Mat::from_shape_vec((e.rows, e.cols), slice.to_vec()).map_err(|e| bad(e.to_string()))
    };
    let mut atlases = Vec::with_capacity(header.atlases.len());
    for (m, a) in header.atlases.iter().enumerate() {
        let positions = array(&format!("atlas/{m}"))?;
        if positions.nrows() != a.neighbours.len() {
            return Err(bad(format!("atlas {m} has {} positions for {} nodes", positions.nrows(), a.neighbours.len())));
        }
        atlases.push(Atlas { positions, faces: a.faces.clone(), neighbours: a.neighbours.clone(), iteration: a.iteration });
    }
    let weights = array("weights")?;
    let mut model = Model::with_atlases(header.config.clone(), atlases, weights.nrows())?;
    let names: Vec<String> = model.params.iter().map(|(n, _)| n.to_string()).collect();
    let (mut adam_m, mut adam_v) = (Vec::with_capacity(names.len()), Vec::with_capacity(names.len()));
    for name in &names {
        let id = model.params.find(name).unwrap();
        let value = array(&format!("param/{name}"))?;
        if value.dim() != model.params.get(id).dim() {
            return Err(bad(format!("parameter {name} has shape {:?}, layout expects {:?}", value.dim(), model.params.get(id).dim())));
        }
        *model.params.get_mut(id) = value;
        adam_m.push(array(&format!("adam_m/{name}"))?);
        adam_v.push(array(&format!("adam_v/{name}"))?);
    }
    model.adam = Adam::from_state(
        AdamConfig { learning_rate: header.config.learning_rate, ..Default::default() },
        header.adam_step,
        adam_m,
        adam_v,
    );
    model.weights = weights;
    model.alpha = header.alpha;
    model.epoch = header.epoch;
    for c in model.clusters.iter_mut() {
        c.generator.trained = header.trained;
    }
    Ok(model)
}

pub fn load(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
    from_bytes(&bytes)
}

/// Configuration stored in a checkpoint, without restoring the arrays.
pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let bytes = fs::read(path)?;
    Ok(read_header(&bytes)?.0.config)
}
