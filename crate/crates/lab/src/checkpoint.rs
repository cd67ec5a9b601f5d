//! Binary checkpoints: magic, format version, a JSON header, then raw
//! little-endian `f64` vectors (student, teacher, first and second Adam
//! moments for every model).

use std::fs;
use std::path::Path;
use std::sync::Arc;

use crst_core::model::{Layout, ModelConfig, ModelParams, Network, OptState};
use crst_core::trainer::{ModelState, TrainState, Variant};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub const MAGIC: &[u8; 8] = b"CRSTCKPT";
pub const VERSION: u32 = 1;
/// Magic, version and header length.
pub const PREAMBLE_BYTES: usize = 16;
pub const VECTORS_PER_MODEL: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub opt_step: u64,
    pub lr_cap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub variant: Variant,
    pub step: u64,
    pub config_hash: String,
    pub model: ModelConfig,
    pub layout: Layout,
    pub param_count: usize,
    /// Order of the vectors stored for each model.
    pub vectors: Vec<String>,
    pub models: Vec<ModelHeader>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub state: TrainState,
}

/// Total file size for a header of `header_len` bytes.
pub fn expected_size(header_len: usize, models: usize, param_count: usize) -> usize {
    PREAMBLE_BYTES + header_len + models * VECTORS_PER_MODEL * 8 * param_count
}

fn put_vec(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode(state: &TrainState, model: &ModelConfig, config_hash: &str) -> Result<Vec<u8>> {
    let net = Network::new(model)?;
    let layout = (**net.layout()).clone();
    let n = layout.total();
    for m in &state.models {
        if m.student.len() != n || m.teacher.len() != n || m.opt.m.len() != n || m.opt.v.len() != n {
            return Err(LabError::Data(format!("state vectors do not match the {n}-parameter model")));
        }
    }
    let header = CheckpointHeader {
        variant: state.variant,
        step: state.step,
        config_hash: config_hash.to_string(),
        model: model.clone(),
        layout,
        param_count: n,
        vectors: ["student", "teacher", "adam_m", "adam_v"].map(String::from).to_vec(),
        models: state.models.iter().map(|m| ModelHeader { opt_step: m.opt.step, lr_cap: m.opt.lr_cap }).collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(expected_size(json.len(), state.models.len(), n));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for m in &state.models {
        put_vec(&mut out, &m.student.values);
        put_vec(&mut out, &m.teacher.values);
        put_vec(&mut out, &m.opt.m);
        put_vec(&mut out, &m.opt.v);
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let bad = |msg: String| LabError::Data(format!("{}: {msg}", path.display()));
    if bytes.len() < PREAMBLE_BYTES || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file".into()));
    }
    let word = |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
    if word(8) != VERSION {
        return Err(bad(format!("unsupported checkpoint version {}", word(8))));
    }
    let header_len = word(12) as usize;
    let body = PREAMBLE_BYTES.checked_add(header_len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header".into()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[PREAMBLE_BYTES..body]).map_err(|e| bad(format!("header: {e}")))?;
    let net = Network::new(&header.model)?;
    if **net.layout() != header.layout || header.param_count != header.layout.total() {
        return Err(bad("stored layout disagrees with the model configuration".into()));
    }
    if header.models.len() != header.variant.model_count() {
        return Err(bad(format!("{} models stored for variant {}", header.models.len(), header.variant)));
    }
    let n = header.param_count;
    let want = expected_size(header_len, header.models.len(), n);
    if bytes.len() != want {
        return Err(bad(format!("expected {want} bytes, found {}", bytes.len())));
    }
    let mut floats = bytes[body..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let mut take = || -> Vec<f64> { floats.by_ref().take(n).collect() };
    let layout: Arc<Layout> = net.layout().clone();
    let models = header
        .models
        .iter()
        .map(|mh| {
            let student = ModelParams { layout: layout.clone(), values: take() };
            let teacher = ModelParams { layout: layout.clone(), values: take() };
            let opt = OptState { m: take(), v: take(), step: mh.opt_step, lr_cap: mh.lr_cap };
            ModelState { student, teacher, opt }
        })
        .collect();
    let state = TrainState { variant: header.variant, step: header.step, models };
    Ok(Checkpoint { header, state })
}

pub fn save(path: &Path, state: &TrainState, model: &ModelConfig, config_hash: &str) -> Result<()> {
    fs::write(path, encode(state, model, config_hash)?).map_err(|e| LabError::io(path, e))
}

/// Loads a checkpoint; with `expected` set, a checkpoint of another variant is rejected.
pub fn load(path: &Path, expected: Option<Variant>) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| LabError::io(path, e))?;
    let ck = decode(&bytes, path)?;
    if let Some(v) = expected {
        if v != ck.header.variant {
            return Err(crst_core::Error::VariantMismatch { expected: v.to_string(), found: ck.header.variant.to_string() }.into());
        }
    }
    Ok(ck)
}
