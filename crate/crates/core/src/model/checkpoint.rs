//! Checkpoint container: a text header followed by raw little-endian `f64` data.
//!
//! ```text
//! deskbert-checkpoint
//! format_version=1
//! [config]
//! hidden=128
//! ...
//! [parameters]
//! embeddings.token 8192x128 0
//! ...
//! [data]
//! <bytes>
//! ```
//!
//! Manifest lines are `name shape byte-offset`, offsets relative to the first
//! data byte.

use std::fs;
use std::path::Path;

use super::bert::BertModel;
use super::config::ModelConfig;
use crate::autograd::ParamStore;
use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &str = "deskbert-checkpoint";
pub const FORMAT_VERSION: u32 = 1;
const DATA_MARKER: &[u8] = b"\n[data]\n";

fn ckpt_err(field: &str, message: impl Into<String>) -> Error {
    Error::Checkpoint {
        field: field.to_owned(),
        message: message.into(),
    }
}

pub fn checkpoint_bytes(model: &BertModel) -> Vec<u8> {
    let mut header = format!("{MAGIC}\nformat_version={FORMAT_VERSION}\n[config]\n");
    header.push_str(&model.config().to_key_values().to_text());
    header.push_str("[parameters]\n");
    let mut offset = 0usize;
    for (_, p) in model.store().iter() {
        let shape: Vec<String> = p.value().shape().iter().map(usize::to_string).collect();
        header.push_str(&format!("{} {} {}\n", p.name(), shape.join("x"), offset));
        offset += p.value().len() * 8;
    }
    header.push_str("[data]\n");
    let mut bytes = header.into_bytes();
    bytes.reserve(offset);
    for (_, p) in model.store().iter() {
        for v in p.value().data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes
}

pub fn save_checkpoint(model: &BertModel, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<BertModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes)
}

/// Loads a checkpoint and checks that its configuration matches `expected`
/// field by field.
pub fn load_checkpoint_expecting(path: &Path, expected: &ModelConfig) -> Result<BertModel> {
    let model = load_checkpoint(path)?;
    let found = model.config().to_key_values();
    let want = expected.to_key_values();
    for key in want.keys().chain(found.keys()) {
        if key == "num_labels" {
            continue;
        }
        if want.raw(key) != found.raw(key) {
            return Err(ckpt_err(
                key,
                format!(
                    "checkpoint has {:?}, requested {:?}",
                    found.raw(key).unwrap_or("<absent>"),
                    want.raw(key).unwrap_or("<absent>")
                ),
            ));
        }
    }
    Ok(model)
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<BertModel> {
    let split = bytes
        .windows(DATA_MARKER.len())
        .position(|w| w == DATA_MARKER)
        .ok_or_else(|| ckpt_err("header", "no [data] section"))?;
    let header = std::str::from_utf8(&bytes[..split + 1])
        .map_err(|_| ckpt_err("header", "header is not UTF-8"))?;
    let data = &bytes[split + DATA_MARKER.len()..];

    let mut lines = header.lines();
    if lines.next() != Some(MAGIC) {
        return Err(ckpt_err("header", "not a checkpoint file"));
    }
    match lines.next().and_then(|l| l.strip_prefix("format_version=")) {
        Some(v) if v == FORMAT_VERSION.to_string() => {}
        Some(v) => return Err(ckpt_err("format_version", format!("unsupported version {v}"))),
        None => return Err(ckpt_err("format_version", "missing")),
    }
    if lines.next() != Some("[config]") {
        return Err(ckpt_err("header", "missing [config] section"));
    }
    let mut config_text = String::new();
    let mut manifest = Vec::new();
    let mut in_params = false;
    for line in lines {
        if line == "[parameters]" {
            in_params = true;
        } else if in_params {
            manifest.push(line);
        } else {
            config_text.push_str(line);
            config_text.push('\n');
        }
    }
    if !in_params {
        return Err(ckpt_err("header", "missing [parameters] section"));
    }
    let kv = KeyValues::parse(&config_text).map_err(|e| ckpt_err("config", e.to_string()))?;
    let config = ModelConfig::from_key_values(&kv).map_err(|e| ckpt_err("config", e.to_string()))?;

    let mut store = ParamStore::new();
    let mut expected_offset = 0usize;
    for line in manifest {
        let parts: Vec<&str> = line.split(' ').collect();
        let [name, shape, offset] = parts[..] else {
            return Err(ckpt_err("parameters", format!("malformed manifest line {line:?}")));
        };
        let shape: Vec<usize> = shape
            .split('x')
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| ckpt_err(name, format!("bad shape {shape:?}")))?;
        let offset: usize = offset
            .parse()
            .map_err(|_| ckpt_err(name, format!("bad offset {offset:?}")))?;
        if offset != expected_offset {
            return Err(ckpt_err(name, format!("offset {offset}, expected {expected_offset}")));
        }
        let count: usize = shape.iter().product();
        let end = offset + count * 8;
        if end > data.len() {
            return Err(ckpt_err(name, "truncated data"));
        }
        let values: Vec<f64> = data[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunks of 8")))
            .collect();
        let tensor = Tensor::new(shape, values).map_err(|e| ckpt_err(name, e.to_string()))?;
        store.add(name, tensor).map_err(|e| ckpt_err(name, e.to_string()))?;
        expected_offset = end;
    }
    if expected_offset != data.len() {
        return Err(ckpt_err(
            "data",
            format!("{} trailing bytes", data.len() - expected_offset),
        ));
    }
    BertModel::from_parts(config, store)
}
