//! `DFKG1` model checkpoints.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! "DFKG1"
//! spec_len, spec_json[spec_len]          UTF-8 JSON of the ModelSpec
//! tensor_count
//! tensor_count × { name_len, name, rank, dims[rank], f32 payload }
//! ```
//!
//! Trainable parameters use the names from [`Model::param_names`]; batch-norm
//! running statistics are stored as `...running_mean` / `...running_var`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::{sha256_hex, write_len, write_tensor_record, ByteReader};
use crate::error::{Error, Result};
use crate::netblocks::model::Model;
use crate::netblocks::spec::ModelSpec;
use crate::nn::Layer;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"DFKG1";

fn named_tensors(model: &Model<f32>) -> Vec<(String, &Tensor<f32>)> {
    let mut out = Vec::new();
    for b in &model.blocks {
        for (li, layer) in b.layers.iter().enumerate() {
            let prefix = format!("b{}.l{li}", b.spec.block_id);
            for (name, t) in layer.param_names().iter().zip(layer.params()) {
                out.push((format!("{prefix}.{name}"), t));
            }
            if let Layer::BatchNorm(bn) = layer {
                out.push((format!("{prefix}.running_mean"), &bn.stats.mean));
                out.push((format!("{prefix}.running_var"), &bn.stats.var));
            }
        }
    }
    out
}

pub fn encode_checkpoint(model: &Model<f32>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    let spec = serde_json::to_string(&model.spec)
        .map_err(|e| Error::invalid(format!("spec serialization: {e}")))?;
    write_len(&mut buf, spec.len())?;
    buf.extend_from_slice(spec.as_bytes());
    let tensors = named_tensors(model);
    write_len(&mut buf, tensors.len())?;
    for (name, t) in tensors {
        write_tensor_record(&mut buf, &name, t)?;
    }
    Ok(buf)
}

pub fn decode_checkpoint(reader: impl Read) -> Result<Model<f32>> {
    let mut r = ByteReader::new(reader, "DFKG1 checkpoint");
    r.expect_magic(CHECKPOINT_MAGIC)?;
    let spec_offset = r.offset();
    let spec_json = r.read_string(1 << 24)?;
    let spec: ModelSpec = serde_json::from_str(&spec_json).map_err(|e| Error::Format {
        kind: "DFKG1 checkpoint",
        offset: spec_offset,
        reason: format!("invalid model spec: {e}"),
    })?;
    let count = r.read_len(1 << 20, "tensor count")?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let (name, t) = r.read_tensor_record()?;
        if tensors.insert(name.clone(), t).is_some() {
            return Err(r.error(format!("duplicate tensor {name}")));
        }
    }
    r.expect_eof()?;

    // Parameters are overwritten below; the seed only fixes the scaffold.
    let mut model = Model::<f32>::new(spec, &mut ChaCha8Rng::seed_from_u64(0))?;
    let mut take = |name: String, dst: &mut Tensor<f32>| -> Result<()> {
        let src = tensors
            .remove(&name)
            .ok_or_else(|| Error::Data(format!("checkpoint is missing tensor {name}")))?;
        if src.shape() != dst.shape() {
            return Err(Error::Data(format!(
                "tensor {name} has shape {:?}, spec requires {:?}",
                src.shape(),
                dst.shape()
            )));
        }
        *dst = src;
        Ok(())
    };
    for b in &mut model.blocks {
        let id = b.spec.block_id;
        for (li, layer) in b.layers.iter_mut().enumerate() {
            let prefix = format!("b{id}.l{li}");
            let names = layer.param_names();
            for (name, dst) in names.iter().zip(layer.params_mut()) {
                take(format!("{prefix}.{name}"), dst)?;
            }
            if let Layer::BatchNorm(bn) = layer {
                take(format!("{prefix}.running_mean"), &mut bn.stats.mean)?;
                take(format!("{prefix}.running_var"), &mut bn.stats.var)?;
            }
        }
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::Data(format!(
            "checkpoint has unexpected tensor {extra}"
        )));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Model<f32>, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model<f32>> {
    decode_checkpoint(fs::File::open(path)?)
}

/// SHA-256 of the checkpoint encoding; identifies a trained model.
pub fn model_fingerprint(model: &Model<f32>) -> Result<String> {
    Ok(sha256_hex(&encode_checkpoint(model)?))
}
