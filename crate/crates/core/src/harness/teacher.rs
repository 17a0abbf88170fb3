//! Teacher logits and attention maps computed once and reused by every
//! student run. Stored as `DFTO1`:
//!
//! ```text
//! "DFTO1"
//! header_len, header_json[header_len]
//! tensor_count, tensor records ("logits", optionally "attention")
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{write_len, write_tensor_record, ByteReader};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::harness::eval::batched_infer;
use crate::losses::attention_map;
use crate::netblocks::{model_fingerprint, Model};
use crate::tensor::Tensor;

pub const TEACHER_MAGIC: &[u8; 5] = b"DFTO1";
const CHUNK: usize = 128;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeacherHeader {
    pub model_fingerprint: String,
    pub dataset_sha256: String,
    /// Block whose activation produced the attention maps.
    pub attention_source: Option<usize>,
    pub attention_power: u32,
}

/// Index-aligned with the dataset it was computed on.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherOutputs {
    pub header: TeacherHeader,
    /// `N×K`
    pub logits: Tensor<f32>,
    /// `N×H×W` normalized attention maps.
    pub attention: Option<Tensor<f32>>,
}

impl TeacherOutputs {
    pub fn len(&self) -> usize {
        self.logits.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn logits_for(&self, indices: &[usize]) -> Result<Tensor<f32>> {
        self.logits.select(indices)
    }

    pub fn attention_for(&self, indices: &[usize]) -> Result<Option<Tensor<f32>>> {
        self.attention
            .as_ref()
            .map(|a| a.select(indices))
            .transpose()
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        buf.extend_from_slice(TEACHER_MAGIC);
        let header =
            serde_json::to_string(&self.header).map_err(|e| Error::invalid(e.to_string()))?;
        write_len(&mut buf, header.len())?;
        buf.extend_from_slice(header.as_bytes());
        write_len(&mut buf, 1 + self.attention.is_some() as usize)?;
        write_tensor_record(&mut buf, "logits", &self.logits)?;
        if let Some(a) = &self.attention {
            write_tensor_record(&mut buf, "attention", a)?;
        }
        Ok(buf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()?)?;
        Ok(())
    }

    /// Reads a store and checks that it came from `fingerprint` on `dataset`.
    pub fn load(path: &Path, fingerprint: Option<&str>, dataset: Option<&Dataset>) -> Result<Self> {
        let mut r = ByteReader::new(fs::File::open(path)?, "DFTO1 teacher outputs");
        r.expect_magic(TEACHER_MAGIC)?;
        let at = r.offset();
        let header: TeacherHeader =
            serde_json::from_str(&r.read_string(1 << 20)?).map_err(|e| Error::Format {
                kind: "DFTO1 teacher outputs",
                offset: at,
                reason: e.to_string(),
            })?;
        let count = r.read_len(2, "tensor count")?;
        let (name, logits) = r.read_tensor_record()?;
        if name != "logits" || logits.rank() != 2 {
            return Err(r.error("first record must be the N×K logits"));
        }
        let attention = if count == 2 {
            let (name, a) = r.read_tensor_record()?;
            if name != "attention" || a.rank() != 3 || a.dim(0) != logits.dim(0) {
                return Err(r.error("second record must be N×H×W attention maps"));
            }
            Some(a)
        } else {
            None
        };
        r.expect_eof()?;
        let provenance = |reason: String| Error::Provenance {
            path: path.to_path_buf(),
            reason,
        };
        if let Some(fp) = fingerprint {
            if header.model_fingerprint != fp {
                return Err(provenance(format!(
                    "outputs came from teacher {}, expected {fp}",
                    header.model_fingerprint
                )));
            }
        }
        if let Some(ds) = dataset {
            if header.dataset_sha256 != ds.checksum() || logits.dim(0) != ds.len() {
                return Err(provenance(
                    "outputs were computed on a different dataset".into(),
                ));
            }
        }
        Ok(Self {
            header,
            logits,
            attention,
        })
    }
}

/// Eval-mode logits for every image and, when `tap` is given as
/// `(block_id, power)`, the attention map of that block's activation.
pub fn precompute_teacher_outputs(
    teacher: &Model<f32>,
    dataset: &Dataset,
    tap: Option<(usize, u32)>,
) -> Result<TeacherOutputs> {
    let header = TeacherHeader {
        model_fingerprint: model_fingerprint(teacher)?,
        dataset_sha256: dataset.checksum(),
        attention_source: tap.map(|t| t.0),
        attention_power: tap.map(|t| t.1).unwrap_or(2),
    };
    let Some((block, power)) = tap else {
        return Ok(TeacherOutputs {
            header,
            logits: batched_infer(teacher, &dataset.images, CHUNK)?,
            attention: None,
        });
    };
    let n = dataset.len();
    let [_, h, w] = teacher.spec.activation_shape(block)?;
    let mut logits = Vec::with_capacity(n * teacher.num_classes());
    let mut maps = Vec::with_capacity(n * h * w);
    let indices: Vec<usize> = (0..n).collect();
    for part in indices.chunks(CHUNK) {
        let (l, act) = teacher.infer_with_tap(&dataset.images.select(part)?, block)?;
        logits.extend_from_slice(l.data());
        maps.extend_from_slice(attention_map(&act, power)?.data());
    }
    Ok(TeacherOutputs {
        header,
        logits: Tensor::new(vec![n, teacher.num_classes()], logits)?,
        attention: Some(Tensor::new(vec![n, h, w], maps)?),
    })
}
