//! CIFAR-10 binary batches: 3073-byte records of one label byte followed by
//! 1024 red, 1024 green and 1024 blue bytes, each plane row-major.

use std::fs;
use std::path::Path;

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const RECORD_BYTES: usize = 1 + 3 * 32 * 32;
pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";

#[derive(Clone, Debug)]
pub struct CifarSplits {
    pub train: Dataset,
    pub test: Dataset,
    /// SHA-256 of the raw bytes of every batch file in load order.
    pub checksum: String,
}

/// Decodes a whole batch file.
pub fn parse_cifar_records(bytes: &[u8], split: Split) -> Result<Dataset> {
    let whole = bytes.len() / RECORD_BYTES * RECORD_BYTES;
    if whole != bytes.len() {
        return Err(Error::Format {
            kind: "CIFAR-10 batch",
            offset: whole as u64,
            reason: format!(
                "truncated record: {} trailing bytes, records are {RECORD_BYTES} bytes",
                bytes.len() - whole
            ),
        });
    }
    let n = bytes.len() / RECORD_BYTES;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * (RECORD_BYTES - 1));
    for (i, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        if rec[0] > 9 {
            return Err(Error::Format {
                kind: "CIFAR-10 batch",
                offset: (i * RECORD_BYTES) as u64,
                reason: format!("label byte {} is not a class index", rec[0]),
            });
        }
        labels.push(rec[0] as usize);
        pixels.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
    }
    Dataset::new(Tensor::new(vec![n, 3, 32, 32], pixels)?, labels, 10, split)
}

fn read_files(
    dir: &Path,
    names: &[&str],
    split: Split,
    hasher_input: &mut Vec<u8>,
) -> Result<Dataset> {
    let mut all = Vec::new();
    for name in names {
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        // Validate each file on its own so offsets refer to that file.
        parse_cifar_records(&bytes, split).map_err(|e| match e {
            Error::Format { offset, reason, .. } => Error::Data(format!(
                "{}: malformed at byte {offset}: {reason}",
                path.display()
            )),
            other => other,
        })?;
        hasher_input.extend_from_slice(crate::codec::sha256_hex(&bytes).as_bytes());
        all.extend_from_slice(&bytes);
    }
    parse_cifar_records(&all, split)
}

/// Reads `data_batch_{1..5}.bin` and `test_batch.bin` from `dir`.
pub fn load_cifar10_binary(dir: &Path) -> Result<CifarSplits> {
    let mut digests = Vec::new();
    let train = read_files(dir, &TRAIN_FILES, Split::Train, &mut digests)?;
    let test = read_files(dir, &[TEST_FILE], Split::Test, &mut digests)?;
    Ok(CifarSplits {
        train,
        test,
        checksum: crate::codec::sha256_hex(&digests),
    })
}
