use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const RECORD: usize = 1 + 3 * 32 * 32;

/// Reads CIFAR-10 binary batches: each record is a label byte followed by
/// 3072 channel-major pixel bytes.
pub fn load_cifar_batches<P: AsRef<Path>>(paths: &[P]) -> Result<Dataset> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.is_empty() || bytes.len() % RECORD != 0 {
            return Err(Error::Idx {
                path: path.to_path_buf(),
                reason: format!(
                    "{} bytes is not a whole number of {RECORD}-byte records",
                    bytes.len()
                ),
            });
        }
        for rec in bytes.chunks_exact(RECORD) {
            if rec[0] >= 10 {
                return Err(Error::Idx {
                    path: path.to_path_buf(),
                    reason: format!("label {} outside [0, 10)", rec[0]),
                });
            }
            labels.push(rec[0] as usize);
            pixels.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
        }
    }
    Dataset::new(
        Tensor::from_vec(&[labels.len(), 3, 32, 32], pixels)?,
        labels,
    )
}
