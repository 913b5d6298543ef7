use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::Idx {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn header(path: &Path, bytes: &[u8], magic: u32, dims: usize) -> Result<Vec<usize>> {
    let need = 4 * (dims + 1);
    if bytes.len() < need {
        return Err(bad(
            path,
            format!("truncated header: {} of {need} bytes", bytes.len()),
        ));
    }
    let word = |i: usize| u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes"));
    if word(0) != magic {
        return Err(bad(
            path,
            format!("bad magic {:#010x}, expected {magic:#010x}", word(0)),
        ));
    }
    Ok((1..=dims).map(|i| word(i) as usize).collect())
}

/// Reads an idx image file and its label file, scaling pixels by 1/255.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = read(ip)?;
    let labels = read(lp)?;
    let dims = header(ip, &images, IMAGES_MAGIC, 3)?;
    let (n, rows, cols) = (dims[0], dims[1], dims[2]);
    let body = &images[16..];
    if body.len() != n * rows * cols {
        return Err(bad(
            ip,
            format!(
                "truncated: {n} images of {rows}x{cols} need {} bytes, found {}",
                n * rows * cols,
                body.len()
            ),
        ));
    }
    let count = header(lp, &labels, LABELS_MAGIC, 1)?[0];
    let lbody = &labels[8..];
    if lbody.len() != count {
        return Err(bad(
            lp,
            format!(
                "truncated: {count} labels declared, {} present",
                lbody.len()
            ),
        ));
    }
    if count != n {
        return Err(bad(lp, format!("{count} labels for {n} images")));
    }
    if let Some(&l) = lbody.iter().find(|&&l| l >= 10) {
        return Err(bad(lp, format!("label {l} outside [0, 10)")));
    }
    let pixels = body.iter().map(|&b| b as f32 / 255.0).collect();
    Dataset::new(
        Tensor::from_vec(&[n, 1, rows, cols], pixels)?,
        lbody.iter().map(|&l| l as usize).collect(),
    )
}
